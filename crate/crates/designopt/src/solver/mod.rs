//! Primal-dual interior-point solver for [`ConicProgram`]s.
//!
//! The solver embeds the problem in a homogeneous self-dual model and runs
//! a Nesterov-Todd scaled Mehrotra predictor-corrector. Linear systems are
//! solved through a dense quasi-definite LDL^T factorization of the reduced
//! KKT matrix with static regularization and iterative refinement.
//! Infeasible problems terminate with a certificate ray instead of an error.

mod cones;
mod kkt;
mod presolve;

use crate::conic::ConicProgram;
pub use cones::ConeBlock;
use cones::{
    compute_scaling, jordan_product, jordan_solve, step_to_boundary, unit_element, NtScaling,
};
use kkt::LdlFactor;
use presolve::{equilibrate, presolve, Internal, PresolveOutcome, Scaling, SpRow};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub rel_gap_tol: f64,
    pub feas_tol: f64,
    pub max_iters: usize,
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { rel_gap_tol: 1e-8, feas_tol: 1e-8, max_iters: 200, verbose: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterLimit,
    NumericalFailure,
}

/// Result of a conic solve, reported in the program's maximize convention.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolverStatus,
    pub x: Vec<f64>,
    /// Equality multipliers for the original rows; for infeasible problems
    /// this carries the Farkas certificate ray.
    pub duals: Vec<f64>,
    pub objective: f64,
    /// Dual objective; an upper bound on the optimum at termination.
    pub dual_objective: f64,
    pub iterations: usize,
}

/// One per-iteration log record (maximize convention).
#[derive(Debug, Clone, Copy)]
pub struct IterTrace {
    pub iter: usize,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub gap: f64,
    pub pres: f64,
    pub dres: f64,
    pub step: f64,
}

pub fn solve(p: &ConicProgram, cfg: &SolverConfig) -> ConicSolution {
    solve_traced(p, cfg, None)
}

pub fn solve_traced(
    p: &ConicProgram,
    cfg: &SolverConfig,
    mut trace: Option<&mut Vec<IterTrace>>,
) -> ConicSolution {
    debug_assert!(p.validate().is_ok());
    let int = match presolve(p) {
        PresolveOutcome::Reduced(int) => int,
        PresolveOutcome::TriviallyInfeasible { row, rhs } => {
            let mut duals = vec![0.0; p.eq_rows().len()];
            duals[row] = 1.0 / rhs;
            return ConicSolution {
                status: SolverStatus::PrimalInfeasible,
                x: vec![0.0; p.nvars()],
                duals,
                objective: f64::NEG_INFINITY,
                dual_objective: f64::NEG_INFINITY,
                iterations: 0,
            };
        }
        PresolveOutcome::Unbounded => {
            return ConicSolution {
                status: SolverStatus::DualInfeasible,
                x: vec![0.0; p.nvars()],
                duals: vec![0.0; p.eq_rows().len()],
                objective: f64::INFINITY,
                dual_objective: f64::INFINITY,
                iterations: 0,
            };
        }
    };
    let mut int = int;
    let scaling = equilibrate(&mut int);
    let mut ipm = Ipm::new(&int, cfg, scaling.cost);
    let mut out = ipm.run(&mut trace);
    unscale(&mut out, &scaling);
    finish(p, &int, out)
}

fn unscale(out: &mut IpmOutcome, scaling: &Scaling) {
    for (j, v) in out.x.iter_mut().enumerate() {
        *v *= scaling.col[j];
    }
    for (r, v) in out.y.iter_mut().enumerate() {
        *v *= scaling.row_a[r] / scaling.cost;
    }
    for (i, v) in out.z.iter_mut().enumerate() {
        *v *= scaling.row_g[i] / scaling.cost;
    }
}

struct IpmOutcome {
    status: SolverStatus,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    dual_obj_int: f64,
    iterations: usize,
}

fn finish(p: &ConicProgram, int: &Internal, out: IpmOutcome) -> ConicSolution {
    match out.status {
        SolverStatus::PrimalInfeasible => ConicSolution {
            status: out.status,
            x: vec![0.0; p.nvars()],
            duals: int.recover_duals(&out.y, &out.z, false),
            objective: f64::NEG_INFINITY,
            dual_objective: f64::NEG_INFINITY,
            iterations: out.iterations,
        },
        SolverStatus::DualInfeasible => ConicSolution {
            status: out.status,
            x: int.recover_x(&out.x),
            duals: vec![0.0; p.eq_rows().len()],
            objective: f64::INFINITY,
            dual_objective: f64::INFINITY,
            iterations: out.iterations,
        },
        _ => {
            let x = int.recover_x(&out.x);
            let objective: f64 =
                p.objective().iter().zip(&x).map(|(&c, &v)| c * v).sum();
            ConicSolution {
                status: out.status,
                duals: int.recover_duals(&out.y, &out.z, true),
                objective,
                dual_objective: -out.dual_obj_int,
                iterations: out.iterations,
                x,
            }
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const STATIC_REG: f64 = 1e-9;
const FRACTION_TO_BOUNDARY: f64 = 0.99;

struct Ipm<'a> {
    int: &'a Internal,
    cfg: &'a SolverConfig,
    nx: usize,
    ny: usize,
    mz: usize,
    nu: f64,
    norm_b: f64,
    norm_h: f64,
    cost_scale: f64,
    b_scale: Vec<f64>,
    h_scale: Vec<f64>,
    c_scale: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct KktSys {
    factor: LdlFactor,
}

impl<'a> Ipm<'a> {
    fn new(int: &'a Internal, cfg: &'a SolverConfig, cost_scale: f64) -> Self {
        let nx = int.nx;
        let ny = int.a.len();
        let mz = int.cone_dim();
        let mut s = vec![0.0; mz];
        let mut z = vec![0.0; mz];
        for block in &int.blocks {
            let r = block.start()..block.start() + block.dim();
            unit_element(block, &mut s[r.clone()]);
            unit_element(block, &mut z[r]);
        }
        let nu: f64 = int.blocks.iter().map(|b| b.degree()).sum::<usize>() as f64;
        Ipm {
            nu,
            norm_b: norm2(&int.b),
            norm_h: norm2(&int.h),
            cost_scale,
            b_scale: int.b.iter().map(|v| 1.0 + v.abs()).collect(),
            h_scale: int.h.iter().map(|v| 1.0 + v.abs()).collect(),
            c_scale: int.c.iter().map(|v| 1.0 + v.abs()).collect(),
            int,
            cfg,
            nx,
            ny,
            mz,
            x: vec![0.0; nx],
            y: vec![0.0; ny],
            z,
            s,
            tau: 1.0,
            kappa: 1.0,
        }
    }

    fn apply_a(&self, x: &[f64], out: &mut [f64]) {
        for (r, row) in self.int.a.iter().enumerate() {
            out[r] = row.dot(x);
        }
    }

    fn apply_at(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (r, row) in self.int.a.iter().enumerate() {
            row.scatter_add(y[r], out);
        }
    }

    fn apply_g(&self, x: &[f64], out: &mut [f64]) {
        for (r, row) in self.int.g.iter().enumerate() {
            out[r] = row.dot(x);
        }
    }

    fn apply_gt(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (r, row) in self.int.g.iter().enumerate() {
            row.scatter_add(z[r], out);
        }
    }

    fn apply_w_inv_sq(&self, scalings: &[NtScaling], v: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.mz];
        for (block, sc) in self.int.blocks.iter().zip(scalings) {
            let r = block.start()..block.start() + block.dim();
            sc.apply_w_inv(&v[r.clone()], &mut tmp[r.clone()]);
            let t2 = tmp[r.clone()].to_vec();
            sc.apply_w_inv(&t2, &mut out[r]);
        }
    }

    /// Assemble and factor the reduced KKT matrix for the current scaling.
    fn build_kkt(&self, scalings: &[NtScaling]) -> Option<KktSys> {
        let nx = self.nx;
        let n = nx + self.ny;
        let mut s_dense = vec![0.0; nx * nx];
        let add_outer = |s_dense: &mut Vec<f64>, scale: f64, row: &SpRow| {
            for (a, (&ci, &vi)) in row.cols.iter().zip(&row.vals).enumerate() {
                let svi = scale * vi;
                for (&cj, &vj) in row.cols.iter().zip(&row.vals).take(a + 1) {
                    let (hi, lo) = if ci >= cj { (ci, cj) } else { (cj, ci) };
                    s_dense[hi * nx + lo] += svi * vj;
                }
            }
        };
        for (block, sc) in self.int.blocks.iter().zip(scalings) {
            match (block, sc) {
                (ConeBlock::NonNeg { start, len }, NtScaling::NonNeg { w }) => {
                    for i in 0..*len {
                        let d = 1.0 / (w[i] * w[i]);
                        add_outer(&mut s_dense, d, &self.int.g[start + i]);
                    }
                }
                (ConeBlock::Soc { start, dim }, NtScaling::Soc { eta_sqrt, wbar }) => {
                    let eta_inv = 1.0 / (eta_sqrt * eta_sqrt * eta_sqrt * eta_sqrt);
                    // v = J wbar
                    let mut a_vec = vec![0.0; nx];
                    let mut support: Vec<usize> = Vec::new();
                    for j in 0..*dim {
                        let vj = if j == 0 { wbar[0] } else { -wbar[j] };
                        let row = &self.int.g[start + j];
                        for (&c, &val) in row.cols.iter().zip(&row.vals) {
                            if a_vec[c] == 0.0 {
                                support.push(c);
                            }
                            a_vec[c] += vj * val;
                        }
                        let scale = if j == 0 { -eta_inv } else { eta_inv };
                        add_outer(&mut s_dense, scale, row);
                    }
                    support.sort_unstable();
                    support.dedup();
                    for (ai, &ci) in support.iter().enumerate() {
                        let vi = 2.0 * eta_inv * a_vec[ci];
                        for &cj in support.iter().take(ai + 1) {
                            let (hi, lo) = if ci >= cj { (ci, cj) } else { (cj, ci) };
                            s_dense[hi * nx + lo] += vi * a_vec[cj];
                        }
                    }
                    for &c in &support {
                        a_vec[c] = 0.0;
                    }
                }
                _ => unreachable!("scaling kind matches block kind"),
            }
        }
        let mut m = vec![0.0; n * n];
        for i in 0..nx {
            for j in 0..=i {
                m[i * n + j] = s_dense[i * nx + j];
            }
            m[i * n + i] += STATIC_REG;
        }
        for (r, row) in self.int.a.iter().enumerate() {
            let i = nx + r;
            for (&c, &v) in row.cols.iter().zip(&row.vals) {
                m[i * n + c] = v;
            }
            m[i * n + i] = -STATIC_REG;
        }
        let factor = LdlFactor::factor(n, |i, j| m[i * n + j])?;
        drop(s_dense);
        Some(KktSys { factor })
    }

    fn apply_w_sq(&self, scalings: &[NtScaling], v: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.mz];
        for (block, sc) in self.int.blocks.iter().zip(scalings) {
            let r = block.start()..block.start() + block.dim();
            sc.apply_w(&v[r.clone()], &mut tmp[r.clone()]);
            let t2 = tmp[r.clone()].to_vec();
            sc.apply_w(&t2, &mut out[r]);
        }
    }

    /// One reduced solve: returns (dx, dy, dz) for the system
    ///   A' dy + G' dz = d1,  A dx = d2,  G dx - W^2 dz = d3.
    fn kkt_solve_once(
        &self,
        sys: &KktSys,
        scalings: &[NtScaling],
        d1: &[f64],
        d2: &[f64],
        d3: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let nx = self.nx;
        let mut winv2_d3 = vec![0.0; self.mz];
        self.apply_w_inv_sq(scalings, d3, &mut winv2_d3);
        let mut sol = vec![0.0; nx + self.ny];
        self.apply_gt(&winv2_d3, &mut sol[..nx]);
        for i in 0..nx {
            sol[i] += d1[i];
        }
        sol[nx..].copy_from_slice(d2);
        sys.factor.solve_in_place(&mut sol);
        let dx = sol[..nx].to_vec();
        let dy = sol[nx..].to_vec();
        let mut gdx = vec![0.0; self.mz];
        self.apply_g(&dx, &mut gdx);
        for i in 0..self.mz {
            gdx[i] -= d3[i];
        }
        let mut dz = vec![0.0; self.mz];
        self.apply_w_inv_sq(scalings, &gdx, &mut dz);
        (dx, dy, dz)
    }

    /// Solve the 3x3 system with iterative refinement of all three block
    /// rows against the unregularized operator. Refinement keeps the dual
    /// residual under control when the scaling becomes ill-conditioned near
    /// convergence.
    fn kkt_solve(
        &self,
        sys: &KktSys,
        scalings: &[NtScaling],
        d1: &[f64],
        d2: &[f64],
        d3: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let scale = norm2(d1).max(norm2(d2)).max(norm2(d3)).max(1.0);
        let (mut dx, mut dy, mut dz) = self.kkt_solve_once(sys, scalings, d1, d2, d3);
        let mut last_err = f64::INFINITY;
        for _round in 0..6 {
            let mut e1 = vec![0.0; self.nx];
            self.apply_at(&dy, &mut e1);
            let mut gtz = vec![0.0; self.nx];
            self.apply_gt(&dz, &mut gtz);
            for i in 0..self.nx {
                e1[i] = d1[i] - e1[i] - gtz[i];
            }
            let mut e2 = vec![0.0; self.ny];
            self.apply_a(&dx, &mut e2);
            for r in 0..self.ny {
                e2[r] = d2[r] - e2[r];
            }
            let mut gdx = vec![0.0; self.mz];
            self.apply_g(&dx, &mut gdx);
            let mut w2dz = vec![0.0; self.mz];
            self.apply_w_sq(scalings, &dz, &mut w2dz);
            let mut e3 = vec![0.0; self.mz];
            for i in 0..self.mz {
                e3[i] = d3[i] - gdx[i] + w2dz[i];
            }
            let err = norm2(&e1).max(norm2(&e2)).max(norm2(&e3));
            if err <= 1e-14 * scale || err >= 0.5 * last_err {
                break;
            }
            last_err = err;
            let (cx, cy, cz) = self.kkt_solve_once(sys, scalings, &e1, &e2, &e3);
            for i in 0..self.nx {
                dx[i] += cx[i];
            }
            for r in 0..self.ny {
                dy[r] += cy[r];
            }
            for i in 0..self.mz {
                dz[i] += cz[i];
            }
        }
        (dx, dy, dz)
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        sys: &KktSys,
        scalings: &[NtScaling],
        lambda: &[f64],
        u1: &(Vec<f64>, Vec<f64>, Vec<f64>),
        r1: &[f64],
        r2: &[f64],
        r3: &[f64],
        r4: f64,
        ds: &[f64],
        dk: f64,
        one_minus_sigma: f64,
    ) -> Option<Direction> {
        let mut q = vec![0.0; self.mz];
        for (block, _sc) in self.int.blocks.iter().zip(scalings) {
            let r = block.start()..block.start() + block.dim();
            let mut out = vec![0.0; block.dim()];
            if !jordan_solve(block, &lambda[r.clone()], &ds[r.clone()], &mut out) {
                return None;
            }
            q[r].copy_from_slice(&out);
        }
        let mut wq = vec![0.0; self.mz];
        for (block, sc) in self.int.blocks.iter().zip(scalings) {
            let r = block.start()..block.start() + block.dim();
            let mut out = vec![0.0; block.dim()];
            sc.apply_w(&q[r.clone()], &mut out);
            wq[r].copy_from_slice(&out);
        }
        let d1: Vec<f64> = r1.iter().map(|&v| -one_minus_sigma * v).collect();
        let d2: Vec<f64> = r2.iter().map(|&v| -one_minus_sigma * v).collect();
        let d3: Vec<f64> =
            r3.iter().zip(&wq).map(|(&v, &w)| -one_minus_sigma * v - w).collect();
        let (u2x, u2y, u2z) = self.kkt_solve(sys, scalings, &d1, &d2, &d3);
        let (u1x, u1y, u1z) = u1;

        let denom = dot(&self.int.c, u1x) + dot(&self.int.b, u1y) + dot(&self.int.h, u1z)
            - self.kappa / self.tau;
        if denom.abs() < 1e-300 {
            return None;
        }
        let num = -one_minus_sigma * r4
            - dk / self.tau
            - (dot(&self.int.c, &u2x) + dot(&self.int.b, &u2y) + dot(&self.int.h, &u2z));
        let dtau = num / denom;

        let dx: Vec<f64> = u2x.iter().zip(u1x).map(|(&a, &b)| a + dtau * b).collect();
        let dy: Vec<f64> = u2y.iter().zip(u1y).map(|(&a, &b)| a + dtau * b).collect();
        let dz: Vec<f64> = u2z.iter().zip(u1z).map(|(&a, &b)| a + dtau * b).collect();
        let mut gdx = vec![0.0; self.mz];
        self.apply_g(&dx, &mut gdx);
        let dsv: Vec<f64> = (0..self.mz)
            .map(|i| -one_minus_sigma * r3[i] - gdx[i] + dtau * self.int.h[i])
            .collect();
        let dkappa = (dk - self.kappa * dtau) / self.tau;
        Some(Direction { dx, dy, dz, ds: dsv, dtau, dkappa })
    }

    fn max_step(&self, dir: &Direction) -> f64 {
        let mut alpha = f64::INFINITY;
        for block in &self.int.blocks {
            let r = block.start()..block.start() + block.dim();
            alpha = step_to_boundary(block, &self.s[r.clone()], &dir.ds[r.clone()], alpha);
            alpha = step_to_boundary(block, &self.z[r.clone()], &dir.dz[r.clone()], alpha);
        }
        if dir.dtau < 0.0 {
            alpha = alpha.min(-self.tau / dir.dtau);
        }
        if dir.dkappa < 0.0 {
            alpha = alpha.min(-self.kappa / dir.dkappa);
        }
        alpha
    }

    fn run(&mut self, trace: &mut Option<&mut Vec<IterTrace>>) -> IpmOutcome {
        let mut status = SolverStatus::IterLimit;
        let mut iterations = 0;
        let mut stall = 0usize;
        let mut dual_obj_int = f64::INFINITY;
        let mut best: Option<(f64, BestIterate)> = None;
        let mut since_improve = 0usize;
        for iter in 0..self.cfg.max_iters {
            iterations = iter;
            // residuals of the self-dual model
            let mut r1 = vec![0.0; self.nx];
            self.apply_at(&self.y, &mut r1);
            let mut gtz = vec![0.0; self.nx];
            self.apply_gt(&self.z, &mut gtz);
            for i in 0..self.nx {
                r1[i] += gtz[i] + self.int.c[i] * self.tau;
            }
            let mut r2 = vec![0.0; self.ny];
            self.apply_a(&self.x, &mut r2);
            for (r, v) in r2.iter_mut().enumerate() {
                *v -= self.int.b[r] * self.tau;
            }
            let mut r3 = vec![0.0; self.mz];
            self.apply_g(&self.x, &mut r3);
            for i in 0..self.mz {
                r3[i] += self.s[i] - self.int.h[i] * self.tau;
            }
            let cx = dot(&self.int.c, &self.x);
            let by = dot(&self.int.b, &self.y);
            let hz = dot(&self.int.h, &self.z);
            let r4 = self.kappa + cx + by + hz;

            let pcost = cx / (self.tau * self.cost_scale) + self.int.obj_offset;
            let dcost = -(by + hz) / (self.tau * self.cost_scale) + self.int.obj_offset;
            dual_obj_int = dcost;
            let mut pres = 0.0_f64;
            for (i, v) in r2.iter().enumerate() {
                pres = pres.max(v.abs() / self.b_scale[i]);
            }
            for (i, v) in r3.iter().enumerate() {
                pres = pres.max(v.abs() / self.h_scale[i]);
            }
            pres /= self.tau;
            let mut dres = 0.0_f64;
            for (i, v) in r1.iter().enumerate() {
                dres = dres.max(v.abs() / self.c_scale[i]);
            }
            dres /= self.tau;
            let gap = (pcost - dcost).abs();
            if let Some(t) = trace.as_deref_mut() {
                t.push(IterTrace {
                    iter,
                    primal_obj: -pcost,
                    dual_obj: -dcost,
                    gap,
                    pres,
                    dres,
                    step: 0.0,
                });
            }
            if self.cfg.verbose {
                let mut v = r1.clone();
                for i in 0..self.nx {
                    v[i] -= self.int.c[i] * self.tau;
                }
                eprintln!(
                    "iter {iter:3}  primal {:+.6e}  dual {:+.6e}  gap {:.3e}  pres {:.3e}  dres {:.3e}  tau {:.3e} kappa {:.3e} ct {:+.3e} certres {:.3e}",
                    -pcost, -dcost, gap, pres, dres, self.tau, self.kappa, by + hz, norm2(&v)
                );
            }
            let score = (pres / self.cfg.feas_tol)
                .max(dres / self.cfg.feas_tol)
                .max(gap / (self.cfg.rel_gap_tol * (1.0 + pcost.abs())));
            if best.as_ref().map_or(true, |(s, _)| score < *s) {
                since_improve = 0;
                best = Some((
                    score,
                    BestIterate {
                        x: self.x.clone(),
                        y: self.y.clone(),
                        z: self.z.clone(),
                        tau: self.tau,
                        dcost,
                    },
                ));
            } else {
                since_improve += 1;
            }
            if score <= 1.0 {
                status = SolverStatus::Optimal;
                break;
            }
            // conditioning-limited runs wander once they bottom out; return
            // the best iterate instead of drifting
            if since_improve >= 12 {
                break;
            }
            // certificate checks, gated on the homogeneous signal tau -> 0
            // (iterates are normalized to tau + kappa = 1); a past iterate
            // within 100x of the optimality tolerances rules certificates out
            let near_opt_seen = best.as_ref().map_or(false, |(s, _)| *s <= 100.0);
            let infeas_signal =
                !near_opt_seen && self.tau < 1e-2 * (self.tau + self.kappa);
            let ct = by + hz;
            if infeas_signal && ct < 0.0 {
                let mut v = r1.clone();
                for i in 0..self.nx {
                    v[i] -= self.int.c[i] * self.tau;
                }
                if norm2(&v) <= self.cfg.feas_tol * (-ct) {
                    let inv = 1.0 / -ct;
                    for yv in self.y.iter_mut() {
                        *yv *= inv;
                    }
                    for zv in self.z.iter_mut() {
                        *zv *= inv;
                    }
                    status = SolverStatus::PrimalInfeasible;
                    break;
                }
            }
            if infeas_signal && cx < 0.0 {
                let mut ax = vec![0.0; self.ny];
                self.apply_a(&self.x, &mut ax);
                let mut gxs = vec![0.0; self.mz];
                self.apply_g(&self.x, &mut gxs);
                for i in 0..self.mz {
                    gxs[i] += self.s[i];
                }
                let res = (norm2(&ax) / (1.0 + self.norm_b))
                    .max(norm2(&gxs) / (1.0 + self.norm_h));
                if res <= self.cfg.feas_tol * (-cx) {
                    let inv = 1.0 / -cx;
                    for xv in self.x.iter_mut() {
                        *xv *= inv;
                    }
                    status = SolverStatus::DualInfeasible;
                    break;
                }
            }

            let scalings: Option<Vec<NtScaling>> = self
                .int
                .blocks
                .iter()
                .map(|b| {
                    let r = b.start()..b.start() + b.dim();
                    compute_scaling(b, &self.s[r.clone()], &self.z[r])
                })
                .collect();
            let Some(scalings) = scalings else {
                status = SolverStatus::NumericalFailure;
                break;
            };
            let mut lambda = vec![0.0; self.mz];
            for (block, sc) in self.int.blocks.iter().zip(&scalings) {
                let r = block.start()..block.start() + block.dim();
                let mut out = vec![0.0; block.dim()];
                sc.lambda(&self.z[r.clone()], &mut out);
                lambda[r].copy_from_slice(&out);
            }
            let mu = (dot(&self.s, &self.z) + self.tau * self.kappa) / (self.nu + 1.0);

            let Some(sys) = self.build_kkt(&scalings) else {
                status = SolverStatus::NumericalFailure;
                break;
            };
            let neg_c: Vec<f64> = self.int.c.iter().map(|&v| -v).collect();
            let u1 = self.kkt_solve(&sys, &scalings, &neg_c, &self.int.b, &self.int.h);

            // affine (predictor) direction: sigma = 0, ds = -lambda o lambda
            let mut ds_aff = vec![0.0; self.mz];
            for block in &self.int.blocks {
                let r = block.start()..block.start() + block.dim();
                let mut out = vec![0.0; block.dim()];
                jordan_product(block, &lambda[r.clone()], &lambda[r.clone()], &mut out);
                for v in out.iter_mut() {
                    *v = -*v;
                }
                ds_aff[r].copy_from_slice(&out);
            }
            let dk_aff = -self.tau * self.kappa;
            let Some(aff) = self.direction(
                &sys, &scalings, &lambda, &u1, &r1, &r2, &r3, r4, &ds_aff, dk_aff, 1.0,
            ) else {
                status = SolverStatus::NumericalFailure;
                break;
            };
            let alpha_aff = self.max_step(&aff).min(1.0);
            let mut sz_aff = 0.0;
            for i in 0..self.mz {
                sz_aff +=
                    (self.s[i] + alpha_aff * aff.ds[i]) * (self.z[i] + alpha_aff * aff.dz[i]);
            }
            let mu_aff = (sz_aff
                + (self.tau + alpha_aff * aff.dtau) * (self.kappa + alpha_aff * aff.dkappa))
                / (self.nu + 1.0);
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // combined (corrector) direction
            let mut ds_comb = vec![0.0; self.mz];
            for (block, sc) in self.int.blocks.iter().zip(&scalings) {
                let r = block.start()..block.start() + block.dim();
                let dim = block.dim();
                let mut wis = vec![0.0; dim];
                sc.apply_w_inv(&aff.ds[r.clone()], &mut wis);
                let mut wz = vec![0.0; dim];
                sc.apply_w(&aff.dz[r.clone()], &mut wz);
                let mut eta = vec![0.0; dim];
                jordan_product(block, &wis, &wz, &mut eta);
                let mut unit = vec![0.0; dim];
                unit_element(block, &mut unit);
                let mut ll = vec![0.0; dim];
                jordan_product(block, &lambda[r.clone()], &lambda[r.clone()], &mut ll);
                let out: Vec<f64> = (0..dim)
                    .map(|i| sigma * mu * unit[i] - ll[i] - eta[i])
                    .collect();
                ds_comb[r].copy_from_slice(&out);
            }
            let dk_comb = sigma * mu - self.tau * self.kappa - aff.dtau * aff.dkappa;
            let Some(dir) = self.direction(
                &sys,
                &scalings,
                &lambda,
                &u1,
                &r1,
                &r2,
                &r3,
                r4,
                &ds_comb,
                dk_comb,
                1.0 - sigma,
            ) else {
                status = SolverStatus::NumericalFailure;
                break;
            };
            let alpha = (FRACTION_TO_BOUNDARY * self.max_step(&dir)).min(1.0);
            if let Some(t) = trace.as_deref_mut() {
                if let Some(last) = t.last_mut() {
                    last.step = alpha;
                }
            }
            if alpha <= 1e-8 {
                stall += 1;
                if stall >= 3 {
                    status = SolverStatus::NumericalFailure;
                    break;
                }
            } else {
                stall = 0;
            }
            for i in 0..self.nx {
                self.x[i] += alpha * dir.dx[i];
            }
            for r in 0..self.ny {
                self.y[r] += alpha * dir.dy[r];
            }
            for i in 0..self.mz {
                self.z[i] += alpha * dir.dz[i];
                self.s[i] += alpha * dir.ds[i];
            }
            self.tau += alpha * dir.dtau;
            self.kappa += alpha * dir.dkappa;
            if !self.tau.is_finite() || self.tau <= 1e-300 {
                status = SolverStatus::NumericalFailure;
                break;
            }
            // the model is positively homogeneous; renormalizing to
            // tau + kappa = 1 pins the scale so the iterate cannot drift
            // down the trivial ray
            let scale = 1.0 / (self.tau + self.kappa);
            if scale.is_finite() && scale > 0.0 {
                for v in self.x.iter_mut() {
                    *v *= scale;
                }
                for v in self.y.iter_mut() {
                    *v *= scale;
                }
                for v in self.z.iter_mut() {
                    *v *= scale;
                }
                for v in self.s.iter_mut() {
                    *v *= scale;
                }
                self.tau *= scale;
                self.kappa *= scale;
            }
        }
        match status {
            SolverStatus::PrimalInfeasible | SolverStatus::DualInfeasible => IpmOutcome {
                status,
                x: self.x.clone(),
                y: self.y.clone(),
                z: self.z.clone(),
                dual_obj_int,
                iterations: iterations + 1,
            },
            _ => {
                // fall back to the best iterate seen; late iterations can
                // degrade once the scaling matrix becomes near-singular
                let (x, y, z, tau, dcost) = match best {
                    Some((score, snap)) => {
                        if score <= 1.0 {
                            status = SolverStatus::Optimal;
                        }
                        (snap.x, snap.y, snap.z, snap.tau, snap.dcost)
                    }
                    None => {
                        (self.x.clone(), self.y.clone(), self.z.clone(), self.tau, dual_obj_int)
                    }
                };
                let inv_tau = 1.0 / tau;
                IpmOutcome {
                    status,
                    x: x.iter().map(|v| v * inv_tau).collect(),
                    y: y.iter().map(|v| v * inv_tau).collect(),
                    z: z.iter().map(|v| v * inv_tau).collect(),
                    dual_obj_int: dcost,
                    iterations: iterations + 1,
                }
            }
        }
    }
}

struct BestIterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    tau: f64,
    dcost: f64,
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ConicProgram;
    use crate::model::Sense;

    fn default_cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn norm_of_fixed_point() {
        // maximize t ... wait, minimize-by-maximizing -t: max -t s.t. ||x|| <= t, x = 1
        // the tight optimum is t = 1
        let mut p = ConicProgram::new();
        let x = p.add_vars("x", 1);
        let t = p.add_vars("t", 1);
        p.set_objective(t.scalar(), -1.0);
        p.add_soc(t.scalar(), &[x.scalar()]).unwrap();
        p.add_linear(&[1.0], &[x.scalar()], 1.0, Sense::Eq).unwrap();
        let sol = solve(&p, &default_cfg());
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.x[1] - 1.0).abs() < 1e-7, "t = {}", sol.x[1]);
        assert!((sol.objective + 1.0).abs() < 1e-7);
    }

    #[test]
    fn simplex_lp_picks_best_vertex() {
        let mut p = ConicProgram::new();
        let w = p.add_vars("w", 3);
        p.add_nonneg(&w.indices().collect::<Vec<_>>()).unwrap();
        p.set_objective(w.index(0), 1.0);
        p.set_objective(w.index(1), 3.0);
        p.set_objective(w.index(2), 2.0);
        p.add_linear(&[1.0; 3], &w.indices().collect::<Vec<_>>(), 1.0, Sense::Eq).unwrap();
        let sol = solve(&p, &default_cfg());
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-7);
        assert!((sol.x[1] - 1.0).abs() < 1e-6);
        assert!(sol.dual_objective >= sol.objective - 1e-6);
    }

    #[test]
    fn contradictory_equalities_are_primal_infeasible() {
        let mut p = ConicProgram::new();
        let w = p.add_vars("w", 3);
        let idx: Vec<usize> = w.indices().collect();
        p.add_nonneg(&idx).unwrap();
        p.set_objective(w.index(0), 1.0);
        p.add_linear(&[1.0; 3], &idx, 1.0, Sense::Eq).unwrap();
        p.add_linear(&[1.0; 3], &idx, 2.0, Sense::Eq).unwrap();
        let sol = solve(&p, &default_cfg());
        assert_eq!(sol.status, SolverStatus::PrimalInfeasible);
    }

    #[test]
    fn rotated_cone_bound_is_tight() {
        // ||x||^2 <= t u with x = 3, u = 1 pins t from below at ||x||^2 / u = 9
        let mut p = ConicProgram::new();
        let v = p.add_vars("v", 3); // x, t, u
        p.set_objective(v.index(1), -1.0);
        p.add_rotated_cone(&[v.index(0)], v.index(1), v.index(2)).unwrap();
        p.add_linear(&[1.0], &[v.index(0)], 3.0, Sense::Eq).unwrap();
        p.add_linear(&[1.0], &[v.index(2)], 1.0, Sense::Eq).unwrap();
        let sol = solve(&p, &default_cfg());
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.x[1] - 9.0).abs() < 1e-6, "t = {}", sol.x[1]);
        // boundary point ||x||^2 = t u is feasible: 4 = 1 * 4
        let mut q = ConicProgram::new();
        let v = q.add_vars("v", 3);
        q.add_rotated_cone(&[v.index(0)], v.index(1), v.index(2)).unwrap();
        q.add_linear(&[1.0], &[v.index(0)], 2.0, Sense::Eq).unwrap();
        q.add_linear(&[1.0], &[v.index(1)], 1.0, Sense::Eq).unwrap();
        q.add_linear(&[1.0], &[v.index(2)], 4.0, Sense::Eq).unwrap();
        let sol = solve(&q, &default_cfg());
        assert_eq!(sol.status, SolverStatus::Optimal);
    }

    #[test]
    fn rotated_cone_objective_pushes_t_down() {
        // minimize t with x = 2, u = 4 fixed: boundary 4 = t*u at t = 1
        let mut p = ConicProgram::new();
        let v = p.add_vars("v", 3);
        p.set_objective(v.index(1), -1.0);
        p.add_rotated_cone(&[v.index(0)], v.index(1), v.index(2)).unwrap();
        p.add_linear(&[1.0], &[v.index(0)], 2.0, Sense::Eq).unwrap();
        p.add_linear(&[1.0], &[v.index(2)], 4.0, Sense::Eq).unwrap();
        let sol = solve(&p, &default_cfg());
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn geometric_mean_small_cases() {
        // n = 2: max t <= sqrt(4 * 9) = 6
        let mut p = ConicProgram::new();
        let x = p.add_vars("x", 2);
        let t = p.add_vars("t", 1).scalar();
        p.set_objective(t, 1.0);
        p.add_nonneg(&x.indices().collect::<Vec<_>>()).unwrap();
        p.add_geomean_hypograph(&x, t).unwrap();
        p.add_linear(&[1.0], &[x.index(0)], 4.0, Sense::Eq).unwrap();
        p.add_linear(&[1.0], &[x.index(1)], 9.0, Sense::Eq).unwrap();
        let sol = solve(&p, &default_cfg());
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.objective - 6.0).abs() < 1e-6, "got {}", sol.objective);

        // n = 5 tower with padding: (5!)^(1/5)
        let mut p = ConicProgram::new();
        let x = p.add_vars("x", 5);
        let t = p.add_vars("t", 1).scalar();
        p.set_objective(t, 1.0);
        p.add_nonneg(&x.indices().collect::<Vec<_>>()).unwrap();
        p.add_geomean_hypograph(&x, t).unwrap();
        for i in 0..5 {
            p.add_linear(&[1.0], &[x.index(i)], (i + 1) as f64, Sense::Eq).unwrap();
        }
        let sol = solve(&p, &default_cfg());
        assert_eq!(sol.status, SolverStatus::Optimal);
        let expected = 120.0_f64.powf(0.2);
        assert!(
            (sol.objective - expected).abs() < 1e-7 * expected,
            "got {} want {expected}",
            sol.objective
        );
    }

    #[test]
    fn unbounded_ray_is_dual_infeasible() {
        let mut p = ConicProgram::new();
        let w = p.add_vars("w", 2);
        let idx: Vec<usize> = w.indices().collect();
        p.add_nonneg(&idx).unwrap();
        p.set_objective(w.index(0), 1.0);
        p.add_linear(&[1.0, -1.0], &idx, 0.0, Sense::Eq).unwrap();
        let sol = solve(&p, &default_cfg());
        assert_eq!(sol.status, SolverStatus::DualInfeasible);
    }

    #[test]
    fn duals_satisfy_stationarity() {
        let mut p = ConicProgram::new();
        let w = p.add_vars("w", 3);
        let idx: Vec<usize> = w.indices().collect();
        p.add_nonneg(&idx).unwrap();
        p.set_objective(w.index(0), 1.0);
        p.set_objective(w.index(1), 2.0);
        p.add_linear(&[1.0; 3], &idx, 1.0, Sense::Eq).unwrap();
        p.add_linear(&[1.0, -1.0, 0.0], &idx, 0.0, Sense::Eq).unwrap();
        let sol = solve(&p, &default_cfg());
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert_eq!(sol.duals.len(), p.eq_rows().len());
        // optimum splits evenly between w0 and w1 at 1/2 each
        assert!((sol.objective - 1.5).abs() < 1e-6);
    }

    #[test]
    fn deterministic_iterates() {
        let build = || {
            let mut p = ConicProgram::new();
            let x = p.add_vars("x", 4);
            let t = p.add_vars("t", 1).scalar();
            p.set_objective(t, 1.0);
            p.add_nonneg(&x.indices().collect::<Vec<_>>()).unwrap();
            p.add_geomean_hypograph(&x, t).unwrap();
            for i in 0..4 {
                p.add_linear(&[1.0], &[x.index(i)], 1.0 + i as f64, Sense::Eq).unwrap();
            }
            p
        };
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        let s1 = solve_traced(&build(), &default_cfg(), Some(&mut t1));
        let s2 = solve_traced(&build(), &default_cfg(), Some(&mut t2));
        assert_eq!(s1.x, s2.x);
        assert_eq!(t1.len(), t2.len());
        for (a, b) in t1.iter().zip(&t2) {
            assert_eq!(a.primal_obj.to_bits(), b.primal_obj.to_bits());
        }
    }
}

/// Prints the reduced internal form; debugging helper, not part of the API.
#[doc(hidden)]
pub fn debug_presolve(p: &ConicProgram) {
    match presolve(p) {
        PresolveOutcome::Reduced(int) => {
            eprintln!("nx={} ny={} mz={}", int.nx, int.a.len(), int.cone_dim());
            eprintln!("c = {:?}", int.c);
            for (r, row) in int.a.iter().enumerate() {
                eprintln!("A[{r}] cols {:?} vals {:?} = {}", row.cols, row.vals, int.b[r]);
            }
            for (r, row) in int.g.iter().enumerate() {
                eprintln!("G[{r}] cols {:?} vals {:?} | h {}", row.cols, row.vals, int.h[r]);
            }
            for b in &int.blocks {
                eprintln!("block {b:?}");
            }
        }
        _ => eprintln!("not reduced"),
    }
}
