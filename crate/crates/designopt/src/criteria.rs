//! Compilation of design criteria into second-order cone programs and
//! recovery of criterion values and designs from conic solutions.
//!
//! Each compiler produces the cone program for its criterion over an
//! arbitrary linearly-constrained weight domain, together with handles to
//! every variable group and a monotone map from the conic objective back to
//! the criterion value.

use crate::conic::{ConicProgram, VarHandle};
use crate::linalg::{range_contains, rank_tolerance, sym_eigen, Matrix, SymPsd};
use crate::model::{Criterion, CriterionKind, ModelError, ObservationModel, Sense, WeightDomain};
use crate::oracle::phi_direct;
use crate::solver::{ConicSolution, SolverStatus};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("domain has {0} weights, model has {1} design points")]
    DomainMismatch(usize, usize),
    #[error("K must have {0} rows to match the model, got {1}")]
    KRows(usize, usize),
    #[error("K matrix is rank deficient")]
    RankDeficientK,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Monotone map from the conic objective (maximized) to the criterion value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PhiRecovery {
    /// Phi equals the conic objective (D_K, G).
    Direct,
    /// Phi = -1 / objective, for programs whose objective is the negated
    /// trace sum (A_K: objective = -sum mu, Phi = 1 / sum mu).
    NegReciprocal,
}

impl PhiRecovery {
    pub fn apply(&self, objective: f64) -> f64 {
        match self {
            PhiRecovery::Direct => objective,
            PhiRecovery::NegReciprocal => {
                if objective >= 0.0 {
                    f64::INFINITY
                } else {
                    -1.0 / objective
                }
            }
        }
    }
}

/// Handles into the compiled program, by criterion family.
#[derive(Debug, Clone)]
pub enum AuxHandles {
    /// D_K: Z_i (l_i x k, column-major), t_ij (s x k, row-major), J (k x k,
    /// row-major), and the hypograph variable carrying the objective.
    Dk { z: Vec<VarHandle>, t: VarHandle, j: VarHandle, phi_var: usize },
    /// A_K: Y_i (l_i x k, column-major) and mu (s).
    Ak { y: Vec<VarHandle>, mu: VarHandle },
    /// G: H_i^j (l_j x l_i, column-major, indexed i * s + j), u (s x s),
    /// and the bound variable rho.
    G { h: Vec<VarHandle>, u: VarHandle, rho: usize },
}

/// A compiled criterion: the cone program, the weight handle, the named
/// auxiliary handles and the objective-to-criterion recovery rule.
#[derive(Debug, Clone)]
pub struct CriterionProgram {
    pub program: ConicProgram,
    pub w: VarHandle,
    pub aux: AuxHandles,
    pub phi_recovery: PhiRecovery,
}

fn check_domain(model: &ObservationModel, domain: &WeightDomain) -> Result<(), CompileError> {
    if domain.s() != model.s() {
        return Err(CompileError::DomainMismatch(domain.s(), model.s()));
    }
    domain.validate()?;
    Ok(())
}

fn encode_domain(p: &mut ConicProgram, w: &VarHandle, domain: &WeightDomain) {
    let idx: Vec<usize> = w.indices().collect();
    p.add_nonneg(&idx).expect("w in program");
    if let Some(t) = domain.total {
        p.add_linear(&vec![1.0; idx.len()], &idx, t.n, Sense::Eq).expect("total row");
    }
    for (i, &lo) in domain.lower.iter().enumerate() {
        if lo > 0.0 {
            p.add_linear(&[1.0], &[w.index(i)], lo, Sense::Ge).expect("bound row");
        }
    }
    for (i, up) in domain.upper.iter().enumerate() {
        if let Some(up) = up {
            p.add_linear(&[1.0], &[w.index(i)], *up, Sense::Le).expect("bound row");
        }
    }
    for c in &domain.constraints {
        let (cols, vals): (Vec<usize>, Vec<f64>) = c
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (w.index(i), v))
            .unzip();
        p.add_linear(&vals, &cols, c.rhs, c.sense).expect("domain row");
    }
}

fn check_k(model: &ObservationModel, k: &Matrix) -> Result<(), CompileError> {
    if k.rows() != model.m() {
        return Err(CompileError::KRows(model.m(), k.rows()));
    }
    let gram = SymPsd::from_gram_sum(&[(1.0, &k.transpose())], k.cols());
    let (eigs, _) = sym_eigen(gram.matrix());
    let tol = rank_tolerance(k.cols(), eigs.last().copied().unwrap_or(0.0));
    if eigs.iter().any(|&e| e <= tol) {
        return Err(CompileError::RankDeficientK);
    }
    Ok(())
}

/// D_K-optimality: maximize (prod_j J_jj)^(1/k) subject to
/// sum_i A_i Z_i = K J, J lower triangular, ||Z_i e_j||^2 <= t_ij w_i,
/// sum_i t_ij <= J_jj, t >= 0 and w in the domain. At the optimum the
/// objective equals Phi_{D|K}(M(w)).
pub fn compile_dk(
    model: &ObservationModel,
    k: &Matrix,
    domain: &WeightDomain,
) -> Result<CriterionProgram, CompileError> {
    check_domain(model, domain)?;
    check_k(model, k)?;
    let s = model.s();
    let m = model.m();
    let kc = k.cols();
    let mut p = ConicProgram::new();
    let w = p.add_vars("w", s);
    encode_domain(&mut p, &w, domain);
    let z: Vec<VarHandle> =
        (0..s).map(|i| p.add_vars(&format!("Z{i}"), model.point(i).cols() * kc)).collect();
    let t = p.add_vars("t", s * kc);
    p.add_nonneg(&t.indices().collect::<Vec<_>>()).expect("t in program");
    let j = p.add_vars("J", kc * kc);

    // sum_i A_i Z_i = K J, entry (r, c)
    for r in 0..m {
        for c in 0..kc {
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for (i, zi) in z.iter().enumerate() {
                let a = model.point(i);
                let li = a.cols();
                for q in 0..li {
                    let coeff = a[(r, q)];
                    if coeff != 0.0 {
                        cols.push(zi.index(c * li + q));
                        vals.push(coeff);
                    }
                }
            }
            for row in 0..kc {
                let coeff = k[(r, row)];
                if coeff != 0.0 {
                    cols.push(j.index(row * kc + c));
                    vals.push(-coeff);
                }
            }
            p.add_eq(cols, vals, 0.0).expect("coupling row");
        }
    }
    // J lower triangular: strict upper entries pinned to zero
    for r in 0..kc {
        for c in r + 1..kc {
            p.add_eq(vec![j.index(r * kc + c)], vec![1.0], 0.0).expect("upper row");
        }
    }
    // ||Z_i e_j||^2 <= t_ij w_i
    for (i, zi) in z.iter().enumerate() {
        let li = model.point(i).cols();
        for c in 0..kc {
            let col: Vec<usize> = (0..li).map(|q| zi.index(c * li + q)).collect();
            p.add_rotated_cone(&col, t.index(i * kc + c), w.index(i)).expect("norm cone");
        }
    }
    // sum_i t_ij <= J_jj
    for c in 0..kc {
        let mut cols: Vec<usize> = (0..s).map(|i| t.index(i * kc + c)).collect();
        let mut vals = vec![1.0; s];
        cols.push(j.index(c * kc + c));
        vals.push(-1.0);
        p.add_linear(&vals, &cols, 0.0, Sense::Le).expect("t sum row");
    }
    // objective: geometric mean of the diagonal of J
    let diag = p.add_vars("Jdiag", kc);
    for c in 0..kc {
        p.add_eq(vec![diag.index(c), j.index(c * kc + c)], vec![1.0, -1.0], 0.0)
            .expect("diag copy");
    }
    let phi_var = p.add_vars("phi", 1).scalar();
    p.set_objective(phi_var, 1.0);
    p.add_geomean_hypograph(&diag, phi_var).expect("geomean");

    Ok(CriterionProgram {
        program: p,
        w,
        aux: AuxHandles::Dk { z, t, j, phi_var },
        phi_recovery: PhiRecovery::Direct,
    })
}

/// A_K-optimality: minimize sum_i mu_i subject to sum_i A_i Y_i = K,
/// ||Y_i||_F^2 <= mu_i w_i, mu >= 0, w in the domain. The optimal sum is
/// trace K^T M(w)^- K, so Phi_{A|K} = 1 / objective-sum.
pub fn compile_ak(
    model: &ObservationModel,
    k: &Matrix,
    domain: &WeightDomain,
) -> Result<CriterionProgram, CompileError> {
    check_domain(model, domain)?;
    if k.rows() != model.m() {
        return Err(CompileError::KRows(model.m(), k.rows()));
    }
    let s = model.s();
    let m = model.m();
    let kc = k.cols();
    let mut p = ConicProgram::new();
    let w = p.add_vars("w", s);
    encode_domain(&mut p, &w, domain);
    let y: Vec<VarHandle> =
        (0..s).map(|i| p.add_vars(&format!("Y{i}"), model.point(i).cols() * kc)).collect();
    let mu = p.add_vars("mu", s);
    p.add_nonneg(&mu.indices().collect::<Vec<_>>()).expect("mu in program");
    for r in 0..m {
        for c in 0..kc {
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for (i, yi) in y.iter().enumerate() {
                let a = model.point(i);
                let li = a.cols();
                for q in 0..li {
                    let coeff = a[(r, q)];
                    if coeff != 0.0 {
                        cols.push(yi.index(c * li + q));
                        vals.push(coeff);
                    }
                }
            }
            p.add_eq(cols, vals, k[(r, c)]).expect("coupling row");
        }
    }
    for (i, yi) in y.iter().enumerate() {
        let all: Vec<usize> = yi.indices().collect();
        p.add_rotated_cone(&all, mu.index(i), w.index(i)).expect("norm cone");
        p.set_objective(mu.index(i), -1.0);
    }
    Ok(CriterionProgram {
        program: p,
        w,
        aux: AuxHandles::Ak { y, mu },
        phi_recovery: PhiRecovery::NegReciprocal,
    })
}

/// G-optimality: minimize rho subject to sum_j A_j H_i^j = A_i for all i,
/// ||H_i^j||_F^2 <= w_j u_i^j, sum_j u_i^j <= rho. Phi_G = -rho.
pub fn compile_g(
    model: &ObservationModel,
    domain: &WeightDomain,
) -> Result<CriterionProgram, CompileError> {
    check_domain(model, domain)?;
    let s = model.s();
    let m = model.m();
    let mut p = ConicProgram::new();
    let w = p.add_vars("w", s);
    encode_domain(&mut p, &w, domain);
    let mut h: Vec<VarHandle> = Vec::with_capacity(s * s);
    for i in 0..s {
        let li = model.point(i).cols();
        for jj in 0..s {
            let lj = model.point(jj).cols();
            h.push(p.add_vars(&format!("H{i}^{jj}"), lj * li));
        }
    }
    let u = p.add_vars("u", s * s);
    p.add_nonneg(&u.indices().collect::<Vec<_>>()).expect("u in program");
    let rho = p.add_vars("rho", 1).scalar();
    p.set_objective(rho, -1.0);
    for i in 0..s {
        let ai = model.point(i);
        let li = ai.cols();
        // sum_j A_j H_i^j = A_i, entry (r, c)
        for r in 0..m {
            for c in 0..li {
                let mut cols = Vec::new();
                let mut vals = Vec::new();
                for jj in 0..s {
                    let aj = model.point(jj);
                    let lj = aj.cols();
                    let hij = &h[i * s + jj];
                    for q in 0..lj {
                        let coeff = aj[(r, q)];
                        if coeff != 0.0 {
                            cols.push(hij.index(c * lj + q));
                            vals.push(coeff);
                        }
                    }
                }
                p.add_eq(cols, vals, ai[(r, c)]).expect("coupling row");
            }
        }
        // variance bound for point i
        let mut cols: Vec<usize> = (0..s).map(|jj| u.index(i * s + jj)).collect();
        let mut vals = vec![1.0; s];
        cols.push(rho);
        vals.push(-1.0);
        p.add_linear(&vals, &cols, 0.0, Sense::Le).expect("u sum row");
        for jj in 0..s {
            let hij = &h[i * s + jj];
            let all: Vec<usize> = hij.indices().collect();
            p.add_rotated_cone(&all, u.index(i * s + jj), w.index(jj)).expect("norm cone");
        }
    }
    Ok(CriterionProgram {
        program: p,
        w,
        aux: AuxHandles::G { h, u, rho },
        phi_recovery: PhiRecovery::Direct,
    })
}

/// Full-column-rank K with K K^T = (1/s) sum_i A_i A_i^T; reduces
/// I-optimality (average prediction variance) to A_K-optimality.
pub fn i_to_ak(model: &ObservationModel) -> Matrix {
    let s = model.s() as f64;
    let terms: Vec<(f64, &Matrix)> =
        model.points().iter().map(|p| (1.0 / s, &p.matrix)).collect();
    let gram = SymPsd::from_gram_sum(&terms, model.m());
    let (eigs, v) = sym_eigen(gram.matrix());
    let tol = rank_tolerance(model.m(), eigs.last().copied().unwrap_or(0.0));
    let cols: Vec<usize> = (0..model.m()).filter(|&i| eigs[i] > tol).collect();
    Matrix::from_fn(model.m(), cols.len(), |r, c| v[(r, cols[c])] * eigs[cols[c]].sqrt())
}

/// Compile any criterion over a domain, routing K as required: D and A use
/// the identity, c uses its vector, I reduces through [`i_to_ak`].
pub fn compile(
    model: &ObservationModel,
    criterion: &Criterion,
    domain: &WeightDomain,
) -> Result<CriterionProgram, CompileError> {
    let eye = Matrix::identity(model.m());
    match criterion.kind {
        CriterionKind::D => compile_dk(model, &eye, domain),
        CriterionKind::Dk => compile_dk(model, criterion.k.as_ref().expect("K"), domain),
        CriterionKind::A => compile_ak(model, &eye, domain),
        CriterionKind::Ak | CriterionKind::C => {
            compile_ak(model, criterion.k.as_ref().expect("K"), domain)
        }
        CriterionKind::I => compile_ak(model, &i_to_ak(model), domain),
        CriterionKind::G => compile_g(model, domain),
    }
}

/// True iff the criterion is estimable somewhere in the domain: the range
/// of the relevant K (or of every A_i for G) lies in the range of the
/// information matrix of the most generous support the domain allows. Any
/// feasible design's information range is contained in that one, so a
/// failure here forces the zero-criterion convention outright.
pub fn estimable(model: &ObservationModel, criterion: &Criterion, domain: &WeightDomain) -> bool {
    let hi = domain.derived_upper_bounds();
    let w_gen: Vec<f64> = hi.iter().map(|&h| if h > 1e-12 { 1.0 } else { 0.0 }).collect();
    let Ok(m_gen) = model.information_matrix(&w_gen) else { return false };
    let check = |k: &Matrix| range_contains(&m_gen, k, 1e-9).unwrap_or(false);
    match criterion.kind {
        CriterionKind::D => true,
        CriterionKind::A => check(&Matrix::identity(model.m())),
        CriterionKind::Dk | CriterionKind::Ak | CriterionKind::C => {
            check(criterion.k.as_ref().expect("K"))
        }
        CriterionKind::I => check(&i_to_ak(model)),
        CriterionKind::G => model.points().iter().all(|p| check(&p.matrix)),
    }
}

/// Compile, solve and extract in one step, with the estimability precheck:
/// structurally inestimable problems return the Phi = 0 (or unbounded
/// variance) convention immediately instead of a weakly-infeasible solve.
pub fn solve_criterion(
    model: &ObservationModel,
    criterion: &Criterion,
    domain: &WeightDomain,
    cfg: &crate::solver::SolverConfig,
) -> Result<DesignSolution, CompileError> {
    check_domain(model, domain)?;
    if !estimable(model, criterion, domain) {
        let phi =
            if criterion.kind == CriterionKind::G { f64::NEG_INFINITY } else { 0.0 };
        return Ok(DesignSolution {
            weights: vec![0.0; model.s()],
            phi,
            conic_objective: f64::NEG_INFINITY,
            phi_direct: phi,
            status: SolverStatus::PrimalInfeasible,
            numerical_failure: false,
        });
    }
    let cp = compile(model, criterion, domain)?;
    let sol = crate::solver::solve(&cp.program, cfg);
    Ok(extract_design(&cp, &sol, model, criterion))
}

/// A design extracted from a conic solution, with the criterion value
/// recovered from the objective and cross-checked against the direct
/// formula.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSolution {
    pub weights: Vec<f64>,
    pub phi: f64,
    pub conic_objective: f64,
    pub phi_direct: f64,
    pub status: SolverStatus,
    /// Set when the recovered and direct values disagree beyond 1e-3.
    pub numerical_failure: bool,
}

const CROSS_CHECK_WARN: f64 = 1e-5;
const CROSS_CHECK_FAIL: f64 = 1e-3;

/// Objective level past which a trace-epigraph program (A_K, G) counts as
/// divergent: the estimability condition fails and the criterion value is 0
/// (or unbounded variance for G). Such programs are only weakly infeasible,
/// so the solver reports divergence rather than a Farkas certificate.
const DIVERGENCE_DETECT: f64 = 1e5;

/// Read the weights out of a solution, clamp sub-tolerance negatives, and
/// recover the criterion value. Infeasible programs report Phi = 0 (the
/// estimability-violated convention).
pub fn extract_design(
    cp: &CriterionProgram,
    sol: &ConicSolution,
    model: &ObservationModel,
    criterion: &Criterion,
) -> DesignSolution {
    let epigraph = cp.phi_recovery == PhiRecovery::NegReciprocal
        || matches!(cp.aux, AuxHandles::G { .. });
    let diverged = epigraph
        && (sol.status == SolverStatus::DualInfeasible || sol.objective <= -DIVERGENCE_DETECT);
    if sol.status == SolverStatus::PrimalInfeasible || diverged {
        let phi = if matches!(cp.aux, AuxHandles::G { .. }) && diverged {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        return DesignSolution {
            weights: vec![0.0; cp.w.len()],
            phi,
            conic_objective: f64::NEG_INFINITY,
            phi_direct: phi,
            status: sol.status,
            numerical_failure: false,
        };
    }
    let mut weights: Vec<f64> = cp.w.indices().map(|i| sol.x[i]).collect();
    for w in weights.iter_mut() {
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    let phi = cp.phi_recovery.apply(sol.objective);
    let direct = phi_direct(criterion, model, &weights);
    let denom = 1.0 + direct.abs();
    let err = if direct.is_finite() { (phi - direct).abs() / denom } else { 0.0 };
    let numerical_failure = sol.status == SolverStatus::NumericalFailure
        || (sol.status == SolverStatus::Optimal && err > CROSS_CHECK_FAIL);
    let _ = CROSS_CHECK_WARN;
    DesignSolution {
        weights,
        phi,
        conic_objective: sol.objective,
        phi_direct: direct,
        status: sol.status,
        numerical_failure,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeightDomain;
    use crate::oracle::phi_direct;
    use crate::solver::{solve, SolverConfig};
    use crate::workbench::{section2_constraint, section2_model};

    fn solve_design(
        model: &ObservationModel,
        criterion: &Criterion,
        domain: &WeightDomain,
    ) -> DesignSolution {
        solve_criterion(model, criterion, domain, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn d_optimal_three_point_simplex() {
        let model = section2_model();
        let d = solve_design(&model, &Criterion::d(), &WeightDomain::simplex(3));
        assert_eq!(d.status, SolverStatus::Optimal);
        for wi in &d.weights {
            assert!((wi - 1.0 / 3.0).abs() < 1e-4, "weights {:?}", d.weights);
        }
        assert!((d.phi - 0.5).abs() < 1e-5, "phi {}", d.phi);
        assert!(!d.numerical_failure);
    }

    #[test]
    fn d_optimal_three_point_constrained() {
        let model = section2_model();
        let mut domain = WeightDomain::simplex(3);
        section2_constraint(&mut domain);
        let d = solve_design(&model, &Criterion::d(), &domain);
        assert_eq!(d.status, SolverStatus::Optimal);
        let want = [0.4583, 0.2083, 0.3333];
        for (got, want) in d.weights.iter().zip(want) {
            assert!((got - want).abs() < 1e-3, "weights {:?}", d.weights);
        }
    }

    #[test]
    fn dk_fixed_weight_matches_direct_value() {
        // fixed w: the SOCP optimum equals Phi_{D|K}(M(w))
        let model = section2_model();
        let mut domain = WeightDomain::new(3);
        let w = [0.5, 0.3, 0.2];
        for i in 0..3 {
            domain.lower[i] = w[i];
            domain.upper[i] = Some(w[i]);
        }
        let d = solve_design(&model, &Criterion::d(), &domain);
        let want = phi_direct(&Criterion::d(), &model, &w);
        assert!((d.phi - want).abs() < 1e-6 * (1.0 + want), "{} vs {want}", d.phi);
    }

    #[test]
    fn ak_fixed_weight_matches_trace() {
        let model = section2_model();
        let mut domain = WeightDomain::new(3);
        for i in 0..3 {
            domain.lower[i] = 1.0 / 3.0;
            domain.upper[i] = Some(1.0 / 3.0);
        }
        let c = Criterion::new(
            CriterionKind::C,
            Some(Matrix::col_vec(&[1.0, 0.0])),
        )
        .unwrap();
        let d = solve_design(&model, &c, &domain);
        // c' M^{-1} c = 2 at M = I/2, so Phi_c = 1/2
        assert!((d.phi - 0.5).abs() < 1e-6, "phi {}", d.phi);
    }

    #[test]
    fn g_single_point_gives_parameter_count() {
        // one invertible block: trace of the projector is m
        let model = ObservationModel::new(
            3,
            vec![crate::model::DesignPoint {
                label: "p".into(),
                matrix: Matrix::from_rows(&[
                    vec![1.0, 0.3, 0.0],
                    vec![0.0, 1.0, -0.2],
                    vec![0.5, 0.0, 2.0],
                ]),
            }],
        )
        .unwrap();
        let mut domain = WeightDomain::new(1);
        domain.lower[0] = 1.0;
        domain.upper[0] = Some(1.0);
        let d = solve_design(&model, &Criterion::g(), &domain);
        assert!((d.phi + 3.0).abs() < 1e-6, "phi {}", d.phi);
    }

    #[test]
    fn ak_estimability_violation_reports_zero_phi() {
        // only the first point is allowed, but c needs the second coordinate
        let model = section2_model();
        let mut domain = WeightDomain::new(3);
        domain.lower[0] = 1.0;
        domain.upper[0] = Some(1.0);
        domain.upper[1] = Some(0.0);
        domain.upper[2] = Some(0.0);
        let c = Criterion::new(
            CriterionKind::C,
            Some(Matrix::col_vec(&[0.0, 1.0])),
        )
        .unwrap();
        let d = solve_design(&model, &c, &domain);
        assert_eq!(d.phi, 0.0, "status {:?} phi {}", d.status, d.phi);
        assert!(!d.numerical_failure);
        // the direct oracle agrees
        assert_eq!(phi_direct(&c, &model, &[1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn i_to_ak_identity() {
        let model = section2_model();
        let k = i_to_ak(&model);
        let kkt = k.gram();
        // (1/3) sum A_i A_i^T = I/2
        assert!(kkt.sub(&Matrix::identity(2).scaled(0.5)).max_abs() < 1e-10);
    }
}
