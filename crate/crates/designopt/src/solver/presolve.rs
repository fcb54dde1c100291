//! Conversion of a [`ConicProgram`] to the internal solver form
//!
//! ```text
//!   minimize c^T x   s.t.  A x = b,   G x + s = h,   s in K,
//! ```
//!
//! plus a substitution presolve. Cone memberships over variable slices
//! become selection rows of G; every variable that appears in exactly one
//! equality is then eliminated by solving that row for it, which folds the
//! auxiliary variables of rotated-cone and slack encodings directly into
//! affine cone rows. Eliminations are recorded so primal and dual solutions
//! of the original program can be reconstructed exactly.

use super::cones::ConeBlock;
use crate::conic::{ConeSpec, ConicProgram};

/// Sparse row over variable indices.
#[derive(Debug, Clone, Default)]
pub struct SpRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SpRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.cols.iter().zip(&self.vals).map(|(&c, &v)| v * x[c]).sum()
    }

    pub fn scatter_add(&self, scale: f64, out: &mut [f64]) {
        for (&c, &v) in self.cols.iter().zip(&self.vals) {
            out[c] += scale * v;
        }
    }

    fn normalize(&mut self) {
        let mut pairs: Vec<(usize, f64)> =
            self.cols.iter().copied().zip(self.vals.iter().copied()).collect();
        pairs.sort_by_key(|p| p.0);
        let mut cols = Vec::with_capacity(pairs.len());
        let mut vals: Vec<f64> = Vec::with_capacity(pairs.len());
        for (c, v) in pairs {
            if let Some(&last) = cols.last() {
                if last == c {
                    *vals.last_mut().unwrap() += v;
                    continue;
                }
            }
            cols.push(c);
            vals.push(v);
        }
        let mut i = 0;
        while i < cols.len() {
            if vals[i] == 0.0 {
                cols.remove(i);
                vals.remove(i);
            } else {
                i += 1;
            }
        }
        self.cols = cols;
        self.vals = vals;
    }

    fn coeff(&self, var: usize) -> Option<f64> {
        self.cols.iter().position(|&c| c == var).map(|p| self.vals[p])
    }

    fn remove(&mut self, var: usize) -> Option<f64> {
        if let Some(p) = self.cols.iter().position(|&c| c == var) {
            self.cols.remove(p);
            Some(self.vals.remove(p))
        } else {
            None
        }
    }
}

/// One recorded substitution: variable `var` was defined by equality `row`
/// (original indices) with pivot coefficient `coef`.
#[derive(Debug, Clone)]
struct Elim {
    var: usize,
    row: usize,
    coef: f64,
}

/// Reduced problem in compressed variable indices, plus the bookkeeping
/// needed to reconstruct original-space solutions.
pub struct Internal {
    pub nx: usize,
    pub c: Vec<f64>,
    /// Constant folded out of the (minimized) objective by substitutions.
    pub obj_offset: f64,
    pub a: Vec<SpRow>,
    pub b: Vec<f64>,
    pub g: Vec<SpRow>,
    pub h: Vec<f64>,
    pub blocks: Vec<ConeBlock>,
    post: Post,
}

struct Post {
    orig_nvars: usize,
    orig_neq: usize,
    keep: Vec<usize>,
    elims: Vec<Elim>,
    kept_rows: Vec<usize>,
    cone_coord_var: Vec<usize>,
    c_orig: Vec<f64>,
    orig_rows: Vec<SpRow>,
    orig_rhs: Vec<f64>,
    var_eq_rows: Vec<Vec<usize>>,
}

pub enum PresolveOutcome {
    Reduced(Internal),
    /// An equality row reduced to `0 = rhs` with nonzero rhs.
    TriviallyInfeasible { row: usize, rhs: f64 },
    /// A variable with nonzero objective appears in no constraint.
    Unbounded,
}

pub fn presolve(p: &ConicProgram) -> PresolveOutcome {
    let nv = p.nvars();
    // internal objective is minimized
    let mut c: Vec<f64> = p.objective().iter().map(|&v| -v).collect();
    let c_orig = c.clone();

    let mut rows: Vec<SpRow> = Vec::with_capacity(p.eq_rows().len());
    let mut rhs: Vec<f64> = Vec::with_capacity(p.eq_rows().len());
    for r in p.eq_rows() {
        let mut row = SpRow { cols: r.cols.clone(), vals: r.vals.clone() };
        row.normalize();
        rows.push(row);
        rhs.push(r.rhs);
    }

    // cone selection rows: s = x_slice, i.e. -x + s = 0
    let mut g: Vec<SpRow> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    let mut blocks: Vec<ConeBlock> = Vec::new();
    let mut cone_coord_var: Vec<usize> = Vec::new();
    for cone in p.cones() {
        match cone {
            ConeSpec::NonNegative(vars) => {
                if vars.is_empty() {
                    continue;
                }
                let start = g.len();
                for &v in vars {
                    g.push(SpRow { cols: vec![v], vals: vec![-1.0] });
                    h.push(0.0);
                    cone_coord_var.push(v);
                }
                blocks.push(ConeBlock::NonNeg { start, len: vars.len() });
            }
            ConeSpec::SecondOrder { head, tail } => {
                let start = g.len();
                g.push(SpRow { cols: vec![*head], vals: vec![-1.0] });
                h.push(0.0);
                cone_coord_var.push(*head);
                for &v in tail {
                    g.push(SpRow { cols: vec![v], vals: vec![-1.0] });
                    h.push(0.0);
                    cone_coord_var.push(v);
                }
                if tail.is_empty() {
                    blocks.push(ConeBlock::NonNeg { start, len: 1 });
                } else {
                    blocks.push(ConeBlock::Soc { start, dim: 1 + tail.len() });
                }
            }
        }
    }

    let nrows = rows.len();
    let mut active = vec![true; nrows];
    let mut eliminated = vec![false; nv];
    let mut elims: Vec<Elim> = Vec::new();
    let mut obj_offset = 0.0;

    let mut var_eq_rows: Vec<Vec<usize>> = vec![Vec::new(); nv];
    let mut var_eq_count = vec![0usize; nv];
    for (r, row) in rows.iter().enumerate() {
        for &cvar in &row.cols {
            var_eq_rows[cvar].push(r);
            var_eq_count[cvar] += 1;
        }
    }
    let mut var_g_rows: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (r, row) in g.iter().enumerate() {
        for &cvar in &row.cols {
            var_g_rows[cvar].push(r);
        }
    }

    for (r, row) in rows.iter().enumerate() {
        if row.cols.is_empty() && rhs[r].abs() > 1e-9 {
            return PresolveOutcome::TriviallyInfeasible { row: r, rhs: rhs[r] };
        }
        if row.cols.is_empty() {
            active[r] = false;
        }
    }

    loop {
        let mut changed = false;
        for r in 0..nrows {
            if !active[r] {
                continue;
            }
            let row_max = rows[r].vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let mut pick: Option<(usize, f64)> = None;
            for (&cvar, &val) in rows[r].cols.iter().zip(&rows[r].vals) {
                if eliminated[cvar] || var_eq_count[cvar] != 1 {
                    continue;
                }
                if val.abs() < 1e-12 || val.abs() < 0.01 * row_max {
                    continue;
                }
                if pick.map_or(true, |(_, pv)| val.abs() > pv.abs()) {
                    pick = Some((cvar, val));
                }
            }
            let Some((var, coef)) = pick else { continue };

            // x_var = (rhs - sum_{other} a_c x_c) / coef
            let expr_const = rhs[r] / coef;
            let expr: Vec<(usize, f64)> = rows[r]
                .cols
                .iter()
                .zip(&rows[r].vals)
                .filter(|(&cvar, _)| cvar != var)
                .map(|(&cvar, &val)| (cvar, -val / coef))
                .collect();

            let touched = std::mem::take(&mut var_g_rows[var]);
            for &gr in &touched {
                let Some(beta) = g[gr].remove(var) else { continue };
                h[gr] -= beta * expr_const;
                for &(evar, eval) in &expr {
                    g[gr].cols.push(evar);
                    g[gr].vals.push(beta * eval);
                    var_g_rows[evar].push(gr);
                }
                g[gr].normalize();
            }
            if c[var] != 0.0 {
                let cj = c[var];
                obj_offset += cj * expr_const;
                for &(evar, eval) in &expr {
                    c[evar] += cj * eval;
                }
                c[var] = 0.0;
            }
            for &cvar in &rows[r].cols {
                if cvar != var {
                    var_eq_count[cvar] -= 1;
                }
            }
            var_eq_count[var] = 0;
            active[r] = false;
            eliminated[var] = true;
            elims.push(Elim { var, row: r, coef });
            changed = true;
        }
        if !changed {
            break;
        }
    }

    // variables left untouched by every row, cone, and the objective
    let mut in_g = vec![false; nv];
    for row in &g {
        for &cvar in &row.cols {
            in_g[cvar] = true;
        }
    }
    let mut in_a = vec![false; nv];
    for (r, row) in rows.iter().enumerate() {
        if active[r] {
            for &cvar in &row.cols {
                in_a[cvar] = true;
            }
        }
    }
    let c_scale = c_orig.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let mut keep: Vec<usize> = Vec::new();
    let mut old_to_new = vec![usize::MAX; nv];
    for v in 0..nv {
        if eliminated[v] {
            continue;
        }
        if !in_g[v] && !in_a[v] {
            // folding leaves 1e-17-level dust on coefficients that cancel
            if c[v].abs() > 1e-9 * c_scale {
                return PresolveOutcome::Unbounded;
            }
            continue; // unreferenced, pinned to zero in postsolve
        }
        old_to_new[v] = keep.len();
        keep.push(v);
    }

    let remap = |row: &SpRow| SpRow {
        cols: row.cols.iter().map(|&cvar| old_to_new[cvar]).collect(),
        vals: row.vals.clone(),
    };
    let mut a_int = Vec::new();
    let mut b_int = Vec::new();
    let mut kept_rows = Vec::new();
    for r in 0..nrows {
        if active[r] {
            a_int.push(remap(&rows[r]));
            b_int.push(rhs[r]);
            kept_rows.push(r);
        }
    }
    let g_int: Vec<SpRow> = g.iter().map(remap).collect();
    let c_int: Vec<f64> = keep.iter().map(|&v| c[v]).collect();

    PresolveOutcome::Reduced(Internal {
        nx: keep.len(),
        c: c_int,
        obj_offset,
        a: a_int,
        b: b_int,
        g: g_int,
        h,
        blocks,
        post: Post {
            orig_nvars: nv,
            orig_neq: nrows,
            keep,
            elims,
            kept_rows,
            cone_coord_var,
            c_orig,
            orig_rows: rows,
            orig_rhs: rhs,
            var_eq_rows,
        },
    })
}

/// Diagonal Ruiz equilibration factors for the internal problem.
pub struct Scaling {
    pub row_a: Vec<f64>,
    pub row_g: Vec<f64>,
    pub col: Vec<f64>,
    pub cost: f64,
}

/// Ruiz equilibration of the stacked constraint matrix [A; G], scaling
/// rows, columns and the objective toward unit magnitude. Rows of one
/// second-order cone block share a common factor so cone membership is
/// preserved. The data in `int` is scaled in place.
pub fn equilibrate(int: &mut Internal) -> Scaling {
    let nx = int.nx;
    let na = int.a.len();
    let ng = int.g.len();
    let mut row_a = vec![1.0; na];
    let mut row_g = vec![1.0; ng];
    let mut col = vec![1.0; nx];
    let clamp = |v: f64| v.clamp(1e-8, 1e8);
    for _round in 0..10 {
        let mut col_max = vec![0.0_f64; nx];
        let advance = |rows: &[SpRow], scale: &mut [f64], block_of: &dyn Fn(usize) -> usize, block_max: &mut Vec<f64>| {
            for (i, row) in rows.iter().enumerate() {
                let mut m = 0.0_f64;
                for (&c, &v) in row.cols.iter().zip(&row.vals) {
                    m = m.max((v * scale[i] * col[c]).abs());
                }
                let b = block_of(i);
                block_max[b] = block_max[b].max(m);
            }
        };
        // equality rows scale independently
        let mut amax = vec![0.0; na];
        advance(&int.a, &mut row_a, &|i| i, &mut amax);
        // cone rows grouped per block
        let mut block_of_row = vec![0usize; ng];
        for (bi, b) in int.blocks.iter().enumerate() {
            for r in b.start()..b.start() + b.dim() {
                block_of_row[r] = bi;
            }
        }
        let nb = int.blocks.len();
        let mut gmax = vec![0.0; nb];
        advance(&int.g, &mut row_g, &|i| block_of_row[i], &mut gmax);
        let mut done = true;
        for i in 0..na {
            if amax[i] > 0.0 {
                let f = clamp(1.0 / amax[i].sqrt());
                if (f - 1.0).abs() > 1e-3 {
                    done = false;
                }
                row_a[i] *= f;
            }
        }
        for (bi, b) in int.blocks.iter().enumerate() {
            if gmax[bi] > 0.0 {
                let f = clamp(1.0 / gmax[bi].sqrt());
                if (f - 1.0).abs() > 1e-3 {
                    done = false;
                }
                for r in b.start()..b.start() + b.dim() {
                    row_g[r] *= f;
                }
            }
        }
        for (i, row) in int.a.iter().enumerate() {
            for (&c, &v) in row.cols.iter().zip(&row.vals) {
                col_max[c] = col_max[c].max((v * row_a[i] * col[c]).abs());
            }
        }
        for (i, row) in int.g.iter().enumerate() {
            for (&c, &v) in row.cols.iter().zip(&row.vals) {
                col_max[c] = col_max[c].max((v * row_g[i] * col[c]).abs());
            }
        }
        for j in 0..nx {
            if col_max[j] > 0.0 {
                let f = clamp(1.0 / col_max[j].sqrt());
                if (f - 1.0).abs() > 1e-3 {
                    done = false;
                }
                col[j] *= f;
            }
        }
        if done {
            break;
        }
    }
    // apply to the data
    for (i, row) in int.a.iter_mut().enumerate() {
        for (k, &c) in row.cols.iter().enumerate() {
            row.vals[k] *= row_a[i] * col[c];
        }
        int.b[i] *= row_a[i];
    }
    for (i, row) in int.g.iter_mut().enumerate() {
        for (k, &c) in row.cols.iter().enumerate() {
            row.vals[k] *= row_g[i] * col[c];
        }
        int.h[i] *= row_g[i];
    }
    for j in 0..nx {
        int.c[j] *= col[j];
    }
    let cmax = int.c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cost = if cmax > 0.0 { 1.0 / cmax.max(1e-8).min(1e8) } else { 1.0 };
    for v in int.c.iter_mut() {
        *v *= cost;
    }
    Scaling { row_a, row_g, col, cost }
}

impl Internal {
    #[cfg(test)]
    pub fn orig_nvars(&self) -> usize {
        self.post.orig_nvars
    }

    /// Recover the original primal vector from the reduced one. Eliminated
    /// variables are rebuilt from their defining rows in reverse order.
    pub fn recover_x(&self, x_red: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.post.orig_nvars];
        for (new, &old) in self.post.keep.iter().enumerate() {
            x[old] = x_red[new];
        }
        for e in self.post.elims.iter().rev() {
            let row = &self.post.orig_rows[e.row];
            let mut acc = self.post.orig_rhs[e.row];
            for (&cvar, &val) in row.cols.iter().zip(&row.vals) {
                if cvar != e.var {
                    acc -= val * x[cvar];
                }
            }
            x[e.var] = acc / e.coef;
        }
        x
    }

    /// Recover equality duals for the original rows. `z` are the cone duals
    /// of the reduced problem and `use_objective` distinguishes optimal
    /// duals (stationarity with c) from infeasibility certificates (c = 0).
    pub fn recover_duals(&self, y_red: &[f64], z: &[f64], use_objective: bool) -> Vec<f64> {
        let mut y = vec![0.0; self.post.orig_neq];
        for (m, &r) in self.post.kept_rows.iter().enumerate() {
            y[r] = y_red[m];
        }
        // gradient of the cone rows in original variables: coordinate i of
        // the original G is the selection row -e_{var(i)}
        let mut gz = vec![0.0; self.post.orig_nvars];
        for (i, &v) in self.post.cone_coord_var.iter().enumerate() {
            gz[v] -= z[i];
        }
        for e in &self.post.elims {
            let cj = if use_objective { self.post.c_orig[e.var] } else { 0.0 };
            let mut num = cj + gz[e.var];
            for &r in &self.post.var_eq_rows[e.var] {
                if r == e.row {
                    continue;
                }
                if let Some(a) = self.post.orig_rows[r].coeff(e.var) {
                    num += a * y[r];
                }
            }
            y[e.row] = -num / e.coef;
        }
        y
    }

    pub fn cone_dim(&self) -> usize {
        self.g.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ConicProgram;
    use crate::model::Sense;

    #[test]
    fn rotated_cone_aux_rows_are_folded_away() {
        let mut p = ConicProgram::new();
        let v = p.add_vars("v", 3);
        p.add_rotated_cone(&[v.index(0)], v.index(1), v.index(2)).unwrap();
        p.add_linear(&[1.0, 1.0], &[v.index(1), v.index(2)], 2.0, Sense::Eq).unwrap();
        match presolve(&p) {
            PresolveOutcome::Reduced(int) => {
                // the three defining rows of the expanded cone are gone and
                // at most the user equality survives
                assert!(int.a.len() <= 1, "{} eq rows left", int.a.len());
                assert!(int.nx <= 3);
                assert_eq!(int.blocks.len(), 1);
                assert_eq!(int.cone_dim(), 3);
            }
            _ => panic!("expected reduction"),
        }
    }

    #[test]
    fn trivially_infeasible_row_detected() {
        let mut p = ConicProgram::new();
        let _v = p.add_vars("v", 1);
        p.add_eq(vec![], vec![], 1.0).unwrap();
        assert!(matches!(presolve(&p), PresolveOutcome::TriviallyInfeasible { .. }));
    }

    #[test]
    fn primal_recovery_satisfies_all_original_rows() {
        let mut p = ConicProgram::new();
        let v = p.add_vars("v", 3);
        p.add_rotated_cone(&[v.index(0)], v.index(1), v.index(2)).unwrap();
        p.add_linear(&[1.0, 2.0], &[v.index(0), v.index(1)], 5.0, Sense::Eq).unwrap();
        let rows: Vec<(Vec<usize>, Vec<f64>, f64)> =
            p.eq_rows().iter().map(|r| (r.cols.clone(), r.vals.clone(), r.rhs)).collect();
        let PresolveOutcome::Reduced(int) = presolve(&p) else { panic!() };
        assert!(int.a.is_empty(), "every equality is a definition here");
        let x_red: Vec<f64> = (0..int.nx).map(|i| 0.37 * (i as f64 + 1.0)).collect();
        let x = int.recover_x(&x_red);
        assert_eq!(x.len(), int.orig_nvars());
        for (cols, vals, rhs) in rows {
            let lhs: f64 = cols.iter().zip(&vals).map(|(&c, &v)| v * x[c]).sum();
            assert!((lhs - rhs).abs() < 1e-12, "row violated: {lhs} vs {rhs}");
        }
    }
}
