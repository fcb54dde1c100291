//! Ground-truth evaluation independent of the conic pipeline: direct
//! criterion formulas through pseudoinverses, exact Kirchhoff tree counts,
//! brute-force enumeration of small exact designs, equivalence-theorem
//! certificates and efficiency metrics.

use crate::linalg::{
    integer_determinant, pseudo_inverse, range_contains, sym_eigen, rank_tolerance, LinalgError,
    Matrix, SymPsd,
};
use crate::model::{Criterion, CriterionKind, ObservationModel, Sense, WeightDomain};
use crate::workbench::Multigraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration too large: {0} compositions exceed the 1e7 budget")]
    EnumerationTooLarge(f64),
    #[error("reference design has a singular information matrix")]
    SingularReference,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

const RANGE_TOL: f64 = 1e-8;

/// Direct criterion value of a weighted design. Conventions: D, A, c, D_K,
/// A_K and I return 0 when the relevant matrix is singular or the range
/// condition fails; G returns negative infinity when some prediction
/// variance is unbounded.
pub fn phi_direct(criterion: &Criterion, model: &ObservationModel, w: &[f64]) -> f64 {
    let m = match model.information_matrix(w) {
        Ok(m) => m,
        Err(_) => return 0.0,
    };
    phi_of_information(criterion, model, &m)
}

/// Same as [`phi_direct`] for an integer design given as counts.
pub fn phi_direct_int(criterion: &Criterion, model: &ObservationModel, n: &[u64]) -> f64 {
    let w: Vec<f64> = n.iter().map(|&x| x as f64).collect();
    phi_direct(criterion, model, &w)
}

pub fn phi_of_information(criterion: &Criterion, model: &ObservationModel, m: &SymPsd) -> f64 {
    let dim = m.dim();
    match criterion.kind {
        CriterionKind::D => {
            let (eigs, _) = sym_eigen(m.matrix());
            let tol = rank_tolerance(dim, eigs.last().copied().unwrap_or(0.0));
            if eigs.iter().any(|&e| e <= tol) {
                return 0.0;
            }
            (eigs.iter().map(|&e| e.ln()).sum::<f64>() / dim as f64).exp()
        }
        CriterionKind::A => {
            let (eigs, _) = sym_eigen(m.matrix());
            let tol = rank_tolerance(dim, eigs.last().copied().unwrap_or(0.0));
            if eigs.iter().any(|&e| e <= tol) {
                return 0.0;
            }
            1.0 / eigs.iter().map(|&e| 1.0 / e).sum::<f64>()
        }
        CriterionKind::Dk => {
            let k = criterion.k.as_ref().expect("D_K requires K");
            match subsystem_information(m, k) {
                Some(c) => {
                    let det = c.det();
                    if det <= 0.0 {
                        0.0
                    } else {
                        det.powf(-1.0 / k.cols() as f64)
                    }
                }
                None => 0.0,
            }
        }
        CriterionKind::Ak | CriterionKind::C => {
            let k = criterion.k.as_ref().expect("A_K requires K");
            match subsystem_information(m, k) {
                Some(c) => {
                    let tr = c.trace();
                    if tr <= 0.0 {
                        0.0
                    } else {
                        1.0 / tr
                    }
                }
                None => 0.0,
            }
        }
        CriterionKind::I => {
            // trace K^T M^+ K with K K^T = (1/s) sum A_i A_i^T
            let pinv = pseudo_inverse(m);
            let mut sum = 0.0;
            for p in model.points() {
                match point_variance(m, &pinv, &p.matrix) {
                    Some(v) => sum += v,
                    None => return 0.0,
                }
            }
            let avg = sum / model.s() as f64;
            if avg <= 0.0 {
                0.0
            } else {
                1.0 / avg
            }
        }
        CriterionKind::G => {
            let pinv = pseudo_inverse(m);
            let mut worst = f64::NEG_INFINITY;
            for p in model.points() {
                match point_variance(m, &pinv, &p.matrix) {
                    Some(v) => worst = worst.max(v),
                    None => return f64::NEG_INFINITY,
                }
            }
            -worst
        }
    }
}

/// `K^T M^+ K` when range(K) is contained in range(M), else None.
fn subsystem_information(m: &SymPsd, k: &Matrix) -> Option<Matrix> {
    if !range_contains(m, k, RANGE_TOL).ok()? {
        return None;
    }
    let pinv = pseudo_inverse(m);
    Some(k.transpose().matmul(&pinv).matmul(k))
}

/// Prediction variance trace `A_i^T M^+ A_i`, or None when A_i leaves the
/// range of M (the statistically infinite case).
fn point_variance(m: &SymPsd, pinv: &Matrix, a: &Matrix) -> Option<f64> {
    if !range_contains(m, a, RANGE_TOL).ok()? {
        return None;
    }
    Some(a.transpose().matmul(pinv).matmul(a).trace())
}

/// Exact number of spanning trees of a multigraph by the matrix-tree
/// theorem: the determinant of any Laplacian minor, in integers.
pub fn spanning_trees(g: &Multigraph) -> Result<i128, LinalgError> {
    if g.t <= 1 {
        return Ok(1);
    }
    integer_determinant(&g.laplacian_minor())
}

/// Result of exhausting all integer designs of a given size.
#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub value: f64,
    /// All optimal designs in colexicographic enumeration order.
    pub argmax: Vec<Vec<u64>>,
    pub evaluated: u64,
}

fn binomial(n: u64, k: u64) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v *= (n - i) as f64;
        v /= (i + 1) as f64;
    }
    v
}

/// Exhaustive scan of the exact designs of size N inside `domain`, ranked
/// by the direct criterion value. Enumeration is colexicographic; ties at
/// 1e-12 relative are all reported.
pub fn brute_force_exact(
    model: &ObservationModel,
    n: u64,
    domain: &WeightDomain,
    criterion: &Criterion,
) -> Result<BruteForceResult, OracleError> {
    let s = model.s();
    let count = binomial(n + s as u64 - 1, s as u64 - 1);
    if count > 1e7 {
        return Err(OracleError::EnumerationTooLarge(count));
    }
    let hi: Vec<u64> = domain
        .derived_upper_bounds()
        .iter()
        .map(|&b| if b.is_finite() { b.floor().max(0.0) as u64 } else { n })
        .collect();

    // shard on the last coordinate; the within-shard order is colex and the
    // shard results are merged in order, so the outcome is deterministic
    let last_values: Vec<u64> = (0..=n.min(hi[s - 1])).collect();
    let shard = |&last: &u64| -> BruteForceResult {
        let mut best = BruteForceResult { value: f64::NEG_INFINITY, argmax: Vec::new(), evaluated: 0 };
        let mut w = vec![0u64; s];
        w[s - 1] = last;
        scan_rest(model, domain, criterion, &mut w, 0, n - last, &hi, &mut best);
        best
    };
    #[cfg(feature = "parallel")]
    let shards: Vec<BruteForceResult> = {
        use rayon::prelude::*;
        last_values.par_iter().map(shard).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let shards: Vec<BruteForceResult> = last_values.iter().map(shard).collect();

    let mut merged = BruteForceResult { value: f64::NEG_INFINITY, argmax: Vec::new(), evaluated: 0 };
    for sh in shards {
        merged.evaluated += sh.evaluated;
        if sh.argmax.is_empty() {
            continue;
        }
        if merged.argmax.is_empty() || sh.value > merged.value + tie_tol(merged.value) {
            merged.value = sh.value;
            merged.argmax = sh.argmax;
        } else if (sh.value - merged.value).abs() <= tie_tol(merged.value) {
            merged.argmax.extend(sh.argmax);
        }
    }
    Ok(merged)
}

fn tie_tol(v: f64) -> f64 {
    1e-12 * v.abs().max(1.0)
}

fn scan_rest(
    model: &ObservationModel,
    domain: &WeightDomain,
    criterion: &Criterion,
    w: &mut Vec<u64>,
    pos: usize,
    remaining: u64,
    hi: &[u64],
    best: &mut BruteForceResult,
) {
    let s = w.len();
    if pos == s - 1 {
        if remaining != 0 {
            return;
        }
        if !domain.check_integer(w) {
            return;
        }
        best.evaluated += 1;
        let v = phi_direct_int(criterion, model, w);
        if best.argmax.is_empty() || v > best.value + tie_tol(best.value) {
            best.value = v;
            best.argmax.clear();
            best.argmax.push(w.clone());
        } else if (v - best.value).abs() <= tie_tol(best.value) {
            best.argmax.push(w.clone());
        }
        return;
    }
    // colex: lower positions vary fastest, so recurse on the count at `pos`
    for v in 0..=remaining.min(hi[pos]) {
        w[pos] = v;
        scan_rest(model, domain, criterion, w, pos + 1, remaining - v, hi, best);
    }
    w[pos] = 0;
}

/// Equivalence-theorem certificate for a simplex design: prediction
/// variances per point, the maximum, and whether the bound m is met.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub max_variance: f64,
    pub variances: Vec<f64>,
    pub support: Vec<bool>,
    /// Support points whose variance attains m within the tolerance.
    pub support_attained: Vec<bool>,
    pub pass: bool,
}

/// Check the D-optimality condition `trace A_i^T M^- A_i <= m` for all i,
/// valid over the probability simplex. Points outside the range of M count
/// as infinite variance.
pub fn kiefer_wolfowitz_certificate(
    model: &ObservationModel,
    w: &[f64],
    tol: f64,
) -> Result<Certificate, OracleError> {
    let m = model.information_matrix(w)?;
    let pinv = pseudo_inverse(&m);
    let dim = model.m() as f64;
    let mut variances = Vec::with_capacity(model.s());
    for p in model.points() {
        variances.push(point_variance(&m, &pinv, &p.matrix).unwrap_or(f64::INFINITY));
    }
    let max_variance = variances.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let support: Vec<bool> = w.iter().map(|&wi| wi > 1e-7).collect();
    let support_attained = variances
        .iter()
        .zip(&support)
        .map(|(&v, &on)| on && (v - dim).abs() <= dim * tol.max(1e-4))
        .collect();
    Ok(Certificate {
        pass: max_variance <= dim * (1.0 + tol),
        max_variance,
        variances,
        support,
        support_attained,
    })
}

/// Efficiency of `w` against a reference design, per criterion. For G the
/// ratio inverts so that values are in [0, 1] when the reference is optimal.
pub fn efficiency(
    criterion: &Criterion,
    model: &ObservationModel,
    w: &[f64],
    w_ref: &[f64],
) -> Result<f64, OracleError> {
    let phi_w = phi_direct(criterion, model, w);
    let phi_ref = phi_direct(criterion, model, w_ref);
    match criterion.kind {
        CriterionKind::G => {
            if phi_ref == f64::NEG_INFINITY {
                return Err(OracleError::SingularReference);
            }
            if phi_w == f64::NEG_INFINITY {
                return Ok(0.0);
            }
            Ok(phi_ref / phi_w)
        }
        _ => {
            if phi_ref <= 0.0 {
                return Err(OracleError::SingularReference);
            }
            Ok(phi_w / phi_ref)
        }
    }
}

/// The earlier simplex-only SOCP formulation of D-optimality, kept as a
/// counterexample fixture: valid on the probability simplex, provably
/// suboptimal once extra linear constraints enter. Returns the weights it
/// finds on the three-point model, optionally with w1 >= w2 + 0.25.
pub fn former_socp_fixture(constrained: bool) -> Vec<f64> {
    use crate::conic::ConicProgram;
    use crate::solver::{solve, SolverConfig};
    use crate::workbench::section2_model;

    let model = section2_model();
    let s = model.s();
    let m = model.m();
    let mut p = ConicProgram::new();
    let w = p.add_vars("w", s);
    let widx: Vec<usize> = w.indices().collect();
    p.add_nonneg(&widx).unwrap();
    p.add_linear(&vec![1.0; s], &widx, 1.0, Sense::Eq).unwrap();
    if constrained {
        p.add_linear(&[1.0, -1.0], &[w.index(0), w.index(1)], 0.25, Sense::Ge).unwrap();
    }
    // Z_i in R^{l_i x m}, sum_i A_i Z_i = L lower triangular
    let zs: Vec<_> = (0..s)
        .map(|i| p.add_vars(&format!("Z{i}"), model.point(i).cols() * m))
        .collect();
    let l = p.add_vars("L", m * m);
    for r in 0..m {
        for c in 0..m {
            // row (r, c): sum_i (A_i Z_i)_{rc} - L_{rc} = 0
            let mut cols = vec![l.index(r * m + c)];
            let mut vals = vec![-1.0];
            for i in 0..s {
                let a = model.point(i);
                for q in 0..a.cols() {
                    // Z_i stored row-major (l_i x m): entry (q, c)
                    cols.push(zs[i].index(q * m + c));
                    vals.push(a[(r, q)]);
                }
            }
            p.add_eq(cols, vals, 0.0).unwrap();
        }
    }
    for r in 0..m {
        for c in r + 1..m {
            p.add_eq(vec![l.index(r * m + c)], vec![1.0], 0.0).unwrap();
        }
    }
    // || vec Z_i || <= sqrt(m) w_i via an auxiliary head variable
    let sqrt_m = (m as f64).sqrt();
    for i in 0..s {
        let head = p.add_vars(&format!("q{i}"), 1).scalar();
        p.add_eq(vec![head, w.index(i)], vec![1.0, -sqrt_m], 0.0).unwrap();
        let tail: Vec<usize> = zs[i].indices().collect();
        p.add_soc(head, &tail).unwrap();
    }
    // maximize the geometric mean of the diagonal of L
    let diag = p.add_vars("diag", m);
    for r in 0..m {
        p.add_eq(vec![diag.index(r), l.index(r * m + r)], vec![1.0, -1.0], 0.0).unwrap();
    }
    let t = p.add_vars("t", 1).scalar();
    p.set_objective(t, 1.0);
    p.add_geomean_hypograph(&diag, t).unwrap();

    let sol = solve(&p, &SolverConfig::default());
    widx.iter().map(|&i| sol.x[i].max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Criterion, CriterionKind};
    use crate::workbench::{block_model, concurrence_graph, section2_model};

    #[test]
    fn phi_d_of_uniform_three_point() {
        let model = section2_model();
        let w = [1.0 / 3.0; 3];
        let phi = phi_direct(&Criterion::d(), &model, &w);
        assert!((phi - 0.5).abs() < 1e-12);
        // singular M gives zero by convention
        let phi0 = phi_direct(&Criterion::d(), &model, &[1.0, 0.0, 0.0]);
        assert_eq!(phi0, 0.0);
    }

    #[test]
    fn phi_c_of_uniform_three_point() {
        let model = section2_model();
        let c = Criterion::new(
            CriterionKind::C,
            Some(Matrix::col_vec(&[1.0, 0.0])),
        )
        .unwrap();
        let phi = phi_direct(&c, &model, &[1.0 / 3.0; 3]);
        assert!((phi - 0.5).abs() < 1e-12, "c'M^-1c = 2 so phi = 1/2, got {phi}");
    }

    #[test]
    fn spanning_tree_counts() {
        // K4: Cayley's formula gives 4^2 = 16
        let k4 = concurrence_graph(&[1; 6], 4);
        assert_eq!(spanning_trees(&k4).unwrap(), 16);
        // disconnected graph has no spanning tree
        let g = concurrence_graph(&[1, 0, 0, 0, 0, 1], 4); // edges (1,2), (3,4)
        assert_eq!(spanning_trees(&g).unwrap(), 0);
        let empty = concurrence_graph(&[0; 6], 4);
        assert_eq!(spanning_trees(&empty).unwrap(), 0);
    }

    #[test]
    fn kirchhoff_identity_for_integer_designs() {
        let t = 5;
        let model = block_model(t);
        let w: Vec<u64> = vec![2, 1, 0, 1, 1, 0, 1, 0, 1, 2];
        let phi = phi_direct_int(&Criterion::d(), &model, &w);
        let trees = spanning_trees(&concurrence_graph(&w, t)).unwrap();
        let det = phi.powi(model.m() as i32);
        assert!((det - trees as f64).abs() < 1e-6 * (trees as f64).max(1.0));
    }

    #[test]
    fn brute_force_small_block_design() {
        // t=4, N=4: spanning-tree-maximal graphs on 4 nodes with 4 edges are
        // the 4-cycles, each with 4 spanning trees
        let model = block_model(4);
        let domain = WeightDomain::exact(6, 4);
        let res = brute_force_exact(&model, 4, &domain, &Criterion::d()).unwrap();
        let trees = res.value.powi(3).round() as i64;
        assert_eq!(trees, 4);
        for w in &res.argmax {
            let g = concurrence_graph(w, 4);
            assert_eq!(spanning_trees(&g).unwrap(), 4);
            assert_eq!(g.num_edges(), 4);
        }
        // all three 4-cycles on K4 appear
        assert_eq!(res.argmax.len(), 3);
    }

    #[test]
    fn brute_force_zero_size() {
        let model = section2_model();
        let domain = WeightDomain::exact(3, 0);
        let res = brute_force_exact(&model, 0, &domain, &Criterion::d()).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.argmax, vec![vec![0, 0, 0]]);
    }

    #[test]
    fn kw_certificate_on_three_point() {
        let model = section2_model();
        let cert = kiefer_wolfowitz_certificate(&model, &[1.0 / 3.0; 3], 1e-5).unwrap();
        assert!(cert.pass);
        for v in &cert.variances {
            assert!((v - 2.0).abs() < 1e-9);
        }
        assert!(cert.support_attained.iter().all(|&b| b));
        // degenerate design: point 2 leaves the range, variance infinite
        let cert = kiefer_wolfowitz_certificate(&model, &[1.0, 0.0, 0.0], 1e-5).unwrap();
        assert!(!cert.pass);
        assert!(cert.max_variance.is_infinite());
    }

    #[test]
    fn efficiency_identity_and_bounds() {
        let model = section2_model();
        let w = [0.5, 0.25, 0.25];
        let e = efficiency(&Criterion::d(), &model, &w, &w).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        let eopt =
            efficiency(&Criterion::d(), &model, &w, &[1.0 / 3.0; 3]).unwrap();
        assert!(eopt < 1.0);
        assert!(efficiency(&Criterion::d(), &model, &w, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn former_socp_unconstrained_recovers_uniform() {
        let w = former_socp_fixture(false);
        for wi in &w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-5, "w = {w:?}");
        }
    }
}
