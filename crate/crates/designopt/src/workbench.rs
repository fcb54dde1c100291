//! Problem frontends: block-design models, replication-constrained domains,
//! the quadratic two-factor grid model with marginal and cost constraints,
//! and concurrence graphs.

use crate::linalg::Matrix;
use crate::model::{DesignPoint, ModelError, ObservationModel, Sense, WeightDomain};
use serde::{Deserialize, Serialize};

/// The three-point model on unit vectors at angles 0, 120 and 240 degrees;
/// its unconstrained D-optimal design is uniform.
pub fn section2_model() -> ObservationModel {
    let h = 3.0_f64.sqrt() / 2.0;
    ObservationModel::new(
        2,
        vec![
            DesignPoint { label: "x1".into(), matrix: Matrix::col_vec(&[1.0, 0.0]) },
            DesignPoint { label: "x2".into(), matrix: Matrix::col_vec(&[-0.5, h]) },
            DesignPoint { label: "x3".into(), matrix: Matrix::col_vec(&[-0.5, -h]) },
        ],
    )
    .expect("static model")
}

/// The side constraint used with [`section2_model`]: w1 >= w2 + 0.25.
pub fn section2_constraint(domain: &mut WeightDomain) {
    domain
        .add_constraint(vec![1.0, -1.0, 0.0], Sense::Ge, 0.25)
        .expect("three weights");
}

/// Lexicographic pair list (i, j), i < j, 0-based, for t treatments.
pub fn pair_list(t: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(t * (t - 1) / 2);
    for i in 0..t {
        for j in i + 1..t {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Two-block design model: one design point per pair (i, j), i < j, with
/// observation vector the first t-1 coordinates of e_i - e_j.
pub fn block_model(t: usize) -> ObservationModel {
    assert!(t >= 2, "need at least two treatments");
    let m = t - 1;
    let points = pair_list(t)
        .into_iter()
        .map(|(i, j)| {
            let mut v = vec![0.0; m];
            if i < m {
                v[i] = 1.0;
            }
            if j < m {
                v[j] = -1.0;
            }
            DesignPoint { label: format!("{},{}", i + 1, j + 1), matrix: Matrix::col_vec(&v) }
        })
        .collect();
    ObservationModel::new(m, points).expect("block model dimensions")
}

/// Degree (replication) row for one treatment: coefficient 1 on every pair
/// containing it.
fn degree_coeffs(t: usize, v: usize) -> Vec<f64> {
    pair_list(t)
        .iter()
        .map(|&(i, j)| if i == v || j == v { 1.0 } else { 0.0 })
        .collect()
}

/// Exact domain of size N over pairs with (almost) equireplicate rows:
/// every treatment's replication r_v lies in [floor(2N/t), ceil(2N/t)].
pub fn equireplicate_domain(t: usize, n: u64) -> WeightDomain {
    let s = t * (t - 1) / 2;
    let mut d = WeightDomain::exact(s, n);
    let lo = (2 * n / t as u64) as f64;
    let hi = (2 * n).div_ceil(t as u64) as f64;
    for v in 0..t {
        let coeffs = degree_coeffs(t, v);
        if lo == hi {
            d.add_constraint(coeffs, Sense::Eq, lo).expect("coeff length");
        } else {
            d.add_constraint(coeffs.clone(), Sense::Ge, lo).expect("coeff length");
            d.add_constraint(coeffs, Sense::Le, hi).expect("coeff length");
        }
    }
    d
}

/// One replication-number constraint: applies `sense bound` to the
/// replication of every treatment in `treatments` (0-based).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRule {
    pub treatments: Vec<usize>,
    pub sense: Sense,
    pub bound: f64,
}

/// Exact domain of size N over pairs with per-treatment replication rules.
pub fn replication_domain(t: usize, n: u64, rules: &[ReplicationRule]) -> WeightDomain {
    let s = t * (t - 1) / 2;
    let mut d = WeightDomain::exact(s, n);
    for rule in rules {
        for &v in &rule.treatments {
            assert!(v < t, "treatment index out of range");
            d.add_constraint(degree_coeffs(t, v), rule.sense, rule.bound)
                .expect("coeff length");
        }
    }
    d
}

/// The 18 levels of the first factor of the quadratic grid model.
pub fn grid_x1_levels() -> Vec<f64> {
    let mut levels = vec![94.9];
    for k in 1..=17 {
        levels.push(95.0 + 0.1 * k as f64);
    }
    levels
}

const GRID_X2_LEVELS: [f64; 3] = [0.0, 10.0, 20.0];

/// Quadratic response surface on the 18 x 3 grid:
/// A(x) = [1, x1, x2, x1^2, x2^2, x1 x2]^T, 54 design points, m = 6.
/// With `rescaled` the grid maps affinely onto [-1, 1]^2, which conditions
/// the solve; criterion values transform by the fixed matrix of
/// [`grid_rescale_transform`].
pub fn quadratic_grid_model(rescaled: bool) -> ObservationModel {
    let mut points = Vec::with_capacity(54);
    for &x1 in &grid_x1_levels() {
        for &x2 in GRID_X2_LEVELS.iter() {
            let (u1, u2) = if rescaled { ((x1 - 95.8) / 0.9, (x2 - 10.0) / 10.0) } else { (x1, x2) };
            let v = vec![1.0, u1, u2, u1 * u1, u2 * u2, u1 * u2];
            points.push(DesignPoint { label: format!("({x1},{x2})"), matrix: Matrix::col_vec(&v) });
        }
    }
    ObservationModel::new(6, points).expect("grid model dimensions")
}

/// The linear map T with A_rescaled(x) = T A_original(x): each rescaled
/// monomial expanded in the original monomial basis [1, x1, x2, x1^2, x2^2, x1 x2].
pub fn grid_rescale_transform() -> Matrix {
    let (c1, r1) = (95.8, 0.9);
    let (c2, r2) = (10.0, 10.0);
    Matrix::from_rows(&[
        vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        vec![-c1 / r1, 1.0 / r1, 0.0, 0.0, 0.0, 0.0],
        vec![-c2 / r2, 0.0, 1.0 / r2, 0.0, 0.0, 0.0],
        vec![c1 * c1 / (r1 * r1), -2.0 * c1 / (r1 * r1), 0.0, 1.0 / (r1 * r1), 0.0, 0.0],
        vec![c2 * c2 / (r2 * r2), 0.0, -2.0 * c2 / (r2 * r2), 0.0, 1.0 / (r2 * r2), 0.0],
        vec![
            c1 * c2 / (r1 * r2),
            -c2 / (r1 * r2),
            -c1 / (r1 * r2),
            0.0,
            0.0,
            1.0 / (r1 * r2),
        ],
    ])
}

/// The marginal trial counts of the sintering experiment, summing to 392.
pub const URANIUM_MARGINS: [u64; 18] =
    [1, 3, 14, 59, 52, 29, 25, 32, 36, 29, 36, 38, 12, 10, 8, 2, 3, 3];

/// Marginally constrained domain for the grid model: the 18 row sums over
/// x2 are fixed, total N = 392; integral. With `with_cost` the additive
/// budget 10 w(., 10) + 20 w(., 20) <= 1965 is added.
pub fn uranium_domain(with_cost: bool) -> WeightDomain {
    let s = 54;
    let n: u64 = URANIUM_MARGINS.iter().sum();
    let mut d = WeightDomain::exact(s, n);
    for (j, &a) in URANIUM_MARGINS.iter().enumerate() {
        let mut coeffs = vec![0.0; s];
        for l in 0..3 {
            coeffs[3 * j + l] = 1.0;
        }
        d.add_constraint(coeffs, Sense::Eq, a as f64).expect("coeff length");
    }
    if with_cost {
        let mut coeffs = vec![0.0; s];
        for j in 0..18 {
            coeffs[3 * j + 1] = 10.0;
            coeffs[3 * j + 2] = 20.0;
        }
        d.add_constraint(coeffs, Sense::Le, 1965.0).expect("coeff length");
    }
    d
}

/// Relaxed (continuous) copy of a domain: same constraints, integrality off.
pub fn relax_domain(d: &WeightDomain) -> WeightDomain {
    let mut r = d.clone();
    if let Some(t) = r.total.as_mut() {
        t.integral = false;
    }
    r
}

/// Multigraph on t nodes with integer edge multiplicities indexed by pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Multigraph {
    pub t: usize,
    /// Multiplicity per lexicographic pair (i, j), i < j.
    pub weights: Vec<u64>,
}

impl Multigraph {
    /// Laplacian with the last row and column removed, as exact integers.
    pub fn laplacian_minor(&self) -> Vec<Vec<i128>> {
        let t = self.t;
        let mut lap = vec![vec![0i128; t]; t];
        for (&(i, j), &w) in pair_list(t).iter().zip(&self.weights) {
            let w = w as i128;
            lap[i][i] += w;
            lap[j][j] += w;
            lap[i][j] -= w;
            lap[j][i] -= w;
        }
        (0..t - 1).map(|i| lap[i][..t - 1].to_vec()).collect()
    }

    pub fn num_edges(&self) -> u64 {
        self.weights.iter().sum()
    }

    pub fn degrees(&self) -> Vec<u64> {
        let mut deg = vec![0; self.t];
        for (&(i, j), &w) in pair_list(self.t).iter().zip(&self.weights) {
            deg[i] += w;
            deg[j] += w;
        }
        deg
    }
}

/// Concurrence graph of an integer two-block design.
pub fn concurrence_graph(w: &[u64], t: usize) -> Multigraph {
    assert_eq!(w.len(), t * (t - 1) / 2, "one weight per pair");
    Multigraph { t, weights: w.to_vec() }
}

/// The (t-1) x (t-1) matrix K = [sqrt(t) U, 1/sqrt(t-1) 1] with U an
/// orthonormal (Helmert) basis of the kernel of 1^T in R^(t-1); satisfies
/// K K^T = t I - 1 1^T (t-1 on the diagonal, -1 off it), the coefficient
/// matrix that makes A_K-optimality the average-pairwise-variance criterion
/// for two-block designs.
pub fn block_ak_k(t: usize) -> Matrix {
    assert!(t >= 2);
    let n = t - 1;
    let mut k = Matrix::zeros(n, n);
    // Helmert contrasts: column c (c = 1..n-1) is (1,...,1,-c,0,...)/sqrt(c(c+1))
    for c in 1..n {
        let scale = (t as f64).sqrt() / ((c * (c + 1)) as f64).sqrt();
        for r in 0..c {
            k[(r, c - 1)] = scale;
        }
        k[(c, c - 1)] = -(c as f64) * scale;
    }
    let last = 1.0 / ((t - 1) as f64).sqrt();
    for r in 0..n {
        k[(r, n - 1)] = last;
    }
    k
}

/// Generate an alternative parametrisation of the block model with
/// observation vectors U^T (e_i - e_j), U an orthonormal basis of Ker 1^T
/// in R^t. Shares its optimal designs with [`block_model`].
pub fn block_model_projected(t: usize) -> Result<ObservationModel, ModelError> {
    let n = t;
    let mut u = Matrix::zeros(n, n - 1);
    for c in 1..n {
        let scale = 1.0 / ((c * (c + 1)) as f64).sqrt();
        for r in 0..c {
            u[(r, c - 1)] = scale;
        }
        u[(c, c - 1)] = -(c as f64) * scale;
    }
    let ut = u.transpose();
    let points = pair_list(t)
        .into_iter()
        .map(|(i, j)| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v[j] = -1.0;
            DesignPoint {
                label: format!("{},{}", i + 1, j + 1),
                matrix: ut.matmul(&Matrix::col_vec(&v)),
            }
        })
        .collect();
    ObservationModel::new(n - 1, points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymPsd;

    #[test]
    fn block_model_small_cases() {
        let m3 = block_model(3);
        assert_eq!(m3.s(), 3);
        assert_eq!(m3.m(), 2);
        assert_eq!(m3.point(0).col(0), vec![1.0, -1.0]); // pair (1,2)
        assert_eq!(m3.point(1).col(0), vec![1.0, 0.0]); // pair (1,3)
        assert_eq!(m3.point(2).col(0), vec![0.0, 1.0]); // pair (2,3)

        let m2 = block_model(2);
        assert_eq!(m2.s(), 1);
        assert_eq!(m2.point(0).col(0), vec![1.0]);

        let m8 = block_model(8);
        assert_eq!(m8.s(), 28);
        assert_eq!(m8.m(), 7);
    }

    #[test]
    fn information_matrix_is_laplacian_minor() {
        let t = 5;
        let model = block_model(t);
        let w: Vec<u64> = (0..model.s() as u64).map(|i| i % 3).collect();
        let m = model.information_matrix_int(&w).unwrap();
        let g = concurrence_graph(&w, t);
        let lap = g.laplacian_minor();
        for i in 0..t - 1 {
            for j in 0..t - 1 {
                assert_eq!(m.matrix()[(i, j)], lap[i][j] as f64);
            }
        }
    }

    #[test]
    fn equireplicate_degrees() {
        let d = equireplicate_domain(10, 15);
        // 2N/t = 3 integral: every degree row is an equality at 3
        assert!(d.constraints.iter().all(|c| c.sense == Sense::Eq && c.rhs == 3.0));
        assert_eq!(d.constraints.len(), 10);

        let d = equireplicate_domain(8, 12);
        assert!(d.constraints.iter().all(|c| c.rhs == 3.0));

        let d = equireplicate_domain(9, 14);
        // 28/9: floor 3, ceil 4
        let ge: Vec<_> = d.constraints.iter().filter(|c| c.sense == Sense::Ge).collect();
        let le: Vec<_> = d.constraints.iter().filter(|c| c.sense == Sense::Le).collect();
        assert_eq!(ge.len(), 9);
        assert_eq!(le.len(), 9);
        assert!(ge.iter().all(|c| c.rhs == 3.0));
        assert!(le.iter().all(|c| c.rhs == 4.0));
    }

    #[test]
    fn grid_model_points() {
        let model = quadratic_grid_model(false);
        assert_eq!(model.s(), 54);
        assert_eq!(model.m(), 6);
        // first point is (94.9, 0)
        let a = model.point(0).col(0);
        assert_eq!(a, vec![1.0, 94.9, 0.0, 94.9 * 94.9, 0.0, 0.0]);

        let rescaled = quadratic_grid_model(true);
        let a = rescaled.point(0).col(0);
        for (got, want) in a.iter().zip([1.0, -1.0, -1.0, 1.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rescale_transform_maps_models() {
        let orig = quadratic_grid_model(false);
        let resc = quadratic_grid_model(true);
        let t = grid_rescale_transform();
        for i in 0..orig.s() {
            let mapped = t.matmul(orig.point(i));
            assert!(
                mapped.sub(resc.point(i)).max_abs() < 1e-9,
                "point {i} mismatch"
            );
        }
        assert!(t.det().abs() > 0.0);
    }

    #[test]
    fn uranium_margins_sum_and_feasibility() {
        assert_eq!(URANIUM_MARGINS.iter().sum::<u64>(), 392);
        let d = uranium_domain(false);
        // a margin-consistent integer point is feasible
        let mut w = vec![0u64; 54];
        for (j, &a) in URANIUM_MARGINS.iter().enumerate() {
            w[3 * j] = a;
        }
        assert!(d.check_integer(&w));
        assert!(!d.check_integer(&vec![0u64; 54]));
        // the all-on-level-20 point violates the cost budget
        let dc = uranium_domain(true);
        let mut w20 = vec![0u64; 54];
        for (j, &a) in URANIUM_MARGINS.iter().enumerate() {
            w20[3 * j + 2] = a;
        }
        assert!(d.check_integer(&w20));
        assert!(!dc.check_integer(&w20));
    }

    #[test]
    fn block_ak_k_matches_target_gram() {
        for t in 2..9 {
            let k = block_ak_k(t);
            let kkt = k.gram();
            for i in 0..t - 1 {
                for j in 0..t - 1 {
                    let want = if i == j { t as f64 - 1.0 } else { -1.0 };
                    assert!(
                        (kkt[(i, j)] - want).abs() < 1e-10,
                        "t={t} entry ({i},{j}) = {}",
                        kkt[(i, j)]
                    );
                }
            }
            // identity check: K K^T = sum_{i<j} A_ij A_ij^T
            let model = block_model(t);
            let gram = SymPsd::from_gram_sum(
                &model.points().iter().map(|p| (1.0, &p.matrix)).collect::<Vec<_>>(),
                t - 1,
            );
            assert!(kkt.sub(gram.matrix()).max_abs() < 1e-10);
        }
    }

    #[test]
    fn projected_model_determinant_is_t_times_tree_count() {
        // det M' = product of the t-1 nonzero Laplacian eigenvalues
        //        = t * #spanning trees = t * det M
        let t = 5;
        let sparse = block_model(t);
        let proj = block_model_projected(t).unwrap();
        for w in [vec![1, 0, 2, 1, 1, 0, 1, 3, 0, 1], vec![1u64; 10], vec![0, 1, 1, 0, 2, 1, 0, 1, 1, 0]]
        {
            let d1 = sparse.information_matrix_int(&w).unwrap().matrix().det();
            let d2 = proj.information_matrix_int(&w).unwrap().matrix().det();
            assert!(
                (d2 - t as f64 * d1).abs() <= 1e-8 * d2.abs().max(1.0),
                "{d2} vs {} * {d1}",
                t
            );
        }
    }
}
