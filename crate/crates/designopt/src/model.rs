//! Problem data: observation models, weight domains and optimality criteria.

use crate::linalg::{Matrix, SymPsd};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("observation matrix `{0}` has {1} rows, expected {2}")]
    RowMismatch(String, usize, usize),
    #[error("model needs at least one design point")]
    Empty,
    #[error("weight vector has length {0}, model has {1} design points")]
    WeightLength(usize, usize),
    #[error("weights must be nonnegative (w[{0}] = {1})")]
    NegativeWeight(usize, f64),
    #[error("coefficient vector has length {0}, domain has {1} weights")]
    CoeffLength(usize, usize),
    #[error("criterion {0:?} requires a K matrix")]
    MissingK(CriterionKind),
    #[error("criterion {0:?} does not take a K matrix")]
    UnexpectedK(CriterionKind),
    #[error("K matrix must have full column rank")]
    RankDeficientK,
    #[error("bounds inconsistent for weight {0}: lower {1} > upper {2}")]
    BadBounds(usize, f64, f64),
}

/// A design point: a label and its m x l_i observation matrix. The
/// information contributed by weight w_i at this point is `w_i A_i A_i^T`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignPoint {
    pub label: String,
    pub matrix: Matrix,
}

/// Observation model: s design points with m x l_i observation matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationModel {
    m: usize,
    points: Vec<DesignPoint>,
}

impl ObservationModel {
    pub fn new(m: usize, points: Vec<DesignPoint>) -> Result<Self, ModelError> {
        if points.is_empty() {
            return Err(ModelError::Empty);
        }
        for p in &points {
            if p.matrix.rows() != m {
                return Err(ModelError::RowMismatch(p.label.clone(), p.matrix.rows(), m));
            }
        }
        Ok(ObservationModel { m, points })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of design points s.
    pub fn s(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[DesignPoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Matrix {
        &self.points[i].matrix
    }

    /// Information matrix `M(w) = sum_i w_i A_i A_i^T`, symmetric by construction.
    pub fn information_matrix(&self, w: &[f64]) -> Result<SymPsd, ModelError> {
        if w.len() != self.s() {
            return Err(ModelError::WeightLength(w.len(), self.s()));
        }
        if let Some(i) = w.iter().position(|&x| x < 0.0) {
            return Err(ModelError::NegativeWeight(i, w[i]));
        }
        let terms: Vec<(f64, &Matrix)> =
            w.iter().zip(&self.points).map(|(&wi, p)| (wi, &p.matrix)).collect();
        Ok(SymPsd::from_gram_sum(&terms, self.m))
    }

    /// Information matrix for an integer design (counts).
    pub fn information_matrix_int(&self, n: &[u64]) -> Result<SymPsd, ModelError> {
        let w: Vec<f64> = n.iter().map(|&x| x as f64).collect();
        self.information_matrix(&w)
    }

    /// Scaled observation block `H = [sqrt(w_1) A_1, ..., sqrt(w_s) A_s]`.
    pub fn scaled_observations(&self, w: &[f64]) -> Result<Matrix, ModelError> {
        if w.len() != self.s() {
            return Err(ModelError::WeightLength(w.len(), self.s()));
        }
        let total_cols: usize = self.points.iter().map(|p| p.matrix.cols()).sum();
        let mut h = Matrix::zeros(self.m, total_cols);
        let mut c0 = 0;
        for (i, p) in self.points.iter().enumerate() {
            let sw = w[i].max(0.0).sqrt();
            for r in 0..self.m {
                for c in 0..p.matrix.cols() {
                    h[(r, c0 + c)] = sw * p.matrix[(r, c)];
                }
            }
            c0 += p.matrix.cols();
        }
        Ok(h)
    }

    /// Replace every A_i by T A_i (a reparametrization of theta).
    pub fn transformed(&self, t: &Matrix) -> Result<Self, ModelError> {
        let points = self
            .points
            .iter()
            .map(|p| DesignPoint { label: p.label.clone(), matrix: t.matmul(&p.matrix) })
            .collect();
        ObservationModel::new(t.rows(), points)
    }
}

/// Sense of a linear constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

/// A dense linear constraint `coeffs . w (sense) rhs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Total-size constraint `sum w_i = n`, optionally with integrality on w.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TotalConstraint {
    pub n: f64,
    pub integral: bool,
}

/// Feasible weight region: bounds, linear constraints and an optional
/// total-size constraint with integrality flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightDomain {
    s: usize,
    pub constraints: Vec<LinearConstraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<Option<f64>>,
    pub total: Option<TotalConstraint>,
}

impl WeightDomain {
    pub fn new(s: usize) -> Self {
        WeightDomain {
            s,
            constraints: Vec::new(),
            lower: vec![0.0; s],
            upper: vec![None; s],
            total: None,
        }
    }

    /// The probability simplex `sum w_i = 1, w >= 0`.
    pub fn simplex(s: usize) -> Self {
        let mut d = WeightDomain::new(s);
        d.total = Some(TotalConstraint { n: 1.0, integral: false });
        d
    }

    /// Exact designs of size N: `sum n_i = N`, n integer and nonnegative.
    pub fn exact(s: usize, n: u64) -> Self {
        let mut d = WeightDomain::new(s);
        d.total = Some(TotalConstraint { n: n as f64, integral: true });
        d
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn is_integral(&self) -> bool {
        self.total.map(|t| t.integral).unwrap_or(false)
    }

    pub fn add_constraint(
        &mut self,
        coeffs: Vec<f64>,
        sense: Sense,
        rhs: f64,
    ) -> Result<(), ModelError> {
        if coeffs.len() != self.s {
            return Err(ModelError::CoeffLength(coeffs.len(), self.s));
        }
        self.constraints.push(LinearConstraint { coeffs, sense, rhs });
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for c in &self.constraints {
            if c.coeffs.len() != self.s {
                return Err(ModelError::CoeffLength(c.coeffs.len(), self.s));
            }
        }
        for i in 0..self.s {
            if let Some(u) = self.upper[i] {
                if self.lower[i] > u {
                    return Err(ModelError::BadBounds(i, self.lower[i], u));
                }
            }
        }
        Ok(())
    }

    /// Finite upper bounds for every weight, derived from explicit bounds,
    /// the total constraint, and single-variable-group equalities.
    pub fn derived_upper_bounds(&self) -> Vec<f64> {
        let total = self.total.map(|t| t.n).unwrap_or(f64::INFINITY);
        let mut hi = vec![total; self.s];
        for (i, u) in self.upper.iter().enumerate() {
            if let Some(u) = u {
                hi[i] = hi[i].min(*u);
            }
        }
        for c in &self.constraints {
            // rows with nonnegative coefficients cap each member: a_i w_i <= rhs
            let monotone = c.coeffs.iter().all(|&a| a >= 0.0);
            if monotone && (c.sense == Sense::Le || c.sense == Sense::Eq) {
                for i in 0..self.s {
                    if c.coeffs[i] > 0.0 {
                        hi[i] = hi[i].min(c.rhs / c.coeffs[i]);
                    }
                }
            }
        }
        hi
    }

    /// Exact feasibility check for an integer design. Constraint rows whose
    /// coefficients are all integral are checked in integer arithmetic.
    pub fn check_integer(&self, n: &[u64]) -> bool {
        if n.len() != self.s {
            return false;
        }
        if let Some(t) = self.total {
            let sum: u64 = n.iter().sum();
            if (sum as f64 - t.n).abs() > 1e-9 {
                return false;
            }
        }
        for i in 0..self.s {
            let v = n[i] as f64;
            if v < self.lower[i] - 1e-9 {
                return false;
            }
            if let Some(u) = self.upper[i] {
                if v > u + 1e-9 {
                    return false;
                }
            }
        }
        for c in &self.constraints {
            let integral = c.coeffs.iter().all(|&a| a.fract() == 0.0) && c.rhs.fract() == 0.0;
            if integral {
                let lhs: i128 =
                    c.coeffs.iter().zip(n).map(|(&a, &x)| a as i128 * x as i128).sum();
                let rhs = c.rhs as i128;
                let ok = match c.sense {
                    Sense::Le => lhs <= rhs,
                    Sense::Eq => lhs == rhs,
                    Sense::Ge => lhs >= rhs,
                };
                if !ok {
                    return false;
                }
            } else {
                let lhs: f64 = c.coeffs.iter().zip(n).map(|(&a, &x)| a * x as f64).sum();
                let ok = match c.sense {
                    Sense::Le => lhs <= c.rhs + 1e-7,
                    Sense::Eq => (lhs - c.rhs).abs() <= 1e-7,
                    Sense::Ge => lhs >= c.rhs - 1e-7,
                };
                if !ok {
                    return false;
                }
            }
        }
        true
    }

    /// Continuous feasibility check within `tol`.
    pub fn check_continuous(&self, w: &[f64], tol: f64) -> bool {
        if w.len() != self.s {
            return false;
        }
        if let Some(t) = self.total {
            if (w.iter().sum::<f64>() - t.n).abs() > tol * t.n.max(1.0) {
                return false;
            }
        }
        for i in 0..self.s {
            if w[i] < self.lower[i] - tol {
                return false;
            }
            if let Some(u) = self.upper[i] {
                if w[i] > u + tol {
                    return false;
                }
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(w).map(|(&a, &x)| a * x).sum();
            let scale = c.rhs.abs().max(1.0);
            let ok = match c.sense {
                Sense::Le => lhs <= c.rhs + tol * scale,
                Sense::Eq => (lhs - c.rhs).abs() <= tol * scale,
                Sense::Ge => lhs >= c.rhs - tol * scale,
            };
            if !ok {
                return false;
            }
        }
        true
    }
}

/// Optimality criterion kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriterionKind {
    D,
    A,
    G,
    I,
    #[serde(rename = "c")]
    C,
    #[serde(rename = "DK")]
    Dk,
    #[serde(rename = "AK")]
    Ak,
}

/// A criterion together with its K matrix when the kind requires one
/// (D_K, A_K take m x k matrices of full column rank; c takes a column).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Criterion {
    pub kind: CriterionKind,
    pub k: Option<Matrix>,
}

impl Criterion {
    pub fn new(kind: CriterionKind, k: Option<Matrix>) -> Result<Self, ModelError> {
        match kind {
            CriterionKind::Dk | CriterionKind::Ak | CriterionKind::C => {
                let k = k.ok_or(ModelError::MissingK(kind))?;
                if kind == CriterionKind::C && k.cols() != 1 {
                    return Err(ModelError::RankDeficientK);
                }
                if crate::linalg::psd_rank(&SymPsd::from_gram_sum(
                    &[(1.0, &k.transpose())],
                    k.cols(),
                )) < k.cols()
                {
                    return Err(ModelError::RankDeficientK);
                }
                Ok(Criterion { kind, k: Some(k) })
            }
            _ => {
                if k.is_some() {
                    return Err(ModelError::UnexpectedK(kind));
                }
                Ok(Criterion { kind, k: None })
            }
        }
    }

    pub fn d() -> Self {
        Criterion { kind: CriterionKind::D, k: None }
    }

    pub fn a() -> Self {
        Criterion { kind: CriterionKind::A, k: None }
    }

    pub fn g() -> Self {
        Criterion { kind: CriterionKind::G, k: None }
    }

    pub fn i() -> Self {
        Criterion { kind: CriterionKind::I, k: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The three-point model with unit vectors at angles 0, 120 and 240 degrees.
    pub fn three_point_model() -> ObservationModel {
        let h = 3.0_f64.sqrt() / 2.0;
        ObservationModel::new(
            2,
            vec![
                DesignPoint { label: "x1".into(), matrix: Matrix::col_vec(&[1.0, 0.0]) },
                DesignPoint { label: "x2".into(), matrix: Matrix::col_vec(&[-0.5, h]) },
                DesignPoint { label: "x3".into(), matrix: Matrix::col_vec(&[-0.5, -h]) },
            ],
        )
        .unwrap()
    }

    #[test]
    fn information_matrix_three_point_uniform() {
        let model = three_point_model();
        let m = model.information_matrix(&[1.0 / 3.0; 3]).unwrap();
        let target = Matrix::identity(2).scaled(0.5);
        assert!(m.matrix().sub(&target).max_abs() < 1e-12);
    }

    #[test]
    fn information_matrix_zero_and_identity() {
        let model = three_point_model();
        let z = model.information_matrix(&[0.0; 3]).unwrap();
        assert_eq!(z.matrix().max_abs(), 0.0);

        let single = ObservationModel::new(
            3,
            vec![DesignPoint { label: "p".into(), matrix: Matrix::identity(3) }],
        )
        .unwrap();
        let m = single.information_matrix(&[1.0]).unwrap();
        assert!(m.matrix().sub(&Matrix::identity(3)).max_abs() < 1e-14);
    }

    #[test]
    fn information_matrix_rejects_bad_weights() {
        let model = three_point_model();
        assert!(model.information_matrix(&[0.5, 0.5]).is_err());
        assert!(model.information_matrix(&[0.5, 0.5, -0.1]).is_err());
    }

    #[test]
    fn integer_feasibility_checks() {
        let mut d = WeightDomain::exact(3, 5);
        d.add_constraint(vec![1.0, 1.0, 0.0], Sense::Le, 3.0).unwrap();
        assert!(d.check_integer(&[1, 2, 2]));
        assert!(!d.check_integer(&[2, 2, 1]));
        assert!(!d.check_integer(&[1, 2, 1]));
    }
}
