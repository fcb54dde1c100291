//! In-memory second-order cone programs.
//!
//! A [`ConicProgram`] is kept in normalized form: a linear objective to
//! maximize, sparse linear equalities, and cone memberships over slices of
//! the variable vector. Inequalities enter through nonnegative slacks, and
//! rotated cones / geometric means are expanded into standard second-order
//! cones at build time, so a solver only ever sees two cone types.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConeError {
    #[error("variable index {0} out of range ({1} variables)")]
    BadVariable(usize, usize),
    #[error("handle `{0}` expected {1} variables, got {2}")]
    HandleShape(String, usize, usize),
    #[error("coefficient/variable lists differ in length ({0} vs {1})")]
    CoeffLength(usize, usize),
    #[error("geometric mean over zero variables")]
    EmptyGeomean,
}

/// A labelled contiguous range of program variables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarHandle {
    start: usize,
    len: usize,
    label: String,
}

impl VarHandle {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Index of the i-th variable in the range.
    pub fn index(&self, i: usize) -> usize {
        debug_assert!(i < self.len);
        self.start + i
    }

    /// The sole variable of a scalar handle.
    pub fn scalar(&self) -> usize {
        debug_assert_eq!(self.len, 1);
        self.start
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Cone membership over variable indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConeSpec {
    /// Each listed variable is nonnegative.
    NonNegative(Vec<usize>),
    /// `|| tail || <= head`.
    SecondOrder { head: usize, tail: Vec<usize> },
}

/// Sparse equality row `sum vals[k] * x[cols[k]] = rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: f64,
}

/// Linear constraint sense for [`ConicProgram::add_linear`].
pub use crate::model::Sense;

/// A second-order cone program in normalized form; the objective is maximized.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConicProgram {
    nvars: usize,
    objective: Vec<f64>,
    eq: Vec<EqRow>,
    cones: Vec<ConeSpec>,
    labels: Vec<(String, usize, usize)>,
}

impl ConicProgram {
    pub fn new() -> Self {
        ConicProgram::default()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn eq_rows(&self) -> &[EqRow] {
        &self.eq
    }

    pub fn cones(&self) -> &[ConeSpec] {
        &self.cones
    }

    /// Append `n` fresh variables under a label.
    pub fn add_vars(&mut self, label: &str, n: usize) -> VarHandle {
        let start = self.nvars;
        self.nvars += n;
        self.objective.resize(self.nvars, 0.0);
        self.labels.push((label.to_string(), start, n));
        VarHandle { start, len: n, label: label.to_string() }
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        assert!(var < self.nvars, "objective variable out of range");
        self.objective[var] = coeff;
    }

    fn check_vars(&self, vars: &[usize]) -> Result<(), ConeError> {
        for &v in vars {
            if v >= self.nvars {
                return Err(ConeError::BadVariable(v, self.nvars));
            }
        }
        Ok(())
    }

    /// Raw equality row; returns the row id.
    pub fn add_eq(&mut self, cols: Vec<usize>, vals: Vec<f64>, rhs: f64) -> Result<usize, ConeError> {
        if cols.len() != vals.len() {
            return Err(ConeError::CoeffLength(cols.len(), vals.len()));
        }
        self.check_vars(&cols)?;
        self.eq.push(EqRow { cols, vals, rhs });
        Ok(self.eq.len() - 1)
    }

    /// Linear constraint over the given variables; inequalities get a
    /// nonnegative slack. Returns the id of the resulting equality row.
    pub fn add_linear(
        &mut self,
        coeffs: &[f64],
        vars: &[usize],
        rhs: f64,
        sense: Sense,
    ) -> Result<usize, ConeError> {
        if coeffs.len() != vars.len() {
            return Err(ConeError::CoeffLength(coeffs.len(), vars.len()));
        }
        self.check_vars(vars)?;
        let mut cols = vars.to_vec();
        let mut vals = coeffs.to_vec();
        match sense {
            Sense::Eq => {}
            Sense::Le => {
                let slack = self.add_vars("slack", 1);
                self.add_nonneg(&[slack.scalar()])?;
                cols.push(slack.scalar());
                vals.push(1.0);
            }
            Sense::Ge => {
                let slack = self.add_vars("slack", 1);
                self.add_nonneg(&[slack.scalar()])?;
                cols.push(slack.scalar());
                vals.push(-1.0);
            }
        }
        self.eq.push(EqRow { cols, vals, rhs });
        Ok(self.eq.len() - 1)
    }

    /// Nonnegativity cone over the listed variables; returns the cone id.
    pub fn add_nonneg(&mut self, vars: &[usize]) -> Result<usize, ConeError> {
        self.check_vars(vars)?;
        self.cones.push(ConeSpec::NonNegative(vars.to_vec()));
        Ok(self.cones.len() - 1)
    }

    /// Standard second-order cone `||tail|| <= head`; returns the cone id.
    pub fn add_soc(&mut self, head: usize, tail: &[usize]) -> Result<usize, ConeError> {
        self.check_vars(&[head])?;
        self.check_vars(tail)?;
        self.cones.push(ConeSpec::SecondOrder { head, tail: tail.to_vec() });
        Ok(self.cones.len() - 1)
    }

    /// Rotated cone `||x||^2 <= t * u, t >= 0, u >= 0` expanded into the
    /// standard cone `||(2x, t - u)|| <= t + u` with three defining
    /// equalities on fresh auxiliary variables. Returns the cone id.
    pub fn add_rotated_cone(&mut self, x: &[usize], t: usize, u: usize) -> Result<usize, ConeError> {
        self.check_vars(x)?;
        self.check_vars(&[t, u])?;
        let aux = self.add_vars("rot", 2 + x.len());
        let head = aux.index(0);
        let diff = aux.index(1);
        // head = t + u, diff = t - u, aux_i = 2 x_i
        self.eq.push(EqRow { cols: vec![head, t, u], vals: vec![1.0, -1.0, -1.0], rhs: 0.0 });
        self.eq.push(EqRow { cols: vec![diff, t, u], vals: vec![1.0, -1.0, 1.0], rhs: 0.0 });
        let mut tail = vec![diff];
        for (i, &xi) in x.iter().enumerate() {
            let ai = aux.index(2 + i);
            self.eq.push(EqRow { cols: vec![ai, xi], vals: vec![1.0, -2.0], rhs: 0.0 });
            tail.push(ai);
        }
        self.cones.push(ConeSpec::SecondOrder { head, tail });
        Ok(self.cones.len() - 1)
    }

    /// Hypograph of the geometric mean: `t <= (prod_i x_i)^(1/n)` for
    /// nonnegative x, built as a binary tree of rotated cones. For n not a
    /// power of two the factor list is padded with copies of t itself, so
    /// `t^(2^L) <= prod x_i * t^(2^L - n)`. Returns the created cone ids.
    pub fn add_geomean_hypograph(
        &mut self,
        x: &VarHandle,
        t: usize,
    ) -> Result<Vec<usize>, ConeError> {
        if x.is_empty() {
            return Err(ConeError::EmptyGeomean);
        }
        self.check_vars(&[t])?;
        let n = x.len();
        if n == 1 {
            let row = self.add_linear(&[1.0, -1.0], &[t, x.index(0)], 0.0, Sense::Le)?;
            let _ = row;
            return Ok(Vec::new());
        }
        let levels = (n as f64).log2().ceil() as u32;
        let width = 1usize << levels;
        let mut layer: Vec<usize> = x.indices().collect();
        layer.resize(width, t); // pad with t per the tower construction
        let mut cones = Vec::new();
        while layer.len() > 2 {
            let mut next = Vec::with_capacity(layer.len() / 2);
            for pair in layer.chunks(2) {
                let (a, b) = (pair[0], pair[1]);
                if a == t && b == t {
                    // t^2 <= t * t holds identically; reuse t upward
                    next.push(t);
                    continue;
                }
                let u = self.add_vars("gm", 1).scalar();
                let id = self.add_rotated_cone(&[u], a, b)?;
                cones.push(id);
                next.push(u);
            }
            layer = next;
        }
        let id = self.add_rotated_cone(&[t], layer[0], layer[1])?;
        cones.push(id);
        Ok(cones)
    }

    /// Structural validation of all invariants.
    pub fn validate(&self) -> Result<(), ConeError> {
        for row in &self.eq {
            if row.cols.len() != row.vals.len() {
                return Err(ConeError::CoeffLength(row.cols.len(), row.vals.len()));
            }
            self.check_vars(&row.cols)?;
        }
        for cone in &self.cones {
            match cone {
                ConeSpec::NonNegative(v) => self.check_vars(v)?,
                ConeSpec::SecondOrder { head, tail } => {
                    self.check_vars(&[*head])?;
                    self.check_vars(tail)?;
                }
            }
        }
        Ok(())
    }

    fn var_name(&self, idx: usize) -> String {
        for (label, start, len) in &self.labels {
            if idx >= *start && idx < start + len {
                return if *len == 1 { label.clone() } else { format!("{label}[{}]", idx - start) };
            }
        }
        format!("x{idx}")
    }
}

impl fmt::Display for ConicProgram {
    /// Human-readable listing, one constraint per line. Not a stable format.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "maximize")?;
        let terms: Vec<String> = self
            .objective
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, &c)| format!("{:+.6} {}", c, self.var_name(i)))
            .collect();
        writeln!(f, "  {}", if terms.is_empty() { "0".to_string() } else { terms.join(" ") })?;
        writeln!(f, "subject to ({} variables)", self.nvars)?;
        for row in &self.eq {
            let terms: Vec<String> = row
                .cols
                .iter()
                .zip(&row.vals)
                .map(|(&c, &v)| format!("{:+.6} {}", v, self.var_name(c)))
                .collect();
            writeln!(f, "  {} = {:.6}", terms.join(" "), row.rhs)?;
        }
        for cone in &self.cones {
            match cone {
                ConeSpec::NonNegative(v) => {
                    let names: Vec<String> = v.iter().map(|&i| self.var_name(i)).collect();
                    writeln!(f, "  {} >= 0", names.join(", "))?;
                }
                ConeSpec::SecondOrder { head, tail } => {
                    let names: Vec<String> = tail.iter().map(|&i| self.var_name(i)).collect();
                    writeln!(f, "  ||({})|| <= {}", names.join(", "), self.var_name(*head))?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_basics() {
        let mut p = ConicProgram::new();
        let w = p.add_vars("w", 3);
        p.add_nonneg(&w.indices().collect::<Vec<_>>()).unwrap();
        p.add_linear(&[1.0, 1.0, 1.0], &[w.index(0), w.index(1), w.index(2)], 1.0, Sense::Eq)
            .unwrap();
        p.add_linear(&[1.0, -1.0], &[w.index(0), w.index(1)], 0.25, Sense::Ge).unwrap();
        assert_eq!(p.nvars(), 4); // slack added
        assert_eq!(p.eq_rows().len(), 2);
        p.validate().unwrap();
        let listing = p.to_string();
        assert!(listing.contains("w[0]"));
    }

    #[test]
    fn rotated_cone_expands_to_soc() {
        let mut p = ConicProgram::new();
        let v = p.add_vars("v", 3); // x, t, u
        let id = p.add_rotated_cone(&[v.index(0)], v.index(1), v.index(2)).unwrap();
        match &p.cones()[id] {
            ConeSpec::SecondOrder { tail, .. } => assert_eq!(tail.len(), 2),
            _ => panic!("expected SOC"),
        }
        assert_eq!(p.eq_rows().len(), 3);
        p.validate().unwrap();
    }

    #[test]
    fn geomean_tower_counts_match_construction() {
        // n = 5 pads to 8 leaves and one (t, t) pair collapses, leaving 6 cones
        let mut p = ConicProgram::new();
        let x = p.add_vars("x", 5);
        let t = p.add_vars("t", 1).scalar();
        let cones = p.add_geomean_hypograph(&x, t).unwrap();
        assert_eq!(cones.len(), 6);
        p.validate().unwrap();

        let mut q = ConicProgram::new();
        let x1 = q.add_vars("x", 1);
        let t1 = q.add_vars("t", 1).scalar();
        let cones = q.add_geomean_hypograph(&x1, t1).unwrap();
        assert!(cones.is_empty());
        assert_eq!(q.eq_rows().len(), 1); // linear t <= x
    }

    #[test]
    fn geomean_rejects_empty() {
        let mut p = ConicProgram::new();
        let x = p.add_vars("x", 0);
        let t = p.add_vars("t", 1).scalar();
        assert!(matches!(p.add_geomean_hypograph(&x, t), Err(ConeError::EmptyGeomean)));
    }

    #[test]
    fn serde_round_trip_is_structurally_identical() {
        let mut p = ConicProgram::new();
        let x = p.add_vars("x", 4);
        let t = p.add_vars("t", 1).scalar();
        p.set_objective(t, 1.0);
        p.add_nonneg(&x.indices().collect::<Vec<_>>()).unwrap();
        p.add_geomean_hypograph(&x, t).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let q: ConicProgram = serde_json::from_str(&json).unwrap();
        assert_eq!(p.nvars(), q.nvars());
        assert_eq!(p.objective(), q.objective());
        assert_eq!(p.eq_rows(), q.eq_rows());
        assert_eq!(p.cones(), q.cones());
    }
}
