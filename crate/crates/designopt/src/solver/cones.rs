//! Cone blocks for the interior-point method: Jordan-algebra products,
//! Nesterov-Todd scalings and boundary step lengths for the nonnegative
//! orthant and second-order cones.

/// A block of contiguous cone coordinates.
#[derive(Debug, Clone)]
pub enum ConeBlock {
    NonNeg { start: usize, len: usize },
    Soc { start: usize, dim: usize },
}

impl ConeBlock {
    pub fn start(&self) -> usize {
        match *self {
            ConeBlock::NonNeg { start, .. } | ConeBlock::Soc { start, .. } => start,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ConeBlock::NonNeg { len, .. } => len,
            ConeBlock::Soc { dim, .. } => dim,
        }
    }

    /// Barrier degree: one per nonnegative coordinate, one per SOC block.
    pub fn degree(&self) -> usize {
        match *self {
            ConeBlock::NonNeg { len, .. } => len,
            ConeBlock::Soc { .. } => 1,
        }
    }
}

/// Nesterov-Todd scaling state for one cone block.
///
/// For the orthant the scaling is `w_i = sqrt(s_i / z_i)` per coordinate.
/// For a second-order cone it is `W = sqrt(eta) * V(wbar)` with
/// `V = [[a, b^T], [b, I + b b^T / (1 + a)]]`, `wbar = (a, b)` the unit
/// hyperbolic scaling point and `eta = rho_s / rho_z`.
#[derive(Debug, Clone)]
pub enum NtScaling {
    NonNeg { w: Vec<f64> },
    Soc { eta_sqrt: f64, wbar: Vec<f64> },
}

pub fn unit_element(block: &ConeBlock, out: &mut [f64]) {
    match block {
        ConeBlock::NonNeg { .. } => out.fill(1.0),
        ConeBlock::Soc { .. } => {
            out.fill(0.0);
            out[0] = 1.0;
        }
    }
}

fn jnorm(u: &[f64]) -> Option<f64> {
    let tail: f64 = u[1..].iter().map(|v| v * v).sum();
    let q = u[0] * u[0] - tail;
    if q <= 0.0 || u[0] <= 0.0 {
        None
    } else {
        Some(q.sqrt())
    }
}

/// Compute the NT scaling for a block from interior points s, z.
/// Returns None (breakdown) when an iterate leaves the cone interior.
pub fn compute_scaling(block: &ConeBlock, s: &[f64], z: &[f64]) -> Option<NtScaling> {
    match block {
        ConeBlock::NonNeg { .. } => {
            let mut w = Vec::with_capacity(s.len());
            for (&si, &zi) in s.iter().zip(z) {
                if si <= 0.0 || zi <= 0.0 {
                    return None;
                }
                w.push((si / zi).sqrt());
            }
            Some(NtScaling::NonNeg { w })
        }
        ConeBlock::Soc { dim, .. } => {
            let rho_s = jnorm(s)?;
            let rho_z = jnorm(z)?;
            let dot: f64 = s.iter().zip(z).map(|(a, b)| a * b).sum();
            let gamma = ((1.0 + dot / (rho_s * rho_z)) / 2.0).sqrt();
            // wbar = (sbar + J zbar) / (2 gamma), unit hyperbolic norm
            let mut wbar = vec![0.0; *dim];
            wbar[0] = (s[0] / rho_s + z[0] / rho_z) / (2.0 * gamma);
            for i in 1..*dim {
                wbar[i] = (s[i] / rho_s - z[i] / rho_z) / (2.0 * gamma);
            }
            Some(NtScaling::Soc { eta_sqrt: (rho_s / rho_z).sqrt().sqrt(), wbar })
        }
    }
}

/// `out = V(wbar) v` with V as in [`NtScaling`].
fn apply_v(wbar: &[f64], v: &[f64], out: &mut [f64]) {
    let a = wbar[0];
    let b = &wbar[1..];
    let bv: f64 = b.iter().zip(&v[1..]).map(|(x, y)| x * y).sum();
    out[0] = a * v[0] + bv;
    let f = v[0] + bv / (1.0 + a);
    for i in 1..v.len() {
        out[i] = v[i] + f * b[i - 1];
    }
}

/// `out = V(wbar)^{-1} v = J V(wbar) J v` (V is J-orthogonal).
fn apply_v_inv(wbar: &[f64], v: &[f64], out: &mut [f64]) {
    let a = wbar[0];
    let b = &wbar[1..];
    let bv: f64 = b.iter().zip(&v[1..]).map(|(x, y)| x * y).sum();
    out[0] = a * v[0] - bv;
    let f = -v[0] + bv / (1.0 + a);
    for i in 1..v.len() {
        out[i] = v[i] + f * b[i - 1];
    }
}

impl NtScaling {
    /// `out = W v`.
    pub fn apply_w(&self, v: &[f64], out: &mut [f64]) {
        match self {
            NtScaling::NonNeg { w } => {
                for i in 0..v.len() {
                    out[i] = w[i] * v[i];
                }
            }
            NtScaling::Soc { eta_sqrt, wbar } => {
                apply_v(wbar, v, out);
                let e2 = eta_sqrt * eta_sqrt;
                for o in out.iter_mut() {
                    *o *= e2;
                }
            }
        }
    }

    /// `out = W^{-1} v` (W is symmetric, so this is also W^{-T}).
    pub fn apply_w_inv(&self, v: &[f64], out: &mut [f64]) {
        match self {
            NtScaling::NonNeg { w } => {
                for i in 0..v.len() {
                    out[i] = v[i] / w[i];
                }
            }
            NtScaling::Soc { eta_sqrt, wbar } => {
                apply_v_inv(wbar, v, out);
                let e2 = eta_sqrt * eta_sqrt;
                for o in out.iter_mut() {
                    *o /= e2;
                }
            }
        }
    }

    /// Scaled point `lambda = W z`.
    pub fn lambda(&self, z: &[f64], out: &mut [f64]) {
        self.apply_w(z, out);
    }
}

/// Jordan product `out = u o v` for one block.
pub fn jordan_product(block: &ConeBlock, u: &[f64], v: &[f64], out: &mut [f64]) {
    match block {
        ConeBlock::NonNeg { .. } => {
            for i in 0..u.len() {
                out[i] = u[i] * v[i];
            }
        }
        ConeBlock::Soc { .. } => {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            out[0] = dot;
            for i in 1..u.len() {
                out[i] = u[0] * v[i] + v[0] * u[i];
            }
        }
    }
}

/// Solve `lambda o x = v` for x. Returns false on a singular arrow system.
pub fn jordan_solve(block: &ConeBlock, lambda: &[f64], v: &[f64], out: &mut [f64]) -> bool {
    match block {
        ConeBlock::NonNeg { .. } => {
            for i in 0..v.len() {
                if lambda[i] == 0.0 {
                    return false;
                }
                out[i] = v[i] / lambda[i];
            }
            true
        }
        ConeBlock::Soc { .. } => {
            let tail: f64 = lambda[1..].iter().map(|x| x * x).sum();
            let det = lambda[0] * lambda[0] - tail;
            if det <= 0.0 || lambda[0] <= 0.0 {
                return false;
            }
            let lv: f64 = lambda[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum();
            let x0 = (lambda[0] * v[0] - lv) / det;
            out[0] = x0;
            for i in 1..v.len() {
                out[i] = (v[i] - x0 * lambda[i]) / lambda[0];
            }
            true
        }
    }
}

/// Largest step alpha (capped at `cap`) with `u + alpha d` in the closed cone.
pub fn step_to_boundary(block: &ConeBlock, u: &[f64], d: &[f64], cap: f64) -> f64 {
    match block {
        ConeBlock::NonNeg { .. } => {
            let mut alpha = cap;
            for i in 0..u.len() {
                if d[i] < 0.0 {
                    alpha = alpha.min(-u[i] / d[i]);
                }
            }
            alpha
        }
        ConeBlock::Soc { .. } => {
            let q0 = u[0] * u[0] - u[1..].iter().map(|x| x * x).sum::<f64>();
            let q1 = u[0] * d[0] - u[1..].iter().zip(&d[1..]).map(|(a, b)| a * b).sum::<f64>();
            let q2 = d[0] * d[0] - d[1..].iter().map(|x| x * x).sum::<f64>();
            let root = smallest_positive_root(q2, q1, q0.max(0.0));
            root.map_or(cap, |r| r.min(cap))
        }
    }
}

/// Smallest positive root of `q2 a^2 + 2 q1 a + q0 = 0` with q0 >= 0,
/// or None when the quadratic stays nonnegative for all positive a.
fn smallest_positive_root(q2: f64, q1: f64, q0: f64) -> Option<f64> {
    if q2.abs() < 1e-300 {
        if q1 < 0.0 {
            return Some(-q0 / (2.0 * q1));
        }
        return None;
    }
    let disc = q1 * q1 - q0 * q2;
    if disc < 0.0 {
        return if q2 < 0.0 { Some(0.0) } else { None };
    }
    let sq = disc.sqrt();
    let (r1, r2) = if q2 > 0.0 {
        ((-q1 - sq) / q2, (-q1 + sq) / q2)
    } else {
        ((-q1 + sq) / q2, (-q1 - sq) / q2)
    };
    let mut best = f64::INFINITY;
    for r in [r1, r2] {
        if r >= 0.0 && r < best {
            best = r;
        }
    }
    if q2 > 0.0 && q1 >= 0.0 {
        return None; // opens upward with minimum at negative alpha
    }
    if best.is_finite() {
        Some(best)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soc(dim: usize) -> ConeBlock {
        ConeBlock::Soc { start: 0, dim }
    }

    #[test]
    fn nt_scaling_maps_s_and_z_to_same_point() {
        let block = soc(4);
        let s = vec![2.0, 0.3, -0.5, 0.1];
        let z = vec![1.5, 0.2, 0.4, -0.3];
        let sc = compute_scaling(&block, &s, &z).unwrap();
        let mut lam1 = vec![0.0; 4];
        let mut lam2 = vec![0.0; 4];
        sc.apply_w(&z, &mut lam1);
        sc.apply_w_inv(&s, &mut lam2);
        for i in 0..4 {
            assert!((lam1[i] - lam2[i]).abs() < 1e-12, "{lam1:?} vs {lam2:?}");
        }
        // W^{-1} W = I
        let mut tmp = vec![0.0; 4];
        let mut back = vec![0.0; 4];
        sc.apply_w(&s, &mut tmp);
        sc.apply_w_inv(&tmp, &mut back);
        for i in 0..4 {
            assert!((back[i] - s[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn nonneg_scaling_matches_sqrt_ratio() {
        let block = ConeBlock::NonNeg { start: 0, len: 3 };
        let s = vec![4.0, 1.0, 9.0];
        let z = vec![1.0, 4.0, 1.0];
        let sc = compute_scaling(&block, &s, &z).unwrap();
        let mut lam = vec![0.0; 3];
        sc.lambda(&z, &mut lam);
        for i in 0..3 {
            assert!((lam[i] - (s[i] * z[i]).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn jordan_solve_inverts_product() {
        let block = soc(3);
        let lambda = vec![2.0, 0.5, -0.7];
        let v = vec![1.0, -0.2, 0.3];
        let mut x = vec![0.0; 3];
        assert!(jordan_solve(&block, &lambda, &v, &mut x));
        let mut back = vec![0.0; 3];
        jordan_product(&block, &lambda, &x, &mut back);
        for i in 0..3 {
            assert!((back[i] - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn soc_step_to_boundary() {
        let block = soc(2);
        // u = (1, 0), d = (0, -1): boundary at alpha = 1
        let alpha = step_to_boundary(&block, &[1.0, 0.0], &[0.0, -1.0], 10.0);
        assert!((alpha - 1.0).abs() < 1e-12);
        // moving deeper inside: unbounded
        let alpha = step_to_boundary(&block, &[1.0, 0.0], &[1.0, 0.0], 10.0);
        assert_eq!(alpha, 10.0);
        let block = ConeBlock::NonNeg { start: 0, len: 2 };
        let alpha = step_to_boundary(&block, &[1.0, 2.0], &[-0.5, -4.0], 10.0);
        assert!((alpha - 0.5).abs() < 1e-12);
    }
}
