//! Online ridge regression shared by every allocator.
//!
//! ```text
//!   A = I + Σ x xᵀ        c = Σ r x        θ̂ = A⁻¹ c
//!   width(x) = α √(xᵀ A⁻¹ x)
//! ```
//!
//! `A⁻¹` is kept up to date with Sherman–Morrison rank-one updates and rebuilt
//! from `A` by Cholesky every [`REFACTOR_INTERVAL`] updates, or earlier if the
//! incremental inverse looks numerically unhealthy.

use serde::{Deserialize, Serialize};

use crate::instance::dot;

/// Number of rank-one updates between full re-factorizations of `A⁻¹`.
pub const REFACTOR_INTERVAL: u64 = 512;

/// Point estimate and confidence interval of a linear payoff at one context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub estimate: f64,
    pub width: f64,
    pub ucb: f64,
    pub lcb: f64,
}

/// Ridge-regression sufficient statistics of one learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    dim: usize,
    gram: Vec<f64>,
    gram_inv: Vec<f64>,
    response: Vec<f64>,
    theta: Vec<f64>,
    count: u64,
}

fn identity(dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], dim: usize, x: &[f64]) -> Vec<f64> {
    (0..dim).map(|i| dot(&m[i * dim..(i + 1) * dim], x)).collect()
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, or `None` if
/// the factorization breaks down.
fn spd_inverse(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    let mut inv = vec![0.0; dim * dim];
    let mut col = vec![0.0; dim];
    for c in 0..dim {
        // forward: L y = e_c
        for i in 0..dim {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[i * dim + k] * col[k];
            }
            col[i] = s / l[i * dim + i];
        }
        // backward: Lᵀ z = y
        for i in (0..dim).rev() {
            let mut s = col[i];
            for k in i + 1..dim {
                s -= l[k * dim + i] * col[k];
            }
            col[i] = s / l[i * dim + i];
        }
        for r in 0..dim {
            inv[r * dim + c] = col[r];
        }
    }
    Some(inv)
}

impl LearnerState {
    /// Fresh learner: `A = I`, `c = 0`, `θ̂ = 0`.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "learner dimension must be at least 1");
        Self {
            dim,
            gram: identity(dim),
            gram_inv: identity(dim),
            response: vec![0.0; dim],
            theta: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of recorded observations.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub fn gram_inverse(&self) -> &[f64] {
        &self.gram_inv
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Records one observation `(x, r)`.
    pub fn update(&mut self, x: &[f64], click: bool) {
        let dim = self.dim;
        assert_eq!(x.len(), dim, "context dimension mismatch");
        for i in 0..dim {
            for j in 0..dim {
                self.gram[i * dim + j] += x[i] * x[j];
            }
        }
        if click {
            for (c, xi) in self.response.iter_mut().zip(x) {
                *c += xi;
            }
        }
        self.count += 1;

        let ax = mat_vec(&self.gram_inv, dim, x);
        let denom = 1.0 + dot(x, &ax);
        let healthy = denom.is_finite() && denom >= 1.0;
        if healthy {
            for i in 0..dim {
                for j in 0..dim {
                    self.gram_inv[i * dim + j] -= ax[i] * ax[j] / denom;
                }
            }
        }
        let diag_ok = (0..dim).all(|i| self.gram_inv[i * dim + i] > 0.0);
        if !healthy || !diag_ok || self.count % REFACTOR_INTERVAL == 0 {
            self.refactor();
        }
        self.theta = mat_vec(&self.gram_inv, dim, &self.response);
    }

    /// Rebuilds `A⁻¹` from `A`.
    pub fn refactor(&mut self) {
        self.gram_inv = spd_inverse(&self.gram, self.dim)
            .expect("Gram matrix I + Σ x xᵀ is positive definite");
        self.theta = mat_vec(&self.gram_inv, self.dim, &self.response);
    }

    /// `xᵀ A⁻¹ x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let dim = self.dim;
        let mut q = 0.0;
        for i in 0..dim {
            q += x[i] * dot(&self.gram_inv[i * dim..(i + 1) * dim], x);
        }
        q.max(0.0)
    }

    /// `θ̂·x`.
    pub fn estimate(&self, x: &[f64]) -> f64 {
        dot(&self.theta, x)
    }

    pub fn score(&self, x: &[f64], alpha: f64) -> ConfidenceScore {
        debug_assert!(alpha >= 0.0);
        let estimate = self.estimate(x);
        let width = alpha * self.quad_form(x).sqrt();
        ConfidenceScore {
            estimate,
            width,
            ucb: estimate + width,
            lcb: estimate - width,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fresh_state_scores() {
        let s = LearnerState::new(4);
        assert_eq!(s.theta(), &[0.0; 4]);
        let x = [0.5, 0.5, 0.5, 0.5];
        assert_abs_diff_eq!(s.score(&x, 1.7).width, 1.7, epsilon = 1e-12);
        assert_eq!(s.score(&x, 0.0).ucb, 0.0);
        assert_eq!(s.score(&x, 0.0).lcb, 0.0);

        let s2 = LearnerState::new(2);
        let sc = s2.score(&[1.0, 0.0], 0.8);
        assert_eq!((sc.ucb, sc.lcb), (0.8, -0.8));
        assert_eq!(LearnerState::new(1).score(&[1.0], 0.3).ucb, 0.3);
    }

    #[test]
    fn single_update_matches_hand_solve() {
        let mut s = LearnerState::new(2);
        s.update(&[1.0, 0.0], true);
        assert_eq!(s.gram(), &[2.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.response(), &[1.0, 0.0]);
        assert_abs_diff_eq!(s.theta()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.theta()[1], 0.0, epsilon = 1e-12);

        let sc = s.score(&[1.0, 0.0], 1.0);
        assert_abs_diff_eq!(sc.ucb, 0.5 + 0.5f64.sqrt(), epsilon = 1e-12);
        let sc = s.score(&[0.0, 1.0], 2.0);
        assert_abs_diff_eq!(sc.estimate, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sc.width, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn no_click_update_keeps_response_and_shrinks_width() {
        let mut s = LearnerState::new(3);
        let x = [0.6, 0.8, 0.0];
        s.update(&[0.0, 0.6, 0.8], true);
        let before = s.clone();
        s.update(&x, false);
        assert_eq!(s.response(), before.response());
        assert!(s.quad_form(&x) < before.quad_form(&x));
    }

    #[test]
    fn refactor_is_periodic_and_consistent() {
        let mut s = LearnerState::new(2);
        for k in 0..REFACTOR_INTERVAL + 3 {
            let a = (k as f64 * 0.37).sin().abs();
            let x = [a, (1.0 - a * a).sqrt()];
            s.update(&x, k % 3 == 0);
        }
        let mut fresh = s.clone();
        fresh.refactor();
        for (a, b) in s.gram_inverse().iter().zip(fresh.gram_inverse()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn spd_inverse_inverts() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let inv = spd_inverse(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert_abs_diff_eq!(v, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        assert!(spd_inverse(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
