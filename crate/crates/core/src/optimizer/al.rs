//! Augmented Lagrangian bookkeeping for the four binarization constraints.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ALState {
    pub lambda: [f64; 4],
    pub tau: [f64; 4],
    /// Penalty weights are multiplied or divided by this on each update.
    pub anneal: f64,
    /// Violations seen at the previous update; `None` before the first one.
    pub prev_violations: Option<[f64; 4]>,
}

impl ALState {
    pub fn new(tau0: f64, anneal: f64) -> Self {
        Self { lambda: [0.0; 4], tau: [tau0; 4], anneal, prev_violations: None }
    }

    /// `lambda_k <- lambda_k - tau_k v_k`, then adapt `tau_k` by the trend of
    /// `v_k`. The multiplier step uses the weight in force before adapting.
    pub fn update(&mut self, v: &[f64; 4]) {
        for k in 0..4 {
            self.lambda[k] -= self.tau[k] * v[k];
        }
        if let Some(prev) = self.prev_violations {
            for k in 0..4 {
                if v[k] > prev[k] {
                    self.tau[k] *= self.anneal;
                } else if v[k] < prev[k] {
                    self.tau[k] /= self.anneal;
                }
            }
        }
        self.prev_violations = Some(*v);
    }
}

impl Default for ALState {
    fn default() -> Self {
        Self::new(0.3, 1.01)
    }
}

/// Violations against a zero target, floored at zero.
pub fn violations(penalties: &[f64; 4]) -> [f64; 4] {
    penalties.map(|g| g.max(0.0))
}

/// `L = L_disp + sum_k (-lambda_k v_k + tau_k v_k^2 / 2)` and `dL/dv`.
pub fn augmented_objective(l_disp: f64, v: &[f64; 4], al: &ALState) -> (f64, [f64; 4]) {
    let mut l = l_disp;
    let mut dv = [0.0; 4];
    for k in 0..4 {
        l += -al.lambda[k] * v[k] + 0.5 * al.tau[k] * v[k] * v[k];
        dv[k] = -al.lambda[k] + al.tau[k] * v[k];
    }
    (l, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn objective_examples() {
        let al = ALState::default();
        assert_eq!(augmented_objective(-1.0, &[0.0; 4], &al).0, -1.0);
        let (l, _) = augmented_objective(-1.0, &[0.1, 0.0, 0.0, 0.0], &al);
        assert!((l - (-1.0 + 0.0015)).abs() < 1e-15);
        let mut al = ALState::default();
        al.lambda[0] = 0.2;
        let (l, dv) = augmented_objective(-1.0, &[0.1, 0.0, 0.0, 0.0], &al);
        assert!((l - (-1.0 - 0.02 + 0.0015)).abs() < 1e-15);
        assert!((dv[0] - (-0.2 + 0.03)).abs() < 1e-15);
    }

    #[test]
    fn update_examples() {
        let mut al = ALState::default();
        al.update(&[0.1, 0.0, 0.0, 0.0]);
        assert!((al.lambda[0] + 0.03).abs() < 1e-15);
        assert_eq!(al.tau, [0.3; 4]);
        al.update(&[0.2, 0.0, 0.0, 0.0]);
        assert!((al.tau[0] - 0.303).abs() < 1e-15);
        assert_eq!(al.tau[1], 0.3);
        al.update(&[0.1, 0.0, 0.0, 0.0]);
        assert!((al.tau[0] - 0.3).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn multiplier_closed_form_and_tau_bounds(vs in prop::collection::vec(prop::array::uniform4(0.0..1.0f64), 1..60)) {
            let mut al = ALState::default();
            let mut expected = [0.0; 4];
            for v in &vs {
                for k in 0..4 {
                    expected[k] -= al.tau[k] * v[k];
                }
                al.update(v);
            }
            let n = vs.len() as i32;
            for k in 0..4 {
                prop_assert!((al.lambda[k] - expected[k]).abs() < 1e-12);
                prop_assert!(al.tau[k] >= 0.3 * 1.01f64.powi(-n) * (1.0 - 1e-12));
                prop_assert!(al.tau[k] <= 0.3 * 1.01f64.powi(n) * (1.0 + 1e-12));
                prop_assert!(al.tau[k] > 0.0);
            }
        }
    }
}
