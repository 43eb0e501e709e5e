//! Small environments with brute-force-checkable optima.

use crate::env::{EnvStep, Environment};
use crate::error::{Error, Result};

/// Stateless 2-dim bandit whose reward is a Gaussian bump around each
/// optimum, `r(a) = max_j exp(-|a - o_j|^2 / (2 w^2))`, so the optimum is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandit {
    pub optima: Vec<[f64; 2]>,
    pub width: f64,
}

impl Bandit {
    /// One broad optimum away from the origin.
    pub fn unimodal() -> Self {
        Self {
            optima: vec![[0.5, -0.3]],
            width: 0.5,
        }
    }

    /// Two narrow optima placed symmetrically about the origin, where the
    /// reward is almost flat.
    pub fn two_optima() -> Self {
        Self {
            optima: vec![[0.6, -0.6], [-0.6, 0.6]],
            width: 0.25,
        }
    }

    pub fn reward(&self, a: &[f64]) -> f64 {
        self.optima
            .iter()
            .map(|o| {
                let d2 = (a[0] - o[0]).powi(2) + (a[1] - o[1]).powi(2);
                (-d2 / (2.0 * self.width * self.width)).exp()
            })
            .fold(0.0, f64::max)
    }

    /// Distance from `a` to the closest optimum.
    pub fn distance_to_optimum(&self, a: &[f64]) -> f64 {
        self.optima
            .iter()
            .map(|o| ((a[0] - o[0]).powi(2) + (a[1] - o[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }
}

impl Environment for Bandit {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn state(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        check_action(action, 2)?;
        Ok(EnvStep {
            next_state: vec![0.0],
            reward: self.reward(action),
        })
    }
}

/// Exhaustive search of `[-1, 1]^2` on a `(n + 1) x (n + 1)` lattice.
/// Returns the best value and every lattice point within `tol` of it.
pub fn grid_oracle(f: impl Fn(&[f64]) -> f64, n: usize, tol: f64) -> (f64, Vec<[f64; 2]>) {
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / n as f64;
    let mut values = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        for j in 0..=n {
            let a = [coord(i), coord(j)];
            values.push((a, f(&a)));
        }
    }
    let best = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let argmax = values.into_iter().filter(|v| v.1 >= best - tol).map(|v| v.0).collect();
    (best, argmax)
}

/// Two cells with one UE each sharing two RB groups.
///
/// Action `[a_00, a_01, a_10, a_11]` is UE `i`'s preference for group `g`,
/// mapped to a usage share `u = (a + 1) / 2`. A group delivers
/// `u_i * (1 - u_j)` to UE `i`, so sharing a group wastes it. Each UE needs
/// `DEMAND` units; the reward is the negated sum of relative shortfalls and
/// reaches 0 exactly when the UEs take different groups. The state is last
/// slot's delivered throughput per UE, which does not affect the reward.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwoCellToy {
    last_tp: [f64; 2],
}

impl TwoCellToy {
    pub const DEMAND: f64 = 0.9;

    pub fn throughput(a: &[f64]) -> [f64; 2] {
        let u = |x: f64| (x.clamp(-1.0, 1.0) + 1.0) / 2.0;
        let tp = |i: usize, j: usize| (0..2).map(|g| u(a[2 * i + g]) * (1.0 - u(a[2 * j + g]))).sum::<f64>();
        [tp(0, 1), tp(1, 0)]
    }

    pub fn reward(a: &[f64]) -> f64 {
        Self::throughput(a)
            .iter()
            .map(|&t| -((Self::DEMAND - t) / Self::DEMAND).max(0.0))
            .sum()
    }
}

impl Environment for TwoCellToy {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        4
    }

    fn state(&self) -> Vec<f64> {
        self.last_tp.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        check_action(action, 4)?;
        self.last_tp = Self::throughput(action);
        Ok(EnvStep {
            next_state: self.last_tp.to_vec(),
            reward: Self::reward(action),
        })
    }
}

fn check_action(a: &[f64], dim: usize) -> Result<()> {
    if a.len() != dim {
        return Err(Error::Shape {
            what: "toy action",
            expected: dim,
            got: a.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_finds_both_bandit_optima() {
        let b = Bandit::two_optima();
        let (best, argmax) = grid_oracle(|a| b.reward(a), 100, 1e-9);
        assert!((best - 1.0).abs() < 1e-12);
        assert_eq!(argmax.len(), 2);
        for (got, want) in argmax.iter().zip([[-0.6, 0.6], [0.6, -0.6]]) {
            assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
        }
        // The midpoint between the optima is far below them.
        assert!(b.reward(&[0.0, 0.0]) < 0.01);
    }

    #[test]
    fn toy_optimum_is_zero_and_needs_disjoint_groups() {
        // Brute force over a 4-dim lattice with step 0.25.
        let pts: Vec<f64> = (0..=8).map(|i| -1.0 + 0.25 * i as f64).collect();
        let mut best = f64::NEG_INFINITY;
        let mut best_at = Vec::new();
        for &a in &pts {
            for &b in &pts {
                for &c in &pts {
                    for &d in &pts {
                        let r = TwoCellToy::reward(&[a, b, c, d]);
                        if r > best + 1e-12 {
                            best = r;
                            best_at.clear();
                        }
                        if (r - best).abs() <= 1e-12 {
                            best_at.push([a, b, c, d]);
                        }
                    }
                }
            }
        }
        assert_eq!(best, 0.0);
        assert!(best_at.contains(&[1.0, -1.0, -1.0, 1.0]) && best_at.contains(&[-1.0, 1.0, 1.0, -1.0]));
        // Neutral preferences share both groups and fall short.
        assert!((TwoCellToy::reward(&[0.0; 4]) - 2.0 * (0.5 - 0.9) / 0.9).abs() < 1e-12);
    }
}
