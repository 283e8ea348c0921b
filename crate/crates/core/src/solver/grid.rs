use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::SolverError;

/// Uniform grid on `[start, end]` with `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, steps: usize) -> Result<Self, SolverError> {
        if !(start.is_finite() && end.is_finite() && start < end) || steps == 0 {
            return Err(SolverError::Config(format!("invalid grid [{start}, {end}] with {steps} steps")));
        }
        Ok(Self { start, end, steps })
    }

    pub fn unit(steps: usize) -> Self {
        Self { start: 0.0, end: 1.0, steps }
    }

    pub fn h(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.end
        } else {
            self.start + k as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Arc<[f64]> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Index of the last node not after `t`.
    pub fn floor_index(&self, t: f64) -> usize {
        let r = (t - self.start) / self.h();
        ((r + 1e-9).floor().max(0.0) as usize).min(self.steps)
    }

    /// Same grid restricted to `[start, t]`; `t` must be a node.
    pub fn truncated(&self, t: f64) -> Result<Self, SolverError> {
        let k = self.floor_index(t);
        if (self.node(k) - t).abs() > 1e-9 * (1.0 + t.abs()) || k == 0 {
            return Err(SolverError::Config(format!("time {t} is not an interior grid node")));
        }
        Ok(Self { start: self.start, end: self.node(k), steps: k })
    }
}

/// `t_n = 2^{-n}⌊2^n t⌋`, tolerant of rounding just below a lattice point.
pub fn dyadic_snap(t: f64, level: u32) -> f64 {
    let scale = (level as f64).exp2();
    let r = scale * t;
    (r + 1e-9 * (1.0 + r.abs())).floor() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snap_examples() {
        assert_eq!(dyadic_snap(0.7, 2), 0.5);
        assert_eq!(dyadic_snap(0.75, 2), 0.75);
        assert_eq!(dyadic_snap(0.3 * 3.0 - 0.15, 2), 0.75);
        assert_eq!(dyadic_snap(1.0, 0), 1.0);
        for k in 0..1000 {
            let t = k as f64 * 0.001_3;
            for n in 0..12 {
                let s = dyadic_snap(t, n);
                let w = (n as f64).exp2().recip();
                assert!(s <= t + 1e-9 && t < s + w, "t={t} n={n} s={s}");
            }
        }
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(0.0, 1.0, 8).unwrap();
        assert_eq!(g.h(), 0.125);
        assert_eq!(g.nodes().len(), 9);
        assert_eq!(g.node(8), 1.0);
        assert_eq!(g.floor_index(0.3), 2);
        assert_eq!(g.truncated(0.5).unwrap().steps, 4);
        assert!(g.truncated(0.3).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
    }
}
