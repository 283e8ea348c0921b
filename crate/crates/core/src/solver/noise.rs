use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{SolverError, TimeGrid};

/// Master seed for per-(replication, particle) Brownian streams.
///
/// With `resolution = Some(n)` every increment is the sum of the
/// underlying `n`-step fine increments, so grids dividing `n` see the same
/// Brownian path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub seed: u64,
    pub resolution: Option<usize>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, resolution: None }
    }

    pub fn with_resolution(self, steps: usize) -> Self {
        Self { resolution: Some(steps), ..self }
    }

    /// Independent source for a named sub-experiment.
    pub fn derive(&self, tag: u64) -> Self {
        Self { seed: splitmix64(self.seed ^ splitmix64(tag)), resolution: self.resolution }
    }

    pub fn rng(&self, replication: u64, particle: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((replication << 32) | (particle & 0xffff_ffff));
        rng
    }

    /// Sub-steps per grid step.
    pub fn ratio(&self, grid: &TimeGrid) -> Result<usize, SolverError> {
        match self.resolution {
            None => Ok(1),
            Some(r) if r >= grid.steps && r % grid.steps == 0 => Ok(r / grid.steps),
            Some(r) => Err(SolverError::Config(format!(
                "noise resolution {r} is not a multiple of the grid's {} steps",
                grid.steps
            ))),
        }
    }
}

/// Step-by-step Brownian increments for every particle of one replication.
#[derive(Debug, Clone)]
pub struct ParticleNoise {
    rngs: Vec<ChaCha8Rng>,
    dim: usize,
    ratio: usize,
    fine_sd: f64,
}

impl ParticleNoise {
    pub fn new(
        source: &NoiseSource,
        replication: usize,
        particles: usize,
        dim: usize,
        grid: &TimeGrid,
    ) -> Result<Self, SolverError> {
        let ratio = source.ratio(grid)?;
        let rngs = (0..particles).map(|p| source.rng(replication as u64, p as u64)).collect();
        Ok(Self { rngs, dim, ratio, fine_sd: (grid.h() / ratio as f64).sqrt() })
    }

    pub fn particles(&self) -> usize {
        self.rngs.len()
    }

    /// Writes the next `particles × dim` increments.
    pub fn fill(&mut self, out: &mut [f64]) {
        let d = self.dim;
        for (p, rng) in self.rngs.iter_mut().enumerate() {
            let slot = &mut out[p * d..(p + 1) * d];
            slot.fill(0.0);
            for _ in 0..self.ratio {
                for v in slot.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += self.fine_sd * z;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_distinct() {
        let g = TimeGrid::unit(4);
        let src = NoiseSource::new(42);
        let mut a = ParticleNoise::new(&src, 0, 3, 2, &g).unwrap();
        let mut b = ParticleNoise::new(&src, 0, 3, 2, &g).unwrap();
        let mut c = ParticleNoise::new(&src, 1, 3, 2, &g).unwrap();
        let (mut x, mut y, mut z) = (vec![0.0; 6], vec![0.0; 6], vec![0.0; 6]);
        a.fill(&mut x);
        b.fill(&mut y);
        c.fill(&mut z);
        assert_eq!(x, y);
        assert_ne!(x, z);
        assert_ne!(x[0..2], x[2..4]);
        assert_ne!(src.derive(1).seed, src.derive(2).seed);
    }

    #[test]
    fn coarse_increments_sum_fine_ones() {
        let src = NoiseSource::new(7).with_resolution(8);
        let fine = TimeGrid::unit(8);
        let coarse = TimeGrid::unit(2);
        let mut f = ParticleNoise::new(&src, 0, 1, 1, &fine).unwrap();
        let mut c = ParticleNoise::new(&src, 0, 1, 1, &coarse).unwrap();
        let mut buf = [0.0];
        let mut fine_total = 0.0;
        for _ in 0..8 {
            f.fill(&mut buf);
            fine_total += buf[0];
        }
        let mut coarse_total = 0.0;
        for _ in 0..2 {
            c.fill(&mut buf);
            coarse_total += buf[0];
        }
        assert!((fine_total - coarse_total).abs() < 1e-12);
        assert!(ParticleNoise::new(&src, 0, 1, 1, &TimeGrid::unit(3)).is_err());
    }

    #[test]
    fn increments_have_variance_h() {
        let g = TimeGrid::unit(16);
        let mut n = ParticleNoise::new(&NoiseSource::new(3), 0, 4000, 1, &g).unwrap();
        let mut buf = vec![0.0; 4000];
        n.fill(&mut buf);
        let var = buf.iter().map(|v| v * v).sum::<f64>() / 4000.0;
        assert!((var / g.h() - 1.0).abs() < 0.1, "{var}");
    }
}
