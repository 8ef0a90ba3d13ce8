//! Built-in 2-D toy distributions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    /// Eight modes on a circle of radius 2, per-mode σ = 0.05.
    EightGaussians,
    TwoMoons,
    SwissRoll,
}

const NOISE: f64 = 0.05;

impl Dataset {
    pub const ALL: [Dataset; 3] = [Dataset::EightGaussians, Dataset::TwoMoons, Dataset::SwissRoll];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::EightGaussians => "eight-gaussians",
            Dataset::TwoMoons => "two-moons",
            Dataset::SwissRoll => "swiss-roll",
        }
    }

    pub fn dim(self) -> usize {
        2
    }

    /// `n` points from the stream identified by `(seed, stream)`.
    pub fn sample(self, n: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, self.name(), stream);
        let noise = Normal::new(0.0, NOISE).expect("positive sigma");
        (0..n)
            .map(|_| {
                let (x, y) = match self {
                    Dataset::EightGaussians => {
                        let mode = rng.gen_range(0..8) as f64;
                        let a = 2.0 * PI * mode / 8.0;
                        (2.0 * a.cos(), 2.0 * a.sin())
                    }
                    Dataset::TwoMoons => {
                        let a = rng.gen_range(0.0..PI);
                        if rng.gen_bool(0.5) {
                            (a.cos() - 0.5, a.sin() - 0.25)
                        } else {
                            (0.5 - a.cos(), 0.25 - a.sin())
                        }
                    }
                    Dataset::SwissRoll => {
                        let a = 1.5 * PI * (1.0 + 2.0 * rng.gen::<f64>());
                        (a * a.cos() / 5.0, a * a.sin() / 5.0)
                    }
                };
                vec![x + noise.sample(&mut rng), y + noise.sample(&mut rng)]
            })
            .collect()
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown dataset {s:?}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_gaussians_sit_on_the_circle() {
        let pts = Dataset::EightGaussians.sample(2000, 1, 0);
        for p in &pts {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 2.0).abs() < 0.35, "{r}");
        }
        let mean_r = pts.iter().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).sum::<f64>() / 2000.0;
        assert!((mean_r - 2.0).abs() < 0.01);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        for d in Dataset::ALL {
            assert_eq!(d.sample(10, 3, 0), d.sample(10, 3, 0));
            assert_ne!(d.sample(10, 3, 0), d.sample(10, 3, 1));
            assert_eq!(d.name().parse::<Dataset>().unwrap(), d);
            assert!(d.sample(100, 0, 0).iter().flatten().all(|x| x.abs() < 4.0));
        }
    }
}
