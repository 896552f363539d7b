//! Parameter domains with product densities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::assembly::check_bounds;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    /// Beta(a, b) on [0, 1].
    Beta {
        a: f64,
        b: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Beta { a, b } if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) => {
                Err(Error::InvalidDistribution(format!(
                    "Beta shape parameters must be positive, got ({a}, {b})"
                )))
            }
            Marginal::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => Err(
                Error::InvalidDistribution(format!("Uniform needs lo < hi, got ({lo}, {hi})")),
            ),
            _ => Ok(()),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            Marginal::Beta { .. } => (0.0, 1.0),
            Marginal::Uniform { lo, hi } => (lo, hi),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Beta { a, b } => a / (a + b),
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDomain {
    pub marginals: Vec<Marginal>,
}

impl ParamDomain {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidDistribution(
                "parameter domain needs at least one dimension".into(),
            ));
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(Self { marginals })
    }

    pub fn uniform_cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![Marginal::Uniform { lo, hi }; dim])
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.marginals.iter().map(|m| m.support()).collect()
    }

    pub fn contains(&self, mu: &[f64]) -> Result<()> {
        check_bounds(mu, &self.bounds())
    }

    pub fn mean(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.mean()).collect()
    }
}

/// `n` independent draws, reproducible from `seed`.
pub fn sample_parameters(domain: &ParamDomain, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    for m in &domain.marginals {
        m.validate()?;
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samplers: Vec<Box<dyn Fn(&mut ChaCha8Rng) -> f64>> = domain
        .marginals
        .iter()
        .map(|m| -> Result<Box<dyn Fn(&mut ChaCha8Rng) -> f64>> {
            Ok(match *m {
                Marginal::Beta { a, b } => {
                    let d =
                        Beta::new(a, b).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
                    Box::new(move |r| d.sample(r))
                }
                Marginal::Uniform { lo, hi } => {
                    let d = Uniform::new_inclusive(lo, hi)
                        .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
                    Box::new(move |r| d.sample(r))
                }
            })
        })
        .collect::<Result<_>>()?;
    Ok((0..n)
        .map(|_| samplers.iter().map(|s| s(&mut rng)).collect())
        .collect())
}

/// Componentwise mean of a sample set.
pub fn sample_mean(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = samples.first().ok_or(Error::EmptyTrainingSet)?;
    let mut m = vec![0.0; first.len()];
    for s in samples {
        for (a, b) in m.iter_mut().zip(s) {
            *a += b;
        }
    }
    let n = samples.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_one_one_is_uniform() {
        let d = ParamDomain::new(vec![Marginal::Beta { a: 1.0, b: 1.0 }]).unwrap();
        let s = sample_parameters(&d, 100_000, 0).unwrap();
        let m = sample_mean(&s).unwrap()[0];
        assert!((m - 0.5).abs() < 0.005);
        assert!(s.iter().all(|x| d.contains(x).is_ok()));
    }

    #[test]
    fn reproducible() {
        let d = ParamDomain::uniform_cube(5, -1.0, 1.0).unwrap();
        assert_eq!(
            sample_parameters(&d, 50, 9).unwrap(),
            sample_parameters(&d, 50, 9).unwrap()
        );
        assert_ne!(
            sample_parameters(&d, 50, 9).unwrap(),
            sample_parameters(&d, 50, 10).unwrap()
        );
    }

    #[test]
    fn uniform_support() {
        let d = ParamDomain::uniform_cube(3, -1.0, 1.0).unwrap();
        let s = sample_parameters(&d, 10_000, 1).unwrap();
        let all: Vec<f64> = s.into_iter().flatten().collect();
        assert!(all.iter().cloned().fold(f64::INFINITY, f64::min) >= -1.0);
        assert!(all.iter().cloned().fold(f64::NEG_INFINITY, f64::max) <= 1.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ParamDomain::new(vec![Marginal::Beta { a: 0.0, b: 1.0 }]).is_err());
        assert!(ParamDomain::new(vec![Marginal::Uniform { lo: 1.0, hi: 1.0 }]).is_err());
        assert!(ParamDomain::new(vec![]).is_err());
        let bad = ParamDomain {
            marginals: vec![Marginal::Beta { a: -1.0, b: 2.0 }],
        };
        assert!(matches!(
            sample_parameters(&bad, 3, 0),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let d = ParamDomain::new(vec![
            Marginal::Beta { a: 2.0, b: 3.0 },
            Marginal::Uniform { lo: -1.0, hi: 1.0 },
        ])
        .unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<ParamDomain>(&s).unwrap(), d);
    }
}
