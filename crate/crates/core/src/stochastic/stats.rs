//! Monte Carlo moments and sample-averaged relative errors.

use std::fmt::Write as _;

use crate::error::{check_len, Error, Result};
use crate::fullorder::OptimalTriple;
use crate::grid::FineGrid;
use crate::sparse::CsrMatrix;

/// Streaming mean/variance (Welford), mergeable across partitions.
#[derive(Debug, Clone, Default)]
pub struct MomentAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        check_len("moment sample", self.mean.len(), x.len())?;
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
        Ok(())
    }

    /// Chan et al. pairwise combination.
    pub fn merge(mut self, other: &Self) -> Self {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other.clone();
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
        self
    }

    pub fn finish(&self) -> Result<Moments> {
        if self.count < 2 {
            return Err(Error::InsufficientSamples(format!(
                "variance needs at least two samples, got {}",
                self.count
            )));
        }
        let variance: Vec<f64> = self
            .m2
            .iter()
            .map(|s| s / (self.count - 1) as f64)
            .collect();
        Ok(Moments {
            mean: self.mean.clone(),
            std_dev: variance.iter().map(|v| v.sqrt()).collect(),
            variance,
            count: self.count,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Unbiased (divides by `n − 1`).
    pub variance: Vec<f64>,
    pub std_dev: Vec<f64>,
    pub count: usize,
}

pub fn moments(samples: &[Vec<f64>]) -> Result<Moments> {
    let dim = samples.first().map_or(0, Vec::len);
    let mut acc = MomentAccumulator::new(dim);
    for s in samples {
        acc.push(s)?;
    }
    acc.finish()
}

/// Sample-averaged relative errors of the approximate optimal triples.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorMetrics {
    pub state: f64,
    pub control: f64,
    pub adjoint: f64,
    /// Energy-norm errors, when per-sample stiffness matrices are supplied.
    pub state_energy: Option<f64>,
    pub adjoint_energy: Option<f64>,
    pub samples: usize,
    /// Per-metric count of samples skipped for a zero reference norm.
    pub excluded: usize,
}

/// One reference/approximation pair; vectors must live in the index space of
/// the supplied matrices.
pub struct SamplePair<'a> {
    pub reference: &'a OptimalTriple,
    pub approx: &'a OptimalTriple,
    /// Stiffness `a(·,·; μ_i)` for energy errors.
    pub stiffness: Option<&'a CsrMatrix>,
}

fn relative(reference: &[f64], approx: &[f64], gram: &CsrMatrix) -> Option<f64> {
    let diff: Vec<f64> = reference.iter().zip(approx).map(|(a, b)| a - b).collect();
    let den = gram.bilinear(reference, reference).max(0.0).sqrt();
    if den == 0.0 {
        return None;
    }
    Some(gram.bilinear(&diff, &diff).max(0.0).sqrt() / den)
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
    skipped: usize,
}

impl Mean {
    fn add(&mut self, v: Option<f64>) {
        match v {
            Some(v) => {
                self.sum += v;
                self.n += 1;
            }
            None => self.skipped += 1,
        }
    }

    fn value(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

pub fn error_metrics(
    pairs: &[SamplePair<'_>],
    state_mass: &CsrMatrix,
    control_mass: &CsrMatrix,
) -> Result<ErrorMetrics> {
    if pairs.is_empty() {
        return Err(Error::InsufficientSamples("no samples to compare".into()));
    }
    let (mut u, mut f, mut l, mut uh, mut lh) = (
        Mean::default(),
        Mean::default(),
        Mean::default(),
        Mean::default(),
        Mean::default(),
    );
    let energy = pairs.iter().all(|p| p.stiffness.is_some());
    for p in pairs {
        let (r, a) = (p.reference, p.approx);
        check_len("approximate state", r.state.len(), a.state.len())?;
        check_len("approximate control", r.control.len(), a.control.len())?;
        check_len("approximate adjoint", r.adjoint.len(), a.adjoint.len())?;
        u.add(relative(&r.state, &a.state, state_mass));
        f.add(relative(&r.control, &a.control, control_mass));
        l.add(relative(&r.adjoint, &a.adjoint, state_mass));
        if let (true, Some(k)) = (energy, p.stiffness) {
            uh.add(relative(&r.state, &a.state, k));
            lh.add(relative(&r.adjoint, &a.adjoint, k));
        }
    }
    let excluded = [&u, &f, &l, &uh, &lh]
        .iter()
        .map(|m| m.skipped)
        .max()
        .unwrap_or(0);
    if excluded > 0 {
        log::warn!("{excluded} sample(s) with zero reference norm excluded from error averages");
    }
    Ok(ErrorMetrics {
        state: u.value(),
        control: f.value(),
        adjoint: l.value(),
        state_energy: energy.then(|| uh.value()),
        adjoint_energy: energy.then(|| lh.value()),
        samples: pairs.len(),
        excluded,
    })
}

/// Nodal field as `i,j,value` rows.
pub fn nodal_field_csv(grid: &FineGrid, values: &[f64]) -> Result<String> {
    check_len("nodal field", grid.num_nodes(), values.len())?;
    let mut s = String::from("i,j,value\n");
    for (k, v) in values.iter().enumerate() {
        let (i, j) = grid.node_ij(k);
        let _ = writeln!(s, "{i},{j},{v:e}");
    }
    Ok(s)
}

/// Element field averaged onto grid cells, as `i,j,value` rows.
pub fn element_field_csv(grid: &FineGrid, values: &[f64]) -> Result<String> {
    check_len("element field", grid.num_elements(), values.len())?;
    let mut s = String::from("i,j,value\n");
    for c in 0..values.len() / 2 {
        let (i, j) = grid.element_cell(2 * c);
        let _ = writeln!(s, "{i},{j},{:e}", 0.5 * (values[2 * c] + values[2 * c + 1]));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_pass(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = samples.len() as f64;
        let d = samples[0].len();
        let mean: Vec<f64> = (0..d)
            .map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n)
            .collect();
        let var = (0..d)
            .map(|i| {
                samples
                    .iter()
                    .map(|s| (s[i] - mean[i]).powi(2))
                    .sum::<f64>()
                    / (n - 1.0)
            })
            .collect();
        (mean, var)
    }

    #[test]
    fn constant_samples_have_zero_variance() {
        let m = moments(&vec![vec![1.5, -2.0]; 7]).unwrap();
        assert_eq!(m.variance, vec![0.0, 0.0]);
        assert_eq!(m.mean, vec![1.5, -2.0]);
        assert!(moments(&[vec![1.0]]).is_err());
    }

    proptest! {
        #[test]
        fn welford_matches_two_pass(samples in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..40), split in 0usize..40) {
            let m = moments(&samples).unwrap();
            let (mean, var) = two_pass(&samples);
            for i in 0..3 {
                prop_assert!((m.mean[i] - mean[i]).abs() <= 1e-12 * (1.0 + mean[i].abs()) * 1e3);
                prop_assert!((m.variance[i] - var[i]).abs() <= 1e-12 * (1.0 + var[i].abs()) * 1e3);
            }
            let k = split.min(samples.len());
            let mut a = MomentAccumulator::new(3);
            let mut b = MomentAccumulator::new(3);
            samples[..k].iter().for_each(|s| a.push(s).unwrap());
            samples[k..].iter().for_each(|s| b.push(s).unwrap());
            let merged = a.merge(&b).finish().unwrap();
            for i in 0..3 {
                prop_assert!((merged.variance[i] - var[i]).abs() <= 1e-9 * (1.0 + var[i].abs()));
            }
        }

        #[test]
        fn mean_is_linear(samples in prop::collection::vec(prop::collection::vec(-10f64..10.0, 2), 2..20), c in -5f64..5.0) {
            let scaled: Vec<Vec<f64>> = samples.iter().map(|s| s.iter().map(|v| c * v + 1.0).collect()).collect();
            let (m0, m1) = (moments(&samples).unwrap(), moments(&scaled).unwrap());
            for i in 0..2 {
                prop_assert!((m1.mean[i] - (c * m0.mean[i] + 1.0)).abs() < 1e-10);
            }
        }
    }

    fn triple(u: Vec<f64>, f: Vec<f64>, l: Vec<f64>) -> OptimalTriple {
        OptimalTriple {
            control: f,
            state: u,
            adjoint: l,
            cost: 0.0,
        }
    }

    #[test]
    fn hand_computed_errors() {
        let m = CsrMatrix::from_diagonal(&[1.0, 4.0]);
        let mc = CsrMatrix::identity(1);
        let r1 = triple(vec![1.0, 0.0], vec![2.0], vec![0.0, 1.0]);
        let a1 = triple(vec![1.0, 0.5], vec![1.0], vec![0.0, 1.0]);
        let r2 = triple(vec![0.0, 1.0], vec![1.0], vec![3.0, 0.0]);
        let a2 = triple(vec![0.0, 1.0], vec![1.5], vec![0.0, 0.0]);
        let pairs = [
            SamplePair {
                reference: &r1,
                approx: &a1,
                stiffness: Some(&m),
            },
            SamplePair {
                reference: &r2,
                approx: &a2,
                stiffness: Some(&m),
            },
        ];
        let e = error_metrics(&pairs, &m, &mc).unwrap();
        // u: ‖(0,.5)‖_M/‖(1,0)‖_M = 1, then 0; f: 1/2 and 1/2; λ: 0 and 1
        assert!((e.state - 0.5).abs() < 1e-12);
        assert!((e.control - 0.5).abs() < 1e-12);
        assert!((e.adjoint - 0.5).abs() < 1e-12);
        assert_eq!(e.state_energy, Some(e.state));
        let same = [SamplePair {
            reference: &r1,
            approx: &r1,
            stiffness: None,
        }];
        let z = error_metrics(&same, &m, &mc).unwrap();
        assert_eq!(
            (z.state, z.control, z.adjoint, z.state_energy),
            (0.0, 0.0, 0.0, None)
        );
    }

    #[test]
    fn errors_invariant_under_common_scaling() {
        let m = CsrMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let r = triple(
            vec![1.0, 2.0, 3.0],
            vec![1.0, -1.0, 0.5],
            vec![0.3, 0.2, 0.1],
        );
        let a = triple(
            vec![1.1, 2.0, 2.9],
            vec![0.9, -1.0, 0.6],
            vec![0.3, 0.25, 0.1],
        );
        let s = |t: &OptimalTriple| {
            triple(
                t.state.iter().map(|v| 7.0 * v).collect(),
                t.control.iter().map(|v| 7.0 * v).collect(),
                t.adjoint.iter().map(|v| 7.0 * v).collect(),
            )
        };
        let (rs, as_) = (s(&r), s(&a));
        let e0 = error_metrics(
            &[SamplePair {
                reference: &r,
                approx: &a,
                stiffness: None,
            }],
            &m,
            &m,
        )
        .unwrap();
        let e1 = error_metrics(
            &[SamplePair {
                reference: &rs,
                approx: &as_,
                stiffness: None,
            }],
            &m,
            &m,
        )
        .unwrap();
        assert!((e0.state - e1.state).abs() < 1e-14 && (e0.control - e1.control).abs() < 1e-14);
    }
}
