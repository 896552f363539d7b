//! Empirical interpolation: affine surrogates `f(x, μ) ≈ Σ_m c_m(μ) q_m(x)`
//! for non-affine parameter-dependent fields.

use std::sync::Arc;

use crate::assembly::{check_bounds, AffineCoefficients};
use crate::error::{check_len, Error, Result};

pub const EIM_MAX_TERMS: usize = 50;
pub const EIM_TOLERANCE: f64 = 1e-6;

/// Point-wise access to a parametrized field: `value(i, μ) = f(x_i, μ)`.
pub type PointEvaluator = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone)]
pub struct EimSurrogate {
    /// Indices into the spatial point set.
    pub magic_points: Vec<usize>,
    /// `basis[m][i] = q_m(x_i)`, with `q_m(x_m) = 1` and `q_m(x_k) = 0` for `k < m`.
    pub basis: Vec<Vec<f64>>,
    /// `interpolation[(k, m)] = q_m(x_k)`; lower triangular with unit diagonal.
    pub interpolation: Vec<Vec<f64>>,
    /// Max training sup-norm error with `m` terms, `m = 0..=len`.
    pub residual_history: Vec<f64>,
    pub tolerance: f64,
    /// False when the tolerance was not reached within the cap.
    pub converged: bool,
}

fn sup_norm(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold(
        (0, 0.0),
        |(im, m), (i, x)| if x.abs() > m { (i, x.abs()) } else { (im, m) },
    )
}

/// Greedy magic-point construction from training snapshots
/// (`snapshots[j][i] = f(x_i, μ_j)`).
pub fn eim_build(snapshots: &[Vec<f64>], tol: f64, max_terms: usize) -> Result<EimSurrogate> {
    let Some(first) = snapshots.first() else {
        return Err(Error::EmptyTrainingSet);
    };
    let n = first.len();
    for s in snapshots {
        check_len("EIM snapshot", n, s.len())?;
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "EIM tolerance must be positive, got {tol}"
        )));
    }
    let scale = snapshots.iter().map(|s| sup_norm(s).1).fold(0.0, f64::max);
    let floor = 1e-14 * scale.max(f64::MIN_POSITIVE);
    let mut residuals: Vec<Vec<f64>> = snapshots.to_vec();
    let mut out = EimSurrogate {
        magic_points: Vec::new(),
        basis: Vec::new(),
        interpolation: Vec::new(),
        residual_history: Vec::new(),
        tolerance: tol,
        converged: false,
    };
    loop {
        let errs: Vec<(usize, f64)> = residuals.iter().map(|r| sup_norm(r)).collect();
        let (worst, &(point, err)) = errs.iter().enumerate().fold((0, &errs[0]), |best, (j, e)| {
            if e.1 > best.1 .1 {
                (j, e)
            } else {
                best
            }
        });
        out.residual_history.push(err);
        if err <= tol {
            out.converged = true;
            break;
        }
        if err <= floor || out.basis.len() >= max_terms {
            break;
        }
        let pivot = residuals[worst][point];
        let q: Vec<f64> = residuals[worst].iter().map(|v| v / pivot).collect();
        for r in residuals.iter_mut() {
            let c = r[point];
            for (ri, qi) in r.iter_mut().zip(&q) {
                *ri -= c * qi;
            }
        }
        // row k holds q_0..q_k at x_k; entries above the diagonal vanish
        let mut row: Vec<f64> = out.basis.iter().map(|b| b[point]).collect();
        row.push(1.0);
        out.interpolation.push(row);
        out.magic_points.push(point);
        out.basis.push(q);
    }
    if !out.converged {
        log::warn!(
            "EIM stopped at {} terms with error {:.3e} above tolerance {:.1e}",
            out.basis.len(),
            out.residual_history.last().copied().unwrap_or(f64::NAN),
            tol
        );
    }
    Ok(out)
}

impl EimSurrogate {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.basis.first().map_or(0, Vec::len)
    }

    /// Interpolant of the field with the given values at the magic points.
    pub fn reconstruct(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.num_points()];
        for (c, q) in coefficients.iter().zip(&self.basis) {
            for (fi, qi) in f.iter_mut().zip(q) {
                *fi += c * qi;
            }
        }
        f
    }
}

/// Coefficients from field values at the magic points (forward substitution).
pub fn eim_evaluate(surrogate: &EimSurrogate, magic_values: &[f64]) -> Result<Vec<f64>> {
    check_len(
        "EIM magic-point values",
        surrogate.len(),
        magic_values.len(),
    )?;
    let mut c = Vec::with_capacity(surrogate.len());
    for (k, row) in surrogate.interpolation.iter().enumerate() {
        let s: f64 = row[..k].iter().zip(&c).map(|(a, b)| a * b).sum();
        c.push((magic_values[k] - s) / row[k]);
    }
    Ok(c)
}

/// [`AffineCoefficients`] backed by an EIM surrogate: evaluates the true field
/// only at the magic points.
pub struct EimCoefficients {
    surrogate: Arc<EimSurrogate>,
    field: PointEvaluator,
    bounds: Option<Vec<(f64, f64)>>,
}

impl EimCoefficients {
    pub fn new(surrogate: Arc<EimSurrogate>, field: PointEvaluator) -> Self {
        Self {
            surrogate,
            field,
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn surrogate(&self) -> &EimSurrogate {
        &self.surrogate
    }
}

impl AffineCoefficients for EimCoefficients {
    fn num_terms(&self) -> usize {
        self.surrogate.len()
    }

    fn evaluate(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if let Some(b) = &self.bounds {
            check_bounds(mu, b)?;
        }
        let values: Vec<f64> = self
            .surrogate
            .magic_points
            .iter()
            .map(|&i| (self.field)(i, mu))
            .collect();
        eim_evaluate(&self.surrogate, &values)
    }
}
