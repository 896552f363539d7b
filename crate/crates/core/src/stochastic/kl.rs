//! Karhunen–Loève expansion of the exponential covariance on [0, 1].

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone)]
pub struct KlField {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
    /// `eigenfunctions[n][i]` = φ_n(points[i]), with Σ_i w_i φ_n(x_i)² = 1.
    pub eigenfunctions: Vec<Vec<f64>>,
    pub sigma: f64,
}

pub fn exponential_covariance(x: f64, z: f64) -> f64 {
    (-(x - z).abs()).exp()
}

/// Trapezoid weights on sorted points.
pub fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let n = points.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = points[i + 1] - points[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Nyström discretization on `points` with trapezoid weights: eigenpairs of
/// `W^{1/2} C W^{1/2}`.
pub fn kl_expand(points: &[f64], terms: usize, sigma: f64) -> Result<KlField> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "KL grid needs at least two points".into(),
        ));
    }
    if terms == 0 || terms > n {
        return Err(Error::InvalidArgument(format!(
            "cannot take {terms} KL terms on {n} points"
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "KL amplitude must be non-negative, got {sigma}"
        )));
    }
    let weights = trapezoid_weights(points);
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| {
        sw[i] * exponential_covariance(points[i], points[j]) * sw[j]
    });
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut eigenvalues = Vec::with_capacity(terms);
    let mut eigenfunctions = Vec::with_capacity(terms);
    for &k in order.iter().take(terms) {
        eigenvalues.push(eig.eigenvalues[k]);
        let mut phi: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, k)] / sw[i]).collect();
        // deterministic sign: largest-magnitude entry positive
        let imax = (0..n).fold(0, |m, i| if phi[i].abs() > phi[m].abs() { i } else { m });
        if phi[imax] < 0.0 {
            phi.iter_mut().for_each(|v| *v = -*v);
        }
        eigenfunctions.push(phi);
    }
    Ok(KlField {
        points: points.to_vec(),
        weights,
        eigenvalues,
        eigenfunctions,
        sigma,
    })
}

/// Uniform grid with `n` points on [0, 1].
pub fn uniform_points(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

impl KlField {
    pub fn terms(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `σ Σ √λ_n φ_n ξ_n` at the grid points.
    pub fn realize(&self, xi: &[f64]) -> Result<Vec<f64>> {
        check_len("KL coordinates", self.terms(), xi.len())?;
        let mut s = vec![0.0; self.points.len()];
        for ((l, phi), &x) in self.eigenvalues.iter().zip(&self.eigenfunctions).zip(xi) {
            let c = self.sigma * l.max(0.0).sqrt() * x;
            for (si, p) in s.iter_mut().zip(phi) {
                *si += c * p;
            }
        }
        Ok(s)
    }

    /// Bound `σ Σ √λ_n max|φ_n|` on `sup|s|` for `|ξ_n| ≤ 1`.
    pub fn amplitude_bound(&self) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.eigenfunctions)
            .map(|(l, phi)| {
                self.sigma * l.max(0.0).sqrt() * phi.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .sum()
    }

    /// Captured fraction `Σ_{n≤k} λ_n / trace` for k = 1..terms, where the
    /// trace of the discretized operator is `Σ w_i C(x_i, x_i) = Σ w_i`.
    pub fn energy_fractions(&self) -> Vec<f64> {
        let trace: f64 = self.weights.iter().sum();
        let mut acc = 0.0;
        self.eigenvalues
            .iter()
            .map(|l| {
                acc += l;
                acc / trace
            })
            .collect()
    }
}

/// Realizes `s` from ξ.
pub fn realize_boundary(kl: &KlField, xi: &[f64]) -> Result<Vec<f64>> {
    if xi.iter().any(|x| x.abs() > 1.0) {
        return Err(Error::OutOfDomain {
            value: xi.to_vec(),
            reason: "KL coordinates must lie in [-1, 1]".into(),
        });
    }
    kl.realize(xi)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Leading eigenvalue of exp(−|x−z|) on an interval of length one:
    /// λ = 2/(1+ω²) with ω the first root of 1 − ω tan(ω/2) = 0.
    fn analytic_first_eigenvalue() -> f64 {
        let f = |w: f64| 1.0 - w * (w / 2.0).tan();
        let (mut a, mut b) = (0.5, 2.5);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(a) * f(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        let w = 0.5 * (a + b);
        2.0 / (1.0 + w * w)
    }

    #[test]
    fn spectrum_positive_and_sorted() {
        let kl = kl_expand(&uniform_points(200), 20, 0.1).unwrap();
        assert!(kl.eigenvalues.iter().all(|&l| l > 0.0));
        assert!(kl.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let fr = kl.energy_fractions();
        assert!(fr.windows(2).all(|w| w[0] <= w[1]));
        assert!(*fr.last().unwrap() <= 1.0);
        for phi in &kl.eigenfunctions {
            let n: f64 = phi.iter().zip(&kl.weights).map(|(p, w)| w * p * p).sum();
            assert!((n - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn first_eigenvalue_matches_transcendental_root() {
        let kl = kl_expand(&uniform_points(400), 1, 1.0).unwrap();
        let exact = analytic_first_eigenvalue();
        assert!(
            (kl.eigenvalues[0] - exact).abs() < 1e-4 * exact,
            "{} vs {exact}",
            kl.eigenvalues[0]
        );
    }

    #[test]
    fn realization_properties() {
        let kl = kl_expand(&uniform_points(51), 5, 0.1).unwrap();
        assert!(realize_boundary(&kl, &[0.0; 5])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let xi = [0.3, -0.2, 0.9, 0.1, -0.7];
        let s = kl.realize(&xi).unwrap();
        let s2 = kl.realize(&xi.map(|x| 0.5 * x)).unwrap();
        assert!(s.iter().zip(&s2).all(|(a, b)| (0.5 * a - b).abs() < 1e-15));
        let bound = kl.amplitude_bound();
        assert!(s.iter().all(|v| v.abs() <= bound));
        assert!(realize_boundary(&kl, &[1.5, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(kl.realize(&[0.0; 3]).is_err());
    }

    #[test]
    fn sample_mean_near_zero() {
        use rand::{Rng, SeedableRng};
        let kl = kl_expand(&uniform_points(21), 5, 0.1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut mean = [0.0; 21];
        let n = 20_000;
        for _ in 0..n {
            let xi: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..=1.0)).collect();
            for (m, v) in mean.iter_mut().zip(kl.realize(&xi).unwrap()) {
                *m += v / n as f64;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 3e-3));
    }
}
