//! Residual-based error estimation and greedy selection of the reduced-basis
//! samples, both measured against the locally reduced (multiscale) model.
//!
//! Residuals of the three optimality equations at a reduced solution
//! `(Z₂F̄, Z₁ū, Z₁λ̄)`:
//!
//! ```text
//! r₁ = d − K Z₁ū + B Z₂F̄          (state equation,    X⁻¹ norm)
//! r₂ = t − M Z₁ū − Kᵀ Z₁λ̄          (adjoint equation,  X⁻¹ norm)
//! r₃ = Bᵀ Z₁λ̄ − 2β M_c Z₂F̄         (gradient equation, M_c⁻¹ norm)
//! ```
//!
//! with `X = K(μ̄) + M` on the local space. For affine problems each residual
//! is `V c(μ)` with μ-independent `V`; offline we store the triangular factor
//! `R̂` of `L⁻¹V = QR̂` (`X = LLᵀ`) so that online `‖r‖ = ‖R̂ c(μ)‖`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::fullorder::{
    kkt_residual_vectors, solve_condensed, KktBlocks, KktSystem, OptimalTriple,
};
use crate::gmsfem::{project_kkt_local, MultiscaleSpace};
use crate::linalg::SparseLu;
use crate::par;
use crate::rb::{
    downscale, online_solve, project_reduced, ReducedModel, ReducedSolution, ReducedSpaces,
    ReducedSystem,
};
use crate::scenario::{ProblemData, Scenario};
use crate::sparse::{dot, CsrMatrix};

/// Locally reduced model: the fine problem with its state space replaced by
/// the columns of the multiscale basis `R`.
#[derive(Clone)]
pub struct LocalModel {
    pub scenario: Arc<Scenario>,
    pub space: Arc<MultiscaleSpace>,
    /// Projected affine blocks, when the scenario is affine.
    pub blocks: Option<KktBlocks>,
    /// `X = K_l(μ̄) + M_l`.
    pub state_inner: CsrMatrix,
    pub control_inner: CsrMatrix,
}

impl LocalModel {
    pub fn new(scenario: Arc<Scenario>, space: Arc<MultiscaleSpace>) -> Result<Self> {
        let blocks = match &scenario.problem {
            ProblemData::Affine(b) => Some(project_kkt_local(b, &space)?),
            ProblemData::PerSample(_) => None,
        };
        let mut model = Self {
            control_inner: scenario.control_mass.clone(),
            state_inner: CsrMatrix::zeros(0, 0),
            scenario,
            space,
            blocks,
        };
        let reference = model.system(&model.scenario.reference_parameter())?;
        model.state_inner = CsrMatrix::linear_combination(&[
            (1.0, &reference.stiffness),
            (1.0, &reference.state_mass),
        ]);
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Local KKT data at `mu`.
    pub fn system(&self, mu: &[f64]) -> Result<KktSystem> {
        match &self.blocks {
            Some(b) => {
                self.scenario.domain.contains(mu)?;
                b.evaluate(mu)
            }
            None => self.scenario.system(mu)?.project_state(&self.space.basis),
        }
    }

    /// Local optimal triple (state/adjoint in multiscale coordinates).
    pub fn solve(&self, mu: &[f64]) -> Result<OptimalTriple> {
        solve_condensed(&self.system(mu)?, "local KKT solve")
    }

    /// Maps local state/adjoint coordinates to free fine dofs.
    pub fn to_fine(&self, t: &OptimalTriple) -> OptimalTriple {
        OptimalTriple {
            control: t.control.clone(),
            state: self.space.basis.mul_vec(&t.state),
            adjoint: self.space.basis.mul_vec(&t.adjoint),
            cost: t.cost,
        }
    }

    pub fn reduced_spaces(&self) -> ReducedSpaces {
        ReducedSpaces::new(
            self.scenario.state_mass.congruence(&self.space.basis),
            self.control_inner.clone(),
        )
    }
}

/// Dense lower Cholesky factor used to whiten residual families.
#[derive(Clone)]
pub enum RieszFactor {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

/// Dense fallback above this size would be wasteful; such inner products must
/// be diagonal.
const DENSE_RIESZ_LIMIT: usize = 6000;

impl RieszFactor {
    pub fn new(inner: &CsrMatrix, context: &str) -> Result<Self> {
        let n = inner.nrows();
        let diagonal = (0..n).all(|i| inner.row(i).0.iter().all(|&j| j == i));
        if diagonal {
            let d = inner.diagonal();
            if let Some(i) = d.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::SolverFailure {
                    context: format!("{context}: non-positive diagonal entry at {i}"),
                    condition_estimate: f64::INFINITY,
                });
            }
            return Ok(Self::Diagonal(d.iter().map(|v| v.sqrt()).collect()));
        }
        if n > DENSE_RIESZ_LIMIT {
            return Err(Error::InvalidArgument(format!(
                "{context}: {n} dofs too many for a dense factor"
            )));
        }
        let chol = Cholesky::new(inner.to_dense()).ok_or_else(|| Error::SolverFailure {
            context: format!("{context}: inner product not SPD"),
            condition_estimate: f64::INFINITY,
        })?;
        Ok(Self::Dense(chol.l()))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Diagonal(d) => d.len(),
            Self::Dense(l) => l.nrows(),
        }
    }

    /// `L⁻¹ V`.
    pub fn whiten(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Diagonal(d) => DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] / d[i]),
            Self::Dense(l) => l
                .solve_lower_triangular(v)
                .expect("Cholesky factor has a positive diagonal"),
        }
    }

    /// `‖r‖_{X⁻¹} = ‖L⁻¹ r‖`.
    pub fn dual_norm(&self, r: &[f64]) -> f64 {
        let y = self.whiten(&DMatrix::from_column_slice(r.len(), 1, r));
        y.norm()
    }
}

/// Estimator value and its three components (state, adjoint, gradient).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub components: [f64; 3],
}

impl Estimate {
    fn from_components(c: [f64; 3]) -> Self {
        Self {
            value: (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt(),
            components: c,
        }
    }
}

/// One residual family: whitened vectors factored as `Q R̂`, plus the Gramian.
#[derive(Debug, Clone)]
pub struct ResidualFamily {
    pub factor: DMatrix<f64>,
    pub gramian: DMatrix<f64>,
}

impl ResidualFamily {
    fn new(whitened: DMatrix<f64>) -> Self {
        let gramian = whitened.tr_mul(&whitened);
        let factor = if whitened.nrows() > whitened.ncols() {
            whitened.qr().r()
        } else {
            whitened
        };
        Self { factor, gramian }
    }

    pub fn norm(&self, c: &DVector<f64>) -> f64 {
        (&self.factor * c).norm()
    }

    /// `sqrt(cᵀGc)` straight from the Gramian.
    pub fn gramian_norm(&self, c: &DVector<f64>) -> f64 {
        c.dot(&(&self.gramian * c)).max(0.0).sqrt()
    }
}

fn hcat(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks
        .iter()
        .find(|b| b.ncols() > 0)
        .map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        if b.ncols() > 0 {
            out.view_mut((0, c0), (rows, b.ncols())).copy_from(b);
            c0 += b.ncols();
        }
    }
    out
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// Offline/online estimator for affine local models.
#[derive(Clone)]
pub struct AffineEstimator {
    pub reduced: ReducedModel,
    pub families: [ResidualFamily; 3],
    stiffness_terms: usize,
    target_terms: usize,
}

impl AffineEstimator {
    pub fn new(
        blocks: &KktBlocks,
        z1: &DMatrix<f64>,
        z2: &DMatrix<f64>,
        state_riesz: &RieszFactor,
        control_riesz: &RieszFactor,
    ) -> Result<Self> {
        check_len(
            "state Riesz dimension",
            blocks.num_state(),
            state_riesz.dim(),
        )?;
        check_len(
            "control Riesz dimension",
            blocks.num_control(),
            control_riesz.dim(),
        )?;
        let reduced = project_reduced(blocks, z1, z2)?;
        let pieces = blocks.stiffness.pieces();
        let bz2 = blocks.coupling.mul_dense(z2);
        let kz1: Vec<DMatrix<f64>> = par::map(pieces, |k| k.mul_dense(z1));
        let ktz1: Vec<DMatrix<f64>> = par::map(pieces, |k| k.tr_mul_dense(z1));

        let mut v1 = vec![column(&blocks.state_rhs.constant)];
        v1.extend(blocks.state_rhs.pieces.iter().map(|p| column(p)));
        v1.extend(kz1.iter().cloned());
        v1.push(bz2.clone());

        let mut v2 = vec![column(&blocks.target_rhs.constant)];
        v2.extend(blocks.target_rhs.pieces.iter().map(|p| column(p)));
        v2.push(blocks.state_mass.mul_dense(z1));
        v2.extend(ktz1);

        let v3 = [
            blocks.coupling.tr_mul_dense(z1),
            blocks.control_mass.mul_dense(z2),
        ];

        let families = [
            ResidualFamily::new(state_riesz.whiten(&hcat(&v1))),
            ResidualFamily::new(state_riesz.whiten(&hcat(&v2))),
            ResidualFamily::new(control_riesz.whiten(&hcat(&v3))),
        ];
        Ok(Self {
            reduced,
            families,
            stiffness_terms: pieces.len(),
            target_terms: blocks.target_rhs.pieces.len(),
        })
    }

    /// Coefficient vectors of the three residual families.
    pub fn coefficients(
        &self,
        theta: &[f64],
        phi: &[f64],
        sol: &ReducedSolution,
    ) -> [DVector<f64>; 3] {
        let (q, p) = (self.stiffness_terms, self.target_terms);
        let (n1, n2) = (sol.state.len(), sol.control.len());
        let mut c1 = Vec::with_capacity(1 + q + q * n1 + n2);
        c1.push(1.0);
        c1.extend_from_slice(theta);
        for t in theta {
            c1.extend(sol.state.iter().map(|u| -t * u));
        }
        c1.extend(sol.control.iter());
        let mut c2 = Vec::with_capacity(1 + p + n1 + q * n1);
        c2.push(1.0);
        c2.extend_from_slice(phi);
        c2.extend(sol.state.iter().map(|u| -u));
        for t in theta {
            c2.extend(sol.adjoint.iter().map(|l| -t * l));
        }
        let beta = self.reduced.beta;
        let mut c3: Vec<f64> = sol.adjoint.iter().copied().collect();
        c3.extend(sol.control.iter().map(|f| -2.0 * beta * f));
        [
            DVector::from_vec(c1),
            DVector::from_vec(c2),
            DVector::from_vec(c3),
        ]
    }

    /// Reduced solution and estimate at `mu`.
    pub fn estimate(&self, mu: &[f64]) -> Result<(ReducedSolution, Estimate)> {
        let theta = self.reduced.stiffness_coefficients.evaluate(mu)?;
        let phi = self.reduced.target_coefficients.evaluate(mu)?;
        let sol = online_solve(&self.reduced.evaluate_with(&theta, &phi))?;
        let c = self.coefficients(&theta, &phi, &sol);
        let est = Estimate::from_components([0, 1, 2].map(|k| self.families[k].norm(&c[k])));
        Ok((sol, est))
    }

    /// The same estimate evaluated as `sqrt(cᵀGc)` from the stored Gramians.
    pub fn gramian_estimate(&self, mu: &[f64]) -> Result<Estimate> {
        let theta = self.reduced.stiffness_coefficients.evaluate(mu)?;
        let phi = self.reduced.target_coefficients.evaluate(mu)?;
        let sol = online_solve(&self.reduced.evaluate_with(&theta, &phi))?;
        let c = self.coefficients(&theta, &phi, &sol);
        Ok(Estimate::from_components(
            [0, 1, 2].map(|k| self.families[k].gramian_norm(&c[k])),
        ))
    }
}

/// Estimate from an explicit local system: reduced solve by projection, then
/// residual vectors and dual norms from sparse solves with `X` and `M_c`.
pub fn direct_estimate(
    local: &KktSystem,
    z1: &DMatrix<f64>,
    z2: &DMatrix<f64>,
    state_inner: &CsrMatrix,
    control_inner: &CsrMatrix,
) -> Result<(ReducedSolution, Estimate)> {
    let sol = online_solve(&ReducedSystem::project(local, z1, z2)?)?;
    let t = downscale(z1, z2, &sol);
    let [r_grad, r_adj, r_state] = kkt_residual_vectors(local, &t);
    let x = SparseLu::new(state_inner, "state Riesz problem")?;
    let mc = SparseLu::new(control_inner, "control Riesz problem")?;
    let dual =
        |lu: &SparseLu, r: &[f64]| -> Result<f64> { Ok(dot(r, &lu.solve(r)?).max(0.0).sqrt()) };
    // gradient residual is stored as 2βM_cF − Bᵀλ; its norm is sign-free
    let c = [dual(&x, &r_state)?, dual(&x, &r_adj)?, dual(&mc, &r_grad)?];
    Ok((sol, Estimate::from_components(c)))
}

/// Per-sample local data for non-affine problems, cached across greedy
/// iterations (only basis-independent quantities are stored).
struct CachedSample {
    system: KktSystem,
}

/// Estimator for problems without an affine split: residuals are evaluated
/// directly on cached local systems.
pub struct SampleEstimator {
    samples: Vec<CachedSample>,
    state_riesz: RieszFactor,
    control_riesz: RieszFactor,
}

impl SampleEstimator {
    pub fn new(model: &LocalModel, training: &[Vec<f64>]) -> Result<Self> {
        let samples = par::try_map(training, |mu| {
            Ok::<_, Error>(CachedSample {
                system: model.system(mu)?,
            })
        })?;
        Ok(Self {
            samples,
            state_riesz: RieszFactor::new(&model.state_inner, "local inner product")?,
            control_riesz: RieszFactor::new(&model.control_inner, "control inner product")?,
        })
    }

    pub fn estimate(
        &self,
        index: usize,
        z1: &DMatrix<f64>,
        z2: &DMatrix<f64>,
    ) -> Result<(ReducedSolution, Estimate)> {
        let local = &self.samples[index].system;
        let sol = online_solve(&ReducedSystem::project(local, z1, z2)?)?;
        let t = downscale(z1, z2, &sol);
        let [r_grad, r_adj, r_state] = kkt_residual_vectors(local, &t);
        let c = [
            self.state_riesz.dual_norm(&r_state),
            self.state_riesz.dual_norm(&r_adj),
            self.control_riesz.dual_norm(&r_grad),
        ];
        Ok((sol, Estimate::from_components(c)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyOptions {
    pub tolerance: f64,
    pub max_samples: usize,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-5,
            max_samples: 8,
        }
    }
}

/// One row of the selection log: after adding `parameter` the space holds
/// `iteration` samples and the largest remaining estimate is `max_estimate`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyStep {
    pub iteration: usize,
    pub parameter: Vec<f64>,
    pub max_estimate: f64,
    pub components: [f64; 3],
    /// Index into the original training set, if the sample came from it.
    pub training_index: Option<usize>,
}

pub struct GreedyResult {
    pub spaces: ReducedSpaces,
    pub log: Vec<GreedyStep>,
    /// Local snapshots at the selected samples.
    pub snapshots: Vec<OptimalTriple>,
}

impl GreedyResult {
    pub fn selected(&self) -> &[Vec<f64>] {
        &self.spaces.samples
    }

    /// `iter,mu_1..mu_m,eps_N,delta_state,delta_adjoint,delta_gradient`.
    pub fn log_csv(&self) -> String {
        let m = self.log.first().map_or(0, |s| s.parameter.len());
        let mut s = String::from("iter");
        for i in 1..=m {
            let _ = write!(s, ",mu_{i}");
        }
        s.push_str(",eps_N,delta_state,delta_adjoint,delta_gradient\n");
        for step in &self.log {
            let _ = write!(s, "{}", step.iteration);
            for v in &step.parameter {
                let _ = write!(s, ",{v:e}");
            }
            let [a, b, c] = step.components;
            let _ = writeln!(s, ",{:e},{a:e},{b:e},{c:e}", step.max_estimate);
        }
        s
    }
}

/// Componentwise mean of the training set.
fn training_mean(training: &[Vec<f64>]) -> Vec<f64> {
    let n = training.len() as f64;
    let mut m = vec![0.0; training[0].len()];
    for t in training {
        m.iter_mut().zip(t).for_each(|(a, b)| *a += b / n);
    }
    m
}

enum Evaluator {
    Affine {
        blocks: KktBlocks,
        state: RieszFactor,
        control: RieszFactor,
    },
    Samples(SampleEstimator),
}

/// Greedy sample selection: start from the training mean, then repeatedly
/// add the remaining training sample with the largest estimate, while the
/// largest estimate exceeds the tolerance and fewer than `max_samples` are
/// selected.
pub fn greedy_train(
    model: &LocalModel,
    training: &[Vec<f64>],
    options: GreedyOptions,
) -> Result<GreedyResult> {
    if training.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if !(options.tolerance > 0.0) || options.max_samples == 0 {
        return Err(Error::InvalidArgument(
            "greedy tolerance and sample cap must be positive".into(),
        ));
    }
    let evaluator = match &model.blocks {
        Some(b) => Evaluator::Affine {
            blocks: b.clone(),
            state: RieszFactor::new(&model.state_inner, "local inner product")?,
            control: RieszFactor::new(&model.control_inner, "control inner product")?,
        },
        None => Evaluator::Samples(SampleEstimator::new(model, training)?),
    };
    let mut spaces = model.reduced_spaces();
    let mut remaining: Vec<usize> = (0..training.len()).collect();

    let first = if training.len() == 1 {
        training[0].clone()
    } else {
        training_mean(training)
    };
    let mut next_index = training.iter().position(|t| *t == first);
    let mut next = first;
    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    loop {
        let snap = model.solve(&next)?;
        spaces.enrich(&next, &snap)?;
        snapshots.push(snap);
        if let Some(i) = next_index {
            remaining.retain(|&r| r != i);
        }
        let (z1, z2) = (spaces.state_basis(), spaces.control_basis());
        let estimates: Vec<Estimate> = match &evaluator {
            Evaluator::Affine {
                blocks,
                state,
                control,
            } => {
                let est = AffineEstimator::new(blocks, &z1, &z2, state, control)?;
                par::try_map(&remaining, |&i| est.estimate(&training[i]).map(|(_, e)| e))?
            }
            Evaluator::Samples(s) => {
                par::try_map(&remaining, |&i| s.estimate(i, &z1, &z2).map(|(_, e)| e))?
            }
        };
        // argmax, ties to the smallest training index
        let best = estimates
            .iter()
            .enumerate()
            .fold(None::<(usize, Estimate)>, |acc, (k, e)| match acc {
                Some((_, b)) if b.value >= e.value => acc,
                _ => Some((k, *e)),
            });
        let (eps, comps) = best.map_or((0.0, [0.0; 3]), |(_, e)| (e.value, e.components));
        let n = spaces.num_samples();
        log.push(GreedyStep {
            iteration: n,
            parameter: next.clone(),
            max_estimate: eps,
            components: comps,
            training_index: next_index,
        });
        log::info!(
            "greedy N={n}: eps={eps:.3e} (remaining {})",
            remaining.len()
        );
        let Some((k, _)) = best else { break };
        if !(eps > options.tolerance) || n >= options.max_samples {
            break;
        }
        next_index = Some(remaining[k]);
        next = training[remaining[k]].clone();
    }
    Ok(GreedyResult {
        spaces,
        log,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ScenarioKind, ScenarioOptions};

    fn small_model(kind: ScenarioKind, n: usize, coarse: usize) -> LocalModel {
        let opts = ScenarioOptions {
            contrast: 1e2,
            eim_training: 30,
            ..Default::default()
        };
        let s = Arc::new(Scenario::build(kind, n, n, &opts).unwrap());
        let space = Arc::new(s.multiscale_space(coarse, coarse, 3).unwrap());
        LocalModel::new(s, space).unwrap()
    }

    #[test]
    fn affine_estimate_matches_direct() {
        let model = small_model(ScenarioKind::DistributedDeterministic, 12, 3);
        let training = model.scenario.sample(15, 3).unwrap();
        let res = greedy_train(
            &model,
            &training,
            GreedyOptions {
                tolerance: 1e-12,
                max_samples: 3,
            },
        )
        .unwrap();
        let (z1, z2) = (res.spaces.state_basis(), res.spaces.control_basis());
        let est = AffineEstimator::new(
            model.blocks.as_ref().unwrap(),
            &z1,
            &z2,
            &RieszFactor::new(&model.state_inner, "x").unwrap(),
            &RieszFactor::new(&model.control_inner, "c").unwrap(),
        )
        .unwrap();
        for mu in model.scenario.sample(10, 9).unwrap() {
            let (s1, e1) = est.estimate(&mu).unwrap();
            let (s2, e2) = direct_estimate(
                &model.system(&mu).unwrap(),
                &z1,
                &z2,
                &model.state_inner,
                &model.control_inner,
            )
            .unwrap();
            assert!((&s1.state - &s2.state).norm() <= 1e-10 * s1.state.norm());
            assert!(
                (e1.value - e2.value).abs() <= 1e-9 * e2.value,
                "{} vs {}",
                e1.value,
                e2.value
            );
            let g = est.gramian_estimate(&mu).unwrap();
            assert!((g.value - e2.value).abs() <= 1e-6 * e2.value);
        }
    }

    #[test]
    fn greedy_log_and_reproduction() {
        let model = small_model(ScenarioKind::DistributedDeterministic, 12, 3);
        let training = model.scenario.sample(20, 0).unwrap();
        let res = greedy_train(
            &model,
            &training,
            GreedyOptions {
                tolerance: 1e-14,
                max_samples: 4,
            },
        )
        .unwrap();
        assert_eq!(res.log.len(), 4);
        assert_eq!(res.spaces.num_samples(), 4);
        let idx: Vec<usize> = res.log.iter().filter_map(|s| s.training_index).collect();
        let mut dedup = idx.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), idx.len());
        assert!(res.log_csv().starts_with("iter,mu_1,eps_N"));
        // snapshots reproduced by the reduced model
        let (z1, z2) = (res.spaces.state_basis(), res.spaces.control_basis());
        let rm = project_reduced(model.blocks.as_ref().unwrap(), &z1, &z2).unwrap();
        for (mu, snap) in res.selected().iter().zip(&res.snapshots) {
            let t = downscale(&z1, &z2, &rm.solve(mu).unwrap());
            let rel = |a: &[f64], b: &[f64]| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    / b.iter().map(|y| y * y).sum::<f64>().sqrt()
            };
            assert!(rel(&t.state, &snap.state) < 1e-8);
            assert!(rel(&t.control, &snap.control) < 1e-8);
            assert!(rel(&t.adjoint, &snap.adjoint) < 1e-8);
            let (_, e) = direct_estimate(
                &model.system(mu).unwrap(),
                &z1,
                &z2,
                &model.state_inner,
                &model.control_inner,
            )
            .unwrap();
            assert!(e.value < 1e-8, "{}", e.value);
        }
    }

    #[test]
    fn single_training_sample() {
        let model = small_model(ScenarioKind::DistributedDeterministic, 8, 2);
        let res = greedy_train(&model, &[vec![0.4]], GreedyOptions::default()).unwrap();
        assert_eq!(res.log.len(), 1);
        assert_eq!(res.selected(), &[vec![0.4]]);
        assert!(greedy_train(&model, &[], GreedyOptions::default()).is_err());
    }

    #[test]
    fn sample_route_on_random_domain() {
        let model = small_model(ScenarioKind::RandomDomain, 10, 2);
        let training = model.scenario.sample(6, 0).unwrap();
        let res = greedy_train(
            &model,
            &training,
            GreedyOptions {
                tolerance: 1e-12,
                max_samples: 3,
            },
        )
        .unwrap();
        assert_eq!(res.spaces.num_samples(), 3);
        assert!(res.log.windows(2).all(|w| w[1].max_estimate.is_finite()));
    }
}
