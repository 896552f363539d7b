//! The three model problems: a high-contrast distributed control problem, a
//! control problem on a random domain, and a Neumann boundary control problem.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_boundary_coupling, assemble_boundary_mass, assemble_coefficient_stiffness,
    assemble_control_mass, assemble_coupling, assemble_load, assemble_state_mass,
    assemble_stiffness, assemble_stiffness_signed, assemble_weighted_control_mass,
    assemble_weighted_coupling, assemble_weighted_mass, AffineOperatorFamily, AffineVectorFamily,
    DofLayout, ElementCoefficient, Field, FnCoefficients,
};
use crate::error::{Error, Result};
use crate::fullorder::{
    apply_dirichlet, build_kkt, constant_operator, constant_vector, solve_kkt, KktBlocks,
    KktSystem, NodalProblem, OptimalTriple,
};
use crate::gmsfem::{build_multiscale_space, GmsfemOptions, MultiscaleSpace};
use crate::grid::{FineGrid, Point};
use crate::par;
use crate::sparse::CsrMatrix;
use crate::stochastic::eim::{
    eim_build, EimCoefficients, EimSurrogate, PointEvaluator, EIM_MAX_TERMS,
};
use crate::stochastic::kl::{kl_expand, realize_boundary, uniform_points, KlField};
use crate::stochastic::params::{sample_parameters, Marginal, ParamDomain};
use crate::stochastic::{transform_coefficients, HarmonicMapper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// High-contrast affine coefficient and target, homogeneous Dirichlet data.
    DistributedDeterministic,
    /// KL-perturbed bottom edge, pulled back to the unit square.
    RandomDomain,
    /// Pure Neumann state equation with boundary control; EIM surrogates.
    NeumannBoundary,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::DistributedDeterministic => "distributed-deterministic",
            Self::RandomDomain => "random-domain",
            Self::NeumannBoundary => "neumann-boundary",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distributed-deterministic" | "distributed" => Ok(Self::DistributedDeterministic),
            "random-domain" => Ok(Self::RandomDomain),
            "neumann-boundary" | "neumann" => Ok(Self::NeumannBoundary),
            other => Err(Error::Parse(format!("unknown experiment '{other}'"))),
        }
    }
}

/// Scenario knobs that are not grid sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOptions {
    pub beta: f64,
    /// Seed of the synthetic high-contrast layout.
    pub field_seed: u64,
    /// Contrast of channels and inclusions against the background.
    pub contrast: f64,
    pub kl_terms: usize,
    pub kl_sigma: f64,
    pub eim_tolerance: f64,
    pub eim_training: usize,
    pub eim_seed: u64,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            beta: 1e-2,
            field_seed: 0,
            contrast: 1e4,
            kl_terms: 5,
            kl_sigma: 0.1,
            eim_tolerance: 1e-6,
            eim_training: 100,
            eim_seed: 0,
        }
    }
}

/// Fine system at one parameter for problems without an affine split.
pub trait SampleAssembler: Send + Sync {
    fn system(&self, mu: &[f64], beta: f64) -> Result<KktSystem>;
}

#[derive(Clone)]
pub enum ProblemData {
    Affine(KktBlocks),
    PerSample(Arc<dyn SampleAssembler>),
}

#[derive(Clone)]
pub struct EimSurrogates {
    pub coefficient: Arc<EimSurrogate>,
    pub target: Arc<EimSurrogate>,
}

#[derive(Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub grid: FineGrid,
    pub domain: ParamDomain,
    pub layout: DofLayout,
    pub beta: f64,
    pub problem: ProblemData,
    /// Diffusion coefficient at the mean parameter; drives the local spectral basis.
    pub reference_coefficient: ElementCoefficient,
    /// Inner products on the free state dofs and the control dofs.
    pub state_mass: CsrMatrix,
    pub control_mass: CsrMatrix,
    pub eim: Option<EimSurrogates>,
}

impl Scenario {
    pub fn build(
        kind: ScenarioKind,
        nx: usize,
        ny: usize,
        options: &ScenarioOptions,
    ) -> Result<Self> {
        match kind {
            ScenarioKind::DistributedDeterministic => distributed(nx, ny, options),
            ScenarioKind::RandomDomain => random_domain(nx, ny, options),
            ScenarioKind::NeumannBoundary => neumann(nx, ny, options),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.problem, ProblemData::Affine(_))
    }

    pub fn reference_parameter(&self) -> Vec<f64> {
        self.domain.mean()
    }

    /// Fine KKT data at `mu`.
    pub fn system(&self, mu: &[f64]) -> Result<KktSystem> {
        self.domain.contains(mu)?;
        match &self.problem {
            ProblemData::Affine(blocks) => blocks.evaluate(mu),
            ProblemData::PerSample(a) => a.system(mu, self.beta),
        }
    }

    pub fn solve(&self, mu: &[f64]) -> Result<OptimalTriple> {
        solve_kkt(&crate::fullorder::FullKkt::new(self.system(mu)?)?)
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        let mut s = self.clone();
        if let ProblemData::Affine(b) = &self.problem {
            s.problem = ProblemData::Affine(b.with_beta(beta)?);
        } else if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidRegularization(beta));
        }
        s.beta = beta;
        Ok(s)
    }

    pub fn multiscale_space(
        &self,
        ncx: usize,
        ncy: usize,
        modes: usize,
    ) -> Result<MultiscaleSpace> {
        build_multiscale_space(
            &self.grid,
            &self.reference_coefficient,
            GmsfemOptions { ncx, ncy, modes },
            &self.layout,
            &self.state_mass,
        )
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        sample_parameters(&self.domain, n, seed)
    }
}

// ---------------------------------------------------------------------------
// High-contrast distributed problem

/// Procedural high-contrast layout: wavy channels and circular inclusions.
#[derive(Debug, Clone)]
pub struct ContrastLayout {
    pub channels: Vec<Channel>,
    /// `(x, y, radius)`.
    pub inclusions: Vec<(f64, f64, f64)>,
}

/// Wavy horizontal strip `|y - height - amplitude·sin(2π k x + phase)| < half_width`
/// over `start < x < end`. Channels stop short of the boundary so the
/// Dirichlet data does not ground them.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub height: f64,
    pub amplitude: f64,
    pub wavenumber: f64,
    pub phase: f64,
    pub half_width: f64,
    pub start: f64,
    pub end: f64,
}

impl Channel {
    pub fn contains(&self, x: Point) -> bool {
        let y =
            self.height + self.amplitude * (2.0 * PI * self.wavenumber * x[0] + self.phase).sin();
        x[0] > self.start && x[0] < self.end && (x[1] - y).abs() < self.half_width
    }
}

impl ContrastLayout {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = (0..4)
            .map(|i| Channel {
                height: 0.15 + 0.7 * (i as f64 + rng.random_range(0.2..0.8)) / 4.0,
                amplitude: rng.random_range(0.02..0.06),
                wavenumber: rng.random_range(1.0..2.5),
                phase: rng.random_range(0.0..2.0 * PI),
                half_width: 0.02,
                start: rng.random_range(0.08..0.15),
                end: rng.random_range(0.85..0.92),
            })
            .collect();
        let inclusions = (0..14)
            .map(|_| {
                (
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.025..0.05),
                )
            })
            .collect();
        Self {
            channels,
            inclusions,
        }
    }

    pub fn in_channel(&self, x: Point) -> bool {
        self.channels.iter().any(|c| c.contains(x))
    }

    pub fn in_inclusion(&self, x: Point) -> bool {
        self.inclusions
            .iter()
            .any(|&(cx, cy, r)| (x[0] - cx).powi(2) + (x[1] - cy).powi(2) < r * r)
    }

    /// Channel field and inclusion field, each `1` in the background and
    /// `contrast` on its features, sampled at element centroids.
    pub fn fields(&self, grid: &FineGrid, contrast: f64) -> (Vec<f64>, Vec<f64>) {
        let c = grid.centroids();
        let k1 = c
            .iter()
            .map(|&x| if self.in_channel(x) { contrast } else { 1.0 })
            .collect();
        let k2 = c
            .iter()
            .map(|&x| if self.in_inclusion(x) { contrast } else { 1.0 })
            .collect();
        (k1, k2)
    }
}

pub fn distributed_coefficients(mu: f64) -> [f64; 2] {
    [
        mu * mu + (mu + 0.5).powi(2),
        (1.0 + mu.exp() * (mu / 3.0).cos()).powi(2),
    ]
}

pub fn distributed_target_coefficients(mu: f64) -> [f64; 4] {
    [mu, mu.cos(), mu * mu, mu.sin()]
}

/// The four spatial shapes of the distributed target.
pub fn distributed_target_shapes(x: Point) -> [f64; 4] {
    let [a, b] = x;
    [
        a * b * (a + 1.0) * (b - 1.0),
        a * a * b * (a - 1.0) * (b + 1.0),
        a * b.powi(3) * (a - 1.0) * (b - 1.0),
        (a / 3.0).exp() * b * b,
    ]
}

fn distributed(nx: usize, ny: usize, options: &ScenarioOptions) -> Result<Scenario> {
    let grid = FineGrid::new(nx, ny)?;
    let domain = ParamDomain::new(vec![Marginal::Beta { a: 1.0, b: 1.0 }])?;
    let bounds = domain.bounds();
    let (k1, k2) = ContrastLayout::generate(options.field_seed).fields(&grid, options.contrast);
    let stiffness = AffineOperatorFamily::new(
        vec![
            assemble_stiffness(&grid, &k1)?,
            assemble_stiffness(&grid, &k2)?,
        ],
        Arc::new(
            FnCoefficients::new(2, |m| distributed_coefficients(m[0]).to_vec())
                .with_bounds(bounds.clone()),
        ),
    )?;
    let shapes: Vec<[f64; 4]> = grid
        .nodes()
        .iter()
        .map(|&x| distributed_target_shapes(x))
        .collect();
    let target = AffineVectorFamily::new(
        vec![0.0; grid.num_nodes()],
        (0..4)
            .map(|q| shapes.iter().map(|s| s[q]).collect())
            .collect(),
        Arc::new(
            FnCoefficients::new(4, |m| distributed_target_coefficients(m[0]).to_vec())
                .with_bounds(bounds),
        ),
    )?;
    let problem = NodalProblem {
        beta: options.beta,
        control_mass: assemble_control_mass(&grid),
        coupling: assemble_coupling(&grid),
        state_mass: assemble_state_mass(&grid),
        stiffness,
        source: vec![0.0; grid.num_nodes()],
        target,
    };
    let layout = DofLayout::dirichlet(&grid, &vec![0.0; grid.boundary_nodes().len()])?;
    let blocks = apply_dirichlet(&problem, &layout)?;
    let [t1, t2] = distributed_coefficients(domain.mean()[0]);
    let reference: Vec<f64> = k1.iter().zip(&k2).map(|(a, b)| t1 * a + t2 * b).collect();
    Ok(Scenario {
        kind: ScenarioKind::DistributedDeterministic,
        state_mass: blocks.state_mass.clone(),
        control_mass: blocks.control_mass.clone(),
        problem: ProblemData::Affine(blocks),
        reference_coefficient: ElementCoefficient::Scalar(reference),
        grid,
        domain,
        layout,
        beta: options.beta,
        eim: None,
    })
}

// ---------------------------------------------------------------------------
// Random domain

pub fn random_domain_diffusion(x: Point) -> f64 {
    (x[0] * x[1]).abs() + 1.0
}

pub fn random_domain_target(x: Point) -> f64 {
    let [a, b] = x;
    a * b * (a - 1.0) * (b - a / 2.0 - 1.0) + 1.0
}

/// Dirichlet value on the whole boundary of the random domain.
pub const RANDOM_DOMAIN_BOUNDARY_VALUE: f64 = 1.0;

struct RandomDomainAssembler {
    grid: FineGrid,
    kl: KlField,
    mapper: HarmonicMapper,
    layout: DofLayout,
}

impl RandomDomainAssembler {
    fn nodal_problem(&self, xi: &[f64], beta: f64) -> Result<NodalProblem> {
        let g = &self.grid;
        let s = realize_boundary(&self.kl, xi)?;
        let map = self.mapper.map(g, &s)?;
        let pb = transform_coefficients(g, &map, random_domain_diffusion)?;
        let target: Vec<f64> = map
            .coords
            .iter()
            .map(|&x| random_domain_target(x))
            .collect();
        Ok(NodalProblem {
            beta,
            control_mass: assemble_weighted_control_mass(g, &pb.weights),
            coupling: assemble_weighted_coupling(g, &pb.weights),
            state_mass: assemble_weighted_mass(g, &pb.weights),
            stiffness: constant_operator(assemble_coefficient_stiffness(g, &pb.coefficient)?),
            source: vec![0.0; g.num_nodes()],
            target: constant_vector(target),
        })
    }
}

impl SampleAssembler for RandomDomainAssembler {
    fn system(&self, mu: &[f64], beta: f64) -> Result<KktSystem> {
        let blocks = apply_dirichlet(&self.nodal_problem(mu, beta)?, &self.layout)?;
        Ok(build_kkt(&blocks, &[])?.system)
    }
}

fn random_domain(nx: usize, ny: usize, options: &ScenarioOptions) -> Result<Scenario> {
    let grid = FineGrid::new(nx, ny)?;
    let kl = kl_expand(&uniform_points(nx + 1), options.kl_terms, options.kl_sigma)?;
    let domain = ParamDomain::uniform_cube(options.kl_terms, -1.0, 1.0)?;
    let layout = DofLayout::dirichlet(
        &grid,
        &vec![RANDOM_DOMAIN_BOUNDARY_VALUE; grid.boundary_nodes().len()],
    )?;
    let mapper = HarmonicMapper::new(&grid)?;
    let kappa: Vec<f64> = grid
        .centroids()
        .iter()
        .map(|&x| random_domain_diffusion(x))
        .collect();
    let state_mass = layout.restrict_matrix(&assemble_state_mass(&grid));
    let control_mass = assemble_control_mass(&grid);
    let assembler = RandomDomainAssembler {
        grid: grid.clone(),
        kl,
        mapper,
        layout: layout.clone(),
    };
    Ok(Scenario {
        kind: ScenarioKind::RandomDomain,
        grid,
        domain,
        layout,
        beta: options.beta,
        problem: ProblemData::PerSample(Arc::new(assembler)),
        reference_coefficient: ElementCoefficient::Scalar(kappa),
        state_mass,
        control_mass,
        eim: None,
    })
}

// ---------------------------------------------------------------------------
// Neumann boundary control

pub fn neumann_diffusion(x: Point, mu: &[f64]) -> f64 {
    (-(x[0] - mu[0]).powi(2) / 4.0 - (x[1] - mu[1]).powi(2) / 4.0).exp()
}

pub fn neumann_target(x: Point, mu: &[f64]) -> f64 {
    (x[0] - mu[0]).powi(2) + (x[1] - mu[1]).powi(2)
}

pub fn neumann_source(x: Point) -> f64 {
    let [a, b] = x;
    0.5 * (PI * a).sin() * (2.0 * PI * b).cos() + a * b + (a / 6.0 + (PI * b).sin() + 1.0).powi(2)
}

/// EIM of `f(points_i, μ)` over `training`.
pub fn eim_on_points(
    points: Arc<Vec<Point>>,
    f: fn(Point, &[f64]) -> f64,
    training: &[Vec<f64>],
    tol: f64,
) -> Result<(Arc<EimSurrogate>, PointEvaluator)> {
    let snaps = par::map(training, |mu| {
        points.iter().map(|&x| f(x, mu)).collect::<Vec<f64>>()
    });
    let surrogate = Arc::new(eim_build(&snaps, tol, EIM_MAX_TERMS)?);
    let eval: PointEvaluator = Arc::new(move |i, mu| f(points[i], mu));
    Ok((surrogate, eval))
}

fn neumann(nx: usize, ny: usize, options: &ScenarioOptions) -> Result<Scenario> {
    let grid = FineGrid::new(nx, ny)?;
    let domain = ParamDomain::new(vec![Marginal::Beta { a: 1.0, b: 1.0 }; 2])?;
    let training = sample_parameters(&domain, options.eim_training, options.eim_seed)?;
    let centroids = Arc::new(grid.centroids());
    let nodes = Arc::new(grid.nodes().to_vec());
    let (ks, keval) = eim_on_points(
        centroids.clone(),
        neumann_diffusion,
        &training,
        options.eim_tolerance,
    )?;
    let (us, ueval) = eim_on_points(
        nodes.clone(),
        neumann_target,
        &training,
        options.eim_tolerance,
    )?;
    let stiffness = AffineOperatorFamily::new(
        par::map(&ks.basis, |q| assemble_stiffness_signed(&grid, q)),
        Arc::new(EimCoefficients::new(ks.clone(), keval).with_bounds(domain.bounds())),
    )?;
    let target = AffineVectorFamily::new(
        vec![0.0; grid.num_nodes()],
        us.basis.clone(),
        Arc::new(EimCoefficients::new(us.clone(), ueval).with_bounds(domain.bounds())),
    )?;
    let source: Vec<f64> = nodes.iter().map(|&x| neumann_source(x)).collect();
    let problem = NodalProblem {
        beta: options.beta,
        control_mass: assemble_boundary_mass(&grid),
        coupling: assemble_boundary_coupling(&grid),
        state_mass: assemble_state_mass(&grid),
        stiffness,
        source: assemble_load(&grid, &Field::Nodal(source))?,
        target,
    };
    let layout = DofLayout::all_free(grid.num_nodes());
    let blocks = apply_dirichlet(&problem, &layout)?;
    let mean = domain.mean();
    let reference = centroids
        .iter()
        .map(|&x| neumann_diffusion(x, &mean))
        .collect();
    Ok(Scenario {
        kind: ScenarioKind::NeumannBoundary,
        state_mass: blocks.state_mass.clone(),
        control_mass: blocks.control_mass.clone(),
        problem: ProblemData::Affine(blocks),
        reference_coefficient: ElementCoefficient::Scalar(reference),
        grid,
        domain,
        layout,
        beta: options.beta,
        eim: Some(EimSurrogates {
            coefficient: ks,
            target: us,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fullorder::kkt_relative_residual;

    #[test]
    fn contrast_fields_are_deterministic() {
        let g = FineGrid::new(30, 30).unwrap();
        let (a1, b1) = ContrastLayout::generate(0).fields(&g, 1e4);
        let (a2, b2) = ContrastLayout::generate(0).fields(&g, 1e4);
        assert_eq!((a1.clone(), b1.clone()), (a2, b2));
        let frac = |v: &[f64]| v.iter().filter(|&&k| k > 1.0).count() as f64 / v.len() as f64;
        assert!(frac(&a1) > 0.05 && frac(&a1) < 0.5, "{}", frac(&a1));
        assert!(frac(&b1) > 0.02 && frac(&b1) < 0.4, "{}", frac(&b1));
    }

    #[test]
    fn distributed_scenario_solves() {
        let s = Scenario::build(
            ScenarioKind::DistributedDeterministic,
            16,
            16,
            &ScenarioOptions::default(),
        )
        .unwrap();
        assert!(s.is_affine());
        let sys = s.system(&[0.3]).unwrap();
        let t = s.solve(&[0.3]).unwrap();
        assert!(kkt_relative_residual(&sys, &t).iter().all(|r| *r < 1e-9));
        assert!(s.system(&[1.5]).is_err());
    }

    #[test]
    fn random_domain_reference_is_unit_square() {
        let opts = ScenarioOptions {
            beta: 1e-4,
            ..Default::default()
        };
        let s = Scenario::build(ScenarioKind::RandomDomain, 12, 12, &opts).unwrap();
        assert!(!s.is_affine());
        let sys = s.system(&[0.0; 5]).unwrap();
        let diff = CsrMatrix::linear_combination(&[(1.0, &sys.state_mass), (-1.0, &s.state_mass)]);
        assert!(diff.max_abs() < 1e-14);
        let t = s.solve(&[0.5, -0.3, 0.2, 0.9, -1.0]).unwrap();
        assert!(t.state.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn neumann_scenario_with_eim() {
        let opts = ScenarioOptions {
            beta: 1e-4,
            eim_training: 40,
            ..Default::default()
        };
        let s = Scenario::build(ScenarioKind::NeumannBoundary, 10, 10, &opts).unwrap();
        let eim = s.eim.as_ref().unwrap();
        assert!(eim.coefficient.converged && eim.coefficient.len() <= 25);
        assert!(eim.target.len() <= 4);
        let mu = [0.2, 0.7];
        let sys = s.system(&mu).unwrap();
        let t = s.solve(&mu).unwrap();
        assert!(kkt_relative_residual(&sys, &t).iter().all(|r| *r < 1e-9));
        assert_eq!(t.control.len(), s.grid.boundary_nodes().len());
    }
}
