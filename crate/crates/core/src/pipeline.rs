//! Offline/online orchestration: multiscale space, greedy reduced spaces,
//! reduced operators; then cheap per-parameter solves mapped back to the
//! fine grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fullorder::OptimalTriple;
use crate::greedy::{greedy_train, GreedyOptions, GreedyResult, LocalModel};
use crate::rb::{
    downscale, online_solve, project_reduced, DenseMatrixData, ReducedModel, ReducedPieces,
    ReducedSolution, ReducedSystem,
};
use crate::scenario::{ProblemData, Scenario};

/// Everything the online stage needs.
#[derive(Clone)]
pub struct OnlineModel {
    pub scenario: Arc<Scenario>,
    /// Affine reduced pieces; `None` means per-sample projection.
    pub reduced: Option<ReducedModel>,
    /// `R Z₁` on the free fine dofs.
    pub state_basis: DMatrix<f64>,
    pub control_basis: DMatrix<f64>,
}

impl OnlineModel {
    pub fn state_dim(&self) -> usize {
        self.state_basis.ncols()
    }

    pub fn control_dim(&self) -> usize {
        self.control_basis.ncols()
    }

    /// Size of the reduced saddle system.
    pub fn reduced_size(&self) -> usize {
        self.control_dim() + 2 * self.state_dim()
    }

    pub fn reduced_system(&self, mu: &[f64]) -> Result<ReducedSystem> {
        match &self.reduced {
            Some(r) => {
                self.scenario.domain.contains(mu)?;
                r.evaluate(mu)
            }
            None => ReducedSystem::project(
                &self.scenario.system(mu)?,
                &self.state_basis,
                &self.control_basis,
            ),
        }
    }

    pub fn solve(&self, mu: &[f64]) -> Result<ReducedSolution> {
        online_solve(&self.reduced_system(mu)?)
    }

    /// Reduced solution on the free fine dofs.
    pub fn fine_solution(&self, sol: &ReducedSolution) -> OptimalTriple {
        downscale(&self.state_basis, &self.control_basis, sol)
    }

    pub fn solve_fine(&self, mu: &[f64]) -> Result<OptimalTriple> {
        Ok(self.fine_solution(&self.solve(mu)?))
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct OfflineTimings {
    pub multiscale_seconds: f64,
    pub greedy_seconds: f64,
    pub projection_seconds: f64,
}

pub struct OfflineModel {
    pub local: LocalModel,
    pub greedy: GreedyResult,
    /// `Z₁` in multiscale coordinates.
    pub local_state_basis: DMatrix<f64>,
    pub online: OnlineModel,
    pub timings: OfflineTimings,
}

/// Settings of one offline run.
#[derive(Debug, Clone, Copy)]
pub struct OfflineOptions {
    pub coarse: (usize, usize),
    pub modes: usize,
    pub greedy: GreedyOptions,
}

fn online_from_spaces(
    local: &LocalModel,
    z1: &DMatrix<f64>,
    z2: &DMatrix<f64>,
) -> Result<OnlineModel> {
    let reduced = match &local.blocks {
        Some(b) => Some(project_reduced(b, z1, z2)?),
        None => None,
    };
    Ok(OnlineModel {
        scenario: local.scenario.clone(),
        reduced,
        state_basis: local.space.basis.mul_dense(z1),
        control_basis: z2.clone(),
    })
}

/// Offline stage: multiscale space, greedy spaces, reduced operators.
pub fn offline(
    scenario: Arc<Scenario>,
    training: &[Vec<f64>],
    options: OfflineOptions,
) -> Result<OfflineModel> {
    let t0 = Instant::now();
    let space = scenario
        .multiscale_space(options.coarse.0, options.coarse.1, options.modes)
        .map_err(|e| e.in_stage("multiscale space"))?;
    let local =
        LocalModel::new(scenario, Arc::new(space)).map_err(|e| e.in_stage("local model"))?;
    let multiscale_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let greedy =
        greedy_train(&local, training, options.greedy).map_err(|e| e.in_stage("greedy"))?;
    let greedy_seconds = t1.elapsed().as_secs_f64();
    let t2 = Instant::now();
    let z1 = greedy.spaces.state_basis();
    let z2 = greedy.spaces.control_basis();
    let online = online_from_spaces(&local, &z1, &z2).map_err(|e| e.in_stage("projection"))?;
    Ok(OfflineModel {
        local,
        greedy,
        local_state_basis: z1,
        online,
        timings: OfflineTimings {
            multiscale_seconds,
            greedy_seconds,
            projection_seconds: t2.elapsed().as_secs_f64(),
        },
    })
}

impl OfflineModel {
    pub fn num_samples(&self) -> usize {
        self.greedy.spaces.num_samples()
    }

    /// Online model built from the first `n` greedy samples only.
    pub fn truncated(&self, n: usize) -> Result<OnlineModel> {
        if n == 0 || n > self.num_samples() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate {} greedy samples to {n}",
                self.num_samples()
            )));
        }
        let mut spaces = self.local.reduced_spaces();
        for (mu, snap) in self
            .greedy
            .spaces
            .samples
            .iter()
            .zip(&self.greedy.snapshots)
            .take(n)
        {
            spaces.enrich(mu, snap)?;
        }
        online_from_spaces(&self.local, &spaces.state_basis(), &spaces.control_basis())
    }

    pub fn manifest(&self) -> Manifest {
        let s = &self.local.scenario;
        let (qa, qu) = match &s.problem {
            ProblemData::Affine(b) => (
                Some(b.stiffness.num_terms()),
                Some(b.target_rhs.pieces.len()),
            ),
            ProblemData::PerSample(_) => (None, None),
        };
        let fine_dofs = s.control_mass.nrows() + 2 * s.layout.num_free();
        Manifest {
            experiment: s.kind.name().to_string(),
            affine: s.is_affine(),
            eim: s.eim.is_some(),
            eim_terms: s
                .eim
                .as_ref()
                .map(|e| (e.coefficient.len(), e.target.len())),
            grid: (s.grid.nx(), s.grid.ny()),
            beta: s.beta,
            fine_kkt_size: fine_dofs,
            local_dim: self.local.dim(),
            modes: self
                .local
                .space
                .locals
                .first()
                .map_or(0, |l| l.modes.ncols()),
            dropped_local_columns: self.local.space.dropped.len(),
            samples: self.greedy.spaces.samples.clone(),
            state_dim: self.online.state_dim(),
            control_dim: self.online.control_dim(),
            reduced_size: self.online.reduced_size(),
            stiffness_terms: qa,
            target_terms: qu,
            selection_log: self.greedy.log.iter().map(|s| s.max_estimate).collect(),
            files: Vec::new(),
        }
    }

    /// Writes the artifact bundle; returns the manifest with file names.
    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir)?;
        let mut manifest = self.manifest();
        let mut write = |name: &str, text: String| -> Result<()> {
            fs::write(dir.join(name), text)?;
            manifest.files.push(name.to_string());
            Ok(())
        };
        write("selection.csv", self.greedy.log_csv())?;
        write("eigenvalues.csv", self.local.space.eigenvalue_csv())?;
        let bases = Bases {
            state: DenseMatrixData::from(&self.online.state_basis),
            control: DenseMatrixData::from(&self.online.control_basis),
        };
        write("bases.json", serde_json::to_string(&bases)?)?;
        if let Some(r) = &self.online.reduced {
            write("reduced.json", serde_json::to_string(&r.to_pieces())?)?;
        }
        manifest.files.push("manifest.json".into());
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub affine: bool,
    pub eim: bool,
    /// EIM terms for the coefficient and the target.
    pub eim_terms: Option<(usize, usize)>,
    pub grid: (usize, usize),
    pub beta: f64,
    pub fine_kkt_size: usize,
    pub local_dim: usize,
    pub modes: usize,
    pub dropped_local_columns: usize,
    pub samples: Vec<Vec<f64>>,
    pub state_dim: usize,
    pub control_dim: usize,
    pub reduced_size: usize,
    pub stiffness_terms: Option<usize>,
    pub target_terms: Option<usize>,
    pub selection_log: Vec<f64>,
    pub files: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Bases {
    state: DenseMatrixData,
    control: DenseMatrixData,
}

/// Reloads a saved bundle against a freshly built scenario (which supplies
/// the parameter-dependent coefficient functions).
pub fn load_online(dir: &Path, scenario: Arc<Scenario>) -> Result<OnlineModel> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.experiment != scenario.kind.name() || manifest.affine != scenario.is_affine() {
        return Err(Error::Parse(format!(
            "bundle in {} was built for {}, not {}",
            dir.display(),
            manifest.experiment,
            scenario.kind.name()
        )));
    }
    let bases: Bases = serde_json::from_str(&fs::read_to_string(dir.join("bases.json"))?)?;
    let state_basis = bases.state.to_matrix()?;
    let control_basis = bases.control.to_matrix()?;
    let reduced = match &scenario.problem {
        ProblemData::Affine(b) => {
            let pieces: ReducedPieces =
                serde_json::from_str(&fs::read_to_string(dir.join("reduced.json"))?)?;
            Some(ReducedModel::from_pieces(
                &pieces,
                b.stiffness.coefficients().clone(),
                b.target_rhs.coefficients.clone(),
            )?)
        }
        ProblemData::PerSample(_) => None,
    };
    if state_basis.nrows() != scenario.layout.num_free()
        || control_basis.nrows() != scenario.control_mass.nrows()
    {
        return Err(Error::Parse(
            "bundle bases do not match the scenario grid".into(),
        ));
    }
    Ok(OnlineModel {
        scenario,
        reduced,
        state_basis,
        control_basis,
    })
}

/// Default bundle location inside an output directory.
pub fn bundle_dir(output: &Path) -> PathBuf {
    output.join("offline")
}
