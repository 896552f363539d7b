//! Declarative experiment settings.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ScenarioKind, ScenarioOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ScenarioKind,
    pub nx: usize,
    pub ny: usize,
    pub coarse_x: usize,
    pub coarse_y: usize,
    /// Local spectral modes per neighborhood.
    pub modes: usize,
    pub max_samples: usize,
    pub tolerance: f64,
    /// First entry is the regularization used for training.
    pub betas: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub output_dir: PathBuf,
    /// Timed repetitions per sample; the median is kept.
    #[serde(default = "default_repeats")]
    pub timing_repeats: usize,
    #[serde(default)]
    pub scenario: ScenarioOptions,
    #[serde(default)]
    pub studies: StudySettings,
}

fn default_repeats() -> usize {
    5
}

/// Sweep values for the parameter studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySettings {
    /// Coarse grids `(cx, cy)` for the coarse-mesh study.
    pub coarse_grids: Vec<(usize, usize)>,
    pub modes: Vec<usize>,
    pub sample_counts: Vec<usize>,
    /// Reduced size used by the coarse-mesh and mode studies.
    pub fixed_samples: usize,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            coarse_grids: vec![(5, 5), (6, 6), (10, 10)],
            modes: vec![2, 3, 4, 5, 6],
            sample_counts: vec![1, 2, 3, 4, 5, 6],
            fixed_samples: 5,
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults for each experiment.
    pub fn preset(experiment: ScenarioKind) -> Self {
        let base = Self {
            experiment,
            nx: 60,
            ny: 60,
            coarse_x: 6,
            coarse_y: 6,
            modes: 5,
            max_samples: 8,
            tolerance: 1e-5,
            betas: vec![1e-2],
            n_train: 50,
            n_test: 50,
            train_seed: 0,
            test_seed: 1,
            output_dir: PathBuf::from("lgrb-output"),
            timing_repeats: default_repeats(),
            scenario: ScenarioOptions::default(),
            studies: StudySettings::default(),
        };
        match experiment {
            ScenarioKind::DistributedDeterministic => Self {
                betas: vec![1e-2, 2e-4, 0.5e-5],
                ..base
            },
            ScenarioKind::RandomDomain | ScenarioKind::NeumannBoundary => Self {
                nx: 100,
                ny: 100,
                coarse_x: 5,
                coarse_y: 5,
                betas: vec![1e-4],
                n_train: 100,
                n_test: 100,
                studies: StudySettings {
                    coarse_grids: vec![(4, 4), (5, 5), (10, 10)],
                    ..StudySettings::default()
                },
                ..base
            },
        }
    }

    pub fn beta(&self) -> f64 {
        self.betas[0]
    }

    pub fn scenario_options(&self) -> ScenarioOptions {
        ScenarioOptions {
            beta: self.beta(),
            ..self.scenario.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("nx", self.nx),
            ("ny", self.ny),
            ("coarse_x", self.coarse_x),
            ("coarse_y", self.coarse_y),
            ("modes", self.modes),
            ("max_samples", self.max_samples),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("timing_repeats", self.timing_repeats),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if self.betas.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one regularization value is required".into(),
            ));
        }
        if let Some(&b) = self.betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidRegularization(b));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(
                "greedy tolerance must be positive".into(),
            ));
        }
        if !self.nx.is_multiple_of(self.coarse_x) || !self.ny.is_multiple_of(self.coarse_y) {
            return Err(Error::InvalidArgument(format!(
                "coarse grid {}x{} does not nest in fine grid {}x{}",
                self.coarse_x, self.coarse_y, self.nx, self.ny
            )));
        }
        let st = &self.studies;
        if st.modes.contains(&0) || st.sample_counts.contains(&0) || st.fixed_samples == 0 {
            return Err(Error::InvalidArgument(
                "study sweeps must use positive counts".into(),
            ));
        }
        if st.coarse_grids.iter().any(|&(cx, cy)| cx == 0 || cy == 0) {
            return Err(Error::InvalidArgument(
                "study coarse grids must be nonempty".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
