//! Experiment driver: builds a scenario from a config, trains the reduced
//! model, evaluates it on a test set and runs the parameter sweeps.

pub mod config;
pub mod table;
pub mod timing;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, StudySettings};
pub use table::{Table, TableRow};
pub use timing::{timing_harness, TimingSummary};

use crate::error::{Error, Result};
use crate::fullorder::{solve_kkt, FullKkt, OptimalTriple};
use crate::greedy::GreedyOptions;
use crate::par;
use crate::pipeline::{
    bundle_dir, load_online, offline, Manifest, OfflineModel, OfflineOptions, OfflineTimings,
    OnlineModel,
};
use crate::scenario::Scenario;
use crate::sparse::CsrMatrix;
use crate::stochastic::stats::{
    element_field_csv, error_metrics, moments, nodal_field_csv, ErrorMetrics, SamplePair,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Beta,
    Coarse,
    Samples,
    Modes,
}

impl Study {
    pub const ALL: [Study; 4] = [Study::Beta, Study::Coarse, Study::Samples, Study::Modes];

    pub fn name(self) -> &'static str {
        match self {
            Study::Beta => "beta",
            Study::Coarse => "coarse",
            Study::Samples => "samples",
            Study::Modes => "modes",
        }
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "unknown study `{s}` (expected beta, coarse, samples or modes)"
                ))
            })
    }
}

/// Fine optimal solutions on the test set, with the per-sample stiffness for
/// energy errors.
pub struct References {
    pub solutions: Vec<OptimalTriple>,
    pub stiffness: Vec<CsrMatrix>,
}

impl References {
    pub fn compute(scenario: &Scenario, params: &[Vec<f64>]) -> Result<Self> {
        let pairs = par::try_map(params, |mu| {
            let sys = scenario.system(mu)?;
            let k = sys.stiffness.clone();
            Ok::<_, Error>((solve_kkt(&FullKkt::new(sys)?)?, k))
        })?;
        let (solutions, stiffness) = pairs.into_iter().unzip();
        Ok(Self {
            solutions,
            stiffness,
        })
    }

    pub fn mean_cost(&self) -> f64 {
        self.solutions.iter().map(|t| t.cost).sum::<f64>() / self.solutions.len() as f64
    }

    /// Mean `‖f‖_{M_c}` of the optimal controls.
    pub fn mean_control_norm(&self, control_mass: &CsrMatrix) -> f64 {
        let n = self.solutions.len() as f64;
        self.solutions
            .iter()
            .map(|t| {
                control_mass
                    .bilinear(&t.control, &t.control)
                    .max(0.0)
                    .sqrt()
            })
            .sum::<f64>()
            / n
    }
}

/// Online solutions of `model` on `params` and their errors against `refs`.
pub fn evaluate(
    model: &OnlineModel,
    params: &[Vec<f64>],
    refs: &References,
) -> Result<(ErrorMetrics, Vec<OptimalTriple>)> {
    let approx = par::try_map(params, |mu| model.solve_fine(mu))?;
    let pairs: Vec<SamplePair> = refs
        .solutions
        .iter()
        .zip(&approx)
        .zip(&refs.stiffness)
        .map(|((r, a), k)| SamplePair {
            reference: r,
            approx: a,
            stiffness: Some(k),
        })
        .collect();
    let s = &model.scenario;
    Ok((
        error_metrics(&pairs, &s.state_mass, &s.control_mass)?,
        approx,
    ))
}

/// A configured experiment with its scenario and parameter sets.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub scenario: Arc<Scenario>,
    pub training: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let scenario = Scenario::build(
            config.experiment,
            config.nx,
            config.ny,
            &config.scenario_options(),
        )
        .map_err(|e| e.in_stage("scenario"))?;
        let training = scenario.sample(config.n_train, config.train_seed)?;
        let test = scenario.sample(config.n_test, config.test_seed)?;
        Ok(Self {
            config,
            scenario: Arc::new(scenario),
            training,
            test,
        })
    }

    pub fn greedy_options(&self) -> GreedyOptions {
        GreedyOptions {
            tolerance: self.config.tolerance,
            max_samples: self.config.max_samples,
        }
    }

    pub fn references(&self) -> Result<References> {
        References::compute(&self.scenario, &self.test).map_err(|e| e.in_stage("reference solves"))
    }

    pub fn train(&self) -> Result<OfflineModel> {
        self.train_with(
            self.scenario.clone(),
            (self.config.coarse_x, self.config.coarse_y),
            self.config.modes,
            self.greedy_options(),
        )
    }

    pub fn train_with(
        &self,
        scenario: Arc<Scenario>,
        coarse: (usize, usize),
        modes: usize,
        greedy: GreedyOptions,
    ) -> Result<OfflineModel> {
        offline(
            scenario,
            &self.training,
            OfflineOptions {
                coarse,
                modes,
                greedy,
            },
        )
    }

    fn settings(&self, table: Table) -> Table {
        let c = &self.config;
        table
            .setting("experiment", c.experiment.name())
            .setting("fine", format!("{}x{}", c.nx, c.ny))
            .setting("n_train", c.n_train)
            .setting("n_test", c.n_test)
            .setting("train_seed", c.train_seed)
            .setting("test_seed", c.test_seed)
    }

    /// Sweeps that compare spaces at a given reduced size select exactly
    /// `n` samples: the tolerance is disabled.
    fn fixed_size(n: usize) -> GreedyOptions {
        GreedyOptions {
            tolerance: f64::MIN_POSITIVE,
            max_samples: n,
        }
    }

    /// Errors, optimal cost and control size for each regularization value;
    /// every column is retrained at its own `β`.
    pub fn beta_study(&self) -> Result<Table> {
        let c = &self.config;
        let mut t = self
            .settings(Table::new(
                "beta",
                "beta",
                c.betas.iter().map(|b| format!("{b:e}")).collect(),
            ))
            .setting("coarse", format!("{}x{}", c.coarse_x, c.coarse_y))
            .setting("modes", c.modes)
            .setting("max_samples", c.max_samples)
            .setting("tolerance", format!("{:e}", c.tolerance));
        let mut cols: Vec<[f64; 6]> = Vec::new();
        for &beta in &c.betas {
            let s = Arc::new(self.scenario.with_beta(beta)?);
            let refs = References::compute(&s, &self.test)?;
            let off = self.train_with(
                s.clone(),
                (c.coarse_x, c.coarse_y),
                c.modes,
                self.greedy_options(),
            )?;
            let (e, approx) = evaluate(&off.online, &self.test, &refs)?;
            let reduced_cost = approx.iter().map(|a| a.cost).sum::<f64>() / approx.len() as f64;
            cols.push([
                e.state,
                e.control,
                e.adjoint,
                refs.mean_cost(),
                reduced_cost,
                refs.mean_control_norm(&s.control_mass),
            ]);
        }
        for (k, name) in [
            "e2_u",
            "e2_f",
            "e2_lambda",
            "J_min",
            "J_min_reduced",
            "control_norm",
        ]
        .iter()
        .enumerate()
        {
            t.push(name, cols.iter().map(|c| c[k]).collect())?;
        }
        Ok(t)
    }

    fn error_rows(t: &mut Table, metrics: &[ErrorMetrics]) -> Result<()> {
        let nan = f64::NAN;
        t.push("e2_u", metrics.iter().map(|e| e.state).collect())?;
        t.push("e2_f", metrics.iter().map(|e| e.control).collect())?;
        t.push("e2_lambda", metrics.iter().map(|e| e.adjoint).collect())?;
        t.push(
            "eH_u",
            metrics
                .iter()
                .map(|e| e.state_energy.unwrap_or(nan))
                .collect(),
        )?;
        t.push(
            "eH_lambda",
            metrics
                .iter()
                .map(|e| e.adjoint_energy.unwrap_or(nan))
                .collect(),
        )
    }

    /// Errors over nested coarse grids at a fixed reduced size.
    pub fn coarse_study(&self, refs: &References) -> Result<Table> {
        let st = &self.config.studies;
        let grids = &st.coarse_grids;
        let c = &self.config;
        if let Some((cx, cy)) = grids
            .iter()
            .find(|(cx, cy)| !c.nx.is_multiple_of(*cx) || !c.ny.is_multiple_of(*cy))
        {
            return Err(Error::InvalidArgument(format!(
                "coarse grid {cx}x{cy} does not nest in the {}x{} fine grid",
                c.nx, c.ny
            )));
        }
        let mut t = self
            .settings(Table::new(
                "coarse",
                "coarse",
                grids.iter().map(|(x, y)| format!("{x}x{y}")).collect(),
            ))
            .setting("beta", format!("{:e}", self.config.beta()))
            .setting("modes", self.config.modes)
            .setting("samples", st.fixed_samples);
        let mut metrics = Vec::new();
        let mut dims = Vec::new();
        for &g in grids {
            let off = self.train_with(
                self.scenario.clone(),
                g,
                self.config.modes,
                Self::fixed_size(st.fixed_samples),
            )?;
            metrics.push(evaluate(&off.online, &self.test, refs)?.0);
            dims.push(off.local.dim() as f64);
        }
        Self::error_rows(&mut t, &metrics)?;
        t.push("local_dim", dims)?;
        Ok(t)
    }

    /// Errors over the number of local spectral modes at a fixed reduced size.
    pub fn mode_study(&self, refs: &References) -> Result<Table> {
        let st = &self.config.studies;
        let c = &self.config;
        let mut t = self
            .settings(Table::new(
                "modes",
                "L",
                st.modes.iter().map(usize::to_string).collect(),
            ))
            .setting("beta", format!("{:e}", c.beta()))
            .setting("coarse", format!("{}x{}", c.coarse_x, c.coarse_y))
            .setting("samples", st.fixed_samples);
        let mut metrics = Vec::new();
        let mut dims = Vec::new();
        for &l in &st.modes {
            let off = self.train_with(
                self.scenario.clone(),
                (c.coarse_x, c.coarse_y),
                l,
                Self::fixed_size(st.fixed_samples),
            )?;
            metrics.push(evaluate(&off.online, &self.test, refs)?.0);
            dims.push(off.local.dim() as f64);
        }
        Self::error_rows(&mut t, &metrics)?;
        t.push("local_dim", dims)?;
        Ok(t)
    }

    /// Errors and greedy estimates over the number of greedy samples, from
    /// one training run truncated to each size.
    pub fn sample_study(&self, refs: &References) -> Result<Table> {
        let counts = &self.config.studies.sample_counts;
        let c = &self.config;
        let max = counts.iter().copied().max().unwrap_or(1);
        let off = self.train_with(
            self.scenario.clone(),
            (c.coarse_x, c.coarse_y),
            c.modes,
            Self::fixed_size(max),
        )?;
        if off.num_samples() < max {
            return Err(Error::InvalidArgument(format!(
                "greedy stopped at {} samples, below the requested {max}",
                off.num_samples()
            )));
        }
        let mut t = self
            .settings(Table::new(
                "samples",
                "N",
                counts.iter().map(usize::to_string).collect(),
            ))
            .setting("beta", format!("{:e}", c.beta()))
            .setting("coarse", format!("{}x{}", c.coarse_x, c.coarse_y))
            .setting("modes", c.modes);
        let mut metrics = Vec::new();
        for &n in counts {
            metrics.push(evaluate(&off.truncated(n)?, &self.test, refs)?.0);
        }
        Self::error_rows(&mut t, &metrics)?;
        t.push(
            "eps_N",
            counts
                .iter()
                .map(|&n| off.greedy.log[n - 1].max_estimate)
                .collect(),
        )?;
        t.push(
            "reduced_size",
            counts.iter().map(|&n| (5 * n) as f64).collect(),
        )?;
        Ok(t)
    }

    pub fn study(&self, kind: Study, refs: &References) -> Result<Table> {
        let r = match kind {
            Study::Beta => self.beta_study(),
            Study::Coarse => self.coarse_study(refs),
            Study::Samples => self.sample_study(refs),
            Study::Modes => self.mode_study(refs),
        };
        r.map_err(|e| e.in_stage(format!("{} study", kind.name())))
    }
}

/// Per-sample online results as CSV: parameters, errors and both costs.
pub fn online_records_csv(
    params: &[Vec<f64>],
    refs: &References,
    approx: &[OptimalTriple],
    scenario: &Scenario,
) -> String {
    let dim = params.first().map_or(0, Vec::len);
    let mut s = String::from("sample");
    (1..=dim).for_each(|i| {
        let _ = write!(s, ",mu_{i}");
    });
    s.push_str(",e_u,e_f,e_lambda,cost_reference,cost_reduced\n");
    let rel = |a: &[f64], b: &[f64], m: &CsrMatrix| {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        (m.bilinear(&d, &d).max(0.0) / m.bilinear(b, b)).sqrt()
    };
    for (i, ((mu, r), a)) in params.iter().zip(&refs.solutions).zip(approx).enumerate() {
        let _ = write!(s, "{i}");
        mu.iter().for_each(|v| {
            let _ = write!(s, ",{v:e}");
        });
        let _ = writeln!(
            s,
            ",{:e},{:e},{:e},{:e},{:e}",
            rel(&a.state, &r.state, &scenario.state_mass),
            rel(&a.control, &r.control, &scenario.control_mass),
            rel(&a.adjoint, &r.adjoint, &scenario.state_mass),
            r.cost,
            a.cost
        );
    }
    s
}

/// Mean and standard deviation of state (nodal) and, for distributed
/// controls, control (per cell) over a solution set.
fn moment_fields(
    scenario: &Scenario,
    sols: &[OptimalTriple],
    tag: &str,
) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    if sols.len() < 2 {
        return Ok(out);
    }
    let states: Vec<Vec<f64>> = sols
        .iter()
        .map(|t| scenario.layout.expand(&t.state))
        .collect();
    let m = moments(&states)?;
    out.push((
        format!("{tag}_state_mean.csv"),
        nodal_field_csv(&scenario.grid, &m.mean)?,
    ));
    out.push((
        format!("{tag}_state_std.csv"),
        nodal_field_csv(&scenario.grid, &m.std_dev)?,
    ));
    if sols[0].control.len() == scenario.grid.num_elements() {
        let controls: Vec<Vec<f64>> = sols.iter().map(|t| t.control.clone()).collect();
        let m = moments(&controls)?;
        out.push((
            format!("{tag}_control_mean.csv"),
            element_field_csv(&scenario.grid, &m.mean)?,
        ));
        out.push((
            format!("{tag}_control_std.csv"),
            element_field_csv(&scenario.grid, &m.std_dev)?,
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineReport {
    pub errors: ErrorMetrics,
    pub files: Vec<String>,
}

/// Solves the test set with a (loaded or fresh) online model and writes
/// per-sample records and moment fields under `dir`.
pub fn run_online(
    exp: &Experiment,
    model: &OnlineModel,
    refs: &References,
    dir: &Path,
) -> Result<OnlineReport> {
    let (errors, approx) = evaluate(model, &exp.test, refs).map_err(|e| e.in_stage("online"))?;
    fs::create_dir_all(dir.join("fields"))?;
    let mut files = Vec::new();
    fs::write(
        dir.join("online.csv"),
        online_records_csv(&exp.test, refs, &approx, &exp.scenario),
    )?;
    files.push("online.csv".to_string());
    let mut fields = moment_fields(&exp.scenario, &refs.solutions, "reference")?;
    fields.extend(moment_fields(&exp.scenario, &approx, "reduced")?);
    for (name, text) in fields {
        fs::write(dir.join("fields").join(&name), text)?;
        files.push(format!("fields/{name}"));
    }
    Ok(OnlineReport { errors, files })
}

/// Loads the bundle written by a previous offline run.
pub fn load_bundle(exp: &Experiment) -> Result<OnlineModel> {
    load_online(&bundle_dir(&exp.config.output_dir), exp.scenario.clone())
        .map_err(|e| e.in_stage("load bundle"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub manifest: Manifest,
    pub offline: OfflineTimings,
    pub online: OnlineReport,
    pub tables: Vec<Table>,
    pub timing: Option<TimingSummary>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

/// Writes tables as `tables/<name>.csv`; returns the relative paths.
pub fn write_tables(dir: &Path, tables: &[Table]) -> Result<Vec<String>> {
    fs::create_dir_all(dir.join("tables"))?;
    tables
        .iter()
        .map(|t| {
            let name = format!("tables/{}.csv", t.name);
            fs::write(dir.join(&name), t.to_csv())?;
            Ok(name)
        })
        .collect()
}

/// Offline training, bundle, test-set evaluation, the requested sweeps and
/// (optionally) the timing comparison, all written under the output
/// directory.
pub fn run_experiment_with(
    config: ExperimentConfig,
    studies: &[Study],
    with_timing: bool,
) -> Result<RunReport> {
    let exp = Experiment::new(config)?;
    let out = exp.config.output_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.json"), exp.config.to_json()?)?;
    let mut artifacts = vec!["config.json".to_string()];

    let off = exp.train().map_err(|e| e.in_stage("offline"))?;
    let manifest = off
        .save(&bundle_dir(&out))
        .map_err(|e| e.in_stage("save bundle"))?;
    artifacts.extend(manifest.files.iter().map(|f| format!("offline/{f}")));

    let refs = exp.references()?;
    let online = run_online(&exp, &off.online, &refs, &out)?;
    artifacts.extend(online.files.iter().cloned());

    let tables = studies
        .iter()
        .map(|&s| exp.study(s, &refs))
        .collect::<Result<Vec<_>>>()?;
    artifacts.extend(write_tables(&out, &tables)?);

    let timing = if with_timing {
        Some(
            timing_harness(&off.online, &exp.test, exp.config.timing_repeats)
                .map_err(|e| e.in_stage("timing"))?,
        )
    } else {
        None
    };
    artifacts.push("report.json".into());
    let report = RunReport {
        config: exp.config.clone(),
        manifest,
        offline: off.timings,
        online,
        tables,
        timing,
        artifacts,
    };
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

pub fn run_experiment(config: ExperimentConfig) -> Result<RunReport> {
    run_experiment_with(config, &Study::ALL, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioKind;

    fn small(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(ScenarioKind::DistributedDeterministic);
        c.nx = 12;
        c.ny = 12;
        c.coarse_x = 3;
        c.coarse_y = 3;
        c.modes = 3;
        c.max_samples = 3;
        c.n_train = 8;
        c.n_test = 4;
        c.betas = vec![1e-2, 1e-3];
        c.timing_repeats = 1;
        c.scenario.contrast = 1e2;
        c.studies = StudySettings {
            coarse_grids: vec![(2, 2), (3, 3)],
            modes: vec![2, 3],
            sample_counts: vec![1, 2],
            fixed_samples: 2,
        };
        c.output_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn run_writes_artifacts_and_is_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let r1 = run_experiment(small(d1.path())).unwrap();
        let r2 = run_experiment_with(small(d2.path()), &Study::ALL, false).unwrap();
        assert_eq!(r1.tables.len(), 4);
        assert!(r2.timing.is_none());
        for a in &r1.artifacts {
            assert!(d1.path().join(a).exists(), "{a}");
        }
        for t in &r1.tables {
            let name = format!("tables/{}.csv", t.name);
            let a = fs::read(d1.path().join(&name)).unwrap();
            let b = fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name}");
            assert!(!t.settings.is_empty());
        }
        assert_eq!(
            fs::read(d1.path().join("online.csv")).unwrap(),
            fs::read(d2.path().join("online.csv")).unwrap()
        );
        let timing = r1.timing.unwrap();
        assert!(timing.fine_mean_seconds >= 0.0 && timing.online_mean_seconds >= 0.0);
        assert_eq!(timing.reduced_size, r1.manifest.reduced_size);
        let beta = &r1.tables[0];
        assert_eq!(beta.columns.len(), 2);
        assert!(beta.row("J_min").is_some());
    }

    #[test]
    fn reloaded_bundle_reproduces_online_errors() {
        let d = tempfile::tempdir().unwrap();
        let r = run_experiment_with(small(d.path()), &[], false).unwrap();
        let exp = Experiment::new(small(d.path())).unwrap();
        let model = load_bundle(&exp).unwrap();
        let refs = exp.references().unwrap();
        let (e, _) = evaluate(&model, &exp.test, &refs).unwrap();
        assert!(
            (e.state - r.online.errors.state).abs() <= 1e-12 * r.online.errors.state.max(1e-300)
        );
        assert!(
            (e.control - r.online.errors.control).abs()
                <= 1e-12 * r.online.errors.control.max(1e-300)
        );
    }

    #[test]
    fn study_names_parse() {
        for s in Study::ALL {
            assert_eq!(s.name().parse::<Study>().unwrap(), s);
        }
        assert!("nope".parse::<Study>().is_err());
    }
}
