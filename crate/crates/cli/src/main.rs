use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lgrb::experiment::{
    load_bundle, run_experiment_with, run_online, timing_harness, write_tables, Experiment,
    ExperimentConfig, Study,
};
use lgrb::pipeline::bundle_dir;
use lgrb::scenario::ScenarioKind;

#[derive(Parser)]
#[command(
    name = "lgrb",
    version,
    about = "Local-global reduced models for parametrized optimal control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reduced model and write the artifact bundle.
    Offline(ConfigArgs),
    /// Load the bundle and solve the test set.
    Online(ConfigArgs),
    /// Run parameter sweeps and write their tables.
    Study {
        #[command(flatten)]
        config: ConfigArgs,
        /// Sweeps to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<Study>,
    },
    /// Time fine solves against online solves on the test set.
    Bench(ConfigArgs),
    /// Offline, online, all sweeps and timing in one go.
    Run(ConfigArgs),
    /// Print the preset configuration for an experiment as JSON.
    Preset { experiment: ScenarioKind },
}

/// Settings start from `--config` (or the experiment preset) and are then
/// overridden flag by flag.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<ScenarioKind>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    coarse_x: Option<usize>,
    #[arg(long)]
    coarse_y: Option<usize>,
    /// Local spectral modes per neighborhood.
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    max_samples: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Regularization values; the first one is used for training.
    #[arg(long, value_delimiter = ',')]
    beta: Vec<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    test_seed: Option<u64>,
    #[arg(long)]
    timing_repeats: Option<usize>,
    #[arg(long)]
    contrast: Option<f64>,
    #[arg(long)]
    field_seed: Option<u64>,
    /// Coarse grids for the coarse-mesh sweep, e.g. `5x5,10x10`.
    #[arg(long, value_delimiter = ',', value_parser = parse_grid)]
    study_coarse: Vec<(usize, usize)>,
    #[arg(long, value_delimiter = ',')]
    study_modes: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    study_samples: Vec<usize>,
    /// Reduced size used by the coarse-mesh and mode sweeps.
    #[arg(long)]
    fixed_samples: Option<usize>,
    #[arg(long, env = "LGRB_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_json(&text)?
            }
            None => ExperimentConfig::preset(
                self.experiment
                    .unwrap_or(ScenarioKind::DistributedDeterministic),
            ),
        };
        if let Some(e) = self.experiment {
            c.experiment = e;
        }
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$field = v; })*
            };
        }
        set!(
            nx,
            ny,
            coarse_x,
            coarse_y,
            modes,
            max_samples,
            tolerance,
            n_train,
            n_test,
            train_seed,
            test_seed,
            timing_repeats,
            output_dir
        );
        if !self.beta.is_empty() {
            c.betas = self.beta.clone();
        }
        if !self.study_coarse.is_empty() {
            c.studies.coarse_grids = self.study_coarse.clone();
        }
        if !self.study_modes.is_empty() {
            c.studies.modes = self.study_modes.clone();
        }
        if !self.study_samples.is_empty() {
            c.studies.sample_counts = self.study_samples.clone();
        }
        if let Some(v) = self.fixed_samples {
            c.studies.fixed_samples = v;
        }
        if let Some(v) = self.contrast {
            c.scenario.contrast = v;
        }
        if let Some(v) = self.field_seed {
            c.scenario.field_seed = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (x, y) = s
        .split_once('x')
        .ok_or_else(|| format!("expected CXxCY, got `{s}`"))?;
    Ok((
        x.trim().parse().map_err(|e| format!("{e}"))?,
        y.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn print_metrics(label: &str, e: &lgrb::stochastic::ErrorMetrics) {
    println!(
        "{label}: e_u {:.4e}  e_f {:.4e}  e_lambda {:.4e}  ({} samples)",
        e.state, e.control, e.adjoint, e.samples
    );
    if let (Some(u), Some(l)) = (e.state_energy, e.adjoint_energy) {
        println!("{label} energy: e_u {u:.4e}  e_lambda {l:.4e}");
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Preset { experiment } => {
            println!("{}", ExperimentConfig::preset(experiment).to_json()?)
        }
        Command::Offline(args) => {
            let exp = Experiment::new(args.resolve()?)?;
            let off = exp.train()?;
            let dir = bundle_dir(&exp.config.output_dir);
            let m = off.save(&dir)?;
            fs::write(
                exp.config.output_dir.join("config.json"),
                exp.config.to_json()?,
            )?;
            print!("{}", off.greedy.log_csv());
            println!(
                "local dim {}  samples {}  reduced size {}  fine KKT size {}",
                m.local_dim,
                m.samples.len(),
                m.reduced_size,
                m.fine_kkt_size
            );
            println!(
                "offline: multiscale {:.3}s  greedy {:.3}s  projection {:.3}s",
                off.timings.multiscale_seconds,
                off.timings.greedy_seconds,
                off.timings.projection_seconds
            );
            println!("bundle written to {}", dir.display());
        }
        Command::Online(args) => {
            let exp = Experiment::new(args.resolve()?)?;
            let model = load_bundle(&exp)?;
            let refs = exp.references()?;
            let report = run_online(&exp, &model, &refs, &exp.config.output_dir)?;
            print_metrics("online", &report.errors);
            for f in &report.files {
                println!("wrote {}", exp.config.output_dir.join(f).display());
            }
        }
        Command::Study { config, only } => {
            let exp = Experiment::new(config.resolve()?)?;
            let studies = if only.is_empty() {
                Study::ALL.to_vec()
            } else {
                only
            };
            let refs = exp.references()?;
            let tables = studies
                .iter()
                .map(|&s| exp.study(s, &refs))
                .collect::<lgrb::Result<Vec<_>>>()?;
            for (t, path) in tables
                .iter()
                .zip(write_tables(&exp.config.output_dir, &tables)?)
            {
                println!("# {}", exp.config.output_dir.join(path).display());
                print!("{}", t.to_csv());
            }
        }
        Command::Bench(args) => {
            let exp = Experiment::new(args.resolve()?)?;
            let model = match load_bundle(&exp) {
                Ok(m) => m,
                Err(e) => {
                    log::info!("no usable bundle ({e}); training");
                    exp.train()?.online
                }
            };
            let t = timing_harness(&model, &exp.test, exp.config.timing_repeats)?;
            fs::create_dir_all(&exp.config.output_dir)?;
            fs::write(
                exp.config.output_dir.join("timing.json"),
                serde_json::to_string_pretty(&t)?,
            )?;
            println!(
                "fine {:.4e}s  online {:.4e}s  speedup {:.1}x  size {}:{} ({:.0}:1)",
                t.fine_mean_seconds,
                t.online_mean_seconds,
                t.speedup,
                t.fine_size,
                t.reduced_size,
                t.size_ratio
            );
        }
        Command::Run(args) => {
            let report = run_experiment_with(args.resolve()?, &Study::ALL, true)?;
            print_metrics("online", &report.online.errors);
            for t in &report.tables {
                println!("# {}", t.name);
                print!("{}", t.to_csv());
            }
            if let Some(t) = &report.timing {
                println!(
                    "speedup {:.1}x  size ratio {:.0}:1",
                    t.speedup, t.size_ratio
                );
            }
            println!(
                "report: {}",
                report.config.output_dir.join("report.json").display()
            );
        }
    }
    Ok(())
}
