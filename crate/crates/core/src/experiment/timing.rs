//! Wall-clock comparison of the fine KKT solve and the online reduced solve.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::OnlineModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub samples: usize,
    pub repeats: usize,
    /// Mean over samples of the per-sample median, in seconds.
    pub fine_mean_seconds: f64,
    pub online_mean_seconds: f64,
    pub speedup: f64,
    pub fine_size: usize,
    pub reduced_size: usize,
    /// `fine_size / reduced_size`.
    pub size_ratio: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time_median<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(f()?);
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Both paths start from the parameter: the fine path evaluates (or assembles)
/// and solves the fine KKT system, the online path forms and solves the
/// reduced system and maps the result to the fine grid. Runs sequentially so
/// the two paths see the same machine load.
pub fn timing_harness(
    model: &OnlineModel,
    samples: &[Vec<f64>],
    repeats: usize,
) -> Result<TimingSummary> {
    if samples.is_empty() || repeats == 0 {
        return Err(Error::InvalidArgument(
            "timing needs at least one sample and one repeat".into(),
        ));
    }
    let scenario = &model.scenario;
    let (mut fine, mut online) = (0.0, 0.0);
    for mu in samples {
        fine += time_median(repeats, || scenario.solve(mu))?;
        online += time_median(repeats, || model.solve_fine(mu))?;
    }
    let n = samples.len() as f64;
    let fine_size = scenario.control_mass.nrows() + 2 * scenario.layout.num_free();
    let reduced_size = model.reduced_size();
    Ok(TimingSummary {
        samples: samples.len(),
        repeats,
        fine_mean_seconds: fine / n,
        online_mean_seconds: online / n,
        speedup: fine / online,
        fine_size,
        reduced_size,
        size_ratio: fine_size as f64 / reduced_size as f64,
    })
}
