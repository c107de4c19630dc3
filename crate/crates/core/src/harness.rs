//! Experiment orchestration: multi-seed run matrices, per-event-index
//! quantile aggregation, the communication/accuracy tradeoff sweep, and CSV
//! emission. Runs are independent and execute in parallel; seeds are derived
//! from the master seed by position, so serial and parallel execution produce
//! identical output, byte for byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{self, ConfigError, ProtocolKind, RunConfig, StreamKind, Transcript};
use crate::randkit::derive_seed;

/// Default master seed for all CLI commands.
pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration cell {index} is invalid: {source}")]
    InvalidCell { index: usize, source: ConfigError },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("transcripts must share one event horizon to be aggregated")]
    MismatchedHorizons,
    #[error("at least one run per cell is required")]
    NoRuns,
    #[error("epsilon grid is empty: every grid value exceeds 1/2")]
    EmptyGrid,
    #[error("failed to build worker pool: {0}")]
    WorkerPool(String),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Run a closure inside a bounded worker pool, or on the global pool when no
/// bound is requested.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match jobs {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::WorkerPool(e.to_string()))
            .map(|pool| pool.install(f)),
    }
}

/// Execute `runs` seeds of one cell in parallel and map each transcript down
/// to a summary before dropping it. Run `i` uses seed `derive_seed(cell.seed, i)`.
pub fn run_cell_map<T: Send>(
    cell: &RunConfig,
    runs: usize,
    map: impl Fn(Transcript) -> T + Sync,
) -> Vec<T> {
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut config = *cell;
            config.seed = derive_seed(cell.seed, i as u64);
            map(engine::run(&config))
        })
        .collect()
}

/// Execute every cell of the matrix for `runs` seeds each. Output ordering is
/// stable by (cell index, seed index) regardless of scheduling.
pub fn run_matrix(cells: &[RunConfig], runs: usize) -> Result<Vec<Vec<Transcript>>, HarnessError> {
    if runs == 0 {
        return Err(HarnessError::NoRuns);
    }
    for (index, cell) in cells.iter().enumerate() {
        cell.validate().map_err(|source| HarnessError::InvalidCell { index, source })?;
    }
    Ok(cells.iter().map(|cell| run_cell_map(cell, runs, |t| t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Cumulative messages M_t.
    Messages,
    /// Estimate over true count.
    Ratio,
    /// Absolute relative error.
    RelativeError,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Messages, MetricKind::Ratio, MetricKind::RelativeError];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Messages => "messages",
            MetricKind::Ratio => "ratio",
            MetricKind::RelativeError => "relerr",
        }
    }

    fn value(&self, transcript: &Transcript, t: u64) -> f64 {
        let row = transcript.row(t);
        match self {
            MetricKind::Messages => row.messages as f64,
            MetricKind::Ratio => row.estimate / t as f64,
            MetricKind::RelativeError => (row.estimate - t as f64).abs() / t as f64,
        }
    }
}

/// Nearest-rank quantile on an ascending sample: the ceil(q*r)-th order
/// statistic, clamped into range.
pub fn quantile_nearest_rank(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Median with the midpoint convention for even sample sizes.
pub fn median(sorted: &[f64]) -> f64 {
    debug_assert!(!sorted.is_empty());
    let r = sorted.len();
    if r % 2 == 1 {
        sorted[r / 2]
    } else {
        0.5 * (sorted[r / 2 - 1] + sorted[r / 2])
    }
}

/// Per-event-index median and (0.05, 0.95) quantiles of one metric across
/// seeds.
#[derive(Debug, Clone)]
pub struct AggregateSeries {
    pub metric: MetricKind,
    pub median: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
}

impl AggregateSeries {
    pub fn n_events(&self) -> u64 {
        self.median.len() as u64
    }
}

pub fn aggregate(transcripts: &[Transcript], metric: MetricKind) -> Result<AggregateSeries, HarnessError> {
    let n = transcripts.first().map(Transcript::n_events).unwrap_or(0);
    if n == 0 || transcripts.iter().any(|tr| tr.n_events() != n) {
        return Err(HarnessError::MismatchedHorizons);
    }
    let mut med = Vec::with_capacity(n as usize);
    let mut q05 = Vec::with_capacity(n as usize);
    let mut q95 = Vec::with_capacity(n as usize);
    let mut sample = vec![0.0; transcripts.len()];
    for t in 1..=n {
        for (slot, transcript) in sample.iter_mut().zip(transcripts) {
            *slot = metric.value(transcript, t);
        }
        sample.sort_unstable_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
        med.push(median(&sample));
        q05.push(quantile_nearest_rank(&sample, 0.05));
        q95.push(quantile_nearest_rank(&sample, 0.95));
    }
    Ok(AggregateSeries { metric, median: med, q05, q95 })
}

/// Mean relative error over the second half of the horizon:
/// sum over t in [floor(N/2), N] of |n_hat_t - t| / t, averaged.
pub fn accuracy_summary(transcript: &Transcript) -> f64 {
    let n = transcript.n_events();
    let start = (n / 2).max(1);
    let mut sum = 0.0;
    for t in start..=n {
        sum += transcript.relative_error(t);
    }
    sum / (n - start + 1) as f64
}

/// The epsilon sweep 2^i / sqrt(k) for i in -3..=2, keeping values <= 1/2.
pub fn epsilon_grid(k: usize) -> Result<Vec<f64>, HarnessError> {
    let root = (k as f64).sqrt();
    let grid: Vec<f64> = (-3..=2).map(|i| 2f64.powi(i) / root).filter(|&e| e <= 0.5).collect();
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    Ok(grid)
}

/// One point of the tradeoff sweep: medians and (0.05, 0.95) bands of the
/// final message count and of the second-half accuracy across seeds.
#[derive(Debug, Clone, Copy)]
pub struct TradeoffPoint {
    pub epsilon: f64,
    pub comm_median: f64,
    pub comm_q05: f64,
    pub comm_q95: f64,
    pub acc_median: f64,
    pub acc_q05: f64,
    pub acc_q95: f64,
}

pub fn tradeoff(
    k: usize,
    n_events: u64,
    runs: usize,
    protocol: ProtocolKind,
    stream: StreamKind,
    c: f64,
    master_seed: u64,
) -> Result<Vec<TradeoffPoint>, HarnessError> {
    if runs == 0 {
        return Err(HarnessError::NoRuns);
    }
    let grid = epsilon_grid(k)?;
    let mut points = Vec::with_capacity(grid.len());
    for (cell_index, &epsilon) in grid.iter().enumerate() {
        let cell = RunConfig::new(
            k,
            epsilon,
            c,
            n_events,
            derive_seed(master_seed, cell_index as u64),
            protocol,
            stream,
        )?;
        let summaries: Vec<(f64, f64)> =
            run_cell_map(&cell, runs, |tr| (tr.final_messages() as f64, accuracy_summary(&tr)));
        let mut comm: Vec<f64> = summaries.iter().map(|s| s.0).collect();
        let mut acc: Vec<f64> = summaries.iter().map(|s| s.1).collect();
        comm.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        acc.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        points.push(TradeoffPoint {
            epsilon,
            comm_median: median(&comm),
            comm_q05: quantile_nearest_rank(&comm, 0.05),
            comm_q95: quantile_nearest_rank(&comm, 0.95),
            acc_median: median(&acc),
            acc_q05: quantile_nearest_rank(&acc, 0.05),
            acc_q95: quantile_nearest_rank(&acc, 0.95),
        });
    }
    Ok(points)
}

/// Event indices kept when thinning a series for plotting: every index up to
/// 10^3, then a 1% multiplicative grid, always including the horizon.
/// Metrics are never computed from thinned data, only emission is.
pub fn downsample_indices(n_events: u64) -> Vec<u64> {
    let mut indices: Vec<u64> = (1..=n_events.min(1000)).collect();
    let mut t = 1000u64;
    while t < n_events {
        t = ((t as f64 * 1.01) as u64).max(t + 1).min(n_events);
        indices.push(t);
    }
    indices
}

/// Write an aggregate series as `t,median,q05,q95` at the given indices.
pub fn write_aggregate_csv(
    path: &Path,
    series: &AggregateSeries,
    indices: &[u64],
) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "t,median,q05,q95")?;
        for &t in indices {
            let i = (t - 1) as usize;
            writeln!(out, "{},{},{},{}", t, series.median[i], series.q05[i], series.q95[i])?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

/// Write tradeoff points as
/// `epsilon,comm_med,comm_q05,comm_q95,acc_med,acc_q05,acc_q95`.
pub fn write_tradeoff_csv(path: &Path, points: &[TradeoffPoint]) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "epsilon,comm_med,comm_q05,comm_q95,acc_med,acc_q05,acc_q95")?;
        for p in points {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.epsilon, p.comm_median, p.comm_q05, p.comm_q95, p.acc_median, p.acc_q05, p.acc_q95
            )?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

/// Write raw transcript rows as `seed,t,n_hat,messages_cum,round` at the
/// given indices.
pub fn write_transcripts_csv(
    path: &Path,
    transcripts: &[Transcript],
    indices: &[u64],
) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "seed,t,n_hat,messages_cum,round")?;
        for transcript in transcripts {
            for &t in indices {
                let row = transcript.row(t);
                writeln!(out, "{},{},{},{},{}", transcript.seed, t, row.estimate, row.messages, row.round)?;
            }
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

/// The figure matrix: k in `ks` crossed with both protocols and both streams
/// at one (epsilon, c), aggregated over `runs` seeds.
#[derive(Debug, Clone)]
pub struct FigureParams {
    pub ks: Vec<usize>,
    pub epsilon: f64,
    pub c: f64,
    pub runs: usize,
    pub n_events: u64,
}

impl Default for FigureParams {
    fn default() -> Self {
        Self { ks: vec![64, 256], epsilon: 0.125, c: 1.0, runs: 40, n_events: 100_000 }
    }
}

/// Run the figure matrix and emit one aggregate CSV per (cell, metric) into
/// `dir`. Returns the written paths in a fixed order.
pub fn emit_figures(
    dir: &Path,
    params: &FigureParams,
    master_seed: u64,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let indices = downsample_indices(params.n_events);
    let mut written = Vec::new();
    let mut cell_index = 0u64;
    for &k in &params.ks {
        for protocol in [ProtocolKind::Hyz12, ProtocolKind::Robust] {
            for stream in [StreamKind::Uniform, StreamKind::Attack] {
                let cell = RunConfig::new(
                    k,
                    params.epsilon,
                    params.c,
                    params.n_events,
                    derive_seed(master_seed, cell_index),
                    protocol,
                    stream,
                )?;
                cell_index += 1;
                let transcripts = run_cell_map(&cell, params.runs, |t| t);
                for metric in MetricKind::ALL {
                    let series = aggregate(&transcripts, metric)?;
                    let path = dir.join(format!("{protocol}_{stream}_k{k}_{}.csv", metric.name()));
                    write_aggregate_csv(&path, &series, &indices)?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

/// Run one cell and emit raw transcripts plus the three aggregate series.
pub fn emit_simulation(
    dir: &Path,
    cell: &RunConfig,
    runs: usize,
) -> Result<Vec<PathBuf>, HarnessError> {
    cell.validate()?;
    if runs == 0 {
        return Err(HarnessError::NoRuns);
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let indices = downsample_indices(cell.n_events);
    let transcripts = run_cell_map(cell, runs, |t| t);
    let mut written = Vec::new();
    let path = dir.join("transcripts.csv");
    write_transcripts_csv(&path, &transcripts, &indices)?;
    written.push(path);
    for metric in MetricKind::ALL {
        let series = aggregate(&transcripts, metric)?;
        let path = dir.join(format!("agg_{}.csv", metric.name()));
        write_aggregate_csv(&path, &series, &indices)?;
        written.push(path);
    }
    Ok(written)
}
