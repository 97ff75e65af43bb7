//! End-to-end trials and parameter sweeps with CSV output.
//!
//! A trial draws a layout and channels, optimizes every AP, fuses at the CPU
//! and reports per-UE rates. A sweep repeats trials at each grid point and
//! aggregates them in trial order, so the output bytes depend only on the
//! spec and the seed.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::channel::{PropagationSet, WaveMatrices};
use crate::complexity::{cost_table, write_cost_table, CostPoint};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionReport, HardwareQuality, WeightDesign};
use crate::linalg::{compensated_sum, C64};
use crate::local_opt::{mrc_combiners, optimize_network, surface_state, IterationBudget};
use crate::rng::StreamKey;
use crate::scenario::{build_layout_with, dbm_to_watts, PhaseResolution, SystemConfig};
use crate::sim_stack::EquivalentChannel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Experiment {
    RateVsPower,
    ApCountSweep,
    LayersSweep,
    AntennasSweep,
    InterlayerDistanceSweep,
    LayersCountSweep,
    ConvergenceTrace,
    QuantizationSweep,
    CostTable,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Self::RateVsPower,
        Self::ApCountSweep,
        Self::LayersSweep,
        Self::AntennasSweep,
        Self::InterlayerDistanceSweep,
        Self::LayersCountSweep,
        Self::ConvergenceTrace,
        Self::QuantizationSweep,
        Self::CostTable,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::RateVsPower => "rate_vs_power",
            Self::ApCountSweep => "ap_count_sweep",
            Self::LayersSweep => "layers_sweep",
            Self::AntennasSweep => "antennas_sweep",
            Self::InterlayerDistanceSweep => "interlayer_distance_sweep",
            Self::LayersCountSweep => "layers_count_sweep",
            Self::ConvergenceTrace => "convergence_trace",
            Self::QuantizationSweep => "quantization_sweep",
            Self::CostTable => "cost_table",
        }
    }

    /// Name of the swept parameter as written to the CSV.
    pub fn param_name(self) -> &'static str {
        match self {
            Self::RateVsPower => "transmit_power_dbm",
            Self::ApCountSweep => "aps",
            Self::LayersSweep => "layers_paired",
            Self::AntennasSweep => "antennas",
            Self::InterlayerDistanceSweep => "inter_layer_distance_wavelengths",
            Self::LayersCountSweep => "layers",
            Self::ConvergenceTrace => "iterations",
            Self::QuantizationSweep => "phase_bits",
            Self::CostTable => "elements",
        }
    }

    pub fn default_grid(self, scale: Scale) -> Vec<f64> {
        let full = scale == Scale::Reference;
        match self {
            Self::RateVsPower if full => (0..=8).map(|i| 5.0 * i as f64).collect(),
            Self::RateVsPower => vec![0.0, 10.0, 20.0, 30.0],
            Self::ApCountSweep if full => vec![4.0, 9.0, 16.0, 25.0],
            Self::ApCountSweep => vec![2.0, 4.0, 8.0],
            Self::LayersSweep => vec![1.0, 2.0, 4.0],
            Self::AntennasSweep if full => vec![4.0, 9.0, 16.0, 25.0, 36.0],
            Self::AntennasSweep => vec![1.0, 4.0, 9.0, 16.0],
            Self::InterlayerDistanceSweep => vec![0.25, 0.5, 1.0, 2.0, 4.0],
            Self::LayersCountSweep if full => (1..=8).map(f64::from).collect(),
            Self::LayersCountSweep => (1..=4).map(f64::from).collect(),
            Self::ConvergenceTrace => (0..=10).map(f64::from).chain([15.0, 20.0]).collect(),
            Self::QuantizationSweep => (1..=6).map(f64::from).chain([0.0]).collect(),
            Self::CostTable => vec![16.0, 64.0, 256.0],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scale {
    /// Reduced deployment for quick runs.
    #[default]
    Desk,
    /// Full reference deployment.
    Reference,
}

impl Scale {
    pub fn base_config(self) -> SystemConfig {
        match self {
            Scale::Desk => SystemConfig::desk(),
            Scale::Reference => SystemConfig::default(),
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Scale::Desk => 50,
            Scale::Reference => 100,
        }
    }
}

/// Evaluation choices that are not part of the physical configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOptions {
    pub weight_design: WeightDesign,
    pub early_stop: Option<f64>,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self { weight_design: WeightDesign::Matched, early_stop: None }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub base: SystemConfig,
    pub seed: u64,
    pub options: TrialOptions,
    /// Reuse the same trial streams at every grid point, so that points
    /// differ only by the swept parameter. Otherwise each point gets its own
    /// streams.
    pub common_random_numbers: bool,
}

impl ExperimentSpec {
    pub fn new(experiment: Experiment, scale: Scale) -> Self {
        Self {
            experiment,
            grid: experiment.default_grid(scale),
            trials: scale.default_trials(),
            base: scale.base_config(),
            seed: 0,
            options: TrialOptions::default(),
            common_random_numbers: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("empty sweep grid".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.base.validate()
    }

    /// Configuration of grid point `value`.
    pub fn point_config(&self, value: f64) -> Result<SystemConfig> {
        let mut c = self.base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{}: `{v}` is not a count", self.experiment)))
            }
        };
        match self.experiment {
            Experiment::RateVsPower => c.transmit_power = dbm_to_watts(value),
            Experiment::ApCountSweep => c.num_aps = count(value)?,
            Experiment::LayersSweep => {
                let t = count(value)?;
                let side = (PAIRED_LAYER_SIDE / t.max(1)).max(1);
                c.set_layers(t);
                c.element_grid = (side, side);
            }
            Experiment::AntennasSweep => c.antenna_grid = near_square(count(value)?),
            Experiment::InterlayerDistanceSweep => c.inter_layer_distance = value * c.wavelength(),
            Experiment::LayersCountSweep => c.set_layers(count(value)?),
            Experiment::ConvergenceTrace => c.iterations = count(value)?,
            Experiment::QuantizationSweep => {
                let b = count(value)?;
                c.phase_bits = if b == 0 { PhaseResolution::Continuous } else { PhaseResolution::Bits(b as u32) };
            }
            Experiment::CostTable => c.element_grid = near_square(count(value)?),
        }
        c.validate()?;
        Ok(c)
    }

    /// Stream of trial `trial` at point `point`.
    pub fn trial_key(&self, point: usize, trial: usize) -> StreamKey {
        let base = StreamKey::root(self.seed).label(self.experiment.id());
        if self.common_random_numbers {
            base.label("trial").index(trial as u64)
        } else {
            base.index(point as u64).index(trial as u64)
        }
    }
}

/// Per-layer side length at one layer; the paired sweep uses
/// `side = PAIRED_LAYER_SIDE / T`.
pub const PAIRED_LAYER_SIDE: usize = 16;

/// `(a, b)` with `a · b = n` and `a ≤ b` as close as possible.
pub fn near_square(n: usize) -> (usize, usize) {
    let mut a = (n as f64).sqrt().floor() as usize;
    while a > 1 && n % a != 0 {
        a -= 1;
    }
    let a = a.max(1);
    (a, n / a)
}

/// Outcome of one end-to-end trial.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub fusion: FusionReport,
    /// Optimization traces per AP.
    pub traces: Vec<Vec<f64>>,
    /// `q[l][k]` as evaluated (after quantization, if any).
    pub channels: Vec<Vec<Vec<C64>>>,
    /// MRC combiners `b[l][k]` matching `channels`.
    pub combiners: Vec<Vec<Vec<C64>>>,
}

impl TrialOutcome {
    pub fn mean_rate(&self) -> f64 {
        self.fusion.rates.mean
    }

    pub fn sum_rate(&self) -> f64 {
        self.fusion.rates.sum
    }

    pub fn per_ue_rates(&self) -> &[f64] {
        &self.fusion.rates.per_ue
    }
}

/// Runs trials of one configuration, sharing the geometry-only work.
#[derive(Clone, Debug)]
pub struct PointRunner {
    config: SystemConfig,
    waves: WaveMatrices,
    options: TrialOptions,
}

impl PointRunner {
    pub fn new(config: SystemConfig, options: TrialOptions) -> Result<Self> {
        let waves = WaveMatrices::from_config(&config)?;
        Ok(Self { config, waves, options })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    /// One trial: layout, channels, per-AP optimization, quantization,
    /// fusion.
    pub fn trial(&self, key: StreamKey) -> Result<TrialOutcome> {
        let c = &self.config;
        let layout = build_layout_with(c, &mut key.label("layout").rng())?;
        let props = PropagationSet::build(c, &layout, &self.waves, key)?;
        let budget = IterationBudget { iterations: c.iterations, early_stop: self.options.early_stop };
        let aps = optimize_network(c, &layout, &props, key.label("surface"), budget)?;
        let channels: Vec<Vec<Vec<C64>>> = match c.phase_bits {
            PhaseResolution::Continuous => aps.iter().map(|a| a.channel.q.clone()).collect(),
            PhaseResolution::Bits(b) => {
                let state = surface_state(&aps).quantized(b);
                (0..c.num_aps)
                    .map(|l| Ok(EquivalentChannel::new(&props.stacks[l], state.ap(l), &props.links[l])?.q))
                    .collect::<Result<_>>()?
            }
        };
        let combiners = channels
            .iter()
            .enumerate()
            .map(|(l, q)| mrc_combiners(q, l))
            .collect::<Result<Vec<_>>>()?;
        let quality = hardware_quality(c);
        let rho = vec![c.transmit_power; c.num_ues];
        let noise = vec![c.noise_power; c.num_aps];
        let fusion = fuse(&channels, &quality, &rho, &noise, self.options.weight_design)?;
        Ok(TrialOutcome { fusion, traces: aps.into_iter().map(|a| a.trace).collect(), channels, combiners })
    }
}

/// Per-UE and per-AP quality factors of `config`.
pub fn hardware_quality(config: &SystemConfig) -> HardwareQuality {
    HardwareQuality {
        ue: (0..config.num_ues).map(|k| config.eps_u(k)).collect(),
        ap: (0..config.num_aps).map(|l| config.eps_v(l)).collect(),
    }
}

/// One end-to-end trial of `config` on stream `key`.
pub fn run_point(config: &SystemConfig, key: StreamKey) -> Result<TrialOutcome> {
    PointRunner::new(config.clone(), TrialOptions::default())?.trial(key)
}

/// Aggregated result of one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub experiment: Experiment,
    /// 1-based.
    pub point: usize,
    pub param_value: f64,
    pub trials: usize,
    /// Mean over trials of the UE-average rate.
    pub mean_rate: f64,
    /// Sample standard deviation over trials of the UE-average rate.
    pub std_rate: f64,
    /// Mean over trials of the sum rate.
    pub sum_rate: f64,
}

/// Per-point outcomes; a failed point carries the error of its first
/// failing trial.
#[derive(Debug)]
pub struct ExperimentReport {
    pub points: Vec<std::result::Result<SweepRow, Error>>,
}

impl ExperimentReport {
    pub fn rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.points.iter().filter_map(|p| p.as_ref().ok())
    }

    pub fn first_error(&self) -> Option<&Error> {
        self.points.iter().find_map(|p| p.as_ref().err())
    }
}

fn aggregate(experiment: Experiment, point: usize, value: f64, outcomes: &[(f64, f64)]) -> SweepRow {
    let n = outcomes.len();
    let mean = compensated_sum(outcomes.iter().map(|o| o.0)) / n as f64;
    let var = if n > 1 {
        compensated_sum(outcomes.iter().map(|o| (o.0 - mean).powi(2))) / (n - 1) as f64
    } else {
        0.0
    };
    SweepRow {
        experiment,
        point,
        param_value: value,
        trials: n,
        mean_rate: mean,
        std_rate: var.sqrt(),
        sum_rate: compensated_sum(outcomes.iter().map(|o| o.1)) / n as f64,
    }
}

fn run_grid_point(spec: &ExperimentSpec, index: usize, value: f64) -> Result<SweepRow> {
    let wrap = |trial: usize, e: Error| Error::Experiment {
        experiment: spec.experiment.id().to_string(),
        point: index + 1,
        trial,
        source: Box::new(e),
    };
    let runner = spec
        .point_config(value)
        .and_then(|c| PointRunner::new(c, spec.options))
        .map_err(|e| wrap(0, e))?;
    let outcomes: Vec<(f64, f64)> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            runner
                .trial(spec.trial_key(index, trial))
                .map(|o| (o.mean_rate(), o.sum_rate()))
                .map_err(|e| wrap(trial, e))
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(spec.experiment, index + 1, value, &outcomes))
}

/// Runs every grid point of a rate experiment. Use [`write_cost_csv`] for
/// the cost table.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    if spec.experiment == Experiment::CostTable {
        return Err(Error::Config("cost_table produces a cost table, not rates".into()));
    }
    let points = spec
        .grid
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let r = run_grid_point(spec, i, v);
            if let Err(e) = &r {
                log::error!("{e}");
            }
            r
        })
        .collect();
    Ok(ExperimentReport { points })
}

/// [`run_experiment`] on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads(spec: &ExperimentSpec, threads: usize) -> Result<ExperimentReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(spec))
}

pub const SWEEP_HEADER: [&str; 8] =
    ["experiment", "point", "param_name", "param_value", "trials", "mean_rate", "std_rate", "sum_rate"];

/// Writes the successful rows with LF line endings.
pub fn write_sweep_csv<W: Write>(out: W, report: &ExperimentReport) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in report.rows() {
        w.write_record([
            r.experiment.id().to_string(),
            r.point.to_string(),
            r.experiment.param_name().to_string(),
            r.param_value.to_string(),
            r.trials.to_string(),
            r.mean_rate.to_string(),
            r.std_rate.to_string(),
            r.sum_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Cost table over the grid of per-layer element counts, with the base
/// configuration's M, K, L, T and iteration budget.
pub fn write_cost_csv<W: Write>(out: W, spec: &ExperimentSpec) -> Result<()> {
    let points = spec
        .grid
        .iter()
        .map(|&v| {
            let c = spec.point_config(v)?;
            Ok(CostPoint {
                n: c.num_elements() as u64,
                m: c.num_antennas() as u64,
                k: c.num_ues as u64,
                l: c.num_aps as u64,
                t: c.layers(0) as u64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = cost_table(&points, spec.base.iterations as u64)?;
    write_cost_table(out, &rows)
}
