//! Per-AP alternating optimization of the digital combiners and the
//! metasurface phases, and the local SINR of the resulting estimates.
//!
//! The kernels are generic over [`Scalar`] so that the same code can be run
//! with a multiplication-counting scalar (see [`crate::complexity`]).

use std::path::Path;

use rayon::prelude::*;

use crate::channel::{PropagationSet, StackMatrices, UeLink};
use crate::error::{Error, Result};
use crate::linalg::{norm, CMat, Scalar, C64};
use crate::rng::StreamKey;
use crate::scenario::{NetworkLayout, SystemConfig};
use crate::sim_stack::{random_ap_layers, EquivalentChannel, LayerState, SurfaceState};

/// Borrowed transfer matrices together with the diagonal layer responses.
#[derive(Clone, Debug)]
pub struct StackView<'a, S> {
    /// `A^(t)` for `t = 1..=T`.
    pub mats: Vec<&'a CMat<S>>,
    /// `√υ` per layer.
    pub amplitude: Vec<Vec<S>>,
    /// `e^{jθ}` per layer.
    pub phase: Vec<Vec<S>>,
}

impl<'a> StackView<'a, C64> {
    pub fn new(stack: &'a StackMatrices, layers: &[LayerState]) -> Self {
        Self {
            mats: (1..=stack.layers()).map(|t| stack.layer_matrix(t)).collect(),
            amplitude: layers.iter().map(LayerState::amplitude_factors).collect(),
            phase: layers.iter().map(LayerState::phase_factors).collect(),
        }
    }
}

impl<S: Scalar> StackView<'_, S> {
    pub fn layers(&self) -> usize {
        self.mats.len()
    }

    fn apply_layer_right(&self, t: usize, mut x: Vec<S>) -> Vec<S> {
        for (v, &p) in x.iter_mut().zip(&self.phase[t - 1]) {
            *v = *v * p;
        }
        for (v, &a) in x.iter_mut().zip(&self.amplitude[t - 1]) {
            *v = *v * a;
        }
        self.mats[t - 1].mul_vec(&x)
    }
}

/// `√ϱ A¹√Υ¹Θ¹ ⋯ A^T√Υ^TΘ^T h`, evaluated right to left.
pub fn equivalent_channel_chain<S: Scalar>(view: &StackView<'_, S>, h: &[S], sqrt_gain: S) -> Vec<S> {
    let mut x = h.to_vec();
    for t in (1..=view.layers()).rev() {
        x = view.apply_layer_right(t, x);
    }
    x.into_iter().map(|v| v * sqrt_gain).collect()
}

/// `h̄^(t) = A^{t+1}√Υ^{t+1}Θ^{t+1} ⋯ A^T√Υ^TΘ^T h`.
pub fn forward_partial<S: Scalar>(view: &StackView<'_, S>, t: usize, h: &[S]) -> Vec<S> {
    let mut x = h.to_vec();
    for s in (t + 1..=view.layers()).rev() {
        x = view.apply_layer_right(s, x);
    }
    x
}

/// Row vector `bᴴA¹√Υ¹Θ¹ ⋯ A^t√Υ^t`, using the current phases of layers
/// `1..t`.
pub fn combiner_partial<S: Scalar>(view: &StackView<'_, S>, t: usize, b: &[S]) -> Vec<S> {
    let bh: Vec<S> = b.iter().map(|&v| v.conj()).collect();
    let mut x = view.mats[0].row_mul(&bh);
    for (v, &a) in x.iter_mut().zip(&view.amplitude[0]) {
        *v = *v * a;
    }
    for s in 2..=t {
        for (v, &p) in x.iter_mut().zip(&view.phase[s - 2]) {
            *v = *v * p;
        }
        x = view.mats[s - 1].row_mul(&x);
        for (v, &a) in x.iter_mut().zip(&view.amplitude[s - 1]) {
            *v = *v * a;
        }
    }
    x
}

/// Squared norm and unit-norm combiner `q / ‖q‖`; `None` when `q = 0`.
pub fn mrc<S: Scalar>(q: &[S]) -> Option<Vec<S>> {
    let mut energy = S::zero();
    for &v in q {
        energy += v * v.conj();
    }
    let n = energy.to_c64().re.sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return None;
    }
    let inv = S::from_real(1.0 / n);
    Some(q.iter().map(|&v| v * inv).collect())
}

/// MRC combiners of all UEs at AP `ap`.
pub fn mrc_combiners(q: &[Vec<C64>], ap: usize) -> Result<Vec<Vec<C64>>> {
    q.iter()
        .enumerate()
        .map(|(ue, qk)| mrc(qk).ok_or(Error::DegenerateChannel { ap, ue }))
        .collect()
}

/// Phases maximizing `|r Θ h̄|` for a row vector `r` and column vector `h̄`:
/// `θ_n = −∠r_n − ∠h̄_n`. Zero products get phase 0.
pub fn optimal_layer_phases<S: Scalar>(row: &[S], hbar: &[S]) -> Vec<f64> {
    row.iter()
        .zip(hbar)
        .map(|(&r, &h)| {
            let (r, h) = (r.to_c64(), h.to_c64());
            if r.norm() == 0.0 || h.norm() == 0.0 {
                0.0
            } else {
                -r.arg() - h.arg()
            }
        })
        .collect()
}

/// `r Θ h̄` for explicit phases.
pub fn layer_gain(row: &[C64], phases: &[f64], hbar: &[C64]) -> C64 {
    row.iter()
        .zip(phases)
        .zip(hbar)
        .map(|((r, &t), h)| r * C64::from_polar(1.0, t) * h)
        .sum()
}

/// Re-optimizes layer `t` of `layers` for combiner `b` and channel `h`;
/// returns the resulting gain `Σ |r_n||h̄_n|`.
pub fn layer_update(stack: &StackMatrices, layers: &mut [LayerState], t: usize, b: &[C64], h: &[C64]) -> Result<f64> {
    let view = StackView::new(stack, layers);
    let row = combiner_partial(&view, t, b);
    let hbar = forward_partial(&view, t, h);
    let phases = optimal_layer_phases(&row, &hbar);
    layers[t - 1].set_phases(&phases)?;
    Ok(row.iter().zip(&hbar).map(|(r, h)| r.norm() * h.norm()).sum())
}

/// AP that each UE's nearest-AP set assigns to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FocusTarget {
    pub ue: usize,
    /// False when the AP is in no UE's nearest set and simply serves its own
    /// nearest UE.
    pub from_nearest_set: bool,
}

/// For each AP, the UE its metasurface is focused on: among the UEs whose
/// nearest-AP set contains the AP, the closest one (lowest index on ties);
/// an AP that is nobody's nearest focuses on its own closest UE.
pub fn focus_targets(layout: &NetworkLayout) -> Vec<FocusTarget> {
    let num_aps = layout.ap_positions.len();
    let num_ues = layout.ue_positions.len();
    (0..num_aps)
        .map(|l| {
            let claimed: Vec<usize> = (0..num_ues).filter(|&k| layout.nearest_ap_sets[k].contains(&l)).collect();
            let from_nearest_set = !claimed.is_empty();
            let pool = if from_nearest_set { claimed } else { (0..num_ues).collect() };
            let ue = pool
                .into_iter()
                .min_by(|&a, &b| layout.distances[a][l].total_cmp(&layout.distances[b][l]).then(a.cmp(&b)))
                .expect("at least one UE");
            FocusTarget { ue, from_nearest_set }
        })
        .collect()
}

/// Iteration control of the alternating optimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationBudget {
    pub iterations: usize,
    /// Stop once the relative gain change falls below this value.
    pub early_stop: Option<f64>,
}

impl IterationBudget {
    pub fn fixed(iterations: usize) -> Self {
        Self { iterations, early_stop: None }
    }
}

/// Digital side of one AP after optimization.
#[derive(Clone, Debug)]
pub struct LocalBeamformer {
    /// Unit-norm `b_k` for every UE.
    pub combiners: Vec<Vec<C64>>,
    pub target: FocusTarget,
    pub iterations: usize,
}

/// Result of optimizing one AP.
#[derive(Clone, Debug)]
pub struct ApOptimization {
    pub beamformer: LocalBeamformer,
    pub layers: Vec<LayerState>,
    pub channel: EquivalentChannel,
    /// `‖q_target‖` before the first iteration and after each iteration.
    pub trace: Vec<f64>,
}

/// Runs the alternating optimization at one AP starting from `initial`.
///
/// Each iteration computes the target's equivalent channel, takes its MRC
/// combiner and sweeps layers `1..=T`, each layer seeing the phases already
/// updated in this sweep. Combiners of all UEs are recomputed from the final
/// phases.
pub fn optimize_ap(
    ap: usize,
    stack: &StackMatrices,
    links: &[UeLink],
    target: FocusTarget,
    initial: Vec<LayerState>,
    budget: IterationBudget,
) -> Result<ApOptimization> {
    let mut layers = initial;
    let link = &links[target.ue];
    let h = &link.small_scale;
    let sqrt_gain = C64::new(link.large_scale.sqrt(), 0.0);
    let mut view = StackView::new(stack, &layers);
    let mut q = equivalent_channel_chain(&view, h, sqrt_gain);
    let mut trace = vec![norm(&q)];
    let mut done = 0;
    for _ in 0..budget.iterations {
        let b = mrc(&q).ok_or(Error::DegenerateChannel { ap, ue: target.ue })?;
        for t in 1..=layers.len() {
            let row = combiner_partial(&view, t, &b);
            let hbar = forward_partial(&view, t, h);
            let phases = optimal_layer_phases(&row, &hbar);
            layers[t - 1].set_phases(&phases)?;
            view.phase[t - 1] = layers[t - 1].phase_factors();
        }
        q = equivalent_channel_chain(&view, h, sqrt_gain);
        let prev = *trace.last().expect("non-empty trace");
        let gain = norm(&q);
        trace.push(gain);
        done += 1;
        if let Some(tol) = budget.early_stop {
            if (gain - prev).abs() <= tol * gain {
                break;
            }
        }
    }
    let channel = EquivalentChannel::new(stack, &layers, links)?;
    let combiners = mrc_combiners(&channel.q, ap)?;
    Ok(ApOptimization {
        beamformer: LocalBeamformer { combiners, target, iterations: done },
        layers,
        channel,
        trace,
    })
}

/// Optimizes every AP independently, in parallel. AP `l` starts from random
/// phases drawn from `key / "init" / l`.
pub fn optimize_network(
    config: &SystemConfig,
    layout: &NetworkLayout,
    props: &PropagationSet,
    key: StreamKey,
    budget: IterationBudget,
) -> Result<Vec<ApOptimization>> {
    let targets = focus_targets(layout);
    let n = config.num_elements();
    (0..config.num_aps)
        .into_par_iter()
        .map(|l| {
            let init = random_ap_layers(
                n,
                config.layers(l),
                config.radiation_coefficient,
                key.label("init").index(l as u64),
            );
            optimize_ap(l, &props.stacks[l], &props.links[l], targets[l], init, budget)
        })
        .collect()
}

/// Collects the optimized phases of all APs.
pub fn surface_state(aps: &[ApOptimization]) -> SurfaceState {
    SurfaceState::from_layers(aps.iter().map(|a| a.layers.clone()).collect())
}

/// Writes `ap,iteration,gain` rows (1-based AP, iteration 0 is the initial
/// state).
pub fn write_trace_csv(path: &Path, aps: &[ApOptimization]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ap", "iteration", "gain"])?;
    for (l, a) in aps.iter().enumerate() {
        for (i, g) in a.trace.iter().enumerate() {
            w.write_record([(l + 1).to_string(), i.to_string(), format!("{g:e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Hardware and power parameters seen by one AP.
#[derive(Clone, Copy, Debug)]
pub struct LinkBudget<'a> {
    /// `ρ_k` per UE, watts.
    pub transmit_power: &'a [f64],
    /// `ε_u` per UE.
    pub ue_quality: &'a [f64],
    /// `ε_v` of this AP.
    pub ap_quality: f64,
    /// `σ_w²`, watts.
    pub noise_power: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalSinrReport {
    pub ue: usize,
    pub sinr: f64,
    /// `ς_{k,k'}` for every `k'`.
    pub distortion: Vec<f64>,
}

/// SINR of UE `k`'s local estimate `b_kᴴ y` at one AP.
pub fn local_sinr(q: &[Vec<C64>], b: &[C64], k: usize, budget: &LinkBudget) -> LocalSinrReport {
    let ev = budget.ap_quality;
    let mut interference = 0.0;
    let mut signal = 0.0;
    let distortion: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(kp, qk)| {
            let rho = budget.transmit_power[kp];
            let eu = budget.ue_quality[kp];
            let proj = crate::linalg::dot_h(b, qk).norm_sqr();
            let diag: f64 = b.iter().zip(qk).map(|(bm, qm)| bm.norm_sqr() * qm.norm_sqr()).sum();
            let sigma = rho * (1.0 - eu) * ev * proj + rho * (1.0 - ev) * diag;
            if kp == k {
                signal = rho * eu * ev * proj;
            } else {
                interference += rho * eu * ev * proj;
            }
            sigma
        })
        .collect();
    let denom = distortion.iter().sum::<f64>() + interference + budget.noise_power;
    LocalSinrReport { ue: k, sinr: signal / denom, distortion }
}
