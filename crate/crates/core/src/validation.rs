//! Quick self-checks of the whole pipeline, run by `simcf validate`.

use rand::Rng;

use crate::channel::WaveMatrices;
use crate::complexity::{ap_cost, instrumented_count};
use crate::error::Result;
use crate::fusion::{fuse, rayleigh_quotient, WeightDesign};
use crate::harness::{hardware_quality, PointRunner, TrialOptions};
use crate::linalg::{norm, C64};
use crate::linklevel::{empirical_sinr, Receiver, Uplink};
use crate::local_opt::{local_sinr, LinkBudget};
use crate::rng::StreamKey;
use crate::scenario::SystemConfig;
use crate::sim_stack::{compose_g, LayerState};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

fn mixed_quality_config() -> SystemConfig {
    let mut c = SystemConfig::desk();
    c.antenna_grid = (2, 2);
    c.ue_quality = vec![1.0, 1.0 - 1e-2, 1.0 - 1e-4];
    c.ap_quality = vec![1.0 - 1e-2, 1.0, 1.0 - 1e-4, 1.0 - 1e-2];
    c
}

/// Runs every check with streams derived from `seed`.
pub fn invariant_suite(seed: u64) -> Result<Vec<Check>> {
    let key = StreamKey::root(seed).label("validate");
    let config = mixed_quality_config();
    let runner = PointRunner::new(config.clone(), TrialOptions::default())?;
    let trial = runner.trial(key.label("trial"))?;
    let mut checks = Vec::new();

    let worst_step = trial
        .traces
        .iter()
        .flat_map(|t| t.windows(2).map(|w| (w[0] - w[1]) / w[0]))
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::new(
        "trace_monotone",
        worst_step <= 1e-12,
        format!("largest relative decrease {worst_step:.3e}"),
    ));

    let rho = config.transmit_power;
    let mut rng = key.label("weights").rng();
    let mut worst = f64::NEG_INFINITY;
    for u in &trial.fusion.ues {
        for _ in 0..1000 {
            let w: Vec<C64> = (0..config.num_aps)
                .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let n = norm(&w);
            let w: Vec<C64> = w.iter().map(|x| x / n).collect();
            let g = rayleigh_quotient(&w, &u.z.signal, &u.covariance, rho);
            worst = worst.max((g - u.sinr) / u.sinr);
        }
    }
    checks.push(Check::new(
        "weights_optimal",
        worst <= 1e-10,
        format!("best random weights exceed the optimum by {worst:.3e} relative"),
    ));

    let quality = hardware_quality(&config);
    let power = vec![rho; config.num_ues];
    let noise = vec![config.noise_power; config.num_aps];
    let weights: Vec<Vec<C64>> = trial.fusion.ues.iter().map(|u| u.weights.clone()).collect();
    let link = Uplink { channels: &trial.channels, transmit_power: &power, quality: &quality, noise_power: &noise };
    let rx = Receiver { combiners: &trial.combiners, weights: &weights };
    let measured = empirical_sinr(&link, &rx, 40_000, key.label("linklevel"));
    let err = trial
        .fusion
        .ues
        .iter()
        .zip(&measured)
        .map(|(u, m)| ((m.sinr() - u.sinr) / u.sinr).abs())
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "linklevel_agreement",
        err <= 0.05,
        format!("largest relative SINR gap {err:.3e} over 40000 channel uses"),
    ));

    let mut single = SystemConfig::desk();
    single.num_aps = 1;
    single.num_ues = 1;
    single.set_all_quality(1.0);
    let one = PointRunner::new(single.clone(), TrialOptions::default())?.trial(key.label("single"))?;
    let local = local_sinr(
        &one.channels[0],
        &one.combiners[0][0],
        0,
        &LinkBudget {
            transmit_power: &[single.transmit_power],
            ue_quality: &[1.0],
            ap_quality: 1.0,
            noise_power: single.noise_power,
        },
    )
    .sinr;
    let fused = fuse(
        &one.channels,
        &hardware_quality(&single),
        &[single.transmit_power],
        &[single.noise_power],
        WeightDesign::Matched,
    )?
    .ues[0]
        .sinr;
    let gap = ((fused - local) / local).abs();
    checks.push(Check::new(
        "single_link_consistency",
        gap <= 1e-10,
        format!("fused {fused:.6e} vs local {local:.6e}"),
    ));

    let mut flat = SystemConfig::desk();
    flat.set_layers(1);
    let stack = WaveMatrices::from_config(&flat)?.stack(1);
    let g = compose_g(&stack, &[LayerState::uniform(flat.num_elements(), 0.0, 1.0)])?;
    checks.push(Check::new(
        "identity_surface",
        g == *stack.first_hop,
        "single transparent layer reproduces the first-hop matrix".into(),
    ));

    let (n, m, k, t) = (4, 2, 2, 2);
    let measured = instrumented_count(n, m, k, t, seed)?;
    let formula = ap_cost(n as u64, m as u64, k as u64, t as u64)?;
    let same = measured.channel == formula.channel
        && measured.combining == formula.combining
        && measured.per_layer == formula.per_layer;
    checks.push(Check::new(
        "multiplication_counts",
        same,
        format!("measured {measured:?}, formula {formula:?}"),
    ));

    Ok(checks)
}
