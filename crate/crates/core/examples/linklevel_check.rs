//! Simulates the impaired uplink symbol by symbol and compares the measured
//! SINR with the closed form.

use sim_cellfree::harness::{hardware_quality, PointRunner, TrialOptions};
use sim_cellfree::linalg::C64;
use sim_cellfree::linklevel::{empirical_sinr, Receiver, Uplink};
use sim_cellfree::rng::StreamKey;
use sim_cellfree::scenario::SystemConfig;

fn main() -> sim_cellfree::Result<()> {
    let mut config = SystemConfig::desk();
    config.ue_quality = vec![1.0, 0.99, 0.9999];
    config.ap_quality = vec![0.99, 1.0, 0.99, 0.9999];
    let key = StreamKey::root(11);
    let trial = PointRunner::new(config.clone(), TrialOptions::default())?.trial(key)?;

    let quality = hardware_quality(&config);
    let power = vec![config.transmit_power; config.num_ues];
    let noise = vec![config.noise_power; config.num_aps];
    let weights: Vec<Vec<C64>> = trial.fusion.ues.iter().map(|u| u.weights.clone()).collect();
    let link = Uplink { channels: &trial.channels, transmit_power: &power, quality: &quality, noise_power: &noise };
    let rx = Receiver { combiners: &trial.combiners, weights: &weights };

    let measured = empirical_sinr(&link, &rx, 100_000, key.label("symbols"));
    for (k, (u, m)) in trial.fusion.ues.iter().zip(&measured).enumerate() {
        println!(
            "UE {k}: closed form {:.4e}, measured {:.4e} ({:+.2}%), interference {:.2}% of the disturbance",
            u.sinr,
            m.sinr(),
            100.0 * (m.sinr() / u.sinr - 1.0),
            100.0 * m.interference / (m.sum_of_terms() - m.desired)
        );
    }
    Ok(())
}
