//! Fuses local estimates at the CPU under hardware impairments and compares
//! impairment-aware weights with weights designed for ideal hardware.

use sim_cellfree::fusion::{build_z_vectors, fuse, hwi_saturation_limit, WeightDesign};
use sim_cellfree::harness::{hardware_quality, PointRunner, TrialOptions};
use sim_cellfree::rng::StreamKey;
use sim_cellfree::scenario::{dbm_to_watts, SystemConfig};

fn main() -> sim_cellfree::Result<()> {
    let mut config = SystemConfig::desk();
    config.set_all_quality(0.99);
    let quality = hardware_quality(&config);
    let noise = vec![config.noise_power; config.num_aps];

    let trial = PointRunner::new(config.clone(), TrialOptions::default())?.trial(StreamKey::root(3))?;
    let z = build_z_vectors(&trial.channels, &quality)?;

    println!("{:>8} {:>10} {:>10}", "dBm", "aware", "unaware");
    for dbm in [0.0, 20.0, 40.0, 60.0] {
        let rho = vec![dbm_to_watts(dbm); config.num_ues];
        let aware = fuse(&trial.channels, &quality, &rho, &noise, WeightDesign::Matched)?;
        let naive = fuse(&trial.channels, &quality, &rho, &noise, WeightDesign::HardwareUnaware)?;
        println!("{dbm:>8} {:>10.4} {:>10.4}", aware.rates.mean, naive.rates.mean);
    }
    for k in 0..config.num_ues {
        println!("UE {k} rate ceiling: {:.4} bit/s/Hz", hwi_saturation_limit(&z, k).rate());
    }
    Ok(())
}
