//! Runs the layer-by-layer phase optimization at every AP and prints the
//! target gain after each iteration.

use sim_cellfree::channel::{PropagationSet, WaveMatrices};
use sim_cellfree::local_opt::{optimize_network, write_trace_csv, IterationBudget};
use sim_cellfree::rng::StreamKey;
use sim_cellfree::scenario::{build_layout, SystemConfig};

fn main() -> sim_cellfree::Result<()> {
    let config = SystemConfig::desk();
    let layout = build_layout(&config)?;
    let waves = WaveMatrices::from_config(&config)?;
    let key = StreamKey::root(config.rng_seed);
    let props = PropagationSet::build(&config, &layout, &waves, key)?;
    let aps = optimize_network(&config, &layout, &props, key.label("surface"), IterationBudget::fixed(20))?;

    for (l, a) in aps.iter().enumerate() {
        let first = a.trace[0];
        let gains: Vec<String> = a.trace.iter().step_by(5).map(|g| format!("{:.2}", g / first)).collect();
        println!("AP {l} -> UE {}: gain relative to start every 5 iterations: {}", a.beamformer.target.ue, gains.join(" "));
    }
    let path = std::env::temp_dir().join("simcf-trace.csv");
    write_trace_csv(&path, &aps)?;
    println!("wrote {}", path.display());
    Ok(())
}
