//! Places APs on a grid and UEs at random, then shows which AP focuses on
//! which UE.

use sim_cellfree::local_opt::focus_targets;
use sim_cellfree::scenario::{build_layout, SystemConfig};

fn main() -> sim_cellfree::Result<()> {
    let mut config = SystemConfig::desk();
    config.rng_seed = 7;
    let layout = build_layout(&config)?;

    for (l, p) in layout.ap_positions.iter().enumerate() {
        println!("AP {l}: ({:7.2}, {:7.2}) m", p[0], p[1]);
    }
    for (k, p) in layout.ue_positions.iter().enumerate() {
        let d: Vec<String> = layout.distances[k].iter().map(|d| format!("{d:6.1}")).collect();
        println!("UE {k}: ({:7.2}, {:7.2}) m  distances [{}]  nearest {:?}", p[0], p[1], d.join(" "), layout.nearest_ap_sets[k]);
    }
    for (l, t) in focus_targets(&layout).iter().enumerate() {
        let how = if t.from_nearest_set { "claimed" } else { "fallback" };
        println!("AP {l} focuses on UE {} ({how})", t.ue);
    }
    Ok(())
}
