//! Draws one channel realization and writes it as CSV.
//!
//! `cargo run --example channel_synthesis -- <dir>`; without a directory the
//! files go to a temporary one.

use sim_cellfree::channel::{radiated_power, PropagationSet, SquareRule, WaveMatrices};
use sim_cellfree::linalg::norm;
use sim_cellfree::rng::StreamKey;
use sim_cellfree::scenario::{build_layout, SystemConfig};

fn main() -> sim_cellfree::Result<()> {
    let config = SystemConfig::desk();
    let lambda = config.wavelength();

    // Power from one element to a point straight below it, one wavelength away.
    let rule = SquareRule::gauss_legendre(config.quadrature_order);
    let gamma = radiated_power([0.0, 0.0, lambda], config.element_size, [0.0, 0.0, 0.0], config.radiation_gain, &rule)?;
    println!("on-axis element gain at one wavelength: {gamma:.4e}");

    let layout = build_layout(&config)?;
    let waves = WaveMatrices::from_config(&config)?;
    let props = PropagationSet::build(&config, &layout, &waves, StreamKey::root(config.rng_seed))?;
    let first = &props.stacks[0].first_hop;
    println!("first hop: {}x{}, Frobenius norm {:.4e}", first.rows(), first.cols(), first.frobenius_norm());
    for (k, link) in props.links[0].iter().enumerate() {
        println!(
            "UE {k} -> AP 0: path loss {:.3e}, |h| = {:.3}, {} paths",
            link.large_scale,
            norm(&link.small_scale),
            link.paths.len()
        );
    }

    let dir = match std::env::args().nth(1) {
        Some(d) => std::path::PathBuf::from(d),
        None => std::env::temp_dir().join("simcf-channels"),
    };
    std::fs::create_dir_all(&dir)?;
    props.dump_csv(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
