//! Composes the end-to-end transfer matrix of one AP's metasurface stack and
//! shows what phase quantization does to it.

use sim_cellfree::channel::WaveMatrices;
use sim_cellfree::rng::StreamKey;
use sim_cellfree::scenario::SystemConfig;
use sim_cellfree::sim_stack::{compose_g, SurfaceState};

fn main() -> sim_cellfree::Result<()> {
    let config = SystemConfig::desk();
    let stack = WaveMatrices::from_config(&config)?.stack(config.layers(0));
    let surfaces = SurfaceState::random(&config, StreamKey::root(1));

    let g = compose_g(&stack, surfaces.ap(0))?;
    println!("G: {}x{}, Frobenius norm {:.4e}", g.rows(), g.cols(), g.frobenius_norm());

    for bits in 1..=4 {
        let gq = compose_g(&stack, surfaces.quantized(bits).ap(0))?;
        let diff: f64 = g.as_slice().iter().zip(gq.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum();
        println!("{bits}-bit phases: relative change {:.3e}", diff.sqrt() / g.frobenius_norm());
    }

    let path = std::env::temp_dir().join("simcf-surfaces.csv");
    surfaces.write_csv(&path)?;
    let back = SurfaceState::read_csv(&path)?;
    println!("surface CSV round trip exact: {}", back == surfaces);
    Ok(())
}
