//! Reads a flat `key = value` configuration with units.

use sim_cellfree::scenario::{convert_units_onto, parse_config_text, watts_to_dbm, SystemConfig};

const TEXT: &str = "
# four APs, each with a three-layer surface
num_aps = 4
num_ues = 2
element_grid = 6x6
layers_per_ap = 3
inter_layer_distance = 0.5 lambda
transmit_power = 23 dBm
noise_power = -90 dBm
hardware_quality = 0.999
phase_bits = 3
";

fn main() -> sim_cellfree::Result<()> {
    let raw = parse_config_text(TEXT)?;
    let c = convert_units_onto(SystemConfig::desk(), &raw)?;
    println!("APs {} UEs {} N {} T {}", c.num_aps, c.num_ues, c.num_elements(), c.layers(0));
    println!("layer gap {:.3} mm ({:.2} wavelengths)", c.inter_layer_distance * 1e3, c.inter_layer_distance / c.wavelength());
    println!("transmit {:.1} dBm, noise {:.1} dBm", watts_to_dbm(c.transmit_power), watts_to_dbm(c.noise_power));
    println!("phases {:?}, quality {:?}", c.phase_bits, c.ue_quality);
    Ok(())
}
