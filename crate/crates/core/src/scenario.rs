//! System configuration, unit handling and network geometry.
//!
//! [`SystemConfig::default`] is the full-size reference deployment (30 GHz,
//! 16 APs with 4×4 antennas and four 16×16 metasurface layers, 8 UEs).
//! [`SystemConfig::desk`] is the reduced preset used by tests and the quick
//! experiment runs.
//!
//! Geometry conventions: each AP has its own local frame whose origin is the
//! AP's ground position. Antennas sit in the plane `z = 0`; metasurface layer
//! `t` (1-based) sits at `z = t · inter_layer_distance`. All grids are centered
//! on the AP axis and linearized x-fastest (`n = n_y · N_x + n_x`). UEs live
//! in the `z = 0` plane.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{SimRng, StreamKey};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Point3 = [f64; 3];

/// Phase-shifter resolution of the metasurface elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseResolution {
    Continuous,
    Bits(u32),
}

/// Law of per-path angles around their cluster mean. Both laws have the
/// configured angular spread as standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AngleLaw {
    /// Uniform on `[μ − √3σ, μ + √3σ]`.
    Uniform,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    /// Hz.
    pub carrier_frequency: f64,
    pub num_aps: usize,
    pub num_ues: usize,
    /// `(M_x, M_y)`.
    pub antenna_grid: (usize, usize),
    /// `(N_x, N_y)`.
    pub element_grid: (usize, usize),
    /// Either one entry per AP or a single entry shared by all APs.
    pub layers_per_ap: Vec<usize>,
    /// Meters; also the gap between the antenna plane and layer 1.
    pub inter_layer_distance: f64,
    /// Linear directional gain κ of an element.
    pub radiation_gain: f64,
    /// `(d_x, d_y)`, meters.
    pub antenna_spacing: (f64, f64),
    /// `(δ_x, δ_y)`, meters. Element pitch equals element size.
    pub element_size: (f64, f64),
    /// Watts, per AP.
    pub noise_power: f64,
    /// ε_u, either one per UE or one shared value.
    pub ue_quality: Vec<f64>,
    /// ε_v, either one per AP or one shared value.
    pub ap_quality: Vec<f64>,
    /// Watts, common to all UEs.
    pub transmit_power: f64,
    pub path_loss_exponent: f64,
    /// Linear path loss at 1 m.
    pub reference_path_loss: f64,
    pub cluster_count: usize,
    pub paths_per_cluster: usize,
    /// `(σ_ψ, σ_φ)`, radians.
    pub angle_spreads: (f64, f64),
    /// Range of cluster mean elevations, radians.
    pub elevation_mean_range: (f64, f64),
    /// Range of cluster mean azimuths, radians.
    pub azimuth_mean_range: (f64, f64),
    pub angle_law: AngleLaw,
    /// υ applied to every element of every layer.
    pub radiation_coefficient: f64,
    /// Half side of the square deployment area, meters.
    pub area_half_width: f64,
    pub rng_seed: u64,
    pub phase_bits: PhaseResolution,
    /// Alternating-optimization iterations τ.
    pub iterations: usize,
    /// Gauss–Legendre points per axis for the radiated-power integral.
    pub quadrature_order: usize,
    /// Explicit AP ground positions; overrides the grid when set.
    pub ap_positions: Option<Vec<[f64; 2]>>,
    /// Explicit UE positions; overrides random placement when set.
    pub ue_positions: Option<Vec<[f64; 2]>>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let fc = 30e9;
        let lambda = SPEED_OF_LIGHT / fc;
        let spread = 7.5f64.to_radians();
        Self {
            carrier_frequency: fc,
            num_aps: 16,
            num_ues: 8,
            antenna_grid: (4, 4),
            element_grid: (16, 16),
            layers_per_ap: vec![4],
            inter_layer_distance: lambda,
            radiation_gain: 10.0,
            antenna_spacing: (lambda / 2.0, lambda / 2.0),
            element_size: (lambda / 4.0, lambda / 4.0),
            noise_power: dbm_to_watts(-80.0),
            ue_quality: vec![1.0],
            ap_quality: vec![1.0],
            transmit_power: dbm_to_watts(20.0),
            path_loss_exponent: 3.5,
            reference_path_loss: 1e-3,
            cluster_count: 4,
            paths_per_cluster: 8,
            angle_spreads: (spread, spread),
            elevation_mean_range: (0.0, PI),
            azimuth_mean_range: (0.0, 2.0 * PI),
            angle_law: AngleLaw::Uniform,
            radiation_coefficient: 1.0,
            area_half_width: 100.0,
            rng_seed: 0,
            phase_bits: PhaseResolution::Continuous,
            iterations: 10,
            quadrature_order: 8,
            ap_positions: None,
            ue_positions: None,
        }
    }
}

impl SystemConfig {
    /// Reduced deployment: 4 APs, 3 UEs, 2×2 antennas, two 8×8 layers.
    pub fn desk() -> Self {
        Self {
            num_aps: 4,
            num_ues: 3,
            antenna_grid: (2, 2),
            element_grid: (8, 8),
            layers_per_ap: vec![2],
            ..Self::default()
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn num_antennas(&self) -> usize {
        self.antenna_grid.0 * self.antenna_grid.1
    }

    pub fn num_elements(&self) -> usize {
        self.element_grid.0 * self.element_grid.1
    }

    pub fn layers(&self, ap: usize) -> usize {
        broadcast(&self.layers_per_ap, ap)
    }

    pub fn eps_u(&self, ue: usize) -> f64 {
        broadcast(&self.ue_quality, ue)
    }

    pub fn eps_v(&self, ap: usize) -> f64 {
        broadcast(&self.ap_quality, ap)
    }

    pub fn set_all_quality(&mut self, eps: f64) {
        self.ue_quality = vec![eps];
        self.ap_quality = vec![eps];
    }

    pub fn set_layers(&mut self, t: usize) {
        self.layers_per_ap = vec![t];
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.carrier_frequency > 0.0) || !self.carrier_frequency.is_finite() {
            return cfg(format!("carrier_frequency must be positive, got {}", self.carrier_frequency));
        }
        if self.num_aps == 0 || self.num_ues == 0 {
            return cfg(format!("need at least one AP and one UE (L={}, K={})", self.num_aps, self.num_ues));
        }
        if self.num_antennas() == 0 || self.num_elements() == 0 {
            return cfg("antenna and element grids must be non-empty".into());
        }
        check_list_len("layers_per_ap", self.layers_per_ap.len(), self.num_aps)?;
        check_list_len("ue_quality", self.ue_quality.len(), self.num_ues)?;
        check_list_len("ap_quality", self.ap_quality.len(), self.num_aps)?;
        if self.layers_per_ap.iter().any(|&t| t == 0) {
            return cfg("every AP needs at least one metasurface layer".into());
        }
        for (name, list) in [("ue_quality", &self.ue_quality), ("ap_quality", &self.ap_quality)] {
            if let Some(e) = list.iter().find(|e| !(0.0..=1.0).contains(*e)) {
                return cfg(format!("{name} must lie in [0, 1], got {e}"));
            }
        }
        if !(0.0..=1.0).contains(&self.radiation_coefficient) {
            return cfg(format!("radiation_coefficient must lie in [0, 1], got {}", self.radiation_coefficient));
        }
        if !(self.radiation_gain >= 1.0) {
            return cfg(format!("radiation_gain must be >= 1 (linear), got {}", self.radiation_gain));
        }
        for (name, v) in [
            ("noise_power", self.noise_power),
            ("transmit_power", self.transmit_power),
            ("reference_path_loss", self.reference_path_loss),
            ("area_half_width", self.area_half_width),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return cfg(format!("{name} must be positive, got {v}"));
            }
        }
        if self.cluster_count == 0 || self.paths_per_cluster == 0 {
            return cfg("need at least one cluster and one path per cluster".into());
        }
        if let PhaseResolution::Bits(0) = self.phase_bits {
            return cfg("phase_bits must be >= 1 or continuous".into());
        }
        if self.quadrature_order == 0 {
            return cfg("quadrature_order must be >= 1".into());
        }
        if let Some(p) = &self.ap_positions {
            if p.len() != self.num_aps {
                return cfg(format!("{} AP positions for L = {}", p.len(), self.num_aps));
            }
        }
        if let Some(p) = &self.ue_positions {
            if p.len() != self.num_ues {
                return cfg(format!("{} UE positions for K = {}", p.len(), self.num_ues));
            }
        }
        Ok(())
    }
}

fn broadcast<T: Copy>(list: &[T], i: usize) -> T {
    if list.len() == 1 {
        list[0]
    } else {
        list[i]
    }
}

fn check_list_len(name: &str, len: usize, expected: usize) -> Result<()> {
    if len == 1 || len == expected {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} has {len} entries, expected 1 or {expected}")))
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

// ---------------------------------------------------------------------------
// Textual configuration
// ---------------------------------------------------------------------------

/// Raw `key -> value` pairs as they appear in a config file or on the
/// command line.
pub type RawConfig = BTreeMap<String, String>;

/// Parses the flat `key = value` format. `#` starts a comment; blank lines
/// are ignored; later keys override earlier ones.
pub fn parse_config_text(text: &str) -> Result<RawConfig> {
    let mut raw = RawConfig::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        raw.insert(key.to_string(), v.trim().trim_matches('"').to_string());
    }
    Ok(raw)
}

/// Reads a config file. Position-file paths inside it are resolved relative
/// to the file's directory.
pub fn load_config(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut raw = parse_config_text(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for key in ["ap_positions_file", "ue_positions_file"] {
        if let Some(v) = raw.get_mut(key) {
            let p = Path::new(v.as_str());
            if p.is_relative() {
                *v = base.join(p).to_string_lossy().into_owned();
            }
        }
    }
    Ok(raw)
}

/// Reads an `id,x,y` CSV (header required). Rows are ordered by `id`.
pub fn read_positions_csv(path: &Path) -> Result<Vec<[f64; 2]>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column `{name}`", path.display())))
    };
    let (ci, cx, cy) = (col("id")?, col("x")?, col("y")?);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            rec[c].parse::<f64>().map_err(|_| {
                Error::Config(format!("{}: malformed number `{}`", path.display(), &rec[c]))
            })
        };
        let id = rec[ci]
            .parse::<i64>()
            .map_err(|_| Error::Config(format!("{}: malformed id `{}`", path.display(), &rec[ci])))?;
        rows.push((id, [num(cx)?, num(cy)?]));
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn write_positions_csv<W: std::io::Write>(out: W, positions: &[[f64; 2]]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "x", "y"])?;
    for (i, p) in positions.iter().enumerate() {
        w.write_record([(i + 1).to_string(), p[0].to_string(), p[1].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
enum Dim {
    Frequency,
    Power,
    Gain,
    Length,
    Angle,
}

fn parse_number(key: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: malformed numeral `{s}`")))
}

/// Splits `"-80 dBm"` into `("-80", "dBm")`. The unit is optional; no unit
/// starts with `e`, so exponents stay with the number.
fn split_unit(s: &str) -> (&str, &str) {
    let s = s.trim();
    let idx = s
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E')))
        .unwrap_or(s.len());
    (s[..idx].trim(), s[idx..].trim())
}

fn parse_quantity(key: &str, s: &str, dim: Dim, lambda: f64) -> Result<f64> {
    let (num, unit) = split_unit(s);
    let x = parse_number(key, num)?;
    let bad = || Error::Config(format!("{key}: unit `{unit}` not valid here"));
    let v = match dim {
        Dim::Frequency => match unit {
            "" | "Hz" => x,
            "kHz" => x * 1e3,
            "MHz" => x * 1e6,
            "GHz" => x * 1e9,
            _ => return Err(bad()),
        },
        Dim::Power => match unit {
            "" | "W" => x,
            "mW" => x * 1e-3,
            "dBm" => dbm_to_watts(x),
            "dBW" => db_to_linear(x),
            _ => return Err(bad()),
        },
        Dim::Gain => match unit {
            "" => x,
            "dB" => db_to_linear(x),
            _ => return Err(bad()),
        },
        Dim::Length => match unit {
            "" | "m" => x,
            "cm" => x * 1e-2,
            "mm" => x * 1e-3,
            "lambda" | "λ" => x * lambda,
            _ => return Err(bad()),
        },
        Dim::Angle => match unit {
            "" | "rad" => x,
            "deg" | "°" => x.to_radians(),
            _ => return Err(bad()),
        },
    };
    if !v.is_finite() {
        return Err(Error::Config(format!("{key}: value `{s}` is not finite")));
    }
    Ok(v)
}

fn parse_list<T>(key: &str, s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(f)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn parse_count(key: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: malformed count `{s}`")))
}

fn parse_pair(key: &str, s: &str, dim: Dim, lambda: f64) -> Result<(f64, f64)> {
    let v = parse_list(key, s, |x| parse_quantity(key, x, dim, lambda))?;
    match v.as_slice() {
        [a] => Ok((*a, *a)),
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("{key}: expected one or two values"))),
    }
}

fn parse_grid(key: &str, s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(['x', 'X', '×']).collect();
    match parts.as_slice() {
        [a, b] => Ok((parse_count(key, a)?, parse_count(key, b)?)),
        [a] => {
            let n = parse_count(key, a)?;
            let side = (n as f64).sqrt().round() as usize;
            if side * side != n {
                return Err(Error::Config(format!("{key}: {n} is not a square; write it as `AxB`")));
            }
            Ok((side, side))
        }
        _ => Err(Error::Config(format!("{key}: expected `AxB`, got `{s}`"))),
    }
}

/// Builds a [`SystemConfig`] from textual values, starting from the
/// reference defaults.
///
/// Values may carry units: `30 GHz`, `-80 dBm`, `10 dB`, `0.25 lambda`,
/// `7.5 deg`. Lengths written in `lambda` use the carrier frequency from the
/// same map (or the default one). Unknown keys are rejected.
pub fn convert_units(raw: &RawConfig) -> Result<SystemConfig> {
    convert_units_onto(SystemConfig::default(), raw)
}

/// Like [`convert_units`], but applies the values on top of `base`.
pub fn convert_units_onto(base: SystemConfig, raw: &RawConfig) -> Result<SystemConfig> {
    let mut c = base;
    if let Some(v) = raw.get("carrier_frequency") {
        let old_lambda = c.wavelength();
        c.carrier_frequency = parse_quantity("carrier_frequency", v, Dim::Frequency, 0.0)?;
        if !(c.carrier_frequency > 0.0) {
            return Err(Error::Config("carrier_frequency must be positive".into()));
        }
        // Keep wavelength-relative defaults wavelength-relative.
        let r = c.wavelength() / old_lambda;
        c.inter_layer_distance *= r;
        c.antenna_spacing = (c.antenna_spacing.0 * r, c.antenna_spacing.1 * r);
        c.element_size = (c.element_size.0 * r, c.element_size.1 * r);
    }
    let lambda = c.wavelength();
    for (key, v) in raw {
        let k = key.as_str();
        match k {
            "carrier_frequency" => {}
            "num_aps" => c.num_aps = parse_count(k, v)?,
            "num_ues" => c.num_ues = parse_count(k, v)?,
            "antenna_grid" => c.antenna_grid = parse_grid(k, v)?,
            "element_grid" => c.element_grid = parse_grid(k, v)?,
            "layers_per_ap" => c.layers_per_ap = parse_list(k, v, |x| parse_count(k, x))?,
            "inter_layer_distance" => c.inter_layer_distance = parse_quantity(k, v, Dim::Length, lambda)?,
            "radiation_gain" => c.radiation_gain = parse_quantity(k, v, Dim::Gain, lambda)?,
            "antenna_spacing" => c.antenna_spacing = parse_pair(k, v, Dim::Length, lambda)?,
            "element_size" => c.element_size = parse_pair(k, v, Dim::Length, lambda)?,
            "noise_power" => c.noise_power = parse_quantity(k, v, Dim::Power, lambda)?,
            "hardware_quality" => {
                let e = parse_number(k, v)?;
                c.set_all_quality(e);
            }
            "ue_quality" => c.ue_quality = parse_list(k, v, |x| parse_number(k, x))?,
            "ap_quality" => c.ap_quality = parse_list(k, v, |x| parse_number(k, x))?,
            "transmit_power" => c.transmit_power = parse_quantity(k, v, Dim::Power, lambda)?,
            "path_loss_exponent" => c.path_loss_exponent = parse_number(k, v)?,
            "reference_path_loss" => c.reference_path_loss = parse_quantity(k, v, Dim::Gain, lambda)?,
            "cluster_count" => c.cluster_count = parse_count(k, v)?,
            "paths_per_cluster" => c.paths_per_cluster = parse_count(k, v)?,
            "angle_spreads" => c.angle_spreads = parse_pair(k, v, Dim::Angle, lambda)?,
            "elevation_mean_range" => c.elevation_mean_range = parse_pair(k, v, Dim::Angle, lambda)?,
            "azimuth_mean_range" => c.azimuth_mean_range = parse_pair(k, v, Dim::Angle, lambda)?,
            "angle_law" => {
                c.angle_law = match v.trim() {
                    "uniform" => AngleLaw::Uniform,
                    "gaussian" => AngleLaw::Gaussian,
                    other => return Err(Error::Config(format!("angle_law: unknown law `{other}`"))),
                }
            }
            "radiation_coefficient" => c.radiation_coefficient = parse_number(k, v)?,
            "area_half_width" => c.area_half_width = parse_quantity(k, v, Dim::Length, lambda)?,
            "rng_seed" => {
                c.rng_seed = v
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("rng_seed: malformed integer `{v}`")))?
            }
            "phase_bits" => {
                c.phase_bits = match v.trim() {
                    "continuous" | "inf" => PhaseResolution::Continuous,
                    s => PhaseResolution::Bits(parse_count(k, s)? as u32),
                }
            }
            "iterations" => c.iterations = parse_count(k, v)?,
            "quadrature_order" => c.quadrature_order = parse_count(k, v)?,
            "ap_positions_file" => c.ap_positions = Some(read_positions_csv(Path::new(v))?),
            "ue_positions_file" => c.ue_positions = Some(read_positions_csv(Path::new(v))?),
            _ => return Err(Error::Config(format!("unknown key `{k}`"))),
        }
    }
    c.validate()?;
    Ok(c)
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkLayout {
    /// Ground positions of the APs (area frame).
    pub ap_positions: Vec<[f64; 2]>,
    pub ue_positions: Vec<[f64; 2]>,
    /// Per AP, antenna coordinates in the area frame.
    pub antenna_coords: Vec<Vec<Point3>>,
    /// Per AP, per layer (index 0 = layer 1), element coordinates.
    pub element_coords: Vec<Vec<Vec<Point3>>>,
    /// `distances[k][l]` = D_k^(l), UE to the center of AP-l's outer layer.
    pub distances: Vec<Vec<f64>>,
    /// `nearest_ap_sets[k]` = 𝓛_k, ascending AP indices.
    pub nearest_ap_sets: Vec<Vec<usize>>,
}

impl NetworkLayout {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_ues(&self) -> usize {
        self.ue_positions.len()
    }

    /// Anchor point of AP-l: center of its outermost layer.
    pub fn ap_anchor(&self, ap: usize) -> Point3 {
        let outer = self.element_coords[ap].last().expect("at least one layer");
        let [x, y] = self.ap_positions[ap];
        [x, y, outer[0][2]]
    }
}

/// Cell centers of a uniform partition of the square into `L` cells:
/// `√L × √L` when `L` is a perfect square, else a `⌈√L⌉`-column grid filled
/// row-major.
pub fn ap_grid(num_aps: usize, half_width: f64) -> Vec<[f64; 2]> {
    let cols = (num_aps as f64).sqrt().ceil() as usize;
    let cols = if cols * cols < num_aps { cols + 1 } else { cols };
    let rows = num_aps.div_ceil(cols);
    let side = 2.0 * half_width;
    let (wx, wy) = (side / cols as f64, side / rows as f64);
    (0..num_aps)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            [
                -half_width + (c as f64 + 0.5) * wx,
                -half_width + (r as f64 + 0.5) * wy,
            ]
        })
        .collect()
}

/// Centered planar grid at height `z`, x-fastest.
pub fn planar_grid(origin: [f64; 2], grid: (usize, usize), pitch: (f64, f64), z: f64) -> Vec<Point3> {
    let (nx, ny) = grid;
    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let mut pts = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            pts.push([
                origin[0] + (ix as f64 - cx) * pitch.0,
                origin[1] + (iy as f64 - cy) * pitch.1,
                z,
            ]);
        }
    }
    pts
}

pub fn distance(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// 𝓛_k for every UE; exact ties keep every minimizer.
pub fn nearest_ap_sets(distances: &[Vec<f64>]) -> Vec<Vec<usize>> {
    distances
        .iter()
        .map(|row| {
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            row.iter()
                .enumerate()
                .filter(|(_, &d)| d <= min)
                .map(|(l, _)| l)
                .collect()
        })
        .collect()
}

/// Builds the layout with the config's own seed.
pub fn build_layout(config: &SystemConfig) -> Result<NetworkLayout> {
    let mut rng = StreamKey::root(config.rng_seed).label("layout").rng();
    build_layout_with(config, &mut rng)
}

/// Builds the layout drawing UE positions from `rng`.
pub fn build_layout_with(config: &SystemConfig, rng: &mut SimRng) -> Result<NetworkLayout> {
    config.validate()?;
    let geom = |m: String| Err(Error::Geometry(m));
    let (dx, dy) = config.antenna_spacing;
    let (ex, ey) = config.element_size;
    if !(dx > 0.0 && dy > 0.0) {
        return geom(format!("antenna spacing must be positive, got ({dx}, {dy})"));
    }
    if !(ex > 0.0 && ey > 0.0) {
        return geom(format!("element size must be positive, got ({ex}, {ey})"));
    }
    if !(config.inter_layer_distance > 0.0) {
        return geom(format!("inter-layer distance must be positive, got {}", config.inter_layer_distance));
    }
    let h = config.area_half_width;
    let inside = |p: &[f64; 2]| p[0].abs() <= h && p[1].abs() <= h;

    let ap_positions = match &config.ap_positions {
        Some(p) => p.clone(),
        None => ap_grid(config.num_aps, h),
    };
    let ue_positions = match &config.ue_positions {
        Some(p) => p.clone(),
        None => (0..config.num_ues)
            .map(|_| [rng.random_range(-h..=h), rng.random_range(-h..=h)])
            .collect(),
    };
    if let Some(p) = ap_positions.iter().chain(&ue_positions).find(|p| !inside(p)) {
        return geom(format!("position ({}, {}) outside the ±{h} m area", p[0], p[1]));
    }

    let gap = config.inter_layer_distance;
    let mut antenna_coords = Vec::with_capacity(config.num_aps);
    let mut element_coords = Vec::with_capacity(config.num_aps);
    for (l, ap) in ap_positions.iter().enumerate() {
        antenna_coords.push(planar_grid(*ap, config.antenna_grid, config.antenna_spacing, 0.0));
        element_coords.push(
            (1..=config.layers(l))
                .map(|t| planar_grid(*ap, config.element_grid, config.element_size, t as f64 * gap))
                .collect::<Vec<_>>(),
        );
    }
    let mut layout = NetworkLayout {
        ap_positions,
        ue_positions,
        antenna_coords,
        element_coords,
        distances: Vec::new(),
        nearest_ap_sets: Vec::new(),
    };
    let anchors: Vec<Point3> = (0..config.num_aps).map(|l| layout.ap_anchor(l)).collect();
    layout.distances = layout
        .ue_positions
        .iter()
        .map(|u| anchors.iter().map(|a| distance([u[0], u[1], 0.0], *a)).collect())
        .collect();
    layout.nearest_ap_sets = nearest_ap_sets(&layout.distances);
    Ok(layout)
}
