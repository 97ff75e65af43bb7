//! Propagation: near-field transfer matrices inside the metasurface stack,
//! clustered mmWave UE channels and distance-dependent path loss.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::rng::{SimRng, StreamKey};
use crate::scenario::{distance, AngleLaw, NetworkLayout, Point3, SystemConfig};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Fixed tensor-product quadrature rule on the unit square `[-½, ½]²`.
#[derive(Clone, Debug)]
pub struct SquareRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl SquareRule {
    pub fn gauss_legendre(order: usize) -> Self {
        let (x, w) = gauss_legendre(order.max(1));
        Self {
            nodes: x.iter().map(|v| v / 2.0).collect(),
            weights: w.iter().map(|v| v / 2.0).collect(),
        }
    }
}

/// Power radiated by a rectangular element onto a point.
///
/// Integrates `κ (Δz/d)^{κ/2} / (4π d²)` over the element rectangle, where
/// `d` is the distance from the integration point to `dst` and `Δz` the
/// plane separation.
pub fn radiated_power(
    src_center: Point3,
    src_size: (f64, f64),
    dst: Point3,
    kappa: f64,
    rule: &SquareRule,
) -> Result<f64> {
    let dz = (src_center[2] - dst[2]).abs();
    if !(dz > 0.0) {
        return Err(Error::Geometry(format!(
            "zero plane separation between element at z={} and point at z={}",
            src_center[2], dst[2]
        )));
    }
    let (sx, sy) = src_size;
    let mut acc = 0.0;
    for (&u, &wu) in rule.nodes.iter().zip(&rule.weights) {
        let x = src_center[0] + u * sx - dst[0];
        for (&v, &wv) in rule.nodes.iter().zip(&rule.weights) {
            let y = src_center[1] + v * sy - dst[1];
            let d2 = x * x + y * y + dz * dz;
            let cos = dz / d2.sqrt();
            acc += wu * wv * kappa * cos.powf(kappa / 2.0) / (4.0 * PI * d2);
        }
    }
    Ok(acc * sx * sy)
}

fn transfer_entry(src: Point3, dst: Point3, size: (f64, f64), kappa: f64, lambda: f64, rule: &SquareRule) -> Result<C64> {
    let gamma = radiated_power(src, size, dst, kappa, rule)?;
    let phase = -2.0 * PI / lambda * distance(src, dst);
    Ok(C64::from_polar(gamma.sqrt(), phase))
}

/// `A^(l,1)`: entry `(m, n)` couples element `n` of layer 1 to antenna `m`.
pub fn first_hop_matrix(config: &SystemConfig, layout: &NetworkLayout, ap: usize) -> Result<CMat> {
    let rule = SquareRule::gauss_legendre(config.quadrature_order);
    let ants = &layout.antenna_coords[ap];
    let elems = &layout.element_coords[ap][0];
    build_transfer(ants, elems, config, &rule)
}

/// `A^(l,t)` for `t ≥ 2`: entry `(n₂, n₁)` couples element `n₁` of layer `t`
/// to element `n₂` of layer `t − 1`.
pub fn inter_layer_matrix(config: &SystemConfig, layout: &NetworkLayout, ap: usize, layer: usize) -> Result<CMat> {
    let layers = &layout.element_coords[ap];
    if layer < 2 || layer > layers.len() {
        return Err(Error::Dimension(format!(
            "inter-layer matrix for layer {layer}, AP {ap} has {} layers",
            layers.len()
        )));
    }
    let rule = SquareRule::gauss_legendre(config.quadrature_order);
    build_transfer(&layers[layer - 2], &layers[layer - 1], config, &rule)
}

fn build_transfer(dst: &[Point3], src: &[Point3], config: &SystemConfig, rule: &SquareRule) -> Result<CMat> {
    let lambda = config.wavelength();
    let mut data = Vec::with_capacity(dst.len() * src.len());
    for &d in dst {
        for &s in src {
            data.push(transfer_entry(s, d, config.element_size, config.radiation_gain, lambda, rule)?);
        }
    }
    CMat::from_vec(dst.len(), src.len(), data)
}

/// Array response `f(ψ, φ)` of an `N_x × N_y` planar grid, conjugated
/// (the model uses `fᴴ`). Index `n = n_y · N_x + n_x`.
pub fn steering_vector(elevation: f64, azimuth: f64, grid: (usize, usize), pitch: (f64, f64), lambda: f64) -> Vec<C64> {
    let k = 2.0 * PI / lambda;
    let ux = pitch.0 * elevation.sin() * azimuth.cos();
    let uy = pitch.1 * elevation.sin() * azimuth.sin();
    let mut v = Vec::with_capacity(grid.0 * grid.1);
    for ny in 0..grid.1 {
        for nx in 0..grid.0 {
            v.push(C64::from_polar(1.0, -k * (nx as f64 * ux + ny as f64 * uy)));
        }
    }
    v
}

/// `min{C₀, C₀ d^{-β}}`.
pub fn path_loss(d: f64, c0: f64, beta: f64) -> f64 {
    c0.min(c0 * d.powf(-beta))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathComponent {
    pub cluster: usize,
    pub gain: C64,
    pub elevation: f64,
    pub azimuth: f64,
}

/// UE-to-metasurface link of one (AP, UE) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct UeLink {
    /// `h_k^(l)`, length N.
    pub small_scale: Vec<C64>,
    /// `ϱ_k^(l)`.
    pub large_scale: f64,
    pub paths: Vec<PathComponent>,
    /// `(μ_ψ, μ_φ)` per cluster.
    pub cluster_means: Vec<(f64, f64)>,
}

pub fn complex_gaussian(rng: &mut SimRng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn spread_angle(rng: &mut SimRng, mean: f64, sigma: f64, law: AngleLaw) -> f64 {
    match law {
        AngleLaw::Uniform => mean + 3f64.sqrt() * sigma * (2.0 * rng.random::<f64>() - 1.0),
        AngleLaw::Gaussian => mean + sigma * rng.sample::<f64, _>(StandardNormal),
    }
}

/// Sum of path contributions `√(1/P) Σ α f(ψ, φ)`.
pub fn superpose_paths(paths: &[PathComponent], config: &SystemConfig) -> Vec<C64> {
    let n = config.num_elements();
    let lambda = config.wavelength();
    let mut h = vec![C64::new(0.0, 0.0); n];
    for p in paths {
        let f = steering_vector(p.elevation, p.azimuth, config.element_grid, config.element_size, lambda);
        for (hi, fi) in h.iter_mut().zip(f) {
            *hi += p.gain * fi;
        }
    }
    let scale = (1.0 / paths.len().max(1) as f64).sqrt();
    h.iter_mut().for_each(|x| *x *= scale);
    h
}

/// Draws one clustered channel `h`. The returned link has `large_scale = 1`.
pub fn ue_channel(config: &SystemConfig, rng: &mut SimRng) -> UeLink {
    let (el_lo, el_hi) = config.elevation_mean_range;
    let (az_lo, az_hi) = config.azimuth_mean_range;
    let mut cluster_means = Vec::with_capacity(config.cluster_count);
    let mut paths = Vec::with_capacity(config.cluster_count * config.paths_per_cluster);
    for c in 0..config.cluster_count {
        let mu_el = el_lo + (el_hi - el_lo) * rng.random::<f64>();
        let mu_az = az_lo + (az_hi - az_lo) * rng.random::<f64>();
        cluster_means.push((mu_el, mu_az));
        for _ in 0..config.paths_per_cluster {
            let elevation = spread_angle(rng, mu_el, config.angle_spreads.0, config.angle_law);
            let azimuth = spread_angle(rng, mu_az, config.angle_spreads.1, config.angle_law);
            let gain = complex_gaussian(rng);
            paths.push(PathComponent { cluster: c, gain, elevation, azimuth });
        }
    }
    UeLink {
        small_scale: superpose_paths(&paths, config),
        large_scale: 1.0,
        paths,
        cluster_means,
    }
}

/// Transfer matrices of one AP's metasurface stack.
#[derive(Clone, Debug)]
pub struct StackMatrices {
    /// `A^(l,1)`, M × N.
    pub first_hop: Arc<CMat>,
    /// `A^(l,t)` for `t = 2..=T_l`, each N × N.
    pub inter_layer: Vec<Arc<CMat>>,
}

impl StackMatrices {
    pub fn layers(&self) -> usize {
        self.inter_layer.len() + 1
    }

    /// `A^(l,t)`, 1-based `t`.
    pub fn layer_matrix(&self, t: usize) -> &CMat {
        if t == 1 {
            &self.first_hop
        } else {
            &self.inter_layer[t - 2]
        }
    }
}

/// Per-AP stack geometry is identical up to translation, so the transfer
/// matrices are computed once per distinct layer count and shared.
#[derive(Clone, Debug)]
pub struct WaveMatrices {
    first_hop: Arc<CMat>,
    inter_layer: Option<Arc<CMat>>,
}

impl WaveMatrices {
    pub fn from_config(config: &SystemConfig) -> Result<Self> {
        config.validate()?;
        let max_t = config
            .layers_per_ap
            .iter()
            .copied()
            .max()
            .unwrap_or(1);
        let mut probe = config.clone();
        probe.num_aps = 1;
        probe.num_ues = 1;
        probe.ap_positions = Some(vec![[0.0, 0.0]]);
        probe.ue_positions = Some(vec![[0.0, 0.0]]);
        probe.layers_per_ap = vec![max_t.min(2)];
        probe.ue_quality = vec![1.0];
        probe.ap_quality = vec![1.0];
        let layout = crate::scenario::build_layout(&probe)?;
        let first_hop = Arc::new(first_hop_matrix(&probe, &layout, 0)?);
        let inter_layer = if max_t >= 2 {
            Some(Arc::new(inter_layer_matrix(&probe, &layout, 0, 2)?))
        } else {
            None
        };
        Ok(Self { first_hop, inter_layer })
    }

    pub fn stack(&self, layers: usize) -> StackMatrices {
        let inter = match (&self.inter_layer, layers) {
            (_, 1) => Vec::new(),
            (Some(a), t) => vec![a.clone(); t - 1],
            (None, _) => panic!("WaveMatrices built without inter-layer matrix"),
        };
        StackMatrices {
            first_hop: self.first_hop.clone(),
            inter_layer: inter,
        }
    }
}

/// All propagation quantities of one network realization.
#[derive(Clone, Debug)]
pub struct PropagationSet {
    pub stacks: Vec<StackMatrices>,
    /// `links[l][k]`.
    pub links: Vec<Vec<UeLink>>,
}

impl PropagationSet {
    pub fn num_aps(&self) -> usize {
        self.stacks.len()
    }

    pub fn num_ues(&self) -> usize {
        self.links.first().map_or(0, Vec::len)
    }

    /// Draws every UE link; the stream of pair `(l, k)` is
    /// `key / "channel" / l / k`, independent of all other pairs.
    pub fn build(config: &SystemConfig, layout: &NetworkLayout, waves: &WaveMatrices, key: StreamKey) -> Result<Self> {
        let stacks = (0..config.num_aps).map(|l| waves.stack(config.layers(l))).collect();
        let links = (0..config.num_aps)
            .map(|l| {
                (0..config.num_ues)
                    .map(|k| {
                        let mut rng = key.label("channel").index(l as u64).index(k as u64).rng();
                        let mut link = ue_channel(config, &mut rng);
                        link.large_scale = path_loss(
                            layout.distances[k][l],
                            config.reference_path_loss,
                            config.path_loss_exponent,
                        );
                        link
                    })
                    .collect()
            })
            .collect();
        Ok(Self { stacks, links })
    }

    /// Writes the set as plain CSV files into `dir`: one file per transfer
    /// matrix and per AP channel table, complex entries as interleaved
    /// `re,im` columns, plus `large_scale.csv` (`ue,ap,gain`).
    pub fn dump_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (l, stack) in self.stacks.iter().enumerate() {
            for t in 1..=stack.layers() {
                write_matrix_csv(&dir.join(format!("A_ap{}_layer{}.csv", l + 1, t)), stack.layer_matrix(t))?;
            }
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("h_ap{}.csv", l + 1)))?);
            for link in &self.links[l] {
                write_interleaved_row(&mut f, &link.small_scale)?;
            }
        }
        let mut w = csv::Writer::from_path(dir.join("large_scale.csv"))?;
        w.write_record(["ue", "ap", "gain"])?;
        for (l, row) in self.links.iter().enumerate() {
            for (k, link) in row.iter().enumerate() {
                w.write_record([(k + 1).to_string(), (l + 1).to_string(), format!("{:e}", link.large_scale)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn write_interleaved_row<W: Write>(w: &mut W, row: &[C64]) -> Result<()> {
    let line: Vec<String> = row.iter().flat_map(|z| [format!("{:e}", z.re), format!("{:e}", z.im)]).collect();
    writeln!(w, "{}", line.join(","))?;
    Ok(())
}

pub fn write_matrix_csv(path: &Path, m: &CMat) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in 0..m.rows() {
        write_interleaved_row(&mut f, m.row(r))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<CMat> {
    let text = std::fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("{}: malformed `{s}`", path.display()))))
            .collect::<Result<_>>()?;
        if vals.len() % 2 != 0 || cols.is_some_and(|c| c != vals.len() / 2) {
            return Err(Error::Dimension(format!("{}: ragged row {}", path.display(), rows + 1)));
        }
        cols = Some(vals.len() / 2);
        data.extend(vals.chunks(2).map(|p| C64::new(p[0], p[1])));
        rows += 1;
    }
    CMat::from_vec(rows, cols.unwrap_or(0), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_layout, SPEED_OF_LIGHT};

    /// Independent reference: plain midpoint rule on a fine grid.
    fn midpoint_reference(src: Point3, size: (f64, f64), dst: Point3, kappa: f64, n: usize) -> f64 {
        let dz = (src[2] - dst[2]).abs();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = src[0] - size.0 / 2.0 + (i as f64 + 0.5) * size.0 / n as f64;
                let y = src[1] - size.1 / 2.0 + (j as f64 + 0.5) * size.1 / n as f64;
                let d = ((x - dst[0]).powi(2) + (y - dst[1]).powi(2) + dz * dz).sqrt();
                acc += kappa * (dz / d).powf(kappa / 2.0) / (4.0 * PI * d * d);
            }
        }
        acc * size.0 * size.1 / (n * n) as f64
    }

    fn lambda() -> f64 {
        SPEED_OF_LIGHT / 30e9
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..10 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn point_element_limit() {
        let rule = SquareRule::gauss_legendre(8);
        let d = 0.5;
        let s = 1e-5;
        let g = radiated_power([0.0, 0.0, d], (s, s), [0.0, 0.0, 0.0], 10.0, &rule).unwrap();
        let limit = 10.0 * s * s / (4.0 * PI * d * d);
        assert!((g / limit - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mirror_symmetry() {
        let rule = SquareRule::gauss_legendre(8);
        let l = lambda();
        let a = radiated_power([0.0, 0.0, l], (l / 4.0, l / 4.0), [0.7 * l, 0.0, 0.0], 10.0, &rule).unwrap();
        let b = radiated_power([0.0, 0.0, l], (l / 4.0, l / 4.0), [-0.7 * l, 0.0, 0.0], 10.0, &rule).unwrap();
        assert!((a - b).abs() <= 1e-15 * a);
    }

    #[test]
    fn quadrature_agrees_with_fine_midpoint_reference() {
        let l = lambda();
        let size = (l / 4.0, l / 4.0);
        let rule = SquareRule::gauss_legendre(8);
        // boresight case
        let src = [0.0, 0.0, l];
        let reference = midpoint_reference(src, size, [0.0; 3], 10.0, 256);
        let g = radiated_power(src, size, [0.0; 3], 10.0, &rule).unwrap();
        assert!((g - reference).abs() / reference <= 1e-4, "{g} vs {reference}");
        assert!(g > 0.0 && g < 1.0);
        // laterally offset elements of the reference geometry
        for (ox, oy) in [(1, 0), (3, 2), (7, 7), (15, 4)] {
            let src = [ox as f64 * size.0, oy as f64 * size.1, l];
            let r = midpoint_reference(src, size, [0.0; 3], 10.0, 256);
            let g = radiated_power(src, size, [0.0; 3], 10.0, &rule).unwrap();
            assert!((g - r).abs() / r <= 1e-4, "offset ({ox},{oy}): {g} vs {r}");
        }
    }

    #[test]
    fn grazing_geometry_is_rejected() {
        let rule = SquareRule::gauss_legendre(8);
        let e = radiated_power([0.0, 0.0, 0.0], (1e-3, 1e-3), [1.0, 0.0, 0.0], 10.0, &rule);
        assert!(matches!(e, Err(Error::Geometry(_))));
    }

    #[test]
    fn power_decreases_with_boresight_distance() {
        let rule = SquareRule::gauss_legendre(8);
        let l = lambda();
        let mut prev = f64::INFINITY;
        for i in 1..20 {
            let g = radiated_power([0.0, 0.0, 0.2 * i as f64 * l], (l / 4.0, l / 4.0), [0.0; 3], 10.0, &rule).unwrap();
            assert!(g < prev);
            prev = g;
        }
    }

    fn tiny_config(m: (usize, usize), n: (usize, usize), t: usize) -> SystemConfig {
        let mut c = SystemConfig::desk();
        c.antenna_grid = m;
        c.element_grid = n;
        c.set_layers(t);
        c.num_aps = 1;
        c.num_ues = 1;
        c
    }

    #[test]
    fn single_element_single_antenna_entry() {
        let c = tiny_config((1, 1), (1, 1), 1);
        let layout = build_layout(&c).unwrap();
        let a = first_hop_matrix(&c, &layout, 0).unwrap();
        let l = c.wavelength();
        let gamma = midpoint_reference([0.0, 0.0, l], c.element_size, [0.0; 3], 10.0, 256);
        assert!((a[(0, 0)].norm() - gamma.sqrt()).abs() / gamma.sqrt() < 1e-4);
        // distance is exactly λ, so phase is -2π ≡ 0
        let phase = a[(0, 0)].arg();
        assert!(phase.abs() < 1e-9, "{phase}");
    }

    #[test]
    fn first_hop_phase_and_equidistant_antennas() {
        let c = tiny_config((2, 1), (3, 1), 1);
        let layout = build_layout(&c).unwrap();
        let a = first_hop_matrix(&c, &layout, 0).unwrap();
        let lam = c.wavelength();
        for m in 0..2 {
            for n in 0..3 {
                let d = distance(layout.element_coords[0][0][n], layout.antenna_coords[0][m]);
                let expected = C64::from_polar(1.0, -2.0 * PI / lam * d);
                let got = a[(m, n)] / a[(m, n)].norm();
                assert!((got - expected).norm() < 1e-9);
            }
        }
        // middle element is equidistant from both antennas
        assert!((a[(0, 1)] - a[(1, 1)]).norm() < 1e-15);
    }

    #[test]
    fn inter_layer_matrices_repeat_and_are_symmetric() {
        let c = tiny_config((1, 1), (3, 2), 3);
        let layout = build_layout(&c).unwrap();
        let a2 = inter_layer_matrix(&c, &layout, 0, 2).unwrap();
        let a3 = inter_layer_matrix(&c, &layout, 0, 3).unwrap();
        for r in 0..6 {
            for col in 0..6 {
                assert!((a2[(r, col)] - a3[(r, col)]).norm() < 1e-15);
                assert!((a2[(r, col)] - a2[(col, r)]).norm() < 1e-15);
            }
        }
        assert!(inter_layer_matrix(&c, &layout, 0, 1).is_err());
        assert!(inter_layer_matrix(&c, &layout, 0, 4).is_err());
    }

    #[test]
    fn row_power_below_one_for_reference_geometry() {
        let c = SystemConfig::default();
        let waves = WaveMatrices::from_config(&c).unwrap();
        let a = waves.stack(2).inter_layer[0].clone();
        for r in 0..a.rows() {
            let p: f64 = a.row(r).iter().map(|z| z.norm_sqr()).sum();
            assert!(p < 1.0 && p > 0.0, "row {r}: {p}");
        }
    }

    #[test]
    fn matrices_invariant_under_translation() {
        let mut c = tiny_config((2, 2), (3, 3), 2);
        c.ap_positions = Some(vec![[0.0, 0.0]]);
        let base = build_layout(&c).unwrap();
        c.ap_positions = Some(vec![[37.25, -81.5]]);
        let moved = build_layout(&c).unwrap();
        let (a, b) = (first_hop_matrix(&c, &base, 0).unwrap(), first_hop_matrix(&c, &moved, 0).unwrap());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x.norm() - y.norm()).abs() < 1e-12);
            assert!((x - y).norm() < 1e-6 * x.norm().max(1e-300) + 1e-9);
        }
    }

    #[test]
    fn steering_vector_cases() {
        let l = lambda();
        let v = steering_vector(0.0, 1.3, (4, 3), (l / 4.0, l / 4.0), l);
        assert!(v.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let v = steering_vector(0.7, 2.1, (4, 3), (l / 4.0, l / 4.0), l);
        let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        assert!((n2 - 12.0).abs() < 1e-12);
        let v = steering_vector(PI / 2.0, 0.0, (4, 1), (l / 4.0, l / 4.0), l);
        for w in v.windows(2) {
            let inc = (w[1] / w[0]).arg();
            assert!((inc + PI / 2.0).abs() < 1e-12, "{inc}");
        }
    }

    #[test]
    fn single_unit_path_gives_all_ones() {
        let c = SystemConfig::desk();
        let paths = [PathComponent { cluster: 0, gain: C64::new(1.0, 0.0), elevation: 0.0, azimuth: 0.4 }];
        let h = superpose_paths(&paths, &c);
        assert!(h.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn channel_energy_and_symmetry() {
        let c = SystemConfig::desk();
        let n = c.num_elements() as f64;
        let mut rng = StreamKey::root(11).label("h-energy").rng();
        let draws = 10_000;
        let mut energy = 0.0;
        for _ in 0..draws {
            let h = ue_channel(&c, &mut rng).small_scale;
            energy += h.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let mean = energy / draws as f64;
        assert!((mean / n - 1.0).abs() <= 0.03, "E||h||^2 = {mean}, N = {n}");
    }

    #[test]
    fn channel_real_part_is_symmetric() {
        let mut c = SystemConfig::desk();
        c.element_grid = (2, 2);
        let mut rng = StreamKey::root(12).label("h-skew").rng();
        let draws = 100_000;
        let xs: Vec<f64> = (0..draws).map(|_| ue_channel(&c, &mut rng).small_scale[1].re).collect();
        let mean = xs.iter().sum::<f64>() / draws as f64;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws as f64;
        let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / draws as f64;
        let skew = m3 / m2.powf(1.5);
        assert!(skew.abs() <= 0.05, "skewness {skew}");
    }

    #[test]
    fn path_loss_cases() {
        assert_eq!(path_loss(1.0, 1e-3, 3.5), 1e-3);
        assert_eq!(path_loss(0.5, 1e-3, 3.5), 1e-3);
        assert!((path_loss(10.0, 1e-3, 3.5) - 3.162_277_660_168_379e-7).abs() < 1e-18);
    }

    #[test]
    fn propagation_is_reproducible() {
        let c = SystemConfig::desk();
        let layout = build_layout(&c).unwrap();
        let waves = WaveMatrices::from_config(&c).unwrap();
        let a = PropagationSet::build(&c, &layout, &waves, StreamKey::root(5)).unwrap();
        let b = PropagationSet::build(&c, &layout, &waves, StreamKey::root(5)).unwrap();
        assert_eq!(a.links, b.links);
        for link in a.links.iter().flatten() {
            assert!(link.large_scale <= c.reference_path_loss);
        }
    }

    #[test]
    fn shared_matrices_match_per_ap_construction() {
        let c = SystemConfig::desk();
        let layout = build_layout(&c).unwrap();
        let waves = WaveMatrices::from_config(&c).unwrap();
        let stack = waves.stack(2);
        let direct = first_hop_matrix(&c, &layout, 3).unwrap();
        let inter = inter_layer_matrix(&c, &layout, 3, 2).unwrap();
        for (x, y) in stack.first_hop.as_slice().iter().zip(direct.as_slice()) {
            assert!((x - y).norm() < 1e-6 * x.norm());
        }
        for (x, y) in stack.inter_layer[0].as_slice().iter().zip(inter.as_slice()) {
            assert!((x - y).norm() < 1e-6 * x.norm());
        }
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = CMat::from_fn(3, 2, |r, c| C64::new(r as f64 - 0.125, c as f64 * 1e-7));
        let p = dir.path().join("m.csv");
        write_matrix_csv(&p, &m).unwrap();
        assert_eq!(read_matrix_csv(&p).unwrap(), m);
    }
}
