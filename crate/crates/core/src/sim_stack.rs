//! Per-AP metasurface state, composition of the wave-domain beamformer and
//! phase quantization.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;

use crate::channel::StackMatrices;
use crate::error::{Error, Result};
use crate::linalg::{CMat, Scalar, C64};
use crate::rng::StreamKey;
use crate::scenario::SystemConfig;

/// Phases and radiation coefficients of one metasurface layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    phases: Vec<f64>,
    radiation: Vec<f64>,
}

/// Maps any angle into `[0, 2π)`.
pub fn canonical_phase(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

impl LayerState {
    pub fn new(phases: Vec<f64>, radiation: Vec<f64>) -> Result<Self> {
        if phases.len() != radiation.len() {
            return Err(Error::Dimension(format!(
                "{} phases but {} radiation coefficients",
                phases.len(),
                radiation.len()
            )));
        }
        if let Some(u) = radiation.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(Error::Config(format!("radiation coefficient {u} outside [0, 1]")));
        }
        Ok(Self {
            phases: phases.into_iter().map(canonical_phase).collect(),
            radiation,
        })
    }

    pub fn uniform(n: usize, theta: f64, upsilon: f64) -> Self {
        Self {
            phases: vec![canonical_phase(theta); n],
            radiation: vec![upsilon; n],
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn radiation(&self) -> &[f64] {
        &self.radiation
    }

    pub fn set_phases(&mut self, phases: &[f64]) -> Result<()> {
        if phases.len() != self.phases.len() {
            return Err(Error::Dimension(format!(
                "layer has {} elements, got {} phases",
                self.phases.len(),
                phases.len()
            )));
        }
        for (p, &v) in self.phases.iter_mut().zip(phases) {
            *p = canonical_phase(v);
        }
        Ok(())
    }

    /// `e^{jθ_n}`.
    pub fn phase_factors<S: Scalar>(&self) -> Vec<S> {
        self.phases.iter().map(|&t| S::from_c64(C64::from_polar(1.0, t))).collect()
    }

    /// `√υ_n`.
    pub fn amplitude_factors<S: Scalar>(&self) -> Vec<S> {
        self.radiation.iter().map(|&u| S::from_real(u.sqrt())).collect()
    }

    /// Diagonal of `Ξ = √Υ Θ`.
    pub fn response(&self) -> Vec<C64> {
        self.phases
            .iter()
            .zip(&self.radiation)
            .map(|(&t, &u)| C64::from_polar(u.sqrt(), t))
            .collect()
    }
}

/// Metasurface state of every layer of every AP; `layers[l][t - 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceState {
    layers: Vec<Vec<LayerState>>,
}

impl SurfaceState {
    pub fn from_layers(layers: Vec<Vec<LayerState>>) -> Self {
        Self { layers }
    }

    /// All phases equal to `theta`, radiation from the config.
    pub fn uniform(config: &SystemConfig, theta: f64) -> Self {
        let n = config.num_elements();
        let layers = (0..config.num_aps)
            .map(|l| vec![LayerState::uniform(n, theta, config.radiation_coefficient); config.layers(l)])
            .collect();
        Self { layers }
    }

    /// Phases i.i.d. uniform on `[0, 2π)`; AP `l` uses stream `key / l`.
    pub fn random(config: &SystemConfig, key: StreamKey) -> Self {
        let n = config.num_elements();
        let layers = (0..config.num_aps)
            .map(|l| random_ap_layers(n, config.layers(l), config.radiation_coefficient, key.index(l as u64)))
            .collect();
        Self { layers }
    }

    pub fn num_aps(&self) -> usize {
        self.layers.len()
    }

    pub fn ap(&self, l: usize) -> &[LayerState] {
        &self.layers[l]
    }

    pub fn ap_mut(&mut self, l: usize) -> &mut Vec<LayerState> {
        &mut self.layers[l]
    }

    pub fn layer(&self, l: usize, t: usize) -> &LayerState {
        &self.layers[l][t - 1]
    }

    /// Projection of every phase onto the `2^bits`-level grid.
    pub fn quantized(&self, bits: u32) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|ap| {
                ap.iter()
                    .map(|layer| LayerState {
                        phases: layer.phases.iter().map(|&t| quantize_phase(t, bits)).collect(),
                        radiation: layer.radiation.clone(),
                    })
                    .collect()
            })
            .collect();
        Self { layers }
    }

    /// CSV with columns `ap,layer,element,theta,upsilon` (1-based indices).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["ap", "layer", "element", "theta", "upsilon"])?;
        for (l, ap) in self.layers.iter().enumerate() {
            for (t, layer) in ap.iter().enumerate() {
                for (n, (theta, ups)) in layer.phases.iter().zip(&layer.radiation).enumerate() {
                    w.write_record([
                        (l + 1).to_string(),
                        (t + 1).to_string(),
                        (n + 1).to_string(),
                        format!("{theta:e}"),
                        format!("{ups:e}"),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a state written by [`SurfaceState::write_csv`]; every
    /// (ap, layer, element) triple must be present exactly once.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let idx = |i: usize| -> Result<usize> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<usize>().ok())
                    .filter(|&v| v >= 1)
                    .map(|v| v - 1)
                    .ok_or_else(|| Error::Config(format!("{}: bad index in row {rec:?}", path.display())))
            };
            let val = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("{}: bad value in row {rec:?}", path.display())))
            };
            rows.push((idx(0)?, idx(1)?, idx(2)?, val(3)?, val(4)?));
        }
        let num_aps = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let mut layers: Vec<Vec<Vec<Option<(f64, f64)>>>> = vec![Vec::new(); num_aps];
        for &(l, t, n, theta, ups) in &rows {
            let ap = &mut layers[l];
            if ap.len() <= t {
                ap.resize(t + 1, Vec::new());
            }
            if ap[t].len() <= n {
                ap[t].resize(n + 1, None);
            }
            if ap[t][n].replace((theta, ups)).is_some() {
                return Err(Error::Config(format!("duplicate entry ap {} layer {} element {}", l + 1, t + 1, n + 1)));
            }
        }
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(l, ap)| {
                ap.into_iter()
                    .enumerate()
                    .map(|(t, elems)| {
                        let full: Option<Vec<_>> = elems.into_iter().collect();
                        let full = full.filter(|v| !v.is_empty()).ok_or_else(|| {
                            Error::Dimension(format!("missing elements in ap {} layer {}", l + 1, t + 1))
                        })?;
                        let (p, u) = full.into_iter().unzip();
                        LayerState::new(p, u)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }
}

pub fn random_ap_layers(n: usize, layers: usize, upsilon: f64, key: StreamKey) -> Vec<LayerState> {
    let mut rng = key.rng();
    (0..layers)
        .map(|_| LayerState {
            phases: (0..n).map(|_| rng.random_range(0.0..TAU)).collect(),
            radiation: vec![upsilon; n],
        })
        .collect()
}

/// Nearest level of `{2π i / 2^b}`; exact ties go to the lower level.
pub fn quantize_phase(theta: f64, bits: u32) -> f64 {
    let levels = 1u64 << bits;
    let step = TAU / levels as f64;
    let x = canonical_phase(theta) / step;
    let lower = x.floor();
    let i = if x - lower > 0.5 { lower + 1.0 } else { lower };
    (i as u64 % levels) as f64 * step
}

/// `G = A¹ Ξ¹ A² Ξ² ⋯ A^T Ξ^T`, applying each `Ξ` as a column scaling.
pub fn compose_g(stack: &StackMatrices, layers: &[LayerState]) -> Result<CMat> {
    if layers.len() != stack.layers() {
        return Err(Error::Dimension(format!(
            "{} layer states for a {}-layer stack",
            layers.len(),
            stack.layers()
        )));
    }
    let mut g = (*stack.first_hop).clone();
    for (t, layer) in layers.iter().enumerate() {
        if t > 0 {
            g = g.matmul(stack.layer_matrix(t + 1))?;
        }
        if layer.len() != g.cols() {
            return Err(Error::Dimension(format!("layer {} has {} elements, expected {}", t + 1, layer.len(), g.cols())));
        }
        g.scale_columns(&layer.response());
    }
    Ok(g)
}

/// `√ϱ G h`.
pub fn equivalent_channel(g: &CMat, h: &[C64], large_scale: f64) -> Vec<C64> {
    let s = large_scale.sqrt();
    g.mul_vec(h).into_iter().map(|z| z * s).collect()
}

/// Composed beamformer of one AP with the equivalent channels of all UEs.
#[derive(Clone, Debug)]
pub struct EquivalentChannel {
    pub g: CMat,
    /// `q[k]`, length M.
    pub q: Vec<Vec<C64>>,
}

impl EquivalentChannel {
    pub fn new(stack: &StackMatrices, layers: &[LayerState], links: &[crate::channel::UeLink]) -> Result<Self> {
        let g = compose_g(stack, layers)?;
        let q = links
            .iter()
            .map(|link| equivalent_channel(&g, &link.small_scale, link.large_scale))
            .collect();
        Ok(Self { g, q })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::WaveMatrices;
    use crate::linalg::CMat;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn random_mat(rows: usize, cols: usize, rng: &mut crate::rng::SimRng) -> CMat {
        CMat::from_fn(rows, cols, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn random_stack(m: usize, n: usize, t: usize, seed: u64) -> (StackMatrices, Vec<LayerState>) {
        let mut rng = StreamKey::root(seed).rng();
        let first_hop = Arc::new(random_mat(m, n, &mut rng));
        let inter_layer = (1..t).map(|_| Arc::new(random_mat(n, n, &mut rng))).collect();
        let layers = (0..t)
            .map(|_| {
                let p = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
                let u = (0..n).map(|_| rng.random::<f64>()).collect();
                LayerState::new(p, u).unwrap()
            })
            .collect();
        (StackMatrices { first_hop, inter_layer }, layers)
    }

    fn dense_diag(d: &[C64]) -> CMat {
        CMat::from_fn(d.len(), d.len(), |r, c| if r == c { d[r] } else { C64::new(0.0, 0.0) })
    }

    /// Naive triple-loop product.
    fn naive_matmul(a: &CMat, b: &CMat) -> CMat {
        let mut out = CMat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..a.cols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn compose_matches_dense_oracle() {
        let (stack, layers) = random_stack(2, 4, 2, 7);
        let g = compose_g(&stack, &layers).unwrap();
        let mut dense = naive_matmul(&stack.first_hop, &dense_diag(&layers[0].response()));
        dense = naive_matmul(&dense, stack.layer_matrix(2));
        dense = naive_matmul(&dense, &dense_diag(&layers[1].response()));
        for (x, y) in g.as_slice().iter().zip(dense.as_slice()) {
            assert!((x - y).norm() <= 1e-12 * y.norm());
        }
    }

    #[test]
    fn single_identity_layer_returns_first_hop() {
        let (stack, _) = random_stack(3, 5, 1, 1);
        let g = compose_g(&stack, &[LayerState::uniform(5, 0.0, 1.0)]).unwrap();
        assert_eq!(g, *stack.first_hop);
    }

    #[test]
    fn dead_layer_annihilates() {
        let (stack, mut layers) = random_stack(2, 4, 3, 3);
        layers[1] = LayerState::uniform(4, 1.0, 0.0);
        let g = compose_g(&stack, &layers).unwrap();
        assert!(g.as_slice().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn layer_count_mismatch_is_rejected() {
        let (stack, layers) = random_stack(2, 4, 2, 3);
        assert!(matches!(compose_g(&stack, &layers[..1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn equivalent_channel_oracle_and_scaling() {
        let (stack, layers) = random_stack(2, 4, 2, 9);
        let g = compose_g(&stack, &layers).unwrap();
        let h: Vec<C64> = (0..4).map(|i| C64::new(i as f64 - 1.5, 0.25 * i as f64)).collect();
        let q = equivalent_channel(&g, &h, 0.36);
        for m in 0..2 {
            let mut acc = C64::new(0.0, 0.0);
            for n in 0..4 {
                acc += g[(m, n)] * h[n];
            }
            assert!((q[m] - acc * 0.6).norm() <= 1e-12 * acc.norm());
        }
        let q4 = equivalent_channel(&g, &h, 4.0 * 0.36);
        let norm = |v: &[C64]| crate::linalg::norm(v);
        assert!((norm(&q4) / norm(&q) - 2.0).abs() < 1e-12);
        assert!(equivalent_channel(&g, &h, 0.0).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn common_phase_shift_rotates_g() {
        let (stack, mut layers) = random_stack(2, 4, 2, 5);
        let g0 = compose_g(&stack, &layers).unwrap();
        let c = 0.83;
        let shifted: Vec<f64> = layers[1].phases().iter().map(|p| p + c).collect();
        layers[1].set_phases(&shifted).unwrap();
        let g1 = compose_g(&stack, &layers).unwrap();
        let rot = C64::from_polar(1.0, c);
        for (a, b) in g0.as_slice().iter().zip(g1.as_slice()) {
            assert!((a * rot - b).norm() < 1e-12 * a.norm().max(1e-300));
            assert!((a.norm() - b.norm()).abs() < 1e-12 * a.norm().max(1e-300));
        }
    }

    #[test]
    fn unit_radiation_response_is_unitary() {
        let layer = LayerState::new(vec![0.1, 2.0, 5.9, -1.0], vec![1.0; 4]).unwrap();
        for z in layer.response() {
            assert!((z * z.conj() - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn phases_are_canonical() {
        let layer = LayerState::new(vec![-0.5, 7.0, TAU, -1e-18], vec![1.0; 4]).unwrap();
        assert!(layer.phases().iter().all(|p| (0.0..TAU).contains(p)));
        assert!((layer.phases()[0] - (TAU - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_radiation() {
        assert!(LayerState::new(vec![0.0], vec![1.5]).is_err());
        assert!(LayerState::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn quantization_examples() {
        assert_eq!(quantize_phase(0.1, 1), 0.0);
        assert_eq!(quantize_phase(3.0 * PI / 4.0, 2), PI / 2.0);
        assert_eq!(quantize_phase(TAU - 0.01, 3), 0.0);
        assert_eq!(quantize_phase(PI + 0.2, 1), PI);
    }

    proptest! {
        #[test]
        fn quantization_is_idempotent(theta in -20.0f64..20.0, bits in 1u32..=6) {
            let once = quantize_phase(theta, bits);
            prop_assert_eq!(quantize_phase(once, bits), once);
        }

        #[test]
        fn quantization_error_is_at_most_half_a_step(theta in 0.0f64..TAU, bits in 1u32..=6) {
            let step = TAU / (1u64 << bits) as f64;
            let q = quantize_phase(theta, bits);
            let d = (theta - q).rem_euclid(TAU);
            prop_assert!(d.min(TAU - d) <= step / 2.0 + 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut c = SystemConfig::desk();
        c.element_grid = (2, 2);
        let state = SurfaceState::random(&c, StreamKey::root(3));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("phases.csv");
        state.write_csv(&p).unwrap();
        let back = SurfaceState::read_csv(&p).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn random_state_reproducible_and_sized() {
        let c = SystemConfig::desk();
        let a = SurfaceState::random(&c, StreamKey::root(1));
        assert_eq!(a, SurfaceState::random(&c, StreamKey::root(1)));
        assert_ne!(a, SurfaceState::random(&c, StreamKey::root(2)));
        assert_eq!(a.num_aps(), c.num_aps);
        assert_eq!(a.ap(0).len(), 2);
        assert_eq!(a.layer(0, 1).len(), c.num_elements());
    }

    #[test]
    fn equivalent_channel_on_real_geometry() {
        let c = SystemConfig::desk();
        let layout = crate::scenario::build_layout(&c).unwrap();
        let waves = WaveMatrices::from_config(&c).unwrap();
        let props = crate::channel::PropagationSet::build(&c, &layout, &waves, StreamKey::root(4)).unwrap();
        let state = SurfaceState::uniform(&c, 0.0);
        let eq = EquivalentChannel::new(&props.stacks[0], state.ap(0), &props.links[0]).unwrap();
        assert_eq!(eq.q.len(), c.num_ues);
        assert!(eq.q.iter().all(|q| q.len() == c.num_antennas()));
    }
}
