//! Central combining of the local estimates: statistics vectors, the
//! interference-plus-noise covariance, optimal weights and rates.
//!
//! Local estimates are assumed to come from MRC combiners `b = q / ‖q‖`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{dot_h, norm, pseudo_quad_form, CMat, Cholesky, PseudoQuadForm, C64};
use crate::local_opt::{local_sinr, mrc, LinkBudget};

/// Hardware quality factors of every UE and AP.
#[derive(Clone, Debug, PartialEq)]
pub struct HardwareQuality {
    pub ue: Vec<f64>,
    pub ap: Vec<f64>,
}

impl HardwareQuality {
    pub fn ideal(num_ues: usize, num_aps: usize) -> Self {
        Self { ue: vec![1.0; num_ues], ap: vec![1.0; num_aps] }
    }
}

/// Statistics vectors of one (k, i) pair, one entry per AP.
#[derive(Clone, Debug, PartialEq)]
pub struct ZSet {
    /// Coherent part carried by `s_i`.
    pub signal: Vec<C64>,
    /// Coherent part carried by the UE distortion `u_i`.
    pub ue_distortion: Vec<C64>,
    /// Per-AP standard deviation of the AP distortion term.
    pub ap_distortion: Vec<f64>,
}

/// `z[k][i]` for all UE pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ZVectors {
    pub sets: Vec<Vec<ZSet>>,
}

impl ZVectors {
    pub fn num_ues(&self) -> usize {
        self.sets.len()
    }

    pub fn num_aps(&self) -> usize {
        self.sets.first().map_or(0, |s| s[0].signal.len())
    }

    pub fn get(&self, k: usize, i: usize) -> &ZSet {
        &self.sets[k][i]
    }
}

/// Builds all statistics vectors from `q[l][k]`.
pub fn build_z_vectors(q: &[Vec<Vec<C64>>], quality: &HardwareQuality) -> Result<ZVectors> {
    let num_aps = q.len();
    let num_ues = q.first().map_or(0, Vec::len);
    if quality.ap.len() != num_aps || quality.ue.len() != num_ues {
        return Err(Error::Dimension(format!(
            "quality factors for {} UEs / {} APs, channels for {num_ues} / {num_aps}",
            quality.ue.len(),
            quality.ap.len()
        )));
    }
    let norms: Vec<Vec<f64>> = q.iter().map(|ap| ap.iter().map(|v| norm(v)).collect()).collect();
    for (l, row) in norms.iter().enumerate() {
        if let Some(k) = row.iter().position(|&n| !(n > 0.0)) {
            return Err(Error::DegenerateChannel { ap: l, ue: k });
        }
    }
    let sets = (0..num_ues)
        .map(|k| {
            (0..num_ues)
                .map(|i| {
                    let mut set = ZSet {
                        signal: Vec::with_capacity(num_aps),
                        ue_distortion: Vec::with_capacity(num_aps),
                        ap_distortion: Vec::with_capacity(num_aps),
                    };
                    for l in 0..num_aps {
                        let (eu, ev) = (quality.ue[k], quality.ap[l]);
                        let proj = dot_h(&q[l][k], &q[l][i]) / norms[l][k];
                        let cross: f64 = q[l][k]
                            .iter()
                            .zip(&q[l][i])
                            .map(|(a, b)| a.norm_sqr() * b.norm_sqr())
                            .sum::<f64>()
                            .sqrt();
                        set.signal.push(proj * (eu * ev).sqrt());
                        set.ue_distortion.push(proj * ((1.0 - eu) * ev).sqrt());
                        set.ap_distortion.push((1.0 - ev).sqrt() * cross / norms[l][k]);
                    }
                    set
                })
                .collect()
        })
        .collect();
    Ok(ZVectors { sets })
}

fn add_outer(r: &mut CMat, z: &[C64], w: f64) {
    for (a, za) in z.iter().enumerate() {
        for (b, zb) in z.iter().enumerate() {
            r[(a, b)] += za * zb.conj() * w;
        }
    }
}

fn add_diag(r: &mut CMat, z: &[f64], w: f64) {
    for (a, za) in z.iter().enumerate() {
        r[(a, a)] += C64::new(w * za * za, 0.0);
    }
}

/// Interference-plus-distortion part of `R_k` for UE powers `rho`, without
/// thermal noise.
pub fn distortion_covariance(z: &ZVectors, k: usize, rho: &[f64]) -> CMat {
    let l = z.num_aps();
    let mut r = CMat::zeros(l, l);
    for (i, set) in z.sets[k].iter().enumerate() {
        if i != k {
            add_outer(&mut r, &set.signal, rho[i]);
        }
        add_outer(&mut r, &set.ue_distortion, rho[i]);
        add_diag(&mut r, &set.ap_distortion, rho[i]);
    }
    r
}

/// `R_k`; `noise[l]` is `σ_w²` of AP `l`.
pub fn build_r(z: &ZVectors, k: usize, rho: &[f64], noise: &[f64]) -> CMat {
    let mut r = distortion_covariance(z, k, rho);
    for (l, &n) in noise.iter().enumerate() {
        r[(l, l)] += C64::new(n, 0.0);
    }
    r
}

/// `ρ |ηᴴz|² / ηᴴRη`.
pub fn rayleigh_quotient(eta: &[C64], z: &[C64], r: &CMat, rho: f64) -> f64 {
    rho * dot_h(eta, z).norm_sqr() / r.quad_form(eta)
}

/// Maximizer `η ∝ R⁻¹z` (unit norm) and the attained SINR `ρ zᴴR⁻¹z`.
pub fn optimal_weights(r: &CMat, z: &[C64], rho: f64) -> Result<(Vec<C64>, f64)> {
    let chol = Cholesky::new(r)?;
    let x = chol.solve(z);
    let gamma = rho * dot_h(z, &x).re.max(0.0);
    let n = norm(&x);
    let eta = if n > 0.0 { x.iter().map(|v| v / n).collect() } else { x };
    Ok((eta, gamma))
}

/// Per-UE rates `log₂(1 + γ)` with their mean and sum.
#[derive(Clone, Debug, PartialEq)]
pub struct RateSummary {
    pub per_ue: Vec<f64>,
    pub mean: f64,
    pub sum: f64,
}

pub fn rates(gamma: &[f64]) -> RateSummary {
    let per_ue: Vec<f64> = gamma.iter().map(|g| (1.0 + g).log2()).collect();
    let sum = crate::linalg::compensated_sum(per_ue.iter().copied());
    let mean = if per_ue.is_empty() { 0.0 } else { sum / per_ue.len() as f64 };
    RateSummary { per_ue, mean, sum }
}

/// High-power limit of the fused SINR with all UEs at the same power.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SaturationLimit {
    Finite(f64),
    /// The SINR keeps growing with power.
    Unbounded,
}

impl SaturationLimit {
    pub fn rate(self) -> f64 {
        match self {
            Self::Finite(g) => (1.0 + g).log2(),
            Self::Unbounded => f64::INFINITY,
        }
    }
}

/// `zᴴS⁻¹z` with `S` the power-proportional part of `R_k` at unit power.
/// A singular `S` falls back to the pseudo-inverse.
pub fn hwi_saturation_limit(z: &ZVectors, k: usize) -> SaturationLimit {
    let unit = vec![1.0; z.num_ues()];
    let s = distortion_covariance(z, k, &unit);
    let zk = &z.get(k, k).signal;
    if hermitian_min_ratio(&s) > 1e-12 {
        if let Ok(chol) = Cholesky::new(&s) {
            return SaturationLimit::Finite(dot_h(zk, &chol.solve(zk)).re);
        }
    }
    match pseudo_quad_form(&s, zk, 1e-10) {
        PseudoQuadForm::Finite(g) => {
            log::warn!("saturation limit of UE {k}: singular distortion covariance, pseudo-inverse used");
            SaturationLimit::Finite(g)
        }
        PseudoQuadForm::Unbounded => SaturationLimit::Unbounded,
    }
}

fn hermitian_min_ratio(s: &CMat) -> f64 {
    let ev = crate::linalg::hermitian_eigenvalues(s);
    let max = ev.iter().copied().fold(0.0f64, f64::max);
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if max > 0.0 {
        min / max
    } else {
        0.0
    }
}

/// How the CPU designs its weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightDesign {
    /// Weights from the true covariance.
    #[default]
    Matched,
    /// Weights computed as if all hardware were ideal, evaluated under the
    /// true impairments.
    HardwareUnaware,
}

/// Fusion outcome of one UE.
#[derive(Clone, Debug)]
pub struct UeFusion {
    pub z: ZSet,
    pub covariance: CMat,
    /// Unit-norm weights.
    pub weights: Vec<C64>,
    pub sinr: f64,
    pub rate: f64,
    /// Best single-AP SINR of this UE.
    pub best_local_sinr: f64,
}

#[derive(Clone, Debug)]
pub struct FusionReport {
    pub ues: Vec<UeFusion>,
    pub rates: RateSummary,
}

/// Full CPU-side evaluation for channels `q[l][k]`.
pub fn fuse(
    q: &[Vec<Vec<C64>>],
    quality: &HardwareQuality,
    rho: &[f64],
    noise: &[f64],
    design: WeightDesign,
) -> Result<FusionReport> {
    let z = build_z_vectors(q, quality)?;
    let design_z = match design {
        WeightDesign::Matched => None,
        WeightDesign::HardwareUnaware => Some(build_z_vectors(q, &HardwareQuality::ideal(quality.ue.len(), quality.ap.len()))?),
    };
    let num_ues = z.num_ues();
    let mut ues = Vec::with_capacity(num_ues);
    for k in 0..num_ues {
        let r = build_r(&z, k, rho, noise);
        let zk = &z.get(k, k).signal;
        let (weights, sinr) = match &design_z {
            None => optimal_weights(&r, zk, rho[k])?,
            Some(dz) => {
                let r0 = build_r(dz, k, rho, noise);
                let (eta, _) = optimal_weights(&r0, &dz.get(k, k).signal, rho[k])?;
                let g = rayleigh_quotient(&eta, zk, &r, rho[k]);
                (eta, g)
            }
        };
        let best_local_sinr = (0..q.len())
            .map(|l| {
                let b = mrc(&q[l][k]).ok_or(Error::DegenerateChannel { ap: l, ue: k })?;
                let budget = LinkBudget {
                    transmit_power: rho,
                    ue_quality: &quality.ue,
                    ap_quality: quality.ap[l],
                    noise_power: noise[l],
                };
                Ok(local_sinr(&q[l], &b, k, &budget).sinr)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        ues.push(UeFusion {
            z: z.get(k, k).clone(),
            covariance: r,
            weights,
            sinr,
            rate: (1.0 + sinr).log2(),
            best_local_sinr,
        });
    }
    let rates = rates(&ues.iter().map(|u| u.sinr).collect::<Vec<_>>());
    Ok(FusionReport { ues, rates })
}

impl FusionReport {
    /// Rows `ue,gamma,rate,gamma_local_max`, optionally followed by
    /// `eta<l>_re,eta<l>_im` columns.
    pub fn write_csv(&self, path: &Path, with_weights: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = ["ue", "gamma", "rate", "gamma_local_max"].map(String::from).to_vec();
        let num_aps = self.ues.first().map_or(0, |u| u.weights.len());
        if with_weights {
            for l in 1..=num_aps {
                header.push(format!("eta{l}_re"));
                header.push(format!("eta{l}_im"));
            }
        }
        w.write_record(&header)?;
        for (k, u) in self.ues.iter().enumerate() {
            let mut row = vec![
                (k + 1).to_string(),
                format!("{:e}", u.sinr),
                format!("{:e}", u.rate),
                format!("{:e}", u.best_local_sinr),
            ];
            if with_weights {
                for e in &u.weights {
                    row.push(format!("{:e}", e.re));
                    row.push(format!("{:e}", e.im));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_gaussian;
    use crate::rng::StreamKey;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn random_q(num_aps: usize, num_ues: usize, m: usize, seed: u64) -> Vec<Vec<Vec<C64>>> {
        let mut rng = StreamKey::root(seed).label("q").rng();
        (0..num_aps)
            .map(|_| (0..num_ues).map(|_| (0..m).map(|_| complex_gaussian(&mut rng) * 1e-4).collect()).collect())
            .collect()
    }

    fn quality(num_ues: usize, num_aps: usize, eps: f64) -> HardwareQuality {
        HardwareQuality { ue: vec![eps; num_ues], ap: vec![eps; num_aps] }
    }

    #[test]
    fn ideal_hardware_has_no_distortion_vectors() {
        let q = random_q(3, 2, 4, 1);
        let z = build_z_vectors(&q, &quality(2, 3, 1.0)).unwrap();
        for set in z.sets.iter().flatten() {
            assert!(set.ue_distortion.iter().all(|v| v.norm() == 0.0));
            assert!(set.ap_distortion.iter().all(|&v| v == 0.0));
        }
        for l in 0..3 {
            let n = norm(&q[l][1]);
            assert!((z.get(1, 1).signal[l] - C64::new(n, 0.0)).norm() < 1e-12 * n);
        }
    }

    #[test]
    fn signal_and_ue_parts_split_the_projection() {
        let q = random_q(3, 3, 4, 2);
        let hq = HardwareQuality { ue: vec![0.9, 0.99, 0.5], ap: vec![0.8, 1.0, 0.95] };
        let z = build_z_vectors(&q, &hq).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                for l in 0..3 {
                    let set = z.get(k, i);
                    let lhs = set.signal[l].norm_sqr() + set.ue_distortion[l].norm_sqr();
                    let rhs = hq.ap[l] * dot_h(&q[l][k], &q[l][i]).norm_sqr() / norm(&q[l][k]).powi(2);
                    assert!((lhs - rhs).abs() <= 1e-12 * rhs);
                }
            }
        }
    }

    #[test]
    fn zero_channel_is_degenerate() {
        let mut q = random_q(2, 2, 2, 3);
        q[1][0] = vec![C64::new(0.0, 0.0); 2];
        assert!(matches!(
            build_z_vectors(&q, &quality(2, 2, 1.0)),
            Err(Error::DegenerateChannel { ap: 1, ue: 0 })
        ));
    }

    #[test]
    fn single_ideal_user_covariance_is_noise() {
        let q = random_q(3, 1, 2, 4);
        let z = build_z_vectors(&q, &quality(1, 3, 1.0)).unwrap();
        let noise = [1e-9, 2e-9, 3e-9];
        let r = build_r(&z, 0, &[0.1], &noise);
        let w = CMat::from_fn(3, 3, |a, b| if a == b { C64::new(noise[a], 0.0) } else { C64::new(0.0, 0.0) });
        assert_eq!(r, w);
    }

    #[test]
    fn covariance_is_hermitian_and_dominates_noise() {
        let q = random_q(4, 3, 4, 5);
        let z = build_z_vectors(&q, &HardwareQuality { ue: vec![0.99, 0.9, 1.0], ap: vec![0.9, 0.99, 1.0, 0.95] }).unwrap();
        for k in 0..3 {
            let r = build_r(&z, k, &[0.1, 0.2, 0.05], &[1e-11; 4]);
            let d = &r.adjoint();
            let diff: f64 = r.as_slice().iter().zip(d.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            assert!(diff <= 1e-12 * r.frobenius_norm());
            let s = distortion_covariance(&z, k, &[0.1, 0.2, 0.05]);
            let ev = crate::linalg::hermitian_eigenvalues(&s);
            assert!(ev.iter().all(|&e| e >= -1e-12 * s.frobenius_norm()));
        }
    }

    #[test]
    fn scalar_case() {
        let q = vec![vec![vec![C64::new(3e-5, 4e-5)]]];
        let rep = fuse(&q, &quality(1, 1, 1.0), &[0.1], &[1e-11], WeightDesign::Matched).unwrap();
        let expected = 0.1 * 25e-10 / 1e-11;
        assert!((rep.ues[0].sinr - expected).abs() < 1e-12 * expected);
        assert!((rep.ues[0].weights[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rate_examples() {
        let r = rates(&[0.0, 1.0, 3.0]);
        assert_eq!(r.per_ue, vec![0.0, 1.0, 2.0]);
        assert_eq!(r.sum, 3.0);
        assert_eq!(r.mean, 1.0);
    }

    fn random_unit(rng: &mut crate::rng::SimRng, n: usize) -> Vec<C64> {
        let v: Vec<C64> = (0..n).map(|_| complex_gaussian(rng)).collect();
        let s = norm(&v);
        v.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn weights_are_rayleigh_optimal_and_scale_free() {
        let q = random_q(4, 3, 4, 6);
        let hq = HardwareQuality { ue: vec![0.99; 3], ap: vec![0.9999; 4] };
        let rho = [0.1; 3];
        let z = build_z_vectors(&q, &hq).unwrap();
        let r = build_r(&z, 0, &rho, &[1e-11; 4]);
        let zk = &z.get(0, 0).signal;
        let (eta, gamma) = optimal_weights(&r, zk, rho[0]).unwrap();
        assert!((norm(&eta) - 1.0).abs() < 1e-12);
        let at_eta = rayleigh_quotient(&eta, zk, &r, rho[0]);
        assert!((at_eta - gamma).abs() <= 1e-10 * gamma);
        let scaled: Vec<C64> = eta.iter().map(|e| e * C64::new(-2.5, 7.0)).collect();
        assert!((rayleigh_quotient(&scaled, zk, &r, rho[0]) - gamma).abs() <= 1e-10 * gamma);
        let mut rng = StreamKey::root(7).rng();
        for _ in 0..10_000 {
            let e = random_unit(&mut rng, 4);
            assert!(rayleigh_quotient(&e, zk, &r, rho[0]) <= gamma * (1.0 + 1e-10));
        }
    }

    #[test]
    fn indefinite_covariance_reports_conditioning() {
        let r = CMat::from_fn(2, 2, |a, b| if a == b { C64::new(-1.0, 0.0) } else { C64::new(0.0, 0.0) });
        assert!(matches!(
            optimal_weights(&r, &[C64::new(1.0, 0.0); 2], 1.0),
            Err(Error::Conditioning { .. })
        ));
    }

    #[test]
    fn single_ap_matches_local_sinr() {
        let q = random_q(1, 1, 4, 8);
        let rep = fuse(&q, &quality(1, 1, 1.0), &[0.2], &[1e-11], WeightDesign::Matched).unwrap();
        let u = &rep.ues[0];
        assert!((u.sinr - u.best_local_sinr).abs() <= 1e-10 * u.sinr);
    }

    #[test]
    fn saturation_cases() {
        let q = random_q(3, 1, 4, 9);
        let z = build_z_vectors(&q, &quality(1, 3, 1.0)).unwrap();
        assert_eq!(hwi_saturation_limit(&z, 0), SaturationLimit::Unbounded);

        let q = random_q(4, 3, 4, 10);
        let hq = quality(3, 4, 1.0 - 1e-2);
        let z = build_z_vectors(&q, &hq).unwrap();
        let lim = match hwi_saturation_limit(&z, 1) {
            SaturationLimit::Finite(g) => g,
            SaturationLimit::Unbounded => panic!("impaired hardware must saturate"),
        };
        let rho = 1e8 * 0.1;
        let r = build_r(&z, 1, &[rho; 3], &[1e-11; 4]);
        let (_, g) = optimal_weights(&r, &z.get(1, 1).signal, rho).unwrap();
        assert!((g - lim).abs() <= 0.01 * lim, "{g} vs {lim}");

        let worse = HardwareQuality { ue: hq.ue.clone(), ap: vec![1.0 - 5e-2; 4] };
        let zw = build_z_vectors(&q, &worse).unwrap();
        match hwi_saturation_limit(&zw, 1) {
            SaturationLimit::Finite(gw) => assert!(gw < lim),
            SaturationLimit::Unbounded => panic!(),
        }
    }

    #[test]
    fn unaware_weights_never_beat_matched() {
        let q = random_q(4, 3, 4, 11);
        let hq = HardwareQuality { ue: vec![0.9; 3], ap: vec![0.8, 0.99, 0.9, 0.7] };
        let m = fuse(&q, &hq, &[10.0; 3], &[1e-11; 4], WeightDesign::Matched).unwrap();
        let u = fuse(&q, &hq, &[10.0; 3], &[1e-11; 4], WeightDesign::HardwareUnaware).unwrap();
        for (a, b) in m.ues.iter().zip(&u.ues) {
            assert!(b.sinr <= a.sinr * (1.0 + 1e-10));
        }
    }

    #[test]
    fn report_csv_columns() {
        let q = random_q(2, 2, 2, 12);
        let rep = fuse(&q, &quality(2, 2, 0.99), &[0.1; 2], &[1e-11; 2], WeightDesign::Matched).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        rep.write_csv(&p, true).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("ue,gamma,rate,gamma_local_max,eta1_re,eta1_im,eta2_re,eta2_im\n"));
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn adding_an_ap_never_hurts(seed in 0u64..10_000, eps_idx in 0usize..3) {
            let eps = [1.0, 1.0 - 1e-2, 1.0 - 1e-4][eps_idx];
            let q = random_q(4, 3, 2, seed);
            let rho = [0.1; 3];
            let full = fuse(&q, &quality(3, 4, eps), &rho, &[1e-11; 4], WeightDesign::Matched).unwrap();
            let part = fuse(&q[..3], &quality(3, 3, eps), &rho, &[1e-11; 3], WeightDesign::Matched).unwrap();
            for (a, b) in full.ues.iter().zip(&part.ues) {
                prop_assert!(a.sinr >= b.sinr * (1.0 - 1e-10));
            }
        }

        #[test]
        fn ap_relabeling_is_invariant(seed in 0u64..10_000, shift in 1usize..4) {
            let q = random_q(4, 3, 3, seed);
            let hq = HardwareQuality { ue: vec![0.99, 0.9999, 1.0], ap: vec![0.99, 1.0, 0.9999, 0.99] };
            let noise = [1e-11, 2e-11, 3e-11, 4e-11];
            let perm: Vec<usize> = (0..4).map(|l| (l + shift) % 4).collect();
            let qp: Vec<_> = perm.iter().map(|&l| q[l].clone()).collect();
            let hp = HardwareQuality { ue: hq.ue.clone(), ap: perm.iter().map(|&l| hq.ap[l]).collect() };
            let np: Vec<f64> = perm.iter().map(|&l| noise[l]).collect();
            let a = fuse(&q, &hq, &[0.1; 3], &noise, WeightDesign::Matched).unwrap();
            let b = fuse(&qp, &hp, &[0.1; 3], &np, WeightDesign::Matched).unwrap();
            for (x, y) in a.ues.iter().zip(&b.ues) {
                prop_assert!((x.sinr - y.sinr).abs() <= 1e-9 * x.sinr);
            }
        }
    }
}
