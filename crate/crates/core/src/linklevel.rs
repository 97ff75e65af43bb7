//! Symbol-level Monte Carlo of the impaired uplink, used to cross-check the
//! closed-form fused SINR.

use rayon::prelude::*;

use crate::channel::complex_gaussian;
use crate::fusion::HardwareQuality;
use crate::linalg::{dot_h, C64};
use crate::rng::{SimRng, StreamKey};

/// Trials per independent substream.
pub const CHUNK_TRIALS: usize = 4096;

/// Static parameters of the simulated uplink.
#[derive(Clone, Copy, Debug)]
pub struct Uplink<'a> {
    /// `q[l][k]`.
    pub channels: &'a [Vec<Vec<C64>>],
    pub transmit_power: &'a [f64],
    pub quality: &'a HardwareQuality,
    /// `σ_w²` per AP.
    pub noise_power: &'a [f64],
}

impl Uplink<'_> {
    fn num_aps(&self) -> usize {
        self.channels.len()
    }

    fn num_ues(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    fn num_antennas(&self) -> usize {
        self.channels.first().and_then(|a| a.first()).map_or(0, Vec::len)
    }
}

/// Random quantities of one channel use.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalRealization {
    pub symbols: Vec<C64>,
    pub ue_distortion: Vec<C64>,
    /// `v[l][k]`, length M.
    pub ap_distortion: Vec<Vec<Vec<C64>>>,
    /// `w[l]`, length M.
    pub thermal: Vec<Vec<C64>>,
}

impl SignalRealization {
    pub fn draw(link: &Uplink, rng: &mut SimRng) -> Self {
        let (l_n, k_n, m) = (link.num_aps(), link.num_ues(), link.num_antennas());
        let symbols = (0..k_n).map(|_| complex_gaussian(rng)).collect();
        let ue_distortion = (0..k_n).map(|_| complex_gaussian(rng)).collect();
        let ap_distortion = (0..l_n)
            .map(|_| (0..k_n).map(|_| (0..m).map(|_| complex_gaussian(rng)).collect()).collect())
            .collect();
        let thermal = (0..l_n)
            .map(|l| {
                let sd = link.noise_power[l].sqrt();
                (0..m).map(|_| complex_gaussian(rng) * sd).collect()
            })
            .collect();
        Self { symbols, ue_distortion, ap_distortion, thermal }
    }
}

/// Received vectors `y^(l)` of every AP.
pub fn simulate_received(link: &Uplink, draw: &SignalRealization) -> Vec<Vec<C64>> {
    (0..link.num_aps())
        .map(|l| {
            let ev = link.quality.ap[l];
            let mut y = draw.thermal[l].clone();
            for k in 0..link.num_ues() {
                let rho = link.transmit_power[k];
                let eu = link.quality.ue[k];
                let coherent = draw.symbols[k] * (rho * eu * ev).sqrt()
                    + draw.ue_distortion[k] * (rho * (1.0 - eu) * ev).sqrt();
                let a = (rho * (1.0 - ev)).sqrt();
                for (m, ym) in y.iter_mut().enumerate() {
                    let q = link.channels[l][k][m];
                    *ym += q * coherent + q * draw.ap_distortion[l][k][m] * a;
                }
            }
            y
        })
        .collect()
}

/// Components of a fused estimate, in the order of [`TermPowers`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EstimateTerms {
    pub desired: C64,
    pub ue_distortion: C64,
    pub ap_distortion: C64,
    pub interference: C64,
    pub noise: C64,
}

impl EstimateTerms {
    pub fn total(&self) -> C64 {
        self.desired + self.ue_distortion + self.ap_distortion + self.interference + self.noise
    }
}

/// Per-UE fused receiver: local combiners and CPU weights.
#[derive(Clone, Copy, Debug)]
pub struct Receiver<'a> {
    /// `b[l][k]`.
    pub combiners: &'a [Vec<Vec<C64>>],
    /// `η[k]`, one entry per AP.
    pub weights: &'a [Vec<C64>],
}

/// Precomputed projections so that each trial costs `O(L K² M)`.
struct Projections {
    /// `b_k^(l)ᴴ q_i^(l)` as `[k][l][i]`.
    coherent: Vec<Vec<Vec<C64>>>,
    /// `conj(b_{k,m}^(l)) q_{i,m}^(l)` as `[k][l][i][m]`.
    elementwise: Vec<Vec<Vec<Vec<C64>>>>,
}

impl Projections {
    fn new(link: &Uplink, rx: &Receiver) -> Self {
        let (l_n, k_n) = (link.num_aps(), link.num_ues());
        let coherent = (0..k_n)
            .map(|k| {
                (0..l_n)
                    .map(|l| (0..k_n).map(|i| dot_h(&rx.combiners[l][k], &link.channels[l][i])).collect())
                    .collect()
            })
            .collect();
        let elementwise = (0..k_n)
            .map(|k| {
                (0..l_n)
                    .map(|l| {
                        (0..k_n)
                            .map(|i| {
                                rx.combiners[l][k]
                                    .iter()
                                    .zip(&link.channels[l][i])
                                    .map(|(b, q)| b.conj() * q)
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { coherent, elementwise }
    }
}

/// Splits UE `k`'s fused estimate for one realization into its terms.
pub fn estimate_terms(link: &Uplink, rx: &Receiver, k: usize, draw: &SignalRealization) -> EstimateTerms {
    let proj = Projections::new(link, rx);
    terms_with(link, rx, &proj, k, draw)
}

fn terms_with(link: &Uplink, rx: &Receiver, proj: &Projections, k: usize, draw: &SignalRealization) -> EstimateTerms {
    let mut t = EstimateTerms::default();
    for l in 0..link.num_aps() {
        let eta = rx.weights[k][l].conj();
        let ev = link.quality.ap[l];
        let mut noise = C64::new(0.0, 0.0);
        for (b, w) in rx.combiners[l][k].iter().zip(&draw.thermal[l]) {
            noise += b.conj() * w;
        }
        t.noise += eta * noise;
        for i in 0..link.num_ues() {
            let rho = link.transmit_power[i];
            let eu = link.quality.ue[i];
            let c = proj.coherent[k][l][i];
            let s = c * draw.symbols[i] * (rho * eu * ev).sqrt();
            let u = c * draw.ue_distortion[i] * (rho * (1.0 - eu) * ev).sqrt();
            let mut v = C64::new(0.0, 0.0);
            for (e, d) in proj.elementwise[k][l][i].iter().zip(&draw.ap_distortion[l][i]) {
                v += e * d;
            }
            let v = v * (rho * (1.0 - ev)).sqrt();
            if i == k {
                t.desired += eta * s;
                t.ue_distortion += eta * u;
                t.ap_distortion += eta * v;
            } else {
                t.interference += eta * (s + u + v);
            }
        }
    }
    t
}

/// Sample mean powers of the estimate terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermPowers {
    pub desired: f64,
    pub ue_distortion: f64,
    pub ap_distortion: f64,
    pub interference: f64,
    pub noise: f64,
    /// Power of the full estimate.
    pub total: f64,
}

impl TermPowers {
    fn add(&mut self, t: &EstimateTerms) {
        self.desired += t.desired.norm_sqr();
        self.ue_distortion += t.ue_distortion.norm_sqr();
        self.ap_distortion += t.ap_distortion.norm_sqr();
        self.interference += t.interference.norm_sqr();
        self.noise += t.noise.norm_sqr();
        self.total += t.total().norm_sqr();
    }

    fn merge(&mut self, o: &TermPowers) {
        self.desired += o.desired;
        self.ue_distortion += o.ue_distortion;
        self.ap_distortion += o.ap_distortion;
        self.interference += o.interference;
        self.noise += o.noise;
        self.total += o.total;
    }

    fn scale(&mut self, s: f64) {
        self.desired *= s;
        self.ue_distortion *= s;
        self.ap_distortion *= s;
        self.interference *= s;
        self.noise *= s;
        self.total *= s;
    }

    /// Desired power over everything else.
    pub fn sinr(&self) -> f64 {
        self.desired / (self.ue_distortion + self.ap_distortion + self.interference + self.noise)
    }

    /// Sum of the separately measured term powers.
    pub fn sum_of_terms(&self) -> f64 {
        self.desired + self.ue_distortion + self.ap_distortion + self.interference + self.noise
    }
}

/// Measured SINR of every UE over `trials` channel uses. Trials are grouped
/// in chunks of [`CHUNK_TRIALS`], chunk `c` drawing from `key / c`, so the
/// result does not depend on the number of worker threads.
pub fn empirical_sinr(link: &Uplink, rx: &Receiver, trials: usize, key: StreamKey) -> Vec<TermPowers> {
    let k_n = link.num_ues();
    let proj = Projections::new(link, rx);
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let partial: Vec<Vec<TermPowers>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = key.index(c as u64).rng();
            let n = CHUNK_TRIALS.min(trials - c * CHUNK_TRIALS);
            let mut acc = vec![TermPowers::default(); k_n];
            for _ in 0..n {
                let draw = SignalRealization::draw(link, &mut rng);
                for (k, a) in acc.iter_mut().enumerate() {
                    a.add(&terms_with(link, rx, &proj, k, &draw));
                }
            }
            acc
        })
        .collect();
    let mut out = vec![TermPowers::default(); k_n];
    for chunk in &partial {
        for (o, p) in out.iter_mut().zip(chunk) {
            o.merge(p);
        }
    }
    for o in &mut out {
        o.scale(1.0 / trials.max(1) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse, WeightDesign};
    use crate::linalg::norm;
    use crate::local_opt::mrc;

    fn random_q(num_aps: usize, num_ues: usize, m: usize, seed: u64) -> Vec<Vec<Vec<C64>>> {
        let mut rng = StreamKey::root(seed).label("q").rng();
        (0..num_aps)
            .map(|_| (0..num_ues).map(|_| (0..m).map(|_| complex_gaussian(&mut rng) * 1e-4).collect()).collect())
            .collect()
    }

    fn mrc_all(q: &[Vec<Vec<C64>>]) -> Vec<Vec<Vec<C64>>> {
        q.iter().map(|ap| ap.iter().map(|v| mrc(v).unwrap()).collect()).collect()
    }

    #[test]
    fn noiseless_ideal_single_user() {
        let q = random_q(1, 1, 3, 1);
        let hq = HardwareQuality::ideal(1, 1);
        let link = Uplink { channels: &q, transmit_power: &[0.5], quality: &hq, noise_power: &[0.0] };
        let mut rng = StreamKey::root(2).rng();
        let draw = SignalRealization::draw(&link, &mut rng);
        let y = simulate_received(&link, &draw);
        for (ym, qm) in y[0].iter().zip(&q[0][0]) {
            assert!((ym - qm * draw.symbols[0] * 0.5f64.sqrt()).norm() < 1e-18);
        }
    }

    #[test]
    fn dead_ap_hardware_removes_coherent_terms() {
        let q = random_q(1, 2, 2, 3);
        let hq = HardwareQuality { ue: vec![0.7, 0.9], ap: vec![0.0] };
        let link = Uplink { channels: &q, transmit_power: &[1.0, 2.0], quality: &hq, noise_power: &[0.0] };
        let mut rng = StreamKey::root(4).rng();
        let mut draw = SignalRealization::draw(&link, &mut rng);
        let y0 = simulate_received(&link, &draw);
        draw.symbols = vec![C64::new(5.0, 5.0); 2];
        draw.ue_distortion = vec![C64::new(-3.0, 1.0); 2];
        assert_eq!(simulate_received(&link, &draw), y0);
    }

    #[test]
    fn received_power_matches_closed_form() {
        let q = random_q(1, 3, 4, 5);
        let hq = HardwareQuality::ideal(3, 1);
        let rho = [0.1, 0.2, 0.3];
        let noise = [1e-9];
        let link = Uplink { channels: &q, transmit_power: &rho, quality: &hq, noise_power: &noise };
        let mut rng = StreamKey::root(6).rng();
        let trials = 100_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let y = simulate_received(&link, &SignalRealization::draw(&link, &mut rng));
            acc += y[0].iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let expected: f64 = (0..3).map(|k| rho[k] * norm(&q[0][k]).powi(2)).sum::<f64>() + 4.0 * noise[0];
        assert!((acc / trials as f64 / expected - 1.0).abs() <= 0.02);
    }

    #[test]
    fn terms_sum_to_fused_estimate() {
        let q = random_q(3, 2, 2, 7);
        let hq = HardwareQuality { ue: vec![0.9, 0.99], ap: vec![0.95, 0.8, 1.0] };
        let rho = [0.1, 0.4];
        let noise = [1e-9; 3];
        let link = Uplink { channels: &q, transmit_power: &rho, quality: &hq, noise_power: &noise };
        let b = mrc_all(&q);
        let eta = vec![vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.5), C64::new(0.7, 0.0)]; 2];
        let rx = Receiver { combiners: &b, weights: &eta };
        let mut rng = StreamKey::root(8).rng();
        let draw = SignalRealization::draw(&link, &mut rng);
        let y = simulate_received(&link, &draw);
        for k in 0..2 {
            let direct: C64 = (0..3).map(|l| eta[k][l].conj() * dot_h(&b[l][k], &y[l])).sum();
            let t = estimate_terms(&link, &rx, k, &draw).total();
            assert!((direct - t).norm() <= 1e-12 * direct.norm());
        }
    }

    #[test]
    fn ideal_single_link_matches_snr() {
        let q = random_q(1, 1, 4, 9);
        let hq = HardwareQuality::ideal(1, 1);
        let link = Uplink { channels: &q, transmit_power: &[0.1], quality: &hq, noise_power: &[1e-9] };
        let b = mrc_all(&q);
        let eta = vec![vec![C64::new(1.0, 0.0)]];
        let rx = Receiver { combiners: &b, weights: &eta };
        let p = empirical_sinr(&link, &rx, 20_000, StreamKey::root(10));
        let target = 0.1 * norm(&q[0][0]).powi(2) / 1e-9;
        assert!((p[0].sinr() / target - 1.0).abs() <= 0.05);
        let link2 = Uplink { transmit_power: &[0.2], ..link };
        let p2 = empirical_sinr(&link2, &rx, 20_000, StreamKey::root(10));
        assert!((p2[0].sinr() / p[0].sinr() - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn empirical_matches_analytic_and_terms_add_up() {
        let q = random_q(3, 3, 4, 11);
        let hq = HardwareQuality { ue: vec![0.99, 1.0, 0.9999], ap: vec![1.0, 0.99, 0.9999] };
        let rho = [0.1; 3];
        let noise = [1e-9; 3];
        let rep = fuse(&q, &hq, &rho, &noise, WeightDesign::Matched).unwrap();
        let b = mrc_all(&q);
        let eta: Vec<Vec<C64>> = rep.ues.iter().map(|u| u.weights.clone()).collect();
        let link = Uplink { channels: &q, transmit_power: &rho, quality: &hq, noise_power: &noise };
        let p = empirical_sinr(&link, &Receiver { combiners: &b, weights: &eta }, 50_000, StreamKey::root(12));
        for (k, u) in rep.ues.iter().enumerate() {
            assert!((p[k].sinr() / u.sinr - 1.0).abs() <= 0.05, "ue {k}: {} vs {}", p[k].sinr(), u.sinr);
            assert!((p[k].total / p[k].sum_of_terms() - 1.0).abs() <= 0.01);
        }
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let q = random_q(2, 2, 2, 13);
        let hq = HardwareQuality { ue: vec![0.99; 2], ap: vec![0.99; 2] };
        let link = Uplink { channels: &q, transmit_power: &[0.1, 0.1], quality: &hq, noise_power: &[1e-9; 2] };
        let b = mrc_all(&q);
        let eta = vec![vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]; 2];
        let rx = Receiver { combiners: &b, weights: &eta };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| empirical_sinr(&link, &rx, 3 * CHUNK_TRIALS + 17, StreamKey::root(14)))
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
    }
}
