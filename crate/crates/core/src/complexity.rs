//! Multiplication counts of the per-AP optimization and of the CPU fusion,
//! plus an instrumented run that measures them.
//!
//! One complex multiplication counts as one operation, additions are free.

use std::cell::Cell;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::path::Path;

use rand::Rng;

use crate::channel::complex_gaussian;
use crate::error::{Error, Result};
use crate::linalg::{CMat, Scalar, C64};
use crate::local_opt::{combiner_partial, equivalent_channel_chain, forward_partial, mrc, StackView};
use crate::rng::StreamKey;

/// Per-iteration multiplications at one AP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApCost {
    /// Equivalent channel of the target UE.
    pub channel: u64,
    /// MRC combiners of all UEs.
    pub combining: u64,
    /// `(combiner side, channel side)` of each layer update, `t = 1..=T`.
    pub per_layer: Vec<(u64, u64)>,
    /// Whole layer sweep.
    pub sweep: u64,
    pub total: u64,
}

/// Multiplications of the CPU fusion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CpuCost {
    /// Statistics vectors and covariance.
    pub statistics: u64,
    /// Cholesky factorization.
    pub factorization: u64,
    /// Weight application.
    pub combining: u64,
    pub total: u64,
    /// Leading orders `(K L³, K² L², K² M)`.
    pub asymptotic: (u64, u64, u64),
}

fn overflow() -> Error {
    Error::Config("operation count overflows u64".into())
}

fn mul(a: u64, b: u64) -> Result<u64> {
    a.checked_mul(b).ok_or_else(overflow)
}

fn add(a: u64, b: u64) -> Result<u64> {
    a.checked_add(b).ok_or_else(overflow)
}

/// Cost of one iteration at an AP with `n` elements per layer, `m`
/// antennas, `k` UEs and `t` layers.
pub fn ap_cost(n: u64, m: u64, k: u64, t: u64) -> Result<ApCost> {
    if n == 0 || m == 0 || k == 0 || t == 0 {
        return Err(Error::Config("cost dimensions must be positive".into()));
    }
    let layer = add(mul(n, n)?, mul(2, n)?)?;
    let channel = add(add(add(mul(t - 1, layer)?, mul(m, n)?)?, mul(2, n)?)?, m)?;
    let combining = mul(mul(2, k)?, m)?;
    let per_layer = (1..=t)
        .map(|s| Ok((add(mul(s - 1, layer)?, mul(m + 1, n)?)?, mul(t - s, layer)?)))
        .collect::<Result<Vec<_>>>()?;
    let sweep = add(mul(mul(t, t)? - t, layer)?, mul(t, mul(m + 1, n)?)?)?;
    let total = add(add(channel, combining)?, sweep)?;
    Ok(ApCost { channel, combining, per_layer, sweep, total })
}

/// Cost of fusing `k` UEs over `l` APs with `m` antennas each.
pub fn cpu_cost(l: u64, k: u64, m: u64) -> Result<CpuCost> {
    if l == 0 || k == 0 || m == 0 {
        return Err(Error::Config("cost dimensions must be positive".into()));
    }
    let statistics = mul(add(add(mul(l, l)?, mul(2, l)?)?, mul(3, m)?)?, k)?;
    let factorization = add((mul(mul(l, l)?, l)? - l) / 3, mul(l, l)?)?;
    let combining = l;
    let total = add(add(statistics, factorization)?, combining)?;
    let asymptotic = (mul(k, mul(l, mul(l, l)?)?)?, mul(mul(k, k)?, mul(l, l)?)?, mul(mul(k, k)?, m)?);
    Ok(CpuCost { statistics, factorization, combining, total, asymptotic })
}

thread_local! {
    static MULTIPLICATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Complex scalar that counts its multiplications on the current thread.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Counted(pub C64);

impl Add for Counted {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Counted(self.0 + o.0)
    }
}

impl Sub for Counted {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Counted(self.0 - o.0)
    }
}

impl AddAssign for Counted {
    fn add_assign(&mut self, o: Self) {
        self.0 += o.0;
    }
}

impl Mul for Counted {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        MULTIPLICATIONS.with(|c| c.set(c.get() + 1));
        Counted(self.0 * o.0)
    }
}

impl Scalar for Counted {
    fn from_c64(z: C64) -> Self {
        Counted(z)
    }
    fn to_c64(self) -> C64 {
        self.0
    }
    fn conj(self) -> Self {
        Counted(self.0.conj())
    }
}

/// Runs `f` and returns its result with the number of [`Counted`]
/// multiplications it performed on this thread.
pub fn count_multiplications<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = MULTIPLICATIONS.with(Cell::get);
    let r = f();
    (r, MULTIPLICATIONS.with(Cell::get) - before)
}

/// Measured multiplications of one iteration's building blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasuredCost {
    pub channel: u64,
    pub combining: u64,
    pub per_layer: Vec<(u64, u64)>,
}

/// Runs the optimization kernels once on a random instance with a counting
/// scalar. Sizes are limited to `n ≤ 8`, `m ≤ 4`, `t ≤ 3`, `k ≤ 3`.
pub fn instrumented_count(n: usize, m: usize, k: usize, t: usize, seed: u64) -> Result<MeasuredCost> {
    if n == 0 || m == 0 || k == 0 || t == 0 || n > 8 || m > 4 || t > 3 || k > 3 {
        return Err(Error::Config(format!("instrumented run needs a tiny instance, got N={n} M={m} K={k} T={t}")));
    }
    let mut rng = StreamKey::root(seed).label("instrumented").rng();
    let mut cmat = |r: usize, c: usize| CMat::from_fn(r, c, |_, _| Counted(complex_gaussian(&mut rng)));
    let mats: Vec<CMat<Counted>> = std::iter::once(cmat(m, n)).chain((1..t).map(|_| cmat(n, n))).collect();
    let amplitude = (0..t).map(|_| (0..n).map(|_| Counted::from_real(rng.random::<f64>().sqrt())).collect()).collect();
    let phase = (0..t)
        .map(|_| (0..n).map(|_| Counted(C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))).collect())
        .collect();
    let view = StackView { mats: mats.iter().collect(), amplitude, phase };
    let h: Vec<Vec<Counted>> = (0..k).map(|_| (0..n).map(|_| Counted(complex_gaussian(&mut rng))).collect()).collect();
    let gain = Counted::from_real(1e-3f64.sqrt());

    let (q_target, channel) = count_multiplications(|| equivalent_channel_chain(&view, &h[0], gain));
    let q: Vec<Vec<Counted>> = std::iter::once(q_target)
        .chain(h[1..].iter().map(|hk| equivalent_channel_chain(&view, hk, gain)))
        .collect();
    let (b, combining) = count_multiplications(|| q.iter().map(|qk| mrc(qk)).collect::<Vec<_>>());
    let b0 = b[0].clone().ok_or(Error::DegenerateChannel { ap: 0, ue: 0 })?;
    let per_layer = (1..=t)
        .map(|s| {
            let (_, head) = count_multiplications(|| combiner_partial(&view, s, &b0));
            let (_, tail) = count_multiplications(|| forward_partial(&view, s, &h[0]));
            (head, tail)
        })
        .collect();
    Ok(MeasuredCost { channel, combining, per_layer })
}

/// One row of a cost table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostPoint {
    pub n: u64,
    pub m: u64,
    pub k: u64,
    pub l: u64,
    pub t: u64,
}

pub const COST_TABLE_HEADER: [&str; 14] = [
    "N", "M", "K", "L", "T", "ap_channel", "ap_combining", "ap_sweep", "ap_iteration", "cpu_statistics",
    "cpu_factorization", "cpu_combining", "cpu_total", "ap_total_iterations",
];

/// Cost table rows; the last column is `iterations · ap_iteration`.
pub fn cost_table(points: &[CostPoint], iterations: u64) -> Result<Vec<Vec<u64>>> {
    points
        .iter()
        .map(|p| {
            let a = ap_cost(p.n, p.m, p.k, p.t)?;
            let c = cpu_cost(p.l, p.k, p.m)?;
            Ok(vec![
                p.n,
                p.m,
                p.k,
                p.l,
                p.t,
                a.channel,
                a.combining,
                a.sweep,
                a.total,
                c.statistics,
                c.factorization,
                c.combining,
                c.total,
                mul(a.total, iterations)?,
            ])
        })
        .collect()
}

pub fn write_cost_table<W: std::io::Write>(out: W, rows: &[Vec<u64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COST_TABLE_HEADER)?;
    for r in rows {
        w.write_record(r.iter().map(u64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cost_table_file(path: &Path, rows: &[Vec<u64>]) -> Result<()> {
    write_cost_table(std::fs::File::create(path)?, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest};

    #[test]
    fn reference_values() {
        let a = ap_cost(256, 16, 8, 4).unwrap();
        assert_eq!(a.channel, 202_768);
        assert_eq!(a.combining, 256);
        let a1 = ap_cost(256, 16, 8, 1).unwrap();
        assert_eq!(a1.channel, 16 * 256 + 512 + 16);
        let c = cpu_cost(16, 8, 16).unwrap();
        assert_eq!(c.statistics, 2688);
        let c1 = cpu_cost(1, 1, 1).unwrap();
        assert_eq!(c1.factorization, 1);
        assert_eq!(c1.combining, 1);
        assert_eq!(c1.statistics, 6);
        assert_eq!(c1.total, 8);
    }

    #[test]
    fn overflow_is_reported() {
        assert!(ap_cost(u64::MAX / 2, 4, 4, 4).is_err());
        assert!(cpu_cost(u64::MAX / 4, 1, 1).is_err());
        assert!(ap_cost(0, 1, 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn components_add_up(n in 1u64..300, m in 1u64..64, k in 1u64..16, t in 1u64..8, l in 1u64..64) {
            let a = ap_cost(n, m, k, t).unwrap();
            prop_assert_eq!(a.total, a.channel + a.combining + a.sweep);
            let per: u64 = a.per_layer.iter().map(|(x, y)| x + y).sum();
            prop_assert_eq!(per, a.sweep);
            let c = cpu_cost(l, k, m).unwrap();
            prop_assert_eq!(c.total, c.statistics + c.factorization + c.combining);
            prop_assert_eq!(c.combining, l);
        }
    }

    #[test]
    fn instrumented_counts_match_formulas() {
        for (n, m, k, t) in [(4, 2, 2, 2), (1, 1, 1, 1), (8, 4, 3, 3), (6, 3, 1, 1)] {
            let measured = instrumented_count(n, m, k, t, 5).unwrap();
            let formula = ap_cost(n as u64, m as u64, k as u64, t as u64).unwrap();
            assert_eq!(measured.channel, formula.channel, "channel at {n},{m},{k},{t}");
            assert_eq!(measured.combining, formula.combining);
            assert_eq!(measured.per_layer, formula.per_layer);
        }
        assert_eq!(instrumented_count(4, 2, 2, 2, 1).unwrap(), instrumented_count(4, 2, 2, 2, 1).unwrap());
        assert!(instrumented_count(16, 2, 2, 2, 1).is_err());
    }

    #[test]
    fn table_csv() {
        let rows = cost_table(&[CostPoint { n: 256, m: 16, k: 8, l: 16, t: 4 }], 10).unwrap();
        let mut buf = Vec::new();
        write_cost_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,M,K,L,T,"));
        assert!(text.lines().nth(1).unwrap().starts_with("256,16,8,16,4,202768,256,"));
    }
}
