//! Cost accounting for the adaptive convolutions: closed-form MAC counts,
//! wall-clock medians and the receptive-field sweep.
//!
//! MACs count filter-tap multiplies only; bias additions and activations
//! are excluded.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::adaptive::{fac_forward, filter_map_channels, iac_forward, receptive_field, DenseFilterMap, FilterMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const MAC_FOOTER: &str = "MACs count filter-tap multiplies; bias additions and activations are excluded.";

/// `h * w * c * k^2`.
pub fn macs_fac(h: usize, w: usize, c: usize, k: usize) -> u64 {
    (h * w * c * k * k) as u64
}

/// `h * w * c * n * 2k`: a vertical and a horizontal k-tap pass per set.
pub fn macs_iac(h: usize, w: usize, c: usize, n: usize, k: usize) -> u64 {
    (h * w * c * n * 2 * k) as u64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub op: &'static str,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    /// Filter sets (1 for FAC).
    pub n: usize,
    pub k: usize,
    pub macs: u64,
    /// Filter-map values predicted per pixel.
    pub params: usize,
    pub wall_ns_per_call: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
}

/// Median nanoseconds per call over `reps` timed calls after one warm-up.
fn time_median(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_nanos() as f64);
    }
    Ok(median(samples))
}

/// Run `f` on a single worker so medians are not affected by scheduling.
fn single_lane<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}

/// Time `iac_forward` (n sets of length `k_iac`) against `fac_forward`
/// (`k_fac` x `k_fac`) on the same random features.
pub fn bench_pair(
    h: usize,
    w: usize,
    c: usize,
    n: usize,
    k_iac: usize,
    k_fac: usize,
    reps: usize,
    seed: u64,
) -> Result<(CostReport, CostReport)> {
    if reps < 10 {
        return Err(Error::Contract(format!("bench_pair needs reps >= 10, got {reps}")));
    }
    receptive_field(n, k_iac)?;
    receptive_field(1, k_fac)?;
    let e = Tensor4::rand_uniform((1, c, h, w), -1.0, 1.0, seed);
    let fi = Tensor4::rand_uniform((1, filter_map_channels(n, c, k_iac), h, w), -0.5, 0.5, seed + 1);
    let fd = Tensor4::rand_uniform((1, c * k_fac * k_fac, h, w), -0.5, 0.5, seed + 2);
    let fm = FilterMap::new(fi, n, k_iac, c)?;
    let dm = DenseFilterMap::new(fd, k_fac, c)?;
    let (t_iac, t_fac) = single_lane(|| -> Result<(f64, f64)> {
        let a = time_median(reps, || iac_forward(&e, &fm, 0.1).map(|_| ()))?;
        let b = time_median(reps, || fac_forward(&e, &dm).map(|_| ()))?;
        Ok((a, b))
    })?;
    Ok((
        CostReport {
            op: "iac",
            h,
            w,
            c,
            n,
            k: k_iac,
            macs: macs_iac(h, w, c, n, k_iac),
            params: filter_map_channels(n, c, k_iac),
            wall_ns_per_call: t_iac,
        },
        CostReport {
            op: "fac",
            h,
            w,
            c,
            n: 1,
            k: k_fac,
            macs: macs_fac(h, w, c, k_fac),
            params: c * k_fac * k_fac,
            wall_ns_per_call: t_fac,
        },
    ))
}

/// Aligned table of a [`bench_pair`] result with analytic and measured ratios.
pub fn pair_table(iac: &CostReport, fac: &CostReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<4} {:>5} {:>5} {:>4} {:>4} {:>3} {:>14} {:>8} {:>14}", "op", "h", "w", "c", "N", "k", "MACs", "params", "median ns");
    for r in [iac, fac] {
        let _ = writeln!(
            s,
            "{:<4} {:>5} {:>5} {:>4} {:>4} {:>3} {:>14} {:>8} {:>14.0}",
            r.op, r.h, r.w, r.c, r.n, r.k, r.macs, r.params, r.wall_ns_per_call
        );
    }
    let _ = writeln!(
        s,
        "MAC ratio iac/fac = {:.4}   time ratio iac/fac = {:.4}",
        iac.macs as f64 / fac.macs as f64,
        iac.wall_ns_per_call / fac.wall_ns_per_call
    );
    let _ = writeln!(s, "{MAC_FOOTER}");
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RfRow {
    pub n: usize,
    pub rf: usize,
    pub macs: u64,
}

/// Receptive field and MACs of IAC for each filter-set count on an
/// (h, w, c) feature map.
pub fn rf_sweep(ns: &[usize], k: usize, h: usize, w: usize, c: usize) -> Result<Vec<RfRow>> {
    ns.iter()
        .map(|&n| {
            Ok(RfRow {
                n,
                rf: receptive_field(n, k)?,
                macs: macs_iac(h, w, c, n, k),
            })
        })
        .collect()
}

pub fn rf_table(rows: &[RfRow]) -> String {
    let mut s = format!("{:>4} {:>4} {:>14}\n", "N", "RF", "MACs");
    for r in rows {
        let _ = writeln!(s, "{:>4} {:>4} {:>14}", r.n, r.rf, r.macs);
    }
    s.push_str(MAC_FOOTER);
    s.push('\n');
    s
}

pub fn rf_csv(rows: &[RfRow]) -> String {
    let mut s = String::from("n,rf,macs\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.n, r.rf, r.macs);
    }
    s
}

pub fn pair_csv(iac: &CostReport, fac: &CostReport) -> String {
    let mut s = String::from("op,h,w,c,n,k,macs,params,wall_ns_per_call\n");
    for r in [iac, fac] {
        let _ = writeln!(s, "{},{},{},{},{},{},{},{},{}", r.op, r.h, r.w, r.c, r.n, r.k, r.macs, r.params, r.wall_ns_per_call);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(macs_fac(10, 10, 4, 11), 48_400);
        assert_eq!(macs_iac(10, 10, 4, 17, 3), 40_800);
        assert_eq!(macs_iac(8, 8, 2, 17, 3) * 121, macs_fac(8, 8, 2, 11) * 102);
    }

    #[test]
    fn sweep_rows() {
        let rows = rf_sweep(&[8, 17, 26, 35, 44], 3, 8, 8, 16).unwrap();
        let rf: Vec<usize> = rows.iter().map(|r| r.rf).collect();
        assert_eq!(rf, vec![17, 35, 53, 71, 89]);
        assert!(rows.windows(2).all(|w| w[0].macs < w[1].macs));
        assert_eq!(rf_sweep(&[1], 3, 4, 4, 1).unwrap()[0].rf, 3);
        assert!(rf_sweep(&[0], 3, 4, 4, 1).is_err());
        assert!(rf_csv(&rows).starts_with("n,rf,macs\n8,17,"));
    }

    #[test]
    fn pair_reports() {
        let (a, b) = bench_pair(8, 8, 2, 2, 3, 5, 10, 1).unwrap();
        assert_eq!((a.h, a.w, a.c, a.n, a.k), (8, 8, 2, 2, 3));
        assert_eq!(b.k, 5);
        for r in [&a, &b] {
            assert!(r.wall_ns_per_call.is_finite() && r.wall_ns_per_call > 0.0);
        }
        assert!(pair_table(&a, &b).contains("MAC ratio"));
        assert!(bench_pair(8, 8, 2, 2, 3, 5, 9, 1).is_err());
    }
}
