//! Wall-clock comparison of `xqda_fit` and `kxqda_fit`.

use std::time::Instant;

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataset::{CrossViewDataset, ViewMatrix};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::kxqda::{kxqda_fit, KxqdaOptions};
use crate::rng;
use crate::xqda::{xqda_fit, XqdaOptions};

/// Random Gaussian data with `n = m = total/2` and two samples per class
/// per view (one when a view has fewer than two samples per class).
pub fn bench_dataset(dim: usize, total: usize, seed: u64) -> Result<CrossViewDataset> {
    if total < 4 || dim == 0 {
        return Err(Error::Config(format!("bench cell needs dim >= 1 and n+m >= 4, got d={dim}, n+m={total}")));
    }
    let n = total / 2;
    let m = total - n;
    let classes = (n / 2).max(2);
    let mut r = rng::stream(seed, "bench/data", (dim as u64) << 32 | total as u64);
    let mut sample = |len: usize| Mat::from_fn(dim, len, |_, _| r.sample::<f64, _>(StandardNormal));
    let x = ViewMatrix::from_mat(sample(n))?;
    let z = ViewMatrix::from_mat(sample(m))?;
    let lx = (0..n).map(|i| i % classes + 1).collect();
    let lz = (0..m).map(|i| i % classes + 1).collect();
    CrossViewDataset::new(x, z, lx, lz)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

/// Median of `reps` timed calls, or the first error.
pub fn time_median<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut t = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let clock = Instant::now();
        f()?;
        t.push(clock.elapsed().as_secs_f64());
    }
    Ok(median(&mut t))
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchCell {
    pub dim: usize,
    pub n: usize,
    pub m: usize,
    pub reps: usize,
    pub xqda_secs: Option<f64>,
    pub kxqda_secs: Option<f64>,
    /// `xqda_secs / kxqda_secs`
    pub ratio: Option<f64>,
    pub xqda_error: Option<String>,
    pub kxqda_error: Option<String>,
}

impl BenchCell {
    pub fn kxqda_faster(&self) -> Option<bool> {
        match (self.xqda_secs, self.kxqda_secs) {
            (Some(x), Some(k)) => Some(k < x),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub seed: u64,
    pub kernel: KernelSpec,
    pub cells: Vec<BenchCell>,
}

/// Times both fits for every `(dim, n+m)` pair with a linear kernel.
pub fn run_bench(dims: &[usize], totals: &[usize], reps: usize, seed: u64) -> Result<BenchReport> {
    let kernel = KernelSpec::Linear;
    let mut cells = Vec::new();
    for &dim in dims {
        for &total in totals {
            let ds = bench_dataset(dim, total, seed)?;
            log::info!("bench d={dim} n+m={total}");
            let k = time_median(reps, || kxqda_fit(&ds, &kernel, &KxqdaOptions::default()));
            let x = time_median(reps, || xqda_fit(&ds, &XqdaOptions::default()));
            let (kxqda_secs, kxqda_error) = split(k);
            let (xqda_secs, xqda_error) = split(x);
            cells.push(BenchCell {
                dim,
                n: ds.n(),
                m: ds.m(),
                reps,
                ratio: xqda_secs.zip(kxqda_secs).map(|(x, k)| x / k),
                xqda_secs,
                kxqda_secs,
                xqda_error,
                kxqda_error,
            });
        }
    }
    Ok(BenchReport { seed, kernel, cells })
}

fn split(r: Result<f64>) -> (Option<f64>, Option<String>) {
    match r {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    }
}
