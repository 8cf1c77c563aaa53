//! Finite-sample tail statistics: empirical survival and tail ratios with
//! binomial standard errors, Hill estimates, geometric decay fits, and the
//! two distances (Kolmogorov-Smirnov, total variation) used for
//! distributional cross-checks.

use serde::Serialize;

use crate::error::{Error, Result};

/// Samples sorted ascending. A censored sample keeps only values above
/// `floor` but remembers the total count `n`, which is all that survival
/// estimates at thresholds `x >= floor` need.
#[derive(Clone, Debug, PartialEq)]
pub struct SortedSample {
    values: Vec<f64>,
    n: u64,
    floor: f64,
}

impl SortedSample {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        let n = values.len() as u64;
        Self {
            values,
            n,
            floor: f64::NEG_INFINITY,
        }
    }

    pub fn from_counts(values: &[u64]) -> Self {
        Self::new(values.iter().map(|&v| v as f64).collect())
    }

    /// `values` must contain every draw strictly above `floor` out of `n`.
    pub fn censored(mut values: Vec<f64>, n: u64, floor: f64) -> Result<Self> {
        if values.len() as u64 > n || values.iter().any(|&v| v <= floor) {
            return Err(Error::InvalidParameter(
                "censored sample is inconsistent".into(),
            ));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values, n, floor })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// `#{s > x}`.
    pub fn count_above(&self, x: f64) -> Result<u64> {
        if x < self.floor {
            return Err(Error::InvalidParameter(format!(
                "threshold {x} lies below the censoring floor {}",
                self.floor
            )));
        }
        Ok((self.values.len() - self.values.partition_point(|&v| v <= x)) as u64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TailReport {
    pub x_grid: Vec<f64>,
    pub survival: Vec<f64>,
    pub se: Vec<f64>,
    /// Empty unless produced by [`tail_ratio`].
    pub ratio: Vec<f64>,
    pub ratio_se: Vec<f64>,
    pub n: u64,
}

pub fn empirical_tail(sample: &SortedSample, x_grid: &[f64]) -> Result<TailReport> {
    if sample.n == 0 {
        return Err(Error::EmptyInput);
    }
    if x_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter(
            "x grid must be strictly increasing".into(),
        ));
    }
    let n = sample.n as f64;
    let mut report = TailReport {
        x_grid: x_grid.to_vec(),
        n: sample.n,
        ..Default::default()
    };
    for &x in x_grid {
        let p = sample.count_above(x)? as f64 / n;
        report.survival.push(p);
        report.se.push((p * (1.0 - p) / n).sqrt());
    }
    Ok(report)
}

/// Empirical survival divided by an exact reference survival. The reference
/// carries no sampling noise, so `ratio_se = se / S_ref(x)`.
pub fn tail_ratio(
    sample: &SortedSample,
    reference: impl Fn(f64) -> f64,
    x_grid: &[f64],
) -> Result<TailReport> {
    let mut report = empirical_tail(sample, x_grid)?;
    for (j, &x) in x_grid.iter().enumerate() {
        let s = reference(x);
        if !(s > f64::MIN_POSITIVE) {
            return Err(Error::ReferenceVanishes(x));
        }
        report.ratio.push(report.survival[j] / s);
        report.ratio_se.push(report.se[j] / s);
    }
    Ok(report)
}

/// For each level, the smallest integer `x >= 0` with `S(x) <= level`.
/// `S` must be non-increasing.
pub fn grid_for_levels(reference: impl Fn(f64) -> f64, levels: &[f64]) -> Result<Vec<f64>> {
    levels
        .iter()
        .map(|&level| {
            if reference(0.0) <= level {
                return Ok(0.0);
            }
            let mut lo = 0u64;
            let mut hi = 1u64;
            while reference(hi as f64) > level {
                lo = hi;
                hi = hi
                    .checked_mul(2)
                    .filter(|h| *h < 1 << 60)
                    .ok_or(Error::ReferenceVanishes(level))?;
            }
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if reference(mid as f64) > level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(hi as f64)
        })
        .collect()
}

/// Expected exceedance count at which the binomial relative standard
/// error at a level drops to 10%.
pub const RELIABLE_EXCEEDANCES: f64 = 100.0;

/// Whether `n` draws put enough mass above `level` to estimate it.
pub fn level_is_reliable(level: f64, n: u64) -> bool {
    level * n as f64 >= RELIABLE_EXCEEDANCES
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HillEstimate {
    pub k: usize,
    pub kappa_hat: f64,
    pub ci95: f64,
}

/// Hill estimator from the top `k` order statistics of `sample`, after
/// adding `shift` to every value (use 0.5 for integer-valued draws).
pub fn hill_estimate(sample: &SortedSample, k: usize, shift: f64) -> Result<HillEstimate> {
    let v = sample.values();
    if k < 2 || k as u64 >= sample.n {
        return Err(Error::InvalidParameter(format!(
            "hill k = {k} outside [2, n)"
        )));
    }
    if k + 1 > v.len() {
        return Err(Error::InvalidParameter(format!(
            "hill k = {k} needs more order statistics than the censored sample keeps"
        )));
    }
    let top = &v[v.len() - k..];
    let threshold = v[v.len() - k - 1] + shift;
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(
            "hill threshold must be positive".into(),
        ));
    }
    if v[v.len() - 1] + shift == threshold {
        return Err(Error::DegenerateOrderStats);
    }
    let log_sum: f64 = top.iter().map(|&s| ((s + shift) / threshold).ln()).sum();
    let kappa_hat = k as f64 / log_sum;
    Ok(HillEstimate {
        k,
        kappa_hat,
        ci95: 1.96 * kappa_hat / (k as f64).sqrt(),
    })
}

pub fn default_hill_k(n: u64) -> usize {
    // Guard against cbrt rounding just below an exact cube.
    let k = ((n as f64).powf(2.0 / 3.0) + 1e-9).floor() as usize;
    k.min(n.saturating_sub(1) as usize)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HillReport {
    pub k_grid: Vec<usize>,
    pub estimate: Vec<f64>,
    pub ci95: Vec<f64>,
}

/// Hill estimates on a log-spaced grid of `k` up to `k_max`.
pub fn hill_plot(sample: &SortedSample, k_max: usize, shift: f64) -> Result<HillReport> {
    let mut k_grid: Vec<usize> = Vec::new();
    let mut k = 10.0f64;
    while (k as usize) < k_max {
        k_grid.push(k as usize);
        k *= 1.25;
    }
    k_grid.push(k_max);
    k_grid.dedup();
    let mut report = HillReport::default();
    for k in k_grid {
        let h = match hill_estimate(sample, k, shift) {
            Ok(h) => h,
            Err(Error::DegenerateOrderStats) => continue,
            Err(e) => return Err(e),
        };
        report.k_grid.push(k);
        report.estimate.push(h.kappa_hat);
        report.ci95.push(h.ci95);
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub rho_hat: f64,
    pub r2: f64,
    pub intercept: f64,
}

/// Least squares of `ln v` on `n`; `rho_hat = exp(slope)`.
pub fn fit_geometric_decay(points: &[(f64, f64)]) -> Result<DecayFit> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(
            "decay fit needs at least 3 points".into(),
        ));
    }
    if let Some((index, &(_, value))) = points.iter().enumerate().find(|(_, p)| !(p.1 > 0.0)) {
        return Err(Error::NonPositiveValue { index, value });
    }
    let m = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = points.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, v) in points {
        let (dx, dy) = (x - mean_x, v.ln() - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(DecayFit {
        rho_hat: slope.exp(),
        r2,
        intercept: (mean_y - slope * mean_x).exp(),
    })
}

/// Two-sample Kolmogorov-Smirnov statistic of two ascending samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        // Step past every copy of the smallest pending value in both samples.
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// Asymptotic critical value `c(alpha) sqrt((n + m) / (n m))`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

/// Pmf over `{0, ..., len-1}` with values `>= len-1` folded into the last cell.
pub fn empirical_pmf(values: &[u64], len: usize) -> Vec<f64> {
    let mut pmf = vec![0.0; len];
    let last = len as u64 - 1;
    for &v in values {
        pmf[v.min(last) as usize] += 1.0;
    }
    let n = values.len() as f64;
    pmf.iter_mut().for_each(|p| *p /= n);
    pmf
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..len).map(|i| (at(p, i) - at(q, i)).abs()).sum::<f64>()
}
