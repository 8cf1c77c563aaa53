//! Exact small-instance ground truth for the Monte Carlo machinery.
//!
//! Everything here works from single-draw pmfs and iterated convolution;
//! nothing reuses the closed-form convolution laws the samplers rely on.

use serde::Serialize;

use crate::env_model::EnvSpec;
use crate::error::{Error, Result};
use crate::family::{ImmigrationFamily, OffspringFamily};

pub const MAX_STATES: usize = 4096;
pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// pmf entries below this are treated as zero when trimming supports.
const NEGLIGIBLE: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedKernel {
    pub n_max: usize,
    /// Row-major `(n_max + 1)^2` transition matrix.
    pub p: Vec<f64>,
    /// Largest probability, over starting states, of jumping above `n_max`
    /// (that mass is routed to state `n_max`).
    pub mass_clip: f64,
}

impl TruncatedKernel {
    pub fn states(&self) -> usize {
        self.n_max + 1
    }

    pub fn row(&self, x: usize) -> &[f64] {
        let s = self.states();
        &self.p[x * s..(x + 1) * s]
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.row(x)[y]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactDistribution {
    pub pmf: Vec<f64>,
    /// Mass sitting on the cap state; bounds the truncation error.
    pub residual: f64,
    pub sweeps: usize,
}

/// `a * b` restricted to `{0, ..., len-1}`.
fn convolve_truncated(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &ai) in a.iter().enumerate().take(len) {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate().take(len - i) {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn trimmed(mut pmf: Vec<f64>) -> Vec<f64> {
    while pmf.len() > 1 && pmf.last().is_some_and(|&p| p < NEGLIGIBLE) {
        pmf.pop();
    }
    pmf
}

fn atoms_of(env: &EnvSpec) -> Result<Vec<(f64, OffspringFamily, ImmigrationFamily)>> {
    match env {
        EnvSpec::Atoms(atoms) => Ok(atoms
            .iter()
            .map(|a| (a.weight, a.offspring, a.immigration))
            .collect()),
        EnvSpec::UniformPoissonRate { .. } => Err(Error::PmfUnavailable),
    }
}

pub fn build_kernel(env: &EnvSpec, n_max: usize) -> Result<TruncatedKernel> {
    if n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    if n_max + 1 > MAX_STATES {
        return Err(Error::InvalidParameter(format!(
            "n_max = {n_max} exceeds the dense oracle limit of {} states",
            MAX_STATES
        )));
    }
    let atoms = atoms_of(env)?;
    let s = n_max + 1;
    let mut p = vec![0.0; s * s];
    let mut mass_clip: f64 = 0.0;
    for (w, offspring, immigration) in atoms {
        let off = trimmed(offspring.pmf_vec(s));
        let imm = trimmed(immigration.pmf_vec(s));
        // x-fold offspring sum, built up one convolution per state.
        let mut fold = vec![1.0];
        for x in 0..s {
            let mut row = convolve_truncated(&fold, &imm, s);
            let below: f64 = row[..n_max].iter().sum();
            let capped = (1.0 - below).max(0.0);
            mass_clip = mass_clip.max(capped - row[n_max]);
            row[n_max] = capped;
            for (dst, v) in p[x * s..(x + 1) * s].iter_mut().zip(&row) {
                *dst += w * v;
            }
            if x + 1 < s {
                fold = convolve_truncated(&fold, &off, s);
            }
        }
    }
    Ok(TruncatedKernel {
        n_max,
        p,
        mass_clip: mass_clip.max(0.0),
    })
}

/// Left fixed vector of the kernel, iterating `pi <- pi P` from `delta_0`
/// until the sweep-to-sweep total variation drops below `tol`.
pub fn stationary_power_iteration(
    kernel: &TruncatedKernel,
    tol: f64,
    max_iter: usize,
) -> Result<ExactDistribution> {
    let s = kernel.states();
    let mut pi = vec![0.0; s];
    pi[0] = 1.0;
    let mut next = vec![0.0; s];
    for sweep in 1..=max_iter {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (x, &px) in pi.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            for (dst, &k) in next.iter_mut().zip(kernel.row(x)) {
                *dst += px * k;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let tv = 0.5
            * pi.iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        std::mem::swap(&mut pi, &mut next);
        if tv < tol {
            let residual = pi[s - 1];
            return Ok(ExactDistribution {
                pmf: pi,
                residual,
                sweeps: sweep,
            });
        }
    }
    Err(Error::NoConvergence(max_iter))
}

/// `|| pi P - pi ||_1`.
pub fn stationarity_defect(kernel: &TruncatedKernel, pi: &[f64]) -> f64 {
    let s = kernel.states();
    let mut next = vec![0.0; s];
    for (x, &px) in pi.iter().enumerate() {
        for (dst, &k) in next.iter_mut().zip(kernel.row(x)) {
            *dst += px * k;
        }
    }
    next.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum()
}

/// `P(sum_{i=1}^B A_i > x)` with `B ~ b_law` independent of the environment,
/// by iterated convolution over `b = 0..=cap`.
pub fn brute_force_random_sum_tail(
    env: &EnvSpec,
    b_law: &ImmigrationFamily,
    x: u64,
    cap: u64,
) -> Result<f64> {
    let residual = b_law.survival(cap as f64);
    if residual >= 1e-12 {
        return Err(Error::ResidualTooLarge(residual));
    }
    let len = x as usize + 1;
    let mut total = 0.0;
    for (w, offspring, _) in atoms_of(env)? {
        let off = trimmed(offspring.pmf_vec(len));
        let mut fold = vec![1.0];
        let mut tail = 0.0;
        for b in 0..=cap {
            let pb = b_law.pmf(b);
            if pb > 0.0 {
                let at_most_x: f64 = fold.iter().take(len).sum();
                tail += pb * (1.0 - at_most_x).max(0.0);
            }
            fold = convolve_truncated(&fold, &off, len);
        }
        total += w * tail;
    }
    Ok(total)
}

/// `prod_{k>=1} (1 - 2^-k)`, accurate to well below 1e-15.
pub fn half_product() -> f64 {
    (1..=80).map(|k| 1.0 - 0.5f64.powi(k)).product()
}
