//! The affine recursion `Y_{n+1} = C_{n+1} Y_n + D_{n+1}` with `C = m(xi)`
//! and `D = B`, run on the same environment and immigration draws as the
//! backward branching sampler.

use serde::Serialize;

use crate::env_model::{EnvDraw, ModelSpec};
use crate::error::Result;
use crate::rng::RngState;
use crate::simulator::{sample_immigration, thin};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SreState {
    pub value: f64,
    pub generation: u64,
}

pub fn sre_step(state: SreState, c: f64, d: f64) -> SreState {
    SreState {
        value: c * state.value + d,
        generation: state.generation + 1,
    }
}

/// `sum_{i=0}^{k} Pi_{i-1} B_i` with `Pi_{-1} = 1`.
///
/// Uses the backward sampler's stream layout, so for the same `rng` the
/// immigration counts `B_i` coincide with those of
/// [`crate::simulator::sample_stationary_backward`].
pub fn sample_perpetuity(model: &ModelSpec, k: usize, rng: &RngState) -> Result<f64> {
    let mut env_rng = rng.split(0);
    let mut product = 1.0;
    let mut total = 0.0;
    for i in 0..=k {
        let draw = model.env.sample(&mut env_rng);
        let b = sample_immigration(&draw.immigration, &mut rng.split(i as u64 + 1))?;
        total += product * b as f64;
        product *= draw.offspring.mean();
    }
    Ok(total)
}

/// `Theta_{i-1} o B_i - Pi_{i-1} B_i` on one set of draws.
pub fn coupled_gap_sample(model: &ModelSpec, i: usize, rng: &RngState) -> Result<f64> {
    let mut env_rng = rng.split(0);
    let envs: Vec<EnvDraw> = (0..=i).map(|_| model.env.sample(&mut env_rng)).collect();
    let mut term_rng = rng.split(i as u64 + 1);
    let b = sample_immigration(&envs[i].immigration, &mut term_rng)?;
    let mut v = b;
    let mut product = 1.0;
    for draw in envs[..i].iter().rev() {
        product *= draw.offspring.mean();
        if v > 0 {
            v = thin(&draw.offspring, v, &mut term_rng)?;
        }
    }
    Ok(v as f64 - product * b as f64)
}
