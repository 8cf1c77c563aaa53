//! The branching chain with immigration and its sampling primitives.
//!
//! Stream layout used by the backward sampler (and mirrored by
//! [`crate::sre`] so the two can be coupled): for a replica stream `rng`,
//! environments xi_0, xi_1, ... are drawn in order from `rng.split(0)`, and
//! everything belonging to term `i` of the backward sum (the immigration
//! count `B_i` and its thinnings) comes from `rng.split(i + 1)`.

use serde::Serialize;

use crate::env_model::{EnvDraw, EnvSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::family::{ImmigrationFamily, OffspringFamily};
use crate::rng::RngState;

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ChainState {
    pub value: u64,
    pub generation: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StationarySample {
    pub value: u64,
    pub truncation: usize,
}

/// `theta o x`: the total offspring of `x` individuals.
#[inline]
pub fn thin(law: &OffspringFamily, x: u64, rng: &mut RngState) -> Result<u64> {
    law.sample_sum(x, rng)
}

#[inline]
pub fn sample_immigration(law: &ImmigrationFamily, rng: &mut RngState) -> Result<u64> {
    law.sample(rng)
}

/// One generation: thin the current population, then add immigrants.
pub fn step(state: ChainState, draw: &EnvDraw, rng: &mut RngState) -> Result<ChainState> {
    let offspring = thin(&draw.offspring, state.value, rng)?;
    let immigrants = sample_immigration(&draw.immigration, rng)?;
    Ok(ChainState {
        value: offspring.checked_add(immigrants).ok_or(Error::Overflow)?,
        generation: state.generation + 1,
    })
}

/// The trajectory `X_0, ..., X_steps` with a fresh environment each step.
pub fn simulate_forward(
    x0: u64,
    steps: usize,
    env: &EnvSpec,
    rng: &mut RngState,
) -> Result<Vec<ChainState>> {
    let mut path = Vec::with_capacity(steps + 1);
    let mut state = ChainState {
        value: x0,
        generation: 0,
    };
    path.push(state);
    for _ in 0..steps {
        let draw = env.sample(rng);
        state = step(state, &draw, rng)?;
        path.push(state);
    }
    Ok(path)
}

/// Terminal value of [`simulate_forward`] without keeping the path.
pub fn forward_terminal(x0: u64, steps: usize, env: &EnvSpec, rng: &mut RngState) -> Result<u64> {
    let mut state = ChainState {
        value: x0,
        generation: 0,
    };
    for _ in 0..steps {
        let draw = env.sample(rng);
        state = step(state, &draw, rng)?;
    }
    Ok(state.value)
}

/// Smallest `K` with `q^(K+1) / (1 - q) <= epsilon`, `q = E m(xi)^kappa`.
pub fn choose_truncation(model: &ModelSpec, epsilon: f64) -> Result<usize> {
    truncation_for(model.kappa_moment()?, epsilon)
}

pub fn truncation_for(q: f64, epsilon: f64) -> Result<usize> {
    if !(q < 1.0) {
        return Err(Error::NotSubcritical(q));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {epsilon} must be positive"
        )));
    }
    let mut k = 0;
    let mut power = q;
    while power / (1.0 - q) > epsilon {
        k += 1;
        power *= q;
    }
    Ok(k)
}

/// Draws `Theta_{i-1} o B_i` for `i = 0..=k`, sharing environments across
/// terms, and returns their sum. Terms are independent streams, so for a
/// fixed `rng` the result is non-decreasing in `k`.
pub fn sample_stationary_backward(
    model: &ModelSpec,
    k: usize,
    rng: &RngState,
) -> Result<StationarySample> {
    let mut env_rng = rng.split(0);
    let envs: Vec<EnvDraw> = (0..=k).map(|_| model.env.sample(&mut env_rng)).collect();
    let mut total = 0u64;
    for i in 0..=k {
        let mut term_rng = rng.split(i as u64 + 1);
        let v = thin_down(&envs, i, &mut term_rng)?;
        total = total.checked_add(v).ok_or(Error::Overflow)?;
    }
    Ok(StationarySample {
        value: total,
        truncation: k,
    })
}

/// `B_i ~ envs[i].immigration`, thinned through `envs[i-1], ..., envs[0]`.
#[inline]
pub(crate) fn thin_down(envs: &[EnvDraw], i: usize, rng: &mut RngState) -> Result<u64> {
    let mut v = sample_immigration(&envs[i].immigration, rng)?;
    for draw in envs[..i].iter().rev() {
        if v == 0 {
            break;
        }
        v = thin(&draw.offspring, v, rng)?;
    }
    Ok(v)
}

/// `sum_{i=1}^B A_i` with `B ~ b_law` independent of the environment.
pub fn random_sum_sample(
    model: &ModelSpec,
    b_law: &ImmigrationFamily,
    rng: &mut RngState,
) -> Result<u64> {
    let b = sample_immigration(b_law, rng)?;
    let draw = model.env.sample(rng);
    thin(&draw.offspring, b, rng)
}

/// One draw of `Theta_{i-1} o B_i` with fresh environments.
pub fn composed_thinning_sample(model: &ModelSpec, i: usize, rng: &mut RngState) -> Result<u64> {
    let top = model.env.sample(rng);
    let mut v = sample_immigration(&top.immigration, rng)?;
    for _ in 0..i {
        let draw = model.env.sample(rng);
        if v == 0 {
            continue;
        }
        v = thin(&draw.offspring, v, rng)?;
    }
    Ok(v)
}

/// `B + sum_{i=1}^N A_i` with `N ~ n_law` independent of `(xi, B, A)`.
pub fn grey_sum_sample(
    model: &ModelSpec,
    n_law: &ImmigrationFamily,
    rng: &mut RngState,
) -> Result<u64> {
    let n = sample_immigration(n_law, rng)?;
    let draw = model.env.sample(rng);
    let b = sample_immigration(&draw.immigration, rng)?;
    let sum = thin(&draw.offspring, n, rng)?;
    b.checked_add(sum).ok_or(Error::Overflow)
}

/// `Z_n = Theta_{n-1} o 1` for `n = 1..=max_n`: a branching process in a
/// random environment started from one individual, without immigration.
pub fn extinction_path(env: &EnvSpec, max_n: usize, rng: &mut RngState) -> Result<Vec<u64>> {
    let mut z = 1u64;
    let mut path = Vec::with_capacity(max_n);
    for _ in 0..max_n {
        let draw = env.sample(rng);
        z = if z == 0 {
            0
        } else {
            thin(&draw.offspring, z, rng)?
        };
        path.push(z);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::Atom;

    fn poisson_pareto_model() -> ModelSpec {
        let env = EnvSpec::uniform_poisson_atoms(&[0.3, 0.9], ImmigrationFamily::pareto(2.0, 1.0));
        ModelSpec::new(env, 2.0, 0.5).unwrap()
    }

    fn single(offspring: OffspringFamily, immigration: ImmigrationFamily) -> ModelSpec {
        ModelSpec::new(EnvSpec::single(offspring, immigration), 1.0, 0.5).unwrap()
    }

    #[test]
    fn thin_zero_is_zero() {
        let mut rng = RngState::from_seed(1);
        for law in [
            OffspringFamily::Poisson { rate: 3.0 },
            OffspringFamily::Bernoulli { p: 1.0 },
            OffspringFamily::Geometric0 { p: 0.1 },
            OffspringFamily::Binomial { trials: 9, p: 0.9 },
        ] {
            assert_eq!(thin(&law, 0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn thin_overflow_is_reported() {
        let mut rng = RngState::from_seed(1);
        let law = OffspringFamily::Binomial {
            trials: 1 << 40,
            p: 0.5,
        };
        assert_eq!(thin(&law, 1 << 30, &mut rng), Err(Error::Overflow));
        let law = OffspringFamily::Poisson { rate: 1e10 };
        assert_eq!(thin(&law, u64::MAX / 2, &mut rng), Err(Error::Overflow));
    }

    #[test]
    fn bernoulli_thinning_mean() {
        let mut rng = RngState::from_seed(8);
        let (x, p, n) = (17u64, 0.3, 100_000);
        let law = OffspringFamily::Bernoulli { p };
        let mean = (0..n)
            .map(|_| thin(&law, x, &mut rng).unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        let se = (x as f64 * p * (1.0 - p) / n as f64).sqrt();
        assert!((mean - x as f64 * p).abs() < 4.0 * se);
    }

    #[test]
    fn step_examples() {
        let mut rng = RngState::from_seed(2);
        let draw = EnvDraw {
            offspring: OffspringFamily::Poisson { rate: 0.5 },
            immigration: ImmigrationFamily::Constant { b: 3 },
        };
        let s = step(
            ChainState {
                value: 0,
                generation: 4,
            },
            &draw,
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            s,
            ChainState {
                value: 3,
                generation: 5
            }
        );
        let draw = EnvDraw {
            offspring: OffspringFamily::Bernoulli { p: 1.0 },
            immigration: ImmigrationFamily::Constant { b: 0 },
        };
        let s = step(
            ChainState {
                value: 5,
                generation: 0,
            },
            &draw,
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.value, 5);
    }

    #[test]
    fn step_mean_of_large_population() {
        let mut rng = RngState::from_seed(3);
        let draw = EnvDraw {
            offspring: OffspringFamily::Poisson { rate: 0.5 },
            immigration: ImmigrationFamily::Constant { b: 0 },
        };
        let n = 10_000;
        let start = ChainState {
            value: 10_000,
            generation: 0,
        };
        let mean = (0..n)
            .map(|_| step(start, &draw, &mut rng).unwrap().value as f64)
            .sum::<f64>()
            / n as f64;
        let se = (5000.0 / n as f64).sqrt();
        assert!((mean - 5000.0).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn forward_examples() {
        let mut rng = RngState::from_seed(4);
        let env = EnvSpec::single(
            OffspringFamily::Bernoulli { p: 0.0 },
            ImmigrationFamily::Constant { b: 2 },
        );
        assert_eq!(simulate_forward(7, 0, &env, &mut rng).unwrap().len(), 1);
        let path = simulate_forward(7, 5, &env, &mut rng).unwrap();
        assert_eq!(path[0].value, 7);
        assert!(path[1..].iter().all(|s| s.value == 2));
        assert_eq!(path.last().unwrap().generation, 5);
    }

    #[test]
    fn forward_mean_decays_geometrically() {
        // E X_{n+1} = E m * E X_n + E B with E B = 0 here.
        let env = EnvSpec::uniform_poisson_atoms(&[0.3, 0.9], ImmigrationFamily::Constant { b: 0 });
        let root = RngState::from_seed(5);
        let steps = 8;
        let reps = 400;
        let mut sums = vec![0.0; steps + 1];
        for r in 0..reps {
            let path = simulate_forward(1_000_000, steps, &env, &mut root.split(r)).unwrap();
            for (s, st) in sums.iter_mut().zip(&path) {
                *s += st.value as f64;
            }
        }
        let points: Vec<(f64, f64)> = sums
            .iter()
            .enumerate()
            .map(|(n, s)| (n as f64, s / reps as f64))
            .collect();
        let fit = crate::tailstats::fit_geometric_decay(&points).unwrap();
        assert!(
            (fit.rho_hat.ln() / 0.6f64.ln() - 1.0).abs() < 0.05,
            "{fit:?}"
        );
    }

    #[test]
    fn truncation_examples() {
        // 0.45^12 / 0.55 = 1.25e-4 > 1e-4 and 0.45^13 / 0.55 = 5.6e-5.
        assert_eq!(truncation_for(0.45, 1e-4).unwrap(), 12);
        assert_eq!(truncation_for(0.45, 0.999).unwrap(), 0);
        assert_eq!(truncation_for(0.45, 1.0).unwrap(), 0);
        assert_eq!(truncation_for(0.45, 5.0).unwrap(), 0);
        assert_eq!(truncation_for(0.45, 1e-6).unwrap(), 18);
        assert_eq!(truncation_for(0.0, 1e-6).unwrap(), 0);
        assert!(matches!(
            truncation_for(1.2, 1e-3),
            Err(Error::NotSubcritical(_))
        ));
        assert_eq!(
            choose_truncation(&poisson_pareto_model(), 1e-4).unwrap(),
            12
        );
    }

    #[test]
    fn backward_k0_is_immigration() {
        let model = poisson_pareto_model();
        let root = RngState::from_seed(6);
        for r in 0..1000 {
            let rng = root.split(r);
            let s = sample_stationary_backward(&model, 0, &rng).unwrap();
            let mut env_rng = rng.split(0);
            let draw = model.env.sample(&mut env_rng);
            let b = draw.immigration.sample(&mut rng.split(1)).unwrap();
            assert_eq!(s.value, b);
            assert_eq!(s.truncation, 0);
        }
    }

    #[test]
    fn backward_with_extinct_offspring_is_b0() {
        let model = single(
            OffspringFamily::Bernoulli { p: 0.0 },
            ImmigrationFamily::pareto(1.5, 1.0),
        );
        let root = RngState::from_seed(7);
        for r in 0..200 {
            let rng = root.split(r);
            let k0 = sample_stationary_backward(&model, 0, &rng).unwrap().value;
            let k9 = sample_stationary_backward(&model, 9, &rng).unwrap().value;
            assert_eq!(k0, k9);
        }
    }

    #[test]
    fn backward_is_monotone_in_k() {
        let model = poisson_pareto_model();
        let root = RngState::from_seed(9);
        for r in 0..500 {
            let rng = root.split(r);
            let mut prev = 0;
            for k in 0..12 {
                let v = sample_stationary_backward(&model, k, &rng).unwrap().value;
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn lemma_samplers_degenerate_cases() {
        let model = poisson_pareto_model();
        let mut rng = RngState::from_seed(10);
        let zero = ImmigrationFamily::Constant { b: 0 };
        for _ in 0..100 {
            assert_eq!(random_sum_sample(&model, &zero, &mut rng).unwrap(), 0);
        }
        let identity = single(
            OffspringFamily::Bernoulli { p: 1.0 },
            ImmigrationFamily::pareto(2.0, 1.0),
        );
        let root = RngState::from_seed(11);
        for r in 0..100 {
            // Identity thinning: every i gives the first immigration draw.
            let b = composed_thinning_sample(&identity, 0, &mut root.split(r)).unwrap();
            for i in 1..5 {
                assert_eq!(
                    composed_thinning_sample(&identity, i, &mut root.split(r)).unwrap(),
                    b
                );
            }
        }
        let extinct = single(
            OffspringFamily::Bernoulli { p: 0.0 },
            ImmigrationFamily::Constant { b: 4 },
        );
        let n_law = ImmigrationFamily::pareto(2.0, 2.0);
        for _ in 0..100 {
            assert_eq!(grey_sum_sample(&extinct, &n_law, &mut rng).unwrap(), 4);
            assert!(grey_sum_sample(&model, &zero, &mut rng).unwrap() >= 1);
        }
    }

    #[test]
    fn random_sum_with_unit_b_is_one_offspring() {
        let model = single(
            OffspringFamily::Poisson { rate: 0.7 },
            ImmigrationFamily::Constant { b: 0 },
        );
        let mut rng = RngState::from_seed(12);
        let n = 200_000;
        let one = ImmigrationFamily::Constant { b: 1 };
        let mean = (0..n)
            .map(|_| random_sum_sample(&model, &one, &mut rng).unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.7).abs() < 4.0 * (0.7 / n as f64).sqrt());
    }

    #[test]
    fn atom_coupling_is_preserved() {
        // Immigration only in the atom without offspring: X_1 from 0 is 0 or 5.
        let env = EnvSpec::atoms(vec![
            Atom {
                weight: 0.5,
                offspring: OffspringFamily::Bernoulli { p: 0.0 },
                immigration: ImmigrationFamily::Constant { b: 5 },
            },
            Atom {
                weight: 0.5,
                offspring: OffspringFamily::Bernoulli { p: 1.0 },
                immigration: ImmigrationFamily::Constant { b: 0 },
            },
        ])
        .unwrap();
        let mut rng = RngState::from_seed(13);
        for _ in 0..100 {
            let v = forward_terminal(3, 1, &env, &mut rng).unwrap();
            assert!(v == 5 || v == 3);
        }
    }

    #[test]
    fn extinction_path_is_absorbing() {
        let env = EnvSpec::single(
            OffspringFamily::Poisson { rate: 0.5 },
            ImmigrationFamily::Constant { b: 0 },
        );
        let mut rng = RngState::from_seed(14);
        for _ in 0..1000 {
            let p = extinction_path(&env, 10, &mut rng).unwrap();
            if let Some(first_zero) = p.iter().position(|&z| z == 0) {
                assert!(p[first_zero..].iter().all(|&z| z == 0));
            }
        }
    }
}
