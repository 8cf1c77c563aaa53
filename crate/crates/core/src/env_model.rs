//! The random environment: a law over pairs (offspring law, immigration law),
//! its moment functionals, and the standing-assumption check.

use std::cell::RefCell;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::{ImmigrationFamily, OffspringFamily};
use crate::quad::integrate;
use crate::rng::RngState;

pub const DEFAULT_TOL: f64 = 1e-10;

/// One realised environment xi_n.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvDraw {
    pub offspring: OffspringFamily,
    pub immigration: ImmigrationFamily,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Atom {
    pub weight: f64,
    pub offspring: OffspringFamily,
    pub immigration: ImmigrationFamily,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvSpec {
    /// Finitely many environments; offspring and immigration are coupled
    /// within an atom.
    Atoms(Vec<Atom>),
    /// Poisson offspring with rate uniform on `[lo, hi]`.
    UniformPoissonRate {
        lo: f64,
        hi: f64,
        immigration: ImmigrationFamily,
    },
}

impl EnvSpec {
    pub fn atoms(atoms: Vec<Atom>) -> Result<Self> {
        let spec = Self::Atoms(atoms);
        spec.validate()?;
        Ok(spec)
    }

    /// A deterministic environment.
    pub fn single(offspring: OffspringFamily, immigration: ImmigrationFamily) -> Self {
        Self::Atoms(vec![Atom {
            weight: 1.0,
            offspring,
            immigration,
        }])
    }

    /// Equal-weight atoms sharing one immigration law.
    pub fn uniform_poisson_atoms(rates: &[f64], immigration: ImmigrationFamily) -> Self {
        let w = 1.0 / rates.len() as f64;
        Self::Atoms(
            rates
                .iter()
                .map(|&rate| Atom {
                    weight: w,
                    offspring: OffspringFamily::Poisson { rate },
                    immigration,
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Atoms(atoms) => {
                if atoms.is_empty() {
                    return Err(Error::InvalidParameter("environment has no atoms".into()));
                }
                let mut total = 0.0;
                for a in atoms {
                    if !(a.weight > 0.0 && a.weight.is_finite()) {
                        return Err(Error::InvalidParameter(format!(
                            "atom weight {} must be positive",
                            a.weight
                        )));
                    }
                    a.offspring.validate()?;
                    a.immigration.validate()?;
                    total += a.weight;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "atom weights sum to {total}, not 1"
                    )));
                }
                Ok(())
            }
            Self::UniformPoissonRate {
                lo,
                hi,
                immigration,
            } => {
                if !(*lo >= 0.0 && hi > lo && hi.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "uniform rate bounds [{lo}, {hi}]"
                    )));
                }
                immigration.validate()
            }
        }
    }

    /// Draws one environment: atom `j` with probability `w_j`, or the
    /// continuous rate by inversion.
    pub fn sample(&self, rng: &mut RngState) -> EnvDraw {
        match self {
            Self::Atoms(atoms) => {
                let last = atoms.len() - 1;
                if last == 0 {
                    let a = &atoms[0];
                    return EnvDraw {
                        offspring: a.offspring,
                        immigration: a.immigration,
                    };
                }
                let u = rng.open01();
                let mut acc = 0.0;
                for a in &atoms[..last] {
                    acc += a.weight;
                    if u < acc {
                        return EnvDraw {
                            offspring: a.offspring,
                            immigration: a.immigration,
                        };
                    }
                }
                let a = &atoms[last];
                EnvDraw {
                    offspring: a.offspring,
                    immigration: a.immigration,
                }
            }
            Self::UniformPoissonRate {
                lo,
                hi,
                immigration,
            } => EnvDraw {
                offspring: OffspringFamily::Poisson {
                    rate: lo + rng.open01() * (hi - lo),
                },
                immigration: *immigration,
            },
        }
    }

    /// Marginal survival of the immigration count, `sum_j w_j S_j(x)`.
    pub fn immigration_survival(&self, x: f64) -> f64 {
        match self {
            Self::Atoms(atoms) => atoms
                .iter()
                .map(|a| a.weight * a.immigration.survival(x))
                .sum(),
            Self::UniformPoissonRate { immigration, .. } => immigration.survival(x),
        }
    }

    /// The common immigration law, if every environment uses the same one.
    pub fn shared_immigration(&self) -> Option<ImmigrationFamily> {
        match self {
            Self::Atoms(atoms) => {
                let first = atoms.first()?.immigration;
                atoms
                    .iter()
                    .all(|a| a.immigration == first)
                    .then_some(first)
            }
            Self::UniformPoissonRate { immigration, .. } => Some(*immigration),
        }
    }

    /// E m(xi)^kappa.
    pub fn kappa_moment(&self, kappa: f64, tol: f64) -> Result<f64> {
        self.expect_over_means(|m| pow_moment(m, kappa), tol)
    }

    /// E m(xi).
    pub fn mean_moment(&self) -> f64 {
        match self {
            Self::Atoms(atoms) => atoms.iter().map(|a| a.weight * a.offspring.mean()).sum(),
            Self::UniformPoissonRate { lo, hi, .. } => 0.5 * (lo + hi),
        }
    }

    /// E log m(xi); `-inf` when some environment has zero mean.
    pub fn log_mean(&self) -> f64 {
        match self {
            Self::Atoms(atoms) => atoms
                .iter()
                .map(|a| a.weight * a.offspring.mean().ln())
                .sum(),
            Self::UniformPoissonRate { lo, hi, .. } => {
                let xlogx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() - x };
                (xlogx(*hi) - xlogx(*lo)) / (hi - lo)
            }
        }
    }

    /// E over the environment of E[A^order | xi].
    pub fn moment_a(&self, order: f64, tol: f64) -> Result<f64> {
        match self {
            Self::Atoms(atoms) => atoms.iter().try_fold(0.0, |acc, a| {
                Ok(acc + a.weight * a.offspring.moment(order, tol)?)
            }),
            Self::UniformPoissonRate { lo, hi, .. } => {
                // Inner series errors are tolerated at tol/10; the quadrature gets the rest.
                let inner_tol = tol * 0.1;
                let failure = RefCell::new(None);
                let integral = integrate(
                    |rate| match (OffspringFamily::Poisson { rate }).moment(order, inner_tol) {
                        Ok(v) => v,
                        Err(e) => {
                            failure.borrow_mut().get_or_insert(e);
                            f64::NAN
                        }
                    },
                    *lo,
                    *hi,
                    tol * 0.9 * (hi - lo),
                );
                match failure.into_inner() {
                    Some(e) => Err(e),
                    None => Ok(integral? / (hi - lo)),
                }
            }
        }
    }

    fn expect_over_means(&self, f: impl Fn(f64) -> f64, tol: f64) -> Result<f64> {
        match self {
            Self::Atoms(atoms) => Ok(atoms.iter().map(|a| a.weight * f(a.offspring.mean())).sum()),
            Self::UniformPoissonRate { lo, hi, .. } => {
                Ok(integrate(&f, *lo, *hi, tol * (hi - lo))? / (hi - lo))
            }
        }
    }
}

/// `m^kappa` with `0^0 = 1`.
fn pow_moment(m: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        1.0
    } else {
        m.powf(kappa)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSpec {
    pub env: EnvSpec,
    pub kappa: f64,
    pub delta: f64,
}

impl ModelSpec {
    pub fn new(env: EnvSpec, kappa: f64, delta: f64) -> Result<Self> {
        env.validate()?;
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kappa = {kappa} must be positive"
            )));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta = {delta} must be positive"
            )));
        }
        Ok(Self { env, kappa, delta })
    }

    /// Order `(1 v kappa) + delta` of the offspring moment in the hypothesis.
    pub fn moment_order(&self) -> f64 {
        self.kappa.max(1.0) + self.delta
    }

    pub fn kappa_moment(&self) -> Result<f64> {
        self.env.kappa_moment(self.kappa, DEFAULT_TOL)
    }

    pub fn check_conditions(&self) -> Result<ConditionReport> {
        let kappa_moment = self.kappa_moment()?;
        let log_mean = self.env.log_mean();
        let moment_a = self.env.moment_a(self.moment_order(), DEFAULT_TOL)?;
        Ok(ConditionReport {
            kappa_moment,
            log_mean,
            subcritical: log_mean < 0.0,
            moment_a,
            pass: kappa_moment < 1.0 && moment_a.is_finite(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub kappa_moment: f64,
    pub log_mean: f64,
    #[serde(skip)]
    pub subcritical: bool,
    #[serde(rename = "moment_A")]
    pub moment_a: f64,
    pub pass: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_atom() -> EnvSpec {
        EnvSpec::uniform_poisson_atoms(&[0.3, 0.9], ImmigrationFamily::pareto(2.0, 1.0))
    }

    #[test]
    fn kappa_moment_examples() {
        assert!((two_atom().kappa_moment(2.0, 1e-10).unwrap() - 0.45).abs() < 1e-15);
        let single = EnvSpec::single(
            OffspringFamily::Poisson { rate: 0.5 },
            ImmigrationFamily::Constant { b: 1 },
        );
        assert_eq!(single.kappa_moment(1.0, 1e-10).unwrap(), 0.5);
        let cont = EnvSpec::UniformPoissonRate {
            lo: 0.0,
            hi: 1.0,
            immigration: ImmigrationFamily::Constant { b: 1 },
        };
        let tol = 1e-10;
        assert!((cont.kappa_moment(2.0, tol).unwrap() - 1.0 / 3.0).abs() <= tol);
        // Singular derivative at zero: int_0^1 x^0.5 = 2/3.
        assert!((cont.kappa_moment(0.5, tol).unwrap() - 2.0 / 3.0).abs() <= tol);
    }

    #[test]
    fn kappa_zero_is_one() {
        let env = EnvSpec::atoms(vec![
            Atom {
                weight: 0.25,
                offspring: OffspringFamily::Bernoulli { p: 0.0 },
                immigration: ImmigrationFamily::Constant { b: 0 },
            },
            Atom {
                weight: 0.75,
                offspring: OffspringFamily::Geometric0 { p: 0.3 },
                immigration: ImmigrationFamily::Constant { b: 0 },
            },
        ])
        .unwrap();
        assert_eq!(env.kappa_moment(0.0, 1e-10).unwrap(), 1.0);
    }

    #[test]
    fn check_conditions_examples() {
        let model = ModelSpec::new(two_atom(), 2.0, 0.5).unwrap();
        let r = model.check_conditions().unwrap();
        assert!(r.pass);
        assert!(r.subcritical);
        assert!((r.kappa_moment - 0.45).abs() < 1e-15);
        assert!((r.log_mean - (0.3f64.ln() + 0.9f64.ln()) / 2.0).abs() < 1e-15);

        let sup = ModelSpec::new(
            EnvSpec::single(
                OffspringFamily::Poisson { rate: 1.2 },
                ImmigrationFamily::Constant { b: 1 },
            ),
            1.0,
            0.5,
        )
        .unwrap();
        let r = sup.check_conditions().unwrap();
        assert!(!r.pass);
        assert!((r.kappa_moment - 1.2).abs() < 1e-15);
    }

    #[test]
    fn continuous_moment_a() {
        // E[A^2] for A ~ Poisson(U), U ~ Uniform(0, 1): E[U + U^2] = 5/6.
        let cont = EnvSpec::UniformPoissonRate {
            lo: 0.0,
            hi: 1.0,
            immigration: ImmigrationFamily::Constant { b: 1 },
        };
        assert!((cont.moment_a(2.0, 1e-10).unwrap() - 5.0 / 6.0).abs() < 1e-9);
        assert!((cont.log_mean() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn validation_errors() {
        let bad = EnvSpec::atoms(vec![Atom {
            weight: 0.5,
            offspring: OffspringFamily::Poisson { rate: 0.5 },
            immigration: ImmigrationFamily::Constant { b: 1 },
        }]);
        assert!(bad.is_err());
        assert!(ModelSpec::new(two_atom(), 0.0, 0.5).is_err());
        assert!(ModelSpec::new(two_atom(), 2.0, -1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let env = two_atom();
        let mut a = RngState::from_seed(11);
        let mut b = RngState::from_seed(11);
        for _ in 0..1000 {
            assert_eq!(env.sample(&mut a), env.sample(&mut b));
        }
    }

    #[test]
    fn atom_frequencies() {
        let env = two_atom();
        let mut rng = RngState::from_seed(2024);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| env.sample(&mut rng).offspring == OffspringFamily::Poisson { rate: 0.3 })
            .count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.002);
    }
}
