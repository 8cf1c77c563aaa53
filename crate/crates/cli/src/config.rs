//! Experiment configuration: a sectioned `key = value` text format.
//!
//! ```text
//! # config A
//! [run]
//! replicas = 10000000
//! seed = 42
//! grid = 1e-3, 1e-4
//!
//! [model]
//! kappa = 2
//! delta = 0.5
//!
//! [atom]
//! weight = 0.5
//! offspring = poisson(0.3)
//! immigration = pareto(2, 1, 0)
//! ```
//!
//! `[atom]` may repeat; `[uniform_poisson_rate]` (keys `lo`, `hi`,
//! `immigration`) replaces the atoms with a continuous environment.
//! `[tolerance]` overrides per-experiment tolerances.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bpire::{Atom, EnvSpec, ImmigrationFamily, ModelSpec, OffspringFamily};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Check,
    Theorem,
    Lemma1,
    Corollary,
    Grey,
    Decay,
    Sre,
    Oracle,
    Hill,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Self::Check,
        Self::Theorem,
        Self::Lemma1,
        Self::Corollary,
        Self::Grey,
        Self::Decay,
        Self::Sre,
        Self::Oracle,
        Self::Hill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Check => "check",
            Self::Theorem => "theorem",
            Self::Lemma1 => "lemma1",
            Self::Corollary => "corollary",
            Self::Grey => "grey",
            Self::Decay => "decay",
            Self::Sre => "sre",
            Self::Oracle => "oracle",
            Self::Hill => "hill",
        }
    }

    pub fn default_replicas(self) -> u64 {
        match self {
            Self::Check | Self::Oracle | Self::Decay => 1_000_000,
            _ => 10_000_000,
        }
    }

    /// Relative tolerance except for `decay` (absolute on rho) and `oracle`
    /// (bound on total variation).
    pub fn default_tolerance(self) -> f64 {
        match self {
            Self::Check => 0.0,
            Self::Theorem | Self::Corollary | Self::Sre => 0.15,
            Self::Lemma1 | Self::Grey | Self::Hill => 0.10,
            Self::Decay => 0.02,
            Self::Oracle => 0.005,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpFormat {
    #[default]
    None,
    Text,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub theorem: f64,
    pub lemma1: f64,
    pub corollary: f64,
    pub corollary_r2: f64,
    pub grey: f64,
    pub decay: f64,
    pub sre: f64,
    pub oracle: f64,
    pub hill: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            theorem: Experiment::Theorem.default_tolerance(),
            lemma1: Experiment::Lemma1.default_tolerance(),
            corollary: Experiment::Corollary.default_tolerance(),
            corollary_r2: 0.98,
            grey: Experiment::Grey.default_tolerance(),
            decay: Experiment::Decay.default_tolerance(),
            sre: Experiment::Sre.default_tolerance(),
            oracle: Experiment::Oracle.default_tolerance(),
            hill: Experiment::Hill.default_tolerance(),
        }
    }
}

pub const DEFAULT_GRID: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelSpec,
    /// Standalone immigration law for `lemma1`, independent of the environment.
    pub b_law: Option<ImmigrationFamily>,
    /// Law of `N` for `grey`.
    pub n_law: Option<ImmigrationFamily>,
    pub replicas: u64,
    pub seed: u64,
    pub epsilon_trunc: f64,
    pub grid: Vec<f64>,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub tolerance: Tolerances,
    pub corollary_max_i: usize,
    pub corollary_level: f64,
    pub alpha: f64,
    pub decay_max_n: usize,
    pub n_max: usize,
    pub hill_k: Option<usize>,
    /// Sample size per side of the forward/backward KS comparison in `sre`.
    pub ks_replicas: u64,
    pub dump: DumpFormat,
}

const RUN_KEYS: &[&str] = &[
    "experiment",
    "replicas",
    "seed",
    "epsilon_trunc",
    "grid",
    "workers",
    "out_dir",
    "corollary_max_i",
    "corollary_level",
    "alpha",
    "decay_max_n",
    "n_max",
    "hill_k",
    "ks_replicas",
    "dump",
];
const MODEL_KEYS: &[&str] = &["kappa", "delta", "b_law", "n_law"];
const ATOM_KEYS: &[&str] = &["weight", "offspring", "immigration"];
const UNIFORM_KEYS: &[&str] = &["lo", "hi", "immigration"];
const TOLERANCE_KEYS: &[&str] = &[
    "theorem",
    "lemma1",
    "corollary",
    "corollary_r2",
    "grey",
    "decay",
    "sre",
    "oracle",
    "hill",
];
const SECTIONS: &[&str] = &["run", "model", "atom", "uniform_poisson_rate", "tolerance"];

fn keys_of(section: &str) -> &'static [&'static str] {
    match section {
        "run" => RUN_KEYS,
        "model" => MODEL_KEYS,
        "atom" => ATOM_KEYS,
        "uniform_poisson_rate" => UNIFORM_KEYS,
        _ => TOLERANCE_KEYS,
    }
}

/// Closest known key by edit distance, if it is plausibly a typo.
fn suggest(word: &str, candidates: impl IntoIterator<Item = &'static str>) -> Option<&'static str> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(word, c), c))
        .filter(|(d, c)| *d <= 2.max(c.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

struct Section {
    name: String,
    entries: Vec<Entry>,
}

fn tokenize(text: &str) -> Result<Vec<Section>, ConfigError> {
    let mut sections = vec![Section {
        name: "run".into(),
        entries: Vec::new(),
    }];
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Parse {
                    line,
                    message: format!("malformed section header `{content}`"),
                })?
                .trim()
                .to_ascii_lowercase();
            if !SECTIONS.contains(&name.as_str()) {
                let hint = suggest(&name, SECTIONS.iter().copied())
                    .map(|s| format!("; did you mean `[{s}]`?"))
                    .unwrap_or_default();
                return Err(ConfigError::Parse {
                    line,
                    message: format!("unknown section `[{name}]`{hint}"),
                });
            }
            sections.push(Section {
                name,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = key.trim().to_ascii_lowercase();
        let section = sections
            .last_mut()
            .expect("at least the implicit run section");
        let known = keys_of(&section.name);
        if !known.contains(&key.as_str()) {
            let all = SECTIONS.iter().flat_map(|s| keys_of(s).iter().copied());
            let hint = suggest(&key, known.iter().copied())
                .or_else(|| suggest(&key, all))
                .map(|s| format!("; did you mean `{s}`?"))
                .unwrap_or_default();
            return Err(ConfigError::Parse {
                line,
                message: format!("unknown key `{key}` in [{}]{hint}", section.name),
            });
        }
        if section.entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        section.entries.push(Entry {
            line,
            key,
            value: value.trim().to_string(),
        });
    }
    Ok(sections)
}

fn parse_value<T: FromStr>(e: &Entry) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    e.value.parse().map_err(|err| ConfigError::Parse {
        line: e.line,
        message: format!("`{}`: cannot parse `{}`: {err}", e.key, e.value),
    })
}

fn validation(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

fn find<'a>(section: &'a Section, key: &str) -> Option<&'a Entry> {
    section.entries.iter().find(|e| e.key == key)
}

fn required<'a>(section: &'a Section, key: &str) -> Result<&'a Entry, ConfigError> {
    find(section, key).ok_or_else(|| validation(key, format!("missing in [{}]", section.name)))
}

/// Parses a configuration. `experiment` overrides the file's `experiment`
/// key; one of the two must be present.
pub fn parse_config(
    text: &str,
    experiment: Option<Experiment>,
) -> Result<ExperimentConfig, ConfigError> {
    let sections = tokenize(text)?;
    let singleton = |name: &str| -> Result<Option<&Section>, ConfigError> {
        let mut found = sections
            .iter()
            .filter(|s| s.name == name && (name == "run" || !s.entries.is_empty()));
        let first = found.next();
        if name != "run" {
            if let Some(dup) = found.next() {
                let line = dup.entries.first().map_or(0, |e| e.line);
                return Err(ConfigError::Parse {
                    line,
                    message: format!("section [{name}] appears twice"),
                });
            }
        }
        Ok(first)
    };

    // The implicit leading section and an explicit [run] both hold run keys.
    let mut run_entries: Vec<&Entry> = Vec::new();
    for s in sections.iter().filter(|s| s.name == "run") {
        for e in &s.entries {
            if run_entries.iter().any(|r| r.key == e.key) {
                return Err(ConfigError::Parse {
                    line: e.line,
                    message: format!("duplicate key `{}`", e.key),
                });
            }
            run_entries.push(e);
        }
    }
    let run = |key: &str| run_entries.iter().copied().find(|e| e.key == key);

    let experiment = match (experiment, run("experiment")) {
        (Some(e), _) => e,
        (None, Some(e)) => parse_value(e)?,
        (None, None) => {
            return Err(validation(
                "experiment",
                "not given on the command line or in the config",
            ))
        }
    };

    let model_section =
        singleton("model")?.ok_or_else(|| validation("model", "missing [model] section"))?;
    let kappa: f64 = parse_value(required(model_section, "kappa")?)?;
    let delta: f64 = match find(model_section, "delta") {
        Some(e) => parse_value(e)?,
        None => 0.5,
    };
    let b_law = find(model_section, "b_law").map(parse_value).transpose()?;
    let n_law = find(model_section, "n_law").map(parse_value).transpose()?;

    let atoms: Vec<&Section> = sections.iter().filter(|s| s.name == "atom").collect();
    let uniform = singleton("uniform_poisson_rate")?;
    let env = match (atoms.is_empty(), uniform) {
        (false, Some(_)) => {
            return Err(validation(
                "environment",
                "use either [atom] sections or [uniform_poisson_rate], not both",
            ))
        }
        (true, None) => {
            return Err(validation(
                "environment",
                "no [atom] or [uniform_poisson_rate] section",
            ))
        }
        (true, Some(u)) => EnvSpec::UniformPoissonRate {
            lo: parse_value(required(u, "lo")?)?,
            hi: parse_value(required(u, "hi")?)?,
            immigration: parse_value(required(u, "immigration")?)?,
        },
        (false, None) => {
            let mut list = Vec::with_capacity(atoms.len());
            for a in atoms {
                list.push(Atom {
                    weight: parse_value(required(a, "weight")?)?,
                    offspring: parse_value::<OffspringFamily>(required(a, "offspring")?)?,
                    immigration: parse_value::<ImmigrationFamily>(required(a, "immigration")?)?,
                });
            }
            EnvSpec::Atoms(list)
        }
    };
    env.validate()
        .map_err(|e| validation("environment", e.to_string()))?;
    let model = ModelSpec::new(env, kappa, delta).map_err(|e| {
        let field = if kappa > 0.0 { "delta" } else { "kappa" };
        validation(field, e.to_string())
    })?;

    let replicas = match run("replicas") {
        Some(e) => {
            let v: i64 = parse_value(e)?;
            if v < 1 {
                return Err(validation("replicas", format!("{v} must be at least 1")));
            }
            v as u64
        }
        None => experiment.default_replicas(),
    };
    let grid = match run("grid") {
        Some(e) => e
            .value
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| ConfigError::Parse {
                    line: e.line,
                    message: format!("`grid`: cannot parse `{}`", s.trim()),
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => DEFAULT_GRID.to_vec(),
    };
    if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        return Err(validation("grid", "survival levels must lie in (0, 1)"));
    }
    if grid.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(validation(
            "grid",
            "survival levels must be strictly decreasing",
        ));
    }

    let get_or = |key: &str, default: f64| -> Result<f64, ConfigError> {
        run(key)
            .map(parse_value)
            .transpose()
            .map(|v| v.unwrap_or(default))
    };
    let get_count = |key: &str, default: usize| -> Result<usize, ConfigError> {
        run(key)
            .map(parse_value)
            .transpose()
            .map(|v| v.unwrap_or(default))
    };

    let epsilon_trunc = get_or("epsilon_trunc", bpire::simulator::DEFAULT_EPSILON)?;
    if !(epsilon_trunc > 0.0) {
        return Err(validation("epsilon_trunc", "must be positive"));
    }
    let workers = get_count("workers", 0)?;
    let corollary_level = get_or("corollary_level", 1e-3)?;
    if !(corollary_level > 0.0 && corollary_level < 1.0) {
        return Err(validation("corollary_level", "must lie in (0, 1)"));
    }
    let alpha = get_or("alpha", 1.0)?;
    if !(alpha > 0.0) {
        return Err(validation("alpha", "must be positive"));
    }
    let decay_max_n = get_count("decay_max_n", 10)?;
    if decay_max_n < 3 {
        return Err(validation("decay_max_n", "needs at least 3 generations"));
    }
    let n_max = get_count("n_max", 512)?;
    if !(1..bpire::oracle::MAX_STATES).contains(&n_max) {
        return Err(validation(
            "n_max",
            format!("must lie in [1, {})", bpire::oracle::MAX_STATES),
        ));
    }
    let dump = match run("dump").map(|e| (e.line, e.value.as_str())) {
        None | Some((_, "none")) => DumpFormat::None,
        Some((_, "text")) => DumpFormat::Text,
        Some((_, "binary")) => DumpFormat::Binary,
        Some((line, other)) => {
            return Err(ConfigError::Parse {
                line,
                message: format!("`dump` must be none, text or binary, not `{other}`"),
            })
        }
    };

    let mut tolerance = Tolerances::default();
    if let Some(t) = singleton("tolerance")? {
        for e in &t.entries {
            let v: f64 = parse_value(e)?;
            if !(v >= 0.0) {
                return Err(validation(&e.key, "tolerance must be non-negative"));
            }
            let slot = match e.key.as_str() {
                "theorem" => &mut tolerance.theorem,
                "lemma1" => &mut tolerance.lemma1,
                "corollary" => &mut tolerance.corollary,
                "corollary_r2" => &mut tolerance.corollary_r2,
                "grey" => &mut tolerance.grey,
                "decay" => &mut tolerance.decay,
                "sre" => &mut tolerance.sre,
                "oracle" => &mut tolerance.oracle,
                _ => &mut tolerance.hill,
            };
            *slot = v;
        }
    }

    Ok(ExperimentConfig {
        experiment,
        model,
        b_law,
        n_law,
        replicas,
        seed: run("seed").map(parse_value).transpose()?.unwrap_or(1),
        epsilon_trunc,
        grid,
        workers,
        out_dir: run("out_dir").map_or_else(|| PathBuf::from("out"), |e| PathBuf::from(&e.value)),
        tolerance,
        corollary_max_i: get_count("corollary_max_i", 4)?,
        corollary_level,
        alpha,
        decay_max_n,
        n_max,
        hill_k: run("hill_k").map(parse_value).transpose()?,
        ks_replicas: get_count("ks_replicas", 1_000_000)? as u64,
        dump,
    })
}

pub fn load_config(
    path: &Path,
    experiment: Option<Experiment>,
) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text, experiment)
}
