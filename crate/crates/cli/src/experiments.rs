use std::time::Instant;

use bpire::parallel::{replicate, replicate_filtered};
use bpire::rng::derive_seed;
use bpire::simulator::{
    choose_truncation, composed_thinning_sample, extinction_path, forward_terminal,
    grey_sum_sample, random_sum_sample, sample_stationary_backward,
};
use bpire::sre::sample_perpetuity;
use bpire::tailstats::{
    default_hill_k, empirical_pmf, fit_geometric_decay, grid_for_levels, hill_estimate, hill_plot,
    ks_critical, ks_two_sample, level_is_reliable, tail_ratio, tv_distance, SortedSample,
    TailReport,
};
use bpire::{oracle, ConditionReport, ModelSpec};

use crate::config::{DumpFormat, Experiment, ExperimentConfig};
use crate::report::{Metric, RunReport, SampleDump, Summary, Table, ToleranceKind};
use crate::RunError;

/// Stream tags passed to `derive_seed`, one per independent sample.
const TAG_STATIONARY: u64 = 1;
const TAG_FORWARD: u64 = 2;
const TAG_RANDOM_SUM: u64 = 3;
const TAG_GREY: u64 = 4;
const TAG_DECAY: u64 = 5;
const TAG_PERPETUITY: u64 = 6;
const TAG_COROLLARY: u64 = 0x100;

/// The lowest censoring level for samples that also feed a Hill estimate.
const HILL_FLOOR_LEVEL: f64 = 0.05;
const KS_ALPHA: f64 = 0.01;
const HILL_SHIFT: f64 = 0.5;

struct Outcome {
    metrics: Vec<Metric>,
    summary: Summary,
    tables: Vec<Table>,
    dump: Option<SampleDump>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            metrics: Vec::new(),
            summary: Summary::default(),
            tables: Vec::new(),
            dump: None,
        }
    }
}

/// Runs the configured experiment. Fails with [`RunError::Hypothesis`] before
/// sampling when `E m^kappa < 1` or the moment condition does not hold.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, RunError> {
    let start = Instant::now();
    let conditions = cfg.model.check_conditions()?;
    if !conditions.pass {
        return Err(RunError::Hypothesis(format!(
            "E m^kappa = {} and moment_A = {}; need E m^kappa < 1 and a finite moment",
            conditions.kappa_moment, conditions.moment_a
        )));
    }
    let outcome = match cfg.experiment {
        Experiment::Check => check(&conditions),
        Experiment::Theorem => theorem(cfg, &conditions)?,
        Experiment::Lemma1 => lemma1(cfg, &conditions)?,
        Experiment::Corollary => corollary(cfg, &conditions)?,
        Experiment::Grey => grey(cfg, &conditions)?,
        Experiment::Decay => decay(cfg)?,
        Experiment::Sre => sre(cfg, &conditions)?,
        Experiment::Oracle => oracle_check(cfg)?,
        Experiment::Hill => hill(cfg)?,
    };
    Ok(RunReport {
        experiment: cfg.experiment,
        seed: cfg.seed,
        pass: outcome.metrics.iter().all(|m| m.pass),
        metrics: outcome.metrics,
        wall_ms: start.elapsed().as_millis() as u64,
        config: cfg.clone(),
        conditions,
        summary: outcome.summary,
        tables: outcome.tables,
        dump: outcome.dump,
    })
}

fn check(c: &ConditionReport) -> Outcome {
    let mut out = Outcome::new();
    out.metrics.push(Metric::new(
        "kappa_moment",
        c.kappa_moment,
        1.0,
        0.0,
        ToleranceKind::Below,
    ));
    out.metrics.push(Metric::new(
        "moment_A",
        c.moment_a,
        f64::INFINITY,
        0.0,
        ToleranceKind::Below,
    ));
    out
}

fn workers(cfg: &ExperimentConfig) -> usize {
    cfg.workers.max(1)
}

fn level_label(level: f64) -> String {
    format!("{level:e}")
}

/// Draws `n` integer replicas and keeps those above `floor`.
fn censored_counts<F>(
    cfg: &ExperimentConfig,
    tag: u64,
    floor: f64,
    f: F,
) -> Result<(Vec<u64>, SortedSample), RunError>
where
    F: Fn(&bpire::RngState) -> bpire::Result<u64> + Sync,
{
    let kept = replicate_filtered(
        cfg.replicas,
        derive_seed(cfg.seed, tag),
        workers(cfg),
        f,
        |&v| v as f64 > floor,
    )?;
    let values = kept.iter().map(|&v| v as f64).collect();
    let sample = SortedSample::censored(values, cfg.replicas, floor)?;
    Ok((kept, sample))
}

fn dump_counts(cfg: &ExperimentConfig, values: Vec<u64>) -> Option<SampleDump> {
    match cfg.dump {
        DumpFormat::None => None,
        DumpFormat::Text => Some(SampleDump::Counts {
            file: "sample.txt".into(),
            values,
            binary: false,
        }),
        DumpFormat::Binary => Some(SampleDump::Counts {
            file: "sample.bin".into(),
            values,
            binary: true,
        }),
    }
}

fn ratio_table(report: &TailReport) -> Table {
    let mut t = Table::new("ratio.csv", &["x", "survival", "se", "ratio", "ratio_se"]);
    for j in 0..report.x_grid.len() {
        t.push(vec![
            report.x_grid[j].into(),
            report.survival[j].into(),
            report.se[j].into(),
            report.ratio[j].into(),
            report.ratio_se[j].into(),
        ]);
    }
    t
}

/// One relative-tolerance metric per grid level with enough expected
/// exceedances. Returns the ratio at the deepest such level.
fn ratio_metrics(
    out: &mut Outcome,
    levels: &[f64],
    report: &TailReport,
    theory: f64,
    tolerance: f64,
) -> Option<f64> {
    let mut deepest = None;
    for (j, &level) in levels.iter().enumerate() {
        if !level_is_reliable(level, report.n) {
            continue;
        }
        let ratio = report.ratio[j];
        out.metrics.push(Metric::relative(
            format!("ratio@{}", level_label(level)),
            ratio,
            theory,
            tolerance,
        ));
        deepest = Some(ratio);
    }
    deepest
}

fn stationary_grid(cfg: &ExperimentConfig) -> Result<Vec<f64>, RunError> {
    let env = &cfg.model.env;
    Ok(grid_for_levels(|x| env.immigration_survival(x), &cfg.grid)?)
}

/// Censoring floor low enough that the top `default_hill_k(n)` order
/// statistics of a stationary sample survive it.
fn hill_floor(model: &ModelSpec) -> Result<f64, RunError> {
    let x = grid_for_levels(|x| model.env.immigration_survival(x), &[HILL_FLOOR_LEVEL])?[0];
    Ok(x - 1.0)
}

fn hill_outputs(cfg: &ExperimentConfig, sample: &SortedSample) -> Result<(f64, Table), RunError> {
    let k = cfg.hill_k.unwrap_or_else(|| default_hill_k(sample.n()));
    let estimate = hill_estimate(sample, k, HILL_SHIFT)?;
    let k_max = (2 * k)
        .min(sample.values().len().saturating_sub(1))
        .min(sample.n() as usize - 1);
    let plot = hill_plot(sample, k_max, HILL_SHIFT)?;
    let mut t = Table::new("hill.csv", &["k", "kappa_hat", "ci95"]);
    for j in 0..plot.k_grid.len() {
        t.push(vec![
            plot.k_grid[j].into(),
            plot.estimate[j].into(),
            plot.ci95[j].into(),
        ]);
    }
    Ok((estimate.kappa_hat, t))
}

fn theorem(cfg: &ExperimentConfig, c: &ConditionReport) -> Result<Outcome, RunError> {
    let theory = 1.0 / (1.0 - c.kappa_moment);
    let k = choose_truncation(&cfg.model, cfg.epsilon_trunc)?;
    let grid = stationary_grid(cfg)?;
    let floor = (grid[0] - 1.0).min(hill_floor(&cfg.model)?);
    let (kept, sample) = censored_counts(cfg, TAG_STATIONARY, floor, |rng| {
        Ok(sample_stationary_backward(&cfg.model, k, rng)?.value)
    })?;
    let report = tail_ratio(&sample, |x| cfg.model.env.immigration_survival(x), &grid)?;
    let mut out = Outcome::new();
    let constant_hat = ratio_metrics(&mut out, &cfg.grid, &report, theory, cfg.tolerance.theorem);
    let (kappa_hat, hill_table) = hill_outputs(cfg, &sample)?;
    out.summary = Summary {
        constant_hat,
        constant_theory: Some(theory),
        kappa_hat: Some(kappa_hat),
    };
    out.tables = vec![ratio_table(&report), hill_table];
    out.dump = dump_counts(cfg, kept);
    Ok(out)
}

fn lemma1(cfg: &ExperimentConfig, c: &ConditionReport) -> Result<Outcome, RunError> {
    let b_law = match cfg.b_law.or_else(|| cfg.model.env.shared_immigration()) {
        Some(law) => law,
        None => {
            return Err(RunError::Invalid(
                "lemma1 needs `b_law` when the atoms carry different immigration laws".into(),
            ))
        }
    };
    let theory = c.kappa_moment;
    let grid = grid_for_levels(|x| b_law.survival(x), &cfg.grid)?;
    let (kept, sample) = censored_counts(cfg, TAG_RANDOM_SUM, grid[0] - 1.0, |rng| {
        random_sum_sample(&cfg.model, &b_law, &mut rng.clone())
    })?;
    let report = tail_ratio(&sample, |x| b_law.survival(x), &grid)?;
    let mut out = Outcome::new();
    let constant_hat = ratio_metrics(&mut out, &cfg.grid, &report, theory, cfg.tolerance.lemma1);
    out.summary = Summary {
        constant_hat,
        constant_theory: Some(theory),
        kappa_hat: None,
    };
    out.tables = vec![ratio_table(&report)];
    out.dump = dump_counts(cfg, kept);
    Ok(out)
}

fn corollary(cfg: &ExperimentConfig, c: &ConditionReport) -> Result<Outcome, RunError> {
    let q = c.kappa_moment;
    let env = &cfg.model.env;
    let x = grid_for_levels(|x| env.immigration_survival(x), &[cfg.corollary_level])?[0];
    let s_b = env.immigration_survival(x);
    let mut table = Table::new(
        "corollary.csv",
        &["i", "x", "survival", "se", "ratio", "ratio_se", "theory"],
    );
    let mut points = Vec::new();
    let mut out = Outcome::new();
    for i in 0..=cfg.corollary_max_i {
        let kept = replicate_filtered(
            cfg.replicas,
            derive_seed(cfg.seed, TAG_COROLLARY + i as u64),
            workers(cfg),
            |rng| composed_thinning_sample(&cfg.model, i, &mut rng.clone()),
            |&v| v as f64 > x,
        )?;
        let n = cfg.replicas as f64;
        let p = kept.len() as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        let theory = q.powi(i as i32);
        table.push(vec![
            i.into(),
            x.into(),
            p.into(),
            se.into(),
            (p / s_b).into(),
            (se / s_b).into(),
            theory.into(),
        ]);
        points.push((i as f64, p / s_b));
    }
    let fit = fit_geometric_decay(&points)?;
    out.metrics.push(Metric::relative(
        "rho",
        fit.rho_hat,
        q,
        cfg.tolerance.corollary,
    ));
    out.metrics.push(Metric::new(
        "r2",
        fit.r2,
        1.0,
        1.0 - cfg.tolerance.corollary_r2,
        ToleranceKind::AtLeast,
    ));
    out.summary = Summary {
        constant_hat: Some(fit.rho_hat),
        constant_theory: Some(q),
        kappa_hat: None,
    };
    out.tables = vec![table];
    Ok(out)
}

fn grey(cfg: &ExperimentConfig, c: &ConditionReport) -> Result<Outcome, RunError> {
    let n_law = cfg
        .n_law
        .ok_or_else(|| RunError::Invalid("grey needs `n_law` in [model]".into()))?;
    let b_law = cfg.model.env.shared_immigration().ok_or_else(|| {
        RunError::Invalid("grey needs every atom to share one immigration law".into())
    })?;
    let ratio_c = n_law.tail_constant_over(&b_law).ok_or_else(|| {
        RunError::Invalid(
            "grey needs `n_law` to be a discrete Pareto law with the immigration's kappa and beta"
                .into(),
        )
    })?;
    let theory = 1.0 + ratio_c * c.kappa_moment;
    let grid = grid_for_levels(|x| b_law.survival(x), &cfg.grid)?;
    let (kept, sample) = censored_counts(cfg, TAG_GREY, grid[0] - 1.0, |rng| {
        grey_sum_sample(&cfg.model, &n_law, &mut rng.clone())
    })?;
    let report = tail_ratio(&sample, |x| b_law.survival(x), &grid)?;
    let mut out = Outcome::new();
    let constant_hat = ratio_metrics(&mut out, &cfg.grid, &report, theory, cfg.tolerance.grey);
    out.summary = Summary {
        constant_hat,
        constant_theory: Some(theory),
        kappa_hat: None,
    };
    out.tables = vec![ratio_table(&report)];
    out.dump = dump_counts(cfg, kept);
    Ok(out)
}

/// Decay rate of `E[(Theta_{n-1} o 1)^alpha]`. Conditioning on the
/// environment and Jensen give `max(E m^alpha, E m)` as the exact rate.
pub fn decay_theory(model: &ModelSpec, alpha: f64) -> Result<f64, RunError> {
    let moment = model
        .env
        .kappa_moment(alpha, bpire::env_model::DEFAULT_TOL)?;
    Ok(moment.max(model.env.mean_moment()))
}

fn decay(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let theory = decay_theory(&cfg.model, cfg.alpha)?;
    let max_n = cfg.decay_max_n;
    let alpha = cfg.alpha;
    let paths = replicate(
        cfg.replicas,
        derive_seed(cfg.seed, TAG_DECAY),
        workers(cfg),
        |rng| extinction_path(&cfg.model.env, max_n, &mut rng.clone()),
    )?;
    let n = cfg.replicas as f64;
    let mut table = Table::new("decay.csv", &["n", "moment", "se"]);
    let mut points = Vec::new();
    for g in 0..max_n {
        let (mut s, mut s2) = (0.0, 0.0);
        for path in &paths {
            let v = (path[g] as f64).powf(alpha);
            s += v;
            s2 += v * v;
        }
        let mean = s / n;
        let se = ((s2 / n - mean * mean).max(0.0) / n).sqrt();
        table.push(vec![(g + 1).into(), mean.into(), se.into()]);
        if mean > 0.0 {
            points.push(((g + 1) as f64, mean));
        }
    }
    let fit = fit_geometric_decay(&points)?;
    let mut out = Outcome::new();
    out.metrics.push(Metric::absolute(
        "rho",
        fit.rho_hat,
        theory,
        cfg.tolerance.decay,
    ));
    out.summary = Summary {
        constant_hat: Some(fit.rho_hat),
        constant_theory: Some(theory),
        kappa_hat: None,
    };
    out.tables = vec![table];
    Ok(out)
}

fn sre(cfg: &ExperimentConfig, c: &ConditionReport) -> Result<Outcome, RunError> {
    let theory = 1.0 / (1.0 - c.kappa_moment);
    let k = choose_truncation(&cfg.model, cfg.epsilon_trunc)?;
    let grid = stationary_grid(cfg)?;
    let floor = grid[0] - 1.0;
    let kept = replicate_filtered(
        cfg.replicas,
        derive_seed(cfg.seed, TAG_PERPETUITY),
        workers(cfg),
        |rng| sample_perpetuity(&cfg.model, k, rng),
        |&v| v > floor,
    )?;
    let sample = SortedSample::censored(kept.clone(), cfg.replicas, floor)?;
    let report = tail_ratio(&sample, |x| cfg.model.env.immigration_survival(x), &grid)?;
    let mut out = Outcome::new();
    let constant_hat = ratio_metrics(&mut out, &cfg.grid, &report, theory, cfg.tolerance.sre);

    // Forward chain from 0 for K+1 steps has exactly the law of the
    // backward sum over K+1 terms.
    let ks_n = cfg.ks_replicas.min(cfg.replicas);
    let mut backward = replicate(
        ks_n,
        derive_seed(cfg.seed, TAG_STATIONARY),
        workers(cfg),
        |rng| Ok(sample_stationary_backward(&cfg.model, k, rng)?.value as f64),
    )?;
    let mut forward = replicate(
        ks_n,
        derive_seed(cfg.seed, TAG_FORWARD),
        workers(cfg),
        |rng| Ok(forward_terminal(0, k + 1, &cfg.model.env, &mut rng.clone())? as f64),
    )?;
    backward.sort_by(f64::total_cmp);
    forward.sort_by(f64::total_cmp);
    let d = ks_two_sample(&forward, &backward)?;
    let critical = ks_critical(forward.len(), backward.len(), KS_ALPHA);
    out.metrics
        .push(Metric::absolute("ks_forward_backward", d, 0.0, critical));

    out.summary = Summary {
        constant_hat,
        constant_theory: Some(theory),
        kappa_hat: None,
    };
    out.tables = vec![ratio_table(&report)];
    if cfg.dump != DumpFormat::None {
        out.dump = Some(SampleDump::Reals {
            file: "sample.txt".into(),
            values: kept,
        });
    }
    Ok(out)
}

fn oracle_check(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let kernel = oracle::build_kernel(&cfg.model.env, cfg.n_max)?;
    let exact =
        oracle::stationary_power_iteration(&kernel, oracle::DEFAULT_TOL, oracle::DEFAULT_MAX_ITER)?;
    let defect = oracle::stationarity_defect(&kernel, &exact.pmf);
    let k = choose_truncation(&cfg.model, cfg.epsilon_trunc)?;
    let values = replicate(
        cfg.replicas,
        derive_seed(cfg.seed, TAG_STATIONARY),
        workers(cfg),
        |rng| Ok(sample_stationary_backward(&cfg.model, k, rng)?.value),
    )?;
    let empirical = empirical_pmf(&values, kernel.states());
    let tv = tv_distance(&exact.pmf, &empirical);
    let mut out = Outcome::new();
    out.metrics
        .push(Metric::absolute("tv", tv, 0.0, cfg.tolerance.oracle));
    out.metrics.push(Metric::absolute(
        "stationarity_defect",
        defect,
        0.0,
        2.0 * oracle::DEFAULT_TOL,
    ));
    let mut table = Table::new("oracle.csv", &["state", "probability", "empirical"]);
    for (x, (&p, &e)) in exact.pmf.iter().zip(&empirical).enumerate() {
        table.push(vec![x.into(), p.into(), e.into()]);
    }
    out.tables = vec![table];
    out.dump = dump_counts(cfg, values);
    Ok(out)
}

fn hill(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let k = choose_truncation(&cfg.model, cfg.epsilon_trunc)?;
    let floor = hill_floor(&cfg.model)?;
    let (kept, sample) = censored_counts(cfg, TAG_STATIONARY, floor, |rng| {
        Ok(sample_stationary_backward(&cfg.model, k, rng)?.value)
    })?;
    let (kappa_hat, table) = hill_outputs(cfg, &sample)?;
    let mut out = Outcome::new();
    out.metrics.push(Metric::relative(
        "kappa_hat",
        kappa_hat,
        cfg.model.kappa,
        cfg.tolerance.hill,
    ));
    out.summary = Summary {
        constant_hat: None,
        constant_theory: None,
        kappa_hat: Some(kappa_hat),
    };
    out.tables = vec![table];
    out.dump = dump_counts(cfg, kept);
    Ok(out)
}
