//! Subcommand pipelines. Each one resolves the configuration, fans the work
//! out over the rayon pool, assembles results in input order, and writes its
//! artifacts plus a manifest under the output directory.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use prefdyn::bounds::{concentration_trial, default_epsilon, sandwich_holds, theory_report, TheoryReport, CONCENTRATION_FAMILIES};
use prefdyn::dynamics::{integrate, margin_rhs, SimConfig};
use prefdyn::embedanalysis::{mean_similarity_matrix, subtract_shared_component, EmbeddingCorpus, SimilarityMatrix};
use prefdyn::interaction::{token_sharing, InteractionMatrix};
use prefdyn::multitoken::{random_instance, reward_gradient_breakdown, reward_rate, weight_gradient, InstanceShape};
use prefdyn::prefdist::{sample_dataset, sample_fresh, DistributionSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, SweepParam};
use crate::report::{create_file, Check, Report};

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Condition failures and vacuous bounds, one line each.
pub fn theory_warnings(report: &TheoryReport) -> Vec<String> {
    let mut out: Vec<String> = report
        .conditions
        .iter()
        .filter(|c| !c.passed)
        .map(|c| {
            let kind = if c.name == report.conditions.appendix_d_lower.name { "appendix condition" } else { "condition" };
            format!("{kind} {} failed: {} vs {}", c.name, c.lhs, c.rhs)
        })
        .collect();
    if report.failure_prob_vacuous {
        out.push(format!("failure probability bound {} is vacuous", report.failure_prob));
    }
    if report.gen_bound_vacuous {
        out.push(format!("generalization bound {} is vacuous", report.gen_bound));
    }
    out
}

fn fraction(count: usize, total: usize) -> f64 {
    count as f64 / total.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub sandwich: bool,
    pub final_min_margin: f64,
    pub final_mean_margin: f64,
    /// `None` when no held-out samples were drawn.
    pub fresh_error_rate: Option<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub report: Report,
    pub theory: TheoryReport,
    pub seeds: Vec<SeedSummary>,
}

pub fn run_simulate(cfg: &ExperimentConfig) -> Result<SimulateOutput> {
    cfg.validate()?;
    let spec = cfg.distribution.to_spec()?;
    let sim = cfg.sim.to_sim(&spec)?;
    let theory = theory_report(&spec, &cfg.theory_params())?;
    let dir = &cfg.outputs.dir;
    prepare_dir(dir)?;
    let seeds = cfg.seeds.resolve();
    let per_seed: Vec<(SeedSummary, Vec<PathBuf>)> = seeds
        .par_iter()
        .map(|&seed| simulate_seed(cfg, &spec, &sim, &theory, seed))
        .collect::<Result<_>>()?;

    let mut report = Report::new("simulate");
    report.warnings = theory_warnings(&theory);
    let theory_path = dir.join("theory_report.json");
    write_json(&theory_path, &theory)?;
    report.artifacts.push(theory_path);
    let mut rows = Vec::with_capacity(per_seed.len());
    for (row, paths) in per_seed {
        report.artifacts.extend(paths);
        rows.push(row);
    }
    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(create_file(&summary_path)?));
    w.write_record(["seed", "sandwich", "final_min_margin", "final_mean_margin", "fresh_error_rate", "final_loss"])?;
    for r in &rows {
        w.write_record([
            r.seed.to_string(),
            r.sandwich.to_string(),
            r.final_min_margin.to_string(),
            r.final_mean_margin.to_string(),
            r.fresh_error_rate.map_or(String::new(), |x| x.to_string()),
            r.final_loss.to_string(),
        ])?;
    }
    w.flush()?;
    report.artifacts.push(summary_path);

    let n_seeds = rows.len();
    let sandwiched = rows.iter().filter(|r| r.sandwich).count();
    report.metric("n", theory.n);
    report.metric("z", theory.z);
    report.metric("tau1", theory.tau1);
    report.metric("r_lower_at_tau1", theory.r_lower_at_tau1);
    report.metric("r_upper_at_tau1", theory.r_upper_at_tau1);
    report.metric("training_conditions_pass", theory.training_conditions_pass);
    report.metric("generalization_conditions_pass", theory.generalization_conditions_pass);
    report.metric("seeds", n_seeds);
    report.metric("sandwich_fraction", fraction(sandwiched, n_seeds));
    report.checks.push(Check::new(
        "sandwich",
        fraction(sandwiched, n_seeds) >= cfg.checks.sandwich_fraction,
        format!("{sandwiched}/{n_seeds} seeds within envelopes (need >= {})", cfg.checks.sandwich_fraction),
    ));
    if cfg.fresh_count > 0 {
        let clean = rows.iter().filter(|r| r.fresh_error_rate == Some(0.0)).count();
        report.metric("zero_error_fraction", fraction(clean, n_seeds));
        report.checks.push(Check::new(
            "generalization",
            fraction(clean, n_seeds) >= cfg.checks.generalization_fraction,
            format!("{clean}/{n_seeds} seeds with zero held-out error (need >= {})", cfg.checks.generalization_fraction),
        ));
    }
    report.write_manifest(dir, cfg)?;
    Ok(SimulateOutput {
        report,
        theory,
        seeds: rows,
    })
}

fn simulate_seed(
    cfg: &ExperimentConfig,
    spec: &DistributionSpec,
    sim: &SimConfig,
    theory: &TheoryReport,
    seed: u64,
) -> Result<(SeedSummary, Vec<PathBuf>)> {
    let data = sample_dataset(spec, seed)?;
    let fresh = if cfg.fresh_count > 0 { sample_fresh(spec, cfg.fresh_count, seed)? } else { Vec::new() };
    let rec = integrate(&data, &fresh, sim).with_context(|| format!("seed {seed}"))?;
    let last = rec.times.len() - 1;
    let finals = rec.final_train();
    let mut paths = Vec::new();
    let dir = &cfg.outputs.dir;
    if cfg.outputs.trajectories {
        let path = dir.join(format!("trajectory_seed{seed}.csv"));
        rec.write_table(BufWriter::new(create_file(&path)?))?;
        paths.push(path);
    }
    if cfg.outputs.datasets {
        let table = dir.join(format!("dataset_seed{seed}.csv"));
        data.write_table(BufWriter::new(create_file(&table)?))?;
        let meta = dir.join(format!("dataset_seed{seed}.json"));
        data.write_metadata(BufWriter::new(create_file(&meta)?))?;
        paths.extend([table, meta]);
    }
    Ok((
        SeedSummary {
            seed,
            sandwich: sandwich_holds(&rec, theory),
            final_min_margin: finals.iter().copied().fold(f64::INFINITY, f64::min),
            final_mean_margin: rec.mean_train_margin(last),
            fresh_error_rate: (!fresh.is_empty()).then(|| rec.fresh_error_rate(last)),
            final_loss: rec.loss[last],
        },
        paths,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub tau1: f64,
    /// Seed-averaged mean margin at `slope_fraction · τ₁` divided by that time.
    pub initial_slope: f64,
    pub lower_slope: f64,
    pub upper_slope: f64,
    pub final_mean_margin: f64,
    pub times: Vec<f64>,
    pub mean_margins: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub report: Report,
    pub rows: Vec<SweepRow>,
}

fn integer_value(param: SweepParam, value: f64) -> Result<usize> {
    ensure!(
        value >= 1.0 && value.fract() == 0.0 && value < 1e9,
        "{} must be a positive integer, got {value}",
        param.name()
    );
    Ok(value as usize)
}

fn apply_sweep_value(cfg: &ExperimentConfig, param: SweepParam, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match param {
        SweepParam::K => c.distribution.k = integer_value(param, value)?,
        SweepParam::Q => c.distribution.q = integer_value(param, value)?,
        SweepParam::Beta => c.sim.beta = value,
        SweepParam::V => c.distribution.v = value,
        SweepParam::LB => c.distribution.l_b = value,
    }
    c.validate().with_context(|| format!("{} = {value}", param.name()))?;
    Ok(c)
}

/// Seed-averaged mean-margin trajectory for one sweep value.
fn sweep_value(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<(TheoryReport, Vec<f64>, Vec<f64>)> {
    let spec = cfg.distribution.to_spec()?;
    let sim = cfg.sim.to_sim(&spec)?;
    let theory = theory_report(&spec, &cfg.theory_params())?;
    let per_seed: Vec<(Vec<f64>, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| -> Result<_> {
            let data = sample_dataset(&spec, seed)?;
            let fresh = if cfg.fresh_count > 0 { sample_fresh(&spec, cfg.fresh_count, seed)? } else { Vec::new() };
            let rec = integrate(&data, &fresh, &sim)?;
            let means = (0..rec.times.len()).map(|k| rec.mean_train_margin(k)).collect();
            Ok((rec.times, means))
        })
        .collect::<Result<_>>()?;
    let times = per_seed[0].0.clone();
    let mut mean = vec![0.0; times.len()];
    for (_, m) in &per_seed {
        for (acc, x) in mean.iter_mut().zip(m) {
            *acc += x / per_seed.len() as f64;
        }
    }
    Ok((theory, times, mean))
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let param = cfg.sweep.vary;
    ensure!(!cfg.sweep.values.is_empty(), "sweep.values must not be empty");
    let dir = &cfg.outputs.dir;
    prepare_dir(dir)?;
    let seeds = cfg.seeds.resolve();
    let mut report = Report::new("sweep");
    let mut rows = Vec::new();
    for &value in &cfg.sweep.values {
        let vcfg = apply_sweep_value(cfg, param, value)?;
        let (theory, times, mean) = sweep_value(&vcfg, &seeds)?;
        for w in theory_warnings(&theory) {
            report.warnings.push(format!("{} = {value}: {w}", param.name()));
        }
        let target = cfg.sweep.slope_fraction * theory.tau1 * (1.0 - 1e-9);
        let Some(idx) = times.iter().position(|&t| t >= target && t > 0.0) else {
            bail!("{} = {value}: horizon ends before {} of tau1", param.name(), cfg.sweep.slope_fraction);
        };
        rows.push(SweepRow {
            value,
            tau1: theory.tau1,
            initial_slope: mean[idx] / times[idx],
            lower_slope: theory.r_lower_slope,
            upper_slope: theory.r_upper_slope,
            final_mean_margin: *mean.last().unwrap_or(&0.0),
            times,
            mean_margins: mean,
        });
    }

    let summary = dir.join("sweep.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(create_file(&summary)?));
    w.write_record(["param", "value", "tau1", "initial_slope", "lower_slope", "upper_slope", "final_mean_margin"])?;
    for r in &rows {
        w.write_record([
            param.name().to_string(),
            r.value.to_string(),
            r.tau1.to_string(),
            r.initial_slope.to_string(),
            r.lower_slope.to_string(),
            r.upper_slope.to_string(),
            r.final_mean_margin.to_string(),
        ])?;
    }
    w.flush()?;
    let traj = dir.join("sweep_trajectories.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(create_file(&traj)?));
    w.write_record(["param", "value", "time", "mean_margin"])?;
    for r in &rows {
        for (t, m) in r.times.iter().zip(&r.mean_margins) {
            w.write_record([param.name().to_string(), r.value.to_string(), t.to_string(), m.to_string()])?;
        }
    }
    w.flush()?;
    report.artifacts.extend([summary, traj]);

    report.metric("param", param.name());
    for r in &rows {
        report.metric(&format!("initial_slope[{}]", r.value), r.initial_slope);
    }
    match param {
        SweepParam::K if rows.len() > 1 => {
            let decreasing = rows.windows(2).all(|p| p[1].initial_slope < p[0].initial_slope);
            report.checks.push(Check::new("slope_decreasing", decreasing, "initial slope strictly decreasing in K"));
            let tol = cfg.checks.slope_ratio_tolerance;
            let ratios: Vec<(f64, f64)> = rows
                .windows(2)
                .map(|p| (p[0].initial_slope / p[1].initial_slope, p[1].value / p[0].value))
                .collect();
            let ok = ratios.iter().all(|(got, want)| (got / want - 1.0).abs() <= tol);
            let detail = ratios.iter().map(|(g, w)| format!("{g:.4}/{w}")).collect::<Vec<_>>().join(" ");
            report.checks.push(Check::new("slope_ratio", ok, format!("measured/expected ratios {detail} (tol {tol})")));
        }
        SweepParam::Beta => {
            let scaled: Vec<f64> = rows.iter().map(|r| r.tau1 * r.value * r.value).collect();
            let ok = scaled.iter().all(|s| ((s - scaled[0]) / scaled[0]).abs() <= 1e-12);
            report.checks.push(Check::new("tau1_scaling", ok, "tau1 * beta^2 constant"));
        }
        _ => {}
    }
    report.write_manifest(dir, cfg)?;
    Ok(SweepOutput { report, rows })
}

#[derive(Debug, Clone)]
pub struct ConcentrationOutput {
    pub report: Report,
    pub epsilon: f64,
    /// Per-family success frequency, in `CONCENTRATION_FAMILIES` order.
    pub family_rates: [f64; 5],
    pub all_rate: f64,
}

pub fn run_concentration(cfg: &ExperimentConfig) -> Result<ConcentrationOutput> {
    cfg.validate()?;
    ensure!(cfg.trials > 0, "trials must be positive");
    let spec = cfg.distribution.to_spec()?;
    let theory = theory_report(&spec, &cfg.theory_params())?;
    let epsilon = cfg.bounds.epsilon.unwrap_or_else(|| default_epsilon(spec.v, spec.z()));
    let dir = &cfg.outputs.dir;
    prepare_dir(dir)?;
    let base = cfg.seeds.resolve()[0];
    let outcomes = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|i| concentration_trial(&spec, base + i, epsilon))
        .collect::<prefdyn::Result<Vec<_>>>()?;

    let path = dir.join("concentration.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(create_file(&path)?));
    let mut header = vec!["trial".to_string(), "seed".into()];
    header.extend(CONCENTRATION_FAMILIES.iter().map(|f| f.to_string()));
    header.extend(CONCENTRATION_FAMILIES.iter().map(|f| format!("max_dev_{f}")));
    header.push("all".into());
    w.write_record(&header)?;
    for (i, o) in outcomes.iter().enumerate() {
        let mut row = vec![i.to_string(), (base + i as u64).to_string()];
        row.extend(o.flags().iter().map(|b| b.to_string()));
        row.extend(o.max_deviation.iter().map(|x| x.to_string()));
        row.push(o.all().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;

    let trials = outcomes.len();
    let mut family_rates = [0.0; 5];
    for (f, rate) in family_rates.iter_mut().enumerate() {
        *rate = fraction(outcomes.iter().filter(|o| o.flags()[f]).count(), trials);
    }
    let all_rate = fraction(outcomes.iter().filter(|o| o.all()).count(), trials);
    let mut report = Report::new("concentration");
    report.warnings = theory_warnings(&theory);
    report.artifacts.push(path);
    report.metric("trials", trials);
    report.metric("epsilon", epsilon);
    for (name, rate) in CONCENTRATION_FAMILIES.iter().zip(family_rates) {
        report.metric(&format!("rate.{name}"), rate);
    }
    report.metric("rate.all", all_rate);
    report.metric("theory.success_lower_bound", (1.0 - theory.failure_prob).max(0.0));
    report.metric("theory.success_lower_bound_eps", (1.0 - theory.failure_prob_eps).max(0.0));
    report.metric("theory.failure_prob", theory.failure_prob);
    report.metric("theory.failure_prob_eps", theory.failure_prob_eps);
    report.checks.push(Check::new(
        "concentration",
        all_rate >= cfg.checks.concentration_fraction,
        format!("all five families held in {all_rate} of trials (need >= {})", cfg.checks.concentration_fraction),
    ));
    report.write_manifest(dir, cfg)?;
    Ok(ConcentrationOutput {
        report,
        epsilon,
        family_rates,
        all_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultitokenErrors {
    /// Max `|total − chain rule| / (|cooc| + |prob| + |corr|)`.
    pub identity: f64,
    /// Max per-entry relative gap between the weight gradient and central differences.
    pub finite_difference: f64,
    /// Max relative gap between the `L = 1` reduction and the margin ODE.
    pub reduction: f64,
}

#[derive(Debug, Clone)]
pub struct MultitokenOutput {
    pub report: Report,
    pub errors: MultitokenErrors,
}

fn relative(a: f64, b: f64, scale: f64) -> f64 {
    let denom = scale.max(f64::MIN_POSITIVE);
    (a - b).abs() / denom
}

fn verify_instance(cfg: &ExperimentConfig, seed: u64, index: usize) -> Result<MultitokenErrors> {
    let m = &cfg.multitoken;
    let shape = InstanceShape {
        vocab: m.vocab,
        d: m.d,
        len: m.len,
        batch: m.batch,
        beta: cfg.sim.beta,
        scale: m.scale,
    };
    let (model, batch) = random_instance(seed, shape)?;
    let (_, probe_src) = random_instance(seed ^ 0x5851_f42d_4c95_7f2d, InstanceShape { len: 1, batch: 1, ..shape })?;
    let probe_g = &probe_src[0].context_w[0];
    let probe = index % m.vocab;

    let grad = weight_gradient(&model, &batch)?;
    let parts = reward_gradient_breakdown(&model, &batch, probe, probe_g)?;
    let chain = reward_rate(&model, &grad, probe, probe_g)?;
    let scale = parts.cooccurrence.abs() + parts.probability.abs() + parts.distribution_corr.abs();
    let identity = relative(parts.total, chain, scale);

    let h = m.fd_step;
    let mut fd_err = 0.0f64;
    for idx in 0..grad.len() {
        let mut plus = model.clone();
        plus.w[idx] += h;
        let mut minus = model.clone();
        minus.w[idx] -= h;
        let fd = -(plus.batch_loss(&batch)? - minus.batch_loss(&batch)?) / (2.0 * h);
        fd_err = fd_err.max(relative(fd, grad[idx], fd.abs().max(grad[idx].abs())));
    }

    // Single-token responses sharing one context: the softmax terms cancel and
    // the margin ODE with C = token sharing × g·g' must be recovered.
    let (model1, mut batch1) = random_instance(seed, InstanceShape { len: 1, ..shape })?;
    for s in &mut batch1 {
        s.context_l = s.context_w.clone();
        if s.tokens_l[0] == s.tokens_w[0] {
            s.tokens_l[0] = (s.tokens_w[0] + 1) % m.vocab;
        }
    }
    let n = batch1.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (&batch1[i], &batch1[j]);
            let share = token_sharing(a.tokens_w[0], a.tokens_l[0], b.tokens_w[0], b.tokens_l[0]);
            let ip: f64 = a.context_w[0].iter().zip(&b.context_w[0]).map(|(x, y)| x * y).sum();
            values[i * n + j] = f64::from(share) * ip;
        }
    }
    let c = InteractionMatrix::from_values(n, values)?;
    let margins = batch1.iter().map(|s| model1.margin(s)).collect::<prefdyn::Result<Vec<_>>>()?;
    let sim = SimConfig {
        beta: model1.beta,
        tau: 1.0,
        ..Default::default()
    };
    let rhs = margin_rhs(&margins, &c, &sim)?;
    let mut reduction = 0.0f64;
    for (k, s) in batch1.iter().enumerate() {
        let g = &s.context_w[0];
        let w = reward_gradient_breakdown(&model1, &batch1, s.tokens_w[0], g)?.total;
        let l = reward_gradient_breakdown(&model1, &batch1, s.tokens_l[0], g)?.total;
        reduction = reduction.max(relative(w - l, rhs[k], rhs[k].abs().max(1.0)));
    }
    Ok(MultitokenErrors {
        identity,
        finite_difference: fd_err,
        reduction,
    })
}

pub fn run_multitoken_verify(cfg: &ExperimentConfig) -> Result<MultitokenOutput> {
    cfg.validate()?;
    let m = &cfg.multitoken;
    ensure!(m.instances > 0, "multitoken.instances must be positive");
    ensure!(m.vocab >= 2 && m.d >= 1 && m.len >= 1 && m.batch >= 1, "multitoken shape must be non-degenerate");
    ensure!(m.fd_step > 0.0, "multitoken.fd_step must be positive");
    let dir = &cfg.outputs.dir;
    prepare_dir(dir)?;
    let base = cfg.seeds.resolve()[0];
    let per: Vec<MultitokenErrors> = (0..m.instances)
        .into_par_iter()
        .map(|i| verify_instance(cfg, base + i as u64, i))
        .collect::<Result<_>>()?;
    let errors = per.iter().fold(
        MultitokenErrors {
            identity: 0.0,
            finite_difference: 0.0,
            reduction: 0.0,
        },
        |acc, e| MultitokenErrors {
            identity: acc.identity.max(e.identity),
            finite_difference: acc.finite_difference.max(e.finite_difference),
            reduction: acc.reduction.max(e.reduction),
        },
    );
    let path = dir.join("multitoken_report.json");
    write_json(&path, &serde_json::json!({ "max": errors, "instances": per }))?;
    let mut report = Report::new("multitoken-verify");
    report.artifacts.push(path);
    report.metric("instances", m.instances);
    report.metric("max_identity_error", errors.identity);
    report.metric("max_fd_error", errors.finite_difference);
    report.metric("max_reduction_error", errors.reduction);
    report.checks.push(Check::new(
        "decomposition_identity",
        errors.identity <= m.identity_tolerance,
        format!("max relative error {:e} (tol {:e})", errors.identity, m.identity_tolerance),
    ));
    report.checks.push(Check::new(
        "finite_difference",
        errors.finite_difference <= m.fd_tolerance,
        format!("max relative error {:e} (tol {:e})", errors.finite_difference, m.fd_tolerance),
    ));
    report.checks.push(Check::new(
        "single_token_reduction",
        errors.reduction <= m.reduction_tolerance,
        format!("max relative error {:e} (tol {:e})", errors.reduction, m.reduction_tolerance),
    ));
    report.write_manifest(dir, cfg)?;
    Ok(MultitokenOutput { report, errors })
}

#[derive(Debug, Clone)]
pub struct EmbedOutput {
    pub report: Report,
    pub matrix: SimilarityMatrix,
}

pub fn run_embed_analyze(cfg: &ExperimentConfig) -> Result<EmbedOutput> {
    let Some(input) = &cfg.embed.input else {
        bail!("embed-analyze needs an input corpus (--input or embed.input)");
    };
    let dir = &cfg.outputs.dir;
    prepare_dir(dir)?;
    let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let corpus = EmbeddingCorpus::read_table(std::io::BufReader::new(file)).with_context(|| format!("reading {}", input.display()))?;
    let corpus = if cfg.embed.subtract_mean { subtract_shared_component(&corpus) } else { corpus };
    let matrix = mean_similarity_matrix(&corpus)?;
    let output = cfg.embed.output.clone().unwrap_or_else(|| dir.join("similarity.csv"));
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    matrix.write_table(BufWriter::new(create_file(&output)?))?;
    let mut report = Report::new("embed-analyze");
    report.artifacts.push(output);
    report.metric("rows", corpus.vectors.len());
    report.metric("concepts", matrix.size());
    report.metric("subtract_mean", cfg.embed.subtract_mean);
    if let Some(mean) = matrix.off_diagonal_mean() {
        report.metric("off_diagonal_mean", mean);
    }
    report.write_manifest(dir, cfg)?;
    Ok(EmbedOutput { report, matrix })
}
