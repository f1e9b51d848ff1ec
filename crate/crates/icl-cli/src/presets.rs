//! Sweep runners behind each subcommand.

use icl_core::designs::{Covariance, Design, DesignSpec};
use icl_core::estimators::RiskEstimate;
use icl_core::models::ModelParams;
use icl_core::numerics::{stream_id, Matrix, RngStream};
use icl_core::par::Exec;
use icl_core::theory::{
    check_strong_convexity, cross_quartic_by_conditioning, low_rank_risk, lora_adapted_risk, lora_bound,
    mc_moment_oracle, moment_identity, optimal_independent, rag_exact_default, task_feature_exact_default,
    MomentQuery, SpectrumPair, TheoryResult,
};
use icl_core::training::{evaluate_position_risks, evaluate_test_risk, train, ModelKind, TrainConfig};

use crate::config::{ExperimentConfig, ModelTag, Preset, WMode};
use crate::record::{fnv1a, run_seed, RunRecord};
use crate::CliError;

/// Agreement threshold for oracle checks, in standard errors.
pub const ORACLE_SIGMAS: f64 = 3.0;
/// Threshold above which a closed-form mismatch is flagged.
pub const DISCREPANCY_SIGMAS: f64 = 5.0;

/// Result of one subcommand.
#[derive(Debug, Default)]
pub struct Outcome {
    pub records: Vec<RunRecord>,
    /// Human-readable report lines (oracle subcommands).
    pub report: Vec<String>,
    /// Failed sweep points or oracle checks; any entry means a nonzero exit.
    pub failures: Vec<String>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.preset {
        Preset::TheoryTable => theory_table(cfg),
        Preset::FigIid | Preset::FigRag | Preset::FigTask | Preset::FigLowrank | Preset::FigEvolve => sweep(cfg),
        Preset::FigAvg => averaged(cfg),
        Preset::FigLora => lora(cfg),
        Preset::OracleMoments => oracle_moments(cfg),
        Preset::OracleConvexity => oracle_convexity(cfg),
    }
}

fn uses_alpha(kind: &str) -> bool {
    matches!(kind, "rag" | "task")
}

fn alphas(cfg: &ExperimentConfig) -> Result<Vec<f64>, CliError> {
    if uses_alpha(&cfg.kind) {
        return Ok(cfg.alpha.clone());
    }
    if cfg.alpha.iter().any(|&a| a != 0.0) {
        return Err(CliError::Usage(format!("sweep.alpha: design '{}' has no alpha", cfg.kind)));
    }
    Ok(vec![0.0])
}

fn spec_for(cfg: &ExperimentConfig, n: usize, alpha: f64) -> Result<DesignSpec, CliError> {
    let mut pairs = cfg.design.clone();
    pairs.push(("n".into(), n.to_string()));
    pairs.push(("alpha".into(), alpha.to_string()));
    DesignSpec::from_pairs(&pairs).map_err(|e| CliError::Usage(format!("design: {e}")))
}

/// Closed-form optimum for the design, when one exists. `rank = 0` means full rank.
pub fn theory_for(spec: &DesignSpec, rank: usize) -> Result<Option<TheoryResult>, CliError> {
    let (d, n) = (spec.d(), spec.n());
    Ok(match spec.design() {
        Design::Independent { sigma_x, sigma_beta, sigma } if rank == 0 => {
            Some(optimal_independent(sigma_x, sigma_beta, *sigma, n)?)
        }
        Design::Independent { sigma_x, sigma_beta, sigma } => {
            Some(low_rank_risk(sigma_x, sigma_beta, *sigma, n, rank)?.0)
        }
        Design::Rag { alpha, sigma } => Some(rag_exact_default(*alpha, *sigma, d, n)),
        Design::TaskFeature { alpha, sigma } => Some(task_feature_exact_default(*alpha, *sigma, d, n)),
        Design::EvolvingTask => None,
    })
}

struct Point<'a> {
    experiment: &'a str,
    model: ModelTag,
    spec: &'a DesignSpec,
    alpha: f64,
    rank: usize,
}

fn record(cfg: &ExperimentConfig, p: &Point, risk: f64, stderr: f64, theory: Option<&TheoryResult>) -> RunRecord {
    RunRecord {
        experiment: p.experiment.to_string(),
        model: p.model.name().to_string(),
        d: p.spec.d(),
        n: p.spec.n(),
        alpha: p.alpha,
        sigma: p.spec.design().sigma(),
        rank: p.rank,
        seed: cfg.seed,
        risk,
        risk_stderr: stderr,
        theory_risk: theory.map(|t| t.risk),
        normalized_risk: risk / p.spec.d() as f64,
        theory_c: theory.and_then(TheoryResult::scalar),
    }
}

fn train_config(cfg: &ExperimentConfig, p: &Point) -> TrainConfig {
    let seed = run_seed(cfg.seed, p.experiment, p.model.name(), p.spec.d(), p.spec.n(), p.alpha, p.rank);
    TrainConfig { seed, ..cfg.train.clone() }
}

fn held_out(seed: u64) -> RngStream {
    RngStream::new(seed, u64::MAX).derive(4)
}

fn model_kind(tag: ModelTag, rank: usize) -> Result<ModelKind, CliError> {
    match tag {
        ModelTag::Attn => Ok(ModelKind::Attention),
        ModelTag::H3 => Ok(ModelKind::H3),
        ModelTag::LowRank => Ok(ModelKind::LowRankAttention(rank)),
        ModelTag::Lora => Err(CliError::Usage("sweep.models: lora is only available in fig-lora".into())),
        ModelTag::PgdTheory => unreachable!("theory rows are not trained"),
    }
}

fn ranks_for(cfg: &ExperimentConfig, tag: ModelTag) -> Vec<usize> {
    match tag {
        ModelTag::LowRank => cfg.rank.clone(),
        _ => vec![0],
    }
}

fn theory_table(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    for &n in &cfg.n {
        for alpha in alphas(cfg)? {
            let spec = spec_for(cfg, n, alpha)?;
            let theory = theory_for(&spec, 0)?
                .ok_or_else(|| CliError::Usage(format!("design.kind: '{}' has no closed form", cfg.kind)))?;
            let p = Point { experiment: "theory-table", model: ModelTag::PgdTheory, spec: &spec, alpha, rank: 0 };
            out.records.push(record(cfg, &p, theory.risk, 0.0, Some(&theory)));
        }
    }
    Ok(out)
}

struct Job {
    model: ModelTag,
    n: usize,
    alpha: f64,
    rank: usize,
}

type JobResult = Result<Vec<RunRecord>, String>;

fn collect(out: &mut Outcome, results: Vec<JobResult>) {
    for r in results {
        match r {
            Ok(rows) => out.records.extend(rows),
            Err(e) => out.failures.push(e),
        }
    }
}

fn sweep(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let experiment = cfg.preset.name();
    let mut jobs = Vec::new();
    for &n in &cfg.n {
        for alpha in alphas(cfg)? {
            for &model in &cfg.models {
                if model != ModelTag::PgdTheory {
                    model_kind(model, 0)?;
                }
                for rank in ranks_for(cfg, model) {
                    jobs.push(Job { model, n, alpha, rank });
                }
            }
        }
    }
    let specs = jobs.iter().map(|j| spec_for(cfg, j.n, j.alpha)).collect::<Result<Vec<_>, _>>()?;
    let results = Exec::default().map(jobs.len(), |i| {
        let (job, spec) = (&jobs[i], &specs[i]);
        let p = Point { experiment, model: job.model, spec, alpha: job.alpha, rank: job.rank };
        let label = format!("{experiment} {} n={} alpha={} rank={}", job.model.name(), job.n, job.alpha, job.rank);
        let theory = theory_for(spec, job.rank).map_err(|e| format!("{label}: {e}"))?;
        if job.model == ModelTag::PgdTheory {
            let t = theory.ok_or_else(|| format!("{label}: no closed form for this design"))?;
            return Ok(vec![record(cfg, &p, t.risk, 0.0, Some(&t))]);
        }
        let kind = model_kind(job.model, job.rank).map_err(|e| e.to_string())?;
        let trained = train(&kind, spec, &train_config(cfg, &p)).map_err(|e| format!("{label}: {e}"))?;
        let r = trained.final_test_risk;
        Ok(vec![record(cfg, &p, r.mean, r.stderr, theory.as_ref())])
    });
    let mut out = Outcome::default();
    collect(&mut out, results);
    Ok(out)
}

fn averaged(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut jobs = Vec::new();
    for &n in &cfg.n {
        for alpha in alphas(cfg)? {
            for &model in &cfg.models {
                match model {
                    ModelTag::Attn | ModelTag::H3 => jobs.push(Job { model, n, alpha, rank: 0 }),
                    other => {
                        return Err(CliError::Usage(format!("sweep.models: {} is not trained in fig-avg", other.name())))
                    }
                }
            }
        }
    }
    let specs = jobs.iter().map(|j| spec_for(cfg, j.n, j.alpha)).collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = jobs.iter().map(|j| format!("fig-avg-n{}", j.n)).collect();
    let results = Exec::default().map(jobs.len(), |i| {
        let (job, spec, experiment) = (&jobs[i], &specs[i], names[i].as_str());
        let label = format!("{experiment} {} alpha={}", job.model.name(), job.alpha);
        let tc = train_config(cfg, &Point { experiment, model: job.model, spec, alpha: job.alpha, rank: 0 });
        let kind = model_kind(job.model, 0).map_err(|e| e.to_string())?;
        let trained = train(&kind, spec, &tc).map_err(|e| format!("{label}: {e}"))?;
        let risks = evaluate_position_risks(&trained.params, spec, cfg.train.eval_trials, &held_out(tc.seed))
            .map_err(|e| format!("{label}: {e}"))?;
        let mut rows = Vec::new();
        for k in 1..=job.n {
            let at = spec.with_n(k);
            let theory = theory_for(&at, 0).map_err(|e| format!("{label}: {e}"))?;
            let p = Point { experiment, model: job.model, spec: &at, alpha: job.alpha, rank: 0 };
            rows.push(record(cfg, &p, risks[k].mean, risks[k].stderr, theory.as_ref()));
        }
        Ok(rows)
    });
    let mut out = Outcome::default();
    collect(&mut out, results);
    Ok(out)
}

fn diagonal(m: &Matrix, name: &str) -> Result<Vec<f64>, CliError> {
    let d = m.rows();
    if (0..d).any(|a| (0..d).any(|b| a != b && m[(a, b)] != 0.0)) {
        return Err(CliError::Usage(format!("{name}: fig-lora needs a diagonal covariance")));
    }
    Ok(m.diag())
}

/// Spectrum pair and the shifted design for one context length.
pub fn lora_setup(cfg: &ExperimentConfig, n: usize) -> Result<(DesignSpec, DesignSpec, SpectrumPair), CliError> {
    let old = spec_for(cfg, n, 0.0)?;
    let Design::Independent { sigma_x, sigma_beta, sigma } = old.design() else {
        return Err(CliError::Usage("design.kind: fig-lora needs the iid design".into()));
    };
    if *sigma != 0.0 {
        return Err(CliError::Usage("design.sigma: fig-lora needs noiseless labels".into()));
    }
    if sigma_x.matrix().sub(&Matrix::identity(cfg.d))?.frobenius_norm() != 0.0 {
        return Err(CliError::Usage("design.sigma_x: fig-lora needs identity features".into()));
    }
    let new_cov: Covariance =
        cfg.sigma_beta_new.parse().map_err(|e| CliError::Usage(format!("design.sigma_beta_new: {e}")))?;
    let new_beta = new_cov.build(cfg.d)?;
    let lambda_old = diagonal(sigma_beta.matrix(), "design.sigma_beta")?;
    let lambda_new = diagonal(new_beta.matrix(), "design.sigma_beta_new")?;
    let m = lambda_old.iter().sum();
    let pair = SpectrumPair::new(lambda_old, lambda_new, m, n)
        .map_err(|e| CliError::Usage(format!("design.sigma_beta_new: {e}")))?;
    let shifted = DesignSpec::independent(sigma_x.clone(), new_beta, 0.0, n)?;
    Ok((old, shifted, pair))
}

fn lora(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let experiment = "fig-lora";
    for &m in &cfg.models {
        if !matches!(m, ModelTag::Attn | ModelTag::Lora | ModelTag::PgdTheory) {
            return Err(CliError::Usage(format!("sweep.models: {} is not part of fig-lora", m.name())));
        }
    }
    let setups = cfg.n.iter().map(|&n| lora_setup(cfg, n)).collect::<Result<Vec<_>, _>>()?;
    let results = Exec::default().map(setups.len(), |i| -> JobResult {
        let (old, shifted, pair) = &setups[i];
        let label = format!("{experiment} n={}", old.n());
        let base_point = Point { experiment, model: ModelTag::Attn, spec: old, alpha: 0.0, rank: 0 };
        let tc = train_config(cfg, &base_point);
        let base = train(&ModelKind::Attention, old, &tc).map_err(|e| format!("{label} pretrain: {e}"))?;
        let ModelParams::Attn(base) = base.params else { unreachable!("attention training returns attention") };
        let mut rows = Vec::new();
        if cfg.models.contains(&ModelTag::Attn) {
            let frozen = evaluate_test_risk(&ModelParams::Attn(base.clone()), shifted, cfg.train.eval_trials, &held_out(tc.seed))
                .map_err(|e| format!("{label}: {e}"))?;
            let exact = lora_adapted_risk(pair, 0).map_err(|e| format!("{label}: {e}"))?.value;
            let p = Point { spec: shifted, ..base_point };
            rows.push(theory_row(cfg, &p, frozen, exact));
        }
        let ranked = Exec::default().map(cfg.rank.len(), |j| -> JobResult {
            let rank = cfg.rank[j];
            let bound = lora_bound(pair, rank).map_err(|e| format!("{label} rank={rank}: {e}"))?.value;
            let exact = lora_adapted_risk(pair, rank).map_err(|e| format!("{label} rank={rank}: {e}"))?.value;
            let mut rows = Vec::new();
            if cfg.models.contains(&ModelTag::Lora) {
                let p = Point { experiment, model: ModelTag::Lora, spec: shifted, alpha: 0.0, rank };
                let kind = ModelKind::Lora { base: base.clone(), rank };
                let trained =
                    train(&kind, shifted, &train_config(cfg, &p)).map_err(|e| format!("{label} rank={rank}: {e}"))?;
                rows.push(theory_row(cfg, &p, trained.final_test_risk, bound));
            }
            if cfg.models.contains(&ModelTag::PgdTheory) {
                let p = Point { experiment, model: ModelTag::PgdTheory, spec: shifted, alpha: 0.0, rank };
                let exact = RiskEstimate { mean: exact, stderr: 0.0, trials: 0 };
                rows.push(theory_row(cfg, &p, exact, bound));
            }
            Ok(rows)
        });
        for r in ranked {
            rows.extend(r?);
        }
        Ok(rows)
    });
    let mut out = Outcome::default();
    collect(&mut out, results);
    Ok(out)
}

fn theory_row(cfg: &ExperimentConfig, p: &Point, risk: RiskEstimate, theory: f64) -> RunRecord {
    RunRecord { theory_risk: Some(theory), ..record(cfg, p, risk.mean, risk.stderr, None) }
}

fn moment_queries(cfg: &ExperimentConfig, draw: usize) -> Result<MomentQuery, CliError> {
    let d = cfg.d;
    let (w, w2) = match cfg.w {
        WMode::Identity => (Matrix::identity(d), Matrix::identity(d)),
        WMode::Random => {
            let mut rng = RngStream::new(cfg.seed, fnv1a("oracle-moments/w")).derive(draw as u64);
            (Matrix::new(d, d, rng.normal_vec(d * d))?, Matrix::new(d, d, rng.normal_vec(d * d))?)
        }
    };
    Ok(match cfg.moment_kind.as_str() {
        "even_scalar" => MomentQuery::EvenScalar { sigma: cfg.sigma, order: cfg.order },
        "quartic" => MomentQuery::Quartic { w, w2 },
        "cross_quartic" => MomentQuery::CrossQuartic { w },
        "sextic" => MomentQuery::Sextic { w, w2 },
        "octic" => MomentQuery::Octic { w, w2 },
        other => return Err(CliError::Usage(format!("oracle.kind: unknown moment '{other}'"))),
    })
}

fn z_score(target: f64, mean: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        (mean - target) / stderr
    } else if mean == target {
        0.0
    } else {
        f64::INFINITY
    }
}

fn oracle_moments(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    for draw in 0..cfg.draws {
        let q = moment_queries(cfg, draw)?;
        let kind = q.kind();
        let formula = moment_identity(&q)?;
        let rng = RngStream::new(cfg.seed, stream_id(&[fnv1a(kind), cfg.d as u64, draw as u64]));
        let (mean, se) = mc_moment_oracle(&q, cfg.samples, &rng)?;
        let z = z_score(formula, mean, se);
        out.report.push(format!(
            "kind={kind} d={} draw={draw} samples={} formula={formula} mc={mean} stderr={se} z={z:.3}",
            cfg.d, cfg.samples
        ));
        if let MomentQuery::CrossQuartic { w } = &q {
            let cond = cross_quartic_by_conditioning(w)?;
            let zc = z_score(cond, mean, se);
            out.report.push(format!("kind={kind} draw={draw} conditioning={cond} z={zc:.3}"));
            if z.abs() > DISCREPANCY_SIGMAS {
                out.report.push(format!(
                    "DISCREPANCY kind={kind} draw={draw} formula={formula} oracle={mean} stderr={se} z={z:.3}"
                ));
            }
            if zc.abs() > ORACLE_SIGMAS {
                out.failures.push(format!("{kind} draw={draw}: oracle disagrees with conditioning value {cond} (z={zc:.3})"));
            }
        } else if z.abs() > ORACLE_SIGMAS {
            out.failures.push(format!("{kind} draw={draw}: formula {formula} vs oracle {mean} (z={z:.3})"));
        }
    }
    Ok(out)
}

fn oracle_convexity(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    for &n in &cfg.n {
        for alpha in alphas(cfg)? {
            let spec = spec_for(cfg, n, alpha)?;
            let rng = RngStream::new(cfg.seed, stream_id(&[fnv1a(&cfg.kind), cfg.d as u64, n as u64, alpha.to_bits()]));
            let min_eig = check_strong_convexity(&spec, cfg.samples, &rng)?;
            out.report.push(format!(
                "design={} d={} n={n} alpha={alpha} probes={} min_eigenvalue={min_eig}",
                cfg.kind, cfg.d, cfg.samples
            ));
            if min_eig <= 0.0 {
                out.failures.push(format!("{} n={n} alpha={alpha}: Hessian not positive definite", cfg.kind));
            }
        }
    }
    Ok(out)
}
