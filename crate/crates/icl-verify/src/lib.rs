//! Acceptance checks: trained models against closed forms, closed forms against
//! Monte Carlo, and in-process property checks. Each check yields a [`Verdict`].

use std::time::{Duration, Instant};

use icl_core::designs::{Covariance, DesignSpec, Prompt};
use icl_core::estimators::{
    mc_risk, numeric_optimal_scalar, numeric_optimal_w, pgd_predict, wpgd_predict, PgdWeights, RiskEstimate,
    ScalarOracle, WpgdWeights,
};
use icl_core::models::{construct_attn_from_pgd, construct_ssm_from_wpgd, AttnParams, ModelParams, SsmParams};
use icl_core::numerics::{stream_id, Matrix, RngStream, SpdMatrix};
use icl_core::par::Exec;
use icl_core::theory::*;
use icl_core::training::{
    batch_loss_and_grad_flat, evaluate_position_risks, train, train_with, LossMode, ModelKind, TrainConfig,
    TrainedModel,
};
use icl_core::{Error, Result};

/// Master seed of every acceptance run.
pub const SEED: u64 = 20_240_917;

#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: usize,
    pub title: &'static str,
    pub pass: bool,
    pub lines: Vec<String>,
}

impl Verdict {
    fn new(id: usize, title: &'static str) -> Self {
        Self { id, title, pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: impl Into<String>) {
        self.pass &= ok;
        self.lines.push(format!("[{}] {}", if ok { "ok" } else { "FAIL" }, line.into()));
    }

    fn note(&mut self, line: impl Into<String>) {
        self.lines.push(format!("     {}", line.into()));
    }

    pub fn status_line(&self) -> String {
        format!("{} criterion {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.title)
    }
}

fn rng(parts: &[u64]) -> RngStream {
    RngStream::new(SEED, stream_id(parts))
}

fn desk(seed: u64) -> TrainConfig {
    TrainConfig { seed, ..TrainConfig::desk() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// `|a − b| ≤ k · √(se_a² + se_b²)`.
fn agree(a: &RiskEstimate, b: &RiskEstimate, k: f64) -> bool {
    (a.mean - b.mean).abs() <= k * a.stderr.hypot(b.stderr)
}

fn fmt_risk(r: &RiskEstimate) -> String {
    format!("{:.4} ± {:.4}", r.mean, r.stderr)
}

fn random_spd(rng: &mut RngStream, d: usize) -> Result<SpdMatrix> {
    let g = Matrix::new(d, d, rng.normal_vec(d * d))?;
    let a = g.matmul(&g.transpose())?.scale(1.0 / d as f64).add(&Matrix::identity(d).scale(0.5))?;
    SpdMatrix::new(a.symmetrized())
}

/// Attention and H3 trained on the isotropic design for one context length.
pub struct IidPoint {
    pub n: usize,
    pub attn: TrainedModel,
    pub attn_time: Duration,
    pub h3: TrainedModel,
}

pub const IID_NS: [usize; 4] = [4, 8, 16, 32];

pub fn iid_sweep() -> Result<Vec<IidPoint>> {
    IID_NS
        .iter()
        .map(|&n| {
            let spec = DesignSpec::isotropic(8, n, 0.0)?;
            let t0 = Instant::now();
            let attn = train(&ModelKind::Attention, &spec, &desk(stream_id(&[SEED, 1, n as u64])))?;
            let attn_time = t0.elapsed();
            let h3 = train(&ModelKind::H3, &spec, &desk(stream_id(&[SEED, 2, n as u64])))?;
            Ok(IidPoint { n, attn, attn_time, h3 })
        })
        .collect()
}

pub fn criterion_1(points: &[IidPoint]) -> Verdict {
    let mut v = Verdict::new(1, "trained attention matches d - nd/(n+d+1) within 5% (d = 8)");
    for p in points {
        let target = 8.0 - 8.0 * p.n as f64 / (p.n as f64 + 9.0);
        let r = &p.attn.final_test_risk;
        v.check(
            rel(r.mean, target) <= 0.05,
            format!("n={:2}: risk {} vs {target:.4} (rel {:.4})", p.n, fmt_risk(r), rel(r.mean, target)),
        );
        v.check(p.attn_time <= Duration::from_secs(120), format!("n={:2}: {:.1}s", p.n, p.attn_time.as_secs_f64()));
    }
    v
}

/// Max deviation from 1 of the filter over lags `1..=n`, normalized to unit mean.
pub fn filter_flatness(f: &[f64], n: usize) -> f64 {
    let lags = &f[1..=n];
    let mean = lags.iter().sum::<f64>() / n as f64;
    lags.iter().map(|x| (x / mean - 1.0).abs()).fold(0.0, f64::max)
}

pub fn criterion_2(points: &[IidPoint]) -> Verdict {
    let mut v = Verdict::new(2, "trained H3 matches trained attention within 5% with a flat filter");
    for p in points {
        let (a, h) = (&p.attn.final_test_risk, &p.h3.final_test_risk);
        v.check(
            rel(h.mean, a.mean) <= 0.05,
            format!("n={:2}: H3 {} vs attention {} (rel {:.4})", p.n, fmt_risk(h), fmt_risk(a), rel(h.mean, a.mean)),
        );
        let ModelParams::Ssm(ssm) = &p.h3.params else {
            v.check(false, "H3 training returned a non-SSM model");
            continue;
        };
        let dev = filter_flatness(&ssm.f, p.n);
        v.check(dev < 0.15, format!("n={:2}: normalized filter max deviation {dev:.4}", p.n));
    }
    v
}

pub fn criterion_3() -> Result<Verdict> {
    let mut v = Verdict::new(3, "numeric W matches the anisotropic optimum; MC risk at W* matches L*");
    let (d, n) = (8, 16);
    for k in 0..10u64 {
        let mut g = rng(&[3, k]);
        let (sx, sb) = (random_spd(&mut g, d)?, random_spd(&mut g, d)?);
        for (j, sigma) in [0.0, 0.5].into_iter().enumerate() {
            let t = optimal_independent(&sx, &sb, sigma, n)?;
            let wstar = t.weight_matrix(d);
            let wnum = numeric_optimal_w(&sx, &sb, sigma, n)?;
            let err = wnum.sub(&wstar)?.frobenius_norm() / wstar.frobenius_norm();
            v.check(err <= 1e-6, format!("pair {k} sigma={sigma}: relative W error {err:.2e}"));
            let spec = DesignSpec::independent(sx.clone(), sb.clone(), sigma, n)?;
            let est = mc_risk(&PgdWeights::new(wstar)?, &spec, 100_000, &rng(&[3, k, 100 + j as u64]))?;
            let z = (est.mean - t.risk) / est.stderr;
            v.check(est.within(t.risk, 3.0), format!("pair {k} sigma={sigma}: MC {} vs L* {:.4} (z {z:+.2})", fmt_risk(&est), t.risk));
        }
    }
    Ok(v)
}

const SCALAR_TRIALS: usize = 10_000_000;
const RISK_TRIALS: usize = 1_000_000;
const ALPHAS: [f64; 4] = [0.0, 0.2, 0.4, 0.6];

struct ScalarCheck {
    fit: icl_core::estimators::ScalarFit,
    mc_at_theory: RiskEstimate,
    mc_at_fit: RiskEstimate,
}

fn scalar_check(spec: &DesignSpec, c_theory: f64, tag: u64, alpha_index: u64) -> Result<ScalarCheck> {
    let d = spec.d();
    let fit = numeric_optimal_scalar(
        spec,
        (0.0, 0.2),
        ScalarOracle::MonteCarlo { trials: SCALAR_TRIALS, rng: &rng(&[tag, alpha_index, 1]) },
    )?;
    let mc_at_theory = mc_risk(&PgdWeights::scalar(d, c_theory), spec, RISK_TRIALS, &rng(&[tag, alpha_index, 2]))?;
    let mc_at_fit = mc_risk(&PgdWeights::scalar(d, fit.c_star), spec, RISK_TRIALS, &rng(&[tag, alpha_index, 3]))?;
    Ok(ScalarCheck { fit, mc_at_theory, mc_at_fit })
}

pub fn criterion_4() -> Result<Verdict> {
    let mut v = Verdict::new(4, "RAG: numeric scalar optimum and MC risk match the exact formula");
    let (d, n) = (8, 16);
    for (i, &alpha) in ALPHAS.iter().enumerate() {
        let spec = DesignSpec::rag(d, n, alpha, 0.0)?;
        let exact = rag_exact_default(alpha, 0.0, d, n);
        let c = exact.scalar().expect("scalar optimum");
        let s = scalar_check(&spec, c, 4, i as u64)?;
        v.check(
            (s.fit.c_star - c).abs() <= 3.0 * s.fit.c_stderr,
            format!("alpha={alpha}: fitted c {:.6} ± {:.6} vs exact {c:.6}", s.fit.c_star, s.fit.c_stderr),
        );
        v.check(
            s.mc_at_theory.within(exact.risk, 3.0),
            format!("alpha={alpha}: MC risk at c*I {} vs exact L* {:.4}", fmt_risk(&s.mc_at_theory), exact.risk),
        );
    }
    let d = 64;
    let alpha = 1.0 / (d as f64).sqrt();
    let (e, a) = (rag_exact_default(alpha, 0.0, d, 16), rag_approx(alpha, 0.0, d, 16));
    v.check(
        rel(a.risk, e.risk) <= 0.10,
        format!("d=64 alpha=1/8 n=16: approximate {:.4} vs exact {:.4} (rel {:.4})", a.risk, e.risk, rel(a.risk, e.risk)),
    );
    Ok(v)
}

pub fn criterion_5() -> Result<Verdict> {
    let mut v = Verdict::new(5, "task-feature: numeric optimum agrees with MC; closed form reported");
    let (d, n) = (8, 16);
    for (i, &alpha) in ALPHAS.iter().enumerate() {
        let spec = DesignSpec::task_feature(d, n, alpha, 0.0)?;
        let closed = task_feature_exact_default(alpha, 0.0, d, n);
        let c = closed.scalar().expect("scalar optimum");
        let s = scalar_check(&spec, c, 5, i as u64)?;
        let vertex = RiskEstimate { mean: s.fit.min_risk, stderr: s.fit.min_risk_stderr, trials: SCALAR_TRIALS };
        let zc = (s.fit.c_star - c) / s.fit.c_stderr;
        let zl = (s.mc_at_theory.mean - closed.risk) / s.mc_at_theory.stderr;
        if alpha == 0.0 {
            v.check(zc.abs() <= 3.0, format!("alpha=0: fitted c {:.6} ± {:.6} vs exact {c:.6}", s.fit.c_star, s.fit.c_stderr));
            v.check(zl.abs() <= 3.0, format!("alpha=0: MC risk at c*I {} vs exact L* {:.4}", fmt_risk(&s.mc_at_theory), closed.risk));
        } else {
            v.check(
                agree(&vertex, &s.mc_at_fit, 3.0),
                format!("alpha={alpha}: fitted min risk {} vs MC risk at fitted c {}", fmt_risk(&vertex), fmt_risk(&s.mc_at_fit)),
            );
            v.note(format!(
                "alpha={alpha}: closed-form c {c:.6} / L* {:.4}; numeric c {:.6} ± {:.6} (z {zc:+.2}); MC at closed-form c {} (z {zl:+.2})",
                closed.risk,
                s.fit.c_star,
                s.fit.c_stderr,
                fmt_risk(&s.mc_at_theory)
            ));
        }
    }
    Ok(v)
}

pub const MOMENT_SAMPLES: usize = 1_000_000;

pub fn criterion_6() -> Result<Verdict> {
    let mut v = Verdict::new(6, "moment identities match Monte Carlo; cross-quartic compared with 3d(d+2)");
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checks = 0;
    let mut record = |v: &mut Verdict, q: &MomentQuery, label: String, stream: &[u64]| -> Result<()> {
        let exact = moment_identity(q)?;
        let (mean, se) = mc_moment_oracle(q, MOMENT_SAMPLES, &rng(stream))?;
        let z = (mean - exact) / se;
        checks += 1;
        if z.abs() > worst.0 {
            worst = (z.abs(), label.clone());
        }
        if z.abs() > 3.0 {
            v.check(false, format!("{label}: formula {exact:.6} vs MC {mean:.6} ± {se:.6} (z {z:+.2})"));
        }
        Ok(())
    };
    for draw in 0..10u64 {
        let mut g = rng(&[6, 0, draw]);
        let sigma = 0.5 + 1.5 * g.uniform();
        let order = 2 * (1 + (draw % 4) as u32);
        let q = MomentQuery::EvenScalar { sigma, order };
        record(&mut v, &q, format!("even_scalar order={order} sigma={sigma:.3}"), &[6, 1, draw])?;
    }
    for d in [1usize, 2, 4] {
        for draw in 0..10u64 {
            let mut g = rng(&[6, 2, d as u64, draw]);
            let w = Matrix::new(d, d, g.normal_vec(d * d))?;
            let w2 = Matrix::new(d, d, g.normal_vec(d * d))?;
            let qs = [
                MomentQuery::Quartic { w: w.clone(), w2: w2.clone() },
                MomentQuery::Sextic { w: w.clone(), w2: w2.clone() },
                MomentQuery::Octic { w, w2 },
            ];
            for (k, q) in qs.iter().enumerate() {
                record(&mut v, q, format!("{} d={d} draw={draw}", q.kind()), &[6, 3, d as u64, draw, k as u64])?;
            }
        }
    }
    v.check(v.pass, format!("{checks} identity comparisons; largest |z| = {:.2} ({})", worst.0, worst.1));
    let q = MomentQuery::CrossQuartic { w: Matrix::identity(2) };
    let closed = moment_identity(&q)?;
    let (mean, se) = mc_moment_oracle(&q, MOMENT_SAMPLES, &rng(&[6, 4]))?;
    let cond = cross_quartic_by_conditioning(&Matrix::identity(2))?;
    let (zp, zc) = ((mean - closed) / se, (mean - cond) / se);
    v.check(zc.abs() <= 3.0, format!("cross_quartic d=2 W=I: MC {mean:.4} ± {se:.4} vs conditioning {cond} (z {zc:+.2})"));
    if zp.abs() > 5.0 {
        v.note(format!("DISCREPANCY cross_quartic: closed form {closed} vs MC {mean:.4} ± {se:.4} (z {zp:+.2})"));
    } else {
        v.note(format!("cross_quartic closed form {closed} vs MC (z {zp:+.2})"));
    }
    Ok(v)
}

pub const LOW_RANKS: [usize; 4] = [1, 2, 4, 8];

pub fn criterion_7() -> Result<Verdict> {
    let mut v = Verdict::new(7, "low-rank attention matches the rank-r optimum within 5%; risk non-increasing in r");
    let (d, n) = (8, 16);
    let sb = Covariance::Harmonic.build(d)?;
    let sx = SpdMatrix::identity(d);
    let spec = DesignSpec::independent(sx.clone(), sb.clone(), 0.0, n)?;
    let mut prev: Option<(f64, RiskEstimate)> = None;
    for r in LOW_RANKS {
        let theory = low_rank_risk(&sx, &sb, 0.0, n, r)?.0.risk;
        let m = train(&ModelKind::LowRankAttention(r), &spec, &desk(stream_id(&[SEED, 7, r as u64])))?;
        let risk = m.final_test_risk;
        v.check(
            rel(risk.mean, theory) <= 0.05,
            format!("r={r}: risk {} vs {theory:.4} (rel {:.4})", fmt_risk(&risk), rel(risk.mean, theory)),
        );
        if let Some((pt, pr)) = prev {
            v.check(theory <= pt, format!("r={r}: optimum {theory:.4} <= previous {pt:.4}"));
            let ok = risk.mean <= pr.mean + 3.0 * risk.stderr.hypot(pr.stderr);
            v.check(ok, format!("r={r}: trained {:.4} <= previous {:.4} within 3 stderr", risk.mean, pr.mean));
        }
        prev = Some((theory, risk));
    }
    Ok(v)
}

pub const LORA_RANKS: [usize; 3] = [1, 2, 4];

pub fn criterion_8() -> Result<Verdict> {
    let mut v = Verdict::new(8, "LoRA after a task shift reaches the per-coordinate bound");
    let (d, n) = (8, 16);
    let old = DesignSpec::isotropic(d, n, 0.0)?;
    let new_beta = Covariance::Geometric.build(d)?;
    let shifted = DesignSpec::independent(SpdMatrix::identity(d), new_beta.clone(), 0.0, n)?;
    let pair = SpectrumPair::new(vec![1.0; d], new_beta.matrix().diag(), d as f64, n)?;
    let base = train(&ModelKind::Attention, &old, &desk(stream_id(&[SEED, 8, 0])))?;
    let ModelParams::Attn(base) = base.params else {
        return Err(Error::Diagnostic("attention training returned another model".into()));
    };
    let frozen = mc_risk(&ModelParams::Attn(base.clone()), &shifted, 100_000, &rng(&[8, 1]))?;
    v.note(format!(
        "frozen pretrained model on the shifted task: {} (exact {:.4})",
        fmt_risk(&frozen),
        lora_adapted_risk(&pair, 0)?.value
    ));
    for r in LORA_RANKS {
        let bound = lora_bound(&pair, r)?;
        let exact = lora_adapted_risk(&pair, r)?;
        let m = train(&ModelKind::Lora { base: base.clone(), rank: r }, &shifted, &desk(stream_id(&[SEED, 8, r as u64])))?;
        let risk = m.final_test_risk;
        v.check(
            risk.mean <= bound.value + 3.0 * risk.stderr,
            format!("r={r}: trained {} <= bound {:.4} + 3 stderr", fmt_risk(&risk), bound.value),
        );
        v.check(
            rel(risk.mean, bound.value) <= 0.05,
            format!("r={r}: trained within 5% of bound (rel {:.4})", rel(risk.mean, bound.value)),
        );
        v.note(format!(
            "r={r}: bound {:.4} on coordinates {:?}; exact risk of the old optimum with {r} coordinates re-fit {:.4} on {:?}",
            bound.value, bound.chosen, exact.value, exact.chosen
        ));
    }
    Ok(v)
}

pub fn criterion_9() -> Result<Verdict> {
    let mut v = Verdict::new(9, "H3 is no worse than attention at the final position (3 stderr margin)");
    let d = 8;
    let spec = DesignSpec::isotropic(d, 30, 0.0)?;
    let cfg = |tag: u64| TrainConfig { loss_mode: LossMode::AveragedPositions, ..desk(stream_id(&[SEED, 9, tag])) };
    let attn = train(&ModelKind::Attention, &spec, &cfg(1))?;
    let h3 = train(&ModelKind::H3, &spec, &cfg(2))?;
    let eval = rng(&[9, 3]);
    let ra = evaluate_position_risks(&attn.params, &spec, 20_000, &eval)?[30];
    let rh = evaluate_position_risks(&h3.params, &spec, 20_000, &eval)?[30];
    let margin = 3.0 * ra.stderr.hypot(rh.stderr);
    v.check(
        rh.mean <= ra.mean + margin,
        format!("averaged n_max=30, last position: H3 {} vs attention {} (margin {margin:.4})", fmt_risk(&rh), fmt_risk(&ra)),
    );
    v.note(format!("strict ordering holds: {}", rh.mean <= ra.mean));
    let spec = DesignSpec::evolving(d, 40)?;
    let attn = train(&ModelKind::Attention, &spec, &desk(stream_id(&[SEED, 9, 4])))?;
    let h3 = train(&ModelKind::H3, &spec, &desk(stream_id(&[SEED, 9, 5])))?;
    let eval = rng(&[9, 6]);
    let ra = mc_risk(&attn.params, &spec, 20_000, &eval)?;
    let rh = mc_risk(&h3.params, &spec, 20_000, &eval)?;
    let margin = 3.0 * ra.stderr.hypot(rh.stderr);
    v.check(
        rh.mean <= ra.mean + margin,
        format!("evolving task n=40: H3 {} vs attention {} (margin {margin:.4})", fmt_risk(&rh), fmt_risk(&ra)),
    );
    v.note(format!("strict ordering holds: {}", rh.mean <= ra.mean));
    Ok(v)
}

fn max_grad_error(model: &ModelParams, batch: &[Prompt], mode: LossMode) -> Result<f64> {
    let (_, grad) = batch_loss_and_grad_flat(model, batch, mode)?;
    let theta = model.trainable();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let shifted = |delta: f64| -> Result<f64> {
            let mut m = model.clone();
            let mut t = theta.clone();
            t[i] += delta;
            m.set_trainable(&t);
            Ok(batch_loss_and_grad_flat(&m, batch, mode)?.0)
        };
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1.0));
    }
    Ok(worst)
}

fn random_models(g: &mut RngStream, d: usize, n: usize) -> Result<Vec<ModelParams>> {
    let big = d + 1;
    let mut m = |r: usize, c: usize| Matrix::new(r, c, g.normal_vec(r * c).iter().map(|x| 0.5 * x).collect());
    let attn = AttnParams::new(m(big, big)?, m(big, big)?, m(big, big)?, vec![0.3; big])?;
    let ssm = SsmParams::new(m(big, big)?, m(big, big)?, m(big, big)?, vec![0.3; big], vec![0.7; n + 1])?;
    let lora = icl_core::models::LoraParams::new(m(big, 2)?, m(big, 2)?)?;
    Ok(vec![ModelParams::Attn(attn.clone()), ModelParams::Ssm(ssm), ModelParams::Lora { base: attn, lora }])
}

pub fn criterion_10() -> Result<Verdict> {
    let mut v = Verdict::new(10, "property checks: gradients, equivalence, masking, determinism, convexity");
    let (d, n) = (3, 4);
    let mut g = rng(&[10, 0]);
    let spec = DesignSpec::isotropic(d, n, 0.2)?;
    let batch: Vec<Prompt> = (0..8).map(|_| spec.sample(&mut g)).collect();
    let mut worst: f64 = 0.0;
    for model in random_models(&mut g, d, n)? {
        for mode in [LossMode::LastPosition, LossMode::AveragedPositions] {
            worst = worst.max(max_grad_error(&model, &batch, mode)?);
        }
    }
    v.check(worst <= 1e-5, format!("central differences vs analytic gradients: worst relative error {worst:.2e}"));

    let designs = [
        DesignSpec::isotropic(d, n, 0.3)?,
        DesignSpec::rag(d, n, 0.5, 0.1)?,
        DesignSpec::task_feature(d, n, 0.5, 0.1)?,
        DesignSpec::evolving(d, n)?,
    ];
    let mut worst: f64 = 0.0;
    for s in &designs {
        let w = Matrix::new(d, d, g.normal_vec(d * d))?;
        let omega = g.normal_vec(n);
        let attn = construct_attn_from_pgd(&w)?;
        let ssm = construct_ssm_from_wpgd(&w, &omega)?;
        let (pgd, wpgd) = (PgdWeights::new(w.clone())?, WpgdWeights::new(w, omega)?);
        for _ in 0..20 {
            let p = s.sample(&mut g);
            let a = (icl_core::models::attn_predict(&attn, &p)? - pgd_predict(&pgd, &p)?).abs();
            let b = (icl_core::models::ssm_predict(&ssm, &p)? - wpgd_predict(&wpgd, &p)?).abs();
            worst = worst.max(a).max(b);
        }
    }
    v.check(worst <= 1e-12, format!("attention = PGD and H3 = WPGD constructions: max gap {worst:.2e}"));

    let model = &random_models(&mut g, d, n)?[1];
    let p = spec.sample(&mut g);
    let positions: Vec<usize> = (1..=n + 1).collect();
    let before = model.predict_positions(&p, &positions)?;
    let mut leaked = p.clone();
    leaked.y_query += 100.0;
    let mut causal = true;
    for t in 1..=n {
        let mut future = p.clone();
        future.y[t - 1] += 10.0;
        future.x_query.iter_mut().for_each(|x| *x -= 5.0);
        causal &= model.predict_positions(&future, &positions[..t])? == before[..t];
    }
    v.check(model.predict(&leaked)? == model.predict(&p)? && causal, "query label masked; positions ignore later tokens");

    let tiny = TrainConfig { iterations: 50, batch_size: 16, restarts: 2, eval_trials: 500, seed: 3, ..TrainConfig::default() };
    let a = train_with(&ModelKind::H3, &spec, &tiny, Exec::Sequential)?;
    let b = train_with(&ModelKind::H3, &spec, &tiny, Exec::default())?;
    let c = train_with(&ModelKind::H3, &spec, &TrainConfig { seed: 4, ..tiny.clone() }, Exec::default())?;
    v.check(a == b && a != c, "training is a function of the seed only (sequential = parallel)");

    for s in [DesignSpec::isotropic(2, 4, 0.5)?, DesignSpec::rag(2, 4, 0.5, 0.2)?, DesignSpec::task_feature(2, 4, 0.5, 0.2)?] {
        let min = check_strong_convexity(&s, 200_000, &rng(&[10, 1]))?;
        v.check(min > 0.0, format!("{} d=2: Hessian min eigenvalue {min:.4}", s.design().tag()));
    }
    v.note("standalone suites: cargo test -p icl-core --test {gradients,equivalence,designs_props,numerics_props,theory_props,training_props}");
    Ok(v)
}
