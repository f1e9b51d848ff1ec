//! Exact gradients, Adam, and the multi-restart training protocol.

use crate::designs::{DesignSpec, Prompt};
use crate::error::{Error, Result};
use crate::estimators::{mc_risk, RiskEstimate, RISK_SHARD};
use crate::models::{token_rows, AttnParams, LoraParams, ModelParams, SsmParams};
use crate::numerics::{axpy, dot, Matrix, MeanVar, RngStream};
use crate::par::{shard_sizes, Exec};

/// Which positions enter the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Only the query (position `n + 1`).
    LastPosition,
    /// Every position with a non-empty context, `2..=n+1`, equally weighted.
    AveragedPositions,
}

impl LossMode {
    /// 1-based positions entering the loss for context length `n`.
    pub fn positions(self, n: usize) -> Vec<usize> {
        match self {
            LossMode::LastPosition => vec![n + 1],
            LossMode::AveragedPositions => (2..=n + 1).collect(),
        }
    }
}

/// Model family to train.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Attention,
    LowRankAttention(usize),
    H3,
    /// Rank-`rank` update on top of a frozen attention model.
    Lora { base: AttnParams, rank: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub restarts: usize,
    pub init_scale: f64,
    pub loss_mode: LossMode,
    pub seed: u64,
    /// Fresh prompts used to score each restart.
    pub eval_trials: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 128,
            learning_rate: 1e-3,
            restarts: 20,
            init_scale: 0.02,
            loss_mode: LossMode::LastPosition,
            seed: 0,
            eval_trials: 10_000,
        }
    }
}

impl TrainConfig {
    /// Reduced protocol: 2000 iterations and 5 restarts.
    pub fn desk() -> Self {
        Self { iterations: 2000, restarts: 5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.restarts == 0 || self.eval_trials < 2 {
            return Err(Error::Domain("iteration, batch, restart and eval counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Domain("init_scale must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Best restart of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// Test risk of the selected restart (position-averaged in averaged mode).
    pub final_test_risk: RiskEstimate,
    pub restart_index: usize,
    /// Mean training loss over each tenth of the run.
    pub trace: Vec<f64>,
    /// Test risk of every restart; `None` for diverged restarts.
    pub restart_risks: Vec<Option<f64>>,
}

fn flatten(ms: &[&Matrix], vs: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::new();
    ms.iter().for_each(|m| out.extend_from_slice(m.as_slice()));
    vs.iter().for_each(|v| out.extend_from_slice(v));
    out
}

fn unflatten(src: &[f64], ms: &mut [&mut Matrix], vs: &mut [&mut Vec<f64>]) {
    let mut at = 0;
    for m in ms.iter_mut() {
        let len = m.as_slice().len();
        m.as_mut_slice().copy_from_slice(&src[at..at + len]);
        at += len;
    }
    for v in vs.iter_mut() {
        let len = v.len();
        v.copy_from_slice(&src[at..at + len]);
        at += len;
    }
}

impl ModelParams {
    /// Trainable entries in a fixed order (the LoRA base is frozen).
    pub fn trainable(&self) -> Vec<f64> {
        match self {
            ModelParams::Attn(a) => flatten(&[&a.wq, &a.wk, &a.wv], &[&a.v]),
            ModelParams::Ssm(s) => flatten(&[&s.wq, &s.wk, &s.wv], &[&s.v, &s.f]),
            ModelParams::Lora { lora, .. } => flatten(&[&lora.w_up, &lora.w_down], &[]),
        }
    }

    pub fn set_trainable(&mut self, src: &[f64]) {
        match self {
            ModelParams::Attn(a) => unflatten(src, &mut [&mut a.wq, &mut a.wk, &mut a.wv], &mut [&mut a.v]),
            ModelParams::Ssm(s) => {
                unflatten(src, &mut [&mut s.wq, &mut s.wk, &mut s.wv], &mut [&mut s.v, &mut s.f])
            }
            ModelParams::Lora { lora, .. } => {
                unflatten(src, &mut [&mut lora.w_up, &mut lora.w_down], &mut [])
            }
        }
    }

    /// Same shapes with every entry zero.
    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        let len = z.trainable().len();
        z.set_trainable(&vec![0.0; len]);
        if let ModelParams::Lora { base, .. } = &mut z {
            *base = AttnParams::zeros(base.d(), base.rank);
        }
        z
    }
}

/// Accumulates `scale · a bᵀ` into a row-major `a.len() x b.len()` buffer.
#[inline]
fn outer_acc(out: &mut [f64], scale: f64, a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        let s = scale * ar;
        if s != 0.0 {
            axpy(s, b, &mut out[r * cols..(r + 1) * cols]);
        }
    }
}

/// Gradient of `Σ_t weight · (g_t − y_t)²` for one prompt, accumulated into
/// `grad` (trainable layout). Returns the weighted loss.
fn attn_grad(
    base: &AttnParams,
    lora: Option<&LoraParams>,
    p: &Prompt,
    positions: &[usize],
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let big = base.d() + 1;
    let k = base.wq.cols();
    let z = token_rows(p);
    let c = base.wv.mat_vec(&base.v).expect("shapes checked");
    let mut s = vec![0.0; big * big];
    let mut pc = vec![0.0; big];
    let mut gc = vec![0.0; big];
    let mut loss = 0.0;
    let mut pos = positions.iter().peekable();
    let mut zq = vec![0.0; big];
    for t in 1..=p.n() + 1 {
        if pos.peek() == Some(&&t) {
            pos.next();
            zq.copy_from_slice(&z[(t - 1) * big..t * big]);
            zq[big - 1] = 0.0;
            let q = base.wq.tr_vec(&zq).expect("shapes checked");
            let mut u = base.wk.mat_vec(&q).expect("shapes checked");
            let a = lora.map(|l| l.w_up.tr_vec(&zq).expect("shapes checked"));
            if let (Some(l), Some(a)) = (lora, &a) {
                axpy(1.0, &l.w_down.mat_vec(a).expect("shapes checked"), &mut u);
            }
            let g = dot(&u, &pc);
            let resid = g - p.label_at(t);
            loss += weight * resid * resid;
            let e = 2.0 * weight * resid;
            match lora {
                None => {
                    let (gq, rest) = grad.split_at_mut(big * k);
                    let (gk, _) = rest.split_at_mut(big * k);
                    outer_acc(gk, e, &pc, &q);
                    let wk_pc = base.wk.tr_vec(&pc).expect("shapes checked");
                    outer_acc(gq, e, &zq, &wk_pc);
                    let pu: Vec<f64> = (0..big).map(|r| dot(&s[r * big..(r + 1) * big], &u)).collect();
                    axpy(e, &pu, &mut gc);
                }
                Some(l) => {
                    let r = l.rank();
                    let (gup, gdown) = grad.split_at_mut(big * r);
                    outer_acc(gdown, e, &pc, a.as_ref().expect("lora"));
                    let wd_pc = l.w_down.tr_vec(&pc).expect("shapes checked");
                    outer_acc(gup, e, &zq, &wd_pc);
                }
            }
        }
        if t <= p.n() {
            let zt = &z[(t - 1) * big..t * big];
            let val = dot(zt, &c);
            axpy(val, zt, &mut pc);
            if lora.is_none() {
                outer_acc(&mut s, 1.0, zt, zt);
            }
        }
    }
    if lora.is_none() {
        let off = 2 * big * k;
        outer_acc(&mut grad[off..off + big * big], 1.0, &gc, &base.v);
        let wv_gc = base.wv.tr_vec(&gc).expect("shapes checked");
        axpy(1.0, &wv_gc, &mut grad[off + big * big..off + big * big + big]);
    }
    loss
}

fn ssm_grad(params: &SsmParams, p: &Prompt, positions: &[usize], weight: f64, grad: &mut [f64]) -> f64 {
    let big = params.d() + 1;
    let n = p.n();
    let z = token_rows(p);
    let mut keys = vec![0.0; n * big];
    let mut vals = vec![0.0; n * big];
    let mut gated = vec![0.0; n * big];
    for j in 0..n {
        let zj = &z[j * big..(j + 1) * big];
        let kj = params.wk.tr_vec(zj).expect("shapes checked");
        let wj = params.wv.tr_vec(zj).expect("shapes checked");
        for m in 0..big {
            keys[j * big + m] = kj[m];
            vals[j * big + m] = wj[m];
            gated[j * big + m] = kj[m] * wj[m];
        }
    }
    let sq = big * big;
    let (gq, rest) = grad.split_at_mut(sq);
    let (gk, rest) = rest.split_at_mut(sq);
    let (gv, rest) = rest.split_at_mut(sq);
    let (g_head, gf) = rest.split_at_mut(big);
    let mut g_gated = vec![0.0; n * big];
    let mut loss = 0.0;
    let mut zq = vec![0.0; big];
    let mut h = vec![0.0; big];
    for &t in positions {
        zq.copy_from_slice(&z[(t - 1) * big..t * big]);
        zq[big - 1] = 0.0;
        let q = params.wq.tr_vec(&zq).expect("shapes checked");
        h.fill(0.0);
        for j in 0..t - 1 {
            axpy(params.f[t - 1 - j], &gated[j * big..(j + 1) * big], &mut h);
        }
        let g: f64 = (0..big).map(|m| params.v[m] * q[m] * h[m]).sum();
        let resid = g - p.label_at(t);
        loss += weight * resid * resid;
        let e = 2.0 * weight * resid;
        let vh: Vec<f64> = (0..big).map(|m| params.v[m] * h[m]).collect();
        outer_acc(gq, e, &zq, &vh);
        let rt: Vec<f64> = (0..big).map(|m| e * params.v[m] * q[m]).collect();
        for m in 0..big {
            g_head[m] += e * q[m] * h[m];
        }
        for j in 0..t - 1 {
            let lag = t - 1 - j;
            let aj = &gated[j * big..(j + 1) * big];
            gf[lag] += dot(&rt, aj);
            axpy(params.f[lag], &rt, &mut g_gated[j * big..(j + 1) * big]);
        }
    }
    for j in 0..n {
        let zj = &z[j * big..(j + 1) * big];
        let gj = &g_gated[j * big..(j + 1) * big];
        let gw: Vec<f64> = (0..big).map(|m| gj[m] * vals[j * big + m]).collect();
        let gkey: Vec<f64> = (0..big).map(|m| gj[m] * keys[j * big + m]).collect();
        outer_acc(gk, 1.0, zj, &gw);
        outer_acc(gv, 1.0, zj, &gkey);
    }
    loss
}

fn check_model(model: &ModelParams, batch: &[Prompt]) -> Result<()> {
    for p in batch {
        if p.d() != model.d() {
            return Err(Error::Shape(format!("prompt d = {} for model d = {}", p.d(), model.d())));
        }
        if let ModelParams::Ssm(s) = model {
            if s.f.len() < p.n() + 1 {
                return Err(Error::Shape(format!("filter length {} < n + 1 = {}", s.f.len(), p.n() + 1)));
            }
        }
    }
    Ok(())
}

/// Gradient of the batch loss in trainable layout.
pub fn batch_loss_and_grad_flat(model: &ModelParams, batch: &[Prompt], mode: LossMode) -> Result<(f64, Vec<f64>)> {
    check_model(model, batch)?;
    let mut grad = vec![0.0; model.trainable().len()];
    let mut loss = 0.0;
    for p in batch {
        let positions = mode.positions(p.n());
        let weight = 1.0 / (batch.len() * positions.len()) as f64;
        loss += match model {
            ModelParams::Attn(a) => attn_grad(a, None, p, &positions, weight, &mut grad),
            ModelParams::Lora { base, lora } => attn_grad(base, Some(lora), p, &positions, weight, &mut grad),
            ModelParams::Ssm(s) => ssm_grad(s, p, &positions, weight, &mut grad),
        };
    }
    Ok((loss, grad))
}

/// Mean squared error over the batch (and positions) with exact gradients.
/// Frozen tensors get zero gradient.
pub fn batch_loss_and_grad(model: &ModelParams, batch: &[Prompt], mode: LossMode) -> Result<(f64, ModelParams)> {
    let (loss, flat) = batch_loss_and_grad_flat(model, batch, mode)?;
    let mut g = model.zeros_like();
    g.set_trainable(&flat);
    Ok((loss, g))
}

/// Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One bias-corrected Adam update of `params`.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(Error::Shape(format!(
            "Adam state {} / params {} / grads {}",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..grads.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

fn gaussian(rng: &mut RngStream, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::new(rows, cols, rng.normal_vec(rows * cols).iter().map(|v| v * scale).collect())
        .expect("finite")
}

/// Fresh parameters with i.i.d. `N(0, scale²)` trainable entries.
pub fn init_params(kind: &ModelKind, spec: &DesignSpec, scale: f64, rng: &mut RngStream) -> Result<ModelParams> {
    let big = spec.d() + 1;
    let vec = |len: usize, rng: &mut RngStream| -> Vec<f64> {
        rng.normal_vec(len).iter().map(|v| v * scale).collect()
    };
    Ok(match kind {
        ModelKind::Attention | ModelKind::LowRankAttention(_) => {
            let k = match kind {
                ModelKind::LowRankAttention(r) => *r,
                _ => big,
            };
            if k == 0 || k > big {
                return Err(Error::Domain(format!("rank {k} outside 1..={big}")));
            }
            let wq = gaussian(rng, big, k, scale);
            let wk = gaussian(rng, big, k, scale);
            let wv = gaussian(rng, big, big, scale);
            let v = vec(big, rng);
            let mut a = AttnParams::new(wq, wk, wv, v)?;
            if let ModelKind::LowRankAttention(r) = kind {
                a.rank = Some(*r);
            }
            ModelParams::Attn(a)
        }
        ModelKind::H3 => {
            let wq = gaussian(rng, big, big, scale);
            let wk = gaussian(rng, big, big, scale);
            let wv = gaussian(rng, big, big, scale);
            let v = vec(big, rng);
            let f = vec(spec.n() + 1, rng);
            ModelParams::Ssm(SsmParams::new(wq, wk, wv, v, f)?)
        }
        ModelKind::Lora { base, rank } => {
            if base.d() != spec.d() {
                return Err(Error::Shape("LoRA base does not match the design dimension".into()));
            }
            if *rank == 0 || *rank > big {
                return Err(Error::Domain(format!("LoRA rank {rank} outside 1..={big}")));
            }
            let lora = LoraParams::new(gaussian(rng, big, *rank, scale), gaussian(rng, big, *rank, scale))?;
            ModelParams::Lora { base: base.clone(), lora }
        }
    })
}

/// MC risk of `model` at the query position.
pub fn evaluate_test_risk(model: &ModelParams, spec: &DesignSpec, trials: usize, rng: &RngStream) -> Result<RiskEstimate> {
    if model.d() != spec.d() {
        return Err(Error::Shape("model and design dimensions differ".into()));
    }
    mc_risk(model, spec, trials, rng)
}

/// MC risk at every position `1..=n+1` over the same prompts.
pub fn evaluate_position_risks(
    model: &ModelParams,
    spec: &DesignSpec,
    trials: usize,
    rng: &RngStream,
) -> Result<Vec<RiskEstimate>> {
    let n = spec.n();
    let positions: Vec<usize> = (1..=n + 1).collect();
    let empty = spec.empty_prompt();
    model.predict_positions(&empty, &positions)?;
    let sizes = shard_sizes(trials, RISK_SHARD);
    let parts = Exec::default().map(sizes.len(), |s| {
        let mut r = rng.derive(s as u64);
        let mut p = spec.empty_prompt();
        let mut acc = vec![MeanVar::default(); n + 1];
        for _ in 0..sizes[s] {
            spec.sample_into(&mut p, &mut r);
            let preds = model.predict_positions(&p, &positions).expect("checked above");
            for (t, g) in positions.iter().zip(preds) {
                let e = p.label_at(*t) - g;
                acc[t - 1].push(e * e);
            }
        }
        acc
    });
    let mut total = vec![MeanVar::default(); n + 1];
    for part in &parts {
        for (a, b) in total.iter_mut().zip(part) {
            a.merge(b);
        }
    }
    Ok(total.iter().map(RiskEstimate::from_stats).collect())
}

/// Mean of per-position risks over the positions that enter the loss.
fn selection_risk(model: &ModelParams, spec: &DesignSpec, config: &TrainConfig, rng: &RngStream) -> Result<RiskEstimate> {
    match config.loss_mode {
        LossMode::LastPosition => evaluate_test_risk(model, spec, config.eval_trials, rng),
        LossMode::AveragedPositions => {
            let risks = evaluate_position_risks(model, spec, config.eval_trials, rng)?;
            let used = &risks[1..];
            let k = used.len() as f64;
            let mean = used.iter().map(|r| r.mean).sum::<f64>() / k;
            // Upper bound on the stderr of a mean of correlated estimates.
            let stderr = used.iter().map(|r| r.stderr).sum::<f64>() / k;
            Ok(RiskEstimate { mean, stderr, trials: config.eval_trials })
        }
    }
}

/// Stream tags under the run seed.
const INIT_TAG: u64 = 1;
const BATCH_TAG: u64 = 2;
const EVAL_TAG: u64 = 3;

struct RestartOutcome {
    params: ModelParams,
    risk: RiskEstimate,
    trace: Vec<f64>,
}

fn run_restart(kind: &ModelKind, spec: &DesignSpec, config: &TrainConfig, restart: usize) -> Result<Option<RestartOutcome>> {
    let root = RngStream::new(config.seed, restart as u64);
    let mut init_rng = root.derive(INIT_TAG);
    let mut batch_rng = root.derive(BATCH_TAG);
    let mut model = init_params(kind, spec, config.init_scale, &mut init_rng)?;
    let mut flat = model.trainable();
    let mut adam = AdamState::new(flat.len());
    let mut batch: Vec<Prompt> = (0..config.batch_size).map(|_| spec.empty_prompt()).collect();
    let windows = 10.min(config.iterations);
    let mut trace = Vec::with_capacity(windows);
    let mut window_sum = 0.0;
    let mut window_len = 0usize;
    for it in 0..config.iterations {
        for p in batch.iter_mut() {
            spec.sample_into(p, &mut batch_rng);
        }
        let (loss, grad) = batch_loss_and_grad_flat(&model, &batch, config.loss_mode)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Ok(None);
        }
        adam_step(&mut adam, &mut flat, &grad, config.learning_rate)?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        model.set_trainable(&flat);
        window_sum += loss;
        window_len += 1;
        if (it + 1) * windows / config.iterations > trace.len() {
            trace.push(window_sum / window_len as f64);
            window_sum = 0.0;
            window_len = 0;
        }
    }
    let eval_rng = RngStream::new(config.seed, u64::MAX).derive(EVAL_TAG);
    let risk = selection_risk(&model, spec, config, &eval_rng)?;
    if !risk.mean.is_finite() {
        return Ok(None);
    }
    Ok(Some(RestartOutcome { params: model, risk, trace }))
}

/// Trains `config.restarts` models and keeps the one with the lowest test risk.
pub fn train(kind: &ModelKind, spec: &DesignSpec, config: &TrainConfig) -> Result<TrainedModel> {
    train_with(kind, spec, config, Exec::default())
}

pub fn train_with(kind: &ModelKind, spec: &DesignSpec, config: &TrainConfig, exec: Exec) -> Result<TrainedModel> {
    config.validate()?;
    let outcomes = exec.map(config.restarts, |r| run_restart(kind, spec, config, r));
    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut restart_risks = Vec::with_capacity(outcomes.len());
    for (i, o) in outcomes.into_iter().enumerate() {
        match o? {
            Some(out) => {
                restart_risks.push(Some(out.risk.mean));
                if best.as_ref().map_or(true, |(_, b)| out.risk.mean < b.risk.mean) {
                    best = Some((i, out));
                }
            }
            None => restart_risks.push(None),
        }
    }
    let (restart_index, out) = best.ok_or(Error::AllRestartsFailed(config.restarts))?;
    Ok(TrainedModel {
        params: out.params,
        final_test_risk: out.risk,
        restart_index,
        trace: out.trace,
        restart_risks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut st = AdamState::new(2);
        st.m = vec![1.0, -1.0];
        let mut p = vec![0.5, 0.25];
        adam_step(&mut st, &mut p, &[0.0, 0.0], 1e-3).unwrap();
        assert!((st.m[0] - 0.9).abs() < 1e-15);
        assert!(p[0] < 0.5 && p[1] > 0.25);
        let mut fresh = AdamState::new(2);
        let mut q = vec![0.5, 0.25];
        adam_step(&mut fresh, &mut q, &[0.0, 0.0], 1e-3).unwrap();
        assert_eq!(q, vec![0.5, 0.25]);
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        let mut st = AdamState::new(3);
        let mut p = vec![0.0; 3];
        adam_step(&mut st, &mut p, &[2.0, -0.1, 5e-3], 1e-3).unwrap();
        for (v, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - s * 1e-3).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn adam_rejects_mismatch() {
        let mut st = AdamState::new(2);
        assert!(adam_step(&mut st, &mut [0.0; 3], &[0.0; 3], 1e-3).is_err());
    }

    #[test]
    fn zero_model_loss_is_label_power() {
        let spec = DesignSpec::isotropic(3, 4, 0.0).unwrap();
        let mut rng = RngStream::new(3, 3);
        let batch: Vec<Prompt> = (0..16).map(|_| spec.sample(&mut rng)).collect();
        let model = ModelParams::Attn(AttnParams::zeros(3, None));
        let (loss, _) = batch_loss_and_grad(&model, &batch, LossMode::LastPosition).unwrap();
        let expect = batch.iter().map(|p| p.y_query * p.y_query).sum::<f64>() / 16.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn positions_by_mode() {
        assert_eq!(LossMode::LastPosition.positions(4), vec![5]);
        assert_eq!(LossMode::AveragedPositions.positions(3), vec![2, 3, 4]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::desk() }.validate().is_err());
        assert!(TrainConfig { restarts: 0, ..TrainConfig::desk() }.validate().is_err());
        assert!(TrainConfig::desk().validate().is_ok());
    }
}
