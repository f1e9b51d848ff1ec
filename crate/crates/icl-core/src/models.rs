//! One-layer linear attention and gated-convolution (H3-style) predictors.

use std::io::{Read, Write};

use crate::designs::Prompt;
use crate::error::{Error, Result};
use crate::estimators::Predictor;
use crate::numerics::{axpy, dot, Matrix};

/// Linear attention weights. `wq`, `wk` are `D x k` with `D = d + 1`; `k = D`
/// in full mode and `k = r` in low-rank mode.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub v: Vec<f64>,
    pub rank: Option<usize>,
}

/// Gated-convolution weights with a free causal filter `f` (lag 0 first).
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub v: Vec<f64>,
    pub f: Vec<f64>,
}

/// Low-rank additive update `W_up W_downᵀ` of an attention score matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraParams {
    pub w_up: Matrix,
    pub w_down: Matrix,
}

fn shape_err(what: &str, got: (usize, usize), want: (usize, usize)) -> Error {
    Error::Shape(format!("{what} is {}x{}, expected {}x{}", got.0, got.1, want.0, want.1))
}

fn expect_shape(what: &str, m: &Matrix, want: (usize, usize)) -> Result<()> {
    if m.shape() != want {
        return Err(shape_err(what, m.shape(), want));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

fn expect_len(what: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Shape(format!("{what} has length {}, expected {len}", v.len())));
    }
    Ok(())
}

impl AttnParams {
    pub fn new(wq: Matrix, wk: Matrix, wv: Matrix, v: Vec<f64>) -> Result<Self> {
        let big = wv.rows();
        let k = wq.cols();
        expect_shape("Wv", &wv, (big, big))?;
        expect_shape("Wq", &wq, (big, k))?;
        expect_shape("Wk", &wk, (big, k))?;
        expect_len("v", &v, big)?;
        if k == 0 || k > big {
            return Err(Error::Shape(format!("score rank {k} outside 1..={big}")));
        }
        let rank = (k != big).then_some(k);
        Ok(Self { wq, wk, wv, v, rank })
    }

    pub fn zeros(d: usize, rank: Option<usize>) -> Self {
        let big = d + 1;
        let k = rank.unwrap_or(big);
        Self {
            wq: Matrix::zeros(big, k),
            wk: Matrix::zeros(big, k),
            wv: Matrix::zeros(big, big),
            v: vec![0.0; big],
            rank,
        }
    }

    /// Feature dimension `d`.
    pub fn d(&self) -> usize {
        self.wv.rows() - 1
    }

    /// Score matrix `Wq Wkᵀ`.
    pub fn score_matrix(&self) -> Matrix {
        self.wq.matmul(&self.wk.transpose()).expect("shapes checked")
    }
}

impl SsmParams {
    pub fn new(wq: Matrix, wk: Matrix, wv: Matrix, v: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        let big = wv.rows();
        for (name, m) in [("Wq", &wq), ("Wk", &wk), ("Wv", &wv)] {
            expect_shape(name, m, (big, big))?;
        }
        expect_len("v", &v, big)?;
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("filter".into()));
        }
        Ok(Self { wq, wk, wv, v, f })
    }

    pub fn zeros(d: usize, filter_len: usize) -> Self {
        let big = d + 1;
        Self {
            wq: Matrix::zeros(big, big),
            wk: Matrix::zeros(big, big),
            wv: Matrix::zeros(big, big),
            v: vec![0.0; big],
            f: vec![0.0; filter_len],
        }
    }

    pub fn d(&self) -> usize {
        self.wv.rows() - 1
    }
}

impl LoraParams {
    pub fn new(w_up: Matrix, w_down: Matrix) -> Result<Self> {
        expect_shape("W_down", &w_down, w_up.shape())?;
        expect_shape("W_up", &w_up, w_up.shape())?;
        Ok(Self { w_up, w_down })
    }

    pub fn zeros(d: usize, r: usize) -> Self {
        Self { w_up: Matrix::zeros(d + 1, r), w_down: Matrix::zeros(d + 1, r) }
    }

    pub fn rank(&self) -> usize {
        self.w_up.cols()
    }

    pub fn delta(&self) -> Matrix {
        self.w_up.matmul(&self.w_down.transpose()).expect("shapes checked")
    }
}

/// Tokens of a prompt as a flat `(n+1) x D` buffer: rows `(x_j, y_j)` and a
/// final `(x_query, 0)` row.
pub(crate) fn token_rows(p: &Prompt) -> Vec<f64> {
    let (n, d) = (p.n(), p.d());
    let big = d + 1;
    let mut z = vec![0.0; (n + 1) * big];
    for j in 0..n {
        z[j * big..j * big + d].copy_from_slice(p.x.row(j));
        z[j * big + d] = p.y[j];
    }
    z[n * big..n * big + d].copy_from_slice(&p.x_query);
    z
}

/// Query token of position `t` (1-based): `(x_t, 0)`.
pub(crate) fn query_token(z: &[f64], big: usize, t: usize) -> Vec<f64> {
    let mut q = z[(t - 1) * big..t * big].to_vec();
    q[big - 1] = 0.0;
    q
}

fn check_prompt(d: usize, p: &Prompt) -> Result<()> {
    if p.d() != d {
        return Err(Error::Shape(format!("model has d = {d}, prompt has d = {}", p.d())));
    }
    Ok(())
}

fn check_positions(p: &Prompt, positions: &[usize]) -> Result<()> {
    if let Some(&t) = positions.iter().find(|&&t| t == 0 || t > p.n() + 1) {
        return Err(Error::Domain(format!("position {t} outside 1..={}", p.n() + 1)));
    }
    Ok(())
}

/// `u = Wk Wqᵀ z̃ (+ W_down W_upᵀ z̃)` so that the score of token `j` is `z_jᵀ u`.
pub(crate) fn attn_query_vector(base: &AttnParams, lora: Option<&LoraParams>, zq: &[f64]) -> Vec<f64> {
    let q = base.wq.tr_vec(zq).expect("shapes checked");
    let mut u = base.wk.mat_vec(&q).expect("shapes checked");
    if let Some(l) = lora {
        let a = l.w_up.tr_vec(zq).expect("shapes checked");
        let extra = l.w_down.mat_vec(&a).expect("shapes checked");
        axpy(1.0, &extra, &mut u);
    }
    u
}

fn attn_positions(base: &AttnParams, lora: Option<&LoraParams>, p: &Prompt, positions: &[usize]) -> Vec<f64> {
    let big = base.d() + 1;
    let z = token_rows(p);
    let c = base.wv.mat_vec(&base.v).expect("shapes checked");
    let values: Vec<f64> = (0..p.n()).map(|j| dot(&z[j * big..(j + 1) * big], &c)).collect();
    positions
        .iter()
        .map(|&t| {
            let u = attn_query_vector(base, lora, &query_token(&z, big, t));
            (0..t - 1).map(|j| dot(&z[j * big..(j + 1) * big], &u) * values[j]).sum()
        })
        .collect()
}

/// Prediction at the query: `(z̃ᵀ Wq Wkᵀ Z₀ᵀ) Z₀ Wv v`.
pub fn attn_predict(params: &AttnParams, p: &Prompt) -> Result<f64> {
    check_prompt(params.d(), p)?;
    Ok(attn_positions(params, None, p, &[p.n() + 1])[0])
}

/// Prediction at each position `t` using demonstrations `1..t-1` only.
pub fn attn_predict_positions(params: &AttnParams, p: &Prompt, positions: &[usize]) -> Result<Vec<f64>> {
    check_prompt(params.d(), p)?;
    check_positions(p, positions)?;
    Ok(attn_positions(params, None, p, positions))
}

/// Attention with score matrix `Wq Wkᵀ + W_up W_downᵀ`.
pub fn lora_attn_predict(base: &AttnParams, lora: &LoraParams, p: &Prompt) -> Result<f64> {
    check_prompt(base.d(), p)?;
    if lora.w_up.rows() != base.d() + 1 {
        return Err(Error::Shape("LoRA factors do not match the base model".into()));
    }
    Ok(attn_positions(base, Some(lora), p, &[p.n() + 1])[0])
}

fn ssm_positions(params: &SsmParams, p: &Prompt, positions: &[usize]) -> Vec<f64> {
    let big = params.d() + 1;
    let z = token_rows(p);
    let gated: Vec<Vec<f64>> = (0..p.n())
        .map(|j| {
            let zj = &z[j * big..(j + 1) * big];
            let k = params.wk.tr_vec(zj).expect("shapes checked");
            let w = params.wv.tr_vec(zj).expect("shapes checked");
            k.iter().zip(&w).map(|(a, b)| a * b).collect()
        })
        .collect();
    positions
        .iter()
        .map(|&t| {
            let q = params.wq.tr_vec(&query_token(&z, big, t)).expect("shapes checked");
            let mut h = vec![0.0; big];
            for (j, a) in gated.iter().enumerate().take(t - 1) {
                axpy(params.f[t - 1 - j], a, &mut h);
            }
            (0..big).map(|m| params.v[m] * q[m] * h[m]).sum()
        })
        .collect()
}

fn check_filter(params: &SsmParams, p: &Prompt, longest: usize) -> Result<()> {
    if params.f.len() < longest {
        return Err(Error::Shape(format!(
            "filter of length {} needs at least {longest} taps",
            params.f.len()
        )));
    }
    check_prompt(params.d(), p)
}

/// Gated convolution output at the query contracted with `v`.
pub fn ssm_predict(params: &SsmParams, p: &Prompt) -> Result<f64> {
    check_filter(params, p, p.n() + 1)?;
    Ok(ssm_positions(params, p, &[p.n() + 1])[0])
}

pub fn ssm_predict_positions(params: &SsmParams, p: &Prompt, positions: &[usize]) -> Result<Vec<f64>> {
    check_positions(p, positions)?;
    let longest = positions.iter().copied().max().unwrap_or(1);
    check_filter(params, p, longest)?;
    Ok(ssm_positions(params, p, positions))
}

/// Attention weights realizing PGD with preconditioner `W`.
pub fn construct_attn_from_pgd(w: &Matrix) -> Result<AttnParams> {
    if !w.is_square() {
        return Err(Error::Shape("PGD weight must be square".into()));
    }
    let big = w.rows() + 1;
    let mut v = vec![0.0; big];
    v[big - 1] = 1.0;
    AttnParams::new(w.padded(big, big), Matrix::identity(big), Matrix::identity(big), v)
}

/// Gated-convolution weights realizing WPGD with `(W, ω)`; the filter is
/// `[0, ω_n, .., ω_1]`.
pub fn construct_ssm_from_wpgd(w: &Matrix, omega: &[f64]) -> Result<SsmParams> {
    if !w.is_square() {
        return Err(Error::Shape("WPGD weight must be square".into()));
    }
    let d = w.rows();
    let big = d + 1;
    let mut wv = Matrix::zeros(big, big);
    wv.row_mut(d)[..d].fill(1.0);
    let mut v = vec![1.0; big];
    v[d] = 0.0;
    let mut f = vec![0.0];
    f.extend(omega.iter().rev());
    SsmParams::new(Matrix::identity(big), w.transpose().padded(big, big), wv, v, f)
}

/// Causal exponential-smoothing filter: `f_0 = 0` and `f_l = ρ^(l-1)` for lag `l ≥ 1`.
pub fn exponential_filter(rho: f64, len: usize) -> Result<Vec<f64>> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::Domain(format!("|rho| = {} exceeds 1", rho.abs())));
    }
    Ok((0..len).map(|l| if l == 0 { 0.0 } else { rho.powi(l as i32 - 1) }).collect())
}

/// Any trainable model.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    Attn(AttnParams),
    Ssm(SsmParams),
    Lora { base: AttnParams, lora: LoraParams },
}

impl ModelParams {
    pub fn d(&self) -> usize {
        match self {
            ModelParams::Attn(a) | ModelParams::Lora { base: a, .. } => a.d(),
            ModelParams::Ssm(s) => s.d(),
        }
    }

    pub fn predict(&self, p: &Prompt) -> Result<f64> {
        match self {
            ModelParams::Attn(a) => attn_predict(a, p),
            ModelParams::Ssm(s) => ssm_predict(s, p),
            ModelParams::Lora { base, lora } => lora_attn_predict(base, lora, p),
        }
    }

    pub fn predict_positions(&self, p: &Prompt, positions: &[usize]) -> Result<Vec<f64>> {
        match self {
            ModelParams::Attn(a) => attn_predict_positions(a, p, positions),
            ModelParams::Ssm(s) => ssm_predict_positions(s, p, positions),
            ModelParams::Lora { base, lora } => {
                check_prompt(base.d(), p)?;
                check_positions(p, positions)?;
                Ok(attn_positions(base, Some(lora), p, positions))
            }
        }
    }

    /// All tensors in checkpoint order; vectors become single-column matrices.
    pub fn tensors(&self) -> Vec<Matrix> {
        let col = |v: &[f64]| Matrix::new(v.len(), 1, v.to_vec()).expect("finite");
        match self {
            ModelParams::Attn(a) => vec![a.wq.clone(), a.wk.clone(), a.wv.clone(), col(&a.v)],
            ModelParams::Ssm(s) => {
                vec![s.wq.clone(), s.wk.clone(), s.wv.clone(), col(&s.v), col(&s.f)]
            }
            ModelParams::Lora { base, lora } => vec![
                base.wq.clone(),
                base.wk.clone(),
                base.wv.clone(),
                col(&base.v),
                lora.w_up.clone(),
                lora.w_down.clone(),
            ],
        }
    }

    fn kind_code(&self) -> u32 {
        match self {
            ModelParams::Attn(_) => 0,
            ModelParams::Ssm(_) => 1,
            ModelParams::Lora { .. } => 2,
        }
    }

    fn from_tensors(kind: u32, mut t: Vec<Matrix>) -> Result<Self> {
        let want = match kind {
            0 => 4,
            1 => 5,
            2 => 6,
            k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
        };
        if t.len() != want {
            return Err(Error::Checkpoint(format!("kind {kind} needs {want} tensors, found {}", t.len())));
        }
        let mut next = || t.remove(0);
        Ok(match kind {
            0 => ModelParams::Attn(AttnParams::new(next(), next(), next(), next().into_vec())?),
            1 => ModelParams::Ssm(SsmParams::new(
                next(),
                next(),
                next(),
                next().into_vec(),
                next().into_vec(),
            )?),
            _ => {
                let base = AttnParams::new(next(), next(), next(), next().into_vec())?;
                let lora = LoraParams::new(next(), next())?;
                ModelParams::Lora { base, lora }
            }
        })
    }
}

impl Predictor for ModelParams {
    fn predict(&self, p: &Prompt) -> f64 {
        ModelParams::predict(self, p).expect("model and design dimensions agree")
    }
}

/// Checkpoint magic bytes.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ICLCKPT1";

/// Writes `params` as: magic, `u32` kind (0 attention, 1 gated convolution,
/// 2 LoRA), `u32` tensor count, then per tensor `u32` rows, `u32` cols and the
/// row-major entries as little-endian `f64`.
pub fn save_checkpoint(params: &ModelParams, out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    let tensors = params.tensors();
    out.write_all(&params.kind_code().to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for m in &tensors {
        out.write_all(&(m.rows() as u32).to_le_bytes())?;
        out.write_all(&(m.cols() as u32).to_le_bytes())?;
        for v in m.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_checkpoint(input: &mut impl Read) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let kind = read_u32(input)?;
    let count = read_u32(input)?;
    if count > 16 {
        return Err(Error::Checkpoint(format!("implausible tensor count {count}")));
    }
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let (rows, cols) = (read_u32(input)? as usize, read_u32(input)? as usize);
        let mut data = vec![0.0; rows * cols];
        let mut b = [0u8; 8];
        for v in &mut data {
            input.read_exact(&mut b).map_err(|e| Error::Checkpoint(e.to_string()))?;
            *v = f64::from_le_bytes(b);
        }
        tensors.push(Matrix::new(rows, cols, data)?);
    }
    ModelParams::from_tensors(kind, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::DesignSpec;
    use crate::estimators::{pgd_predict, wpgd_predict, PgdWeights, WpgdWeights};
    use crate::numerics::RngStream;

    fn random_matrix(rng: &mut RngStream, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, rng.normal_vec(r * c)).unwrap()
    }

    #[test]
    fn attention_matches_pgd() {
        let mut rng = RngStream::new(4, 0);
        let spec = DesignSpec::isotropic(3, 5, 0.1).unwrap();
        let w = random_matrix(&mut rng, 3, 3);
        let params = construct_attn_from_pgd(&w).unwrap();
        let p = spec.sample(&mut rng);
        let a = attn_predict(&params, &p).unwrap();
        let b = pgd_predict(&PgdWeights::new(w).unwrap(), &p).unwrap();
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn ssm_matches_wpgd() {
        let mut rng = RngStream::new(5, 0);
        let spec = DesignSpec::isotropic(2, 4, 0.0).unwrap();
        let w = random_matrix(&mut rng, 2, 2);
        let omega = rng.normal_vec(4);
        let params = construct_ssm_from_wpgd(&w, &omega).unwrap();
        let p = spec.sample(&mut rng);
        let a = ssm_predict(&params, &p).unwrap();
        let b = wpgd_predict(&WpgdWeights::new(w, omega).unwrap(), &p).unwrap();
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn zero_params_predict_zero() {
        let p = DesignSpec::isotropic(2, 3, 0.0).unwrap().sample(&mut RngStream::new(1, 1));
        assert_eq!(attn_predict(&AttnParams::zeros(2, None), &p).unwrap(), 0.0);
        assert_eq!(ssm_predict(&SsmParams::zeros(2, 4), &p).unwrap(), 0.0);
    }

    #[test]
    fn short_filter_rejected() {
        let p = DesignSpec::isotropic(2, 3, 0.0).unwrap().sample(&mut RngStream::new(1, 1));
        assert!(ssm_predict(&SsmParams::zeros(2, 3), &p).is_err());
    }

    #[test]
    fn exponential_filter_shape() {
        assert_eq!(exponential_filter(0.5, 4).unwrap(), vec![0.0, 1.0, 0.5, 0.25]);
        assert_eq!(exponential_filter(0.0, 3).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(exponential_filter(1.5, 3).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = RngStream::new(8, 8);
        let attn = AttnParams::new(
            random_matrix(&mut rng, 3, 2),
            random_matrix(&mut rng, 3, 2),
            random_matrix(&mut rng, 3, 3),
            rng.normal_vec(3),
        )
        .unwrap();
        let ssm = SsmParams::new(
            random_matrix(&mut rng, 3, 3),
            random_matrix(&mut rng, 3, 3),
            random_matrix(&mut rng, 3, 3),
            rng.normal_vec(3),
            rng.normal_vec(6),
        )
        .unwrap();
        let lora = LoraParams::new(random_matrix(&mut rng, 3, 1), random_matrix(&mut rng, 3, 1)).unwrap();
        for m in [
            ModelParams::Attn(attn.clone()),
            ModelParams::Ssm(ssm),
            ModelParams::Lora { base: attn, lora },
        ] {
            let mut buf = Vec::new();
            save_checkpoint(&m, &mut buf).unwrap();
            assert_eq!(load_checkpoint(&mut buf.as_slice()).unwrap(), m);
        }
        assert!(load_checkpoint(&mut &b"NOPE"[..]).is_err());
    }
}
