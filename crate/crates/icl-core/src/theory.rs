//! Closed-form optima, population losses and Gaussian moment identities.

use crate::designs::DesignSpec;
use crate::error::{Error, Result};
use crate::numerics::{dot, sym_eig, Matrix, MeanVar, RngStream, SpdMatrix, INV_SQRT_FLOOR};
use crate::par::{shard_sizes, Exec};

/// Optimal preconditioner: a full matrix or a multiple of the identity.
#[derive(Clone, Debug, PartialEq)]
pub enum TheoryWeight {
    Full(Matrix),
    ScalarIdentity(f64),
}

/// Optimal weight paired with its risk.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryResult {
    pub weight: TheoryWeight,
    pub risk: f64,
    pub normalized_risk: f64,
}

impl TheoryResult {
    fn new(weight: TheoryWeight, risk: f64, d: usize) -> Self {
        Self { weight, risk, normalized_risk: risk / d as f64 }
    }

    /// The scalar `c` when the weight is `cI` (up to 1e-12 relative error).
    pub fn scalar(&self) -> Option<f64> {
        match &self.weight {
            TheoryWeight::ScalarIdentity(c) => Some(*c),
            TheoryWeight::Full(w) => {
                let c = w.trace() / w.rows() as f64;
                let dev = w.sub(&Matrix::identity(w.rows()).scale(c)).ok()?.frobenius_norm();
                (dev <= 1e-12 * w.frobenius_norm()).then_some(c)
            }
        }
    }

    pub fn weight_matrix(&self, d: usize) -> Matrix {
        match &self.weight {
            TheoryWeight::Full(w) => w.clone(),
            TheoryWeight::ScalarIdentity(c) => Matrix::identity(d).scale(*c),
        }
    }
}

/// The PGD population loss of the independent design as a quadratic in `W`.
#[derive(Clone, Debug)]
pub struct IndependentLoss {
    sx_half: Matrix,
    sx_inv_half: Result<Matrix>,
    sigma: SpdMatrix,
    m: f64,
    n: f64,
}

impl IndependentLoss {
    pub fn new(sigma_x: &SpdMatrix, sigma_beta: &SpdMatrix, noise: f64, n: usize) -> Result<Self> {
        if sigma_x.dim() != sigma_beta.dim() {
            return Err(Error::Shape("covariances of different sizes".into()));
        }
        let sx_half = sigma_x.sqrt();
        let s = sx_half.matmul(sigma_beta.matrix())?.matmul(&sx_half)?.symmetrized();
        let sigma = SpdMatrix::new(s)?;
        let m = sigma.trace() + noise * noise;
        Ok(Self { sx_half, sx_inv_half: sigma_x.inv_sqrt(), sigma, m, n: n as f64 })
    }

    /// `Σ = Σx^{1/2} Σβ Σx^{1/2}`.
    pub fn sigma(&self) -> &SpdMatrix {
        &self.sigma
    }

    /// `M = tr Σ + σ²`.
    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    fn whiten(&self, w: &Matrix) -> Result<Matrix> {
        if w.shape() != (self.dim(), self.dim()) {
            return Err(Error::Shape(format!("weight is {:?}, d = {}", w.shape(), self.dim())));
        }
        self.sx_half.matmul(w)?.matmul(&self.sx_half)
    }

    fn unwhiten(&self, wbar: &Matrix) -> Result<Matrix> {
        let inv = self.sx_inv_half.clone()?;
        inv.matmul(wbar)?.matmul(&inv)
    }

    /// `M − 2n tr(ΣW̄) + n(n+1) tr(ΣW̄ᵀW̄) + nM tr(W̄W̄ᵀ)` with `W̄ = Σx^{1/2} W Σx^{1/2}`.
    pub fn loss(&self, w: &Matrix) -> Result<f64> {
        let wb = self.whiten(w)?;
        let s = self.sigma.matrix();
        let n = self.n;
        let tr_sw = s.inner(&wb.transpose())?;
        let wtw = wb.transpose().matmul(&wb)?;
        let tr_swtw = s.inner(&wtw)?;
        let tr_wwt = wb.inner(&wb)?;
        Ok(self.m - 2.0 * n * tr_sw + n * (n + 1.0) * tr_swtw + n * self.m * tr_wwt)
    }

    /// Gradient of [`Self::loss`] with respect to `W`.
    pub fn gradient(&self, w: &Matrix) -> Result<Matrix> {
        let wb = self.whiten(w)?;
        let s = self.sigma.matrix();
        let n = self.n;
        let g_bar = s
            .scale(-2.0 * n)
            .add(&wb.matmul(s)?.scale(2.0 * n * (n + 1.0)))?
            .add(&wb.scale(2.0 * n * self.m))?;
        self.sx_half.matmul(&g_bar)?.matmul(&self.sx_half)
    }
}

fn require_full_rank(sigma: &SpdMatrix) -> Result<()> {
    if sigma.min_eigenvalue() < INV_SQRT_FLOOR {
        return Err(Error::Singular(sigma.min_eigenvalue()));
    }
    Ok(())
}

/// Optimal PGD weight and risk under the independent design.
pub fn optimal_independent(
    sigma_x: &SpdMatrix,
    sigma_beta: &SpdMatrix,
    noise: f64,
    n: usize,
) -> Result<TheoryResult> {
    let model = IndependentLoss::new(sigma_x, sigma_beta, noise, n)?;
    require_full_rank(sigma_x)?;
    require_full_rank(model.sigma())?;
    let (m, nf) = (model.m(), n as f64);
    let wbar = model.sigma().map_spectrum(|l| l / ((nf + 1.0) * l + m));
    let risk = m - model
        .sigma()
        .eigenvalues()
        .iter()
        .map(|&l| nf * l * l / ((nf + 1.0) * l + m))
        .sum::<f64>();
    let w = model.unwhiten(&wbar)?;
    Ok(TheoryResult::new(TheoryWeight::Full(w), risk, model.dim()))
}

/// Exact PGD population risk of `W` under the independent design.
pub fn population_loss(
    w: &Matrix,
    sigma_x: &SpdMatrix,
    sigma_beta: &SpdMatrix,
    noise: f64,
    n: usize,
) -> Result<f64> {
    IndependentLoss::new(sigma_x, sigma_beta, noise, n)?.loss(w)
}

/// Exact optimum of the scalar-preconditioned RAG design with general `γ²`.
pub fn rag_exact(alpha: f64, noise: f64, d: usize, n: usize, gamma2: f64) -> TheoryResult {
    let (a2, s2) = (alpha * alpha, noise * noise);
    let (df, nf) = (d as f64, n as f64);
    let lead = a2 * (df + 2.0) + gamma2;
    // E[y s] / (n d) and E[s²] / (n d) for the score s = xᵀXᵀy.
    let n1 = lead;
    let n2 = a2 * a2 * nf * (df + 2.0) * (df + 4.0)
        + a2 * gamma2 * (df + 2.0) * (df + 2.0 * nf + 3.0)
        + gamma2 * gamma2 * (df + nf + 1.0)
        + s2 * lead;
    let c = n1 / n2;
    let risk = df + s2 - c * nf * df * lead;
    TheoryResult::new(TheoryWeight::ScalarIdentity(c), risk, d)
}

/// `γ² = 1 − α²` default of [`rag_exact`].
pub fn rag_exact_default(alpha: f64, noise: f64, d: usize, n: usize) -> TheoryResult {
    rag_exact(alpha, noise, d, n, 1.0 - alpha * alpha)
}

pub fn rag_approx(alpha: f64, noise: f64, d: usize, n: usize) -> TheoryResult {
    let (df, nf, s2) = (d as f64, n as f64, noise * noise);
    let kappa = alpha * alpha * df + 1.0;
    let denom = kappa * nf + df + s2;
    TheoryResult::new(TheoryWeight::ScalarIdentity(1.0 / denom), df + s2 - kappa * nf * df / denom, d)
}

/// Exact optimum of the scalar-preconditioned task-feature design with general `γ²`.
pub fn task_feature_exact(alpha: f64, noise: f64, d: usize, n: usize, gamma2: f64) -> TheoryResult {
    let (di, ni) = (d as i128, n as i128);
    let delta0 = di + 2;
    let delta1 = (di + 2) * (di + 4);
    let delta2 = (di + 2) * (di + 4) * (di + 6) * ni;
    let delta3 = (di + 2) * (di + 4) * (3 * ni + 4);
    let delta4 = (di + 2) * (3 * ni + di + 3) + (di + 8);
    let tail = di + ni + 1;
    let (d0, d1, d2, d3, d4) =
        (delta0 as f64, delta1 as f64, delta2 as f64, delta3 as f64, delta4 as f64);
    let (a2, s2) = (alpha * alpha, noise * noise);
    let (a4, a6) = (a2 * a2, a2 * a2 * a2);
    let num = d1 * a4 + 2.0 * d0 * a2 + 1.0;
    let den = d2 * a6
        + d3 * a4
        + d4 * a2
        + tail as f64
        + s2 * (d0 * a4 + 2.0 * a2 + 1.0) / gamma2;
    let c = num / den;
    let df = d as f64;
    let risk = df * gamma2 * (d0 * a2 + 1.0) + s2 - c * n as f64 * df * gamma2 * num;
    TheoryResult::new(TheoryWeight::ScalarIdentity(c), risk, d)
}

/// `γ² = 1/κ` default of [`task_feature_exact`].
pub fn task_feature_exact_default(alpha: f64, noise: f64, d: usize, n: usize) -> TheoryResult {
    let kappa = alpha * alpha * d as f64 + 1.0;
    task_feature_exact(alpha, noise, d, n, 1.0 / kappa)
}

pub fn task_feature_approx(alpha: f64, noise: f64, d: usize, n: usize) -> TheoryResult {
    let (df, nf, s2) = (d as f64, n as f64, noise * noise);
    let kappa = alpha * alpha * df + 1.0;
    let denom = kappa * nf + (df + s2) / kappa;
    TheoryResult::new(TheoryWeight::ScalarIdentity(1.0 / denom), df + s2 - kappa * nf * df / denom, d)
}

/// Optimal rank-`r` symmetric PGD weight and its risk.
pub fn low_rank_risk(
    sigma_x: &SpdMatrix,
    sigma_beta: &SpdMatrix,
    noise: f64,
    n: usize,
    r: usize,
) -> Result<(TheoryResult, Matrix)> {
    let model = IndependentLoss::new(sigma_x, sigma_beta, noise, n)?;
    let d = model.dim();
    if r == 0 || r > d {
        return Err(Error::Domain(format!("rank {r} outside 1..={d}")));
    }
    require_full_rank(sigma_x)?;
    let (m, nf) = (model.m(), n as f64);
    let lambdas = model.sigma().eigenvalues();
    let u = model.sigma().eigenvectors();
    let e: Vec<f64> = lambdas[..r].iter().map(|&l| l / (m + (nf + 1.0) * l)).collect();
    let wbar = Matrix::from_fn(d, d, |a, b| (0..r).map(|k| u[(a, k)] * e[k] * u[(b, k)]).sum());
    let risk = m - lambdas[..r].iter().map(|&l| nf * l * l / ((nf + 1.0) * l + m)).sum::<f64>();
    let w = model.unwhiten(&wbar)?;
    Ok((TheoryResult::new(TheoryWeight::Full(w.clone()), risk, d), w))
}

/// Jointly diagonal old/new task spectra for the LoRA analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumPair {
    lambda_old: Vec<f64>,
    lambda_new: Vec<f64>,
    m: f64,
    n: usize,
}

impl SpectrumPair {
    pub fn new(lambda_old: Vec<f64>, lambda_new: Vec<f64>, m: f64, n: usize) -> Result<Self> {
        if lambda_old.len() != lambda_new.len() {
            return Err(Error::Shape(format!(
                "spectra of length {} and {}",
                lambda_old.len(),
                lambda_new.len()
            )));
        }
        if lambda_old.iter().chain(&lambda_new).any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Domain("eigenvalues must be positive".into()));
        }
        let (t_old, t_new): (f64, f64) = (lambda_old.iter().sum(), lambda_new.iter().sum());
        let tol = 1e-9 * m.abs().max(1.0);
        if (t_old - m).abs() > tol || (t_new - m).abs() > tol {
            return Err(Error::Domain(format!(
                "traces {t_old} and {t_new} must both equal M = {m}"
            )));
        }
        Ok(Self { lambda_old, lambda_new, m, n })
    }

    pub fn lambda_old(&self) -> &[f64] {
        &self.lambda_old
    }

    pub fn lambda_new(&self) -> &[f64] {
        &self.lambda_new
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.lambda_old.len()
    }

    /// Optimal per-coordinate risk `(λ+M)/(n+1+M/λ)`.
    pub fn optimal_term(&self, lambda: f64) -> f64 {
        (lambda + self.m) / (self.n as f64 + 1.0 + self.m / lambda)
    }

    /// Risk contributed by coordinate `λ` under a diagonal weight `w`.
    pub fn coordinate_risk(&self, lambda: f64, w: f64) -> f64 {
        let nf = self.n as f64;
        lambda - 2.0 * nf * lambda * w + nf * (nf + 1.0) * lambda * w * w + nf * self.m * w * w
    }

    /// Optimal diagonal weight `λ/((n+1)λ + M)`.
    pub fn optimal_weight(&self, lambda: f64) -> f64 {
        lambda / ((self.n as f64 + 1.0) * lambda + self.m)
    }
}

/// A subset-selected LoRA risk value.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraChoice {
    pub value: f64,
    /// Adapted coordinates, 0-based, ascending.
    pub chosen: Vec<usize>,
}

fn select_top(base: &[f64], adapted: &[f64], r: usize) -> LoraChoice {
    let mut gains: Vec<(usize, f64)> =
        base.iter().zip(adapted).enumerate().map(|(i, (b, a))| (i, b - a)).collect();
    gains.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut chosen: Vec<usize> =
        gains.iter().take(r).filter(|(_, g)| *g > 0.0).map(|(i, _)| *i).collect();
    chosen.sort_unstable();
    let value = (0..base.len())
        .map(|i| if chosen.contains(&i) { adapted[i] } else { base[i] })
        .sum();
    LoraChoice { value, chosen }
}

fn check_rank(s: &SpectrumPair, r: usize) -> Result<()> {
    if r > s.d() {
        return Err(Error::Domain(format!("rank {r} exceeds d = {}", s.d())));
    }
    Ok(())
}

/// The per-coordinate LoRA bound: old-spectrum terms outside `I`, new-spectrum terms inside.
pub fn lora_bound(s: &SpectrumPair, r: usize) -> Result<LoraChoice> {
    check_rank(s, r)?;
    let base: Vec<f64> = s.lambda_old.iter().map(|&l| s.optimal_term(l)).collect();
    let adapted: Vec<f64> = s.lambda_new.iter().map(|&l| s.optimal_term(l)).collect();
    Ok(select_top(&base, &adapted, r))
}

/// Exact new-distribution risk of the old optimal diagonal weight with the best
/// `r` coordinates re-optimized.
pub fn lora_adapted_risk(s: &SpectrumPair, r: usize) -> Result<LoraChoice> {
    check_rank(s, r)?;
    let base: Vec<f64> = s
        .lambda_old
        .iter()
        .zip(&s.lambda_new)
        .map(|(&lo, &ln)| s.coordinate_risk(ln, s.optimal_weight(lo)))
        .collect();
    let adapted: Vec<f64> = s.lambda_new.iter().map(|&l| s.optimal_term(l)).collect();
    Ok(select_top(&base, &adapted, r))
}

/// Which Gaussian moment identity to evaluate.
#[derive(Clone, Debug, PartialEq)]
pub enum MomentQuery {
    /// `E[u^order]`, `u ~ N(0, σ²)`, even order.
    EvenScalar { sigma: f64, order: u32 },
    /// `E[(uᵀWu)(uᵀW'u)]`.
    Quartic { w: Matrix, w2: Matrix },
    /// `E[(uᵀWv vᵀu)²]` with `u, v` independent.
    CrossQuartic { w: Matrix },
    /// `E[(uᵀWu)(uᵀW'u)‖u‖²]`.
    Sextic { w: Matrix, w2: Matrix },
    /// `E[(uᵀWu)(uᵀW'u)‖u‖⁴]`.
    Octic { w: Matrix, w2: Matrix },
}

impl MomentQuery {
    pub fn kind(&self) -> &'static str {
        match self {
            MomentQuery::EvenScalar { .. } => "even_scalar",
            MomentQuery::Quartic { .. } => "quartic",
            MomentQuery::CrossQuartic { .. } => "cross_quartic",
            MomentQuery::Sextic { .. } => "sextic",
            MomentQuery::Octic { .. } => "octic",
        }
    }

    fn check(&self) -> Result<usize> {
        match self {
            MomentQuery::EvenScalar { order, .. } => {
                if order % 2 == 1 {
                    return Err(Error::Domain(format!("order {order} is odd")));
                }
                Ok(1)
            }
            MomentQuery::CrossQuartic { w } => {
                if !w.is_square() {
                    return Err(Error::Shape("W must be square".into()));
                }
                Ok(w.rows())
            }
            MomentQuery::Quartic { w, w2 }
            | MomentQuery::Sextic { w, w2 }
            | MomentQuery::Octic { w, w2 } => {
                if !w.is_square() || w.shape() != w2.shape() {
                    return Err(Error::Shape("W and W' must be square and equal in size".into()));
                }
                Ok(w.rows())
            }
        }
    }
}

fn double_factorial(k: u32) -> f64 {
    (1..=k).rev().step_by(2).map(f64::from).product()
}

fn quartic_form(w: &Matrix, w2: &Matrix) -> Result<f64> {
    let wwp = w.matmul(w2)?;
    Ok(w.trace() * w2.trace() + w2.inner(w)? + wwp.trace())
}

/// The closed-form identities.
pub fn moment_identity(q: &MomentQuery) -> Result<f64> {
    let d = q.check()? as f64;
    match q {
        MomentQuery::EvenScalar { sigma, order } => {
            Ok(sigma.powi(*order as i32) * double_factorial(order.saturating_sub(1)))
        }
        MomentQuery::Quartic { w, w2 } => quartic_form(w, w2),
        MomentQuery::CrossQuartic { w } => {
            let lam2: f64 = w.diag().iter().map(|v| v * v).sum();
            Ok(3.0 * lam2 + (d + 4.0) * w.inner(w)? + w.matmul(w)?.trace())
        }
        MomentQuery::Sextic { w, w2 } => Ok((d + 4.0) * quartic_form(w, w2)?),
        MomentQuery::Octic { w, w2 } => Ok((d + 4.0) * (d + 6.0) * quartic_form(w, w2)?),
    }
}

/// `E[(uᵀWv vᵀu)²]` derived by conditioning on `v`:
/// `(d+4) tr(WWᵀ) + 2 (tr W)² + 2 tr(W²)`; equals `3d(d+2)` at `W = I`.
pub fn cross_quartic_by_conditioning(w: &Matrix) -> Result<f64> {
    if !w.is_square() {
        return Err(Error::Shape("W must be square".into()));
    }
    let d = w.rows() as f64;
    let tr = w.trace();
    Ok((d + 4.0) * w.inner(w)? + 2.0 * tr * tr + 2.0 * w.matmul(w)?.trace())
}

fn quad(w: &Matrix, u: &[f64]) -> f64 {
    (0..w.rows()).map(|r| u[r] * dot(w.row(r), u)).sum()
}

const MC_SHARD: usize = 1 << 14;

/// Monte-Carlo estimate `(mean, stderr)` of the defining expectation.
pub fn mc_moment_oracle(q: &MomentQuery, samples: usize, rng: &RngStream) -> Result<(f64, f64)> {
    mc_moment_oracle_with(q, samples, rng, Exec::default())
}

pub fn mc_moment_oracle_with(
    q: &MomentQuery,
    samples: usize,
    rng: &RngStream,
    exec: Exec,
) -> Result<(f64, f64)> {
    let d = q.check()?;
    let sizes = shard_sizes(samples, MC_SHARD);
    let parts = exec.map(sizes.len(), |s| {
        let mut r = rng.derive(s as u64);
        let mut u = vec![0.0; d];
        let mut v = vec![0.0; d];
        let mut acc = MeanVar::default();
        for _ in 0..sizes[s] {
            r.fill_normal(&mut u);
            let val = match q {
                MomentQuery::EvenScalar { sigma, order } => (sigma * u[0]).powi(*order as i32),
                MomentQuery::Quartic { w, w2 } => quad(w, &u) * quad(w2, &u),
                MomentQuery::CrossQuartic { w } => {
                    r.fill_normal(&mut v);
                    let uwv: f64 = (0..d).map(|a| u[a] * dot(w.row(a), &v)).sum();
                    let t = uwv * dot(&v, &u);
                    t * t
                }
                MomentQuery::Sextic { w, w2 } => quad(w, &u) * quad(w2, &u) * dot(&u, &u),
                MomentQuery::Octic { w, w2 } => {
                    let nn = dot(&u, &u);
                    quad(w, &u) * quad(w2, &u) * nn * nn
                }
            };
            acc.push(val);
        }
        acc
    });
    let mut total = MeanVar::default();
    parts.iter().for_each(|p| total.merge(p));
    Ok((total.mean, total.stderr()))
}

/// Smallest eigenvalue of a Monte-Carlo estimate of the (constant) Hessian of
/// the PGD population loss in `vec(W)`.
pub fn check_strong_convexity(spec: &DesignSpec, probes: usize, rng: &RngStream) -> Result<f64> {
    let d = spec.d();
    if d > 4 {
        return Err(Error::Domain(format!("Hessian check limited to d <= 4, got {d}")));
    }
    let k = d * d;
    let sizes = shard_sizes(probes, MC_SHARD);
    let parts = Exec::default().map(sizes.len(), |s| {
        let mut r = rng.derive(s as u64);
        let mut p = spec.empty_prompt();
        let mut acc = vec![0.0; k * k];
        let mut phi = vec![0.0; k];
        for _ in 0..sizes[s] {
            spec.sample_into(&mut p, &mut r);
            let h = p.xty();
            for a in 0..d {
                for b in 0..d {
                    phi[a * d + b] = p.x_query[a] * h[b];
                }
            }
            for i in 0..k {
                for j in 0..k {
                    acc[i * k + j] += phi[i] * phi[j];
                }
            }
        }
        acc
    });
    let mut hess = vec![0.0; k * k];
    for part in &parts {
        for (h, v) in hess.iter_mut().zip(part) {
            *h += v;
        }
    }
    let scale = 2.0 / probes.max(1) as f64;
    let hess = Matrix::new(k, k, hess.iter().map(|v| v * scale).collect())?.symmetrized();
    let (vals, _) = sym_eig(&hess)?;
    Ok(*vals.last().unwrap_or(&0.0))
}
