//! PGD/WPGD predictors, Monte-Carlo risk and numerical argmin oracles.

use crate::designs::{Design, DesignSpec, Prompt};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, MeanVar, RngStream, SpdMatrix};
use crate::par::{shard_sizes, Exec};
use crate::theory::IndependentLoss;

/// Anything that maps a prompt to a prediction of its query label.
pub trait Predictor: Sync {
    fn predict(&self, p: &Prompt) -> f64;
}

/// Adapter turning a closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&Prompt) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn predict(&self, p: &Prompt) -> f64 {
        (self.0)(p)
    }
}

/// Always predicts zero.
pub struct ZeroPredictor;

impl Predictor for ZeroPredictor {
    fn predict(&self, _: &Prompt) -> f64 {
        0.0
    }
}

/// PGD preconditioner `W` (`ŷ = xᵀWXᵀy`).
#[derive(Clone, Debug, PartialEq)]
pub struct PgdWeights {
    pub w: Matrix,
}

impl PgdWeights {
    pub fn new(w: Matrix) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::Shape(format!("PGD weight must be square, got {:?}", w.shape())));
        }
        Ok(Self { w })
    }

    pub fn scalar(d: usize, c: f64) -> Self {
        Self { w: Matrix::identity(d).scale(c) }
    }
}

/// Sample-weighted PGD (`ŷ = xᵀWXᵀ(ω ⊙ y)`).
#[derive(Clone, Debug, PartialEq)]
pub struct WpgdWeights {
    pub w: Matrix,
    pub omega: Vec<f64>,
}

impl WpgdWeights {
    pub fn new(w: Matrix, omega: Vec<f64>) -> Result<Self> {
        PgdWeights::new(w.clone())?;
        Ok(Self { w, omega })
    }
}

fn check_weight(w: &Matrix, p: &Prompt) -> Result<()> {
    if w.shape() != (p.d(), p.d()) {
        return Err(Error::Shape(format!("weight {:?} for prompt with d = {}", w.shape(), p.d())));
    }
    Ok(())
}

fn weighted_predict(w: &Matrix, p: &Prompt, omega: Option<&[f64]>) -> f64 {
    let mut h = vec![0.0; p.d()];
    for i in 0..p.n() {
        let yi = omega.map_or(p.y[i], |o| o[i] * p.y[i]);
        crate::numerics::axpy(yi, p.x.row(i), &mut h);
    }
    (0..p.d()).map(|r| p.x_query[r] * dot(w.row(r), &h)).sum()
}

pub fn pgd_predict(w: &PgdWeights, p: &Prompt) -> Result<f64> {
    check_weight(&w.w, p)?;
    Ok(weighted_predict(&w.w, p, None))
}

pub fn wpgd_predict(w: &WpgdWeights, p: &Prompt) -> Result<f64> {
    check_weight(&w.w, p)?;
    if w.omega.len() != p.n() {
        return Err(Error::Shape(format!("omega of length {} for n = {}", w.omega.len(), p.n())));
    }
    Ok(weighted_predict(&w.w, p, Some(&w.omega)))
}

impl Predictor for PgdWeights {
    fn predict(&self, p: &Prompt) -> f64 {
        weighted_predict(&self.w, p, None)
    }
}

impl Predictor for WpgdWeights {
    fn predict(&self, p: &Prompt) -> f64 {
        weighted_predict(&self.w, p, Some(&self.omega))
    }
}

/// Monte-Carlo risk with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl RiskEstimate {
    pub fn from_stats(stats: &MeanVar) -> Self {
        Self { mean: stats.mean, stderr: stats.stderr(), trials: stats.count as usize }
    }

    /// Risk divided by the dimension.
    pub fn normalized(&self, d: usize) -> RiskEstimate {
        RiskEstimate { mean: self.mean / d as f64, stderr: self.stderr / d as f64, ..*self }
    }

    /// `|self − target| ≤ k · stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Prompts per Monte-Carlo shard; shard `s` uses `rng.derive(s)`.
pub const RISK_SHARD: usize = 4096;

pub fn mc_risk(
    predictor: &dyn Predictor,
    spec: &DesignSpec,
    trials: usize,
    rng: &RngStream,
) -> Result<RiskEstimate> {
    mc_risk_with(predictor, spec, trials, rng, Exec::default())
}

pub fn mc_risk_with(
    predictor: &dyn Predictor,
    spec: &DesignSpec,
    trials: usize,
    rng: &RngStream,
    exec: Exec,
) -> Result<RiskEstimate> {
    if trials < 2 {
        return Err(Error::Domain("mc_risk needs at least two trials".into()));
    }
    let sizes = shard_sizes(trials, RISK_SHARD);
    let parts = exec.map(sizes.len(), |s| {
        let mut r = rng.derive(s as u64);
        let mut p = spec.empty_prompt();
        let mut acc = MeanVar::default();
        for _ in 0..sizes[s] {
            spec.sample_into(&mut p, &mut r);
            let e = p.y_query - predictor.predict(&p);
            acc.push(e * e);
        }
        acc
    });
    let mut total = MeanVar::default();
    parts.iter().for_each(|p| total.merge(p));
    if !total.mean.is_finite() {
        return Err(Error::NonFinite("risk estimate".into()));
    }
    Ok(RiskEstimate::from_stats(&total))
}

/// Streaming mean and covariance of a fixed-length vector.
#[derive(Clone, Debug)]
struct CovStats {
    count: f64,
    mean: Vec<f64>,
    co: Vec<f64>,
}

impl CovStats {
    fn new(k: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; k], co: vec![0.0; k * k] }
    }

    fn push(&mut self, x: &[f64]) {
        let k = self.mean.len();
        self.count += 1.0;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / self.count;
        }
        for i in 0..k {
            for j in 0..k {
                self.co[i * k + j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn merge(&mut self, o: &CovStats) {
        if o.count == 0.0 {
            return;
        }
        let k = self.mean.len();
        let n = self.count + o.count;
        let delta: Vec<f64> = o.mean.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for i in 0..k {
            for j in 0..k {
                self.co[i * k + j] += o.co[i * k + j] + delta[i] * delta[j] * self.count * o.count / n;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * o.count / n;
        }
        self.count = n;
    }

    /// Covariance of the sample mean.
    fn mean_cov(&self, i: usize, j: usize) -> f64 {
        let k = self.mean.len();
        self.co[i * k + j] / (self.count - 1.0) / self.count
    }
}

/// How `L(c) = risk of cI` is evaluated.
#[derive(Clone, Copy, Debug)]
pub enum ScalarOracle<'a> {
    /// Exact population loss (independent designs only).
    ClosedLoss,
    /// Common-random-number Monte Carlo.
    MonteCarlo { trials: usize, rng: &'a RngStream },
}

/// Quadratic fit of `L(c)` and its vertex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarFit {
    pub c_star: f64,
    pub c_stderr: f64,
    /// Fitted `L(c⋆)`.
    pub min_risk: f64,
    pub min_risk_stderr: f64,
    /// Leading coefficient of the fitted quadratic.
    pub curvature: f64,
}

/// Coefficients `(a, b, c0)` of the parabola through three points.
fn parabola(cs: [f64; 3], ls: [f64; 3]) -> [f64; 3] {
    let [x0, x1, x2] = cs;
    let [y0, y1, y2] = ls;
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    let b = d01 - a * (x0 + x1);
    let c0 = y0 - a * x0 * x0 - b * x0;
    [a, b, c0]
}

/// Fits `L(c)` from evaluations at `c_lo`, the midpoint and `c_hi`, returning the vertex.
pub fn numeric_optimal_scalar(
    spec: &DesignSpec,
    c_range: (f64, f64),
    oracle: ScalarOracle<'_>,
) -> Result<ScalarFit> {
    let (lo, hi) = c_range;
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty scalar range ({lo}, {hi})")));
    }
    let cs = [lo, 0.5 * (lo + hi), hi];
    match oracle {
        ScalarOracle::ClosedLoss => {
            let (sx, sb, sigma) = match spec.design() {
                Design::Independent { sigma_x, sigma_beta, sigma } => (sigma_x, sigma_beta, *sigma),
                _ => {
                    return Err(Error::Domain(
                        "closed-form scalar loss only exists for the independent design".into(),
                    ))
                }
            };
            let loss = IndependentLoss::new(sx, sb, sigma, spec.n())?;
            let d = spec.d();
            let mut ls = [0.0; 3];
            for (l, &c) in ls.iter_mut().zip(&cs) {
                *l = loss.loss(&Matrix::identity(d).scale(c))?;
            }
            let [a, b, c0] = parabola(cs, ls);
            if a <= 0.0 {
                return Err(Error::Diagnostic(format!("non-convex scalar fit (a = {a:e})")));
            }
            let c_star = -b / (2.0 * a);
            Ok(ScalarFit {
                c_star,
                c_stderr: 0.0,
                min_risk: c0 - b * b / (4.0 * a),
                min_risk_stderr: 0.0,
                curvature: a,
            })
        }
        ScalarOracle::MonteCarlo { trials, rng } => {
            if trials < 2 {
                return Err(Error::Domain("scalar fit needs at least two trials".into()));
            }
            let sizes = shard_sizes(trials, RISK_SHARD);
            let parts = Exec::default().map(sizes.len(), |s| {
                let mut r = rng.derive(s as u64);
                let mut p = spec.empty_prompt();
                let mut acc = CovStats::new(3);
                for _ in 0..sizes[s] {
                    spec.sample_into(&mut p, &mut r);
                    let score = dot(&p.x_query, &p.xty());
                    let ls = cs.map(|c| (p.y_query - c * score).powi(2));
                    acc.push(&parabola(cs, ls));
                }
                acc
            });
            let mut st = CovStats::new(3);
            parts.iter().for_each(|p| st.merge(p));
            let (a, b, c0) = (st.mean[0], st.mean[1], st.mean[2]);
            let a_se = st.mean_cov(0, 0).sqrt();
            if a < 3.0 * a_se {
                return Err(Error::Diagnostic(format!(
                    "scalar fit not convex beyond noise (a = {a:e} ± {a_se:e})"
                )));
            }
            let c_star = -b / (2.0 * a);
            // Delta method on c⋆ = −b / 2a.
            let (gb, ga) = (-1.0 / (2.0 * a), b / (2.0 * a * a));
            let c_var = gb * gb * st.mean_cov(1, 1)
                + ga * ga * st.mean_cov(0, 0)
                + 2.0 * ga * gb * st.mean_cov(0, 1);
            // The slope vanishes at the vertex, so L(c⋆) varies like the mean of a c⋆² + b c⋆ + c0.
            let g = [c_star * c_star, c_star, 1.0];
            let mut l_var = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    l_var += g[i] * g[j] * st.mean_cov(i, j);
                }
            }
            Ok(ScalarFit {
                c_star,
                c_stderr: c_var.max(0.0).sqrt(),
                min_risk: c0 - b * b / (4.0 * a),
                min_risk_stderr: l_var.max(0.0).sqrt(),
                curvature: a,
            })
        }
    }
}

/// Maximum conjugate-gradient steps in [`numeric_optimal_w`].
pub const MAX_W_STEPS: usize = 100_000;

/// Minimizes the exact independent-design population loss over `W` by
/// conjugate gradients with exact line search.
pub fn numeric_optimal_w(
    sigma_x: &SpdMatrix,
    sigma_beta: &SpdMatrix,
    noise: f64,
    n: usize,
) -> Result<Matrix> {
    sigma_x.inv_sqrt()?;
    sigma_beta.inv_sqrt()?;
    let loss = IndependentLoss::new(sigma_x, sigma_beta, noise, n)?;
    let d = loss.dim();
    let zero_grad = loss.gradient(&Matrix::zeros(d, d))?;
    let hess = |p: &Matrix| -> Result<Matrix> { loss.gradient(p)?.sub(&zero_grad) };
    let mut w = Matrix::zeros(d, d);
    let mut r = zero_grad.scale(-1.0);
    let mut p = r.clone();
    let mut rr = r.inner(&r)?;
    for step in 0..MAX_W_STEPS {
        if rr.sqrt() <= 1e-10 {
            let g = loss.gradient(&w)?;
            if g.frobenius_norm() <= 1e-10 {
                return Ok(w);
            }
            r = g.scale(-1.0);
            p = r.clone();
            rr = r.inner(&r)?;
            continue;
        }
        let hp = hess(&p)?;
        let php = p.inner(&hp)?;
        if php <= 0.0 {
            return Err(Error::Diagnostic(format!("loss not strictly convex along step {step}")));
        }
        let alpha = rr / php;
        w = w.add(&p.scale(alpha))?;
        if (step + 1) % (d * d) == 0 {
            r = loss.gradient(&w)?.scale(-1.0);
            p = r.clone();
            rr = r.inner(&r)?;
            continue;
        }
        r = r.sub(&hp.scale(alpha))?;
        let rr_new = r.inner(&r)?;
        p = r.add(&p.scale(rr_new / rr))?;
        rr = rr_new;
    }
    Err(Error::Diagnostic(format!("no convergence in {MAX_W_STEPS} steps")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt_d1() -> Prompt {
        Prompt {
            x: Matrix::new(2, 1, vec![1.0, 2.0]).unwrap(),
            y: vec![3.0, 4.0],
            x_query: vec![5.0],
            y_query: 0.0,
            beta: vec![0.0],
            noises: vec![0.0; 3],
        }
    }

    #[test]
    fn pgd_hand_example() {
        let w = PgdWeights::new(Matrix::identity(1)).unwrap();
        assert_eq!(pgd_predict(&w, &prompt_d1()).unwrap(), 55.0);
        let z = PgdWeights::new(Matrix::zeros(1, 1)).unwrap();
        assert_eq!(pgd_predict(&z, &prompt_d1()).unwrap(), 0.0);
        let bad = PgdWeights::new(Matrix::identity(2)).unwrap();
        assert!(pgd_predict(&bad, &prompt_d1()).is_err());
    }

    #[test]
    fn wpgd_hand_example() {
        let w = WpgdWeights::new(Matrix::identity(1), vec![1.0, 0.0]).unwrap();
        assert_eq!(wpgd_predict(&w, &prompt_d1()).unwrap(), 15.0);
        let ones = WpgdWeights::new(Matrix::identity(1), vec![1.0, 1.0]).unwrap();
        assert_eq!(wpgd_predict(&ones, &prompt_d1()).unwrap(), 55.0);
        let short = WpgdWeights::new(Matrix::identity(1), vec![1.0]).unwrap();
        assert!(wpgd_predict(&short, &prompt_d1()).is_err());
    }

    #[test]
    fn parabola_recovers_coefficients() {
        let f = |c: f64| 2.0 * c * c - 3.0 * c + 1.5;
        let cs = [0.1, 0.4, 0.9];
        let [a, b, c0] = parabola(cs, cs.map(f));
        assert!((a - 2.0).abs() < 1e-12 && (b + 3.0).abs() < 1e-12 && (c0 - 1.5).abs() < 1e-12);
    }

    #[test]
    fn closed_scalar_corollary() {
        let spec = DesignSpec::isotropic(4, 6, 0.0).unwrap();
        let fit = numeric_optimal_scalar(&spec, (0.0, 0.2), ScalarOracle::ClosedLoss).unwrap();
        assert!((fit.c_star - 1.0 / 11.0).abs() < 1e-9);
    }

    #[test]
    fn numeric_w_isotropic() {
        let i = SpdMatrix::identity(3);
        let w = numeric_optimal_w(&i, &i, 0.0, 5).unwrap();
        let target = Matrix::identity(3).scale(1.0 / 9.0);
        assert!(w.sub(&target).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn numeric_w_singular_beta() {
        let sb = SpdMatrix::diagonal(&[1.0, 1e-12]).unwrap();
        let r = numeric_optimal_w(&SpdMatrix::identity(2), &sb, 0.0, 4);
        assert!(matches!(r, Err(Error::Singular(_))));
    }

    #[test]
    fn zero_predictor_risk() {
        let spec = DesignSpec::isotropic(3, 4, 0.5).unwrap();
        let r = mc_risk(&ZeroPredictor, &spec, 20_000, &RngStream::new(2, 2)).unwrap();
        assert!(r.within(3.25, 3.0), "{r:?}");
    }
}
