//! Data distributions for in-context regression prompts and token assembly.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, RngStream, SpdMatrix, INV_SQRT_FLOOR};

/// Covariance shorthand used in configs.
///
/// Text forms: `identity`, `diag(a,b,..)`, `harmonic` (eigenvalues ∝ 1/i),
/// `geometric` (∝ 2^-i), `equicorr(rho)` and `full(a,b;c,d)`. The harmonic and
/// geometric spectra are normalized to trace `d`.
#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Identity,
    Diag(Vec<f64>),
    Harmonic,
    Geometric,
    Equicorr(f64),
    Full(Matrix),
}

impl Covariance {
    pub fn build(&self, d: usize) -> Result<SpdMatrix> {
        let m = match self {
            Covariance::Identity => return Ok(SpdMatrix::identity(d)),
            Covariance::Diag(v) => {
                if v.len() != d {
                    return Err(Error::Shape(format!("diag of length {} for d = {d}", v.len())));
                }
                Matrix::from_diag(v)
            }
            Covariance::Harmonic => {
                Matrix::from_diag(&normalized_spectrum(d, |i| 1.0 / i as f64))
            }
            Covariance::Geometric => {
                Matrix::from_diag(&normalized_spectrum(d, |i| 0.5f64.powi(i as i32)))
            }
            Covariance::Equicorr(rho) => {
                Matrix::from_fn(d, d, |r, c| if r == c { 1.0 } else { *rho })
            }
            Covariance::Full(m) => m.clone(),
        };
        SpdMatrix::new(m)
    }

    pub fn from_matrix(m: &Matrix) -> Covariance {
        if *m == Matrix::identity(m.rows()) {
            return Covariance::Identity;
        }
        let off_diag_zero =
            (0..m.rows()).all(|r| (0..m.cols()).all(|c| r == c || m[(r, c)] == 0.0));
        if off_diag_zero {
            Covariance::Diag(m.diag())
        } else {
            Covariance::Full(m.clone())
        }
    }
}

/// Spectrum `g(1), .., g(d)` scaled to sum to `d`.
pub fn normalized_spectrum(d: usize, g: impl Fn(usize) -> f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=d).map(g).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v * d as f64 / total).collect()
}

fn join(v: &[f64], sep: &str) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(sep)
}

impl fmt::Display for Covariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Covariance::Identity => write!(f, "identity"),
            Covariance::Diag(v) => write!(f, "diag({})", join(v, ",")),
            Covariance::Harmonic => write!(f, "harmonic"),
            Covariance::Geometric => write!(f, "geometric"),
            Covariance::Equicorr(r) => write!(f, "equicorr({r})"),
            Covariance::Full(m) => {
                let rows: Vec<String> = (0..m.rows()).map(|r| join(m.row(r), ",")).collect();
                write!(f, "full({})", rows.join(";"))
            }
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("bad number '{t}' in covariance")))
        })
        .collect()
}

impl FromStr for Covariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let args = |prefix: &str| -> Option<&str> {
            s.strip_prefix(prefix).and_then(|r| r.strip_prefix('(')).and_then(|r| r.strip_suffix(')'))
        };
        match s {
            "identity" => return Ok(Covariance::Identity),
            "harmonic" => return Ok(Covariance::Harmonic),
            "geometric" => return Ok(Covariance::Geometric),
            _ => {}
        }
        if let Some(a) = args("diag") {
            return Ok(Covariance::Diag(parse_list(a)?));
        }
        if let Some(a) = args("equicorr") {
            let rho = parse_list(a)?;
            if rho.len() != 1 {
                return Err(Error::Domain("equicorr takes one value".into()));
            }
            return Ok(Covariance::Equicorr(rho[0]));
        }
        if let Some(a) = args("full") {
            let rows = a.split(';').map(parse_list).collect::<Result<Vec<_>>>()?;
            return Ok(Covariance::Full(Matrix::from_rows(&rows)?));
        }
        Err(Error::Domain(format!("unknown covariance '{s}'")))
    }
}

/// Data-generating distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum Design {
    /// `x ~ N(0, Σx)`, `β ~ N(0, Σβ)`, `y = xᵀβ + ξ`.
    Independent { sigma_x: SpdMatrix, sigma_beta: SpdMatrix, sigma: f64 },
    /// Demonstrations correlated with the query: `x_i | x ~ N(αx, (1-α²)I)`.
    Rag { alpha: f64, sigma: f64 },
    /// Features aligned with the task: `x_i | β ~ N(αβ, I)`, `y = κ^{-1/2} xᵀβ + ξ`.
    TaskFeature { alpha: f64, sigma: f64 },
    /// `β_i = (i/n) β₁ + (1 - i/n) β₂`, noiseless.
    EvolvingTask,
}

impl Design {
    pub fn tag(&self) -> &'static str {
        match self {
            Design::Independent { .. } => "iid",
            Design::Rag { .. } => "rag",
            Design::TaskFeature { .. } => "task",
            Design::EvolvingTask => "evolve",
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            Design::Independent { sigma, .. }
            | Design::Rag { sigma, .. }
            | Design::TaskFeature { sigma, .. } => *sigma,
            Design::EvolvingTask => 0.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Design::Rag { alpha, .. } | Design::TaskFeature { alpha, .. } => *alpha,
            _ => 0.0,
        }
    }
}

/// A design together with its dimensions and cached sampling factors.
#[derive(Clone, Debug)]
pub struct DesignSpec {
    design: Design,
    d: usize,
    n: usize,
    factors: Option<(Matrix, Matrix)>,
}

impl PartialEq for DesignSpec {
    fn eq(&self, other: &Self) -> bool {
        self.design == other.design && self.d == other.d && self.n == other.n
    }
}

impl DesignSpec {
    /// Validates the design. `n = 0` is accepted and describes an empty context.
    pub fn new(design: Design, d: usize, n: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("d must be at least 1".into()));
        }
        let sigma = design.sigma();
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Domain(format!("noise std {sigma} must be finite and nonnegative")));
        }
        let alpha = design.alpha();
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
        }
        let factors = match &design {
            Design::Independent { sigma_x, sigma_beta, .. } => {
                for (name, m) in [("sigma_x", sigma_x), ("sigma_beta", sigma_beta)] {
                    if m.dim() != d {
                        return Err(Error::Shape(format!("{name} is {0}x{0}, d = {d}", m.dim())));
                    }
                    if m.min_eigenvalue() < INV_SQRT_FLOOR {
                        return Err(Error::Singular(m.min_eigenvalue()));
                    }
                }
                Some((sigma_x.sqrt(), sigma_beta.sqrt()))
            }
            _ => None,
        };
        Ok(Self { design, d, n, factors })
    }

    pub fn isotropic(d: usize, n: usize, sigma: f64) -> Result<Self> {
        Self::independent(SpdMatrix::identity(d), SpdMatrix::identity(d), sigma, n)
    }

    pub fn independent(
        sigma_x: SpdMatrix,
        sigma_beta: SpdMatrix,
        sigma: f64,
        n: usize,
    ) -> Result<Self> {
        let d = sigma_x.dim();
        Self::new(Design::Independent { sigma_x, sigma_beta, sigma }, d, n)
    }

    pub fn rag(d: usize, n: usize, alpha: f64, sigma: f64) -> Result<Self> {
        Self::new(Design::Rag { alpha, sigma }, d, n)
    }

    pub fn task_feature(d: usize, n: usize, alpha: f64, sigma: f64) -> Result<Self> {
        Self::new(Design::TaskFeature { alpha, sigma }, d, n)
    }

    pub fn evolving(d: usize, n: usize) -> Result<Self> {
        Self::new(Design::EvolvingTask, d, n)
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Same design with a different context length.
    pub fn with_n(&self, n: usize) -> DesignSpec {
        DesignSpec { n, ..self.clone() }
    }

    /// `κ = α²d + 1`.
    pub fn kappa(&self) -> f64 {
        let a = self.design.alpha();
        a * a * self.d as f64 + 1.0
    }

    /// Zero-filled prompt with the right shapes.
    pub fn empty_prompt(&self) -> Prompt {
        Prompt {
            x: Matrix::zeros(self.n, self.d),
            y: vec![0.0; self.n],
            x_query: vec![0.0; self.d],
            y_query: 0.0,
            beta: vec![0.0; self.d],
            noises: vec![0.0; self.n + 1],
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Prompt {
        let mut p = self.empty_prompt();
        self.sample_into(&mut p, rng);
        p
    }

    /// Overwrites `p` with a fresh draw; `p` must come from [`Self::empty_prompt`].
    pub fn sample_into(&self, p: &mut Prompt, rng: &mut RngStream) {
        let (d, n) = (self.d, self.n);
        debug_assert_eq!(p.x.shape(), (n, d));
        let sigma = self.design.sigma();
        for e in p.noises.iter_mut() {
            *e = sigma * rng.normal();
        }
        let mut g = vec![0.0; d];
        match &self.design {
            Design::Independent { .. } => {
                let (sx_half, sb_half) = self.factors.as_ref().expect("factors cached");
                rng.fill_normal(&mut g);
                mat_vec_into(sb_half, &g, &mut p.beta);
                for i in 0..=n {
                    rng.fill_normal(&mut g);
                    let row = if i < n { p.x.row_mut(i) } else { &mut p.x_query[..] };
                    mat_vec_into(sx_half, &g, row);
                }
                self.label_rows(p, 1.0);
            }
            Design::Rag { alpha, .. } => {
                rng.fill_normal(&mut p.beta);
                rng.fill_normal(&mut p.x_query);
                let s = (1.0 - alpha * alpha).max(0.0).sqrt();
                for i in 0..n {
                    let row = p.x.row_mut(i);
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = alpha * p.x_query[k] + s * rng.normal();
                    }
                }
                self.label_rows(p, 1.0);
            }
            Design::TaskFeature { alpha, .. } => {
                rng.fill_normal(&mut p.beta);
                for i in 0..=n {
                    let row = if i < n { p.x.row_mut(i) } else { &mut p.x_query[..] };
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = alpha * p.beta[k] + rng.normal();
                    }
                }
                self.label_rows(p, 1.0 / self.kappa().sqrt());
            }
            Design::EvolvingTask => {
                let mut b2 = vec![0.0; d];
                rng.fill_normal(&mut p.beta);
                rng.fill_normal(&mut b2);
                let mut bi = vec![0.0; d];
                for i in 0..n {
                    let lam = (i + 1) as f64 / n as f64;
                    for k in 0..d {
                        bi[k] = lam * p.beta[k] + (1.0 - lam) * b2[k];
                    }
                    let row = p.x.row_mut(i);
                    rng.fill_normal(row);
                    p.y[i] = dot(row, &bi);
                }
                rng.fill_normal(&mut p.x_query);
                p.y_query = dot(&p.x_query, &p.beta);
            }
        }
    }

    fn label_rows(&self, p: &mut Prompt, scale: f64) {
        for i in 0..self.n {
            p.y[i] = scale * dot(p.x.row(i), &p.beta) + p.noises[i];
        }
        p.y_query = scale * dot(&p.x_query, &p.beta) + p.noises[self.n];
    }

    /// Key/value pairs describing this spec (the `[design]` config section).
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("kind".to_string(), self.design.tag().to_string()),
            ("d".to_string(), self.d.to_string()),
            ("n".to_string(), self.n.to_string()),
        ];
        match &self.design {
            Design::Independent { sigma_x, sigma_beta, sigma } => {
                out.push(("sigma".into(), sigma.to_string()));
                out.push(("sigma_x".into(), Covariance::from_matrix(sigma_x.matrix()).to_string()));
                out.push((
                    "sigma_beta".into(),
                    Covariance::from_matrix(sigma_beta.matrix()).to_string(),
                ));
            }
            Design::Rag { alpha, sigma } | Design::TaskFeature { alpha, sigma } => {
                out.push(("alpha".into(), alpha.to_string()));
                out.push(("sigma".into(), sigma.to_string()));
            }
            Design::EvolvingTask => {}
        }
        out
    }

    /// Inverse of [`Self::to_pairs`]. Unknown keys are rejected.
    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Result<Self> {
        let mut kind = None;
        let mut d = None;
        let mut n = None;
        let mut alpha = 0.0;
        let mut sigma = 0.0;
        let mut sigma_x = Covariance::Identity;
        let mut sigma_beta = Covariance::Identity;
        for (k, v) in pairs {
            let (k, v) = (k.as_ref(), v.as_ref().trim());
            let num = || v.parse::<f64>().map_err(|_| Error::Domain(format!("{k}: bad number '{v}'")));
            let count =
                || v.parse::<usize>().map_err(|_| Error::Domain(format!("{k}: bad count '{v}'")));
            match k {
                "kind" => kind = Some(v.to_string()),
                "d" => d = Some(count()?),
                "n" => n = Some(count()?),
                "alpha" => alpha = num()?,
                "sigma" => sigma = num()?,
                "sigma_x" => sigma_x = v.parse()?,
                "sigma_beta" => sigma_beta = v.parse()?,
                other => return Err(Error::Domain(format!("unknown design key '{other}'"))),
            }
        }
        let d = d.ok_or_else(|| Error::Domain("design key 'd' missing".into()))?;
        let n = n.ok_or_else(|| Error::Domain("design key 'n' missing".into()))?;
        let design = match kind.as_deref().unwrap_or("iid") {
            "iid" => Design::Independent {
                sigma_x: sigma_x.build(d)?,
                sigma_beta: sigma_beta.build(d)?,
                sigma,
            },
            "rag" => Design::Rag { alpha, sigma },
            "task" => Design::TaskFeature { alpha, sigma },
            "evolve" => Design::EvolvingTask,
            other => return Err(Error::Domain(format!("unknown design kind '{other}'"))),
        };
        DesignSpec::new(design, d, n)
    }
}

fn mat_vec_into(m: &Matrix, v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(r), v);
    }
}

/// One sampled in-context instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    /// `n x d` demonstration features.
    pub x: Matrix,
    pub y: Vec<f64>,
    pub x_query: Vec<f64>,
    pub y_query: f64,
    /// Task vector; for the evolving design this is the query's task `β₁`.
    pub beta: Vec<f64>,
    /// Label noise for the `n` demonstrations and the query.
    pub noises: Vec<f64>,
}

impl Prompt {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// `Xᵀ y`.
    pub fn xty(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.d()];
        for i in 0..self.n() {
            crate::numerics::axpy(self.y[i], self.x.row(i), &mut h);
        }
        h
    }

    /// Features of position `t` (1-based); `t = n + 1` is the query.
    pub fn features_at(&self, t: usize) -> &[f64] {
        if t == self.n() + 1 {
            &self.x_query
        } else {
            self.x.row(t - 1)
        }
    }

    /// Label of position `t` (1-based).
    pub fn label_at(&self, t: usize) -> f64 {
        if t == self.n() + 1 {
            self.y_query
        } else {
            self.y[t - 1]
        }
    }
}

/// `(n+1) x (d+1)` token matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    pub z: Matrix,
}

/// Rows `(x_i, y_i)` followed by `(x_query, 0)`.
pub fn assemble_tokens(p: &Prompt) -> TokenMatrix {
    let (n, d) = (p.n(), p.d());
    let z = Matrix::from_fn(n + 1, d + 1, |r, c| match (r < n, c < d) {
        (true, true) => p.x[(r, c)],
        (true, false) => p.y[r],
        (false, true) => p.x_query[c],
        (false, false) => 0.0,
    });
    TokenMatrix { z }
}

/// Same as [`assemble_tokens`] with the query row zeroed.
pub fn masked_tokens(p: &Prompt) -> TokenMatrix {
    let mut t = assemble_tokens(p);
    t.z.row_mut(p.n()).fill(0.0);
    t
}
