//! Layered experiment configuration: preset defaults, then a TOML file, then flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use icl_core::training::{LossMode, TrainConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    TheoryTable,
    FigIid,
    FigRag,
    FigTask,
    FigLowrank,
    FigLora,
    FigAvg,
    FigEvolve,
    OracleMoments,
    OracleConvexity,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::TheoryTable => "theory-table",
            Preset::FigIid => "fig-iid",
            Preset::FigRag => "fig-rag",
            Preset::FigTask => "fig-task",
            Preset::FigLowrank => "fig-lowrank",
            Preset::FigLora => "fig-lora",
            Preset::FigAvg => "fig-avg",
            Preset::FigEvolve => "fig-evolve",
            Preset::OracleMoments => "oracle-moments",
            Preset::OracleConvexity => "oracle-convexity",
        }
    }

    fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Preset::TheoryTable => &[("design.kind", "iid"), ("sweep.n", "1..32"), ("sweep.models", "pgd_theory")],
            Preset::FigIid => &[("design.kind", "iid"), ("sweep.n", "4,8,16,32"), ("sweep.models", "attn,h3")],
            Preset::FigRag => &[("design.kind", "rag"), ("sweep.n", "16"), ("sweep.alpha", "0,0.2,0.4,0.6")],
            Preset::FigTask => &[("design.kind", "task"), ("sweep.n", "16"), ("sweep.alpha", "0,0.2,0.4,0.6")],
            Preset::FigLowrank => &[
                ("design.kind", "iid"),
                ("design.sigma_beta", "harmonic"),
                ("sweep.n", "16"),
                ("sweep.rank", "1,2,4,8"),
                ("sweep.models", "low_rank"),
            ],
            Preset::FigLora => &[
                ("design.kind", "iid"),
                ("design.sigma_beta_new", "geometric"),
                ("sweep.n", "16"),
                ("sweep.rank", "1,2,4"),
                ("sweep.models", "attn,lora,pgd_theory"),
            ],
            Preset::FigAvg => &[
                ("design.kind", "iid"),
                ("sweep.n", "30"),
                ("sweep.models", "attn,h3"),
                ("train.loss_mode", "averaged"),
            ],
            Preset::FigEvolve => &[("design.kind", "evolve"), ("sweep.n", "40"), ("sweep.models", "attn,h3")],
            Preset::OracleMoments => &[("design.d", "2"), ("design.sigma", "1"), ("oracle.samples", "1e6")],
            Preset::OracleConvexity => &[("design.d", "2"), ("sweep.n", "4"), ("oracle.samples", "1e5")],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const KEYS: &[&str] = &[
    "design.kind",
    "design.d",
    "design.sigma",
    "design.sigma_x",
    "design.sigma_beta",
    "design.sigma_beta_new",
    "sweep.n",
    "sweep.alpha",
    "sweep.rank",
    "sweep.models",
    "train.iterations",
    "train.batch_size",
    "train.learning_rate",
    "train.restarts",
    "train.init_scale",
    "train.eval_trials",
    "train.loss_mode",
    "train.paper_scale",
    "oracle.kind",
    "oracle.samples",
    "oracle.w",
    "oracle.draws",
    "oracle.order",
    "output.path",
    "output.seed",
];

const BASE: &[(&str, &str)] = &[
    ("design.d", "8"),
    ("design.sigma", "0"),
    ("design.sigma_x", "identity"),
    ("design.sigma_beta", "identity"),
    ("design.sigma_beta_new", "geometric"),
    ("sweep.alpha", "0"),
    ("sweep.rank", "0"),
    ("sweep.models", "attn"),
    ("train.iterations", "2000"),
    ("train.batch_size", "128"),
    ("train.learning_rate", "0.001"),
    ("train.restarts", "5"),
    ("train.init_scale", "0.02"),
    ("train.eval_trials", "10000"),
    ("train.loss_mode", "last"),
    ("train.paper_scale", "false"),
    ("oracle.kind", "octic"),
    ("oracle.samples", "1e6"),
    ("oracle.w", "identity"),
    ("oracle.draws", "1"),
    ("oracle.order", "4"),
    ("output.seed", "0"),
];

const PAPER_SCALE: &[(&str, &str)] =
    &[("design.d", "20"), ("train.iterations", "10000"), ("train.restarts", "20")];

/// Command-line overrides. Every flag maps onto one config key.
#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Design kind: iid, rag, task or evolve.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub d: Option<String>,
    /// Context lengths: `16`, `4,8,16` or an inclusive range `1..80`.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub rank: Option<String>,
    /// Label noise standard deviation.
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long)]
    pub sigma_x: Option<String>,
    #[arg(long)]
    pub sigma_beta: Option<String>,
    /// Task covariance after the distribution shift (fig-lora).
    #[arg(long)]
    pub sigma_beta_new: Option<String>,
    /// Comma-separated models: attn, h3, low_rank, lora, pgd_theory.
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub iterations: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub restarts: Option<String>,
    #[arg(long)]
    pub init_scale: Option<String>,
    #[arg(long)]
    pub eval_trials: Option<String>,
    /// `last` or `averaged`.
    #[arg(long)]
    pub loss_mode: Option<String>,
    /// d = 20, 10000 iterations and 20 restarts unless set explicitly.
    #[arg(long)]
    pub paper_scale: bool,
    /// Moment kind: even_scalar, quartic, cross_quartic, sextic, octic.
    #[arg(long)]
    pub kind: Option<String>,
    /// Monte-Carlo sample count; accepts `1e6`.
    #[arg(long)]
    pub samples: Option<String>,
    /// `identity` or `random`.
    #[arg(long)]
    pub w: Option<String>,
    /// Number of (W, W') draws.
    #[arg(long)]
    pub draws: Option<String>,
    /// Order for even_scalar moments.
    #[arg(long)]
    pub order: Option<String>,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |key: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((key, v.clone()));
            }
        };
        put("design.kind", &self.design);
        put("design.d", &self.d);
        put("design.sigma", &self.sigma);
        put("design.sigma_x", &self.sigma_x);
        put("design.sigma_beta", &self.sigma_beta);
        put("design.sigma_beta_new", &self.sigma_beta_new);
        put("sweep.n", &self.n);
        put("sweep.alpha", &self.alpha);
        put("sweep.rank", &self.rank);
        put("sweep.models", &self.models);
        put("train.iterations", &self.iterations);
        put("train.batch_size", &self.batch_size);
        put("train.learning_rate", &self.lr);
        put("train.restarts", &self.restarts);
        put("train.init_scale", &self.init_scale);
        put("train.eval_trials", &self.eval_trials);
        put("train.loss_mode", &self.loss_mode);
        put("oracle.kind", &self.kind);
        put("oracle.samples", &self.samples);
        put("oracle.w", &self.w);
        put("oracle.draws", &self.draws);
        put("oracle.order", &self.order);
        put("output.seed", &self.seed);
        if let Some(p) = &self.out {
            out.push(("output.path", p.display().to_string()));
        }
        if self.paper_scale {
            out.push(("train.paper_scale", "true".into()));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelTag {
    Attn,
    H3,
    PgdTheory,
    Lora,
    LowRank,
}

impl ModelTag {
    pub fn name(self) -> &'static str {
        match self {
            ModelTag::Attn => "attn",
            ModelTag::H3 => "h3",
            ModelTag::PgdTheory => "pgd_theory",
            ModelTag::Lora => "lora",
            ModelTag::LowRank => "low_rank",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [ModelTag::Attn, ModelTag::H3, ModelTag::PgdTheory, ModelTag::Lora, ModelTag::LowRank]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WMode {
    Identity,
    Random,
}

/// Fully resolved experiment description.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// `[design]` pairs without `n`, ready for `DesignSpec::from_pairs`.
    pub design: Vec<(String, String)>,
    pub kind: String,
    pub d: usize,
    pub sigma: f64,
    pub sigma_beta_new: String,
    pub n: Vec<usize>,
    pub alpha: Vec<f64>,
    pub rank: Vec<usize>,
    pub models: Vec<ModelTag>,
    pub train: TrainConfig,
    pub moment_kind: String,
    pub samples: usize,
    pub w: WMode,
    pub draws: usize,
    pub order: u32,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

fn usage(key: &str, msg: impl fmt::Display) -> CliError {
    CliError::Usage(format!("{key}: {msg}"))
}

fn toml_scalar(key: &str, v: &toml::Value) -> Result<String, CliError> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        toml::Value::Array(items) => {
            let parts = items.iter().map(|i| toml_scalar(key, i)).collect::<Result<Vec<_>, _>>()?;
            Ok(parts.join(","))
        }
        _ => Err(usage(key, "unsupported value type")),
    }
}

/// Flattens a TOML document into `section.key` pairs, rejecting unknown keys.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let table: toml::Table = text.parse().map_err(|e| CliError::Usage(format!("config: {e}")))?;
    let mut out = Vec::new();
    for (section, body) in &table {
        let toml::Value::Table(body) = body else {
            return Err(usage(section, "expected a [section]"));
        };
        for (k, v) in body {
            let key = format!("{section}.{k}");
            if !KEYS.contains(&key.as_str()) {
                return Err(usage(&key, "unknown key"));
            }
            out.push((key.clone(), toml_scalar(&key, v)?));
        }
    }
    Ok(out)
}

/// Parses `16`, `4,8,16`, `1..80` (inclusive) or a mix such as `1..4,8`.
pub fn parse_counts(key: &str, v: &str) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b) = (parse_count(key, a)?, parse_count(key, b)?);
            if a > b {
                return Err(usage(key, format!("empty range '{part}'")));
            }
            out.extend(a..=b);
        } else {
            out.push(parse_count(key, part)?);
        }
    }
    if out.is_empty() {
        return Err(usage(key, "empty list"));
    }
    Ok(out)
}

/// Nonnegative integer, also in float notation such as `1e6`.
pub fn parse_count(key: &str, v: &str) -> Result<usize, CliError> {
    let v = v.trim();
    if let Ok(c) = v.parse::<usize>() {
        return Ok(c);
    }
    match v.parse::<f64>() {
        Ok(f) if f >= 0.0 && f.fract() == 0.0 && f <= 1e15 => Ok(f as usize),
        _ => Err(usage(key, format!("expected a count, got '{v}'"))),
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|f| f.is_finite())
        .ok_or_else(|| usage(key, format!("expected a number, got '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    v.trim().parse().map_err(|_| usage(key, format!("expected true or false, got '{v}'")))
}

impl ExperimentConfig {
    /// Resolves defaults, then the optional config file, then flags.
    pub fn resolve(preset: Preset, flags: &Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => read_config(path)?,
            None => Vec::new(),
        };
        Self::from_layers(preset, &file, &flags.pairs())
    }

    pub fn from_layers<A: AsRef<str>, B: AsRef<str>, C: AsRef<str>, D: AsRef<str>>(
        preset: Preset,
        file: &[(A, B)],
        flags: &[(C, D)],
    ) -> Result<Self, CliError> {
        let mut user: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in file.iter().map(|(k, v)| (k.as_ref(), v.as_ref())) {
            user.insert(k.to_string(), v.to_string());
        }
        for (k, v) in flags.iter().map(|(k, v)| (k.as_ref(), v.as_ref())) {
            user.insert(k.to_string(), v.to_string());
        }
        if let Some(k) = user.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(usage(k, "unknown key"));
        }
        let paper = match user.get("train.paper_scale") {
            Some(v) => parse_bool("train.paper_scale", v)?,
            None => false,
        };
        let mut map: BTreeMap<String, String> =
            BASE.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in preset.defaults() {
            map.insert(k.to_string(), v.to_string());
        }
        if paper {
            for (k, v) in PAPER_SCALE {
                map.insert(k.to_string(), v.to_string());
            }
        }
        map.extend(user);
        Self::from_map(preset, &map)
    }

    fn from_map(preset: Preset, map: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let get = |k: &str| map.get(k).map(String::as_str).ok_or_else(|| usage(k, "missing"));
        let kind = get("design.kind").unwrap_or("iid").to_string();
        let d = parse_count("design.d", get("design.d")?)?;
        if d == 0 {
            return Err(usage("design.d", "must be at least 1"));
        }
        let sigma = parse_f64("design.sigma", get("design.sigma")?)?;
        let mut design = vec![("kind".to_string(), kind.clone()), ("d".to_string(), d.to_string())];
        for key in ["sigma", "sigma_x", "sigma_beta"] {
            design.push((key.to_string(), get(&format!("design.{key}"))?.to_string()));
        }
        let alpha = get("sweep.alpha")?
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| parse_f64("sweep.alpha", p))
            .collect::<Result<Vec<_>, _>>()?;
        if alpha.is_empty() {
            return Err(usage("sweep.alpha", "empty list"));
        }
        let models = get("sweep.models")?
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| ModelTag::parse(p).ok_or_else(|| usage("sweep.models", format!("unknown model '{p}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        if models.is_empty() {
            return Err(usage("sweep.models", "empty list"));
        }
        let loss_mode = match get("train.loss_mode")? {
            "last" => LossMode::LastPosition,
            "averaged" => LossMode::AveragedPositions,
            other => return Err(usage("train.loss_mode", format!("expected last or averaged, got '{other}'"))),
        };
        let seed = get("output.seed")?
            .trim()
            .parse::<u64>()
            .map_err(|_| usage("output.seed", "expected an unsigned integer"))?;
        let train = TrainConfig {
            iterations: parse_count("train.iterations", get("train.iterations")?)?,
            batch_size: parse_count("train.batch_size", get("train.batch_size")?)?,
            learning_rate: parse_f64("train.learning_rate", get("train.learning_rate")?)?,
            restarts: parse_count("train.restarts", get("train.restarts")?)?,
            init_scale: parse_f64("train.init_scale", get("train.init_scale")?)?,
            loss_mode,
            seed,
            eval_trials: parse_count("train.eval_trials", get("train.eval_trials")?)?,
        };
        train.validate().map_err(|e| usage("train", e))?;
        let w = match get("oracle.w")? {
            "identity" => WMode::Identity,
            "random" => WMode::Random,
            other => return Err(usage("oracle.w", format!("expected identity or random, got '{other}'"))),
        };
        let order = parse_count("oracle.order", get("oracle.order")?)?;
        let samples = parse_count("oracle.samples", get("oracle.samples")?)?;
        if samples < 2 {
            return Err(usage("oracle.samples", "need at least two samples"));
        }
        let draws = parse_count("oracle.draws", get("oracle.draws")?)?;
        if draws == 0 {
            return Err(usage("oracle.draws", "must be positive"));
        }
        Ok(Self {
            preset,
            design,
            kind,
            d,
            sigma,
            sigma_beta_new: get("design.sigma_beta_new")?.to_string(),
            n: parse_counts("sweep.n", get("sweep.n").unwrap_or("16"))?,
            alpha,
            rank: parse_counts("sweep.rank", get("sweep.rank")?)?,
            models,
            train,
            moment_kind: get("oracle.kind")?.to_string(),
            samples,
            w,
            draws,
            order: u32::try_from(order).map_err(|_| usage("oracle.order", "too large"))?,
            output: map.get("output.path").map(PathBuf::from),
            seed,
        })
    }
}

fn read_config(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NONE: &[(&str, &str)] = &[];

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse_counts("n", "1..4,8").unwrap(), vec![1, 2, 3, 4, 8]);
        assert_eq!(parse_count("s", "1e6").unwrap(), 1_000_000);
        assert!(parse_counts("n", "5..2").is_err());
        assert!(parse_count("s", "1.5").is_err());
    }

    #[test]
    fn precedence() {
        let file = [("design.d", "4"), ("sweep.n", "3")];
        let flags = [("design.d", "6")];
        let c = ExperimentConfig::from_layers(Preset::FigIid, &file, &flags).unwrap();
        assert_eq!((c.d, c.n.clone()), (6, vec![3]));
        let c = ExperimentConfig::from_layers(Preset::FigIid, NONE, NONE).unwrap();
        assert_eq!((c.d, c.n.clone(), c.train.iterations), (8, vec![4, 8, 16, 32], 2000));
    }

    #[test]
    fn paper_scale_yields_to_explicit_values() {
        let c = ExperimentConfig::from_layers(Preset::FigIid, &[("train.paper_scale", "true")], &[("design.d", "5")])
            .unwrap();
        assert_eq!((c.d, c.train.iterations, c.train.restarts), (5, 10000, 20));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config_text("[design]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("design.bogus"));
        let err = parse_config_text("[nowhere]\nd = 1\n").unwrap_err();
        assert!(err.to_string().contains("nowhere.d"));
    }

    #[test]
    fn toml_arrays_flatten() {
        let pairs = parse_config_text("[sweep]\nn = [4, 8]\nalpha = [0.0, 0.5]\n").unwrap();
        let c = ExperimentConfig::from_layers(Preset::FigRag, &pairs, NONE).unwrap();
        assert_eq!(c.n, vec![4, 8]);
        assert_eq!(c.alpha, vec![0.0, 0.5]);
    }
}
