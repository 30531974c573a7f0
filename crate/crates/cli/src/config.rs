//! Experiment configuration: one TOML document, unknown keys rejected.

use std::path::PathBuf;

use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Jsonl]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out(), formats: default_formats() }
    }
}

fn one() -> f64 {
    1.0
}

/// Unnamed constants of the bounds, each defaulting to 1.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default = "one", rename = "C")]
    pub big_c: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self { c: 1.0, c0: 1.0, c1: 1.0, c2: 1.0, big_c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub n: usize,
    pub delta: f64,
    #[serde(rename = "N")]
    pub big_n: usize,
    #[serde(default = "one_usize")]
    pub count: usize,
    /// Also write the cap body built from the same index sets.
    #[serde(default)]
    pub cap_body: bool,
    #[serde(default)]
    pub replicate: usize,
}

fn one_usize() -> usize {
    1
}

/// Either a body file or model parameters to sample one.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySource {
    pub body: Option<PathBuf>,
    pub n: Option<usize>,
    pub delta: Option<f64>,
    #[serde(rename = "N")]
    pub big_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeConfig {
    #[serde(flatten)]
    pub source: BodySource,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub random_points: usize,
    #[serde(default = "default_gauge_tol")]
    pub tol: f64,
    #[serde(default)]
    pub replicate: usize,
}

fn default_gauge_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcKind {
    Quadratic,
    SmallBall,
    LargeDeviation,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    /// `identity`, `e11` or `random`.
    Named(String),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcConfig {
    pub kind: ConcKind,
    pub n: usize,
    pub m: Option<usize>,
    pub delta: Option<f64>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "default_batch")]
    pub batch_size: u64,
    #[serde(default = "default_pilot")]
    pub pilot_trials: u64,
    pub matrix: MatrixSpec,
    pub thresholds: Option<Vec<f64>>,
    #[serde(default)]
    pub replicate: usize,
}

fn default_trials() -> u64 {
    100_000
}

fn default_batch() -> u64 {
    4096
}

fn default_pilot() -> u64 {
    2000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistMode {
    Bm,
    OpNorm,
    OneVector,
    OneBody,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistConfig {
    pub mode: DistMode,
    pub body_a: Option<PathBuf>,
    pub body_b: Option<PathBuf>,
    pub n: Option<usize>,
    pub delta: Option<f64>,
    #[serde(rename = "N")]
    pub big_n: Option<usize>,
    /// Map file for `op_norm`; identity when absent.
    pub map: Option<PathBuf>,
    /// Singular values of the diagonal map used by the events.
    pub spectrum: Option<Vec<f64>>,
    /// Overrides the formula for the event threshold.
    pub alpha: Option<f64>,
    #[serde(default = "default_event_trials")]
    pub trials: usize,
    pub diagnostics_c0: Option<f64>,
    pub refine_evaluations: Option<usize>,
    #[serde(default)]
    pub replicate: usize,
}

fn default_event_trials() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparateConfig {
    pub n: usize,
    pub delta: f64,
    #[serde(rename = "N")]
    pub big_n: usize,
    #[serde(rename = "M")]
    pub count: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub max_pairs: Option<usize>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    pub refine_evaluations: Option<usize>,
    pub certify_top: Option<usize>,
    #[serde(default)]
    pub replicate: usize,
}

fn default_threshold() -> f64 {
    1.5
}

fn default_bins() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Finite(f64),
    /// Only `"inf"` is accepted.
    Named(InfTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum InfTag {
    #[serde(rename = "inf")]
    Inf,
}

impl Exponent {
    pub fn value(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Named(InfTag::Inf) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyEntry {
    pub lp: Option<Exponent>,
    pub topk: Option<usize>,
    pub lorentz: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub n: usize,
    pub tau: Option<f64>,
    /// Separation parameter; `τ = t^{1/12}` when `tau` is absent.
    pub t: Option<f64>,
    pub family: Vec<FamilyEntry>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub cap: Option<u64>,
    #[serde(default = "yes")]
    pub certify: bool,
    #[serde(default)]
    pub replicate: usize,
}

fn default_samples() -> usize {
    10_000
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub workers: usize,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub constants: Constants,
    pub sample: Option<SampleConfig>,
    pub gauge: Option<GaugeConfig>,
    pub conc: Option<ConcConfig>,
    pub dist: Option<DistConfig>,
    pub separate: Option<SeparateConfig>,
    pub net: Option<NetConfig>,
}

/// Parsed configuration plus the SHA-256 of the bytes it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse(text: &str) -> Result<LoadedConfig, String> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
    Ok(LoadedConfig { config, hash: hash_bytes(text.as_bytes()) })
}

fn check(errors: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        errors.push(msg());
    }
}

fn check_model(errors: &mut Vec<String>, section: &str, n: usize, delta: f64, big_n: usize) {
    check(errors, n >= 1, || format!("{section}.n must be at least 1"));
    check(errors, delta > 0.0 && delta <= 1.0, || format!("{section}.delta must lie in (0, 1], got {delta}"));
    check(errors, big_n >= 1, || format!("{section}.N must be at least 1"));
    if n >= 1 && delta > 0.0 && delta <= 1.0 {
        let m = (delta * n as f64 + 0.5).floor() as usize;
        check(errors, m >= 1, || format!("{section}: round(delta*n) = 0"));
    }
}

fn check_source(errors: &mut Vec<String>, section: &str, s: &BodySource) {
    match (&s.body, s.n, s.delta, s.big_n) {
        (Some(_), None, None, None) => {}
        (None, Some(n), Some(d), Some(b)) => check_model(errors, section, n, d, b),
        _ => errors.push(format!("{section}: give either `body` or all of `n`, `delta`, `N`")),
    }
}

impl ExperimentConfig {
    /// Every violated range for the sections present, in one list.
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        check(&mut e, self.workers >= 1, || "workers must be at least 1".into());
        let k = &self.constants;
        for (name, v) in [("c", k.c), ("c0", k.c0), ("c1", k.c1), ("c2", k.c2), ("C", k.big_c)] {
            check(&mut e, v > 0.0 && v.is_finite(), || format!("constants.{name} must be positive and finite"));
        }
        if let Some(s) = &self.sample {
            check_model(&mut e, "sample", s.n, s.delta, s.big_n);
            check(&mut e, s.count >= 1, || "sample.count must be at least 1".into());
        }
        if let Some(g) = &self.gauge {
            check_source(&mut e, "gauge", &g.source);
            check(&mut e, g.tol > 0.0, || "gauge.tol must be positive".into());
            check(&mut e, !g.points.is_empty() || g.random_points > 0, || "gauge needs `points` or `random_points`".into());
            if let Some(n) = g.source.n {
                for (i, p) in g.points.iter().enumerate() {
                    check(&mut e, p.len() == n, || format!("gauge.points[{i}] has length {}, expected {n}", p.len()));
                }
            }
        }
        if let Some(c) = &self.conc {
            check(&mut e, c.n >= 1, || "conc.n must be at least 1".into());
            check(&mut e, c.trials >= 1, || "conc.trials must be at least 1".into());
            check(&mut e, c.batch_size >= 1, || "conc.batch_size must be at least 1".into());
            match (c.m, c.delta) {
                (Some(m), None) => check(&mut e, m >= 1 && m <= c.n, || format!("conc.m must lie in [1, n], got {m}")),
                (None, Some(d)) => check(&mut e, d > 0.0 && d <= 1.0, || format!("conc.delta must lie in (0, 1], got {d}")),
                _ => e.push("conc: give exactly one of `m` and `delta`".into()),
            }
            match &c.matrix {
                MatrixSpec::Named(s) => check(&mut e, ["identity", "e11", "random"].contains(&s.as_str()), || {
                    format!("conc.matrix: unknown name `{s}` (identity, e11, random)")
                }),
                MatrixSpec::Rows(r) => {
                    check(&mut e, r.iter().all(|row| row.len() == c.n), || "conc.matrix rows must have length n".into());
                    if c.kind == ConcKind::Quadratic {
                        check(&mut e, r.len() == c.n, || "conc.matrix must be n x n for the quadratic form".into());
                    }
                }
            }
            if let Some(t) = &c.thresholds {
                check(&mut e, !t.is_empty() && t.iter().all(|x| x.is_finite() && *x >= 0.0), || {
                    "conc.thresholds must be nonnegative and finite".into()
                });
            }
        }
        if let Some(d) = &self.dist {
            let sampled = d.n.is_some() || d.delta.is_some() || d.big_n.is_some();
            match d.mode {
                DistMode::Bm | DistMode::OpNorm => match (&d.body_a, &d.body_b, sampled) {
                    (Some(_), Some(_), false) => {}
                    (None, None, true) => {}
                    _ => e.push("dist: give either `body_a` and `body_b` or `n`, `delta`, `N`".into()),
                },
                DistMode::OneVector | DistMode::OneBody => {
                    check(&mut e, d.body_a.is_none() && d.body_b.is_none(), || {
                        "dist: events sample their bodies; `body_a`/`body_b` are not used".into()
                    });
                    check(&mut e, d.trials >= 1, || "dist.trials must be at least 1".into());
                }
            }
            if sampled {
                match (d.n, d.delta, d.big_n) {
                    (Some(n), Some(delta), Some(b)) => check_model(&mut e, "dist", n, delta, b),
                    _ => e.push("dist: `n`, `delta` and `N` go together".into()),
                }
            } else if matches!(d.mode, DistMode::OneVector | DistMode::OneBody) {
                e.push("dist: events need `n`, `delta`, `N`".into());
            }
            if let Some(a) = d.alpha {
                check(&mut e, a > 0.0, || "dist.alpha must be positive".into());
            }
            if let (Some(s), Some(n)) = (&d.spectrum, d.n) {
                check(&mut e, s.len() == n, || format!("dist.spectrum has length {}, expected {n}", s.len()));
            }
            if d.mode == DistMode::OneBody {
                if let Some(delta) = d.delta {
                    check(&mut e, delta < 1.0, || "dist: the one-body threshold needs delta < 1".into());
                }
            }
        }
        if let Some(s) = &self.separate {
            check_model(&mut e, "separate", s.n, s.delta, s.big_n);
            check(&mut e, s.count >= 2, || "separate.M must be at least 2".into());
            check(&mut e, s.bins >= 1, || "separate.bins must be at least 1".into());
            check(&mut e, s.threshold >= 1.0, || "separate.threshold must be at least 1".into());
        }
        if let Some(nc) = &self.net {
            check(&mut e, nc.n >= 1, || "net.n must be at least 1".into());
            match (nc.tau, nc.t) {
                (Some(tau), None) => check(&mut e, tau > 1.0, || format!("net.tau must exceed 1, got {tau}")),
                (None, Some(t)) => check(&mut e, t > 1.0, || format!("net.t must exceed 1, got {t}")),
                _ => e.push("net: give exactly one of `tau` and `t`".into()),
            }
            check(&mut e, !nc.family.is_empty(), || "net.family must not be empty".into());
            for (i, f) in nc.family.iter().enumerate() {
                let set = f.lp.is_some() as u8 + f.topk.is_some() as u8 + f.lorentz.is_some() as u8;
                check(&mut e, set == 1, || format!("net.family[{i}] needs exactly one of lp, topk, lorentz"));
            }
        }
        e
    }
}
