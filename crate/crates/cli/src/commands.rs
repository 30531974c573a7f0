//! The six experiment commands. Each is a pure function of the configuration
//! and the master seed; artifacts are returned as text for the caller to write.

use std::path::Path;

use bmcompact_core::bodies::HullBody;
use bmcompact_core::conclab::{self, McConfig, TailCurve};
use bmcompact_core::csnet::{self, CsBody, NetOptions};
use bmcompact_core::distance::{self, BmOptions, EventOptions, EventReport, OpNormOptions, SeparationOptions};
use bmcompact_core::linalg::DenseMatrix;
use bmcompact_core::randmodel::{self, ModelParams, Stream};
use bmcompact_core::{bodies, math, Runner};
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use crate::config::{
    ConcConfig, ConcKind, DistConfig, DistMode, ExperimentConfig, GaugeConfig, MatrixSpec, NetConfig, SampleConfig,
    SeparateConfig,
};
use crate::emit::{CurvePlot, HistogramPlot, Plot, Report, ResultRecord, Table};
use crate::formats;
use crate::pool::Pool;
use crate::CliError;

/// Shared inputs of every command.
pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub config_hash: &'a str,
    pub seed: u64,
    pub timestamp: u64,
    pub pool: &'a Pool,
    pub cap: Option<u128>,
    /// Directory against which relative body and map paths are resolved.
    pub base_dir: &'a Path,
}

/// A command's report plus files to write under the output directory.
pub struct Computed {
    pub report: Report,
    pub artifacts: Vec<(String, String)>,
    /// Numeric-tolerance failures; the run still emits everything it has.
    pub failures: Vec<String>,
}

impl Context<'_> {
    fn record(&self, command: &str, stream: &str, payload: Value) -> ResultRecord {
        ResultRecord {
            experiment: command.to_string(),
            timestamp: self.timestamp,
            config_hash: self.config_hash.to_string(),
            seed: self.seed,
            stream: stream.to_string(),
            payload,
        }
    }

    fn root(&self, command: &str, replicate: usize) -> Stream {
        Stream::new(self.seed, format!("{command}/{replicate}"))
    }

    fn read(&self, path: &Path) -> Result<String, CliError> {
        let full = self.base_dir.join(path);
        std::fs::read_to_string(&full).map_err(|e| CliError::Io(format!("{}: {e}", full.display())))
    }

    fn read_body(&self, path: &Path) -> Result<HullBody, CliError> {
        formats::read_body(&self.read(path)?).map_err(|e| CliError::Validation(vec![e]))
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref().ok_or_else(|| CliError::Validation(vec![format!("configuration has no [{name}] section")]))
}

fn cell(x: f64) -> String {
    format!("{x}")
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(cell).unwrap_or_default()
}

fn gaussian_vector(n: usize, stream: &Stream) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn model(n: usize, delta: f64, big_n: usize) -> Result<ModelParams, CliError> {
    Ok(ModelParams::new(n, delta, big_n)?)
}

// ---------------------------------------------------------------------------

pub fn sample(ctx: &Context) -> Result<Computed, CliError> {
    let cfg: &SampleConfig = section(&ctx.config.sample, "sample")?;
    let consts = ctx.config.constants;
    let params = model(cfg.n, cfg.delta, cfg.big_n)?;
    let root = ctx.root("sample", cfg.replicate);
    let sampled = ctx
        .pool
        .run(cfg.count, |i| randmodel::sample_body(&params, &root.child("body").child(i)))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let coverage = randmodel::coverage_probability(params.n, params.m, params.big_n);
    let outside = params.outside_regime(consts.big_c);

    let mut table = Table::new(&["index", "n", "delta", "N", "m", "covers", "outside_regime", "body_file", "cap_file"]);
    let mut records = Vec::new();
    let mut artifacts = Vec::new();
    for (i, s) in sampled.iter().enumerate() {
        let body_file = format!("bodies/sample-body-{i}.json");
        artifacts.push((body_file.clone(), formats::write_body(&s.body)));
        let cap_file = if cfg.cap_body {
            let cap = bodies::make_cap_body(&params, &s.subsets)?;
            let name = format!("bodies/sample-cap-{i}.json");
            artifacts.push((name.clone(), formats::write_body(&cap)));
            Some(name)
        } else {
            None
        };
        let stream = root.child("body").child(i);
        records.push(ctx.record(
            "sample",
            stream.name(),
            json!({
                "kind": "body",
                "index": i,
                "n": params.n,
                "delta": params.delta,
                "N": params.big_n,
                "m": params.m,
                "subsets": s.subsets.iter().map(|s| s.as_slice().to_vec()).collect::<Vec<_>>(),
                "covers": s.covers,
                "coverage_probability": coverage,
                "outside_regime": outside,
                "theorem_ln_N": params.theorem_ln_big_n(consts.c),
                "body_file": body_file,
                "cap_file": cap_file,
            }),
        ));
        table.push(vec![
            i.to_string(),
            params.n.to_string(),
            cell(params.delta),
            params.big_n.to_string(),
            params.m.to_string(),
            s.covers.to_string(),
            outside.to_string(),
            body_file,
            cap_file.unwrap_or_default(),
        ]);
    }
    Ok(Computed { report: Report { command: "sample".into(), records, table, plots: Vec::new() }, artifacts, failures: Vec::new() })
}

// ---------------------------------------------------------------------------

pub fn gauge(ctx: &Context) -> Result<Computed, CliError> {
    let cfg: &GaugeConfig = section(&ctx.config.gauge, "gauge")?;
    let root = ctx.root("gauge", cfg.replicate);
    let body = match &cfg.source.body {
        Some(path) => ctx.read_body(path)?,
        None => {
            let (n, delta, big_n) = (cfg.source.n.unwrap_or(0), cfg.source.delta.unwrap_or(0.0), cfg.source.big_n.unwrap_or(0));
            let params = model(n, delta, big_n)?;
            randmodel::sample_body(&params, &root.child("body").child(0))?.body
        }
    };
    let n = body.dim();
    if let Some((i, p)) = cfg.points.iter().enumerate().find(|(_, p)| p.len() != n) {
        return Err(CliError::Validation(vec![format!("gauge.points[{i}] has length {}, body has dimension {n}", p.len())]));
    }
    let mut points: Vec<(String, Vec<f64>)> =
        cfg.points.iter().enumerate().map(|(i, p)| (root.child("given").child(i).name().to_string(), p.clone())).collect();
    for i in 0..cfg.random_points {
        let s = root.child("point").child(i);
        points.push((s.name().to_string(), gaussian_vector(n, &s)));
    }
    let results = ctx.pool.run(points.len(), |i| body.gauge(&points[i].1, cfg.tol));

    let mut table = Table::new(&["index", "lo", "hi", "gap", "iterations"]);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, ((stream, x), res)) in points.iter().zip(results).enumerate() {
        let payload = match res {
            Ok(g) => {
                table.push(vec![i.to_string(), cell(g.lo), cell(g.hi), cell(g.gap()), g.iterations.to_string()]);
                json!({
                    "kind": "gauge",
                    "index": i,
                    "x": x,
                    "lo": g.lo,
                    "hi": g.hi,
                    "gap": g.gap(),
                    "iterations": g.iterations,
                    "dual_witness": g.dual_witness,
                    "tol": cfg.tol,
                })
            }
            Err(e) if e.is_numeric() => {
                failures.push(format!("gauge point {i}: {e}"));
                table.push(vec![i.to_string(), String::new(), String::new(), String::new(), String::new()]);
                json!({ "kind": "gauge", "index": i, "x": x, "error": e.to_string() })
            }
            Err(e) => return Err(e.into()),
        };
        records.push(ctx.record("gauge", stream, payload));
    }
    Ok(Computed { report: Report { command: "gauge".into(), records, table, plots: Vec::new() }, artifacts: Vec::new(), failures })
}

// ---------------------------------------------------------------------------

fn conc_matrix(cfg: &ConcConfig, stream: &Stream) -> Result<DenseMatrix, CliError> {
    let n = cfg.n;
    Ok(match &cfg.matrix {
        MatrixSpec::Named(name) => match name.as_str() {
            "identity" => DenseMatrix::identity(n),
            "e11" => {
                let mut e = vec![0.0; n];
                e[0] = 1.0;
                DenseMatrix::outer(&e, &e)
            }
            "random" => DenseMatrix::new(n, n, gaussian_vector(n * n, stream))?,
            other => return Err(CliError::Validation(vec![format!("conc.matrix: unknown name `{other}`")])),
        },
        MatrixSpec::Rows(rows) => DenseMatrix::from_rows(rows)?,
    })
}

fn curve_json(c: &TailCurve) -> Value {
    let bands: Vec<[f64; 2]> = (0..c.len()).map(|i| c.band(i).into()).collect();
    json!({
        "thresholds": c.thresholds,
        "exceed": c.exceed,
        "p_hat": c.p_hat,
        "wilson_centre": c.wilson_centre,
        "half_width": c.half_width,
        "band": bands,
        "trials": c.trials,
        "exponent": c.exponent,
        "bound": c.bound,
        "constant": c.constant,
        "admissible": c.admissible,
        "fitted_constant": c.fitted_constant,
    })
}

fn curve_rows(table: &mut Table, c: &TailCurve) {
    for i in 0..c.len() {
        let (lo, hi) = c.band(i);
        table.push(vec![
            cell(c.thresholds[i]),
            c.exceed[i].to_string(),
            c.trials.to_string(),
            cell(c.p_hat[i]),
            cell(lo),
            cell(hi),
            cell(c.bound[i]),
            cell(c.exponent[i]),
            c.admissible[i].to_string(),
        ]);
    }
}

fn curve_plot(title: &str, c: &TailCurve) -> Plot {
    Plot::Curve(CurvePlot {
        title: title.to_string(),
        thresholds: c.thresholds.clone(),
        p_hat: c.p_hat.clone(),
        band: (0..c.len()).map(|i| c.band(i)).collect(),
        bound: c.bound.clone(),
    })
}

pub fn conc(ctx: &Context) -> Result<Computed, CliError> {
    let cfg: &ConcConfig = section(&ctx.config.conc, "conc")?;
    let root = ctx.root("conc", cfg.replicate);
    let n = cfg.n;
    let m = match (cfg.m, cfg.delta) {
        (Some(m), _) => m,
        (None, Some(d)) => math::round_half_up(d * n as f64) as usize,
        (None, None) => return Err(CliError::Validation(vec!["conc: give `m` or `delta`".into()])),
    };
    let mc = McConfig { trials: cfg.trials, batch_size: cfg.batch_size, constant: ctx.config.constants.c, pilot_trials: cfg.pilot_trials };
    let a = conc_matrix(cfg, &root.child("matrix").child(0))?;
    let trials = root.child("trials").child(0);
    let header = ["threshold", "exceed", "trials", "p_hat", "band_lo", "band_hi", "bound", "exponent", "admissible"];
    let mut table = Table::new(&header);
    let common = json!({ "n": n, "m": m, "matrix": a.to_rows() });
    let (payload, plot) = match cfg.kind {
        ConcKind::Quadratic => {
            let q = conclab::mc_quadratic_tail(&a, n, m, &mc, cfg.thresholds.clone(), &trials, ctx.pool)?;
            curve_rows(&mut table, &q.curve);
            let payload = json!({
                "kind": "quadratic_tail",
                "setup": common,
                "curve": curve_json(&q.curve),
                "expected_mean": q.expected_mean,
                "mean": q.mean,
                "std_error": q.std_error,
                "centering_z": q.centering_z(),
            });
            (payload, curve_plot("quadratic form tail", &q.curve))
        }
        ConcKind::LargeDeviation => {
            let c = conclab::mc_large_deviation(&a, n, m, &mc, cfg.thresholds.clone(), &trials, ctx.pool)?;
            curve_rows(&mut table, &c);
            let payload = json!({ "kind": "large_deviation", "setup": common, "curve": curve_json(&c) });
            (payload, curve_plot("large deviation tail", &c))
        }
        ConcKind::SmallBall => {
            let s = conclab::mc_small_ball(&a, n, m, &mc, &trials, ctx.pool)?;
            let (lo, hi) = s.band();
            table.push(vec![
                cell(s.threshold),
                s.hits.to_string(),
                s.trials.to_string(),
                cell(s.p_hat),
                cell(lo),
                cell(hi),
                cell(s.bound),
                cell(s.exponent),
                "true".into(),
            ]);
            let payload = json!({
                "kind": "small_ball",
                "setup": common,
                "threshold": s.threshold,
                "hits": s.hits,
                "trials": s.trials,
                "p_hat": s.p_hat,
                "wilson_centre": s.wilson_centre,
                "half_width": s.half_width,
                "band": [lo, hi],
                "exponent": s.exponent,
                "bound": s.bound,
                "constant": s.constant,
                "fitted_constant": s.fitted_constant,
            });
            let plot = Plot::Curve(CurvePlot {
                title: "small ball probability".into(),
                thresholds: vec![s.threshold],
                p_hat: vec![s.p_hat],
                band: vec![(lo, hi)],
                bound: vec![s.bound],
            });
            (payload, plot)
        }
    };
    let records = vec![ctx.record("conc", trials.name(), payload)];
    Ok(Computed { report: Report { command: "conc".into(), records, table, plots: vec![plot] }, artifacts: Vec::new(), failures: Vec::new() })
}

// ---------------------------------------------------------------------------

fn dist_bodies(ctx: &Context, cfg: &DistConfig, root: &Stream) -> Result<(HullBody, HullBody), CliError> {
    match (&cfg.body_a, &cfg.body_b) {
        (Some(a), Some(b)) => Ok((ctx.read_body(a)?, ctx.read_body(b)?)),
        _ => {
            let params = sampled_params(cfg)?;
            let a = randmodel::sample_body(&params, &root.child("body").child(0))?;
            let b = randmodel::sample_body(&params, &root.child("body").child(1))?;
            Ok((a.body, b.body))
        }
    }
}

fn sampled_params(cfg: &DistConfig) -> Result<ModelParams, CliError> {
    match (cfg.n, cfg.delta, cfg.big_n) {
        (Some(n), Some(d), Some(b)) => model(n, d, b),
        _ => Err(CliError::Validation(vec!["dist: `n`, `delta` and `N` are required".into()])),
    }
}

fn bm_options(refine: Option<usize>, certify_top: Option<usize>) -> BmOptions {
    let mut o = BmOptions::default();
    if let Some(r) = refine {
        o.refine_evaluations = r;
    }
    if let Some(c) = certify_top {
        o.certify_top = c;
    }
    o
}

/// Diagonal map with the configured spectrum, or `2` on the first half and `1` after.
fn event_map(cfg: &DistConfig, n: usize) -> DenseMatrix {
    let s = cfg.spectrum.clone().unwrap_or_else(|| (0..n).map(|i| if i < n / 2 { 2.0 } else { 1.0 }).collect());
    DenseMatrix::from_diag(&s)
}

/// `‖V‖` after the events' rescaling of `s_{n/2}(V)` up to 1.
fn normalised_norm(v: &DenseMatrix) -> Result<f64, CliError> {
    let mut s: Vec<f64> = (0..v.rows()).map(|i| v.get(i, i).abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let mid = s[s.len() / 2 - 1];
    if !(mid > 0.0) {
        return Err(CliError::Validation(vec!["dist.spectrum: s_{n/2} must be positive".into()]));
    }
    Ok(if mid < 1.0 { s[0] / mid } else { s[0] })
}

fn event_json(r: &EventReport) -> Value {
    let diagnostics = r.diagnostics.as_ref().map(|d| {
        json!({
            "i1": d.interval.i1,
            "i2": d.interval.i2,
            "r": d.interval.r,
            "ratio": d.interval.ratio,
            "qy_norm": d.qy_norm,
            "projections": d.projections,
            "max_projection": d.max_projection,
        })
    });
    json!({
        "alpha": r.alpha,
        "outcome": r.outcome,
        "gauge_lo": r.gauge_lo,
        "gauge_hi": r.gauge_hi,
        "tolerance": r.tolerance,
        "scale": r.scale,
        "operator_norm": r.operator_norm,
        "witness": r.witness,
        "covered": r.covered,
        "diagnostics": diagnostics,
        "notes": r.notes,
    })
}

pub fn dist(ctx: &Context) -> Result<Computed, CliError> {
    let cfg: &DistConfig = section(&ctx.config.dist, "dist")?;
    let root = ctx.root("dist", cfg.replicate);
    let consts = ctx.config.constants;
    let mut artifacts = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let table = match cfg.mode {
        DistMode::Bm => {
            let (a, b) = dist_bodies(ctx, cfg, &root)?;
            let stream = root.child("pair").child("0-1");
            let est = distance::bm_upper(&a, &b, &bm_options(cfg.refine_evaluations, None), &stream)?;
            artifacts.push(("dist.map.json".to_string(), formats::write_map(&est.map)));
            let log: Vec<Value> = est
                .log
                .iter()
                .map(|c| json!({ "label": c.label, "surrogate": c.surrogate, "certified": c.certified, "note": c.note }))
                .collect();
            records.push(ctx.record(
                "dist",
                stream.name(),
                json!({
                    "kind": "bm",
                    "upper": est.upper,
                    "forward_hi": est.forward_hi,
                    "backward_hi": est.backward_hi,
                    "evaluations": est.evaluations,
                    "map": est.map.to_rows(),
                    "map_file": "dist.map.json",
                    "candidates": log,
                }),
            ));
            let mut t = Table::new(&["upper", "forward_hi", "backward_hi", "evaluations"]);
            t.push(vec![cell(est.upper), cell(est.forward_hi), cell(est.backward_hi), est.evaluations.to_string()]);
            t
        }
        DistMode::OpNorm => {
            let (a, b) = dist_bodies(ctx, cfg, &root)?;
            let map = match &cfg.map {
                Some(p) => formats::read_map(&ctx.read(p)?).map_err(|e| CliError::Validation(vec![e]))?,
                None => DenseMatrix::identity(a.dim()),
            };
            let stream = root.child("map").child(0);
            let r = distance::op_norm(&map, &a, &b, &OpNormOptions::default(), &stream)?;
            records.push(ctx.record(
                "dist",
                stream.name(),
                json!({ "kind": "op_norm", "lo": r.lo, "hi": r.hi, "witness": r.witness, "gauge_calls": r.gauge_calls }),
            ));
            let mut t = Table::new(&["lo", "hi", "gauge_calls"]);
            t.push(vec![cell(r.lo), cell(r.hi), r.gauge_calls.to_string()]);
            t
        }
        DistMode::OneVector | DistMode::OneBody => {
            let params = sampled_params(cfg)?;
            let n = params.n;
            let v = event_map(cfg, n);
            let one_vector = cfg.mode == DistMode::OneVector;
            let alpha = match (cfg.alpha, one_vector) {
                (Some(a), _) => a,
                (None, true) => distance::alpha_one_vector(consts.c, params.delta, normalised_norm(&v)?)?,
                (None, false) => distance::alpha_one_body(consts.c0, params.delta)?,
            };
            let opts = EventOptions { diagnostics_c0: cfg.diagnostics_c0, ..EventOptions::default() };
            let results = ctx.pool.run(cfg.trials, |i| -> Result<EventReport, bmcompact_core::Error> {
                let trial = root.child("trial").child(i);
                if one_vector {
                    let s = randmodel::sample_body(&params, &trial.child("body"))?;
                    let cap = bodies::make_cap_body(&params, &s.subsets)?;
                    let y = randmodel::sample_test_vector(n, params.m, &mut trial.child("vector").rng())?;
                    distance::check_one_vector(&v, &cap, &y.y, alpha, &opts)
                } else {
                    let k = randmodel::sample_body(&params, &trial.child("body").child(0))?;
                    let k2 = randmodel::sample_body(&params, &trial.child("body").child(1))?;
                    distance::check_one_body(&v, &k.body, &k2.body, &k2.subsets, alpha, &opts, &trial.child("op"))
                }
            });
            let mut t = Table::new(&["trial", "outcome", "gauge_lo", "gauge_hi", "alpha", "scale"]);
            let mut hits = 0usize;
            let mut done = 0usize;
            for (i, res) in results.into_iter().enumerate() {
                let stream = root.child("trial").child(i);
                match res {
                    Ok(r) => {
                        done += 1;
                        hits += r.outcome as usize;
                        t.push(vec![i.to_string(), r.outcome.to_string(), cell(r.gauge_lo), cell(r.gauge_hi), cell(r.alpha), cell(r.scale)]);
                        let mut payload = event_json(&r);
                        payload["kind"] = json!(if one_vector { "one_vector" } else { "one_body" });
                        payload["trial"] = json!(i);
                        records.push(ctx.record("dist", stream.name(), payload));
                    }
                    Err(e) if e.is_numeric() => {
                        failures.push(format!("trial {i}: {e}"));
                        t.push(vec![i.to_string(), String::new(), String::new(), String::new(), cell(alpha), String::new()]);
                        records.push(ctx.record("dist", stream.name(), json!({ "kind": "event_error", "trial": i, "error": e.to_string() })));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            records.push(ctx.record(
                "dist",
                root.name(),
                json!({
                    "kind": "event_summary",
                    "event": if one_vector { "one_vector" } else { "one_body" },
                    "alpha": alpha,
                    "trials": cfg.trials,
                    "evaluated": done,
                    "occurred": hits,
                    "frequency": if done > 0 { hits as f64 / done as f64 } else { f64::NAN },
                    "spectrum": (0..n).map(|i| v.get(i, i)).collect::<Vec<_>>(),
                }),
            ));
            t
        }
    };
    Ok(Computed { report: Report { command: "dist".into(), records, table, plots: Vec::new() }, artifacts, failures })
}

// ---------------------------------------------------------------------------

pub fn separate(ctx: &Context) -> Result<Computed, CliError> {
    let cfg: &SeparateConfig = section(&ctx.config.separate, "separate")?;
    let params = model(cfg.n, cfg.delta, cfg.big_n)?;
    let root = ctx.root("separate", cfg.replicate);
    let opts = SeparationOptions {
        bm: bm_options(cfg.refine_evaluations, cfg.certify_top),
        threshold: cfg.threshold,
        c1: ctx.config.constants.c1,
        max_pairs: cfg.max_pairs,
        bins: cfg.bins,
    };
    let (sampled, rep) = distance::run_separation(&params, cfg.count, &opts, &root, ctx.pool)?;

    let mut records = Vec::new();
    let mut artifacts = Vec::new();
    for (i, s) in sampled.iter().enumerate() {
        artifacts.push((format!("bodies/separate-body-{i}.json"), formats::write_body(&s.body)));
    }
    for p in &rep.pairs {
        let stream = root.child("pair").child(format!("{}-{}", p.i, p.j));
        records.push(ctx.record(
            "separate",
            stream.name(),
            json!({
                "kind": "distance",
                "i": p.i,
                "j": p.j,
                "upper": p.upper,
                "forward_hi": p.forward_hi,
                "backward_hi": p.backward_hi,
                "missing": p.missing,
            }),
        ));
    }
    let histogram: Vec<Value> = rep.histogram.iter().map(|b| json!({ "lo": b.lo, "hi": b.hi, "count": b.count })).collect();
    records.push(ctx.record(
        "separate",
        root.name(),
        json!({
            "kind": "separation_summary",
            "n": params.n,
            "delta": params.delta,
            "N": params.big_n,
            "m": params.m,
            "M": rep.count,
            "matrix": rep.matrix,
            "histogram": histogram,
            "threshold": rep.threshold,
            "below_threshold": rep.below_threshold,
            "median": rep.median,
            "predicted_scale": rep.predicted_scale,
            "covers": rep.covers,
            "outside_regime": params.outside_regime(ctx.config.constants.big_c),
        }),
    ));

    let header: Vec<String> = (0..rep.count).map(|j| format!("b{j}")).collect();
    let mut table = Table { header, rows: Vec::new() };
    for row in &rep.matrix {
        table.push(row.iter().map(|v| opt_cell(*v)).collect());
    }
    let mut markers = vec![("threshold".to_string(), rep.threshold)];
    if let Some(p) = rep.predicted_scale {
        markers.push(("predicted scale".to_string(), p));
    }
    let plot = Plot::Histogram(HistogramPlot {
        title: "pairwise distance upper bounds".into(),
        bins: rep.histogram.iter().map(|b| (b.lo, b.hi, b.count)).collect(),
        markers,
    });
    Ok(Computed { report: Report { command: "separate".into(), records, table, plots: vec![plot] }, artifacts, failures: Vec::new() })
}

// ---------------------------------------------------------------------------

pub fn family_bodies(cfg: &NetConfig) -> Result<Vec<CsBody>, CliError> {
    cfg.family
        .iter()
        .map(|f| match (f.lp, f.topk, &f.lorentz) {
            (Some(p), None, None) => CsBody::lp(cfg.n, p.value()),
            (None, Some(k), None) => CsBody::top_k(cfg.n, k),
            (None, None, Some(w)) => CsBody::lorentz(cfg.n, w.clone()),
            _ => Err(bmcompact_core::Error::InvalidParameter("family entry needs exactly one of lp, topk, lorentz".into())),
        })
        .collect::<Result<_, _>>()
        .map_err(CliError::from)
}

pub fn net_tau(cfg: &NetConfig) -> f64 {
    cfg.tau.unwrap_or_else(|| cfg.t.map(|t| t.powf(1.0 / 12.0)).unwrap_or(f64::NAN))
}

pub fn net(ctx: &Context) -> Result<Computed, CliError> {
    let cfg: &NetConfig = section(&ctx.config.net, "net")?;
    let bodies = family_bodies(cfg)?;
    let tau = net_tau(cfg);
    let cap = ctx.cap.or(cfg.cap.map(u128::from)).unwrap_or(csnet::DEFAULT_ENUMERATION_CAP);
    let opts = NetOptions { cap, big_c: ctx.config.constants.big_c };
    let net = csnet::build_net(&bodies, tau, &opts, ctx.pool)?;
    let root = ctx.root("net", cfg.replicate);

    let mut records = vec![ctx.record(
        "net",
        root.name(),
        json!({
            "kind": "net_summary",
            "n": cfg.n,
            "tau": tau,
            "t": cfg.t,
            "L": net.l,
            "psi_count": net.stats.psi_count,
            "bodies": net.stats.bodies,
            "cells": net.stats.cells,
            "ln_cell_bound": net.stats.ln_cell_bound,
            "ln_ln_separated_bound": net.stats.ln_ln_separated_bound,
            "range_warnings": net.stats.range_warnings,
            "cap": cap.to_string(),
        }),
    )];
    let mut table = Table::new(&["cell", "representative", "representative_tag", "members", "member_tags"]);
    for (i, c) in net.cells.iter().enumerate() {
        let tags: Vec<String> = c.members.iter().map(|&m| bodies[m].tag()).collect();
        records.push(ctx.record(
            "net",
            root.child("cell").child(i).name(),
            json!({
                "kind": "net_cell",
                "cell": i,
                "index": c.index,
                "representative": c.representative,
                "representative_tag": bodies[c.representative].tag(),
                "members": c.members,
                "member_tags": tags,
            }),
        ));
        table.push(vec![
            i.to_string(),
            c.representative.to_string(),
            bodies[c.representative].tag(),
            c.members.len().to_string(),
            tags.join(";"),
        ]);
    }

    let mut failures = Vec::new();
    if cfg.certify {
        let certs = ctx.pool.run(bodies.len(), |i| {
            let rep = net.representative_of(i);
            csnet::certify_pair(&bodies[i], &bodies[rep], &net.family, tau, cfg.samples, &root.child("certify").child(i))
        });
        for (i, c) in certs.into_iter().enumerate() {
            let c = c?;
            let rep = net.representative_of(i);
            if !c.granted || !c.ratios_within_tau3 {
                failures.push(format!("body {} ({}) not certified against {}", i, bodies[i].tag(), bodies[rep].tag()));
            }
            let witness = c.witness.as_ref().map(|w| json!({ "psi": w.psi, "phi_k": w.phi_k, "phi_d": w.phi_d }));
            records.push(ctx.record(
                "net",
                root.child("certify").child(i).name(),
                json!({
                    "kind": "certificate",
                    "body": i,
                    "tag": bodies[i].tag(),
                    "representative": rep,
                    "granted": c.granted,
                    "witness": witness,
                    "max_ratio_kd": c.max_ratio_kd,
                    "max_ratio_dk": c.max_ratio_dk,
                    "samples": c.samples,
                    "ratios_within_tau3": c.ratios_within_tau3,
                    "distance_bound": c.distance_bound,
                }),
            ));
        }
    }
    let artifacts = vec![("net.cells.jsonl".to_string(), formats::write_net(&net, &bodies))];
    Ok(Computed { report: Report { command: "net".into(), records, table, plots: Vec::new() }, artifacts, failures })
}
