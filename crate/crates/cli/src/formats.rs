//! Body, map and net files.
//!
//! Body and map files are JSON documents whose numbers are written with 17
//! significant digits, so reading them back reproduces every `f64` exactly.

use std::fmt::Write as _;

use bmcompact_core::bodies::{BallNorm, BodyComponent, HullBody};
use bmcompact_core::csnet::{CsBody, CsNet};
use bmcompact_core::linalg::DenseMatrix;
use serde::Deserialize;

/// `{:.16e}`: 17 significant digits, enough to round-trip any finite `f64`.
pub fn number(x: f64) -> String {
    format!("{x:.16e}")
}

fn vector(out: &mut String, v: &[f64]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&number(*x));
    }
    out.push(']');
}

fn p_name(norm: BallNorm) -> &'static str {
    match norm {
        BallNorm::L1 => "1",
        BallNorm::L2 => "2",
        BallNorm::LInf => "inf",
    }
}

pub fn write_body(body: &HullBody) -> String {
    let mut out = String::new();
    let _ = write!(out, "{{\n  \"dim\": {},\n  \"components\": [", body.dim());
    for (ci, c) in body.components().iter().enumerate() {
        out.push_str(if ci == 0 { "\n    " } else { ",\n    " });
        match c {
            BodyComponent::SignedPoints { points, unconditional } => {
                let _ = write!(out, "{{\"kind\": \"points\", \"unconditional\": {unconditional}, \"points\": [");
                for (pi, p) in points.iter().enumerate() {
                    out.push_str(if pi == 0 { "\n      " } else { ",\n      " });
                    vector(&mut out, p);
                }
                out.push_str("\n    ]}");
            }
            BodyComponent::Ball { norm, radius, support } => {
                let _ = write!(out, "{{\"kind\": \"ball\", \"p\": \"{}\", \"radius\": {}", p_name(*norm), number(*radius));
                if let Some(s) = support {
                    let list: Vec<String> = s.iter().map(usize::to_string).collect();
                    let _ = write!(out, ", \"support\": [{}]", list.join(", "));
                }
                out.push('}');
            }
        }
    }
    out.push_str("\n  ]\n}\n");
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyFile {
    dim: usize,
    components: Vec<ComponentFile>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ComponentFile {
    Points {
        #[serde(default)]
        unconditional: bool,
        points: Vec<Vec<f64>>,
    },
    Ball {
        p: String,
        radius: f64,
        support: Option<Vec<usize>>,
    },
}

pub fn read_body(text: &str) -> Result<HullBody, String> {
    let file: BodyFile = serde_json::from_str(text).map_err(|e| format!("body file: {e}"))?;
    let mut components = Vec::with_capacity(file.components.len());
    for c in file.components {
        components.push(match c {
            ComponentFile::Points { unconditional, points } => BodyComponent::points(points, unconditional),
            ComponentFile::Ball { p, radius, support } => {
                let norm = match p.as_str() {
                    "1" => BallNorm::L1,
                    "2" => BallNorm::L2,
                    "inf" => BallNorm::LInf,
                    other => return Err(format!("body file: unsupported ball exponent `{other}` (1, 2, inf)")),
                };
                BodyComponent::Ball { norm, radius, support }
            }
        });
    }
    HullBody::new(file.dim, components).map_err(|e| format!("body file: {e}"))
}

pub fn write_map(map: &DenseMatrix) -> String {
    let mut out = String::new();
    let _ = write!(out, "{{\n  \"rows\": {},\n  \"cols\": {},\n  \"data\": [", map.rows(), map.cols());
    for r in 0..map.rows() {
        out.push_str(if r == 0 { "\n    " } else { ",\n    " });
        vector(&mut out, map.row(r));
    }
    out.push_str("\n  ]\n}\n");
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
}

pub fn read_map(text: &str) -> Result<DenseMatrix, String> {
    let file: MapFile = serde_json::from_str(text).map_err(|e| format!("map file: {e}"))?;
    if file.data.len() != file.rows || file.data.iter().any(|r| r.len() != file.cols) {
        return Err(format!("map file: data is not {}x{}", file.rows, file.cols));
    }
    DenseMatrix::from_rows(&file.data).map_err(|e| format!("map file: {e}"))
}

/// Header line with the net parameters, then one JSON line per cell.
pub fn write_net(net: &CsNet, bodies: &[CsBody]) -> String {
    let mut out = serde_json::json!({
        "n": net.family.n,
        "tau": net.tau,
        "L": net.l,
        "psi_count": net.stats.psi_count,
        "cells": net.cells.len(),
        "bodies": net.stats.bodies,
    })
    .to_string();
    out.push('\n');
    for (i, cell) in net.cells.iter().enumerate() {
        let line = serde_json::json!({
            "cell": i,
            "index": cell.index,
            "representative": cell.representative,
            "representative_tag": bodies[cell.representative].tag(),
            "members": cell.members,
            "member_tags": cell.members.iter().map(|&m| bodies[m].tag()).collect::<Vec<_>>(),
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}
