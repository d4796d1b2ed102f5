//! Parameter checkpoints: a flat key-value text format, one record per
//! parameter block, `param <name> <shape> <row-major values...>`. Metadata
//! lines pin the model geometry so a checkpoint reloads without an external
//! schema. Floats use shortest round-trip formatting.

use crate::error::{HemmError, Result};
use crate::model::{MixtureParams, ModelParams, OutcomeKind, OutcomeParams};
use crate::nn::{HeadMode, Layer, Network};
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "hemm-checkpoint v1";

pub fn to_string(p: &ModelParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "meta k {}", p.k());
    let _ = writeln!(s, "meta d_cont {}", p.mixture.d_cont());
    let _ = writeln!(s, "meta d_disc {}", p.mixture.d_disc());
    let _ = writeln!(
        s,
        "meta outcome {}",
        match p.outcome.outcome_kind {
            OutcomeKind::Binary => "binary",
            OutcomeKind::Continuous => "continuous",
        }
    );
    let _ = writeln!(s, "meta head_mode {}", p.outcome.net.mode);
    let hidden = if p.outcome.net.hidden.is_empty() {
        "-".to_string()
    } else {
        p.outcome
            .net
            .hidden
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(s, "meta hidden {hidden}");
    let _ = writeln!(s, "meta sigma_y {}", p.outcome.sigma_y);

    write_matrix(&mut s, "mixture.mu", &p.mixture.mu);
    write_matrix(&mut s, "mixture.sigma2", &p.mixture.sigma2);
    write_matrix(&mut s, "mixture.pi", &p.mixture.pi);
    write_vector(&mut s, "outcome.gamma", &p.outcome.gamma);
    for (i, l) in p.outcome.net.trunk.iter().enumerate() {
        write_layer(&mut s, &format!("net.trunk{i}"), l);
    }
    for arm in 0..2 {
        for (i, l) in p.outcome.net.arms[arm].iter().enumerate() {
            write_layer(&mut s, &format!("net.arm{arm}.l{i}"), l);
        }
    }
    s
}

fn write_layer(s: &mut String, name: &str, l: &Layer) {
    write_matrix(s, &format!("{name}.w"), &l.w);
    write_vector(s, &format!("{name}.b"), &l.b);
}

fn write_matrix(s: &mut String, name: &str, m: &[Vec<f64>]) {
    let cols = m.first().map_or(0, |r| r.len());
    let _ = write!(s, "param {name} {}x{cols}", m.len());
    for row in m {
        for v in row {
            let _ = write!(s, " {v}");
        }
    }
    let _ = writeln!(s);
}

fn write_vector(s: &mut String, name: &str, v: &[f64]) {
    let _ = write!(s, "param {name} {}", v.len());
    for x in v {
        let _ = write!(s, " {x}");
    }
    let _ = writeln!(s);
}

pub fn save(p: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(p))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_string(&std::fs::read_to_string(path)?)
}

pub fn from_string(text: &str) -> Result<ModelParams> {
    let bad = |msg: &str| HemmError::Data(format!("checkpoint: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("bad magic line"));
    }
    let mut meta = std::collections::HashMap::new();
    let mut params: std::collections::HashMap<String, (Vec<usize>, Vec<f64>)> = Default::default();
    for line in lines {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("meta") => {
                let key = it.next().ok_or_else(|| bad("meta key missing"))?;
                let val = it.next().ok_or_else(|| bad("meta value missing"))?;
                meta.insert(key.to_string(), val.to_string());
            }
            Some("param") => {
                let name = it.next().ok_or_else(|| bad("param name missing"))?;
                let shape_s = it.next().ok_or_else(|| bad("param shape missing"))?;
                let shape: Vec<usize> = shape_s
                    .split('x')
                    .map(|p| p.parse().map_err(|_| bad("bad shape")))
                    .collect::<Result<_>>()?;
                let values: Vec<f64> = it
                    .map(|v| v.parse().map_err(|_| bad("bad value")))
                    .collect::<Result<_>>()?;
                if values.len() != shape.iter().product::<usize>() {
                    return Err(bad(&format!("shape/value mismatch for {name}")));
                }
                params.insert(name.to_string(), (shape, values));
            }
            None => continue,
            Some(other) => return Err(bad(&format!("unknown record `{other}`"))),
        }
    }
    let get_meta = |key: &str| -> Result<&String> {
        meta.get(key).ok_or_else(|| bad(&format!("missing meta {key}")))
    };
    let k: usize = get_meta("k")?.parse().map_err(|_| bad("bad k"))?;
    let outcome_kind = match get_meta("outcome")?.as_str() {
        "binary" => OutcomeKind::Binary,
        "continuous" => OutcomeKind::Continuous,
        _ => return Err(bad("bad outcome kind")),
    };
    let mode = match get_meta("head_mode")?.as_str() {
        "separate" => HeadMode::Separate,
        "shared" => HeadMode::SharedTrunk,
        _ => return Err(bad("bad head mode")),
    };
    let hidden: Vec<usize> = match get_meta("hidden")?.as_str() {
        "-" => Vec::new(),
        s => s
            .split(',')
            .map(|p| p.parse().map_err(|_| bad("bad hidden widths")))
            .collect::<Result<_>>()?,
    };
    let sigma_y: f64 = get_meta("sigma_y")?.parse().map_err(|_| bad("bad sigma_y"))?;
    let d_cont: usize = get_meta("d_cont")?.parse().map_err(|_| bad("bad d_cont"))?;

    let take_matrix = |name: &str| -> Result<Vec<Vec<f64>>> {
        let (shape, values) = params
            .get(name)
            .ok_or_else(|| bad(&format!("missing param {name}")))?;
        if shape.len() != 2 {
            return Err(bad(&format!("{name} is not a matrix")));
        }
        if shape[1] == 0 {
            return Ok(vec![vec![]; shape[0]]);
        }
        Ok(values.chunks(shape[1]).map(|c| c.to_vec()).collect())
    };
    let take_vector = |name: &str| -> Result<Vec<f64>> {
        let (shape, values) = params
            .get(name)
            .ok_or_else(|| bad(&format!("missing param {name}")))?;
        if shape.len() != 1 {
            return Err(bad(&format!("{name} is not a vector")));
        }
        Ok(values.clone())
    };

    let mixture = MixtureParams {
        mu: fix_rows(take_matrix("mixture.mu")?, k),
        sigma2: fix_rows(take_matrix("mixture.sigma2")?, k),
        pi: fix_rows(take_matrix("mixture.pi")?, k),
    };
    let mut net = Network::zeros(d_cont + mixture.d_disc(), &hidden, mode);
    for (i, l) in net.trunk.iter_mut().enumerate() {
        l.w = take_matrix(&format!("net.trunk{i}.w"))?;
        l.b = take_vector(&format!("net.trunk{i}.b"))?;
    }
    for arm in 0..2 {
        for i in 0..net.arms[arm].len() {
            net.arms[arm][i].w = take_matrix(&format!("net.arm{arm}.l{i}.w"))?;
            net.arms[arm][i].b = take_vector(&format!("net.arm{arm}.l{i}.b"))?;
        }
    }
    Ok(ModelParams {
        mixture,
        outcome: OutcomeParams {
            gamma: take_vector("outcome.gamma")?,
            net,
            outcome_kind,
            sigma_y,
        },
    })
}

// a KxD matrix with D=0 serializes as `Kx0` with no values; restore K rows
fn fix_rows(mut m: Vec<Vec<f64>>, k: usize) -> Vec<Vec<f64>> {
    if m.is_empty() {
        m = vec![vec![]; k];
    }
    m
}
