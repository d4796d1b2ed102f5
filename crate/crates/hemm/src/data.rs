//! Dataset representation, the synthetic generator, delimited-file
//! ingestion, stratified splitting, and standardization.
//!
//! Dataset files are UTF-8 comma-delimited text with a header row. Column
//! name prefixes `cont:` and `disc:` mark covariates; reserved names are
//! `t`, `y`, `y0`, `y1`, `group`. Missing values are a hard error.

use crate::error::{HemmError, Result};
use crate::model::Covariates;
use crate::rng::substream;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Observational dataset. All columns have length `n`; datasets are
/// immutable after construction except for standardization, which flags
/// itself to prevent double application.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_cont: Vec<Vec<f64>>,
    pub x_disc: Vec<Vec<u8>>,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    pub y0: Option<Vec<f64>>,
    pub y1: Option<Vec<f64>>,
    pub true_group: Option<Vec<u8>>,
    /// True per-row effect tau(x), known for generated data. Kept in memory
    /// only; file round trips fall back to y1 - y0 for PEHE.
    pub true_effect: Option<Vec<f64>>,
    pub cont_names: Vec<String>,
    pub disc_names: Vec<String>,
    pub standardized: bool,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn d_cont(&self) -> usize {
        self.cont_names.len()
    }

    pub fn d_disc(&self) -> usize {
        self.disc_names.len()
    }

    pub fn covariates(&self, i: usize) -> Covariates<'_> {
        Covariates {
            x_cont: &self.x_cont[i],
            x_disc: &self.x_disc[i],
        }
    }

    /// Continuous and binary covariates concatenated as one feature vector.
    pub fn features(&self, i: usize) -> Vec<f64> {
        crate::model::feature_vec(self.covariates(i))
    }

    pub fn outcome_is_binary(&self) -> bool {
        self.y.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    /// Row subset preserving all optional columns.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let pick_f = |col: &Option<Vec<f64>>| col.as_ref().map(|c| idx.iter().map(|i| c[*i]).collect());
        Dataset {
            x_cont: idx.iter().map(|i| self.x_cont[*i].clone()).collect(),
            x_disc: idx.iter().map(|i| self.x_disc[*i].clone()).collect(),
            t: idx.iter().map(|i| self.t[*i]).collect(),
            y: idx.iter().map(|i| self.y[*i]).collect(),
            y0: pick_f(&self.y0),
            y1: pick_f(&self.y1),
            true_group: self
                .true_group
                .as_ref()
                .map(|c| idx.iter().map(|i| c[*i]).collect()),
            true_effect: pick_f(&self.true_effect),
            cont_names: self.cont_names.clone(),
            disc_names: self.disc_names.clone(),
            standardized: self.standardized,
        }
    }
}

/// Configuration for the synthetic generator: covariates uniform on the
/// unit square, confounded treatment assignment split at x0, and a circular
/// enhanced-effect region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
    pub center: (f64, f64),
    pub radius: f64,
    /// P(T=1) for x0 below / above 0.5.
    pub propensity_below: f64,
    pub propensity_above: f64,
    /// p(Y(0)=1) = base + triangle_boost * 1{x1 > x0}
    pub base_p0: f64,
    pub triangle_boost: f64,
    /// p(Y(1)=1) = p(Y(0)=1) + treatment_boost + enhanced_boost * 1{in circle}
    pub treatment_boost: f64,
    pub enhanced_boost: f64,
}

impl SyntheticSpec {
    pub fn with_seed(seed: u64) -> Self {
        SyntheticSpec {
            n: 1000,
            seed,
            center: (0.5, 0.5),
            radius: 0.25,
            propensity_below: 0.4,
            propensity_above: 0.6,
            base_p0: 0.2,
            triangle_boost: 0.3,
            treatment_boost: 0.2,
            enhanced_boost: 0.3,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.radius <= 0.0 {
            return Err(HemmError::InvalidInput("radius must be positive".into()));
        }
        for p in [self.propensity_below, self.propensity_above] {
            if !(0.0..=1.0).contains(&p) {
                return Err(HemmError::InvalidInput("propensity outside [0,1]".into()));
            }
        }
        Ok(())
    }
}

/// Generate an observational dataset with a known enhanced-effect circle.
/// Both potential outcomes are realized and stored so PEHE is computable;
/// the factual outcome selects per treatment.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = substream(spec.seed, "synthetic");
    let n = spec.n;
    let mut x_cont = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut group = Vec::with_capacity(n);
    let mut effect = Vec::with_capacity(n);
    for _ in 0..n {
        let x0: f64 = rng.gen_range(0.0..1.0);
        let x1: f64 = rng.gen_range(0.0..1.0);
        let e = if x0 < 0.5 {
            spec.propensity_below
        } else {
            spec.propensity_above
        };
        let ti = u8::from(rng.gen_bool(e));
        let in_circle =
            ((x0 - spec.center.0).powi(2) + (x1 - spec.center.1).powi(2)).sqrt() < spec.radius;
        let p0 = (spec.base_p0 + spec.triangle_boost * f64::from(x1 > x0)).clamp(0.0, 1.0);
        let p1 = (p0 + spec.treatment_boost + spec.enhanced_boost * f64::from(in_circle))
            .clamp(0.0, 1.0);
        let y0i = f64::from(rng.gen_bool(p0));
        let y1i = f64::from(rng.gen_bool(p1));
        x_cont.push(vec![x0, x1]);
        t.push(ti);
        y.push(if ti == 1 { y1i } else { y0i });
        y0.push(y0i);
        y1.push(y1i);
        group.push(u8::from(in_circle));
        effect.push(p1 - p0);
    }
    Ok(Dataset {
        x_cont,
        x_disc: vec![vec![]; n],
        t,
        y,
        y0: Some(y0),
        y1: Some(y1),
        true_group: Some(group),
        true_effect: Some(effect),
        cont_names: vec!["x0".into(), "x1".into()],
        disc_names: vec![],
        standardized: false,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Write a dataset to the delimited format. Float formatting is shortest
/// round-trip, so save/load reproduces values exactly.
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header: Vec<String> = data.cont_names.iter().map(|n| format!("cont:{n}")).collect();
    header.extend(data.disc_names.iter().map(|n| format!("disc:{n}")));
    header.push("t".into());
    header.push("y".into());
    if data.y0.is_some() {
        header.push("y0".into());
    }
    if data.y1.is_some() {
        header.push("y1".into());
    }
    if data.true_group.is_some() {
        header.push("group".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.x_cont[i].iter().map(|v| fmt_f64(*v)).collect();
        row.extend(data.x_disc[i].iter().map(|v| v.to_string()));
        row.push(data.t[i].to_string());
        row.push(fmt_f64(data.y[i]));
        if let Some(y0) = &data.y0 {
            row.push(fmt_f64(y0[i]));
        }
        if let Some(y1) = &data.y1 {
            row.push(fmt_f64(y1[i]));
        }
        if let Some(g) = &data.true_group {
            row.push(g[i].to_string());
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

enum ColKind {
    Cont(usize),
    Disc(usize),
    T,
    Y,
    Y0,
    Y1,
    Group,
}

/// Parse a dataset file, validating the schema and every value.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| HemmError::Data("empty dataset file".into()))?;
    let mut cont_names = Vec::new();
    let mut disc_names = Vec::new();
    let mut kinds = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for name in header.split(',') {
        let name = name.trim();
        if !seen.insert(name.to_string()) {
            return Err(HemmError::Data(format!("duplicate column `{name}`")));
        }
        let kind = if let Some(rest) = name.strip_prefix("cont:") {
            cont_names.push(rest.to_string());
            ColKind::Cont(cont_names.len() - 1)
        } else if let Some(rest) = name.strip_prefix("disc:") {
            disc_names.push(rest.to_string());
            ColKind::Disc(disc_names.len() - 1)
        } else {
            match name {
                "t" => ColKind::T,
                "y" => ColKind::Y,
                "y0" => ColKind::Y0,
                "y1" => ColKind::Y1,
                "group" => ColKind::Group,
                other => {
                    return Err(HemmError::Data(format!(
                        "unknown column `{other}`: expected cont:/disc: prefix or a reserved name"
                    )))
                }
            }
        };
        kinds.push(kind);
    }
    if !kinds.iter().any(|k| matches!(k, ColKind::T)) {
        return Err(HemmError::Data("missing required column `t`".into()));
    }
    if !kinds.iter().any(|k| matches!(k, ColKind::Y)) {
        return Err(HemmError::Data("missing required column `y`".into()));
    }
    let has_y0 = kinds.iter().any(|k| matches!(k, ColKind::Y0));
    let has_y1 = kinds.iter().any(|k| matches!(k, ColKind::Y1));
    let has_group = kinds.iter().any(|k| matches!(k, ColKind::Group));

    let mut data = Dataset {
        x_cont: Vec::new(),
        x_disc: Vec::new(),
        t: Vec::new(),
        y: Vec::new(),
        y0: has_y0.then(Vec::new),
        y1: has_y1.then(Vec::new),
        true_group: has_group.then(Vec::new),
        true_effect: None,
        cont_names,
        disc_names,
        standardized: false,
    };

    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != kinds.len() {
            return Err(HemmError::Data(format!(
                "line {}: expected {} fields, found {}",
                line_no + 1,
                kinds.len(),
                cells.len()
            )));
        }
        let mut cont = vec![0.0; data.cont_names.len()];
        let mut disc = vec![0u8; data.disc_names.len()];
        for (kind, cell) in kinds.iter().zip(&cells) {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(HemmError::Data(format!(
                    "line {}: missing value",
                    line_no + 1
                )));
            }
            let parse_f = || -> Result<f64> {
                cell.parse().map_err(|_| {
                    HemmError::Data(format!("line {}: bad number `{cell}`", line_no + 1))
                })
            };
            let parse_bit = || -> Result<u8> {
                match cell {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(HemmError::Data(format!(
                        "line {}: binary column holds `{other}`",
                        line_no + 1
                    ))),
                }
            };
            match kind {
                ColKind::Cont(j) => cont[*j] = parse_f()?,
                ColKind::Disc(j) => disc[*j] = parse_bit()?,
                ColKind::T => data.t.push(parse_bit()?),
                ColKind::Y => data.y.push(parse_f()?),
                ColKind::Y0 => data.y0.as_mut().unwrap().push(parse_f()?),
                ColKind::Y1 => data.y1.as_mut().unwrap().push(parse_f()?),
                ColKind::Group => data.true_group.as_mut().unwrap().push(parse_bit()?),
            }
        }
        data.x_cont.push(cont);
        data.x_disc.push(disc);
    }
    log::info!(
        "loaded {} rows, {} continuous + {} binary covariates",
        data.n(),
        data.d_cont(),
        data.d_disc()
    );
    Ok(data)
}

/// Split within each (y, t) cell (treatment only, for continuous outcomes)
/// so the joint outcome/treatment distribution is approximately preserved.
/// Cells smaller than the number of nonzero splits go entirely to train.
pub fn stratified_split(
    data: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (f1, f2, f3) = fractions;
    if (f1 + f2 + f3 - 1.0).abs() > 1e-9 || f1 < 0.0 || f2 < 0.0 || f3 < 0.0 {
        return Err(HemmError::InvalidInput("split fractions must sum to 1".into()));
    }
    let binary = data.outcome_is_binary();
    let mut cells: std::collections::BTreeMap<(u8, u8), Vec<usize>> = Default::default();
    for i in 0..data.n() {
        let key = if binary {
            (data.y[i] as u8, data.t[i])
        } else {
            (0, data.t[i])
        };
        cells.entry(key).or_default().push(i);
    }
    let n_splits = [f1, f2, f3].iter().filter(|f| **f > 0.0).count();
    let mut rng = substream(seed, "split");
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (key, mut idx) in cells {
        if idx.len() < n_splits {
            log::warn!(
                "cell (y={}, t={}) has only {} rows; assigning to train",
                key.0,
                key.1,
                idx.len()
            );
            parts[0].extend(idx);
            continue;
        }
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let b1 = (n * f1).round() as usize;
        let b2 = (n * (f1 + f2)).round() as usize;
        parts[0].extend(&idx[..b1]);
        parts[1].extend(&idx[b1..b2]);
        parts[2].extend(&idx[b2..]);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((
        data.subset(&parts[0]),
        data.subset(&parts[1]),
        data.subset(&parts[2]),
    ))
}

/// Per-column shift/scale fitted on training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardizeTransform {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl StandardizeTransform {
    /// Fit on the training split's continuous columns. Zero-variance columns
    /// get scale 1 with a warning.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.n() == 0 {
            return Err(HemmError::InvalidInput("empty training set".into()));
        }
        let d = train.d_cont();
        let n = train.n() as f64;
        let mut means = vec![0.0; d];
        for row in &train.x_cont {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut scales = vec![0.0; d];
        for row in &train.x_cont {
            for (s, (v, m)) in scales.iter_mut().zip(row.iter().zip(&means)) {
                *s += (v - m) * (v - m);
            }
        }
        for (j, s) in scales.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                log::warn!("constant continuous column {j}: scale left at 1");
                *s = 1.0;
            }
        }
        Ok(StandardizeTransform { means, scales })
    }

    /// Apply in place; refuses datasets already standardized.
    pub fn apply(&self, data: &mut Dataset) -> Result<()> {
        if data.standardized {
            return Err(HemmError::InvalidInput(
                "dataset is already standardized".into(),
            ));
        }
        for row in &mut data.x_cont {
            for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.scales) {
                *v = (*v - m) / s;
            }
        }
        data.standardized = true;
        Ok(())
    }
}

/// Fit on `train` and apply to it plus any further splits.
pub fn standardize(train: &mut Dataset, others: &mut [&mut Dataset]) -> Result<StandardizeTransform> {
    let tf = StandardizeTransform::fit(train)?;
    tf.apply(train)?;
    for d in others {
        tf.apply(d)?;
    }
    Ok(tf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_membership_geometry() {
        let spec = SyntheticSpec::with_seed(1);
        let c = spec.center;
        let at = |x0: f64, x1: f64| ((x0 - c.0).powi(2) + (x1 - c.1).powi(2)).sqrt() < spec.radius;
        assert!(at(0.5, 0.5));
        assert!(!at(0.9, 0.9)); // distance ~0.566 > 0.25
    }

    #[test]
    fn circle_area_fraction() {
        let mut spec = SyntheticSpec::with_seed(42);
        spec.n = 10_000;
        let d = generate_synthetic(&spec).unwrap();
        let frac = d.true_group.as_ref().unwrap().iter().map(|v| *v as f64).sum::<f64>()
            / d.n() as f64;
        let expect = std::f64::consts::PI / 16.0;
        assert!((frac - expect).abs() < 0.02, "fraction {frac} vs {expect}");
    }

    #[test]
    fn propensity_left_of_split() {
        let mut spec = SyntheticSpec::with_seed(7);
        spec.n = 10_000;
        let d = generate_synthetic(&spec).unwrap();
        let (mut treated, mut total) = (0.0, 0.0);
        for i in 0..d.n() {
            if d.x_cont[i][0] < 0.5 {
                total += 1.0;
                treated += d.t[i] as f64;
            }
        }
        let rate = treated / total;
        assert!((rate - 0.4).abs() < 0.03, "P(T=1|x0<0.5) = {rate}");
    }

    #[test]
    fn treatment_always_helpful() {
        let spec = SyntheticSpec::with_seed(3);
        let d = generate_synthetic(&spec).unwrap();
        for e in d.true_effect.as_ref().unwrap() {
            assert!(*e > 0.0);
        }
    }

    #[test]
    fn round_trip_exact() {
        let mut spec = SyntheticSpec::with_seed(5);
        spec.n = 50;
        let mut d = generate_synthetic(&spec).unwrap();
        d.true_effect = None; // not persisted
        let dir = std::env::temp_dir().join("hemm-data-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn bad_binary_value_reports_line() {
        let dir = std::env::temp_dir().join("hemm-data-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "disc:a,t,y\n1,0,1\n2,1,0\n").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn unknown_column_rejected() {
        let dir = std::env::temp_dir().join("hemm-data-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("unknown.csv");
        std::fs::write(&path, "cont:a,weird,t,y\n0.5,1,0,1\n").unwrap();
        assert!(load_dataset(&path).is_err());
    }

    fn toy_cells(sizes: &[(u8, u8, usize)]) -> Dataset {
        let mut t = Vec::new();
        let mut y = Vec::new();
        for (yy, tt, n) in sizes {
            for _ in 0..*n {
                t.push(*tt);
                y.push(*yy as f64);
            }
        }
        let n = t.len();
        Dataset {
            x_cont: vec![vec![0.0]; n],
            x_disc: vec![vec![]; n],
            t,
            y,
            y0: None,
            y1: None,
            true_group: None,
            true_effect: None,
            cont_names: vec!["x".into()],
            disc_names: vec![],
            standardized: false,
        }
    }

    #[test]
    fn per_cell_split_arithmetic() {
        let d = toy_cells(&[(0, 0, 40), (0, 1, 10), (1, 0, 40), (1, 1, 10)]);
        let (tr, dv, te) = stratified_split(&d, (0.7, 0.1, 0.2), 9).unwrap();
        assert_eq!((tr.n(), dv.n(), te.n()), (70, 10, 20));
        // each (y,t) cell splits 28/4/8 or 7/1/2
        let count = |s: &Dataset, yy: f64, tt: u8| {
            s.y.iter().zip(&s.t).filter(|(y, t)| **y == yy && **t == tt).count()
        };
        assert_eq!(count(&tr, 0.0, 0), 28);
        assert_eq!(count(&dv, 0.0, 0), 4);
        assert_eq!(count(&te, 0.0, 0), 8);
        assert_eq!(count(&tr, 0.0, 1), 7);
        assert_eq!(count(&dv, 0.0, 1), 1);
        assert_eq!(count(&te, 0.0, 1), 2);
    }

    #[test]
    fn degenerate_split_all_train() {
        let d = toy_cells(&[(0, 0, 12), (1, 1, 8)]);
        let (tr, dv, te) = stratified_split(&d, (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(tr.n(), 20);
        assert_eq!(dv.n(), 0);
        assert_eq!(te.n(), 0);
    }

    #[test]
    fn split_deterministic() {
        let d = toy_cells(&[(0, 0, 33), (0, 1, 21), (1, 0, 14), (1, 1, 32)]);
        let a = stratified_split(&d, (0.7, 0.1, 0.2), 5).unwrap();
        let b = stratified_split(&d, (0.7, 0.1, 0.2), 5).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn standardize_hand_zscore() {
        let mut d = toy_cells(&[(0, 0, 2)]);
        d.x_cont = vec![vec![0.0], vec![2.0]];
        let tf = standardize(&mut d, &mut []).unwrap();
        assert_eq!(d.x_cont, vec![vec![-1.0], vec![1.0]]);
        assert_eq!(tf.means, vec![1.0]);
        assert_eq!(tf.scales, vec![1.0]);
        // double application refused
        let err = tf.apply(&mut d).unwrap_err();
        assert!(err.to_string().contains("already standardized"));
    }

    #[test]
    fn standardize_constant_column() {
        let mut d = toy_cells(&[(0, 0, 3)]);
        d.x_cont = vec![vec![5.0], vec![5.0], vec![5.0]];
        standardize(&mut d, &mut []).unwrap();
        assert_eq!(d.x_cont, vec![vec![0.0], vec![0.0], vec![0.0]]);
    }
}
