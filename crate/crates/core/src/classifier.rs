//! k-nearest-neighbour contingency classifier.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::features::LabeledDataset;
use crate::scenarios::ContingencyClass;

const MODEL_MAGIC: &str = "shs-knn";
const MODEL_VERSION: u32 = 1;
const MAX_DIM: usize = 4096;
const MAX_POINTS: usize = 10_000_000;

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Sums run over sorted values so the fit does not depend on row order.
    fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let sorted_sum = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v.iter().sum::<f64>()
        };
        let mean: Vec<f64> = (0..d)
            .map(|j| sorted_sum(rows.iter().map(|r| r[j]).collect()) / n)
            .collect();
        let std = (0..d)
            .map(|j| {
                let var = sorted_sum(rows.iter().map(|r| (r[j] - mean[j]).powi(2)).collect()) / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    pub dim: usize,
    /// Stored already standardized when `scaler` is set.
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<ContingencyClass>,
    pub scaler: Option<Standardizer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Rows are true class, columns predicted, in `ContingencyClass::ALL` order.
    pub confusion: [[u64; 4]; 4],
}

impl Evaluation {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

pub fn knn_train(data: &LabeledDataset, k: usize, standardize: bool) -> Result<KnnModel> {
    let labelled: Vec<_> = data.rows.iter().filter(|r| r.label.is_some()).collect();
    if labelled.is_empty() {
        return Err(Error::Empty("training set has no labelled rows".into()));
    }
    if k == 0 || k > labelled.len() {
        return Err(Error::InvalidConfig(format!(
            "k={k} with {} training points",
            labelled.len()
        )));
    }
    let dim = labelled[0].e.len();
    if labelled.iter().any(|r| r.e.len() != dim) {
        return Err(Error::DimensionMismatch(
            "training rows differ in length".into(),
        ));
    }
    let raw: Vec<Vec<f64>> = labelled.iter().map(|r| r.e.clone()).collect();
    let scaler = standardize.then(|| Standardizer::fit(&raw));
    let points = match &scaler {
        Some(s) => raw.iter().map(|x| s.apply(x)).collect(),
        None => raw,
    };
    Ok(KnnModel {
        k,
        dim,
        points,
        labels: labelled
            .iter()
            .map(|r| r.label.expect("filtered"))
            .collect(),
        scaler,
    })
}

impl KnnModel {
    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Empty("model has no training points".into()));
        }
        if self.k == 0 || self.k > self.points.len() {
            return Err(Error::InvalidConfig(format!(
                "k={} with {} points",
                self.k,
                self.points.len()
            )));
        }
        if self.labels.len() != self.points.len() || self.points.iter().any(|p| p.len() != self.dim)
        {
            return Err(Error::DimensionMismatch(
                "model points are inconsistent".into(),
            ));
        }
        Ok(())
    }

    /// Majority class among the `k` nearest points. Neighbours are ordered
    /// by (distance, class); vote ties go to the smaller distance sum, then
    /// the lower class.
    pub fn classify(&self, x: &[f64]) -> Result<ContingencyClass> {
        if self.points.is_empty() {
            return Err(Error::Empty("model has no training points".into()));
        }
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "query has {} features, model {}",
                x.len(),
                self.dim
            )));
        }
        let q = match &self.scaler {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        };
        let mut near: Vec<(f64, ContingencyClass)> = Vec::with_capacity(self.k + 1);
        for (p, &label) in self.points.iter().zip(&self.labels) {
            let d2: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            let cand = (d2, label);
            let pos = near.partition_point(|&(d, c)| d < cand.0 || (d == cand.0 && c <= cand.1));
            if pos < self.k {
                near.insert(pos, cand);
                near.truncate(self.k);
            }
        }
        let mut votes = [(0usize, 0.0f64); 4];
        for (d2, c) in near {
            votes[c.index()].0 += 1;
            votes[c.index()].1 += d2.sqrt();
        }
        let best = (0..4)
            .filter(|&i| votes[i].0 > 0)
            .min_by(|&a, &b| {
                votes[b]
                    .0
                    .cmp(&votes[a].0)
                    .then(votes[a].1.total_cmp(&votes[b].1))
                    .then(a.cmp(&b))
            })
            .expect("k >= 1");
        Ok(ContingencyClass::ALL[best])
    }

    /// Text format: a `shs-knn <version>` line, `k`, `dim`, optional
    /// `mean`/`std` lines, `points <count>`, then `<class> v_1 .. v_dim` rows.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{MODEL_MAGIC} {MODEL_VERSION}\nk {}\ndim {}\n",
            self.k, self.dim
        );
        let row = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        if let Some(sc) = &self.scaler {
            let _ = writeln!(s, "mean {}", row(&sc.mean));
            let _ = writeln!(s, "std {}", row(&sc.std));
        }
        let _ = writeln!(s, "points {}", self.points.len());
        for (p, c) in self.points.iter().zip(&self.labels) {
            let _ = writeln!(s, "{} {}", c.name(), row(p));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing {what}")))
        };
        let (ln, head) = next("header")?;
        let mut f = head.split_whitespace();
        if f.next() != Some(MODEL_MAGIC) {
            return Err(Error::parse(ln + 1, "magic", "not a knn model file"));
        }
        let version: u32 = f
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(ln + 1, "version", "missing"))?;
        if version != MODEL_VERSION {
            return Err(Error::parse(
                ln + 1,
                "version",
                format!("unsupported version {version}"),
            ));
        }
        let keyed = |(ln, line): (usize, &str), key: &str| -> Result<usize> {
            let mut f = line.split_whitespace();
            if f.next() != Some(key) {
                return Err(Error::parse(ln + 1, key, "unexpected record"));
            }
            f.next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(ln + 1, key, "bad count"))
        };
        let k = keyed(next("k")?, "k")?;
        let dim = keyed(next("dim")?, "dim")?;
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Format(format!("dimension {dim} out of range")));
        }
        let floats =
            |ln: usize, it: std::str::SplitWhitespace<'_>, field: &str| -> Result<Vec<f64>> {
                let v: Vec<f64> = it
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::parse(ln + 1, field, format!("bad number `{t}`")))
                    })
                    .collect::<Result<_>>()?;
                if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::parse(
                        ln + 1,
                        field,
                        format!("expected {dim} finite values"),
                    ));
                }
                Ok(v)
            };
        let (mut ln, mut line) = next("points")?;
        let mut scaler = None;
        if line.starts_with("mean") {
            let mut it = line.split_whitespace();
            it.next();
            let mean = floats(ln, it, "mean")?;
            let (l2, sline) = next("std")?;
            let mut it = sline.split_whitespace();
            if it.next() != Some("std") {
                return Err(Error::parse(l2 + 1, "std", "expected std after mean"));
            }
            let std = floats(l2, it, "std")?;
            if std.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::parse(l2 + 1, "std", "must be positive"));
            }
            scaler = Some(Standardizer { mean, std });
            (ln, line) = next("points")?;
        }
        let count = keyed((ln, line), "points")?;
        if count > MAX_POINTS {
            return Err(Error::Format(format!("{count} points exceeds limit")));
        }
        let mut points = Vec::with_capacity(count.min(1 << 16));
        let mut labels = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let (ln, line) = next("point")?;
            let mut it = line.split_whitespace();
            let label: ContingencyClass = it
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|_| Error::parse(ln + 1, "class", "unknown class"))?;
            points.push(floats(ln, it, "point")?);
            labels.push(label);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::parse(ln + 1, "record", "trailing data after points"));
        }
        let model = KnnModel {
            k,
            dim,
            points,
            labels,
            scaler,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn knn_classify(model: &KnnModel, x: &[f64]) -> Result<ContingencyClass> {
    model.classify(x)
}

pub fn evaluate(model: &KnnModel, test: &LabeledDataset) -> Result<Evaluation> {
    let rows: Vec<_> = test.rows.iter().filter(|r| r.label.is_some()).collect();
    if rows.is_empty() {
        return Err(Error::Empty("test set is empty".into()));
    }
    let mut confusion = [[0u64; 4]; 4];
    for r in &rows {
        let pred = model.classify(&r.e)?;
        confusion[r.label.expect("filtered").index()][pred.index()] += 1;
    }
    let correct: u64 = (0..4).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / rows.len() as f64,
        confusion,
    })
}
