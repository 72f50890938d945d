//! Log-error features and labelled dataset generation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::closed_loop::{assemble_closed_loop, GainSet};
use crate::error::{Error, Result};
use crate::grid_model::GridNetwork;
use crate::linalg::{orthonormal_basis, project_out};
use crate::scenarios::{Catalog, ContingencyClass, Transform};
use crate::simulator::{
    derive_seed, discretize, error_starts, interval_inputs, make_probe, simulate_window,
    unforced_response, DiscreteCatalog, DiscreteLoop, NoiseSource, SimConfig,
};

pub const DEFAULT_EPSILON: f64 = 1e-12;

const PARAM_TAG: u64 = 0x7061_7261_6d73;
const DATA_NOISE_TAG: u64 = 0x6461_7461;
const WARMUP_TAG: u64 = 0x7761_726d;

/// Noiseless random catalog intervals run before each dataset window, so rows
/// start from the kind of carried state a live sequence produces.
pub const WARMUP_INTERVALS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub e: Vec<f64>,
    pub label: Option<ContingencyClass>,
    /// Catalog scenario, or 0 for a randomized off-catalog parameter.
    pub alpha: u32,
    pub noise_db: f64,
    pub seed: u64,
    /// Generating transform; not persisted in CSV.
    pub transform: Option<Transform>,
}

impl FeatureVector {
    pub fn unlabeled(e: Vec<f64>) -> Self {
        FeatureVector {
            e,
            label: None,
            alpha: 0,
            noise_db: f64::NAN,
            seed: 0,
            transform: None,
        }
    }
}

/// `e_i(l) = |y_i(l) - y_nom_i(l)|`.
pub fn error_series(traj: &DMatrix<f64>, nominal: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if traj.shape() != nominal.shape() {
        return Err(Error::DimensionMismatch(format!(
            "trajectory {:?} vs nominal {:?}",
            traj.shape(),
            nominal.shape()
        )));
    }
    Ok((traj - nominal).abs())
}

/// Error series after removing the part explained by an unknown start
/// estimation error. `basis` is orthonormal over the sample-major flattening
/// of the window.
pub fn projected_errors(
    traj: &DMatrix<f64>,
    nominal: &DMatrix<f64>,
    basis: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if traj.shape() != nominal.shape() || basis.nrows() != traj.len() {
        return Err(Error::DimensionMismatch(format!(
            "trajectory {:?}, nominal {:?}, basis {:?}",
            traj.shape(),
            nominal.shape(),
            basis.shape()
        )));
    }
    let mut d = DVector::from_column_slice((traj - nominal).as_slice());
    project_out(&mut d, basis);
    Ok(DMatrix::from_column_slice(traj.nrows(), traj.ncols(), d.as_slice()).abs())
}

/// `E_i = ln(sum_l e_i(l) + eps)`.
pub fn aggregate_features(errors: &DMatrix<f64>, epsilon: f64) -> DVector<f64> {
    DVector::from_fn(errors.nrows(), |i, _| (errors.row(i).sum() + epsilon).ln())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub rows: Vec<FeatureVector>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(|r| r.e.len())
    }

    pub fn class_counts(&self) -> BTreeMap<ContingencyClass, usize> {
        let mut m = BTreeMap::new();
        for r in &self.rows {
            if let Some(c) = r.label {
                *m.entry(c).or_insert(0) += 1;
            }
        }
        m
    }

    /// Distinct noise levels in first-seen order.
    pub fn noise_levels(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|&x| x.to_bits() == r.noise_db.to_bits()) {
                out.push(r.noise_db);
            }
        }
        out
    }

    pub fn at_noise(&self, noise_db: f64) -> LabeledDataset {
        LabeledDataset {
            rows: self
                .rows
                .iter()
                .filter(|r| r.noise_db.to_bits() == noise_db.to_bits())
                .cloned()
                .collect(),
        }
    }

    /// Stratified split; within each class a seeded shuffle picks `train_fraction` of the rows.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in ContingencyClass::ALL {
            let mut idx: Vec<usize> = (0..self.rows.len())
                .filter(|&i| self.rows[i].label == Some(class))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, class.index() as u64 + 1));
            // Fisher-Yates
            for i in (1..idx.len()).rev() {
                let j = rng.random_range(0..=i);
                idx.swap(i, j);
            }
            let cut = ((idx.len() as f64) * train_fraction).round() as usize;
            let (a, b) = idx.split_at(cut.min(idx.len()));
            train.extend(a.iter().copied());
            test.extend(b.iter().copied());
        }
        train.sort_unstable();
        test.sort_unstable();
        let pick = |v: Vec<usize>| LabeledDataset {
            rows: v.into_iter().map(|i| self.rows[i].clone()).collect(),
        };
        (pick(train), pick(test))
    }

    /// CSV with header `E_1..E_d, alpha, class, noise_db, seed`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.dim().unwrap_or(0);
        let mut header: Vec<String> = (1..=d).map(|i| format!("E_{i}")).collect();
        header.extend(["alpha", "class", "noise_db", "seed"].map(String::from));
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.e.iter().map(|v| format!("{v:e}")).collect();
            rec.push(r.alpha.to_string());
            rec.push(r.label.map(|c| c.name().to_string()).unwrap_or_default());
            rec.push(format!("{}", r.noise_db));
            rec.push(r.seed.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`LabeledDataset::write_csv`]; `#` lines are skipped.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let header = rd.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let d = cols
            .len()
            .checked_sub(4)
            .ok_or_else(|| Error::Format("dataset header too short".into()))?;
        for (i, name) in cols[..d].iter().enumerate() {
            if *name != format!("E_{}", i + 1) {
                return Err(Error::Format(format!("unexpected column `{name}`")));
            }
        }
        if cols[d..] != ["alpha", "class", "noise_db", "seed"] {
            return Err(Error::Format(
                "dataset header must end with alpha,class,noise_db,seed".into(),
            ));
        }
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != d + 4 {
                return Err(Error::parse(
                    line,
                    "record",
                    format!("expected {} fields", d + 4),
                ));
            }
            let mut e = Vec::with_capacity(d);
            for k in 0..d {
                let v: f64 = rec[k]
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(line, cols[k], "not a number"))?;
                if v.is_nan() {
                    return Err(Error::parse(line, cols[k], "NaN feature"));
                }
                e.push(v);
            }
            let alpha = rec[d]
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, "alpha", "not an integer"))?;
            let label = match rec[d + 1].trim() {
                "" => None,
                s => Some(
                    s.parse()
                        .map_err(|_| Error::parse(line, "class", format!("unknown class `{s}`")))?,
                ),
            };
            let noise_db = rec[d + 2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, "noise_db", "not a number"))?;
            let seed = rec[d + 3]
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, "seed", "not an integer"))?;
            rows.push(FeatureVector {
                e,
                label,
                alpha,
                noise_db,
                seed,
                transform: None,
            });
        }
        Ok(LabeledDataset { rows })
    }
}

/// Randomized scenario for one dataset row.
fn draw_transform(
    rng: &mut ChaCha8Rng,
    class: ContingencyClass,
    catalog: &Catalog,
    p: usize,
    r: usize,
) -> Result<(Transform, u32)> {
    Ok(match class {
        ContingencyClass::Normal => (Transform::Identity, 1),
        ContingencyClass::Physical => {
            let lines: Vec<_> = catalog
                .scenarios
                .iter()
                .filter(|s| s.class == ContingencyClass::Physical)
                .collect();
            if lines.is_empty() {
                return Err(Error::Empty("catalog has no physical scenarios".into()));
            }
            let s = lines[rng.random_range(0..lines.len())];
            (s.transform.clone(), s.alpha)
        }
        ContingencyClass::Control => {
            let i = rng.random_range(0..p);
            let f: f64 = rng.random_range(0.0..2.0);
            (
                if f == 0.0 {
                    Transform::InputLoss(i)
                } else {
                    Transform::InputScale(i, f)
                },
                0,
            )
        }
        ContingencyClass::Measurement => {
            let j = rng.random_range(0..r);
            let f: f64 = rng.random_range(0.0..2.0);
            (
                if f == 0.0 {
                    Transform::SensorLoss(j)
                } else {
                    Transform::SensorScale(j, f)
                },
                0,
            )
        }
    })
}

/// State after `WARMUP_INTERVALS` uniformly drawn catalog intervals from rest.
fn warmup_state(dcat: &DiscreteCatalog, cfg: &SimConfig, row: u64) -> Result<DVector<f64>> {
    let first: &DiscreteLoop = dcat
        .loops
        .first()
        .ok_or_else(|| Error::Empty("catalog".into()))?;
    let (probe, tail) = interval_inputs(cfg, first.p)?;
    let silent = NoiseSource::new(f64::NEG_INFINITY, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, WARMUP_TAG));
    rng.set_stream(row);
    let mut state = DVector::zeros(first.states());
    for _ in 0..WARMUP_INTERVALS {
        let d = &dcat.loops[rng.random_range(0..dcat.len())];
        let head = simulate_window(d, &state, &probe, &silent, 0, 0)?;
        state = simulate_window(d, &head.final_state, &tail, &silent, 0, 0)?.final_state;
    }
    Ok(state)
}

/// Everything needed to simulate arbitrary scenarios against one design.
pub struct DatasetContext<'a> {
    pub grid: &'a GridNetwork,
    pub catalog: &'a Catalog,
    pub gains: &'a GainSet,
}

/// One `tau1` window per row, started after a short random warm-up, with
/// features against the noiseless nominal response from the same state and the
/// estimation-error subspace removed.
/// Rows are ordered by noise level, then class, then draw index.
pub fn generate_dataset(
    ctx: &DatasetContext<'_>,
    cfg: &SimConfig,
    per_class: usize,
    noise_levels: &[f64],
    epsilon: f64,
) -> Result<LabeledDataset> {
    if per_class == 0 {
        return Err(Error::InvalidConfig("per_class must be at least 1".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be positive".into()));
    }
    cfg.validate()?;
    let nominal = ctx.catalog.nominal();
    let (p, r) = (nominal.p(), nominal.r());
    let probe = make_probe(&cfg.probe, p, cfg.tau1, cfg.t_s)?;
    let d_nom = discretize(&assemble_closed_loop(nominal, ctx.gains)?, cfg.t_s)?;
    let basis = orthonormal_basis(&unforced_response(
        &d_nom,
        &error_starts(d_nom.n),
        cfg.n1(),
    )?)?;
    let dcat = DiscreteCatalog::build(ctx.catalog, ctx.gains, cfg.t_s)?;
    let silent = NoiseSource::new(f64::NEG_INFINITY, 0);

    let per_level = 4 * per_class;
    let jobs: Vec<(usize, usize)> = (0..noise_levels.len() * per_level)
        .map(|i| (i / per_level, i % per_level))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(li, j)| {
            let row = (li * per_level + j) as u64;
            let class = ContingencyClass::ALL[j / per_class];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, PARAM_TAG));
            rng.set_stream(row);
            let (transform, alpha) = draw_transform(&mut rng, class, ctx.catalog, p, r)?;
            let model = if alpha >= 1 {
                ctx.catalog
                    .model(alpha)
                    .expect("alpha from catalog")
                    .clone()
            } else {
                transform.apply_to(nominal, ctx.grid)?
            };
            let d = discretize(&assemble_closed_loop(&model, ctx.gains)?, cfg.t_s)?;
            let x0 = warmup_state(&dcat, cfg, row)?;
            let noise = NoiseSource::new(noise_levels[li], derive_seed(cfg.seed, DATA_NOISE_TAG));
            let run = simulate_window(&d, &x0, &probe, &noise, row, 0)?;
            let reference = simulate_window(&d_nom, &x0, &probe, &silent, 0, 0)?.yc;
            let e = aggregate_features(&projected_errors(&run.yc, &reference, &basis)?, epsilon);
            Ok(FeatureVector {
                e: e.iter().copied().collect(),
                label: Some(class),
                alpha,
                noise_db: noise_levels[li],
                seed: cfg.seed,
                transform: Some(transform),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset { rows })
}
