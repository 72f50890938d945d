//! Contingency scenarios as matrix transforms of the nominal model.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_model::{build_small_signal_model, GridNetwork, StateSpaceModel};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContingencyClass {
    Normal,
    Physical,
    Control,
    Measurement,
}

impl ContingencyClass {
    pub const ALL: [ContingencyClass; 4] = [
        ContingencyClass::Normal,
        ContingencyClass::Physical,
        ContingencyClass::Control,
        ContingencyClass::Measurement,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ContingencyClass::Normal => "normal",
            ContingencyClass::Physical => "physical",
            ContingencyClass::Control => "control",
            ContingencyClass::Measurement => "measurement",
        }
    }
}

impl fmt::Display for ContingencyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ContingencyClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown class `{s}`")))
    }
}

/// Matrix change applied by a scenario. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    LineOutage(String),
    InputScale(usize, f64),
    InputLoss(usize),
    SensorScale(usize, f64),
    SensorLoss(usize),
}

impl Transform {
    pub fn class(&self) -> ContingencyClass {
        match self {
            Transform::Identity => ContingencyClass::Normal,
            Transform::LineOutage(_) => ContingencyClass::Physical,
            Transform::InputScale(..) | Transform::InputLoss(_) => ContingencyClass::Control,
            Transform::SensorScale(..) | Transform::SensorLoss(_) => ContingencyClass::Measurement,
        }
    }

    /// `(transform, parameter)` columns of the catalog manifest, one-based indices.
    pub fn manifest_fields(&self) -> (String, String) {
        match self {
            Transform::Identity => ("identity".into(), String::new()),
            Transform::LineOutage(id) => ("line_outage".into(), id.clone()),
            Transform::InputScale(i, f) => (format!("input_scale(u{})", i + 1), format!("{f}")),
            Transform::InputLoss(i) => (format!("input_loss(u{})", i + 1), "0".into()),
            Transform::SensorScale(j, f) => (format!("sensor_scale(y{})", j + 1), format!("{f}")),
            Transform::SensorLoss(j) => (format!("sensor_loss(y{})", j + 1), "0".into()),
        }
    }

    /// Applies the transform to `model`. Line outages rebuild `A` from the
    /// grid with every line except the removed one, leaving `B` and `C` as given.
    pub fn apply_to(&self, model: &StateSpaceModel, grid: &GridNetwork) -> Result<StateSpaceModel> {
        let mut out = model.clone();
        match self {
            Transform::Identity => {}
            Transform::LineOutage(id) => {
                let mut topo = grid.all_lines();
                if !topo.remove(id) {
                    return Err(Error::Validation(format!("unknown line `{id}`")));
                }
                let rebuilt = build_small_signal_model(grid, &topo)?;
                if rebuilt.a.shape() != model.a.shape() {
                    return Err(Error::DimensionMismatch(
                        "rebuilt A differs in shape".into(),
                    ));
                }
                out.a = rebuilt.a;
            }
            Transform::InputScale(i, f) => scale_col(&mut out.b, *i, *f)?,
            Transform::InputLoss(i) => scale_col(&mut out.b, *i, 0.0)?,
            Transform::SensorScale(j, f) => scale_row(&mut out.c, *j, *f)?,
            Transform::SensorLoss(j) => scale_row(&mut out.c, *j, 0.0)?,
        }
        Ok(out)
    }
}

fn scale_col(m: &mut DMatrix<f64>, i: usize, f: f64) -> Result<()> {
    if i >= m.ncols() {
        return Err(Error::IndexOutOfRange {
            what: "input",
            index: i,
            len: m.ncols(),
        });
    }
    m.column_mut(i).scale_mut(f);
    if f == 0.0 {
        m.column_mut(i).fill(0.0);
    }
    Ok(())
}

fn scale_row(m: &mut DMatrix<f64>, j: usize, f: f64) -> Result<()> {
    if j >= m.nrows() {
        return Err(Error::IndexOutOfRange {
            what: "output",
            index: j,
            len: m.nrows(),
        });
    }
    m.row_mut(j).scale_mut(f);
    if f == 0.0 {
        m.row_mut(j).fill(0.0);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyScenario {
    pub alpha: u32,
    pub class: ContingencyClass,
    pub description: String,
    pub transform: Transform,
}

impl ContingencyScenario {
    pub fn new(alpha: u32, transform: Transform) -> Result<Self> {
        if alpha == 0 {
            return Err(Error::Validation("alpha starts at 1".into()));
        }
        if (alpha == 1) != (transform == Transform::Identity) {
            return Err(Error::Validation(
                "alpha 1 is reserved for the identity scenario".into(),
            ));
        }
        match transform {
            Transform::InputScale(_, f) | Transform::SensorScale(_, f) => {
                if !(f >= 0.0) || !f.is_finite() {
                    return Err(Error::Validation(format!(
                        "scale factor {f} must be finite and non-negative"
                    )));
                }
                if f == 1.0 {
                    return Err(Error::Validation("scale factor 1.0 is the identity".into()));
                }
            }
            _ => {}
        }
        let description = match &transform {
            Transform::Identity => "normal operation".to_string(),
            Transform::LineOutage(id) => format!("outage of line {id}"),
            Transform::InputScale(i, f) => format!("input u{} scaled by {f}", i + 1),
            Transform::InputLoss(i) => format!("input u{} lost", i + 1),
            Transform::SensorScale(j, f) => format!("sensor y{} scaled by {f}", j + 1),
            Transform::SensorLoss(j) => format!("sensor y{} lost", j + 1),
        };
        Ok(ContingencyScenario {
            alpha,
            class: transform.class(),
            description,
            transform,
        })
    }
}

pub fn apply_contingency(
    nominal: &StateSpaceModel,
    grid: &GridNetwork,
    s: &ContingencyScenario,
) -> Result<StateSpaceModel> {
    s.transform.apply_to(nominal, grid)
}

/// `{low, low+step, ..., high}` without 1.0, snapped to 12 decimals.
pub fn quantize_parameter_range(low: f64, high: f64, step: f64) -> Result<Vec<f64>> {
    if !(low.is_finite() && high.is_finite() && step.is_finite()) || !(low < high) || !(step > 0.0)
    {
        return Err(Error::EmptyRange(format!(
            "low={low}, high={high}, step={step}"
        )));
    }
    let count = ((high - low) / step + 1e-9).floor() as usize + 1;
    let out: Vec<f64> = (0..count)
        .map(|i| ((low + i as f64 * step) * 1e12).round() / 1e12)
        .filter(|v| (v - 1.0).abs() > 1e-9)
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyRange(
            "only the identity factor lies in range".into(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LineSelection {
    /// First `n` lines in file order whose removal keeps the model buildable.
    FirstRemovable(usize),
    /// Every line whose removal keeps the model buildable.
    AllRemovable,
    Explicit(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclaredCounts {
    pub physical: usize,
    pub control: usize,
    pub measurement: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogSpec {
    pub lines: LineSelection,
    /// Applied to every input; 0.0 becomes `InputLoss`.
    pub control_factors: Vec<f64>,
    /// Applied to every sensor; 0.0 becomes `SensorLoss`.
    pub measurement_factors: Vec<f64>,
    pub declared: Option<DeclaredCounts>,
}

impl CatalogSpec {
    pub fn empty() -> Self {
        CatalogSpec {
            lines: LineSelection::Explicit(Vec::new()),
            control_factors: Vec::new(),
            measurement_factors: Vec::new(),
            declared: None,
        }
    }

    pub fn ieee33_default() -> Self {
        CatalogSpec {
            lines: LineSelection::FirstRemovable(28),
            control_factors: vec![1.25, 1.5, 1.75, 2.0, 0.75, 0.5, 0.25, 0.0],
            measurement_factors: quantize_parameter_range(0.2, 1.8, 0.1).expect("static range"),
            declared: Some(DeclaredCounts {
                physical: 28,
                control: 32,
                measurement: 32,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub scenarios: Vec<ContingencyScenario>,
    /// Indexed by `alpha - 1`.
    pub models: Vec<StateSpaceModel>,
    /// Lines skipped while enumerating outages because removal disconnects the model.
    pub excluded_lines: Vec<String>,
}

impl Catalog {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn model(&self, alpha: u32) -> Option<&StateSpaceModel> {
        self.models.get((alpha as usize).checked_sub(1)?)
    }

    pub fn scenario(&self, alpha: u32) -> Option<&ContingencyScenario> {
        self.scenarios.get((alpha as usize).checked_sub(1)?)
    }

    pub fn nominal(&self) -> &StateSpaceModel {
        &self.models[0]
    }

    pub fn class_of(&self, alpha: u32) -> Option<ContingencyClass> {
        self.scenario(alpha).map(|s| s.class)
    }

    pub fn count(&self, class: ContingencyClass) -> usize {
        self.scenarios.iter().filter(|s| s.class == class).count()
    }

    pub fn write_manifest<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["alpha", "class", "transform", "parameter"])?;
        for s in &self.scenarios {
            let (t, p) = s.transform.manifest_fields();
            wr.write_record([s.alpha.to_string(), s.class.to_string(), t, p])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn build_catalog(
    grid: &GridNetwork,
    nominal: &StateSpaceModel,
    spec: &CatalogSpec,
) -> Result<Catalog> {
    let mut transforms = vec![Transform::Identity];
    let mut excluded = Vec::new();
    let mut physical = Vec::new();
    match &spec.lines {
        LineSelection::Explicit(ids) => {
            for id in ids {
                physical.push(Transform::LineOutage(id.clone()));
            }
        }
        LineSelection::FirstRemovable(_) | LineSelection::AllRemovable => {
            let want = match spec.lines {
                LineSelection::FirstRemovable(n) => n,
                _ => usize::MAX,
            };
            for line in &grid.lines {
                if physical.len() == want {
                    break;
                }
                let mut topo = grid.all_lines();
                topo.remove(&line.id);
                match build_small_signal_model(grid, &topo) {
                    Ok(_) => physical.push(Transform::LineOutage(line.id.clone())),
                    Err(Error::DisconnectedTopology { .. }) | Err(Error::SingularReduction(_)) => {
                        excluded.push(line.id.clone())
                    }
                    Err(e) => return Err(e),
                }
            }
            if want != usize::MAX && physical.len() < want {
                return Err(Error::SpecInconsistency(format!(
                    "only {} removable lines, {want} requested",
                    physical.len()
                )));
            }
        }
    }
    transforms.extend(physical);
    for i in 0..nominal.p() {
        for &f in &spec.control_factors {
            transforms.push(if f == 0.0 {
                Transform::InputLoss(i)
            } else {
                Transform::InputScale(i, f)
            });
        }
    }
    for j in 0..nominal.r() {
        for &f in &spec.measurement_factors {
            transforms.push(if f == 0.0 {
                Transform::SensorLoss(j)
            } else {
                Transform::SensorScale(j, f)
            });
        }
    }

    let mut scenarios = Vec::with_capacity(transforms.len());
    let mut models = Vec::with_capacity(transforms.len());
    for (k, t) in transforms.into_iter().enumerate() {
        let s = ContingencyScenario::new(k as u32 + 1, t)?;
        models.push(apply_contingency(nominal, grid, &s)?);
        scenarios.push(s);
    }
    let catalog = Catalog {
        scenarios,
        models,
        excluded_lines: excluded,
    };

    if let Some(d) = &spec.declared {
        let got = (
            catalog.count(ContingencyClass::Physical),
            catalog.count(ContingencyClass::Control),
            catalog.count(ContingencyClass::Measurement),
        );
        if got != (d.physical, d.control, d.measurement) {
            return Err(Error::SpecInconsistency(format!(
                "declared {}/{}/{} physical/control/measurement scenarios, built {}/{}/{}",
                d.physical, d.control, d.measurement, got.0, got.1, got.2
            )));
        }
    }
    Ok(catalog)
}

pub fn controllability_matrix(model: &StateSpaceModel) -> DMatrix<f64> {
    let n = model.n();
    let p = model.p();
    let mut m = DMatrix::zeros(n, n * p);
    let mut blk = model.b.clone();
    for k in 0..n {
        m.view_mut((0, k * p), (n, p)).copy_from(&blk);
        blk = &model.a * blk;
    }
    m
}

pub fn observability_matrix(model: &StateSpaceModel) -> DMatrix<f64> {
    let n = model.n();
    let r = model.r();
    let mut m = DMatrix::zeros(n * r, n);
    let mut blk = model.c.clone();
    for k in 0..n {
        m.view_mut((k * r, 0), (r, n)).copy_from(&blk);
        blk = blk * &model.a;
    }
    m
}

/// Krylov stack of `a` and `b` with block k divided by `s^k`, `s` the spectral
/// norm of `a`. Block scaling leaves the rank unchanged but keeps the higher
/// powers from swamping the first blocks.
fn scaled_krylov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = b.ncols();
    let s = linalg::singular_values(a).first().copied().unwrap_or(0.0);
    let a = if s > 0.0 { a / s } else { a.clone() };
    let mut m = DMatrix::zeros(n, n * p);
    let mut blk = b.clone();
    for k in 0..n {
        m.view_mut((0, k * p), (n, p)).copy_from(&blk);
        blk = &a * blk;
    }
    m
}

/// Rank of `[B, AB, ..., A^{n-1}B]` at `RANK_RTOL`, evaluated on the
/// norm-scaled stack.
pub fn controllability_rank(model: &StateSpaceModel) -> usize {
    linalg::rank(&scaled_krylov(&model.a, &model.b))
}

pub fn observability_rank(model: &StateSpaceModel) -> usize {
    linalg::rank(&scaled_krylov(&model.a.transpose(), &model.c.transpose()))
}
