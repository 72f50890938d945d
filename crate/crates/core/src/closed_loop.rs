//! Gain design by pole placement, the observer-augmented closed loop and
//! eigen-signature based class inference.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_model::StateSpaceModel;
use crate::linalg::{self, EIG_RTOL};
use crate::scenarios::{controllability_rank, Catalog, ContingencyClass};

type CMatrix = DMatrix<Complex64>;

/// Normal-operation controller spectrum of the reference system.
pub const REFERENCE_CONTROLLER_POLES: [(f64, f64); 8] = [
    (-1.096, 0.0),
    (-0.833, 0.0),
    (-0.150, 0.0),
    (-0.065, 0.0),
    (-0.339, 0.054),
    (-0.339, -0.054),
    (-0.622, 0.21),
    (-0.622, -0.21),
];

pub const DEFAULT_OBSERVER_POLES: [f64; 8] = [-15.0, -14.0, -13.0, -12.0, -11.0, -9.0, -8.0, -7.0];

pub fn reference_controller_poles(scale: f64) -> Vec<Complex64> {
    REFERENCE_CONTROLLER_POLES
        .iter()
        .map(|&(re, im)| Complex64::new(re * scale, im * scale))
        .collect()
}

pub fn default_observer_poles() -> Vec<Complex64> {
    DEFAULT_OBSERVER_POLES
        .iter()
        .map(|&re| Complex64::new(re, 0.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub k: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub controller_poles: Vec<Complex64>,
    pub observer_poles: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub lambda1: Vec<Complex64>,
    pub lambda2: Vec<Complex64>,
    pub n: usize,
    pub p: usize,
    pub r: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EigenSignature {
    pub lambda1_changed: bool,
    pub lambda2_changed: bool,
}

enum Slot {
    Real(f64),
    Pair(Complex64),
}

impl Slot {
    fn width(&self) -> usize {
        match self {
            Slot::Real(_) => 1,
            Slot::Pair(_) => 2,
        }
    }
}

fn group_poles(poles: &[Complex64]) -> Result<Vec<Slot>> {
    let scale = poles.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut used = vec![false; poles.len()];
    let mut slots = Vec::new();
    for i in 0..poles.len() {
        if used[i] {
            continue;
        }
        let p = poles[i];
        if !(p.re.is_finite() && p.im.is_finite()) {
            return Err(Error::Validation("pole is not finite".into()));
        }
        used[i] = true;
        if p.im.abs() <= tol {
            slots.push(Slot::Real(p.re));
            continue;
        }
        let partner = (0..poles.len())
            .filter(|&j| !used[j])
            .min_by(|&a, &b| {
                (poles[a] - p.conj())
                    .norm()
                    .total_cmp(&(poles[b] - p.conj()).norm())
            })
            .filter(|&j| (poles[j] - p.conj()).norm() <= tol)
            .ok_or(Error::NotConjugateClosed)?;
        used[partner] = true;
        slots.push(Slot::Pair(if p.im > 0.0 { p } else { p.conj() }));
    }
    Ok(slots)
}

fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Right nullspace of a wide matrix with exactly `dim` null directions.
fn nullspace(m: &CMatrix, dim: usize) -> CMatrix {
    let (rows, cols) = m.shape();
    let mut sq = CMatrix::zeros(cols, cols);
    sq.view_mut((0, 0), (rows, cols)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let mut out = CMatrix::zeros(cols, dim);
    for (k, &i) in order.iter().take(dim).enumerate() {
        out.set_column(k, &vt.row(i).adjoint());
    }
    out
}

/// Orthonormal basis of the orthogonal complement of `range(x)`, `dim` vectors.
fn complement(x: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let mut sq = DMatrix::zeros(n, n);
    sq.view_mut((0, 0), (n, x.ncols())).copy_from(x);
    let svd = sq.svd(true, false);
    let u = svd.u.expect("requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let mut out = DMatrix::zeros(n, dim);
    for (k, &i) in order.iter().take(dim).enumerate() {
        out.set_column(k, &u.column(i));
    }
    out
}

fn char_poly(poles: &[Complex64]) -> Vec<f64> {
    // Coefficients highest power first.
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &p in poles {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * p;
        }
        c = next;
    }
    c.into_iter().map(|z| z.re).collect()
}

fn ackermann(a: &DMatrix<f64>, b: &DMatrix<f64>, poles: &[Complex64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.column(0).into_owned();
    for k in 0..n {
        ctrb.set_column(k, &col);
        col = a * col;
    }
    let mut pa = DMatrix::<f64>::zeros(n, n);
    for &coef in &char_poly(poles) {
        pa = &pa * a + DMatrix::identity(n, n) * coef;
    }
    let mut en = DVector::zeros(n);
    en[n - 1] = 1.0;
    let z = ctrb
        .transpose()
        .lu()
        .solve(&en)
        .ok_or_else(|| Error::PlacementFailed("controllability matrix is singular".into()))?;
    let f = -(z.transpose() * pa);
    Ok(DMatrix::from_row_slice(1, n, f.as_slice()))
}

struct SlotBasis {
    q: CMatrix,
    w: CMatrix,
}

fn eigenstructure(a: &DMatrix<f64>, b: &DMatrix<f64>, slots: &[Slot]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let q = b.ncols();
    let ac = to_complex(a);
    let bc = to_complex(b);

    let mut bases = Vec::with_capacity(slots.len());
    for slot in slots {
        let lam = match *slot {
            Slot::Real(re) => Complex64::new(re, 0.0),
            Slot::Pair(p) => p,
        };
        let mut m = CMatrix::zeros(n, n + q);
        m.view_mut((0, 0), (n, n))
            .copy_from(&(&ac - CMatrix::identity(n, n) * lam));
        m.view_mut((0, n), (n, q)).copy_from(&bc);
        let mut ns = nullspace(&m, q);
        if matches!(slot, Slot::Real(_)) {
            // Rotate each null vector to be real; the null space of a real
            // matrix has a real basis, found from the real and imaginary parts.
            let re = ns.map(|z| z.re);
            let im = ns.map(|z| z.im);
            let mut both = DMatrix::zeros(n + q, 2 * q);
            both.view_mut((0, 0), (n + q, q)).copy_from(&re);
            both.view_mut((0, q), (n + q, q)).copy_from(&im);
            let svd = both.svd(true, false);
            let u = svd.u.expect("requested");
            let mut order: Vec<usize> = (0..2 * q).collect();
            order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
            let mut real = DMatrix::zeros(n + q, q);
            for (k, &i) in order.iter().take(q).enumerate() {
                real.set_column(k, &u.column(i));
            }
            ns = to_complex(&real);
        }
        let p = ns.view((0, 0), (n, q)).into_owned();
        let w = ns.view((n, 0), (q, q)).into_owned();
        let qr = p.qr();
        let r = qr.r();
        let r_inv = r.try_inverse().ok_or_else(|| {
            Error::PlacementFailed("input matrix must have full column rank".into())
        })?;
        bases.push(SlotBasis {
            q: qr.q(),
            w: w * r_inv,
        });
    }

    // Initial eigenvectors: distinct basis columns per slot.
    let mut vecs: Vec<DVector<Complex64>> = bases
        .iter()
        .enumerate()
        .map(|(s, bs)| bs.q.column(s % q).into_owned())
        .collect();

    let real_block = |vecs: &[DVector<Complex64>], skip: usize| {
        let width: usize = slots
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != skip)
            .map(|(_, sl)| sl.width())
            .sum();
        let mut x = DMatrix::zeros(n, width);
        let mut c = 0;
        for (s, sl) in slots.iter().enumerate() {
            if s == skip {
                continue;
            }
            x.set_column(c, &vecs[s].map(|z| z.re));
            c += 1;
            if sl.width() == 2 {
                x.set_column(c, &vecs[s].map(|z| z.im));
                c += 1;
            }
        }
        x
    };

    for _sweep in 0..60 {
        let mut moved: f64 = 0.0;
        for (s, slot) in slots.iter().enumerate() {
            let others = real_block(&vecs, s);
            let y = complement(&others, slot.width());
            let bs = &bases[s];
            let candidates: Vec<DVector<Complex64>> = match slot {
                Slot::Real(_) => vec![y.column(0).map(|x| Complex64::new(x, 0.0))],
                Slot::Pair(_) => {
                    let y1 = y.column(0);
                    let y2 = y.column(1);
                    let plus = DVector::from_fn(n, |i, _| Complex64::new(y1[i], y2[i]));
                    let minus = DVector::from_fn(n, |i, _| Complex64::new(y1[i], -y2[i]));
                    vec![plus, minus]
                }
            };
            let best = candidates
                .into_iter()
                .map(|z| &bs.q * (bs.q.adjoint() * z))
                .max_by(|u, v| u.norm().total_cmp(&v.norm()))
                .expect("non-empty");
            let nrm = best.norm();
            if nrm < 1e-12 {
                continue;
            }
            let mut v = best / Complex64::new(nrm, 0.0);
            if let Slot::Real(_) = slot {
                v = v.map(|z| Complex64::new(z.re, 0.0));
                let nr = v.norm();
                v /= Complex64::new(nr, 0.0);
            }
            let overlap = (vecs[s].adjoint() * &v)[(0, 0)].norm();
            moved = moved.max(1.0 - overlap);
            vecs[s] = v;
        }
        if moved < 1e-10 {
            break;
        }
    }

    let mut x = CMatrix::zeros(n, n);
    let mut wm = CMatrix::zeros(q, n);
    let mut c = 0;
    for (s, slot) in slots.iter().enumerate() {
        let bs = &bases[s];
        let w = &bs.w * (bs.q.adjoint() * &vecs[s]);
        x.set_column(c, &vecs[s]);
        wm.set_column(c, &w);
        c += 1;
        if slot.width() == 2 {
            x.set_column(c, &vecs[s].conjugate());
            wm.set_column(c, &w.conjugate());
            c += 1;
        }
    }
    // F X = W  =>  X^T F^T = W^T
    let ft = x
        .transpose()
        .lu()
        .solve(&wm.transpose())
        .ok_or_else(|| Error::PlacementFailed("eigenvector matrix is singular".into()))?;
    let f = ft.transpose();
    let scale = f.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let imag = f.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if imag > 1e-6 * scale.max(1.0) {
        return Err(Error::PlacementFailed(format!(
            "gain has imaginary residue {imag:e}"
        )));
    }
    Ok(f.map(|z| z.re))
}

/// Returns `F` with `eig(A + B F)` equal to `desired`.
pub fn place_poles(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    desired: &[Complex64],
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::Validation("empty system".into()));
    }
    if a.ncols() != n || b.nrows() != n || b.ncols() == 0 || desired.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "A {:?}, B {:?}, {} poles",
            a.shape(),
            b.shape(),
            desired.len()
        )));
    }
    let slots = group_poles(desired)?;
    let probe = StateSpaceModel {
        a: a.clone(),
        b: b.clone(),
        c: DMatrix::zeros(0, n),
        state_labels: Vec::new(),
        input_labels: Vec::new(),
        output_labels: Vec::new(),
    };
    let rank = controllability_rank(&probe);
    if rank < n {
        return Err(Error::Uncontrollable { rank, n });
    }
    let f = if b.ncols() == 1 {
        ackermann(a, b, desired)?
    } else {
        if linalg::rank(b) < b.ncols() {
            return Err(Error::PlacementFailed(
                "input matrix must have full column rank".into(),
            ));
        }
        eigenstructure(a, b, &slots)?
    };
    let achieved = linalg::eigenvalues(&(a + b * &f));
    if !linalg::spectra_match(&achieved, desired, EIG_RTOL) {
        return Err(Error::PlacementFailed(format!(
            "achieved spectrum deviates by {:.3e} (relative)",
            linalg::spectra_max_rel_dev(&achieved, desired)
        )));
    }
    Ok(f)
}

/// Designs `K` (state feedback) and `G` (observer injection) on the nominal model.
pub fn design_gains(
    nominal: &StateSpaceModel,
    controller_poles: &[Complex64],
    observer_poles: &[Complex64],
) -> Result<GainSet> {
    for p in controller_poles.iter().chain(observer_poles) {
        if !(p.re < 0.0) {
            return Err(Error::Validation(format!(
                "pole {p} is not strictly stable"
            )));
        }
    }
    let k = place_poles(&nominal.a, &nominal.b, controller_poles)?;
    let g = place_poles(
        &nominal.a.transpose(),
        &nominal.c.transpose(),
        observer_poles,
    )?
    .transpose();
    Ok(GainSet {
        k,
        g,
        controller_poles: controller_poles.to_vec(),
        observer_poles: observer_poles.to_vec(),
    })
}

/// Outcome of the default controller design, noting any fallback.
#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub gains: GainSet,
    pub pole_scale: f64,
    /// Set when the scaled reference spectrum could not be placed and its
    /// real parts were used instead.
    pub substitution: Option<String>,
}

pub fn design_reference_gains(nominal: &StateSpaceModel, pole_scale: f64) -> Result<DesignOutcome> {
    design_reference_gains_with(nominal, pole_scale, &default_observer_poles())
}

/// Scaled reference controller spectrum with a caller-chosen observer spectrum.
pub fn design_reference_gains_with(
    nominal: &StateSpaceModel,
    pole_scale: f64,
    obs: &[Complex64],
) -> Result<DesignOutcome> {
    if !(pole_scale > 0.0) {
        return Err(Error::InvalidConfig(
            "controller pole scale must be positive".into(),
        ));
    }
    if nominal.n() != REFERENCE_CONTROLLER_POLES.len() {
        return Err(Error::DimensionMismatch(format!(
            "reference pole sets have 8 entries, model has {} states",
            nominal.n()
        )));
    }
    let ctrl = reference_controller_poles(pole_scale);
    match design_gains(nominal, &ctrl, obs) {
        Ok(gains) => Ok(DesignOutcome {
            gains,
            pole_scale,
            substitution: None,
        }),
        Err(Error::PlacementFailed(why)) => {
            let mut real: Vec<Complex64> = ctrl.iter().map(|z| Complex64::new(z.re, 0.0)).collect();
            // Separate the collapsed pair members so the set stays simple.
            for i in 1..real.len() {
                if real[..i].iter().any(|z| (z.re - real[i].re).abs() < 1e-12) {
                    real[i].re *= 1.01;
                }
            }
            let gains = design_gains(nominal, &real, obs)?;
            Ok(DesignOutcome {
                gains,
                pole_scale,
                substitution: Some(format!(
                    "reference poles not placeable ({why}); used real parts"
                )),
            })
        }
        Err(e) => Err(e),
    }
}

pub fn assemble_closed_loop(model: &StateSpaceModel, gains: &GainSet) -> Result<ClosedLoopModel> {
    let (n, p, r) = (model.n(), model.p(), model.r());
    if gains.k.shape() != (p, n) || gains.g.shape() != (n, r) {
        return Err(Error::DimensionMismatch(format!(
            "K {:?} / G {:?} against n={n}, p={p}, r={r}",
            gains.k.shape(),
            gains.g.shape()
        )));
    }
    let bk = &model.b * &gains.k;
    let a11 = &model.a + &bk;
    let a22 = &model.a + &gains.g * &model.c;
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&a11);
    a.view_mut((0, n), (n, n)).copy_from(&(-&bk));
    a.view_mut((n, n), (n, n)).copy_from(&a22);
    let mut b = DMatrix::zeros(2 * n, p + r);
    b.view_mut((0, 0), (n, p)).copy_from(&model.b);
    b.view_mut((n, p), (n, r)).copy_from(&gains.g);
    let mut c = DMatrix::zeros(r + n, 2 * n);
    c.view_mut((0, 0), (r, n)).copy_from(&model.c);
    c.view_mut((r, 0), (n, n)).fill_with_identity();
    c.view_mut((r, n), (n, n))
        .copy_from(&(-DMatrix::<f64>::identity(n, n)));
    Ok(ClosedLoopModel {
        a,
        b,
        c,
        lambda1: linalg::eigenvalues(&a11),
        lambda2: linalg::eigenvalues(&a22),
        n,
        p,
        r,
    })
}

impl ClosedLoopModel {
    /// Largest real part across both eigenvalue sets.
    pub fn spectral_abscissa(&self) -> f64 {
        self.lambda1
            .iter()
            .chain(&self.lambda2)
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_abscissa() < 0.0
    }

    pub fn outputs(&self) -> usize {
        self.r + self.n
    }
}

pub fn eigen_signature(cont: &ClosedLoopModel, nom: &ClosedLoopModel, tol: f64) -> EigenSignature {
    EigenSignature {
        lambda1_changed: !linalg::spectra_match(&cont.lambda1, &nom.lambda1, tol),
        lambda2_changed: !linalg::spectra_match(&cont.lambda2, &nom.lambda2, tol),
    }
}

pub fn infer_class_from_signature(sig: EigenSignature) -> ContingencyClass {
    match (sig.lambda1_changed, sig.lambda2_changed) {
        (false, false) => ContingencyClass::Normal,
        (true, false) => ContingencyClass::Control,
        (false, true) => ContingencyClass::Measurement,
        (true, true) => ContingencyClass::Physical,
    }
}

/// Closed loops for every catalog scenario, indexed by `alpha - 1`.
pub fn assemble_catalog(catalog: &Catalog, gains: &GainSet) -> Result<Vec<ClosedLoopModel>> {
    catalog
        .models
        .iter()
        .map(|m| assemble_closed_loop(m, gains))
        .collect()
}

fn fmt_complex(z: Complex64) -> String {
    // Avoid "-0" so identical spectra print identically.
    let re = if z.re == 0.0 { 0.0 } else { z.re };
    let im = if z.im == 0.0 { 0.0 } else { z.im };
    format!("{re:.6}{im:+.6}i")
}

/// Writes both eigenvalue sets, one column per scenario.
pub fn write_eigen_table<W: Write>(loops: &[ClosedLoopModel], alphas: &[u32], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["section".to_string(), "index".to_string()];
    header.extend(alphas.iter().map(|a| a.to_string()));
    wr.write_record(&header)?;
    let sorted = |v: &[Complex64]| {
        let mut v = v.to_vec();
        linalg::sort_eigenvalues(&mut v);
        v
    };
    for (name, pick) in [("lambda1", 0), ("lambda2", 1)] {
        let cols: Vec<Vec<Complex64>> = loops
            .iter()
            .map(|cl| sorted(if pick == 0 { &cl.lambda1 } else { &cl.lambda2 }))
            .collect();
        let rows = cols.first().map_or(0, Vec::len);
        for i in 0..rows {
            let mut rec = vec![name.to_string(), (i + 1).to_string()];
            rec.extend(cols.iter().map(|c| fmt_complex(c[i])));
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}
