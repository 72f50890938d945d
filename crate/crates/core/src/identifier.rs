//! Scenario identification by residual matching, exhaustive (SHS) and
//! class-restricted after classification (LSHS).
//!
//! A measured window starts from whatever state the previous interval left
//! behind. Each bank entry therefore stores the forced response from rest
//! and a free-response operator, so the prediction for a window that opens
//! with estimate `x_hat0` is `forced + free * x_hat0`. The estimation error
//! at the window start is not measured; its free response is fitted by least
//! squares and removed from the residual.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::KnnModel;
use crate::closed_loop::GainSet;
use crate::error::{Error, Result};
use crate::features::aggregate_features;
use crate::linalg::{orthonormal_basis, project_out};
use crate::scenarios::{Catalog, ContingencyClass};
use crate::simulator::{
    error_starts, estimate_starts, make_probe, simulate_window, unforced_response, DiscreteCatalog,
    NoiseSource, ProbeSpec, SimConfig, SwitchingSequence, Trajectory,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub alpha: u32,
    pub class: ContingencyClass,
    /// `channels x samples`, zero initial state, probe applied.
    pub forced: DMatrix<f64>,
    /// `(channels * samples) x n`; column `j` is the unforced response from
    /// `x = x_hat = e_j`, flattened sample-major like `forced`.
    pub free: DMatrix<f64>,
    /// Same layout; column `j` starts from `x = x_tilde = e_j`, `x_hat = 0`.
    pub free_err: DMatrix<f64>,
    /// Orthonormal basis of the column space of `free_err`, full window, all
    /// channels. Derived, not stored in the cache file.
    pub err_basis: DMatrix<f64>,
}

impl BankEntry {
    pub fn new(
        alpha: u32,
        class: ContingencyClass,
        forced: DMatrix<f64>,
        free: DMatrix<f64>,
        free_err: DMatrix<f64>,
    ) -> Result<Self> {
        let err_basis = orthonormal_basis(&free_err)?;
        Ok(BankEntry {
            alpha,
            class,
            forced,
            free,
            free_err,
            err_basis,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseBank {
    pub entries: Vec<BankEntry>,
    pub probe: ProbeSpec,
    pub tau0: f64,
    pub t_s: f64,
    pub channels: usize,
    pub samples: usize,
    pub n: usize,
    pub r: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualChannels {
    /// Outputs and observer estimates.
    #[default]
    All,
    OutputsOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationResult {
    pub k: usize,
    pub alpha_hat: u32,
    pub class_hat: Option<ContingencyClass>,
    pub residual: f64,
    /// Wall time of the search in seconds.
    pub elapsed: f64,
    /// Bank entries scored.
    pub visited: usize,
}

pub fn precompute_bank(
    dcat: &DiscreteCatalog,
    classes: &[ContingencyClass],
    cfg: &SimConfig,
) -> Result<ResponseBank> {
    cfg.validate()?;
    if dcat.is_empty() || dcat.len() != classes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} loops, {} classes",
            dcat.len(),
            classes.len()
        )));
    }
    let d0 = &dcat.loops[0];
    let (n, r, ch, samples) = (d0.n, d0.r, d0.outputs(), cfg.n0());
    let probe = make_probe(&cfg.probe, d0.p, cfg.tau0, cfg.t_s)?;
    let silent = NoiseSource::new(f64::NEG_INFINITY, 0);
    let entries = dcat
        .loops
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let forced = simulate_window(d, &DVector::zeros(2 * n), &probe, &silent, 0, 0)?.yc;
            let free = unforced_response(d, &estimate_starts(n), samples)?;
            let free_err = unforced_response(d, &error_starts(n), samples)?;
            BankEntry::new(i as u32 + 1, classes[i], forced, free, free_err)
        })
        .collect::<Result<Vec<_>>>()?;
    let bank = ResponseBank {
        entries,
        probe: cfg.probe.clone(),
        tau0: cfg.tau0,
        t_s: cfg.t_s,
        channels: ch,
        samples,
        n,
        r,
    };
    bank.assert_distinct()?;
    Ok(bank)
}

pub fn precompute_bank_for(
    catalog: &Catalog,
    gains: &GainSet,
    cfg: &SimConfig,
) -> Result<ResponseBank> {
    let dcat = DiscreteCatalog::build(catalog, gains, cfg.t_s)?;
    let classes: Vec<_> = catalog.scenarios.iter().map(|s| s.class).collect();
    precompute_bank(&dcat, &classes, cfg)
}

fn same(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b.iter())
        .all(|(x, y)| (x - y).abs() <= 1e-12 * scale)
}

impl ResponseBank {
    /// Errors if two scenarios respond identically to the probe and from every start.
    pub fn assert_distinct(&self) -> Result<()> {
        for i in 0..self.entries.len() {
            for j in i + 1..self.entries.len() {
                let (a, b) = (&self.entries[i], &self.entries[j]);
                if same(&a.forced, &b.forced)
                    && same(&a.free, &b.free)
                    && same(&a.free_err, &b.free_err)
                {
                    return Err(Error::Indistinguishable(a.alpha, b.alpha));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, alpha: u32) -> Option<&BankEntry> {
        self.entries.get((alpha as usize).checked_sub(1)?)
    }

    /// Noiseless response of scenario `alpha` over `samples` steps from estimate `xhat0`.
    pub fn predict(
        &self,
        alpha: u32,
        xhat0: &DVector<f64>,
        samples: usize,
    ) -> Option<DMatrix<f64>> {
        let e = self.entry(alpha)?;
        let len = self.channels * samples.min(self.samples);
        let mut flat = e.free.rows(0, len) * xhat0;
        flat += DVector::from_column_slice(&e.forced.as_slice()[..len]);
        Some(DMatrix::from_column_slice(
            self.channels,
            len / self.channels,
            flat.as_slice(),
        ))
    }

    fn check(&self, measured: &Trajectory) -> Result<()> {
        if measured.channels() != self.channels
            || measured.len() > self.samples
            || measured.is_empty()
        {
            return Err(Error::DimensionMismatch(format!(
                "window {}x{} against bank {}x{}",
                measured.channels(),
                measured.len(),
                self.channels,
                self.samples
            )));
        }
        if self.entries.is_empty() {
            return Err(Error::Empty("response bank".into()));
        }
        Ok(())
    }
}

struct Scorer<'a> {
    bank: &'a ResponseBank,
    meas: &'a [f64],
    xhat0: DVector<f64>,
    len: usize,
    mode: ResidualChannels,
}

impl<'a> Scorer<'a> {
    fn new(bank: &'a ResponseBank, measured: &'a Trajectory, mode: ResidualChannels) -> Self {
        Scorer {
            bank,
            meas: measured.yc.as_slice(),
            xhat0: measured.xhat0(),
            len: bank.channels * measured.len(),
            mode,
        }
    }

    fn residual(&self, e: &BankEntry) -> f64 {
        let free = e.free.rows(0, self.len) * &self.xhat0;
        let forced = &e.forced.as_slice()[..self.len];
        let ch = self.bank.channels;
        let r = self.bank.r;
        let rows: Vec<usize> = match self.mode {
            ResidualChannels::All => (0..self.len).collect(),
            ResidualChannels::OutputsOnly => (0..self.len).filter(|i| i % ch < r).collect(),
        };
        let mut d = DVector::from_iterator(
            rows.len(),
            rows.iter().map(|&i| self.meas[i] - forced[i] - free[i]),
        );
        if rows.len() == e.err_basis.nrows() {
            project_out(&mut d, &e.err_basis);
        } else {
            let sub = e.free_err.select_rows(rows.iter());
            // Finite by construction once the entry exists.
            project_out(
                &mut d,
                &orthonormal_basis(&sub).unwrap_or_else(|_| DMatrix::zeros(rows.len(), 0)),
            );
        }
        d.norm_squared()
    }

    /// Lowest residual over `idx` (ascending alpha order); ties keep the lower alpha.
    fn argmin(&self, idx: impl Iterator<Item = usize>) -> (u32, f64, usize) {
        let mut best = (0u32, f64::INFINITY);
        let mut visited = 0;
        for i in idx {
            let e = &self.bank.entries[i];
            let res = self.residual(e);
            visited += 1;
            if res < best.1 || best.0 == 0 {
                best = (e.alpha, res);
            }
        }
        (best.0, best.1, visited)
    }
}

/// `d <- d - Q Q^T d` for orthonormal `Q`.
/// Exhaustive residual argmin over the whole bank.
pub fn identify_shs(
    measured: &Trajectory,
    bank: &ResponseBank,
    mode: ResidualChannels,
    k: usize,
) -> Result<IdentificationResult> {
    bank.check(measured)?;
    let start = Instant::now();
    let scorer = Scorer::new(bank, measured, mode);
    let (alpha_hat, residual, visited) = scorer.argmin(0..bank.entries.len());
    let elapsed = start.elapsed().as_secs_f64();
    Ok(IdentificationResult {
        k,
        alpha_hat,
        class_hat: None,
        residual,
        elapsed,
        visited,
    })
}

/// Two-stage identifier: classify from the first `tau1` samples, then match
/// within the predicted class only.
pub struct Lshs<'a> {
    pub classifier: &'a KnnModel,
    pub bank: &'a ResponseBank,
    pub n1: usize,
    pub epsilon: f64,
    pub mode: ResidualChannels,
    by_class: [Vec<usize>; 4],
    /// Nominal estimation-error subspace over the classification window.
    stage1_basis: DMatrix<f64>,
}

impl<'a> Lshs<'a> {
    pub fn new(
        classifier: &'a KnnModel,
        bank: &'a ResponseBank,
        n1: usize,
        epsilon: f64,
        mode: ResidualChannels,
    ) -> Result<Self> {
        if n1 == 0 || n1 > bank.samples {
            return Err(Error::InvalidConfig(format!(
                "classification window of {n1} samples"
            )));
        }
        if classifier.dim != bank.channels {
            return Err(Error::DimensionMismatch(format!(
                "classifier expects {} features, bank has {} channels",
                classifier.dim, bank.channels
            )));
        }
        if bank.entry(1).map(|e| e.class) != Some(ContingencyClass::Normal) {
            return Err(Error::Validation(
                "bank must start with the nominal scenario".into(),
            ));
        }
        let mut by_class: [Vec<usize>; 4] = Default::default();
        for (i, e) in bank.entries.iter().enumerate() {
            by_class[e.class.index()].push(i);
        }
        let stage1_basis = orthonormal_basis(
            &bank.entries[0]
                .free_err
                .rows(0, bank.channels * n1)
                .into_owned(),
        )?;
        Ok(Lshs {
            classifier,
            bank,
            n1,
            epsilon,
            mode,
            by_class,
            stage1_basis,
        })
    }

    pub fn class_size(&self, c: ContingencyClass) -> usize {
        self.by_class[c.index()].len()
    }

    /// Stage-1 feature vector of the first `n1` samples.
    pub fn features(&self, measured: &Trajectory) -> Result<DVector<f64>> {
        self.bank.check(measured)?;
        if measured.len() < self.n1 {
            return Err(Error::DimensionMismatch(
                "window shorter than the classification window".into(),
            ));
        }
        Ok(self.features_unchecked(measured))
    }

    fn features_unchecked(&self, measured: &Trajectory) -> DVector<f64> {
        let m1 = self.bank.channels * self.n1;
        let nominal = &self.bank.entries[0];
        let free = nominal.free.rows(0, m1) * measured.xhat0();
        let meas = measured.yc.as_slice();
        let mut d = DVector::from_fn(m1, |i, _| meas[i] - nominal.forced.as_slice()[i] - free[i]);
        project_out(&mut d, &self.stage1_basis);
        let errors = DMatrix::from_column_slice(self.bank.channels, self.n1, d.as_slice()).abs();
        aggregate_features(&errors, self.epsilon)
    }

    pub fn identify(&self, measured: &Trajectory, k: usize) -> Result<IdentificationResult> {
        self.bank.check(measured)?;
        if measured.len() < self.n1 {
            return Err(Error::DimensionMismatch(
                "window shorter than the classification window".into(),
            ));
        }
        let start = Instant::now();
        let scorer = Scorer::new(self.bank, measured, self.mode);
        let nominal = &self.bank.entries[0];
        let e = self.features_unchecked(measured);
        let class_hat = self.classifier.classify(e.as_slice())?;
        let (alpha_hat, residual, visited) = if class_hat == ContingencyClass::Normal {
            (1, scorer.residual(nominal), 0)
        } else {
            scorer.argmin(self.by_class[class_hat.index()].iter().copied())
        };
        let elapsed = start.elapsed().as_secs_f64();
        if alpha_hat == 0 {
            // Predicted class has no bank entries; fall back to nominal.
            return Ok(IdentificationResult {
                k,
                alpha_hat: 1,
                class_hat: Some(class_hat),
                residual: scorer.residual(nominal),
                elapsed,
                visited,
            });
        }
        Ok(IdentificationResult {
            k,
            alpha_hat,
            class_hat: Some(class_hat),
            residual,
            elapsed,
            visited,
        })
    }
}

pub fn identify_lshs(
    measured: &Trajectory,
    classifier: &KnnModel,
    bank: &ResponseBank,
    n1: usize,
    epsilon: f64,
    k: usize,
) -> Result<IdentificationResult> {
    Lshs::new(classifier, bank, n1, epsilon, ResidualChannels::All)?.identify(measured, k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassBreakdown {
    pub class: ContingencyClass,
    pub count: usize,
    pub exact_correct: usize,
    pub class_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub windows: usize,
    pub exact_accuracy: f64,
    pub class_accuracy: f64,
    pub per_class: Vec<ClassBreakdown>,
    pub mean_elapsed: f64,
    /// Trailing mean of elapsed time over up to 20 windows.
    pub moving_average: Vec<f64>,
    pub mean_visited: f64,
}

pub const MOVING_AVERAGE_WINDOW: usize = 20;

pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Class of the identified scenario, or the classifier's output when it has one.
fn predicted_class(
    r: &IdentificationResult,
    classes: &[ContingencyClass],
) -> Option<ContingencyClass> {
    r.class_hat
        .or_else(|| classes.get((r.alpha_hat as usize).checked_sub(1)?).copied())
}

pub fn score_run(
    results: &[IdentificationResult],
    truth: &SwitchingSequence,
    classes: &[ContingencyClass],
) -> Result<RunMetrics> {
    if results.is_empty() {
        return Err(Error::Empty("no identification results".into()));
    }
    if results.len() != truth.entries.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} results for {} intervals",
            results.len(),
            truth.entries.len()
        )));
    }
    let mut per_class: Vec<ClassBreakdown> = ContingencyClass::ALL
        .iter()
        .map(|&class| ClassBreakdown {
            class,
            count: 0,
            exact_correct: 0,
            class_correct: 0,
        })
        .collect();
    let (mut exact, mut class_ok) = (0, 0);
    for (res, &(_, alpha)) in results.iter().zip(&truth.entries) {
        let c = *classes
            .get((alpha as usize).wrapping_sub(1))
            .ok_or(Error::IndexOutOfRange {
                what: "alpha",
                index: alpha as usize,
                len: classes.len(),
            })?;
        let b = &mut per_class[c.index()];
        b.count += 1;
        if res.alpha_hat == alpha {
            exact += 1;
            b.exact_correct += 1;
        }
        if predicted_class(res, classes) == Some(c) {
            class_ok += 1;
            b.class_correct += 1;
        }
    }
    let n = results.len() as f64;
    let elapsed: Vec<f64> = results.iter().map(|r| r.elapsed).collect();
    Ok(RunMetrics {
        windows: results.len(),
        exact_accuracy: exact as f64 / n,
        class_accuracy: class_ok as f64 / n,
        per_class,
        mean_elapsed: elapsed.iter().sum::<f64>() / n,
        moving_average: moving_average(&elapsed, MOVING_AVERAGE_WINDOW),
        mean_visited: results.iter().map(|r| r.visited as f64).sum::<f64>() / n,
    })
}

/// Per-window results: `k, alpha_true, alpha_hat, class_true, class_hat, residual, elapsed_us, method, tau0`.
pub fn write_results<W: Write>(
    rows: &[(String, f64, &IdentificationResult)],
    truth: &SwitchingSequence,
    classes: &[ContingencyClass],
    w: W,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "k",
        "alpha_true",
        "alpha_hat",
        "class_true",
        "class_hat",
        "residual",
        "elapsed_us",
        "method",
        "tau0",
    ])?;
    for (method, tau0, r) in rows {
        let alpha_true = truth.entries.get(r.k).map(|e| e.1).unwrap_or(0);
        let class_true = classes
            .get((alpha_true as usize).wrapping_sub(1))
            .map(|c| c.name())
            .unwrap_or("");
        let class_hat = predicted_class(r, classes).map(|c| c.name()).unwrap_or("");
        wr.write_record([
            r.k.to_string(),
            alpha_true.to_string(),
            r.alpha_hat.to_string(),
            class_true.to_string(),
            class_hat.to_string(),
            format!("{:e}", r.residual),
            format!("{:.3}", r.elapsed * 1e6),
            method.clone(),
            format!("{tau0}"),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

// Bank cache container.

const BANK_MAGIC: &[u8; 8] = b"SHSBANK\0";
const BANK_VERSION: u32 = 3;

/// Digests identifying what a cached bank was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankKey {
    pub catalog: [u8; 32],
    pub gains: [u8; 32],
    pub config: [u8; 32],
}

fn hash_matrix(h: &mut Sha256, m: &DMatrix<f64>) {
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_le_bytes());
    }
}

pub fn catalog_digest(catalog: &Catalog) -> [u8; 32] {
    let mut h = Sha256::new();
    for (s, m) in catalog.scenarios.iter().zip(&catalog.models) {
        h.update(format!("{}|{:?}|", s.alpha, s.transform).as_bytes());
        hash_matrix(&mut h, &m.a);
        hash_matrix(&mut h, &m.b);
        hash_matrix(&mut h, &m.c);
    }
    h.finalize().into()
}

pub fn gains_digest(g: &GainSet) -> [u8; 32] {
    let mut h = Sha256::new();
    hash_matrix(&mut h, &g.k);
    hash_matrix(&mut h, &g.g);
    h.finalize().into()
}

pub fn config_digest(cfg: &SimConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(cfg.t_s.to_le_bytes());
    h.update(cfg.tau0.to_le_bytes());
    h.update(serde_json::to_vec(&cfg.probe).expect("probe serializes"));
    h.finalize().into()
}

pub fn hex(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn class_code(c: ContingencyClass) -> u8 {
    c.index() as u8
}

pub fn encode_bank(bank: &ResponseBank, key: &BankKey) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BANK_MAGIC);
    out.extend_from_slice(&BANK_VERSION.to_le_bytes());
    out.extend_from_slice(&key.catalog);
    out.extend_from_slice(&key.gains);
    out.extend_from_slice(&key.config);
    out.extend_from_slice(&bank.t_s.to_le_bytes());
    out.extend_from_slice(&bank.tau0.to_le_bytes());
    let probe = serde_json::to_vec(&bank.probe).expect("probe serializes");
    out.extend_from_slice(&(probe.len() as u32).to_le_bytes());
    out.extend_from_slice(&probe);
    for v in [
        bank.entries.len(),
        bank.channels,
        bank.samples,
        bank.n,
        bank.r,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for e in &bank.entries {
        out.extend_from_slice(&e.alpha.to_le_bytes());
        out.push(class_code(e.class));
        for v in e
            .forced
            .iter()
            .chain(e.free.iter())
            .chain(e.free_err.iter())
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated bank file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn digest(&mut self) -> Result<[u8; 32]> {
        Ok(self.take(32)?.try_into().expect("32 bytes"))
    }
}

pub fn decode_bank(bytes: &[u8]) -> Result<(BankKey, ResponseBank)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != BANK_MAGIC {
        return Err(Error::Format("not a bank cache file".into()));
    }
    let version = c.u32()?;
    if version != BANK_VERSION {
        return Err(Error::Format(format!("unsupported bank version {version}")));
    }
    let key = BankKey {
        catalog: c.digest()?,
        gains: c.digest()?,
        config: c.digest()?,
    };
    let t_s = c.f64()?;
    let tau0 = c.f64()?;
    let plen = c.u32()? as usize;
    let probe: ProbeSpec =
        serde_json::from_slice(c.take(plen)?).map_err(|e| Error::Format(format!("probe: {e}")))?;
    let m = c.u32()? as usize;
    let channels = c.u32()? as usize;
    let samples = c.u32()? as usize;
    let n = c.u32()? as usize;
    let r = c.u32()? as usize;
    if r > channels || channels != r + n {
        return Err(Error::Format("inconsistent channel layout".into()));
    }
    let per = channels
        .checked_mul(samples)
        .and_then(|cs| cs.checked_mul(2 * n + 1))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(5))
        .ok_or_else(|| Error::Format("bank dimensions overflow".into()))?;
    let remaining = bytes.len() - c.pos;
    if m.checked_mul(per) != Some(remaining) {
        return Err(Error::Format(
            "bank payload size does not match its header".into(),
        ));
    }
    let mut entries = Vec::with_capacity(m);
    for i in 0..m {
        let alpha = c.u32()?;
        if alpha as usize != i + 1 {
            return Err(Error::Format(format!("entry {i} has alpha {alpha}")));
        }
        let class = ContingencyClass::from_index(c.take(1)?[0] as usize)
            .ok_or_else(|| Error::Format("bad class code".into()))?;
        let mut read = |len: usize| -> Result<Vec<f64>> { (0..len).map(|_| c.f64()).collect() };
        let forced = DMatrix::from_vec(channels, samples, read(channels * samples)?);
        let free = DMatrix::from_vec(channels * samples, n, read(channels * samples * n)?);
        let free_err = DMatrix::from_vec(channels * samples, n, read(channels * samples * n)?);
        entries.push(BankEntry::new(alpha, class, forced, free, free_err)?);
    }
    Ok((
        key,
        ResponseBank {
            entries,
            probe,
            tau0,
            t_s,
            channels,
            samples,
            n,
            r,
        },
    ))
}
