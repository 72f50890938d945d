//! Experiment orchestration: one configuration, one build pipeline, and a
//! function per experiment. Every CSV written here opens with a
//! `# manifest=<id>` comment naming the manifest that describes the run.
//!
//! Wall-clock values (manifest timestamps and the `elapsed_us` /
//! `moving_avg_us` columns) are the only outputs that differ between reruns.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{evaluate, knn_train, KnnModel};
use crate::closed_loop::{
    assemble_catalog, design_gains, design_reference_gains_with, eigen_signature,
    infer_class_from_signature, reference_controller_poles, write_eigen_table, ClosedLoopModel,
    DesignOutcome, GainSet, DEFAULT_OBSERVER_POLES,
};
use crate::error::{Error, Result};
use crate::features::{generate_dataset, DatasetContext, LabeledDataset, DEFAULT_EPSILON};
use crate::grid_model::{
    build_small_signal_model, check_feasibility, load_grid, GridNetwork, RankReport,
};
use crate::identifier::{
    catalog_digest, config_digest, decode_bank, encode_bank, gains_digest, hex, identify_shs,
    moving_average, precompute_bank, score_run, write_results, BankKey, IdentificationResult, Lshs,
    ResidualChannels, ResponseBank, RunMetrics, MOVING_AVERAGE_WINDOW,
};
use crate::linalg::EIG_RTOL;
use crate::scenarios::{build_catalog, Catalog, CatalogSpec, ContingencyClass};
use crate::simulator::{
    generate_switching_sequence, run_sequence_discrete, write_trajectories, DiscreteCatalog,
    SimConfig, SwitchingSequence, Trajectory,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Default controller pole scale for the bundled grid.
pub const DEFAULT_POLE_SCALE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Multiplier on the reference controller spectrum.
    pub controller_pole_scale: f64,
    /// Explicit `[re, im]` controller poles; overrides the scaled reference set.
    pub controller_poles: Option<Vec<[f64; 2]>>,
    pub observer_poles: Vec<[f64; 2]>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            controller_pole_scale: DEFAULT_POLE_SCALE,
            controller_poles: None,
            observer_poles: DEFAULT_OBSERVER_POLES.iter().map(|&re| [re, 0.0]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub per_class: usize,
    pub noise_levels: Vec<f64>,
    pub train_fraction: f64,
    pub epsilon: f64,
    /// One model over all noise levels instead of one per level.
    pub mixed: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            per_class: 240,
            noise_levels: vec![-200.0, -150.0, -100.0, -50.0],
            train_fraction: 0.8,
            epsilon: DEFAULT_EPSILON,
            mixed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub k: usize,
    pub standardize: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            k: 1,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    pub tau0_list: Vec<f64>,
    pub intervals: usize,
    pub channels: ResidualChannels,
    /// Directory for cached response banks.
    pub bank_cache: Option<PathBuf>,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            tau0_list: vec![0.02, 0.05, 0.08],
            intervals: 500,
            channels: ResidualChannels::All,
            bank_cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Grid file; the bundled IEEE 33-bus model when unset.
    pub grid: Option<PathBuf>,
    pub catalog: CatalogSpec,
    pub sim: SimConfig,
    pub design: DesignConfig,
    pub dataset: DatasetConfig,
    pub classifier: ClassifierConfig,
    pub identify: IdentifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: None,
            catalog: CatalogSpec::ieee33_default(),
            sim: SimConfig::default(),
            design: DesignConfig::default(),
            dataset: DatasetConfig::default(),
            classifier: ClassifierConfig::default(),
            identify: IdentifyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let d = &self.dataset;
        if d.per_class == 0 {
            return Err(Error::InvalidConfig(
                "dataset.per_class must be at least 1".into(),
            ));
        }
        if d.noise_levels.is_empty()
            || d.noise_levels
                .iter()
                .any(|v| v.is_nan() || *v == f64::INFINITY)
        {
            return Err(Error::InvalidConfig(
                "dataset.noise_levels must be non-empty, finite or -inf".into(),
            ));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "dataset.train_fraction must lie in (0, 1)".into(),
            ));
        }
        if !(d.epsilon > 0.0) {
            return Err(Error::InvalidConfig(
                "dataset.epsilon must be positive".into(),
            ));
        }
        if self.classifier.k == 0 {
            return Err(Error::InvalidConfig(
                "classifier.k must be at least 1".into(),
            ));
        }
        let id = &self.identify;
        if id.intervals == 0 || id.tau0_list.is_empty() {
            return Err(Error::InvalidConfig(
                "identify needs intervals >= 1 and at least one tau0".into(),
            ));
        }
        for &tau0 in &id.tau0_list {
            SimConfig {
                tau0,
                ..self.sim.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Simulation settings for one identification run.
    pub fn sim_at(&self, tau0: f64) -> SimConfig {
        SimConfig {
            tau0,
            ..self.sim.clone()
        }
    }
}

fn complex_poles(v: &[[f64; 2]]) -> Vec<Complex64> {
    v.iter().map(|&[re, im]| Complex64::new(re, im)).collect()
}

/// Grid, catalog, gains and closed loops shared by every experiment.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub grid: GridNetwork,
    pub catalog: Catalog,
    pub design: DesignOutcome,
    pub loops: Vec<ClosedLoopModel>,
    pub feasibility: RankReport,
}

impl Pipeline {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let grid = match &config.grid {
            Some(p) => load_grid(p)?,
            None => GridNetwork::ieee33(),
        };
        let nominal = build_small_signal_model(&grid, &grid.all_lines())?;
        let feasibility = check_feasibility(&nominal);
        if !feasibility.full_rank {
            return Err(Error::Uncontrollable {
                rank: feasibility.rank,
                n: feasibility.n,
            });
        }
        let catalog = build_catalog(&grid, &nominal, &config.catalog)?;
        let obs = complex_poles(&config.design.observer_poles);
        let design = match &config.design.controller_poles {
            Some(ctrl) => DesignOutcome {
                gains: design_gains(&nominal, &complex_poles(ctrl), &obs)?,
                pole_scale: 1.0,
                substitution: None,
            },
            None => {
                design_reference_gains_with(&nominal, config.design.controller_pole_scale, &obs)?
            }
        };
        let loops = assemble_catalog(&catalog, &design.gains)?;
        Ok(Pipeline {
            config,
            grid,
            catalog,
            design,
            loops,
            feasibility,
        })
    }

    pub fn gains(&self) -> &GainSet {
        &self.design.gains
    }

    pub fn classes(&self) -> Vec<ContingencyClass> {
        self.catalog.scenarios.iter().map(|s| s.class).collect()
    }

    pub fn alphas(&self) -> Vec<u32> {
        self.catalog.scenarios.iter().map(|s| s.alpha).collect()
    }

    pub fn unstable_scenarios(&self) -> Vec<u32> {
        self.loops
            .iter()
            .zip(self.alphas())
            .filter(|(l, _)| !l.is_stable())
            .map(|(_, a)| a)
            .collect()
    }

    pub fn manifest(&self, command: &str) -> ExperimentManifest {
        let seed = self.config.sim.seed;
        let mut m = ExperimentManifest {
            id: String::new(),
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config: self.config.clone(),
            catalog_hash: hex(&catalog_digest(&self.catalog)),
            gains_hash: hex(&gains_digest(self.gains())),
            gains: self.gains().clone(),
            pole_scale: self.design.pole_scale,
            pole_substitution: self.design.substitution.clone(),
            seeds: Seeds {
                simulation: seed,
                sequence: seed,
                dataset: seed,
            },
            excluded_lines: self.catalog.excluded_lines.clone(),
            unstable_scenarios: self.unstable_scenarios(),
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0.0,
        };
        m.id = m.compute_id();
        m
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub simulation: u64,
    pub sequence: u64,
    pub dataset: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentManifest {
    pub id: String,
    pub command: String,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub catalog_hash: String,
    pub gains_hash: String,
    pub gains: GainSet,
    pub pole_scale: f64,
    pub pole_substitution: Option<String>,
    pub seeds: Seeds,
    pub excluded_lines: Vec<String>,
    /// Scenarios whose closed loop has an eigenvalue with nonnegative real part.
    pub unstable_scenarios: Vec<u32>,
    pub outputs: Vec<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

impl ExperimentManifest {
    /// Digest of everything that determines the outputs; timestamps excluded.
    fn compute_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update([0]);
        h.update(self.tool_version.as_bytes());
        h.update([0]);
        h.update(self.config.to_toml().as_bytes());
        h.update(self.catalog_hash.as_bytes());
        h.update(self.gains_hash.as_bytes());
        hex(&h.finalize()[..8])
    }

    pub fn finish(&mut self) {
        self.finished_unix = unix_now();
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Writes the `# manifest=<id>` line that opens every CSV.
pub fn write_manifest_line<W: Write>(id: &str, w: &mut W) -> Result<()> {
    writeln!(w, "# manifest={id}")?;
    Ok(())
}

/// Splits a CSV produced here into its manifest id and body.
pub fn split_manifest_line(text: &str) -> (Option<&str>, &str) {
    match text.strip_prefix("# manifest=") {
        Some(rest) => {
            let (id, body) = rest.split_once('\n').unwrap_or((rest, ""));
            (Some(id), body)
        }
        None => (None, text),
    }
}

// Catalog and eigenvalue experiments.

pub fn write_catalog<W: Write>(p: &Pipeline, id: &str, mut w: W) -> Result<()> {
    write_manifest_line(id, &mut w)?;
    p.catalog.write_manifest(w)
}

pub fn write_eigen_csv<W: Write>(p: &Pipeline, id: &str, mut w: W) -> Result<()> {
    write_manifest_line(id, &mut w)?;
    write_eigen_table(&p.loops, &p.alphas(), w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureReport {
    pub matched: usize,
    pub total: usize,
    /// `(alpha, declared, inferred)` for every disagreement.
    pub mismatches: Vec<(u32, ContingencyClass, ContingencyClass)>,
}

pub fn signature_check(p: &Pipeline) -> SignatureReport {
    let nom = &p.loops[0];
    let mut mismatches = Vec::new();
    for (cl, s) in p.loops.iter().zip(&p.catalog.scenarios) {
        let inferred = infer_class_from_signature(eigen_signature(cl, nom, EIG_RTOL));
        if inferred != s.class {
            mismatches.push((s.alpha, s.class, inferred));
        }
    }
    SignatureReport {
        matched: p.loops.len() - mismatches.len(),
        total: p.loops.len(),
        mismatches,
    }
}

// Dataset, training and the noise sweep.

pub fn generate(p: &Pipeline) -> Result<LabeledDataset> {
    let ctx = DatasetContext {
        grid: &p.grid,
        catalog: &p.catalog,
        gains: p.gains(),
    };
    let d = &p.config.dataset;
    generate_dataset(&ctx, &p.config.sim, d.per_class, &d.noise_levels, d.epsilon)
}

pub fn write_dataset<W: Write>(ds: &LabeledDataset, id: &str, mut w: W) -> Result<()> {
    write_manifest_line(id, &mut w)?;
    ds.write_csv(w)
}

fn level_distance(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Dataset level closest to `noise_db`; ties go to the first listed.
pub fn nearest_level(levels: &[f64], noise_db: f64) -> Option<f64> {
    levels
        .iter()
        .copied()
        .min_by(|&a, &b| level_distance(a, noise_db).total_cmp(&level_distance(b, noise_db)))
}

/// The online classifier for `noise_db`, trained on every row of the
/// nearest level (or on all rows in mixed mode).
pub fn train_online(p: &Pipeline, ds: &LabeledDataset, noise_db: f64) -> Result<KnnModel> {
    let c = &p.config.classifier;
    if p.config.dataset.mixed {
        return knn_train(ds, c.k, c.standardize);
    }
    let level = nearest_level(&ds.noise_levels(), noise_db)
        .ok_or_else(|| Error::Empty("dataset".into()))?;
    knn_train(&ds.at_noise(level), c.k, c.standardize)
}

/// Stage-1 model for one identification run. Dataset rows start from
/// warm-up states that depend on the probe length, so the default regenerates
/// the training set at the run's `tau0`.
pub fn train_online_at(p: &Pipeline, tau0: f64) -> Result<KnnModel> {
    let cfg = p.config.sim_at(tau0);
    let d = &p.config.dataset;
    let levels = if d.mixed {
        d.noise_levels.clone()
    } else {
        vec![nearest_level(&d.noise_levels, cfg.noise_db)
            .ok_or_else(|| Error::Empty("noise levels".into()))?]
    };
    let ctx = DatasetContext {
        grid: &p.grid,
        catalog: &p.catalog,
        gains: p.gains(),
    };
    let ds = generate_dataset(&ctx, &cfg, d.per_class, &levels, d.epsilon)?;
    train_online(p, &ds, cfg.noise_db)
}

/// Where the LSHS classifier comes from.
#[derive(Debug, Clone, Copy)]
pub enum OnlineModel<'a> {
    /// The same model at every `tau0`.
    Fixed(&'a KnnModel),
    /// `train_online_at` for each `tau0`.
    PerTau0,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub noise_db: f64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub confusion: [[u64; 4]; 4],
}

/// Held-out accuracy per noise level from a stratified split.
pub fn noise_sweep(p: &Pipeline, ds: &LabeledDataset) -> Result<Vec<SweepRow>> {
    let (c, d) = (&p.config.classifier, &p.config.dataset);
    let split_seed = p.config.sim.seed;
    let levels = ds.noise_levels();
    let mixed = if d.mixed {
        let mut train = LabeledDataset::default();
        for &lv in &levels {
            train
                .rows
                .extend(ds.at_noise(lv).split(d.train_fraction, split_seed).0.rows);
        }
        Some(knn_train(&train, c.k, c.standardize)?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(levels.len());
    for lv in levels {
        let (train, test) = ds.at_noise(lv).split(d.train_fraction, split_seed);
        let model = match &mixed {
            Some(m) => m.clone(),
            None => knn_train(&train, c.k, c.standardize)?,
        };
        let tr = evaluate(&model, &train)?;
        let te = evaluate(&model, &test)?;
        rows.push(SweepRow {
            noise_db: lv,
            train_rows: train.len(),
            test_rows: test.len(),
            train_accuracy: tr.accuracy,
            test_accuracy: te.accuracy,
            confusion: te.confusion,
        });
    }
    Ok(rows)
}

pub fn write_sweep<W: Write>(
    rows: &[SweepRow],
    algorithm: &str,
    k: usize,
    id: &str,
    mut w: W,
) -> Result<()> {
    write_manifest_line(id, &mut w)?;
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "noise_db",
        "algorithm",
        "k",
        "train_rows",
        "test_rows",
        "train_accuracy",
        "test_accuracy",
    ]
    .map(String::from)
    .into();
    for t in ContingencyClass::ALL {
        for q in ContingencyClass::ALL {
            header.push(format!("{}_as_{}", t.name(), q.name()));
        }
    }
    wr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            format!("{}", r.noise_db),
            algorithm.to_string(),
            k.to_string(),
            r.train_rows.to_string(),
            r.test_rows.to_string(),
            format!("{:.6}", r.train_accuracy),
            format!("{:.6}", r.test_accuracy),
        ];
        rec.extend(r.confusion.iter().flatten().map(|v| v.to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

// Switching runs and identifier comparison.

pub fn switching_sequence(p: &Pipeline) -> Result<SwitchingSequence> {
    generate_switching_sequence(
        p.catalog.len(),
        p.config.identify.intervals,
        p.config.sim.seed,
    )
}

/// Identification windows of every interval at the configured `tau0`.
pub fn run_switching(
    p: &Pipeline,
    dcat: &DiscreteCatalog,
    seq: &SwitchingSequence,
) -> Result<Vec<Trajectory>> {
    run_sequence_discrete(dcat, seq, &p.config.sim)
}

pub fn write_switching<W: Write>(trajs: &[Trajectory], id: &str, mut w: W) -> Result<()> {
    write_manifest_line(id, &mut w)?;
    write_trajectories(trajs, w)
}

pub fn write_sequence<W: Write>(seq: &SwitchingSequence, id: &str, mut w: W) -> Result<()> {
    write_manifest_line(id, &mut w)?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["k", "alpha"])?;
    for &(k, a) in &seq.entries {
        wr.write_record([k.to_string(), a.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// Builds the bank for `cfg`, going through the cache directory when one is set.
pub fn load_or_build_bank(
    p: &Pipeline,
    dcat: &DiscreteCatalog,
    cfg: &SimConfig,
) -> Result<ResponseBank> {
    let key = BankKey {
        catalog: catalog_digest(&p.catalog),
        gains: gains_digest(p.gains()),
        config: config_digest(cfg),
    };
    let path = p
        .config
        .identify
        .bank_cache
        .as_ref()
        .map(|d| d.join(format!("{}.bank", hex(&key.config[..12]))));
    if let Some(path) = &path {
        if let Ok(bytes) = std::fs::read(path) {
            if let Ok((k, bank)) = decode_bank(&bytes) {
                if k == key {
                    return Ok(bank);
                }
            }
        }
    }
    let bank = precompute_bank(dcat, &p.classes(), cfg)?;
    if let Some(path) = &path {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, encode_bank(&bank, &key))?;
    }
    Ok(bank)
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: &'static str,
    pub tau0: f64,
    pub results: Vec<IdentificationResult>,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub sequence: SwitchingSequence,
    pub classifier_noise_db: f64,
    pub runs: Vec<MethodRun>,
}

impl Comparison {
    pub fn run(&self, method: &str, tau0: f64) -> Option<&MethodRun> {
        self.runs
            .iter()
            .find(|r| r.method == method && r.tau0 == tau0)
    }
}

/// Runs one matched sequence through SHS and LSHS at every configured `tau0`.
pub fn compare_identifiers(p: &Pipeline, model: OnlineModel<'_>) -> Result<Comparison> {
    let sequence = switching_sequence(p)?;
    let classes = p.classes();
    let dcat = DiscreteCatalog::build(&p.catalog, p.gains(), p.config.sim.t_s)?;
    let mode = p.config.identify.channels;
    let mut runs = Vec::new();
    for &tau0 in &p.config.identify.tau0_list {
        let cfg = p.config.sim_at(tau0);
        let bank = load_or_build_bank(p, &dcat, &cfg)?;
        let trajs = run_sequence_discrete(&dcat, &sequence, &cfg)?;
        let shs = trajs
            .iter()
            .enumerate()
            .map(|(k, t)| identify_shs(t, &bank, mode, k))
            .collect::<Result<Vec<_>>>()?;
        let trained;
        let classifier = match model {
            OnlineModel::Fixed(m) => m,
            OnlineModel::PerTau0 => {
                trained = train_online_at(p, tau0)?;
                &trained
            }
        };
        let lshs_id = Lshs::new(classifier, &bank, cfg.n1(), p.config.dataset.epsilon, mode)?;
        let lshs = trajs
            .iter()
            .enumerate()
            .map(|(k, t)| lshs_id.identify(t, k))
            .collect::<Result<Vec<_>>>()?;
        for (method, results) in [("shs", shs), ("lshs", lshs)] {
            let metrics = score_run(&results, &sequence, &classes)?;
            runs.push(MethodRun {
                method,
                tau0,
                results,
                metrics,
            });
        }
    }
    let classifier_noise_db = if p.config.dataset.mixed {
        f64::NAN
    } else {
        nearest_level(&p.config.dataset.noise_levels, p.config.sim.noise_db).unwrap_or(f64::NAN)
    };
    Ok(Comparison {
        sequence,
        classifier_noise_db,
        runs,
    })
}

/// Accuracy per method and `tau0` with the class-wise breakdown.
pub fn write_accuracy<W: Write>(c: &Comparison, id: &str, mut w: W) -> Result<()> {
    write_manifest_line(id, &mut w)?;
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "method",
        "tau0",
        "windows",
        "exact_accuracy",
        "class_accuracy",
        "mean_visited",
    ]
    .map(String::from)
    .into();
    for cl in ContingencyClass::ALL {
        for f in ["count", "exact", "class"] {
            header.push(format!("{}_{f}", cl.name()));
        }
    }
    wr.write_record(&header)?;
    for r in &c.runs {
        let m = &r.metrics;
        let mut rec = vec![
            r.method.to_string(),
            format!("{}", r.tau0),
            m.windows.to_string(),
            format!("{:.6}", m.exact_accuracy),
            format!("{:.6}", m.class_accuracy),
            format!("{:.3}", m.mean_visited),
        ];
        for b in &m.per_class {
            rec.extend([
                b.count.to_string(),
                b.exact_correct.to_string(),
                b.class_correct.to_string(),
            ]);
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Exact-identification counts per scenario, joinable with the catalog on `alpha`.
pub fn write_scenario_accuracy<W: Write>(
    c: &Comparison,
    m: usize,
    id: &str,
    mut w: W,
) -> Result<()> {
    write_manifest_line(id, &mut w)?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["method", "tau0", "alpha", "windows", "exact_correct"])?;
    for r in &c.runs {
        let mut counts = vec![(0usize, 0usize); m];
        for (res, &(_, a)) in r.results.iter().zip(&c.sequence.entries) {
            let slot = &mut counts[a as usize - 1];
            slot.0 += 1;
            slot.1 += usize::from(res.alpha_hat == a);
        }
        for (i, (n, ok)) in counts.into_iter().enumerate() {
            wr.write_record([
                r.method.to_string(),
                format!("{}", r.tau0),
                (i + 1).to_string(),
                n.to_string(),
                ok.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_windows<W: Write>(
    c: &Comparison,
    classes: &[ContingencyClass],
    id: &str,
    mut w: W,
) -> Result<()> {
    write_manifest_line(id, &mut w)?;
    let rows: Vec<(String, f64, &IdentificationResult)> = c
        .runs
        .iter()
        .flat_map(|r| {
            r.results
                .iter()
                .map(move |x| (r.method.to_string(), r.tau0, x))
        })
        .collect();
    write_results(&rows, &c.sequence, classes, w)
}

/// Per-window wall time with its trailing moving average.
pub fn write_timing<W: Write>(c: &Comparison, id: &str, mut w: W) -> Result<()> {
    write_manifest_line(id, &mut w)?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "method",
        "tau0",
        "k",
        "visited",
        "elapsed_us",
        "moving_avg_us",
    ])?;
    for r in &c.runs {
        let elapsed: Vec<f64> = r.results.iter().map(|x| x.elapsed * 1e6).collect();
        let ma = moving_average(&elapsed, MOVING_AVERAGE_WINDOW);
        for ((x, e), a) in r.results.iter().zip(&elapsed).zip(&ma) {
            wr.write_record([
                r.method.to_string(),
                format!("{}", r.tau0),
                x.k.to_string(),
                x.visited.to_string(),
                format!("{e:.3}"),
                format!("{a:.3}"),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

// Plain-text summary.

pub struct Report<'a> {
    pub pipeline: &'a Pipeline,
    pub signatures: &'a SignatureReport,
    pub sweep: Option<&'a [SweepRow]>,
    pub comparison: Option<&'a Comparison>,
}

impl Report<'_> {
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let p = self.pipeline;
        let mut s = String::new();
        let counts: Vec<String> = ContingencyClass::ALL
            .iter()
            .map(|&c| format!("{} {}", c.name(), p.catalog.count(c)))
            .collect();
        let _ = writeln!(
            s,
            "catalog      {} scenarios ({})",
            p.catalog.len(),
            counts.join(", ")
        );
        if !p.catalog.excluded_lines.is_empty() {
            let _ = writeln!(s, "excluded     {}", p.catalog.excluded_lines.join(" "));
        }
        let _ = writeln!(s, "rank         {}/{}", p.feasibility.rank, p.feasibility.n);
        let _ = writeln!(
            s,
            "signatures   {}/{} match declared class",
            self.signatures.matched, self.signatures.total
        );
        let unstable = p.unstable_scenarios();
        if !unstable.is_empty() {
            let list: Vec<String> = unstable.iter().map(|a| a.to_string()).collect();
            let _ = writeln!(s, "unstable     alpha {}", list.join(" "));
        }
        if let Some(sub) = &p.design.substitution {
            let _ = writeln!(s, "poles        {sub}");
        }
        if let Some(rows) = self.sweep {
            let _ = writeln!(s, "\n{:>10} {:>8} {:>8}", "noise_db", "train", "held-out");
            for r in rows {
                let _ = writeln!(
                    s,
                    "{:>10} {:>8.4} {:>8.4}",
                    r.noise_db, r.train_accuracy, r.test_accuracy
                );
            }
        }
        if let Some(c) = self.comparison {
            let _ = writeln!(
                s,
                "\n{:>6} {:>6} {:>7} {:>7} {:>8} {:>8}  exact by class (N/P/C/M)",
                "method", "tau0", "exact", "class", "mean_us", "visited"
            );
            for r in &c.runs {
                let m = &r.metrics;
                let by: Vec<String> = m
                    .per_class
                    .iter()
                    .map(|b| format!("{}/{}", b.exact_correct, b.count))
                    .collect();
                let _ = writeln!(
                    s,
                    "{:>6} {:>6} {:>7.4} {:>7.4} {:>8.1} {:>8.2}  {}",
                    r.method,
                    r.tau0,
                    m.exact_accuracy,
                    m.class_accuracy,
                    m.mean_elapsed * 1e6,
                    m.mean_visited,
                    by.join(" ")
                );
            }
        }
        s
    }
}

/// Control-class scenario windows, reported on their own.
pub fn control_breakdown(run: &MethodRun) -> (usize, usize) {
    run.metrics
        .per_class
        .iter()
        .find(|b| b.class == ContingencyClass::Control)
        .map(|b| (b.exact_correct, b.count))
        .unwrap_or((0, 0))
}

// Catalog spec for grids other than the bundled one.

/// Every removable line and the default fault factors, without declared counts.
pub fn generic_catalog_spec() -> CatalogSpec {
    CatalogSpec {
        lines: crate::scenarios::LineSelection::AllRemovable,
        declared: None,
        ..CatalogSpec::ieee33_default()
    }
}

/// Controller poles for an explicit, non-reference design, as `[re, im]`.
pub fn scaled_reference_poles(scale: f64) -> Vec<[f64; 2]> {
    reference_controller_poles(scale)
        .iter()
        .map(|z| [z.re, z.im])
        .collect()
}
