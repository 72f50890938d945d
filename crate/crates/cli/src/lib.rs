//! `shs-sentinel` command-line front end.
//!
//! Settings resolve as flags, then the `--config` file, then
//! `SHS_SENTINEL_SEED` (seed only), then built-in defaults. The resolved
//! configuration is echoed into each run's manifest.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use shs_sentinel::classifier::KnnModel;
use shs_sentinel::features::LabeledDataset;
use shs_sentinel::harness::{self, ExperimentConfig, ExperimentManifest, Pipeline, Report};
use shs_sentinel::identifier::ResidualChannels;
use shs_sentinel::simulator::DiscreteCatalog;
use shs_sentinel::{Error, Result};

pub const SEED_ENV: &str = "SHS_SENTINEL_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "shs-sentinel",
    version,
    about = "Contingency identification experiments on switched grid models"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Grid description file (default: bundled IEEE 33-bus model).
    #[arg(long, global = true)]
    grid: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Measurement noise variance in dB, or `-inf`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    noise_db: Option<f64>,
    #[arg(long, global = true)]
    pole_scale: Option<f64>,
    #[arg(long, global = true)]
    per_class: Option<usize>,
    #[arg(long, global = true)]
    intervals: Option<usize>,
    /// Identification window lengths in seconds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    tau0: Option<Vec<f64>>,
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Residual channels: `all` or `outputs`.
    #[arg(long, global = true)]
    channels: Option<String>,
    /// Keep the probe on for the whole interval.
    #[arg(long, global = true)]
    continuous_probe: bool,
    /// Train one classifier over all noise levels.
    #[arg(long, global = true)]
    mixed: bool,
    #[arg(long, global = true)]
    bank_cache: Option<PathBuf>,
    /// Output file (default: standard output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Manifest path (default: next to the output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scenario catalog as CSV (alpha, class, transform, parameter).
    BuildCatalog,
    /// Closed-loop eigenvalues per scenario.
    EigenTable,
    /// Labelled feature dataset over the configured noise levels.
    GenDataset,
    /// Train the online classifier and write it in text form.
    Train {
        /// Existing dataset CSV; generated when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Held-out classifier accuracy per noise level.
    NoiseSweep {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Simulate a random switching sequence and dump identification windows.
    RunSwitching {
        /// Also write the sequence as `k, alpha`.
        #[arg(long)]
        sequence_out: Option<PathBuf>,
    },
    /// SHS against LSHS over matched sequences for every tau0.
    CompareIdentifiers {
        #[arg(long)]
        out_dir: PathBuf,
        /// Classifier file from `train`, used at every tau0; trained per tau0 when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run every experiment into a directory and print a summary table.
    Report {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildCatalog => "build-catalog",
            Command::EigenTable => "eigen-table",
            Command::GenDataset => "gen-dataset",
            Command::Train { .. } => "train",
            Command::NoiseSweep { .. } => "noise-sweep",
            Command::RunSwitching { .. } => "run-switching",
            Command::CompareIdentifiers { .. } => "compare-identifiers",
            Command::Report { .. } => "report",
        }
    }
}

/// Parses `argv` (program name first), runs the command, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    eprint!("{}", e.render());
                    1
                }
            };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut file_sets_seed = false;
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)?;
        cfg = ExperimentConfig::from_toml(&text)?;
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        file_sets_seed = table.get("sim").and_then(|s| s.get("seed")).is_some();
    }
    if !file_sets_seed {
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.sim.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v} is not a seed")))?;
        }
    }
    if let Some(s) = cli.seed {
        cfg.sim.seed = s;
    }
    if let Some(g) = &cli.grid {
        cfg.grid = Some(g.clone());
        if cli.config.is_none() && !is_bundled_default(g) {
            cfg.catalog = harness::generic_catalog_spec();
        }
    }
    if let Some(v) = cli.noise_db {
        cfg.sim.noise_db = v;
    }
    if let Some(v) = cli.pole_scale {
        cfg.design.controller_pole_scale = v;
    }
    if let Some(v) = cli.per_class {
        cfg.dataset.per_class = v;
    }
    if let Some(v) = cli.intervals {
        cfg.identify.intervals = v;
    }
    if let Some(v) = &cli.tau0 {
        cfg.identify.tau0_list = v.clone();
        if let Some(&first) = v.first() {
            cfg.sim.tau0 = first;
        }
    }
    if let Some(v) = cli.k {
        cfg.classifier.k = v;
    }
    if let Some(c) = &cli.channels {
        cfg.identify.channels = match c.as_str() {
            "all" => ResidualChannels::All,
            "outputs" => ResidualChannels::OutputsOnly,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown channel set `{other}`"
                )))
            }
        };
    }
    if cli.continuous_probe {
        cfg.sim.probe.continuous = true;
    }
    if cli.mixed {
        cfg.dataset.mixed = true;
    }
    if let Some(d) = &cli.bank_cache {
        cfg.identify.bank_cache = Some(d.clone());
    }
    Ok(cfg)
}

/// A grid file whose contents equal the bundled model keeps the default catalog.
fn is_bundled_default(path: &Path) -> bool {
    std::fs::read_to_string(path)
        .map(|t| t.replace("\r\n", "\n") == shs_sentinel::grid_model::IEEE33_GRID)
        .unwrap_or(false)
}

/// Writes to a file or to standard output.
fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn finish(mut m: ExperimentManifest, path: Option<PathBuf>) -> Result<()> {
    m.finish();
    if let Some(p) = path {
        m.write_json(p)?;
    }
    Ok(())
}

fn sidecar(cli: &Cli) -> Option<PathBuf> {
    cli.manifest.clone().or_else(|| {
        cli.out.as_ref().map(|o| {
            let mut s = o.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    })
}

fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    LabeledDataset::read_csv(File::open(path)?)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let p = Pipeline::build(cfg)?;
    let mut m = p.manifest(cli.command.name());
    let id = m.id.clone();
    if let Some(o) = &cli.out {
        m.outputs.push(o.display().to_string());
    }
    match &cli.command {
        Command::BuildCatalog => {
            let mut w = open_out(cli.out.as_deref())?;
            harness::write_catalog(&p, &id, &mut w)?;
            w.flush()?;
            eprintln!(
                "{} scenarios; excluded lines: {}",
                p.catalog.len(),
                p.catalog.excluded_lines.join(" ")
            );
        }
        Command::EigenTable => {
            let mut w = open_out(cli.out.as_deref())?;
            harness::write_eigen_csv(&p, &id, &mut w)?;
            w.flush()?;
            let sig = harness::signature_check(&p);
            eprintln!(
                "signatures {}/{} match declared class",
                sig.matched, sig.total
            );
        }
        Command::GenDataset => {
            let ds = harness::generate(&p)?;
            let mut w = open_out(cli.out.as_deref())?;
            harness::write_dataset(&ds, &id, &mut w)?;
            w.flush()?;
        }
        Command::Train { dataset } => {
            let ds = match dataset {
                Some(path) => read_dataset(path)?,
                None => harness::generate(&p)?,
            };
            let model = harness::train_online(&p, &ds, p.config.sim.noise_db)?;
            let mut w = open_out(cli.out.as_deref())?;
            writeln!(w, "# manifest={id}")?;
            w.write_all(model.to_text().as_bytes())?;
            w.flush()?;
            eprintln!("trained on {} points", model.points.len());
        }
        Command::NoiseSweep { dataset } => {
            let ds = match dataset {
                Some(path) => read_dataset(path)?,
                None => harness::generate(&p)?,
            };
            let rows = harness::noise_sweep(&p, &ds)?;
            let mut w = open_out(cli.out.as_deref())?;
            harness::write_sweep(&rows, "knn", p.config.classifier.k, &id, &mut w)?;
            w.flush()?;
        }
        Command::RunSwitching { sequence_out } => {
            let seq = harness::switching_sequence(&p)?;
            let dcat = DiscreteCatalog::build(&p.catalog, p.gains(), p.config.sim.t_s)?;
            let trajs = harness::run_switching(&p, &dcat, &seq)?;
            let mut w = open_out(cli.out.as_deref())?;
            harness::write_switching(&trajs, &id, &mut w)?;
            w.flush()?;
            if let Some(path) = sequence_out {
                let mut w = open_out(Some(path))?;
                harness::write_sequence(&seq, &id, &mut w)?;
                w.flush()?;
                m.outputs.push(path.display().to_string());
            }
        }
        Command::CompareIdentifiers { out_dir, model } => {
            let loaded = match model {
                Some(path) => Some(KnnModel::from_text(&std::fs::read_to_string(path)?)?),
                None => None,
            };
            let source = loaded
                .as_ref()
                .map_or(harness::OnlineModel::PerTau0, harness::OnlineModel::Fixed);
            let cmp = harness::compare_identifiers(&p, source)?;
            write_comparison(&p, &cmp, &id, out_dir, &mut m)?;
            print!(
                "{}",
                Report {
                    pipeline: &p,
                    signatures: &harness::signature_check(&p),
                    sweep: None,
                    comparison: Some(&cmp)
                }
                .render()
            );
            return finish(
                m,
                Some(
                    cli.manifest
                        .clone()
                        .unwrap_or_else(|| out_dir.join("manifest.json")),
                ),
            );
        }
        Command::Report { out_dir } => {
            std::fs::create_dir_all(out_dir)?;
            let mut put = |name: &str, f: &dyn Fn(&mut dyn Write) -> Result<()>| -> Result<()> {
                let path = out_dir.join(name);
                let mut w = BufWriter::new(File::create(&path)?);
                f(&mut w)?;
                w.flush()?;
                m.outputs.push(path.display().to_string());
                Ok(())
            };
            put("catalog.csv", &|w| harness::write_catalog(&p, &id, w))?;
            put("eigen.csv", &|w| harness::write_eigen_csv(&p, &id, w))?;
            let ds = harness::generate(&p)?;
            put("dataset.csv", &|w| harness::write_dataset(&ds, &id, w))?;
            let sweep = harness::noise_sweep(&p, &ds)?;
            put("noise_sweep.csv", &|w| {
                harness::write_sweep(&sweep, "knn", p.config.classifier.k, &id, w)
            })?;
            let cmp = harness::compare_identifiers(&p, harness::OnlineModel::PerTau0)?;
            write_comparison(&p, &cmp, &id, out_dir, &mut m)?;
            let sig = harness::signature_check(&p);
            print!(
                "{}",
                Report {
                    pipeline: &p,
                    signatures: &sig,
                    sweep: Some(&sweep),
                    comparison: Some(&cmp)
                }
                .render()
            );
            return finish(
                m,
                Some(
                    cli.manifest
                        .clone()
                        .unwrap_or_else(|| out_dir.join("manifest.json")),
                ),
            );
        }
    }
    finish(m, sidecar(cli))
}

fn write_comparison(
    p: &Pipeline,
    cmp: &harness::Comparison,
    id: &str,
    out_dir: &Path,
    m: &mut ExperimentManifest,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let classes = p.classes();
    let files: [(&str, Box<dyn Fn(&mut dyn Write) -> Result<()>>); 4] = [
        (
            "accuracy.csv",
            Box::new(|w| harness::write_accuracy(cmp, id, w)),
        ),
        (
            "scenario_accuracy.csv",
            Box::new(|w| harness::write_scenario_accuracy(cmp, p.catalog.len(), id, w)),
        ),
        (
            "windows.csv",
            Box::new(|w| harness::write_windows(cmp, &classes, id, w)),
        ),
        (
            "timing.csv",
            Box::new(|w| harness::write_timing(cmp, id, w)),
        ),
    ];
    for (name, f) in files {
        let path = out_dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        m.outputs.push(path.display().to_string());
    }
    Ok(())
}
