//! Discretization, probing inputs, measurement noise and switched simulation.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{assemble_closed_loop, ClosedLoopModel, GainSet};
use crate::error::{Error, Result};
use crate::linalg;
use crate::scenarios::Catalog;

const NOISE_TAG: u64 = 0x6e6f_6973_6521;
const SWITCH_TAG: u64 = 0x7377_6974_6368;

/// SplitMix64 finalizer over `seed ^ tag`; used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = (seed ^ tag).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub amplitude: f64,
    pub frequencies_hz: Vec<f64>,
    /// Added to every frequency once per channel index.
    pub channel_offset_hz: f64,
    pub phase_rad: f64,
    /// Keep probing for the whole interval instead of only the identification segment.
    pub continuous: bool,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            amplitude: 0.05,
            frequencies_hz: vec![1.3, 2.7, 4.1],
            channel_offset_hz: 0.37,
            phase_rad: PI / 2.0,
            continuous: false,
        }
    }
}

impl ProbeSpec {
    pub fn zero() -> Self {
        ProbeSpec {
            amplitude: 0.0,
            frequencies_hz: Vec::new(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.amplitude.is_finite()
            && self.channel_offset_hz.is_finite()
            && self.phase_rad.is_finite()
            && self.frequencies_hz.iter().all(|f| f.is_finite());
        if !ok {
            return Err(Error::InvalidConfig(
                "probe parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Value on `channel` at time `t` measured from the start of the probed segment.
    pub fn value(&self, channel: usize, t: f64) -> f64 {
        let off = self.channel_offset_hz * channel as f64;
        self.amplitude
            * self
                .frequencies_hz
                .iter()
                .map(|f| (2.0 * PI * (f + off) * t + self.phase_rad).sin())
                .sum::<f64>()
    }
}

/// Number of samples in `duration`, which must be an integer multiple of `t_s`.
pub fn sample_count(duration: f64, t_s: f64) -> Result<usize> {
    if !(t_s > 0.0) || !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "duration {duration} / period {t_s}"
        )));
    }
    let k = (duration / t_s).round();
    if (k * t_s - duration).abs() > 1e-9 * duration.max(t_s) {
        return Err(Error::InvalidConfig(format!(
            "duration {duration} is not a multiple of the sample period {t_s}"
        )));
    }
    Ok(k as usize)
}

/// `channels x N` probe samples for `duration` seconds.
pub fn make_probe(
    spec: &ProbeSpec,
    channels: usize,
    duration: f64,
    t_s: f64,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = sample_count(duration, t_s)?;
    Ok(DMatrix::from_fn(channels, n, |c, l| {
        spec.value(c, l as f64 * t_s)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub t_s: f64,
    pub tau: f64,
    pub tau0: f64,
    pub tau1: f64,
    /// Noise variance in dB; `-inf` disables noise.
    pub noise_db: f64,
    pub probe: ProbeSpec,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_s: 0.001,
            tau: 0.5,
            tau0: 0.02,
            tau1: 0.02,
            noise_db: -100.0,
            probe: ProbeSpec::default(),
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let (ts, t1, t0, tau) = (self.t_s, self.tau1, self.tau0, self.tau);
        if !(ts > 0.0 && ts <= t1 && t1 <= t0 && t0 < tau) || !tau.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "need 0 < t_s <= tau1 <= tau0 < tau, got t_s={ts}, tau1={t1}, tau0={t0}, tau={tau}"
            )));
        }
        if self.noise_db.is_nan() || self.noise_db == f64::INFINITY {
            return Err(Error::InvalidConfig(
                "noise_db must be finite or -inf".into(),
            ));
        }
        sample_count(t0, ts)?;
        sample_count(t1, ts)?;
        sample_count(tau, ts)?;
        self.probe.validate()
    }

    pub fn n0(&self) -> usize {
        sample_count(self.tau0, self.t_s).unwrap_or(0)
    }

    pub fn n1(&self) -> usize {
        sample_count(self.tau1, self.t_s).unwrap_or(0)
    }

    pub fn interval_samples(&self) -> usize {
        sample_count(self.tau, self.t_s).unwrap_or(0)
    }

    pub fn sigma(&self) -> f64 {
        noise_sigma(self.noise_db)
    }
}

/// Standard deviation for a noise variance given in dB.
pub fn noise_sigma(noise_db: f64) -> f64 {
    if noise_db == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(noise_db / 20.0)
    }
}

/// Gaussian measurement noise addressed by `(window, sample)`, so any
/// sample can be regenerated without replaying the ones before it.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    sigma: f64,
    key: u64,
}

impl NoiseSource {
    pub fn new(noise_db: f64, seed: u64) -> Self {
        NoiseSource {
            sigma: noise_sigma(noise_db),
            key: derive_seed(seed, NOISE_TAG),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn window(&self, window: u64) -> WindowNoise {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(window);
        WindowNoise {
            sigma: self.sigma,
            rng,
        }
    }
}

pub struct WindowNoise {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl WindowNoise {
    pub fn fill(&mut self, sample: u64, out: &mut [f64]) {
        if self.sigma == 0.0 {
            out.fill(0.0);
            return;
        }
        self.rng.set_word_pos((sample as u128) << 16);
        for o in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *o = self.sigma * z;
        }
    }
}

/// Zero-order-hold discretization of a closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLoop {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub t_s: f64,
}

pub fn discretize(cl: &ClosedLoopModel, t_s: f64) -> Result<DiscreteLoop> {
    if !(t_s > 0.0) {
        return Err(Error::InvalidConfig(
            "sample period must be positive".into(),
        ));
    }
    let (ad, bd) = linalg::zoh(&cl.a, &cl.b, t_s);
    Ok(DiscreteLoop {
        ad,
        bd,
        c: cl.c.clone(),
        n: cl.n,
        p: cl.p,
        r: cl.r,
        t_s,
    })
}

impl DiscreteLoop {
    pub fn states(&self) -> usize {
        2 * self.n
    }

    pub fn outputs(&self) -> usize {
        self.r + self.n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `(r + n) x N`; rows are `y` followed by `x_hat`.
    pub yc: DMatrix<f64>,
    pub alpha_true: u32,
    pub r: usize,
}

impl Trajectory {
    pub fn new(t0: f64, t_s: f64, yc: DMatrix<f64>, alpha_true: u32, r: usize) -> Self {
        let times = (0..yc.ncols()).map(|l| t0 + l as f64 * t_s).collect();
        Trajectory {
            times,
            yc,
            alpha_true,
            r,
        }
    }

    pub fn len(&self) -> usize {
        self.yc.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.yc.ncols() == 0
    }

    pub fn channels(&self) -> usize {
        self.yc.nrows()
    }

    /// First `samples` columns.
    pub fn head(&self, samples: usize) -> Trajectory {
        let k = samples.min(self.len());
        Trajectory {
            times: self.times[..k].to_vec(),
            yc: self.yc.columns(0, k).into_owned(),
            alpha_true: self.alpha_true,
            r: self.r,
        }
    }

    /// Observer estimate at the first sample.
    pub fn xhat0(&self) -> DVector<f64> {
        self.yc
            .view((self.r, 0), (self.channels() - self.r, 1))
            .column(0)
            .into_owned()
    }
}

#[derive(Debug, Clone)]
pub struct WindowRun {
    pub yc: DMatrix<f64>,
    pub final_state: DVector<f64>,
}

/// Noiseless, unprobed response from each column of `starts`, one flattened
/// `yc` window per column.
pub fn unforced_response(
    d: &DiscreteLoop,
    starts: &DMatrix<f64>,
    samples: usize,
) -> Result<DMatrix<f64>> {
    if starts.nrows() != d.states() {
        return Err(Error::DimensionMismatch(format!(
            "start rows {} vs {} states",
            starts.nrows(),
            d.states()
        )));
    }
    let silent = NoiseSource::new(f64::NEG_INFINITY, 0);
    let zero_in = DMatrix::zeros(d.p, samples);
    let mut out = DMatrix::zeros(d.outputs() * samples, starts.ncols());
    for (j, s0) in starts.column_iter().enumerate() {
        let yc = simulate_window(d, &s0.into_owned(), &zero_in, &silent, 0, 0)?.yc;
        out.set_column(j, &DVector::from_column_slice(yc.as_slice()));
    }
    Ok(out)
}

/// Starts `x = x_hat = e_j`, one column per plant state.
pub fn estimate_starts(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n, n, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Starts `x = x_tilde = e_j` with `x_hat = 0`: an estimation error the
/// measured `x_hat` cannot see.
pub fn error_starts(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n, n, |i, j| if i % n == j { 1.0 } else { 0.0 })
}

/// Steps `state <- A_d state + B_d [v; N]` for every column of `v`, emitting
/// `y_c = C state + [N; 0]`. Noise for sample `l` is keyed by
/// `(window, sample_offset + l)`.
pub fn simulate_window(
    d: &DiscreteLoop,
    x0: &DVector<f64>,
    v: &DMatrix<f64>,
    noise: &NoiseSource,
    window: u64,
    sample_offset: u64,
) -> Result<WindowRun> {
    if x0.len() != d.states() || v.nrows() != d.p {
        return Err(Error::DimensionMismatch(format!(
            "state {} vs {}, input rows {} vs {}",
            x0.len(),
            d.states(),
            v.nrows(),
            d.p
        )));
    }
    let steps = v.ncols();
    let mut yc = DMatrix::zeros(d.outputs(), steps);
    let mut state = x0.clone();
    let mut input = DVector::zeros(d.p + d.r);
    let mut nbuf = vec![0.0; d.r];
    let mut wn = noise.window(window);
    for l in 0..steps {
        wn.fill(sample_offset + l as u64, &mut nbuf);
        let mut y = &d.c * &state;
        for j in 0..d.r {
            y[j] += nbuf[j];
        }
        yc.set_column(l, &y);
        input.rows_mut(0, d.p).copy_from(&v.column(l));
        input.rows_mut(d.p, d.r).copy_from_slice(&nbuf);
        state = &d.ad * &state + &d.bd * &input;
        if !linalg::all_finite(&state) {
            return Err(Error::NonFinite {
                sample: sample_offset as usize + l,
            });
        }
    }
    Ok(WindowRun {
        yc,
        final_state: state,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchingSequence {
    /// `(k, alpha_k)` with `k` contiguous from 0.
    pub entries: Vec<(usize, u32)>,
    pub seed: u64,
}

/// Uniform i.i.d. draw of `alpha_k` from `1..=m`.
pub fn generate_switching_sequence(
    m: usize,
    length: usize,
    seed: u64,
) -> Result<SwitchingSequence> {
    if length == 0 || m == 0 {
        return Err(Error::InvalidConfig(
            "sequence length and catalog size must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SWITCH_TAG));
    let entries = (0..length)
        .map(|k| (k, rng.random_range(1..=m as u32)))
        .collect();
    Ok(SwitchingSequence { entries, seed })
}

/// Discretized closed loops for a catalog, indexed by `alpha - 1`.
#[derive(Debug, Clone)]
pub struct DiscreteCatalog {
    pub loops: Vec<DiscreteLoop>,
}

impl DiscreteCatalog {
    pub fn build(catalog: &Catalog, gains: &GainSet, t_s: f64) -> Result<Self> {
        let loops = catalog
            .models
            .iter()
            .map(|m| discretize(&assemble_closed_loop(m, gains)?, t_s))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiscreteCatalog { loops })
    }

    pub fn get(&self, alpha: u32) -> Option<&DiscreteLoop> {
        self.loops.get((alpha as usize).checked_sub(1)?)
    }

    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }
}

/// Inputs for one interval: the `tau0` head and the remainder up to `tau`.
pub fn interval_inputs(cfg: &SimConfig, p: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n0, nt) = (cfg.n0(), cfg.interval_samples());
    let probe = make_probe(&cfg.probe, p, cfg.tau0, cfg.t_s)?;
    let tail = if cfg.probe.continuous {
        DMatrix::from_fn(p, nt - n0, |c, l| {
            cfg.probe.value(c, (n0 + l) as f64 * cfg.t_s)
        })
    } else {
        DMatrix::zeros(p, nt - n0)
    };
    Ok((probe, tail))
}

/// Simulates a switching sequence, carrying the full closed-loop state across
/// interval boundaries. Returns the identification window `[k tau, k tau + tau0)`
/// of every interval; the classification window is its first `tau1` seconds.
pub fn run_sequence_discrete(
    dcat: &DiscreteCatalog,
    seq: &SwitchingSequence,
    cfg: &SimConfig,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let first = dcat
        .loops
        .first()
        .ok_or_else(|| Error::Empty("catalog".into()))?;
    let n0 = cfg.n0();
    let (probe, tail) = interval_inputs(cfg, first.p)?;
    let noise = NoiseSource::new(cfg.noise_db, cfg.seed);
    let mut state = DVector::zeros(first.states());
    let mut out = Vec::with_capacity(seq.entries.len());
    for (pos, &(k, alpha)) in seq.entries.iter().enumerate() {
        if k != pos {
            return Err(Error::Validation(format!(
                "interval index {k} at position {pos}"
            )));
        }
        let d = dcat.get(alpha).ok_or(Error::IndexOutOfRange {
            what: "alpha",
            index: alpha as usize,
            len: dcat.len(),
        })?;
        let head = simulate_window(d, &state, &probe, &noise, k as u64, 0)?;
        let rest = simulate_window(d, &head.final_state, &tail, &noise, k as u64, n0 as u64)?;
        state = rest.final_state;
        out.push(Trajectory::new(
            k as f64 * cfg.tau,
            cfg.t_s,
            head.yc,
            alpha,
            d.r,
        ));
    }
    Ok(out)
}

pub fn run_sequence(
    catalog: &Catalog,
    gains: &GainSet,
    seq: &SwitchingSequence,
    cfg: &SimConfig,
) -> Result<Vec<Trajectory>> {
    let dcat = DiscreteCatalog::build(catalog, gains, cfg.t_s)?;
    run_sequence_discrete(&dcat, seq, cfg)
}

/// CSV dump with columns `t, y_1..y_r, xhat_1..xhat_n, alpha_true`.
pub fn write_trajectories<W: Write>(trajs: &[Trajectory], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let Some(first) = trajs.first() else {
        wr.flush()?;
        return Ok(());
    };
    let (r, ch) = (first.r, first.channels());
    let mut header = vec!["t".to_string()];
    header.extend((1..=r).map(|i| format!("y_{i}")));
    header.extend((1..=ch - r).map(|i| format!("xhat_{i}")));
    header.push("alpha_true".into());
    wr.write_record(&header)?;
    for tr in trajs {
        for l in 0..tr.len() {
            let mut rec = Vec::with_capacity(ch + 2);
            rec.push(format!("{:.6}", tr.times[l]));
            rec.extend(tr.yc.column(l).iter().map(|v| format!("{v:e}")));
            rec.push(tr.alpha_true.to_string());
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}
