//! Grid description, `.grid` parsing and the small-signal swing model.
//!
//! Each non-slack generator contributes `(delta_i, omega_i)` with
//! `M_i omega_i' = -b_i omega_i + u_i - P_i`, where the electrical output
//! `P = K delta` comes from the DC susceptance Laplacian, grounded at the
//! slack bus and Kron-reduced onto the generator buses.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

pub type BusId = u32;

/// Set of in-service line ids.
pub type Topology = BTreeSet<String>;

/// Bundled 33-bus feeder with four dispatchable generators.
pub const IEEE33_GRID: &str = include_str!("../data/ieee33.grid");

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: String,
    pub from: BusId,
    pub to: BusId,
    pub resistance: f64,
    pub reactance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: String,
    pub bus: BusId,
    pub inertia: f64,
    pub damping: f64,
    pub capacity_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pmu {
    pub id: String,
    pub bus: BusId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: BusId,
    pub p_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridNetwork {
    pub buses: Vec<BusId>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub slack_bus: BusId,
    pub pmus: Vec<Pmu>,
    pub loads: Vec<Load>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankReport {
    pub rank: usize,
    pub n: usize,
    pub full_rank: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Buses,
    Lines,
    Generators,
    Pmus,
    Loads,
    Slack,
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, field: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(line, field, "missing value"))?;
    tok.parse()
        .map_err(|_| Error::parse(line, field, format!("cannot parse `{tok}`")))
}

fn finite(v: f64, line: usize, field: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(line, field, "value must be finite"))
    }
}

impl GridNetwork {
    /// Parses and validates `.grid` text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut section = None;
        let mut buses = Vec::new();
        let mut lines = Vec::new();
        let mut generators = Vec::new();
        let mut pmus = Vec::new();
        let mut loads = Vec::new();
        let mut slack = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let lno = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(name) = body.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(lno, "section", "unterminated header"))?;
                section = Some(match name.trim() {
                    "buses" => Section::Buses,
                    "lines" => Section::Lines,
                    "generators" => Section::Generators,
                    "pmus" => Section::Pmus,
                    "loads" => Section::Loads,
                    "slack" => Section::Slack,
                    other => {
                        return Err(Error::parse(
                            lno,
                            "section",
                            format!("unknown section `{other}`"),
                        ))
                    }
                });
                continue;
            }
            let mut f = body.split_whitespace();
            let sec = section
                .ok_or_else(|| Error::parse(lno, "section", "record before any section header"))?;
            let expected = match sec {
                Section::Buses => {
                    buses.push((num::<BusId>(f.next(), lno, "bus")?, lno));
                    1
                }
                Section::Lines => {
                    let id = f.next().unwrap_or_default().to_string();
                    let from = num(f.next(), lno, "from_bus")?;
                    let to = num(f.next(), lno, "to_bus")?;
                    let resistance = finite(num(f.next(), lno, "resistance")?, lno, "resistance")?;
                    let reactance = finite(num(f.next(), lno, "reactance")?, lno, "reactance")?;
                    lines.push(Line {
                        id,
                        from,
                        to,
                        resistance,
                        reactance,
                    });
                    5
                }
                Section::Generators => {
                    let id = f.next().unwrap_or_default().to_string();
                    let bus = num(f.next(), lno, "bus")?;
                    let inertia = finite(num(f.next(), lno, "inertia")?, lno, "inertia")?;
                    let damping = finite(num(f.next(), lno, "damping")?, lno, "damping")?;
                    let capacity_mw = finite(num(f.next(), lno, "capacity")?, lno, "capacity")?;
                    generators.push(Generator {
                        id,
                        bus,
                        inertia,
                        damping,
                        capacity_mw,
                    });
                    5
                }
                Section::Pmus => {
                    let id = f.next().unwrap_or_default().to_string();
                    let bus = num(f.next(), lno, "bus")?;
                    let mut n = 2;
                    if let Some(q) = f.next() {
                        if q != "angle" {
                            return Err(Error::parse(
                                lno,
                                "quantity",
                                format!("unsupported measured quantity `{q}`"),
                            ));
                        }
                        n = 3;
                    }
                    pmus.push(Pmu { id, bus });
                    n
                }
                Section::Loads => {
                    let bus = num(f.next(), lno, "bus")?;
                    let p_mw = finite(num(f.next(), lno, "active_power")?, lno, "active_power")?;
                    loads.push(Load { bus, p_mw });
                    2
                }
                Section::Slack => {
                    slack.push(num::<BusId>(f.next(), lno, "bus")?);
                    1
                }
            };
            if let Some(extra) = f.next() {
                return Err(Error::parse(
                    lno,
                    "record",
                    format!("unexpected trailing field `{extra}` (expected {expected} fields)"),
                ));
            }
        }

        let mut seen = HashSet::new();
        for &(b, lno) in &buses {
            if !seen.insert(b) {
                return Err(Error::parse(lno, "bus", format!("duplicate bus {b}")));
            }
        }
        if slack.len() != 1 {
            return Err(Error::Validation(format!(
                "exactly one slack bus required, found {}",
                slack.len()
            )));
        }
        let grid = GridNetwork {
            buses: buses.into_iter().map(|(b, _)| b).collect(),
            lines,
            generators,
            slack_bus: slack[0],
            pmus,
            loads,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn ieee33() -> Self {
        Self::parse(IEEE33_GRID).expect("bundled grid is valid")
    }

    /// Checks every structural invariant; `parse` calls this.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.buses.is_empty() {
            return bad("grid has no buses".into());
        }
        let buses: HashSet<BusId> = self.buses.iter().copied().collect();
        if buses.len() != self.buses.len() {
            return bad("duplicate bus ids".into());
        }
        if !buses.contains(&self.slack_bus) {
            return bad(format!("slack bus {} does not exist", self.slack_bus));
        }
        let mut ids = HashSet::new();
        for l in &self.lines {
            if l.id.is_empty() || !ids.insert(l.id.as_str()) {
                return bad(format!("line id `{}` is empty or duplicated", l.id));
            }
            if !buses.contains(&l.from) || !buses.contains(&l.to) {
                return bad(format!("line {} references an unknown bus", l.id));
            }
            if l.from == l.to {
                return bad(format!("line {} is a self-loop", l.id));
            }
            if !(l.reactance > 0.0) {
                return bad(format!("line {}: reactance must be positive", l.id));
            }
            if l.resistance < 0.0 {
                return bad(format!("line {}: resistance must be non-negative", l.id));
            }
        }
        let mut ids = HashSet::new();
        let mut gen_buses = HashSet::new();
        for g in &self.generators {
            if g.id.is_empty() || !ids.insert(g.id.as_str()) {
                return bad(format!("generator id `{}` is empty or duplicated", g.id));
            }
            if !buses.contains(&g.bus) {
                return bad(format!("generator {} sits on unknown bus {}", g.id, g.bus));
            }
            if !gen_buses.insert(g.bus) {
                return bad(format!("more than one generator on bus {}", g.bus));
            }
            if !(g.inertia > 0.0) {
                return bad(format!("generator {}: inertia must be positive", g.id));
            }
            if !(g.damping > 0.0) {
                return bad(format!("generator {}: damping must be positive", g.id));
            }
            if g.capacity_mw < 0.0 {
                return bad(format!("generator {}: capacity must be non-negative", g.id));
            }
        }
        let mut ids = HashSet::new();
        for p in &self.pmus {
            if p.id.is_empty() || !ids.insert(p.id.as_str()) {
                return bad(format!("pmu id `{}` is empty or duplicated", p.id));
            }
            if !buses.contains(&p.bus) {
                return bad(format!("pmu {} sits on unknown bus {}", p.id, p.bus));
            }
        }
        for l in &self.loads {
            if !buses.contains(&l.bus) {
                return bad(format!("load on unknown bus {}", l.bus));
            }
        }
        let all = self.all_lines();
        let reach = self.reachable(&all, self.slack_bus);
        if reach.len() != self.buses.len() {
            let cut: Vec<BusId> = self
                .buses
                .iter()
                .copied()
                .filter(|b| !reach.contains(b))
                .collect();
            return bad(format!(
                "line graph is not connected; unreachable buses {cut:?}"
            ));
        }
        Ok(())
    }

    pub fn all_lines(&self) -> Topology {
        self.lines.iter().map(|l| l.id.clone()).collect()
    }

    pub fn line(&self, id: &str) -> Option<&Line> {
        self.lines.iter().find(|l| l.id == id)
    }

    /// Generators whose dynamics are modelled (everything off the slack bus).
    pub fn dynamic_generators(&self) -> impl Iterator<Item = &Generator> {
        self.generators
            .iter()
            .filter(move |g| g.bus != self.slack_bus)
    }

    fn reachable(&self, topology: &Topology, start: BusId) -> HashSet<BusId> {
        let mut adj: HashMap<BusId, Vec<BusId>> = HashMap::new();
        for l in self.lines.iter().filter(|l| topology.contains(&l.id)) {
            adj.entry(l.from).or_default().push(l.to);
            adj.entry(l.to).or_default().push(l.from);
        }
        let mut seen = HashSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(b) = queue.pop_front() {
            for &nb in adj.get(&b).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
        seen
    }

    /// Serializes back to `.grid` text.
    pub fn to_grid_text(&self) -> String {
        let mut s = String::from("[buses]\n");
        for b in &self.buses {
            let _ = writeln!(s, "{b}");
        }
        s.push_str("\n[lines]\n");
        for l in &self.lines {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                l.id, l.from, l.to, l.resistance, l.reactance
            );
        }
        s.push_str("\n[generators]\n");
        for g in &self.generators {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                g.id, g.bus, g.inertia, g.damping, g.capacity_mw
            );
        }
        s.push_str("\n[pmus]\n");
        for p in &self.pmus {
            let _ = writeln!(s, "{} {} angle", p.id, p.bus);
        }
        s.push_str("\n[loads]\n");
        for l in &self.loads {
            let _ = writeln!(s, "{} {}", l.bus, l.p_mw);
        }
        let _ = write!(s, "\n[slack]\n{}\n", self.slack_bus);
        s
    }
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridNetwork> {
    GridNetwork::parse(&std::fs::read_to_string(path)?)
}

impl StateSpaceModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn r(&self) -> usize {
        self.c.nrows()
    }

    /// Swing-equation model from explicit coupling. `k` is the reduced
    /// synchronizing matrix and `theta` maps generator angles to sensor angles.
    pub fn from_swing(
        inertia: &[f64],
        damping: &[f64],
        k: &DMatrix<f64>,
        theta: &DMatrix<f64>,
    ) -> Result<Self> {
        let g = inertia.len();
        if damping.len() != g || k.shape() != (g, g) || theta.ncols() != g {
            return Err(Error::DimensionMismatch(format!(
                "{g} generators, {} dampings, coupling {:?}, sensor map {:?}",
                damping.len(),
                k.shape(),
                theta.shape()
            )));
        }
        let n = 2 * g;
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, g);
        let mut c = DMatrix::zeros(theta.nrows(), n);
        for i in 0..g {
            a[(2 * i, 2 * i + 1)] = 1.0;
            a[(2 * i + 1, 2 * i + 1)] = -damping[i] / inertia[i];
            for j in 0..g {
                a[(2 * i + 1, 2 * j)] = -k[(i, j)] / inertia[i];
            }
            b[(2 * i + 1, i)] = 1.0 / inertia[i];
            for s in 0..theta.nrows() {
                c[(s, 2 * i)] = theta[(s, i)];
            }
        }
        let state_labels = (1..=g)
            .flat_map(|i| [format!("delta_{i}"), format!("omega_{i}")])
            .collect();
        Ok(StateSpaceModel {
            a,
            b,
            c,
            state_labels,
            input_labels: (1..=g).map(|i| format!("u_{i}")).collect(),
            output_labels: (1..=theta.nrows()).map(|i| format!("y_{i}")).collect(),
        })
    }
}

/// Builds `(A, B, C)` for the given set of in-service lines.
pub fn build_small_signal_model(
    grid: &GridNetwork,
    topology: &Topology,
) -> Result<StateSpaceModel> {
    for id in topology {
        if grid.line(id).is_none() {
            return Err(Error::Validation(format!(
                "topology names unknown line `{id}`"
            )));
        }
    }
    let gens: Vec<&Generator> = grid.dynamic_generators().collect();
    if gens.is_empty() {
        return Err(Error::Validation("grid has no non-slack generator".into()));
    }

    let reach = grid.reachable(topology, grid.slack_bus);
    let required = gens
        .iter()
        .map(|g| g.bus)
        .chain(grid.pmus.iter().map(|p| p.bus));
    for bus in required {
        if !reach.contains(&bus) {
            let mut component: Vec<BusId> = grid.reachable(topology, bus).into_iter().collect();
            component.sort_unstable();
            return Err(Error::DisconnectedTopology { component });
        }
    }

    // Grounded Laplacian over the non-slack buses that stay attached.
    let gen_pos: BTreeMap<BusId, usize> =
        gens.iter().enumerate().map(|(i, g)| (g.bus, i)).collect();
    let passive: Vec<BusId> = grid
        .buses
        .iter()
        .copied()
        .filter(|b| *b != grid.slack_bus && reach.contains(b) && !gen_pos.contains_key(b))
        .collect();
    let ng = gens.len();
    let nl = passive.len();
    let mut index: HashMap<BusId, usize> = gen_pos.iter().map(|(&b, &i)| (b, i)).collect();
    for (j, &b) in passive.iter().enumerate() {
        index.insert(b, ng + j);
    }
    let mut lap = DMatrix::<f64>::zeros(ng + nl, ng + nl);
    for l in grid.lines.iter().filter(|l| topology.contains(&l.id)) {
        if !reach.contains(&l.from) {
            continue;
        }
        let y = 1.0 / l.reactance;
        let i = index.get(&l.from).copied();
        let j = index.get(&l.to).copied();
        if let Some(i) = i {
            lap[(i, i)] += y;
        }
        if let Some(j) = j {
            lap[(j, j)] += y;
        }
        if let (Some(i), Some(j)) = (i, j) {
            lap[(i, j)] -= y;
            lap[(j, i)] -= y;
        }
    }

    let bgg = lap.view((0, 0), (ng, ng)).into_owned();
    let (kred, interp) = if nl == 0 {
        (bgg, DMatrix::zeros(0, ng))
    } else {
        let bll = lap.view((ng, ng), (nl, nl)).into_owned();
        let blg = lap.view((ng, 0), (nl, ng)).into_owned();
        let chol = bll.cholesky().ok_or_else(|| {
            Error::SingularReduction("passive-bus block is not positive definite".into())
        })?;
        let x = chol.solve(&blg);
        let k = &bgg - blg.transpose() * &x;
        (k, -x)
    };
    let kred = (&kred + kred.transpose()) * 0.5;

    let mut theta = DMatrix::zeros(grid.pmus.len(), ng);
    for (s, pmu) in grid.pmus.iter().enumerate() {
        if pmu.bus == grid.slack_bus {
            continue;
        }
        match index[&pmu.bus] {
            i if i < ng => theta[(s, i)] = 1.0,
            j => theta.row_mut(s).copy_from(&interp.row(j - ng)),
        }
    }

    let inertia: Vec<f64> = gens.iter().map(|g| g.inertia).collect();
    let damping: Vec<f64> = gens.iter().map(|g| g.damping).collect();
    let mut model = StateSpaceModel::from_swing(&inertia, &damping, &kred, &theta)?;
    model.state_labels = gens
        .iter()
        .flat_map(|g| [format!("delta_{}", g.id), format!("omega_{}", g.id)])
        .collect();
    model.input_labels = gens.iter().map(|g| format!("u_{}", g.id)).collect();
    model.output_labels = grid
        .pmus
        .iter()
        .map(|p| format!("theta_{}", p.id))
        .collect();
    Ok(model)
}

/// Rank of `A`; full rank means `A x + B u = 0` has a unique equilibrium.
pub fn check_feasibility(model: &StateSpaceModel) -> RankReport {
    let n = model.n();
    let rank = linalg::rank(&model.a);
    RankReport {
        rank,
        n,
        full_rank: rank == n,
    }
}
