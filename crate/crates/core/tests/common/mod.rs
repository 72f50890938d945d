#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use shs_sentinel::identifier::{ResidualChannels, ResponseBank};
use shs_sentinel::simulator::{make_probe, DiscreteLoop, Trajectory};

/// Four buses: slack 1, generators on 2 and 4, a load bus 3 carrying the PMU.
pub const TOY_GRID: &str = "\
[buses]
1
2
3
4
[lines]
L1 1 3 0.01 0.20
L2 2 3 0.02 0.25
L3 3 4 0.01 0.40
L4 2 4 0.03 0.50
[generators]
G1 2 0.8 0.30 1.0
G2 4 0.5 0.25 1.0
[pmus]
P1 3 angle
[loads]
3 0.5
[slack]
1
";

/// One generator behind one line to the slack bus.
pub const TWO_BUS: &str = "[buses]\n1\n2\n[lines]\nL1 1 2 0.01 0.1\n[generators]\nG1 2 0.5 0.2 1.0\n[pmus]\nP1 2 angle\n[slack]\n1\n";

// Dormand-Prince 5(4) with adaptive steps.

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

pub fn dopri45<F>(f: F, t0: f64, x0: &DVector<f64>, t1: f64, rtol: f64, atol: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut t = t0;
    let mut x = x0.clone();
    let mut h = ((t1 - t0) / 100.0).max(1e-12);
    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate() {
                xs.axpy(h * A[s][j], kj, 1.0);
            }
            k.push(f(t + C[s] * h, &xs));
        }
        let mut x5 = x.clone();
        let mut x4 = x.clone();
        for s in 0..7 {
            x5.axpy(h * B5[s], &k[s], 1.0);
            x4.axpy(h * B4[s], &k[s], 1.0);
        }
        let err = (0..x.len())
            .map(|i| {
                let sc = atol + rtol * x[i].abs().max(x5[i].abs());
                ((x5[i] - x4[i]) / sc).powi(2)
            })
            .sum::<f64>()
            / x.len() as f64;
        let err = err.sqrt();
        if err <= 1.0 {
            t += h;
            x = x5;
        }
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= fac;
    }
    x
}

/// `dx/dt = a x + b u` with `u` held constant.
pub fn lti_flow(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    u: &DVector<f64>,
    x0: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let bu = b * u;
    dopri45(|_, x| a * x + &bu, 0.0, x0, dt, 1e-13, 1e-16)
}

// Rank via modified Gram-Schmidt with a second orthogonalization pass.

pub fn gram_schmidt_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0;
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut cols: Vec<DVector<f64>> = m.column_iter().map(|c| c.into_owned()).collect();
    // Greedy: always take the remaining column with the largest residual norm.
    loop {
        let (best, norm) = cols.iter().enumerate().map(|(i, c)| (i, c.norm())).fold(
            (usize::MAX, 0.0),
            |acc, (i, n)| if n > acc.1 { (i, n) } else { acc },
        );
        if best == usize::MAX || norm <= rtol * scale {
            return basis.len();
        }
        let q = cols.swap_remove(best) / norm;
        for c in cols.iter_mut() {
            for _ in 0..2 {
                let d = q.dot(c);
                c.axpy(-d, &q, 1.0);
            }
        }
        basis.push(q);
    }
}

/// Characteristic polynomial coefficients of a square matrix by
/// Faddeev-LeVerrier, highest degree first (monic).
pub fn faddeev_leverrier(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    let id = DMatrix::<f64>::identity(n, n);
    let mut c = 1.0;
    for k in 1..=n {
        m = a * &m + &id * c;
        let am = a * &m;
        c = -am.trace() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

/// Monic polynomial with the given roots, highest degree first.
pub fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut p = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); p.len() + 1];
        for (i, &c) in p.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        p = next;
    }
    p.iter().map(|c| c.re).collect()
}

// Naive residual scan: re-simulate every scenario from the window's start
// estimate, then fit the unknown start estimation error by least squares.

fn response(
    d: &DiscreteLoop,
    s0: &DVector<f64>,
    probe: Option<&DMatrix<f64>>,
    len: usize,
    rows: &[usize],
) -> DVector<f64> {
    let mut s = s0.clone();
    let mut out = Vec::with_capacity(len * rows.len());
    for l in 0..len {
        let y = &d.c * &s;
        out.extend(rows.iter().map(|&ch| y[ch]));
        let mut input = DVector::zeros(d.p + d.r);
        if let Some(p) = probe {
            input.rows_mut(0, d.p).copy_from(&p.column(l));
        }
        s = &d.ad * &s + &d.bd * &input;
    }
    DVector::from_vec(out)
}

pub fn naive_scan(
    measured: &Trajectory,
    loops: &[DiscreteLoop],
    bank: &ResponseBank,
    mode: ResidualChannels,
    candidates: &[u32],
) -> (u32, f64) {
    let len = measured.len();
    let d0 = &loops[0];
    let probe = make_probe(&bank.probe, d0.p, bank.tau0, bank.t_s).unwrap();
    let xhat0 = measured.xhat0();
    let rows: Vec<usize> = (0..d0.outputs())
        .filter(|&ch| mode == ResidualChannels::All || ch < d0.r)
        .collect();
    let meas = DVector::from_iterator(
        len * rows.len(),
        (0..len).flat_map(|l| rows.iter().map(move |&ch| measured.yc[(ch, l)])),
    );
    let mut best = (0u32, f64::INFINITY);
    for &alpha in candidates {
        let d = &loops[alpha as usize - 1];
        let mut s = DVector::zeros(2 * d.n);
        s.rows_mut(0, d.n).copy_from(&xhat0);
        let resid = &meas - response(d, &s, Some(&probe), len, &rows);
        let mut m = DMatrix::zeros(resid.len(), d.n);
        for j in 0..d.n {
            let mut e = DVector::zeros(2 * d.n);
            // Unknown x_tilde with x_hat pinned: x moves with it.
            e[j] = 1.0;
            e[d.n + j] = 1.0;
            m.set_column(j, &response(d, &e, None, len, &rows));
        }
        // One refinement pass; the unit-error responses are poorly conditioned.
        let svd = m.clone().svd(true, true);
        let mut r = resid.clone();
        for _ in 0..2 {
            let fit = svd.solve(&r, 1e-10 * m.norm()).unwrap();
            r -= &m * fit;
        }
        let sse = r.norm_squared();
        if sse < best.1 {
            best = (alpha, sse);
        }
    }
    best
}

// Raw swing-plus-network equations, solved without any reduction.

pub struct RawGrid {
    /// Bus susceptance Laplacian over all buses (slack included).
    pub lap: DMatrix<f64>,
    pub slack: usize,
    /// `(bus index, inertia, damping)`.
    pub gens: Vec<(usize, f64, f64)>,
    pub pmus: Vec<usize>,
}

impl RawGrid {
    pub fn from(grid: &shs_sentinel::grid_model::GridNetwork, skip_line: Option<&str>) -> Self {
        let idx = |b: u32| grid.buses.iter().position(|&x| x == b).unwrap();
        let nb = grid.buses.len();
        let mut lap = DMatrix::zeros(nb, nb);
        for l in &grid.lines {
            if Some(l.id.as_str()) == skip_line {
                continue;
            }
            let (i, j, s) = (idx(l.from), idx(l.to), 1.0 / l.reactance);
            lap[(i, i)] += s;
            lap[(j, j)] += s;
            lap[(i, j)] -= s;
            lap[(j, i)] -= s;
        }
        let slack = idx(grid.slack_bus);
        let gens = grid
            .generators
            .iter()
            .filter(|g| g.bus != grid.slack_bus)
            .map(|g| (idx(g.bus), g.inertia, g.damping))
            .collect();
        let pmus = grid.pmus.iter().map(|p| idx(p.bus)).collect();
        RawGrid {
            lap,
            slack,
            gens,
            pmus,
        }
    }

    /// All bus angles given generator angles: slack at zero, passive buses
    /// from zero net injection.
    pub fn bus_angles(&self, delta: &[f64]) -> DVector<f64> {
        let nb = self.lap.nrows();
        let gen_bus: Vec<usize> = self.gens.iter().map(|g| g.0).collect();
        let free: Vec<usize> = (0..nb)
            .filter(|b| *b != self.slack && !gen_bus.contains(b))
            .collect();
        let mut theta = DVector::zeros(nb);
        for (g, &d) in gen_bus.iter().zip(delta) {
            theta[*g] = d;
        }
        if !free.is_empty() {
            let k = free.len();
            let mut m = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (a, &i) in free.iter().enumerate() {
                for (b, &j) in free.iter().enumerate() {
                    m[(a, b)] = self.lap[(i, j)];
                }
                for &g in &gen_bus {
                    rhs[a] -= self.lap[(i, g)] * theta[g];
                }
            }
            let sol = m.lu().solve(&rhs).expect("passive block solvable");
            for (a, &i) in free.iter().enumerate() {
                theta[i] = sol[a];
            }
        }
        theta
    }

    /// Right-hand side for states interleaved as `[delta_1, omega_1, ...]`.
    pub fn rhs(&self, x: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        let ng = self.gens.len();
        let delta: Vec<f64> = (0..ng).map(|i| x[2 * i]).collect();
        let theta = self.bus_angles(&delta);
        let p_out = &self.lap * &theta;
        let mut dx = DVector::zeros(2 * ng);
        for (i, &(bus, m, b)) in self.gens.iter().enumerate() {
            let w = x[2 * i + 1];
            dx[2 * i] = w;
            dx[2 * i + 1] = (-b * w + u[i] - p_out[bus]) / m;
        }
        dx
    }

    pub fn pmu_angles(&self, x: &DVector<f64>) -> DVector<f64> {
        let delta: Vec<f64> = (0..self.gens.len()).map(|i| x[2 * i]).collect();
        let theta = self.bus_angles(&delta);
        DVector::from_iterator(self.pmus.len(), self.pmus.iter().map(|&b| theta[b]))
    }
}

/// Classic fourth-order Runge-Kutta step.
pub fn rk4_step<F: Fn(&DVector<f64>) -> DVector<f64>>(
    f: &F,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (h / 2.0)));
    let k3 = f(&(x + &k2 * (h / 2.0)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

pub fn rel_close(a: f64, b: f64, rtol: f64, floor: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()).max(floor)
}
