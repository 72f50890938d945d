mod common;

use common::{gram_schmidt_rank, rk4_step, RawGrid, TOY_GRID, TWO_BUS};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use shs_sentinel::grid_model::{
    build_small_signal_model, check_feasibility, load_grid, GridNetwork, StateSpaceModel, Topology,
};
use shs_sentinel::linalg::{zoh, RANK_RTOL};
use shs_sentinel::Error;

#[test]
fn bundled_grid_shape() {
    let g = GridNetwork::ieee33();
    assert_eq!(g.buses.len(), 33);
    assert_eq!(g.slack_bus, 1);
    let dynamic: Vec<_> = g.dynamic_generators().collect();
    assert_eq!(dynamic.len(), 4);
    assert!(dynamic.iter().all(|gen| gen.capacity_mw == 0.2));
    let pmu_buses: Vec<u32> = g.pmus.iter().map(|p| p.bus).collect();
    assert_eq!(pmu_buses, vec![18, 22]);
}

#[test]
fn load_grid_from_disk_matches_bundled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ieee33.grid");
    std::fs::write(&path, shs_sentinel::grid_model::IEEE33_GRID).unwrap();
    assert_eq!(load_grid(&path).unwrap(), GridNetwork::ieee33());
    assert!(matches!(
        load_grid(dir.path().join("missing.grid")),
        Err(Error::Io(_))
    ));
}

#[test]
fn nominal_dimensions() {
    let g = GridNetwork::ieee33();
    let m = build_small_signal_model(&g, &g.all_lines()).unwrap();
    assert_eq!(m.a.shape(), (8, 8));
    assert_eq!(m.b.shape(), (8, 4));
    assert_eq!(m.c.shape(), (2, 8));
    assert_eq!(m.state_labels.len(), 8);
    assert_eq!(m.input_labels.len(), 4);
    assert_eq!(m.output_labels.len(), 2);
}

#[test]
fn nominal_is_not_unstable() {
    let g = GridNetwork::ieee33();
    let m = build_small_signal_model(&g, &g.all_lines()).unwrap();
    let abscissa =
        m.a.complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::MIN, f64::max);
    assert!(abscissa <= 1e-12, "{abscissa}");
}

#[test]
fn two_bus_gives_two_states() {
    let g = GridNetwork::parse(TWO_BUS).unwrap();
    let m = build_small_signal_model(&g, &g.all_lines()).unwrap();
    assert_eq!(m.n(), 2);
    // One line of reactance 0.1 to the infinite bus: coupling 10.
    let expect = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -10.0 / 0.5, -0.2 / 0.5]);
    assert!((&m.a - expect).amax() < 1e-12);
    assert_eq!(m.b.as_slice(), &[0.0, 2.0]);
    assert_eq!(m.c.as_slice(), &[1.0, 0.0]);
}

#[test]
fn zero_inertia_is_a_validation_error() {
    let text = TWO_BUS.replace("G1 2 0.5 0.2 1.0", "G1 2 0 0.2 1.0");
    let err = GridNetwork::parse(&text).unwrap_err();
    assert!(err.is_validation());
    assert!(
        err.to_string().contains("inertia must be positive"),
        "{err}"
    );
}

#[test]
fn nonpositive_damping_rejected() {
    let text = TWO_BUS.replace("G1 2 0.5 0.2 1.0", "G1 2 0.5 -0.1 1.0");
    let err = GridNetwork::parse(&text).unwrap_err();
    assert!(
        err.to_string().contains("damping must be positive"),
        "{err}"
    );
}

#[test]
fn parse_error_reports_line_and_field() {
    let text = TWO_BUS.replace("L1 1 2 0.01 0.1", "L1 1 2 0.01 abc");
    match GridNetwork::parse(&text).unwrap_err() {
        Error::Parse { line, field, .. } => {
            assert_eq!(line, 5);
            assert!(!field.is_empty());
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn disconnected_grid_rejected() {
    let text = "[buses]\n1\n2\n3\n[lines]\nL1 1 2 0.01 0.1\n[generators]\nG1 3 0.5 0.2 1.0\n[pmus]\nP1 2 angle\n[slack]\n1\n";
    assert!(GridNetwork::parse(text).is_err());
}

#[test]
fn isolated_generator_has_no_coupling() {
    // Generator 3 only reaches the slack through line L2; dropping it isolates the bus.
    let g = GridNetwork::parse(
        "[buses]\n1\n2\n3\n[lines]\nL1 1 2 0.01 0.1\nL2 2 3 0.01 0.1\n[generators]\nG1 2 0.5 0.2 1.0\nG2 3 0.4 0.3 1.0\n[pmus]\nP1 2 angle\n[slack]\n1\n",
    )
    .unwrap();
    let mut topo = g.all_lines();
    topo.remove("L2");
    match build_small_signal_model(&g, &topo) {
        Err(Error::DisconnectedTopology { component }) => assert_eq!(component, vec![3]),
        other => panic!("expected disconnection, got {other:?}"),
    }
    // The same swing block with zero coupling.
    let m =
        StateSpaceModel::from_swing(&[0.4], &[0.3], &DMatrix::zeros(1, 1), &DMatrix::zeros(0, 1))
            .unwrap();
    assert_eq!(m.a.as_slice(), &[0.0, 0.0, 1.0, -0.3 / 0.4]);
}

#[test]
fn unknown_topology_line_rejected() {
    let g = GridNetwork::parse(TWO_BUS).unwrap();
    let topo: Topology = ["L9".to_string()].into();
    assert!(build_small_signal_model(&g, &topo)
        .unwrap_err()
        .is_validation());
}

/// The reduced model against the raw swing equations with a network solve
/// at every derivative evaluation.
#[test]
fn toy_grid_matches_raw_network_oracle() {
    let g = GridNetwork::parse(TOY_GRID).unwrap();
    let m = build_small_signal_model(&g, &g.all_lines()).unwrap();
    let raw = RawGrid::from(&g, None);
    let u = [0.3, -0.2];
    let mut x_raw = DVector::from_vec(vec![0.05, 0.0, -0.03, 0.1]);
    let mut x_lin = x_raw.clone();
    let h = 1e-4;
    let ud = DVector::from_row_slice(&u);
    let lin = |x: &DVector<f64>| &m.a * x + &m.b * &ud;
    let rawf = |x: &DVector<f64>| raw.rhs(x, &u);
    for step in 0..20_000 {
        x_raw = rk4_step(&rawf, &x_raw, h);
        x_lin = rk4_step(&lin, &x_lin, h);
        if step % 1000 == 999 {
            let scale = x_raw.amax().max(1.0);
            assert!((&x_raw - &x_lin).amax() <= 1e-8 * scale, "step {step}");
            let y_raw = raw.pmu_angles(&x_raw);
            let y_lin = &m.c * &x_lin;
            assert!((y_raw - y_lin).amax() <= 1e-8 * scale);
        }
    }
}

#[test]
fn line_outage_matches_raw_oracle() {
    let g = GridNetwork::parse(TOY_GRID).unwrap();
    let mut topo = g.all_lines();
    topo.remove("L4");
    let m = build_small_signal_model(&g, &topo).unwrap();
    let raw = RawGrid::from(&g, Some("L4"));
    let x = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05]);
    let d = &m.a * &x - raw.rhs(&x, &[0.0, 0.0]);
    assert!(d.amax() < 1e-12);
}

#[test]
fn feasibility_of_nominal_matches_independent_rank() {
    let g = GridNetwork::ieee33();
    let m = build_small_signal_model(&g, &g.all_lines()).unwrap();
    let r = check_feasibility(&m);
    assert_eq!(r.rank, gram_schmidt_rank(&m.a, RANK_RTOL));
    assert!(r.full_rank);
    assert_eq!(r.n, 8);
}

#[test]
fn feasibility_of_zero_matrix() {
    let mut m = build_small_signal_model(
        &GridNetwork::parse(TWO_BUS).unwrap(),
        &["L1".to_string()].into(),
    )
    .unwrap();
    m.a = DMatrix::zeros(2, 2);
    let r = check_feasibility(&m);
    assert_eq!((r.rank, r.full_rank), (0, false));
}

#[test]
fn duplicated_row_drops_rank_by_one() {
    let g = GridNetwork::ieee33();
    let mut m = build_small_signal_model(&g, &g.all_lines()).unwrap();
    let row = m.a.row(3).into_owned();
    m.a.set_row(5, &row);
    let r = check_feasibility(&m);
    assert_eq!(r.rank, 7);
    assert_eq!(gram_schmidt_rank(&m.a, RANK_RTOL), 7);
    assert!(!r.full_rank);
}

#[test]
fn text_roundtrip_of_bundled_grid() {
    let g = GridNetwork::ieee33();
    assert_eq!(GridNetwork::parse(&g.to_grid_text()).unwrap(), g);
}

fn inertias(g: &GridNetwork) -> Vec<f64> {
    g.dynamic_generators().map(|x| x.inertia).collect()
}

/// `0.5 sum M w^2 + 0.5 delta' K delta`, with `K` read back out of `A`.
fn total_energy(m: &StateSpaceModel, inertia: &[f64], x: &DVector<f64>) -> f64 {
    let g = inertia.len();
    let mut e = 0.0;
    for i in 0..g {
        e += 0.5 * inertia[i] * x[2 * i + 1].powi(2);
        for j in 0..g {
            let kij = -m.a[(2 * i + 1, 2 * j)] * inertia[i];
            e += 0.5 * x[2 * i] * kij * x[2 * j];
        }
    }
    e
}

fn connected_topologies() -> impl Strategy<Value = Topology> {
    let g = GridNetwork::ieee33();
    let n = g.lines.len();
    proptest::collection::btree_set(0..n, 0..12).prop_filter_map("disconnected", move |drop| {
        let g = GridNetwork::ieee33();
        let topo: Topology = g
            .lines
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, l)| l.id.clone())
            .collect();
        build_small_signal_model(&g, &topo).ok().map(|_| topo)
    })
}

fn drop_some_lines() -> impl Strategy<Value = Topology> {
    let g = GridNetwork::ieee33();
    let n = g.lines.len();
    proptest::collection::btree_set(0..n, 1..4).prop_map(move |drop| {
        let g = GridNetwork::ieee33();
        g.lines
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, l)| l.id.clone())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn energy_never_increases(topo in drop_some_lines(), x0 in proptest::collection::vec(-0.2f64..0.2, 8)) {
        let g = GridNetwork::ieee33();
        let Ok(m) = build_small_signal_model(&g, &topo) else { return Ok(()) };
        let inertia = inertias(&g);
        let (ad, _) = zoh(&m.a, &m.b, 1e-3);
        let mut x = DVector::from_vec(x0);
        let mut e = total_energy(&m, &inertia, &x);
        let scale = e.abs().max(1e-12);
        for _ in 0..10_000 {
            x = &ad * &x;
            let next = total_energy(&m, &inertia, &x);
            prop_assert!(next <= e + 1e-12 * scale, "energy rose from {e} to {next}");
            e = next;
        }
    }

    #[test]
    fn coupling_symmetric_under_inertia_scaling(topo in drop_some_lines()) {
        let g = GridNetwork::ieee33();
        let Ok(m) = build_small_signal_model(&g, &topo) else { return Ok(()) };
        let inertia = inertias(&g);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let lhs = inertia[i] * m.a[(2 * i + 1, 2 * j)];
                    let rhs = inertia[j] * m.a[(2 * j + 1, 2 * i)];
                    prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn outages_keep_b_and_c_patterns(topo in drop_some_lines()) {
        let g = GridNetwork::ieee33();
        let nominal = build_small_signal_model(&g, &g.all_lines()).unwrap();
        let Ok(m) = build_small_signal_model(&g, &topo) else { return Ok(()) };
        prop_assert_eq!(&m.b, &nominal.b);
        // A cut can separate a sensor bus from some generators except through
        // the slack, zeroing entries, but never creates new ones.
        for (a, b) in m.c.iter().zip(nominal.c.iter()) {
            prop_assert!(*a == 0.0 || *b != 0.0);
        }
    }

    #[test]
    fn build_is_deterministic(topo in connected_topologies()) {
        let g = GridNetwork::ieee33();
        let a = build_small_signal_model(&g, &topo).unwrap();
        let b = build_small_signal_model(&g, &topo).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn connected_subsets_always_build(topo in connected_topologies()) {
        let g = GridNetwork::ieee33();
        let m = build_small_signal_model(&g, &topo).unwrap();
        prop_assert!(m.a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn parser_never_panics(text in "\\PC{0,200}") {
        let _ = GridNetwork::parse(&text);
    }
}
