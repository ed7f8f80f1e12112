//! Shared unit-test fixtures: the baseline material, small interval problems,
//! uniform or linear-in-x states, and bitwise/approximate field comparators.

use std::collections::BTreeMap;

use crate::geometry::{Mesh, NodalField};
use crate::materials::{HydrideModel, MaterialModel};
use crate::stepper::{BoundaryData, Problem, SchemeParams, State};

pub(crate) fn params(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Hydride model with the unit-test baseline (c_v = 2) plus overrides.
pub(crate) fn hydride(dim: usize, entries: &[(&str, f64)]) -> Box<dyn MaterialModel> {
    let mut map = params(&[("c_v", 2.0)]);
    map.extend(params(entries));
    Box::new(HydrideModel::from_params(dim, &map).expect("valid test parameters"))
}

pub(crate) fn interval_problem(
    n_cells: usize,
    model: Box<dyn MaterialModel>,
    bc: BoundaryData,
    sp: SchemeParams,
) -> Problem {
    Problem::new(Mesh::interval(n_cells, 1.0).unwrap(), model, bc, sp).unwrap()
}

/// Uniform initial state with zero displacement and velocity.
pub(crate) fn uniform_state(pb: &Problem, chi: f64, c: f64, d: f64, theta: f64) -> State {
    let n = pb.mesh.n_nodes();
    State::initialize(
        &pb.mesh,
        pb.model.as_ref(),
        NodalField::zeros(n, pb.mesh.dim()),
        NodalField::zeros(n, pb.mesh.dim()),
        NodalField::constant(n, &vec![chi; pb.n_phase()]),
        NodalField::constant(n, &[c]),
        NodalField::constant(n, &[d]),
        NodalField::constant(n, &[theta]),
    )
    .unwrap()
}

/// Scalar nodal field `slope · x` on a 1D problem.
pub(crate) fn linear_x(pb: &Problem, slope: f64) -> NodalField {
    let vals: Vec<f64> = (0..pb.mesh.n_nodes())
        .map(|i| slope * pb.mesh.node_coord(i)[0])
        .collect();
    NodalField::from_values(1, vals).unwrap()
}

/// u^{k−2} for the first step (the starting rule u⁰ − τ·v⁰).
pub(crate) fn prev2_start(pb: &Problem, s: &State) -> NodalField {
    let mut f = s.u.clone();
    for (ui, vi) in f.values_mut().iter_mut().zip(s.v.values()) {
        *ui -= pb.params.tau * vi;
    }
    f
}

pub(crate) fn assert_field_eq(a: &NodalField, b: &NodalField) {
    assert_eq!(a.components(), b.components());
    assert_eq!(a.values(), b.values());
}

pub(crate) fn assert_field_close(a: &NodalField, b: &NodalField, tol: f64) {
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() <= tol, "field mismatch: {x} vs {y}");
    }
}

pub(crate) fn assert_uniform(f: &NodalField, value: f64, tol: f64) {
    for &x in f.values() {
        assert!((x - value).abs() <= tol, "expected {value}, got {x}");
    }
}
