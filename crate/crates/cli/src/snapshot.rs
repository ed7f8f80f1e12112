//! Versioned columnar snapshots of a solver state.
//!
//! Layout:
//! ```text
//! fracstep-snapshot 1 t 2.5000000000000000e-1
//! x u_0 v_0 chi_0 c mu d w theta sigma_r_0
//! 0.0000000000000000e0 ...                     (one row per node)
//! ```
//! The first line carries the format version and the snapshot time; the
//! second names the node coordinates and every field component; every number
//! uses 17 significant digits so a write/read round trip is exact and diffs
//! are bit-reproducible.

use std::io::Write as _;
use std::path::Path;

use fracstep_core::materials::MaterialModel;
use fracstep_core::stepper::State;
use fracstep_core::{Mesh, NodalField, SolverError};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "fracstep-snapshot";

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Column names after the node coordinates, in row order.
fn field_columns(dim: usize, np: usize) -> Vec<String> {
    let mut cols = Vec::new();
    let vec_cols = |name: &str, comps: usize, cols: &mut Vec<String>| {
        for j in 0..comps {
            cols.push(format!("{name}_{j}"));
        }
    };
    vec_cols("u", dim, &mut cols);
    vec_cols("v", dim, &mut cols);
    vec_cols("chi", np, &mut cols);
    cols.push("c".to_string());
    cols.push("mu".to_string());
    cols.push("d".to_string());
    cols.push("w".to_string());
    cols.push("theta".to_string());
    vec_cols("sigma_r", np, &mut cols);
    cols
}

fn header(dim: usize, np: usize) -> String {
    let mut cols: Vec<String> = if dim == 1 {
        vec!["x".to_string()]
    } else {
        vec!["x".to_string(), "y".to_string()]
    };
    cols.extend(field_columns(dim, np));
    cols.join(" ")
}

/// Render a state as snapshot text.
pub fn render(mesh: &Mesh, state: &State) -> String {
    let dim = mesh.dim();
    let np = state.chi.components();
    let n = mesh.n_nodes();
    let mut out = String::new();
    out.push_str(&format!("{MAGIC} {FORMAT_VERSION} t {}\n", num(state.t)));
    out.push_str(&header(dim, np));
    out.push('\n');
    let fields: [(&NodalField, usize); 9] = [
        (&state.u, dim),
        (&state.v, dim),
        (&state.chi, np),
        (&state.c, 1),
        (&state.mu, 1),
        (&state.d, 1),
        (&state.w, 1),
        (&state.theta, 1),
        (&state.sigma_r, np),
    ];
    for i in 0..n {
        let xy = mesh.node_coord(i);
        let mut row: Vec<String> = (0..dim).map(|k| num(xy[k])).collect();
        for (field, comps) in &fields {
            for j in 0..*comps {
                row.push(num(field.get(i, j)));
            }
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write(path: &Path, mesh: &Mesh, state: &State) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(render(mesh, state).as_bytes())
}

fn bad(msg: impl Into<String>) -> SolverError {
    SolverError::invalid(msg)
}

/// Parse snapshot text back into a state on the given mesh/model pair.
/// Derived quantities are recomputed; stored fields round-trip bitwise.
pub fn parse(text: &str, mesh: &Mesh, model: &dyn MaterialModel) -> Result<State, SolverError> {
    let dim = mesh.dim();
    let np = model.n_phase();
    let n = mesh.n_nodes();
    let mut lines = text.lines();

    let first = lines.next().ok_or_else(|| bad("snapshot is empty"))?;
    let parts: Vec<&str> = first.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != MAGIC || parts[2] != "t" {
        return Err(bad(format!(
            "bad snapshot header line {first:?}; expected \"{MAGIC} <version> t <time>\""
        )));
    }
    let version: u32 = parts[1]
        .parse()
        .map_err(|_| bad(format!("bad snapshot version {:?}", parts[1])))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "snapshot format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let t: f64 = parts[3]
        .parse()
        .map_err(|_| bad(format!("bad snapshot time {:?}", parts[3])))?;

    let head = lines.next().ok_or_else(|| bad("snapshot has no header row"))?;
    let expected = header(dim, np);
    if head.trim() != expected {
        return Err(bad(format!(
            "snapshot columns {head:?} do not match the mesh/model layout {expected:?}"
        )));
    }

    let n_cols = expected.split_whitespace().count();
    let comps = [dim, dim, np, 1, 1, 1, 1, 1, np];
    let mut fields: Vec<NodalField> =
        comps.iter().map(|&c| NodalField::zeros(n, c)).collect();
    let mut rows = 0usize;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i >= n {
            return Err(bad(format!("snapshot has more than {n} node rows")));
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("node row {i}: bad number {s:?}")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != n_cols {
            return Err(bad(format!(
                "node row {i}: expected {n_cols} columns, got {}",
                values.len()
            )));
        }
        let xy = mesh.node_coord(i);
        for k in 0..dim {
            if (values[k] - xy[k]).abs() > 1e-12 * (1.0 + xy[k].abs()) {
                return Err(bad(format!(
                    "node row {i}: coordinate {} does not match the mesh ({})",
                    values[k], xy[k]
                )));
            }
        }
        let mut col = dim;
        for (field, &c) in fields.iter_mut().zip(&comps) {
            for j in 0..c {
                field.set(i, j, values[col]);
                col += 1;
            }
        }
        rows += 1;
    }
    if rows != n {
        return Err(bad(format!("snapshot has {rows} node rows, expected {n}")));
    }

    let mut it = fields.into_iter();
    let (u, v, chi, c, mu, d, w, theta, sigma_r) = (
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    );
    State::from_fields(mesh, model, t, u, v, chi, c, mu, d, w, theta, sigma_r)
}

pub fn read(path: &Path, mesh: &Mesh, model: &dyn MaterialModel) -> Result<State, SolverError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, mesh, model)
}

/// Snapshot file name for the state after `step` steps.
pub fn file_name(step: usize) -> String {
    format!("snapshot_{step:06}.txt")
}

/// Recover the step index from a snapshot file name.
pub fn step_of(name: &str) -> Option<usize> {
    name.strip_prefix("snapshot_")?
        .strip_suffix(".txt")?
        .parse()
        .ok()
}
