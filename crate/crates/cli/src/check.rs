//! Offline re-verification of a written run directory.
//!
//! `check <dir>` rebuilds the problem from the emitted `config.toml`,
//! re-ingests every snapshot, recomputes the energies against `ledger.csv`,
//! and replays the structural invariants (residual budgets, positivity and
//! box constraints, damage monotonicity, damage semi-stability).

use std::collections::BTreeSet;
use std::path::Path;

use fracstep_core::diagnostics;
use fracstep_core::geometry::NodalField;
use fracstep_core::stepper::State;
use fracstep_core::SolverError;

use crate::config;
use crate::report::{self, SummaryLine};
use crate::snapshot;

pub struct CheckOutcome {
    pub lines: Vec<SummaryLine>,
}

impl CheckOutcome {
    pub fn ok(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }
}

fn line(name: &'static str, pass: bool, witness: String) -> SummaryLine {
    SummaryLine {
        name,
        pass,
        witness,
    }
}

fn fields_equal(a: &NodalField, b: &NodalField) -> bool {
    a.values() == b.values()
}

/// Indices the runner is expected to have written: 0, every `keep_every`-th
/// step, and the final step.
fn expected_indices(n_steps: usize, keep_every: usize) -> BTreeSet<usize> {
    let mut set = BTreeSet::new();
    set.insert(0);
    for k in 1..=n_steps {
        if k % keep_every == 0 || k == n_steps {
            set.insert(k);
        }
    }
    set
}

pub fn check_dir(dir: &Path, semistability_trials: usize) -> Result<CheckOutcome, SolverError> {
    let io = |what: &str, e: std::io::Error| {
        SolverError::invalid(format!("cannot read {what} in {}: {e}", dir.display()))
    };

    // Rebuild the problem from the resolved configuration the run emitted.
    let cfg = config::load(&dir.join("config.toml"))
        .map_err(|e| SolverError::invalid(format!("config.toml: {e}")))?;
    let (pb, initial) = config::build(&cfg)?;
    let tau = pb.params.tau;
    let n_steps = (pb.params.t_end / tau).round() as usize;
    let keep_every = pb.params.keep_every.max(1);

    let mut lines = Vec::new();
    lines.push(line(
        "problem rebuild",
        true,
        format!(
            "model {}, {} nodes, {} steps of tau = {}",
            pb.model.name(),
            pb.mesh.n_nodes(),
            n_steps,
            tau
        ),
    ));

    // Ledger shape.
    let rows = report::read_ledger(&dir.join("ledger.csv"))?;
    lines.push(line(
        "ledger shape",
        rows.len() == n_steps,
        format!("{} rows for {} steps", rows.len(), n_steps),
    ));

    // Snapshot inventory.
    let mut found = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io("directory", e))? {
        let entry = entry.map_err(|e| io("directory entry", e))?;
        let name = entry.file_name();
        if let Some(step) = snapshot::step_of(&name.to_string_lossy()) {
            found.insert(step);
        }
    }
    let expected = expected_indices(n_steps, keep_every);
    lines.push(line(
        "snapshot coverage",
        found == expected,
        if found == expected {
            format!("{} snapshots at stride {}", found.len(), keep_every)
        } else {
            format!(
                "found {:?}, expected {:?}",
                found.iter().take(8).collect::<Vec<_>>(),
                expected.iter().take(8).collect::<Vec<_>>()
            )
        },
    ));

    // Re-ingest every snapshot.
    let mut states: Vec<(usize, State)> = Vec::with_capacity(found.len());
    for &k in &found {
        let s = snapshot::read(&dir.join(snapshot::file_name(k)), &pb.mesh, pb.model.as_ref())?;
        states.push((k, s));
    }

    // The t = 0 snapshot must reproduce the initial state exactly.
    if let Some((_, s0)) = states.iter().find(|(k, _)| *k == 0) {
        let same = s0.t == initial.t
            && fields_equal(&s0.u, &initial.u)
            && fields_equal(&s0.v, &initial.v)
            && fields_equal(&s0.chi, &initial.chi)
            && fields_equal(&s0.c, &initial.c)
            && fields_equal(&s0.mu, &initial.mu)
            && fields_equal(&s0.d, &initial.d)
            && fields_equal(&s0.w, &initial.w)
            && fields_equal(&s0.theta, &initial.theta)
            && fields_equal(&s0.sigma_r, &initial.sigma_r);
        lines.push(line(
            "initial snapshot",
            same,
            if same {
                "matches the configured initial state bit for bit".to_string()
            } else {
                "differs from the configured initial state".to_string()
            },
        ));
    } else {
        lines.push(line(
            "initial snapshot",
            false,
            "snapshot_000000.txt is missing".to_string(),
        ));
    }

    // Recompute energies for each kept state and compare with the ledger.
    let mut worst_energy = 0.0f64;
    let mut worst_t = 0.0f64;
    let mut energy_rows_checked = 0usize;
    for (k, s) in &states {
        if *k == 0 || *k > rows.len() {
            continue;
        }
        let row = &rows[*k - 1];
        let t_ok = (s.t - row.t).abs() <= 1e-9 * s.t.abs().max(1.0);
        if !t_ok {
            worst_energy = f64::INFINITY;
            worst_t = s.t;
            break;
        }
        let e_mc = diagnostics::mech_chem_energy(&pb, s)?;
        let e_tot = diagnostics::total_energy(&pb, s)?;
        for (have, want) in [(e_mc, row.e_mc), (e_tot, row.e_tot)] {
            let rel = (have - want).abs() / want.abs().max(1.0);
            if rel > worst_energy {
                worst_energy = rel;
                worst_t = s.t;
            }
        }
        energy_rows_checked += 1;
    }
    lines.push(line(
        "snapshot energies vs ledger",
        worst_energy <= 1e-12,
        format!(
            "{energy_rows_checked} states recomputed, worst relative difference {worst_energy:.3e} at t = {worst_t}"
        ),
    ));

    // Ledger residuals against the strict budgets. The scale recursion is
    // seeded with the recomputed initial energy.
    let e_mc_initial = diagnostics::mech_chem_energy(&pb, &initial)?;
    lines.extend(report::ledger_checks(e_mc_initial, tau, &rows));

    // State constraints across the kept states (ordered by step index).
    let refs: Vec<&State> = states.iter().map(|(_, s)| s).collect();
    lines.extend(report::state_checks(&pb, &refs));

    // Damage semi-stability at every kept state.
    if semistability_trials > 0 {
        let mut pass = true;
        let mut witness = String::from("no states");
        for (k, s) in &states {
            let rep = diagnostics::check_semistability(&pb, s, semistability_trials, 0xc4ec + *k as u64)?;
            if !rep.pass || witness == "no states" {
                witness = rep.witness.clone();
            }
            pass &= rep.pass;
            if !rep.pass {
                break;
            }
        }
        lines.push(line("damage semi-stability", pass, witness));
    }

    Ok(CheckOutcome { lines })
}
