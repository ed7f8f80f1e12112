//! Ledger emission and the per-run report.

use std::fmt::Write as _;
use std::path::Path;

use fracstep_core::diagnostics::EnergyLedgerRow;
use fracstep_core::materials::ValidationReport;
use fracstep_core::stepper::{Problem, State, Trajectory};
use fracstep_core::SolverError;

/// Budget factors for the two per-step energy residuals.
pub const INEQUALITY_BUDGET: f64 = 1e-8;
pub const BALANCE_BUDGET: f64 = 1e-6;

pub fn write_ledger(path: &Path, rows: &[EnergyLedgerRow]) -> std::io::Result<()> {
    let mut text = String::with_capacity(rows.len() * 64 + 64);
    text.push_str(EnergyLedgerRow::CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.csv_row());
        text.push('\n');
    }
    std::fs::write(path, text)
}

pub fn read_ledger(path: &Path) -> Result<Vec<EnergyLedgerRow>, SolverError> {
    let bad = |msg: String| SolverError::invalid(msg);
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| bad("ledger is empty".into()))?;
    if head.trim() != EnergyLedgerRow::CSV_HEADER {
        return Err(bad(format!("unexpected ledger header {head:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("ledger row {i}: bad number {s:?}")))
            })
            .collect::<Result<_, _>>()?;
        if v.len() != 13 {
            return Err(bad(format!("ledger row {i}: expected 13 columns, got {}", v.len())));
        }
        rows.push(EnergyLedgerRow {
            t: v[0],
            e_mc: v[1],
            e_therm: v[2],
            e_tot: v[3],
            diss_visc: v[4],
            diss_phase: v[5],
            diss_damage: v[6],
            diss_diffusive: v[7],
            work_mech: v[8],
            work_chem: v[9],
            work_therm: v[10],
            inequality_residual: v[11],
            total_balance_residual: v[12],
        });
    }
    Ok(rows)
}

/// Per-row tolerance scales, replicating the strict-run recursion:
/// scale_k = max(1, |E_MC(initial)|, Σ_{j≤k} τ·(|work_mech| + |work_chem| + |work_therm|)).
pub fn ledger_scales(e_mc_initial: f64, tau: f64, rows: &[EnergyLedgerRow]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len());
    let mut work_abs = 0.0f64;
    for r in rows {
        work_abs += tau * (r.work_mech.abs() + r.work_chem.abs() + r.work_therm.abs());
        out.push(1.0f64.max(e_mc_initial.abs()).max(work_abs));
    }
    out
}

/// One named verification with a human-readable witness.
pub struct SummaryLine {
    pub name: &'static str,
    pub pass: bool,
    pub witness: String,
}

impl SummaryLine {
    pub fn render(&self) -> String {
        format!(
            "{} {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.witness
        )
    }
}

pub struct InvariantSummary {
    pub lines: Vec<SummaryLine>,
}

impl InvariantSummary {
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

/// Worst-case ratio of a residual against its per-row budget.
fn worst_ratio(rows: &[EnergyLedgerRow], scales: &[f64], budget: f64, balance: bool) -> (f64, f64) {
    let mut worst = f64::NEG_INFINITY;
    let mut at = 0.0;
    for (r, s) in rows.iter().zip(scales) {
        let v = if balance {
            r.total_balance_residual.abs()
        } else {
            r.inequality_residual
        };
        let ratio = v / (budget * s);
        if ratio > worst {
            worst = ratio;
            at = r.t;
        }
    }
    (worst, at)
}

/// Box/positivity and damage-monotonicity checks over a sequence of states.
pub fn state_checks(pb: &Problem, states: &[&State]) -> Vec<SummaryLine> {
    let (chi_lo, chi_hi) = pb.model.chi_box();
    let np = pb.model.n_phase();
    let mut min_theta = f64::INFINITY;
    let mut box_witness: Option<String> = None;
    let mut mono_witness: Option<String> = None;
    for (si, s) in states.iter().enumerate() {
        for i in 0..s.theta.n_nodes() {
            min_theta = min_theta.min(s.theta.get(i, 0));
            let d = s.d.get(i, 0);
            if !(0.0..=1.0).contains(&d) && box_witness.is_none() {
                box_witness = Some(format!("d = {d} at node {i}, t = {}", s.t));
            }
            for j in 0..np {
                let x = s.chi.get(i, j);
                if (x < chi_lo[j] || x > chi_hi[j]) && box_witness.is_none() {
                    box_witness = Some(format!("chi_{j} = {x} at node {i}, t = {}", s.t));
                }
            }
            if si > 0 {
                let before = states[si - 1].d.get(i, 0);
                if s.d.get(i, 0) > before && mono_witness.is_none() {
                    mono_witness = Some(format!(
                        "d rose {} -> {} at node {i}, t = {}",
                        before,
                        s.d.get(i, 0),
                        s.t
                    ));
                }
            }
        }
    }
    if min_theta < -1e-12 && box_witness.is_none() {
        box_witness = Some(format!("min theta = {min_theta:.3e}"));
    }
    vec![
        line(
            "positivity and box constraints",
            box_witness.is_none() && min_theta >= -1e-12,
            box_witness.unwrap_or(format!("min theta = {min_theta:.3e}")),
        ),
        line(
            "damage monotonicity",
            mono_witness.is_none(),
            mono_witness.unwrap_or_else(|| "nonincreasing at every node".to_string()),
        ),
    ]
}

/// Ledger-level residual checks against the strict budgets.
pub fn ledger_checks(e_mc_initial: f64, tau: f64, rows: &[EnergyLedgerRow]) -> Vec<SummaryLine> {
    let scales = ledger_scales(e_mc_initial, tau, rows);
    let (r_ineq, t_ineq) = worst_ratio(rows, &scales, INEQUALITY_BUDGET, false);
    let (r_bal, t_bal) = worst_ratio(rows, &scales, BALANCE_BUDGET, true);
    let min_damage_heat = rows
        .iter()
        .map(|r| r.diss_damage)
        .fold(f64::INFINITY, f64::min);
    vec![
        line(
            "energy inequality",
            r_ineq <= 1.0,
            format!("worst residual/budget = {r_ineq:.3e} at t = {t_ineq} (budget 1e-8·scale)"),
        ),
        line(
            "total energy balance",
            r_bal <= 1.0,
            format!("worst |residual|/budget = {r_bal:.3e} at t = {t_bal} (budget 1e-6·scale)"),
        ),
        line(
            "damage heat sign",
            min_damage_heat >= -1e-15,
            format!("min per-step damage dissipation = {min_damage_heat:.3e}"),
        ),
    ]
}

/// Full post-run summary: ledger residuals, state constraints, initial
/// semi-stability.
pub fn summarize(pb: &Problem, traj: &Trajectory, e_mc_initial: f64) -> InvariantSummary {
    let mut lines = ledger_checks(e_mc_initial, pb.params.tau, &traj.ledger);
    let states: Vec<&State> = traj.states.iter().collect();
    lines.extend(state_checks(pb, &states));
    lines.push(line(
        "initial damage semi-stability",
        traj.initial_semistability.pass,
        traj.initial_semistability.witness.clone(),
    ));
    InvariantSummary { lines }
}

/// Render the run report written next to the ledger and snapshots.
pub fn run_report(
    pb: &Problem,
    traj: &Trajectory,
    model_report: &ValidationReport,
    summary: &InvariantSummary,
    wall_seconds: f64,
) -> String {
    let mut out = String::new();
    let p = &pb.params;
    let _ = writeln!(out, "fracstep run report");
    let _ = writeln!(out, "===================");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "mesh: {}-d, {} cells, {} nodes",
        pb.mesh.dim(),
        pb.mesh.n_cells(),
        pb.mesh.n_nodes()
    );
    let _ = writeln!(out, "model: {}", pb.model.name());
    let _ = writeln!(
        out,
        "scheme: tau = {}, t_end = {}, steps = {}, strict = {}, quasistatic = {}",
        p.tau,
        p.t_end,
        traj.ledger.len(),
        p.strict,
        p.quasistatic
    );
    let _ = writeln!(
        out,
        "tau_admissible = {} (tau/tau_admissible = {:.3e})",
        traj.tau_admissible,
        p.tau / traj.tau_admissible
    );
    let _ = writeln!(out, "wall time: {wall_seconds:.2} s");
    let _ = writeln!(out);
    let _ = writeln!(out, "model validation (sampled):");
    for e in &model_report.entries {
        let _ = writeln!(
            out,
            "  {} {}: {}",
            if e.passed { "PASS" } else { "FAIL" },
            e.name,
            e.detail
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "run invariants:");
    for l in &summary.lines {
        let _ = writeln!(out, "  {}", l.render());
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "result: {}",
        if summary.ok() && model_report.passed() {
            "PASS"
        } else {
            "FAIL"
        }
    );
    out
}
