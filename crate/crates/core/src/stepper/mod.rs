//! Time stepping: problem setup, state, and the four-step advance.
//!
//! Each step of the scheme minimizes (or solves) one subproblem with a fixed
//! mixture of current and previous-step arguments in the material callables.
//! That argument bookkeeping is the most error-prone part of the scheme, so
//! it is codified once in [`DELAYED_ARGS`] and consumed by the step modules;
//! a fixture test pins every entry.

use std::collections::BTreeMap;

use crate::error::{Result, SolverError};
use crate::geometry::{BoundaryRegion, Mesh, NodalField};
use crate::materials::{MaterialModel, StateSample};
use crate::minimizers::SolveOptions;
use crate::tensor::Sym2;
use crate::{assembly, diagnostics};

mod step1;
mod step2;
mod step3;
mod step4;

fn invalid(msg: impl Into<String>) -> SolverError {
    SolverError::invalid(msg)
}

pub(crate) use step1::Step1Out;
pub use step1::variational_inequality_margin;
pub(crate) use step2::{mobility_matrix, Step2Out};
pub(crate) use step4::{assemble_heat_sources, HeatSourceInput};

// ---------------------------------------------------------------------------
// Delayed-argument table
// ---------------------------------------------------------------------------

/// Which time level a coefficient argument is taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lag {
    /// Previous accepted step (k−1).
    Prev,
    /// Current step (k); for step 3's damage slot this is the unknown, for
    /// step 4's temperature slot the implicitly resolved value.
    Curr,
}

/// Time levels of the five state slots (E_e, χ, d, c, θ) a material callable
/// is evaluated with. Slots a callable ignores are listed as `Prev`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArgPattern {
    pub e: Lag,
    pub chi: Lag,
    pub d: Lag,
    pub c: Lag,
    pub theta: Lag,
}

const ALL_PREV: ArgPattern = ArgPattern {
    e: Lag::Prev,
    chi: Lag::Prev,
    d: Lag::Prev,
    c: Lag::Prev,
    theta: Lag::Prev,
};

/// One pattern per (step, coefficient) pair of the scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DelayedArgTable {
    /// Phase dissipation weights in the step-1 objective.
    pub zeta_step1: ArgPattern,
    /// Mechanical free energy in the step-1 objective (d delayed).
    pub phi_mech_step1: ArgPattern,
    /// Chemical free energy in the step-1 objective (c delayed).
    pub phi_chem_step1: ArgPattern,
    /// Adiabatic linear term in the step-1 objective (fully delayed).
    pub phi_term_step1: ArgPattern,
    /// Solute mobility in step 2.
    pub mobility_step2: ArgPattern,
    /// Mechanical free energy in step 3 (d is the unknown).
    pub phi_mech_step3: ArgPattern,
    /// Damage driving threshold in step 3.
    pub alpha_step3: ArgPattern,
    /// Phase dissipation weights in the step-4 heat source.
    pub zeta_step4: ArgPattern,
    /// Mobility in the regularized diffusive heat source (matches step 2).
    pub mobility_step4: ArgPattern,
    /// Adiabatic heat source (implicit in θ).
    pub phi_term_step4: ArgPattern,
    /// Heat conductivity in step 4 (all current).
    pub conductivity_step4: ArgPattern,
}

/// The scheme's argument bookkeeping, transcribed once.
pub const DELAYED_ARGS: DelayedArgTable = DelayedArgTable {
    zeta_step1: ALL_PREV,
    phi_mech_step1: ArgPattern {
        e: Lag::Curr,
        chi: Lag::Curr,
        ..ALL_PREV
    },
    phi_chem_step1: ArgPattern {
        chi: Lag::Curr,
        ..ALL_PREV
    },
    phi_term_step1: ALL_PREV,
    mobility_step2: ArgPattern {
        e: Lag::Curr,
        chi: Lag::Curr,
        ..ALL_PREV
    },
    phi_mech_step3: ArgPattern {
        e: Lag::Curr,
        chi: Lag::Curr,
        d: Lag::Curr,
        ..ALL_PREV
    },
    alpha_step3: ArgPattern {
        chi: Lag::Curr,
        ..ALL_PREV
    },
    zeta_step4: ALL_PREV,
    mobility_step4: ArgPattern {
        e: Lag::Curr,
        chi: Lag::Curr,
        ..ALL_PREV
    },
    phi_term_step4: ArgPattern {
        chi: Lag::Curr,
        theta: Lag::Curr,
        ..ALL_PREV
    },
    conductivity_step4: ArgPattern {
        e: Lag::Curr,
        chi: Lag::Curr,
        d: Lag::Curr,
        c: Lag::Curr,
        theta: Lag::Curr,
    },
};

// ---------------------------------------------------------------------------
// Boundary and bulk data
// ---------------------------------------------------------------------------

/// Scalar function of time: a constant or a piecewise-linear table
/// (clamped outside the table's time range).
#[derive(Clone, Debug, PartialEq)]
pub enum TimeFn {
    Const(f64),
    Table(Vec<(f64, f64)>),
}

impl TimeFn {
    pub fn zero() -> TimeFn {
        TimeFn::Const(0.0)
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            TimeFn::Const(v) => *v,
            TimeFn::Table(pts) => {
                if pts.is_empty() {
                    return 0.0;
                }
                if t <= pts[0].0 {
                    return pts[0].1;
                }
                let last = pts[pts.len() - 1];
                if t >= last.0 {
                    return last.1;
                }
                for w in pts.windows(2) {
                    let (t0, v0) = w[0];
                    let (t1, v1) = w[1];
                    if t <= t1 {
                        let s = (t - t0) / (t1 - t0);
                        return v0 + s * (v1 - v0);
                    }
                }
                last.1
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if let TimeFn::Table(pts) = self {
            if pts.is_empty() {
                return Err(invalid(format!("{name}: empty time table")));
            }
            for w in pts.windows(2) {
                if !(w[1].0 > w[0].0) {
                    return Err(invalid(format!(
                        "{name}: table times must increase strictly ({} then {})",
                        w[0].0, w[1].0
                    )));
                }
            }
            for (t, v) in pts {
                if !t.is_finite() || !v.is_finite() {
                    return Err(invalid(format!("{name}: non-finite table entry")));
                }
            }
        }
        Ok(())
    }

    fn min_value(&self) -> f64 {
        match self {
            TimeFn::Const(v) => *v,
            TimeFn::Table(pts) => pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Boundary data on one region: surface traction (one entry per displacement
/// component), solute influx, and heat influx.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionData {
    pub f_s: Vec<TimeFn>,
    pub h_s: TimeFn,
    pub q_s: TimeFn,
}

impl RegionData {
    pub fn zero(dim: usize) -> RegionData {
        RegionData {
            f_s: vec![TimeFn::zero(); dim],
            h_s: TimeFn::zero(),
            q_s: TimeFn::zero(),
        }
    }
}

/// All external data: bulk force density (constant in space per component)
/// and per-region boundary data. Regions without an entry carry zero data.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub f_bulk: Vec<TimeFn>,
    pub regions: BTreeMap<BoundaryRegion, RegionData>,
}

impl BoundaryData {
    pub fn zero(dim: usize) -> BoundaryData {
        BoundaryData {
            f_bulk: vec![TimeFn::zero(); dim],
            regions: BTreeMap::new(),
        }
    }

    /// Structural validation plus the data qualification the positivity and
    /// energy arguments rely on: h_s ≥ 0 and q_s ≥ 0.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.f_bulk.len() != dim {
            return Err(invalid(format!(
                "bulk force needs {dim} components, got {}",
                self.f_bulk.len()
            )));
        }
        for (i, f) in self.f_bulk.iter().enumerate() {
            f.validate(&format!("f[{i}]"))?;
        }
        for (region, data) in &self.regions {
            let name = region.name();
            if data.f_s.len() != dim {
                return Err(invalid(format!(
                    "{name}: traction needs {dim} components, got {}",
                    data.f_s.len()
                )));
            }
            for (i, f) in data.f_s.iter().enumerate() {
                f.validate(&format!("{name}.f_s[{i}]"))?;
            }
            data.h_s.validate(&format!("{name}.h_s"))?;
            data.q_s.validate(&format!("{name}.q_s"))?;
            if data.h_s.min_value() < 0.0 {
                return Err(invalid(format!("{name}.h_s must be nonnegative")));
            }
            if data.q_s.min_value() < 0.0 {
                return Err(invalid(format!("{name}.q_s must be nonnegative")));
            }
        }
        Ok(())
    }

    fn region(&self, r: BoundaryRegion) -> Option<&RegionData> {
        self.regions.get(&r)
    }
}

/// Assembled load vectors at one time level.
#[derive(Clone, Debug)]
pub(crate) struct LoadSet {
    /// Bulk force + traction, indexed by displacement dof.
    pub b_u: Vec<f64>,
    /// Solute boundary influx, indexed by scalar dof.
    pub b_h: Vec<f64>,
    /// Heat boundary influx, indexed by scalar dof.
    pub b_q: Vec<f64>,
}

/// Integrate constant-per-region boundary values against the P1 basis.
fn boundary_load(
    mesh: &Mesh,
    components: usize,
    value: &dyn Fn(BoundaryRegion, usize) -> f64,
) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_nodes() * components];
    for facet in mesh.boundary() {
        for comp in 0..components {
            let v = value(facet.region, comp);
            if v == 0.0 {
                continue;
            }
            match facet.node_count() {
                1 => b[facet.nodes[0] * components + comp] += v * facet.measure,
                _ => {
                    // Constant datum on a straight edge: half the edge
                    // length per endpoint.
                    for k in 0..2 {
                        b[facet.nodes[k] * components + comp] += 0.5 * v * facet.measure;
                    }
                }
            }
        }
    }
    b
}

pub(crate) fn assemble_loads(mesh: &Mesh, bc: &BoundaryData, t: f64) -> Result<LoadSet> {
    let dim = mesh.dim();
    let f_vals: Vec<f64> = bc.f_bulk.iter().map(|f| f.at(t)).collect();
    let f_field = NodalField::constant(mesh.n_nodes(), &f_vals);
    let mut b_u = assembly::assemble_bulk_load(mesh, &f_field)?;
    let traction = boundary_load(mesh, dim, &|r, comp| {
        bc.region(r).map_or(0.0, |d| d.f_s[comp].at(t))
    });
    for (bi, ti) in b_u.iter_mut().zip(&traction) {
        *bi += ti;
    }
    let b_h = boundary_load(mesh, 1, &|r, _| bc.region(r).map_or(0.0, |d| d.h_s.at(t)));
    let b_q = boundary_load(mesh, 1, &|r, _| bc.region(r).map_or(0.0, |d| d.q_s.at(t)));
    Ok(LoadSet { b_u, b_h, b_q })
}

// ---------------------------------------------------------------------------
// Scheme parameters and problem
// ---------------------------------------------------------------------------

/// Time-discretisation parameters and solver knobs.
#[derive(Clone, Debug)]
pub struct SchemeParams {
    pub tau: f64,
    pub t_end: f64,
    /// Drop inertia and viscosity (ρ = 0, 𝔻 = 0).
    pub quasistatic: bool,
    /// Displacement dofs (node·dim + comp) held at their previous value;
    /// since pinned dofs never move they stay at their initial values.
    pub pin_dofs: Vec<usize>,
    /// Abort the run on the first violated invariant.
    pub strict: bool,
    /// Permit τ above the admissible bound (never in strict mode).
    pub allow_large_tau: bool,
    /// Certify that loads are equilibrated, permitting unpinned
    /// quasistatic runs despite the rigid-motion kernel.
    pub equilibrated_loads: bool,
    /// Extra damage-step starts for non-convex user models (0 = warm start
    /// only, which built-in models make exact).
    pub step3_multi_start: usize,
    /// Keep every m-th state in the returned trajectory (first and last are
    /// always kept; the ledger is always complete).
    pub keep_every: usize,
    /// Options for the step-1 and step-3 minimizations.
    pub solve: SolveOptions,
    /// Options for the step-2 minimization (tighter: its first-order
    /// conditions are the discrete solute balance).
    pub solve_diffusion: SolveOptions,
}

impl SchemeParams {
    pub fn new(tau: f64, t_end: f64) -> SchemeParams {
        SchemeParams {
            tau,
            t_end,
            quasistatic: false,
            pin_dofs: Vec::new(),
            strict: false,
            allow_large_tau: false,
            equilibrated_loads: false,
            step3_multi_start: 0,
            keep_every: 1,
            solve: SolveOptions::default(),
            solve_diffusion: SolveOptions {
                tol_grad: 1e-12,
                ..SolveOptions::default()
            },
        }
    }
}

/// A fully assembled problem: mesh, material, data, parameters, and the
/// discrete operators that do not change between steps.
pub struct Problem {
    pub mesh: Mesh,
    pub model: Box<dyn MaterialModel>,
    pub bc: BoundaryData,
    pub params: SchemeParams,
    /// Lumped (row-sum) mass per node.
    pub(crate) mass_lumped: Vec<f64>,
    /// Consistent mass, one block per displacement component.
    pub(crate) mass_u: assembly::SparseMatrix,
    /// Unit stiffness, one block per phase component.
    pub(crate) k_chi: assembly::SparseMatrix,
    /// Unit stiffness for scalar fields.
    pub(crate) k_scalar: assembly::SparseMatrix,
}

impl Problem {
    pub fn new(
        mesh: Mesh,
        model: Box<dyn MaterialModel>,
        bc: BoundaryData,
        params: SchemeParams,
    ) -> Result<Problem> {
        if model.dim() != mesh.dim() {
            return Err(invalid(format!(
                "model is {}-dimensional but the mesh is {}-dimensional",
                model.dim(),
                mesh.dim()
            )));
        }
        bc.validate(mesh.dim())?;
        if !(params.tau > 0.0) {
            return Err(invalid(format!("tau must be > 0, got {}", params.tau)));
        }
        if !(params.t_end > 0.0) {
            return Err(invalid(format!("t_end must be > 0, got {}", params.t_end)));
        }
        if params.keep_every == 0 {
            return Err(invalid("keep_every must be >= 1"));
        }
        let n_u_dofs = mesh.n_nodes() * mesh.dim();
        for &dof in &params.pin_dofs {
            if dof >= n_u_dofs {
                return Err(invalid(format!(
                    "pinned dof {dof} out of range (displacement dofs: {n_u_dofs})"
                )));
            }
        }
        if params.quasistatic {
            if model.zeta_depends_on_strain() {
                return Err(invalid(
                    "quasistatic mode requires a rate density independent of the elastic strain",
                ));
            }
            if params.pin_dofs.is_empty() && !params.equilibrated_loads {
                return Err(invalid(
                    "quasistatic mode without inertia has a rigid-motion kernel: \
                     pin displacement dofs or certify equilibrated loads",
                ));
            }
        }
        let adm = tau_admissible(model.as_ref(), params.t_end);
        if params.tau > adm * (1.0 + 1e-12) {
            if params.strict {
                return Err(invalid(format!(
                    "tau = {} exceeds the admissible bound {adm} (min(1/M², T, 4b²)) \
                     and strict mode is on",
                    params.tau
                )));
            }
            if !params.allow_large_tau {
                return Err(invalid(format!(
                    "tau = {} exceeds the admissible bound {adm}; \
                     set allow_large_tau to override",
                    params.tau
                )));
            }
        }
        let mass_lumped = mesh.lumped_mass();
        let mass_u = assembly::assemble_mass(&mesh, mesh.dim());
        let k_chi = assembly::assemble_unit_stiffness(&mesh, model.n_phase());
        let k_scalar = assembly::assemble_unit_stiffness(&mesh, 1);
        Ok(Problem {
            mesh,
            model,
            bc,
            params,
            mass_lumped,
            mass_u,
            k_chi,
            k_scalar,
        })
    }

    pub(crate) fn n_phase(&self) -> usize {
        self.model.n_phase()
    }
}

/// The scheme's step-size bound min(1/M², T, 4·b²) from the energy estimate
/// (M the semiconvexity modulus, b the quadratic dissipation floor), or
/// simply T when M = 0.
pub fn tau_admissible(model: &dyn MaterialModel, t_end: f64) -> f64 {
    let m = model.m_semiconvex();
    if m == 0.0 {
        return t_end;
    }
    let b = model.zeta_b_min();
    (1.0 / (m * m)).min(t_end).min(4.0 * b * b)
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

/// The full discrete state at one time level.
#[derive(Clone, Debug)]
pub struct State {
    pub t: f64,
    /// Displacement (dim components).
    pub u: NodalField,
    /// Backward-difference velocity (dim components).
    pub v: NodalField,
    /// Phase field (N components).
    pub chi: NodalField,
    /// Solute concentration.
    pub c: NodalField,
    /// Chemical potential.
    pub mu: NodalField,
    /// Damage (1 intact, 0 destroyed).
    pub d: NodalField,
    /// Enthalpy.
    pub w: NodalField,
    /// Temperature.
    pub theta: NodalField,
    /// Constraint reaction of the phase box (N components).
    pub sigma_r: NodalField,
    /// Elastic strain per quadrature point (cell-major).
    pub e_e: Vec<Sym2>,
}

/// Small strain of a P1 displacement field on one cell (constant there).
pub(crate) fn cell_strain(mesh: &Mesh, cell: usize, u: &NodalField) -> Sym2 {
    if mesh.dim() == 1 {
        let g = u.grad_on_cell(mesh, cell, 0);
        Sym2 {
            xx: g[0],
            yy: 0.0,
            xy: 0.0,
        }
    } else {
        let gx = u.grad_on_cell(mesh, cell, 0);
        let gy = u.grad_on_cell(mesh, cell, 1);
        Sym2 {
            xx: gx[0],
            yy: gy[1],
            xy: 0.5 * (gx[1] + gy[0]),
        }
    }
}

/// Elastic strain ε(u) − 𝔼χ at every quadrature point (cell-major layout).
pub fn elastic_strain(
    mesh: &Mesh,
    model: &dyn MaterialModel,
    u: &NodalField,
    chi: &NodalField,
) -> Vec<Sym2> {
    let coupling = model.coupling();
    let n_qp = mesh.n_qp();
    let mut out = Vec::with_capacity(mesh.n_cells() * n_qp);
    for cell in 0..mesh.n_cells() {
        let eps = cell_strain(mesh, cell, u);
        for q in 0..n_qp {
            let mut e = eps;
            for (j, ej) in coupling.iter().enumerate() {
                let cj = chi.at_qp(mesh, cell, q, j);
                e = e - ej.scale(cj);
            }
            out.push(e);
        }
    }
    out
}

/// Volume-averaged nodal recovery of a quadrature-point tensor field (used
/// only to feed nodal dissipation coefficients that may depend on strain).
pub(crate) fn nodal_strain(mesh: &Mesh, e_qp: &[Sym2]) -> Vec<Sym2> {
    let mut acc = vec![Sym2::ZERO; mesh.n_nodes()];
    let mut vol = vec![0.0; mesh.n_nodes()];
    for cell in 0..mesh.n_cells() {
        let mut cell_int = Sym2::ZERO;
        for q in 0..mesh.n_qp() {
            cell_int = cell_int + e_qp[cell * mesh.n_qp() + q].scale(mesh.qp_weight(cell, q));
        }
        for &node in mesh.cell_nodes(cell) {
            acc[node] = acc[node] + cell_int;
            vol[node] += mesh.cell_measure(cell);
        }
    }
    for (a, &v) in acc.iter_mut().zip(&vol) {
        *a = a.scale(1.0 / v);
    }
    acc
}

/// Node-level state sample following one delayed-argument pattern. The
/// strain slots hold volume-averaged nodal strains.
pub(crate) struct NodeSampler<'a> {
    pub pattern: ArgPattern,
    pub e_prev: &'a [Sym2],
    pub e_curr: &'a [Sym2],
    pub chi_prev: &'a NodalField,
    pub chi_curr: &'a NodalField,
    pub d_prev: &'a NodalField,
    pub d_curr: &'a NodalField,
    pub c_prev: &'a NodalField,
    pub c_curr: &'a NodalField,
    pub theta_prev: &'a NodalField,
    pub theta_curr: &'a NodalField,
}

impl<'a> NodeSampler<'a> {
    pub fn sample(&self, node: usize) -> StateSample<'_> {
        let pick = |lag: Lag, prev: &'a NodalField, curr: &'a NodalField| match lag {
            Lag::Prev => prev,
            Lag::Curr => curr,
        };
        let chi_field = pick(self.pattern.chi, self.chi_prev, self.chi_curr);
        let n = chi_field.components();
        StateSample {
            e: match self.pattern.e {
                Lag::Prev => self.e_prev[node],
                Lag::Curr => self.e_curr[node],
            },
            chi: &chi_field.values()[node * n..(node + 1) * n],
            c: pick(self.pattern.c, self.c_prev, self.c_curr).get(node, 0),
            d: pick(self.pattern.d, self.d_prev, self.d_curr).get(node, 0),
            theta: pick(self.pattern.theta, self.theta_prev, self.theta_curr).get(node, 0),
        }
    }
}

/// Quadrature-point state sample following one delayed-argument pattern.
/// The strain slots index the cell-major quadrature storage directly.
pub(crate) struct QpSampler<'a> {
    pub pattern: ArgPattern,
    pub mesh: &'a Mesh,
    pub e_prev: &'a [Sym2],
    pub e_curr: &'a [Sym2],
    pub chi_prev: &'a NodalField,
    pub chi_curr: &'a NodalField,
    pub d_prev: &'a NodalField,
    pub d_curr: &'a NodalField,
    pub c_prev: &'a NodalField,
    pub c_curr: &'a NodalField,
    pub theta_prev: &'a NodalField,
    pub theta_curr: &'a NodalField,
}

impl<'a> QpSampler<'a> {
    fn scalar_at(&self, lag: Lag, prev: &NodalField, curr: &NodalField, cell: usize, q: usize) -> f64 {
        match lag {
            Lag::Prev => prev.at_qp(self.mesh, cell, q, 0),
            Lag::Curr => curr.at_qp(self.mesh, cell, q, 0),
        }
    }

    /// Evaluate a coefficient callable at one quadrature point.
    pub fn eval<T>(&self, cell: usize, q: usize, f: &dyn Fn(&StateSample) -> T) -> T {
        let chi_field = match self.pattern.chi {
            Lag::Prev => self.chi_prev,
            Lag::Curr => self.chi_curr,
        };
        let chi: Vec<f64> = (0..chi_field.components())
            .map(|j| chi_field.at_qp(self.mesh, cell, q, j))
            .collect();
        let e = match self.pattern.e {
            Lag::Prev => self.e_prev[cell * self.mesh.n_qp() + q],
            Lag::Curr => self.e_curr[cell * self.mesh.n_qp() + q],
        };
        let s = StateSample {
            e,
            chi: &chi,
            c: self.scalar_at(self.pattern.c, self.c_prev, self.c_curr, cell, q),
            d: self.scalar_at(self.pattern.d, self.d_prev, self.d_curr, cell, q),
            theta: self.scalar_at(self.pattern.theta, self.theta_prev, self.theta_curr, cell, q),
        };
        f(&s)
    }
}

impl State {
    /// Build and validate the initial state. The enthalpy is derived from
    /// the temperature (w₀ = e_term(χ₀, θ₀)) and the chemical potential from
    /// the concentration (μ₀ = ∂_c φ_chem(χ₀, c₀)).
    #[allow(clippy::too_many_arguments)]
    pub fn initialize(
        mesh: &Mesh,
        model: &dyn MaterialModel,
        u0: NodalField,
        v0: NodalField,
        chi0: NodalField,
        c0: NodalField,
        d0: NodalField,
        theta0: NodalField,
    ) -> Result<State> {
        let n = mesh.n_nodes();
        let np = model.n_phase();
        let checks = [
            ("u0", &u0, mesh.dim()),
            ("v0", &v0, mesh.dim()),
            ("chi0", &chi0, np),
            ("c0", &c0, 1),
            ("d0", &d0, 1),
            ("theta0", &theta0, 1),
        ];
        for (name, field, comps) in checks {
            if field.n_nodes() != n || field.components() != comps {
                return Err(invalid(format!(
                    "{name} must have {n} nodes and {comps} components, got {} nodes, {} components",
                    field.n_nodes(),
                    field.components()
                )));
            }
        }
        let (lo, hi) = model.chi_box();
        for node in 0..n {
            for j in 0..np {
                let v = chi0.get(node, j);
                if v < lo[j] || v > hi[j] {
                    return Err(invalid(format!(
                        "chi0 component {j} at node {node} is {v}, outside [{}, {}]",
                        lo[j], hi[j]
                    )));
                }
            }
            let dv = d0.get(node, 0);
            if !(0.0..=1.0).contains(&dv) {
                return Err(invalid(format!(
                    "d0 at node {node} is {dv}, outside [0, 1]"
                )));
            }
            let tv = theta0.get(node, 0);
            if tv < 0.0 {
                return Err(invalid(format!("theta0 at node {node} is negative: {tv}")));
            }
        }
        let e_e = elastic_strain(mesh, model, &u0, &chi0);
        let mut w = NodalField::zeros(n, 1);
        let mut mu = NodalField::zeros(n, 1);
        for node in 0..n {
            let chi_n = &chi0.values()[node * np..(node + 1) * np];
            let (ew, _) = model.e_term(chi_n, theta0.get(node, 0))?;
            w.set(node, 0, ew);
            mu.set(node, 0, model.phi_chem(chi_n, c0.get(node, 0))?.d_c);
        }
        Ok(State {
            t: 0.0,
            u: u0,
            v: v0,
            chi: chi0,
            c: c0,
            mu,
            d: d0,
            w,
            theta: theta0,
            sigma_r: NodalField::zeros(n, np),
            e_e,
        })
    }

    /// Rebuild a state from stored nodal fields (snapshot re-ingestion).
    /// Derived quantities (elastic strain) are recomputed; the enthalpy is
    /// taken as stored so a round trip is exact.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fields(
        mesh: &Mesh,
        model: &dyn MaterialModel,
        t: f64,
        u: NodalField,
        v: NodalField,
        chi: NodalField,
        c: NodalField,
        mu: NodalField,
        d: NodalField,
        w: NodalField,
        theta: NodalField,
        sigma_r: NodalField,
    ) -> Result<State> {
        let e_e = elastic_strain(mesh, model, &u, &chi);
        Ok(State {
            t,
            u,
            v,
            chi,
            c,
            mu,
            d,
            w,
            theta,
            sigma_r,
            e_e,
        })
    }
}

// ---------------------------------------------------------------------------
// Advance and run
// ---------------------------------------------------------------------------

fn in_step(step: &'static str, e: SolverError) -> SolverError {
    match e {
        SolverError::NumericFailure { context, msg } => SolverError::NumericFailure {
            context: step,
            msg: format!("{context}: {msg}"),
        },
        other => other,
    }
}

/// One step of the scheme: mechanics+phase, diffusion, damage, heat.
/// `prev2_u` is u^{k−2} (for k = 1 the starting rule u⁰ − τ·v⁰).
pub fn advance(pb: &Problem, prev: &State, prev2_u: &NodalField) -> Result<State> {
    let tau = pb.params.tau;
    let t_k = prev.t + tau;
    let loads = assemble_loads(&pb.mesh, &pb.bc, t_k)?;
    let s1 = step1::solve(pb, prev, prev2_u, &loads).map_err(|e| in_step("step 1", e))?;
    let s2 = step2::solve(pb, prev, &s1, &loads).map_err(|e| in_step("step 2", e))?;
    let d = step3::solve(pb, prev, &s1).map_err(|e| in_step("step 3", e))?;
    let s4 = step4::solve(pb, prev, &s1, &s2, &d, &loads).map_err(|e| in_step("step 4", e))?;
    let mut v = NodalField::zeros(pb.mesh.n_nodes(), pb.mesh.dim());
    for (vi, (ui, upi)) in v
        .values_mut()
        .iter_mut()
        .zip(s1.u.values().iter().zip(prev.u.values()))
    {
        *vi = (ui - upi) / tau;
    }
    Ok(State {
        t: t_k,
        u: s1.u,
        v,
        chi: s1.chi,
        c: s2.c,
        mu: s2.mu,
        d,
        w: s4.w,
        theta: s4.theta,
        sigma_r: s1.sigma_r,
        e_e: s1.e_e,
    })
}

/// A completed run: retained states, the full per-step ledger, and the
/// reports produced along the way.
pub struct Trajectory {
    pub states: Vec<State>,
    pub ledger: Vec<diagnostics::EnergyLedgerRow>,
    pub initial_semistability: diagnostics::CheckReport,
    pub tau_admissible: f64,
}

/// Run the scheme from `initial` to t_end. Requires t_end/τ to be an
/// integer. In strict mode every step is checked against the conservation
/// and positivity invariants and the energy inequality; the first violation
/// aborts the run.
pub fn run(pb: &Problem, initial: &State) -> Result<Trajectory> {
    let tau = pb.params.tau;
    let ratio = pb.params.t_end / tau;
    let n_steps = ratio.round();
    if n_steps < 1.0 || (ratio - n_steps).abs() > 1e-9 * n_steps.max(1.0) {
        return Err(invalid(format!(
            "t_end/tau must be a positive integer: t_end = {}, tau = {tau} gives {ratio}",
            pb.params.t_end
        )));
    }
    let n_steps = n_steps as usize;
    let initial_semistability = diagnostics::check_semistability(pb, initial, 1000, 0x5eed)?;
    let scale0 = diagnostics::mech_chem_energy(pb, initial)?.abs();

    let mut states = Vec::with_capacity(n_steps / pb.params.keep_every + 2);
    let mut ledger = Vec::with_capacity(n_steps);
    let mut prev = initial.clone();
    let mut prev2_u: NodalField = {
        // Starting rule: u^{−1} = u₀ − τ·v₀.
        let mut f = initial.u.clone();
        for (ui, vi) in f.values_mut().iter_mut().zip(initial.v.values()) {
            *ui -= tau * vi;
        }
        f
    };
    states.push(initial.clone());
    let mut work_abs = 0.0f64;
    for k in 1..=n_steps {
        let next = advance(pb, &prev, &prev2_u)?;
        let row = diagnostics::ledger_step(pb, &prev, &next)?;
        work_abs += tau * (row.work_mech.abs() + row.work_chem.abs() + row.work_therm.abs());
        let scale = 1.0f64.max(scale0).max(work_abs);
        if pb.params.strict {
            for rep in diagnostics::conservation_suite(pb, &prev, &next)? {
                if !rep.pass {
                    return Err(SolverError::inconsistent(rep.name, rep.witness));
                }
            }
            if row.inequality_residual > 1e-8 * scale {
                return Err(SolverError::inconsistent(
                    "mechano-chemical energy inequality",
                    format!(
                        "step {k}: residual {:.3e} exceeds 1e-8·scale ({:.3e})",
                        row.inequality_residual,
                        1e-8 * scale
                    ),
                ));
            }
            if row.total_balance_residual.abs() > 1e-6 * scale {
                return Err(SolverError::inconsistent(
                    "total energy balance",
                    format!(
                        "step {k}: residual {:.3e} exceeds 1e-6·scale ({:.3e})",
                        row.total_balance_residual,
                        1e-6 * scale
                    ),
                ));
            }
        }
        ledger.push(row);
        prev2_u = prev.u.clone();
        if k % pb.params.keep_every == 0 || k == n_steps {
            states.push(next.clone());
        }
        prev = next;
    }
    Ok(Trajectory {
        states,
        ledger,
        initial_semistability,
        tau_admissible: tau_admissible(pb.model.as_ref(), pb.params.t_end),
    })
}
