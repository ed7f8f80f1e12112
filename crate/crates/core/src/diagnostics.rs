//! Energy ledger, semi-stability and conservation checks, gradient
//! verification, and τ-refinement studies.
//!
//! Every structural property the scheme guarantees has an executable check
//! here: the per-step mechano-chemical energy inequality (with the √τ|χ̇|²
//! slack on the dissipation side), the total-energy balance, solute-mass and
//! enthalpy conservation, temperature nonnegativity, damage monotonicity and
//! semi-stability, derivative contracts of material models, and successive
//! τ-refinement differences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SolverError};
use crate::geometry::NodalField;
use crate::materials::{legendre_chem, zeta_dissipation_rate, MaterialModel};
use crate::stepper::{
    assemble_loads, mobility_matrix, nodal_strain, run, tau_admissible, assemble_heat_sources,
    HeatSourceInput, NodeSampler, Problem, QpSampler, State, DELAYED_ARGS, Lag,
};
use crate::tensor::Sym2;

// ---------------------------------------------------------------------------
// Ledger row
// ---------------------------------------------------------------------------

/// Per-step energy accounting. Dissipation entries `diss_visc`, `diss_phase`
/// and `diss_diffusive` are rates (multiply by τ for the dissipated energy);
/// `diss_damage` is the amount α(χ^k)(d^{k−1}−d^k) dissipated in the step.
/// Work entries are rates. Residual conventions:
///
/// * `inequality_residual` = ΔE_MC + τ·(viscous + phase − √τ·|χ̇|²_lumped +
///   adiabatic + diffusive) + damage − τ·(all work); nonpositive up to solver
///   slack.
/// * `total_balance_residual` = ΔE_TOT − τ·(all work); zero up to the τ-level
///   defects the time discretization itself introduces (source truncation and
///   the delayed adiabatic coupling).
#[derive(Clone, Debug)]
pub struct EnergyLedgerRow {
    pub t: f64,
    pub e_mc: f64,
    pub e_therm: f64,
    pub e_tot: f64,
    pub diss_visc: f64,
    pub diss_phase: f64,
    pub diss_damage: f64,
    pub diss_diffusive: f64,
    pub work_mech: f64,
    pub work_chem: f64,
    pub work_therm: f64,
    pub inequality_residual: f64,
    pub total_balance_residual: f64,
}

impl EnergyLedgerRow {
    pub const CSV_HEADER: &'static str = "t,e_mc,e_therm,e_tot,diss_visc,diss_phase,\
         diss_damage,diss_diffusive,work_mech,work_chem,work_therm,\
         inequality_residual,total_balance_residual";

    pub fn csv_row(&self) -> String {
        let f = |x: f64| format!("{x:.16e}");
        [
            self.t,
            self.e_mc,
            self.e_therm,
            self.e_tot,
            self.diss_visc,
            self.diss_phase,
            self.diss_damage,
            self.diss_diffusive,
            self.work_mech,
            self.work_chem,
            self.work_therm,
            self.inequality_residual,
            self.total_balance_residual,
        ]
        .map(f)
        .join(",")
    }
}

/// Outcome of one named invariant check.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: &'static str,
    pub pass: bool,
    /// Worst offender: location and values, or a short all-clear summary.
    pub witness: String,
    pub tolerance: f64,
}

impl CheckReport {
    fn passed(name: &'static str, witness: String, tolerance: f64) -> CheckReport {
        CheckReport {
            name,
            pass: true,
            witness,
            tolerance,
        }
    }

    fn failed(name: &'static str, witness: String, tolerance: f64) -> CheckReport {
        CheckReport {
            name,
            pass: false,
            witness,
            tolerance,
        }
    }
}

// ---------------------------------------------------------------------------
// Stored energies
// ---------------------------------------------------------------------------

/// Mechano-chemical energy: quadrature of the mechanical free energy at the
/// state's elastic strain, mass-lumped chemical energy, kinetic energy and
/// both gradient regularizations. The thermal part does not enter.
pub fn mech_chem_energy(pb: &Problem, s: &State) -> Result<f64> {
    let mesh = &pb.mesh;
    let model = pb.model.as_ref();
    let np = pb.n_phase();
    let nqp = mesh.n_qp();
    let mut e = 0.0;
    for cell in 0..mesh.n_cells() {
        for q in 0..nqp {
            let chi_qp: Vec<f64> = (0..np).map(|j| s.chi.at_qp(mesh, cell, q, j)).collect();
            let d_qp = s.d.at_qp(mesh, cell, q, 0);
            let me = model.phi_mech(&s.e_e[cell * nqp + q], &chi_qp, d_qp)?;
            e += mesh.qp_weight(cell, q) * me.value;
        }
    }
    for i in 0..mesh.n_nodes() {
        let chi_i = &s.chi.values()[i * np..(i + 1) * np];
        e += pb.mass_lumped[i] * model.phi_chem(chi_i, s.c.get(i, 0))?.value;
    }
    let rho = if pb.params.quasistatic {
        0.0
    } else {
        model.rho()
    };
    if rho > 0.0 {
        e += 0.5 * rho * pb.mass_u.quadratic(s.v.values());
    }
    e += 0.5 * model.kappa1() * pb.k_chi.quadratic(s.chi.values());
    e += 0.5 * model.kappa2() * pb.k_scalar.quadratic(s.d.values());
    Ok(e)
}

/// Total energy: mechano-chemical plus the integrated enthalpy.
pub fn total_energy(pb: &Problem, s: &State) -> Result<f64> {
    let w: f64 = s
        .w
        .values()
        .iter()
        .zip(&pb.mass_lumped)
        .map(|(w, m)| w * m)
        .sum();
    Ok(mech_chem_energy(pb, s)? + w)
}

// ---------------------------------------------------------------------------
// Per-step ledger
// ---------------------------------------------------------------------------

/// Assemble the full energy ledger row for one accepted step prev → next.
pub fn ledger_step(pb: &Problem, prev: &State, next: &State) -> Result<EnergyLedgerRow> {
    let mesh = &pb.mesh;
    let model = pb.model.as_ref();
    let tau = pb.params.tau;
    let n = mesh.n_nodes();
    let np = pb.n_phase();
    let nqp = mesh.n_qp();

    let loads = assemble_loads(mesh, &pb.bc, prev.t + tau)?;
    let work_mech: f64 = loads
        .b_u
        .iter()
        .zip(next.u.values().iter().zip(prev.u.values()))
        .map(|(b, (u1, u0))| b * (u1 - u0) / tau)
        .sum();
    let work_chem: f64 = loads
        .b_h
        .iter()
        .zip(next.mu.values())
        .map(|(b, mu)| b * mu)
        .sum();
    let work_therm: f64 = loads.b_q.iter().sum();

    // Viscous dissipation rate at quadrature points.
    let (lambda_v, mu_v) = if pb.params.quasistatic {
        (0.0, 0.0)
    } else {
        model.visc()
    };
    let mut diss_visc = 0.0;
    if lambda_v != 0.0 || mu_v != 0.0 {
        for cell in 0..mesh.n_cells() {
            for q in 0..nqp {
                let idx = cell * nqp + q;
                let rate = (next.e_e[idx] - prev.e_e[idx]) * (1.0 / tau);
                let tr = rate.trace();
                diss_visc +=
                    mesh.qp_weight(cell, q) * (lambda_v * tr * tr + 2.0 * mu_v * rate.norm2());
            }
        }
    }

    // Phase dissipation rate, the √τ slack and the (fully delayed) adiabatic
    // term, all mass-lumped with previous-step coefficient samples.
    assert_eq!(DELAYED_ARGS.phi_term_step1.chi, Lag::Prev);
    assert_eq!(DELAYED_ARGS.phi_term_step1.theta, Lag::Prev);
    let e_nodal_prev = nodal_strain(mesh, &prev.e_e);
    let zeta_sampler = NodeSampler {
        pattern: DELAYED_ARGS.zeta_step1,
        e_prev: &e_nodal_prev,
        e_curr: &e_nodal_prev,
        chi_prev: &prev.chi,
        chi_curr: &prev.chi,
        d_prev: &prev.d,
        d_curr: &prev.d,
        c_prev: &prev.c,
        c_curr: &prev.c,
        theta_prev: &prev.theta,
        theta_curr: &prev.theta,
    };
    let mut diss_phase = 0.0;
    let mut slack = 0.0;
    let mut adiabatic = 0.0;
    let mut rate_i = vec![0.0; np];
    for i in 0..n {
        let m = pb.mass_lumped[i];
        for (j, r) in rate_i.iter_mut().enumerate() {
            *r = (next.chi.get(i, j) - prev.chi.get(i, j)) / tau;
        }
        let coeffs = model.zeta_coeffs(&zeta_sampler.sample(i));
        diss_phase += m * zeta_dissipation_rate(&coeffs, &rate_i);
        let norm2: f64 = rate_i.iter().map(|r| r * r).sum();
        slack += m * norm2;
        let chi_prev_i = &prev.chi.values()[i * np..(i + 1) * np];
        let t = model.phi_term(chi_prev_i, prev.theta.get(i, 0))?;
        adiabatic += m * t.d_chi.iter().zip(&rate_i).map(|(a, b)| a * b).sum::<f64>();
    }

    // Damage dissipation amount with the current-phase toughness sample.
    let alpha_sampler = QpSampler {
        pattern: DELAYED_ARGS.alpha_step3,
        mesh,
        e_prev: &prev.e_e,
        e_curr: &next.e_e,
        chi_prev: &prev.chi,
        chi_curr: &next.chi,
        d_prev: &prev.d,
        d_curr: &next.d,
        c_prev: &prev.c,
        c_curr: &prev.c,
        theta_prev: &prev.theta,
        theta_curr: &prev.theta,
    };
    let mut diss_damage = 0.0;
    for cell in 0..mesh.n_cells() {
        for q in 0..nqp {
            let alpha = alpha_sampler.eval(cell, q, &|s| model.alpha(s.chi).map(|(v, _, _)| v))?;
            let d0 = prev.d.at_qp(mesh, cell, q, 0);
            let d1 = next.d.at_qp(mesh, cell, q, 0);
            diss_damage += mesh.qp_weight(cell, q) * alpha * (d0 - d1);
        }
    }

    // Diffusive dissipation rate through the same delayed mobility matrix the
    // diffusion step assembled.
    let a_m = mobility_matrix(pb, prev, &next.chi, &next.e_e, false)?;
    let diss_diffusive = a_m.quadratic(next.mu.values());

    let e_mc_prev = mech_chem_energy(pb, prev)?;
    let e_mc = mech_chem_energy(pb, next)?;
    let lumped_w = |s: &State| -> f64 {
        s.w.values()
            .iter()
            .zip(&pb.mass_lumped)
            .map(|(w, m)| w * m)
            .sum()
    };
    let e_therm_prev = lumped_w(prev);
    let e_therm = lumped_w(next);

    let work = work_mech + work_chem + work_therm;
    let inequality_residual = (e_mc - e_mc_prev)
        + tau * (diss_visc + diss_phase - tau.sqrt() * slack + adiabatic + diss_diffusive)
        + diss_damage
        - tau * work;
    let total_balance_residual = (e_mc + e_therm) - (e_mc_prev + e_therm_prev) - tau * work;

    Ok(EnergyLedgerRow {
        t: next.t,
        e_mc,
        e_therm,
        e_tot: e_mc + e_therm,
        diss_visc,
        diss_phase,
        diss_damage,
        diss_diffusive,
        work_mech,
        work_chem,
        work_therm,
        inequality_residual,
        total_balance_residual,
    })
}

// ---------------------------------------------------------------------------
// Semi-stability
// ---------------------------------------------------------------------------

/// Damage-relevant part of the stored energy: quadrature of the mechanical
/// free energy plus the damage gradient term.
fn damage_energy(pb: &Problem, s: &State, d: &NodalField) -> Result<f64> {
    let mesh = &pb.mesh;
    let model = pb.model.as_ref();
    let np = pb.n_phase();
    let nqp = mesh.n_qp();
    let mut e = 0.0;
    for cell in 0..mesh.n_cells() {
        for q in 0..nqp {
            let chi_qp: Vec<f64> = (0..np).map(|j| s.chi.at_qp(mesh, cell, q, j)).collect();
            let d_qp = d.at_qp(mesh, cell, q, 0);
            let me = model.phi_mech(&s.e_e[cell * nqp + q], &chi_qp, d_qp)?;
            e += mesh.qp_weight(cell, q) * me.value;
        }
    }
    e += 0.5 * model.kappa2() * pb.k_scalar.quadratic(d.values());
    Ok(e)
}

/// Dissipation needed to move from the state's damage field to the competitor:
/// quadrature of α(χ)(d − d̃) (nonnegative for admissible competitors).
fn damage_transition_cost(pb: &Problem, s: &State, d_tilde: &NodalField) -> Result<f64> {
    let mesh = &pb.mesh;
    let model = pb.model.as_ref();
    let np = pb.n_phase();
    let nqp = mesh.n_qp();
    let mut cost = 0.0;
    for cell in 0..mesh.n_cells() {
        for q in 0..nqp {
            let chi_qp: Vec<f64> = (0..np).map(|j| s.chi.at_qp(mesh, cell, q, j)).collect();
            let (alpha, _, _) = model.alpha(&chi_qp)?;
            let d0 = s.d.at_qp(mesh, cell, q, 0);
            let d1 = d_tilde.at_qp(mesh, cell, q, 0);
            cost += mesh.qp_weight(cell, q) * alpha * (d0 - d1);
        }
    }
    Ok(cost)
}

/// Semi-stability of the damage field: for random admissible competitors
/// d̃ ≤ d (three amplitude families mixing local and global probes), the
/// stored energy at d must not exceed the competitor's energy plus the
/// transition cost, up to 1e-9 of the energy scale. Reports the worst margin.
pub fn check_semistability(
    pb: &Problem,
    state: &State,
    n_trials: usize,
    rng_seed: u64,
) -> Result<CheckReport> {
    let n = pb.mesh.n_nodes();
    let base = damage_energy(pb, state, &state.d)?;
    let scale = 1.0f64.max(base.abs());
    let tol = 1e-9 * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let amplitudes = [1e-3, 1e-1, f64::INFINITY];
    let mut worst = f64::INFINITY;
    let mut worst_witness = String::from("no competitors tried");
    for trial in 0..n_trials {
        let amp = amplitudes[trial % amplitudes.len()];
        let mut d_tilde = state.d.clone();
        for i in 0..n {
            let d_i = state.d.get(i, 0);
            let t: f64 = rng.gen_range(0.0..=1.0);
            let candidate = if amp.is_finite() {
                (d_i - amp * t).max(0.0)
            } else {
                // Full-range family: uniform in the admissible interval.
                d_i * t
            };
            d_tilde.set(i, 0, candidate.min(d_i));
        }
        let margin = damage_energy(pb, state, &d_tilde)? + damage_transition_cost(pb, state, &d_tilde)?
            - base;
        if margin < worst {
            worst = margin;
            worst_witness = format!(
                "trial {trial} (amplitude {amp:.1e}): margin {margin:.6e} at t = {}",
                state.t
            );
        }
    }
    let pass = worst >= -tol;
    Ok(CheckReport {
        name: "damage semi-stability",
        pass,
        witness: worst_witness,
        tolerance: tol,
    })
}

// ---------------------------------------------------------------------------
// Conservation suite
// ---------------------------------------------------------------------------

/// The four structural invariants of one accepted step: solute mass, the
/// enthalpy ledger, positivity/box constraints, and damage monotonicity with
/// nonnegative damage heat.
pub fn conservation_suite(pb: &Problem, prev: &State, next: &State) -> Result<Vec<CheckReport>> {
    let mesh = &pb.mesh;
    let model = pb.model.as_ref();
    let tau = pb.params.tau;
    let n = mesh.n_nodes();
    let np = pb.n_phase();
    let loads = assemble_loads(mesh, &pb.bc, prev.t + tau)?;
    let mut reports = Vec::with_capacity(4);

    // 1. Solute mass: lumped ∫c moves only through the boundary influx.
    let mass = |f: &NodalField| -> f64 {
        f.values()
            .iter()
            .zip(&pb.mass_lumped)
            .map(|(v, m)| v * m)
            .sum()
    };
    let influx: f64 = loads.b_h.iter().sum();
    let defect = mass(&next.c) - mass(&prev.c) - tau * influx;
    let c_abs: f64 = next
        .c
        .values()
        .iter()
        .zip(&pb.mass_lumped)
        .map(|(v, m)| v.abs() * m)
        .sum();
    let tol = 1e-10 * (1.0 + c_abs);
    reports.push(if defect.abs() <= tol {
        CheckReport::passed(
            "solute mass conservation",
            format!("defect {defect:.3e} within {tol:.3e}"),
            tol,
        )
    } else {
        CheckReport::failed(
            "solute mass conservation",
            format!(
                "defect {defect:.3e} exceeds {tol:.3e} (Δ∫c = {:.6e}, τ∫h_s = {:.6e})",
                mass(&next.c) - mass(&prev.c),
                tau * influx
            ),
            tol,
        )
    });

    // 2. Enthalpy ledger: lumped ∫w moves by τ·(dissipation sources +
    // adiabatic coupling + boundary influx).
    let mut chi_rate = NodalField::zeros(n, np);
    for (r, (c1, c0)) in chi_rate
        .values_mut()
        .iter_mut()
        .zip(next.chi.values().iter().zip(prev.chi.values()))
    {
        *r = (c1 - c0) / tau;
    }
    let input = HeatSourceInput {
        chi: &next.chi,
        chi_rate: &chi_rate,
        e_e: &next.e_e,
        d: &next.d,
        mu: &next.mu,
    };
    let sources = assemble_heat_sources(pb, prev, &input)?;
    let mut source_total: f64 = loads.b_q.iter().sum();
    for i in 0..n {
        let chi_i = &next.chi.values()[i * np..(i + 1) * np];
        let rate_i = &chi_rate.values()[i * np..(i + 1) * np];
        let t = model.phi_term(chi_i, next.theta.get(i, 0))?;
        let ad: f64 = t.d_chi.iter().zip(rate_i).map(|(a, b)| a * b).sum();
        source_total += sources.total_at(i) + pb.mass_lumped[i] * ad;
    }
    let w_defect = mass(&next.w) - mass(&prev.w) - tau * source_total;
    let tol = 1e-9 * (1.0 + mass(&next.w).abs());
    reports.push(if w_defect.abs() <= tol {
        CheckReport::passed(
            "enthalpy ledger",
            format!("defect {w_defect:.3e} within {tol:.3e}"),
            tol,
        )
    } else {
        CheckReport::failed(
            "enthalpy ledger",
            format!(
                "defect {w_defect:.3e} exceeds {tol:.3e} (Δ∫w = {:.6e}, τ·sources = {:.6e})",
                mass(&next.w) - mass(&prev.w),
                tau * source_total
            ),
            tol,
        )
    });

    // 3. Positivity of θ and the box constraints on χ and d.
    let (chi_lo, chi_hi) = model.chi_box();
    let mut violation: Option<String> = None;
    for i in 0..n {
        let th = next.theta.get(i, 0);
        if th < -1e-12 {
            violation = Some(format!("θ = {th:.3e} at node {i}"));
            break;
        }
        let d = next.d.get(i, 0);
        if !(0.0..=1.0).contains(&d) {
            violation = Some(format!("d = {d:.3e} at node {i}"));
            break;
        }
        for j in 0..np {
            let x = next.chi.get(i, j);
            if x < chi_lo[j] || x > chi_hi[j] {
                violation = Some(format!("χ[{j}] = {x:.6e} outside box at node {i}"));
                break;
            }
        }
        if violation.is_some() {
            break;
        }
    }
    reports.push(match violation {
        None => CheckReport::passed(
            "positivity and box constraints",
            "θ ≥ −1e-12, χ and d within bounds".to_string(),
            1e-12,
        ),
        Some(w) => CheckReport::failed("positivity and box constraints", w, 1e-12),
    });

    // 4. Damage monotonicity, and nonnegative damage heat.
    let mut violation: Option<String> = None;
    for i in 0..n {
        let (d0, d1) = (prev.d.get(i, 0), next.d.get(i, 0));
        if d1 > d0 {
            violation = Some(format!("d rose from {d0:.6e} to {d1:.6e} at node {i}"));
            break;
        }
        if sources.damage[i] < -1e-15 {
            violation = Some(format!(
                "damage heat source {:.3e} < 0 at node {i}",
                sources.damage[i]
            ));
            break;
        }
    }
    reports.push(match violation {
        None => CheckReport::passed(
            "damage monotonicity",
            "d nonincreasing, damage heat ≥ 0".to_string(),
            0.0,
        ),
        Some(w) => CheckReport::failed("damage monotonicity", w, 0.0),
    });

    Ok(reports)
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

fn central<F: FnMut(f64) -> Result<f64>>(x: f64, mut f: F) -> Result<f64> {
    let h = 1e-5 * x.abs().max(1.0);
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// Relative deviation between an analytic derivative and its
/// central-difference estimate.
fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(1.0)
}

/// Verify the derivative contract of a material model by central differences
/// at random admissible sample points. Pass iff the worst relative error over
/// all first derivatives (and the declared derivative-of-derivative outputs)
/// is at most 1e-5.
pub fn gradient_check(
    model: &dyn MaterialModel,
    n_points: usize,
    rng_seed: u64,
) -> Result<CheckReport> {
    let dim = model.dim();
    let np = model.n_phase();
    let (chi_lo, chi_hi) = model.chi_box();
    let (c_lo, c_hi) = model.c_range_hint();
    let (th_lo, th_hi) = model.theta_range_hint();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst = 0.0f64;
    let mut worst_witness = String::from("all derivatives consistent");
    let mut track = |err: f64, what: &str, point: &str| {
        if err > worst {
            worst = err;
            worst_witness = format!("{what}: relative error {err:.3e} at {point}");
        }
    };
    // Keep samples away from range edges: central differences with step
    // ~1e-5 lose accuracy where log-type energies blow up.
    let margin = 2e-2;
    for _ in 0..n_points {
        let e = Sym2 {
            xx: rng.gen_range(-0.4..0.4),
            yy: if dim == 2 {
                rng.gen_range(-0.4..0.4)
            } else {
                0.0
            },
            xy: if dim == 2 {
                rng.gen_range(-0.4..0.4)
            } else {
                0.0
            },
        };
        let chi: Vec<f64> = (0..np)
            .map(|j| {
                let (lo, hi) = (chi_lo[j], chi_hi[j]);
                if hi - lo > 4.0 * margin {
                    rng.gen_range(lo + margin..hi - margin)
                } else {
                    0.5 * (lo + hi)
                }
            })
            .collect();
        let c = if c_hi - c_lo > 4.0 * margin {
            rng.gen_range(c_lo + margin..c_hi - margin)
        } else {
            0.5 * (c_lo + c_hi)
        };
        let d = rng.gen_range(0.05..0.95);
        let theta = rng.gen_range(th_lo.max(0.05) + margin..th_hi);
        let point = format!("E = {e:?}, χ = {chi:?}, c = {c:.3}, d = {d:.3}, θ = {theta:.3}");

        // φ_mech: strain, phase, and damage partials of the value.
        let me = model.phi_mech(&e, &chi, d)?;
        let n_comps = Sym2::n_comps(dim);
        for k in 0..n_comps {
            let fd = central(e.comps(dim)[k], |x| {
                let mut comps = e.comps(dim);
                comps[k] = x;
                let ep = Sym2 {
                    xx: comps[0],
                    yy: comps[1],
                    xy: comps[2],
                };
                Ok(model.phi_mech(&ep, &chi, d)?.value)
            })?;
            track(rel_err(me.d_e[k], fd), "phi_mech d_e", &point);
        }
        for j in 0..np {
            let fd = central(chi[j], |x| {
                let mut cj = chi.clone();
                cj[j] = x;
                Ok(model.phi_mech(&e, &cj, d)?.value)
            })?;
            track(rel_err(me.d_chi[j], fd), "phi_mech d_chi", &point);
        }
        let fd = central(d, |x| Ok(model.phi_mech(&e, &chi, x)?.value))?;
        track(rel_err(me.d_d, fd), "phi_mech d_d", &point);

        // φ_mech damage profile: first and second damage derivatives.
        let (_, d1, d2) = model.phi_mech_d2d(&e, &chi, d)?;
        track(rel_err(d1, fd), "phi_mech_d2d first", &point);
        let fd2 = central(d, |x| Ok(model.phi_mech_d2d(&e, &chi, x)?.1))?;
        track(rel_err(d2, fd2), "phi_mech_d2d second", &point);

        // φ_chem: phase and concentration partials, and the c-curvature.
        let ce = model.phi_chem(&chi, c)?;
        for j in 0..np {
            let fd = central(chi[j], |x| {
                let mut cj = chi.clone();
                cj[j] = x;
                Ok(model.phi_chem(&cj, c)?.value)
            })?;
            track(rel_err(ce.d_chi[j], fd), "phi_chem d_chi", &point);
        }
        let fd = central(c, |x| Ok(model.phi_chem(&chi, x)?.value))?;
        track(rel_err(ce.d_c, fd), "phi_chem d_c", &point);
        let fd = central(c, |x| Ok(model.phi_chem(&chi, x)?.d_c))?;
        track(rel_err(ce.d_cc, fd), "phi_chem d_cc", &point);

        // φ_term: temperature and phase partials, curvature, and the mixed
        // derivative; e_term's θ-derivative; α's gradient.
        let te = model.phi_term(&chi, theta)?;
        let fd = central(theta, |x| Ok(model.phi_term(&chi, x)?.value))?;
        track(rel_err(te.d_theta, fd), "phi_term d_theta", &point);
        let fd = central(theta, |x| Ok(model.phi_term(&chi, x)?.d_theta))?;
        track(rel_err(te.d_theta_theta, fd), "phi_term d_theta_theta", &point);
        for j in 0..np {
            let fd = central(chi[j], |x| {
                let mut cj = chi.clone();
                cj[j] = x;
                Ok(model.phi_term(&cj, theta)?.value)
            })?;
            track(rel_err(te.d_chi[j], fd), "phi_term d_chi", &point);
            let fd = central(theta, |x| Ok(model.phi_term(&chi, x)?.d_chi[j]))?;
            track(rel_err(te.d_chi_theta[j], fd), "phi_term d_chi_theta", &point);
        }
        let (_, de) = model.e_term(&chi, theta)?;
        let fd = central(theta, |x| Ok(model.e_term(&chi, x)?.0))?;
        track(rel_err(de, fd), "e_term d_theta", &point);
        let (_, ag, _) = model.alpha(&chi)?;
        for j in 0..np {
            let fd = central(chi[j], |x| {
                let mut cj = chi.clone();
                cj[j] = x;
                Ok(model.alpha(&cj)?.0)
            })?;
            track(rel_err(ag[j], fd), "alpha gradient", &point);
        }

        // Conjugate chemical energy: μ ↦ (φ*, c) must invert ∂_cφ_chem, and
        // the conjugate value must satisfy φ* + φ = μ·c at the pair.
        let mu = ce.d_c;
        let (phi_star, c_back) = legendre_chem(model, &chi, mu)?;
        track(rel_err(c, c_back), "legendre_chem inversion", &point);
        track(
            rel_err(mu * c, phi_star + ce.value),
            "legendre_chem value",
            &point,
        );
    }
    let tol = 1e-5;
    Ok(CheckReport {
        name: "material gradient check",
        pass: worst <= tol,
        witness: worst_witness,
        tolerance: tol,
    })
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

/// Space-time differences between two consecutive τ-refinements.
#[derive(Clone, Debug)]
pub struct StudyRow {
    pub tau_coarse: f64,
    pub tau_fine: f64,
    /// Discrete L²(Ω×I) norms of the differences of the backward-constant
    /// interpolants, per field.
    pub err_u: f64,
    pub err_chi: f64,
    pub err_c: f64,
    pub err_theta: f64,
}

/// Run the same scenario at every τ in the (decreasing) list and report the
/// successive space-time differences. The factory must produce problems with
/// `keep_every = 1` on a fixed mesh; each τ must be admissible and each
/// consecutive ratio an integer.
pub fn convergence_study(
    make: &dyn Fn(f64) -> Result<(Problem, State)>,
    taus: &[f64],
) -> Result<Vec<StudyRow>> {
    let mut runs = Vec::with_capacity(taus.len());
    for (i, &tau) in taus.iter().enumerate() {
        if i > 0 && tau >= taus[i - 1] {
            return Err(SolverError::invalid(format!(
                "tau list must be strictly decreasing, got {} after {}",
                tau,
                taus[i - 1]
            )));
        }
        let (pb, initial) = make(tau)?;
        if pb.params.keep_every != 1 {
            return Err(SolverError::invalid(
                "convergence study requires keep_every = 1",
            ));
        }
        let limit = tau_admissible(pb.model.as_ref(), pb.params.t_end);
        if tau > limit {
            return Err(SolverError::invalid(format!(
                "tau = {tau} exceeds the admissible bound {limit}"
            )));
        }
        let traj = run(&pb, &initial)?;
        runs.push((pb, traj));
    }
    let mut rows = Vec::new();
    for pair in runs.windows(2) {
        let (pb_c, coarse) = &pair[0];
        let (pb_f, fine) = &pair[1];
        if pb_c.mesh.n_nodes() != pb_f.mesh.n_nodes() {
            return Err(SolverError::invalid(
                "convergence study requires a fixed mesh across refinements",
            ));
        }
        let tau_c = pb_c.params.tau;
        let tau_f = pb_f.params.tau;
        let ratio = tau_c / tau_f;
        let r = ratio.round();
        if (ratio - r).abs() > 1e-9 {
            return Err(SolverError::invalid(format!(
                "consecutive taus must divide: {tau_c} / {tau_f} = {ratio}"
            )));
        }
        let r = r as usize;
        let l2 = |f1: &NodalField, f0: &NodalField| -> f64 {
            let comps = f1.components();
            (0..pb_c.mesh.n_nodes())
                .map(|i| {
                    let d2: f64 = (0..comps)
                        .map(|j| (f1.get(i, j) - f0.get(i, j)).powi(2))
                        .sum();
                    pb_c.mass_lumped[i] * d2
                })
                .sum()
        };
        let (mut su, mut schi, mut sc, mut sth) = (0.0, 0.0, 0.0, 0.0);
        for (k, state_c) in coarse.states.iter().enumerate().skip(1) {
            let state_f = &fine.states[k * r];
            su += tau_c * l2(&state_c.u, &state_f.u);
            schi += tau_c * l2(&state_c.chi, &state_f.chi);
            sc += tau_c * l2(&state_c.c, &state_f.c);
            sth += tau_c * l2(&state_c.theta, &state_f.theta);
        }
        rows.push(StudyRow {
            tau_coarse: tau_c,
            tau_fine: tau_f,
            err_u: su.sqrt(),
            err_chi: schi.sqrt(),
            err_c: sc.sqrt(),
            err_theta: sth.sqrt(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::BoundaryRegion;
    use crate::materials::{
        ChemEval, HydrideModel, MechEval, MechHess, PoroRegularizedModel, RegularSolutionModel,
        ThermEval, ZetaCoeffs,
    };
    use crate::stepper::{advance, BoundaryData, RegionData, SchemeParams, TimeFn};
    use crate::tensor::Coeff2;
    use crate::test_support::*;

    /// State with u = u_slope·x, χ = c = their given profiles, v = 0.
    fn profile_state(
        pb: &Problem,
        u: NodalField,
        v: NodalField,
        chi: NodalField,
        c: NodalField,
        d: NodalField,
        theta: f64,
    ) -> State {
        let n = pb.mesh.n_nodes();
        State::initialize(
            &pb.mesh,
            pb.model.as_ref(),
            u,
            v,
            chi,
            c,
            d,
            NodalField::constant(n, &[theta]),
        )
        .unwrap()
    }

    // -----------------------------------------------------------------------
    // Stored energies
    // -----------------------------------------------------------------------

    #[test]
    fn stored_energy_hand_values() {
        // Single cell, E_e = 1, d = 1: mechanical density (δ+d)·½·C·E² = 0.55;
        // constant velocity 0.3 adds ½ρ∫v² = 0.045; enthalpy c_v·θ = 2.
        let pb = interval_problem(
            1,
            hydride(1, &[]),
            BoundaryData::zero(1),
            SchemeParams::new(0.1, 1.0),
        );
        let n = pb.mesh.n_nodes();
        let s = profile_state(
            &pb,
            linear_x(&pb, 1.0),
            NodalField::constant(n, &[0.3]),
            NodalField::constant(n, &[0.0]),
            NodalField::constant(n, &[0.0]),
            NodalField::constant(n, &[1.0]),
            1.0,
        );
        assert_relative_eq!(mech_chem_energy(&pb, &s).unwrap(), 0.595, epsilon = 1e-14);
        assert_relative_eq!(total_energy(&pb, &s).unwrap(), 2.595, epsilon = 1e-14);

        // Linear profiles χ = c = x (chemical energy vanishes on the
        // manifold c = χ), zero displacement, κ₁ = 2:
        //   gradient term   ½·κ₁·∫(χ′)²   = 1,
        //   elastic term    ∫1.1·½(0.2x)² = 0.022/3.
        let pb = interval_problem(
            4,
            hydride(1, &[("kappa1", 2.0)]),
            BoundaryData::zero(1),
            SchemeParams::new(0.1, 1.0),
        );
        let n = pb.mesh.n_nodes();
        let s = profile_state(
            &pb,
            NodalField::zeros(n, 1),
            NodalField::zeros(n, 1),
            linear_x(&pb, 1.0),
            linear_x(&pb, 1.0),
            NodalField::constant(n, &[1.0]),
            0.0,
        );
        let e_mc = mech_chem_energy(&pb, &s).unwrap();
        assert_relative_eq!(e_mc, 1.0 + 0.022 / 3.0, epsilon = 1e-13);
        // θ = 0 carries no enthalpy: the totals coincide.
        assert_relative_eq!(total_energy(&pb, &s).unwrap(), e_mc, epsilon = 1e-15);

        // Sloped damage d = 1 − x adds ½·κ₂·∫(d′)² = 0.005 and weights the
        // elastic density by (1.1 − x); θ = 2 adds c_v·θ = 4 of enthalpy.
        let d_vals: Vec<f64> = (0..n).map(|i| 1.0 - pb.mesh.node_coord(i)[0]).collect();
        let s = profile_state(
            &pb,
            NodalField::zeros(n, 1),
            NodalField::zeros(n, 1),
            linear_x(&pb, 1.0),
            linear_x(&pb, 1.0),
            NodalField::from_values(1, d_vals).unwrap(),
            2.0,
        );
        let e_mc = mech_chem_energy(&pb, &s).unwrap();
        assert_relative_eq!(e_mc, 1.0 + 0.02 * (1.1 / 3.0 - 0.25) + 0.005, epsilon = 1e-13);
        assert_relative_eq!(total_energy(&pb, &s).unwrap(), e_mc + 4.0, epsilon = 1e-13);
    }

    // -----------------------------------------------------------------------
    // Ledger on a pure boundary-heating run
    // -----------------------------------------------------------------------

    /// Mechanically relaxed, chemically uniform bar heated through the right
    /// boundary: every ledger entry has a closed form.
    fn heating_problem(strict: bool, t_end: f64) -> (Problem, State) {
        let mut bc = BoundaryData::zero(1);
        bc.regions.insert(BoundaryRegion::Right, RegionData::zero(1));
        bc.regions.get_mut(&BoundaryRegion::Right).unwrap().q_s = TimeFn::Const(0.3);
        let mut sp = SchemeParams::new(0.05, t_end);
        sp.strict = strict;
        let pb = interval_problem(4, hydride(1, &[]), bc, sp);
        let n = pb.mesh.n_nodes();
        let s0 = profile_state(
            &pb,
            linear_x(&pb, 0.06),
            NodalField::zeros(n, 1),
            NodalField::constant(n, &[0.3]),
            NodalField::constant(n, &[0.3]),
            NodalField::constant(n, &[1.0]),
            1.0,
        );
        (pb, s0)
    }

    #[test]
    fn boundary_heating_ledger_is_exact() {
        let (pb, s0) = heating_problem(true, 0.15);
        let tau = pb.params.tau;
        let traj = run(&pb, &s0).unwrap();
        assert_eq!(traj.ledger.len(), 3);
        assert_eq!(traj.states.len(), 4);

        // E_MC starts (and stays) at zero: relaxed strain, c = χ, no motion.
        let mut e_prev = total_energy(&pb, &traj.states[0]).unwrap();
        assert_relative_eq!(e_prev, 2.0, epsilon = 1e-13);
        for row in &traj.ledger {
            assert!(row.e_mc.abs() <= 1e-12);
            assert_relative_eq!(row.work_therm, 0.3, epsilon = 1e-14);
            assert!(row.work_mech.abs() <= 1e-12 && row.work_chem.abs() <= 1e-12);
            assert!(row.diss_visc.abs() <= 1e-14);
            assert!(row.diss_phase.abs() <= 1e-14);
            assert!(row.diss_damage.abs() <= 1e-14);
            assert!(row.diss_diffusive.abs() <= 1e-14);
            // Total energy grows by exactly the boundary heat τ·∫q_s.
            assert_relative_eq!(row.e_tot, e_prev + tau * 0.3, epsilon = 1e-11);
            assert!(row.total_balance_residual.abs() <= 1e-10);
            // Heat input is not mechanical work: the mechano-chemical
            // inequality is strict here, residual −τ·∫q_s.
            assert_relative_eq!(row.inequality_residual, -tau * 0.3, epsilon = 1e-11);
            e_prev = row.e_tot;
        }

        // The displacement, phase, concentration, and damage never move.
        let last = traj.states.last().unwrap();
        assert_field_eq(&last.u, &traj.states[0].u);
        assert_field_eq(&last.chi, &traj.states[0].chi);
        assert_field_eq(&last.c, &traj.states[0].c);
        assert_field_eq(&last.d, &traj.states[0].d);
        // Heat spreads from the right end; nothing cools below the start.
        assert!(last.theta.values().iter().all(|&t| t >= 1.0 - 1e-12));
        assert!(last.theta.values().iter().any(|&t| t > 1.01));

        for pair in traj.states.windows(2) {
            for rep in conservation_suite(&pb, &pair[0], &pair[1]).unwrap() {
                assert!(rep.pass, "{}: {}", rep.name, rep.witness);
            }
        }
    }

    #[test]
    fn conservation_suite_flags_each_violation() {
        let (pb, s0) = heating_problem(false, 0.05);
        let next = advance(&pb, &s0, &prev2_start(&pb, &s0)).unwrap();
        let find = |reports: &[CheckReport], name: &str| -> CheckReport {
            reports
                .iter()
                .find(|r| r.name == name)
                .unwrap_or_else(|| panic!("missing report {name}"))
                .clone()
        };

        for rep in conservation_suite(&pb, &s0, &next).unwrap() {
            assert!(rep.pass, "{}: {}", rep.name, rep.witness);
        }

        // Injected solute out of nowhere.
        let mut bad = next.clone();
        bad.c.set(0, 0, bad.c.get(0, 0) + 0.01);
        let reports = conservation_suite(&pb, &s0, &bad).unwrap();
        assert!(!find(&reports, "solute mass conservation").pass);

        // Enthalpy not accounted for by any source.
        let mut bad = next.clone();
        bad.w.set(0, 0, bad.w.get(0, 0) + 0.01);
        let reports = conservation_suite(&pb, &s0, &bad).unwrap();
        assert!(!find(&reports, "enthalpy ledger").pass);

        // Negative temperature.
        let mut bad = next.clone();
        bad.theta.set(2, 0, -1e-3);
        let reports = conservation_suite(&pb, &s0, &bad).unwrap();
        assert!(!find(&reports, "positivity and box constraints").pass);

        // Damage rising between steps.
        let mut bad_prev = s0.clone();
        bad_prev.d.set(1, 0, 0.5);
        let reports = conservation_suite(&pb, &bad_prev, &next).unwrap();
        assert!(!find(&reports, "damage monotonicity").pass);
    }

    // -----------------------------------------------------------------------
    // Semi-stability
    // -----------------------------------------------------------------------

    #[test]
    fn semistability_detects_profitable_drop() {
        let pb = interval_problem(
            2,
            hydride(1, &[]),
            BoundaryData::zero(1),
            SchemeParams::new(0.1, 1.0),
        );
        let n = pb.mesh.n_nodes();
        let state = |slope: f64, d: f64| {
            profile_state(
                &pb,
                linear_x(&pb, slope),
                NodalField::zeros(n, 1),
                NodalField::constant(n, &[0.0]),
                NodalField::constant(n, &[0.0]),
                NodalField::constant(n, &[d]),
                1.0,
            )
        };

        // Strain 1.5 drives ∂_dφ_mech = ½·1.5² = 1.125 past the toughness
        // α = 0.5: lowering d pays, so intact damage is not semi-stable.
        let rep = check_semistability(&pb, &state(1.5, 1.0), 9, 7).unwrap();
        assert!(!rep.pass, "{}", rep.witness);
        assert!(rep.witness.contains("margin"));

        // Fully damaged there is no admissible competitor left, and below
        // the threshold (½·0.5² = 0.125 < α) staying intact is optimal.
        assert!(check_semistability(&pb, &state(1.5, 0.0), 9, 7).unwrap().pass);
        assert!(check_semistability(&pb, &state(0.5, 0.7), 9, 7).unwrap().pass);
    }

    // -----------------------------------------------------------------------
    // Gradient check
    // -----------------------------------------------------------------------

    #[test]
    fn gradient_check_accepts_builtins() {
        let models: Vec<Box<dyn MaterialModel>> = vec![
            Box::new(HydrideModel::for_tests(1)),
            Box::new(HydrideModel::from_params(2, &params(&[("lambda", 0.5)])).unwrap()),
            Box::new(RegularSolutionModel::from_params(1, &BTreeMap::new()).unwrap()),
            Box::new(RegularSolutionModel::from_params(2, &BTreeMap::new()).unwrap()),
            Box::new(PoroRegularizedModel::from_params(1, &BTreeMap::new()).unwrap()),
            Box::new(PoroRegularizedModel::from_params(2, &BTreeMap::new()).unwrap()),
        ];
        for model in &models {
            let rep = gradient_check(model.as_ref(), 100, 42).unwrap();
            assert_eq!(rep.name, "material gradient check");
            assert!(rep.pass, "{}: {}", model.name(), rep.witness);
        }
    }

    /// Delegates everything to the wrapped model except the strain partials
    /// of φ_mech, which it scales by 2%.
    struct SkewedGradients(HydrideModel);

    impl MaterialModel for SkewedGradients {
        fn name(&self) -> &str {
            "skewed"
        }
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn n_phase(&self) -> usize {
            self.0.n_phase()
        }
        fn rho(&self) -> f64 {
            self.0.rho()
        }
        fn kappa1(&self) -> f64 {
            self.0.kappa1()
        }
        fn kappa2(&self) -> f64 {
            self.0.kappa2()
        }
        fn chi_box(&self) -> (Vec<f64>, Vec<f64>) {
            self.0.chi_box()
        }
        fn coupling(&self) -> &[Sym2] {
            self.0.coupling()
        }
        fn visc(&self) -> (f64, f64) {
            self.0.visc()
        }
        fn m_semiconvex(&self) -> f64 {
            self.0.m_semiconvex()
        }
        fn zeta_b_min(&self) -> f64 {
            self.0.zeta_b_min()
        }
        fn zeta_coeffs(&self, s: &crate::materials::StateSample) -> ZetaCoeffs {
            self.0.zeta_coeffs(s)
        }
        fn phi_mech(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechEval> {
            let mut ev = self.0.phi_mech(e, chi, d)?;
            for g in &mut ev.d_e {
                *g *= 1.02;
            }
            Ok(ev)
        }
        fn phi_mech_hess(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechHess> {
            self.0.phi_mech_hess(e, chi, d)
        }
        fn phi_mech_d2d(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<(f64, f64, f64)> {
            self.0.phi_mech_d2d(e, chi, d)
        }
        fn phi_chem(&self, chi: &[f64], c: f64) -> Result<ChemEval> {
            self.0.phi_chem(chi, c)
        }
        fn phi_term(&self, chi: &[f64], theta: f64) -> Result<ThermEval> {
            self.0.phi_term(chi, theta)
        }
        fn e_term(&self, chi: &[f64], theta: f64) -> Result<(f64, f64)> {
            self.0.e_term(chi, theta)
        }
        fn alpha(&self, chi: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
            self.0.alpha(chi)
        }
        fn mobility(&self, s: &crate::materials::StateSample) -> Coeff2 {
            self.0.mobility(s)
        }
        fn conductivity(&self, s: &crate::materials::StateSample) -> Coeff2 {
            self.0.conductivity(s)
        }
    }

    #[test]
    fn gradient_check_rejects_miswired_derivative() {
        let model = SkewedGradients(HydrideModel::for_tests(1));
        let rep = gradient_check(&model, 100, 42).unwrap();
        assert!(!rep.pass);
        assert!(rep.witness.contains("phi_mech d_e"), "{}", rep.witness);
    }

    // -----------------------------------------------------------------------
    // Convergence study
    // -----------------------------------------------------------------------

    #[test]
    fn convergence_study_frozen_run_and_validation() {
        // A loadless equilibrium stays put at every τ: all differences
        // vanish and the rows just record the τ pairs.
        let make = |tau: f64| -> Result<(Problem, State)> {
            let pb = interval_problem(
                2,
                hydride(1, &[]),
                BoundaryData::zero(1),
                SchemeParams::new(tau, 0.6),
            );
            let s0 = uniform_state(&pb, 0.0, 0.0, 1.0, 1.0);
            Ok((pb, s0))
        };
        let rows = convergence_study(&make, &[0.2, 0.1, 0.05]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].tau_coarse, rows[0].tau_fine), (0.2, 0.1));
        assert_eq!((rows[1].tau_coarse, rows[1].tau_fine), (0.1, 0.05));
        for row in &rows {
            assert!(row.err_u <= 1e-12, "err_u = {}", row.err_u);
            assert!(row.err_chi <= 1e-12);
            assert!(row.err_c <= 1e-12);
            assert!(row.err_theta <= 1e-12);
        }

        let msg = |e: SolverError| format!("{e}");
        assert!(msg(convergence_study(&make, &[0.1, 0.1]).unwrap_err())
            .contains("strictly decreasing"));
        assert!(msg(convergence_study(&make, &[0.2, 0.15]).unwrap_err()).contains("divide"));

        let make_sparse = |tau: f64| -> Result<(Problem, State)> {
            let mut sp = SchemeParams::new(tau, 0.4);
            sp.keep_every = 2;
            let pb = interval_problem(2, hydride(1, &[]), BoundaryData::zero(1), sp);
            let s0 = uniform_state(&pb, 0.0, 0.0, 1.0, 1.0);
            Ok((pb, s0))
        };
        assert!(
            msg(convergence_study(&make_sparse, &[0.2, 0.1]).unwrap_err()).contains("keep_every")
        );

        // Even with the construction override, a study never runs above the
        // admissible step bound (0.25 for this mixing energy).
        let make_rs = |tau: f64| -> Result<(Problem, State)> {
            let model =
                Box::new(RegularSolutionModel::from_params(1, &params(&[("b_mix", 3.0)]))?);
            let mut sp = SchemeParams::new(tau, 0.4);
            sp.allow_large_tau = true;
            let pb = interval_problem(2, model, BoundaryData::zero(1), sp);
            let s0 = uniform_state(&pb, 0.5, 0.5, 1.0, 1.0);
            Ok((pb, s0))
        };
        assert!(msg(convergence_study(&make_rs, &[0.3, 0.1]).unwrap_err()).contains("admissible"));
    }

    // -----------------------------------------------------------------------
    // CSV shape
    // -----------------------------------------------------------------------

    #[test]
    fn ledger_csv_row_matches_header() {
        assert_eq!(EnergyLedgerRow::CSV_HEADER.split(',').count(), 13);
        let (pb, s0) = heating_problem(false, 0.05);
        let next = advance(&pb, &s0, &prev2_start(&pb, &s0)).unwrap();
        let row = ledger_step(&pb, &s0, &next).unwrap().csv_row();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 13);
        for field in fields {
            field.parse::<f64>().expect("csv entries are plain floats");
        }
    }

    // -----------------------------------------------------------------------
    // Structure preservation across random single steps
    // -----------------------------------------------------------------------

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_single_steps_preserve_structure(
            chi0 in 0.05f64..0.95,
            c0 in 0.0f64..1.0,
            d0 in 0.0f64..1.0,
            th0 in 0.1f64..3.0,
            pre_strain in -1.2f64..1.2,
            traction in -0.1f64..0.1,
            q_in in 0.0f64..0.2,
            h_in in 0.0f64..0.1,
        ) {
            let mut bc = BoundaryData::zero(1);
            bc.regions.insert(BoundaryRegion::Right, RegionData::zero(1));
            let right = bc.regions.get_mut(&BoundaryRegion::Right).unwrap();
            right.f_s[0] = TimeFn::Const(traction);
            right.q_s = TimeFn::Const(q_in);
            right.h_s = TimeFn::Const(h_in);
            let pb = interval_problem(4, hydride(1, &[]), bc, SchemeParams::new(0.05, 0.05));
            let n = pb.mesh.n_nodes();
            // Uniform elastic pre-strain on top of the relaxed profile;
            // |pre_strain| > 1 crosses the damage threshold.
            let u0 = linear_x(&pb, 0.2 * chi0 + pre_strain);
            let s0 = State::initialize(
                &pb.mesh,
                pb.model.as_ref(),
                u0,
                NodalField::zeros(n, 1),
                NodalField::constant(n, &[chi0]),
                NodalField::constant(n, &[c0]),
                NodalField::constant(n, &[d0]),
                NodalField::constant(n, &[th0]),
            )
            .unwrap();
            let next = advance(&pb, &s0, &prev2_start(&pb, &s0)).unwrap();

            for rep in conservation_suite(&pb, &s0, &next).unwrap() {
                prop_assert!(rep.pass, "{}: {}", rep.name, rep.witness);
            }
            let row = ledger_step(&pb, &s0, &next).unwrap();
            let scale = 1.0 + row.e_tot.abs();
            prop_assert!(
                row.inequality_residual <= 1e-8 * scale,
                "inequality residual {} at scale {}",
                row.inequality_residual,
                scale
            );
            prop_assert!(row.diss_visc >= 0.0);
            prop_assert!(row.diss_phase >= 0.0);
            prop_assert!(row.diss_damage >= -1e-12);
            prop_assert!(row.diss_diffusive >= -1e-15);
        }
    }
}
