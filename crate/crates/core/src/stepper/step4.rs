//! Step 4: heat transfer. A semilinear equation for the temperature with the
//! enthalpy update w^k = e_term(χ^k, θ^k): dissipation heat sources from the
//! first three steps are assembled once (the quadratic viscous and diffusive
//! ones truncated by 1/(1+τ|·|²)), the adiabatic phase-coupling source is kept
//! implicit in θ, and the conductivity — the only all-current coefficient of
//! the scheme — is resolved by an outer fixed point around a damped Newton
//! solve. The lumped enthalpy row sums make the integral of w track the
//! sources and the boundary influx exactly.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{assemble_weighted_stiffness, SparseMatrix};
use crate::error::{Result, SolverError};
use crate::geometry::NodalField;
use crate::materials::zeta_dissipation_rate;
use crate::tensor::{Sym2, DOT_WEIGHTS};

use super::{
    nodal_strain, Lag, LoadSet, NodeSampler, Problem, QpSampler, State, Step1Out, Step2Out,
    DELAYED_ARGS,
};

pub(crate) struct Step4Out {
    pub w: NodalField,
    pub theta: NodalField,
}

/// Current-step fields the heat sources are built from.
pub(crate) struct HeatSourceInput<'a> {
    pub chi: &'a NodalField,
    /// (χ^k − χ^{k−1})/τ.
    pub chi_rate: &'a NodalField,
    pub e_e: &'a [Sym2],
    pub d: &'a NodalField,
    pub mu: &'a NodalField,
}

/// Nodal heat-source load vectors (already integrated against the hat
/// functions), split by origin so the ledger can account for each channel.
pub(crate) struct HeatSources {
    /// Phase dissipation a|χ̇| + 2b|χ̇|², mass-lumped, coefficients sampled
    /// at the previous step.
    pub zeta: Vec<f64>,
    /// Damage dissipation α(χ^k)(d^{k−1}−d^k)/τ; nonnegative entrywise.
    pub damage: Vec<f64>,
    /// Viscous dissipation 𝔻Ė_e:Ė_e/(1+τ|Ė_e|²).
    pub viscous: Vec<f64>,
    /// Diffusive dissipation 𝐌∇μ·∇μ/(1+τ|∇μ|²) with the delayed 𝐌 sample.
    pub diffusive: Vec<f64>,
}

impl HeatSources {
    pub fn total_at(&self, i: usize) -> f64 {
        self.zeta[i] + self.damage[i] + self.viscous[i] + self.diffusive[i]
    }
}

pub(crate) fn assemble_heat_sources(
    pb: &Problem,
    prev: &State,
    cur: &HeatSourceInput,
) -> Result<HeatSources> {
    let mesh = &pb.mesh;
    let model = pb.model.as_ref();
    let tau = pb.params.tau;
    let n = mesh.n_nodes();
    let np = pb.n_phase();
    let nqp = mesh.n_qp();

    let e_nodal_prev = nodal_strain(mesh, &prev.e_e);
    let zeta_sampler = NodeSampler {
        pattern: DELAYED_ARGS.zeta_step4,
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
    let mut zeta = vec![0.0; n];
    for (i, z) in zeta.iter_mut().enumerate() {
        let coeffs = model.zeta_coeffs(&zeta_sampler.sample(i));
        let rate = &cur.chi_rate.values()[i * np..(i + 1) * np];
        *z = pb.mass_lumped[i] * zeta_dissipation_rate(&coeffs, rate);
    }

    let alpha_sampler = QpSampler {
        pattern: DELAYED_ARGS.alpha_step3,
        mesh,
        e_prev: &prev.e_e,
        e_curr: cur.e_e,
        chi_prev: &prev.chi,
        chi_curr: cur.chi,
        d_prev: &prev.d,
        d_curr: cur.d,
        c_prev: &prev.c,
        c_curr: &prev.c,
        theta_prev: &prev.theta,
        theta_curr: &prev.theta,
    };
    let mobility_sampler = QpSampler {
        pattern: DELAYED_ARGS.mobility_step4,
        mesh,
        e_prev: &prev.e_e,
        e_curr: cur.e_e,
        chi_prev: &prev.chi,
        chi_curr: cur.chi,
        d_prev: &prev.d,
        d_curr: cur.d,
        c_prev: &prev.c,
        c_curr: &prev.c,
        theta_prev: &prev.theta,
        theta_curr: &prev.theta,
    };
    let (lambda_v, mu_v) = if pb.params.quasistatic {
        (0.0, 0.0)
    } else {
        model.visc()
    };
    let viscous_on = lambda_v != 0.0 || mu_v != 0.0;

    let mut damage = vec![0.0; n];
    let mut viscous = vec![0.0; n];
    let mut diffusive = vec![0.0; n];
    for cell in 0..mesh.n_cells() {
        let nodes = mesh.cell_nodes(cell);
        let g_mu = cur.mu.grad_on_cell(mesh, cell, 0);
        let g_norm2 = g_mu[0] * g_mu[0] + g_mu[1] * g_mu[1];
        for q in 0..nqp {
            let wq = mesh.qp_weight(cell, q);
            let phi = mesh.qp_basis(q);

            let alpha = alpha_sampler.eval(cell, q, &|s| model.alpha(s.chi).map(|(v, _, _)| v))?;
            let d_prev = prev.d.at_qp(mesh, cell, q, 0);
            let d_cur = cur.d.at_qp(mesh, cell, q, 0);
            let s_dam = alpha * (d_prev - d_cur) / tau;

            let s_visc = if viscous_on {
                let idx = cell * nqp + q;
                let rate = (cur.e_e[idx] - prev.e_e[idx]) * (1.0 / tau);
                let c = rate.comps(mesh.dim());
                let tr = c[0] + c[1];
                let frob: f64 = c
                    .iter()
                    .zip(DOT_WEIGHTS)
                    .map(|(v, w)| w * v * v)
                    .sum();
                let q_visc = lambda_v * tr * tr + 2.0 * mu_v * frob;
                q_visc / (1.0 + tau * frob)
            } else {
                0.0
            };

            let m = mobility_sampler.eval(cell, q, &|s| model.mobility(s));
            let mg = m.apply(g_mu);
            let s_diff = (mg[0] * g_mu[0] + mg[1] * g_mu[1]) / (1.0 + tau * g_norm2);

            for (a, &node) in nodes.iter().enumerate() {
                let w_a = wq * phi[a];
                damage[node] += w_a * s_dam;
                viscous[node] += w_a * s_visc;
                diffusive[node] += w_a * s_diff;
            }
        }
    }
    Ok(HeatSources {
        zeta,
        damage,
        viscous,
        diffusive,
    })
}

/// Conductivity stiffness at the given (fully current) state sample.
fn conductivity_matrix(
    pb: &Problem,
    prev: &State,
    s1: &Step1Out,
    c_new: &NodalField,
    d_new: &NodalField,
    theta: &NodalField,
) -> Result<SparseMatrix> {
    let sampler = QpSampler {
        pattern: DELAYED_ARGS.conductivity_step4,
        mesh: &pb.mesh,
        e_prev: &prev.e_e,
        e_curr: &s1.e_e,
        chi_prev: &prev.chi,
        chi_curr: &s1.chi,
        d_prev: &prev.d,
        d_curr: d_new,
        c_prev: &prev.c,
        c_curr: c_new,
        theta_prev: &prev.theta,
        theta_curr: theta,
    };
    let model = pb.model.as_ref();
    assemble_weighted_stiffness(&pb.mesh, 1, &|cell, q| {
        sampler.eval(cell, q, &|s| model.conductivity(s))
    })
}

/// Residual of the lumped enthalpy update at frozen conductivity:
/// F_i = m_i (e_term(χ^k_i, θ_i) − w^{k−1}_i) + τ(A_K θ)_i
///       − τ m_i ∂_χφ_term(χ^k_i, θ_i)·χ̇_i − τ (sources + b_q)_i.
struct HeatResidual<'a> {
    pb: &'a Problem,
    chi: &'a NodalField,
    chi_rate: &'a NodalField,
    w_prev: &'a [f64],
    fixed: &'a [f64],
}

impl HeatResidual<'_> {
    fn eval(&self, a_k: &SparseMatrix, theta: &[f64], f: &mut [f64]) -> Result<()> {
        let tau = self.pb.params.tau;
        let np = self.pb.n_phase();
        let model = self.pb.model.as_ref();
        let a_theta = a_k.mat_vec(theta);
        for (i, fi) in f.iter_mut().enumerate() {
            let chi_i = &self.chi.values()[i * np..(i + 1) * np];
            let rate_i = &self.chi_rate.values()[i * np..(i + 1) * np];
            let (e_i, _) = model.e_term(chi_i, theta[i])?;
            let t = model.phi_term(chi_i, theta[i])?;
            let ad: f64 = t.d_chi.iter().zip(rate_i).map(|(a, b)| a * b).sum();
            let m = self.pb.mass_lumped[i];
            *fi = m * (e_i - self.w_prev[i]) + tau * a_theta[i]
                - tau * m * ad
                - tau * self.fixed[i];
        }
        Ok(())
    }

    fn jacobian(&self, a_k: &SparseMatrix, theta: &[f64]) -> Result<DMatrix<f64>> {
        let n = theta.len();
        let tau = self.pb.params.tau;
        let np = self.pb.n_phase();
        let model = self.pb.model.as_ref();
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n {
            let chi_i = &self.chi.values()[i * np..(i + 1) * np];
            let rate_i = &self.chi_rate.values()[i * np..(i + 1) * np];
            let (_, de_i) = model.e_term(chi_i, theta[i])?;
            let t = model.phi_term(chi_i, theta[i])?;
            let dad: f64 = t.d_chi_theta.iter().zip(rate_i).map(|(a, b)| a * b).sum();
            j[(i, i)] += self.pb.mass_lumped[i] * (de_i - tau * dad);
        }
        for &(r, c, v) in a_k.triplets() {
            j[(r, c)] += tau * v;
        }
        Ok(j)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub(crate) fn solve(
    pb: &Problem,
    prev: &State,
    s1: &Step1Out,
    s2: &Step2Out,
    d_new: &NodalField,
    loads: &LoadSet,
) -> Result<Step4Out> {
    let mesh = &pb.mesh;
    let model = pb.model.as_ref();
    let tau = pb.params.tau;
    let n = mesh.n_nodes();
    let np = pb.n_phase();

    assert_eq!(DELAYED_ARGS.phi_term_step4.chi, Lag::Curr);
    assert_eq!(DELAYED_ARGS.phi_term_step4.theta, Lag::Curr);

    let mut chi_rate = NodalField::zeros(n, np);
    for (r, (c1, c0)) in chi_rate
        .values_mut()
        .iter_mut()
        .zip(s1.chi.values().iter().zip(prev.chi.values()))
    {
        *r = (c1 - c0) / tau;
    }
    let input = HeatSourceInput {
        chi: &s1.chi,
        chi_rate: &chi_rate,
        e_e: &s1.e_e,
        d: d_new,
        mu: &s2.mu,
    };
    let sources = assemble_heat_sources(pb, prev, &input)?;
    let fixed: Vec<f64> = (0..n)
        .map(|i| sources.total_at(i) + loads.b_q[i])
        .collect();

    let w_prev: Vec<f64> = prev.w.values().to_vec();
    let scale_w = 1.0_f64
        .max(inf_norm(
            &w_prev
                .iter()
                .zip(&pb.mass_lumped)
                .map(|(w, m)| w * m)
                .collect::<Vec<_>>(),
        ))
        .max(tau * inf_norm(&fixed));
    let residual = HeatResidual {
        pb,
        chi: &s1.chi,
        chi_rate: &chi_rate,
        w_prev: &w_prev,
        fixed: &fixed,
    };

    let mut theta = prev.theta.values().to_vec();
    let mut f = vec![0.0; n];
    let mut converged = false;
    for _outer in 0..50 {
        let theta_field = NodalField::from_values(1, theta.clone())?;
        let a_k = conductivity_matrix(pb, prev, s1, &s2.c, d_new, &theta_field)?;

        // Damped Newton at frozen conductivity.
        residual.eval(&a_k, &theta, &mut f)?;
        let mut norm = inf_norm(&f);
        for _newton in 0..100 {
            if norm <= 1e-13 * scale_w {
                break;
            }
            let j = residual.jacobian(&a_k, &theta)?;
            let rhs = DVector::from_column_slice(&f);
            let delta = j.lu().solve(&rhs).ok_or_else(|| {
                SolverError::numeric("heat Newton", "singular Jacobian".to_string())
            })?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ls in 0..60 {
                let trial: Vec<f64> = theta
                    .iter()
                    .zip(delta.iter())
                    .map(|(x, d)| x - t * d)
                    .collect();
                let mut f_trial = vec![0.0; n];
                residual.eval(&a_k, &trial, &mut f_trial)?;
                let norm_trial = inf_norm(&f_trial);
                if norm_trial < (1.0 - 1e-4 * t) * norm || norm_trial <= 1e-13 * scale_w {
                    theta = trial;
                    f = f_trial;
                    norm = norm_trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return Err(SolverError::numeric(
                    "heat Newton",
                    format!("line search stalled at |F| = {norm:.3e}"),
                ));
            }
        }
        if norm > 1e-13 * scale_w {
            return Err(SolverError::numeric(
                "heat Newton",
                format!("no convergence at frozen conductivity, |F| = {norm:.3e}"),
            ));
        }

        // Refresh the conductivity at the new temperature and accept when the
        // true (unfrozen) residual is already consistent.
        let theta_field = NodalField::from_values(1, theta.clone())?;
        let a_next = conductivity_matrix(pb, prev, s1, &s2.c, d_new, &theta_field)?;
        residual.eval(&a_next, &theta, &mut f)?;
        if inf_norm(&f) <= 1e-10 * scale_w {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolverError::numeric(
            "heat fixed point",
            "conductivity fixed point did not converge in 50 iterations".to_string(),
        ));
    }

    let mut w = NodalField::zeros(n, 1);
    for i in 0..n {
        let chi_i = &s1.chi.values()[i * np..(i + 1) * np];
        let (e_i, _) = model.e_term(chi_i, theta[i])?;
        w.set(i, 0, e_i);
    }
    Ok(Step4Out {
        w,
        theta: NodalField::from_values(1, theta)?,
    })
}
