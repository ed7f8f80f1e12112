//! Step 1: joint minimization over (u, χ) of the incremental mechanical /
//! phase functional with delayed damage, concentration, temperature, and
//! dissipation-coefficient arguments.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SolverError};
use crate::geometry::NodalField;
use crate::minimizers::{composite_min, Bounds, L1Group, SmoothOracle, SolveReport};
use crate::tensor::Sym2;

use super::{
    elastic_strain, nodal_strain, LoadSet, NodeSampler, Problem, State, DELAYED_ARGS,
};

pub(crate) struct Step1Out {
    pub u: NodalField,
    pub chi: NodalField,
    pub e_e: Vec<Sym2>,
    pub sigma_r: NodalField,
    #[allow(dead_code)]
    pub report: SolveReport,
}

/// The strain components' dependence on one displacement dof: plain
/// chain-rule rows (the xy slot of a derivative vector already accounts for
/// both off-diagonal entries, so symmetric-gradient factors of ½ appear
/// here and nowhere else).
fn strain_rows(dim: usize, g: [f64; 2], comp: usize) -> [f64; 3] {
    if dim == 1 {
        [g[0], 0.0, 0.0]
    } else if comp == 0 {
        [g[0], 0.0, 0.5 * g[1]]
    } else {
        [0.0, g[1], 0.5 * g[0]]
    }
}

/// Plain partials of the viscous density 𝔻S:S = λ_v tr(S)² + 2μ_v S:S.
fn visc_density_and_grad(lambda_v: f64, mu_v: f64, s: &Sym2) -> (f64, [f64; 3]) {
    let t = s.trace();
    let value = lambda_v * t * t + 2.0 * mu_v * s.norm2();
    let grad = [
        2.0 * lambda_v * t + 4.0 * mu_v * s.xx,
        2.0 * lambda_v * t + 4.0 * mu_v * s.yy,
        8.0 * mu_v * s.xy,
    ];
    (value, grad)
}

fn visc_hessian(lambda_v: f64, mu_v: f64) -> [[f64; 3]; 3] {
    [
        [2.0 * lambda_v + 4.0 * mu_v, 2.0 * lambda_v, 0.0],
        [2.0 * lambda_v, 2.0 * lambda_v + 4.0 * mu_v, 0.0],
        [0.0, 0.0, 8.0 * mu_v],
    ]
}

/// Smooth part of the step-1 objective over x = [u dofs; χ dofs].
struct Step1Oracle<'a> {
    pb: &'a Problem,
    prev: &'a State,
    /// Nodal dissipation coefficients at the delayed arguments.
    za: Vec<f64>,
    zb: Vec<f64>,
    /// m_i·∂_χφ_term at the delayed arguments (linear adiabatic term).
    lin_chi: Vec<f64>,
    /// Inertia target 2u^{k−1} − u^{k−2}.
    u_star: Vec<f64>,
    /// ρ/τ², zero in quasistatic mode.
    inertia: f64,
    lambda_v: f64,
    mu_v: f64,
    b_u: &'a [f64],
    nu: usize,
    nchi: usize,
    err: Option<SolverError>,
}

impl<'a> Step1Oracle<'a> {
    fn new(
        pb: &'a Problem,
        prev: &'a State,
        prev2_u: &NodalField,
        loads: &'a LoadSet,
    ) -> Result<Step1Oracle<'a>> {
        let mesh = &pb.mesh;
        let model = pb.model.as_ref();
        let np = pb.n_phase();
        let n = mesh.n_nodes();
        let tau = pb.params.tau;

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
        let mut za = Vec::with_capacity(n);
        let mut zb = Vec::with_capacity(n);
        for i in 0..n {
            let coeffs = model.zeta_coeffs(&zeta_sampler.sample(i));
            za.push(coeffs.a);
            zb.push(coeffs.b);
        }

        // Fully delayed adiabatic coupling (χ^{k−1}, θ^{k−1}): the current
        // fields do not exist yet, which is exactly what the table records.
        assert_eq!(DELAYED_ARGS.phi_term_step1.chi, super::Lag::Prev);
        assert_eq!(DELAYED_ARGS.phi_term_step1.theta, super::Lag::Prev);
        let mut lin_chi = vec![0.0; n * np];
        for i in 0..n {
            let chi_i = &prev.chi.values()[i * np..(i + 1) * np];
            let te = model.phi_term(chi_i, prev.theta.get(i, 0))?;
            for j in 0..np {
                lin_chi[i * np + j] = pb.mass_lumped[i] * te.d_chi[j];
            }
        }

        let nu = n * mesh.dim();
        let mut u_star = vec![0.0; nu];
        for (us, (up, up2)) in u_star
            .iter_mut()
            .zip(prev.u.values().iter().zip(prev2_u.values()))
        {
            *us = 2.0 * up - up2;
        }
        let (inertia, lambda_v, mu_v) = if pb.params.quasistatic {
            (0.0, 0.0, 0.0)
        } else {
            let (lv, mv) = model.visc();
            (model.rho() / (tau * tau), lv, mv)
        };
        Ok(Step1Oracle {
            pb,
            prev,
            za,
            zb,
            lin_chi,
            u_star,
            inertia,
            lambda_v,
            mu_v,
            b_u: &loads.b_u,
            nu,
            nchi: n * np,
            err: None,
        })
    }

    fn take_err(&mut self) -> Result<()> {
        match self.err.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn chi_qp(&self, chi: &[f64], cell: usize, q: usize, out: &mut [f64]) {
        let mesh = &self.pb.mesh;
        let np = out.len();
        let basis = mesh.qp_basis(q);
        out.fill(0.0);
        for (a, &node) in mesh.cell_nodes(cell).iter().enumerate() {
            for j in 0..np {
                out[j] += basis[a] * chi[node * np + j];
            }
        }
    }

    fn strain_from_slice(&self, cell: usize, u: &[f64]) -> Sym2 {
        let mesh = &self.pb.mesh;
        let dim = mesh.dim();
        let mut e = Sym2::ZERO;
        for (a, &node) in mesh.cell_nodes(cell).iter().enumerate() {
            let g = mesh.basis_grad(cell, a);
            if dim == 1 {
                e.xx += u[node] * g[0];
            } else {
                e.xx += u[node * 2] * g[0];
                e.yy += u[node * 2 + 1] * g[1];
                e.xy += 0.5 * (u[node * 2] * g[1] + u[node * 2 + 1] * g[0]);
            }
        }
        e
    }
}

impl SmoothOracle for Step1Oracle<'_> {
    fn dofs(&self) -> usize {
        self.nu + self.nchi
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mesh = &self.pb.mesh;
        let model = self.pb.model.as_ref();
        let dim = mesh.dim();
        let np = self.pb.n_phase();
        let tau = self.pb.params.tau;
        let coupling = model.coupling();
        let (u, chi) = x.split_at(self.nu);
        grad.fill(0.0);
        let (gu, gchi) = grad.split_at_mut(self.nu);
        let mut value = 0.0;
        let mut chi_q = vec![0.0; np];

        for cell in 0..mesh.n_cells() {
            let nodes = mesh.cell_nodes(cell);
            let eps = self.strain_from_slice(cell, u);
            for q in 0..mesh.n_qp() {
                let wq = mesh.qp_weight(cell, q);
                let basis = mesh.qp_basis(q);
                self.chi_qp(chi, cell, q, &mut chi_q);
                let d_qp = self.prev.d.at_qp(mesh, cell, q, 0);
                let mut e = eps;
                for (j, ej) in coupling.iter().enumerate() {
                    e = e - ej.scale(chi_q[j]);
                }
                let me = match model.phi_mech(&e, &chi_q, d_qp) {
                    Ok(me) => me,
                    Err(err) => {
                        self.err.get_or_insert(err);
                        return f64::INFINITY;
                    }
                };
                value += wq * me.value;
                // Plain partial of the quadrature-point energy w.r.t. the
                // elastic-strain components; the viscous part shares the
                // chain rule below.
                let mut pe = me.d_e;
                if self.mu_v != 0.0 || self.lambda_v != 0.0 {
                    let s = (e - self.prev.e_e[cell * mesh.n_qp() + q]).scale(1.0 / tau);
                    let (vd, vg) = visc_density_and_grad(self.lambda_v, self.mu_v, &s);
                    value += 0.5 * tau * wq * vd;
                    for (p, v) in pe.iter_mut().zip(vg) {
                        *p += 0.5 * v;
                    }
                }
                for (a, &node) in nodes.iter().enumerate() {
                    let g = mesh.basis_grad(cell, a);
                    for comp in 0..dim {
                        let rows = strain_rows(dim, g, comp);
                        gu[node * dim + comp] +=
                            wq * (pe[0] * rows[0] + pe[1] * rows[1] + pe[2] * rows[2]);
                    }
                    for (j, ej) in coupling.iter().enumerate() {
                        let ec = ej.comps(dim);
                        let through_e = pe[0] * ec[0] + pe[1] * ec[1] + pe[2] * ec[2];
                        gchi[node * np + j] += wq * basis[a] * (me.d_chi[j] - through_e);
                    }
                }
            }
        }

        // Lumped nodal terms: chemical energy, adiabatic coupling, and the
        // quadratic part of the phase dissipation.
        let n = mesh.n_nodes();
        for i in 0..n {
            let m = self.pb.mass_lumped[i];
            let chi_i = &chi[i * np..(i + 1) * np];
            let ce = match model.phi_chem(chi_i, self.prev.c.get(i, 0)) {
                Ok(ce) => ce,
                Err(err) => {
                    self.err.get_or_insert(err);
                    return f64::INFINITY;
                }
            };
            value += m * ce.value;
            let quad = self.zb[i] * m / tau;
            for j in 0..np {
                let idx = i * np + j;
                let delta = chi[idx] - self.prev.chi.values()[idx];
                value += self.lin_chi[idx] * chi[idx] + quad * delta * delta;
                gchi[idx] += m * ce.d_chi[j] + self.lin_chi[idx] + 2.0 * quad * delta;
            }
        }

        // Phase gradient penalty.
        let kappa1 = model.kappa1();
        value += 0.5 * kappa1 * self.pb.k_chi.quadratic(chi);
        for (gc, kv) in gchi.iter_mut().zip(self.pb.k_chi.mat_vec(chi)) {
            *gc += kappa1 * kv;
        }

        // Inertia and loads.
        if self.inertia != 0.0 {
            let r: Vec<f64> = u.iter().zip(&self.u_star).map(|(a, b)| a - b).collect();
            value += 0.5 * self.inertia * self.pb.mass_u.quadratic(&r);
            for (g, mv) in gu.iter_mut().zip(self.pb.mass_u.mat_vec(&r)) {
                *g += self.inertia * mv;
            }
        }
        for i in 0..self.nu {
            value -= self.b_u[i] * u[i];
            gu[i] -= self.b_u[i];
        }
        value
    }

    fn hessian(&mut self, x: &[f64]) -> DMatrix<f64> {
        let mesh = &self.pb.mesh;
        let model = self.pb.model.as_ref();
        let dim = mesh.dim();
        let np = self.pb.n_phase();
        let tau = self.pb.params.tau;
        let coupling = model.coupling();
        let n_dofs = self.dofs();
        let (u, chi) = x.split_at(self.nu);
        let mut h = DMatrix::zeros(n_dofs, n_dofs);
        let mut chi_q = vec![0.0; np];
        let hv = visc_hessian(self.lambda_v, self.mu_v);
        let viscous = self.mu_v != 0.0 || self.lambda_v != 0.0;

        // Per-dof tangents at one quadrature point: the strain rows and the
        // direct phase contribution (at most one component per dof).
        let npc = mesh.nodes_per_cell();
        let cell_dofs = npc * (dim + np);
        let mut e_rows = vec![[0.0; 3]; cell_dofs];
        let mut chi_rows: Vec<Option<(usize, f64)>> = vec![None; cell_dofs];
        let mut global = vec![0usize; cell_dofs];

        for cell in 0..mesh.n_cells() {
            let nodes = mesh.cell_nodes(cell);
            let eps = self.strain_from_slice(cell, u);
            for q in 0..mesh.n_qp() {
                let wq = mesh.qp_weight(cell, q);
                let basis = mesh.qp_basis(q);
                self.chi_qp(chi, cell, q, &mut chi_q);
                let d_qp = self.prev.d.at_qp(mesh, cell, q, 0);
                let mut e = eps;
                for (j, ej) in coupling.iter().enumerate() {
                    e = e - ej.scale(chi_q[j]);
                }
                let mh = match model.phi_mech_hess(&e, &chi_q, d_qp) {
                    Ok(mh) => mh,
                    Err(_) => return DMatrix::identity(n_dofs, n_dofs),
                };
                let mut ee = mh.ee;
                if viscous {
                    for r in 0..3 {
                        for c in 0..3 {
                            ee[r][c] += hv[r][c] / (2.0 * tau);
                        }
                    }
                }
                // Local dof tangents.
                let mut k = 0;
                for (a, &node) in nodes.iter().enumerate() {
                    let g = mesh.basis_grad(cell, a);
                    for comp in 0..dim {
                        e_rows[k] = strain_rows(dim, g, comp);
                        chi_rows[k] = None;
                        global[k] = node * dim + comp;
                        k += 1;
                    }
                    for (j, ej) in coupling.iter().enumerate() {
                        let ec = ej.comps(dim);
                        e_rows[k] = [-basis[a] * ec[0], -basis[a] * ec[1], -basis[a] * ec[2]];
                        chi_rows[k] = Some((j, basis[a]));
                        global[k] = self.nu + node * np + j;
                        k += 1;
                    }
                }
                for p in 0..cell_dofs {
                    let ep = e_rows[p];
                    for s in p..cell_dofs {
                        let es = e_rows[s];
                        let mut v = 0.0;
                        for r in 0..3 {
                            v += ep[r] * (ee[r][0] * es[0] + ee[r][1] * es[1] + ee[r][2] * es[2]);
                        }
                        if let Some((js, ns)) = chi_rows[s] {
                            v += ns * (ep[0] * mh.e_chi[js][0] + ep[1] * mh.e_chi[js][1] + ep[2] * mh.e_chi[js][2]);
                        }
                        if let Some((jp, npa)) = chi_rows[p] {
                            v += npa * (es[0] * mh.e_chi[jp][0] + es[1] * mh.e_chi[jp][1] + es[2] * mh.e_chi[jp][2]);
                            if let Some((js, ns)) = chi_rows[s] {
                                v += npa * ns * mh.chi_chi[jp * np + js];
                            }
                        }
                        let (gp, gs) = (global[p], global[s]);
                        h[(gp, gs)] += wq * v;
                        if gp != gs {
                            h[(gs, gp)] += wq * v;
                        }
                    }
                }
            }
        }

        // Lumped nodal blocks.
        let n = mesh.n_nodes();
        for i in 0..n {
            let m = self.pb.mass_lumped[i];
            let chi_i = &chi[i * np..(i + 1) * np];
            let ce = match model.phi_chem(chi_i, self.prev.c.get(i, 0)) {
                Ok(ce) => ce,
                Err(_) => return DMatrix::identity(n_dofs, n_dofs),
            };
            let quad = 2.0 * self.zb[i] * m / tau;
            for j in 0..np {
                for l in 0..np {
                    h[(self.nu + i * np + j, self.nu + i * np + l)] += m * ce.d_chi_chi[j * np + l];
                }
                h[(self.nu + i * np + j, self.nu + i * np + j)] += quad;
            }
        }
        let kappa1 = model.kappa1();
        for &(r, c, v) in self.pb.k_chi.triplets() {
            h[(self.nu + r, self.nu + c)] += kappa1 * v;
        }
        if self.inertia != 0.0 {
            for &(r, c, v) in self.pb.mass_u.triplets() {
                h[(r, c)] += self.inertia * v;
            }
        }
        h
    }
}

fn bounds_and_groups(
    pb: &Problem,
    prev: &State,
    za: &[f64],
) -> (Bounds, Vec<L1Group>, Vec<f64>) {
    let mesh = &pb.mesh;
    let np = pb.n_phase();
    let n = mesh.n_nodes();
    let nu = n * mesh.dim();
    let (chi_lo, chi_hi) = pb.model.chi_box();
    let mut lo = vec![f64::NEG_INFINITY; nu + n * np];
    let mut hi = vec![f64::INFINITY; nu + n * np];
    for &dof in &pb.params.pin_dofs {
        lo[dof] = prev.u.values()[dof];
        hi[dof] = prev.u.values()[dof];
    }
    for i in 0..n {
        for j in 0..np {
            lo[nu + i * np + j] = chi_lo[j];
            hi[nu + i * np + j] = chi_hi[j];
        }
    }
    let groups: Vec<L1Group> = (0..n)
        .map(|i| L1Group {
            start: nu + i * np,
            len: np,
            weight: pb.mass_lumped[i] * za[i],
        })
        .collect();
    let mut center = Vec::with_capacity(nu + n * np);
    center.extend_from_slice(prev.u.values());
    center.extend_from_slice(prev.chi.values());
    (
        Bounds::new(lo, hi).expect("step-1 bounds are well-formed"),
        groups,
        center,
    )
}

pub(crate) fn solve(
    pb: &Problem,
    prev: &State,
    prev2_u: &NodalField,
    loads: &LoadSet,
) -> Result<Step1Out> {
    let mesh = &pb.mesh;
    let np = pb.n_phase();
    let n = mesh.n_nodes();
    let mut oracle = Step1Oracle::new(pb, prev, prev2_u, loads)?;
    let (bounds, groups, center) = bounds_and_groups(pb, prev, &oracle.za);
    let x0 = center.clone();
    let (x, report) = composite_min(&mut oracle, &bounds, &groups, &center, &x0, &pb.params.solve)?;
    oracle.take_err()?;

    let nu = oracle.nu;
    let u = NodalField::from_values(mesh.dim(), x[..nu].to_vec())?;
    let chi = NodalField::from_values(np, x[nu..].to_vec())?;
    let e_e = elastic_strain(mesh, pb.model.as_ref(), &u, &chi);

    // Constraint reaction: the box multiplier left over after the smooth
    // gradient and a valid rate-term subgradient are accounted for, in
    // density units. Interior nodes get (numerically) zero.
    let mut grad = vec![0.0; x.len()];
    oracle.eval(&x, &mut grad);
    oracle.take_err()?;
    let mut sigma_r = NodalField::zeros(n, np);
    for i in 0..n {
        let m = pb.mass_lumped[i];
        let a = oracle.za[i];
        let g_i: Vec<f64> = (0..np).map(|j| grad[nu + i * np + j] / m).collect();
        let delta: Vec<f64> = (0..np)
            .map(|j| x[nu + i * np + j] - prev.chi.get(i, j))
            .collect();
        let dn = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gn = g_i.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..np {
            let s = if dn > 0.0 {
                a * delta[j] / dn
            } else if gn <= a || gn == 0.0 {
                -g_i[j]
            } else {
                -a * g_i[j] / gn
            };
            sigma_r.set(i, j, -(g_i[j] + s));
        }
    }
    Ok(Step1Out {
        u,
        chi,
        e_e,
        sigma_r,
        report,
    })
}

/// Directional-derivative test of the computed minimizer: for random
/// admissible competitors (û, χ̂) the one-sided derivative of the composite
/// objective along (û − u, χ̂ − χ) must be nonnegative up to solver slack.
/// Returns the worst (most negative) normalized margin over `n_dirs` draws.
pub fn variational_inequality_margin(
    pb: &Problem,
    prev: &State,
    prev2_u: &NodalField,
    u: &NodalField,
    chi: &NodalField,
    n_dirs: usize,
    seed: u64,
) -> Result<f64> {
    let mesh = &pb.mesh;
    let np = pb.n_phase();
    let n = mesh.n_nodes();
    let t_k = prev.t + pb.params.tau;
    let loads = super::assemble_loads(mesh, &pb.bc, t_k)?;
    let mut oracle = Step1Oracle::new(pb, prev, prev2_u, &loads)?;
    let (bounds, groups, _center) = bounds_and_groups(pb, prev, &oracle.za);
    let nu = oracle.nu;
    let mut x = Vec::with_capacity(nu + n * np);
    x.extend_from_slice(u.values());
    x.extend_from_slice(chi.values());
    let mut grad = vec![0.0; x.len()];
    oracle.eval(&x, &mut grad);
    oracle.take_err()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u_scale = 1.0 + u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = f64::INFINITY;
    for _ in 0..n_dirs {
        // Random admissible competitor: free u dofs perturbed, χ uniform in
        // its box, pinned dofs kept.
        let mut dir = vec![0.0; x.len()];
        for i in 0..nu {
            if bounds.lo[i] == bounds.hi[i] {
                continue;
            }
            let cand = x[i] + u_scale * rng.gen_range(-1.0..1.0);
            dir[i] = cand - x[i];
        }
        for i in nu..x.len() {
            let cand = rng.gen_range(bounds.lo[i]..=bounds.hi[i]);
            dir[i] = cand - x[i];
        }
        let mut dd: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        for g in &groups {
            let delta: Vec<f64> = (g.start..g.start + g.len)
                .map(|i| x[i] - prev.chi.values()[i - nu])
                .collect();
            let dn = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dseg = &dir[g.start..g.start + g.len];
            if dn > 0.0 {
                dd += g.weight * delta.iter().zip(dseg).map(|(a, b)| a * b).sum::<f64>() / dn;
            } else {
                dd += g.weight * dseg.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
        }
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            worst = worst.min(dd / norm);
        }
    }
    Ok(worst)
}
