//! Step 2: solute diffusion. The chemical potential minimizes the dual
//! convex functional built from the conjugate chemical energy; the
//! concentration is recovered nodewise from the conjugate subdifferential,
//! which makes the first-order conditions literally the discrete solute
//! balance (and mass conservation a structural identity).

use nalgebra::DMatrix;

use crate::assembly::{assemble_weighted_stiffness, SparseMatrix};
use crate::error::{Result, SolverError};
use crate::geometry::NodalField;
use crate::materials::legendre_chem;
use crate::minimizers::{projected_newton, Bounds, SmoothOracle, SolveReport};
use crate::tensor::Sym2;

use super::{LoadSet, Problem, QpSampler, State, Step1Out, DELAYED_ARGS};

pub(crate) struct Step2Out {
    pub c: NodalField,
    pub mu: NodalField,
    #[allow(dead_code)]
    pub report: SolveReport,
}

/// Mobility stiffness with the scheme's delayed arguments (current strain
/// and phase, previous damage, concentration, and temperature). Shared with
/// the regularized diffusive heat source so both see the same tensor.
pub(crate) fn mobility_matrix(
    pb: &Problem,
    prev: &State,
    chi_k: &NodalField,
    e_k: &[Sym2],
    pattern_step4: bool,
) -> Result<SparseMatrix> {
    let pattern = if pattern_step4 {
        DELAYED_ARGS.mobility_step4
    } else {
        DELAYED_ARGS.mobility_step2
    };
    let sampler = QpSampler {
        pattern,
        mesh: &pb.mesh,
        e_prev: &prev.e_e,
        e_curr: e_k,
        chi_prev: &prev.chi,
        chi_curr: chi_k,
        d_prev: &prev.d,
        d_curr: &prev.d,
        c_prev: &prev.c,
        c_curr: &prev.c,
        theta_prev: &prev.theta,
        theta_curr: &prev.theta,
    };
    let model = pb.model.as_ref();
    assemble_weighted_stiffness(&pb.mesh, 1, &|cell, q| {
        sampler.eval(cell, q, &|s| model.mobility(s))
    })
}

struct Step2Oracle<'a> {
    pb: &'a Problem,
    prev: &'a State,
    chi: &'a NodalField,
    a_m: SparseMatrix,
    b_h: &'a [f64],
    err: Option<SolverError>,
}

impl Step2Oracle<'_> {
    fn take_err(&mut self) -> Result<()> {
        match self.err.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn conjugate(&mut self, node: usize, mu: f64) -> Option<(f64, f64)> {
        let np = self.pb.n_phase();
        let chi_i = &self.chi.values()[node * np..(node + 1) * np];
        match legendre_chem(self.pb.model.as_ref(), chi_i, mu) {
            Ok(pair) => Some(pair),
            Err(e) => {
                self.err.get_or_insert(e);
                None
            }
        }
    }
}

impl SmoothOracle for Step2Oracle<'_> {
    fn dofs(&self) -> usize {
        self.pb.mesh.n_nodes()
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let tau = self.pb.params.tau;
        let n = self.dofs();
        let mut value = 0.0;
        let a_mu = self.a_m.mat_vec(x);
        for i in 0..n {
            let m = self.pb.mass_lumped[i];
            let c_prev = self.prev.c.get(i, 0);
            let Some((phi_star, c)) = self.conjugate(i, x[i]) else {
                return f64::INFINITY;
            };
            value += m * (phi_star - c_prev * x[i]);
            grad[i] = m * (c - c_prev) + tau * a_mu[i] - tau * self.b_h[i];
        }
        value += 0.5 * tau * self.a_m.quadratic(x);
        value -= tau * self.b_h.iter().zip(x).map(|(b, m)| b * m).sum::<f64>();
        value
    }

    fn hessian(&mut self, x: &[f64]) -> DMatrix<f64> {
        let tau = self.pb.params.tau;
        let n = self.dofs();
        let np = self.pb.n_phase();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let Some((_, c)) = self.conjugate(i, x[i]) else {
                return DMatrix::identity(n, n);
            };
            let chi_i = &self.chi.values()[i * np..(i + 1) * np];
            let d_cc = match self.pb.model.phi_chem(chi_i, c) {
                Ok(ce) => ce.d_cc,
                Err(_) => return DMatrix::identity(n, n),
            };
            // ∂c/∂μ = 1/φ'' by the inverse-function rule.
            h[(i, i)] += self.pb.mass_lumped[i] / d_cc;
        }
        for &(r, c, v) in self.a_m.triplets() {
            h[(r, c)] += tau * v;
        }
        h
    }
}

pub(crate) fn solve(
    pb: &Problem,
    prev: &State,
    s1: &Step1Out,
    loads: &LoadSet,
) -> Result<Step2Out> {
    let n = pb.mesh.n_nodes();
    let np = pb.n_phase();
    let a_m = mobility_matrix(pb, prev, &s1.chi, &s1.e_e, false)?;
    let mut oracle = Step2Oracle {
        pb,
        prev,
        chi: &s1.chi,
        a_m,
        b_h: &loads.b_h,
        err: None,
    };
    // The no-flux stationary guess: μ = ∂_c φ_chem(χ^k, c^{k−1}).
    let mut x0 = vec![0.0; n];
    for (i, x) in x0.iter_mut().enumerate() {
        let chi_i = &s1.chi.values()[i * np..(i + 1) * np];
        *x = pb.model.phi_chem(chi_i, prev.c.get(i, 0))?.d_c;
    }
    let bounds = Bounds::unbounded(n);
    let (mu_vals, report) =
        projected_newton(&mut oracle, &bounds, &x0, &pb.params.solve_diffusion)?;
    oracle.take_err()?;
    let mut c = NodalField::zeros(n, 1);
    for i in 0..n {
        let Some((_, ci)) = oracle.conjugate(i, mu_vals[i]) else {
            break;
        };
        c.set(i, 0, ci);
    }
    oracle.take_err()?;
    Ok(Step2Out {
        c,
        mu: NodalField::from_values(1, mu_vals)?,
        report,
    })
}
