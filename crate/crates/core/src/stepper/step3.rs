//! Step 3: rate-independent, unidirectional damage. The new damage field
//! minimizes stored mechanical energy plus the gradient regularization plus
//! the dissipated toughness over the box {0 ≤ d ≤ d^{k−1}}; unidirectionality
//! is enforced by the upper bound, not by penalties.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SolverError};
use crate::geometry::NodalField;
use crate::minimizers::{projected_newton, Bounds, SmoothOracle, SolveReport};

use super::{Problem, QpSampler, State, Step1Out, DELAYED_ARGS};

/// Wrap an iterate as a single-component nodal field (infallible).
fn scalar_field(values: &[f64]) -> NodalField {
    NodalField::from_values(1, values.to_vec()).expect("one component always divides the length")
}

struct Step3Oracle<'a> {
    pb: &'a Problem,
    prev: &'a State,
    s1: &'a Step1Out,
    /// Toughness α(χ^k) per quadrature point, cell-major.
    alpha_qp: Vec<f64>,
    err: Option<SolverError>,
}

impl<'a> Step3Oracle<'a> {
    fn new(pb: &'a Problem, prev: &'a State, s1: &'a Step1Out) -> Result<Step3Oracle<'a>> {
        let mesh = &pb.mesh;
        let nqp = mesh.n_qp();
        let sampler = QpSampler {
            pattern: DELAYED_ARGS.alpha_step3,
            mesh,
            e_prev: &prev.e_e,
            e_curr: &s1.e_e,
            chi_prev: &prev.chi,
            chi_curr: &s1.chi,
            d_prev: &prev.d,
            d_curr: &prev.d,
            c_prev: &prev.c,
            c_curr: &prev.c,
            theta_prev: &prev.theta,
            theta_curr: &prev.theta,
        };
        let model = pb.model.as_ref();
        let mut alpha_qp = vec![0.0; mesh.n_cells() * nqp];
        for cell in 0..mesh.n_cells() {
            for q in 0..nqp {
                let a = sampler.eval(cell, q, &|s| model.alpha(s.chi).map(|(v, _, _)| v))?;
                alpha_qp[cell * nqp + q] = a;
            }
        }
        Ok(Step3Oracle {
            pb,
            prev,
            s1,
            alpha_qp,
            err: None,
        })
    }

    fn take_err(&mut self) -> Result<()> {
        match self.err.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn sampler<'b>(&'b self, d_field: &'b NodalField) -> QpSampler<'b> {
        QpSampler {
            pattern: DELAYED_ARGS.phi_mech_step3,
            mesh: &self.pb.mesh,
            e_prev: &self.prev.e_e,
            e_curr: &self.s1.e_e,
            chi_prev: &self.prev.chi,
            chi_curr: &self.s1.chi,
            d_prev: &self.prev.d,
            d_curr: d_field,
            c_prev: &self.prev.c,
            c_curr: &self.prev.c,
            theta_prev: &self.prev.theta,
            theta_curr: &self.prev.theta,
        }
    }
}

impl SmoothOracle for Step3Oracle<'_> {
    fn dofs(&self) -> usize {
        self.pb.mesh.n_nodes()
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let mesh = &self.pb.mesh;
        let model = self.pb.model.as_ref();
        let d_field = scalar_field(x);
        let sampler = self.sampler(&d_field);
        let nqp = mesh.n_qp();
        let mut value = 0.0;
        for cell in 0..mesh.n_cells() {
            let nodes = mesh.cell_nodes(cell);
            for q in 0..nqp {
                let wq = mesh.qp_weight(cell, q);
                let phi = mesh.qp_basis(q);
                let res = sampler.eval(cell, q, &|s| {
                    model.phi_mech_d2d(&s.e, s.chi, s.d).map(|t| (t.0, t.1))
                });
                let (me, dd) = match res {
                    Ok(pair) => pair,
                    Err(e) => {
                        self.err.get_or_insert(e);
                        return f64::INFINITY;
                    }
                };
                let alpha = self.alpha_qp[cell * nqp + q];
                let d_prev = self.prev.d.at_qp(mesh, cell, q, 0);
                let d_here = d_field.at_qp(mesh, cell, q, 0);
                value += wq * (me + alpha * (d_prev - d_here));
                for (a, &node) in nodes.iter().enumerate() {
                    grad[node] += wq * phi[a] * (dd - alpha);
                }
            }
        }
        let kappa2 = self.pb.model.kappa2();
        value += 0.5 * kappa2 * self.pb.k_scalar.quadratic(x);
        let kd = self.pb.k_scalar.mat_vec(x);
        for (g, k) in grad.iter_mut().zip(&kd) {
            *g += kappa2 * k;
        }
        value
    }

    fn hessian(&mut self, x: &[f64]) -> DMatrix<f64> {
        let mesh = &self.pb.mesh;
        let model = self.pb.model.as_ref();
        let n = self.dofs();
        let d_field = scalar_field(x);
        let sampler = self.sampler(&d_field);
        let nqp = mesh.n_qp();
        let mut h = DMatrix::zeros(n, n);
        for cell in 0..mesh.n_cells() {
            let nodes = mesh.cell_nodes(cell);
            for q in 0..nqp {
                let wq = mesh.qp_weight(cell, q);
                let phi = mesh.qp_basis(q);
                let res = sampler.eval(cell, q, &|s| {
                    model.phi_mech_d2d(&s.e, s.chi, s.d).map(|t| t.2)
                });
                let ddd = match res {
                    Ok(v) => v,
                    Err(e) => {
                        self.err.get_or_insert(e);
                        return DMatrix::identity(n, n);
                    }
                };
                for (a, &na) in nodes.iter().enumerate() {
                    for (b, &nb) in nodes.iter().enumerate() {
                        h[(na, nb)] += wq * phi[a] * phi[b] * ddd;
                    }
                }
            }
        }
        let kappa2 = self.pb.model.kappa2();
        for &(r, c, v) in self.pb.k_scalar.triplets() {
            h[(r, c)] += kappa2 * v;
        }
        h
    }
}

pub(crate) fn solve(pb: &Problem, prev: &State, s1: &Step1Out) -> Result<NodalField> {
    let n = pb.mesh.n_nodes();
    let mut oracle = Step3Oracle::new(pb, prev, s1)?;
    let bounds = Bounds::new(vec![0.0; n], prev.d.values().to_vec())?;
    let solve = |oracle: &mut Step3Oracle, x0: &[f64]| -> Result<(Vec<f64>, f64, SolveReport)> {
        let (x, report) = projected_newton(oracle, &bounds, x0, &pb.params.solve)?;
        oracle.take_err()?;
        let mut g = vec![0.0; n];
        let v = oracle.eval(&x, &mut g);
        oracle.take_err()?;
        Ok((x, v, report))
    };
    // Deterministic flat start at the previous damage field: on plateaus of
    // the objective this leaves the field untouched (no spurious healing of
    // ties toward lower d).
    let (mut best_x, mut best_v, _) = solve(&mut oracle, prev.d.values())?;
    if pb.params.step3_multi_start > 0 {
        let mut starts: Vec<Vec<f64>> = vec![vec![0.0; n]];
        let mut rng = ChaCha8Rng::seed_from_u64(0xda_03);
        for _ in 1..pb.params.step3_multi_start {
            let x: Vec<f64> = prev
                .d
                .values()
                .iter()
                .map(|&hi| rng.gen_range(0.0..=hi.max(0.0)))
                .collect();
            starts.push(x);
        }
        for x0 in starts {
            let (x, v, _) = solve(&mut oracle, &x0)?;
            // Accept only strict improvements so ties keep the flat start.
            if v < best_v - 1e-12 * (1.0 + best_v.abs()) {
                best_x = x;
                best_v = v;
            }
        }
    }
    NodalField::from_values(1, best_x)
}
