//! P1 finite-element assembly: mass and weighted-stiffness matrices in triplet
//! form, load vectors, and quadrature evaluation of nonlinear densities.
//!
//! Element kernels are pure functions of the cell data; accumulation into the
//! triplet list is the only synchronization point, and the parallel path
//! concatenates per-cell blocks in cell order so it reproduces the serial
//! result bit for bit.

use rayon::prelude::*;

use crate::error::{Result, SolverError};
use crate::geometry::{Mesh, NodalField};
use crate::tensor::Coeff2;

/// Sparse matrix in coordinate (triplet) form. Duplicate entries accumulate.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(n_rows: usize, n_cols: usize) -> SparseMatrix {
        SparseMatrix {
            n_rows,
            n_cols,
            triplets: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        self.triplets.push((row, col, value));
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_cols);
        let mut y = vec![0.0; self.n_rows];
        for &(i, j, v) in &self.triplets {
            y[i] += v * x[j];
        }
        y
    }

    /// xᵀ A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_rows);
        debug_assert_eq!(y.len(), self.n_cols);
        let mut total = 0.0;
        for &(i, j, v) in &self.triplets {
            total += x[i] * v * y[j];
        }
        total
    }

    /// xᵀ A x.
    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for &(i, j, v) in &self.triplets {
            m[(i, j)] += v;
        }
        m
    }

    /// Add `scale * other` into this matrix (same shape required).
    pub fn add_scaled(&mut self, other: &SparseMatrix, scale: f64) {
        debug_assert_eq!(self.n_rows, other.n_rows);
        debug_assert_eq!(self.n_cols, other.n_cols);
        self.triplets
            .extend(other.triplets.iter().map(|&(i, j, v)| (i, j, scale * v)));
    }
}

fn mass_local(dim: usize) -> &'static [f64] {
    // Exact P1 mass on the reference element, scaled by cell measure later.
    // 1D: h/6 [[2,1],[1,2]]; triangle: A/12 [[2,1,1],[1,2,1],[1,1,2]].
    const M1: [f64; 4] = [
        2.0 / 6.0,
        1.0 / 6.0,
        1.0 / 6.0,
        2.0 / 6.0,
    ];
    const M2: [f64; 9] = [
        2.0 / 12.0,
        1.0 / 12.0,
        1.0 / 12.0,
        1.0 / 12.0,
        2.0 / 12.0,
        1.0 / 12.0,
        1.0 / 12.0,
        1.0 / 12.0,
        2.0 / 12.0,
    ];
    if dim == 1 {
        &M1
    } else {
        &M2
    }
}

/// Consistent mass matrix for a field with `components` per node; dof index
/// is `node * components + comp`.
pub fn assemble_mass(mesh: &Mesh, components: usize) -> SparseMatrix {
    let n = mesh.n_nodes() * components;
    let npc = mesh.nodes_per_cell();
    let local = mass_local(mesh.dim());
    let mut m = SparseMatrix::new(n, n);
    for c in 0..mesh.n_cells() {
        let nodes = mesh.cell_nodes(c);
        let meas = mesh.cell_measure(c);
        for a in 0..npc {
            for b in 0..npc {
                let v = local[a * npc + b] * meas;
                for comp in 0..components {
                    m.push(
                        nodes[a] * components + comp,
                        nodes[b] * components + comp,
                        v,
                    );
                }
            }
        }
    }
    m
}

fn stiffness_cell(
    mesh: &Mesh,
    cell: usize,
    components: usize,
    coeff: &(dyn Fn(usize, usize) -> Coeff2 + Sync),
) -> Result<Vec<(usize, usize, f64)>> {
    let npc = mesh.nodes_per_cell();
    let dim = mesh.dim();
    // Gradients are constant per cell, so only the quadrature average of the
    // coefficient enters; keep per-point SPD validation.
    let mut cbar = Coeff2::ZERO;
    for q in 0..mesh.n_qp() {
        let cq = coeff(cell, q);
        if !cq.is_spd(dim) {
            return Err(SolverError::invalid(format!(
                "transport coefficient is not SPD on cell {cell} (qp {q}): \
                 xx={}, yy={}, xy={}",
                cq.xx, cq.yy, cq.xy
            )));
        }
        cbar += cq.scale(mesh.qp_weight(cell, q));
    }
    let nodes = mesh.cell_nodes(cell);
    let mut out = Vec::with_capacity(npc * npc * components);
    for a in 0..npc {
        let ga = mesh.basis_grad(cell, a);
        let cga = cbar.apply(ga);
        for b in 0..npc {
            let gb = mesh.basis_grad(cell, b);
            let v = cga[0] * gb[0] + cga[1] * gb[1];
            for comp in 0..components {
                out.push((
                    nodes[a] * components + comp,
                    nodes[b] * components + comp,
                    v,
                ));
            }
        }
    }
    Ok(out)
}

/// Stiffness matrix ∫ ∇φ_i · C ∇φ_j with the coefficient sampled at the fixed
/// quadrature points (`coeff(cell, qp)`); the coefficient must be SPD at every
/// sample. Applied per component for multi-component fields.
pub fn assemble_weighted_stiffness(
    mesh: &Mesh,
    components: usize,
    coeff: &(dyn Fn(usize, usize) -> Coeff2 + Sync),
) -> Result<SparseMatrix> {
    let n = mesh.n_nodes() * components;
    let mut m = SparseMatrix::new(n, n);
    for c in 0..mesh.n_cells() {
        m.triplets
            .extend(stiffness_cell(mesh, c, components, coeff)?);
    }
    Ok(m)
}

/// Parallel variant of [`assemble_weighted_stiffness`]. Per-cell blocks are
/// computed in parallel and concatenated in cell order, so the triplet list —
/// and therefore every downstream sum — is identical to the serial one.
pub fn assemble_weighted_stiffness_par(
    mesh: &Mesh,
    components: usize,
    coeff: &(dyn Fn(usize, usize) -> Coeff2 + Sync),
) -> Result<SparseMatrix> {
    let n = mesh.n_nodes() * components;
    let blocks: Result<Vec<_>> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| stiffness_cell(mesh, c, components, coeff))
        .collect();
    let mut m = SparseMatrix::new(n, n);
    for block in blocks? {
        m.triplets.extend(block);
    }
    Ok(m)
}

/// Unit-coefficient stiffness (∫ ∇φ_i·∇φ_j), the gradient-penalty matrix.
pub fn assemble_unit_stiffness(mesh: &Mesh, components: usize) -> SparseMatrix {
    let dim = mesh.dim();
    assemble_weighted_stiffness(mesh, components, &|_, _| Coeff2 {
        xx: 1.0,
        yy: if dim == 2 { 1.0 } else { 0.0 },
        xy: 0.0,
    })
    .expect("unit coefficient is SPD")
}

/// Bulk load vector b_i = ∫ f·φ_i dx for the P1 interpolant of `f` (exact).
pub fn assemble_bulk_load(mesh: &Mesh, f: &NodalField) -> Result<Vec<f64>> {
    if f.n_nodes() != mesh.n_nodes() {
        return Err(SolverError::invalid("bulk load field on wrong mesh"));
    }
    let components = f.components();
    let npc = mesh.nodes_per_cell();
    let local = mass_local(mesh.dim());
    let mut b = vec![0.0; mesh.n_nodes() * components];
    for c in 0..mesh.n_cells() {
        let nodes = mesh.cell_nodes(c);
        let meas = mesh.cell_measure(c);
        for a in 0..npc {
            for k in 0..npc {
                let w = local[a * npc + k] * meas;
                for comp in 0..components {
                    b[nodes[a] * components + comp] += w * f.get(nodes[k], comp);
                }
            }
        }
    }
    Ok(b)
}

/// Boundary load vector b_i = ∫_Γ g·φ_i dS for nodal boundary data `g`
/// (values at non-boundary nodes are ignored). 1D facets use the counting
/// measure: the endpoint node receives `g` directly.
pub fn assemble_boundary_load(mesh: &Mesh, g: &NodalField) -> Result<Vec<f64>> {
    if g.n_nodes() != mesh.n_nodes() {
        return Err(SolverError::invalid("boundary load field on wrong mesh"));
    }
    let components = g.components();
    let mut b = vec![0.0; mesh.n_nodes() * components];
    for f in mesh.boundary() {
        if f.node_count() == 1 {
            let n = f.nodes[0];
            for comp in 0..components {
                b[n * components + comp] += f.measure * g.get(n, comp);
            }
        } else {
            // Exact P1 edge integration: ∫ g φ_i over the edge.
            let (n0, n1) = (f.nodes[0], f.nodes[1]);
            for comp in 0..components {
                let (g0, g1) = (g.get(n0, comp), g.get(n1, comp));
                b[n0 * components + comp] += f.measure * (2.0 * g0 + g1) / 6.0;
                b[n1 * components + comp] += f.measure * (g0 + 2.0 * g1) / 6.0;
            }
        }
    }
    Ok(b)
}

/// Per-point context handed to quadrature kernels.
pub struct QpData<'a> {
    pub cell: usize,
    pub q: usize,
    pub x: [f64; 2],
    values: &'a [f64],
    grads: &'a [f64],
    offsets: &'a [usize],
}

impl<'a> QpData<'a> {
    /// Interpolated value of `comp` of field `field` at this point.
    pub fn value(&self, field: usize, comp: usize) -> f64 {
        self.values[self.offsets[field] + comp]
    }

    /// Constant cell gradient of `comp` of field `field`.
    pub fn grad(&self, field: usize, comp: usize) -> [f64; 2] {
        let base = 2 * (self.offsets[field] + comp);
        [self.grads[base], self.grads[base + 1]]
    }
}

/// Integrate `kernel` over Ω with the fixed degree-4 rule; the kernel sees
/// interpolated values and cell gradients of each supplied field.
pub fn quadrature_eval(
    mesh: &Mesh,
    fields: &[&NodalField],
    kernel: &mut dyn FnMut(&QpData) -> f64,
) -> Result<f64> {
    let mut offsets = Vec::with_capacity(fields.len() + 1);
    let mut total_comps = 0;
    for f in fields {
        if f.n_nodes() != mesh.n_nodes() {
            return Err(SolverError::invalid("quadrature field on wrong mesh"));
        }
        offsets.push(total_comps);
        total_comps += f.components();
    }
    let mut values = vec![0.0; total_comps];
    let mut grads = vec![0.0; 2 * total_comps];
    let mut total = 0.0;
    for c in 0..mesh.n_cells() {
        // Gradients are per cell; values vary per quadrature point.
        for (fi, f) in fields.iter().enumerate() {
            for comp in 0..f.components() {
                let g = f.grad_on_cell(mesh, c, comp);
                let base = 2 * (offsets[fi] + comp);
                grads[base] = g[0];
                grads[base + 1] = g[1];
            }
        }
        for q in 0..mesh.n_qp() {
            for (fi, f) in fields.iter().enumerate() {
                for comp in 0..f.components() {
                    values[offsets[fi] + comp] = f.at_qp(mesh, c, q, comp);
                }
            }
            let qp = QpData {
                cell: c,
                q,
                x: mesh.qp_coord(c, q),
                values: &values,
                grads: &grads,
                offsets: &offsets,
            };
            total += mesh.qp_weight(c, q) * kernel(&qp);
        }
    }
    Ok(total)
}
