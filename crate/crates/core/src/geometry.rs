//! P1 meshes on intervals and axis-aligned rectangles, nodal fields, and the
//! fixed quadrature used for nonlinear densities.
//!
//! Conventions baked in here and relied on everywhere else:
//! * 1D boundary integrals use the counting measure: the "integral" over the
//!   two endpoints is the plain sum of endpoint values (each facet has
//!   measure 1).
//! * Rectangles are triangulated with the lower-left-to-upper-right diagonal
//!   in every grid cell; the subdivision is part of the contract, not an
//!   implementation detail, so trajectories are reproducible.
//! * Nonlinear densities are integrated with one fixed rule per cell that is
//!   exact to polynomial degree 4 (3-point Gauss on intervals, 6-point rule
//!   on triangles). Mass and stiffness matrices are assembled from exact
//!   closed forms.

use crate::error::{Result, SolverError};

/// Where a boundary facet sits. 1D meshes only use `Left`/`Right`; rectangle
/// meshes use all four sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BoundaryRegion {
    Left,
    Right,
    Bottom,
    Top,
}

impl BoundaryRegion {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryRegion::Left => "left",
            BoundaryRegion::Right => "right",
            BoundaryRegion::Bottom => "bottom",
            BoundaryRegion::Top => "top",
        }
    }
}

/// A boundary facet: a single node in 1D (stored twice), an edge in 2D.
/// `measure` is 1 for 1D facets (counting measure) and the edge length in 2D.
#[derive(Clone, Debug)]
pub struct BoundaryFacet {
    pub nodes: [usize; 2],
    pub normal: [f64; 2],
    pub measure: f64,
    pub region: BoundaryRegion,
}

impl BoundaryFacet {
    pub fn node_count(&self) -> usize {
        if self.nodes[0] == self.nodes[1] {
            1
        } else {
            2
        }
    }
}

/// Fixed degree-4 quadrature rule in reference coordinates.
#[derive(Clone, Debug)]
struct QuadRule {
    /// Basis-function values at each point, `n_qp × nodes_per_cell`.
    basis: Vec<f64>,
    /// Reference weights, summing to 1.
    weights: Vec<f64>,
}

fn interval_rule() -> QuadRule {
    // 3-point Gauss on [0,1]: exact through degree 5.
    let s = (3.0f64 / 5.0).sqrt() / 2.0;
    let pts = [0.5 - s, 0.5, 0.5 + s];
    let wts = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
    let mut basis = Vec::with_capacity(6);
    for &x in &pts {
        basis.push(1.0 - x);
        basis.push(x);
    }
    QuadRule {
        basis,
        weights: wts.to_vec(),
    }
}

fn triangle_rule() -> QuadRule {
    // 6-point rule, exact through degree 4. Two orbits of barycentric points.
    let a1 = 0.445_948_490_915_965;
    let w1 = 0.223_381_589_678_011;
    let a2 = 0.091_576_213_509_771;
    let w2 = 0.109_951_743_655_322;
    let orbits = [(a1, w1), (a2, w2)];
    let mut basis = Vec::with_capacity(18);
    let mut weights = Vec::with_capacity(6);
    for &(a, w) in &orbits {
        let b = 1.0 - 2.0 * a;
        for perm in [[a, a, b], [a, b, a], [b, a, a]] {
            basis.extend_from_slice(&perm);
            weights.push(w);
        }
    }
    QuadRule { basis, weights }
}

/// Simplicial P1 mesh in one or two dimensions.
#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    /// Node coordinates, `dim` values per node.
    coords: Vec<f64>,
    /// Cell connectivity, `dim + 1` node indices per cell.
    cells: Vec<usize>,
    cell_measure: Vec<f64>,
    /// Constant P1 basis gradients per cell: `nodes_per_cell × dim` values.
    cell_grads: Vec<f64>,
    boundary: Vec<BoundaryFacet>,
    rule: QuadRule,
}

impl Mesh {
    /// Uniform mesh of `n_cells` intervals on [0, length].
    pub fn interval(n_cells: usize, length: f64) -> Result<Mesh> {
        if n_cells == 0 {
            return Err(SolverError::invalid("interval mesh needs n_cells >= 1"));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(SolverError::invalid(format!(
                "interval mesh needs positive finite length, got {length}"
            )));
        }
        let h = length / n_cells as f64;
        let coords: Vec<f64> = (0..=n_cells).map(|i| i as f64 * h).collect();
        let mut cells = Vec::with_capacity(2 * n_cells);
        let mut cell_measure = Vec::with_capacity(n_cells);
        let mut cell_grads = Vec::with_capacity(2 * n_cells);
        for i in 0..n_cells {
            cells.push(i);
            cells.push(i + 1);
            let hc = coords[i + 1] - coords[i];
            cell_measure.push(hc);
            cell_grads.push(-1.0 / hc);
            cell_grads.push(1.0 / hc);
        }
        let boundary = vec![
            BoundaryFacet {
                nodes: [0, 0],
                normal: [-1.0, 0.0],
                measure: 1.0,
                region: BoundaryRegion::Left,
            },
            BoundaryFacet {
                nodes: [n_cells, n_cells],
                normal: [1.0, 0.0],
                measure: 1.0,
                region: BoundaryRegion::Right,
            },
        ];
        let mesh = Mesh {
            dim: 1,
            coords,
            cells,
            cell_measure,
            cell_grads,
            boundary,
            rule: interval_rule(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// `nx × ny` rectangle grid on [0,lx]×[0,ly]; every grid cell is split by
    /// its lower-left-to-upper-right diagonal into two triangles.
    pub fn grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(SolverError::invalid("grid mesh needs nx, ny >= 1"));
        }
        if !(lx > 0.0 && ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
            return Err(SolverError::invalid(format!(
                "grid mesh needs positive finite sides, got {lx} x {ly}"
            )));
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        let node = |i: usize, j: usize| j * (nx + 1) + i;
        let mut coords = Vec::with_capacity(2 * (nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                coords.push(i as f64 * hx);
                coords.push(j as f64 * hy);
            }
        }
        let mut cells = Vec::with_capacity(6 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                // Diagonal from the lower-left (i,j) to the upper-right
                // (i+1,j+1); both triangles are counterclockwise.
                cells.extend_from_slice(&[node(i, j), node(i + 1, j), node(i + 1, j + 1)]);
                cells.extend_from_slice(&[node(i, j), node(i + 1, j + 1), node(i, j + 1)]);
            }
        }
        let n_cells = cells.len() / 3;
        let mut cell_measure = Vec::with_capacity(n_cells);
        let mut cell_grads = Vec::with_capacity(6 * n_cells);
        for c in 0..n_cells {
            let ns = &cells[3 * c..3 * c + 3];
            let p = |k: usize| [coords[2 * ns[k]], coords[2 * ns[k] + 1]];
            let (p0, p1, p2) = (p(0), p(1), p(2));
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            let area = 0.5 * det;
            cell_measure.push(area);
            // ∇φ_k for P1 on a triangle: rotate opposite edge by 90°, scale.
            let edges = [
                [p2[0] - p1[0], p2[1] - p1[1]],
                [p0[0] - p2[0], p0[1] - p2[1]],
                [p1[0] - p0[0], p1[1] - p0[1]],
            ];
            for e in edges {
                cell_grads.push(-e[1] / det);
                cell_grads.push(e[0] / det);
            }
        }
        let mut boundary = Vec::new();
        for i in 0..nx {
            boundary.push(BoundaryFacet {
                nodes: [node(i, 0), node(i + 1, 0)],
                normal: [0.0, -1.0],
                measure: hx,
                region: BoundaryRegion::Bottom,
            });
            boundary.push(BoundaryFacet {
                nodes: [node(i, ny), node(i + 1, ny)],
                normal: [0.0, 1.0],
                measure: hx,
                region: BoundaryRegion::Top,
            });
        }
        for j in 0..ny {
            boundary.push(BoundaryFacet {
                nodes: [node(0, j), node(0, j + 1)],
                normal: [-1.0, 0.0],
                measure: hy,
                region: BoundaryRegion::Left,
            });
            boundary.push(BoundaryFacet {
                nodes: [node(nx, j), node(nx, j + 1)],
                normal: [1.0, 0.0],
                measure: hy,
                region: BoundaryRegion::Right,
            });
        }
        let mesh = Mesh {
            dim: 2,
            coords,
            cells,
            cell_measure,
            cell_grads,
            boundary,
            rule: triangle_rule(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        for (c, &m) in self.cell_measure.iter().enumerate() {
            if !(m > 0.0) {
                return Err(SolverError::invalid(format!(
                    "cell {c} has non-positive measure {m}"
                )));
            }
        }
        let n = self.n_nodes();
        if self.cells.iter().any(|&i| i >= n) {
            return Err(SolverError::invalid("cell refers to missing node"));
        }
        for f in &self.boundary {
            if f.nodes[0] >= n || f.nodes[1] >= n {
                return Err(SolverError::invalid("boundary facet refers to missing node"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.cell_measure.len()
    }

    pub fn nodes_per_cell(&self) -> usize {
        self.dim + 1
    }

    pub fn node_coord(&self, node: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.coords[node], 0.0]
        } else {
            [self.coords[2 * node], self.coords[2 * node + 1]]
        }
    }

    pub fn cell_nodes(&self, cell: usize) -> &[usize] {
        let npc = self.nodes_per_cell();
        &self.cells[npc * cell..npc * (cell + 1)]
    }

    pub fn cell_measure(&self, cell: usize) -> f64 {
        self.cell_measure[cell]
    }

    pub fn total_measure(&self) -> f64 {
        self.cell_measure.iter().sum()
    }

    /// Constant gradient of local basis `k` on `cell`.
    pub fn basis_grad(&self, cell: usize, k: usize) -> [f64; 2] {
        let npc = self.nodes_per_cell();
        let base = (npc * cell + k) * self.dim;
        if self.dim == 1 {
            [self.cell_grads[base], 0.0]
        } else {
            [self.cell_grads[base], self.cell_grads[base + 1]]
        }
    }

    pub fn boundary(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    /// Number of quadrature points per cell in the fixed degree-4 rule.
    pub fn n_qp(&self) -> usize {
        self.rule.weights.len()
    }

    /// Physical quadrature weight (reference weight × cell measure).
    pub fn qp_weight(&self, cell: usize, q: usize) -> f64 {
        self.rule.weights[q] * self.cell_measure[cell]
    }

    /// Basis values at reference quadrature point `q` (same for all cells).
    pub fn qp_basis(&self, q: usize) -> &[f64] {
        let npc = self.nodes_per_cell();
        &self.rule.basis[npc * q..npc * (q + 1)]
    }

    /// Physical coordinates of quadrature point `q` of `cell`.
    pub fn qp_coord(&self, cell: usize, q: usize) -> [f64; 2] {
        let basis = self.qp_basis(q);
        let mut x = [0.0, 0.0];
        for (k, &n) in self.cell_nodes(cell).iter().enumerate() {
            let p = self.node_coord(n);
            x[0] += basis[k] * p[0];
            x[1] += basis[k] * p[1];
        }
        x
    }

    /// Lumped node masses m_i = ∫ φ_i dx (row sums of the P1 mass matrix).
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_nodes()];
        let npc = self.nodes_per_cell();
        for c in 0..self.n_cells() {
            let share = self.cell_measure[c] / npc as f64;
            for &n in self.cell_nodes(c) {
                m[n] += share;
            }
        }
        m
    }

    /// Exact integral over Ω of the P1 interpolant of a scalar nodal field.
    pub fn integrate_cell(&self, field: &NodalField) -> Result<f64> {
        if field.components() != 1 || field.n_nodes() != self.n_nodes() {
            return Err(SolverError::invalid(
                "integrate_cell expects a scalar field on this mesh",
            ));
        }
        Ok(self
            .lumped_mass()
            .iter()
            .zip(field.values())
            .map(|(m, v)| m * v)
            .sum())
    }

    /// Boundary integral of the trace of a scalar nodal field. In 1D this is
    /// the counting measure: the sum of the two endpoint values.
    pub fn integrate_boundary(&self, field: &NodalField) -> Result<f64> {
        if field.components() != 1 || field.n_nodes() != self.n_nodes() {
            return Err(SolverError::invalid(
                "integrate_boundary expects a scalar field on this mesh",
            ));
        }
        let mut total = 0.0;
        for f in &self.boundary {
            if f.node_count() == 1 {
                total += field.get(f.nodes[0], 0) * f.measure;
            } else {
                let avg = 0.5 * (field.get(f.nodes[0], 0) + field.get(f.nodes[1], 0));
                total += avg * f.measure;
            }
        }
        Ok(total)
    }
}

/// Nodal coefficient vector with a fixed number of components per node.
/// Storage is node-major: `values[node * components + comp]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalField {
    components: usize,
    values: Vec<f64>,
}

impl NodalField {
    pub fn zeros(n_nodes: usize, components: usize) -> NodalField {
        NodalField {
            components,
            values: vec![0.0; n_nodes * components],
        }
    }

    pub fn constant(n_nodes: usize, comp_values: &[f64]) -> NodalField {
        let components = comp_values.len();
        let mut values = Vec::with_capacity(n_nodes * components);
        for _ in 0..n_nodes {
            values.extend_from_slice(comp_values);
        }
        NodalField { components, values }
    }

    pub fn from_values(components: usize, values: Vec<f64>) -> Result<NodalField> {
        if components == 0 || values.len() % components != 0 {
            return Err(SolverError::invalid(format!(
                "field length {} is not a multiple of {} components",
                values.len(),
                components
            )));
        }
        Ok(NodalField { components, values })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.components
    }

    pub fn get(&self, node: usize, comp: usize) -> f64 {
        self.values[node * self.components + comp]
    }

    pub fn set(&mut self, node: usize, comp: usize, v: f64) {
        self.values[node * self.components + comp] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Value of component `comp` at quadrature point `q` of `cell`.
    pub fn at_qp(&self, mesh: &Mesh, cell: usize, q: usize, comp: usize) -> f64 {
        let basis = mesh.qp_basis(q);
        mesh.cell_nodes(cell)
            .iter()
            .zip(basis)
            .map(|(&n, &b)| b * self.get(n, comp))
            .sum()
    }

    /// Constant gradient of component `comp` on `cell`.
    pub fn grad_on_cell(&self, mesh: &Mesh, cell: usize, comp: usize) -> [f64; 2] {
        let mut g = [0.0, 0.0];
        for (k, &n) in mesh.cell_nodes(cell).iter().enumerate() {
            let gb = mesh.basis_grad(cell, k);
            let v = self.get(n, comp);
            g[0] += gb[0] * v;
            g[1] += gb[1] * v;
        }
        g
    }
}
