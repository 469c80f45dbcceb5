//! The lowest-order finite element de Rham sequence on a tetrahedral mesh:
//!
//! ```text
//! P1 --grad--> N0 --curl--> RT0 --div--> Q0 --> 0
//! ```
//!
//! In the entity-based bases the three differential operators are integer
//! incidence matrices `G` (edges x vertices), `C` (faces x edges), and `D`
//! (cells x faces), and the compositions `C*G` and `D*C` vanish exactly; no
//! floating-point tolerance is involved. The tangential-circulation boundary
//! condition for the electric field is imposed by keeping interior-edge
//! degrees of freedom only.

use thiserror::Error;

use crate::geometry::{cross, dot, scale, sub, Point3};
use crate::mesh::{TetMesh, LOCAL_EDGES};
use crate::sparse::{CsrMatrix, DenseVector, SparseError};

#[derive(Debug, Error)]
pub enum DeRhamError {
    #[error("cell index {0} out of range")]
    CellOutOfRange(usize),
    #[error("local index {0} out of range")]
    LocalIndexOutOfRange(usize),
    #[error("point {0:?} lies outside the requested cell")]
    PointOutsideCell(Point3),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Tolerance on barycentric coordinates when deciding point membership.
const BARYCENTRIC_SLACK: f64 = 1e-12;

/// Per-cell Whitney data: barycentric gradients plus local-to-global DOF maps
/// with orientation already folded in.
#[derive(Debug, Clone)]
pub struct WhitneyBasis {
    /// Constant gradients of the four barycentric coordinates, per cell.
    grad_lambda: Vec<[[f64; 3]; 4]>,
    volumes: Vec<f64>,
    /// Local edge DOFs: the local vertex pair ordered so the first has the
    /// lower *global* index, plus the global edge.
    edge_dofs: Vec<[EdgeDof; 6]>,
    /// Local face DOFs: opposite local vertex, global face, and the relative
    /// orientation sign (+1 when the global face normal points out of the cell).
    face_dofs: Vec<[FaceDof; 4]>,
}

#[derive(Debug, Clone, Copy)]
pub struct EdgeDof {
    pub local: [usize; 2],
    pub edge: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FaceDof {
    pub opposite: usize,
    pub face: usize,
    pub sign: f64,
}

/// DOF enumerations and incidence operators of the discrete sequence.
#[derive(Debug)]
pub struct DeRhamComplex<'m> {
    mesh: &'m TetMesh,
    grad: CsrMatrix,
    curl: CsrMatrix,
    div: CsrMatrix,
    /// Maps a global edge to its slot among interior edges, if any.
    interior_edge_index: Vec<Option<usize>>,
    /// Global edge ids of the interior edges, ascending.
    interior_edges: Vec<usize>,
    /// Global vertex ids away from the boundary, ascending.
    interior_vertices: Vec<usize>,
    /// `C` with columns restricted to interior edges (faces x interior edges).
    curl_interior: CsrMatrix,
    whitney: WhitneyBasis,
}

/// Builds the complex: incidence operators, boundary classification, and the
/// per-cell Whitney data.
pub fn build_complex(mesh: &TetMesh) -> DeRhamComplex<'_> {
    let topo = mesh.topology();
    let n_vertex = mesh.vertex_count();
    let n_edge = mesh.edge_count();
    let n_face = mesh.face_count();
    let n_cell = mesh.cell_count();

    // G: row per edge (a, b) with a < b carries -1 at a and +1 at b.
    let mut triplets = Vec::with_capacity(2 * n_edge);
    for (e, [a, b]) in mesh.edges().iter().enumerate() {
        triplets.push((e, *a, -1.0));
        triplets.push((e, *b, 1.0));
    }
    let grad = CsrMatrix::from_triplets(n_edge, n_vertex, &triplets).expect("G triplets valid");

    // C: circulation of the ascending triple (a, b, c) over the boundary
    // edges (a,b), (b,c), (a,c); the last runs against its global direction.
    let edge_id = |a: usize, b: usize| -> usize {
        mesh.edges()
            .binary_search(&[a.min(b), a.max(b)])
            .expect("edge present")
    };
    let mut triplets = Vec::with_capacity(3 * n_face);
    for (f, [a, b, c]) in mesh.faces().iter().enumerate() {
        triplets.push((f, edge_id(*a, *b), 1.0));
        triplets.push((f, edge_id(*b, *c), 1.0));
        triplets.push((f, edge_id(*a, *c), -1.0));
    }
    let curl = CsrMatrix::from_triplets(n_face, n_edge, &triplets).expect("C triplets valid");

    // D: +1 where the global face orientation points out of the cell.
    let mut div_triplets = Vec::with_capacity(4 * n_cell);
    let mut face_dofs = Vec::with_capacity(n_cell);
    let mut edge_dofs = Vec::with_capacity(n_cell);
    let mut grad_lambda = Vec::with_capacity(n_cell);
    let mut volumes = Vec::with_capacity(n_cell);
    for (ci, cell) in mesh.cells().iter().enumerate() {
        let p = mesh.cell_points(ci);
        let e1 = sub(p[1], p[0]);
        let e2 = sub(p[2], p[0]);
        let e3 = sub(p[3], p[0]);
        let det = dot(e1, cross(e2, e3));
        let g1 = scale(1.0 / det, cross(e2, e3));
        let g2 = scale(1.0 / det, cross(e3, e1));
        let g3 = scale(1.0 / det, cross(e1, e2));
        let g0 = [
            -g1[0] - g2[0] - g3[0],
            -g1[1] - g2[1] - g3[1],
            -g1[2] - g2[2] - g3[2],
        ];
        grad_lambda.push([g0, g1, g2, g3]);
        volumes.push(det / 6.0);

        let mut fd = [FaceDof {
            opposite: 0,
            face: 0,
            sign: 0.0,
        }; 4];
        for k in 0..4 {
            let mut tri = [0usize; 3];
            let mut w = 0;
            for (i, &v) in cell.iter().enumerate() {
                if i != k {
                    tri[w] = v;
                    w += 1;
                }
            }
            tri.sort_unstable();
            let fi = mesh.faces().binary_search(&tri).expect("face present");
            let normal = cross(
                sub(mesh.vertices()[tri[1]], mesh.vertices()[tri[0]]),
                sub(mesh.vertices()[tri[2]], mesh.vertices()[tri[0]]),
            );
            // The opposite vertex sits inside the cell, so the normal points
            // outward exactly when it points away from that vertex.
            let toward_opposite = sub(p[k], mesh.vertices()[tri[0]]);
            let sign = if dot(normal, toward_opposite) < 0.0 {
                1.0
            } else {
                -1.0
            };
            fd[k] = FaceDof {
                opposite: k,
                face: fi,
                sign,
            };
            div_triplets.push((ci, fi, sign));
        }
        face_dofs.push(fd);

        let mut ed = [EdgeDof {
            local: [0, 0],
            edge: 0,
        }; 6];
        for (k, [i, j]) in LOCAL_EDGES.iter().enumerate() {
            let (lo, hi) = if cell[*i] < cell[*j] {
                (*i, *j)
            } else {
                (*j, *i)
            };
            ed[k] = EdgeDof {
                local: [lo, hi],
                edge: edge_id(cell[*i], cell[*j]),
            };
        }
        edge_dofs.push(ed);
    }
    let div = CsrMatrix::from_triplets(n_cell, n_face, &div_triplets).expect("D triplets valid");

    let mut interior_edge_index = vec![None; n_edge];
    let mut interior_edges = Vec::new();
    for (e, &on_boundary) in topo.boundary_edge_flags.iter().enumerate() {
        if !on_boundary {
            interior_edge_index[e] = Some(interior_edges.len());
            interior_edges.push(e);
        }
    }
    let interior_vertices = topo
        .boundary_vertex_flags
        .iter()
        .enumerate()
        .filter(|(_, &b)| !b)
        .map(|(v, _)| v)
        .collect();
    let curl_interior = curl.select_columns(&interior_edge_index, interior_edges.len());

    DeRhamComplex {
        mesh,
        grad,
        curl,
        div,
        interior_edge_index,
        interior_edges,
        interior_vertices,
        curl_interior,
        whitney: WhitneyBasis {
            grad_lambda,
            volumes,
            edge_dofs,
            face_dofs,
        },
    }
}

impl<'m> DeRhamComplex<'m> {
    pub fn mesh(&self) -> &'m TetMesh {
        self.mesh
    }

    /// Gradient incidence `G` (edges x vertices).
    pub fn grad_matrix(&self) -> &CsrMatrix {
        &self.grad
    }

    /// Curl incidence `C` (faces x edges).
    pub fn curl_matrix(&self) -> &CsrMatrix {
        &self.curl
    }

    /// Divergence incidence `D` (cells x faces).
    pub fn div_matrix(&self) -> &CsrMatrix {
        &self.div
    }

    /// `C` restricted to interior-edge columns (faces x interior edges).
    pub fn curl_interior_matrix(&self) -> &CsrMatrix {
        &self.curl_interior
    }

    pub fn vertex_dofs(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn edge_dofs(&self) -> usize {
        self.mesh.edge_count()
    }

    pub fn face_dofs(&self) -> usize {
        self.mesh.face_count()
    }

    pub fn cell_dofs(&self) -> usize {
        self.mesh.cell_count()
    }

    /// Dimension of the boundary-conditioned Nedelec space.
    pub fn interior_edge_count(&self) -> usize {
        self.interior_edges.len()
    }

    pub fn interior_edges(&self) -> &[usize] {
        &self.interior_edges
    }

    pub fn interior_edge_index(&self) -> &[Option<usize>] {
        &self.interior_edge_index
    }

    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior_vertices
    }

    pub fn whitney(&self) -> &WhitneyBasis {
        &self.whitney
    }

    pub fn cell_volume(&self, cell: usize) -> f64 {
        self.whitney.volumes[cell]
    }

    pub fn grad_lambda(&self, cell: usize) -> &[[f64; 3]; 4] {
        &self.whitney.grad_lambda[cell]
    }

    pub fn cell_edge_dofs(&self, cell: usize) -> &[EdgeDof; 6] {
        &self.whitney.edge_dofs[cell]
    }

    pub fn cell_face_dofs(&self, cell: usize) -> &[FaceDof; 4] {
        &self.whitney.face_dofs[cell]
    }

    /// Barycentric coordinates of `x` with respect to a cell.
    pub fn barycentric(&self, cell: usize, x: Point3) -> [f64; 4] {
        let p0 = self.mesh.cell_points(cell)[0];
        let g = &self.whitney.grad_lambda[cell];
        let d = sub(x, p0);
        let l1 = dot(g[1], d);
        let l2 = dot(g[2], d);
        let l3 = dot(g[3], d);
        [1.0 - l1 - l2 - l3, l1, l2, l3]
    }

    /// Physical point with the given barycentric coordinates.
    pub fn point_from_barycentric(&self, cell: usize, lambda: &[f64; 4]) -> Point3 {
        let p = self.mesh.cell_points(cell);
        let mut x = [0.0; 3];
        for d in 0..3 {
            x[d] = lambda[0] * p[0][d]
                + lambda[1] * p[1][d]
                + lambda[2] * p[2][d]
                + lambda[3] * p[3][d];
        }
        x
    }

    /// Whitney edge field `w_e = lambda_a grad(lambda_b) - lambda_b grad(lambda_a)`
    /// for the cell's `local_edge`-th edge, evaluated from barycentric
    /// coordinates. Orientation follows the global edge direction.
    pub fn edge_basis_value(&self, cell: usize, local_edge: usize, lambda: &[f64; 4]) -> Point3 {
        let dof = self.whitney.edge_dofs[cell][local_edge];
        let g = &self.whitney.grad_lambda[cell];
        let [a, b] = dof.local;
        [
            lambda[a] * g[b][0] - lambda[b] * g[a][0],
            lambda[a] * g[b][1] - lambda[b] * g[a][1],
            lambda[a] * g[b][2] - lambda[b] * g[a][2],
        ]
    }

    /// Constant curl of the Whitney edge field: `2 grad(lambda_a) x grad(lambda_b)`.
    pub fn edge_basis_curl(&self, cell: usize, local_edge: usize) -> Point3 {
        let dof = self.whitney.edge_dofs[cell][local_edge];
        let g = &self.whitney.grad_lambda[cell];
        scale(2.0, cross(g[dof.local[0]], g[dof.local[1]]))
    }

    /// RT0 face field with unit flux through its own face along the global
    /// face orientation: `sign * (x - x_opposite) / (3 |K|)`.
    pub fn face_basis_value(&self, cell: usize, local_face: usize, x: Point3) -> Point3 {
        let dof = self.whitney.face_dofs[cell][local_face];
        let p_opp = self.mesh.cell_points(cell)[dof.opposite];
        scale(dof.sign / (3.0 * self.whitney.volumes[cell]), sub(x, p_opp))
    }

    /// Constant divergence of the RT0 face field: `sign / |K|`.
    pub fn face_basis_div(&self, cell: usize, local_face: usize) -> f64 {
        let dof = self.whitney.face_dofs[cell][local_face];
        dof.sign / self.whitney.volumes[cell]
    }

    /// Evaluates a boundary-conditioned Nedelec field (interior-edge
    /// coefficients) at barycentric coordinates inside a cell.
    pub fn eval_nedelec(&self, cell: usize, alpha: &DenseVector, lambda: &[f64; 4]) -> Point3 {
        let mut value = [0.0; 3];
        for k in 0..6 {
            let dof = self.whitney.edge_dofs[cell][k];
            if let Some(slot) = self.interior_edge_index[dof.edge] {
                let w = self.edge_basis_value(cell, k, lambda);
                let c = alpha[slot];
                value[0] += c * w[0];
                value[1] += c * w[1];
                value[2] += c * w[2];
            }
        }
        value
    }

    /// Cellwise-constant curl of a boundary-conditioned Nedelec field.
    pub fn eval_nedelec_curl(&self, cell: usize, alpha: &DenseVector) -> Point3 {
        let mut value = [0.0; 3];
        for k in 0..6 {
            let dof = self.whitney.edge_dofs[cell][k];
            if let Some(slot) = self.interior_edge_index[dof.edge] {
                let w = self.edge_basis_curl(cell, k);
                let c = alpha[slot];
                value[0] += c * w[0];
                value[1] += c * w[1];
                value[2] += c * w[2];
            }
        }
        value
    }

    /// Evaluates an RT0 field (face coefficients) at a physical point inside
    /// a cell.
    pub fn eval_rt(&self, cell: usize, beta: &DenseVector, x: Point3) -> Point3 {
        let mut value = [0.0; 3];
        for k in 0..4 {
            let dof = self.whitney.face_dofs[cell][k];
            let w = self.face_basis_value(cell, k, x);
            let c = beta[dof.face];
            value[0] += c * w[0];
            value[1] += c * w[1];
            value[2] += c * w[2];
        }
        value
    }

    /// Finds a cell containing `x` (first match in cell order) together with
    /// the barycentric coordinates; `None` when `x` lies outside the mesh.
    /// Linear scan; meant for evaluating discrete fields as analytic ones,
    /// not for bulk queries.
    pub fn locate(&self, x: Point3) -> Option<(usize, [f64; 4])> {
        for cell in 0..self.mesh.cell_count() {
            let lambda = self.barycentric(cell, x);
            if lambda
                .iter()
                .all(|&l| (-BARYCENTRIC_SLACK..=1.0 + BARYCENTRIC_SLACK).contains(&l))
            {
                return Some((cell, lambda));
            }
        }
        None
    }

    fn check_inside(&self, cell: usize, x: Point3) -> Result<[f64; 4], DeRhamError> {
        if cell >= self.mesh.cell_count() {
            return Err(DeRhamError::CellOutOfRange(cell));
        }
        let lambda = self.barycentric(cell, x);
        if lambda
            .iter()
            .any(|&l| !(-BARYCENTRIC_SLACK..=1.0 + BARYCENTRIC_SLACK).contains(&l))
        {
            return Err(DeRhamError::PointOutsideCell(x));
        }
        Ok(lambda)
    }
}

/// Checked evaluation of the Whitney edge field at a point of a cell.
pub fn whitney_edge_eval(
    complex: &DeRhamComplex,
    cell: usize,
    local_edge: usize,
    point: Point3,
) -> Result<Point3, DeRhamError> {
    if local_edge >= 6 {
        return Err(DeRhamError::LocalIndexOutOfRange(local_edge));
    }
    let lambda = complex.check_inside(cell, point)?;
    Ok(complex.edge_basis_value(cell, local_edge, &lambda))
}

/// Checked evaluation of the RT0 face field at a point of a cell.
pub fn whitney_face_eval(
    complex: &DeRhamComplex,
    cell: usize,
    local_face: usize,
    point: Point3,
) -> Result<Point3, DeRhamError> {
    if local_face >= 4 {
        return Err(DeRhamError::LocalIndexOutOfRange(local_face));
    }
    complex.check_inside(cell, point)?;
    Ok(complex.face_basis_value(cell, local_face, point))
}

/// Coordinate expression of the curl: face coefficients of `curl v_h` for an
/// all-edge coefficient vector, i.e. `C * alpha`. Boundary entries of a
/// boundary-conditioned field must be zero.
pub fn curl_in_rt_coordinates(
    complex: &DeRhamComplex,
    alpha: &DenseVector,
) -> Result<DenseVector, DeRhamError> {
    Ok(complex.curl_matrix().spmv(alpha)?)
}

/// Embeds interior-edge coefficients into the all-edge enumeration with zero
/// boundary entries.
pub fn embed_interior_edges(complex: &DeRhamComplex, alpha: &DenseVector) -> DenseVector {
    let mut full = DenseVector::zeros(complex.edge_dofs());
    for (slot, &edge) in complex.interior_edges().iter().enumerate() {
        full[edge] = alpha[slot];
    }
    full
}
