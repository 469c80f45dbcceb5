//! Quadrature rules on the reference tetrahedron and assembly of the weighted
//! mass matrices, the curl coupling, and time-dependent load vectors.
//!
//! The degree-2 rule is the assembly default: it integrates products of the
//! affine Whitney fields with cellwise-constant coefficients exactly. The
//! 14-point rule serves as the higher-degree oracle for error norms and
//! cross-checks, keeping oracle and implementation on separate rules.

use std::sync::Arc;

use thiserror::Error;

use crate::derham::DeRhamComplex;
use crate::geometry::{dot, mat_vec, Point3};
use crate::sparse::{CsrMatrix, DenseVector, SparseError};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("coefficient tensor is not symmetric at cell {cell} (asymmetry {asymmetry:.3e})")]
    NonSymmetricTensor { cell: usize, asymmetry: f64 },
    #[error("coefficient tensor fails the ellipticity check at cell {cell} (min eigenvalue {eigenvalue:.3e})")]
    NotElliptic { cell: usize, eigenvalue: f64 },
    #[error("coefficient tensor has a negative-definite sample at cell {cell} (min eigenvalue {eigenvalue:.3e})")]
    NegativeSample { cell: usize, eigenvalue: f64 },
    #[error("per-cell tensor list has {given} entries, mesh has {cells} cells")]
    PerCellLengthMismatch { given: usize, cells: usize },
    #[error("non-finite field value at point {point:?}")]
    NonFiniteField { point: Point3 },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Symmetric 3x3 coefficient tensor field: cellwise constant or analytic.
#[derive(Clone)]
pub struct TensorField {
    kind: TensorKind,
    /// Declared uniform ellipticity lower bound, if the caller knows one.
    pub ellipticity_bound: Option<f64>,
}

#[derive(Clone)]
enum TensorKind {
    Constant([[f64; 3]; 3]),
    PerCell(Arc<Vec<[[f64; 3]; 3]>>),
    Analytic(Arc<dyn Fn(Point3) -> [[f64; 3]; 3] + Send + Sync>),
}

impl std::fmt::Debug for TensorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            TensorKind::Constant(m) => write!(f, "TensorField::Constant({m:?})"),
            TensorKind::PerCell(v) => write!(f, "TensorField::PerCell({} cells)", v.len()),
            TensorKind::Analytic(_) => write!(f, "TensorField::Analytic"),
        }
    }
}

impl TensorField {
    pub fn identity() -> Self {
        Self::scalar(1.0)
    }

    pub fn scalar(s: f64) -> Self {
        Self {
            kind: TensorKind::Constant([[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]]),
            ellipticity_bound: Some(s),
        }
    }

    pub fn constant(m: [[f64; 3]; 3]) -> Self {
        Self {
            kind: TensorKind::Constant(m),
            ellipticity_bound: None,
        }
    }

    pub fn per_cell(values: Vec<[[f64; 3]; 3]>) -> Self {
        Self {
            kind: TensorKind::PerCell(Arc::new(values)),
            ellipticity_bound: None,
        }
    }

    pub fn analytic(f: impl Fn(Point3) -> [[f64; 3]; 3] + Send + Sync + 'static) -> Self {
        Self {
            kind: TensorKind::Analytic(Arc::new(f)),
            ellipticity_bound: None,
        }
    }

    /// Scales the field by a constant (useful for bilinearity checks).
    pub fn scaled(&self, c: f64) -> Self {
        let inner = self.clone();
        let kind = match &inner.kind {
            TensorKind::Constant(m) => {
                let mut s = *m;
                for row in s.iter_mut() {
                    for v in row.iter_mut() {
                        *v *= c;
                    }
                }
                TensorKind::Constant(s)
            }
            TensorKind::PerCell(v) => {
                let scaled: Vec<[[f64; 3]; 3]> = v
                    .iter()
                    .map(|m| {
                        let mut s = *m;
                        for row in s.iter_mut() {
                            for x in row.iter_mut() {
                                *x *= c;
                            }
                        }
                        s
                    })
                    .collect();
                TensorKind::PerCell(Arc::new(scaled))
            }
            TensorKind::Analytic(f) => {
                let f = f.clone();
                TensorKind::Analytic(Arc::new(move |x| {
                    let mut s = f(x);
                    for row in s.iter_mut() {
                        for v in row.iter_mut() {
                            *v *= c;
                        }
                    }
                    s
                }))
            }
        };
        Self {
            kind,
            ellipticity_bound: self.ellipticity_bound.map(|b| b * c),
        }
    }

    /// True when one evaluation per cell suffices (constant within cells).
    pub fn is_cellwise_constant(&self) -> bool {
        !matches!(self.kind, TensorKind::Analytic(_))
    }

    /// Evaluates and validates symmetry at a point of a cell.
    pub fn evaluate(&self, cell: usize, x: Point3) -> Result<[[f64; 3]; 3], AssemblyError> {
        let m = match &self.kind {
            TensorKind::Constant(m) => *m,
            TensorKind::PerCell(v) => v[cell],
            TensorKind::Analytic(f) => f(x),
        };
        let mut scale: f64 = 0.0;
        let mut asym: f64 = 0.0;
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                scale = scale.max(v.abs());
                asym = asym.max((v - m[j][i]).abs());
            }
        }
        if asym > 1e-12 * scale {
            return Err(AssemblyError::NonSymmetricTensor {
                cell,
                asymmetry: asym,
            });
        }
        Ok(m)
    }

    fn validate_length(&self, cells: usize) -> Result<(), AssemblyError> {
        if let TensorKind::PerCell(v) = &self.kind {
            if v.len() != cells {
                return Err(AssemblyError::PerCellLengthMismatch {
                    given: v.len(),
                    cells,
                });
            }
        }
        Ok(())
    }
}

/// Definiteness demanded of a coefficient during assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Definiteness {
    /// Sampled eigenvalues must be strictly positive (eps, mu).
    Positive,
    /// Sampled eigenvalues may touch zero within rounding (sigma).
    SemiPositive,
}

/// Smallest eigenvalue of a symmetric 3x3 matrix (trigonometric closed form).
fn min_eigenvalue_sym3(m: &[[f64; 3]; 3]) -> f64 {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        return m[0][0].min(m[1][1]).min(m[2][2]);
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0_f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let detb = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (detb / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    // Eigenvalues are q + 2p cos(phi + 2k pi / 3); k = 1 gives the smallest.
    q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos()
}

fn check_definiteness(
    m: &[[f64; 3]; 3],
    cell: usize,
    requirement: Definiteness,
) -> Result<(), AssemblyError> {
    let lambda_min = min_eigenvalue_sym3(m);
    match requirement {
        Definiteness::Positive if lambda_min <= 0.0 => Err(AssemblyError::NotElliptic {
            cell,
            eigenvalue: lambda_min,
        }),
        Definiteness::SemiPositive if lambda_min < -1e-12 => Err(AssemblyError::NegativeSample {
            cell,
            eigenvalue: lambda_min,
        }),
        _ => Ok(()),
    }
}

/// Time-dependent volumetric source `f(x, t)`.
#[derive(Clone)]
pub struct SourceField {
    eval: Arc<dyn Fn(Point3, f64) -> [f64; 3] + Send + Sync>,
    /// Declared temporal integrability class; informational only.
    pub time_class: Option<String>,
}

impl std::fmt::Debug for SourceField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SourceField(time class: {:?})", self.time_class)
    }
}

impl SourceField {
    pub fn new(f: impl Fn(Point3, f64) -> [f64; 3] + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(f),
            time_class: None,
        }
    }

    pub fn zero() -> Self {
        Self::new(|_, _| [0.0; 3])
    }

    pub fn with_time_class(mut self, class: impl Into<String>) -> Self {
        self.time_class = Some(class.into());
        self
    }

    pub fn evaluate(&self, x: Point3, t: f64) -> Result<[f64; 3], AssemblyError> {
        let v = (self.eval)(x, t);
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(AssemblyError::NonFiniteField { point: x })
        }
    }
}

/// Time-independent analytic vector field (projection targets, exact
/// solutions, error references).
#[derive(Clone)]
pub struct VectorField {
    eval: Arc<dyn Fn(Point3) -> [f64; 3] + Send + Sync>,
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VectorField")
    }
}

impl VectorField {
    pub fn new(f: impl Fn(Point3) -> [f64; 3] + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(f) }
    }

    pub fn zero() -> Self {
        Self::new(|_| [0.0; 3])
    }

    pub fn constant(v: [f64; 3]) -> Self {
        Self::new(move |_| v)
    }

    pub fn evaluate(&self, x: Point3) -> Result<[f64; 3], AssemblyError> {
        let v = (self.eval)(x);
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(AssemblyError::NonFiniteField { point: x })
        }
    }
}

/// Quadrature rule on the reference tetrahedron, stored in barycentric
/// coordinates with weights summing to one (reference-volume normalization).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    points: Vec<[f64; 4]>,
    weights: Vec<f64>,
    degree: usize,
}

impl QuadratureRule {
    /// Symmetric 4-point rule, exact for polynomials of total degree <= 2.
    pub fn degree2() -> Self {
        let s5 = 5.0_f64.sqrt();
        let a = (5.0 + 3.0 * s5) / 20.0;
        let b = (5.0 - s5) / 20.0;
        let rule = Self {
            points: vec![[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]],
            weights: vec![0.25; 4],
            degree: 2,
        };
        rule.verify_exactness();
        rule
    }

    /// Symmetric 14-point rule, declared exact to total degree 4 (used for
    /// error norms and assembly oracles).
    pub fn degree4() -> Self {
        let b1 = 0.310_885_919_263_300_6;
        let a1 = 1.0 - 3.0 * b1;
        let w1 = 0.112_687_925_718_016_2;
        let b2 = 0.092_735_250_310_891_2;
        let a2 = 1.0 - 3.0 * b2;
        let w2 = 0.073_493_043_116_361_95;
        let c = 0.454_496_295_874_350_6;
        let d = 0.5 - c;
        let w3 = 0.042_546_020_777_081_47;
        let mut points = Vec::with_capacity(14);
        let mut weights = Vec::with_capacity(14);
        for k in 0..4 {
            let mut p = [b1; 4];
            p[k] = a1;
            points.push(p);
            weights.push(w1);
        }
        for k in 0..4 {
            let mut p = [b2; 4];
            p[k] = a2;
            points.push(p);
            weights.push(w2);
        }
        for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
            let mut p = [d; 4];
            p[i] = c;
            p[j] = c;
            points.push(p);
            weights.push(w3);
        }
        let rule = Self {
            points,
            weights,
            degree: 4,
        };
        rule.verify_exactness();
        rule
    }

    /// Rule for a requested polynomial degree: the 4-point rule through
    /// degree 2, the 14-point rule beyond.
    pub fn for_degree(degree: usize) -> Self {
        if degree <= 2 {
            Self::degree2()
        } else {
            Self::degree4()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn points(&self) -> &[[f64; 4]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Relative error against the exact integral of the reference-tet
    /// monomial `x^i y^j z^k`.
    pub fn monomial_error(&self, i: u32, j: u32, k: u32) -> f64 {
        let exact = monomial_integral(i, j, k);
        let mut approx = 0.0;
        for (p, w) in self.points.iter().zip(&self.weights) {
            // x = lambda_1, y = lambda_2, z = lambda_3 on the reference tet.
            approx += w * p[1].powi(i as i32) * p[2].powi(j as i32) * p[3].powi(k as i32);
        }
        approx /= 6.0;
        (approx - exact).abs() / exact
    }

    fn verify_exactness(&self) {
        let mut worst: f64 = 0.0;
        for total in 0..=self.degree as u32 {
            for i in 0..=total {
                for j in 0..=(total - i) {
                    let k = total - i - j;
                    worst = worst.max(self.monomial_error(i, j, k));
                }
            }
        }
        assert!(
            worst <= 1e-13,
            "quadrature rule misses declared degree {} (worst relative error {worst:.3e})",
            self.degree
        );
        let wsum: f64 = self.weights.iter().sum();
        assert!((wsum - 1.0).abs() <= 1e-14, "weights must sum to 1");
    }
}

/// Exact `int x^i y^j z^k` over the reference tetrahedron:
/// `i! j! k! / (i + j + k + 3)!`.
fn monomial_integral(i: u32, j: u32, k: u32) -> f64 {
    fn factorial(n: u32) -> f64 {
        (1..=n).map(|m| m as f64).product()
    }
    factorial(i) * factorial(j) * factorial(k) / factorial(i + j + k + 3)
}

/// Which element space a coefficient vector indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Boundary-conditioned Nedelec field over interior edges.
    Nedelec,
    /// Raviart-Thomas field over all faces.
    Rt,
}

/// Mass matrix `(eps w_i, w_j)` on the boundary-conditioned Nedelec space
/// (interior edges); symmetric positive definite for elliptic `eps`.
pub fn assemble_mass_nedelec(
    complex: &DeRhamComplex,
    eps: &TensorField,
) -> Result<CsrMatrix, AssemblyError> {
    assemble_mass_nedelec_with_rule(complex, eps, &QuadratureRule::degree2())
}

/// Degree-override variant kept separate so tests can run the oracle rule.
pub fn assemble_mass_nedelec_with_rule(
    complex: &DeRhamComplex,
    eps: &TensorField,
    rule: &QuadratureRule,
) -> Result<CsrMatrix, AssemblyError> {
    assemble_edge_mass(complex, eps, rule, Definiteness::Positive)
}

/// Mass matrix `(sigma w_i, w_j)`; symmetric positive semi-definite.
pub fn assemble_mass_sigma(
    complex: &DeRhamComplex,
    sigma: &TensorField,
) -> Result<CsrMatrix, AssemblyError> {
    assemble_edge_mass(
        complex,
        sigma,
        &QuadratureRule::degree2(),
        Definiteness::SemiPositive,
    )
}

fn assemble_edge_mass(
    complex: &DeRhamComplex,
    tensor: &TensorField,
    rule: &QuadratureRule,
    requirement: Definiteness,
) -> Result<CsrMatrix, AssemblyError> {
    let mesh = complex.mesh();
    tensor.validate_length(mesh.cell_count())?;
    let n = complex.interior_edge_count();
    let idx = complex.interior_edge_index();
    let mut triplets = Vec::new();
    for cell in 0..mesh.cell_count() {
        let vol = complex.cell_volume(cell);
        let slots: Vec<Option<usize>> = complex
            .cell_edge_dofs(cell)
            .iter()
            .map(|dof| idx[dof.edge])
            .collect();
        if slots.iter().all(Option::is_none) {
            // Definiteness of the coefficient is still a data-validity
            // question even where no DOF survives the boundary condition.
            let x = complex.point_from_barycentric(cell, &[0.25; 4]);
            check_definiteness(&tensor.evaluate(cell, x)?, cell, requirement)?;
            continue;
        }
        let mut local = [[0.0_f64; 6]; 6];
        if tensor.is_cellwise_constant() {
            let x = complex.point_from_barycentric(cell, &[0.25; 4]);
            let t = tensor.evaluate(cell, x)?;
            check_definiteness(&t, cell, requirement)?;
            for (q, lambda) in rule.points().iter().enumerate() {
                let w = rule.weights()[q] * vol;
                let vals: Vec<Point3> = (0..6)
                    .map(|k| complex.edge_basis_value(cell, k, lambda))
                    .collect();
                for i in 0..6 {
                    let ti = mat_vec(&t, vals[i]);
                    for j in 0..6 {
                        local[i][j] += w * dot(ti, vals[j]);
                    }
                }
            }
        } else {
            for (q, lambda) in rule.points().iter().enumerate() {
                let x = complex.point_from_barycentric(cell, lambda);
                let t = tensor.evaluate(cell, x)?;
                check_definiteness(&t, cell, requirement)?;
                let w = rule.weights()[q] * vol;
                let vals: Vec<Point3> = (0..6)
                    .map(|k| complex.edge_basis_value(cell, k, lambda))
                    .collect();
                for i in 0..6 {
                    let ti = mat_vec(&t, vals[i]);
                    for j in 0..6 {
                        local[i][j] += w * dot(ti, vals[j]);
                    }
                }
            }
        }
        for i in 0..6 {
            let Some(gi) = slots[i] else { continue };
            for j in 0..6 {
                let Some(gj) = slots[j] else { continue };
                triplets.push((gi, gj, local[i][j]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, &triplets)?)
}

/// Mass matrix `(mu_inv w_f, w_g)` on the Raviart-Thomas space (all faces);
/// symmetric positive definite for elliptic `mu_inv`.
pub fn assemble_mass_rt(
    complex: &DeRhamComplex,
    mu_inv: &TensorField,
) -> Result<CsrMatrix, AssemblyError> {
    assemble_mass_rt_with_rule(complex, mu_inv, &QuadratureRule::degree2())
}

pub fn assemble_mass_rt_with_rule(
    complex: &DeRhamComplex,
    mu_inv: &TensorField,
    rule: &QuadratureRule,
) -> Result<CsrMatrix, AssemblyError> {
    let mesh = complex.mesh();
    mu_inv.validate_length(mesh.cell_count())?;
    let n = complex.face_dofs();
    let mut triplets = Vec::new();
    for cell in 0..mesh.cell_count() {
        let vol = complex.cell_volume(cell);
        let mut local = [[0.0_f64; 4]; 4];
        let constant = if mu_inv.is_cellwise_constant() {
            let x = complex.point_from_barycentric(cell, &[0.25; 4]);
            let t = mu_inv.evaluate(cell, x)?;
            check_definiteness(&t, cell, Definiteness::Positive)?;
            Some(t)
        } else {
            None
        };
        for (q, lambda) in rule.points().iter().enumerate() {
            let x = complex.point_from_barycentric(cell, lambda);
            let t = match constant {
                Some(t) => t,
                None => {
                    let t = mu_inv.evaluate(cell, x)?;
                    check_definiteness(&t, cell, Definiteness::Positive)?;
                    t
                }
            };
            let w = rule.weights()[q] * vol;
            let vals: [Point3; 4] = [
                complex.face_basis_value(cell, 0, x),
                complex.face_basis_value(cell, 1, x),
                complex.face_basis_value(cell, 2, x),
                complex.face_basis_value(cell, 3, x),
            ];
            for i in 0..4 {
                let ti = mat_vec(&t, vals[i]);
                for j in 0..4 {
                    local[i][j] += w * dot(ti, vals[j]);
                }
            }
        }
        let dofs = complex.cell_face_dofs(cell);
        for i in 0..4 {
            for j in 0..4 {
                triplets.push((dofs[i].face, dofs[j].face, local[i][j]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, &triplets)?)
}

/// The mu-weighted curl coupling (interior edges x faces), assembled through
/// the incidence factorization `C_r^T * M_RT(mu_inv)`. This is the production
/// path: it keeps the discrete Gauss-law mechanism `D * C = 0` on the solve
/// path. [`assemble_curl_coupling_direct`] is the quadrature cross-check.
pub fn assemble_curl_coupling(
    complex: &DeRhamComplex,
    mu_inv: &TensorField,
) -> Result<CsrMatrix, AssemblyError> {
    let m_rt = assemble_mass_rt(complex, mu_inv)?;
    Ok(complex.curl_interior_matrix().transpose().matmul(&m_rt)?)
}

/// Direct degree-2 quadrature of `(mu_inv w_f, curl w_e)`; test oracle for
/// the factorized path.
pub fn assemble_curl_coupling_direct(
    complex: &DeRhamComplex,
    mu_inv: &TensorField,
) -> Result<CsrMatrix, AssemblyError> {
    let rule = QuadratureRule::degree2();
    let mesh = complex.mesh();
    mu_inv.validate_length(mesh.cell_count())?;
    let idx = complex.interior_edge_index();
    let mut triplets = Vec::new();
    for cell in 0..mesh.cell_count() {
        let vol = complex.cell_volume(cell);
        let curls: Vec<Point3> = (0..6).map(|k| complex.edge_basis_curl(cell, k)).collect();
        let mut local = [[0.0_f64; 4]; 6];
        let constant = if mu_inv.is_cellwise_constant() {
            let x = complex.point_from_barycentric(cell, &[0.25; 4]);
            Some(mu_inv.evaluate(cell, x)?)
        } else {
            None
        };
        for (q, lambda) in rule.points().iter().enumerate() {
            let x = complex.point_from_barycentric(cell, lambda);
            let t = match constant {
                Some(t) => t,
                None => mu_inv.evaluate(cell, x)?,
            };
            let w = rule.weights()[q] * vol;
            for (j, phi) in (0..4)
                .map(|k| complex.face_basis_value(cell, k, x))
                .enumerate()
            {
                let tphi = mat_vec(&t, phi);
                for (i, curl) in curls.iter().enumerate() {
                    local[i][j] += w * dot(tphi, *curl);
                }
            }
        }
        let edge_dofs = complex.cell_edge_dofs(cell);
        let face_dofs = complex.cell_face_dofs(cell);
        for i in 0..6 {
            let Some(gi) = idx[edge_dofs[i].edge] else {
                continue;
            };
            for j in 0..4 {
                triplets.push((gi, face_dofs[j].face, local[i][j]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(
        complex.interior_edge_count(),
        complex.face_dofs(),
        &triplets,
    )?)
}

/// Curl-curl stiffness `(curl w_e, curl w_e')` on interior edges, via the
/// incidence factorization `C_r^T * M_RT(I) * C_r`.
pub fn assemble_curl_stiffness(complex: &DeRhamComplex) -> Result<CsrMatrix, AssemblyError> {
    let m_rt = assemble_mass_rt(complex, &TensorField::identity())?;
    let c_r = complex.curl_interior_matrix();
    Ok(c_r.transpose().matmul(&m_rt.matmul(c_r)?)?)
}

/// Load vector `(f(., t), w_e)` over interior edges, degree-2 quadrature.
pub fn assemble_load(
    complex: &DeRhamComplex,
    f: &SourceField,
    t: f64,
) -> Result<DenseVector, AssemblyError> {
    let rule = QuadratureRule::degree2();
    let field = VectorField {
        eval: {
            let f = f.clone();
            Arc::new(move |x| (f.eval)(x, t))
        },
    };
    assemble_nedelec_load(complex, &field, &rule)
}

/// Load vector `(u, w_e)` over interior edges with an explicit rule.
pub fn assemble_nedelec_load(
    complex: &DeRhamComplex,
    u: &VectorField,
    rule: &QuadratureRule,
) -> Result<DenseVector, AssemblyError> {
    let mesh = complex.mesh();
    let idx = complex.interior_edge_index();
    let mut out = DenseVector::zeros(complex.interior_edge_count());
    for cell in 0..mesh.cell_count() {
        let vol = complex.cell_volume(cell);
        let mut local = [0.0_f64; 6];
        for (q, lambda) in rule.points().iter().enumerate() {
            let x = complex.point_from_barycentric(cell, lambda);
            let fx = u.evaluate(x)?;
            let w = rule.weights()[q] * vol;
            for (k, lk) in local.iter_mut().enumerate() {
                *lk += w * dot(fx, complex.edge_basis_value(cell, k, lambda));
            }
        }
        let dofs = complex.cell_edge_dofs(cell);
        for k in 0..6 {
            if let Some(slot) = idx[dofs[k].edge] {
                out[slot] += local[k];
            }
        }
    }
    Ok(out)
}

/// Load vector `(u, w_f)` over faces with an explicit rule.
pub fn assemble_rt_load(
    complex: &DeRhamComplex,
    u: &VectorField,
    rule: &QuadratureRule,
) -> Result<DenseVector, AssemblyError> {
    let mesh = complex.mesh();
    let mut out = DenseVector::zeros(complex.face_dofs());
    for cell in 0..mesh.cell_count() {
        let vol = complex.cell_volume(cell);
        let mut local = [0.0_f64; 4];
        for (q, lambda) in rule.points().iter().enumerate() {
            let x = complex.point_from_barycentric(cell, lambda);
            let fx = u.evaluate(x)?;
            let w = rule.weights()[q] * vol;
            for (k, lk) in local.iter_mut().enumerate() {
                *lk += w * dot(fx, complex.face_basis_value(cell, k, x));
            }
        }
        let dofs = complex.cell_face_dofs(cell);
        for k in 0..4 {
            out[dofs[k].face] += local[k];
        }
    }
    Ok(out)
}

/// `sqrt(int |u_h - u|^2)` with per-cell quadrature of the requested degree
/// (degree 4 is the error-norm default).
pub fn l2_error_field(
    complex: &DeRhamComplex,
    coefficients: &DenseVector,
    space: Space,
    exact: &VectorField,
    quad_degree: usize,
) -> Result<f64, AssemblyError> {
    let rule = QuadratureRule::for_degree(quad_degree);
    let mesh = complex.mesh();
    let mut acc = 0.0;
    for cell in 0..mesh.cell_count() {
        let vol = complex.cell_volume(cell);
        for (q, lambda) in rule.points().iter().enumerate() {
            let x = complex.point_from_barycentric(cell, lambda);
            let uh = match space {
                Space::Nedelec => complex.eval_nedelec(cell, coefficients, lambda),
                Space::Rt => complex.eval_rt(cell, coefficients, x),
            };
            let ux = exact.evaluate(x)?;
            let d = [uh[0] - ux[0], uh[1] - ux[1], uh[2] - ux[2]];
            acc += rule.weights()[q] * vol * dot(d, d);
        }
    }
    Ok(acc.sqrt())
}

/// `sqrt(int |curl u_h - g|^2)` for a boundary-conditioned Nedelec field with
/// analytic reference curl `g`.
pub fn l2_error_curl(
    complex: &DeRhamComplex,
    coefficients: &DenseVector,
    exact_curl: &VectorField,
    quad_degree: usize,
) -> Result<f64, AssemblyError> {
    let rule = QuadratureRule::for_degree(quad_degree);
    let mesh = complex.mesh();
    let mut acc = 0.0;
    for cell in 0..mesh.cell_count() {
        let vol = complex.cell_volume(cell);
        let ch = complex.eval_nedelec_curl(cell, coefficients);
        for (q, lambda) in rule.points().iter().enumerate() {
            let x = complex.point_from_barycentric(cell, lambda);
            let gx = exact_curl.evaluate(x)?;
            let d = [ch[0] - gx[0], ch[1] - gx[1], ch[2] - gx[2]];
            acc += rule.weights()[q] * vol * dot(d, d);
        }
    }
    Ok(acc.sqrt())
}

/// `sqrt(int |u|^2)` by per-cell quadrature; the norm paired with
/// [`l2_error_field`] in orthogonality checks.
pub fn l2_norm_field(
    complex: &DeRhamComplex,
    u: &VectorField,
    quad_degree: usize,
) -> Result<f64, AssemblyError> {
    l2_error_field(
        complex,
        &DenseVector::zeros(match_space_len(complex, Space::Rt)),
        Space::Rt,
        u,
        quad_degree,
    )
}

fn match_space_len(complex: &DeRhamComplex, space: Space) -> usize {
    match space {
        Space::Nedelec => complex.interior_edge_count(),
        Space::Rt => complex.face_dofs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derham::build_complex;
    use crate::mesh::{generate_box_mesh, reference_tet, BoxExtents};
    use crate::sparse::cg_solve;

    fn pseudo(i: usize) -> f64 {
        (((i as f64) + 1.0) * 78.233).sin() * 0.5
    }

    #[test]
    fn degree2_rule_integrates_quadratics() {
        let rule = QuadratureRule::degree2();
        for (i, j, k) in [(0, 0, 0), (1, 0, 0), (2, 0, 0), (1, 1, 0), (0, 1, 1)] {
            assert!(rule.monomial_error(i, j, k) <= 1e-15);
        }
    }

    #[test]
    fn degree4_rule_integrates_quartics() {
        let rule = QuadratureRule::degree4();
        assert_eq!(rule.len(), 14);
        for (i, j, k) in [(4, 0, 0), (2, 2, 0), (2, 1, 1), (1, 1, 2), (3, 1, 0)] {
            assert!(rule.monomial_error(i, j, k) <= 1e-13);
        }
    }

    #[test]
    fn single_tet_nedelec_mass_is_empty() {
        let mesh = reference_tet();
        let cx = build_complex(&mesh);
        let m = assemble_mass_nedelec(&cx, &TensorField::identity()).unwrap();
        assert_eq!(m.rows(), 0);
        assert_eq!(m.cols(), 0);
    }

    #[test]
    fn nedelec_mass_is_spd() {
        let mesh = generate_box_mesh(2, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let m = assemble_mass_nedelec(&cx, &TensorField::identity()).unwrap();
        assert!(m.is_symmetric(1e-14));
        // Rayleigh sampling plus a CG solve as the SPD probe.
        let n = m.rows();
        for trial in 0..5 {
            let x = DenseVector::from_vec((0..n).map(|i| pseudo(i + trial * n)).collect()).unwrap();
            let q = x.dot(&m.spmv(&x).unwrap());
            assert!(q > 0.0);
        }
        let b = DenseVector::from_vec((0..n).map(pseudo).collect()).unwrap();
        assert!(cg_solve(&m, &b, 1e-12, 10 * n).is_ok());
    }

    #[test]
    fn scaling_epsilon_by_two_doubles_entries_exactly() {
        let mesh = generate_box_mesh(1, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let m1 = assemble_mass_nedelec(&cx, &TensorField::identity()).unwrap();
        let m2 = assemble_mass_nedelec(&cx, &TensorField::scalar(2.0)).unwrap();
        let diff = CsrMatrix::linear_combination(&[(2.0, &m1), (-1.0, &m2)]).unwrap();
        assert_eq!(diff.max_abs(), 0.0);
    }

    #[test]
    fn scaling_mu_by_three_scales_rt_mass() {
        let mesh = reference_tet();
        let cx = build_complex(&mesh);
        let m1 = assemble_mass_rt(&cx, &TensorField::identity()).unwrap();
        let m3 = assemble_mass_rt(&cx, &TensorField::scalar(3.0)).unwrap();
        let diff = CsrMatrix::linear_combination(&[(3.0, &m1), (-1.0, &m3)]).unwrap();
        assert!(diff.max_abs() <= 1e-15 * m3.max_abs());
    }

    #[test]
    fn rt_mass_single_tet_diagonal_symmetry() {
        // Reference-tet RT mass against the degree-4 oracle, and the pairwise
        // equalities its permutation symmetry forces.
        let mesh = reference_tet();
        let cx = build_complex(&mesh);
        let m2 = assemble_mass_rt(&cx, &TensorField::identity()).unwrap();
        let m4 =
            assemble_mass_rt_with_rule(&cx, &TensorField::identity(), &QuadratureRule::degree4())
                .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((m2.get(i, j) - m4.get(i, j)).abs() <= 1e-13);
            }
        }
        assert!(m2.is_symmetric(1e-15));
        // In the lexicographic face ordering, faces 0..2 are the axis planes
        // {z=0}, {y=0}, {x=0}; coordinate permutations fixing the reference
        // tet map them to each other, so their diagonal entries agree.
        let d0 = m2.get(0, 0);
        assert!((m2.get(1, 1) - d0).abs() <= 1e-13);
        assert!((m2.get(2, 2) - d0).abs() <= 1e-13);
    }

    #[test]
    fn rt_mass_reproduces_constant_field_pairings() {
        let mesh = reference_tet();
        let cx = build_complex(&mesh);
        let m = assemble_mass_rt(&cx, &TensorField::identity()).unwrap();
        let constant = VectorField::constant([1.0, 0.0, 0.0]);
        // RT0 contains constants: interpolate by face fluxes.
        let mut beta = DenseVector::zeros(cx.face_dofs());
        for (f, tri) in mesh.faces().iter().enumerate() {
            let p0 = mesh.vertices()[tri[0]];
            let p1 = mesh.vertices()[tri[1]];
            let p2 = mesh.vertices()[tri[2]];
            let n2 =
                crate::geometry::cross(crate::geometry::sub(p1, p0), crate::geometry::sub(p2, p0));
            beta[f] = 0.5 * n2[0];
        }
        let lhs = m.spmv(&beta).unwrap();
        let rhs = assemble_rt_load(&cx, &constant, &QuadratureRule::degree4()).unwrap();
        for f in 0..cx.face_dofs() {
            assert!((lhs[f] - rhs[f]).abs() <= 1e-13);
        }
    }

    #[test]
    fn sigma_zero_gives_zero_matrix() {
        let mesh = generate_box_mesh(1, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let k = assemble_mass_sigma(&cx, &TensorField::scalar(0.0)).unwrap();
        assert_eq!(k.max_abs(), 0.0);
    }

    #[test]
    fn sigma_identity_equals_epsilon_identity() {
        let mesh = generate_box_mesh(2, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let k = assemble_mass_sigma(&cx, &TensorField::identity()).unwrap();
        let m = assemble_mass_nedelec(&cx, &TensorField::identity()).unwrap();
        let diff = CsrMatrix::linear_combination(&[(1.0, &k), (-1.0, &m)]).unwrap();
        assert_eq!(diff.max_abs(), 0.0);
    }

    #[test]
    fn sigma_mass_is_positive_semidefinite_on_samples() {
        let mesh = generate_box_mesh(2, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let k = assemble_mass_sigma(&cx, &TensorField::identity()).unwrap();
        let n = k.rows();
        for trial in 0..8 {
            let x =
                DenseVector::from_vec((0..n).map(|i| pseudo(i + trial * 31)).collect()).unwrap();
            let q = x.dot(&k.spmv(&x).unwrap());
            assert!(q >= -1e-12 * x.dot(&x));
        }
    }

    #[test]
    fn nonelliptic_epsilon_is_rejected() {
        let mesh = reference_tet();
        let cx = build_complex(&mesh);
        let bad = TensorField::scalar(-1.0);
        assert!(matches!(
            assemble_mass_nedelec(&cx, &bad),
            Err(AssemblyError::NotElliptic { .. })
        ));
        let indefinite =
            TensorField::constant([[1.0, 0.0, 0.0], [0.0, -0.5, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(
            assemble_mass_sigma(&cx, &indefinite),
            Err(AssemblyError::NegativeSample { .. })
        ));
    }

    #[test]
    fn asymmetric_tensor_is_rejected() {
        let mesh = reference_tet();
        let cx = build_complex(&mesh);
        let bad = TensorField::constant([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(
            assemble_mass_rt(&cx, &bad),
            Err(AssemblyError::NonSymmetricTensor { .. })
        ));
    }

    #[test]
    fn coupling_factorized_equals_direct_quadrature() {
        let mesh = generate_box_mesh(2, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let prod = assemble_curl_coupling(&cx, &TensorField::identity()).unwrap();
        let direct = assemble_curl_coupling_direct(&cx, &TensorField::identity()).unwrap();
        assert_eq!(prod.rows(), cx.interior_edge_count());
        assert_eq!(prod.cols(), cx.face_dofs());
        let mut worst: f64 = 0.0;
        for r in 0..prod.rows() {
            for c in 0..prod.cols() {
                worst = worst.max((prod.get(r, c) - direct.get(r, c)).abs());
            }
        }
        assert!(worst <= 1e-12, "dual-path disagreement {worst:.3e}");
    }

    #[test]
    fn coupling_annihilates_gradients() {
        // For alpha = G q with q supported on interior vertices, the coupling
        // row action reduces to M_RT C G q.
        let mesh = generate_box_mesh(2, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let mut q = DenseVector::zeros(cx.vertex_dofs());
        for &v in cx.interior_vertices() {
            q[v] = pseudo(v);
        }
        let alpha_full = cx.grad_matrix().spmv(&q).unwrap();
        // Gradient of a boundary-zero potential has zero boundary circulations.
        let mut alpha_int = DenseVector::zeros(cx.interior_edge_count());
        for (slot, &e) in cx.interior_edges().iter().enumerate() {
            alpha_int[slot] = alpha_full[e];
        }
        let coupling = assemble_curl_coupling(&cx, &TensorField::identity()).unwrap();
        let action = coupling.transpose().spmv(&alpha_int).unwrap();
        assert!(action.max_abs() <= 1e-13);
    }

    #[test]
    fn coupling_single_tet_is_empty() {
        let mesh = reference_tet();
        let cx = build_complex(&mesh);
        let prod = assemble_curl_coupling(&cx, &TensorField::identity()).unwrap();
        assert_eq!(prod.rows(), 0);
        assert_eq!(prod.cols(), 4);
    }

    #[test]
    fn load_of_zero_source_vanishes() {
        let mesh = generate_box_mesh(1, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let f = assemble_load(&cx, &SourceField::zero(), 0.3).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn load_of_constant_source_matches_degree4_oracle() {
        let mesh = generate_box_mesh(1, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let c = [0.3, -1.2, 0.7];
        let f2 = assemble_load(&cx, &SourceField::new(move |_, _| c), 0.0).unwrap();
        let f4 = assemble_nedelec_load(&cx, &VectorField::constant(c), &QuadratureRule::degree4())
            .unwrap();
        for i in 0..f2.len() {
            assert!((f2[i] - f4[i]).abs() <= 1e-14);
        }
    }

    #[test]
    fn load_is_linear_in_the_source() {
        let mesh = generate_box_mesh(1, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let f1 = SourceField::new(|x, t| [x[0] * t, x[1], 0.0]);
        let f2 = SourceField::new(|x, _| [0.0, x[2], x[0] * x[1]]);
        let sum = SourceField::new(|x, t| [x[0] * t, x[1] + x[2], x[0] * x[1]]);
        let t = 0.7;
        let a = assemble_load(&cx, &f1, t).unwrap();
        let b = assemble_load(&cx, &f2, t).unwrap();
        let s = assemble_load(&cx, &sum, t).unwrap();
        for i in 0..s.len() {
            assert!((a[i] + b[i] - s[i]).abs() <= 1e-14);
        }
    }

    #[test]
    fn non_finite_source_is_rejected() {
        let mesh = reference_tet();
        let cx = build_complex(&mesh);
        let f = SourceField::new(|_, _| [f64::INFINITY, 0.0, 0.0]);
        assert!(matches!(
            assemble_load(&cx, &f, 0.0),
            Err(AssemblyError::NonFiniteField { .. })
        ));
    }

    #[test]
    fn l2_error_of_zero_against_zero_is_zero() {
        let mesh = reference_tet();
        let cx = build_complex(&mesh);
        let err = l2_error_field(
            &cx,
            &DenseVector::zeros(cx.face_dofs()),
            Space::Rt,
            &VectorField::zero(),
            4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn l2_error_zero_field_against_unit_constant_is_sqrt_volume() {
        let mesh = generate_box_mesh(2, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let err = l2_error_field(
            &cx,
            &DenseVector::zeros(cx.face_dofs()),
            Space::Rt,
            &VectorField::constant([1.0, 0.0, 0.0]),
            4,
        )
        .unwrap();
        assert!((err - 1.0).abs() <= 1e-13);
    }

    #[test]
    fn rt_interpolant_of_constant_has_tiny_error() {
        let mesh = generate_box_mesh(2, BoxExtents::unit_cube()).unwrap();
        let cx = build_complex(&mesh);
        let c = [0.4, -0.3, 1.1];
        let mut beta = DenseVector::zeros(cx.face_dofs());
        for (f, tri) in mesh.faces().iter().enumerate() {
            let p0 = mesh.vertices()[tri[0]];
            let p1 = mesh.vertices()[tri[1]];
            let p2 = mesh.vertices()[tri[2]];
            let n2 =
                crate::geometry::cross(crate::geometry::sub(p1, p0), crate::geometry::sub(p2, p0));
            beta[f] = 0.5 * crate::geometry::dot(n2, c);
        }
        let err = l2_error_field(&cx, &beta, Space::Rt, &VectorField::constant(c), 4).unwrap();
        assert!(err <= 1e-13);
    }

    #[test]
    fn structure_survives_anisotropic_boxes() {
        // Exactness is combinatorial and the dual-path identity is
        // geometric; neither may depend on unit scaling.
        let extents = crate::mesh::BoxExtents {
            min: [-0.5, 0.0, 1.0],
            max: [1.5, 0.8, 3.0],
        };
        let mesh = generate_box_mesh(2, extents).unwrap();
        let cx = build_complex(&mesh);
        let dc = cx.div_matrix().matmul(cx.curl_matrix()).unwrap();
        assert_eq!(dc.max_abs(), 0.0);
        let prod = assemble_curl_coupling(&cx, &TensorField::identity()).unwrap();
        let direct = assemble_curl_coupling_direct(&cx, &TensorField::identity()).unwrap();
        let gap = CsrMatrix::linear_combination(&[(1.0, &prod), (-1.0, &direct)])
            .unwrap()
            .max_abs();
        assert!(gap <= 1e-12 * prod.max_abs().max(1.0));
        let m = assemble_mass_rt(&cx, &TensorField::identity()).unwrap();
        assert!(m.is_symmetric(1e-14 * m.max_abs()));
    }

    #[test]
    fn min_eigenvalue_of_known_matrices() {
        let d = [[3.0, 0.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, 5.0]];
        assert!((min_eigenvalue_sym3(&d) + 2.0).abs() <= 1e-12);
        // Eigenvalues of this symmetric matrix: 1 and 3 (double).
        let m = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 3.0]];
        assert!((min_eigenvalue_sym3(&m) - 1.0).abs() <= 1e-12);
    }
}
