//! Minimal sparse/dense linear algebra: CSR storage, preconditioned CG, and
//! the Schur-complement solve for saddle-point systems.
//!
//! All reductions run in a fixed sequential order so that repeated executions
//! are bit-identical.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("triplet ({row}, {col}) outside a {rows}x{cols} matrix")]
    TripletOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("Jacobi preconditioner needs a positive diagonal; row {row} has {value}")]
    BadDiagonal { row: usize, value: f64 },
    #[error(
        "CG did not converge within {iterations} iterations (relative residual {residual:.3e})"
    )]
    CgStalled { iterations: usize, residual: f64 },
    #[error("CG breakdown: direction with nonpositive curvature (matrix not SPD?)")]
    CgBreakdown,
    #[error("saddle-point solve: {0}")]
    Saddle(String),
}

/// Dense vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn zeros(n: usize) -> Self {
        Self { data: vec![0.0; n] }
    }

    /// Builds a vector, rejecting NaN/Inf entries.
    pub fn from_vec(data: Vec<f64>) -> Result<Self, SparseError> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SparseError::NonFinite(i));
        }
        Ok(Self { data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            acc += a * b;
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self += c * x`.
    pub fn add_scaled(&mut self, c: f64, x: &DenseVector) {
        debug_assert_eq!(self.len(), x.len());
        for (a, b) in self.data.iter_mut().zip(x.data.iter()) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> DenseVector {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    pub fn add(&self, other: &DenseVector) -> DenseVector {
        let mut out = self.clone();
        out.add_scaled(1.0, other);
        out
    }

    pub fn subtract(&self, other: &DenseVector) -> DenseVector {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within each row; explicit zeros are permitted.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from (row, col, value) triplets. Duplicates are
    /// summed in (row, col)-sorted order, ties in input order.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(SparseError::TripletOutOfRange {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&i| (triplets[i].0, triplets[i].1));

        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut k = 0;
        while k < order.len() {
            let (r, c, _) = triplets[order[k]];
            let mut sum = 0.0;
            while k < order.len() {
                let (r2, c2, v2) = triplets[order[k]];
                if r2 != r || c2 != c {
                    break;
                }
                sum += v2;
                k += 1;
            }
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(sum);
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored entries of one row as parallel (columns, values) slices.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[r];
        let hi = self.row_offsets[r + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if (v - self.get(c, r)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Matrix-vector product with a fixed per-row accumulation order
    /// (ascending column index).
    pub fn spmv(&self, x: &DenseVector) -> Result<DenseVector, SparseError> {
        if x.len() != self.cols {
            return Err(SparseError::DimensionMismatch(format!(
                "spmv: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = DenseVector::zeros(self.rows);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
        Ok(y)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut row_offsets = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            row_offsets[c + 1] += 1;
        }
        for i in 0..self.cols {
            row_offsets[i + 1] += row_offsets[i];
        }
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = row_offsets.clone();
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                col_indices[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Sparse matrix product `self * other`. Accumulation follows the stored
    /// order of `self`'s rows, so results are deterministic.
    pub fn matmul(&self, other: &CsrMatrix) -> Result<CsrMatrix, SparseError> {
        if self.cols != other.rows {
            return Err(SparseError::DimensionMismatch(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut scratch = vec![0.0_f64; other.cols];
        let mut marked = vec![false; other.cols];
        let mut row_offsets = Vec::with_capacity(self.rows + 1);
        row_offsets.push(0usize);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.rows {
            touched.clear();
            let (acols, avals) = self.row(r);
            for (&j, &av) in acols.iter().zip(avals) {
                let (bcols, bvals) = other.row(j);
                for (&k, &bv) in bcols.iter().zip(bvals) {
                    if !marked[k] {
                        marked[k] = true;
                        scratch[k] = 0.0;
                        touched.push(k);
                    }
                    scratch[k] += av * bv;
                }
            }
            touched.sort_unstable();
            for &k in &touched {
                col_indices.push(k);
                values.push(scratch[k]);
                marked[k] = false;
            }
            row_offsets.push(col_indices.len());
        }
        Ok(CsrMatrix {
            rows: self.rows,
            cols: other.cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Keeps the columns with `keep[c] = Some(new_index)` and renumbers them.
    pub fn select_columns(&self, keep: &[Option<usize>], new_cols: usize) -> CsrMatrix {
        assert_eq!(keep.len(), self.cols);
        let mut row_offsets = Vec::with_capacity(self.rows + 1);
        row_offsets.push(0usize);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let mut entries: Vec<(usize, f64)> = Vec::new();
            for (&c, &v) in cols.iter().zip(vals) {
                if let Some(nc) = keep[c] {
                    entries.push((nc, v));
                }
            }
            entries.sort_by_key(|e| e.0);
            for (c, v) in entries {
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        CsrMatrix {
            rows: self.rows,
            cols: new_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Entrywise linear combination `sum_k c_k A_k`. All matrices must share
    /// one shape; the union sparsity pattern is kept (explicit zeros allowed).
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<CsrMatrix, SparseError> {
        let (rows, cols) = match terms.first() {
            Some((_, a)) => (a.rows, a.cols),
            None => return Ok(CsrMatrix::zeros(0, 0)),
        };
        for (_, a) in terms {
            if a.rows != rows || a.cols != cols {
                return Err(SparseError::DimensionMismatch(
                    "linear_combination: shapes differ".into(),
                ));
            }
        }
        let mut scratch = vec![0.0_f64; cols];
        let mut marked = vec![false; cols];
        let mut row_offsets = Vec::with_capacity(rows + 1);
        row_offsets.push(0usize);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..rows {
            touched.clear();
            for (c_k, a) in terms {
                let (cols_r, vals_r) = a.row(r);
                for (&c, &v) in cols_r.iter().zip(vals_r) {
                    if !marked[c] {
                        marked[c] = true;
                        scratch[c] = 0.0;
                        touched.push(c);
                    }
                    scratch[c] += c_k * v;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_indices.push(c);
                values.push(scratch[c]);
                marked[c] = false;
            }
            row_offsets.push(col_indices.len());
        }
        Ok(CsrMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// MatrixMarket coordinate dump (1-based indices), for debugging.
    pub fn to_matrix_market(&self) -> String {
        let mut out = String::new();
        out.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(out, "{} {} {}", self.rows, self.cols, self.nnz());
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let _ = writeln!(out, "{} {} {:.16e}", r + 1, c + 1, v);
            }
        }
        out
    }
}

/// Result of a converged CG solve.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: DenseVector,
    pub iterations: usize,
    /// Relative true residual `|Ax - b| / |b|` at exit.
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for SPD systems, starting from
/// zero. Convergence is declared only after the true residual (recomputed
/// with [`CsrMatrix::spmv`]) meets the tolerance.
pub fn cg_solve(
    a: &CsrMatrix,
    b: &DenseVector,
    tol: f64,
    max_iter: usize,
) -> Result<CgSolution, SparseError> {
    if a.rows() != a.cols() || a.cols() != b.len() {
        return Err(SparseError::DimensionMismatch(format!(
            "cg_solve: matrix is {}x{}, rhs has length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    if let Some(i) = b.iter().position(|v| !v.is_finite()) {
        return Err(SparseError::NonFinite(i));
    }
    let n = b.len();
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x: DenseVector::zeros(n),
            iterations: 0,
            residual: 0.0,
        });
    }
    let diag = a.diagonal();
    let mut inv_diag = vec![0.0; n];
    for (i, &d) in diag.iter().enumerate() {
        if d <= 0.0 {
            return Err(SparseError::BadDiagonal { row: i, value: d });
        }
        inv_diag[i] = 1.0 / d;
    }
    let apply_prec = |r: &DenseVector| {
        let mut z = DenseVector::zeros(n);
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        z
    };

    let mut x = DenseVector::zeros(n);
    let mut r = b.clone();
    let mut z = apply_prec(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut last_rel = 1.0;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let q = a.spmv(&p)?;
        let pq = p.dot(&q);
        if pq <= 0.0 {
            return Err(SparseError::CgBreakdown);
        }
        let alpha = rz / pq;
        x.add_scaled(alpha, &p);
        r.add_scaled(-alpha, &q);
        last_rel = r.norm() / b_norm;
        if last_rel <= tol {
            // Recurrence residuals drift; accept only on the true residual.
            let true_r = b.subtract(&a.spmv(&x)?);
            let true_rel = true_r.norm() / b_norm;
            if true_rel <= tol {
                return Ok(CgSolution {
                    x,
                    iterations,
                    residual: true_rel,
                });
            }
            r = true_r;
            z = apply_prec(&r);
            p = z.clone();
            rz = r.dot(&z);
            last_rel = true_rel;
            continue;
        }
        z = apply_prec(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        let mut p_new = z.clone();
        p_new.add_scaled(beta, &p);
        p = p_new;
    }
    Err(SparseError::CgStalled {
        iterations,
        residual: last_rel,
    })
}

/// Result of a saddle-point solve.
#[derive(Debug, Clone)]
pub struct SchurSolution {
    pub x: DenseVector,
    pub multiplier: DenseVector,
    pub outer_iterations: usize,
    /// `|M x + B^T p - b|` at exit.
    pub primal_residual: f64,
    /// `|B x - c|` at exit.
    pub constraint_residual: f64,
}

/// Solves the saddle-point system
///
/// ```text
/// M x + B^T p = b
/// B x         = c
/// ```
///
/// with `M` SPD and `B` of full row rank, by outer CG on the Schur complement
/// `S = B M^-1 B^T` with inner CG for the `M`-solves. Inner solves run at
/// `tol / 100` so they do not stall the outer iteration. On exit the KKT
/// residuals are verified against `tol * (1 + |b|)` and `tol * (1 + |c|)`.
pub fn schur_solve(
    m: &CsrMatrix,
    b_mat: &CsrMatrix,
    b: &DenseVector,
    c: &DenseVector,
    tol: f64,
) -> Result<SchurSolution, SparseError> {
    let n = m.rows();
    if m.cols() != n || b_mat.cols() != n || b.len() != n || c.len() != b_mat.rows() {
        return Err(SparseError::DimensionMismatch(format!(
            "schur_solve: M is {}x{}, B is {}x{}, b has length {}, c has length {}",
            m.rows(),
            m.cols(),
            b_mat.rows(),
            b_mat.cols(),
            b.len(),
            c.len()
        )));
    }
    let n_con = b_mat.rows();
    let bt = b_mat.transpose();
    let inner_tol = tol / 100.0;
    let inner_max = 10 * n + 100;
    let outer_max = 10 * n_con + 100;

    let m_solve = |rhs: &DenseVector| -> Result<DenseVector, SparseError> {
        Ok(cg_solve(m, rhs, inner_tol, inner_max)?.x)
    };

    // Schur right-hand side: B M^-1 b - c.
    let y0 = m_solve(b)?;
    let mut rhs = b_mat.spmv(&y0)?;
    rhs.add_scaled(-1.0, c);

    let mut p = DenseVector::zeros(n_con);
    let mut outer_iterations = 0;
    let target = 0.5 * tol * (1.0 + c.norm());
    if rhs.norm() > target && n_con > 0 {
        let apply_schur = |v: &DenseVector| -> Result<DenseVector, SparseError> {
            let w = bt.spmv(v)?;
            let u = m_solve(&w)?;
            b_mat.spmv(&u)
        };
        let mut r = rhs.clone();
        let mut dir = r.clone();
        let mut rr = r.dot(&r);
        loop {
            if outer_iterations >= outer_max {
                return Err(SparseError::Saddle(format!(
                    "outer CG stalled after {} iterations (residual {:.3e}); \
                     constraint matrix may be rank-deficient",
                    outer_iterations,
                    r.norm()
                )));
            }
            outer_iterations += 1;
            let s_dir = apply_schur(&dir)?;
            let curvature = dir.dot(&s_dir);
            if curvature <= 0.0 {
                return Err(SparseError::Saddle(
                    "Schur complement direction with nonpositive curvature; \
                     constraint matrix may be rank-deficient"
                        .into(),
                ));
            }
            let alpha = rr / curvature;
            p.add_scaled(alpha, &dir);
            r.add_scaled(-alpha, &s_dir);
            let rr_new = r.dot(&r);
            if rr_new.sqrt() <= target {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            let mut d_new = r.clone();
            d_new.add_scaled(beta, &dir);
            dir = d_new;
        }
    }

    // Recover the primal unknown: x = M^-1 (b - B^T p).
    let mut prim_rhs = b.clone();
    prim_rhs.add_scaled(-1.0, &bt.spmv(&p)?);
    let x = m_solve(&prim_rhs)?;

    let mut kkt1 = m.spmv(&x)?;
    kkt1.add_scaled(1.0, &bt.spmv(&p)?);
    kkt1.add_scaled(-1.0, b);
    let primal_residual = kkt1.norm();
    let mut kkt2 = b_mat.spmv(&x)?;
    kkt2.add_scaled(-1.0, c);
    let constraint_residual = kkt2.norm();

    if primal_residual > tol * (1.0 + b.norm()) || constraint_residual > tol * (1.0 + c.norm()) {
        return Err(SparseError::Saddle(format!(
            "KKT residuals not met: primal {:.3e}, constraint {:.3e}, tol {:.1e}",
            primal_residual, constraint_residual, tol
        )));
    }

    Ok(SchurSolution {
        x,
        multiplier: p,
        outer_iterations,
        primal_residual,
        constraint_residual,
    })
}
