//! Piecewise-linear finite elements on the unit interval and the unit
//! square, with the Krylov solvers the time stepping and the inverse solver
//! are built on.
//!
//! Meshes are uniform with width `h = 1/m`; the square is split into right
//! triangles along the (i,j) -> (i+1,j+1) diagonals. Homogeneous Dirichlet
//! data is imposed by eliminating boundary nodes, so every matrix acts on
//! interior degrees of freedom only and stays symmetric positive definite.
//!
//! 1D closed forms: `M = h/6 tridiag(1,4,1)`, `K = 1/h tridiag(-1,2,-1)`.
//! 2D row pattern: `K` couples the four axis neighbors with -1 against a
//! center of 4; `M` carries `h^2/2` on the diagonal and `h^2/12` towards the
//! four axis neighbors plus the two diagonal neighbors the triangulation
//! connects.

use std::io::Write;

#[derive(Debug, Clone, thiserror::Error)]
pub enum FemError {
    #[error("mesh width must be 1/m for an integer m >= 2, got {0}")]
    InvalidMeshWidth(f64),
    #[error("dimension must be 1 or 2, got {0}")]
    InvalidDimension(usize),
    #[error("index ({row}, {col}) outside a {rows} x {cols} matrix")]
    IndexOutOfRange { row: usize, col: usize, rows: usize, cols: usize },
    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("krylov breakdown after {iterations} iterations, relative residual {residual:.3e}")]
    Breakdown { iterations: usize, residual: f64 },
    #[error("no convergence after {iterations} iterations, relative residual {residual:.3e}")]
    NoConvergence { iterations: usize, residual: f64 },
}

/// Compressed sparse row matrix over `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from coordinate triplets; duplicate positions are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, FemError> {
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(FemError::IndexOutOfRange { row: r, col: c, rows, cols });
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c && row_ptr[r + 1] > 0 {
                // same (row, col) as the previous entry: accumulate
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr[r + 1] = col_idx.len();
        }
        // forward-fill empty rows
        for r in 0..rows {
            if row_ptr[r + 1] < row_ptr[r] {
                row_ptr[r + 1] = row_ptr[r];
            }
            row_ptr[r + 1] = row_ptr[r + 1].max(row_ptr[r]);
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values })
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

    /// `y = A x`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec input length");
        assert_eq!(y.len(), self.rows, "matvec output length");
        for r in 0..self.rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// Entry lookup (zero where no stored entry exists).
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        match self.col_idx[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    /// `c1 * a + c2 * b` with matching shapes.
    pub fn lincomb(c1: f64, a: &CsrMatrix, c2: f64, b: &CsrMatrix) -> Result<CsrMatrix, FemError> {
        if a.rows != b.rows || a.cols != b.cols {
            return Err(FemError::Shape { expected: a.rows, got: b.rows });
        }
        let mut triplets = Vec::with_capacity(a.nnz() + b.nnz());
        for r in 0..a.rows {
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                triplets.push((r, a.col_idx[k], c1 * a.values[k]));
            }
            for k in b.row_ptr[r]..b.row_ptr[r + 1] {
                triplets.push((r, b.col_idx[k], c2 * b.values[k]));
            }
        }
        CsrMatrix::from_triplets(a.rows, a.cols, &triplets)
    }

    /// Coordinate-format text dump: one `row,col,value` line per entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,value")?;
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                writeln!(w, "{},{},{:.17e}", r, self.col_idx[k], self.values[k])?;
            }
        }
        Ok(())
    }
}

/// Anything that can act as a square matrix on a vector.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        assert_eq!(self.rows, self.cols, "operator must be square");
        self.rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovReport {
    pub iterations: usize,
    /// Final residual relative to the right-hand side norm.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Conjugate gradients for symmetric positive definite operators, zero
/// initial guess, optional diagonal (Jacobi) preconditioning.
///
/// Terminates when `||rhs - A x|| <= tol * ||rhs||`.
pub fn cg(
    op: &dyn LinearOperator,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
    jacobi: Option<&[f64]>,
) -> Result<(Vec<f64>, KrylovReport), FemError> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(FemError::Shape { expected: n, got: rhs.len() });
    }
    let rhs_norm = norm(rhs);
    let mut x = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok((x, KrylovReport { iterations: 0, residual: 0.0 }));
    }
    let inv_diag: Option<Vec<f64>> = jacobi.map(|d| d.iter().map(|&v| 1.0 / v).collect());
    let precond = |r: &[f64]| -> Vec<f64> {
        match &inv_diag {
            Some(d) => r.iter().zip(d).map(|(ri, di)| ri * di).collect(),
            None => r.to_vec(),
        }
    };
    let mut r = rhs.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(FemError::Breakdown { iterations: it, residual: norm(&r) / rhs_norm });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm(&r) / rhs_norm;
        if res <= tol {
            return Ok((x, KrylovReport { iterations: it, residual: res }));
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FemError::NoConvergence { iterations: max_iter, residual: norm(&r) / rhs_norm })
}

/// Biconjugate gradient stabilized for general square operators, zero
/// initial guess.
///
/// Terminates when `||rhs - A x|| <= tol * ||rhs||`; an exact breakdown of
/// the recurrence is reported distinctly from running out of iterations.
pub fn bicgstab(
    op: &dyn LinearOperator,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, KrylovReport), FemError> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(FemError::Shape { expected: n, got: rhs.len() });
    }
    let rhs_norm = norm(rhs);
    let mut x = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok((x, KrylovReport { iterations: 0, residual: 0.0 }));
    }
    let mut r = rhs.to_vec();
    let r_hat = r.clone();
    let mut rho = dot(&r_hat, &r);
    let mut p = r.clone();
    let mut v = vec![0.0; n];
    let mut t = vec![0.0; n];
    let tiny = 1e-300;
    for it in 1..=max_iter {
        op.apply(&p, &mut v);
        let rhv = dot(&r_hat, &v);
        if rhv.abs() < tiny {
            return Err(FemError::Breakdown { iterations: it, residual: norm(&r) / rhs_norm });
        }
        let alpha = rho / rhv;
        // s = r - alpha v
        let mut s = r.clone();
        for i in 0..n {
            s[i] -= alpha * v[i];
        }
        let s_res = norm(&s) / rhs_norm;
        if s_res <= tol {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok((x, KrylovReport { iterations: it, residual: s_res }));
        }
        op.apply(&s, &mut t);
        let tt = dot(&t, &t);
        if tt < tiny {
            return Err(FemError::Breakdown { iterations: it, residual: s_res });
        }
        let omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = norm(&r) / rhs_norm;
        if res <= tol {
            return Ok((x, KrylovReport { iterations: it, residual: res }));
        }
        if omega.abs() < tiny {
            return Err(FemError::Breakdown { iterations: it, residual: res });
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < tiny {
            return Err(FemError::Breakdown { iterations: it, residual: res });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
    }
    Err(FemError::NoConvergence { iterations: max_iter, residual: norm(&r) / rhs_norm })
}

/// Assembled interior-node mass and stiffness matrices on a uniform mesh.
#[derive(Debug)]
pub struct FemSystem {
    dim: usize,
    h: f64,
    /// Interior nodes per coordinate direction.
    n_side: usize,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
}

impl FemSystem {
    pub fn assemble(dim: usize, h: f64) -> Result<Self, FemError> {
        let m = crate::spectral::mesh_intervals(h).map_err(|_| FemError::InvalidMeshWidth(h))?;
        let h = 1.0 / m as f64;
        let n = m - 1;
        match dim {
            1 => {
                let mut mt = Vec::with_capacity(3 * n);
                let mut kt = Vec::with_capacity(3 * n);
                // element matrices: M_e = h/6 [[2,1],[1,2]], K_e = 1/h [[1,-1],[-1,1]]
                for e in 0..m {
                    let nodes = [e, e + 1];
                    for (la, &ga) in nodes.iter().enumerate() {
                        if ga == 0 || ga == m {
                            continue;
                        }
                        for (lb, &gb) in nodes.iter().enumerate() {
                            if gb == 0 || gb == m {
                                continue;
                            }
                            let me = if la == lb { 2.0 * h / 6.0 } else { h / 6.0 };
                            let ke = if la == lb { 1.0 / h } else { -1.0 / h };
                            mt.push((ga - 1, gb - 1, me));
                            kt.push((ga - 1, gb - 1, ke));
                        }
                    }
                }
                Ok(Self {
                    dim,
                    h,
                    n_side: n,
                    mass: CsrMatrix::from_triplets(n, n, &mt)?,
                    stiffness: CsrMatrix::from_triplets(n, n, &kt)?,
                })
            }
            2 => {
                let dofs = n * n;
                let mut mt = Vec::with_capacity(18 * dofs);
                let mut kt = Vec::with_capacity(18 * dofs);
                let dof = |i: usize, j: usize| -> Option<usize> {
                    if i == 0 || j == 0 || i == m || j == m {
                        None
                    } else {
                        Some((j - 1) * n + (i - 1))
                    }
                };
                for sj in 0..m {
                    for si in 0..m {
                        // square split along its (si,sj) -> (si+1,sj+1) diagonal
                        let lower = [(si, sj), (si + 1, sj), (si + 1, sj + 1)];
                        let upper = [(si, sj), (si + 1, sj + 1), (si, sj + 1)];
                        for tri in [lower, upper] {
                            scatter_triangle(&tri, h, &dof, &mut mt, &mut kt);
                        }
                    }
                }
                Ok(Self {
                    dim,
                    h,
                    n_side: n,
                    mass: CsrMatrix::from_triplets(dofs, dofs, &mt)?,
                    stiffness: CsrMatrix::from_triplets(dofs, dofs, &kt)?,
                })
            }
            d => Err(FemError::InvalidDimension(d)),
        }
    }

    /// Wraps externally supplied matrices (test hook; e.g. a zeroed
    /// stiffness to isolate the mass dynamics).
    pub fn from_parts(
        dim: usize,
        h: f64,
        mass: CsrMatrix,
        stiffness: CsrMatrix,
    ) -> Result<Self, FemError> {
        let m = crate::spectral::mesh_intervals(h).map_err(|_| FemError::InvalidMeshWidth(h))?;
        if dim != 1 && dim != 2 {
            return Err(FemError::InvalidDimension(dim));
        }
        let n = m - 1;
        let dofs = if dim == 1 { n } else { n * n };
        if mass.rows() != dofs || mass.cols() != dofs {
            return Err(FemError::Shape { expected: dofs, got: mass.rows() });
        }
        if stiffness.rows() != dofs || stiffness.cols() != dofs {
            return Err(FemError::Shape { expected: dofs, got: stiffness.rows() });
        }
        Ok(Self { dim, h: 1.0 / m as f64, n_side: n, mass, stiffness })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh_width(&self) -> f64 {
        self.h
    }

    pub fn dof_count(&self) -> usize {
        if self.dim == 1 {
            self.n_side
        } else {
            self.n_side * self.n_side
        }
    }

    /// Interior nodes per coordinate direction.
    pub fn nodes_per_side(&self) -> usize {
        self.n_side
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Coordinates of an interior dof; `[x, 0]` in 1D.
    pub fn node_coord(&self, dof: usize) -> [f64; 2] {
        if self.dim == 1 {
            [(dof + 1) as f64 * self.h, 0.0]
        } else {
            let i = dof % self.n_side + 1;
            let j = dof / self.n_side + 1;
            [i as f64 * self.h, j as f64 * self.h]
        }
    }

    /// Flat dof index of interior grid position `(i, j)`, both 1-based.
    pub fn grid_dof(&self, i: usize, j: usize) -> usize {
        assert!(self.dim == 2, "grid_dof requires a 2D system");
        assert!(i >= 1 && i <= self.n_side && j >= 1 && j <= self.n_side);
        (j - 1) * self.n_side + (i - 1)
    }

    pub fn mass_dot(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(u, &self.mass.matvec(v))
    }

    pub fn mass_norm(&self, v: &[f64]) -> f64 {
        self.mass_dot(v, v).max(0.0).sqrt()
    }

    /// Load vector `(f, hat_i)`: two-point Gauss per interval, edge-midpoint
    /// rule per triangle (exact for the polynomial degrees involved).
    pub fn load_1d<F: Fn(f64) -> f64>(&self, f: F) -> Result<Vec<f64>, FemError> {
        if self.dim != 1 {
            return Err(FemError::InvalidDimension(self.dim));
        }
        let m = self.n_side + 1;
        let h = self.h;
        let mut load = vec![0.0; self.n_side];
        let g = 0.5 / 3.0_f64.sqrt();
        for e in 0..m {
            let x0 = e as f64 * h;
            for &t in &[0.5 - g, 0.5 + g] {
                let fv = 0.5 * h * f(x0 + t * h);
                if e > 0 {
                    load[e - 1] += fv * (1.0 - t);
                }
                if e < m - 1 {
                    load[e] += fv * t;
                }
            }
        }
        Ok(load)
    }

    pub fn load_2d<F: Fn(f64, f64) -> f64>(&self, f: F) -> Result<Vec<f64>, FemError> {
        if self.dim != 2 {
            return Err(FemError::InvalidDimension(self.dim));
        }
        let m = self.n_side + 1;
        let h = self.h;
        let n = self.n_side;
        let mut load = vec![0.0; n * n];
        let area = 0.5 * h * h;
        let mut add = |tri: &[(usize, usize); 3]| {
            let pts: Vec<[f64; 2]> = tri.iter().map(|&(i, j)| [i as f64 * h, j as f64 * h]).collect();
            // midpoints of the edges opposite each local vertex
            for a in 0..3 {
                let (p, q) = ((a + 1) % 3, (a + 2) % 3);
                let (i, j) = tri[a];
                if i == 0 || j == 0 || i == m || j == m {
                    continue;
                }
                // hat_a is 1/2 on the two adjacent edge midpoints, 0 opposite
                let mut acc = 0.0;
                for other in [p, q] {
                    let mx = 0.5 * (pts[a][0] + pts[other][0]);
                    let my = 0.5 * (pts[a][1] + pts[other][1]);
                    acc += 0.5 * f(mx, my);
                }
                load[(j - 1) * n + (i - 1)] += area / 3.0 * acc;
            }
        };
        for sj in 0..m {
            for si in 0..m {
                add(&[(si, sj), (si + 1, sj), (si + 1, sj + 1)]);
                add(&[(si, sj), (si + 1, sj + 1), (si, sj + 1)]);
            }
        }
        Ok(load)
    }

    /// `L^2` projection: solves `M x = (f, hat_i)`. The 1D solve is a direct
    /// tridiagonal elimination; 2D uses Jacobi-preconditioned CG.
    pub fn l2_project_1d<F: Fn(f64) -> f64>(&self, f: F) -> Result<Vec<f64>, FemError> {
        let load = self.load_1d(f)?;
        Ok(self.tridiag_solve(&self.mass, &load))
    }

    pub fn l2_project_2d<F: Fn(f64, f64) -> f64>(&self, f: F) -> Result<Vec<f64>, FemError> {
        let load = self.load_2d(f)?;
        let (x, _) = cg(&self.mass, &load, 1e-13, 40 * self.dof_count() + 100, Some(&self.mass.diagonal()))?;
        Ok(x)
    }

    /// Ritz (energy) projection from the gradient of the target: solves
    /// `K x = (f', hat_i')`.
    pub fn ritz_project_1d<F: Fn(f64) -> f64>(&self, f_prime: F) -> Result<Vec<f64>, FemError> {
        if self.dim != 1 {
            return Err(FemError::InvalidDimension(self.dim));
        }
        let m = self.n_side + 1;
        let h = self.h;
        let mut load = vec![0.0; self.n_side];
        let g = 0.5 / 3.0_f64.sqrt();
        for e in 0..m {
            let x0 = e as f64 * h;
            for &t in &[0.5 - g, 0.5 + g] {
                // hat gradients are +-1/h on the element
                let fv = 0.5 * h * f_prime(x0 + t * h) / h;
                if e > 0 {
                    load[e - 1] -= fv;
                }
                if e < m - 1 {
                    load[e] += fv;
                }
            }
        }
        Ok(self.tridiag_solve(&self.stiffness, &load))
    }

    pub fn ritz_project_2d<F: Fn(f64, f64) -> [f64; 2]>(&self, grad: F) -> Result<Vec<f64>, FemError> {
        if self.dim != 2 {
            return Err(FemError::InvalidDimension(self.dim));
        }
        let m = self.n_side + 1;
        let h = self.h;
        let n = self.n_side;
        let mut load = vec![0.0; n * n];
        let area = 0.5 * h * h;
        let mut add = |tri: &[(usize, usize); 3]| {
            let pts: [[f64; 2]; 3] =
                [0, 1, 2].map(|k| [tri[k].0 as f64 * h, tri[k].1 as f64 * h]);
            let twice_area = (pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1])
                - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1]);
            // averaged gradient over the triangle via the edge-midpoint rule
            let mids: [[f64; 2]; 3] = [0, 1, 2].map(|k| {
                let (p, q) = ((k + 1) % 3, (k + 2) % 3);
                [0.5 * (pts[p][0] + pts[q][0]), 0.5 * (pts[p][1] + pts[q][1])]
            });
            for a in 0..3 {
                let (i, j) = tri[a];
                if i == 0 || j == 0 || i == m || j == m {
                    continue;
                }
                let (p, q) = ((a + 1) % 3, (a + 2) % 3);
                let gx = (pts[p][1] - pts[q][1]) / twice_area;
                let gy = (pts[q][0] - pts[p][0]) / twice_area;
                let mut acc = 0.0;
                for mid in &mids {
                    let gv = grad(mid[0], mid[1]);
                    acc += gv[0] * gx + gv[1] * gy;
                }
                load[(j - 1) * n + (i - 1)] += area / 3.0 * acc;
            }
        };
        for sj in 0..m {
            for si in 0..m {
                add(&[(si, sj), (si + 1, sj), (si + 1, sj + 1)]);
                add(&[(si, sj), (si + 1, sj + 1), (si, sj + 1)]);
            }
        }
        let (x, _) = cg(&self.stiffness, &load, 1e-13, 40 * self.dof_count() + 100, Some(&self.stiffness.diagonal()))?;
        Ok(x)
    }

    /// Direct Thomas elimination; valid because 1D mass and stiffness
    /// matrices are tridiagonal and diagonally dominant.
    pub(crate) fn tridiag_solve(&self, a: &CsrMatrix, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        let lower: Vec<f64> = (1..n).map(|i| a.get(i, i - 1)).collect();
        let upper: Vec<f64> = (0..n - 1).map(|i| a.get(i, i + 1)).collect();
        let mut x = rhs.to_vec();
        for i in 1..n {
            let w = lower[i - 1] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            x[i] -= w * x[i - 1];
        }
        x[n - 1] /= diag[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - upper[i] * x[i + 1]) / diag[i];
        }
        x
    }
}

fn scatter_triangle(
    tri: &[(usize, usize); 3],
    h: f64,
    dof: &dyn Fn(usize, usize) -> Option<usize>,
    mt: &mut Vec<(usize, usize, f64)>,
    kt: &mut Vec<(usize, usize, f64)>,
) {
    let pts: [[f64; 2]; 3] = [0, 1, 2].map(|k| [tri[k].0 as f64 * h, tri[k].1 as f64 * h]);
    let twice_area = (pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1])
        - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1]);
    let area = 0.5 * twice_area.abs();
    // nodal shape gradients: grad N_a = ( y_p - y_q, x_q - x_p ) / 2A, cyclic
    let grads: [[f64; 2]; 3] = [0, 1, 2].map(|a| {
        let (p, q) = ((a + 1) % 3, (a + 2) % 3);
        [(pts[p][1] - pts[q][1]) / twice_area, (pts[q][0] - pts[p][0]) / twice_area]
    });
    for a in 0..3 {
        let Some(ga) = dof(tri[a].0, tri[a].1) else { continue };
        for b in 0..3 {
            let Some(gb) = dof(tri[b].0, tri[b].1) else { continue };
            let me = if a == b { area / 6.0 } else { area / 12.0 };
            let ke = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
            mt.push((ga, gb, me));
            kt.push((ga, gb, ke));
        }
    }
}

/// A nodal coefficient vector bound to its mesh.
#[derive(Debug, Clone)]
pub struct NodalField {
    pub system: std::sync::Arc<FemSystem>,
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn new(system: std::sync::Arc<FemSystem>, values: Vec<f64>) -> Result<Self, FemError> {
        if values.len() != system.dof_count() {
            return Err(FemError::Shape { expected: system.dof_count(), got: values.len() });
        }
        Ok(Self { system, values })
    }

    pub fn zeros(system: std::sync::Arc<FemSystem>) -> Self {
        let n = system.dof_count();
        Self { system, values: vec![0.0; n] }
    }

    pub fn mass_norm(&self) -> f64 {
        self.system.mass_norm(&self.values)
    }
}
