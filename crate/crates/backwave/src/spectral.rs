//! Dirichlet eigenbases of the Laplacian on the unit interval and unit
//! square, and fields expanded in them.
//!
//! Three basis kinds share one representation:
//!
//! * `Continuous1D`: `phi_j(x) = sqrt(2) sin(j pi x)`, `lambda_j = (j pi)^2`.
//! * `Fem1D`: eigenpairs of the P1 mass/stiffness pencil on a uniform mesh of
//!   width `h = 1/m`. These are known in closed form: the eigenvectors are
//!   the sine vectors scaled to unit mass norm,
//!   `v_j(x_i) = sqrt(3/(2+cos(j pi h))) * sqrt(2) sin(j pi x_i)`, with
//!   `lambda_j^h = (6/h^2) (1 - cos(j pi h)) / (2 + cos(j pi h))`.
//! * `Tensor2D`: `phi_{(j,k)}(x,y) = 2 sin(j pi x) sin(k pi y)`,
//!   `lambda = (j^2+k^2) pi^2`, sorted by eigenvalue with lexicographic
//!   `(j,k)` tie-break so mode ordering is reproducible.
//!
//! Coefficient vectors are always with respect to an orthonormal system (in
//! `L^2` for the continuous kinds, in the discrete mass inner product for
//! `Fem1D`), so `l2_norm` is a plain Euclidean norm of the coefficients.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Continuous1D,
    Fem1D,
    Tensor2D,
}

impl BasisKind {
    fn name(self) -> &'static str {
        match self {
            BasisKind::Continuous1D => "continuous-1d",
            BasisKind::Fem1D => "fem-1d",
            BasisKind::Tensor2D => "tensor-2d",
        }
    }

    /// Spatial dimension of the underlying domain.
    pub fn dim(self) -> usize {
        match self {
            BasisKind::Tensor2D => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SpectralError {
    #[error("mesh width must be 1/m for an integer m >= 2, got {0}")]
    InvalidMeshWidth(f64),
    #[error("basis must contain at least one mode")]
    EmptyBasis,
    #[error("operation requires a {expected} basis, got {got}")]
    WrongKind { expected: &'static str, got: &'static str },
    #[error("coefficient count {got} does not match basis size {expected}")]
    CoeffCount { expected: usize, got: usize },
    #[error("fields live on different bases")]
    BasisMismatch,
    #[error("modal csv, line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// A fixed, ordered family of Laplacian eigenpairs.
#[derive(Debug, PartialEq)]
pub struct EigenBasis {
    kind: BasisKind,
    mesh_width: Option<f64>,
    eigenvalues: Vec<f64>,
    /// `Fem1D` only: mass-normalization factor of each sine vector.
    norms: Vec<f64>,
    /// `Tensor2D` only: the `(j, k)` index pair of each mode.
    pairs: Vec<(usize, usize)>,
}

impl EigenBasis {
    /// First `count` modes of the continuous interval problem.
    pub fn continuous_1d(count: usize) -> Result<Arc<Self>, SpectralError> {
        if count == 0 {
            return Err(SpectralError::EmptyBasis);
        }
        let eigenvalues = (1..=count).map(|j| (j as f64 * PI).powi(2)).collect();
        Ok(Arc::new(Self {
            kind: BasisKind::Continuous1D,
            mesh_width: None,
            eigenvalues,
            norms: Vec::new(),
            pairs: Vec::new(),
        }))
    }

    /// Complete eigenbasis of the P1 pencil on a uniform interval mesh of
    /// width `h = 1/m`; holds the `m - 1` interior modes.
    pub fn fem_1d(h: f64) -> Result<Arc<Self>, SpectralError> {
        let m = mesh_intervals(h)?;
        let n = m - 1;
        let h = 1.0 / m as f64;
        let mut eigenvalues = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        for j in 1..=n {
            let c = (j as f64 * PI * h).cos();
            eigenvalues.push(6.0 / (h * h) * (1.0 - c) / (2.0 + c));
            norms.push((3.0 / (2.0 + c)).sqrt());
        }
        Ok(Arc::new(Self {
            kind: BasisKind::Fem1D,
            mesh_width: Some(h),
            eigenvalues,
            norms,
            pairs: Vec::new(),
        }))
    }

    /// First `count` modes of the unit-square problem, eigenvalue-sorted with
    /// lexicographic `(j, k)` tie-break.
    pub fn tensor_2d(count: usize) -> Result<Arc<Self>, SpectralError> {
        if count == 0 {
            return Err(SpectralError::EmptyBasis);
        }
        let bound = 2 * (count as f64).sqrt().ceil() as usize + 8;
        let mut modes: Vec<(usize, usize, usize)> = Vec::with_capacity(bound * bound);
        for j in 1..=bound {
            for k in 1..=bound {
                modes.push((j * j + k * k, j, k));
            }
        }
        modes.sort();
        modes.truncate(count);
        let eigenvalues = modes.iter().map(|&(s, _, _)| s as f64 * PI * PI).collect();
        let pairs = modes.iter().map(|&(_, j, k)| (j, k)).collect();
        Ok(Arc::new(Self {
            kind: BasisKind::Tensor2D,
            mesh_width: None,
            eigenvalues,
            norms: Vec::new(),
            pairs,
        }))
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn mesh_width(&self) -> Option<f64> {
        self.mesh_width
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, mode: usize) -> f64 {
        self.eigenvalues[mode]
    }

    /// `(j, k)` index pair of a `Tensor2D` mode.
    pub fn pair(&self, mode: usize) -> Option<(usize, usize)> {
        self.pairs.get(mode).copied()
    }

    /// Evaluate eigenfunction `mode` at a point (`[x]` or `[x, y]`).
    ///
    /// For `Fem1D` this is the piecewise-linear function with the closed-form
    /// eigenvector's nodal values.
    pub fn eval(&self, mode: usize, point: &[f64]) -> f64 {
        assert!(
            point.len() >= self.kind.dim(),
            "point dimension {} below basis dimension {}",
            point.len(),
            self.kind.dim()
        );
        let sqrt2 = std::f64::consts::SQRT_2;
        match self.kind {
            BasisKind::Continuous1D => {
                let j = (mode + 1) as f64;
                sqrt2 * (j * PI * point[0]).sin()
            }
            BasisKind::Fem1D => {
                let h = self.mesh_width.unwrap();
                let m = (1.0 / h).round() as usize;
                let x = point[0].clamp(0.0, 1.0);
                let e = ((x / h).floor() as usize).min(m - 1);
                let t = (x - e as f64 * h) / h;
                let j = (mode + 1) as f64;
                let scale = self.norms[mode] * sqrt2;
                let lo = if e == 0 { 0.0 } else { scale * (j * PI * (e as f64 * h)).sin() };
                let hi = if e + 1 == m { 0.0 } else { scale * (j * PI * ((e + 1) as f64 * h)).sin() };
                lo * (1.0 - t) + hi * t
            }
            BasisKind::Tensor2D => {
                let (j, k) = self.pairs[mode];
                2.0 * (j as f64 * PI * point[0]).sin() * (k as f64 * PI * point[1]).sin()
            }
        }
    }

    /// Nodal values of the `Fem1D` eigenvector `mode` at the interior nodes.
    pub fn fem_vector(&self, mode: usize) -> Result<Vec<f64>, SpectralError> {
        if self.kind != BasisKind::Fem1D {
            return Err(SpectralError::WrongKind {
                expected: BasisKind::Fem1D.name(),
                got: self.kind.name(),
            });
        }
        let h = self.mesh_width.unwrap();
        let n = self.len();
        let j = (mode + 1) as f64;
        let scale = self.norms[mode] * std::f64::consts::SQRT_2;
        Ok((1..=n).map(|i| scale * (j * PI * i as f64 * h).sin()).collect())
    }
}

pub(crate) fn mesh_intervals(h: f64) -> Result<usize, SpectralError> {
    if !(h.is_finite() && h > 0.0 && h < 1.0) {
        return Err(SpectralError::InvalidMeshWidth(h));
    }
    let m = (1.0 / h).round();
    if m < 2.0 || (1.0 / h - m).abs() > 1e-9 * m {
        return Err(SpectralError::InvalidMeshWidth(h));
    }
    Ok(m as usize)
}

/// A field expanded in an [`EigenBasis`].
#[derive(Debug, Clone)]
pub struct ModalField {
    basis: Arc<EigenBasis>,
    coeffs: Vec<f64>,
}

impl ModalField {
    pub fn new(basis: Arc<EigenBasis>, coeffs: Vec<f64>) -> Result<Self, SpectralError> {
        if coeffs.len() != basis.len() {
            return Err(SpectralError::CoeffCount {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: Arc<EigenBasis>) -> Self {
        let n = basis.len();
        Self { basis, coeffs: vec![0.0; n] }
    }

    pub fn basis(&self) -> &Arc<EigenBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn same_basis(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) || self.basis == other.basis
    }

    /// `L^2` norm of the represented function (discrete mass norm for
    /// `Fem1D`): the basis is orthonormal, so this is the Euclidean norm of
    /// the coefficients.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Spectral Sobolev norm `(sum lambda_j^q c_j^2)^{1/2}`; `q = 0` is the
    /// `L^2` norm, `q = 1` the Dirichlet energy norm.
    pub fn sobolev_norm(&self, q: f64) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.basis.eigenvalues)
            .map(|(c, l)| l.powf(q) * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// Point evaluation `sum_j c_j phi_j(point)`.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| c * self.basis.eval(m, point))
            .sum()
    }

    /// Nodal values on the `Fem1D` mesh.
    pub fn reconstruct_nodal(&self) -> Result<Vec<f64>, SpectralError> {
        if self.basis.kind != BasisKind::Fem1D {
            return Err(SpectralError::WrongKind {
                expected: BasisKind::Fem1D.name(),
                got: self.basis.kind.name(),
            });
        }
        let n = self.basis.len();
        let h = self.basis.mesh_width.unwrap();
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut out = vec![0.0; n];
        for (m, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let j = (m + 1) as f64;
            let scale = c * self.basis.norms[m] * sqrt2;
            for (i, o) in out.iter_mut().enumerate() {
                *o += scale * (j * PI * (i + 1) as f64 * h).sin();
            }
        }
        Ok(out)
    }

    /// Writes `mode,eigenvalue,coeff` lines; round-trips exactly through
    /// [`ModalField::read_csv`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "mode,eigenvalue,coeff")?;
        for (m, &c) in self.coeffs.iter().enumerate() {
            writeln!(w, "{},{:.17e},{:.17e}", m + 1, self.basis.eigenvalues[m], c)?;
        }
        Ok(())
    }

    /// Reads the format written by [`ModalField::write_csv`], validating mode
    /// order and eigenvalue agreement against `basis`.
    pub fn read_csv<R: BufRead>(basis: Arc<EigenBasis>, r: R) -> Result<Self, SpectralError> {
        let mut coeffs = Vec::with_capacity(basis.len());
        for (idx, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SpectralError::Csv { line: idx + 1, msg: e.to_string() })?;
            let line = line.trim();
            if idx == 0 || line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let bad = |msg: &str| SpectralError::Csv { line: idx + 1, msg: msg.to_string() };
            let mode: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("bad mode index"))?;
            let lam: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("bad eigenvalue"))?;
            let c: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("bad coefficient"))?;
            if mode != coeffs.len() + 1 {
                return Err(bad("modes must be consecutive from 1"));
            }
            if mode > basis.len() {
                return Err(bad("more modes than the basis holds"));
            }
            let want = basis.eigenvalues[mode - 1];
            if (lam - want).abs() > 1e-9 * want.abs().max(1.0) {
                return Err(bad("eigenvalue does not match the basis"));
            }
            coeffs.push(c);
        }
        if coeffs.len() != basis.len() {
            return Err(SpectralError::CoeffCount {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self { basis, coeffs })
    }
}

/// `L^2` projection of a callable onto a 1D basis.
///
/// `Continuous1D` uses composite Simpson quadrature (accurate while the mode
/// count stays well below the internal grid resolution); `Fem1D` assembles
/// the load vector with two-point Gauss per element and contracts it against
/// the mass-orthonormal eigenvectors, which yields exactly the coefficients
/// of the discrete `L^2` projection.
pub fn project_1d<F: Fn(f64) -> f64>(basis: &Arc<EigenBasis>, f: F) -> Result<ModalField, SpectralError> {
    match basis.kind {
        BasisKind::Continuous1D => {
            let n_panels = (basis.len() * 24).max(10_000);
            let coeffs = (1..=basis.len())
                .map(|j| {
                    let g = |x: f64| f(x) * std::f64::consts::SQRT_2 * (j as f64 * PI * x).sin();
                    simpson(&g, n_panels)
                })
                .collect();
            ModalField::new(basis.clone(), coeffs)
        }
        BasisKind::Fem1D => {
            let load = fem_load_1d(basis.mesh_width.unwrap(), &f);
            let n = basis.len();
            let h = basis.mesh_width.unwrap();
            let sqrt2 = std::f64::consts::SQRT_2;
            let coeffs = (1..=n)
                .map(|j| {
                    let scale = basis.norms[j - 1] * sqrt2;
                    load.iter()
                        .enumerate()
                        .map(|(i, l)| l * scale * (j as f64 * PI * (i + 1) as f64 * h).sin())
                        .sum()
                })
                .collect();
            ModalField::new(basis.clone(), coeffs)
        }
        BasisKind::Tensor2D => Err(SpectralError::WrongKind {
            expected: "one-dimensional",
            got: basis.kind.name(),
        }),
    }
}

/// `L^2` projection of a callable onto the 2D tensor basis, via separable
/// Simpson quadrature.
pub fn project_2d<F: Fn(f64, f64) -> f64>(basis: &Arc<EigenBasis>, f: F) -> Result<ModalField, SpectralError> {
    if basis.kind != BasisKind::Tensor2D {
        return Err(SpectralError::WrongKind {
            expected: BasisKind::Tensor2D.name(),
            got: basis.kind.name(),
        });
    }
    let jmax = basis.pairs.iter().map(|&(j, k)| j.max(k)).max().unwrap();
    let n = (40 * jmax).clamp(800, 4000);
    let n = n + n % 2;
    let h = 1.0 / n as f64;
    let w = |i: usize| -> f64 {
        if i == 0 || i == n {
            h / 3.0
        } else if i % 2 == 1 {
            4.0 * h / 3.0
        } else {
            2.0 * h / 3.0
        }
    };
    // a[l][j-1] = integral over x of f(x, y_l) sin(j pi x)
    let mut a = vec![vec![0.0_f64; jmax]; n + 1];
    for (l, row) in a.iter_mut().enumerate() {
        let y = l as f64 * h;
        for i in 0..=n {
            let x = i as f64 * h;
            let fw = f(x, y) * w(i);
            if fw == 0.0 {
                continue;
            }
            for (j, slot) in row.iter_mut().enumerate() {
                *slot += fw * ((j + 1) as f64 * PI * x).sin();
            }
        }
    }
    let coeffs = basis
        .pairs
        .iter()
        .map(|&(j, k)| {
            2.0 * (0..=n)
                .map(|l| a[l][j - 1] * w(l) * (k as f64 * PI * l as f64 * h).sin())
                .sum::<f64>()
        })
        .collect();
    ModalField::new(basis.clone(), coeffs)
}

fn simpson<F: Fn(f64) -> f64>(f: &F, n_panels: usize) -> f64 {
    let n = n_panels + n_panels % 2;
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        let c = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += c * f(i as f64 * h);
    }
    s * h / 3.0
}

/// P1 load vector `(f, hat_i)` on the uniform mesh, two-point Gauss per
/// element.
fn fem_load_1d<F: Fn(f64) -> f64>(h: f64, f: &F) -> Vec<f64> {
    let m = (1.0 / h).round() as usize;
    let n = m - 1;
    let mut load = vec![0.0; n];
    let g = 0.5 / 3.0_f64.sqrt();
    for e in 0..m {
        let x0 = e as f64 * h;
        for &t in &[0.5 - g, 0.5 + g] {
            let x = x0 + t * h;
            let fv = 0.5 * h * f(x);
            // hat functions on element e: node e has weight (1-t), node e+1
            // has weight t (boundary nodes are dropped).
            if e > 0 {
                load[e - 1] += fv * (1.0 - t);
            }
            if e < m - 1 {
                load[e] += fv * t;
            }
        }
    }
    load
}
