//! The inverse solver: recovering both initial states from two terminal
//! snapshots.
//!
//! Per mode, the pair of observations is `G (a_j, b_j)` with
//!
//! `G = [[E_{a,1}(-l T1^a), T1 E_{a,2}(-l T1^a)], [E_{a,1}(-l T2^a), T2 E_{a,2}(-l T2^a)]]`,
//!
//! so exact inversion divides by `psi = det G` and the regularized variant
//! by `psi_tilde = det(gamma J + G)` with `J = diag(-1, 1)`. The fully
//! discrete path replaces the Mittag-Leffler entries by the scalar
//! propagators of the time-stepping scheme; in 1D it diagonalizes on the
//! closed-form mesh eigenbasis, in 2D it solves the stacked system
//! `(gamma J + G_{h,tau})(a, b) = (g1, g2)` matrix-free with BiCGStab, one
//! full forward run per operator application.
//!
//! `psi_tilde` can change sign for mid-range eigenvalues when the terminal
//! times are short relative to the decay scale; a reconstruction therefore
//! hard-errors only when a denominator is near-singular, and otherwise
//! counts nonnegative-determinant modes in its diagnostics.

use crate::fem::{bicgstab, FemError, FemSystem, LinearOperator};
use crate::forward::{
    discrete_operators, evolve_cq_fem, evolve_exact_modal, ForwardError, Scheme, Trajectory,
};
use crate::specfun::{ml_eval, MlParams, SpecfunError};
use crate::spectral::{EigenBasis, ModalField, SpectralError};
use crate::FractionalOrder;
use rayon::prelude::*;
use std::cell::{Cell, RefCell};
use std::sync::Arc;

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackwardError {
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error("terminal times must satisfy 0 < t1 < t2, got ({t1}, {t2})")]
    TimeOrder { t1: f64, t2: f64 },
    #[error("observation length {got} does not match discretization size {expected}")]
    ObservationShape { expected: usize, got: usize },
    #[error("regularization parameter must be finite and nonnegative, got {0}")]
    InvalidGamma(f64),
    #[error("mode {mode}: determinant {value:.3e} vanishes, recovery impossible at this mode")]
    NearSingularPsi { mode: usize, value: f64 },
    #[error("mode {mode}: regularized determinant {value:.3e} is near-singular (scale {scale:.3e}); increase gamma or the terminal times")]
    NearSingularPsiTilde { mode: usize, value: f64, scale: f64 },
    #[error("time {t} is not an integer multiple of tau = {tau}; nearest admissible tau is {suggested_tau}")]
    NonIntegerSteps { t: f64, tau: f64, suggested_tau: f64 },
    #[error("outer krylov solve failed: {source}")]
    Krylov {
        #[source]
        source: FemError,
    },
    #[error("forward run inside the krylov operator failed: {source}")]
    OperatorApplication {
        #[source]
        source: ForwardError,
    },
}

/// Two terminal snapshots of one trajectory, modal or nodal depending on the
/// consuming operation.
#[derive(Debug, Clone)]
pub struct ObservationPair {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub t1: f64,
    pub t2: f64,
    /// Relative noise level the data was synthesized with (0 = clean).
    pub noise_level: f64,
    /// RNG seed used for the noise (0 when clean).
    pub seed: u64,
}

impl ObservationPair {
    pub fn new(g1: Vec<f64>, g2: Vec<f64>, t1: f64, t2: f64) -> Result<Self, BackwardError> {
        if !(t1.is_finite() && t2.is_finite() && 0.0 < t1 && t1 < t2) {
            return Err(BackwardError::TimeOrder { t1, t2 });
        }
        if g1.len() != g2.len() {
            return Err(BackwardError::ObservationShape { expected: g1.len(), got: g2.len() });
        }
        Ok(Self { g1, g2, t1, t2, noise_level: 0.0, seed: 0 })
    }

    pub fn with_noise_meta(mut self, noise_level: f64, seed: u64) -> Self {
        self.noise_level = noise_level;
        self.seed = seed;
        self
    }

    pub fn len(&self) -> usize {
        self.g1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g1.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegularizationConfig {
    pub gamma: f64,
    pub krylov_tol: f64,
    pub krylov_max_iter: usize,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self { gamma: 1e-6, krylov_tol: 1e-8, krylov_max_iter: 500 }
    }
}

impl RegularizationConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        Self { gamma, ..Self::default() }
    }

    fn validate(&self) -> Result<(), BackwardError> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(BackwardError::InvalidGamma(self.gamma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Diagnostics {
    /// Smallest `|psi_tilde|` over the retained modes (modal paths only).
    pub min_abs_psi_tilde: Option<f64>,
    /// Modes whose regularized determinant came out nonnegative.
    pub sign_violations: usize,
    /// Outer Krylov iterations (2D path; 0 for modal paths).
    pub krylov_iterations: usize,
    /// Norms of the two terminal defect equations at the recovered pair.
    pub residual_g1: f64,
    pub residual_g2: f64,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub trajectory: Option<Trajectory>,
    pub diagnostics: Diagnostics,
}

/// Entries `[m11, m12, m21, m22]` of the modal observation matrix at one
/// eigenvalue.
fn continuous_entries(
    t1: f64,
    t2: f64,
    lambda: f64,
    order: FractionalOrder,
) -> Result<[f64; 4], BackwardError> {
    let alpha = order.get();
    let p1 = MlParams::new(alpha, 1.0)?;
    let p2 = MlParams::new(alpha, 2.0)?;
    let z1 = -lambda * t1.powf(alpha);
    let z2 = -lambda * t2.powf(alpha);
    Ok([
        ml_eval(&p1, z1)?.value,
        t1 * ml_eval(&p2, z1)?.value,
        ml_eval(&p1, z2)?.value,
        t2 * ml_eval(&p2, z2)?.value,
    ])
}

/// Determinant of the modal observation matrix. Accepts `t1 == t2`, where it
/// vanishes identically.
pub fn psi(t1: f64, t2: f64, lambda: f64, order: FractionalOrder) -> Result<f64, BackwardError> {
    psi_tilde(t1, t2, lambda, order, 0.0)
}

/// Determinant of the regularized matrix `gamma diag(-1, 1) + G`.
pub fn psi_tilde(
    t1: f64,
    t2: f64,
    lambda: f64,
    order: FractionalOrder,
    gamma: f64,
) -> Result<f64, BackwardError> {
    if !(t1.is_finite() && t2.is_finite() && 0.0 < t1 && t1 <= t2) {
        return Err(BackwardError::TimeOrder { t1, t2 });
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(BackwardError::InvalidGamma(gamma));
    }
    let [m11, m12, m21, m22] = continuous_entries(t1, t2, lambda, order)?;
    Ok((m11 - gamma) * (m22 + gamma) - m12 * m21)
}

fn solve_2x2_regularized(
    mode: usize,
    entries: [f64; 4],
    gamma: f64,
    g1: f64,
    g2: f64,
) -> Result<(f64, f64, f64), BackwardError> {
    let [m11, m12, m21, m22] = entries;
    let det = (m11 - gamma) * (m22 + gamma) - m12 * m21;
    let scale = gamma * gamma
        + (m11 * m22).abs()
        + (m12 * m21).abs()
        + gamma * (m11.abs() + m22.abs())
        + 1e-300;
    if det.abs() <= 1e-12 * scale {
        return Err(BackwardError::NearSingularPsiTilde { mode, value: det, scale });
    }
    let a = ((gamma + m22) * g1 - m12 * g2) / det;
    let b = (-m21 * g1 + (m11 - gamma) * g2) / det;
    Ok((a, b, det))
}

/// Unregularized per-mode inversion of clean modal observations.
pub fn invert_exact_modal(
    obs: &ObservationPair,
    order: FractionalOrder,
    basis: &Arc<EigenBasis>,
) -> Result<(ModalField, ModalField), BackwardError> {
    if obs.len() != basis.len() {
        return Err(BackwardError::ObservationShape { expected: basis.len(), got: obs.len() });
    }
    let entries: Result<Vec<[f64; 4]>, BackwardError> = basis
        .eigenvalues()
        .par_iter()
        .map(|&lam| continuous_entries(obs.t1, obs.t2, lam, order))
        .collect();
    let entries = entries?;
    let mut a = Vec::with_capacity(obs.len());
    let mut b = Vec::with_capacity(obs.len());
    for (j, &[m11, m12, m21, m22]) in entries.iter().enumerate() {
        let det = m11 * m22 - m12 * m21;
        if det.abs() < 1e-300 {
            return Err(BackwardError::NearSingularPsi { mode: j, value: det });
        }
        a.push((m22 * obs.g1[j] - m12 * obs.g2[j]) / det);
        b.push((-m21 * obs.g1[j] + m11 * obs.g2[j]) / det);
    }
    Ok((ModalField::new(basis.clone(), a)?, ModalField::new(basis.clone(), b)?))
}

/// Quasi-boundary-value regularized inversion in modal space with the exact
/// (Mittag-Leffler) propagators. `trajectory_times`, when given, samples the
/// reconstructed evolution at those times.
pub fn invert_regularized_modal(
    obs: &ObservationPair,
    order: FractionalOrder,
    basis: &Arc<EigenBasis>,
    cfg: &RegularizationConfig,
    trajectory_times: Option<&[f64]>,
) -> Result<ReconstructionResult, BackwardError> {
    cfg.validate()?;
    if obs.len() != basis.len() {
        return Err(BackwardError::ObservationShape { expected: basis.len(), got: obs.len() });
    }
    let entries: Result<Vec<[f64; 4]>, BackwardError> = basis
        .eigenvalues()
        .par_iter()
        .map(|&lam| continuous_entries(obs.t1, obs.t2, lam, order))
        .collect();
    let entries = entries?;
    let mut a = Vec::with_capacity(obs.len());
    let mut b = Vec::with_capacity(obs.len());
    let mut diag = Diagnostics::default();
    let mut min_abs = f64::INFINITY;
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    for (j, &e) in entries.iter().enumerate() {
        let (aj, bj, det) = solve_2x2_regularized(j, e, cfg.gamma, obs.g1[j], obs.g2[j])?;
        min_abs = min_abs.min(det.abs());
        if det >= 0.0 {
            diag.sign_violations += 1;
        }
        let [m11, m12, m21, m22] = e;
        let d1 = (m11 - cfg.gamma) * aj + m12 * bj - obs.g1[j];
        let d2 = m21 * aj + (m22 + cfg.gamma) * bj - obs.g2[j];
        r1 += d1 * d1;
        r2 += d2 * d2;
        a.push(aj);
        b.push(bj);
    }
    diag.min_abs_psi_tilde = Some(min_abs);
    diag.residual_g1 = r1.sqrt();
    diag.residual_g2 = r2.sqrt();
    let a = ModalField::new(basis.clone(), a)?;
    let b = ModalField::new(basis.clone(), b)?;
    let trajectory = match trajectory_times {
        None => None,
        Some(times) => {
            let mut states = Vec::with_capacity(times.len());
            for &t in times {
                states.push(evolve_exact_modal(&a, &b, order, t)?.coeffs().to_vec());
            }
            Some(Trajectory { times: times.to_vec(), states, scheme: Scheme::ExactModal })
        }
    };
    Ok(ReconstructionResult {
        a: a.coeffs().to_vec(),
        b: b.coeffs().to_vec(),
        trajectory,
        diagnostics: diag,
    })
}

/// Mass-orthonormal modal coefficients of a nodal vector.
pub fn nodal_to_modal(sys: &FemSystem, basis: &EigenBasis, nodal: &[f64]) -> Vec<f64> {
    let mv = sys.mass().matvec(nodal);
    (0..basis.len())
        .map(|j| {
            let ev = basis.fem_vector(j).expect("fem basis required");
            ev.iter().zip(&mv).map(|(e, m)| e * m).sum()
        })
        .collect()
}

fn steps_of(t: f64, tau: f64) -> Result<usize, BackwardError> {
    let raw = t / tau;
    let n = raw.round();
    if n < 1.0 || (raw - n).abs() > 1e-9 * n {
        let suggested = t / raw.ceil().max(1.0);
        return Err(BackwardError::NonIntegerSteps { t, tau, suggested_tau: suggested });
    }
    Ok(n as usize)
}

/// Fully discrete inversion on an assembled mesh. 1D systems diagonalize on
/// the closed-form eigenbasis; 2D systems go through the matrix-free Krylov
/// path.
pub fn invert_fully_discrete(
    obs: &ObservationPair,
    order: FractionalOrder,
    tau: f64,
    cfg: &RegularizationConfig,
    sys: &FemSystem,
    want_trajectory: bool,
) -> Result<ReconstructionResult, BackwardError> {
    cfg.validate()?;
    if obs.len() != sys.dof_count() {
        return Err(BackwardError::ObservationShape {
            expected: sys.dof_count(),
            got: obs.len(),
        });
    }
    if sys.dim() == 1 {
        invert_fully_discrete_modal_1d(obs, order, tau, cfg, sys, want_trajectory)
    } else {
        invert_fully_discrete_krylov(obs, order, tau, cfg, sys, want_trajectory)
    }
}

fn invert_fully_discrete_modal_1d(
    obs: &ObservationPair,
    order: FractionalOrder,
    tau: f64,
    cfg: &RegularizationConfig,
    sys: &FemSystem,
    want_trajectory: bool,
) -> Result<ReconstructionResult, BackwardError> {
    let n1 = steps_of(obs.t1, tau)?;
    let n2 = steps_of(obs.t2, tau)?;
    let basis = EigenBasis::fem_1d(sys.mesh_width())?;
    let n_modes = basis.len();
    let g1m = nodal_to_modal(sys, &basis, &obs.g1);
    let g2m = nodal_to_modal(sys, &basis, &obs.g2);
    let props: Vec<(Vec<f64>, Vec<f64>)> = basis
        .eigenvalues()
        .par_iter()
        .map(|&lam| discrete_operators(lam, order, tau, n2))
        .collect();
    let mut am = Vec::with_capacity(n_modes);
    let mut bm = Vec::with_capacity(n_modes);
    let mut diag = Diagnostics::default();
    let mut min_abs = f64::INFINITY;
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    for (j, (f, fbar)) in props.iter().enumerate() {
        let e = [f[n1], fbar[n1], f[n2], fbar[n2]];
        let (aj, bj, det) = solve_2x2_regularized(j, e, cfg.gamma, g1m[j], g2m[j])?;
        min_abs = min_abs.min(det.abs());
        if det >= 0.0 {
            diag.sign_violations += 1;
        }
        let d1 = (e[0] - cfg.gamma) * aj + e[1] * bj - g1m[j];
        let d2 = e[2] * aj + (e[3] + cfg.gamma) * bj - g2m[j];
        r1 += d1 * d1;
        r2 += d2 * d2;
        am.push(aj);
        bm.push(bj);
    }
    diag.min_abs_psi_tilde = Some(min_abs);
    diag.residual_g1 = r1.sqrt();
    diag.residual_g2 = r2.sqrt();
    let to_nodal = |modal: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; sys.dof_count()];
        for (j, &c) in modal.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let ev = basis.fem_vector(j).expect("fem basis");
            for (o, e) in out.iter_mut().zip(&ev) {
                *o += c * e;
            }
        }
        out
    };
    let a = to_nodal(&am);
    let b = to_nodal(&bm);
    let trajectory = if want_trajectory {
        let mut states = Vec::with_capacity(n2 + 1);
        for n in 0..=n2 {
            let modal: Vec<f64> = (0..n_modes)
                .map(|j| props[j].0[n] * am[j] + props[j].1[n] * bm[j])
                .collect();
            states.push(to_nodal(&modal));
        }
        let times = (0..=n2).map(|n| n as f64 * tau).collect();
        Some(Trajectory { times, states, scheme: Scheme::FullyDiscreteCq })
    } else {
        None
    };
    Ok(ReconstructionResult { a, b, trajectory, diagnostics: diag })
}

/// The stacked operator `(a, b) -> (-gamma a + U_{N1}, gamma b + U_{N2})`
/// where `U` is the discrete forward evolution from `(a, b)`.
struct BlockOperator<'a> {
    sys: &'a FemSystem,
    order: FractionalOrder,
    tau: f64,
    n1: usize,
    n2: usize,
    gamma: f64,
    applications: Cell<usize>,
    failure: RefCell<Option<ForwardError>>,
}

impl LinearOperator for BlockOperator<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.dof_count()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.sys.dof_count();
        self.applications.set(self.applications.get() + 1);
        if self.failure.borrow().is_some() {
            y.fill(0.0);
            return;
        }
        match evolve_cq_fem(self.sys, &x[..n], &x[n..], self.order, self.tau, self.n2, None) {
            Ok(traj) => {
                for i in 0..n {
                    y[i] = -self.gamma * x[i] + traj.states[self.n1][i];
                    y[n + i] = self.gamma * x[n + i] + traj.states[self.n2][i];
                }
            }
            Err(e) => {
                *self.failure.borrow_mut() = Some(e);
                y.fill(0.0);
            }
        }
    }
}

/// Matrix-free Krylov inversion of the fully discrete system (any dimension;
/// the production dispatch uses it for 2D).
pub fn invert_fully_discrete_krylov(
    obs: &ObservationPair,
    order: FractionalOrder,
    tau: f64,
    cfg: &RegularizationConfig,
    sys: &FemSystem,
    want_trajectory: bool,
) -> Result<ReconstructionResult, BackwardError> {
    cfg.validate()?;
    if obs.len() != sys.dof_count() {
        return Err(BackwardError::ObservationShape {
            expected: sys.dof_count(),
            got: obs.len(),
        });
    }
    let n1 = steps_of(obs.t1, tau)?;
    let n2 = steps_of(obs.t2, tau)?;
    let n = sys.dof_count();
    let op = BlockOperator {
        sys,
        order,
        tau,
        n1,
        n2,
        gamma: cfg.gamma,
        applications: Cell::new(0),
        failure: RefCell::new(None),
    };
    let mut rhs = Vec::with_capacity(2 * n);
    rhs.extend_from_slice(&obs.g1);
    rhs.extend_from_slice(&obs.g2);
    let solve = bicgstab(&op, &rhs, cfg.krylov_tol, cfg.krylov_max_iter);
    if let Some(e) = op.failure.borrow_mut().take() {
        return Err(BackwardError::OperatorApplication { source: e });
    }
    let (x, report) = solve.map_err(|source| BackwardError::Krylov { source })?;
    let a = x[..n].to_vec();
    let b = x[n..].to_vec();
    // final forward run: terminal defects and, when asked, the trajectory
    let traj = evolve_cq_fem(sys, &a, &b, order, tau, n2, None)?;
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        d1[i] = -cfg.gamma * a[i] + traj.states[n1][i] - obs.g1[i];
        d2[i] = cfg.gamma * b[i] + traj.states[n2][i] - obs.g2[i];
    }
    let diagnostics = Diagnostics {
        min_abs_psi_tilde: None,
        sign_violations: 0,
        krylov_iterations: report.iterations,
        residual_g1: sys.mass_norm(&d1),
        residual_g2: sys.mass_norm(&d2),
    };
    Ok(ReconstructionResult {
        a,
        b,
        trajectory: want_trajectory.then_some(traj),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::project_1d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn order(alpha: f64) -> FractionalOrder {
        FractionalOrder::new(alpha).unwrap()
    }

    const T1: f64 = 1.0;
    const T2: f64 = 1.2;

    fn example_fields(basis: &Arc<EigenBasis>) -> (ModalField, ModalField) {
        let a = project_1d(basis, |x| -(PI * x).sin()).unwrap();
        let b = project_1d(basis, |x| x * (1.0 - x)).unwrap();
        (a, b)
    }

    fn observe_exact(
        a: &ModalField,
        b: &ModalField,
        alpha: f64,
    ) -> ObservationPair {
        let u1 = evolve_exact_modal(a, b, order(alpha), T1).unwrap();
        let u2 = evolve_exact_modal(a, b, order(alpha), T2).unwrap();
        ObservationPair::new(u1.coeffs().to_vec(), u2.coeffs().to_vec(), T1, T2).unwrap()
    }

    fn rel_err(got: &[f64], want: &[f64]) -> f64 {
        let num: f64 = got
            .iter()
            .zip(want)
            .map(|(g, w)| (g - w) * (g - w))
            .sum::<f64>()
            .sqrt();
        let den: f64 = want.iter().map(|w| w * w).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn psi_vanishes_at_equal_times() {
        let v = psi(1.0, 1.0, 37.0, order(1.5)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn psi_frozen_values_and_asymptotic_ratio() {
        let v = psi(T1, T2, PI * PI, order(1.5)).unwrap();
        assert!(v < 0.0);
        assert!((v - (-3.36606505e-3)).abs() < 1e-10, "psi = {v}");
        // the lowest mode sits in a positive pocket at the higher order
        let w = psi(T1, T2, PI * PI, order(1.75)).unwrap();
        assert!((w - 3.21098963e-2).abs() < 1e-8, "psi = {w}");

        // large-eigenvalue leading term: psi ~ (T2-T1) /
        // (Gamma(1-alpha) Gamma(2-alpha) lambda^2 T1^alpha T2^alpha)
        let alpha = 1.5;
        let lead = 1.0
            / (crate::specfun::gamma(1.0 - alpha) * crate::specfun::gamma(2.0 - alpha));
        for lam in [1e4, 1e8] {
            let v = psi(T1, T2, lam, order(alpha)).unwrap();
            let ratio = v * lam * lam * T1.powf(alpha) * T2.powf(alpha) / (T2 - T1) / lead;
            assert!(
                (ratio - 1.0).abs() < 1e-2,
                "lambda {lam}: ratio {ratio}"
            );
        }
    }

    #[test]
    fn psi_tilde_reduces_to_psi_and_orders_below_it() {
        let o = order(1.5);
        let lam = PI * PI;
        assert_eq!(psi_tilde(T1, T2, lam, o, 0.0).unwrap(), psi(T1, T2, lam, o).unwrap());
        let p = psi(T1, T2, lam, o).unwrap();
        let pt = psi_tilde(T1, T2, lam, o, 1e-3).unwrap();
        assert!(pt < p && p < 0.0, "psi_tilde {pt}, psi {p}");
        assert!(psi_tilde(T1, T2, lam, o, -0.5).is_err());
        assert!(psi_tilde(T2, T1, lam, o, 0.0).is_err());
    }

    #[test]
    fn psi_tilde_lower_bound_at_low_order() {
        // |psi_tilde| >= c (lambda^-2 + gamma lambda^-1 + gamma^2) holds with
        // a uniform c where the determinant keeps its sign; measured on this
        // grid and pinned. The higher orders change sign in mid-range bands,
        // so no uniform c exists there.
        let o = order(1.25);
        let mut c_min = f64::INFINITY;
        let mut lam = PI * PI;
        while lam <= 1e6 {
            for gamma in [0.0, 1e-6, 1e-3, 1e-1, 1.0] {
                let pt = psi_tilde(T1, T2, lam, o, gamma).unwrap();
                let floor = 1.0 / (lam * lam) + gamma / lam + gamma * gamma;
                c_min = c_min.min(pt.abs() / floor);
            }
            lam *= 1.7;
        }
        println!("measured c = {c_min:.6}");
        assert!(c_min > 0.016, "uniform constant collapsed: {c_min}");
    }

    #[test]
    fn exact_inversion_round_trips() {
        // single mode, unit initial state
        let basis1 = EigenBasis::continuous_1d(1).unwrap();
        let a1 = ModalField::new(basis1.clone(), vec![1.0]).unwrap();
        let b1 = ModalField::new(basis1.clone(), vec![0.0]).unwrap();
        let obs = observe_exact(&a1, &b1, 1.5);
        let (ra, rb) = invert_exact_modal(&obs, order(1.5), &basis1).unwrap();
        assert!((ra.coeffs()[0] - 1.0).abs() < 1e-10);
        assert!(rb.coeffs()[0].abs() < 1e-10);

        // smooth pair on 200 modes, all three orders
        let basis = EigenBasis::continuous_1d(200).unwrap();
        let (a, b) = example_fields(&basis);
        for alpha in [1.25, 1.5, 1.75] {
            let obs = observe_exact(&a, &b, alpha);
            let (ra, rb) = invert_exact_modal(&obs, order(alpha), &basis).unwrap();
            let ea = rel_err(ra.coeffs(), a.coeffs());
            let eb = rel_err(rb.coeffs(), b.coeffs());
            assert!(ea < 1e-8, "alpha {alpha}: a error {ea}");
            assert!(eb < 1e-8, "alpha {alpha}: b error {eb}");
        }

        // linearity: doubled data doubles the recovery
        let obs = observe_exact(&a, &b, 1.5);
        let doubled = ObservationPair::new(
            obs.g1.iter().map(|v| 2.0 * v).collect(),
            obs.g2.iter().map(|v| 2.0 * v).collect(),
            T1,
            T2,
        )
        .unwrap();
        let (ra, _) = invert_exact_modal(&obs, order(1.5), &basis).unwrap();
        let (ra2, _) = invert_exact_modal(&doubled, order(1.5), &basis).unwrap();
        for j in 0..basis.len() {
            assert!((ra2.coeffs()[j] - 2.0 * ra.coeffs()[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn regularized_inversion_converges_as_gamma_shrinks() {
        let basis = EigenBasis::continuous_1d(80).unwrap();
        let (a, b) = example_fields(&basis);
        let obs = observe_exact(&a, &b, 1.5);
        let mut prev = f64::INFINITY;
        let mut gammas = Vec::new();
        let mut errs = Vec::new();
        for k in 2..=8 {
            let gamma = 10.0_f64.powi(-k);
            let rec = invert_regularized_modal(
                &obs,
                order(1.5),
                &basis,
                &RegularizationConfig::with_gamma(gamma),
                None,
            )
            .unwrap();
            let e = rel_err(&rec.a, a.coeffs()) + rel_err(&rec.b, b.coeffs());
            println!("gamma {gamma:.1e}: error {e:.6e}");
            assert!(e <= prev * 1.05, "error must not grow as gamma shrinks: {e} after {prev}");
            assert!(rec.diagnostics.residual_g1 < 1e-10);
            assert!(rec.diagnostics.residual_g2 < 1e-10);
            // asymptotic window: gamma well below |psi| at the lowest mode
            if (5..=8).contains(&k) {
                gammas.push(gamma);
                errs.push(e);
            }
            prev = e;
        }
        assert!(prev < 1e-6, "terminal error {prev}");
        // clean-data error is first order in gamma for smooth pairs
        let n = gammas.len() as f64;
        let lx: Vec<f64> = gammas.iter().map(|g| g.ln()).collect();
        let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let slope = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / lx.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
        println!("gamma sweep slope: {slope:.3}");
        assert!((0.85..=1.15).contains(&slope), "slope {slope}");
    }

    #[test]
    fn regularized_inversion_gamma_inverse_norm_bound() {
        let basis = EigenBasis::continuous_1d(40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut worst = 0.0_f64;
        for gamma in [1e-2, 1e-4] {
            for _ in 0..6 {
                let g1: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let g2: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm_in = (g1.iter().map(|v| v * v).sum::<f64>()
                    + g2.iter().map(|v| v * v).sum::<f64>())
                .sqrt();
                let obs = ObservationPair::new(g1, g2, T1, T2).unwrap();
                let rec = invert_regularized_modal(
                    &obs,
                    order(1.5),
                    &basis,
                    &RegularizationConfig::with_gamma(gamma),
                    None,
                )
                .unwrap();
                let norm_out = (rec.a.iter().map(|v| v * v).sum::<f64>()
                    + rec.b.iter().map(|v| v * v).sum::<f64>())
                .sqrt();
                worst = worst.max(norm_out * gamma / norm_in);
            }
        }
        println!("max gamma-scaled amplification: {worst:.4}");
        // uniform-in-gamma stability; constant measured here and pinned
        assert!(worst < 1.6, "amplification {worst}");
    }

    #[test]
    fn two_sided_stability_of_the_forward_pair() {
        // ratio (||a|| + ||b||) / (||g1||_2 + ||g2||_2 in the spectral H^2
        // norm) over random smooth draws stays in a fixed interval
        let basis = EigenBasis::continuous_1d(60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for _ in 0..20 {
            let coeffs = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (1..=60)
                    .map(|j| rng.gen_range(-1.0..1.0) / (j as f64).powi(3))
                    .collect()
            };
            let a = ModalField::new(basis.clone(), coeffs(&mut rng)).unwrap();
            let b = ModalField::new(basis.clone(), coeffs(&mut rng)).unwrap();
            let u1 = evolve_exact_modal(&a, &b, order(1.5), T1).unwrap();
            let u2 = evolve_exact_modal(&a, &b, order(1.5), T2).unwrap();
            let num = a.l2_norm() + b.l2_norm();
            let den = u1.sobolev_norm(2.0) + u2.sobolev_norm(2.0);
            let r = num / den;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        println!("stability ratio range: [{lo:.4}, {hi:.4}]");
        assert!(lo > 0.02 && hi < 4.0, "ratio range [{lo}, {hi}] left the pinned interval");
    }

    #[test]
    fn fully_discrete_1d_recovers_projected_data() {
        let h = 1.0 / 64.0;
        let tau = 1.0 / 320.0;
        let sys = FemSystem::assemble(1, h).unwrap();
        let a = sys.l2_project_1d(|x| -(PI * x).sin()).unwrap();
        let b = sys.l2_project_1d(|x| x * (1.0 - x)).unwrap();
        let o = order(1.5);
        let n2 = (T2 / tau).round() as usize;
        let traj = evolve_cq_fem(&sys, &a, &b, o, tau, n2, None).unwrap();
        let n1 = (T1 / tau).round() as usize;
        let obs = ObservationPair::new(
            traj.states[n1].clone(),
            traj.states[n2].clone(),
            T1,
            T2,
        )
        .unwrap();
        let cfg = RegularizationConfig::with_gamma(1e-10);
        let rec = invert_fully_discrete(&obs, o, tau, &cfg, &sys, false).unwrap();
        let ea = rel_err(&rec.a, &a);
        let eb = rel_err(&rec.b, &b);
        // discretization-limited round trip through the discrete propagators
        assert!(ea < 1e-3, "a error {ea}");
        assert!(eb < 1e-3, "b error {eb}");
        assert!(rec.diagnostics.min_abs_psi_tilde.unwrap() > 0.0);
        // terminal defects at the recovered pair satisfy the defining system
        assert!(rec.diagnostics.residual_g1 < 1e-8);
        assert!(rec.diagnostics.residual_g2 < 1e-8);
    }

    #[test]
    fn modal_and_krylov_paths_agree() {
        let h = 1.0 / 16.0;
        let tau = 0.05;
        let sys = FemSystem::assemble(1, h).unwrap();
        let a = sys.l2_project_1d(|x| (2.0 * PI * x).sin() * 0.7).unwrap();
        let b = sys.l2_project_1d(|x| x * (1.0 - x)).unwrap();
        let o = order(1.5);
        let n2 = (T2 / tau).round() as usize;
        let traj = evolve_cq_fem(&sys, &a, &b, o, tau, n2, None).unwrap();
        let n1 = (T1 / tau).round() as usize;
        let obs = ObservationPair::new(
            traj.states[n1].clone(),
            traj.states[n2].clone(),
            T1,
            T2,
        )
        .unwrap();
        let cfg = RegularizationConfig { gamma: 1e-5, krylov_tol: 1e-10, krylov_max_iter: 500 };
        let modal = invert_fully_discrete(&obs, o, tau, &cfg, &sys, false).unwrap();
        let krylov = invert_fully_discrete_krylov(&obs, o, tau, &cfg, &sys, false).unwrap();
        assert!(krylov.diagnostics.krylov_iterations > 0);
        let da = rel_err(&krylov.a, &modal.a);
        let db = rel_err(&krylov.b, &modal.b);
        assert!(da < 1e-6, "a paths disagree: {da}");
        assert!(db < 1e-6, "b paths disagree: {db}");
    }

    #[test]
    fn integer_step_validation() {
        let sys = FemSystem::assemble(1, 0.25).unwrap();
        let obs = ObservationPair::new(vec![0.0; 3], vec![0.0; 3], 1.0, 1.2).unwrap();
        let cfg = RegularizationConfig::with_gamma(1e-4);
        // 1/256 does not divide 1.2
        match invert_fully_discrete(&obs, order(1.5), 1.0 / 256.0, &cfg, &sys, false) {
            Err(BackwardError::NonIntegerSteps { suggested_tau, .. }) => {
                assert!(suggested_tau > 0.0);
            }
            other => panic!("expected NonIntegerSteps, got {other:?}"),
        }
        assert!(invert_fully_discrete(&obs, order(1.5), 0.1, &cfg, &sys, false).is_ok());
    }

    #[test]
    fn discrete_determinant_approaches_the_continuous_one() {
        let o = order(1.5);
        for lam in [PI * PI, 4.0 * PI * PI] {
            let exact = psi(T1, T2, lam, o).unwrap();
            let mut taus = Vec::new();
            let mut errs = Vec::new();
            println!("lambda = {lam}");
            println!("{:>9} {:>13}", "tau", "|psi_t-psi|");
            for per_unit in [20usize, 40, 80, 160] {
                let tau = 1.0 / per_unit as f64;
                let n1 = per_unit;
                let n2 = (T2 * per_unit as f64).round() as usize;
                let (f, fbar) = discrete_operators(lam, o, tau, n2);
                let psi_tau = f[n1] * fbar[n2] - fbar[n1] * f[n2];
                let e = (psi_tau - exact).abs();
                println!("{:>9.5} {:>13.4e}", tau, e);
                taus.push(tau);
                errs.push(e);
            }
            let n = taus.len() as f64;
            let lx: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
            let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
            let mx = lx.iter().sum::<f64>() / n;
            let my = ly.iter().sum::<f64>() / n;
            let slope = lx
                .iter()
                .zip(&ly)
                .map(|(x, y)| (x - mx) * (y - my))
                .sum::<f64>()
                / lx.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
            println!("order: {slope:.3}");
            assert!(slope >= 0.9, "lambda {lam}: order {slope}");
            // scaled magnitude stays bounded as in the error analysis
            let scaled = errs[3] / (taus[3] / (lam * lam * T1.powf(1.5) * T2.powf(1.5)));
            println!("scaled constant: {scaled:.3}");
            assert!(scaled < 60.0, "constant {scaled}");
        }
    }

    #[test]
    fn observation_pair_validation() {
        assert!(ObservationPair::new(vec![0.0], vec![0.0], 1.2, 1.0).is_err());
        assert!(ObservationPair::new(vec![0.0], vec![0.0], 0.0, 1.0).is_err());
        assert!(ObservationPair::new(vec![0.0], vec![0.0, 1.0], 1.0, 1.2).is_err());
        let p = ObservationPair::new(vec![0.0], vec![0.0], 1.0, 1.2)
            .unwrap()
            .with_noise_meta(0.01, 9);
        assert_eq!(p.seed, 9);
        let basis = EigenBasis::continuous_1d(2).unwrap();
        assert!(matches!(
            invert_exact_modal(&p, order(1.5), &basis),
            Err(BackwardError::ObservationShape { .. })
        ));
    }
}
