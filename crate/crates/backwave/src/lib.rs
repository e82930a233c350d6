//! Solvers for the time-fractional diffusion-wave equation run backward in
//! time: given the state of the evolution at two distinct terminal times,
//! reconstruct both the initial displacement and the initial velocity.
//!
//! The crate is organised bottom-up:
//!
//! * [`specfun`]: two-parameter Mittag-Leffler function on the real axis,
//!   the workhorse behind every spectral formula here.
//! * [`spectral`]: Dirichlet eigenbases of the Laplacian on the unit interval
//!   and unit square, and fields expanded in them.
//! * [`fem`]: lumped-free P1 finite elements (mass/stiffness assembly),
//!   sparse matrices, and Krylov solvers.
//! * [`forward`]: the forward evolution, both the exact spectral propagator
//!   and the convolution-quadrature backward-Euler time stepper.
//! * [`backward`]: the two-observation inversion with quasi-boundary-value
//!   regularization.
//! * [`harness`]: reproducible noise synthesis, parameter selection rules,
//!   error metrics, and convergence studies.

pub mod backward;
pub mod fem;
pub mod forward;
pub mod harness;
mod quad;
pub mod specfun;
pub mod spectral;

/// Time-fractional order of the evolution equation.
///
/// The diffusion-wave regime requires `1 < alpha < 2` strictly: the limits
/// are the heat and wave equations, which need one and two pieces of initial
/// data respectively, while the two-observation inversion implemented here is
/// specific to the interior of the range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalOrder(f64);

/// Rejected construction of a [`FractionalOrder`].
#[derive(Debug, Clone, thiserror::Error)]
#[error("fractional order must satisfy 1 < alpha < 2, got {0}")]
pub struct OrderError(pub f64);

impl FractionalOrder {
    pub fn new(alpha: f64) -> Result<Self, OrderError> {
        if alpha.is_finite() && alpha > 1.0 && alpha < 2.0 {
            Ok(Self(alpha))
        } else {
            Err(OrderError(alpha))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}
