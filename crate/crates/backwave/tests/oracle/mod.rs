//! Extended-precision Mittag-Leffler reference evaluator for tests.
//!
//! Sums the defining power series in MPFR arithmetic with enough guard bits
//! to absorb the catastrophic cancellation that occurs for large negative
//! arguments, then rounds once to f64. Far too slow for production use; the
//! production evaluator is validated against this.

use rug::float::Round;
use rug::ops::AddAssignRound;
use rug::Float;

/// Working precision in bits for E_{alpha,beta}(z).
///
/// The largest series term before decay sets in has magnitude roughly
/// exp(|z|^(1/alpha)); everything past that must cancel, so the precision
/// must cover log2 of that ratio plus slack for the answer itself.
fn series_precision(alpha: f64, z: f64) -> u32 {
    let growth = z.abs().powf(1.0 / alpha);
    let cancel_bits = 1.7 * std::f64::consts::LOG2_E * growth;
    (192.0 + cancel_bits).min(80_000.0) as u32
}

/// E_{alpha,beta}(z) by direct summation, correctly rounded to ~1 ulp of f64.
pub fn ml_oracle(alpha: f64, beta: f64, z: f64) -> f64 {
    assert!(alpha > 0.0 && beta > 0.0, "series oracle needs alpha, beta > 0");
    let prec = series_precision(alpha, z);
    let zp_big = Float::with_val(prec, z);

    let mut sum = Float::with_val(prec, 0.0);
    let mut power = Float::with_val(prec, 1.0);
    let mut decreasing = 0u32;
    for k in 0..200_000u64 {
        // The f64 product alpha*k is exact for the dyadic test orders; the
        // few non-dyadic spot checks converge within ~50 terms, where its
        // rounding sits hundreds of bits below the guard precision.
        let arg = Float::with_val(prec, alpha * k as f64 + beta);
        let term = power.clone() / arg.gamma();
        let term_mag = term.clone().abs();
        sum.add_assign_round(term, Round::Nearest);

        // Terms grow before they shrink; require sustained decay below the
        // noise floor of the accumulated sum before stopping.
        let floor = Float::with_val(prec, sum.clone().abs() + 1e-300) >> (prec - 16);
        if term_mag < floor {
            decreasing += 1;
            if decreasing >= 8 {
                break;
            }
        } else {
            decreasing = 0;
        }
        power *= &zp_big;
    }
    sum.to_f64()
}

/// psi(T1, T2; lambda) assembled from oracle Mittag-Leffler values.
pub fn psi_oracle(alpha: f64, t1: f64, t2: f64, lambda: f64) -> f64 {
    let prec = 512;
    let m11 = Float::with_val(prec, ml_oracle(alpha, 1.0, -lambda * t1.powf(alpha)));
    let m12 = Float::with_val(prec, t1 * ml_oracle(alpha, 2.0, -lambda * t1.powf(alpha)));
    let m21 = Float::with_val(prec, ml_oracle(alpha, 1.0, -lambda * t2.powf(alpha)));
    let m22 = Float::with_val(prec, t2 * ml_oracle(alpha, 2.0, -lambda * t2.powf(alpha)));
    (m11 * m22 - m12 * m21).to_f64()
}
