use super::Mat;
use crate::error::{Error, Result};

/// `exp(A t)` by scaling and squaring with a truncated Taylor series.
///
/// The argument is halved until `||A t||_1 <= 0.5`; the series is summed
/// until a term drops below `1e-16` of the partial sum (relative, 1-norm).
pub fn expm(a: &Mat, t: f64) -> Result<Mat> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let n = a.rows();
    let at = a.scale(t);
    let norm = at.norm1();
    if !norm.is_finite() {
        return Err(Error::NonFinite("expm argument".into()));
    }
    let mut squarings = 0u32;
    while norm / 2f64.powi(squarings as i32) > 0.5 {
        squarings += 1;
    }
    let x = at.scale(0.5f64.powi(squarings as i32));

    let mut sum = Mat::identity(n);
    let mut term = Mat::identity(n);
    for k in 1..64 {
        term = term.matmul(&x)?.scale(1.0 / k as f64);
        sum = sum.add(&term)?;
        if term.norm1() < 1e-16 * sum.norm1() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}
