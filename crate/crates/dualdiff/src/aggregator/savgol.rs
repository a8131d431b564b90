//! Savitzky-Golay smoothing.
//!
//! Interior samples use the centred convolution. The first and last
//! `window / 2` samples are read off the polynomial fitted to the first and
//! last full window, so every polynomial of degree ≤ `polyorder` passes
//! through unchanged, endpoints included.

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Result};

fn check(window: usize, polyorder: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 || window <= polyorder {
        return Err(contract(format!(
            "Savitzky-Golay window {window} must be odd, at least 3 and exceed polyorder {polyorder}"
        )));
    }
    Ok(())
}

/// Least-squares weights that evaluate, at offset `at` from the window
/// centre, the polynomial fitted to the window samples.
pub fn coefficients_at(window: usize, polyorder: usize, at: f64) -> Result<Vec<f64>> {
    check(window, polyorder)?;
    let half = (window / 2) as f64;
    let vander = DMatrix::from_fn(window, polyorder + 1, |i, p| (i as f64 - half).powi(p as i32));
    let eval = DVector::from_fn(polyorder + 1, |p, _| at.powi(p as i32));
    let gram = vander.transpose() * &vander;
    let solved = gram
        .cholesky()
        .ok_or_else(|| contract("Savitzky-Golay normal equations are singular"))?
        .solve(&eval);
    Ok((vander * solved).iter().copied().collect())
}

/// Centred smoothing weights.
pub fn coefficients(window: usize, polyorder: usize) -> Result<Vec<f64>> {
    coefficients_at(window, polyorder, 0.0)
}

/// Smooths each column of a row-major `rows × cols` matrix. Sequences
/// shorter than the window pass through unchanged.
pub fn smooth(seq: &[f64], rows: usize, cols: usize, window: usize, polyorder: usize) -> Result<Vec<f64>> {
    check(window, polyorder)?;
    if seq.len() != rows * cols {
        return Err(contract(format!("{} values do not form a {rows}x{cols} matrix", seq.len())));
    }
    if rows < window {
        return Ok(seq.to_vec());
    }
    let half = window / 2;
    let centre = coefficients(window, polyorder)?;
    let head: Vec<Vec<f64>> = (0..half)
        .map(|i| coefficients_at(window, polyorder, i as f64 - half as f64))
        .collect::<Result<_>>()?;
    let tail: Vec<Vec<f64>> = (0..half)
        .map(|i| coefficients_at(window, polyorder, (i + 1) as f64))
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; seq.len()];
    let dot = |weights: &[f64], start: usize, c: usize| -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * seq[(start + j) * cols + c])
            .sum()
    };
    for c in 0..cols {
        for t in 0..rows {
            out[t * cols + c] = if t < half {
                dot(&head[t], 0, c)
            } else if t + half >= rows {
                dot(&tail[t + half - rows], rows - window, c)
            } else {
                dot(&centre, t - half, c)
            };
        }
    }
    Ok(out)
}
