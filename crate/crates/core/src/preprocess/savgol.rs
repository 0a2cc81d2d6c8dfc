//! Savitzky-Golay first-derivative filter.
//!
//! Coefficients come from a least-squares polynomial fit over the window.
//! Interior samples use the centered fit; the first and last `half` samples
//! use the one-sided fit over the first/last full window evaluated at their
//! offset, so the output has the same length as the input.

use super::PreprocessError;

/// Window length used for velocity estimation.
pub const SG_WINDOW: usize = 7;
/// Polynomial order used for velocity estimation.
pub const SG_ORDER: usize = 2;

#[derive(Debug, Clone)]
pub struct SavitzkyGolay {
    window: usize,
    /// `coeffs[p]`: derivative weights for evaluation at window position `p`.
    coeffs: Vec<Vec<f64>>,
}

impl SavitzkyGolay {
    /// Panics unless `window` is odd and `order < window`.
    pub fn new(window: usize, order: usize) -> Self {
        assert!(window % 2 == 1, "window must be odd");
        assert!(order < window, "order must be below window length");
        let half = (window / 2) as f64;
        let n_coef = order + 1;
        // Vandermonde rows over local coordinate u = -half..=half.
        let us: Vec<f64> = (0..window).map(|i| i as f64 - half).collect();
        let vand: Vec<Vec<f64>> = us
            .iter()
            .map(|&u| (0..n_coef).map(|j| u.powi(j as i32)).collect())
            .collect();
        let mut gram = vec![vec![0.0; n_coef]; n_coef];
        for row in &vand {
            for a in 0..n_coef {
                for b in 0..n_coef {
                    gram[a][b] += row[a] * row[b];
                }
            }
        }
        let gram_inv = invert(&gram);
        // Least-squares projection: a = (V^T V)^-1 V^T y, shape n_coef x window.
        let proj: Vec<Vec<f64>> = (0..n_coef)
            .map(|j| {
                (0..window)
                    .map(|u| (0..n_coef).map(|k| gram_inv[j][k] * vand[u][k]).sum())
                    .collect()
            })
            .collect();
        let coeffs = us
            .iter()
            .map(|&p| {
                (0..window)
                    .map(|u| {
                        (1..n_coef)
                            .map(|j| j as f64 * p.powi(j as i32 - 1) * proj[j][u])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Self { window, coeffs }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Weights for the centered derivative (per sample step).
    pub fn central_weights(&self) -> &[f64] {
        &self.coeffs[self.window / 2]
    }

    /// First derivative with respect to time; `rate_hz` converts per-sample
    /// slope to per-second. A missing (`NaN`) input poisons every output whose
    /// fitting window contains it.
    pub fn derivative(&self, data: &[f64], rate_hz: f64) -> Result<Vec<f64>, PreprocessError> {
        let n = data.len();
        let w = self.window;
        if n < w {
            return Err(PreprocessError::TooShort { len: n, needed: w });
        }
        let half = w / 2;
        let apply = |start: usize, pos: usize| -> f64 {
            // Weights sum to zero, so subtracting a reference value is exact
            // in real arithmetic and keeps the products small.
            let reference = data[start + pos];
            let c = &self.coeffs[pos];
            let mut acc = 0.0;
            for u in 0..w {
                acc += c[u] * (data[start + u] - reference);
            }
            acc * rate_hz
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let v = if i < half {
                apply(0, i)
            } else if i >= n - half {
                apply(n - w, i - (n - w))
            } else {
                apply(i - half, half)
            };
            out.push(v);
        }
        Ok(out)
    }
}

fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    let pivot_row = a[col].clone();
                    for (v, p) in a[row].iter_mut().zip(&pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Velocity (deg/s) from positions (dva) with the 7-sample, order-2 filter.
pub fn sg_differentiate(positions: &[f64], rate_hz: f64) -> Result<Vec<f64>, PreprocessError> {
    SavitzkyGolay::new(SG_WINDOW, SG_ORDER).derivative(positions, rate_hz)
}
