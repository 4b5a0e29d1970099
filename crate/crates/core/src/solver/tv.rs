//! Smoothed isotropic total variation with forward differences and
//! replicate (Neumann) boundaries.

/// `Σ √(|∇f|² + β)` over a row-major image `n` pixels wide.
pub fn tv_smoothed(image: &[f64], n: usize, beta: f64) -> f64 {
    let rows = image.len() / n;
    let mut acc = 0.0;
    for r in 0..rows {
        for c in 0..n {
            let (gx, gy) = forward_diff(image, n, r, c);
            acc += (gx * gx + gy * gy + beta).sqrt();
        }
    }
    acc
}

/// `J_β` and its gradient `-div(∇f / √(|∇f|² + β))`.
pub fn tv_with_gradient(image: &[f64], n: usize, beta: f64) -> (f64, Vec<f64>) {
    let rows = image.len() / n;
    let mut px = vec![0.0; image.len()];
    let mut py = vec![0.0; image.len()];
    let mut value = 0.0;
    for r in 0..rows {
        for c in 0..n {
            let (gx, gy) = forward_diff(image, n, r, c);
            let s = (gx * gx + gy * gy + beta).sqrt();
            value += s;
            px[r * n + c] = gx / s;
            py[r * n + c] = gy / s;
        }
    }
    let mut grad = vec![0.0; image.len()];
    for r in 0..rows {
        for c in 0..n {
            let k = r * n + c;
            let mut g = 0.0;
            if c + 1 < n {
                g -= px[k];
            }
            if c > 0 {
                g += px[k - 1];
            }
            if r + 1 < rows {
                g -= py[k];
            }
            if r > 0 {
                g += py[k - n];
            }
            grad[k] = g;
        }
    }
    (value, grad)
}

/// Forward differences `(∂x f, ∂y f)` of every pixel.
pub(crate) fn gradient_field(image: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; image.len()];
    let mut gy = vec![0.0; image.len()];
    for k in 0..image.len() {
        (gx[k], gy[k]) = forward_diff(image, n, k / n, k % n);
    }
    (gx, gy)
}

#[inline]
fn forward_diff(f: &[f64], n: usize, r: usize, c: usize) -> (f64, f64) {
    let k = r * n + c;
    let gx = if c + 1 < n { f[k + 1] - f[k] } else { 0.0 };
    let gy = if k + n < f.len() { f[k + n] - f[k] } else { 0.0 };
    (gx, gy)
}
