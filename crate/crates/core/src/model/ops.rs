//! Dense kernels on row-major `f64` buffers.

/// A strided matrix view into a slice: element (i, j) lives at
/// `offset + i * rs + j * cs`.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Contiguous row-major `rows × cols` matrix.
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Columns `c0..c0 + width` of a contiguous row-major matrix.
    pub fn cols(rows: usize, stride: usize, c0: usize, width: usize) -> Self {
        Self {
            offset: c0,
            rows,
            cols: width,
            rs: stride,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn last(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            self.offset
        } else {
            self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `c ← alpha · a · b + beta · c`.
pub fn gemm(
    alpha: f64,
    a: &[f64],
    va: View,
    b: &[f64],
    vb: View,
    beta: f64,
    c: &mut [f64],
    vc: View,
) {
    assert_eq!(va.cols, vb.rows, "inner dimensions differ");
    assert_eq!(
        (va.rows, vb.cols),
        (vc.rows, vc.cols),
        "output shape mismatch"
    );
    if vc.rows == 0 || vc.cols == 0 {
        return;
    }
    assert!(va.last() < a.len().max(1) && vb.last() < b.len().max(1) && vc.last() < c.len());
    if va.cols == 0 {
        for i in 0..vc.rows {
            for j in 0..vc.cols {
                let x = &mut c[vc.offset + i * vc.rs + j * vc.cs];
                *x = if beta == 0.0 { 0.0 } else { beta * *x };
            }
        }
        return;
    }
    // SAFETY: every index touched lies within the slices (checked above), the
    // output view has non-zero strides and does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            vc.rows,
            va.cols,
            vc.cols,
            alpha,
            a.as_ptr().add(va.offset),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.offset),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr().add(vc.offset),
            vc.rs as isize,
            vc.cs as isize,
        );
    }
}

/// `x (m×k) · w (k×n)` into a fresh buffer, plus `bias` per column.
pub fn linear(x: &[f64], m: usize, k: usize, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = bias.len();
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    gemm(
        1.0,
        x,
        View::full(m, k),
        w,
        View::full(k, n),
        1.0,
        &mut out,
        View::full(m, n),
    );
    out
}

/// Backward of [`linear`]: accumulates `dw`, `db` and returns `dx`.
pub fn linear_backward(
    x: &[f64],
    m: usize,
    k: usize,
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let n = db.len();
    gemm(
        1.0,
        x,
        View::full(m, k).t(),
        dy,
        View::full(m, n),
        1.0,
        dw,
        View::full(k, n),
    );
    for row in dy.chunks_exact(n) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    need_dx.then(|| {
        let mut dx = vec![0.0; m * k];
        gemm(
            1.0,
            dy,
            View::full(m, n),
            w,
            View::full(k, n).t(),
            0.0,
            &mut dx,
            View::full(m, k),
        );
        dx
    })
}

/// In-place softmax of each row.
pub fn softmax_rows(x: &mut [f64], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Backward of a row softmax `p`, in place on `dp`.
pub fn softmax_rows_backward(p: &[f64], dp: &mut [f64], cols: usize) {
    for (pr, dr) in p.chunks_exact(cols).zip(dp.chunks_exact_mut(cols)) {
        let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
        for (d, &q) in dr.iter_mut().zip(pr) {
            *d = q * (*d - dot);
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization. Returns the output and, per row, the
/// normalized values and inverse standard deviation needed by the backward pass.
pub fn layer_norm(
    x: &[f64],
    cols: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / cols;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = inv;
        for c in 0..cols {
            let h = (row[c] - mean) * inv;
            xhat[r * cols + c] = h;
            y[r * cols + c] = h * gamma[c] + beta[c];
        }
    }
    (y, xhat, rstd)
}

pub fn layer_norm_backward(
    xhat: &[f64],
    rstd: &[f64],
    gamma: &[f64],
    dy: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let cols = gamma.len();
    let mut dx = vec![0.0; dy.len()];
    for (r, &inv) in rstd.iter().enumerate() {
        let s = r * cols;
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for c in 0..cols {
            let g = dy[s + c] * gamma[c];
            dgamma[c] += dy[s + c] * xhat[s + c];
            dbeta[c] += dy[s + c];
            sum_g += g;
            sum_gx += g * xhat[s + c];
        }
        let n = cols as f64;
        for c in 0..cols {
            let g = dy[s + c] * gamma[c];
            dx[s + c] = inv * (g - sum_g / n - xhat[s + c] * sum_gx / n);
        }
    }
    dx
}

/// Mean cross-entropy of `logits` (rows × classes) against `targets`.
/// Returns the loss and d loss / d logits scaled by `1 / norm`.
pub fn cross_entropy(
    logits: &[f64],
    classes: usize,
    targets: &[u32],
    norm: f64,
) -> (f64, Vec<f64>) {
    let mut grad = logits.to_vec();
    softmax_rows(&mut grad, classes);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = &mut grad[r * classes..(r + 1) * classes];
        loss -= row[t as usize].max(f64::MIN_POSITIVE).ln();
        row[t as usize] -= 1.0;
    }
    let scale = 1.0 / norm;
    grad.iter_mut().for_each(|g| *g *= scale);
    (loss / norm, grad)
}
