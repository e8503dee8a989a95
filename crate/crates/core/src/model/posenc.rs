//! Fixed sinusoidal positional encodings, wavelength base 10000.

/// Row-major `len × dim`: component `2i` is `sin(p / 10000^(2i/dim))`, `2i + 1`
/// the matching cosine.
pub fn sinusoidal_1d(len: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * dim];
    for p in 0..len {
        for i in 0..dim / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            out[p * dim + 2 * i] = angle.sin();
            out[p * dim + 2 * i + 1] = angle.cos();
        }
    }
    out
}

/// Row-major `(height · width) × dim`, cell (y, x) at row `y · width + x`.
/// The first `dim / 2` components encode x, the rest encode y.
pub fn sinusoidal_2d(height: usize, width: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let px = sinusoidal_1d(width, half);
    let py = sinusoidal_1d(height, half);
    let mut out = vec![0.0; height * width * dim];
    for y in 0..height {
        for x in 0..width {
            let row = &mut out[(y * width + x) * dim..(y * width + x + 1) * dim];
            row[..half].copy_from_slice(&px[x * half..(x + 1) * half]);
            row[half..].copy_from_slice(&py[y * half..(y + 1) * half]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_position_alternates_zero_one() {
        let pe = sinusoidal_1d(3, 4);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe[4] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[6] - (1.0f64 / 100.0).sin()).abs() < 1e-15);
    }

    #[test]
    fn axis_split() {
        let pe = sinusoidal_2d(2, 3, 8);
        let x = sinusoidal_1d(3, 4);
        let y = sinusoidal_1d(2, 4);
        let cell = &pe[(3 + 2) * 8..(3 + 3) * 8];
        assert_eq!(&cell[..4], &x[8..12]);
        assert_eq!(&cell[4..], &y[4..8]);
    }
}
