//! 2-D FFT over one latent channel.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Unnormalized forward (`inverse = false`) or `1/(HW)`-scaled inverse 2-D FFT, in place.
pub fn fft2(buf: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    assert_eq!(buf.len(), height * width);
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for r in buf.chunks_exact_mut(width) {
        row.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
    if inverse {
        let n = (height * width) as f64;
        for v in buf.iter_mut() {
            *v /= n;
        }
    }
}

pub fn forward_real(plane: &[f32], height: usize, width: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
    fft2(&mut buf, height, width, false);
    buf
}

/// Signed frequency of bin `k` in an `n`-point transform.
pub fn signed_freq(k: usize, n: usize) -> i64 {
    if (k as i64) < (n as i64 + 1) / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_then_inverse_is_identity() {
        let plane: Vec<f32> = (0..24).map(|i| (i as f32 * 0.37).sin()).collect();
        let mut spec = forward_real(&plane, 4, 6);
        fft2(&mut spec, 4, 6, true);
        for (a, b) in spec.iter().zip(&plane) {
            assert!((a.re - *b as f64).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn dc_bin_is_sum() {
        let plane = vec![1.0f32; 16];
        let spec = forward_real(&plane, 4, 4);
        assert!((spec[0].re - 16.0).abs() < 1e-12);
        assert!(spec[1..].iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn signed_frequencies() {
        let f: Vec<i64> = (0..8).map(|k| signed_freq(k, 8)).collect();
        assert_eq!(f, [0, 1, 2, 3, -4, -3, -2, -1]);
        let f: Vec<i64> = (0..5).map(|k| signed_freq(k, 5)).collect();
        assert_eq!(f, [0, 1, 2, -2, -1]);
    }
}
