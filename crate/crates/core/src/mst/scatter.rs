//! First/second-order scattering cascade via frequency-domain products.

use num_complex::Complex64;

use super::filters::FilterBank;
use super::{MstError, Path1, Path2, ScatteringCoeffs};
use crate::grid::Grid2;

/// In-place 2D FFT of a square n x n complex buffer.
pub(crate) fn fft2_inplace(buf: &mut [Complex64], n: usize, bank: &FilterBank, inverse: bool) {
    let plan = if inverse { &bank.ifft } else { &bank.fft };
    for row in buf.chunks_exact_mut(n) {
        plan.process(row);
    }
    transpose_square(buf, n);
    for row in buf.chunks_exact_mut(n) {
        plan.process(row);
    }
    transpose_square(buf, n);
    if inverse {
        let scale = 1.0 / (n * n) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            buf.swap(r * n + c, c * n + r);
        }
    }
}

pub(crate) fn fft2_of_real(data: &[f64], n: usize, bank: &FilterBank) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_inplace(&mut buf, n, bank, false);
    buf
}

/// Multiply a spectrum by a real frequency-domain filter and invert.
fn apply_filter(xhat: &[Complex64], filter: &[f64], n: usize, bank: &FilterBank) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = xhat.iter().zip(filter.iter()).map(|(&x, &h)| x * h).collect();
    fft2_inplace(&mut buf, n, bank, true);
    buf
}

fn modulus_grid(u: &[Complex64], n: usize) -> Vec<f64> {
    debug_assert_eq!(u.len(), n * n);
    u.iter().map(|c| c.norm()).collect()
}

/// Low-pass with the father wavelet, take the real part, subsample by 2^J.
fn lowpass_subsample(uhat: &[Complex64], bank: &FilterBank) -> Grid2 {
    let n = bank.size;
    let smoothed = apply_filter(uhat, &bank.phi_hat, n, bank);
    let d = 1usize << bank.j_max;
    let m = n / d;
    let mut out = Grid2::zeros(m, m);
    for r in 0..m {
        for c in 0..m {
            out.set(r, c, smoothed[(r * d) * n + c * d].re);
        }
    }
    out
}

/// Full two-order scattering cascade with periodic boundary handling.
pub fn scatter2d(image: &Grid2, bank: &FilterBank) -> Result<ScatteringCoeffs, MstError> {
    let n = bank.size;
    if image.rows != n || image.cols != n {
        return Err(MstError::SizeMismatch {
            image: (image.rows, image.cols),
            bank: n,
        });
    }
    let xhat = fft2_of_real(&image.data, n, bank);
    let zeroth = lowpass_subsample(&xhat, bank);

    let mut order1 = Vec::with_capacity(bank.psi.len());
    let mut order2 = Vec::new();
    for p1 in &bank.psi {
        let u1 = apply_filter(&xhat, &p1.hat, n, bank);
        let m1 = modulus_grid(&u1, n);
        let m1hat = fft2_of_real(&m1, n, bank);
        order1.push((Path1 { j1: p1.j, r1: p1.r }, lowpass_subsample(&m1hat, bank)));
        for p2 in &bank.psi {
            if p2.j <= p1.j {
                continue;
            }
            let u2 = apply_filter(&m1hat, &p2.hat, n, bank);
            let m2 = modulus_grid(&u2, n);
            let m2hat = fft2_of_real(&m2, n, bank);
            order2.push((
                Path2 { j1: p1.j, r1: p1.r, j2: p2.j, r2: p2.r },
                lowpass_subsample(&m2hat, bank),
            ));
        }
    }
    order1.sort_by_key(|(p, _)| *p);
    order2.sort_by_key(|(p, _)| *p);
    Ok(ScatteringCoeffs {
        j_max: bank.j_max,
        n_rot: bank.n_rot,
        zeroth,
        order1,
        order2,
    })
}
