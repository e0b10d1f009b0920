//! Morlet filter bank for the 2D scattering transform.
//!
//! Filters are built directly in the frequency domain on the DFT grid with
//! alias folding over the neighboring spectral periods, so the sampled
//! family stays zero-mean exactly. Mothers are dilations by 2^j and
//! rotations by r*pi/L of a single Morlet; the father is a Gaussian at
//! scale 2^J.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::MstError;

/// Envelope width of the j = 0 Morlet (spatial std in pixels). Together
/// with `PHI_SCALE` and `PSI_GAIN` this was tuned numerically so the
/// Littlewood-Paley sum stays inside [0.5, 1.05] over the Nyquist disk at
/// L = 4, slant = 0.5 (measured [0.75, 1.00] at 128^2).
pub const SIGMA0: f64 = 0.40;
/// Father-wavelet width multiplier relative to sigma0 * 2^J.
pub const PHI_SCALE: f64 = 0.70;
/// Global amplitude applied to every mother filter.
pub const PSI_GAIN: f64 = 0.80;
/// Center frequency of the j = 0 Morlet.
pub const XI0: f64 = 3.0 * std::f64::consts::PI / 4.0;
/// Anisotropy of the Morlet envelope perpendicular to the wave vector.
pub const SLANT: f64 = 0.5;

/// One mother filter, stored as real frequency samples at image resolution.
#[derive(Debug, Clone)]
pub struct PsiFilter {
    pub j: usize,
    pub r: usize,
    pub hat: Vec<f64>,
}

/// Complete bank for one image size: J*L mothers plus the low-pass father,
/// with cached FFT plans for that size.
#[derive(Clone)]
pub struct FilterBank {
    pub j_max: usize,
    pub n_rot: usize,
    pub size: usize,
    pub psi: Vec<PsiFilter>,
    pub phi_hat: Vec<f64>,
    pub(crate) fft: Arc<dyn Fft<f64>>,
    pub(crate) ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FilterBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FilterBank")
            .field("j_max", &self.j_max)
            .field("n_rot", &self.n_rot)
            .field("size", &self.size)
            .finish()
    }
}

/// Map a DFT bin index to its wrapped frequency in radians.
#[inline]
pub(crate) fn bin_freq(k: usize, n: usize) -> f64 {
    let k = k as i64;
    let n = n as i64;
    let wrapped = if k <= n / 2 { k } else { k - n };
    2.0 * std::f64::consts::PI * wrapped as f64 / n as f64
}

/// Anisotropic Gaussian envelope in the frequency domain, alias-folded over
/// the neighboring spectral periods. The slant shortens the frequency
/// ellipse along the wave vector (aspect ratio `SLANT`), which widens
/// angular coverage; with L = 4 rotations this is the orientation that
/// keeps the Littlewood-Paley sum inside its frame bounds.
fn folded_envelope(wx: f64, wy: f64, center: (f64, f64), sigma: f64, theta: f64) -> f64 {
    let (ct, st) = (theta.cos(), theta.sin());
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut acc = 0.0;
    for mx in -1i32..=1 {
        for my in -1i32..=1 {
            let dx = wx + mx as f64 * two_pi - center.0;
            let dy = wy + my as f64 * two_pi - center.1;
            let dpar = dx * ct + dy * st;
            let dperp = -dx * st + dy * ct;
            let q = (sigma / SLANT).powi(2) * dpar * dpar + sigma * sigma * dperp * dperp;
            acc += (-0.5 * q).exp();
        }
    }
    acc
}

fn folded_isotropic(wx: f64, wy: f64, sigma: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut acc = 0.0;
    for mx in -1i32..=1 {
        for my in -1i32..=1 {
            let dx = wx + mx as f64 * two_pi;
            let dy = wy + my as f64 * two_pi;
            acc += (-0.5 * sigma * sigma * (dx * dx + dy * dy)).exp();
        }
    }
    acc
}

/// Build the Morlet bank. `image_side` must be at least 2^J and divisible
/// by 2^J so coefficient grids subsample cleanly.
pub fn build_filter_bank(j_max: usize, n_rot: usize, image_side: usize) -> Result<FilterBank, MstError> {
    let sub = 1usize << j_max;
    if sub > image_side {
        return Err(MstError::ScaleTooLarge { j_max, image_side });
    }
    if image_side % sub != 0 {
        return Err(MstError::SizeNotDivisible { image_side, subsample: sub });
    }
    let n = image_side;
    let mut psi = Vec::with_capacity(j_max * n_rot);
    for j in 0..j_max {
        let sigma = SIGMA0 * (1 << j) as f64;
        let xi = XI0 / (1 << j) as f64;
        for r in 0..n_rot {
            let theta = r as f64 * std::f64::consts::PI / n_rot as f64;
            let center = (xi * theta.cos(), xi * theta.sin());
            let mut hat = vec![0.0f64; n * n];
            let mut gab0 = 0.0;
            let mut gauss0 = 0.0;
            // DC correction factor from the alias-folded values at omega = 0.
            gab0 += folded_envelope(0.0, 0.0, center, sigma, theta);
            gauss0 += folded_envelope(0.0, 0.0, (0.0, 0.0), sigma, theta);
            let k_dc = gab0 / gauss0;
            for ky in 0..n {
                let wy = bin_freq(ky, n);
                for kx in 0..n {
                    let wx = bin_freq(kx, n);
                    let gab = folded_envelope(wx, wy, center, sigma, theta);
                    let gauss = folded_envelope(wx, wy, (0.0, 0.0), sigma, theta);
                    hat[ky * n + kx] = PSI_GAIN * (gab - k_dc * gauss);
                }
            }
            psi.push(PsiFilter { j, r, hat });
        }
    }

    let sigma_phi = SIGMA0 * PHI_SCALE * (1 << j_max) as f64;
    let mut phi_hat = vec![0.0f64; n * n];
    let dc = folded_isotropic(0.0, 0.0, sigma_phi);
    for ky in 0..n {
        let wy = bin_freq(ky, n);
        for kx in 0..n {
            let wx = bin_freq(kx, n);
            phi_hat[ky * n + kx] = folded_isotropic(wx, wy, sigma_phi) / dc;
        }
    }

    let mut planner = FftPlanner::new();
    Ok(FilterBank {
        j_max,
        n_rot,
        size: n,
        psi,
        phi_hat,
        fft: planner.plan_fft_forward(n),
        ifft: planner.plan_fft_inverse(n),
    })
}

/// Littlewood-Paley sum per frequency bin:
/// |phi(w)|^2 + 1/2 sum_psi (|psi(w)|^2 + |psi(-w)|^2).
pub fn littlewood_paley(bank: &FilterBank) -> Vec<f64> {
    let n = bank.size;
    let mut lp = vec![0.0f64; n * n];
    for ky in 0..n {
        for kx in 0..n {
            let idx = ky * n + kx;
            let neg = ((n - ky) % n) * n + ((n - kx) % n);
            let mut acc = bank.phi_hat[idx] * bank.phi_hat[idx];
            for p in &bank.psi {
                acc += 0.5 * (p.hat[idx] * p.hat[idx] + p.hat[neg] * p.hat[neg]);
            }
            lp[idx] = acc;
        }
    }
    lp
}

/// Min and max of the Littlewood-Paley sum over the Nyquist disk |w| <= pi.
pub fn littlewood_paley_bounds(bank: &FilterBank) -> (f64, f64) {
    let n = bank.size;
    let lp = littlewood_paley(bank);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for ky in 0..n {
        let wy = bin_freq(ky, n);
        for kx in 0..n {
            let wx = bin_freq(kx, n);
            if wx * wx + wy * wy <= std::f64::consts::PI.powi(2) {
                let v = lp[ky * n + kx];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo, hi)
}
