//! Microcanonical surface-roughness synthesizer: gradient descent from white
//! noise until the Gram matrix of log-scattering vectors over a fixed
//! ensemble of periodic translations matches the target's.

use std::path::Path;
use std::rc::Rc;

use num_complex::Complex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{AdamParams, AdamState, Graph, Real, Tensor, Var};
use crate::grid::Grid2;
use crate::mst;
use crate::surface::{self, SurfaceMap};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("ensemble of {requested} exceeds the {available} distinct shifts of the image")]
    TooManyMembers { requested: usize, available: usize },
    #[error("ensemble needs at least 2 members, got {0}")]
    EnsembleTooSmall(usize),
    #[error("loss became non-finite at iteration {0}")]
    Diverged(usize),
    #[error(transparent)]
    Mst(#[from] mst::MstError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Surface(#[from] surface::SurfaceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Log floor applied to coefficient means before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Working resolution (the full pipeline uses 256).
    pub size: usize,
    /// Ensemble size G (periodic translations, identity included).
    pub ensemble: usize,
    /// Iteration cap.
    pub iterations: usize,
    pub j_max: usize,
    pub n_rot: usize,
    /// Adam learning rate, cosine-decayed from `lr` to `lr_final`.
    pub lr: f64,
    pub lr_final: f64,
    /// Stop once loss falls below this fraction of the iteration-0 loss.
    pub stop_ratio: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 256,
            ensemble: 4,
            iterations: 500,
            j_max: 4,
            n_rot: 4,
            lr: 0.05,
            lr_final: 0.005,
            stop_ratio: None,
            seed: 0,
        }
    }
}

/// One synthesis run: per-iteration loss trace and the best iterate at the
/// working resolution.
#[derive(Debug, Clone)]
pub struct SynthRun {
    pub loss_trace: Vec<f64>,
    pub final_image: Grid2,
    pub target_gram: Vec<f64>,
    pub stat_dim: usize,
    pub iterations_run: usize,
}

/// Distinct periodic shift offsets, identity always first.
pub fn ensemble_offsets(
    rows: usize,
    cols: usize,
    g: usize,
    seed: u64,
) -> Result<Vec<(i64, i64)>, SynthError> {
    if g < 2 {
        return Err(SynthError::EnsembleTooSmall(g));
    }
    let available = rows * cols;
    if g > available {
        return Err(SynthError::TooManyMembers { requested: g, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut non_identity: Vec<(i64, i64)> = (0..rows as i64)
        .flat_map(|r| (0..cols as i64).map(move |c| (r, c)))
        .filter(|&o| o != (0, 0))
        .collect();
    non_identity.shuffle(&mut rng);
    let mut out = vec![(0, 0)];
    out.extend(non_identity.into_iter().take(g - 1));
    Ok(out)
}

/// The translated copies themselves (identity first).
pub fn make_ensemble(image: &Grid2, g: usize, seed: u64) -> Result<Vec<Grid2>, SynthError> {
    let offsets = ensemble_offsets(image.rows, image.cols, g, seed)?;
    Ok(offsets.iter().map(|&(dr, dc)| image.circ_shift(dr, dc)).collect())
}

/// Frequency-domain filters converted for the autodiff stack, plus the
/// fused father-wavelet subgrid-mean weights.
pub struct SynthFilters {
    pub size: usize,
    pub j_max: usize,
    pub n_rot: usize,
    psi: Vec<(usize, usize, Rc<Vec<Complex<Real>>>)>,
    phi_weights: Rc<Vec<(usize, Real)>>,
    pub stat_dim: usize,
}

impl SynthFilters {
    pub fn build(j_max: usize, n_rot: usize, size: usize) -> Result<SynthFilters, SynthError> {
        let bank = mst::build_filter_bank(j_max, n_rot, size)?;
        let n = size;
        let psi = bank
            .psi
            .iter()
            .map(|p| {
                let hat: Vec<Complex<Real>> = p
                    .hat
                    .iter()
                    .map(|&v| Complex::new(v as Real, 0.0))
                    .collect();
                (p.j, p.r, Rc::new(hat))
            })
            .collect();
        // value = Re[(1/N^2) sum over alias lattice of X(k) phi(k)]
        let d = 1usize << j_max;
        let mut weights = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                let ky = a * (n / d);
                let kx = b * (n / d);
                let idx = ky * n + kx;
                weights.push((idx, (bank.phi_hat[idx] / (n * n) as f64) as Real));
            }
        }
        let (p1, p2) = mst::path_labels(j_max, n_rot);
        Ok(SynthFilters {
            size,
            j_max,
            n_rot,
            psi,
            phi_weights: Rc::new(weights),
            stat_dim: p1.len() + p2.len(),
        })
    }
}

/// Log-scattering vector of one image node: spatial means per path via the
/// fused frequency-domain low-pass, floored and logged, order-1 paths then
/// order-2 in deterministic order.
pub fn scatter_log_vector(
    g: &mut Graph,
    x: Var,
    filters: &SynthFilters,
) -> Result<Var, SynthError> {
    let xhat = g.fft2(x)?;
    let mut order1 = Vec::new();
    let mut order2 = Vec::new();
    for (j1, _r1, hat1) in &filters.psi {
        let u1 = g.freq_mul_ifft(xhat, hat1.clone())?;
        let m1 = g.modulus(u1)?;
        let m1hat = g.fft2(m1)?;
        order1.push(g.freq_subgrid_mean(m1hat, filters.phi_weights.clone())?);
        for (j2, _r2, hat2) in &filters.psi {
            if j2 <= j1 {
                continue;
            }
            let u2 = g.freq_mul_ifft(m1hat, hat2.clone())?;
            let m2 = g.modulus(u2)?;
            let m2hat = g.fft2(m2)?;
            order2.push(g.freq_subgrid_mean(m2hat, filters.phi_weights.clone())?);
        }
    }
    order1.extend(order2);
    let stacked = g.stack_scalars(&order1)?;
    let clamped = g.clamp_min(stacked, LOG_FLOOR as Real);
    Ok(g.log(clamped))
}

fn grid_tensor(image: &Grid2) -> Tensor {
    Tensor::from_vec(
        &[image.rows, image.cols],
        image.data.iter().map(|&v| v as Real).collect(),
    )
}

/// Gram matrix (uncentered second moment) of the ensemble's log-scattering
/// vectors, computed without gradients.
pub fn target_gram(
    image: &Grid2,
    offsets: &[(i64, i64)],
    filters: &SynthFilters,
) -> Result<Vec<f64>, SynthError> {
    let d = filters.stat_dim;
    let mut gram = vec![0.0f64; d * d];
    for &(dr, dc) in offsets {
        let mut g = Graph::new();
        let x = g.leaf(grid_tensor(&image.circ_shift(dr, dc)));
        let sx = scatter_log_vector(&mut g, x, filters)?;
        let v = &g.value(sx).data;
        for i in 0..d {
            let vi = v[i] as f64;
            for j in 0..d {
                gram[i * d + j] += vi * v[j] as f64;
            }
        }
    }
    let scale = 1.0 / offsets.len() as f64;
    Ok(gram.iter().map(|&x| x * scale).collect())
}

/// Build the full loss graph: || K(x ensemble) - K_target ||_F^2.
pub fn mst_cov_loss(
    g: &mut Graph,
    x: Var,
    offsets: &[(i64, i64)],
    filters: &SynthFilters,
    target: Rc<Vec<f64>>,
) -> Result<Var, SynthError> {
    let mut members = Vec::with_capacity(offsets.len());
    for &(dr, dc) in offsets {
        let shifted = g.circ_shift2d(x, dr, dc)?;
        members.push(scatter_log_vector(g, shifted, filters)?);
    }
    Ok(g.gram_frobenius_loss(&members, target)?)
}

/// Loss and gradient w.r.t. the image, one forward/backward pass.
pub fn loss_and_grad(
    image: &Grid2,
    offsets: &[(i64, i64)],
    filters: &SynthFilters,
    target: Rc<Vec<f64>>,
) -> Result<(f64, Vec<Real>), SynthError> {
    let mut g = Graph::new();
    let x = g.param(grid_tensor(image));
    let loss = mst_cov_loss(&mut g, x, offsets, filters, target)?;
    let value = g.value(loss).item() as f64;
    g.backward(loss)?;
    Ok((value, g.grad(x).expect("image requires grad").to_vec()))
}

/// Core synthesis on a raw grid (already at working resolution, zero-mean).
/// `init` overrides the white-noise initialization when given.
pub fn synthesize_grid(
    target: &Grid2,
    init: Option<Grid2>,
    cfg: &SynthConfig,
) -> Result<(Grid2, SynthRun), SynthError> {
    assert_eq!(target.rows, cfg.size);
    assert_eq!(target.cols, cfg.size);
    let filters = SynthFilters::build(cfg.j_max, cfg.n_rot, cfg.size)?;
    let offsets = ensemble_offsets(cfg.size, cfg.size, cfg.ensemble, cfg.seed)?;
    let gram = Rc::new(target_gram(target, &offsets, &filters)?);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let std = target.variance().sqrt();
    let mut x = match init {
        Some(g) => grid_tensor(&g),
        None => {
            let data: Vec<Real> = (0..cfg.size * cfg.size)
                .map(|_| {
                    let g: f64 = rng.sample(rand_distr::StandardNormal);
                    (g * std) as Real
                })
                .collect();
            Tensor::from_vec(&[cfg.size, cfg.size], data)
        }
    };

    let mut adam = AdamState::new(
        AdamParams { lr: cfg.lr as Real, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        &[&x],
    );
    let mut trace: Vec<f64> = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best = x.clone();
    let mut initial = f64::NAN;
    for it in 0..cfg.iterations {
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let loss = mst_cov_loss(&mut g, xv, &offsets, &filters, gram.clone())?;
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(SynthError::Diverged(it));
        }
        trace.push(value);
        if value < best_loss {
            best_loss = value;
            best = x.clone();
        }
        if it == 0 {
            initial = value;
        }
        if let Some(ratio) = cfg.stop_ratio {
            if value <= ratio * initial {
                break;
            }
        }
        g.backward(loss)?;
        let grad = g.grad(xv).expect("image grad").to_vec();
        // cosine decay
        let t = it as f64 / cfg.iterations.max(1) as f64;
        adam.params.lr = (cfg.lr_final
            + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + (std::f64::consts::PI * t).cos()))
            as Real;
        adam.step(&mut [&mut x], &[Some(&grad)]);
    }

    let image = Grid2::from_vec(
        cfg.size,
        cfg.size,
        best.data.iter().map(|&v| v as f64).collect(),
    );
    let stat_dim = filters.stat_dim;
    let run = SynthRun {
        iterations_run: trace.len(),
        loss_trace: trace,
        final_image: image.clone(),
        target_gram: gram.as_ref().clone(),
        stat_dim,
    };
    Ok((image, run))
}

/// Full surface pipeline: resize the target to the working resolution,
/// remove row/column means, synthesize, then restore the original
/// resolution and the removed means.
pub fn synthesize(target: &SurfaceMap, cfg: &SynthConfig) -> Result<(SurfaceMap, SynthRun), SynthError> {
    let resized = surface::resize(target, (cfg.size, cfg.size))?;
    let (demeaned, means) = surface::demean(&resized);
    let grid = Grid2::from_vec(cfg.size, cfg.size, demeaned.values.clone());
    let (out_grid, run) = synthesize_grid(&grid, None, cfg)?;
    let out_small = SurfaceMap { values: out_grid.data.clone(), ..demeaned.clone() };
    let restored = surface::resize(&out_small, (target.n_theta, target.n_z))?;
    // restore metadata lost through the resize round trip
    let restored = SurfaceMap {
        z_spacing: target.z_spacing,
        axis_center: target.axis_center.clone(),
        nominal_radius: target.nominal_radius,
        ..restored
    };
    Ok((surface::remean(&restored, &means), run))
}

/// Savitzky-Golay cleanup pass applied to generated maps.
pub fn postprocess(map: &SurfaceMap) -> Result<SurfaceMap, SynthError> {
    Ok(surface::savgol(map, 100.0, 4)?)
}

#[derive(Serialize)]
struct TraceFile<'a> {
    iterations: usize,
    loss: &'a [f64],
}

/// Run artifact bundle: surface map file + loss trace JSON + per-path
/// coefficient comparison CSV (target vs synthesized, f64 reference path).
pub fn write_run_artifacts(
    map: &SurfaceMap,
    run: &SynthRun,
    target: &SurfaceMap,
    cfg: &SynthConfig,
    dir: &Path,
) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    surface::save_map(map, &dir.join("surface"), true)?;
    std::fs::write(
        dir.join("loss_trace.json"),
        serde_json::to_string_pretty(&TraceFile {
            iterations: run.iterations_run,
            loss: &run.loss_trace,
        })?,
    )?;

    let bank = mst::build_filter_bank(cfg.j_max, cfg.n_rot, cfg.size)?;
    let tgt_resized = surface::resize(target, (cfg.size, cfg.size))?;
    let (tgt_dm, _) = surface::demean(&tgt_resized);
    let tgt_sx = mst::log_coeffs(
        &mst::scatter2d(&Grid2::from_vec(cfg.size, cfg.size, tgt_dm.values.clone()), &bank)?,
        LOG_FLOOR,
    );
    let out_sx = mst::log_coeffs(&mst::scatter2d(&run.final_image, &bank)?, LOG_FLOOR);
    let (p1, p2) = mst::path_labels(cfg.j_max, cfg.n_rot);
    let to_io = |e: csv::Error| SynthError::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(dir.join("coefficients.csv")).map_err(to_io)?;
    w.write_record(["order", "j1", "r1", "j2", "r2", "target_log", "synth_log"])
        .map_err(to_io)?;
    for (i, p) in p1.iter().enumerate() {
        w.write_record([
            "1".to_string(),
            p.j1.to_string(),
            p.r1.to_string(),
            String::new(),
            String::new(),
            format!("{:.9}", tgt_sx[i]),
            format!("{:.9}", out_sx[i]),
        ])
        .map_err(to_io)?;
    }
    for (i, p) in p2.iter().enumerate() {
        w.write_record([
            "2".to_string(),
            p.j1.to_string(),
            p.r1.to_string(),
            p.j2.to_string(),
            p.r2.to_string(),
            format!("{:.9}", tgt_sx[p1.len() + i]),
            format!("{:.9}", out_sx[p1.len() + i]),
        ])
        .map_err(to_io)?;
    }
    w.flush().map_err(SynthError::Io)?;
    Ok(())
}

/// Band-limited random field: white noise pushed through one mid-scale
/// mother filter; shared test substrate.
pub fn band_limited_noise(size: usize, seed: u64) -> Grid2 {
    let bank = mst::build_filter_bank(2, 4, size).expect("small bank");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Grid2::from_fn(size, size, |_, _| rng.random_range(-1.0..1.0));
    let spectrum = crate::mst::scatter::fft2_of_real(&noise.data, size, &bank);
    let filt = &bank.psi[4]; // j = 1, r = 0
    let mut buf: Vec<num_complex::Complex64> = spectrum
        .iter()
        .zip(filt.hat.iter())
        .map(|(&x, &h)| x * h)
        .collect();
    crate::mst::scatter::fft2_inplace(&mut buf, size, &bank, true);
    let mut out = Grid2::from_vec(size, size, buf.iter().map(|c| c.re).collect());
    let mean = out.mean();
    for v in out.data.iter_mut() {
        *v -= mean;
    }
    let std = out.variance().sqrt().max(1e-12);
    for v in out.data.iter_mut() {
        *v /= std;
    }
    out
}
