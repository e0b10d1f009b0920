//! 3D convolutional GAN over centered pore cubes, plus the plausibility
//! filter and the generated-pore bank.
//!
//! The generator projects a latent vector to a 2^3 base volume and doubles
//! the side with every transposed convolution (kernel 4, stride 2, pad 1);
//! the discriminator mirrors it with strided convolutions. The desk profile
//! shrinks the cube to 16^3 and divides channel counts by 8 so training and
//! bank construction run on one CPU core.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, AdamParams, AdamState, Graph, Real, Tensor, Var,
};
use crate::metrics::{self, PoreMetrics};
use crate::voxel::{self, Phase, Pore, VoxelVolume};

#[derive(Debug, thiserror::Error)]
pub enum GanError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("dataset cube shape {got} does not match profile side {want}")]
    DatasetShape { got: usize, want: usize },
    #[error("loss became non-finite in epoch {0}")]
    Diverged(usize),
    #[error("bank acceptance rate {rate:.4} below 1% after {drawn} draws")]
    AcceptanceTooLow { rate: f64, drawn: usize },
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Voxel(#[from] crate::voxel::VoxelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Network size profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    /// 64^3 cubes, full channel counts (the published architecture).
    Full,
    /// 16^3 cubes, channels / 8; the default test target.
    Desk,
}

impl Profile {
    pub fn side(&self) -> usize {
        match self {
            Profile::Full => 64,
            Profile::Desk => 16,
        }
    }

    pub fn channel_div(&self) -> usize {
        match self {
            Profile::Full => 1,
            Profile::Desk => 8,
        }
    }

    /// Transposed-conv layers needed to reach `side` from the 2^3 base.
    fn n_layers(&self) -> usize {
        (self.side().trailing_zeros() - 1) as usize
    }
}

pub const LATENT_DIM: usize = 100;
const KERNEL: usize = 4;
const BN_EPS: Real = 1e-5;
const LOG_EPS: Real = 1e-7;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub latent: usize,
    pub seed: u64,
    pub profile: Profile,
}

impl TrainConfig {
    /// Published hyperparameters at full scale.
    pub fn full(seed: u64) -> TrainConfig {
        TrainConfig { batch: 32, epochs: 40, lr: 2e-5, latent: LATENT_DIM, seed, profile: Profile::Full }
    }

    /// Desk profile: same batch/epochs, higher lr (a few hundred Adam steps
    /// at 2e-5 would leave the weights at their initialization).
    pub fn desk(seed: u64) -> TrainConfig {
        TrainConfig { batch: 32, epochs: 40, lr: 1e-3, latent: LATENT_DIM, seed, profile: Profile::Desk }
    }
}

struct GenLayer {
    w: Tensor, // (Cin, Cout, 4, 4, 4)
    bn_gamma: Option<Tensor>,
    bn_beta: Option<Tensor>,
}

/// Latent -> (2, S, S, S) probability cube (softmax over the two channels).
pub struct GeneratorNet {
    pub profile: Profile,
    pub latent: usize,
    proj_w: Tensor, // (latent, C0 * 8)
    base_channels: usize,
    layers: Vec<GenLayer>,
}

/// (2, S, S, S) -> scalar in (0, 1).
pub struct DiscriminatorNet {
    pub profile: Profile,
    layers: Vec<Tensor>, // (Cout, Cin, 4, 4, 4) each
}

fn gen_channel_plan(profile: Profile) -> (usize, Vec<usize>) {
    let div = profile.channel_div();
    let n = profile.n_layers();
    let head = 512 / div;
    let mut out = Vec::with_capacity(n);
    for i in 0..n - 1 {
        out.push((head >> i).max(2));
    }
    out.push(2);
    (2 * head, out) // projection channels = 1024 / div
}

fn disc_channel_plan(profile: Profile) -> Vec<usize> {
    let div = profile.channel_div();
    let n = profile.n_layers();
    let base = (16 / div).max(1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n - 1 {
        out.push(base << i);
    }
    out.push(1);
    out
}

impl GeneratorNet {
    pub fn new(profile: Profile, latent: usize, seed: u64) -> GeneratorNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c0, plan) = gen_channel_plan(profile);
        let proj_w = Tensor::randn(&[latent, c0 * 8], 0.02, &mut rng);
        let mut layers = Vec::new();
        let mut cin = c0;
        for (i, &cout) in plan.iter().enumerate() {
            let w = Tensor::randn(&[cin, cout, KERNEL, KERNEL, KERNEL], 0.02, &mut rng);
            let last = i + 1 == plan.len();
            let (bn_gamma, bn_beta) = if last {
                (None, None)
            } else {
                let mut gamma = Tensor::randn(&[cout], 0.02, &mut rng);
                for v in gamma.data.iter_mut() {
                    *v += 1.0;
                }
                (Some(gamma), Some(Tensor::zeros(&[cout])))
            };
            layers.push(GenLayer { w, bn_gamma, bn_beta });
            cin = cout;
        }
        GeneratorNet { profile, latent, proj_w, base_channels: c0, layers }
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.proj_w];
        for l in &self.layers {
            out.push(&l.w);
            if let Some(g) = &l.bn_gamma {
                out.push(g);
            }
            if let Some(b) = &l.bn_beta {
                out.push(b);
            }
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.proj_w];
        for l in &mut self.layers {
            out.push(&mut l.w);
            if let Some(g) = &mut l.bn_gamma {
                out.push(g);
            }
            if let Some(b) = &mut l.bn_beta {
                out.push(b);
            }
        }
        out
    }

    /// Bind parameters into a graph (trainable or frozen) and run the
    /// forward pass on a (B, latent) node.
    pub fn forward(
        &self,
        g: &mut Graph,
        z: Var,
        trainable: bool,
    ) -> Result<(Var, Vec<Var>), GanError> {
        let bind = |g: &mut Graph, t: &Tensor| if trainable { g.param(t.clone()) } else { g.leaf(t.clone()) };
        let mut param_vars = Vec::new();
        let b = g.value(z).shape[0];
        let wproj = bind(g, &self.proj_w);
        param_vars.push(wproj);
        let projected = g.linear(z, wproj)?;
        let mut x = g.reshape(projected, &[b, self.base_channels, 2, 2, 2])?;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = bind(g, &layer.w);
            param_vars.push(w);
            x = g.conv3d_transpose(x, w, 2, 1)?;
            if let (Some(gamma), Some(beta)) = (&layer.bn_gamma, &layer.bn_beta) {
                let gv = bind(g, gamma);
                let bv = bind(g, beta);
                param_vars.push(gv);
                param_vars.push(bv);
                x = g.batchnorm(x, gv, bv, BN_EPS)?;
                x = g.relu(x);
            }
            debug_assert!(i < self.layers.len());
        }
        let out = g.softmax_channel(x)?;
        Ok((out, param_vars))
    }
}

impl DiscriminatorNet {
    pub fn new(profile: Profile, seed: u64) -> DiscriminatorNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = disc_channel_plan(profile);
        let mut layers = Vec::new();
        let mut cin = 2usize;
        for &cout in &plan {
            layers.push(Tensor::randn(&[cout, cin, KERNEL, KERNEL, KERNEL], 0.02, &mut rng));
            cin = cout;
        }
        DiscriminatorNet { profile, layers }
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().collect()
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().collect()
    }

    /// (B, 2, S, S, S) -> (B, 1) confidence in (0, 1).
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        trainable: bool,
    ) -> Result<(Var, Vec<Var>), GanError> {
        let mut param_vars = Vec::new();
        let mut h = x;
        let n = self.layers.len();
        for (i, w) in self.layers.iter().enumerate() {
            let wv = if trainable { g.param(w.clone()) } else { g.leaf(w.clone()) };
            param_vars.push(wv);
            h = g.conv3d(h, wv, 2, 1)?;
            if i + 1 < n {
                h = g.leaky_relu(h, 0.2);
            }
        }
        let pooled = g.mean_spatial(h)?;
        Ok((g.sigmoid(pooled), param_vars))
    }
}

/// Per-epoch mean discriminator/generator losses.
#[derive(Debug, Clone, Serialize)]
pub struct TrainTrace {
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
}

fn batch_tensor(cubes: &[&Tensor]) -> Tensor {
    let shape = &cubes[0].shape;
    let mut out_shape = vec![cubes.len()];
    out_shape.extend_from_slice(shape);
    let mut data = Vec::with_capacity(cubes.len() * cubes[0].numel());
    for c in cubes {
        data.extend_from_slice(&c.data);
    }
    Tensor::from_vec(&out_shape, data)
}

fn sample_latents(batch: usize, latent: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(&[batch, latent], 1.0, rng)
}

/// - mean log(clamp(x)) over a (B, 1) tensor.
fn neg_mean_log(g: &mut Graph, x: Var) -> Result<Var, GanError> {
    let c = g.clamp_min(x, LOG_EPS);
    let l = g.log(c);
    let m = g.mean_all(l);
    Ok(g.scale(m, -1.0))
}

/// Alternating non-saturating GAN training; deterministic for a fixed seed
/// on a single thread.
pub fn train(
    dataset: &[Tensor],
    cfg: &TrainConfig,
) -> Result<(GeneratorNet, DiscriminatorNet, TrainTrace), GanError> {
    if dataset.is_empty() {
        return Err(GanError::EmptyDataset);
    }
    let side = cfg.profile.side();
    for cube in dataset {
        if cube.shape != [2, side, side, side] {
            return Err(GanError::DatasetShape { got: cube.shape.get(1).copied().unwrap_or(0), want: side });
        }
    }
    let mut gen = GeneratorNet::new(cfg.profile, cfg.latent, cfg.seed);
    let mut disc = DiscriminatorNet::new(cfg.profile, cfg.seed.wrapping_add(1));
    let adam = AdamParams { lr: cfg.lr as Real, beta1: 0.5, beta2: 0.999, eps: 1e-8 };
    let mut g_opt = AdamState::new(adam, &gen.param_tensors());
    let mut d_opt = AdamState::new(adam, &disc.param_tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let mut trace = TrainTrace { d_loss: Vec::new(), g_loss: Vec::new() };
    let batch = cfg.batch.min(dataset.len());
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let mut d_sum = 0.0f64;
        let mut g_sum = 0.0f64;
        let mut batches = 0.0f64;
        for chunk in order.chunks(batch) {
            if chunk.len() < batch {
                break; // keep batch statistics comparable
            }
            // discriminator step: fakes detached (generator run frozen)
            let fake = {
                let mut g = Graph::new();
                let z = g.leaf(sample_latents(batch, cfg.latent, &mut rng));
                let (out, _) = gen.forward(&mut g, z, false)?;
                g.value(out).clone()
            };
            let real_refs: Vec<&Tensor> = chunk.iter().map(|&i| &dataset[i]).collect();
            let d_loss_val = {
                let mut g = Graph::new();
                let real = g.leaf(batch_tensor(&real_refs));
                let fake_v = g.leaf(fake);
                let (d_real, d_params) = disc.forward(&mut g, real, true)?;
                // reuse the same bound parameters for the fake pass
                let mut h = fake_v;
                let n = disc.layers.len();
                for (i, &wv) in d_params.iter().enumerate() {
                    h = g.conv3d(h, wv, 2, 1)?;
                    if i + 1 < n {
                        h = g.leaky_relu(h, 0.2);
                    }
                }
                let pooled = g.mean_spatial(h)?;
                let d_fake = g.sigmoid(pooled);

                let real_term = neg_mean_log(&mut g, d_real)?;
                let one_minus = {
                    let neg = g.scale(d_fake, -1.0);
                    g.add_scalar(neg, 1.0)
                };
                let fake_term = neg_mean_log(&mut g, one_minus)?;
                let loss = g.add(real_term, fake_term)?;
                let value = g.value(loss).item() as f64;
                g.backward(loss)?;
                let grads: Vec<Option<Vec<Real>>> =
                    d_params.iter().map(|&v| g.grad(v).map(|s| s.to_vec())).collect();
                let mut tensors = disc.param_tensors_mut();
                let grad_refs: Vec<Option<&[Real]>> =
                    grads.iter().map(|o| o.as_deref()).collect();
                d_opt.step(&mut tensors, &grad_refs);
                value
            };
            // generator step: non-saturating loss through a frozen copy of D
            let g_loss_val = {
                let mut g = Graph::new();
                let z = g.leaf(sample_latents(batch, cfg.latent, &mut rng));
                let (fake, g_params) = gen.forward(&mut g, z, true)?;
                let (d_fake, _) = disc.forward(&mut g, fake, false)?;
                let loss = neg_mean_log(&mut g, d_fake)?;
                let value = g.value(loss).item() as f64;
                g.backward(loss)?;
                let grads: Vec<Option<Vec<Real>>> =
                    g_params.iter().map(|&v| g.grad(v).map(|s| s.to_vec())).collect();
                let mut tensors = gen.param_tensors_mut();
                let grad_refs: Vec<Option<&[Real]>> =
                    grads.iter().map(|o| o.as_deref()).collect();
                g_opt.step(&mut tensors, &grad_refs);
                value
            };
            if !d_loss_val.is_finite() || !g_loss_val.is_finite() {
                return Err(GanError::Diverged(epoch));
            }
            d_sum += d_loss_val;
            g_sum += g_loss_val;
            batches += 1.0;
        }
        trace.d_loss.push(d_sum / batches.max(1.0));
        trace.g_loss.push(g_sum / batches.max(1.0));
    }
    Ok((gen, disc, trace))
}

/// Forward a latent batch through the generator without gradients.
pub fn generate(gen: &GeneratorNet, z: &Tensor) -> Result<Tensor, GanError> {
    let mut g = Graph::new();
    let zv = g.leaf(z.clone());
    let (out, _) = gen.forward(&mut g, zv, false)?;
    Ok(g.value(out).clone())
}

/// Why a generated cube did not become a bank pore.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    Empty,
    TooSmall { voxels: usize },
    TouchesFace,
    OutsideEnvelope { metric: &'static str },
}

/// Threshold the pore-probability channel, keep the largest connected
/// component, reject fragments under the size floor.
pub fn binarize_pore(cube: &Tensor, voxel_size: f64) -> Result<Pore, RejectReason> {
    assert_eq!(cube.shape.len(), 4, "expected (2, S, S, S) cube");
    assert_eq!(cube.shape[0], 2);
    let s = cube.shape[1];
    let m = s * s * s;
    let mut data = vec![Phase::Solid as u8; m];
    for i in 0..m {
        if cube.data[m + i] > 0.5 {
            data[i] = Phase::Pore as u8;
        }
    }
    let vol = VoxelVolume::new((s, s, s), voxel_size, data).expect("valid cube");
    let labeled = voxel::label_components(&vol, voxel::Connectivity::Full26);
    if labeled.n_components() == 0 {
        return Err(RejectReason::Empty);
    }
    let extraction = voxel::extract_pores(&labeled, 1);
    let largest = extraction
        .pores
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.voxel_count()
                .cmp(&b.voxel_count())
                .then(ib.cmp(ia)) // tie: lowest label wins
        })
        .map(|(_, p)| p.clone())
        .expect("components exist");
    if largest.voxel_count() < voxel::MIN_PORE_VOXELS {
        return Err(RejectReason::TooSmall { voxels: largest.voxel_count() });
    }
    Ok(largest)
}

/// Quantile envelope of the ground-truth population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlausibilityBounds {
    pub volume_um3: (f64, f64),
    pub anisotropy: (f64, f64),
    pub extent_um: (f64, f64),
    pub cube_side: usize,
    pub reject_face_touching: bool,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let f = pos - lo as f64;
    sorted[lo] * (1.0 - f) + sorted[hi] * f
}

impl PlausibilityBounds {
    /// [q0.1%, q99.9%] envelope over volume, anisotropy, and bbox extent.
    pub fn from_population(pores: &[Pore], metrics: &[PoreMetrics], cube_side: usize) -> PlausibilityBounds {
        let mut volumes: Vec<f64> = metrics.iter().map(|m| m.volume_um3).collect();
        let mut anis: Vec<f64> = metrics.iter().map(|m| m.anisotropy).collect();
        let mut extents: Vec<f64> = pores
            .iter()
            .map(|p| {
                let e = p.extent();
                e.0.max(e.1).max(e.2) as f64 * p.voxel_size
            })
            .collect();
        for v in [&mut volumes, &mut anis, &mut extents] {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        let env = |v: &[f64]| (quantile(v, 0.001), quantile(v, 0.999));
        PlausibilityBounds {
            volume_um3: env(&volumes),
            anisotropy: env(&anis),
            extent_um: env(&extents),
            cube_side,
            reject_face_touching: true,
        }
    }

    /// Filter that accepts any connected pore (used for ground-truth banks
    /// and plumbing tests).
    pub fn permissive() -> PlausibilityBounds {
        PlausibilityBounds {
            volume_um3: (0.0, f64::MAX),
            anisotropy: (0.0, 1.0),
            extent_um: (0.0, f64::MAX),
            cube_side: usize::MAX,
            reject_face_touching: false,
        }
    }

    /// Accept or reject one candidate pore living in a generation cube.
    pub fn check(&self, pore: &Pore) -> Result<PoreMetrics, RejectReason> {
        let ext = pore.extent();
        let s = self.cube_side;
        let (ox, oy, oz) = pore.bbox_origin;
        if self.reject_face_touching
            && (ox == 0
                || oy == 0
                || oz == 0
                || ox + ext.0 >= s
                || oy + ext.1 >= s
                || oz + ext.2 >= s)
        {
            return Err(RejectReason::TouchesFace);
        }
        let m = metrics::metrics_for(pore).map_err(|_| RejectReason::Empty)?;
        if m.volume_um3 < self.volume_um3.0 || m.volume_um3 > self.volume_um3.1 {
            return Err(RejectReason::OutsideEnvelope { metric: "volume" });
        }
        if m.anisotropy < self.anisotropy.0 || m.anisotropy > self.anisotropy.1 {
            return Err(RejectReason::OutsideEnvelope { metric: "anisotropy" });
        }
        let extent = ext.0.max(ext.1).max(ext.2) as f64 * pore.voxel_size;
        if extent < self.extent_um.0 || extent > self.extent_um.1 {
            return Err(RejectReason::OutsideEnvelope { metric: "extent" });
        }
        Ok(m)
    }
}

/// Where a bank's pores came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Generated,
    GroundTruth,
}

/// Plausibility-filtered pore collection with precomputed metrics.
#[derive(Debug, Clone)]
pub struct PoreBank {
    pub pores: Vec<Pore>,
    pub metrics: Vec<PoreMetrics>,
    pub provenance: Provenance,
    pub seed: u64,
    pub acceptance_rate: f64,
}

impl PoreBank {
    pub fn from_ground_truth(pores: Vec<Pore>, metrics: Vec<PoreMetrics>) -> PoreBank {
        PoreBank { pores, metrics, provenance: Provenance::GroundTruth, seed: 0, acceptance_rate: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.pores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pores.is_empty()
    }
}

const BANK_BATCH: usize = 32;

fn bank_batch(
    gen: &GeneratorNet,
    bounds: &PlausibilityBounds,
    voxel_size: f64,
    seed: u64,
    batch_index: u64,
) -> Result<Vec<(Pore, PoreMetrics)>, GanError> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ batch_index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let z = sample_latents(BANK_BATCH, gen.latent, &mut rng);
    let cubes = generate(gen, &z)?;
    let s = gen.profile.side();
    let per = 2 * s * s * s;
    let mut out = Vec::new();
    for b in 0..BANK_BATCH {
        let cube = Tensor::from_vec(&[2, s, s, s], cubes.data[b * per..(b + 1) * per].to_vec());
        if let Ok(pore) = binarize_pore(&cube, voxel_size) {
            if let Ok(m) = bounds.check(&pore) {
                out.push((pore, m));
            }
        }
    }
    Ok(out)
}

/// Draw latents until `n` pores pass the filter. Batches are seeded by
/// index, so results are identical for any worker count; workers > 1 fans
/// batches out across threads and merges in batch order.
pub fn build_bank(
    gen: &GeneratorNet,
    n: usize,
    bounds: &PlausibilityBounds,
    voxel_size: f64,
    seed: u64,
    workers: usize,
) -> Result<PoreBank, GanError> {
    let mut pores = Vec::with_capacity(n);
    let mut metrics = Vec::with_capacity(n);
    let mut drawn = 0usize;
    let mut next_batch = 0u64;
    let workers = workers.max(1);
    while pores.len() < n {
        let round: Vec<u64> = (0..workers as u64).map(|k| next_batch + k).collect();
        next_batch += workers as u64;
        let mut results: Vec<Vec<(Pore, PoreMetrics)>> = Vec::new();
        if workers == 1 {
            results.push(bank_batch(gen, bounds, voxel_size, seed, round[0])?);
        } else {
            let collected: Vec<Result<Vec<(Pore, PoreMetrics)>, GanError>> =
                std::thread::scope(|scope| {
                    let handles: Vec<_> = round
                        .iter()
                        .map(|&bi| {
                            scope.spawn(move || bank_batch(gen, bounds, voxel_size, seed, bi))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("bank worker")).collect()
                });
            for r in collected {
                results.push(r?);
            }
        }
        for batch in results {
            drawn += BANK_BATCH;
            for (p, m) in batch {
                if pores.len() < n {
                    pores.push(p);
                    metrics.push(m);
                }
            }
        }
        if pores.len() < n && drawn >= 10 * n.max(1) {
            let rate = pores.len() as f64 / drawn as f64;
            if rate < 0.01 {
                return Err(GanError::AcceptanceTooLow { rate, drawn });
            }
        }
    }
    let acceptance_rate = if drawn == 0 { 1.0 } else { pores.len() as f64 / drawn as f64 };
    Ok(PoreBank { pores, metrics, provenance: Provenance::Generated, seed, acceptance_rate })
}

#[derive(Serialize, Deserialize)]
struct BankManifest {
    seed: u64,
    profile: Option<Profile>,
    provenance: Provenance,
    acceptance_rate: f64,
    count: usize,
    voxel_size: f64,
}

/// Bank directory: manifest.json + metrics.csv + pores/pore_NNNNN.{json,raw}.
pub fn save_bank(bank: &PoreBank, profile: Option<Profile>, dir: &Path) -> Result<(), GanError> {
    std::fs::create_dir_all(dir.join("pores"))?;
    let voxel_size = bank.pores.first().map(|p| p.voxel_size).unwrap_or(1.0);
    let manifest = BankManifest {
        seed: bank.seed,
        profile,
        provenance: bank.provenance,
        acceptance_rate: bank.acceptance_rate,
        count: bank.pores.len(),
        voxel_size,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    metrics::write_metrics_csv(&bank.metrics, &dir.join("metrics.csv"))?;
    for (i, pore) in bank.pores.iter().enumerate() {
        let ext = pore.extent();
        let mut vol = VoxelVolume::solid(ext, pore.voxel_size);
        for &(x, y, z) in &pore.voxels {
            vol.set_phase(x as usize, y as usize, z as usize, Phase::Pore);
        }
        voxel::save_volume(&vol, &dir.join("pores").join(format!("pore_{i:05}")))?;
    }
    Ok(())
}

pub fn load_bank(dir: &Path) -> Result<PoreBank, GanError> {
    let manifest: BankManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut pores = Vec::with_capacity(manifest.count);
    let mut metrics_v = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let vol = voxel::load_volume(&dir.join("pores").join(format!("pore_{i:05}")))?;
        let labeled = voxel::label_components(&vol, voxel::Connectivity::Full26);
        let ex = voxel::extract_pores(&labeled, 1);
        let pore = ex
            .pores
            .into_iter()
            .max_by_key(|p| p.voxel_count())
            .ok_or_else(|| GanError::Io(std::io::Error::other(format!("pore_{i:05} is empty"))))?;
        metrics_v.push(metrics::metrics_for(&pore)?);
        pores.push(pore);
    }
    Ok(PoreBank {
        pores,
        metrics: metrics_v,
        provenance: manifest.provenance,
        seed: manifest.seed,
        acceptance_rate: manifest.acceptance_rate,
    })
}

/// Save generator weights in the shared checkpoint format.
pub fn save_generator(gen: &GeneratorNet, cfg: &TrainConfig, base: &Path) -> Result<(), GanError> {
    let mut tensors: Vec<(String, &Tensor)> = vec![("proj_w".into(), &gen.proj_w)];
    let mut ops = vec!["linear".to_string(), "reshape".to_string()];
    for (i, l) in gen.layers.iter().enumerate() {
        tensors.push((format!("layer{i}_w"), &l.w));
        ops.push("conv3d_transpose k4 s2 p1".into());
        if let (Some(g), Some(b)) = (&l.bn_gamma, &l.bn_beta) {
            tensors.push((format!("layer{i}_bn_gamma"), g));
            tensors.push((format!("layer{i}_bn_beta"), b));
            ops.push("batchnormed relu".into());
        }
    }
    ops.push("softmax_channel".into());
    let named: Vec<(&str, &Tensor)> = tensors.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    save_checkpoint(
        base,
        &ops,
        serde_json::json!({
            "profile": cfg.profile,
            "latent": cfg.latent,
            "batch": cfg.batch,
            "epochs": cfg.epochs,
            "lr": cfg.lr,
            "seed": cfg.seed,
        }),
        &named,
    )?;
    Ok(())
}

pub fn load_generator(base: &Path) -> Result<GeneratorNet, GanError> {
    let ck = load_checkpoint(base)?;
    let profile: Profile = serde_json::from_value(ck.hyperparams["profile"].clone())?;
    let latent = ck.hyperparams["latent"].as_u64().unwrap_or(LATENT_DIM as u64) as usize;
    let mut gen = GeneratorNet::new(profile, latent, 0);
    gen.proj_w = ck.tensor("proj_w")?.clone();
    for (i, l) in gen.layers.iter_mut().enumerate() {
        l.w = ck.tensor(&format!("layer{i}_w"))?.clone();
        if l.bn_gamma.is_some() {
            l.bn_gamma = Some(ck.tensor(&format!("layer{i}_bn_gamma"))?.clone());
            l.bn_beta = Some(ck.tensor(&format!("layer{i}_bn_beta"))?.clone());
        }
    }
    Ok(gen)
}

/// One-hot (2, S, S, S) float cube from a binary pore volume.
pub fn one_hot_cube(volume: &VoxelVolume) -> Tensor {
    let (nx, ny, nz) = volume.dims();
    assert!(nx == ny && ny == nz, "cube expected");
    let m = nx * ny * nz;
    let mut data = vec![0.0 as Real; 2 * m];
    for i in 0..m {
        if volume.phase_raw(i) == Phase::Pore as u8 {
            data[m + i] = 1.0;
        } else {
            data[i] = 1.0;
        }
    }
    Tensor::from_vec(&[2, nx, ny, nz], data)
}
