//! Command-line orchestration of the porosity pipeline.
//!
//! Exit codes: 0 success, 2 configuration error (bad flags, unresolvable
//! paths), 3 data error (malformed or empty inputs), 4 numeric divergence.

mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;
use porosynth::assembler::{self, AssembleConfig, MatchNorm};
use porosynth::gan::{self, PlausibilityBounds, PoreBank, TrainConfig};
use porosynth::metrics::{self, PoreMetrics};
use porosynth::spatial::{self, PartGeometry};
use porosynth::surface;
use porosynth::synth;
use porosynth::synthetic;
use porosynth::validate;
use porosynth::voxel::{self, Connectivity};

const EXIT_CONFIG: i32 = 2;
const EXIT_DATA: i32 = 3;
const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
struct CmdError {
    code: i32,
    message: String,
}

impl CmdError {
    fn config(message: impl Into<String>) -> CmdError {
        CmdError { code: EXIT_CONFIG, message: message.into() }
    }

    fn data(message: impl Into<String>) -> CmdError {
        CmdError { code: EXIT_DATA, message: message.into() }
    }
}

type CmdResult = Result<(), CmdError>;

fn classify(e: porosynth::Error) -> CmdError {
    use porosynth::Error as E;
    let code = match &e {
        E::Synth(synth::SynthError::Diverged(_)) => EXIT_NUMERIC,
        E::Gan(gan::GanError::Diverged(_)) => EXIT_NUMERIC,
        E::Gan(gan::GanError::AcceptanceTooLow { .. }) => EXIT_NUMERIC,
        E::Io(err) if err.kind() == std::io::ErrorKind::NotFound => EXIT_CONFIG,
        _ => EXIT_DATA,
    };
    CmdError { code, message: e.to_string() }
}

fn require_path(path: &Path, what: &str) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CmdError::config(format!("{what} path does not exist: {}", path.display())))
    }
}

fn require_file_base(base: &Path, ext: &str, what: &str) -> CmdResult {
    let p = base.with_extension(ext);
    if p.exists() {
        Ok(())
    } else {
        Err(CmdError::config(format!("{what} path does not exist: {}", p.display())))
    }
}

fn worker_count() -> usize {
    std::env::var("POROSYNTH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

#[derive(Parser)]
#[command(
    name = "porosynth",
    about = "Deconstruct, model, and regenerate porosity and surface roughness of voxelized parts"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Pipeline configuration file (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, CmdError> {
        match &self.config {
            Some(path) => {
                require_path(path, "config")?;
                PipelineConfig::load(path).map_err(CmdError::config)
            }
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic ground-truth parts (stand-in for CT data).
    SynthData(SynthDataArgs),
    /// Extract pores, metrics, and the surface map from a part volume.
    Deconstruct(DeconstructArgs),
    /// Fit the binned spatial model from a metrics table.
    Fit(FitArgs),
    /// Train the 3D GAN on bank pores and build a generated bank.
    TrainGan(TrainGanArgs),
    /// Synthesize a new surface-roughness map from a target map.
    GenSurface(GenSurfaceArgs),
    /// Assemble a part realization from model, bank, and surface.
    GenPart(GenPartArgs),
    /// Compare generated outputs against ground truth.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SynthDataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// RNG seed (mandatory for generation commands).
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Number of parts to generate.
    #[arg(long, default_value_t = 1)]
    parts: usize,
    /// Override the per-part target pore count.
    #[arg(long)]
    target_pores: Option<usize>,
}

#[derive(Args)]
struct DeconstructArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Volume base path (without .json/.raw extension).
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Angular samples for the unrolled surface map.
    #[arg(long)]
    n_theta: Option<usize>,
    /// Minimum voxels per retained pore.
    #[arg(long, default_value_t = 8)]
    min_voxels: usize,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Metrics CSV from deconstruct.
    #[arg(long)]
    metrics: PathBuf,
    /// Part geometry JSON (center_um, diameter_um, length_um).
    #[arg(long)]
    geometry: PathBuf,
    /// Bins per cross-section axis.
    #[arg(long)]
    n_bins: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainGanArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Bank directory of training pores (from deconstruct).
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// desk | full.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Generated-bank size.
    #[arg(long)]
    bank_size: Option<usize>,
}

#[derive(Args)]
struct GenSurfaceArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Target surface map base path (without extension).
    #[arg(long)]
    surface: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    ensemble: Option<usize>,
    /// Working resolution for the synthesis (square).
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct GenPartArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Spatial model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Pore bank directory.
    #[arg(long)]
    bank: PathBuf,
    /// Surface map base path for the boundary.
    #[arg(long)]
    surface: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Moving-window length in voxels.
    #[arg(long)]
    window_dz: Option<usize>,
    /// Part volume dims, voxels (comma separated; default from geometry).
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    gt_metrics: PathBuf,
    #[arg(long)]
    gen_metrics: PathBuf,
    /// Optional part volumes for projection scattering comparisons.
    #[arg(long)]
    gt_volume: Vec<PathBuf>,
    #[arg(long)]
    gen_volume: Vec<PathBuf>,
    /// Optional surface maps for the precision/separation table.
    #[arg(long)]
    gt_surface: Vec<PathBuf>,
    #[arg(long)]
    gen_surface: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn log_run(cfg: &PipelineConfig, command: &str) {
    eprintln!(
        "porosynth {command}: config hash {:016x}, gan profile {}",
        cfg.hash(),
        cfg.gan.profile
    );
}

fn cmd_synth_data(args: SynthDataArgs) -> CmdResult {
    let cfg = args.config.load()?;
    log_run(&cfg, "synth-data");
    std::fs::create_dir_all(&args.out).map_err(|e| CmdError::data(e.to_string()))?;
    for i in 0..args.parts {
        let mut scfg = cfg.synthetic.clone();
        scfg.voxel_size = cfg.voxel_size;
        scfg.seed = args.seed.wrapping_add(i as u64);
        if let Some(t) = args.target_pores {
            scfg.target_pores = t;
        }
        let part = synthetic::generate_part(&scfg);
        let base = args.out.join(format!("part_{i:03}"));
        voxel::save_volume(&part.volume, &base).map_err(|e| classify(e.into()))?;
        synthetic::save_manifest(&part.manifest, &base.with_extension("manifest.json"))
            .map_err(|e| CmdError::data(e.to_string()))?;
        eprintln!(
            "part {i}: {} pores placed, {} attempts rejected",
            part.manifest.placed.len(),
            part.manifest.rejected_attempts
        );
    }
    Ok(())
}

fn cmd_deconstruct(args: DeconstructArgs) -> CmdResult {
    let cfg = args.config.load()?;
    log_run(&cfg, "deconstruct");
    require_file_base(&args.volume, "json", "volume")?;
    let volume = voxel::load_volume(&args.volume).map_err(|e| classify(e.into()))?;
    std::fs::create_dir_all(&args.out).map_err(|e| CmdError::data(e.to_string()))?;

    let labeled = voxel::label_components(&volume, Connectivity::Full26);
    let extraction = voxel::extract_pores(&labeled, args.min_voxels);
    if extraction.pores.is_empty() {
        eprintln!("warning: no pores of at least {} voxels found", args.min_voxels);
    }
    let mut pore_metrics: Vec<PoreMetrics> = Vec::new();
    for p in &extraction.pores {
        pore_metrics.push(metrics::metrics_for(p).map_err(|e| classify(e.into()))?);
    }
    metrics::attach_nn_distances(&mut pore_metrics).map_err(|e| classify(e.into()))?;
    metrics::write_metrics_csv(&pore_metrics, &args.out.join("metrics.csv"))
        .map_err(|e| classify(e.into()))?;

    let n_theta = args.n_theta.unwrap_or(cfg.n_theta);
    let map = surface::unroll(&volume, n_theta).map_err(|e| classify(e.into()))?;
    surface::save_map(&map, &args.out.join("surface"), true).map_err(|e| classify(e.into()))?;

    // ground-truth pore bank for matching and GAN training
    let bank = PoreBank::from_ground_truth(extraction.pores.clone(), pore_metrics.clone());
    gan::save_bank(&bank, None, &args.out.join("bank")).map_err(|e| classify(e.into()))?;

    // geometry estimate for the spatial model
    let dims = volume.dims();
    let geometry = PartGeometry {
        center_um: {
            let mean = map
                .axis_center
                .iter()
                .fold((0.0, 0.0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
            (mean.0 / map.axis_center.len() as f64, mean.1 / map.axis_center.len() as f64)
        },
        diameter_um: 2.0 * map.nominal_radius,
        length_um: dims.2 as f64 * volume.voxel_size(),
    };
    std::fs::write(
        args.out.join("geometry.json"),
        serde_json::to_string_pretty(&geometry).map_err(|e| CmdError::data(e.to_string()))?,
    )
    .map_err(|e| CmdError::data(e.to_string()))?;

    let flagged = extraction.below_reliable.iter().filter(|&&b| b).count();
    let summary = serde_json::json!({
        "pores": extraction.pores.len(),
        "discarded_voxels": extraction.discarded_voxels,
        "below_reliable_volume": flagged,
        "nominal_radius_um": map.nominal_radius,
    });
    std::fs::write(
        args.out.join("deconstruct.json"),
        serde_json::to_string_pretty(&summary).unwrap(),
    )
    .map_err(|e| CmdError::data(e.to_string()))?;
    eprintln!(
        "extracted {} pores ({} below reliable volume), surface {}x{}",
        extraction.pores.len(),
        flagged,
        map.n_theta,
        map.n_z
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> CmdResult {
    let cfg = args.config.load()?;
    log_run(&cfg, "fit");
    require_path(&args.metrics, "metrics")?;
    require_path(&args.geometry, "geometry")?;
    let pore_metrics = metrics::read_metrics_csv(&args.metrics).map_err(|e| classify(e.into()))?;
    let geometry: PartGeometry = serde_json::from_str(
        &std::fs::read_to_string(&args.geometry).map_err(|e| CmdError::data(e.to_string()))?,
    )
    .map_err(|e| CmdError::data(format!("geometry: {e}")))?;
    let n_bins = args.n_bins.unwrap_or(cfg.n_bins);
    let model = spatial::fit(&pore_metrics, &geometry, n_bins).map_err(|e| classify(e.into()))?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CmdError::data(e.to_string()))?;
        }
    }
    spatial::save_model(&model, &args.out).map_err(|e| classify(e.into()))?;
    eprintln!("fitted {} bins over {} pores", model.bins.len(), pore_metrics.len());
    Ok(())
}

fn cmd_train_gan(args: TrainGanArgs) -> CmdResult {
    let mut cfg = args.config.load()?;
    if let Some(p) = &args.profile {
        cfg.gan.profile = p.clone();
    }
    if let Some(e) = args.epochs {
        cfg.gan.epochs = e;
    }
    if let Some(b) = args.bank_size {
        cfg.gan.bank_size = b;
    }
    log_run(&cfg, "train-gan");
    require_path(&args.bank, "bank")?;
    let profile = cfg.gan.profile().map_err(CmdError::config)?;
    let training_bank = gan::load_bank(&args.bank).map_err(|e| classify(e.into()))?;
    if training_bank.is_empty() {
        return Err(CmdError::data("training bank is empty".to_string()));
    }
    let side = profile.side();
    let mut cubes = Vec::new();
    let mut kept_pores = Vec::new();
    let mut kept_metrics = Vec::new();
    for (pore, m) in training_bank.pores.iter().zip(training_bank.metrics.iter()) {
        match voxel::center_in_cube(pore, side) {
            Ok(cube) => {
                cubes.push(gan::one_hot_cube(&cube));
                kept_pores.push(pore.clone());
                kept_metrics.push(m.clone());
            }
            Err(_) => continue, // pore too large for the profile cube
        }
    }
    if cubes.is_empty() {
        return Err(CmdError::data(format!("no training pores fit in a {side}^3 cube")));
    }
    eprintln!("training on {} cubes (of {} bank pores)", cubes.len(), training_bank.len());
    let train_cfg = TrainConfig {
        batch: cfg.gan.batch,
        epochs: cfg.gan.epochs,
        lr: cfg.gan.lr,
        latent: cfg.gan.latent,
        seed: args.seed,
        profile,
    };
    let (gen, _disc, trace) = gan::train(&cubes, &train_cfg).map_err(|e| classify(e.into()))?;
    std::fs::create_dir_all(&args.out).map_err(|e| CmdError::data(e.to_string()))?;
    gan::save_generator(&gen, &train_cfg, &args.out.join("generator"))
        .map_err(|e| classify(e.into()))?;
    std::fs::write(
        args.out.join("training_trace.json"),
        serde_json::to_string_pretty(&trace).unwrap(),
    )
    .map_err(|e| CmdError::data(e.to_string()))?;

    let bounds = PlausibilityBounds::from_population(&kept_pores, &kept_metrics, side);
    std::fs::write(
        args.out.join("plausibility.json"),
        serde_json::to_string_pretty(&bounds).unwrap(),
    )
    .map_err(|e| CmdError::data(e.to_string()))?;
    let bank = gan::build_bank(
        &gen,
        cfg.gan.bank_size,
        &bounds,
        cfg.voxel_size,
        args.seed,
        worker_count(),
    )
    .map_err(|e| classify(e.into()))?;
    eprintln!(
        "bank: {} pores at acceptance rate {:.3}",
        bank.len(),
        bank.acceptance_rate
    );
    gan::save_bank(&bank, Some(profile), &args.out.join("bank")).map_err(|e| classify(e.into()))?;
    Ok(())
}

fn cmd_gen_surface(args: GenSurfaceArgs) -> CmdResult {
    let mut cfg = args.config.load()?;
    if let Some(i) = args.iterations {
        cfg.synth.iterations = i;
    }
    if let Some(g) = args.ensemble {
        cfg.synth.ensemble = g;
    }
    if let Some(s) = args.size {
        cfg.synth.size = s;
    }
    log_run(&cfg, "gen-surface");
    require_file_base(&args.surface, "json", "surface")?;
    let target = surface::load_map(&args.surface).map_err(|e| classify(e.into()))?;
    let synth_cfg = cfg.synth.to_config(args.seed);
    let (map, run) = synth::synthesize(&target, &synth_cfg).map_err(|e| classify(e.into()))?;
    let map = synth::postprocess(&map).map_err(|e| classify(e.into()))?;
    synth::write_run_artifacts(&map, &run, &target, &synth_cfg, &args.out)
        .map_err(|e| classify(e.into()))?;
    eprintln!(
        "synthesis: {} iterations, loss {:.3e} -> {:.3e}",
        run.iterations_run,
        run.loss_trace.first().copied().unwrap_or(f64::NAN),
        run.loss_trace.iter().cloned().fold(f64::INFINITY, f64::min)
    );
    Ok(())
}

fn cmd_gen_part(args: GenPartArgs) -> CmdResult {
    let mut cfg = args.config.load()?;
    if let Some(w) = args.window_dz {
        cfg.window_dz = w;
    }
    log_run(&cfg, "gen-part");
    require_path(&args.model, "model")?;
    require_path(&args.bank, "bank")?;
    require_file_base(&args.surface, "json", "surface")?;

    let model = spatial::load_model(&args.model).map_err(|e| classify(e.into()))?;
    let bank = gan::load_bank(&args.bank).map_err(|e| classify(e.into()))?;
    let map = surface::load_map(&args.surface).map_err(|e| classify(e.into()))?;
    let norm = MatchNorm::from_metrics(&bank.metrics);

    let dims = match &args.dims {
        Some(v) if v.len() == 3 => (v[0], v[1], v[2]),
        Some(_) => return Err(CmdError::config("--dims needs three values".to_string())),
        None => {
            let span = 2.0 * (model.geometry.diameter_um / 2.0 + 6.0 * cfg.voxel_size);
            let side = (span / cfg.voxel_size).ceil() as usize;
            let nz = (model.geometry.length_um / cfg.voxel_size).round() as usize;
            (side, side, nz)
        }
    };
    let boundary =
        surface::reroll(&map, dims, cfg.voxel_size).map_err(|e| classify(e.into()))?;
    let assemble = AssembleConfig {
        window_dz_voxels: cfg.window_dz,
        retries: 100,
        seed: args.seed,
    };
    let mut part = assembler::traverse(&model, &bank, &norm, &boundary, &assemble)
        .map_err(|e| classify(e.into()))?;
    assembler::clip_to_boundary(&mut part, &boundary);

    std::fs::create_dir_all(&args.out).map_err(|e| CmdError::data(e.to_string()))?;
    voxel::save_volume(&part.volume, &args.out.join("part")).map_err(|e| classify(e.into()))?;
    assembler::write_ledger_csv(&part, &args.out.join("ledger.csv"))
        .map_err(|e| classify(e.into()))?;
    // extracted metrics of the realized part
    let labeled = voxel::label_components(&part.volume, Connectivity::Full26);
    let ex = voxel::extract_pores(&labeled, 8);
    let mut ms: Vec<PoreMetrics> = Vec::new();
    for p in &ex.pores {
        ms.push(metrics::metrics_for(p).map_err(|e| classify(e.into()))?);
    }
    metrics::attach_nn_distances(&mut ms).map_err(|e| classify(e.into()))?;
    metrics::write_metrics_csv(&ms, &args.out.join("metrics.csv"))
        .map_err(|e| classify(e.into()))?;
    eprintln!(
        "assembled part: {} placed, {} components after clip",
        part.placed_count(),
        ex.pores.len()
    );
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> CmdResult {
    let cfg = args.config.load()?;
    log_run(&cfg, "validate");
    require_path(&args.gt_metrics, "gt-metrics")?;
    require_path(&args.gen_metrics, "gen-metrics")?;
    let gt = metrics::read_metrics_csv(&args.gt_metrics).map_err(|e| classify(e.into()))?;
    let gen = metrics::read_metrics_csv(&args.gen_metrics).map_err(|e| classify(e.into()))?;
    if gt.is_empty() || gen.is_empty() {
        return Err(CmdError::data("metrics tables must be nonempty".to_string()));
    }
    let mut gt_parts = Vec::new();
    for p in &args.gt_volume {
        require_file_base(p, "json", "gt-volume")?;
        gt_parts.push(voxel::load_volume(p).map_err(|e| classify(e.into()))?);
    }
    let mut gen_parts = Vec::new();
    for p in &args.gen_volume {
        require_file_base(p, "json", "gen-volume")?;
        gen_parts.push(voxel::load_volume(p).map_err(|e| classify(e.into()))?);
    }
    let mut gt_surfaces = Vec::new();
    for p in &args.gt_surface {
        require_file_base(p, "json", "gt-surface")?;
        gt_surfaces.push(surface::load_map(p).map_err(|e| classify(e.into()))?);
    }
    let mut gen_surfaces = Vec::new();
    for p in &args.gen_surface {
        require_file_base(p, "json", "gen-surface")?;
        gen_surfaces.push(surface::load_map(p).map_err(|e| classify(e.into()))?);
    }
    let report = validate::compare(
        &gt,
        &gen,
        &gt_parts.iter().collect::<Vec<_>>(),
        &gen_parts.iter().collect::<Vec<_>>(),
        &gt_surfaces.iter().collect::<Vec<_>>(),
        &gen_surfaces.iter().collect::<Vec<_>>(),
    )
    .map_err(|e| classify(e.into()))?;
    validate::write_report(&report, &args.out).map_err(|e| CmdError::data(e.to_string()))?;
    for e in &report.univariate {
        eprintln!("KS {}: {:.4}", e.metric, e.ks);
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::SynthData(a) => cmd_synth_data(a),
        Cmd::Deconstruct(a) => cmd_deconstruct(a),
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::TrainGan(a) => cmd_train_gan(a),
        Cmd::GenSurface(a) => cmd_gen_surface(a),
        Cmd::GenPart(a) => cmd_gen_part(a),
        Cmd::Validate(a) => cmd_validate(a),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
