use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use roiml::container::{CodedContainer, Mode};
use roiml::hierarchy::{toy_hyperprior, toy_model, TensorMap};
use roiml::manifest::{format_manifest, load_registry, ManifestEntry, ModelKind};
use roiml::par::Parallelism;
use roiml::pnm::Pnm;
use roiml::roi::{roi_compress, roi_decompress, ModelChoice, RoiOptions};
use roiml::segpost::curves::parse_similarity_csv;
use roiml::segpost::{acceptance_curve, segment, ForestConfig, NeighSpec, SegmentConfig};
use roiml::weights::{write_file, ModelFile};

#[derive(Parser)]
#[command(name = "roiml", version, about = "Region-of-interest image codec for blade inspection imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    /// Lossy blade and background with separate models.
    LossyLossy,
    /// Lossless blade, lossy background.
    LossyLossless,
    /// One lossy model for the whole image.
    Lossy,
    /// Lossless whole image.
    Lossless,
}

impl CliMode {
    fn mode(self) -> Mode {
        match self {
            CliMode::LossyLossy => Mode::LossyLossy,
            CliMode::LossyLossless => Mode::LossyLossless,
            CliMode::Lossy => Mode::SingleLossy,
            CliMode::Lossless => Mode::SingleLossless,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compress a PPM image into an RMLC container.
    Compress {
        #[arg(long)]
        input: PathBuf,
        /// Blade mask (PGM, nonzero = blade). Without it a single-region mode is used.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "lossy-lossless")]
        mode: CliMode,
        /// Model manifest.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        blade_model: u16,
        #[arg(long)]
        bg_model: Option<u16>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Decompress an RMLC container into a PPM image.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Post-process a network probability map into a blade mask.
    Segment {
        /// Probability map (8- or 16-bit PGM).
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Directory of peer images `NAME.ppm` with probability maps `NAME.pgm`.
        #[arg(long)]
        peers: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        neigh_n: usize,
        #[arg(long, default_value_t = 1)]
        neigh_d: usize,
        #[arg(long, default_value_t = roiml::segpost::forest::DEFAULT_TAU_BU)]
        tau_bu: f32,
        #[arg(long, default_value_t = roiml::segpost::forest::DEFAULT_TAU_RF)]
        tau_rf: f32,
        #[arg(long)]
        output: PathBuf,
    },
    /// Acceptance-ratio curve of a similarity list.
    EvalCurves {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write untrained toy models and a manifest.
    ToyModels {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 32)]
        patch_size: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_image(path: &Path) -> Result<TensorMap> {
    let pnm = Pnm::read(path).with_context(|| format!("reading {}", path.display()))?;
    if pnm.channels != 3 || pnm.maxval != 255 {
        bail!("{}: expected an 8-bit RGB PPM", path.display());
    }
    Ok(pnm.to_tensor()?)
}

#[allow(clippy::too_many_arguments)]
fn compress(
    input: &Path,
    mask: Option<&Path>,
    mode: CliMode,
    models: &Path,
    blade: u16,
    bg: Option<u16>,
    parallel: usize,
    seed: u64,
    output: &Path,
) -> Result<()> {
    let registry = load_registry(models).with_context(|| format!("loading {}", models.display()))?;
    let image = read_image(input)?;
    let mask = match mask {
        Some(p) => Some(Pnm::read(p).with_context(|| format!("reading {}", p.display()))?.to_mask()?),
        None => None,
    };
    let mut mode = mode.mode();
    if mask.is_none() && mode.has_mask() {
        mode = if mode.is_lossless() { Mode::SingleLossless } else { Mode::SingleLossy };
        eprintln!("no mask given; coding the whole image as one region");
    }
    let background = match (mode.has_mask(), bg) {
        (true, Some(id)) => id,
        (true, None) => bail!("--bg-model is required with a mask"),
        (false, _) => blade,
    };
    let start = Instant::now();
    let enc = roi_compress(
        &image,
        mask.as_ref(),
        mode,
        &registry,
        ModelChoice { blade, background },
        RoiOptions {
            parallelism: Parallelism::from_count(parallel),
            seed,
        },
    )?;
    let bytes = enc.container.to_bytes();
    std::fs::write(output, &bytes).with_context(|| format!("writing {}", output.display()))?;
    let s = enc.stats;
    println!(
        "bytes={} bpp={:.4} blade_bpp={:.4} background_bpp={:.4} mask_bytes={} patches={} blade_patches={} seconds={:.3}",
        bytes.len(),
        s.bpp(),
        s.blade_bpp(),
        s.background_bpp(),
        enc.container.mask.len(),
        enc.layout.patch_count(),
        enc.layout.blade_indices().len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn decompress(input: &Path, models: &Path, parallel: usize, output: &Path) -> Result<()> {
    let registry = load_registry(models).with_context(|| format!("loading {}", models.display()))?;
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let start = Instant::now();
    let container = CodedContainer::from_bytes(&bytes)?;
    let image = roi_decompress(&container, &registry, Parallelism::from_count(parallel))?;
    Pnm::from_tensor(&image)?.write(output)?;
    println!(
        "width={} height={} seconds={:.3}",
        image.width(),
        image.height(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn read_peers(dir: &Path) -> Result<Vec<(TensorMap, roiml::mask::ProbabilityMask)>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    names.sort();
    let mut out = Vec::new();
    for img in names {
        let probs = img.with_extension("pgm");
        if !probs.exists() {
            bail!("{} has no probability map {}", img.display(), probs.display());
        }
        out.push((read_image(&img)?, Pnm::read(&probs)?.to_probability()?));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn segment_cmd(
    probs: &Path,
    image: &Path,
    peers: Option<&Path>,
    seed: u64,
    neigh: NeighSpec,
    tau_bu: f32,
    tau_rf: f32,
    output: &Path,
) -> Result<()> {
    let img = read_image(image)?;
    let p = Pnm::read(probs).with_context(|| format!("reading {}", probs.display()))?.to_probability()?;
    let peers = match peers {
        Some(d) => read_peers(d)?,
        None => Vec::new(),
    };
    let config = SegmentConfig {
        tau_bu,
        tau_rf,
        forest: ForestConfig {
            neigh,
            seed,
            ..ForestConfig::default()
        },
    };
    let out = segment(&img, &p, &peers, &config)?;
    Pnm::from_mask(&out.second_fill).write(output)?;
    let [a, b, c] = out.change_counts();
    println!(
        "orientation={:?} fill1_changed={a} ensemble_changed={b} fill2_changed={c} blade_pixels={}",
        out.orientation,
        out.second_fill.count()
    );
    Ok(())
}

fn eval_curves(input: &Path, grid: usize, output: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let curve = acceptance_curve(&parse_similarity_csv(&text)?, grid)?;
    std::fs::write(output, curve.to_csv()).with_context(|| format!("writing {}", output.display()))?;
    println!("auc={} integrated_auc={}", curve.auc(), curve.integrated_auc());
    Ok(())
}

fn toy_models(dir: &Path, ps: usize, depth: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let entries = [
        (1, ModelKind::Hyperprior, "background.rmlw", ModelFile::Hyperprior(toy_hyperprior(ps, 24.0)?)),
        (2, ModelKind::Hyperprior, "blade_lossy.rmlw", ModelFile::Hyperprior(toy_hyperprior(ps, 6.0)?)),
        (3, ModelKind::Bitswap, "blade_lossless.rmlw", ModelFile::Bitswap(toy_model(depth, ps, seed)?)),
    ];
    let mut manifest = Vec::new();
    for (id, kind, file, model) in entries {
        write_file(&dir.join(file), &model)?;
        manifest.push(ManifestEntry {
            id,
            kind,
            file: file.into(),
            param: None,
        });
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, format_manifest(&manifest))?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Compress {
            input,
            mask,
            mode,
            models,
            blade_model,
            bg_model,
            parallel,
            seed,
            output,
        } => compress(&input, mask.as_deref(), mode, &models, blade_model, bg_model, parallel, seed, &output),
        Command::Decompress {
            input,
            models,
            parallel,
            output,
        } => decompress(&input, &models, parallel, &output),
        Command::Segment {
            probs,
            image,
            peers,
            seed,
            neigh_n,
            neigh_d,
            tau_bu,
            tau_rf,
            output,
        } => segment_cmd(
            &probs,
            &image,
            peers.as_deref(),
            seed,
            NeighSpec { n: neigh_n, d: neigh_d },
            tau_bu,
            tau_rf,
            &output,
        ),
        Command::EvalCurves { input, grid, output } => eval_curves(&input, grid, &output),
        Command::ToyModels {
            dir,
            patch_size,
            depth,
            seed,
        } => toy_models(&dir, patch_size, depth, seed),
    }
}
