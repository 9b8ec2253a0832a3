//! The `lida` command-line tool.
//!
//! Every subcommand is a thin shell around one library call: results go to
//! stdout as tab-separated text, diagnostics to stderr. Identical
//! invocations on identical inputs produce byte-identical stdout and output
//! files, whatever `--threads` says.
//!
//! Exit codes: 0 success, 2 usage error, 3 file or image I/O failure,
//! 4 corrupt input file, 5 numerical failure, 1 anything else.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{Checkpoint, EncoderConfig, EncoderParams};
use crate::error::{CorruptKind, Error, Result};
use crate::fingerprint::{extract_fingerprint, FingerprintImage, RgbImage};
use crate::losses::{LossWeights, REAL_LABEL};
use crate::metrics::EvalReport;
use crate::registry::Registry;
use crate::retrieval::{attribute, detect, RankedResult, DEFAULT_THRESHOLD, DEFAULT_TOP_K};
use crate::synthgen::BenchmarkSpec;
use crate::training::{adapt, degrade, pretrain, LossVariant, TrainConfig};
use crate::util::mix_seed;

/// Environment variable consulted for the exemplar database path when
/// `--db` is absent.
pub const DB_ENV_VAR: &str = "LIDA_DB";

const REAL_SAMPLE_STREAM: u64 = 0x7265616c;

#[derive(Parser)]
#[command(
    name = "lida",
    version,
    about = "Attribute and detect generated images by their low-bit-plane fingerprints"
)]
struct Cli {
    /// Cap the worker thread pool (results never depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract an image's low-bit fingerprint and write it as a PNG.
    Fingerprint {
        /// Input image (PNG).
        #[arg(long)]
        input: PathBuf,
        /// Output fingerprint PNG (pixels are 0 or 255 per channel).
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic benchmark: images plus a manifest.
    Synth {
        /// Directory for the images and `manifest.tsv`.
        #[arg(long)]
        output_dir: PathBuf,
        /// TOML benchmark description; omit for the built-in benchmark.
        /// The remaining flags are ignored when this is given.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Root seed for the built-in benchmark.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Square image side in pixels.
        #[arg(long, default_value_t = 128)]
        side: usize,
        /// Number of content classes.
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Number of real images.
        #[arg(long, default_value_t = 30)]
        reals: usize,
        /// Number of fakes per generator family.
        #[arg(long, default_value_t = 10)]
        fakes_per_family: usize,
    },
    /// Pre-train an encoder on the real images of a manifest.
    Pretrain {
        /// Manifest of training images; only rows labelled "real" are used.
        #[arg(long)]
        corpus: PathBuf,
        /// Where to write the encoder checkpoint.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Side of the square crop the encoder consumes.
        #[arg(long, default_value_t = 32)]
        input_side: usize,
        /// Feature vector length.
        #[arg(long, default_value_t = 64)]
        feature_dim: usize,
    },
    /// Add exemplar images to the database under one label.
    Register {
        /// Exemplar database path (defaults to $LIDA_DB).
        #[arg(long)]
        db: Option<PathBuf>,
        /// Encoder checkpoint.
        #[arg(long)]
        encoder: PathBuf,
        /// Generator label for all listed images.
        #[arg(long)]
        label: String,
        /// Registration time in seconds since the epoch.
        #[arg(long, default_value_t = 0)]
        timestamp: i64,
        /// Exemplar images.
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Fine-tune the encoder on the registered exemplars.
    Adapt {
        /// Exemplar database path (defaults to $LIDA_DB).
        #[arg(long)]
        db: Option<PathBuf>,
        /// Pre-trained encoder checkpoint.
        #[arg(long)]
        encoder: PathBuf,
        /// Where to write the adapted checkpoint.
        #[arg(long)]
        output: PathBuf,
        /// Manifest supplying real images; as many as needed to balance the
        /// fake exemplars are drawn from it, chosen by --seed.
        #[arg(long)]
        real_manifest: PathBuf,
        /// Directory exemplar source paths are resolved against.
        #[arg(long, default_value = ".")]
        image_root: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        learning_rate: f64,
        /// Weight of the detection loss term.
        #[arg(long, default_value_t = 0.9)]
        lambda: f64,
        /// Detection similarity temperature.
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        /// Class center update rate.
        #[arg(long, default_value_t = 0.5)]
        center_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Objective: metric, ce-attribution, ce-detection, or ce-both.
        #[arg(long, default_value = "metric")]
        variant: String,
    },
    /// Rank registered exemplars against query images.
    Query {
        /// Exemplar database path (defaults to $LIDA_DB).
        #[arg(long)]
        db: Option<PathBuf>,
        /// Encoder checkpoint.
        #[arg(long)]
        encoder: PathBuf,
        /// How many neighbors to list.
        #[arg(short, default_value_t = DEFAULT_TOP_K)]
        k: usize,
        /// Predict by majority vote over the top K instead of rank 1.
        #[arg(long)]
        vote: bool,
        /// Query images.
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Decide real vs generated by similarity to the real prototype.
    Detect {
        /// Encoder checkpoint (must carry a real prototype).
        #[arg(long)]
        encoder: PathBuf,
        /// Minimum prototype similarity still counted as real.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Images to test.
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score attribution (and detection, if available) on a labelled manifest.
    Eval {
        /// Exemplar database path (defaults to $LIDA_DB).
        #[arg(long)]
        db: Option<PathBuf>,
        /// Encoder checkpoint.
        #[arg(long)]
        encoder: PathBuf,
        /// Manifest of query images with ground-truth labels.
        #[arg(long)]
        queries: PathBuf,
        /// Neighbors per query.
        #[arg(short, default_value_t = DEFAULT_TOP_K)]
        k: usize,
        /// Detection threshold (used when the encoder has a prototype).
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Emit the long-format table instead of the aligned one.
        #[arg(long)]
        tsv: bool,
    },
    /// Blur an image with a Gaussian kernel (sigma 0 copies it verbatim).
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Blur standard deviation in pixels.
        #[arg(long)]
        sigma: f64,
    },
}

/// Parse `std::env::args`, execute, and return any failure for exit-code
/// mapping. Usage errors exit(2) inside clap.
pub fn run() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("could not size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fingerprint { input, output } => cmd_fingerprint(&input, &output),
        Command::Synth { output_dir, spec, seed, side, classes, reals, fakes_per_family } => {
            cmd_synth(
                &output_dir,
                spec.as_deref(),
                BenchmarkSpec {
                    side,
                    content_classes: classes,
                    reals,
                    fakes_per_family,
                    seed,
                    families: crate::synthgen::default_families(seed, classes),
                },
            )
        }
        Command::Pretrain {
            corpus,
            output,
            epochs,
            batch_size,
            learning_rate,
            seed,
            input_side,
            feature_dim,
        } => cmd_pretrain(
            &corpus,
            &output,
            TrainConfig {
                epochs,
                batch_size,
                learning_rate,
                seed,
                ..TrainConfig::default()
            },
            input_side,
            feature_dim,
        ),
        Command::Register { db, encoder, label, timestamp, images } => {
            cmd_register(db, &encoder, &label, timestamp, &images)
        }
        Command::Adapt {
            db,
            encoder,
            output,
            real_manifest,
            image_root,
            epochs,
            batch_size,
            learning_rate,
            lambda,
            tau,
            center_rate,
            seed,
            variant,
        } => cmd_adapt(
            db,
            &encoder,
            &output,
            &real_manifest,
            &image_root,
            TrainConfig {
                epochs,
                batch_size,
                learning_rate,
                weights: LossWeights { lambda, tau },
                center_rate,
                seed,
                variant: variant.parse::<LossVariant>()?,
            },
        ),
        Command::Query { db, encoder, k, vote, images } => {
            cmd_query(db, &encoder, k, vote, &images)
        }
        Command::Detect { encoder, threshold, images } => {
            cmd_detect(&encoder, threshold, &images)
        }
        Command::Eval { db, encoder, queries, k, threshold, tsv } => {
            cmd_eval(db, &encoder, &queries, k, threshold, tsv)
        }
        Command::Degrade { input, output, sigma } => cmd_degrade(&input, &output, sigma),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing.

fn resolve_db(flag: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var_os(DB_ENV_VAR) {
        Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => Err(Error::InvalidArgument(format!(
            "no exemplar database given: pass --db or set {DB_ENV_VAR}"
        ))),
    }
}

fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)?.to_rgb8();
    RgbImage::new(img.width() as usize, img.height() as usize, img.into_raw())
}

fn save_image(path: &Path, img: &RgbImage) -> Result<()> {
    image::save_buffer(
        path,
        img.as_raw(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(())
}

/// One row of an image manifest.
struct ManifestEntry {
    /// Resolved (joined onto the manifest directory) image path.
    path: PathBuf,
    label: String,
    class_id: usize,
}

/// Read a `path<TAB>label<TAB>class` manifest. Relative image paths are
/// taken relative to the manifest's own directory.
fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "path\tlabel\tclass")) => {}
        _ => {
            return Err(CorruptKind::InvalidField(format!(
                "{}: first line must be \"path\\tlabel\\tclass\"",
                path.display()
            ))
            .into())
        }
    }
    let mut entries = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(rel), Some(label), Some(class), None) =
            (cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(CorruptKind::InvalidField(format!(
                "{}:{}: expected 3 tab-separated columns",
                path.display(),
                idx + 1
            ))
            .into());
        };
        let class_id: usize = class.parse().map_err(|_| {
            CorruptKind::InvalidField(format!(
                "{}:{}: class {:?} is not a non-negative integer",
                path.display(),
                idx + 1,
                class
            ))
        })?;
        let rel_path = Path::new(rel);
        let resolved =
            if rel_path.is_absolute() { rel_path.to_path_buf() } else { base.join(rel_path) };
        entries.push(ManifestEntry { path: resolved, label: label.to_string(), class_id });
    }
    Ok(entries)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn fingerprint_file(path: &Path) -> Result<FingerprintImage> {
    Ok(extract_fingerprint(&load_image(path)?))
}

// ---------------------------------------------------------------------------
// Subcommands.

fn cmd_fingerprint(input: &Path, output: &Path) -> Result<()> {
    let fp = fingerprint_file(input)?;
    let n = fp.width() * fp.height();
    let mut raw = vec![0u8; 3 * n];
    for c in 0..3 {
        let plane = fp.channel(crate::fingerprint::Channel::ALL[c]);
        for (i, v) in plane.iter().enumerate() {
            raw[i * 3 + c] = *v;
        }
    }
    let img = RgbImage::new(fp.width(), fp.height(), raw)?;
    save_image(output, &img)?;
    println!("{}\t{}\t{}x{}", input.display(), output.display(), fp.width(), fp.height());
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

fn cmd_synth(output_dir: &Path, spec: Option<&Path>, fallback: BenchmarkSpec) -> Result<()> {
    let spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let spec: BenchmarkSpec = toml::from_str(&text).map_err(|e| {
                Error::from(CorruptKind::InvalidField(format!("{}: {e}", p.display())))
            })?;
            spec
        }
        None => fallback,
    };
    let images = spec.generate()?;
    std::fs::create_dir_all(output_dir)?;
    let mut manifest = String::from("path\tlabel\tclass\n");
    for (i, item) in images.iter().enumerate() {
        let name = format!("{:05}_{}.png", i, sanitize(&item.label));
        save_image(&output_dir.join(&name), &item.image)?;
        writeln!(manifest, "{}\t{}\t{}", name, item.label, item.class_id).expect("string write");
    }
    let manifest_path = output_dir.join("manifest.tsv");
    crate::util::atomic_write(&manifest_path, manifest.as_bytes())?;
    eprintln!("wrote {} images to {}", images.len(), output_dir.display());
    println!("{}", manifest_path.display());
    Ok(())
}

fn cmd_pretrain(
    corpus: &Path,
    output: &Path,
    config: TrainConfig,
    input_side: usize,
    feature_dim: usize,
) -> Result<()> {
    let entries = read_manifest(corpus)?;
    let mut samples = Vec::new();
    let mut max_class = 0usize;
    for e in entries.iter().filter(|e| e.label == REAL_LABEL) {
        samples.push((fingerprint_file(&e.path)?, e.class_id));
        max_class = max_class.max(e.class_id);
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "manifest {} holds no rows labelled {REAL_LABEL:?}",
            corpus.display()
        )));
    }
    let enc_config = EncoderConfig {
        input_side,
        feature_dim,
        num_pretext_classes: max_class + 1,
        seed: config.seed,
        ..EncoderConfig::default()
    };
    let mut params = EncoderParams::init(&enc_config)?;
    eprintln!(
        "pre-training on {} real fingerprints, {} classes, {} epochs",
        samples.len(),
        max_class + 1,
        config.epochs
    );
    let (prototype, log) = pretrain(&mut params, &samples, &config)?;
    eprintln!("done in {:.1}s", log.wall_seconds);
    let mut ckpt = Checkpoint::new(params);
    ckpt.prototype = Some(prototype);
    ckpt.save(output)?;
    print!("{}", log.to_tsv());
    Ok(())
}

fn cmd_register(
    db: Option<PathBuf>,
    encoder: &Path,
    label: &str,
    timestamp: i64,
    images: &[PathBuf],
) -> Result<()> {
    let db = resolve_db(db)?;
    let ckpt = load_checkpoint(encoder)?;
    let mut registry = if db.exists() {
        Registry::load(&db)?
    } else {
        Registry::new(ckpt.params.config.feature_dim)
    };
    let loaded: Vec<(String, RgbImage)> = images
        .iter()
        .map(|p| Ok((p.display().to_string(), load_image(p)?)))
        .collect::<Result<_>>()?;
    let before = registry.len();
    registry.register_images(label, &loaded, &ckpt.params, timestamp)?;
    registry.save(&db)?;
    for (record, path) in registry.records()[before..].iter().zip(images) {
        println!("registered\t{}\t{}\t{}", record.id, record.label, path.display());
    }
    eprintln!("database {} now holds {} exemplars", db.display(), registry.len());
    Ok(())
}

fn cmd_adapt(
    db: Option<PathBuf>,
    encoder: &Path,
    output: &Path,
    real_manifest: &Path,
    image_root: &Path,
    config: TrainConfig,
) -> Result<()> {
    let db = resolve_db(db)?;
    let mut ckpt = load_checkpoint(encoder)?;
    let prototype = ckpt
        .prototype
        .clone()
        .ok_or_else(|| Error::NotPretrained)?;
    let mut registry = Registry::load(&db)?;

    // Fingerprints for every registered exemplar, from their source images.
    let mut exemplar_fps = BTreeMap::new();
    let mut fake_count = 0usize;
    let mut registry_reals = 0usize;
    for record in registry.records() {
        let rel = Path::new(&record.source_path);
        let path = if rel.is_absolute() { rel.to_path_buf() } else { image_root.join(rel) };
        exemplar_fps.insert(record.id, fingerprint_file(&path)?);
        if record.label == REAL_LABEL {
            registry_reals += 1;
        } else {
            fake_count += 1;
        }
    }

    // Draw just enough reals from the manifest to balance the fakes.
    let needed = fake_count.saturating_sub(registry_reals);
    let pool: Vec<ManifestEntry> = read_manifest(real_manifest)?
        .into_iter()
        .filter(|e| e.label == REAL_LABEL)
        .collect();
    if pool.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "adaptation needs {needed} real images but {} offers only {}",
            real_manifest.display(),
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, REAL_SAMPLE_STREAM));
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let real_fps: Vec<FingerprintImage> = order[..needed]
        .iter()
        .map(|i| fingerprint_file(&pool[*i].path))
        .collect::<Result<_>>()?;

    eprintln!(
        "adapting on {fake_count} fakes + {} reals for {} epochs ({})",
        needed + registry_reals,
        config.epochs,
        config.variant
    );
    let outcome = adapt(
        &mut ckpt.params,
        &mut registry,
        &exemplar_fps,
        &real_fps,
        &prototype,
        &config,
    )?;
    eprintln!("done in {:.1}s", outcome.log.wall_seconds);
    ckpt.centers = outcome.centers;
    ckpt.save(output)?;
    registry.save(&db)?;
    print!("{}", outcome.log.to_tsv());
    Ok(())
}

fn cmd_query(
    db: Option<PathBuf>,
    encoder: &Path,
    k: usize,
    vote: bool,
    images: &[PathBuf],
) -> Result<()> {
    let db = resolve_db(db)?;
    let ckpt = load_checkpoint(encoder)?;
    let registry = Registry::load(&db)?;
    println!("path\trank\tlabel\tsimilarity\trecord_id");
    for path in images {
        let fp = fingerprint_file(path)?;
        let result = attribute(&fp, &registry, &ckpt.params, k)?;
        for (rank, entry) in result.entries.iter().enumerate() {
            println!(
                "{}\t{}\t{}\t{:.6}\t{}",
                path.display(),
                rank + 1,
                entry.label,
                entry.similarity,
                entry.id
            );
        }
        let predicted = result.predicted_label(vote).unwrap_or("?");
        println!("{}\tpredicted\t{}\t\t", path.display(), predicted);
    }
    Ok(())
}

fn cmd_detect(encoder: &Path, threshold: f64, images: &[PathBuf]) -> Result<()> {
    let ckpt = load_checkpoint(encoder)?;
    let prototype = ckpt.prototype.as_ref().ok_or(Error::NotPretrained)?;
    println!("path\tverdict\tsimilarity");
    for path in images {
        let fp = fingerprint_file(path)?;
        let verdict = detect(&fp, prototype, &ckpt.params, threshold)?;
        println!(
            "{}\t{}\t{:.6}",
            path.display(),
            if verdict.is_real { "real" } else { "fake" },
            verdict.similarity
        );
    }
    Ok(())
}

fn cmd_eval(
    db: Option<PathBuf>,
    encoder: &Path,
    queries: &Path,
    k: usize,
    threshold: f64,
    tsv: bool,
) -> Result<()> {
    let db = resolve_db(db)?;
    let ckpt = load_checkpoint(encoder)?;
    let registry = Registry::load(&db)?;
    let entries = read_manifest(queries)?;
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!("{} lists no queries", queries.display())));
    }
    let mut features = Vec::with_capacity(entries.len());
    let mut truths: Vec<&str> = Vec::with_capacity(entries.len());
    for e in &entries {
        let fp = fingerprint_file(&e.path)?;
        features.push(ckpt.params.embed(&fp)?);
        truths.push(&e.label);
    }
    let mut results: Vec<RankedResult> = Vec::with_capacity(entries.len());
    for feature in &features {
        results.push(crate::retrieval::attribute_feature(feature, &registry, k)?);
    }
    let detection_data = match &ckpt.prototype {
        Some(proto) => {
            let verdicts = features
                .iter()
                .map(|f| crate::retrieval::detect_feature(f, proto, threshold))
                .collect::<Result<Vec<_>>>()?;
            let flags: Vec<bool> = truths.iter().map(|t| *t == REAL_LABEL).collect();
            Some((verdicts, flags))
        }
        None => None,
    };
    let report = EvalReport::from_rankings(
        &results,
        &truths,
        detection_data.as_ref().map(|(v, f)| (v.as_slice(), f.as_slice())),
    )?;
    if report.excluded > 0 {
        eprintln!(
            "{} queries carry labels absent from every ranking and were left out of mAP",
            report.excluded
        );
    }
    if tsv {
        print!("{}", report.to_tsv());
    } else {
        print!("{}", report.text_table());
    }
    Ok(())
}

fn cmd_degrade(input: &Path, output: &Path, sigma: f64) -> Result<()> {
    let img = load_image(input)?;
    let blurred = degrade(&img, sigma)?;
    save_image(output, &blurred)?;
    println!("{}\t{}\t{}", input.display(), output.display(), sigma);
    Ok(())
}
