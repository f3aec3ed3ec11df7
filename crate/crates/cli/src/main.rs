//! Command line front end for the grayseg pipeline.
//!
//! Subcommands compose the library stages: phantom generation, noise
//! injection, feature dumps, segmentation, scoring, and a sigma sweep
//! for the adaptive method. Every command is deterministic given its
//! full argument list; all randomness flows from the global `--seed`
//! through named sub-streams so no two stages share RNG state.

use clap::{Args, Parser, Subcommand};
use grayseg::eval::{
    add_noise, align_labels, contour_mask, make_phantom, render_table, score, EvalError,
    NoiseKind, NoiseSpec, PhantomLayout, SegReport,
};
use grayseg::features::{grid_to_pgm, write_grid_f64, BorderPolicy, FeatureMaps, WindowSpec};
use grayseg::fuzzy::{weight_map, FuzzySystem};
use grayseg::image::{read_labels, read_pgm, write_labels, write_pgm, GrayImage, LabelMap};
use grayseg::seeds::derive_seed;
use grayseg::segment::{
    segment, RunManifest, SegMethod, SegmentConfig, SegmentError, Segmentation,
};
use serde_json::json;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "grayseg",
    version,
    about = "Grayscale segmentation toolkit: phantoms, noise, mixture fitting, and distance-based pixel classifiers"
)]
struct Cli {
    /// Master seed; each stochastic stage derives its own stream from it
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Suppress informational stdout lines
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom image together with its ground truth
    Generate(GenerateArgs),
    /// Corrupt an image with seeded noise
    Noise(NoiseArgs),
    /// Dump per-pixel window features as raw grids with PGM previews
    Features(FeaturesArgs),
    /// Segment an image and write the labels plus run artifacts
    Segment(SegmentArgs),
    /// Score predicted labels, or compare methods, against ground truth
    Eval(EvalArgs),
    /// Run the adaptive method across several sigma breakpoints
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Image size as WIDTHxHEIGHT, e.g. 90x90
    #[arg(long, value_parser = parse_size)]
    size: (usize, usize),
    /// Comma-separated gray level per class, e.g. 30,120,220
    #[arg(long, value_delimiter = ',', required = true)]
    levels: Vec<u8>,
    /// Phantom layout: bands, disks, or fine_structures
    #[arg(long)]
    layout: PhantomLayout,
    /// Output prefix; writes PREFIX.pgm, PREFIX.truth.pgm, PREFIX.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NoiseArgs {
    /// Input PGM image
    input: PathBuf,
    /// Noise model: gaussian or impulse
    #[arg(long)]
    kind: NoiseKind,
    /// Gaussian: std dev fraction of 255; impulse: fraction replaced
    #[arg(long)]
    amount: f64,
    /// Output prefix; writes PREFIX.pgm and PREFIX.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Input PGM image
    input: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// Sigma level treated as fully "great" by the weighting rules
    #[arg(long, default_value_t = 40.0)]
    sigma_break: f64,
    /// Output prefix; writes PREFIX.{mean,sigma,ncn,p}.{f64,pgm}
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WindowArgs {
    /// Window radius (1 means 3x3)
    #[arg(long, default_value_t = 1)]
    radius: usize,
    /// Border handling: shrink or clamp
    #[arg(long, default_value = "shrink", value_parser = parse_border)]
    border: BorderPolicy,
    /// Max gray distance for a neighbor to count as close
    #[arg(long, default_value_t = 20.0)]
    s_threshold: f64,
}

#[derive(Args)]
struct TuningArgs {
    /// Number of classes
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Convergence threshold on parameter change
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Iteration cap for the fit
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[command(flatten)]
    window: WindowArgs,
    /// Sigma level treated as fully "great" by the weighting rules
    #[arg(long, default_value_t = 40.0)]
    sigma_break: f64,
    /// JSON file overriding the default membership functions
    #[arg(long)]
    membership: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Input PGM image
    input: PathBuf,
    /// Pixel classifier: em, dem, or adem
    #[arg(long, required_unless_present = "manifest")]
    method: Option<SegMethod>,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Re-run from a manifest written by a previous invocation
    #[arg(
        long,
        conflicts_with_all = ["method", "k", "epsilon", "max_iter", "radius",
                              "border", "s_threshold", "sigma_break", "membership"]
    )]
    manifest: Option<PathBuf>,
    /// Also write the feature grids next to the labels
    #[arg(long)]
    dump_features: bool,
    /// Output prefix; writes PREFIX.labels.pgm, PREFIX.mixture.json, PREFIX.run.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted label map, or the image to segment with --compare
    input: PathBuf,
    /// Ground-truth label map
    #[arg(long)]
    truth: PathBuf,
    /// Segment the input with these methods and score each, e.g. em,dem,adem
    #[arg(long, value_delimiter = ',')]
    compare: Option<Vec<SegMethod>>,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Neighborhood radius defining the contour zone
    #[arg(long, default_value_t = 1)]
    contour_radius: usize,
    /// Optional output prefix; writes PREFIX.json and PREFIX.txt
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Input PGM image
    input: PathBuf,
    /// Comma-separated sigma breakpoints to try, e.g. 15,40,70
    #[arg(long, value_delimiter = ',', required = true)]
    sigma: Vec<f64>,
    /// Ground-truth label map for error counts in the summary
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Output prefix; writes PREFIX.s{SIGMA}.labels.pgm and PREFIX.summary.json
    #[arg(long)]
    out: PathBuf,
}

/// Failure category mapped to the process exit code.
enum CliError {
    /// Arguments that parse but violate an operation's preconditions.
    Usage(String),
    /// Unreadable, unparsable, or inconsistent input files.
    Data(String),
    /// The fit itself failed.
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<SegmentError> for CliError {
    fn from(e: SegmentError) -> Self {
        match e {
            SegmentError::Fit(inner) => CliError::Numerical(inner.to_string()),
            SegmentError::BadK { .. } | SegmentError::BadMethod { .. } => {
                CliError::Usage(e.to_string())
            }
            SegmentError::Fuzzy(_) => CliError::Usage(e.to_string()),
            SegmentError::Manifest(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Segment(inner) => inner.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        seed: cli.seed,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Generate(args) => cmd_generate(&ctx, args),
        Command::Noise(args) => cmd_noise(&ctx, args),
        Command::Features(args) => cmd_features(&ctx, args),
        Command::Segment(args) => cmd_segment(&ctx, args),
        Command::Eval(args) => cmd_eval(&ctx, args),
        Command::Sweep(args) => cmd_sweep(&ctx, args),
    }
}

struct Ctx {
    seed: u64,
    quiet: bool,
}

impl Ctx {
    fn info(&self, line: fmt::Arguments<'_>) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or("size must look like WIDTHxHEIGHT, e.g. 90x90")?;
    let w: usize = w.trim().parse().map_err(|e| format!("bad width: {e}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("bad height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("size dimensions must be positive".into());
    }
    Ok((w, h))
}

fn parse_border(s: &str) -> Result<BorderPolicy, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "shrink" => Ok(BorderPolicy::Shrink),
        "clamp" => Ok(BorderPolicy::Clamp),
        other => Err(format!("unknown border policy {other:?} (shrink or clamp)")),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_bytes(ctx: &Ctx, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    ctx.info(format_args!("wrote {}", path.display()));
    Ok(())
}

fn load_image(path: &Path) -> Result<GrayImage, CliError> {
    read_pgm(&read_bytes(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_labels(path: &Path) -> Result<LabelMap, CliError> {
    read_labels(&read_bytes(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Appends `suffix` to the prefix's file name, keeping its directory.
fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    prefix.with_file_name(name)
}

impl TuningArgs {
    fn to_config(&self, seed: u64) -> Result<SegmentConfig, CliError> {
        if self.window.radius == 0 {
            return Err(CliError::Usage("window radius must be at least 1".into()));
        }
        let mut cfg = SegmentConfig::new(self.k);
        cfg.epsilon = self.epsilon;
        cfg.max_iter = self.max_iter;
        cfg.seed = derive_seed(seed, "init");
        cfg.window = WindowSpec::new(self.window.radius, self.window.border);
        cfg.s_threshold = self.window.s_threshold;
        cfg.sigma_break = self.sigma_break;
        if let Some(path) = &self.membership {
            let text = String::from_utf8(read_bytes(path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let fs = FuzzySystem::from_json(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            cfg.fuzzy = Some(fs);
        }
        Ok(cfg)
    }
}

fn cmd_generate(ctx: &Ctx, args: GenerateArgs) -> Result<(), CliError> {
    let (width, height) = args.size;
    let phantom_seed = derive_seed(ctx.seed, "phantom");
    let ph = make_phantom(width, height, &args.levels, args.layout, phantom_seed)?;
    write_bytes(ctx, &with_suffix(&args.out, ".pgm"), &write_pgm(&ph.image))?;
    write_bytes(
        ctx,
        &with_suffix(&args.out, ".truth.pgm"),
        &write_labels(&ph.truth),
    )?;
    let manifest = json!({
        "layout": args.layout.to_string(),
        "width": width,
        "height": height,
        "levels": args.levels,
        "seed": ctx.seed,
        "phantom_seed": phantom_seed,
    });
    write_bytes(
        ctx,
        &with_suffix(&args.out, ".json"),
        pretty(&manifest).as_bytes(),
    )
}

fn cmd_noise(ctx: &Ctx, args: NoiseArgs) -> Result<(), CliError> {
    let img = load_image(&args.input)?;
    let spec = NoiseSpec {
        kind: args.kind,
        amount: args.amount,
        seed: derive_seed(ctx.seed, "noise"),
    };
    let noised = add_noise(&img, &spec)?;
    write_bytes(ctx, &with_suffix(&args.out, ".pgm"), &write_pgm(&noised))?;
    let manifest = json!({
        "input": args.input.display().to_string(),
        "kind": spec.kind.to_string(),
        "amount": spec.amount,
        "seed": ctx.seed,
        "noise_seed": spec.seed,
    });
    write_bytes(
        ctx,
        &with_suffix(&args.out, ".json"),
        pretty(&manifest).as_bytes(),
    )
}

fn cmd_features(ctx: &Ctx, args: FeaturesArgs) -> Result<(), CliError> {
    if args.window.radius == 0 {
        return Err(CliError::Usage("window radius must be at least 1".into()));
    }
    let img = load_image(&args.input)?;
    let window = WindowSpec::new(args.window.radius, args.window.border);
    let mut fm = FeatureMaps::compute(&img, window, args.window.s_threshold);
    let fs = FuzzySystem::defaults(args.sigma_break, window.population())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    weight_map(&fs, &mut fm);
    dump_feature_grids(ctx, &args.out, &fm)
}

fn dump_feature_grids(ctx: &Ctx, prefix: &Path, fm: &FeatureMaps) -> Result<(), CliError> {
    let ncn_f64: Vec<f64> = fm.ncn.iter().map(|&c| f64::from(c)).collect();
    let grids: [(&str, &[f64]); 4] = [
        ("mean", &fm.mean),
        ("sigma", &fm.sigma),
        ("ncn", &ncn_f64),
        ("p", &fm.p),
    ];
    for (name, grid) in grids {
        write_bytes(
            ctx,
            &with_suffix(prefix, &format!(".{name}.f64")),
            &write_grid_f64(grid, fm.width, fm.height),
        )?;
        let preview = grid_to_pgm(grid, fm.width, fm.height);
        write_bytes(
            ctx,
            &with_suffix(prefix, &format!(".{name}.pgm")),
            &write_pgm(&preview),
        )?;
    }
    Ok(())
}

fn run_segmentation(
    img: &GrayImage,
    method: SegMethod,
    cfg: &SegmentConfig,
) -> Result<Segmentation, CliError> {
    let seg = segment(img, method, cfg)?;
    if !seg.mixture.converged {
        eprintln!(
            "warning: fit stopped after {} iterations without converging",
            seg.mixture.iterations
        );
    }
    Ok(seg)
}

fn cmd_segment(ctx: &Ctx, args: SegmentArgs) -> Result<(), CliError> {
    let img = load_image(&args.input)?;
    let (method, cfg) = match &args.manifest {
        Some(path) => {
            let text = String::from_utf8(read_bytes(path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let man = RunManifest::from_json(&text)?;
            (man.method()?, man.to_config()?)
        }
        None => {
            let method = args.method.expect("clap enforces --method without --manifest");
            (method, args.tuning.to_config(ctx.seed)?)
        }
    };
    let seg = run_segmentation(&img, method, &cfg)?;
    write_bytes(
        ctx,
        &with_suffix(&args.out, ".labels.pgm"),
        &write_labels(&seg.labels),
    )?;
    write_bytes(
        ctx,
        &with_suffix(&args.out, ".mixture.json"),
        seg.mixture.to_json().as_bytes(),
    )?;
    let manifest = RunManifest::new(method, &cfg);
    write_bytes(
        ctx,
        &with_suffix(&args.out, ".run.json"),
        manifest.to_json().as_bytes(),
    )?;
    if args.dump_features {
        let mut fm = seg.features;
        if method != SegMethod::Adem {
            // The weighting pass only runs for the adaptive method, so
            // fill the p grid here to keep the dump set complete.
            let fs = match &cfg.fuzzy {
                Some(fs) => fs.clone(),
                None => FuzzySystem::defaults(cfg.sigma_break, cfg.window.population())
                    .map_err(|e| CliError::Usage(e.to_string()))?,
            };
            weight_map(&fs, &mut fm);
        }
        dump_feature_grids(ctx, &args.out, &fm)?;
    }
    Ok(())
}

fn cmd_eval(ctx: &Ctx, args: EvalArgs) -> Result<(), CliError> {
    if args.contour_radius == 0 {
        return Err(CliError::Usage("contour radius must be at least 1".into()));
    }
    let truth = load_labels(&args.truth)?;
    let mask = contour_mask(&truth, args.contour_radius);

    let columns: Vec<(String, SegReport)> = match &args.compare {
        Some(methods) => {
            if methods.is_empty() {
                return Err(CliError::Usage("--compare needs at least one method".into()));
            }
            let img = load_image(&args.input)?;
            if img.width() != truth.width() || img.height() != truth.height() {
                return Err(CliError::Usage(format!(
                    "dimension mismatch: {}x{} vs {}x{}",
                    img.width(),
                    img.height(),
                    truth.width(),
                    truth.height()
                )));
            }
            let cfg = args.tuning.to_config(ctx.seed)?;
            let mut cols = Vec::with_capacity(methods.len());
            for &method in methods {
                let seg = run_segmentation(&img, method, &cfg)?;
                let aligned = align_labels(&seg.labels, &truth)?;
                let report = score(&aligned, &truth, &mask)?;
                cols.push((method.name().to_string(), report));
            }
            cols
        }
        None => {
            let pred = load_labels(&args.input)?;
            let aligned = align_labels(&pred, &truth)?;
            let report = score(&aligned, &truth, &mask)?;
            vec![("pred".to_string(), report)]
        }
    };

    let refs: Vec<(&str, &SegReport)> = columns
        .iter()
        .map(|(name, report)| (name.as_str(), report))
        .collect();
    let table = render_table(truth.k(), &refs);
    if !ctx.quiet {
        print!("{table}");
    }
    if let Some(out) = &args.out {
        let doc = json!({
            "k": truth.k(),
            "methods": columns
                .iter()
                .map(|(name, report)| {
                    json!({
                        "method": name,
                        "report": serde_json::to_value(report).expect("report serializes"),
                    })
                })
                .collect::<Vec<_>>(),
        });
        write_bytes(ctx, &with_suffix(out, ".json"), pretty(&doc).as_bytes())?;
        write_bytes(ctx, &with_suffix(out, ".txt"), table.as_bytes())?;
    }
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, args: SweepArgs) -> Result<(), CliError> {
    let mut sigmas = args.sigma.clone();
    if sigmas.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(CliError::Usage(
            "sigma values must be positive and finite".into(),
        ));
    }
    sigmas.sort_by(|a, b| a.partial_cmp(b).expect("finite sigmas"));
    sigmas.dedup();

    let img = load_image(&args.input)?;
    let truth = match &args.truth {
        Some(path) => {
            let t = load_labels(path)?;
            if t.width() != img.width() || t.height() != img.height() {
                return Err(CliError::Usage(format!(
                    "dimension mismatch: {}x{} vs {}x{}",
                    img.width(),
                    img.height(),
                    t.width(),
                    t.height()
                )));
            }
            Some(t)
        }
        None => None,
    };
    let mask = truth.as_ref().map(|t| contour_mask(t, 1));

    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in &sigmas {
        let mut cfg = args.tuning.to_config(ctx.seed)?;
        cfg.sigma_break = sigma;
        let seg = run_segmentation(&img, SegMethod::Adem, &cfg)?;
        write_bytes(
            ctx,
            &with_suffix(&args.out, &format!(".s{sigma}.labels.pgm")),
            &write_labels(&seg.labels),
        )?;
        let mut row = json!({
            "sigma": sigma,
            "converged": seg.mixture.converged,
            "iterations": seg.mixture.iterations,
        });
        if let (Some(truth), Some(mask)) = (&truth, &mask) {
            let aligned = align_labels(&seg.labels, truth)?;
            let report = score(&aligned, truth, mask)?;
            ctx.info(format_args!(
                "sigma {sigma}: total {} (region {}, contour {})",
                report.total, report.region_total, report.contour_total
            ));
            let obj = row.as_object_mut().expect("row is an object");
            obj.insert("total".into(), report.total.into());
            obj.insert("region_total".into(), report.region_total.into());
            obj.insert("contour_total".into(), report.contour_total.into());
            obj.insert(
                "accuracy".into(),
                serde_json::to_value(report.accuracy).expect("accuracy serializes"),
            );
        }
        rows.push(row);
    }
    let summary = json!({ "rows": rows });
    write_bytes(
        ctx,
        &with_suffix(&args.out, ".summary.json"),
        pretty(&summary).as_bytes(),
    )
}

fn pretty(value: &serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    text
}
