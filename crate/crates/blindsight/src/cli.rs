//! The `blindsight` batch CLI.
//!
//! Subcommands mirror the offline pipeline: `synth` or a real export
//! produces a capture directory, `characterize` turns it into per-prompt
//! verdicts, `aggregate` collapses those into a head map, and `flops`
//! accounts for the theoretical savings of that map over a prompt set.
//! `mask` and `sinkfind` expose the mask generator and sink discovery
//! directly. Flags override config-file values which override defaults;
//! input and validation problems exit with code 2, everything else with 1.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use blindsight_core::aggregate::{accumulate, build_headmap, AggregatorConfig, HeadMap};
use blindsight_core::characterize::{CharacterizerConfig, OrderPolicy};
use blindsight_core::flops::{
    estimate_masked_areas_with_base, cdf_series, model_reduction, FlopsEstimator,
};
use blindsight_core::layout::{SinkSpec, TokenLayout};
use blindsight_core::mask::{build_mask, BaseVisibility, MaskType, MATERIALIZE_CAP};
use blindsight_core::sinkfind::{SinkAccumulator, SinkDiscovery};
use blindsight_core::synth::{PatternAssignment, RandomLayoutParams, SynthSetConfig};

use crate::capture::CaptureReader;
use crate::report::{
    cdf_csv, distribution_csv, pbm_string, read_json, reductions_csv, shares_map, write_json,
    FlopsReportFile, LayoutsFile, PromptFlops, VerdictsFile, FLOPS_NOTE,
};
use crate::run::{characterize_prompt_parallel, thread_pool};
use crate::synthio::write_synth_capture;

/// Failure carrying the process exit code: 2 for input and validation
/// problems, 1 for everything else.
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl fmt::Debug for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.error)
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError { code: 2, error: e.into() }
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError { code: 1, error: e.into() }
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "blindsight",
    version,
    about = "Template-derived sparse attention characterization for interleaved text/image prompts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Select the cheapest qualifying mask per head for every prompt in a capture
    Characterize(CharacterizeArgs),
    /// Collapse per-prompt verdicts into a fixed per-head mask map
    Aggregate(AggregateArgs),
    /// Theoretical FLOPs accounting of a head map over prompt layouts
    Flops(FlopsArgs),
    /// Emit one mask template as a JSON block list or PBM bitmap
    Mask(MaskArgs),
    /// Generate a synthetic capture set with planted sparsity patterns
    Synth(SynthArgs),
    /// Discover fixed sink offsets from attention-score statistics
    Sinkfind(SinkfindArgs),
}

// ── shared flags and config file ──────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderArg {
    Paper,
    Flops,
}

impl From<OrderArg> for OrderPolicy {
    fn from(v: OrderArg) -> Self {
        match v {
            OrderArg::Paper => OrderPolicy::PaperFixed,
            OrderArg::Flops => OrderPolicy::FlopsAscending,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseArg {
    /// Lower-triangular visibility everywhere (Qwen-style)
    Causal,
    /// Causal plus full attention within each image (Gemma-style)
    Gemma,
}

impl From<BaseArg> for BaseVisibility {
    fn from(v: BaseArg) -> Self {
        match v {
            BaseArg::Causal => BaseVisibility::Causal,
            BaseArg::Gemma => BaseVisibility::CausalWithBidirectionalImages,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkModeArg {
    Prefix,
    Offsets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskTypeArg {
    Dense,
    Sink,
    Document,
    DocumentSink,
}

impl From<MaskTypeArg> for MaskType {
    fn from(v: MaskTypeArg) -> Self {
        match v {
            MaskTypeArg::Dense => MaskType::Dense,
            MaskTypeArg::Sink => MaskType::Sink,
            MaskTypeArg::Document => MaskType::Document,
            MaskTypeArg::DocumentSink => MaskType::DocumentSink,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmitArg {
    Json,
    Pbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatternArg {
    Mixed,
    Dense,
    Sink,
    Document,
    DocumentSink,
}

impl From<PatternArg> for PatternAssignment {
    fn from(v: PatternArg) -> Self {
        match v {
            PatternArg::Mixed => PatternAssignment::Mixed,
            PatternArg::Dense => PatternAssignment::Fixed(MaskType::Dense),
            PatternArg::Sink => PatternAssignment::Fixed(MaskType::Sink),
            PatternArg::Document => PatternAssignment::Fixed(MaskType::Document),
            PatternArg::DocumentSink => PatternAssignment::Fixed(MaskType::DocumentSink),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SinkFlags {
    /// Where image sinks sit: prefix of each image, or fixed offsets
    #[arg(long, value_enum)]
    sink_mode: Option<SinkModeArg>,
    /// Prefix mode: sink size as a fraction of each image's length
    #[arg(long)]
    sink_fraction: Option<f64>,
    /// Offsets mode: comma-separated image-relative token offsets
    #[arg(long, value_delimiter = ',')]
    sink_offsets: Option<Vec<usize>>,
}

#[derive(Args, Debug, Clone)]
pub struct CommonFlags {
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for per-head fan-out (0 = auto)
    #[arg(long, env = "BLINDSIGHT_JOBS")]
    jobs: Option<usize>,
}

/// Optional config-file values; any field may be omitted.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    alpha: Option<f64>,
    order: Option<OrderArg>,
    base: Option<BaseArg>,
    sink_mode: Option<SinkModeArg>,
    sink_fraction: Option<f64>,
    sink_offsets: Option<Vec<usize>>,
    gamma_c: Option<f64>,
    gamma_s: Option<f64>,
    gamma_d: Option<f64>,
    top_fraction: Option<f64>,
    jobs: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let raw = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))
                    .map_err(input)?;
                serde_json::from_str(&raw)
                    .with_context(|| format!("parsing config {}", p.display()))
                    .map_err(input)
            }
        }
    }
}

fn resolve_sink(flags: &SinkFlags, file: &FileConfig) -> Result<SinkSpec, CliError> {
    let mode = flags.sink_mode.or(file.sink_mode).unwrap_or(SinkModeArg::Prefix);
    let spec = match mode {
        SinkModeArg::Prefix => SinkSpec::Prefix {
            fraction: flags.sink_fraction.or(file.sink_fraction).unwrap_or(0.1),
        },
        SinkModeArg::Offsets => {
            let offsets = flags
                .sink_offsets
                .clone()
                .or_else(|| file.sink_offsets.clone())
                .ok_or_else(|| input(anyhow!("--sink-mode offsets requires --sink-offsets")))?;
            SinkSpec::FixedOffsets { offsets }
        }
    };
    spec.validate().map_err(input)?;
    Ok(spec)
}

fn resolve_jobs(common: &CommonFlags, file: &FileConfig) -> usize {
    common.jobs.or(file.jobs).unwrap_or(0)
}

// ── characterize ───────────────────────────────────────────────────────────

#[derive(Args, Debug)]
pub struct CharacterizeArgs {
    /// Capture directory (manifest.json plus tensor files)
    #[arg(long)]
    capture: PathBuf,
    /// Output verdicts JSON
    #[arg(long)]
    out: PathBuf,
    /// NMSE selection threshold
    #[arg(long)]
    alpha: Option<f64>,
    /// Candidate ordering policy
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    /// Base visibility of the model the capture came from
    #[arg(long, value_enum)]
    base: Option<BaseArg>,
    /// Keep computing NMSE for candidates after the early exit
    #[arg(long)]
    full_diagnostics: bool,
    #[command(flatten)]
    sink: SinkFlags,
    #[command(flatten)]
    common: CommonFlags,
}

fn cmd_characterize(args: CharacterizeArgs) -> CliResult {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let cfg = CharacterizerConfig {
        alpha: args.alpha.or(file.alpha).unwrap_or(0.1),
        order_policy: args.order.or(file.order).unwrap_or(OrderArg::Paper).into(),
        sinks: resolve_sink(&args.sink, &file)?,
        base: args.base.or(file.base).unwrap_or(BaseArg::Causal).into(),
        full_diagnostics: args.full_diagnostics,
    };
    cfg.validate().map_err(input)?;

    let reader = CaptureReader::open(&args.capture).map_err(input)?;
    let pool = thread_pool(resolve_jobs(&args.common, &file)).map_err(runtime)?;
    let mut prompts = Vec::with_capacity(reader.prompt_count());
    for capture in reader.prompts() {
        let capture = capture.map_err(input)?;
        prompts.push(characterize_prompt_parallel(&pool, &capture, &cfg).map_err(runtime)?);
    }
    let out = VerdictsFile { config: cfg, model: reader.model().clone(), prompts };
    write_json(&args.out, &out).map_err(runtime)?;
    println!(
        "characterized {} prompts x {} heads -> {}",
        out.prompts.len(),
        out.model.layers * out.model.heads,
        args.out.display()
    );
    Ok(())
}

// ── aggregate ──────────────────────────────────────────────────────────────

#[derive(Args, Debug)]
pub struct AggregateArgs {
    /// One or more verdict files from `characterize`
    #[arg(long, num_args = 1.., required = true)]
    verdicts: Vec<PathBuf>,
    /// Output head-map JSON
    #[arg(long)]
    out: PathBuf,
    /// Mask-distribution summary CSV (defaults next to --out)
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Dense veto threshold
    #[arg(long)]
    gamma_c: Option<f64>,
    #[arg(long)]
    gamma_s: Option<f64>,
    #[arg(long)]
    gamma_d: Option<f64>,
    /// Model name recorded in the head map
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    common: CommonFlags,
}

fn cmd_aggregate(args: AggregateArgs) -> CliResult {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let agg = AggregatorConfig {
        gamma_c: args.gamma_c.or(file.gamma_c).unwrap_or(0.25),
        gamma_s: args.gamma_s.or(file.gamma_s).unwrap_or(0.60),
        gamma_d: args.gamma_d.or(file.gamma_d).unwrap_or(0.60),
    };
    agg.validate().map_err(input)?;

    let mut files: Vec<VerdictsFile> = Vec::new();
    for path in &args.verdicts {
        files.push(read_json(path).map_err(input)?);
    }
    let first = &files[0];
    for (f, path) in files.iter().zip(&args.verdicts) {
        if f.config != first.config || f.model != first.model {
            return Err(input(anyhow!(
                "verdict file {} was produced with a different configuration or model",
                path.display()
            )));
        }
    }
    let model_name = args.model.clone().unwrap_or_else(|| first.model.name.clone());
    let head_dim = first.model.head_dim;
    let characterizer = first.config.clone();
    let prompts: Vec<_> = files.into_iter().flat_map(|f| f.prompts).collect();
    let fractions = accumulate(&prompts).map_err(input)?;
    let headmap = build_headmap(&fractions, &agg, &characterizer, model_name, head_dim);

    write_json(&args.out, &headmap).map_err(runtime)?;
    let summary_path = args.summary.clone().unwrap_or_else(|| default_summary(&args.out));
    fs::write(&summary_path, distribution_csv(&headmap))
        .with_context(|| format!("writing {}", summary_path.display()))
        .map_err(runtime)?;
    println!(
        "aggregated {} prompts ({} counted) -> {} + {}",
        prompts.len(),
        fractions.prompts_counted(),
        args.out.display(),
        summary_path.display()
    );
    Ok(())
}

fn default_summary(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("headmap");
    out.with_file_name(format!("{stem}_distribution.csv"))
}

// ── flops ──────────────────────────────────────────────────────────────────

#[derive(Args, Debug)]
pub struct FlopsArgs {
    /// Head-map JSON from `aggregate`
    #[arg(long)]
    headmap: PathBuf,
    /// Layouts file (from `synth` or hand-written)
    #[arg(long, conflicts_with = "capture")]
    layouts: Option<PathBuf>,
    /// Capture directory to pull layouts from instead of --layouts
    #[arg(long)]
    capture: Option<PathBuf>,
    /// Output directory for report.json, reductions.csv, cdf.csv
    #[arg(long)]
    out_dir: PathBuf,
    /// Also run the exact counting oracle and report both columns
    #[arg(long)]
    exact: bool,
    #[command(flatten)]
    common: CommonFlags,
}

fn cmd_flops(args: FlopsArgs) -> CliResult {
    let headmap: HeadMap = read_json(&args.headmap).map_err(input)?;
    let layouts: Vec<(String, TokenLayout)> = match (&args.layouts, &args.capture) {
        (Some(path), None) => {
            let file: LayoutsFile = read_json(path).map_err(input)?;
            file.layouts.into_iter().map(|e| (e.prompt_id, e.layout)).collect()
        }
        (None, Some(dir)) => CaptureReader::open(dir).map_err(input)?.layouts(),
        _ => return Err(input(anyhow!("exactly one of --layouts or --capture is required"))),
    };
    if layouts.is_empty() {
        return Err(input(anyhow!("no layouts to account for")));
    }

    let shares = headmap.category_shares();
    let mut per_prompt = Vec::with_capacity(layouts.len());
    let mut est_values = Vec::with_capacity(layouts.len());
    let mut exact_values = Vec::with_capacity(layouts.len());
    for (prompt_id, layout) in &layouts {
        let areas = estimate_masked_areas_with_base(layout, headmap.base);
        let est = model_reduction(
            &shares,
            layout,
            &headmap.sink_spec,
            headmap.base,
            FlopsEstimator::ClosedForm,
        )
        .map_err(runtime)?;
        est_values.push(est);
        let exact = if args.exact {
            let v = model_reduction(
                &shares,
                layout,
                &headmap.sink_spec,
                headmap.base,
                FlopsEstimator::ExactCount,
            )
            .map_err(runtime)?;
            exact_values.push(v);
            Some(v)
        } else {
            None
        };
        let reduction: BTreeMap<MaskType, f64> =
            MaskType::ALL.iter().map(|&m| (m, areas.reduction(m))).collect();
        per_prompt.push(PromptFlops {
            prompt_id: prompt_id.clone(),
            masked_area: areas,
            reduction,
            model_reduction: est,
            model_reduction_exact: exact,
        });
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // With --exact the headline series (mean and CDF) comes from the
    // counting oracle; the estimator column stays alongside it.
    let primary = if args.exact { &exact_values } else { &est_values };
    let report = FlopsReportFile {
        note: FLOPS_NOTE.into(),
        model: headmap.model.clone(),
        estimator: if args.exact { "exact_count".into() } else { "closed_form".into() },
        shares: shares_map(&shares),
        mean_model_reduction: mean(&est_values),
        mean_model_reduction_exact: args.exact.then(|| mean(&exact_values)),
        per_prompt,
        cdf: cdf_series(primary),
    };

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .map_err(runtime)?;
    write_json(&args.out_dir.join("report.json"), &report).map_err(runtime)?;
    let rows: Vec<(String, f64, Option<f64>)> = layouts
        .iter()
        .enumerate()
        .map(|(i, (id, _))| {
            (id.clone(), est_values[i], args.exact.then(|| exact_values[i]))
        })
        .collect();
    fs::write(args.out_dir.join("reductions.csv"), reductions_csv(&rows, args.exact))
        .map_err(runtime)?;
    fs::write(args.out_dir.join("cdf.csv"), cdf_csv(&report.cdf)).map_err(runtime)?;
    println!(
        "flops over {} layouts: mean reduction {:.4}{} -> {}",
        layouts.len(),
        report.mean_model_reduction,
        report
            .mean_model_reduction_exact
            .map(|e| format!(" (exact {e:.4})"))
            .unwrap_or_default(),
        args.out_dir.display()
    );
    Ok(())
}

// ── mask ───────────────────────────────────────────────────────────────────

#[derive(Args, Debug)]
pub struct MaskArgs {
    /// Layout JSON ({"seq_len": ..., "segments": [...]})
    #[arg(long)]
    layout: PathBuf,
    /// Mask template to build
    #[arg(long = "type", value_enum)]
    mask_type: MaskTypeArg,
    #[arg(long, value_enum)]
    base: Option<BaseArg>,
    /// Output format: block list JSON or PBM bitmap of the materialized mask
    #[arg(long, value_enum, default_value = "json")]
    emit: EmitArg,
    #[arg(long)]
    out: PathBuf,
    /// Materialization cap for --emit pbm
    #[arg(long, default_value_t = MATERIALIZE_CAP)]
    cap: usize,
    #[command(flatten)]
    sink: SinkFlags,
    #[command(flatten)]
    common: CommonFlags,
}

#[derive(Serialize)]
struct MaskFile<'a> {
    sink_spec: &'a SinkSpec,
    diag_fallback: bool,
    allowed_cells: u128,
    mask: &'a blindsight_core::mask::AttentionMask,
}

fn cmd_mask(args: MaskArgs) -> CliResult {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let layout: TokenLayout = read_json(&args.layout).map_err(input)?;
    let sinks = resolve_sink(&args.sink, &file)?;
    let base: BaseVisibility = args.base.or(file.base).unwrap_or(BaseArg::Causal).into();
    let mask = build_mask(&layout, args.mask_type.into(), &sinks, base);
    match args.emit {
        EmitArg::Json => {
            let out = MaskFile {
                sink_spec: &sinks,
                diag_fallback: mask.diag_fallback(),
                allowed_cells: mask.allowed_cell_count(),
                mask: &mask,
            };
            write_json(&args.out, &out).map_err(runtime)?;
        }
        EmitArg::Pbm => {
            let matrix = mask.materialize(args.cap).map_err(input)?;
            fs::write(&args.out, pbm_string(&matrix, layout.seq_len()))
                .with_context(|| format!("writing {}", args.out.display()))
                .map_err(runtime)?;
        }
    }
    println!("mask {} over S={} -> {}", mask.mask_type(), layout.seq_len(), args.out.display());
    Ok(())
}

// ── synth ──────────────────────────────────────────────────────────────────

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output capture directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 8)]
    prompts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    head_dim: usize,
    /// Logit-space noise scale
    #[arg(long, default_value_t = 0.8)]
    noise_sigma: f64,
    /// Logit gain on pattern cells
    #[arg(long, default_value_t = 8.0)]
    logit_gain: f64,
    /// Planted pattern per head: mixed draws uniformly over the four types
    #[arg(long, value_enum, default_value = "mixed")]
    pattern: PatternArg,
    #[arg(long, default_value_t = 2)]
    min_images: usize,
    #[arg(long, default_value_t = 4)]
    max_images: usize,
    #[arg(long, default_value_t = 32)]
    min_image_tokens: usize,
    #[arg(long, default_value_t = 64)]
    max_image_tokens: usize,
    #[arg(long, default_value_t = 12)]
    max_text_tokens: usize,
    #[arg(long, value_enum)]
    base: Option<BaseArg>,
    /// Model name written to the manifest
    #[arg(long, default_value = "synthetic")]
    model_name: String,
    /// Overwrite an existing capture directory
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    sink: SinkFlags,
    #[command(flatten)]
    common: CommonFlags,
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    let file = FileConfig::load(args.common.config.as_deref())?;
    if args.min_images < 1 || args.min_images > args.max_images {
        return Err(input(anyhow!("image count range {}..{} is invalid", args.min_images, args.max_images)));
    }
    if args.min_image_tokens < 1 || args.min_image_tokens > args.max_image_tokens {
        return Err(input(anyhow!(
            "image token range {}..{} is invalid",
            args.min_image_tokens,
            args.max_image_tokens
        )));
    }
    let cfg = SynthSetConfig {
        layers: args.layers,
        heads: args.heads,
        prompts: args.prompts,
        seed: args.seed,
        head_dim: args.head_dim,
        noise_sigma: args.noise_sigma,
        logit_gain: args.logit_gain,
        pattern: args.pattern.into(),
        layout: RandomLayoutParams {
            min_images: args.min_images,
            max_images: args.max_images,
            min_image_tokens: args.min_image_tokens,
            max_image_tokens: args.max_image_tokens,
            max_text_tokens: args.max_text_tokens,
        },
        sinks: resolve_sink(&args.sink, &file)?,
        base: args.base.or(file.base).unwrap_or(BaseArg::Causal).into(),
    };
    let set = write_synth_capture(&cfg, &args.model_name, &args.out, args.force)
        .map_err(|e| match e.downcast_ref::<crate::capture::CaptureError>() {
            Some(crate::capture::CaptureError::AlreadyExists { .. }) => input(e),
            _ => runtime(e),
        })?;
    println!(
        "synthesized {} prompts x {}x{} heads (d={}) -> {}",
        set.prompts.len(),
        cfg.layers,
        cfg.heads,
        cfg.head_dim,
        args.out.display()
    );
    Ok(())
}

// ── sinkfind ───────────────────────────────────────────────────────────────

#[derive(Args, Debug)]
pub struct SinkfindArgs {
    /// Capture directory with uniform-length images
    #[arg(long)]
    capture: PathBuf,
    /// Output offsets JSON
    #[arg(long)]
    out: PathBuf,
    /// Fraction of image length kept as sinks
    #[arg(long)]
    top_frac: Option<f64>,
    /// Uniform image length (defaults to the first image in the capture)
    #[arg(long)]
    image_len: Option<usize>,
    #[arg(long, value_enum)]
    base: Option<BaseArg>,
    #[command(flatten)]
    common: CommonFlags,
}

#[derive(Serialize)]
struct SinkfindFile {
    base: BaseVisibility,
    #[serde(flatten)]
    discovery: SinkDiscovery,
}

fn cmd_sinkfind(args: SinkfindArgs) -> CliResult {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let top_fraction = args.top_frac.or(file.top_fraction).unwrap_or(0.1);
    // Fixed-offset sinks are a Gemma-style phenomenon, so the base
    // defaults to bidirectional images here.
    let base: BaseVisibility = args.base.or(file.base).unwrap_or(BaseArg::Gemma).into();
    let reader = CaptureReader::open(&args.capture).map_err(input)?;
    let image_len = match args.image_len {
        Some(l) => l,
        None => reader
            .layouts()
            .iter()
            .flat_map(|(_, layout)| layout.images().next())
            .map(|img| img.len())
            .next()
            .ok_or_else(|| input(anyhow!("capture contains no images")))?,
    };
    let mut acc = SinkAccumulator::new(image_len, top_fraction, base).map_err(input)?;
    for capture in reader.prompts() {
        let capture = capture.map_err(input)?;
        acc.add_prompt(&capture).map_err(input)?;
    }
    let discovery = acc.finish();
    write_json(&args.out, &SinkfindFile { base, discovery: discovery.clone() })
        .map_err(runtime)?;
    println!(
        "sink offsets over {} samples: {:?} -> {}",
        discovery.histogram.samples,
        discovery.offsets,
        args.out.display()
    );
    Ok(())
}

// ── dispatch ───────────────────────────────────────────────────────────────

pub fn execute(cli: Cli) -> CliResult {
    match cli.command {
        Command::Characterize(args) => cmd_characterize(args),
        Command::Aggregate(args) => cmd_aggregate(args),
        Command::Flops(args) => cmd_flops(args),
        Command::Mask(args) => cmd_mask(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Sinkfind(args) => cmd_sinkfind(args),
    }
}
