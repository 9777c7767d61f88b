//! `vidattack` command-line interface.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 the attack did not
//! produce a verified adversarial example within its budget.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use vidattack::attack::{attack, AttackMode};
use vidattack::bench::{run_bench, Variant};
use vidattack::config::{DatasetSpec, ExperimentConfig, VictimSpec, CONFIG_ENV};
use vidattack::metrics::{write_rows_csv, Report};
use vidattack::saliency::{mask_from_maps, maps_to_tensor, saliency_maps, SalienceRatio};
use vidattack::synthetic::{SyntheticData, SyntheticSpec};
use vidattack::temporal::PruneBound;
use vidattack::victim::{serve_victim, QueryRecord, QuerySession};
use vidattack::zoo::StopReason;
use vidattack::{vbt, Dims, Error, Label};

#[derive(Parser)]
#[command(name = "vidattack", version, about = "Hard-label black-box attacks on video classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attack one video and write the report and adversarial example.
    Attack(AttackArgs),
    /// Compare the baseline attack with its sparse variants over a dataset.
    Bench(BenchArgs),
    /// Generate a synthetic dataset and its victim.
    GenDataset(GenArgs),
    /// Export per-frame saliency maps and the spatial mask of a video.
    Saliency(SaliencyArgs),
    /// Serve the configured victim over HTTP.
    ServeVictim(ServeArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON, "schema": 1). Defaults apply when absent.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Dataset directory (overrides the config's dataset).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Victim URL (overrides the config's victim).
    #[arg(long)]
    victim_url: Option<String>,
}

#[derive(Args)]
struct AttackOverrides {
    /// Seed for candidate sampling and gradient draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Key-frame bound; a number or "inf".
    #[arg(long)]
    omega: Option<String>,
    /// Fraction of each frame kept by the spatial mask, in (0, 1].
    #[arg(long)]
    phi: Option<f64>,
    /// Optimizer iteration cap.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Query budget for the whole attack.
    #[arg(long)]
    budget: Option<u64>,
    /// Candidate starting videos drawn from other classes.
    #[arg(long)]
    n_init: Option<usize>,
    /// Perturb every frame (skip key-frame selection).
    #[arg(long)]
    no_temporal: bool,
    /// Perturb every pixel (skip the saliency mask).
    #[arg(long)]
    no_spatial: bool,
    /// Targeted attack towards this label.
    #[arg(long)]
    target: Option<usize>,
    /// Record every query with its iteration and purpose.
    #[arg(long)]
    log_queries: bool,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    overrides: AttackOverrides,
    /// Video to attack (VBT1).
    #[arg(long)]
    input: PathBuf,
    /// True label of the input.
    #[arg(long)]
    label: usize,
    /// Output directory (report.json, x_adv.vbt, mask.vbt).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    overrides: AttackOverrides,
    /// Comma-separated: baseline,temporal,temporal_spatial.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Videos attacked in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// Attack only the first N videos.
    #[arg(long)]
    max_videos: Option<usize>,
    /// Report file; printed to standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the per-sample rows of every variant as CSV files next to
    /// the report.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of videos.
    #[arg(long)]
    samples: Option<usize>,
    /// Number of classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Geometry as TxWxHxC.
    #[arg(long)]
    dims: Option<String>,
    /// Frames the victim looks at (the rest are ignored).
    #[arg(long)]
    active_frames: Option<usize>,
    /// Standard deviation of the background noise.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct SaliencyArgs {
    /// Video (VBT1).
    #[arg(long)]
    input: PathBuf,
    /// Fraction of each frame to select.
    #[arg(long, default_value_t = 0.6)]
    phi: f64,
    /// Output directory (saliency.vbt, mask.vbt).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Address to listen on; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Attack(a) => cmd_attack(a),
        Command::Bench(b) => cmd_bench(b),
        Command::GenDataset(g) => cmd_gen_dataset(g),
        Command::Saliency(s) => cmd_saliency(s),
        Command::ServeVictim(s) => cmd_serve(s),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &args.dataset {
        config.dataset = DatasetSpec::Dir { path: dir.clone() };
    }
    if let Some(url) = &args.victim_url {
        config.victim = VictimSpec::Remote { url: url.clone() };
    }
    Ok(config)
}

fn apply_overrides(config: &mut ExperimentConfig, o: &AttackOverrides) -> Result<(), Failure> {
    let a = &mut config.attack;
    if let Some(seed) = o.seed {
        a.seed = seed;
    }
    if let Some(omega) = &o.omega {
        let value = serde_json::from_str::<PruneBound>(omega)
            .or_else(|_| serde_json::from_value::<PruneBound>(serde_json::Value::String(omega.clone())))
            .map_err(|e| usage(format!("invalid --omega {omega:?}: {e}")))?;
        a.omega = Some(value);
    }
    if let Some(phi) = o.phi {
        a.phi = Some(SalienceRatio::new(phi)?);
    }
    if let Some(i) = o.max_iterations {
        a.optimizer.max_iterations = i;
    }
    if let Some(b) = o.budget {
        a.optimizer.query_budget = Some(b);
    }
    if let Some(n) = o.n_init {
        a.n_init_candidates = n;
    }
    if o.no_temporal {
        a.enable_temporal = false;
    }
    if o.no_spatial {
        a.enable_spatial = false;
    }
    if let Some(t) = o.target {
        a.mode = AttackMode::Targeted { target: Some(Label(t)) };
    }
    if o.log_queries {
        config.log_queries = true;
    }
    config.validate()?;
    Ok(())
}

fn config_echo(config: &ExperimentConfig) -> Result<serde_json::Value, Failure> {
    serde_json::to_value(config).map_err(|e| usage(e.to_string()))
}

fn cmd_attack(args: AttackArgs) -> Result<u8, Failure> {
    let mut config = load_config(&args.config)?;
    apply_overrides(&mut config, &args.overrides)?;
    let x = vbt::read_tensor(&args.input).map_err(|e| usage(format!("{}: {e}", args.input.display())))?;
    let resolved = config.resolve()?;
    let mut session = QuerySession::new(resolved.victim.as_ref());
    if config.log_queries {
        session = session.with_logging();
    }
    let outcome = attack(&mut session, &x, Label(args.label), &config.attack, &resolved.dataset);
    let out_dir = args.output.clone().or_else(|| config.output.clone());

    let result = match outcome {
        Ok(r) => r,
        Err(e @ (Error::NoViableInitialization | Error::BudgetExhausted { .. })) => {
            return Err(Failure { code: 2, message: e.to_string() });
        }
        Err(e) => return Err(e.into()),
    };

    let id = args.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
    let mut report = Report::new(config_echo(&config)?, vec![result.metric_row(&id)])?;
    report.details = Some(serde_json::to_value(result.details()).map_err(|e| usage(e.to_string()))?);
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
        vbt::write_tensor(dir.join("x_adv.vbt"), &result.x_adv)?;
        vbt::write_mask(dir.join("mask.vbt"), &result.mask)?;
        if let Some(log) = session.take_log() {
            write_jsonl(&dir.join("queries.jsonl"), &log)?;
        }
    } else {
        println!("{}", report.to_json()?);
    }
    eprintln!(
        "{}: success={} queries={} map={:.4} stop={:?}",
        id, result.success, result.queries, result.map, result.stop
    );
    Ok(if result.success && result.stop != StopReason::BudgetExhausted { 0 } else { 2 })
}

fn write_jsonl(path: &Path, items: &[QueryRecord]) -> Result<(), Failure> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).map_err(|e| usage(e.to_string()))?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn parse_variant(name: &str) -> Result<Variant, Failure> {
    serde_json::from_value(serde_json::Value::String(name.trim().to_string()))
        .map_err(|_| usage(format!("unknown variant {name:?} (baseline, temporal, temporal_spatial)")))
}

fn cmd_bench(args: BenchArgs) -> Result<u8, Failure> {
    let mut config = load_config(&args.config)?;
    apply_overrides(&mut config, &args.overrides)?;
    if let Some(names) = &args.variants {
        config.bench.variants = names.iter().map(|n| parse_variant(n)).collect::<Result<_, _>>()?;
    }
    if let Some(j) = args.jobs {
        config.bench.jobs = j;
    }
    if let Some(m) = args.max_videos {
        config.bench.max_videos = Some(m);
    }
    config.validate()?;
    let resolved = config.resolve()?;
    let report = run_bench(
        resolved.victim.as_ref(),
        &resolved.dataset,
        &config.attack,
        &config.bench,
        config.log_queries,
        config_echo(&config)?,
    )?;
    let text = report.to_json()? + "\n";
    match args.output.clone().or_else(|| config.output.clone()) {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, &text)?;
            if args.csv {
                for v in &report.variants {
                    let name = serde_json::to_value(v.variant).ok().and_then(|s| s.as_str().map(String::from));
                    let csv_path = path.with_extension(format!("{}.csv", name.unwrap_or_default()));
                    write_rows_csv(fs::File::create(csv_path)?, &v.rows)?;
                }
            }
        }
        None => print!("{text}"),
    }
    for v in &report.variants {
        eprintln!(
            "{:?}: FR={:.3} MQ={} MAP={:?} S={:?}",
            v.variant, v.summary.fooling_rate, v.summary.median_queries, v.summary.map_mean, v.summary.sparsity_mean
        );
    }
    if let Some(cmp) = &report.comparison {
        for c in cmp {
            eprintln!("{:?}: query reduction {:.2}%", c.variant, 100.0 * c.query_reduction);
        }
    }
    Ok(0)
}

fn parse_dims(text: &str) -> Result<Dims, Failure> {
    let parts: Vec<usize> = text
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("invalid dims {text:?}, expected TxWxHxC")))?;
    match parts.as_slice() {
        [t, w, h, c] => Ok(Dims::new(*t, *w, *h, *c)?),
        _ => Err(usage(format!("invalid dims {text:?}, expected TxWxHxC"))),
    }
}

fn cmd_gen_dataset(args: GenArgs) -> Result<u8, Failure> {
    let mut spec = match &args.config {
        Some(path) => match ExperimentConfig::load(path)?.dataset {
            DatasetSpec::Synthetic(spec) => spec,
            DatasetSpec::Dir { .. } => SyntheticSpec::default(),
        },
        None => SyntheticSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.samples {
        spec.samples = n;
    }
    if let Some(k) = args.classes {
        spec.num_classes = k;
    }
    if let Some(d) = &args.dims {
        spec.dims = parse_dims(d)?;
        if args.active_frames.is_none() {
            spec.active_frames = spec.active_frames.map(|a| a.min(spec.dims.t));
        }
    }
    if let Some(a) = args.active_frames {
        spec.active_frames = Some(a);
    }
    if let Some(n) = args.noise {
        spec.noise = n;
    }
    let data = SyntheticData::generate(&spec)?;
    data.write(&args.out)?;
    eprintln!("wrote {} samples to {}", data.dataset.len(), args.out.display());
    Ok(0)
}

fn cmd_saliency(args: SaliencyArgs) -> Result<u8, Failure> {
    let phi = SalienceRatio::new(args.phi)?;
    let x = vbt::read_tensor(&args.input).map_err(|e| usage(format!("{}: {e}", args.input.display())))?;
    let maps = saliency_maps(&x)?;
    let mask = mask_from_maps(x.dims(), &maps, phi);
    fs::create_dir_all(&args.out)?;
    vbt::write_tensor(args.out.join("saliency.vbt"), &maps_to_tensor(&maps)?)?;
    vbt::write_mask(args.out.join("mask.vbt"), &mask)?;
    let degenerate = maps.iter().filter(|m| m.degenerate).count();
    eprintln!("{} frames, {} degenerate, {} of {} entries selected", maps.len(), degenerate, mask.count_ones(), x.dims().len());
    Ok(0)
}

fn cmd_serve(args: ServeArgs) -> Result<u8, Failure> {
    let config = load_config(&args.config)?;
    let resolved = config.resolve()?;
    let server = serve_victim(Arc::clone(&resolved.victim), &args.bind)?;
    // the first line of standard output is the base URL
    println!("{}", server.url());
    eprintln!("serving {} on {}", resolved.victim.dims(), server.url());
    server.join();
    Ok(0)
}
