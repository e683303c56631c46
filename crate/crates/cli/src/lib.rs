//! `lpmm` command-line tool.
//!
//! Every subcommand reads artifacts from flat files, prints a short human
//! summary (or one JSON document with `--json`) and writes results to `--out`.
//! Exit status: 0 on success, 2 for invalid input, 3 when the input is
//! well-formed but mathematically unusable, 1 for I/O failures.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lpmm_core::adaptor::AdaptorArtifact;
use lpmm_core::{
    apply_blendshapes, build_lpmm, deserialize_blendshape, deserialize_model, fit_params, interpolation_frames,
    nme_sweep, parse_landmark_records, reconstruct, scale_from_base, serialize_adaptor, serialize_blendshape,
    serialize_model, train_adaptor, Blendshape, ComponentCount, DatasetFormat, ErrorKind, LandmarkDataset,
    LossVariant, LpmmModel, ParamVector, RasterConfig, SurrogateStack, TrainConfig,
};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "lpmm", version, about = "Landmark-parameter morphable model toolkit")]
pub struct Cli {
    /// Print machine-readable JSON instead of a summary.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a model from a JSONL landmark dataset.
    Build {
        #[arg(long)]
        dataset: PathBuf,
        /// Components to keep; defaults to min(2n, N - 1).
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit degree-k parameters to every record of a dataset.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        k: usize,
        /// JSONL output, one `{id, frame, params}` per record.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a parameter vector back into landmarks.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        /// JSON array, e.g. `[0.1,-0.2]`.
        #[arg(long)]
        params: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply blendshapes, scale or interpolate a parameter vector.
    Edit(EditArgs),
    /// Train the parameter-to-latent adaptor against the surrogate renderer.
    TrainAdaptor(TrainArgs),
    /// Report NME of degree-k reconstructions over a dataset.
    EvalNme {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Degrees to evaluate; repeat or comma-separate. Defaults to 1, 2, 3, 5, 10 and m.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Validate a model file and write it out, optionally truncated to k components.
    ExportModel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "lpmm-state")]
        state_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Starting parameters as a JSON array; defaults to the base pose of degree `--k`.
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// `PATH=WEIGHT` of a blendshape file; repeatable.
    #[arg(long = "apply", value_name = "PATH=WEIGHT")]
    pub apply: Vec<String>,
    /// Scale the result about the base pose.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Interpolate from the result to this JSON array instead of returning it.
    #[arg(long)]
    pub to: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Save the result as a blendshape with this name (requires `--out`).
    #[arg(long)]
    pub save_as: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Rgb,
    Latent,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Seed for initialization and batch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Rgb)]
    pub variant: VariantArg,
    #[arg(long)]
    pub no_pose_reg: bool,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_rgb: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_pose_reg: f64,
    #[arg(long, default_value_t = 0)]
    pub surrogate_seed: u64,
    /// Latent width of the surrogate encoder.
    #[arg(long, default_value_t = 16)]
    pub w: usize,
    /// Square raster side in pixels.
    #[arg(long, default_value_t = 64)]
    pub raster: usize,
    #[arg(long, default_value_t = 0.02)]
    pub sigma: f64,
    /// Adaptor file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional training report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Failure of a CLI run, carrying the exit status it maps to.
#[derive(Debug)]
pub enum CliError {
    Core(lpmm_core::Error),
    Io { path: PathBuf, source: io::Error },
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Domain => 3,
                ErrorKind::Io => 1,
                ErrorKind::Validation | ErrorKind::Conflict | ErrorKind::NotFound => 2,
            },
            CliError::Io { .. } => 1,
            CliError::Usage(_) => 2,
        }
    }

    pub fn code(&self) -> &str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "invalid_arguments",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl From<lpmm_core::Error> for CliError {
    fn from(e: lpmm_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Result of a subcommand: a one-line summary and the JSON form.
pub struct Report {
    pub summary: String,
    pub json: Value,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_model(path: &Path) -> CliResult<LpmmModel> {
    Ok(deserialize_model(&read_bytes(path)?)?)
}

pub fn load_dataset(path: &Path) -> CliResult<LandmarkDataset> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(parse_landmark_records(BufReader::new(file), DatasetFormat::Jsonl)?.canonicalize()?)
}

fn parse_params(text: &str) -> CliResult<ParamVector> {
    let values: Vec<f64> =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("parameters must be a JSON array of numbers: {e}")))?;
    Ok(ParamVector::new(values)?)
}

fn parse_weighted(spec: &str) -> CliResult<(PathBuf, f64)> {
    let (path, weight) = spec
        .rsplit_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected PATH=WEIGHT, got {spec:?}")))?;
    let weight: f64 = weight
        .parse()
        .map_err(|_| CliError::Usage(format!("weight {weight:?} is not a number")))?;
    Ok((PathBuf::from(path), weight))
}

fn summary_json(model: &LpmmModel) -> Value {
    json!({
        "n": model.n(),
        "m": model.m(),
        "eigenvalues": model.eigenvalues(),
        "fingerprint": model.fingerprint(),
    })
}

fn points_json(l: &lpmm_core::LandmarkSet) -> Value {
    json!(l.to_points())
}

pub fn run(cli: Cli) -> CliResult<Report> {
    match cli.command {
        Command::Build { dataset, m, out } => {
            let data = load_dataset(&dataset)?;
            let count = m.map_or(ComponentCount::Auto, ComponentCount::Fixed);
            let model = build_lpmm(&data, count)?;
            write_bytes(&out, &serialize_model(&model))?;
            Ok(Report {
                summary: format!(
                    "built model from {} samples: n = {}, m = {}, wrote {}",
                    data.len(),
                    model.n(),
                    model.m(),
                    out.display()
                ),
                json: summary_json(&model),
            })
        }
        Command::Fit { model, dataset, k, out } => {
            let model = load_model(&model)?;
            let data = load_dataset(&dataset)?;
            let mut rows = Vec::with_capacity(data.len());
            for r in data.records() {
                let p = fit_params(&model, &r.landmarks, k)?;
                rows.push(json!({"id": r.id, "frame": r.frame, "params": p}));
            }
            if let Some(out) = &out {
                let mut text = String::new();
                for row in &rows {
                    text.push_str(&row.to_string());
                    text.push('\n');
                }
                write_bytes(out, text.as_bytes())?;
            }
            Ok(Report {
                summary: format!("fitted {} records at k = {k}", rows.len()),
                json: Value::Array(rows),
            })
        }
        Command::Reconstruct { model, params, out } => {
            let model = load_model(&model)?;
            let l = reconstruct(&model, &parse_params(&params)?)?;
            let json = json!({"points": points_json(&l)});
            if let Some(out) = &out {
                write_bytes(out, json.to_string().as_bytes())?;
            }
            Ok(Report {
                summary: format!("reconstructed {} points", l.len()),
                json,
            })
        }
        Command::Edit(args) => edit(args),
        Command::TrainAdaptor(args) => train(args),
        Command::EvalNme { model, dataset, k } => {
            let model = load_model(&model)?;
            let data = load_dataset(&dataset)?;
            let ks = if k.is_empty() {
                let mut ks: Vec<usize> = [1, 2, 3, 5, 10].into_iter().filter(|&k| k < model.m()).collect();
                ks.push(model.m());
                ks
            } else {
                k
            };
            let reports = nme_sweep(&model, &data, &ks)?;
            let lines: Vec<String> = reports
                .iter()
                .map(|r| format!("k = {:>3}  mean NME {:.6e}  ({} skipped)", r.k.unwrap_or(0), r.mean, r.skipped))
                .collect();
            Ok(Report {
                summary: lines.join("\n"),
                json: serde_json::to_value(&reports).expect("reports serialize"),
            })
        }
        Command::ExportModel { model, k, out } => {
            let model = load_model(&model)?;
            let model = match k {
                Some(k) => truncate(&model, k)?,
                None => model,
            };
            write_bytes(&out, &serialize_model(&model))?;
            Ok(Report {
                summary: format!("wrote model with m = {} to {}", model.m(), out.display()),
                json: summary_json(&model),
            })
        }
        Command::Serve { host, port, state_dir } => {
            let config = lpmm_service::ServerConfig { host, port, state_dir };
            let runtime = tokio::runtime::Runtime::new().map_err(io_err(Path::new("<runtime>")))?;
            runtime
                .block_on(lpmm_service::run_server(config.clone()))
                .map_err(io_err(&config.state_dir))?;
            Ok(Report {
                summary: "server stopped".into(),
                json: json!({"stopped": true}),
            })
        }
    }
}

/// Keeps the leading `k` components of a model.
pub fn truncate(model: &LpmmModel, k: usize) -> CliResult<LpmmModel> {
    if k == 0 || k > model.m() {
        return Err(lpmm_core::Error::DegreeOutOfRange { k, max: model.m() }.into());
    }
    let columns = (0..k).map(|i| model.basis().column(i).iter().copied().collect()).collect();
    Ok(LpmmModel::from_parts(
        model.n(),
        model.mean().iter().copied().collect(),
        columns,
        model.eigenvalues()[..k].to_vec(),
        model.dataset_fingerprint().to_string(),
        model.build_info().cloned(),
    )?)
}

fn edit(args: EditArgs) -> CliResult<Report> {
    let model = load_model(&args.model)?;
    let mut p = match (&args.params, args.k) {
        (Some(text), _) => parse_params(text)?,
        (None, Some(k)) => ParamVector::zeros(k),
        (None, None) => return Err(CliError::Usage("give --params or --k".into())),
    };
    if p.k() > model.m() {
        return Err(lpmm_core::Error::DegreeOutOfRange { k: p.k(), max: model.m() }.into());
    }

    let mut shapes = Vec::new();
    for spec in &args.apply {
        let (path, weight) = parse_weighted(spec)?;
        shapes.push((deserialize_blendshape(&read_bytes(&path)?, model.fingerprint())?, weight));
    }
    if !shapes.is_empty() {
        let weighted: Vec<(&Blendshape, f64)> = shapes.iter().map(|(b, w)| (b, *w)).collect();
        p = apply_blendshapes(&p, &weighted)?;
    }
    if let Some(alpha) = args.scale {
        p = scale_from_base(&p, alpha)?;
    }

    if let Some(to) = &args.to {
        let frames = interpolation_frames(&p, &parse_params(to)?, args.steps)?;
        let json = json!({"frames": frames});
        if let Some(out) = &args.out {
            write_bytes(out, json.to_string().as_bytes())?;
        }
        return Ok(Report {
            summary: format!("{} interpolation frames", frames.len()),
            json,
        });
    }

    if let Some(name) = &args.save_as {
        let out = args
            .out
            .as_ref()
            .ok_or_else(|| CliError::Usage("--save-as requires --out".into()))?;
        let b = Blendshape::new(name.clone(), p.clone(), "")?;
        write_bytes(out, &serialize_blendshape(&b, model.fingerprint()))?;
    } else if let Some(out) = &args.out {
        write_bytes(out, json!({"params": p}).to_string().as_bytes())?;
    }
    Ok(Report {
        summary: format!("params {:?}", p.as_slice()),
        json: json!({"params": p}),
    })
}

fn train(args: TrainArgs) -> CliResult<Report> {
    let model = load_model(&args.model)?;
    let data = load_dataset(&args.dataset)?;
    let raster = RasterConfig {
        height: args.raster,
        width: args.raster,
        sigma: args.sigma,
    };
    let stack = SurrogateStack::from_config(
        &lpmm_core::SurrogateConfig {
            seed: args.surrogate_seed,
            w: args.w,
            raster,
        },
        &model.mean_landmarks(),
    )?;
    let cfg = TrainConfig {
        k: args.k,
        learning_rate: args.lr,
        lambda_rgb: args.lambda_rgb,
        lambda_pose_reg: args.lambda_pose_reg,
        batch_size: args.batch_size,
        steps: args.steps,
        seed: args.seed,
        loss_variant: match args.variant {
            VariantArg::Rgb => LossVariant::Rgb,
            VariantArg::Latent => LossVariant::Latent,
        },
        pose_reg_enabled: !args.no_pose_reg,
        ..TrainConfig::default()
    };
    let (net, report) = train_adaptor(&model, &stack, &data, &cfg)?;
    let artifact = AdaptorArtifact {
        net,
        train_config: cfg,
        surrogate_seed: args.surrogate_seed,
        model_fingerprint: model.fingerprint().into(),
    };
    write_bytes(&args.out, &serialize_adaptor(&artifact))?;
    let json = serde_json::to_value(&report).expect("report serializes");
    if let Some(path) = &args.report {
        write_bytes(path, serde_json::to_string_pretty(&json).expect("json").as_bytes())?;
    }
    let final_rgb = report.final_loss.map_or(f64::NAN, |l| l.rgb);
    Ok(Report {
        summary: format!(
            "{} steps: reconstruction loss {:.4e} -> {final_rgb:.4e}, pose residual {:.3e}, wrote {}",
            report.steps_completed,
            report.initial.rgb,
            report.final_pose_residual,
            args.out.display()
        ),
        json,
    })
}

/// Parses arguments, runs the command and prints the outcome.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let as_json = cli.json;
    match run(cli) {
        Ok(report) => {
            let _ = if as_json {
                writeln!(stdout, "{}", report.json)
            } else {
                writeln!(stdout, "{}", report.summary)
            };
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = if as_json {
                writeln!(stderr, "{}", json!({"error": {"code": e.code(), "message": e.to_string()}}))
            } else {
                writeln!(stderr, "error: {e}")
            };
            ExitCode::from(e.exit_code())
        }
    }
}
