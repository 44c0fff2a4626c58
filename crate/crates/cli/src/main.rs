use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use markhawk::evaluate::{
    abs_diff, default_grid_ranges, default_levels, default_mark_range, kernel_grid,
    model_kernel_grid, net_decay_scale, percentile, pit_values, predict, qq_curve,
    uniform_quantile_pairs, DEFAULT_RESOLUTION,
};
use markhawk::io::{self, default_trade_dims, DimLabel, FitMetadata, ModelDocument};
use markhawk::simulate::GeneratorSpec;
use markhawk::{
    fit, simulate, Error, EventSequence, FitConfig, FlooredGradient, MarkDensity, ModelKind, Result,
};

#[derive(Parser)]
#[command(
    name = "markhawk",
    version,
    about = "Marked Hawkes processes with neural kernels"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a generator spec by thinning
    Simulate(SimulateArgs),
    /// Fit a neural Hawkes model to events
    Fit(FitArgs),
    /// Fit per-dimension Gaussian-mixture mark densities into a model document
    DensityFit(DensityArgs),
    /// PIT/QQ calibration and kernel grids
    Evaluate(EvaluateArgs),
    /// Forecast event probabilities and counts by simulation
    Predict(PredictArgs),
    /// Kernel surface on a grid
    Grid(GridArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    CoupledExp,
    DecoupledLog,
    TwoDim,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Snh,
    Nnnh,
}

impl From<Kind> for ModelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Snh => ModelKind::LinearSnh,
            Kind::Nnnh => ModelKind::NonLinearNnnh,
        }
    }
}

/// Log-term gradient at events where the non-linear intensity is clamped to zero
#[derive(Clone, Copy, ValueEnum)]
enum OnFloor {
    /// Exact gradient (zero)
    Exact,
    /// Pre-clamp gradient scaled by the base rate
    BaseRate,
}

impl From<OnFloor> for FlooredGradient {
    fn from(f: OnFloor) -> Self {
        match f {
            OnFloor::Exact => FlooredGradient::Exact,
            OnFloor::BaseRate => FlooredGradient::BaseRate,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Generic,
    Trade,
}

#[derive(Args)]
struct EventInput {
    /// Event file
    #[arg(long)]
    events: PathBuf,
    #[arg(long, value_enum, default_value = "generic")]
    format: Format,
    /// Trade dimensions as `instrument:side`, in order
    #[arg(long = "dim", value_name = "LABEL")]
    dims: Vec<String>,
}

impl EventInput {
    fn load(&self) -> Result<EventSequence> {
        match self.format {
            Format::Generic => io::read_events_file(&self.events),
            Format::Trade => {
                let labels = if self.dims.is_empty() {
                    default_trade_dims()
                } else {
                    self.dims
                        .iter()
                        .map(|s| DimLabel::parse(s))
                        .collect::<Result<_>>()?
                };
                let out = io::ingest_trades(File::open(&self.events)?, &labels)?;
                for (d, l) in labels.iter().enumerate() {
                    log::info!(
                        "{}:{:?}: {} events, volume {}",
                        l.instrument,
                        l.side,
                        out.counts[d],
                        out.volumes[d]
                    );
                }
                Ok(out.sequence)
            }
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator spec (JSON)
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    horizon: f64,
    #[arg(long, env = "MARKHAWK_SEED", default_value_t = 0)]
    seed: u64,
    /// Keep only the first N events (the horizon shrinks to just after the last kept event)
    #[arg(long)]
    max_events: Option<usize>,
    /// Output CSV (default: stdout)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: EventInput,
    #[arg(long, value_enum, default_value = "snh")]
    kind: Kind,
    #[arg(long)]
    neurons: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_output: Option<f64>,
    #[arg(long)]
    lr_hidden: Option<f64>,
    #[arg(long)]
    lr_mu: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, value_enum)]
    on_floor: Option<OnFloor>,
    /// Kernel support cut-off in model time units
    #[arg(long)]
    lookback: Option<f64>,
    #[arg(long, env = "MARKHAWK_SEED", default_value_t = 0)]
    seed: u64,
    /// Model document to write
    #[arg(short, long)]
    output: PathBuf,
    /// Per-epoch trace CSV
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct DensityArgs {
    /// Model document, updated in place unless --output is given
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: EventInput,
    /// Number of mixture components
    #[arg(long, conflicts_with = "auto_k")]
    k: Option<usize>,
    /// Choose the component count in 1..=6 by BIC
    #[arg(long)]
    auto_k: bool,
    /// Fit the mixture to log-marks
    #[arg(long)]
    log_marks: bool,
    #[arg(long, env = "MARKHAWK_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: EventInput,
    /// First event index scored (default: the test split of the fit, or 0)
    #[arg(long)]
    start: Option<usize>,
    /// True generator spec for kernel error grids
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 99)]
    levels: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: EventInput,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 1000)]
    sims: usize,
    #[arg(long, env = "MARKHAWK_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Model document
    #[arg(long, conflicts_with = "spec", required_unless_present_any = ["spec", "preset"])]
    model: Option<PathBuf>,
    /// Generator spec (JSON)
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Target dimension
    #[arg(long, default_value_t = 0)]
    target: usize,
    /// Source dimension
    #[arg(long, default_value_t = 0)]
    source: usize,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    t_min: f64,
    #[arg(long)]
    m_min: Option<f64>,
    #[arg(long)]
    m_max: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION.0)]
    nt: usize,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION.1)]
    nm: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn load_spec(path: Option<&Path>, preset: Option<Preset>) -> Result<GeneratorSpec> {
    let spec = match (path, preset) {
        (Some(p), _) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?,
        (None, Some(Preset::CoupledExp)) => GeneratorSpec::coupled_exp_1d(),
        (None, Some(Preset::DecoupledLog)) => GeneratorSpec::decoupled_log_1d(),
        (None, Some(Preset::TwoDim)) => GeneratorSpec::two_dim_exp(),
        (None, None) => return Err(Error::Config("a spec file or preset is required".into())),
    };
    spec.validate()?;
    Ok(spec)
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let spec = load_spec(a.spec.as_deref(), a.preset)?;
    let mut seq = simulate(&spec, a.horizon, a.seed)?;
    if let Some(n) = a.max_events {
        seq = seq.truncated(n);
    }
    log::info!("simulated {} events", seq.len());
    let mut w = sink(a.output.as_deref())?;
    io::write_events_csv(&seq, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run_fit(a: FitArgs) -> Result<()> {
    let seq = a.input.load()?;
    let kind = ModelKind::from(a.kind);
    let mut config = FitConfig::for_kind(kind);
    config.seed = a.seed;
    config.lookback = a.lookback;
    if let Some(v) = a.neurons {
        config.neurons = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.lr_output {
        config.lr_output = v;
    }
    if let Some(v) = a.lr_hidden {
        config.lr_hidden = v;
    }
    if let Some(v) = a.lr_mu {
        config.lr_mu = v;
    }
    if let Some(v) = a.patience {
        config.patience = v;
    }
    if let Some(v) = a.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = a.on_floor {
        config.floored_gradient = v.into();
    }
    let (model, trace) = fit(&seq, kind, &config)?;
    if let Some(p) = &a.trace {
        let mut w = sink(Some(p))?;
        io::write_trace_csv(&trace, &mut w)?;
        w.flush()?;
    }
    let mut doc = ModelDocument::from_model(&model);
    doc.fit = Some(FitMetadata::new(&config, &trace));
    doc.save(&a.output)?;
    println!(
        "selected epoch {} with validation log-likelihood {:?}",
        trace.selected_epoch,
        trace.best_valid_ll()
    );
    Ok(())
}

fn run_density(a: DensityArgs) -> Result<()> {
    let mut doc = ModelDocument::load(&a.model)?;
    let seq = a.input.load()?;
    if seq.dims() != doc.dims {
        return Err(Error::Precondition(format!(
            "events have {} dimensions, model has {}",
            seq.dims(),
            doc.dims
        )));
    }
    let k = if a.auto_k {
        None
    } else {
        Some(a.k.unwrap_or(1))
    };
    doc.mark_densities = (0..seq.dims())
        .map(|d| MarkDensity::fit(&seq.marks(d), k, a.log_marks, a.seed.wrapping_add(d as u64)))
        .collect::<Result<_>>()?;
    for (d, m) in doc.mark_densities.iter().enumerate() {
        println!("dimension {d}: {} components", m.gmm.components());
    }
    doc.save(a.output.as_deref().unwrap_or(&a.model))
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let doc = ModelDocument::load(&a.model)?;
    let model = doc.to_model()?;
    let seq = a.input.load()?;
    let start = a
        .start
        .or(doc.fit.as_ref().map(|f| f.split_points.1))
        .unwrap_or(0);
    if start >= seq.len() {
        return Err(Error::Precondition(format!(
            "start index {start} leaves no events to score"
        )));
    }
    std::fs::create_dir_all(&a.out_dir)?;
    let out = |name: &str| a.out_dir.join(name);

    let u = pit_values(&model, &seq, start)?;
    let curve = qq_curve(&u, &default_levels(a.levels))?;
    let mut w = sink(Some(&out("qq.csv")))?;
    io::write_qq_csv(&curve, &mut w)?;
    w.flush()?;
    let mut w = sink(Some(&out("pit.csv")))?;
    io::write_pit_csv(&seq, start, &u, &mut w)?;
    w.flush()?;
    let mut w = sink(Some(&out("quantiles.csv")))?;
    io::write_quantile_pairs_csv(&uniform_quantile_pairs(&u), &mut w)?;
    w.flush()?;

    let truth = a
        .truth
        .as_deref()
        .map(|p| load_spec(Some(p), None))
        .transpose()?;
    let dims = model.dims();
    for d in 0..dims {
        for j in 0..dims {
            let marks = seq.marks(j);
            let (t_range, m_range) = match &truth {
                Some(spec) => default_grid_ranges(spec.kernel(d, j), &marks)?,
                None => {
                    let s = model.scaling();
                    let median = percentile(&marks, 0.5)?;
                    let scale = net_decay_scale(model.kernel(d, j), median * s.mark_scale[j])
                        / s.time_scale;
                    ((0.0, 4.0 * scale), default_mark_range(&marks)?)
                }
            };
            let fitted = model_kernel_grid(&model, d, j, t_range, m_range, DEFAULT_RESOLUTION)?;
            let mut w = sink(Some(&out(&format!("grid_{d}_{j}.csv"))))?;
            io::write_grid_csv(&fitted, &mut w)?;
            w.flush()?;
            if let Some(spec) = &truth {
                let k = spec.kernel(d, j);
                let true_grid =
                    kernel_grid(|t, m| k.eval(t, m), t_range, m_range, DEFAULT_RESOLUTION)?;
                let err = abs_diff(&fitted, &true_grid)?;
                println!(
                    "kernel ({d},{j}): mean abs error {} (true peak {})",
                    err.mean_abs(),
                    true_grid.max_abs()
                );
                let mut w = sink(Some(&out(&format!("error_grid_{d}_{j}.csv"))))?;
                io::write_grid_csv(&err, &mut w)?;
                w.flush()?;
            }
        }
    }
    println!(
        "scored {} events; max |coverage - q| = {}",
        u.len(),
        curve.max_deviation()
    );
    Ok(())
}

fn run_predict(a: PredictArgs) -> Result<()> {
    let doc = ModelDocument::load(&a.model)?;
    if doc.mark_densities.is_empty() {
        return Err(Error::Precondition(
            "the model document has no mark densities; run density-fit first".into(),
        ));
    }
    let model = doc.to_model()?;
    let seq = a.input.load()?;
    let f = predict(&model, &doc.mark_densities, &seq, a.delta, a.sims, a.seed)?;
    let mut w = sink(a.output.as_deref())?;
    io::write_forecast_csv(&f, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run_grid(a: GridArgs) -> Result<()> {
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| Error::Config(format!("--{name} is required")))
    };
    let grid = if let Some(p) = &a.model {
        let model = ModelDocument::load(p)?.to_model()?;
        if a.target >= model.dims() || a.source >= model.dims() {
            return Err(Error::Config("dimension out of range".into()));
        }
        let (m_min, m_max) = (need(a.m_min, "m-min")?, need(a.m_max, "m-max")?);
        let t_max = match a.t_max {
            Some(t) => t,
            None => {
                let s = model.scaling();
                let mid = 0.5 * (m_min + m_max) * s.mark_scale[a.source];
                4.0 * net_decay_scale(model.kernel(a.target, a.source), mid) / s.time_scale
            }
        };
        model_kernel_grid(
            &model,
            a.target,
            a.source,
            (a.t_min, t_max),
            (m_min, m_max),
            (a.nt, a.nm),
        )?
    } else {
        let spec = load_spec(a.spec.as_deref(), a.preset)?;
        if a.target >= spec.dims || a.source >= spec.dims {
            return Err(Error::Config("dimension out of range".into()));
        }
        let (m_min, m_max) = (need(a.m_min, "m-min")?, need(a.m_max, "m-max")?);
        let k = spec.kernel(a.target, a.source);
        let t_max = a
            .t_max
            .unwrap_or_else(|| 4.0 * k.decay_scale(0.5 * (m_min + m_max)));
        kernel_grid(
            |t, m| k.eval(t, m),
            (a.t_min, t_max),
            (m_min, m_max),
            (a.nt, a.nm),
        )?
    };
    let mut w = sink(a.output.as_deref())?;
    io::write_grid_csv(&grid, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Fit(a) => run_fit(a),
        Command::DensityFit(a) => run_density(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Predict(a) => run_predict(a),
        Command::Grid(a) => run_grid(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprintln!(
                "ERROR usage: {}",
                text.trim_start_matches("error: ").trim_end()
            );
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR {}: {e}", e.code());
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
