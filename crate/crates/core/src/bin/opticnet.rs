use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use opticnet::checkpoint;
use opticnet::config::RunConfig;
use opticnet::data::{self, Dataset};
use opticnet::gradcheck::{self, GradReport, Suite};
use opticnet::metrics::{default_oct2017_penalties, PenaltyMatrix};
use opticnet::opticnet::audit::{self, Census};
use opticnet::opticnet::features::export_feature_maps;
use opticnet::opticnet::{Model, Variant};
use opticnet::training::{cross_validate, evaluate, train, Evaluation, TrainOutputs};
use opticnet::Error;

#[derive(Parser, Debug)]
#[command(
    name = "opticnet",
    version,
    about = "Train, evaluate and inspect Optic-Net retinal OCT classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write log.csv, best.optn and report.txt to a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on an image tree.
    Eval(EvalArgs),
    /// Print the layer table, parameter census and FLOP estimate of a variant.
    Audit(AuditArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic class-per-directory PNG dataset.
    Synth(SynthArgs),
    /// Export the alpha, beta and tau signals of one stage's building block.
    ExportFeatures(ExportArgs),
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// opticnet47, opticnet63 or opticnet71.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    input_size: Option<usize>,
    /// Middle kernel of the residual convolution units.
    #[arg(long)]
    mid_kernel: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Image tree: <data>/<class>/* or <data>/train/<class>/* (+ <data>/test).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Separate validation tree.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Train on a generated dataset instead of --data.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    synth_classes: Option<usize>,
    #[arg(long)]
    synth_per_class: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// k-fold cross-validation on the training set, one fresh model per fold.
    #[arg(long)]
    kfold: Option<usize>,
    /// `oct2017` or a penalty grid file.
    #[arg(long)]
    penalties: Option<String>,
    /// Defaults to runs/<timestamp>.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra key=value settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Model settings; defaults to run.cfg next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// `oct2017` or a penalty grid file.
    #[arg(long)]
    penalties: Option<String>,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[arg(long, default_value = "opticnet71")]
    variant: String,
    #[arg(long, default_value_t = 224)]
    input_size: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long)]
    mid_kernel: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// layers, block, chain or all.
    #[arg(long, default_value = "all")]
    suite: String,
    /// Number of random draws per probe.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
    tol: f64,
    /// Per-tensor results as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    per_class: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synthetic")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Building block to export, 1 to 4.
    #[arg(long)]
    stage: usize,
    /// Weights; a freshly initialized model is used without one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Input image; a synthetic sample is used without one.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value = "features.optn")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn bad_input(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::CheckpointMismatch { .. } | Error::Checkpoint(_)) => 3,
        Some(Error::Config(_) | Error::Dataset(_) | Error::Io(_) | Error::Image { .. }) => 2,
        _ => 1,
    }
}

fn init_threads() -> Result<()> {
    let threads = match std::env::var("OPTICNET_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                bad_input(format!("OPTICNET_THREADS=`{v}` is not a positive integer"))
            })?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("thread pool")?;
    Ok(())
}

fn apply_model_args(cfg: &mut RunConfig, m: &ModelArgs) -> Result<()> {
    if let Some(v) = &m.variant {
        cfg.set("variant", v)?;
    }
    if let Some(s) = m.input_size {
        cfg.input_size = s;
    }
    if let Some(k) = m.mid_kernel {
        cfg.mid_kernel = k;
    }
    Ok(())
}

fn penalties_for(spec: &str, ds: &Dataset) -> Result<Option<PenaltyMatrix>> {
    let matrix = match spec {
        "" => return Ok(None),
        "oct2017" => default_oct2017_penalties(),
        path => {
            let p = Path::new(path);
            if !p.is_file() {
                return Err(bad_input(format!("penalty file {} not found", p.display())));
            }
            PenaltyMatrix::load(p)?
        }
    };
    Ok(Some(matrix.aligned_to(&ds.class_names)?))
}

fn metrics_report(
    title: &str,
    e: &Evaluation,
    penalties: Option<&PenaltyMatrix>,
) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "== {title} ({} samples) ==", e.confusion.total())?;
    write!(out, "{}", e.confusion)?;
    writeln!(out, "loss        : {:.6}", e.loss)?;
    write!(out, "{}", e.confusion.summary(penalties)?)?;
    Ok(out)
}

fn load_tree(path: &Path, size: usize) -> Result<Dataset> {
    if !path.is_dir() {
        return Err(bad_input(format!(
            "data path {} is not a directory",
            path.display()
        )));
    }
    let (ds, report) = data::load_image_tree(path, size, size)?;
    if !report.skipped.is_empty() {
        eprintln!(
            "warning: skipped {} undecodable file(s) under {}",
            report.skipped.len(),
            path.display()
        );
    }
    Ok(ds)
}

/// Training set and optional test set of a data root.
fn load_data(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>)> {
    if cfg.synthetic {
        let ds = data::make_synthetic(
            cfg.synth_classes,
            cfg.synth_per_class,
            cfg.input_size,
            cfg.input_size,
            cfg.train.seed,
        )?;
        return Ok((ds, None));
    }
    let root = cfg
        .data
        .as_ref()
        .ok_or_else(|| bad_input("give --data or --synthetic"))?;
    if !root.is_dir() {
        return Err(bad_input(format!(
            "data path {} is not a directory",
            root.display()
        )));
    }
    if root.join("train").is_dir() {
        let train = load_tree(&root.join("train"), cfg.input_size)?;
        let test = root.join("test");
        let test = if test.is_dir() {
            Some(load_tree(&test, cfg.input_size)?)
        } else {
            None
        };
        Ok((train, test))
    } else {
        Ok((load_tree(root, cfg.input_size)?, None))
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_model_args(&mut cfg, &args.model)?;
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
    }
    if let Some(v) = &args.val {
        cfg.val = Some(v.clone());
    }
    cfg.synthetic |= args.synthetic;
    let t = &mut cfg.train;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.steps {
        t.max_steps = Some(v);
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.synth_classes {
        cfg.synth_classes = v;
    }
    if let Some(v) = args.synth_per_class {
        cfg.synth_per_class = v;
    }
    if let Some(v) = args.val_fraction {
        cfg.val_fraction = v;
    }
    if let Some(v) = args.kfold {
        cfg.kfold = v;
    }
    if let Some(v) = &args.penalties {
        cfg.penalties = v.clone();
    }
    if let Some(v) = &args.run_dir {
        cfg.run_dir = Some(v.clone());
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| bad_input(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;

    let (full, test) = load_data(&cfg)?;
    let (train_set, val_set) = if let Some(v) = &cfg.val {
        (full, Some(load_tree(v, cfg.input_size)?))
    } else if cfg.val_fraction > 0.0 {
        let (a, b) = data::split_stratified(&full, 1.0 - cfg.val_fraction, cfg.train.seed)?;
        (a, Some(b))
    } else {
        (full, None)
    };
    let k = train_set.k();
    let model_cfg = cfg.model_config(k);
    model_cfg.validate()?;
    let penalties = penalties_for(&cfg.penalties, &train_set)?;

    let run_dir = cfg.run_dir.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(chrono::Local::now().format("%Y%m%d-%H%M%S").to_string())
    });
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    fs::write(run_dir.join("run.cfg"), cfg.to_text(Some(k)))?;
    let mut report = String::new();
    writeln!(
        report,
        "model {} input {}x{} classes {k}",
        cfg.variant, cfg.input_size, cfg.input_size
    )?;

    if cfg.kfold >= 2 {
        let folds = cross_validate::<f32>(&model_cfg, &train_set, &cfg.train, cfg.kfold, |f| {
            TrainOutputs {
                log_csv: Some(run_dir.join(format!("fold{f}")).join("log.csv")),
                best_checkpoint: Some(run_dir.join(format!("fold{f}")).join("best.optn")),
            }
        })?;
        let mut accs = Vec::new();
        for f in &folds {
            accs.push(f.validation.accuracy());
            report.push_str(&metrics_report(
                &format!("fold {} validation", f.fold),
                &f.validation,
                penalties.as_ref(),
            )?);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        writeln!(
            report,
            "cross-validation mean accuracy: {:.2}%",
            100.0 * mean
        )?;
        println!(
            "cross-validation over {} folds: mean validation accuracy {:.2}%",
            folds.len(),
            100.0 * mean
        );
    } else {
        let mut model = Model::<f32>::new(model_cfg, cfg.train.seed)?;
        let best = run_dir.join("best.optn");
        let outputs = TrainOutputs {
            log_csv: Some(run_dir.join("log.csv")),
            best_checkpoint: Some(best.clone()),
        };
        let outcome = train(
            &mut model,
            &train_set,
            val_set.as_ref(),
            &cfg.train,
            &outputs,
        )?;
        match outcome.best {
            Some((epoch, loss)) => {
                checkpoint::load_store(&mut model.params, &best)?;
                writeln!(
                    report,
                    "best epoch {epoch} (monitored loss {loss:.6}), {} optimizer steps",
                    outcome.steps
                )?;
            }
            None => {
                checkpoint::save_store(&model.params, &best)?;
                writeln!(report, "no epochs run; best.optn holds the initial weights")?;
            }
        }
        if !outcome.epochs.is_empty() {
            let e = evaluate(&mut model, &train_set, cfg.train.batch_size)?;
            println!("final train accuracy: {:.2}%", 100.0 * e.accuracy());
            report.push_str(&metrics_report("train", &e, penalties.as_ref())?);
            if let Some(v) = &val_set {
                report.push_str(&metrics_report(
                    "validation",
                    &evaluate(&mut model, v, cfg.train.batch_size)?,
                    penalties.as_ref(),
                )?);
            }
            if let Some(t) = &test {
                let e = evaluate(&mut model, t, cfg.train.batch_size)?;
                println!("test accuracy: {:.2}%", 100.0 * e.accuracy());
                report.push_str(&metrics_report("test", &e, penalties.as_ref())?);
            }
        }
    }
    fs::write(run_dir.join("report.txt"), &report)?;
    println!("run directory: {}", run_dir.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if !args.checkpoint.is_file() {
        return Err(bad_input(format!(
            "checkpoint {} not found",
            args.checkpoint.display()
        )));
    }
    let sibling = args
        .checkpoint
        .parent()
        .map(|d| d.join("run.cfg"))
        .filter(|p| p.is_file());
    let mut cfg = match args.config.as_ref().or(sibling.as_ref()) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_model_args(&mut cfg, &args.model)?;
    let ds = load_tree(&args.data, cfg.input_size)?;
    let penalties = penalties_for(args.penalties.as_deref().unwrap_or(&cfg.penalties), &ds)?;
    let mut model = Model::<f32>::new(cfg.model_config(ds.k()), args.seed)?;
    checkpoint::load_store(&mut model.params, &args.checkpoint)?;
    let e = evaluate(&mut model, &ds, args.batch_size)?;
    print!("{}", metrics_report("evaluation", &e, penalties.as_ref())?);
    Ok(())
}

fn cmd_audit(args: AuditArgs) -> Result<()> {
    let variant: Variant = args.variant.parse()?;
    let mut cfg = RunConfig {
        variant,
        input_size: args.input_size,
        ..RunConfig::default()
    };
    if let Some(k) = args.mid_kernel {
        cfg.mid_kernel = k;
    }
    let model = Model::<f32>::new(cfg.model_config(args.classes), args.seed)?;
    print!("{}", audit::layer_table(&model)?);
    for k in [2, 3].into_iter().filter(|&k| k != cfg.mid_kernel) {
        let alt = RunConfig {
            mid_kernel: k,
            ..cfg.clone()
        }
        .model_config(args.classes);
        let rows = opticnet::opticnet::OpticNet::new(
            alt,
            &mut opticnet::autodiff::ParamStore::<f32>::new(),
            args.seed,
        )?
        .trace()?;
        println!(
            "with {k}x{k} residual-conv middle kernels: {} bias-free weights",
            audit::thousands(Census::of(&rows).weights)
        );
    }
    println!();
    print!("{}", audit::middle_comparison(3, 64, 64)?);
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let suite: Suite = args.suite.parse()?;
    if args.seeds == 0 {
        return Err(bad_input("--seeds must be at least 1"));
    }
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
    let reports = gradcheck::run_suite(suite, &seeds, args.eps, args.tol)?;
    print!("{}", gradcheck::summarize(&reports));
    if let Some(path) = &args.csv {
        let mut text = String::from(GradReport::CSV_HEADER);
        text.push('\n');
        for r in &reports {
            for row in r.csv_rows() {
                text.push_str(&row);
                text.push('\n');
            }
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(reports.iter().all(GradReport::passed))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let ds = data::make_synthetic(
        args.classes,
        args.per_class,
        args.size,
        args.size,
        args.seed,
    )?;
    let written = ds.write_image_tree(&args.out)?;
    println!(
        "wrote {} images in {} classes to {}",
        written.len(),
        ds.k(),
        args.out.display()
    );
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(dir) = args.checkpoint.as_ref().and_then(|c| c.parent()) {
        let p = dir.join("run.cfg");
        if p.is_file() {
            cfg = RunConfig::load(&p)?;
        }
    }
    apply_model_args(&mut cfg, &args.model)?;
    if !(1..=4).contains(&args.stage) {
        return Err(bad_input(format!(
            "--stage must be 1 to 4, got {}",
            args.stage
        )));
    }
    let mut model = Model::<f32>::new(cfg.model_config(args.classes), args.seed)?;
    if let Some(c) = &args.checkpoint {
        checkpoint::load_store(&mut model.params, c)?;
    }
    let x = match &args.image {
        Some(p) if !p.is_file() => {
            return Err(bad_input(format!("image {} not found", p.display())))
        }
        Some(p) => data::load_image(p, cfg.input_size, cfg.input_size)?,
        None => data::make_synthetic(2, 1, cfg.input_size, cfg.input_size, args.seed)?.image(0),
    };
    export_feature_maps(&mut model, &x, args.stage, &args.out)?;
    println!(
        "wrote stage{0}/alpha, stage{0}/beta, stage{0}/tau to {1}",
        args.stage,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Train(a) => cmd_train(a).map(|()| true),
        Command::Eval(a) => cmd_eval(a).map(|()| true),
        Command::Audit(a) => cmd_audit(a).map(|()| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a).map(|()| true),
        Command::ExportFeatures(a) => cmd_export(a).map(|()| true),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
