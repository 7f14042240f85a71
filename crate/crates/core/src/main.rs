use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sift_cnn::config::RunConfig;
use sift_cnn::data::{export_features, DatasetSplit, Rotation, EXPORT_PER_CLASS};
use sift_cnn::diagnostics::{format_table, gradcheck_suite};
use sift_cnn::nn::PoolKind;
use sift_cnn::train::{evaluate, load_model, save_model, train, MetricsReport, Model, Variant};
use sift_cnn::{Error, Result};

#[derive(Parser)]
#[command(name = "sift-cnn", version, about = "CNNs with a differentiable SIFT descriptor layer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.bin, epochs.log and report.txt.
    Train(RunFlags),
    /// Evaluate a saved model on the (optionally rotated) test set.
    Eval {
        #[command(flatten)]
        run: RunFlags,
        /// Model file; defaults to <out-dir>/model.bin.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of every layer.
    Gradcheck,
    /// Write per-class sampled features as CSV for embedding tools.
    Export {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Activation to export: features (head input) or trunk.
        #[arg(long, default_value = "features")]
        tag: String,
        /// Defaults to <out-dir>/features_<tag>.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct RunFlags {
    /// key=value file applied before the other flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// baseline, sift or hybrid.
    #[arg(long)]
    variant: Option<String>,
    /// max, avg, mixed or stochastic.
    #[arg(long)]
    pool: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    /// Cap on training examples.
    #[arg(long)]
    subset: Option<String>,
    /// Evaluation rotation in degrees: 0, 90, 180 or 270.
    #[arg(long)]
    rotate: Option<String>,
}

impl RunFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("dataset", &self.dataset),
            ("variant", &self.variant),
            ("pool", &self.pool),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("seed", &self.seed),
            ("data-dir", &self.data_dir),
            ("out-dir", &self.out_dir),
            ("subset", &self.subset),
            ("rotate", &self.rotate),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report_text(variant: Variant, rotation: Rotation, report: &MetricsReport) -> String {
    let mut s = format!("variant={variant}\ndataset={}\nrotation={rotation}\n", variant.dataset);
    if variant.pool == PoolKind::Mixed {
        s.push_str("mixed_pool_granularity=per-layer\n");
    }
    for (k, v) in report.to_key_values() {
        s.push_str(&format!("{k}={v}\n"));
    }
    s
}

fn config_text(cfg: &RunConfig) -> String {
    let subset = cfg.subset.map_or("none".to_string(), |s| s.to_string());
    format!(
        "dataset={}\nvariant={}\npool={}\nepochs={}\nbatch={}\nlr={}\nseed={}\ndata-dir={}\nout-dir={}\nsubset={subset}\nrotate={}\n",
        cfg.dataset,
        cfg.variant.as_str(),
        cfg.pool,
        cfg.epochs,
        cfg.batch,
        cfg.lr,
        cfg.seed,
        cfg.data_dir.display(),
        cfg.out_dir.display(),
        cfg.rotate
    )
}

fn load_split(cfg: &RunConfig, variant: Variant) -> Result<DatasetSplit> {
    Ok(DatasetSplit::load(&cfg.data_dir, variant.dataset)?.with_train_subset(cfg.subset))
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let variant = cfg.model_variant();
    let split = load_split(cfg, variant)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), config_text(cfg))?;
    let mut log = BufWriter::new(File::create(cfg.out_dir.join("epochs.log"))?);
    let mut model = Model::<f32>::build(variant, cfg.seed);
    println!("variant={variant} params={} train={} test={}", model.param_count(), split.train.len(), split.test.len());
    let mut io_err = None;
    train(&mut model, &split, &cfg.train_config(), |e| {
        println!("{e}");
        if let Err(err) = writeln!(log, "{e}").and_then(|_| log.flush()) {
            io_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = io_err {
        return Err(err.into());
    }
    save_model(&model, &cfg.out_dir.join("model.bin"))?;
    let report = evaluate(&model, &split.test, 256)?;
    let text = report_text(variant, Rotation::None, &report);
    fs::write(cfg.out_dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn model_path(cfg: &RunConfig, model: &Option<PathBuf>) -> PathBuf {
    model.clone().unwrap_or_else(|| cfg.out_dir.join("model.bin"))
}

fn cmd_eval(cfg: &RunConfig, model: &Path) -> Result<()> {
    let model = load_model(model)?;
    let variant = model.variant();
    let split = DatasetSplit::load(&cfg.data_dir, variant.dataset)?;
    let test = split.test.rotated(cfg.rotate)?;
    let report = evaluate(&model, &test, 256)?;
    let text = report_text(variant, cfg.rotate, &report);
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(format!("eval_rot{}.txt", cfg.rotate.degrees())), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_gradcheck() -> Result<bool> {
    let rows = gradcheck_suite()?;
    print!("{}", format_table(&rows));
    Ok(rows.iter().all(|r| r.passed))
}

fn cmd_export(cfg: &RunConfig, model: &Path, tag: &str, output: Option<PathBuf>) -> Result<()> {
    let model = load_model(model)?;
    let split = DatasetSplit::load(&cfg.data_dir, model.variant().dataset)?;
    let test = split.test.rotated(cfg.rotate)?;
    let path = output.unwrap_or_else(|| cfg.out_dir.join(format!("features_{tag}.csv")));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    let rows = export_features(&model, &test, tag, EXPORT_PER_CLASS, cfg.seed, &mut buf)?;
    fs::write(&path, buf)?;
    println!("rows={rows} path={}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(flags) => cmd_train(&flags.resolve()?).map(|_| true),
        Command::Eval { run, model } => {
            let cfg = run.resolve()?;
            cmd_eval(&cfg, &model_path(&cfg, &model)).map(|_| true)
        }
        Command::Gradcheck => cmd_gradcheck(),
        Command::Export { run, model, tag, output } => {
            let cfg = run.resolve()?;
            cmd_export(&cfg, &model_path(&cfg, &model), &tag, output).map(|_| true)
        }
    }
}

fn one_line(e: &Error) -> String {
    e.to_string().replace(['\n', '\r'], " ").replace('"', "'")
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error kind=gradcheck message=\"one or more layers exceeded the tolerance\"");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error kind={} message=\"{}\"", e.kind(), one_line(&e));
            ExitCode::from(1)
        }
    }
}
