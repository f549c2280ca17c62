//! `tkn`: train targeted kernel networks, count their operations, sweep the
//! scale-penalty grid, build the top-left composite dataset, and export
//! attention windows as images.
//!
//! Every run is deterministic given its flags and seed. Exit codes: 0 on
//! success, 2 for configuration problems, 3 for data/file problems, 4 when
//! training leaves the reals (NaN/Inf loss).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tkn_core::attention::Family;
use tkn_core::checkpoint::{load_model, save_model};
use tkn_core::data::{load_idx, make_tlmnist, write_idx, LabeledImageSet};
use tkn_core::export::{export_maps, export_roi_overlay};
use tkn_core::flops::{count_model, count_spec, param_count};
use tkn_core::graph::{build_cnn6, build_cnn6_mini, build_tkn6, build_tkn6_mini, NetworkSpec};
use tkn_core::model::{Layer, Model};
use tkn_core::train::{run_sweep, sweep_monotone, train, TrainConfig};
use tkn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tkn", version, about = "Targeted kernel networks: train, count, inspect")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes a metrics log plus final and best checkpoints.
    Train(TrainArgs),
    /// Print per-layer operation counts for a model name or a checkpoint.
    Flops(FlopsArgs),
    /// Train one model per (l2, beta) grid cell and summarize compute/error.
    Sweep(SweepArgs),
    /// Compose 56x56 top-left digit images from a 28x28 digit set.
    MakeTlmnist(MakeTlmnistArgs),
    /// Render attention window maps and ROI rectangles from a checkpoint.
    ExportAttention(ExportAttentionArgs),
}

/// Settings shared by `train` and `sweep`: defaults, then the config file,
/// then flags, highest wins. Values arrive as text either way, so both
/// layers funnel through the same parser and report the same errors.
#[derive(Args)]
struct CommonArgs {
    /// Flat key=value config file (same keys as the flags below).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model: cnn6, tkn6, cnn6-mini, tkn6-mini.
    #[arg(long)]
    model: Option<String>,
    /// Dataset: mnist, tlmnist, mnist-subset:<n>.
    #[arg(long)]
    data: Option<String>,
    /// Attention family: gaussian or cauchy.
    #[arg(long)]
    family: Option<String>,
    /// Scale-penalty coefficient lambda.
    #[arg(long)]
    l2: Option<String>,
    /// Per-block penalty buildup factor beta.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<String>,
    /// Factor the learning rate is divided by at each milestone.
    #[arg(long)]
    lr_div: Option<String>,
    /// Comma-separated 0-based epochs at which the rate drops ("" for none).
    #[arg(long)]
    milestones: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    /// Directory holding the IDX digit files.
    #[arg(long)]
    data_dir: Option<String>,
    /// Directory the metrics log and checkpoints are written into.
    #[arg(long)]
    out_dir: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated lambda grid.
    #[arg(long, default_value = "0,1e-4,2e-4,1e-3")]
    l2_grid: String,
    /// Comma-separated beta grid.
    #[arg(long, default_value = "1,2,4")]
    beta_grid: String,
}

#[derive(Args)]
struct FlopsArgs {
    /// Model name to count (ignored when --checkpoint is given).
    #[arg(long, default_value = "cnn6")]
    model: String,
    /// Square input edge in pixels.
    #[arg(long, default_value_t = 28)]
    input: usize,
    /// Count a trained checkpoint instead (current ROIs, not init).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Attention family for targeted models built by name.
    #[arg(long, default_value = "cauchy")]
    family: String,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 4.0)]
    beta: f64,
}

#[derive(Args)]
struct MakeTlmnistArgs {
    /// Directory holding the source IDX digit files.
    #[arg(long, default_value = "data/mnist")]
    data_dir: String,
    /// Directory the composed IDX files are written into.
    #[arg(long)]
    out_dir: String,
    /// Placement seed for the train split; the test split uses seed+1.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ExportAttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Export only this layer index (default: every target layer).
    #[arg(long)]
    layer: Option<usize>,
}

/// Every knob `train` and `sweep` understand, with its defaults (the
/// mini-model recipe; override lr/epochs/milestones for the full models).
struct Settings {
    model: String,
    data: String,
    family: String,
    l2: f64,
    beta: f64,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    lr_div: f64,
    milestones: Vec<usize>,
    weight_decay: f64,
    momentum: f64,
    data_dir: String,
    out_dir: String,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            model: "tkn6-mini".to_string(),
            data: "mnist".to_string(),
            family: "cauchy".to_string(),
            l2: 1e-4,
            beta: 4.0,
            seed: 1,
            epochs: 10,
            batch_size: 64,
            lr: 0.1,
            lr_div: 10.0,
            milestones: vec![7, 9],
            weight_decay: 1e-4,
            momentum: 0.9,
            data_dir: "data/mnist".to_string(),
            out_dir: "runs".to_string(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("config key \"{key}\": cannot parse \"{value}\"")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl Settings {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => self.model = value.to_string(),
            "data" => self.data = value.to_string(),
            "family" => self.family = value.to_string(),
            "l2" => self.l2 = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch-size" => self.batch_size = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "lr-div" => self.lr_div = parse_num(key, value)?,
            "milestones" => self.milestones = parse_list(key, value)?,
            "weight-decay" => self.weight_decay = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "data-dir" => self.data_dir = value.to_string(),
            "out-dir" => self.out_dir = value.to_string(),
            _ => return Err(Error::config(format!("unknown config key \"{key}\""))),
        }
        Ok(())
    }

    fn load_file(&mut self, path: &PathBuf) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("config file {}: {e}", path.display())))?;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "config file line {}: expected key=value, got \"{line}\"",
                    no + 1
                )));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn resolve(args: &CommonArgs) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &args.config {
            s.load_file(path)?;
        }
        let overrides: [(&str, &Option<String>); 15] = [
            ("model", &args.model),
            ("data", &args.data),
            ("family", &args.family),
            ("l2", &args.l2),
            ("beta", &args.beta),
            ("seed", &args.seed),
            ("epochs", &args.epochs),
            ("batch-size", &args.batch_size),
            ("lr", &args.lr),
            ("lr-div", &args.lr_div),
            ("milestones", &args.milestones),
            ("weight-decay", &args.weight_decay),
            ("momentum", &args.momentum),
            ("data-dir", &args.data_dir),
            ("out-dir", &args.out_dir),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                s.set(key, value)?;
            }
        }
        Ok(s)
    }

    /// Input frame implied by the dataset.
    fn input_hw(&self) -> (usize, usize) {
        if self.data == "tlmnist" {
            (56, 56)
        } else {
            (28, 28)
        }
    }

    fn spec(&self) -> Result<NetworkSpec> {
        let hw = self.input_hw();
        let family = Family::parse(&self.family)?;
        match self.model.as_str() {
            "cnn6" => build_cnn6(hw, 10),
            "cnn6-mini" => build_cnn6_mini(hw, 10),
            "tkn6" => build_tkn6(hw, 10, family, self.l2, self.beta),
            "tkn6-mini" => build_tkn6_mini(hw, 10, family, self.l2, self.beta),
            other => Err(Error::config(format!(
                "unknown model \"{other}\" (expected cnn6, tkn6, cnn6-mini, tkn6-mini)"
            ))),
        }
    }

    fn load_data(&self) -> Result<(LabeledImageSet<f32>, LabeledImageSet<f32>)> {
        let read = |split: &str| {
            load_idx::<f32>(
                format!("{}/{split}-images-idx3-ubyte", self.data_dir),
                format!("{}/{split}-labels-idx1-ubyte", self.data_dir),
            )
        };
        let train_set = read("train")?;
        let test_set = read("t10k")?;
        match self.data.as_str() {
            "mnist" => Ok((train_set, test_set)),
            "tlmnist" => Ok((
                make_tlmnist(&train_set, TL_TRAIN_SEED)?,
                make_tlmnist(&test_set, TL_TEST_SEED)?,
            )),
            other => match other.strip_prefix("mnist-subset:") {
                Some(n) => {
                    let n: usize = parse_num("data", n)?;
                    Ok((train_set.subset(n)?, test_set))
                }
                None => Err(Error::config(format!(
                    "unknown dataset \"{other}\" (expected mnist, tlmnist, mnist-subset:<n>)"
                ))),
            },
        }
    }

    /// `epochs=0` means "initialize, evaluate, write the checkpoint": the
    /// milestone list is cleared so the schedule invariant (every milestone
    /// before the last epoch) stays satisfiable.
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            lr_div: self.lr_div,
            milestones: if self.epochs == 0 { Vec::new() } else { self.milestones.clone() },
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            seed: self.seed,
        }
    }

    /// The full effective configuration, one key=value pair per knob, in a
    /// fixed order — the provenance header of every metrics log. Milestones
    /// are rendered as actually used (cleared for an epochs=0 run).
    fn echo(&self) -> String {
        let milestones: Vec<String> =
            self.train_config().milestones.iter().map(|m| m.to_string()).collect();
        format!(
            "model={} data={} family={} l2={} beta={} seed={} epochs={} batch-size={} lr={} \
             lr-div={} milestones={} weight-decay={} momentum={}",
            self.model,
            self.data,
            self.family,
            self.l2,
            self.beta,
            self.seed,
            self.epochs,
            self.batch_size,
            self.lr,
            self.lr_div,
            milestones.join(","),
            self.weight_decay,
            self.momentum
        )
    }
}

/// Seeds the synthetic top-left datasets are built with when `--data
/// tlmnist` composes them in-process.
const TL_TRAIN_SEED: u64 = 1;
const TL_TEST_SEED: u64 = 2;

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let s = Settings::resolve(&args.common)?;
    let spec = s.spec()?;
    let (train_set, test_set) = s.load_data()?;
    let cfg = s.train_config();

    let outcome = train(&spec, &cfg, &train_set, &test_set)?;

    let init_report = count_spec(&spec)?;
    let mut log = String::new();
    writeln!(log, "run {}", s.echo()).unwrap();
    writeln!(
        log,
        "init test_error={} test_loss={} macs={} attention_muls={} params={}",
        outcome.init_test.error,
        outcome.init_test.loss,
        init_report.total_macs,
        init_report.total_attention,
        param_count(&spec)?
    )
    .unwrap();
    for m in &outcome.epochs {
        writeln!(
            log,
            "epoch={} lr={} train_loss={} test_error={} test_loss={} macs={} attention_muls={}",
            m.epoch, m.lr, m.train_loss, m.test.error, m.test.loss, m.macs, m.attention_muls
        )
        .unwrap();
    }

    fs::create_dir_all(&s.out_dir)?;
    let final_path = format!("{}/checkpoint.tkn1", s.out_dir);
    let best_path = format!("{}/best.tkn1", s.out_dir);
    save_model(&outcome.model, &final_path)?;
    save_model(&outcome.best, &best_path)?;
    writeln!(
        log,
        "done best_epoch={} best_test_error={} checkpoint={final_path} best={best_path}",
        outcome.best_epoch, outcome.best_test_error
    )
    .unwrap();

    let log_path = format!("{}/metrics.log", s.out_dir);
    let mut file = fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
    file.write_all(log.as_bytes())?;
    print!("{log}");
    Ok(())
}

fn cmd_flops(args: &FlopsArgs) -> Result<()> {
    let report = match &args.checkpoint {
        Some(path) => {
            let model: Model<f32> = load_model(path)?;
            count_model(&model)
        }
        None => {
            let s = Settings {
                model: args.model.clone(),
                family: args.family.clone(),
                l2: args.l2,
                beta: args.beta,
                ..Settings::default()
            };
            let hw = (args.input, args.input);
            let family = Family::parse(&s.family)?;
            let spec = match s.model.as_str() {
                "cnn6" => build_cnn6(hw, 10)?,
                "cnn6-mini" => build_cnn6_mini(hw, 10)?,
                "tkn6" => build_tkn6(hw, 10, family, s.l2, s.beta)?,
                "tkn6-mini" => build_tkn6_mini(hw, 10, family, s.l2, s.beta)?,
                other => {
                    return Err(Error::config(format!(
                        "unknown model \"{other}\" (expected cnn6, tkn6, cnn6-mini, tkn6-mini)"
                    )))
                }
            };
            count_spec(&spec)?
        }
    };
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let s = Settings::resolve(&args.common)?;
    if s.model != "tkn6-mini" {
        return Err(Error::config(format!(
            "sweep trains tkn6-mini per cell; got model \"{}\"",
            s.model
        )));
    }
    let lambdas: Vec<f64> = parse_list("l2-grid", &args.l2_grid)?;
    let betas: Vec<f64> = parse_list("beta-grid", &args.beta_grid)?;
    let (train_set, test_set) = s.load_data()?;
    let family = Family::parse(&s.family)?;

    let cells = run_sweep(
        s.input_hw(),
        10,
        family,
        &lambdas,
        &betas,
        &s.train_config(),
        &train_set,
        &test_set,
    )?;

    let mut out = String::new();
    writeln!(out, "sweep {} l2-grid={} beta-grid={}", s.echo(), args.l2_grid, args.beta_grid)
        .unwrap();
    for c in &cells {
        // speedup: dense-twin cost over what the trained windows still pay
        writeln!(
            out,
            "cell l2={} beta={} best_test_error={} total_ops={} speedup={:.4}",
            c.lambda,
            c.beta,
            c.best_test_error,
            c.total_flops(),
            c.report.dense_twin_macs as f64 / c.total_flops() as f64
        )
        .unwrap();
    }
    let trend = match sweep_monotone(&cells) {
        Some(true) => "pass",
        Some(false) => "fail",
        None => "n/a",
    };
    writeln!(out, "trend largest-penalty-fewer-ops={trend}").unwrap();
    print!("{out}");
    Ok(())
}

fn cmd_make_tlmnist(args: &MakeTlmnistArgs) -> Result<()> {
    fs::create_dir_all(&args.out_dir)?;
    for (split, seed) in [("train", args.seed), ("t10k", args.seed + 1)] {
        let source = load_idx::<f32>(
            format!("{}/{split}-images-idx3-ubyte", args.data_dir),
            format!("{}/{split}-labels-idx1-ubyte", args.data_dir),
        )?;
        let composed = make_tlmnist(&source, seed)?;
        write_idx(
            &composed,
            format!("{}/{split}-images-idx3-ubyte", args.out_dir),
            format!("{}/{split}-labels-idx1-ubyte", args.out_dir),
        )?;
        println!(
            "wrote {} 56x56 images (seed {seed}) to {}/{split}-images-idx3-ubyte",
            composed.len(),
            args.out_dir
        );
    }
    Ok(())
}

fn cmd_export_attention(args: &ExportAttentionArgs) -> Result<()> {
    let model: Model<f32> = load_model(&args.checkpoint)?;
    let selection = args.layer.map(|l| vec![l]);
    let written = export_maps(&model, selection.as_deref(), &args.out_dir)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    let layers: Vec<usize> = match args.layer {
        Some(l) => vec![l],
        None => model
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, Layer::Target(_)).then_some(i))
            .collect(),
    };
    for idx in layers {
        let path = args.out_dir.join(format!("roi-layer{idx:02}.pgm"));
        export_roi_overlay(&model, idx, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Shape(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Flops(args) => cmd_flops(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::MakeTlmnist(args) => cmd_make_tlmnist(args),
        Cmd::ExportAttention(args) => cmd_export_attention(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
