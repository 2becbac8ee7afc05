use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bwhin::data::{parse_cifar_records, parse_idx_images, Split, CIFAR_RECORD_LEN, IDX_IMAGES_MAGIC};
use bwhin::instrument::{count_forward_ops, load_checkpoint, read_arrays, write_arrays, ArrayData, NamedArray};
use bwhin::model::{hadamard_batch, Arch, DatasetKind, Model, Variant};
use bwhin::report::{accuracy_table, curve_csv, Run};
use bwhin::train::{evaluate, init_model, load_dataset, train, Precision, TrainConfig, CONFIG_FILE};
use bwhin::{Scalar, Tensor};

#[derive(Parser)]
#[command(name = "bwhin", version, about = "Binary-weight and Hadamard-input CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write config.json, metrics.jsonl and checkpoint.bwhn.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print accuracy, loss and operation counts.
    Eval(EvalArgs),
    /// Hadamard-transform an IDX image file, CIFAR-10 batch, or BWHN container.
    Transform(TransformArgs),
    /// Print an accuracy table and curve data from one or more runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "mnist")]
    dataset: DatasetKind,
    #[arg(long, default_value = "convpool")]
    arch: Arch,
    #[arg(long, default_value = "cnn")]
    variant: Variant,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Defaults to 10000 (MNIST) or 150000 (CIFAR-10).
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Initial learning rate; defaults to 0.003 (MNIST) or 0.0005 (CIFAR-10).
    #[arg(long)]
    lr: Option<f64>,
    /// Exponential decay constant; defaults to 1e-4 (MNIST) or 1e-6 (CIFAR-10).
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Learning rate the decay approaches instead of zero.
    #[arg(long, default_value_t = 0.0)]
    lr_floor: f64,
    /// Comma-separated dropout keep-probabilities in network order.
    #[arg(long, value_delimiter = ',')]
    keep_probs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    eval_every: u64,
    #[arg(long, default_value = "f32")]
    precision: Precision,
    /// Keep the combination weight at its random initial value.
    #[arg(long)]
    w_combined_frozen: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let m = &self.model;
        let d = TrainConfig::defaults(m.dataset, m.arch, m.variant);
        TrainConfig {
            iterations: self.iters.unwrap_or(d.iterations),
            batch_size: self.batch,
            lr: self.lr.unwrap_or(d.lr),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            lr_floor: self.lr_floor,
            keep_probs: self.keep_probs.clone().unwrap_or(d.keep_probs.clone()),
            seed: self.seed,
            data_dir: self.data_dir.clone(),
            out_dir: self.out.clone(),
            eval_every: self.eval_every,
            precision: self.precision,
            w_combined_frozen: self.w_combined_frozen,
            ..d
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Model flags default to the config.json saved next to the checkpoint.
    #[arg(long)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Defaults to the data directory recorded in config.json.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    precision: Option<Precision>,
}

#[derive(Args)]
struct TransformArgs {
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories or metrics.jsonl files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Write curve data here instead of printing it.
    #[arg(long)]
    curves: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = args.config();
    config.validate()?;
    let (train_set, test_set) = load_dataset(config.dataset, &config.data_dir)
        .with_context(|| format!("loading {} from {}", config.dataset, config.data_dir.display()))?;
    if !args.quiet {
        eprintln!(
            "{}: {} iterations ({:.1} epochs), {} train / {} test examples",
            config.kind(),
            config.iterations,
            config.epochs(train_set.len()),
            train_set.len(),
            test_set.len()
        );
    }
    let quiet = args.quiet;
    let summary = train(&config, &train_set, &test_set, args.resume.as_deref(), &mut |r| {
        if !quiet && r.split == Split::Test {
            eprintln!(
                "iter {:>6}  test loss {:.4}  acc {:.2}%  ({:.0}s)",
                r.iteration,
                r.loss,
                r.percent(),
                r.seconds
            );
        }
    })?;
    println!(
        "final test accuracy {:.2}% (loss {:.4}) after {} iterations",
        summary.final_test.accuracy * 100.0,
        summary.final_test.loss,
        summary.iterations
    );
    println!("checkpoint {}", summary.checkpoint.display());
    println!("metrics {}", summary.metrics.display());
    Ok(())
}

fn sibling_config(checkpoint: &Path) -> Result<Option<TrainConfig>> {
    let Some(p) = checkpoint.parent().map(|d| d.join(CONFIG_FILE)).filter(|p| p.exists()) else {
        return Ok(None);
    };
    Ok(Some(TrainConfig::read_json(&p)?))
}

fn pick<V>(flag: Option<V>, saved: Option<V>, name: &str) -> Result<V> {
    flag.or(saved)
        .with_context(|| format!("--{name} is required when no {CONFIG_FILE} sits next to the checkpoint"))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let saved = sibling_config(&args.checkpoint)?;
    let dataset = pick(args.dataset, saved.as_ref().map(|c| c.dataset), "dataset")?;
    let arch = pick(args.arch, saved.as_ref().map(|c| c.arch), "arch")?;
    let variant = pick(args.variant, saved.as_ref().map(|c| c.variant), "variant")?;
    let data_dir = pick(
        args.data_dir.clone(),
        saved.as_ref().map(|c| c.data_dir.clone()),
        "data-dir",
    )?;
    let mut config = saved.unwrap_or_else(|| TrainConfig::defaults(dataset, arch, variant));
    (config.dataset, config.arch, config.variant) = (dataset, arch, variant);
    if config.keep_probs.len() != TrainConfig::defaults(dataset, arch, variant).keep_probs.len() {
        config.keep_probs = TrainConfig::defaults(dataset, arch, variant).keep_probs;
    }
    let precision = args.precision.unwrap_or(config.precision);

    match precision {
        Precision::F32 => eval_with::<f32>(&config, &args.checkpoint, &data_dir, args.split),
        Precision::F64 => eval_with::<f64>(&config, &args.checkpoint, &data_dir, args.split),
    }
}

fn eval_with<T: Scalar>(config: &TrainConfig, checkpoint: &Path, data_dir: &Path, split: Split) -> Result<()> {
    let mut model: Model<T> = init_model(config)?;
    let restored =
        load_checkpoint(checkpoint, &mut model).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (train_set, test_set) = load_dataset(config.dataset, data_dir)
        .with_context(|| format!("loading {} from {}", config.dataset, data_dir.display()))?;
    let ds = match split {
        Split::Train => &train_set,
        Split::Test => &test_set,
    };
    let r = evaluate(&model, ds, 500)?;
    println!("model {} (iteration {})", config.kind(), restored.iteration);
    println!(
        "{} accuracy {:.2}%  loss {:.6}  ({} examples)",
        ds.split,
        r.accuracy * 100.0,
        r.loss,
        r.examples
    );
    let ops = count_forward_ops(&model)?;
    println!("forward operations per example:");
    println!("  {:<44} {:>12} {:>12} {:>10}", "layer", "mults", "adds", "compares");
    for l in &ops.layers {
        println!(
            "  {:<44} {:>12} {:>12} {:>10}",
            l.label, l.ops.mults, l.ops.adds, l.ops.comparisons
        );
    }
    let t = ops.total();
    println!("  {:<44} {:>12} {:>12} {:>10}", "total", t.mults, t.adds, t.comparisons);
    Ok(())
}

/// Transforms every rank-4 array; everything else passes through.
fn transform_arrays(arrays: Vec<NamedArray>) -> Result<Vec<NamedArray>> {
    arrays
        .into_iter()
        .map(|a| {
            if a.shape.len() != 4 {
                return Ok(a);
            }
            let t: Tensor<f64> = a.to_tensor()?;
            Ok(NamedArray::from_tensor(a.name, &hadamard_batch(&t)?))
        })
        .collect()
}

fn images_array(n: usize, chw: [usize; 3], pixels: &[u8]) -> Result<NamedArray> {
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let t = Tensor::from_vec(&[n, chw[0], chw[1], chw[2]], data)?;
    Ok(NamedArray::from_tensor("images", &t))
}

fn cmd_transform(args: TransformArgs) -> Result<()> {
    let bytes = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    if bytes.is_empty() {
        bail!("{} is empty", args.input.display());
    }
    let ctx = args.input.display().to_string();
    let arrays = if bytes.starts_with(b"BWHN") {
        read_arrays(&args.input)?
    } else if bytes.len() >= 4 && u32::from_be_bytes(bytes[..4].try_into()?) == IDX_IMAGES_MAGIC {
        let img = parse_idx_images(&bytes, &ctx)?;
        vec![images_array(img.count, [1, img.rows, img.cols], &img.pixels)?]
    } else if bytes.len() % CIFAR_RECORD_LEN == 0 {
        let (labels, pixels) = parse_cifar_records(&bytes, &ctx)?;
        vec![
            images_array(labels.len(), [3, 32, 32], &pixels)?,
            NamedArray {
                name: "labels".into(),
                shape: vec![labels.len()],
                data: ArrayData::F64(labels.iter().map(|&l| l as f64).collect()),
            },
        ]
    } else {
        bail!("{ctx}: not an IDX image file, CIFAR-10 batch, or BWHN container");
    };
    let out = transform_arrays(arrays)?;
    write_arrays(&args.output, &out)?;
    for a in &out {
        println!("{} {:?}", a.name, a.shape);
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let runs = args
        .runs
        .iter()
        .map(|p| Run::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if runs.iter().any(|r| r.kind().is_some()) {
        print!("{}", accuracy_table(&runs));
    }
    let curves = if runs.len() == 1 {
        curve_csv(&runs[0].records)
    } else {
        let mut out = String::new();
        for (i, run) in runs.iter().enumerate() {
            let name = run
                .kind()
                .map(|k| k.to_string())
                .unwrap_or_else(|| run.source.display().to_string());
            let csv = curve_csv(&run.records);
            let mut lines = csv.lines();
            let header = lines.next().unwrap_or_default();
            if i == 0 {
                out.push_str(&format!("run,{header}\n"));
            }
            for l in lines {
                out.push_str(&format!("{name},{l}\n"));
            }
        }
        out
    };
    match args.curves {
        Some(p) => fs::write(&p, curves).with_context(|| format!("writing {}", p.display()))?,
        None if runs.len() == 1 => print!("{curves}"),
        None => {}
    }
    Ok(())
}
