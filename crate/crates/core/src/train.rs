//! Training configuration, the training loop and test-set evaluation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_cifar10, load_mnist, BatchIterator, Dataset, Split, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::instrument::{count_forward_ops, load_checkpoint, save_checkpoint, MetricsRecord, MetricsSink, OpCount};
use crate::model::{argmax_rows, build_model, Arch, BuildOptions, DatasetKind, Model, ModelKind, Variant};
use crate::nn::softmax_xent_batch;
use crate::optim::{AdamConfig, AdamState, LrSchedule};
use crate::scalar::Scalar;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bwhn";

/// Stream id reserved for weight initialization.
const INIT_STREAM: u64 = u64::MAX;
/// Mixed into the seed for per-iteration dropout generators.
const DROPOUT_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision {s:?}; expected f32 or f64"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub arch: Arch,
    pub variant: Variant,
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Learning-rate floor approached by the decay; 0 gives the pure exponential.
    #[serde(default)]
    pub lr_floor: f64,
    pub keep_probs: Vec<f64>,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub eval_every: u64,
    pub precision: Precision,
    pub w_combined_frozen: bool,
}

impl TrainConfig {
    /// Reference hyperparameters for the dataset.
    pub fn defaults(dataset: DatasetKind, arch: Arch, variant: Variant) -> Self {
        let (iterations, lr, lr_decay) = match dataset {
            DatasetKind::Mnist => (10_000, 0.003, 1e-4),
            DatasetKind::Cifar10 => (150_000, 5e-4, 1e-6),
        };
        TrainConfig {
            dataset,
            arch,
            variant,
            iterations,
            batch_size: DEFAULT_BATCH_SIZE,
            lr,
            lr_decay,
            lr_floor: 0.0,
            keep_probs: BuildOptions::defaults(dataset).keep_probs,
            seed: 0,
            data_dir: PathBuf::from("data").join(dataset.as_str()),
            out_dir: PathBuf::from("runs"),
            eval_every: 100,
            precision: Precision::F32,
            w_combined_frozen: false,
        }
    }

    pub fn kind(&self) -> ModelKind {
        ModelKind {
            dataset: self.dataset,
            arch: self.arch,
            variant: self.variant,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.lr,
            decay: self.lr_decay,
            floor: self.lr_floor,
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            keep_probs: self.keep_probs.clone(),
            w_combined_trainable: !self.w_combined_frozen,
            init: BuildOptions::defaults(self.dataset).init,
        }
    }

    /// Passes over a training set of `train_size` examples.
    pub fn epochs(&self, train_size: usize) -> f64 {
        self.iterations as f64 * self.batch_size as f64 / train_size as f64
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval-every must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay >= 0.0) {
            return Err(Error::Config(format!(
                "lr decay must be non-negative, got {}",
                self.lr_decay
            )));
        }
        if !(self.lr_floor >= 0.0 && self.lr_floor <= self.lr) {
            return Err(Error::Config(format!(
                "lr floor must lie in [0, {}], got {}",
                self.lr, self.lr_floor
            )));
        }
        if let Some(p) = self.keep_probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::Config(format!("keep probability {p} outside (0,1]")));
        }
        let need = match self.dataset {
            DatasetKind::Mnist => 1,
            DatasetKind::Cifar10 => 3,
        };
        if self.keep_probs.len() != need {
            return Err(Error::Config(format!(
                "{} takes {need} keep-probabilities, got {}",
                self.dataset,
                self.keep_probs.len()
            )));
        }
        if self.w_combined_frozen && self.variant != Variant::BwhinRandom {
            return Err(Error::Config(
                "--w-combined-frozen only applies to the bwhin-random variant".into(),
            ));
        }
        Ok(())
    }
}

pub fn load_dataset(kind: DatasetKind, dir: &Path) -> Result<(Dataset, Dataset)> {
    match kind {
        DatasetKind::Mnist => load_mnist(dir),
        DatasetKind::Cifar10 => load_cifar10(dir),
    }
}

/// Builds the freshly initialized model a run with `config` starts from.
pub fn init_model<T: Scalar>(config: &TrainConfig) -> Result<Model<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(INIT_STREAM);
    build_model(config.kind(), &config.build_options(), &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub examples: usize,
    /// Forward operations for the whole pass.
    pub ops: OpCount,
}

/// Inference-mode loss and accuracy over the whole dataset, in order.
pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &Dataset, batch: usize) -> Result<EvalResult> {
    if ds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per_example = count_forward_ops(model)?.total();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..ds.len()).collect();
    for idx in all.chunks(batch.max(1)) {
        let x = ds.gather::<T>(idx);
        let labels = ds.gather_labels(idx);
        let logits = model.logits(&model.prepare_inputs(&x)?)?;
        let (loss, _) = softmax_xent_batch(&logits, &labels)?;
        loss_sum += loss * idx.len() as f64;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&labels)
            .filter(|(p, l)| **p == **l as usize)
            .count();
    }
    Ok(EvalResult {
        loss: loss_sum / ds.len() as f64,
        accuracy: correct as f64 / ds.len() as f64,
        examples: ds.len(),
        ops: per_example * ds.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: u64,
    pub final_test: EvalResult,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Runs `config`, writing `config.json`, `metrics.jsonl` and
/// `checkpoint.bwhn` into the output directory.
///
/// With `resume`, parameters, optimizer state and the iteration counter are
/// restored from that checkpoint and metrics are appended. `on_record` sees
/// every record as it is logged.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    resume: Option<&Path>,
    on_record: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainSummary> {
    match config.precision {
        Precision::F32 => train_with::<f32>(config, train_set, test_set, resume, on_record),
        Precision::F64 => train_with::<f64>(config, train_set, test_set, resume, on_record),
    }
}

fn check_dataset(config: &TrainConfig, ds: &Dataset) -> Result<()> {
    let expected = config.dataset.image_shape();
    if ds.image_shape() != expected {
        return Err(Error::shape(&expected, ds.image_shape()));
    }
    if ds.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn train_with<T: Scalar>(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    resume: Option<&Path>,
    on_record: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainSummary> {
    config.validate()?;
    check_dataset(config, train_set)?;
    check_dataset(config, test_set)?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let echo = serde_json::to_string_pretty(config).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(out.join(CONFIG_FILE), echo + "\n").map_err(|e| Error::io(out.join(CONFIG_FILE), e))?;

    let mut model = init_model::<T>(config)?;
    let (mut adam, start) = match resume {
        Some(path) => {
            let restored = load_checkpoint(path, &mut model)?;
            let adam = restored
                .adam
                .ok_or_else(|| Error::CheckpointMismatch(format!("{} holds no optimizer state", path.display())))?;
            (adam, restored.iteration)
        }
        None => (AdamState::new(AdamConfig::default(), model.parameters()), 0),
    };
    if start > config.iterations {
        return Err(Error::Config(format!(
            "checkpoint is at iteration {start}, beyond the requested {}",
            config.iterations
        )));
    }
    let metrics_path = out.join(METRICS_FILE);
    let mut sink = if resume.is_some() {
        MetricsSink::append(&metrics_path)?
    } else {
        MetricsSink::create(&metrics_path)?
    };
    let mut log = |r: MetricsRecord| -> Result<()> {
        sink.write(&r)?;
        on_record(&r);
        Ok(())
    };

    let clock = Instant::now();
    let schedule = config.schedule();
    let per_example = count_forward_ops(&model)?.total();
    let mut batches = BatchIterator::at_batch(train_set.len(), config.batch_size, config.seed, start)?;
    let (mut window_loss, mut window_correct, mut window_n) = (0.0, 0usize, 0usize);

    let mut last_test = None;
    if config.iterations == 0 {
        let r = evaluate(&model, test_set, 500)?;
        log(test_record(0, &r, clock.elapsed().as_secs_f64()))?;
        last_test = Some(r);
    }

    for it in start..config.iterations {
        let idx = batches.next_indices();
        let x = train_set.gather::<T>(&idx);
        let labels = train_set.gather_labels(&idx);
        let inputs = model.prepare_inputs(&x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ DROPOUT_SALT);
        rng.set_stream(it);
        let (loss, logits, grads) = model.loss_and_gradients(&inputs, &labels, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteGradient(format!("loss at iteration {it}")));
        }
        adam.update(model.parameters_mut(), &grads, schedule.lr_at(it))?;
        model.clamp_combiner();

        window_loss += loss * idx.len() as f64;
        window_correct += argmax_rows(&logits)
            .iter()
            .zip(&labels)
            .filter(|(p, l)| **p == **l as usize)
            .count();
        window_n += idx.len();

        let done = it + 1;
        if done % config.eval_every == 0 || done == config.iterations {
            let secs = clock.elapsed().as_secs_f64();
            let ops = per_example * window_n as u64;
            log(MetricsRecord {
                iteration: done,
                split: Split::Train,
                loss: window_loss / window_n as f64,
                accuracy: window_correct as f64 / window_n as f64,
                mults: ops.mults,
                adds: ops.adds,
                seconds: secs,
            })?;
            let r = evaluate(&model, test_set, 500)?;
            log(test_record(done, &r, clock.elapsed().as_secs_f64()))?;
            last_test = Some(r);
            (window_loss, window_correct, window_n) = (0.0, 0, 0);
        }
    }

    let final_test = match last_test {
        Some(r) => r,
        None => evaluate(&model, test_set, 500)?,
    };
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &model, &adam, config.iterations)?;
    Ok(TrainSummary {
        iterations: config.iterations,
        final_test,
        checkpoint,
        metrics: metrics_path,
    })
}

fn test_record(iteration: u64, r: &EvalResult, seconds: f64) -> MetricsRecord {
    MetricsRecord {
        iteration,
        split: Split::Test,
        loss: r.loss,
        accuracy: r.accuracy,
        mults: r.ops.mults,
        adds: r.ops.adds,
        seconds,
    }
}
