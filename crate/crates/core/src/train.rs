//! Adam + MSE training loop with per-epoch loss logging and checkpoints.
//!
//! The shuffle of epoch `e` depends only on `(seed, e)`, so a checkpoint
//! needs no RNG state: parameters, running statistics, optimizer moments,
//! the step counter and the loss log are enough to resume bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, Axis};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arch::{ArchError, ModelConfig, NetworkGraph};
use crate::dataset::{batch_order, Patch, PreparedData, TestFrame};
use crate::exec::{forward_eval, loss_and_gradient, mse_loss, ExecError, ParameterSet};
use crate::kv::KvMap;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("training diverged in epoch {epoch}; state rolled back to epoch {last_good_epoch}")]
    Diverged { epoch: usize, last_good_epoch: usize },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> TrainError {
    TrainError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Test loss is computed on epochs divisible by this (and the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            learning_rate: 3e-4,
            weight_decay: 3e-5,
            epochs: 200,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 9] =
        ["batch_size", "learning_rate", "weight_decay", "epochs", "seed", "beta1", "beta2", "adam_eps", "eval_every"];

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("batch_size", self.batch_size);
        kv.insert("learning_rate", self.learning_rate);
        kv.insert("weight_decay", self.weight_decay);
        kv.insert("epochs", self.epochs);
        kv.insert("seed", self.seed);
        kv.insert("beta1", self.beta1);
        kv.insert("beta2", self.beta2);
        kv.insert("adam_eps", self.adam_eps);
        kv.insert("eval_every", self.eval_every);
        kv
    }

    /// Missing keys keep the values of `base`.
    pub fn from_kv(kv: &KvMap, base: &TrainConfig) -> Result<Self, TrainError> {
        let e = |e: crate::kv::KvError| TrainError::Config(e.to_string());
        let c = TrainConfig {
            batch_size: kv.parsed_or("batch_size", base.batch_size).map_err(e)?,
            learning_rate: kv.parsed_or("learning_rate", base.learning_rate).map_err(e)?,
            weight_decay: kv.parsed_or("weight_decay", base.weight_decay).map_err(e)?,
            epochs: kv.parsed_or("epochs", base.epochs).map_err(e)?,
            seed: kv.parsed_or("seed", base.seed).map_err(e)?,
            beta1: kv.parsed_or("beta1", base.beta1).map_err(e)?,
            beta2: kv.parsed_or("beta2", base.beta2).map_err(e)?,
            adam_eps: kv.parsed_or("adam_eps", base.adam_eps).map_err(e)?,
            eval_every: kv.parsed_or("eval_every", base.eval_every).map_err(e)?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Adam moments; same layout as the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: ParameterSet<T>,
    pub v: ParameterSet<T>,
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        OptimizerState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// One Adam update with coupled L2 weight decay (`g + wd * theta` enters
/// both moments) and bias correction. Nothing is modified if any gradient
/// is non-finite.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &ParameterSet<T>,
    state: &mut OptimizerState<T>,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.tensors.len() != params.tensors.len()
        || grads.tensors.iter().zip(&params.tensors).any(|(g, p)| g.data.shape() != p.data.shape())
    {
        return Err(ExecError::Dimension("gradient layout differs from parameters".into()).into());
    }
    if !grads.all_finite() {
        return Err(TrainError::NonFiniteGradient { step: state.t + 1 });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
    let c1 = T::of(1.0 - config.beta1.powi(t));
    let c2 = T::of(1.0 - config.beta2.powi(t));
    let (lr, wd, eps) = (T::of(config.learning_rate), T::of(config.weight_decay), T::of(config.adam_eps));
    for (((p, g), m), v) in params.tensors.iter_mut().zip(&grads.tensors).zip(&mut state.m.tensors).zip(&mut state.v.tensors)
    {
        ndarray::Zip::from(&mut p.data).and(&g.data).and(&mut m.data).and(&mut v.data).for_each(|p, &g, m, v| {
            let g = g + wd * *p;
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossLog {
    pub records: Vec<EpochRecord>,
}

impl LossLog {
    pub const HEADER: [&'static str; 3] = ["epoch", "train_mse", "test_mse"];

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn train_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_mse).collect()
    }

    pub fn test_series(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.test_mse).collect()
    }

    /// Skipped test evaluations are written as empty fields.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::HEADER).expect("in-memory write");
        for r in &self.records {
            let test = r.test_mse.map(|v| format!("{v:e}")).unwrap_or_default();
            w.write_record([r.epoch.to_string(), format!("{:e}", r.train_mse), test]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, TrainError> {
        let bad = |m: String| TrainError::Integrity(format!("loss log: {m}"));
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?;
        if header.iter().ne(Self::HEADER) {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let field = |i: usize| row.get(i).ok_or_else(|| bad(format!("short row {row:?}")));
            let epoch = field(0)?.parse().map_err(|_| bad(format!("bad epoch in {row:?}")))?;
            let train_mse = field(1)?.parse().map_err(|_| bad(format!("bad train_mse in {row:?}")))?;
            let test = field(2)?;
            let test_mse = if test.is_empty() {
                None
            } else {
                Some(test.parse().map_err(|_| bad(format!("bad test_mse in {row:?}")))?)
            };
            records.push(EpochRecord { epoch, train_mse, test_mse });
        }
        Ok(LossLog { records })
    }
}

fn stack<'a, T: Scalar>(images: impl Iterator<Item = &'a Array2<T>>) -> Array4<T> {
    let views: Vec<_> = images.map(|a| a.view().insert_axis(Axis(0)).insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal patch shapes")
}

/// Eval-mode MSE of each test frame against its target.
pub fn per_frame_mse<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParameterSet<T>,
    frames: &[TestFrame<T>],
) -> Result<Vec<f64>, ExecError> {
    frames
        .iter()
        .map(|f| {
            let out = forward_eval(graph, params, &stack(std::iter::once(&f.input)))?;
            Ok(mse_loss(&out, &stack(std::iter::once(&f.target)))?.as_f64())
        })
        .collect()
}

/// Owns the model, optimizer and log; advances one epoch at a time.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: ModelConfig,
    pub graph: NetworkGraph,
    pub config: TrainConfig,
    pub params: ParameterSet<T>,
    pub optimizer: OptimizerState<T>,
    pub log: LossLog,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh parameters initialized from `config.seed`.
    pub fn new(model: &ModelConfig, config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let graph = model.build()?;
        let params = ParameterSet::init(&graph, config.seed);
        let optimizer = OptimizerState::new(&params);
        Ok(Trainer {
            model: *model,
            graph,
            config: config.clone(),
            params,
            optimizer,
            log: LossLog::default(),
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint<T>) -> Result<Self, TrainError> {
        let graph = ckpt.model.build()?;
        ckpt.params.check_against(&graph)?;
        Ok(Trainer {
            model: ckpt.model,
            graph,
            config: ckpt.config,
            params: ckpt.params,
            optimizer: ckpt.optimizer,
            log: ckpt.log,
            epoch: ckpt.epoch,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model,
            config: self.config.clone(),
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            log: self.log.clone(),
            epoch: self.epoch,
        }
    }

    /// One pass over the shuffled patches followed by the test evaluation.
    /// On divergence the trainer is left exactly as it was before the call.
    pub fn run_epoch(&mut self, patches: &[Patch<T>], test: &[TestFrame<T>]) -> Result<EpochRecord, TrainError> {
        if patches.is_empty() {
            return Err(TrainError::EmptyTrain);
        }
        let epoch = self.epoch + 1;
        let diverged = TrainError::Diverged { epoch, last_good_epoch: self.epoch };
        let mut params = self.params.clone();
        let mut optimizer = self.optimizer.clone();
        let mut losses = Vec::new();
        for batch in batch_order(patches.len(), self.config.batch_size, self.config.seed, epoch) {
            let x = stack(batch.iter().map(|&i| &patches[i].input));
            let y = stack(batch.iter().map(|&i| &patches[i].target));
            let g = match loss_and_gradient(&self.graph, &params, &x, &y) {
                Ok(g) => g,
                Err(ExecError::NumericOverflow { .. }) => return Err(diverged),
                Err(e) => return Err(e.into()),
            };
            let loss = g.loss.as_f64();
            if !loss.is_finite() {
                return Err(diverged);
            }
            params.absorb_batch_stats(&g.batch_stats);
            match adam_step(&mut params, &g.grads, &mut optimizer, &self.config) {
                Err(TrainError::NonFiniteGradient { .. }) => return Err(diverged),
                other => other?,
            }
            if !params.all_finite() {
                return Err(diverged);
            }
            losses.push(loss);
        }
        let train_mse = losses.iter().sum::<f64>() / losses.len() as f64;
        let evaluate = !test.is_empty() && (epoch.is_multiple_of(self.config.eval_every) || epoch == self.config.epochs);
        let test_mse = if evaluate {
            let per = match per_frame_mse(&self.graph, &params, test) {
                Ok(v) => v,
                Err(ExecError::NumericOverflow { .. }) => return Err(diverged),
                Err(e) => return Err(e.into()),
            };
            let mean = per.iter().sum::<f64>() / per.len() as f64;
            if !mean.is_finite() {
                return Err(diverged);
            }
            Some(mean)
        } else {
            None
        };
        let record = EpochRecord { epoch, train_mse, test_mse };
        self.params = params;
        self.optimizer = optimizer;
        self.log.records.push(record);
        self.epoch = epoch;
        Ok(record)
    }

    /// Runs until `config.epochs` epochs are complete, calling `after_epoch`
    /// after each one.
    pub fn run(
        &mut self,
        data: &PreparedData<T>,
        mut after_epoch: impl FnMut(&Self) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        if self.epoch < self.config.epochs && data.train.is_empty() {
            return Err(TrainError::EmptyTrain);
        }
        while self.epoch < self.config.epochs {
            self.run_epoch(&data.train, &data.test)?;
            after_epoch(self)?;
        }
        Ok(())
    }
}

/// Trains from scratch and returns the final parameters and the log.
pub fn train<T: Scalar>(
    model: &ModelConfig,
    data: &PreparedData<T>,
    config: &TrainConfig,
) -> Result<(ParameterSet<T>, LossLog), TrainError> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.run(data, |_| Ok(()))?;
    Ok((trainer.params, trainer.log))
}

/// Complete training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub params: ParameterSet<T>,
    pub optimizer: OptimizerState<T>,
    pub log: LossLog,
    pub epoch: usize,
}

const CHECKPOINT_FORMAT: &str = "denseed-checkpoint-1";
const CHECKPOINT_INDEX: &str = "checkpoint.txt";
const LOG_FILE: &str = "loss.csv";
const STEMS: [&str; 3] = ["params", "adam_m", "adam_v"];

fn sha256_file(path: &Path) -> Result<String, TrainError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn checkpoint_files() -> Vec<String> {
    let mut names: Vec<String> =
        STEMS.iter().flat_map(|s| [format!("{s}.bin"), format!("{s}.manifest")]).collect();
    names.push(LOG_FILE.to_string());
    names
}

impl<T: Scalar> Checkpoint<T> {
    /// Writes a checkpoint directory: parameter and moment containers, the
    /// loss log, and an index with every file's SHA-256. Returns all paths,
    /// index last.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, TrainError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        self.params.save(&dir.join("params"))?;
        self.optimizer.m.save(&dir.join("adam_m"))?;
        self.optimizer.v.save(&dir.join("adam_v"))?;
        let log_path = dir.join(LOG_FILE);
        fs::write(&log_path, self.log.to_csv()).map_err(|e| io_err(&log_path, e))?;

        let mut index = KvMap::new();
        index.insert("format", CHECKPOINT_FORMAT);
        index.insert("dtype", T::DTYPE);
        index.insert("epoch", self.epoch);
        index.insert("adam_step", self.optimizer.t);
        for (k, v) in &self.model.to_kv().0 {
            index.insert(format!("model.{k}"), v);
        }
        for (k, v) in &self.config.to_kv().0 {
            index.insert(format!("train.{k}"), v);
        }
        let mut paths = Vec::new();
        for name in checkpoint_files() {
            let p = dir.join(&name);
            index.insert(format!("sha256.{name}"), sha256_file(&p)?);
            paths.push(p);
        }
        let index_path = dir.join(CHECKPOINT_INDEX);
        fs::write(&index_path, index.render()).map_err(|e| io_err(&index_path, e))?;
        paths.push(index_path);
        Ok(paths)
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let integrity = |m: String| TrainError::Integrity(m);
        let index_path = dir.join(CHECKPOINT_INDEX);
        let text = fs::read_to_string(&index_path).map_err(|e| io_err(&index_path, e))?;
        let index = KvMap::parse(&text).map_err(|e| integrity(format!("checkpoint index: {e}")))?;
        if index.get("format") != Some(CHECKPOINT_FORMAT) {
            return Err(integrity(format!("unknown checkpoint format {:?}", index.get("format"))));
        }
        if index.get("dtype") != Some(T::DTYPE) {
            return Err(integrity(format!("checkpoint dtype {:?}, expected {}", index.get("dtype"), T::DTYPE)));
        }
        for name in checkpoint_files() {
            let want = index.get(&format!("sha256.{name}")).ok_or_else(|| integrity(format!("no checksum for {name}")))?;
            let path = dir.join(&name);
            if !path.exists() {
                return Err(integrity(format!("{name} is missing")));
            }
            if sha256_file(&path)? != want {
                return Err(integrity(format!("checksum mismatch for {name}")));
            }
        }
        let section = |prefix: &str| {
            let mut kv = KvMap::new();
            for (k, v) in &index.0 {
                if let Some(rest) = k.strip_prefix(prefix) {
                    kv.insert(rest, v);
                }
            }
            kv
        };
        let model = ModelConfig::from_kv(&section("model.")).map_err(|e| integrity(format!("model: {e}")))?;
        let config = TrainConfig::from_kv(&section("train."), &TrainConfig::default())
            .map_err(|e| integrity(format!("train config: {e}")))?;
        let number = |key: &str| {
            index
                .get(key)
                .and_then(|v| v.parse::<u64>().ok())
                .ok_or_else(|| integrity(format!("missing or bad {key}")))
        };
        let epoch = number("epoch")? as usize;
        let t = number("adam_step")?;
        let load = |stem: &str| {
            ParameterSet::<T>::load(&dir.join(stem)).map_err(|e| match e {
                ExecError::Integrity(m) => integrity(format!("{stem}: {m}")),
                other => other.into(),
            })
        };
        let params = load("params")?;
        let optimizer = OptimizerState { m: load("adam_m")?, v: load("adam_v")?, t };
        let log_path = dir.join(LOG_FILE);
        let log = LossLog::from_csv(&fs::read_to_string(&log_path).map_err(|e| io_err(&log_path, e))?)?;
        if log.len() != epoch {
            return Err(integrity(format!("loss log has {} epochs, index says {epoch}", log.len())));
        }
        let graph = model.build()?;
        params.check_against(&graph).map_err(|e| integrity(e.to_string()))?;
        for m in [&optimizer.m, &optimizer.v] {
            if m.tensors.iter().zip(&params.tensors).any(|(a, b)| a.data.shape() != b.data.shape())
                || m.tensors.len() != params.tensors.len()
            {
                return Err(integrity("optimizer moments do not match the parameters".into()));
            }
        }
        Ok(Checkpoint { model, config, params, optimizer, log, epoch })
    }
}

/// `key = value` echo of the model and every hyperparameter.
pub fn run_config_text(model: &ModelConfig, config: &TrainConfig) -> String {
    let mut kv = KvMap::new();
    for (k, v) in &model.to_kv().0 {
        kv.insert(format!("model.{k}"), v);
    }
    kv.merge(&config.to_kv());
    kv.render()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{ParamRole, ParamTensor};
    use ndarray::{ArrayD, IxDyn};

    fn scalar_set(v: f64) -> ParameterSet<f64> {
        let g = crate::arch::GraphBuilder::new("one", 1);
        let mut b = g;
        b.conv("c", 1, 1, 1, false);
        let graph = b.finish().unwrap();
        let mut p = ParameterSet::<f64>::init(&graph, 0);
        p.tensors[0] = ParamTensor { layer: 0, role: ParamRole::Weight, data: ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), v) };
        p
    }

    #[test]
    fn defaults_are_the_published_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.learning_rate, c.weight_decay, c.epochs), (4, 3e-4, 3e-5, 200));
        assert_eq!((c.beta1, c.beta2, c.adam_eps), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn config_kv_roundtrip() {
        let c = TrainConfig { seed: 17, learning_rate: 1.25e-3, ..TrainConfig::default() };
        assert_eq!(TrainConfig::from_kv(&c.to_kv(), &TrainConfig::default()).unwrap(), c);
        let mut kv = KvMap::new();
        kv.insert("batch_size", 0);
        assert!(TrainConfig::from_kv(&kv, &c).is_err());
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = scalar_set(0.7);
        let before = p.clone();
        let mut st = OptimizerState::new(&p);
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut st, &cfg).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        for g in [1e-3, -2.0, 50.0] {
            let mut p = scalar_set(1.0);
            let mut grad = p.zeros_like();
            grad.set_flat(0, g);
            let mut st = OptimizerState::new(&p);
            adam_step(&mut p, &grad, &mut st, &cfg).unwrap();
            let step = p.get_flat(0) - 1.0;
            // m_hat = g, v_hat = g^2 at t = 1
            let oracle = -cfg.learning_rate * g / (g.abs() + cfg.adam_eps);
            assert!((step - oracle).abs() < 1e-15, "g {g}");
            assert!((step.abs() - cfg.learning_rate).abs() <= cfg.learning_rate * cfg.adam_eps / g.abs() + 1e-18);
        }
    }

    #[test]
    fn coupled_weight_decay_enters_the_moments() {
        let cfg = TrainConfig::default();
        let mut p = scalar_set(1.0);
        let mut st = OptimizerState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut st, &cfg).unwrap();
        let g = 3e-5;
        let oracle = 1.0 - 3e-4 * g / (g + 1e-8);
        assert!((p.get_flat(0) - oracle).abs() < 1e-15);
        assert!((st.m.get_flat(0) - 0.1 * g).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut p = scalar_set(1.0);
        let mut grad = p.zeros_like();
        grad.set_flat(0, f64::NAN);
        let mut st = OptimizerState::new(&p);
        let before = p.clone();
        assert!(matches!(
            adam_step(&mut p, &grad, &mut st, &TrainConfig::default()),
            Err(TrainError::NonFiniteGradient { step: 1 })
        ));
        assert_eq!((p, st.t), (before, 0));
    }

    #[test]
    fn loss_log_csv_roundtrip() {
        let log = LossLog {
            records: vec![
                EpochRecord { epoch: 1, train_mse: 0.125, test_mse: Some(0.2) },
                EpochRecord { epoch: 2, train_mse: 1.0 / 3.0, test_mse: None },
            ],
        };
        let text = log.to_csv();
        assert!(text.starts_with("epoch,train_mse,test_mse\n"));
        assert_eq!(LossLog::from_csv(&text).unwrap(), log);
        assert!(LossLog::from_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn run_config_echoes_everything() {
        let text = run_config_text(&ModelConfig::DenseEd(Default::default()), &TrainConfig::default());
        let kv = KvMap::parse(&text).unwrap();
        for key in TrainConfig::KEYS {
            assert!(kv.get(key).is_some(), "{key}");
        }
        assert_eq!(kv.get("learning_rate"), Some("0.0003"));
        assert_eq!(kv.get("model.blocks"), Some("3,6,3"));
    }
}
