//! Supervised pretraining followed by unsupervised GAR training on blended batches.
//!
//! The unsupervised phase takes no labels. Validation and test accuracy come
//! from an [`EpochHook`] that only sees a snapshot of the network, so whatever
//! labels the hook holds cannot reach a gradient.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gar::{gar_batch_objective, gar_loss, GarConfig};
use crate::matrix::Matrix;
use crate::network::{
    sgd_nesterov_step, softmax_cross_entropy, Mode, Network, OptState, SgdConfig,
};
use crate::rng::Rng;

const PRETRAIN_STREAM: u64 = 0x5eed_0002;
const UNSUP_STREAM: u64 = 0x5eed_0003;
const METRIC_STREAM: u64 = 0x5eed_0004;
const EVAL_CHUNK: usize = 1024;

/// Named `(b_L, b_U)` pairs.
pub const BATCH_PRESETS: &[(&str, usize, usize)] =
    &[("mnist-100", 16, 112), ("svhn-1000", 96, 32), ("norb", 32, 96)];

pub fn batch_preset(name: &str) -> Option<(usize, usize)> {
    BATCH_PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|&(_, l, u)| (l, u))
}

/// `b_L = round(m_L / 10)` clamped to `[1, 127]`, `b_U = 128 − b_L`.
pub fn default_batch_ratio(m_l: usize) -> (usize, usize) {
    let b_l = ((m_l as f64 / 10.0).round() as usize).clamp(1, 127);
    (b_l, 128 - b_l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            batch_size: 128,
            epochs: 100,
            sgd: SgdConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnsupConfig {
    pub b_l: usize,
    pub b_u: usize,
    pub epochs: usize,
    pub gar: GarConfig,
    pub sgd: SgdConfig,
    pub seed: u64,
    /// Draw guidance rows with replacement (needed when `b_L > m_L`).
    pub with_replacement: bool,
    /// Rows of `X_U` used to log U, α and β after each epoch.
    pub metric_rows: usize,
}

impl UnsupConfig {
    pub fn for_labeled(m_l: usize) -> Self {
        let (b_l, b_u) = default_batch_ratio(m_l);
        UnsupConfig {
            b_l,
            b_u,
            epochs: 100,
            gar: GarConfig::default(),
            sgd: SgdConfig::default(),
            seed: 0,
            with_replacement: false,
            metric_rows: 1000,
        }
    }

    pub fn validate(&self, m_l: usize, m_u: usize) -> Result<()> {
        self.gar.validate()?;
        if self.b_u == 0 || m_u == 0 {
            return Err(Error::Config(format!(
                "unsupervised phase needs b_U >= 1 and a nonempty X_U (b_U={}, m_U={m_u})",
                self.b_u
            )));
        }
        if self.b_l > m_l && !(self.with_replacement && m_l > 0) {
            return Err(Error::Config(format!(
                "b_L={} exceeds the {m_l} labeled examples",
                self.b_l
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Unsup,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Unsup => "unsup",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "unsup" => Ok(Phase::Unsup),
            other => Err(Error::Config(format!("unknown phase {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub sup_loss: Option<f64>,
    pub u: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub frob_sq: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

impl EpochRecord {
    fn new(epoch: usize, phase: Phase, metrics: EvalMetrics) -> Self {
        EpochRecord {
            epoch,
            phase,
            sup_loss: None,
            u: None,
            alpha: None,
            beta: None,
            frob_sq: None,
            val_acc: metrics.val_acc,
            test_acc: metrics.test_acc,
        }
    }
}

pub const TRAINLOG_HEADER: [&str; 9] = [
    "epoch", "phase", "sup_loss", "U", "alpha", "beta", "frob_sq", "val_acc", "test_acc",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl TrainLog {
    pub fn phase(&self, phase: Phase) -> Vec<EpochRecord> {
        self.records.iter().filter(|r| r.phase == phase).cloned().collect()
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(TRAINLOG_HEADER).expect("in-memory write");
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.phase.to_string(),
                opt_field(r.sup_loss),
                opt_field(r.u),
                opt_field(r.alpha),
                opt_field(r.beta),
                opt_field(r.frob_sq),
                opt_field(r.val_acc),
                opt_field(r.test_acc),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<TrainLog> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r
            .headers()
            .map_err(|e| Error::format(path, e.to_string()))?
            .clone();
        if header.iter().ne(TRAINLOG_HEADER) {
            return Err(Error::format(path, format!("unexpected header {header:?}")));
        }
        let mut records = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let bad = |field: &str| Error::format(path, format!("row {}: bad {field}", i + 1));
            let opt = |k: usize| -> Result<Option<f64>> {
                match &rec[k] {
                    "" => Ok(None),
                    s => s.parse().map(Some).map_err(|_| bad(TRAINLOG_HEADER[k])),
                }
            };
            records.push(EpochRecord {
                epoch: rec[0].parse().map_err(|_| bad("epoch"))?,
                phase: rec[1].parse().map_err(|_| bad("phase"))?,
                sup_loss: opt(2)?,
                u: opt(3)?,
                alpha: opt(4)?,
                beta: opt(5)?,
                frob_sq: opt(6)?,
                val_acc: opt(7)?,
                test_acc: opt(8)?,
            });
        }
        Ok(TrainLog { records })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<TrainLog> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }
}

/// Epoch number of the highest validation accuracy; ties go to the earliest.
/// Records without a validation accuracy are skipped.
pub fn select_epoch(records: &[EpochRecord]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for r in records {
        if let Some(acc) = r.val_acc {
            if best.is_none_or(|(b, _)| acc > b) {
                best = Some((acc, r.epoch));
            }
        }
    }
    best.map(|(_, e)| e)
        .ok_or_else(|| Error::Config("no epoch with a validation accuracy to select from".into()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalMetrics {
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

/// Called once per epoch (epoch 0 being the starting network).
pub trait EpochHook {
    fn on_epoch(&mut self, phase: Phase, epoch: usize, net: &Network) -> Result<EvalMetrics>;
}

impl<F> EpochHook for F
where
    F: FnMut(Phase, usize, &Network) -> Result<EvalMetrics>,
{
    fn on_epoch(&mut self, phase: Phase, epoch: usize, net: &Network) -> Result<EvalMetrics> {
        self(phase, epoch, net)
    }
}

/// Hook that records nothing.
pub struct NoEval;

impl EpochHook for NoEval {
    fn on_epoch(&mut self, _: Phase, _: usize, _: &Network) -> Result<EvalMetrics> {
        Ok(EvalMetrics::default())
    }
}

/// Hook scoring validation and test sets.
pub struct Evaluator<'a> {
    pub val: Option<(&'a Matrix, &'a [usize])>,
    pub test: Option<(&'a Matrix, &'a [usize])>,
}

impl EpochHook for Evaluator<'_> {
    fn on_epoch(&mut self, _: Phase, _: usize, net: &Network) -> Result<EvalMetrics> {
        let score = |set: Option<(&Matrix, &[usize])>| -> Result<Option<f64>> {
            set.map(|(x, t)| accuracy(net, x, t)).transpose()
        };
        Ok(EvalMetrics {
            val_acc: score(self.val)?,
            test_acc: score(self.test)?,
        })
    }
}

/// Eval-mode predicted classes, computed in row chunks.
pub fn predict_classes(net: &Network, x: &Matrix) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(x.rows());
    let mut start = 0;
    while start < x.rows() {
        let end = (start + EVAL_CHUNK).min(x.rows());
        let idx: Vec<usize> = (start..end).collect();
        out.extend(net.predict(&x.select_rows(&idx))?.argmax_rows());
        start = end;
    }
    Ok(out)
}

pub fn accuracy(net: &Network, x: &Matrix, t: &[usize]) -> Result<f64> {
    if t.len() != x.rows() {
        return Err(Error::shape("accuracy", x.shape(), (t.len(), x.cols())));
    }
    if t.is_empty() {
        return Err(Error::Config("cannot score an empty set".into()));
    }
    let pred = predict_classes(net, x)?;
    let hits = pred.iter().zip(t).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / t.len() as f64)
}

/// `1 − accuracy` of eval-mode argmax predictions.
pub fn evaluate(net: &Network, x: &Matrix, t: &[usize]) -> Result<f64> {
    Ok(1.0 - accuracy(net, x, t)?)
}

/// A finished phase: the last network, the validation-selected one, and the log.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub last: Network,
    pub best: Network,
    pub best_epoch: usize,
    pub log: TrainLog,
}

struct BestTracker {
    best: Option<(f64, usize, Network)>,
}

impl BestTracker {
    fn offer(&mut self, record: &EpochRecord, net: &Network) {
        if let Some(acc) = record.val_acc {
            if self.best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                self.best = Some((acc, record.epoch, net.clone()));
            }
        }
    }

    fn finish(self, last: Network, last_epoch: usize, log: TrainLog) -> PhaseOutcome {
        let (best_epoch, best) = match self.best {
            Some((_, e, n)) => (e, n),
            None => (last_epoch, last.clone()),
        };
        PhaseOutcome {
            last,
            best,
            best_epoch,
            log,
        }
    }
}

/// Supervised phase: shuffled minibatches of `(X_L, t_L)`, dropout on.
pub fn pretrain(
    mut net: Network,
    x_l: &Matrix,
    t_l: &[usize],
    cfg: &PretrainConfig,
    hook: &mut dyn EpochHook,
) -> Result<PhaseOutcome> {
    if t_l.len() != x_l.rows() || x_l.rows() == 0 {
        return Err(Error::shape("pretrain", x_l.shape(), (t_l.len(), x_l.cols())));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = Rng::new(cfg.seed, PRETRAIN_STREAM);
    let mut opt = OptState::new(&net, cfg.sgd);
    let mut log = TrainLog::default();
    let mut tracker = BestTracker { best: None };

    let rec = EpochRecord::new(0, Phase::Pretrain, hook.on_epoch(Phase::Pretrain, 0, &net)?);
    tracker.offer(&rec, &net);
    log.records.push(rec);

    for epoch in 1..=cfg.epochs {
        let order = rng.permutation(x_l.rows());
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_l.select_rows(chunk);
            let tb: Vec<usize> = chunk.iter().map(|&i| t_l[i]).collect();
            let (z, cache) = net.forward(&xb, Mode::Train(&mut rng))?;
            let (loss, dz) = softmax_cross_entropy(&z, &tb)?;
            let grads = net.backward(&cache, &dz)?;
            sgd_nesterov_step(&mut net, &grads, &mut opt);
            total += loss * chunk.len() as f64;
        }
        let mut rec = EpochRecord::new(epoch, Phase::Pretrain, hook.on_epoch(Phase::Pretrain, epoch, &net)?);
        rec.sup_loss = Some(total / x_l.rows() as f64);
        tracker.offer(&rec, &net);
        log.records.push(rec);
    }
    Ok(tracker.finish(net, cfg.epochs, log))
}

/// Row provenance of one blended batch: `guide` indexes `X_L`, `unlabeled` indexes `X_U`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlendedBatch {
    pub guide: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl BlendedBatch {
    /// Guidance rows first, then unlabeled rows.
    pub fn assemble(&self, x_l: &Matrix, x_u: &Matrix) -> Matrix {
        x_l.select_rows(&self.guide).vstack(&x_u.select_rows(&self.unlabeled))
    }
}

/// One epoch of blended batches: `X_U` shuffled into chunks of `b_U` (the last
/// may be short), each paired with a fresh draw of `b_L` rows of `X_L`.
pub fn plan_epoch(
    m_l: usize,
    m_u: usize,
    b_l: usize,
    b_u: usize,
    with_replacement: bool,
    rng: &mut Rng,
) -> Vec<BlendedBatch> {
    let order = rng.permutation(m_u);
    order
        .chunks(b_u.max(1))
        .map(|chunk| {
            let guide = if with_replacement {
                (0..b_l).map(|_| rng.below_usize(m_l)).collect()
            } else {
                rng.sample_distinct(m_l, b_l)
            };
            BlendedBatch {
                guide,
                unlabeled: chunk.to_vec(),
            }
        })
        .collect()
}

fn record_gar_metrics(rec: &mut EpochRecord, net: &Network, probe: &Matrix, gar: &GarConfig) -> Result<()> {
    let (b, _) = net.gar_head(probe)?;
    let terms = gar_loss(&b, gar)?;
    rec.u = Some(terms.total);
    rec.alpha = Some(terms.alpha);
    rec.beta = Some(terms.balance);
    rec.frob_sq = Some(terms.frob_sq);
    Ok(())
}

/// Unsupervised phase: one step on `U` per blended batch, no dropout, no labels.
///
/// U, α, β and ‖B‖² are logged after each epoch on a fixed seeded sample of
/// `metric_rows` rows of `X_U`, so epoch 0 (the incoming network) is comparable
/// with every later epoch.
pub fn unsupervised_train(
    mut net: Network,
    x_l: &Matrix,
    x_u: &Matrix,
    cfg: &UnsupConfig,
    hook: &mut dyn EpochHook,
) -> Result<PhaseOutcome> {
    cfg.validate(x_l.rows(), x_u.rows())?;
    for (name, x) in [("X_L", x_l), ("X_U", x_u)] {
        if x.cols() != net.input_dim() {
            return Err(Error::Config(format!(
                "{name} has {} columns, network expects {}",
                x.cols(),
                net.input_dim()
            )));
        }
    }
    let mut rng = Rng::new(cfg.seed, UNSUP_STREAM);
    let probe_idx = Rng::new(cfg.seed, METRIC_STREAM)
        .sample_distinct(x_u.rows(), cfg.metric_rows.clamp(1, x_u.rows()));
    let probe = x_u.select_rows(&probe_idx);
    let mut opt = OptState::new(&net, cfg.sgd);
    let mut log = TrainLog::default();
    let mut tracker = BestTracker { best: None };

    for epoch in 0..=cfg.epochs {
        if epoch > 0 {
            for batch in plan_epoch(x_l.rows(), x_u.rows(), cfg.b_l, cfg.b_u, cfg.with_replacement, &mut rng) {
                let xb = batch.assemble(x_l, x_u);
                let (_, grads) = gar_batch_objective(&net, &xb, &cfg.gar)?;
                sgd_nesterov_step(&mut net, &grads, &mut opt);
            }
        }
        let mut rec = EpochRecord::new(epoch, Phase::Unsup, hook.on_epoch(Phase::Unsup, epoch, &net)?);
        record_gar_metrics(&mut rec, &net, &probe, &cfg.gar)?;
        tracker.offer(&rec, &net);
        log.records.push(rec);
    }
    Ok(tracker.finish(net, cfg.epochs, log))
}

/// Both phases plus the test errors at each phase's selected epoch.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub pretrain: PhaseOutcome,
    pub unsup: PhaseOutcome,
    pub log: TrainLog,
    pub baseline_error: Option<f64>,
    pub final_error: Option<f64>,
}

pub struct PipelineInputs<'a> {
    pub x_l: &'a Matrix,
    pub t_l: &'a [usize],
    pub x_u: &'a Matrix,
    pub val: Option<(&'a Matrix, &'a [usize])>,
    pub test: Option<(&'a Matrix, &'a [usize])>,
}

/// Pretrains, then continues GAR training from the validation-selected pretrained network.
pub fn run_pipeline(
    net: Network,
    data: &PipelineInputs<'_>,
    pre: &PretrainConfig,
    unsup: &UnsupConfig,
) -> Result<PipelineOutcome> {
    let mut eval = Evaluator {
        val: data.val,
        test: data.test,
    };
    let pretrain_out = pretrain(net, data.x_l, data.t_l, pre, &mut eval)?;
    let unsup_out = unsupervised_train(pretrain_out.best.clone(), data.x_l, data.x_u, unsup, &mut eval)?;
    let error_of = |net: &Network| data.test.map(|(x, t)| evaluate(net, x, t)).transpose();
    let baseline_error = error_of(&pretrain_out.best)?;
    let final_error = error_of(&unsup_out.best)?;
    let mut log = pretrain_out.log.clone();
    log.extend(unsup_out.log.clone());
    Ok(PipelineOutcome {
        pretrain: pretrain_out,
        unsup: unsup_out,
        log,
        baseline_error,
        final_error,
    })
}
