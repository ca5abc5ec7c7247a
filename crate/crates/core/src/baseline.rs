//! Comparison model: a four-class LSTM classifier of the next move relative
//! to the transaction cost, traded with a one-step threshold rule.
//!
//! It shares the network core with the Q networks (4 outputs plus softmax)
//! and sees the same window of diffs; the action slot of its input is
//! always flat. Training is offline on a front split of the series, and the
//! frozen classifier is evaluated on the back split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{diff_series, make_state, zscore_causal, Action, MarketState, PriceSeries};
use crate::metrics::{align_run, compute_report, segment_trades, MetricsReport, TradeRecord};
use crate::netcore::{apply_gradients_in_place, forward_tape, init_params, GradientSet, NetDims, NetworkParams};

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveClass {
    UpBeyondCost,
    UpWithinCost,
    DownWithinCost,
    DownBeyondCost,
}

impl MoveClass {
    pub const ALL: [MoveClass; NUM_CLASSES] = [
        MoveClass::UpBeyondCost,
        MoveClass::UpWithinCost,
        MoveClass::DownWithinCost,
        MoveClass::DownBeyondCost,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// `d > c`, `0 < d <= c`, `-c <= d <= 0`, `d < -c`.
    pub fn of_move(d: f64, cost: f64) -> MoveClass {
        if d > cost {
            MoveClass::UpBeyondCost
        } else if d > 0.0 {
            MoveClass::UpWithinCost
        } else if d >= -cost {
            MoveClass::DownWithinCost
        } else {
            MoveClass::DownBeyondCost
        }
    }
}

pub fn label_moves(diffs: &[f64], cost: f64) -> Vec<MoveClass> {
    diffs.iter().map(|&d| MoveClass::of_move(d, cost)).collect()
}

/// Long on a predicted move beyond cost upward, short beyond cost downward,
/// flat otherwise. Consecutive agreeing predictions hold the position.
pub fn trade_from_classes(preds: &[MoveClass]) -> Vec<Action> {
    preds
        .iter()
        .map(|p| match p {
            MoveClass::UpBeyondCost => Action::Long,
            MoveClass::DownBeyondCost => Action::Short,
            MoveClass::UpWithinCost | MoveClass::DownWithinCost => Action::Flat,
        })
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams(NetworkParams);

impl ClassifierParams {
    pub fn new(params: NetworkParams) -> Result<Self> {
        if params.dims().output_size != NUM_CLASSES {
            return Err(Error::Config(format!(
                "classifier needs {NUM_CLASSES} outputs, got {}",
                params.dims().output_size
            )));
        }
        Ok(Self(params))
    }

    pub fn network(&self) -> &NetworkParams {
        &self.0
    }

    pub fn probabilities(&self, diffs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(forward_tape(&self.0, diffs, 0.0)?.outputs()))
    }

    pub fn predict(&self, diffs: &[f64]) -> Result<MoveClass> {
        let p = self.probabilities(diffs)?;
        let best = (0..NUM_CLASSES)
            .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
            .expect("four classes");
        Ok(MoveClass::ALL[best])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub horizon: usize,
    pub lstm_hidden: usize,
    pub fc_hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of the diff sequence used for training.
    pub train_fraction: f64,
    pub zscore: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            horizon: 32,
            lstm_hidden: 32,
            fc_hidden: 16,
            lr: 0.05,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            train_fraction: 0.5,
            zscore: false,
        }
    }
}

impl ClassifierConfig {
    pub fn dims(&self) -> NetDims {
        NetDims::new(self.horizon, self.lstm_hidden, self.fc_hidden).with_outputs(NUM_CLASSES)
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.dims().validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// Accuracy on the training samples after the last epoch.
    pub train_accuracy: f64,
    pub samples: usize,
}

/// First diff index whose label belongs to the evaluation split.
pub fn split_index(num_diffs: usize, train_fraction: f64) -> usize {
    ((num_diffs as f64 * train_fraction).floor() as usize).min(num_diffs)
}

fn network_inputs(diffs: &[f64], zscore: bool) -> Vec<f64> {
    if zscore {
        zscore_causal(diffs)
    } else {
        diffs.to_vec()
    }
}

fn window(features: &[f64], t: usize, horizon: usize) -> Result<MarketState> {
    make_state(features, t, horizon, Action::Flat)
}

/// Trains on samples whose label `d[t+1]` falls in the front split.
pub fn train_classifier(series: &PriceSeries, cost: f64, cfg: &ClassifierConfig) -> Result<(ClassifierParams, TrainStats)> {
    cfg.validate()?;
    if cost.is_nan() || cost < 0.0 {
        return Err(Error::Config(format!("cost must be >= 0, got {cost}")));
    }
    let diffs = diff_series(series)?;
    let features = network_inputs(&diffs, cfg.zscore);
    let labels = label_moves(&diffs, cost);
    let split = split_index(diffs.len(), cfg.train_fraction);
    let h = cfg.horizon;
    if split < h + 1 {
        return Err(Error::InsufficientHistory(format!(
            "training split of {split} diffs cannot fill a window of {h} plus one label"
        )));
    }
    let samples: Vec<(MarketState, usize)> = (h - 1..split - 1)
        .map(|t| Ok((window(&features, t, h)?, labels[t + 1].index())))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut net = init_params(cfg.dims(), cfg.seed)?;
    let mut grads = GradientSet::zeros(cfg.dims());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let (s, y) = &samples[i];
                let tape = forward_tape(&net, &s.diffs, 0.0)?;
                let mut dout = softmax(tape.outputs());
                total -= dout[*y].max(1e-300).ln();
                dout[*y] -= 1.0;
                tape.backward(&net, &dout, &mut grads)?;
            }
            apply_gradients_in_place(&mut net, &grads, batch.len(), cfg.lr)?;
        }
        epoch_losses.push(total / samples.len() as f64);
    }

    let clf = ClassifierParams::new(net)?;
    let mut correct = 0usize;
    for (s, y) in &samples {
        if clf.predict(&s.diffs)?.index() == *y {
            correct += 1;
        }
    }
    let stats = TrainStats {
        epoch_losses,
        train_accuracy: correct as f64 / samples.len() as f64,
        samples: samples.len(),
    };
    Ok((clf, stats))
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub classifier: ClassifierParams,
    pub stats: TrainStats,
    /// Diff index of the first evaluation step.
    pub first_t: usize,
    pub predictions: Vec<MoveClass>,
    pub actions: Vec<Action>,
    pub trades: Vec<TradeRecord>,
    pub report: MetricsReport,
}

/// Trains on the front split, then trades the frozen classifier over the
/// back split. The first evaluation step predicts the first back-split diff.
pub fn run_baseline(series: &PriceSeries, cost: f64, cfg: &ClassifierConfig) -> Result<BaselineOutcome> {
    let (classifier, stats) = train_classifier(series, cost, cfg)?;
    let diffs = diff_series(series)?;
    let features = network_inputs(&diffs, cfg.zscore);
    let split = split_index(diffs.len(), cfg.train_fraction);
    let first_t = split.max(cfg.horizon) - 1;
    if first_t + 1 >= diffs.len() {
        return Err(Error::InsufficientHistory("evaluation split is empty".into()));
    }
    let predictions: Vec<MoveClass> = (first_t..diffs.len() - 1)
        .map(|t| classifier.predict(&window(&features, t, cfg.horizon)?.diffs))
        .collect::<Result<_>>()?;
    let actions = trade_from_classes(&predictions);
    let (aligned, prices) = align_run(&actions, &series.closes(), first_t)?;
    let trades = segment_trades(&aligned, &prices, cost)?;
    let report = compute_report(&trades);
    Ok(BaselineOutcome {
        classifier,
        stats,
        first_t,
        predictions,
        actions,
        trades,
        report,
    })
}
