//! Loss, Adam, chronological splitting, the training loop, and evaluation.
//!
//! Training minimizes MSE in transformed feature space; all reported
//! metrics are computed in raw-count space after the inverse transform,
//! with predictions clamped at zero. The loop is single-threaded and fully
//! deterministic for a fixed (seed, config, data) triple.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{ParamStore, Tape, TensorId};
use crate::derive_seed;
use crate::graphbuild::{fit_feature_transform, FeatureTransform, IntervalSeries};
use crate::mat::Mat;
use crate::models::{prepare_samples, Forecaster, PreparedSample};
use crate::{Error, Result};

/// Optimization settings. Defaults: Adam at 0.001, batches of 16, up to
/// 200 epochs with patience-20 early stopping on a 10% tail-of-train
/// validation slice, 70/30 chronological split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub split_fraction: f64,
    /// Tail share of the train split held out for early stopping;
    /// 0 disables validation and early stopping.
    pub validation_fraction: f64,
    /// Random split instead of chronological. Off by default: random
    /// splitting leaks information between temporally adjacent samples.
    pub shuffle_split: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 16,
            epochs: 200,
            patience: 20,
            split_fraction: 0.7,
            validation_fraction: 0.1,
            shuffle_split: false,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "train.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".to_string()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be positive".to_string()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train.split_fraction must be in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "train.validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// First ⌊fraction·n⌋ elements and the rest, order preserved.
pub fn chrono_split<T>(items: &[T], fraction: f64) -> Result<(&[T], &[T])> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let cut = (fraction * items.len() as f64).floor() as usize;
    Ok(items.split_at(cut))
}

/// Mean squared difference over all entries, as a scalar tape node.
pub fn mse_loss(tape: &mut Tape, pred: TensorId, target: TensorId) -> TensorId {
    let diff = tape.sub(pred, target);
    let sq = tape.hadamard(diff, diff);
    tape.mean(sq)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam update over every parameter in the store, driven by
/// the accumulated gradients, which are cleared afterwards. The step count
/// is shared across parameters and increments once per call.
pub fn adam_step(store: &mut ParamStore, learning_rate: f64) {
    store.step += 1;
    let t = store.step as i32;
    let m_corr = 1.0 - ADAM_BETA1.powi(t);
    let v_corr = 1.0 - ADAM_BETA2.powi(t);
    for idx in 0..store.values.len() {
        let grad = &store.grads[idx];
        let m = &mut store.moment1[idx];
        let v = &mut store.moment2[idx];
        *m = m.scale(ADAM_BETA1).add(&grad.scale(1.0 - ADAM_BETA1));
        *v = v.scale(ADAM_BETA2).add(&grad.hadamard(grad).scale(1.0 - ADAM_BETA2));
        let value = &mut store.values[idx];
        for k in 0..value.len() {
            let m_hat = m.data()[k] / m_corr;
            let v_hat = v.data()[k] / v_corr;
            value.data_mut()[k] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    store.zero_grads();
}

/// Per-epoch record emitted by [`train`].
#[derive(Debug, Clone)]
pub struct TrainSummary {
    /// Mean transformed-space MSE over the training samples, per epoch.
    pub loss_curve: Vec<f64>,
    /// Raw-space validation MAE per epoch; empty when validation is off.
    pub val_curve: Vec<f64>,
    /// Epoch whose parameters were kept (best validation MAE, or the last
    /// epoch when validation is off).
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Everything needed to train and evaluate one model: prepared samples on
/// both sides of the chronological split and the transforms fitted on the
/// training portion only.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
    pub taxi_transform: FeatureTransform,
    pub aux_transform: FeatureTransform,
}

/// Split samples, fit per-platform feature transforms on intervals up to
/// the last training target (test intervals never leak into the
/// statistics), and prepare both sides. The split is chronological unless
/// `shuffle_seed` is given, which permutes the samples first; note a random
/// split lets training samples neighbor test samples in time.
pub fn prepare(
    taxi: &IntervalSeries,
    aux: &IntervalSeries,
    k: usize,
    p: usize,
    split_fraction: f64,
    shuffle_seed: Option<u64>,
) -> Result<PreparedData> {
    let mut samples = crate::graphbuild::make_samples(taxi, aux, k, p)?;
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &[SEED_SPLIT]));
        for i in (1..samples.len()).rev() {
            samples.swap(i, rng.random_range(0..=i));
        }
    }
    let (train_samples, test_samples) = chrono_split(&samples, split_fraction)?;
    let boundary = train_samples
        .iter()
        .map(|s| s.target_index.0)
        .max()
        .ok_or_else(|| Error::Data("no training samples after the split".to_string()))?
        + 1;

    let fit = |series: &IntervalSeries| {
        let feats: Vec<_> = series.intervals[..boundary].iter().map(|d| d.features.as_ref()).collect();
        fit_feature_transform(&feats)
    };
    let taxi_transform = fit(taxi)?;
    let aux_transform = fit(aux)?;

    Ok(PreparedData {
        train: prepare_samples(train_samples, &taxi_transform, &aux_transform),
        test: prepare_samples(test_samples, &taxi_transform, &aux_transform),
        taxi_transform,
        aux_transform,
    })
}

/// Mini-batch training loop: per-epoch shuffle, gradients averaged over
/// each batch, Adam updates, optional early stopping on validation MAE,
/// returning the model at its best validation epoch. A non-finite loss
/// aborts with epoch/batch context rather than training on garbage.
pub fn train(
    model: &mut Forecaster,
    samples: &[PreparedSample],
    taxi_transform: &FeatureTransform,
    cfg: &TrainConfig,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("cannot train on zero samples".to_string()));
    }

    let val_len = (cfg.validation_fraction * samples.len() as f64).floor() as usize;
    let (core, val) = samples.split_at(samples.len() - val_len);
    if core.is_empty() {
        return Err(Error::Data(
            "validation fraction leaves no training samples".to_string(),
        ));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &[SEED_SHUFFLE]));
    let mut order: Vec<usize> = (0..core.len()).collect();
    let mut summary = TrainSummary {
        loss_curve: Vec::new(),
        val_curve: Vec::new(),
        best_epoch: 0,
        epochs_run: 0,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<Mat>> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }

        let mut epoch_loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            model.store.zero_grads();
            for (offset, &sample_idx) in batch.iter().enumerate() {
                let sample = &core[sample_idx];
                let dropout_seed = derive_seed(
                    cfg.seed,
                    &[SEED_DROPOUT, epoch as u64, batch_idx as u64, offset as u64],
                );
                let mut tape = Tape::train();
                let pred = model.forward(&mut tape, sample, dropout_seed);
                let target = tape.constant(sample.target_flat.clone());
                let loss = mse_loss(&mut tape, pred, target);
                let loss_value = tape.value(loss).get(0, 0);
                if !loss_value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: batch_idx });
                }
                epoch_loss_sum += loss_value;
                tape.backward(loss);
                tape.accumulate_grads(&mut model.store);
            }
            model.store.scale_grads(1.0 / batch.len() as f64);
            adam_step(&mut model.store, cfg.learning_rate);
        }
        summary.loss_curve.push(epoch_loss_sum / core.len() as f64);
        summary.epochs_run = epoch + 1;

        if val.is_empty() {
            summary.best_epoch = epoch;
            continue;
        }
        let val_mae = evaluate(model, val, taxi_transform).mae;
        summary.val_curve.push(val_mae);
        if val_mae < best_val {
            best_val = val_mae;
            best_params = Some(model.store.snapshot());
            summary.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                break;
            }
        }
    }

    if let Some(best) = best_params {
        model.store.restore(&best);
    }
    Ok(summary)
}

const SEED_SHUFFLE: u64 = 0x5348_5546; // "SHUF"
const SEED_DROPOUT: u64 = 0x4452_4f50; // "DROP"
const SEED_SPLIT: u64 = 0x5350_4c54; // "SPLT"

/// Raw-count-space error metrics plus the per-zone breakdown used for
/// region-level error analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    /// Mean absolute error per zone, averaged over samples and channels.
    pub per_zone_abs_err: Vec<f64>,
    pub sample_count: usize,
}

/// Metrics over aligned (prediction, target) pairs of 2×M matrices in raw
/// space. Predictions are clamped at zero before comparison.
pub fn evaluate_predictions(pairs: &[(Mat, &Mat)]) -> MetricsReport {
    assert!(!pairs.is_empty(), "cannot evaluate zero predictions");
    let m = pairs[0].1.cols();
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut per_zone = vec![0.0; m];
    let mut n_entries = 0usize;
    for (pred, target) in pairs {
        let clamped = pred.map(|x| x.max(0.0));
        for ch in 0..2 {
            for z in 0..m {
                let e = clamped.get(ch, z) - target.get(ch, z);
                abs_sum += e.abs();
                sq_sum += e * e;
                per_zone[z] += e.abs();
                n_entries += 1;
            }
        }
    }
    let per_sample_entries = (2 * pairs.len()) as f64;
    MetricsReport {
        mae: abs_sum / n_entries as f64,
        mse: sq_sum / n_entries as f64,
        per_zone_abs_err: per_zone.into_iter().map(|s| s / per_sample_entries).collect(),
        sample_count: pairs.len(),
    }
}

/// Eval-mode predictions for every sample, compared against raw targets.
/// Samples are processed in target-index order so the result is identical
/// however the input happens to be ordered.
pub fn evaluate(
    model: &Forecaster,
    samples: &[PreparedSample],
    taxi_transform: &FeatureTransform,
) -> MetricsReport {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| samples[i].target_index);
    let pairs: Vec<(Mat, &Mat)> = order
        .iter()
        .map(|&i| {
            let s = &samples[i];
            (model.predict(s, taxi_transform).features, &s.target_raw)
        })
        .collect();
    evaluate_predictions(&pairs)
}

/// Reference floor: predict the per-(channel, zone, slot-of-day) mean of
/// the training targets for every test sample. Any trained model should
/// beat this.
pub fn mean_predictor_baseline(
    train: &[PreparedSample],
    test: &[PreparedSample],
    p: usize,
) -> MetricsReport {
    assert!(!train.is_empty(), "mean predictor needs training samples");
    let m = train[0].target_raw.cols();
    let mut sums = vec![Mat::zeros(2, m); p];
    let mut counts = vec![0usize; p];
    for s in train {
        let slot = s.target_index.slot(p);
        sums[slot].add_assign(&s.target_raw);
        counts[slot] += 1;
    }
    let global_mean = {
        let mut total = Mat::zeros(2, m);
        for s in &sums {
            total.add_assign(s);
        }
        total.scale(1.0 / train.len() as f64)
    };
    let slot_means: Vec<Mat> = sums
        .into_iter()
        .zip(&counts)
        .map(|(sum, &n)| {
            if n == 0 {
                // No training sample landed on this slot; fall back to the
                // overall mean rather than predicting zeros.
                global_mean.clone()
            } else {
                sum.scale(1.0 / n as f64)
            }
        })
        .collect();

    let pairs: Vec<(Mat, &Mat)> = test
        .iter()
        .map(|s| (slot_means[s.target_index.slot(p)].clone(), &s.target_raw))
        .collect();
    evaluate_predictions(&pairs)
}
