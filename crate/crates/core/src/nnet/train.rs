//! Minibatch training with Adam, early stopping on a validation split,
//! multi-run aggregation, and permutation feature importance.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::backward;
use super::mlp::{
    drn_head, feature_row, members_head, MlpConfig, MlpWeights, Prediction, Standardizer,
    TrainedModel, INPUT_DIM, MEMBERS_OUT, TARGET_SCALE,
};
use crate::data::{PairedCase, Station};
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First/second-moment accumulators, one pair per weight tensor.
struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: u64,
}

impl AdamState {
    fn new(weights: &MlpWeights) -> Self {
        AdamState {
            m_w: weights.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            v_w: weights.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            m_b: weights.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
            v_b: weights.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
            step: 0,
        }
    }

    /// One Adam update with bias-corrected moments.
    fn apply(&mut self, weights: &mut MlpWeights, grads: &MlpWeights, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let corr1 = 1.0 - ADAM_BETA1.powi(t);
        let corr2 = 1.0 - ADAM_BETA2.powi(t);
        for (l, grad) in grads.layers.iter().enumerate() {
            ndarray::Zip::from(&mut self.m_w[l])
                .and(&grad.w)
                .for_each(|m, &g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
            ndarray::Zip::from(&mut self.v_w[l])
                .and(&grad.w)
                .for_each(|v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
            ndarray::Zip::from(&mut weights.layers[l].w)
                .and(&self.m_w[l])
                .and(&self.v_w[l])
                .for_each(|w, &m, &v| {
                    *w -= lr * (m / corr1) / ((v / corr2).sqrt() + ADAM_EPS);
                });
            ndarray::Zip::from(&mut self.m_b[l])
                .and(&grad.b)
                .for_each(|m, &g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
            ndarray::Zip::from(&mut self.v_b[l])
                .and(&grad.b)
                .for_each(|v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
            ndarray::Zip::from(&mut weights.layers[l].b)
                .and(&self.m_b[l])
                .and(&self.v_b[l])
                .for_each(|w, &m, &v| {
                    *w -= lr * (m / corr1) / ((v / corr2).sqrt() + ADAM_EPS);
                });
        }
    }
}

/// A fitted model plus diagnostics from one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    /// Epoch (1-based) whose validation loss the returned weights achieve.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_history: Vec<f64>,
    pub validation_history: Vec<f64>,
}

/// Mean head loss (model space) over a standardized batch.
fn mean_loss(weights: &MlpWeights, input: &Array2<f64>, targets: &[f64]) -> Result<f64> {
    let raw = super::mlp::forward(weights, input);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite network output".into()));
    }
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let row: Vec<f64> = raw.index_axis(Axis(0), i).to_vec();
        match raw.ncols() {
            2 => total += super::backward::loss_drn(&drn_head(&row), y),
            MEMBERS_OUT => {
                let arr: [f64; MEMBERS_OUT] = row.as_slice().try_into().expect("dim checked");
                total += super::backward::loss_members(&arr, y);
            }
            d => {
                return Err(Error::Config(format!(
                    "no head defined for output dimension {d}"
                )))
            }
        }
    }
    Ok(total / targets.len() as f64)
}

fn take_rows(input: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), input.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&input.row(i));
    }
    out
}

/// Train one network on feature rows (physical units) and observations
/// (W/m²). Features are standardized and targets scaled internally; the
/// returned model predicts in physical units.
pub fn train(
    config: &MlpConfig,
    rows: &[[f64; INPUT_DIM]],
    observations: &[f64],
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    if rows.len() != observations.len() {
        return Err(Error::Data(format!(
            "{} feature rows but {} observations",
            rows.len(),
            observations.len()
        )));
    }
    if rows.len() < 2 {
        return Err(Error::Data(format!(
            "network training needs at least 2 cases, got {}",
            rows.len()
        )));
    }
    if observations.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Data(
            "observations for training must be finite and non-negative".into(),
        ));
    }

    let standardizer = Standardizer::fit(rows)?;
    let input = standardizer.apply_batch(rows);
    let targets: Vec<f64> = observations.iter().map(|y| y / TARGET_SCALE).collect();

    // random validation split, both sides clamped to at least one case
    let n = rows.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_val = ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_input = take_rows(&input, train_idx);
    let train_targets: Vec<f64> = train_idx.iter().map(|&i| targets[i]).collect();
    let val_input = take_rows(&input, val_idx);
    let val_targets: Vec<f64> = val_idx.iter().map(|&i| targets[i]).collect();

    let mut weights = MlpWeights::init(config, rng);
    let mut adam = AdamState::new(&weights);
    let mut best_weights = weights.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut train_history = Vec::new();
    let mut validation_history = Vec::new();
    let mut batch_order: Vec<usize> = (0..train_idx.len()).collect();

    let mut epochs_run = 0usize;
    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        batch_order.shuffle(rng);
        for chunk in batch_order.chunks(config.batch_size) {
            let batch_input = take_rows(&train_input, chunk);
            let batch_targets: Vec<f64> = chunk.iter().map(|&i| train_targets[i]).collect();
            let (loss, grads) = backward(&weights, &batch_input, &batch_targets)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {epoch}: non-finite batch loss"
                )));
            }
            adam.apply(&mut weights, &grads, config.learning_rate);
        }
        let train_loss = mean_loss(&weights, &train_input, &train_targets)
            .map_err(|_| Error::Numerical(format!("training diverged at epoch {epoch}")))?;
        let val_loss = mean_loss(&weights, &val_input, &val_targets)
            .map_err(|_| Error::Numerical(format!("training diverged at epoch {epoch}")))?;
        train_history.push(train_loss);
        validation_history.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_weights = weights.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: TrainedModel {
            config: config.clone(),
            standardizer,
            weights: best_weights,
        },
        best_epoch,
        epochs_run,
        train_history,
        validation_history,
    })
}

/// Train `config.runs` networks from independent seeds drawn from `rng`.
pub fn train_runs(
    config: &MlpConfig,
    rows: &[[f64; INPUT_DIM]],
    observations: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<TrainOutcome>> {
    (0..config.runs)
        .map(|_| {
            let mut run_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            train(config, rows, observations, &mut run_rng)
        })
        .collect()
}

/// Combine per-run predictions for one case into a single forecast:
/// distributions average μ and σ; member sets are sorted per run and then
/// averaged coordinate-wise, so the result is itself sorted.
pub fn aggregate_runs(predictions: &[Prediction]) -> Result<Prediction> {
    if predictions.is_empty() {
        return Err(Error::Data("no run predictions to aggregate".into()));
    }
    match &predictions[0] {
        Prediction::Distribution(_) => {
            let mut mu = 0.0;
            let mut sigma = 0.0;
            for p in predictions {
                match p {
                    Prediction::Distribution(d) => {
                        mu += d.mu;
                        sigma += d.sigma;
                    }
                    Prediction::Members(_) => {
                        return Err(Error::Data("mixed prediction kinds in aggregation".into()))
                    }
                }
            }
            let n = predictions.len() as f64;
            Ok(Prediction::Distribution(crate::cn0::CN0Params {
                mu: mu / n,
                sigma: sigma / n,
            }))
        }
        Prediction::Members(_) => {
            let mut sums = [0.0; MEMBERS_OUT];
            for p in predictions {
                match p {
                    Prediction::Members(m) => {
                        let mut sorted = *m;
                        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite members"));
                        for (s, v) in sums.iter_mut().zip(sorted.iter()) {
                            *s += v;
                        }
                    }
                    Prediction::Distribution(_) => {
                        return Err(Error::Data("mixed prediction kinds in aggregation".into()))
                    }
                }
            }
            let n = predictions.len() as f64;
            for s in sums.iter_mut() {
                *s /= n;
            }
            Ok(Prediction::Members(sums))
        }
    }
}

/// Convenience: feature rows and observation targets for a set of cases.
pub fn training_arrays(
    cases: &[PairedCase],
    station_of: impl Fn(u32) -> Result<Station>,
) -> Result<(Vec<[f64; INPUT_DIM]>, Vec<f64>)> {
    let mut rows = Vec::with_capacity(cases.len());
    let mut obs = Vec::with_capacity(cases.len());
    for case in cases {
        let station = station_of(case.station_id)?;
        rows.push(feature_row(case, &station));
        obs.push(case.obs);
    }
    Ok((rows, obs))
}

/// Mean physical-unit loss of a trained model over a case set: CN0 CRPS for
/// the distribution head, ensemble CRPS for the members head.
pub fn evaluation_loss(
    model: &TrainedModel,
    rows: &[[f64; INPUT_DIM]],
    observations: &[f64],
) -> Result<f64> {
    if rows.is_empty() || rows.len() != observations.len() {
        return Err(Error::Data(
            "evaluation needs matching non-empty rows and observations".into(),
        ));
    }
    let mut total = 0.0;
    for (row, &y) in rows.iter().zip(observations) {
        match model.predict(row)? {
            Prediction::Distribution(params) => total += crate::cn0::crps(&params, y),
            Prediction::Members(m) => {
                let clamped = members_head(&m);
                total += crate::scoring::crps_ensemble(&clamped, y)?;
            }
        }
    }
    Ok(total / rows.len() as f64)
}

/// Permutation importance of one input feature: the increase in mean
/// physical-unit loss after shuffling that feature's column across cases.
pub fn permutation_importance(
    model: &TrainedModel,
    rows: &[[f64; INPUT_DIM]],
    observations: &[f64],
    feature: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if feature >= INPUT_DIM {
        return Err(Error::Config(format!(
            "feature index {feature} out of range (input has {INPUT_DIM} features)"
        )));
    }
    let baseline = evaluation_loss(model, rows, observations)?;
    let mut column: Vec<f64> = rows.iter().map(|r| r[feature]).collect();
    column.shuffle(rng);
    let mut shuffled = rows.to_vec();
    for (row, v) in shuffled.iter_mut().zip(column) {
        row[feature] = v;
    }
    let permuted = evaluation_loss(model, &shuffled, observations)?;
    Ok(permuted - baseline)
}
