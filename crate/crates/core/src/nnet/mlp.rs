//! Multilayer perceptron core: configuration, weights, initialization,
//! forward pass, output heads, feature standardization, and checkpoints.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::cn0::CN0Params;
use crate::data::{PairedCase, Station};
use crate::error::{Error, Result};

/// Input features per case: f̄, S², p0, latitude, longitude, altitude, lead.
pub const INPUT_DIM: usize = 7;

/// Ensemble size emitted by the members head.
pub const MEMBERS_OUT: usize = 8;

/// Irradiance targets are divided by this during training and predictions
/// are scaled back, keeping losses and gradients O(1) under lr = 0.01.
pub const TARGET_SCALE: f64 = 1000.0;

/// Floor added to the squared scale output of the distribution head
/// (model space, i.e. units of TARGET_SCALE W/m²).
pub const SIGMA_HEAD_FLOOR: f64 = 1e-6;

/// Output head: censored-normal parameters or a corrected 8-member ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Distribution,
    Members,
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::Distribution => 2,
            Head::Members => MEMBERS_OUT,
        }
    }
}

/// Network and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head: Head,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    /// Consecutive non-improving validation epochs tolerated before
    /// stopping; 0 stops at the first non-improvement.
    pub patience: usize,
    pub runs: usize,
}

impl MlpConfig {
    /// Distribution-head network at the reference size.
    pub fn drn() -> Self {
        Self {
            input_dim: INPUT_DIM,
            hidden: vec![255, 255],
            head: Head::Distribution,
            batch_size: 1200,
            learning_rate: 0.01,
            max_epochs: 500,
            validation_fraction: 0.2,
            patience: 10,
            runs: 10,
        }
    }

    /// Corrected-ensemble network at the reference size.
    pub fn corrected() -> Self {
        Self {
            head: Head::Members,
            ..Self::drn()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        Ok(())
    }

    /// Layer sizes from input to output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.head.output_dim());
        dims
    }
}

/// Trainable weight count: Σ over layers of in·out + out.
pub fn param_count(config: &MlpConfig) -> usize {
    config
        .layer_dims()
        .windows(2)
        .map(|d| d[0] * d[1] + d[1])
        .sum()
}

/// One affine layer, weights stored (in × out).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// All layers of the network, hidden activations ReLU, output affine.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub layers: Vec<Layer>,
}

impl MlpWeights {
    /// Symmetric uniform fan-in initialization, U(±sqrt(6/fan_in)), biases
    /// zero; the draw order is fixed so a seed fully determines the result.
    pub fn init(config: &MlpConfig, rng: &mut impl Rng) -> Self {
        let dims = config.layer_dims();
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = (6.0 / d[0] as f64).sqrt();
                Layer {
                    w: Array2::from_shape_fn((d[0], d[1]), |_| rng.gen_range(-bound..bound)),
                    b: Array1::zeros(d[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(config: &MlpConfig) -> Self {
        let dims = config.layer_dims();
        let layers = dims
            .windows(2)
            .map(|d| Layer {
                w: Array2::zeros((d[0], d[1])),
                b: Array1::zeros(d[1]),
            })
            .collect();
        Self { layers }
    }
}

/// Forward pass for a batch (rows = cases), keeping every layer's
/// post-activation output so the backward pass can reuse them. Entry 0 is
/// the input; the last entry is the raw (affine, unbounded) output.
pub fn forward_trace(weights: &MlpWeights, input: &Array2<f64>) -> Vec<Array2<f64>> {
    let n_layers = weights.layers.len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(input.clone());
    for (i, layer) in weights.layers.iter().enumerate() {
        let mut z = acts[i].dot(&layer.w) + &layer.b;
        if i + 1 < n_layers {
            z.mapv_inplace(|v| v.max(0.0));
        }
        acts.push(z);
    }
    acts
}

/// Raw network outputs for a batch.
pub fn forward(weights: &MlpWeights, input: &Array2<f64>) -> Array2<f64> {
    forward_trace(weights, input).pop().expect("at least the input")
}

/// Distribution head (model space): μ = raw[0], σ = raw[1]² + 1e−6.
pub fn drn_head(raw: &[f64]) -> CN0Params {
    CN0Params {
        mu: raw[0],
        sigma: raw[1] * raw[1] + SIGMA_HEAD_FLOOR,
    }
}

/// Members head (model space): each raw output clamped at zero.
pub fn members_head(raw: &[f64]) -> [f64; MEMBERS_OUT] {
    let mut m = [0.0; MEMBERS_OUT];
    for (out, &r) in m.iter_mut().zip(raw) {
        *out = r.max(0.0);
    }
    m
}

/// A prediction in physical units (W/m²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Distribution(CN0Params),
    Members([f64; MEMBERS_OUT]),
}

/// Per-feature z-scoring statistics, stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and sample standard deviation per feature column.
    pub fn fit(rows: &[[f64; INPUT_DIM]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("cannot standardize zero feature rows".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; INPUT_DIM];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut sd = vec![0.0; INPUT_DIM];
        if rows.len() > 1 {
            for r in rows {
                for (s, (v, m)) in sd.iter_mut().zip(r.iter().zip(&mean)) {
                    *s += (v - m) * (v - m);
                }
            }
            for s in &mut sd {
                *s = (*s / (n - 1.0)).sqrt();
            }
        }
        Ok(Self { mean, sd })
    }

    /// z-scores one row; constant features map to 0.
    pub fn apply(&self, row: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        let mut out = [0.0; INPUT_DIM];
        for i in 0..INPUT_DIM {
            out[i] = if self.sd[i] > 1e-12 {
                (row[i] - self.mean[i]) / self.sd[i]
            } else {
                0.0
            };
        }
        out
    }

    /// z-scores many rows into a batch matrix.
    pub fn apply_batch(&self, rows: &[[f64; INPUT_DIM]]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), INPUT_DIM));
        for (i, r) in rows.iter().enumerate() {
            let z = self.apply(r);
            for (j, v) in z.iter().enumerate() {
                out[[i, j]] = *v;
            }
        }
        out
    }
}

/// The raw feature row for one forecast case at one station.
pub fn feature_row(case: &PairedCase, station: &Station) -> [f64; INPUT_DIM] {
    [
        case.stats.mean,
        case.stats.variance,
        case.stats.p0,
        station.latitude,
        station.longitude,
        station.altitude,
        f64::from(case.lead_h),
    ]
}

/// A trained network: config, feature scaling, and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: MlpConfig,
    pub standardizer: Standardizer,
    pub weights: MlpWeights,
}

impl TrainedModel {
    /// Raw model-space outputs for one raw (unstandardized) feature row.
    pub fn raw_outputs(&self, row: &[f64; INPUT_DIM]) -> Result<Vec<f64>> {
        let input = self.standardizer.apply_batch(std::slice::from_ref(row));
        let out = forward(&self.weights, &input);
        let raw: Vec<f64> = out.index_axis(Axis(0), 0).to_vec();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite network output {raw:?}")));
        }
        Ok(raw)
    }

    /// Prediction in W/m².
    pub fn predict(&self, row: &[f64; INPUT_DIM]) -> Result<Prediction> {
        let raw = self.raw_outputs(row)?;
        Ok(match self.config.head {
            Head::Distribution => {
                let p = drn_head(&raw);
                Prediction::Distribution(CN0Params {
                    mu: p.mu * TARGET_SCALE,
                    sigma: p.sigma * TARGET_SCALE,
                })
            }
            Head::Members => {
                let mut m = members_head(&raw);
                for v in &mut m {
                    *v *= TARGET_SCALE;
                }
                Prediction::Members(m)
            }
        })
    }
}

/// Checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerCheckpoint {
    in_dim: usize,
    out_dim: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: MlpConfig,
    standardizer: Standardizer,
    layers: Vec<LayerCheckpoint>,
}

/// Serializes a trained model to JSON. Floats are written in shortest
/// round-trip form, so a reload reproduces predictions bit for bit.
pub fn save_checkpoint(path: &Path, model: &TrainedModel) -> Result<()> {
    let layers = model
        .weights
        .layers
        .iter()
        .map(|l| LayerCheckpoint {
            in_dim: l.w.nrows(),
            out_dim: l.w.ncols(),
            w: l.w.iter().copied().collect(),
            b: l.b.to_vec(),
        })
        .collect();
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        standardizer: model.standardizer.clone(),
        layers,
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &ck).map_err(Error::from)?;
    Ok(())
}

/// Loads a model checkpoint saved by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let file = std::fs::File::open(path)?;
    let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file)).map_err(Error::from)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    ck.config.validate()?;
    let mut layers = Vec::with_capacity(ck.layers.len());
    for l in ck.layers {
        if l.w.len() != l.in_dim * l.out_dim || l.b.len() != l.out_dim {
            return Err(Error::Data("checkpoint layer shape mismatch".into()));
        }
        layers.push(Layer {
            w: Array2::from_shape_vec((l.in_dim, l.out_dim), l.w)
                .map_err(|e| Error::Data(format!("checkpoint layer: {e}")))?,
            b: Array1::from_vec(l.b),
        });
    }
    Ok(TrainedModel {
        config: ck.config,
        standardizer: ck.standardizer,
        weights: MlpWeights { layers },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn parameter_counts_match_reference_configuration() {
        assert_eq!(param_count(&MlpConfig::drn()), 67_832);
        assert_eq!(param_count(&MlpConfig::corrected()), 69_368);
        let tiny = MlpConfig {
            input_dim: 1,
            hidden: vec![1],
            head: Head::Distribution,
            ..MlpConfig::drn()
        };
        // 1·1+1 for the hidden layer, 1·2+2 for the output layer
        assert_eq!(param_count(&tiny), 6);
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let config = MlpConfig {
            input_dim: 3,
            hidden: vec![4, 4],
            head: Head::Distribution,
            ..MlpConfig::drn()
        };
        let w = MlpWeights::zeros(&config);
        let out = forward(&w, &array![[1.0, -2.0, 3.0]]);
        assert_eq!(out, array![[0.0, 0.0]]);
    }

    #[test]
    fn two_neuron_hand_example() {
        // input x (1 dim) → hidden 2 (ReLU) → output 1
        // hidden: h1 = relu(2x + 1), h2 = relu(-3x)
        // output: y = 0.5·h1 − 1.0·h2 + 0.25
        let weights = MlpWeights {
            layers: vec![
                Layer {
                    w: array![[2.0, -3.0]],
                    b: array![1.0, 0.0],
                },
                Layer {
                    w: array![[0.5], [-1.0]],
                    b: array![0.25],
                },
            ],
        };
        // x = 1: h = (3, 0) → y = 1.75
        let out = forward(&weights, &array![[1.0]]);
        assert_abs_diff_eq!(out[[0, 0]], 1.75, epsilon = 1e-15);
        // x = -1: h = relu(-1, 3) = (0, 3) → y = 0.25 − 3 = -2.75;
        // the negative pre-activation of h1 contributes nothing downstream
        let out = forward(&weights, &array![[-1.0]]);
        assert_abs_diff_eq!(out[[0, 0]], -2.75, epsilon = 1e-15);
    }

    #[test]
    fn heads_map_raw_outputs() {
        let p = drn_head(&[0.3, -2.0]);
        assert_eq!(p.mu, 0.3);
        assert_abs_diff_eq!(p.sigma, 4.0 + 1e-6, epsilon = 1e-18);
        let p = drn_head(&[7.0, 0.0]);
        assert_eq!(p.sigma, 1e-6);

        let m = members_head(&[-3.0, 0.5, 1.0, -0.1, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m[0], 0.0);
        assert_eq!(m[3], 0.0);
        assert_eq!(m[1], 0.5);
        // idempotent
        let again = members_head(&m);
        assert_eq!(m, again);
        let positive = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        assert_eq!(members_head(&positive), positive);
    }

    #[test]
    fn standardizer_zscores_and_handles_constants() {
        let rows: Vec<[f64; INPUT_DIM]> = (0..40)
            .map(|i| {
                let x = i as f64;
                [x, 2.0 * x, 7.5, -x, x * x, 100.0, 12.0]
            })
            .collect();
        let s = Standardizer::fit(&rows).unwrap();
        let z = s.apply_batch(&rows);
        for j in 0..INPUT_DIM {
            let col = z.index_axis(Axis(1), j);
            let mean = col.mean().unwrap();
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (rows.len() - 1) as f64;
            assert!(mean.abs() < 1e-10, "feature {j}: mean {mean}");
            if j == 2 || j == 5 || j == 6 {
                assert_eq!(var, 0.0, "constant feature {j} should map to 0");
            } else {
                assert!((var - 1.0).abs() < 1e-10, "feature {j}: variance {var}");
            }
        }
        assert!(Standardizer::fit(&[]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut rng = crate::rng::substream(37, "mlp/checkpoint");
        let config = MlpConfig {
            input_dim: INPUT_DIM,
            hidden: vec![13, 11],
            head: Head::Members,
            ..MlpConfig::corrected()
        };
        let rows: Vec<[f64; INPUT_DIM]> = (0..30)
            .map(|_| std::array::from_fn(|_| rand::Rng::gen_range(&mut rng, -5.0..900.0)))
            .collect();
        let model = TrainedModel {
            config: config.clone(),
            standardizer: Standardizer::fit(&rows).unwrap(),
            weights: MlpWeights::init(&config, &mut rng),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        for r in &rows {
            let a = model.predict(r).unwrap();
            let b = loaded.predict(r).unwrap();
            assert_eq!(a, b, "prediction changed across checkpoint round-trip");
        }
    }

    #[test]
    fn predictions_are_rescaled_to_physical_units() {
        let config = MlpConfig {
            input_dim: INPUT_DIM,
            hidden: vec![2],
            head: Head::Distribution,
            ..MlpConfig::drn()
        };
        // zero weights with output biases set: raw = (0.45, 0.2) always
        let mut weights = MlpWeights::zeros(&config);
        weights.layers[1].b = array![0.45, 0.2];
        let model = TrainedModel {
            config,
            standardizer: Standardizer {
                mean: vec![0.0; INPUT_DIM],
                sd: vec![1.0; INPUT_DIM],
            },
            weights,
        };
        let row = [0.0; INPUT_DIM];
        match model.predict(&row).unwrap() {
            Prediction::Distribution(p) => {
                assert_abs_diff_eq!(p.mu, 450.0, epsilon = 1e-9);
                assert_abs_diff_eq!(p.sigma, (0.04 + 1e-6) * 1000.0, epsilon = 1e-9);
            }
            Prediction::Members(_) => panic!("wrong head"),
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = MlpConfig::drn();
        c.validation_fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = MlpConfig::drn();
        c.runs = 0;
        assert!(c.validate().is_err());
        let mut c = MlpConfig::drn();
        c.hidden = vec![0];
        assert!(c.validate().is_err());
        assert!(MlpConfig::drn().validate().is_ok());
    }
}
