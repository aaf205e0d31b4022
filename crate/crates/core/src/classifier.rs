//! Heuristic matching features over the two sentence vectors and the
//! MLP + softmax entailment classifier.

use crate::error::{Error, Result};
use crate::params::{glorot_uniform, Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Mode, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 3;

/// Fixed label order, pinned in checkpoint metadata.
pub const LABEL_ORDER: [&str; NUM_CLASSES] = ["entailment", "neutral", "contradiction"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub num_hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl Default for MlpConfig {
    /// Table-best settings: two relu layers of 1600 units, dropout 0.1.
    fn default() -> Self {
        MlpConfig {
            num_hidden_layers: 2,
            hidden_units: 1600,
            activation: Activation::Relu,
            dropout_rate: 0.1,
            num_classes: NUM_CLASSES,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.num_hidden_layers) {
            return Err(Error::Config(format!(
                "num_hidden_layers must be 1 or 2, got {}",
                self.num_hidden_layers
            )));
        }
        if self.hidden_units == 0 {
            return Err(Error::Config("hidden_units must be >= 1".into()));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::Config(format!(
                "classifier is fixed at {NUM_CLASSES} classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} must be in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Affine weights and biases given the matching-vector width.
    pub fn param_count(&self, input_dim: usize) -> u64 {
        let u = self.hidden_units as u64;
        let mut total = (input_dim as u64) * u + u;
        if self.num_hidden_layers == 2 {
            total += u * u + u;
        }
        total += u * self.num_classes as u64 + self.num_classes as u64;
        total
    }
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    /// (weight, bias) per affine layer; the last maps to logits.
    pub layers: Vec<(ParamId, ParamId)>,
}

impl MlpParams {
    pub fn init<T: Scalar, R: Rng>(
        cfg: &MlpConfig,
        input_dim: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input_dim];
        for _ in 0..cfg.num_hidden_layers {
            dims.push(cfg.hidden_units);
        }
        dims.push(cfg.num_classes);
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            let (din, dout) = (pair[0], pair[1]);
            let w = store.add(
                &format!("classifier.layer{i}.w"),
                vec![dout, din],
                glorot_uniform(dout, din, rng),
                true,
            );
            let b = store.add(
                &format!("classifier.layer{i}.b"),
                vec![dout],
                vec![T::zero(); dout],
                true,
            );
            layers.push((w, b));
        }
        MlpParams { layers }
    }
}

/// Matching vector m = [v_p, v_h, |v_p - v_h|, v_p . v_h].
pub fn matching_features<T: Scalar>(graph: &mut Graph<T>, v_p: Var, v_h: Var) -> Result<Var> {
    if graph.shape(v_p) != graph.shape(v_h) {
        return Err(Error::Dimension {
            op: "matching_features",
            detail: format!(
                "premise vector shape {:?} vs hypothesis vector shape {:?}",
                graph.shape(v_p),
                graph.shape(v_h)
            ),
        });
    }
    let diff = graph.sub(v_p, v_h)?;
    let dist = graph.abs_act(diff);
    let prod = graph.hadamard(v_p, v_h)?;
    graph.concat(&[v_p, v_h, dist, prod], 0)
}

/// MLP over the matching vector: each hidden layer is affine, activation,
/// dropout; the final affine emits 3 raw logits.
pub fn mlp_forward<T: Scalar, R: Rng>(
    graph: &mut Graph<T>,
    binding: &Binding,
    cfg: &MlpConfig,
    params: &MlpParams,
    m: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let mut x = m;
    let n_hidden = params.layers.len() - 1;
    for (i, &(w, b)) in params.layers.iter().enumerate() {
        let a = graph.matvec(binding.var(w), x)?;
        x = graph.add(a, binding.var(b))?;
        if i < n_hidden {
            x = match cfg.activation {
                Activation::Relu => graph.relu(x),
                Activation::Tanh => graph.tanh_act(x),
            };
            x = graph.dropout(x, cfg.dropout_rate, mode, rng)?;
        }
    }
    Ok(x)
}

/// Argmax class, ties broken by the lowest index.
pub fn predict<T: Scalar>(logits: &[T]) -> Result<usize> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN logit in predict".into()));
    }
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matching_features_hand() {
        let mut g: Graph<f64> = Graph::new();
        let vp = g.leaf(vec![1.0, 2.0], vec![2], false).unwrap();
        let vh = g.leaf(vec![3.0, 1.0], vec![2], false).unwrap();
        let m = matching_features(&mut g, vp, vh).unwrap();
        assert_eq!(g.value(m), &[1.0, 2.0, 3.0, 1.0, 2.0, 1.0, 3.0, 2.0]);
    }

    #[test]
    fn matching_features_identical_inputs() {
        let mut g: Graph<f64> = Graph::new();
        let v = g.leaf(vec![2.0, -3.0], vec![2], false).unwrap();
        let m = matching_features(&mut g, v, v).unwrap();
        assert_eq!(g.value(m), &[2.0, -3.0, 2.0, -3.0, 0.0, 0.0, 4.0, 9.0]);
    }

    #[test]
    fn matching_features_swap_symmetry() {
        let mut g: Graph<f64> = Graph::new();
        let vp = g.leaf(vec![1.0, -2.0], vec![2], false).unwrap();
        let vh = g.leaf(vec![0.5, 4.0], vec![2], false).unwrap();
        let f1 = matching_features(&mut g, vp, vh).unwrap();
        let f2 = matching_features(&mut g, vh, vp).unwrap();
        let m1 = g.value(f1).to_vec();
        let m2 = g.value(f2).to_vec();
        assert_eq!(&m1[0..2], &m2[2..4]);
        assert_eq!(&m1[2..4], &m2[0..2]);
        assert_eq!(&m1[4..8], &m2[4..8]);
    }

    #[test]
    fn matching_length_mismatch_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let vp = g.zeros(vec![2]);
        let vh = g.zeros(vec![3]);
        assert!(matching_features(&mut g, vp, vh).is_err());
    }

    fn tiny_mlp(cfg: &MlpConfig, input_dim: usize) -> (ParamStore<f64>, MlpParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = MlpParams::init(cfg, input_dim, &mut store, &mut rng);
        (store, params)
    }

    #[test]
    fn zero_mlp_gives_zero_logits() {
        let cfg = MlpConfig {
            num_hidden_layers: 1,
            hidden_units: 4,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            num_classes: 3,
        };
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = MlpParams::init(&cfg, 2, &mut store, &mut rng);
        for (id, _) in store.clone().iter() {
            for v in store.get_mut(id).data.iter_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new();
        let binding = store.bind(&mut g).unwrap();
        let m = g.leaf(vec![0.7, -0.3], vec![2], false).unwrap();
        let logits = mlp_forward(&mut g, &binding, &cfg, &params, m, Mode::Train, &mut rng).unwrap();
        assert_eq!(g.value(logits), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let cfg = MlpConfig {
            num_hidden_layers: 2,
            hidden_units: 5,
            activation: Activation::Tanh,
            dropout_rate: 0.5,
            num_classes: 3,
        };
        let (store, params) = tiny_mlp(&cfg, 4);
        let run = |seed: u64| {
            let mut g = Graph::new();
            let binding = store.bind(&mut g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = g.leaf(vec![0.1, 0.2, -0.4, 0.9], vec![4], false).unwrap();
            let l = mlp_forward(&mut g, &binding, &cfg, &params, m, Mode::Eval, &mut rng).unwrap();
            g.value(l).to_vec()
        };
        assert_eq!(run(1), run(999));
    }

    #[test]
    fn predict_basic_and_ties() {
        assert_eq!(predict(&[0.1, 2.0, -1.0]).unwrap(), 1);
        assert_eq!(predict(&[1.0, 1.0, 1.0]).unwrap(), 0);
    }

    #[test]
    fn predict_shift_and_scale_invariant() {
        let logits = [0.3, -1.2, 0.9];
        let base = predict(&logits).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|v| v + 42.0).collect();
        let scaled: Vec<f64> = logits.iter().map(|v| v * 3.5).collect();
        assert_eq!(predict(&shifted).unwrap(), base);
        assert_eq!(predict(&scaled).unwrap(), base);
    }

    #[test]
    fn predict_nan_rejected() {
        assert!(predict(&[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn default_config_is_two_relu() {
        let cfg = MlpConfig::default();
        assert_eq!(cfg.num_hidden_layers, 2);
        assert_eq!(cfg.activation, Activation::Relu);
        assert_eq!(cfg.hidden_units, 1600);
        assert_eq!(cfg.dropout_rate, 0.1);
    }
}
