//! Training recipe: Adam with bias-corrected moments, learning rate
//! halved every two epochs, the primary+15%-aux epoch mixture, dev-set
//! model selection, and a per-epoch metrics log.

use crate::data::{make_batches, NliExample};
use crate::error::{Error, Result};
use crate::model::NliModel;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Mode;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_BASE_LR: f64 = 0.0002;
pub const DEFAULT_MIX_RATE: f64 = 0.15;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub snli_mix_rate: f64,
    pub fine_tune: bool,
    /// When set, wall_time_s is logged as 0.0 so metrics logs are
    /// byte-identical across runs.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            base_lr: DEFAULT_BASE_LR,
            max_epochs: 10,
            seed: 0,
            snli_mix_rate: DEFAULT_MIX_RATE,
            fine_tune: true,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.snli_mix_rate) {
            return Err(Error::Config(format!(
                "snli_mix_rate {} must be in [0, 1]",
                self.snli_mix_rate
            )));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        Ok(())
    }
}

/// lr(epoch) = base * 0.5^floor(epoch/2), epoch 0-based, so epochs {0,1}
/// run at the base rate.
pub fn lr_schedule(base_lr: f64, epoch: usize) -> f64 {
    base_lr * 0.5_f64.powi((epoch / 2) as i32)
}

/// Adam moment buffers, aligned with parameter-store order. Non-trainable
/// entries keep empty buffers.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for (_, p) in store.iter() {
            let n = if p.trainable { p.data.len() } else { 0 };
            m.push(vec![T::zero(); n]);
            v.push(vec![T::zero(); n]);
        }
        AdamState { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m, v }
    }
}

/// One bias-corrected Adam update over every trainable parameter.
/// `frozen_rows` are (parameter, row) pairs whose gradient is forced to
/// zero before the update — used to pin the PAD embedding row.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    store: &mut ParamStore<T>,
    grads: &mut [Vec<T>],
    lr: f64,
    frozen_rows: &[(ParamId, usize)],
) -> Result<()> {
    for &(pid, row) in frozen_rows {
        let cols = store.get(pid).shape[1];
        for g in grads[pid.0][row * cols..(row + 1) * cols].iter_mut() {
            *g = T::zero();
        }
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let one_m_b1 = T::from_f64(1.0 - state.beta1);
    let one_m_b2 = T::from_f64(1.0 - state.beta2);
    let bc1 = T::from_f64(bc1);
    let bc2 = T::from_f64(bc2);
    let lr_t = T::from_f64(lr);
    let eps = T::from_f64(state.epsilon);
    #[allow(clippy::needless_range_loop)] // idx indexes three parallel buffers
    for idx in 0..store.len() {
        let pid = ParamId(idx);
        if !store.get(pid).trainable {
            continue;
        }
        let name = store.get(pid).name.clone();
        if grads[idx].iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in parameter {name}")));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let data = &mut store.get_mut(pid).data;
        for i in 0..data.len() {
            let g = grads[idx][i];
            m[i] = b1 * m[i] + one_m_b1 * g;
            v[i] = b2 * v[i] + one_m_b2 * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Epoch mixture: all of `primary` plus floor(rate * |aux|) examples drawn
/// without replacement from `aux` with an epoch-specific seed, shuffled.
pub fn sample_epoch(
    primary: &[NliExample],
    aux: &[NliExample],
    rate: f64,
    epoch_seed: u64,
) -> Vec<NliExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let k = (rate * aux.len() as f64).floor() as usize;
    let mut out: Vec<NliExample> = primary.to_vec();
    if k > 0 {
        let picks = rand::seq::index::sample(&mut rng, aux.len(), k);
        out.extend(picks.iter().map(|i| aux[i].clone()));
    }
    out.shuffle(&mut rng);
    out
}

/// Accuracy with dropout disabled, as an exact fraction correct/total.
/// Batching is in dataset order; the result is order-invariant because
/// every example is scored independently.
pub fn evaluate<T: Scalar>(model: &NliModel<T>, examples: &[NliExample], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in eval mode
    let mut correct = 0usize;
    for batch in &crate::data::make_batches_ordered(examples, &model.vocab, batch_size) {
        let out = model.forward_batch(batch, Mode::Eval, &mut rng)?;
        correct += out
            .predictions
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Per-genre accuracy breakdown for genre-tagged datasets.
pub fn evaluate_by_genre<T: Scalar>(
    model: &NliModel<T>,
    examples: &[NliExample],
    batch_size: usize,
) -> Result<BTreeMap<String, f64>> {
    let mut by_genre: BTreeMap<String, Vec<NliExample>> = BTreeMap::new();
    for ex in examples {
        if let Some(g) = &ex.genre {
            by_genre.entry(g.clone()).or_default().push(ex.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (genre, exs) in by_genre {
        out.insert(genre.clone(), evaluate(model, &exs, batch_size)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_acc: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

pub struct TrainDatasets {
    pub primary: Vec<NliExample>,
    pub aux: Vec<NliExample>,
    /// Named dev splits; the selection score is their mean accuracy.
    pub dev: Vec<(String, Vec<NliExample>)>,
}

pub struct TrainOutcome<T: Scalar> {
    pub best_model: NliModel<T>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub final_adam: AdamState<T>,
    pub records: Vec<EpochRecord>,
}

/// Metrics log: one JSON object per epoch, line-delimited.
pub fn metrics_to_jsonl(records: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        out.push('\n');
    }
    out
}

/// Full training run. Mutates `model` in place epoch by epoch and returns
/// the checkpointed best model by mean dev accuracy.
pub fn train<T: Scalar>(
    model: &mut NliModel<T>,
    config: &TrainConfig,
    data: &TrainDatasets,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if data.dev.is_empty() {
        return Err(Error::Config("training needs at least one dev split".into()));
    }
    let mut adam = AdamState::new(&model.store);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d120);
    let frozen_rows = [(model.embedding.param, crate::embedding::PAD_ID)];

    let mut best: Option<(f64, usize, ParamStore<T>)> = None;
    let mut records = Vec::with_capacity(config.max_epochs);

    for epoch in 0..config.max_epochs {
        let t0 = Instant::now();
        let lr = lr_schedule(config.base_lr, epoch);
        let epoch_seed = config.seed.wrapping_add(epoch as u64);
        let mixture = sample_epoch(&data.primary, &data.aux, config.snli_mix_rate, epoch_seed);
        let batches = make_batches(&mixture, &model.vocab, config.batch_size, epoch_seed ^ 0xba7c);

        let mut loss_sum = 0.0;
        for batch in &batches {
            let mut out = model.forward_batch(batch, Mode::Train, &mut dropout_rng)?;
            out.graph.backward(out.loss)?;
            let mut grads = model.store.grads(&out.graph, &out.binding)?;
            adam_step(&mut adam, &mut model.store, &mut grads, lr, &frozen_rows)?;
            loss_sum += out.mean_loss;
        }
        let train_loss = loss_sum / batches.len().max(1) as f64;

        let mut dev_acc = BTreeMap::new();
        let mut score_sum = 0.0;
        for (name, examples) in &data.dev {
            let acc = evaluate(model, examples, config.batch_size)?;
            score_sum += acc;
            dev_acc.insert(name.clone(), acc);
        }
        let score = score_sum / data.dev.len() as f64;

        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.store.clone()));
        }

        let wall_time_s = if config.deterministic {
            0.0
        } else {
            t0.elapsed().as_secs_f64()
        };
        records.push(EpochRecord { epoch, lr, train_loss, dev_acc, wall_time_s });
    }

    let (best_score, best_epoch, best_store) = best.unwrap();
    let mut best_model = model.clone();
    best_model.store = best_store;
    Ok(TrainOutcome {
        best_model,
        best_epoch,
        best_score,
        final_adam: adam,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;

    #[test]
    fn lr_schedule_values() {
        assert_eq!(lr_schedule(0.0002, 0), 0.0002);
        assert_eq!(lr_schedule(0.0002, 1), 0.0002);
        assert_eq!(lr_schedule(0.0002, 2), 0.0001);
        assert_eq!(lr_schedule(0.0002, 4), 0.00005);
    }

    #[test]
    fn adam_zero_gradient_no_change() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("p", vec![2], vec![1.0, -2.0], true);
        let mut adam = AdamState::new(&store);
        let mut grads = vec![vec![0.0, 0.0]];
        adam_step(&mut adam, &mut store, &mut grads, 0.1, &[]).unwrap();
        assert_eq!(store.get(ParamId(0)).data, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("p", vec![1], vec![5.0], true);
        let mut adam = AdamState::new(&store);
        let mut grads = vec![vec![3.0]];
        adam_step(&mut adam, &mut store, &mut grads, 0.01, &[]).unwrap();
        // bias correction cancels on step 1: update ~ -lr * sign(g)
        assert!((store.get(ParamId(0)).data[0] - (5.0 - 0.01)).abs() < 1e-6);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("theta", vec![1], vec![1.0], true);
        let mut adam = AdamState::new(&store);
        for _ in 0..100 {
            let theta = store.get(ParamId(0)).data[0];
            let mut grads = vec![vec![2.0 * theta]];
            adam_step(&mut adam, &mut store, &mut grads, 0.05, &[]).unwrap();
        }
        assert!(store.get(ParamId(0)).data[0].abs() < 0.1);
    }

    #[test]
    fn adam_nan_gradient_names_parameter() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("theta", vec![1], vec![1.0], true);
        let mut adam = AdamState::new(&store);
        let mut grads = vec![vec![f64::NAN]];
        let err = adam_step(&mut adam, &mut store, &mut grads, 0.05, &[]).unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");
    }

    #[test]
    fn adam_frozen_row_untouched() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let pid = store.add("emb", vec![2, 2], vec![0.0, 0.0, 1.0, 1.0], true);
        let mut adam = AdamState::new(&store);
        let mut grads = vec![vec![9.0, 9.0, 9.0, 9.0]];
        adam_step(&mut adam, &mut store, &mut grads, 0.1, &[(pid, 0)]).unwrap();
        assert_eq!(&store.get(pid).data[..2], &[0.0, 0.0]);
        assert_ne!(&store.get(pid).data[2..], &[1.0, 1.0]);
    }

    #[test]
    fn sample_epoch_sizes() {
        let primary = synth_generate(100, 16, 6, 1).unwrap();
        let aux = synth_generate(200, 16, 6, 2).unwrap();
        let mix = sample_epoch(&primary, &aux, 0.15, 0);
        assert_eq!(mix.len(), 130);
        let only = sample_epoch(&primary, &aux, 0.0, 0);
        assert_eq!(only.len(), 100);
    }

    #[test]
    fn sample_epoch_seed_behaviour() {
        let primary = synth_generate(10, 16, 6, 1).unwrap();
        let aux = synth_generate(500, 16, 6, 2).unwrap();
        let a = sample_epoch(&primary, &aux, 0.15, 7);
        let b = sample_epoch(&primary, &aux, 0.15, 7);
        let c = sample_epoch(&primary, &aux, 0.15, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_epoch_empty_aux() {
        let primary = synth_generate(10, 16, 6, 1).unwrap();
        let mix = sample_epoch(&primary, &[], 0.15, 0);
        assert_eq!(mix.len(), 10);
    }
}
