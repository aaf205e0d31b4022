//! Siamese NLI model: one shared encoder applied to premise and
//! hypothesis, matching features, MLP classifier.

use crate::classifier::{matching_features, mlp_forward, predict, MlpConfig, MlpParams};
use crate::data::Batch;
use crate::embedding::{EmbeddingTable, Vocabulary};
use crate::encoder::{encode, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Mode, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone)]
pub struct NliModel<T: Scalar> {
    pub store: ParamStore<T>,
    pub vocab: Vocabulary,
    pub encoder_cfg: EncoderConfig,
    pub encoder: EncoderParams,
    pub mlp_cfg: MlpConfig,
    pub mlp: MlpParams,
    pub embedding: EmbeddingTable,
}

pub struct ForwardResult<T: Scalar> {
    pub graph: Graph<T>,
    pub binding: crate::params::Binding,
    pub loss: Var,
    pub mean_loss: f64,
    pub predictions: Vec<usize>,
}

impl<T: Scalar> NliModel<T> {
    /// Registration order is fixed (embedding, encoder, classifier) so
    /// checkpoints and optimizer state line up deterministically.
    pub fn new(
        vocab: Vocabulary,
        encoder_cfg: EncoderConfig,
        mlp_cfg: MlpConfig,
        embedding_matrix: Vec<T>,
        fine_tune: bool,
        init_seed: u64,
    ) -> Result<Self> {
        encoder_cfg.validate()?;
        mlp_cfg.validate()?;
        let mut store = ParamStore::new();
        let embedding = EmbeddingTable::register(
            &mut store,
            embedding_matrix,
            vocab.len(),
            encoder_cfg.embed_dim,
            fine_tune,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let encoder = EncoderParams::init(&encoder_cfg, &mut store, &mut rng)?;
        let matching_dim = 4 * encoder_cfg.output_dim();
        let mlp = MlpParams::init(&mlp_cfg, matching_dim, &mut store, &mut rng);
        Ok(NliModel { store, vocab, encoder_cfg, encoder, mlp_cfg, mlp, embedding })
    }

    /// Same structure at a different precision; parameter ids carry over
    /// because registration order is identical.
    pub fn cast<U: Scalar>(&self) -> NliModel<U> {
        NliModel {
            store: self.store.cast(),
            vocab: self.vocab.clone(),
            encoder_cfg: self.encoder_cfg.clone(),
            encoder: self.encoder.clone(),
            mlp_cfg: self.mlp_cfg.clone(),
            mlp: self.mlp.clone(),
            embedding: self.embedding.clone(),
        }
    }

    /// Encode both sentences with the shared encoder, classify, and
    /// average per-example cross-entropy over the batch.
    pub fn forward_batch<R: Rng>(
        &self,
        batch: &Batch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardResult<T>> {
        if batch.size() == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let mut graph = Graph::new();
        let binding = self.store.bind(&mut graph)?;
        let mut losses = Vec::with_capacity(batch.size());
        let mut predictions = Vec::with_capacity(batch.size());
        for ex in 0..batch.size() {
            let v_p = self.encode_sentence(
                &mut graph,
                &binding,
                &batch.premise_ids[ex],
                batch.premise_len[ex],
            )?;
            let v_h = self.encode_sentence(
                &mut graph,
                &binding,
                &batch.hypothesis_ids[ex],
                batch.hypothesis_len[ex],
            )?;
            let m = matching_features(&mut graph, v_p, v_h)?;
            let logits = mlp_forward(&mut graph, &binding, &self.mlp_cfg, &self.mlp, m, mode, rng)?;
            predictions.push(predict(graph.value(logits))?);
            losses.push(graph.softmax_cross_entropy(logits, batch.labels[ex])?);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = graph.add(total, l)?;
        }
        let loss = graph.scale(total, T::from_f64(1.0 / batch.size() as f64));
        graph.check_finite(loss, "batch loss")?;
        let mean_loss = graph.value(loss)[0].to_f64();
        Ok(ForwardResult { graph, binding, loss, mean_loss, predictions })
    }

    /// Sentence vector for one padded id row with its true length.
    pub fn encode_sentence(
        &self,
        graph: &mut Graph<T>,
        binding: &crate::params::Binding,
        ids: &[usize],
        valid_len: usize,
    ) -> Result<Var> {
        let embedded = self.embedding.lookup(graph, binding, &self.store, ids)?;
        encode(graph, binding, &self.encoder, &self.encoder_cfg, &embedded, valid_len)
    }

    /// Encode one sentence outside any batch, e.g. for the vector-export
    /// command.
    pub fn encode_tokens(&self, tokens: &[String]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence("cannot encode an empty sentence"));
        }
        let ids: Vec<usize> = tokens.iter().map(|t| self.vocab.id(t)).collect();
        let mut graph = Graph::new();
        let binding = self.store.bind(&mut graph)?;
        let v = self.encode_sentence(&mut graph, &binding, &ids, ids.len())?;
        Ok(graph.value(v).iter().map(|&x| Scalar::to_f64(x)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Activation;
    use crate::data::{make_batches, synth_generate};
    use crate::embedding::random_embeddings;
    use crate::encoder::ConnectionMode;

    pub(crate) fn toy_model(mode: ConnectionMode, fine_tune: bool) -> NliModel<f64> {
        let data = synth_generate(12, 16, 6, 1).unwrap();
        let vocab = crate::data::vocab_from_examples(&data).unwrap();
        let encoder_cfg = EncoderConfig { mode, layer_dims: vec![3, 4], embed_dim: 4 };
        let mlp_cfg = MlpConfig {
            num_hidden_layers: 2,
            hidden_units: 5,
            activation: Activation::Relu,
            dropout_rate: 0.1,
            num_classes: 3,
        };
        let matrix = random_embeddings(&vocab, 4, 3);
        NliModel::new(vocab, encoder_cfg, mlp_cfg, matrix, fine_tune, 7).unwrap()
    }

    #[test]
    fn zero_classifier_gives_ln3_loss() {
        let mut model = toy_model(ConnectionMode::FullShortcut, true);
        for (w, b) in model.mlp.layers.clone() {
            for v in model.store.get_mut(w).data.iter_mut() {
                *v = 0.0;
            }
            for v in model.store.get_mut(b).data.iter_mut() {
                *v = 0.0;
            }
        }
        let data = synth_generate(1, 16, 6, 1).unwrap();
        let batch = &make_batches(&data, &model.vocab, 1, 0)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward_batch(batch, Mode::Eval, &mut rng).unwrap();
        assert!((out.mean_loss - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn siamese_sharing_doubles_gradient_on_identical_sentences() {
        let model = toy_model(ConnectionMode::FullShortcut, true);
        let ids = vec![2usize, 3, 4];

        // both branches: encode the same sentence twice, sum the vectors
        let mut g = Graph::new();
        let binding = model.store.bind(&mut g).unwrap();
        let v1 = model.encode_sentence(&mut g, &binding, &ids, 3).unwrap();
        let v2 = model.encode_sentence(&mut g, &binding, &ids, 3).unwrap();
        let s = g.add(v1, v2).unwrap();
        let col = g.stack_cols(&[s]).unwrap();
        let dim = model.encoder_cfg.output_dim();
        let ones = g.leaf(vec![1.0; dim], vec![1, dim], false).unwrap();
        let total = g.matmul(ones, col).unwrap();
        g.backward(total).unwrap();
        let w0 = model.encoder.layers[0].fwd.w_x;
        let both = g.grad(binding.var(w0)).unwrap().to_vec();

        // single branch
        let mut g = Graph::new();
        let binding = model.store.bind(&mut g).unwrap();
        let v1 = model.encode_sentence(&mut g, &binding, &ids, 3).unwrap();
        let col = g.stack_cols(&[v1]).unwrap();
        let ones = g.leaf(vec![1.0; dim], vec![1, dim], false).unwrap();
        let total = g.matmul(ones, col).unwrap();
        g.backward(total).unwrap();
        let single = g.grad(binding.var(w0)).unwrap().to_vec();

        for (b, s) in both.iter().zip(&single) {
            assert!((b - 2.0 * s).abs() < 1e-9, "{b} vs 2*{s}");
        }
    }

    #[test]
    fn swapping_sentences_permutes_matching_blocks_only() {
        let model = toy_model(ConnectionMode::WordShortcut, false);
        let p = vec![2usize, 3];
        let h = vec![4usize, 5, 6];
        let mut g = Graph::new();
        let binding = model.store.bind(&mut g).unwrap();
        let vp = model.encode_sentence(&mut g, &binding, &p, 2).unwrap();
        let vh = model.encode_sentence(&mut g, &binding, &h, 3).unwrap();
        let f1 = matching_features(&mut g, vp, vh).unwrap();
        let f2 = matching_features(&mut g, vh, vp).unwrap();
        let m1 = g.value(f1).to_vec();
        let m2 = g.value(f2).to_vec();
        let d = model.encoder_cfg.output_dim();
        assert_eq!(&m1[0..d], &m2[d..2 * d]);
        assert_eq!(&m1[d..2 * d], &m2[0..d]);
        assert_eq!(&m1[2 * d..], &m2[2 * d..]);
    }

    #[test]
    fn empty_batch_rejected() {
        let model = toy_model(ConnectionMode::None, false);
        let batch = Batch {
            premise_ids: vec![],
            premise_len: vec![],
            hypothesis_ids: vec![],
            hypothesis_len: vec![],
            labels: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(model.forward_batch(&batch, Mode::Eval, &mut rng).is_err());
    }
}
