//! Train briefly, then encode a few sentences into fixed-width vectors
//! and compare them by cosine similarity.

use shortstack::classifier::{Activation, MlpConfig};
use shortstack::data::{synth_generate, tokenize, vocab_from_examples};
use shortstack::embedding::random_embeddings;
use shortstack::encoder::{ConnectionMode, EncoderConfig};
use shortstack::training::{train, TrainConfig, TrainDatasets};
use shortstack::NliModel;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn main() {
    let primary = synth_generate(256, 32, 8, 0).unwrap();
    let dev = synth_generate(100, 32, 8, 1).unwrap();
    let vocab = vocab_from_examples(&primary).unwrap();
    let encoder_cfg = EncoderConfig {
        mode: ConnectionMode::FullShortcut,
        layer_dims: vec![6, 8],
        embed_dim: 8,
    };
    let mlp_cfg = MlpConfig {
        num_hidden_layers: 1,
        hidden_units: 16,
        activation: Activation::Relu,
        dropout_rate: 0.1,
        num_classes: 3,
    };
    let matrix = random_embeddings::<f32>(&vocab, 8, 5);
    let mut model = NliModel::new(vocab, encoder_cfg, mlp_cfg, matrix, true, 21).unwrap();
    let cfg = TrainConfig {
        batch_size: 32,
        base_lr: 0.002,
        max_epochs: 2,
        seed: 0,
        snli_mix_rate: 0.15,
        fine_tune: true,
        deterministic: true,
    };
    let datasets = TrainDatasets { primary, aux: Vec::new(), dev: vec![("dev".into(), dev)] };
    let outcome = train(&mut model, &cfg, &datasets).unwrap();
    let model = outcome.best_model;

    let sentences = ["w1 w3 w5 w7", "w1 w3 w5", "w20 w22 w24 w26"];
    let vectors: Vec<Vec<f64>> = sentences
        .iter()
        .map(|s| model.encode_tokens(&tokenize(None, s)).unwrap())
        .collect();
    println!("vector width: {}", vectors[0].len());
    for i in 0..sentences.len() {
        for j in i + 1..sentences.len() {
            println!(
                "cos({:?}, {:?}) = {:+.3}",
                sentences[i],
                sentences[j],
                cosine(&vectors[i], &vectors[j])
            );
        }
    }
}
