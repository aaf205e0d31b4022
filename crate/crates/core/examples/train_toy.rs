//! Train a small model on a synthetic NLI task and report per-epoch loss
//! and dev accuracy. Finishes in well under a minute on one core.

use shortstack::classifier::{Activation, MlpConfig};
use shortstack::data::{synth_generate, vocab_from_examples};
use shortstack::embedding::random_embeddings;
use shortstack::encoder::{ConnectionMode, EncoderConfig};
use shortstack::training::{train, TrainConfig, TrainDatasets};
use shortstack::NliModel;

fn main() {
    let primary = synth_generate(512, 32, 8, 0).unwrap();
    let dev = synth_generate(200, 32, 8, 1).unwrap();
    let vocab = vocab_from_examples(&primary).unwrap();

    let encoder_cfg = EncoderConfig {
        mode: ConnectionMode::FullShortcut,
        layer_dims: vec![8, 16],
        embed_dim: 8,
    };
    let mlp_cfg = MlpConfig {
        num_hidden_layers: 2,
        hidden_units: 32,
        activation: Activation::Relu,
        dropout_rate: 0.1,
        num_classes: 3,
    };
    let matrix = random_embeddings::<f32>(&vocab, 8, 5);
    let mut model = NliModel::new(vocab, encoder_cfg, mlp_cfg, matrix, true, 21).unwrap();

    let cfg = TrainConfig {
        batch_size: 32,
        base_lr: 0.002,
        max_epochs: 4,
        seed: 0,
        snli_mix_rate: 0.15,
        fine_tune: true,
        deterministic: true,
    };
    let datasets = TrainDatasets { primary, aux: Vec::new(), dev: vec![("dev".into(), dev)] };
    let outcome = train(&mut model, &cfg, &datasets).unwrap();
    for r in &outcome.records {
        println!(
            "epoch {} lr {:.4} train loss {:.4} dev acc {:.3}",
            r.epoch, r.lr, r.train_loss, r.dev_acc["dev"]
        );
    }
    println!(
        "best: {:.3} dev accuracy at epoch {}",
        outcome.best_score, outcome.best_epoch
    );
}
