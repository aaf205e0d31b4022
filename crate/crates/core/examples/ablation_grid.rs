//! Compare connection modes over several seeds on a synthetic task and
//! print mean dev accuracy per mode.

use shortstack::classifier::{Activation, MlpConfig};
use shortstack::data::{synth_generate, vocab_from_examples};
use shortstack::embedding::random_embeddings;
use shortstack::encoder::{ConnectionMode, EncoderConfig};
use shortstack::training::{train, TrainConfig, TrainDatasets};
use shortstack::NliModel;

fn main() {
    let modes = [ConnectionMode::None, ConnectionMode::FullShortcut];
    let seeds = [1u64, 2, 3];
    for mode in modes {
        let mut accs = Vec::new();
        for seed in seeds {
            let primary = synth_generate(300, 48, 16, seed).unwrap();
            let dev = synth_generate(120, 48, 16, seed + 100).unwrap();
            let vocab = vocab_from_examples(&primary).unwrap();
            let encoder_cfg =
                EncoderConfig { mode, layer_dims: vec![6, 8], embed_dim: 8 };
            let mlp_cfg = MlpConfig {
                num_hidden_layers: 1,
                hidden_units: 24,
                activation: Activation::Relu,
                dropout_rate: 0.1,
                num_classes: 3,
            };
            let matrix = random_embeddings::<f32>(&vocab, 8, seed);
            let mut model =
                NliModel::new(vocab, encoder_cfg, mlp_cfg, matrix, true, seed).unwrap();
            let cfg = TrainConfig {
                batch_size: 32,
                base_lr: 0.002,
                max_epochs: 3,
                seed,
                snli_mix_rate: 0.15,
                fine_tune: true,
                deterministic: true,
            };
            let datasets =
                TrainDatasets { primary, aux: Vec::new(), dev: vec![("dev".into(), dev)] };
            let outcome = train(&mut model, &cfg, &datasets).unwrap();
            let acc = outcome.records.last().unwrap().dev_acc["dev"];
            println!("  mode {mode} seed {seed}: {acc:.3}");
            accs.push(acc);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("mode {mode}: mean dev accuracy {mean:.3} over {} seeds", seeds.len());
    }
}
