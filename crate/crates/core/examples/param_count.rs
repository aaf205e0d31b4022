//! Parameter counts for the three published model sizes, showing how the
//! connection mode and layer widths drive the total.

use shortstack::classifier::{Activation, MlpConfig};
use shortstack::encoder::{param_count, ConnectionMode, EncoderConfig};

fn main() {
    let mlp = MlpConfig {
        num_hidden_layers: 1,
        hidden_units: 800,
        activation: Activation::Relu,
        dropout_rate: 0.1,
        num_classes: 3,
    };
    let configs = [
        ("residual 300", ConnectionMode::Residual, vec![300, 300, 300]),
        ("residual 600", ConnectionMode::Residual, vec![600, 600, 600]),
        ("shortcut 600", ConnectionMode::FullShortcut, vec![600, 600, 600]),
        ("shortcut 512/1024/2048", ConnectionMode::FullShortcut, vec![512, 1024, 2048]),
    ];
    for (name, mode, layer_dims) in configs {
        let cfg = EncoderConfig { mode, layer_dims, embed_dim: 300 };
        let n = param_count(&cfg, &mlp, None);
        println!("{name:24} {:>12} parameters ({:.1}M)", n, n as f64 / 1e6);
    }
}
