//! Generate a small synthetic NLI dataset and print a few examples plus
//! the accuracy of a token-overlap heuristic, which shows the labels are
//! learnable from the sentences alone.

use shortstack::data::{overlap_heuristic, synth_generate};

fn main() {
    let examples = synth_generate(300, 32, 10, 7).unwrap();
    for ex in examples.iter().take(6) {
        println!(
            "{:13}  P: {:35} H: {}",
            ex.label.name(),
            ex.premise.join(" "),
            ex.hypothesis.join(" ")
        );
    }
    let correct = examples
        .iter()
        .filter(|ex| overlap_heuristic(ex) == ex.label)
        .count();
    println!(
        "\noverlap heuristic: {}/{} correct ({:.1}%)",
        correct,
        examples.len(),
        100.0 * correct as f64 / examples.len() as f64
    );
}
