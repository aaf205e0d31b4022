//! SNLI/MultiNLI JSONL ingestion, tokenization, padded batching, and a
//! synthetic NLI generator for desk-scale runs.

use crate::embedding::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment = 0,
    Neutral = 1,
    Contradiction = 2,
}

impl Label {
    pub fn from_gold(s: &str) -> Option<Label> {
        match s {
            "entailment" => Some(Label::Entailment),
            "neutral" => Some(Label::Neutral),
            "contradiction" => Some(Label::Contradiction),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        crate::classifier::LABEL_ORDER[self as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NliExample {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Label,
    pub genre: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SkipReport {
    /// gold_label "-" records (no annotator consensus).
    pub no_consensus: usize,
    /// (line number, reason) for records that failed to parse.
    pub malformed: Vec<(usize, String)>,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    gold_label: String,
    sentence1: String,
    sentence2: String,
    #[serde(default)]
    sentence1_binary_parse: Option<String>,
    #[serde(default)]
    sentence2_binary_parse: Option<String>,
    #[serde(default)]
    genre: Option<String>,
}

/// Tokens from a binary parse: whitespace fields minus the parentheses.
fn tokens_from_parse(parse: &str) -> Vec<String> {
    parse
        .split_whitespace()
        .filter(|t| *t != "(" && *t != ")")
        .map(str::to_string)
        .collect()
}

/// Raw-sentence fallback: whitespace split with terminal punctuation
/// detached as its own token.
fn tokens_from_raw(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in sentence.split_whitespace() {
        let mut word = piece;
        let mut tail = None;
        if word.len() > 1 {
            if let Some(last) = word.chars().last() {
                if matches!(last, '.' | ',' | '!' | '?' | ';' | ':') {
                    word = &piece[..piece.len() - last.len_utf8()];
                    tail = Some(last.to_string());
                }
            }
        }
        if !word.is_empty() {
            out.push(word.to_string());
        }
        if let Some(t) = tail {
            out.push(t);
        }
    }
    out
}

/// Binary-parse tokens when a parse is present, raw tokenization otherwise.
pub fn tokenize(parse: Option<&str>, raw: &str) -> Vec<String> {
    match parse {
        Some(p) if !p.trim().is_empty() => tokens_from_parse(p),
        _ => tokens_from_raw(raw),
    }
}

/// Load line-delimited JSON in the SNLI/MultiNLI distribution format.
/// gold_label "-" records are skipped and counted; malformed lines are
/// reported with their line numbers but do not abort the load.
pub fn load_nli_jsonl(path: &Path) -> Result<(Vec<NliExample>, SkipReport)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    let mut report = SkipReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.malformed.push((lineno, e.to_string()));
                continue;
            }
        };
        let label = match Label::from_gold(&raw.gold_label) {
            Some(l) => l,
            None => {
                if raw.gold_label == "-" {
                    report.no_consensus += 1;
                } else {
                    report
                        .malformed
                        .push((lineno, format!("unknown gold_label {:?}", raw.gold_label)));
                }
                continue;
            }
        };
        let premise = tokenize(raw.sentence1_binary_parse.as_deref(), &raw.sentence1);
        let hypothesis = tokenize(raw.sentence2_binary_parse.as_deref(), &raw.sentence2);
        if premise.is_empty() || hypothesis.is_empty() {
            report.malformed.push((lineno, "empty sentence after tokenization".into()));
            continue;
        }
        examples.push(NliExample { premise, hypothesis, label, genre: raw.genre });
    }
    Ok((examples, report))
}

/// Serialize examples back to the same JSONL format, so synthetic data
/// exercises the identical ingestion path.
pub fn write_nli_jsonl<W: Write>(out: &mut W, examples: &[NliExample]) -> Result<()> {
    #[derive(Serialize)]
    struct Rec<'a> {
        gold_label: &'a str,
        sentence1: String,
        sentence2: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        genre: &'a Option<String>,
    }
    for ex in examples {
        let rec = Rec {
            gold_label: ex.label.name(),
            sentence1: ex.premise.join(" "),
            sentence2: ex.hypothesis.join(" "),
            genre: &ex.genre,
        };
        serde_json::to_writer(&mut *out, &rec)
            .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
        writeln!(out)?;
    }
    Ok(())
}

/// Padded id matrices plus true lengths for one minibatch. Width is the
/// longest sentence in this batch, not globally.
#[derive(Debug, Clone)]
pub struct Batch {
    pub premise_ids: Vec<Vec<usize>>,
    pub premise_len: Vec<usize>,
    pub hypothesis_ids: Vec<Vec<usize>>,
    pub hypothesis_len: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.labels.len()
    }
}

fn pad_side(sentences: &[&[String]], vocab: &Vocabulary) -> (Vec<Vec<usize>>, Vec<usize>) {
    let width = sentences.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(sentences.len());
    let mut lens = Vec::with_capacity(sentences.len());
    for s in sentences {
        let mut row: Vec<usize> = s.iter().map(|t| vocab.id(t)).collect();
        lens.push(row.len());
        row.resize(width, PAD_ID);
        ids.push(row);
    }
    (ids, lens)
}

/// Shuffle by seed, group into consecutive batches, pad per batch. The
/// final partial batch is kept.
pub fn make_batches(
    examples: &[NliExample],
    vocab: &Vocabulary,
    batch_size: usize,
    seed: u64,
) -> Vec<Batch> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let prem: Vec<&[String]> = chunk.iter().map(|&i| examples[i].premise.as_slice()).collect();
            let hyp: Vec<&[String]> = chunk.iter().map(|&i| examples[i].hypothesis.as_slice()).collect();
            let (premise_ids, premise_len) = pad_side(&prem, vocab);
            let (hypothesis_ids, hypothesis_len) = pad_side(&hyp, vocab);
            let labels = chunk.iter().map(|&i| examples[i].label.index()).collect();
            Batch { premise_ids, premise_len, hypothesis_ids, hypothesis_len, labels }
        })
        .collect()
}

/// Batches in dataset order, without shuffling; used for evaluation.
pub fn make_batches_ordered(
    examples: &[NliExample],
    vocab: &Vocabulary,
    batch_size: usize,
) -> Vec<Batch> {
    assert!(batch_size >= 1);
    examples
        .chunks(batch_size)
        .map(|chunk| {
            let prem: Vec<&[String]> = chunk.iter().map(|e| e.premise.as_slice()).collect();
            let hyp: Vec<&[String]> = chunk.iter().map(|e| e.hypothesis.as_slice()).collect();
            let (premise_ids, premise_len) = pad_side(&prem, vocab);
            let (hypothesis_ids, hypothesis_len) = pad_side(&hyp, vocab);
            let labels = chunk.iter().map(|e| e.label.index()).collect();
            Batch { premise_ids, premise_len, hypothesis_ids, hypothesis_len, labels }
        })
        .collect()
}

/// Synthetic NLI task: entailment hypotheses are subsequences of the
/// premise, contradiction hypotheses use disjoint tokens, neutral
/// hypotheses share roughly half their tokens. Balanced and deterministic
/// per seed.
pub fn synth_generate(
    num_examples: usize,
    vocab_size: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<NliExample>> {
    if vocab_size < 8 {
        return Err(Error::Config(format!(
            "synthetic vocab_size {vocab_size} too small; need >= 8 for disjoint contradictions"
        )));
    }
    if max_len < 4 {
        return Err(Error::Config(format!("synthetic max_len {max_len} must be >= 4")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let token = |i: usize| format!("w{i}");
    let mut examples = Vec::with_capacity(num_examples);
    for idx in 0..num_examples {
        let label = match idx % 3 {
            0 => Label::Entailment,
            1 => Label::Neutral,
            _ => Label::Contradiction,
        };
        // premise over at most half the vocab so disjoint draws exist
        let plen = rng.gen_range(4..=max_len);
        let premise_ids: Vec<usize> =
            (0..plen).map(|_| rng.gen_range(0..vocab_size / 2)).collect();
        let premise_set: std::collections::HashSet<usize> = premise_ids.iter().copied().collect();
        let hlen = rng.gen_range(2..=max_len.min(plen.max(2)));
        let hypothesis_ids: Vec<usize> = match label {
            Label::Entailment => {
                // random subsequence of the premise
                let k = rng.gen_range(2..=plen.min(hlen).max(2));
                let mut positions: Vec<usize> = (0..plen).collect();
                positions.shuffle(&mut rng);
                let mut chosen: Vec<usize> = positions.into_iter().take(k).collect();
                chosen.sort_unstable();
                chosen.into_iter().map(|p| premise_ids[p]).collect()
            }
            Label::Contradiction => (0..hlen)
                .map(|_| loop {
                    let t = rng.gen_range(vocab_size / 2..vocab_size);
                    if !premise_set.contains(&t) {
                        break t;
                    }
                })
                .collect(),
            Label::Neutral => (0..hlen)
                .map(|i| {
                    if i % 2 == 0 {
                        premise_ids[rng.gen_range(0..plen)]
                    } else {
                        loop {
                            let t = rng.gen_range(vocab_size / 2..vocab_size);
                            if !premise_set.contains(&t) {
                                break t;
                            }
                        }
                    }
                })
                .collect(),
        };
        examples.push(NliExample {
            premise: premise_ids.into_iter().map(token).collect(),
            hypothesis: hypothesis_ids.into_iter().map(token).collect(),
            label,
            genre: Some("synthetic".to_string()),
        });
    }
    Ok(examples)
}

/// Vocabulary over every premise and hypothesis token, in example order.
pub fn vocab_from_examples(examples: &[NliExample]) -> Result<Vocabulary> {
    Vocabulary::build(
        examples
            .iter()
            .flat_map(|e| [&e.premise, &e.hypothesis])
            .map(|s| s.iter().map(String::as_str).collect::<Vec<_>>()),
    )
}

/// Token-overlap baseline for the synthetic task; exists to show the task
/// is learnable at all, independent of the neural model.
pub fn overlap_heuristic(example: &NliExample) -> Label {
    let premise: std::collections::HashSet<&str> =
        example.premise.iter().map(String::as_str).collect();
    let shared = example
        .hypothesis
        .iter()
        .filter(|t| premise.contains(t.as_str()))
        .count();
    let frac = shared as f64 / example.hypothesis.len() as f64;
    if frac > 0.9 {
        Label::Entailment
    } else if frac < 0.25 {
        Label::Contradiction
    } else {
        Label::Neutral
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_binary_parse() {
        assert_eq!(tokenize(Some("( ( A dog ) runs )"), ""), vec!["A", "dog", "runs"]);
    }

    #[test]
    fn tokenize_raw_detaches_punctuation() {
        assert_eq!(tokenize(None, "A dog runs."), vec!["A", "dog", "runs", "."]);
    }

    #[test]
    fn tokenize_deterministic() {
        let a = tokenize(None, "Hello, world!");
        let b = tokenize(None, "Hello, world!");
        assert_eq!(a, b);
    }

    #[test]
    fn load_jsonl_basic_and_skip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"gold_label":"entailment","sentence1":"A dog runs.","sentence2":"An animal moves."}}"#
        )
        .unwrap();
        writeln!(f, r#"{{"gold_label":"-","sentence1":"x y","sentence2":"z w"}}"#).unwrap();
        writeln!(f, "not json at all").unwrap();
        let (examples, report) = load_nli_jsonl(f.path()).unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].label, Label::Entailment);
        assert_eq!(examples[0].premise, vec!["A", "dog", "runs", "."]);
        assert_eq!(report.no_consensus, 1);
        assert_eq!(report.malformed.len(), 1);
        assert_eq!(report.malformed[0].0, 3);
    }

    #[test]
    fn load_jsonl_prefers_binary_parse() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"gold_label":"neutral","sentence1":"ignored","sentence2":"ignored","sentence1_binary_parse":"( ( A dog ) runs )","sentence2_binary_parse":"( it moves )"}}"#
        )
        .unwrap();
        let (examples, _) = load_nli_jsonl(f.path()).unwrap();
        assert_eq!(examples[0].premise, vec!["A", "dog", "runs"]);
        assert_eq!(examples[0].hypothesis, vec!["it", "moves"]);
    }

    #[test]
    fn jsonl_round_trip_preserves_tokens_and_labels() {
        let data = synth_generate(30, 16, 8, 5).unwrap();
        let mut buf = Vec::new();
        write_nli_jsonl(&mut buf, &data).unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&buf).unwrap();
        let (reloaded, report) = load_nli_jsonl(f.path()).unwrap();
        assert!(report.malformed.is_empty());
        assert_eq!(reloaded.len(), data.len());
        for (a, b) in data.iter().zip(&reloaded) {
            assert_eq!(a.premise, b.premise);
            assert_eq!(a.hypothesis, b.hypothesis);
            assert_eq!(a.label, b.label);
        }
    }

    fn vocab_for(examples: &[NliExample]) -> Vocabulary {
        vocab_from_examples(examples).unwrap()
    }

    #[test]
    fn batch_sizes_and_padding() {
        let examples = synth_generate(5, 16, 8, 1).unwrap();
        let vocab = vocab_for(&examples);
        let batches = make_batches(&examples, &vocab, 2, 0);
        let sizes: Vec<usize> = batches.iter().map(Batch::size).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        for b in &batches {
            let width = b.premise_ids[0].len();
            let max_len = b.premise_len.iter().copied().max().unwrap();
            assert_eq!(width, max_len);
            for (row, &len) in b.premise_ids.iter().zip(&b.premise_len) {
                assert!(row[..len].iter().all(|&id| id != PAD_ID));
                assert!(row[len..].iter().all(|&id| id == PAD_ID));
            }
        }
    }

    #[test]
    fn unseen_token_maps_to_unk() {
        let examples = vec![NliExample {
            premise: vec!["seen".into()],
            hypothesis: vec!["seen".into()],
            label: Label::Entailment,
            genre: None,
        }];
        let vocab = Vocabulary::build([["other"]]).unwrap();
        let batches = make_batches(&examples, &vocab, 1, 0);
        assert_eq!(batches[0].premise_ids[0][0], crate::embedding::UNK_ID);
    }

    #[test]
    fn synth_deterministic_and_balanced() {
        let a = synth_generate(3000, 64, 12, 9).unwrap();
        let b = synth_generate(3000, 64, 12, 9).unwrap();
        assert_eq!(a, b);
        let count = |l: Label| a.iter().filter(|e| e.label == l).count();
        assert_eq!(count(Label::Entailment), 1000);
        assert_eq!(count(Label::Neutral), 1000);
        assert_eq!(count(Label::Contradiction), 1000);
    }

    #[test]
    fn synth_entailment_is_subsequence() {
        let data = synth_generate(300, 32, 10, 2).unwrap();
        for ex in data.iter().filter(|e| e.label == Label::Entailment) {
            let mut pi = ex.premise.iter();
            for h in &ex.hypothesis {
                assert!(pi.any(|p| p == h), "hypothesis not a subsequence: {ex:?}");
            }
        }
    }

    #[test]
    fn synth_contradiction_disjoint() {
        let data = synth_generate(300, 32, 10, 3).unwrap();
        for ex in data.iter().filter(|e| e.label == Label::Contradiction) {
            let prem: std::collections::HashSet<&String> = ex.premise.iter().collect();
            assert!(ex.hypothesis.iter().all(|t| !prem.contains(t)));
        }
    }

    #[test]
    fn synth_small_vocab_rejected() {
        assert!(synth_generate(10, 4, 8, 0).is_err());
    }

    #[test]
    fn overlap_heuristic_beats_80_percent() {
        let data = synth_generate(3000, 64, 12, 42).unwrap();
        let correct = data.iter().filter(|e| overlap_heuristic(e) == e.label).count();
        let acc = correct as f64 / data.len() as f64;
        assert!(acc > 0.8, "overlap heuristic accuracy {acc}");
    }
}
