//! Operator surface: train, eval, encode, ablate, gradcheck, params.
//! Every command takes a TOML config plus `--set` overrides and supports
//! `--json` structured output.

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::classifier::NUM_CLASSES;
use crate::config::RunConfig;
use crate::data::{load_nli_jsonl, synth_generate, tokenize, vocab_from_examples};
use crate::embedding::{load_pretrained, random_embeddings};
use crate::encoder::param_count;
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, CheckedParam};
use crate::model::NliModel;
use crate::training::{evaluate, evaluate_by_genre, metrics_to_jsonl, train, TrainDatasets};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "shortstack", version, about = "Stacked biLSTM sentence encoder for NLI")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML config file; missing fields fall back to the default model.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable dotted-path override, e.g. --set encoder.mode=residual
    #[arg(long = "set")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Worker threads for grid cells; single-cell commands run one thread.
    #[arg(long)]
    threads: Option<usize>,
    /// Force reproducible logs (zeroed wall times, single-threaded).
    #[arg(long)]
    deterministic: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("training.seed={seed}"));
        }
        if let Some(dir) = &self.out_dir {
            overrides.push(format!("output.dir=\"{}\"", dir.display()));
        }
        if self.deterministic {
            overrides.push("training.deterministic=true".to_string());
        }
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, best checkpoint, and the resolved
    /// config to the output directory.
    Train(ConfigArgs),
    /// Accuracy of a checkpoint on a JSONL dataset, with per-genre rows
    /// when genre tags exist.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Sentence vectors for a file of sentences, one per line.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Little-endian float32 payload instead of text floats.
        #[arg(long)]
        binary: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run a grid of desk-scale training cells and emit a CSV.
    Ablate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Repeatable grid axis, e.g. --grid encoder.mode=none,full_shortcut
        #[arg(long = "grid")]
        grid: Vec<String>,
        /// CSV output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter gradient on a tiny model.
    Gradcheck {
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// Parameter count for a configuration under the documented formula.
    Params {
        #[command(flatten)]
        common: ConfigArgs,
        /// Include an embedding matrix of this vocabulary size.
        #[arg(long)]
        vocab_size: Option<usize>,
    },
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let json = match &cli.command {
        Command::Train(a) => a.json,
        Command::Eval { json, .. } => *json,
        Command::Encode { json, .. } => *json,
        Command::Ablate { common, .. } => common.json,
        Command::Gradcheck { json, .. } => *json,
        Command::Params { common, .. } => common.json,
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            if json {
                println!("{}", json!({ "error": e.to_string() }));
            } else {
                eprintln!("error: {e}");
            }
            1
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval { checkpoint, data, json, batch_size } => {
            cmd_eval(&checkpoint, &data, json, batch_size)
        }
        Command::Encode { checkpoint, input, output, binary, json } => {
            cmd_encode(&checkpoint, &input, output.as_deref(), binary, json)
        }
        Command::Ablate { common, grid, out } => cmd_ablate(&common, &grid, out.as_deref()),
        Command::Gradcheck { json, epsilon, threshold } => cmd_gradcheck(json, epsilon, threshold),
        Command::Params { common, vocab_size } => cmd_params(&common, vocab_size),
    }
}

/// Datasets from the config: JSONL paths when given, the synthetic
/// generator otherwise.
pub fn build_datasets(cfg: &RunConfig) -> Result<TrainDatasets> {
    if let Some(train_path) = &cfg.data.train {
        let (primary, _) = load_nli_jsonl(&cfg.resolve_path(train_path))?;
        let aux = match &cfg.data.aux {
            Some(p) => load_nli_jsonl(&cfg.resolve_path(p))?.0,
            None => Vec::new(),
        };
        let mut dev = Vec::new();
        for (name, path) in &cfg.data.dev {
            dev.push((name.clone(), load_nli_jsonl(&cfg.resolve_path(path))?.0));
        }
        if dev.is_empty() {
            return Err(Error::Config("no dev split configured".into()));
        }
        Ok(TrainDatasets { primary, aux, dev })
    } else if let Some(synth) = &cfg.data.synthetic {
        let seed = cfg.training.seed;
        let primary = synth_generate(synth.num_train, synth.vocab_size, synth.max_len, seed)?;
        let dev = synth_generate(synth.num_dev, synth.vocab_size, synth.max_len, seed + 1)?;
        Ok(TrainDatasets { primary, aux: Vec::new(), dev: vec![("dev".to_string(), dev)] })
    } else {
        Err(Error::Config(
            "no training data configured: set data.train or data.synthetic".into(),
        ))
    }
}

/// Model with embeddings from the configured GloVe file, or deterministic
/// random rows when none is configured. A configured-but-missing file is
/// an error before any training starts.
pub fn build_model(cfg: &RunConfig, datasets: &TrainDatasets) -> Result<NliModel<f32>> {
    let mut corpus = datasets.primary.clone();
    corpus.extend(datasets.aux.iter().cloned());
    let vocab = vocab_from_examples(&corpus)?;
    let encoder_cfg = cfg.encoder_config()?;
    let mlp_cfg = cfg.mlp_config()?;
    let matrix = match &cfg.data.embeddings {
        Some(path) => {
            let path = cfg.resolve_path(path);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "embeddings file {} does not exist",
                    path.display()
                )));
            }
            load_pretrained::<f32>(&path, &vocab, encoder_cfg.embed_dim, cfg.training.seed)?.matrix
        }
        None => random_embeddings(&vocab, encoder_cfg.embed_dim, cfg.training.seed ^ 0xe3bd),
    };
    NliModel::new(
        vocab,
        encoder_cfg,
        mlp_cfg,
        matrix,
        cfg.training.fine_tune,
        cfg.training.seed ^ 0x1217,
    )
}

fn cmd_train(args: &ConfigArgs) -> Result<i32> {
    let cfg = args.resolve()?;
    let datasets = build_datasets(&cfg)?;
    let mut model = build_model(&cfg, &datasets)?;
    let train_cfg = cfg.train_config();
    let out_dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;

    let outcome = train(&mut model, &train_cfg, &datasets)?;

    std::fs::write(out_dir.join("metrics.jsonl"), metrics_to_jsonl(&outcome.records))?;
    save_checkpoint(&outcome.best_model, Some(&outcome.final_adam), &out_dir.join("best.ckpt"))?;

    if args.json {
        println!(
            "{}",
            json!({
                "best_epoch": outcome.best_epoch,
                "best_score": outcome.best_score,
                "epochs": outcome.records.len(),
                "out_dir": out_dir.display().to_string(),
            })
        );
    } else {
        println!(
            "trained {} epochs; best mean dev accuracy {:.4} at epoch {}",
            outcome.records.len(),
            outcome.best_score,
            outcome.best_epoch
        );
        println!("artifacts in {}", out_dir.display());
    }
    Ok(0)
}

fn cmd_eval(checkpoint: &Path, data: &Path, json: bool, batch_size: usize) -> Result<i32> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let (examples, report) = load_nli_jsonl(data)?;
    let accuracy = evaluate(&model, &examples, batch_size)?;
    let by_genre = evaluate_by_genre(&model, &examples, batch_size)?;
    if json {
        println!(
            "{}",
            json!({
                "accuracy": accuracy,
                "examples": examples.len(),
                "skipped_no_consensus": report.no_consensus,
                "per_genre": by_genre,
            })
        );
    } else {
        println!("accuracy {:.4} over {} examples", accuracy, examples.len());
        for (genre, acc) in &by_genre {
            println!("  {genre}: {acc:.4}");
        }
    }
    Ok(0)
}

fn cmd_encode(
    checkpoint: &Path,
    input: &Path,
    output: Option<&Path>,
    binary: bool,
    json: bool,
) -> Result<i32> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let text = std::fs::read_to_string(input)?;
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            return Err(Error::Parse { line: idx + 1, msg: "empty sentence line".into() });
        }
        let tokens = tokenize(None, line);
        vectors.push(model.encode_tokens(&tokens)?);
    }
    let mut payload: Vec<u8> = Vec::new();
    if binary {
        let dim = vectors.first().map_or(0, Vec::len) as u32;
        payload.extend_from_slice(&dim.to_le_bytes());
        for v in &vectors {
            for &x in v {
                payload.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    } else {
        for v in &vectors {
            let line: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            payload.extend_from_slice(line.join(" ").as_bytes());
            payload.push(b'\n');
        }
    }
    match output {
        Some(p) => std::fs::write(p, &payload)?,
        None => std::io::stdout().write_all(&payload)?,
    }
    if json {
        println!(
            "{}",
            json!({
                "sentences": vectors.len(),
                "dim": vectors.first().map_or(0, Vec::len),
            })
        );
    }
    Ok(0)
}

struct GridAxis {
    key: String,
    values: Vec<String>,
}

fn parse_grid(grid: &[String]) -> Result<Vec<GridAxis>> {
    grid.iter()
        .map(|spec| {
            let (key, values) = spec
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid spec {spec:?} is not key=v1,v2")))?;
            Ok(GridAxis {
                key: key.trim().to_string(),
                values: values.split(',').map(|v| v.trim().to_string()).collect(),
            })
        })
        .collect()
}

fn grid_cells(axes: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::new();
        for cell in &cells {
            for value in &axis.values {
                let mut c = cell.clone();
                c.push((axis.key.clone(), value.clone()));
                next.push(c);
            }
        }
        cells = next;
    }
    cells
}

struct CellResult {
    overrides: Vec<(String, String)>,
    status: &'static str,
    reason: String,
    dev_acc: Vec<(String, f64)>,
}

fn run_cell(args: &ConfigArgs, cell: &[(String, String)]) -> CellResult {
    let mut cell_args = args.clone();
    for (k, v) in cell {
        cell_args.set.push(format!("{k}={v}"));
    }
    let result = (|| -> Result<Vec<(String, f64)>> {
        let cfg = cell_args.resolve()?;
        let datasets = build_datasets(&cfg)?;
        let mut model = build_model(&cfg, &datasets)?;
        let outcome = train(&mut model, &cfg.train_config(), &datasets)?;
        let last = outcome.records.last().unwrap();
        Ok(last.dev_acc.iter().map(|(k, v)| (k.clone(), *v)).collect())
    })();
    match result {
        Ok(dev_acc) => CellResult {
            overrides: cell.to_vec(),
            status: "ok",
            reason: String::new(),
            dev_acc,
        },
        Err(e) => CellResult {
            overrides: cell.to_vec(),
            status: "skipped",
            reason: e.to_string(),
            dev_acc: Vec::new(),
        },
    }
}

fn cmd_ablate(args: &ConfigArgs, grid: &[String], out: Option<&Path>) -> Result<i32> {
    let axes = parse_grid(grid)?;
    if axes.is_empty() {
        return Err(Error::Config("ablate needs at least one --grid axis".into()));
    }
    let base_cfg = args.resolve().unwrap_or_default();
    let budget = base_cfg.training.max_epochs;
    let cells = grid_cells(&axes);

    let threads = if args.deterministic { 1 } else { args.threads.unwrap_or(1).max(1) };
    let mut results: Vec<Option<CellResult>> = Vec::with_capacity(cells.len());
    results.resize_with(cells.len(), || None);
    if threads <= 1 {
        for (i, cell) in cells.iter().enumerate() {
            results[i] = Some(run_cell(args, cell));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<CellResult>>> =
            (0..cells.len()).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..threads.min(cells.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= cells.len() {
                        break;
                    }
                    *slots[i].lock().unwrap() = Some(run_cell(args, &cells[i]));
                });
            }
        });
        for (i, slot) in slots.into_iter().enumerate() {
            results[i] = slot.into_inner().unwrap();
        }
    }
    let results: Vec<CellResult> = results.into_iter().map(Option::unwrap).collect();

    let mut split_names: Vec<String> = results
        .iter()
        .flat_map(|r| r.dev_acc.iter().map(|(k, _)| k.clone()))
        .collect();
    split_names.sort();
    split_names.dedup();

    let mut csv = String::new();
    let keys: Vec<&str> = axes.iter().map(|a| a.key.as_str()).collect();
    csv.push_str(&keys.join(","));
    csv.push_str(",budget_epochs,status,reason");
    for s in &split_names {
        csv.push_str(&format!(",acc_{s}"));
    }
    csv.push('\n');
    for r in &results {
        let vals: Vec<&str> = r.overrides.iter().map(|(_, v)| v.as_str()).collect();
        csv.push_str(&vals.join(","));
        csv.push_str(&format!(",{budget},{},{}", r.status, r.reason.replace(',', ";")));
        for s in &split_names {
            match r.dev_acc.iter().find(|(k, _)| k == s) {
                Some((_, acc)) => csv.push_str(&format!(",{acc:.4}")),
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    match out {
        Some(p) => std::fs::write(p, &csv)?,
        None => print!("{csv}"),
    }
    if args.json {
        println!(
            "{}",
            json!({
                "cells": results.len(),
                "ok": results.iter().filter(|r| r.status == "ok").count(),
                "skipped": results.iter().filter(|r| r.status == "skipped").count(),
            })
        );
    }
    Ok(0)
}

/// Tiny deterministic f64 model and batch used by the gradient-check
/// command and the acceptance suite.
pub fn gradcheck_fixture() -> Result<(NliModel<f64>, crate::data::Batch)> {
    let data = synth_generate(8, 16, 6, 33)?;
    let vocab = vocab_from_examples(&data)?;
    let encoder_cfg = crate::encoder::EncoderConfig {
        mode: crate::encoder::ConnectionMode::FullShortcut,
        layer_dims: vec![5, 7],
        embed_dim: 4,
    };
    let mlp_cfg = crate::classifier::MlpConfig {
        num_hidden_layers: 2,
        hidden_units: 6,
        activation: crate::classifier::Activation::Relu,
        dropout_rate: 0.1,
        num_classes: NUM_CLASSES,
    };
    let matrix = random_embeddings::<f64>(&vocab, 4, 5);
    let model = NliModel::new(vocab.clone(), encoder_cfg, mlp_cfg, matrix, true, 21)?;
    let batch = crate::data::make_batches(&data[..2], &vocab, 2, 0)
        .into_iter()
        .next()
        .unwrap();
    Ok((model, batch))
}

/// Check every trainable parameter of an f64 model against central finite
/// differences on one batch, dropout off.
pub fn gradcheck_model(
    model: &NliModel<f64>,
    batch: &crate::data::Batch,
    epsilon: f64,
) -> Result<crate::gradcheck::GradCheckReport> {
    use rand_chacha::rand_core::SeedableRng;
    let trainable: Vec<crate::params::ParamId> = model
        .store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    let mut params: Vec<CheckedParam> = trainable
        .iter()
        .map(|&id| CheckedParam {
            name: model.store.get(id).name.clone(),
            data: model.store.get(id).data.clone(),
        })
        .collect();
    let mut scratch = model.clone();
    grad_check(&mut params, epsilon, |ps| {
        for (&id, p) in trainable.iter().zip(ps) {
            scratch.store.get_mut(id).data = p.data.clone();
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut out = scratch.forward_batch(batch, crate::tensor::Mode::Eval, &mut rng)?;
        out.graph.backward(out.loss)?;
        let grads = scratch.store.grads(&out.graph, &out.binding)?;
        Ok((
            out.mean_loss,
            trainable.iter().map(|&id| grads[id.0].clone()).collect(),
        ))
    })
}

fn cmd_gradcheck(json: bool, epsilon: f64, threshold: f64) -> Result<i32> {
    let (model, batch) = gradcheck_fixture()?;
    let report = gradcheck_model(&model, &batch, epsilon)?;
    let worst = report.max_rel_err();
    if json {
        println!(
            "{}",
            json!({
                "epsilon": epsilon,
                "threshold": threshold,
                "max_rel_err": worst,
                "groups": report.groups.iter().map(|g| json!({
                    "name": g.name,
                    "max_rel_err": g.max_rel_err,
                })).collect::<Vec<_>>(),
                "pass": worst <= threshold,
            })
        );
    } else {
        for g in &report.groups {
            println!("{:40} max rel err {:.3e}", g.name, g.max_rel_err);
        }
        println!("worst: {worst:.3e} (threshold {threshold:.1e})");
    }
    if worst > threshold {
        if !json {
            let g = report.worst_group().unwrap();
            eprintln!("gradient check failed on parameter {}", g.name);
        }
        return Ok(1);
    }
    Ok(0)
}

fn cmd_params(args: &ConfigArgs, vocab_size: Option<usize>) -> Result<i32> {
    let cfg = args.resolve()?;
    let encoder_cfg = cfg.encoder_config()?;
    let mlp_cfg = cfg.mlp_config()?;
    let encoder_only = param_count(&encoder_cfg, &mlp_cfg, None)
        - mlp_cfg.param_count(4 * encoder_cfg.output_dim());
    let total = param_count(&encoder_cfg, &mlp_cfg, vocab_size);
    let classifier_only = mlp_cfg.param_count(4 * encoder_cfg.output_dim());
    if args.json {
        println!(
            "{}",
            json!({
                "encoder": encoder_only,
                "classifier": classifier_only,
                "embedding": vocab_size.map(|v| v * encoder_cfg.embed_dim),
                "total": total,
            })
        );
    } else {
        println!("encoder    {encoder_only}");
        println!("classifier {classifier_only}");
        if let Some(v) = vocab_size {
            println!("embedding  {}", v * encoder_cfg.embed_dim);
        }
        println!("total      {total}");
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cells_cartesian_product() {
        let axes = parse_grid(&[
            "encoder.mode=none,full_shortcut".to_string(),
            "training.seed=1,2,3".to_string(),
        ])
        .unwrap();
        let cells = grid_cells(&axes);
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0][0].1, "none");
        assert_eq!(cells[5], vec![
            ("encoder.mode".to_string(), "full_shortcut".to_string()),
            ("training.seed".to_string(), "3".to_string()),
        ]);
    }

    #[test]
    fn bad_grid_spec_rejected() {
        assert!(parse_grid(&["no_equals".to_string()]).is_err());
    }
}
