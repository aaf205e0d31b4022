//! Vocabulary construction and pretrained word-vector ingestion in the
//! GloVe text format (one token plus d space-separated floats per line).

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token/id bijection with reserved ids 0 = PAD, 1 = UNK. Ids are assigned
/// in first-occurrence order, so rebuilding from the same corpus is
/// deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn empty() -> Self {
        Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
        }
    }

    pub fn build<'a, I, S>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        let mut vocab = Self::empty();
        let mut saw_any = false;
        for sentence in corpus {
            for token in sentence {
                saw_any = true;
                vocab.intern(token);
            }
        }
        if !saw_any {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        Ok(vocab)
    }

    /// Rebuild from an ordered token list (ids 2..), as stored in a
    /// checkpoint.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut vocab = Self::empty();
        for t in tokens {
            vocab.intern(&t);
        }
        vocab
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.token_to_id.insert(token.to_string(), id);
        self.id_to_token.push(token.to_string());
        id
    }

    /// Id for a token, falling back to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    /// Surface tokens in id order (ids 2..), for serialization.
    pub fn surface_tokens(&self) -> Vec<String> {
        self.id_to_token[2..].to_vec()
    }
}

/// Handle to the embedding matrix inside a `ParamStore`. Row 0 (PAD) is
/// pinned to zero; `fine_tune` decides whether the matrix is trainable.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub param: ParamId,
    pub dim: usize,
    pub fine_tune: bool,
}

pub const EMBEDDING_PARAM_NAME: &str = "embedding.matrix";

/// Raw embedding matrix plus the fraction of surface tokens found in the
/// pretrained file.
pub struct LoadedEmbeddings<T> {
    pub matrix: Vec<T>,
    pub dim: usize,
    pub coverage: f64,
}

/// FNV-1a; stable across platforms and releases, unlike the std hasher.
fn stable_hash(token: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ seed;
    for b in token.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn oov_row<T: Scalar>(token: &str, seed: u64, dim: usize) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(token, seed));
    (0..dim).map(|_| T::from_f64(rng.gen_range(-0.05..0.05))).collect()
}

/// Random initialization for every non-reserved row, used when no
/// pretrained file is configured (synthetic workflows).
pub fn random_embeddings<T: Scalar>(vocab: &Vocabulary, dim: usize, seed: u64) -> Vec<T> {
    let mut matrix = vec![T::zero(); vocab.len() * dim];
    for id in UNK_ID..vocab.len() {
        let token = vocab.token(id).unwrap();
        let row = oov_row::<T>(token, seed, dim);
        matrix[id * dim..(id + 1) * dim].copy_from_slice(&row);
    }
    matrix
}

/// Parse a GloVe text file into a matrix aligned with `vocab`. Rows absent
/// from the file are initialized uniformly in [-0.05, 0.05], seeded by a
/// stable hash of (token, seed) so reruns reproduce them exactly.
pub fn load_pretrained<T: Scalar>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<LoadedEmbeddings<T>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut file_vectors: HashMap<usize, Vec<T>> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or("");
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected {dim} vector components, found {}", values.len()),
            });
        }
        if !vocab.contains(token) {
            continue;
        }
        let mut row = Vec::with_capacity(dim);
        for v in values {
            let x: f64 = v.parse().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad float {v:?}: {e}"),
            })?;
            row.push(T::from_f64(x));
        }
        file_vectors.insert(vocab.id(token), row);
    }

    let mut matrix = vec![T::zero(); vocab.len() * dim];
    let surface_total = vocab.len() - 2;
    let mut covered = 0usize;
    for id in UNK_ID..vocab.len() {
        let row = match file_vectors.remove(&id) {
            Some(r) => {
                if id >= 2 {
                    covered += 1;
                }
                r
            }
            None => oov_row::<T>(vocab.token(id).unwrap(), seed, dim),
        };
        matrix[id * dim..(id + 1) * dim].copy_from_slice(&row);
    }
    let coverage = if surface_total == 0 {
        0.0
    } else {
        covered as f64 / surface_total as f64
    };
    Ok(LoadedEmbeddings { matrix, dim, coverage })
}

/// Write a matrix back out in GloVe text format (surface tokens only).
pub fn write_glove_text<T: Scalar, W: Write>(
    out: &mut W,
    vocab: &Vocabulary,
    matrix: &[T],
    dim: usize,
) -> Result<()> {
    for id in 2..vocab.len() {
        write!(out, "{}", vocab.token(id).unwrap())?;
        for j in 0..dim {
            write!(out, " {}", matrix[id * dim + j].to_f64())?;
        }
        writeln!(out)?;
    }
    Ok(())
}

impl EmbeddingTable {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        matrix: Vec<T>,
        vocab_len: usize,
        dim: usize,
        fine_tune: bool,
    ) -> Self {
        let param = store.add(
            EMBEDDING_PARAM_NAME,
            vec![vocab_len, dim],
            matrix,
            fine_tune,
        );
        EmbeddingTable { param, dim, fine_tune }
    }

    /// Per-token embedding vars for one padded id row. Ids at or past
    /// `valid_len` still resolve (they are PAD) but the encoder never
    /// reads them.
    pub fn lookup<T: Scalar>(
        &self,
        graph: &mut crate::tensor::Graph<T>,
        binding: &crate::params::Binding,
        store: &ParamStore<T>,
        ids: &[usize],
    ) -> Result<Vec<crate::tensor::Var>> {
        let vocab_len = store.get(self.param).shape[0];
        let table = binding.var(self.param);
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            if id >= vocab_len {
                return Err(Error::Index {
                    op: "embedding lookup",
                    detail: format!("token id {id} out of vocabulary of {vocab_len}"),
                });
            }
            out.push(graph.row(table, id)?);
        }
        Ok(out)
    }
}
