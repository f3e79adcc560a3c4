//! Embedding tables and the tensorization of token streams.
//!
//! Word tables are loaded from the whitespace text format (optionally with a
//! `<count> <dim>` header line) and stay frozen. Frame tables are usually
//! created fresh with [`EmbeddingTable::new_trainable`] and learned with the
//! classifier.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autonet::{Param, Tensor2};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Half-width of the uniform range for hashed OOV vectors.
const HASHED_OOV_RANGE: f64 = 0.25;
/// Half-width of the uniform range for fresh trainable tables.
const TRAINABLE_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum OovPolicy {
    /// Unknown tokens embed as the zero vector.
    Zeros,
    /// Unknown tokens get a uniform vector that depends only on the token and
    /// the seed.
    Hashed { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Param,
    pub oov_policy: OovPolicy,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// A table with no entries; every lookup goes through the OOV policy.
    pub fn empty(dim: usize, oov_policy: OovPolicy) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            symbols: Vec::new(),
            index: HashMap::new(),
            vectors: Param::frozen(Tensor2::zeros(0, dim)),
            oov_policy,
            trainable: false,
        })
    }

    /// Builds a table from `(symbol, vector)` pairs. Later duplicates are
    /// ignored.
    pub fn from_entries<I>(dim: usize, entries: I, oov_policy: OovPolicy) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut table = Self::empty(dim, oov_policy)?;
        let mut values = Vec::new();
        for (symbol, vector) in entries {
            if vector.len() != dim {
                return Err(Error::Shape(format!(
                    "vector for {symbol:?} has length {}, expected {dim}",
                    vector.len()
                )));
            }
            if table.index.contains_key(&symbol) {
                continue;
            }
            table.index.insert(symbol.clone(), table.symbols.len());
            table.symbols.push(symbol);
            values.extend(vector);
        }
        table.vectors = Param::frozen(Tensor2::from_vec(table.symbols.len(), dim, values)?);
        Ok(table)
    }

    /// Fresh trainable table, values uniform in `[-0.05, 0.05]` drawn from
    /// `seed`.
    pub fn new_trainable<S: AsRef<str>>(symbols: &[S], dim: usize, seed: u64) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Config("trainable table needs at least one symbol".into()));
        }
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = symbols
            .iter()
            .map(|s| {
                let v = (0..dim)
                    .map(|_| rng.gen_range(-TRAINABLE_INIT_RANGE..=TRAINABLE_INIT_RANGE))
                    .collect();
                (s.as_ref().to_owned(), v)
            })
            .collect::<Vec<_>>();
        let mut table = Self::from_entries(dim, entries, OovPolicy::Zeros)?;
        table.trainable = true;
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Row-major `len x dim` matrix of stored vectors.
    pub fn matrix(&self) -> &Tensor2 {
        &self.vectors.value
    }

    /// The stored vectors as a learnable parameter. The gradient buffer is
    /// only allocated once somebody zeroes it.
    pub fn param_mut(&mut self) -> &mut Param {
        &mut self.vectors
    }

    pub fn get(&self, symbol: &str) -> Option<&[f64]> {
        self.index_of(symbol).map(|i| self.vectors.value.row(i))
    }

    /// Writes the vector for `symbol` into `out`, applying the OOV policy for
    /// unknown symbols.
    pub fn lookup_into(&self, symbol: &str, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match (self.get(symbol), self.oov_policy) {
            (Some(v), _) => out.copy_from_slice(v),
            (None, OovPolicy::Zeros) => out.fill(0.0),
            (None, OovPolicy::Hashed { seed }) => hashed_vector(symbol, seed, out),
        }
    }

    pub fn lookup(&self, symbol: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.lookup_into(symbol, &mut out);
        out
    }

    /// SHA-256 over dimension, symbols and the bit patterns of every value.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        for (symbol, row) in self.symbols.iter().zip(0..) {
            hasher.update(symbol.as_bytes());
            hasher.update([0u8]);
            for v in self.vectors.value.row(row) {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Serializes in the text format, one `symbol v1 .. vdim` line per entry.
    /// Values use the shortest representation that parses back to the same
    /// `f64`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, symbol) in self.symbols.iter().enumerate() {
            out.push_str(symbol);
            for v in self.vectors.value.row(i) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn hashed_vector(symbol: &str, seed: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, symbol));
    for v in out.iter_mut() {
        *v = rng.gen_range(-HASHED_OOV_RANGE..=HASHED_OOV_RANGE);
    }
}

pub fn load_embedding_text(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_text(&text)
}

/// Parses the text format. The dimension comes from the first vector line; a
/// leading line of exactly two integers is treated as a `<count> <dim>` header.
pub fn parse_embedding_text(text: &str) -> Result<EmbeddingTable> {
    let mut dim: Option<usize> = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut fields = raw.split_whitespace();
        let Some(symbol) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if entries.is_empty() && dim.is_none() && is_header(symbol, &rest) {
            continue;
        }
        let vector = rest
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::EmbeddingFormat {
                        line,
                        message: format!("{f:?} is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if vector.is_empty() => {
                return Err(Error::EmbeddingFormat {
                    line,
                    message: format!("entry {symbol:?} has no vector"),
                })
            }
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(Error::EmbeddingFormat {
                    line,
                    message: format!("entry {symbol:?} has {} values, expected {d}", vector.len()),
                })
            }
            Some(_) => {}
        }
        entries.push((symbol.to_owned(), vector));
    }
    let dim = dim.ok_or(Error::EmbeddingFormat {
        line: 1,
        message: "no vectors found, dimension cannot be inferred".into(),
    })?;
    EmbeddingTable::from_entries(dim, entries, OovPolicy::Zeros)
}

fn is_header(first: &str, rest: &[&str]) -> bool {
    rest.len() == 1 && first.parse::<u64>().is_ok() && rest[0].parse::<u64>().is_ok()
}

/// A padded/truncated `max_len x dim` input plus a mask of real rows.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix {
    pub values: Tensor2,
    /// `true` for rows that hold a token (including OOV tokens).
    pub mask: Vec<bool>,
}

impl InputMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }
}

/// Looks up the first `max_len` tokens; the rest of the matrix is zero.
pub fn embed_sequence<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    max_len: usize,
) -> Result<InputMatrix> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut values = Tensor2::zeros(max_len, table.dim());
    let used = tokens.len().min(max_len);
    for (row, token) in tokens.iter().take(used).enumerate() {
        table.lookup_into(token.as_ref(), values.row_mut(row));
    }
    let mask = (0..max_len).map(|r| r < used).collect();
    Ok(InputMatrix { values, mask })
}
