//! Word-embedding vocabularies in the plain-text format
//! `word v1 v2 … vd`, one word per LF-terminated line, single spaces,
//! period decimal marker. The dimension is fixed by the first line.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{io_err, CompositionSpace, DataError};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVocab {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingVocab {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vectors[i].as_slice())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    fn from_entries(entries: Vec<(String, Vec<f64>)>) -> Result<Self, String> {
        let dim = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
        let mut vocab =
            EmbeddingVocab { dim, words: Vec::new(), index: HashMap::new(), vectors: Vec::new() };
        for (word, vec) in entries {
            if vec.len() != dim {
                return Err(format!("dimension {} differs from first line's {}", vec.len(), dim));
            }
            if vocab.index.contains_key(&word) {
                return Err(format!("duplicate word {word:?}"));
            }
            vocab.index.insert(word.clone(), vocab.words.len());
            vocab.words.push(word);
            vocab.vectors.push(vec);
        }
        Ok(vocab)
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingVocab, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let pathstr = path.display().to_string();
    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen: HashMap<String, ()> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let perr = |detail: String| DataError::Parse { path: pathstr.clone(), line: lineno, detail };
        if line.is_empty() {
            return Err(perr("empty line".into()));
        }
        let mut fields = line.split(' ');
        let word = fields.next().unwrap().to_string();
        let values: Result<Vec<f64>, DataError> = fields
            .map(|f| f.parse::<f64>().map_err(|e| perr(format!("non-numeric field {f:?}: {e}"))))
            .collect();
        let values = values?;
        if values.is_empty() {
            return Err(perr("no vector values".into()));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(perr(format!("vector has {} values, first line had {d}", values.len())))
            }
            _ => {}
        }
        if seen.insert(word.clone(), ()).is_some() {
            return Err(perr(format!("duplicate word {word:?}")));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(perr(format!("zero vector for word {word:?}")));
        }
        entries.push((word, values));
    }
    EmbeddingVocab::from_entries(entries)
        .map_err(|detail| DataError::Parse { path: pathstr, line: 0, detail })
}

/// Write in the same plain-text format, six decimals per value. Loading the
/// written file reproduces the file byte-for-byte on a second write.
pub fn write_embeddings(path: &Path, vocab: &EmbeddingVocab) -> Result<(), DataError> {
    let mut text = String::new();
    for word in vocab.words() {
        text.push_str(word);
        for v in vocab.get(word).unwrap() {
            text.push_str(&format!(" {v:.6}"));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic unit-vector fixture: each word's vector depends only on the
/// word and the salt, so two salts give two distinct vocabularies.
pub fn fixture_vocab(words: &[&str], dim: usize, salt: u64) -> EmbeddingVocab {
    let entries: Vec<(String, Vec<f64>)> = words
        .iter()
        .map(|&w| {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(w) ^ salt);
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in v.iter_mut() {
                *x /= norm;
            }
            (w.to_string(), v)
        })
        .collect();
    EmbeddingVocab::from_entries(entries).expect("fixture construction cannot collide")
}

/// Emit the two embedding fixture files a generated dataset ships with, one
/// per (stand-in) embedding source, covering every attribute and object word.
pub fn write_default_embedding_fixtures(dir: &Path, space: &CompositionSpace) -> Result<(), DataError> {
    let words: Vec<&str> = space.attrs.iter().chain(space.objs.iter()).map(String::as_str).collect();
    write_embeddings(&dir.join("emb_glove.txt"), &fixture_vocab(&words, 16, 0x61))?;
    write_embeddings(&dir.join("emb_concept.txt"), &fixture_vocab(&words, 16, 0xc0))
}
