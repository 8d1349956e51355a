use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frozen pretrained word vectors. Lookups are lowercased; unknown words map
/// to the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

impl Embeddings {
    pub fn from_parts(dim: usize, words: Vec<String>, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != words.len() * dim {
            return Err(Error::Data(format!(
                "embedding table has {} values for {} words of dim {dim}",
                vectors.len(),
                words.len()
            )));
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Embeddings {
            dim,
            words,
            index,
            vectors,
        })
    }

    /// Parse `word v1 ... vD` lines. `D` is fixed by the first line. With a
    /// vocabulary, words outside it are dropped. A repeated word keeps its
    /// last vector.
    pub fn parse(text: &str, origin: &str, vocab: Option<&HashSet<String>>) -> Result<Self> {
        let mut dim = None;
        let mut words: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut vectors: Vec<f64> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: format!("bad embedding value: {e}"),
            })?;
            let d = *dim.get_or_insert(values.len());
            if values.len() != d || d == 0 {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    message: format!("expected {d} values, found {}", values.len()),
                });
            }
            let word = word.to_lowercase();
            if vocab.is_some_and(|v| !v.contains(&word)) {
                continue;
            }
            match index.get(&word) {
                Some(&slot) => {
                    log::warn!("{origin}:{}: duplicate embedding for `{word}`, keeping the last", i + 1);
                    vectors[slot * d..(slot + 1) * d].copy_from_slice(&values);
                }
                None => {
                    index.insert(word.clone(), words.len());
                    words.push(word);
                    vectors.extend_from_slice(&values);
                }
            }
        }
        let dim = dim.ok_or_else(|| Error::Data(format!("{origin}: empty embedding file")))?;
        Ok(Embeddings {
            dim,
            words,
            index,
            vectors,
        })
    }

    pub fn load(path: &Path, vocab: Option<&HashSet<String>>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), vocab)
    }

    /// Seeded uniform vectors in `[-1, 1]` for every (lowercased) word.
    pub fn random<'a>(words: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        let mut sorted: Vec<String> = words.into_iter().map(str::to_lowercase).collect();
        sorted.sort();
        sorted.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = Tensor::uniform(sorted.len(), dim, 1.0, &mut rng).into_data();
        Self::from_parts(dim, sorted, vectors).expect("consistent sizes")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&word.to_lowercase())
    }

    /// Vector for `word`, zeros when out of vocabulary.
    pub fn lookup(&self, word: &str) -> &[f64] {
        static EMPTY: [f64; 0] = [];
        match self.index.get(&word.to_lowercase()) {
            Some(&i) => &self.vectors[i * self.dim..(i + 1) * self.dim],
            None => &EMPTY,
        }
    }

    /// `T × dim` matrix of frozen vectors for a token sequence.
    pub fn matrix(&self, tokens: &[String]) -> Tensor {
        let mut t = Tensor::zeros(tokens.len(), self.dim);
        for (r, tok) in tokens.iter().enumerate() {
            let v = self.lookup(tok);
            if !v.is_empty() {
                t.data_mut()[r * self.dim..(r + 1) * self.dim].copy_from_slice(v);
            }
        }
        t
    }

    /// Content hash over words and vector bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (i, w) in self.words.iter().enumerate() {
            h.update((w.len() as u64).to_le_bytes());
            h.update(w.as_bytes());
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
