//! Word embeddings, seed lexicons, segment corpora and negative sampling.

mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::format_sig9;

pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSpec};

/// Dense word ↔ index table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut v = Self::new();
        for w in words {
            if v.insert(w.clone()).is_none() {
                return Err(Error::Data(format!("duplicate word {w:?}")));
            }
        }
        Ok(v)
    }

    /// Returns `None` when the word is already present.
    pub fn insert(&mut self, word: String) -> Option<usize> {
        if self.index.contains_key(&word) {
            return None;
        }
        let id = self.words.len();
        self.index.insert(word.clone(), id);
        self.words.push(word);
        Some(id)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
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

    /// Rebuilds the lookup map after deserialization.
    pub(crate) fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }
}

/// `V × d` row-major matrix of word vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Data(format!(
                "embedding data of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding table"));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// A review segment as word indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub tokens: Vec<usize>,
    /// Gold aspect index; ignored during training.
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLexicon {
    names: Vec<String>,
    seeds: Vec<Vec<usize>>,
    general: usize,
}

impl SeedLexicon {
    pub fn new(names: Vec<String>, seeds: Vec<Vec<usize>>, general: usize) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Data(format!("need at least 2 aspects, got {}", names.len())));
        }
        if names.len() != seeds.len() || general >= names.len() {
            return Err(Error::Data("inconsistent seed lexicon".into()));
        }
        if let Some(i) = seeds.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("aspect {:?} has no seed words", names[i])));
        }
        Ok(Self {
            names,
            seeds,
            general,
        })
    }

    pub fn num_aspects(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn seeds(&self, aspect: usize) -> &[usize] {
        &self.seeds[aspect]
    }

    pub fn general(&self) -> usize {
        self.general
    }

    pub fn aspect_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<Segment>,
    pub validation: Vec<Segment>,
    pub test: Vec<Segment>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `word v1 … vd` lines with an optional leading `V d` header. Words
/// are lowercased; on duplicates the first occurrence wins.
pub fn parse_embeddings(text: &str, origin: &Path) -> Result<(Vocabulary, EmbeddingTable)> {
    let mut vocab = Vocabulary::new();
    let mut data = Vec::new();
    let mut dim: Option<usize> = None;
    let mut declared_rows = None;
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if std::mem::take(&mut first) && toks.len() == 2 {
            if let (Ok(v), Ok(d)) = (toks[0].parse::<usize>(), toks[1].parse::<usize>()) {
                if d == 0 {
                    return Err(Error::parse(origin, lineno, "header declares dimension 0"));
                }
                dim = Some(d);
                declared_rows = Some(v);
                continue;
            }
        }
        let values = toks[1..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(origin, lineno, format!("bad number: {e}")))?;
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected {d} values, found {}", values.len()),
            ));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(origin, lineno, "non-finite value"));
        }
        let word = toks[0].to_lowercase();
        if vocab.insert(word.clone()).is_none() {
            warn!("{}:{lineno}: duplicate word {word:?} ignored", origin.display());
            continue;
        }
        data.extend(values);
    }
    let Some(dim) = dim.filter(|_| !vocab.is_empty()) else {
        return Err(Error::Data(format!("{}: no embeddings found", origin.display())));
    };
    if let Some(v) = declared_rows.filter(|&v| v != vocab.len()) {
        warn!(
            "{}: header declares {v} words, read {}",
            origin.display(),
            vocab.len()
        );
    }
    Ok((vocab, EmbeddingTable::new(dim, data)?))
}

pub fn load_embeddings(path: &Path) -> Result<(Vocabulary, EmbeddingTable)> {
    parse_embeddings(&read(path)?, path)
}

/// Text form with a `V d` header and nine significant digits per value.
pub fn format_embeddings(vocab: &Vocabulary, table: &EmbeddingTable) -> String {
    let mut out = format!("{} {}\n", vocab.len(), table.dim());
    for (i, w) in vocab.words().iter().enumerate() {
        out.push_str(w);
        for x in table.row(i) {
            let _ = write!(out, " {}", format_sig9(*x));
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(path: &Path, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    std::fs::write(path, format_embeddings(vocab, table)).map_err(|e| Error::io(path, e))
}

pub type Stopwords = HashSet<String>;

pub fn load_stopwords(path: &Path) -> Result<Stopwords> {
    Ok(read(path)?
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Lowercases, splits on whitespace, drops stopwords and unknown words.
pub fn encode_segment(
    text: &str,
    vocab: &Vocabulary,
    stopwords: Option<&Stopwords>,
) -> Result<Vec<usize>> {
    let tokens: Vec<usize> = text
        .split_whitespace()
        .map(str::to_lowercase)
        .filter(|t| stopwords.is_none_or(|s| !s.contains(t)))
        .filter_map(|t| vocab.get(&t))
        .collect();
    if tokens.is_empty() {
        return Err(Error::Data(format!("no in-vocabulary tokens in {text:?}")));
    }
    Ok(tokens)
}

/// Parses `aspect<TAB>seed1,seed2,…` lines. Unknown seeds are skipped with a
/// warning; the aspect named `general` (any case) is the catch-all, falling
/// back to the last aspect.
pub fn parse_seed_lexicon(text: &str, origin: &Path, vocab: &Vocabulary) -> Result<SeedLexicon> {
    let mut names = Vec::new();
    let mut seeds = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (name, list) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, lineno, "expected aspect<TAB>seeds"))?;
        let name = name.trim().to_string();
        if name.is_empty() {
            return Err(Error::parse(origin, lineno, "empty aspect name"));
        }
        if names.iter().any(|n: &String| n.eq_ignore_ascii_case(&name)) {
            return Err(Error::parse(origin, lineno, format!("duplicate aspect {name:?}")));
        }
        let mut ids: Vec<usize> = Vec::new();
        for word in list.split(',').map(|w| w.trim().to_lowercase()).filter(|w| !w.is_empty()) {
            match vocab.get(&word) {
                Some(id) if !ids.contains(&id) => ids.push(id),
                Some(_) => {}
                None => warn!("{}:{lineno}: seed {word:?} not in vocabulary", origin.display()),
            }
        }
        if ids.is_empty() {
            return Err(Error::parse(
                origin,
                lineno,
                format!("aspect {name:?} has no in-vocabulary seed words"),
            ));
        }
        names.push(name);
        seeds.push(ids);
    }
    if names.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least 2 aspects, got {}",
            origin.display(),
            names.len()
        )));
    }
    let general = match names.iter().position(|n| n.eq_ignore_ascii_case("general")) {
        Some(g) => g,
        None => {
            warn!(
                "{}: no aspect named general; using {:?}",
                origin.display(),
                names[names.len() - 1]
            );
            names.len() - 1
        }
    };
    SeedLexicon::new(names, seeds, general)
}

pub fn load_seed_lexicon(path: &Path, vocab: &Vocabulary) -> Result<SeedLexicon> {
    parse_seed_lexicon(&read(path)?, path, vocab)
}

pub fn format_seed_lexicon(lexicon: &SeedLexicon, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (i, name) in lexicon.names().iter().enumerate() {
        let words: Vec<&str> = lexicon.seeds(i).iter().map(|&w| vocab.word(w)).collect();
        let _ = writeln!(out, "{name}\t{}", words.join(","));
    }
    out
}

/// One corpus line: `text` or `label<TAB>text`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLine<'a> {
    pub label: Option<&'a str>,
    pub text: &'a str,
}

pub fn split_line(line: &str) -> RawLine<'_> {
    match line.split_once('\t') {
        Some((label, text)) => RawLine {
            label: Some(label.trim()),
            text,
        },
        None => RawLine {
            label: None,
            text: line,
        },
    }
}

/// Reads one segment per line. Segment ids are zero-based line ordinals over
/// non-blank lines; lines with no known words are skipped with a warning.
pub fn parse_corpus(
    text: &str,
    origin: &Path,
    vocab: &Vocabulary,
    lexicon: &SeedLexicon,
    stopwords: Option<&Stopwords>,
) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for (id, (lineno, line)) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .enumerate()
    {
        let raw = split_line(line);
        let label = raw
            .label
            .map(|l| {
                lexicon
                    .aspect_index(l)
                    .ok_or_else(|| Error::parse(origin, lineno + 1, format!("unknown aspect label {l:?}")))
            })
            .transpose()?;
        match encode_segment(raw.text, vocab, stopwords) {
            Ok(tokens) => out.push(Segment { id, tokens, label }),
            Err(_) => warn!(
                "{}:{}: no in-vocabulary tokens, segment skipped",
                origin.display(),
                lineno + 1
            ),
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no usable segments", origin.display())));
    }
    Ok(out)
}

pub fn load_corpus(
    path: &Path,
    vocab: &Vocabulary,
    lexicon: &SeedLexicon,
    stopwords: Option<&Stopwords>,
) -> Result<Vec<Segment>> {
    parse_corpus(&read(path)?, path, vocab, lexicon, stopwords)
}

pub fn format_corpus(segments: &[Segment], vocab: &Vocabulary, lexicon: &SeedLexicon) -> String {
    let mut out = String::new();
    for s in segments {
        let words: Vec<&str> = s.tokens.iter().map(|&t| vocab.word(t)).collect();
        if let Some(l) = s.label {
            let _ = write!(out, "{}\t", lexicon.names()[l]);
        }
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

/// Draws `k` distinct pool indices uniformly, never returning `anchor`.
pub fn sample_negatives<R: Rng + ?Sized>(
    pool_size: usize,
    anchor: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if anchor >= pool_size || pool_size - 1 < k {
        return Err(Error::Data(format!(
            "cannot draw {k} negatives from a pool of {pool_size}"
        )));
    }
    Ok(rand::seq::index::sample(rng, pool_size - 1, k)
        .into_iter()
        .map(|i| if i >= anchor { i + 1 } else { i })
        .collect())
}
