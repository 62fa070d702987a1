//! Clustered toy corpora with known aspect labels.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingTable, SeedLexicon, Segment, Vocabulary};
use crate::error::{Error, Result};
use crate::kv;

/// Shape of a synthetic corpus. Each aspect owns a disjoint word pool whose
/// embeddings scatter around a pool centroid; a shared pool around the origin
/// supplies noise tokens. The last aspect is named `general`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub aspects: usize,
    pub vocab_per_aspect: usize,
    pub shared_vocab: usize,
    pub seeds_per_aspect: usize,
    pub segments: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub noise_rate: f64,
    pub dim: usize,
    pub sigma_emb: f64,
    /// Norm of each aspect centroid in tangent space.
    pub centroid_radius: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            aspects: 5,
            vocab_per_aspect: 40,
            shared_vocab: 40,
            seeds_per_aspect: 5,
            segments: 2000,
            min_len: 4,
            max_len: 12,
            noise_rate: 0.2,
            dim: 16,
            sigma_emb: 0.2,
            centroid_radius: 3.0,
            validation_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn from_kv(text: &str, origin: &Path) -> Result<Self> {
        let mut spec = Self::default();
        for e in kv::parse(text, origin)? {
            match e.key.as_str() {
                "aspects" => spec.aspects = kv::value(&e, origin)?,
                "vocab_per_aspect" => spec.vocab_per_aspect = kv::value(&e, origin)?,
                "shared_vocab" => spec.shared_vocab = kv::value(&e, origin)?,
                "seeds_per_aspect" => spec.seeds_per_aspect = kv::value(&e, origin)?,
                "segments" => spec.segments = kv::value(&e, origin)?,
                "min_len" => spec.min_len = kv::value(&e, origin)?,
                "max_len" => spec.max_len = kv::value(&e, origin)?,
                "noise_rate" => spec.noise_rate = kv::value(&e, origin)?,
                "dim" => spec.dim = kv::value(&e, origin)?,
                "sigma_emb" => spec.sigma_emb = kv::value(&e, origin)?,
                "centroid_radius" => spec.centroid_radius = kv::value(&e, origin)?,
                "validation_fraction" => spec.validation_fraction = kv::value(&e, origin)?,
                "test_fraction" => spec.test_fraction = kv::value(&e, origin)?,
                _ => return Err(kv::unknown(&e, origin)),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.aspects < 2 {
            return bad(format!("aspects = {} (need ≥ 2)", self.aspects));
        }
        if self.seeds_per_aspect == 0 || self.seeds_per_aspect > self.vocab_per_aspect {
            return bad(format!(
                "seeds_per_aspect = {} must be in 1..={}",
                self.seeds_per_aspect, self.vocab_per_aspect
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("length range {}..={} is empty", self.min_len, self.max_len));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate = {} must be in [0, 1)", self.noise_rate));
        }
        if self.noise_rate > 0.0 && self.shared_vocab == 0 {
            return bad("noise_rate > 0 requires shared_vocab > 0".into());
        }
        if self.dim == 0 || !(self.sigma_emb >= 0.0) || !(self.centroid_radius >= 0.0) {
            return bad("dim, sigma_emb and centroid_radius must be positive".into());
        }
        let held = self.validation_fraction + self.test_fraction;
        if self.validation_fraction < 0.0 || self.test_fraction < 0.0 || held >= 1.0 {
            return bad(format!("held-out fractions sum to {held}"));
        }
        if self.segments == 0 {
            return bad("segments = 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub lexicon: SeedLexicon,
    pub dataset: Dataset,
}

fn aspect_name(i: usize, k: usize) -> String {
    if i + 1 == k {
        "general".to_string()
    } else {
        format!("aspect{}", i + 1)
    }
}

/// Fully determined by `(spec, seed)`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.aspects;
    let d = spec.dim;
    let noise = Normal::new(0.0, spec.sigma_emb).map_err(|e| Error::Config(e.to_string()))?;

    let mut words = Vec::new();
    let mut data = Vec::new();
    let mut pools: Vec<Vec<usize>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        dir.iter_mut().for_each(|x| *x *= spec.centroid_radius / n);
        let name = aspect_name(i, k);
        let mut pool = Vec::with_capacity(spec.vocab_per_aspect);
        for j in 0..spec.vocab_per_aspect {
            pool.push(words.len());
            words.push(format!("{name}_{j}"));
            data.extend(dir.iter().map(|c| c + noise.sample(&mut rng)));
        }
        pools.push(pool);
    }
    let mut shared = Vec::with_capacity(spec.shared_vocab);
    for j in 0..spec.shared_vocab {
        shared.push(words.len());
        words.push(format!("shared_{j}"));
        data.extend((0..d).map(|_| noise.sample(&mut rng)));
    }

    let mut segments = Vec::with_capacity(spec.segments);
    for id in 0..spec.segments {
        let label = rng.random_range(0..k);
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let noisy = ((spec.noise_rate * len as f64).floor() as usize).min(len - 1);
        let mut tokens: Vec<usize> = (0..len)
            .map(|i| {
                let pool = if i < noisy { &shared } else { &pools[label] };
                pool[rng.random_range(0..pool.len())]
            })
            .collect();
        tokens.shuffle(&mut rng);
        segments.push(Segment {
            id,
            tokens,
            label: Some(label),
        });
    }

    let n_test = (spec.test_fraction * spec.segments as f64).round() as usize;
    let n_val = (spec.validation_fraction * spec.segments as f64).round() as usize;
    let n_train = spec.segments.saturating_sub(n_test + n_val);
    let mut rest = segments.split_off(n_train);
    let test = rest.split_off(n_val);
    let renumber = |v: Vec<Segment>| -> Vec<Segment> {
        v.into_iter()
            .enumerate()
            .map(|(i, s)| Segment { id: i, ..s })
            .collect()
    };

    let names = (0..k).map(|i| aspect_name(i, k)).collect();
    let seeds = pools
        .iter()
        .map(|p| p[..spec.seeds_per_aspect].to_vec())
        .collect();
    Ok(SyntheticCorpus {
        vocab: Vocabulary::from_words(words)?,
        embeddings: EmbeddingTable::new(d, data)?,
        lexicon: SeedLexicon::new(names, seeds, k - 1)?,
        dataset: Dataset {
            train: renumber(segments),
            validation: renumber(rest),
            test: renumber(test),
        },
    })
}
