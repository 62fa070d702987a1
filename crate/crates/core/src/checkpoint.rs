//! Self-describing JSON checkpoints.
//!
//! Floats are written in shortest round-trip form and parsed back exactly, so
//! a save/load cycle reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AspectModel, Mode, TeacherState};
use crate::training::TrainConfig;

pub const FORMAT: &str = "hdae-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: AspectModel,
    /// Configuration the model was trained with, if any.
    pub train_config: Option<TrainConfig>,
    pub teacher: Option<TeacherState>,
}

impl Checkpoint {
    pub fn new(model: AspectModel, train_config: Option<TrainConfig>, teacher: Option<TeacherState>) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            model,
            train_config,
            teacher,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Self = serde_json::from_str(text)?;
        if c.format != FORMAT || c.version != VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                c.format, c.version
            )));
        }
        c.model.vocab.reindex();
        validate(&c.model)?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn validate(m: &AspectModel) -> Result<()> {
    let bad = |what: String| Err(Error::Data(format!("inconsistent checkpoint: {what}")));
    let (d, k) = (m.dim(), m.num_aspects());
    if m.embeddings.rows() != m.vocab.len() {
        return bad(format!("{} embedding rows for {} words", m.embeddings.rows(), m.vocab.len()));
    }
    if m.encoder.attention.len() != d * d {
        return bad("attention matrix shape".into());
    }
    let c = &m.classifier;
    if c.weight.len() != k * d || c.bias.len() != k || c.aspect_bias.len() != k {
        return bad("classifier shapes".into());
    }
    if m.seeds.aspects.len() != k {
        return bad("seed bank aspect count".into());
    }
    let comps = if m.config.mode == Mode::Disentangled {
        m.seeds.num_components
    } else {
        0
    };
    for (i, row) in m.seeds.aspects.iter().enumerate() {
        if row.len() != m.lexicon.seeds(i).len() {
            return bad(format!("seed count of aspect {i}"));
        }
        for s in row {
            if s.word >= m.vocab.len() || s.base.len() != d || s.components.len() != comps {
                return bad(format!("seed vectors of aspect {i}"));
            }
            if s.components.iter().any(|c| c.len() != d) {
                return bad(format!("component shape in aspect {i}"));
            }
        }
    }
    if m.parameters().iter().any(|p| p.iter().any(|x| !x.is_finite())) {
        return bad("non-finite parameter".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticSpec};
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model() -> (AspectModel, Vec<Vec<usize>>) {
        let spec = SyntheticSpec {
            segments: 40,
            dim: 4,
            ..SyntheticSpec::default()
        };
        let c = generate_synthetic_corpus(&spec, 3).unwrap();
        let mut m = AspectModel::new(
            ModelConfig::default(),
            c.vocab,
            c.embeddings,
            c.lexicon,
            2,
            1.0,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        m.classifier.aspect_bias[1] = 0.1 + 0.2;
        let segs = c.dataset.train.into_iter().map(|s| s.tokens).collect();
        (m, segs)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (m, segs) = small_model();
        let ck = Checkpoint::new(m.clone(), Some(TrainConfig::default()), None);
        let json = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), json);
        for tokens in &segs {
            let a = m.predict(tokens).unwrap();
            let b = back.model.predict(tokens).unwrap();
            assert_eq!(a.aspect, b.aspect);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.probs), bits(&b.probs));
        }
        assert_eq!(back.model.vocab.get(m.vocab.word(3)), Some(3));
    }

    #[test]
    fn rejects_foreign_or_broken_files() {
        let (m, _) = small_model();
        let mut ck = Checkpoint::new(m, None, None);
        ck.format = "other".into();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
        ck.format = FORMAT.into();
        ck.model.classifier.bias.pop();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
        assert!(Checkpoint::from_json("{").is_err());
    }
}
