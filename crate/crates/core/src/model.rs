//! Forward computations of the aspect extractor.
//!
//! A segment is encoded by attention over its word vectors. Aspect vectors are
//! weighted sums of seed-word representations; in disentangled mode each seed
//! word carries several components and a temperature softmax over hyperbolic
//! distances picks the one closest to the segment. The hyperbolic head scores
//! aspects by negative squared distance after the exponential map and
//! reconstructs the segment through the Einstein midpoint of the aspect
//! vectors in the Klein disk. The Euclidean head is a linear softmax layer
//! with a linear reconstruction.
//!
//! Every trainable vector lives in tangent space at the origin; hyperbolic
//! coordinates only appear inside forward passes.
//!
//! All formulas are written once against [`Tape`]. The plain-vector helpers
//! at the bottom of this module wrap them in a throwaway tape.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gumbel, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, SeedLexicon, Segment, Vocabulary};
use crate::diffgraph::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{diff as geo, BALL_EPS};

/// Which classifier head and seed representation feed the aspect matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Linear softmax head with linear reconstruction.
    Euclidean,
    /// Hyperbolic head over the base seed vectors.
    Hyperbolic,
    /// Hyperbolic head over refined disentangled seed components.
    Disentangled,
}

/// How seed words are weighted inside an aspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedWeighting {
    /// Softmax over seed · segment dot products.
    Softmax,
    Uniform,
}

/// Space in which the refinement distance is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineDistance {
    /// Both vectors go through the exponential map first.
    Exp,
    /// Vectors are only projected into the ball.
    Raw,
}

macro_rules! str_enum {
    ($ty:ty { $($s:literal => $v:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    other => Err(Error::Config(format!(
                        "unknown {} {other:?}", stringify!($ty)
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self { $(v if *v == $v => $s,)+ _ => unreachable!() };
                f.write_str(s)
            }
        }
    };
}

str_enum!(Mode { "euclidean" => Mode::Euclidean, "hyperbolic" => Mode::Hyperbolic, "disentangled" => Mode::Disentangled });
str_enum!(SeedWeighting { "softmax" => SeedWeighting::Softmax, "uniform" => SeedWeighting::Uniform });
str_enum!(RefineDistance { "exp" => RefineDistance::Exp, "raw" => RefineDistance::Raw });

/// Options that shape the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    /// Inverse temperature of the reconstruction weights.
    pub beta: f64,
    /// Constant shift of the reconstruction logits; cancels on normalization.
    pub shift: f64,
    /// Refinement temperature.
    pub tau: f64,
    pub seed_weighting: SeedWeighting,
    pub refine_distance: RefineDistance,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Disentangled,
            beta: 0.01,
            shift: 0.0,
            tau: 0.1,
            seed_weighting: SeedWeighting::Softmax,
            refine_distance: RefineDistance::Exp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `d × d` row-major attention matrix.
    pub attention: Vec<f64>,
}

/// One seed word: its base vector and its disentangled components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedVectors {
    pub word: usize,
    pub base: Vec<f64>,
    pub components: Vec<Vec<f64>>,
}

/// Seed representations indexed `[aspect][seed]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedBank {
    pub num_components: usize,
    pub aspects: Vec<Vec<SeedVectors>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// `K × d` weights of the Euclidean head.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Segment bias of the hyperbolic head.
    pub segment_bias: f64,
    pub aspect_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub train_embeddings: bool,
    pub lexicon: SeedLexicon,
    pub encoder: EncoderParams,
    pub seeds: SeedBank,
    pub classifier: ClassifierParams,
}

/// Per-seed predictive quality used by the bag-of-words teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherState {
    /// `[aspect][seed]`, parallel to the lexicon.
    pub quality: Vec<Vec<f64>>,
}

impl TeacherState {
    pub fn uniform(lexicon: &SeedLexicon) -> Self {
        Self {
            quality: (0..lexicon.num_aspects())
                .map(|i| vec![1.0; lexicon.seeds(i).len()])
                .collect(),
        }
    }
}

/// Adds independent `N(0, σ²)` noise to `base` for each of `count` components.
pub fn disentangle_init<R: Rng + ?Sized>(
    base: &[f64],
    count: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::InvalidArgument("component count must be ≥ 1".into()));
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("sigma {sigma}: {e}")))?;
    Ok((0..count)
        .map(|_| base.iter().map(|b| b + normal.sample(rng)).collect())
        .collect())
}

impl AspectModel {
    /// Fresh model: identity attention, seed vectors copied from the
    /// embeddings, zero biases and a Xavier-uniform Euclidean head.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        vocab: Vocabulary,
        embeddings: EmbeddingTable,
        lexicon: SeedLexicon,
        num_components: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if vocab.len() != embeddings.rows() {
            return Err(Error::Data(format!(
                "vocabulary has {} words but the table has {} rows",
                vocab.len(),
                embeddings.rows()
            )));
        }
        if config.mode == Mode::Disentangled && num_components == 0 {
            return Err(Error::Config("disentangled mode needs at least one component".into()));
        }
        let d = embeddings.dim();
        let k = lexicon.num_aspects();
        let mut attention = vec![0.0; d * d];
        for i in 0..d {
            attention[i * d + i] = 1.0;
        }
        let bound = (6.0 / (k + d) as f64).sqrt();
        let uni = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = (0..k * d).map(|_| uni.sample(rng)).collect();

        let disentangled = config.mode == Mode::Disentangled;
        let mut aspects = Vec::with_capacity(k);
        for i in 0..k {
            let mut row = Vec::new();
            for &w in lexicon.seeds(i) {
                let base = embeddings.row(w).to_vec();
                let components = if disentangled {
                    disentangle_init(&base, num_components, sigma, rng)?
                } else {
                    Vec::new()
                };
                row.push(SeedVectors {
                    word: w,
                    base,
                    components,
                });
            }
            aspects.push(row);
        }
        Ok(Self {
            config,
            vocab,
            embeddings,
            train_embeddings: false,
            lexicon,
            encoder: EncoderParams { attention },
            seeds: SeedBank {
                num_components: if disentangled { num_components } else { 0 },
                aspects,
            },
            classifier: ClassifierParams {
                weight,
                bias: vec![0.0; k],
                segment_bias: 0.0,
                aspect_bias: vec![0.0; k],
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn num_aspects(&self) -> usize {
        self.lexicon.num_aspects()
    }

    /// Trainable tensors in a fixed order shared with [`Forward::param_vars`].
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            &self.encoder.attention,
            &self.classifier.weight,
            &self.classifier.bias,
            std::slice::from_ref(&self.classifier.segment_bias),
            &self.classifier.aspect_bias,
        ];
        for s in self.seeds.aspects.iter().flatten() {
            out.push(&s.base);
            out.extend(s.components.iter().map(Vec::as_slice));
        }
        if self.train_embeddings {
            out.push(self.embeddings.as_slice());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.encoder.attention,
            &mut self.classifier.weight,
            &mut self.classifier.bias,
            std::slice::from_mut(&mut self.classifier.segment_bias),
            &mut self.classifier.aspect_bias,
        ];
        for s in self.seeds.aspects.iter_mut().flatten() {
            out.push(&mut s.base);
            out.extend(s.components.iter_mut().map(Vec::as_mut_slice));
        }
        if self.train_embeddings {
            out.push(self.embeddings.as_mut_slice());
        }
        out
    }

    /// Most probable aspect for one segment; ties go to the lower index.
    pub fn predict(&self, tokens: &[usize]) -> Result<Prediction> {
        let mut fwd = Forward::new(self, false);
        let out = fwd.segment(tokens)?;
        let probs = fwd.tape.value(out.probs).to_vec();
        Ok(Prediction {
            aspect: argmax(&probs),
            probs,
        })
    }

    /// Segment vector as exported for visualisation: the exponential image in
    /// the hyperbolic modes, the raw attention-weighted vector otherwise.
    pub fn segment_embedding(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut fwd = Forward::new(self, false);
        let enc = fwd.encode(tokens)?;
        if self.config.mode == Mode::Euclidean {
            return Ok(fwd.tape.value(enc.vector).to_vec());
        }
        let ball = geo::exp_map_0(&mut fwd.tape, enc.vector)?;
        Ok(fwd.tape.value(ball).to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub aspect: usize,
    pub probs: Vec<f64>,
}

pub fn predict_aspect(model: &AspectModel, segment: &Segment) -> Result<Prediction> {
    model.predict(&segment.tokens)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Tape handles for every model parameter.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub attention: Var,
    pub weight: Var,
    pub bias: Var,
    pub segment_bias: Var,
    pub aspect_bias: Var,
    /// `[aspect][seed]`
    pub base: Vec<Vec<Var>>,
    /// `[aspect][seed][component]`
    pub components: Vec<Vec<Vec<Var>>>,
    pub embeddings: Option<Var>,
}

impl ParamVars {
    /// Same order as [`AspectModel::parameters`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![
            self.attention,
            self.weight,
            self.bias,
            self.segment_bias,
            self.aspect_bias,
        ];
        for (bases, comps) in self.base.iter().zip(&self.components) {
            for (b, c) in bases.iter().zip(comps) {
                out.push(*b);
                out.extend(c.iter().copied());
            }
        }
        out.extend(self.embeddings);
        out
    }
}

/// Encoded segment.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub vector: Var,
    pub attention: Var,
}

/// Everything the losses need from one segment's forward pass.
#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub vector: Var,
    pub attention: Var,
    /// Rows of the aspect matrix, in tangent space.
    pub aspects: Vec<Var>,
    /// Exponential images of the aspect rows (hyperbolic modes only).
    pub aspect_balls: Vec<Var>,
    /// Hyperbolic scores or Euclidean logits.
    pub scores: Var,
    pub probs: Var,
    pub reconstruction: Var,
}

/// A model's parameters placed on a fresh tape.
pub struct Forward<'m> {
    model: &'m AspectModel,
    pub tape: Tape,
    pub params: ParamVars,
    words: HashMap<usize, Var>,
    component_balls: Option<Vec<Vec<Vec<Var>>>>,
    projected_components: Option<Vec<Vec<Vec<Var>>>>,
    gumbel: Option<Box<dyn RngCore + 'm>>,
}

impl<'m> Forward<'m> {
    /// With `trainable` false every parameter is recorded as a constant.
    pub fn new(model: &'m AspectModel, trainable: bool) -> Self {
        let mut tape = Tape::new();
        let leaf = |t: &mut Tape, v: &[f64]| {
            if trainable {
                t.param(v.to_vec())
            } else {
                t.constant(v.to_vec())
            }
        };
        let attention = leaf(&mut tape, &model.encoder.attention);
        let weight = leaf(&mut tape, &model.classifier.weight);
        let bias = leaf(&mut tape, &model.classifier.bias);
        let segment_bias = leaf(&mut tape, &[model.classifier.segment_bias]);
        let aspect_bias = leaf(&mut tape, &model.classifier.aspect_bias);
        let mut base = Vec::new();
        let mut components = Vec::new();
        for row in &model.seeds.aspects {
            let mut b = Vec::new();
            let mut c = Vec::new();
            for s in row {
                b.push(leaf(&mut tape, &s.base));
                c.push(s.components.iter().map(|x| leaf(&mut tape, x)).collect());
            }
            base.push(b);
            components.push(c);
        }
        let embeddings = (trainable && model.train_embeddings)
            .then(|| leaf(&mut tape, model.embeddings.as_slice()));
        Self {
            model,
            tape,
            params: ParamVars {
                attention,
                weight,
                bias,
                segment_bias,
                aspect_bias,
                base,
                components,
                embeddings,
            },
            words: HashMap::new(),
            component_balls: None,
            projected_components: None,
            gumbel: None,
        }
    }

    /// Adds standard Gumbel noise to the refinement logits.
    pub fn with_gumbel_noise(mut self, rng: impl RngCore + 'm) -> Self {
        self.gumbel = Some(Box::new(rng));
        self
    }

    pub fn model(&self) -> &AspectModel {
        self.model
    }

    pub fn word(&mut self, id: usize) -> Result<Var> {
        if let Some(&v) = self.words.get(&id) {
            return Ok(v);
        }
        let d = self.model.dim();
        let v = match self.params.embeddings {
            Some(table) => self.tape.slice(table, id * d, d)?,
            None => self.tape.constant(self.model.embeddings.row(id).to_vec()),
        };
        self.words.insert(id, v);
        Ok(v)
    }

    pub fn encode(&mut self, tokens: &[usize]) -> Result<Encoded> {
        let words = tokens
            .iter()
            .map(|&t| self.word(t))
            .collect::<Result<Vec<_>>>()?;
        let (vector, attention) =
            attention_encode(&mut self.tape, &words, self.params.attention, self.model.dim())?;
        Ok(Encoded { vector, attention })
    }

    /// Exponential images of every seed component, computed once per tape.
    pub fn component_balls(&mut self) -> Result<&Vec<Vec<Vec<Var>>>> {
        if self.component_balls.is_none() {
            let all = self.map_components(|t, c| geo::exp_map_0(t, c))?;
            self.component_balls = Some(all);
        }
        Ok(self.component_balls.as_ref().expect("initialised above"))
    }

    /// Component images used by refinement: exponential or merely projected.
    fn refine_balls(&mut self) -> Result<&Vec<Vec<Vec<Var>>>> {
        if self.model.config.refine_distance == RefineDistance::Exp {
            return self.component_balls();
        }
        if self.projected_components.is_none() {
            let all = self.map_components(|t, c| geo::project_to_ball(t, c, BALL_EPS))?;
            self.projected_components = Some(all);
        }
        Ok(self.projected_components.as_ref().expect("initialised above"))
    }

    fn map_components(
        &mut self,
        f: impl Fn(&mut Tape, Var) -> Result<Var>,
    ) -> Result<Vec<Vec<Vec<Var>>>> {
        self.params
            .components
            .iter()
            .map(|row| {
                row.iter()
                    .map(|comps| comps.iter().map(|&c| f(&mut self.tape, c)).collect())
                    .collect()
            })
            .collect()
    }

    /// Seed representations of one aspect for a given segment vector.
    fn seed_reprs(&mut self, aspect: usize, v_ball: Option<Var>) -> Result<Vec<Var>> {
        if self.model.config.mode != Mode::Disentangled {
            return Ok(self.params.base[aspect].clone());
        }
        let Some(v_ball) = v_ball else {
            return Err(Error::InvalidArgument("refinement needs the segment ball point".into()));
        };
        let balls = self.refine_balls()?[aspect].clone();
        let comps = self.params.components[aspect].clone();
        let tau = self.model.config.tau;
        balls
            .iter()
            .zip(&comps)
            .map(|(b, c)| {
                let noise = self.gumbel.as_mut().map(|rng| {
                    let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
                    (0..c.len()).map(|_| g.sample(rng)).collect::<Vec<f64>>()
                });
                refine(&mut self.tape, v_ball, b, c, tau, noise.as_deref()).map(|r| r.0)
            })
            .collect()
    }

    /// Aspect matrix rows for a segment. Seed weights always come from the
    /// base seed vectors; in disentangled mode the weighted vectors are the
    /// refined ones.
    pub fn aspect_vectors(&mut self, v_s: Var, v_ball: Option<Var>) -> Result<Vec<Var>> {
        let k = self.model.num_aspects();
        let weighting = self.model.config.seed_weighting;
        (0..k)
            .map(|i| {
                let reprs = self.seed_reprs(i, v_ball)?;
                let base = self.params.base[i].clone();
                let z = seed_weights(&mut self.tape, v_s, &base, weighting)?;
                self.tape.lincomb(z, &reprs)
            })
            .collect()
    }

    /// Full forward pass for one segment.
    pub fn segment(&mut self, tokens: &[usize]) -> Result<SegmentOutput> {
        let enc = self.encode(tokens)?;
        let cfg = self.model.config;
        if cfg.mode == Mode::Euclidean {
            let aspects = self.aspect_vectors(enc.vector, None)?;
            let k = self.model.num_aspects();
            let logits = euclidean_logits(
                &mut self.tape,
                enc.vector,
                self.params.weight,
                self.params.bias,
                k,
                self.model.dim(),
            )?;
            let probs = self.tape.softmax(logits)?;
            let reconstruction = self.tape.lincomb(probs, &aspects)?;
            return Ok(SegmentOutput {
                vector: enc.vector,
                attention: enc.attention,
                aspects,
                aspect_balls: Vec::new(),
                scores: logits,
                probs,
                reconstruction,
            });
        }
        let v_ball = match cfg.refine_distance {
            RefineDistance::Raw if cfg.mode == Mode::Disentangled => {
                Some(geo::project_to_ball(&mut self.tape, enc.vector, BALL_EPS)?)
            }
            _ => None,
        };
        let exp_ball = geo::exp_map_0(&mut self.tape, enc.vector)?;
        let refine_ball = v_ball.unwrap_or(exp_ball);
        let aspects = self.aspect_vectors(enc.vector, Some(refine_ball))?;
        let aspect_balls = aspects
            .iter()
            .map(|&a| geo::exp_map_0(&mut self.tape, a))
            .collect::<Result<Vec<_>>>()?;
        let scores = hyperbolic_scores(
            &mut self.tape,
            exp_ball,
            &aspect_balls,
            self.params.segment_bias,
            self.params.aspect_bias,
        )?;
        let probs = self.tape.softmax(scores)?;
        let reconstruction =
            hyperbolic_reconstruct(&mut self.tape, scores, &aspect_balls, cfg.beta, cfg.shift)?;
        Ok(SegmentOutput {
            vector: enc.vector,
            attention: enc.attention,
            aspects,
            aspect_balls,
            scores,
            probs,
            reconstruction,
        })
    }
}

/// `v'_s` = mean word vector, `u_i = w_iᵀ M v'_s`, `c = softmax(u)`,
/// `v_s = Σ c_i w_i`. Returns `(v_s, c)`.
pub fn attention_encode(t: &mut Tape, words: &[Var], attention: Var, dim: usize) -> Result<(Var, Var)> {
    if words.is_empty() {
        return Err(Error::InvalidArgument("empty segment".into()));
    }
    let ones = t.constant(vec![1.0 / words.len() as f64; words.len()]);
    let mean = t.lincomb(ones, words)?;
    let projected = t.matvec(attention, mean, dim, dim)?;
    let logits = words
        .iter()
        .map(|&w| t.dot(w, projected))
        .collect::<Result<Vec<_>>>()?;
    let logits = t.concat(&logits)?;
    let c = t.softmax(logits)?;
    let v = t.lincomb(c, words)?;
    Ok((v, c))
}

/// Weights of the seed words inside one aspect.
pub fn seed_weights(t: &mut Tape, v_s: Var, seeds: &[Var], weighting: SeedWeighting) -> Result<Var> {
    match weighting {
        SeedWeighting::Uniform => Ok(t.constant(vec![1.0 / seeds.len() as f64; seeds.len()])),
        SeedWeighting::Softmax => {
            let dots = seeds
                .iter()
                .map(|&s| t.dot(s, v_s))
                .collect::<Result<Vec<_>>>()?;
            let dots = t.concat(&dots)?;
            t.softmax(dots)
        }
    }
}

pub fn euclidean_logits(t: &mut Tape, v_s: Var, weight: Var, bias: Var, k: usize, d: usize) -> Result<Var> {
    let wv = t.matvec(weight, v_s, k, d)?;
    t.add(wv, bias)
}

/// `p_i = −d(x_s, a_i)² + b_v + b_{a_i}` on ball points.
pub fn hyperbolic_scores(
    t: &mut Tape,
    segment_ball: Var,
    aspect_balls: &[Var],
    segment_bias: Var,
    aspect_bias: Var,
) -> Result<Var> {
    let mut scores = Vec::with_capacity(aspect_balls.len());
    for (i, &a) in aspect_balls.iter().enumerate() {
        let d = geo::poincare_distance(t, segment_ball, a)?;
        let d2 = t.mul(d, d)?;
        let neg = t.neg(d2)?;
        let with_seg = t.add(neg, segment_bias)?;
        let b = t.index(aspect_bias, i)?;
        scores.push(t.add(with_seg, b)?);
    }
    t.concat(&scores)
}

/// `k_i = exp(β p_i − c)`; Einstein midpoint of the Klein images of the aspect
/// balls under weights `k_i`; back to the ball and through the log map. The
/// largest exponent is subtracted before `exp`, which cancels exactly.
pub fn hyperbolic_reconstruct(
    t: &mut Tape,
    scores: Var,
    aspect_balls: &[Var],
    beta: f64,
    shift: f64,
) -> Result<Var> {
    let scaled = t.scale(scores, beta)?;
    let shifted = t.offset(scaled, -shift)?;
    let top = t.value(shifted).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stable = t.offset(shifted, -top)?;
    let weights = t.exp(stable)?;
    let klein = aspect_balls
        .iter()
        .map(|&a| geo::poincare_to_klein(t, a))
        .collect::<Result<Vec<_>>>()?;
    let mid = geo::einstein_midpoint(t, &klein, weights)?;
    let ball = geo::klein_to_poincare(t, mid)?;
    geo::log_map_0(t, ball)
}

/// `g = softmax(−d(x_s, ball_k)/τ [+ noise])`, `s^r = Σ g_k s^{d_k}`.
/// Returns `(s^r, g)`.
pub fn refine(
    t: &mut Tape,
    segment_ball: Var,
    component_balls: &[Var],
    components: &[Var],
    tau: f64,
    noise: Option<&[f64]>,
) -> Result<(Var, Var)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let dists = component_balls
        .iter()
        .map(|&b| geo::poincare_distance(t, segment_ball, b))
        .collect::<Result<Vec<_>>>()?;
    let dists = t.concat(&dists)?;
    let mut logits = t.scale(dists, -1.0 / tau)?;
    if let Some(n) = noise {
        let n = t.constant(n.to_vec());
        logits = t.add(logits, n)?;
    }
    let g = t.softmax(logits)?;
    let s = t.lincomb(g, components)?;
    Ok((s, g))
}

/// Seed-count classifier: each aspect scores the quality-weighted number of
/// its seed words present. No hits at all means the general aspect.
pub fn teacher_predict(tokens: &[usize], lexicon: &SeedLexicon, teacher: &TeacherState) -> Vec<f64> {
    let k = lexicon.num_aspects();
    let mut scores = vec![0.0; k];
    for (i, score) in scores.iter_mut().enumerate() {
        for (j, &seed) in lexicon.seeds(i).iter().enumerate() {
            let hits = tokens.iter().filter(|&&t| t == seed).count();
            *score += teacher.quality[i][j] * hits as f64;
        }
    }
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter_mut().for_each(|s| *s /= total);
    } else {
        scores[lexicon.general()] = 1.0;
    }
    scores
}

// Plain-vector entry points. Each builds a throwaway tape.

fn constants(t: &mut Tape, rows: &[Vec<f64>]) -> Vec<Var> {
    rows.iter().map(|r| t.constant(r.clone())).collect()
}

/// Attention-weighted segment vector and its word weights.
pub fn encode_segment_vector(words: &[Vec<f64>], attention: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = words.first().map_or(0, Vec::len);
    let mut t = Tape::new();
    let w = constants(&mut t, words);
    let m = t.constant(attention.to_vec());
    let (v, c) = attention_encode(&mut t, &w, m, d)?;
    Ok((t.value(v).to_vec(), t.value(c).to_vec()))
}

pub fn seed_attention_weights(v_s: &[f64], seeds: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let v = t.constant(v_s.to_vec());
    let s = constants(&mut t, seeds);
    let z = seed_weights(&mut t, v, &s, SeedWeighting::Softmax)?;
    Ok(t.value(z).to_vec())
}

/// Rows `a_i = Σ_j z_ij s_ij`.
pub fn build_aspect_matrix(seeds: &[Vec<Vec<f64>>], z: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut t = Tape::new();
    seeds
        .iter()
        .zip(z)
        .map(|(s, zi)| {
            let s = constants(&mut t, s);
            let w = t.constant(zi.clone());
            let a = t.lincomb(w, &s)?;
            Ok(t.value(a).to_vec())
        })
        .collect()
}

pub fn euclidean_classify(v_s: &[f64], weight: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let v = t.constant(v_s.to_vec());
    let w = t.constant(weight.to_vec());
    let b = t.constant(bias.to_vec());
    let logits = euclidean_logits(&mut t, v, w, b, bias.len(), v_s.len())?;
    let p = t.softmax(logits)?;
    Ok(t.value(p).to_vec())
}

/// Scores from tangent-space inputs (both sides go through the exp map).
pub fn hyperbolic_scores_plain(
    v_s: &[f64],
    aspects: &[Vec<f64>],
    segment_bias: f64,
    aspect_bias: &[f64],
) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let v = t.constant(v_s.to_vec());
    let v_ball = geo::exp_map_0(&mut t, v)?;
    let balls = constants(&mut t, aspects)
        .into_iter()
        .map(|a| geo::exp_map_0(&mut t, a))
        .collect::<Result<Vec<_>>>()?;
    let sb = t.constant_scalar(segment_bias);
    let ab = t.constant(aspect_bias.to_vec());
    let s = hyperbolic_scores(&mut t, v_ball, &balls, sb, ab)?;
    Ok(t.value(s).to_vec())
}

pub fn score_softmax(scores: &[f64]) -> Vec<f64> {
    crate::diffgraph::softmax(scores)
}

/// Reconstruction from tangent-space aspect rows.
pub fn hyperbolic_reconstruct_plain(scores: &[f64], aspects: &[Vec<f64>], beta: f64, shift: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta {beta} must be positive")));
    }
    let mut t = Tape::new();
    let s = t.constant(scores.to_vec());
    let balls = constants(&mut t, aspects)
        .into_iter()
        .map(|a| geo::exp_map_0(&mut t, a))
        .collect::<Result<Vec<_>>>()?;
    let r = hyperbolic_reconstruct(&mut t, s, &balls, beta, shift)?;
    Ok(t.value(r).to_vec())
}

/// `r_s = Aᵀ p`.
pub fn euclidean_reconstruct(probs: &[f64], aspects: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let p = t.constant(probs.to_vec());
    let a = constants(&mut t, aspects);
    let r = t.lincomb(p, &a)?;
    Ok(t.value(r).to_vec())
}

/// Refined seed vector and component weights for a tangent segment vector.
pub fn refine_seed(
    v_s: &[f64],
    components: &[Vec<f64>],
    tau: f64,
    distance: RefineDistance,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut t = Tape::new();
    let v = t.constant(v_s.to_vec());
    let c = constants(&mut t, components);
    let map = |t: &mut Tape, x: Var| match distance {
        RefineDistance::Exp => geo::exp_map_0(t, x),
        RefineDistance::Raw => geo::project_to_ball(t, x, BALL_EPS),
    };
    let vb = map(&mut t, v)?;
    let cb = c.iter().map(|&x| map(&mut t, x)).collect::<Result<Vec<_>>>()?;
    let (s, g) = refine(&mut t, vb, &cb, &c, tau, None)?;
    Ok((t.value(s).to_vec(), t.value(g).to_vec()))
}
