//! Objectives, optimizer and the training loop.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{sample_negatives, EmbeddingTable, SeedLexicon, Segment, Vocabulary};
use crate::diffgraph::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::diff as geo;
use crate::kv;
use crate::model::{
    teacher_predict, AspectModel, Forward, Mode, ModelConfig, RefineDistance,
    SeedWeighting, TeacherState,
};

/// Added inside the logarithm of the distillation cross-entropy.
pub const LOG_EPS: f64 = 1e-12;
/// Lower bound on a seed's teacher quality.
pub const QUALITY_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negative segments per reconstruction hinge.
    pub negatives: usize,
    /// Weight of the distillation term.
    pub lambda: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub tau: f64,
    /// Disentangled components per seed word.
    pub components: usize,
    pub beta: f64,
    pub shift: f64,
    /// Standard deviation of the component initialisation noise.
    pub sigma: f64,
    pub ratio_d1: f64,
    pub ratio_d2: f64,
    pub ratio_d3: f64,
    pub mode: Mode,
    pub seed: u64,
    pub seed_weighting: SeedWeighting,
    pub refine_distance: RefineDistance,
    pub gumbel_noise: bool,
    pub train_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            epochs: 10,
            batch_size: 50,
            negatives: 10,
            lambda: 5.0,
            d1: 8.0,
            d2: 64.0,
            d3: 16.0,
            tau: 0.1,
            components: 4,
            beta: 0.01,
            shift: 0.0,
            sigma: 1.0,
            ratio_d1: 1.0,
            ratio_d2: 1.0,
            ratio_d3: 1.0,
            mode: Mode::Disentangled,
            seed: 0,
            seed_weighting: SeedWeighting::Softmax,
            refine_distance: RefineDistance::Exp,
            gumbel_noise: false,
            train_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn from_kv(text: &str, origin: &Path) -> Result<Self> {
        let mut c = Self::default();
        for e in kv::parse(text, origin)? {
            let o = origin;
            match e.key.as_str() {
                "learning_rate" => c.learning_rate = kv::value(&e, o)?,
                "epochs" => c.epochs = kv::value(&e, o)?,
                "batch_size" => c.batch_size = kv::value(&e, o)?,
                "negatives" => c.negatives = kv::value(&e, o)?,
                "lambda" => c.lambda = kv::value(&e, o)?,
                "d1" => c.d1 = kv::value(&e, o)?,
                "d2" => c.d2 = kv::value(&e, o)?,
                "d3" => c.d3 = kv::value(&e, o)?,
                "tau" => c.tau = kv::value(&e, o)?,
                "components" => c.components = kv::value(&e, o)?,
                "beta" => c.beta = kv::value(&e, o)?,
                "shift" => c.shift = kv::value(&e, o)?,
                "sigma" => c.sigma = kv::value(&e, o)?,
                "ratio_d1" => c.ratio_d1 = kv::value(&e, o)?,
                "ratio_d2" => c.ratio_d2 = kv::value(&e, o)?,
                "ratio_d3" => c.ratio_d3 = kv::value(&e, o)?,
                "mode" => c.mode = kv::value(&e, o)?,
                "seed" => c.seed = kv::value(&e, o)?,
                "seed_weighting" => c.seed_weighting = kv::value(&e, o)?,
                "refine_distance" => c.refine_distance = kv::value(&e, o)?,
                "gumbel_noise" => c.gumbel_noise = kv::value(&e, o)?,
                "train_embeddings" => c.train_embeddings = kv::value(&e, o)?,
                _ => return Err(kv::unknown(&e, o)),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Inverse of [`TrainConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let f = kv::format_sig9;
        let lines = [
            format!("learning_rate = {}", f(self.learning_rate)),
            format!("epochs = {}", self.epochs),
            format!("batch_size = {}", self.batch_size),
            format!("negatives = {}", self.negatives),
            format!("lambda = {}", f(self.lambda)),
            format!("d1 = {}", f(self.d1)),
            format!("d2 = {}", f(self.d2)),
            format!("d3 = {}", f(self.d3)),
            format!("tau = {}", f(self.tau)),
            format!("components = {}", self.components),
            format!("beta = {}", f(self.beta)),
            format!("shift = {}", f(self.shift)),
            format!("sigma = {}", f(self.sigma)),
            format!("ratio_d1 = {}", f(self.ratio_d1)),
            format!("ratio_d2 = {}", f(self.ratio_d2)),
            format!("ratio_d3 = {}", f(self.ratio_d3)),
            format!("mode = {}", self.mode),
            format!("seed = {}", self.seed),
            format!("seed_weighting = {}", self.seed_weighting),
            format!("refine_distance = {}", self.refine_distance),
            format!("gumbel_noise = {}", self.gumbel_noise),
            format!("train_embeddings = {}", self.train_embeddings),
        ];
        lines.join("\n") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("tau", self.tau),
            ("beta", self.beta),
            ("sigma", self.sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        let nonneg = [
            ("lambda", self.lambda),
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
            ("ratio_d1", self.ratio_d1),
            ("ratio_d2", self.ratio_d2),
            ("ratio_d3", self.ratio_d3),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be non-negative")));
            }
        }
        if !self.shift.is_finite() {
            return Err(Error::Config(format!("shift = {} must be finite", self.shift)));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("components", self.components),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.d1 >= self.d2 {
            log::warn!("d1 = {} is not below d2 = {}", self.d1, self.d2);
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            beta: self.beta,
            shift: self.shift,
            tau: self.tau,
            seed_weighting: self.seed_weighting,
            refine_distance: self.refine_distance,
        }
    }

    pub fn total(&self, p: &LossParts) -> f64 {
        total_loss(p, self)
    }
}

/// The five loss terms of one step or epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub j_r: f64,
    pub j_d: f64,
    pub j_d1: f64,
    pub j_d2: f64,
    pub j_d3: f64,
}

/// `J_r + λ·J_d + r1·J_d1 + r2·J_d2 + r3·J_d3`.
pub fn total_loss(p: &LossParts, c: &TrainConfig) -> f64 {
    p.j_r + c.lambda * p.j_d + c.ratio_d1 * p.j_d1 + c.ratio_d2 * p.j_d2 + c.ratio_d3 * p.j_d3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    /// Per-step means over the epoch.
    pub parts: LossParts,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,J_r,J_d,J_d1,J_d2,J_d3,total";

pub fn format_loss_csv(reports: &[LossReport]) -> String {
    let f = kv::format_sig9;
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let p = &r.parts;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch,
            f(p.j_r),
            f(p.j_d),
            f(p.j_d1),
            f(p.j_d2),
            f(p.j_d3),
            f(r.total)
        ));
    }
    out
}

/// Loss terms over tape values. Distances take points already in the ball.
pub mod diff {
    use super::*;

    /// `Σ_n max(0, 1 − r·v_s + r·v_n)`.
    pub fn loss_reconstruction(t: &mut Tape, r: Var, v_s: Var, negatives: &[Var]) -> Result<Var> {
        let pos = t.dot(r, v_s)?;
        let margin = t.neg(pos)?;
        let margin = t.offset(margin, 1.0)?;
        let mut terms = Vec::with_capacity(negatives.len());
        for &n in negatives {
            let neg = t.dot(r, n)?;
            let h = t.add(margin, neg)?;
            terms.push(t.relu(h)?);
        }
        sum_scalars(t, &terms)
    }

    /// Smallest distance over all component pairs of two seed words.
    pub fn pairwise_min_semantic_distance(t: &mut Tape, a: &[Var], b: &[Var]) -> Result<Var> {
        let mut d = Vec::with_capacity(a.len() * b.len());
        for &x in a {
            for &y in b {
                d.push(geo::poincare_distance(t, x, y)?);
            }
        }
        let d = t.concat(&d)?;
        t.min(d)
    }

    /// `balls[i][j][k]`: ball image of component `k` of seed `j` of aspect `i`.
    pub fn loss_seed_dependence(t: &mut Tape, balls: &[Vec<Vec<Var>>], d1: f64) -> Result<Var> {
        let mut terms = Vec::new();
        for aspect in balls {
            for j in 0..aspect.len() {
                for jj in j + 1..aspect.len() {
                    let m = pairwise_min_semantic_distance(t, &aspect[j], &aspect[jj])?;
                    let h = t.offset(m, -d1)?;
                    terms.push(t.relu(h)?);
                }
            }
        }
        sum_scalars(t, &terms)
    }

    pub fn loss_semantic_independence(t: &mut Tape, balls: &[Vec<Vec<Var>>], d2: f64) -> Result<Var> {
        let mut terms = Vec::new();
        for comps in balls.iter().flatten() {
            for k in 0..comps.len() {
                for kk in k + 1..comps.len() {
                    let d = geo::poincare_distance(t, comps[k], comps[kk])?;
                    let h = t.neg(d)?;
                    let h = t.offset(h, d2)?;
                    terms.push(t.relu(h)?);
                }
            }
        }
        sum_scalars(t, &terms)
    }

    /// `aspect_balls[i]` is the ball image of aspect vector `a_i`.
    pub fn loss_aspect_scope(
        t: &mut Tape,
        balls: &[Vec<Vec<Var>>],
        aspect_balls: &[Var],
        d3: f64,
    ) -> Result<Var> {
        let mut terms = Vec::new();
        for (aspect, &a) in balls.iter().zip(aspect_balls) {
            for &c in aspect.iter().flatten() {
                let d = geo::poincare_distance(t, c, a)?;
                let h = t.offset(d, -d3)?;
                terms.push(t.relu(h)?);
            }
        }
        sum_scalars(t, &terms)
    }

    /// `−Σ_i teacher_i · ln(student_i + 1e-12)` for one segment.
    pub fn loss_distillation(t: &mut Tape, student: Var, teacher: &[f64]) -> Result<Var> {
        let shifted = t.offset(student, LOG_EPS)?;
        let logs = t.ln(shifted)?;
        let w = t.constant(teacher.to_vec());
        let ce = t.dot(w, logs)?;
        t.neg(ce)
    }

    pub struct PartVars {
        pub j_r: Var,
        pub j_d: Var,
        pub j_d1: Var,
        pub j_d2: Var,
        pub j_d3: Var,
    }

    pub fn total_loss(t: &mut Tape, p: &PartVars, c: &TrainConfig) -> Result<Var> {
        let parts = t.concat(&[p.j_r, p.j_d, p.j_d1, p.j_d2, p.j_d3])?;
        let w = t.constant(vec![1.0, c.lambda, c.ratio_d1, c.ratio_d2, c.ratio_d3]);
        t.dot(w, parts)
    }

    pub(crate) fn sum_scalars(t: &mut Tape, terms: &[Var]) -> Result<Var> {
        if terms.is_empty() {
            return Ok(t.constant_scalar(0.0));
        }
        let v = t.concat(terms)?;
        t.sum(v)
    }

    pub(crate) fn mean_scalars(t: &mut Tape, terms: &[Var]) -> Result<Var> {
        let s = sum_scalars(t, terms)?;
        t.scale(s, 1.0 / terms.len().max(1) as f64)
    }
}

// Plain-vector forms; vectors are in tangent space and are exp-mapped here.

fn exp_constants(t: &mut Tape, rows: &[Vec<f64>]) -> Result<Vec<Var>> {
    rows.iter()
        .map(|r| {
            let c = t.constant(r.clone());
            geo::exp_map_0(t, c)
        })
        .collect()
}

fn exp_bank(t: &mut Tape, bank: &[Vec<Vec<Vec<f64>>>]) -> Result<Vec<Vec<Vec<Var>>>> {
    bank.iter()
        .map(|a| a.iter().map(|s| exp_constants(t, s)).collect())
        .collect()
}

pub fn loss_reconstruction(r: &[f64], v_s: &[f64], negatives: &[Vec<f64>]) -> Result<f64> {
    let mut t = Tape::new();
    let r = t.constant(r.to_vec());
    let v = t.constant(v_s.to_vec());
    let n: Vec<Var> = negatives.iter().map(|x| t.constant(x.clone())).collect();
    let l = diff::loss_reconstruction(&mut t, r, v, &n)?;
    Ok(t.scalar(l))
}

pub fn pairwise_min_semantic_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let mut t = Tape::new();
    let a = exp_constants(&mut t, a)?;
    let b = exp_constants(&mut t, b)?;
    let m = diff::pairwise_min_semantic_distance(&mut t, &a, &b)?;
    Ok(t.scalar(m))
}

/// `bank[i][j][k]`: component `k` of seed `j` of aspect `i`, tangent space.
pub fn loss_seed_dependence(bank: &[Vec<Vec<Vec<f64>>>], d1: f64) -> Result<f64> {
    let mut t = Tape::new();
    let b = exp_bank(&mut t, bank)?;
    let l = diff::loss_seed_dependence(&mut t, &b, d1)?;
    Ok(t.scalar(l))
}

pub fn loss_semantic_independence(bank: &[Vec<Vec<Vec<f64>>>], d2: f64) -> Result<f64> {
    let mut t = Tape::new();
    let b = exp_bank(&mut t, bank)?;
    let l = diff::loss_semantic_independence(&mut t, &b, d2)?;
    Ok(t.scalar(l))
}

pub fn loss_aspect_scope(bank: &[Vec<Vec<Vec<f64>>>], aspects: &[Vec<f64>], d3: f64) -> Result<f64> {
    let mut t = Tape::new();
    let b = exp_bank(&mut t, bank)?;
    let a = exp_constants(&mut t, aspects)?;
    let l = diff::loss_aspect_scope(&mut t, &b, &a, d3)?;
    Ok(t.scalar(l))
}

/// Mean cross-entropy of student rows against teacher rows.
pub fn loss_distillation(student: &[Vec<f64>], teacher: &[Vec<f64>]) -> Result<f64> {
    if student.len() != teacher.len() || student.is_empty() {
        return Err(Error::Shape {
            op: "loss_distillation",
            expected: teacher.len().max(1),
            got: student.len(),
        });
    }
    let mut t = Tape::new();
    let mut terms = Vec::new();
    for (s, q) in student.iter().zip(teacher) {
        let s = t.constant(s.clone());
        terms.push(diff::loss_distillation(&mut t, s, q)?);
    }
    let l = diff::mean_scalars(&mut t, &terms)?;
    Ok(t.scalar(l))
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_params(params: &[&[f64]]) -> Self {
        Self::new(&params.iter().map(|p| p.len()).collect::<Vec<_>>())
    }
}

pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape {
            op: "adam_step",
            expected: state.first.len(),
            got: params.len(),
        });
    }
    state.step += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        if p.len() != g.len() || m.len() != g.len() {
            return Err(Error::Shape {
                op: "adam_step",
                expected: m.len(),
                got: g.len(),
            });
        }
        for j in 0..g.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Value and gradients of the objective on one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub parts: LossParts,
    pub total: f64,
    /// In [`AspectModel::parameters`] order.
    pub gradients: Vec<Vec<f64>>,
    /// Distance of the evaluation point from the nearest non-smooth point.
    pub nearest_kink: f64,
}

fn tag(term: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::NonFiniteLoss {
            term,
            epoch: 0,
            step: 0,
        },
        other => other,
    }
}

/// Forward and backward pass over `batch` (indices into `segments`), with
/// `negatives[b]` the negative indices drawn for `batch[b]`.
pub fn batch_objective(
    model: &AspectModel,
    config: &TrainConfig,
    teacher: &TeacherState,
    segments: &[Segment],
    batch: &[usize],
    negatives: &[Vec<usize>],
    gumbel: Option<ChaCha8Rng>,
) -> Result<BatchObjective> {
    if batch.len() != negatives.len() || batch.is_empty() {
        return Err(Error::Shape {
            op: "batch_objective",
            expected: batch.len().max(1),
            got: negatives.len(),
        });
    }
    let mut fwd = Forward::new(model, true);
    if let Some(rng) = gumbel {
        fwd = fwd.with_gumbel_noise(rng);
    }
    let disentangled = model.config.mode == Mode::Disentangled;
    let mut encoded: HashMap<usize, Var> = HashMap::new();
    let (mut jr, mut jd, mut jd3) = (Vec::new(), Vec::new(), Vec::new());

    for (&idx, negs) in batch.iter().zip(negatives) {
        let seg = &segments[idx];
        let out = fwd.segment(&seg.tokens).map_err(tag("J_r"))?;
        let mut neg_vars = Vec::with_capacity(negs.len());
        for &n in negs {
            let v = match encoded.get(&n) {
                Some(&v) => v,
                None => {
                    let v = fwd.encode(&segments[n].tokens).map_err(tag("J_r"))?.vector;
                    encoded.insert(n, v);
                    v
                }
            };
            neg_vars.push(v);
        }
        jr.push(
            diff::loss_reconstruction(&mut fwd.tape, out.reconstruction, out.vector, &neg_vars)
                .map_err(tag("J_r"))?,
        );
        let q = teacher_predict(&seg.tokens, &model.lexicon, teacher);
        jd.push(diff::loss_distillation(&mut fwd.tape, out.probs, &q).map_err(tag("J_d"))?);
        if disentangled {
            let balls = fwd.component_balls()?.clone();
            jd3.push(
                diff::loss_aspect_scope(&mut fwd.tape, &balls, &out.aspect_balls, config.d3)
                    .map_err(tag("J_d3"))?,
            );
        }
    }

    let t = &mut fwd.tape;
    // J_r and J_d3 are sums over segments; J_d is a batch mean.
    let j_r = diff::sum_scalars(t, &jr).map_err(tag("J_r"))?;
    let j_d = diff::mean_scalars(t, &jd).map_err(tag("J_d"))?;
    let j_d3 = diff::sum_scalars(t, &jd3).map_err(tag("J_d3"))?;
    let (j_d1, j_d2) = if disentangled {
        let balls = fwd.component_balls()?.clone();
        let t = &mut fwd.tape;
        (
            diff::loss_seed_dependence(t, &balls, config.d1).map_err(tag("J_d1"))?,
            diff::loss_semantic_independence(t, &balls, config.d2).map_err(tag("J_d2"))?,
        )
    } else {
        let t = &mut fwd.tape;
        (t.constant_scalar(0.0), t.constant_scalar(0.0))
    };
    let pv = diff::PartVars {
        j_r,
        j_d,
        j_d1,
        j_d2,
        j_d3,
    };
    let t = &mut fwd.tape;
    let total = diff::total_loss(t, &pv, config).map_err(tag("total"))?;
    let parts = LossParts {
        j_r: t.scalar(j_r),
        j_d: t.scalar(j_d),
        j_d1: t.scalar(j_d1),
        j_d2: t.scalar(j_d2),
        j_d3: t.scalar(j_d3),
    };
    let grads = t.backward(total)?;
    let gradients = fwd
        .params
        .ordered()
        .into_iter()
        .map(|v| grads.get_or_zeros(v, fwd.tape.value(v).len()))
        .collect();
    Ok(BatchObjective {
        parts,
        total: fwd.tape.scalar(total),
        gradients,
        nearest_kink: fwd.tape.nearest_kink(),
    })
}

/// Precision proxy per seed: the share of training segments containing the
/// seed on which the student predicts the seed's aspect. Seeds that never
/// occur keep their previous quality.
pub fn update_teacher_quality(
    teacher: &TeacherState,
    model: &AspectModel,
    segments: &[Segment],
) -> Result<TeacherState> {
    let lex = &model.lexicon;
    let mut where_seed: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for i in 0..lex.num_aspects() {
        for (j, &w) in lex.seeds(i).iter().enumerate() {
            where_seed.entry(w).or_default().push((i, j));
        }
    }
    let mut seen = teacher.quality.iter().map(|r| vec![0usize; r.len()]).collect::<Vec<_>>();
    let mut agree = seen.clone();
    for seg in segments {
        let mut present: Vec<(usize, usize)> = seg
            .tokens
            .iter()
            .filter_map(|t| where_seed.get(t))
            .flatten()
            .copied()
            .collect();
        if present.is_empty() {
            continue;
        }
        present.sort_unstable();
        present.dedup();
        let predicted = model.predict(&seg.tokens)?.aspect;
        for (i, j) in present {
            seen[i][j] += 1;
            if predicted == i {
                agree[i][j] += 1;
            }
        }
    }
    Ok(quality_from_counts(teacher, &seen, &agree))
}

/// `q = max(agree/seen, floor)`, unchanged where `seen` is zero.
pub fn quality_from_counts(prior: &TeacherState, seen: &[Vec<usize>], agree: &[Vec<usize>]) -> TeacherState {
    let quality = prior
        .quality
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &q)| match seen[i][j] {
                    0 => q,
                    n => (agree[i][j] as f64 / n as f64).max(QUALITY_FLOOR),
                })
                .collect()
        })
        .collect();
    TeacherState { quality }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: AspectModel,
    pub teacher: TeacherState,
    pub reports: Vec<LossReport>,
}

/// Builds a fresh model from `config.seed` and trains it on `segments`.
pub fn train(
    config: &TrainConfig,
    vocab: Vocabulary,
    embeddings: EmbeddingTable,
    lexicon: SeedLexicon,
    segments: &[Segment],
) -> Result<TrainingRun> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = AspectModel::new(
        config.model_config(),
        vocab,
        embeddings,
        lexicon,
        config.components,
        config.sigma,
        &mut rng,
    )?;
    model.train_embeddings = config.train_embeddings;
    train_model(config, model, segments, &mut rng)
}

/// Trains an existing model in place of [`train`]'s fresh one.
pub fn train_model(
    config: &TrainConfig,
    mut model: AspectModel,
    segments: &[Segment],
    rng: &mut ChaCha8Rng,
) -> Result<TrainingRun> {
    if segments.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 training segments, got {}",
            segments.len()
        )));
    }
    let k_n = config.negatives.min(segments.len() - 1);
    if k_n < config.negatives {
        log::warn!(
            "only {} other segments; drawing {k_n} negatives instead of {}",
            segments.len() - 1,
            config.negatives
        );
    }
    let mut teacher = TeacherState::uniform(&model.lexicon);
    let mut opt = OptimizerState::for_params(&model.parameters());
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mut reports = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut sum = LossParts::default();
        let mut steps = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let negatives = batch
                .iter()
                .map(|&i| sample_negatives(segments.len(), i, k_n, rng))
                .collect::<Result<Vec<_>>>()?;
            let gumbel = config
                .gumbel_noise
                .then(|| ChaCha8Rng::seed_from_u64(rng.next_u64()));
            let obj = batch_objective(&model, config, &teacher, segments, batch, &negatives, gumbel)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { term, .. } => Error::NonFiniteLoss {
                        term,
                        epoch,
                        step: step + 1,
                    },
                    other => other,
                })?;
            for (term, v) in [
                ("J_r", obj.parts.j_r),
                ("J_d", obj.parts.j_d),
                ("J_d1", obj.parts.j_d1),
                ("J_d2", obj.parts.j_d2),
                ("J_d3", obj.parts.j_d3),
            ] {
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        term,
                        epoch,
                        step: step + 1,
                    });
                }
            }
            adam_step(
                &mut model.parameters_mut(),
                &obj.gradients,
                &mut opt,
                config.learning_rate,
            )?;
            sum.j_r += obj.parts.j_r;
            sum.j_d += obj.parts.j_d;
            sum.j_d1 += obj.parts.j_d1;
            sum.j_d2 += obj.parts.j_d2;
            sum.j_d3 += obj.parts.j_d3;
            steps += 1;
        }
        let n = steps as f64;
        let parts = LossParts {
            j_r: sum.j_r / n,
            j_d: sum.j_d / n,
            j_d1: sum.j_d1 / n,
            j_d2: sum.j_d2 / n,
            j_d3: sum.j_d3 / n,
        };
        let report = LossReport {
            epoch,
            parts,
            total: total_loss(&parts, config),
        };
        log::info!(
            "epoch {epoch}: total {:.6} (J_r {:.4}, J_d {:.4}, J_d1 {:.4}, J_d2 {:.4}, J_d3 {:.4})",
            report.total,
            parts.j_r,
            parts.j_d,
            parts.j_d1,
            parts.j_d2,
            parts.j_d3
        );
        reports.push(report);
        if config.lambda > 0.0 {
            teacher = update_teacher_quality(&teacher, &model, segments)?;
        }
    }
    Ok(TrainingRun {
        model,
        teacher,
        reports,
    })
}
