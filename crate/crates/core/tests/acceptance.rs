//! Acceptance harness: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::time::{Duration, Instant};

use hdae::checkpoint::Checkpoint;
use hdae::corpus::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSpec};
use hdae::diffgraph::{gradient_check, Tape, Var};
use hdae::eval::{evaluate, micro_f1, MetricsReport};
use hdae::geometry::{self, diff as geo, BallPoint, KleinPoint, TangentVec};
use hdae::model::{argmax, teacher_predict, AspectModel, Mode, TeacherState};
use hdae::training::{batch_objective, diff as loss, train, TrainConfig, TrainingRun};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const ROUND_TRIP_TOL: f64 = 1e-9;
const TRIANGLE_TOL: f64 = 1e-9;
const MIDPOINT_TOL: f64 = 1e-10;
const GRAD_TOL: f64 = 1e-4;
const SHIFT_TOL: f64 = 1e-9;
const MIN_F1: f64 = 0.85;
const CHANCE: f64 = 0.20;
const CORPUS_SEED: u64 = 7;
const TRAIN_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if let Some(limit) = limit {
        if took > limit {
            o.pass = false;
            o.detail += &format!("; runtime {:.1}s over the {}s limit", took.as_secs_f64(), limit.as_secs());
        }
    }
    println!(
        "criterion {id} {name}: {} ({}; {:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    o.pass
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn with_norm(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    let v = gaussian(rng, d);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x * r / n).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Double-double arithmetic for the midpoint oracle.
#[derive(Clone, Copy)]
struct Dd(f64, f64);

impl Dd {
    fn from(x: f64) -> Self {
        Dd(x, 0.0)
    }
    fn two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let bb = s - a;
        Dd(s, (a - (s - bb)) + (b - bb))
    }
    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.0, o.0);
        let t = Dd::two_sum(self.1, o.1);
        let hi = Dd::two_sum(s.0, s.1 + t.0);
        Dd::two_sum(hi.0, hi.1 + t.1)
    }
    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }
    fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p);
        Dd::two_sum(p, e + self.0 * o.1 + self.1 * o.0)
    }
    fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.add(o.mul(Dd::from(q1)).neg());
        let q2 = r.0 / o.0;
        let r = r.add(o.mul(Dd::from(q2)).neg());
        let q3 = r.0 / o.0;
        Dd::two_sum(q1, q2).add(Dd::from(q3))
    }
    fn sqrt(self) -> Dd {
        let x = self.0.sqrt();
        // one Newton step in double-double
        let r = self.add(Dd::from(x).mul(Dd::from(x)).neg());
        Dd::two_sum(x, r.0 / (2.0 * x))
    }
}

/// `Σ w_i γ_i x_i / Σ w_i γ_i` with every operation in double-double.
fn midpoint_oracle(points: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let d = points[0].len();
    let mut num = vec![Dd::from(0.0); d];
    let mut den = Dd::from(0.0);
    for (x, &w) in points.iter().zip(weights) {
        let sq = x.iter().fold(Dd::from(0.0), |acc, &c| acc.add(Dd::from(c).mul(Dd::from(c))));
        let gamma = Dd::from(1.0).div(Dd::from(1.0).add(sq.neg()).sqrt());
        let wg = Dd::from(w).mul(gamma);
        den = den.add(wg);
        for (n, &c) in num.iter_mut().zip(x) {
            *n = n.add(wg.mul(Dd::from(c)));
        }
    }
    num.into_iter().map(|n| n.div(den).0).collect()
}

fn criterion_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut klein_err: f64 = 0.0;
    let mut exp_err: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(2..=8);
        let r = rng.random_range(0.0..0.999);
        let x = BallPoint::new(with_norm(&mut rng, d, r)).unwrap();
        let back = geometry::klein_to_poincare(&geometry::poincare_to_klein(&x));
        klein_err = klein_err.max(max_abs_diff(back.coords(), x.coords()));
        let t = rng.random_range(0.0..5.0);
        let v = TangentVec::new(with_norm(&mut rng, d, t)).unwrap();
        let back = geometry::log_map_0(&geometry::exp_map_0(&v));
        exp_err = exp_err.max(max_abs_diff(back.coords(), v.coords()));
    }
    let mut worst_triangle = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let d = rng.random_range(2..=8);
        let mut pt = || {
            let r = rng.random_range(0.0..0.99);
            let v = with_norm(&mut rng, d, r);
            BallPoint::new(v).unwrap()
        };
        let (x, y, z) = (pt(), pt(), pt());
        let excess = geometry::poincare_distance(&x, &z)
            - geometry::poincare_distance(&x, &y)
            - geometry::poincare_distance(&y, &z);
        worst_triangle = worst_triangle.max(excess);
    }
    let mut mid_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=5);
        let d = rng.random_range(2..=6);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let r = rng.random_range(0.0..0.99);
                with_norm(&mut rng, d, r)
            })
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..5.0)).collect();
        let klein: Vec<KleinPoint> = pts.iter().map(|p| KleinPoint::new(p.clone()).unwrap()).collect();
        let got = geometry::einstein_midpoint(&klein, &w).unwrap();
        mid_err = mid_err.max(max_abs_diff(got.coords(), &midpoint_oracle(&pts, &w)));
    }
    let pass = klein_err <= ROUND_TRIP_TOL
        && exp_err <= ROUND_TRIP_TOL
        && worst_triangle <= TRIANGLE_TOL
        && mid_err <= MIDPOINT_TOL;
    Outcome {
        pass,
        detail: format!(
            "Klein round trip {klein_err:.1e}, exp/log round trip {exp_err:.1e}, worst triangle excess {worst_triangle:.1e}, midpoint vs double-double {mid_err:.1e}"
        ),
    }
}

const K: usize = 3;
const N: usize = 2;
const I: usize = 2;
const D: usize = 4;

/// Distance of the evaluation point from any non-smooth point of `f`.
fn kink_distance(f: &dyn Fn(&mut Tape, Var) -> hdae::Result<Var>, x: &[f64]) -> f64 {
    let mut t = Tape::new();
    let p = t.param(x.to_vec());
    f(&mut t, p).unwrap();
    t.nearest_kink()
}

/// Ten smooth random points; returns the worst relative error.
fn check_term(rng: &mut ChaCha8Rng, len: usize, scale: f64, f: &dyn Fn(&mut Tape, Var) -> hdae::Result<Var>) -> f64 {
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    while accepted < 10 {
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-scale..scale)).collect();
        if kink_distance(f, &x) < 1e-3 {
            continue;
        }
        worst = worst.max(gradient_check(|t, p| f(t, p), &x, 1e-6).unwrap());
        accepted += 1;
    }
    worst
}

/// `[K][N][I]` exp-mapped slices of a flat component vector.
fn bank_balls(t: &mut Tape, x: Var) -> hdae::Result<Vec<Vec<Vec<Var>>>> {
    let mut out = Vec::new();
    for i in 0..K {
        let mut row = Vec::new();
        for j in 0..N {
            let mut comps = Vec::new();
            for k in 0..I {
                let s = t.slice(x, ((i * N + j) * I + k) * D, D)?;
                comps.push(geo::exp_map_0(t, s)?);
            }
            row.push(comps);
        }
        out.push(row);
    }
    Ok(out)
}

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        aspects: K,
        vocab_per_aspect: 10,
        shared_vocab: 8,
        seeds_per_aspect: N,
        segments: 60,
        dim: D,
        ..SyntheticSpec::default()
    }
}

/// Full objective at random parameters: reverse mode against central
/// differences over every parameter coordinate.
fn check_objective(rng: &mut ChaCha8Rng, corpus: &SyntheticCorpus) -> (f64, usize) {
    let cfg = TrainConfig {
        components: I,
        d1: 0.8,
        d2: 3.0,
        d3: 1.5,
        beta: 0.5,
        ..TrainConfig::default()
    };
    let segs = &corpus.dataset.train;
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    let mut skipped = 0;
    while accepted < 10 {
        let mut model = AspectModel::new(
            cfg.model_config(),
            corpus.vocab.clone(),
            corpus.embeddings.clone(),
            corpus.lexicon.clone(),
            I,
            0.5,
            rng,
        )
        .unwrap();
        for p in model.parameters_mut() {
            for x in p.iter_mut() {
                *x += rng.random_range(-0.2..0.2);
            }
        }
        let teacher = TeacherState {
            quality: (0..K).map(|i| (0..model.lexicon.seeds(i).len()).map(|_| rng.random_range(0.1..1.0)).collect()).collect(),
        };
        let batch: Vec<usize> = (0..4).map(|_| rng.random_range(0..segs.len())).collect();
        let negs: Vec<Vec<usize>> = batch
            .iter()
            .map(|&b| hdae::corpus::sample_negatives(segs.len(), b, 3, rng).unwrap())
            .collect();
        let eval = |m: &AspectModel| batch_objective(m, &cfg, &teacher, segs, &batch, &negs, None).unwrap();
        let base = eval(&model);
        if base.nearest_kink < 1e-3 {
            skipped += 1;
            continue;
        }
        let h = 1e-3;
        let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
        let mut pairs = Vec::new();
        for (pi, &len) in shapes.iter().enumerate() {
            for j in 0..len {
                let orig = model.parameters()[pi][j];
                let mut at = |x: f64| {
                    model.parameters_mut()[pi][j] = x;
                    eval(&model).total
                };
                // five-point stencil, O(h^4) truncation
                let numeric = (8.0 * (at(orig + h) - at(orig - h)) - (at(orig + 2.0 * h) - at(orig - 2.0 * h))) / (12.0 * h);
                model.parameters_mut()[pi][j] = orig;
                pairs.push((base.gradients[pi][j], numeric));
            }
        }
        // Coordinates far below the gradient's scale sit in difference noise,
        // so the denominator is floored at 1e-6 of the largest component.
        let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
        for (a, n) in pairs {
            worst = worst.max((a - n).abs() / n.abs().max(1e-6 * scale));
        }
        accepted += 1;
    }
    (worst, skipped)
}

fn criterion_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let comps = K * N * I * D;
    let mut results = Vec::new();

    let jr = |t: &mut Tape, x: Var| -> hdae::Result<Var> {
        let r = t.slice(x, 0, D)?;
        let v = t.slice(x, D, D)?;
        let negs = [t.slice(x, 2 * D, D)?, t.slice(x, 3 * D, D)?];
        loss::loss_reconstruction(t, r, v, &negs)
    };
    results.push(("J_r", check_term(&mut rng, 4 * D, 1.0, &jr)));

    let jd1 = |t: &mut Tape, x: Var| {
        let b = bank_balls(t, x)?;
        loss::loss_seed_dependence(t, &b, 0.8)
    };
    results.push(("J_d1", check_term(&mut rng, comps, 0.8, &jd1)));

    let jd2 = |t: &mut Tape, x: Var| {
        let b = bank_balls(t, x)?;
        loss::loss_semantic_independence(t, &b, 2.0)
    };
    results.push(("J_d2", check_term(&mut rng, comps, 0.8, &jd2)));

    let jd3 = |t: &mut Tape, x: Var| {
        let b = bank_balls(t, x)?;
        let mut aspects = Vec::new();
        for i in 0..K {
            let a = t.slice(x, comps + i * D, D)?;
            aspects.push(geo::exp_map_0(t, a)?);
        }
        loss::loss_aspect_scope(t, &b, &aspects, 1.0)
    };
    results.push(("J_d3", check_term(&mut rng, comps + K * D, 0.8, &jd3)));

    let teacher = [0.2, 0.5, 0.3];
    let jd = |t: &mut Tape, x: Var| {
        let p = t.softmax(x)?;
        loss::loss_distillation(t, p, &teacher)
    };
    results.push(("J_d", check_term(&mut rng, K, 2.0, &jd)));

    let corpus = generate_synthetic_corpus(&small_spec(), 3).unwrap();
    let (full, skipped) = check_objective(&mut rng, &corpus);
    results.push(("total", full));

    let pass = results.iter().all(|(_, e)| *e < GRAD_TOL);
    let detail = results
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        pass,
        detail: format!("max relative error: {detail}; {skipped} objective points resampled near kinks"),
    }
}

fn criterion_shift() -> Outcome {
    let spec = SyntheticSpec {
        segments: 300,
        ..small_spec()
    };
    let corpus = generate_synthetic_corpus(&spec, 5).unwrap();
    let run = |shift: f64| {
        let cfg = TrainConfig {
            shift,
            epochs: 2,
            components: I,
            seed: 9,
            ..TrainConfig::default()
        };
        train(&cfg, corpus.vocab.clone(), corpus.embeddings.clone(), corpus.lexicon.clone(), &corpus.dataset.train).unwrap()
    };
    let base = run(0.0);
    let mut worst_loss: f64 = 0.0;
    let mut worst_prob: f64 = 0.0;
    for c in [5.0, 17.0] {
        let other = run(c);
        for (a, b) in base.reports.iter().zip(&other.reports) {
            let pa = [a.parts.j_r, a.parts.j_d, a.parts.j_d1, a.parts.j_d2, a.parts.j_d3, a.total];
            let pb = [b.parts.j_r, b.parts.j_d, b.parts.j_d1, b.parts.j_d2, b.parts.j_d3, b.total];
            worst_loss = worst_loss.max(max_abs_diff(&pa, &pb));
        }
        for s in &corpus.dataset.test {
            let pa = base.model.predict(&s.tokens).unwrap().probs;
            let pb = other.model.predict(&s.tokens).unwrap().probs;
            worst_prob = worst_prob.max(max_abs_diff(&pa, &pb));
        }
    }
    Outcome {
        pass: worst_loss <= SHIFT_TOL && worst_prob <= SHIFT_TOL,
        detail: format!("c in {{0, 5, 17}}: max loss difference {worst_loss:.1e}, max probability difference {worst_prob:.1e}"),
    }
}

fn test_f1(run: &TrainingRun, corpus: &SyntheticCorpus) -> f64 {
    evaluate(&run.model, &corpus.dataset.test, false).unwrap().micro_f1
}

fn teacher_f1(corpus: &SyntheticCorpus) -> f64 {
    let q = TeacherState::uniform(&corpus.lexicon);
    let test = &corpus.dataset.test;
    let preds: Vec<usize> = test.iter().map(|s| argmax(&teacher_predict(&s.tokens, &corpus.lexicon, &q))).collect();
    let golds: Vec<usize> = test.iter().filter_map(|s| s.label).collect();
    micro_f1(&preds, &golds).unwrap()
}

struct SeedRuns {
    full: Vec<f64>,
    no_distill: Vec<f64>,
    euclidean: Vec<f64>,
    loss_drops: Vec<bool>,
    full_time: Duration,
}

fn synthetic_runs(corpus: &SyntheticCorpus) -> SeedRuns {
    let mut r = SeedRuns {
        full: Vec::new(),
        no_distill: Vec::new(),
        euclidean: Vec::new(),
        loss_drops: Vec::new(),
        full_time: Duration::ZERO,
    };
    let fit = |cfg: TrainConfig| {
        train(&cfg, corpus.vocab.clone(), corpus.embeddings.clone(), corpus.lexicon.clone(), &corpus.dataset.train).unwrap()
    };
    for seed in TRAIN_SEEDS {
        let start = Instant::now();
        let full = fit(TrainConfig {
            seed,
            ..TrainConfig::default()
        });
        r.full_time += start.elapsed();
        r.full.push(test_f1(&full, corpus));
        r.loss_drops.push(full.reports.last().unwrap().total < full.reports[0].total);
        let ablated = fit(TrainConfig {
            seed,
            lambda: 0.0,
            ..TrainConfig::default()
        });
        r.no_distill.push(test_f1(&ablated, corpus));
        let euclid = fit(TrainConfig {
            seed,
            mode: Mode::Euclidean,
            ..TrainConfig::default()
        });
        r.euclidean.push(test_f1(&euclid, corpus));
    }
    r
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_all(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn criterion_end_to_end(runs: &SeedRuns, teacher: f64) -> Outcome {
    let m = mean(&runs.full);
    let worst = runs.full.iter().copied().fold(f64::INFINITY, f64::min);
    let drops = runs.loss_drops.iter().all(|&d| d);
    let per_run = runs.full_time / TRAIN_SEEDS.len() as u32;
    let fast = per_run < Duration::from_secs(300);
    Outcome {
        pass: worst >= MIN_F1 && worst > teacher && worst > CHANCE && drops && fast,
        detail: format!(
            "test micro-F1 per seed {} for seeds {TRAIN_SEEDS:?} (min {worst:.3}, mean {m:.3}), teacher {teacher:.3}, chance {CHANCE:.2}, epoch-10 loss below epoch-1 in {}/{} runs, {:.1}s per training run",
            fmt_all(&runs.full),
            runs.loss_drops.iter().filter(|&&d| d).count(),
            runs.loss_drops.len(),
            per_run.as_secs_f64()
        ),
    }
}

fn criterion_ablation(runs: &SeedRuns) -> Outcome {
    let wins = |other: &[f64]| runs.full.iter().zip(other).filter(|(f, o)| f > o).count();
    let (w_lambda, w_euclid) = (wins(&runs.no_distill), wins(&runs.euclidean));
    let gap_lambda = mean(&runs.full) - mean(&runs.no_distill);
    let gap_euclid = mean(&runs.full) - mean(&runs.euclidean);
    Outcome {
        pass: gap_lambda >= 0.0 && gap_euclid >= 0.0 && w_lambda >= 4 && w_euclid >= 4,
        detail: format!(
            "full {:.3} [{}], lambda=0 {:.3} [{}], euclidean {:.3} [{}]; gaps {gap_lambda:+.3} / {gap_euclid:+.3}; full strictly better in {w_lambda}/5 and {w_euclid}/5 seeds",
            mean(&runs.full),
            fmt_all(&runs.full),
            mean(&runs.no_distill),
            fmt_all(&runs.no_distill),
            mean(&runs.euclidean),
            fmt_all(&runs.euclidean)
        ),
    }
}

fn criterion_teacher(corpus: &SyntheticCorpus) -> Outcome {
    let lex = &corpus.lexicon;
    let seeds: Vec<usize> = (0..lex.num_aspects()).flat_map(|i| lex.seeds(i).to_vec()).collect();
    let pool: Vec<usize> = (0..corpus.vocab.len()).filter(|w| !seeds.contains(w)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let q = TeacherState::uniform(lex);
    let general = lex.general();
    let mut hits = 0;
    for _ in 0..100 {
        let len = rng.random_range(1..=12);
        let tokens: Vec<usize> = (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        let p = teacher_predict(&tokens, lex, &q);
        if argmax(&p) == general && p[general] == 1.0 {
            hits += 1;
        }
    }
    Outcome {
        pass: hits == 100,
        detail: format!("{hits}/100 seedless segments predicted one-hot general"),
    }
}

fn criterion_determinism() -> Outcome {
    let spec = SyntheticSpec {
        segments: 400,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, CORPUS_SEED).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        seed: 3,
        gumbel_noise: true,
        ..TrainConfig::default()
    };
    let once = || -> (String, MetricsReport) {
        let run = train(&cfg, corpus.vocab.clone(), corpus.embeddings.clone(), corpus.lexicon.clone(), &corpus.dataset.train).unwrap();
        let metrics = evaluate(&run.model, &corpus.dataset.test, false).unwrap();
        let json = Checkpoint::new(run.model, Some(cfg.clone()), Some(run.teacher)).to_json().unwrap();
        (json, metrics)
    };
    let (a, ma) = once();
    let (b, mb) = once();
    let reloaded = Checkpoint::from_json(&a).unwrap();
    let mc = evaluate(&reloaded.model, &corpus.dataset.test, false).unwrap();
    let pass = a == b && ma == mb && ma == mc;
    Outcome {
        pass,
        detail: format!(
            "checkpoints {} ({} bytes), metrics {}, reloaded metrics {}",
            if a == b { "identical" } else { "differ" },
            a.len(),
            if ma == mb { "identical" } else { "differ" },
            if ma == mc { "identical" } else { "differ" }
        ),
    }
}

fn main() {
    let mut all = true;
    all &= report(1, "geometry suite", Some(Duration::from_secs(10)), criterion_geometry);
    all &= report(2, "gradient suite", Some(Duration::from_secs(60)), criterion_gradients);
    all &= report(3, "reconstruction shift invariance", None, criterion_shift);

    let spec = SyntheticSpec::default();
    let corpus = generate_synthetic_corpus(&spec, CORPUS_SEED).unwrap();
    assert_eq!((spec.aspects, spec.segments, spec.noise_rate), (5, 2000, 0.2));
    let teacher = teacher_f1(&corpus);
    let runs = synthetic_runs(&corpus);
    all &= report(4, "synthetic end-to-end", None, || criterion_end_to_end(&runs, teacher));
    all &= report(5, "ablation direction", None, || criterion_ablation(&runs));
    all &= report(6, "teacher general fallback", None, || criterion_teacher(&corpus));
    all &= report(7, "determinism", None, criterion_determinism);

    if !all {
        std::process::exit(1);
    }
}
