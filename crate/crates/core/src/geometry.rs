//! Poincaré ball and Klein disk primitives at curvature −1.
//!
//! Plain `f64` versions live at the top level; [`diff`] records the same
//! formulas on a [`Tape`](crate::diffgraph::Tape) so they can be
//! differentiated.

use crate::error::{Error, Result};

/// Points are kept at least this far inside the unit sphere.
pub const BALL_EPS: f64 = 1e-5;

/// Floor applied to the arcosh argument to absorb rounding below one. Exactly
/// one, so coincident points sit at distance zero.
pub const ACOSH_FLOOR: f64 = 1.0;

/// Largest tangent norm whose exponential image stays within `1 - BALL_EPS`.
pub fn max_tangent_norm() -> f64 {
    (1.0 - BALL_EPS).atanh()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_inside(v: &[f64], what: &'static str) -> Result<()> {
    check_finite(v, what)?;
    let norm = sq_norm(v).sqrt();
    if norm >= 1.0 {
        return Err(Error::OutsideBall { norm });
    }
    Ok(())
}

macro_rules! coords_type {
    ($name:ident, $check:expr, $what:literal) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(coords: Vec<f64>) -> Result<Self> {
                $check(&coords, $what)?;
                Ok(Self(coords))
            }

            pub fn coords(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn norm(&self) -> f64 {
                sq_norm(&self.0).sqrt()
            }
        }
    };
}

coords_type!(BallPoint, check_inside, "ball point");
coords_type!(KleinPoint, check_inside, "Klein point");
coords_type!(TangentVec, check_finite, "tangent vector");

/// Rescales `v` onto the sphere of radius `1 - eps` when it lies outside it.
pub fn project_to_ball(v: &[f64], eps: f64) -> Result<BallPoint> {
    check_finite(v, "project_to_ball")?;
    let limit = 1.0 - eps;
    let norm = sq_norm(v).sqrt();
    if norm <= limit {
        return Ok(BallPoint(v.to_vec()));
    }
    Ok(BallPoint(v.iter().map(|x| x * limit / norm).collect()))
}

pub fn poincare_distance(x: &BallPoint, y: &BallPoint) -> f64 {
    let diff: f64 = x.0.iter().zip(&y.0).map(|(a, b)| (a - b) * (a - b)).sum();
    let den = (1.0 - sq_norm(&x.0)) * (1.0 - sq_norm(&y.0));
    (1.0 + 2.0 * diff / den).max(ACOSH_FLOOR).acosh()
}

/// Exponential map at the origin. Tangent norms beyond [`max_tangent_norm`]
/// are capped so the image keeps the `1 - BALL_EPS` margin.
pub fn exp_map_0(v: &TangentVec) -> BallPoint {
    let n = v.norm();
    if n == 0.0 {
        return BallPoint(v.0.clone());
    }
    let scale = n.min(max_tangent_norm()).tanh() / n;
    BallPoint(v.0.iter().map(|x| x * scale).collect())
}

pub fn log_map_0(x: &BallPoint) -> TangentVec {
    let r = x.norm();
    if r == 0.0 {
        return TangentVec(x.0.clone());
    }
    let scale = r.atanh() / r;
    TangentVec(x.0.iter().map(|a| a * scale).collect())
}

pub fn poincare_to_klein(x: &BallPoint) -> KleinPoint {
    let den = 1.0 + sq_norm(&x.0);
    KleinPoint(x.0.iter().map(|a| 2.0 * a / den).collect())
}

pub fn klein_to_poincare(x: &KleinPoint) -> BallPoint {
    let den = 1.0 + (1.0 - sq_norm(&x.0)).sqrt();
    BallPoint(x.0.iter().map(|a| a / den).collect())
}

pub fn lorentz_factor(x: &KleinPoint) -> f64 {
    1.0 / (1.0 - sq_norm(&x.0)).sqrt()
}

/// Lorentz-factor weighted average of Klein points.
pub fn einstein_midpoint(points: &[KleinPoint], weights: &[f64]) -> Result<KleinPoint> {
    if points.len() != weights.len() {
        return Err(Error::Shape {
            op: "einstein_midpoint",
            expected: points.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("midpoint weights must be finite and nonnegative".into()));
    }
    let dim = points.first().map_or(0, KleinPoint::dim);
    let scaled: Vec<f64> = points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * lorentz_factor(p))
        .collect();
    let total: f64 = scaled.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("midpoint weights are all zero".into()));
    }
    let mut out = vec![0.0; dim];
    for (p, s) in points.iter().zip(&scaled) {
        if p.dim() != dim {
            return Err(Error::Shape {
                op: "einstein_midpoint",
                expected: dim,
                got: p.dim(),
            });
        }
        for (o, x) in out.iter_mut().zip(&p.0) {
            *o += s / total * x;
        }
    }
    KleinPoint::new(out)
}

/// Distance between the exponential images of two tangent vectors.
pub fn dist_exp(u: &TangentVec, v: &TangentVec) -> f64 {
    poincare_distance(&exp_map_0(u), &exp_map_0(v))
}

/// Differentiable versions of the maps above.
pub mod diff {
    use super::{max_tangent_norm, ACOSH_FLOOR};
    use crate::diffgraph::{Tape, Var};
    use crate::error::Result;

    /// Rescales onto radius `1 - eps` when outside it.
    pub fn project_to_ball(t: &mut Tape, v: Var, eps: f64) -> Result<Var> {
        let n = t.norm(v)?;
        let limit = 1.0 - eps;
        if t.scalar(n) <= limit {
            return Ok(v);
        }
        let num = t.constant_scalar(limit);
        let factor = t.div(num, n)?;
        t.mul_scalar(v, factor)
    }

    pub fn exp_map_0(t: &mut Tape, v: Var) -> Result<Var> {
        let n = t.norm(v)?;
        let limit = max_tangent_norm();
        let capped = t.clamp(n, f64::NEG_INFINITY, limit)?;
        let factor = if t.scalar(n) <= limit {
            t.tanh_ratio(capped)?
        } else {
            let num = t.constant_scalar(limit.tanh());
            t.div(num, n)?
        };
        t.mul_scalar(v, factor)
    }

    pub fn log_map_0(t: &mut Tape, x: Var) -> Result<Var> {
        let r = t.norm(x)?;
        let factor = t.atanh_ratio(r)?;
        t.mul_scalar(x, factor)
    }

    pub fn poincare_distance(t: &mut Tape, x: Var, y: Var) -> Result<Var> {
        let diff = t.sub(x, y)?;
        let num = t.sq_norm(diff)?;
        let den = {
            let nx = t.sq_norm(x)?;
            let ny = t.sq_norm(y)?;
            let ax = one_minus(t, nx)?;
            let ay = one_minus(t, ny)?;
            t.mul(ax, ay)?
        };
        let ratio = t.div(num, den)?;
        let arg = t.scale(ratio, 2.0)?;
        let arg = t.offset(arg, 1.0)?;
        let arg = t.clamp(arg, ACOSH_FLOOR, f64::INFINITY)?;
        t.acosh(arg)
    }

    pub fn poincare_to_klein(t: &mut Tape, x: Var) -> Result<Var> {
        let s = t.sq_norm(x)?;
        let den = t.offset(s, 1.0)?;
        let twice = t.scale(x, 2.0)?;
        t.div_scalar(twice, den)
    }

    pub fn klein_to_poincare(t: &mut Tape, x: Var) -> Result<Var> {
        let s = t.sq_norm(x)?;
        let rest = one_minus(t, s)?;
        let root = t.sqrt(rest)?;
        let den = t.offset(root, 1.0)?;
        t.div_scalar(x, den)
    }

    pub fn lorentz_factor(t: &mut Tape, x: Var) -> Result<Var> {
        let s = t.sq_norm(x)?;
        let rest = one_minus(t, s)?;
        let root = t.sqrt(rest)?;
        let one = t.constant_scalar(1.0);
        t.div(one, root)
    }

    /// `weights` is a length-`points.len()` node of nonnegative weights.
    pub fn einstein_midpoint(t: &mut Tape, points: &[Var], weights: Var) -> Result<Var> {
        let gammas = points
            .iter()
            .map(|&p| lorentz_factor(t, p))
            .collect::<Result<Vec<_>>>()?;
        let gammas = t.concat(&gammas)?;
        let w = t.mul(weights, gammas)?;
        let total = t.sum(w)?;
        let normalized = t.div_scalar(w, total)?;
        t.lincomb(normalized, points)
    }

    pub fn dist_exp(t: &mut Tape, u: Var, v: Var) -> Result<Var> {
        let x = exp_map_0(t, u)?;
        let y = exp_map_0(t, v)?;
        poincare_distance(t, x, y)
    }

    fn one_minus(t: &mut Tape, s: Var) -> Result<Var> {
        let n = t.neg(s)?;
        t.offset(n, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::{gradient_check, Tape};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball(v: &[f64]) -> BallPoint {
        BallPoint::new(v.to_vec()).unwrap()
    }
    fn klein(v: &[f64]) -> KleinPoint {
        KleinPoint::new(v.to_vec()).unwrap()
    }
    fn tangent(v: &[f64]) -> TangentVec {
        TangentVec::new(v.to_vec()).unwrap()
    }

    fn random_ball(rng: &mut impl Rng, dim: usize, max_norm: f64) -> BallPoint {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = sq_norm(&v).sqrt().max(1e-12);
        let r = rng.random_range(0.0..max_norm);
        ball(&v.iter().map(|x| x / n * r).collect::<Vec<_>>())
    }

    #[test]
    fn project_examples() {
        assert_eq!(project_to_ball(&[0.0, 0.0], 1e-5).unwrap().coords(), &[0.0, 0.0]);
        assert_eq!(project_to_ball(&[2.0, 0.0], 1e-5).unwrap().coords(), &[0.99999, 0.0]);
        assert_eq!(project_to_ball(&[0.3, 0.4], 1e-5).unwrap().coords(), &[0.3, 0.4]);
        assert!(project_to_ball(&[f64::NAN, 0.0], 1e-5).is_err());
    }

    #[test]
    fn ball_rejects_boundary() {
        assert!(matches!(BallPoint::new(vec![1.0, 0.0]), Err(Error::OutsideBall { .. })));
        assert!(KleinPoint::new(vec![0.6, 0.8]).is_err());
        assert!(TangentVec::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn distance_examples() {
        let x = ball(&[0.2, -0.1]);
        assert_eq!(poincare_distance(&x, &x), 0.0);
        // 2 artanh(0.5) = ln 3
        let d = poincare_distance(&ball(&[0.0, 0.0]), &ball(&[0.5, 0.0]));
        assert_abs_diff_eq!(d, 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(d, 1.098612, epsilon = 1e-6);
    }

    #[test]
    fn exp_log_examples() {
        assert_eq!(exp_map_0(&tangent(&[0.0, 0.0])).coords(), &[0.0, 0.0]);
        let e = exp_map_0(&tangent(&[1.0, 0.0]));
        assert_abs_diff_eq!(e.coords()[0], 0.761594, epsilon = 1e-6);
        assert_eq!(log_map_0(&ball(&[0.0, 0.0])).coords(), &[0.0, 0.0]);
        let l = log_map_0(&ball(&[1f64.tanh(), 0.0]));
        assert_abs_diff_eq!(l.coords()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exp_map_caps_large_tangents() {
        let e = exp_map_0(&tangent(&[40.0, 0.0]));
        assert_abs_diff_eq!(e.norm(), 1.0 - BALL_EPS, epsilon = 1e-15);
    }

    #[test]
    fn klein_examples() {
        assert_eq!(poincare_to_klein(&ball(&[0.0, 0.0])).coords(), &[0.0, 0.0]);
        let k = poincare_to_klein(&ball(&[0.6, 0.0]));
        assert_abs_diff_eq!(k.coords()[0], 1.2 / 1.36, epsilon = 1e-15);
        let p = klein_to_poincare(&k);
        assert_abs_diff_eq!(p.coords()[0], 0.6, epsilon = 1e-15);
        assert_eq!(klein_to_poincare(&klein(&[0.0, 0.0])).coords(), &[0.0, 0.0]);
    }

    #[test]
    fn lorentz_examples() {
        assert_eq!(lorentz_factor(&klein(&[0.0, 0.0])), 1.0);
        assert_abs_diff_eq!(lorentz_factor(&klein(&[0.6, 0.0])), 1.25, epsilon = 1e-15);
        assert!(lorentz_factor(&klein(&[0.8, 0.0])) > lorentz_factor(&klein(&[0.6, 0.0])));
    }

    #[test]
    fn midpoint_examples() {
        let single = einstein_midpoint(&[klein(&[0.3, -0.2])], &[4.0]).unwrap();
        assert_abs_diff_eq!(single.coords()[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(single.coords()[1], -0.2, epsilon = 1e-15);

        let sym = einstein_midpoint(&[klein(&[0.5, 0.0]), klein(&[-0.5, 0.0])], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(sym.norm(), 0.0, epsilon = 1e-15);

        let m = einstein_midpoint(&[klein(&[0.5, 0.0]), klein(&[0.0, 0.5])], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(m.coords()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(m.coords()[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn midpoint_errors() {
        let pts = [klein(&[0.5, 0.0]), klein(&[0.0, 0.5])];
        assert!(einstein_midpoint(&pts, &[0.0, 0.0]).is_err());
        assert!(einstein_midpoint(&pts, &[1.0]).is_err());
        assert!(einstein_midpoint(&pts, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn dist_exp_examples() {
        let u = tangent(&[0.3, 0.1]);
        assert_eq!(dist_exp(&u, &u), 0.0);
        let d = dist_exp(&tangent(&[0.0, 0.0]), &tangent(&[0.5f64.atanh(), 0.0]));
        assert_abs_diff_eq!(d, 1.098612, epsilon = 1e-6);
    }

    #[test]
    fn triangle_inequality_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = random_ball(&mut rng, 3, 0.99);
            let y = random_ball(&mut rng, 3, 0.99);
            let z = random_ball(&mut rng, 3, 0.99);
            let lhs = poincare_distance(&x, &z);
            let rhs = poincare_distance(&x, &y) + poincare_distance(&y, &z);
            assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn separated_points_have_positive_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let x = random_ball(&mut rng, 4, 0.9);
            let y = random_ball(&mut rng, 4, 0.9);
            if (x.norm() - y.norm()).abs() >= 1e-6 {
                assert!(poincare_distance(&x, &y) > 0.0);
            }
        }
    }

    #[test]
    fn tape_versions_agree_with_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            let mut t = Tape::new();
            let (a, b) = (t.constant(u.clone()), t.constant(v.clone()));
            let d = diff::dist_exp(&mut t, a, b).unwrap();
            assert_abs_diff_eq!(t.scalar(d), dist_exp(&tangent(&u), &tangent(&v)), epsilon = 1e-12);

            let x = diff::exp_map_0(&mut t, a).unwrap();
            let k = diff::poincare_to_klein(&mut t, x).unwrap();
            let back = diff::klein_to_poincare(&mut t, k).unwrap();
            let l = diff::log_map_0(&mut t, back).unwrap();
            for (p, q) in t.value(l).iter().zip(&u) {
                assert_abs_diff_eq!(p, q, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-0.4..0.4)).collect();
            let err = gradient_check(
                |t, p| {
                    let a = t.slice(p, 0, 3)?;
                    let b = t.slice(p, 3, 3)?;
                    diff::poincare_distance(t, a, b)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "distance: {err}");

            let err = gradient_check(
                |t, p| {
                    let e = diff::exp_map_0(t, p)?;
                    let w = t.constant(vec![0.3, -0.7, 1.1, 0.2, 0.5, -0.4]);
                    t.dot(e, w)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "exp map: {err}");

            let err = gradient_check(
                |t, p| {
                    let a = t.slice(p, 0, 2)?;
                    let b = t.slice(p, 2, 2)?;
                    let c = t.slice(p, 4, 2)?;
                    let w = t.constant(vec![0.5, 1.5, 1.0]);
                    let m = diff::einstein_midpoint(t, &[a, b, c], w)?;
                    let probe = t.constant(vec![0.8, -0.6]);
                    t.dot(m, probe)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "midpoint: {err}");
        }
    }

    #[test]
    fn tape_projection_matches_plain() {
        for v in [vec![0.3, 0.4], vec![2.0, 0.0], vec![-3.0, 4.0]] {
            let mut t = Tape::new();
            let x = t.constant(v.clone());
            let p = diff::project_to_ball(&mut t, x, BALL_EPS).unwrap();
            assert_eq!(t.value(p), project_to_ball(&v, BALL_EPS).unwrap().coords());
        }
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(
            a in proptest::collection::vec(-0.5f64..0.5, 3),
            b in proptest::collection::vec(-0.5f64..0.5, 3),
        ) {
            let (x, y) = (ball(&a), ball(&b));
            prop_assert_eq!(poincare_distance(&x, &y), poincare_distance(&y, &x));
        }

        #[test]
        fn exp_norm_is_tanh(v in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let t = tangent(&v);
            prop_assert!((exp_map_0(&t).norm() - t.norm().tanh()).abs() < 1e-12);
        }

        #[test]
        fn log_inverts_exp(v in proptest::collection::vec(-1.7f64..1.7, 3)) {
            let t = tangent(&v);
            prop_assume!(t.norm() <= 3.0);
            let back = log_map_0(&exp_map_0(&t));
            for (p, q) in back.coords().iter().zip(&v) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn klein_round_trip(v in proptest::collection::vec(-0.57f64..0.57, 3)) {
            let x = ball(&v);
            let k = poincare_to_klein(&x);
            prop_assert!(k.norm() < 1.0);
            let back = klein_to_poincare(&k);
            for (p, q) in back.coords().iter().zip(&v) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn midpoint_scale_invariant(
            w in proptest::collection::vec(0.1f64..3.0, 3),
            alpha in 0.01f64..100.0,
        ) {
            let pts = [klein(&[0.5, 0.1]), klein(&[-0.2, 0.7]), klein(&[0.0, -0.3])];
            let m1 = einstein_midpoint(&pts, &w).unwrap();
            let ws: Vec<f64> = w.iter().map(|x| x * alpha).collect();
            let m2 = einstein_midpoint(&pts, &ws).unwrap();
            prop_assert!(m1.norm() < 1.0);
            for (p, q) in m1.coords().iter().zip(m2.coords()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
