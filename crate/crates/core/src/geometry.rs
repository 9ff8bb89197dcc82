//! Feasible-set geometry: the probability simplex for decisions and
//! norm balls for generator-parameter perturbations.
//!
//! Two operations carry the optimization loops. `project_simplex` is the
//! Euclidean projection onto `{w : w >= 0, sum w = 1}` via sort-and-threshold.
//! `dual_norm_step` solves the linearized adversary problem
//! `max {eps . g : ||eps||_p <= rho}` in closed form; the maximizer is the
//! dual-norm subgradient scaled to the ball boundary and the optimum value is
//! `rho * ||g||_q` with `1/p + 1/q = 1`.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::{real, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("empty vector: dimension must be at least 1")]
    Empty,
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("norm exponent must satisfy p > 1, got {p}")]
    InvalidExponent { p: f64 },
    #[error("projection supports p = 2 or p = inf, got p = {p}")]
    UnsupportedProjection { p: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ball radius must be non-negative, got {radius}")]
    NegativeRadius { radius: f64 },
}

/// Norm exponent `p` for the perturbation ball, restricted to `(1, inf]`.
///
/// Serialized as a JSON number for finite `p` and the string `"inf"` for the
/// sup norm, so configs stay plain JSON.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormExponent {
    Finite(f64),
    Inf,
}

impl NormExponent {
    /// Finite exponent, validated: `p > 1` is required so the dual exponent exists.
    pub fn finite(p: f64) -> Result<Self, GeometryError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(GeometryError::InvalidExponent { p });
        }
        Ok(NormExponent::Finite(p))
    }

    pub const TWO: NormExponent = NormExponent::Finite(2.0);

    pub fn is_two(self) -> bool {
        matches!(self, NormExponent::Finite(p) if p == 2.0)
    }

    /// Dual exponent `q` with `1/p + 1/q = 1`; `q = 1` for the sup norm.
    pub fn dual(self) -> f64 {
        match self {
            NormExponent::Finite(p) => p / (p - 1.0),
            NormExponent::Inf => 1.0,
        }
    }

    fn as_f64(self) -> f64 {
        match self {
            NormExponent::Finite(p) => p,
            NormExponent::Inf => f64::INFINITY,
        }
    }
}

impl Serialize for NormExponent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            NormExponent::Finite(p) => serializer.serialize_f64(*p),
            NormExponent::Inf => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NormExponent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(p) => NormExponent::finite(p).map_err(|e| D::Error::custom(e.to_string())),
            Raw::Text(s) if s == "inf" => Ok(NormExponent::Inf),
            Raw::Text(s) => Err(D::Error::custom(format!("unrecognized norm exponent {s:?}"))),
        }
    }
}

/// Norm ball `{theta : ||theta - center||_p <= radius}` in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBall<T> {
    pub center: Vec<T>,
    pub radius: T,
    pub exponent: NormExponent,
}

impl<T: Scalar> PerturbationBall<T> {
    pub fn new(center: Vec<T>, radius: T, exponent: NormExponent) -> Result<Self, GeometryError> {
        if radius < T::zero() {
            return Err(GeometryError::NegativeRadius {
                radius: radius.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(PerturbationBall { center, radius, exponent })
    }
}

fn check_finite<T: Scalar>(v: &[T]) -> Result<(), GeometryError> {
    for (index, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(GeometryError::NonFinite { index });
        }
    }
    Ok(())
}

/// `||v||_p` for `p` in `(1, inf]`. Finite exponents rescale by the max entry
/// first so large powers do not overflow.
pub fn lp_norm<T: Scalar>(v: &[T], exponent: NormExponent) -> T {
    match exponent {
        NormExponent::Inf => v.iter().fold(T::zero(), |m, x| m.max(x.abs())),
        NormExponent::Finite(p) if p == 2.0 => {
            v.iter().map(|x| *x * *x).sum::<T>().sqrt()
        }
        NormExponent::Finite(p) => {
            let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
            if scale == T::zero() {
                return T::zero();
            }
            let p_t: T = real(p);
            let sum: T = v.iter().map(|x| (x.abs() / scale).powf(p_t)).sum();
            scale * sum.powf(p_t.recip())
        }
    }
}

/// Euclidean projection onto the probability simplex, O(d log d).
///
/// Sorts descending, finds the largest support size whose threshold keeps all
/// supported coordinates positive, then clamps. Output entries are exactly
/// non-negative by construction.
pub fn project_simplex<T: Scalar>(v: &[T]) -> Result<Vec<T>, GeometryError> {
    if v.is_empty() {
        return Err(GeometryError::Empty);
    }
    check_finite(v)?;
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries are comparable"));
    let mut cumulative = T::zero();
    let mut threshold = T::zero();
    for (k, u) in sorted.iter().enumerate() {
        cumulative += *u;
        let k_t: T = real((k + 1) as f64);
        let candidate = (cumulative - T::one()) / k_t;
        if *u - candidate > T::zero() {
            threshold = candidate;
        }
    }
    Ok(v.iter().map(|x| (*x - threshold).max(T::zero())).collect())
}

/// Projects a deviation `eps` (measured from the ball center) onto
/// `{||eps||_p <= radius}`. Supported exponents: `p = 2` (radial scaling) and
/// `p = inf` (coordinate clamp).
///
/// Inside-ball inputs are returned unchanged, bit for bit.
pub fn project_ball<T: Scalar>(eps: &[T], ball: &PerturbationBall<T>) -> Result<Vec<T>, GeometryError> {
    check_finite(eps)?;
    match ball.exponent {
        NormExponent::Finite(p) if p == 2.0 => {
            let norm = lp_norm(eps, NormExponent::TWO);
            if norm <= ball.radius {
                return Ok(eps.to_vec());
            }
            let scale = ball.radius / norm;
            Ok(eps.iter().map(|x| *x * scale).collect())
        }
        NormExponent::Inf => {
            let r = ball.radius;
            Ok(eps.iter().map(|x| x.min(r).max(-r)).collect())
        }
        other => Err(GeometryError::UnsupportedProjection { p: other.as_f64() }),
    }
}

/// Whether `theta` lies in the ball, with relative slack `radius * 1e-12` so
/// boundary points produced by projection still count as members.
pub fn ball_membership<T: Scalar>(theta: &[T], ball: &PerturbationBall<T>) -> Result<bool, GeometryError> {
    if theta.len() != ball.center.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: ball.center.len(),
            got: theta.len(),
        });
    }
    let deviation: Vec<T> = theta.iter().zip(&ball.center).map(|(t, c)| *t - *c).collect();
    let norm = lp_norm(&deviation, ball.exponent);
    Ok(norm <= ball.radius * (T::one() + real(1e-12)))
}

/// Closed-form solution of `max {eps . g : ||eps||_p <= radius}`.
///
/// Returns the maximizer and the optimum `radius * ||g||_q`. For finite `p`
/// the maximizer is `radius * sign(g) |g|^(q-1) / ||g||_q^(q-1)`; for `p = inf`
/// it is `radius * sign(g)`. A zero gradient (or zero radius) yields the zero
/// step. The formula is scale-invariant in `g`, so entries are normalized by
/// the largest magnitude before exponentiation.
pub fn dual_norm_step<T: Scalar>(
    g: &[T],
    ball: &PerturbationBall<T>,
) -> Result<(Vec<T>, T), GeometryError> {
    if g.is_empty() {
        return Err(GeometryError::Empty);
    }
    check_finite(g)?;
    let scale = g.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if scale == T::zero() || ball.radius == T::zero() {
        return Ok((vec![T::zero(); g.len()], T::zero()));
    }
    let rho = ball.radius;
    match ball.exponent {
        NormExponent::Inf => {
            let step: Vec<T> = g.iter().map(|x| rho * x.signum_or_zero()).collect();
            let value = rho * g.iter().map(|x| x.abs()).sum::<T>();
            Ok((step, value))
        }
        NormExponent::Finite(p) if p == 2.0 => {
            let norm = lp_norm(g, NormExponent::TWO);
            let step: Vec<T> = g.iter().map(|x| rho * *x / norm).collect();
            Ok((step, rho * norm))
        }
        NormExponent::Finite(p) => {
            let q: T = real(NormExponent::Finite(p).dual());
            let sum_q: T = g.iter().map(|x| (x.abs() / scale).powf(q)).sum();
            // ||g||_q = scale * sum_q^(1/q); denominator scale^{q-1} cancels
            // against the normalized numerator, leaving sum_q^((q-1)/q).
            let denom = sum_q.powf((q - T::one()) / q);
            let step: Vec<T> = g
                .iter()
                .map(|x| rho * x.signum_or_zero() * (x.abs() / scale).powf(q - T::one()) / denom)
                .collect();
            let value = rho * scale * sum_q.powf(q.recip());
            Ok((step, value))
        }
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> Self;
}

impl<T: Scalar> SignumOrZero for T {
    /// `signum` that maps exact zero to zero instead of +/-1.
    fn signum_or_zero(self) -> T {
        if self == T::zero() {
            T::zero()
        } else {
            self.signum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_of_feasible_point_is_identity() {
        let w: Vec<f64> = vec![0.2, 0.3, 0.5];
        let p = project_simplex(&w).unwrap();
        for (a, b) in w.iter().zip(&p) {
            assert!((a - b).abs() < 1e-15, "feasible point moved: {a} vs {b}");
        }
    }

    #[test]
    fn simplex_projection_matches_hand_case() {
        // (2, 0): support is the first coordinate only, threshold 1.
        let p = project_simplex(&[2.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn simplex_projection_of_symmetric_point_is_uniform() {
        let p: Vec<f64> = project_simplex(&[5.0, 5.0, 5.0, 5.0]).unwrap();
        for x in &p {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn simplex_rejects_empty_input() {
        assert_eq!(project_simplex::<f64>(&[]), Err(GeometryError::Empty));
    }

    #[test]
    fn singleton_simplex_is_the_point_one() {
        assert_eq!(project_simplex(&[-3.7]).unwrap(), vec![1.0]);
    }

    #[test]
    fn ball_projection_l2_scales_to_boundary() {
        let ball = PerturbationBall::new(vec![0.0f64; 2], 1.0, NormExponent::TWO).unwrap();
        let p = project_ball(&[3.0, 4.0], &ball).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15);
        assert!((p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn ball_projection_linf_clamps() {
        let ball = PerturbationBall::new(vec![0.0; 3], 0.5, NormExponent::Inf).unwrap();
        let p = project_ball(&[0.2, -0.9, 0.7], &ball).unwrap();
        assert_eq!(p, vec![0.2, -0.5, 0.5]);
    }

    #[test]
    fn ball_projection_inside_point_is_bitwise_unchanged() {
        let ball = PerturbationBall::new(vec![0.0; 2], 1.0, NormExponent::TWO).unwrap();
        let eps = [0.1f64, -0.2];
        let p = project_ball(&eps, &ball).unwrap();
        assert_eq!(p[0].to_bits(), eps[0].to_bits());
        assert_eq!(p[1].to_bits(), eps[1].to_bits());
    }

    #[test]
    fn ball_projection_rejects_general_exponent() {
        let ball = PerturbationBall::new(vec![0.0; 2], 1.0, NormExponent::finite(3.0).unwrap()).unwrap();
        assert!(matches!(
            project_ball(&[1.0, 1.0], &ball),
            Err(GeometryError::UnsupportedProjection { .. })
        ));
    }

    #[test]
    fn dual_step_p2_is_scaled_gradient() {
        let ball = PerturbationBall::new(vec![0.0f64; 2], 2.0, NormExponent::TWO).unwrap();
        let (step, value) = dual_norm_step(&[3.0, 4.0], &ball).unwrap();
        assert!((step[0] - 1.2).abs() < 1e-15);
        assert!((step[1] - 1.6).abs() < 1e-15);
        assert!((value - 10.0).abs() < 1e-15);
    }

    #[test]
    fn dual_step_pinf_is_sign_vector() {
        let ball = PerturbationBall::new(vec![0.0f64; 3], 0.3, NormExponent::Inf).unwrap();
        let (step, value) = dual_norm_step(&[2.0, -0.1, 0.0], &ball).unwrap();
        assert_eq!(step, vec![0.3, -0.3, 0.0]);
        assert!((value - 0.3 * 2.1).abs() < 1e-15);
    }

    #[test]
    fn dual_step_zero_gradient_is_zero() {
        let ball = PerturbationBall::new(vec![0.0; 2], 0.3, NormExponent::TWO).unwrap();
        let (step, value) = dual_norm_step(&[0.0, 0.0], &ball).unwrap();
        assert_eq!(step, vec![0.0, 0.0]);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn dual_step_attains_ball_boundary() {
        for p in [1.5, 2.0, 3.0, 7.0] {
            let exponent = NormExponent::finite(p).unwrap();
            let ball = PerturbationBall::new(vec![0.0f64; 4], 0.7, exponent).unwrap();
            let (step, _) = dual_norm_step(&[0.3, -1.2, 0.0, 2.5], &ball).unwrap();
            let norm = lp_norm(&step, exponent);
            assert!((norm - 0.7).abs() < 1e-9, "p={p}: ||eps||_p = {norm}");
        }
    }

    #[test]
    fn exponent_validation_rejects_p_at_most_one() {
        assert!(NormExponent::finite(1.0).is_err());
        assert!(NormExponent::finite(0.5).is_err());
        assert!(NormExponent::finite(f64::NAN).is_err());
        assert!(NormExponent::finite(2.0).is_ok());
    }

    #[test]
    fn exponent_serde_round_trip() {
        let two = NormExponent::TWO;
        let inf = NormExponent::Inf;
        assert_eq!(serde_json::to_string(&two).unwrap(), "2.0");
        assert_eq!(serde_json::to_string(&inf).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<NormExponent>("2.0").unwrap(), two);
        assert_eq!(serde_json::from_str::<NormExponent>("\"inf\"").unwrap(), inf);
        assert!(serde_json::from_str::<NormExponent>("0.5").is_err());
    }

    #[test]
    fn membership_tolerates_boundary_round_off() {
        let ball = PerturbationBall::new(vec![0.0; 2], 0.3, NormExponent::TWO).unwrap();
        let boundary = [0.3 * (0.5f64).sqrt(), 0.3 * (0.5f64).sqrt()];
        assert!(ball_membership(&boundary, &ball).unwrap());
        assert!(!ball_membership(&[0.31, 0.0], &ball).unwrap());
    }
}
