//! Dimensionless condensed energy of the one-dimensional model problem and its
//! closed-form convex envelope.
//!
//! Coordinates are `y = (y1, y2)`: `y1` is the scaled trace strain and `y2` the
//! shear strain, both dimensionless. The condensed energy for a yield radius
//! `r` is
//!
//! ```text
//! f(y) = 1/2 (y1^2 + (y2 - z_n)^2) - (|y2 - z_n| - r(y1))_+^2 / (2 (b + 1))
//! ```
//!
//! and, as long as `sqrt(b) * s* <= r(y_mid)`, its convex envelope does not
//! depend on `r` at all: it only sees the triangle function `r0` spanned by the
//! support `[y_min, y_max]`. The envelope is given branch-wise on five regions
//! (see [`Region`]).

use std::fmt;

use thiserror::Error;

/// Errors raised by the envelope machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("invalid envelope parameters: {0}")]
    InvalidParams(String),
    #[error("dissipation function '{tag}' is not admissible: {reason}")]
    InadmissibleDissipation { tag: String, reason: String },
    #[error("small-b condition fails: sqrt(b)*s* = {lhs:e} > r(y_mid) = {rhs:e}")]
    SmallBViolated { lhs: f64, rhs: f64 },
    #[error("relaxed energy is not differentiable at y1 = {y1} (support endpoint)")]
    NondifferentiablePoint { y1: f64 },
    #[error("curve parameter s = {s} outside the admissible range {range}")]
    OutOfRange { s: f64, range: String },
}

/// Hardening ratio and trace-strain support of the envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeParams {
    b: f64,
    y_min: f64,
    y_max: f64,
}

impl EnvelopeParams {
    pub fn new(b: f64, y_min: f64, y_max: f64) -> Result<Self, EnergyError> {
        if !(b.is_finite() && b > 0.0) {
            return Err(EnergyError::InvalidParams(format!("b must be positive, got {b}")));
        }
        if !(y_min.is_finite() && y_max.is_finite() && y_min < y_max) {
            return Err(EnergyError::InvalidParams(format!(
                "need y_min < y_max, got [{y_min}, {y_max}]"
            )));
        }
        Ok(Self { b, y_min, y_max })
    }

    /// Builds parameters from the support of `r` and checks that `r` is
    /// admissible and satisfies the small-b condition, so the closed-form
    /// envelope applies to it.
    pub fn for_dissipation(b: f64, r: &dyn Dissipation) -> Result<Self, EnergyError> {
        let (lo, hi) = r.support();
        let p = Self::new(b, lo, hi)?;
        validate_dissipation(r)?;
        let lhs = p.apex_height();
        let rhs = r.eval(p.y_mid());
        if !small_b_condition(&p, r) {
            return Err(EnergyError::SmallBViolated { lhs, rhs });
        }
        Ok(p)
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn y_mid(&self) -> f64 {
        0.5 * (self.y_min + self.y_max)
    }

    /// Half width of the support.
    pub fn s_star(&self) -> f64 {
        0.5 * (self.y_max - self.y_min)
    }

    /// Height of the triangle vertices on the support boundary,
    /// `(b + 1) / sqrt(b) * s*`.
    pub fn y2_star(&self) -> f64 {
        (self.b + 1.0) / self.b.sqrt() * self.s_star()
    }

    /// Apex height of `r0`, `sqrt(b) * s*`.
    pub fn apex_height(&self) -> f64 {
        self.b.sqrt() * self.s_star()
    }

    fn interior(&self, y1: f64) -> bool {
        y1 > self.y_min && y1 < self.y_max
    }
}

/// A yield radius `r(y1)`: nonnegative, supported on a compact interval and
/// concave there.
pub trait Dissipation: Send + Sync {
    fn eval(&self, y1: f64) -> f64;

    fn support(&self) -> (f64, f64);

    fn tag(&self) -> &str;

    /// Left and right derivatives of `r` at `y1`.
    ///
    /// The default uses one-sided difference quotients; closed-form
    /// implementations should override it.
    fn one_sided_slopes(&self, y1: f64) -> (f64, f64) {
        let (lo, hi) = self.support();
        let h = 1e-7 * (hi - lo);
        let r = self.eval(y1);
        ((r - self.eval(y1 - h)) / h, (self.eval(y1 + h) - r) / h)
    }
}

/// The triangle function `r0(y1) = sqrt(b) (s* - |y1 - y_mid|)` on the support.
#[derive(Debug, Clone, Copy)]
pub struct TriangleDissipation {
    params: EnvelopeParams,
}

impl TriangleDissipation {
    pub fn new(params: EnvelopeParams) -> Self {
        Self { params }
    }
}

impl Dissipation for TriangleDissipation {
    fn eval(&self, y1: f64) -> f64 {
        r0_eval(&self.params, y1)
    }

    fn support(&self) -> (f64, f64) {
        (self.params.y_min, self.params.y_max)
    }

    fn tag(&self) -> &str {
        "triangle-r0"
    }

    fn one_sided_slopes(&self, y1: f64) -> (f64, f64) {
        let p = &self.params;
        let k = p.b.sqrt();
        let slope = |y: f64, right: bool| -> f64 {
            let inside = if right { y >= p.y_min && y < p.y_max } else { y > p.y_min && y <= p.y_max };
            if !inside {
                return 0.0;
            }
            let left_half = if right { y < p.y_mid() } else { y <= p.y_mid() };
            if left_half {
                k
            } else {
                -k
            }
        };
        (slope(y1, false), slope(y1, true))
    }
}

/// A black-box yield radius given by a closure and its declared support.
///
/// Values outside the support are forced to zero.
pub struct DissipationFunction {
    tag: String,
    support: (f64, f64),
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl DissipationFunction {
    pub fn new(
        tag: impl Into<String>,
        support: (f64, f64),
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { tag: tag.into(), support, f: Box::new(f) }
    }
}

impl fmt::Debug for DissipationFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DissipationFunction")
            .field("tag", &self.tag)
            .field("support", &self.support)
            .finish()
    }
}

impl Dissipation for DissipationFunction {
    fn eval(&self, y1: f64) -> f64 {
        if y1 < self.support.0 || y1 > self.support.1 {
            0.0
        } else {
            (self.f)(y1)
        }
    }

    fn support(&self) -> (f64, f64) {
        self.support
    }

    fn tag(&self) -> &str {
        &self.tag
    }
}

/// Number of sample points used by [`validate_dissipation`].
const CONCAVITY_SAMPLES: usize = 257;
const CONCAVITY_TOL: f64 = 1e-10;

/// Checks nonnegativity, the support and concavity of `r` by dense sampling.
///
/// Concavity is tested with midpoint inequalities on all sample pairs.
pub fn validate_dissipation(r: &dyn Dissipation) -> Result<(), EnergyError> {
    let (lo, hi) = r.support();
    let fail = |reason: String| EnergyError::InadmissibleDissipation { tag: r.tag().to_owned(), reason };
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(fail(format!("degenerate support [{lo}, {hi}]")));
    }
    let width = hi - lo;
    for probe in [lo - 0.5 * width, lo - 1e-9 * width, hi + 1e-9 * width, hi + 0.5 * width] {
        let v = r.eval(probe);
        if v != 0.0 {
            return Err(fail(format!("r({probe}) = {v} outside the support")));
        }
    }
    let n = CONCAVITY_SAMPLES;
    let xs: Vec<f64> = (0..n).map(|i| lo + width * i as f64 / (n - 1) as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| r.eval(x)).collect();
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for (x, v) in xs.iter().zip(&vals) {
        if !v.is_finite() || *v < 0.0 {
            return Err(fail(format!("r({x}) = {v} is negative or not finite")));
        }
    }
    for i in 0..n {
        for j in (i + 2..n).step_by(2) {
            let mid = r.eval(0.5 * (xs[i] + xs[j]));
            let chord = 0.5 * (vals[i] + vals[j]);
            if mid < chord - CONCAVITY_TOL * (1.0 + scale) {
                return Err(fail(format!(
                    "midpoint test fails on [{}, {}]: {mid} < {chord}",
                    xs[i], xs[j]
                )));
            }
        }
    }
    Ok(())
}

/// A point of the dimensionless strain plane together with the plastic shift
/// `z_n` of the previous increment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyPoint {
    pub y1: f64,
    pub y2: f64,
    pub z_n: f64,
}

impl EnergyPoint {
    pub fn new(y1: f64, y2: f64) -> Self {
        Self { y1, y2, z_n: 0.0 }
    }

    pub fn shifted(y1: f64, y2: f64, z_n: f64) -> Self {
        Self { y1, y2, z_n }
    }

    /// Shear coordinate relative to the previous plastic strain.
    pub fn relative_y2(&self) -> f64 {
        self.y2 - self.z_n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn of(v: f64) -> Self {
        if v < 0.0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Branch of the convex envelope.
///
/// * `Tilde`: `y1` outside the open support, the energy is the convex quadratic `g`.
/// * `Y1`: elastic, `|y2| < r0(y1)`.
/// * `Y2`: simple laminates between the `alpha` and `beta` curves.
/// * `Y3`: the triangle spanned by `y*`, `y*_min`, `y*_max`; the envelope is affine.
/// * `Y4`: above the triangle, laminates across the support in `y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Tilde,
    Y1,
    Y2(Sign),
    Y3(Sign),
    Y4(Sign),
}

impl Region {
    pub fn label(&self) -> &'static str {
        match self {
            Region::Tilde => "Ytilde",
            Region::Y1 => "Y1",
            Region::Y2(Sign::Plus) => "Y2+",
            Region::Y2(Sign::Minus) => "Y2-",
            Region::Y3(Sign::Plus) => "Y3+",
            Region::Y3(Sign::Minus) => "Y3-",
            Region::Y4(Sign::Plus) => "Y4+",
            Region::Y4(Sign::Minus) => "Y4-",
        }
    }

    /// Region index ignoring the sign: 0 for `Tilde`, 1..=4 for `Y1`..`Y4`.
    pub fn index(&self) -> u8 {
        match self {
            Region::Tilde => 0,
            Region::Y1 => 1,
            Region::Y2(_) => 2,
            Region::Y3(_) => 3,
            Region::Y4(_) => 4,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The triangle function `r0`. Zero outside `[y_min, y_max]`.
pub fn r0_eval(p: &EnvelopeParams, y1: f64) -> f64 {
    if y1 < p.y_min || y1 > p.y_max {
        return 0.0;
    }
    (p.b.sqrt() * (p.s_star() - (y1 - p.y_mid()).abs())).max(0.0)
}

/// Condensed energy `f^(r)_{z_n}(y)`.
pub fn condensed_energy(p: &EnvelopeParams, r: &dyn Dissipation, y: EnergyPoint) -> f64 {
    let w = y.relative_y2();
    let over = (w.abs() - r.eval(y.y1)).max(0.0);
    0.5 * (y.y1 * y.y1 + w * w) - over * over / (2.0 * (p.b + 1.0))
}

/// Gradient of the condensed energy, using the right derivative of `r` where
/// `r` has a kink.
pub fn condensed_gradient(p: &EnvelopeParams, r: &dyn Dissipation, y: EnergyPoint) -> [f64; 2] {
    let ([_, right], g2) = condensed_partials(p, r, y);
    [right, g2]
}

/// One-sided partial derivatives of the condensed energy in `y1` together with
/// the (continuous) partial in `y2`.
///
/// Returns `([d1_left, d1_right], d2)`. The two `y1` values coincide wherever
/// `r` is differentiable.
pub fn condensed_partials(p: &EnvelopeParams, r: &dyn Dissipation, y: EnergyPoint) -> ([f64; 2], f64) {
    let w = y.relative_y2();
    let over = (w.abs() - r.eval(y.y1)).max(0.0);
    let (left, right) = r.one_sided_slopes(y.y1);
    let c = over / (p.b + 1.0);
    let d1_left = y.y1 + c * left;
    let d1_right = y.y1 + c * right;
    let d2 = w - c * w.signum();
    ([d1_left, d1_right], d2)
}

/// `sqrt(b) (y_max - y_min) / 2 <= r(y_mid)`.
///
/// Uses a relative slack of a few ulps so that `r = r0` passes.
pub fn small_b_condition(p: &EnvelopeParams, r: &dyn Dissipation) -> bool {
    let lhs = p.apex_height();
    let rhs = r.eval(p.y_mid());
    lhs <= rhs + 4.0 * f64::EPSILON * lhs.abs()
}

/// Assigns `(y1, y2)` to its envelope branch.
///
/// Boundaries follow the set definitions: `Tilde` is closed, `Y1` open,
/// `Y2` closed below and open above in `|y2|`, `Y3` closed, `Y4` open. In
/// particular the apex `y*` (where the `Y2` slab degenerates) is in `Y3`.
pub fn classify(p: &EnvelopeParams, y1: f64, y2: f64) -> Region {
    if !p.interior(y1) {
        return Region::Tilde;
    }
    let a = y2.abs();
    let r0 = r0_eval(p, y1);
    let sign = Sign::of(y2);
    let upper = p.y2_star() - r0 / p.b;
    if a < r0 {
        Region::Y1
    } else if a < upper {
        Region::Y2(sign)
    } else if a <= p.y2_star() {
        Region::Y3(sign)
    } else {
        Region::Y4(sign)
    }
}

/// The convex envelope `f_c` evaluated at `y`, including the shift `z_n`.
///
/// Valid for every dissipation function satisfying the small-b condition on
/// the support described by `p`; callers are responsible for that check (see
/// [`EnvelopeParams::for_dissipation`]).
pub fn relaxed_energy(p: &EnvelopeParams, y: EnergyPoint) -> f64 {
    relaxed_energy_at(p, y.y1, y.relative_y2())
}

/// Unshifted envelope `f_c(y1, y2)`.
pub fn relaxed_energy_at(p: &EnvelopeParams, y1: f64, y2: f64) -> f64 {
    let b = p.b;
    let a = y2.abs();
    match classify(p, y1, y2) {
        Region::Tilde => quadratic_lower_bound(p, y1, y2),
        Region::Y1 => 0.5 * (y1 * y1 + y2 * y2),
        Region::Y2(_) => {
            let d = a - r0_eval(p, y1);
            0.5 * (y1 * y1 + y2 * y2) - d * d / (2.0 * (b + 1.0))
        }
        Region::Y3(_) => {
            let r0 = r0_eval(p, y1);
            let d = a - r0;
            let e = a - p.y2_star() + r0 / b;
            0.5 * (y1 * y1 + y2 * y2) - d * d / (2.0 * (b + 1.0)) - 0.5 * b / (b + 1.0) * e * e
        }
        Region::Y4(_) => {
            0.5 * y1 * y1 + 0.5 * b / (b + 1.0) * y2 * y2 + 0.5 * (y1 - p.y_min) * (p.y_max - y1)
        }
    }
}

/// Gradient of the convex envelope with respect to `(y1, y2)`.
///
/// The envelope has a kink across the lines `y1 = y_min` and `y1 = y_max`;
/// there the gradient does not exist and an error is returned.
pub fn relaxed_gradient(p: &EnvelopeParams, y: EnergyPoint) -> Result<[f64; 2], EnergyError> {
    if y.y1 == p.y_min || y.y1 == p.y_max {
        return Err(EnergyError::NondifferentiablePoint { y1: y.y1 });
    }
    Ok(relaxed_gradient_at(p, y.y1, y.relative_y2()))
}

/// Branch gradient at `(y1, y2)` without the kink check. On the lines
/// `y1 = y_min`, `y1 = y_max` this returns the `Tilde` (outer) value.
pub(crate) fn relaxed_gradient_at(p: &EnvelopeParams, y1: f64, y2: f64) -> [f64; 2] {
    let b = p.b;
    let k = b.sqrt();
    match classify(p, y1, y2) {
        Region::Tilde => [y1, b / (b + 1.0) * y2],
        Region::Y1 => [y1, y2],
        Region::Y2(sign) => {
            let r0 = r0_eval(p, y1);
            let side = (p.y_mid() - y1).signum();
            [
                y1 + side * k / (b + 1.0) * (y2.abs() - r0),
                b / (b + 1.0) * y2 + sign.value() * r0 / (b + 1.0),
            ]
        }
        Region::Y3(sign) => [p.y_mid(), sign.value() * p.apex_height()],
        Region::Y4(_) => [p.y_mid(), b / (b + 1.0) * y2],
    }
}

/// Left and right partial derivatives in `y1` of the envelope, plus the
/// partial in `y2`. Only differs from [`relaxed_gradient`] on the kink lines.
pub fn relaxed_partials(p: &EnvelopeParams, y: EnergyPoint) -> ([f64; 2], f64) {
    let w = y.relative_y2();
    if y.y1 == p.y_min || y.y1 == p.y_max {
        let outer = relaxed_gradient_at(p, y.y1, w);
        let inner_y1 = if y.y1 == p.y_min {
            next_up(y.y1)
        } else {
            next_down(y.y1)
        };
        let inner = relaxed_gradient_at(p, inner_y1, w);
        if y.y1 == p.y_min {
            ([outer[0], inner[0]], outer[1])
        } else {
            ([inner[0], outer[0]], outer[1])
        }
    } else {
        let g = relaxed_gradient_at(p, y.y1, w);
        ([g[0], g[0]], g[1])
    }
}

fn next_up(x: f64) -> f64 {
    let step = x.abs().max(f64::MIN_POSITIVE) * f64::EPSILON;
    x + step
}

fn next_down(x: f64) -> f64 {
    let step = x.abs().max(f64::MIN_POSITIVE) * f64::EPSILON;
    x - step
}

/// Families of laminate endpoints used to build the envelope.
///
/// `AlphaMin`/`AlphaMax` run along the boundary `|y2| = r0(y1)`, `BetaMin`/`BetaMax`
/// along the support endpoints; the segments between corresponding points
/// fill `Y2`. `AlphaInf`/`BetaInf` pair the two support endpoints at equal
/// height and fill `Y4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    AlphaMin(Sign),
    BetaMin(Sign),
    AlphaMax(Sign),
    BetaMax(Sign),
    AlphaInf(Sign),
    BetaInf(Sign),
}

/// Point on one of the construction curves.
///
/// The `alpha`/`beta` families accept `s` in `(0, s*]`, the `inf` family
/// `s > y2*`.
pub fn construction_curves(p: &EnvelopeParams, s: f64, curve: Curve) -> Result<[f64; 2], EnergyError> {
    let k = p.b.sqrt();
    let lift = (p.b + 1.0) / k;
    match curve {
        Curve::AlphaInf(_) | Curve::BetaInf(_) => {
            if !(s > p.y2_star() && s.is_finite()) {
                return Err(EnergyError::OutOfRange { s, range: format!("({}, inf)", p.y2_star()) });
            }
        }
        _ => {
            if !(s > 0.0 && s <= p.s_star()) {
                return Err(EnergyError::OutOfRange { s, range: format!("(0, {}]", p.s_star()) });
            }
        }
    }
    Ok(match curve {
        Curve::AlphaMin(sg) => [p.y_min + s, sg.value() * k * s],
        Curve::BetaMin(sg) => [p.y_min, sg.value() * lift * s],
        Curve::AlphaMax(sg) => [p.y_max - s, sg.value() * k * s],
        Curve::BetaMax(sg) => [p.y_max, sg.value() * lift * s],
        Curve::AlphaInf(sg) => [p.y_min, sg.value() * s],
        Curve::BetaInf(sg) => [p.y_max, sg.value() * s],
    })
}

/// Vertices of the triangle on which the envelope is affine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TouchingPoints {
    /// `y*`, the apex of `r0` (where `alpha_min` and `alpha_max` meet).
    pub apex: [f64; 2],
    /// `y*_min = beta_min(s*)`.
    pub at_min: [f64; 2],
    /// `y*_max = beta_max(s*)`.
    pub at_max: [f64; 2],
}

pub fn touching_points(p: &EnvelopeParams, sign: Sign) -> TouchingPoints {
    let s = sign.value();
    TouchingPoints {
        apex: [p.y_mid(), s * p.apex_height()],
        at_min: [p.y_min, s * p.y2_star()],
        at_max: [p.y_max, s * p.y2_star()],
    }
}

/// Convex quadratic lower bound `g(y) = y1^2/2 + b/(b+1) y2^2/2` of every
/// condensed energy; it coincides with both `f` and `f_c` on `Tilde`.
pub fn quadratic_lower_bound(p: &EnvelopeParams, y1: f64, y2: f64) -> f64 {
    // same operation order as the condensed energy with r = 0, so the two agree bitwise
    let a = y2.abs();
    0.5 * (y1 * y1 + y2 * y2) - a * a / (2.0 * (p.b + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem1d::QuadraticYieldFit;
    use proptest::prelude::*;

    fn reference_params() -> EnvelopeParams {
        EnvelopeParams::new(0.095, -0.058, 0.00107).unwrap()
    }

    fn reference_fit() -> QuadraticYieldFit {
        QuadraticYieldFit::new(-0.058, 0.00107, -0.0385, 0.016).unwrap()
    }

    #[test]
    fn r0_apex_and_support() {
        let p = reference_params();
        let apex = r0_eval(&p, p.y_mid());
        let expected = 0.095_f64.sqrt() * 0.0295350;
        assert!((apex - expected).abs() < 1e-15);
        assert!((apex - 9.1033e-3).abs() < 1e-7);
        assert_eq!(r0_eval(&p, p.y_min()), 0.0);
        assert_eq!(r0_eval(&p, p.y_max() + 1.0), 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(EnvelopeParams::new(0.0, -1.0, 1.0).is_err());
        assert!(EnvelopeParams::new(0.1, 1.0, 1.0).is_err());
        assert!(EnvelopeParams::new(0.1, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn condensed_energy_elastic_and_tilde_branches() {
        let p = reference_params();
        let r = reference_fit();
        // outside the support r = 0 and the energy is the quadratic lower bound
        let y = EnergyPoint::new(-0.07, 0.03);
        let expect = 0.5 * 0.07 * 0.07 + 0.5 * 0.095 / 1.095 * 0.03 * 0.03;
        assert!((condensed_energy(&p, &r, y) - expect).abs() < 1e-18);
        // below the yield radius the clamp is inactive
        let y = EnergyPoint::shifted(-0.0385, 0.012, 0.003);
        let expect = 0.5 * (0.0385f64.powi(2) + 0.009f64.powi(2));
        assert!((condensed_energy(&p, &r, y) - expect).abs() < 1e-18);
    }

    #[test]
    fn condensed_energy_reference_point() {
        // y = (-0.0285, 0.02): r(y1) from the right parabola, clamp active
        let p = reference_params();
        let r = reference_fit();
        let y1: f64 = -0.0285;
        let y2: f64 = 0.02;
        let rv = 0.016 * (1.0 - (y1 + 0.0385).powi(2) / (0.00107f64 + 0.0385).powi(2));
        let over = y2 - rv;
        assert!(over > 0.0);
        let expect = 0.5 * (y1 * y1 + y2 * y2) - over * over / (2.0 * 1.095);
        let got = condensed_energy(&p, &r, EnergyPoint::new(y1, y2));
        assert!((got - expect).abs() < 1e-18, "{got} vs {expect}");
        assert!((got - 5.946_094_77e-4).abs() < 1e-12, "{got}");
    }

    #[test]
    fn small_b_for_reference_fit_and_r0() {
        let p = reference_params();
        let r = reference_fit();
        assert!(small_b_condition(&p, &r));
        let lhs = p.apex_height();
        let rhs = r.eval(p.y_mid());
        assert!((lhs - 9.1033e-3).abs() < 1e-7);
        assert!((rhs - 0.014_970_98).abs() < 1e-8, "{rhs}");
        assert!(small_b_condition(&p, &TriangleDissipation::new(p)));
        let big = EnvelopeParams::new(2.0, -0.058, 0.00107).unwrap();
        assert!(!small_b_condition(&big, &r));
        assert!(matches!(
            EnvelopeParams::for_dissipation(2.0, &r),
            Err(EnergyError::SmallBViolated { .. })
        ));
        assert!(EnvelopeParams::for_dissipation(0.095, &r).is_ok());
    }

    #[test]
    fn validation_rejects_convex_radius() {
        let bad = DissipationFunction::new("convex", (0.0, 1.0), |t: f64| t * t);
        assert!(validate_dissipation(&bad).is_err());
        let neg = DissipationFunction::new("negative", (0.0, 1.0), |t: f64| t - 0.5);
        assert!(validate_dissipation(&neg).is_err());
        let ok = DissipationFunction::new("sine", (0.0, 1.0), |t: f64| (std::f64::consts::PI * t).sin());
        assert!(validate_dissipation(&ok).is_ok());
    }

    #[test]
    fn classification_examples() {
        let p = reference_params();
        assert_eq!(classify(&p, p.y_min(), 0.0), Region::Tilde);
        assert_eq!(classify(&p, p.y_min() - 1.0, 0.3), Region::Tilde);
        assert_eq!(classify(&p, p.y_max(), 0.0), Region::Tilde);
        assert_eq!(classify(&p, p.y_mid(), 0.0), Region::Y1);
        // the Y2 slab has zero thickness at the apex; the apex lies in Y3
        assert_eq!(classify(&p, p.y_mid(), p.apex_height()), Region::Y3(Sign::Plus));
        assert_eq!(classify(&p, p.y_mid(), -p.apex_height()), Region::Y3(Sign::Minus));
        assert_eq!(classify(&p, -0.0455, 0.05), Region::Y2(Sign::Plus));
        assert_eq!(classify(&p, -0.0455, 0.1), Region::Y3(Sign::Plus));
        assert_eq!(classify(&p, -0.0455, -0.2), Region::Y4(Sign::Minus));
        assert_eq!(classify(&p, -0.0455, p.y2_star()), Region::Y3(Sign::Plus));
    }

    #[test]
    fn branches_agree_at_apex() {
        // Y2 and Y3 formulas coincide where the slab degenerates
        let p = reference_params();
        let (y1, y2) = (p.y_mid(), p.apex_height());
        let b = p.b();
        let y2_branch = 0.5 * (y1 * y1 + y2 * y2);
        assert!((relaxed_energy_at(&p, y1, y2) - y2_branch).abs() < 1e-18);
        let g = relaxed_gradient_at(&p, y1, y2);
        assert!((g[0] - y1).abs() < 1e-15 && (g[1] - y2).abs() < 1e-15);
        let _ = b;
    }

    #[test]
    fn tilde_and_y4_branch_values() {
        let p = reference_params();
        let (y1, y2) = (0.01, -0.04);
        let v = relaxed_energy(&p, EnergyPoint::new(y1, y2));
        assert!((v - quadratic_lower_bound(&p, y1, y2)).abs() < 1e-18);
        let (y1, y2) = (-0.02, 0.15);
        let v = relaxed_energy(&p, EnergyPoint::new(y1, y2));
        let expect = quadratic_lower_bound(&p, y1, y2) + 0.5 * (y1 - p.y_min()) * (p.y_max() - y1);
        assert!((v - expect).abs() < 1e-18);
    }

    #[test]
    fn gradient_branch_examples() {
        let p = reference_params();
        let g = relaxed_gradient(&p, EnergyPoint::new(-0.0455, 0.1)).unwrap();
        assert_eq!(g, [p.y_mid(), p.apex_height()]);
        let g = relaxed_gradient(&p, EnergyPoint::new(-0.03, 0.001)).unwrap();
        assert_eq!(g, [-0.03, 0.001]);
        assert!(matches!(
            relaxed_gradient(&p, EnergyPoint::new(p.y_min(), 0.1)),
            Err(EnergyError::NondifferentiablePoint { .. })
        ));
        assert!(relaxed_gradient(&p, EnergyPoint::new(p.y_max(), 0.0)).is_err());
    }

    #[test]
    fn relaxed_partials_bracket_the_kink() {
        let p = reference_params();
        let ([lo, hi], _) = relaxed_partials(&p, EnergyPoint::new(p.y_min(), 0.2));
        // Y4 side has y1-slope y_mid > y_min
        assert!((lo - p.y_min()).abs() < 1e-15);
        assert!((hi - p.y_mid()).abs() < 1e-12);
    }

    #[test]
    fn curves_hit_the_triangle_vertices() {
        let p = reference_params();
        let s = p.s_star();
        let t = touching_points(&p, Sign::Plus);
        let a = construction_curves(&p, s, Curve::AlphaMin(Sign::Plus)).unwrap();
        let am = construction_curves(&p, s, Curve::AlphaMax(Sign::Plus)).unwrap();
        assert!((a[0] - t.apex[0]).abs() < 1e-15 && (a[1] - t.apex[1]).abs() < 1e-15);
        assert!((am[0] - t.apex[0]).abs() < 1e-15 && (am[1] - t.apex[1]).abs() < 1e-15);
        let bm = construction_curves(&p, s, Curve::BetaMax(Sign::Plus)).unwrap();
        assert_eq!(bm, [p.y_max(), 1.095 / 0.095_f64.sqrt() * s]);
        assert_eq!(bm, t.at_max);
        assert!(construction_curves(&p, 0.0, Curve::AlphaMin(Sign::Plus)).is_err());
        assert!(construction_curves(&p, 2.0 * s, Curve::BetaMin(Sign::Minus)).is_err());
        assert!(construction_curves(&p, p.y2_star(), Curve::AlphaInf(Sign::Plus)).is_err());
        assert!(construction_curves(&p, 1.01 * p.y2_star(), Curve::BetaInf(Sign::Minus)).is_ok());
    }

    #[test]
    fn envelope_interpolates_along_laminate_segments() {
        let p = reference_params();
        let r = reference_fit();
        for (ca, cb) in [
            (Curve::AlphaMin(Sign::Plus), Curve::BetaMin(Sign::Plus)),
            (Curve::AlphaMax(Sign::Minus), Curve::BetaMax(Sign::Minus)),
        ] {
            for frac in [0.25, 0.5, 0.9] {
                let s = frac * p.s_star();
                let a = construction_curves(&p, s, ca).unwrap();
                let b = construction_curves(&p, s, cb).unwrap();
                let fa = condensed_energy(&p, &r, EnergyPoint::new(a[0], a[1]));
                let fb = condensed_energy(&p, &r, EnergyPoint::new(b[0], b[1]));
                // f_c coincides with f at both ends
                assert!((relaxed_energy_at(&p, a[0], a[1]) - fa).abs() < 1e-15);
                assert!((relaxed_energy_at(&p, b[0], b[1]) - fb).abs() < 1e-15);
                for t in [0.1, 0.5, 0.77] {
                    let m = [t * a[0] + (1.0 - t) * b[0], t * a[1] + (1.0 - t) * b[1]];
                    let lin = t * fa + (1.0 - t) * fb;
                    assert!((relaxed_energy_at(&p, m[0], m[1]) - lin).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn envelope_interpolates_across_the_support_above_the_triangle() {
        let p = reference_params();
        let r = reference_fit();
        let s = 1.3 * p.y2_star();
        let a = construction_curves(&p, s, Curve::AlphaInf(Sign::Plus)).unwrap();
        let b = construction_curves(&p, s, Curve::BetaInf(Sign::Plus)).unwrap();
        let fa = condensed_energy(&p, &r, EnergyPoint::new(a[0], a[1]));
        let fb = condensed_energy(&p, &r, EnergyPoint::new(b[0], b[1]));
        for t in [0.2, 0.5, 0.8] {
            let m = [t * a[0] + (1.0 - t) * b[0], s];
            assert!((relaxed_energy_at(&p, m[0], m[1]) - (t * fa + (1.0 - t) * fb)).abs() < 1e-15);
        }
    }

    #[test]
    fn shift_covariance() {
        let p = reference_params();
        for &(y1, y2, z) in &[(-0.03, 0.05, 0.01), (-0.05, -0.02, 0.03), (0.02, 0.3, -0.1)] {
            let shifted = relaxed_energy(&p, EnergyPoint::shifted(y1, y2, z));
            assert_eq!(shifted, relaxed_energy_at(&p, y1, y2 - z));
        }
    }

    fn arb_point() -> impl Strategy<Value = (f64, f64)> {
        (-0.09f64..0.03, -0.25f64..0.25)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn envelope_is_below_condensed_energy((y1, y2) in arb_point()) {
            let p = reference_params();
            let r = reference_fit();
            let f = condensed_energy(&p, &r, EnergyPoint::new(y1, y2));
            let fc = relaxed_energy_at(&p, y1, y2);
            prop_assert!(fc <= f + 1e-15 * (1.0 + f.abs()));
            if matches!(classify(&p, y1, y2), Region::Tilde | Region::Y1) {
                prop_assert_eq!(fc, f);
            }
        }

        #[test]
        fn monotone_in_the_yield_radius((y1, y2) in arb_point(), scale in 0.0f64..1.0) {
            let p = reference_params();
            let r = reference_fit();
            let smaller = DissipationFunction::new("scaled", r.support(), move |t| scale * r.eval(t));
            let r = reference_fit();
            let y = EnergyPoint::new(y1, y2);
            prop_assert!(condensed_energy(&p, &smaller, y) <= condensed_energy(&p, &r, y) + 1e-18);
            prop_assert!(quadratic_lower_bound(&p, y1, y2) <= condensed_energy(&p, &smaller, y) + 1e-18);
        }

        #[test]
        fn midpoint_convexity(a in arb_point(), b in arb_point(), lam in prop::sample::select(vec![0.25, 0.5, 0.75])) {
            let p = reference_params();
            let fa = relaxed_energy_at(&p, a.0, a.1);
            let fb = relaxed_energy_at(&p, b.0, b.1);
            let m = (lam * a.0 + (1.0 - lam) * b.0, lam * a.1 + (1.0 - lam) * b.1);
            let fm = relaxed_energy_at(&p, m.0, m.1);
            let rhs = lam * fa + (1.0 - lam) * fb;
            prop_assert!(fm <= rhs + 1e-12 * (1.0 + fm.abs()));
        }
    }
}
