//! Scanning geometry and scattering loci.
//!
//! Sources and detectors sit on the unit circle; lengths are converted to
//! centimetres with [`ScanGeometry::physical_scale`]. A first-order event at
//! `x` is characterized by the unsigned angle between the incoming direction
//! `x - s` and the outgoing direction `d - x`; points sharing that angle form
//! two symmetric circular arcs through `s` and `d`, the level sets of
//! [`phi`]. Second-order events are handled by [`second_scatter_point`],
//! which intersects the outgoing ray of the first event with the arcs of the
//! second.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Point or vector in the plane, in geometry units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn from_angle(angle: f64) -> Self {
        Point::new(angle.cos(), angle.sin())
    }

    #[inline]
    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn normalized(self) -> Point {
        self * (1.0 / self.norm())
    }

    /// Counter-clockwise rotation by `angle`.
    #[inline]
    pub fn rotated(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Angle of the vector, `atan2(y, x)`.
    #[inline]
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Counter-clockwise perpendicular.
    #[inline]
    pub fn perp(self) -> Point {
        Point::new(-self.y, self.x)
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Point {
    #[inline]
    fn add_assign(&mut self, o: Point) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

impl Neg for Point {
    type Output = Point;
    #[inline]
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Minimum distance of a fan angle from ±π/2.
pub const FAN_MARGIN: f64 = 1e-3;

/// Sources on the unit circle, each illuminating a fan of detectors that also
/// sit on the circle: `d(θ) = s + 2cos θ · e(θ)` where `e(θ)` is the inward
/// normal at `s` rotated by `θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    /// Angular position of every source on the unit circle.
    pub source_angles: Vec<f64>,
    /// Fan angle of every detector, shared by all sources.
    pub fan_angles: Vec<f64>,
    /// Centimetres per geometry unit.
    pub physical_scale: f64,
    /// Radius of the disk that contains the object, in geometry units.
    pub support_radius: f64,
}

impl ScanGeometry {
    /// Equally spaced sources and a symmetric fan of equally spaced detectors
    /// that just covers the support disk.
    pub fn circular(n_sources: usize, n_detectors: usize, physical_scale: f64, support_radius: f64) -> Result<Self> {
        if !(support_radius > 0.0 && support_radius < 1.0) {
            return Err(Error::config(format!(
                "support radius {support_radius} must lie in (0, 1)"
            )));
        }
        let half_fan = (support_radius.asin() + 0.1).min(FRAC_PI_2 - 0.05);
        let source_angles = (0..n_sources).map(|i| 2.0 * PI * i as f64 / n_sources as f64).collect();
        let fan_angles = (0..n_detectors)
            .map(|j| -half_fan + (j as f64 + 0.5) * 2.0 * half_fan / n_detectors as f64)
            .collect();
        Self::from_parts(source_angles, fan_angles, physical_scale, support_radius)
    }

    /// Validate and wrap explicit source and fan angles.
    pub fn from_parts(
        source_angles: Vec<f64>,
        fan_angles: Vec<f64>,
        physical_scale: f64,
        support_radius: f64,
    ) -> Result<Self> {
        if source_angles.is_empty() || fan_angles.is_empty() {
            return Err(Error::config("geometry needs at least one source and detector"));
        }
        if let Some(t) = fan_angles.iter().find(|t| !(t.abs() < FRAC_PI_2 - FAN_MARGIN)) {
            return Err(Error::config(format!(
                "fan angle {t} too close to ±π/2 (margin {FAN_MARGIN})"
            )));
        }
        if !(physical_scale > 0.0 && physical_scale.is_finite()) {
            return Err(Error::config("physical scale must be positive"));
        }
        if !(support_radius > 0.0 && support_radius < 1.0) {
            return Err(Error::config(format!(
                "support radius {support_radius} must lie in (0, 1)"
            )));
        }
        Ok(ScanGeometry {
            source_angles,
            fan_angles,
            physical_scale,
            support_radius,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.source_angles.len()
    }

    pub fn n_detectors(&self) -> usize {
        self.fan_angles.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.n_sources() * self.n_detectors()
    }

    pub fn source(&self, i: usize) -> Point {
        Point::from_angle(self.source_angles[i])
    }

    /// Detector `j` of source `i`.
    pub fn detector(&self, i: usize, j: usize) -> Point {
        let s = self.source(i);
        let theta = self.fan_angles[j];
        let dir = (-s).rotated(theta);
        s + dir * fan_length(theta)
    }

    /// Flat index `(i, j)` of every source/detector pair with its endpoints.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, Point, Point)> + '_ {
        (0..self.n_sources())
            .flat_map(move |i| (0..self.n_detectors()).map(move |j| (i, j, self.source(i), self.detector(i, j))))
    }

    pub fn inside_support(&self, p: Point) -> bool {
        p.norm_sq() <= self.support_radius * self.support_radius
    }

    /// Stable hex digest of every parameter; stored next to operators and
    /// spectra to catch mismatched inputs.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"geometry-v1");
        for a in &self.source_angles {
            h.update(a.to_le_bytes());
        }
        h.update(b"|");
        for a in &self.fan_angles {
            h.update(a.to_le_bytes());
        }
        h.update(self.physical_scale.to_le_bytes());
        h.update(self.support_radius.to_le_bytes());
        hex16(&h.finalize())
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Chord length `t(θ) = 2cos θ` from a source to the detector at fan angle θ.
#[inline]
pub fn fan_length(theta: f64) -> f64 {
    2.0 * theta.cos()
}

#[inline]
fn fan_length_derivative(theta: f64) -> f64 {
    -2.0 * theta.sin()
}

/// One level set of the first-order locus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArcSpec {
    pub source: Point,
    pub detector: Point,
    /// Scattering angle in (0, π).
    pub omega: f64,
    /// `cot(omega)`, the value of [`phi`] on the arc.
    pub p: f64,
}

impl ArcSpec {
    pub fn new(source: Point, detector: Point, omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega < PI) {
            return Err(Error::domain(format!("arc angle {omega} outside (0, π)")));
        }
        if (detector - source).norm() == 0.0 {
            return Err(Error::domain("arc source and detector coincide"));
        }
        Ok(ArcSpec {
            source,
            detector,
            omega,
            p: 1.0 / omega.tan(),
        })
    }
}

/// Cosine of the angle between `a` and `b`, and the length ratio `|a|/|b|`.
pub fn kappa_rho(a: Point, b: Point) -> Result<(f64, f64)> {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("kappa/rho of a zero vector"));
    }
    let kappa = (a.dot(b) / (na * nb)).clamp(-1.0, 1.0);
    Ok((kappa, na / nb))
}

/// Relative size of `|sin|` below which two directions count as collinear.
const COLLINEAR_EPS: f64 = 1e-12;

/// Level-set function of the first-order locus:
/// `phi(x - s, d - s) = cot ω` exactly when `x` scatters `s → d` by `ω`.
pub fn phi(a: Point, b: Point) -> Result<f64> {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("phi of a zero vector"));
    }
    let kappa = a.dot(b) / (na * nb);
    // sqrt(1 - kappa^2) from the cross product keeps precision near ±1.
    let sin_ab = a.cross(b).abs() / (na * nb);
    if sin_ab < COLLINEAR_EPS {
        return Err(Error::singular("phi: arguments are collinear"));
    }
    Ok((kappa - na / nb) / sin_ab)
}

/// Gradient of `x ↦ phi(x - s, d - s)`.
pub fn grad_phi(x: Point, s: Point, d: Point) -> Result<Point> {
    let a = x - s;
    let b = d - s;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("grad_phi at the source or with s = d"));
    }
    let us = a * (1.0 / na);
    let ud = b * (1.0 / nb);
    let kappa = us.dot(ud);
    let sin_ab = us.cross(ud).abs();
    if sin_ab < COLLINEAR_EPS {
        return Err(Error::singular("grad_phi: x lies on the line through s and d"));
    }
    let rho = na / nb;
    let tangential = (ud - us * kappa) * ((1.0 - rho * kappa) / (na * sin_ab.powi(3)));
    let radial = us * (rho / (na * sin_ab));
    Ok(tangential - radial)
}

/// Unsigned angle between the incoming direction `x - s` and the outgoing
/// direction `d - x`, in [0, π].
pub fn scatter_angle(x: Point, s: Point, d: Point) -> Result<f64> {
    let a = x - s;
    let b = d - x;
    if a.norm_sq() == 0.0 || b.norm_sq() == 0.0 {
        return Err(Error::domain("scatter point coincides with source or detector"));
    }
    Ok(unsigned_angle(a, b))
}

/// Angle between two nonzero vectors via atan2, accurate near 0 and π.
#[inline]
pub(crate) fn unsigned_angle(a: Point, b: Point) -> f64 {
    a.cross(b).abs().atan2(a.dot(b))
}

/// Sample both branches of the locus of `arc`, clipped to the support disk.
/// Each returned point carries the arc length it represents.
pub fn arc_sample(arc: &ArcSpec, geometry: &ScanGeometry, step: f64) -> Result<Vec<(Point, f64)>> {
    if !(step > 0.0) {
        return Err(Error::domain("arc sampling step must be positive"));
    }
    let s = arc.source;
    let d = arc.detector;
    let chord = d - s;
    let len = chord.norm();
    let mid = (s + d) * 0.5;
    let normal = chord.perp().normalized();
    let radius = len / (2.0 * arc.omega.sin());
    let support_sq = geometry.support_radius * geometry.support_radius;
    let mut out = Vec::new();
    for side in [1.0, -1.0] {
        // Interior angle at x is π - ω; the center moves against the branch
        // when the arc is the minor one (ω < π/2).
        let center = mid - normal * (side * 0.5 * len / arc.omega.tan());
        let ts = (s - center).angle();
        let td = (d - center).angle();
        // Sweep from s to d through the side of the branch.
        let mut sweep = td - ts;
        let probe = |t: f64| center + Point::from_angle(t) * radius;
        let mid_t = ts + 0.5 * sweep.rem_euclid(2.0 * PI);
        if (probe(mid_t) - mid).dot(normal) * side > 0.0 {
            sweep = sweep.rem_euclid(2.0 * PI);
        } else {
            sweep = sweep.rem_euclid(2.0 * PI) - 2.0 * PI;
        }
        let arc_len = sweep.abs() * radius;
        let n = (arc_len / step).ceil().max(1.0) as usize;
        let dt = sweep / n as f64;
        let w = dt.abs() * radius;
        for k in 0..n {
            let p = probe(ts + (k as f64 + 0.5) * dt);
            if p.norm_sq() <= support_sq {
                out.push((p, w));
            }
        }
    }
    Ok(out)
}

/// Default exclusion radius around the first site, in geometry units.
pub const DEFAULT_EPS_R: f64 = 1e-3;

/// Second scattering site reached from `x` with first angle `omega1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondScatterResult {
    pub y: Point,
    /// Signed distance from `x` along the outgoing ray.
    pub r: f64,
    /// `∂r/∂ω1`; filled by [`second_scatter_with_derivative`], NaN otherwise.
    pub dr_domega1: f64,
    pub valid: bool,
}

/// Local frame of a first scattering site shared by the closed forms below.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SiteFrame {
    /// Angle of `x - s`.
    pub beta: f64,
    /// Unit vector `(d - x)/|d - x|`, i.e. the second column of `R`.
    pub to_detector: Point,
    pub dist_detector: f64,
}

impl SiteFrame {
    #[inline]
    pub fn new(s: Point, x: Point, d: Point) -> Self {
        let to_d = d - x;
        let dist = to_d.norm();
        SiteFrame {
            beta: (x - s).angle(),
            to_detector: to_d * (1.0 / dist),
            dist_detector: dist,
        }
    }

    /// Outgoing unit direction for signed first angle `omega1`.
    #[inline]
    pub fn direction(&self, omega1: f64) -> Point {
        let t = omega1 - self.beta + FRAC_PI_2;
        Point::new(t.sin(), t.cos())
    }

    /// `(η2, ∂η2/∂ω1)`.
    #[inline]
    pub fn eta2(&self, omega1: f64) -> (f64, f64) {
        let t = omega1 - self.beta + FRAC_PI_2;
        let (st, ct) = t.sin_cos();
        let (r12, r22) = (self.to_detector.x, self.to_detector.y);
        (r12 * st + r22 * ct, r12 * ct - r22 * st)
    }

    /// Distance to the second site for given `η2` and `cot ω2`.
    #[inline]
    pub fn distance(&self, eta2: f64, cot_omega2: f64) -> f64 {
        self.dist_detector * (eta2 - cot_omega2 * (1.0 - eta2 * eta2).max(0.0).sqrt())
    }
}

/// Rotation `R` mapping `(0, 1)` onto the unit vector `e`, as rows.
pub fn rotation_to(e: Point) -> [[f64; 2]; 2] {
    [[e.y, e.x], [-e.x, e.y]]
}

/// Second scattering site for source `s`, first site `x`, detector `d`,
/// signed first angle `omega1` and second angle `omega2`. The result is
/// flagged invalid when `r <= eps_r`.
pub fn second_scatter_point(
    s: Point,
    x: Point,
    d: Point,
    omega1: f64,
    omega2: f64,
    eps_r: f64,
) -> Result<SecondScatterResult> {
    if (x - s).norm_sq() == 0.0 || (d - x).norm_sq() == 0.0 {
        return Err(Error::domain("first site coincides with source or detector"));
    }
    let frame = SiteFrame::new(s, x, d);
    let (eta2, _) = frame.eta2(omega1);
    let r = frame.distance(eta2, 1.0 / omega2.tan());
    let valid = r > eps_r;
    let y = x + frame.direction(omega1) * r;
    Ok(SecondScatterResult {
        y,
        r,
        dr_domega1: f64::NAN,
        valid,
    })
}

/// `∂r/∂ω1` along the family `ω2(ω1) = arccos(λ - cos ω1)`.
pub fn dr_domega1(s: Point, x: Point, d: Point, omega1: f64, lambda: f64) -> Result<f64> {
    let omega2 = crate::physics::omega2_of_omega1(omega1, lambda)
        .ok_or_else(|| Error::OutOfRange(format!("no second angle for ω1={omega1}, λ={lambda}")))?;
    let frame = SiteFrame::new(s, x, d);
    let (a, b) = dr_domega1_terms(&frame, omega1, omega2)?;
    Ok(a + b)
}

/// The two additive parts of `∂r/∂ω1`: the change of direction relative to
/// the detector (through `η2`) and the change of the second angle.
pub(crate) fn dr_domega1_terms(frame: &SiteFrame, omega1: f64, omega2: f64) -> Result<(f64, f64)> {
    let sin2 = omega2.sin();
    if sin2.abs() < 1e-9 {
        return Err(Error::singular("sin ω2 vanishes"));
    }
    let (eta2, deta2) = frame.eta2(omega1);
    let root = (1.0 - eta2 * eta2).max(0.0).sqrt();
    if root < 1e-12 {
        return Err(Error::singular("outgoing ray points at the detector"));
    }
    let cot2 = omega2.cos() / sin2;
    let direction_term = frame.dist_detector * deta2 * (1.0 + cot2 * eta2 / root);
    let angle_term = -frame.dist_detector * omega1.sin() / sin2.powi(3) * root;
    Ok((direction_term, angle_term))
}

/// Second site together with `∂r/∂ω1` for the family fixed by `lambda`.
pub fn second_scatter_with_derivative(
    s: Point,
    x: Point,
    d: Point,
    omega1: f64,
    lambda: f64,
    eps_r: f64,
) -> Result<SecondScatterResult> {
    let omega2 = crate::physics::omega2_of_omega1(omega1, lambda)
        .ok_or_else(|| Error::OutOfRange(format!("no second angle for ω1={omega1}, λ={lambda}")))?;
    let mut res = second_scatter_point(s, x, d, omega1, omega2, eps_r)?;
    let frame = SiteFrame::new(s, x, d);
    let (a, b) = dr_domega1_terms(&frame, omega1, omega2)?;
    res.dr_domega1 = a + b;
    Ok(res)
}

/// Arc-length density `|∂y/∂ω1| = sqrt(r² + (∂r/∂ω1)²)`.
#[inline]
pub fn line_element(r: f64, dr_domega1: f64) -> f64 {
    r.hypot(dr_domega1)
}

/// Whether `x` satisfies the immersion condition for every source and fan
/// angle of `geometry`: writing `x - s = r(cos ξ, sin ξ)` in the frame of the
/// source, `r ≠ t(θ)cos(θ-ξ) - t'(θ)sin(θ-ξ)`. For detectors on the unit
/// circle this fails exactly on the circle itself.
pub fn immersion_condition(x: Point, geometry: &ScanGeometry) -> bool {
    const TOL: f64 = 1e-9;
    for i in 0..geometry.n_sources() {
        let s = geometry.source(i);
        let a = x - s;
        let r = a.norm();
        if r < TOL {
            return false;
        }
        // Frame where the inward normal at s is the zero angle.
        let xi = a.angle() - (-s).angle();
        for &theta in &geometry.fan_angles {
            let rhs = fan_length(theta) * (theta - xi).cos() - fan_length_derivative(theta) * (theta - xi).sin();
            if (r - rhs).abs() <= TOL * r.max(1.0) {
                return false;
            }
        }
    }
    true
}
