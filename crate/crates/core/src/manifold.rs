//! Chart-based geometries carrying an SO(2) action.
//!
//! Both registered geometries are two-dimensional and covered by a single
//! chart: the punctured plane in Cartesian coordinates `(x, y)` and the
//! sphere in polar/azimuthal coordinates `(theta, phi)`. The group element
//! is a rotation angle; on the plane it rotates about the origin, on the
//! sphere it shifts the azimuth.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A chart point. Both geometries have chart dimension two.
pub type Point = [f64; 2];

/// A 2x2 matrix stored row-major.
pub type Mat2 = [[f64; 2]; 2];

/// Smallest admissible radius on the punctured plane.
pub const R_MIN: f64 = 1e-3;

/// Distance kept from either pole on the sphere chart.
pub const THETA_MIN: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Geometry {
    #[serde(rename = "r2-so2")]
    R2Punctured,
    #[serde(rename = "s2-so2")]
    Sphere2,
}

/// Rotation angle, the single parameter of SO(2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElement(pub f64);

impl GroupElement {
    pub fn identity() -> Self {
        GroupElement(0.0)
    }

    pub fn inverse(self) -> Self {
        GroupElement(-self.0)
    }

    pub fn compose(self, other: Self) -> Self {
        GroupElement(self.0 + other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub base: Point,
    pub components: [f64; 2],
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_angle(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed circular difference `a - b` mapped into `(-pi, pi]`.
pub fn circular_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

pub(crate) fn rotation(eps: f64) -> Mat2 {
    let (s, c) = eps.sin_cos();
    [[c, -s], [s, c]]
}

pub(crate) fn mat_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

impl Geometry {
    pub const ALL: [Geometry; 2] = [Geometry::R2Punctured, Geometry::Sphere2];

    pub fn dim(self) -> usize {
        2
    }

    pub fn id(self) -> &'static str {
        match self {
            Geometry::R2Punctured => "r2-so2",
            Geometry::Sphere2 => "s2-so2",
        }
    }

    /// Coordinate names used in CSV headers.
    pub fn coordinate_names(self) -> [&'static str; 2] {
        match self {
            Geometry::R2Punctured => ["x", "y"],
            Geometry::Sphere2 => ["theta", "phi"],
        }
    }

    /// Brings a point into canonical chart form (wraps `phi` on the sphere).
    pub fn canonicalize(self, p: Point) -> Point {
        match self {
            Geometry::R2Punctured => p,
            Geometry::Sphere2 => [p[0], wrap_angle(p[1])],
        }
    }

    pub fn contains(self, p: &Point) -> bool {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return false;
        }
        match self {
            Geometry::R2Punctured => p[0].hypot(p[1]) >= R_MIN,
            Geometry::Sphere2 => p[0] > THETA_MIN && p[0] < PI - THETA_MIN,
        }
    }

    pub(crate) fn guard(self, p: &Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::Domain {
                geometry: self.id(),
                point: p.to_vec(),
            })
        }
    }

    /// The left action `L_g` on chart points.
    pub fn act(self, g: GroupElement, p: &Point) -> Result<Point> {
        self.guard(p)?;
        Ok(self.act_unchecked(g, p))
    }

    pub(crate) fn act_unchecked(self, g: GroupElement, p: &Point) -> Point {
        match self {
            Geometry::R2Punctured => mat_vec(&rotation(g.0), *p),
            Geometry::Sphere2 => [p[0], wrap_angle(p[1] + g.0)],
        }
    }

    /// Analytic chart Jacobian of `p -> L_g p`.
    pub fn action_jacobian(self, g: GroupElement, p: &Point) -> Result<Mat2> {
        self.guard(p)?;
        Ok(self.linear_part(g))
    }

    /// Both registered actions have point-independent chart Jacobians.
    pub(crate) fn linear_part(self, g: GroupElement) -> Mat2 {
        match self {
            Geometry::R2Punctured => rotation(g.0),
            Geometry::Sphere2 => [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    /// Central finite-difference Jacobian of the action, as a cross-check of
    /// [`Geometry::action_jacobian`]. The azimuthal difference is taken on
    /// the circle so that wrapping does not pollute the quotient.
    pub fn action_jacobian_fd(self, g: GroupElement, p: &Point, h: f64) -> Result<Mat2> {
        self.guard(p)?;
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut plus = *p;
            let mut minus = *p;
            plus[j] += h;
            minus[j] -= h;
            let fp = self.act_unchecked(g, &plus);
            let fm = self.act_unchecked(g, &minus);
            for i in 0..2 {
                let diff = if self == Geometry::Sphere2 && i == 1 {
                    circular_diff(fp[i], fm[i])
                } else {
                    fp[i] - fm[i]
                };
                jac[i][j] = diff / (2.0 * h);
            }
        }
        Ok(jac)
    }

    /// Pushforward `(L_g)_*` of a tangent vector.
    pub fn pushforward(self, g: GroupElement, v: &TangentVector) -> Result<TangentVector> {
        let base = self.act(g, &v.base)?;
        Ok(TangentVector {
            base,
            components: mat_vec(&self.linear_part(g), v.components),
        })
    }

    /// Infinitesimal generator of the SO(2) action evaluated at `p`.
    pub fn generator_value(self, p: &Point) -> Result<TangentVector> {
        self.guard(p)?;
        let components = match self {
            Geometry::R2Punctured => [-p[1], p[0]],
            Geometry::Sphere2 => [0.0, 1.0],
        };
        Ok(TangentVector {
            base: *p,
            components,
        })
    }

    /// Difference `a - b` measured in the chart, circular in `phi`.
    pub fn chart_diff(self, a: &Point, b: &Point) -> [f64; 2] {
        match self {
            Geometry::R2Punctured => [a[0] - b[0], a[1] - b[1]],
            Geometry::Sphere2 => [a[0] - b[0], circular_diff(a[1], b[1])],
        }
    }

    pub fn chart_distance(self, a: &Point, b: &Point) -> f64 {
        let d = self.chart_diff(a, b);
        d[0].hypot(d[1])
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r2-so2" | "r2" => Ok(Geometry::R2Punctured),
            "s2-so2" | "s2" | "sphere" => Ok(Geometry::Sphere2),
            other => Err(Error::Config(format!("unknown geometry {other:?}"))),
        }
    }
}
