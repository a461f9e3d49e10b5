//! Jet points, prolonged generators and numeric invariance checks.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{mat_vec, Geometry, GroupElement, Point};

/// Step for first-order jet-space partials.
pub const H_JET: f64 = 1e-5;

/// Step for the second directional difference of the generator that enters
/// the second prolongation. A nested `H_JET` stencil would lose ~1e-6 to
/// rounding.
const H_SECOND: f64 = 1e-3;

/// A point of the first or second jet space: time, position and derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JetPoint {
    pub t: f64,
    pub u: Point,
    pub du: [f64; 2],
    pub ddu: Option<[f64; 2]>,
}

impl JetPoint {
    pub fn first(t: f64, u: Point, du: [f64; 2]) -> Self {
        JetPoint {
            t,
            u,
            du,
            ddu: None,
        }
    }

    pub fn second(t: f64, u: Point, du: [f64; 2], ddu: [f64; 2]) -> Self {
        JetPoint {
            t,
            u,
            du,
            ddu: Some(ddu),
        }
    }

    pub fn order(&self) -> usize {
        if self.ddu.is_some() {
            2
        } else {
            1
        }
    }

    /// Second derivative, zero when the jet is first order.
    pub fn ddu_or_zero(&self) -> [f64; 2] {
        self.ddu.unwrap_or([0.0, 0.0])
    }

    /// Dependent coordinates `(u, du[, ddu])` as a flat vector.
    pub fn coords(&self) -> Vec<f64> {
        let mut v = vec![self.u[0], self.u[1], self.du[0], self.du[1]];
        if let Some(dd) = self.ddu {
            v.extend_from_slice(&dd);
        }
        v
    }

    fn with_coords(&self, c: &[f64]) -> Self {
        JetPoint {
            t: self.t,
            u: [c[0], c[1]],
            du: [c[2], c[3]],
            ddu: self.ddu.map(|_| [c[4], c[5]]),
        }
    }
}

/// A scalar function on jet space together with its label and order.
#[derive(Clone)]
pub struct InvariantFn {
    pub label: String,
    pub order: usize,
    eval: Arc<dyn Fn(&JetPoint) -> f64 + Send + Sync>,
}

impl InvariantFn {
    pub fn new(
        label: impl Into<String>,
        order: usize,
        eval: impl Fn(&JetPoint) -> f64 + Send + Sync + 'static,
    ) -> Self {
        InvariantFn {
            label: label.into(),
            order,
            eval: Arc::new(eval),
        }
    }

    pub fn eval(&self, jet: &JetPoint) -> f64 {
        (self.eval)(jet)
    }
}

impl fmt::Debug for InvariantFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InvariantFn")
            .field("label", &self.label)
            .field("order", &self.order)
            .finish()
    }
}

/// Prolonged action: the group acts on `u` and, through its chart Jacobian,
/// on every derivative. Time is left untouched.
pub fn prolonged_action(geometry: Geometry, g: GroupElement, jet: &JetPoint) -> Result<JetPoint> {
    let u = geometry.act(g, &jet.u)?;
    let lin = geometry.linear_part(g);
    Ok(JetPoint {
        t: jet.t,
        u,
        du: mat_vec(&lin, jet.du),
        ddu: jet.ddu.map(|dd| mat_vec(&lin, dd)),
    })
}

fn generator_at(geometry: Geometry, u: Point) -> [f64; 2] {
    match geometry {
        Geometry::R2Punctured => [-u[1], u[0]],
        Geometry::Sphere2 => [0.0, 1.0],
    }
}

fn directional(geometry: Geometry, u: Point, dir: [f64; 2], h: f64) -> [f64; 2] {
    let plus = generator_at(geometry, [u[0] + h * dir[0], u[1] + h * dir[1]]);
    let minus = generator_at(geometry, [u[0] - h * dir[0], u[1] - h * dir[1]]);
    [
        (plus[0] - minus[0]) / (2.0 * h),
        (plus[1] - minus[1]) / (2.0 * h),
    ]
}

/// Coefficients `(eta, eta1[, eta2])` of the prolonged generator at `jet`,
/// built by the total-derivative recursion with finite-difference partials.
pub fn prolong_generator(geometry: Geometry, jet: &JetPoint, order: usize) -> Result<Vec<f64>> {
    if order == 0 || order > 2 {
        return Err(Error::Shape(format!(
            "prolongation order {order} not in 1..=2"
        )));
    }
    if jet.order() < order {
        return Err(Error::Shape(format!(
            "jet of order {} cannot carry an order-{order} prolongation",
            jet.order()
        )));
    }
    geometry.guard(&jet.u)?;
    let u = jet.u;
    let eta = generator_at(geometry, u);
    // eta1 = (d eta / du) . du
    let eta1 = directional(geometry, u, jet.du, H_JET);
    let mut out = vec![eta[0], eta[1], eta1[0], eta1[1]];
    if order == 2 {
        let dd = jet.ddu_or_zero();
        // d eta1/du . du = second directional derivative of eta along du
        let s = H_SECOND;
        let fp = generator_at(geometry, [u[0] + s * jet.du[0], u[1] + s * jet.du[1]]);
        let fm = generator_at(geometry, [u[0] - s * jet.du[0], u[1] - s * jet.du[1]]);
        let curv = [
            (fp[0] - 2.0 * eta[0] + fm[0]) / (s * s),
            (fp[1] - 2.0 * eta[1] + fm[1]) / (s * s),
        ];
        // d eta1/d(du) . ddu = (d eta/du) . ddu
        let lin = directional(geometry, u, dd, H_JET);
        out.push(curv[0] + lin[0]);
        out.push(curv[1] + lin[1]);
    }
    Ok(out)
}

/// `X^(k)(I)`: derivative of `inv` along the prolonged generator, by a
/// central difference of step `H_JET` in the generator direction.
pub fn apply_prolonged(geometry: Geometry, inv: &InvariantFn, jet: &JetPoint) -> Result<f64> {
    if inv.order > jet.order() {
        return Err(Error::Shape(format!(
            "invariant {} has order {} but jet has order {}",
            inv.label,
            inv.order,
            jet.order()
        )));
    }
    let xi = prolong_generator(geometry, jet, jet.order())?;
    let z = jet.coords();
    let h = H_JET;
    let plus: Vec<f64> = z.iter().zip(&xi).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = z.iter().zip(&xi).map(|(a, b)| a - h * b).collect();
    Ok((inv.eval(&jet.with_coords(&plus)) - inv.eval(&jet.with_coords(&minus))) / (2.0 * h))
}

#[derive(Debug, Clone, Serialize)]
pub struct Offender {
    pub label: String,
    pub value: f64,
    pub jet: JetPoint,
    pub test: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    pub geometry: Geometry,
    pub order: usize,
    pub samples: usize,
    pub tol: f64,
    /// Largest `|X^(k)(I)|` over all samples and members.
    pub max_infinitesimal: f64,
    /// Largest `|I(L_g z) - I(z)|` over all samples, rotations and members.
    pub max_finite: f64,
    pub max_abs: f64,
    pub pass: bool,
    pub worst: Option<Offender>,
}

/// Random jet inside the documented sampling box of `geometry`.
pub fn sample_jet(geometry: Geometry, order: usize, rng: &mut impl Rng) -> JetPoint {
    let u = match geometry {
        Geometry::R2Punctured => {
            let r = rng.gen_range(0.2..3.0);
            let a = rng.gen_range(0.0..TAU);
            [r * a.cos(), r * a.sin()]
        }
        Geometry::Sphere2 => [rng.gen_range(0.2..PI - 0.2), rng.gen_range(0.0..TAU)],
    };
    let mut d = || rng.gen_range(-2.0..2.0);
    let du = [d(), d()];
    let t = d();
    let ddu = (order >= 2).then(|| [d(), d()]);
    JetPoint { t, u, du, ddu }
}

/// Samples jets and checks both the infinitesimal criterion `X^(k)(I) = 0`
/// and finite invariance under ten random rotations per jet.
pub fn check_invariance(
    geometry: Geometry,
    members: &[InvariantFn],
    order: usize,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<InvarianceReport> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_inf = 0.0f64;
    let mut max_fin = 0.0f64;
    let mut worst: Option<Offender> = None;
    let note = |label: &str, value: f64, jet: &JetPoint, test, worst: &mut Option<Offender>| {
        let v = if value.is_finite() {
            value.abs()
        } else {
            f64::INFINITY
        };
        if worst.as_ref().map_or(true, |w| v > w.value) {
            *worst = Some(Offender {
                label: label.to_string(),
                value: v,
                jet: *jet,
                test,
            });
        }
        v
    };
    for _ in 0..n_samples {
        let jet = sample_jet(geometry, order, &mut rng);
        let rotations: Vec<GroupElement> = (0..10)
            .map(|_| GroupElement(rng.gen_range(-PI..PI)))
            .collect();
        for inv in members {
            let inf = apply_prolonged(geometry, inv, &jet)?;
            max_inf = max_inf.max(note(&inv.label, inf, &jet, "infinitesimal", &mut worst));
            let base = inv.eval(&jet);
            for &g in &rotations {
                let moved = prolonged_action(geometry, g, &jet)?;
                let diff = inv.eval(&moved) - base;
                max_fin = max_fin.max(note(&inv.label, diff, &jet, "finite", &mut worst));
            }
        }
    }
    let max_abs = max_inf.max(max_fin);
    Ok(InvarianceReport {
        geometry,
        order,
        samples: n_samples,
        tol,
        max_infinitesimal: max_inf,
        max_finite: max_fin,
        max_abs,
        pass: max_abs < tol,
        worst,
    })
}
