//! Induced action of a diffeomorphism `h` on scalars, densities and vector
//! fields, and the matching equivariance checks.
//!
//! ```text
//! f_h(p)   = f(h^-1(p))
//! rho_h(p) = rho(h^-1(p)) |det J_{h^-1}(p)|
//! V_h(p)   = J_h(h^-1(p)) V(h^-1(p))
//! ```
//!
//! Jacobians are central finite differences with step [`JAC_EPS`]. On the
//! sphere densities are taken with respect to `dtheta dphi`.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::manifold::{det2, mat_vec, Geometry, GroupElement, Mat2, Point, TangentVector};
use crate::models::{Diffeomorphism, Region};

pub const JAC_EPS: f64 = 1e-5;

/// Below this `|det J|` a density evaluation is flagged as degenerate.
pub const DEGENERATE_DET: f64 = 1e-12;

type Eval<'a, T> = Box<dyn Fn(&Point) -> Result<T> + Send + Sync + 'a>;

pub struct ScalarField<'a> {
    pub label: String,
    eval: Eval<'a, f64>,
}

impl<'a> ScalarField<'a> {
    pub fn new(label: impl Into<String>, f: impl Fn(&Point) -> f64 + Send + Sync + 'a) -> Self {
        ScalarField {
            label: label.into(),
            eval: Box::new(move |p| Ok(f(p))),
        }
    }

    pub fn eval(&self, p: &Point) -> Result<f64> {
        (self.eval)(p)
    }
}

pub struct Density<'a> {
    pub label: String,
    eval: Eval<'a, f64>,
    degenerate: AtomicUsize,
}

impl<'a> Density<'a> {
    pub fn new(label: impl Into<String>, f: impl Fn(&Point) -> f64 + Send + Sync + 'a) -> Self {
        Density {
            label: label.into(),
            eval: Box::new(move |p| Ok(f(p))),
            degenerate: AtomicUsize::new(0),
        }
    }

    /// `exp(-r^2 / 2) / 2pi` on the plane.
    pub fn standard_gaussian() -> Density<'static> {
        Density::new("gaussian", |p| {
            (-(p[0] * p[0] + p[1] * p[1]) / 2.0).exp() / (2.0 * PI)
        })
    }

    pub fn eval(&self, p: &Point) -> Result<f64> {
        (self.eval)(p)
    }

    /// Evaluations whose Jacobian determinant fell below [`DEGENERATE_DET`].
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.load(Ordering::Relaxed)
    }
}

pub struct VectorFieldOnM<'a> {
    pub label: String,
    eval: Eval<'a, [f64; 2]>,
}

impl<'a> VectorFieldOnM<'a> {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(&Point) -> [f64; 2] + Send + Sync + 'a,
    ) -> Self {
        VectorFieldOnM {
            label: label.into(),
            eval: Box::new(move |p| Ok(f(p))),
        }
    }

    pub fn eval(&self, p: &Point) -> Result<[f64; 2]> {
        (self.eval)(p)
    }
}

/// Central finite-difference Jacobian of a chart map.
pub fn map_jacobian(
    geometry: Geometry,
    map: impl Fn(&Point) -> Result<Point>,
    point: &Point,
    eps: f64,
) -> Result<Mat2> {
    let mut jac = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut plus = *point;
        let mut minus = *point;
        plus[j] += eps;
        minus[j] -= eps;
        let d = geometry.chart_diff(&map(&plus)?, &map(&minus)?);
        jac[0][j] = d[0] / (2.0 * eps);
        jac[1][j] = d[1] / (2.0 * eps);
    }
    Ok(jac)
}

pub fn transform_scalar<'a, D: Diffeomorphism + Sync + ?Sized>(
    model: &'a D,
    f: &'a ScalarField<'_>,
) -> ScalarField<'a> {
    ScalarField {
        label: format!("{}_h", f.label),
        eval: Box::new(move |p| {
            if model.is_identity() {
                return f.eval(p);
            }
            f.eval(&model.apply_inverse(p)?)
        }),
    }
}

pub fn transform_density<'a, D: Diffeomorphism + Sync + ?Sized>(
    model: &'a D,
    rho: &'a Density<'_>,
) -> Density<'a> {
    Density {
        label: format!("{}_h", rho.label),
        eval: Box::new(move |p| {
            if model.is_identity() {
                return rho.eval(p);
            }
            let pre = model.apply_inverse(p)?;
            let jac = map_jacobian(model.geometry(), |q| model.apply_inverse(q), p, JAC_EPS)?;
            let det = det2(&jac).abs();
            if det < DEGENERATE_DET {
                // the counter lives on the input density so nested
                // transforms report into one place
                rho.degenerate.fetch_add(1, Ordering::Relaxed);
            }
            Ok(rho.eval(&pre)? * det)
        }),
        degenerate: AtomicUsize::new(0),
    }
}

pub fn transform_vector<'a, D: Diffeomorphism + Sync + ?Sized>(
    model: &'a D,
    v: &'a VectorFieldOnM<'_>,
) -> VectorFieldOnM<'a> {
    VectorFieldOnM {
        label: format!("{}_h", v.label),
        eval: Box::new(move |p| {
            if model.is_identity() {
                return v.eval(p);
            }
            let pre = model.apply_inverse(p)?;
            let jac = map_jacobian(model.geometry(), |q| model.apply(q), &pre, JAC_EPS)?;
            Ok(mat_vec(&jac, v.eval(&pre)?))
        }),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldEquivarianceReport {
    pub samples: usize,
    pub tol: f64,
    /// Worst violation by the input field itself.
    pub input_residual: f64,
    pub input_pass: bool,
    /// Worst violation by the transformed field.
    pub induced_residual: f64,
    pub pass: bool,
    pub failures: usize,
    pub degenerate_jacobians: usize,
}

fn density_residual(
    geometry: Geometry,
    rho: &Density<'_>,
    g: GroupElement,
    p: &Point,
) -> Result<f64> {
    let inv = g.inverse();
    let moved = geometry.act(inv, p)?;
    let det = det2(&geometry.action_jacobian(inv, p)?).abs();
    Ok((rho.eval(p)? - rho.eval(&moved)? * det).abs())
}

fn sample_pairs(
    geometry: Geometry,
    region: Region,
    n: usize,
    seed: u64,
) -> Vec<(GroupElement, Point)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = region.sample(geometry, &mut rng);
            (GroupElement(rng.gen_range(-PI..PI)), p)
        })
        .collect()
}

fn worst(values: impl Iterator<Item = Result<f64>>, failures: &mut usize) -> f64 {
    values
        .map(|v| {
            v.unwrap_or_else(|_| {
                *failures += 1;
                f64::INFINITY
            })
        })
        .fold(0.0, f64::max)
}

/// Checks `rho(p) = rho(L_g^-1 p) |det J_{L_g^-1}(p)|` for the input density
/// and for its transform by `model`.
pub fn check_density_equivariance<D: Diffeomorphism + Sync + ?Sized>(
    geometry: Geometry,
    rho: &Density<'_>,
    model: &D,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> FieldEquivarianceReport {
    check_density_equivariance_in(
        geometry,
        rho,
        model,
        Region::default_for(geometry),
        n_samples,
        tol,
        seed,
    )
}

/// As [`check_density_equivariance`], sampling from `region` (which must lie
/// in the image of `model`).
pub fn check_density_equivariance_in<D: Diffeomorphism + Sync + ?Sized>(
    geometry: Geometry,
    rho: &Density<'_>,
    model: &D,
    region: Region,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> FieldEquivarianceReport {
    let pairs = sample_pairs(geometry, region, n_samples, seed);
    let mut failures = 0;
    let input = worst(
        pairs
            .iter()
            .map(|(g, p)| density_residual(geometry, rho, *g, p)),
        &mut failures,
    );
    let rho_h = transform_density(model, rho);
    let induced = worst(
        pairs
            .iter()
            .map(|(g, p)| density_residual(geometry, &rho_h, *g, p)),
        &mut failures,
    );
    FieldEquivarianceReport {
        samples: n_samples,
        tol,
        input_residual: input,
        input_pass: input < tol,
        induced_residual: induced,
        pass: input < tol && induced < tol,
        failures,
        degenerate_jacobians: rho.degenerate_count(),
    }
}

fn vector_residual(
    geometry: Geometry,
    v: &VectorFieldOnM<'_>,
    g: GroupElement,
    p: &Point,
) -> Result<f64> {
    let at_moved = v.eval(&geometry.act(g, p)?)?;
    let pushed = geometry.pushforward(
        g,
        &TangentVector {
            base: *p,
            components: v.eval(p)?,
        },
    )?;
    Ok((at_moved[0] - pushed.components[0]).hypot(at_moved[1] - pushed.components[1]))
}

/// Checks `V(L_g p) = (L_g)_* V(p)` for `V` and for its pushforward along
/// `model`.
pub fn check_vector_equivariance<D: Diffeomorphism + Sync + ?Sized>(
    geometry: Geometry,
    v: &VectorFieldOnM<'_>,
    model: &D,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> FieldEquivarianceReport {
    check_vector_equivariance_in(
        geometry,
        v,
        model,
        Region::default_for(geometry),
        n_samples,
        tol,
        seed,
    )
}

/// As [`check_vector_equivariance`], sampling from `region`.
pub fn check_vector_equivariance_in<D: Diffeomorphism + Sync + ?Sized>(
    geometry: Geometry,
    v: &VectorFieldOnM<'_>,
    model: &D,
    region: Region,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> FieldEquivarianceReport {
    let pairs = sample_pairs(geometry, region, n_samples, seed);
    let mut failures = 0;
    let input = worst(
        pairs
            .iter()
            .map(|(g, p)| vector_residual(geometry, v, *g, p)),
        &mut failures,
    );
    let v_h = transform_vector(model, v);
    let induced = worst(
        pairs
            .iter()
            .map(|(g, p)| vector_residual(geometry, &v_h, *g, p)),
        &mut failures,
    );
    FieldEquivarianceReport {
        samples: n_samples,
        tol,
        input_residual: input,
        input_pass: input < tol,
        induced_residual: induced,
        pass: input < tol && induced < tol,
        failures,
        degenerate_jacobians: 0,
    }
}

/// `outer o inner`.
pub struct Composed<'a, A: ?Sized, B: ?Sized> {
    pub inner: &'a A,
    pub outer: &'a B,
}

impl<A: Diffeomorphism + ?Sized, B: Diffeomorphism + ?Sized> Diffeomorphism for Composed<'_, A, B> {
    fn geometry(&self) -> Geometry {
        self.inner.geometry()
    }

    fn apply(&self, p: &Point) -> Result<Point> {
        self.outer.apply(&self.inner.apply(p)?)
    }

    fn apply_inverse(&self, p: &Point) -> Result<Point> {
        self.inner.apply_inverse(&self.outer.apply_inverse(p)?)
    }

    fn is_identity(&self) -> bool {
        self.inner.is_identity() && self.outer.is_identity()
    }
}
