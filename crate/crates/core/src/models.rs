//! Invariant-parameterized equivariant vector fields and the diffeomorphisms
//! they generate.
//!
//! A plain model on the punctured plane integrates
//!
//! ```text
//! xd = A(r) x - B(r) y
//! yd = B(r) x + A(r) y
//! ```
//!
//! and on the sphere `thetad = A(theta)`, `phid = B(theta)`. The augmented
//! model lives on the tangent bundle: the state is `(u, ud)`, the field is
//! `(ud, psi)`, and `A`, `B` see the first-order invariants
//! `(r, r rdot, r^2 thetadot)`. Since `A` and `B` only ever see invariants
//! and multiply an equivariant frame, every parameter vector gives an
//! equivariant map.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invariants::SetLabel;
use crate::manifold::{wrap_angle, Geometry, GroupElement, Point, R_MIN, THETA_MIN};
use crate::net::{forward, init, MlpSpec, ParamVector};
use crate::odeint::{integrate, Trajectory, VectorField};
use crate::tape::{Tape, Var};

/// Default integrator steps over `[0, 1]`.
pub const DEFAULT_STEPS: usize = 20;

/// Default radial speed of the lift used by the velocity frame.
pub const DEFAULT_DELTA_KICK: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Plain,
    Augmented,
}

impl ModelKind {
    pub fn invariant_order(self) -> usize {
        match self {
            ModelKind::Plain => 1,
            ModelKind::Augmented => 2,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            ModelKind::Plain => 2,
            ModelKind::Augmented => 4,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Plain => "plain",
            ModelKind::Augmented => "augmented",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(ModelKind::Plain),
            "augmented" => Ok(ModelKind::Augmented),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Equivariant frame multiplying `A` and `B` in the augmented acceleration
/// on the plane.
///
/// * `Position`: `psi = A u + B u_perp`. Complete because `u != 0` on the
///   punctured plane, and the lift `ud(0) = 0` is non-degenerate.
/// * `Velocity`: `psi = A ud + B ud_perp`. Vanishes at `ud = 0`, so the lift
///   starts from the radial kick `ud(0) = delta u / r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Position,
    #[default]
    Velocity,
}

impl FromStr for Frame {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "position" => Ok(Frame::Position),
            "velocity" => Ok(Frame::Velocity),
            other => Err(Error::Config(format!("unknown frame {other:?}"))),
        }
    }
}

/// Source of the two free functions `(A, B)` evaluated on invariant inputs.
pub trait Coefficients {
    fn coefficients(&self, inputs: &[f64]) -> (f64, f64);

    /// True when both functions vanish identically.
    fn is_zero(&self) -> bool {
        false
    }
}

/// `(A, B)` given as a closure; used for closed-form reference maps.
pub struct ClosedForm<F>(pub F);

impl<F: Fn(&[f64]) -> (f64, f64)> Coefficients for ClosedForm<F> {
    fn coefficients(&self, inputs: &[f64]) -> (f64, f64) {
        (self.0)(inputs)
    }
}

/// The two networks of a trainable model.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPair {
    pub spec_a: MlpSpec,
    pub spec_b: MlpSpec,
    pub params_a: ParamVector,
    pub params_b: ParamVector,
}

impl NetworkPair {
    pub fn init(in_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let spec = MlpSpec::new(in_dim, hidden, 1);
        NetworkPair {
            params_a: init(&spec, seed),
            params_b: init(&spec, seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
            spec_a: spec.clone(),
            spec_b: spec,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params_a.len() + self.params_b.len()
    }

    /// `A` parameters followed by `B` parameters.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.params_a.0.clone();
        v.extend_from_slice(&self.params_b.0);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.params_a.len();
        self.params_a.0.copy_from_slice(&flat[..n]);
        self.params_b.0.copy_from_slice(&flat[n..]);
    }
}

impl Coefficients for NetworkPair {
    fn coefficients(&self, inputs: &[f64]) -> (f64, f64) {
        (
            forward(&self.spec_a, &self.params_a, inputs)[0],
            forward(&self.spec_b, &self.params_b, inputs)[0],
        )
    }

    fn is_zero(&self) -> bool {
        self.params_a.is_zero() && self.params_b.is_zero()
    }
}

/// An equivariant neural ODE together with its integration settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Node<C> {
    pub geometry: Geometry,
    pub kind: ModelKind,
    pub frame: Frame,
    pub n_steps: usize,
    pub include_time: bool,
    pub delta_kick: f64,
    pub coeffs: C,
}

pub type NodeModel = Node<NetworkPair>;

/// Number of invariant inputs fed to `A` and `B`.
pub fn input_dim(kind: ModelKind, include_time: bool) -> usize {
    let base = match kind {
        ModelKind::Plain => 1,
        ModelKind::Augmented => 3,
    };
    base + usize::from(include_time)
}

impl NodeModel {
    pub fn new(geometry: Geometry, kind: ModelKind, hidden: &[usize], seed: u64) -> Self {
        Node {
            geometry,
            kind,
            frame: Frame::default(),
            n_steps: DEFAULT_STEPS,
            include_time: false,
            delta_kick: DEFAULT_DELTA_KICK,
            coeffs: NetworkPair::init(input_dim(kind, false), hidden, seed),
        }
    }

    /// Rebuilds the networks for a different input layout.
    pub fn with_time_input(mut self, include_time: bool, hidden: &[usize], seed: u64) -> Self {
        self.include_time = include_time;
        self.coeffs = NetworkPair::init(input_dim(self.kind, include_time), hidden, seed);
        self
    }
}

impl<F: Fn(&[f64]) -> (f64, f64)> Node<ClosedForm<F>> {
    pub fn closed_form(geometry: Geometry, kind: ModelKind, f: F) -> Self {
        Node {
            geometry,
            kind,
            frame: Frame::default(),
            n_steps: DEFAULT_STEPS,
            include_time: false,
            delta_kick: DEFAULT_DELTA_KICK,
            coeffs: ClosedForm(f),
        }
    }
}

/// Something that maps chart points to chart points invertibly.
pub trait Diffeomorphism {
    fn geometry(&self) -> Geometry;
    fn apply(&self, p: &Point) -> Result<Point>;
    fn apply_inverse(&self, p: &Point) -> Result<Point>;
    fn is_identity(&self) -> bool {
        false
    }
}

/// The model's vector field, as seen by the integrator.
pub struct ModelField<'a, C> {
    node: &'a Node<C>,
}

impl<C: Coefficients> Node<C> {
    pub fn invariant_set_label(&self) -> SetLabel {
        SetLabel {
            geometry: self.geometry,
            order: self.kind.invariant_order(),
        }
    }

    fn inputs(&self, t: f64, s: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if self.include_time {
            out.push(t);
        }
        match (self.geometry, self.kind) {
            (Geometry::R2Punctured, ModelKind::Plain) => out.push(s[0].hypot(s[1])),
            (Geometry::Sphere2, ModelKind::Plain) => out.push(s[0]),
            (Geometry::R2Punctured, ModelKind::Augmented) => {
                out.push(s[0].hypot(s[1]));
                out.push(s[0] * s[2] + s[1] * s[3]);
                out.push(s[0] * s[3] - s[1] * s[2]);
            }
            (Geometry::Sphere2, ModelKind::Augmented) => {
                out.extend_from_slice(&[s[0], s[2], s[3]]);
            }
        }
    }

    /// `(A, B)` at a state.
    pub fn coefficients_at(&self, t: f64, state: &[f64]) -> (f64, f64) {
        let mut buf = Vec::with_capacity(4);
        self.inputs(t, state, &mut buf);
        self.coeffs.coefficients(&buf)
    }

    /// Field for the plain model.
    pub fn build_field(&self) -> Result<ModelField<'_, C>> {
        if self.kind != ModelKind::Plain {
            return Err(Error::Config("build_field expects a plain model".into()));
        }
        Ok(ModelField { node: self })
    }

    /// Field on the tangent bundle for the augmented model.
    pub fn build_augmented_field(&self) -> Result<ModelField<'_, C>> {
        if self.kind != ModelKind::Augmented {
            return Err(Error::Config(
                "build_augmented_field expects an augmented model".into(),
            ));
        }
        Ok(ModelField { node: self })
    }

    pub fn field(&self) -> ModelField<'_, C> {
        ModelField { node: self }
    }

    /// True when the lift starts with a nonzero velocity.
    pub fn kicks(&self) -> bool {
        self.kind == ModelKind::Augmented
            && self.geometry == Geometry::R2Punctured
            && self.frame == Frame::Velocity
            && self.delta_kick != 0.0
    }

    fn is_zero_map(&self) -> bool {
        self.coeffs.is_zero() && !self.kicks()
    }

    /// Initial state of the flow for a base point.
    pub fn lift(&self, p: &Point) -> Vec<f64> {
        match self.kind {
            ModelKind::Plain => p.to_vec(),
            ModelKind::Augmented => {
                let kick = if self.kicks() {
                    let r = p[0].hypot(p[1]);
                    [self.delta_kick * p[0] / r, self.delta_kick * p[1] / r]
                } else {
                    [0.0, 0.0]
                };
                vec![p[0], p[1], kick[0], kick[1]]
            }
        }
    }

    /// Full trajectory from the lift of `p` over `t in [0, 1]`.
    pub fn trajectory(&self, p: &Point) -> Result<Trajectory> {
        self.geometry.guard(p)?;
        integrate(&self.field(), &self.lift(p), 0.0, 1.0, self.n_steps)
    }

    /// Trajectory of an explicit tangent-bundle state.
    pub fn trajectory_from_state(&self, state: &[f64]) -> Result<Trajectory> {
        integrate(&self.field(), state, 0.0, 1.0, self.n_steps)
    }

    fn forward_map(&self, p: &Point) -> Result<Point> {
        if self.is_zero_map() {
            self.geometry.guard(p)?;
            return Ok(self.geometry.canonicalize(*p));
        }
        let traj = self.trajectory(p)?;
        let end = traj.final_state();
        Ok([end[0], end[1]])
    }

    fn inverse_plain(&self, p: &Point) -> Result<Point> {
        self.geometry.guard(p)?;
        let traj = integrate(&self.field(), p, 1.0, 0.0, self.n_steps)?;
        let end = traj.final_state();
        Ok([end[0], end[1]])
    }

    /// Damped Gauss-Newton on the base point of the lift, starting from the
    /// target itself. The Jacobian comes from central differences.
    fn inverse_augmented(&self, target: &Point) -> Result<Point> {
        const MAX_ITER: usize = 100;
        const FD: f64 = 1e-6;
        let g = self.geometry;
        g.guard(target)?;
        let residual = |u: &Point| -> Result<[f64; 2]> {
            let img = self.forward_map(u)?;
            Ok(g.chart_diff(&img, target))
        };
        let norm = |r: &[f64; 2]| r[0].hypot(r[1]);
        let mut u = *target;
        let mut res = residual(&u)?;
        for _ in 0..MAX_ITER {
            if norm(&res) < 1e-11 {
                return Ok(g.canonicalize(u));
            }
            let mut jac = [[0.0; 2]; 2];
            for j in 0..2 {
                let mut up = u;
                let mut um = u;
                up[j] += FD;
                um[j] -= FD;
                let fp = self.forward_map(&up)?;
                let fm = self.forward_map(&um)?;
                let d = g.chart_diff(&fp, &fm);
                jac[0][j] = d[0] / (2.0 * FD);
                jac[1][j] = d[1] / (2.0 * FD);
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det.abs() < 1e-14 || !det.is_finite() {
                break;
            }
            let step = [
                (jac[1][1] * res[0] - jac[0][1] * res[1]) / det,
                (-jac[1][0] * res[0] + jac[0][0] * res[1]) / det,
            ];
            let mut lambda = 1.0;
            let mut accepted = false;
            while lambda > 1e-6 {
                let trial = [u[0] - lambda * step[0], u[1] - lambda * step[1]];
                if g.contains(&trial) {
                    if let Ok(r) = residual(&trial) {
                        if norm(&r) < norm(&res) {
                            u = trial;
                            res = r;
                            accepted = true;
                            break;
                        }
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if norm(&res) < 1e-9 {
            return Ok(g.canonicalize(u));
        }
        Err(Error::NoConvergence {
            iterations: MAX_ITER,
            residual: norm(&res),
        })
    }

    /// Samples of `(x, A, B)` where `x` is `r` on the plane and `theta` on the
    /// sphere; for augmented models the velocity invariants are held at zero.
    pub fn coefficient_curve(&self, lo: f64, hi: f64, n: usize) -> Vec<[f64; 3]> {
        let mut buf = Vec::with_capacity(4);
        (0..n)
            .map(|i| {
                let x = if n == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                };
                buf.clear();
                if self.include_time {
                    buf.push(0.0);
                }
                buf.push(x);
                if self.kind == ModelKind::Augmented {
                    buf.extend_from_slice(&[0.0, 0.0]);
                }
                let (a, b) = self.coeffs.coefficients(&buf);
                [x, a, b]
            })
            .collect()
    }
}

impl<C: Coefficients> Diffeomorphism for Node<C> {
    fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// `h(p)`: flow to `t = 1`, projecting augmented states to the base.
    fn apply(&self, p: &Point) -> Result<Point> {
        self.forward_map(p)
    }

    fn apply_inverse(&self, p: &Point) -> Result<Point> {
        if self.is_zero_map() {
            self.geometry.guard(p)?;
            return Ok(self.geometry.canonicalize(*p));
        }
        match self.kind {
            ModelKind::Plain => self.inverse_plain(p),
            ModelKind::Augmented => self.inverse_augmented(p),
        }
    }

    fn is_identity(&self) -> bool {
        self.is_zero_map()
    }
}

impl<C: Coefficients> VectorField for ModelField<'_, C> {
    fn dim(&self) -> usize {
        self.node.kind.state_dim()
    }

    fn eval(&self, t: f64, s: &[f64], out: &mut [f64]) {
        let node = self.node;
        let (a, b) = node.coefficients_at(t, s);
        match (node.geometry, node.kind) {
            (Geometry::R2Punctured, ModelKind::Plain) => {
                out[0] = a * s[0] - b * s[1];
                out[1] = b * s[0] + a * s[1];
            }
            (Geometry::Sphere2, ModelKind::Plain) => {
                out[0] = a;
                out[1] = b;
            }
            (Geometry::R2Punctured, ModelKind::Augmented) => {
                let (fx, fy) = match node.frame {
                    Frame::Position => (s[0], s[1]),
                    Frame::Velocity => (s[2], s[3]),
                };
                out[0] = s[2];
                out[1] = s[3];
                out[2] = a * fx - b * fy;
                out[3] = b * fx + a * fy;
            }
            (Geometry::Sphere2, ModelKind::Augmented) => {
                out[0] = s[2];
                out[1] = s[3];
                out[2] = a;
                out[3] = b;
            }
        }
    }

    fn settle(&self, s: &mut [f64]) -> bool {
        match self.node.geometry {
            Geometry::R2Punctured => {
                s[0].is_finite() && s[1].is_finite() && s[0].hypot(s[1]) >= R_MIN
            }
            Geometry::Sphere2 => {
                s[1] = wrap_angle(s[1]);
                s[0] > THETA_MIN && s[0] < PI - THETA_MIN
            }
        }
    }
}

/// Band of `theta` that training flows are clamped into; it sits one
/// chart margin inside the chart so clamped states remain valid points.
pub const TRAIN_THETA_BAND: (f64, f64) = (2.0 * THETA_MIN, PI - 2.0 * THETA_MIN);

/// Chart-guard clamps applied while flowing on a training tape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GuardStats {
    pub clamped: usize,
}

impl NodeModel {
    /// Tape version of the field; `state` holds one `batch x 1` column per
    /// state coordinate. Network 0 is `A`, network 1 is `B`.
    fn tape_field(&self, tape: &mut Tape<'_>, t: f64, s: &[Var]) -> Vec<Var> {
        let batch = tape.value(s[0]).nrows();
        let mut inputs = Vec::with_capacity(4);
        if self.include_time {
            inputs.push(tape.constant(batch, t));
        }
        let radius = |tape: &mut Tape<'_>| {
            let xx = tape.mul(s[0], s[0]);
            let yy = tape.mul(s[1], s[1]);
            let rr = tape.add(xx, yy);
            tape.sqrt(rr)
        };
        match (self.geometry, self.kind) {
            (Geometry::R2Punctured, ModelKind::Plain) => inputs.push(radius(tape)),
            (Geometry::Sphere2, ModelKind::Plain) => inputs.push(s[0]),
            (Geometry::R2Punctured, ModelKind::Augmented) => {
                inputs.push(radius(tape));
                let a = tape.mul(s[0], s[2]);
                let b = tape.mul(s[1], s[3]);
                inputs.push(tape.add(a, b));
                let c = tape.mul(s[0], s[3]);
                let d = tape.mul(s[1], s[2]);
                inputs.push(tape.sub(c, d));
            }
            (Geometry::Sphere2, ModelKind::Augmented) => {
                inputs.extend_from_slice(&[s[0], s[2], s[3]])
            }
        }
        let x = tape.concat(&inputs);
        let a = tape.mlp(0, x);
        let b = tape.mlp(1, x);
        let rotate = |tape: &mut Tape<'_>, fx: Var, fy: Var| {
            let ax = tape.mul(a, fx);
            let by = tape.mul(b, fy);
            let bx = tape.mul(b, fx);
            let ay = tape.mul(a, fy);
            (tape.sub(ax, by), tape.add(bx, ay))
        };
        match (self.geometry, self.kind) {
            (Geometry::R2Punctured, ModelKind::Plain) => {
                let (dx, dy) = rotate(tape, s[0], s[1]);
                vec![dx, dy]
            }
            (Geometry::Sphere2, ModelKind::Plain) => vec![a, b],
            (Geometry::R2Punctured, ModelKind::Augmented) => {
                let (fx, fy) = match self.frame {
                    Frame::Position => (s[0], s[1]),
                    Frame::Velocity => (s[2], s[3]),
                };
                let (px, py) = rotate(tape, fx, fy);
                vec![s[2], s[3], px, py]
            }
            (Geometry::Sphere2, ModelKind::Augmented) => vec![s[2], s[3], a, b],
        }
    }

    fn tape_guard(&self, tape: &mut Tape<'_>, s: &mut [Var], stats: &mut GuardStats) {
        match self.geometry {
            Geometry::R2Punctured => {
                let low = {
                    let x = tape.value(s[0]);
                    let y = tape.value(s[1]);
                    x.iter().zip(y.iter()).any(|(a, b)| a.hypot(*b) < R_MIN)
                };
                if low {
                    let xx = tape.mul(s[0], s[0]);
                    let yy = tape.mul(s[1], s[1]);
                    let rr = tape.add(xx, yy);
                    let r = tape.sqrt(rr);
                    let (rc, n) = tape.clamp(r, R_MIN, f64::INFINITY);
                    stats.clamped += n;
                    let f = tape.div(rc, r);
                    s[0] = tape.mul(s[0], f);
                    s[1] = tape.mul(s[1], f);
                }
            }
            Geometry::Sphere2 => {
                let (theta, n) = tape.clamp(s[0], TRAIN_THETA_BAND.0, TRAIN_THETA_BAND.1);
                stats.clamped += n;
                s[0] = theta;
            }
        }
    }

    /// Unrolled RK4 over `[0, 1]` on the tape, from the lifts of `points`.
    /// Returns the final state columns.
    pub(crate) fn tape_flow(
        &self,
        tape: &mut Tape<'_>,
        points: &[Point],
        stats: &mut GuardStats,
    ) -> Vec<Var> {
        let lifts: Vec<Vec<f64>> = points.iter().map(|p| self.lift(p)).collect();
        let mut state: Vec<Var> = (0..self.kind.state_dim())
            .map(|i| {
                let col: Vec<f64> = lifts.iter().map(|l| l[i]).collect();
                tape.column(&col)
            })
            .collect();
        let dt = 1.0 / self.n_steps as f64;
        for k in 0..self.n_steps {
            let t = k as f64 * dt;
            let k1 = self.tape_field(tape, t, &state);
            let s2: Vec<Var> = state
                .iter()
                .zip(&k1)
                .map(|(s, k)| tape.axpy(*s, *k, 0.5 * dt))
                .collect();
            let k2 = self.tape_field(tape, t + 0.5 * dt, &s2);
            let s3: Vec<Var> = state
                .iter()
                .zip(&k2)
                .map(|(s, k)| tape.axpy(*s, *k, 0.5 * dt))
                .collect();
            let k3 = self.tape_field(tape, t + 0.5 * dt, &s3);
            let s4: Vec<Var> = state
                .iter()
                .zip(&k3)
                .map(|(s, k)| tape.axpy(*s, *k, dt))
                .collect();
            let k4 = self.tape_field(tape, t + dt, &s4);
            for i in 0..state.len() {
                let mut v = tape.axpy(state[i], k1[i], dt / 6.0);
                v = tape.axpy(v, k2[i], dt / 3.0);
                v = tape.axpy(v, k3[i], dt / 3.0);
                state[i] = tape.axpy(v, k4[i], dt / 6.0);
            }
            self.tape_guard(tape, &mut state, stats);
        }
        state
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport {
    pub samples: usize,
    pub tol: f64,
    pub max_violation: f64,
    pub pass: bool,
    pub worst_point: Option<Point>,
    pub worst_angle: Option<f64>,
    pub failures: usize,
}

/// Band of the invariant coordinate (`r` on the plane, `theta` on the
/// sphere) from which random test points are drawn; the other coordinate is
/// uniform on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Region {
    pub lo: f64,
    pub hi: f64,
}

impl Region {
    pub fn new(lo: f64, hi: f64) -> Self {
        Region { lo, hi }
    }

    pub fn default_for(geometry: Geometry) -> Self {
        match geometry {
            Geometry::R2Punctured => Region::new(0.5, 2.5),
            Geometry::Sphere2 => Region::new(0.3, 1.2),
        }
    }

    pub fn sample(&self, geometry: Geometry, rng: &mut impl Rng) -> Point {
        let radial = rng.gen_range(self.lo..self.hi);
        let angle = rng.gen_range(0.0..TAU);
        match geometry {
            Geometry::R2Punctured => [radial * angle.cos(), radial * angle.sin()],
            Geometry::Sphere2 => [radial, angle],
        }
    }
}

/// Random point of the default evaluation region of `geometry`.
pub fn sample_point(geometry: Geometry, rng: &mut impl Rng) -> Point {
    Region::default_for(geometry).sample(geometry, rng)
}

/// Measures `|L_g h(p) - h(L_g p)|` over random rotations and points.
/// Points whose flow fails count as violations of infinite size.
pub fn check_model_equivariance<D: Diffeomorphism + ?Sized>(
    model: &D,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> EquivarianceReport {
    check_model_equivariance_in(
        model,
        Region::default_for(model.geometry()),
        n_samples,
        tol,
        seed,
    )
}

pub fn check_model_equivariance_in<D: Diffeomorphism + ?Sized>(
    model: &D,
    region: Region,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> EquivarianceReport {
    let g = model.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut worst_point = None;
    let mut worst_angle = None;
    let mut failures = 0;
    for _ in 0..n_samples {
        let p = region.sample(g, &mut rng);
        let eps = GroupElement(rng.gen_range(-PI..PI));
        let v = (|| -> Result<f64> {
            let lhs = g.act(eps, &model.apply(&p)?)?;
            let rhs = model.apply(&g.act(eps, &p)?)?;
            Ok(g.chart_distance(&lhs, &rhs))
        })()
        .unwrap_or_else(|_| {
            failures += 1;
            f64::INFINITY
        });
        if v > worst || worst_point.is_none() {
            worst = worst.max(v);
            worst_point = Some(p);
            worst_angle = Some(eps.0);
        }
    }
    EquivarianceReport {
        samples: n_samples,
        tol,
        max_violation: worst,
        pass: worst < tol,
        worst_point,
        worst_angle,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{prolonged_action, JetPoint};
    use crate::odeint::FnField;
    use std::f64::consts::E;

    const R2: Geometry = Geometry::R2Punctured;
    const S2: Geometry = Geometry::Sphere2;

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (a[0] - b[0]).abs() < tol && (a[1] - b[1]).abs() < tol
    }

    #[test]
    fn rigid_rotation() {
        let m = Node::closed_form(R2, ModelKind::Plain, |_: &[f64]| (0.0, 1.0));
        let p = m.apply(&[1.0, 0.0]).unwrap();
        assert!(close(p, [1f64.cos(), 1f64.sin()], 1e-6));
    }

    #[test]
    fn radial_translation() {
        let m = Node::closed_form(R2, ModelKind::Plain, |i: &[f64]| (1.0 / i[0], 0.0));
        assert!(close(m.apply(&[1.0, 0.0]).unwrap(), [2.0, 0.0], 1e-6));
        let p: Point = [0.6, -1.1];
        let r = p[0].hypot(p[1]);
        let q = m.apply(&p).unwrap();
        assert!(close(q, [p[0] + p[0] / r, p[1] + p[1] / r], 1e-6));
        assert!(close(
            m.apply_inverse(&[2.0, 0.0]).unwrap(),
            [1.0, 0.0],
            1e-6
        ));
    }

    #[test]
    fn sphere_scaling() {
        let m = Node::closed_form(S2, ModelKind::Plain, |i: &[f64]| (i[0], 0.05));
        let p = m.apply(&[0.5, 0.0]).unwrap();
        assert!(close(p, [0.5 * E, 0.05], 1e-6));
        assert!((p[0] - 1.35914).abs() < 1e-5);
    }

    #[test]
    fn kind_checks_on_field_builders() {
        let m = NodeModel::new(R2, ModelKind::Plain, &[4], 0);
        assert!(m.build_field().is_ok());
        assert!(m.build_augmented_field().is_err());
        let m = NodeModel::new(R2, ModelKind::Augmented, &[4], 0);
        assert!(m.build_augmented_field().is_ok());
        assert_eq!(m.build_augmented_field().unwrap().dim(), 4);
        assert_eq!(m.invariant_set_label().to_string(), "r2-so2-order2");
    }

    #[test]
    fn augmented_zero_field() {
        for frame in [Frame::Position, Frame::Velocity] {
            let mut m = Node::closed_form(R2, ModelKind::Augmented, |_: &[f64]| (0.0, 0.0));
            m.frame = frame;
            m.delta_kick = 0.0;
            assert!(close(m.apply(&[0.7, -0.2]).unwrap(), [0.7, -0.2], 1e-15));
            let traj = m.trajectory_from_state(&[0.7, -0.2, 0.3, 0.4]).unwrap();
            let end = traj.final_state();
            assert!(close([end[0], end[1]], [1.0, 0.2], 1e-12));
        }
    }

    #[test]
    fn augmented_acceleration_commutes_with_rotation() {
        for frame in [Frame::Position, Frame::Velocity] {
            let mut m = NodeModel::new(R2, ModelKind::Augmented, &[8, 8], 3);
            m.frame = frame;
            let field = m.build_augmented_field().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            for _ in 0..100 {
                let jet = JetPoint::first(
                    0.0,
                    sample_point(R2, &mut rng),
                    [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                );
                let g = GroupElement(rng.gen_range(-PI..PI));
                let rot = prolonged_action(R2, g, &jet).unwrap();
                let mut a = [0.0; 4];
                let mut b = [0.0; 4];
                field.eval(0.0, &jet.coords(), &mut a);
                field.eval(0.0, &rot.coords(), &mut b);
                let lin = R2.linear_part(g);
                let rotated = crate::manifold::mat_vec(&lin, [a[2], a[3]]);
                assert!(close(rotated, [b[2], b[3]], 1e-9));
            }
        }
    }

    #[test]
    fn near_identity_at_init() {
        let m = NodeModel::new(R2, ModelKind::Plain, &[64, 64], 42);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let p = sample_point(R2, &mut rng);
            let q = m.apply(&p).unwrap();
            assert!(R2.chart_distance(&p, &q) < 0.5);
        }
        let zero = {
            let mut m = m.clone();
            m.coeffs.params_a.0.fill(0.0);
            m.coeffs.params_b.0.fill(0.0);
            m
        };
        assert!(zero.is_identity());
        assert_eq!(zero.apply(&[0.3, 0.4]).unwrap(), [0.3, 0.4]);
        assert_eq!(zero.apply_inverse(&[0.3, 0.4]).unwrap(), [0.3, 0.4]);
    }

    #[test]
    fn zero_coefficients_with_a_kick_drift_radially() {
        let mut m = NodeModel::new(R2, ModelKind::Augmented, &[4], 0);
        m.coeffs.params_a.0.fill(0.0);
        m.coeffs.params_b.0.fill(0.0);
        m.frame = Frame::Velocity;
        assert!(!m.is_identity());
        let q = m.apply(&[0.3, 0.4]).unwrap();
        assert!((q[0] - 0.3 * 1.02).abs() < 1e-12 && (q[1] - 0.4 * 1.02).abs() < 1e-12);
        m.frame = Frame::Position;
        assert!(m.is_identity());
        assert_eq!(m.apply(&[0.3, 0.4]).unwrap(), [0.3, 0.4]);
    }

    fn scaled(mut m: NodeModel, factor: f64) -> NodeModel {
        m.coeffs.params_a.0.iter_mut().for_each(|v| *v *= factor);
        m.coeffs.params_b.0.iter_mut().for_each(|v| *v *= factor);
        m
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (geometry, kind) in [
            (R2, ModelKind::Plain),
            (S2, ModelKind::Plain),
            (R2, ModelKind::Augmented),
            (S2, ModelKind::Augmented),
        ] {
            let m = scaled(NodeModel::new(geometry, kind, &[8, 8], 5), 4.0);
            let tol = if kind == ModelKind::Plain { 1e-5 } else { 1e-4 };
            for _ in 0..20 {
                let p = sample_point(geometry, &mut rng);
                let q = m.apply(&p).unwrap();
                let back = m.apply_inverse(&q).unwrap();
                assert!(
                    geometry.chart_distance(&back, &p) < tol,
                    "{geometry} {kind}: {p:?} -> {back:?}"
                );
                let fwd = m.apply(&m.apply_inverse(&p).unwrap()).unwrap();
                assert!(geometry.chart_distance(&fwd, &p) < tol);
            }
        }
    }

    #[test]
    fn projection_matches_trajectory() {
        let m = scaled(NodeModel::new(R2, ModelKind::Augmented, &[8], 1), 3.0);
        let p = [1.2, 0.4];
        let traj = m.trajectory(&p).unwrap();
        let end = traj.final_state();
        assert_eq!(m.apply(&p).unwrap(), [end[0], end[1]]);
    }

    #[test]
    fn random_models_are_equivariant() {
        for kind in [ModelKind::Plain, ModelKind::Augmented] {
            for geometry in [R2, S2] {
                let m = scaled(NodeModel::new(geometry, kind, &[8, 8], 9), 5.0);
                let report = check_model_equivariance(&m, 100, 1e-5, 1);
                assert!(report.pass, "{geometry} {kind}: {report:?}");
            }
        }
    }

    struct Drift;
    impl Diffeomorphism for Drift {
        fn geometry(&self) -> Geometry {
            R2
        }
        fn apply(&self, p: &Point) -> Result<Point> {
            let f = FnField::new(2, |_, _: &[f64], o: &mut [f64]| {
                o[0] = 1.0;
                o[1] = 0.0;
            });
            let end = crate::odeint::flow(&f, p, 1.0, 20)?;
            Ok([end[0], end[1]])
        }
        fn apply_inverse(&self, p: &Point) -> Result<Point> {
            Ok([p[0] - 1.0, p[1]])
        }
    }

    #[test]
    fn constant_drift_is_not_equivariant() {
        assert!(!check_model_equivariance(&Drift, 100, 1e-5, 1).pass);
    }

    #[test]
    fn tape_flow_matches_scalar_flow() {
        for (geometry, kind, frame) in [
            (R2, ModelKind::Plain, Frame::Position),
            (S2, ModelKind::Plain, Frame::Position),
            (R2, ModelKind::Augmented, Frame::Position),
            (R2, ModelKind::Augmented, Frame::Velocity),
            (S2, ModelKind::Augmented, Frame::Position),
        ] {
            let mut m = scaled(NodeModel::new(geometry, kind, &[6, 5], 2), 3.0);
            m.frame = frame;
            let m = m.with_time_input(true, &[6, 5], 2);
            let m = scaled(m, 3.0);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let pts: Vec<Point> = (0..5).map(|_| sample_point(geometry, &mut rng)).collect();
            let nets = [
                (&m.coeffs.spec_a, &m.coeffs.params_a),
                (&m.coeffs.spec_b, &m.coeffs.params_b),
            ];
            let mut tape = Tape::new(&nets);
            let mut stats = GuardStats::default();
            let end = m.tape_flow(&mut tape, &pts, &mut stats);
            assert_eq!(stats.clamped, 0);
            for (i, p) in pts.iter().enumerate() {
                let traj = m.trajectory(p).unwrap();
                let s = traj.final_state();
                let x0 = tape.value(end[0])[[i, 0]];
                let x1 = tape.value(end[1])[[i, 0]];
                assert!((x0 - s[0]).abs() < 1e-12);
                assert!(geometry.chart_distance(&[x0, x1], &[s[0], s[1]]) < 1e-12);
            }
        }
    }
}
