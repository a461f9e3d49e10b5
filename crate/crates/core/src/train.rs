//! Datasets for the three reference experiments, the training loss and its
//! tape gradient through the unrolled flow, Adam, the training loop and
//! checkpoint files.

use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{wrap_angle, Geometry, Point};
use crate::models::{
    check_model_equivariance_in, input_dim, Diffeomorphism, EquivarianceReport, Frame, GuardStats,
    ModelKind, NetworkPair, Node, NodeModel, Region, DEFAULT_DELTA_KICK, DEFAULT_STEPS,
    TRAIN_THETA_BAND,
};
use crate::net::{from_nested, to_nested, LayerParams, MlpSpec, ParamVector};
use crate::tape::{Tape, Var};

/// Grid points closer than this to the origin are dropped from the plane
/// datasets.
pub const GRID_MIN_RADIUS: f64 = 0.3;

/// Scaling exponent and azimuth shift of the sphere target map.
pub const SPHERE_EPSILON: f64 = 1.0;
pub const SPHERE_NU: f64 = 0.05;

pub const SPHERE_SAMPLES: usize = 400;

/// Epoch interval of history entries (with an equivariance check).
pub const LOG_EVERY: usize = 50;

/// Epoch interval of intermediate checkpoints.
pub const CHECKPOINT_EVERY: usize = 100;

pub const CLIP_NORM: f64 = 10.0;

/// Samples and tolerance of the equivariance check logged during training.
pub const EQUIV_SAMPLES: usize = 32;
pub const EQUIV_TOL: f64 = 1e-5;

/// Points at which the learned `A` and `B` are tabulated.
pub const CURVE_POINTS: usize = 200;

pub const CHECKPOINT_VERSION: &str = "symflow-ckpt-v1";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleId {
    Radial,
    Sphere,
    InverseRadius,
}

impl ExampleId {
    pub const ALL: [ExampleId; 3] = [
        ExampleId::Radial,
        ExampleId::Sphere,
        ExampleId::InverseRadius,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExampleId::Radial => "radial",
            ExampleId::Sphere => "sphere",
            ExampleId::InverseRadius => "inverse_radius",
        }
    }

    pub fn geometry(self) -> Geometry {
        match self {
            ExampleId::Sphere => Geometry::Sphere2,
            _ => Geometry::R2Punctured,
        }
    }

    pub fn default_kind(self) -> ModelKind {
        match self {
            ExampleId::InverseRadius => ModelKind::Augmented,
            _ => ModelKind::Plain,
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            ExampleId::Radial => 300,
            ExampleId::Sphere => 400,
            ExampleId::InverseRadius => 1000,
        }
    }

    /// Range of `r` (or `theta`) over which `A` and `B` are tabulated.
    pub fn curve_range(self) -> (f64, f64) {
        match self {
            ExampleId::Radial => (0.5, 2.8),
            ExampleId::Sphere => (0.3, 1.2),
            ExampleId::InverseRadius => (0.3, 2.9),
        }
    }

    /// Sampling band for equivariance checks of trained models, chosen so
    /// forward flows stay inside the chart.
    pub fn check_region(self) -> Region {
        match self {
            ExampleId::Sphere => Region::new(0.3, 1.1),
            _ => Region::new(0.5, 2.5),
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExampleId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial" => Ok(ExampleId::Radial),
            "sphere" => Ok(ExampleId::Sphere),
            "inverse_radius" | "inverse-radius" => Ok(ExampleId::InverseRadius),
            other => Err(Error::Config(format!(
                "unknown example {other:?} (expected radial, sphere or inverse_radius)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub example_id: ExampleId,
    pub inputs: Vec<Point>,
    pub targets: Vec<Point>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn geometry(&self) -> Geometry {
        self.example_id.geometry()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

fn plane_grid(n: usize) -> Vec<Point> {
    linspace(-2.0, 2.0, n)
        .flat_map(|x| linspace(-2.0, 2.0, n).map(move |y| [x, y]))
        .filter(|p| p[0].hypot(p[1]) >= GRID_MIN_RADIUS)
        .collect()
}

/// Radial translation by one unit.
pub fn radial_target(p: &Point) -> Point {
    let r = p[0].hypot(p[1]);
    [p[0] + p[0] / r, p[1] + p[1] / r]
}

/// `theta -> theta e^epsilon`, `phi -> phi + nu`, with `theta` clamped into
/// the training band.
pub fn sphere_target(p: &Point) -> Point {
    let theta = (p[0] * SPHERE_EPSILON.exp()).clamp(TRAIN_THETA_BAND.0, TRAIN_THETA_BAND.1);
    [theta, wrap_angle(p[1] + SPHERE_NU)]
}

/// `(r, theta) -> (1/r, theta)` in Cartesian form.
pub fn inverse_radius_target(p: &Point) -> Point {
    let rr = p[0] * p[0] + p[1] * p[1];
    [p[0] / rr, p[1] / rr]
}

pub fn make_dataset(example_id: ExampleId, seed: u64) -> Dataset {
    let (inputs, target): (Vec<Point>, fn(&Point) -> Point) = match example_id {
        ExampleId::Radial => (plane_grid(8), radial_target),
        ExampleId::InverseRadius => (plane_grid(10), inverse_radius_target),
        ExampleId::Sphere => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = (0..SPHERE_SAMPLES)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let v: f64 = rng.gen();
                    [(1.0 - 2.0 * u).acos(), TAU * v]
                })
                .filter(|p| Geometry::Sphere2.contains(p))
                .map(|p| Geometry::Sphere2.canonicalize(p))
                .collect();
            (pts, sphere_target)
        }
    };
    let targets = inputs.iter().map(target).collect();
    Dataset {
        example_id,
        inputs,
        targets,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub mse: f64,
    pub evaluated: usize,
    pub failures: usize,
}

/// Mean over samples of the squared chart distance between `h(input)` and
/// the target, using the scalar integrator. Samples whose flow fails are
/// counted and left out of the mean.
pub fn loss<D: Diffeomorphism + ?Sized>(model: &D, dataset: &Dataset) -> Result<LossReport> {
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let g = model.geometry();
    let mut total = 0.0;
    let mut evaluated = 0;
    let mut failures = 0;
    for (p, q) in dataset.inputs.iter().zip(&dataset.targets) {
        match model.apply(p) {
            Ok(img) => {
                let d = g.chart_distance(&img, q);
                total += d * d;
                evaluated += 1;
            }
            Err(_) => failures += 1,
        }
    }
    Ok(LossReport {
        mse: if evaluated == 0 {
            f64::NAN
        } else {
            total / evaluated as f64
        },
        evaluated,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowGradient {
    pub loss: f64,
    pub grad_a: ParamVector,
    pub grad_b: ParamVector,
    /// State entries clamped by the chart guard during the flow.
    pub clamped: usize,
}

impl FlowGradient {
    /// `A` gradient followed by `B` gradient, matching [`NetworkPair::flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.grad_a.0.clone();
        v.extend_from_slice(&self.grad_b.0);
        v
    }
}

fn record_loss(
    model: &NodeModel,
    tape: &mut Tape<'_>,
    inputs: &[Point],
    targets: &[Point],
    stats: &mut GuardStats,
) -> Var {
    let end = model.tape_flow(tape, inputs, stats);
    let tx: Vec<f64> = targets.iter().map(|t| t[0]).collect();
    let ty: Vec<f64> = targets.iter().map(|t| t[1]).collect();
    let tx = tape.column(&tx);
    let ty = tape.column(&ty);
    let dx = tape.sub(end[0], tx);
    let mut dy = tape.sub(end[1], ty);
    if model.geometry == Geometry::Sphere2 {
        dy = tape.wrap_pi(dy);
    }
    let sx = tape.square(dx);
    let sy = tape.square(dy);
    let sq = tape.add(sx, sy);
    tape.mean_all(sq)
}

fn check_batch(inputs: &[Point], targets: &[Point]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Config("batch is empty".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    Ok(())
}

fn nets(model: &NodeModel) -> [(&MlpSpec, &ParamVector); 2] {
    let c = &model.coeffs;
    [(&c.spec_a, &c.params_a), (&c.spec_b, &c.params_b)]
}

/// Training loss evaluated on the tape (forward only). Chart-guard clamps
/// are applied instead of failing.
pub fn tape_loss(model: &NodeModel, inputs: &[Point], targets: &[Point]) -> Result<(f64, usize)> {
    check_batch(inputs, targets)?;
    let nets = nets(model);
    let mut tape = Tape::new(&nets);
    let mut stats = GuardStats::default();
    let out = record_loss(model, &mut tape, inputs, targets, &mut stats);
    Ok((tape.value(out)[[0, 0]], stats.clamped))
}

/// Reverse-mode gradient of the training loss through every RK4 stage.
pub fn grad_through_flow(
    model: &NodeModel,
    inputs: &[Point],
    targets: &[Point],
) -> Result<FlowGradient> {
    check_batch(inputs, targets)?;
    let nets = nets(model);
    let mut tape = Tape::new(&nets);
    let mut stats = GuardStats::default();
    let out = record_loss(model, &mut tape, inputs, targets, &mut stats);
    let loss = tape.value(out)[[0, 0]];
    let mut grads = tape.backward(out).into_iter();
    let grad_a = grads.next().expect("two networks");
    let grad_b = grads.next().expect("two networks");
    if let Some(i) = grad_a
        .0
        .iter()
        .chain(&grad_b.0)
        .position(|g| !g.is_finite())
    {
        return Err(Error::NonFinite {
            t: 1.0,
            what: format!("gradient entry {i} (loss {loss})"),
        });
    }
    Ok(FlowGradient {
        loss,
        grad_a,
        grad_b,
        clamped: stats.clamped,
    })
}

/// Inputs from the default region and targets at distance about `noise`
/// from their images under `model`, so the loss has training-sized
/// magnitude. Inputs whose flow fails are redrawn.
pub fn gradcheck_batch(
    model: &NodeModel,
    n: usize,
    noise: f64,
    seed: u64,
) -> (Vec<Point>, Vec<Point>) {
    let g = model.geometry;
    let region = Region::default_for(g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    while inputs.len() < n {
        let p = region.sample(g, &mut rng);
        let Ok(img) = model.apply(&p) else { continue };
        let q = g.canonicalize([
            img[0] + noise * rng.gen_range(-1.0..1.0),
            img[1] + noise * rng.gen_range(-1.0..1.0),
        ]);
        if g.contains(&q) {
            inputs.push(p);
            targets.push(q);
        }
    }
    (inputs, targets)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: usize,
    pub eps: f64,
    pub floor: f64,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Denominator floor of the relative error in [`gradient_check`].
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Compares the tape gradient with central differences of the tape loss.
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    model: &NodeModel,
    inputs: &[Point],
    targets: &[Point],
    eps: f64,
) -> Result<GradCheckReport> {
    let analytic = grad_through_flow(model, inputs, targets)?.flat();
    let base = model.coeffs.flat();
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        probe.coeffs.set_flat(&p);
        let (plus, _) = tape_loss(&probe, inputs, targets)?;
        p[i] = base[i] - eps;
        probe.coeffs.set_flat(&p);
        let (minus, _) = tape_loss(&probe, inputs, targets)?;
        numeric.push((plus - minus) / (2.0 * eps));
    }
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut worst = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(GRADCHECK_FLOOR);
        max_abs = max_abs.max(abs);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    Ok(GradCheckReport {
        params: base.len(),
        eps,
        floor: GRADCHECK_FLOOR,
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        worst_index: worst,
        analytic,
        numeric,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            t: state.step as f64,
            what: format!("gradient entry {i}"),
        });
    }
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Rescales `grads` to global norm at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub example: ExampleId,
    pub kind: ModelKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub n_steps: usize,
    pub hidden: Vec<usize>,
    pub delta_kick: f64,
    pub frame: Frame,
    pub include_time: bool,
    pub output_dir: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

pub fn default_learning_rate(kind: ModelKind) -> f64 {
    match kind {
        ModelKind::Plain => 5e-3,
        ModelKind::Augmented => 5e-3,
    }
}

impl TrainConfig {
    /// Reference configuration of an experiment.
    pub fn new(example: ExampleId) -> Self {
        let kind = example.default_kind();
        TrainConfig {
            example,
            kind,
            epochs: example.default_epochs(),
            learning_rate: default_learning_rate(kind),
            seed: DEFAULT_SEED,
            n_steps: DEFAULT_STEPS,
            hidden: DEFAULT_HIDDEN.to_vec(),
            delta_kick: DEFAULT_DELTA_KICK,
            frame: Frame::default(),
            include_time: false,
            output_dir: None,
        }
    }

    /// Same experiment with a different model kind and its default rate.
    pub fn with_kind(mut self, kind: ModelKind) -> Self {
        self.kind = kind;
        self.learning_rate = default_learning_rate(kind);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        if !self.delta_kick.is_finite() {
            return Err(Error::Config("delta_kick must be finite".into()));
        }
        MlpSpec::new(input_dim(self.kind, self.include_time), &self.hidden, 1).validate()
    }

    /// Freshly initialized model for this configuration.
    pub fn build_model(&self) -> Result<NodeModel> {
        self.validate()?;
        Ok(Node {
            geometry: self.example.geometry(),
            kind: self.kind,
            frame: self.frame,
            n_steps: self.n_steps,
            include_time: self.include_time,
            delta_kick: self.delta_kick,
            coeffs: NetworkPair::init(
                input_dim(self.kind, self.include_time),
                &self.hidden,
                self.seed,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub loss: f64,
    pub equiv_violation: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    /// Every [`LOG_EVERY`] epochs and at the end.
    pub entries: Vec<HistoryEntry>,
    /// Loss of the parameters after each number of updates, starting at 0.
    pub losses: Vec<f64>,
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub best_loss: f64,
    pub max_equiv_violation: f64,
    pub clamped: usize,
}

impl History {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    /// Running minimum of the loss at each logged entry.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| {
                self.losses[..=e.epoch]
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    pub fn summary(&self) -> HistorySummary {
        HistorySummary {
            epochs: self.losses.len().saturating_sub(1),
            initial_loss: self.losses.first().copied().unwrap_or(f64::NAN),
            final_loss: self.final_loss(),
            best_loss: self.losses.iter().copied().fold(f64::INFINITY, f64::min),
            max_equiv_violation: self
                .entries
                .iter()
                .map(|e| e.equiv_violation)
                .fold(0.0, f64::max),
            clamped: self.clamped,
        }
    }
}

/// Equivariance check logged during training, over the example's region.
pub fn training_equivariance(
    model: &NodeModel,
    example: ExampleId,
    seed: u64,
) -> EquivarianceReport {
    check_model_equivariance_in(
        model,
        example.check_region(),
        EQUIV_SAMPLES,
        EQUIV_TOL,
        seed,
    )
}

/// Full-batch Adam training. Writes checkpoints into `config.output_dir`
/// when one is set.
pub fn fit(config: &TrainConfig) -> Result<(NodeModel, History)> {
    let mut model = config.build_model()?;
    let dataset = make_dataset(config.example, config.seed);
    let mut flat = model.coeffs.flat();
    let mut adam = AdamState::new(flat.len());
    let mut history = History::default();
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for epoch in 0..=config.epochs {
        let step = grad_through_flow(&model, &dataset.inputs, &dataset.targets).map_err(|e| {
            Error::Diverged {
                epoch,
                what: e.to_string(),
            }
        })?;
        if !step.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                what: format!("loss is {}", step.loss),
            });
        }
        history.losses.push(step.loss);
        history.clamped += step.clamped;
        let last = epoch == config.epochs;
        if epoch % LOG_EVERY == 0 || last {
            let report = training_equivariance(&model, config.example, config.seed ^ epoch as u64);
            history.entries.push(HistoryEntry {
                epoch,
                loss: step.loss,
                equiv_violation: report.max_violation,
            });
        }
        if let Some(dir) = &config.output_dir {
            if epoch > 0 && (epoch % CHECKPOINT_EVERY == 0 || last) {
                save_checkpoint(
                    &model,
                    Some(config),
                    Some(&history),
                    dir.join(CHECKPOINT_FILE),
                )?;
            }
        }
        if last {
            break;
        }
        let mut grads = step.flat();
        clip_global_norm(&mut grads, CLIP_NORM);
        adam_step(&mut adam, &mut flat, &grads, config.learning_rate).map_err(|e| {
            Error::Diverged {
                epoch,
                what: e.to_string(),
            }
        })?;
        model.coeffs.set_flat(&flat);
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetPair<T> {
    #[serde(rename = "A")]
    pub a: T,
    #[serde(rename = "B")]
    pub b: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub geometry: Geometry,
    pub kind: ModelKind,
    pub invariant_set: String,
    pub frame: Frame,
    pub n_steps: usize,
    pub include_time: bool,
    pub delta_kick: f64,
    pub specs: NetPair<MlpSpec>,
    pub params: NetPair<Vec<LayerParams>>,
    pub config: Option<TrainConfig>,
    pub history_summary: Option<HistorySummary>,
}

impl Checkpoint {
    pub fn from_model(
        model: &NodeModel,
        config: Option<&TrainConfig>,
        history: Option<&History>,
    ) -> Self {
        let c = &model.coeffs;
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            geometry: model.geometry,
            kind: model.kind,
            invariant_set: model.invariant_set_label().to_string(),
            frame: model.frame,
            n_steps: model.n_steps,
            include_time: model.include_time,
            delta_kick: model.delta_kick,
            specs: NetPair {
                a: c.spec_a.clone(),
                b: c.spec_b.clone(),
            },
            params: NetPair {
                a: to_nested(&c.spec_a, &c.params_a),
                b: to_nested(&c.spec_b, &c.params_b),
            },
            config: config.cloned(),
            history_summary: history.map(History::summary),
        }
    }

    pub fn model(&self) -> Result<NodeModel> {
        let model = Node {
            geometry: self.geometry,
            kind: self.kind,
            frame: self.frame,
            n_steps: self.n_steps,
            include_time: self.include_time,
            delta_kick: self.delta_kick,
            coeffs: NetworkPair {
                params_a: from_nested(&self.specs.a, &self.params.a)?,
                params_b: from_nested(&self.specs.b, &self.params.b)?,
                spec_a: self.specs.a.clone(),
                spec_b: self.specs.b.clone(),
            },
        };
        let label = model.invariant_set_label().to_string();
        if label != self.invariant_set {
            return Err(Error::Config(format!(
                "checkpoint invariant set {:?} does not match {label:?}",
                self.invariant_set
            )));
        }
        let inputs = input_dim(self.kind, self.include_time);
        if self.specs.a.in_dim != inputs || self.specs.b.in_dim != inputs {
            return Err(Error::Shape(format!("networks must take {inputs} inputs")));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("checkpoint has n_steps = 0".into()));
        }
        Ok(model)
    }
}

/// Writes the checkpoint through a temporary file, so readers never see a
/// partial file.
pub fn save_checkpoint(
    model: &NodeModel,
    config: Option<&TrainConfig>,
    history: Option<&History>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let ckpt = Checkpoint::from_model(model, config, history);
    let mut text = serde_json::to_string_pretty(&ckpt)?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("version").and_then(|v| v.as_str()) {
        Some(CHECKPOINT_VERSION) => {}
        other => {
            return Err(Error::CheckpointVersion {
                found: other.unwrap_or("<missing>").to_string(),
                expected: CHECKPOINT_VERSION,
            })
        }
    }
    Ok(serde_json::from_value(value)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NodeModel> {
    read_checkpoint(path)?.model()
}

/// Tabulated `(x, A, B)` over the example's curve range.
pub fn coefficient_curves(model: &NodeModel, example: ExampleId) -> Vec<[f64; 3]> {
    let (lo, hi) = example.curve_range();
    model.coefficient_curve(lo, hi, CURVE_POINTS)
}

/// Largest deviation of the learned coefficients from the reference
/// functions over the curve range: `(sup |A - a|, sup |B - b|)`.
pub fn coefficient_errors(model: &NodeModel, example: ExampleId) -> Option<(f64, f64)> {
    let (a_ref, b_ref): (fn(f64) -> f64, fn(f64) -> f64) = match example {
        ExampleId::Radial => (|r| 1.0 / r, |_| 0.0),
        ExampleId::Sphere => (|t| t * SPHERE_EPSILON, |_| SPHERE_NU),
        ExampleId::InverseRadius => return None,
    };
    let curve = coefficient_curves(model, example);
    let a = curve
        .iter()
        .map(|c| (c[1] - a_ref(c[0])).abs())
        .fold(0.0, f64::max);
    let b = curve
        .iter()
        .map(|c| (c[2] - b_ref(c[0])).abs())
        .fold(0.0, f64::max);
    Some((a, b))
}

/// Radius traces `r(t)` of sampled base trajectories along a ray at angle
/// `angle`, one row per starting radius.
pub fn radial_traces(model: &NodeModel, radii: &[f64], angle: f64) -> Result<Vec<Vec<f64>>> {
    radii
        .iter()
        .map(|&r| {
            let traj = model.trajectory(&[r * angle.cos(), r * angle.sin()])?;
            Ok(traj.states.iter().map(|s| s[0].hypot(s[1])).collect())
        })
        .collect()
}

/// True when traces sampled by increasing starting radius keep that strict
/// ordering at every recorded step.
pub fn traces_keep_order(traces: &[Vec<f64>]) -> bool {
    traces
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(lo, hi)| lo < hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datasets() {
        let radial = make_dataset(ExampleId::Radial, 0);
        assert_eq!(radial.len(), 64);
        for (p, q) in radial.inputs.iter().zip(&radial.targets) {
            let d = Geometry::R2Punctured.chart_distance(p, q);
            assert!((d - 1.0).abs() < 1e-12);
        }
        assert_eq!(radial_target(&[2.0, 0.0]), [3.0, 0.0]);
        assert_eq!(radial_target(&[1.0, 0.0]), [2.0, 0.0]);

        let sphere = make_dataset(ExampleId::Sphere, 42);
        assert_eq!(sphere.len(), SPHERE_SAMPLES);
        assert!(sphere.targets.iter().all(|t| Geometry::Sphere2.contains(t)));
        let t = sphere_target(&[0.5, 0.0]);
        assert!((t[0] - 1.35914).abs() < 1e-5 && (t[1] - 0.05).abs() < 1e-15);
        assert_eq!(make_dataset(ExampleId::Sphere, 42), sphere);
        assert_ne!(make_dataset(ExampleId::Sphere, 43), sphere);

        let inv = make_dataset(ExampleId::InverseRadius, 0);
        assert_eq!(inv.len(), 100);
        assert_eq!(inverse_radius_target(&[2.0, 0.0]), [0.5, 0.0]);
        assert!(inv
            .inputs
            .iter()
            .all(|p| p[0].hypot(p[1]) >= GRID_MIN_RADIUS));
    }

    #[test]
    fn loss_examples() {
        let data = make_dataset(ExampleId::Radial, 0);
        let id = Node::closed_form(Geometry::R2Punctured, ModelKind::Plain, |_: &[f64]| {
            (0.0, 0.0)
        });
        let report = loss(&id, &data).unwrap();
        assert!((report.mse - 1.0).abs() < 1e-12);
        assert_eq!(report.failures, 0);

        let exact = Node::closed_form(Geometry::R2Punctured, ModelKind::Plain, |i: &[f64]| {
            (1.0 / i[0], 0.0)
        });
        let mut hit = data.clone();
        hit.targets = hit.inputs.iter().map(|p| exact.apply(p).unwrap()).collect();
        assert_eq!(loss(&exact, &hit).unwrap().mse, 0.0);

        let zero = {
            let mut m = TrainConfig::new(ExampleId::Radial).build_model().unwrap();
            m.coeffs.params_a.0.fill(0.0);
            m.coeffs.params_b.0.fill(0.0);
            m
        };
        let (l, _) = tape_loss(&zero, &data.inputs, &data.targets).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let g = grad_through_flow(&zero, &data.inputs, &data.inputs).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sphere_loss_wraps_phi() {
        let mut m = TrainConfig::new(ExampleId::Sphere).build_model().unwrap();
        m.coeffs.params_a.0.fill(0.0);
        m.coeffs.params_b.0.fill(0.0);
        let p = [[0.7, 0.01]];
        let q = [[0.7, TAU - 0.01]];
        let (l, _) = tape_loss(&m, &p, &q).unwrap();
        assert!((l - 4e-4).abs() < 1e-12);
    }

    #[test]
    fn adam_examples() {
        let mut s = AdamState::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        adam_step(&mut s, &mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(s.step, 1);

        let mut s = AdamState::new(3);
        let mut q = p.clone();
        adam_step(&mut s, &mut q, &[3.0, -1e-3, 50.0], 0.01).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!(((a - b).abs() - 0.01).abs() < 1e-6);
        }
        assert!(q[0] < p[0] && q[1] > p[1]);
        assert!(adam_step(&mut s, &mut q, &[f64::NAN, 0.0, 0.0], 0.01).is_err());
        assert!(adam_step(&mut s, &mut q, &[0.0; 2], 0.01).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
        let mut g = vec![0.3, 0.4];
        clip_global_norm(&mut g, 10.0);
        assert_eq!(g, vec![0.3, 0.4]);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(ExampleId::InverseRadius);
        assert_eq!(c.kind, ModelKind::Augmented);
        assert_eq!(c.learning_rate, 5e-3);
        assert_eq!(c.epochs, 1000);
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(ExampleId::Radial);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        assert!("bogus".parse::<ExampleId>().is_err());
        assert_eq!(
            "inverse-radius".parse::<ExampleId>().unwrap(),
            ExampleId::InverseRadius
        );
    }

    fn short(example: ExampleId) -> TrainConfig {
        let mut c = TrainConfig::new(example);
        c.epochs = 12;
        c.hidden = vec![8];
        c
    }

    #[test]
    fn fit_is_deterministic_and_improves() {
        let c = short(ExampleId::Radial);
        let (m1, h1) = fit(&c).unwrap();
        let (m2, h2) = fit(&c).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert_eq!(h1.losses.len(), 13);
        assert_eq!(
            h1.entries.iter().map(|e| e.epoch).collect::<Vec<_>>(),
            vec![0, 12]
        );
        assert!(h1.final_loss() < h1.losses[0]);
        assert!(h1.entries.iter().all(|e| e.equiv_violation < EQUIV_TOL));
        let best = h1.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = short(ExampleId::InverseRadius);
        c.epochs = 3;
        c.output_dir = Some(dir.path().to_path_buf());
        let (m, h) = fit(&c).unwrap();
        let path = dir.path().join(CHECKPOINT_FILE);
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        for p in [[1.3, -0.4], [0.6, 0.9]] {
            assert_eq!(back.apply(&p).unwrap(), m.apply(&p).unwrap());
        }
        let ck = read_checkpoint(&path).unwrap();
        assert_eq!(ck.config.as_ref(), Some(&c));
        assert_eq!(ck.history_summary, Some(h.summary()));
        assert_eq!(ck.invariant_set, "r2-so2-order2");

        let text = fs::read_to_string(&path).unwrap();
        let bad = dir.path().join("bad.json");
        fs::write(&bad, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&bad), Err(Error::Json(_))));
        fs::write(&bad, text.replace(CHECKPOINT_VERSION, "symflow-ckpt-v0")).unwrap();
        assert!(matches!(
            load_checkpoint(&bad),
            Err(Error::CheckpointVersion { .. })
        ));
        fs::write(&bad, text.replace("\"r2-so2-order2\"", "\"r2-so2-order1\"")).unwrap();
        assert!(load_checkpoint(&bad).is_err());
        assert!(matches!(
            load_checkpoint(dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn plain_flow_lines_do_not_cross() {
        let m = TrainConfig::new(ExampleId::InverseRadius)
            .with_kind(ModelKind::Plain)
            .build_model()
            .unwrap();
        let radii: Vec<f64> = (0..8).map(|i| 0.4 + 0.3 * i as f64).collect();
        assert!(traces_keep_order(&radial_traces(&m, &radii, 0.3).unwrap()));
        assert!(!traces_keep_order(&[vec![1.0, 2.0], vec![1.5, 1.8]]));
    }
}
