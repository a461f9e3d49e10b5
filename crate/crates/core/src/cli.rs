//! The `symflow` command line.
//!
//! Exit codes: 0 on success or a passing check, 1 on a failing check or a
//! runtime error, 2 on a usage error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::fields::{
    check_density_equivariance_in, transform_density, Density, FieldEquivarianceReport,
};
use crate::invariants::registry;
use crate::jet::check_invariance;
use crate::manifold::{Geometry, Point};
use crate::models::{
    check_model_equivariance, ClosedForm, Diffeomorphism, Frame, ModelKind, Node, NodeModel, Region,
};
use crate::report::{emit_reports, Report, RunOutputs};
use crate::train::{
    coefficient_curves, coefficient_errors, default_learning_rate, fit, gradcheck_batch,
    gradient_check, load_checkpoint, loss, make_dataset, read_checkpoint, training_equivariance,
    ExampleId, TrainConfig, DEFAULT_SEED,
};

pub const SEED_ENV: &str = "SYMFLOW_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "symflow",
    version,
    about = "Equivariant neural ODEs on manifolds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on one of the reference experiments.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its experiment.
    Eval(EvalArgs),
    /// Check a registered invariant set against the prolonged action.
    CheckInvariants(InvariantArgs),
    /// Check that a model commutes with the group action.
    CheckEquivariance(EquivarianceArgs),
    /// Tabulate a Gaussian and its transform by a model, and check equivariance.
    Density(DensityArgs),
    /// Compare tape gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// radial, sphere or inverse_radius
    #[arg(long)]
    example: Option<ExampleId>,
    /// plain or augmented (default depends on the example)
    #[arg(long)]
    kind: Option<ModelKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "lr", visible_alias = "learning-rate")]
    learning_rate: Option<f64>,
    /// Falls back to $SYMFLOW_SEED, then 42
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_steps: Option<usize>,
    /// Hidden widths, comma separated
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    delta_kick: Option<f64>,
    /// position or velocity (augmented plane models)
    #[arg(long)]
    frame: Option<Frame>,
    /// Feed t to the networks
    #[arg(long)]
    include_time: Option<bool>,
    /// JSON file with any of the fields above; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the example stored in the checkpoint
    #[arg(long)]
    example: Option<ExampleId>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InvariantArgs {
    /// r2-so2 or s2-so2
    #[arg(long)]
    geometry: Geometry,
    #[arg(long)]
    order: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A checkpoint, or a freshly initialized model.
#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "r2-so2")]
    geometry: Geometry,
    #[arg(long, default_value = "plain")]
    kind: ModelKind,
    #[arg(long, value_delimiter = ',', default_value = "8,8")]
    hidden: Vec<usize>,
    #[arg(long, default_value = "velocity")]
    frame: Frame,
    /// Multiplies the initial parameters, to get a non-trivial field
    #[arg(long, default_value_t = 3.0)]
    scale: f64,
    #[arg(long, default_value_t = 20)]
    n_steps: usize,
}

#[derive(Debug, Args)]
struct EquivarianceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DensityArgs {
    /// Plane checkpoint; the exact unit radial translation when absent
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Grid points per axis on [-extent, extent]^2
    #[arg(long, default_value_t = 41)]
    grid: usize,
    #[arg(long, default_value_t = 3.0)]
    extent: f64,
    /// Radius band of the equivariance check; must lie in the model's image
    #[arg(long, default_value_t = 1.5)]
    r_lo: f64,
    #[arg(long, default_value_t = 2.8)]
    r_hi: f64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Distance of the targets from the model's images
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure tagged with the exit code it maps to.
struct Failure {
    code: i32,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_FAIL,
        };
        Failure { code, error }
    }
}

type Outcome = std::result::Result<bool, Failure>;

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::CheckInvariants(a) => check_invariants(a),
        Command::CheckEquivariance(a) => check_equivariance(a),
        Command::Density(a) => density(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAIL,
        Err(f) => {
            eprintln!("error: {}", f.error);
            if f.code == EXIT_USAGE {
                eprintln!("run `symflow --help` for usage");
            }
            f.code
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(DEFAULT_SEED),
    })
}

/// Builds the training configuration from, in increasing precedence, the
/// example defaults, the `--config` file and the flags.
fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut fields = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            match serde_json::from_str::<Value>(&text)? {
                Value::Object(m) => m,
                _ => {
                    return Err(Error::Config(format!(
                        "{}: expected a JSON object",
                        path.display()
                    )))
                }
            }
        }
        None => Map::new(),
    };
    let mut set = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            fields.insert(key.to_string(), v);
        }
    };
    set("example", a.example.map(|v| json!(v)));
    set("kind", a.kind.map(|v| json!(v)));
    set("epochs", a.epochs.map(|v| json!(v)));
    set("learning_rate", a.learning_rate.map(|v| json!(v)));
    set("seed", a.seed.map(|v| json!(v)));
    set("n_steps", a.n_steps.map(|v| json!(v)));
    set("hidden", a.hidden.as_ref().map(|v| json!(v)));
    set("delta_kick", a.delta_kick.map(|v| json!(v)));
    set("frame", a.frame.map(|v| json!(v)));
    set("include_time", a.include_time.map(|v| json!(v)));
    set("output_dir", a.out.as_ref().map(|v| json!(v)));

    let example: ExampleId = match fields.get("example") {
        Some(v) => {
            serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("example: {e}")))?
        }
        None => {
            return Err(Error::Config(
                "--example is required (here or in --config)".into(),
            ))
        }
    };
    let mut base = match serde_json::to_value(TrainConfig::new(example))? {
        Value::Object(m) => m,
        _ => unreachable!("TrainConfig serializes to an object"),
    };
    if !fields.contains_key("seed") {
        fields.insert("seed".into(), json!(resolve_seed(None)?));
    }
    if !fields.contains_key("learning_rate") {
        if let Some(kind) = fields.get("kind") {
            let kind: ModelKind = serde_json::from_value(kind.clone())
                .map_err(|e| Error::Config(format!("kind: {e}")))?;
            fields.insert("learning_rate".into(), json!(default_learning_rate(kind)));
        }
    }
    for (k, v) in fields {
        if !base.contains_key(&k) {
            return Err(Error::Config(format!("unknown configuration field {k:?}")));
        }
        base.insert(k, v);
    }
    let config: TrainConfig =
        serde_json::from_value(Value::Object(base)).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Configuration as echoed into reports: the output directory is left out
/// so reruns into other directories stay byte-identical.
fn echo(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        output_dir: None,
        ..config.clone()
    }
}

#[derive(Serialize)]
struct TrainResults {
    final_loss: f64,
    scalar_loss: crate::train::LossReport,
    coefficient_sup_error: Option<[f64; 2]>,
    max_equiv_violation: f64,
    clamped: usize,
    history: crate::train::HistorySummary,
}

fn train(a: TrainArgs) -> Outcome {
    let config = train_config(&a)?;
    let (model, history) = fit(&config)?;
    let dataset = make_dataset(config.example, config.seed);
    let results = TrainResults {
        final_loss: history.final_loss(),
        scalar_loss: loss(&model, &dataset)?,
        coefficient_sup_error: coefficient_errors(&model, config.example).map(|(a, b)| [a, b]),
        max_equiv_violation: history.summary().max_equiv_violation,
        clamped: history.clamped,
        history: history.summary(),
    };
    println!(
        "{} {} epochs={} final_loss={:.6e} equiv={:.3e}",
        config.example, config.kind, config.epochs, results.final_loss, results.max_equiv_violation
    );
    if let Some([ea, eb]) = results.coefficient_sup_error {
        println!("sup|A - a| = {ea:.4e}, sup|B - b| = {eb:.4e}");
    }
    if let Some(dir) = &config.output_dir {
        let report = Report::new("train", Some(config.seed), echo(&config), &results)?;
        let mut out = RunOutputs::new(report);
        out.history = Some(&history);
        out.curves = Some((model.geometry, coefficient_curves(&model, config.example)));
        emit_reports(&out, dir)?;
        crate::train::save_checkpoint(
            &model,
            Some(&echo(&config)),
            Some(&history),
            dir.join(crate::train::CHECKPOINT_FILE),
        )?;
    }
    Ok(true)
}

#[derive(Serialize)]
struct EvalResults {
    example: ExampleId,
    loss: crate::train::LossReport,
    coefficient_sup_error: Option<[f64; 2]>,
    equivariance: crate::models::EquivarianceReport,
}

fn eval(a: EvalArgs) -> Outcome {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let model = ckpt.model()?;
    let stored = ckpt.config.as_ref();
    let example = match (a.example, stored) {
        (Some(e), _) => e,
        (None, Some(c)) => c.example,
        (None, None) => {
            return Err(
                Error::Config("checkpoint has no stored config; pass --example".into()).into(),
            )
        }
    };
    if example.geometry() != model.geometry {
        return Err(Error::Config(format!(
            "example {example} does not live on {}",
            model.geometry
        ))
        .into());
    }
    let seed = match a.seed {
        Some(s) => s,
        None => stored
            .map(|c| c.seed)
            .map_or_else(|| resolve_seed(None), Ok)?,
    };
    let results = EvalResults {
        example,
        loss: loss(&model, &make_dataset(example, seed))?,
        coefficient_sup_error: coefficient_errors(&model, example).map(|(a, b)| [a, b]),
        equivariance: training_equivariance(&model, example, seed),
    };
    println!(
        "{example}: mse={:.6e} ({} failed) equiv={:.3e}",
        results.loss.mse, results.loss.failures, results.equivariance.max_violation
    );
    if let Some(dir) = &a.out {
        let config = json!({"example": example, "seed": seed, "checkpoint": ckpt.config});
        let mut out = RunOutputs::new(Report::new("eval", Some(seed), config, &results)?);
        out.curves = Some((model.geometry, coefficient_curves(&model, example)));
        emit_reports(&out, dir)?;
    }
    Ok(true)
}

fn check_invariants(a: InvariantArgs) -> Outcome {
    let seed = resolve_seed(a.seed)?;
    let set = registry(a.geometry, a.order).map_err(|e| Failure {
        code: EXIT_USAGE,
        error: e,
    })?;
    let report = check_invariance(a.geometry, &set.members, a.order, a.samples, a.tol, seed)?;
    println!(
        "{} (mu = {}): max |X(I)| = {:.3e}, max |I(gz) - I(z)| = {:.3e} -> {}",
        set.label(),
        set.mu(),
        report.max_infinitesimal,
        report.max_finite,
        if report.pass { "PASS" } else { "FAIL" }
    );
    if let Some(dir) = &a.out {
        let config = json!({
            "geometry": a.geometry, "order": a.order, "samples": a.samples, "tol": a.tol,
            "members": set.member_labels(),
        });
        let r =
            Report::new("check-invariants", Some(seed), config, &report)?.with_pass(report.pass);
        emit_reports(&RunOutputs::new(r), dir)?;
    }
    Ok(report.pass)
}

fn scaled_model(m: &ModelArgs, seed: u64) -> Result<NodeModel> {
    if let Some(path) = &m.checkpoint {
        return load_checkpoint(path);
    }
    if m.n_steps == 0 {
        return Err(Error::Config("--n-steps must be >= 1".into()));
    }
    crate::net::MlpSpec::new(1, &m.hidden, 1).validate()?;
    let mut model = NodeModel::new(m.geometry, m.kind, &m.hidden, seed);
    model.frame = m.frame;
    model.n_steps = m.n_steps;
    model
        .coeffs
        .params_a
        .0
        .iter_mut()
        .for_each(|v| *v *= m.scale);
    model
        .coeffs
        .params_b
        .0
        .iter_mut()
        .for_each(|v| *v *= m.scale);
    Ok(model)
}

fn model_echo(m: &ModelArgs) -> Value {
    json!({
        "checkpoint": m.checkpoint, "geometry": m.geometry, "kind": m.kind, "hidden": m.hidden,
        "frame": m.frame, "scale": m.scale, "n_steps": m.n_steps,
    })
}

fn check_equivariance(a: EquivarianceArgs) -> Outcome {
    let seed = resolve_seed(a.seed)?;
    let model = scaled_model(&a.model, seed)?;
    let report = check_model_equivariance(&model, a.samples, a.tol, seed);
    println!(
        "{} {}: max |L_g h(p) - h(L_g p)| = {:.3e} over {} samples ({} failed) -> {}",
        model.geometry,
        model.kind,
        report.max_violation,
        report.samples,
        report.failures,
        if report.pass { "PASS" } else { "FAIL" }
    );
    if let Some(dir) = &a.out {
        let config = json!({"model": model_echo(&a.model), "samples": a.samples, "tol": a.tol});
        let r =
            Report::new("check-equivariance", Some(seed), config, &report)?.with_pass(report.pass);
        emit_reports(&RunOutputs::new(r), dir)?;
    }
    Ok(report.pass)
}

/// The exact unit radial translation, `A(r) = 1/r`, `B = 0`.
pub fn radial_translation() -> Node<ClosedForm<fn(&[f64]) -> (f64, f64)>> {
    let f: fn(&[f64]) -> (f64, f64) = |i| (1.0 / i[0], 0.0);
    let mut m = Node::closed_form(Geometry::R2Punctured, ModelKind::Plain, f);
    m.n_steps = 40;
    m
}

#[derive(Serialize)]
struct DensityResults {
    model: String,
    rho_h_at_2_0: Option<f64>,
    grid_points: usize,
    undefined_points: usize,
    check: FieldEquivarianceReport,
}

fn density_grid<D: Diffeomorphism + Sync + ?Sized>(
    model: &D,
    rho: &Density<'_>,
    n: usize,
    extent: f64,
) -> Vec<[f64; 4]> {
    let rho_h = transform_density(model, rho);
    let coord = |i: usize| -extent + 2.0 * extent * i as f64 / (n - 1) as f64;
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let p: Point = [coord(i), coord(j)];
            let base = rho.eval(&p).unwrap_or(f64::NAN);
            let moved = if Geometry::R2Punctured.contains(&p) {
                rho_h.eval(&p).unwrap_or(f64::NAN)
            } else {
                f64::NAN
            };
            rows.push([p[0], p[1], base, moved]);
        }
    }
    rows
}

fn density(a: DensityArgs) -> Outcome {
    let seed = resolve_seed(a.seed)?;
    if a.grid < 2 || !(a.extent > 0.0) || !(a.r_lo > 0.0 && a.r_hi > a.r_lo) {
        return Err(
            Error::Config("need --grid >= 2, --extent > 0 and 0 < --r-lo < --r-hi".into()).into(),
        );
    }
    let rho = Density::standard_gaussian();
    let region = Region::new(a.r_lo, a.r_hi);
    let exact;
    let trained;
    let (model, label): (&(dyn Diffeomorphism + Sync), String) = match &a.checkpoint {
        Some(path) => {
            trained = load_checkpoint(path)?;
            if trained.geometry != Geometry::R2Punctured {
                return Err(Error::Config("density expects a plane model".into()).into());
            }
            (&trained, path.display().to_string())
        }
        None => {
            exact = radial_translation();
            (&exact, "radial_translation".into())
        }
    };
    let rows = density_grid(model, &rho, a.grid, a.extent);
    let check = check_density_equivariance_in(
        Geometry::R2Punctured,
        &rho,
        model,
        region,
        a.samples,
        a.tol,
        seed,
    );
    let rho_h = transform_density(model, &rho);
    let results = DensityResults {
        model: label,
        rho_h_at_2_0: rho_h.eval(&[2.0, 0.0]).ok(),
        grid_points: rows.len(),
        undefined_points: rows.iter().filter(|r| r[3].is_nan()).count(),
        check,
    };
    let pass = results.check.pass && results.check.input_pass;
    println!(
        "rho_h(2,0) = {}, density residual {:.3e} (input {:.3e}) -> {}",
        results
            .rho_h_at_2_0
            .map_or("undefined".into(), |v| format!("{v:.6}")),
        results.check.induced_residual,
        results.check.input_residual,
        if pass { "PASS" } else { "FAIL" }
    );
    if let Some(dir) = &a.out {
        let config = json!({
            "checkpoint": a.checkpoint, "grid": a.grid, "extent": a.extent, "r_lo": a.r_lo,
            "r_hi": a.r_hi, "samples": a.samples, "tol": a.tol,
        });
        let mut out =
            RunOutputs::new(Report::new("density", Some(seed), config, &results)?.with_pass(pass));
        out.density = Some((Geometry::R2Punctured, rows));
        emit_reports(&out, dir)?;
    }
    Ok(pass)
}

#[derive(Serialize)]
struct GradcheckResults {
    params: usize,
    batch: usize,
    max_rel_error: f64,
    max_abs_error: f64,
    worst_index: usize,
    floor: f64,
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let seed = resolve_seed(a.seed)?;
    if a.batch == 0 || !(a.eps > 0.0) {
        return Err(Error::Config("need --batch >= 1 and --eps > 0".into()).into());
    }
    let model = scaled_model(&a.model, seed)?;
    let (inputs, targets) = gradcheck_batch(&model, a.batch, a.noise, seed.wrapping_add(1));
    let report = gradient_check(&model, &inputs, &targets, a.eps)?;
    let pass = report.max_rel_error < a.tol;
    println!(
        "{} params: max relative error {:.3e} (coordinate {}), max absolute {:.3e} -> {}",
        report.params,
        report.max_rel_error,
        report.worst_index,
        report.max_abs_error,
        if pass { "PASS" } else { "FAIL" }
    );
    if let Some(dir) = &a.out {
        let config = json!({"model": model_echo(&a.model), "batch": a.batch, "eps": a.eps, "noise": a.noise, "tol": a.tol});
        let results = GradcheckResults {
            params: report.params,
            batch: a.batch,
            max_rel_error: report.max_rel_error,
            max_abs_error: report.max_abs_error,
            worst_index: report.worst_index,
            floor: report.floor,
        };
        emit_reports(
            &RunOutputs::new(
                Report::new("gradcheck", Some(seed), config, &results)?.with_pass(pass),
            ),
            dir,
        )?;
    }
    Ok(pass)
}
