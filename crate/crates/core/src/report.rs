//! CSV and JSON output for experiment runs.
//!
//! Every float is written with 17 significant digits, in JSON as well as in
//! CSV, so files are byte-stable across runs and parse back exactly. No file
//! records wall-clock times or absolute paths.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::manifold::Geometry;
use crate::train::{History, CHECKPOINT_VERSION};

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const DENSITY_FILE: &str = "density.csv";

/// `v` with 17 significant digits; non-finite values as `nan`, `inf`,
/// `-inf`.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

/// Pretty JSON whose floats go through [`fmt_float`].
struct SigFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SigFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_float(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut out, SigFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// Contents of `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub checkpoint_version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub results: Value,
    pub pass: Option<bool>,
}

impl Report {
    pub fn new(
        command: &str,
        seed: Option<u64>,
        config: impl Serialize,
        results: impl Serialize,
    ) -> Result<Self> {
        Ok(Report {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_version: CHECKPOINT_VERSION.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            results: serde_json::to_value(results)?,
            pass: None,
        })
    }

    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = Some(pass);
        self
    }
}

/// Everything one run emits; absent parts produce no file.
#[derive(Debug, Clone)]
pub struct RunOutputs<'a> {
    pub report: Report,
    pub history: Option<&'a History>,
    pub curves: Option<(Geometry, Vec<[f64; 3]>)>,
    pub density: Option<(Geometry, Vec<[f64; 4]>)>,
}

impl<'a> RunOutputs<'a> {
    pub fn new(report: Report) -> Self {
        RunOutputs {
            report,
            history: None,
            curves: None,
            density: None,
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn csv_text<R: AsRef<[f64]>>(header: &[&str], rows: &[R]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.as_ref().iter().map(|v| fmt_float(*v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn metrics_text(history: &History) -> String {
    let mut s = String::from("epoch,loss,equiv_violation\n");
    for e in &history.entries {
        s.push_str(&format!(
            "{},{},{}\n",
            e.epoch,
            fmt_float(e.loss),
            fmt_float(e.equiv_violation)
        ));
    }
    s
}

/// Header of the coefficient table: `r,A,B` or `theta,A,B`.
pub fn curves_header(geometry: Geometry) -> [&'static str; 3] {
    match geometry {
        Geometry::R2Punctured => ["r", "A", "B"],
        Geometry::Sphere2 => ["theta", "A", "B"],
    }
}

pub fn density_header(geometry: Geometry) -> [&'static str; 4] {
    let [a, b] = geometry.coordinate_names();
    [a, b, "rho", "rho_h"]
}

/// Writes the run's files into `out_dir` (created if needed) and returns
/// their paths in a fixed order.
pub fn emit_reports(outputs: &RunOutputs<'_>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, &text)?;
        written.push(path);
        Ok(())
    };
    put(REPORT_FILE, to_json_string(&outputs.report)?)?;
    if let Some(h) = outputs.history {
        put(METRICS_FILE, metrics_text(h))?;
    }
    if let Some((g, rows)) = &outputs.curves {
        put(CURVES_FILE, csv_text(&curves_header(*g), rows))?;
    }
    if let Some((g, rows)) = &outputs.density {
        put(DENSITY_FILE, csv_text(&density_header(*g), rows))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::HistoryEntry;

    #[test]
    fn float_format() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-2.0), "-2.0000000000000000e0");
        assert_eq!(fmt_float(f64::NAN), "nan");
        for v in [0.1, 1.0 / 3.0, -7.25e-300, 6.02e23] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn json_floats_have_17_digits() {
        let v = serde_json::json!({"a": 0.5, "b": [1e-3, 2], "c": "x"});
        let s = to_json_string(&v).unwrap();
        assert!(s.contains("\"a\": 5.0000000000000000e-1"));
        assert!(s.contains("1.0000000000000000e-3"));
        assert!(s.contains("\n    2\n"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"][0].as_f64(), Some(1e-3));
    }

    #[test]
    fn headers_and_files() {
        assert_eq!(curves_header(Geometry::R2Punctured).join(","), "r,A,B");
        assert_eq!(curves_header(Geometry::Sphere2).join(","), "theta,A,B");
        assert_eq!(
            density_header(Geometry::R2Punctured).join(","),
            "x,y,rho,rho_h"
        );
        assert_eq!(
            density_header(Geometry::Sphere2).join(","),
            "theta,phi,rho,rho_h"
        );

        let history = History {
            entries: vec![HistoryEntry {
                epoch: 0,
                loss: 1.0,
                equiv_violation: 0.0,
            }],
            losses: vec![1.0],
            clamped: 0,
        };
        let mut out = RunOutputs::new(
            Report::new("train", Some(42), "cfg", 1.5)
                .unwrap()
                .with_pass(true),
        );
        out.history = Some(&history);
        out.curves = Some((Geometry::R2Punctured, vec![[0.5, 2.0, 0.0]]));
        let dir = tempfile::tempdir().unwrap();
        let files = emit_reports(&out, dir.path()).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap())
            .collect();
        assert_eq!(names, [REPORT_FILE, METRICS_FILE, CURVES_FILE]);
        let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(
            metrics,
            "epoch,loss,equiv_violation\n0,1.0000000000000000e0,0.0000000000000000e0\n"
        );
        let report: Value = serde_json::from_str(&fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(report["seed"], 42);
        assert_eq!(report["pass"], true);
        assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
    }
}
