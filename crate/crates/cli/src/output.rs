//! Exit-code mapping, field loading and artifact writing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lharmonic::fields::CoefficientField;
use serde::Serialize;

#[derive(Debug)]
pub enum Failure {
    /// Bad input: exit code 2.
    Config(String),
    /// The numerics could not produce an answer: exit code 3.
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<lharmonic::Error> for Failure {
    fn from(e: lharmonic::Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

pub fn config(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

const SHIPPED_FIELDS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fields");

/// Reads a field file; a path that does not exist is retried inside the shipped fields directory.
pub fn load_field(path: &Path) -> Result<CoefficientField, Failure> {
    let resolved = if path.exists() {
        path.to_path_buf()
    } else {
        let name = path.file_name().map(PathBuf::from).unwrap_or_default();
        let shipped = Path::new(SHIPPED_FIELDS).join(&name);
        if path.components().count() == 1 && shipped.exists() {
            shipped
        } else {
            return Err(config(format!("field file {} not found", path.display())));
        }
    };
    CoefficientField::from_spec_file(&resolved).map_err(|e| config(format!("{}: {e}", resolved.display())))
}

/// Prints the primary table and, when an output directory is set, stores artifacts there.
pub struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    pub fn new(dir: Option<&Path>) -> Result<Self, Failure> {
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| config(format!("cannot create {}: {e}", d.display())))?;
        }
        Ok(Self { dir: dir.map(Path::to_path_buf) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Prints `csv` and writes it to `name` in the output directory.
    pub fn table(&self, name: &str, csv: &str) -> Result<(), Failure> {
        print!("{csv}");
        self.file(name, csv)
    }

    pub fn file(&self, name: &str, contents: &str) -> Result<(), Failure> {
        if let Some(d) = &self.dir {
            let path = d.join(name);
            fs::write(&path, contents).map_err(|e| config(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<(), Failure> {
        if self.dir.is_some() {
            let mut text = lharmonic::json::to_string(value)?;
            text.push('\n');
            self.file(name, &text)?;
        }
        Ok(())
    }
}

/// One line of a margin table: passes when `rhs − lhs ≥ −tolerance`.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Row {
    pub fn new(check: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let margin = rhs - lhs;
        Self { check: check.into(), lhs, rhs, margin, tolerance, pass: margin >= -tolerance }
    }

    pub fn with_tolerance(self, tol: Option<f64>) -> Self {
        match tol {
            Some(t) => Row::new(self.check, self.lhs, self.rhs, t),
            None => self,
        }
    }
}

pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

pub fn margin_csv(rows: &[Row]) -> String {
    let mut out = String::from("check,lhs,rhs,margin,tolerance,pass\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.check, num(r.lhs), num(r.rhs), num(r.margin), num(r.tolerance), r.pass);
    }
    out
}

pub fn positive(name: &str, value: f64) -> Result<f64, Failure> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(config(format!("--{name} must be positive, got {value}")))
    }
}
