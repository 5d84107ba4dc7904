//! Schema-checked CSV tables with fixed float formatting.

use std::path::Path;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Convergence,
    LambdaSurface { dim: usize, assets: usize },
    RiccatiPath { dim: usize },
    Validation,
}

impl Schema {
    pub fn file_name(self) -> &'static str {
        match self {
            Schema::Convergence => "convergence.csv",
            Schema::LambdaSurface { .. } => "lambda_surface.csv",
            Schema::RiccatiPath { .. } => "riccati_path.csv",
            Schema::Validation => "validation.csv",
        }
    }

    pub fn columns(self) -> Vec<String> {
        let fixed = |c: &[&str]| c.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match self {
            Schema::Convergence => fixed(&["T", "t_policy", "l1_error", "slope_running"]),
            Schema::LambdaSurface { dim, assets } => {
                let mut c = vec!["t".to_string()];
                c.extend((1..=dim).map(|k| format!("y{k}")));
                c.extend((1..=assets).map(|n| format!("lambda_{n}")));
                c.push("r".into());
                c
            }
            Schema::RiccatiPath { dim } => {
                let mut c = fixed(&["s", "investor", "alpha"]);
                c.extend((1..=dim).map(|k| format!("beta_{k}")));
                for k in 1..=dim {
                    c.extend((1..=dim).map(|l| format!("gamma_{k}{l}")));
                }
                c.push("t0_riccati".into());
                c
            }
            Schema::Validation => fixed(&[
                "check",
                "investor",
                "param",
                "horizon",
                "estimate",
                "std_error",
                "t_stat",
                "samples",
            ]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

/// `precision` significant digits in scientific notation; `nan`, `inf`, `-inf`.
pub fn format_float(x: f64, precision: usize) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        // normalize -0 so identical values print identically
        let x = if x == 0.0 { 0.0 } else { x };
        format!("{:.*e}", precision - 1, x)
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    pub schema: Schema,
    /// Row count the producer promised; checked on write.
    pub expected_rows: usize,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(schema: Schema, expected_rows: usize) -> Self {
        Self {
            schema,
            expected_rows,
            rows: Vec::with_capacity(expected_rows),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let name = self.schema.file_name();
        let width = self.schema.columns().len();
        if self.rows.len() != self.expected_rows {
            return Err(CliError::Schema(format!(
                "{name}: {} rows, expected {}",
                self.rows.len(),
                self.expected_rows
            )));
        }
        if let Some(k) = self.rows.iter().position(|r| r.len() != width) {
            return Err(CliError::Schema(format!(
                "{name}: row {k} has {} fields, header has {width}",
                self.rows[k].len()
            )));
        }
        for (k, row) in self.rows.iter().enumerate() {
            for cell in row {
                if let Cell::Text(s) = cell {
                    if s.contains([',', '\n', '"']) {
                        return Err(CliError::Schema(format!("{name}: row {k} text field '{s}' needs quoting")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn render(&self, precision: usize) -> Result<String, CliError> {
        self.validate()?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::Io(format!("{}: {e}", self.schema.file_name()));
        w.write_record(self.schema.columns()).map_err(fail)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|cell| match cell {
                Cell::Num(x) => format_float(*x, precision),
                Cell::Int(n) => n.to_string(),
                Cell::Text(s) => s.clone(),
                Cell::Empty => String::new(),
            }))
            .map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("fields are UTF-8"))
    }

    pub fn write(&self, dir: &Path, precision: usize) -> Result<(), CliError> {
        let text = self.render(precision)?;
        let path = dir.join(self.schema.file_name());
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
    }
}
