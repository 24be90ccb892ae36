//! Per-Gaussian scalar sidecar files (importance scores, curvature, ...).
//!
//! Plain CSV: a header `index,<name>,...` followed by one row per Gaussian.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("column '{name}' has {found} values, expected {expected}")]
    Ragged { name: String, expected: usize, found: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTable {
    pub columns: Vec<(String, Vec<f64>)>,
}

impl ScalarTable {
    pub fn new() -> Self {
        Self { columns: Vec::new() }
    }

    pub fn with(mut self, name: &str, values: Vec<f64>) -> Self {
        self.columns.push((name.to_string(), values));
        self
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.1.len())
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|c| c.0 == name).map(|c| c.1.as_slice())
    }

    pub fn to_csv(&self) -> Result<String, SidecarError> {
        let n = self.rows();
        for (name, v) in &self.columns {
            if v.len() != n {
                return Err(SidecarError::Ragged {
                    name: name.clone(),
                    expected: n,
                    found: v.len(),
                });
            }
        }
        let mut out = String::from("index");
        for (name, _) in &self.columns {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for i in 0..n {
            let _ = write!(out, "{i}");
            for (_, v) in &self.columns {
                let _ = write!(out, ",{}", v[i]);
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self, SidecarError> {
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or(SidecarError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let mut names = head.split(',');
        if names.next() != Some("index") {
            return Err(SidecarError::Parse {
                line: 1,
                message: "header must start with 'index'".into(),
            });
        }
        let mut columns: Vec<(String, Vec<f64>)> = names.map(|n| (n.to_string(), Vec::new())).collect();
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SidecarError::Parse { line: no + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns.len() + 1 {
                return Err(err(format!("expected {} fields, found {}", columns.len() + 1, fields.len())));
            }
            for (col, f) in columns.iter_mut().zip(&fields[1..]) {
                col.1.push(f.parse().map_err(|_| err(format!("invalid number '{f}'")))?);
            }
        }
        Ok(Self { columns })
    }

    pub fn save(&self, path: &Path) -> Result<(), SidecarError> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SidecarError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

impl Default for ScalarTable {
    fn default() -> Self {
        Self::new()
    }
}
