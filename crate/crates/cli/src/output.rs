//! Self-describing CSV files: `#` comment lines echoing the configuration,
//! one header row, LF line endings and shortest round-trip floats.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::CliError;

pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(comments: &[String], header: &[String]) -> Self {
        let mut text = String::new();
        for c in comments {
            for line in c.lines() {
                let _ = writeln!(text, "# {line}");
            }
        }
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text, width: header.len() }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.width);
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            let _ = write!(self.text, "{v:?}");
        }
        self.text.push('\n');
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        fs::write(&path, &self.text)?;
        Ok(path)
    }
}

/// `re_{stem}_{i}, im_{stem}_{i}` for each component, with `suffix` appended.
pub fn complex_columns(stem: &str, count: usize, suffix: &str) -> Vec<String> {
    (0..count)
        .flat_map(|i| [format!("re_{stem}_{i}{suffix}"), format!("im_{stem}_{i}{suffix}")])
        .collect()
}
