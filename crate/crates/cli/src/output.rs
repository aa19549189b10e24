use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// 17 significant digits, `.` decimal separator.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// In-memory CSV written once at the end of a phase.
pub struct Csv {
    body: String,
    width: usize,
    footer: Vec<String>,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut body = String::new();
        body.push_str(&header.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(","));
        body.push('\n');
        Csv {
            body,
            width: header.len(),
            footer: Vec::new(),
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.width);
        let line: Vec<String> = values.iter().map(|v| num(*v)).collect();
        self.body.push_str(&line.join(","));
        self.body.push('\n');
    }

    /// A `# key: value` comment before the meta line.
    pub fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.footer.push(format!("# {key}: {value}"));
    }

    pub fn write(&self, path: &Path, hash: &str) -> Result<(), CliError> {
        let mut text = self.body.clone();
        for line in &self.footer {
            let _ = writeln!(text, "{line}");
        }
        let _ = writeln!(text, "# meta: schema={} config_sha256={hash}", crate::config::SCHEMA);
        std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Compact label for file names: 0.5 -> "0.5", [1, 0] -> "1_0".
pub fn label(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join("_")
}
