//! Output files: every CSV opens with the config hash, and each command
//! leaves a JSON sidecar echoing the full configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Format, Loaded, RunConfig};
use crate::CliError;

pub struct Outputs {
    dir: PathBuf,
    hash: String,
    csv: bool,
    json: bool,
    written: Vec<String>,
}

#[derive(Serialize)]
struct Sidecar<'a, R: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    config: &'a RunConfig,
    outputs: &'a [String],
    result: R,
}

impl Outputs {
    pub fn new(loaded: &Loaded, dir_override: Option<&Path>) -> Self {
        let dir = dir_override
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(&loaded.config.output.directory));
        Self {
            dir,
            hash: loaded.hash.clone(),
            csv: loaded.wants(Format::Csv),
            json: loaded.wants(Format::Json),
            written: Vec::new(),
        }
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io = |e| CliError::Io(path.display().to_string(), e);
        fs::create_dir_all(&self.dir).map_err(io)?;
        fs::write(&path, bytes).map_err(io)?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes `name` with a leading `# config_sha256=...` line; skipped when
    /// CSV is not among the configured formats.
    pub fn csv<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        if !self.csv {
            return Ok(());
        }
        let mut buf = Vec::new();
        let fill = |buf: &mut Vec<u8>| -> std::io::Result<()> {
            writeln!(buf, "# config_sha256={}", self.hash)?;
            body(buf)
        };
        fill(&mut buf).map_err(|e| CliError::Io(name.to_string(), e))?;
        self.write(name, &buf)
    }

    /// `<command>.json` with the config echo, hash, file list and `result`.
    pub fn sidecar<R: Serialize>(&mut self, command: &str, loaded: &Loaded, result: R) -> Result<(), CliError> {
        if !self.json {
            return Ok(());
        }
        let name = format!("{command}.json");
        let mut outputs = self.written.clone();
        outputs.push(name.clone());
        let doc = Sidecar {
            command,
            config_hash: &self.hash,
            config: &loaded.config,
            outputs: &outputs,
            result,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Run(e.to_string()))?;
        text.push('\n');
        self.write(&name, text.as_bytes())
    }
}

/// Quotes a CSV field when it holds a separator or a quote.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a, b"), "\"a, b\"");
        assert_eq!(csv_field("say \"x\""), "\"say \"\"x\"\"\"");
    }
}
