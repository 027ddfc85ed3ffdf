//! Report envelope, output routing, and exit codes.

use std::fs;
use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::svg::Plot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] schedlaw::Error),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for numerical failures, 1 for everything the user can fix in the
    /// input.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numeric() => 2,
            _ => 1,
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a Value,
    result: &'a Value,
}

pub struct Artifacts {
    pub command: &'static str,
    pub config: Value,
    pub result: Value,
    pub csv: Option<Vec<u8>>,
    pub svg: Option<Plot>,
}

impl Artifacts {
    pub fn report(&self) -> Result<String, CliError> {
        let envelope = Envelope {
            tool: "schedlaw",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: &self.config,
            result: &self.result,
        };
        let mut text = serde_json::to_string_pretty(&envelope)?;
        text.push('\n');
        Ok(text)
    }

    pub fn emit(&self, format: Format, out: Option<&Path>) -> Result<(), CliError> {
        let report = self.report()?;
        let body = match format {
            Format::Json => return write(out, report.as_bytes()),
            Format::Csv => self
                .csv
                .clone()
                .ok_or_else(|| CliError::Usage(format!("`{}` has no CSV output", self.command)))?,
            Format::Svg => self
                .svg
                .as_ref()
                .map(|p| p.render().into_bytes())
                .ok_or_else(|| CliError::Usage(format!("`{}` has no SVG output", self.command)))?,
        };
        write(out, &body)?;
        if let Some(path) = out {
            let side = path.with_extension("json");
            if side != path {
                fs::write(side, report)?;
            }
        }
        Ok(())
    }
}

fn write(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
        }
    }
    Ok(())
}
