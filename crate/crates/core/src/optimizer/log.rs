//! Line-delimited JSON run log: one header line, then one record per
//! iteration, each flushed as soon as the iteration completes.

use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{OptimizerError, RunRecord};
use crate::pareto::{OptimizationConfig, Prompt, ScoreVector};

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format_version: u32,
    pub config: OptimizationConfig,
    pub pool_digest: String,
    pub seed_prompt: Prompt,
    /// The seed's scores on the frontier evaluation set, taken before the
    /// first iteration.
    pub seed_scores: ScoreVector,
}

/// A parsed log. `intact_len` is the byte length of the well-formed prefix;
/// a torn final line (no trailing newline) lies beyond it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub header: Option<LogHeader>,
    pub records: Vec<RunRecord>,
    pub intact_len: u64,
    pub torn_bytes: u64,
}

fn line_error(path: &Path, line: usize, message: impl Into<String>) -> OptimizerError {
    OptimizerError::Log {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parse log text. Only the final segment may be incomplete; it is reported
/// through `torn_bytes` and otherwise ignored.
pub fn parse_log(text: &str, path: &Path) -> Result<ParsedLog, OptimizerError> {
    let (complete, torn) = match text.rfind('\n') {
        Some(last_nl) => text.split_at(last_nl + 1),
        None => ("", text),
    };
    let mut parsed = ParsedLog {
        header: None,
        records: Vec::new(),
        intact_len: complete.len() as u64,
        torn_bytes: torn.len() as u64,
    };
    for (idx, line) in complete.lines().enumerate() {
        let number = idx + 1;
        if idx == 0 {
            let header: LogHeader =
                serde_json::from_str(line).map_err(|e| line_error(path, number, e.to_string()))?;
            if header.format_version != LOG_FORMAT_VERSION {
                return Err(line_error(
                    path,
                    number,
                    format!("unsupported log format version {}", header.format_version),
                ));
            }
            parsed.header = Some(header);
            continue;
        }
        let record: RunRecord =
            serde_json::from_str(line).map_err(|e| line_error(path, number, e.to_string()))?;
        record
            .validate()
            .map_err(|m| line_error(path, number, m))?;
        let expected = parsed.records.len() as u32 + 1;
        if record.iteration != expected {
            return Err(line_error(
                path,
                number,
                format!("expected iteration {expected}, found {}", record.iteration),
            ));
        }
        parsed.records.push(record);
    }
    Ok(parsed)
}

pub fn read_log(path: &Path) -> Result<ParsedLog, OptimizerError> {
    let text = std::fs::read_to_string(path).map_err(|source| OptimizerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_log(&text, path)
}

/// Append handle on a run log.
#[derive(Debug)]
pub struct RunLogWriter {
    path: PathBuf,
    file: File,
}

impl RunLogWriter {
    /// Start a new log, replacing any existing file.
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, OptimizerError> {
        let file = File::create(path).map_err(|source| OptimizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut writer = Self {
            path: path.to_path_buf(),
            file,
        };
        writer.write_line(header)?;
        Ok(writer)
    }

    /// Reopen an existing log for appending after cutting it to `len` bytes.
    pub fn reopen_truncated(path: &Path, len: u64) -> Result<Self, OptimizerError> {
        let io = |source| OptimizerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = OpenOptions::new().write(true).open(path).map_err(io)?;
        file.set_len(len).map_err(io)?;
        file.seek(SeekFrom::End(0)).map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<(), OptimizerError> {
        self.write_line(record)
    }

    fn write_line<T: Serialize>(&mut self, value: &T) -> Result<(), OptimizerError> {
        let mut line = serde_json::to_string(value).expect("log entries serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .and_then(|_| self.file.sync_data())
            .map_err(|source| OptimizerError::Io {
                path: self.path.clone(),
                source,
            })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
