//! Formal-proof verification through an external prover process.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{FailureDetail, FailureKind};
use crate::pareto::TaskInstance;

/// Cap on captured prover output carried in a failure detail.
pub const OUTPUT_CAP: usize = 32 * 1024;

const FILE_PLACEHOLDER: &str = "{file}";

fn default_timeout_s() -> f64 {
    60.0
}

fn default_accept() -> Vec<i32> {
    vec![0]
}

/// How to invoke the prover. `command[0]` is the executable; every
/// occurrence of `{file}` in the arguments is replaced by the path of the
/// generated source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProverConfig {
    pub command: Vec<String>,
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_accept")]
    pub accept_exit_codes: Vec<i32>,
    /// Extension of the generated source file.
    #[serde(default = "default_extension")]
    pub file_extension: String,
}

fn default_extension() -> String {
    "lean".into()
}

impl ProverConfig {
    pub fn new(command: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            command: command.into_iter().map(Into::into).collect(),
            workdir: None,
            timeout_s: default_timeout_s(),
            accept_exit_codes: default_accept(),
            file_extension: default_extension(),
        }
    }

    pub fn with_timeout(mut self, timeout_s: f64) -> Self {
        self.timeout_s = timeout_s;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.command.is_empty() {
            return Err("prover command is empty".into());
        }
        if !self.command.iter().skip(1).any(|a| a.contains(FILE_PLACEHOLDER)) {
            return Err(format!("prover arguments must contain `{FILE_PLACEHOLDER}`"));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err("prover timeout_s must be positive".into());
        }
        if self.accept_exit_codes.is_empty() {
            return Err("accept_exit_codes is empty".into());
        }
        Ok(())
    }
}

/// Contents of the first fenced code block, or the whole completion when
/// there is none. An unterminated fence runs to the end of the text.
pub fn extract_proof_body(completion: &str) -> &str {
    let Some(open) = completion.find("```") else {
        return completion;
    };
    let after_fence = &completion[open + 3..];
    // The rest of the opening line is a language tag.
    let body_start = match after_fence.find('\n') {
        Some(nl) => nl + 1,
        None => return completion,
    };
    let body = &after_fence[body_start..];
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

/// Source handed to the prover: header, theorem statement and proof body.
pub fn proof_source(completion: &str, instance: &TaskInstance) -> String {
    let mut source = String::new();
    if let Some(header) = instance.prover_header.as_deref().filter(|h| !h.is_empty()) {
        source.push_str(header);
        source.push('\n');
    }
    source.push_str(&instance.statement);
    source.push('\n');
    source.push_str(extract_proof_body(completion).trim_end());
    source.push('\n');
    source
}

/// Run the prover on the completion's proof. Exactly one attempt is made.
pub fn verify_proof(
    completion: &str,
    instance: &TaskInstance,
    prover: &ProverConfig,
) -> Result<(), FailureDetail> {
    prover
        .validate()
        .map_err(|e| FailureDetail::new(FailureKind::ProverCrash, e))?;
    let crash = |e: std::io::Error| FailureDetail::new(FailureKind::ProverCrash, e.to_string());

    let dir = prover.workdir.clone().unwrap_or_else(std::env::temp_dir);
    let mut file = tempfile::Builder::new()
        .prefix("promptevo-")
        .suffix(&format!(".{}", prover.file_extension))
        .tempfile_in(&dir)
        .map_err(crash)?;
    file.write_all(proof_source(completion, instance).as_bytes())
        .and_then(|_| file.flush())
        .map_err(crash)?;
    let path = file.path().to_string_lossy().into_owned();

    let mut command = Command::new(&prover.command[0]);
    command
        .args(prover.command[1..].iter().map(|a| a.replace(FILE_PLACEHOLDER, &path)))
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(workdir) = &prover.workdir {
        command.current_dir(workdir);
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }
    let mut child = command.spawn().map_err(crash)?;
    let stdout = spawn_reader(child.stdout.take());
    let stderr = spawn_reader(child.stderr.take());

    let deadline = Duration::from_secs_f64(prover.timeout_s);
    let waited = wait_with_deadline(&mut child, deadline);
    // Reap anything the prover left behind so the pipes close.
    kill_group(&child);
    let status = match waited {
        Ok(status) => status,
        Err(e) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(crash(e));
        }
    };
    let output = collect_output(stdout, stderr);

    match status {
        None => Err(FailureDetail::new(
            FailureKind::ProverTimeout,
            format!("prover exceeded {}s\n{output}", prover.timeout_s),
        )),
        Some(status) => match status.code() {
            Some(code) if prover.accept_exit_codes.contains(&code) => Ok(()),
            Some(code) => Err(FailureDetail::new(
                FailureKind::ProofRejected,
                format!("prover exited with code {code}\n{output}"),
            )),
            None => Err(FailureDetail::new(
                FailureKind::ProverCrash,
                format!("prover terminated by signal\n{output}"),
            )),
        },
    }
}

/// `Ok(None)` on timeout; the process group has been killed and the child
/// reaped by then.
fn wait_with_deadline(child: &mut Child, deadline: Duration) -> std::io::Result<Option<ExitStatus>> {
    let start = Instant::now();
    let mut pause = Duration::from_millis(1);
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        if start.elapsed() >= deadline {
            kill_group(child);
            let _ = child.kill();
            child.wait()?;
            return Ok(None);
        }
        thread::sleep(pause.min(deadline.saturating_sub(start.elapsed())));
        pause = (pause * 2).min(Duration::from_millis(20));
    }
}

#[cfg(unix)]
fn kill_group(child: &Child) {
    // The child leads its own process group (process_group(0) above).
    let pgid = child.id() as libc::pid_t;
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

#[cfg(not(unix))]
fn kill_group(_child: &Child) {}

fn spawn_reader<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let Some(mut pipe) = pipe else { return kept };
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = OUTPUT_CAP.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        kept
    })
}

fn collect_output(
    stdout: thread::JoinHandle<Vec<u8>>,
    stderr: thread::JoinHandle<Vec<u8>>,
) -> String {
    let out = stdout.join().unwrap_or_default();
    let err = stderr.join().unwrap_or_default();
    let mut text = String::from_utf8_lossy(&out).into_owned();
    if !err.is_empty() {
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&String::from_utf8_lossy(&err));
    }
    truncate_bytes(text, OUTPUT_CAP)
}

fn truncate_bytes(mut text: String, cap: usize) -> String {
    if text.len() > cap {
        let mut cut = cap;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        text.truncate(cut);
    }
    text
}
