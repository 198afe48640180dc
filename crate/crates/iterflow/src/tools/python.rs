//! Local sandboxed-ish Python execution for hermetic runs.
//!
//! Code is piped to the interpreter on stdin and killed at the deadline.
//! Only printed output comes back; a clean run that prints nothing yields
//! an explicit empty-output notice. Code execution is never retried.

use std::io::Write;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::mdp::{ToolResponse, ToolStatus};

pub const EMPTY_OUTPUT_NOTICE: &str =
    "(no output — all results must be explicitly printed)";

#[derive(Debug, Clone)]
pub struct PythonRunner {
    pub interpreter: String,
}

impl Default for PythonRunner {
    fn default() -> Self {
        Self { interpreter: "python3".to_string() }
    }
}

impl PythonRunner {
    pub fn run(&self, code: &str, deadline: Duration) -> ToolResponse {
        if code.trim().is_empty() {
            return ToolResponse::error("PythonInterpreter", "code is empty");
        }
        let start = Instant::now();
        let mut child = match Command::new(&self.interpreter)
            .arg("-")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(c) => c,
            Err(e) => {
                return ToolResponse::error(
                    "PythonInterpreter",
                    format!("failed to start interpreter: {e}"),
                )
            }
        };
        if let Some(stdin) = child.stdin.take() {
            let mut stdin = stdin;
            let _ = stdin.write_all(code.as_bytes());
        }

        loop {
            match child.try_wait() {
                Ok(Some(status)) => {
                    let out = child.wait_with_output().unwrap_or_else(|_| std::process::Output {
                        status,
                        stdout: Vec::new(),
                        stderr: Vec::new(),
                    });
                    let stdout = String::from_utf8_lossy(&out.stdout).trim_end().to_string();
                    let stderr = String::from_utf8_lossy(&out.stderr).trim_end().to_string();
                    let elapsed = start.elapsed();
                    if !status.success() {
                        return ToolResponse {
                            payload: format!("execution failed (exit {status}):\n{stderr}"),
                            status: ToolStatus::ToolError,
                            elapsed,
                            tool_name: "PythonInterpreter".into(),
                        };
                    }
                    let payload = if stdout.is_empty() {
                        EMPTY_OUTPUT_NOTICE.to_string()
                    } else {
                        stdout
                    };
                    return ToolResponse {
                        payload,
                        status: ToolStatus::Ok,
                        elapsed,
                        tool_name: "PythonInterpreter".into(),
                    };
                }
                Ok(None) => {
                    if start.elapsed() >= deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        return ToolResponse {
                            payload: format!(
                                "execution timed out after {} ms",
                                deadline.as_millis()
                            ),
                            status: ToolStatus::Timeout,
                            elapsed: start.elapsed(),
                            tool_name: "PythonInterpreter".into(),
                        };
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => {
                    return ToolResponse::error(
                        "PythonInterpreter",
                        format!("failed to poll interpreter: {e}"),
                    )
                }
            }
        }
    }
}
