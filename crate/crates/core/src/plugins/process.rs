//! External plug-ins running as child processes.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;

use crate::geometry::BBox;
use crate::plugins::protocol::ProtocolClient;
use crate::plugins::{Detector, PluginError, ScoredBox, Tracker};

const STDERR_TAIL_LINES: usize = 20;

/// A child process speaking the line protocol on its stdin/stdout.
///
/// The last lines the child wrote to stderr are kept and attached to
/// protocol errors. Dropping the plug-in sends `shutdown` and reaps it.
pub struct ExternalPlugin {
    command: String,
    child: Child,
    client: ProtocolClient<BufReader<ChildStdout>, ChildStdin>,
    stderr_tail: Arc<Mutex<VecDeque<String>>>,
    closed: bool,
}

impl std::fmt::Debug for ExternalPlugin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalPlugin").field("command", &self.command).finish()
    }
}

impl ExternalPlugin {
    /// Starts `program` with `args`.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, PluginError> {
        let command = std::iter::once(program.to_owned()).chain(args.iter().cloned()).collect::<Vec<_>>().join(" ");
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| PluginError::Spawn { command: command.clone(), source })?;

        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let stderr = child.stderr.take().expect("stderr is piped");

        let stderr_tail = Arc::new(Mutex::new(VecDeque::new()));
        let tail = Arc::clone(&stderr_tail);
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                let mut t = tail.lock().unwrap();
                if t.len() == STDERR_TAIL_LINES {
                    t.pop_front();
                }
                t.push_back(line);
            }
        });

        let tail = Arc::clone(&stderr_tail);
        let client = ProtocolClient::new(command.clone(), BufReader::new(stdout), stdin)
            .with_diagnostics(move || tail.lock().unwrap().iter().cloned().collect::<Vec<_>>().join(" | "));
        Ok(ExternalPlugin { command, child, client, stderr_tail, closed: false })
    }

    /// Splits `command_line` on whitespace; no shell quoting is applied.
    pub fn spawn_command_line(command_line: &str) -> Result<Self, PluginError> {
        let mut parts = command_line.split_whitespace().map(str::to_owned);
        let program = parts.next().ok_or_else(|| PluginError::Other("empty plug-in command line".into()))?;
        Self::spawn(&program, &parts.collect::<Vec<_>>())
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sends `shutdown` and requires the child to exit with status 0.
    pub fn shutdown(mut self) -> Result<(), PluginError> {
        self.close()
    }

    fn close(&mut self) -> Result<(), PluginError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        let sent = self.client.shutdown();
        let status = self.child.wait().map_err(|e| PluginError::Other(e.to_string()))?;
        sent?;
        if !status.success() {
            return Err(PluginError::Protocol {
                plugin: self.command.clone(),
                msg: format!("exited with {status}"),
                diagnostics: self.stderr_tail.lock().unwrap().iter().cloned().collect::<Vec<_>>().join(" | "),
            });
        }
        Ok(())
    }

    /// Turns an unexpected child exit into a protocol error.
    fn check_alive(&mut self, err: PluginError) -> PluginError {
        if let Ok(Some(status)) = self.child.try_wait() {
            if !status.success() {
                if let PluginError::Protocol { plugin, msg, diagnostics } = err {
                    return PluginError::Protocol {
                        plugin,
                        msg: format!("{msg}; plug-in exited with {status}"),
                        diagnostics,
                    };
                }
            }
        }
        err
    }
}

impl Drop for ExternalPlugin {
    fn drop(&mut self) {
        if !self.closed && self.close().is_err() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

impl Tracker for ExternalPlugin {
    fn init(&mut self, frame: &Path, gt: BBox) -> Result<(), PluginError> {
        gt.validate()?;
        self.client.init(frame, gt).map_err(|e| self.check_alive(e))
    }

    fn track(&mut self, frame: &Path) -> Result<ScoredBox, PluginError> {
        self.client.track(frame).map_err(|e| self.check_alive(e))
    }
}

impl Detector for ExternalPlugin {
    fn detect(&mut self, frame: &Path) -> Result<Vec<ScoredBox>, PluginError> {
        self.client.detect(frame).map_err(|e| self.check_alive(e))
    }
}
