//! Output models: analytic benchmarks and adapters for external solvers.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Anything that maps an input point to a scalar output.
pub trait Model: Send + Sync {
    fn evaluate(&self, x: &[f64]) -> Result<f64>;
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Model for F {
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self(x))
    }
}

pub fn rastrigin(x: &[f64]) -> f64 {
    10.0 - x.iter().map(|v| v * v - 5.0 * (2.0 * PI * v).cos()).sum::<f64>()
}

/// Low-fidelity Rastrigin variants 1 to 4: offset by 90, magnified by 10,
/// phase-shifted by π/2, and half frequency.
pub fn rastrigin_lf(x: &[f64], variant: u8) -> Result<f64> {
    Ok(match variant {
        1 => 100.0 - x.iter().map(|v| v * v - 5.0 * (2.0 * PI * v).cos()).sum::<f64>(),
        2 => 100.0 - x.iter().map(|v| 10.0 * v * v - 50.0 * (2.0 * PI * v).cos()).sum::<f64>(),
        3 => 10.0 - x.iter().map(|v| v * v - 5.0 * (2.0 * PI * v + PI / 2.0).cos()).sum::<f64>(),
        4 => 10.0 - x.iter().map(|v| v * v - 5.0 * (PI * v).cos()).sum::<f64>(),
        other => return Err(invalid(format!("low-fidelity variant must be 1..=4, got {other}"))),
    })
}

/// Modified cross-in-tray function
/// `−0.001 (|sin x₁ sin x₂ exp(|100 − √((x₁²+x₂²)/π)|)| + 1)^0.1`.
///
/// The exponential overflows near the origin, so the product is carried
/// as a logarithm.
pub fn cross_in_tray(x: &[f64]) -> f64 {
    let s = (x[0].sin() * x[1].sin()).abs();
    if s == 0.0 {
        return -0.001;
    }
    let e = (100.0 - ((x[0] * x[0] + x[1] * x[1]) / PI).sqrt()).abs();
    let log_term = s.ln() + e;
    // ln(t + 1) for t = exp(log_term), stable for both large and small t
    let log1p = if log_term > 0.0 { log_term + (-log_term).exp().ln_1p() } else { log_term.exp().ln_1p() };
    -0.001 * (0.1 * log1p).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Rastrigin,
    RastriginLf1,
    RastriginLf2,
    RastriginLf3,
    RastriginLf4,
    CrossInTray,
}

impl Builtin {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Self::Rastrigin => rastrigin(x),
            Self::RastriginLf1 => rastrigin_lf(x, 1).unwrap(),
            Self::RastriginLf2 => rastrigin_lf(x, 2).unwrap(),
            Self::RastriginLf3 => rastrigin_lf(x, 3).unwrap(),
            Self::RastriginLf4 => rastrigin_lf(x, 4).unwrap(),
            Self::CrossInTray => cross_in_tray(x),
        }
    }

    pub fn dim(self) -> usize {
        2
    }
}

impl std::str::FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rastrigin" => Self::Rastrigin,
            "rastrigin_lf1" => Self::RastriginLf1,
            "rastrigin_lf2" => Self::RastriginLf2,
            "rastrigin_lf3" => Self::RastriginLf3,
            "rastrigin_lf4" => Self::RastriginLf4,
            "cross_in_tray" => Self::CrossInTray,
            other => return Err(invalid(format!("unknown built-in model '{other}'"))),
        })
    }
}

fn default_cost() -> f64 {
    1.0
}

fn default_timeout() -> f64 {
    60.0
}

fn default_workers() -> usize {
    1
}

/// Configuration of a model handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Builtin {
        name: Builtin,
        #[serde(default = "default_cost")]
        cost: f64,
    },
    /// CSV with header `x1,...,xN,y`.
    Dataset {
        path: PathBuf,
        #[serde(default = "default_cost")]
        cost: f64,
    },
    /// Child process speaking one whitespace-separated input line in and one
    /// numeric line out per evaluation.
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_workers")]
        workers: usize,
        #[serde(default = "default_cost")]
        cost: f64,
    },
}

impl ModelSpec {
    pub fn builtin(name: Builtin) -> Self {
        Self::Builtin { name, cost: 1.0 }
    }

    pub fn cost(&self) -> f64 {
        match self {
            Self::Builtin { cost, .. } | Self::Dataset { cost, .. } | Self::Command { cost, .. } => *cost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Builtin,
    Dataset,
    Command,
}

enum Backend {
    Builtin(Builtin),
    Dataset(Dataset),
    Command(CommandPool),
}

/// A configured model with an evaluation counter and a per-evaluation cost.
pub struct ModelHandle {
    spec: ModelSpec,
    backend: Backend,
    counter: AtomicU64,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle").field("spec", &self.spec).field("evaluations", &self.evaluations()).finish()
    }
}

impl ModelHandle {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let cost = spec.cost();
        if !(cost >= 0.0 && cost.is_finite()) {
            return Err(invalid(format!("model cost must be finite and nonnegative, got {cost}")));
        }
        let backend = match &spec {
            ModelSpec::Builtin { name, .. } => Backend::Builtin(*name),
            ModelSpec::Dataset { path, .. } => Backend::Dataset(Dataset::load(path)?),
            ModelSpec::Command { program, args, timeout_secs, workers, .. } => {
                if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                    return Err(invalid(format!("command timeout must be positive, got {timeout_secs}")));
                }
                Backend::Command(CommandPool::new(
                    program.clone(),
                    args.clone(),
                    Duration::from_secs_f64(*timeout_secs),
                    (*workers).max(1),
                ))
            }
        };
        Ok(Self { spec, backend, counter: AtomicU64::new(0) })
    }

    pub fn builtin(name: Builtin) -> Self {
        Self::new(ModelSpec::builtin(name)).expect("built-in specs are valid")
    }

    pub fn kind(&self) -> ModelKind {
        match self.backend {
            Backend::Builtin(_) => ModelKind::Builtin,
            Backend::Dataset(_) => ModelKind::Dataset,
            Backend::Command(_) => ModelKind::Command,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn cost(&self) -> f64 {
        self.spec.cost()
    }

    /// Successful evaluations so far.
    pub fn evaluations(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }

    pub fn reset_counter(&self) {
        self.counter.store(0, Ordering::SeqCst);
    }
}

impl Model for ModelHandle {
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let y = match &self.backend {
            Backend::Builtin(b) => {
                if x.len() != b.dim() {
                    return Err(invalid(format!("{b:?} takes {} inputs, got {}", b.dim(), x.len())));
                }
                b.eval(x)
            }
            Backend::Dataset(d) => d.lookup(x)?,
            Backend::Command(c) => c.evaluate(x)?,
        };
        self.counter.fetch_add(1, Ordering::SeqCst);
        Ok(y)
    }
}

/// Evaluates `handle` at `x`, counting the evaluation on success.
pub fn external_evaluate(handle: &ModelHandle, x: &[f64]) -> Result<f64> {
    handle.evaluate(x)
}

/// Canonical lookup key: each coordinate at 15 significant digits.
fn canonical_key(x: &[f64]) -> String {
    x.iter().map(|v| format!("{:.14e}", v + 0.0)).collect::<Vec<_>>().join(",")
}

struct Dataset {
    dim: usize,
    rows: HashMap<String, f64>,
}

impl Dataset {
    fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = reader.headers()?.clone();
        let dim = headers.len().saturating_sub(1);
        let expected: Vec<String> = (1..=dim).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
        if dim == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(invalid(format!(
                "{}: dataset header must be x1,...,xN,y, found {}",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = HashMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let values: Vec<f64> = record
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid(format!("{}: row {}: {e}", path.display(), line + 1)))?;
            let key = canonical_key(&values[..dim]);
            if let Some(prev) = rows.insert(key.clone(), values[dim]) {
                if prev != values[dim] {
                    return Err(invalid(format!(
                        "{}: conflicting outputs {prev} and {} for input {key}",
                        path.display(),
                        values[dim]
                    )));
                }
            }
        }
        Ok(Self { dim, rows })
    }

    fn lookup(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(invalid(format!("dataset has {} inputs, query has {}", self.dim, x.len())));
        }
        let key = canonical_key(x);
        self.rows.get(&key).copied().ok_or(Error::DatasetMiss(key))
    }
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<String>>,
}

const STDERR_KEEP: usize = 4096;

impl Session {
    fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Evaluation {
                message: format!("cannot start '{program}': {e}"),
                diagnostics: String::new(),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let err_pipe = child.stderr.take().expect("piped stderr");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        std::thread::spawn(move || {
            for line in BufReader::new(err_pipe).lines().map_while(|l| l.ok()) {
                let mut buf = sink.lock().unwrap();
                buf.push_str(&line);
                buf.push('\n');
                if buf.len() > STDERR_KEEP {
                    let cut = buf.len() - STDERR_KEEP;
                    let cut = (cut..buf.len()).find(|&i| buf.is_char_boundary(i)).unwrap_or(buf.len());
                    buf.drain(..cut);
                }
            }
        });
        Ok(Self { child, stdin, lines, stderr })
    }

    fn diagnostics(&mut self, grace: Duration) -> String {
        let status = match self.child.try_wait() {
            Ok(Some(s)) => Some(s),
            _ => {
                std::thread::sleep(grace);
                self.child.try_wait().ok().flatten()
            }
        };
        // let the stderr reader drain
        std::thread::sleep(Duration::from_millis(20));
        let err = self.stderr.lock().unwrap().clone();
        match status {
            Some(s) => format!("exit status: {s}; stderr: {err}"),
            None => format!("process still running; stderr: {err}"),
        }
    }

    fn request(&mut self, x: &[f64], timeout: Duration) -> std::result::Result<f64, (String, bool)> {
        let line = x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        if let Err(e) = writeln!(self.stdin, "{line}").and_then(|_| self.stdin.flush()) {
            return Err((format!("write to model process failed: {e}"), true));
        }
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(reply)) => reply
                .trim()
                .parse::<f64>()
                .map_err(|_| (format!("model process returned non-numeric output '{}'", reply.trim()), true)),
            Ok(Err(e)) => Err((format!("read from model process failed: {e}"), true)),
            Err(RecvTimeoutError::Timeout) => {
                Err((format!("model process timed out after {:.3} s", timeout.as_secs_f64()), true))
            }
            Err(RecvTimeoutError::Disconnected) => Err(("model process closed its output".into(), true)),
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct CommandPool {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    slots: Vec<Mutex<Option<Session>>>,
}

impl CommandPool {
    fn new(program: String, args: Vec<String>, timeout: Duration, workers: usize) -> Self {
        Self { program, args, timeout, slots: (0..workers).map(|_| Mutex::new(None)).collect() }
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let mut guard = self.slots.iter().find_map(|s| s.try_lock().ok()).unwrap_or_else(|| {
            let i = rayon::current_thread_index().unwrap_or(0) % self.slots.len();
            self.slots[i].lock().unwrap_or_else(|p| p.into_inner())
        });
        if guard.is_none() {
            *guard = Some(Session::spawn(&self.program, &self.args)?);
        }
        let session = guard.as_mut().unwrap();
        match session.request(x, self.timeout) {
            Ok(y) => Ok(y),
            Err((message, restart)) => {
                let diagnostics = session.diagnostics(Duration::from_millis(50));
                if restart {
                    *guard = None;
                }
                Err(Error::Evaluation { message, diagnostics })
            }
        }
    }
}

/// Serves a built-in model over the line protocol on stdin/stdout.
pub fn serve(model: Builtin, input: impl BufRead, mut output: impl Write) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let x: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| invalid(format!("cannot parse input line '{line}': {e}")))?;
        if x.len() != model.dim() {
            return Err(invalid(format!("expected {} inputs, got {}", model.dim(), x.len())));
        }
        writeln!(output, "{}", model.eval(&x))?;
        output.flush()?;
    }
    Ok(())
}
