//! Compiles and runs subject programs as child processes under resource limits.
//!
//! Isolation is best-effort: every execution gets a fresh working directory,
//! a cleared environment, rlimits on CPU time, address space and file size,
//! its own process group (killed wholesale on timeout) and, when the kernel
//! allows it, a private network namespace. It is not a security boundary, and
//! LLM-authored code should only be run on machines where that is acceptable.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{normalize_output, ExecStatus, ExecutionOutcome, SourceProgram};

const GENLIB_PY: &str = include_str!("../assets/genlib.py");
const STDERR_KEEP: usize = 64 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("compilation failed:\n{stderr}")]
    CompileFailed { stderr: String },
    #[error("no usable toolchain for `{0}`")]
    ToolchainMissing(String),
    #[error("sandbox I/O failure: {0}")]
    Io(String),
}

fn io_err(e: std::io::Error) -> ExecError {
    ExecError::Io(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Limits {
    pub cpu_ms: u64,
    pub wall_ms: u64,
    pub mem_bytes: u64,
    pub max_output_bytes: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            cpu_ms: 5_000,
            wall_ms: 5_000,
            mem_bytes: 256 * 1024 * 1024,
            max_output_bytes: 8 * 1024 * 1024,
        }
    }
}

impl Limits {
    fn for_compiler() -> Self {
        Self {
            cpu_ms: 120_000,
            wall_ms: 120_000,
            mem_bytes: 0,
            max_output_bytes: 1024 * 1024,
        }
    }
}

/// How one language is built and run. Command templates may use `{src}`
/// (source path), `{bin}` (output binary path) and `{dir}` (artifact dir).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toolchain {
    pub source_file: String,
    /// Build or syntax-check command; `None` for a pure pass-through.
    #[serde(default)]
    pub compile: Option<Vec<String>>,
    pub run: Vec<String>,
    /// Extra files copied next to the source (file name -> contents).
    #[serde(default)]
    pub support_files: BTreeMap<String, String>,
}

fn argv(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| (*s).to_owned()).collect()
}

pub fn default_toolchains() -> BTreeMap<String, Toolchain> {
    let python_check = argv(&[
        "python3",
        "-c",
        "import ast,sys; ast.parse(open(sys.argv[1]).read(), sys.argv[1])",
        "{src}",
    ]);
    let mut map = BTreeMap::new();
    map.insert(
        "cpp".to_owned(),
        Toolchain {
            source_file: "main.cpp".into(),
            compile: Some(argv(&["g++", "-O2", "-std=c++17", "-o", "{bin}", "{src}"])),
            run: argv(&["{bin}"]),
            support_files: BTreeMap::new(),
        },
    );
    map.insert(
        "c".to_owned(),
        Toolchain {
            source_file: "main.c".into(),
            compile: Some(argv(&["gcc", "-O2", "-std=c11", "-o", "{bin}", "{src}", "-lm"])),
            run: argv(&["{bin}"]),
            support_files: BTreeMap::new(),
        },
    );
    map.insert(
        "python3".to_owned(),
        Toolchain {
            source_file: "main.py".into(),
            compile: Some(python_check.clone()),
            run: argv(&["python3", "-B", "{src}"]),
            support_files: BTreeMap::new(),
        },
    );
    map.insert(
        "generator-script".to_owned(),
        Toolchain {
            source_file: "gen.py".into(),
            compile: Some(python_check),
            run: argv(&["python3", "-B", "{src}"]),
            support_files: [("genlib.py".to_owned(), GENLIB_PY.to_owned())].into(),
        },
    );
    map
}

/// A program ready to run. Shared between executions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledArtifact {
    pub key: String,
    pub language_tag: String,
    pub dir: PathBuf,
    pub run_argv: Vec<String>,
    pub compile_stderr: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxOptions {
    pub limits: Limits,
    pub memoize: bool,
    pub isolate_network: bool,
}

impl Default for SandboxOptions {
    fn default() -> Self {
        Self {
            limits: Limits::default(),
            memoize: true,
            isolate_network: true,
        }
    }
}

type ArtifactSlot = Arc<OnceLock<Result<Arc<CompiledArtifact>, ExecError>>>;
type MemoKey = (String, Vec<String>, [u8; 32], Limits);

pub struct Sandbox {
    toolchains: BTreeMap<String, Toolchain>,
    root: PathBuf,
    _tmp: Option<tempfile::TempDir>,
    options: SandboxOptions,
    artifacts: Mutex<HashMap<String, ArtifactSlot>>,
    memo: Mutex<HashMap<MemoKey, ExecutionOutcome>>,
    compile_hits: AtomicUsize,
    run_counter: AtomicUsize,
}

impl Sandbox {
    /// Sandbox rooted in a fresh temporary directory with default toolchains.
    pub fn new(options: SandboxOptions) -> Result<Self, ExecError> {
        let tmp = tempfile::Builder::new()
            .prefix("bughunt-sandbox-")
            .tempdir()
            .map_err(io_err)?;
        let root = tmp.path().to_path_buf();
        Ok(Self::build(root, Some(tmp), default_toolchains(), options))
    }

    pub fn with_root(root: &Path, options: SandboxOptions) -> Result<Self, ExecError> {
        std::fs::create_dir_all(root).map_err(io_err)?;
        Ok(Self::build(root.to_path_buf(), None, default_toolchains(), options))
    }

    fn build(
        root: PathBuf,
        tmp: Option<tempfile::TempDir>,
        toolchains: BTreeMap<String, Toolchain>,
        options: SandboxOptions,
    ) -> Self {
        Self {
            toolchains,
            root,
            _tmp: tmp,
            options,
            artifacts: Mutex::new(HashMap::new()),
            memo: Mutex::new(HashMap::new()),
            compile_hits: AtomicUsize::new(0),
            run_counter: AtomicUsize::new(0),
        }
    }

    pub fn set_toolchain(&mut self, language_tag: impl Into<String>, toolchain: Toolchain) {
        self.toolchains.insert(language_tag.into(), toolchain);
    }

    pub fn toolchain_mut(&mut self, language_tag: &str) -> Option<&mut Toolchain> {
        self.toolchains.get_mut(language_tag)
    }

    pub fn limits(&self) -> Limits {
        self.options.limits
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Number of `compile` calls answered from the artifact cache.
    pub fn compile_cache_hits(&self) -> usize {
        self.compile_hits.load(Ordering::Relaxed)
    }

    pub fn compile(&self, program: &SourceProgram) -> Result<Arc<CompiledArtifact>, ExecError> {
        let toolchain = self
            .toolchains
            .get(&program.language_tag)
            .ok_or_else(|| ExecError::ToolchainMissing(program.language_tag.clone()))?;
        let key = artifact_key(program, toolchain);
        let slot = {
            let mut map = self.artifacts.lock().unwrap();
            match map.get(&key) {
                Some(slot) => {
                    self.compile_hits.fetch_add(1, Ordering::Relaxed);
                    slot.clone()
                }
                None => {
                    let slot = ArtifactSlot::default();
                    map.insert(key.clone(), slot.clone());
                    slot
                }
            }
        };
        slot.get_or_init(|| self.build_artifact(program, toolchain, &key).map(Arc::new))
            .clone()
    }

    fn build_artifact(
        &self,
        program: &SourceProgram,
        toolchain: &Toolchain,
        key: &str,
    ) -> Result<CompiledArtifact, ExecError> {
        for cmd in toolchain.compile.iter().chain(std::iter::once(&toolchain.run)) {
            let exe = cmd
                .first()
                .ok_or_else(|| ExecError::ToolchainMissing(program.language_tag.clone()))?;
            if !exe.contains('{') && find_executable(exe).is_none() {
                return Err(ExecError::ToolchainMissing(format!(
                    "{} (`{exe}` not found)",
                    program.language_tag
                )));
            }
        }
        let dir = self.root.join("artifacts").join(&key[..24]);
        std::fs::create_dir_all(&dir).map_err(io_err)?;
        let src = dir.join(&toolchain.source_file);
        std::fs::write(&src, &program.source).map_err(io_err)?;
        for (name, contents) in &toolchain.support_files {
            std::fs::write(dir.join(name), contents).map_err(io_err)?;
        }
        let bin = dir.join("prog.bin");
        let subst = |parts: &[String]| -> Vec<String> {
            parts
                .iter()
                .map(|p| {
                    p.replace("{src}", &src.to_string_lossy())
                        .replace("{bin}", &bin.to_string_lossy())
                        .replace("{dir}", &dir.to_string_lossy())
                })
                .collect()
        };
        let mut compile_stderr = String::new();
        if let Some(cmd) = &toolchain.compile {
            let raw = run_process(&subst(cmd), &dir, &[], &Limits::for_compiler(), false).map_err(io_err)?;
            compile_stderr = String::from_utf8_lossy(&raw.stderr).into_owned();
            if raw.timed_out || raw.status.map(|s| !s.success()).unwrap_or(true) {
                tracing::debug!(event = "compile_failed", language = %program.language_tag, key);
                return Err(ExecError::CompileFailed { stderr: compile_stderr });
            }
        }
        let run_argv = subst(&toolchain.run);
        Ok(CompiledArtifact {
            key: key.to_owned(),
            language_tag: program.language_tag.clone(),
            dir,
            run_argv,
            compile_stderr,
        })
    }

    pub fn execute(&self, artifact: &CompiledArtifact, stdin_payload: &str) -> ExecutionOutcome {
        self.execute_with(artifact, &[], stdin_payload, self.options.limits)
    }

    /// Runs the artifact with extra argv and explicit limits. Never fails:
    /// sandbox-side problems are reported as a crash outcome.
    pub fn execute_with(
        &self,
        artifact: &CompiledArtifact,
        args: &[String],
        stdin_payload: &str,
        limits: Limits,
    ) -> ExecutionOutcome {
        let memo_key = self.options.memoize.then(|| {
            let digest: [u8; 32] = Sha256::digest(stdin_payload.as_bytes()).into();
            (artifact.key.clone(), args.to_vec(), digest, limits)
        });
        if let Some(key) = &memo_key {
            if let Some(hit) = self.memo.lock().unwrap().get(key) {
                return hit.clone();
            }
        }
        let outcome = self.execute_uncached(artifact, args, stdin_payload, limits);
        if let Some(key) = memo_key {
            self.memo.lock().unwrap().insert(key, outcome.clone());
        }
        outcome
    }

    fn execute_uncached(
        &self,
        artifact: &CompiledArtifact,
        args: &[String],
        stdin_payload: &str,
        limits: Limits,
    ) -> ExecutionOutcome {
        let n = self.run_counter.fetch_add(1, Ordering::Relaxed);
        let crash = |detail: String| ExecutionOutcome {
            status: ExecStatus::Crash,
            raw_stdout: String::new(),
            normalized_output: None,
            wall_time_ms: 0,
            exit_code: None,
            detail: Some(detail),
        };
        let workdir = match tempfile::Builder::new()
            .prefix(&format!("run{n}-"))
            .tempdir_in(self.root.join("artifacts"))
        {
            Ok(d) => d,
            Err(e) => return crash(format!("workdir: {e}")),
        };
        let mut cmd = artifact.run_argv.clone();
        cmd.extend(args.iter().cloned());
        let raw = match run_process(
            &cmd,
            workdir.path(),
            stdin_payload.as_bytes(),
            &limits,
            self.options.isolate_network,
        ) {
            Ok(raw) => raw,
            Err(e) => return crash(format!("spawn: {e}")),
        };
        let raw_stdout = String::from_utf8_lossy(&raw.stdout).into_owned();
        let wall_time_ms = raw.wall.as_millis() as u64;
        let (status, detail) = if raw.timed_out {
            (ExecStatus::Timeout, Some(format!("wall limit {} ms", limits.wall_ms)))
        } else if raw.output_overflow {
            (
                ExecStatus::Crash,
                Some(format!("output exceeded {} bytes", limits.max_output_bytes)),
            )
        } else {
            match raw.status {
                Some(s) if s.success() => (ExecStatus::Ok, None),
                Some(s) if s.signal() == Some(libc::SIGXCPU) => {
                    (ExecStatus::Timeout, Some(format!("cpu limit {} ms", limits.cpu_ms)))
                }
                Some(s) => (ExecStatus::Crash, Some(describe_exit(s, &raw.stderr))),
                None => (ExecStatus::Crash, Some("no exit status".into())),
            }
        };
        ExecutionOutcome {
            normalized_output: (status == ExecStatus::Ok).then(|| normalize_output(&raw_stdout)),
            status,
            raw_stdout,
            wall_time_ms,
            exit_code: raw.status.and_then(|s| s.code()),
            detail,
        }
    }

    /// Compiles (cached) and executes; compile failures become a
    /// `compile_error` outcome.
    pub fn run_program(&self, program: &SourceProgram, stdin_payload: &str) -> ExecutionOutcome {
        match self.compile(program) {
            Ok(artifact) => self.execute(&artifact, stdin_payload),
            Err(e) => ExecutionOutcome {
                status: ExecStatus::CompileError,
                raw_stdout: String::new(),
                normalized_output: None,
                wall_time_ms: 0,
                exit_code: None,
                detail: Some(e.to_string()),
            },
        }
    }
}

fn describe_exit(status: std::process::ExitStatus, stderr: &[u8]) -> String {
    let head = match (status.code(), status.signal()) {
        (Some(code), _) => format!("exit code {code}"),
        (None, Some(sig)) => format!("killed by signal {sig}"),
        _ => "abnormal exit".to_owned(),
    };
    let tail = String::from_utf8_lossy(stderr);
    let tail = tail.trim();
    if tail.is_empty() {
        head
    } else {
        let short: String = tail
            .chars()
            .rev()
            .take(200)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        format!("{head}: {short}")
    }
}

fn artifact_key(program: &SourceProgram, toolchain: &Toolchain) -> String {
    let mut h = Sha256::new();
    h.update(program.language_tag.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(toolchain).expect("toolchain serializes"));
    h.update([0]);
    h.update(program.source.as_bytes());
    hex::encode(h.finalize())
}

fn find_executable(name: &str) -> Option<PathBuf> {
    let path = Path::new(name);
    if path.is_absolute() || name.contains('/') {
        return path.is_file().then(|| path.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(name))
            .find(|candidate| candidate.is_file())
    })
}

struct RawOutcome {
    status: Option<std::process::ExitStatus>,
    timed_out: bool,
    output_overflow: bool,
    stdout: Vec<u8>,
    stderr: Vec<u8>,
    wall: Duration,
}

fn run_process(
    argv: &[String],
    cwd: &Path,
    stdin_payload: &[u8],
    limits: &Limits,
    isolate_network: bool,
) -> std::io::Result<RawOutcome> {
    let (exe, rest) = argv
        .split_first()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"))?;
    let mut command = Command::new(exe);
    command
        .args(rest)
        .current_dir(cwd)
        .env_clear()
        .env(
            "PATH",
            std::env::var_os("PATH").unwrap_or_else(|| "/usr/bin:/bin".into()),
        )
        .env("HOME", cwd)
        .env("TMPDIR", cwd)
        .env("LANG", "C.UTF-8")
        .env("PYTHONHASHSEED", "0")
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let cpu_secs = limits.cpu_ms.div_ceil(1000);
    let mem = limits.mem_bytes;
    let fsize = limits.max_output_bytes;
    // SAFETY: only async-signal-safe libc calls between fork and exec.
    unsafe {
        command.pre_exec(move || {
            if isolate_network {
                // Fails without CAP_SYS_ADMIN; isolation is best-effort.
                libc::unshare(libc::CLONE_NEWNET);
            }
            let set = |resource, value: u64| {
                let lim = libc::rlimit {
                    rlim_cur: value as libc::rlim_t,
                    rlim_max: value as libc::rlim_t,
                };
                libc::setrlimit(resource, &lim);
            };
            if cpu_secs > 0 {
                let lim = libc::rlimit {
                    rlim_cur: cpu_secs as libc::rlim_t,
                    rlim_max: (cpu_secs + 1) as libc::rlim_t,
                };
                libc::setrlimit(libc::RLIMIT_CPU, &lim);
            }
            if mem > 0 {
                set(libc::RLIMIT_AS, mem);
            }
            if fsize > 0 {
                set(libc::RLIMIT_FSIZE, fsize);
            }
            set(libc::RLIMIT_CORE, 0);
            Ok(())
        });
    }

    let start = Instant::now();
    let mut child = command.spawn()?;
    let pgid = child.id() as libc::pid_t;

    let mut stdin = child.stdin.take().expect("stdin piped");
    let payload = stdin_payload.to_vec();
    let writer = thread::spawn(move || {
        // The child may exit without reading; a broken pipe is fine.
        let _ = stdin.write_all(&payload);
    });

    let overflow = Arc::new(AtomicBool::new(false));
    let cap = if limits.max_output_bytes == 0 {
        u64::MAX
    } else {
        limits.max_output_bytes
    };
    let mut stdout = child.stdout.take().expect("stdout piped");
    let overflow_flag = overflow.clone();
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = (&mut stdout).take(cap.saturating_add(1)).read_to_end(&mut buf);
        if buf.len() as u64 > cap {
            buf.truncate(cap as usize);
            overflow_flag.store(true, Ordering::SeqCst);
        }
        buf
    });
    let mut stderr = child.stderr.take().expect("stderr piped");
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = (&mut stderr).take(STDERR_KEEP as u64).read_to_end(&mut buf);
        let _ = std::io::copy(&mut stderr, &mut std::io::sink());
        buf
    });

    let wall_limit = Duration::from_millis(limits.wall_ms.max(1));
    let mut timed_out = false;
    let mut nap = Duration::from_micros(200);
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if start.elapsed() >= wall_limit {
            timed_out = true;
            kill_group(pgid);
            break child.wait().ok();
        }
        if overflow.load(Ordering::SeqCst) {
            kill_group(pgid);
            break child.wait().ok();
        }
        thread::sleep(nap);
        nap = (nap * 2).min(Duration::from_millis(5));
    };
    let wall = start.elapsed();
    // Reap anything the subject left behind in its group.
    kill_group(pgid);

    let _ = writer.join();
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    Ok(RawOutcome {
        status,
        timed_out,
        output_overflow: overflow.load(Ordering::SeqCst),
        stdout,
        stderr,
        wall,
    })
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: plain syscall; ESRCH when the group is already gone is ignored.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}
