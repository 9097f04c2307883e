//! Subprocess adapters for external generators, swappers and attribute
//! predictors.
//!
//! An adapter is an executable. It is resolved either as a path or by name
//! against the directories listed in `DATALESS_ADAPTER_PATH` (colon
//! separated), falling back to `PATH`. Arguments are passed as `--key value`
//! flags; images travel as 8-bit RGB PNG files in a scratch directory.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::error::{Error, Result};

/// Environment variable holding the adapter search path.
pub const ADAPTER_PATH_ENV: &str = "DATALESS_ADAPTER_PATH";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalCommand {
    program: PathBuf,
    extra_args: Vec<String>,
}

impl ExternalCommand {
    /// Resolve `name` to an executable. Names containing a path separator are
    /// used as-is.
    pub fn resolve(name: &str) -> Result<Self> {
        let program = resolve_program(name, std::env::var_os(ADAPTER_PATH_ENV))
            .ok_or_else(|| Error::config(format!("adapter `{name}` not found")))?;
        Ok(ExternalCommand {
            program,
            extra_args: Vec::new(),
        })
    }

    pub fn with_args(mut self, args: impl IntoIterator<Item = String>) -> Self {
        self.extra_args.extend(args);
        self
    }

    pub fn program(&self) -> &Path {
        &self.program
    }

    /// Identity string recorded in manifests and provenance.
    pub fn identity(&self) -> String {
        let mut id = format!("ext:{}", self.program.display());
        for a in &self.extra_args {
            id.push(' ');
            id.push_str(a);
        }
        id
    }

    /// Run with `--key value` flags, returning stdout on success.
    pub fn run(&self, flags: &[(&str, String)]) -> Result<String> {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.extra_args);
        for (k, v) in flags {
            cmd.arg(format!("--{k}")).arg(v);
        }
        let out = cmd.output().map_err(|e| Error::Adapter {
            adapter: self.identity(),
            message: format!("failed to spawn: {e}"),
        })?;
        if !out.status.success() {
            return Err(Error::Adapter {
                adapter: self.identity(),
                message: format!(
                    "exited with {}: {}",
                    out.status,
                    String::from_utf8_lossy(&out.stderr).trim()
                ),
            });
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }
}

fn resolve_program(name: &str, search: Option<OsString>) -> Option<PathBuf> {
    if name.contains(std::path::MAIN_SEPARATOR) || name.contains('/') {
        let p = PathBuf::from(name);
        return p.is_file().then_some(p);
    }
    let dirs = search
        .into_iter()
        .chain(std::env::var_os("PATH"))
        .flat_map(|v| std::env::split_paths(&v).collect::<Vec<_>>());
    dirs.map(|d| d.join(name)).find(|p| p.is_file())
}

/// A temporary directory removed on drop, for adapter file exchange.
pub(crate) struct Scratch {
    dir: PathBuf,
}

impl Scratch {
    pub(crate) fn new(tag: &str) -> Result<Self> {
        use std::sync::atomic::{AtomicU64, Ordering};
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = std::env::temp_dir().join(format!("dataless-{tag}-{}-{n}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        Ok(Scratch { dir })
    }

    pub(crate) fn path(&self) -> &Path {
        &self.dir
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}
