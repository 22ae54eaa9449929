//! Command-line front end: `veracity <command> [flags]`.
//!
//! Exit codes: 0 on success, 1 for user or configuration errors, 2 when the
//! completion backend or its transport failed.

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use config::{BackendKind, DatasetConfig, RunConfig};
pub use manifest::{sha256_file, verify_manifest, RunManifest};

use crate::evaluation::Method;
use crate::extraction::ExtractionError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "veracity",
    version,
    about = "Credibility-signal extraction and weakly supervised veracity classification"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "veracity.toml")]
    pub config: PathBuf,

    /// Restrict to these datasets (repeatable).
    #[arg(long = "dataset", global = true)]
    pub datasets: Vec<String>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Number of cross-validation folds.
    #[arg(long, global = true)]
    pub folds: Option<usize>,

    #[arg(long = "backend.endpoint", global = true)]
    pub backend_endpoint: Option<String>,

    #[arg(long = "backend.model", global = true)]
    pub backend_model: Option<String>,

    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Override any config field by dotted name, e.g. `model.epochs=200`.
    /// Unrecognised `--section.field value` flags are treated the same way.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ask every signal question for every article and write answer matrices.
    Extract,
    /// Cross-validated F1-macro per dataset.
    Evaluate {
        #[arg(long, default_value = "pastel")]
        method: Method,
    },
    /// Fit on one dataset, score on another.
    Crossdomain {
        #[arg(long)]
        train: Option<String>,
        #[arg(long)]
        test: Option<String>,
        /// Every ordered pair of configured datasets.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value = "pastel")]
        method: Method,
    },
    /// Signal associations, answer distributions and trigger frequencies.
    Analyze,
    /// Leave-one-signal-out ablation.
    Ablate,
    /// Summarise existing reports as Markdown.
    Report,
    /// Re-hash the artifacts listed in a manifest.
    Verify { manifest: PathBuf },
}

const OWN_DOTTED: [&str; 2] = ["--backend.endpoint", "--backend.model"];

/// Rewrites `--a.b value` and `--a.b=value` into `--set a.b=value`, except
/// for dotted flags clap declares itself.
pub fn normalize_args<I: IntoIterator<Item = OsString>>(args: I) -> Vec<OsString> {
    let mut out = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        let Some(s) = arg.to_str() else {
            out.push(arg);
            continue;
        };
        let Some(flag) = s.strip_prefix("--") else {
            out.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if !name.contains('.') || OWN_DOTTED.contains(&format!("--{name}").as_str()) {
            out.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => match it.peek().and_then(|v| v.to_str()) {
                Some(v) if !v.starts_with("--") => {
                    let v = v.to_string();
                    it.next();
                    v
                }
                _ => "true".to_string(),
            },
        };
        out.push("--set".into());
        out.push(format!("{name}={value}").into());
    }
    out
}

impl Cli {
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        let quote = |s: &str| toml::Value::String(s.to_string()).to_string();
        let path = |p: &PathBuf| {
            quote(
                &p.canonicalize()
                    .unwrap_or_else(|_| absolute(p))
                    .to_string_lossy(),
            )
        };
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(k) = self.folds {
            o.push(format!("folds.k={k}"));
        }
        if let Some(e) = &self.backend_endpoint {
            o.push(format!("backend.endpoint={}", quote(e)));
        }
        if let Some(m) = &self.backend_model {
            o.push(format!("backend.model={}", quote(m)));
        }
        if let Some(p) = &self.cache_dir {
            o.push(format!("cache_dir={}", path(p)));
        }
        if let Some(p) = &self.out_dir {
            o.push(format!("out_dir={}", path(p)));
        }
        o.extend(self.set.iter().cloned());
        o
    }
}

fn absolute(p: &PathBuf) -> PathBuf {
    std::env::current_dir()
        .map(|d| d.join(p))
        .unwrap_or_else(|_| p.clone())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Verify { manifest } = &cli.command {
        let bad = verify_manifest(manifest)?;
        if bad.is_empty() {
            println!("all artifacts match");
            return Ok(());
        }
        anyhow::bail!("digest mismatch: {}", bad.join(", "));
    }
    let cfg = RunConfig::load(&cli.config, &cli.overrides())?;
    cfg.validate()?;
    let ctx = commands::Ctx {
        cfg,
        only: cli.datasets.clone(),
    };
    match &cli.command {
        Command::Extract => commands::extract(&ctx),
        Command::Evaluate { method } => commands::evaluate(&ctx, *method),
        Command::Crossdomain {
            train,
            test,
            all,
            method,
        } => commands::crossdomain(&ctx, train.as_deref(), test.as_deref(), *all, *method),
        Command::Analyze => commands::analyze(&ctx),
        Command::Ablate => commands::ablate(&ctx),
        Command::Report => commands::report(&ctx),
        Command::Verify { .. } => unreachable!("handled above"),
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    let backend = e.chain().any(|c| {
        c.downcast_ref::<ExtractionError>()
            .is_some_and(ExtractionError::is_backend)
    });
    if backend {
        EXIT_BACKEND
    } else {
        EXIT_USER
    }
}

/// Parses `args` (including the program name), runs, and reports errors on
/// stderr. Returns the exit code.
pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(normalize_args(args)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn dotted_flags_become_overrides() {
        let got = normalize_args(os(&[
            "veracity",
            "evaluate",
            "--model.epochs",
            "20",
            "--folds.k=5",
            "--backend.model",
            "m",
            "--extraction.zeroshot",
        ]));
        assert_eq!(
            got,
            os(&[
                "veracity",
                "evaluate",
                "--set",
                "model.epochs=20",
                "--set",
                "folds.k=5",
                "--backend.model",
                "m",
                "--set",
                "extraction.zeroshot=true",
            ])
        );
        let cli = Cli::try_parse_from(got).unwrap();
        assert_eq!(cli.backend_model.as_deref(), Some("m"));
        assert_eq!(cli.set.len(), 3);
    }

    #[test]
    fn method_parses_aliases() {
        let cli = Cli::try_parse_from(os(&["veracity", "evaluate", "--method", "mv"])).unwrap();
        assert!(matches!(
            cli.command,
            Command::Evaluate {
                method: Method::Majority
            }
        ));
    }
}
