//! Command-line flags and the matching TOML config file.
//!
//! Every flag has a config-file key of the same name (without the leading
//! dashes). Flags given on the command line override file values.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "twostep", version, about = "Two-step consensus simulator and checkers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one scenario and optionally write its trace.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        run: Box<RunOpts>,
    },
    /// Two-step and fast-path recovery checks; the full (e,f) grid by default.
    Check {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        check: CheckOpts,
    },
    /// Seeded random and spliced runs checked for safety and termination.
    Fuzz {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        fuzz: FuzzOpts,
    },
    /// Exhaustive fast-path recovery check for one configuration.
    Oracle {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Re-execute a trace file and compare it line by line.
    Replay {
        /// Trace file written by `run --trace`.
        path: PathBuf,
    },
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct CommonOpts {
    /// TOML file with default values for any flag.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// task or object.
    #[arg(long)]
    pub variant: Option<String>,
    /// Number of processes; defaults to the smallest admissible n.
    #[arg(long)]
    pub n: Option<usize>,
    /// Fast-path fault threshold.
    #[arg(long)]
    pub e: Option<usize>,
    /// Crash fault threshold.
    #[arg(long)]
    pub f: Option<usize>,
    /// Message delay bound after GST, in ticks.
    #[arg(long)]
    pub delta: Option<u64>,
    /// Global stabilization time, in ticks.
    #[arg(long)]
    pub gst: Option<u64>,
    /// Comma-separated value domain, e.g. 0,1,2.
    #[arg(long)]
    pub domain: Option<String>,
    /// Accept n below the process-count bound.
    #[arg(long)]
    pub allow_below_bound: bool,
    /// Inject a protocol bug (drop-fast-val-guard).
    #[arg(long)]
    pub mutation: Option<String>,
    /// Directory for witness files.
    #[arg(long, env = "TWOSTEP_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct RunOpts {
    /// Scenario TOML file (e.g. a witness); replaces the sizing and schedule flags.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// sync, random or splice.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Seed for random schedules and splice continuations.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synchronous schedules: the crashed-at-0 set, e.g. p5,p6.
    #[arg(long)]
    pub faulty: Option<String>,
    /// Synchronous schedules: process whose messages are delivered first.
    #[arg(long)]
    pub favored: Option<String>,
    /// One entry per process, `_` for none, e.g. 1,2,0,2,_,_.
    #[arg(long)]
    pub proposals: Option<String>,
    /// Object variant: timed calls as time:pid:value, e.g. 0:p1:2,15:p3:1.
    #[arg(long)]
    pub calls: Option<String>,
    /// Crash plan as time:pid, e.g. 5:p2,30:p4.
    #[arg(long)]
    pub crashes: Option<String>,
    /// Splice schedules: groups separated by `|`, e.g. p1,p2,p3|p4,p5.
    #[arg(long)]
    pub groups: Option<String>,
    /// Splice schedules: isolated rounds per group, e.g. 2,2.
    #[arg(long)]
    pub rounds: Option<String>,
    /// Splice schedules: processes crashing when isolation ends.
    #[arg(long)]
    pub crash_set: Option<String>,
    /// oracle or heartbeat.
    #[arg(long)]
    pub omega: Option<String>,
    /// Heartbeat suspicion timeout in ticks.
    #[arg(long)]
    pub timeout: Option<u64>,
    /// Last simulated tick.
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Write the trace to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct CheckOpts {
    /// Also check one process below the bound, where a counterexample must exist.
    #[arg(long)]
    pub tightness: bool,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct FuzzOpts {
    /// Seed range start..end.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Crashes per run, at most f; defaults to f.
    #[arg(long)]
    pub crash_budget: Option<usize>,
    /// Termination bound after GST, in rounds of Δ.
    #[arg(long)]
    pub slack: Option<u64>,
}

const KNOWN_KEYS: &[&str] = &[
    "variant",
    "n",
    "e",
    "f",
    "delta",
    "gst",
    "domain",
    "allow-below-bound",
    "mutation",
    "out-dir",
    "scenario",
    "schedule",
    "seed",
    "faulty",
    "favored",
    "proposals",
    "calls",
    "crashes",
    "groups",
    "rounds",
    "crash-set",
    "omega",
    "timeout",
    "horizon",
    "trace",
    "tightness",
    "seeds",
    "crash-budget",
    "slack",
];

/// Parsed config file; every section reads the keys it knows.
pub struct FileConfig(toml::Table);

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let table: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(key) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(format!("{}: unknown key `{key}`", path.display()));
        }
        Ok(FileConfig(table))
    }

    pub fn section<T: for<'de> Deserialize<'de>>(&self) -> Result<T, String> {
        toml::Value::Table(self.0.clone())
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())
    }
}

macro_rules! merge_fields {
    ($flags:expr, $file:expr; $($opt:ident),*; $($flag:ident),*) => {{
        let (mut a, b) = ($flags, $file);
        $(a.$opt = a.$opt.or(b.$opt);)*
        $(a.$flag = a.$flag || b.$flag;)*
        a
    }};
}

impl CommonOpts {
    pub fn merged(self, file: Option<&FileConfig>) -> Result<Self, String> {
        let Some(file) = file else { return Ok(self) };
        let other: CommonOpts = file.section()?;
        Ok(merge_fields!(self, other; variant, n, e, f, delta, gst, domain, mutation, out_dir; allow_below_bound))
    }
}

impl RunOpts {
    pub fn merged(self, file: Option<&FileConfig>) -> Result<Self, String> {
        let Some(file) = file else { return Ok(self) };
        let other: RunOpts = file.section()?;
        Ok(merge_fields!(self, other;
            scenario, schedule, seed, faulty, favored, proposals, calls, crashes, groups, rounds,
            crash_set, omega, timeout, horizon, trace;))
    }
}

impl CheckOpts {
    pub fn merged(self, file: Option<&FileConfig>) -> Result<Self, String> {
        let Some(file) = file else { return Ok(self) };
        let other: CheckOpts = file.section()?;
        Ok(merge_fields!(self, other;; tightness))
    }
}

impl FuzzOpts {
    pub fn merged(self, file: Option<&FileConfig>) -> Result<Self, String> {
        let Some(file) = file else { return Ok(self) };
        let other: FuzzOpts = file.section()?;
        Ok(merge_fields!(self, other; seeds, crash_budget, slack;))
    }
}
