use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use serde::{Serialize, Serializer};

use lidyn::report::REPORT_FORMAT_VERSION;
use lidyn::ErrorClass;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_PRECONDITION: u8 = 3;

/// Bad flag values caught after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn display<T: fmt::Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// `lo-hi` or a single value `n` meaning `n-n`.
pub fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let parse = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("{t:?}: {e}"));
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let n = parse(s)?;
            (n, n)
        }
    };
    if lo == 0 || lo > hi {
        return Err(format!("range {s:?} must satisfy 1 <= min <= max"));
    }
    Ok((lo, hi))
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    format_version: u32,
    command: &'a str,
    config: &'a C,
    report: &'a R,
}

pub fn to_json<C: Serialize, R: Serialize>(command: &str, config: &C, report: &R) -> anyhow::Result<String> {
    let mut text = serde_json::to_string_pretty(&Envelope {
        format_version: REPORT_FORMAT_VERSION,
        command,
        config,
        report,
    })?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<C: Serialize, R: Serialize>(
    path: &Path,
    command: &str,
    config: &C,
    report: &R,
) -> anyhow::Result<()> {
    let text = to_json(command, config, report)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// CSV with one leading `#` line that records the command and config.
pub fn write_csv<C, F>(path: &Path, command: &str, config: &C, body: F) -> anyhow::Result<()>
where
    C: Serialize,
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let config = serde_json::to_string(config)?;
    writeln!(
        w,
        "# lidyn {command} format_version={REPORT_FORMAT_VERSION} config={config}"
    )
    .and_then(|()| body(&mut w))
    .and_then(|()| w.flush())
    .with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    class: &'a str,
    exit_code: u8,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    findings: Vec<Finding>,
}

#[derive(Serialize)]
pub struct Finding {
    pub kind: &'static str,
    pub message: String,
}

impl From<&lidyn::Error> for Finding {
    fn from(e: &lidyn::Error) -> Self {
        Finding {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

/// Store verification failed; carries every finding, not just the first.
#[derive(Debug)]
pub struct VerifyFailed(pub Vec<lidyn::Error>);

impl fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "store verification found {} problem(s)", self.0.len())
    }
}

impl std::error::Error for VerifyFailed {}

fn classify(err: &anyhow::Error) -> (&'static str, &'static str, u8) {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return ("Usage", "usage", EXIT_USAGE);
        }
        if let Some(v) = cause.downcast_ref::<VerifyFailed>() {
            let kind = v.0.first().map_or("Validation", lidyn::Error::kind);
            return (kind, "validation", EXIT_VALIDATION);
        }
        if let Some(e) = cause.downcast_ref::<lidyn::Error>() {
            if matches!(e, lidyn::Error::InvalidConfig(_)) {
                return (e.kind(), "usage", EXIT_USAGE);
            }
            return match e.class() {
                ErrorClass::Validation => (e.kind(), "validation", EXIT_VALIDATION),
                ErrorClass::Precondition => (e.kind(), "precondition", EXIT_PRECONDITION),
            };
        }
    }
    ("Io", "validation", EXIT_VALIDATION)
}

/// Prints a one-line JSON error report on stderr and picks the exit code.
pub fn report_error(err: &anyhow::Error) -> ExitCode {
    let (kind, class, code) = classify(err);
    let findings = err
        .chain()
        .find_map(|c| c.downcast_ref::<VerifyFailed>())
        .map(|v| v.0.iter().map(Finding::from).collect())
        .unwrap_or_default();
    let report = ErrorReport {
        error: ErrorBody {
            kind,
            class,
            exit_code: code,
            message: format!("{err:#}"),
            findings,
        },
    };
    match serde_json::to_string(&report) {
        Ok(line) => eprintln!("{line}"),
        Err(_) => eprintln!("{err:#}"),
    }
    ExitCode::from(code)
}
