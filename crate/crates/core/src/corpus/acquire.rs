//! Screenshot acquisition with the protocol/timeout retry ladder:
//! HTTPS@30s, HTTP@30s, HTTPS@60s, HTTP@60s, then hand-off to a manual visit.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Https,
    Http,
}

impl Protocol {
    pub fn scheme(self) -> &'static str {
        match self {
            Protocol::Https => "https",
            Protocol::Http => "http",
        }
    }
}

/// The fixed attempt ladder.
pub const SCHEDULE: [(Protocol, u64); 4] = [
    (Protocol::Https, 30),
    (Protocol::Http, 30),
    (Protocol::Https, 60),
    (Protocol::Http, 60),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttemptOutcome {
    Ok,
    Error,
    ManualNeeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchAttempt {
    pub protocol: Protocol,
    pub timeout_secs: u64,
    pub outcome: AttemptOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FetchError {
    #[error("fetch failed: {0}")]
    Failed(String),
    /// The page needs a human (CAPTCHA, interstitial, geo-block page...).
    #[error("manual visit needed: {0}")]
    ManualNeeded(String),
}

/// Anything that can load a URL and save a screenshot of it.
pub trait Fetcher {
    fn fetch(&mut self, url: &str, timeout: Duration) -> std::result::Result<PathBuf, FetchError>;
}

impl<F> Fetcher for F
where
    F: FnMut(&str, Duration) -> std::result::Result<PathBuf, FetchError>,
{
    fn fetch(&mut self, url: &str, timeout: Duration) -> std::result::Result<PathBuf, FetchError> {
        self(url, timeout)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum AcquireResult {
    Screenshot { path: PathBuf },
    ManualNeeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acquisition {
    pub domain: String,
    pub result: AcquireResult,
    pub attempts: Vec<FetchAttempt>,
}

/// Walk the retry ladder until the first success. A fetcher panic counts as
/// a failed attempt; a manual-needed signal ends the ladder early.
pub fn acquire(domain: &str, fetcher: &mut dyn Fetcher) -> Acquisition {
    let mut attempts = Vec::with_capacity(SCHEDULE.len());
    for (protocol, secs) in SCHEDULE {
        let url = format!("{}://{}/", protocol.scheme(), domain);
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            fetcher.fetch(&url, Duration::from_secs(secs))
        }));
        let (outcome, detail, path) = match outcome {
            Ok(Ok(path)) => (AttemptOutcome::Ok, None, Some(path)),
            Ok(Err(FetchError::Failed(m))) => (AttemptOutcome::Error, Some(m), None),
            Ok(Err(FetchError::ManualNeeded(m))) => (AttemptOutcome::ManualNeeded, Some(m), None),
            Err(_) => (AttemptOutcome::Error, Some("fetcher crashed".to_owned()), None),
        };
        attempts.push(FetchAttempt {
            protocol,
            timeout_secs: secs,
            outcome,
            detail,
        });
        if let Some(path) = path {
            return Acquisition {
                domain: domain.to_owned(),
                result: AcquireResult::Screenshot { path },
                attempts,
            };
        }
        if outcome == AttemptOutcome::ManualNeeded {
            break;
        }
    }
    Acquisition {
        domain: domain.to_owned(),
        result: AcquireResult::ManualNeeded,
        attempts,
    }
}

/// Acquire many domains with at most `cap` concurrent fetchers. Results are
/// returned in input order.
pub fn acquire_all<F, M>(domains: &[String], cap: usize, make_fetcher: M) -> Vec<Acquisition>
where
    F: Fetcher,
    M: Fn() -> F + Sync,
{
    let cap = cap.max(1).min(domains.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: Vec<Option<Acquisition>> = vec![None; domains.len()];
    let slots: Vec<std::sync::Mutex<&mut Option<Acquisition>>> =
        results.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|s| {
        for _ in 0..cap {
            s.spawn(|| {
                let mut fetcher = make_fetcher();
                loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= domains.len() {
                        break;
                    }
                    let a = acquire(&domains[i], &mut fetcher);
                    **slots[i].lock().unwrap() = Some(a);
                }
            });
        }
    });
    drop(slots);
    results.into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[derive(Debug, Serialize)]
struct AttemptLine<'a> {
    domain: &'a str,
    attempt: usize,
    #[serde(flatten)]
    inner: &'a FetchAttempt,
}

/// Append one JSON line per attempt.
pub fn append_attempt_log(path: &Path, acquisitions: &[Acquisition]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for a in acquisitions {
        for (i, att) in a.attempts.iter().enumerate() {
            let line = serde_json::to_string(&AttemptLine {
                domain: &a.domain,
                attempt: i + 1,
                inner: att,
            })?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestLine {
    pub domain: String,
    #[serde(flatten)]
    pub result: AcquireResult,
    pub attempts: usize,
}

pub fn write_manifest(path: &Path, acquisitions: &[Acquisition]) -> Result<()> {
    let mut out = String::new();
    for a in acquisitions {
        out.push_str(&serde_json::to_string(&ManifestLine {
            domain: a.domain.clone(),
            result: a.result.clone(),
            attempts: a.attempts.len(),
        })?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Delegates screenshotting to an external driver program.
///
/// Arguments may contain `{url}`, `{timeout}` (seconds) and `{out}` (the PNG
/// path the driver must write). Exit status 0 with the file present is
/// success; exit status 3 means the page needs a manual visit.
#[derive(Debug, Clone)]
pub struct CommandFetcher {
    pub program: String,
    pub args: Vec<String>,
    pub out_dir: PathBuf,
}

pub const MANUAL_EXIT_CODE: i32 = 3;

impl CommandFetcher {
    fn out_path(&self, url: &str) -> PathBuf {
        let name: String = url
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
            .collect();
        self.out_dir.join(format!("{}.png", name.trim_matches('_')))
    }
}

impl Fetcher for CommandFetcher {
    fn fetch(&mut self, url: &str, timeout: Duration) -> std::result::Result<PathBuf, FetchError> {
        let out = self.out_path(url);
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{url}", url)
                    .replace("{timeout}", &timeout.as_secs().to_string())
                    .replace("{out}", &out.to_string_lossy())
            })
            .collect();
        let mut child = Command::new(&self.program)
            .args(&args)
            .spawn()
            .map_err(|e| FetchError::Failed(format!("cannot start driver: {e}")))?;
        // Allow the driver a small grace period beyond the page timeout.
        let deadline = Instant::now() + timeout + Duration::from_secs(5);
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(FetchError::Failed("driver timed out".into()));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(50)),
                Err(e) => return Err(FetchError::Failed(e.to_string())),
            }
        };
        match status.code() {
            Some(0) if out.exists() => Ok(out),
            Some(0) => Err(FetchError::Failed("driver produced no screenshot".into())),
            Some(MANUAL_EXIT_CODE) => Err(FetchError::ManualNeeded("driver requested manual visit".into())),
            other => Err(FetchError::Failed(format!("driver exited with {other:?}"))),
        }
    }
}
