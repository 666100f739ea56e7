//! Transport-level reachability on the standard web ports.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "kebab-case")]
pub enum PortOutcome {
    Open,
    Refused,
    TimedOut,
    Unreachable(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProbeError {
    #[error("DNS resolution failed for {host}: {message}")]
    Dns { host: String, message: String },
    #[error("empty host")]
    EmptyHost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub ports: Vec<u16>,
    pub timeout: Duration,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            ports: vec![443, 80],
            timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub host: String,
    pub reachable: bool,
    pub ports: Vec<(u16, PortOutcome)>,
    pub elapsed_ms: u64,
}

/// Try one TCP connection.
pub fn probe_addr(addr: SocketAddr, timeout: Duration) -> PortOutcome {
    match TcpStream::connect_timeout(&addr, timeout) {
        Ok(_) => PortOutcome::Open,
        Err(e) => match e.kind() {
            ErrorKind::ConnectionRefused => PortOutcome::Refused,
            ErrorKind::TimedOut | ErrorKind::WouldBlock => PortOutcome::TimedOut,
            _ => PortOutcome::Unreachable(e.to_string()),
        },
    }
}

/// Reachable iff some configured port accepts a connection within the
/// timeout. Ports are tried in order and probing stops at the first open one.
pub fn probe(host: &str, cfg: &ProbeConfig) -> Result<ProbeReport, ProbeError> {
    let host = host.trim();
    if host.is_empty() {
        return Err(ProbeError::EmptyHost);
    }
    let start = Instant::now();
    let mut ports = Vec::new();
    let mut reachable = false;
    for &port in &cfg.ports {
        let addrs: Vec<SocketAddr> = (host, port)
            .to_socket_addrs()
            .map_err(|e| ProbeError::Dns {
                host: host.to_owned(),
                message: e.to_string(),
            })?
            .collect();
        if addrs.is_empty() {
            return Err(ProbeError::Dns {
                host: host.to_owned(),
                message: "no addresses".into(),
            });
        }
        let mut outcome = PortOutcome::Unreachable("no address tried".into());
        for addr in addrs {
            outcome = probe_addr(addr, cfg.timeout);
            if outcome == PortOutcome::Open {
                break;
            }
        }
        let open = outcome == PortOutcome::Open;
        ports.push((port, outcome));
        if open {
            reachable = true;
            break;
        }
    }
    Ok(ProbeReport {
        host: host.to_owned(),
        reachable,
        ports,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}
