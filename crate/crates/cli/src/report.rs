//! Versioned JSON run report.

use crate::config::RunConfig;
use serde::Serialize;
use std::collections::BTreeMap;

pub const SCHEMA: &str = "contour-spectra/report@1";

#[derive(Clone, Debug, Serialize)]
pub struct Environment {
    pub version: &'static str,
    pub os: &'static str,
    pub arch: &'static str,
    pub workers: usize,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            version: env!("CARGO_PKG_VERSION"),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            workers: rayon::current_num_threads(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: &'static str,
    pub problem: &'static str,
    pub config: RunConfig,
    pub result: serde_json::Value,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub environment: Environment,
}

impl Report {
    pub fn new(command: &'static str, cfg: &RunConfig) -> Self {
        Report {
            schema: SCHEMA,
            command,
            problem: cfg.problem.name(),
            config: cfg.clone(),
            result: serde_json::Value::Null,
            timings: BTreeMap::new(),
            warnings: Vec::new(),
            environment: Environment::current(),
        }
    }

    pub fn timing(&mut self, phase: &str, seconds: f64) {
        self.timings.insert(phase.to_string(), seconds);
    }
}
