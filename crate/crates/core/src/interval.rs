use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A two-sided interval estimate of a policy value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    #[serde(rename = "point")]
    pub point_estimate: f64,
    pub alpha: f64,
    pub method: String,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
}

impl ConfidenceInterval {
    pub fn new(lower: f64, upper: f64, point_estimate: f64, alpha: f64, method: impl Into<String>) -> Self {
        Self {
            lower,
            upper,
            point_estimate,
            alpha,
            method: method.into(),
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with_diagnostic(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    /// Widens both ends by `kappa` (e.g. a finite-sample correction).
    pub fn widened(mut self, kappa: f64) -> Self {
        self.lower -= kappa;
        self.upper += kappa;
        self.diagnostics.insert("widening".into(), kappa);
        self
    }
}
