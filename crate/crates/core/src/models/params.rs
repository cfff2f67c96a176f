use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Typed, range-checked access to a family's hyperparameter map.
pub struct HyperParams<'a> {
    family: &'static str,
    map: &'a BTreeMap<String, f64>,
}

/// Hyperparameters every family accepts.
const COMMON: &[&str] = &["max_horizon"];

impl<'a> HyperParams<'a> {
    /// Fails on names outside `allowed`.
    pub fn new(family: &'static str, map: &'a BTreeMap<String, f64>, allowed: &[&str]) -> Result<Self> {
        if let Some(bad) = map
            .keys()
            .find(|k| !allowed.contains(&k.as_str()) && !COMMON.contains(&k.as_str()))
        {
            return Err(Error::Argument(format!(
                "{family} has no hyperparameter '{bad}' (expected one of {allowed:?})"
            )));
        }
        if let Some(&h) = map.get("max_horizon") {
            if h < 1.0 || h.fract() != 0.0 {
                return Err(Error::Argument(format!("max_horizon must be a positive integer, got {h}")));
            }
        }
        Ok(Self { family, map })
    }

    pub fn real(&self, name: &str, lo: f64, hi: f64) -> Result<Option<f64>> {
        match self.map.get(name) {
            None => Ok(None),
            Some(&v) if v >= lo && v <= hi => Ok(Some(v)),
            Some(&v) => Err(Error::Argument(format!(
                "{} hyperparameter {name}={v} outside [{lo}, {hi}]",
                self.family
            ))),
        }
    }

    pub fn count(&self, name: &str, lo: usize, hi: usize) -> Result<Option<usize>> {
        match self.map.get(name) {
            None => Ok(None),
            Some(&v) if v.fract() == 0.0 && v >= lo as f64 && v <= hi as f64 => Ok(Some(v as usize)),
            Some(&v) => Err(Error::Argument(format!(
                "{} hyperparameter {name}={v} must be an integer in [{lo}, {hi}]",
                self.family
            ))),
        }
    }
}
