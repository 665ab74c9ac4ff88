//! Declarative experiment files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use frqmc::mcjump::{RunConfig, DEFAULT_DT};
use frqmc::models::{CascadeConfig, SourceConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    UnfilteredG2,
    FilteredScan,
    MollowWindows,
    CrossWindows,
    Reconstruct,
    Spectrum,
}

impl ExperimentKind {
    /// Number of detectors every run of this kind must have.
    fn detectors(self) -> Option<usize> {
        match self {
            ExperimentKind::UnfilteredG2 => Some(0),
            ExperimentKind::FilteredScan | ExperimentKind::MollowWindows => Some(1),
            ExperimentKind::CrossWindows => Some(2),
            ExperimentKind::Reconstruct | ExperimentKind::Spectrum => None,
        }
    }
}

/// One simulated click stream (or ensemble of them).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    pub cascade: CascadeConfig,
    #[serde(default)]
    pub clicks: Option<usize>,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub transient: Option<f64>,
    #[serde(default = "one")]
    pub trajectories: usize,
    /// Raise detector truncations until the steady state fits before running.
    #[serde(default = "yes")]
    pub auto_truncation: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_width: f64,
    pub tau_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSpec {
    /// Histogram grids; empty means one grid with bins of `2·dt` out to 10.
    #[serde(default)]
    pub histograms: Vec<HistogramSpec>,
    /// Counting window; default is the mean click spacing.
    #[serde(default)]
    pub counting_window: Option<f64>,
    /// Closely-spaced threshold in units of the mean click spacing.
    #[serde(default)]
    pub closely_spaced: Option<f64>,
    /// Waiting-time range in units of the mean click spacing.
    #[serde(default)]
    pub waiting_range: Option<f64>,
}

pub const DEFAULT_TAU_MAX: f64 = 10.0;
pub const DEFAULT_CLOSELY_SPACED: f64 = 0.01;
pub const DEFAULT_WAITING_RANGE: f64 = 5.0;

impl AnalysisSpec {
    /// Grids for a stream of timestep `dt`, with `bin` and `tau_max`
    /// replacing the corresponding value of every grid.
    pub fn histograms(&self, dt: f64, bin: Option<f64>, tau_max: Option<f64>) -> Vec<HistogramSpec> {
        let mut h = if self.histograms.is_empty() {
            vec![HistogramSpec {
                bin_width: 2.0 * dt,
                tau_max: DEFAULT_TAU_MAX,
            }]
        } else {
            self.histograms.clone()
        };
        for x in &mut h {
            if let Some(b) = bin {
                x.bin_width = b;
            }
            if let Some(t) = tau_max {
                x.tau_max = t;
            }
        }
        h.dedup();
        h
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TheorySpec {
    /// Detector frequencies for scans and spectra.
    #[serde(default)]
    pub omega_grid: Vec<f64>,
    /// Detector linewidths for scans and spectra.
    #[serde(default)]
    pub gamma_grid: Vec<f64>,
    /// `(tau_max, step)` of the `g²_Γ(τ)` map written by filtered scans.
    #[serde(default)]
    pub map: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructSpec {
    pub source: SourceConfig,
    #[serde(default)]
    pub omega: f64,
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub unfiltered: bool,
    #[serde(default = "half")]
    pub chi2: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    /// Emitter for spectra when no run supplies one.
    #[serde(default)]
    pub source: Option<SourceConfig>,
    #[serde(default)]
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub theory: TheorySpec,
    #[serde(default)]
    pub reconstruct: Option<ReconstructSpec>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub clicks: Option<usize>,
    pub dt: Option<f64>,
    pub bin: Option<f64>,
    pub tau_max: Option<f64>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn positive(x: f64, what: &str) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("{what} must be positive, got {x}")))
    }
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let spec: Self =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        for r in &mut self.runs {
            if let Some(n) = o.clicks {
                r.clicks = Some(n);
                r.duration = None;
            }
            if let Some(dt) = o.dt {
                r.dt = Some(dt);
            }
        }
        if o.bin.is_some() || o.tau_max.is_some() {
            let dt = o.dt.unwrap_or(DEFAULT_DT);
            self.analysis.histograms = self.analysis.histograms(dt, o.bin, o.tau_max);
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }

    /// Checks everything that can be checked without solving anything.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(usage(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut names = HashSet::new();
        for r in &self.runs {
            let ok = r.name.starts_with(|c: char| c.is_ascii_alphanumeric())
                && r.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
            if !ok {
                return Err(usage(format!(
                    "run name {:?} must start alphanumeric and use only [A-Za-z0-9._-]",
                    r.name
                )));
            }
            if !names.insert(&r.name) {
                return Err(usage(format!("duplicate run name {:?}", r.name)));
            }
            r.cascade
                .validate()
                .map_err(|e| usage(format!("run {}: {e}", r.name)))?;
            if let Some(n) = self.kind.detectors() {
                if r.cascade.detectors.len() != n {
                    return Err(usage(format!(
                        "run {}: {:?} experiments need {n} detector(s), got {}",
                        r.name,
                        self.kind,
                        r.cascade.detectors.len()
                    )));
                }
            }
            if r.trajectories == 0 {
                return Err(usage(format!("run {}: trajectories must be at least 1", r.name)));
            }
            if let Some(dt) = r.dt {
                positive(dt, "dt")?;
            }
            self.run_config(r, 0)
                .validate()
                .map_err(|e| usage(format!("run {}: {e}", r.name)))?;
        }
        for h in &self.analysis.histograms {
            positive(h.bin_width, "bin width")?;
            positive(h.tau_max, "tau_max")?;
        }
        for (x, what) in [
            (self.analysis.counting_window, "counting window"),
            (self.analysis.closely_spaced, "closely-spaced threshold"),
            (self.analysis.waiting_range, "waiting-time range"),
        ] {
            if let Some(x) = x {
                positive(x, what)?;
            }
        }
        for &g in &self.theory.gamma_grid {
            positive(g, "gamma_grid entry")?;
        }
        if self.theory.omega_grid.iter().any(|w| !w.is_finite()) {
            return Err(usage("omega_grid must be finite"));
        }
        if let Some((t, s)) = self.theory.map {
            positive(t, "map tau_max")?;
            positive(s, "map step")?;
        }
        match self.kind {
            ExperimentKind::FilteredScan | ExperimentKind::Spectrum if self.theory.omega_grid.is_empty() => {
                return Err(usage(format!(
                    "{:?} experiments need a non-empty theory.omega_grid",
                    self.kind
                )));
            }
            ExperimentKind::Spectrum if self.source().is_none() => {
                return Err(usage("spectrum experiments need a source"));
            }
            ExperimentKind::Reconstruct if self.reconstruct.is_none() => {
                return Err(usage("reconstruct experiments need a reconstruct section"));
            }
            _ => {}
        }
        if let Some(src) = &self.source {
            src.validate().map_err(|e| usage(e.to_string()))?;
        }
        if let Some(r) = &self.reconstruct {
            r.source.validate().map_err(|e| usage(e.to_string()))?;
            for &g in &r.gammas {
                positive(g, "reconstruct gamma")?;
            }
            if !(r.chi2 >= 0.0 && r.chi2 < 1.0) {
                return Err(usage(format!(
                    "reconstruct chi2 must lie in [0, 1), got {}",
                    r.chi2
                )));
            }
            if r.gammas.is_empty() && !r.unfiltered {
                return Err(usage("reconstruct needs gammas or unfiltered = true"));
            }
        }
        Ok(())
    }

    /// Emitter used by spectrum computations.
    pub fn source(&self) -> Option<SourceConfig> {
        self.source
            .or_else(|| self.runs.first().map(|r| r.cascade.source))
            .or_else(|| self.reconstruct.as_ref().map(|r| r.source))
    }

    /// Run `index` gets seed `seed + index`, so distinct runs never share a clock.
    pub fn run_config(&self, run: &RunSpec, index: usize) -> RunConfig {
        RunConfig {
            cascade: run.cascade.clone(),
            dt: run.dt.unwrap_or(DEFAULT_DT),
            duration: run.duration,
            target_clicks: run.clicks,
            seed: self.seed.wrapping_add(index as u64),
            recorded_channels: Vec::new(),
            transient: run.transient,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in presets::names() {
            let s = presets::preset(name).unwrap();
            s.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let back: ExperimentSpec = serde_json::from_str(&s.to_json()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let mut s = presets::preset("fig1").unwrap();
        s.schema_version = 99;
        assert!(matches!(s.validate(), Err(CliError::Usage(_))));
    }

    #[test]
    fn detector_count_must_match_kind() {
        let mut s = presets::preset("fig4-i").unwrap();
        s.kind = ExperimentKind::CrossWindows;
        assert!(s.validate().is_err());
    }

    #[test]
    fn overrides() {
        let mut s = presets::preset("fig2-viii").unwrap();
        s.apply(&Overrides {
            seed: Some(7),
            clicks: Some(10),
            bin: Some(0.5),
            ..Default::default()
        });
        assert_eq!(s.seed, 7);
        assert_eq!(s.runs[0].clicks, Some(10));
        assert!(s.analysis.histograms.iter().all(|h| h.bin_width == 0.5));
        assert_eq!(s.run_config(&s.runs[0], 2).seed, 9);
    }

    #[test]
    fn empty_frequency_grid_is_a_usage_error() {
        let mut s = presets::preset("mollow-spectrum").unwrap();
        s.theory.omega_grid.clear();
        assert!(matches!(s.validate(), Err(CliError::Usage(_))));
    }
}
