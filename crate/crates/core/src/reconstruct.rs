//! Photon-number distribution of the effective source behind a filter.
//!
//! The filtered light is treated as the emission of a bosonic source `s`
//! with linewidth `γ_σ`. Its factorial moments follow from those of the
//! detector mode, and the diagonal `p(n)` from inverting
//! `⟨s†ⁿsⁿ⟩ = Σ_{k≥n} k!/(k−n)! p(k)`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mastereq::{CascadeSystem, MIN_POPULATION};
use crate::mcjump::fmt_sig;
use crate::models::{CascadeConfig, DetectorConfig, SourceConfig};

/// Negative probabilities above this are rounding noise and are clamped.
pub const CLAMP_THRESHOLD: f64 = 1e-6;
/// `3√3/(4e)`: largest `p(1)` reachable by a Gaussian state.
pub const NONGAUSSIAN_THRESHOLD: f64 = 0.477_889_412_376_738;

/// Which mode the moments belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    Detector,
    Source,
}

/// `values[n−1] = ⟨x†ⁿxⁿ⟩` for `n = 1..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub kind: MomentKind,
    pub values: Vec<f64>,
}

impl MomentVector {
    pub fn new(kind: MomentKind, values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= -1e-12)) {
            return Err(Error::InconsistentMoments { n: i + 1, value: *v });
        }
        Ok(Self { kind, values })
    }

    pub fn order(&self) -> usize {
        self.values.len()
    }

    /// `⟨x†ⁿxⁿ⟩/⟨x†x⟩ⁿ`.
    pub fn normalized(&self, n: usize) -> Result<f64> {
        let m1 = self.values.first().copied().unwrap_or(0.0);
        if !(m1 > MIN_POPULATION) {
            return Err(Error::UndefinedCorrelation { population: m1 });
        }
        let mn = self.values.get(n - 1).copied().unwrap_or(0.0);
        Ok(mn / m1.powi(n as i32))
    }
}

/// Steady-state factorial moments of detector `i`, up to order `n`.
pub fn detector_moments(sys: &CascadeSystem, detector: usize, n: usize) -> Result<MomentVector> {
    let d = sys
        .cfg
        .detectors
        .get(detector)
        .ok_or_else(|| Error::InvalidConfig(format!("no detector {detector}")))?;
    if d.n_max <= n {
        return Err(Error::InvalidTruncation {
            min: n + 1,
            got: d.n_max,
        });
    }
    let report = sys.truncation();
    if !report.pass {
        return Err(Error::TruncationTooSmall {
            detector,
            occupancy: report.occupancies[detector],
        });
    }
    MomentVector::new(MomentKind::Detector, sys.detector_moments(detector, n))
}

/// Detector moments divided by `(4α)ⁿ`.
///
/// With the cascade coupling `√(αγ_σΓ)` the detector mode holds `4α` times
/// the photon number of a unit-transmission Lorentzian filter of the same
/// width; this puts detector moments on the scale where `Γ⟨ξ†ξ⟩` is the
/// filtered photon flux.
pub fn remove_coupling(m: &MomentVector, alpha: f64) -> Result<MomentVector> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "coupling fraction must be positive, got {alpha}"
        )));
    }
    let f = 4.0 * alpha;
    MomentVector::new(
        m.kind,
        m.values
            .iter()
            .enumerate()
            .map(|(i, v)| v / f.powi(i as i32 + 1))
            .collect(),
    )
}

/// `⟨s†ⁿsⁿ⟩ = (Γ/γ_σ)ⁿ ⟨ξ†ⁿξⁿ⟩`.
pub fn source_moments_from_detector(
    m: &MomentVector,
    gamma_xi: f64,
    gamma_sigma: f64,
) -> Result<MomentVector> {
    if !(gamma_xi > 0.0 && gamma_sigma > 0.0) {
        return Err(Error::InvalidConfig("linewidths must be positive".into()));
    }
    let r = gamma_xi / gamma_sigma;
    MomentVector::new(
        MomentKind::Source,
        m.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * r.powi(i as i32 + 1))
            .collect(),
    )
}

/// Moments of the bare emitter, `⟨σ†σ⟩` and zeros above.
pub fn emitter_moments(population: f64, n: usize) -> Result<MomentVector> {
    let mut v = vec![0.0; n.max(1)];
    v[0] = population;
    MomentVector::new(MomentKind::Source, v)
}

/// Two readings of a click count on a detector channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationReadings {
    /// `clicks/(γ_σ T)`: the effective-source population when every
    /// filtered photon is counted.
    pub source_population: f64,
    /// `clicks/(χ Γ T)`: the detector-mode population `⟨ξ†ξ⟩`.
    pub detector_population: f64,
}

pub fn population_from_clicks(
    clicks: usize,
    duration: f64,
    gamma_sigma: f64,
    gamma_xi: f64,
    readout_fraction: f64,
) -> Result<PopulationReadings> {
    if !(duration > 0.0 && gamma_sigma > 0.0 && gamma_xi > 0.0 && readout_fraction > 0.0) {
        return Err(Error::InvalidConfig(
            "duration, linewidths and readout fraction must be positive".into(),
        ));
    }
    let n = clicks as f64;
    Ok(PopulationReadings {
        source_population: n / (gamma_sigma * duration),
        detector_population: n / (readout_fraction * gamma_xi * duration),
    })
}

/// Best-matching reference family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum FitClass {
    Vacuum,
    Fock { n: usize },
    Geometric { theta: f64 },
    Cothermal { mean: f64, thermal_weight: f64 },
    Other,
}

impl FitClass {
    pub fn name(&self) -> &'static str {
        match self {
            FitClass::Vacuum => "vacuum",
            FitClass::Fock { .. } => "fock",
            FitClass::Geometric { .. } => "geometric",
            FitClass::Cothermal { .. } => "cothermal",
            FitClass::Other => "other",
        }
    }

    /// Headline parameter: `n`, `θ` or the thermal weight.
    pub fn param(&self) -> f64 {
        match self {
            FitClass::Vacuum | FitClass::Other => 0.0,
            FitClass::Fock { n } => *n as f64,
            FitClass::Geometric { theta } => *theta,
            FitClass::Cothermal { thermal_weight, .. } => *thermal_weight,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonGaussianCheck {
    pub nongaussian: bool,
    /// `p(1) − 3√3/(4e)`.
    pub margin: f64,
}

pub fn nongaussian_check(p: &PhotonDistribution) -> NonGaussianCheck {
    let p1 = p.p.get(1).copied().unwrap_or(0.0);
    NonGaussianCheck {
        nongaussian: p1 > NONGAUSSIAN_THRESHOLD,
        margin: p1 - NONGAUSSIAN_THRESHOLD,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub class: FitClass,
    /// Mean squared log-probability residual of the chosen class.
    pub residual: f64,
    pub geometric: (f64, f64),
    /// `(thermal weight, residual)` with the mean fixed to that of `p`.
    pub cothermal: (f64, f64),
    pub nongaussian: NonGaussianCheck,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Levels whose small negative values were set to zero.
    pub clamped: Vec<usize>,
    pub most_negative: f64,
    /// `Σp` before renormalisation.
    pub raw_sum: f64,
}

/// `p(0..=N)` with inversion diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonDistribution {
    pub p: Vec<f64>,
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub fit: Option<Fit>,
}

impl PhotonDistribution {
    pub fn from_probabilities(p: Vec<f64>) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if p.is_empty() || (sum - 1.0).abs() > 1e-9 || p.iter().any(|x| !(*x >= -1e-9)) {
            return Err(Error::InvalidConfig(
                "probabilities must be non-negative and sum to one".into(),
            ));
        }
        Ok(Self {
            p,
            diagnostics: Diagnostics {
                raw_sum: sum,
                ..Default::default()
            },
            fit: None,
        })
    }

    pub fn mean(&self) -> f64 {
        self.p.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// Factorial moments `Σ_k k!/(k−n)! p(k)` for `n = 1..=order`.
    pub fn moments(&self, order: usize) -> Vec<f64> {
        (1..=order)
            .map(|n| {
                self.p
                    .iter()
                    .enumerate()
                    .skip(n)
                    .map(|(k, p)| falling(k, n) * p)
                    .sum()
            })
            .collect()
    }

    pub fn with_fit(mut self) -> Self {
        self.fit = Some(fit_distribution(&self));
        self
    }

    /// Writes `n,p,fit_class,fit_param` and a `.json` diagnostics sidecar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let fit = self.fit.clone().unwrap_or_else(|| fit_distribution(self));
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "n,p,fit_class,fit_param")?;
        for (n, p) in self.p.iter().enumerate() {
            writeln!(
                out,
                "{n},{},{},{}",
                fmt_sig(*p),
                fit.class.name(),
                fmt_sig(fit.class.param())
            )?;
        }
        out.flush()?;
        let diag = serde_json::json!({
            "diagnostics": self.diagnostics,
            "fit": fit,
        });
        fs::write(path.with_extension("json"), serde_json::to_string_pretty(&diag)?)?;
        Ok(())
    }
}

fn falling(n: usize, k: usize) -> f64 {
    ((n - k + 1)..=n).map(|x| x as f64).product()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

/// Back-substitution of the factorial-moment relation from `k = N` down.
/// Moments beyond the given order count as zero.
pub fn invert_moments(m: &MomentVector, n: usize) -> Result<PhotonDistribution> {
    let moment = |k: usize| m.values.get(k - 1).copied().unwrap_or(0.0);
    let mut p = vec![0.0; n + 1];
    for k in (1..=n).rev() {
        let tail: f64 = ((k + 1)..=n).map(|j| falling(j, k) * p[j]).sum();
        p[k] = (moment(k) - tail) / factorial(k);
    }
    p[0] = 1.0 - p[1..].iter().sum::<f64>();
    let raw_sum: f64 = p.iter().sum();
    let mut diag = Diagnostics {
        raw_sum,
        ..Default::default()
    };
    for (k, x) in p.iter_mut().enumerate() {
        if *x < 0.0 {
            diag.most_negative = diag.most_negative.min(*x);
            if *x < -CLAMP_THRESHOLD {
                return Err(Error::InconsistentMoments { n: k, value: *x });
            }
            diag.clamped.push(k);
            *x = 0.0;
        }
    }
    let s: f64 = p.iter().sum();
    for x in &mut p {
        *x /= s;
    }
    Ok(PhotonDistribution {
        p,
        diagnostics: diag,
        fit: None,
    })
}

/// Probabilities below this carry no usable information in log space.
const LOG_FLOOR: f64 = 1e-12;
/// Cothermal wins only with a real uncorrelated share.
const COTHERMAL_MAX_WEIGHT: f64 = 0.9;
/// Above this mean squared log residual nothing fits.
const OTHER_RESIDUAL: f64 = 0.1;
/// A geometric fit this good is kept even if a cothermal one is closer.
const GOOD_FIT_RESIDUAL: f64 = 0.01;
/// A level holding this much probability makes the state Fock-like.
const FOCK_DOMINANCE: f64 = 0.9;

fn log_residual(p: &[f64], model: impl Fn(usize) -> f64) -> f64 {
    let mut s = 0.0;
    let mut c = 0;
    for (n, &x) in p.iter().enumerate() {
        if x > LOG_FLOOR {
            let f = model(n).max(1e-300);
            s += (x.ln() - f.ln()).powi(2);
            c += 1;
        }
    }
    if c == 0 {
        f64::INFINITY
    } else {
        s / c as f64
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

pub fn geometric_pmf(theta: f64, n: usize) -> f64 {
    (1.0 - theta) * theta.powi(n as i32)
}

/// Photon distribution of a thermal field of mean `w·mean` superposed with
/// a coherent field of mean `(1−w)·mean`.
pub fn cothermal_pmf(mean: f64, thermal_weight: f64, n: usize) -> f64 {
    let nt = thermal_weight * mean;
    let c = (1.0 - thermal_weight) * mean;
    let a = nt / (1.0 + nt);
    let b = c / ((1.0 + nt) * (1.0 + nt));
    let mut sum = 0.0;
    let mut binom = 1.0;
    let mut kfact = 1.0;
    for k in 0..=n {
        if k > 0 {
            binom *= (n - k + 1) as f64 / k as f64;
            kfact *= k as f64;
        }
        let tail = if n == k { 1.0 } else { a.powi((n - k) as i32) };
        sum += binom * tail * b.powi(k as i32) / kfact;
    }
    (-c / (1.0 + nt)).exp() / (1.0 + nt) * sum
}

/// Least-squares fits in log-probability space and a class decision.
pub fn fit_distribution(p: &PhotonDistribution) -> Fit {
    let probs = &p.p;
    let nongaussian = nongaussian_check(p);
    let p0 = probs.first().copied().unwrap_or(1.0);
    let mean = p.mean();

    // θ searched on a log scale
    let geo_res = |lt: f64| log_residual(probs, |n| geometric_pmf(lt.exp(), n));
    let lt = golden_min(geo_res, (1e-12f64).ln(), (1.0 - 1e-9f64).ln(), 1e-12);
    let theta = lt.exp();
    let rg = geo_res(lt);

    let coth_res = |w: f64| log_residual(probs, |n| cothermal_pmf(mean, w, n));
    let w = golden_min(coth_res, 0.0, 1.0, 1e-10);
    let rc = coth_res(w);

    let (class, residual) = if p0 >= 1.0 - 1e-9 {
        (FitClass::Vacuum, 0.0)
    } else if let Some((k, &pk)) = probs
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, &x)| x >= FOCK_DOMINANCE)
    {
        (FitClass::Fock { n: k }, 1.0 - pk)
    } else if rg <= GOOD_FIT_RESIDUAL {
        (FitClass::Geometric { theta }, rg)
    } else if rc < rg && w < COTHERMAL_MAX_WEIGHT && rc <= OTHER_RESIDUAL {
        (
            FitClass::Cothermal {
                mean,
                thermal_weight: w,
            },
            rc,
        )
    } else if rg <= OTHER_RESIDUAL {
        (FitClass::Geometric { theta }, rg)
    } else {
        (FitClass::Other, rg.min(rc))
    };
    Fit {
        class,
        residual,
        geometric: (theta, rg),
        cothermal: (w, rc),
        nongaussian,
    }
}

/// Default highest photon number: two levels below the detector truncation.
pub fn default_order(n_max: usize) -> usize {
    n_max.saturating_sub(2).max(1)
}

/// Effective-source distribution of `src` seen through a Lorentzian of
/// width `gamma` at `omega`, from the exact steady state.
pub fn reconstruct_filtered(
    src: &SourceConfig,
    omega: f64,
    gamma: f64,
    chi2: f64,
) -> Result<PhotonDistribution> {
    let cfg =
        CascadeConfig::single(*src, DetectorConfig::new(omega, gamma, 4)).with_chi([0.0, 0.0, chi2, 0.0]);
    let sys = CascadeSystem::converged(&cfg, 1e-12)?;
    let order = default_order(sys.cfg.detectors[0].n_max);
    let m = detector_moments(&sys, 0, order)?;
    let m = remove_coupling(&m, sys.cfg.alphas()[0])?;
    let s = source_moments_from_detector(&m, gamma, src.gamma_sigma)?;
    Ok(invert_moments(&s, order)?.with_fit())
}

/// Distribution of the bare emitter.
pub fn reconstruct_unfiltered(src: &SourceConfig) -> Result<PhotonDistribution> {
    let sys = CascadeSystem::new(&CascadeConfig::unfiltered(*src))?;
    let m = emitter_moments(sys.source_population(), 2)?;
    Ok(invert_moments(&m, 2)?.with_fit())
}
