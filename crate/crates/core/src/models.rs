//! Physical configurations and the operators they generate.
//!
//! Units: rates and frequencies in units of the emitter decay rate, times in
//! its inverse. Frequencies live in the simulation frame: the laser frame for
//! coherent drive, the emitter frame (shifted by `omega_sigma`) otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    annihilation_boson, annihilation_tls, embed, Operator, SpaceLayout, Superoperator, C64,
};

/// Largest Hilbert dimension any builder will accept.
pub const MAX_HILBERT_DIM: usize = 72;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drive {
    /// Incoherent pumping at rate `pump`, channel `√P σ†`.
    Incoherent { pump: f64 },
    /// Laser drive in the laser frame: `H = Δ_L σ†σ + Ω(σ + σ†)`.
    Coherent { omega: f64, detuning: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    #[serde(default = "one")]
    pub gamma_sigma: f64,
    pub drive: Drive,
    #[serde(default)]
    pub omega_sigma: f64,
}

fn one() -> f64 {
    1.0
}

impl SourceConfig {
    pub fn incoherent(pump: f64) -> Self {
        Self {
            gamma_sigma: 1.0,
            drive: Drive::Incoherent { pump },
            omega_sigma: 0.0,
        }
    }

    pub fn coherent(omega: f64, detuning: f64) -> Self {
        Self {
            gamma_sigma: 1.0,
            drive: Drive::Coherent { omega, detuning },
            omega_sigma: 0.0,
        }
    }

    pub fn pump(&self) -> f64 {
        match self.drive {
            Drive::Incoherent { pump } => pump,
            Drive::Coherent { .. } => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        finite(self.gamma_sigma, "gamma_sigma")?;
        finite(self.omega_sigma, "omega_sigma")?;
        if self.gamma_sigma <= 0.0 {
            return Err(Error::InvalidConfig("gamma_sigma must be positive".into()));
        }
        match self.drive {
            Drive::Incoherent { pump } => {
                finite(pump, "pump")?;
                if pump < 0.0 {
                    return Err(Error::InvalidConfig("pump rate must be >= 0".into()));
                }
            }
            Drive::Coherent { omega, detuning } => {
                finite(omega, "omega")?;
                finite(detuning, "detuning")?;
                if omega < 0.0 {
                    return Err(Error::InvalidConfig("drive amplitude must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Emitter Hamiltonian on the standalone two-level space.
    pub fn hamiltonian(&self) -> Operator {
        let s = annihilation_tls();
        let n = s.number();
        let mut h = n.scale_real(self.omega_sigma);
        if let Drive::Coherent { omega, detuning } = self.drive {
            h = &h + &n.scale_real(detuning);
            h = &h + &(&s + &s.adjoint()).scale_real(omega);
        }
        h
    }
}

fn finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} is not finite")))
    }
}

/// A Lorentzian filter modelled as a truncated bosonic mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub omega_xi: f64,
    pub gamma: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

pub fn default_n_max() -> usize {
    3
}

impl DetectorConfig {
    pub fn new(omega_xi: f64, gamma: f64, n_max: usize) -> Self {
        Self {
            omega_xi,
            gamma,
            n_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        finite(self.omega_xi, "omega_xi")?;
        finite(self.gamma, "detector gamma")?;
        if self.gamma <= 0.0 {
            return Err(Error::InvalidConfig("detector linewidth must be positive".into()));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidTruncation {
                min: 1,
                got: self.n_max,
            });
        }
        Ok(())
    }
}

/// Vanishing-coupling probe of the source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub theta: f64,
    pub omega_xi: f64,
    pub gamma: f64,
    pub truncation: usize,
}

impl SensorConfig {
    pub fn new(omega_xi: f64, gamma: f64, truncation: usize) -> Self {
        Self {
            epsilon: 1e-3,
            theta: 0.0,
            omega_xi,
            gamma,
            truncation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (x, w) in [
            (self.epsilon, "epsilon"),
            (self.theta, "theta"),
            (self.omega_xi, "omega_xi"),
            (self.gamma, "sensor gamma"),
        ] {
            finite(x, w)?;
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidConfig("sensor linewidth must be positive".into()));
        }
        if self.truncation < 1 {
            return Err(Error::InvalidTruncation {
                min: 1,
                got: self.truncation,
            });
        }
        Ok(())
    }
}

/// Source with zero, one or two cascaded detectors.
///
/// `chi` holds the splitting fractions. With one detector only `chi[1]`
/// (source emission kept out of the cascade) and `chi[2]` (detector emission
/// read out on its own channel) are used. With two detectors `chi[0]` is the
/// fraction of the source sent to the first detector, `chi[1]` the fraction
/// escaping directly, and `chi[2]`, `chi[3]` the readout fractions of the two
/// detectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub source: SourceConfig,
    #[serde(default)]
    pub detectors: Vec<DetectorConfig>,
    #[serde(default = "default_chi")]
    pub chi: [f64; 4],
}

pub fn default_chi() -> [f64; 4] {
    [0.5, 0.0, 0.5, 0.5]
}

impl CascadeConfig {
    pub fn new(source: SourceConfig, detectors: Vec<DetectorConfig>) -> Self {
        Self {
            source,
            detectors,
            chi: default_chi(),
        }
    }

    pub fn unfiltered(source: SourceConfig) -> Self {
        Self::new(source, Vec::new())
    }

    pub fn single(source: SourceConfig, detector: DetectorConfig) -> Self {
        Self::new(source, vec![detector])
    }

    pub fn with_chi(mut self, chi: [f64; 4]) -> Self {
        self.chi = chi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        if self.detectors.len() > 2 {
            return Err(Error::InvalidConfig(format!(
                "at most two detectors supported, got {}",
                self.detectors.len()
            )));
        }
        for d in &self.detectors {
            d.validate()?;
        }
        for (i, &c) in self.chi.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidConfig(format!("chi_{i} = {c} outside [0, 1]")));
            }
        }
        if self.detectors.len() == 2 && self.chi[0] + self.chi[1] > 1.0 + 1e-12 {
            return Err(Error::InvalidConfig("chi_0 + chi_1 must not exceed 1".into()));
        }
        let dim = self.hilbert_dim();
        if dim > MAX_HILBERT_DIM {
            return Err(Error::DimensionOverflow {
                dim,
                max: MAX_HILBERT_DIM,
            });
        }
        Ok(())
    }

    pub fn layout(&self) -> SpaceLayout {
        let mut dims = vec![2];
        dims.extend(self.detectors.iter().map(|d| d.n_max + 1));
        SpaceLayout::new(dims).expect("validated truncations")
    }

    pub fn hilbert_dim(&self) -> usize {
        2 * self.detectors.iter().map(|d| d.n_max + 1).product::<usize>()
    }

    /// Cascade coupling efficiency `α_i` of each detector.
    pub fn alphas(&self) -> Vec<f64> {
        let c = self.chi;
        match self.detectors.len() {
            0 => vec![],
            1 => vec![(1.0 - c[1]) * (1.0 - c[2])],
            _ => vec![c[0] * (1.0 - c[2]), ((1.0 - c[0] - c[1]).max(0.0)) * (1.0 - c[3])],
        }
    }

    /// Fraction of detector `i`'s emission read out on its own channel.
    pub fn readout_fraction(&self, i: usize) -> f64 {
        match self.detectors.len() {
            1 => self.chi[2],
            _ => self.chi[2 + i],
        }
    }
}

/// Emitter and detector lowering operators on the full cascade space.
#[derive(Clone, Debug)]
pub struct CascadeOperators {
    pub layout: SpaceLayout,
    pub sigma: Operator,
    pub xis: Vec<Operator>,
}

impl CascadeOperators {
    pub fn new(cfg: &CascadeConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = cfg.layout();
        let sigma = embed(&annihilation_tls(), 0, &layout)?;
        let xis = cfg
            .detectors
            .iter()
            .enumerate()
            .map(|(i, d)| embed(&annihilation_boson(d.n_max)?, i + 1, &layout))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layout, sigma, xis })
    }

    /// Coherent Hamiltonian `H_σ + Σ ω_ξ ξ†ξ`.
    pub fn hamiltonian(&self, cfg: &CascadeConfig) -> Result<Operator> {
        let mut h = embed(&cfg.source.hamiltonian(), 0, &self.layout)?;
        for (xi, d) in self.xis.iter().zip(&cfg.detectors) {
            h = &h + &xi.number().scale_real(d.omega_xi);
        }
        Ok(h)
    }
}

/// A collapse operator with the name its clicks are recorded under.
#[derive(Clone, Debug)]
pub struct Channel {
    pub label: String,
    pub op: Operator,
}

fn source_dissipators(src: &SourceConfig, sigma: &Operator) -> Superoperator {
    let mut l = Superoperator::dissipator(sigma, src.gamma_sigma);
    if src.pump() > 0.0 {
        l += &Superoperator::dissipator(&sigma.adjoint(), src.pump());
    }
    l
}

/// Liouvillian of the emitter alone, `i[ρ,H] + (γ/2)L_σ (+ (P/2)L_σ†)`.
pub fn build_source_liouvillian(cfg: &SourceConfig) -> Result<Superoperator> {
    cfg.validate()?;
    let mut l = Superoperator::hamiltonian(&cfg.hamiltonian());
    l += &source_dissipators(cfg, &annihilation_tls());
    Ok(l)
}

/// Cascaded Liouvillian with the explicit one-way coupling terms
/// `√(α γ Γ) ([σρ, ξ†] + [ξ, ρσ†])`.
pub fn build_cascaded_liouvillian(cfg: &CascadeConfig) -> Result<Superoperator> {
    let ops = CascadeOperators::new(cfg)?;
    let h = ops.hamiltonian(cfg)?;
    let mut l = Superoperator::hamiltonian(&h);
    l += &source_dissipators(&cfg.source, &ops.sigma);
    let sd = ops.sigma.adjoint();
    for ((xi, d), alpha) in ops.xis.iter().zip(&cfg.detectors).zip(cfg.alphas()) {
        l += &Superoperator::dissipator(xi, d.gamma);
        let k = (alpha * cfg.source.gamma_sigma * d.gamma).sqrt();
        if k == 0.0 {
            continue;
        }
        let xd = xi.adjoint();
        // [σρ, ξ†] + [ξ, ρσ†] = σρξ† − ξ†σρ + ξρσ† − ρσ†ξ
        let mut coupling = Superoperator::sandwich(&ops.sigma, &xd);
        coupling += &Superoperator::left(&(&xd * &ops.sigma)).scale_real(-1.0);
        coupling += &Superoperator::sandwich(xi, &sd);
        coupling += &Superoperator::right(&(&sd * xi)).scale_real(-1.0);
        l += &coupling.scale_real(k);
    }
    Ok(l)
}

/// Anti-Hermitian cascade term `−(i/2) Σ √(α_i γ Γ_i)(ξ_i†σ − σ†ξ_i)`.
fn cascade_hamiltonian(cfg: &CascadeConfig, ops: &CascadeOperators) -> Operator {
    let mut hc = Operator::zeros(&ops.layout);
    let sd = ops.sigma.adjoint();
    for ((xi, d), alpha) in ops.xis.iter().zip(&cfg.detectors).zip(cfg.alphas()) {
        let k = (alpha * cfg.source.gamma_sigma * d.gamma).sqrt();
        let term = &(&xi.adjoint() * &ops.sigma) - &(&sd * xi);
        hc = &hc + &term.scale(C64::new(0.0, -0.5 * k));
    }
    hc
}

/// The same Liouvillian assembled as `i[ρ, H + H_c] + Σ_k D[c_k]` from the
/// collapse operators.
pub fn build_lindblad_liouvillian(cfg: &CascadeConfig) -> Result<Superoperator> {
    let ops = CascadeOperators::new(cfg)?;
    let h = &ops.hamiltonian(cfg)? + &cascade_hamiltonian(cfg, &ops);
    let mut l = Superoperator::hamiltonian(&h);
    for ch in collapse_operators(cfg)? {
        l += &Superoperator::dissipator(&ch.op, 1.0);
    }
    Ok(l)
}

/// Collapse channels in a fixed order.
///
/// No detector: `source`. One detector: `joint`, `source`, `xi`. Two
/// detectors: `joint1`, `joint2`, `source`, `xi1`, `xi2`. A `pump` channel
/// `√P σ†` is appended under incoherent drive; it is never a photon click.
pub fn collapse_operators(cfg: &CascadeConfig) -> Result<Vec<Channel>> {
    let ops = CascadeOperators::new(cfg)?;
    let g = cfg.source.gamma_sigma;
    let c = cfg.chi;
    let s = &ops.sigma;
    let ch = |label: &str, op: Operator| Channel {
        label: label.to_string(),
        op,
    };
    let mut out = match cfg.detectors.len() {
        0 => vec![ch("source", s.scale_real(g.sqrt()))],
        1 => {
            let gx = cfg.detectors[0].gamma;
            let x = &ops.xis[0];
            vec![
                ch(
                    "joint",
                    &s.scale_real(((1.0 - c[1]) * g).sqrt()) + &x.scale_real(((1.0 - c[2]) * gx).sqrt()),
                ),
                ch("source", s.scale_real((c[1] * g).sqrt())),
                ch("xi", x.scale_real((c[2] * gx).sqrt())),
            ]
        }
        _ => {
            let (g1, g2) = (cfg.detectors[0].gamma, cfg.detectors[1].gamma);
            let (x1, x2) = (&ops.xis[0], &ops.xis[1]);
            let rest = (1.0 - c[0] - c[1]).max(0.0);
            vec![
                ch(
                    "joint1",
                    &s.scale_real((c[0] * g).sqrt()) + &x1.scale_real(((1.0 - c[2]) * g1).sqrt()),
                ),
                ch(
                    "joint2",
                    &s.scale_real((rest * g).sqrt()) + &x2.scale_real(((1.0 - c[3]) * g2).sqrt()),
                ),
                ch("source", s.scale_real((c[1] * g).sqrt())),
                ch("xi1", x1.scale_real((c[2] * g1).sqrt())),
                ch("xi2", x2.scale_real((c[3] * g2).sqrt())),
            ]
        }
    };
    let p = cfg.source.pump();
    if p > 0.0 {
        out.push(ch("pump", s.adjoint().scale_real(p.sqrt())));
    }
    Ok(out)
}

/// Index of the channel carrying `label`, if present.
pub fn channel_index(channels: &[Channel], label: &str) -> Option<usize> {
    channels.iter().position(|c| c.label == label)
}

/// Non-Hermitian Hamiltonian of the no-jump evolution,
/// `H − i Σ √(α_i γ Γ_i) ξ_i†σ − (i/2)(γσ†σ + Σ Γ_i ξ_i†ξ_i + P σσ†)`.
pub fn effective_hamiltonian(cfg: &CascadeConfig) -> Result<Operator> {
    let ops = CascadeOperators::new(cfg)?;
    let mut h = ops.hamiltonian(cfg)?;
    let mi = |x: f64| C64::new(0.0, -x);
    let mut damp = ops.sigma.number().scale_real(cfg.source.gamma_sigma);
    for ((xi, d), alpha) in ops.xis.iter().zip(&cfg.detectors).zip(cfg.alphas()) {
        damp = &damp + &xi.number().scale_real(d.gamma);
        let k = (alpha * cfg.source.gamma_sigma * d.gamma).sqrt();
        h = &h + &(&xi.adjoint() * &ops.sigma).scale(mi(k));
    }
    let p = cfg.source.pump();
    if p > 0.0 {
        damp = &damp + &(&ops.sigma * &ops.sigma.adjoint()).scale_real(p);
    }
    Ok(&h + &damp.scale(mi(0.5)))
}

/// The same operator built as `H + H_c − (i/2) Σ_k c_k†c_k`.
pub fn effective_hamiltonian_from_channels(cfg: &CascadeConfig) -> Result<Operator> {
    let ops = CascadeOperators::new(cfg)?;
    let mut h = &ops.hamiltonian(cfg)? + &cascade_hamiltonian(cfg, &ops);
    for ch in collapse_operators(cfg)? {
        h = &h + &ch.op.number().scale(C64::new(0.0, -0.5));
    }
    Ok(h)
}

/// Liouvillian of the emitter weakly coupled to a bosonic sensor,
/// `i[ρ, H_σ + ω_ξ ξ†ξ + εσ†ξ + ε*σξ†] + (γ/2)L_σ + (Γ/2)L_ξ`.
pub fn build_sensor_liouvillian(src: &SourceConfig, sen: &SensorConfig) -> Result<Superoperator> {
    src.validate()?;
    sen.validate()?;
    let layout = SpaceLayout::new(vec![2, sen.truncation + 1])?;
    let s = embed(&annihilation_tls(), 0, &layout)?;
    let x = embed(&annihilation_boson(sen.truncation)?, 1, &layout)?;
    let eps = C64::from_polar(sen.epsilon, sen.theta);
    let coupling = &(&s.adjoint() * &x).scale(eps) + &(&s * &x.adjoint()).scale(eps.conj());
    let h = &(&embed(&src.hamiltonian(), 0, &layout)? + &x.number().scale_real(sen.omega_xi)) + &coupling;
    let mut l = Superoperator::hamiltonian(&h);
    l += &source_dissipators(src, &s);
    l += &Superoperator::dissipator(&x, sen.gamma);
    Ok(l)
}

/// Two-photon resonance lines and degenerate windows of the Mollow triplet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeapfrogLines {
    /// Sideband splitting `Ω₊ = √((2Ω)² + Δ_L²)`.
    pub omega_plus: f64,
    /// Values of `ω₁ + ω₂`: `−Ω₊, 0, Ω₊`.
    pub two_photon_sums: [f64; 3],
    /// Windows with `ω₁ = ω₂`: `−Ω₊/2, 0, Ω₊/2`.
    pub degenerate_windows: [f64; 3],
}

pub fn leapfrog_frequencies(omega: f64, detuning: f64) -> LeapfrogLines {
    let w = ((2.0 * omega).powi(2) + detuning * detuning).sqrt();
    LeapfrogLines {
        omega_plus: w,
        two_photon_sums: [-w, 0.0, w],
        degenerate_windows: [-w / 2.0, 0.0, w / 2.0],
    }
}
