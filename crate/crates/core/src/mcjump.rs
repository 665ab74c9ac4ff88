//! Quantum-jump unraveling of the cascade and the click streams it produces.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use faer::complex_native::c64;
use faer::linalg::matmul::matmul;
use faer::{Mat, Parallelism};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{expm, Operator, SparseGenerator, StateVector, C64, I, ONE, ZERO};
use crate::mastereq::CascadeSystem;
use crate::models::{collapse_operators, effective_hamiltonian, CascadeConfig, CascadeOperators};

pub const DEFAULT_DT: f64 = 0.01;
/// Largest steady-state jump probability per step before `dt` is halved.
pub const MAX_STEP_PROBABILITY: f64 = 0.1;

fn default_dt() -> f64 {
    DEFAULT_DT
}

/// Everything needed to generate one click stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cascade: CascadeConfig,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Recording time. Either this or `target_clicks` must be set; if both
    /// are, whichever is reached first stops the run.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub target_clicks: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Channel labels to record. Empty means the detector readout channels,
    /// or `source` when there is no detector.
    #[serde(default)]
    pub recorded_channels: Vec<String>,
    /// Discarded time before recording, default `20/min(γ_σ, Γ_i)`.
    #[serde(default)]
    pub transient: Option<f64>,
}

impl RunConfig {
    pub fn new(cascade: CascadeConfig) -> Self {
        Self {
            cascade,
            dt: DEFAULT_DT,
            duration: None,
            target_clicks: None,
            seed: 0,
            recorded_channels: Vec::new(),
            transient: None,
        }
    }

    pub fn with_duration(mut self, t: f64) -> Self {
        self.duration = Some(t);
        self
    }

    pub fn with_clicks(mut self, n: usize) -> Self {
        self.target_clicks = Some(n);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_channels(mut self, labels: &[&str]) -> Self {
        self.recorded_channels = labels.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_transient(mut self, t: f64) -> Self {
        self.transient = Some(t);
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn default_transient(&self) -> f64 {
        let slowest = self
            .cascade
            .detectors
            .iter()
            .map(|d| d.gamma)
            .fold(self.cascade.source.gamma_sigma, f64::min);
        20.0 / slowest
    }

    pub fn transient_time(&self) -> f64 {
        self.transient.unwrap_or_else(|| self.default_transient())
    }

    /// Labels actually recorded.
    pub fn recorded_labels(&self) -> Vec<String> {
        if !self.recorded_channels.is_empty() {
            return self.recorded_channels.clone();
        }
        match self.cascade.detectors.len() {
            0 => vec!["source".into()],
            1 => vec!["xi".into()],
            _ => vec!["xi1".into(), "xi2".into()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cascade.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        match (self.duration, self.target_clicks) {
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "run needs a duration or a target click count".into(),
                ))
            }
            (Some(t), _) if !(t >= 0.0 && t.is_finite()) => {
                return Err(Error::InvalidConfig(format!(
                    "duration must be non-negative, got {t}"
                )))
            }
            _ => {}
        }
        if let Some(t) = self.transient {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "transient must be non-negative, got {t}"
                )));
            }
        }
        let labels: Vec<String> = collapse_operators(&self.cascade)?
            .into_iter()
            .map(|c| c.label)
            .collect();
        for l in self.recorded_labels() {
            if !labels.contains(&l) {
                return Err(Error::InvalidConfig(format!(
                    "unknown channel {l:?}, available: {}",
                    labels.join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// One detected photon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub time: f64,
    /// Index into the stream's channel labels.
    pub channel: usize,
}

/// Per-trajectory bookkeeping beyond the recorded clicks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub steps: u64,
    /// Jumps on every channel during recording, recorded or not.
    pub jumps: Vec<u64>,
    /// Time-averaged `⟨σ†σ⟩` over the recording.
    pub mean_source_population: f64,
    /// Time-averaged `⟨ξ_i†ξ_i⟩` over the recording.
    pub mean_detector_populations: Vec<f64>,
}

/// Time-ordered clicks sharing one clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickStream {
    /// Streams can only be cross-correlated when their run ids match.
    pub run_id: String,
    pub seed: u64,
    pub trajectory: usize,
    pub dt: f64,
    pub duration: f64,
    /// Label of every channel index.
    pub channels: Vec<String>,
    pub records: Vec<ClickRecord>,
    #[serde(default)]
    pub stats: Option<TrajectoryStats>,
    #[serde(default)]
    pub config: Option<RunConfig>,
}

impl ClickStream {
    pub fn empty(run_id: impl Into<String>, duration: f64) -> Self {
        Self {
            run_id: run_id.into(),
            seed: 0,
            trajectory: 0,
            dt: 0.0,
            duration,
            channels: Vec::new(),
            records: Vec::new(),
            stats: None,
            config: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn label(&self, rec: &ClickRecord) -> &str {
        self.channels.get(rec.channel).map(String::as_str).unwrap_or("")
    }

    pub fn count(&self, label: &str) -> usize {
        match self.channels.iter().position(|c| c == label) {
            Some(k) => self.records.iter().filter(|r| r.channel == k).count(),
            None => 0,
        }
    }

    /// Sub-stream of the clicks on `labels`, keeping clock and run id.
    pub fn select(&self, labels: &[&str]) -> ClickStream {
        let keep: Vec<usize> = labels
            .iter()
            .filter_map(|l| self.channels.iter().position(|c| c == l))
            .collect();
        ClickStream {
            records: self
                .records
                .iter()
                .filter(|r| keep.contains(&r.channel))
                .copied()
                .collect(),
            ..self.clone()
        }
    }

    pub fn check_sorted(&self) -> Result<()> {
        for (k, w) in self.records.windows(2).enumerate() {
            if w[1].time < w[0].time {
                return Err(Error::Parse {
                    line: k + 2,
                    msg: "click times decrease".into(),
                });
            }
        }
        Ok(())
    }

    /// Writes `path` as CSV and, if a run configuration is attached, a JSON
    /// sidecar next to it with extension `.json`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "# run_id={}", self.run_id)?;
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "# trajectory={}", self.trajectory)?;
        writeln!(out, "# dt={}", fmt_sig(self.dt))?;
        writeln!(out, "# duration={}", fmt_sig(self.duration))?;
        writeln!(out, "# channels={}", self.channels.join(";"))?;
        writeln!(out, "# clicks={}", self.records.len())?;
        if let Some(cfg) = &self.config {
            writeln!(out, "# params={}", serde_json::to_string(&cfg.cascade)?)?;
        }
        writeln!(out, "time,channel,label")?;
        let mut line = String::new();
        for r in &self.records {
            line.clear();
            let _ = write!(line, "{},{},{}", fmt_sig(r.time), r.channel, self.label(r));
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        if let Some(cfg) = &self.config {
            let side = path.with_extension("json");
            fs::write(side, serde_json::to_string_pretty(cfg)?)?;
        }
        Ok(())
    }

    /// Reads a stream written by [`ClickStream::write_csv`], picking up the
    /// JSON sidecar when present.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = BufReader::new(fs::File::open(path)?);
        let mut s = ClickStream::empty("", 0.0);
        let mut seen_header = false;
        for (n, line) in file.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let perr = |msg: &str| Error::Parse {
                line: lineno,
                msg: msg.to_string(),
            };
            if let Some(meta) = line.strip_prefix('#') {
                let Some((k, v)) = meta.trim().split_once('=') else {
                    continue;
                };
                let num = |v: &str| v.parse::<f64>().map_err(|_| perr("bad number"));
                match k {
                    "run_id" => s.run_id = v.to_string(),
                    "seed" => s.seed = v.parse().map_err(|_| perr("bad seed"))?,
                    "trajectory" => s.trajectory = v.parse().map_err(|_| perr("bad trajectory"))?,
                    "dt" => s.dt = num(v)?,
                    "duration" => s.duration = num(v)?,
                    "channels" => {
                        s.channels = if v.is_empty() {
                            Vec::new()
                        } else {
                            v.split(';').map(str::to_string).collect()
                        }
                    }
                    _ => {}
                }
                continue;
            }
            if !seen_header {
                if line.trim() != "time,channel,label" {
                    return Err(perr("expected header time,channel,label"));
                }
                seen_header = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split(',');
            let time = f
                .next()
                .and_then(|x| x.parse::<f64>().ok())
                .ok_or_else(|| perr("bad time"))?;
            let channel = f
                .next()
                .and_then(|x| x.parse::<usize>().ok())
                .ok_or_else(|| perr("bad channel"))?;
            if channel >= s.channels.len() {
                return Err(perr("channel index out of range"));
            }
            s.records.push(ClickRecord { time, channel });
        }
        if !seen_header {
            return Err(Error::Parse {
                line: 0,
                msg: "missing header".into(),
            });
        }
        s.check_sorted()?;
        let side = path.with_extension("json");
        if side.exists() {
            s.config = Some(serde_json::from_str(&fs::read_to_string(side)?)?);
        }
        Ok(s)
    }
}

/// Nine significant digits, shortest exact form otherwise.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{:.8e}", x);
    let v: f64 = s.parse().unwrap_or(x);
    format!("{v}")
}

/// No-jump propagator `e^{−iH̃ dt}`.
#[derive(Clone, Debug)]
pub struct Propagator {
    dt: f64,
    u: Mat<c64>,
}

impl Propagator {
    pub fn new(h_eff: &Operator, dt: f64) -> Result<Self> {
        let u = expm(&(h_eff.matrix() * (-I * dt)))?;
        let d = u.nrows();
        Ok(Self {
            dt,
            u: Mat::from_fn(d, d, |i, j| c64::new(u[(i, j)].re, u[(i, j)].im)),
        })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `y = U x` through the column buffers `xb`, `yb`.
    fn apply(&self, x: &[C64], y: &mut [C64], xb: &mut Mat<c64>, yb: &mut Mat<c64>) {
        for (k, z) in x.iter().enumerate() {
            xb.write(k, 0, c64::new(z.re, z.im));
        }
        matmul(
            yb.as_mut(),
            self.u.as_ref(),
            xb.as_ref(),
            None,
            c64::new(1.0, 0.0),
            Parallelism::None,
        );
        for (k, z) in y.iter_mut().enumerate() {
            let w = yb.read(k, 0);
            *z = C64::new(w.re, w.im);
        }
    }
}

/// Collapse operators in sparse form, one per channel.
#[derive(Clone, Debug)]
pub struct JumpSet {
    pub labels: Vec<String>,
    ops: Vec<SparseGenerator>,
}

impl JumpSet {
    pub fn new(cfg: &CascadeConfig) -> Result<Self> {
        let ch = collapse_operators(cfg)?;
        Ok(Self {
            labels: ch.iter().map(|c| c.label.clone()).collect(),
            ops: ch
                .iter()
                .map(|c| SparseGenerator::from_dense(c.op.matrix()))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// `p_k / dt = ‖c_k ψ‖²` for every channel.
    pub fn rates(&self, psi: &[C64], scratch: &mut [C64], out: &mut [f64]) {
        for (op, r) in self.ops.iter().zip(out.iter_mut()) {
            op.mul_into(psi, scratch);
            *r = scratch.iter().map(|z| z.norm_sqr()).sum();
        }
    }
}

fn normalize(v: &mut [C64]) -> f64 {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        let s = 1.0 / n;
        for z in v.iter_mut() {
            *z *= s;
        }
    }
    n
}

/// Outcome of one step: the channel that fired and where in the step.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Jump {
    channel: usize,
    fraction: f64,
}

/// Working buffers for a single trajectory.
struct Stepper<'a> {
    prop: &'a Propagator,
    jumps: &'a JumpSet,
    psi: Vec<C64>,
    next: Vec<C64>,
    rates: Vec<f64>,
    xb: Mat<c64>,
    yb: Mat<c64>,
}

impl<'a> Stepper<'a> {
    fn new(prop: &'a Propagator, jumps: &'a JumpSet, psi: &[C64]) -> Self {
        Self {
            prop,
            jumps,
            psi: psi.to_vec(),
            next: vec![ZERO; psi.len()],
            rates: vec![0.0; jumps.len()],
            xb: Mat::zeros(psi.len(), 1),
            yb: Mat::zeros(psi.len(), 1),
        }
    }

    fn advance<R: Rng>(&mut self, rng: &mut R) -> Result<Option<Jump>> {
        let dt = self.prop.dt;
        self.jumps.rates(&self.psi, &mut self.next, &mut self.rates);
        let total: f64 = self.rates.iter().sum::<f64>() * dt;
        if total >= 1.0 || !total.is_finite() {
            return Err(Error::TimestepTooLarge { probability: total });
        }
        let r1: f64 = rng.gen();
        if r1 < total {
            let r2: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut k = self.rates.len() - 1;
            for (i, r) in self.rates.iter().enumerate() {
                acc += r * dt;
                if r2 < acc && *r > 0.0 {
                    k = i;
                    break;
                }
            }
            self.jumps.ops[k].mul_into(&self.psi, &mut self.next);
            std::mem::swap(&mut self.psi, &mut self.next);
            normalize(&mut self.psi);
            Ok(Some(Jump {
                channel: k,
                fraction: r1 / total,
            }))
        } else {
            self.prop
                .apply(&self.psi, &mut self.next, &mut self.xb, &mut self.yb);
            std::mem::swap(&mut self.psi, &mut self.next);
            normalize(&mut self.psi);
            Ok(None)
        }
    }
}

/// One first-order quantum-jump step. With probability `p_k = ⟨c_k†c_k⟩dt`
/// the state jumps to `c_kψ/‖c_kψ‖`, otherwise it evolves under the
/// non-Hermitian propagator and is renormalised.
pub fn step<R: Rng>(
    psi: &StateVector,
    propagator: &Propagator,
    jumps: &JumpSet,
    rng: &mut R,
) -> Result<(StateVector, Option<usize>)> {
    if psi.len() != propagator.dim() {
        return Err(Error::DimensionMismatch {
            expected: propagator.dim(),
            got: psi.len(),
        });
    }
    let mut s = Stepper::new(propagator, jumps, psi.as_slice());
    let j = s.advance(rng)?;
    Ok((StateVector::from_vec(s.psi), j.map(|j| j.channel)))
}

/// Per-step jump probabilities `p_k = ⟨ψ|c_k†c_k|ψ⟩ dt`.
pub fn jump_probabilities(psi: &StateVector, jumps: &JumpSet, dt: f64) -> Vec<f64> {
    let mut scratch = vec![ZERO; psi.len()];
    let mut r = vec![0.0; jumps.len()];
    jumps.rates(psi.as_slice(), &mut scratch, &mut r);
    r.into_iter().map(|x| x * dt).collect()
}

/// Seeded generator for trajectory `index`: one ChaCha stream per trajectory.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// A validated run: steady state checked, `dt` adapted, propagator built.
#[derive(Clone, Debug)]
pub struct PreparedRun {
    pub config: RunConfig,
    pub propagator: Propagator,
    pub jumps: JumpSet,
    pub recorded: Vec<usize>,
    /// Steady-state `Tr(c_k†c_k ρ)` per channel.
    pub steady_rates: Vec<f64>,
    source_diag: Vec<f64>,
    detector_diags: Vec<Vec<f64>>,
}

impl PreparedRun {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let sys = CascadeSystem::new(&cfg.cascade)?;
        let report = sys.truncation();
        if let Some((i, &o)) = report
            .occupancies
            .iter()
            .enumerate()
            .find(|(_, &o)| o >= report.tolerance)
        {
            return Err(Error::TruncationTooSmall {
                detector: i,
                occupancy: o,
            });
        }
        let steady_rates: Vec<f64> = sys.channel_rates()?.into_iter().map(|(_, r)| r).collect();
        let peak = steady_rates.iter().cloned().fold(0.0, f64::max);
        let mut config = cfg.clone();
        while peak * config.dt > MAX_STEP_PROBABILITY {
            config.dt /= 2.0;
        }
        let jumps = JumpSet::new(&cfg.cascade)?;
        let recorded = config
            .recorded_labels()
            .iter()
            .filter_map(|l| jumps.labels.iter().position(|c| c == l))
            .collect();
        let h = effective_hamiltonian(&cfg.cascade)?;
        let propagator = Propagator::new(&h, config.dt)?;
        let ops = CascadeOperators::new(&cfg.cascade)?;
        let diag = |op: &Operator| -> Vec<f64> {
            let n = op.number();
            (0..n.dim()).map(|i| n.matrix()[(i, i)].re).collect()
        };
        Ok(Self {
            source_diag: diag(&ops.sigma),
            detector_diags: ops.xis.iter().map(diag).collect(),
            config,
            propagator,
            jumps,
            recorded,
            steady_rates,
        })
    }

    /// Effective timestep after adaptation.
    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    fn run_id(&self) -> String {
        format!("{:016x}", self.config.seed)
    }

    /// Trajectory `index` of this run.
    pub fn trajectory(&self, index: usize) -> Result<ClickStream> {
        let cfg = &self.config;
        let dt = cfg.dt;
        let mut rng = trajectory_rng(cfg.seed, index);
        let d = self.propagator.dim();
        let mut psi0 = vec![ZERO; d];
        psi0[0] = ONE;
        let mut st = Stepper::new(&self.propagator, &self.jumps, &psi0);

        let transient_steps = (cfg.transient_time() / dt).round() as u64;
        for _ in 0..transient_steps {
            st.advance(&mut rng)?;
        }

        let max_steps = cfg.duration.map(|t| (t / dt).round() as u64);
        let target = cfg.target_clicks;
        let mut is_recorded = vec![false; self.jumps.len()];
        for &k in &self.recorded {
            is_recorded[k] = true;
        }
        let mut records = Vec::with_capacity(target.unwrap_or(0));
        let mut stats = TrajectoryStats {
            jumps: vec![0; self.jumps.len()],
            mean_detector_populations: vec![0.0; self.detector_diags.len()],
            ..Default::default()
        };
        let mut n: u64 = 0;
        loop {
            if max_steps.is_some_and(|m| n >= m) || target.is_some_and(|t| records.len() >= t) {
                break;
            }
            stats.mean_source_population += diag_expect(&self.source_diag, &st.psi);
            for (acc, dg) in stats
                .mean_detector_populations
                .iter_mut()
                .zip(&self.detector_diags)
            {
                *acc += diag_expect(dg, &st.psi);
            }
            if let Some(j) = st.advance(&mut rng)? {
                stats.jumps[j.channel] += 1;
                if is_recorded[j.channel] {
                    records.push(ClickRecord {
                        time: (n as f64 + j.fraction) * dt,
                        channel: j.channel,
                    });
                }
            }
            n += 1;
        }
        stats.steps = n;
        if n > 0 {
            stats.mean_source_population /= n as f64;
            for x in &mut stats.mean_detector_populations {
                *x /= n as f64;
            }
        }
        Ok(ClickStream {
            run_id: self.run_id(),
            seed: cfg.seed,
            trajectory: index,
            dt,
            duration: n as f64 * dt,
            channels: self.jumps.labels.clone(),
            records,
            stats: Some(stats),
            config: Some(cfg.clone()),
        })
    }
}

fn diag_expect(diag: &[f64], psi: &[C64]) -> f64 {
    diag.iter().zip(psi).map(|(d, z)| d * z.norm_sqr()).sum()
}

/// Single trajectory (index 0) of `cfg`.
pub fn run_trajectory(cfg: &RunConfig) -> Result<ClickStream> {
    PreparedRun::new(cfg)?.trajectory(0)
}

/// Streams of an ensemble and their pooled channel rates.
#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub streams: Vec<ClickStream>,
    pub labels: Vec<String>,
    /// Jumps per channel summed over trajectories.
    pub jumps: Vec<u64>,
    pub total_time: f64,
    /// Pooled rate and Poisson standard error per channel.
    pub rates: Vec<(f64, f64)>,
    pub mean_source_population: f64,
}

/// Independent trajectories `0..n_traj` run in parallel; trajectory `i`
/// draws from stream `i` of the seeded generator.
pub fn run_ensemble(cfg: &RunConfig, n_traj: usize) -> Result<EnsembleResult> {
    if n_traj == 0 {
        return Err(Error::InvalidConfig(
            "ensemble needs at least one trajectory".into(),
        ));
    }
    let prep = PreparedRun::new(cfg)?;
    let streams = (0..n_traj)
        .into_par_iter()
        .map(|i| prep.trajectory(i))
        .collect::<Result<Vec<_>>>()?;
    let labels = prep.jumps.labels.clone();
    let mut jumps = vec![0u64; labels.len()];
    let mut total_time = 0.0;
    let mut pop = 0.0;
    for s in &streams {
        total_time += s.duration;
        if let Some(st) = &s.stats {
            for (a, b) in jumps.iter_mut().zip(&st.jumps) {
                *a += b;
            }
            pop += st.mean_source_population * s.duration;
        }
    }
    let rates = jumps
        .iter()
        .map(|&j| {
            if total_time > 0.0 {
                (j as f64 / total_time, (j as f64).sqrt() / total_time)
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    Ok(EnsembleResult {
        streams,
        labels,
        jumps,
        total_time,
        rates,
        mean_source_population: if total_time > 0.0 { pop / total_time } else { 0.0 },
    })
}

/// Ensemble average of a diagonal observable at fixed times, starting every
/// trajectory from the ground state with no transient discarded.
pub fn ensemble_average(
    cascade: &CascadeConfig,
    dt: f64,
    observable: &Operator,
    times: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let prop = Propagator::new(&effective_hamiltonian(cascade)?, dt)?;
    let jumps = JumpSet::new(cascade)?;
    let d = prop.dim();
    let obs = observable.matrix();
    let sample_steps: Vec<u64> = times.iter().map(|t| (t / dt).round() as u64).collect();
    let per_traj = (0..n_traj)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut rng = trajectory_rng(seed, i);
            let mut psi0 = vec![ZERO; d];
            psi0[0] = ONE;
            let mut st = Stepper::new(&prop, &jumps, &psi0);
            let mut out = Vec::with_capacity(times.len());
            let mut n = 0u64;
            for &target in &sample_steps {
                while n < target {
                    st.advance(&mut rng)?;
                    n += 1;
                }
                let v = StateVector::from_column_slice(&st.psi);
                out.push((v.adjoint() * obs * &v)[(0, 0)].re);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut avg = vec![0.0; times.len()];
    for v in &per_traj {
        for (a, x) in avg.iter_mut().zip(v) {
            *a += x / n_traj as f64;
        }
    }
    Ok(avg)
}

/// Homogeneous Poisson stream on a single `source` channel.
pub fn generate_poisson_stream(rate: f64, duration: f64, seed: u64) -> Result<ClickStream> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "rate must be non-negative, got {rate}"
        )));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    let mut s = ClickStream::empty(format!("poisson-{seed:016x}"), duration);
    s.seed = seed;
    s.channels = vec!["source".into()];
    if rate == 0.0 {
        return Ok(s);
    }
    let exp = Exp::new(rate).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = trajectory_rng(seed, 0);
    let mut t = exp.sample(&mut rng);
    while t <= duration {
        s.records.push(ClickRecord { time: t, channel: 0 });
        t += exp.sample(&mut rng);
    }
    Ok(s)
}
