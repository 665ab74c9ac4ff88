//! Exact master-equation references: steady states, propagation,
//! quantum-regression correlators, sensor correlators and closed forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    unvectorize, vectorize, Matrix, Operator, SpaceLayout, SparseGenerator, StateVector, Superoperator, C64,
    ONE, ZERO,
};
use crate::models::{
    build_cascaded_liouvillian, build_sensor_liouvillian, collapse_operators, CascadeConfig,
    CascadeOperators, DetectorConfig, SensorConfig, SourceConfig, MAX_HILBERT_DIM,
};

/// Smallest pivot ratio of the bordered Liouvillian accepted as regular.
const MIN_RCOND: f64 = 1e-13;
/// Populations at or below this are treated as an empty mode.
pub const MIN_POPULATION: f64 = 1e-14;
/// Default top-level occupancy threshold of the truncation check.
pub const TRUNCATION_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    layout: SpaceLayout,
    matrix: Matrix,
}

impl DensityMatrix {
    /// Wraps a matrix after checking Hermiticity, unit trace and positivity.
    pub fn new(layout: SpaceLayout, matrix: Matrix) -> Result<Self> {
        let rho = Self { layout, matrix };
        if rho.matrix.nrows() != rho.layout.dim() || rho.matrix.ncols() != rho.layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: rho.layout.dim(),
                got: rho.matrix.nrows(),
            });
        }
        rho.check_invariants()?;
        Ok(rho)
    }

    /// Pure state `|k⟩⟨k|`.
    pub fn basis_state(layout: &SpaceLayout, k: usize) -> Self {
        let d = layout.dim();
        let mut m = Matrix::zeros(d, d);
        m[(k, k)] = ONE;
        Self {
            layout: layout.clone(),
            matrix: m,
        }
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.diagonal().iter().sum()
    }

    /// `Tr(A ρ)`.
    pub fn expect(&self, op: &Operator) -> C64 {
        op.trace_with(&self.matrix)
    }

    /// Most negative eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::from(0.5);
        h.symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let herm = (&self.matrix - self.matrix.adjoint()).camax();
        if herm > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "density matrix not Hermitian (deviation {herm:.2e})"
            )));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "density matrix trace {tr} differs from 1"
            )));
        }
        let lmin = self.min_eigenvalue();
        if lmin < -1e-10 {
            return Err(Error::InvalidConfig(format!(
                "density matrix has negative eigenvalue {lmin:.2e}"
            )));
        }
        Ok(())
    }

    /// Reduced density matrix of one tensor factor.
    pub fn partial_trace(&self, keep: usize) -> Matrix {
        let dims = self.layout.factor_dims();
        let dk = dims[keep];
        let d = self.layout.dim();
        let mut out = Matrix::zeros(dk, dk);
        for i in 0..d {
            let di = self.layout.digits(i);
            for j in 0..d {
                let dj = self.layout.digits(j);
                let same_rest = di
                    .iter()
                    .zip(&dj)
                    .enumerate()
                    .all(|(f, (a, b))| f == keep || a == b);
                if same_rest {
                    out[(di[keep], dj[keep])] += self.matrix[(i, j)];
                }
            }
        }
        out
    }

    /// Marginal occupation probabilities of one tensor factor.
    pub fn factor_populations(&self, factor: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.factor_dims()[factor]];
        for i in 0..self.layout.dim() {
            out[self.layout.digits(i)[factor]] += self.matrix[(i, i)].re;
        }
        out
    }
}

fn hermitize(m: &Matrix) -> Matrix {
    (m + m.adjoint()) * C64::from(0.5)
}

/// Solves `L̃ x = e₀` where row 0 of `L̃` is replaced by `norm_row`.
///
/// The dense factorisation dominates the cost of every steady state, so it
/// goes through faer's blocked LU rather than nalgebra's unblocked one.
fn bordered_null_vector(l: &Matrix, norm_row: &[C64]) -> Result<StateVector> {
    use faer::complex_native::c64;
    use faer::prelude::SpSolver;
    let n = l.nrows();
    let to = |z: C64| c64::new(z.re, z.im);
    let m = faer::Mat::<c64>::from_fn(n, n, |i, j| if i == 0 { to(norm_row[j]) } else { to(l[(i, j)]) });
    let lu = m.partial_piv_lu();
    let u = lu.compute_u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let p = u.read(i, i).abs();
        lo = lo.min(p);
        hi = hi.max(p);
    }
    let rcond = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(rcond > MIN_RCOND) {
        return Err(Error::NonUniqueSteadyState { rcond });
    }
    let mut rhs = faer::Mat::<c64>::zeros(n, 1);
    rhs.write(0, 0, c64::new(1.0, 0.0));
    let x = lu.solve(&rhs);
    let x = StateVector::from_fn(n, |i, _| {
        let z = x.read(i, 0);
        C64::new(z.re, z.im)
    });
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("steady-state solution"));
    }
    Ok(x)
}

/// Unique fixed point of `L`, by replacing one row with the trace condition.
pub fn steady_state(l: &Superoperator) -> Result<DensityMatrix> {
    let d = l.hilbert_dim();
    let norm_row: Vec<C64> = (0..d * d)
        .map(|k| if k % (d + 1) == 0 { ONE } else { ZERO })
        .collect();
    let x = bordered_null_vector(l.matrix(), &norm_row)?;
    let mut rho = hermitize(&unvectorize(&x, d));
    let tr: C64 = rho.diagonal().iter().sum();
    rho /= tr;
    let residual = l.apply(&rho).camax();
    let scale = l.matrix().camax().max(1.0);
    if residual > 1e-10 * scale {
        return Err(Error::NonUniqueSteadyState { rcond: residual });
    }
    DensityMatrix::new(l.layout().clone(), rho)
}

/// Steady state of `L` in the rescaled basis `ρ_ij = s_i s_j ρ̃_ij`.
///
/// Used when some matrix elements are many orders of magnitude smaller than
/// others (a weakly coupled sensor), so that all unknowns of the linear
/// system are of order one. Returns `ρ̃`, normalised so that `Tr ρ = 1`.
pub fn steady_state_scaled(l: &Superoperator, s: &[f64]) -> Result<Matrix> {
    let d = l.hilbert_dim();
    if s.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: s.len(),
        });
    }
    let w: Vec<f64> = (0..d * d).map(|k| s[k % d] * s[k / d]).collect();
    let lm = l.matrix();
    let scaled = Matrix::from_fn(d * d, d * d, |a, b| lm[(a, b)] * (w[b] / w[a]));
    let norm_row: Vec<C64> = (0..d * d)
        .map(|k| if k % (d + 1) == 0 { C64::from(w[k]) } else { ZERO })
        .collect();
    let x = bordered_null_vector(&scaled, &norm_row)?;
    Ok(hermitize(&unvectorize(&x, d)))
}

/// `e^{L t} ρ₀`.
pub fn propagate(l: &Superoperator, rho0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    if !(t >= 0.0) {
        return Err(Error::InvalidConfig(format!("propagation time {t} must be >= 0")));
    }
    if rho0.layout() != l.layout() {
        return Err(Error::DimensionMismatch {
            expected: l.hilbert_dim(),
            got: rho0.layout().dim(),
        });
    }
    let gen = SparseGenerator::from_dense(l.matrix());
    let v = gen.exp_action(t, &vectorize(rho0.matrix()))?;
    Ok(DensityMatrix {
        layout: rho0.layout.clone(),
        matrix: hermitize(&unvectorize(&v, l.hilbert_dim())),
    })
}

/// Sampled normalised correlation function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
    /// Window central frequencies, one per detector involved.
    #[serde(default)]
    pub windows: Vec<f64>,
    /// Window linewidths, one per detector involved.
    #[serde(default)]
    pub gammas: Vec<f64>,
}

impl CorrelationCurve {
    /// Value at the grid point nearest to `tau`.
    pub fn at(&self, tau: f64) -> f64 {
        let i = self
            .tau
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - tau).abs().total_cmp(&(b.1 - tau).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.values[i]
    }

    /// Smallest `τ ≥ 0` past which `|g² − 1|` stays below half its value at
    /// `τ = 0`; `None` if it never does on the grid.
    pub fn half_width(&self) -> Option<f64> {
        let mut pts: Vec<(f64, f64)> = self
            .tau
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= 0.0)
            .map(|(t, v)| (*t, (v - 1.0).abs()))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let d0 = pts.first()?.1;
        let last_above = pts.iter().rposition(|p| p.1 > 0.5 * d0)?;
        pts.get(last_above + 1).map(|p| p.0)
    }
}

/// Trace functional `ρ ↦ Tr(A ρ)` on vectorised density matrices.
fn trace_functional(a: &Matrix) -> Vec<C64> {
    vectorize(&a.transpose()).as_slice().to_vec()
}

fn dot(u: &[C64], v: &StateVector) -> C64 {
    u.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

/// `Tr[B e^{L τ}(A ρ A†)]` on a grid of `τ ≥ 0`, in the grid's order.
fn regression_values(
    gen: &SparseGenerator,
    start: &Matrix,
    observable: &[C64],
    taus: &[f64],
) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
    let mut out = vec![0.0; taus.len()];
    let mut v = vectorize(start);
    let mut t = 0.0;
    for i in order {
        let dt = taus[i] - t;
        if dt > 0.0 {
            v = gen.exp_action(dt, &v)?;
            t = taus[i];
        }
        out[i] = dot(observable, &v).re;
    }
    Ok(out)
}

fn population(rho: &DensityMatrix, xi: &Operator) -> Result<f64> {
    let n = rho.expect(&xi.number()).re;
    if !(n > MIN_POPULATION) {
        return Err(Error::UndefinedCorrelation { population: n });
    }
    Ok(n)
}

fn check_grid(tau_grid: &[f64]) -> Result<()> {
    if tau_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidConfig("non-finite delay in grid".into()));
    }
    Ok(())
}

/// `g²(τ) = Tr[ξ†ξ e^{L|τ|}(ξρξ†)] / ⟨ξ†ξ⟩²`; the autocorrelation of a
/// stationary signal is even, so negative delays are folded.
pub fn g2_regression(
    l: &Superoperator,
    xi: &Operator,
    rho_ss: &DensityMatrix,
    tau_grid: &[f64],
) -> Result<CorrelationCurve> {
    check_grid(tau_grid)?;
    let n = population(rho_ss, xi)?;
    let gen = SparseGenerator::from_dense(l.matrix());
    let start = xi.matrix() * rho_ss.matrix() * xi.matrix().adjoint();
    let obs = trace_functional(xi.number().matrix());
    let abs: Vec<f64> = tau_grid.iter().map(|t| t.abs()).collect();
    let raw = regression_values(&gen, &start, &obs, &abs)?;
    Ok(CorrelationCurve {
        tau: tau_grid.to_vec(),
        values: raw.into_iter().map(|x| x / (n * n)).collect(),
        windows: vec![],
        gammas: vec![],
    })
}

/// Cross-correlation with `τ = t₂ − t₁`, the delay of the `ξ₂` detection
/// after the `ξ₁` detection. Negative delays swap the roles of the two
/// operators; no symmetry is assumed.
pub fn cross_g2_regression(
    l: &Superoperator,
    xi1: &Operator,
    xi2: &Operator,
    rho_ss: &DensityMatrix,
    tau_grid: &[f64],
) -> Result<CorrelationCurve> {
    check_grid(tau_grid)?;
    let n1 = population(rho_ss, xi1)?;
    let n2 = population(rho_ss, xi2)?;
    let gen = SparseGenerator::from_dense(l.matrix());
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..tau_grid.len()).partition(|&i| tau_grid[i] >= 0.0);
    let mut values = vec![0.0; tau_grid.len()];
    for (idx, first, second) in [(&pos, xi1, xi2), (&neg, xi2, xi1)] {
        if idx.is_empty() {
            continue;
        }
        let start = first.matrix() * rho_ss.matrix() * first.matrix().adjoint();
        let obs = trace_functional(second.number().matrix());
        let taus: Vec<f64> = idx.iter().map(|&i| tau_grid[i].abs()).collect();
        let raw = regression_values(&gen, &start, &obs, &taus)?;
        for (&i, r) in idx.iter().zip(raw) {
            values[i] = r / (n1 * n2);
        }
    }
    Ok(CorrelationCurve {
        tau: tau_grid.to_vec(),
        values,
        windows: vec![],
        gammas: vec![],
    })
}

/// `g²(τ) = 1 − exp[−(γ + P)τ]` of the unfiltered incoherently pumped emitter.
pub fn closed_form_g2_incoherent(tau: f64, gamma: f64, pump: f64) -> f64 {
    1.0 - (-(gamma + pump) * tau.abs()).exp()
}

/// Detector population under incoherent pumping,
/// `P(P+Γ+γ) / [(P+γ)((P+Γ+γ)² + Δ²)]`, the reference formula (it carries the
/// emitter-rate normalisation `γ = 1`).
pub fn closed_form_population_incoherent(pump: f64, gamma: f64, big_gamma: f64, delta: f64) -> f64 {
    let s = pump + big_gamma + gamma;
    pump * s / ((pump + gamma) * (s * s + delta * delta))
}

/// Detector population under coherent drive, the rational function in
/// `γ_ij = iΓ + jγ`, the reference formula term by term.
pub fn closed_form_population_coherent(omega: f64, gamma: f64, big_gamma: f64, delta: f64) -> f64 {
    let g = |i: f64, j: f64| i * big_gamma + j * gamma;
    let (g10, g01, g11, g12, g32) = (g(1., 0.), g(0., 1.), g(1., 1.), g(1., 2.), g(3., 2.));
    let (o2, d2) = (omega * omega, delta * delta);
    let (o4, d4) = (o2 * o2, d2 * d2);
    let num = 2.0
        * g01
        * o2
        * (g10 * (g11 * g11 + 4.0 * d2).powi(2) * (g12 * g12 + 4.0 * d2)
            + 4.0
                * o2
                * (g10 * g11 * g11 * g12 * g32
                    + 4.0
                        * (2.0 * g10.powi(3)
                            + 16.0 * g10 * g10 * g01
                            + 23.0 * g10 * g01 * g01
                            + 8.0 * g01.powi(3))
                        * d2
                    - 16.0 * (g10 - 2.0 * g01) * d4)
            + 32.0 * g11 * (g10 * g10 + 4.0 * d2) * o4);
    let brace = g10.powi(4)
        + 6.0 * g10.powi(3) * g01
        + 12.0 * g10 * g01 * (g01 * g01 + 2.0 * d2 + 4.0 * o2)
        + g10 * g10 * (13.0 * g01 * g01 + 8.0 * (d2 + 2.0 * o2))
        + 4.0 * (g01.powi(4) + 4.0 * (d2 - 2.0 * o2).powi(2) + g01 * g01 * (5.0 * d2 + 8.0 * o2));
    let den = (g10 * g10 + 4.0 * d2) * (g11 * g11 + 4.0 * d2) * (g01 * g01 + 4.0 * o2) * brace;
    num / den
}

/// Sensor steady state `ρ̃` in the basis rescaled by `|ε|^m`, and the weight
/// `|ε|` used. The layout is emitter ⊗ sensor.
fn sensor_scaled_state(src: &SourceConfig, sen: &SensorConfig) -> Result<Matrix> {
    let l = build_sensor_liouvillian(src, sen)?;
    let m = sen.truncation + 1;
    let s: Vec<f64> = (0..2 * m).map(|i| sen.epsilon.powi((i % m) as i32)).collect();
    steady_state_scaled(&l, &s)
}

/// `r_k = Σ_m m!/(m−k)! |ε|^{2(m−k)} ρ̃_mm`, so that `⟨ξ†ᵏξᵏ⟩ = |ε|^{2k} r_k`.
fn sensor_reduced_moments(rho: &Matrix, sen: &SensorConfig) -> Vec<f64> {
    let m = sen.truncation + 1;
    let e2 = sen.epsilon * sen.epsilon;
    let mut diag = vec![0.0; m];
    for i in 0..2 * m {
        diag[i % m] += rho[(i, i)].re;
    }
    (1..m)
        .map(|k| {
            (k..m)
                .map(|n| falling(n, k) * e2.powi((n - k) as i32) * diag[n])
                .sum()
        })
        .collect()
}

fn falling(n: usize, k: usize) -> f64 {
    ((n - k + 1)..=n).map(|x| x as f64).product()
}

/// Unnormalised sensor moments `⟨ξ†ᵏξᵏ⟩` for `k = 1..=truncation`.
pub fn sensor_moments(src: &SourceConfig, sen: &SensorConfig) -> Result<Vec<f64>> {
    let rho = sensor_scaled_state(src, sen)?;
    let e2 = sen.epsilon * sen.epsilon;
    Ok(sensor_reduced_moments(&rho, sen)
        .into_iter()
        .enumerate()
        .map(|(i, r)| r * e2.powi(i as i32 + 1))
        .collect())
}

fn sensor_gn(src: &SourceConfig, sen: &SensorConfig, n: usize) -> Result<f64> {
    let r = sensor_reduced_moments(&sensor_scaled_state(src, sen)?, sen);
    if !(r[0] > 0.0) {
        return Err(Error::UndefinedCorrelation { population: r[0] });
    }
    Ok(r[n - 1] / r[0].powi(n as i32))
}

/// `g⁽ⁿ⁾(0) = ⟨ξ†ⁿξⁿ⟩/⟨ξ†ξ⟩ⁿ` of a weakly coupled sensor, cross-checked
/// against the same quantity at a ten times weaker coupling.
pub fn sensor_correlator(src: &SourceConfig, sen: &SensorConfig, n: usize) -> Result<f64> {
    if n < 1 || sen.truncation < n {
        return Err(Error::InvalidTruncation {
            min: n.max(1),
            got: sen.truncation,
        });
    }
    let coarse = sensor_gn(src, sen, n)?;
    let finer = SensorConfig {
        epsilon: sen.epsilon / 10.0,
        ..*sen
    };
    let fine = sensor_gn(src, &finer, n)?;
    let relative = (coarse - fine).abs() / fine.abs().max(f64::MIN_POSITIVE);
    if relative > 1e-3 {
        return Err(Error::EpsilonTooLarge {
            coarse,
            fine,
            relative,
        });
    }
    Ok(coarse)
}

/// Top-Fock-level occupancy of each detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub occupancies: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn truncation_check(cfg: &CascadeConfig, rho_ss: &DensityMatrix) -> TruncationReport {
    truncation_check_with(cfg, rho_ss, TRUNCATION_TOLERANCE)
}

pub fn truncation_check_with(
    cfg: &CascadeConfig,
    rho_ss: &DensityMatrix,
    tolerance: f64,
) -> TruncationReport {
    let occupancies: Vec<f64> = cfg
        .detectors
        .iter()
        .enumerate()
        .map(|(i, d)| rho_ss.factor_populations(i + 1)[d.n_max])
        .collect();
    let pass = occupancies.iter().all(|&o| o < tolerance);
    TruncationReport {
        occupancies,
        tolerance,
        pass,
    }
}

/// A cascade configuration with its operators, Liouvillian and steady state.
#[derive(Clone, Debug)]
pub struct CascadeSystem {
    pub cfg: CascadeConfig,
    pub ops: CascadeOperators,
    pub liouvillian: Superoperator,
    pub rho: DensityMatrix,
}

impl CascadeSystem {
    pub fn new(cfg: &CascadeConfig) -> Result<Self> {
        let ops = CascadeOperators::new(cfg)?;
        let liouvillian = build_cascaded_liouvillian(cfg)?;
        let rho = steady_state(&liouvillian)?;
        Ok(Self {
            cfg: cfg.clone(),
            ops,
            liouvillian,
            rho,
        })
    }

    /// Raises detector truncations until each top-level occupancy is below
    /// `tolerance`, starting from the truncations in `cfg`.
    pub fn converged(cfg: &CascadeConfig, tolerance: f64) -> Result<Self> {
        let mut cfg = cfg.clone();
        loop {
            let sys = Self::new(&cfg)?;
            let report = truncation_check_with(&cfg, &sys.rho, tolerance);
            if report.pass {
                return Ok(sys);
            }
            let worst = report
                .occupancies
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let pops = sys.rho.factor_populations(worst + 1);
            let n = cfg.detectors[worst].n_max;
            let ratio = pops[n] / pops[n - 1];
            let extra = if n >= 2 && ratio > 0.0 && ratio < 0.9 {
                ((tolerance / pops[n]).ln() / ratio.ln()).ceil().clamp(1.0, 8.0) as usize
            } else {
                1
            };
            cfg.detectors[worst].n_max += extra;
            if cfg.hilbert_dim() > MAX_HILBERT_DIM {
                return Err(Error::TruncationTooSmall {
                    detector: worst,
                    occupancy: report.occupancies[worst],
                });
            }
        }
    }

    pub fn truncation(&self) -> TruncationReport {
        truncation_check(&self.cfg, &self.rho)
    }

    pub fn source_population(&self) -> f64 {
        self.rho.expect(&self.ops.sigma.number()).re
    }

    pub fn detector_population(&self, i: usize) -> f64 {
        self.rho.expect(&self.ops.xis[i].number()).re
    }

    /// Factorial moments `⟨ξ†ᵏξᵏ⟩`, `k = 1..=order`.
    pub fn detector_moments(&self, i: usize, order: usize) -> Vec<f64> {
        let pops = self.rho.factor_populations(i + 1);
        (1..=order)
            .map(|k| {
                pops.iter()
                    .enumerate()
                    .filter(|(n, _)| *n >= k)
                    .map(|(n, p)| falling(n, k) * p)
                    .sum()
            })
            .collect()
    }

    /// Normalised equal-time correlation `⟨ξ†ⁿξⁿ⟩/⟨ξ†ξ⟩ⁿ`.
    pub fn gn_zero(&self, i: usize, n: usize) -> Result<f64> {
        let m = self.detector_moments(i, n.max(1));
        if !(m[0] > MIN_POPULATION) {
            return Err(Error::UndefinedCorrelation { population: m[0] });
        }
        Ok(m[n - 1] / m[0].powi(n as i32))
    }

    pub fn g2(&self, i: usize, tau_grid: &[f64]) -> Result<CorrelationCurve> {
        let mut c = g2_regression(&self.liouvillian, &self.ops.xis[i], &self.rho, tau_grid)?;
        let d = self.cfg.detectors[i];
        c.windows = vec![d.omega_xi];
        c.gammas = vec![d.gamma];
        Ok(c)
    }

    /// Unfiltered emitter autocorrelation.
    pub fn source_g2(&self, tau_grid: &[f64]) -> Result<CorrelationCurve> {
        g2_regression(&self.liouvillian, &self.ops.sigma, &self.rho, tau_grid)
    }

    /// Cross-correlation of detector 0 (first click) and detector 1.
    pub fn cross_g2(&self, tau_grid: &[f64]) -> Result<CorrelationCurve> {
        if self.ops.xis.len() != 2 {
            return Err(Error::InvalidConfig(
                "cross-correlation needs two detectors".into(),
            ));
        }
        let mut c = cross_g2_regression(
            &self.liouvillian,
            &self.ops.xis[0],
            &self.ops.xis[1],
            &self.rho,
            tau_grid,
        )?;
        c.windows = self.cfg.detectors.iter().map(|d| d.omega_xi).collect();
        c.gammas = self.cfg.detectors.iter().map(|d| d.gamma).collect();
        Ok(c)
    }

    /// Mean click rate `Tr(c_k†c_k ρ)` of every collapse channel.
    pub fn channel_rates(&self) -> Result<Vec<(String, f64)>> {
        Ok(collapse_operators(&self.cfg)?
            .into_iter()
            .map(|c| {
                let r = self.rho.expect(&c.op.number()).re;
                (c.label, r)
            })
            .collect())
    }
}

/// Single fully coupled detector (`α = 1`) on `src`.
pub fn ideal_detector(src: &SourceConfig, omega_xi: f64, gamma: f64) -> CascadeConfig {
    CascadeConfig::single(*src, DetectorConfig::new(omega_xi, gamma, 2)).with_chi([0.0; 4])
}

/// Filtered population `⟨ξ†ξ⟩` of a fully coupled detector at each
/// frequency, with the truncation raised until it no longer matters.
pub fn spectrum_scan(src: &SourceConfig, gamma: f64, omega_grid: &[f64]) -> Result<Vec<f64>> {
    omega_grid
        .iter()
        .map(|&w| {
            let sys = CascadeSystem::converged(&ideal_detector(src, w, gamma), 1e-10)?;
            Ok(sys.detector_population(0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::annihilation_tls;
    use crate::models::build_source_liouvillian;
    use approx::assert_relative_eq;

    fn tls_population(src: &SourceConfig) -> f64 {
        let rho = steady_state(&build_source_liouvillian(src).unwrap()).unwrap();
        rho.matrix()[(1, 1)].re
    }

    fn grid(n: usize, step: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * step).collect()
    }

    #[test]
    fn tls_steady_states() {
        assert_eq!(tls_population(&SourceConfig::coherent(0.0, 0.0)), 0.0);
        assert_relative_eq!(
            tls_population(&SourceConfig::incoherent(2.0)),
            2.0 / 3.0,
            epsilon = 1e-13
        );
        assert_relative_eq!(
            tls_population(&SourceConfig::incoherent(100.0)),
            100.0 / 101.0,
            epsilon = 1e-13
        );
        // driven two-level system: 4Ω²/(γ² + 8Ω² + 4Δ²)
        let (om, de) = (1.3, 0.7);
        assert_relative_eq!(
            tls_population(&SourceConfig::coherent(om, de)),
            4.0 * om * om / (1.0 + 8.0 * om * om + 4.0 * de * de),
            epsilon = 1e-12
        );
    }

    #[test]
    fn non_unique_steady_state_detected() {
        let s = annihilation_tls();
        let l = Superoperator::hamiltonian(&s.number());
        assert!(matches!(
            steady_state(&l),
            Err(Error::NonUniqueSteadyState { .. })
        ));
    }

    #[test]
    fn propagation_limits() {
        let src = SourceConfig::incoherent(0.0);
        let l = build_source_liouvillian(&src).unwrap();
        let layout = l.layout().clone();
        let excited = DensityMatrix::basis_state(&layout, 1);
        assert_eq!(propagate(&l, &excited, 0.0).unwrap(), excited);
        for t in [0.1, 1.0, 3.0] {
            let rho = propagate(&l, &excited, t).unwrap();
            assert_relative_eq!(rho.matrix()[(1, 1)].re, (-t).exp(), epsilon = 1e-12);
            assert!((rho.trace() - ONE).norm() < 1e-10);
        }
        let drive = build_source_liouvillian(&SourceConfig::coherent(2.0, 0.5)).unwrap();
        let ss = steady_state(&drive).unwrap();
        let late = propagate(&drive, &DensityMatrix::basis_state(&layout, 0), 40.0).unwrap();
        assert!((late.matrix() - ss.matrix()).camax() < 1e-8);
        assert!(propagate(&drive, &ss, -1.0).is_err());
    }

    #[test]
    fn unfiltered_regression_matches_closed_form() {
        let taus = grid(400, 0.0125);
        for p in [0.1, 2.0, 100.0] {
            let sys = CascadeSystem::new(&CascadeConfig::unfiltered(SourceConfig::incoherent(p))).unwrap();
            let c = sys.source_g2(&taus).unwrap();
            assert_eq!(c.values[0], 0.0);
            for (t, v) in c.tau.iter().zip(&c.values) {
                assert!(
                    (v - closed_form_g2_incoherent(*t, 1.0, p)).abs() < 1e-8,
                    "P={p} τ={t}"
                );
            }
        }
    }

    #[test]
    fn closed_form_eq10_values() {
        assert_eq!(closed_form_g2_incoherent(0.0, 1.0, 2.0), 0.0);
        assert_relative_eq!(
            closed_form_g2_incoherent(2f64.ln() / 3.0, 1.0, 2.0),
            0.5,
            epsilon = 1e-15
        );
        assert_relative_eq!(closed_form_g2_incoherent(1e3, 1.0, 2.0), 1.0);
    }

    #[test]
    fn wide_filter_keeps_antibunching() {
        let cfg = ideal_detector(&SourceConfig::incoherent(2.0), 0.0, 100.0);
        let sys = CascadeSystem::converged(&cfg, 1e-9).unwrap();
        assert!(sys.gn_zero(0, 2).unwrap() < 0.05);
    }

    #[test]
    fn closed_form_population_reference_values() {
        assert_relative_eq!(
            closed_form_population_incoherent(2.0, 1.0, 1.0, 0.0),
            1.0 / 6.0,
            epsilon = 1e-15
        );
        assert_eq!(closed_form_population_incoherent(0.0, 1.0, 1.0, 0.0), 0.0);
        assert!(closed_form_population_incoherent(2.0, 1.0, 1.0, 1e8) < 1e-15);
        assert_eq!(closed_form_population_coherent(0.0, 1.0, 1.0, 0.0), 0.0);
        assert!(closed_form_population_coherent(5.0, 1.0, 1.0, 1e6) < 1e-10);
    }

    // The reference closed forms use a different normalisation than the
    // cascade coupling √(γΓ): the solver population is four times larger,
    // the incoherent form counts detuning twice and the coherent one reads
    // its drive as √2 Ω.
    #[test]
    fn closed_forms_match_solver_up_to_convention() {
        for big_gamma in [0.5, 1.0, 4.0] {
            for delta in [0.0, 1.0, 3.0] {
                let inc = SourceConfig::incoherent(2.0);
                let sys = CascadeSystem::converged(&ideal_detector(&inc, delta, big_gamma), 1e-12).unwrap();
                let mapped = 4.0 * closed_form_population_incoherent(2.0, 1.0, big_gamma, 2.0 * delta);
                assert_relative_eq!(sys.detector_population(0), mapped, max_relative = 1e-6);

                let coh = SourceConfig::coherent(5.0, 0.0);
                let sys = CascadeSystem::converged(&ideal_detector(&coh, delta, big_gamma), 1e-12).unwrap();
                let mapped = 4.0 * closed_form_population_coherent(5.0 * 2f64.sqrt(), 1.0, big_gamma, delta);
                assert_relative_eq!(sys.detector_population(0), mapped, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn filtered_incoherent_population_oracle() {
        // Lorentzian filter of the emitter's exponential first-order correlation:
        // ⟨ξ†ξ⟩ = 4γ n_σ (γ+P+Γ) / ((γ+P+Γ)² + 4Δ²)
        let (p, big_gamma, delta) = (2.0, 1.0, 0.0);
        let sys = CascadeSystem::converged(
            &ideal_detector(&SourceConfig::incoherent(p), delta, big_gamma),
            1e-12,
        )
        .unwrap();
        let n_sigma = p / (p + 1.0);
        let w = 1.0 + p + big_gamma;
        let oracle = 4.0 * n_sigma * w / (w * w + 4.0 * delta * delta);
        assert_relative_eq!(sys.detector_population(0), oracle, max_relative = 1e-8);
        assert_relative_eq!(oracle, 2.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn truncation_check_behaviour() {
        let src = SourceConfig::incoherent(2.0);
        let bunched = CascadeConfig::single(src, DetectorConfig::new(0.0, 0.2, 1)).with_chi([0.0; 4]);
        let sys = CascadeSystem::new(&bunched).unwrap();
        assert!(!sys.truncation().pass);
        let mut last = f64::INFINITY;
        let mut passed = false;
        for n_max in 1..=12 {
            let cfg = CascadeConfig::single(src, DetectorConfig::new(0.0, 0.2, n_max)).with_chi([0.0; 4]);
            let sys = CascadeSystem::new(&cfg).unwrap();
            let r = sys.truncation();
            assert!(r.occupancies[0] < last);
            last = r.occupancies[0];
            assert!(!passed || r.pass, "pass status must be monotone in n_max");
            passed |= r.pass;
        }
        assert!(passed);
        let weak = CascadeConfig::single(src, DetectorConfig::new(0.0, 50.0, 6)).with_chi([0.0; 4]);
        assert!(CascadeSystem::new(&weak).unwrap().truncation().pass);
    }

    #[test]
    fn no_back_action_on_source() {
        for src in [SourceConfig::incoherent(2.0), SourceConfig::coherent(5.0, 1.5)] {
            let alone = steady_state(&build_source_liouvillian(&src).unwrap()).unwrap();
            for (g, chi) in [(0.3, [0.0, 0.0, 0.5, 0.0]), (5.0, [0.0, 0.3, 0.2, 0.0])] {
                let cfg = CascadeConfig::single(src, DetectorConfig::new(1.0, g, 3)).with_chi(chi);
                let sys = CascadeSystem::new(&cfg).unwrap();
                let reduced = sys.rho.partial_trace(0);
                assert!((&reduced - alone.matrix()).camax() < 1e-10);
            }
        }
    }

    #[test]
    fn efficiency_does_not_change_normalised_correlations() {
        let src = SourceConfig::coherent(5.0, 0.0);
        let taus = grid(50, 0.1);
        let mut reference: Option<(f64, Vec<f64>)> = None;
        for chi2 in [0.25, 0.5, 0.75] {
            let cfg =
                CascadeConfig::single(src, DetectorConfig::new(5.0, 2.0, 6)).with_chi([0.0, 0.0, chi2, 0.0]);
            let sys = CascadeSystem::converged(&cfg, 1e-12).unwrap();
            let g0 = sys.gn_zero(0, 2).unwrap();
            let curve = sys.g2(0, &taus).unwrap().values;
            if let Some((r0, rc)) = &reference {
                assert!((g0 - r0).abs() < 1e-8);
                for (a, b) in curve.iter().zip(rc) {
                    assert!((a - b).abs() < 1e-8);
                }
            } else {
                reference = Some((g0, curve));
            }
        }
        let decoupled =
            CascadeConfig::single(src, DetectorConfig::new(5.0, 2.0, 3)).with_chi([0.0, 0.0, 1.0, 0.0]);
        let sys = CascadeSystem::new(&decoupled).unwrap();
        assert!(matches!(
            sys.g2(0, &[0.0]),
            Err(Error::UndefinedCorrelation { .. })
        ));
    }

    #[test]
    fn correlations_wash_out() {
        let taus = [0.0, 40.0];
        for (src, w, g) in [
            (SourceConfig::incoherent(2.0), 0.0, 0.5),
            (SourceConfig::coherent(5.0, 0.0), 10.0, 2.0),
            (SourceConfig::coherent(5.0, 0.0), 5.0, 1.0),
        ] {
            let sys = CascadeSystem::converged(&ideal_detector(&src, w, g), 1e-9).unwrap();
            let c = sys.g2(0, &taus).unwrap();
            assert!((c.values[1] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn cross_correlation_reduces_to_auto_for_identical_windows() {
        let src = SourceConfig::coherent(5.0, 0.0);
        let d = DetectorConfig::new(5.0, 2.0, 3);
        let one = CascadeSystem::new(&CascadeConfig::single(src, d)).unwrap();
        let taus: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
        let auto = g2_regression(&one.liouvillian, &one.ops.xis[0], &one.rho, &taus).unwrap();
        let cross = cross_g2_regression(
            &one.liouvillian,
            &one.ops.xis[0],
            &one.ops.xis[0],
            &one.rho,
            &taus,
        )
        .unwrap();
        for (a, b) in auto.values.iter().zip(&cross.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resonant_sideband_cross_correlation_is_symmetric() {
        let src = SourceConfig::coherent(5.0, 0.0);
        let cfg = CascadeConfig::new(
            src,
            vec![
                DetectorConfig::new(10.0, 2.0, 2),
                DetectorConfig::new(-10.0, 2.0, 2),
            ],
        );
        let sys = CascadeSystem::new(&cfg).unwrap();
        let taus: Vec<f64> = (-30..=30).map(|i| i as f64 * 0.1).collect();
        let c = sys.cross_g2(&taus).unwrap();
        for i in 0..taus.len() {
            let j = taus.len() - 1 - i;
            assert!((c.values[i] - c.values[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn sensor_agrees_with_cascade() {
        let src = SourceConfig::incoherent(2.0);
        for g in [0.1, 1.0, 10.0] {
            let sensor = sensor_correlator(&src, &SensorConfig::new(0.0, g, 2), 2).unwrap();
            let sys = CascadeSystem::converged(&ideal_detector(&src, 0.0, g), 1e-8).unwrap();
            let cascade = sys.gn_zero(0, 2).unwrap();
            assert!(
                (sensor - cascade).abs() / cascade < 1e-3,
                "Γ={g}: {sensor} vs {cascade}"
            );
        }
    }

    #[test]
    fn sensor_population_scales_as_epsilon_squared() {
        let src = SourceConfig::coherent(1.0, 0.0);
        let mut sen = SensorConfig::new(0.5, 1.0, 2);
        let a = sensor_moments(&src, &sen).unwrap()[0];
        sen.epsilon = 1e-4;
        let b = sensor_moments(&src, &sen).unwrap()[0];
        assert_relative_eq!(a / b, 100.0, max_relative = 1e-5);
    }

    #[test]
    fn sensor_phase_is_irrelevant() {
        let src = SourceConfig::coherent(2.0, 0.3);
        let mut sen = SensorConfig::new(1.0, 1.0, 2);
        let a = sensor_correlator(&src, &sen, 2).unwrap();
        sen.theta = 1.1;
        let b = sensor_correlator(&src, &sen, 2).unwrap();
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn sensor_rejects_large_coupling() {
        let src = SourceConfig::incoherent(2.0);
        let mut sen = SensorConfig::new(0.0, 0.5, 2);
        sen.epsilon = 0.3;
        assert!(matches!(
            sensor_correlator(&src, &sen, 2),
            Err(Error::EpsilonTooLarge { .. })
        ));
        assert!(matches!(
            sensor_correlator(&src, &SensorConfig::new(0.0, 0.5, 2), 3),
            Err(Error::InvalidTruncation { .. })
        ));
    }

    #[test]
    fn heitler_resurgence_in_narrow_filter() {
        let src = SourceConfig::coherent(0.05, 0.0);
        let g = sensor_correlator(&src, &SensorConfig::new(0.0, 0.01, 2), 2).unwrap();
        assert!((g - 1.0).abs() < 0.05, "{g}");
    }

    #[test]
    fn mollow_spectrum_has_three_peaks() {
        let src = SourceConfig::coherent(5.0, 0.0);
        let grid: Vec<f64> = (-30..=30).map(|i| i as f64 * 0.5).collect();
        let s = spectrum_scan(&src, 1.0, &grid).unwrap();
        let maxima: Vec<f64> = (1..grid.len() - 1)
            .filter(|&i| s[i] > s[i - 1] && s[i] > s[i + 1])
            .map(|i| grid[i])
            .collect();
        assert_eq!(maxima.len(), 3, "{maxima:?}");
        assert!(maxima
            .iter()
            .zip([-10.0, 0.0, 10.0])
            .all(|(m, e)| (m - e).abs() <= 0.5));
        let zero = spectrum_scan(&SourceConfig::coherent(0.0, 0.0), 1.0, &[0.0, 3.0]).unwrap();
        assert!(zero.iter().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn incoherent_spectrum_is_lorentzian() {
        let src = SourceConfig::incoherent(2.0);
        let grid = [0.0, 1.0, 2.5, 6.0];
        let s = spectrum_scan(&src, 1.0, &grid).unwrap();
        // full width at half maximum γ + P + Γ
        let half: f64 = (1.0 + 2.0 + 1.0) / 2.0;
        for (w, v) in grid.iter().zip(&s) {
            let shape = half * half / (half * half + w * w);
            assert_relative_eq!(v / s[0], shape, max_relative = 1e-6);
        }
    }

    #[test]
    fn steady_states_are_physical() {
        for cfg in [
            ideal_detector(&SourceConfig::incoherent(100.0), 0.0, 0.3),
            CascadeConfig::new(
                SourceConfig::coherent(5.0, 1.5),
                vec![
                    DetectorConfig::new(5.0, 1.0, 2),
                    DetectorConfig::new(-5.0, 1.0, 2),
                ],
            ),
        ] {
            let sys = CascadeSystem::new(&cfg).unwrap();
            sys.rho.check_invariants().unwrap();
            let r = build_cascaded_liouvillian(&cfg).unwrap().apply(sys.rho.matrix());
            assert!(r.camax() < 1e-10);
        }
    }
}
