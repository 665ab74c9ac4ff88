//! Dense complex linear algebra over small tensor-product Hilbert spaces.
//!
//! Everything here is dense: the largest space in use is an emitter with two
//! truncated detectors, a few dozen states at most. Superoperators act on
//! density matrices vectorised column-major, `vec(ρ)[i + d·j] = ρ[i, j]`, so
//! that `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Matrix = DMatrix<C64>;
pub type StateVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Ordered list of tensor factors, first factor most significant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceLayout {
    factor_dims: Vec<usize>,
}

impl SpaceLayout {
    pub fn new(factor_dims: Vec<usize>) -> Result<Self> {
        if factor_dims.is_empty() {
            return Err(Error::InvalidLayout("at least one factor required".into()));
        }
        if let Some(d) = factor_dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidLayout(format!("factor dimension {d} < 2")));
        }
        Ok(Self { factor_dims })
    }

    pub fn factor_dims(&self) -> &[usize] {
        &self.factor_dims
    }

    pub fn num_factors(&self) -> usize {
        self.factor_dims.len()
    }

    /// Total dimension, the product of the factor dimensions.
    pub fn dim(&self) -> usize {
        self.factor_dims.iter().product()
    }

    /// Per-factor occupation index of a basis state.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factor_dims.len()];
        for (slot, &d) in out.iter_mut().zip(&self.factor_dims).rev() {
            *slot = index % d;
            index /= d;
        }
        out
    }
}

/// Dense operator on a tensor-product space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    layout: SpaceLayout,
    matrix: Matrix,
}

impl Operator {
    pub fn new(layout: SpaceLayout, matrix: Matrix) -> Result<Self> {
        let d = layout.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { layout, matrix })
    }

    pub fn zeros(layout: &SpaceLayout) -> Self {
        let d = layout.dim();
        Self {
            layout: layout.clone(),
            matrix: Matrix::zeros(d, d),
        }
    }

    pub fn identity(layout: &SpaceLayout) -> Self {
        let d = layout.dim();
        Self {
            layout: layout.clone(),
            matrix: Matrix::identity(d, d),
        }
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: &self.matrix * factor,
        }
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    /// `self† self`.
    pub fn number(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: self.matrix.adjoint() * &self.matrix,
        }
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn apply(&self, v: &StateVector) -> StateVector {
        &self.matrix * v
    }

    /// `⟨ψ|A|ψ⟩` for a (not necessarily normalised) vector.
    pub fn expect(&self, psi: &StateVector) -> C64 {
        psi.dotc(&(&self.matrix * psi))
    }

    /// `Tr(A ρ)`.
    pub fn trace_with(&self, rho: &Matrix) -> C64 {
        let d = self.dim();
        let mut acc = ZERO;
        for i in 0..d {
            for k in 0..d {
                acc += self.matrix[(i, k)] * rho[(k, i)];
            }
        }
        acc
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (&self.matrix - self.matrix.adjoint()).camax() <= tol
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        (&self.matrix - &other.matrix).camax()
    }
}

fn check_same(a: &Operator, b: &Operator) {
    assert_eq!(a.layout, b.layout, "operator layouts differ");
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        check_same(self, rhs);
        Operator {
            layout: self.layout.clone(),
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        check_same(self, rhs);
        Operator {
            layout: self.layout.clone(),
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        check_same(self, rhs);
        Operator {
            layout: self.layout.clone(),
            matrix: &self.matrix * &rhs.matrix,
        }
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale_real(-1.0)
    }
}

/// Lowering operator of a two-level system, `σ|1⟩ = |0⟩`.
pub fn annihilation_tls() -> Operator {
    let mut m = Matrix::zeros(2, 2);
    m[(0, 1)] = ONE;
    Operator {
        layout: SpaceLayout { factor_dims: vec![2] },
        matrix: m,
    }
}

/// Truncated bosonic lowering operator on `n_max + 1` Fock states.
pub fn annihilation_boson(n_max: usize) -> Result<Operator> {
    if n_max < 1 {
        return Err(Error::InvalidTruncation { min: 1, got: n_max });
    }
    let d = n_max + 1;
    let mut m = Matrix::zeros(d, d);
    for n in 1..d {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(Operator {
        layout: SpaceLayout { factor_dims: vec![d] },
        matrix: m,
    })
}

/// Places `op` on factor `factor_index` of `layout`, identity elsewhere.
pub fn embed(op: &Operator, factor_index: usize, layout: &SpaceLayout) -> Result<Operator> {
    let dims = layout.factor_dims();
    let target = *dims.get(factor_index).ok_or_else(|| {
        Error::InvalidLayout(format!(
            "factor index {factor_index} out of range for {} factors",
            dims.len()
        ))
    })?;
    if op.dim() != target {
        return Err(Error::DimensionMismatch {
            expected: target,
            got: op.dim(),
        });
    }
    let before: usize = dims[..factor_index].iter().product();
    let after: usize = dims[factor_index + 1..].iter().product();
    let m = Matrix::identity(before, before)
        .kronecker(&op.matrix)
        .kronecker(&Matrix::identity(after, after));
    Ok(Operator {
        layout: layout.clone(),
        matrix: m,
    })
}

fn one_norm(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

fn pade_low(a: &Matrix, b: &[f64]) -> Result<Matrix> {
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    let mut u_even = &id * C64::from(b[1]);
    let mut v = &id * C64::from(b[0]);
    let mut power = id.clone();
    let mut k = 2;
    while k < b.len() {
        power = &power * &a2;
        v += &power * C64::from(b[k]);
        if k + 1 < b.len() {
            u_even += &power * C64::from(b[k + 1]);
        }
        k += 2;
    }
    let u = a * u_even;
    solve_pade(&u, &v)
}

fn pade13(a: &Matrix) -> Result<Matrix> {
    let b = PADE13.map(C64::from);
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    solve_pade(&u, &v)
}

fn solve_pade(u: &Matrix, v: &Matrix) -> Result<Matrix> {
    let lu = (v - u).lu();
    lu.solve(&(v + u)).ok_or(Error::NonFinite("Padé denominator"))
}

/// Matrix exponential by Padé scaling and squaring.
pub fn expm(a: &Matrix) -> Result<Matrix> {
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("matrix exponential argument"));
    }
    let norm = one_norm(a);
    for (theta, coeffs) in THETA[..4]
        .iter()
        .zip([&PADE3[..], &PADE5[..], &PADE7[..], &PADE9[..]])
    {
        if norm <= *theta {
            return pade_low(a, coeffs);
        }
    }
    let s = if norm > THETA[4] {
        (norm / THETA[4]).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * C64::from(0.5f64.powi(s));
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// `e^A v` by scaled truncated Taylor series, without forming `e^A`.
///
/// The argument is split into `s` substeps of one-norm at most one, so each
/// series converges monotonically and no term cancellation can build up.
pub fn expm_action(a: &Matrix, v: &StateVector) -> Result<StateVector> {
    if a.nrows() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: v.len(),
        });
    }
    if a.iter()
        .chain(v.iter())
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::NonFinite("matrix exponential action"));
    }
    let norm = one_norm(a);
    let substeps = norm.ceil().max(1.0) as usize;
    let inv = C64::from(1.0 / substeps as f64);
    let mut w = v.clone();
    for _ in 0..substeps {
        let mut term = w.clone();
        let mut sum = w.clone();
        for k in 1..=60 {
            term = (a * &term) * (inv / k as f64);
            sum += &term;
            if term.norm() <= 1e-17 * sum.norm() {
                break;
            }
        }
        w = sum;
    }
    Ok(w)
}

/// `e^A v` for an operator `A`; see [`expm_action`].
pub fn matrix_exponential_action(a: &Operator, v: &StateVector) -> Result<StateVector> {
    expm_action(&a.matrix, v)
}

/// Column-major vectorisation of a square matrix.
pub fn vectorize(m: &Matrix) -> StateVector {
    StateVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &StateVector, d: usize) -> Matrix {
    Matrix::from_column_slice(d, d, v.as_slice())
}

/// Linear map on density matrices, stored densely on the vectorised space.
#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator {
    layout: SpaceLayout,
    matrix: Matrix,
}

impl Superoperator {
    pub fn zeros(layout: &SpaceLayout) -> Self {
        let d2 = layout.dim() * layout.dim();
        Self {
            layout: layout.clone(),
            matrix: Matrix::zeros(d2, d2),
        }
    }

    pub fn from_matrix(layout: SpaceLayout, matrix: Matrix) -> Result<Self> {
        let d2 = layout.dim() * layout.dim();
        if matrix.nrows() != d2 || matrix.ncols() != d2 {
            return Err(Error::DimensionMismatch {
                expected: d2,
                got: matrix.nrows(),
            });
        }
        Ok(Self { layout, matrix })
    }

    /// `ρ ↦ A ρ B`.
    pub fn sandwich(a: &Operator, b: &Operator) -> Self {
        check_same(a, b);
        Self {
            layout: a.layout.clone(),
            matrix: b.matrix.transpose().kronecker(&a.matrix),
        }
    }

    /// `ρ ↦ A ρ`.
    pub fn left(a: &Operator) -> Self {
        Self::sandwich(a, &Operator::identity(&a.layout))
    }

    /// `ρ ↦ ρ B`.
    pub fn right(b: &Operator) -> Self {
        Self::sandwich(&Operator::identity(&b.layout), b)
    }

    /// `ρ ↦ i[ρ, H]`.
    pub fn hamiltonian(h: &Operator) -> Self {
        let mut s = Self::right(h);
        s.matrix -= Self::left(h).matrix;
        s.matrix *= I;
        s
    }

    /// `ρ ↦ (rate/2)(2cρc† − c†cρ − ρc†c)`.
    pub fn dissipator(c: &Operator, rate: f64) -> Self {
        let cd = c.adjoint();
        let n = &cd * c;
        let mut s = Self::sandwich(c, &cd);
        s.matrix *= C64::from(2.0);
        s.matrix -= Self::left(&n).matrix;
        s.matrix -= Self::right(&n).matrix;
        s.matrix *= C64::from(0.5 * rate);
        s
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Hilbert-space dimension `d` (the superoperator is `d² × d²`).
    pub fn hilbert_dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn apply(&self, rho: &Matrix) -> Matrix {
        let v = &self.matrix * vectorize(rho);
        unvectorize(&v, self.hilbert_dim())
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: &self.matrix * C64::from(factor),
        }
    }

    pub fn max_abs_diff(&self, other: &Superoperator) -> f64 {
        (&self.matrix - &other.matrix).camax()
    }
}

impl Add for &Superoperator {
    type Output = Superoperator;
    fn add(self, rhs: &Superoperator) -> Superoperator {
        assert_eq!(self.layout, rhs.layout, "superoperator layouts differ");
        Superoperator {
            layout: self.layout.clone(),
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl std::ops::AddAssign<&Superoperator> for Superoperator {
    fn add_assign(&mut self, rhs: &Superoperator) {
        assert_eq!(self.layout, rhs.layout, "superoperator layouts differ");
        self.matrix += &rhs.matrix;
    }
}

/// Compressed-row copy of a generator for repeated matrix-vector products.
///
/// Liouvillians are dense-stored but mostly zero; time stepping along a
/// correlation grid only ever needs `v ↦ L v`.
#[derive(Clone, Debug)]
pub struct SparseGenerator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
    one_norm: f64,
}

impl SparseGenerator {
    pub fn from_dense(m: &Matrix) -> Self {
        let n = m.nrows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..m.ncols() {
                let z = m[(i, j)];
                if z != ZERO {
                    cols.push(j);
                    vals.push(z);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
            one_norm: one_norm(m),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `y = A x`.
    pub fn mul_into(&self, x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    /// `e^{A t} v` by scaled Taylor series.
    pub fn exp_action(&self, t: f64, v: &StateVector) -> Result<StateVector> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        if !t.is_finite() || v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("matrix exponential action"));
        }
        let substeps = (self.one_norm * t.abs()).ceil().max(1.0) as usize;
        let h = t / substeps as f64;
        let mut w = v.as_slice().to_vec();
        let mut term = vec![ZERO; self.n];
        let mut next = vec![ZERO; self.n];
        for _ in 0..substeps {
            term.copy_from_slice(&w);
            let mut sum = w.clone();
            for k in 1..=60 {
                self.mul_into(&term, &mut next);
                let f = h / k as f64;
                let mut tn = 0.0;
                let mut sn = 0.0;
                for i in 0..self.n {
                    term[i] = next[i] * f;
                    sum[i] += term[i];
                    tn += term[i].norm_sqr();
                    sn += sum[i].norm_sqr();
                }
                if tn <= 1e-34 * sn {
                    break;
                }
            }
            w = sum;
        }
        Ok(StateVector::from_vec(w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(d: usize, k: usize) -> StateVector {
        let mut v = StateVector::zeros(d);
        v[k] = ONE;
        v
    }

    fn random_matrix(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Matrix {
        Matrix::from_fn(d, d, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
        })
    }

    // Independent oracle: plain Taylor series with repeated squaring, summed
    // to machine precision on a tiny-norm argument.
    fn taylor_squaring_oracle(a: &Matrix) -> Matrix {
        let n = a.nrows();
        let s = 12;
        let scaled = a * C64::from(0.5f64.powi(s));
        let mut term = Matrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &scaled / C64::from(k as f64);
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn tls_lowering_action() {
        let s = annihilation_tls();
        assert_eq!(s.apply(&basis(2, 1)), basis(2, 0));
        assert_eq!(s.apply(&basis(2, 0)), StateVector::zeros(2));
        assert_eq!((&s * &s).matrix().camax(), 0.0);
        let n = s.number();
        assert_eq!(n.matrix()[(0, 0)], ZERO);
        assert_eq!(n.matrix()[(1, 1)], ONE);
        assert_eq!(n.matrix()[(0, 1)], ZERO);
    }

    #[test]
    fn boson_lowering() {
        let a1 = annihilation_boson(1).unwrap();
        assert_eq!(a1.matrix(), annihilation_tls().matrix());
        let a = annihilation_boson(4).unwrap();
        let out = a.apply(&basis(5, 2));
        assert_relative_eq!(out[1].re, 2f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(
            annihilation_boson(0),
            Err(Error::InvalidTruncation { .. })
        ));
    }

    #[test]
    fn boson_commutator_is_identity_below_cutoff() {
        let n_max = 6;
        let a = annihilation_boson(n_max).unwrap();
        let comm = a.commutator(&a.adjoint());
        for i in 0..n_max {
            for j in 0..n_max {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(comm.matrix()[(i, j)].re, expected, epsilon = 1e-14);
                assert_relative_eq!(comm.matrix()[(i, j)].im, 0.0);
            }
        }
        // the truncation shows up only at the top level
        assert_relative_eq!(comm.matrix()[(n_max, n_max)].re, -(n_max as f64), epsilon = 1e-13);
    }

    #[test]
    fn embed_shapes_and_commutation() {
        let layout = SpaceLayout::new(vec![2, 3]).unwrap();
        let s = embed(&annihilation_tls(), 0, &layout).unwrap();
        assert_eq!(s.dim(), 6);
        let id = Operator::identity(&SpaceLayout::new(vec![3]).unwrap());
        assert_eq!(embed(&id, 1, &layout).unwrap(), Operator::identity(&layout));

        let l22 = SpaceLayout::new(vec![2, 2]).unwrap();
        let s = embed(&annihilation_tls(), 0, &l22).unwrap();
        let x = embed(&annihilation_boson(1).unwrap(), 1, &l22).unwrap();
        assert_eq!(s.commutator(&x).matrix().camax(), 0.0);
        assert_eq!(s.commutator(&x.adjoint()).matrix().camax(), 0.0);
        assert!(matches!(
            embed(&annihilation_tls(), 1, &layout),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn embed_preserves_spectrum() {
        let h = Operator::new(
            SpaceLayout::new(vec![3]).unwrap(),
            Matrix::from_diagonal(&DVector::from_vec(vec![
                C64::from(-1.0),
                C64::from(0.5),
                C64::from(2.0),
            ])),
        )
        .unwrap();
        let layout = SpaceLayout::new(vec![2, 3, 2]).unwrap();
        let big = embed(&h, 1, &layout).unwrap();
        let eig = big.matrix().clone().symmetric_eigen().eigenvalues;
        let mut vals: Vec<f64> = eig.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        let expected = [-1.0, -1.0, -1.0, -1.0, 0.5, 0.5, 0.5, 0.5, 2.0, 2.0, 2.0, 2.0];
        for (v, e) in vals.iter().zip(expected) {
            assert_relative_eq!(*v, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn layout_rejects_bad_factors() {
        assert!(SpaceLayout::new(vec![]).is_err());
        assert!(SpaceLayout::new(vec![2, 1]).is_err());
        let l = SpaceLayout::new(vec![2, 3, 4]).unwrap();
        assert_eq!(l.dim(), 24);
        assert_eq!(l.digits(1 * 12 + 2 * 4 + 3), vec![1, 2, 3]);
    }

    #[test]
    fn exponential_of_zero_is_identity() {
        let v = StateVector::from_vec(vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.7)]);
        let out = expm_action(&Matrix::zeros(2, 2), &v).unwrap();
        assert_eq!(out, v);
        assert_eq!(expm(&Matrix::zeros(3, 3)).unwrap(), Matrix::identity(3, 3));
    }

    #[test]
    fn rabi_half_period_flip() {
        // exp(−iπ/2 σx)|0⟩ = −i|1⟩, summed against the series oracle
        let s = annihilation_tls();
        let x = &s + &s.adjoint();
        let a = x.scale(C64::new(0.0, -std::f64::consts::FRAC_PI_2));
        let out = matrix_exponential_action(&a, &basis(2, 0)).unwrap();
        let oracle = taylor_squaring_oracle(a.matrix()) * basis(2, 0);
        assert!((out[0]).norm() < 1e-14);
        assert!((out[1] - C64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((&out - &oracle).norm() < 1e-12);
    }

    #[test]
    fn dissipative_evolution_shrinks_norm_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 6;
        let h = random_matrix(&mut rng, d, 1.0);
        let h = (&h + h.adjoint()) * C64::from(0.5);
        let g = random_matrix(&mut rng, d, 1.0);
        let damp = g.adjoint() * &g; // positive semidefinite
        let a = (h * C64::new(0.0, -1.0) - damp * C64::from(0.5)) * C64::from(0.1);
        // the anti-Hermitian part is negative semidefinite
        let herm_part = (&a + a.adjoint()) * C64::from(0.5);
        let eig = herm_part.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e <= 1e-12));
        let mut v = StateVector::from_fn(d, |_, _| C64::new(rng.gen(), rng.gen()));
        v /= C64::from(v.norm());
        let mut last = 1.0;
        for _ in 0..20 {
            v = expm_action(&a, &v).unwrap();
            let n = v.norm();
            assert!(n <= last + 1e-14);
            last = n;
        }
        assert!(last < 1.0);
    }

    #[test]
    fn pade_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for scale in [0.001, 0.1, 0.5, 2.0, 8.0] {
            let a = random_matrix(&mut rng, 8, scale);
            let e = expm(&a).unwrap();
            let o = taylor_squaring_oracle(&a);
            let rel = (&e - &o).norm() / o.norm();
            assert!(rel < 1e-11, "scale {scale}: rel {rel}");
        }
    }

    #[test]
    fn action_matches_scaling_and_squaring() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let scale = 0.05 * (trial + 1) as f64;
            let a = random_matrix(&mut rng, 8, scale);
            let v = StateVector::from_fn(8, |_, _| C64::new(rng.gen(), rng.gen()));
            let direct = expm_action(&a, &v).unwrap();
            let reference = expm(&a).unwrap() * &v;
            let rel = (&direct - &reference).norm() / reference.norm();
            assert!(rel < 1e-10, "trial {trial}: rel {rel}");
        }
    }

    #[test]
    fn hermitian_exponential_against_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_matrix(&mut rng, 5, 2.0);
        let h = (&h + h.adjoint()) * C64::from(0.5);
        let eig = h.clone().symmetric_eigen();
        let phases = DVector::from_iterator(5, eig.eigenvalues.iter().map(|&l| (C64::new(0.0, -l)).exp()));
        let oracle = &eig.eigenvectors * Matrix::from_diagonal(&phases) * eig.eigenvectors.adjoint();
        let e = expm(&(h * C64::new(0.0, -1.0))).unwrap();
        assert!((&e - &oracle).camax() < 1e-12);
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = C64::new(f64::NAN, 0.0);
        assert!(matches!(expm(&a), Err(Error::NonFinite(_))));
        assert!(matches!(expm_action(&a, &basis(2, 0)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn superoperator_vectorisation_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layout = SpaceLayout::new(vec![2, 2]).unwrap();
        let a = Operator::new(layout.clone(), random_matrix(&mut rng, 4, 1.0)).unwrap();
        let b = Operator::new(layout.clone(), random_matrix(&mut rng, 4, 1.0)).unwrap();
        let rho = random_matrix(&mut rng, 4, 1.0);
        let direct = a.matrix() * &rho * b.matrix();
        let via = Superoperator::sandwich(&a, &b).apply(&rho);
        assert!((&direct - &via).camax() < 1e-13);
        let comm = Superoperator::hamiltonian(&a).apply(&rho);
        let expected = (&rho * a.matrix() - a.matrix() * &rho) * I;
        assert!((&comm - &expected).camax() < 1e-13);
    }

    #[test]
    fn sparse_action_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = random_matrix(&mut rng, 16, 1.5);
        for i in 0..16 {
            for j in 0..16 {
                if (i * 7 + j * 3) % 5 != 0 {
                    a[(i, j)] = ZERO;
                }
            }
        }
        let sp = SparseGenerator::from_dense(&a);
        assert!(sp.nnz() < 16 * 16 / 3);
        let v = StateVector::from_fn(16, |_, _| C64::new(rng.gen(), rng.gen()));
        for t in [0.0, 0.3, 2.5] {
            let out = sp.exp_action(t, &v).unwrap();
            let reference = expm(&(&a * C64::from(t))).unwrap() * &v;
            assert!((&out - &reference).norm() / reference.norm() < 1e-11);
        }
    }

    proptest::proptest! {
        #[test]
        fn adjoint_of_product(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layout = SpaceLayout::new(vec![2, 3]).unwrap();
            let a = Operator::new(layout.clone(), random_matrix(&mut rng, 6, 1.0)).unwrap();
            let b = Operator::new(layout, random_matrix(&mut rng, 6, 1.0)).unwrap();
            let lhs = (&a * &b).adjoint();
            let rhs = &b.adjoint() * &a.adjoint();
            proptest::prop_assert!(lhs.max_abs_diff(&rhs) < 1e-13);
        }
    }
}
