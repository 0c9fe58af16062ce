//! Fourier-grid machinery and divided differences of the exponential.
//!
//! Fields are stored in FFT order on an `n^d` lattice. The forward transform
//! approximates `∫ e^{-i(p,x)} f(x) dx` (scaled by `dx^d`), the inverse
//! carries `(Δp/2π)^d = L^{-d}`, so a round trip is the identity.
//!
//! Every ratio `(e^{ta} - e^{tb})/(a - b)` that appears in the closed forms is
//! evaluated through [`phi1`], [`phi2`] or [`exp_divided_difference`]; the
//! frequency sets where denominators vanish are never singled out.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use thiserror::Error;

use crate::model::{ModelParams, Point};
use crate::quadrature::GaussLegendre;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("field has {got} entries, grid has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("lambda_plus equals lambda_minus; the singular sets may overlap")]
    EqualRates,
}

/// Uniform periodic lattice `[-L/2, L/2)^d` with `n` points per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierGrid {
    dim: usize,
    n: usize,
    length: f64,
    /// Signed lattice index per axis position, in FFT order.
    signed: Vec<i64>,
}

impl FourierGrid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self, SpectralError> {
        if !(1..=3).contains(&dim) {
            return Err(SpectralError::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(SpectralError::InvalidGrid(format!(
                "n = {n} must be a power of two and at least 8"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(SpectralError::InvalidGrid(format!("box length {length} must be > 0")));
        }
        let half = (n / 2) as i64;
        let signed = (0..n as i64).map(|j| if j < half { j } else { j - n as i64 }).collect();
        Ok(Self { dim, n, length, signed })
    }

    /// Default grid for a Gaussian kernel of width `sigma`: `n = 32`, `L = 40 sigma`.
    pub fn default_for(dim: usize, sigma: f64) -> Result<Self, SpectralError> {
        Self::new(dim, 32, 40.0 * sigma)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn dp(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// Volume element of a frequency cell, `Δp^d`.
    pub fn dp_volume(&self) -> f64 {
        self.dp().powi(self.dim as i32)
    }

    pub fn dx_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    fn axes(&self, index: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rest = index;
        for a in (0..self.dim).rev() {
            out[a] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    /// Signed lattice coordinates `k` of flat index `index`.
    pub fn lattice(&self, index: usize) -> [i64; 3] {
        let ax = self.axes(index);
        let mut out = [0; 3];
        for a in 0..self.dim {
            out[a] = self.signed[ax[a]];
        }
        out
    }

    pub fn frequency(&self, index: usize) -> Point {
        let k = self.lattice(index);
        let dp = self.dp();
        [k[0] as f64 * dp, k[1] as f64 * dp, k[2] as f64 * dp]
    }

    pub fn frequency_norm(&self, index: usize) -> f64 {
        let p = self.frequency(index);
        (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
    }

    pub fn position(&self, index: usize) -> Point {
        let k = self.lattice(index);
        let dx = self.dx();
        [k[0] as f64 * dx, k[1] as f64 * dx, k[2] as f64 * dx]
    }

    /// Flat index of the lattice point `-k`.
    pub fn mirror_index(&self, index: usize) -> usize {
        let ax = self.axes(index);
        (0..self.dim).fold(0, |acc, a| acc * self.n + (self.n - ax[a]) % self.n)
    }

    /// Index of the zero frequency (and of the spatial origin).
    pub fn origin(&self) -> usize {
        0
    }

    /// Largest `|p|` reachable along an axis without wrapping.
    pub fn nyquist(&self) -> f64 {
        self.dp() * (self.n / 2) as f64
    }

    fn check(&self, len: usize) -> Result<(), SpectralError> {
        if len != self.len() {
            return Err(SpectralError::SizeMismatch {
                expected: self.len(),
                got: len,
            });
        }
        Ok(())
    }

    fn fft_in_place(&self, data: &mut [Complex64], direction: FftDirection) {
        let n = self.n;
        let fft = FftPlanner::new().plan_fft(n, direction);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let outer = n.pow(axis as u32);
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * stride * n + inner;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = data[base + j * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        data[base + j * stride] = *v;
                    }
                }
            }
        }
    }

    pub fn forward(&self, field: &[Complex64]) -> Result<Vec<Complex64>, SpectralError> {
        self.check(field.len())?;
        let mut data = field.to_vec();
        self.fft_in_place(&mut data, FftDirection::Forward);
        let scale = self.dx_volume();
        data.iter_mut().for_each(|v| *v *= scale);
        Ok(data)
    }

    pub fn inverse(&self, hat: &[Complex64]) -> Result<Vec<Complex64>, SpectralError> {
        self.check(hat.len())?;
        let mut data = hat.to_vec();
        self.fft_in_place(&mut data, FftDirection::Inverse);
        let scale = self.length.powi(-(self.dim as i32));
        data.iter_mut().for_each(|v| *v *= scale);
        Ok(data)
    }

    pub fn forward_real(&self, field: &[f64]) -> Result<Vec<Complex64>, SpectralError> {
        let c: Vec<Complex64> = field.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&c)
    }

    /// Inverse transform keeping the real part; the caller is responsible for
    /// passing a conjugate-symmetric spectrum.
    pub fn inverse_real(&self, hat: &[Complex64]) -> Result<Vec<f64>, SpectralError> {
        Ok(self.inverse(hat)?.into_iter().map(|z| z.re).collect())
    }

    /// Inverse transform of a real spectrum given as plain values.
    pub fn inverse_of_real_spectrum(&self, hat: &[f64]) -> Result<Vec<f64>, SpectralError> {
        let c: Vec<Complex64> = hat.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.inverse_real(&c)
    }

    /// Samples `f(x)` at every lattice position.
    pub fn sample_space<F: Fn(&Point) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.position(i))).collect()
    }

    /// Samples `g(p)` at every lattice frequency.
    pub fn sample_frequency<F: Fn(&Point) -> f64>(&self, g: F) -> Vec<f64> {
        (0..self.len()).map(|i| g(&self.frequency(i))).collect()
    }

    /// Riemann sum `Σ g(p) Δp^d`.
    pub fn frequency_sum(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.dp_volume()
    }
}

/// A correlation quantity split into a spatial constant and the Fourier
/// transform of an integrable remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitField {
    pub constant: f64,
    pub fluct_hat: Vec<Complex64>,
}

impl SplitField {
    pub fn constant_only(grid: &FourierGrid, constant: f64) -> Self {
        Self {
            constant,
            fluct_hat: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_real_spectrum(constant: f64, hat: &[f64]) -> Self {
        Self {
            constant,
            fluct_hat: hat.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    /// Builds the split form from a spatial fluctuation sampled on the grid.
    pub fn from_space(
        grid: &FourierGrid,
        constant: f64,
        fluct: Option<&[f64]>,
    ) -> Result<Self, SpectralError> {
        match fluct {
            None => Ok(Self::constant_only(grid, constant)),
            Some(f) => Ok(Self {
                constant,
                fluct_hat: grid.forward_real(f)?,
            }),
        }
    }

    /// The fluctuation part in space.
    pub fn fluct_space(&self, grid: &FourierGrid) -> Result<Vec<f64>, SpectralError> {
        grid.inverse_real(&self.fluct_hat)
    }

    pub fn fluct_sup(&self) -> f64 {
        self.fluct_hat.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_conjugate_symmetric(&self, grid: &FourierGrid, tol: f64) -> bool {
        (0..grid.len()).all(|i| {
            let m = self.fluct_hat[grid.mirror_index(i)];
            (self.fluct_hat[i] - m.conj()).norm() <= tol * (1.0 + self.fluct_hat[i].norm())
        })
    }

    /// Real and even spectrum, as produced by even real fluctuations.
    pub fn is_real_even(&self, grid: &FourierGrid, tol: f64) -> bool {
        self.fluct_hat.iter().all(|z| z.im.abs() <= tol * (1.0 + z.re.abs()))
            && self.is_conjugate_symmetric(grid, tol)
    }

    /// Relative sup-norm distance, with the constant counted as one more entry.
    pub fn relative_distance(&self, other: &SplitField) -> f64 {
        let c = (self.constant - other.constant).abs() / other.constant.abs().max(1e-300);
        let scale = other.fluct_sup();
        let f = if scale == 0.0 {
            self.fluct_sup()
        } else {
            self.fluct_hat
                .iter()
                .zip(&other.fluct_hat)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max)
                / scale
        };
        c.max(f)
    }
}

/// Controls when divided differences switch to their series branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularSetPolicy {
    pub epsilon_dd: f64,
}

impl Default for SingularSetPolicy {
    fn default() -> Self {
        Self { epsilon_dd: 1e-7 }
    }
}

impl SingularSetPolicy {
    pub fn new(epsilon_dd: f64) -> Self {
        assert!(epsilon_dd > 0.0, "epsilon_dd must be positive");
        Self { epsilon_dd }
    }

    /// `(e^{ta} - e^{tb})/(a - b)`, symmetric in `a, b` and continuous across `a = b`.
    pub fn phi1(&self, a: f64, b: f64, t: f64) -> f64 {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let delta = hi - lo;
        if t == 0.0 {
            return 0.0;
        }
        if delta <= self.epsilon_dd * 1f64.max(hi.abs()).max(lo.abs()) {
            // t e^{t lo} Σ (tδ)^k/(k+1)!, all terms positive
            let x = t * delta;
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..60 {
                term *= x / (k as f64 + 1.0);
                sum += term;
                if term < 1e-17 * sum {
                    break;
                }
            }
            t * (t * lo).exp() * sum
        } else {
            (t * hi).exp() * (-(-t * delta).exp_m1()) / delta
        }
    }

    /// Second divided difference `E[a,b,c](t) = ∫₀ᵗ e^{(t-τ)a} phi1(b,c,τ) dτ`.
    pub fn phi2(&self, a: f64, b: f64, c: f64, t: f64) -> f64 {
        let mut x = [a, b, c];
        x.sort_by(f64::total_cmp);
        let spread = x[2] - x[0];
        if t * spread >= 1e-2 {
            (self.phi1(x[1], x[2], t) - self.phi1(x[0], x[1], t)) / spread
        } else {
            opitz(&x, t)
        }
    }
}

pub fn phi1(a: f64, b: f64, t: f64) -> f64 {
    SingularSetPolicy::default().phi1(a, b, t)
}

pub fn phi2(a: f64, b: f64, c: f64, t: f64) -> f64 {
    SingularSetPolicy::default().phi2(a, b, c, t)
}

/// Divided difference of `x ↦ e^{tx}` over arbitrary (possibly repeated) nodes.
///
/// Equals the iterated integral `∫₀ᵗ e^{(t-τ)x₀} E[x₁,…](τ) dτ`, hence is
/// symmetric in the nodes and non-negative.
pub fn exp_divided_difference(nodes: &[f64], t: f64) -> f64 {
    match nodes.len() {
        0 => panic!("divided difference needs at least one node"),
        1 => (t * nodes[0]).exp(),
        2 => phi1(nodes[0], nodes[1], t),
        3 => phi2(nodes[0], nodes[1], nodes[2], t),
        _ => {
            let mut x = nodes.to_vec();
            x.sort_by(f64::total_cmp);
            let m = x.len();
            let spread = x[m - 1] - x[0];
            if t * spread >= 1.0 {
                (exp_divided_difference(&x[1..], t) - exp_divided_difference(&x[..m - 1], t))
                    / spread
            } else {
                opitz(&x, t)
            }
        }
    }
}

/// Reads the divided difference off `exp(t J)` for the bidiagonal matrix `J`
/// with the nodes on the diagonal and ones below it.
fn opitz(nodes: &[f64], t: f64) -> f64 {
    let m = nodes.len();
    let shift = nodes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..m {
        a[i][i] = t * (nodes[i] - shift);
        if i + 1 < m {
            a[i + 1][i] = t;
        }
    }
    let norm = (0..m)
        .map(|i| a[i].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    for row in a.iter_mut() {
        row.iter_mut().for_each(|v| *v *= scale);
    }
    // Taylor series; terms fall below 0.5^k / k!
    let mut result = identity(m);
    let mut term = identity(m);
    for k in 1..=24 {
        term = matmul(&term, &a);
        let inv = 1.0 / k as f64;
        for row in term.iter_mut() {
            row.iter_mut().for_each(|v| *v *= inv);
        }
        for i in 0..m {
            for j in 0..m {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    (t * shift).exp() * result[m - 1][0]
}

fn identity(m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn matmul(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = x.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for k in 0..m {
            let xik = x[i][k];
            if xik == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i][j] += xik * y[k][j];
            }
        }
    }
    out
}

/// Per-frequency symbols of the model on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTable {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub lambda_cross: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub a_plus: Vec<f64>,
    pub a_minus: Vec<f64>,
    pub a_cross: Vec<f64>,
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
    /// `μ⁺ - 2f⁺`
    pub h1: Vec<f64>,
    /// `μ⁻ - 2f⁻`
    pub h2: Vec<f64>,
    /// `f⁺ + f⁻`
    pub h3: Vec<f64>,
    /// `μ⁻ - f⁺ - f⁻`
    pub h4: Vec<f64>,
    /// `f⁻ - f⁺`
    pub g1: Vec<f64>,
    /// `μ⁻ - 2f⁺`
    pub g2: Vec<f64>,
}

impl SymbolTable {
    pub fn len(&self) -> usize {
        self.f_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_plus.is_empty()
    }
}

pub fn build_symbols(params: &ModelParams, grid: &FourierGrid) -> SymbolTable {
    let hat = |k: &crate::model::Kernel| -> Vec<f64> {
        (0..grid.len()).map(|i| k.fourier_radial(grid.frequency_norm(i))).collect()
    };
    let a_plus = hat(&params.kernel_plus);
    let a_minus = if params.kernel_minus == params.kernel_plus {
        a_plus.clone()
    } else {
        hat(&params.kernel_minus)
    };
    let a_cross = if params.kernel_cross == params.kernel_plus {
        a_plus.clone()
    } else if params.kernel_cross == params.kernel_minus {
        a_minus.clone()
    } else {
        hat(&params.kernel_cross)
    };
    let mu_plus = params.mu_plus();
    let mu_minus = params.mu_minus();
    let f_plus: Vec<f64> = a_plus.iter().map(|a| params.lambda_plus * a - 1.0).collect();
    let f_minus: Vec<f64> = a_minus.iter().map(|a| params.lambda_minus * a - 1.0).collect();
    let zip = |g: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        f_plus.iter().zip(&f_minus).map(|(&fp, &fm)| g(fp, fm)).collect()
    };
    let h1 = zip(&|fp, _| mu_plus - 2.0 * fp);
    let h2 = zip(&|_, fm| mu_minus - 2.0 * fm);
    let h3 = zip(&|fp, fm| fp + fm);
    let h4 = zip(&|fp, fm| mu_minus - fp - fm);
    let g1 = zip(&|fp, fm| fm - fp);
    let g2 = zip(&|fp, _| mu_minus - 2.0 * fp);
    SymbolTable {
        lambda_plus: params.lambda_plus,
        lambda_minus: params.lambda_minus,
        lambda_cross: params.lambda_cross,
        mu_plus,
        mu_minus,
        a_plus,
        a_minus,
        a_cross,
        f_plus,
        f_minus,
        h1,
        h2,
        h3,
        h4,
        g1,
        g2,
    }
}

/// True when no lattice frequency lies (within `tol`) on both `g₁ = 0` and `g₂ = 0`.
pub fn check_disjoint_singular_sets(symbols: &SymbolTable, tol: f64) -> Result<bool, SpectralError> {
    if symbols.lambda_plus == symbols.lambda_minus {
        return Err(SpectralError::EqualRates);
    }
    Ok(!symbols
        .g1
        .iter()
        .zip(&symbols.g2)
        .any(|(a, b)| a.abs() < tol && b.abs() < tol))
}

/// Inverse Fourier transform of a radial spectrum in three dimensions,
/// `(2π²r)^{-1} ∫₀^{p_max} S(p) p sin(pr) dp`, by composite Gauss–Legendre.
pub fn radial_inverse_3d<F: Fn(f64) -> f64>(spectrum: F, r: f64, p_max: f64, panels: usize) -> f64 {
    let gl = GaussLegendre::new(20);
    if r == 0.0 {
        gl.integrate(|p| spectrum(p) * p * p, 0.0, p_max, panels) / (2.0 * PI * PI)
    } else {
        gl.integrate(|p| spectrum(p) * p * (p * r).sin(), 0.0, p_max, panels) / (2.0 * PI * PI * r)
    }
}
