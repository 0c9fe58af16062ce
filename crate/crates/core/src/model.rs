//! Model parameters, dispersal kernels and initial data.
//!
//! Every hypothesis the dynamics relies on (positive rates, normalized even
//! kernels with bounded Fourier transform, polynomial decay) is checked by
//! [`validate_params`], which reports violations as data rather than failing.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::GaussLegendre;
use crate::spectral::FourierGrid;

/// A position or displacement. Coordinates past the model dimension are zero.
pub type Point = [f64; 3];

/// Tolerance used when deciding that a rate sits exactly at the critical value 1.
pub const CRITICAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension must be 1, 2 or 3 (got {0})")]
    Dimension(usize),
    #[error("kernel scale must be finite and > 0 (got {0})")]
    Scale(f64),
    #[error("{name} must be finite and >= 0 (got {value})")]
    Rate { name: &'static str, value: f64 },
    #[error("{0} has length {1}, expected {2} grid points")]
    FieldLength(&'static str, usize, usize),
    #[error("{0}")]
    InitialData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelFamily {
    /// Isotropic Gaussian with per-axis standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Radially linear bump `(1 - |x|/radius)_+`, normalized.
    Tent { radius: f64 },
}

/// A radially symmetric dispersal density on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    family: KernelFamily,
    dim: usize,
    mass: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self, ModelError> {
        if !(1..=3).contains(&dim) {
            return Err(ModelError::Dimension(dim));
        }
        let scale = match family {
            KernelFamily::Gaussian { sigma } => sigma,
            KernelFamily::Tent { radius } => radius,
        };
        if !(scale.is_finite() && scale > 0.0) {
            return Err(ModelError::Scale(scale));
        }
        Ok(Self {
            family,
            dim,
            mass: 1.0,
        })
    }

    pub fn gaussian(sigma: f64, dim: usize) -> Result<Self, ModelError> {
        Self::new(KernelFamily::Gaussian { sigma }, dim)
    }

    pub fn tent(radius: f64, dim: usize) -> Result<Self, ModelError> {
        Self::new(KernelFamily::Tent { radius }, dim)
    }

    /// Rescales the total mass. Only meaningful as a test double for
    /// normalization checks; the dynamics assume unit mass.
    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Length scale of the kernel (sigma or radius).
    pub fn scale(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian { sigma } => sigma,
            KernelFamily::Tent { radius } => radius,
        }
    }

    /// Density as a function of the distance from the origin.
    pub fn radial_density(&self, s: f64) -> f64 {
        let d = self.dim as f64;
        match self.family {
            KernelFamily::Gaussian { sigma } => {
                self.mass * (2.0 * PI * sigma * sigma).powf(-d / 2.0)
                    * (-s * s / (2.0 * sigma * sigma)).exp()
            }
            KernelFamily::Tent { radius } => {
                if s >= radius {
                    0.0
                } else {
                    self.mass * tent_normalizer(self.dim, radius) * (1.0 - s / radius)
                }
            }
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.radial_density(norm(x, self.dim))
    }

    /// Fourier transform `∫ e^{-i(p,x)} a(x) dx`, real because the kernel is even.
    pub fn fourier(&self, p: &[f64]) -> f64 {
        self.fourier_radial(norm(p, self.dim))
    }

    pub fn fourier_radial(&self, p: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian { sigma } => self.mass * (-0.5 * sigma * sigma * p * p).exp(),
            KernelFamily::Tent { radius } => self.mass * tent_fourier(self.dim, radius, p),
        }
    }

    /// `E|ξ|²` for a displacement drawn from the (unit-mass) kernel.
    pub fn second_moment(&self) -> f64 {
        let d = self.dim as f64;
        match self.family {
            KernelFamily::Gaussian { sigma } => d * sigma * sigma,
            // radius fraction ~ Beta(d, 2)
            KernelFamily::Tent { radius } => radius * radius * d * (d + 1.0) / ((d + 2.0) * (d + 3.0)),
        }
    }

    /// `∫ a(x) dx` by radial Gauss–Legendre quadrature.
    pub fn total_mass(&self) -> f64 {
        let gl = GaussLegendre::new(32);
        let surface = unit_sphere_area(self.dim);
        let d = self.dim as i32;
        let (upper, panels) = match self.family {
            KernelFamily::Gaussian { sigma } => (40.0 * sigma, 80),
            KernelFamily::Tent { radius } => (radius, 4),
        };
        gl.integrate(
            |s| surface * s.powi(d - 1) * self.radial_density(s),
            0.0,
            upper,
            panels,
        )
    }

    /// Smallest `A` with `a(x) <= A / (1 + |x|)^delta` for all `x`.
    pub fn decay_constant(&self, delta: f64) -> f64 {
        let at = |s: f64| self.radial_density(s) * (1.0 + s).powf(delta);
        let stationary = match self.family {
            KernelFamily::Gaussian { sigma } => {
                (-1.0 + (1.0 + 4.0 * delta * sigma * sigma).sqrt()) / 2.0
            }
            KernelFamily::Tent { radius } => ((delta * radius - 1.0) / (1.0 + delta)).clamp(0.0, radius),
        };
        at(0.0).max(at(stationary.max(0.0)))
    }

    /// Draws a displacement with density `a`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let mut out = [0.0; 3];
        match self.family {
            KernelFamily::Gaussian { sigma } => {
                for c in out.iter_mut().take(self.dim) {
                    let z: f64 = StandardNormal.sample(rng);
                    *c = sigma * z;
                }
            }
            KernelFamily::Tent { radius } => {
                let beta = Beta::new(self.dim as f64, 2.0).expect("valid beta parameters");
                let s = radius * beta.sample(rng);
                let dir = random_direction(self.dim, rng);
                for i in 0..self.dim {
                    out[i] = s * dir[i];
                }
            }
        }
        out
    }
}

fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Point {
    if dim == 1 {
        return [if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0, 0.0];
    }
    loop {
        let mut v = [0.0; 3];
        for c in v.iter_mut().take(dim) {
            *c = StandardNormal.sample(rng);
        }
        let r = norm(&v, dim);
        if r > 1e-12 {
            for c in v.iter_mut().take(dim) {
                *c /= r;
            }
            return v;
        }
    }
}

pub(crate) fn norm(x: &[f64], dim: usize) -> f64 {
    x.iter().take(dim).map(|v| v * v).sum::<f64>().sqrt()
}

pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => panic!("unsupported dimension {dim}"),
    }
}

pub fn unit_sphere_area(dim: usize) -> f64 {
    dim as f64 * unit_ball_volume(dim)
}

fn tent_normalizer(dim: usize, radius: f64) -> f64 {
    (dim as f64 + 1.0) / (unit_ball_volume(dim) * radius.powi(dim as i32))
}

fn tent_fourier(dim: usize, radius: f64, p: f64) -> f64 {
    let u = p * radius;
    match dim {
        1 => {
            let s = sinc(0.5 * u);
            s * s
        }
        2 => {
            // no elementary closed form in 2-D; the integrand is smooth on [0, radius]
            let gl = GaussLegendre::new(24);
            let panels = 4 + (u / 2.0).ceil() as usize;
            let c = 6.0 / (radius * radius);
            c * gl.integrate(
                |s| (1.0 - s / radius) * s * libm::j0(p * s),
                0.0,
                radius,
                panels,
            )
        }
        3 => {
            if u < 0.5 {
                // 12 Σ_{k>=2} (-1)^{k+1} (2 - 2k) u^{2k-4} / (2k)!
                let mut sum = 0.0;
                let mut fact = 24.0; // (2k)! at k = 2
                let mut upow = 1.0;
                for k in 2..12 {
                    let kf = k as f64;
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    sum += sign * (2.0 - 2.0 * kf) * upow / fact;
                    fact *= (2.0 * kf + 1.0) * (2.0 * kf + 2.0);
                    upow *= u * u;
                }
                12.0 * sum
            } else {
                12.0 * (2.0 * (1.0 - u.cos()) - u * u.sin()) / u.powi(4)
            }
        }
        _ => unreachable!("dimension checked at construction"),
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Rates and kernels of the coupled process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// Rate at which (−)-particles seed (+)-offspring.
    pub lambda_cross: f64,
    pub kernel_plus: Kernel,
    pub kernel_minus: Kernel,
    pub kernel_cross: Kernel,
    pub dim: usize,
}

impl ModelParams {
    /// Checks only the structural requirements (finite non-negative rates,
    /// supported dimension). Hypotheses of the theory are left to
    /// [`validate_params`].
    pub fn new(
        lambda_plus: f64,
        lambda_minus: f64,
        lambda_cross: f64,
        kernel_plus: Kernel,
        kernel_minus: Kernel,
        kernel_cross: Kernel,
    ) -> Result<Self, ModelError> {
        for (name, value) in [
            ("lambda_plus", lambda_plus),
            ("lambda_minus", lambda_minus),
            ("lambda_cross", lambda_cross),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ModelError::Rate { name, value });
            }
        }
        Ok(Self {
            lambda_plus,
            lambda_minus,
            lambda_cross,
            kernel_plus,
            kernel_minus,
            kernel_cross,
            dim: kernel_plus.dim,
        })
    }

    /// All three kernels Gaussian with the same `sigma`.
    pub fn gaussian(
        lambda_plus: f64,
        lambda_minus: f64,
        lambda_cross: f64,
        sigma: f64,
        dim: usize,
    ) -> Result<Self, ModelError> {
        let k = Kernel::gaussian(sigma, dim)?;
        Self::new(lambda_plus, lambda_minus, lambda_cross, k, k, k)
    }

    pub fn mu_plus(&self) -> f64 {
        self.lambda_plus - 1.0
    }

    pub fn mu_minus(&self) -> f64 {
        self.lambda_minus - 1.0
    }

    /// The asymptotic statements about correlation functions need `d >= 3`.
    pub fn meets_asymptotic_hypotheses(&self) -> bool {
        self.dim >= 3
    }
}

/// A failed hypothesis reported by [`validate_params`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveRate { name: &'static str, value: f64 },
    DimensionMismatch { kernel: &'static str, dim: usize, expected: usize },
    Normalization { kernel: &'static str, integral: f64 },
    NotEvenOrNegative { kernel: &'static str },
    FourierBound { kernel: &'static str, value: f64 },
    Decay { kernel: &'static str, delta: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveRate { name, value } => {
                write!(f, "{name} must be > 0 (got {value})")
            }
            Violation::DimensionMismatch { kernel, dim, expected } => {
                write!(f, "dimension: {kernel} lives in d={dim}, model has d={expected}")
            }
            Violation::Normalization { kernel, integral } => {
                write!(f, "normalization: {kernel} integrates to {integral}, expected 1")
            }
            Violation::NotEvenOrNegative { kernel } => {
                write!(f, "evenness: {kernel} is not an even non-negative density")
            }
            Violation::FourierBound { kernel, value } => {
                write!(f, "fourier bound: {kernel} has |â| = {value} > 1 or â(0) != 1")
            }
            Violation::Decay { kernel, delta } => {
                write!(f, "decay: {kernel} has no finite decay constant for delta = {delta}")
            }
        }
    }
}

/// Decay exponent used by [`validate_params`] to witness the polynomial
/// bound; any `delta > 2d` works for the built-in families.
pub fn default_decay_exponent(dim: usize) -> f64 {
    2.0 * dim as f64 + 1.0
}

/// Returns every violated hypothesis; an empty list means the parameters are admissible.
pub fn validate_params(params: &ModelParams) -> Vec<Violation> {
    let mut out = Vec::new();
    for (name, value) in [
        ("lambda_plus", params.lambda_plus),
        ("lambda_minus", params.lambda_minus),
        ("lambda_cross", params.lambda_cross),
    ] {
        if !(value > 0.0) {
            out.push(Violation::NonPositiveRate { name, value });
        }
    }
    let delta = default_decay_exponent(params.dim);
    for (name, k) in [
        ("kernel_plus", &params.kernel_plus),
        ("kernel_minus", &params.kernel_minus),
        ("kernel_cross", &params.kernel_cross),
    ] {
        if k.dim != params.dim {
            out.push(Violation::DimensionMismatch {
                kernel: name,
                dim: k.dim,
                expected: params.dim,
            });
            continue;
        }
        let integral = k.total_mass();
        if (integral - 1.0).abs() > 1e-10 {
            out.push(Violation::Normalization { kernel: name, integral });
        }
        if !kernel_is_even(k) {
            out.push(Violation::NotEvenOrNegative { kernel: name });
        }
        let sup = fourier_sup_off_origin(k);
        if sup > 1.0 + 1e-12 || (k.fourier_radial(0.0) - 1.0).abs() > 1e-10 {
            out.push(Violation::FourierBound {
                kernel: name,
                value: sup.max(k.fourier_radial(0.0)),
            });
        }
        if !k.decay_constant(delta).is_finite() {
            out.push(Violation::Decay { kernel: name, delta });
        }
    }
    out
}

fn kernel_is_even(k: &Kernel) -> bool {
    // deterministic probe points spread over a few kernel scales
    let s = k.scale();
    (0..64).all(|i| {
        let t = i as f64 * 0.37;
        let x = [s * (t.sin() * 2.1), s * (1.3 * t).cos() * 1.7, s * (0.7 * t).sin()];
        let neg = [-x[0], -x[1], -x[2]];
        let a = k.density(&x);
        a >= 0.0 && a == k.density(&neg)
    })
}

fn fourier_sup_off_origin(k: &Kernel) -> f64 {
    let s = k.scale();
    (1..400)
        .map(|i| k.fourier_radial(i as f64 * 0.05 / s).abs())
        .fold(0.0, f64::max)
}

/// First-order initial data: constant intensities plus optional grid fluctuations.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderInit {
    pub c_plus: f64,
    pub c_minus: f64,
    /// Pointwise lower bound required of `c_minus + psi_minus`.
    pub alpha_minus: f64,
    pub psi_plus: Option<Vec<f64>>,
    pub psi_minus: Option<Vec<f64>>,
}

impl FirstOrderInit {
    /// Translation-invariant data (no fluctuations).
    pub fn constant(c_plus: f64, c_minus: f64) -> Self {
        Self {
            c_plus,
            c_minus,
            alpha_minus: c_minus,
            psi_plus: None,
            psi_minus: None,
        }
    }

    pub fn is_translation_invariant(&self) -> bool {
        let zero = |f: &Option<Vec<f64>>| f.as_ref().is_none_or(|v| v.iter().all(|x| *x == 0.0));
        zero(&self.psi_plus) && zero(&self.psi_minus)
    }

    pub fn validate(&self, grid: &FourierGrid) -> Result<(), ModelError> {
        if !(self.c_plus > 0.0 && self.c_minus > 0.0 && self.alpha_minus > 0.0) {
            return Err(ModelError::InitialData(
                "c_plus, c_minus and alpha_minus must be > 0".into(),
            ));
        }
        for (name, field, c, lower) in [
            ("psi_plus", &self.psi_plus, self.c_plus, 0.0),
            ("psi_minus", &self.psi_minus, self.c_minus, self.alpha_minus),
        ] {
            match field {
                None => {
                    if c < lower {
                        return Err(ModelError::InitialData(format!(
                            "{name}: constant {c} below the lower bound {lower}"
                        )));
                    }
                }
                Some(v) => {
                    check_len(name, v, grid)?;
                    if let Some(x) = v.iter().find(|x| c + **x < lower) {
                        return Err(ModelError::InitialData(format!(
                            "{name}: c + psi = {} below the lower bound {lower}",
                            c + x
                        )));
                    }
                    check_summable(name, v, grid)?;
                }
            }
        }
        Ok(())
    }
}

/// Second-order initial data, as functions of the difference variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderInit {
    pub c_pp: f64,
    pub c_pm: f64,
    pub c_mm: f64,
    pub phi_pp: Option<Vec<f64>>,
    pub phi_pm: Option<Vec<f64>>,
    pub phi_mm: Option<Vec<f64>>,
}

impl SecondOrderInit {
    pub fn constant(c_pp: f64, c_pm: f64, c_mm: f64) -> Self {
        Self {
            c_pp,
            c_pm,
            c_mm,
            phi_pp: None,
            phi_pm: None,
            phi_mm: None,
        }
    }

    /// Pair intensities of independent Poisson fields with the given first-order constants.
    pub fn poissonian(first: &FirstOrderInit) -> Self {
        Self::constant(
            first.c_plus * first.c_plus,
            first.c_plus * first.c_minus,
            first.c_minus * first.c_minus,
        )
    }

    pub fn validate(&self, grid: &FourierGrid) -> Result<(), ModelError> {
        for (name, field, c) in [
            ("phi_pp", &self.phi_pp, self.c_pp),
            ("phi_pm", &self.phi_pm, self.c_pm),
            ("phi_mm", &self.phi_mm, self.c_mm),
        ] {
            if !(c > 0.0) {
                return Err(ModelError::InitialData(format!(
                    "constant part of {name} must be > 0"
                )));
            }
            let Some(v) = field else { continue };
            check_len(name, v, grid)?;
            for (i, x) in v.iter().enumerate() {
                if c + x < 0.0 {
                    return Err(ModelError::InitialData(format!("{name}: c + phi < 0")));
                }
                let m = v[grid.mirror_index(i)];
                if (x - m).abs() > 1e-12 * (1.0 + x.abs()) {
                    return Err(ModelError::InitialData(format!("{name} is not even")));
                }
            }
            check_summable(name, v, grid)?;
        }
        Ok(())
    }
}

fn check_len(name: &'static str, v: &[f64], grid: &FourierGrid) -> Result<(), ModelError> {
    if v.len() != grid.len() {
        return Err(ModelError::FieldLength(name, v.len(), grid.len()));
    }
    Ok(())
}

fn check_summable(name: &str, v: &[f64], grid: &FourierGrid) -> Result<(), ModelError> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let hat = grid
        .forward_real(v)
        .map_err(|e| ModelError::InitialData(format!("{name}: {e}")))?;
    let l1_hat: f64 = hat.iter().map(|z| z.norm()).sum();
    if !(l1.is_finite() && l1_hat.is_finite()) {
        return Err(ModelError::InitialData(format!(
            "{name} or its transform is not absolutely summable"
        )));
    }
    Ok(())
}
