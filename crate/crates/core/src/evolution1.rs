//! First-order correlation functions (particle intensities).
//!
//! In Fourier variables every frequency evolves independently:
//!
//! ```text
//! C⁻' = μ⁻C⁻              F̂⁻' = f⁻ F̂⁻
//! C⁺' = μ⁺C⁺ + λC⁻        F̂⁺' = f⁺ F̂⁺ + λ â F̂⁻
//! ```
//!
//! with `C` the spatial constant and `F̂` the transform of the integrable part.

use num_complex::Complex64;
use thiserror::Error;

use crate::model::{FirstOrderInit, ModelError, ModelParams, CRITICAL_TOLERANCE};
use crate::ode::rk4;
use crate::spectral::{build_symbols, phi1, FourierGrid, SpectralError, SplitField, SymbolTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("time step {dt} violates the stability guard dt * max|rate| < 0.5 (max|rate| = {rate})")]
    Stability { dt: f64, rate: f64 },
    #[error("second-order closed forms need translation-invariant first-order data")]
    NotTranslationInvariant,
    #[error("{0}")]
    CaseNotCovered(String),
    #[error("states are given at different times ({0} and {1})")]
    TimeMismatch(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderState {
    pub k_minus: SplitField,
    pub k_plus: SplitField,
    pub t: f64,
}

/// Closed-form first-order dynamics for fixed parameters and initial data.
#[derive(Debug, Clone)]
pub struct FirstOrder {
    pub params: ModelParams,
    pub grid: FourierGrid,
    pub symbols: SymbolTable,
    pub c_plus: f64,
    pub c_minus: f64,
    pub psi_plus_hat: Vec<Complex64>,
    pub psi_minus_hat: Vec<Complex64>,
}

impl FirstOrder {
    pub fn new(
        params: &ModelParams,
        init: &FirstOrderInit,
        grid: &FourierGrid,
    ) -> Result<Self, EvolutionError> {
        init.validate(grid)?;
        let zero = || vec![Complex64::new(0.0, 0.0); grid.len()];
        let hat = |f: &Option<Vec<f64>>| -> Result<Vec<Complex64>, SpectralError> {
            match f {
                Some(v) => grid.forward_real(v),
                None => Ok(zero()),
            }
        };
        Ok(Self {
            params: *params,
            grid: grid.clone(),
            symbols: build_symbols(params, grid),
            c_plus: init.c_plus,
            c_minus: init.c_minus,
            psi_plus_hat: hat(&init.psi_plus)?,
            psi_minus_hat: hat(&init.psi_minus)?,
        })
    }

    pub fn initial_state(&self) -> FirstOrderState {
        FirstOrderState {
            k_minus: SplitField {
                constant: self.c_minus,
                fluct_hat: self.psi_minus_hat.clone(),
            },
            k_plus: SplitField {
                constant: self.c_plus,
                fluct_hat: self.psi_plus_hat.clone(),
            },
            t: 0.0,
        }
    }

    /// `c⁻e^{μ⁻t}` plus `e^{tf⁻}ψ̂⁻`.
    pub fn k_minus(&self, t: f64) -> SplitField {
        let s = &self.symbols;
        SplitField {
            constant: minus_constant(&self.params, self.c_minus, t),
            fluct_hat: s
                .f_minus
                .iter()
                .zip(&self.psi_minus_hat)
                .map(|(f, psi)| psi * (t * f).exp())
                .collect(),
        }
    }

    /// `c⁺e^{μ⁺t} + λc⁻ phi1(μ⁻, μ⁺, t)` plus `e^{tf⁺}ψ̂⁺ + λâψ̂⁻ phi1(f⁻, f⁺, t)`.
    pub fn k_plus(&self, t: f64) -> SplitField {
        let s = &self.symbols;
        let lambda = self.params.lambda_cross;
        let fluct_hat = (0..self.grid.len())
            .map(|i| {
                self.psi_plus_hat[i] * (t * s.f_plus[i]).exp()
                    + self.psi_minus_hat[i]
                        * (lambda * s.a_cross[i] * phi1(s.f_minus[i], s.f_plus[i], t))
            })
            .collect();
        SplitField {
            constant: plus_constant(&self.params, self.c_plus, self.c_minus, t),
            fluct_hat,
        }
    }

    pub fn state(&self, t: f64) -> FirstOrderState {
        FirstOrderState {
            k_minus: self.k_minus(t),
            k_plus: self.k_plus(t),
            t,
        }
    }

    /// Time derivative of a state under the first-order hierarchy.
    pub fn rhs(&self, state: &FirstOrderState) -> (SplitField, SplitField) {
        first_order_rhs(&self.params, &self.symbols, state)
    }

    /// Largest `|rate|` entering the linear system; bounds the RK4 step.
    pub fn max_rate(&self) -> f64 {
        max_abs(&self.symbols.f_plus)
            .max(max_abs(&self.symbols.f_minus))
            .max(self.symbols.mu_plus.abs())
            .max(self.symbols.mu_minus.abs())
    }

    /// RK4 integration of the Fourier-space system, independent of the closed forms.
    pub fn evolve_ode(&self, t_end: f64, dt: f64) -> Result<FirstOrderState, EvolutionError> {
        let rate = self.max_rate();
        if !(dt > 0.0) || dt * rate >= 0.5 {
            return Err(EvolutionError::Stability { dt, rate });
        }
        let n = self.grid.len();
        let init = self.initial_state();
        let mut y = Vec::with_capacity(2 * n + 2);
        y.push(Complex64::new(init.k_minus.constant, 0.0));
        y.push(Complex64::new(init.k_plus.constant, 0.0));
        y.extend_from_slice(&init.k_minus.fluct_hat);
        y.extend_from_slice(&init.k_plus.fluct_hat);
        let s = &self.symbols;
        let p = &self.params;
        let y = rk4(y, t_end, dt, |y, d| {
            d[0] = p.mu_minus() * y[0];
            d[1] = p.mu_plus() * y[1] + p.lambda_cross * y[0];
            let (fm, fp) = y[2..].split_at(n);
            for i in 0..n {
                d[2 + i] = s.f_minus[i] * fm[i];
                d[2 + n + i] = s.f_plus[i] * fp[i] + p.lambda_cross * s.a_cross[i] * fm[i];
            }
        });
        Ok(FirstOrderState {
            k_minus: SplitField {
                constant: y[0].re,
                fluct_hat: y[2..2 + n].to_vec(),
            },
            k_plus: SplitField {
                constant: y[1].re,
                fluct_hat: y[2 + n..].to_vec(),
            },
            t: t_end,
        })
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Constant part of `k_t⁻` for translation-invariant data.
pub fn minus_constant(params: &ModelParams, c_minus: f64, t: f64) -> f64 {
    c_minus * (params.mu_minus() * t).exp()
}

/// Constant part of `k_t⁺`; the equal-rate case goes through the series branch of `phi1`.
pub fn plus_constant(params: &ModelParams, c_plus: f64, c_minus: f64, t: f64) -> f64 {
    c_plus * (params.mu_plus() * t).exp()
        + params.lambda_cross * c_minus * phi1(params.mu_minus(), params.mu_plus(), t)
}

pub fn k_minus_closed(
    params: &ModelParams,
    init: &FirstOrderInit,
    grid: &FourierGrid,
    t: f64,
) -> Result<SplitField, EvolutionError> {
    Ok(FirstOrder::new(params, init, grid)?.k_minus(t))
}

pub fn k_plus_closed(
    params: &ModelParams,
    init: &FirstOrderInit,
    grid: &FourierGrid,
    t: f64,
) -> Result<SplitField, EvolutionError> {
    Ok(FirstOrder::new(params, init, grid)?.k_plus(t))
}

pub fn first_order_rhs(
    params: &ModelParams,
    symbols: &SymbolTable,
    state: &FirstOrderState,
) -> (SplitField, SplitField) {
    let km = &state.k_minus;
    let kp = &state.k_plus;
    let lambda = params.lambda_cross;
    let d_minus = SplitField {
        constant: params.mu_minus() * km.constant,
        fluct_hat: km
            .fluct_hat
            .iter()
            .zip(&symbols.f_minus)
            .map(|(k, f)| k * f)
            .collect(),
    };
    let d_plus = SplitField {
        constant: params.mu_plus() * kp.constant + lambda * km.constant,
        fluct_hat: (0..kp.fluct_hat.len())
            .map(|i| {
                kp.fluct_hat[i] * symbols.f_plus[i]
                    + km.fluct_hat[i] * (lambda * symbols.a_cross[i])
            })
            .collect(),
    };
    (d_minus, d_plus)
}

pub fn evolve_ode(
    params: &ModelParams,
    init: &FirstOrderInit,
    grid: &FourierGrid,
    t_end: f64,
    dt: f64,
) -> Result<FirstOrderState, EvolutionError> {
    FirstOrder::new(params, init, grid)?.evolve_ode(t_end, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    Exponential,
    /// Polynomial growth `~ t`, which happens for `λ⁺ = λ⁻ = 1`.
    Linear,
}

/// Long-time behavior of a correlation function.
#[derive(Debug, Clone, PartialEq)]
pub enum AsymptoticVerdict {
    Zero,
    Diverges { growth: Growth },
    /// Finite limit. `fluctuation` is the limiting integrable part in space;
    /// `None` means it vanishes.
    Finite {
        constant: f64,
        fluctuation: Option<Vec<f64>>,
    },
}

impl AsymptoticVerdict {
    pub fn finite_constant(&self) -> Option<f64> {
        match self {
            AsymptoticVerdict::Finite { constant, .. } => Some(*constant),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AsymptoticVerdict::Zero => "Zero",
            AsymptoticVerdict::Diverges { .. } => "Diverges",
            AsymptoticVerdict::Finite { .. } => "Finite",
        }
    }
}

pub(crate) fn is_critical(lambda: f64) -> bool {
    (lambda - 1.0).abs() <= CRITICAL_TOLERANCE
}

/// Limits of `(k_t⁻, k_t⁺)` as `t → ∞`.
pub fn limit_first(
    params: &ModelParams,
    init: &FirstOrderInit,
) -> (AsymptoticVerdict, AsymptoticVerdict) {
    let lp = params.lambda_plus;
    let lm = params.lambda_minus;
    let (crit_p, crit_m) = (is_critical(lp), is_critical(lm));
    let finite = |constant| AsymptoticVerdict::Finite {
        constant,
        fluctuation: None,
    };
    let minus = if crit_m {
        finite(init.c_minus)
    } else if lm < 1.0 {
        AsymptoticVerdict::Zero
    } else {
        AsymptoticVerdict::Diverges {
            growth: Growth::Exponential,
        }
    };
    let plus = if (lp > 1.0 && !crit_p) || (lm > 1.0 && !crit_m) {
        AsymptoticVerdict::Diverges {
            growth: Growth::Exponential,
        }
    } else if crit_p && crit_m {
        AsymptoticVerdict::Diverges {
            growth: Growth::Linear,
        }
    } else if crit_p {
        finite(init.c_plus + params.lambda_cross * init.c_minus / (1.0 - lm))
    } else if crit_m {
        finite(params.lambda_cross * init.c_minus / (1.0 - lp))
    } else {
        AsymptoticVerdict::Zero
    };
    (minus, plus)
}

/// Exponential rate at which the `(+)` constant approaches its limit, when it has one.
pub fn plus_convergence_rate(params: &ModelParams) -> Option<f64> {
    let (mp, mm) = (params.mu_plus(), params.mu_minus());
    let nonzero: Vec<f64> = [mp, mm]
        .into_iter()
        .filter(|m| m.abs() > CRITICAL_TOLERANCE)
        .map(f64::abs)
        .collect();
    if mp > CRITICAL_TOLERANCE || mm > CRITICAL_TOLERANCE || nonzero.is_empty() {
        return None;
    }
    nonzero.into_iter().reduce(f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Kernel;

    fn grid() -> FourierGrid {
        FourierGrid::new(3, 16, 20.0).unwrap()
    }

    fn params(lp: f64, lm: f64, l: f64) -> ModelParams {
        ModelParams::gaussian(lp, lm, l, 1.0, 3).unwrap()
    }

    fn bump(grid: &FourierGrid, amp: f64) -> Vec<f64> {
        grid.sample_space(|x| amp * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp())
    }

    #[test]
    fn critical_minus_is_stationary() {
        let p = params(0.5, 1.0, 0.5);
        let init = FirstOrderInit::constant(1.0, 2.0);
        for t in [0.0, 1.0, 10.0] {
            assert_eq!(k_minus_closed(&p, &init, &grid(), t).unwrap().constant, 2.0);
        }
    }

    #[test]
    fn subcritical_minus_decays() {
        let p = params(0.5, 0.5, 0.5);
        let init = FirstOrderInit::constant(1.0, 2.0);
        let c = k_minus_closed(&p, &init, &grid(), 2.0).unwrap().constant;
        assert!((c - 0.735_758_882_342_884_6).abs() < 1e-15);
    }

    #[test]
    fn fluctuation_shrinks_at_criticality() {
        let g = grid();
        let p = params(0.5, 1.0, 0.5);
        let mut init = FirstOrderInit::constant(1.0, 2.0);
        init.psi_minus = Some(bump(&g, 0.5));
        let fo = FirstOrder::new(&p, &init, &g).unwrap();
        let sup = |t| {
            fo.k_minus(t)
                .fluct_space(&g)
                .unwrap()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let (s0, s1, s5) = (sup(0.0), sup(1.0), sup(5.0));
        assert!(s1 < s0 && s5 < s1, "{s0} {s1} {s5}");
    }

    #[test]
    fn decoupled_plus_is_one_component_solution() {
        let p = params(0.7, 0.9, 0.0);
        let init = FirstOrderInit::constant(1.5, 2.0);
        let c = k_plus_closed(&p, &init, &grid(), 3.0).unwrap().constant;
        assert!((c - 1.5 * (-0.9f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn equal_rates_give_the_linear_term() {
        let nu = 0.8;
        let p = params(nu, nu, 0.3);
        let init = FirstOrderInit::constant(1.0, 2.0);
        for t in [0.5, 3.0, 7.0] {
            let c = k_plus_closed(&p, &init, &grid(), t).unwrap().constant;
            let expect = ((nu - 1.0) * t).exp() * (1.0 + 0.3 * 2.0 * t);
            assert!((c - expect).abs() < 1e-13 * expect);
        }
    }

    #[test]
    fn rhs_arithmetic() {
        let p = params(0.5, 1.0, 0.5);
        let g = grid();
        let s = build_symbols(&p, &g);
        let state = FirstOrderState {
            k_minus: SplitField::constant_only(&g, 2.0),
            k_plus: SplitField::constant_only(&g, 3.0),
            t: 0.0,
        };
        let (dm, dp) = first_order_rhs(&p, &s, &state);
        assert_eq!(dm.constant, 0.0);
        assert_eq!(dp.constant, -0.5);
    }

    #[test]
    fn rhs_matches_finite_difference_of_closed_form() {
        let g = grid();
        let p = params(0.8, 0.9, 0.3);
        let mut init = FirstOrderInit::constant(1.0, 2.0);
        init.psi_minus = Some(bump(&g, 0.4));
        init.psi_plus = Some(bump(&g, 0.2));
        let fo = FirstOrder::new(&p, &init, &g).unwrap();
        let h = 1e-6;
        let (dm, dp) = fo.rhs(&fo.state(0.0));
        let (a, b) = (fo.state(h), fo.state(-h));
        let fd_plus = (a.k_plus.constant - b.k_plus.constant) / (2.0 * h);
        assert!((fd_plus / dp.constant - 1.0).abs() < 1e-6);
        let fd_minus = (a.k_minus.constant - b.k_minus.constant) / (2.0 * h);
        assert!((fd_minus / dm.constant - 1.0).abs() < 1e-6);
        let scale = dp.fluct_sup();
        for i in 0..g.len() {
            let fd = (a.k_plus.fluct_hat[i] - b.k_plus.fluct_hat[i]) / (2.0 * h);
            assert!((fd - dp.fluct_hat[i]).norm() < 1e-6 * scale);
        }
    }

    #[test]
    fn ode_matches_closed_form() {
        let g = grid();
        let p = params(0.8, 0.9, 0.3);
        let mut init = FirstOrderInit::constant(1.0, 2.0);
        init.psi_minus = Some(bump(&g, 0.4));
        let fo = FirstOrder::new(&p, &init, &g).unwrap();
        let ode = fo.evolve_ode(1.0, 1e-3).unwrap();
        let exact = fo.state(1.0);
        assert!(ode.k_plus.relative_distance(&exact.k_plus) < 1e-8);
        assert!(ode.k_minus.relative_distance(&exact.k_minus) < 1e-8);
    }

    #[test]
    fn ode_is_fourth_order() {
        let g = FourierGrid::new(1, 16, 20.0).unwrap();
        let p = ModelParams::gaussian(0.8, 0.9, 0.3, 1.0, 1).unwrap();
        let fo = FirstOrder::new(&p, &FirstOrderInit::constant(1.0, 2.0), &g).unwrap();
        let exact = fo.k_plus(2.0).constant;
        let err = |dt| (fo.evolve_ode(2.0, dt).unwrap().k_plus.constant - exact).abs();
        let ratio = err(0.2) / err(0.1);
        assert!((ratio - 16.0).abs() < 1.5, "{ratio}");
    }

    #[test]
    fn zero_time_returns_init() {
        let g = grid();
        let p = params(0.8, 0.9, 0.3);
        let mut init = FirstOrderInit::constant(1.0, 2.0);
        init.psi_minus = Some(bump(&g, 0.4));
        let fo = FirstOrder::new(&p, &init, &g).unwrap();
        assert_eq!(fo.evolve_ode(0.0, 1e-3).unwrap(), fo.initial_state());
    }

    #[test]
    fn stability_guard() {
        let g = grid();
        let p = params(0.8, 0.9, 0.3);
        let fo = FirstOrder::new(&p, &FirstOrderInit::constant(1.0, 1.0), &g).unwrap();
        assert!(matches!(fo.evolve_ode(1.0, 0.6), Err(EvolutionError::Stability { .. })));
    }

    #[test]
    fn verdicts() {
        let init = FirstOrderInit::constant(1.0, 2.0);
        let (m, pl) = limit_first(&params(1.0, 0.5, 0.5), &init);
        assert_eq!(m, AsymptoticVerdict::Zero);
        assert_eq!(pl.finite_constant(), Some(3.0));
        let (m, pl) = limit_first(&params(0.5, 1.0, 0.25), &init);
        assert_eq!(m.finite_constant(), Some(2.0));
        assert_eq!(pl.finite_constant(), Some(1.0));
        let (m, pl) = limit_first(&params(0.9, 0.9, 0.5), &init);
        assert_eq!((m, pl), (AsymptoticVerdict::Zero, AsymptoticVerdict::Zero));
        let (_, pl) = limit_first(&params(1.0, 1.0, 0.5), &init);
        assert_eq!(pl, AsymptoticVerdict::Diverges { growth: Growth::Linear });
        let (m, pl) = limit_first(&params(0.5, 1.5, 0.5), &init);
        assert_eq!(m, AsymptoticVerdict::Diverges { growth: Growth::Exponential });
        assert_eq!(pl, AsymptoticVerdict::Diverges { growth: Growth::Exponential });
        let (m, _) = limit_first(&params(1.5, 0.5, 0.5), &init);
        assert_eq!(m, AsymptoticVerdict::Zero);
    }

    #[test]
    fn memory_dichotomy() {
        let base = FirstOrderInit::constant(1.0, 2.0);
        let bumped = FirstOrderInit::constant(1.5, 2.0);
        let lim = |p: &ModelParams, i: &FirstOrderInit| limit_first(p, i).1.finite_constant().unwrap();
        let p1 = params(1.0, 0.5, 0.5);
        assert!(((lim(&p1, &bumped) - lim(&p1, &base)) / 0.5 - 1.0).abs() < 1e-14);
        let p2 = params(0.5, 1.0, 0.25);
        assert_eq!(lim(&p2, &bumped), lim(&p2, &base));
    }

    #[test]
    fn approach_rate_is_recovered() {
        let g = grid();
        for (p, rho) in [(params(1.0, 0.5, 0.5), 0.5), (params(0.7, 1.0, 0.5), 0.3)] {
            let init = FirstOrderInit::constant(1.0, 2.0);
            let fo = FirstOrder::new(&p, &init, &g).unwrap();
            let lim = limit_first(&p, &init).1.finite_constant().unwrap();
            let ts: Vec<f64> = (0..=30).map(|i| 10.0 + i as f64).collect();
            let ys: Vec<f64> = ts.iter().map(|&t| (fo.k_plus(t).constant - lim).abs().ln()).collect();
            let (mt, my) = (ts.iter().sum::<f64>() / 31.0, ys.iter().sum::<f64>() / 31.0);
            let slope = ts.iter().zip(&ys).map(|(t, y)| (t - mt) * (y - my)).sum::<f64>()
                / ts.iter().map(|t| (t - mt).powi(2)).sum::<f64>();
            assert!((-slope / rho - 1.0).abs() < 0.1, "{slope}");
            assert!((plus_convergence_rate(&p).unwrap() - rho).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_stay_nonnegative() {
        let g = FourierGrid::new(1, 8, 10.0).unwrap();
        let k = Kernel::tent(1.0, 1).unwrap();
        let p = ModelParams::new(1.2, 0.3, 2.0, k, k, k).unwrap();
        let fo = FirstOrder::new(&p, &FirstOrderInit::constant(0.1, 3.0), &g).unwrap();
        for i in 0..100 {
            let s = fo.state(i as f64 * 0.3);
            assert!(s.k_plus.constant >= 0.0 && s.k_minus.constant >= 0.0);
        }
    }
}
