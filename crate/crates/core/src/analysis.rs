//! Numerical witnesses for the integrability lemmas, integrable majorants of
//! the second-order fluctuations, and the Monte Carlo comparison engine.
//!
//! Grid checks are evidence, not proofs, and reports are worded accordingly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::evolution1::{minus_constant, plus_constant, EvolutionError};
use crate::evolution2::{theorem_case, SecondOrder};
use crate::model::{FirstOrderInit, Kernel, ModelParams, Point, SecondOrderInit};
use crate::quadrature::GaussLegendre;
use crate::simulator::{run_replicas, EstimateSeries, SimConfig, SimError};
use crate::spectral::{build_symbols, phi1, FourierGrid, SpectralError, SymbolTable};

/// Two-sided normal tail mass beyond 4σ.
const TAIL_AT_FOUR: f64 = 6.334e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("comparison needs at least 2 replicas (got {0})")]
    TooFewReplicas(usize),
    #[error("{0}")]
    Precondition(String),
}

/// Outcome of the lattice-sum study for `∫ |b(p)| / (1 - â(p)) dp`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IntAReport {
    pub dim: usize,
    /// Riemann sums over `p ≠ 0`, one per grid.
    pub sums: Vec<f64>,
    /// Successive ratios `sums[k+1] / sums[k]`.
    pub ratios: Vec<f64>,
    /// Every successive relative change is below 5%.
    pub converges: bool,
    /// Every successive ratio is at least 1.9.
    pub diverges: bool,
    /// Log-log slope of `1 - â` against `|p|` near the origin.
    pub slope: f64,
    pub slope_ok: bool,
}

impl IntAReport {
    pub fn summary(&self) -> String {
        let verdict = if self.converges {
            "consistent with integrability"
        } else if self.diverges {
            "lattice sums grow under refinement: not integrable"
        } else {
            "inconclusive"
        };
        format!(
            "int_a d={}: sums {:?}, {verdict}; near-origin slope {:.4} ({})",
            self.dim,
            self.sums,
            self.slope,
            if self.slope_ok { "consistent with quadratic decay" } else { "not quadratic" }
        )
    }
}

/// Grids `(n, L) = (32, 40s), (64, 80s), (128, 160s)` for kernel scale `s`:
/// each halves the frequency spacing and keeps the frequency cut-off.
pub fn int_a_grids(dim: usize, scale: f64) -> Result<Vec<FourierGrid>, SpectralError> {
    [(32, 40.0), (64, 80.0), (128, 160.0)]
        .iter()
        .map(|&(n, l)| FourierGrid::new(dim, n, l * scale))
        .collect()
}

/// Lattice sums of `|b/(â - 1)|` over refining grids, plus the slope of
/// `1 - â` near `p = 0`.
pub fn check_lemma_int_a<B>(kernel: &Kernel, b: B, grids: &[FourierGrid]) -> IntAReport
where
    B: Fn(&Point) -> f64 + Sync,
{
    let sums: Vec<f64> = grids
        .iter()
        .map(|g| {
            let total: f64 = (1..g.len())
                .into_par_iter()
                .map(|i| {
                    let p = g.frequency(i);
                    (b(&p) / (1.0 - kernel.fourier(&p))).abs()
                })
                .sum();
            total * g.dp_volume()
        })
        .collect();
    let ratios: Vec<f64> = sums.windows(2).map(|w| w[1] / w[0]).collect();
    let slope = near_origin_slope(kernel);
    IntAReport {
        dim: kernel.dim(),
        converges: !ratios.is_empty() && ratios.iter().all(|r| (r - 1.0).abs() < 0.05),
        diverges: !ratios.is_empty() && ratios.iter().all(|&r| r >= 1.9),
        sums,
        ratios,
        slope,
        slope_ok: (slope - 2.0).abs() <= 0.1,
    }
}

/// Least-squares slope of `log(1 - â(p))` on `log p` for `p s ∈ [0.01, 0.1]`.
pub fn near_origin_slope(kernel: &Kernel) -> f64 {
    let s = kernel.scale();
    let pts: Vec<(f64, f64)> = (0..=20)
        .map(|k| {
            let p = 0.01 * 10f64.powf(k as f64 / 20.0) / s;
            (p.ln(), (1.0 - kernel.fourier_radial(p)).ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BoundintReport {
    pub cases: usize,
    /// Cases where `phi1` left `[0, -1/b)` somewhere on the grid.
    pub violations: usize,
    /// Cases where the grid argmax is more than one step from `ln(a/b)/(b-a)`.
    pub maximizer_mismatches: usize,
    /// Largest observed `phi1 · (-b)`; below 1 when the bound holds.
    pub worst_ratio: f64,
}

impl BoundintReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.maximizer_mismatches == 0
    }
}

/// Sweeps random `a ≠ b < 0` and checks `0 ≤ phi1(a, b, t) < -1/b` on a
/// dense grid over `[0, 100/max(|a|,|b|)]`, along with the location of the
/// interior maximum.
pub fn check_lemma_boundint(num_cases: usize, seed: u64) -> BoundintReport {
    const STEPS: usize = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(f64, f64)> = (0..num_cases)
        .map(|_| loop {
            let a = -(10f64.powf(rng.random_range(-2.0..1.0)));
            let b = -(10f64.powf(rng.random_range(-2.0..1.0)));
            if (a - b).abs() > 1e-3 * a.abs().max(b.abs()) {
                break (a, b);
            }
        })
        .collect();
    let results: Vec<(bool, bool, f64)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let t_max = 100.0 / a.abs().max(b.abs());
            let dt = t_max / STEPS as f64;
            let mut violated = false;
            let mut worst: f64 = 0.0;
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
            for k in 0..=STEPS {
                let t = k as f64 * dt;
                let h = phi1(a, b, t);
                if !(h >= 0.0 && h < -1.0 / b + 1e-12) {
                    violated = true;
                }
                worst = worst.max(-h * b);
                if h > best {
                    best = h;
                    arg = t;
                }
            }
            let t0 = (a / b).ln() / (b - a);
            (violated, (arg - t0).abs() > dt, worst)
        })
        .collect();
    BoundintReport {
        cases: num_cases,
        violations: results.iter().filter(|r| r.0).count(),
        maximizer_mismatches: results.iter().filter(|r| r.1).count(),
        worst_ratio: results.iter().map(|r| r.2).fold(0.0, f64::max),
    }
}

/// Bound on `sup_t E[x₀,…,x_k](t)` for non-positive nodes: the product of
/// `1/|xᵢ|` over all nodes but the one nearest zero. Infinite if a positive
/// node occurs or two nodes vanish.
pub fn divided_difference_bound(nodes: &[f64]) -> f64 {
    if nodes.iter().any(|&x| x > 0.0) {
        return f64::INFINITY;
    }
    let mut mags: Vec<f64> = nodes.iter().map(|x| x.abs()).collect();
    mags.sort_by(f64::total_cmp);
    mags[1..].iter().map(|m| 1.0 / m).product()
}

/// Time-independent bounds `|Û_t(p)| ≤ M(p)` for the three pair channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Majorant {
    pub mm: Vec<f64>,
    pub pm: Vec<f64>,
    pub pp: Vec<f64>,
}

/// Sums `|coefficient| · bound` over every term of the closed forms. The
/// `p = 0` entry is infinite in both theorem cases.
pub fn build_majorant(
    params: &ModelParams,
    grid: &FourierGrid,
    c_plus: f64,
    c_minus: f64,
    phi_mm_hat: &[f64],
    phi_pm_hat: &[f64],
) -> Result<Majorant, AnalysisError> {
    theorem_case(params)?;
    let s = build_symbols(params, grid);
    let n = grid.len();
    if phi_mm_hat.len() != n || phi_pm_hat.len() != n {
        return Err(SpectralError::SizeMismatch {
            expected: n,
            got: phi_mm_hat.len().min(phi_pm_hat.len()),
        }
        .into());
    }
    let rows: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|i| majorant_at(&s, i, c_plus, c_minus, phi_mm_hat[i], phi_pm_hat[i]))
        .collect();
    Ok(Majorant {
        mm: rows.iter().map(|r| r[0]).collect(),
        pm: rows.iter().map(|r| r[1]).collect(),
        pp: rows.iter().map(|r| r[2]).collect(),
    })
}

fn majorant_at(s: &SymbolTable, i: usize, cp: f64, cm: f64, pmm: f64, ppm: f64) -> [f64; 3] {
    let b = divided_difference_bound;
    let (l, lp, lm) = (s.lambda_cross, s.lambda_plus, s.lambda_minus);
    let (a, ap, am) = (s.a_cross[i], s.a_plus[i], s.a_minus[i]);
    let (fp2, h3, fm2) = (2.0 * s.f_plus[i], s.h3[i], 2.0 * s.f_minus[i]);
    let (mp, mm) = (s.mu_plus, s.mu_minus);
    let term = |coef: f64, nodes: &[f64]| if coef == 0.0 { 0.0 } else { coef.abs() * b(nodes) };
    let m_mm = term(2.0 * lm * am * cm, &[fm2, mm]);
    let m_pm = term(l * a * cm, &[h3, mm])
        + term(l * a * pmm, &[h3, fm2])
        + term(2.0 * l * a * lm * am * cm, &[h3, fm2, mm]);
    let m_pp = term(2.0 * lp * ap * cp, &[fp2, mp])
        + term(2.0 * lp * ap * l * cm, &[fp2, mp, mm])
        + term(2.0 * l * a * ppm, &[fp2, h3])
        + term(2.0 * l * l * a * a * cm, &[fp2, h3, mm])
        + term(2.0 * l * l * a * a * pmm, &[fp2, h3, fm2])
        + term(4.0 * l * l * a * a * lm * am * cm, &[fp2, h3, fm2, mm]);
    [m_mm, m_pm, m_pp]
}

impl Majorant {
    /// Lattice integrals `Σ_{p≠0} M(p) Δp^d` per channel.
    pub fn lattice_integrals(&self, grid: &FourierGrid) -> [f64; 3] {
        let sum = |v: &[f64]| v[1..].iter().sum::<f64>() * grid.dp_volume();
        [sum(&self.mm), sum(&self.pm), sum(&self.pp)]
    }

    /// Whether `|Û_t(p)| ≤ M(p)` at every `p ≠ 0` for each of `times`.
    pub fn dominates(&self, problem: &SecondOrder, times: &[f64]) -> bool {
        let ok = |m: f64, u: f64| u <= m * (1.0 + 1e-10) + 1e-300;
        times.iter().all(|&t| {
            (1..problem.grid.len()).into_par_iter().all(|i| {
                ok(self.mm[i], problem.u_hat_mm(i, t).norm())
                    && ok(self.pm[i], problem.u_hat_pm(i, t).norm())
                    && ok(self.pp[i], problem.u_hat_pp(i, t).norm())
            })
        })
    }
}

/// The denominator estimate `(μ⁻-f⁻-f⁺)(μ⁻-2f⁻) ≥ -2μ⁺(1-â⁻)` used when `λ⁻ = 1`.
pub fn denominator_bound_holds(symbols: &SymbolTable) -> bool {
    (0..symbols.len()).all(|i| {
        let lhs = symbols.h4[i] * symbols.h2[i];
        lhs >= -2.0 * symbols.mu_plus * (1.0 - symbols.a_minus[i]) * (1.0 - 1e-12)
    })
}

/// Shell average of `cos(p·x)` over `lo ≤ |x| < hi` in `R^d`, for `|p| = p`.
pub fn shell_average(dim: usize, p: f64, lo: f64, hi: f64) -> f64 {
    if p == 0.0 {
        return 1.0;
    }
    match dim {
        1 => ((p * hi).sin() - (p * lo).sin()) / (p * (hi - lo)),
        _ => {
            let gl = GaussLegendre::new(16);
            let panels = 1 + (p * (hi - lo)) as usize;
            if dim == 2 {
                gl.integrate(|r| libm::j0(p * r) * r, lo, hi, panels) / ((hi * hi - lo * lo) / 2.0)
            } else {
                // sin(pr)/(pr) weighted by r²
                gl.integrate(|r| (p * r).sin() * r / p, lo, hi, panels) / ((hi.powi(3) - lo.powi(3)) / 3.0)
            }
        }
    }
}

/// Exact expectations of the simulator's estimators at one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSnapshot {
    pub t: f64,
    pub density_plus: f64,
    pub density_minus: f64,
    pub k_pp: Vec<f64>,
    pub k_pm: Vec<f64>,
    pub k_mm: Vec<f64>,
}

/// Closed-form expectations on the torus of side `L` from Poisson data.
///
/// Pair bins are shell averages of `C + L^{-d} Σ_p F̂(p) e^{ip·x}`, the
/// lattice sum being exact for the periodized kernels the simulator uses.
pub fn analytic_series(
    params: &ModelParams,
    c_plus: f64,
    c_minus: f64,
    cfg: &SimConfig,
    grid_n: usize,
) -> Result<Vec<AnalyticSnapshot>, AnalysisError> {
    let grid = FourierGrid::new(cfg.dim, grid_n, cfg.box_length)?;
    let init1 = FirstOrderInit::constant(c_plus, c_minus);
    let problem = SecondOrder::new(params, &SecondOrderInit::poissonian(&init1), &init1, &grid)?;
    let bins = cfg.bins();
    // shell weights depend only on |p|
    let weights: Vec<Vec<f64>> = (0..bins)
        .map(|b| {
            let (lo, hi) = cfg.bin_edges(b);
            (0..grid.len())
                .into_par_iter()
                .map(|i| shell_average(cfg.dim, grid.frequency_norm(i), lo, hi))
                .collect()
        })
        .collect();
    let inv_vol = 1.0 / cfg.volume();
    let mut out = Vec::with_capacity(cfg.snapshots.len());
    for &t in &cfg.snapshots {
        let (state, _) = problem.k2_closed(t)?;
        let bin_values = |f: &crate::spectral::SplitField| -> Vec<f64> {
            weights
                .iter()
                .map(|w| f.constant + inv_vol * f.fluct_hat.iter().zip(w).map(|(z, w)| z.re * w).sum::<f64>())
                .collect()
        };
        out.push(AnalyticSnapshot {
            t,
            density_plus: plus_constant(params, c_plus, c_minus, t),
            density_minus: minus_constant(params, c_minus, t),
            k_pp: bin_values(&state.k_pp),
            k_pm: bin_values(&state.k_pm),
            k_mm: bin_values(&state.k_mm),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub observable: String,
    pub r_lo: Option<f64>,
    pub r_hi: Option<f64>,
    pub analytic: f64,
    pub mc_mean: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub threshold: f64,
    pub pass: bool,
    pub note: Option<String>,
}

impl ComparisonReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }

    pub fn summary(&self) -> String {
        let failed = self.rows.iter().filter(|r| r.z.abs() > self.threshold).count();
        let mut s = format!(
            "{} comparisons, {} beyond |z| > {}, max |z| = {:.3}: {}",
            self.rows.len(),
            failed,
            self.threshold,
            self.max_abs_z(),
            if self.pass { "PASS" } else { "FAIL" }
        );
        if let Some(note) = &self.note {
            s.push('\n');
            s.push_str(note);
        }
        s
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,observable,r_lo,r_hi,analytic,mc_mean,se,z")?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.t,
                r.observable,
                opt(r.r_lo),
                opt(r.r_hi),
                r.analytic,
                r.mc_mean,
                r.se,
                r.z
            )?;
        }
        Ok(())
    }
}

/// Finite z-score; a zero standard error counts as exact agreement only if
/// the means coincide.
fn z_score(mean: f64, analytic: f64, se: f64) -> f64 {
    let diff = mean - analytic;
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::MAX.copysign(diff)
    }
}

/// Rows for every snapshot, density and (optionally) pair bin.
pub fn compare_series(
    series: &EstimateSeries,
    analytic: &[AnalyticSnapshot],
    threshold: f64,
    include_pairs: bool,
) -> Result<ComparisonReport, AnalysisError> {
    if series.replicas_used < 2 {
        return Err(AnalysisError::TooFewReplicas(series.replicas_used));
    }
    let mut rows = Vec::new();
    for (s, a) in series.snapshots.iter().zip(analytic) {
        let mut push = |name: &str, bin: Option<(f64, f64)>, exact: f64, est: crate::simulator::Estimate| {
            rows.push(ComparisonRow {
                t: s.t,
                observable: name.to_string(),
                r_lo: bin.map(|b| b.0),
                r_hi: bin.map(|b| b.1),
                analytic: exact,
                mc_mean: est.mean,
                se: est.se,
                z: z_score(est.mean, exact, est.se),
            });
        };
        push("density_plus", None, a.density_plus, s.density_plus);
        push("density_minus", None, a.density_minus, s.density_minus);
        if include_pairs {
            for (name, est, exact) in [("k_pp", &s.k_pp, &a.k_pp), ("k_pm", &s.k_pm, &a.k_pm), ("k_mm", &s.k_mm, &a.k_mm)] {
                for (b, (e, x)) in est.iter().zip(exact).enumerate() {
                    push(name, Some(series.bin_edges[b]), *x, *e);
                }
            }
        }
    }
    let pass = rows.iter().all(|r| r.z.abs() <= threshold);
    let note = (rows.len() > 1).then(|| {
        format!(
            "Bonferroni: {} simultaneous comparisons; at |z| <= 4 the family-wise false-alarm rate is at most {:.2e} under the normal approximation.",
            rows.len(),
            rows.len() as f64 * TAIL_AT_FOUR
        )
    });
    Ok(ComparisonReport {
        rows,
        threshold,
        pass,
        note,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub threshold: f64,
    pub grid_n: usize,
    pub include_pairs: bool,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            threshold: 4.0,
            grid_n: 64,
            include_pairs: true,
        }
    }
}

/// Simulates from Poisson data and scores the estimates against the closed forms.
pub fn compare_sim_analytic(
    params: &ModelParams,
    c_plus: f64,
    c_minus: f64,
    cfg: &SimConfig,
    opts: CompareOptions,
) -> Result<ComparisonReport, AnalysisError> {
    compare_mismatched(params, params, c_plus, c_minus, cfg, opts)
}

/// As [`compare_sim_analytic`] but with separate parameters for the two sides.
pub fn compare_mismatched(
    sim_params: &ModelParams,
    analytic_params: &ModelParams,
    c_plus: f64,
    c_minus: f64,
    cfg: &SimConfig,
    opts: CompareOptions,
) -> Result<ComparisonReport, AnalysisError> {
    if cfg.replicas < 2 {
        return Err(AnalysisError::TooFewReplicas(cfg.replicas));
    }
    let series = run_replicas(sim_params, c_plus, c_minus, cfg)?;
    let analytic = analytic_series(analytic_params, c_plus, c_minus, cfg, opts.grid_n)?;
    compare_series(&series, &analytic, opts.threshold, opts.include_pairs)
}

/// Null calibration: repeats a pure-death comparison with fresh seeds and
/// returns the fraction of runs that fail.
pub fn null_false_failure_rate(runs: usize, base: &SimConfig, c: f64) -> Result<f64, AnalysisError> {
    let params = ModelParams::gaussian(0.0, 0.0, 0.0, 1.0, base.dim).map_err(EvolutionError::from)?;
    let opts = CompareOptions {
        include_pairs: false,
        ..Default::default()
    };
    let mut failures = 0;
    for k in 0..runs {
        let mut cfg = base.clone();
        cfg.seed = base.seed.wrapping_add(k as u64);
        if !compare_sim_analytic(&params, c, c, &cfg, opts)?.pass {
            failures += 1;
        }
    }
    Ok(failures as f64 / runs as f64)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic p-value of a two-sample KS statistic.
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut q = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        q += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    q.clamp(0.0, 1.0)
}
