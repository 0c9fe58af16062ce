//! Exact event-driven simulation of the process on a periodic box.
//!
//! Each particle dies at rate 1. A (+) particle gives birth at rate λ⁺ and a
//! (−) particle at rate λ⁻, with offspring of the parent's type displaced by
//! the type's kernel. A (−) particle also seeds (+) offspring at rate λ via
//! the cross kernel. Positions wrap around the torus `[0, L)^d`.
//!
//! The (−) system evolves on its own, so each replica draws (−) events from
//! its own random stream. The (−) trajectory for a given seed is therefore
//! the same whatever the (+) rates are.

use std::collections::HashSet;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{unit_ball_volume, ModelParams, Point};

pub const DEFAULT_MAX_POPULATION: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("box length must be positive (got {0})")]
    BoxLength(f64),
    #[error("dimension must be 1, 2 or 3 (got {0})")]
    Dimension(usize),
    #[error("model dimension {model} does not match simulation dimension {sim}")]
    DimensionMismatch { model: usize, sim: usize },
    #[error("bin width must be positive (got {0})")]
    BinWidth(f64),
    #[error("pair range {r_max} must lie in (0, L/2] = (0, {half}]")]
    PairRange { r_max: f64, half: f64 },
    #[error("snapshot times must be sorted and lie in [0, t_end]")]
    Snapshots,
    #[error("at least one replica is required")]
    Replicas,
    #[error("expected initial {kind} count {expected:.1} is below 10; enlarge the box")]
    SparseStart { kind: &'static str, expected: f64 },
    #[error("intensity {0} must be finite and non-negative")]
    Intensity(f64),
}

/// Box, horizon and estimator settings shared by all replicas.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub box_length: f64,
    pub dim: usize,
    pub t_end: f64,
    pub snapshots: Vec<f64>,
    pub seed: u64,
    pub replicas: usize,
    pub bin_width: f64,
    /// Upper edge of the last pair-correlation bin; at most `L/2`.
    pub r_max: f64,
    /// Pair histograms cost `O(n²)` per snapshot; density-only runs skip them.
    pub pairs: bool,
    pub max_population: usize,
}

impl SimConfig {
    pub fn new(box_length: f64, dim: usize, snapshots: Vec<f64>, seed: u64, replicas: usize) -> Self {
        let t_end = snapshots.iter().copied().fold(0.0, f64::max);
        Self {
            box_length,
            dim,
            t_end,
            snapshots,
            seed,
            replicas,
            bin_width: 0.5,
            r_max: (3.0f64).min(box_length / 2.0),
            pairs: true,
            max_population: DEFAULT_MAX_POPULATION,
        }
    }

    pub fn volume(&self) -> f64 {
        self.box_length.powi(self.dim as i32)
    }

    /// Number of pair bins; zero when pair histograms are off.
    pub fn bins(&self) -> usize {
        if self.pairs {
            (self.r_max / self.bin_width).ceil() as usize
        } else {
            0
        }
    }

    pub fn bin_edges(&self, bin: usize) -> (f64, f64) {
        let lo = bin as f64 * self.bin_width;
        (lo, (lo + self.bin_width).min(self.r_max))
    }

    /// Structural checks, plus a sanity floor on expected initial counts for
    /// each positive intensity.
    pub fn validate(&self, c_plus: f64, c_minus: f64) -> Result<(), SimError> {
        if !(self.box_length > 0.0 && self.box_length.is_finite()) {
            return Err(SimError::BoxLength(self.box_length));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(SimError::Dimension(self.dim));
        }
        if !(self.bin_width > 0.0) {
            return Err(SimError::BinWidth(self.bin_width));
        }
        if !(self.r_max > 0.0 && self.r_max <= self.box_length / 2.0) {
            return Err(SimError::PairRange {
                r_max: self.r_max,
                half: self.box_length / 2.0,
            });
        }
        let sorted = self.snapshots.windows(2).all(|w| w[0] <= w[1]);
        if !sorted || self.snapshots.iter().any(|&t| !(0.0..=self.t_end).contains(&t)) {
            return Err(SimError::Snapshots);
        }
        if self.replicas == 0 {
            return Err(SimError::Replicas);
        }
        for (kind, c) in [("(+)", c_plus), ("(-)", c_minus)] {
            if !(c.is_finite() && c >= 0.0) {
                return Err(SimError::Intensity(c));
            }
            let expected = c * self.volume();
            if c > 0.0 && expected < 10.0 {
                return Err(SimError::SparseStart { kind, expected });
            }
        }
        Ok(())
    }
}

/// Particle positions of both types; no coordinate tuple is shared.
#[derive(Debug, Clone, Default)]
pub struct Configuration {
    pub plus: Vec<Point>,
    pub minus: Vec<Point>,
    occupied: HashSet<[u64; 3]>,
}

fn key(x: &Point) -> [u64; 3] {
    [x[0].to_bits(), x[1].to_bits(), x[2].to_bits()]
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.plus.len() + self.minus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts unless the position is taken; returns whether it was.
    pub fn insert(&mut self, plus: bool, x: Point) -> bool {
        if !self.occupied.insert(key(&x)) {
            return false;
        }
        if plus { &mut self.plus } else { &mut self.minus }.push(x);
        true
    }

    fn remove(&mut self, plus: bool, index: usize) {
        let x = if plus { &mut self.plus } else { &mut self.minus }.swap_remove(index);
        self.occupied.remove(&key(&x));
    }

    pub fn is_disjoint(&self) -> bool {
        let plus: HashSet<_> = self.plus.iter().map(key).collect();
        self.minus.iter().all(|x| !plus.contains(&key(x)))
    }
}

/// Total jump rate `|γ⁺|(1+λ⁺) + |γ⁻|(1+λ⁻+λ)`.
pub fn total_rate(params: &ModelParams, config: &Configuration) -> f64 {
    config.plus.len() as f64 * (1.0 + params.lambda_plus)
        + config.minus.len() as f64 * (1.0 + params.lambda_minus + params.lambda_cross)
}

fn uniform_point<R: Rng + ?Sized>(dim: usize, length: f64, rng: &mut R) -> Point {
    let mut x = [0.0; 3];
    for c in x.iter_mut().take(dim) {
        *c = rng.random::<f64>() * length;
    }
    x
}

fn wrap(x: Point, dim: usize, length: f64) -> Point {
    let mut y = x;
    for c in y.iter_mut().take(dim) {
        *c = c.rem_euclid(length);
        // rem_euclid of a tiny negative number rounds up to `length`
        if *c >= length {
            *c = 0.0;
        }
    }
    y
}

fn seed_points<R: Rng + ?Sized>(config: &mut Configuration, plus: bool, c: f64, cfg: &SimConfig, rng: &mut R) {
    let mean = c * cfg.volume();
    if mean <= 0.0 {
        return;
    }
    let count = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    let mut placed = 0;
    while placed < count {
        if config.insert(plus, uniform_point(cfg.dim, cfg.box_length, rng)) {
            placed += 1;
        }
    }
}

/// Independent Poisson fields of intensities `c⁺`, `c⁻` on the box, both
/// drawn from one stream.
pub fn init_poisson<R: Rng + ?Sized>(c_plus: f64, c_minus: f64, cfg: &SimConfig, rng: &mut R) -> Configuration {
    let mut config = Configuration::new();
    seed_points(&mut config, false, c_minus, cfg, rng);
    seed_points(&mut config, true, c_plus, cfg, rng);
    config
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Event {
    PlusDeath,
    PlusBirth,
    CrossBirth,
    MinusDeath,
    MinusBirth,
}

impl Event {
    pub const ALL: [Event; 5] = [
        Event::PlusDeath,
        Event::PlusBirth,
        Event::CrossBirth,
        Event::MinusDeath,
        Event::MinusBirth,
    ];
}

/// Channel rates in the order of [`Event::ALL`].
pub fn channel_rates(params: &ModelParams, config: &Configuration) -> [f64; 5] {
    let (np, nm) = (config.plus.len() as f64, config.minus.len() as f64);
    [
        np,
        params.lambda_plus * np,
        params.lambda_cross * nm,
        nm,
        params.lambda_minus * nm,
    ]
}

fn apply<R: Rng + ?Sized>(params: &ModelParams, config: &mut Configuration, event: Event, length: f64, rng: &mut R) {
    let dim = params.dim;
    let pick = |n: usize, rng: &mut R| rng.random_range(0..n);
    match event {
        Event::PlusDeath => {
            let i = pick(config.plus.len(), rng);
            config.remove(true, i);
        }
        Event::MinusDeath => {
            let i = pick(config.minus.len(), rng);
            config.remove(false, i);
        }
        Event::PlusBirth | Event::MinusBirth | Event::CrossBirth => {
            let (parents, kernel, child_plus) = match event {
                Event::PlusBirth => (&config.plus, &params.kernel_plus, true),
                Event::MinusBirth => (&config.minus, &params.kernel_minus, false),
                _ => (&config.minus, &params.kernel_cross, true),
            };
            let parent = parents[pick(parents.len(), rng)];
            // a coincidence has probability zero; redraw the displacement if one occurs
            loop {
                let d = kernel.sample(rng);
                let mut x = parent;
                for a in 0..dim {
                    x[a] += d[a];
                }
                if config.insert(child_plus, wrap(x, dim, length)) {
                    break;
                }
            }
        }
    }
}

/// One event of the joint chain from a single stream. Returns the event and
/// the waiting time, or `None` in the absorbing empty state.
pub fn step<R: Rng + ?Sized>(
    params: &ModelParams,
    config: &mut Configuration,
    length: f64,
    rng: &mut R,
) -> Option<(Event, f64)> {
    let rates = channel_rates(params, config);
    let total = total_rate(params, config);
    if total <= 0.0 {
        return None;
    }
    let wait: f64 = Exp1.sample(rng);
    let wait = wait / total;
    let mut u = rng.random::<f64>() * total;
    let mut event = Event::MinusBirth;
    for (e, r) in Event::ALL.iter().zip(rates) {
        if r > 0.0 && u < r {
            event = *e;
            break;
        }
        u -= r;
    }
    if rates[Event::ALL.iter().position(|e| *e == event).unwrap()] == 0.0 {
        // round-off pushed `u` past the last channel; take the last live one
        event = *Event::ALL.iter().zip(rates).rev().find(|(_, r)| *r > 0.0).unwrap().0;
    }
    apply(params, config, event, length, rng);
    Some((event, wait))
}

/// Stream for a replica and channel: 0 drives the (−) system, 1 the (+) system.
pub fn stream(seed: u64, replica: usize, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * replica as u64 + channel);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum RunStatus {
    Completed,
    /// Population exceeded the configured cap; later snapshots are missing.
    GuardTripped,
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::GuardTripped => "guard_tripped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSnapshot {
    pub t: f64,
    pub n_plus: usize,
    pub n_minus: usize,
    /// Ordered pair counts per distance bin.
    pub hist_pp: Vec<u64>,
    pub hist_pm: Vec<u64>,
    pub hist_mm: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaTrajectory {
    pub replica: usize,
    pub status: RunStatus,
    pub events: u64,
    pub snapshots: Vec<ReplicaSnapshot>,
}

fn torus_distance(x: &Point, y: &Point, dim: usize, length: f64) -> f64 {
    let mut s = 0.0;
    for a in 0..dim {
        let mut d = (x[a] - y[a]).abs();
        if d > length / 2.0 {
            d = length - d;
        }
        s += d * d;
    }
    s.sqrt()
}

/// Ordered pair counts by distance; `other = None` pairs a set with itself.
pub fn pair_histogram(points: &[Point], other: Option<&[Point]>, cfg: &SimConfig) -> Vec<u64> {
    let bins = cfg.bins();
    let mut hist = vec![0u64; bins];
    if bins == 0 {
        return hist;
    }
    let mut count = |x: &Point, y: &Point, weight: u64| {
        let r = torus_distance(x, y, cfg.dim, cfg.box_length);
        if r < cfg.r_max {
            let b = ((r / cfg.bin_width) as usize).min(bins - 1);
            hist[b] += weight;
        }
    };
    match other {
        None => {
            for i in 0..points.len() {
                for j in i + 1..points.len() {
                    count(&points[i], &points[j], 2);
                }
            }
        }
        Some(ys) => {
            for x in points {
                for y in ys {
                    count(x, y, 1);
                }
            }
        }
    }
    hist
}

fn snapshot(config: &Configuration, t: f64, cfg: &SimConfig) -> ReplicaSnapshot {
    ReplicaSnapshot {
        t,
        n_plus: config.plus.len(),
        n_minus: config.minus.len(),
        hist_pp: pair_histogram(&config.plus, None, cfg),
        hist_pm: pair_histogram(&config.plus, Some(&config.minus), cfg),
        hist_mm: pair_histogram(&config.minus, None, cfg),
    }
}

/// One replica from Poisson initial data.
///
/// The (−) clock runs at `|γ⁻|(1+λ⁻)` on stream 0 and is redrawn only after
/// (−) events. The (+) clock, carrying `|γ⁺|(1+λ⁺) + λ|γ⁻|`, runs on stream 1
/// and is redrawn after every event, which memorylessness allows. The earlier
/// clock fires, so the superposition has the total rate of the process.
pub fn run_replica(params: &ModelParams, c_plus: f64, c_minus: f64, cfg: &SimConfig, replica: usize) -> ReplicaTrajectory {
    let mut rng_minus = stream(cfg.seed, replica, 0);
    let mut rng_plus = stream(cfg.seed, replica, 1);
    let mut config = Configuration::new();
    seed_points(&mut config, false, c_minus, cfg, &mut rng_minus);
    seed_points(&mut config, true, c_plus, cfg, &mut rng_plus);
    let (lp, lm, l) = (params.lambda_plus, params.lambda_minus, params.lambda_cross);
    let clock = |rate: f64, rng: &mut ChaCha8Rng| -> f64 {
        if rate > 0.0 {
            { let e: f64 = Exp1.sample(rng); e / rate }
        } else {
            f64::INFINITY
        }
    };
    let mut snaps = Vec::with_capacity(cfg.snapshots.len());
    let mut next_snap = 0;
    let mut t = 0.0;
    let mut events = 0u64;
    let mut status = RunStatus::Completed;
    let mut next_minus = clock(config.minus.len() as f64 * (1.0 + lm), &mut rng_minus);
    loop {
        let (np, nm) = (config.plus.len() as f64, config.minus.len() as f64);
        let next_plus = t + clock(np * (1.0 + lp) + l * nm, &mut rng_plus);
        let t_next = next_minus.min(next_plus);
        while next_snap < cfg.snapshots.len() && cfg.snapshots[next_snap] < t_next {
            snaps.push(snapshot(&config, cfg.snapshots[next_snap], cfg));
            next_snap += 1;
        }
        if t_next > cfg.t_end {
            break;
        }
        t = t_next;
        events += 1;
        if next_minus <= next_plus {
            let event = if rng_minus.random::<f64>() * (1.0 + lm) < 1.0 {
                Event::MinusDeath
            } else {
                Event::MinusBirth
            };
            apply(params, &mut config, event, cfg.box_length, &mut rng_minus);
            next_minus = t + clock(config.minus.len() as f64 * (1.0 + lm), &mut rng_minus);
        } else {
            let u = rng_plus.random::<f64>() * (np * (1.0 + lp) + l * nm);
            let event = if u < np {
                Event::PlusDeath
            } else if u < np * (1.0 + lp) && np > 0.0 {
                Event::PlusBirth
            } else if nm > 0.0 {
                Event::CrossBirth
            } else {
                Event::PlusBirth
            };
            apply(params, &mut config, event, cfg.box_length, &mut rng_plus);
        }
        if config.len() > cfg.max_population {
            status = RunStatus::GuardTripped;
            break;
        }
    }
    ReplicaTrajectory {
        replica,
        status,
        events,
        snapshots: snaps,
    }
}

/// Mean with its standard error across replicas.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self { mean, se: f64::NAN };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SnapshotEstimate {
    pub t: f64,
    pub density_plus: Estimate,
    pub density_minus: Estimate,
    pub k_pp: Vec<Estimate>,
    pub k_pm: Vec<Estimate>,
    pub k_mm: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EstimateSeries {
    pub bin_edges: Vec<(f64, f64)>,
    /// Replicas that reached every snapshot; only these enter the estimates.
    pub replicas_used: usize,
    pub guard_tripped: usize,
    pub snapshots: Vec<SnapshotEstimate>,
}

/// Volume of the shell `lo ≤ |x| < hi` in `R^d`.
pub fn shell_volume(dim: usize, lo: f64, hi: f64) -> f64 {
    unit_ball_volume(dim) * (hi.powi(dim as i32) - lo.powi(dim as i32))
}

/// Pair-correlation estimate of one bin: ordered pairs divided by
/// `L^d · |shell|`. Its expectation is the shell average of `k(x - y)`.
pub fn pair_estimate(count: u64, cfg: &SimConfig, bin: usize) -> f64 {
    let (lo, hi) = cfg.bin_edges(bin);
    count as f64 / (cfg.volume() * shell_volume(cfg.dim, lo, hi))
}

pub fn aggregate(trajectories: &[ReplicaTrajectory], cfg: &SimConfig) -> EstimateSeries {
    let done: Vec<&ReplicaTrajectory> = trajectories
        .iter()
        .filter(|r| r.status == RunStatus::Completed)
        .collect();
    let vol = cfg.volume();
    let bins = cfg.bins();
    let snapshots = (0..cfg.snapshots.len())
        .map(|s| {
            let est = |f: &dyn Fn(&ReplicaSnapshot) -> f64| {
                Estimate::from_samples(&done.iter().map(|r| f(&r.snapshots[s])).collect::<Vec<_>>())
            };
            let per_bin = |h: fn(&ReplicaSnapshot) -> &Vec<u64>| {
                (0..bins)
                    .map(|b| est(&|x: &ReplicaSnapshot| pair_estimate(h(x)[b], cfg, b)))
                    .collect()
            };
            SnapshotEstimate {
                t: cfg.snapshots[s],
                density_plus: est(&|x| x.n_plus as f64 / vol),
                density_minus: est(&|x| x.n_minus as f64 / vol),
                k_pp: per_bin(|x| &x.hist_pp),
                k_pm: per_bin(|x| &x.hist_pm),
                k_mm: per_bin(|x| &x.hist_mm),
            }
        })
        .collect();
    EstimateSeries {
        bin_edges: (0..bins).map(|b| cfg.bin_edges(b)).collect(),
        replicas_used: done.len(),
        guard_tripped: trajectories.len() - done.len(),
        snapshots,
    }
}

/// Runs all replicas in parallel; the result is ordered by replica index.
pub fn simulate(
    params: &ModelParams,
    c_plus: f64,
    c_minus: f64,
    cfg: &SimConfig,
) -> Result<Vec<ReplicaTrajectory>, SimError> {
    cfg.validate(c_plus, c_minus)?;
    if params.dim != cfg.dim {
        return Err(SimError::DimensionMismatch {
            model: params.dim,
            sim: cfg.dim,
        });
    }
    Ok((0..cfg.replicas)
        .into_par_iter()
        .map(|r| run_replica(params, c_plus, c_minus, cfg, r))
        .collect())
}

pub fn run_replicas(params: &ModelParams, c_plus: f64, c_minus: f64, cfg: &SimConfig) -> Result<EstimateSeries, SimError> {
    Ok(aggregate(&simulate(params, c_plus, c_minus, cfg)?, cfg))
}

/// One row per (replica, snapshot): counts, densities and pair counts per bin.
pub fn write_trajectories_csv<W: Write>(mut w: W, trajectories: &[ReplicaTrajectory], cfg: &SimConfig) -> io::Result<()> {
    let bins = cfg.bins();
    let mut header = String::from("replica,status,t,n_plus,n_minus,density_plus,density_minus");
    for tag in ["pp", "pm", "mm"] {
        for b in 0..bins {
            header.push_str(&format!(",{tag}_{b}"));
        }
    }
    writeln!(w, "{header}")?;
    let vol = cfg.volume();
    for r in trajectories {
        for s in &r.snapshots {
            write!(
                w,
                "{},{},{},{},{},{},{}",
                r.replica,
                r.status.label(),
                s.t,
                s.n_plus,
                s.n_minus,
                s.n_plus as f64 / vol,
                s.n_minus as f64 / vol
            )?;
            for h in [&s.hist_pp, &s.hist_pm, &s.hist_mm] {
                for c in h {
                    write!(w, ",{c}")?;
                }
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

impl EstimateSeries {
    /// Columns `t,observable,r_lo,r_hi,mean,se`; densities leave the bin columns empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,observable,r_lo,r_hi,mean,se")?;
        for s in &self.snapshots {
            writeln!(w, "{},density_plus,,,{},{}", s.t, s.density_plus.mean, s.density_plus.se)?;
            writeln!(w, "{},density_minus,,,{},{}", s.t, s.density_minus.mean, s.density_minus.se)?;
            for (name, v) in [("k_pp", &s.k_pp), ("k_pm", &s.k_pm), ("k_mm", &s.k_mm)] {
                for (e, (lo, hi)) in v.iter().zip(&self.bin_edges) {
                    writeln!(w, "{},{name},{lo},{hi},{},{}", s.t, e.mean, e.se)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg2(replicas: usize) -> SimConfig {
        SimConfig::new(500f64.sqrt(), 2, vec![0.0, 1.0, 2.0], 7, replicas)
    }

    #[test]
    fn empty_plus_field() {
        let cfg = cfg2(1);
        let mut rng = stream(1, 0, 0);
        let c = init_poisson(0.0, 1.0, &cfg, &mut rng);
        assert!(c.plus.is_empty() && !c.minus.is_empty());
    }

    #[test]
    fn empty_configuration_is_absorbing() {
        let p = ModelParams::gaussian(1.0, 1.0, 1.0, 1.0, 2).unwrap();
        let mut c = Configuration::new();
        assert_eq!(step(&p, &mut c, 10.0, &mut stream(0, 0, 0)), None);
    }

    #[test]
    fn rate_bookkeeping() {
        let p = ModelParams::gaussian(0.7, 0.4, 1.3, 1.0, 2).unwrap();
        let cfg = cfg2(1);
        let mut rng = stream(3, 0, 0);
        let mut c = init_poisson(1.0, 1.0, &cfg, &mut rng);
        for _ in 0..500 {
            let expected = c.plus.len() as f64 * 1.7 + c.minus.len() as f64 * (1.0 + 0.4 + 1.3);
            assert_eq!(total_rate(&p, &c), expected);
            assert!((channel_rates(&p, &c).iter().sum::<f64>() - expected).abs() < 1e-12 * expected);
            step(&p, &mut c, cfg.box_length, &mut rng);
            assert!(c.is_disjoint());
        }
    }

    #[test]
    fn births_stay_on_the_torus() {
        let p = ModelParams::gaussian(2.0, 2.0, 2.0, 3.0, 3).unwrap();
        let mut cfg = SimConfig::new(4.0, 3, vec![0.5], 1, 1);
        cfg.r_max = 2.0;
        let mut rng = stream(5, 0, 0);
        let mut c = init_poisson(1.0, 1.0, &cfg, &mut rng);
        for _ in 0..2000 {
            step(&p, &mut c, 4.0, &mut rng);
        }
        for x in c.plus.iter().chain(&c.minus) {
            assert!(x.iter().all(|&v| (0.0..4.0).contains(&v)));
        }
    }

    #[test]
    fn deterministic_replicas() {
        let p = ModelParams::gaussian(1.0, 0.5, 0.5, 1.0, 2).unwrap();
        let cfg = SimConfig::new(8.0, 2, vec![0.5, 1.0], 11, 4);
        let a = simulate(&p, 1.0, 1.0, &cfg).unwrap();
        let b = simulate(&p, 1.0, 1.0, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn minus_path_ignores_plus_rates() {
        let cfg = SimConfig::new(8.0, 2, vec![0.5, 1.0, 2.0], 11, 3);
        let a = simulate(&ModelParams::gaussian(0.3, 0.9, 0.0, 1.0, 2).unwrap(), 1.0, 1.0, &cfg).unwrap();
        let b = simulate(&ModelParams::gaussian(1.4, 0.9, 5.0, 1.0, 2).unwrap(), 1.0, 1.0, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (s, u) in x.snapshots.iter().zip(&y.snapshots) {
                assert_eq!(s.n_minus, u.n_minus);
                assert_eq!(s.hist_mm, u.hist_mm);
            }
        }
    }

    #[test]
    fn guard_trips_on_explosive_growth() {
        let p = ModelParams::gaussian(4.0, 4.0, 0.0, 1.0, 1).unwrap();
        let mut cfg = SimConfig::new(20.0, 1, vec![10.0], 2, 1);
        cfg.max_population = 2000;
        let r = run_replica(&p, 1.0, 1.0, &cfg, 0);
        assert_eq!(r.status, RunStatus::GuardTripped);
        assert!(r.snapshots.is_empty());
        assert_eq!(aggregate(&[r], &cfg).guard_tripped, 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = cfg2(2);
        assert!(cfg.validate(1.0, 1.0).is_ok());
        assert!(matches!(cfg.validate(0.01, 1.0), Err(SimError::SparseStart { .. })));
        cfg.r_max = cfg.box_length;
        assert!(matches!(cfg.validate(1.0, 1.0), Err(SimError::PairRange { .. })));
        let mut cfg = cfg2(2);
        cfg.snapshots = vec![2.0, 1.0];
        assert_eq!(cfg.validate(1.0, 1.0), Err(SimError::Snapshots));
        let mut cfg = cfg2(2);
        cfg.bin_width = 0.0;
        assert_eq!(cfg.validate(1.0, 1.0), Err(SimError::BinWidth(0.0)));
    }

    #[test]
    fn csv_layout() {
        let p = ModelParams::gaussian(0.0, 0.0, 0.0, 1.0, 1).unwrap();
        let mut cfg = SimConfig::new(40.0, 1, vec![0.0, 1.0], 3, 2);
        cfg.r_max = 1.0;
        let runs = simulate(&p, 1.0, 1.0, &cfg).unwrap();
        let mut out = Vec::new();
        write_trajectories_csv(&mut out, &runs, &cfg).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "replica,status,t,n_plus,n_minus,density_plus,density_minus,pp_0,pp_1,pm_0,pm_1,mm_0,mm_1");
        assert_eq!(lines.len(), 5);
        let mut out = Vec::new();
        aggregate(&runs, &cfg).write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("t,observable,r_lo,r_hi,mean,se\n0,density_plus,,,"));
    }

    proptest! {
        #[test]
        fn wrap_lands_in_box(x in -1e3f64..1e3, l in 0.5f64..50.0) {
            let y = wrap([x, -x, 1e-18 - l], 3, l);
            prop_assert!(y.iter().all(|&v| (0.0..l).contains(&v)));
        }

        #[test]
        fn torus_distance_is_symmetric_and_short(a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0, d in 0.0f64..10.0) {
            let (x, y) = ([a, b, 0.0], [c, d, 0.0]);
            let r = torus_distance(&x, &y, 2, 10.0);
            prop_assert_eq!(r, torus_distance(&y, &x, 2, 10.0));
            prop_assert!(r <= 50f64.sqrt() + 1e-12);
        }
    }
}
