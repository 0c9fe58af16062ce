//! The five subcommands. Each prints a short report, writes its files and
//! returns whether its checks passed.

use std::io::Write;

use bicontact::analysis::{
    build_majorant, check_lemma_boundint, check_lemma_int_a, compare_sim_analytic, int_a_grids, CompareOptions,
};
use bicontact::evolution1::{limit_first, AsymptoticVerdict, FirstOrder, FirstOrderState, Growth};
use bicontact::evolution2::{limits_second, SecondOrder, SecondOrderState, Source, Spectrum, TheoremCase};
use bicontact::model::{validate_params, Kernel, Point};
use bicontact::simulator::{aggregate, simulate, write_trajectories_csv, RunStatus};
use bicontact::spectral::{FourierGrid, SplitField};
use serde_json::json;

use crate::config::{Lemma, Loaded};
use crate::output::{csv_field, Outputs};
use crate::{CliError, Status};

fn describe(v: &AsymptoticVerdict) -> String {
    match v {
        AsymptoticVerdict::Zero => "Zero".into(),
        AsymptoticVerdict::Diverges { growth: Growth::Exponential } => "Diverges (exponential growth)".into(),
        AsymptoticVerdict::Diverges { growth: Growth::Linear } => "Diverges (linear growth)".into(),
        AsymptoticVerdict::Finite { constant, fluctuation } => {
            let tail = if fluctuation.is_some() { " plus an integrable part" } else { "" };
            format!("Finite, constant {constant}{tail}")
        }
    }
}

/// Shortest round-trip text, switching to an exponent for tiny or huge values.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn verdict_json(v: &AsymptoticVerdict) -> serde_json::Value {
    json!({ "verdict": v.label(), "constant": v.finite_constant() })
}

fn case_name(c: TheoremCase) -> &'static str {
    match c {
        TheoremCase::PlusCritical => "plus-critical (lambda_plus = 1, lambda_minus < 1)",
        TheoremCase::MinusCritical => "minus-critical (lambda_minus = 1, lambda_plus < 1)",
    }
}

/// Flat indices of the points `(j, 0, ..)` for `j = 0..=n/2` along the first axis.
fn axis_indices(grid: &FourierGrid) -> Vec<usize> {
    let stride = grid.n().pow(grid.dim() as u32 - 1);
    (0..=grid.n() / 2).map(|j| j * stride).collect()
}

pub fn cmd_limits(l: &Loaded, out: &mut Outputs) -> Result<Status, CliError> {
    let params = l.params()?;
    let grid = l.grid()?;
    let init1 = l.first_order_init(&grid)?;
    let init2 = l.second_order_init(&grid, &init1)?;
    for v in validate_params(&params) {
        println!("note: hypothesis not met: {v}");
    }
    let (minus, plus) = limit_first(&params, &init1);
    println!("(-) verdict: {}", describe(&minus));
    println!("(+) verdict: {}", describe(&plus));
    let mut result = json!({ "minus": verdict_json(&minus), "plus": verdict_json(&plus) });
    match limits_second(&params, &init2, &init1, &grid, l.form()) {
        Ok(lim) => {
            println!("second order: {}", case_name(lim.case));
            println!("k_mm verdict: {}", describe(&lim.k_mm));
            println!("k_pm verdict: {}", describe(&lim.k_pm));
            println!("k_pp verdict: {}", describe(&lim.k_pp));
            result["second_order"] = json!({
                "case": format!("{:?}", lim.case),
                "k_mm": verdict_json(&lim.k_mm),
                "k_pm": verdict_json(&lim.k_pm),
                "k_pp": verdict_json(&lim.k_pp),
            });
            let sp = &lim.spectra;
            let cols: Vec<(&str, &Spectrum)> = [
                ("Omega_pp", &sp.omega_pp),
                ("Xi_mm", &sp.xi_mm),
                ("Xi_pm", &sp.xi_pm),
                ("Xi_pp", &sp.xi_pp),
            ]
            .into_iter()
            .filter_map(|(n, s)| s.as_ref().map(|s| (n, s)))
            .collect();
            let axis = axis_indices(&grid);
            let table = |w: &mut Vec<u8>, head: &str, step: f64, pick: fn(&Spectrum) -> &Vec<f64>| {
                let names: Vec<&str> = cols.iter().map(|c| c.0).collect();
                writeln!(w, "{head},{}", names.join(","))?;
                for (j, &i) in axis.iter().enumerate() {
                    let vals: Vec<String> = cols.iter().map(|c| num(pick(c.1)[i])).collect();
                    writeln!(w, "{},{}", num(j as f64 * step), vals.join(","))?;
                }
                Ok(())
            };
            out.csv("limits_space.csv", |w| table(w, "r", grid.dx(), |s| &s.space))?;
            out.csv("limits_spectrum.csv", |w| table(w, "p", grid.dp(), |s| &s.hat))?;
        }
        Err(e) => {
            println!("second order: {e}");
            result["second_order"] = json!({ "error": e.to_string() });
        }
    }
    out.sidecar("limits", l, result)?;
    Ok(Status::Pass)
}

struct EvolveRow {
    first: FirstOrderState,
    second: Option<(SecondOrderState, Source)>,
}

pub fn cmd_evolve(l: &Loaded, out: &mut Outputs) -> Result<Status, CliError> {
    let params = l.params()?;
    let grid = l.grid()?;
    let init1 = l.first_order_init(&grid)?;
    let init2 = l.second_order_init(&grid, &init1)?;
    let times = &l.config.evolve.times;
    let first = FirstOrder::new(&params, &init1, &grid)?;
    let second: Vec<Option<(SecondOrderState, Source)>> = if init1.is_translation_invariant() {
        let so = SecondOrder::new(&params, &init2, &init1, &grid)?;
        match so.k2_closed(0.0)?.1 {
            // one oracle pass covers every requested time
            Source::Oracle => so
                .evolve_ode_times(times, so.oracle_dt)?
                .into_iter()
                .map(|s| Some((s, Source::Oracle)))
                .collect(),
            Source::ClosedForm => times
                .iter()
                .map(|&t| Some((so.divided_difference_state(t), Source::ClosedForm)))
                .collect(),
        }
    } else {
        eprintln!("note: psi is not zero, so the pair columns are left empty (the pair equations need translation invariance)");
        vec![None; times.len()]
    };
    let rows: Vec<EvolveRow> = times
        .iter()
        .zip(second)
        .map(|(&t, second)| EvolveRow { first: first.state(t), second })
        .collect();
    out.csv("evolve.csv", |w| {
        writeln!(w, "t,C_minus,C_plus,C_mm,C_pm,C_pp,source")?;
        for r in &rows {
            let pairs = match &r.second {
                Some((s, src)) => format!("{},{},{},{}", num(s.k_mm.constant), num(s.k_pm.constant), num(s.k_pp.constant), src.label()),
                None => ",,,none".into(),
            };
            writeln!(w, "{},{},{},{pairs}", num(r.first.t), num(r.first.k_minus.constant), num(r.first.k_plus.constant))?;
        }
        Ok(())
    })?;
    if l.config.evolve.fields {
        let axis = axis_indices(&grid);
        for (k, r) in rows.iter().enumerate() {
            let mut fields: Vec<&SplitField> = vec![&r.first.k_minus, &r.first.k_plus];
            if let Some((s, _)) = &r.second {
                fields.extend([&s.k_mm, &s.k_pm, &s.k_pp]);
            }
            let spaces = fields
                .iter()
                .map(|f| f.fluct_space(&grid))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Run(e.to_string()))?;
            out.csv(&format!("evolve_fields_{k}.csv"), |w| {
                writeln!(w, "# t={}", r.first.t)?;
                writeln!(w, "r,k_minus,k_plus,k_mm,k_pm,k_pp")?;
                for (j, &i) in axis.iter().enumerate() {
                    let mut vals: Vec<String> = spaces.iter().map(|s| num(s[i])).collect();
                    vals.resize(5, String::new());
                    writeln!(w, "{},{}", num(j as f64 * grid.dx()), vals.join(","))?;
                }
                Ok(())
            })?;
        }
    }
    let source = rows.first().and_then(|r| r.second.as_ref()).map(|s| s.1.label()).unwrap_or("none");
    println!("evolved to t = {} over {} times; pair source: {source}", times[times.len() - 1], times.len());
    out.sidecar("evolve", l, json!({ "pair_source": source, "rows": rows.len() }))?;
    Ok(Status::Pass)
}

pub fn cmd_simulate(l: &Loaded, out: &mut Outputs) -> Result<Status, CliError> {
    let params = l.params()?;
    let cfg = l.sim_config()?;
    let i = &l.config.init;
    let trajectories = simulate(&params, i.c_plus, i.c_minus, &cfg).map_err(|e| CliError::Run(e.to_string()))?;
    let series = aggregate(&trajectories, &cfg);
    out.csv("simulate_estimates.csv", |w| series.write_csv(w))?;
    out.csv("simulate_trajectories.csv", |w| write_trajectories_csv(w, &trajectories, &cfg))?;
    let guard = if series.guard_tripped == 0 {
        RunStatus::Completed.label()
    } else {
        RunStatus::GuardTripped.label()
    };
    println!(
        "{} replicas, {} used; guard status: {guard} ({} tripped at max_population = {})",
        cfg.replicas, series.replicas_used, series.guard_tripped, cfg.max_population
    );
    out.sidecar(
        "simulate",
        l,
        json!({
            "replicas": cfg.replicas,
            "replicas_used": series.replicas_used,
            "guard_tripped": series.guard_tripped,
            "guard_status": guard,
        }),
    )?;
    Ok(Status::Pass)
}

pub fn cmd_compare(l: &Loaded, out: &mut Outputs) -> Result<Status, CliError> {
    let params = l.params()?;
    let cfg = l.sim_config()?;
    let (i, s) = (&l.config.init, &l.config.sim);
    let opts = CompareOptions {
        threshold: s.z_threshold,
        grid_n: s.grid_n,
        include_pairs: s.pairs,
    };
    let report = compare_sim_analytic(&params, i.c_plus, i.c_minus, &cfg, opts).map_err(|e| CliError::Run(e.to_string()))?;
    out.csv("compare.csv", |w| report.write_csv(w))?;
    println!("{}", report.summary());
    out.sidecar(
        "compare",
        l,
        json!({ "pass": report.pass, "max_abs_z": report.max_abs_z(), "threshold": report.threshold, "rows": report.rows.len() }),
    )?;
    Ok(if report.pass { Status::Pass } else { Status::Fail })
}

pub fn cmd_check(l: &Loaded, out: &mut Outputs) -> Result<Status, CliError> {
    let c = &l.config.check;
    let params = l.params()?;
    let int_a_dim = c.int_a_dim.unwrap_or(params.dim);
    if c.lemmas.contains(&Lemma::IntA) {
        if !(1..=3).contains(&int_a_dim) {
            return Err(CliError::Usage(format!("int_a: d must be 1, 2 or 3 (got {int_a_dim})")));
        }
        if int_a_dim < 3 && !c.negative_control {
            return Err(CliError::Usage(format!(
                "int_a: the integrability lemma requires d >= 3 (requested d = {int_a_dim}); \
                 set negative_control = true under [check] to run the divergence control instead"
            )));
        }
    }
    let mut rows: Vec<(&'static str, bool, String)> = Vec::new();
    for lemma in &c.lemmas {
        let (pass, detail) = match lemma {
            Lemma::Boundint => {
                let r = check_lemma_boundint(c.boundint_cases, c.seed);
                let detail = format!(
                    "{} cases, {} violations, {} maximizer mismatches, worst ratio {:.6}",
                    r.cases, r.violations, r.maximizer_mismatches, r.worst_ratio
                );
                (r.passed(), detail)
            }
            Lemma::IntA => {
                let kernel = Kernel::new(params.kernel_plus.family(), int_a_dim).map_err(|e| CliError::Run(e.to_string()))?;
                let s = kernel.scale();
                let b = move |p: &Point| (-0.5 * s * s * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).exp();
                let grids = int_a_grids(int_a_dim, s).map_err(|e| CliError::Run(e.to_string()))?;
                let r = check_lemma_int_a(&kernel, b, &grids);
                let pass = if int_a_dim >= 3 { r.converges && r.slope_ok } else { r.diverges };
                let role = if int_a_dim >= 3 { "expect convergence" } else { "negative control, expect divergence" };
                (pass, format!("{role}; {}", r.summary()))
            }
            Lemma::Majorant => {
                let grid = l.grid()?;
                let init1 = l.first_order_init(&grid)?;
                let init2 = l.second_order_init(&grid, &init1)?;
                let so = SecondOrder::new(&params, &init2, &init1, &grid)?;
                let mm: Vec<f64> = so.phi_mm_hat.iter().map(|z| z.re).collect();
                let pm: Vec<f64> = so.phi_pm_hat.iter().map(|z| z.re).collect();
                let m = build_majorant(&params, &grid, so.c_plus, so.c_minus, &mm, &pm).map_err(|e| CliError::Usage(e.to_string()))?;
                let integrals = m.lattice_integrals(&grid);
                let dominated = m.dominates(&so, &c.majorant_times);
                let detail = format!("dominates at t = {:?}: {dominated}; lattice integrals (mm, pm, pp) = {integrals:?}", c.majorant_times);
                (dominated && integrals.iter().all(|v| v.is_finite()), detail)
            }
        };
        println!("{} {}: {detail}", lemma.name(), if pass { "PASS" } else { "FAIL" });
        rows.push((lemma.name(), pass, detail));
    }
    out.csv("check.csv", |w| {
        writeln!(w, "lemma,pass,detail")?;
        for (name, pass, detail) in &rows {
            writeln!(w, "{name},{pass},{}", csv_field(detail))?;
        }
        Ok(())
    })?;
    let all = rows.iter().all(|r| r.1);
    let result: Vec<_> = rows.iter().map(|(n, p, d)| json!({ "lemma": n, "pass": p, "detail": d })).collect();
    out.sidecar("check", l, json!({ "pass": all, "lemmas": result }))?;
    Ok(if all { Status::Pass } else { Status::Fail })
}
