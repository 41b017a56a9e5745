use std::path::PathBuf;

use anyhow::Result;
use coaglab_core::analysis::{clt_report, CheckResult, EnsembleAccumulator, Moments, Report};
use coaglab_core::ensemble::{for_each_replica, reference_densities};
use coaglab_core::fluctuation::FluctuationModel;
use coaglab_core::oracle::{build_chain, Observable, OracleReport};
use coaglab_core::smoluchowski::{solve, StepControl};
use coaglab_core::validation::{
    clt_variance, conservation, displayed_bounds, exactness_vs_oracle, hydrodynamic_limit, martingale_diagnostics,
    moment_bounds, route_cross_check, solver_correctness, Criterion, ValidationReport,
};
use coaglab_core::{DensityVector, SimConfig, Trajectory};
use serde::Serialize;
use serde_json::json;

use crate::config::Loaded;
use crate::output::{CsvFile, RunDir};

/// How a command ended when nothing went wrong internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    Failed,
}

impl Outcome {
    fn from(passed: bool) -> Self {
        if passed {
            Outcome::Passed
        } else {
            Outcome::Failed
        }
    }
}

fn done(dir: RunDir, outcome: Outcome) -> Result<Outcome> {
    let root: PathBuf = dir.finish()?;
    println!("{}", root.display());
    Ok(outcome)
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    ell: usize,
    pi: f64,
    #[serde(rename = "M")]
    m: f64,
    #[serde(rename = "QV")]
    qv: f64,
}

#[derive(Serialize)]
struct EnsembleRow {
    t: f64,
    ell: usize,
    pi_mean: f64,
    pi_se: f64,
    xi_mean: f64,
    xi_var: f64,
    #[serde(rename = "M_mean")]
    m_mean: f64,
    #[serde(rename = "M_se")]
    m_se: f64,
    #[serde(rename = "QV_mean")]
    qv_mean: f64,
}

fn write_trajectory(dir: &RunDir, traj: &Trajectory) -> Result<()> {
    let mut csv = dir.csv(&format!("trajectories/replica-{:06}.csv", traj.replica))?;
    for snap in &traj.snapshots {
        for (l, &pi) in snap.density.values().iter().enumerate() {
            csv.row(TrajectoryRow {
                t: snap.t,
                ell: l + 1,
                pi,
                m: snap.martingale[l],
                qv: snap.qv_integral[l],
            })?;
        }
    }
    csv.finish()
}

fn ordered_pairs(ells: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, &a) in ells.iter().enumerate() {
        for &b in &ells[i + 1..] {
            out.push((a.min(b), a.max(b)));
        }
    }
    out
}

fn ensemble(cfg: &Loaded, dir: &RunDir, write: bool) -> Result<coaglab_core::analysis::EnsembleSummary> {
    let c = &cfg.config;
    let sim = cfg.sim_config();
    let reference = reference_densities(&sim.kernel, c.truncation, cfg.grid())?;
    let pairs = ordered_pairs(&c.fluct.ells);
    let mut acc = EnsembleAccumulator::new(c.n, cfg.grid().to_vec(), reference, pairs)?;
    for_each_replica::<anyhow::Error, _>(&sim, c.replicas, c.seed, c.threads, |traj| {
        if write {
            write_trajectory(dir, &traj)?;
        }
        acc.push(&traj)?;
        Ok(())
    })?;
    Ok(acc.finish()?)
}

pub fn simulate(cfg: &Loaded) -> Result<Outcome> {
    cfg.check_run()?;
    let dir = RunDir::create(cfg, "simulate")?;
    let summary = ensemble(cfg, &dir, cfg.config.write_trajectories)?;
    let mut csv = dir.csv("summary.csv")?;
    for (i, &t) in summary.times.iter().enumerate() {
        for l in 0..summary.truncation {
            let (pi, xi, m, qv) = (
                summary.pi[i][l],
                summary.xi[i][l],
                summary.martingale[i][l],
                summary.qv[i][l],
            );
            csv.row(EnsembleRow {
                t,
                ell: l + 1,
                pi_mean: pi.mean,
                pi_se: pi.se,
                xi_mean: xi.mean,
                xi_var: xi.variance,
                m_mean: m.mean,
                m_se: m.se,
                qv_mean: qv.mean,
            })?;
        }
    }
    csv.finish()?;
    dir.json("report.json", &summary)?;
    done(dir, Outcome::Passed)
}

#[derive(Serialize)]
struct SolutionRow {
    t: f64,
    ell: usize,
    u: f64,
}

#[derive(Serialize)]
struct BalanceRow {
    t: f64,
    number: f64,
    mass: f64,
    leaked_number: f64,
    leaked_mass: f64,
}

pub fn solve_cmd(cfg: &Loaded) -> Result<Outcome> {
    cfg.check_solver()?;
    let dir = RunDir::create(cfg, "solve")?;
    let sc = cfg.solver_config();
    let traj = solve(&cfg.kernel(), &DensityVector::monodisperse(sc.truncation), &sc)?;
    let mut csv = dir.csv("trajectories/solution.csv")?;
    let mut balance = dir.csv("summary.csv")?;
    for (&t, u) in traj.times.iter().zip(&traj.states) {
        for (l, &x) in u.values().iter().enumerate() {
            csv.row(SolutionRow { t, ell: l + 1, u: x })?;
        }
        balance.row(BalanceRow {
            t,
            number: u.number(),
            mass: u.mass(),
            leaked_number: u.leaked_number(),
            leaked_mass: u.leaked_mass(),
        })?;
    }
    csv.finish()?;
    balance.finish()?;
    let last = traj.states.last().expect("nonempty grid");
    let step = match sc.step {
        StepControl::Fixed { dt } => json!({ "dt": dt }),
        StepControl::Adaptive { atol } => json!({ "atol": atol }),
    };
    let extra = json!({ "step": step, "steps": traj.steps, "leaked_mass_at_T": last.leaked_mass() });
    dir.manifest(cfg, extra.clone())?;
    dir.json("report.json", &extra)?;
    done(dir, Outcome::Passed)
}

#[derive(Serialize)]
struct CovarianceRow {
    t: f64,
    a: usize,
    b: usize,
    sigma: f64,
}

#[derive(Serialize)]
struct DualRow {
    t: f64,
    ell: usize,
    f: f64,
}

#[derive(Serialize)]
struct RouteSummary {
    g_support: Vec<usize>,
    t: f64,
    variance_dual: f64,
    variance_lyapunov: f64,
    relative_discrepancy: f64,
    passed: bool,
}

fn model(cfg: &Loaded) -> Result<FluctuationModel> {
    let c = &cfg.config;
    let mut m = FluctuationModel::new(cfg.kernel(), c.truncation, c.horizon, c.fluct.dt)?;
    if let Some(d) = c.fluct.dual_truncation {
        m = m.with_dual_truncation(d);
    }
    Ok(m)
}

pub fn fluct_predict(cfg: &Loaded) -> Result<Outcome> {
    cfg.check_fluct()?;
    let c = &cfg.config;
    let dir = RunDir::create(cfg, "fluct-predict")?;
    let m = model(cfg)?;
    let sigma = m.covariance(cfg.grid())?;
    let mut csv = dir.csv("trajectories/covariance.csv")?;
    for s in &sigma {
        for a in 1..=s.truncation() {
            for b in a..=s.truncation() {
                csv.row(CovarianceRow {
                    t: s.t,
                    a,
                    b,
                    sigma: s.get(a, b),
                })?;
            }
        }
    }
    csv.finish()?;

    let last = sigma.last().expect("nonempty grid");
    let mut routes = Vec::new();
    for &ell in &c.fluct.ells {
        let mut g = vec![0.0; ell];
        g[ell - 1] = 1.0;
        let dual = m.dual(&g, last.t)?;
        let mut csv: CsvFile = dir.csv(&format!("trajectories/dual-{ell}.csv"))?;
        for (&t, f) in dual.times.iter().zip(&dual.f) {
            for (l, &x) in f.iter().enumerate() {
                csv.row(DualRow { t, ell: l + 1, f: x })?;
            }
        }
        csv.finish()?;
        let lyap = last.variance(ell);
        let rel = if dual.variance == 0.0 && lyap == 0.0 {
            0.0
        } else {
            (dual.variance - lyap).abs() / dual.variance.abs().max(lyap.abs())
        };
        routes.push(RouteSummary {
            g_support: vec![ell],
            t: last.t,
            variance_dual: dual.variance,
            variance_lyapunov: lyap,
            relative_discrepancy: rel,
            passed: rel <= c.fluct.route_rel,
        });
    }

    let mut summary = dir.csv("summary.csv")?;
    for s in &sigma {
        for &ell in &c.fluct.ells {
            summary.row(DualRow {
                t: s.t,
                ell,
                f: s.variance(ell),
            })?;
        }
    }
    summary.finish()?;
    for r in &routes {
        println!(
            "xi({}) at t = {}: lyapunov {:.9e}, dual {:.9e}, relative gap {:.2e}{}",
            r.g_support[0],
            r.t,
            r.variance_lyapunov,
            r.variance_dual,
            r.relative_discrepancy,
            if r.passed { "" } else { " (too large)" }
        );
    }
    let passed = routes.iter().all(|r| r.passed);
    dir.json(
        "report.json",
        &json!({ "route_rel": c.fluct.route_rel, "passed": passed, "routes": routes }),
    )?;
    done(dir, Outcome::from(passed))
}

#[derive(Serialize)]
struct CompareRow {
    t: f64,
    a: usize,
    b: usize,
    empirical: f64,
    predicted: f64,
}

fn print_report(r: &Report) {
    let ok = r.checks.iter().filter(|c| c.passed).count();
    println!("{}: {}/{} checks passed", r.title, ok, r.checks.len());
    for f in r.failures() {
        println!(
            "  FAIL {}: observed {:.6e}, bound {:.6e} ({})",
            f.name, f.observed, f.bound, f.detail
        );
    }
}

pub fn fluct_empirical(cfg: &Loaded) -> Result<Outcome> {
    cfg.check_fluct()?;
    let c = &cfg.config;
    let dir = RunDir::create(cfg, "fluct-empirical")?;
    let summary = ensemble(cfg, &dir, false)?;
    let predicted = model(cfg)?.covariance(cfg.grid())?;
    let report = clt_report(&summary, &predicted, &c.fluct.ells, c.fluct.clt);

    let mut csv = dir.csv("summary.csv")?;
    for (i, p) in predicted.iter().enumerate() {
        for &l in &c.fluct.ells {
            let st = summary.xi[i][l - 1];
            csv.row(CompareRow {
                t: p.t,
                a: l,
                b: l,
                empirical: st.variance,
                predicted: p.variance(l),
            })?;
        }
        for pc in &summary.covariances {
            csv.row(CompareRow {
                t: p.t,
                a: pc.a,
                b: pc.b,
                empirical: pc.covariance[i],
                predicted: p.get(pc.a, pc.b),
            })?;
        }
    }
    csv.finish()?;
    dir.json(
        "report.json",
        &json!({ "passed": report.passed(), "report": report, "summary": summary }),
    )?;
    print_report(&report);
    done(dir, Outcome::from(report.passed()))
}

#[derive(Serialize)]
struct OracleRow {
    n: u64,
    t: f64,
    ell: u64,
    exact: f64,
    empirical: f64,
    se: f64,
}

pub fn oracle_check(cfg: &Loaded) -> Result<Outcome> {
    cfg.check_oracle()?;
    let c = &cfg.config;
    let o = &c.oracle;
    let dir = RunDir::create(cfg, "oracle-check")?;
    let k = cfg.kernel();
    let mut exact = OracleReport::default();
    let mut report = Report::new("simulator means vs exact chain");
    let mut csv = dir.csv("summary.csv")?;
    let horizon = o.times[o.times.len() - 1];
    for &n in &o.n {
        let chain = build_chain(n, &k)?;
        let counts: Vec<Observable> = (1..=n).map(|l| Observable::Count { l }).collect();
        exact.extend_from(&chain, &o.times, &counts);
        let sim = SimConfig::new(n, k.clone(), horizon, o.times.clone(), n as usize).with_strategy(c.strategy);
        let mut acc = vec![vec![Moments::default(); n as usize]; o.times.len()];
        for_each_replica::<anyhow::Error, _>(&sim, c.replicas, c.seed.wrapping_add(n), c.threads, |traj| {
            for (row, snap) in acc.iter_mut().zip(&traj.snapshots) {
                for (m, &p) in row.iter_mut().zip(snap.density.values()) {
                    m.push((p * n as f64).round());
                }
            }
            Ok(())
        })?;
        for (i, &t) in o.times.iter().enumerate() {
            for l in 1..=n {
                let want = exact.lookup(n, t, Observable::Count { l }).expect("just computed");
                let m = acc[i][l as usize - 1];
                csv.row(OracleRow {
                    n,
                    t,
                    ell: l,
                    exact: want,
                    empirical: m.mean(),
                    se: m.standard_error(),
                })?;
                report.push(CheckResult::at_most(
                    format!("E N_{l}({t}), n = {n}"),
                    (m.mean() - want).abs(),
                    o.se * m.standard_error() + 1e-10,
                    format!("empirical {:.6}, exact {:.6}", m.mean(), want),
                ));
            }
        }
    }
    csv.finish()?;
    dir.json("oracle.json", &exact)?;
    dir.json("report.json", &json!({ "passed": report.passed(), "report": report }))?;
    print_report(&report);
    done(dir, Outcome::from(report.passed()))
}

pub fn validate(cfg: &Loaded) -> Result<Outcome> {
    cfg.check_validation()?;
    let v = &cfg.config.validation;
    let dir = RunDir::create(cfg, "validate")?;
    let mut criteria: Vec<Criterion> = Vec::new();
    let mut record = |c: Criterion| {
        println!("{}", c.summary_line());
        criteria.push(c);
    };
    record(exactness_vs_oracle(v)?);
    let (c2, lln) = hydrodynamic_limit(v)?;
    record(c2);
    record(solver_correctness(v)?);
    record(clt_variance(v)?);
    record(route_cross_check(v)?);
    let (c6, mart) = martingale_diagnostics(v)?;
    record(c6);
    record(displayed_bounds(v)?);
    let (c8, mom) = moment_bounds(v)?;
    record(c8);
    let mut seen: Vec<_> = lln.iter().collect();
    seen.extend([&mart, &mom]);
    record(conservation(v, &seen)?);

    let report = ValidationReport {
        config: v.clone(),
        criteria,
    };
    let mut csv = dir.csv("summary.csv")?;
    #[derive(Serialize)]
    struct Row<'a> {
        criterion: u32,
        check: &'a str,
        passed: bool,
        observed: f64,
        bound: f64,
        detail: &'a str,
    }
    for c in &report.criteria {
        for ch in &c.checks {
            csv.row(Row {
                criterion: c.id,
                check: &ch.name,
                passed: ch.passed,
                observed: ch.observed,
                bound: ch.bound,
                detail: &ch.detail,
            })?;
        }
    }
    csv.finish()?;
    dir.json("report.json", &json!({ "passed": report.passed(), "report": report }))?;
    done(dir, Outcome::from(report.passed()))
}
