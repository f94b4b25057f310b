//! The five subcommands, each turning a validated config into result rows.

use std::time::Instant;

use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, Normal};

use super::config::{Analysis, CalibrateConfig, EquivConfig, Expect, NoneqConfig, RiskConfig, SweepConfig};
use super::output::Row;
use crate::equivalence_lab::{
    carter_direction, coupling_suite, dp_certificate_matrix, hellinger_l1_check, lemma_suite, tv_by_events, tv_exact,
    MaximalCoupling, TwoCellTransfer,
};
use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::models::{PanelDirections, RatioClass, SimplexVector};
use crate::protocols::{calibrate, null_statistics, quantile_index, type_one_error, Constraint, ProtocolSpec, Randomness};
use crate::risk_lab::{
    check_epsilon_regime, detect_elbow, dp_phase_sweep, fit_exponent, monotonicity_violations, nonequivalence_demo,
    run_sweep, synthetic_sweep, GridPoint, ProtocolRisk, RiskCurve, SweepParam, SweepResult, MIN_FIT_POINTS,
};
use crate::rng::{self, tag};

pub struct Ctx {
    pub seed: u64,
    pub exec: Exec,
    pub start: Option<Instant>,
}

impl Ctx {
    fn wall(&self) -> Option<f64> {
        self.start.map(|s| s.elapsed().as_secs_f64())
    }
}

#[derive(Default)]
pub struct Output {
    pub rows: Vec<Row>,
    pub summary: Option<Vec<Row>>,
    pub report: Value,
    pub human: Vec<String>,
}

/// Wilson score interval.
pub fn binomial_ci(p: f64, n: usize, level: f64) -> (f64, f64) {
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0);
    let n = n as f64;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn eps_flag(spec: &ProtocolSpec) -> &'static str {
    match spec.constraint {
        Constraint::Dp { epsilon, .. } if check_epsilon_regime(&[epsilon], spec.n).is_err() => "outside_eps_regime",
        _ => "",
    }
}

pub fn calibrate_cmd(c: &CalibrateConfig, ctx: &Ctx) -> Result<Output> {
    if c.protocols.is_empty() {
        return invalid("`protocols` is empty");
    }
    if c.evaluation_reps == 0 {
        return invalid("`evaluation_reps` must be positive");
    }
    if let Some(q) = c.quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return invalid(format!("quantile {q} is outside (0, 1)"));
    }
    for s in &c.protocols {
        s.validate()?;
    }
    let mut out = Output::default();
    let mut report = Vec::new();
    for (i, spec) in c.protocols.iter().enumerate() {
        let seed = rng::derive(ctx.seed, &[tag::AUX, i as u64]);
        let q0 = SimplexVector::uniform(spec.d);
        let cal = calibrate(spec, &q0, c.alpha, c.calibration_reps, seed, &ctx.exec)?;
        let threshold = cal.threshold()?;
        let mut stats = null_statistics(spec, &q0, c.calibration_reps, seed, &ctx.exec)?;
        stats.sort_by(f64::total_cmp);
        let type_one = type_one_error(&cal, &q0, c.evaluation_reps, seed, &ctx.exec)?;
        // the threshold is itself an estimate, so its binomial noise adds in
        let n_eff = 1.0 / (1.0 / c.calibration_reps as f64 + 1.0 / c.evaluation_reps as f64);
        let (lo, hi) = binomial_ci(type_one, n_eff.floor() as usize, 0.95);
        let se = (type_one * (1.0 - type_one) / c.evaluation_reps as f64).sqrt();
        let label = spec.label();
        let flag = eps_flag(spec);
        let wall = ctx.wall();
        let base = |metric: &str, v: f64| Row::new("calibration", metric, v).protocol(label.clone()).wall(wall);
        out.rows.push(base("threshold", threshold).flag(flag));
        for q in &c.quantiles {
            out.rows
                .push(base("null_quantile", stats[quantile_index(1.0 - q, stats.len())]).group(format!("q={q}")));
        }
        let covers = lo <= c.alpha && c.alpha <= hi;
        out.rows
            .push(base("type_one", type_one).stderr(se).flag(if covers { "ci_covers_alpha" } else { "ci_misses_alpha" }));
        out.rows.push(base("type_one_ci_lo", lo).group("wilson_95_calibration_and_evaluation"));
        out.rows.push(base("type_one_ci_hi", hi).group("wilson_95_calibration_and_evaluation"));
        out.human.push(format!("{label}: threshold {threshold}, fresh type I {type_one} (95% CI [{lo:.4}, {hi:.4}])"));
        report.push(json!({
            "protocol": label,
            "threshold": threshold,
            "type_one": type_one,
            "ci": [lo, hi],
            "mc_stderr": se,
        }));
    }
    out.report = json!({ "alpha": c.alpha, "protocols": report });
    Ok(out)
}

pub fn risk_cmd(c: &RiskConfig, ctx: &Ctx) -> Result<Output> {
    if c.rho.is_empty() {
        return invalid("`rho` is empty");
    }
    if let Some(r) = c.rho.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return invalid(format!("panel separation rho must be positive, got {r}"));
    }
    c.protocol.validate()?;
    c.mc.validate()?;
    let rc = RatioClass::new(c.r)?;
    let dirs = PanelDirections::new(c.protocol.d, c.panel, rng::derive(ctx.seed, &[tag::PANEL]))?;
    let top = dirs.max_rho(&rc);
    if let Some(r) = c.rho.iter().find(|r| **r > top) {
        return invalid(format!("rho {r} exceeds the largest panel separation {top} for R = {}", c.r));
    }
    let curve = RiskCurve::new(&c.protocol, rc, &dirs, &c.mc, rng::derive(ctx.seed, &[tag::AUX, 0]), &ctx.exec)?;
    let label = c.protocol.label();
    let flag = eps_flag(&c.protocol);
    let mut out = Output::default();
    out.rows.push(Row::new("risk", "threshold", curve.spec().threshold()?).protocol(label.clone()).flag(flag));
    let mut report = Vec::new();
    for &rho in &c.rho {
        let est = curve.estimate(rho)?;
        let kinds = dirs.simplex_members(rho)?;
        let wall = ctx.wall();
        let base = |metric: &str, v: f64| Row::new("risk", metric, v).protocol(label.clone()).rho(rho).flag(flag).wall(wall);
        let reps = est.replicates as f64;
        out.rows.push(base("type_one", est.type_one).stderr((est.type_one * (1.0 - est.type_one) / reps).sqrt()));
        for (i, t) in est.type_two.iter().enumerate() {
            let kind = serde_json::to_value(kinds[i].1)?;
            out.rows.push(
                base("type_two", *t)
                    .group(format!("{}#{i}", kind.as_str().unwrap_or("member")))
                    .stderr((t * (1.0 - t) / reps).sqrt()),
            );
        }
        out.rows.push(base("worst_type_two", est.worst_type_two).group(format!("member#{}", est.worst_member)));
        out.rows.push(base("risk", est.risk).stderr(est.mc_stderr));
        out.human.push(format!(
            "{label} at rho {rho}: panel risk {} ± {} (type I {}, worst type II {})",
            est.risk, est.mc_stderr, est.type_one, est.worst_type_two
        ));
        report.push(serde_json::to_value(&est)?);
    }
    if !flag.is_empty() {
        out.human.push(format!("warning: epsilon outside ({}, 1]", (c.protocol.n as f64).powf(-0.25)));
    }
    out.report = json!({ "protocol": label, "max_rho": top, "flag": flag, "estimates": report });
    Ok(out)
}

fn point_at(param: SweepParam, base: &GridPoint, v: f64) -> Result<GridPoint> {
    let mut p = *base;
    let int = |v: f64| -> Result<u64> {
        if v >= 1.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
            Ok(v as u64)
        } else {
            invalid(format!("{} grid value {v} must be a positive integer", param.name()))
        }
    };
    match param {
        SweepParam::M => p.m = int(v)? as usize,
        SweepParam::N => p.n = int(v)?,
        SweepParam::D => p.d = int(v)? as usize,
        SweepParam::B => p.b = Some(int(v)? as usize),
        SweepParam::Epsilon => {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("epsilon grid value {v} must be positive"));
            }
            p.epsilon = Some(v)
        }
    }
    Ok(p)
}

fn within(value: f64, target: Option<f64>, tol: f64) -> Option<bool> {
    target.map(|t| (value - t).abs() <= tol)
}

fn fit_row(metric: &str, value: f64, target: Option<f64>, tol: f64) -> Row {
    let r = Row::new("fit", metric, value);
    match within(value, target, tol) {
        Some(ok) => r.group(format!("target={}±{tol}", target.unwrap())).pass(ok),
        None => r,
    }
}

fn sweep_rows(sweep: &SweepResult, ctx: &Ctx) -> Vec<Row> {
    let mut rows = Vec::new();
    for r in &sweep.rows {
        for o in &r.protocols {
            let base = |metric: &str, v: f64| Row::new("sweep", metric, v).protocol(o.label.clone()).point(r.point);
            if let Some(e) = &o.estimate {
                for ev in &e.trace {
                    rows.push(base("risk", ev.risk).rho(ev.rho).stderr(ev.mc_stderr));
                }
                rows.push(base("rho_star", e.rho_star).stderr(e.mc_stderr).group(format!("bracket=[{};{}]", e.lo, e.hi)));
            }
            if let Some(f) = &o.failure {
                rows.push(base("rho_star", f64::NAN).flag("no_crossing").group(f.clone()));
            }
        }
        rows.push(
            Row::new("sweep", "rho_star", r.rho_star)
                .protocol("family")
                .group(r.protocols[r.best].label.clone())
                .point(r.point)
                .stderr(r.mc_stderr)
                .wall(ctx.wall()),
        );
    }
    rows
}

pub fn sweep_cmd(c: &SweepConfig, ctx: &Ctx) -> Result<Output> {
    if c.values.len() < MIN_FIT_POINTS {
        return invalid(format!(
            "a rate fit needs at least {MIN_FIT_POINTS} grid values, got {}",
            c.values.len()
        ));
    }
    let grid = c.values.iter().map(|&v| point_at(c.param, &c.base, v)).collect::<Result<Vec<_>>>()?;
    match (c.analysis, c.param) {
        (Analysis::Elbow, p) if p != SweepParam::B => return invalid("elbow analysis needs param = b"),
        (Analysis::Phase, p) if p != SweepParam::Epsilon => return invalid("phase analysis needs param = epsilon"),
        _ => {}
    }
    if c.synthetic.is_some() && c.analysis != Analysis::Exponent {
        return invalid("synthetic mode supports the exponent analysis only");
    }
    if c.synthetic.is_none() {
        if c.family.is_empty() {
            return invalid("`family` is empty");
        }
        for s in &c.family {
            for p in &grid {
                p.apply(s).validate()?;
            }
        }
        c.settings.mc.validate()?;
    }
    let e: &Expect = &c.expect;
    let tol = e.tolerance;
    let mut out = Output::default();
    let sweep;
    let mut summary = Vec::new();
    match c.analysis {
        Analysis::Exponent => {
            sweep = match c.synthetic {
                Some(s) => synthetic_sweep(c.param, &c.base, &c.values, s.c, s.exponent)?,
                None => run_sweep(&c.family, &grid, c.param, &c.settings, ctx.seed, &ctx.exec)?,
            };
            let fit = fit_exponent(&sweep)?;
            summary.push(fit_row("exponent", fit.exponent, e.exponent, tol).stderr(fit.stderr));
            summary.push(fit_row("r_squared", fit.r_squared, None, tol));
            summary.push(fit_row("points", fit.points as f64, None, tol));
            out.human.push(format!(
                "{}-exponent of rho*^2: {} ± {} (R² {})",
                fit.param, fit.exponent, fit.stderr, fit.r_squared
            ));
            out.report = json!({ "fit": fit });
        }
        Analysis::Elbow => {
            sweep = run_sweep(&c.family, &grid, c.param, &c.settings, ctx.seed, &ctx.exec)?;
            let y: Vec<f64> = sweep.rows.iter().map(|r| r.rho_star).collect();
            let el = detect_elbow(&c.values, &y, c.base.d)?;
            summary.push(fit_row("elbow_b", el.elbow_b, None, tol));
            summary.push(fit_row("below_slope", el.below.exponent, e.exponent, tol).stderr(el.below.stderr));
            let plateau = e.plateau.map(|p| el.above_slope.abs() <= p);
            let mut above = fit_row("above_slope", el.above_slope, None, tol);
            if let Some(ok) = plateau {
                above = above.group(format!("|slope|<={}", e.plateau.unwrap())).pass(ok);
            }
            summary.push(above);
            summary.push(fit_row("hinge_left_slope", el.hinge.left_slope, None, tol));
            summary.push(fit_row("hinge_right_slope", el.hinge.right_slope, None, tol));
            out.human.push(format!(
                "elbow near b = {}; slope below d {} ± {}, slope above d {}",
                el.elbow_b, el.below.exponent, el.below.stderr, el.above_slope
            ));
            out.report = json!({ "elbow": el });
        }
        Analysis::Phase => {
            let ph = dp_phase_sweep(
                &c.family,
                &c.base,
                &c.values,
                c.boundary == Randomness::Shared,
                &c.settings,
                ctx.seed,
                &ctx.exec,
            )?;
            let f = ph.fit;
            summary.push(fit_row("low_slope", f.low_slope, e.low_slope, tol));
            summary.push(fit_row("high_slope", f.high_slope, e.high_slope, tol));
            let ratio = f.crossover_epsilon / f.predicted_boundary;
            summary.push(fit_row("crossover_epsilon", f.crossover_epsilon, None, tol));
            summary.push(fit_row("predicted_boundary", f.predicted_boundary, None, tol));
            let mut r = fit_row("boundary_ratio", ratio, None, tol);
            if let Some(k) = e.boundary_factor {
                r = r.group(format!("within_factor={k}")).pass(ratio <= k && ratio >= 1.0 / k);
            }
            summary.push(r);
            out.human.push(format!(
                "low-epsilon slope {}, high-epsilon slope {}, crossover {} (predicted {})",
                f.low_slope, f.high_slope, f.crossover_epsilon, f.predicted_boundary
            ));
            out.report = json!({ "phase": f });
            sweep = ph.sweep;
        }
    }
    let violations = monotonicity_violations(&sweep, 2.0);
    summary.push(Row::new("fit", "monotonicity_violations", violations.len() as f64).group("slack=2se"));
    for r in summary.iter_mut() {
        r.wall_time = ctx.wall();
    }
    out.rows = sweep_rows(&sweep, ctx);
    out.summary = Some(summary);
    if let Value::Object(m) = &mut out.report {
        m.insert("sweep".into(), serde_json::to_value(&sweep)?);
        m.insert("monotonicity_violations".into(), json!(violations));
    }
    Ok(out)
}

pub fn equiv_cmd(c: &EquivConfig, ctx: &Ctx) -> Result<Output> {
    let mut out = Output::default();
    match c {
        EquivConfig::LemmaSuite { cases, max_atoms } => {
            let rows = lemma_suite(*cases, *max_atoms, ctx.seed)?;
            for r in &rows {
                let base = |m: &str, v: f64| Row::new("lemma_suite", m, v).group(r.check.clone()).wall(ctx.wall());
                out.rows.push(base("passed", r.passed as f64).pass(r.all_passed()));
                out.rows.push(base("cases", r.cases as f64));
                out.rows.push(base("max_violation", r.max_violation));
                out.human.push(format!("{}: {}/{} (max violation {:e})", r.check, r.passed, r.cases, r.max_violation));
            }
            out.report = json!({ "rows": rows });
        }
        EquivConfig::Coupling { pairs, samples, max_atoms } => {
            let rows = coupling_suite(*pairs, *samples, *max_atoms, ctx.seed, &ctx.exec)?;
            for r in &rows {
                let g = format!("pair#{}", r.pair);
                out.rows.push(Row::new("coupling", "tv", r.tv).group(g.clone()));
                out.rows.push(
                    Row::new("coupling", "mismatch_freq", r.mismatch_freq)
                        .group(g.clone())
                        .stderr(r.mc_stderr)
                        .flag(if r.within { "within_3se" } else { "outside_3se" }),
                );
                out.rows.push(Row::new("coupling", "marginal_error", r.marginal_error).group(g).wall(ctx.wall()));
            }
            let inside = rows.iter().filter(|r| r.within).count();
            out.human.push(format!("{inside}/{} pairs within 3 standard errors of TV", rows.len()));
            out.report = json!({ "rows": rows, "within": inside });
        }
        EquivConfig::Transfer { n, q1, bins, m, rules } => {
            let t = TwoCellTransfer::new(*n, q1, *bins)?;
            let mut report = Vec::new();
            for rule in rules {
                let chk = t.check(*m, *rule)?;
                let g = serde_json::to_value(rule)?.to_string();
                let bound = *m as f64 * chk.sup_tv;
                let base = |metric: &str, v: f64| Row::new("transfer", metric, v).group(g.clone()).wall(ctx.wall());
                out.rows.push(base("sup_tv", chk.sup_tv));
                out.rows.push(base("bound_m_sup_tv", bound));
                out.rows.push(base("max_type_one_gap", chk.max_type_one_gap).pass(chk.max_type_one_gap <= bound));
                out.rows.push(base("max_type_two_gap", chk.max_type_two_gap).pass(chk.max_type_two_gap <= bound));
                out.rows.push(base("max_risk_gap", chk.max_risk_gap).flag(if chk.sum_within_m {
                    "pass;within_m"
                } else if chk.sum_holds {
                    "pass;within_2m"
                } else {
                    "fail"
                }));
                out.rows.push(base("tests", chk.tests as f64));
                if let Some(b) = chk.bits_ok {
                    out.rows.push(base("bits_ok", b as u8 as f64).pass(b));
                }
                if let Some(dp) = chk.dp_certified {
                    out.rows.push(base("dp_certified", dp as u8 as f64).pass(dp));
                }
                out.human.push(format!(
                    "{g}: sup TV {}, type I gap {}, type II gap {}, risk gap {} (per-term bound {bound})",
                    chk.sup_tv, chk.max_type_one_gap, chk.max_type_two_gap, chk.max_risk_gap
                ));
                report.push(json!({ "rule": rule, "check": chk }));
            }
            out.report = json!({ "rules": report });
        }
        EquivConfig::DpCertificates { random_pairs } => {
            let rows = dp_certificate_matrix(*random_pairs, ctx.seed)?;
            for r in &rows {
                let g = format!(
                    "{}/eps={}/delta={}/d={}/clip={}",
                    serde_json::to_value(r.mechanism)?.as_str().unwrap_or("?"),
                    r.epsilon,
                    r.delta,
                    r.d,
                    r.clip_bound
                );
                out.rows.push(Row::new("dp_certificates", "max_ratio", r.max_ratio).group(g.clone()).pass(r.certified));
                out.rows.push(Row::new("dp_certificates", "ratio_bound", r.ratio_bound).group(g.clone()));
                out.rows.push(Row::new("dp_certificates", "delta_required", r.max_delta_required).group(g));
            }
            let ok = rows.iter().filter(|r| r.certified).count();
            out.human.push(format!("{ok}/{} mechanism configurations certified", rows.len()));
            out.report = json!({ "rows": rows, "certified": ok });
        }
        EquivConfig::CarterDirection { ns, q1, bins } => {
            let rows = carter_direction(ns, q1, *bins, &ctx.exec)?;
            for (i, r) in rows.iter().enumerate() {
                let g = format!("n={}", r.n);
                let dec = i == 0 || r.deficiency_upper < rows[i - 1].deficiency_upper;
                out.rows.push(
                    Row::new("carter_direction", "deficiency_upper", r.deficiency_upper)
                        .group(g.clone())
                        .flag(if dec { "decreasing" } else { "not_decreasing" })
                        .wall(ctx.wall()),
                );
                out.rows.push(Row::new("carter_direction", "worst_q1", r.worst_q1).group(g.clone()));
                out.rows.push(Row::new("carter_direction", "outside_mass", r.outside_mass).group(g.clone()));
                out.rows.push(Row::new("carter_direction", "quadrature_error", r.quadrature_error).group(g));
                out.human.push(format!("n = {}: deficiency upper bound {}", r.n, r.deficiency_upper));
            }
            out.report = json!({ "rows": rows });
        }
        EquivConfig::Tv { p, q, samples } => {
            p.require_probability()?;
            q.require_probability()?;
            let tv = tv_exact(p, q)?;
            let ev = tv_by_events(p, q)?;
            let h = hellinger_l1_check(p, q)?;
            let coupling = MaximalCoupling::new(p, q)?;
            let mut r = rng::stream(ctx.seed, &[tag::AUX]);
            let mism = (0..*samples).filter(|_| {
                let (x, y) = coupling.sample(&mut r);
                x != y
            });
            let freq = mism.count() as f64 / *samples as f64;
            let se = (tv * (1.0 - tv) / *samples as f64).sqrt();
            out.rows.push(Row::new("tv", "tv_exact", tv));
            out.rows.push(Row::new("tv", "tv_by_events", ev));
            out.rows.push(Row::new("tv", "hellinger_bound", h.hellinger_rhs).pass(h.holds));
            out.rows.push(Row::new("tv", "coupling_mismatch_freq", freq).stderr(se));
            out.human.push(format!("TV {tv} (event supremum {ev}, Hellinger bound {})", h.hellinger_rhs));
            out.report = json!({ "tv": tv, "tv_by_events": ev, "hellinger": h, "mismatch_freq": freq });
        }
    }
    Ok(out)
}

fn risk_rows(section: &str, r: &ProtocolRisk, rho: f64, flag: &str) -> Vec<Row> {
    let base = |metric: &str, v: f64| Row::new(section, metric, v).protocol(r.label.clone()).rho(rho);
    let mut rows = vec![
        base("type_one", r.risk.type_one),
        base("worst_type_two", r.risk.worst_type_two),
        base("risk", r.risk.risk).stderr(r.risk.mc_stderr).flag(flag),
    ];
    if let Some(b) = r.bits {
        rows.push(base("bits", b as f64));
    }
    rows
}

pub fn noneq_cmd(c: &NoneqConfig, ctx: &Ctx) -> Result<Output> {
    let rep = nonequivalence_demo(c.d, c.n, c.m, &c.settings, ctx.seed, &ctx.exec)?;
    let mut out = Output::default();
    let s = |m: &str, v: f64| Row::new("scenario", m, v);
    out.rows.extend([
        s("d", rep.d as f64),
        s("b", rep.b as f64).group("ceil(n*log2(d))"),
        s("m_times_b", rep.mb as f64).flag(if rep.mb_within_d { "mb<=d" } else { "mb>d" }),
        s("sparsity", rep.sparsity).group("d/(n*ln(d))").pass(rep.condition_sparse),
        s("sample_condition", rep.condition_sample as u8 as f64).group("n>=sqrt(d)*ln(d)").pass(rep.condition_sample),
        s("rho", rep.rho).flag(if rep.rho_clamped { "clamped_to_max" } else { "" }),
        s("rho_sq_lower", rep.rho_sq_lower),
        s("rho_sq_upper", rep.rho_sq_upper),
        s("rho_max", rep.rho_max),
    ]);
    out.rows.extend(risk_rows("raw_forwarding", &rep.raw, rep.rho, if rep.raw_below_third { "below_1/3" } else { "not_below_1/3" }));
    for g in &rep.gaussian {
        let flag = if g.risk.risk > 2.0 / 3.0 { "above_2/3" } else { "not_above_2/3" };
        out.rows.extend(risk_rows("gaussian_family", g, rep.rho, flag));
    }
    for r in out.rows.iter_mut() {
        r.wall_time = ctx.wall();
    }
    out.human.push(format!(
        "d = {}, n = {}, m = {}: b = {}, m·b = {} ({} d)",
        rep.d,
        rep.n,
        rep.m,
        rep.b,
        rep.mb,
        if rep.mb_within_d { "≤" } else { ">" }
    ));
    out.human.push(format!(
        "raw forwarding panel risk {} ± {}; Gaussian family min risk {}",
        rep.raw.risk.risk,
        rep.raw.risk.mc_stderr,
        rep.gaussian.iter().map(|g| g.risk.risk).fold(f64::INFINITY, f64::min)
    ));
    out.human.push(rep.scope.clone());
    out.report = serde_json::to_value(&rep)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_interval_brackets_estimate() {
        let (lo, hi) = binomial_ci(0.05, 10_000, 0.95);
        assert!(lo < 0.05 && hi > 0.05);
        // normal-approximation half width 1.96·√(p(1−p)/n) ≈ 0.00427
        assert!(((hi - lo) / 2.0 - 0.00427).abs() < 1e-4, "{lo} {hi}");
        let (lo, hi) = binomial_ci(0.0, 100, 0.95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
    }

    #[test]
    fn grid_values_must_be_integral_for_counts() {
        let base = GridPoint { m: 2, n: 8, d: 4, ..Default::default() };
        assert_eq!(point_at(SweepParam::M, &base, 8.0).unwrap().m, 8);
        assert!(point_at(SweepParam::M, &base, 2.5).is_err());
        assert!(point_at(SweepParam::B, &base, 0.0).is_err());
        assert_eq!(point_at(SweepParam::Epsilon, &base, 0.5).unwrap().epsilon, Some(0.5));
    }
}
