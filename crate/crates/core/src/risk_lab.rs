//! Separation-rate estimation by bisection on the panel risk, power-law fits
//! over parameter sweeps, elbow and phase detection, and the bandwidth
//! non-equivalence scenario.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::models::{PanelConfig, PanelDirections, RatioClass, SimplexVector};
use crate::numerics::ols;
use crate::protocols::{
    calibrate, raw_forwarding_protocol, testing_risk, type_one_error, type_two_error, combine_risk, Aggregator, Constraint, Model,
    ProtocolSpec, Randomness, RiskEstimate,
};
use crate::rng::{self, tag};

pub const DEFAULT_TARGET_RISK: f64 = 0.5;

/// Monte Carlo effort for one risk curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSettings {
    pub alpha: f64,
    pub calibration_reps: usize,
    pub evaluation_reps: usize,
    /// Bisection stops when the bracket is narrower than tol·ρ.
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            alpha: 0.05,
            calibration_reps: 2000,
            evaluation_reps: 1000,
            tol: 0.02,
            max_steps: 60,
        }
    }
}

impl McSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid("alpha must lie in (0, 1)");
        }
        if self.evaluation_reps == 0 {
            return invalid("evaluation_reps must be positive");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return invalid("tol must lie in (0, 1)");
        }
        if self.max_steps == 0 {
            return invalid("max_steps must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub rho: f64,
    pub risk: f64,
    pub mc_stderr: f64,
}

/// Panel risk of one calibrated protocol as a function of ρ. The type I
/// error is computed once; type II replicates share random numbers across ρ.
pub struct RiskCurve<'a> {
    spec: ProtocolSpec,
    q0: SimplexVector,
    rc: RatioClass,
    dirs: &'a PanelDirections,
    reps: usize,
    seed: u64,
    exec: &'a Exec,
    type_one: f64,
}

impl<'a> RiskCurve<'a> {
    /// Calibrates `template` under the uniform null and fixes the type I error.
    pub fn new(
        template: &ProtocolSpec,
        rc: RatioClass,
        dirs: &'a PanelDirections,
        mc: &McSettings,
        seed: u64,
        exec: &'a Exec,
    ) -> Result<Self> {
        mc.validate()?;
        if dirs.d() != template.d {
            return Err(Error::Dimension {
                expected: template.d,
                got: dirs.d(),
            });
        }
        let q0 = SimplexVector::uniform(template.d);
        let spec = match template.threshold {
            Some(_) => template.clone(),
            None => calibrate(template, &q0, mc.alpha, mc.calibration_reps, seed, exec)?,
        };
        let type_one = type_one_error(&spec, &q0, mc.evaluation_reps, seed, exec)?;
        Ok(RiskCurve {
            spec,
            q0,
            rc,
            dirs,
            reps: mc.evaluation_reps,
            seed,
            exec,
            type_one,
        })
    }

    pub fn spec(&self) -> &ProtocolSpec {
        &self.spec
    }

    pub fn max_rho(&self) -> f64 {
        self.dirs.max_rho(&self.rc)
    }

    pub fn estimate(&self, rho: f64) -> Result<RiskEstimate> {
        let panel = self.dirs.at(rho, &self.rc)?;
        let type_two = panel
            .members()
            .iter()
            .enumerate()
            .map(|(i, m)| type_two_error(&self.spec, &self.q0, &m.truth, i, self.reps, self.seed, self.exec))
            .collect::<Result<Vec<_>>>()?;
        Ok(combine_risk(self.type_one, type_two, self.reps))
    }

    pub fn risk(&self, rho: f64) -> Result<Evaluation> {
        let r = self.estimate(rho)?;
        Ok(Evaluation {
            rho,
            risk: r.risk,
            mc_stderr: r.mc_stderr,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RhoEstimate {
    pub rho_star: f64,
    pub lo: f64,
    pub hi: f64,
    pub risk_lo: f64,
    pub risk_hi: f64,
    /// Risk stderr carried through the local slope of the risk curve.
    pub mc_stderr: f64,
    pub trace: Vec<Evaluation>,
}

/// Bisection (on log ρ) for the separation at which the panel risk crosses
/// `target`. The bracket must straddle the target: risk(lo) > target ≥
/// risk(hi).
pub fn estimate_rho_star(curve: &RiskCurve, target: f64, bracket: (f64, f64), mc: &McSettings) -> Result<RhoEstimate> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return invalid(format!("bracket [{lo}, {hi}] must satisfy 0 < lo < hi"));
    }
    if !(target > 0.0 && target < 2.0) {
        return invalid("target risk must lie in (0, 2)");
    }
    let mut trace = Vec::new();
    let mut e_lo = curve.risk(lo)?;
    let mut e_hi = curve.risk(hi)?;
    trace.push(e_lo);
    trace.push(e_hi);
    if !(e_lo.risk > target && e_hi.risk <= target) {
        return Err(Error::Bracket {
            lo,
            hi,
            risk_lo: e_lo.risk,
            risk_hi: e_hi.risk,
        });
    }
    // slope from the widest bracket that still resolves the risk difference
    let mut slope = (e_lo.risk - e_hi.risk) / (hi - lo);
    for _ in 0..mc.max_steps {
        let mid = 0.5 * (lo + hi);
        if hi - lo < mc.tol * mid {
            break;
        }
        let probe = (lo * hi).sqrt();
        let e = curve.risk(probe)?;
        trace.push(e);
        if e.risk > target {
            lo = probe;
            e_lo = e;
        } else {
            hi = probe;
            e_hi = e;
        }
        let drop = e_lo.risk - e_hi.risk;
        if drop > 4.0 * (e_lo.mc_stderr.max(e_hi.mc_stderr)) {
            slope = drop / (hi - lo);
        }
    }
    let rho_star = 0.5 * (lo + hi);
    let se_risk = 0.5 * (e_lo.mc_stderr + e_hi.mc_stderr);
    Ok(RhoEstimate {
        rho_star,
        lo,
        hi,
        risk_lo: e_lo.risk,
        risk_hi: e_hi.risk,
        mc_stderr: (se_risk / slope.max(f64::MIN_POSITIVE)).hypot(0.5 * (hi - lo)),
        trace,
    })
}

/// A point of a parameter grid; `None` keeps the template's value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub m: usize,
    pub n: u64,
    pub d: usize,
    #[serde(default)]
    pub b: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
}

impl GridPoint {
    pub fn apply(&self, template: &ProtocolSpec) -> ProtocolSpec {
        let mut s = template.clone();
        s.m = self.m;
        s.n = self.n;
        s.d = self.d;
        s.threshold = None;
        match &mut s.constraint {
            Constraint::Bandwidth { b } => {
                if let Some(nb) = self.b {
                    *b = nb;
                }
            }
            Constraint::Dp { epsilon, delta, .. } => {
                if let Some(e) = self.epsilon {
                    *epsilon = e;
                }
                if let Some(dl) = self.delta {
                    *delta = dl;
                }
            }
            Constraint::None => {}
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    M,
    N,
    D,
    B,
    Epsilon,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::M => "m",
            SweepParam::N => "n",
            SweepParam::D => "d",
            SweepParam::B => "b",
            SweepParam::Epsilon => "epsilon",
        }
    }

    pub fn value(&self, p: &GridPoint) -> Result<f64> {
        let v = match self {
            SweepParam::M => Some(p.m as f64),
            SweepParam::N => Some(p.n as f64),
            SweepParam::D => Some(p.d as f64),
            SweepParam::B => p.b.map(|b| b as f64),
            SweepParam::Epsilon => p.epsilon,
        };
        v.ok_or_else(|| Error::Validation(format!("grid point does not set {}", self.name())))
    }
}

/// Everything a sweep needs besides the protocol family and the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    /// Ratio-class bound R.
    pub r: f64,
    pub panel: PanelConfig,
    pub target_risk: f64,
    /// ρ bracket as fractions of the largest admissible ρ.
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub mc: McSettings,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            r: 3.0,
            panel: PanelConfig::default(),
            target_risk: DEFAULT_TARGET_RISK,
            bracket_lo: 1e-3,
            bracket_hi: 1.0,
            mc: McSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolOutcome {
    pub label: String,
    pub rho_star: Option<f64>,
    pub estimate: Option<RhoEstimate>,
    /// Why no crossing was found, if none was.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: GridPoint,
    pub value: f64,
    /// Smallest separation over the family.
    pub rho_star: f64,
    pub best: usize,
    pub mc_stderr: f64,
    pub protocols: Vec<ProtocolOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub target_risk: f64,
    pub mc: McSettings,
    pub rows: Vec<SweepRow>,
}

/// ρ̂* of a protocol family at one grid point: the smallest crossing over the
/// family. Protocols whose risk never falls to the target inside the bracket
/// are recorded and skipped.
pub fn family_rho_star(
    family: &[ProtocolSpec],
    point: &GridPoint,
    settings: &SweepSettings,
    seed: u64,
    exec: &Exec,
) -> Result<(usize, Vec<ProtocolOutcome>)> {
    if family.is_empty() {
        return invalid("protocol family is empty");
    }
    let rc = RatioClass::new(settings.r)?;
    let dirs = PanelDirections::new(point.d, settings.panel, rng::derive(seed, &[tag::PANEL]))?;
    let mut outcomes = Vec::with_capacity(family.len());
    let mut last_bracket = None;
    for (i, template) in family.iter().enumerate() {
        let spec = point.apply(template);
        let label = spec.label();
        let curve = RiskCurve::new(&spec, rc, &dirs, &settings.mc, rng::derive(seed, &[tag::AUX, i as u64]), exec)?;
        let top = curve.max_rho();
        let bracket = (settings.bracket_lo * top, settings.bracket_hi * top);
        match estimate_rho_star(&curve, settings.target_risk, bracket, &settings.mc) {
            Ok(e) => outcomes.push(ProtocolOutcome {
                label,
                rho_star: Some(e.rho_star),
                estimate: Some(e),
                failure: None,
            }),
            Err(err @ Error::Bracket { .. }) => {
                outcomes.push(ProtocolOutcome {
                    label,
                    rho_star: None,
                    estimate: None,
                    failure: Some(err.to_string()),
                });
                last_bracket = Some(err);
            }
            Err(e) => return Err(e),
        }
    }
    let best = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.rho_star.map(|r| (i, r)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|x| x.0);
    match best {
        Some(b) => Ok((b, outcomes)),
        None => Err(last_bracket.expect("every failure was a bracket failure")),
    }
}

pub fn run_sweep(
    family: &[ProtocolSpec],
    grid: &[GridPoint],
    param: SweepParam,
    settings: &SweepSettings,
    seed: u64,
    exec: &Exec,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return invalid("sweep grid is empty");
    }
    let mut rows = Vec::with_capacity(grid.len());
    for p in grid {
        let value = param.value(p)?;
        let (best, protocols) = family_rho_star(family, p, settings, seed, exec)?;
        let e = protocols[best].estimate.as_ref().expect("best has an estimate");
        rows.push(SweepRow {
            point: *p,
            value,
            rho_star: e.rho_star,
            best,
            mc_stderr: e.mc_stderr,
            protocols,
        });
    }
    Ok(SweepResult {
        param,
        target_risk: settings.target_risk,
        mc: settings.mc,
        rows,
    })
}

/// Power-law fit of ρ̂*² against one parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub param: String,
    pub exponent: f64,
    pub stderr: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub const MIN_FIT_POINTS: usize = 4;

/// Least-squares slope of log ρ̂*² on log x.
pub fn fit_power_law(param: &str, x: &[f64], rho_star: &[f64]) -> Result<RateFit> {
    if x.len() != rho_star.len() {
        return invalid("x and rho_star differ in length");
    }
    if x.len() < MIN_FIT_POINTS {
        return invalid(format!("a rate fit needs at least {MIN_FIT_POINTS} grid points, got {}", x.len()));
    }
    if x.iter().chain(rho_star).any(|v| !(*v > 0.0 && v.is_finite())) {
        return invalid("fit inputs must be positive and finite");
    }
    if x.iter().all(|v| *v == x[0]) {
        return invalid(format!("{param} does not vary over the grid"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = rho_star.iter().map(|r| 2.0 * r.ln()).collect();
    let (slope, _, se, r2) = ols(&lx, &ly);
    Ok(RateFit {
        param: param.to_string(),
        exponent: slope,
        stderr: se,
        r_squared: r2,
        points: x.len(),
    })
}

/// Every other grid coordinate must be fixed.
pub fn fit_exponent(sweep: &SweepResult) -> Result<RateFit> {
    let first = sweep.rows.first().ok_or_else(|| Error::Validation("empty sweep".into()))?.point;
    for r in &sweep.rows {
        let mut p = r.point;
        match sweep.param {
            SweepParam::M => p.m = first.m,
            SweepParam::N => p.n = first.n,
            SweepParam::D => p.d = first.d,
            SweepParam::B => p.b = first.b,
            SweepParam::Epsilon => p.epsilon = first.epsilon,
        }
        if p != first {
            return invalid(format!("more than {} varies across the grid", sweep.param.name()));
        }
    }
    let x: Vec<f64> = sweep.rows.iter().map(|r| r.value).collect();
    let y: Vec<f64> = sweep.rows.iter().map(|r| r.rho_star).collect();
    fit_power_law(sweep.param.name(), &x, &y)
}

/// Continuous two-segment fit y = a + s₁(x − c)₋ + s₂(x − c)₊.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Hinge {
    pub knot: f64,
    pub left_slope: f64,
    pub right_slope: f64,
    pub level: f64,
    pub sse: f64,
}

fn hinge_at(x: &[f64], y: &[f64], c: f64) -> Option<Hinge> {
    let mut a = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = nalgebra::Vector3::<f64>::zeros();
    for (xi, yi) in x.iter().zip(y) {
        let row = nalgebra::Vector3::new(1.0, (xi - c).min(0.0), (xi - c).max(0.0));
        a += row * row.transpose();
        rhs += row * *yi;
    }
    let sol = a.lu().solve(&rhs)?;
    let sse = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - sol[0] - sol[1] * (xi - c).min(0.0) - sol[2] * (xi - c).max(0.0)).powi(2))
        .sum();
    Some(Hinge {
        knot: c,
        left_slope: sol[1],
        right_slope: sol[2],
        level: sol[0],
        sse,
    })
}

/// Exact least-squares hinge: for each split of the sorted points the free
/// two-line fit is taken when its intersection falls inside the split gap,
/// and otherwise the optimum sits on a data point, which is tried directly.
pub fn fit_hinge(x: &[f64], y: &[f64], min_side: usize) -> Result<Hinge> {
    let min_side = min_side.max(2);
    if x.len() != y.len() || x.len() < 2 * min_side {
        return invalid(format!("a two-segment fit needs at least {} points", 2 * min_side));
    }
    let mut pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let n = xs.len();
    let mut best: Option<Hinge> = None;
    let mut consider = |h: Hinge| {
        if best.is_none_or(|b| h.sse < b.sse) {
            best = Some(h);
        }
    };
    for s in min_side..=n - min_side {
        let (lx, rx) = xs.split_at(s);
        let (ly, ry) = ys.split_at(s);
        if lx.iter().all(|v| *v == lx[0]) || rx.iter().all(|v| *v == rx[0]) {
            continue;
        }
        let (s1, a1, _, _) = ols(lx, ly);
        let (s2, a2, _, _) = ols(rx, ry);
        if (s1 - s2).abs() > 1e-300 {
            let c = (a2 - a1) / (s1 - s2);
            if c >= lx[s - 1] && c <= rx[0] {
                let sse: f64 = lx.iter().zip(ly).map(|(a, b)| (b - a1 - s1 * a).powi(2)).sum::<f64>()
                    + rx.iter().zip(ry).map(|(a, b)| (b - a2 - s2 * a).powi(2)).sum::<f64>();
                consider(Hinge {
                    knot: c,
                    left_slope: s1,
                    right_slope: s2,
                    level: a1 + s1 * c,
                    sse,
                });
            }
        }
    }
    for &c in &xs[min_side - 1..=n - min_side] {
        if let Some(h) = hinge_at(&xs, &ys, c) {
            consider(h);
        }
    }
    best.ok_or_else(|| Error::Numerical("two-segment fit is singular".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Elbow {
    pub elbow_b: f64,
    pub hinge: Hinge,
    /// Power-law fit over b ≤ d.
    pub below: RateFit,
    /// OLS slope of log ρ̂*² on log b over b ≥ d.
    pub above_slope: f64,
    pub above_points: usize,
}

/// Changepoint of log ρ̂*² against log b for a grid that straddles d.
pub fn detect_elbow(b: &[f64], rho_star: &[f64], d: usize) -> Result<Elbow> {
    let d = d as f64;
    let lo = b.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < d && hi > d) {
        return invalid(format!("b grid [{lo}, {hi}] does not straddle d = {d}"));
    }
    let lx: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = rho_star.iter().map(|r| 2.0 * r.ln()).collect();
    let hinge = fit_hinge(&lx, &ly, 2)?;
    let (bx, by): (Vec<f64>, Vec<f64>) = b.iter().zip(rho_star).filter(|(x, _)| **x <= d).map(|(x, y)| (*x, *y)).unzip();
    let below = fit_power_law("b", &bx, &by)?;
    let (ax, ay): (Vec<f64>, Vec<f64>) =
        b.iter().zip(rho_star).filter(|(x, _)| **x >= d).map(|(x, y)| (x.ln(), 2.0 * y.ln())).unzip();
    if ax.len() < 2 {
        return invalid("need at least two grid points with b ≥ d");
    }
    let (above_slope, _, _, _) = ols(&ax, &ay);
    Ok(Elbow {
        elbow_b: hinge.knot.exp(),
        hinge,
        below,
        above_slope,
        above_points: ax.len(),
    })
}

/// ε must lie in (n^{−1/4}, 1].
pub fn check_epsilon_regime(eps: &[f64], n: u64) -> Result<()> {
    let floor = (n as f64).powf(-0.25);
    for &e in eps {
        if !(e > floor && e <= 1.0) {
            return Err(Error::Regime(format!("epsilon {e} is outside ({floor:.4}, 1] for n = {n}")));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhaseFit {
    pub low_slope: f64,
    pub high_slope: f64,
    pub crossover_epsilon: f64,
    pub predicted_boundary: f64,
}

/// √d/√m with shared randomness, d/√m without.
pub fn predicted_dp_boundary(d: usize, m: usize, shared: bool) -> f64 {
    let base = if shared { (d as f64).sqrt() } else { d as f64 };
    base / (m as f64).sqrt()
}

/// Two-branch fit of log ρ̂*² on log ε.
pub fn fit_phase(eps: &[f64], rho_star: &[f64], predicted_boundary: f64) -> Result<PhaseFit> {
    let lx: Vec<f64> = eps.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = rho_star.iter().map(|r| 2.0 * r.ln()).collect();
    let h = fit_hinge(&lx, &ly, 2)?;
    Ok(PhaseFit {
        low_slope: h.left_slope,
        high_slope: h.right_slope,
        crossover_epsilon: h.knot.exp(),
        predicted_boundary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseSweep {
    pub sweep: SweepResult,
    pub fit: PhaseFit,
}

/// ε-sweep at fixed (m, n, d) followed by the two-branch fit.
pub fn dp_phase_sweep(
    family: &[ProtocolSpec],
    base: &GridPoint,
    eps: &[f64],
    shared: bool,
    settings: &SweepSettings,
    seed: u64,
    exec: &Exec,
) -> Result<PhaseSweep> {
    check_epsilon_regime(eps, base.n)?;
    let grid: Vec<GridPoint> = eps
        .iter()
        .map(|e| GridPoint {
            epsilon: Some(*e),
            ..*base
        })
        .collect();
    let sweep = run_sweep(family, &grid, SweepParam::Epsilon, settings, seed, exec)?;
    let y: Vec<f64> = sweep.rows.iter().map(|r| r.rho_star).collect();
    let fit = fit_phase(eps, &y, predicted_dp_boundary(base.d, base.m, shared))?;
    Ok(PhaseSweep { sweep, fit })
}

/// A sweep whose ρ̂*² is exactly c·x^exponent, for exercising the fitting
/// and reporting path without simulation.
pub fn synthetic_sweep(param: SweepParam, base: &GridPoint, values: &[f64], c: f64, exponent: f64) -> Result<SweepResult> {
    if !(c > 0.0) {
        return invalid("synthetic constant must be positive");
    }
    let rows = values
        .iter()
        .map(|&v| {
            let mut p = *base;
            match param {
                SweepParam::M => p.m = v as usize,
                SweepParam::N => p.n = v as u64,
                SweepParam::D => p.d = v as usize,
                SweepParam::B => p.b = Some(v as usize),
                SweepParam::Epsilon => p.epsilon = Some(v),
            }
            let rho = (c * v.powf(exponent)).sqrt();
            SweepRow {
                point: p,
                value: v,
                rho_star: rho,
                best: 0,
                mc_stderr: 0.0,
                protocols: vec![ProtocolOutcome {
                    label: "synthetic".into(),
                    rho_star: Some(rho),
                    estimate: None,
                    failure: None,
                }],
            }
        })
        .collect();
    Ok(SweepResult {
        param,
        target_risk: DEFAULT_TARGET_RISK,
        mc: McSettings::default(),
        rows,
    })
}

/// Pairs (i, j) of consecutive grid points where ρ̂* increases by more than
/// `slack` combined standard errors although the resource grew.
pub fn monotonicity_violations(sweep: &SweepResult, slack: f64) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..sweep.rows.len()).collect();
    idx.sort_by(|a, b| sweep.rows[*a].value.total_cmp(&sweep.rows[*b].value));
    idx.windows(2)
        .filter(|w| {
            let (a, b) = (&sweep.rows[w[0]], &sweep.rows[w[1]]);
            b.rho_star > a.rho_star + slack * a.mc_stderr.hypot(b.mc_stderr)
        })
        .map(|w| (w[0], w[1]))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoneqSettings {
    pub r: f64,
    pub panel: PanelConfig,
    pub mc: McSettings,
    /// Constants of the sandwich C·√d/(mn) ≤ ρ² ≤ c·√d/(√m n).
    pub c_lower: f64,
    pub c_upper: f64,
    /// Refuse when d/(n ln d) is below this.
    pub min_sparsity: f64,
    /// Also refuse when n ≥ √d ln d fails.
    pub strict: bool,
}

impl Default for NoneqSettings {
    fn default() -> Self {
        NoneqSettings {
            r: 3.0,
            panel: PanelConfig::default(),
            mc: McSettings::default(),
            c_lower: 1.0,
            c_upper: 1.0,
            min_sparsity: 1.0,
            strict: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolRisk {
    pub label: String,
    pub bits: Option<usize>,
    pub risk: RiskEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoneqReport {
    pub d: usize,
    pub n: u64,
    pub m: usize,
    /// ⌈n log₂ d⌉.
    pub b: usize,
    pub mb: usize,
    pub mb_within_d: bool,
    /// d/(n ln d).
    pub sparsity: f64,
    pub condition_sparse: bool,
    /// n ≥ √d ln d.
    pub condition_sample: bool,
    pub rho: f64,
    pub rho_sq_lower: f64,
    pub rho_sq_upper: f64,
    pub rho_max: f64,
    pub rho_clamped: bool,
    pub raw: ProtocolRisk,
    pub gaussian: Vec<ProtocolRisk>,
    pub raw_below_third: bool,
    pub gaussian_above_two_thirds: bool,
    pub scope: String,
}

pub fn nonequivalence_bits(d: usize, n: u64) -> usize {
    (n as f64 * (d as f64).log2()).ceil() as usize
}

/// The b-bit Gaussian protocols the lower-bound side is checked against.
pub fn gaussian_bandwidth_family(d: usize, n: u64, m: usize, b: usize) -> Vec<ProtocolSpec> {
    let shared = ProtocolSpec::new(
        Model::Gaussian,
        Constraint::Bandwidth { b },
        Randomness::Shared,
        Aggregator::SumOfBits,
        m,
        n,
        d,
    );
    let mut split = shared.clone();
    split.groups = m.min(d / b.min(d)).max(1);
    let local = ProtocolSpec {
        randomness: Randomness::Local,
        ..shared.clone()
    };
    let vote = ProtocolSpec {
        aggregator: Aggregator::LocalVote,
        randomness: Randomness::Local,
        ..shared.clone()
    };
    let mut out = vec![shared, local, vote];
    if split.groups > 1 {
        out.insert(1, split);
    }
    out
}

/// Raw forwarding of the multinomial sample against the b-bit Gaussian
/// family at a separation inside the sandwich, with b = ⌈n log₂ d⌉ and
/// m·b ≤ d. The Gaussian side covers only the implemented protocols.
pub fn nonequivalence_demo(d: usize, n: u64, m: usize, settings: &NoneqSettings, seed: u64, exec: &Exec) -> Result<NoneqReport> {
    settings.mc.validate()?;
    if d < 4 || n == 0 || m == 0 {
        return invalid("need d ≥ 4, n ≥ 1 and m ≥ 1");
    }
    let b = nonequivalence_bits(d, n);
    let mb = m * b;
    let ln_d = (d as f64).ln();
    let sparsity = d as f64 / (n as f64 * ln_d);
    let condition_sparse = sparsity >= settings.min_sparsity;
    let condition_sample = n as f64 >= (d as f64).sqrt() * ln_d;
    if mb > d {
        return Err(Error::Regime(format!("m·b = {mb} exceeds d = {d}; the bit budget would carry every sample")));
    }
    if !condition_sparse {
        return Err(Error::Regime(format!(
            "d/(n ln d) = {sparsity:.3} is below {}; the multinomial and Gaussian models are close in this regime",
            settings.min_sparsity
        )));
    }
    if settings.strict && !condition_sample {
        return Err(Error::Regime(format!(
            "n = {n} is below √d ln d = {:.1}",
            (d as f64).sqrt() * ln_d
        )));
    }
    let (mf, nf, sd) = (m as f64, n as f64, (d as f64).sqrt());
    let rho_sq_lower = settings.c_lower * sd / (mf * nf);
    let rho_sq_upper = settings.c_upper * sd / (mf.sqrt() * nf);
    let rc = RatioClass::new(settings.r)?;
    let dirs = PanelDirections::new(d, settings.panel, rng::derive(seed, &[tag::PANEL]))?;
    let rho_max = dirs.max_rho(&rc);
    let target = (rho_sq_lower * rho_sq_upper).sqrt().sqrt();
    let rho = target.min(rho_max);
    let panel = dirs.at(rho, &rc)?;
    let q0 = SimplexVector::uniform(d);
    let risk_of = |spec: &ProtocolSpec, i: u64| -> Result<ProtocolRisk> {
        let s = rng::derive(seed, &[tag::AUX, i]);
        let cal = calibrate(spec, &q0, settings.mc.alpha, settings.mc.calibration_reps, s, exec)?;
        Ok(ProtocolRisk {
            label: spec.label(),
            bits: spec.bits_per_server(),
            risk: testing_risk(&cal, &q0, &panel, settings.mc.evaluation_reps, s, exec)?,
        })
    };
    let raw = risk_of(&raw_forwarding_protocol(d, n, m), 0)?;
    let gaussian = gaussian_bandwidth_family(d, n, m, b)
        .iter()
        .enumerate()
        .map(|(i, s)| risk_of(s, i as u64 + 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(NoneqReport {
        d,
        n,
        m,
        b,
        mb,
        mb_within_d: mb <= d,
        sparsity,
        condition_sparse,
        condition_sample,
        rho,
        rho_sq_lower,
        rho_sq_upper,
        rho_max,
        rho_clamped: rho < target,
        raw_below_third: raw.risk.risk < 1.0 / 3.0,
        gaussian_above_two_thirds: gaussian.iter().all(|g| g.risk.risk > 2.0 / 3.0),
        raw,
        gaussian,
        scope: "lower bound checked over the implemented b-bit Gaussian protocols only".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> GridPoint {
        GridPoint {
            m: 8,
            n: 64,
            d: 8,
            ..Default::default()
        }
    }

    #[test]
    fn synthetic_exponent_is_exact() {
        let s = synthetic_sweep(SweepParam::M, &base(), &[2.0, 4.0, 8.0, 16.0, 32.0], 0.7, -1.0).unwrap();
        let f = fit_exponent(&s).unwrap();
        assert!((f.exponent + 1.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_grids() {
        let s = synthetic_sweep(SweepParam::M, &base(), &[4.0], 1.0, -1.0).unwrap();
        assert!(fit_exponent(&s).is_err());
        assert!(fit_power_law("m", &[2.0; 5], &[0.1; 5]).is_err());
        let mut s = synthetic_sweep(SweepParam::M, &base(), &[2.0, 4.0, 8.0, 16.0], 1.0, -1.0).unwrap();
        s.rows[2].point.n = 128;
        assert!(fit_exponent(&s).is_err());
    }

    #[test]
    fn hinge_recovers_synthetic_branches() {
        let eps: Vec<f64> = (0..10).map(|i| 0.1 * 1.3f64.powi(i)).collect();
        let knot = 0.37f64;
        // slope −1 below the knot, −2 above, continuous
        let y: Vec<f64> = eps
            .iter()
            .map(|e| {
                let l = e.ln() - knot.ln();
                (-3.0 + if l < 0.0 { -l } else { -2.0 * l }).exp().sqrt()
            })
            .collect();
        let fit = fit_phase(&eps, &y, 0.25).unwrap();
        assert!((fit.low_slope + 1.0).abs() < 1e-9, "{fit:?}");
        assert!((fit.high_slope + 2.0).abs() < 1e-9, "{fit:?}");
        assert!((fit.crossover_epsilon - knot).abs() < 1e-9);
    }

    #[test]
    fn elbow_recovered_on_synthetic_data() {
        let d = 16usize;
        let b: Vec<f64> = [1, 2, 4, 8, 16, 32, 64].iter().map(|x| *x as f64).collect();
        let rho: Vec<f64> = b.iter().map(|x| (0.3 * x.min(d as f64).powf(-0.5)).sqrt()).collect();
        let e = detect_elbow(&b, &rho, d).unwrap();
        assert!((e.elbow_b - 16.0).abs() < 1e-6, "{e:?}");
        assert!((e.below.exponent + 0.5).abs() < 1e-9);
        assert!(e.above_slope.abs() < 1e-9);
        assert!(detect_elbow(&b[..4], &rho[..4], d).is_err());
    }

    #[test]
    fn epsilon_regime() {
        assert!(check_epsilon_regime(&[0.5, 1.0], 10_000).is_ok());
        assert!(matches!(check_epsilon_regime(&[0.05], 10_000), Err(Error::Regime(_))));
        assert!(check_epsilon_regime(&[1.5], 10_000).is_err());
        assert!((predicted_dp_boundary(4, 64, true) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_risk_is_a_bracket_error() {
        let exec = Exec::serial();
        let mut spec = ProtocolSpec::new(
            Model::Multinomial,
            Constraint::None,
            Randomness::Local,
            Aggregator::SumOfSquares,
            4,
            16,
            8,
        );
        spec.threshold = Some(f64::NEG_INFINITY);
        let dirs = PanelDirections::new(8, PanelConfig::default(), 1).unwrap();
        let mc = McSettings {
            evaluation_reps: 50,
            ..Default::default()
        };
        let curve = RiskCurve::new(&spec, RatioClass::new(3.0).unwrap(), &dirs, &mc, 2, &exec).unwrap();
        let top = curve.max_rho();
        assert!(matches!(
            estimate_rho_star(&curve, 0.5, (1e-3 * top, top), &mc),
            Err(Error::Bracket { .. })
        ));
    }

    /// Pooled chi-square against its noncentral chi-square approximation:
    /// the worst panel member has λ = N·d·κρ² with κ = min ‖q − q0‖₂²/ρ².
    #[test]
    fn pooled_rho_star_matches_noncentral_oracle() {
        use crate::models::Truth;
        use crate::numerics::{chi2_quantile, noncentral_chi2_sf};
        let exec = Exec::new(4);
        let spec = ProtocolSpec::new(
            Model::Multinomial,
            Constraint::None,
            Randomness::Local,
            Aggregator::PooledChiSquare,
            8,
            64,
            8,
        );
        let settings = SweepSettings::default();
        let (best, out) = family_rho_star(&[spec], &base(), &settings, 5, &exec).unwrap();
        let rho = out[best].rho_star.unwrap();

        let (d, total) = (8usize, 512.0);
        let dirs = PanelDirections::new(d, settings.panel, rng::derive(5, &[tag::PANEL])).unwrap();
        let rc = RatioClass::new(settings.r).unwrap();
        let probe = 0.5 * dirs.max_rho(&rc);
        let kappa = dirs
            .at(probe, &rc)
            .unwrap()
            .members()
            .iter()
            .map(|m| match &m.truth {
                Truth::Multinomial(q) => q.probs().iter().map(|p| (p - 1.0 / d as f64).powi(2)).sum::<f64>() / probe.powi(2),
                _ => unreachable!(),
            })
            .fold(f64::INFINITY, f64::min);
        let crit = chi2_quantile((d - 1) as f64, 0.95);
        let power = |r: f64| noncentral_chi2_sf((d - 1) as f64, total * d as f64 * kappa * r * r, crit);
        // power needed for type I + type II = 0.5 at level 0.05
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if power(mid) < 0.55 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let ratio = (rho / lo).powi(2);
        assert!((0.75..=1.33).contains(&ratio), "ρ̂*² / oracle = {ratio}");
        let nominal = rho * rho / (8f64.sqrt() / total);
        assert!(nominal > 1.0 && nominal < 10.0, "{nominal}");
    }

    #[test]
    fn nonequivalence_regime_refusals() {
        let exec = Exec::serial();
        let strict = NoneqSettings {
            strict: true,
            ..Default::default()
        };
        // d/(n ln d) ≈ 61.6 holds but n ≥ √d ln d fails
        let err = nonequivalence_demo(1 << 12, 8, 4, &strict, 1, &exec).unwrap_err();
        assert!(matches!(err, Error::Regime(_)));
        // m·b > d
        let err = nonequivalence_demo(1 << 12, 8, 64, &NoneqSettings::default(), 1, &exec).unwrap_err();
        assert!(matches!(err, Error::Regime(_)));
        assert_eq!(nonequivalence_bits(1 << 12, 8), 96);
    }
}
