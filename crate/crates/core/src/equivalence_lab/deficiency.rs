//! Upper bounds on the deficiency between a multinomial experiment and its
//! Gaussian counterpart, by exhibiting explicit kernels.

use std::sync::OnceLock;

use serde::Serialize;
use statrs::distribution::{Binomial, Discrete};

use super::measure::{tv_exact, FiniteMeasure, KernelMatrix, MarkovKernel};
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::numerics::normal_cdf;
use crate::transforms::DEFAULT_C_SHIFT;

/// Atom that collects mass falling outside a grid.
pub const OVERFLOW: i64 = -1;

/// Default resolution for one-dimensional Gaussian discretization.
pub const DEFAULT_BINS: usize = 1 << 10;
pub const DEFAULT_WIDTH_SD: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Discretized {
    pub measure: FiniteMeasure,
    /// Mass outside the grid, carried by the overflow atom.
    pub outside_mass: f64,
}

/// N(mean, sd²) on `bins` equal cells over mean ± width·sd, by CDF
/// differences. Cells are atoms 0..bins; the tails go to `OVERFLOW`.
pub fn discretize_gaussian(mean: f64, sd: f64, bins: usize, width_sd: f64) -> Result<Discretized> {
    if !(sd > 0.0) || bins == 0 || !(width_sd > 0.0) {
        return invalid("need sd > 0, bins ≥ 1 and a positive width");
    }
    let lo = mean - width_sd * sd;
    let h = 2.0 * width_sd * sd / bins as f64;
    let mut w: Vec<f64> = (0..bins)
        .map(|i| normal_cdf((lo + (i + 1) as f64 * h - mean) / sd) - normal_cdf((lo + i as f64 * h - mean) / sd))
        .collect();
    let inside: f64 = w.iter().sum();
    let outside_mass = (1.0 - inside).max(0.0);
    let mut atoms: Vec<i64> = (0..bins as i64).collect();
    atoms.push(OVERFLOW);
    w.push(outside_mass);
    Ok(Discretized {
        measure: FiniteMeasure::probability(atoms, w)?,
        outside_mass,
    })
}

/// Square grid of `bins × bins` equal cells over [lo, hi)². Cell (i, j) is
/// atom i·bins + j.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Grid2 {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Grid2 {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo) || bins == 0 {
            return invalid("grid needs hi > lo and at least one bin");
        }
        Ok(Grid2 { lo, hi, bins })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn atoms(&self) -> Vec<i64> {
        let mut a = vec![OVERFLOW];
        a.extend(0..(self.bins * self.bins) as i64);
        a
    }

    fn axis_probs(&self, mean: f64, sd: f64) -> Vec<f64> {
        let h = self.width();
        (0..self.bins)
            .map(|i| {
                let a = self.lo + i as f64 * h;
                normal_cdf((a + h - mean) / sd) - normal_cdf((a - mean) / sd)
            })
            .collect()
    }

    /// N(mean, sd² I₂) by per-axis CDF differences, overflow included.
    pub fn isotropic(&self, mean: [f64; 2], sd: f64) -> Result<Discretized> {
        let px = self.axis_probs(mean[0], sd);
        let py = self.axis_probs(mean[1], sd);
        let mut w = Vec::with_capacity(self.bins * self.bins + 1);
        w.push(0.0);
        for a in &px {
            for b in &py {
                w.push(a * b);
            }
        }
        let inside: f64 = px.iter().sum::<f64>() * py.iter().sum::<f64>();
        let outside_mass = (1.0 - inside).max(0.0);
        w[0] = outside_mass;
        Ok(Discretized {
            measure: FiniteMeasure::probability(self.atoms(), w)?,
            outside_mass,
        })
    }
}

#[derive(Clone, Debug)]
struct Row {
    x0: usize,
    y0: usize,
    w: usize,
    vals: Vec<f64>,
    outside: f64,
    quadrature_error: f64,
}

/// Kernel from a two-cell count k ~ Bin(n, q₁) to the grid: the root vector
/// (√((k+c)/n), √((n−k+c)/n)) is normalized to the unit circle and smoothed
/// by a Gaussian with variance 1/(2n) along the radius and 1/(4n) along the
/// tangent, so that the output matches N(√q, I₂/(2n)) to first order. Rows
/// are midpoint-rule densities over a ±`box_sd` window, built on first use.
pub struct RootSmoother {
    n: u64,
    c_shift: f64,
    grid: Grid2,
    box_sd: f64,
    rows: Vec<OnceLock<Row>>,
}

impl RootSmoother {
    pub fn new(n: u64, c_shift: f64, grid: Grid2) -> Result<Self> {
        if n == 0 || !(c_shift >= 0.0) {
            return invalid("need n ≥ 1 and a nonnegative shift");
        }
        Ok(RootSmoother {
            n,
            c_shift,
            grid,
            box_sd: 7.0,
            rows: (0..=n).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    pub fn mean_of(&self, k: u64) -> [f64; 2] {
        let n = self.n as f64;
        let a = ((k as f64 + self.c_shift) / n).sqrt();
        let b = ((n - k as f64 + self.c_shift) / n).sqrt();
        let r = a.hypot(b);
        [a / r, b / r]
    }

    fn row(&self, k: u64) -> &Row {
        self.rows[k as usize].get_or_init(|| self.build_row(k))
    }

    fn build_row(&self, k: u64) -> Row {
        let n = self.n as f64;
        let u = self.mean_of(k);
        let t = [-u[1], u[0]];
        let (prec_u, prec_t) = (2.0 * n, 4.0 * n);
        let h = self.grid.width();
        let reach = self.box_sd * (1.0 / (2.0 * n)).sqrt();
        let cell = |v: f64| ((v - self.grid.lo) / h).floor() as i64;
        let (ix0, ix1) = (cell(u[0] - reach), cell(u[0] + reach));
        let (iy0, iy1) = (cell(u[1] - reach), cell(u[1] + reach));
        // density of N(u, Σ) with Σ⁻¹ = 2n uuᵀ + 4n ttᵀ
        let norm = (prec_u * prec_t).sqrt() / (2.0 * std::f64::consts::PI) * h * h;
        let b = self.grid.bins as i64;
        let (cx0, cx1) = (ix0.clamp(0, b - 1) as usize, ix1.clamp(0, b - 1) as usize);
        let (cy0, cy1) = (iy0.clamp(0, b - 1) as usize, iy1.clamp(0, b - 1) as usize);
        let (w, hgt) = (cx1 - cx0 + 1, cy1 - cy0 + 1);
        let mut vals = vec![0.0; w * hgt];
        let (mut total, mut inside) = (0.0, 0.0);
        for i in ix0..=ix1 {
            let x = self.grid.lo + (i as f64 + 0.5) * h - u[0];
            for j in iy0..=iy1 {
                let y = self.grid.lo + (j as f64 + 0.5) * h - u[1];
                let du = x * u[0] + y * u[1];
                let dt = x * t[0] + y * t[1];
                let p = norm * (-0.5 * (prec_u * du * du + prec_t * dt * dt)).exp();
                total += p;
                if (0..b).contains(&i) && (0..b).contains(&j) {
                    vals[(i as usize - cx0) * hgt + (j as usize - cy0)] = p;
                    inside += p;
                }
            }
        }
        let inside_frac = inside / total;
        vals.iter_mut().for_each(|v| *v /= total);
        Row {
            x0: cx0,
            y0: cy0,
            w: hgt,
            vals,
            outside: (1.0 - inside_frac).max(0.0),
            quadrature_error: (total - 1.0).abs(),
        }
    }

    /// Dense matrix from counts 0..=n to the grid atoms.
    pub fn to_matrix(&self) -> Result<KernelMatrix> {
        let atoms = self.grid.atoms();
        let rows = (0..=self.n as i64)
            .map(|k| Ok(self.push(&FiniteMeasure::point(k))?.weights().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        KernelMatrix::new((0..=self.n as i64).collect(), atoms, rows)
    }

    /// Largest |midpoint mass − 1| over the rows built so far.
    pub fn quadrature_error(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.get())
            .map(|r| r.quadrature_error)
            .fold(0.0, f64::max)
    }
}

impl MarkovKernel for RootSmoother {
    fn push(&self, p: &FiniteMeasure) -> Result<FiniteMeasure> {
        let b = self.grid.bins;
        let mut out = vec![0.0; b * b + 1];
        for (&k, &wk) in p.atoms().iter().zip(p.weights()) {
            if k < 0 || k as u64 > self.n {
                return invalid(format!("count {k} is outside 0..={}", self.n));
            }
            if wk == 0.0 {
                continue;
            }
            let row = self.row(k as u64);
            out[0] += wk * row.outside;
            let hgt = row.w;
            for (ci, chunk) in row.vals.chunks(hgt).enumerate() {
                let base = 1 + (row.x0 + ci) * b + row.y0;
                out[base..base + hgt].iter_mut().zip(chunk).for_each(|(o, v)| *o += wk * v);
            }
        }
        FiniteMeasure::new(self.grid.atoms(), out)
    }
}

pub fn binomial_measure(n: u64, p: f64) -> Result<FiniteMeasure> {
    let b = Binomial::new(p, n).map_err(|e| Error::Validation(e.to_string()))?;
    let w: Vec<f64> = (0..=n).map(|k| b.pmf(k)).collect();
    let s: f64 = w.iter().sum();
    FiniteMeasure::probability((0..=n as i64).collect(), w.into_iter().map(|x| x / s).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeficiencyBound {
    /// sup_f TV(Q_f C, P_f).
    pub value: f64,
    pub argmax: usize,
    pub per_point: Vec<f64>,
}

/// sup over the grid of TV(Q_f C, P_f) for one candidate kernel C.
pub fn deficiency_upper(model_p: &[FiniteMeasure], model_q: &[FiniteMeasure], c: &dyn MarkovKernel) -> Result<DeficiencyBound> {
    deficiency_upper_with(model_p, model_q, c, &Exec::serial())
}

pub fn deficiency_upper_with(
    model_p: &[FiniteMeasure],
    model_q: &[FiniteMeasure],
    c: &dyn MarkovKernel,
    exec: &Exec,
) -> Result<DeficiencyBound> {
    if model_p.len() != model_q.len() {
        return invalid(format!("grids differ in length: {} vs {}", model_p.len(), model_q.len()));
    }
    if model_p.is_empty() {
        return invalid("empty parameter grid");
    }
    let per_point = exec
        .map(model_p.len(), |i| tv_exact(&c.push(&model_q[i])?, &model_p[i]))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let (argmax, value) = per_point
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    Ok(DeficiencyBound {
        value,
        argmax,
        per_point,
    })
}

/// Binomial and discretized Gaussian experiments for d = 2 on a grid of
/// first-cell probabilities.
pub struct TwoCellPair {
    pub n: u64,
    pub q1: Vec<f64>,
    pub grid: Grid2,
    pub binomial: Vec<FiniteMeasure>,
    pub gaussian: Vec<FiniteMeasure>,
    pub outside_mass: f64,
}

impl TwoCellPair {
    /// The grid covers every Gaussian mean ± `pad_sd` standard deviations.
    pub fn new(n: u64, q1: &[f64], bins: usize, pad_sd: f64) -> Result<Self> {
        if q1.is_empty() || q1.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return invalid("first-cell probabilities must lie in (0, 1)");
        }
        if n == 0 {
            return invalid("n must be positive");
        }
        let sd = (1.0 / (2.0 * n as f64)).sqrt();
        let roots: Vec<[f64; 2]> = q1.iter().map(|q| [q.sqrt(), (1.0 - q).sqrt()]).collect();
        let lo = roots.iter().flatten().copied().fold(f64::INFINITY, f64::min) - pad_sd * sd;
        let hi = roots.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max) + pad_sd * sd;
        let grid = Grid2::new(lo, hi, bins)?;
        let mut gaussian = Vec::with_capacity(q1.len());
        let mut outside_mass: f64 = 0.0;
        for r in &roots {
            let g = grid.isotropic(*r, sd)?;
            outside_mass = outside_mass.max(g.outside_mass);
            gaussian.push(g.measure);
        }
        let binomial = q1.iter().map(|q| binomial_measure(n, *q)).collect::<Result<_>>()?;
        Ok(TwoCellPair {
            n,
            q1: q1.to_vec(),
            grid,
            binomial,
            gaussian,
            outside_mass,
        })
    }

    pub fn smoother(&self) -> Result<RootSmoother> {
        RootSmoother::new(self.n, DEFAULT_C_SHIFT, self.grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarterRow {
    pub n: u64,
    pub deficiency_upper: f64,
    pub worst_q1: f64,
    pub bins: usize,
    /// Largest Gaussian mass outside the grid.
    pub outside_mass: f64,
    /// Largest midpoint-rule mass error over the kernel rows used.
    pub quadrature_error: f64,
}

/// Deficiency upper bound of the binomial experiment with respect to the
/// discretized Gaussian one, with the root-smoother kernel, for each n.
pub fn carter_direction(ns: &[u64], q1: &[f64], bins: usize, exec: &Exec) -> Result<Vec<CarterRow>> {
    ns.iter()
        .map(|&n| {
            let pair = TwoCellPair::new(n, q1, bins, 7.0)?;
            let c = pair.smoother()?;
            let d = deficiency_upper_with(&pair.gaussian, &pair.binomial, &c, exec)?;
            Ok(CarterRow {
                n,
                deficiency_upper: d.value,
                worst_q1: q1[d.argmax],
                bins,
                outside_mass: pair.outside_mass,
                quadrature_error: c.quadrature_error(),
            })
        })
        .collect()
}
