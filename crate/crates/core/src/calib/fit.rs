use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::table::{PriceTable, WeightScheme};
use super::CalibError;
use crate::ingest::CellData;
use crate::scalar::{logit, sigmoid, softplus, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Inverse penalty strength on the slope: the objective subtracts `b^2 / (2 C)`.
    pub regularization_c: f64,
    pub weight_scheme: WeightScheme,
    pub max_iterations: usize,
    /// Convergence threshold on the largest absolute Newton step.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { regularization_c: 10.0, weight_scheme: WeightScheme::Trade, max_iterations: 100, tolerance: 1e-8 }
    }
}

impl FitConfig {
    pub fn with_scheme(self, weight_scheme: WeightScheme) -> Self {
        FitConfig { weight_scheme, ..self }
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.regularization_c > 0.0) {
            return Err(CalibError::Config(format!("regularization_c must be positive, got {}", self.regularization_c)));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(CalibError::Config("tolerance and max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit<T> {
    pub a: T,
    pub b: T,
    pub se_a: T,
    pub se_b: T,
    /// Trades in the fit.
    pub n: usize,
    /// Sum of the likelihood weights.
    pub effective_weight: T,
    /// Penalized log-likelihood at the optimum.
    pub loglik: T,
    pub converged: bool,
    pub iterations: usize,
}

/// One likelihood term: `w * log P(y | x)` with `x = logit(price)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPoint<T> {
    pub x: T,
    pub y: bool,
    pub w: T,
}

/// `logit(c / 100)` for every whole-cent price, computed once in f64.
fn logit_cents(c: u8) -> f64 {
    static TABLE: OnceLock<[f64; 100]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [f64::NAN; 100];
        for (c, x) in t.iter_mut().enumerate().skip(1) {
            *x = logit(c as f64 / 100.0);
        }
        t
    })[usize::from(c)]
}

pub fn points_from_table<T: Scalar>(table: &PriceTable, scheme: WeightScheme) -> Vec<WeightedPoint<T>> {
    table
        .weighted(scheme)
        .map(|(c, y, w)| WeightedPoint {
            x: T::lit(logit_cents(c)),
            y,
            w: T::lit(w as f64),
        })
        .collect()
}

/// Fits a table of sufficient statistics.
pub fn fit_table<T: Scalar>(table: &PriceTable, cfg: &FitConfig) -> Result<CalibrationFit<T>, CalibError> {
    let n = table.trades() as usize;
    let mut fit = fit_points(&points_from_table::<T>(table, cfg.weight_scheme), T::lit(cfg.regularization_c), cfg)?;
    fit.n = n;
    Ok(fit)
}

/// Fits one analysis cell.
pub fn fit_recalibration<T: Scalar>(cell: &CellData, cfg: &FitConfig) -> Result<CalibrationFit<T>, CalibError> {
    fit_table(&PriceTable::from_observations(&cell.observations), cfg)
}

/// Penalized objective `sum w [y log pi + (1 - y) log(1 - pi)] - b^2 / (2 C)`.
pub fn penalized_loglik<T: Scalar>(points: &[WeightedPoint<T>], c: T, a: T, b: T) -> T {
    let ll: T = points
        .iter()
        .map(|p| {
            let z = a + b * p.x;
            // log sigma(z) = -softplus(-z); log(1 - sigma(z)) = -softplus(z)
            -p.w * if p.y { softplus(-z) } else { softplus(z) }
        })
        .sum();
    ll - b * b / (T::lit(2.0) * c)
}

/// Gradient and negative Hessian `(g_a, g_b, i_aa, i_ab, i_bb)` of the objective.
pub fn score_and_information<T: Scalar>(points: &[WeightedPoint<T>], c: T, a: T, b: T) -> (T, T, T, T, T) {
    let (mut ga, mut gb, mut iaa, mut iab, mut ibb) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for p in points {
        let pi = sigmoid(a + b * p.x);
        let r = p.w * (if p.y { T::one() } else { T::zero() } - pi);
        let v = p.w * pi * (T::one() - pi);
        ga += r;
        gb += r * p.x;
        iaa += v;
        iab += v * p.x;
        ibb += v * p.x * p.x;
    }
    (ga, gb - b / c, iaa, iab, ibb + T::one() / c)
}

fn check_design<T: Scalar>(points: &[WeightedPoint<T>]) -> Result<(), CalibError> {
    let live: Vec<_> = points.iter().filter(|p| p.w > T::zero()).collect();
    if live.len() < 2 && live.iter().map(|p| p.w).sum::<T>() < T::lit(2.0) {
        return Err(CalibError::TooFew { n: live.len() });
    }
    if let Some(first) = live.first() {
        if live.iter().all(|p| p.y == first.y) {
            return Err(CalibError::Separation { all_yes: first.y });
        }
        if live.iter().all(|p| p.x == first.x) {
            let cents = (sigmoid(first.x).to_f64_lossy() * 100.0).round() as u8;
            return Err(CalibError::Identification { price_cents: cents });
        }
    }
    Ok(())
}

/// Newton ascent with step halving on arbitrary weighted points.
pub fn fit_points<T: Scalar>(points: &[WeightedPoint<T>], c: T, cfg: &FitConfig) -> Result<CalibrationFit<T>, CalibError> {
    newton(points, c, cfg, None)
}

/// As [`fit_points`], also recording the objective after every iteration.
pub fn fit_points_traced<T: Scalar>(
    points: &[WeightedPoint<T>],
    c: T,
    cfg: &FitConfig,
) -> Result<(CalibrationFit<T>, Vec<T>), CalibError> {
    let mut trace = Vec::new();
    let fit = newton(points, c, cfg, Some(&mut trace))?;
    Ok((fit, trace))
}

/// Objective, gradient and information at one point, sharing one `exp` per term.
struct Eval<T> {
    f: T,
    ga: T,
    gb: T,
    iaa: T,
    iab: T,
    ibb: T,
}

fn evaluate<T: Scalar>(points: &[WeightedPoint<T>], c: T, a: T, b: T) -> Eval<T> {
    let mut e = Eval { f: T::zero(), ga: T::zero(), gb: T::zero(), iaa: T::zero(), iab: T::zero(), ibb: T::zero() };
    for p in points {
        let z = a + b * p.x;
        let ex = (-z.abs()).exp();
        let lse = ex.ln_1p();
        let pi = if z >= T::zero() { T::one() / (T::one() + ex) } else { ex / (T::one() + ex) };
        // log sigma(z) = -softplus(-z); log(1 - sigma(z)) = -softplus(z)
        let sp = if p.y { lse + (-z).max(T::zero()) } else { lse + z.max(T::zero()) };
        e.f -= p.w * sp;
        let r = p.w * (if p.y { T::one() } else { T::zero() } - pi);
        let v = p.w * pi * (T::one() - pi);
        e.ga += r;
        e.gb += r * p.x;
        e.iaa += v;
        e.iab += v * p.x;
        e.ibb += v * p.x * p.x;
    }
    e.f -= b * b / (T::lit(2.0) * c);
    e.gb -= b / c;
    e.ibb += T::one() / c;
    e
}

fn newton<T: Scalar>(
    points: &[WeightedPoint<T>],
    c: T,
    cfg: &FitConfig,
    mut trace: Option<&mut Vec<T>>,
) -> Result<CalibrationFit<T>, CalibError> {
    cfg.validate()?;
    check_design(points)?;
    let (mut a, mut b) = (T::zero(), T::zero());
    let mut cur = evaluate(points, c, a, b);
    if let Some(t) = trace.as_deref_mut() {
        t.push(cur.f);
    }
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iterations {
        iterations = it;
        let det = cur.iaa * cur.ibb - cur.iab * cur.iab;
        if !(det > T::zero()) || !det.is_finite() {
            return Err(CalibError::NonFinite { iteration: it });
        }
        let da = (cur.ibb * cur.ga - cur.iab * cur.gb) / det;
        let db = (cur.iaa * cur.gb - cur.iab * cur.ga) / det;
        // the achievable step floor in T is a few ulps of the parameters
        let floor = T::lit(4.0) * T::epsilon() * T::one().max(a.abs()).max(b.abs());
        let tol = T::lit(cfg.tolerance).max(floor);
        if da.abs().max(db.abs()) < tol {
            // Inside the tolerance objective differences are rounding noise;
            // the full Newton step is still the better point, so take it.
            a += da;
            b += db;
            cur = evaluate(points, c, a, b);
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(cur.f);
            }
            converged = true;
            break;
        }
        // Near the optimum the gain falls below the rounding error of the sum.
        let noise = T::lit(4.0) * T::epsilon() * T::one().max(cur.f.abs());
        let mut t = T::one();
        let (mut na, mut nb, mut next);
        loop {
            na = a + t * da;
            nb = b + t * db;
            next = evaluate(points, c, na, nb);
            if next.f >= cur.f - noise || (t * da).abs().max((t * db).abs()) < tol {
                break;
            }
            t *= T::lit(0.5);
        }
        if !next.f.is_finite() {
            return Err(CalibError::NonFinite { iteration: it });
        }
        let mut step = (t * da).abs().max((t * db).abs());
        let near = da.abs().max(db.abs()) < tol.sqrt();
        let full = (t < T::one() && near).then(|| evaluate(points, c, a + da, b + db));
        let norm = |e: &Eval<T>| e.ga.abs().max(e.gb.abs());
        if let Some(full) = full.filter(|e| e.f.is_finite() && norm(e) < norm(&cur)) {
            // The full step was refused on an objective difference lost in
            // rounding; the gradient is not, and it says the step is progress.
            step = da.abs().max(db.abs());
            a += da;
            b += db;
            cur = full;
        } else if next.f >= cur.f - noise {
            a = na;
            b = nb;
            cur = next;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(cur.f);
        }
        if step < tol {
            converged = true;
            break;
        }
    }
    let det = cur.iaa * cur.ibb - cur.iab * cur.iab;
    let (se_a, se_b) = if det > T::zero() {
        ((cur.ibb / det).sqrt(), (cur.iaa / det).sqrt())
    } else {
        (T::nan(), T::nan())
    };
    let f = cur.f;
    Ok(CalibrationFit {
        a,
        b,
        se_a,
        se_b,
        n: points.len(),
        effective_weight: points.iter().map(|p| p.w).sum(),
        loglik: f,
        converged,
        iterations,
    })
}

/// Maps a raw price through slope `theta`: `p^theta / (p^theta + (1 - p)^theta)`.
pub fn recalibrate<T: Scalar>(p: T, theta: T) -> Result<T, CalibError> {
    if !(p > T::zero() && p < T::one()) {
        return Err(CalibError::Domain(format!("price {p} outside (0, 1)")));
    }
    if !(theta > T::zero()) || !theta.is_finite() {
        return Err(CalibError::Domain(format!("slope {theta} must be positive and finite")));
    }
    Ok(sigmoid(theta * logit(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point(n: usize) -> PriceTable {
        // outcome frequencies exactly 0.2 at p = 0.2 and 0.8 at p = 0.8
        let mut t = PriceTable::default();
        let k = n as u64 / 10;
        t.add(20, true, k, k);
        t.add(20, false, 4 * k, 4 * k);
        t.add(80, true, 4 * k, 4 * k);
        t.add(80, false, k, k);
        t
    }

    #[test]
    fn perfectly_calibrated_two_point_design() {
        let fit: CalibrationFit<f64> = fit_table(&two_point(10_000), &FitConfig::default()).unwrap();
        assert!(fit.a.abs() < 0.02 && (fit.b - 1.0).abs() < 0.02, "{fit:?}");
        assert!(fit.b < 1.0, "penalty shrinks towards zero");
        assert!(fit.converged && fit.se_b > 0.0 && fit.loglik <= 0.0);
        assert_eq!(fit.n, 10_000);
    }

    #[test]
    fn first_order_optimality_and_monotone_ascent() {
        let pts = points_from_table::<f64>(&two_point(1000), WeightScheme::Trade);
        let (fit, trace) = fit_points_traced(&pts, 10.0, &FitConfig::default()).unwrap();
        let (ga, gb, ..) = score_and_information(&pts, 10.0, fit.a, fit.b);
        assert!(ga.hypot(gb) < 1e-6);
        // steps within rounding noise may lose a few ulps
        assert!(trace.windows(2).all(|w| w[1] >= w[0] - 4.0 * f64::EPSILON * w[0].abs()));
    }

    #[test]
    fn degenerate_cells() {
        let cfg = FitConfig::default();
        let mut t = PriceTable::default();
        t.add(30, true, 5, 5);
        t.add(60, true, 5, 5);
        assert_eq!(fit_table::<f64>(&t, &cfg).unwrap_err(), CalibError::Separation { all_yes: true });
        let mut t = PriceTable::default();
        t.add(40, true, 5, 5);
        t.add(40, false, 5, 5);
        assert_eq!(fit_table::<f64>(&t, &cfg).unwrap_err(), CalibError::Identification { price_cents: 40 });
        let mut t = PriceTable::default();
        t.add(40, true, 1, 1);
        assert!(matches!(fit_table::<f64>(&t, &cfg), Err(CalibError::TooFew { .. })));
    }

    #[test]
    fn recalibrate_values() {
        assert!((recalibrate(0.70, 1.83).unwrap() - 0.824_993_888_824_996_5_f64).abs() < 1e-13);
        assert!((recalibrate(0.30, 2.0).unwrap() - 0.155_172_413_793_103_45_f64).abs() < 1e-15);
        assert_eq!(recalibrate(0.5_f64, 7.0).unwrap(), 0.5);
        assert!(recalibrate(1.0_f64, 2.0).is_err());
        assert!(recalibrate(0.5_f64, 0.0).is_err());
    }

    #[test]
    fn f32_fit_runs() {
        let fit: CalibrationFit<f32> = fit_table(&two_point(10_000), &FitConfig::default()).unwrap();
        assert!((fit.b - 1.0).abs() < 0.02 && fit.converged);
    }
}
