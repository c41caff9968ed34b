//! Grid-search maximizer of the penalized recalibration objective.
//!
//! Deliberately independent of the Newton fitter: own aggregation, own
//! likelihood, no derivatives. Used only to cross-check it.

use std::collections::BTreeMap;

use super::SynthError;
use crate::ingest::Observation;

pub const ORACLE_A_RANGE: (f64, f64) = (-4.0, 4.0);
pub const ORACLE_B_RANGE: (f64, f64) = (0.05, 5.0);

const COARSE_STEP: f64 = 0.05;
const FINAL_STEP: f64 = 1e-7;
/// Half-width of each refinement window, in steps of the previous level.
const WINDOW: f64 = 4.0;
const SUBDIVISION: f64 = 4.0;

/// `(logit p, y, weight)` triples with equal `(p, y)` merged.
fn aggregate(obs: &[Observation], contract_weighted: bool) -> Vec<(f64, f64, f64)> {
    let mut acc: BTreeMap<(u8, bool), f64> = BTreeMap::new();
    for o in obs {
        let w = if contract_weighted { o.count as f64 } else { 1.0 };
        *acc.entry((o.price_cents, o.outcome)).or_insert(0.0) += w;
    }
    acc.into_iter()
        .map(|((cents, y), w)| {
            let p = f64::from(cents) / 100.0;
            ((p / (1.0 - p)).ln(), if y { 1.0 } else { 0.0 }, w)
        })
        .collect()
}

/// `log(1 / (1 + exp(-z)))` without overflow.
fn log_inv_logit(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn objective(data: &[(f64, f64, f64)], c: f64, a: f64, b: f64) -> f64 {
    let mut ll = 0.0;
    for &(x, y, w) in data {
        let z = a + b * x;
        ll += w * (y * log_inv_logit(z) + (1.0 - y) * log_inv_logit(-z));
    }
    ll - b * b / (2.0 * c)
}

/// Best lattice point of `[a0 +- half] x [b0 +- half]` at spacing `step`.
fn scan(data: &[(f64, f64, f64)], c: f64, centre: (f64, f64), half: (f64, f64), step: f64) -> (f64, f64, f64) {
    let na = (2.0 * half.0 / step).round() as i64;
    let nb = (2.0 * half.1 / step).round() as i64;
    let mut best = (f64::NEG_INFINITY, centre.0, centre.1);
    for i in 0..=na {
        let a = centre.0 - half.0 + i as f64 * step;
        for j in 0..=nb {
            let b = centre.1 - half.1 + j as f64 * step;
            let v = objective(data, c, a, b);
            if v > best.0 {
                best = (v, a, b);
            }
        }
    }
    best
}

/// Maximizes `sum w [y log pi + (1 - y) log(1 - pi)] - b^2 / (2 C)` over
/// `[-4, 4] x [0.05, 5]` by a coarse lattice followed by nested refinements.
///
/// A coarse optimum on the edge of the range is an error: the true maximizer
/// may lie outside it.
pub fn oracle_fit(obs: &[Observation], c: f64, contract_weighted: bool) -> Result<(f64, f64), SynthError> {
    if obs.is_empty() {
        return Err(SynthError::OracleEmpty);
    }
    let data = aggregate(obs, contract_weighted);
    let centre = ((ORACLE_A_RANGE.0 + ORACLE_A_RANGE.1) / 2.0, (ORACLE_B_RANGE.0 + ORACLE_B_RANGE.1) / 2.0);
    let half = ((ORACLE_A_RANGE.1 - ORACLE_A_RANGE.0) / 2.0, (ORACLE_B_RANGE.1 - ORACLE_B_RANGE.0) / 2.0);
    let (_, mut a, mut b) = scan(&data, c, centre, half, COARSE_STEP);
    let edge = COARSE_STEP / 2.0;
    if a - ORACLE_A_RANGE.0 < edge || ORACLE_A_RANGE.1 - a < edge || b - ORACLE_B_RANGE.0 < edge || ORACLE_B_RANGE.1 - b < edge {
        return Err(SynthError::OracleBoundary { a, b });
    }
    let mut step = COARSE_STEP;
    while step > FINAL_STEP {
        let h = WINDOW * step;
        let fine = step / SUBDIVISION;
        // Recentre at the same resolution while the optimum sits on the window edge.
        loop {
            let (_, na, nb) = scan(&data, c, (a, b), (h, h), fine);
            let on_edge = (na - a).abs() > h - fine / 2.0 || (nb - b).abs() > h - fine / 2.0;
            a = na;
            b = nb;
            if !on_edge {
                break;
            }
        }
        step = fine;
    }
    Ok((a, b))
}
