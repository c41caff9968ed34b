use std::collections::BTreeMap;

use serde::Serialize;

use super::DecompError;
use crate::scalar::Scalar;

/// Per-(domain, horizon) slopes pooled over sizes, with their trade counts.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HorizonSlopeTable<T> {
    pub entries: BTreeMap<(String, usize), (T, u64)>,
}

impl<T: Scalar> HorizonSlopeTable<T> {
    pub fn insert(&mut self, domain: &str, horizon_bin: usize, slope: T, trades: u64) {
        self.entries.insert((domain.to_string(), horizon_bin), (slope, trades));
    }

    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = self.entries.keys().map(|(d, _)| d.clone()).collect();
        out.dedup();
        out
    }
}

/// Horizon bins used for cross-platform means: 3-6h onwards.
pub const DEFAULT_RELIABLE_BINS: [usize; 7] = [2, 3, 4, 5, 6, 7, 8];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatformRow<T> {
    pub domain: String,
    pub horizon_bin: usize,
    pub slope_a: T,
    pub slope_b: T,
    /// `slope_b - slope_a`.
    pub delta: T,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatformMean<T> {
    pub domain: String,
    /// Each platform's mean is weighted by its own trade counts over reliable bins.
    pub mean_a: T,
    pub mean_b: T,
    pub delta: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatformComparison<T> {
    pub rows: Vec<PlatformRow<T>>,
    pub means: Vec<PlatformMean<T>>,
}

pub fn platform_delta<T: Scalar>(
    a: &HorizonSlopeTable<T>,
    b: &HorizonSlopeTable<T>,
    reliable_bins: &[usize],
) -> Result<PlatformComparison<T>, DecompError> {
    let shared: Vec<String> = a.domains().into_iter().filter(|d| b.domains().contains(d)).collect();
    if shared.is_empty() {
        return Err(DecompError::NoOverlap);
    }
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for domain in &shared {
        let (mut wa, mut sa, mut wb, mut sb) = (T::zero(), T::zero(), T::zero(), T::zero());
        for ((d, h), &(slope_a, na)) in a.entries.range((domain.clone(), 0)..=(domain.clone(), usize::MAX)) {
            debug_assert_eq!(d, domain);
            let Some(&(slope_b, nb)) = b.entries.get(&(domain.clone(), *h)) else { continue };
            let reliable = reliable_bins.contains(h);
            rows.push(PlatformRow { domain: domain.clone(), horizon_bin: *h, slope_a, slope_b, delta: slope_b - slope_a, reliable });
            if reliable {
                let (fa, fb) = (T::lit(na as f64), T::lit(nb as f64));
                wa += fa;
                sa += fa * slope_a;
                wb += fb;
                sb += fb * slope_b;
            }
        }
        let (mean_a, mean_b) = (sa / wa, sb / wb);
        means.push(PlatformMean { domain: domain.clone(), mean_a, mean_b, delta: mean_b - mean_a });
    }
    Ok(PlatformComparison { rows, means })
}
