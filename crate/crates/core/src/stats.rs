//! Statistical kernel: error margins, minimum query counts, the inverse
//! normal CDF, nearest-rank percentiles and overtime fractions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Nanos;

/// Query counts are rounded up to a multiple of this (2^13).
pub const QUERY_COUNT_UNIT: u64 = 8_192;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("{name} must lie strictly between 0 and 1, got {value}")]
    OutOfUnitInterval { name: &'static str, value: f64 },
    #[error("percentile must lie in (0, 1], got {0}")]
    BadPercentile(f64),
    #[error("cannot compute a statistic over an empty latency list")]
    Empty,
}

fn check_open_unit(name: &'static str, value: f64) -> Result<f64, StatsError> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(StatsError::OutOfUnitInterval { name, value })
    }
}

/// Tail percentile, confidence level and the margin derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSpec {
    pub tail_latency: f64,
    pub confidence: f64,
    pub margin: f64,
}

impl ConfidenceSpec {
    pub fn new(tail_latency: f64, confidence: f64) -> Result<Self, StatsError> {
        let margin = margin(tail_latency)?;
        let confidence = check_open_unit("confidence", confidence)?;
        Ok(Self { tail_latency, confidence, margin })
    }
}

/// Result of the query-count formula: the raw integer count and the count
/// rounded up to a multiple of [`QUERY_COUNT_UNIT`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCount {
    pub raw: u64,
    pub rounded: u64,
}

/// One twentieth of the distance between the tail percentile and 1.
pub fn margin(tail_latency: f64) -> Result<f64, StatsError> {
    let t = check_open_unit("tail_latency", tail_latency)?;
    Ok((1.0 - t) / 20.0)
}

// Acklam's rational approximation (relative error ~1.15e-9), refined below.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.02425;

fn acklam(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Standard normal quantile for `p` in (0, 1).
pub fn normal_inverse_cdf(p: f64) -> Result<f64, StatsError> {
    let p = check_open_unit("p", p)?;
    if p > 0.5 {
        // 1 - p is exact here, and the lower tail keeps the refinement well-conditioned.
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

fn lower_quantile(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let x = acklam(p);
    // One Newton step on Phi(x) - p.
    let cdf = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    x - (cdf - p) / pdf
}

/// Number of queries needed so the measured tail percentile lies within the
/// margin at the requested confidence.
///
/// The raw count is the formula value rounded to the nearest integer; the
/// rounded count is then lifted to the next multiple of 2^13.
pub fn min_query_count(spec: &ConfidenceSpec) -> Result<QueryCount, StatsError> {
    let t = check_open_unit("tail_latency", spec.tail_latency)?;
    let c = check_open_unit("confidence", spec.confidence)?;
    let m = check_open_unit("margin", spec.margin)?;
    let z = normal_inverse_cdf((1.0 - c) / 2.0)?;
    let value = z * z * t * (1.0 - t) / (m * m);
    let raw = value.round() as u64;
    Ok(QueryCount { raw, rounded: round_up_multiple(raw, QUERY_COUNT_UNIT) })
}

/// Smallest multiple of `unit` that is >= `n`. A `unit` of zero is treated as 1.
pub fn round_up_multiple(n: u64, unit: u64) -> u64 {
    let unit = unit.max(1);
    n.div_ceil(unit) * unit
}

/// 1-based nearest rank for percentile `p` over `n` items: `ceil(p * n)`.
///
/// A tiny relative slack absorbs binary representation error in `p` so that
/// e.g. 0.9 * 270 maps to 243 rather than 244.
pub fn nearest_rank(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let k = (x - x.max(1.0) * 1e-12).ceil() as usize;
    k.clamp(1, n.max(1))
}

/// Nearest-rank percentile: the element at 1-based index `ceil(p * n)` of the
/// ascending order.
pub fn percentile(latencies: &[Nanos], p: f64) -> Result<Nanos, StatsError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(StatsError::BadPercentile(p));
    }
    if latencies.is_empty() {
        return Err(StatsError::Empty);
    }
    let k = nearest_rank(p, latencies.len());
    let mut scratch = latencies.to_vec();
    let (_, nth, _) = scratch.select_nth_unstable(k - 1);
    Ok(*nth)
}

/// Fraction of latencies strictly greater than `bound`.
pub fn overtime_fraction(latencies: &[Nanos], bound: Nanos) -> Result<f64, StatsError> {
    if latencies.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(overtime_count(latencies, bound) as f64 / latencies.len() as f64)
}

pub fn overtime_count(latencies: &[Nanos], bound: Nanos) -> usize {
    latencies.iter().filter(|&&l| l > bound).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference quantiles from a 40-digit erfinv evaluation (mpmath).
    #[allow(clippy::excessive_precision)]
    const QUANTILE_ORACLE: [(f64, f64); 9] = [
        (0.005, -2.575_829_303_548_900_760_978_577),
        (0.975, 1.959_963_984_540_054_235_524_594),
        (0.025, -1.959_963_984_540_054_235_524_594),
        (0.001, -3.090_232_306_167_813_541_540_4),
        (0.999_999, 4.753_424_308_822_898_948_193_988),
        (1e-10, -6.361_340_902_404_056_204_695_376),
        (0.3, -0.524_400_512_708_040_784_038_289_3),
        (0.9, 1.281_551_565_544_600_466_965_103),
        (0.5, 0.0),
    ];

    #[test]
    fn margin_examples() {
        assert!((margin(0.90).unwrap() - 0.005).abs() < 1e-15);
        assert!((margin(0.99).unwrap() - 0.0005).abs() < 1e-15);
        assert!((margin(0.50).unwrap() - 0.025).abs() < 1e-15);
        assert!(margin(1.0).is_err());
        assert!(margin(0.0).is_err());
        assert!(margin(f64::NAN).is_err());
    }

    #[test]
    fn quantile_matches_high_precision_oracle() {
        for (p, expected) in QUANTILE_ORACLE {
            let got = normal_inverse_cdf(p).unwrap();
            assert!((got - expected).abs() < 1e-9, "p={p}: {got} vs {expected}");
        }
        assert!(normal_inverse_cdf(0.0).is_err());
        assert!(normal_inverse_cdf(1.0).is_err());
        assert!(normal_inverse_cdf(-0.2).is_err());
    }

    #[test]
    fn query_counts_for_published_tails() {
        let cases = [(0.90, 23_886, 24_576), (0.95, 50_425, 57_344), (0.99, 262_742, 270_336)];
        for (tail, raw, rounded) in cases {
            let spec = ConfidenceSpec::new(tail, 0.99).unwrap();
            assert_eq!(min_query_count(&spec).unwrap(), QueryCount { raw, rounded }, "tail {tail}");
        }
        let translation = min_query_count(&ConfidenceSpec::new(0.97, 0.99).unwrap()).unwrap();
        assert_eq!(translation.rounded, 90_112);
    }

    #[test]
    fn round_up_examples() {
        assert_eq!(round_up_multiple(23_886, QUERY_COUNT_UNIT), 24_576);
        assert_eq!(round_up_multiple(8_192, QUERY_COUNT_UNIT), 8_192);
        assert_eq!(round_up_multiple(1, QUERY_COUNT_UNIT), 8_192);
        assert_eq!(round_up_multiple(0, QUERY_COUNT_UNIT), 0);
    }

    #[test]
    fn percentile_examples() {
        let ramp: Vec<Nanos> = (1..=100).map(Nanos::from_millis).collect();
        assert_eq!(percentile(&ramp, 0.90).unwrap(), Nanos::from_millis(90));
        assert_eq!(percentile(&ramp, 1.0).unwrap(), Nanos::from_millis(100));
        let single = [Nanos::from_millis(7)];
        for p in [0.01, 0.5, 0.9, 1.0] {
            assert_eq!(percentile(&single, p).unwrap(), Nanos::from_millis(7));
        }
        assert_eq!(percentile(&[], 0.9), Err(StatsError::Empty));
        assert!(percentile(&ramp, 0.0).is_err());
        assert!(percentile(&ramp, 1.5).is_err());
    }

    #[test]
    fn nearest_rank_is_robust_to_representation_error() {
        assert_eq!(nearest_rank(0.9, 270), 243);
        assert_eq!(nearest_rank(0.99, 270_336), 267_633);
        assert_eq!(nearest_rank(0.9, 1), 1);
    }

    #[test]
    fn overtime_examples() {
        let mut lat = vec![Nanos::from_millis(1); 99];
        lat.push(Nanos::from_millis(20));
        assert_eq!(overtime_fraction(&lat, Nanos::from_millis(15)).unwrap(), 0.01);
        let at_bound = vec![Nanos::from_millis(15); 10];
        assert_eq!(overtime_fraction(&at_bound, Nanos::from_millis(15)).unwrap(), 0.0);
        assert_eq!(overtime_fraction(&[], Nanos::ZERO), Err(StatsError::Empty));

        let n = 270_336usize;
        for (over, expect_within) in [(2_703usize, true), (2_704, false)] {
            let mut lat = vec![Nanos::from_millis(5); n - over];
            lat.extend(std::iter::repeat_n(Nanos::from_millis(16), over));
            let f = overtime_fraction(&lat, Nanos::from_millis(15)).unwrap();
            assert_eq!(f <= 0.01, expect_within, "{over} over -> {f}");
        }
    }

    proptest! {
        #[test]
        fn round_up_is_idempotent_and_monotone(a in 0u64..10_000_000, b in 0u64..10_000_000, unit in 1u64..20_000) {
            let ra = round_up_multiple(a, unit);
            prop_assert_eq!(round_up_multiple(ra, unit), ra);
            prop_assert!(ra >= a && ra - a < unit);
            prop_assert_eq!(ra % unit, 0);
            if a <= b {
                prop_assert!(ra <= round_up_multiple(b, unit));
            }
        }

        #[test]
        fn overtime_fraction_bounds(mut lat in prop::collection::vec(0u64..1_000, 1..500), bound in 0u64..1_000, extra in 0u64..1_000) {
            let lat_n: Vec<Nanos> = lat.iter().copied().map(Nanos).collect();
            let f = overtime_fraction(&lat_n, Nanos(bound)).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            // Adding an under-bound latency never increases the fraction.
            lat.push(extra.min(bound));
            let lat_n: Vec<Nanos> = lat.iter().copied().map(Nanos).collect();
            prop_assert!(overtime_fraction(&lat_n, Nanos(bound)).unwrap() <= f);
        }

        #[test]
        fn quantile_inverts_cdf(p in 1e-12f64..0.999_999_999) {
            let x = normal_inverse_cdf(p).unwrap();
            let back = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
            prop_assert!(((back - p) / p).abs() < 1e-9);
        }
    }
}
