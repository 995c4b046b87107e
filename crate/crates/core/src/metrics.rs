//! Evaluation statistics: per-phase return summaries, the root mean squared
//! deterioration (RMSD) stability metric, across-seed box summaries,
//! percentile bootstrap confidence intervals, and EMA smoothing for plots.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("series of length {len} is too short for lag {lag}")]
    SeriesTooShort { len: usize, lag: usize },
}

/// One evaluation phase: the env step it ran at and the per-episode returns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPhase {
    pub env_step: u64,
    pub returns: Vec<f64>,
}

/// Ordered evaluation phases of a single seed.
#[derive(Debug, Clone)]
pub struct RunSeries {
    pub seed: u64,
    pub config_hash: String,
    pub phases: Vec<EvalPhase>,
}

/// Sample mean and sample standard deviation (N-1 denominator).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFew { needed: 2, got: values.len() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Root mean squared deterioration: compare the running average return to its
/// value `lag` phases earlier, square the positive drops, average over every
/// comparable pair, and take the root.
pub fn rmsd(series: &[f64], lag: usize) -> Result<f64, MetricsError> {
    if series.len() <= lag {
        return Err(MetricsError::SeriesTooShort { len: series.len(), lag });
    }
    let pairs = series.len() - lag;
    let sum: f64 = (lag..series.len())
        .map(|i| (series[i - lag] - series[i]).max(0.0).powi(2))
        .sum();
    Ok((sum / pairs as f64).sqrt())
}

/// Linear-interpolation quantile (the convention both numpy and R call
/// type 7) on an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Across-seed summary of final performance.
#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    /// Final-phase average return of each seed, in input order.
    pub finals: Vec<f64>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

pub fn seed_summary(runs: &[RunSeries]) -> Result<SeedSummary, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::TooFew { needed: 1, got: 0 });
    }
    let finals: Vec<f64> = runs
        .iter()
        .map(|r| {
            let last = r.phases.last().expect("run without evaluation phases");
            mean(&last.returns)
        })
        .collect();
    let mut sorted = finals.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(SeedSummary {
        finals,
        median,
        q1,
        q3,
        iqr: q3 - q1,
        whisker_lo: sorted[0],
        whisker_hi: sorted[sorted.len() - 1],
    })
}

/// Percentile bootstrap confidence interval for the mean.
pub fn bootstrap_ci<R: Rng>(
    values: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<(f64, f64), MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFew { needed: 2, got: values.len() });
    }
    assert!((0.0..1.0).contains(&level) && level > 0.0);
    let n = values.len();
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += values[rng.random_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail)))
}

/// Exponential moving average, alpha weighting the newest observation:
/// s_1 = x_1, s_t = alpha*x_t + (1-alpha)*s_{t-1}.
pub fn ema_smooth(series: &[f64], alpha: f64) -> Vec<f64> {
    assert!(!series.is_empty(), "cannot smooth an empty series");
    assert!((0.0..=1.0).contains(&alpha));
    let mut out = Vec::with_capacity(series.len());
    let mut s = series[0];
    out.push(s);
    for &x in &series[1..] {
        s = alpha * x + (1.0 - alpha) * s;
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn series_of(finals: &[f64]) -> Vec<RunSeries> {
        finals
            .iter()
            .enumerate()
            .map(|(i, &v)| RunSeries {
                seed: i as u64,
                config_hash: "h".into(),
                phases: vec![
                    EvalPhase { env_step: 100, returns: vec![-1.0, -2.0] },
                    EvalPhase { env_step: 200, returns: vec![v, v] },
                ],
            })
            .collect()
    }

    #[test]
    fn mean_std_two_point_example() {
        let (m, s) = mean_std(&[0.0, 2.0]).unwrap();
        assert_eq!(m, 1.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        let (m, s) = mean_std(&[3.5; 6]).unwrap();
        assert_eq!((m, s), (3.5, 0.0));
        assert_eq!(
            mean_std(&[1.0]).unwrap_err(),
            MetricsError::TooFew { needed: 2, got: 1 }
        );
    }

    #[test]
    fn mean_std_is_permutation_invariant_and_matches_welford() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(2..40);
            let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let (m, s) = mean_std(&vals).unwrap();
            let mut rev = vals.clone();
            rev.reverse();
            let (m2, s2) = mean_std(&rev).unwrap();
            assert!((m - m2).abs() < 1e-12 && (s - s2).abs() < 1e-12);
            // independent accumulation scheme as the oracle
            let (mut wm, mut wm2) = (0.0, 0.0);
            for (i, &x) in vals.iter().enumerate() {
                let d = x - wm;
                wm += d / (i + 1) as f64;
                wm2 += d * (x - wm);
            }
            let ws = (wm2 / (n - 1) as f64).sqrt();
            assert!((m - wm).abs() < 1e-12, "mean mismatch {m} vs {wm}");
            assert!((s - ws).abs() < 1e-12, "std mismatch {s} vs {ws}");
        }
    }

    #[test]
    fn rmsd_zero_without_deterioration() {
        let rising: Vec<f64> = (0..40).map(|i| i as f64 * 0.5).collect();
        assert_eq!(rmsd(&rising, 20).unwrap(), 0.0);
        assert_eq!(rmsd(&[7.0; 30], 20).unwrap(), 0.0);
    }

    #[test]
    fn rmsd_single_pair_example() {
        // exactly one comparable pair, deteriorating by 4
        let mut series = vec![10.0; 21];
        series[20] = 6.0;
        assert_eq!(rmsd(&series, 20).unwrap(), 4.0);
    }

    #[test]
    fn rmsd_shift_invariant_and_nonnegative() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let series: Vec<f64> = (0..60).map(|_| rng.random_range(-10.0..10.0)).collect();
            let r = rmsd(&series, 20).unwrap();
            assert!(r >= 0.0);
            let shifted: Vec<f64> = series.iter().map(|v| v + 123.45).collect();
            assert!((rmsd(&shifted, 20).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn rmsd_rejects_short_series() {
        assert_eq!(
            rmsd(&[1.0; 20], 20).unwrap_err(),
            MetricsError::SeriesTooShort { len: 20, lag: 20 }
        );
    }

    #[test]
    fn quartile_convention_example() {
        let s = seed_summary(&series_of(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.q3, 3.25);
        assert_eq!(s.iqr, 1.5);
        assert_eq!((s.whisker_lo, s.whisker_hi), (1.0, 4.0));
    }

    #[test]
    fn seed_summary_edge_cases() {
        let one = seed_summary(&series_of(&[2.5])).unwrap();
        assert_eq!(one.median, 2.5);
        assert_eq!(one.iqr, 0.0);
        // duplicating the median value keeps the median put
        let s = seed_summary(&series_of(&[1.0, 3.0, 5.0])).unwrap();
        assert_eq!(s.median, 3.0);
        let s = seed_summary(&series_of(&[1.0, 3.0, 3.0, 5.0])).unwrap();
        assert_eq!(s.median, 3.0);
        // permuting seeds moves nothing but the finals order
        let a = seed_summary(&series_of(&[4.0, -1.0, 2.0])).unwrap();
        let b = seed_summary(&series_of(&[-1.0, 2.0, 4.0])).unwrap();
        assert_eq!((a.median, a.q1, a.q3), (b.median, b.q1, b.q3));
    }

    #[test]
    fn bootstrap_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (lo, hi) = bootstrap_ci(&[2.0; 10], 0.95, 1000, &mut rng).unwrap();
        assert_eq!((lo, hi), (2.0, 2.0));

        let vals = [1.0, 4.0, 2.0, 8.0, 3.0, 5.0, 2.5, 6.0];
        let m = mean(&vals);
        let (lo, hi) = bootstrap_ci(&vals, 0.95, 10_000, &mut rng).unwrap();
        assert!(lo <= m && m <= hi, "interval [{lo}, {hi}] must contain the mean {m}");
        // seeded draw replays identically
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            bootstrap_ci(&vals, 0.95, 2000, &mut r1).unwrap(),
            bootstrap_ci(&vals, 0.95, 2000, &mut r2).unwrap()
        );
    }

    #[test]
    fn bootstrap_coverage_on_normal_samples() {
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut covered = 0;
        let datasets = 1000;
        for _ in 0..datasets {
            let vals: Vec<f64> = (0..30).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (lo, hi) = bootstrap_ci(&vals, 0.95, 10_000, &mut rng).unwrap();
            if lo <= 0.0 && 0.0 <= hi {
                covered += 1;
            }
        }
        let rate = covered as f64 / datasets as f64;
        assert!((0.92..=0.98).contains(&rate), "coverage {rate} outside 95% +/- 3%");
    }

    #[test]
    fn ema_examples_and_bounds() {
        assert_eq!(ema_smooth(&[5.0; 8], 0.4), vec![5.0; 8]);
        assert_eq!(ema_smooth(&[0.0, 1.0], 0.4), vec![0.0, 0.4]);
        assert_eq!(ema_smooth(&[3.0], 0.4), vec![3.0]);
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let series: Vec<f64> = (0..50).map(|_| rng.random_range(-4.0..4.0)).collect();
        let (lo, hi) = series.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        for s in ema_smooth(&series, 0.4) {
            assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }
    }
}
