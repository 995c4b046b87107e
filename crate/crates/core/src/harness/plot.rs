//! Summary CSV and plot-data emission from finished runs or loaded logs.

use super::run::{LoadedRun, RunOutcome};
use crate::metrics::{self, quantile_sorted, EvalPhase, RunSeries};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("no logs given")]
    Empty,
    #[error("smoothing factor must lie in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("logs mix configs {0} and {1}; plot data needs one config")]
    MixedConfigs(String, String),
    #[error("seed {seed} has no evaluation at env step {step}; seeds must share the eval grid")]
    MisalignedStep { seed: u64, step: u64 },
}

/// How many trailing evaluation phases the late-training spread statistics
/// average over.
pub const LATE_PHASES: usize = 5;

const SUMMARY_BOOT_SEED: u64 = 0x5eed;
const BOOT_RESAMPLES: usize = 10_000;
const CI_LEVEL: f64 = 0.95;

/// The per-run facts every summary row is computed from; both live outcomes
/// and reloaded logs reduce to this.
struct RunView<'a> {
    env: &'a str,
    variant: &'a str,
    phases: &'a [EvalPhase],
    member_stds: &'a [Vec<f64>],
    rmsd: Option<f64>,
    solve_step: Option<u64>,
    series: RunSeries,
}

impl<'a> From<&'a RunOutcome> for RunView<'a> {
    fn from(o: &'a RunOutcome) -> RunView<'a> {
        RunView {
            env: &o.env,
            variant: &o.variant,
            phases: &o.phases,
            member_stds: &o.member_stds,
            rmsd: o.rmsd,
            solve_step: o.solved_first_step,
            series: o.series(),
        }
    }
}

impl<'a> From<&'a LoadedRun> for RunView<'a> {
    fn from(r: &'a LoadedRun) -> RunView<'a> {
        RunView {
            env: &r.env,
            variant: &r.variant,
            phases: &r.phases,
            member_stds: &r.member_stds,
            rmsd: r.rmsd,
            solve_step: r.solved_first_step,
            series: r.series(),
        }
    }
}

fn sample_std(values: &[f64]) -> f64 {
    metrics::mean_std(values).map(|(_, s)| s).unwrap_or(0.0)
}

/// Mean over the last `LATE_PHASES` evaluation phases of a per-phase value.
fn late_mean(per_phase: &[f64]) -> Option<f64> {
    if per_phase.is_empty() {
        return None;
    }
    let tail = &per_phase[per_phase.len().saturating_sub(LATE_PHASES)..];
    Some(metrics::mean(tail))
}

/// Bootstrap CI over per-seed values; collapses to a point for one seed.
fn ci_or_point(values: &[f64]) -> (f64, f64) {
    if values.len() < 2 {
        return (values[0], values[0]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SUMMARY_BOOT_SEED);
    metrics::bootstrap_ci(values, CI_LEVEL, BOOT_RESAMPLES, &mut rng).expect("len checked")
}

fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.75),
    )
}

/// One summary row: (metric, seed_count, value, ci_lo, ci_hi).
type Row = (&'static str, usize, f64, f64, f64);

fn group_rows(views: &[RunView]) -> Vec<Row> {
    let mut rows = Vec::new();

    let with_phases: Vec<&RunView> = views.iter().filter(|v| !v.phases.is_empty()).collect();
    if !with_phases.is_empty() {
        let series: Vec<RunSeries> = with_phases.iter().map(|v| v.series.clone()).collect();
        let summary = metrics::seed_summary(&series).expect("nonempty");
        let n = with_phases.len();

        let (lo, hi) = ci_or_point(&summary.finals);
        rows.push(("final_return_mean", n, metrics::mean(&summary.finals), lo, hi));
        rows.push(("final_return_median", n, summary.median, summary.q1, summary.q3));

        let std5: Vec<f64> = with_phases
            .iter()
            .filter_map(|v| {
                let per_phase: Vec<f64> =
                    v.phases.iter().map(|p| sample_std(&p.returns)).collect();
                late_mean(&per_phase)
            })
            .collect();
        let (lo, hi) = ci_or_point(&std5);
        rows.push(("eval_std_late_mean", std5.len(), metrics::mean(&std5), lo, hi));

        let mstd5: Vec<f64> = with_phases
            .iter()
            .filter_map(|v| {
                let per_phase: Vec<f64> =
                    v.member_stds.iter().map(|ms| metrics::mean(ms)).collect();
                late_mean(&per_phase)
            })
            .collect();
        if !mstd5.is_empty() {
            let (lo, hi) = ci_or_point(&mstd5);
            rows.push(("member_std_late_mean", mstd5.len(), metrics::mean(&mstd5), lo, hi));
        }
    }

    let rmsds: Vec<f64> = views.iter().filter_map(|v| v.rmsd).collect();
    if !rmsds.is_empty() {
        let (lo, hi) = ci_or_point(&rmsds);
        rows.push(("rmsd_mean", rmsds.len(), metrics::mean(&rmsds), lo, hi));
    }

    let solves: Vec<f64> = views.iter().filter_map(|v| v.solve_step.map(|s| s as f64)).collect();
    if !solves.is_empty() {
        let (q1, med, q3) = quartiles(&solves);
        rows.push(("solve_step_median", solves.len(), med, q1, q3));
    }

    rows
}

fn write_csv(groups: &[(&str, &str, Vec<Row>)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "env", "variant", "seed_count", "value", "ci_lo", "ci_hi"])
        .expect("csv in memory");
    for (env, variant, rows) in groups {
        for (metric, n, value, lo, hi) in rows {
            w.write_record([
                metric.to_string(),
                env.to_string(),
                variant.to_string(),
                n.to_string(),
                value.to_string(),
                lo.to_string(),
                hi.to_string(),
            ])
            .expect("csv in memory");
        }
    }
    String::from_utf8(w.into_inner().expect("csv in memory")).expect("csv is utf-8")
}

/// Summary CSV for one suite's outcomes (one config, several seeds).
pub(crate) fn summary_from_outcomes(outcomes: &[RunOutcome]) -> String {
    let views: Vec<RunView> = outcomes.iter().map(RunView::from).collect();
    let rows = group_rows(&views);
    write_csv(&[(views[0].env, views[0].variant, rows)])
}

/// Summary CSV over loaded logs, one row group per distinct config.
pub fn metrics_csv(runs: &[LoadedRun]) -> Result<String, PlotError> {
    if runs.is_empty() {
        return Err(PlotError::Empty);
    }
    // runs arrive sorted by (config_hash, seed); group consecutive hashes
    let mut groups: Vec<(&str, &str, Vec<Row>)> = Vec::new();
    let mut start = 0;
    while start < runs.len() {
        let hash = &runs[start].config_hash;
        let end = runs[start..]
            .iter()
            .position(|r| &r.config_hash != hash)
            .map_or(runs.len(), |p| start + p);
        let views: Vec<RunView> = runs[start..end].iter().map(RunView::from).collect();
        let rows = group_rows(&views);
        groups.push((&runs[start].env, &runs[start].variant, rows));
        start = end;
    }
    Ok(write_csv(&groups))
}

/// Learning-curve data: per evaluation step, the across-seed mean return with
/// bootstrap CI bounds, the two return-spread measures, and smoothed copies.
/// All logs must come from one config and share the evaluation grid.
pub fn emit_plot_data(runs: &[LoadedRun], alpha: f64) -> Result<String, PlotError> {
    if runs.is_empty() {
        return Err(PlotError::Empty);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(PlotError::BadAlpha(alpha));
    }
    for r in runs {
        if r.config_hash != runs[0].config_hash {
            return Err(PlotError::MixedConfigs(
                runs[0].config_hash.clone(),
                r.config_hash.clone(),
            ));
        }
    }
    // every seed must evaluate at exactly the reference steps
    let grid: Vec<u64> = runs[0].phases.iter().map(|p| p.env_step).collect();
    for r in runs {
        for i in 0..grid.len().max(r.phases.len()) {
            match (grid.get(i), r.phases.get(i).map(|p| p.env_step)) {
                (Some(&want), Some(got)) if want == got => {}
                (Some(&want), _) => {
                    return Err(PlotError::MisalignedStep { seed: r.seed, step: want })
                }
                (None, Some(got)) => {
                    return Err(PlotError::MisalignedStep { seed: runs[0].seed, step: got })
                }
                (None, None) => unreachable!(),
            }
        }
    }

    let mut means = Vec::with_capacity(grid.len());
    let mut lows = Vec::with_capacity(grid.len());
    let mut highs = Vec::with_capacity(grid.len());
    let mut sigma_seed_mean = Vec::with_capacity(grid.len());
    let mut sigma_pooled = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let seed_means: Vec<f64> =
            runs.iter().map(|r| metrics::mean(&r.phases[i].returns)).collect();
        let (lo, hi) = ci_or_point(&seed_means);
        means.push(metrics::mean(&seed_means));
        lows.push(lo);
        highs.push(hi);
        let stds: Vec<f64> = runs.iter().map(|r| sample_std(&r.phases[i].returns)).collect();
        sigma_seed_mean.push(metrics::mean(&stds));
        let pooled: Vec<f64> =
            runs.iter().flat_map(|r| r.phases[i].returns.iter().copied()).collect();
        sigma_pooled.push(sample_std(&pooled));
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "env_step",
        "mean",
        "ci_lo",
        "ci_hi",
        "sigma_seed_mean",
        "sigma_pooled",
        "mean_ema",
        "ci_lo_ema",
        "ci_hi_ema",
    ])
    .expect("csv in memory");
    if !grid.is_empty() {
        let mean_ema = metrics::ema_smooth(&means, alpha);
        let lo_ema = metrics::ema_smooth(&lows, alpha);
        let hi_ema = metrics::ema_smooth(&highs, alpha);
        for i in 0..grid.len() {
            w.write_record([
                grid[i].to_string(),
                means[i].to_string(),
                lows[i].to_string(),
                highs[i].to_string(),
                sigma_seed_mean[i].to_string(),
                sigma_pooled[i].to_string(),
                mean_ema[i].to_string(),
                lo_ema[i].to_string(),
                hi_ema[i].to_string(),
            ])
            .expect("csv in memory");
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("csv in memory")).expect("csv is utf-8"))
}
