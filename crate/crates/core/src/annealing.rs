//! Simulated annealing on top of the grand canonical chain: cool until the
//! stage mean distance reaches a goal, then measure `<N>` at the final
//! temperature. With `mu = 0` the measured length is the one with the most
//! near-target tests.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::ItemBank;
use crate::density::{log_sum_exp, omega_ratio_report, recover_omega, OmegaRatio, ProbabilityHistogram};
use crate::error::{Error, Result};
use crate::gcmc::{
    chain_rng, Chain, ChainStats, ChainSummary, GcmcParams, InitialState, MoveMix,
    SolutionArchive, TestState, DEFAULT_ARCHIVE_CAPACITY, DEFAULT_RECOMPUTE_PERIOD,
};
use crate::io::write_csv;
use crate::irt::InfoCurve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoolingSchedule {
    /// Starting temperature; probed from the acceptance rate when absent.
    #[serde(default)]
    pub t_start: Option<f64>,
    #[serde(default = "default_t_factor")]
    pub t_factor: f64,
    /// Steps per stage; `200 * M` when absent.
    #[serde(default)]
    pub steps_per_temperature: Option<u64>,
    /// Set by the caller, not read from configuration files.
    #[serde(skip)]
    pub e_goal: f64,
    #[serde(default = "default_max_stages")]
    pub max_stages: usize,
    /// Length of the measurement stage; one stage length when absent.
    #[serde(default)]
    pub final_steps: Option<u64>,
    /// Bin width of the final-stage `(N, E)` histogram.
    #[serde(default = "default_final_bin_width")]
    pub e_bin_width: f64,
    #[serde(default)]
    pub move_mix: MoveMix,
    #[serde(default)]
    pub initial: InitialState,
    /// Archive cut-off for the final stage; `e_goal` when absent.
    #[serde(default)]
    pub archive_threshold: Option<f64>,
    /// Solutions kept from the final stage.
    #[serde(default = "default_archive_capacity")]
    pub archive_capacity: usize,
}

fn default_t_factor() -> f64 {
    0.9
}

fn default_max_stages() -> usize {
    300
}

fn default_final_bin_width() -> f64 {
    0.1
}

fn default_archive_capacity() -> usize {
    DEFAULT_ARCHIVE_CAPACITY
}

/// Acceptance rate the probed starting temperature must exceed.
pub const START_ACCEPTANCE: f64 = 0.5;

impl CoolingSchedule {
    pub fn new(e_goal: f64) -> Self {
        CoolingSchedule {
            t_start: None,
            t_factor: default_t_factor(),
            steps_per_temperature: None,
            e_goal,
            max_stages: default_max_stages(),
            final_steps: None,
            e_bin_width: default_final_bin_width(),
            move_mix: MoveMix::default(),
            initial: InitialState::Default,
            archive_threshold: None,
            archive_capacity: default_archive_capacity(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.t_factor > 0.0 && self.t_factor < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "t_factor must lie in (0, 1), got {}",
                self.t_factor
            )));
        }
        if let Some(t) = self.t_start {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidArgument(format!("t_start must be positive, got {t}")));
            }
        }
        if self.steps_per_temperature == Some(0) || self.final_steps == Some(0) {
            return Err(Error::InvalidArgument("stage lengths must be >= 1".into()));
        }
        if self.max_stages == 0 {
            return Err(Error::InvalidArgument("max_stages must be >= 1".into()));
        }
        if !self.e_goal.is_finite() {
            return Err(Error::InvalidArgument("e_goal must be finite".into()));
        }
        if !(self.e_bin_width > 0.0) {
            return Err(Error::InvalidArgument("e_bin_width must be positive".into()));
        }
        self.move_mix.check()
    }

    pub fn stage_steps(&self, m: usize) -> u64 {
        self.steps_per_temperature.unwrap_or(200 * m as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub temperature: f64,
    /// Means over the second half of the stage.
    pub mean_e: f64,
    pub mean_n: f64,
    /// Accepted moves over all steps of the stage.
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone)]
pub struct AnnealReport {
    pub mu: f64,
    pub e_goal: f64,
    pub t_start: f64,
    pub stages: Vec<StageRecord>,
    pub reached_goal: bool,
    pub final_temperature: f64,
    /// Statistics of the measurement stage at the final temperature.
    pub final_stats: ChainStats,
    pub final_state: TestState,
    /// Distinct tests under the archive threshold seen in the measurement
    /// stage.
    pub archive: SolutionArchive,
}

impl AnnealReport {
    pub fn final_mean_n(&self) -> f64 {
        self.final_stats.n.mean
    }

    pub fn final_mean_e(&self) -> f64 {
        self.final_stats.e.mean
    }

    pub fn summary(&self) -> AnnealSummary {
        AnnealSummary {
            mu: self.mu,
            e_goal: self.e_goal,
            t_start: self.t_start,
            reached_goal: self.reached_goal,
            final_temperature: self.final_temperature,
            stages: self.stages.clone(),
            final_stage: self.final_stats.summary(),
            final_members: self.final_state.members().to_vec(),
            final_e: self.final_state.e_value(),
            solutions: self.archive.len(),
        }
    }

    /// CSV with columns `stage,T,mean_E,mean_N,acc_rate`.
    pub fn write_stages_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            &["stage", "T", "mean_E", "mean_N", "acc_rate"],
            self.stages.iter().map(|s| {
                [
                    s.stage.to_string(),
                    s.temperature.to_string(),
                    s.mean_e.to_string(),
                    s.mean_n.to_string(),
                    s.acceptance_rate.to_string(),
                ]
            }),
        )
    }
}

/// JSON form of an [`AnnealReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSummary {
    pub mu: f64,
    pub e_goal: f64,
    pub t_start: f64,
    pub reached_goal: bool,
    pub final_temperature: f64,
    pub stages: Vec<StageRecord>,
    pub final_stage: ChainSummary,
    pub final_members: Vec<usize>,
    pub final_e: f64,
    pub solutions: usize,
}

/// Doubles `T` from 1 until a probe run accepts more than half its moves.
fn probe_start_temperature(chain: &mut Chain<'_>, probe_steps: u64) -> Result<f64> {
    let m = chain.bank().len();
    let mut t = 1.0;
    for _ in 0..64 {
        chain.set_temperature(t)?;
        let mut stats = ChainStats::new(m, 1.0);
        chain.run(probe_steps, &mut stats, None);
        if stats.acceptance_rate() > START_ACCEPTANCE {
            return Ok(t);
        }
        t *= 2.0;
    }
    Ok(t)
}

pub fn anneal(
    bank: &ItemBank,
    target: &InfoCurve,
    mu: f64,
    schedule: &CoolingSchedule,
    seed: u64,
) -> Result<AnnealReport> {
    anneal_stream(bank, target, mu, schedule, seed, 0)
}

/// [`anneal`] on generator stream `stream` of `seed`.
pub fn anneal_stream(
    bank: &ItemBank,
    target: &InfoCurve,
    mu: f64,
    schedule: &CoolingSchedule,
    seed: u64,
    stream: u64,
) -> Result<AnnealReport> {
    schedule.check()?;
    let m = bank.len();
    let stage_steps = schedule.stage_steps(m);
    let params = GcmcParams {
        temperature: schedule.t_start.unwrap_or(1.0),
        mu,
        move_mix: schedule.move_mix,
        seed,
        full_recompute_period: DEFAULT_RECOMPUTE_PERIOD,
    };
    let mut chain = Chain::with_rng(bank, target, params, &schedule.initial, chain_rng(seed, stream))?;
    let t_start = match schedule.t_start {
        Some(t) => t,
        None => probe_start_temperature(&mut chain, (stage_steps / 4).max(100))?,
    };

    let mut stages = Vec::new();
    let mut t = t_start;
    let mut reached_goal = false;
    let first_half = stage_steps / 2;
    for stage in 1..=schedule.max_stages {
        chain.set_temperature(t)?;
        let mut early = ChainStats::new(m, 1.0);
        chain.run(first_half, &mut early, None);
        let mut late = ChainStats::new(m, 1.0);
        chain.run(stage_steps - first_half, &mut late, None);
        let record = StageRecord {
            stage,
            temperature: t,
            mean_e: late.e.mean,
            mean_n: late.n.mean,
            acceptance_rate: (early.accepted() + late.accepted()) as f64 / stage_steps as f64,
        };
        log::debug!("stage {stage}: {record:?}");
        stages.push(record);
        if record.mean_e <= schedule.e_goal {
            reached_goal = true;
            break;
        }
        let next = t * schedule.t_factor;
        if stage == schedule.max_stages || !next.is_normal() {
            break;
        }
        t = next;
    }

    let mut final_stats = ChainStats::new(m, schedule.e_bin_width);
    let mut archive = SolutionArchive::with_capacity(
        schedule.archive_threshold.unwrap_or(schedule.e_goal),
        schedule.archive_capacity,
    );
    chain.run(
        schedule.final_steps.unwrap_or(stage_steps),
        &mut final_stats,
        Some(&mut archive),
    );
    Ok(AnnealReport {
        mu,
        e_goal: schedule.e_goal,
        t_start,
        stages,
        reached_goal,
        final_temperature: t,
        final_stats,
        final_state: chain.into_state(),
        archive,
    })
}

/// Nearest integer, halves rounded down.
pub fn round_half_down(x: f64) -> usize {
    (x - 0.5).ceil().max(0.0) as usize
}

#[derive(Debug, Clone)]
pub struct OptimalN {
    pub n_opt: usize,
    pub report: AnnealReport,
}

/// Anneals at `mu = 0` and rounds the final `<N>`.
pub fn estimate_optimal_n(
    bank: &ItemBank,
    target: &InfoCurve,
    e_goal: f64,
    schedule: &CoolingSchedule,
    seed: u64,
) -> Result<OptimalN> {
    let mut schedule = schedule.clone();
    schedule.e_goal = e_goal;
    let report = anneal(bank, target, 0.0, &schedule, seed)?;
    if !report.reached_goal {
        return Err(Error::GoalUnreachable {
            e_goal,
            stages: report.stages.len(),
            last_mean_e: report.stages.last().map_or(f64::NAN, |s| s.mean_e),
        });
    }
    Ok(OptimalN {
        n_opt: round_half_down(report.final_mean_n()),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mu: f64,
    #[serde(rename = "N_star")]
    pub n_star: usize,
    pub reached_goal: bool,
    pub final_temperature: f64,
    pub mean_n: f64,
    pub mean_e: f64,
    /// `ln(C Omega)` at `(N*, E <= e_goal)`, on a scale shared by all rows.
    pub ln_c_omega: Option<f64>,
    pub c_omega: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub e_goal: f64,
    pub rows: Vec<SweepRow>,
    pub reports: Vec<AnnealReport>,
}

impl SweepTable {
    pub fn ratios(&self) -> Result<Vec<OmegaRatio>> {
        let rows: Vec<(f64, Option<f64>)> = self.rows.iter().map(|r| (r.mu, r.ln_c_omega)).collect();
        omega_ratio_report(&rows)
    }

    /// CSV with columns `mu,N_star,c_omega,reached_goal`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            &["mu", "N_star", "c_omega", "reached_goal"],
            self.rows.iter().map(|r| {
                [
                    r.mu.to_string(),
                    r.n_star.to_string(),
                    r.c_omega.map_or(String::new(), |c| c.to_string()),
                    r.reached_goal.to_string(),
                ]
            }),
        )
    }
}

/// `ln(C Omega)` per unit distance at length `n` over `E < e_goal`, from a
/// measurement-stage histogram; the constant `C` is chain specific.
fn local_log_density(report: &AnnealReport, n: usize) -> Result<Option<f64>> {
    let sim = ProbabilityHistogram::from_chain(&report.final_stats.histogram)?;
    let rec = recover_omega(&sim, report.final_temperature, report.mu)?;
    let width = rec.e_bin_width();
    let bins = (report.e_goal / width).ceil() as usize;
    let ln = log_sum_exp((0..bins).map(|b| rec.log_count(n, b)));
    if ln == f64::NEG_INFINITY {
        return Ok(None);
    }
    Ok(Some(ln - (bins as f64 * width).ln()))
}

/// Anneals to `e_goal` at each `mu` (in parallel, row `k` on stream `k`) and
/// tabulates `N*` and `C Omega`.
///
/// `C Omega` of the row nearest `mu = 0` is recovered from its own
/// measurement histogram. The other rows are placed on the same scale by
/// integrating `d ln Omega / dN = -mu / T`, which holds at the peak of each
/// row's distribution, across the rows' mean lengths (trapezoidal rule).
pub fn sweep_item_potential(
    bank: &ItemBank,
    target: &InfoCurve,
    e_goal: f64,
    mu_values: &[f64],
    schedule: &CoolingSchedule,
    seed: u64,
) -> Result<SweepTable> {
    if mu_values.is_empty() {
        return Err(Error::InvalidArgument("mu list is empty".into()));
    }
    if mu_values.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidArgument("mu values must be finite".into()));
    }
    let mut schedule = schedule.clone();
    schedule.e_goal = e_goal;
    let mut reports: Vec<AnnealReport> = mu_values
        .par_iter()
        .enumerate()
        .map(|(k, &mu)| anneal_stream(bank, target, mu, &schedule, seed, k as u64))
        .collect::<Result<_>>()?;
    reports.sort_by(|a, b| a.mu.total_cmp(&b.mu));

    let mut rows: Vec<SweepRow> = reports
        .iter()
        .map(|r| SweepRow {
            mu: r.mu,
            n_star: round_half_down(r.final_mean_n()),
            reached_goal: r.reached_goal,
            final_temperature: r.final_temperature,
            mean_n: r.final_mean_n(),
            mean_e: r.final_mean_e(),
            ln_c_omega: None,
            c_omega: None,
        })
        .collect();

    let reached: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].reached_goal).collect();
    let anchor = reached
        .iter()
        .copied()
        .min_by(|&a, &b| rows[a].mu.abs().total_cmp(&rows[b].mu.abs()));
    if let Some(anchor) = anchor {
        if let Some(base) = local_log_density(&reports[anchor], rows[anchor].n_star)? {
            rows[anchor].ln_c_omega = Some(base);
            let slope = |r: &SweepRow| -r.mu / r.final_temperature;
            let pos = reached.iter().position(|&i| i == anchor).unwrap();
            let link = |from: usize, to: usize, rows: &mut Vec<SweepRow>| {
                let (a, b) = (&rows[from], &rows[to]);
                let step = (b.mean_n - a.mean_n) * 0.5 * (slope(a) + slope(b));
                rows[to].ln_c_omega = rows[from].ln_c_omega.map(|v| v + step);
            };
            for w in reached[pos..].windows(2) {
                link(w[0], w[1], &mut rows);
            }
            for w in reached[..=pos].windows(2).rev() {
                link(w[1], w[0], &mut rows);
            }
        }
    }
    for r in &mut rows {
        r.c_omega = r.ln_c_omega.map(f64::exp).filter(|c| c.is_finite());
    }
    Ok(SweepTable {
        e_goal,
        rows,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{generate_bank, BankRecipe};
    use crate::irt::{ItemParams, TargetSpec, ThetaGrid};

    fn setup(m: usize, seed: u64) -> (ItemBank, InfoCurve) {
        let grid = ThetaGrid::default();
        let bank = generate_bank(&BankRecipe::standard(m, seed), grid).unwrap();
        let target = TargetSpec::standard_bump(1.0, 3.0).to_curve(grid).unwrap();
        (bank, target)
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_down(33.5), 33);
        assert_eq!(round_half_down(33.51), 34);
        assert_eq!(round_half_down(33.2), 33);
        assert_eq!(round_half_down(0.3), 0);
    }

    #[test]
    fn schedule_validation() {
        let mut s = CoolingSchedule::new(1.0);
        assert!(s.check().is_ok());
        s.t_factor = 1.0;
        assert!(s.check().is_err());
        s.t_factor = 0.9;
        s.steps_per_temperature = Some(0);
        assert!(s.check().is_err());
    }

    #[test]
    fn goal_met_in_first_stage() {
        let (bank, target) = setup(20, 3);
        let mut s = CoolingSchedule::new(1e12);
        s.t_start = Some(10.0);
        let r = anneal(&bank, &target, 0.0, &s, 1).unwrap();
        assert!(r.reached_goal);
        assert_eq!(r.stages.len(), 1);
        assert_eq!(r.final_temperature, 10.0);
    }

    #[test]
    fn stages_cool_and_restart_identically() {
        let (bank, target) = setup(30, 8);
        let mut s = CoolingSchedule::new(0.0);
        s.max_stages = 25;
        let a = anneal(&bank, &target, 0.0, &s, 42).unwrap();
        let b = anneal(&bank, &target, 0.0, &s, 42).unwrap();
        assert_eq!(a.stages, b.stages);
        assert_eq!(a.final_state, b.final_state);
        assert!(!a.reached_goal);
        assert_eq!(a.stages.len(), 25);
        for w in a.stages.windows(2) {
            assert!(w[1].temperature < w[0].temperature);
        }
        assert!(a.stages[0].acceptance_rate > 0.3);
    }

    #[test]
    fn cooling_stops_before_underflow() {
        let (bank, target) = setup(10, 2);
        let mut s = CoolingSchedule::new(0.0);
        s.t_start = Some(1e-300);
        s.t_factor = 0.5;
        s.steps_per_temperature = Some(10);
        s.max_stages = 100;
        let r = anneal(&bank, &target, 0.0, &s, 1).unwrap();
        assert!(r.stages.len() < 100);
        assert!(r.final_temperature.is_normal());
    }

    #[test]
    fn unreachable_goal_is_an_error() {
        let (bank, target) = setup(15, 2);
        let mut s = CoolingSchedule::new(0.0);
        s.max_stages = 5;
        assert!(matches!(
            estimate_optimal_n(&bank, &target, 0.0, &s, 1),
            Err(Error::GoalUnreachable { stages: 5, .. })
        ));
    }

    #[test]
    fn identical_items_pick_the_closest_length() {
        let grid = ThetaGrid::default();
        let it = ItemParams { a: 2.0, b: 1.5, c: 0.2 };
        let bank = ItemBank::new(vec![it; 10], None, grid).unwrap();
        let target = TargetSpec::standard_bump(1.0, 3.0).to_curve(grid).unwrap();
        let e: Vec<f64> = (0..=10)
            .map(|n| TestState::new(&bank, &target, 0..n).unwrap().e_value())
            .collect();
        let best = (0..=10).min_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
        // goal just above the best length's distance
        let e_goal = e[best] + 0.05 * (e.iter().filter(|&&x| x > e[best]).fold(f64::INFINITY, |a, &b| a.min(b)) - e[best]);
        let s = CoolingSchedule::new(e_goal);
        let r = estimate_optimal_n(&bank, &target, e_goal, &s, 5).unwrap();
        assert_eq!(r.n_opt, best);
    }

    #[test]
    fn sweep_single_mu_equals_lone_anneal() {
        let (bank, target) = setup(20, 6);
        let mut s = CoolingSchedule::new(3.0);
        s.max_stages = 60;
        let lone = anneal(&bank, &target, 0.0, &s, 9).unwrap();
        let table = sweep_item_potential(&bank, &target, 3.0, &[0.0], &s, 9).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.reports[0].stages, lone.stages);
        assert_eq!(table.rows[0].n_star, round_half_down(lone.final_mean_n()));
        assert!(sweep_item_potential(&bank, &target, 3.0, &[], &s, 9).is_err());
    }
}
