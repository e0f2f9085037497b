use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::{AssembleSection, CalibrateSection, CountDensitySection, SweepMuSection};
use super::report::SolutionReport;
use super::{Command, ExitStatus, RunContext};
use crate::annealing::{
    anneal, round_half_down, sweep_item_potential, AnnealReport, AnnealSummary, CoolingSchedule, SweepRow,
};
use crate::bank::{BankFormat, BankRecipe, ItemBank};
use crate::density::{
    analytic_p, calibrate, enumerate_exact, mc_count, DensityHistogram, DistributionMoments, OmegaRatio,
};
use crate::error::{Error, Result};
use crate::gcmc::{run_chain, ArchiveSummary, ChainConfig, ChainSummary, GcmcParams, SolutionArchive};
use crate::io::{write_csv, write_json};
use crate::irt::InfoCurve;

/// Validated inputs of one command.
#[derive(Debug)]
pub enum Plan {
    GenBank {
        bank: ItemBank,
        recipe: BankRecipe,
        file: String,
    },
    CountDensity {
        bank: ItemBank,
        target: InfoCurve,
        section: CountDensitySection,
    },
    Calibrate {
        omega: DensityHistogram,
        section: CalibrateSection,
    },
    Assemble {
        bank: ItemBank,
        target: InfoCurve,
        section: AssembleSection,
        schedule: Option<CoolingSchedule>,
    },
    FindOptimalN {
        bank: ItemBank,
        target: InfoCurve,
        schedule: CoolingSchedule,
    },
    SweepMu {
        bank: ItemBank,
        target: InfoCurve,
        section: SweepMuSection,
        schedule: CoolingSchedule,
    },
}

#[derive(Debug)]
pub struct Outcome {
    pub status: ExitStatus,
    /// One line for stdout.
    pub summary: String,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Outcome {
            status: ExitStatus::Success,
            summary,
        }
    }
}

impl Plan {
    pub fn prepare(command: &Command, ctx: &RunContext) -> Result<Plan> {
        let c = &ctx.config;
        let grid = c.grid()?;
        let bank_and_target = || -> Result<(ItemBank, InfoCurve)> {
            let target = c.target_curve(grid)?;
            let bank = c.bank_source()?.load(grid, ctx.seed)?;
            Ok((bank, target))
        };
        Ok(match command {
            Command::GenBank(_) => {
                let section = c.gen_bank_section()?;
                let recipe = c.bank_source()?.recipe.as_ref().unwrap().resolve(ctx.seed);
                let bank = crate::bank::generate_bank(&recipe, grid)?;
                Plan::GenBank {
                    bank,
                    recipe,
                    file: section.file,
                }
            }
            Command::CountDensity(_) => {
                let (bank, target) = bank_and_target()?;
                let section = c.count_density_section(bank.len())?.clone();
                Plan::CountDensity { bank, target, section }
            }
            Command::Calibrate(_) => {
                let section = c.calibrate_section()?.clone();
                let omega = DensityHistogram::read_json(&section.histogram)?;
                Plan::Calibrate { omega, section }
            }
            Command::Assemble(_) => {
                let (section, schedule) = c.assemble_section()?;
                let (section, schedule) = (section.clone(), schedule);
                let (bank, target) = bank_and_target()?;
                if let Some(crate::gcmc::InitialState::Members(m)) = &section.initial {
                    if m.iter().any(|&i| i >= bank.len()) {
                        return Err(Error::InvalidArgument("initial member out of range".into()));
                    }
                }
                Plan::Assemble {
                    bank,
                    target,
                    section,
                    schedule,
                }
            }
            Command::FindOptimalN(_) => {
                let schedule = c.find_optimal_n_section()?;
                let (bank, target) = bank_and_target()?;
                Plan::FindOptimalN { bank, target, schedule }
            }
            Command::SweepMu(_) => {
                let (section, schedule) = c.sweep_mu_section()?;
                let section = section.clone();
                let (bank, target) = bank_and_target()?;
                Plan::SweepMu {
                    bank,
                    target,
                    section,
                    schedule,
                }
            }
        })
    }

    pub fn execute(self, ctx: &RunContext) -> Result<Outcome> {
        match self {
            Plan::GenBank { bank, recipe, file } => {
                let path = ctx.path(&file);
                let format = BankFormat::from_path(&path).unwrap_or(BankFormat::Csv);
                bank.save(&path, format)?;
                Ok(Outcome::ok(format!("M={} seed={} -> {}", bank.len(), recipe.seed, path.display())))
            }
            Plan::CountDensity { bank, target, section } => count_density(ctx, &bank, &target, &section),
            Plan::Calibrate { omega, section } => {
                let cal = calibrate(&omega, section.n_star, section.e_star, section.stencil)?;
                write_json(&ctx.path("calibration.json"), &cal)?;
                if let (Some(t), Some(mu)) = (cal.temperature, cal.mu) {
                    let p = analytic_p(&omega, t, mu)?;
                    p.write_csv(&ctx.path("analytic_p.csv"))?;
                    let (n, bin) = p.mode();
                    let summary = AnalyticSummary {
                        temperature: t,
                        mu,
                        mode_n: n,
                        mode_e: p.binning().bin_center(bin),
                        moments: p.moments(),
                    };
                    write_json(&ctx.path("analytic.json"), &summary)?;
                } else {
                    log::warn!("beta = {} <= 0 at the requested point: no usable temperature", cal.beta);
                }
                Ok(Outcome::ok(format!(
                    "alpha={} beta={} T={:?} mu={:?}",
                    cal.alpha, cal.beta, cal.temperature, cal.mu
                )))
            }
            Plan::Assemble {
                bank,
                target,
                section,
                schedule,
            } => assemble(ctx, &bank, &target, &section, schedule.as_ref()),
            Plan::FindOptimalN { bank, target, schedule } => find_optimal_n(ctx, &bank, &target, &schedule),
            Plan::SweepMu {
                bank,
                target,
                section,
                schedule,
            } => sweep_mu(ctx, &bank, &target, &section, &schedule),
        }
    }
}

/// Stationary distribution implied by the calibrated `(T, mu)`.
#[derive(Serialize)]
struct AnalyticSummary {
    temperature: f64,
    mu: f64,
    mode_n: usize,
    mode_e: f64,
    moments: DistributionMoments,
}

fn count_density(
    ctx: &RunContext,
    bank: &ItemBank,
    target: &InfoCurve,
    s: &CountDensitySection,
) -> Result<Outcome> {
    let clock = std::time::Instant::now();
    let omega = match s.samples_per_n {
        Some(samples) if !s.exact => mc_count(bank, target, samples, s.e_bin_width, s.e_cap, ctx.seed)?,
        _ => enumerate_exact(bank, target, s.e_bin_width, s.e_cap)?,
    };
    log::info!("density counted in {:.3} s", clock.elapsed().as_secs_f64());
    omega.write_json(&ctx.path("density.json"))?;
    omega.write_csv(&ctx.path("density.csv"))?;
    Ok(Outcome::ok(format!(
        "M={} kind={} cells={}",
        omega.m(),
        omega.kind().as_str(),
        omega.cells().count()
    )))
}

fn write_anneal(ctx: &RunContext, report: &AnnealReport) -> Result<AnnealSummary> {
    report.write_stages_csv(&ctx.path("anneal_stages.csv"))?;
    report.final_stats.histogram.write_csv(&ctx.path("final_histogram.csv"))?;
    Ok(report.summary())
}

fn unreachable(report: &AnnealReport) -> Error {
    Error::GoalUnreachable {
        e_goal: report.e_goal,
        stages: report.stages.len(),
        last_mean_e: report.stages.last().map_or(f64::NAN, |s| s.mean_e),
    }
}

#[derive(Serialize)]
struct AssembleOutput<'a> {
    seed: u64,
    mu: f64,
    threshold: f64,
    temperature: f64,
    reached_goal: Option<bool>,
    solutions: usize,
    reports_written: usize,
    chain: &'a ChainSummary,
    anneal: Option<AnnealSummary>,
}

fn assemble(
    ctx: &RunContext,
    bank: &ItemBank,
    target: &InfoCurve,
    s: &AssembleSection,
    schedule: Option<&CoolingSchedule>,
) -> Result<Outcome> {
    let threshold = s.threshold();
    let (archive, chain, temperature, anneal_summary, reached): (SolutionArchive, ChainSummary, f64, _, _) =
        match schedule {
            Some(schedule) => {
                let report = anneal(bank, target, s.mu, schedule, ctx.seed)?;
                let summary = write_anneal(ctx, &report)?;
                (
                    report.archive.clone(),
                    report.final_stats.summary(),
                    report.final_temperature,
                    Some(summary),
                    Some(report.reached_goal),
                )
            }
            None => {
                let t = s.temperature.expect("checked");
                let mut params = GcmcParams::new(t, s.mu, ctx.seed);
                if let Some(m) = s.move_mix {
                    params.move_mix = m;
                }
                let config = ChainConfig {
                    n_steps: s.n_steps.expect("checked"),
                    burn_in: s.burn_in,
                    archive_threshold: Some(threshold),
                    e_bin_width: s.e_bin_width,
                    initial: s.initial.clone().unwrap_or_default(),
                };
                let run = run_chain(bank, target, params, &config)?;
                run.stats.histogram.write_csv(&ctx.path("final_histogram.csv"))?;
                (run.archive, run.stats.summary(), t, None, None)
            }
        };

    let mut reports = Vec::new();
    for sol in archive.sorted() {
        if reports.len() == s.max_reports {
            break;
        }
        let r = SolutionReport::build(reports.len() + 1, &sol, bank, target, s.histogram_bins)?;
        if r.e <= threshold {
            reports.push(r);
        } else {
            log::warn!("dropping a solution whose recomputed E = {} exceeds {threshold}", r.e);
        }
    }
    write_solutions(ctx, &archive.summary(), &reports)?;
    write_json(
        &ctx.path("assemble.json"),
        &AssembleOutput {
            seed: ctx.seed,
            mu: s.mu,
            threshold,
            temperature,
            reached_goal: reached,
            solutions: archive.len(),
            reports_written: reports.len(),
            chain: &chain,
            anneal: anneal_summary,
        },
    )?;
    let summary = format!(
        "solutions={} <N>={:.3} <E>={:.4} T={temperature}",
        archive.len(),
        chain.mean_n,
        chain.mean_e
    );
    if reached == Some(false) {
        log::error!("goal not reached; partial results written");
        return Ok(Outcome {
            status: ExitStatus::Unreachable,
            summary,
        });
    }
    if archive.is_empty() {
        log::error!("no solutions with E <= {threshold}");
        return Ok(Outcome {
            status: ExitStatus::Unreachable,
            summary,
        });
    }
    Ok(Outcome::ok(summary))
}

fn write_solutions(ctx: &RunContext, archive: &ArchiveSummary, reports: &[SolutionReport]) -> Result<()> {
    write_json(&ctx.path("solutions.json"), archive)?;
    write_csv(
        &ctx.path("solutions.csv"),
        &["rank", "N", "E", "first_step", "members"],
        archive.entries.iter().enumerate().map(|(k, s)| {
            [
                (k + 1).to_string(),
                s.members.len().to_string(),
                s.e.to_string(),
                s.first_step.to_string(),
                s.members.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
            ]
        }),
    )?;
    let dir = ctx.path("reports");
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for r in reports {
        write_json(&dir.join(format!("solution_{:04}.json", r.rank)), r)?;
    }
    write_csv(
        &ctx.path("curves.csv"),
        &["rank", "theta", "test_info", "target_info"],
        reports.iter().flat_map(|r| {
            (0..r.theta.len()).map(move |i| {
                [
                    r.rank.to_string(),
                    r.theta[i].to_string(),
                    r.test_info[i].to_string(),
                    r.target_info[i].to_string(),
                ]
            })
        }),
    )?;
    write_csv(
        &ctx.path("item_histograms.csv"),
        &["rank", "parameter", "bin_lo", "bin_hi", "count"],
        reports.iter().flat_map(|r| {
            let a = r.a_histogram.iter().map(move |b| ("a", b));
            let bb = r.b_histogram.iter().map(move |b| ("b", b));
            a.chain(bb).map(move |(p, b)| {
                [
                    r.rank.to_string(),
                    p.to_string(),
                    b.lo.to_string(),
                    b.hi.to_string(),
                    b.count.to_string(),
                ]
            })
        }),
    )
}

#[derive(Serialize)]
struct OptimalNOutput {
    seed: u64,
    e_goal: f64,
    reached_goal: bool,
    #[serde(rename = "N_opt")]
    n_opt: Option<usize>,
    mean_n: f64,
    sd_n: f64,
    mean_e: f64,
    final_temperature: f64,
    anneal: AnnealSummary,
}

fn find_optimal_n(
    ctx: &RunContext,
    bank: &ItemBank,
    target: &InfoCurve,
    schedule: &CoolingSchedule,
) -> Result<Outcome> {
    let report = anneal(bank, target, 0.0, schedule, ctx.seed)?;
    let summary = write_anneal(ctx, &report)?;
    let n_opt = report.reached_goal.then(|| round_half_down(report.final_mean_n()));
    write_json(
        &ctx.path("optimal_n.json"),
        &OptimalNOutput {
            seed: ctx.seed,
            e_goal: schedule.e_goal,
            reached_goal: report.reached_goal,
            n_opt,
            mean_n: report.final_mean_n(),
            sd_n: report.final_stats.n.std_dev(),
            mean_e: report.final_mean_e(),
            final_temperature: report.final_temperature,
            anneal: summary,
        },
    )?;
    match n_opt {
        Some(n) => Ok(Outcome::ok(format!(
            "N_opt={n} <N>={:.3} T={}",
            report.final_mean_n(),
            report.final_temperature
        ))),
        None => Err(unreachable(&report)),
    }
}

#[derive(Serialize)]
struct SweepOutput {
    seed: u64,
    e_goal: f64,
    rows: Vec<SweepRow>,
    ratios: Option<Vec<OmegaRatio>>,
    anneals: Vec<AnnealSummary>,
}

fn sweep_mu(
    ctx: &RunContext,
    bank: &ItemBank,
    target: &InfoCurve,
    s: &SweepMuSection,
    schedule: &CoolingSchedule,
) -> Result<Outcome> {
    let table = sweep_item_potential(bank, target, s.e_goal, &s.mu_values, schedule, ctx.seed)?;
    table.write_csv(&ctx.path("sweep.csv"))?;
    let ratios = match table.ratios() {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("no ratio report: {e}");
            None
        }
    };
    if let Some(r) = &ratios {
        write_ratios(&ctx.path("omega_ratios.csv"), r)?;
    }
    write_json(
        &ctx.path("sweep.json"),
        &SweepOutput {
            seed: ctx.seed,
            e_goal: table.e_goal,
            rows: table.rows.clone(),
            ratios,
            anneals: table.reports.iter().map(AnnealReport::summary).collect(),
        },
    )?;
    let cells: Vec<String> = table
        .rows
        .iter()
        .map(|r| {
            if r.reached_goal {
                format!("mu={}:N*={}", r.mu, r.n_star)
            } else {
                format!("mu={}:unreachable", r.mu)
            }
        })
        .collect();
    Ok(Outcome::ok(cells.join(" ")))
}

fn write_ratios(path: &Path, ratios: &[OmegaRatio]) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    write_csv(
        path,
        &["mu", "ratio", "log_ratio"],
        ratios
            .iter()
            .map(|r| [r.mu.to_string(), opt(r.ratio), opt(r.log_ratio)]),
    )
}
