//! Run configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annealing::CoolingSchedule;
use crate::bank::{generate_bank, load_bank, BankFormat, BankRecipe, ItemBank};
use crate::density::{Stencil, EXACT_LIMIT};
use crate::error::{Error, Result};
use crate::gcmc::{InitialState, MoveMix};
use crate::irt::{InfoCurve, TargetSpec, ThetaGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        let g = ThetaGrid::default();
        GridSpec {
            lo: g.lo(),
            hi: g.hi(),
            n_points: g.len(),
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<ThetaGrid> {
        ThetaGrid::new(self.lo, self.hi, self.n_points)
    }
}

/// Generator recipe as written in a config; the run seed fills in a
/// missing `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeSpec {
    pub m: usize,
    #[serde(default)]
    pub a_range: Option<(f64, f64)>,
    #[serde(default)]
    pub b_range: Option<(f64, f64)>,
    #[serde(default)]
    pub c_value: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RecipeSpec {
    pub fn resolve(&self, run_seed: u64) -> BankRecipe {
        let mut r = BankRecipe::standard(self.m, self.seed.unwrap_or(run_seed));
        if let Some(a) = self.a_range {
            r.a_range = a;
        }
        if let Some(b) = self.b_range {
            r.b_range = b;
        }
        if let Some(c) = self.c_value {
            r.c_value = c;
        }
        r
    }
}

/// Exactly one of `path` and `recipe`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSource {
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Defaults to the file extension.
    #[serde(default)]
    pub format: Option<BankFormat>,
    #[serde(default)]
    pub recipe: Option<RecipeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenBankSection {
    /// Output file name inside the output directory; `.csv` or `.json`.
    #[serde(default = "default_bank_file")]
    pub file: String,
}

fn default_bank_file() -> String {
    "bank.csv".into()
}

impl Default for GenBankSection {
    fn default() -> Self {
        GenBankSection {
            file: default_bank_file(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountDensitySection {
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub samples_per_n: Option<u64>,
    #[serde(default = "one")]
    pub e_bin_width: f64,
    #[serde(default)]
    pub e_cap: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    /// Density JSON written by `count-density`.
    pub histogram: PathBuf,
    pub n_star: usize,
    pub e_star: f64,
    #[serde(default)]
    pub stencil: Option<Stencil>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssembleSection {
    #[serde(default)]
    pub mu: f64,
    /// Fixed temperature; excludes `e_goal`.
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Anneal to this mean distance; excludes `temperature`.
    #[serde(default)]
    pub e_goal: Option<f64>,
    #[serde(default)]
    pub schedule: Option<CoolingSchedule>,
    /// Largest `E` archived as a solution; `e_goal` when absent.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Chain length at a fixed temperature.
    #[serde(default)]
    pub n_steps: Option<u64>,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default)]
    pub move_mix: Option<MoveMix>,
    #[serde(default)]
    pub initial: Option<InitialState>,
    #[serde(default = "default_bin_width_fine")]
    pub e_bin_width: f64,
    /// Solutions written out in full, best first.
    #[serde(default = "default_max_reports")]
    pub max_reports: usize,
    #[serde(default = "default_hist_bins")]
    pub histogram_bins: usize,
}

fn default_bin_width_fine() -> f64 {
    0.1
}

fn default_max_reports() -> usize {
    10
}

fn default_hist_bins() -> usize {
    10
}

impl AssembleSection {
    pub fn threshold(&self) -> f64 {
        self.threshold.or(self.e_goal).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindOptimalNSection {
    pub e_goal: f64,
    #[serde(default)]
    pub schedule: Option<CoolingSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepMuSection {
    pub e_goal: f64,
    pub mu_values: Vec<f64>,
    #[serde(default)]
    pub schedule: Option<CoolingSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub bank: Option<BankSource>,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub gen_bank: Option<GenBankSection>,
    #[serde(default)]
    pub count_density: Option<CountDensitySection>,
    #[serde(default)]
    pub calibrate: Option<CalibrateSection>,
    #[serde(default)]
    pub assemble: Option<AssembleSection>,
    #[serde(default)]
    pub find_optimal_n: Option<FindOptimalNSection>,
    #[serde(default)]
    pub sweep_mu: Option<SweepMuSection>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    /// Reads a config and makes its relative paths relative to the file.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        config.rebase(base);
        Ok((config, text))
    }

    pub fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.bank.as_mut().and_then(|b| b.path.as_mut()) {
            join(p);
        }
        if let Some(c) = self.calibrate.as_mut() {
            join(&mut c.histogram);
        }
        if let Some(p) = self.output_dir.as_mut() {
            join(p);
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn missing(section: &str) -> Error {
    invalid(format!("config has no `{section}` section"))
}

fn check_schedule(schedule: &Option<CoolingSchedule>, e_goal: f64) -> Result<CoolingSchedule> {
    let mut s = schedule.clone().unwrap_or_else(|| CoolingSchedule::new(e_goal));
    s.e_goal = e_goal;
    s.check()?;
    Ok(s)
}

impl BankSource {
    pub fn check(&self) -> Result<()> {
        match (&self.path, &self.recipe) {
            (Some(p), None) => {
                if !p.is_file() {
                    return Err(invalid(format!("bank file {} not found", p.display())));
                }
                self.resolved_format(p).map(|_| ())
            }
            (None, Some(_)) => Ok(()),
            _ => Err(invalid("bank needs exactly one of `path` and `recipe`")),
        }
    }

    fn resolved_format(&self, path: &Path) -> Result<BankFormat> {
        self.format
            .or_else(|| BankFormat::from_path(path))
            .ok_or_else(|| invalid(format!("cannot tell the format of {}", path.display())))
    }

    pub fn load(&self, grid: ThetaGrid, run_seed: u64) -> Result<ItemBank> {
        self.check()?;
        match (&self.path, &self.recipe) {
            (Some(p), _) => load_bank(p, self.resolved_format(p)?, grid),
            (_, Some(r)) => generate_bank(&r.resolve(run_seed), grid),
            _ => unreachable!(),
        }
    }
}

impl RunConfig {
    pub fn grid(&self) -> Result<ThetaGrid> {
        self.grid.build()
    }

    pub fn bank_source(&self) -> Result<&BankSource> {
        self.bank.as_ref().ok_or_else(|| missing("bank"))
    }

    pub fn target_curve(&self, grid: ThetaGrid) -> Result<InfoCurve> {
        self.target.as_ref().ok_or_else(|| missing("target"))?.to_curve(grid)
    }

    pub fn gen_bank_section(&self) -> Result<GenBankSection> {
        let s = self.gen_bank.clone().unwrap_or_default();
        if self.bank_source()?.recipe.is_none() {
            return Err(invalid("gen-bank needs `bank.recipe`"));
        }
        self.bank_source()?.check()?;
        if s.file.contains(['/', '\\']) || BankFormat::from_path(Path::new(&s.file)).is_none() {
            return Err(invalid(format!("bad bank file name {:?}", s.file)));
        }
        Ok(s)
    }

    /// Checks the section; `m` is the bank size.
    pub fn count_density_section(&self, m: usize) -> Result<&CountDensitySection> {
        let s = self.count_density.as_ref().ok_or_else(|| missing("count_density"))?;
        match (s.exact, s.samples_per_n) {
            (true, Some(_)) => return Err(invalid("give either `exact` or `samples_per_n`")),
            (false, None) => return Err(invalid("count_density needs `samples_per_n` or `exact`")),
            (false, Some(0)) => return Err(invalid("samples_per_n must be >= 1")),
            _ => {}
        }
        if !(s.e_bin_width > 0.0) {
            return Err(invalid("e_bin_width must be positive"));
        }
        if s.exact && m > EXACT_LIMIT {
            return Err(Error::OracleCapacity { m, limit: EXACT_LIMIT });
        }
        Ok(s)
    }

    pub fn calibrate_section(&self) -> Result<&CalibrateSection> {
        let s = self.calibrate.as_ref().ok_or_else(|| missing("calibrate"))?;
        if !s.histogram.is_file() {
            return Err(invalid(format!("histogram {} not found", s.histogram.display())));
        }
        if !s.e_star.is_finite() {
            return Err(invalid("e_star must be finite"));
        }
        Ok(s)
    }

    /// The checked section plus its schedule when annealing.
    pub fn assemble_section(&self) -> Result<(&AssembleSection, Option<CoolingSchedule>)> {
        let s = self.assemble.as_ref().ok_or_else(|| missing("assemble"))?;
        if !s.mu.is_finite() {
            return Err(invalid("mu must be finite"));
        }
        if !s.threshold().is_finite() {
            return Err(invalid("assemble needs `threshold` or `e_goal`"));
        }
        if !(s.e_bin_width > 0.0) || s.histogram_bins == 0 {
            return Err(invalid("e_bin_width and histogram_bins must be positive"));
        }
        if let Some(m) = &s.move_mix {
            m.check()?;
        }
        match (s.temperature, s.e_goal) {
            (Some(t), None) => {
                if !(t.is_finite() && t > 0.0) {
                    return Err(invalid("temperature must be positive"));
                }
                match s.n_steps {
                    Some(n) if n > s.burn_in => Ok((s, None)),
                    _ => Err(invalid("a fixed-temperature run needs n_steps > burn_in")),
                }
            }
            (None, Some(e_goal)) => {
                if s.n_steps.is_some() || s.burn_in != 0 {
                    return Err(invalid("n_steps and burn_in apply to fixed-temperature runs; use the schedule"));
                }
                let mut sched = check_schedule(&s.schedule, e_goal)?;
                sched.archive_threshold = Some(s.threshold());
                if let Some(m) = s.move_mix {
                    sched.move_mix = m;
                }
                if let Some(i) = &s.initial {
                    sched.initial = i.clone();
                }
                Ok((s, Some(sched)))
            }
            _ => Err(invalid("assemble needs exactly one of `temperature` and `e_goal`")),
        }
    }

    pub fn find_optimal_n_section(&self) -> Result<CoolingSchedule> {
        let s = self.find_optimal_n.as_ref().ok_or_else(|| missing("find_optimal_n"))?;
        check_schedule(&s.schedule, s.e_goal)
    }

    pub fn sweep_mu_section(&self) -> Result<(&SweepMuSection, CoolingSchedule)> {
        let s = self.sweep_mu.as_ref().ok_or_else(|| missing("sweep_mu"))?;
        if s.mu_values.is_empty() {
            return Err(invalid("mu_values is empty"));
        }
        if s.mu_values.iter().any(|m| !m.is_finite()) {
            return Err(invalid("mu_values must be finite"));
        }
        Ok((s, check_schedule(&s.schedule, s.e_goal)?))
    }
}
