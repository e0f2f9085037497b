//! Grand canonical Monte Carlo over item subsets.
//!
//! A state is a set of bank items (a test form). Each step draws one of
//! three moves (replace, remove, add), evaluates the change in distance to
//! the target, and accepts with the Metropolis factor whose stationary
//! distribution weights every individual subset by `exp((mu N - E) / T)`.
//! The binomial ratio in the acceptance rule is applied in its reduced
//! per-move form, so no large coefficient is ever evaluated.

mod stats;

pub use stats::{
    ArchiveSummary, ChainStats, ChainSummary, HistogramCell, JointHistogram, Moments,
    MoveCounts, Solution, SolutionArchive, StepOutcome, DEFAULT_ARCHIVE_CAPACITY,
};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::ItemBank;
use crate::error::{Error, Result};
use crate::irt::{squared_gap, InfoCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Replace,
    Remove,
    Add,
}

impl MoveKind {
    pub const ALL: [MoveKind; 3] = [MoveKind::Replace, MoveKind::Remove, MoveKind::Add];

    fn index(self) -> usize {
        match self {
            MoveKind::Replace => 0,
            MoveKind::Remove => 1,
            MoveKind::Add => 2,
        }
    }
}

/// Move probabilities. Removal and addition must be equally likely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveMix {
    pub replace: f64,
    pub remove: f64,
    pub add: f64,
}

impl Default for MoveMix {
    fn default() -> Self {
        MoveMix {
            replace: 1.0 / 3.0,
            remove: 1.0 / 3.0,
            add: 1.0 / 3.0,
        }
    }
}

impl MoveMix {
    /// Mix with the given replace weight; the rest is split evenly.
    pub fn with_replace(replace: f64) -> Result<Self> {
        let mix = MoveMix {
            replace,
            remove: (1.0 - replace) / 2.0,
            add: (1.0 - replace) / 2.0,
        };
        mix.check()?;
        Ok(mix)
    }

    pub fn check(&self) -> Result<()> {
        let all = [self.replace, self.remove, self.add];
        if all.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "move probabilities must be non-negative, got {self:?}"
            )));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "move probabilities must sum to 1, got {self:?}"
            )));
        }
        if (self.remove - self.add).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "removal and addition must be equally likely, got {} vs {}",
                self.remove, self.add
            )));
        }
        Ok(())
    }

    pub fn probability(&self, kind: MoveKind) -> f64 {
        match kind {
            MoveKind::Replace => self.replace,
            MoveKind::Remove => self.remove,
            MoveKind::Add => self.add,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let u: f64 = rng.gen();
        if u < self.replace {
            MoveKind::Replace
        } else if u < self.replace + self.remove {
            MoveKind::Remove
        } else {
            MoveKind::Add
        }
    }
}

pub const DEFAULT_RECOMPUTE_PERIOD: u64 = 10_000;

fn default_recompute_period() -> u64 {
    DEFAULT_RECOMPUTE_PERIOD
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcmcParams {
    pub temperature: f64,
    pub mu: f64,
    #[serde(default)]
    pub move_mix: MoveMix,
    pub seed: u64,
    #[serde(default = "default_recompute_period")]
    pub full_recompute_period: u64,
}

impl GcmcParams {
    pub fn new(temperature: f64, mu: f64, seed: u64) -> Self {
        GcmcParams {
            temperature,
            mu,
            move_mix: MoveMix::default(),
            seed,
            full_recompute_period: DEFAULT_RECOMPUTE_PERIOD,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidArgument("item potential must be finite".into()));
        }
        if self.full_recompute_period == 0 {
            return Err(Error::InvalidArgument(
                "full_recompute_period must be >= 1".into(),
            ));
        }
        self.move_mix.check()
    }
}

/// Generator for chain `stream` of a master seed.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A test form with its cached information curve and distance.
#[derive(Debug, Clone, PartialEq)]
pub struct TestState {
    members: Vec<usize>,
    mask: Vec<bool>,
    info: Vec<f64>,
    e_value: f64,
}

/// Largest discrepancy found between cached and recomputed values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheDrift {
    /// Max over grid points of `|cached - fresh| / max(|fresh|, 1)`.
    pub info_relative: f64,
    pub e_absolute: f64,
}

impl CacheDrift {
    fn max(self, other: CacheDrift) -> CacheDrift {
        CacheDrift {
            info_relative: self.info_relative.max(other.info_relative),
            e_absolute: self.e_absolute.max(other.e_absolute),
        }
    }
}

impl TestState {
    pub fn new<I>(bank: &ItemBank, target: &InfoCurve, members: I) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        check_grids(bank, target)?;
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        if let Some(&bad) = members.iter().find(|&&i| i >= bank.len()) {
            return Err(Error::InvalidArgument(format!(
                "item index {bad} out of range for a bank of {}",
                bank.len()
            )));
        }
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate item in test".into()));
        }
        let mut mask = vec![false; bank.len()];
        for &i in &members {
            mask[i] = true;
        }
        let info = fresh_info(bank, &members);
        let e_value = squared_gap(&info, target.values(), bank.grid().step());
        Ok(TestState {
            members,
            mask,
            info,
            e_value,
        })
    }

    pub fn empty(bank: &ItemBank, target: &InfoCurve) -> Result<Self> {
        Self::new(bank, target, std::iter::empty())
    }

    /// Uniformly drawn subset of size `n`.
    pub fn random<R: Rng + ?Sized>(
        bank: &ItemBank,
        target: &InfoCurve,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n > bank.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {n} items from a bank of {}",
                bank.len()
            )));
        }
        Self::new(bank, target, index::sample(rng, bank.len(), n))
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn e_value(&self) -> f64 {
        self.e_value
    }

    pub fn info(&self) -> &[f64] {
        &self.info
    }

    #[inline]
    pub fn contains(&self, item: usize) -> bool {
        self.mask[item]
    }

    /// Bank size the state was built against.
    pub fn bank_len(&self) -> usize {
        self.mask.len()
    }

    /// Bit set of members, for banks of at most 64 items.
    pub fn bitmask(&self) -> u64 {
        assert!(self.mask.len() <= 64, "bitmask needs M <= 64");
        self.members.iter().fold(0u64, |acc, &i| acc | (1u64 << i))
    }

    /// Rebuilds the cache from scratch and reports how far it had drifted.
    pub fn recompute(&mut self, bank: &ItemBank, target: &InfoCurve) -> CacheDrift {
        let info = fresh_info(bank, &self.members);
        let e = squared_gap(&info, target.values(), bank.grid().step());
        let info_relative = self
            .info
            .iter()
            .zip(&info)
            .map(|(c, f)| (c - f).abs() / f.abs().max(1.0))
            .fold(0.0, f64::max);
        let drift = CacheDrift {
            info_relative,
            e_absolute: (self.e_value - e).abs(),
        };
        self.info = info;
        self.e_value = e;
        drift
    }

    /// Applies an accepted proposal whose updated curve is in `new_info`.
    /// On return `new_info` holds the previous curve.
    pub fn apply(&mut self, proposal: &MoveProposal, new_info: &mut Vec<f64>) {
        if let Some(out) = proposal.out_index {
            let pos = self
                .members
                .binary_search(&out)
                .expect("removed item must be a member");
            self.members.remove(pos);
            self.mask[out] = false;
        }
        if let Some(inc) = proposal.in_index {
            let pos = self
                .members
                .binary_search(&inc)
                .expect_err("added item must not be a member");
            self.members.insert(pos, inc);
            self.mask[inc] = true;
        }
        std::mem::swap(&mut self.info, new_info);
        self.e_value = proposal.e_new;
    }
}

fn fresh_info(bank: &ItemBank, members: &[usize]) -> Vec<f64> {
    let mut info = vec![0.0; bank.grid().len()];
    for &i in members {
        for (v, x) in info.iter_mut().zip(bank.curve(i)) {
            *v += x;
        }
    }
    info
}

fn check_grids(bank: &ItemBank, target: &InfoCurve) -> Result<()> {
    if bank.grid() != target.grid() {
        return Err(Error::GridMismatch(format!(
            "bank grid {:?} vs target grid {:?}",
            bank.grid(),
            target.grid()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveProposal {
    pub kind: MoveKind,
    pub out_index: Option<usize>,
    pub in_index: Option<usize>,
    pub delta_n: i32,
    pub delta_e: f64,
    /// Distance of the proposed test.
    pub e_new: f64,
}

fn draw_member<R: Rng + ?Sized>(state: &TestState, rng: &mut R) -> usize {
    state.members[rng.gen_range(0..state.members.len())]
}

fn draw_non_member<R: Rng + ?Sized>(state: &TestState, rng: &mut R) -> usize {
    let m = state.mask.len();
    loop {
        let i = rng.gen_range(0..m);
        if !state.mask[i] {
            return i;
        }
    }
}

/// Builds a proposal of the given kind. The proposed curve is written to
/// `new_info`. Returns `None` when no such move exists from `state`.
pub fn propose_move<R: Rng + ?Sized>(
    state: &TestState,
    bank: &ItemBank,
    target: &InfoCurve,
    kind: MoveKind,
    rng: &mut R,
    new_info: &mut Vec<f64>,
) -> Option<MoveProposal> {
    let n = state.n();
    let m = bank.len();
    let (out_index, in_index, delta_n) = match kind {
        MoveKind::Replace if n == 0 || n == m => return None,
        MoveKind::Remove if n == 0 => return None,
        MoveKind::Add if n == m => return None,
        MoveKind::Replace => (
            Some(draw_member(state, rng)),
            Some(draw_non_member(state, rng)),
            0,
        ),
        MoveKind::Remove => (Some(draw_member(state, rng)), None, -1),
        MoveKind::Add => (None, Some(draw_non_member(state, rng)), 1),
    };

    new_info.clear();
    new_info.extend_from_slice(&state.info);
    if let Some(out) = out_index {
        for (v, x) in new_info.iter_mut().zip(bank.curve(out)) {
            *v -= x;
        }
    }
    if let Some(inc) = in_index {
        for (v, x) in new_info.iter_mut().zip(bank.curve(inc)) {
            *v += x;
        }
    }
    let e_new = squared_gap(new_info, target.values(), bank.grid().step());
    Some(MoveProposal {
        kind,
        out_index,
        in_index,
        delta_n,
        delta_e: e_new - state.e_value,
        e_new,
    })
}

/// Natural log of the acceptance probability (always `<= 0`). `n_old` is
/// the test length before the move, `m` the bank size.
pub fn log_acceptance(
    kind: MoveKind,
    n_old: usize,
    m: usize,
    delta_e: f64,
    temperature: f64,
    mu: f64,
) -> f64 {
    let n = n_old as f64;
    let m = m as f64;
    let log_ratio = match kind {
        MoveKind::Replace => -delta_e / temperature,
        MoveKind::Remove => (n / (m - n + 1.0)).ln() + (-mu - delta_e) / temperature,
        MoveKind::Add => ((m - n) / (n + 1.0)).ln() + (mu - delta_e) / temperature,
    };
    log_ratio.min(0.0)
}

pub fn acceptance_probability(
    proposal: &MoveProposal,
    n_old: usize,
    params: &GcmcParams,
    m: usize,
) -> f64 {
    log_acceptance(
        proposal.kind,
        n_old,
        m,
        proposal.delta_e,
        params.temperature,
        params.mu,
    )
    .exp()
}

/// How a chain picks its first state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Uniform subset of `round(M / 10)` items.
    #[default]
    Default,
    RandomSize(usize),
    Members(Vec<usize>),
}

impl InitialState {
    pub fn build<R: Rng + ?Sized>(
        &self,
        bank: &ItemBank,
        target: &InfoCurve,
        rng: &mut R,
    ) -> Result<TestState> {
        match self {
            InitialState::Default => {
                let n = (bank.len() as f64 / 10.0).round() as usize;
                TestState::random(bank, target, n, rng)
            }
            InitialState::RandomSize(n) => TestState::random(bank, target, *n, rng),
            InitialState::Members(m) => TestState::new(bank, target, m.iter().copied()),
        }
    }
}

/// A running chain: state, generator and the cached proposal buffer.
#[derive(Debug, Clone)]
pub struct Chain<'a> {
    bank: &'a ItemBank,
    target: &'a InfoCurve,
    params: GcmcParams,
    rng: ChaCha8Rng,
    state: TestState,
    scratch: Vec<f64>,
    steps: u64,
    max_drift: CacheDrift,
}

impl<'a> Chain<'a> {
    pub fn new(
        bank: &'a ItemBank,
        target: &'a InfoCurve,
        params: GcmcParams,
        initial: &InitialState,
    ) -> Result<Self> {
        Self::with_rng(
            bank,
            target,
            params,
            initial,
            ChaCha8Rng::seed_from_u64(params.seed),
        )
    }

    pub fn with_rng(
        bank: &'a ItemBank,
        target: &'a InfoCurve,
        params: GcmcParams,
        initial: &InitialState,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        params.check()?;
        check_grids(bank, target)?;
        let state = initial.build(bank, target, &mut rng)?;
        Ok(Chain {
            bank,
            target,
            params,
            rng,
            state,
            scratch: Vec::with_capacity(bank.grid().len()),
            steps: 0,
            max_drift: CacheDrift::default(),
        })
    }

    pub fn state(&self) -> &TestState {
        &self.state
    }

    pub fn into_state(self) -> TestState {
        self.state
    }

    pub fn params(&self) -> &GcmcParams {
        &self.params
    }

    pub fn bank(&self) -> &'a ItemBank {
        self.bank
    }

    pub fn target(&self) -> &'a InfoCurve {
        self.target
    }

    pub fn set_temperature(&mut self, temperature: f64) -> Result<()> {
        let mut p = self.params;
        p.temperature = temperature;
        p.check()?;
        self.params = p;
        Ok(())
    }

    /// Total steps taken, burn-in included.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Worst cache discrepancy seen at the periodic rebuilds so far.
    pub fn max_drift(&self) -> CacheDrift {
        self.max_drift
    }

    /// One propose/accept/reject cycle.
    pub fn step(&mut self) -> (MoveKind, StepOutcome) {
        let kind = self.params.move_mix.draw(&mut self.rng);
        let outcome = match propose_move(
            &self.state,
            self.bank,
            self.target,
            kind,
            &mut self.rng,
            &mut self.scratch,
        ) {
            None => StepOutcome::Infeasible,
            Some(p) => {
                let log_acc = log_acceptance(
                    kind,
                    self.state.n(),
                    self.bank.len(),
                    p.delta_e,
                    self.params.temperature,
                    self.params.mu,
                );
                if log_acc >= 0.0 || self.rng.gen::<f64>() < log_acc.exp() {
                    self.state.apply(&p, &mut self.scratch);
                    StepOutcome::Accepted
                } else {
                    StepOutcome::Rejected
                }
            }
        };
        self.steps += 1;
        if self.steps.is_multiple_of(self.params.full_recompute_period) {
            let drift = self.state.recompute(self.bank, self.target);
            self.max_drift = self.max_drift.max(drift);
        }
        (kind, outcome)
    }

    /// Runs `n_steps`, recording each into `stats` and offering every newly
    /// entered state to `archive`.
    pub fn run(
        &mut self,
        n_steps: u64,
        stats: &mut ChainStats,
        mut archive: Option<&mut SolutionArchive>,
    ) {
        let mut fresh = true;
        for _ in 0..n_steps {
            let (kind, outcome) = self.step();
            stats.record(kind, outcome, &self.state);
            if let Some(a) = archive.as_deref_mut() {
                if fresh || outcome == StepOutcome::Accepted {
                    a.offer(&self.state, self.steps);
                }
            }
            fresh = false;
        }
    }

    /// Advances without recording anything.
    pub fn advance(&mut self, n_steps: u64) {
        for _ in 0..n_steps {
            self.step();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_steps: u64,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default)]
    pub archive_threshold: Option<f64>,
    #[serde(default = "default_bin_width")]
    pub e_bin_width: f64,
    #[serde(default)]
    pub initial: InitialState,
}

fn default_bin_width() -> f64 {
    1.0
}

impl ChainConfig {
    pub fn new(n_steps: u64, burn_in: u64) -> Self {
        ChainConfig {
            n_steps,
            burn_in,
            archive_threshold: None,
            e_bin_width: 1.0,
            initial: InitialState::Default,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub state: TestState,
    pub stats: ChainStats,
    pub archive: SolutionArchive,
    pub max_drift: CacheDrift,
}

/// Runs `burn_in` unrecorded steps followed by `n_steps - burn_in` recorded
/// ones.
pub fn run_chain(
    bank: &ItemBank,
    target: &InfoCurve,
    params: GcmcParams,
    config: &ChainConfig,
) -> Result<ChainRun> {
    if config.n_steps <= config.burn_in {
        return Err(Error::InvalidArgument(format!(
            "n_steps ({}) must exceed burn_in ({})",
            config.n_steps, config.burn_in
        )));
    }
    if !(config.e_bin_width > 0.0) {
        return Err(Error::InvalidArgument("e_bin_width must be positive".into()));
    }
    let mut chain = Chain::new(bank, target, params, &config.initial)?;
    chain.advance(config.burn_in);
    let mut stats = ChainStats::new(bank.len(), config.e_bin_width);
    let mut archive = SolutionArchive::new(config.archive_threshold.unwrap_or(f64::NEG_INFINITY));
    chain.run(
        config.n_steps - config.burn_in,
        &mut stats,
        config.archive_threshold.map(|_| &mut archive),
    );
    let max_drift = chain.max_drift();
    Ok(ChainRun {
        state: chain.into_state(),
        stats,
        archive,
        max_drift,
    })
}

/// Relative gap between the two probability flows of a pair of states one
/// move apart: `|f(a->b) - f(b->a)| / max(f(a->b), f(b->a))`, where
/// `f(x->y) = w(x) q(x->y) acc(x->y)`, `w` is the unnormalised per-subset
/// weight `exp((mu N - E) / T)` and `q` the proposal probability.
pub fn detailed_balance_check(
    a: &TestState,
    b: &TestState,
    params: &GcmcParams,
    m: usize,
) -> Result<f64> {
    params.check()?;
    if a.bank_len() != m || b.bank_len() != m {
        return Err(Error::InvalidArgument(format!(
            "states built for banks of {} and {} items, expected {m}",
            a.bank_len(),
            b.bank_len()
        )));
    }
    let only_a = a.members.iter().filter(|&&i| !b.contains(i)).count();
    let only_b = b.members.iter().filter(|&&i| !a.contains(i)).count();
    let kind = match (only_a, only_b) {
        (1, 1) => MoveKind::Replace,
        (1, 0) => MoveKind::Remove,
        (0, 1) => MoveKind::Add,
        _ => {
            return Err(Error::NotAdjacent(format!(
                "{only_a} items only in the first state, {only_b} only in the second"
            )))
        }
    };
    let reverse = match kind {
        MoveKind::Replace => MoveKind::Replace,
        MoveKind::Remove => MoveKind::Add,
        MoveKind::Add => MoveKind::Remove,
    };
    let log_flow = |from: &TestState, to: &TestState, kind: MoveKind| -> f64 {
        let n = from.n() as f64;
        let free = (m - from.n()) as f64;
        let log_q = params.move_mix.probability(kind).ln()
            + match kind {
                MoveKind::Replace => -n.ln() - free.ln(),
                MoveKind::Remove => -n.ln(),
                MoveKind::Add => -free.ln(),
            };
        // weight relative to the midpoint of the pair
        let log_w = 0.5
            * (params.mu * (from.n() as f64 - to.n() as f64) - (from.e_value - to.e_value))
            / params.temperature;
        let log_acc = log_acceptance(
            kind,
            from.n(),
            m,
            to.e_value - from.e_value,
            params.temperature,
            params.mu,
        );
        log_w + log_q + log_acc
    };
    let fwd = log_flow(a, b, kind);
    let bwd = log_flow(b, a, reverse);
    Ok(-(-(fwd - bwd).abs()).exp_m1())
}
