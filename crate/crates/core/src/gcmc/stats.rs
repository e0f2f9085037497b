use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MoveKind, TestState};
use crate::error::{Error, Result};
use crate::io::write_csv;

/// Visit counts over `(N, E-bin)` cells. Bins start at `E = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    e_bin_width: f64,
    rows: Vec<Vec<u64>>,
}

impl JointHistogram {
    pub fn new(m: usize, e_bin_width: f64) -> Self {
        assert!(e_bin_width > 0.0, "bin width must be positive");
        JointHistogram {
            e_bin_width,
            rows: vec![Vec::new(); m + 1],
        }
    }

    pub fn e_bin_width(&self) -> f64 {
        self.e_bin_width
    }

    pub fn m(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn bin_of(&self, e: f64) -> usize {
        (e.max(0.0) / self.e_bin_width) as usize
    }

    #[inline]
    pub fn add(&mut self, n: usize, e: f64, weight: u64) {
        let bin = self.bin_of(e);
        let row = &mut self.rows[n];
        if row.len() <= bin {
            row.resize(bin + 1, 0);
        }
        row[bin] += weight;
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.rows
    }

    pub fn count(&self, n: usize, bin: usize) -> u64 {
        self.rows
            .get(n)
            .and_then(|r| r.get(bin))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().flatten().sum()
    }

    /// Non-empty cells as `(N, bin, count)` in `(N, bin)` order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.rows.iter().enumerate().flat_map(|(n, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(move |(bin, &c)| (n, bin, c))
        })
    }

    pub fn merge(&mut self, other: &JointHistogram) {
        assert_eq!(self.rows.len(), other.rows.len());
        assert_eq!(self.e_bin_width, other.e_bin_width);
        for (mine, theirs) in self.rows.iter_mut().zip(&other.rows) {
            if mine.len() < theirs.len() {
                mine.resize(theirs.len(), 0);
            }
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }

    /// CSV with columns `N,e_bin_lo,count`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let w = self.e_bin_width;
        write_csv(
            path,
            &["N", "e_bin_lo", "count"],
            self.cells()
                .map(|(n, bin, c)| [n.to_string(), (bin as f64 * w).to_string(), c.to_string()]),
        )
    }
}

/// Streaming mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounts {
    pub attempted: u64,
    pub accepted: u64,
    /// Draws with no legal move (e.g. removal from an empty test).
    pub infeasible: u64,
}

impl MoveCounts {
    fn merge(&mut self, o: &MoveCounts) {
        self.attempted += o.attempted;
        self.accepted += o.accepted;
        self.infeasible += o.infeasible;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStats {
    pub step_count: u64,
    pub moves: [MoveCounts; 3],
    pub n: Moments,
    pub e: Moments,
    pub histogram: JointHistogram,
}

impl ChainStats {
    pub fn new(m: usize, e_bin_width: f64) -> Self {
        ChainStats {
            step_count: 0,
            moves: [MoveCounts::default(); 3],
            n: Moments::default(),
            e: Moments::default(),
            histogram: JointHistogram::new(m, e_bin_width),
        }
    }

    /// Records one step: the move outcome and the state after it.
    #[inline]
    pub fn record(&mut self, kind: MoveKind, outcome: StepOutcome, state: &TestState) {
        self.step_count += 1;
        let c = &mut self.moves[kind.index()];
        c.attempted += 1;
        match outcome {
            StepOutcome::Accepted => c.accepted += 1,
            StepOutcome::Infeasible => c.infeasible += 1,
            StepOutcome::Rejected => {}
        }
        let n = state.n();
        let e = state.e_value();
        self.n.push(n as f64);
        self.e.push(e);
        self.histogram.add(n, e, 1);
    }

    pub fn counts(&self, kind: MoveKind) -> MoveCounts {
        self.moves[kind.index()]
    }

    pub fn accepted(&self) -> u64 {
        self.moves.iter().map(|c| c.accepted).sum()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.step_count == 0 {
            0.0
        } else {
            self.accepted() as f64 / self.step_count as f64
        }
    }

    /// Post-hoc reduction of an independent chain's statistics.
    pub fn merge(&mut self, other: &ChainStats) {
        self.step_count += other.step_count;
        for (a, b) in self.moves.iter_mut().zip(&other.moves) {
            a.merge(b);
        }
        self.n.merge(&other.n);
        self.e.merge(&other.e);
        self.histogram.merge(&other.histogram);
    }

    pub fn summary(&self) -> ChainSummary {
        ChainSummary {
            step_count: self.step_count,
            replace: self.moves[0],
            remove: self.moves[1],
            add: self.moves[2],
            acceptance_rate: self.acceptance_rate(),
            mean_n: self.n.mean,
            mean_e: self.e.mean,
            sd_n: self.n.std_dev(),
            sd_e: self.e.std_dev(),
            e_bin_width: self.histogram.e_bin_width(),
            histogram: self
                .histogram
                .cells()
                .map(|(n, bin, count)| HistogramCell {
                    n,
                    e_bin_lo: bin as f64 * self.histogram.e_bin_width(),
                    count,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCell {
    #[serde(rename = "N")]
    pub n: usize,
    pub e_bin_lo: f64,
    pub count: u64,
}

/// JSON form of [`ChainStats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub step_count: u64,
    pub replace: MoveCounts,
    pub remove: MoveCounts,
    pub add: MoveCounts,
    pub acceptance_rate: f64,
    pub mean_n: f64,
    pub mean_e: f64,
    pub sd_n: f64,
    pub sd_e: f64,
    pub e_bin_width: f64,
    pub histogram: Vec<HistogramCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub members: Vec<usize>,
    pub e: f64,
    pub first_step: u64,
}

/// Distinct visited tests with `E <= threshold`.
#[derive(Debug, Clone)]
pub struct SolutionArchive {
    threshold: f64,
    capacity: usize,
    entries: HashMap<Vec<usize>, (f64, u64)>,
    dropped: u64,
}

/// Default cap on stored solutions.
pub const DEFAULT_ARCHIVE_CAPACITY: usize = 100_000;

impl SolutionArchive {
    pub fn new(threshold: f64) -> Self {
        Self::with_capacity(threshold, DEFAULT_ARCHIVE_CAPACITY)
    }

    pub fn with_capacity(threshold: f64, capacity: usize) -> Self {
        SolutionArchive {
            threshold,
            capacity,
            entries: HashMap::new(),
            dropped: 0,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// New solutions seen after the archive filled up.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Offers a state; returns true if it was newly stored.
    pub fn offer(&mut self, state: &TestState, step: u64) -> bool {
        if state.e_value() > self.threshold || self.entries.contains_key(state.members()) {
            return false;
        }
        if self.entries.len() >= self.capacity {
            self.dropped += 1;
            return false;
        }
        self.entries
            .insert(state.members().to_vec(), (state.e_value(), step));
        true
    }

    pub fn contains(&self, members: &[usize]) -> bool {
        self.entries.contains_key(members)
    }

    /// Entries ordered by `E`, then by member list.
    pub fn sorted(&self) -> Vec<Solution> {
        let mut out: Vec<Solution> = self
            .entries
            .iter()
            .map(|(m, &(e, first_step))| Solution {
                members: m.clone(),
                e,
                first_step,
            })
            .collect();
        out.sort_by(|x, y| x.e.total_cmp(&y.e).then_with(|| x.members.cmp(&y.members)));
        out
    }

    pub fn merge(&mut self, other: &SolutionArchive) {
        if other.threshold != self.threshold {
            log::warn!(
                "merging archives with thresholds {} and {}",
                self.threshold,
                other.threshold
            );
        }
        for s in other.sorted() {
            if self.entries.contains_key(&s.members) {
                continue;
            }
            if self.entries.len() >= self.capacity {
                self.dropped += 1;
                continue;
            }
            self.entries.insert(s.members, (s.e, s.first_step));
        }
        self.dropped += other.dropped;
    }

    pub fn summary(&self) -> ArchiveSummary {
        ArchiveSummary {
            threshold: self.threshold,
            count: self.entries.len(),
            dropped: self.dropped,
            entries: self.sorted(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSummary {
    pub threshold: f64,
    pub count: usize,
    pub dropped: u64,
    pub entries: Vec<Solution>,
}

impl ArchiveSummary {
    pub fn check(&self) -> Result<()> {
        match self.entries.iter().find(|s| s.e > self.threshold) {
            Some(s) => Err(Error::InvalidArgument(format!(
                "archived solution with E = {} above threshold {}",
                s.e, self.threshold
            ))),
            None => Ok(()),
        }
    }
}
