//! Density of tests over `(N, E)`: exact enumeration, brute-force Monte
//! Carlo counting, the Gibbs-weighted probability built from it, recovery
//! from chain histograms, and calibration of `T` and `mu` from its
//! logarithmic derivatives.
//!
//! Cells hold the natural log of the number of tests in the bin
//! (`Omega(N, E) * dE`); empty cells are `-inf`. Bins start at `E = 0`.

use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::ItemBank;
use crate::error::{Error, Result};
use crate::gcmc::{chain_rng, JointHistogram};
use crate::io::{read_json, write_csv, write_json};
use crate::irt::{squared_gap, InfoCurve};

/// Largest bank accepted by [`enumerate_exact`].
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    Exact,
    McCounted,
    RecoveredUpToC,
}

impl DensityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DensityKind::Exact => "exact",
            DensityKind::McCounted => "mc_counted",
            DensityKind::RecoveredUpToC => "recovered_up_to_c",
        }
    }
}

/// `ln C(m, n)`.
pub fn ln_binomial(m: usize, n: usize) -> f64 {
    if n > m {
        return f64::NEG_INFINITY;
    }
    let k = n.min(m - n);
    (1..=k)
        .map(|i| ((m - k + i) as f64 / i as f64).ln())
        .sum()
}

/// Exact `C(m, n)`; `None` on overflow.
pub fn binomial(m: usize, n: usize) -> Option<u128> {
    if n > m {
        return Some(0);
    }
    let k = n.min(m - n) as u128;
    let m = m as u128;
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc.checked_mul(m - k + i)? / i;
    }
    Some(acc)
}

/// `ln(sum(exp(xs)))`, `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Shared `(N, E-bin)` layout of density and probability histograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub m: usize,
    pub e_bin_width: f64,
    /// With a cap, bin `ceil(cap / dE)` collects every `E` at or above it.
    #[serde(default)]
    pub e_cap: Option<f64>,
}

impl Binning {
    pub fn new(m: usize, e_bin_width: f64, e_cap: Option<f64>) -> Result<Self> {
        if !(e_bin_width.is_finite() && e_bin_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bin width must be positive, got {e_bin_width}"
            )));
        }
        if let Some(cap) = e_cap {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "E cap must be positive, got {cap}"
                )));
            }
        }
        Ok(Binning {
            m,
            e_bin_width,
            e_cap,
        })
    }

    fn overflow_bin(&self) -> Option<usize> {
        self.e_cap.map(|c| (c / self.e_bin_width).ceil() as usize)
    }

    pub fn bin_of(&self, e: f64) -> usize {
        let raw = (e.max(0.0) / self.e_bin_width) as usize;
        match self.overflow_bin() {
            Some(o) => raw.min(o),
            None => raw,
        }
    }

    pub fn bin_lo(&self, bin: usize) -> f64 {
        bin as f64 * self.e_bin_width
    }

    /// Representative distance of a bin: its midpoint, or the lower edge for
    /// the overflow bin.
    pub fn bin_center(&self, bin: usize) -> f64 {
        if Some(bin) == self.overflow_bin() {
            self.bin_lo(bin)
        } else {
            (bin as f64 + 0.5) * self.e_bin_width
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityHistogram {
    binning: Binning,
    kind: DensityKind,
    seed: Option<u64>,
    log_counts: Vec<Vec<f64>>,
    exact_counts: Option<Vec<Vec<u64>>>,
}

impl DensityHistogram {
    /// Builds a histogram from per-row log counts (`rows[N][bin]`).
    pub fn from_log_counts(
        binning: Binning,
        kind: DensityKind,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if rows.len() != binning.m + 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} rows, got {}",
                binning.m + 1,
                rows.len()
            )));
        }
        if rows.iter().flatten().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidArgument("log counts must be finite or -inf".into()));
        }
        Ok(DensityHistogram {
            binning,
            kind,
            seed: None,
            log_counts: rows,
            exact_counts: None,
        })
    }

    fn from_exact_counts(binning: Binning, counts: Vec<Vec<u64>>) -> Self {
        let log_counts = counts
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&c| if c == 0 { f64::NEG_INFINITY } else { (c as f64).ln() })
                    .collect()
            })
            .collect();
        DensityHistogram {
            binning,
            kind: DensityKind::Exact,
            seed: None,
            log_counts,
            exact_counts: Some(counts),
        }
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    pub fn m(&self) -> usize {
        self.binning.m
    }

    pub fn e_bin_width(&self) -> f64 {
        self.binning.e_bin_width
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `ln` of the number of tests in cell `(n, bin)`.
    pub fn log_count(&self, n: usize, bin: usize) -> f64 {
        self.log_counts
            .get(n)
            .and_then(|r| r.get(bin))
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// `ln Omega(N, E)`, tests per unit distance.
    pub fn log_density(&self, n: usize, bin: usize) -> f64 {
        self.log_count(n, bin) - self.binning.e_bin_width.ln()
    }

    pub fn exact_count(&self, n: usize, bin: usize) -> Option<u64> {
        self.exact_counts
            .as_ref()
            .map(|c| c.get(n).and_then(|r| r.get(bin)).copied().unwrap_or(0))
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.log_counts
    }

    /// Exact integer row sums; `None` unless the histogram is exact.
    pub fn exact_row_sums(&self) -> Option<Vec<u64>> {
        self.exact_counts
            .as_ref()
            .map(|c| c.iter().map(|r| r.iter().sum()).collect())
    }

    /// `ln` of the row total at each `N`.
    pub fn log_row_sums(&self) -> Vec<f64> {
        self.log_counts
            .iter()
            .map(|r| log_sum_exp(r.iter().copied()))
            .collect()
    }

    /// Non-empty cells as `(N, bin, ln count)`.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.log_counts.iter().enumerate().flat_map(|(n, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v > f64::NEG_INFINITY)
                .map(move |(b, &v)| (n, b, v))
        })
    }

    /// Checks that row sums are `C(M, N)` and the total is `2^M` exactly.
    pub fn check_exact_normalization(&self) -> Result<()> {
        let sums = self.exact_row_sums().ok_or_else(|| {
            Error::InvalidArgument("normalization check needs an exact histogram".into())
        })?;
        let m = self.m();
        for (n, &s) in sums.iter().enumerate() {
            let expected = binomial(m, n).expect("M <= 20");
            if s as u128 != expected {
                return Err(Error::InvalidArgument(format!(
                    "row N = {n} sums to {s}, expected C({m}, {n}) = {expected}"
                )));
            }
        }
        let total: u128 = sums.iter().map(|&s| s as u128).sum();
        if total != 1u128 << m {
            return Err(Error::InvalidArgument(format!(
                "total {total} differs from 2^{m}"
            )));
        }
        Ok(())
    }

    pub fn to_file(&self) -> DensityFile {
        DensityFile {
            m: self.binning.m,
            e_bin_width: self.binning.e_bin_width,
            e_cap: self.binning.e_cap,
            kind: self.kind,
            seed: self.seed,
            cells: self
                .cells()
                .map(|(n, bin, log_count)| DensityCell {
                    n,
                    bin,
                    e_bin_lo: self.binning.bin_lo(bin),
                    log_count,
                    count: self.exact_count(n, bin),
                })
                .collect(),
        }
    }

    pub fn from_file(file: DensityFile) -> Result<Self> {
        let binning = Binning::new(file.m, file.e_bin_width, file.e_cap)?;
        let mut rows = vec![Vec::new(); file.m + 1];
        let mut exact = vec![Vec::new(); file.m + 1];
        let mut all_exact = file.kind == DensityKind::Exact;
        for c in &file.cells {
            if c.n > file.m {
                return Err(Error::InvalidArgument(format!(
                    "cell N = {} exceeds M = {}",
                    c.n, file.m
                )));
            }
            let row: &mut Vec<f64> = &mut rows[c.n];
            if row.len() <= c.bin {
                row.resize(c.bin + 1, f64::NEG_INFINITY);
            }
            row[c.bin] = c.log_count;
            match c.count {
                Some(k) => {
                    let er: &mut Vec<u64> = &mut exact[c.n];
                    if er.len() <= c.bin {
                        er.resize(c.bin + 1, 0);
                    }
                    er[c.bin] = k;
                }
                None => all_exact = false,
            }
        }
        let mut hist = if all_exact {
            DensityHistogram::from_exact_counts(binning, exact)
        } else {
            DensityHistogram::from_log_counts(binning, file.kind, rows)?
        };
        hist.seed = file.seed;
        Ok(hist)
    }

    /// JSON with metadata and sparse cells.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_file())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_file(read_json(path)?)
    }

    /// CSV with columns `N,e_bin_lo,value,kind`; `value` is `ln Omega`
    /// (log tests per unit distance).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let kind = self.kind.as_str();
        write_csv(
            path,
            &["N", "e_bin_lo", "value", "kind"],
            self.cells().map(|(n, bin, _)| {
                [
                    n.to_string(),
                    self.binning.bin_lo(bin).to_string(),
                    self.log_density(n, bin).to_string(),
                    kind.to_string(),
                ]
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCell {
    #[serde(rename = "N")]
    pub n: usize,
    pub bin: usize,
    pub e_bin_lo: f64,
    pub log_count: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
}

/// On-disk form of a [`DensityHistogram`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFile {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "dE")]
    pub e_bin_width: f64,
    #[serde(default)]
    pub e_cap: Option<f64>,
    pub kind: DensityKind,
    #[serde(default)]
    pub seed: Option<u64>,
    pub cells: Vec<DensityCell>,
}

fn subset_distance(bank: &ItemBank, target: &[f64], step: f64, buf: &mut [f64], items: impl Iterator<Item = usize>) -> f64 {
    buf.iter_mut().for_each(|v| *v = 0.0);
    for i in items {
        for (v, x) in buf.iter_mut().zip(bank.curve(i)) {
            *v += x;
        }
    }
    squared_gap(buf, target, step)
}

/// Distance of every subset, indexed by its member bit set.
pub fn subset_distances(bank: &ItemBank, target: &InfoCurve) -> Result<Vec<f64>> {
    let m = bank.len();
    if m > EXACT_LIMIT {
        return Err(Error::OracleCapacity {
            m,
            limit: EXACT_LIMIT,
        });
    }
    if bank.grid() != target.grid() {
        return Err(Error::GridMismatch("bank and target grids differ".into()));
    }
    let step = bank.grid().step();
    let t = target.values();
    let mut out = vec![0.0; 1usize << m];
    out.par_chunks_mut(1 << 12.min(m))
        .enumerate()
        .for_each(|(chunk, slots)| {
            let mut buf = vec![0.0; t.len()];
            let base = chunk * slots.len();
            for (k, slot) in slots.iter_mut().enumerate() {
                let mask = base + k;
                *slot = subset_distance(bank, t, step, &mut buf, (0..m).filter(|i| mask >> i & 1 == 1));
            }
        });
    Ok(out)
}

/// Bins the distance of every one of the `2^M` subsets.
pub fn enumerate_exact(
    bank: &ItemBank,
    target: &InfoCurve,
    e_bin_width: f64,
    e_cap: Option<f64>,
) -> Result<DensityHistogram> {
    let binning = Binning::new(bank.len(), e_bin_width, e_cap)?;
    let distances = subset_distances(bank, target)?;
    let mut counts: Vec<Vec<u64>> = vec![Vec::new(); bank.len() + 1];
    for (mask, &e) in distances.iter().enumerate() {
        let n = mask.count_ones() as usize;
        let bin = binning.bin_of(e);
        let row = &mut counts[n];
        if row.len() <= bin {
            row.resize(bin + 1, 0);
        }
        row[bin] += 1;
    }
    Ok(DensityHistogram::from_exact_counts(binning, counts))
}

/// Brute-force counting: `samples_per_n` uniform subsets for every `N`,
/// each row rescaled by `C(M, N) / samples_per_n`. Rows are independent
/// and use generator stream `N` of `seed`.
pub fn mc_count(
    bank: &ItemBank,
    target: &InfoCurve,
    samples_per_n: u64,
    e_bin_width: f64,
    e_cap: Option<f64>,
    seed: u64,
) -> Result<DensityHistogram> {
    if samples_per_n == 0 {
        return Err(Error::InvalidArgument("samples_per_n must be >= 1".into()));
    }
    if bank.grid() != target.grid() {
        return Err(Error::GridMismatch("bank and target grids differ".into()));
    }
    let binning = Binning::new(bank.len(), e_bin_width, e_cap)?;
    let m = bank.len();
    let step = bank.grid().step();
    let t = target.values();
    let rows: Vec<Vec<f64>> = (0..=m)
        .into_par_iter()
        .map(|n| {
            let mut rng = chain_rng(seed, n as u64);
            let mut buf = vec![0.0; t.len()];
            let mut counts: Vec<u64> = Vec::new();
            for _ in 0..samples_per_n {
                let picked = index::sample(&mut rng, m, n);
                let e = subset_distance(bank, t, step, &mut buf, picked.into_iter());
                let bin = binning.bin_of(e);
                if counts.len() <= bin {
                    counts.resize(bin + 1, 0);
                }
                counts[bin] += 1;
            }
            let scale = ln_binomial(m, n) - (samples_per_n as f64).ln();
            counts
                .into_iter()
                .map(|c| {
                    if c == 0 {
                        f64::NEG_INFINITY
                    } else {
                        (c as f64).ln() + scale
                    }
                })
                .collect()
        })
        .collect();
    let mut hist = DensityHistogram::from_log_counts(binning, DensityKind::McCounted, rows)?;
    hist.seed = Some(seed);
    Ok(hist)
}

/// Probability mass per `(N, E-bin)` cell; sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityHistogram {
    binning: Binning,
    mass: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionMoments {
    pub mean_n: f64,
    pub mean_e: f64,
    pub sd_n: f64,
    pub sd_e: f64,
}

impl ProbabilityHistogram {
    /// Normalised visit frequencies of a chain histogram.
    pub fn from_chain(hist: &JointHistogram) -> Result<Self> {
        let total = hist.total();
        if total == 0 {
            return Err(Error::InvalidArgument("empty chain histogram".into()));
        }
        let binning = Binning::new(hist.m(), hist.e_bin_width(), None)?;
        let mass = hist
            .rows()
            .iter()
            .map(|r| r.iter().map(|&c| c as f64 / total as f64).collect())
            .collect();
        Ok(ProbabilityHistogram { binning, mass })
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    pub fn mass(&self, n: usize, bin: usize) -> f64 {
        self.mass
            .get(n)
            .and_then(|r| r.get(bin))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().flatten().sum()
    }

    /// Marginal over `N`.
    pub fn n_marginal(&self) -> Vec<f64> {
        self.mass.iter().map(|r| r.iter().sum()).collect()
    }

    /// Cell with the largest mass (first in `(N, bin)` order on ties).
    pub fn mode(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_p = f64::NEG_INFINITY;
        for (n, row) in self.mass.iter().enumerate() {
            for (b, &p) in row.iter().enumerate() {
                if p > best_p {
                    best_p = p;
                    best = (n, b);
                }
            }
        }
        best
    }

    /// Moments using bin representatives for `E`.
    pub fn moments(&self) -> DistributionMoments {
        let (mut s, mut sn, mut se, mut snn, mut see) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (n, row) in self.mass.iter().enumerate() {
            let nf = n as f64;
            for (b, &p) in row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let e = self.binning.bin_center(b);
                s += p;
                sn += p * nf;
                se += p * e;
                snn += p * nf * nf;
                see += p * e * e;
            }
        }
        let mean_n = sn / s;
        let mean_e = se / s;
        DistributionMoments {
            mean_n,
            mean_e,
            sd_n: (snn / s - mean_n * mean_n).max(0.0).sqrt(),
            sd_e: (see / s - mean_e * mean_e).max(0.0).sqrt(),
        }
    }

    /// CSV with columns `N,e_bin_lo,p`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            &["N", "e_bin_lo", "p"],
            self.mass.iter().enumerate().flat_map(|(n, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(move |(b, p)| {
                        [n.to_string(), self.binning.bin_lo(b).to_string(), p.to_string()]
                    })
            }),
        )
    }
}

fn gibbs_log_weight(n: usize, e: f64, temperature: f64, mu: f64) -> f64 {
    (mu * n as f64 - e) / temperature
}

/// `p(N, E)` proportional to `Omega(N, E) exp((mu N - E) / T)`, normalised.
pub fn analytic_p(omega: &DensityHistogram, temperature: f64, mu: f64) -> Result<ProbabilityHistogram> {
    if omega.kind == DensityKind::RecoveredUpToC {
        return Err(Error::InvalidArgument(
            "analytic p needs an exact or counted density".into(),
        ));
    }
    if !(temperature.is_finite() && temperature > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need T > 0 and finite mu, got T = {temperature}, mu = {mu}"
        )));
    }
    let binning = omega.binning;
    let logw: Vec<Vec<f64>> = omega
        .log_counts
        .iter()
        .enumerate()
        .map(|(n, row)| {
            row.iter()
                .enumerate()
                .map(|(b, &lc)| lc + gibbs_log_weight(n, binning.bin_center(b), temperature, mu))
                .collect()
        })
        .collect();
    let max = logw.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights { temperature });
    }
    let mut mass: Vec<Vec<f64>> = logw
        .iter()
        .map(|r| r.iter().map(|&w| (w - max).exp()).collect())
        .collect();
    let total: f64 = mass.iter().flatten().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateWeights { temperature });
    }
    mass.iter_mut().flatten().for_each(|p| *p /= total);
    Ok(ProbabilityHistogram { binning, mass })
}

/// Divides the Gibbs factor out of a sampled distribution, leaving
/// `C * Omega` with an unknown constant `C`.
pub fn recover_omega(sim: &ProbabilityHistogram, temperature: f64, mu: f64) -> Result<DensityHistogram> {
    if !(temperature.is_finite() && temperature > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need T > 0 and finite mu, got T = {temperature}, mu = {mu}"
        )));
    }
    let binning = sim.binning;
    let rows = sim
        .mass
        .iter()
        .enumerate()
        .map(|(n, row)| {
            row.iter()
                .enumerate()
                .map(|(b, &p)| {
                    if p > 0.0 {
                        p.ln() - gibbs_log_weight(n, binning.bin_center(b), temperature, mu)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect();
    DensityHistogram::from_log_counts(binning, DensityKind::RecoveredUpToC, rows)
}

/// Finite-difference stencil for [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    /// Central-difference half step in `N`.
    pub n_step: usize,
    /// Central-difference half step in `E`, in bins.
    pub e_step_bins: usize,
    /// Cells averaged on each side in `E` before differencing (applied to
    /// `ln Omega`); zero disables smoothing.
    pub smooth_half_width: usize,
}

impl Stencil {
    /// `±1` in `N` and `E`; one-neighbour smoothing for counted histograms.
    pub fn default_for(kind: DensityKind) -> Self {
        Stencil {
            n_step: 1,
            e_step_bins: 1,
            smooth_half_width: if kind == DensityKind::McCounted { 1 } else { 0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub n_star: usize,
    pub e_star: f64,
    /// `d ln Omega / dN` at the point.
    pub alpha: f64,
    /// `d ln Omega / dE` at the point.
    pub beta: f64,
    /// `1 / beta`; absent when `beta <= 0`.
    pub temperature: Option<f64>,
    /// `-alpha / beta`; absent when `beta <= 0`.
    pub mu: Option<f64>,
    pub stencil: Stencil,
}

impl Calibration {
    pub fn usable(&self) -> bool {
        self.temperature.is_some()
    }

    /// `(T, mu)`, or an error when `beta <= 0` gives no usable temperature.
    pub fn temperature_and_mu(&self) -> Result<(f64, f64)> {
        match (self.temperature, self.mu) {
            (Some(t), Some(mu)) => Ok((t, mu)),
            _ => Err(Error::InsufficientSupport {
                n: self.n_star,
                e: self.e_star,
                detail: format!(
                    "d ln Omega / dE = {} is not positive; no usable temperature",
                    self.beta
                ),
            }),
        }
    }
}

/// `alpha` and `beta` as central differences of `ln Omega` at
/// `(n_star, e_star)`, giving `T = 1 / beta` and `mu = -alpha / beta`.
pub fn calibrate(
    omega: &DensityHistogram,
    n_star: usize,
    e_star: f64,
    stencil: Option<Stencil>,
) -> Result<Calibration> {
    let stencil = stencil.unwrap_or_else(|| Stencil::default_for(omega.kind));
    let insufficient = |detail: String| Error::InsufficientSupport {
        n: n_star,
        e: e_star,
        detail,
    };
    if stencil.n_step == 0 || stencil.e_step_bins == 0 {
        return Err(Error::InvalidArgument("stencil steps must be >= 1".into()));
    }
    let (dn, db, h) = (stencil.n_step, stencil.e_step_bins, stencil.smooth_half_width);
    let bin = omega.binning.bin_of(e_star);
    if n_star < dn || n_star + dn > omega.m() {
        return Err(insufficient(format!("N stencil leaves [0, {}]", omega.m())));
    }
    if bin < db + h {
        return Err(insufficient("E stencil reaches below zero".into()));
    }
    let smoothed = |n: usize, b: usize| -> Result<f64> {
        let mut acc = 0.0;
        for k in b - h..=b + h {
            let v = omega.log_count(n, k);
            if v == f64::NEG_INFINITY {
                return Err(insufficient(format!(
                    "empty cell at N = {n}, E bin starting {}",
                    omega.binning.bin_lo(k)
                )));
            }
            acc += v;
        }
        Ok(acc / (2 * h + 1) as f64)
    };
    let alpha = (smoothed(n_star + dn, bin)? - smoothed(n_star - dn, bin)?) / (2 * dn) as f64;
    let beta = (smoothed(n_star, bin + db)? - smoothed(n_star, bin - db)?)
        / (2.0 * db as f64 * omega.e_bin_width());
    let (temperature, mu) = if beta > 0.0 {
        (Some(1.0 / beta), Some(-alpha / beta))
    } else {
        (None, None)
    };
    Ok(Calibration {
        n_star,
        e_star,
        alpha,
        beta,
        temperature,
        mu,
        stencil,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaRatio {
    pub mu: f64,
    /// `ln(C Omega(mu = 0) / C Omega(mu))`; absent for rows without an estimate.
    pub log_ratio: Option<f64>,
    pub ratio: Option<f64>,
}

/// Ratios `C Omega(mu = 0) / C Omega(mu)` from `(mu, ln C Omega)` rows.
pub fn omega_ratio_report(rows: &[(f64, Option<f64>)]) -> Result<Vec<OmegaRatio>> {
    let zero = rows
        .iter()
        .find(|(mu, _)| *mu == 0.0)
        .and_then(|(_, v)| *v)
        .ok_or(Error::MissingZeroPotential)?;
    Ok(rows
        .iter()
        .map(|&(mu, v)| {
            let log_ratio = v.map(|v| zero - v);
            OmegaRatio {
                mu,
                log_ratio,
                ratio: log_ratio.map(f64::exp),
            }
        })
        .collect())
}
