//! Per-solution reports with curves recomputed from the member items.

use serde::{Deserialize, Serialize};

use crate::bank::ItemBank;
use crate::error::Result;
use crate::gcmc::Solution;
use crate::irt::{distance, test_information, InfoCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberItem {
    pub index: usize,
    pub id: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            lo: lo + k as f64 * width,
            hi: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in values {
        let k = if width > 0.0 {
            (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        out[k].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub rank: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "E")]
    pub e: f64,
    pub members: Vec<MemberItem>,
    pub mean_a: f64,
    pub theta: Vec<f64>,
    pub test_info: Vec<f64>,
    pub target_info: Vec<f64>,
    pub a_histogram: Vec<HistogramBin>,
    pub b_histogram: Vec<HistogramBin>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

impl SolutionReport {
    /// Builds the report from the member list alone. Histogram edges span the
    /// whole bank so reports share bins.
    pub fn build(
        rank: usize,
        solution: &Solution,
        bank: &ItemBank,
        target: &InfoCurve,
        bins: usize,
    ) -> Result<Self> {
        let grid = *bank.grid();
        let items: Vec<_> = solution.members.iter().map(|&i| *bank.item(i)).collect();
        let curve = test_information(&items, grid);
        let e = distance(&curve, target)?;
        let members: Vec<MemberItem> = solution
            .members
            .iter()
            .zip(&items)
            .map(|(&index, it)| MemberItem {
                index,
                id: bank.ids()[index].clone(),
                a: it.a,
                b: it.b,
                c: it.c,
            })
            .collect();
        let a: Vec<f64> = items.iter().map(|it| it.a).collect();
        let b: Vec<f64> = items.iter().map(|it| it.b).collect();
        let (a_lo, a_hi) = range(bank.items().iter().map(|it| it.a));
        let (b_lo, b_hi) = range(bank.items().iter().map(|it| it.b));
        Ok(SolutionReport {
            rank,
            n: items.len(),
            e,
            mean_a: if a.is_empty() { f64::NAN } else { a.iter().sum::<f64>() / a.len() as f64 },
            members,
            theta: grid.points().collect(),
            test_info: curve.values().to_vec(),
            target_info: target.values().to_vec(),
            a_histogram: histogram(&a, a_lo, a_hi, bins),
            b_histogram: histogram(&b, b_lo, b_hi, bins),
        })
    }
}
