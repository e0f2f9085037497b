//! Three-parameter logistic response model, information curves on a fixed
//! ability grid, target construction and the integrated squared distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One bank item: discrimination `a`, difficulty `b`, guessing `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ItemParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let item = ItemParams { a, b, c };
        if let Some((field, message)) = item.violations().into_iter().next() {
            return Err(Error::InvalidItem {
                row: 1,
                field,
                message,
            });
        }
        Ok(item)
    }

    /// Every broken invariant as `(field, message)`; empty for a valid item.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.a.is_finite() && self.a > 0.0) {
            out.push(("a", "a must be > 0".to_string()));
        }
        if !self.b.is_finite() {
            out.push(("b", "b must be finite".to_string()));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            out.push(("c", "c must be >= 0".to_string()));
        } else if self.c >= 1.0 {
            out.push(("c", "c must be < 1".to_string()));
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }

    /// Probability of a correct response at ability `theta`.
    pub fn prob_correct(&self, theta: f64) -> f64 {
        self.c + (1.0 - self.c) / (1.0 + (-self.a * (theta - self.b)).exp())
    }

    /// Fisher information of the item at ability `theta`.
    pub fn information(&self, theta: f64) -> f64 {
        let p = self.prob_correct(theta);
        let scaled = self.a * (p - self.c) / (1.0 - self.c);
        scaled * scaled * (1.0 - p) / p
    }
}

/// Equidistant ability grid `lo..=hi` with `n_points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    lo: f64,
    hi: f64,
    n_points: usize,
}

impl Default for ThetaGrid {
    fn default() -> Self {
        ThetaGrid {
            lo: -3.0,
            hi: 3.0,
            n_points: 61,
        }
    }
}

impl ThetaGrid {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidArgument(format!(
                "theta grid needs at least 2 points, got {n_points}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "theta grid bounds must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(ThetaGrid { lo, hi, n_points })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        // Pin the last node to `hi` exactly instead of accumulating steps.
        if i + 1 == self.n_points {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.point(i))
    }

    /// Composite trapezoidal integral of samples taken on this grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        trapezoid(values, self.step())
    }
}

pub(crate) fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => step * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

/// Squared-gap integral over pre-sampled curves; the hot path of the sampler.
#[inline]
pub(crate) fn squared_gap(test: &[f64], target: &[f64], step: f64) -> f64 {
    debug_assert_eq!(test.len(), target.len());
    let n = test.len();
    if n < 2 {
        return 0.0;
    }
    let mut inner = 0.0;
    for k in 1..n - 1 {
        let d = test[k] - target[k];
        inner += d * d;
    }
    let d0 = test[0] - target[0];
    let dn = test[n - 1] - target[n - 1];
    step * (inner + 0.5 * (d0 * d0 + dn * dn))
}

/// A function sampled on a [`ThetaGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoCurve {
    grid: ThetaGrid,
    values: Vec<f64>,
}

impl InfoCurve {
    pub fn new(grid: ThetaGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "curve has {} values but the grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(InfoCurve { grid, values })
    }

    pub fn zeros(grid: ThetaGrid) -> Self {
        InfoCurve {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn for_item(item: &ItemParams, grid: ThetaGrid) -> Self {
        InfoCurve {
            grid,
            values: grid.points().map(|t| item.information(t)).collect(),
        }
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Test information: the pointwise sum of item information over `items`.
pub fn test_information<'a, I>(items: I, grid: ThetaGrid) -> InfoCurve
where
    I: IntoIterator<Item = &'a ItemParams>,
{
    let mut curve = InfoCurve::zeros(grid);
    for item in items {
        for (v, t) in curve.values.iter_mut().zip(grid.points()) {
            *v += item.information(t);
        }
    }
    curve
}

/// How the absolute target information curve is specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    /// `base + amp * exp(-(theta - center)^2 / width_sq) / norm`; the shape
    /// parameters default to those of [`TargetSpec::standard_bump`].
    GaussianBump {
        base: f64,
        amp: f64,
        #[serde(default = "default_center")]
        center: f64,
        #[serde(default = "default_width_sq")]
        width_sq: f64,
        #[serde(default = "default_norm")]
        norm: f64,
    },
    /// Required standard error per grid point; the target is `1 / SE^2`.
    FromSe { se: Vec<f64> },
    /// Target information given directly per grid point.
    Tabulated { values: Vec<f64> },
}

fn default_center() -> f64 {
    1.5
}

fn default_width_sq() -> f64 {
    1.62
}

fn default_norm() -> f64 {
    0.9 * (2.0 * std::f64::consts::PI).sqrt()
}

impl TargetSpec {
    /// Bump centred at 1.5 with squared width 1.62 and normaliser 0.9 * sqrt(2 pi),
    /// the shape used for both reference experiments.
    pub fn standard_bump(base: f64, amp: f64) -> Self {
        TargetSpec::GaussianBump {
            base,
            amp,
            center: default_center(),
            width_sq: default_width_sq(),
            norm: default_norm(),
        }
    }

    pub fn to_curve(&self, grid: ThetaGrid) -> Result<InfoCurve> {
        target_from_spec(self, grid)
    }
}

pub fn target_from_spec(spec: &TargetSpec, grid: ThetaGrid) -> Result<InfoCurve> {
    match spec {
        TargetSpec::GaussianBump {
            base,
            amp,
            center,
            width_sq,
            norm,
        } => {
            if !(*width_sq > 0.0 && *norm != 0.0) {
                return Err(Error::InvalidArgument(
                    "gaussian bump needs width_sq > 0 and norm != 0".into(),
                ));
            }
            let values = grid
                .points()
                .map(|t| base + amp * (-(t - center).powi(2) / width_sq).exp() / norm)
                .collect::<Vec<_>>();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "gaussian bump produced non-finite values".into(),
                ));
            }
            InfoCurve::new(grid, values)
        }
        TargetSpec::FromSe { se } => {
            if let Some((index, &value)) = se
                .iter()
                .enumerate()
                .find(|(_, s)| !(s.is_finite() && **s > 0.0))
            {
                return Err(Error::NonPositiveStandardError { index, value });
            }
            InfoCurve::new(grid, se.iter().map(|s| 1.0 / (s * s)).collect())
        }
        TargetSpec::Tabulated { values } => {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "tabulated target has non-finite values".into(),
                ));
            }
            InfoCurve::new(grid, values.clone())
        }
    }
}

/// Integrated squared gap between a test curve and the target (trapezoidal rule).
pub fn distance(test_curve: &InfoCurve, target_curve: &InfoCurve) -> Result<f64> {
    if test_curve.grid != target_curve.grid {
        return Err(Error::GridMismatch(format!(
            "{:?} vs {:?}",
            test_curve.grid, target_curve.grid
        )));
    }
    Ok(squared_gap(
        &test_curve.values,
        &target_curve.values,
        test_curve.grid.step(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> ThetaGrid {
        ThetaGrid::default()
    }

    #[test]
    fn bump_shape_defaults() {
        let spec: TargetSpec = serde_json::from_str(r#"{"kind": "gaussian_bump", "base": 3, "amp": 7}"#).unwrap();
        assert_eq!(spec, TargetSpec::standard_bump(3.0, 7.0));
    }

    #[test]
    fn prob_correct_at_difficulty_and_limits() {
        let item = ItemParams::new(2.0, 0.0, 0.2).unwrap();
        assert!((item.prob_correct(0.0) - 0.6).abs() < 1e-15);
        assert!((item.prob_correct(60.0) - 1.0).abs() < 1e-15);
        assert!((item.prob_correct(-60.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn information_reference_values() {
        let item = ItemParams::new(2.0, 0.0, 0.0).unwrap();
        assert!((item.information(0.0) - 1.0).abs() < 1e-15);
        let item = ItemParams::new(2.0, 0.0, 0.2).unwrap();
        assert!((item.information(0.0) - 2.0 / 3.0).abs() < 1e-15);
        // mpmath, 30 digits: 5.43511720425148844594883022582e-5
        let item = ItemParams::new(1.5, 1.0, 0.2).unwrap();
        let expected = 5.435_117_204_251_488e-5;
        assert!((item.information(-3.0) - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn item_violations() {
        assert_eq!(
            ItemParams { a: 0.0, b: 0.0, c: 0.2 }.violations(),
            vec![("a", "a must be > 0".to_string())]
        );
        assert_eq!(
            ItemParams { a: 1.0, b: 0.0, c: 1.0 }.violations(),
            vec![("c", "c must be < 1".to_string())]
        );
        assert!(ItemParams::new(1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn grid_defaults() {
        let g = grid();
        assert_eq!(g.len(), 61);
        assert!((g.step() - 0.1).abs() < 1e-15);
        assert_eq!(g.point(0), -3.0);
        assert_eq!(g.point(60), 3.0);
        assert!(ThetaGrid::new(0.0, 0.0, 5).is_err());
        assert!(ThetaGrid::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn test_information_sums() {
        let g = grid();
        assert!(test_information([], g).values().iter().all(|&v| v == 0.0));
        let x = ItemParams::new(1.2, -0.5, 0.2).unwrap();
        let y = ItemParams::new(2.7, 1.1, 0.1).unwrap();
        let cx = InfoCurve::for_item(&x, g);
        assert_eq!(test_information([&x], g), cx);
        let cy = InfoCurve::for_item(&y, g);
        let both = test_information([&x, &y], g);
        for k in 0..g.len() {
            assert!((both.values()[k] - cx.values()[k] - cy.values()[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn targets() {
        let g = grid();
        let bump = TargetSpec::standard_bump(1.0, 3.0).to_curve(g).unwrap();
        // theta = 1.5 is node 45
        assert!((g.point(45) - 1.5).abs() < 1e-12);
        assert!((bump.values()[45] - 2.329_807_601_338_109).abs() < 1e-9);
        let bump = TargetSpec::standard_bump(3.0, 7.0).to_curve(g).unwrap();
        assert!((bump.values()[45] - 6.102_884_403_122_254).abs() < 1e-9);

        let se = TargetSpec::FromSe { se: vec![0.5; 61] }.to_curve(g).unwrap();
        assert!(se.values().iter().all(|&v| v == 4.0));

        let mut bad = vec![0.5; 61];
        bad[7] = 0.0;
        assert!(matches!(
            TargetSpec::FromSe { se: bad }.to_curve(g),
            Err(Error::NonPositiveStandardError { index: 7, .. })
        ));
        assert!(TargetSpec::Tabulated { values: vec![1.0; 60] }.to_curve(g).is_err());
    }

    #[test]
    fn distance_trivial_cases() {
        let g = grid();
        let one = InfoCurve::new(g, vec![1.0; 61]).unwrap();
        let zero = InfoCurve::zeros(g);
        assert_eq!(distance(&one, &one).unwrap(), 0.0);
        assert!((distance(&zero, &one).unwrap() - 6.0).abs() < 1e-12);
        for k in [0.5, 2.0, -3.0] {
            let shifted = InfoCurve::new(g, vec![1.0 + k; 61]).unwrap();
            assert!((distance(&shifted, &one).unwrap() - 6.0 * k * k).abs() < 1e-11);
        }
        let other = InfoCurve::zeros(ThetaGrid::new(-3.0, 3.0, 31).unwrap());
        assert!(matches!(distance(&other, &one), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let g = grid();
        let linear: Vec<f64> = g.points().map(|t| 2.5 * t + 1.0).collect();
        // integral of 2.5 t + 1 over [-3, 3] is 6
        assert!((g.integrate(&linear) - 6.0).abs() < 1e-12);
    }

    fn item() -> impl Strategy<Value = ItemParams> {
        (0.1f64..4.0, -4.0f64..4.0, 0.0f64..0.5).prop_map(|(a, b, c)| ItemParams { a, b, c })
    }

    proptest! {
        #[test]
        fn prob_monotone_and_bounded(it in item(), t1 in -5.0f64..5.0, dt in 0.01f64..2.0) {
            let p1 = it.prob_correct(t1);
            let p2 = it.prob_correct(t1 + dt);
            prop_assert!(p2 > p1);
            prop_assert!(p1 > it.c && p1 < 1.0);
        }

        #[test]
        fn zero_guessing_reduces_to_logistic(a in 0.1f64..4.0, b in -4.0f64..4.0, t in -3.0f64..3.0) {
            let it = ItemParams { a, b, c: 0.0 };
            let p = it.prob_correct(t);
            prop_assert!((it.information(t) - a * a * p * (1.0 - p)).abs() < 1e-12);
        }

        #[test]
        fn information_non_negative(it in item(), t in -6.0f64..6.0) {
            prop_assert!(it.information(t) >= 0.0);
        }

        #[test]
        fn additivity(xs in proptest::collection::vec(item(), 0..6), ys in proptest::collection::vec(item(), 0..6)) {
            let g = ThetaGrid::default();
            let all: Vec<_> = xs.iter().chain(ys.iter()).collect();
            let whole = test_information(all, g);
            let a = test_information(&xs, g);
            let b = test_information(&ys, g);
            for k in 0..g.len() {
                let sum = a.values()[k] + b.values()[k];
                prop_assert!((whole.values()[k] - sum).abs() <= 1e-12 * sum.max(1.0));
            }
        }

        #[test]
        fn distance_symmetric_nonnegative(xs in proptest::collection::vec(0.0f64..10.0, 61), ys in proptest::collection::vec(0.0f64..10.0, 61)) {
            let g = ThetaGrid::default();
            let x = InfoCurve::new(g, xs).unwrap();
            let y = InfoCurve::new(g, ys).unwrap();
            let dxy = distance(&x, &y).unwrap();
            prop_assert!(dxy >= 0.0);
            prop_assert_eq!(dxy, distance(&y, &x).unwrap());
            prop_assert_eq!(distance(&x, &x).unwrap(), 0.0);
        }
    }
}
