//! Verification metrics for gridded ensemble forecasts: latitude-weighted
//! RMSE and anomaly correlation of the ensemble mean, pointwise ensemble
//! CRPS, spread, spread-skill ratio, Brier scores against thresholds, and
//! normalized-difference comparators.
//!
//! All spatial reductions take per-row latitude weights normalized to unit
//! mean, so uniform weights reproduce the unweighted definitions exactly.
//! Aggregation over a case set is the caller's job via [`MetricAccumulator`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, LatWeights};
use crate::losses::{crps_pointwise, CrpsEstimator};

/// An ensemble forecast: members × lead steps × channels on one grid.
///
/// `data` is indexed `[member][lead][channel][lat][lon]`, flattened
/// row-major in that order. Values are in physical (de-standardized) units.
#[derive(Debug, Clone)]
pub struct EnsembleForecast {
    pub members: usize,
    pub lead_steps: usize,
    pub channels: Vec<String>,
    pub grid: GridSpec,
    pub step_hours: u32,
    /// Index of the initialization frame in the originating frame sequence.
    pub init_index: usize,
    pub data: Vec<f64>,
}

impl EnsembleForecast {
    pub fn zeroed(
        members: usize,
        lead_steps: usize,
        channels: Vec<String>,
        grid: GridSpec,
        step_hours: u32,
        init_index: usize,
    ) -> Self {
        let len = members * lead_steps * channels.len() * grid.len();
        EnsembleForecast {
            members,
            lead_steps,
            channels,
            grid,
            step_hours,
            init_index,
            data: vec![0.0; len],
        }
    }

    fn slice_offset(&self, member: usize, lead: usize, channel: usize) -> usize {
        ((member * self.lead_steps + lead) * self.channels.len() + channel) * self.grid.len()
    }

    /// One H×W slice for (member, lead 0-based, channel).
    pub fn slice(&self, member: usize, lead: usize, channel: usize) -> &[f64] {
        let o = self.slice_offset(member, lead, channel);
        &self.data[o..o + self.grid.len()]
    }

    pub fn slice_mut(&mut self, member: usize, lead: usize, channel: usize) -> &mut [f64] {
        let o = self.slice_offset(member, lead, channel);
        let n = self.grid.len();
        &mut self.data[o..o + n]
    }

    /// Ensemble mean over members for one (lead, channel).
    pub fn ensemble_mean(&self, lead: usize, channel: usize) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n];
        for m in 0..self.members {
            let s = self.slice(m, lead, channel);
            for (o, v) in out.iter_mut().zip(s) {
                *o += v;
            }
        }
        let inv = 1.0 / self.members as f64;
        for o in &mut out {
            *o *= inv;
        }
        out
    }

    pub fn member_slices(&self, lead: usize, channel: usize) -> Vec<&[f64]> {
        (0..self.members)
            .map(|m| self.slice(m, lead, channel))
            .collect()
    }
}

fn check_shape(w: &LatWeights, nlon: usize, len: usize) -> Result<usize> {
    let nlat = w.len();
    if nlon == 0 || nlat * nlon != len {
        return Err(Error::shape(
            format!("{nlat}x{nlon} field"),
            format!("{len} values"),
        ));
    }
    Ok(nlat)
}

/// Latitude-weighted spatial mean of a per-gridpoint quantity.
fn weighted_mean(values: impl Iterator<Item = f64>, w: &LatWeights, nlon: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (idx, v) in values.enumerate() {
        sum += w.get(idx / nlon) * v;
        count += 1;
    }
    sum / count as f64
}

/// Latitude-weighted RMSE of a forecast slice against truth.
pub fn rmse(forecast: &[f64], truth: &[f64], w: &LatWeights, nlon: usize) -> Result<f64> {
    check_shape(w, nlon, forecast.len())?;
    if truth.len() != forecast.len() {
        return Err(Error::shape(
            format!("{} values", forecast.len()),
            format!("{}", truth.len()),
        ));
    }
    let mse = weighted_mean(
        forecast
            .iter()
            .zip(truth)
            .map(|(f, t)| (f - t) * (f - t)),
        w,
        nlon,
    );
    Ok(mse.sqrt())
}

/// Latitude-weighted anomaly correlation against a climatological mean.
pub fn acc(
    forecast: &[f64],
    truth: &[f64],
    clim_mean: &[f64],
    w: &LatWeights,
    nlon: usize,
) -> Result<f64> {
    check_shape(w, nlon, forecast.len())?;
    if truth.len() != forecast.len() || clim_mean.len() != forecast.len() {
        return Err(Error::shape(
            format!("{} values", forecast.len()),
            format!("truth {}, climatology {}", truth.len(), clim_mean.len()),
        ));
    }
    let mut num = 0.0;
    let mut var_f = 0.0;
    let mut var_t = 0.0;
    for idx in 0..forecast.len() {
        let a = w.get(idx / nlon);
        let fa = forecast[idx] - clim_mean[idx];
        let ta = truth[idx] - clim_mean[idx];
        num += a * fa * ta;
        var_f += a * fa * fa;
        var_t += a * ta * ta;
    }
    if var_f <= 0.0 {
        return Err(Error::UndefinedAcc("forecast"));
    }
    if var_t <= 0.0 {
        return Err(Error::UndefinedAcc("truth"));
    }
    Ok(num / (var_f * var_t).sqrt())
}

/// Latitude-weighted spatial mean of pointwise ensemble CRPS.
pub fn crps_field(
    members: &[&[f64]],
    truth: &[f64],
    w: &LatWeights,
    nlon: usize,
    estimator: CrpsEstimator,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::invalid("CRPS needs at least one member"));
    }
    check_shape(w, nlon, truth.len())?;
    for m in members {
        if m.len() != truth.len() {
            return Err(Error::shape(
                format!("{} values", truth.len()),
                format!("{}", m.len()),
            ));
        }
    }
    let mut vals = vec![0.0; members.len()];
    let mut sum = 0.0;
    for (idx, t) in truth.iter().enumerate() {
        for (v, m) in vals.iter_mut().zip(members) {
            *v = m[idx];
        }
        sum += w.get(idx / nlon) * crps_pointwise(&vals, *t, estimator)?;
    }
    Ok(sum / truth.len() as f64)
}

/// Square root of the latitude-weighted mean per-gridpoint ensemble
/// variance (unbiased, N−1 divisor).
pub fn spread(members: &[&[f64]], w: &LatWeights, nlon: usize) -> Result<f64> {
    let n = members.len();
    if n < 2 {
        return Err(Error::invalid("spread needs at least two members"));
    }
    let len = members[0].len();
    check_shape(w, nlon, len)?;
    for m in members {
        if m.len() != len {
            return Err(Error::shape(
                format!("{len} values"),
                format!("{}", m.len()),
            ));
        }
    }
    let mean_var = weighted_mean(
        (0..len).map(|idx| {
            let mean = members.iter().map(|m| m[idx]).sum::<f64>() / n as f64;
            members
                .iter()
                .map(|m| (m[idx] - mean) * (m[idx] - mean))
                .sum::<f64>()
                / (n - 1) as f64
        }),
        w,
        nlon,
    );
    Ok(mean_var.sqrt())
}

/// Spread-skill ratio.
pub fn ssr(spread: f64, rmse: f64) -> Result<f64> {
    if rmse <= 0.0 {
        return Err(Error::UndefinedSsr);
    }
    Ok(spread / rmse)
}

/// Which side of the threshold counts as the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdDirection {
    Above,
    Below,
}

/// Event threshold: one value everywhere, or one per grid point (e.g. a
/// climatological percentile field).
#[derive(Debug, Clone, Copy)]
pub enum Threshold<'a> {
    Scalar(f64),
    Field(&'a [f64]),
}

impl Threshold<'_> {
    fn at(&self, idx: usize) -> f64 {
        match self {
            Threshold::Scalar(v) => *v,
            Threshold::Field(f) => f[idx],
        }
    }
}

/// Latitude-weighted Brier score for threshold exceedance.
///
/// Forecast probability is the fraction of members strictly beyond the
/// threshold in the given direction; the outcome is whether truth is.
pub fn brier(
    members: &[&[f64]],
    truth: &[f64],
    threshold: Threshold,
    direction: ThresholdDirection,
    w: &LatWeights,
    nlon: usize,
) -> Result<f64> {
    let n = members.len();
    if n == 0 {
        return Err(Error::invalid("Brier score needs at least one member"));
    }
    check_shape(w, nlon, truth.len())?;
    if let Threshold::Field(f) = threshold {
        if f.len() != truth.len() {
            return Err(Error::shape(
                format!("{} values", truth.len()),
                format!("threshold field {}", f.len()),
            ));
        }
    }
    let beyond = |x: f64, t: f64| match direction {
        ThresholdDirection::Above => x > t,
        ThresholdDirection::Below => x < t,
    };
    let bs = weighted_mean(
        (0..truth.len()).map(|idx| {
            let t = threshold.at(idx);
            let p = members.iter().filter(|m| beyond(m[idx], t)).count() as f64 / n as f64;
            let o = if beyond(truth[idx], t) { 1.0 } else { 0.0 };
            (p - o) * (p - o)
        }),
        w,
        nlon,
    );
    Ok(bs)
}

/// Flavor of normalized difference between two scalar metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffKind {
    /// (a − b) / b, negative is better (RMSE, CRPS, spread, Brier).
    RmseLike,
    /// (a − b) / (1 − b), positive is better.
    AccLike,
    /// Same arithmetic as RmseLike.
    CrpsLike,
}

/// Normalized difference of metric `a` against baseline `b`.
pub fn normalized_diff(metric_a: f64, metric_b: f64, kind: DiffKind) -> Result<f64> {
    match kind {
        DiffKind::RmseLike | DiffKind::CrpsLike => {
            if metric_b <= 0.0 {
                return Err(Error::invalid(
                    "normalized difference needs a positive baseline",
                ));
            }
            Ok((metric_a - metric_b) / metric_b)
        }
        DiffKind::AccLike => {
            if (1.0 - metric_b).abs() < 1e-300 {
                return Err(Error::invalid(
                    "normalized ACC difference undefined for baseline 1",
                ));
            }
            Ok((metric_a - metric_b) / (1.0 - metric_b))
        }
    }
}

/// Per-case metric values for one (variable, lead) cell.
#[derive(Debug, Clone, Default)]
pub struct CaseMetrics {
    pub rmse: Option<f64>,
    pub acc: Option<f64>,
    pub crps: Option<f64>,
    pub spread: Option<f64>,
    pub brier: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default)]
struct CellSums {
    rmse: (f64, usize),
    acc: (f64, usize),
    crps: (f64, usize),
    spread: (f64, usize),
    brier: BTreeMap<String, (f64, usize)>,
}

/// Accumulates per-case metrics into case-set means; merges associatively.
///
/// Each metric is averaged over the cases that reported it; SSR is derived
/// from the averaged spread and RMSE at finalization.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    cells: BTreeMap<(String, u32), CellSums>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_case(&mut self, variable: &str, lead_hours: u32, m: CaseMetrics) {
        let cell = self
            .cells
            .entry((variable.to_string(), lead_hours))
            .or_default();
        let push = |slot: &mut (f64, usize), v: Option<f64>| {
            if let Some(v) = v {
                slot.0 += v;
                slot.1 += 1;
            }
        };
        push(&mut cell.rmse, m.rmse);
        push(&mut cell.acc, m.acc);
        push(&mut cell.crps, m.crps);
        push(&mut cell.spread, m.spread);
        for (k, v) in m.brier {
            let slot = cell.brier.entry(k).or_insert((0.0, 0));
            slot.0 += v;
            slot.1 += 1;
        }
    }

    pub fn merge(&mut self, other: MetricAccumulator) {
        for (key, sums) in other.cells {
            let cell = self.cells.entry(key).or_default();
            for (a, b) in [
                (&mut cell.rmse, sums.rmse),
                (&mut cell.acc, sums.acc),
                (&mut cell.crps, sums.crps),
                (&mut cell.spread, sums.spread),
            ] {
                a.0 += b.0;
                a.1 += b.1;
            }
            for (k, v) in sums.brier {
                let slot = cell.brier.entry(k).or_insert((0.0, 0));
                slot.0 += v.0;
                slot.1 += v.1;
            }
        }
    }

    /// Case-set means per (variable, lead), with SSR derived where both
    /// spread and RMSE are present and RMSE > 0.
    pub fn finalize(&self) -> Vec<crate::report::MetricRow> {
        let mean = |(sum, n): (f64, usize)| if n > 0 { Some(sum / n as f64) } else { None };
        self.cells
            .iter()
            .map(|((variable, lead_hours), cell)| {
                let rmse = mean(cell.rmse);
                let spread = mean(cell.spread);
                let ssr = match (spread, rmse) {
                    (Some(s), Some(r)) if r > 0.0 => Some(s / r),
                    _ => None,
                };
                crate::report::MetricRow {
                    variable: variable.clone(),
                    lead_hours: *lead_hours,
                    rmse,
                    acc: mean(cell.acc),
                    crps: mean(cell.crps),
                    spread,
                    ssr,
                    brier: cell
                        .brier
                        .iter()
                        .filter_map(|(k, v)| mean(*v).map(|m| (k.clone(), m)))
                        .collect(),
                    normalized: BTreeMap::new(),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{latitude_weights, GridSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> LatWeights {
        LatWeights::uniform(n)
    }

    #[test]
    fn rmse_identity_and_offset() {
        let w = uniform(2);
        let f = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(rmse(&f, &f, &w, 2).unwrap(), 0.0);
        let t: Vec<f64> = f.iter().map(|v| v - 2.0).collect();
        assert!((rmse(&f, &t, &w, 2).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rmse_weighted_two_rows() {
        // lats {0, 60}: weights {4/3, 2/3}; per-row errors {1, 0}
        let g = GridSpec::new(2, 3, 0.0, 60.0, 0.0, 120.0).unwrap();
        let w = latitude_weights(&g).unwrap();
        let f = vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let t = vec![0.0; 6];
        let r = rmse(&f, &t, &w, 3).unwrap();
        assert!((r - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((r - 0.8165).abs() < 1e-4);
    }

    #[test]
    fn acc_perfect_and_anti() {
        let w = uniform(2);
        let clim = vec![10.0, 10.0, 10.0, 10.0];
        let anom = vec![1.0, -2.0, 0.5, 0.5];
        let f: Vec<f64> = clim.iter().zip(&anom).map(|(c, a)| c + a).collect();
        assert!((acc(&f, &f, &clim, &w, 2).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = clim.iter().zip(&anom).map(|(c, a)| c - a).collect();
        assert!((acc(&f, &neg, &clim, &w, 2).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn acc_orthogonal_anomalies() {
        // on a 2x2 grid with uniform weights, anomalies (1,1,-1,-1) and
        // (1,-1,1,-1) have zero inner product
        let w = uniform(2);
        let clim = vec![0.0; 4];
        let f = vec![1.0, 1.0, -1.0, -1.0];
        let t = vec![1.0, -1.0, 1.0, -1.0];
        assert!(acc(&f, &t, &clim, &w, 2).unwrap().abs() < 1e-14);
    }

    #[test]
    fn acc_zero_variance_is_error() {
        let w = uniform(1);
        let clim = vec![1.0, 1.0];
        let flat = vec![1.0, 1.0];
        let t = vec![2.0, 0.0];
        assert!(matches!(
            acc(&flat, &t, &clim, &w, 2),
            Err(Error::UndefinedAcc("forecast"))
        ));
    }

    #[test]
    fn acc_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = GridSpec::new(3, 4, -30.0, 30.0, 0.0, 90.0).unwrap();
        let w = latitude_weights(&g).unwrap();
        let clim: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = acc(&f, &t, &clim, &w, 4).unwrap();

        // rescale both anomaly fields by the same positive factor
        let k = 2.5;
        let f2: Vec<f64> = f.iter().zip(&clim).map(|(v, c)| c + k * (v - c)).collect();
        let t2: Vec<f64> = t.iter().zip(&clim).map(|(v, c)| c + k * (v - c)).collect();
        assert!((acc(&f2, &t2, &clim, &w, 4).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn crps_field_matches_integration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=16usize);
            let members: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y = rng.gen_range(-3.0..3.0);
            let est = crps_pointwise(&members, y, CrpsEstimator::Empirical).unwrap();
            let oracle = crps_by_integration(&members, y);
            assert!(
                (est - oracle).abs() < 1e-6,
                "n={n}: estimator {est} vs integral {oracle}"
            );
        }
    }

    /// Quadrature of [F(z) − H(y ≤ z)]² over z, independent of the
    /// closed-form estimator: midpoint samples between consecutive
    /// breakpoints of the step integrand.
    fn crps_by_integration(members: &[f64], y: f64) -> f64 {
        let mut bps: Vec<f64> = members.to_vec();
        bps.push(y);
        bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = members.len() as f64;
        let mut total = 0.0;
        for pair in bps.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b <= a {
                continue;
            }
            let sub = 8;
            let h = (b - a) / sub as f64;
            for s in 0..sub {
                let z = a + (s as f64 + 0.5) * h;
                let f = members.iter().filter(|&&x| x <= z).count() as f64 / n;
                let step = if y <= z { 1.0 } else { 0.0 };
                total += (f - step) * (f - step) * h;
            }
        }
        total
    }

    #[test]
    fn spread_reference_values() {
        let w = uniform(1);
        let a = vec![0.0, 0.0];
        let b = vec![2.0, 2.0];
        let s = spread(&[&a, &b], &w, 2).unwrap();
        assert!((s - 2.0f64.sqrt()).abs() < 1e-12);

        let same = vec![1.0, 1.0];
        assert_eq!(spread(&[&same, &same], &w, 2).unwrap(), 0.0);
        assert!(spread(&[&same], &w, 2).is_err());
    }

    #[test]
    fn spread_of_standard_normal_sample() {
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let members: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal)])
            .collect();
        let refs: Vec<&[f64]> = members.iter().map(|m| m.as_slice()).collect();
        let s = spread(&refs, &uniform(1), 1).unwrap();
        assert!((0.97..=1.03).contains(&s), "spread {s}");
    }

    #[test]
    fn ssr_values() {
        assert!((ssr(2.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((ssr(1.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((ssr(3.0, 2.0).unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(ssr(1.0, 0.0), Err(Error::UndefinedSsr)));
    }

    #[test]
    fn brier_reference_values() {
        let w = uniform(1);
        let t = Threshold::Scalar(5.0);
        let above = ThresholdDirection::Above;

        let hi = vec![6.0];
        let members: Vec<&[f64]> = vec![&hi, &hi, &hi, &hi];
        assert_eq!(brier(&members, &hi, t, above, &w, 1).unwrap(), 0.0);

        let lo = vec![4.0];
        let three_of_four: Vec<&[f64]> = vec![&hi, &hi, &hi, &lo];
        let bs = brier(&three_of_four, &hi, t, above, &w, 1).unwrap();
        assert!((bs - 0.0625).abs() < 1e-15);

        let none: Vec<&[f64]> = vec![&lo, &lo];
        assert_eq!(brier(&none, &hi, t, above, &w, 1).unwrap(), 1.0);
    }

    #[test]
    fn normalized_diff_values() {
        assert!((normalized_diff(0.9, 1.0, DiffKind::RmseLike).unwrap() + 0.1).abs() < 1e-12);
        assert!((normalized_diff(0.8, 0.6, DiffKind::AccLike).unwrap() - 0.5).abs() < 1e-12);
        for kind in [DiffKind::RmseLike, DiffKind::CrpsLike, DiffKind::AccLike] {
            assert_eq!(normalized_diff(0.4, 0.4, kind).unwrap(), 0.0);
        }
        assert!(normalized_diff(1.0, 0.0, DiffKind::RmseLike).is_err());
        assert!(normalized_diff(0.5, 1.0, DiffKind::AccLike).is_err());
    }

    #[test]
    fn accumulator_merge_is_associative() {
        let case = |v: f64| CaseMetrics {
            rmse: Some(v),
            crps: Some(v * 0.5),
            spread: Some(v * 0.25),
            ..Default::default()
        };
        let mut a = MetricAccumulator::new();
        a.add_case("x", 6, case(1.0));
        let mut b = MetricAccumulator::new();
        b.add_case("x", 6, case(3.0));
        let mut c = MetricAccumulator::new();
        c.add_case("x", 12, case(2.0));

        let mut ab_c = a.clone();
        ab_c.merge(b.clone());
        ab_c.merge(c.clone());
        let mut a_bc = a.clone();
        let mut bc = b.clone();
        bc.merge(c.clone());
        a_bc.merge(bc);

        let rows1 = ab_c.finalize();
        let rows2 = a_bc.finalize();
        assert_eq!(rows1.len(), rows2.len());
        for (r1, r2) in rows1.iter().zip(&rows2) {
            assert_eq!(r1.rmse, r2.rmse);
            assert_eq!(r1.ssr, r2.ssr);
        }
        // ssr = mean spread / mean rmse
        let row = &rows1[0];
        assert!((row.ssr.unwrap() - 0.25).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn brier_bounds_and_permutation(
            vals in proptest::collection::vec(-5.0f64..5.0, 8),
            truth in -5.0f64..5.0,
            thr in -5.0f64..5.0,
        ) {
            let w = uniform(1);
            let rows: Vec<Vec<f64>> = vals.iter().map(|v| vec![*v]).collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let t = [truth];
            let bs = brier(&refs, &t, Threshold::Scalar(thr), ThresholdDirection::Above, &w, 1).unwrap();
            prop_assert!((0.0..=1.0).contains(&bs));

            let mut rev: Vec<&[f64]> = refs.clone();
            rev.reverse();
            let bs2 = brier(&rev, &t, Threshold::Scalar(thr), ThresholdDirection::Above, &w, 1).unwrap();
            prop_assert_eq!(bs, bs2);
        }

        #[test]
        fn uniform_weights_equal_unweighted(
            f in proptest::collection::vec(-10.0f64..10.0, 12),
            t in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let w = uniform(3);
            let r = rmse(&f, &t, &w, 4).unwrap();
            let plain = (f.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 12.0).sqrt();
            prop_assert!((r - plain).abs() < 1e-12);
        }
    }
}
