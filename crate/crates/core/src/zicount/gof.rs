//! Chi-square goodness of fit on the marginal count distribution.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::fit::ZIFit;
use crate::dataset::CountDataset;
use crate::error::{Error, Result};

/// Minimum expected frequency per pooled bin.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofBin {
    /// Smallest count in the bin.
    pub from: u64,
    /// Largest count in the bin; `None` for the open right tail.
    pub to: Option<u64>,
    pub observed: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub statistic: f64,
    pub df: usize,
    /// Upper-tail probability; `None` when no degrees of freedom remain.
    pub p_value: Option<f64>,
    pub bins: Vec<GofBin>,
}

/// `Σ (O − E)² / E` over a binned table.
pub fn chisq_statistic(observed: &[f64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() {
        return Err(Error::LengthMismatch {
            what: "observed vs expected bins".into(),
            expected: expected.len(),
            actual: observed.len(),
        });
    }
    if let Some(e) = expected.iter().find(|&&e| e.is_nan() || e <= 0.0) {
        return Err(Error::domain(format!("expected frequency must be positive, got {e}")));
    }
    Ok(observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum())
}

/// Statistic, degrees of freedom and p-value for an already binned table.
pub fn chisq_from_table(observed: &[f64], expected: &[f64], n_fitted: usize) -> Result<(f64, usize, Option<f64>)> {
    if observed.len() < 2 {
        return Err(Error::TooFewBins(observed.len()));
    }
    let stat = chisq_statistic(observed, expected)?;
    let df = (observed.len() - 1).saturating_sub(n_fitted);
    let p = (df > 0).then(|| {
        let dist = ChiSquared::new(df as f64).expect("df is positive");
        dist.sf(stat).clamp(0.0, 1.0)
    });
    Ok((stat, df, p))
}

/// Pools the per-count table `0, 1, 2, …` left to right. A bin closes once
/// its expected frequency reaches [`MIN_EXPECTED`] and the expected mass
/// still to come does too; the remainder forms an open right tail.
/// `expected` may be shorter than the full support: `total` is the sum of
/// all expected frequencies including the unlisted tail.
pub fn pool_bins(observed: &[f64], expected: &[f64], total: f64) -> Vec<GofBin> {
    let len = observed.len().max(expected.len());
    let mut bins = Vec::new();
    let (mut from, mut o_acc, mut e_acc, mut e_done) = (0u64, 0.0, 0.0, 0.0);
    for y in 0..len {
        o_acc += observed.get(y).copied().unwrap_or(0.0);
        e_acc += expected.get(y).copied().unwrap_or(0.0);
        if e_acc >= MIN_EXPECTED && total - e_done - e_acc >= MIN_EXPECTED {
            bins.push(GofBin {
                from,
                to: Some(y as u64),
                observed: o_acc,
                expected: e_acc,
            });
            e_done += e_acc;
            from = y as u64 + 1;
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    let tail_obs: f64 = o_acc;
    let tail_exp = total - e_done;
    match bins.last_mut() {
        Some(last) if tail_exp < MIN_EXPECTED => {
            last.to = None;
            last.observed += tail_obs;
            last.expected += tail_exp;
        }
        _ => bins.push(GofBin {
            from,
            to: None,
            observed: tail_obs,
            expected: tail_exp,
        }),
    }
    bins
}

/// Observed against fitted marginal frequencies of each count value.
pub fn gof_chisq(fit: &ZIFit, data: &CountDataset) -> Result<GofResult> {
    let max_obs = data.max_count();
    let mut observed = vec![0.0; max_obs as usize + 1];
    for c in data.counts() {
        observed[c as usize] += 1.0;
    }
    let total = data.n_obs() as f64;
    let mut max_y = max_obs.max(16);
    let mut expected = fit.expected_frequencies(data, max_y)?;
    // extend until the unlisted tail is negligible
    while total - expected.iter().sum::<f64>() > 1e-6 * total && max_y < 1 << 20 {
        max_y *= 2;
        expected = fit.expected_frequencies(data, max_y)?;
    }
    let bins = pool_bins(&observed, &expected, total);
    let obs: Vec<f64> = bins.iter().map(|b| b.observed).collect();
    let exp: Vec<f64> = bins.iter().map(|b| b.expected).collect();
    let (statistic, df, p_value) = chisq_from_table(&obs, &exp, fit.n_params)?;
    Ok(GofResult {
        statistic,
        df,
        p_value,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit_has_zero_statistic() {
        let t = [20.0, 10.0, 8.0, 7.0];
        let (s, df, p) = chisq_from_table(&t, &t, 1).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(df, 2);
        assert_eq!(p, Some(1.0));
    }

    #[test]
    fn hand_computed_five_bin_table() {
        let o = [30.0, 22.0, 18.0, 16.0, 14.0];
        let e = [25.0, 25.0, 20.0, 15.0, 15.0];
        // 25/25 + 9/25 + 4/20 + 1/15 + 1/15
        let by_hand = 1.0 + 0.36 + 0.2 + 1.0 / 15.0 + 1.0 / 15.0;
        let (s, df, p) = chisq_from_table(&o, &e, 2).unwrap();
        assert_eq!(s, by_hand);
        assert_eq!(df, 2);
        // upper tail of chi-square(2) is exp(-x/2)
        assert!((p.unwrap() - (-by_hand / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn single_bin_is_rejected() {
        assert!(matches!(chisq_from_table(&[3.0], &[3.0], 0), Err(Error::TooFewBins(1))));
    }

    #[test]
    fn pooling_respects_minimum_expected() {
        let o = [50.0, 20.0, 10.0, 6.0, 4.0, 3.0, 2.0, 1.0];
        let e = [48.0, 22.0, 11.0, 5.0, 3.0, 2.0, 1.5, 1.0];
        let total = e.iter().sum::<f64>() + 0.5;
        let bins = pool_bins(&o, &e, total);
        assert!(bins.iter().all(|b| b.expected >= MIN_EXPECTED));
        assert!((bins.iter().map(|b| b.expected).sum::<f64>() - total).abs() < 1e-12);
        assert_eq!(bins.iter().map(|b| b.observed).sum::<f64>(), o.iter().sum::<f64>());
        assert_eq!(bins.last().unwrap().to, None);
        assert_eq!(bins[0].from, 0);
        for w in bins.windows(2) {
            assert_eq!(w[0].to.unwrap() + 1, w[1].from);
        }
    }
}
