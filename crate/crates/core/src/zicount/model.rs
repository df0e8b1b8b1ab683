//! Model specification, link functions and the log-likelihood.
//!
//! Group `i` has count mean `λ_i = exp(β'x_i)` and excess-zero probability
//! `π_i = logistic(γ'z_i)`, both with a leading intercept. The parameter
//! vector is packed as `[β, γ, ln θ]`, the last entry present only when θ
//! is estimated.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::family::{ln_count_pmf, log_add_exp, softplus, Family};
use super::special::digamma_diff;
use crate::dataset::CountDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZISpec {
    pub family: Family,
    /// Count-component regressors (intercept implied).
    pub count_covariates: Vec<String>,
    /// Zero-component regressors (intercept implied). May be empty.
    pub zero_covariates: Vec<String>,
}

impl ZISpec {
    pub fn new(family: Family, count: &[&str], zero: &[&str]) -> Self {
        Self {
            family,
            count_covariates: count.iter().map(|s| s.to_string()).collect(),
            zero_covariates: zero.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn n_beta(&self) -> usize {
        self.count_covariates.len() + 1
    }

    pub fn n_gamma(&self) -> usize {
        self.zero_covariates.len() + 1
    }

    pub fn count_names(&self) -> Vec<String> {
        std::iter::once("(Intercept)".to_string())
            .chain(self.count_covariates.iter().cloned())
            .collect()
    }

    pub fn zero_names(&self) -> Vec<String> {
        std::iter::once("(Intercept)".to_string())
            .chain(self.zero_covariates.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZIParams {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `ln θ`; ignored for ZIP.
    pub log_theta: f64,
}

impl ZIParams {
    pub fn theta(&self) -> f64 {
        self.log_theta.exp()
    }
}

/// How θ enters the optimisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThetaMode {
    Estimate,
    Fixed(f64),
}

#[inline]
pub(crate) fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(λ, π)` for covariate vectors that include the leading 1.
pub fn link_eval(params: &ZIParams, x: &[f64], z: &[f64]) -> Result<(f64, f64)> {
    if x.len() != params.beta.len() || z.len() != params.gamma.len() {
        return Err(Error::LengthMismatch {
            what: "covariate vector vs coefficients".into(),
            expected: params.beta.len() + params.gamma.len(),
            actual: x.len() + z.len(),
        });
    }
    if x.iter().chain(z).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite covariate"));
    }
    Ok((dot(&params.beta, x).exp(), logistic(dot(&params.gamma, z))))
}

/// One group's design rows and its count histogram.
#[derive(Debug, Clone)]
pub(crate) struct GroupDesign {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// (count value, multiplicity), ascending by value
    pub hist: Vec<(u64, f64)>,
    pub n: usize,
}

/// Design matrices bound to a dataset.
#[derive(Debug, Clone)]
pub struct Design {
    pub(crate) spec: ZISpec,
    pub(crate) theta_mode: ThetaMode,
    pub(crate) groups: Vec<GroupDesign>,
}

impl Design {
    pub fn new(spec: &ZISpec, data: &CountDataset, theta_mode: ThetaMode) -> Result<Self> {
        if let ThetaMode::Fixed(t) = theta_mode {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::domain(format!("fixed theta must be positive, got {t}")));
            }
        }
        let xi: Vec<usize> = spec
            .count_covariates
            .iter()
            .map(|c| data.covariate_index(c))
            .collect::<Result<_>>()?;
        let zi: Vec<usize> = spec
            .zero_covariates
            .iter()
            .map(|c| data.covariate_index(c))
            .collect::<Result<_>>()?;
        let groups = data
            .groups()
            .iter()
            .filter(|g| !g.counts.is_empty())
            .map(|g| {
                let mut hist: BTreeMap<u64, f64> = BTreeMap::new();
                for &c in &g.counts {
                    *hist.entry(c).or_default() += 1.0;
                }
                GroupDesign {
                    x: std::iter::once(1.0)
                        .chain(xi.iter().map(|&i| g.covariates[i]))
                        .collect(),
                    z: std::iter::once(1.0)
                        .chain(zi.iter().map(|&i| g.covariates[i]))
                        .collect(),
                    hist: hist.into_iter().collect(),
                    n: g.counts.len(),
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            theta_mode,
            groups,
        })
    }

    pub fn spec(&self) -> &ZISpec {
        &self.spec
    }

    pub fn estimates_theta(&self) -> bool {
        self.spec.family == Family::Zinb && self.theta_mode == ThetaMode::Estimate
    }

    /// Length of the packed parameter vector.
    pub fn n_params(&self) -> usize {
        self.spec.n_beta() + self.spec.n_gamma() + usize::from(self.estimates_theta())
    }

    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(|g| g.n).sum()
    }

    pub fn pack(&self, params: &ZIParams) -> Vec<f64> {
        let mut v = params.beta.clone();
        v.extend_from_slice(&params.gamma);
        if self.estimates_theta() {
            v.push(params.log_theta);
        }
        v
    }

    pub fn unpack(&self, v: &[f64]) -> ZIParams {
        let nb = self.spec.n_beta();
        let ng = self.spec.n_gamma();
        let log_theta = match (self.spec.family, self.theta_mode) {
            (Family::Zip, _) => 0.0,
            (Family::Zinb, ThetaMode::Fixed(t)) => t.ln(),
            (Family::Zinb, ThetaMode::Estimate) => v[nb + ng],
        };
        ZIParams {
            beta: v[..nb].to_vec(),
            gamma: v[nb..nb + ng].to_vec(),
            log_theta,
        }
    }

    pub fn loglik(&self, params: &ZIParams) -> f64 {
        self.loglik_grad_packed(&self.pack(params), false).0
    }

    /// Log-likelihood and its gradient with respect to the packed vector.
    pub fn loglik_grad(&self, params: &ZIParams) -> (f64, Vec<f64>) {
        self.loglik_grad_packed(&self.pack(params), true)
    }

    /// Returns `(-inf, zeros)` where the likelihood is not finite.
    pub(crate) fn loglik_grad_packed(&self, v: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let params = self.unpack(v);
        let family = self.spec.family;
        let theta = params.theta();
        let nb = self.spec.n_beta();
        let ng = self.spec.n_gamma();
        let k = v.len();
        let with_theta = self.estimates_theta();

        let per_group: Vec<(f64, f64, f64, f64)> = self
            .groups
            .par_iter()
            .map(|g| {
                let eta_x = dot(&params.beta, &g.x);
                let eta_z = dot(&params.gamma, &g.z);
                let lambda = eta_x.exp();
                let ln_pi = -softplus(-eta_z);
                let ln_keep = -softplus(eta_z);
                let pi = ln_pi.exp();
                let (mut ll, mut gx, mut gz, mut gt) = (0.0, 0.0, 0.0, 0.0);
                for &(y, m) in &g.hist {
                    let lf = ln_count_pmf(family, y, lambda, theta);
                    let (dlf_dx, dlf_dt) = match family {
                        Family::Zip => (y as f64 - lambda, 0.0),
                        Family::Zinb => {
                            let denom = lambda + theta;
                            let dx = theta * (y as f64 - lambda) / denom;
                            let dt = if with_theta {
                                theta
                                    * (digamma_diff(y, theta) - (lambda / theta).ln_1p() + (lambda - y as f64) / denom)
                            } else {
                                0.0
                            };
                            (dx, dt)
                        }
                    };
                    if y == 0 {
                        let lp0 = log_add_exp(ln_pi, ln_keep + lf);
                        ll += m * lp0;
                        if want_grad {
                            // share of P(0) coming from the count component
                            let w = (ln_keep + lf - lp0).exp();
                            gx += m * w * dlf_dx;
                            gt += m * w * dlf_dt;
                            gz += m * (ln_pi + ln_keep - lp0).exp() * -lf.exp_m1();
                        }
                    } else {
                        ll += m * (ln_keep + lf);
                        if want_grad {
                            gx += m * dlf_dx;
                            gt += m * dlf_dt;
                            gz -= m * pi;
                        }
                    }
                }
                (ll, gx, gz, gt)
            })
            .collect();

        let mut ll = 0.0;
        let mut grad = vec![0.0; k];
        for (g, &(l, gx, gz, gt)) in self.groups.iter().zip(&per_group) {
            ll += l;
            if want_grad {
                for (j, xj) in g.x.iter().enumerate() {
                    grad[j] += gx * xj;
                }
                for (j, zj) in g.z.iter().enumerate() {
                    grad[nb + j] += gz * zj;
                }
                if with_theta {
                    grad[nb + ng] += gt;
                }
            }
        }
        if !ll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return (f64::NEG_INFINITY, vec![0.0; k]);
        }
        (ll, grad)
    }
}

/// Log-likelihood of `params` on `data`.
pub fn loglik(spec: &ZISpec, params: &ZIParams, data: &CountDataset) -> Result<f64> {
    Ok(Design::new(spec, data, ThetaMode::Estimate)?.loglik(params))
}

/// Log-likelihood and gradient in `(β, γ, ln θ)` (θ entry for ZINB only).
pub fn loglik_grad(spec: &ZISpec, params: &ZIParams, data: &CountDataset) -> Result<(f64, Vec<f64>)> {
    Ok(Design::new(spec, data, ThetaMode::Estimate)?.loglik_grad(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CountGroup;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_linear_predictors() {
        let p = ZIParams {
            beta: vec![0.0, 0.0],
            gamma: vec![0.0],
            log_theta: 0.0,
        };
        let (l, pi) = link_eval(&p, &[1.0, 3.0], &[1.0]).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(pi, 0.5);
    }

    #[test]
    fn logistic_saturates_without_overflow() {
        let p = ZIParams {
            beta: vec![0.0],
            gamma: vec![30.0],
            log_theta: 0.0,
        };
        let (_, pi) = link_eval(&p, &[1.0], &[1.0]).unwrap();
        assert!((1.0 - pi) < 1e-12 && pi <= 1.0);
        assert_eq!(logistic(-800.0), 0.0);
        assert_eq!(logistic(800.0), 1.0);
        assert!(link_eval(&p, &[f64::NAN], &[1.0]).is_err());
        assert!(link_eval(&p, &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn reported_zip_count_mean_at_log_gameto_four() {
        let p = ZIParams {
            beta: vec![-0.7941, 0.7717],
            gamma: vec![1.4508, -0.4383],
            log_theta: 0.0,
        };
        let (lambda, _) = link_eval(&p, &[1.0, 4.0], &[1.0, 4.0]).unwrap();
        assert_abs_diff_eq!(lambda, (-0.7941f64 + 0.7717 * 4.0).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(lambda, 9.90, epsilon = 0.01);
    }

    #[test]
    fn single_zero_loglik_tends_to_zero_as_pi_tends_to_one() {
        let data = CountDataset::new(
            vec![],
            vec![CountGroup {
                label: "a".into(),
                covariates: vec![],
                counts: vec![0],
            }],
        )
        .unwrap();
        let spec = ZISpec::new(Family::Zip, &[], &[]);
        let mut last = f64::NEG_INFINITY;
        for g in [0.0, 5.0, 10.0, 20.0, 40.0] {
            let p = ZIParams {
                beta: vec![1.0],
                gamma: vec![g],
                log_theta: 0.0,
            };
            let ll = loglik(&spec, &p, &data).unwrap();
            assert!(ll <= 0.0);
            assert!(ll >= last);
            last = ll;
        }
        assert!(last > -1e-15);
    }
}
