//! Maximum-likelihood fitting and Wald inference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::family::{ln_count_pmf, ln_pmf_unchecked, Family};
use super::model::{link_eval, Design, ThetaMode, ZIParams, ZISpec};
use super::optim::{fd_hessian, maximize, spd_inverse, OptimOptions, OptimStatus};
use crate::dataset::CountDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    Converged,
    /// The iteration limit was hit or the line search stalled first.
    MaxIterations,
    /// The optimum was reached but the observed information is not
    /// invertible; standard errors are unavailable.
    SingularHessian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Count,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub component: Component,
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub z_value: Option<f64>,
    pub p_value: Option<f64>,
}

impl Coefficient {
    /// Significance code at the 0.001 / 0.01 / 0.05 / 0.1 levels.
    pub fn stars(&self) -> &'static str {
        significance_stars(self.p_value)
    }
}

pub fn significance_stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        Some(p) if p < 0.1 => ".",
        _ => "",
    }
}

/// Two-sided normal tail probability of a z statistic.
pub fn wald_p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub theta: ThetaMode,
    pub init: Option<ZIParams>,
    pub optim: OptimOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            theta: ThetaMode::Estimate,
            init: None,
            optim: OptimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZIFit {
    pub spec: ZISpec,
    pub theta_mode: ThetaMode,
    pub params: ZIParams,
    pub loglik: f64,
    /// Number of estimated parameters.
    pub n_params: usize,
    pub n_obs: usize,
    pub n_groups: usize,
    /// Inverse observed information over the packed parameter vector.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub coefficients: Vec<Coefficient>,
    pub convergence: Convergence,
    pub iterations: usize,
    /// Log-likelihood after each accepted optimiser step.
    pub loglik_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub count_mean: f64,
    pub pi: f64,
    /// `(1 − π)λ`
    pub expected_count: f64,
    /// `π + (1 − π)·f(0)`
    pub zero_probability: f64,
}

impl ZIFit {
    pub fn aic(&self) -> f64 {
        2.0 * self.n_params as f64 - 2.0 * self.loglik
    }

    pub fn theta(&self) -> Option<f64> {
        (self.spec.family == Family::Zinb).then(|| self.params.theta())
    }

    pub fn is_converged(&self) -> bool {
        self.convergence != Convergence::MaxIterations
    }

    /// Prediction from raw covariate values (no intercept), ordered as
    /// the spec's count and zero covariate lists.
    pub fn predict(&self, count_values: &[f64], zero_values: &[f64]) -> Result<Prediction> {
        let x: Vec<f64> = std::iter::once(1.0).chain(count_values.iter().copied()).collect();
        let z: Vec<f64> = std::iter::once(1.0).chain(zero_values.iter().copied()).collect();
        let (lambda, pi) = link_eval(&self.params, &x, &z)?;
        let f0 = ln_count_pmf(self.spec.family, 0, lambda, self.params.theta()).exp();
        Ok(Prediction {
            count_mean: lambda,
            pi,
            expected_count: (1.0 - pi) * lambda,
            zero_probability: pi + (1.0 - pi) * f0,
        })
    }

    /// Predictions for every group of `data`, in group order.
    pub fn predict_groups(&self, data: &CountDataset) -> Result<Vec<Prediction>> {
        let xi = indices(data, &self.spec.count_covariates)?;
        let zi = indices(data, &self.spec.zero_covariates)?;
        data.groups()
            .iter()
            .map(|g| {
                let xv: Vec<f64> = xi.iter().map(|&i| g.covariates[i]).collect();
                let zv: Vec<f64> = zi.iter().map(|&i| g.covariates[i]).collect();
                self.predict(&xv, &zv)
            })
            .collect()
    }

    /// Expected number of observations equal to each of `0..=max_y`, summed
    /// over groups.
    pub fn expected_frequencies(&self, data: &CountDataset, max_y: u64) -> Result<Vec<f64>> {
        let preds = self.predict_groups(data)?;
        let theta = self.params.theta();
        let mut freq = vec![0.0; max_y as usize + 1];
        for (g, p) in data.groups().iter().zip(&preds) {
            let n = g.counts.len() as f64;
            for (y, slot) in freq.iter_mut().enumerate() {
                *slot += n * ln_pmf_unchecked(self.spec.family, y as u64, p.count_mean, p.pi, theta).exp();
            }
        }
        Ok(freq)
    }
}

fn indices(data: &CountDataset, names: &[String]) -> Result<Vec<usize>> {
    names.iter().map(|c| data.covariate_index(c)).collect()
}

fn check_rank(rows: impl Iterator<Item = Vec<f64>>, component: &'static str) -> Result<()> {
    let rows: Vec<Vec<f64>> = rows.collect();
    let cols = rows.first().map_or(0, Vec::len);
    if rows.len() < cols {
        return Err(Error::RankDeficient {
            component,
            rank: rows.len(),
            columns: cols,
        });
    }
    let m = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let tol = top * (rows.len().max(cols) as f64) * f64::EPSILON * 1e3;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < cols {
        return Err(Error::RankDeficient {
            component,
            rank,
            columns: cols,
        });
    }
    Ok(())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Starting values: log-linear least squares on the positive counts for
/// β, the excess-zero fraction for the zero intercept, `ln θ = 0`.
pub fn initial_params(design: &Design) -> ZIParams {
    let nb = design.spec.n_beta();
    let ng = design.spec.n_gamma();
    let mut xtx = DMatrix::<f64>::zeros(nb, nb);
    let mut xty = DVector::<f64>::zeros(nb);
    let (mut n_pos, mut sum_pos, mut n_zero, mut n_all) = (0.0, 0.0, 0.0, 0.0);
    for g in &design.groups {
        let x = DVector::from_column_slice(&g.x);
        for &(y, m) in &g.hist {
            n_all += m;
            if y == 0 {
                n_zero += m;
                continue;
            }
            n_pos += m;
            sum_pos += m * y as f64;
            xtx += &x * x.transpose() * m;
            xty += &x * ((y as f64).ln() * m);
        }
    }
    let mean_pos = if n_pos > 0.0 { sum_pos / n_pos } else { 0.5 };
    let beta = xtx
        .clone()
        .cholesky()
        .map(|c| c.solve(&xty).as_slice().to_vec())
        .filter(|b: &Vec<f64>| b.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| {
            let mut b = vec![0.0; nb];
            b[0] = mean_pos.ln();
            b
        });
    let base_zero = (-mean_pos).exp();
    let zero_frac = if n_all > 0.0 { n_zero / n_all } else { 0.0 };
    let excess = ((zero_frac - base_zero) / (1.0 - base_zero)).clamp(0.01, 0.99);
    let mut gamma = vec![0.0; ng];
    gamma[0] = logit(excess);
    let log_theta = match design.theta_mode {
        ThetaMode::Fixed(t) => t.ln(),
        ThetaMode::Estimate => 0.0,
    };
    ZIParams { beta, gamma, log_theta }
}

/// Fits the model with default options, optionally from `init`.
pub fn fit_mle(spec: &ZISpec, data: &CountDataset, init: Option<&ZIParams>) -> Result<ZIFit> {
    let opts = FitOptions {
        init: init.cloned(),
        ..FitOptions::default()
    };
    fit_mle_with(spec, data, &opts)
}

pub fn fit_mle_with(spec: &ZISpec, data: &CountDataset, opts: &FitOptions) -> Result<ZIFit> {
    let design = Design::new(spec, data, opts.theta)?;
    if design.groups.is_empty() {
        return Err(Error::domain("no observations to fit"));
    }
    check_rank(design.groups.iter().map(|g| g.x.clone()), "count")?;
    check_rank(design.groups.iter().map(|g| g.z.clone()), "zero")?;

    let init = match &opts.init {
        Some(p) => {
            if p.beta.len() != spec.n_beta() || p.gamma.len() != spec.n_gamma() {
                return Err(Error::LengthMismatch {
                    what: "initial parameter vector".into(),
                    expected: spec.n_beta() + spec.n_gamma(),
                    actual: p.beta.len() + p.gamma.len(),
                });
            }
            p.clone()
        }
        None => initial_params(&design),
    };
    let x0 = design.pack(&init);

    // per-observation mean log-likelihood
    let scale = 1.0 / design.n_obs() as f64;
    let objective = |v: &[f64]| {
        let (ll, g) = design.loglik_grad_packed(v, true);
        (ll * scale, g.into_iter().map(|x| x * scale).collect::<Vec<_>>())
    };
    let grad_only = |v: &[f64]| objective(v).1;
    let h0 = spd_inverse(&(-fd_hessian(grad_only, &x0)));
    let result = maximize(objective, &x0, h0, &opts.optim);

    let hessian = fd_hessian(|v: &[f64]| design.loglik_grad_packed(v, true).1, &result.x);
    let covariance = spd_inverse(&(-hessian));
    let convergence = match (result.status, &covariance) {
        (OptimStatus::Converged, Some(_)) => Convergence::Converged,
        (OptimStatus::Converged, None) => Convergence::SingularHessian,
        _ => Convergence::MaxIterations,
    };

    let params = design.unpack(&result.x);
    let mut names: Vec<(Component, String)> = spec
        .count_names()
        .into_iter()
        .map(|n| (Component::Count, n))
        .chain(spec.zero_names().into_iter().map(|n| (Component::Zero, n)))
        .collect();
    if design.estimates_theta() {
        names.push((Component::Count, "Log(theta)".into()));
    }
    let coefficients = names
        .into_iter()
        .enumerate()
        .map(|(j, (component, name))| {
            let estimate = result.x[j];
            let std_error = covariance.as_ref().map(|c| c[(j, j)].max(0.0).sqrt());
            let z_value = std_error.map(|se| estimate / se);
            Coefficient {
                component,
                name,
                estimate,
                std_error,
                z_value,
                p_value: z_value.map(wald_p_value),
            }
        })
        .collect();

    if convergence == Convergence::MaxIterations {
        log::warn!(
            "zero-inflated fit did not converge after {} iterations",
            result.iterations
        );
    }

    Ok(ZIFit {
        spec: spec.clone(),
        theta_mode: opts.theta,
        params,
        loglik: result.value / scale,
        n_params: design.n_params(),
        n_obs: design.n_obs(),
        n_groups: design.groups.len(),
        covariance: covariance.map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect()),
        coefficients,
        convergence,
        iterations: result.iterations,
        loglik_trace: result.trace.iter().map(|v| v / scale).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wald_p_values() {
        assert_eq!(wald_p_value(0.0), 1.0);
        assert!(
            (wald_p_value(1.959_963_984_540_054) - 0.05).abs() < 1e-9,
            "{}",
            wald_p_value(1.959_963_984_540_054)
        );
        assert_eq!(wald_p_value(-1.5), wald_p_value(1.5));
        assert!(wald_p_value(40.0) >= 0.0);
    }

    #[test]
    fn stars_follow_conventional_cut_points() {
        assert_eq!(significance_stars(Some(0.0005)), "***");
        assert_eq!(significance_stars(Some(0.005)), "**");
        assert_eq!(significance_stars(Some(0.02)), "*");
        assert_eq!(significance_stars(Some(0.07)), ".");
        assert_eq!(significance_stars(Some(0.5)), "");
        assert_eq!(significance_stars(None), "");
    }

    #[test]
    fn rank_check() {
        assert!(check_rank(vec![vec![1.0, 2.0], vec![1.0, 3.0]].into_iter(), "count").is_ok());
        let err = check_rank(
            vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]].into_iter(),
            "count",
        );
        assert!(matches!(
            err,
            Err(Error::RankDeficient {
                rank: 1,
                columns: 2,
                ..
            })
        ));
    }
}
