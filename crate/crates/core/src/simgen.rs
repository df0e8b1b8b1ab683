//! Synthetic data: the linear selection benchmark and zero-inflated counts.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnMeta, CountDataset, CountGroup, Dataset};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::zicount::{link_eval, Family, ZIParams, ZISpec};

/// Name of the simulated response column.
pub const SIM_RESPONSE: &str = "y";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Coefficients of the continuous block `c1, c2, …`.
    pub cont_coefficients: Vec<f64>,
    /// Coefficients of the binary block `b1, b2, …`.
    pub bin_coefficients: Vec<f64>,
    /// Correlation within the pairs (1,2) and (3,4) of each block.
    pub pair_correlation: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mut coef = vec![0.0; 25];
        coef[..4].copy_from_slice(&[4.0, 4.0, 2.0, 2.0]);
        Self {
            n: 200,
            cont_coefficients: coef.clone(),
            bin_coefficients: coef,
            pair_correlation: 0.9,
            noise_sd: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be positive"));
        }
        if self.cont_coefficients.len() < 4 || self.bin_coefficients.len() < 4 {
            return Err(Error::config(
                "each block needs at least 4 columns for the correlated pairs",
            ));
        }
        if !(self.pair_correlation > -1.0 && self.pair_correlation < 1.0) {
            return Err(Error::config(format!(
                "pair correlation must lie in (-1, 1), got {}",
                self.pair_correlation
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config(format!(
                "noise sd must be non-negative, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }

    /// Names of variables with nonzero coefficients.
    pub fn true_variables(&self) -> Vec<String> {
        let cont = self.cont_coefficients.iter().enumerate().filter(|(_, b)| **b != 0.0);
        let bin = self.bin_coefficients.iter().enumerate().filter(|(_, b)| **b != 0.0);
        cont.map(|(j, _)| format!("c{}", j + 1))
            .chain(bin.map(|(j, _)| format!("b{}", j + 1)))
            .collect()
    }

    /// The four correlated pairs.
    pub fn correlated_pairs() -> [(String, String); 4] {
        ["c1", "c3", "b1", "b3"].map(|a| {
            let j: usize = a[1..].parse().unwrap();
            (a.to_string(), format!("{}{}", &a[..1], j + 1))
        })
    }
}

/// Latent normal correlation whose sign-thresholded indicators have
/// Pearson correlation `rho`: `sin(ρπ/2)`.
pub fn latent_correlation(rho: f64) -> f64 {
    (rho * std::f64::consts::FRAC_PI_2).sin()
}

fn correlated_normal<R: Rng>(rng: &mut R, first: f64, rho: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    rho * first + (1.0 - rho * rho).sqrt() * z
}

/// Draws the benchmark dataset: standard normal and Bernoulli(1/2)
/// columns, each block with two correlated pairs, and a linear response.
pub fn generate_paper_sim(config: &SimConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.n;
    let pc = config.cont_coefficients.len();
    let pb = config.bin_coefficients.len();
    let latent_rho = latent_correlation(config.pair_correlation);
    let mut cont = vec![vec![0.0; n]; pc];
    let mut bin = vec![vec![0.0; n]; pb];
    let mut y = vec![0.0; n];

    for r in 0..n {
        let mut rng = stream(config.seed, Purpose::Simulation, &[r as u64]);
        for j in 0..pc {
            cont[j][r] = if j % 2 == 1 && j < 4 {
                correlated_normal(&mut rng, cont[j - 1][r], config.pair_correlation)
            } else {
                rng.sample(StandardNormal)
            };
        }
        let mut latent = [0.0; 2];
        for (j, col) in bin.iter_mut().enumerate() {
            let u: f64 = if j < 4 {
                if j % 2 == 0 {
                    latent[0] = rng.sample(StandardNormal);
                    latent[0]
                } else {
                    latent[1] = correlated_normal(&mut rng, latent[0], latent_rho);
                    latent[1]
                }
            } else {
                rng.sample(StandardNormal)
            };
            col[r] = if u > 0.0 { 1.0 } else { 0.0 };
        }
        let signal: f64 = (0..pc).map(|j| config.cont_coefficients[j] * cont[j][r]).sum::<f64>()
            + (0..pb).map(|j| config.bin_coefficients[j] * bin[j][r]).sum::<f64>();
        let noise = if config.noise_sd > 0.0 {
            config.noise_sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        y[r] = signal + noise;
    }

    let columns = (1..=pc)
        .map(|j| ColumnMeta::continuous(format!("c{j}")))
        .chain((1..=pb).map(|j| ColumnMeta::binary(format!("b{j}"))))
        .collect();
    cont.extend(bin);
    Dataset::new(columns, cont, SIM_RESPONSE, y)
}

/// Group-level covariates to attach simulated counts to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCovariates {
    pub names: Vec<String>,
    /// One row per group, aligned with `names`.
    pub rows: Vec<Vec<f64>>,
}

impl GroupCovariates {
    /// `n_groups` independent normal draws for each named covariate.
    pub fn normal(names: &[&str], n_groups: usize, mean: f64, sd: f64, seed: u64) -> Self {
        let rows = (0..n_groups)
            .map(|g| {
                let mut rng = stream(seed, Purpose::Simulation, &[u64::MAX, g as u64]);
                names
                    .iter()
                    .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            rows,
        }
    }
}

fn draw_count<R: Rng>(rng: &mut R, family: Family, lambda: f64, theta: f64) -> Result<u64> {
    let mean = match family {
        Family::Zip => lambda,
        Family::Zinb => Gamma::new(theta, lambda / theta)
            .map_err(|e| Error::domain(e.to_string()))?
            .sample(rng),
    };
    if mean <= 0.0 {
        return Ok(0);
    }
    let draw: f64 = Poisson::new(mean)
        .map_err(|e| Error::domain(e.to_string()))?
        .sample(rng);
    Ok(draw as u64)
}

/// Simulates `per_group` counts for every group: each is an excess zero
/// with probability `π_i`, otherwise a draw from the count family.
pub fn generate_zi_counts(
    spec: &ZISpec,
    params: &ZIParams,
    covariates: &GroupCovariates,
    per_group: usize,
    seed: u64,
) -> Result<CountDataset> {
    if params.beta.len() != spec.n_beta() || params.gamma.len() != spec.n_gamma() {
        return Err(Error::LengthMismatch {
            what: "coefficients vs spec".into(),
            expected: spec.n_beta() + spec.n_gamma(),
            actual: params.beta.len() + params.gamma.len(),
        });
    }
    let theta = params.theta();
    if spec.family == Family::Zinb && !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::domain(format!("theta must be positive, got {theta}")));
    }
    let index = |name: &String| {
        covariates
            .names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.clone()))
    };
    let xi: Vec<usize> = spec.count_covariates.iter().map(index).collect::<Result<_>>()?;
    let zi: Vec<usize> = spec.zero_covariates.iter().map(index).collect::<Result<_>>()?;

    let mut groups = Vec::with_capacity(covariates.rows.len());
    for (g, row) in covariates.rows.iter().enumerate() {
        let x: Vec<f64> = std::iter::once(1.0).chain(xi.iter().map(|&i| row[i])).collect();
        let z: Vec<f64> = std::iter::once(1.0).chain(zi.iter().map(|&i| row[i])).collect();
        let (lambda, pi) = link_eval(params, &x, &z)?;
        let mut rng = stream(seed, Purpose::Counts, &[g as u64]);
        let counts = (0..per_group)
            .map(|_| {
                if rng.random::<f64>() < pi {
                    Ok(0)
                } else {
                    draw_count(&mut rng, spec.family, lambda, theta)
                }
            })
            .collect::<Result<Vec<u64>>>()?;
        groups.push(CountGroup {
            label: format!("g{}", g + 1),
            covariates: row.clone(),
            counts,
        });
    }
    CountDataset::new(covariates.names.clone(), groups)
}
