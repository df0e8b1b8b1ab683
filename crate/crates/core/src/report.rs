//! Tables, JSON documents and figures for selection runs and count fits.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::CountDataset;
use crate::error::Result;
use crate::forest::ImportanceProfile;
use crate::svg::{render, Panel, Series, SeriesKind};
use crate::varselect::SelectionTrace;
use crate::zicount::{Component, GofResult, ZIFit};

/// Version of the JSON documents written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document<T> {
    pub schema_version: u32,
    pub tool_version: String,
    pub kind: String,
    pub body: T,
}

impl<T: Serialize> Document<T> {
    pub fn new(kind: &str, body: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: kind.to_string(),
            body,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// `variable,vi_mean,vi_sd,rank` rows in dataset column order.
pub fn importance_csv(names: &[String], profile: &ImportanceProfile) -> Result<String> {
    let mut rank = vec![0usize; profile.len()];
    for (r, &v) in profile.ranking().iter().enumerate() {
        rank[v] = r + 1;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variable", "vi_mean", "vi_sd", "rank"])?;
    for (v, name) in names.iter().enumerate() {
        w.write_record([
            name.clone(),
            profile.vi_mean[v].to_string(),
            profile.vi_sd[v].to_string(),
            rank[v].to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is UTF-8"))
}

fn ranked_series(trace: &SelectionTrace, values: &[f64]) -> Vec<(f64, f64)> {
    trace
        .ranked_vars
        .iter()
        .enumerate()
        .map(|(r, name)| {
            let v = trace
                .variables
                .iter()
                .position(|n| n == name)
                .expect("ranked names come from variables");
            ((r + 1) as f64, values[v])
        })
        .collect()
}

/// Four panels: mean importance, importance sd with the elimination
/// threshold, nested-model OOB error, and the prediction-step path.
pub fn selection_figure(trace: &SelectionTrace) -> String {
    let vi = Panel::new("Variable importance (mean)", "rank", "VI mean").with_series(Series::new(
        "vi_mean",
        SeriesKind::Points,
        "#222",
        ranked_series(trace, &trace.vi_mean),
    ));
    let sd_fit: Vec<(f64, f64)> = trace
        .sd_fit
        .iter()
        .enumerate()
        .map(|(r, &v)| ((r + 1) as f64, v))
        .collect();
    let sd = Panel::new("Variable importance (sd)", "rank", "VI sd")
        .with_series(Series::new(
            "vi_sd",
            SeriesKind::Points,
            "#222",
            ranked_series(trace, &trace.vi_sd),
        ))
        .with_series(Series::new("cart_fit", SeriesKind::Step, "#2a7", sd_fit))
        .with_hline(trace.threshold_value, "threshold");
    let nested: Vec<(f64, f64)> = trace
        .nested_oob
        .iter()
        .enumerate()
        .map(|(k, &e)| ((k + 1) as f64, e))
        .collect();
    let interp = Panel::new("Nested models", "number of variables", "OOB error")
        .with_series(Series::new("nested_oob", SeriesKind::Line, "#222", nested))
        .with_vline(trace.p_interp() as f64, "p_interp");
    let path: Vec<(f64, f64)> = trace
        .prediction_path
        .iter()
        .enumerate()
        .map(|(i, p)| ((i + 1) as f64, p.1))
        .collect();
    let accepted: Vec<(f64, f64)> = trace
        .prediction_path
        .iter()
        .enumerate()
        .filter(|(_, p)| p.2)
        .map(|(i, p)| ((i + 1) as f64, p.1))
        .collect();
    let pred = Panel::new("Prediction step", "candidate (interpretation order)", "OOB error")
        .with_series(Series::new("candidate_oob", SeriesKind::Line, "#888", path))
        .with_series(Series::new("accepted", SeriesKind::Points, "#c33", accepted));
    render(&[vi, sd, interp, pred], 2)
}

/// Mean and sd of importance against rank.
pub fn importance_figure(profile: &ImportanceProfile) -> String {
    let ranked = profile.ranking();
    let pts = |v: &[f64]| -> Vec<(f64, f64)> {
        ranked
            .iter()
            .enumerate()
            .map(|(r, &i)| ((r + 1) as f64, v[i]))
            .collect()
    };
    render(
        &[
            Panel::new("Variable importance (mean)", "rank", "VI mean").with_series(Series::new(
                "vi_mean",
                SeriesKind::Points,
                "#222",
                pts(&profile.vi_mean),
            )),
            Panel::new("Variable importance (sd)", "rank", "VI sd").with_series(Series::new(
                "vi_sd",
                SeriesKind::Points,
                "#222",
                pts(&profile.vi_sd),
            )),
        ],
        2,
    )
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per coefficient: component, term, estimate, SE, z, p, stars.
pub fn coefficients_csv(fit: &ZIFit) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "component",
        "term",
        "Estimate",
        "Std. Error",
        "z value",
        "Pr(>|z|)",
        "signif",
    ])?;
    for c in &fit.coefficients {
        w.write_record([
            match c.component {
                Component::Count => "count",
                Component::Zero => "zero",
            }
            .to_string(),
            c.name.clone(),
            c.estimate.to_string(),
            opt(c.std_error),
            opt(c.z_value),
            opt(c.p_value),
            c.stars().to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub fit: ZIFit,
    pub gof: Option<GofResult>,
    pub aic: f64,
    pub theta: Option<f64>,
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        None => "NA".into(),
        Some(p) if p < 2e-16 => "< 2e-16".into(),
        Some(p) => format!("{p:.3e}"),
    }
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.prec$}"))
}

/// Human-readable summary laid out like a regression table.
pub fn fit_text(fit: &ZIFit, gof: Option<&GofResult>) -> String {
    let mut out = String::new();
    let family = match fit.spec.family {
        crate::zicount::Family::Zip => "Zero-inflated Poisson",
        crate::zicount::Family::Zinb => "Zero-inflated negative binomial",
    };
    let _ = writeln!(
        out,
        "{family} regression ({} observations in {} groups)",
        fit.n_obs, fit.n_groups
    );
    for (component, title) in [
        (Component::Count, "Count model coefficients (log link):"),
        (Component::Zero, "Zero-inflation model coefficients (logit link):"),
    ] {
        let _ = writeln!(out, "\n{title}");
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>10} {:>8} {:>10}",
            "", "Estimate", "Std. Error", "z value", "Pr(>|z|)"
        );
        for c in fit.coefficients.iter().filter(|c| c.component == component) {
            let _ = writeln!(
                out,
                "{:<16} {:>10.4} {:>10} {:>8} {:>10} {}",
                c.name,
                c.estimate,
                fmt_opt(c.std_error, 4),
                fmt_opt(c.z_value, 3),
                fmt_p(c.p_value),
                c.stars()
            );
        }
    }
    let _ = writeln!(
        out,
        "---\nSignif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"
    );
    if let Some(theta) = fit.theta() {
        let _ = writeln!(out, "\nTheta = {theta:.4}");
    }
    let _ = writeln!(
        out,
        "Log-likelihood: {:.3} on {} Df; AIC {:.3}; {} iterations; status {:?}",
        fit.loglik,
        fit.n_params,
        fit.aic(),
        fit.iterations,
        fit.convergence
    );
    if let Some(g) = gof {
        let _ = writeln!(
            out,
            "Goodness-of-fit test: X-squared = {:.3}, df = {}, p-value = {}",
            g.statistic,
            g.df,
            fmt_p(g.p_value)
        );
    }
    out
}

/// Observed and fitted frequency of each count value.
pub fn frequency_figure(fit: &ZIFit, data: &CountDataset) -> Result<String> {
    let max_y = data.max_count();
    let expected = fit.expected_frequencies(data, max_y)?;
    let mut observed = vec![0.0; max_y as usize + 1];
    for c in data.counts() {
        observed[c as usize] += 1.0;
    }
    let obs: Vec<(f64, f64)> = observed.iter().enumerate().map(|(y, &o)| (y as f64, o)).collect();
    let exp: Vec<(f64, f64)> = expected.iter().enumerate().map(|(y, &e)| (y as f64, e)).collect();
    let panel = Panel::new(
        &format!("Observed and predicted frequencies ({})", fit.spec.family),
        "count",
        "frequency",
    )
    .with_series(Series::new("observed", SeriesKind::Bars, "#888", obs))
    .with_series(Series::new("predicted", SeriesKind::Line, "#c33", exp));
    Ok(render(&[panel], 1))
}

/// Group mean counts against one covariate, with the fitted means.
pub fn mean_figure(fit: &ZIFit, data: &CountDataset, covariate: &str) -> Result<String> {
    let i = data.covariate_index(covariate)?;
    let preds = fit.predict_groups(data)?;
    let mut observed = Vec::new();
    let mut fitted = Vec::new();
    for (g, p) in data.groups().iter().zip(&preds) {
        if g.counts.is_empty() {
            continue;
        }
        let x = g.covariates[i];
        let mean = g.counts.iter().sum::<u64>() as f64 / g.counts.len() as f64;
        observed.push((x, mean));
        fitted.push((x, p.expected_count));
    }
    fitted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let panel = Panel::new(&format!("Mean count against {covariate}"), covariate, "mean count")
        .with_series(Series::new("observed", SeriesKind::Points, "#222", observed))
        .with_series(Series::new("predicted", SeriesKind::Points, "#c33", fitted));
    Ok(render(&[panel], 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svg::data_points;

    #[test]
    fn importance_csv_ranks() {
        let p = ImportanceProfile {
            vi_mean: vec![0.1, 3.0, -0.2],
            vi_sd: vec![0.01, 0.5, 0.02],
            nfor: 2,
            oob_errors: vec![1.0, 1.1],
        };
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let csv = importance_csv(&names, &p).unwrap();
        assert_eq!(
            csv,
            "variable,vi_mean,vi_sd,rank\na,0.1,0.01,2\nb,3,0.5,1\nc,-0.2,0.02,3\n"
        );
        let svg = importance_figure(&p);
        let pts = data_points(&svg);
        assert_eq!(pts[0], ("vi_mean".to_string(), 1.0, 3.0));
        assert_eq!(pts[5], ("vi_sd".to_string(), 3.0, 0.02));
    }

    #[test]
    fn document_envelope() {
        let doc = Document::new("test", vec![1, 2]);
        let json = doc.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert_eq!(v["kind"], "test");
        assert_eq!(v["body"][1], 2);
    }
}
