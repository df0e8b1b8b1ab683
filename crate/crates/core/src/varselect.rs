//! Three-stage variable selection driven by forest importance and
//! out-of-bag error, plus forward and exhaustive variants.
//!
//! Every candidate model is scored by the mean OOB error of `nfor` forests
//! with `ntree` trees and `mtry = max(1, floor(k/3))` for a model on `k`
//! variables. Models of the same size share their forest seeds.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cart::fit_1d_cart;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::{mean_oob_error, variable_importance, ForestConfig, ImportanceProfile};
use crate::rng::{derive_key, Purpose};

pub const DEFAULT_EXHAUSTIVE_CAP: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Trees per forest in the importance stage.
    pub vi_ntree: usize,
    /// `mtry` of the importance stage (`None` for `max(1, floor(p/3))`).
    pub vi_mtry: Option<usize>,
    /// Trees per forest when scoring candidate models.
    pub model_ntree: usize,
    pub nfor: usize,
    pub min_node_size: usize,
    pub seed: u64,
    pub exhaustive_cap: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            vi_ntree: 500,
            vi_mtry: None,
            model_ntree: 500,
            nfor: 50,
            min_node_size: crate::cart::DEFAULT_MIN_NODE_SIZE,
            seed: 0,
            exhaustive_cap: DEFAULT_EXHAUSTIVE_CAP,
        }
    }
}

impl SelectionConfig {
    pub fn vi_forest(&self) -> ForestConfig {
        ForestConfig {
            ntree: self.vi_ntree,
            mtry: self.vi_mtry,
            min_node_size: self.min_node_size,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nfor == 0 {
            return Err(Error::config("nfor must be at least 1"));
        }
        if self.vi_ntree == 0 || self.model_ntree == 0 {
            return Err(Error::config("ntree must be at least 1"));
        }
        Ok(())
    }
}

/// Scores variable subsets by mean OOB error, caching by set.
pub struct OobEvaluator<'a> {
    data: &'a Dataset,
    config: SelectionConfig,
    cache: HashMap<Vec<usize>, f64>,
}

impl<'a> OobEvaluator<'a> {
    pub fn new(data: &'a Dataset, config: SelectionConfig) -> Self {
        Self {
            data,
            config,
            cache: HashMap::new(),
        }
    }

    /// Mean OOB error of the model on `vars` (order is irrelevant).
    pub fn error(&mut self, vars: &[usize]) -> Result<f64> {
        let mut key = vars.to_vec();
        key.sort_unstable();
        key.dedup();
        if let Some(&e) = self.cache.get(&key) {
            return Ok(e);
        }
        let forest = ForestConfig {
            ntree: self.config.model_ntree,
            mtry: None,
            min_node_size: self.config.min_node_size,
            seed: derive_key(self.config.seed, Purpose::ModelEval, &[key.len() as u64]),
        };
        let e = mean_oob_error(&self.data.features(&key), &forest, self.config.nfor)?;
        self.cache.insert(key, e);
        Ok(e)
    }

    pub fn n_evaluated(&self) -> usize {
        self.cache.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elimination {
    /// Variable indices by descending mean importance.
    pub ranked: Vec<usize>,
    /// Step-function fit to the importance sds in rank order.
    pub sd_fit: Vec<f64>,
    pub threshold: f64,
    /// Ranked variables with mean importance above the threshold.
    pub survivors: Vec<usize>,
}

/// Keeps the variables whose mean importance exceeds the minimum of a
/// regression tree fitted to the importance sds against rank.
pub fn elimination_step(profile: &ImportanceProfile) -> Result<Elimination> {
    if profile.is_empty() {
        return Err(Error::config("empty importance profile"));
    }
    let ranked = profile.ranking();
    let xs: Vec<f64> = (1..=ranked.len()).map(|r| r as f64).collect();
    let ys: Vec<f64> = ranked.iter().map(|&v| profile.vi_sd[v]).collect();
    let tree = fit_1d_cart(&xs, &ys)?;
    let sd_fit: Vec<f64> = xs.iter().map(|&x| tree.predict(&[x])).collect();
    let threshold = tree.min_leaf_value();
    let survivors: Vec<usize> = ranked
        .iter()
        .copied()
        .filter(|&v| profile.vi_mean[v] > threshold)
        .collect();
    if survivors.is_empty() {
        return Err(Error::EmptySurvivors { threshold });
    }
    Ok(Elimination {
        ranked,
        sd_fit,
        threshold,
        survivors,
    })
}

/// Errors of the nested models on the top 1, 2, …, `len` survivors.
pub fn nested_errors<F>(survivors: &[usize], mut eval: F) -> Result<Vec<f64>>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    (1..=survivors.len()).map(|k| eval(&survivors[..k])).collect()
}

/// Size of the nested model with the smallest error (first on ties).
pub fn interpretation_size(nested_oob: &[f64]) -> Result<usize> {
    nested_oob
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i + 1)
        .ok_or_else(|| Error::config("no nested models"))
}

pub fn interpretation_step<F>(survivors: &[usize], eval: F) -> Result<(Vec<usize>, Vec<f64>)>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    let nested = nested_errors(survivors, eval)?;
    let k = interpretation_size(&nested)?;
    Ok((survivors[..k].to_vec(), nested))
}

/// Twice the mean absolute increment of the nested errors beyond the
/// interpretation model; `None` when no increment exists.
pub fn ave_jump(nested_oob: &[f64], p_interp: usize) -> Option<f64> {
    let p_elim = nested_oob.len();
    if p_interp == 0 || p_interp >= p_elim {
        return None;
    }
    let diffs: Vec<f64> = nested_oob[p_interp - 1..]
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .collect();
    Some(2.0 * diffs.iter().sum::<f64>() / diffs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub variable: usize,
    /// Error of the current model with this variable added.
    pub oob_error: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub pred_set: Vec<usize>,
    pub pred_oob: f64,
    /// One record per candidate, the first being the top variable.
    pub path: Vec<StepRecord>,
}

/// Walks `interp_set` in order, adding a variable only when it lowers the
/// current model's error by more than `jump`.
pub fn prediction_with_jump<F>(interp_set: &[usize], jump: f64, mut eval: F) -> Result<PredictionResult>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    let Some((&first, rest)) = interp_set.split_first() else {
        return Err(Error::config("empty interpretation set"));
    };
    let mut current = vec![first];
    let mut current_err = eval(&current)?;
    let mut path = vec![StepRecord {
        variable: first,
        oob_error: current_err,
        accepted: true,
    }];
    for &v in rest {
        current.push(v);
        let e = eval(&current)?;
        let accepted = current_err - e > jump;
        if accepted {
            current_err = e;
        } else {
            current.pop();
        }
        path.push(StepRecord {
            variable: v,
            oob_error: e,
            accepted,
        });
    }
    Ok(PredictionResult {
        pred_set: current,
        pred_oob: current_err,
        path,
    })
}

/// Returns the prediction result and the threshold used. When the
/// interpretation model is the largest nested model there is no threshold
/// and the whole interpretation set is kept.
pub fn prediction_step<F>(interp_set: &[usize], nested_oob: &[f64], eval: F) -> Result<(PredictionResult, Option<f64>)>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    let p_interp = interp_set.len();
    match ave_jump(nested_oob, p_interp) {
        Some(jump) => Ok((prediction_with_jump(interp_set, jump, eval)?, Some(jump))),
        None => {
            warn!("interpretation set equals the survivor set; prediction step keeps all {p_interp} variables");
            let pred_oob = nested_oob
                .get(p_interp.wrapping_sub(1))
                .copied()
                .ok_or_else(|| Error::config("empty interpretation set"))?;
            let path = interp_set
                .iter()
                .zip(nested_oob)
                .map(|(&variable, &oob_error)| StepRecord {
                    variable,
                    oob_error,
                    accepted: true,
                })
                .collect();
            Ok((
                PredictionResult {
                    pred_set: interp_set.to_vec(),
                    pred_oob,
                    path,
                },
                None,
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardResult {
    /// Variables in the order they were added, with the error after each.
    pub path: Vec<(usize, f64)>,
    pub selected: Vec<usize>,
    pub oob_error: f64,
}

/// Greedy forward selection over `candidates`; the answer is the prefix of
/// the greedy path with the smallest error.
pub fn forward_selection<F>(candidates: &[usize], mut eval: F) -> Result<ForwardResult>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    if candidates.is_empty() {
        return Err(Error::config("forward selection needs at least one candidate"));
    }
    let mut remaining = candidates.to_vec();
    let mut current: Vec<usize> = Vec::new();
    let mut path = Vec::new();
    while !remaining.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in remaining.iter().enumerate() {
            current.push(v);
            let e = eval(&current)?;
            current.pop();
            if best.is_none_or(|(_, be)| e < be) {
                best = Some((i, e));
            }
        }
        let (i, e) = best.expect("remaining is nonempty");
        let v = remaining.remove(i);
        current.push(v);
        path.push((v, e));
    }
    let k = interpretation_size(&path.iter().map(|p| p.1).collect::<Vec<_>>())?;
    Ok(ForwardResult {
        selected: path[..k].iter().map(|p| p.0).collect(),
        oob_error: path[k - 1].1,
        path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    pub selected: Vec<usize>,
    pub oob_error: f64,
    pub n_models: usize,
}

/// Scores every nonempty subset of `candidates`. Ties go to the smaller
/// set, then to the lexicographically first by candidate position.
pub fn exhaustive_search<F>(candidates: &[usize], cap: usize, mut eval: F) -> Result<ExhaustiveResult>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    let k = candidates.len();
    if k == 0 {
        return Err(Error::config("exhaustive search needs at least one candidate"));
    }
    if k > cap {
        return Err(Error::config(format!(
            "exhaustive search over {k} candidates exceeds the cap of {cap}"
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 1u64..(1 << k) {
        let positions: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
        let vars: Vec<usize> = positions.iter().map(|&i| candidates[i]).collect();
        let e = eval(&vars)?;
        let better = match &best {
            None => true,
            Some((be, bp)) => e
                .total_cmp(be)
                .then(positions.len().cmp(&bp.len()))
                .then(positions.cmp(bp))
                .is_lt(),
        };
        if better {
            best = Some((e, positions));
        }
    }
    let (oob_error, positions) = best.expect("at least one subset");
    Ok(ExhaustiveResult {
        selected: positions.iter().map(|&i| candidates[i]).collect(),
        oob_error,
        n_models: (1 << k) - 1,
    })
}

/// Everything the three-stage procedure computed, with variables by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub response: String,
    pub config: SelectionConfig,
    /// All candidate variables in dataset order.
    pub variables: Vec<String>,
    pub vi_mean: Vec<f64>,
    pub vi_sd: Vec<f64>,
    pub ranked_vars: Vec<String>,
    pub sd_fit: Vec<f64>,
    pub threshold_value: f64,
    pub survivors: Vec<String>,
    pub nested_oob: Vec<f64>,
    pub interp_set: Vec<String>,
    pub interp_oob: f64,
    pub ave_jump: Option<f64>,
    pub prediction_path: Vec<(String, f64, bool)>,
    pub pred_set: Vec<String>,
    pub pred_oob: f64,
}

impl SelectionTrace {
    pub fn p_elim(&self) -> usize {
        self.survivors.len()
    }

    pub fn p_interp(&self) -> usize {
        self.interp_set.len()
    }
}

/// Importance, elimination, interpretation and prediction on the active
/// response of `data`.
pub fn run_procedure(data: &Dataset, config: &SelectionConfig) -> Result<SelectionTrace> {
    config.validate()?;
    let profile = variable_importance(&data.all_features(), &config.vi_forest(), config.nfor)?;
    run_from_profile(data, &profile, config)
}

/// The selection stages after importance has been computed.
pub fn run_from_profile(
    data: &Dataset,
    profile: &ImportanceProfile,
    config: &SelectionConfig,
) -> Result<SelectionTrace> {
    let names = data.column_names();
    if profile.len() != names.len() {
        return Err(Error::LengthMismatch {
            what: "importance profile vs columns".into(),
            expected: names.len(),
            actual: profile.len(),
        });
    }
    let elim = elimination_step(profile)?;
    let mut evaluator = OobEvaluator::new(data, *config);
    let (interp, nested) = interpretation_step(&elim.survivors, |v| evaluator.error(v))?;
    let (pred, jump) = prediction_step(&interp, &nested, |v| evaluator.error(v))?;

    let named = |ix: &[usize]| ix.iter().map(|&i| names[i].clone()).collect::<Vec<_>>();
    Ok(SelectionTrace {
        response: data.response_name().to_string(),
        config: *config,
        variables: names.clone(),
        vi_mean: profile.vi_mean.clone(),
        vi_sd: profile.vi_sd.clone(),
        ranked_vars: named(&elim.ranked),
        sd_fit: elim.sd_fit,
        threshold_value: elim.threshold,
        survivors: named(&elim.survivors),
        interp_oob: nested[interp.len() - 1],
        nested_oob: nested,
        interp_set: named(&interp),
        ave_jump: jump,
        prediction_path: pred
            .path
            .iter()
            .map(|s| (names[s.variable].clone(), s.oob_error, s.accepted))
            .collect(),
        pred_set: named(&pred.pred_set),
        pred_oob: pred.pred_oob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(mean: Vec<f64>, sd: Vec<f64>) -> ImportanceProfile {
        ImportanceProfile {
            vi_mean: mean,
            vi_sd: sd,
            nfor: 2,
            oob_errors: vec![],
        }
    }

    #[test]
    fn flat_sd_keeps_everything_above_it() {
        let p = profile(vec![5.0, 3.0, 4.0, 2.0], vec![1.0; 4]);
        let e = elimination_step(&p).unwrap();
        assert_eq!(e.threshold, 1.0);
        assert_eq!(e.ranked, [0, 2, 1, 3]);
        assert_eq!(e.survivors, [0, 2, 1, 3]);
    }

    #[test]
    fn threshold_is_strict_and_empty_survivors_signal() {
        let p = profile(vec![1.0, 0.5, 0.2], vec![1.0; 3]);
        assert!(matches!(elimination_step(&p), Err(Error::EmptySurvivors { .. })));
        let p = profile(vec![1.0, 2.0], vec![1.0; 2]);
        assert_eq!(elimination_step(&p).unwrap().survivors, [1]);
    }

    #[test]
    fn step_shaped_sd_curve_sets_threshold_to_tail_level() {
        let mut mean = vec![10.0, 9.0, 8.0, 7.0, 6.0, 5.0];
        mean.extend((0..14).map(|i| 0.05 - 0.01 * i as f64));
        let mut sd = vec![2.0; 6];
        sd.extend(vec![0.03; 14]);
        let e = elimination_step(&profile(mean, sd)).unwrap();
        assert!((e.threshold - 0.03).abs() < 1e-15);
        assert_eq!(e.survivors, [0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn ave_jump_hand_computed() {
        let nested = [10.0, 6.0, 4.0, 4.5, 4.3, 4.9];
        // increments beyond model 3: 0.5, 0.2, 0.6
        let want = 2.0 * (0.5 + 0.2 + 0.6) / 3.0;
        assert!((ave_jump(&nested, 3).unwrap() - want).abs() < 1e-15);
        assert_eq!(ave_jump(&nested, 6), None);
        assert_eq!(ave_jump(&[1.0, 1.0, 1.0], 1), Some(0.0));
        assert_eq!(interpretation_size(&nested).unwrap(), 3);
        assert_eq!(interpretation_size(&[2.0, 1.0, 1.0]).unwrap(), 2);
    }

    /// Error of a subset under an additive toy model.
    fn toy(weights: &'static [f64]) -> impl FnMut(&[usize]) -> Result<f64> {
        move |vars: &[usize]| {
            let total: f64 = weights.iter().sum();
            Ok(total - vars.iter().map(|&v| weights[v]).sum::<f64>() + 0.01 * vars.len() as f64)
        }
    }

    #[test]
    fn zero_jump_accepts_any_strict_decrease() {
        let r = prediction_with_jump(&[0, 1, 2, 3], 0.0, toy(&[5.0, 0.0, 2.0, 0.005])).unwrap();
        assert_eq!(r.pred_set, [0, 2]);
        assert_eq!(r.path.len(), 4);
        assert!(!r.path[1].accepted && r.path[2].accepted);
    }

    #[test]
    fn larger_jump_never_enlarges_prediction_set() {
        let w: &'static [f64] = &[5.0, 3.0, 1.0, 0.5, 0.2, 0.05, 0.0];
        let mut last = usize::MAX;
        for jump in [0.0, 0.1, 0.3, 0.6, 1.2, 2.5, 4.0, 10.0] {
            let r = prediction_with_jump(&[0, 1, 2, 3, 4, 5, 6], jump, toy(w)).unwrap();
            assert!(r.pred_set.len() <= last);
            last = r.pred_set.len();
        }
        assert_eq!(last, 1);
    }

    #[test]
    fn equal_interpretation_and_elimination_falls_back() {
        let (r, jump) = prediction_step(&[4, 2], &[3.0, 2.0], toy(&[0.0; 5])).unwrap();
        assert_eq!(jump, None);
        assert_eq!(r.pred_set, [4, 2]);
        assert_eq!(r.pred_oob, 2.0);
    }

    #[test]
    fn forward_and_exhaustive_on_toy_model() {
        let w: &'static [f64] = &[0.0, 4.0, 0.0, 2.0, 0.005];
        let f = forward_selection(&[0, 1, 2, 3, 4], toy(w)).unwrap();
        assert_eq!(f.path[0].0, 1);
        assert_eq!(f.selected, [1, 3]);
        let x = exhaustive_search(&[0, 1, 2, 3, 4], 15, toy(w)).unwrap();
        assert_eq!(x.selected, [1, 3]);
        assert_eq!(x.n_models, 31);
        assert!(forward_selection(&[], toy(w)).is_err());
        assert!(exhaustive_search(&[0, 1, 2], 2, toy(w)).is_err());
        assert_eq!(exhaustive_search(&[3], 15, toy(w)).unwrap().selected, [3]);
    }

    #[test]
    fn exhaustive_ties_prefer_smaller_then_lexicographic() {
        let flat = |_: &[usize]| Ok(1.0);
        assert_eq!(exhaustive_search(&[7, 3, 5], 15, flat).unwrap().selected, [7]);
    }
}
