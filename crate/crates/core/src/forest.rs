//! Bagged regression forests with out-of-bag error and permutation
//! variable importance.
//!
//! Tree `t` of a forest seeded with `seed` draws its bootstrap sample from
//! stream `(seed, Bootstrap, t)` and its per-node variable subsets from
//! `(seed, NodeFeatures, t)`; the permutation of variable `v` among the
//! tree's out-of-bag rows uses `(seed, Permutation, t, v)`. Bootstrap draws
//! index rows by identity order, so reordering the input rows does not
//! change any result.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{build_tree, default_mtry, Node, Tree, DEFAULT_MIN_NODE_SIZE};
use crate::dataset::Features;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub ntree: usize,
    /// Variables tried per node; `None` means `max(1, floor(p / 3))`.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            ntree: 500,
            mtry: None,
            min_node_size: DEFAULT_MIN_NODE_SIZE,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, p: usize) -> Result<usize> {
        let mtry = self.mtry.unwrap_or_else(|| default_mtry(p));
        if mtry == 0 || mtry > p {
            return Err(Error::config(format!("mtry must be in 1..={p}, got {mtry}")));
        }
        Ok(mtry)
    }

    pub fn validate(&self, p: usize) -> Result<usize> {
        if self.ntree == 0 {
            return Err(Error::config("ntree must be at least 1"));
        }
        if self.min_node_size == 0 {
            return Err(Error::config("min_node_size must be at least 1"));
        }
        self.resolved_mtry(p)
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    /// Per tree, how many times each row (by position) was drawn.
    in_bag: Vec<Vec<u32>>,
    /// Per tree, rows never drawn, in identity order.
    oob: Vec<Vec<usize>>,
    seed: u64,
    n_vars: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OobError {
    pub mse: f64,
    /// Rows that were out-of-bag for at least one tree.
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Fits `config.ntree` trees, each on its own bootstrap sample of size n.
pub fn fit_forest(data: &Features<'_>, config: &ForestConfig) -> Result<Forest> {
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::config(format!("need at least 2 rows, got {n}")));
    }
    let mtry = config.validate(data.n_vars())?;
    let canonical = data.canonical_rows();

    let fitted: Vec<(Tree, Vec<u32>, Vec<usize>)> = (0..config.ntree)
        .into_par_iter()
        .map(|t| {
            let mut boot = rng::stream(config.seed, Purpose::Bootstrap, &[t as u64]);
            let mut counts = vec![0u32; n];
            for _ in 0..n {
                counts[canonical[boot.random_range(0..n)]] += 1;
            }
            let mut sample = Vec::with_capacity(n);
            let mut oob = Vec::new();
            for &r in canonical {
                match counts[r] {
                    0 => oob.push(r),
                    c => sample.extend(std::iter::repeat_n(r, c as usize)),
                }
            }
            let mut node_rng = rng::stream(config.seed, Purpose::NodeFeatures, &[t as u64]);
            let tree = build_tree(data, &sample, mtry, &mut node_rng, config.min_node_size)?;
            Ok((tree, counts, oob))
        })
        .collect::<Result<_>>()?;

    let mut forest = Forest {
        trees: Vec::with_capacity(config.ntree),
        in_bag: Vec::with_capacity(config.ntree),
        oob: Vec::with_capacity(config.ntree),
        seed: config.seed,
        n_vars: data.n_vars(),
    };
    for (tree, counts, oob) in fitted {
        forest.trees.push(tree);
        forest.in_bag.push(counts);
        forest.oob.push(oob);
    }
    Ok(forest)
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn ntree(&self) -> usize {
        self.trees.len()
    }

    pub fn in_bag_counts(&self, tree: usize) -> &[u32] {
        &self.in_bag[tree]
    }

    pub fn oob_rows(&self, tree: usize) -> &[usize] {
        &self.oob[tree]
    }

    /// Mean of the per-tree predictions for one covariate vector.
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_row(&self, data: &Features<'_>, row: usize) -> f64 {
        self.trees.iter().map(|t| t.predict_row(data, row)).sum::<f64>() / self.trees.len() as f64
    }

    fn check_data(&self, data: &Features<'_>) -> Result<()> {
        let n = self.in_bag.first().map_or(0, Vec::len);
        if data.n_rows() != n || data.n_vars() != self.n_vars {
            return Err(Error::LengthMismatch {
                what: "rows x vars of the data the forest was fit on".into(),
                expected: n * self.n_vars,
                actual: data.n_rows() * data.n_vars(),
            });
        }
        Ok(())
    }

    /// Per-row OOB-aggregated predictions; `None` for rows in-bag in every tree.
    pub fn oob_predictions(&self, data: &Features<'_>) -> Result<Vec<Option<f64>>> {
        self.check_data(data)?;
        let n = data.n_rows();
        let mut sum = vec![0.0; n];
        let mut count = vec![0u32; n];
        for (tree, oob) in self.trees.iter().zip(&self.oob) {
            for &r in oob {
                sum[r] += tree.predict_row(data, r);
                count[r] += 1;
            }
        }
        Ok(sum
            .into_iter()
            .zip(count)
            .map(|(s, c)| (c > 0).then(|| s / c as f64))
            .collect())
    }

    /// Mean squared error of OOB-aggregated predictions. Rows that are never
    /// out-of-bag are excluded with a warning.
    pub fn oob_error(&self, data: &Features<'_>) -> Result<OobError> {
        let preds = self.oob_predictions(data)?;
        let y = data.response();
        let mut sse = 0.0;
        let mut used = 0;
        for &r in data.canonical_rows() {
            if let Some(p) = preds[r] {
                sse += (y[r] - p).powi(2);
                used += 1;
            }
        }
        let excluded = preds.len() - used;
        if used == 0 {
            return Err(Error::NoOutOfBagRows);
        }
        if excluded > 0 {
            warn!("{excluded} rows are in-bag for every tree; excluded from OOB error");
        }
        Ok(OobError {
            mse: sse / used as f64,
            n_used: used,
            n_excluded: excluded,
        })
    }

    /// Per-variable mean increase of tree OOB error after permuting that
    /// variable among the tree's OOB rows. Trees without OOB rows are skipped.
    /// Variables a tree never splits on contribute exactly zero for it.
    pub fn permutation_importance(&self, data: &Features<'_>) -> Result<Vec<f64>> {
        self.check_data(data)?;
        let p = data.n_vars();
        let y = data.response();
        let per_tree: Vec<Option<Vec<f64>>> = (0..self.trees.len())
            .into_par_iter()
            .map(|t| {
                let tree = &self.trees[t];
                let oob = &self.oob[t];
                if oob.is_empty() {
                    return None;
                }
                let m = oob.len() as f64;
                let base: f64 = oob
                    .iter()
                    .map(|&r| (y[r] - tree.predict_row(data, r)).powi(2))
                    .sum::<f64>()
                    / m;
                let mut used = vec![false; p];
                for node in tree.nodes() {
                    if let Node::Split { rule, .. } = node {
                        used[rule.variable] = true;
                    }
                }
                let mut vi = vec![0.0; p];
                let mut shuffled = Vec::with_capacity(oob.len());
                for v in (0..p).filter(|&v| used[v]) {
                    shuffled.clear();
                    shuffled.extend(oob.iter().map(|&r| data.value(r, v)));
                    let mut prng = rng::stream(self.seed, Purpose::Permutation, &[t as u64, v as u64]);
                    shuffled.shuffle(&mut prng);
                    let permuted: f64 = oob
                        .iter()
                        .zip(&shuffled)
                        .map(|(&r, &pv)| {
                            let pred = tree.predict_with(|u| if u == v { pv } else { data.value(r, u) });
                            (y[r] - pred).powi(2)
                        })
                        .sum::<f64>()
                        / m;
                    vi[v] = permuted - base;
                }
                Some(vi)
            })
            .collect();

        let mut total = vec![0.0; p];
        let mut trees_used = 0usize;
        for vi in per_tree.into_iter().flatten() {
            trees_used += 1;
            for (acc, v) in total.iter_mut().zip(vi) {
                *acc += v;
            }
        }
        if trees_used == 0 {
            return Err(Error::NoOutOfBagRows);
        }
        Ok(total.into_iter().map(|s| s / trees_used as f64).collect())
    }
}

/// Mean and standard deviation of permutation importance over `nfor`
/// independently seeded forests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    pub vi_mean: Vec<f64>,
    /// Sample standard deviation across forests (0 when `nfor == 1`).
    pub vi_sd: Vec<f64>,
    pub nfor: usize,
    /// OOB error of each forest.
    pub oob_errors: Vec<f64>,
}

impl ImportanceProfile {
    pub fn len(&self) -> usize {
        self.vi_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vi_mean.is_empty()
    }

    /// Variable indices by descending mean importance (ties: lower index).
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.vi_mean.len()).collect();
        order.sort_by(|&a, &b| self.vi_mean[b].total_cmp(&self.vi_mean[a]).then(a.cmp(&b)));
        order
    }

    /// Builds a profile from per-forest importance vectors.
    pub fn from_runs(runs: &[Vec<f64>], oob_errors: Vec<f64>) -> Result<Self> {
        let nfor = runs.len();
        if nfor == 0 {
            return Err(Error::config("nfor must be at least 1"));
        }
        let p = runs[0].len();
        let mean: Vec<f64> = (0..p)
            .map(|v| runs.iter().map(|r| r[v]).sum::<f64>() / nfor as f64)
            .collect();
        let sd = (0..p)
            .map(|v| {
                if nfor < 2 {
                    0.0
                } else {
                    let ss: f64 = runs.iter().map(|r| (r[v] - mean[v]).powi(2)).sum();
                    (ss / (nfor - 1) as f64).sqrt()
                }
            })
            .collect();
        Ok(Self {
            vi_mean: mean,
            vi_sd: sd,
            nfor,
            oob_errors,
        })
    }
}

/// Seed of the `k`-th repeated forest.
pub fn replicate_seed(seed: u64, k: usize) -> u64 {
    rng::derive_key(seed, Purpose::Replicate, &[k as u64])
}

pub fn variable_importance(data: &Features<'_>, config: &ForestConfig, nfor: usize) -> Result<ImportanceProfile> {
    if nfor == 0 {
        return Err(Error::config("nfor must be at least 1"));
    }
    config.validate(data.n_vars())?;
    let runs: Vec<(Vec<f64>, f64)> = (0..nfor)
        .into_par_iter()
        .map(|k| {
            let cfg = config.with_seed(replicate_seed(config.seed, k));
            let forest = fit_forest(data, &cfg)?;
            let vi = forest.permutation_importance(data)?;
            let err = forest.oob_error(data)?.mse;
            Ok((vi, err))
        })
        .collect::<Result<_>>()?;
    let (vis, errs): (Vec<Vec<f64>>, Vec<f64>) = runs.into_iter().unzip();
    ImportanceProfile::from_runs(&vis, errs)
}

/// Mean OOB error over `nfor` repeated forests.
pub fn mean_oob_error(data: &Features<'_>, config: &ForestConfig, nfor: usize) -> Result<f64> {
    if nfor == 0 {
        return Err(Error::config("nfor must be at least 1"));
    }
    let errs: Vec<f64> = (0..nfor)
        .into_par_iter()
        .map(|k| {
            let cfg = config.with_seed(replicate_seed(config.seed, k));
            Ok(fit_forest(data, &cfg)?.oob_error(data)?.mse)
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / nfor as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnMeta, Dataset};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_columns(seed: u64, p: usize, n: usize) -> Vec<Vec<f64>> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..p)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect()
    }

    fn dataset(cols: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        let meta = (0..cols.len())
            .map(|i| ColumnMeta::continuous(format!("x{i}")))
            .collect();
        Dataset::new(meta, cols, "y", y).unwrap()
    }

    fn cfg(ntree: usize, seed: u64) -> ForestConfig {
        ForestConfig {
            ntree,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_tree_forest_predicts_like_its_tree() {
        let cols = normal_columns(1, 3, 50);
        let y: Vec<f64> = (0..50).map(|i| cols[0][i] * 2.0).collect();
        let ds = dataset(cols, y);
        let f = fit_forest(&ds.all_features(), &cfg(1, 3)).unwrap();
        let row = [0.3, -0.2, 1.0];
        assert_eq!(f.predict(&row), f.trees()[0].predict(&row));
    }

    #[test]
    fn fixed_seed_gives_identical_forests() {
        let cols = normal_columns(2, 4, 60);
        let y: Vec<f64> = (0..60).map(|i| cols[1][i] - cols[2][i]).collect();
        let ds = dataset(cols, y);
        let a = fit_forest(&ds.all_features(), &cfg(20, 9)).unwrap();
        let b = fit_forest(&ds.all_features(), &cfg(20, 9)).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&ds.all_features(), &cfg(20, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bootstrap_bookkeeping() {
        let cols = normal_columns(3, 2, 200);
        let y = cols[0].clone();
        let ds = dataset(cols, y);
        let f = fit_forest(&ds.all_features(), &cfg(300, 1)).unwrap();
        let mut frac = 0.0;
        for t in 0..f.ntree() {
            let counts = f.in_bag_counts(t);
            assert_eq!(counts.iter().sum::<u32>(), 200);
            let oob = f.oob_rows(t);
            assert!(oob.iter().all(|&r| counts[r] == 0));
            assert_eq!(oob.len(), counts.iter().filter(|&&c| c == 0).count());
            frac += oob.len() as f64 / 200.0;
        }
        frac /= f.ntree() as f64;
        // (1 - 1/n)^n -> e^-1
        assert!((frac - (-1f64).exp()).abs() < 0.02, "oob fraction {frac}");
    }

    #[test]
    fn constant_response_gives_single_leaves_and_zero_error() {
        let cols = normal_columns(4, 3, 40);
        let ds = dataset(cols, vec![0.0; 40]);
        let f = fit_forest(&ds.all_features(), &cfg(30, 2)).unwrap();
        assert!(f.trees().iter().all(|t| t.nodes().len() == 1));
        assert_eq!(f.predict(&[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(f.oob_error(&ds.all_features()).unwrap().mse, 0.0);
    }

    #[test]
    fn predictions_lie_within_leaf_range() {
        let cols = normal_columns(5, 3, 80);
        let y: Vec<f64> = (0..80).map(|i| cols[0][i] * cols[1][i]).collect();
        let ds = dataset(cols, y);
        let f = fit_forest(&ds.all_features(), &cfg(25, 2)).unwrap();
        let lo = f.trees().iter().map(Tree::min_leaf_value).fold(f64::INFINITY, f64::min);
        let hi = f
            .trees()
            .iter()
            .map(Tree::max_leaf_value)
            .fold(f64::NEG_INFINITY, f64::max);
        for row in [[0.0, 0.0, 0.0], [3.0, -3.0, 1.0], [-9.0, 9.0, 0.0]] {
            let p = f.predict(&row);
            assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn separable_data_is_fit_almost_exactly() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 50.0 { 0.0 } else { 10.0 }).collect();
        let ds = dataset(vec![x], y.clone());
        let f = fit_forest(&ds.all_features(), &cfg(100, 4)).unwrap();
        let feats = ds.all_features();
        let mse: f64 = (0..100).map(|r| (f.predict_row(&feats, r) - y[r]).powi(2)).sum::<f64>() / 100.0;
        assert!(mse < 0.5, "training mse {mse}");
    }

    #[test]
    fn too_few_trees_for_oob_is_an_error() {
        let ds = dataset(vec![vec![1.0, 2.0]], vec![1.0, 2.0]);
        // with n = 2 a tree is all in-bag with probability 1/2; find a seed where it is
        let seed = (0..64)
            .find(|&s| {
                fit_forest(&ds.all_features(), &cfg(1, s))
                    .unwrap()
                    .oob_rows(0)
                    .is_empty()
            })
            .unwrap();
        let f = fit_forest(&ds.all_features(), &cfg(1, seed)).unwrap();
        assert!(matches!(f.oob_error(&ds.all_features()), Err(Error::NoOutOfBagRows)));
    }

    #[test]
    fn unused_variable_has_exactly_zero_importance() {
        let mut cols = normal_columns(6, 3, 100);
        cols.push(vec![1.0; 100]);
        let y: Vec<f64> = (0..100).map(|i| 3.0 * cols[0][i]).collect();
        let ds = dataset(cols, y);
        let prof = variable_importance(&ds.all_features(), &cfg(50, 1), 3).unwrap();
        assert_eq!(prof.vi_mean[3], 0.0);
        assert_eq!(prof.vi_sd[3], 0.0);
        assert!(prof.vi_mean[0] > 1.0);
        assert_eq!(prof.ranking()[0], 0);
        assert!(prof.vi_sd.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn profile_statistics() {
        let runs = vec![vec![1.0, 0.0], vec![3.0, 0.0]];
        let p = ImportanceProfile::from_runs(&runs, vec![0.5, 0.5]).unwrap();
        assert_eq!(p.vi_mean, vec![2.0, 0.0]);
        assert_abs_diff_eq!(p.vi_sd[0], 2f64.sqrt(), epsilon = 1e-15);
        let single = ImportanceProfile::from_runs(&runs[..1], vec![0.5]).unwrap();
        assert_eq!(single.vi_sd, vec![0.0, 0.0]);
        assert!(ImportanceProfile::from_runs(&[], vec![]).is_err());
    }

    #[test]
    fn duplicating_a_signal_variable_dilutes_its_importance() {
        let cols = normal_columns(7, 4, 200);
        let y: Vec<f64> = (0..200).map(|i| 3.0 * cols[0][i] + cols[1][i]).collect();
        let alone = dataset(cols.clone(), y.clone());
        let mut with_copy = cols.clone();
        with_copy.push(cols[0].clone());
        let dup = dataset(with_copy, y);
        let config = ForestConfig {
            ntree: 200,
            mtry: Some(2),
            ..cfg(200, 3)
        };
        let a = variable_importance(&alone.all_features(), &config, 4).unwrap();
        let b = variable_importance(&dup.all_features(), &config, 4).unwrap();
        assert!(b.vi_mean[0] <= a.vi_mean[0], "{} vs {}", b.vi_mean[0], a.vi_mean[0]);
        assert!(b.vi_mean[4] <= a.vi_mean[0]);
    }

    #[test]
    fn oob_error_is_invariant_to_row_order() {
        let cols = normal_columns(8, 3, 90);
        let y: Vec<f64> = (0..90).map(|i| cols[0][i] + 0.5 * cols[2][i]).collect();
        let ds = dataset(cols.clone(), y.clone());
        // reverse the rows but keep their identities
        let rev = |v: &Vec<f64>| v.iter().rev().copied().collect::<Vec<f64>>();
        let ds_rev = dataset(cols.iter().map(rev).collect(), rev(&y))
            .with_row_ids((0..90u64).rev().collect())
            .unwrap();
        let c = cfg(40, 12);
        let a = fit_forest(&ds.all_features(), &c)
            .unwrap()
            .oob_error(&ds.all_features())
            .unwrap();
        let b = fit_forest(&ds_rev.all_features(), &c)
            .unwrap()
            .oob_error(&ds_rev.all_features())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let cols = normal_columns(9, 6, 120);
        let y: Vec<f64> = (0..120).map(|i| cols[0][i] - cols[3][i]).collect();
        let ds = dataset(cols, y);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| variable_importance(&ds.all_features(), &cfg(30, 5), 4).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(2));
        assert_eq!(one, run(8));
    }

    #[test]
    fn invalid_configs() {
        let ds = dataset(normal_columns(10, 2, 20), vec![0.0; 20]);
        let f = ds.all_features();
        assert!(fit_forest(
            &f,
            &ForestConfig {
                ntree: 0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(fit_forest(
            &f,
            &ForestConfig {
                mtry: Some(3),
                ..Default::default()
            }
        )
        .is_err());
        assert!(variable_importance(&f, &ForestConfig::default(), 0).is_err());
        let tiny = dataset(vec![vec![1.0]], vec![1.0]);
        assert!(fit_forest(&tiny.all_features(), &ForestConfig::default()).is_err());
    }
}
