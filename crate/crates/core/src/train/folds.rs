//! Cross-validation plans: outer test folds, optional training-set caps
//! and inner folds for hyperparameter selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::{domain, RngStream};
use crate::volume::Manifest;

pub const OUTER_FOLDS: usize = 5;
pub const INNER_FOLDS: usize = 5;

/// What a fold strategy sees of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldItem {
    pub id: String,
    pub site: String,
    pub label: u8,
}

/// Splits samples into outer test folds. Returns one index list per fold.
pub trait FoldStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn outer_test_sets(&self, items: &[FoldItem], k: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>>;
}

/// Deals `groups` (each shuffled) round-robin over `k` folds, continuing the
/// dealing position across groups so fold sizes differ by at most one.
fn deal(groups: Vec<Vec<usize>>, k: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for mut g in groups {
        rng.shuffle(&mut g);
        for idx in g {
            folds[pos % k].push(idx);
            pos += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

fn by_key<K: Ord>(items: &[FoldItem], key: impl Fn(&FoldItem) -> K) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups.entry(key(it)).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Stratified k-fold over label indices in `subset` (positions into
/// `items`). Returns test sets as positions into `subset`.
fn stratified_by_label(items: &[FoldItem], subset: &[usize], k: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let sub: Vec<FoldItem> = subset.iter().map(|&i| items[i].clone()).collect();
    deal(by_key(&sub, |it| it.label), k, rng)
}

/// Outer folds stratified jointly on (label, site) when every such stratum
/// has at least `k` members, else on label alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct StratifiedNested;

impl FoldStrategy for StratifiedNested {
    fn name(&self) -> &'static str {
        "stratified_nested"
    }

    fn outer_test_sets(&self, items: &[FoldItem], k: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
        if items.len() < k {
            return Err(Error::Parameter(format!("{} samples cannot fill {k} folds", items.len())));
        }
        let joint = by_key(items, |it| (it.label, it.site.clone()));
        let groups = if joint.iter().all(|g| g.len() >= k) {
            joint
        } else {
            by_key(items, |it| it.label)
        };
        Ok(deal(groups, k, rng))
    }
}

/// Each fold holds out a disjoint group of whole sites.
#[derive(Debug, Clone, Copy, Default)]
pub struct LeaveSiteOut;

impl FoldStrategy for LeaveSiteOut {
    fn name(&self) -> &'static str {
        "leave_site_out"
    }

    fn outer_test_sets(&self, items: &[FoldItem], k: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
        let mut sites: Vec<&str> = items.iter().map(|it| it.site.as_str()).collect();
        sites.sort_unstable();
        sites.dedup();
        if sites.len() < k {
            return Err(Error::Parameter(format!(
                "leave_site_out needs at least {k} sites, found {}",
                sites.len()
            )));
        }
        rng.shuffle(&mut sites);
        let group_of: BTreeMap<&str, usize> = sites.iter().enumerate().map(|(i, s)| (*s, i % k)).collect();
        let mut folds = vec![Vec::new(); k];
        for (i, it) in items.iter().enumerate() {
            folds[group_of[it.site.as_str()]].push(i);
        }
        Ok(folds)
    }
}

pub type FoldRegistry = Registry<dyn FoldStrategy, ()>;

pub fn registry() -> FoldRegistry {
    let mut reg: FoldRegistry = Registry::new("fold strategy");
    reg.register("stratified_nested", |_| Ok(Box::new(StratifiedNested)))
        .register("leave_site_out", |_| Ok(Box::new(LeaveSiteOut)));
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    /// Training ids after any `n_target` cap (union of every inner split).
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub inner: Vec<InnerSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub strategy: String,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub seed: u64,
    pub n_target: Option<usize>,
    pub folds: Vec<Fold>,
}

/// Label-stratified deterministic subsample of `pool` (positions into
/// `items`) down to `n` elements, by largest-remainder quotas.
fn subsample(items: &[FoldItem], pool: &[usize], n: usize, rng: &mut RngStream) -> Vec<usize> {
    if n >= pool.len() {
        return pool.to_vec();
    }
    let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for &i in pool {
        groups.entry(items[i].label).or_default().push(i);
    }
    let total = pool.len() as f64;
    let mut quotas: Vec<(u8, usize, f64)> = groups
        .iter()
        .map(|(&l, g)| {
            let exact = n as f64 * g.len() as f64 / total;
            (l, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut remaining = n - quotas.iter().map(|q| q.1).sum::<usize>();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &o in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[o].1 < groups[&quotas[o].0].len() {
            quotas[o].1 += 1;
            remaining -= 1;
        }
    }
    let mut out = Vec::with_capacity(n);
    for (label, q, _) in quotas {
        let mut g = groups[&label].clone();
        rng.shuffle(&mut g);
        out.extend_from_slice(&g[..q]);
    }
    out.sort_unstable();
    out
}

pub fn fold_items(manifest: &Manifest) -> Result<Vec<FoldItem>> {
    manifest
        .samples
        .iter()
        .map(|s| {
            let label = s
                .label
                .ok_or_else(|| Error::Validation(format!("sample '{}' has no label", s.id)))?;
            Ok(FoldItem {
                id: s.id.clone(),
                site: s.site.clone(),
                label,
            })
        })
        .collect()
}

pub fn make_folds(manifest: &Manifest, strategy: &str, seed: u64, n_target: Option<usize>) -> Result<FoldPlan> {
    let items = fold_items(manifest)?;
    make_folds_for(&items, strategy, seed, n_target)
}

pub fn make_folds_for(items: &[FoldItem], strategy: &str, seed: u64, n_target: Option<usize>) -> Result<FoldPlan> {
    let strat = registry().build(strategy, &())?;
    if items.len() < OUTER_FOLDS {
        return Err(Error::Parameter(format!(
            "{} samples cannot fill {OUTER_FOLDS} folds",
            items.len()
        )));
    }
    let mut rng = RngStream::from_key(&[domain::FOLDS, seed]);
    let tests = strat.outer_test_sets(items, OUTER_FOLDS, &mut rng)?;

    let ids = |idx: &[usize]| idx.iter().map(|&i| items[i].id.clone()).collect::<Vec<_>>();
    let mut folds = Vec::with_capacity(tests.len());
    for (f, test) in tests.iter().enumerate() {
        let mut in_test = vec![false; items.len()];
        test.iter().for_each(|&i| in_test[i] = true);
        let mut train: Vec<usize> = (0..items.len()).filter(|&i| !in_test[i]).collect();
        if let Some(n) = n_target {
            train = subsample(items, &train, n, &mut rng);
        }
        if train.len() < INNER_FOLDS {
            return Err(Error::Parameter(format!(
                "fold {f}: {} training samples cannot fill {INNER_FOLDS} inner folds",
                train.len()
            )));
        }
        let inner_tests = stratified_by_label(items, &train, INNER_FOLDS, &mut rng);
        let inner = inner_tests
            .iter()
            .map(|val_pos| {
                let mut is_val = vec![false; train.len()];
                val_pos.iter().for_each(|&p| is_val[p] = true);
                let val: Vec<usize> = val_pos.iter().map(|&p| train[p]).collect();
                let tr: Vec<usize> = (0..train.len()).filter(|&p| !is_val[p]).map(|p| train[p]).collect();
                InnerSplit { train: ids(&tr), val: ids(&val) }
            })
            .collect();
        folds.push(Fold {
            index: f,
            train: ids(&train),
            test: ids(test),
            inner,
        });
    }
    Ok(FoldPlan {
        strategy: strat.name().to_string(),
        outer_folds: OUTER_FOLDS,
        inner_folds: INNER_FOLDS,
        seed,
        n_target,
        folds,
    })
}
