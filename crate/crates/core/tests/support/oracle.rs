//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code paths it checks.
#![allow(dead_code)]

use std::collections::HashMap;

/// Brute-force kNN over `(field_id, class_id, vector)` references: every
/// distance, a full sort, then the vote with the documented tie rules.
pub struct BruteKnn<'a> {
    pub refs: &'a [(i32, u8, Vec<f64>)],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub neighbor_ids: Vec<i32>,
    pub distances: Vec<f64>,
    pub predicted: u8,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
    }
    for x in a {
        na += x * x;
    }
    for x in b {
        nb += x * x;
    }
    (1.0 - dot / (na * nb).sqrt()).clamp(0.0, 2.0)
}

impl BruteKnn<'_> {
    pub fn predict(&self, query: &[f64], k: usize) -> OracleResult {
        let mut all: Vec<(f64, i32, u8)> = self
            .refs
            .iter()
            .map(|(id, c, v)| (cosine(query, v), *id, *c))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let top = &all[..k];
        let mut count: HashMap<u8, usize> = HashMap::new();
        let mut sum: HashMap<u8, f64> = HashMap::new();
        for (d, _, c) in top {
            *count.entry(*c).or_default() += 1;
            *sum.entry(*c).or_default() += d;
        }
        let mut best: Option<u8> = None;
        for c in 0u8..=255 {
            let Some(&n) = count.get(&c) else { continue };
            best = match best {
                None => Some(c),
                Some(b) => {
                    let nb = count[&b];
                    if n > nb || (n == nb && sum[&c] < sum[&b]) {
                        Some(c)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        OracleResult {
            neighbor_ids: top.iter().map(|t| t.1).collect(),
            distances: top.iter().map(|t| t.0).collect(),
            predicted: best.unwrap(),
        }
    }
}

/// Fold-by-fold cross-validation with the brute-force classifier.
/// Returns a `classes × classes` confusion matrix indexed by position in
/// `classes`.
pub fn cross_validate(
    data: &[(i32, u8, Vec<f64>)],
    fold_of: &HashMap<i32, usize>,
    folds: usize,
    classes: &[u8],
    k: usize,
) -> Vec<Vec<u64>> {
    let pos = |c: u8| classes.iter().position(|x| *x == c).unwrap();
    let mut cm = vec![vec![0u64; classes.len()]; classes.len()];
    for f in 0..folds {
        let train: Vec<(i32, u8, Vec<f64>)> = data
            .iter()
            .filter(|d| fold_of[&d.0] != f)
            .cloned()
            .collect();
        let knn = BruteKnn { refs: &train };
        for d in data.iter().filter(|d| fold_of[&d.0] == f) {
            let p = knn.predict(&d.2, k).predicted;
            cm[pos(d.1)][pos(p)] += 1;
        }
    }
    cm
}

/// Gap filling by straight lines between valid neighbours, constant beyond
/// the first/last valid entry.
pub fn linear_gap_fill(series: &[Option<f64>]) -> Vec<f64> {
    let n = series.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        if let Some(v) = series[i] {
            out[i] = v;
            continue;
        }
        let left = (0..i).rev().find(|&j| series[j].is_some());
        let right = (i + 1..n).find(|&j| series[j].is_some());
        out[i] = match (left, right) {
            (Some(l), Some(r)) => {
                let (a, b) = (series[l].unwrap(), series[r].unwrap());
                a + (b - a) * ((i - l) as f64 / (r - l) as f64)
            }
            (Some(l), None) => series[l].unwrap(),
            (None, Some(r)) => series[r].unwrap(),
            (None, None) => panic!("no valid entries"),
        };
    }
    out
}

/// Percentile by linear interpolation of order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    if lo + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[lo] + (h - lo as f64) * (v[lo + 1] - v[lo])
}

/// Two-pass population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Median by full sort.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}
