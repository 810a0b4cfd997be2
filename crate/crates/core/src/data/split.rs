//! Stratified train/test splitting and k-fold plans for multilabel
//! corpora, via iterative stratification: repeatedly take the rarest
//! still-unassigned label and deal its records to the bin hungriest for
//! that label, under exact per-bin capacities. Deterministic for a fixed
//! seed; ties break through the seeded RNG.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{DataError, DataResult};
use crate::rng::{rng_for, SeedRng};

/// Exact partition sizes for an n-record corpus: the test side gets
/// `round(n * test_frac)`, the rest trains. At the 2021 challenge scale
/// (n = 88,253, 20% test) this yields 70,602 / 17,651.
pub fn split_sizes(n: usize, test_frac: f64) -> (usize, usize) {
    let test = ((n as f64) * test_frac).round() as usize;
    let test = test.min(n);
    (n - test, test)
}

/// Assign every item to one of `capacities.len()` bins, stratifying on
/// multilabel targets. `labels[i]` is the multi-hot row for item `i`.
/// Capacities must sum to the item count; every bin is filled exactly.
fn iterative_stratify(
    labels: &[Vec<f64>],
    capacities: &[usize],
    rng: &mut SeedRng,
) -> Vec<usize> {
    let n = labels.len();
    let n_bins = capacities.len();
    assert_eq!(capacities.iter().sum::<usize>(), n, "capacities must cover the corpus");
    let n_classes = labels.first().map_or(0, |l| l.len());
    let total: f64 = n as f64;

    // Remaining desired positives per (bin, class): capacity share of the
    // class's positive count.
    let mut class_pos = vec![0usize; n_classes];
    for row in labels {
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                class_pos[c] += 1;
            }
        }
    }
    let mut desire: Vec<Vec<f64>> = capacities
        .iter()
        .map(|&cap| {
            (0..n_classes)
                .map(|c| (cap as f64 / total) * class_pos[c] as f64)
                .collect()
        })
        .collect();
    let mut room: Vec<usize> = capacities.to_vec();
    let mut assignment = vec![usize::MAX; n];
    let mut remaining_pos = class_pos.clone();

    // Unassigned records per class, consumed rarest-class-first.
    loop {
        // The rarest class that still has unassigned positives.
        let Some(target) = (0..n_classes)
            .filter(|&c| remaining_pos[c] > 0)
            .min_by_key(|&c| remaining_pos[c])
        else {
            break;
        };
        let mut members: Vec<usize> = (0..n)
            .filter(|&i| assignment[i] == usize::MAX && labels[i][target] != 0.0)
            .collect();
        members.shuffle(rng);
        for i in members {
            let bin = pick_bin(&desire, &room, target, rng);
            assignment[i] = bin;
            room[bin] -= 1;
            for (c, &v) in labels[i].iter().enumerate() {
                if v != 0.0 {
                    desire[bin][c] -= 1.0;
                    remaining_pos[c] -= 1;
                }
            }
        }
    }

    // All-negative records: deal them into whatever room is left,
    // shuffled so no bin systematically collects the tail of the corpus.
    let mut rest: Vec<usize> = (0..n).filter(|&i| assignment[i] == usize::MAX).collect();
    rest.shuffle(rng);
    for i in rest {
        let most = (0..n_bins).map(|b| room[b]).max().unwrap();
        let candidates: Vec<usize> = (0..n_bins).filter(|&b| room[b] == most).collect();
        let bin = candidates[rng.gen_range(0..candidates.len())];
        assignment[i] = bin;
        room[bin] -= 1;
    }
    rebalance(labels, capacities, &mut assignment);
    assignment
}

/// Deterministic local-search repair after the greedy deal: while some
/// class's prevalence differs between two bins by more than `TOL`, swap a
/// positive of that class out of the over-represented bin for a negative
/// from the under-represented one, choosing the pair that most reduces the
/// chi-square imbalance over all classes. Greedy dealing places each
/// record under one class's pressure, so records carrying several labels
/// can leave their co-labels skewed; the swaps clean that up without
/// touching bin sizes.
fn rebalance(labels: &[Vec<f64>], capacities: &[usize], assignment: &mut [usize]) {
    const TOL: f64 = 0.01;
    const MAX_SWEEPS: usize = 500;
    const MAX_CANDIDATES: usize = 128;

    let n = labels.len();
    let n_bins = capacities.len();
    let n_classes = labels.first().map_or(0, |l| l.len());
    if n_classes == 0 || n_bins < 2 {
        return;
    }
    let caps: Vec<f64> = capacities.iter().map(|&c| c as f64).collect();
    let mut pos = vec![vec![0.0f64; n_classes]; n_bins];
    let mut class_pos = vec![0.0f64; n_classes];
    for (i, row) in labels.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                pos[assignment[i]][c] += 1.0;
                class_pos[c] += 1.0;
            }
        }
    }
    // Ideal per-bin counts: the bin's capacity share of each class.
    let target =
        |b: usize, c: usize| -> f64 { caps[b] / n as f64 * class_pos[c] };
    let term = |b: usize, count: f64, c: usize| -> f64 {
        let d = count - target(b, c);
        d * d / caps[b]
    };

    for _ in 0..MAX_SWEEPS {
        // Worst prevalence gap over (class, bin pair).
        let mut worst: Option<(f64, usize, usize, usize)> = None;
        for c in 0..n_classes {
            for a in 0..n_bins {
                for b in 0..n_bins {
                    if a == b || caps[a] == 0.0 || caps[b] == 0.0 {
                        continue;
                    }
                    let gap = pos[a][c] / caps[a] - pos[b][c] / caps[b];
                    if gap > worst.map_or(TOL, |w| w.0) {
                        worst = Some((gap, c, a, b));
                    }
                }
            }
        }
        let Some((_, cls, over, under)) = worst else {
            return;
        };

        // Swap candidates, thinned deterministically when plentiful.
        let members = |bin: usize, positive: bool| -> Vec<usize> {
            let all: Vec<usize> = (0..n)
                .filter(|&i| assignment[i] == bin && (labels[i][cls] != 0.0) == positive)
                .collect();
            if all.len() <= MAX_CANDIDATES {
                all
            } else {
                let stride = all.len().div_ceil(MAX_CANDIDATES);
                all.into_iter().step_by(stride).collect()
            }
        };
        let donors = members(over, true);
        let takers = members(under, false);

        // Chi-square change from swapping donor i (over -> under) with
        // taker j (under -> over); only classes where their labels differ
        // contribute.
        let mut best: Option<(f64, usize, usize)> = None;
        for &i in &donors {
            for &j in &takers {
                let mut delta = 0.0;
                for c in 0..n_classes {
                    let li = f64::from(labels[i][c] != 0.0);
                    let lj = f64::from(labels[j][c] != 0.0);
                    if li == lj {
                        continue;
                    }
                    let shift = li - lj;
                    delta += term(over, pos[over][c] - shift, c) - term(over, pos[over][c], c);
                    delta +=
                        term(under, pos[under][c] + shift, c) - term(under, pos[under][c], c);
                }
                if delta < best.map_or(-1e-12, |b| b.0) {
                    best = Some((delta, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else {
            return; // local optimum; nothing improves the worst gap
        };
        for c in 0..n_classes {
            let shift = f64::from(labels[i][c] != 0.0) - f64::from(labels[j][c] != 0.0);
            pos[over][c] -= shift;
            pos[under][c] += shift;
        }
        assignment[i] = under;
        assignment[j] = over;
    }
}

/// Bin with the greatest remaining desire for `class` among bins with
/// room; ties by larger remaining room, then by coin flip.
fn pick_bin(desire: &[Vec<f64>], room: &[usize], class: usize, rng: &mut SeedRng) -> usize {
    let mut best: Option<usize> = None;
    for b in 0..desire.len() {
        if room[b] == 0 {
            continue;
        }
        best = Some(match best {
            None => b,
            Some(cur) => {
                let d = desire[b][class] - desire[cur][class];
                if d > 0.0 {
                    b
                } else if d == 0.0 {
                    if room[b] > room[cur] || (room[b] == room[cur] && rng.gen::<bool>()) {
                        b
                    } else {
                        cur
                    }
                } else {
                    cur
                }
            }
        });
    }
    best.expect("at least one bin must have room")
}

/// Stratified 80/20-style split. `records` pairs each id with its
/// multi-hot label row. Returns (train_ids, test_ids), each sorted.
pub fn stratified_split(
    records: &[(String, Vec<f64>)],
    test_frac: f64,
    seed: u64,
) -> DataResult<(Vec<String>, Vec<String>)> {
    if records.is_empty() {
        return Err(DataError::BadSplit("empty corpus".into()));
    }
    if !(0.0..1.0).contains(&test_frac) {
        return Err(DataError::BadSplit(format!(
            "test_frac must be in [0, 1), got {test_frac}"
        )));
    }
    // Sort by id so the outcome is independent of caller ordering.
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].0.cmp(&records[b].0));
    let labels: Vec<Vec<f64>> = order.iter().map(|&i| records[i].1.clone()).collect();
    let (train_n, test_n) = split_sizes(records.len(), test_frac);
    let mut rng = rng_for(seed, 0x51);
    let assignment = iterative_stratify(&labels, &[train_n, test_n], &mut rng);
    let mut train = Vec::with_capacity(train_n);
    let mut test = Vec::with_capacity(test_n);
    for (slot, &rec) in order.iter().enumerate() {
        match assignment[slot] {
            0 => train.push(records[rec].0.clone()),
            _ => test.push(records[rec].0.clone()),
        }
    }
    train.sort();
    test.sort();
    Ok((train, test))
}

/// Stratified k-fold plan over the training records: returns k
/// (fit_ids, val_ids) pairs whose validation folds partition the input.
pub fn kfold(
    records: &[(String, Vec<f64>)],
    k: usize,
    seed: u64,
) -> DataResult<Vec<(Vec<String>, Vec<String>)>> {
    if k < 2 {
        return Err(DataError::BadSplit(format!("k must be at least 2, got {k}")));
    }
    if k > records.len() {
        return Err(DataError::BadSplit(format!(
            "k = {k} exceeds the {} available records",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].0.cmp(&records[b].0));
    let labels: Vec<Vec<f64>> = order.iter().map(|&i| records[i].1.clone()).collect();
    let n = records.len();
    let capacities: Vec<usize> = (0..k).map(|f| n / k + usize::from(f < n % k)).collect();
    let mut rng = rng_for(seed, 0xF01D);
    let assignment = iterative_stratify(&labels, &capacities, &mut rng);
    let mut folds = vec![(Vec::new(), Vec::new()); k];
    for (slot, &rec) in order.iter().enumerate() {
        let id = &records[rec].0;
        for (f, (fit, val)) in folds.iter_mut().enumerate() {
            if assignment[slot] == f {
                val.push(id.clone());
            } else {
                fit.push(id.clone());
            }
        }
    }
    for (fit, val) in &mut folds {
        fit.sort();
        val.sort();
    }
    Ok(folds)
}

/// Where one record landed in a split plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Test,
    /// Training record with its validation fold index.
    Fold(usize),
}

/// A full experiment partition: the 80/20 test holdout plus the k-fold
/// structure on the training side. Exportable as text, one record per
/// line: `id<TAB>partition<TAB>fold` (fold is `-` for test records).
#[derive(Debug, Clone, Default)]
pub struct SplitPlan {
    pub by_id: BTreeMap<String, Assignment>,
}

impl SplitPlan {
    /// Compose a plan from a stratified split and a fold assignment.
    pub fn build(
        records: &[(String, Vec<f64>)],
        test_frac: f64,
        k: usize,
        seed: u64,
    ) -> DataResult<SplitPlan> {
        let (train_ids, test_ids) = stratified_split(records, test_frac, seed)?;
        let train_set: std::collections::BTreeSet<&String> = train_ids.iter().collect();
        let train_records: Vec<(String, Vec<f64>)> = records
            .iter()
            .filter(|(id, _)| train_set.contains(id))
            .cloned()
            .collect();
        let folds = kfold(&train_records, k, seed)?;
        let mut by_id = BTreeMap::new();
        for id in test_ids {
            by_id.insert(id, Assignment::Test);
        }
        for (f, (_, val)) in folds.iter().enumerate() {
            for id in val {
                by_id.insert(id.clone(), Assignment::Fold(f));
            }
        }
        Ok(SplitPlan { by_id })
    }

    pub fn n_folds(&self) -> usize {
        self.by_id
            .values()
            .filter_map(|a| match a {
                Assignment::Fold(f) => Some(f + 1),
                Assignment::Test => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn test_ids(&self) -> Vec<&str> {
        self.by_id
            .iter()
            .filter(|(_, a)| matches!(a, Assignment::Test))
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn val_ids(&self, fold: usize) -> Vec<&str> {
        self.by_id
            .iter()
            .filter(|(_, a)| matches!(a, Assignment::Fold(f) if *f == fold))
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fit_ids(&self, fold: usize) -> Vec<&str> {
        self.by_id
            .iter()
            .filter(|(_, a)| matches!(a, Assignment::Fold(f) if *f != fold))
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn save(&self, path: &Path) -> DataResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "id\tpartition\tfold")?;
        for (id, a) in &self.by_id {
            match a {
                Assignment::Test => writeln!(w, "{id}\ttest\t-")?,
                Assignment::Fold(f) => writeln!(w, "{id}\ttrain\t{f}")?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> DataResult<SplitPlan> {
        let fname = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let mut by_id = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line != "id\tpartition\tfold" {
                    return Err(super::parse_err(&fname, 1, "bad split-plan header"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let err = |msg: &str| super::parse_err(&fname, lineno + 1, msg);
            if parts.len() != 3 {
                return Err(err("expected id<TAB>partition<TAB>fold"));
            }
            let a = match (parts[1], parts[2]) {
                ("test", "-") => Assignment::Test,
                ("train", f) => Assignment::Fold(
                    f.parse().map_err(|_| err("bad fold index"))?,
                ),
                _ => return Err(err("partition must be train or test")),
            };
            if by_id.insert(parts[0].to_string(), a).is_some() {
                return Err(err("duplicate record id"));
            }
        }
        Ok(SplitPlan { by_id })
    }
}
