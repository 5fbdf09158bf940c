use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::{DistanceMetric, GroupAssignment, GroupKey, Prototype, PrototypeBank, Stage};
use crate::data::EmbeddingSet;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERS: usize = 100;

/// Row indices sorted by (features, label). Sums taken in this order do not
/// depend on how the caller ordered the training rows.
pub(crate) fn canonical_order(set: &EmbeddingSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..set.rows()).collect();
    order.sort_by(|&a, &b| {
        set.row(a)
            .iter()
            .zip(set.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(set.labels()[a].cmp(&set.labels()[b]))
    });
    order
}

/// Mean of every group named in `assignment`, summed in canonical order.
/// Groups with no members do not appear.
pub(crate) fn group_means(set: &EmbeddingSet, order: &[usize], assignment: &[GroupKey]) -> Vec<Prototype> {
    let mut sums: BTreeMap<GroupKey, (Vec<f64>, usize)> = BTreeMap::new();
    for &i in order {
        let (sum, count) = sums
            .entry(assignment[i])
            .or_insert_with(|| (vec![0.0; set.dim()], 0));
        for (s, &v) in sum.iter_mut().zip(set.row(i)) {
            *s += f64::from(v);
        }
        *count += 1;
    }
    sums.into_iter()
        .map(|(key, (mut sum, count))| {
            let n = count as f64;
            sum.iter_mut().for_each(|s| *s /= n);
            Prototype { key, vector: sum }
        })
        .collect()
}

fn check_train(train: &EmbeddingSet) -> Result<()> {
    if train.class_count() == 0 {
        return Err(Error::Format("training set declares zero classes".into()));
    }
    train.require_all_classes()
}

fn check_bank(train: &EmbeddingSet, bank: &PrototypeBank, stage: Stage) -> Result<()> {
    if bank.stage() != stage {
        return Err(Error::Config(format!(
            "expected a {:?} bank, got {:?}",
            stage,
            bank.stage()
        )));
    }
    if bank.class_count() != train.class_count() {
        return Err(Error::Config(format!(
            "bank has {} classes, training set has {}",
            bank.class_count(),
            train.class_count()
        )));
    }
    train.require_dim(bank.dim())
}

/// One prototype per class: the plain mean of that class's rows.
pub fn fit_stage1(train: &EmbeddingSet, metric: DistanceMetric) -> Result<PrototypeBank> {
    check_train(train)?;
    let order = canonical_order(train);
    let assignment: Vec<GroupKey> = train.labels().iter().map(|&c| GroupKey::majority(c)).collect();
    let prototypes = group_means(train, &order, &assignment);
    PrototypeBank::new(Stage::Stage1, metric, train.class_count(), prototypes)
}

/// Splits each class by its Stage-1 prediction: correctly classified rows
/// form the majority group, rows predicted as class `m` form minority group
/// `m`. A class with no correct rows keeps only its minority groups.
pub fn fit_stage2(train: &EmbeddingSet, bank1: &PrototypeBank) -> Result<(PrototypeBank, GroupAssignment)> {
    check_train(train)?;
    check_bank(train, bank1, Stage::Stage1)?;
    let assignment: Vec<GroupKey> = train
        .iter_rows()
        .zip(train.labels())
        .map(|(z, &label)| {
            let (idx, _) = bank1.nearest(z);
            let predicted = bank1.prototypes()[idx].key.class;
            if predicted == label {
                GroupKey::majority(label)
            } else {
                GroupKey::minority(label, predicted)
            }
        })
        .collect();
    let order = canonical_order(train);
    let prototypes = group_means(train, &order, &assignment);
    let bank = PrototypeBank::new(Stage::Stage2, bank1.metric(), train.class_count(), prototypes)?;
    Ok((bank, GroupAssignment(assignment)))
}

/// Moves every row to the nearest prototype of its own class.
pub(crate) fn reassign(train: &EmbeddingSet, bank: &PrototypeBank) -> Vec<GroupKey> {
    train
        .iter_rows()
        .zip(train.labels())
        .map(|(z, &label)| {
            let (idx, _) = bank.nearest_own(label, z);
            bank.prototypes()[idx].key
        })
        .collect()
}

fn objective(train: &EmbeddingSet, bank: &PrototypeBank, assignment: &[GroupKey]) -> f64 {
    train
        .iter_rows()
        .zip(assignment)
        .map(|(z, key)| {
            let p = bank.get(*key).expect("assigned group has a prototype");
            bank.metric().objective(z, &p.vector)
        })
        .sum()
}

fn refine_pass(
    train: &EmbeddingSet,
    order: &[usize],
    bank: &PrototypeBank,
    stage: Stage,
) -> Result<(PrototypeBank, Vec<GroupKey>)> {
    let assignment = reassign(train, bank);
    let prototypes = group_means(train, order, &assignment);
    let refined = PrototypeBank::new(stage, bank.metric(), bank.class_count(), prototypes)?;
    Ok((refined, assignment))
}

/// A single reassign-and-average pass over the Stage-2 groups. Groups that
/// lose all their members are dropped.
pub fn fit_stage3(
    train: &EmbeddingSet,
    bank2: &PrototypeBank,
    assign2: &GroupAssignment,
) -> Result<(PrototypeBank, GroupAssignment)> {
    check_train(train)?;
    check_bank(train, bank2, Stage::Stage2)?;
    if assign2.len() != train.rows() {
        return Err(Error::Config(format!(
            "assignment covers {} rows, training set has {}",
            assign2.len(),
            train.rows()
        )));
    }
    let order = canonical_order(train);
    let (bank, assignment) = refine_pass(train, &order, bank2, Stage::Stage3)?;
    Ok((bank, GroupAssignment(assignment)))
}

#[derive(Debug, Clone)]
pub struct ConvergedFit {
    pub bank: PrototypeBank,
    pub assignment: GroupAssignment,
    /// Number of reassign-and-average passes performed.
    pub iterations: usize,
    /// True if the last reassignment left every row in place.
    pub converged: bool,
    /// Summed within-group loss after each pass (squared L2, or cosine
    /// distance under the cosine metric).
    pub objective_trace: Vec<f64>,
}

/// Repeats the Stage-3 pass until no row changes group or `max_iters`
/// passes have run. With `max_iters == 1` this is exactly [`fit_stage3`].
pub fn fit_converged(train: &EmbeddingSet, bank2: &PrototypeBank, max_iters: usize) -> Result<ConvergedFit> {
    check_train(train)?;
    check_bank(train, bank2, Stage::Stage2)?;
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    let order = canonical_order(train);
    let (mut bank, mut assignment) = refine_pass(train, &order, bank2, Stage::Converged)?;
    let mut trace = vec![objective(train, &bank, &assignment)];
    let mut converged = false;
    while trace.len() < max_iters {
        let next = reassign(train, &bank);
        if next == assignment {
            converged = true;
            break;
        }
        let prototypes = group_means(train, &order, &next);
        bank = PrototypeBank::new(Stage::Converged, bank.metric(), bank.class_count(), prototypes)?;
        assignment = next;
        trace.push(objective(train, &bank, &assignment));
    }
    if !converged && reassign(train, &bank) == assignment {
        converged = true;
    }
    Ok(ConvergedFit {
        bank,
        assignment: GroupAssignment(assignment),
        iterations: trace.len(),
        converged,
        objective_trace: trace,
    })
}
