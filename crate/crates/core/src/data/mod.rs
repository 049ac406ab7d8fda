//! Datasets, task views and task-suite construction.
//!
//! Tasks never copy pixel data: a [`TaskView`] is a shared base dataset plus
//! an index subset, an optional feature permutation and an optional label map.

pub mod idx;
pub mod suite;

use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{arg_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use idx::{load_idx, load_mnist, parse_images, parse_labels, MNIST_FILES};
pub use suite::{
    make_permuted_suite, make_split_suite, make_synthetic_suite, SuiteKind, SuiteManifest, SyntheticSpec, Task,
    TaskManifest, TaskSuite,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.shape().len() != 2 || images.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "images {:?} vs {} labels",
                images.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Consistency(format!("label {bad} ≥ class count {class_count}")));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            class_count,
        })
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }
}

/// Feature permutation: output feature `j` reads input feature `perm[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn random(n: usize, rng: &mut Rng) -> Self {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(rng);
        Self(p)
    }

    pub fn from_vec(p: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; p.len()];
        for &i in &p {
            if i >= p.len() || std::mem::replace(&mut seen[i], true) {
                return Err(arg_err!("not a permutation of 0..{}", p.len()));
            }
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (j, &p) in self.0.iter().enumerate() {
            inv[p] = j;
        }
        Self(inv)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|&p| x[p]).collect()
    }
}

/// A task-specific window onto a shared dataset.
#[derive(Debug, Clone)]
pub struct TaskView {
    base: Arc<Dataset>,
    indices: Arc<Vec<usize>>,
    permutation: Option<Arc<Permutation>>,
    /// Base label → task label; `None` entries never occur inside `indices`.
    label_map: Option<Arc<Vec<Option<usize>>>>,
    classes: usize,
}

impl TaskView {
    pub fn full(base: Arc<Dataset>) -> Self {
        let classes = base.class_count();
        Self {
            indices: Arc::new((0..base.len()).collect()),
            base,
            permutation: None,
            label_map: None,
            classes,
        }
    }

    pub fn with_permutation(mut self, p: Arc<Permutation>) -> Result<Self> {
        if p.len() != self.base.dim() {
            return Err(arg_err!("permutation of {} features for {}-dim data", p.len(), self.base.dim()));
        }
        self.permutation = if p.is_identity() { None } else { Some(p) };
        Ok(self)
    }

    /// Keep samples whose base label is in `group`, relabeled to the position in `group`.
    pub fn restrict_labels(base: Arc<Dataset>, group: &[usize]) -> Result<Self> {
        let mut map = vec![None; base.class_count()];
        for (k, &c) in group.iter().enumerate() {
            let slot = map
                .get_mut(c)
                .ok_or_else(|| arg_err!("label {c} not present in {}", base.name()))?;
            if slot.replace(k).is_some() {
                return Err(arg_err!("label {c} repeated within a group"));
            }
        }
        let indices: Vec<usize> = base
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| map[l].is_some())
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            base,
            indices: Arc::new(indices),
            permutation: None,
            label_map: Some(Arc::new(map)),
            classes: group.len(),
        })
    }

    /// View over positions `pos` of this view.
    pub fn subset(&self, pos: &[usize]) -> Self {
        Self {
            indices: Arc::new(pos.iter().map(|&p| self.indices[p]).collect()),
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn base(&self) -> &Arc<Dataset> {
        &self.base
    }

    pub fn permutation(&self) -> Option<&Permutation> {
        self.permutation.as_deref()
    }

    /// Base-dataset row of each sample.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn label(&self, pos: usize) -> usize {
        let l = self.base.labels()[self.indices[pos]];
        match &self.label_map {
            Some(m) => m[l].expect("view only holds mapped labels"),
            None => l,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|p| self.label(p)).collect()
    }

    /// Features and labels of the samples at positions `pos`.
    pub fn gather(&self, pos: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if pos.is_empty() {
            return Err(arg_err!("cannot gather an empty selection"));
        }
        let d = self.dim();
        let src = self.base.images().data();
        let mut out = Vec::with_capacity(pos.len() * d);
        for &p in pos {
            let i = *self
                .indices
                .get(p)
                .ok_or_else(|| arg_err!("position {p} outside view of {}", self.len()))?;
            let row = &src[i * d..(i + 1) * d];
            match &self.permutation {
                Some(perm) => out.extend(perm.as_slice().iter().map(|&j| row[j])),
                None => out.extend_from_slice(row),
            }
        }
        let labels = pos.iter().map(|&p| self.label(p)).collect();
        Ok((Tensor::from_vec(&[pos.len(), d], out)?, labels))
    }

    /// Copy the view into a standalone dataset.
    pub fn materialize(&self, name: &str) -> Result<Dataset> {
        let all: Vec<usize> = (0..self.len()).collect();
        let (x, y) = self.gather(&all)?;
        Dataset::new(name, x, y, self.classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for p in 0..self.len() {
            counts[self.label(p)] += 1;
        }
        counts
    }
}

/// Seeded per-class split. Returns `(train, valid)` positions into `labels`,
/// each in ascending order.
///
/// The validation size of every class is its proportional share, with the
/// leftover units going to the classes with the largest fractional parts
/// (ties to the lower class index).
pub fn stratified_split(
    labels: &[usize],
    classes: usize,
    valid_fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(arg_err!("validation fraction must lie in (0, 1), got {valid_fraction}"));
    }
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| arg_err!("label {l} ≥ class count {classes}"))?
            .push(i);
    }
    let min_size = (1.0 / valid_fraction).ceil() as usize;
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < min_size {
            return Err(arg_err!(
                "class {c} has {} samples; a {valid_fraction} split needs at least {min_size}",
                members.len()
            ));
        }
    }

    let exact: Vec<f64> = by_class.iter().map(|m| m.len() as f64 * valid_fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|&q| (q + 1e-9).floor() as usize).collect();
    let target = (labels.len() as f64 * valid_fraction).round() as usize;
    let assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..classes).filter(|&c| !by_class[c].is_empty()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - quota[a] as f64;
        let rb = exact[b] - quota[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(target.saturating_sub(assigned)) {
        quota[c] += 1;
    }

    let mut train = Vec::with_capacity(labels.len());
    let mut valid = Vec::with_capacity(target);
    for (members, q) in by_class.iter_mut().zip(quota) {
        members.shuffle(rng);
        valid.extend_from_slice(&members[..q]);
        train.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn toy(n_per_class: usize, classes: usize) -> Dataset {
        let n = n_per_class * classes;
        let images = Tensor::from_vec(&[n, 3], (0..n * 3).map(|v| v as f64).collect()).unwrap();
        let labels = (0..n).map(|i| i % classes).collect();
        Dataset::new("toy", images, labels, classes).unwrap()
    }

    #[test]
    fn exact_fifteen_percent() {
        let ds = toy(100, 4);
        let (train, valid) = stratified_split(ds.labels(), 4, 0.15, &mut stream(1, Stream::Split, 0)).unwrap();
        assert_eq!(valid.len(), 60);
        assert_eq!(train.len() + valid.len(), 400);
        for c in 0..4 {
            assert_eq!(valid.iter().filter(|&&i| ds.labels()[i] == c).count(), 15);
        }
    }

    #[test]
    fn largest_remainder_allocation() {
        // 7 samples of class 0, 13 of class 1, fraction 0.25: exact 1.75 and 3.25, total 5
        let labels: Vec<usize> = (0..20).map(|i| usize::from(i >= 7)).collect();
        let (_, valid) = stratified_split(&labels, 2, 0.25, &mut stream(0, Stream::Split, 0)).unwrap();
        assert_eq!(valid.len(), 5);
        assert_eq!(valid.iter().filter(|&&i| labels[i] == 0).count(), 2);
    }

    #[test]
    fn tiny_class_is_rejected() {
        let labels = vec![0, 0, 0, 1];
        assert!(stratified_split(&labels, 2, 0.15, &mut stream(0, Stream::Split, 0)).is_err());
    }

    #[test]
    fn permutation_inverse() {
        let p = Permutation::random(10, &mut stream(2, Stream::Suite, 0));
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(p.inverse().apply(&p.apply(&x)), x);
        assert!(Permutation::from_vec(vec![0, 0]).is_err());
    }

    #[test]
    fn views_share_and_permute() {
        let base = Arc::new(toy(2, 2));
        let p = Arc::new(Permutation::from_vec(vec![2, 0, 1]).unwrap());
        let v = TaskView::full(base.clone()).with_permutation(p).unwrap();
        let (x, y) = v.gather(&[1]).unwrap();
        assert_eq!(x.data(), &[5.0, 3.0, 4.0]);
        assert_eq!(y, vec![1]);
        let r = TaskView::restrict_labels(base, &[1]).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.labels(), vec![0, 0]);
        assert_eq!(r.indices(), &[1, 3]);
    }
}
