//! Task suites: permuted, label-split and synthetic Gaussian-blob tasks.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{stratified_split, Dataset, Permutation, TaskView};
use crate::error::{arg_err, Result};
use crate::rng::{stream, Rng, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    Permuted,
    Split,
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub name: String,
    pub train: TaskView,
    pub valid: TaskView,
    pub test: TaskView,
}

impl Task {
    pub fn classes(&self) -> usize {
        self.train.classes()
    }

    fn from_train_test(name: String, train: TaskView, test: TaskView, valid_fraction: f64, rng: &mut Rng) -> Result<Self> {
        let (tr, va) = stratified_split(&train.labels(), train.classes(), valid_fraction, rng)?;
        Ok(Self {
            name,
            valid: train.subset(&va),
            train: train.subset(&tr),
            test,
        })
    }

    fn manifest(&self, group: Option<Vec<usize>>) -> TaskManifest {
        TaskManifest {
            name: self.name.clone(),
            classes: self.classes(),
            labels: group,
            permutation_sha256: self.train.permutation().map(permutation_digest),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskSuite {
    pub kind: SuiteKind,
    pub seed: u64,
    pub tasks: Vec<Task>,
    manifest: SuiteManifest,
}

impl TaskSuite {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tasks[0].train.dim()
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(Task::classes).collect()
    }

    pub fn manifest(&self) -> &SuiteManifest {
        &self.manifest
    }

    /// The first `t` tasks as their own suite.
    pub fn prefix(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.tasks.len() {
            return Err(arg_err!("prefix of {t} tasks from a suite of {}", self.tasks.len()));
        }
        let mut manifest = self.manifest.clone();
        manifest.tasks.truncate(t);
        Ok(Self {
            kind: self.kind,
            seed: self.seed,
            tasks: self.tasks[..t].to_vec(),
            manifest,
        })
    }
}

/// Reproducible description of a suite: task order, sizes and generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub kind: SuiteKind,
    pub seed: u64,
    pub dim: usize,
    pub valid_fraction: f64,
    pub tasks: Vec<TaskManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub name: String,
    pub classes: usize,
    /// Base labels of a split task, in task-label order.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub labels: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub permutation_sha256: Option<String>,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

fn permutation_digest(p: &Permutation) -> String {
    let mut h = Sha256::new();
    for &i in p.as_slice() {
        h.update((i as u32).to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn check_pair(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.dim() != test.dim() || train.class_count() != test.class_count() {
        return Err(arg_err!(
            "train ({} dims, {} classes) and test ({} dims, {} classes) disagree",
            train.dim(),
            train.class_count(),
            test.dim(),
            test.class_count()
        ));
    }
    if train.is_empty() || test.is_empty() {
        return Err(arg_err!("empty base dataset"));
    }
    Ok(())
}

fn finish(kind: SuiteKind, seed: u64, valid_fraction: f64, tasks: Vec<Task>, groups: Vec<Option<Vec<usize>>>) -> TaskSuite {
    let manifest = SuiteManifest {
        kind,
        seed,
        dim: tasks[0].train.dim(),
        valid_fraction,
        tasks: tasks.iter().zip(groups).map(|(t, g)| t.manifest(g)).collect(),
    };
    TaskSuite {
        kind,
        seed,
        tasks,
        manifest,
    }
}

/// `t_count` tasks, each a fixed seeded pixel permutation of the base data.
/// With `identity_first` the first task sees the unpermuted images.
pub fn make_permuted_suite(
    train: &Arc<Dataset>,
    test: &Arc<Dataset>,
    t_count: usize,
    seed: u64,
    identity_first: bool,
    valid_fraction: f64,
) -> Result<TaskSuite> {
    check_pair(train, test)?;
    if t_count == 0 {
        return Err(arg_err!("a suite needs at least one task"));
    }
    let d = train.dim();
    let mut tasks = Vec::with_capacity(t_count);
    for k in 0..t_count {
        let perm = if k == 0 && identity_first {
            Permutation::identity(d)
        } else {
            Permutation::random(d, &mut stream(seed, Stream::Suite, k as u64))
        };
        let perm = Arc::new(perm);
        let tr = TaskView::full(train.clone()).with_permutation(perm.clone())?;
        let te = TaskView::full(test.clone()).with_permutation(perm)?;
        tasks.push(Task::from_train_test(
            format!("permuted-{k}"),
            tr,
            te,
            valid_fraction,
            &mut stream(seed, Stream::Split, k as u64),
        )?);
    }
    Ok(finish(SuiteKind::Permuted, seed, valid_fraction, tasks, vec![None; t_count]))
}

/// One task per label group; labels are re-indexed to positions in the group.
pub fn make_split_suite(
    train: &Arc<Dataset>,
    test: &Arc<Dataset>,
    groups: &[Vec<usize>],
    seed: u64,
    valid_fraction: f64,
) -> Result<TaskSuite> {
    check_pair(train, test)?;
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(arg_err!("label groups must be non-empty"));
    }
    let mut owner = vec![None; train.class_count()];
    for (k, g) in groups.iter().enumerate() {
        for &c in g {
            let slot = owner
                .get_mut(c)
                .ok_or_else(|| arg_err!("label {c} outside 0..{}", train.class_count()))?;
            if let Some(prev) = slot.replace(k) {
                return Err(arg_err!("label {c} appears in groups {prev} and {k}"));
            }
        }
    }
    let mut tasks = Vec::with_capacity(groups.len());
    for (k, g) in groups.iter().enumerate() {
        let tr = TaskView::restrict_labels(train.clone(), g)?;
        let te = TaskView::restrict_labels(test.clone(), g)?;
        if tr.is_empty() || te.is_empty() {
            return Err(arg_err!("label group {g:?} selects no samples"));
        }
        let name = format!("split-{}", g.iter().map(usize::to_string).collect::<Vec<_>>().join(""));
        tasks.push(Task::from_train_test(name, tr, te, valid_fraction, &mut stream(seed, Stream::Split, k as u64))?);
    }
    let groups = groups.iter().cloned().map(Some).collect();
    Ok(finish(SuiteKind::Split, seed, valid_fraction, tasks, groups))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub classes: usize,
    pub dim: usize,
    /// Distance of every class mean from the origin.
    pub separation: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

/// Class means on a sphere of radius `separation`: mutually orthogonal when
/// `classes ≤ dim`, otherwise independent random directions.
fn class_means(classes: usize, dim: usize, separation: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while means.len() < classes {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if classes <= dim {
            for m in &means {
                let dot: f64 = v.iter().zip(m).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(m).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        means.push(v.into_iter().map(|a| a / norm).collect());
    }
    for m in &mut means {
        m.iter_mut().for_each(|a| *a *= separation);
    }
    means
}

fn blobs(name: String, means: &[Vec<f64>], per_class: usize, rng: &mut Rng) -> Result<Dataset> {
    let classes = means.len();
    let dim = means[0].len();
    let n = per_class * classes;
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        x.extend(means[c].iter().map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            m + z
        }));
        y.push(c);
    }
    Dataset::new(name, Tensor::from_vec(&[n, dim], x)?, y, classes)
}

/// Isotropic unit-variance Gaussian blobs, fresh means per task.
pub fn make_synthetic_suite(spec: &SyntheticSpec, seed: u64, valid_fraction: f64) -> Result<TaskSuite> {
    if spec.tasks == 0 || spec.classes < 2 || spec.dim == 0 {
        return Err(arg_err!("synthetic suite needs ≥ 1 task, ≥ 2 classes and dim ≥ 1"));
    }
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        return Err(arg_err!("separation must be finite and ≥ 0, got {}", spec.separation));
    }
    if spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(arg_err!("synthetic suite needs samples in every split"));
    }
    let mut tasks = Vec::with_capacity(spec.tasks);
    for k in 0..spec.tasks {
        let mut rng = stream(seed, Stream::Suite, k as u64);
        let means = class_means(spec.classes, spec.dim, spec.separation, &mut rng);
        let train = Arc::new(blobs(format!("blobs-{k}-train"), &means, spec.train_per_class, &mut rng)?);
        let test = Arc::new(blobs(format!("blobs-{k}-test"), &means, spec.test_per_class, &mut rng)?);
        tasks.push(Task::from_train_test(
            format!("blobs-{k}"),
            TaskView::full(train),
            TaskView::full(test),
            valid_fraction,
            &mut stream(seed, Stream::Split, k as u64),
        )?);
    }
    Ok(finish(SuiteKind::Synthetic, seed, valid_fraction, tasks, vec![None; spec.tasks]))
}
