//! In-memory datasets: per-modality feature tables, multi-hot labels, seeded
//! train/validation splits and a synthetic complementary-modality generator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngState;

/// Prevalence of each label in [`synth_generate`].
pub const SYNTH_PREVALENCE: f64 = 0.3;

fn check_unique(ids: &[u32]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(*id) {
            return Err(Error::Validation(format!("duplicate sample id {id}")));
        }
    }
    Ok(())
}

/// One modality's embeddings, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    ids: Vec<u32>,
    features: Matrix<f32>,
}

impl FeatureTable {
    pub fn new(ids: Vec<u32>, features: Matrix<f32>) -> Result<Self> {
        if ids.len() != features.rows() {
            return Err(Error::Validation(format!(
                "{} ids for {} feature rows",
                ids.len(),
                features.rows()
            )));
        }
        check_unique(&ids)?;
        if let Some(pos) = features.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "feature at row {} column {}",
                pos / features.cols().max(1),
                pos % features.cols().max(1)
            )));
        }
        Ok(FeatureTable { ids, features })
    }

    /// Ids `0..n`.
    pub fn with_sequential_ids(features: Matrix<f32>) -> Result<Self> {
        let ids = (0..features.rows() as u32).collect();
        Self::new(ids, features)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix<f32> {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        FeatureTable {
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            features: self.features.select_rows(rows),
        }
    }
}

/// Multi-hot targets; rows may be all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    ids: Vec<u32>,
    targets: Matrix<f32>,
}

impl LabelMatrix {
    pub fn new(ids: Vec<u32>, targets: Matrix<f32>) -> Result<Self> {
        if targets.cols() == 0 {
            return Err(Error::Parameter(
                "label matrix needs at least one class".into(),
            ));
        }
        if ids.len() != targets.rows() {
            return Err(Error::Validation(format!(
                "{} ids for {} label rows",
                ids.len(),
                targets.rows()
            )));
        }
        check_unique(&ids)?;
        if let Some(v) = targets.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::Validation(format!("label value {v} is not 0 or 1")));
        }
        Ok(LabelMatrix { ids, targets })
    }

    /// Builds the multi-hot matrix from per-row class index lists.
    pub fn from_sets(ids: Vec<u32>, sets: &[Vec<usize>], k: usize) -> Result<Self> {
        let mut targets = Matrix::zeros(sets.len(), k);
        for (i, set) in sets.iter().enumerate() {
            for &c in set {
                if c >= k {
                    return Err(Error::ClassIndex {
                        index: c,
                        classes: k,
                    });
                }
                targets.set(i, c, 1.0);
            }
        }
        Self::new(ids, targets)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn targets(&self) -> &Matrix<f32> {
        &self.targets
    }

    pub fn num_classes(&self) -> usize {
        self.targets.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sets(&self) -> Vec<Vec<usize>> {
        crate::metrics::label_sets(&self.targets)
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        LabelMatrix {
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            targets: self.targets.select_rows(rows),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_train: usize,
    pub seed: u64,
}

/// Modalities plus labels sharing one row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub modalities: Vec<FeatureTable>,
    pub labels: LabelMatrix,
}

fn check_alignment(modalities: &[FeatureTable], labels: &LabelMatrix) -> Result<()> {
    for (m, table) in modalities.iter().enumerate() {
        if table.ids() != labels.ids() {
            return Err(Error::Alignment(format!(
                "modality {m} ids differ from label ids"
            )));
        }
    }
    Ok(())
}

/// Seeded permutation of the rows; the first `n_train` go to training.
pub fn split(
    modalities: &[FeatureTable],
    labels: &LabelMatrix,
    spec: SplitSpec,
) -> Result<(Partition, Partition)> {
    check_alignment(modalities, labels)?;
    let n = labels.len();
    if spec.n_train == 0 || spec.n_train > n {
        return Err(Error::Parameter(format!(
            "n_train {} must be in 1..={n}",
            spec.n_train
        )));
    }
    let perm = RngState::new(spec.seed).permutation(n);
    let (tr, va) = perm.split_at(spec.n_train);
    let part = |rows: &[usize]| Partition {
        modalities: modalities.iter().map(|m| m.select(rows)).collect(),
        labels: labels.select(rows),
    };
    Ok((part(tr), part(va)))
}

/// Image features, text features and labels for one set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub image: FeatureTable,
    pub text: FeatureTable,
    pub labels: LabelMatrix,
}

impl Bundle {
    pub fn new(image: FeatureTable, text: FeatureTable, labels: LabelMatrix) -> Result<Self> {
        check_alignment(&[image.clone(), text.clone()], &labels)?;
        Ok(Bundle {
            image,
            text,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    pub fn split(&self, spec: SplitSpec) -> Result<(Bundle, Bundle)> {
        let (tr, va) = split(&[self.image.clone(), self.text.clone()], &self.labels, spec)?;
        let into = |p: Partition| {
            let mut m = p.modalities.into_iter();
            Bundle {
                image: m.next().expect("image"),
                text: m.next().expect("text"),
                labels: p.labels,
            }
        };
        Ok((into(tr), into(va)))
    }
}

/// Generates a dataset whose two modalities carry disjoint halves of the
/// label signal.
///
/// Each label is an independent Bernoulli(0.3) draw. Modality A is
/// `Σ_{c < K/2} y_c·e_c + noise` and modality B is
/// `Σ_{c ≥ K/2} y_c·e'_c + noise` with fixed standard-normal encoding
/// vectors `e_c`, `e'_c ∈ ℝᵈ` and isotropic Gaussian noise of scale
/// `noise_std`.
pub fn synth_generate(
    n: usize,
    d: usize,
    k: usize,
    noise_std: f64,
    seed: u64,
) -> Result<(FeatureTable, FeatureTable, LabelMatrix)> {
    if k == 0 || !k.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "class count {k} must be even and positive"
        )));
    }
    if d < k / 2 {
        return Err(Error::Parameter(format!(
            "dimension {d} must be at least {}",
            k / 2
        )));
    }
    if n == 0 || !(noise_std >= 0.0) {
        return Err(Error::Parameter("need n ≥ 1 and noise_std ≥ 0".into()));
    }
    let half = k / 2;
    let root = RngState::new(seed);
    let enc_a: Matrix<f64> = root.derive(1).normal_matrix(half, d, 0.0, 1.0);
    let enc_b: Matrix<f64> = root.derive(2).normal_matrix(half, d, 0.0, 1.0);
    let mut label_rng = root.derive(3);
    let mut noise_a = root.derive(4);
    let mut noise_b = root.derive(5);

    let mut targets = Matrix::zeros(n, k);
    for v in targets.data_mut() {
        if label_rng.uniform() < SYNTH_PREVALENCE {
            *v = 1.0;
        }
    }
    let embed = |enc: &Matrix<f64>, offset: usize, noise: &mut RngState| {
        Matrix::from_fn(n, d, |i, j| {
            let mut acc = 0.0f64;
            for c in 0..half {
                if targets.get(i, offset + c) == 1.0 {
                    acc += enc.get(c, j);
                }
            }
            (acc + noise.normal(0.0, noise_std)) as f32
        })
    };
    let a = embed(&enc_a, 0, &mut noise_a);
    let b = embed(&enc_b, half, &mut noise_b);
    let ids: Vec<u32> = (0..n as u32).collect();
    Ok((
        FeatureTable::new(ids.clone(), a)?,
        FeatureTable::new(ids.clone(), b)?,
        LabelMatrix::new(ids, targets)?,
    ))
}
