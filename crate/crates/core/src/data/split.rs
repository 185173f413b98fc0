use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dataset::EncodedDataset;
use crate::diff::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

/// Rows of one partition, copied out of the source dataset.
#[derive(Clone, Debug)]
pub struct Split {
    pub tag: SplitTag,
    pub num_fields: usize,
    /// Positions of these rows in the source dataset.
    pub row_ids: Vec<usize>,
    pub indices: Vec<u32>,
    pub labels: Vec<f64>,
}

impl Split {
    pub fn from_rows(tag: SplitTag, dataset: &EncodedDataset, row_ids: Vec<usize>) -> Self {
        let mut indices = Vec::with_capacity(row_ids.len() * dataset.num_fields());
        let mut labels = Vec::with_capacity(row_ids.len());
        for &r in &row_ids {
            indices.extend_from_slice(dataset.row(r));
            labels.push(dataset.label(r) as f64);
        }
        Split { tag, num_fields: dataset.num_fields(), row_ids, indices, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[r * self.num_fields..(r + 1) * self.num_fields]
    }

    /// The whole split as one batch, in stored order.
    pub fn as_batch(&self) -> Batch {
        Batch { tag: self.tag, num_fields: self.num_fields, indices: self.indices.clone(), labels: self.labels.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub train: Split,
    pub validation: Split,
    pub test: Split,
    pub seed: u64,
    pub field_names: Vec<String>,
    pub cardinalities: Vec<usize>,
}

impl DatasetSplits {
    pub fn num_fields(&self) -> usize {
        self.cardinalities.len()
    }
}

/// Split ratios for train / validation / test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub [f64; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios([0.8, 0.1, 0.1])
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios {:?} must be non-negative and sum to 1", self.0)));
        }
        Ok(())
    }

    /// Partition sizes for `n` rows: train and validation rounded, test takes the rest.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.0[0] * n as f64).round() as usize).min(n);
        let val = ((self.0[1] * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// Uniform random row assignment, a pure function of `(rows, ratios, seed)`.
pub fn split_dataset(dataset: &EncodedDataset, ratios: SplitRatios, seed: u64) -> Result<DatasetSplits> {
    ratios.validate()?;
    let n = dataset.num_rows();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::stream(seed, "split").shuffle(&mut order);
    let (n_train, n_val, _) = ratios.sizes(n);
    let test_ids = order.split_off(n_train + n_val);
    let val_ids = order.split_off(n_train);
    Ok(DatasetSplits {
        train: Split::from_rows(SplitTag::Train, dataset, order),
        validation: Split::from_rows(SplitTag::Validation, dataset, val_ids),
        test: Split::from_rows(SplitTag::Test, dataset, test_ids),
        seed,
        field_names: dataset.schema.names(),
        cardinalities: dataset.cardinalities(),
    })
}

/// A mini-batch of hot coordinates `(B, N)` and 0/1 labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub tag: SplitTag,
    pub num_fields: usize,
    pub indices: Vec<u32>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[r * self.num_fields..(r + 1) * self.num_fields]
    }
}

/// Iterator over one epoch of a split.
pub struct Batches<'a> {
    split: &'a Split,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl Batches<'_> {
    /// Row positions (within the split) in visiting order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let nf = self.split.num_fields;
        let rows = &self.order[self.cursor..end];
        let mut indices = Vec::with_capacity(rows.len() * nf);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            indices.extend_from_slice(self.split.row(r));
            labels.push(self.split.labels[r]);
        }
        self.cursor = end;
        Some(Batch { tag: self.split.tag, num_fields: nf, indices, labels })
    }
}

/// One pass over `split`; with `shuffle` the order depends only on `(seed, epoch)`.
pub fn make_batches(split: &Split, batch_size: usize, shuffle: bool, seed: u64, epoch: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..split.len()).collect();
    if shuffle {
        Rng::indexed(seed, "shuffle", epoch).shuffle(&mut order);
    }
    Ok(Batches { split, order, batch_size, cursor: 0 })
}

/// Endless batch source that reshuffles at every pass over the split.
pub struct CyclingBatches {
    split: Arc<Split>,
    batch_size: usize,
    seed: u64,
    pass: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl CyclingBatches {
    pub fn new(split: Arc<Split>, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if split.is_empty() {
            return Err(Error::config(format!("{:?} split is empty", split.tag)));
        }
        let mut c = CyclingBatches { split, batch_size, seed, pass: 0, order: Vec::new(), cursor: 0 };
        c.reshuffle();
        Ok(c)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.split.len()).collect();
        Rng::indexed(self.seed, "cycle", self.pass).shuffle(&mut self.order);
        self.cursor = 0;
        self.pass += 1;
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.cursor >= self.order.len() {
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let nf = self.split.num_fields;
        let mut indices = Vec::with_capacity((end - self.cursor) * nf);
        let mut labels = Vec::with_capacity(end - self.cursor);
        for &r in &self.order[self.cursor..end] {
            indices.extend_from_slice(self.split.row(r));
            labels.push(self.split.labels[r]);
        }
        self.cursor = end;
        Batch { tag: self.split.tag, num_fields: nf, indices, labels }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{FieldSchema, FieldVocab, Vocabulary};

    fn dataset(n: usize) -> EncodedDataset {
        let schema = FieldSchema::categorical(&["a"]).unwrap();
        let vocab = Vocabulary::new(vec![FieldVocab::from_tokens((0..n).map(|i| i.to_string()).collect()).unwrap()]);
        let idx = (1..=n as u32).collect();
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        EncodedDataset::new(schema, vocab, idx, labels).unwrap()
    }

    #[test]
    fn ten_rows_split_eight_one_one() {
        let s = split_dataset(&dataset(10), SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn split_is_a_partition_and_deterministic() {
        let ds = dataset(1000);
        let a = split_dataset(&ds, SplitRatios::default(), 5).unwrap();
        let b = split_dataset(&ds, SplitRatios::default(), 5).unwrap();
        assert_eq!(a.train.row_ids, b.train.row_ids);
        let mut all: Vec<usize> = [&a.train, &a.validation, &a.test].iter().flat_map(|s| s.row_ids.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        let c = split_dataset(&ds, SplitRatios::default(), 6).unwrap();
        assert_ne!(a.train.row_ids, c.train.row_ids);
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(matches!(split_dataset(&dataset(10), SplitRatios([0.5, 0.2, 0.2]), 0), Err(Error::Config(_))));
    }

    #[test]
    fn batch_sizes_and_order() {
        let ds = dataset(5);
        let s = split_dataset(&ds, SplitRatios([1.0, 0.0, 0.0]), 0).unwrap();
        let sizes: Vec<usize> = make_batches(&s.train, 2, false, 0, 0).unwrap().map(|b| b.rows()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let rows: Vec<u32> = make_batches(&s.train, 2, false, 0, 0).unwrap().flat_map(|b| b.indices).collect();
        let stored: Vec<u32> = s.train.indices.clone();
        assert_eq!(rows, stored);
    }

    #[test]
    fn epochs_shuffle_differently_but_reproducibly() {
        let ds = dataset(200);
        let s = split_dataset(&ds, SplitRatios([1.0, 0.0, 0.0]), 0).unwrap();
        let e0 = make_batches(&s.train, 16, true, 9, 0).unwrap().order().to_vec();
        let e1 = make_batches(&s.train, 16, true, 9, 1).unwrap().order().to_vec();
        let e0_again = make_batches(&s.train, 16, true, 9, 0).unwrap().order().to_vec();
        assert_ne!(e0, e1);
        assert_eq!(e0, e0_again);
        let mut visited: Vec<usize> = e1.clone();
        visited.sort_unstable();
        assert_eq!(visited, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn empty_split_gives_no_batches() {
        let ds = dataset(10);
        let s = split_dataset(&ds, SplitRatios([1.0, 0.0, 0.0]), 0).unwrap();
        assert!(s.validation.is_empty());
        assert_eq!(make_batches(&s.validation, 4, true, 0, 0).unwrap().count(), 0);
        assert!(make_batches(&s.train, 0, true, 0, 0).is_err());
    }
}
