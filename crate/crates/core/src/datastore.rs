//! Labeled embedding datastore with exact k-nearest-neighbor search and
//! distance-weighted soft annotation.
//!
//! Search is a full scan: every query is compared against every entry, so
//! results are exact and reproducible. Neighbors are ordered by ascending
//! L2 distance with ties broken by lower entry index.
//!
//! A query's soft label weights each retrieved neighbor by `exp(-d / tau)`
//! and sums the weights per class; the k retrieved entries are the whole
//! probability space, so the weights normalize over exactly those k.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::numerics::{euclidean_distance, EmbeddingVector, LabelDistribution};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SXDS";
const VERSION: u16 = 1;

/// One stored source-domain example.
#[derive(Debug, Clone, PartialEq)]
pub struct DatastoreEntry<T> {
    pub key: EmbeddingVector<T>,
    pub label: usize,
    pub source_id: String,
}

/// Neighbors of one query, ascending by distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult<T> {
    pub indices: Vec<usize>,
    pub distances: Vec<T>,
    pub labels: Vec<usize>,
}

/// A target example with its distance-weighted soft label and the neighbors
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedExample<T: Scalar> {
    pub target_id: String,
    pub teacher_embedding: EmbeddingVector<T>,
    pub soft_label: LabelDistribution<T>,
    pub hard_label: usize,
    pub neighbor_ids: Vec<String>,
    pub neighbor_distances: Vec<T>,
}

/// Immutable collection of labeled source embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Datastore<T> {
    entries: Vec<DatastoreEntry<T>>,
    dim: usize,
    num_classes: usize,
}

/// Heap candidate ordered so the WORST neighbor (larger distance, then
/// larger index) is the heap maximum and can be evicted in O(log k).
struct Candidate<T> {
    dist: T,
    index: usize,
}

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.index == other.index
    }
}
impl<T: Scalar> Eq for Candidate<T> {}
impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .partial_cmp(&other.dist)
            .expect("distances are never NaN")
            .then(self.index.cmp(&other.index))
    }
}

impl<T: Scalar> Datastore<T> {
    /// Validates and freezes a set of entries.
    ///
    /// Every key must share one dimension, every label must be below
    /// `num_classes`, and every class must appear at least once (a class
    /// with no entries could never receive annotation mass).
    pub fn build(entries: Vec<DatastoreEntry<T>>, num_classes: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("datastore has no entries".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "datastore needs at least 2 classes, got {num_classes}"
            )));
        }
        let dim = entries[0].key.dim();
        let mut seen = vec![false; num_classes];
        for entry in &entries {
            if entry.key.dim() != dim {
                return Err(Error::Dimension { expected: dim, got: entry.key.dim() });
            }
            if entry.label >= num_classes {
                return Err(Error::Label { label: entry.label, num_classes });
            }
            seen[entry.label] = true;
        }
        if let Some(class) = seen.iter().position(|s| !s) {
            return Err(Error::MissingClass { class });
        }
        Ok(Self { entries, dim, num_classes })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn entries(&self) -> &[DatastoreEntry<T>] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> &DatastoreEntry<T> {
        &self.entries[index]
    }

    /// Exact k-nearest-neighbor scan, sorted ascending by (distance, index).
    ///
    /// `k` is capped at the number of entries.
    pub fn query_knn(&self, query: &EmbeddingVector<T>, k: usize) -> Result<KnnResult<T>> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: query.dim() });
        }
        let k = k.min(self.entries.len());
        let mut heap: BinaryHeap<Candidate<T>> = BinaryHeap::with_capacity(k + 1);
        for (index, entry) in self.entries.iter().enumerate() {
            let dist = euclidean_distance(&entry.key, query)?;
            let cand = Candidate { dist, index };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap is non-empty at capacity") {
                heap.pop();
                heap.push(cand);
            }
        }
        let mut picked = heap.into_vec();
        picked.sort();
        let indices: Vec<usize> = picked.iter().map(|c| c.index).collect();
        let distances: Vec<T> = picked.iter().map(|c| c.dist).collect();
        let labels: Vec<usize> = indices.iter().map(|&i| self.entries[i].label).collect();
        Ok(KnnResult { indices, distances, labels })
    }

    /// Soft label for one query from its k nearest neighbors.
    ///
    /// Class mass is the sum of `exp(-d_i / tau)` over neighbors of that
    /// class, normalized by the total over all k retrieved neighbors. If
    /// every weight underflows to zero the neighbors are weighted uniformly
    /// instead, with a warning; the neighbor set itself is unaffected.
    pub fn annotate(
        &self,
        query: &EmbeddingVector<T>,
        k: usize,
        temperature: T,
    ) -> Result<LabelDistribution<T>> {
        let knn = self.query_knn(query, k)?;
        self.soft_label_from_knn(&knn, temperature)
    }

    fn soft_label_from_knn(&self, knn: &KnnResult<T>, temperature: T) -> Result<LabelDistribution<T>> {
        let tau = temperature.to_f64_lossy();
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!(
                "annotation temperature must be positive, got {tau}"
            )));
        }
        let mut weights: Vec<f64> =
            knn.distances.iter().map(|d| (-d.to_f64_lossy() / tau).exp()).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            log::warn!(
                "all {} neighbor weights underflowed (min distance {:?}); \
                 falling back to uniform neighbor weighting",
                knn.distances.len(),
                knn.distances.first()
            );
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        let total: f64 = weights.iter().sum();
        let mut class_mass = vec![0f64; self.num_classes];
        for (w, &label) in weights.iter().zip(&knn.labels) {
            class_mass[label] += w;
        }
        LabelDistribution::new(class_mass.iter().map(|m| T::cast(m / total)).collect())
    }

    /// Annotates one identified query, keeping the neighbor evidence.
    pub fn annotate_example(
        &self,
        target_id: &str,
        query: &EmbeddingVector<T>,
        k: usize,
        temperature: T,
    ) -> Result<AnnotatedExample<T>> {
        let knn = self.query_knn(query, k)?;
        let soft_label = self.soft_label_from_knn(&knn, temperature)?;
        let hard_label = soft_label.argmax();
        Ok(AnnotatedExample {
            target_id: target_id.to_string(),
            teacher_embedding: query.clone(),
            soft_label,
            hard_label,
            neighbor_ids: knn.indices.iter().map(|&i| self.entries[i].source_id.clone()).collect(),
            neighbor_distances: knn.distances,
        })
    }

    /// Annotates a whole target set, preserving input order.
    ///
    /// A failing example aborts the run with its id attached.
    pub fn annotate_dataset(
        &self,
        targets: &[(String, EmbeddingVector<T>)],
        k: usize,
        temperature: T,
    ) -> Result<Vec<AnnotatedExample<T>>> {
        targets
            .iter()
            .map(|(id, query)| {
                self.annotate_example(id, query, k, temperature).map_err(|e| e.for_example(id))
            })
            .collect()
    }

    /// Serializes the store; keys are stored as little-endian `f32`.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        binio::write_u16(w, VERSION)?;
        binio::write_u32(w, self.dim as u32)?;
        binio::write_u32(w, self.num_classes as u32)?;
        binio::write_u64(w, self.entries.len() as u64)?;
        for entry in &self.entries {
            let id = entry.source_id.as_bytes();
            if id.len() > u16::MAX as usize {
                return Err(Error::Data(format!("id longer than 65535 bytes: {:.32}…", entry.source_id)));
            }
            if entry.label > u16::MAX as usize {
                return Err(Error::Data(format!("label {} does not fit the format", entry.label)));
            }
            binio::write_u16(w, id.len() as u16)?;
            w.write_all(id)?;
            binio::write_u16(w, entry.label as u16)?;
            for v in entry.key.as_slice() {
                binio::write_f32(w, v.to_f64_lossy() as f32)?;
            }
        }
        Ok(())
    }

    /// Deserializes a store written by [`Datastore::save`].
    ///
    /// Truncated input, a wrong magic, an unknown version, and trailing
    /// bytes are all rejected.
    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        binio::expect_magic(r, MAGIC)?;
        let version = binio::read_u16(r, "version")?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported datastore version {version}")));
        }
        let dim = binio::read_u32(r, "dim")? as usize;
        let num_classes = binio::read_u32(r, "num_classes")? as usize;
        let count = binio::read_u64(r, "count")? as usize;
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let id_len = binio::read_u16(r, "id length")? as usize;
            let id_bytes = binio::read_bytes(r, id_len, "id")?;
            let source_id = String::from_utf8(id_bytes)
                .map_err(|_| Error::format(format!("entry {i} id is not UTF-8")))?;
            let label = binio::read_u16(r, "label")? as usize;
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(T::cast(f64::from(binio::read_f32(r, "key component")?)));
            }
            let key = EmbeddingVector::new(values)?;
            entries.push(DatastoreEntry { key, label, source_id });
        }
        binio::expect_eof(r)?;
        Self::build(entries, num_classes)
    }

    pub fn save_to_path(&self, path: &Path) -> Result<()> {
        crate::dataio::write_atomic(path, |w| self.save(w)).map_err(|e| e.with_path(path))
    }

    pub fn load_from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io(e).with_path(path))?;
        let mut reader = std::io::BufReader::new(file);
        Self::load(&mut reader).map_err(|e| e.with_path(path))
    }
}

// ---------------------------------------------------------------------------
// Annotation records (JSONL)
// ---------------------------------------------------------------------------

/// One line of an annotations file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub soft_label: Vec<f64>,
    pub hard_label: usize,
    pub neighbor_ids: Vec<String>,
    pub distances: Vec<f64>,
}

impl<T: Scalar> From<&AnnotatedExample<T>> for AnnotationRecord {
    fn from(a: &AnnotatedExample<T>) -> Self {
        AnnotationRecord {
            id: a.target_id.clone(),
            soft_label: a.soft_label.to_f64_vec(),
            hard_label: a.hard_label,
            neighbor_ids: a.neighbor_ids.clone(),
            distances: a.neighbor_distances.iter().map(|d| d.to_f64_lossy()).collect(),
        }
    }
}

pub fn write_annotations_jsonl<T: Scalar, W: Write>(
    w: &mut W,
    annotations: &[AnnotatedExample<T>],
) -> Result<()> {
    for a in annotations {
        serde_json::to_writer(&mut *w, &AnnotationRecord::from(a))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_annotations_jsonl<R: BufRead>(r: R) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("annotation line {}: {e}", lineno + 1)))?;
        out.push(record);
    }
    Ok(out)
}
