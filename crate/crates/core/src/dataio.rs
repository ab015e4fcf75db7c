//! Dataset container, synthetic data generation, splits, and the file
//! codecs that are not datastore-specific.
//!
//! Vectors cross process boundaries as 32-bit floats (binary) or JSON
//! numbers. The generator rounds every component through `f32` at birth so
//! that a value survives any number of save/load cycles bit-identically.

use std::fs::File;
use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio;
use crate::error::{Error, Result};
use crate::numerics::{EmbeddingVector, LabelDistribution};
use crate::scalar::Scalar;

const EMBEDDINGS_MAGIC: &[u8; 4] = b"SXEM";
const EMBEDDINGS_VERSION: u16 = 1;

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// One example carrying both embedding spaces and its ground-truth label.
///
/// `teacher` is the annotating embedding; `student` is the input the
/// student model trains on. `soft_label` is present once the example has
/// been annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct DataExample<T: Scalar> {
    pub id: String,
    pub teacher: EmbeddingVector<T>,
    pub student: EmbeddingVector<T>,
    pub label: usize,
    pub soft_label: Option<LabelDistribution<T>>,
}

/// A consistent collection of [`DataExample`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T: Scalar> {
    examples: Vec<DataExample<T>>,
    num_classes: usize,
}

impl<T: Scalar> LabeledDataset<T> {
    /// Validates uniform dimensions and in-range labels.
    pub fn new(examples: Vec<DataExample<T>>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(first) = examples.first() {
            let (td, sd) = (first.teacher.dim(), first.student.dim());
            for ex in &examples {
                if ex.teacher.dim() != td {
                    return Err(Error::Dimension { expected: td, got: ex.teacher.dim() }
                        .for_example(&ex.id));
                }
                if ex.student.dim() != sd {
                    return Err(Error::Dimension { expected: sd, got: ex.student.dim() }
                        .for_example(&ex.id));
                }
                if ex.label >= num_classes {
                    return Err(Error::Label { label: ex.label, num_classes }
                        .for_example(&ex.id));
                }
            }
        }
        Ok(Self { examples, num_classes })
    }

    pub fn examples(&self) -> &[DataExample<T>] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn teacher_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.teacher.dim())
    }

    pub fn student_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.student.dim())
    }

    /// (id, teacher embedding) pairs, the shape annotation queries take.
    pub fn teacher_queries(&self) -> Vec<(String, EmbeddingVector<T>)> {
        self.examples.iter().map(|e| (e.id.clone(), e.teacher.clone())).collect()
    }
}

/// Train/dev/test triple for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSplits<T: Scalar> {
    pub train: LabeledDataset<T>,
    pub dev: LabeledDataset<T>,
    pub test: LabeledDataset<T>,
}

/// Source and target domains of one synthetic run.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData<T: Scalar> {
    pub source: DomainSplits<T>,
    pub target: DomainSplits<T>,
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Parameters of the synthetic two-domain task.
///
/// Class c's teacher-space mean is `class_separation` along basis axis c,
/// shared by both domains. The target domain is displaced by `domain_shift`
/// along basis axis `num_classes`, orthogonal to every class direction, so
/// the shift moves the domain without moving the decision structure.
/// Student features are a fixed random linear projection of the teacher
/// features plus independent noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dim_teacher: usize,
    pub dim_student: usize,
    pub num_classes: usize,
    pub source_train: usize,
    pub source_dev: usize,
    pub source_test: usize,
    pub target_train: usize,
    pub target_dev: usize,
    pub target_test: usize,
    pub class_separation: f64,
    pub domain_shift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim_teacher: 32,
            dim_student: 16,
            num_classes: 2,
            source_train: 1000,
            source_dev: 200,
            source_test: 500,
            target_train: 1000,
            target_dev: 200,
            target_test: 500,
            class_separation: 2.0,
            domain_shift: 1.0,
            noise_sigma: 0.5,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.dim_teacher <= self.num_classes {
            return Err(Error::Config(format!(
                "dim_teacher must exceed num_classes (one axis per class plus the \
                 domain-shift axis); got {} <= {}",
                self.dim_teacher, self.num_classes
            )));
        }
        if self.dim_student == 0 {
            return Err(Error::Config("dim_student must be at least 1".into()));
        }
        let counts = [
            self.source_train,
            self.source_dev,
            self.source_test,
            self.target_train,
            self.target_dev,
            self.target_test,
        ];
        if counts.iter().any(|&c| c < self.num_classes) {
            return Err(Error::Config(format!(
                "every split needs at least one example per class ({} classes)",
                self.num_classes
            )));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        if self.class_separation < 0.0 || self.domain_shift < 0.0 {
            return Err(Error::Config("separation and shift must be non-negative".into()));
        }
        Ok(())
    }
}

/// Rounds through `f32` so the value equals its future persisted form.
fn storage_round(v: f64) -> f64 {
    f64::from(v as f32)
}

/// Generates both domains deterministically from `spec.seed`.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticData<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Fixed projection from teacher space to student space, drawn once.
    let scale = 1.0 / (spec.dim_teacher as f64).sqrt();
    let projection: Vec<Vec<f64>> = (0..spec.dim_student)
        .map(|_| {
            (0..spec.dim_teacher)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                .collect()
        })
        .collect();

    let mut gen_split = |prefix: &str, count: usize, shifted: bool| -> Result<LabeledDataset<T>> {
        let mut examples = Vec::with_capacity(count);
        for i in 0..count {
            let label = i % spec.num_classes;
            let mut teacher = Vec::with_capacity(spec.dim_teacher);
            for d in 0..spec.dim_teacher {
                let mut mean = 0.0;
                if d == label {
                    mean += spec.class_separation;
                }
                if shifted && d == spec.num_classes {
                    mean += spec.domain_shift;
                }
                let v = mean + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                teacher.push(storage_round(v));
            }
            let mut student = Vec::with_capacity(spec.dim_student);
            for row in &projection {
                let dot: f64 = row.iter().zip(&teacher).map(|(p, t)| p * t).sum();
                let v = dot + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                student.push(storage_round(v));
            }
            examples.push(DataExample {
                id: format!("{prefix}-{i:05}"),
                teacher: EmbeddingVector::from_f64s(&teacher)?,
                student: EmbeddingVector::from_f64s(&student)?,
                label,
                soft_label: None,
            });
        }
        LabeledDataset::new(examples, spec.num_classes)
    };

    let source = DomainSplits {
        train: gen_split("src-train", spec.source_train, false)?,
        dev: gen_split("src-dev", spec.source_dev, false)?,
        test: gen_split("src-test", spec.source_test, false)?,
    };
    let target = DomainSplits {
        train: gen_split("tgt-train", spec.target_train, true)?,
        dev: gen_split("tgt-dev", spec.target_dev, true)?,
        test: gen_split("tgt-test", spec.target_test, true)?,
    };
    Ok(SyntheticData { source, target })
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Splits a dataset into train/dev/test by fraction.
///
/// The shuffle is seeded; with `stratified` the shuffle and the cuts happen
/// within each class so balanced inputs stay balanced.
pub fn split<T: Scalar>(
    dataset: &LabeledDataset<T>,
    fractions: (f64, f64, f64),
    seed: u64,
    stratified: bool,
) -> Result<(LabeledDataset<T>, LabeledDataset<T>, LabeledDataset<T>)> {
    let (ft, fd, fe) = fractions;
    for f in [ft, fd, fe] {
        if !(0.0..=1.0).contains(&f) || !f.is_finite() {
            return Err(Error::Config(format!("split fraction {f} outside [0, 1]")));
        }
    }
    if ((ft + fd + fe) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {}",
            ft + fd + fe
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if stratified {
        let mut by_class = vec![Vec::new(); dataset.num_classes()];
        for (i, ex) in dataset.examples().iter().enumerate() {
            by_class[ex.label].push(i);
        }
        by_class
    } else {
        vec![(0..dataset.len()).collect()]
    };

    let mut parts: [Vec<DataExample<T>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for mut group in groups {
        shuffle(&mut group, &mut rng);
        let n = group.len();
        let cut1 = ((ft * n as f64).round() as usize).min(n);
        let cut2 = (((ft + fd) * n as f64).round() as usize).clamp(cut1, n);
        for (slot, range) in
            [(0, 0..cut1), (1, cut1..cut2), (2, cut2..n)]
        {
            parts[slot].extend(range.map(|j| dataset.examples()[group[j]].clone()));
        }
    }
    let [train, dev, test] = parts;
    Ok((
        LabeledDataset::new(train, dataset.num_classes())?,
        LabeledDataset::new(dev, dataset.num_classes())?,
        LabeledDataset::new(test, dataset.num_classes())?,
    ))
}

/// Fisher-Yates shuffle driven by the given rng.
pub(crate) fn shuffle<R: Rng>(indices: &mut [usize], rng: &mut R) {
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// Dataset JSONL
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRecord {
    id: String,
    label: usize,
    teacher: Vec<f64>,
    student: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    soft_label: Option<Vec<f64>>,
}

pub fn write_dataset_jsonl<T: Scalar, W: Write>(w: &mut W, ds: &LabeledDataset<T>) -> Result<()> {
    for ex in ds.examples() {
        let record = DatasetRecord {
            id: ex.id.clone(),
            label: ex.label,
            teacher: ex.teacher.to_f64_vec(),
            student: ex.student.to_f64_vec(),
            soft_label: ex.soft_label.as_ref().map(|d| d.to_f64_vec()),
        };
        serde_json::to_writer(&mut *w, &record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a dataset file; the class count is the largest label plus one
/// (minimum two).
pub fn read_dataset_jsonl<T: Scalar, R: BufRead>(r: R) -> Result<LabeledDataset<T>> {
    let mut examples = Vec::new();
    let mut max_label = 0usize;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("dataset line {}: {e}", lineno + 1)))?;
        max_label = max_label.max(record.label);
        examples.push(DataExample {
            id: record.id,
            teacher: EmbeddingVector::from_f64s(&record.teacher)?,
            student: EmbeddingVector::from_f64s(&record.student)?,
            label: record.label,
            soft_label: record
                .soft_label
                .map(|p| LabelDistribution::new(p.into_iter().map(T::cast).collect()))
                .transpose()?,
        });
    }
    LabeledDataset::new(examples, (max_label + 1).max(2))
}

pub fn read_dataset_from_path<T: Scalar>(path: &Path) -> Result<LabeledDataset<T>> {
    let file = File::open(path).map_err(|e| Error::Io(e).with_path(path))?;
    read_dataset_jsonl(std::io::BufReader::new(file)).map_err(|e| e.with_path(path))
}

pub fn write_dataset_to_path<T: Scalar>(path: &Path, ds: &LabeledDataset<T>) -> Result<()> {
    write_atomic(path, |w| write_dataset_jsonl(w, ds)).map_err(|e| e.with_path(path))
}

/// SHA-256 of the dataset's JSONL serialization, as lowercase hex.
pub fn dataset_digest<T: Scalar>(ds: &LabeledDataset<T>) -> String {
    let mut bytes = Vec::new();
    write_dataset_jsonl(&mut bytes, ds).expect("in-memory serialization cannot fail");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Embedding files
// ---------------------------------------------------------------------------

/// Writes (id, vector) pairs in the binary embedding format.
pub fn write_embeddings<T: Scalar, W: Write>(
    w: &mut W,
    items: &[(String, EmbeddingVector<T>)],
) -> Result<()> {
    let dim = match items.first() {
        Some((_, v)) => v.dim(),
        None => return Err(Error::EmptyInput("no embeddings to write".into())),
    };
    w.write_all(EMBEDDINGS_MAGIC)?;
    binio::write_u16(w, EMBEDDINGS_VERSION)?;
    binio::write_u32(w, dim as u32)?;
    binio::write_u64(w, items.len() as u64)?;
    for (id, vector) in items {
        if vector.dim() != dim {
            return Err(Error::Dimension { expected: dim, got: vector.dim() });
        }
        let id_bytes = id.as_bytes();
        if id_bytes.len() > u16::MAX as usize {
            return Err(Error::Data(format!("id longer than 65535 bytes: {id:.32}…")));
        }
        binio::write_u16(w, id_bytes.len() as u16)?;
        w.write_all(id_bytes)?;
        for v in vector.as_slice() {
            binio::write_f32(w, v.to_f64_lossy() as f32)?;
        }
    }
    Ok(())
}

/// Reads the binary embedding format, rejecting truncation, non-finite
/// components, and trailing bytes.
pub fn read_embeddings<T: Scalar, R: Read>(r: &mut R) -> Result<Vec<(String, EmbeddingVector<T>)>> {
    binio::expect_magic(r, EMBEDDINGS_MAGIC)?;
    let version = binio::read_u16(r, "version")?;
    if version != EMBEDDINGS_VERSION {
        return Err(Error::format(format!("unsupported embeddings version {version}")));
    }
    let dim = binio::read_u32(r, "dim")? as usize;
    let count = binio::read_u64(r, "count")? as usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let id_len = binio::read_u16(r, "id length")? as usize;
        let id_bytes = binio::read_bytes(r, id_len, "id")?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| Error::format(format!("embedding {i} id is not UTF-8")))?;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(T::cast(f64::from(binio::read_f32(r, "component")?)));
        }
        let vector = EmbeddingVector::new(values).map_err(|e| e.for_example(&id))?;
        out.push((id, vector));
    }
    binio::expect_eof(r)?;
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct EmbeddingJsonRecord {
    id: String,
    #[serde(alias = "teacher")]
    values: Vec<f64>,
}

/// Reads embeddings from JSONL lines shaped `{id, values}`; dataset files
/// qualify through their `teacher` field.
pub fn read_embeddings_jsonl<T: Scalar, R: BufRead>(
    r: R,
) -> Result<Vec<(String, EmbeddingVector<T>)>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingJsonRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("embedding line {}: {e}", lineno + 1)))?;
        let vector =
            EmbeddingVector::from_f64s(&record.values).map_err(|e| e.for_example(&record.id))?;
        out.push((record.id, vector));
    }
    Ok(out)
}

/// Loads embeddings from a path, picking the codec by extension
/// (`.jsonl` is line JSON, everything else is the binary format), and
/// checks that all vectors share one dimension.
pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<Vec<(String, EmbeddingVector<T>)>> {
    let file = File::open(path).map_err(|e| Error::Io(e).with_path(path))?;
    let mut reader = std::io::BufReader::new(file);
    let items = if path.extension().is_some_and(|e| e == "jsonl") {
        read_embeddings_jsonl(reader)
    } else {
        read_embeddings(&mut reader)
    }
    .map_err(|e| e.with_path(path))?;
    if let Some((_, first)) = items.first() {
        let dim = first.dim();
        for (id, v) in &items {
            if v.dim() != dim {
                return Err(Error::Dimension { expected: dim, got: v.dim() }.for_example(id));
            }
        }
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Label files
// ---------------------------------------------------------------------------

/// One line of a labels file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_label: Option<Vec<f64>>,
}

pub fn read_labels_jsonl<R: BufRead>(r: R) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LabelRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("label line {}: {e}", lineno + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_labels_from_path(path: &Path) -> Result<Vec<LabelRecord>> {
    let file = File::open(path).map_err(|e| Error::Io(e).with_path(path))?;
    read_labels_jsonl(std::io::BufReader::new(file)).map_err(|e| e.with_path(path))
}

// ---------------------------------------------------------------------------
// Atomic writes
// ---------------------------------------------------------------------------

/// Writes through a sibling temp file and renames into place, so a failed
/// write never leaves a partial file at the destination.
pub fn write_atomic(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?
        .to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);

    let file = File::create(&tmp)?;
    let mut writer = BufWriter::new(file);
    let outcome = f(&mut writer).and_then(|()| writer.flush().map_err(Error::from));
    match outcome {
        Ok(()) => {
            std::fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            source_train: 40,
            source_dev: 10,
            source_test: 10,
            target_train: 40,
            target_dev: 10,
            target_test: 10,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let spec = small_spec();
        let a: SyntheticData<f64> = generate_synthetic(&spec).unwrap();
        let b: SyntheticData<f64> = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);

        let other = SyntheticSpec { seed: 7, ..spec };
        let c: SyntheticData<f64> = generate_synthetic(&other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_classes_are_balanced() {
        let data: SyntheticData<f64> = generate_synthetic(&small_spec()).unwrap();
        for ds in [&data.source.train, &data.target.test] {
            let mut counts = vec![0usize; ds.num_classes()];
            for ex in ds.examples() {
                counts[ex.label] += 1;
            }
            let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(max - min <= 1, "unbalanced counts {counts:?}");
        }
    }

    #[test]
    fn class_means_reflect_separation_and_shift() {
        let spec = SyntheticSpec {
            source_train: 400,
            target_train: 400,
            noise_sigma: 0.1,
            ..small_spec()
        };
        let data: SyntheticData<f64> = generate_synthetic(&spec).unwrap();
        let mean_axis = |ds: &LabeledDataset<f64>, label: usize, axis: usize| -> f64 {
            let picked: Vec<f64> = ds
                .examples()
                .iter()
                .filter(|e| e.label == label)
                .map(|e| e.teacher.as_slice()[axis])
                .collect();
            picked.iter().sum::<f64>() / picked.len() as f64
        };
        // Class 0 sits at separation on axis 0, class 1 on axis 1.
        assert!((mean_axis(&data.source.train, 0, 0) - spec.class_separation).abs() < 0.05);
        assert!((mean_axis(&data.source.train, 1, 1) - spec.class_separation).abs() < 0.05);
        // Only the target domain is displaced along the shift axis.
        let shift_axis = spec.num_classes;
        assert!(mean_axis(&data.source.train, 0, shift_axis).abs() < 0.05);
        assert!((mean_axis(&data.target.train, 0, shift_axis) - spec.domain_shift).abs() < 0.05);
    }

    #[test]
    fn spec_validation_rejects_nonsense() {
        assert!(SyntheticSpec { num_classes: 1, ..small_spec() }.validate().is_err());
        assert!(SyntheticSpec { dim_teacher: 2, ..small_spec() }.validate().is_err());
        assert!(SyntheticSpec { noise_sigma: 0.0, ..small_spec() }.validate().is_err());
        assert!(SyntheticSpec { source_dev: 1, ..small_spec() }.validate().is_err());
        assert!(small_spec().validate().is_ok());
    }

    #[test]
    fn dataset_jsonl_round_trips() {
        let data: SyntheticData<f64> = generate_synthetic(&small_spec()).unwrap();
        let mut bytes = Vec::new();
        write_dataset_jsonl(&mut bytes, &data.target.dev).unwrap();
        let back: LabeledDataset<f64> = read_dataset_jsonl(bytes.as_slice()).unwrap();
        assert_eq!(data.target.dev, back);

        let mut second = Vec::new();
        write_dataset_jsonl(&mut second, &back).unwrap();
        assert_eq!(bytes, second);
    }

    #[test]
    fn embeddings_round_trip_and_match_the_jsonl_path() {
        let data: SyntheticData<f64> = generate_synthetic(&small_spec()).unwrap();
        let items = data.source.dev.teacher_queries();

        let mut bin = Vec::new();
        write_embeddings(&mut bin, &items).unwrap();
        let from_bin: Vec<(String, EmbeddingVector<f64>)> =
            read_embeddings(&mut bin.as_slice()).unwrap();
        assert_eq!(items, from_bin);

        let mut second = Vec::new();
        write_embeddings(&mut second, &from_bin).unwrap();
        assert_eq!(bin, second);

        let mut jsonl = Vec::new();
        write_dataset_jsonl(&mut jsonl, &data.source.dev).unwrap();
        let from_jsonl: Vec<(String, EmbeddingVector<f64>)> =
            read_embeddings_jsonl(jsonl.as_slice()).unwrap();
        assert_eq!(items, from_jsonl);
    }

    #[test]
    fn embedding_reader_rejects_corruption() {
        let data: SyntheticData<f64> = generate_synthetic(&small_spec()).unwrap();
        let items = data.source.dev.teacher_queries();
        let mut bin = Vec::new();
        write_embeddings(&mut bin, &items).unwrap();

        let truncated = &bin[..bin.len() - 3];
        assert!(matches!(
            read_embeddings::<f64, _>(&mut &truncated[..]),
            Err(Error::Format { .. })
        ));

        // Overwrite one component with a NaN pattern; the payload starts
        // after magic(4) + version(2) + dim(4) + count(8) + id_len(2) + id.
        let mut poisoned = bin.clone();
        let id_len = items[0].0.len();
        let offset = 4 + 2 + 4 + 8 + 2 + id_len;
        poisoned[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match read_embeddings::<f64, _>(&mut poisoned.as_slice()) {
            Err(Error::ForExample { source, .. }) => {
                assert!(matches!(*source, Error::Data(_)))
            }
            other => panic!("expected NaN rejection, got {other:?}"),
        }
    }

    #[test]
    fn split_respects_fractions_and_determinism() {
        let data: SyntheticData<f64> = generate_synthetic(&SyntheticSpec {
            source_train: 100,
            ..small_spec()
        })
        .unwrap();
        let ds = &data.source.train;
        let (tr, dv, te) = split(ds, (0.8, 0.1, 0.1), 5, false).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (80, 10, 10));

        let (tr2, ..) = split(ds, (0.8, 0.1, 0.1), 5, false).unwrap();
        assert_eq!(tr, tr2);

        let (all, none_a, none_b) = split(ds, (1.0, 0.0, 0.0), 5, false).unwrap();
        assert_eq!(all.len(), 100);
        assert!(none_a.is_empty() && none_b.is_empty());

        assert!(split(ds, (0.5, 0.2, 0.2), 5, false).is_err());
        assert!(split(ds, (1.2, -0.2, 0.0), 5, false).is_err());
    }

    #[test]
    fn stratified_split_keeps_classes_balanced() {
        let data: SyntheticData<f64> = generate_synthetic(&SyntheticSpec {
            source_train: 100,
            ..small_spec()
        })
        .unwrap();
        let (tr, dv, te) = split(&data.source.train, (0.6, 0.2, 0.2), 9, true).unwrap();
        for part in [&tr, &dv, &te] {
            let mut counts = vec![0usize; part.num_classes()];
            for ex in part.examples() {
                counts[ex.label] += 1;
            }
            let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(max - min <= 1, "stratified split unbalanced: {counts:?}");
        }
    }

    #[test]
    fn labels_jsonl_accepts_dataset_lines() {
        let data: SyntheticData<f64> = generate_synthetic(&small_spec()).unwrap();
        let mut bytes = Vec::new();
        write_dataset_jsonl(&mut bytes, &data.source.dev).unwrap();
        let labels = read_labels_jsonl(bytes.as_slice()).unwrap();
        assert_eq!(labels.len(), data.source.dev.len());
        for (rec, ex) in labels.iter().zip(data.source.dev.examples()) {
            assert_eq!(rec.id, ex.id);
            assert_eq!(rec.label, ex.label);
        }
    }

    #[test]
    fn atomic_write_leaves_no_partial_file_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.bin");
        let err = write_atomic(&path, |w| {
            w.write_all(b"partial")?;
            Err(Error::Data("deliberate failure".into()))
        });
        assert!(err.is_err());
        assert!(!path.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

        write_atomic(&path, |w| {
            w.write_all(b"complete")?;
            Ok(())
        })
        .unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"complete");
    }
}
