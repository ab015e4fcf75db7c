//! Evaluation, the ablation grid, and neighbor case studies.
//!
//! The ablation trains one student per arm while holding everything else
//! fixed: every arm gets the same architecture, init seed, shuffle seed,
//! optimizer settings, and data. Arms differ only in their declared axes,
//! which labels supervise training (ground truth or datastore
//! annotations), which classification loss is used, and whether the
//! similarity term is on. Each arm's full effective configuration is
//! digested so runs can be told apart and reproduced.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::LabeledDataset;
use crate::datastore::{AnnotationRecord, Datastore};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::losses::{ClassificationLoss, LossConfig, SimLossVariant};
use crate::numerics::{EmbeddingVector, LabelDistribution};
use crate::scalar::Scalar;
use crate::student::{StudentConfig, StudentModel};
use crate::trainer::{train, TrainConfig, TrainExample, TrainReport};

/// Where an arm's training labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    GroundTruth,
    Pseudo,
}

/// Accuracy with its per-class and confusion breakdown.
///
/// `confusion[t][p]` counts examples of true class `t` predicted as `p`.
/// A class with no examples gets `None` in `per_class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
}

/// Argmax accuracy of the model on a labeled set.
pub fn evaluate<T: Scalar>(
    model: &StudentModel<T>,
    dataset: &LabeledDataset<T>,
) -> Result<EvalResult> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation set is empty".into()));
    }
    let c = dataset.num_classes();
    if c != model.config.num_classes {
        return Err(Error::Dimension { expected: model.config.num_classes, got: c });
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for ex in dataset.examples() {
        let trace = model.forward(&ex.student).map_err(|e| e.for_example(&ex.id))?;
        confusion[ex.label][trace.predicted.argmax()] += 1;
    }
    let mut correct = 0usize;
    let mut per_class = Vec::with_capacity(c);
    for (t, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        correct += row[t];
        per_class.push(if total == 0 { None } else { Some(row[t] as f64 / total as f64) });
    }
    Ok(EvalResult {
        accuracy: correct as f64 / dataset.len() as f64,
        per_class,
        confusion,
    })
}

/// One trained arm of the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub label_source: LabelSource,
    pub classification_loss: ClassificationLoss,
    pub sim_loss: SimLossVariant,
    pub config_digest: String,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub test_accuracy: f64,
    pub test_eval: EvalResult,
    pub train_report: TrainReport,
}

/// All arms of one ablation or comparison run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub arms: Vec<ArmResult>,
}

impl AblationReport {
    /// Fixed-width text table, one row per arm.
    pub fn table(&self) -> String {
        let mut out = String::from(
            "arm            labels        cls  sim   best  dev     test    digest\n",
        );
        for arm in &self.arms {
            let source = match arm.label_source {
                LabelSource::GroundTruth => "ground_truth",
                LabelSource::Pseudo => "pseudo",
            };
            let cls = match arm.classification_loss {
                ClassificationLoss::Kl => "kl",
                ClassificationLoss::CrossEntropy => "ce",
            };
            let sim = match arm.sim_loss {
                SimLossVariant::None => "none",
                SimLossVariant::Kl => "kl",
                SimLossVariant::L1 => "l1",
                SimLossVariant::L2 => "l2",
            };
            out.push_str(&format!(
                "{:<14} {:<13} {:<4} {:<5} {:>4}  {:.4}  {:.4}  {}\n",
                arm.name,
                source,
                cls,
                sim,
                arm.best_epoch,
                arm.best_dev_accuracy,
                arm.test_accuracy,
                &arm.config_digest[..8],
            ));
        }
        out
    }
}

/// The full effective configuration of one arm, hashed into its digest.
#[derive(Serialize)]
struct ArmConfig<'a> {
    name: &'a str,
    label_source: LabelSource,
    loss: &'a LossConfig,
    student: &'a StudentConfig,
    train: &'a TrainConfig,
    shuffle_seed: u64,
}

fn config_digest(config: &ArmConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn annotation_index<'a>(
    annotations: &'a [AnnotationRecord],
) -> Result<HashMap<&'a str, &'a AnnotationRecord>> {
    let mut map = HashMap::with_capacity(annotations.len());
    for rec in annotations {
        if map.insert(rec.id.as_str(), rec).is_some() {
            return Err(Error::Data(format!("duplicate annotation for example {}", rec.id)));
        }
    }
    Ok(map)
}

/// Turns a dataset into trainer examples, labeling per the arm's source.
fn arm_examples<T: Scalar>(
    dataset: &LabeledDataset<T>,
    source: LabelSource,
    annotations: &HashMap<&str, &AnnotationRecord>,
) -> Result<Vec<TrainExample<T>>> {
    dataset
        .examples()
        .iter()
        .map(|ex| {
            let (hard_label, soft_label) = match source {
                LabelSource::GroundTruth => (ex.label, None),
                LabelSource::Pseudo => {
                    let rec = annotations.get(ex.id.as_str()).ok_or_else(|| {
                        Error::Data("no annotation for this example".into()).for_example(&ex.id)
                    })?;
                    let soft = LabelDistribution::new(
                        rec.soft_label.iter().map(|v| T::cast(*v)).collect(),
                    )
                    .map_err(|e| e.for_example(&ex.id))?;
                    (rec.hard_label, Some(soft))
                }
            };
            Ok(TrainExample {
                id: ex.id.clone(),
                features: ex.student.clone(),
                teacher_repr: ex.teacher.clone(),
                soft_label,
                hard_label,
            })
        })
        .collect()
}

/// Turns a labeled dataset into trainer examples.
///
/// With annotations, every example must have a matching record and takes
/// its soft and hard labels from it; without, the dataset's own labels are
/// used and no soft target is attached.
pub fn training_examples<T: Scalar>(
    dataset: &LabeledDataset<T>,
    annotations: Option<&[AnnotationRecord]>,
) -> Result<Vec<TrainExample<T>>> {
    match annotations {
        Some(records) => {
            let index = annotation_index(records)?;
            arm_examples(dataset, LabelSource::Pseudo, &index)
        }
        None => arm_examples(dataset, LabelSource::GroundTruth, &HashMap::new()),
    }
}

struct ArmSpec {
    name: &'static str,
    source: LabelSource,
    classification: ClassificationLoss,
    sim_on: bool,
}

/// Shared soil every arm grows from.
struct ArmContext<'a, T: Scalar> {
    train: &'a LabeledDataset<T>,
    dev_examples: Vec<TrainExample<T>>,
    test: &'a LabeledDataset<T>,
    annotations: HashMap<&'a str, &'a AnnotationRecord>,
    student_config: StudentConfig,
    train_config: &'a TrainConfig,
    sim_template: &'a LossConfig,
    shuffle_seed: u64,
}

impl<'a, T: Scalar> ArmContext<'a, T> {
    fn new(
        train: &'a LabeledDataset<T>,
        dev: &'a LabeledDataset<T>,
        test: &'a LabeledDataset<T>,
        annotations: &'a [AnnotationRecord],
        student_config: &StudentConfig,
        train_config: &'a TrainConfig,
        sim_template: &'a LossConfig,
        seed: u64,
    ) -> Result<Self> {
        if sim_template.sim_loss == SimLossVariant::None {
            return Err(Error::Config(
                "similarity arms need a concrete sim_loss variant, not none".into(),
            ));
        }
        for (name, ds) in [("train", train), ("dev", dev), ("test", test)] {
            if ds.is_empty() {
                return Err(Error::EmptyInput(format!("{name} set is empty")));
            }
            if ds.num_classes() != train.num_classes() {
                return Err(Error::Config(format!(
                    "{name} set has {} classes, train has {}",
                    ds.num_classes(),
                    train.num_classes()
                )));
            }
            if ds.student_dim() != train.student_dim() || ds.teacher_dim() != train.teacher_dim() {
                return Err(Error::Config(format!(
                    "{name} set embedding dimensions do not match the train set"
                )));
            }
        }
        let mut student_config = student_config.clone();
        if student_config.input_dim != train.student_dim().unwrap_or(0) {
            return Err(Error::Dimension {
                expected: train.student_dim().unwrap_or(0),
                got: student_config.input_dim,
            });
        }
        if student_config.num_classes != train.num_classes() {
            return Err(Error::Dimension {
                expected: train.num_classes(),
                got: student_config.num_classes,
            });
        }
        // The run seed owns all randomness so arms stay comparable.
        student_config.seed = derive_seed(seed, "student-init");
        let shuffle_seed = derive_seed(seed, "train-shuffle");
        let annotations = annotation_index(annotations)?;
        let dev_examples = arm_examples(dev, LabelSource::GroundTruth, &annotations)?;
        Ok(Self {
            train,
            dev_examples,
            test,
            annotations,
            student_config,
            train_config,
            sim_template,
            shuffle_seed,
        })
    }

    fn run(&self, spec: &ArmSpec) -> Result<ArmResult> {
        let loss_config = LossConfig {
            classification_loss: spec.classification,
            sim_loss: if spec.sim_on { self.sim_template.sim_loss } else { SimLossVariant::None },
            sim_temperature: self.sim_template.sim_temperature,
            include_self_similarity: self.sim_template.include_self_similarity,
        };
        let digest = config_digest(&ArmConfig {
            name: spec.name,
            label_source: spec.source,
            loss: &loss_config,
            student: &self.student_config,
            train: self.train_config,
            shuffle_seed: self.shuffle_seed,
        })?;
        let train_examples = arm_examples(self.train, spec.source, &self.annotations)?;
        let outcome = train(
            &self.student_config,
            &train_examples,
            &self.dev_examples,
            &loss_config,
            self.train_config,
            self.shuffle_seed,
        )?;
        let test_eval = evaluate(&outcome.model, self.test)?;
        Ok(ArmResult {
            name: spec.name.to_string(),
            label_source: spec.source,
            classification_loss: spec.classification,
            sim_loss: loss_config.sim_loss,
            config_digest: digest,
            best_epoch: outcome.report.best_epoch,
            best_dev_accuracy: outcome.report.best_dev_accuracy,
            test_accuracy: test_eval.accuracy,
            test_eval,
            train_report: outcome.report,
        })
    }
}

const ABLATION_ARMS: [ArmSpec; 6] = [
    ArmSpec {
        name: "gt-ce",
        source: LabelSource::GroundTruth,
        classification: ClassificationLoss::CrossEntropy,
        sim_on: false,
    },
    ArmSpec {
        name: "pt-ce",
        source: LabelSource::Pseudo,
        classification: ClassificationLoss::CrossEntropy,
        sim_on: false,
    },
    ArmSpec {
        name: "gt-ce+sim",
        source: LabelSource::GroundTruth,
        classification: ClassificationLoss::CrossEntropy,
        sim_on: true,
    },
    ArmSpec {
        name: "pt-ce+sim",
        source: LabelSource::Pseudo,
        classification: ClassificationLoss::CrossEntropy,
        sim_on: true,
    },
    ArmSpec {
        name: "pt-kl",
        source: LabelSource::Pseudo,
        classification: ClassificationLoss::Kl,
        sim_on: false,
    },
    ArmSpec {
        name: "pt-kl+sim",
        source: LabelSource::Pseudo,
        classification: ClassificationLoss::Kl,
        sim_on: true,
    },
];

/// Trains the six-arm grid over label source, classification loss, and the
/// similarity term. `sim_config` supplies the variant and temperature the
/// `+sim` arms use; dev and test are always scored against ground truth.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation<T: Scalar>(
    train_set: &LabeledDataset<T>,
    dev_set: &LabeledDataset<T>,
    test_set: &LabeledDataset<T>,
    annotations: &[AnnotationRecord],
    student_config: &StudentConfig,
    train_config: &TrainConfig,
    sim_config: &LossConfig,
    seed: u64,
) -> Result<AblationReport> {
    let ctx = ArmContext::new(
        train_set,
        dev_set,
        test_set,
        annotations,
        student_config,
        train_config,
        sim_config,
        seed,
    )?;
    let arms = ABLATION_ARMS
        .iter()
        .map(|spec| ctx.run(spec).map_err(|e| e.context(format!("arm {}", spec.name))))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { seed, arms })
}

/// Trains the annotated-labels/KL/similarity configuration once per
/// similarity variant, holding everything else fixed.
#[allow(clippy::too_many_arguments)]
pub fn run_simloss_comparison<T: Scalar>(
    train_set: &LabeledDataset<T>,
    dev_set: &LabeledDataset<T>,
    test_set: &LabeledDataset<T>,
    annotations: &[AnnotationRecord],
    student_config: &StudentConfig,
    train_config: &TrainConfig,
    sim_config: &LossConfig,
    seed: u64,
) -> Result<AblationReport> {
    let variants = [
        ("pt-kl+sim-kl", SimLossVariant::Kl),
        ("pt-kl+sim-l1", SimLossVariant::L1),
        ("pt-kl+sim-l2", SimLossVariant::L2),
    ];
    let mut arms = Vec::with_capacity(variants.len());
    for (name, variant) in variants {
        let template = LossConfig { sim_loss: variant, ..sim_config.clone() };
        let ctx = ArmContext::new(
            train_set,
            dev_set,
            test_set,
            annotations,
            student_config,
            train_config,
            &template,
            seed,
        )?;
        let spec = ArmSpec {
            name,
            source: LabelSource::Pseudo,
            classification: ClassificationLoss::Kl,
            sim_on: true,
        };
        arms.push(ctx.run(&spec).map_err(|e| e.context(format!("arm {name}")))?);
    }
    Ok(AblationReport { seed, arms })
}

/// One retrieved neighbor, as evidence for an annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub id: String,
    pub label: usize,
    pub distance: f64,
}

/// A query with its nearest datastore neighbors and the soft label they
/// induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyEntry {
    pub target_id: String,
    pub neighbors: Vec<NeighborReport>,
    pub soft_label: Vec<f64>,
    pub hard_label: usize,
}

/// Looks up each query's `k` nearest entries and the soft label the
/// datastore assigns. Queries live in the same space as the store, so
/// passing a store built over student representations inspects student
/// geometry the same way.
pub fn case_study<T: Scalar>(
    store: &Datastore<T>,
    queries: &[(String, EmbeddingVector<T>)],
    k: usize,
    temperature: T,
) -> Result<Vec<CaseStudyEntry>> {
    queries
        .iter()
        .map(|(id, query)| {
            let knn = store.query_knn(query, k).map_err(|e| e.for_example(id))?;
            let soft = store.annotate(query, k, temperature).map_err(|e| e.for_example(id))?;
            let neighbors = knn
                .indices
                .iter()
                .zip(&knn.distances)
                .map(|(&i, d)| {
                    let entry = store.get(i);
                    NeighborReport {
                        id: entry.source_id.clone(),
                        label: entry.label,
                        distance: d.to_f64_lossy(),
                    }
                })
                .collect();
            Ok(CaseStudyEntry {
                target_id: id.clone(),
                neighbors,
                soft_label: soft.to_f64_vec(),
                hard_label: soft.argmax(),
            })
        })
        .collect()
}

/// Human-readable case-study listing, one block per query.
pub fn render_case_study(entries: &[CaseStudyEntry]) -> String {
    let mut out = String::new();
    for entry in entries {
        let soft: Vec<String> = entry.soft_label.iter().map(|p| format!("{p:.4}")).collect();
        out.push_str(&format!(
            "{}  ->  label {}  soft [{}]\n",
            entry.target_id,
            entry.hard_label,
            soft.join(", ")
        ));
        for (rank, n) in entry.neighbors.iter().enumerate() {
            out.push_str(&format!(
                "  #{}  {}  label {}  distance {:.6}\n",
                rank + 1,
                n.id,
                n.label,
                n.distance
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, DataExample, SyntheticSpec};
    use crate::datastore::DatastoreEntry;
    use crate::student::Activation;

    fn two_blob_dataset(n: usize, flip: bool) -> LabeledDataset<f64> {
        let examples = (0..n)
            .map(|i| {
                let label = (i % 2) ^ usize::from(flip);
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                let jitter = 0.1 * (i as f64 / n as f64);
                DataExample {
                    id: format!("ex-{i:03}"),
                    teacher: EmbeddingVector::new(vec![sign * 2.0 + jitter; 3]).unwrap(),
                    student: EmbeddingVector::new(vec![sign * 2.0 + jitter, jitter + 0.05])
                        .unwrap(),
                    label,
                    soft_label: None,
                }
            })
            .collect();
        LabeledDataset::new(examples, 2).unwrap()
    }

    fn sign_classifier() -> StudentModel<f64> {
        // Encoder passes the inputs through tanh; the head reads the sign
        // of the first coordinate.
        let config = StudentConfig {
            input_dim: 2,
            hidden_dims: vec![],
            repr_dim: 2,
            num_classes: 2,
            activation: Activation::Tanh,
            seed: 0,
        };
        let mut model = StudentModel::init(&config).unwrap();
        model.layers[0].weight = vec![1.0, 0.0, 0.0, 1.0];
        model.layers[0].bias = vec![0.0, 0.0];
        model.head.weight = vec![1.0, 0.0, -1.0, 0.0];
        model.head.bias = vec![0.0, 0.0];
        model
    }

    #[test]
    fn a_perfect_classifier_scores_one_everywhere() {
        let dataset = two_blob_dataset(20, false);
        let result = evaluate(&sign_classifier(), &dataset).unwrap();
        assert_eq!(result.accuracy, 1.0);
        assert_eq!(result.per_class, vec![Some(1.0), Some(1.0)]);
        assert_eq!(result.confusion, vec![vec![10, 0], vec![0, 10]]);
    }

    #[test]
    fn an_inverted_classifier_scores_zero() {
        let dataset = two_blob_dataset(20, true);
        let result = evaluate(&sign_classifier(), &dataset).unwrap();
        assert_eq!(result.accuracy, 0.0);
        assert_eq!(result.confusion, vec![vec![0, 10], vec![10, 0]]);
    }

    #[test]
    fn a_constant_predictor_scores_the_class_share() {
        // All-zero parameters give uniform predictions, and argmax ties
        // resolve to class 0.
        let config = StudentConfig {
            input_dim: 2,
            hidden_dims: vec![],
            repr_dim: 2,
            num_classes: 2,
            activation: Activation::Tanh,
            seed: 0,
        };
        let mut model = StudentModel::<f64>::init(&config).unwrap();
        for layer in model.layers.iter_mut().chain(std::iter::once(&mut model.head)) {
            layer.weight.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let dataset = two_blob_dataset(20, false);
        let result = evaluate(&model, &dataset).unwrap();
        assert_eq!(result.accuracy, 0.5);
        assert_eq!(result.per_class, vec![Some(1.0), Some(0.0)]);
        assert_eq!(result.confusion, vec![vec![10, 0], vec![10, 0]]);
    }

    #[test]
    fn evaluation_bookkeeping_matches_a_direct_loop() {
        let spec = SyntheticSpec {
            dim_teacher: 6,
            dim_student: 4,
            source_train: 40,
            source_dev: 4,
            source_test: 4,
            target_train: 4,
            target_dev: 4,
            target_test: 4,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let dataset = &data.source.train;
        let config = StudentConfig {
            input_dim: 4,
            hidden_dims: vec![5],
            repr_dim: 3,
            num_classes: 2,
            activation: Activation::Tanh,
            seed: 9,
        };
        let model = StudentModel::<f64>::init(&config).unwrap();
        let result = evaluate(&model, dataset).unwrap();
        let mut correct = 0usize;
        let mut matrix = vec![vec![0usize; 2]; 2];
        for ex in dataset.examples() {
            let pred = model.forward(&ex.student).unwrap().predicted.argmax();
            matrix[ex.label][pred] += 1;
            if pred == ex.label {
                correct += 1;
            }
        }
        assert_eq!(result.confusion, matrix);
        assert_eq!(result.accuracy, correct as f64 / dataset.len() as f64);
        for t in 0..2 {
            let total: usize = matrix[t].iter().sum();
            assert_eq!(result.per_class[t], Some(matrix[t][t] as f64 / total as f64));
        }
    }

    struct Fixture {
        data: crate::dataio::SyntheticData<f64>,
        annotations: Vec<AnnotationRecord>,
        student_config: StudentConfig,
        train_config: TrainConfig,
    }

    fn fixture(sabotage_annotations: bool) -> Fixture {
        let spec = SyntheticSpec {
            dim_teacher: 6,
            dim_student: 4,
            class_separation: 3.0,
            domain_shift: 0.5,
            noise_sigma: 0.4,
            source_train: 80,
            source_dev: 8,
            source_test: 8,
            target_train: 48,
            target_dev: 24,
            target_test: 40,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let entries: Vec<DatastoreEntry<f64>> = data
            .source
            .train
            .examples()
            .iter()
            .map(|ex| DatastoreEntry {
                key: ex.teacher.clone(),
                label: ex.label,
                source_id: ex.id.clone(),
            })
            .collect();
        let store = Datastore::build(entries, 2).unwrap();
        let annotated =
            store.annotate_dataset(&data.target.train.teacher_queries(), 8, 1.0).unwrap();
        let mut annotations: Vec<AnnotationRecord> =
            annotated.iter().map(AnnotationRecord::from).collect();
        if sabotage_annotations {
            for rec in &mut annotations {
                rec.hard_label = 0;
                rec.soft_label = vec![1.0, 0.0];
            }
        }
        let student_config = StudentConfig {
            input_dim: 4,
            hidden_dims: vec![8],
            repr_dim: 4,
            num_classes: 2,
            activation: Activation::Tanh,
            seed: 1,
        };
        let train_config = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 4,
            patience: 4,
            ..TrainConfig::default()
        };
        Fixture { data, annotations, student_config, train_config }
    }

    fn run_fixture_ablation(fx: &Fixture) -> AblationReport {
        run_ablation(
            &fx.data.target.train,
            &fx.data.target.dev,
            &fx.data.target.test,
            &fx.annotations,
            &fx.student_config,
            &fx.train_config,
            &LossConfig::default(),
            99,
        )
        .unwrap()
    }

    #[test]
    fn the_ablation_covers_its_declared_grid() {
        let fx = fixture(false);
        let report = run_fixture_ablation(&fx);
        let summary: Vec<_> = report
            .arms
            .iter()
            .map(|a| (a.name.as_str(), a.label_source, a.classification_loss, a.sim_loss))
            .collect();
        use ClassificationLoss::{CrossEntropy, Kl};
        use LabelSource::{GroundTruth, Pseudo};
        use SimLossVariant::{Kl as SimKl, None as SimNone};
        assert_eq!(
            summary,
            vec![
                ("gt-ce", GroundTruth, CrossEntropy, SimNone),
                ("pt-ce", Pseudo, CrossEntropy, SimNone),
                ("gt-ce+sim", GroundTruth, CrossEntropy, SimKl),
                ("pt-ce+sim", Pseudo, CrossEntropy, SimKl),
                ("pt-kl", Pseudo, Kl, SimNone),
                ("pt-kl+sim", Pseudo, Kl, SimKl),
            ]
        );
        let mut digests: Vec<_> = report.arms.iter().map(|a| a.config_digest.clone()).collect();
        digests.sort();
        digests.dedup();
        assert_eq!(digests.len(), 6, "arm digests must be distinct");
        for arm in &report.arms {
            assert_eq!(arm.config_digest.len(), 64);
            assert_eq!(arm.test_eval.accuracy, arm.test_accuracy);
        }
        let table = report.table();
        assert_eq!(table.lines().count(), 7);
        assert!(table.contains("pt-kl+sim"));
    }

    #[test]
    fn ablation_runs_are_reproducible() {
        let fx = fixture(false);
        let a = run_fixture_ablation(&fx);
        let b = run_fixture_ablation(&fx);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn ground_truth_arms_ignore_sabotaged_annotations() {
        // Constant annotations drag every pseudo-label arm toward the
        // majority class; ground-truth arms must not notice.
        let fx = fixture(true);
        let report = run_fixture_ablation(&fx);
        let by_name = |name: &str| report.arms.iter().find(|a| a.name == name).unwrap();
        assert!(by_name("gt-ce").test_accuracy >= 0.9, "{}", by_name("gt-ce").test_accuracy);
        assert!(
            by_name("pt-ce").test_accuracy <= 0.65,
            "{}",
            by_name("pt-ce").test_accuracy
        );
    }

    #[test]
    fn the_variant_comparison_sweeps_the_similarity_family() {
        let fx = fixture(false);
        let report = run_simloss_comparison(
            &fx.data.target.train,
            &fx.data.target.dev,
            &fx.data.target.test,
            &fx.annotations,
            &fx.student_config,
            &fx.train_config,
            &LossConfig::default(),
            7,
        )
        .unwrap();
        let got: Vec<_> =
            report.arms.iter().map(|a| (a.name.as_str(), a.sim_loss)).collect();
        assert_eq!(
            got,
            vec![
                ("pt-kl+sim-kl", SimLossVariant::Kl),
                ("pt-kl+sim-l1", SimLossVariant::L1),
                ("pt-kl+sim-l2", SimLossVariant::L2),
            ]
        );
        for arm in &report.arms {
            assert_eq!(arm.label_source, LabelSource::Pseudo);
            assert_eq!(arm.classification_loss, ClassificationLoss::Kl);
        }
    }

    #[test]
    fn missing_annotations_name_the_offending_example() {
        let fx = fixture(false);
        let err = run_ablation(
            &fx.data.target.train,
            &fx.data.target.dev,
            &fx.data.target.test,
            &fx.annotations[1..],
            &fx.student_config,
            &fx.train_config,
            &LossConfig::default(),
            3,
        )
        .unwrap_err();
        assert!(err.to_string().contains(&fx.annotations[0].id), "{err}");
    }

    #[test]
    fn case_studies_list_neighbors_nearest_first() {
        let entries = vec![
            ("a", vec![0.0, 0.0], 0),
            ("b", vec![1.0, 0.0], 0),
            ("c", vec![2.0, 0.0], 1),
            ("d", vec![5.0, 0.0], 1),
        ];
        let store = Datastore::build(
            entries
                .iter()
                .map(|(id, v, label)| DatastoreEntry {
                    key: EmbeddingVector::new(v.clone()).unwrap(),
                    label: *label,
                    source_id: id.to_string(),
                })
                .collect(),
            2,
        )
        .unwrap();
        let queries = vec![("q-0".to_string(), EmbeddingVector::new(vec![0.9, 0.0]).unwrap())];
        let out = case_study(&store, &queries, 3, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        let entry = &out[0];
        let ids: Vec<_> = entry.neighbors.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "a", "c"]);
        assert!((entry.neighbors[0].distance - 0.1).abs() < 1e-9);
        assert_eq!(entry.neighbors[2].label, 1);
        let expect = store
            .annotate(&queries[0].1, 3, 1.0)
            .unwrap()
            .to_f64_vec();
        assert_eq!(entry.soft_label, expect);
        let text = render_case_study(&out);
        assert!(text.contains("q-0") && text.contains("#1  b"));
    }
}
