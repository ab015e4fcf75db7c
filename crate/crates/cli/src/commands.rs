//! Subcommand implementations. Each takes resolved config plus its own
//! argument struct, talks to the library, and reports on stdout. Output
//! files are written atomically.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;
use simdistill::dataio::{self, LabeledDataset};
use simdistill::datastore::{self, Datastore, DatastoreEntry};
use simdistill::harness::{self, AblationReport};
use simdistill::numerics::EmbeddingVector;
use simdistill::student::StudentModel;
use simdistill::{derive_seed, trainer, Error, Result};

use crate::args::{
    AblateArgs, AnnotateArgs, BuildArgs, CaseStudyArgs, Cli, Command, EvalArgs, GenArgs,
    SpaceArg, TrainArgs,
};
use crate::config::FileConfig;

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen(args) => gen(&file, cli.seed, args),
        Command::Build(args) => build(args),
        Command::Annotate(args) => annotate(&file, args),
        Command::Train(args) => train(&file, cli.seed, args),
        Command::Eval(args) => eval(args),
        Command::Ablate(args) => ablate(&file, cli.seed, args),
        Command::Casestudy(args) => casestudy(&file, args),
    }
}

fn gen(file: &FileConfig, seed_flag: Option<u64>, args: &GenArgs) -> Result<()> {
    let spec = file.resolve_synthetic(args, seed_flag);
    let data = dataio::generate_synthetic::<f64>(&spec)?;
    create_dir(&args.out)?;
    let splits = [
        ("source_train.jsonl", &data.source.train),
        ("source_dev.jsonl", &data.source.dev),
        ("source_test.jsonl", &data.source.test),
        ("target_train.jsonl", &data.target.train),
        ("target_dev.jsonl", &data.target.dev),
        ("target_test.jsonl", &data.target.test),
    ];
    for (name, ds) in splits {
        let path = args.out.join(name);
        dataio::write_dataset_to_path(&path, ds)?;
        println!(
            "{}  {} examples  sha256 {}",
            path.display(),
            ds.len(),
            dataio::dataset_digest(ds)
        );
    }
    Ok(())
}

fn build(args: &BuildArgs) -> Result<()> {
    let embeddings = dataio::load_embeddings::<f64>(&args.embeddings)?;
    let labels = dataio::read_labels_from_path(&args.labels)?;
    let mut label_of = HashMap::with_capacity(labels.len());
    for rec in &labels {
        if label_of.insert(rec.id.as_str(), rec.label).is_some() {
            return Err(Error::Data("duplicate label record".into()).for_example(&rec.id));
        }
    }
    let mut entries = Vec::with_capacity(embeddings.len());
    let mut labeled = HashSet::with_capacity(embeddings.len());
    for (id, key) in embeddings {
        let Some(&label) = label_of.get(id.as_str()) else {
            return Err(Error::Data("embedding has no label record".into()).for_example(&id));
        };
        labeled.insert(id.clone());
        entries.push(DatastoreEntry { key, label, source_id: id });
    }
    for rec in &labels {
        if !labeled.contains(&rec.id) {
            return Err(Error::Data("label record has no embedding".into()).for_example(&rec.id));
        }
    }
    let num_classes = match args.classes {
        Some(c) => c,
        None => labels.iter().map(|r| r.label + 1).max().unwrap_or(0).max(2),
    };
    let store = Datastore::build(entries, num_classes)?;
    store.save_to_path(&args.out)?;
    println!(
        "{}  {} entries  dim {}  {} classes",
        args.out.display(),
        store.len(),
        store.dim(),
        store.num_classes()
    );
    Ok(())
}

fn annotate(file: &FileConfig, args: &AnnotateArgs) -> Result<()> {
    let store = Datastore::<f64>::load_from_path(&args.store)?;
    let targets = dataio::load_embeddings::<f64>(&args.targets)?;
    let k = file.resolve_k(args.k);
    let temperature = file.resolve_temperature(args.temperature);
    let annotated = store.annotate_dataset(&targets, k, temperature)?;
    dataio::write_atomic(&args.out, |w| datastore::write_annotations_jsonl(w, &annotated))
        .map_err(|e| e.with_path(&args.out))?;
    println!("{}  {} annotations  k {}  temperature {}", args.out.display(), annotated.len(), k, temperature);
    Ok(())
}

fn train(file: &FileConfig, seed_flag: Option<u64>, args: &TrainArgs) -> Result<()> {
    let train_ds = dataio::read_dataset_from_path::<f64>(&args.train)?;
    let dev_ds = dataio::read_dataset_from_path::<f64>(&args.dev)?;
    let annotations =
        args.annotations.as_ref().map(|p| read_annotations(p)).transpose()?;

    let input_dim = train_ds
        .student_dim()
        .ok_or_else(|| Error::EmptyInput("train set is empty".into()))?;
    let seed = file.resolve_seed(seed_flag);
    let student_config = file.resolve_student(
        &args.arch,
        input_dim,
        train_ds.num_classes(),
        derive_seed(seed, "student-init"),
    );
    let loss_config = file.resolve_loss(&args.loss);
    let train_config = file.resolve_train(&args.opt);

    let train_examples = harness::training_examples(&train_ds, annotations.as_deref())?;
    let dev_examples = harness::training_examples(&dev_ds, None)?;
    let outcome = trainer::train(
        &student_config,
        &train_examples,
        &dev_examples,
        &loss_config,
        &train_config,
        derive_seed(seed, "train-shuffle"),
    )?;

    create_dir(&args.out_dir)?;
    let model_path = args.out_dir.join("model.sxck");
    outcome.model.save_to_path(&model_path, outcome.report.best_epoch)?;
    let mut report = outcome.report;
    // Stored relative to the report so the pair relocates together.
    report.checkpoint = Some("model.sxck".into());
    write_json(&args.out_dir.join("train_report.json"), &report)?;
    println!(
        "best epoch {}  dev accuracy {:.4}  ({} epochs run)",
        report.best_epoch,
        report.best_dev_accuracy,
        report.per_epoch.len()
    );
    println!("{}", model_path.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (model, epoch) = StudentModel::<f64>::load_from_path(&args.checkpoint)?;
    let ds = dataio::read_dataset_from_path::<f64>(&args.data)?;
    let result = harness::evaluate(&model, &ds)?;
    println!("accuracy {:.4}  ({} examples, checkpoint epoch {})", result.accuracy, ds.len(), epoch);
    for (c, acc) in result.per_class.iter().enumerate() {
        match acc {
            Some(a) => println!("  class {c}  {a:.4}"),
            None => println!("  class {c}  (no examples)"),
        }
    }
    println!("confusion, rows true / cols predicted:");
    for row in &result.confusion {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
        println!("  {}", cells.join(" "));
    }
    if let Some(out) = &args.out {
        write_json(out, &result)?;
        println!("{}", out.display());
    }
    Ok(())
}

fn ablate(file: &FileConfig, seed_flag: Option<u64>, args: &AblateArgs) -> Result<()> {
    let train_ds = dataio::read_dataset_from_path::<f64>(&args.train)?;
    let dev_ds = dataio::read_dataset_from_path::<f64>(&args.dev)?;
    let test_ds = dataio::read_dataset_from_path::<f64>(&args.test)?;
    let annotations = read_annotations(&args.annotations)?;

    let input_dim = train_ds
        .student_dim()
        .ok_or_else(|| Error::EmptyInput("train set is empty".into()))?;
    let seed = file.resolve_seed(seed_flag);
    // The harness re-seeds per run, so only the shape survives from here.
    let student_config =
        file.resolve_student(&args.arch, input_dim, train_ds.num_classes(), seed);
    let loss_config = file.resolve_loss(&args.loss);
    let train_config = file.resolve_train(&args.opt);

    let ablation = harness::run_ablation(
        &train_ds, &dev_ds, &test_ds, &annotations,
        &student_config, &train_config, &loss_config, seed,
    )?;
    let comparison = harness::run_simloss_comparison(
        &train_ds, &dev_ds, &test_ds, &annotations,
        &student_config, &train_config, &loss_config, seed,
    )?;

    create_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("ablation.json"), &ablation)?;
    write_json(&args.out_dir.join("comparison.json"), &comparison)?;
    print_report("label source and loss ablation", &ablation);
    print_report("similarity variant comparison", &comparison);
    println!("{}", args.out_dir.join("ablation.json").display());
    println!("{}", args.out_dir.join("comparison.json").display());
    Ok(())
}

fn print_report(title: &str, report: &AblationReport) {
    println!("{title} (seed {}):", report.seed);
    print!("{}", report.table());
}

fn casestudy(file: &FileConfig, args: &CaseStudyArgs) -> Result<()> {
    let temperature = file.resolve_temperature(args.temperature);
    let entries = match args.space {
        SpaceArg::Teacher => {
            let store_path = args
                .store
                .as_ref()
                .ok_or_else(|| Error::Config("teacher space needs --store".into()))?;
            let store = Datastore::<f64>::load_from_path(store_path)?;
            let queries = dataio::load_embeddings::<f64>(&args.queries)?;
            harness::case_study(&store, &queries, args.k, temperature)?
        }
        SpaceArg::Student => {
            let checkpoint = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::Config("student space needs --checkpoint".into()))?;
            let source_path = args
                .source_data
                .as_ref()
                .ok_or_else(|| Error::Config("student space needs --source-data".into()))?;
            let (model, _) = StudentModel::<f64>::load_from_path(checkpoint)?;
            let source = dataio::read_dataset_from_path::<f64>(source_path)?;
            let entries = representation_entries(&model, &source)?;
            let store = Datastore::build(entries, source.num_classes())?;
            let query_ds = dataio::read_dataset_from_path::<f64>(&args.queries)?;
            let queries = representations(&model, &query_ds)?;
            harness::case_study(&store, &queries, args.k, temperature)?
        }
    };
    print!("{}", harness::render_case_study(&entries));
    if let Some(out) = &args.out {
        write_json(out, &entries)?;
        println!("{}", out.display());
    }
    Ok(())
}

fn representations(
    model: &StudentModel<f64>,
    ds: &LabeledDataset<f64>,
) -> Result<Vec<(String, EmbeddingVector<f64>)>> {
    ds.examples()
        .iter()
        .map(|ex| {
            let trace = model.forward(&ex.student).map_err(|e| e.for_example(&ex.id))?;
            Ok((ex.id.clone(), trace.representation))
        })
        .collect()
}

fn representation_entries(
    model: &StudentModel<f64>,
    ds: &LabeledDataset<f64>,
) -> Result<Vec<DatastoreEntry<f64>>> {
    ds.examples()
        .iter()
        .map(|ex| {
            let trace = model.forward(&ex.student).map_err(|e| e.for_example(&ex.id))?;
            Ok(DatastoreEntry {
                key: trace.representation,
                label: ex.label,
                source_id: ex.id.clone(),
            })
        })
        .collect()
}

fn read_annotations(path: &Path) -> Result<Vec<datastore::AnnotationRecord>> {
    let f = File::open(path)
        .map_err(|e| Error::Io(e).context(format!("annotations {}", path.display())))?;
    datastore::read_annotations_jsonl(BufReader::new(f)).map_err(|e| e.with_path(path))
}

fn create_dir(path: &PathBuf) -> Result<()> {
    fs::create_dir_all(path)
        .map_err(|e| Error::Io(e).context(format!("create {}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    dataio::write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        use std::io::Write;
        w.write_all(b"\n")?;
        Ok(())
    })
    .map_err(|e| e.with_path(path))
}
