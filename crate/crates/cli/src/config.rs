//! Config file schema and the flag > file > default resolution rules.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use simdistill::dataio::SyntheticSpec;
use simdistill::losses::LossConfig;
use simdistill::student::{Activation, StudentConfig};
use simdistill::trainer::TrainConfig;
use simdistill::{Error, Result};

use crate::args::{ArchFlags, GenArgs, LossFlags, TrainFlags};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_K: usize = 16;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Student architecture section. Input and class dimensions come from the
/// data, so only the free shape choices live here.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden_dims: Vec<usize>,
    pub repr_dim: usize,
    pub activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let base = StudentConfig::new(1, 2);
        Self {
            hidden_dims: base.hidden_dims,
            repr_dim: base.repr_dim,
            activation: base.activation,
        }
    }
}

/// Root of the optional JSON config file. Every section is optional;
/// absent sections fall back to built-in defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub synthetic: Option<SyntheticSpec>,
    pub student: Option<ArchConfig>,
    pub train: Option<TrainConfig>,
    pub loss: Option<LossConfig>,
    pub k: Option<usize>,
    pub temperature: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(e).context(format!("config file {}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))
    }

    /// Base seed for the invocation: flag, then file, then 42.
    pub fn resolve_seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn resolve_k(&self, flag: Option<usize>) -> usize {
        flag.or(self.k).unwrap_or(DEFAULT_K)
    }

    pub fn resolve_temperature(&self, flag: Option<f64>) -> f64 {
        flag.or(self.temperature).unwrap_or(DEFAULT_TEMPERATURE)
    }

    /// Generator parameters with flags applied on top. The resolved base
    /// seed carries over unless the file's `synthetic` section pinned its own.
    pub fn resolve_synthetic(&self, args: &GenArgs, seed_flag: Option<u64>) -> SyntheticSpec {
        let mut spec = self.synthetic.clone().unwrap_or_default();
        if let Some(seed) = seed_flag {
            spec.seed = seed;
        } else if self.synthetic.is_none() {
            spec.seed = self.seed.unwrap_or(DEFAULT_SEED);
        }
        apply(&mut spec.dim_teacher, args.dim_teacher);
        apply(&mut spec.dim_student, args.dim_student);
        apply(&mut spec.num_classes, args.classes);
        apply(&mut spec.source_train, args.source_train);
        apply(&mut spec.source_dev, args.source_dev);
        apply(&mut spec.source_test, args.source_test);
        apply(&mut spec.target_train, args.target_train);
        apply(&mut spec.target_dev, args.target_dev);
        apply(&mut spec.target_test, args.target_test);
        apply(&mut spec.class_separation, args.separation);
        apply(&mut spec.domain_shift, args.shift);
        apply(&mut spec.noise_sigma, args.noise);
        spec
    }

    /// Full student config: data dictates input and class dims, file and
    /// flags shape the rest, the caller supplies the init seed.
    pub fn resolve_student(
        &self,
        flags: &ArchFlags,
        input_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> StudentConfig {
        let arch = self.student.clone().unwrap_or_default();
        let mut config = StudentConfig::new(input_dim, num_classes);
        config.hidden_dims = flags.hidden_dims.clone().unwrap_or(arch.hidden_dims);
        config.repr_dim = flags.repr_dim.unwrap_or(arch.repr_dim);
        config.activation = flags.activation.map(Into::into).unwrap_or(arch.activation);
        config.seed = seed;
        config
    }

    pub fn resolve_loss(&self, flags: &LossFlags) -> LossConfig {
        let mut config = self.loss.clone().unwrap_or_default();
        if let Some(v) = flags.classification_loss {
            config.classification_loss = v.into();
        }
        if let Some(v) = flags.sim_loss {
            config.sim_loss = v.into();
        }
        apply(&mut config.sim_temperature, flags.sim_temperature);
        apply(&mut config.include_self_similarity, flags.include_self_similarity);
        config
    }

    pub fn resolve_train(&self, flags: &TrainFlags) -> TrainConfig {
        let mut config = self.train.clone().unwrap_or_default();
        apply(&mut config.batch_size, flags.batch_size);
        apply(&mut config.max_epochs, flags.max_epochs);
        apply(&mut config.learning_rate, flags.learning_rate);
        apply(&mut config.weight_decay, flags.weight_decay);
        apply(&mut config.beta1, flags.beta1);
        apply(&mut config.beta2, flags.beta2);
        apply(&mut config.epsilon, flags.epsilon);
        apply(&mut config.patience, flags.patience);
        config
    }
}

fn apply<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
