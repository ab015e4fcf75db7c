//! The student: an MLP encoder that produces a representation vector, and a
//! linear head that turns the representation into class logits.
//!
//! Forward and backward passes are written out by hand. Backward takes two
//! upstream gradient streams per example, one with respect to the logits
//! and one with respect to the representation, because the training losses
//! attach at both points. Internally every pass runs in `f64`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::numerics::{softmax, EmbeddingVector, LabelDistribution};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SXCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative at pre-activation `z` whose activation value was `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture and init seed of a student.
///
/// The encoder stacks `hidden_dims` and then a final layer of `repr_dim`
/// units, all with the same activation; the representation is that last
/// activation. The head is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub repr_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl StudentConfig {
    /// Default architecture for a given input width and class count.
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![64],
            repr_dim: 64,
            num_classes,
            activation: Activation::Tanh,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.repr_dim == 0 {
            return Err(Error::Config("input_dim and repr_dim must be at least 1".into()));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("hidden layer widths must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("student needs at least 2 classes".into()));
        }
        Ok(())
    }

    /// Widths of the encoder layers, input first, representation last.
    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.repr_dim);
        dims
    }
}

/// One dense layer; `weight` is row-major, one row per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> Layer<T> {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { weight: vec![T::zero(); out_dim * in_dim], bias: vec![T::zero(); out_dim], in_dim, out_dim }
    }

    /// `out = W x + b`, accumulated in f64.
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim);
        for u in 0..self.out_dim {
            let row = &self.weight[u * self.in_dim..(u + 1) * self.in_dim];
            let mut acc = self.bias[u].to_f64_lossy();
            for (w, xv) in row.iter().zip(x) {
                acc += w.to_f64_lossy() * xv;
            }
            out.push(acc);
        }
        out
    }
}

/// Everything the forward pass computed for one example.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Scalar> {
    pub input: Vec<T>,
    pub pre_activations: Vec<Vec<T>>,
    pub activations: Vec<Vec<T>>,
    pub representation: EmbeddingVector<T>,
    pub logits: Vec<T>,
    pub predicted: LabelDistribution<T>,
}

/// Parameter gradients, shaped exactly like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub layers: Vec<Layer<T>>,
    pub head: Layer<T>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros_like(model: &StudentModel<T>) -> Self {
        Self {
            layers: model.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect(),
            head: Layer::zeros(model.head.in_dim, model.head.out_dim),
        }
    }

    /// All gradient slots in checkpoint order.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }
}

/// MLP student with explicit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel<T> {
    pub config: StudentConfig,
    pub layers: Vec<Layer<T>>,
    pub head: Layer<T>,
}

impl<T: Scalar> StudentModel<T> {
    /// Initializes weights from the config seed.
    ///
    /// Weights are uniform in ±sqrt(6 / fan_in); biases start at zero.
    /// The same seed always produces the same parameters.
    pub fn init(config: &StudentConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dims = config.encoder_dims();
        let mut draw = |in_dim: usize, out_dim: usize| -> Layer<T> {
            let bound = (6.0 / in_dim as f64).sqrt();
            let weight = (0..out_dim * in_dim)
                .map(|_| T::cast(rng.random_range(-bound..bound)))
                .collect();
            Layer { weight, bias: vec![T::zero(); out_dim], in_dim, out_dim }
        };
        let layers: Vec<Layer<T>> =
            dims.windows(2).map(|pair| draw(pair[0], pair[1])).collect();
        let head = draw(config.repr_dim, config.num_classes);
        Ok(Self { config: config.clone(), layers, head })
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .chain(std::iter::once(&self.head))
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Runs one example through the encoder and head.
    pub fn forward(&self, input: &EmbeddingVector<T>) -> Result<ForwardTrace<T>> {
        if input.dim() != self.config.input_dim {
            return Err(Error::Dimension { expected: self.config.input_dim, got: input.dim() });
        }
        let mut x: Vec<f64> = input.as_slice().iter().map(|v| v.to_f64_lossy()).collect();
        let mut pre_activations: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut activations: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.matvec(&x);
            let a: Vec<f64> = z.iter().map(|&v| self.config.activation.apply(v)).collect();
            pre_activations.push(z.iter().map(|&v| T::cast(v)).collect());
            activations.push(a.iter().map(|&v| T::cast(v)).collect());
            x = a;
        }
        let logits_f64 = self.head.matvec(&x);
        let logits: Vec<T> = logits_f64.iter().map(|&v| T::cast(v)).collect();
        let predicted = LabelDistribution::new(softmax(&logits, T::one())?)?;
        Ok(ForwardTrace {
            input: input.as_slice().to_vec(),
            representation: EmbeddingVector::new(
                activations.last().expect("encoder has at least one layer").clone(),
            )?,
            pre_activations,
            activations,
            logits,
            predicted,
        })
    }

    /// Accumulates parameter gradients over a batch.
    ///
    /// `grad_logits[i]` and `grad_repr[i]` are the loss gradients at example
    /// i's logits and representation. Any 1/batch scaling is the caller's;
    /// this pass only applies the chain rule and sums over examples.
    pub fn backward(
        &self,
        traces: &[ForwardTrace<T>],
        grad_logits: &[Vec<T>],
        grad_repr: &[Vec<T>],
    ) -> Result<GradientSet<T>> {
        if traces.len() != grad_logits.len() || traces.len() != grad_repr.len() {
            return Err(Error::Dimension { expected: traces.len(), got: grad_logits.len().min(grad_repr.len()) });
        }
        let mut grads_f64 = GradAccum::zeros(self);
        for ((trace, g_logit), g_repr) in traces.iter().zip(grad_logits).zip(grad_repr) {
            if g_logit.len() != self.config.num_classes {
                return Err(Error::Dimension { expected: self.config.num_classes, got: g_logit.len() });
            }
            if g_repr.len() != self.config.repr_dim {
                return Err(Error::Dimension { expected: self.config.repr_dim, got: g_repr.len() });
            }
            self.backward_one(trace, g_logit, g_repr, &mut grads_f64);
        }
        Ok(grads_f64.into_gradient_set(self))
    }

    fn backward_one(
        &self,
        trace: &ForwardTrace<T>,
        grad_logits: &[T],
        grad_repr: &[T],
        acc: &mut GradAccum,
    ) {
        let repr: Vec<f64> = trace.representation.as_slice().iter().map(|v| v.to_f64_lossy()).collect();
        let d_logits: Vec<f64> = grad_logits.iter().map(|v| v.to_f64_lossy()).collect();

        // Head: dW = d_logits ⊗ repr, db = d_logits.
        for c in 0..self.head.out_dim {
            acc.head_bias[c] += d_logits[c];
            let row = &mut acc.head_weight[c * self.head.in_dim..(c + 1) * self.head.in_dim];
            for (slot, r) in row.iter_mut().zip(&repr) {
                *slot += d_logits[c] * r;
            }
        }

        // Into the representation: head backprop plus the direct stream.
        let mut d_act: Vec<f64> = grad_repr.iter().map(|v| v.to_f64_lossy()).collect();
        for (j, slot) in d_act.iter_mut().enumerate() {
            for c in 0..self.head.out_dim {
                *slot += self.head.weight[c * self.head.in_dim + j].to_f64_lossy() * d_logits[c];
            }
        }

        // Encoder layers, last to first.
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let z = &trace.pre_activations[l];
            let a = &trace.activations[l];
            let dz: Vec<f64> = (0..layer.out_dim)
                .map(|u| {
                    d_act[u]
                        * self
                            .config
                            .activation
                            .derivative(z[u].to_f64_lossy(), a[u].to_f64_lossy())
                })
                .collect();
            let layer_input: Vec<f64> = if l == 0 {
                trace.input.iter().map(|v| v.to_f64_lossy()).collect()
            } else {
                trace.activations[l - 1].iter().map(|v| v.to_f64_lossy()).collect()
            };
            for u in 0..layer.out_dim {
                acc.biases[l][u] += dz[u];
                let row = &mut acc.weights[l][u * layer.in_dim..(u + 1) * layer.in_dim];
                for (slot, x) in row.iter_mut().zip(&layer_input) {
                    *slot += dz[u] * x;
                }
            }
            if l > 0 {
                let mut d_prev = vec![0f64; layer.in_dim];
                for u in 0..layer.out_dim {
                    let row = &layer.weight[u * layer.in_dim..(u + 1) * layer.in_dim];
                    for (v, w) in row.iter().enumerate() {
                        d_prev[v] += w.to_f64_lossy() * dz[u];
                    }
                }
                d_act = d_prev;
            }
        }
    }

    /// Parameters rounded through `f32`: the model a saved checkpoint
    /// would load back. Dev evaluation uses this view so reported metrics
    /// survive a save/load cycle exactly.
    pub fn quantized(&self) -> Self {
        let q = |layer: &Layer<T>| Layer {
            weight: layer.weight.iter().map(|w| T::cast(f64::from(w.to_f64_lossy() as f32))).collect(),
            bias: layer.bias.iter().map(|b| T::cast(f64::from(b.to_f64_lossy() as f32))).collect(),
            in_dim: layer.in_dim,
            out_dim: layer.out_dim,
        };
        Self {
            config: self.config.clone(),
            layers: self.layers.iter().map(&q).collect(),
            head: q(&self.head),
        }
    }

    /// Writes the checkpoint: a JSON header followed by the parameters as
    /// little-endian `f32`, in layer order, weights before biases.
    pub fn save<W: Write>(&self, w: &mut W, epoch: usize) -> Result<()> {
        let header = CheckpointHeader { config: self.config.clone(), seed: self.config.seed, epoch };
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        binio::write_u16(w, VERSION)?;
        binio::write_u32(w, header_bytes.len() as u32)?;
        w.write_all(&header_bytes)?;
        for layer in self.layers.iter().chain(std::iter::once(&self.head)) {
            for v in layer.weight.iter().chain(layer.bias.iter()) {
                binio::write_f32(w, v.to_f64_lossy() as f32)?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`StudentModel::save`].
    pub fn load<R: Read>(r: &mut R) -> Result<(Self, usize)> {
        binio::expect_magic(r, MAGIC)?;
        let version = binio::read_u16(r, "version")?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = binio::read_u32(r, "header length")? as usize;
        let header_bytes = binio::read_bytes(r, header_len, "header")?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::format(format!("bad checkpoint header: {e}")))?;
        header.config.validate()?;
        let mut model = Self {
            config: header.config.clone(),
            layers: {
                let dims = header.config.encoder_dims();
                dims.windows(2).map(|p| Layer::zeros(p[0], p[1])).collect()
            },
            head: Layer::zeros(header.config.repr_dim, header.config.num_classes),
        };
        for layer in model.layers.iter_mut().chain(std::iter::once(&mut model.head)) {
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = T::cast(f64::from(binio::read_f32(r, "parameter")?));
            }
        }
        binio::expect_eof(r)?;
        Ok((model, header.epoch))
    }

    pub fn save_to_path(&self, path: &Path, epoch: usize) -> Result<()> {
        crate::dataio::write_atomic(path, |w| self.save(w, epoch)).map_err(|e| e.with_path(path))
    }

    pub fn load_from_path(path: &Path) -> Result<(Self, usize)> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io(e).with_path(path))?;
        let mut reader = std::io::BufReader::new(file);
        Self::load(&mut reader).map_err(|e| e.with_path(path))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: StudentConfig,
    seed: u64,
    epoch: usize,
}

/// f64 gradient accumulator; converted to `T` only once the batch is done.
struct GradAccum {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    head_weight: Vec<f64>,
    head_bias: Vec<f64>,
}

impl GradAccum {
    fn zeros<T: Scalar>(model: &StudentModel<T>) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0f64; l.weight.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0f64; l.bias.len()]).collect(),
            head_weight: vec![0f64; model.head.weight.len()],
            head_bias: vec![0f64; model.head.bias.len()],
        }
    }

    fn into_gradient_set<T: Scalar>(self, model: &StudentModel<T>) -> GradientSet<T> {
        let to_layer = |w: Vec<f64>, b: Vec<f64>, in_dim: usize, out_dim: usize| Layer {
            weight: w.into_iter().map(T::cast).collect(),
            bias: b.into_iter().map(T::cast).collect(),
            in_dim,
            out_dim,
        };
        let layers = self
            .weights
            .into_iter()
            .zip(self.biases)
            .zip(&model.layers)
            .map(|((w, b), l)| to_layer(w, b, l.in_dim, l.out_dim))
            .collect();
        let head = to_layer(self.head_weight, self.head_bias, model.head.in_dim, model.head.out_dim);
        GradientSet { layers, head }
    }
}
