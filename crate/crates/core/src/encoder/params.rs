use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RenderConfig;
use crate::io::TensorContainer;
use crate::nn::Real;

/// Shape of the sequence encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub base_channels: usize,
    pub part_count: usize,
    pub embed_dim: usize,
    pub class_count: usize,
    pub image_height: usize,
    pub image_width: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            part_count: 8,
            embed_dim: 128,
            class_count: 2,
            image_height: 64,
            image_width: 64,
        }
    }
}

impl EncoderConfig {
    /// Channels of the backbone output.
    pub fn feature_channels(&self) -> usize {
        8 * self.base_channels
    }

    /// Spatial size of the backbone output (three stride-2 reductions).
    pub fn feature_size(&self) -> (usize, usize) {
        (self.image_height / 8, self.image_width / 8)
    }

    pub fn flat_dim(&self) -> usize {
        self.part_count * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.feature_size();
        if self.image_height % 8 != 0 || self.image_width % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::ConfigMismatch(format!(
                "image size {}x{} must be a positive multiple of 8",
                self.image_height, self.image_width
            )));
        }
        if self.part_count == 0 || h % self.part_count != 0 {
            return Err(Error::ConfigMismatch(format!(
                "part count {} must divide backbone output height {h}",
                self.part_count
            )));
        }
        if self.base_channels == 0 || self.embed_dim == 0 || self.class_count == 0 {
            return Err(Error::ConfigMismatch(
                "base channels, embedding dimension and class count must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorKind {
    Learnable,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
    pub data: Vec<T>,
}

/// Convolution followed by batch norm.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvSlot {
    pub cout: usize,
    pub weight: usize,
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
}

/// Tensor indices of every layer.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub convs: [ConvSlot; 8],
    pub parts: usize,
    pub neck_gamma: usize,
    pub neck_mean: usize,
    pub neck_var: usize,
    pub classifier: usize,
}

/// Conv layer channel plan `(cin, cout)` for base width `b`.
///
/// stem (3→b), stem (b→2b, pool), residual block at 2b, conv (2b→4b, pool),
/// conv (4b→8b, pool), residual block at 8b.
fn conv_plan(b: usize) -> [(usize, usize); 8] {
    [
        (3, b),
        (b, 2 * b),
        (2 * b, 2 * b),
        (2 * b, 2 * b),
        (2 * b, 4 * b),
        (4 * b, 8 * b),
        (8 * b, 8 * b),
        (8 * b, 8 * b),
    ]
}

/// All network tensors together with the config that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: EncoderConfig,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Fan-in scaled Gaussian initialization from a seeded generator:
    /// `sqrt(2/fan_in)` for convolutions, `sqrt(1/fan_in)` for linear maps,
    /// unit BN scale and zero shift.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        let gaussian = |shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng| -> Vec<T> {
            let n: usize = shape.iter().product();
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| T::of(dist.sample(rng))).collect()
        };
        let mut push = |name: String, shape: Vec<usize>, kind, data: Vec<T>| {
            tensors.push(Tensor {
                name,
                shape,
                kind,
                data,
            });
        };
        for (i, (cin, cout)) in conv_plan(config.base_channels).into_iter().enumerate() {
            let fan_in = cin * 9;
            let w = gaussian(vec![cout, cin, 3, 3], (2.0 / fan_in as f64).sqrt(), &mut rng);
            push(format!("conv{i}.weight"), vec![cout, cin, 3, 3], TensorKind::Learnable, w);
            push(format!("bn{i}.gamma"), vec![cout], TensorKind::Learnable, vec![T::one(); cout]);
            push(format!("bn{i}.beta"), vec![cout], TensorKind::Learnable, vec![T::zero(); cout]);
            push(format!("bn{i}.running_mean"), vec![cout], TensorKind::Buffer, vec![T::zero(); cout]);
            push(format!("bn{i}.running_var"), vec![cout], TensorKind::Buffer, vec![T::one(); cout]);
        }
        let c = config.feature_channels();
        let (p, d) = (config.part_count, config.embed_dim);
        let flat = config.flat_dim();
        let parts = gaussian(vec![p, d, c], (1.0 / c as f64).sqrt(), &mut rng);
        push("parts.weight".into(), vec![p, d, c], TensorKind::Learnable, parts);
        push("neck.gamma".into(), vec![flat], TensorKind::Learnable, vec![T::one(); flat]);
        push("neck.running_mean".into(), vec![flat], TensorKind::Buffer, vec![T::zero(); flat]);
        push("neck.running_var".into(), vec![flat], TensorKind::Buffer, vec![T::one(); flat]);
        let cls = gaussian(vec![config.class_count, flat], (1.0 / flat as f64).sqrt(), &mut rng);
        push("classifier.weight".into(), vec![config.class_count, flat], TensorKind::Learnable, cls);
        Ok(Self { config, tensors })
    }

    pub(crate) fn layout(&self) -> Layout {
        let convs = std::array::from_fn(|i| {
            let (_, cout) = conv_plan(self.config.base_channels)[i];
            ConvSlot {
                cout,
                weight: 5 * i,
                gamma: 5 * i + 1,
                beta: 5 * i + 2,
                mean: 5 * i + 3,
                var: 5 * i + 4,
            }
        });
        Layout {
            convs,
            parts: 40,
            neck_gamma: 41,
            neck_mean: 42,
            neck_var: 43,
            classifier: 44,
        }
    }

    pub fn data(&self, index: usize) -> &[T] {
        &self.tensors[index].data
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.kind == TensorKind::Learnable)
            .map(|t| t.data.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    kind: t.kind,
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    /// Zero-filled gradient buffers aligned with `tensors`.
    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.tensors
            .iter()
            .map(|t| match t.kind {
                TensorKind::Learnable => vec![T::zero(); t.data.len()],
                TensorKind::Buffer => Vec::new(),
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    encoder: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    render: Option<RenderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iteration: Option<usize>,
    tensor_kinds: Vec<TensorKind>,
}

/// A checkpoint on disk: parameters plus the render settings they were
/// trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub render: Option<RenderConfig>,
    pub iteration: Option<usize>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "encoder".into(),
            encoder: self.params.config,
            render: self.render,
            iteration: self.iteration,
            tensor_kinds: self.params.tensors.iter().map(|t| t.kind).collect(),
        };
        let meta = serde_json::to_value(meta).map_err(|e| Error::json(path, e))?;
        let mut c = TensorContainer::new(meta);
        for t in &self.params.tensors {
            c.push(t.name.clone(), t.shape.clone(), t.data.clone());
        }
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = TensorContainer::load(path)?;
        let meta: CheckpointMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::json(path, e))?;
        if meta.kind != "encoder" {
            return Err(Error::format(path, format!("not an encoder checkpoint: {}", meta.kind)));
        }
        let reference = ModelParams::<f32>::init(meta.encoder, 0)?;
        if reference.tensors.len() != c.tensors.len() || meta.tensor_kinds.len() != c.tensors.len() {
            return Err(Error::ConfigMismatch(format!(
                "{} tensors in checkpoint, config implies {}",
                c.tensors.len(),
                reference.tensors.len()
            )));
        }
        let mut tensors = Vec::with_capacity(c.tensors.len());
        for ((name, shape, data), (r, kind)) in c
            .tensors
            .into_iter()
            .zip(reference.tensors.iter().zip(meta.tensor_kinds))
        {
            if name != r.name || shape != r.shape {
                return Err(Error::ConfigMismatch(format!(
                    "tensor `{name}` {shape:?} does not match expected `{}` {:?}",
                    r.name, r.shape
                )));
            }
            tensors.push(Tensor {
                name,
                shape,
                kind,
                data,
            });
        }
        Ok(Self {
            params: ModelParams {
                config: meta.encoder,
                tensors,
            },
            render: meta.render,
            iteration: meta.iteration,
        })
    }
}
