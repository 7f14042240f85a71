use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::DatasetName;
use crate::error::{Error, Result};
use crate::nn::{self, PoolKind, PoolSpec};
use crate::sift::{self, DescriptorConfig};
use crate::tensor::{Scalar, Tensor};

/// Feature-extraction stage that follows the convolutional trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Baseline,
    Sift,
    /// Pooling and descriptor paths side by side, concatenated.
    Hybrid,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Baseline => "baseline",
            Arch::Sift => "sift",
            Arch::Hybrid => "hybrid",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Arch::Baseline),
            "sift" => Ok(Arch::Sift),
            "hybrid" => Ok(Arch::Hybrid),
            other => Err(Error::contract(format!("unknown variant '{other}'"))),
        }
    }
}

/// A concrete model family, e.g. `fashion-baseline(max)` or `mnist-sift`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub dataset: DatasetName,
    pub arch: Arch,
    /// Pooling used by the pooling path; fixed to max for `Sift`.
    pub pool: PoolKind,
}

impl Variant {
    pub fn new(dataset: DatasetName, arch: Arch, pool: PoolKind) -> Self {
        let pool = if arch == Arch::Sift { PoolKind::Max } else { pool };
        Variant { dataset, arch, pool }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.dataset, self.arch.as_str())?;
        if self.arch != Arch::Sift {
            write!(f, "({})", self.pool)?;
        }
        Ok(())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts `dataset-arch` or `dataset-arch(pool)`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, pool) = match s.split_once('(') {
            Some((h, rest)) => {
                let p = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::contract(format!("malformed variant '{s}'")))?;
                (h, p.parse()?)
            }
            None => (s, PoolKind::Max),
        };
        let (ds, arch) = head
            .split_once('-')
            .ok_or_else(|| Error::contract(format!("unknown variant '{s}'")))?;
        Ok(Variant::new(ds.parse()?, arch.parse()?, pool))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Valid stride-1 convolution with a square kernel.
    Conv { name: String, in_ch: usize, out_ch: usize, kernel: usize },
    Relu,
    Pool(PoolSpec),
    Sift(DescriptorConfig),
    Flatten,
    Dense { name: String, inputs: usize, outputs: usize },
    Dropout(f64),
}

impl Layer {
    fn conv(name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Layer::Conv { name: name.into(), in_ch, out_ch, kernel }
    }

    fn dense(name: &str, inputs: usize, outputs: usize) -> Self {
        Layer::Dense { name: name.into(), inputs, outputs }
    }

    /// `(name, shape, fan_in)` of each trainable tensor.
    fn params(&self) -> Vec<(String, Vec<usize>, usize)> {
        match self {
            Layer::Conv { name, in_ch, out_ch, kernel } => vec![
                (format!("{name}.weight"), vec![*out_ch, *in_ch, *kernel, *kernel], in_ch * kernel * kernel),
                (format!("{name}.bias"), vec![*out_ch], 0),
            ],
            Layer::Dense { name, inputs, outputs } => vec![
                (format!("{name}.weight"), vec![*inputs, *outputs], *inputs),
                (format!("{name}.bias"), vec![*outputs], 0),
            ],
            _ => Vec::new(),
        }
    }
}

/// Declarative layout: a shared trunk, parallel branches whose flattened
/// outputs are concatenated, then a head producing logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    /// `[channels, rows, cols]` of one input image.
    pub input: [usize; 3],
    pub trunk: Vec<Layer>,
    pub branches: Vec<Vec<Layer>>,
    pub head: Vec<Layer>,
}

const CLASSES: usize = 10;
const DROPOUT: f64 = 0.5;

impl ModelSpec {
    pub fn for_variant(variant: Variant) -> Self {
        let pool = Layer::Pool(PoolSpec::new(variant.pool));
        let (trunk, side, ch) = match variant.dataset {
            // 28 -> 26 -> 24
            DatasetName::Fashion => (
                vec![Layer::conv("conv1", 1, 32, 3), Layer::Relu, Layer::conv("conv2", 32, 64, 3), Layer::Relu],
                24,
                64,
            ),
            // 28 -> 24 -> 20 -> 16
            DatasetName::Mnist => (
                vec![
                    Layer::conv("conv1", 1, 32, 5),
                    Layer::Relu,
                    Layer::conv("conv2", 32, 64, 5),
                    Layer::Relu,
                    Layer::conv("conv3", 64, 64, 5),
                    Layer::Relu,
                ],
                16,
                64,
            ),
        };
        let sift = Layer::Sift(DescriptorConfig::new(side).expect("trunk output is a valid patch"));
        let pooled = ch * (side / 2) * (side / 2);
        let described = ch * 128;

        let (branches, head) = match (variant.dataset, variant.arch) {
            (_, Arch::Baseline) => (vec![vec![pool, Layer::Flatten]], classifier("fc1", pooled, 128)),
            (_, Arch::Sift) => (vec![vec![sift]], classifier("fc1", described, 128)),
            (DatasetName::Fashion, Arch::Hybrid) => (
                vec![vec![pool, Layer::Flatten], vec![sift]],
                classifier("fc1", pooled + described, 256),
            ),
            (DatasetName::Mnist, Arch::Hybrid) => (
                vec![
                    vec![pool, Layer::Flatten, Layer::dense("pool_fc", pooled, 128), Layer::Relu, Layer::Dropout(DROPOUT)],
                    vec![sift, Layer::dense("sift_fc", described, 128), Layer::Relu, Layer::Dropout(DROPOUT)],
                ],
                vec![Layer::dense("out", 256, CLASSES)],
            ),
        };
        ModelSpec { variant, input: [1, 28, 28], trunk, branches, head }
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.trunk.iter().chain(self.branches.iter().flatten()).chain(&self.head)
    }

    /// Spatial side of the trunk output, which is the descriptor patch size.
    pub fn trunk_side(&self) -> usize {
        let mut side = self.input[1];
        for l in &self.trunk {
            if let Layer::Conv { kernel, .. } = l {
                side -= kernel - 1;
            }
        }
        side
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.layers().flat_map(Layer::params).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }
}

fn classifier(name: &str, inputs: usize, hidden: usize) -> Vec<Layer> {
    vec![
        Layer::dense(name, inputs, hidden),
        Layer::Relu,
        Layer::Dropout(DROPOUT),
        Layer::dense("out", hidden, CLASSES),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Parameters plus layout. Values live in plain vectors; each forward pass
/// binds them to fresh tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub params: Vec<Param<T>>,
}

/// Outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations<T: Scalar> {
    pub logits: Tensor<T>,
    /// Concatenated branch outputs, i.e. the head input.
    pub features: Tensor<T>,
    /// Flattened trunk output.
    pub trunk: Tensor<T>,
}

/// Names accepted by [`Activations::tagged`].
pub const FEATURE_TAGS: [&str; 2] = ["features", "trunk"];

impl<T: Scalar> Activations<T> {
    pub fn tagged(&self, tag: &str) -> Result<Tensor<T>> {
        match tag {
            "features" => Ok(self.features.clone()),
            "trunk" => nn::flatten(&self.trunk),
            other => Err(Error::contract(format!(
                "unknown feature tag '{other}', expected one of {FEATURE_TAGS:?}"
            ))),
        }
    }
}

impl<T: Scalar> Model<T> {
    /// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn build(variant: Variant, seed: u64) -> Self {
        let spec = ModelSpec::for_variant(variant);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let n = shape.iter().product();
                let data = if fan_in == 0 {
                    vec![T::zero(); n]
                } else {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect()
                };
                Param { name, shape, data }
            })
            .collect();
        Model { spec, params }
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Parameter tensors for one pass; `trainable` makes them gradient leaves.
    pub fn bind(&self, trainable: bool) -> Result<Vec<Tensor<T>>> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    Tensor::param(p.data.clone(), &p.shape)
                } else {
                    Tensor::new(p.data.clone(), &p.shape)
                }
            })
            .collect()
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        bound: &[Tensor<T>],
        x: &Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Activations<T>> {
        if bound.len() != self.params.len() {
            return Err(Error::contract("bound parameter list does not match model"));
        }
        let mut cursor = 0;
        let mut run = |layers: &[Layer], mut h: Tensor<T>, rng: &mut R| -> Result<Tensor<T>> {
            for layer in layers {
                h = match layer {
                    Layer::Conv { .. } => {
                        cursor += 2;
                        nn::conv2d(&h, &bound[cursor - 2], &bound[cursor - 1])?
                    }
                    Layer::Dense { .. } => {
                        cursor += 2;
                        nn::dense(&h, &bound[cursor - 2], &bound[cursor - 1])?
                    }
                    Layer::Relu => nn::relu(&h),
                    Layer::Pool(spec) => nn::pool2d(&h, spec, training, rng)?,
                    Layer::Sift(cfg) => sift::sift_layer(&h, cfg)?,
                    Layer::Flatten => nn::flatten(&h)?,
                    Layer::Dropout(rate) => nn::dropout(&h, *rate, training, rng)?,
                };
            }
            Ok(h)
        };
        let trunk = run(&self.spec.trunk, x.clone(), rng)?;
        let outs = self
            .spec
            .branches
            .iter()
            .map(|b| run(b, trunk.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        let features = if outs.len() == 1 {
            outs.into_iter().next().expect("one branch")
        } else {
            Tensor::concat_cols(&outs)?
        };
        let logits = run(&self.spec.head, features.clone(), rng)?;
        Ok(Activations { logits, features, trunk })
    }

    /// Inference-mode class predictions for a batch.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let bound = self.bind(false)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        nn::argmax_rows(&self.forward(&bound, x, false, &mut rng)?.logits)
    }
}
