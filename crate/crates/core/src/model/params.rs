use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AlphaMode, ConvMode, ModelConfig};
use crate::error::{Result, TimeCfError};
use crate::tensor::{Tape, Tensor, Var};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    Uniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: String, shape: &[usize], init: Init) -> Self {
        Self {
            name,
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coarse grouping used by gradient reports: the name up to its last
    /// `.weight` / `.bias` style suffix.
    pub fn group(&self) -> &str {
        match self.name.rsplit_once('.') {
            Some((head, "weight" | "bias" | "gamma" | "beta")) => head,
            _ => &self.name,
        }
    }
}

fn push_affine(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, output: usize) {
    out.push(ParamSpec::new(
        format!("{prefix}.weight"),
        &[input, output],
        Init::Uniform { fan_in: input },
    ));
    out.push(ParamSpec::new(
        format!("{prefix}.bias"),
        &[output],
        Init::Zeros,
    ));
}

/// Every learnable array of a model built from `cfg`, in a fixed order.
pub fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let lens = cfg.scale_lengths();
    let mut out = Vec::new();
    out.push(ParamSpec::new(
        "embed.token.weight".into(),
        &[d, 1, 3],
        Init::Uniform { fan_in: 3 },
    ));
    push_affine(&mut out, "embed.temporal", cfg.time_features, d);
    for b in 0..cfg.blocks {
        let p = format!("blocks.{b}");
        if cfg.conv_enabled() {
            out.push(ParamSpec::new(format!("{p}.norm.gamma"), &[d], Init::Ones));
            out.push(ParamSpec::new(format!("{p}.norm.beta"), &[d], Init::Zeros));
            for j in 0..3 {
                let (shape, fan_in) = match cfg.conv_mode {
                    ConvMode::Full => ([d, d, 3], 3 * d),
                    ConvMode::Depthwise => ([d, 1, 3], 3),
                };
                out.push(ParamSpec::new(
                    format!("{p}.conv.{j}.weight"),
                    &shape,
                    Init::Uniform { fan_in },
                ));
                out.push(ParamSpec::new(
                    format!("{p}.conv.{j}.bias"),
                    &[d],
                    Init::Zeros,
                ));
            }
            if cfg.alpha_mode == AlphaMode::Learnable {
                out.push(ParamSpec::new(
                    format!("{p}.alpha"),
                    &[],
                    Init::Constant(cfg.alpha_conv_init),
                ));
            }
        }
        for i in 0..cfg.scales.saturating_sub(1) {
            push_affine(
                &mut out,
                &format!("{p}.season.{i}.fc1"),
                lens[i],
                lens[i + 1],
            );
            push_affine(
                &mut out,
                &format!("{p}.season.{i}.fc2"),
                lens[i + 1],
                lens[i + 1],
            );
        }
        for i in 0..cfg.scales.saturating_sub(1) {
            push_affine(
                &mut out,
                &format!("{p}.trend.{i}.fc1"),
                lens[i + 1],
                lens[i],
            );
            push_affine(&mut out, &format!("{p}.trend.{i}.fc2"), lens[i], lens[i]);
        }
        push_affine(&mut out, &format!("{p}.ffn.fc1"), d, cfg.ffn_hidden);
        push_affine(&mut out, &format!("{p}.ffn.fc2"), cfg.ffn_hidden, d);
    }
    for (i, &len) in lens.iter().enumerate() {
        push_affine(&mut out, &format!("heads.{i}.time"), len, cfg.horizon);
        push_affine(&mut out, &format!("heads.{i}.feature"), d, 1);
    }
    out
}

/// Total learnable scalars of a model built from `cfg`.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    layout(cfg).iter().map(ParamSpec::len).sum()
}

/// Named parameter arrays in [`layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    fn build(cfg: &ModelConfig, mut fill: impl FnMut(&ParamSpec) -> Vec<f64>) -> Self {
        let specs = layout(cfg);
        let tensors = specs
            .iter()
            .map(|s| Tensor::new(&s.shape, fill(s)).expect("layout shapes are valid"))
            .collect();
        let index = specs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        Self {
            specs,
            tensors,
            index,
        }
    }

    /// Seeded initialization.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(cfg, |s| match s.init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..s.len()).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Zeros => vec![0.0; s.len()],
            Init::Ones => vec![1.0; s.len()],
            Init::Constant(c) => vec![c; s.len()],
        })
    }

    /// Every parameter zero, including norm scales and `alpha`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::build(cfg, |s| vec![0.0; s.len()])
    }

    /// Store with the given arrays; names and shapes must match `layout(cfg)`.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut store = Self::zeros(cfg);
        if named.len() != store.specs.len() {
            return Err(TimeCfError::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                store.specs.len(),
                named.len()
            )));
        }
        let mut seen = vec![false; store.specs.len()];
        for (name, tensor) in named {
            let i = *store
                .index
                .get(&name)
                .ok_or_else(|| TimeCfError::Checkpoint(format!("unexpected parameter {name:?}")))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(TimeCfError::Checkpoint(format!(
                    "duplicate parameter {name:?}"
                )));
            }
            if tensor.shape() != store.specs[i].shape.as_slice() {
                return Err(TimeCfError::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    store.specs[i].shape
                )));
            }
            if !tensor.is_finite() {
                return Err(TimeCfError::Checkpoint(format!(
                    "parameter {name:?} is not finite"
                )));
            }
            store.tensors[i] = tensor;
        }
        Ok(store)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    /// Number of scalars across all arrays.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Places every array on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound<'_> {
        self.bind_values(tape, &self.tensors, requires_grad)
    }

    /// Like [`ParamStore::bind`] but with substitute values in layout order,
    /// e.g. perturbed weights.
    pub fn bind_values(
        &self,
        tape: &mut Tape,
        values: &[Tensor],
        requires_grad: bool,
    ) -> Bound<'_> {
        assert_eq!(values.len(), self.tensors.len(), "parameter count mismatch");
        let vars = values
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        Bound { store: self, vars }
    }
}

/// Tape handles of a [`ParamStore`], addressable by name.
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    /// Panics when `name` is not part of the layout.
    pub fn var(&self, name: &str) -> Var {
        match self.store.position(name) {
            Some(i) => self.vars[i],
            None => panic!("no parameter named {name:?}"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
