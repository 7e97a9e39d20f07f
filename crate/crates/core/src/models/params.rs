use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelError, Result};
use crate::corpus::PAD;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `uniform(-k, k)`.
    Uniform(f64),
    /// `uniform(-k, k)` with the `PAD` row zeroed.
    Embedding(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    /// Weight `[fan_in, fan_out]` with bound `1/sqrt(fan_in)`.
    pub fn weight(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self::new(name, &[fan_in, fan_out], Init::Uniform(1.0 / (fan_in as f64).sqrt()))
    }

    /// Bias of a layer with the given fan-in, same bound as its weight.
    pub fn bias(name: impl Into<String>, fan_in: usize, size: usize) -> Self {
        Self::new(name, &[size], Init::Uniform(1.0 / (fan_in as f64).sqrt()))
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named parameter tensors in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Arc<Vec<String>>,
    index: Arc<HashMap<String, usize>>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| match s.init {
                Init::Uniform(k) => Tensor::uniform(&s.shape, k, &mut rng),
                Init::Embedding(k) => {
                    let mut t = Tensor::uniform(&s.shape, k, &mut rng);
                    let d = s.shape[1];
                    t.data_mut()[PAD * d..(PAD + 1) * d].fill(0.0);
                    t
                }
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::full(&s.shape, 1.0),
            })
            .collect();
        Self::from_named(specs.iter().map(|s| s.name.clone()).collect(), tensors)
            .expect("spec names are unique")
    }

    pub fn from_named(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(ModelError::Config("name and tensor counts differ".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(ModelError::Param(n.clone()));
            }
        }
        Ok(Self {
            names: Arc::new(names),
            index: Arc::new(index),
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub(crate) fn check(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.tensors.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for s in specs {
            match self.get(&s.name) {
                Some(t) if t.shape() == s.shape.as_slice() => {}
                _ => return Err(ModelError::Param(s.name.clone())),
            }
        }
        Ok(())
    }

    /// Names existing tape handles, one per tensor in parameter order.
    pub fn attach(&self, vars: &[Var]) -> Result<ParamVars> {
        if vars.len() != self.tensors.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter handles, got {}",
                self.tensors.len(),
                vars.len()
            )));
        }
        Ok(ParamVars {
            vars: vars.to_vec(),
            index: Arc::clone(&self.index),
        })
    }

    /// Records every tensor as a leaf of `tape`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), trainable))
                .collect(),
            index: Arc::clone(&self.index),
        }
    }
}

/// Tape handles for a registered [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
    index: Arc<HashMap<String, usize>>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| ModelError::Param(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in parameter order, zeros where nothing flowed.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| {
                tape.grad_tensor(v)
                    .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
            })
            .collect()
    }
}
