use std::collections::HashMap;

use rand::Rng;

use super::{ModelConfig, INPUT_CHANNELS};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{BatchNormState, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Uniform in ±sqrt(6 / fan_in).
    HeUniform { fan_in: usize },
    Zeros,
    Ones,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
    trainable: bool,
}

fn conv(specs: &mut Vec<ParamSpec>, prefix: &str, out_c: usize, in_c: usize, k: usize, bias: bool) {
    specs.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![out_c, in_c, k, k],
        init: Init::HeUniform { fan_in: in_c * k * k },
        trainable: true,
    });
    if bias {
        specs.push(ParamSpec {
            name: format!("{prefix}.bias"),
            shape: vec![out_c],
            init: Init::Zeros,
            trainable: true,
        });
    }
}

fn batchnorm(specs: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    for (field, init, trainable) in [
        ("gamma", Init::Ones, true),
        ("beta", Init::Zeros, true),
        ("running_mean", Init::Zeros, false),
        ("running_var", Init::Ones, false),
    ] {
        specs.push(ParamSpec {
            name: format!("{prefix}.{field}"),
            shape: vec![c],
            init,
            trainable,
        });
    }
}

/// conv → bn → conv → bn, the convolutions without bias (batch norm
/// cancels it).
fn double_conv(specs: &mut Vec<ParamSpec>, prefix: &str, in_c: usize, out_c: usize) {
    conv(specs, &format!("{prefix}.conv1"), out_c, in_c, 3, false);
    batchnorm(specs, &format!("{prefix}.bn1"), out_c);
    conv(specs, &format!("{prefix}.conv2"), out_c, out_c, 3, false);
    batchnorm(specs, &format!("{prefix}.bn2"), out_c);
}

/// Names, shapes and initialisers in storage order; derived from the
/// config alone.
fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let w = cfg.widths;
    let mut specs = Vec::new();
    for stage in 1..=4 {
        let in_c = if stage == 1 { INPUT_CHANNELS } else { w[stage - 2] };
        double_conv(&mut specs, &format!("enc{stage}"), in_c, w[stage - 1]);
    }
    for stage in 1..=4 {
        let c = w[stage - 1];
        let squeezed = c / cfg.reduction;
        conv(&mut specs, &format!("scse{stage}.fc1"), squeezed, c, 1, true);
        conv(&mut specs, &format!("scse{stage}.fc2"), c, squeezed, 1, true);
        conv(&mut specs, &format!("scse{stage}.spatial"), 1, c, 1, true);
    }
    let mut prev = 2 * w[3];
    for level in (1..=3).rev() {
        let out_c = w[level - 1];
        double_conv(&mut specs, &format!("dec{level}"), prev + 2 * out_c, out_c);
        prev = out_c;
    }
    conv(&mut specs, "head", 1, w[0], 1, true);
    specs
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// False for batch-norm running statistics.
    pub trainable: bool,
}

/// All network state: trainable tensors and batch-norm running statistics.
///
/// The encoder weights are stored once and read by both streams.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let entries = param_specs(config)
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                let len: usize = spec.shape.iter().product();
                let data = match spec.init {
                    Init::Zeros => vec![0.0; len],
                    Init::Ones => vec![1.0; len],
                    Init::HeUniform { fan_in } => {
                        let bound = (6.0 / fan_in as f32).sqrt();
                        let mut rng = seed::rng(seed, seed::STREAM_INIT, i as u64);
                        (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
                    }
                };
                Ok(ParamEntry {
                    name: spec.name,
                    tensor: Tensor::new(&spec.shape, data)?,
                    trainable: spec.trainable,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(config.clone(), entries))
    }

    fn assemble(config: ModelConfig, entries: Vec<ParamEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), i))
            .collect();
        ModelParams {
            config,
            entries,
            index,
        }
    }

    /// Rebuilds parameters from named tensors, which must match the names,
    /// order and shapes the config prescribes.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(config);
        if named.len() != specs.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors for this model config, got {}",
                specs.len(),
                named.len()
            )));
        }
        let entries = specs
            .into_iter()
            .zip(named)
            .map(|(spec, (name, tensor))| {
                if name != spec.name {
                    return Err(Error::Validation(format!(
                        "parameter {name} found where {} was expected",
                        spec.name
                    )));
                }
                if tensor.shape() != spec.shape.as_slice() {
                    return Err(Error::dim(format!(
                        "parameter {name} has shape {:?}, model config needs {:?}",
                        tensor.shape(),
                        spec.shape
                    )));
                }
                Ok(ParamEntry {
                    name,
                    tensor,
                    trainable: spec.trainable,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(config.clone(), entries))
    }

    /// Recovers widths and reduction ratio from stored shapes.
    pub fn infer_config(named: &[(String, Tensor)], input_size: usize) -> Result<ModelConfig> {
        let shape_of = |name: &str| {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.shape().to_vec())
                .ok_or_else(|| Error::Validation(format!("parameter {name} is missing")))
        };
        let mut widths = [0; 4];
        for (stage, w) in widths.iter_mut().enumerate() {
            *w = shape_of(&format!("enc{}.conv1.weight", stage + 1))?[0];
        }
        let squeezed = shape_of("scse1.fc1.weight")?[0];
        if squeezed == 0 || widths[0] % squeezed != 0 {
            return Err(Error::Validation(format!(
                "scse1.fc1.weight rows {squeezed} do not divide stage width {}",
                widths[0]
            )));
        }
        Ok(ModelConfig {
            input_size,
            widths,
            reduction: widths[0] / squeezed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// The network is fully convolutional; only the expected input edge
    /// length changes.
    pub fn set_input_size(&mut self, size: usize) -> Result<()> {
        let cfg = ModelConfig {
            input_size: size,
            ..self.config.clone()
        };
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].tensor)
    }

    /// Trainable tensors in storage order.
    pub fn trainable(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter().filter(|e| e.trainable)
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut().filter(|e| e.trainable)
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().map(|e| e.tensor.len()).sum()
    }

    /// Records every trainable tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> ParamVars {
        let vars = self
            .entries
            .iter()
            .map(|e| e.trainable.then(|| tape.leaf(e.tensor.clone(), requires_grad)))
            .collect();
        ParamVars {
            vars,
            index: self.index.clone(),
        }
    }

    pub(crate) fn bn_state(&self, prefix: &str) -> Result<BatchNormState> {
        let fetch = |field: &str| {
            self.get(&format!("{prefix}.{field}"))
                .map(|t| t.data().to_vec())
                .ok_or_else(|| Error::Validation(format!("missing {prefix}.{field}")))
        };
        Ok(BatchNormState {
            running_mean: fetch("running_mean")?,
            running_var: fetch("running_var")?,
        })
    }

    pub(crate) fn set_bn_state(&mut self, prefix: &str, state: BatchNormState) {
        for (field, values) in [("running_mean", state.running_mean), ("running_var", state.running_var)] {
            if let Some(t) = self.get_mut(&format!("{prefix}.{field}")) {
                t.data_mut().copy_from_slice(&values);
            }
        }
    }
}

/// Tape handles of the trainable parameters of one forward pass.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Option<Var>>,
    index: HashMap<String, usize>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .and_then(|&i| self.vars[i])
            .ok_or_else(|| Error::Validation(format!("no trainable parameter named {name}")))
    }

    /// `(name, var)` for every trainable parameter, in storage order.
    pub fn iter<'a>(&'a self, params: &'a ModelParams) -> impl Iterator<Item = (&'a str, Var)> + 'a {
        params
            .entries
            .iter()
            .zip(&self.vars)
            .filter_map(|(e, v)| v.map(|v| (e.name.as_str(), v)))
    }
}
