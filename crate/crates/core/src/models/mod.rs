//! Architecture builders, demographic fusion, inference and parameter counting.

pub(crate) mod builders;
pub mod graph;
pub mod io;
pub mod spec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{BnMode, Element, LayerParams, Tensor};
use graph::{execute, Eval, Record};

pub use builders::{FUSED_FEATURES, SPATIAL_FEATURES, TEMPORAL_FEATURES};
pub use graph::{BnStats, Graph, GraphBuilder, GraphNode, LayerOp};
pub use spec::{
    Architecture, ArchitectureSpec, Demographics, Head, Sex, SpatialBranch, DEMOGRAPHIC_FEATURES,
};

/// Version written into model files.
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

impl Mode {
    pub fn bn(self) -> BnMode {
        match self {
            Mode::Train => BnMode::Train,
            Mode::Infer => BnMode::Infer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metadata {
    pub seed: u64,
    pub param_count: u64,
    pub version: u16,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub spec: ArchitectureSpec,
    pub graph: Graph,
    pub params: Vec<LayerParams>,
    pub mode: Mode,
    pub metadata: Metadata,
}

/// Builds the architecture named in `spec`, in infer mode.
pub fn build(spec: &ArchitectureSpec) -> Result<ModelBundle> {
    let built = match spec.name {
        Architecture::AttiaNet => builders::build_attianet(spec)?,
        Architecture::DeepResidualCNN => builders::build_deep_residual_cnn(spec)?,
        Architecture::ParallelCNN => builders::build_parallel_cnn(spec)?,
        Architecture::ParallelCNNew => builders::build_parallel_cnn_ew(spec)?,
        Architecture::SimpleNet => builders::build_simplenet(spec)?,
    };
    Ok(ModelBundle::assemble(spec.clone(), built))
}

pub fn build_attianet(spec: &ArchitectureSpec) -> Result<ModelBundle> {
    Ok(ModelBundle::assemble(spec.clone(), builders::build_attianet(spec)?))
}

pub fn build_deep_residual_cnn(spec: &ArchitectureSpec) -> Result<ModelBundle> {
    Ok(ModelBundle::assemble(spec.clone(), builders::build_deep_residual_cnn(spec)?))
}

pub fn build_parallel_cnn(spec: &ArchitectureSpec) -> Result<ModelBundle> {
    Ok(ModelBundle::assemble(spec.clone(), builders::build_parallel_cnn(spec)?))
}

pub fn build_parallel_cnn_ew(spec: &ArchitectureSpec) -> Result<ModelBundle> {
    Ok(ModelBundle::assemble(spec.clone(), builders::build_parallel_cnn_ew(spec)?))
}

pub fn build_simplenet(spec: &ArchitectureSpec) -> Result<ModelBundle> {
    Ok(ModelBundle::assemble(spec.clone(), builders::build_simplenet(spec)?))
}

/// Graph and parameter layout only, skipping any data-dependent
/// initialization; used when the weights are about to be overwritten.
pub(crate) fn build_structure(spec: &ArchitectureSpec) -> Result<ModelBundle> {
    match spec.name {
        Architecture::ParallelCNNew => build_parallel_cnn(spec),
        _ => build(spec),
    }
}

pub fn count_params(model: &ModelBundle) -> usize {
    model.params.iter().map(LayerParams::learnable_count).sum()
}

/// `[features, age/100, sex, age_present, sex_present]` per row.
pub fn fuse_demographics(features: &Tensor, demo: &[Demographics]) -> Result<Tensor> {
    let [b, _] = features.dims2("fuse_demographics")?;
    let encoded = encode_demographics(demo)?;
    if encoded.shape()[0] != b {
        return Err(Error::Usage(format!("{} demographics for {b} records", demo.len())));
    }
    crate::autograd::concat_features(&[features, &encoded])
}

/// Encoded demographics as a `(B, 4)` matrix.
pub fn encode_demographics<T: Element>(demo: &[Demographics]) -> Result<Tensor<T>> {
    let data = demo
        .iter()
        .flat_map(|d| d.encode())
        .map(T::from_f64)
        .collect();
    Tensor::new(vec![demo.len(), DEMOGRAPHIC_FEATURES], data)
}

pub(crate) fn run_nodes<T: Element>(
    graph: &Graph,
    params: &[LayerParams<T>],
    batch: &Tensor<T>,
    demo: Option<Tensor<T>>,
    mode: BnMode,
    wanted: &[usize],
) -> Result<Vec<Tensor<T>>> {
    let mut exec = Eval::new(params, mode, 0);
    execute(graph, &mut exec, batch.clone(), demo, wanted)
}

fn check_input<T: Element>(spec: &ArchitectureSpec, graph: &Graph, batch: &Tensor<T>, demo: &[Demographics]) -> Result<Option<Tensor<T>>> {
    let want = [spec.input_leads, spec.input_samples];
    match batch.shape() {
        [b, 1, l, t] if *b > 0 && [*l, *t] == want => {
            if !graph.uses_demographics() {
                return Ok(None);
            }
            if demo.len() != *b {
                return Err(Error::Usage(format!(
                    "model fuses demographics: {} entries for a batch of {b}",
                    demo.len()
                )));
            }
            Ok(Some(encode_demographics(demo)?))
        }
        s => Err(Error::Usage(format!(
            "{} expects input (B, 1, {}, {}), got {s:?}",
            spec.name, want[0], want[1]
        ))),
    }
}

/// Tape handles produced by a recorded forward pass.
pub struct Recorded {
    /// Head outputs, main first.
    pub outputs: Vec<Var>,
    /// Weight and bias leaves per parameter layer.
    pub leaves: Vec<Option<(Var, Var)>>,
    pub stats: BnStats,
}

impl ModelBundle {
    fn assemble(spec: ArchitectureSpec, (graph, params): builders::Built) -> Self {
        let mut m = ModelBundle {
            metadata: Metadata {
                seed: spec.init_seed,
                param_count: 0,
                version: FORMAT_VERSION,
            },
            spec,
            graph,
            params,
            mode: Mode::Infer,
        };
        m.metadata.param_count = count_params(&m) as u64;
        m
    }

    pub fn param_count(&self) -> usize {
        count_params(self)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn param(&self, name: &str) -> Option<&LayerParams> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut LayerParams> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Main-head probabilities, `(B, n_outputs)`.
    pub fn forward(&self, batch: &Tensor, demo: &[Demographics]) -> Result<Tensor> {
        Ok(self.forward_outputs(batch, demo)?.swap_remove(0))
    }

    /// Probabilities of every head, main first.
    pub fn forward_outputs(&self, batch: &Tensor, demo: &[Demographics]) -> Result<Vec<Tensor>> {
        let outputs = self.graph.outputs.clone();
        self.run(batch, demo, &outputs, self.mode.bn())
    }

    /// Values of named nodes in the given normalization mode.
    pub fn forward_nodes(
        &self,
        batch: &Tensor,
        demo: &[Demographics],
        names: &[&str],
        mode: BnMode,
    ) -> Result<Vec<Tensor>> {
        let wanted = names
            .iter()
            .map(|n| {
                self.graph
                    .find(n)
                    .ok_or_else(|| Error::Usage(format!("no node named '{n}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.run(batch, demo, &wanted, mode)
    }

    fn run(&self, batch: &Tensor, demo: &[Demographics], wanted: &[usize], mode: BnMode) -> Result<Vec<Tensor>> {
        let d = check_input(&self.spec, &self.graph, batch, demo)?;
        let mut exec = Eval::new(&self.params, mode, self.metadata.seed);
        execute(&self.graph, &mut exec, batch.clone(), d, wanted)
    }

    /// Records a forward pass on `tape`. Parameters become leaves; the
    /// returned statistics let the caller update running averages.
    pub fn record(
        &self,
        tape: &mut Tape,
        batch: &Tensor,
        demo: &[Demographics],
        mode: BnMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Recorded> {
        let d = check_input(&self.spec, &self.graph, batch, demo)?;
        let x = tape.constant(batch.clone());
        let d = d.map(|t| tape.constant(t));
        let mut exec = Record::new(tape, &self.params, mode, rng);
        let outputs = execute(&self.graph, &mut exec, x, d, &self.graph.outputs)?;
        Ok(Recorded {
            outputs,
            leaves: exec.leaves,
            stats: exec.stats,
        })
    }

    /// Folds observed batch statistics into the running averages.
    pub fn apply_bn_stats(&mut self, stats: &BnStats, momentum: f64) {
        for (p, mean, var) in stats {
            self.params[*p].update_running(mean, var, momentum);
        }
    }

    /// Immutable copy with parameters stored as `T`, for inference only.
    pub fn freeze<T: Element>(&self) -> FrozenModel<T> {
        FrozenModel {
            spec: self.spec.clone(),
            graph: self.graph.clone(),
            params: self.params.iter().map(LayerParams::cast).collect(),
        }
    }
}

/// Read-only model in infer mode; shareable across threads.
#[derive(Debug, Clone)]
pub struct FrozenModel<T: Element> {
    pub spec: ArchitectureSpec,
    pub graph: Graph,
    pub params: Vec<LayerParams<T>>,
}

impl<T: Element> FrozenModel<T> {
    pub fn forward(&self, batch: &Tensor<T>, demo: &[Demographics]) -> Result<Tensor<T>> {
        let d = check_input(&self.spec, &self.graph, batch, demo)?;
        let mut exec = Eval::new(&self.params, BnMode::Infer, 0);
        Ok(execute(&self.graph, &mut exec, batch.clone(), d, &self.graph.outputs[..1])?.swap_remove(0))
    }

    pub fn param_bytes(&self) -> usize {
        self.params
            .iter()
            .map(|p| {
                p.weights.bytes()
                    + p.bias.bytes()
                    + p.running_mean.as_ref().map_or(0, Tensor::bytes)
                    + p.running_var.as_ref().map_or(0, Tensor::bytes)
            })
            .sum()
    }
}
