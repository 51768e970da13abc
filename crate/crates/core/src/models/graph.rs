//! Architecture graphs and their interpreter.
//!
//! A [`Graph`] is an ordered list of nodes, each naming its inputs by index,
//! so branches and merges are explicit. The same interpreter drives plain
//! inference over any storage precision and tape recording for training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{concat_features, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::conv::conv2d_raw;
use crate::tensor::linear::{apply_mask, dense_raw, dropout_mask};
use crate::tensor::norm::batchnorm_forward;
use crate::tensor::pool::{adaptive_maxpool_forward, avgpool_forward, maxpool_forward};
use crate::tensor::{
    activation, sigmoid, softmax, Activation, BnMode, Conv2dGeometry, Element, LayerParams,
    Padding, Pool2d, Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerOp {
    /// The `(B, 1, leads, samples)` signal batch.
    Input,
    /// The `(B, 4)` encoded demographics.
    Demographics,
    Conv2d {
        param: usize,
        stride: (usize, usize),
        padding: Padding,
    },
    BatchNorm {
        param: usize,
    },
    Activation(Activation),
    MaxPool(Pool2d),
    AvgPool(Pool2d),
    AdaptiveMaxTime,
    /// View with new non-batch extents.
    Reshape(Vec<usize>),
    Flatten,
    Concat,
    Add,
    Dense {
        param: usize,
    },
    Dropout(f64),
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub name: String,
    pub op: LayerOp,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub nodes: Vec<GraphNode>,
    /// Probability outputs; the first is the main head.
    pub outputs: Vec<usize>,
}

impl Graph {
    pub fn find(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn uses_demographics(&self) -> bool {
        self.nodes.iter().any(|n| n.op == LayerOp::Demographics)
    }
}

fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Dimension { op, axis, detail } => {
            Error::Config(format!("input too short for the architecture: {op} on {axis}: {detail}"))
        }
        other => other,
    }
}

/// Builds a graph while tracking per-node shapes (at batch 1) and drawing
/// Kaiming-uniform initial weights from a seeded stream.
pub struct GraphBuilder {
    nodes: Vec<GraphNode>,
    shapes: Vec<Vec<usize>>,
    params: Vec<LayerParams>,
    rng: ChaCha8Rng,
}

impl GraphBuilder {
    pub fn new(leads: usize, samples: usize, seed: u64) -> Self {
        GraphBuilder {
            nodes: vec![GraphNode {
                name: "input".into(),
                op: LayerOp::Input,
                inputs: vec![],
            }],
            shapes: vec![vec![1, 1, leads, samples]],
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub const INPUT: usize = 0;

    pub fn shape(&self, node: usize) -> &[usize] {
        &self.shapes[node]
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    fn push(&mut self, name: impl Into<String>, op: LayerOp, inputs: Vec<usize>, shape: Vec<usize>) -> usize {
        self.nodes.push(GraphNode {
            name: name.into(),
            op,
            inputs,
        });
        self.shapes.push(shape);
        self.nodes.len() - 1
    }

    fn uniform(&mut self, n: usize, bound: f64) -> Vec<f64> {
        (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect()
    }

    pub fn demographics(&mut self) -> usize {
        self.push(
            "demographics",
            LayerOp::Demographics,
            vec![],
            vec![1, super::spec::DEMOGRAPHIC_FEATURES],
        )
    }

    pub fn conv(
        &mut self,
        x: usize,
        name: &str,
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<usize> {
        let in_ch = self.shapes[x][1];
        let wshape = [filters, in_ch, kernel.0, kernel.1];
        let g = Conv2dGeometry::new(&self.shapes[x], &wshape, stride, padding).map_err(config_err)?;
        let fan_in = in_ch * kernel.0 * kernel.1;
        let w = self.uniform(filters * fan_in, kaiming_bound(fan_in));
        let p = LayerParams::conv2d(name, Tensor::new(wshape.to_vec(), w)?, Tensor::zeros(vec![filters]))?;
        self.params.push(p);
        let param = self.params.len() - 1;
        Ok(self.push(name, LayerOp::Conv2d { param, stride, padding }, vec![x], g.output_shape()))
    }

    pub fn batchnorm(&mut self, x: usize, name: &str) -> usize {
        let ch = self.shapes[x][1];
        self.params.push(LayerParams::batchnorm(name, ch));
        let param = self.params.len() - 1;
        let shape = self.shapes[x].clone();
        self.push(name, LayerOp::BatchNorm { param }, vec![x], shape)
    }

    pub fn activation(&mut self, x: usize, name: &str, kind: Activation) -> usize {
        let shape = self.shapes[x].clone();
        self.push(name, LayerOp::Activation(kind), vec![x], shape)
    }

    fn pool(&mut self, x: usize, name: &str, pool: Pool2d, max: bool) -> Result<usize> {
        let s = self.shapes[x].clone();
        let (oh, ow) = pool.output_extent(s[2], s[3]).map_err(config_err)?;
        if oh == 0 || ow == 0 {
            return Err(Error::Config(format!("pooling '{name}' leaves an empty axis")));
        }
        let op = if max { LayerOp::MaxPool(pool) } else { LayerOp::AvgPool(pool) };
        Ok(self.push(name, op, vec![x], vec![s[0], s[1], oh, ow]))
    }

    pub fn maxpool(&mut self, x: usize, name: &str, window: (usize, usize)) -> Result<usize> {
        self.pool(x, name, Pool2d::floor(window), true)
    }

    pub fn avgpool(&mut self, x: usize, name: &str, pool: Pool2d) -> Result<usize> {
        self.pool(x, name, pool, false)
    }

    pub fn adaptive_maxpool_time(&mut self, x: usize, name: &str) -> usize {
        let s = self.shapes[x].clone();
        self.push(name, LayerOp::AdaptiveMaxTime, vec![x], vec![s[0], s[1], s[2], 1])
    }

    pub fn reshape(&mut self, x: usize, name: &str, dims: Vec<usize>) -> Result<usize> {
        let s = &self.shapes[x];
        if dims.iter().product::<usize>() != s[1..].iter().product::<usize>() {
            return Err(Error::Config(format!("reshape '{name}' {s:?} -> {dims:?}")));
        }
        let mut shape = vec![s[0]];
        shape.extend(&dims);
        Ok(self.push(name, LayerOp::Reshape(dims), vec![x], shape))
    }

    pub fn flatten(&mut self, x: usize, name: &str) -> usize {
        let s = &self.shapes[x];
        let shape = vec![s[0], s[1..].iter().product()];
        self.push(name, LayerOp::Flatten, vec![x], shape)
    }

    pub fn concat(&mut self, parts: &[usize], name: &str) -> usize {
        let width = parts.iter().map(|&p| self.shapes[p][1..].iter().product::<usize>()).sum();
        self.push(name, LayerOp::Concat, parts.to_vec(), vec![1, width])
    }

    pub fn add(&mut self, a: usize, b: usize, name: &str) -> Result<usize> {
        if self.shapes[a] != self.shapes[b] {
            return Err(Error::Config(format!(
                "add '{name}': {:?} vs {:?}",
                self.shapes[a], self.shapes[b]
            )));
        }
        let shape = self.shapes[a].clone();
        Ok(self.push(name, LayerOp::Add, vec![a, b], shape))
    }

    pub fn dense(&mut self, x: usize, name: &str, out: usize) -> Result<usize> {
        let fin: usize = self.shapes[x][1..].iter().product();
        let w = self.uniform(out * fin, kaiming_bound(fin));
        let p = LayerParams::dense(name, Tensor::new(vec![out, fin], w)?, Tensor::zeros(vec![out]))?;
        self.params.push(p);
        let param = self.params.len() - 1;
        Ok(self.push(name, LayerOp::Dense { param }, vec![x], vec![1, out]))
    }

    pub fn dropout(&mut self, x: usize, name: &str, p: f64) -> usize {
        let shape = self.shapes[x].clone();
        self.push(name, LayerOp::Dropout(p), vec![x], shape)
    }

    pub fn softmax(&mut self, x: usize, name: &str) -> usize {
        let shape = self.shapes[x].clone();
        self.push(name, LayerOp::Softmax, vec![x], shape)
    }

    pub fn sigmoid(&mut self, x: usize, name: &str) -> usize {
        let shape = self.shapes[x].clone();
        self.push(name, LayerOp::Sigmoid, vec![x], shape)
    }

    pub fn finish(self, outputs: Vec<usize>) -> (Graph, Vec<LayerParams>) {
        (
            Graph {
                nodes: self.nodes,
                outputs,
            },
            self.params,
        )
    }
}

/// Batch-norm statistics observed during a train-mode pass, by param index.
pub type BnStats = Vec<(usize, Vec<f64>, Vec<f64>)>;

pub(crate) trait Exec {
    type V: Clone;

    fn conv2d(&mut self, x: &Self::V, p: usize, stride: (usize, usize), pad: Padding) -> Result<Self::V>;
    fn batchnorm(&mut self, x: &Self::V, p: usize) -> Result<Self::V>;
    fn activation(&mut self, x: &Self::V, kind: Activation) -> Self::V;
    fn maxpool(&mut self, x: &Self::V, pool: Pool2d) -> Result<Self::V>;
    fn avgpool(&mut self, x: &Self::V, pool: Pool2d) -> Result<Self::V>;
    fn adaptive_max(&mut self, x: &Self::V) -> Result<Self::V>;
    fn reshape(&mut self, x: &Self::V, dims: &[usize]) -> Result<Self::V>;
    fn flatten(&mut self, x: &Self::V) -> Result<Self::V>;
    fn concat(&mut self, parts: &[&Self::V]) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn dense(&mut self, x: &Self::V, p: usize) -> Result<Self::V>;
    fn dropout(&mut self, x: &Self::V, p: f64) -> Result<Self::V>;
    fn softmax(&mut self, x: &Self::V) -> Result<Self::V>;
    fn sigmoid(&mut self, x: &Self::V) -> Self::V;
}

/// Runs the graph and returns the values of `wanted` nodes. Values are
/// dropped as soon as their last consumer has run.
pub(crate) fn execute<E: Exec>(
    graph: &Graph,
    exec: &mut E,
    input: E::V,
    demographics: Option<E::V>,
    wanted: &[usize],
) -> Result<Vec<E::V>> {
    let n = graph.nodes.len();
    let mut last_use = vec![0usize; n];
    for (j, node) in graph.nodes.iter().enumerate() {
        for &i in &node.inputs {
            last_use[i] = j;
        }
    }
    let keep = |i: usize| wanted.contains(&i);
    let mut values: Vec<Option<E::V>> = vec![None; n];
    let mut input = Some(input);
    let mut demographics = demographics;
    let last_needed = wanted.iter().copied().max().unwrap_or(0);

    for (j, node) in graph.nodes.iter().enumerate().take(last_needed + 1) {
        let arg = |k: usize| -> Result<&E::V> {
            values[node.inputs[k]].as_ref().ok_or_else(|| {
                Error::State(format!("node '{}' input {k} already released", node.name))
            })
        };
        let v = match &node.op {
            LayerOp::Input => input
                .take()
                .ok_or_else(|| Error::State("input consumed twice".into()))?,
            LayerOp::Demographics => demographics.take().ok_or_else(|| {
                Error::Usage("architecture fuses demographics but none were supplied".into())
            })?,
            LayerOp::Conv2d { param, stride, padding } => {
                let x = arg(0)?.clone();
                exec.conv2d(&x, *param, *stride, *padding)?
            }
            LayerOp::BatchNorm { param } => {
                let x = arg(0)?.clone();
                exec.batchnorm(&x, *param)?
            }
            LayerOp::Activation(kind) => {
                let x = arg(0)?.clone();
                exec.activation(&x, *kind)
            }
            LayerOp::MaxPool(pool) => {
                let x = arg(0)?.clone();
                exec.maxpool(&x, *pool)?
            }
            LayerOp::AvgPool(pool) => {
                let x = arg(0)?.clone();
                exec.avgpool(&x, *pool)?
            }
            LayerOp::AdaptiveMaxTime => {
                let x = arg(0)?.clone();
                exec.adaptive_max(&x)?
            }
            LayerOp::Reshape(dims) => {
                let x = arg(0)?.clone();
                exec.reshape(&x, dims)?
            }
            LayerOp::Flatten => {
                let x = arg(0)?.clone();
                exec.flatten(&x)?
            }
            LayerOp::Concat => {
                let parts: Vec<E::V> = (0..node.inputs.len())
                    .map(|k| arg(k).cloned())
                    .collect::<Result<_>>()?;
                let refs: Vec<&E::V> = parts.iter().collect();
                exec.concat(&refs)?
            }
            LayerOp::Add => {
                let (a, b) = (arg(0)?.clone(), arg(1)?.clone());
                exec.add(&a, &b)?
            }
            LayerOp::Dense { param } => {
                let x = arg(0)?.clone();
                exec.dense(&x, *param)?
            }
            LayerOp::Dropout(p) => {
                let x = arg(0)?.clone();
                exec.dropout(&x, *p)?
            }
            LayerOp::Softmax => {
                let x = arg(0)?.clone();
                exec.softmax(&x)?
            }
            LayerOp::Sigmoid => {
                let x = arg(0)?.clone();
                exec.sigmoid(&x)
            }
        };
        values[j] = Some(v);
        for &i in &node.inputs {
            if last_use[i] == j && !keep(i) {
                values[i] = None;
            }
        }
    }
    wanted
        .iter()
        .map(|&i| {
            values[i]
                .take()
                .ok_or_else(|| Error::State(format!("node {i} produced no value")))
        })
        .collect()
}

/// Direct evaluation over tensors of any storage precision.
pub(crate) struct Eval<'a, T: Element> {
    pub params: &'a [LayerParams<T>],
    pub mode: BnMode,
    pub rng: ChaCha8Rng,
    pub stats: BnStats,
}

impl<'a, T: Element> Eval<'a, T> {
    pub fn new(params: &'a [LayerParams<T>], mode: BnMode, seed: u64) -> Self {
        Eval {
            params,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: Vec::new(),
        }
    }
}

impl<T: Element> Exec for Eval<'_, T> {
    type V = Tensor<T>;

    fn conv2d(&mut self, x: &Tensor<T>, p: usize, stride: (usize, usize), pad: Padding) -> Result<Tensor<T>> {
        let lp = &self.params[p];
        conv2d_raw(x, &lp.weights, &lp.bias, stride, pad)
    }

    fn batchnorm(&mut self, x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
        let out = batchnorm_forward(x, &self.params[p], self.mode)?;
        if self.mode == BnMode::Train {
            self.stats.push((p, out.mean, out.var));
        }
        Ok(out.output)
    }

    fn activation(&mut self, x: &Tensor<T>, kind: Activation) -> Tensor<T> {
        activation(x, kind)
    }

    fn maxpool(&mut self, x: &Tensor<T>, pool: Pool2d) -> Result<Tensor<T>> {
        Ok(maxpool_forward(x, pool)?.output)
    }

    fn avgpool(&mut self, x: &Tensor<T>, pool: Pool2d) -> Result<Tensor<T>> {
        avgpool_forward(x, pool)
    }

    fn adaptive_max(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(adaptive_maxpool_forward(x)?.output)
    }

    fn reshape(&mut self, x: &Tensor<T>, dims: &[usize]) -> Result<Tensor<T>> {
        let mut shape = vec![x.shape()[0]];
        shape.extend_from_slice(dims);
        x.reshape(shape)
    }

    fn flatten(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.flatten_batch()
    }

    fn concat(&mut self, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        concat_features(parts)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.same_shape(b, "add")?;
        Ok(Tensor::from_parts(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect(),
        ))
    }

    fn dense(&mut self, x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
        let lp = &self.params[p];
        dense_raw(x, &lp.weights, &lp.bias)
    }

    fn dropout(&mut self, x: &Tensor<T>, p: f64) -> Result<Tensor<T>> {
        if self.mode == BnMode::Infer || p == 0.0 {
            return Ok(x.clone());
        }
        let mask = dropout_mask(x.numel(), p, &mut self.rng)?;
        Ok(apply_mask(x, &mask))
    }

    fn softmax(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        softmax(x, 1)
    }

    fn sigmoid(&mut self, x: &Tensor<T>) -> Tensor<T> {
        sigmoid(x)
    }
}

/// Records every op on a tape; parameters become leaves on first use.
pub(crate) struct Record<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a [LayerParams],
    pub leaves: Vec<Option<(Var, Var)>>,
    pub mode: BnMode,
    pub rng: &'a mut ChaCha8Rng,
    pub stats: BnStats,
}

impl<'a> Record<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a [LayerParams], mode: BnMode, rng: &'a mut ChaCha8Rng) -> Self {
        Record {
            tape,
            params,
            leaves: vec![None; params.len()],
            mode,
            rng,
            stats: Vec::new(),
        }
    }

    fn leaf(&mut self, p: usize) -> (Var, Var) {
        if let Some(l) = self.leaves[p] {
            return l;
        }
        let w = self.tape.param(self.params[p].weights.clone());
        let b = self.tape.param(self.params[p].bias.clone());
        self.leaves[p] = Some((w, b));
        (w, b)
    }
}

impl Exec for Record<'_> {
    type V = Var;

    fn conv2d(&mut self, x: &Var, p: usize, stride: (usize, usize), pad: Padding) -> Result<Var> {
        let (w, b) = self.leaf(p);
        self.tape.conv2d(*x, w, b, stride, pad)
    }

    fn batchnorm(&mut self, x: &Var, p: usize) -> Result<Var> {
        let (g, b) = self.leaf(p);
        let (v, mean, var) = self.tape.batchnorm(*x, g, b, &self.params[p], self.mode)?;
        if self.mode == BnMode::Train {
            self.stats.push((p, mean, var));
        }
        Ok(v)
    }

    fn activation(&mut self, x: &Var, kind: Activation) -> Var {
        self.tape.activation(*x, kind)
    }

    fn maxpool(&mut self, x: &Var, pool: Pool2d) -> Result<Var> {
        self.tape.maxpool(*x, pool)
    }

    fn avgpool(&mut self, x: &Var, pool: Pool2d) -> Result<Var> {
        self.tape.avgpool(*x, pool)
    }

    fn adaptive_max(&mut self, x: &Var) -> Result<Var> {
        self.tape.adaptive_maxpool_time(*x)
    }

    fn reshape(&mut self, x: &Var, dims: &[usize]) -> Result<Var> {
        let mut shape = vec![self.tape.value(*x).shape()[0]];
        shape.extend_from_slice(dims);
        self.tape.reshape(*x, shape)
    }

    fn flatten(&mut self, x: &Var) -> Result<Var> {
        self.tape.flatten(*x)
    }

    fn concat(&mut self, parts: &[&Var]) -> Result<Var> {
        let parts: Vec<Var> = parts.iter().map(|v| **v).collect();
        self.tape.concat(&parts)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn dense(&mut self, x: &Var, p: usize) -> Result<Var> {
        let (w, b) = self.leaf(p);
        self.tape.dense(*x, w, b)
    }

    fn dropout(&mut self, x: &Var, p: f64) -> Result<Var> {
        if self.mode == BnMode::Infer || p == 0.0 {
            return Ok(*x);
        }
        self.tape.dropout(*x, p, self.rng)
    }

    fn softmax(&mut self, x: &Var) -> Result<Var> {
        self.tape.softmax(*x, 1)
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        self.tape.sigmoid(*x)
    }
}
