//! The five architectures.

use rand::Rng;

use super::graph::{Graph, GraphBuilder};
use super::spec::{Architecture, ArchitectureSpec, Head, SpatialBranch};
use crate::error::{Error, Result};
use crate::tensor::{Activation, LayerParams, Padding, Pool2d};

pub(crate) type Built = (Graph, Vec<LayerParams>);

/// Node names exposed for inspection.
pub const TEMPORAL_FEATURES: &str = "temporal_flat";
pub const SPATIAL_FEATURES: &str = "spatial_flat";
pub const FUSED_FEATURES: &str = "fused";

fn check(spec: &ArchitectureSpec, want: &[Architecture]) -> Result<()> {
    spec.validate()?;
    if !want.contains(&spec.name) {
        return Err(Error::Config(format!(
            "builder for {:?} called with {}",
            want, spec.name
        )));
    }
    Ok(())
}

/// conv + BN + activation block, returning the activation node.
fn conv_bn_act(
    g: &mut GraphBuilder,
    x: usize,
    name: &str,
    filters: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
    act: Activation,
) -> Result<usize> {
    let c = g.conv(x, &format!("{name}_conv"), filters, kernel, stride, padding)?;
    let b = g.batchnorm(c, &format!("{name}_bn"));
    Ok(g.activation(b, &format!("{name}_act"), act))
}

/// Appends the encoded demographics when enabled, then the flattened
/// features feed the first dense layer.
fn fuse(g: &mut GraphBuilder, spec: &ArchitectureSpec, parts: &[usize]) -> usize {
    let mut parts = parts.to_vec();
    if spec.use_demographics {
        parts.push(g.demographics());
    }
    if parts.len() == 1 {
        return parts[0];
    }
    g.concat(&parts, FUSED_FEATURES)
}

/// Dense blocks (dense + BN + ReLU + dropout) then the output layer and head.
fn classifier(
    g: &mut GraphBuilder,
    spec: &ArchitectureSpec,
    mut x: usize,
    prefix: &str,
    act: Activation,
    dropout: bool,
) -> Result<usize> {
    for (i, &width) in spec.fc_hidden.iter().enumerate() {
        let d = g.dense(x, &format!("{prefix}fc{}", i + 1), width)?;
        let b = g.batchnorm(d, &format!("{prefix}fc{}_bn", i + 1));
        x = g.activation(b, &format!("{prefix}fc{}_act", i + 1), act);
        if dropout && spec.dropout_p > 0.0 {
            x = g.dropout(x, &format!("{prefix}fc{}_drop", i + 1), spec.dropout_p);
        }
    }
    let logits = g.dense(x, &format!("{prefix}out"), spec.n_outputs)?;
    Ok(match spec.head {
        Head::Softmax => g.softmax(logits, &format!("{prefix}probs")),
        Head::Sigmoid => g.sigmoid(logits, &format!("{prefix}probs")),
    })
}

fn temporal_blocks(
    g: &mut GraphBuilder,
    mut x: usize,
    prefix: &str,
    kernels: &[usize],
    filters: &[usize],
    pools: &[usize],
) -> Result<usize> {
    for (i, ((&k, &n), &mp)) in kernels.iter().zip(filters).zip(pools).enumerate() {
        let name = format!("{prefix}{}", i + 1);
        let a = conv_bn_act(g, x, &name, n, (1, k), (1, 1), Padding::Same, Activation::Relu)?;
        x = g.maxpool(a, &format!("{name}_pool"), (1, mp))?;
    }
    Ok(x)
}

pub fn build_attianet(spec: &ArchitectureSpec) -> Result<Built> {
    check(spec, &[Architecture::AttiaNet])?;
    let mut g = GraphBuilder::new(spec.input_leads, spec.input_samples, spec.init_seed);
    let t = temporal_blocks(
        &mut g,
        GraphBuilder::INPUT,
        "temporal",
        &[5, 5, 5, 3, 3, 3],
        &[16, 16, 32, 32, 64, 64],
        &[2, 2, 4, 2, 2, 4],
    )?;
    let leads = spec.input_leads;
    let s = conv_bn_act(&mut g, t, "spatial", 64, (leads, 1), (1, 1), Padding::Valid, Activation::Relu)?;
    let f = g.flatten(s, "flatten");
    let x = fuse(&mut g, spec, &[f]);
    let out = classifier(&mut g, spec, x, "", Activation::Relu, true)?;
    Ok(g.finish(vec![out]))
}

pub fn build_simplenet(spec: &ArchitectureSpec) -> Result<Built> {
    check(spec, &[Architecture::SimpleNet])?;
    let mut g = GraphBuilder::new(spec.input_leads, spec.input_samples, spec.init_seed);
    let filters = [16, 16, 32, 32, 64, 64];
    let pools = [(1, 2), (1, 2), (2, 4), (1, 2), (2, 2), (3, 4)];
    let mut x = GraphBuilder::INPUT;
    for (i, (&n, &mp)) in filters.iter().zip(&pools).enumerate() {
        let name = format!("block{}", i + 1);
        let a = conv_bn_act(&mut g, x, &name, n, (3, 3), (1, 1), Padding::Same, Activation::Relu)?;
        x = g.maxpool(a, &format!("{name}_pool"), mp)?;
    }
    let f = g.flatten(x, "flatten");
    let x = fuse(&mut g, spec, &[f]);
    let out = classifier(&mut g, spec, x, "", Activation::Relu, true)?;
    Ok(g.finish(vec![out]))
}

pub fn build_deep_residual_cnn(spec: &ArchitectureSpec) -> Result<Built> {
    check(spec, &[Architecture::DeepResidualCNN])?;
    const WIDTH: usize = 256;
    let leaky = Activation::leaky();
    let mut g = GraphBuilder::new(spec.input_leads, spec.input_samples, spec.init_seed);
    let x = g.reshape(
        GraphBuilder::INPUT,
        "leads_as_channels",
        vec![spec.input_leads, 1, spec.input_samples],
    )?;
    let mut x = conv_bn_act(&mut g, x, "entry", WIDTH, (1, 15), (1, 2), Padding::Same, leaky)?;
    for block in 1..=5 {
        let stride = if block == 2 || block == 4 { 2 } else { 1 };
        let name = format!("res{block}");
        let h = conv_bn_act(&mut g, x, &format!("{name}a"), WIDTH, (1, 9), (1, stride), Padding::Same, leaky)?;
        let h = conv_bn_act(&mut g, h, &format!("{name}b"), WIDTH, (1, 9), (1, 1), Padding::Same, leaky)?;
        let skip = if stride == 1 {
            x
        } else {
            let p = g.avgpool(
                x,
                &format!("{name}_skip_pool"),
                Pool2d {
                    window: (1, stride),
                    ceil: true,
                },
            )?;
            g.conv(p, &format!("{name}_skip_conv"), WIDTH, (1, 1), (1, 1), Padding::Valid)?
        };
        x = g.add(h, skip, &format!("{name}_out"))?;
    }
    let x = if spec.dropout_p > 0.0 {
        g.dropout(x, "dropout", spec.dropout_p)
    } else {
        x
    };
    let p = g.adaptive_maxpool_time(x, "global_max");
    let f = g.flatten(p, "flatten");
    let x = fuse(&mut g, spec, &[f]);
    let main = classifier(&mut g, spec, x, "main_", leaky, false)?;
    let aux = classifier(&mut g, spec, x, "aux_", leaky, false)?;
    Ok(g.finish(vec![main, aux]))
}

fn parallel_graph(spec: &ArchitectureSpec) -> Result<(GraphBuilder, usize)> {
    let mut g = GraphBuilder::new(spec.input_leads, spec.input_samples, spec.init_seed);
    let t = temporal_blocks(
        &mut g,
        GraphBuilder::INPUT,
        "temporal",
        &[5, 5, 3],
        &[16, 32, 64],
        &[2, 2, 4],
    )?;
    let t = g.flatten(t, TEMPORAL_FEATURES);
    let s = match spec.spatial_branch {
        SpatialBranch::TwoBlock => {
            let mut s = GraphBuilder::INPUT;
            for (i, (&k, &n)) in [6usize, 3].iter().zip(&[16usize, 32]).enumerate() {
                let name = format!("spatial{}", i + 1);
                let a = conv_bn_act(&mut g, s, &name, n, (k, 1), (1, 1), Padding::Valid, Activation::Relu)?;
                s = g.maxpool(a, &format!("{name}_pool"), (1, 2))?;
            }
            s
        }
        SpatialBranch::SingleLayer => conv_bn_act(
            &mut g,
            GraphBuilder::INPUT,
            "spatial1",
            32,
            (spec.input_leads, 1),
            (1, 1),
            Padding::Valid,
            Activation::Relu,
        )?,
    };
    let s = g.flatten(s, SPATIAL_FEATURES);
    let x = fuse(&mut g, spec, &[t, s]);
    let out = classifier(&mut g, spec, x, "", Activation::Relu, true)?;
    Ok((g, out))
}

pub fn build_parallel_cnn(spec: &ArchitectureSpec) -> Result<Built> {
    check(spec, &[Architecture::ParallelCNN, Architecture::ParallelCNNew])?;
    let (g, out) = parallel_graph(spec)?;
    Ok(g.finish(vec![out]))
}

/// Records used to balance branch variances at initialization.
const CALIBRATION_RECORDS: usize = 32;

/// ParallelCNN graph with symmetric initialization: the first temporal and
/// first spatial filters are cut from one shared draw, then the last BN scale
/// of each branch is set so both branches feed the fusion layer with the same
/// activation variance.
pub fn build_parallel_cnn_ew(spec: &ArchitectureSpec) -> Result<Built> {
    check(spec, &[Architecture::ParallelCNNew])?;
    let (mut g, out) = parallel_graph(spec)?;
    share_first_filters(&mut g)?;
    let (graph, mut params) = g.finish(vec![out]);
    equalize_branches(spec, &graph, &mut params)?;
    Ok((graph, params))
}

fn param_index(params: &[LayerParams], name: &str) -> Result<usize> {
    params
        .iter()
        .position(|p| p.name == name)
        .ok_or_else(|| Error::State(format!("missing layer '{name}'")))
}

fn share_first_filters(g: &mut GraphBuilder) -> Result<()> {
    let ti = param_index(g.params_mut(), "temporal1_conv")?;
    let si = param_index(g.params_mut(), "spatial1_conv")?;
    let tshape = g.params_mut()[ti].weights.shape().to_vec();
    let sshape = g.params_mut()[si].weights.shape().to_vec();
    let filters = tshape[0].min(sshape[0]);
    let t_taps = tshape[1] * tshape[2] * tshape[3];
    let s_taps = sshape[1] * sshape[2] * sshape[3];
    let taps = t_taps.max(s_taps);
    let draw: Vec<f64> = (0..filters * taps)
        .map(|_| g.rng().random_range(-1.0..=1.0))
        .collect();
    let fill = |lp: &mut LayerParams, per: usize| {
        let bound = (6.0 / per as f64).sqrt();
        let w = lp.weights.make_mut();
        for f in 0..filters {
            for j in 0..per {
                w[f * per + j] = draw[f * taps + j] * bound;
            }
        }
    };
    fill(&mut g.params_mut()[ti], t_taps);
    fill(&mut g.params_mut()[si], s_taps);
    Ok(())
}

fn pooled_variance(t: &crate::Tensor) -> f64 {
    let n = t.numel() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Scales the last BN of each branch so that the infer-mode variance of both
/// flattened branch outputs equals their geometric mean. BN with zero shift,
/// ReLU and max pooling are positively homogeneous, so scaling gamma by `c`
/// scales the branch output by exactly `c`.
fn equalize_branches(spec: &ArchitectureSpec, graph: &Graph, params: &mut [LayerParams]) -> Result<()> {
    let signals = crate::data::synth::calibration_batch(
        spec.input_leads,
        spec.input_samples,
        CALIBRATION_RECORDS,
        spec.init_seed ^ 0x5eed_ca11,
    )?;
    let t_node = graph.find(TEMPORAL_FEATURES).expect("temporal branch");
    let s_node = graph.find(SPATIAL_FEATURES).expect("spatial branch");
    let values = super::run_nodes(graph, params, &signals, None, crate::tensor::BnMode::Infer, &[t_node, s_node])?;
    let (vt, vs) = (pooled_variance(&values[0]), pooled_variance(&values[1]));
    if !(vt > 0.0 && vs > 0.0 && vt.is_finite() && vs.is_finite()) {
        return Err(Error::Config(format!(
            "cannot balance branches: variances {vt} and {vs}"
        )));
    }
    let target = (vt * vs).sqrt();
    let last_spatial = match spec.spatial_branch {
        SpatialBranch::TwoBlock => "spatial2_bn",
        SpatialBranch::SingleLayer => "spatial1_bn",
    };
    for (name, var) in [("temporal3_bn", vt), (last_spatial, vs)] {
        let i = param_index(params, name)?;
        let c = (target / var).sqrt();
        for g in params[i].weights.make_mut() {
            *g *= c;
        }
    }
    Ok(())
}
