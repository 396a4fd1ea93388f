//! Reverse-mode computation graph.
//!
//! A [`Network`] is a fixed DAG of layer nodes over a parameter
//! registry. Nodes are stored in topological order by construction
//! (every node's inputs have smaller ids), forward evaluates them in
//! index order while caching activations in a [`Trace`], and backward
//! walks the same order exactly reversed, accumulating gradients into
//! the registry. All per-node math is single threaded, so results are
//! deterministic for a fixed input.
//!
//! 1x1 convolutions route through the matmul lowering in both
//! directions; larger kernels use the direct loops.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    avgpool2x2, avgpool2x2_backward, batchnorm_backward, batchnorm_eval, batchnorm_train, conv2d,
    conv2d_backward, global_avgpool, global_avgpool_backward, linear, linear_backward,
    maxpool3x3s2, maxpool3x3s2_backward, pointwise_conv, pointwise_conv_backward, BatchNormSpec,
    BnCache, ConvSpec, LinearSpec,
};
use crate::scalar::Scalar;
use crate::shift::{shift_adjoint, shift_forward, ShiftPlan};
use crate::tensor::Tensor;

pub type NodeId = usize;
pub type ParamId = usize;
pub type BnId = usize;

/// Whether a forward pass uses batch statistics (training) or the
/// running estimates (evaluation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What role a parameter buffer plays; weight decay applies only to
/// convolution and fully connected weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    FcWeight,
    FcBias,
    BnGamma,
    BnBeta,
}

impl ParamKind {
    /// True for the buffers weight decay may touch.
    pub fn decayed(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::FcWeight)
    }
}

/// One trainable buffer with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct ParamEntry<S> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub grad: Vec<S>,
}

/// All trainable buffers of a network, in registration order. The
/// order is deterministic and doubles as the checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamRegistry<S> {
    entries: Vec<ParamEntry<S>>,
}

impl<S: Scalar> ParamRegistry<S> {
    pub fn add(&mut self, name: String, kind: ParamKind, shape: Vec<usize>, value: Vec<S>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![S::zero(); value.len()];
        self.entries.push(ParamEntry {
            name,
            kind,
            shape,
            value,
            grad,
        });
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<S>] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry<S> {
        &mut self.entries[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry<S>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut ParamEntry<S>> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in &mut e.grad {
                *g = S::zero();
            }
        }
    }
}

/// Running statistics of one batchnorm layer.
#[derive(Clone, Debug)]
pub struct BnBuffers<S> {
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
}

/// A single graph node.
#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub op: OpKind,
    pub inputs: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub enum OpKind {
    Input,
    Conv { spec: ConvSpec, weight: ParamId },
    BatchNorm { spec: BatchNormSpec, gamma: ParamId, beta: ParamId, state: BnId },
    Relu,
    Shift { plan: ShiftPlan },
    AvgPool2x2,
    MaxPool3x3,
    GlobalAvgPool,
    Linear { spec: LinearSpec, weight: ParamId, bias: ParamId },
    Add,
}

/// Landmarks into the node list for shape reporting; populated by the
/// network builder.
#[derive(Clone, Debug, Default)]
pub struct Landmarks {
    pub stem_out: Option<NodeId>,
    pub stage_outs: Vec<NodeId>,
}

/// A built network: nodes, parameters, and batchnorm state.
#[derive(Clone, Debug)]
pub struct Network<S: Scalar> {
    nodes: Vec<Node>,
    pub params: ParamRegistry<S>,
    bn: Vec<BnBuffers<S>>,
    output: NodeId,
    input: NodeId,
    pub landmarks: Landmarks,
    shift_fault: bool,
}

/// Saved activations and per-op caches from one forward pass.
pub struct Trace<S: Scalar> {
    values: Vec<Tensor<S>>,
    bn_caches: Vec<Option<BnCache<S>>>,
    pool_caches: Vec<Option<Vec<usize>>>,
    mode: Mode,
    output: NodeId,
}

impl<S: Scalar> Trace<S> {
    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.values[id]
    }

    pub fn output(&self) -> &Tensor<S> {
        &self.values[self.output]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl<S: Scalar> Network<S> {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn bn_buffers(&self) -> &[BnBuffers<S>] {
        &self.bn
    }

    pub fn bn_buffers_mut(&mut self) -> &mut [BnBuffers<S>] {
        &mut self.bn
    }

    pub fn zero_grads(&mut self) {
        self.params.zero_grads();
    }

    /// Negates the shift backward pass. The gradient checker's
    /// negative control uses this to prove it can detect a wrong
    /// adjoint; nothing else should enable it.
    pub fn set_shift_fault(&mut self, enabled: bool) {
        self.shift_fault = enabled;
    }

    /// Evaluates every node in topological order.
    pub fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Trace<S>> {
        let n = self.nodes.len();
        let mut values: Vec<Option<Tensor<S>>> = vec![None; n];
        let mut bn_caches: Vec<Option<BnCache<S>>> = Vec::with_capacity(n);
        bn_caches.resize_with(n, || None);
        let mut pool_caches: Vec<Option<Vec<usize>>> = vec![None; n];
        for id in 0..n {
            // Split borrows: the node description is cloned cheaply
            // except for shift plans, which we reference by id below.
            let inputs: Vec<NodeId> = self.nodes[id].inputs.clone();
            let arg = |k: usize| -> &Tensor<S> {
                values[inputs[k]].as_ref().expect("topological order")
            };
            let value = match &self.nodes[id].op {
                OpKind::Input => x.clone(),
                OpKind::Conv { spec, weight } => {
                    let w = &self.params.get(*weight).value;
                    if spec.kernel == (1, 1) {
                        pointwise_conv(arg(0), spec, w)?
                    } else {
                        conv2d(arg(0), spec, w)?
                    }
                }
                OpKind::BatchNorm { spec, gamma, beta, state } => {
                    let g = &self.params.get(*gamma).value;
                    let b = &self.params.get(*beta).value;
                    match mode {
                        Mode::Train => {
                            // Running stats update in place, so the
                            // buffers are taken out and restored.
                            let mut bufs = self.bn[*state].clone();
                            let (y, cache) = batchnorm_train(
                                arg(0),
                                spec,
                                g,
                                b,
                                &mut bufs.running_mean,
                                &mut bufs.running_var,
                            )?;
                            self.bn[*state] = bufs;
                            bn_caches[id] = Some(cache);
                            y
                        }
                        Mode::Eval => batchnorm_eval(
                            arg(0),
                            spec,
                            g,
                            b,
                            &self.bn[*state].running_mean,
                            &self.bn[*state].running_var,
                        )?,
                    }
                }
                OpKind::Relu => arg(0).relu(),
                OpKind::Shift { plan } => shift_forward(arg(0), plan)?,
                OpKind::AvgPool2x2 => avgpool2x2(arg(0))?,
                OpKind::MaxPool3x3 => {
                    let (y, cache) = maxpool3x3s2(arg(0))?;
                    pool_caches[id] = Some(cache);
                    y
                }
                OpKind::GlobalAvgPool => global_avgpool(arg(0))?,
                OpKind::Linear { spec, weight, bias } => linear(
                    arg(0),
                    spec,
                    &self.params.get(*weight).value,
                    &self.params.get(*bias).value,
                )?,
                OpKind::Add => arg(0).add(arg(1))?,
            };
            values[id] = Some(value);
        }
        Ok(Trace {
            values: values.into_iter().map(|v| v.expect("all nodes evaluated")).collect(),
            bn_caches,
            pool_caches,
            mode,
            output: self.output,
        })
    }

    /// Accumulates parameter gradients for the forward pass recorded
    /// in `trace`, seeded with `d loss / d output`. Returns the
    /// gradient with respect to the network input. The trace must
    /// come from a train-mode forward.
    pub fn backward(&mut self, trace: &Trace<S>, dout: &Tensor<S>) -> Result<Tensor<S>> {
        if trace.mode != Mode::Train {
            return Err(Error::Unsupported(
                "backward requires a train-mode trace".into(),
            ));
        }
        if trace.values.len() != self.nodes.len() {
            return Err(Error::ShapeMismatch(
                "trace does not belong to this network".into(),
            ));
        }
        if dout.shape() != trace.output().shape() {
            return Err(Error::ShapeMismatch(format!(
                "cotangent shape {} does not match output {}",
                dout.shape(),
                trace.output().shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; n];
        grads[self.output] = Some(dout.clone());
        for id in (0..n).rev() {
            let gy = match grads[id].take() {
                Some(g) => g,
                // Nodes outside the loss cone carry no gradient.
                None => continue,
            };
            let inputs = self.nodes[id].inputs.clone();
            match &self.nodes[id].op {
                OpKind::Input => {
                    grads[id] = Some(gy);
                }
                OpKind::Conv { spec, weight } => {
                    let x = &trace.values[inputs[0]];
                    let w = &self.params.get(*weight).value;
                    let (gx, gw) = if spec.kernel == (1, 1) {
                        pointwise_conv_backward(x, spec, w, &gy)?
                    } else {
                        conv2d_backward(x, spec, w, &gy)?
                    };
                    accumulate_vec(&mut self.params.get_mut(*weight).grad, &gw);
                    accumulate(&mut grads[inputs[0]], gx)?;
                }
                OpKind::BatchNorm { spec, gamma, beta, state: _ } => {
                    let cache = trace.bn_caches[id]
                        .as_ref()
                        .expect("train-mode trace caches batchnorm");
                    let g = &self.params.get(*gamma).value;
                    let (gx, dgamma, dbeta) = batchnorm_backward(spec, cache, g, &gy)?;
                    accumulate_vec(&mut self.params.get_mut(*gamma).grad, &dgamma);
                    accumulate_vec(&mut self.params.get_mut(*beta).grad, &dbeta);
                    accumulate(&mut grads[inputs[0]], gx)?;
                }
                OpKind::Relu => {
                    let x = &trace.values[inputs[0]];
                    let mask = x.map(|v| if v > S::zero() { S::one() } else { S::zero() });
                    accumulate(&mut grads[inputs[0]], gy.mul(&mask)?)?;
                }
                OpKind::Shift { plan } => {
                    let mut gx = shift_adjoint(&gy, plan)?;
                    if self.shift_fault {
                        gx = gx.scale(S::from_f64_lossy(-1.0));
                    }
                    accumulate(&mut grads[inputs[0]], gx)?;
                }
                OpKind::AvgPool2x2 => {
                    let shape = trace.values[inputs[0]].shape();
                    accumulate(&mut grads[inputs[0]], avgpool2x2_backward(shape, &gy)?)?;
                }
                OpKind::MaxPool3x3 => {
                    let shape = trace.values[inputs[0]].shape();
                    let cache = trace.pool_caches[id]
                        .as_ref()
                        .expect("trace caches max pool argmax");
                    accumulate(&mut grads[inputs[0]], maxpool3x3s2_backward(shape, cache, &gy)?)?;
                }
                OpKind::GlobalAvgPool => {
                    let shape = trace.values[inputs[0]].shape();
                    accumulate(&mut grads[inputs[0]], global_avgpool_backward(shape, &gy)?)?;
                }
                OpKind::Linear { spec, weight, bias } => {
                    let x = &trace.values[inputs[0]];
                    let w = &self.params.get(*weight).value;
                    let (gx, gw, gb) = linear_backward(x, spec, w, &gy)?;
                    accumulate_vec(&mut self.params.get_mut(*weight).grad, &gw);
                    accumulate_vec(&mut self.params.get_mut(*bias).grad, &gb);
                    accumulate(&mut grads[inputs[0]], gx)?;
                }
                OpKind::Add => {
                    accumulate(&mut grads[inputs[0]], gy.clone())?;
                    accumulate(&mut grads[inputs[1]], gy)?;
                }
            }
        }
        grads[self.input]
            .take()
            .ok_or_else(|| Error::Unsupported("input is not connected to the output".into()))
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) -> Result<()> {
    *slot = Some(match slot.take() {
        Some(acc) => acc.add(&g)?,
        None => g,
    });
    Ok(())
}

fn accumulate_vec<S: Scalar>(acc: &mut [S], g: &[S]) {
    debug_assert_eq!(acc.len(), g.len());
    for (a, v) in acc.iter_mut().zip(g) {
        *a = *a + *v;
    }
}

/// Incremental network constructor. Parameters are initialized as
/// they are registered: He fan-in normals for conv and fc weights,
/// gamma 1 / beta 0 for batchnorm, zero for the fc bias, all drawn
/// from a ChaCha stream seeded once, so a seed fully determines every
/// buffer.
pub struct GraphBuilder<S: Scalar> {
    nodes: Vec<Node>,
    params: ParamRegistry<S>,
    bn: Vec<BnBuffers<S>>,
    rng: ChaCha8Rng,
    input: Option<NodeId>,
}

impl<S: Scalar> GraphBuilder<S> {
    pub fn new(seed: u64) -> GraphBuilder<S> {
        GraphBuilder {
            nodes: Vec::new(),
            params: ParamRegistry::default(),
            bn: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            input: None,
        }
    }

    fn push(&mut self, name: String, op: OpKind, inputs: Vec<NodeId>) -> NodeId {
        for &i in &inputs {
            assert!(i < self.nodes.len(), "inputs must precede the node");
        }
        self.nodes.push(Node { name, op, inputs });
        self.nodes.len() - 1
    }

    fn he_normal(&mut self, len: usize, fan_in: usize) -> Vec<S> {
        let std = (2.0 / fan_in as f64).sqrt();
        (0..len)
            .map(|_| S::from_f64_lossy(crate::scalar::standard_normal(&mut self.rng) * std))
            .collect()
    }

    pub fn input(&mut self) -> NodeId {
        assert!(self.input.is_none(), "a network has exactly one input");
        let id = self.push("input".into(), OpKind::Input, vec![]);
        self.input = Some(id);
        id
    }

    pub fn conv(&mut self, name: &str, spec: ConvSpec, input: NodeId) -> NodeId {
        let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        let w = self.he_normal(spec.weight_len(), fan_in);
        let weight = self.params.add(
            format!("{name}.weight"),
            ParamKind::ConvWeight,
            vec![spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1],
            w,
        );
        self.push(name.into(), OpKind::Conv { spec, weight }, vec![input])
    }

    pub fn batchnorm(&mut self, name: &str, channels: usize, input: NodeId) -> NodeId {
        let gamma = self.params.add(
            format!("{name}.gamma"),
            ParamKind::BnGamma,
            vec![channels],
            vec![S::one(); channels],
        );
        let beta = self.params.add(
            format!("{name}.beta"),
            ParamKind::BnBeta,
            vec![channels],
            vec![S::zero(); channels],
        );
        self.bn.push(BnBuffers {
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
        });
        let state = self.bn.len() - 1;
        self.push(
            name.into(),
            OpKind::BatchNorm {
                spec: BatchNormSpec::new(channels),
                gamma,
                beta,
                state,
            },
            vec![input],
        )
    }

    pub fn relu(&mut self, name: &str, input: NodeId) -> NodeId {
        self.push(name.into(), OpKind::Relu, vec![input])
    }

    pub fn shift(&mut self, name: &str, plan: ShiftPlan, input: NodeId) -> NodeId {
        self.push(name.into(), OpKind::Shift { plan }, vec![input])
    }

    pub fn avgpool(&mut self, name: &str, input: NodeId) -> NodeId {
        self.push(name.into(), OpKind::AvgPool2x2, vec![input])
    }

    pub fn maxpool(&mut self, name: &str, input: NodeId) -> NodeId {
        self.push(name.into(), OpKind::MaxPool3x3, vec![input])
    }

    pub fn global_avgpool(&mut self, name: &str, input: NodeId) -> NodeId {
        self.push(name.into(), OpKind::GlobalAvgPool, vec![input])
    }

    pub fn linear(&mut self, name: &str, spec: LinearSpec, input: NodeId) -> NodeId {
        let w = self.he_normal(spec.weight_len(), spec.in_features);
        let weight = self.params.add(
            format!("{name}.weight"),
            ParamKind::FcWeight,
            vec![spec.out_features, spec.in_features],
            w,
        );
        let bias = self.params.add(
            format!("{name}.bias"),
            ParamKind::FcBias,
            vec![spec.out_features],
            vec![S::zero(); spec.out_features],
        );
        self.push(name.into(), OpKind::Linear { spec, weight, bias }, vec![input])
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        self.push(name.into(), OpKind::Add, vec![a, b])
    }

    pub fn finish(self, output: NodeId) -> Network<S> {
        let input = self.input.expect("network built without an input node");
        assert!(output < self.nodes.len());
        Network {
            nodes: self.nodes,
            params: self.params,
            bn: self.bn,
            output,
            input,
            landmarks: Landmarks::default(),
            shift_fault: false,
        }
    }
}
