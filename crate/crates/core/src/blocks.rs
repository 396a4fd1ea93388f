//! Residual block shapes.
//!
//! Four block kinds share one skeleton: a channel-reducing 1x1
//! convolution, a spatial stage, a channel-expanding 1x1 convolution,
//! and a shortcut added before the final activation. They differ in
//! the spatial stage:
//!
//! * `Bottleneck`: 3x3 convolution, stride 2 when downsampling.
//! * `SingleShift`: one shift between the 1x1 convolutions; the 3x3
//!   is replaced by a 1x1, and downsampling becomes a 2x2 average
//!   pool before the shift.
//! * `MultiShift`: a shift before every convolution plus an inner
//!   skip around the middle shift/conv pair.
//! * `FlattenedMultiShift`: `MultiShift` with the middle width equal
//!   to the output width instead of a quarter of it.
//!
//! Every convolution is followed by batchnorm; each batchnorm is
//! followed by a ReLU except the last one in the block, whose ReLU
//! comes after the shortcut add. Shortcuts project with a 1x1
//! convolution plus batchnorm whenever the block changes resolution
//! or width; bottlenecks project with stride 2, shift blocks pool
//! first and project at stride 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, Network, NodeId, ParamKind};
use crate::layers::{ConvSpec, LinearSpec};
use crate::scalar::Scalar;
use crate::shift::{build_plan, NeighborhoodKind};

/// Which residual block shape to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    #[serde(rename = "bottleneck")]
    Bottleneck,
    #[serde(rename = "single-shift")]
    SingleShift,
    #[serde(rename = "multi-shift")]
    MultiShift,
    #[serde(rename = "flattened-multi-shift")]
    FlattenedMultiShift,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] = [
        BlockKind::Bottleneck,
        BlockKind::SingleShift,
        BlockKind::MultiShift,
        BlockKind::FlattenedMultiShift,
    ];

    pub fn token(self) -> &'static str {
        match self {
            BlockKind::Bottleneck => "bottleneck",
            BlockKind::SingleShift => "single-shift",
            BlockKind::MultiShift => "multi-shift",
            BlockKind::FlattenedMultiShift => "flattened-multi-shift",
        }
    }

    pub fn parse_token(s: &str) -> Result<BlockKind> {
        BlockKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = BlockKind::ALL.iter().map(|k| k.token()).collect();
                Error::Config(format!(
                    "unknown block kind `{s}`; expected one of {}",
                    known.join(", ")
                ))
            })
    }

    /// True for the kinds that contain shift nodes.
    pub fn uses_shift(self) -> bool {
        !matches!(self, BlockKind::Bottleneck)
    }
}

/// A fully resolved block description.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub neighborhood: NeighborhoodKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub downsample: bool,
}

impl BlockSpec {
    /// Width of the middle stage: a quarter of the output width,
    /// except that the flattened kind keeps the full output width.
    pub fn mid_channels(&self) -> usize {
        match self.kind {
            BlockKind::FlattenedMultiShift => self.out_channels,
            _ => self.out_channels / 4,
        }
    }

    /// The shortcut needs a projection whenever the block changes
    /// the spatial grid or the channel count.
    pub fn needs_projection(&self) -> bool {
        self.downsample || self.in_channels != self.out_channels
    }

    pub fn validate(&self, stage: &str) -> Result<()> {
        let fail = |message: String| Error::Spec {
            stage: stage.to_string(),
            message,
        };
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(fail("channel counts must be positive".into()));
        }
        if self.kind != BlockKind::FlattenedMultiShift && !self.out_channels.is_multiple_of(4) {
            return Err(fail(format!(
                "{} blocks need out_channels divisible by 4, got {}",
                self.kind.token(),
                self.out_channels
            )));
        }
        Ok(())
    }
}

/// Name, role, and dimensions of one parameter buffer, as the block
/// will register it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

fn conv_shape(name: String, out_c: usize, in_c: usize, k: usize) -> ParamShape {
    ParamShape {
        name,
        kind: ParamKind::ConvWeight,
        shape: vec![out_c, in_c, k, k],
    }
}

fn bn_shapes(prefix: &str, channels: usize, out: &mut Vec<ParamShape>) {
    out.push(ParamShape {
        name: format!("{prefix}.gamma"),
        kind: ParamKind::BnGamma,
        shape: vec![channels],
    });
    out.push(ParamShape {
        name: format!("{prefix}.beta"),
        kind: ParamKind::BnBeta,
        shape: vec![channels],
    });
}

/// Enumerates the parameter buffers a block registers, in
/// registration order. This is computed from the spec alone, without
/// building anything, and is pinned against the builder by test.
pub fn block_param_shapes(prefix: &str, spec: &BlockSpec) -> Vec<ParamShape> {
    let mid = spec.mid_channels();
    let (in_c, out_c) = (spec.in_channels, spec.out_channels);
    let middle_kernel = match spec.kind {
        BlockKind::Bottleneck => 3,
        _ => 1,
    };
    let mut shapes = Vec::new();
    shapes.push(conv_shape(format!("{prefix}.conv1.weight"), mid, in_c, 1));
    bn_shapes(&format!("{prefix}.bn1"), mid, &mut shapes);
    shapes.push(conv_shape(
        format!("{prefix}.conv2.weight"),
        mid,
        mid,
        middle_kernel,
    ));
    bn_shapes(&format!("{prefix}.bn2"), mid, &mut shapes);
    shapes.push(conv_shape(format!("{prefix}.conv3.weight"), out_c, mid, 1));
    bn_shapes(&format!("{prefix}.bn3"), out_c, &mut shapes);
    if spec.needs_projection() {
        shapes.push(conv_shape(
            format!("{prefix}.shortcut.conv.weight"),
            out_c,
            in_c,
            1,
        ));
        bn_shapes(&format!("{prefix}.shortcut.bn"), out_c, &mut shapes);
    }
    shapes
}

/// Trainable parameter count of one block, from the spec alone.
pub fn block_param_count(spec: &BlockSpec) -> usize {
    block_param_shapes("b", spec)
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum()
}

/// Appends one residual block to `b`, reading from node `input`.
/// Returns the node holding the block output (after the final ReLU).
pub fn append_block<S: Scalar>(
    b: &mut GraphBuilder<S>,
    prefix: &str,
    spec: &BlockSpec,
    input: NodeId,
) -> Result<NodeId> {
    spec.validate(prefix)?;
    let mid = spec.mid_channels();
    let (in_c, out_c) = (spec.in_channels, spec.out_channels);
    let name = |suffix: &str| format!("{prefix}.{suffix}");

    let main = match spec.kind {
        BlockKind::Bottleneck => {
            let c1 = b.conv(&name("conv1"), ConvSpec::new(in_c, mid, 1, 1), input);
            let b1 = b.batchnorm(&name("bn1"), mid, c1);
            let r1 = b.relu(&name("relu1"), b1);
            let stride = if spec.downsample { 2 } else { 1 };
            let c2 = b.conv(&name("conv2"), ConvSpec::new(mid, mid, 3, stride), r1);
            let b2 = b.batchnorm(&name("bn2"), mid, c2);
            let r2 = b.relu(&name("relu2"), b2);
            let c3 = b.conv(&name("conv3"), ConvSpec::new(mid, out_c, 1, 1), r2);
            b.batchnorm(&name("bn3"), out_c, c3)
        }
        BlockKind::SingleShift => {
            let c1 = b.conv(&name("conv1"), ConvSpec::new(in_c, mid, 1, 1), input);
            let b1 = b.batchnorm(&name("bn1"), mid, c1);
            let mut cur = b.relu(&name("relu1"), b1);
            if spec.downsample {
                cur = b.avgpool(&name("pool"), cur);
            }
            let plan = build_plan(mid, spec.neighborhood)?;
            let s = b.shift(&name("shift"), plan, cur);
            let c2 = b.conv(&name("conv2"), ConvSpec::new(mid, mid, 1, 1), s);
            let b2 = b.batchnorm(&name("bn2"), mid, c2);
            let r2 = b.relu(&name("relu2"), b2);
            let c3 = b.conv(&name("conv3"), ConvSpec::new(mid, out_c, 1, 1), r2);
            b.batchnorm(&name("bn3"), out_c, c3)
        }
        BlockKind::MultiShift | BlockKind::FlattenedMultiShift => {
            let plan1 = build_plan(in_c, spec.neighborhood)?;
            let s1 = b.shift(&name("shift1"), plan1, input);
            let c1 = b.conv(&name("conv1"), ConvSpec::new(in_c, mid, 1, 1), s1);
            let b1 = b.batchnorm(&name("bn1"), mid, c1);
            let mut skip = b.relu(&name("relu1"), b1);
            if spec.downsample {
                skip = b.avgpool(&name("pool"), skip);
            }
            let plan2 = build_plan(mid, spec.neighborhood)?;
            let s2 = b.shift(&name("shift2"), plan2, skip);
            let c2 = b.conv(&name("conv2"), ConvSpec::new(mid, mid, 1, 1), s2);
            let b2 = b.batchnorm(&name("bn2"), mid, c2);
            let inner = b.add(&name("inner_add"), b2, skip);
            let r2 = b.relu(&name("relu2"), inner);
            let plan3 = build_plan(mid, spec.neighborhood)?;
            let s3 = b.shift(&name("shift3"), plan3, r2);
            let c3 = b.conv(&name("conv3"), ConvSpec::new(mid, out_c, 1, 1), s3);
            b.batchnorm(&name("bn3"), out_c, c3)
        }
    };

    let shortcut = if spec.needs_projection() {
        match spec.kind {
            BlockKind::Bottleneck => {
                let stride = if spec.downsample { 2 } else { 1 };
                let c = b.conv(
                    &name("shortcut.conv"),
                    ConvSpec::new(in_c, out_c, 1, stride),
                    input,
                );
                b.batchnorm(&name("shortcut.bn"), out_c, c)
            }
            _ => {
                let mut cur = input;
                if spec.downsample {
                    cur = b.avgpool(&name("shortcut.pool"), cur);
                }
                let c = b.conv(&name("shortcut.conv"), ConvSpec::new(in_c, out_c, 1, 1), cur);
                b.batchnorm(&name("shortcut.bn"), out_c, c)
            }
        }
    } else {
        input
    };

    let sum = b.add(&name("add"), main, shortcut);
    Ok(b.relu(&name("relu"), sum))
}

/// Builds a network that is exactly one block, for unit tests and
/// gradient checks. When `with_head` is set, a global average pool
/// and a small fully connected layer follow, so the network produces
/// logits for `classes` classes.
pub fn block_network<S: Scalar>(
    spec: &BlockSpec,
    seed: u64,
    with_head: Option<usize>,
) -> Result<Network<S>> {
    let mut b: GraphBuilder<S> = GraphBuilder::new(seed);
    let x = b.input();
    let mut out = append_block(&mut b, "block", spec, x)?;
    if let Some(classes) = with_head {
        let gap = b.global_avgpool("gap", out);
        out = b.linear(
            "fc",
            LinearSpec {
                in_features: spec.out_channels,
                out_features: classes,
            },
            gap,
        );
    }
    Ok(b.finish(out))
}
