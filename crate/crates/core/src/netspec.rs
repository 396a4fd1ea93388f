//! Declarative network descriptions.
//!
//! A [`NetworkSpec`] names one homogeneous residual architecture: an
//! input plane, an optional stem (7x7 stride-2 convolution,
//! batchnorm, ReLU, 3x3 stride-2 max pool), a list of stages, and a
//! classification head (global average pool plus a fully connected
//! layer). All blocks share one [`BlockKind`] and one neighborhood.
//!
//! Each stage repeats one output width; the first block of a stage
//! downsamples when the stage asks for it and projects its shortcut
//! whenever width or resolution changes. Width must not decrease
//! from stage to stage.
//!
//! Specs come from three places: the builtin catalog
//! ([`builtin_spec`]), a TOML file (see [`config`]), or direct
//! construction in code. [`build`] turns any valid spec into a
//! runnable [`Network`].

pub mod config;

use serde::{Deserialize, Serialize};

use crate::blocks::{append_block, BlockKind, BlockSpec};
use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, Network};
use crate::layers::{ConvSpec, LinearSpec};
use crate::scalar::Scalar;
use crate::shift::NeighborhoodKind;

/// Expected input plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// The fixed stem: 7x7 stride-2 convolution to `out_channels`,
/// batchnorm, ReLU, then a 3x3 stride-2 max pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemSpec {
    pub out_channels: usize,
}

/// One stage: `repeats` blocks of width `out_channels`; the first
/// block halves the grid when `downsample` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub out_channels: usize,
    pub repeats: usize,
    pub downsample: bool,
}

/// Classification head: global average pool plus a fully connected
/// layer onto `classes` logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub classes: usize,
}

/// A complete architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub kind: BlockKind,
    pub neighborhood: NeighborhoodKind,
    pub input: InputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<StemSpec>,
    pub stages: Vec<StageSpec>,
    pub head: HeadSpec,
}

impl NetworkSpec {
    /// Structural validation. Shape legality at the declared input
    /// resolution is checked by the cost pass and at forward time,
    /// not here.
    pub fn validate(&self) -> Result<()> {
        let fail = |stage: &str, message: String| Error::Spec {
            stage: stage.to_string(),
            message,
        };
        if self.name.is_empty() {
            return Err(fail("name", "name must not be empty".into()));
        }
        if self.input.channels == 0 || self.input.height == 0 || self.input.width == 0 {
            return Err(fail("input", "input extents must be positive".into()));
        }
        if let Some(stem) = &self.stem {
            if stem.out_channels == 0 {
                return Err(fail("stem", "stem width must be positive".into()));
            }
        }
        if self.stages.is_empty() {
            return Err(fail("stages", "at least one stage is required".into()));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            let label = format!("stages[{i}]");
            if stage.repeats == 0 {
                return Err(fail(&label, "repeats must be at least 1".into()));
            }
            if i > 0 && stage.out_channels < self.stages[i - 1].out_channels {
                return Err(fail(
                    &label,
                    format!(
                        "stage width {} decreases from previous width {}",
                        stage.out_channels,
                        self.stages[i - 1].out_channels
                    ),
                ));
            }
        }
        if self.head.classes < 2 {
            return Err(fail("head", "a classifier needs at least 2 classes".into()));
        }
        // Validating resolved blocks covers the width constraints of
        // the chosen kind.
        for (label, block) in self.block_specs() {
            block.validate(&label)?;
        }
        Ok(())
    }

    /// Channel count entering the first block.
    pub fn entry_channels(&self) -> usize {
        match &self.stem {
            Some(stem) => stem.out_channels,
            None => self.input.channels,
        }
    }

    /// Resolves the stage list into one [`BlockSpec`] per block,
    /// labeled `stage<i>.block<j>` with both indices starting at
    /// zero-based `block` and one-based `stage`.
    pub fn block_specs(&self) -> Vec<(String, BlockSpec)> {
        let mut blocks = Vec::new();
        let mut in_channels = self.entry_channels();
        for (i, stage) in self.stages.iter().enumerate() {
            for j in 0..stage.repeats {
                blocks.push((
                    format!("stage{}.block{j}", i + 1),
                    BlockSpec {
                        kind: self.kind,
                        neighborhood: self.neighborhood,
                        in_channels,
                        out_channels: stage.out_channels,
                        downsample: stage.downsample && j == 0,
                    },
                ));
                in_channels = stage.out_channels;
            }
        }
        blocks
    }

    /// Depth in the usual counting: weighted layers only, so the stem
    /// convolution, three convolutions per block, and the final fully
    /// connected layer.
    pub fn depth(&self) -> usize {
        let stem = if self.stem.is_some() { 1 } else { 0 };
        let blocks: usize = self.stages.iter().map(|s| s.repeats).sum();
        stem + 3 * blocks + 1
    }

    /// Trainable parameter count, computed from the description alone
    /// without building anything.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        if let Some(stem) = &self.stem {
            // 7x7 convolution weights plus batchnorm gamma and beta.
            total += self.input.channels * stem.out_channels * 49 + 2 * stem.out_channels;
        }
        for (_, block) in self.block_specs() {
            total += crate::blocks::block_param_count(&block);
        }
        let last = self.stages.last().map_or(0, |s| s.out_channels);
        total += last * self.head.classes + self.head.classes;
        total
    }
}

/// Builds a runnable network from a validated spec. The seed fixes
/// every parameter draw.
pub fn build<S: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Network<S>> {
    spec.validate()?;
    let mut b: GraphBuilder<S> = GraphBuilder::new(seed);
    let x = b.input();
    let mut stem_out = None;
    let mut cur = x;
    if let Some(stem) = &spec.stem {
        let c = b.conv(
            "stem.conv",
            ConvSpec::new(spec.input.channels, stem.out_channels, 7, 2),
            cur,
        );
        let bn = b.batchnorm("stem.bn", stem.out_channels, c);
        let r = b.relu("stem.relu", bn);
        cur = b.maxpool("stem.pool", r);
        stem_out = Some(cur);
    }
    let mut stage_outs = Vec::new();
    let mut blocks = spec.block_specs().into_iter();
    for stage in &spec.stages {
        for _ in 0..stage.repeats {
            let (label, block) = blocks.next().expect("one resolved block per repeat");
            cur = append_block(&mut b, &label, &block, cur)?;
        }
        stage_outs.push(cur);
    }
    let gap = b.global_avgpool("head.gap", cur);
    let out = b.linear(
        "head.fc",
        LinearSpec {
            in_features: spec.stages.last().unwrap().out_channels,
            out_features: spec.head.classes,
        },
        gap,
    );
    let mut net = b.finish(out);
    net.landmarks.stem_out = stem_out;
    net.landmarks.stage_outs = stage_outs;
    Ok(net)
}

const IMAGENET_INPUT: InputSpec = InputSpec {
    channels: 3,
    height: 224,
    width: 224,
};

fn imagenet_spec(
    name: String,
    kind: BlockKind,
    neighborhood: NeighborhoodKind,
    stages: &[(usize, usize, bool)],
) -> NetworkSpec {
    NetworkSpec {
        name,
        kind,
        neighborhood,
        input: IMAGENET_INPUT,
        stem: Some(StemSpec { out_channels: 64 }),
        stages: stages
            .iter()
            .map(|&(out_channels, repeats, downsample)| StageSpec {
                out_channels,
                repeats,
                downsample,
            })
            .collect(),
        head: HeadSpec { classes: 1000 },
    }
}

const DEEP_STAGES: [(usize, usize, bool); 4] = [
    (256, 3, false),
    (512, 4, true),
    (1024, 23, true),
    (2048, 3, true),
];

const FLAT_STAGES: [(usize, usize, bool); 4] = [
    (256, 1, false),
    (512, 1, true),
    (1024, 8, true),
    (2048, 1, true),
];

/// The three shift families, keyed by name prefix.
const FAMILIES: [(&str, BlockKind); 3] = [
    ("shift101", BlockKind::SingleShift),
    ("multishift101", BlockKind::MultiShift),
    ("flattened35", BlockKind::FlattenedMultiShift),
];

/// Canonical builtin names, in catalog order.
pub fn builtin_names() -> Vec<String> {
    let mut names = vec!["resnet101".to_string()];
    for (family, _) in FAMILIES {
        for kind in NeighborhoodKind::ALL {
            names.push(format!("{family}-{}", kind.token()));
        }
    }
    names
}

/// Looks up a builtin architecture. Family names without a
/// neighborhood suffix (`shift101`, `multishift101`, `flattened35`)
/// are aliases for the 4-connected variant.
pub fn builtin_spec(name: &str) -> Result<NetworkSpec> {
    if name == "resnet101" {
        return Ok(imagenet_spec(
            name.to_string(),
            BlockKind::Bottleneck,
            NeighborhoodKind::OriginOnly,
            &DEEP_STAGES,
        ));
    }
    for (family, kind) in FAMILIES {
        let resolved = if name == family {
            format!("{family}-4c")
        } else {
            name.to_string()
        };
        if let Some(suffix) = resolved.strip_prefix(family).and_then(|r| r.strip_prefix('-')) {
            if let Ok(neighborhood) = NeighborhoodKind::parse_token(suffix) {
                let stages: &[(usize, usize, bool)] = if kind == BlockKind::FlattenedMultiShift {
                    &FLAT_STAGES
                } else {
                    &DEEP_STAGES
                };
                return Ok(imagenet_spec(resolved, kind, neighborhood, stages));
            }
        }
    }
    Err(Error::UnknownSpec {
        name: name.to_string(),
        known: builtin_names().join(", "),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;
    use crate::tensor::{Shape, Tensor};

    fn toy_spec() -> NetworkSpec {
        NetworkSpec {
            name: "toy".into(),
            kind: BlockKind::MultiShift,
            neighborhood: NeighborhoodKind::FourConnected,
            input: InputSpec {
                channels: 3,
                height: 16,
                width: 16,
            },
            stem: None,
            stages: vec![
                StageSpec {
                    out_channels: 16,
                    repeats: 1,
                    downsample: false,
                },
                StageSpec {
                    out_channels: 32,
                    repeats: 2,
                    downsample: true,
                },
            ],
            head: HeadSpec { classes: 4 },
        }
    }

    #[test]
    fn builtin_catalog_has_one_resnet_and_fifteen_shift_variants() {
        let names = builtin_names();
        assert_eq!(names.len(), 16);
        assert_eq!(names[0], "resnet101");
        for name in &names {
            let spec = builtin_spec(name).unwrap();
            assert_eq!(&spec.name, name);
            spec.validate().unwrap();
        }
    }

    #[test]
    fn family_aliases_resolve_to_four_connected() {
        for (alias, canon) in [
            ("shift101", "shift101-4c"),
            ("multishift101", "multishift101-4c"),
            ("flattened35", "flattened35-4c"),
        ] {
            let spec = builtin_spec(alias).unwrap();
            assert_eq!(spec, builtin_spec(canon).unwrap());
        }
    }

    #[test]
    fn unknown_names_list_the_catalog() {
        let err = builtin_spec("resnet50").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("resnet50"));
        assert!(msg.contains("resnet101"));
        assert!(msg.contains("flattened35-none"));
    }

    #[test]
    fn depth_counts_weighted_layers() {
        assert_eq!(builtin_spec("resnet101").unwrap().depth(), 101);
        assert_eq!(builtin_spec("shift101-4c").unwrap().depth(), 101);
        assert_eq!(builtin_spec("flattened35-4c").unwrap().depth(), 35);
        // No stem: one fewer weighted layer.
        assert_eq!(toy_spec().depth(), 3 * 3 + 1);
    }

    #[test]
    fn block_resolution_chains_channels_and_downsamples_once_per_stage() {
        let spec = builtin_spec("resnet101").unwrap();
        let blocks = spec.block_specs();
        assert_eq!(blocks.len(), 33);
        assert_eq!(blocks[0].0, "stage1.block0");
        assert_eq!(blocks[0].1.in_channels, 64);
        assert_eq!(blocks[0].1.out_channels, 256);
        assert!(!blocks[0].1.downsample);
        assert!(blocks[0].1.needs_projection());
        // Later blocks of stage 1 are identity-shortcut 256 -> 256.
        assert!(!blocks[1].1.needs_projection());
        // First block of stage 2 downsamples; the rest do not.
        let s2_first = blocks.iter().find(|(l, _)| l == "stage2.block0").unwrap();
        assert!(s2_first.1.downsample);
        assert_eq!(s2_first.1.in_channels, 256);
        assert_eq!(s2_first.1.out_channels, 512);
        let s2_second = blocks.iter().find(|(l, _)| l == "stage2.block1").unwrap();
        assert!(!s2_second.1.downsample);
        // The deepest stage has 23 blocks.
        let s3_count = blocks.iter().filter(|(l, _)| l.starts_with("stage3.")).count();
        assert_eq!(s3_count, 23);
    }

    #[test]
    fn decreasing_stage_width_is_rejected_by_name() {
        let mut spec = toy_spec();
        spec.stages[1].out_channels = 8;
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("stages[1]"), "{err}");
    }

    #[test]
    fn head_requires_two_classes() {
        let mut spec = toy_spec();
        spec.head.classes = 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn toy_network_forward_shapes_match_the_spec() {
        let spec = toy_spec();
        let mut net: Network<f32> = build(&spec, 0).unwrap();
        let x = Tensor::zeros(Shape::new(2, 3, 16, 16)).unwrap();
        let trace = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(trace.output().shape(), Shape::new(2, 4, 1, 1));
        let stages = &net.landmarks.stage_outs;
        assert_eq!(stages.len(), 2);
        assert_eq!(trace.value(stages[0]).shape(), Shape::new(2, 16, 16, 16));
        assert_eq!(trace.value(stages[1]).shape(), Shape::new(2, 32, 8, 8));
    }

    #[test]
    fn stem_halves_resolution_twice() {
        let spec = NetworkSpec {
            name: "stem-check".into(),
            kind: BlockKind::Bottleneck,
            neighborhood: NeighborhoodKind::OriginOnly,
            input: InputSpec {
                channels: 3,
                height: 64,
                width: 64,
            },
            stem: Some(StemSpec { out_channels: 8 }),
            stages: vec![StageSpec {
                out_channels: 16,
                repeats: 1,
                downsample: false,
            }],
            head: HeadSpec { classes: 10 },
        };
        let mut net: Network<f32> = build(&spec, 0).unwrap();
        let x = Tensor::zeros(Shape::new(1, 3, 64, 64)).unwrap();
        let trace = net.forward(&x, Mode::Eval).unwrap();
        let stem_out = net.landmarks.stem_out.unwrap();
        // 64 -> 32 (stride-2 conv) -> 16 (stride-2 pool).
        assert_eq!(trace.value(stem_out).shape(), Shape::new(1, 8, 16, 16));
    }

    #[test]
    fn static_param_count_matches_the_built_registry() {
        for spec in [toy_spec(), builtin_spec("flattened35-8c").unwrap()] {
            // Shrink the builtin so building it stays cheap: fewer
            // repeats is still every layer shape.
            let mut spec = spec;
            for stage in &mut spec.stages {
                stage.repeats = stage.repeats.min(2);
            }
            let net: Network<f32> = build(&spec, 0).unwrap();
            assert_eq!(spec.param_count(), net.params.total_len(), "{}", spec.name);
        }
    }

    #[test]
    fn same_seed_same_network_output() {
        let spec = toy_spec();
        let x = Tensor::from_vec(
            Shape::new(1, 3, 16, 16),
            (0..3 * 256).map(|i| (i as f32 * 0.37).sin()).collect(),
        )
        .unwrap();
        let mut a: Network<f32> = build(&spec, 9).unwrap();
        let mut b: Network<f32> = build(&spec, 9).unwrap();
        let ya = a.forward(&x, Mode::Eval).unwrap().output().clone();
        let yb = b.forward(&x, Mode::Eval).unwrap().output().clone();
        assert_eq!(ya, yb);
        let mut c: Network<f32> = build(&spec, 10).unwrap();
        let yc = c.forward(&x, Mode::Eval).unwrap().output().clone();
        assert_ne!(ya, yc);
    }
}
