//! Static cost analysis: parameters, FLOPs, receptive fields.
//!
//! [`count`] walks a [`NetworkSpec`] without building a network and
//! produces one row per layer that carries state or work. Counting
//! conventions, applied per input image (batch 1):
//!
//! * A convolution or fully connected layer costs one FLOP per
//!   multiply-accumulate: `out_elems * in_channels * kh * kw`.
//! * Shifts, ReLUs, and residual adds cost zero; shifts also hold
//!   zero parameters. That is the accounting under which shift
//!   networks exist in the first place.
//! * Batchnorm (2 per output element) and pooling (kernel area per
//!   output element) are itemized only when switched on in
//!   [`CostOptions`]; both default to off, matching the counting
//!   used for headline figures.
//!
//! The traversal tracks spatial extents with its own arithmetic,
//! deliberately not calling into the layer implementations, so tests
//! can cross-check the two against each other. It also rejects specs
//! whose declared input resolution cannot flow through the network
//! (odd extents reaching a 2x2 average pool, grids shrinking to
//! nothing).
//!
//! [`block_receptive_field`] computes which input offsets can reach
//! one output position of a single block, at unit stride, by
//! propagating offset sets through the block's dataflow: each layer
//! dilates the set by its own offsets (Minkowski sum) and skip
//! connections merge sets (union).

use std::collections::BTreeSet;

use crate::blocks::{BlockKind, BlockSpec};
use crate::error::{Error, Result};
use crate::netspec::NetworkSpec;
use crate::shift::{build_neighborhood, NeighborhoodKind};

/// Which optional costs to itemize.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostOptions {
    pub include_bn_flops: bool,
    pub include_pool_flops: bool,
}

/// One counted layer. `out_*` describe the layer's output for a
/// single image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub out_channels: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub params: u64,
    pub flops: u64,
}

/// The full accounting for one spec.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub total_params: u64,
    pub total_flops: u64,
    pub per_layer: Vec<LayerCost>,
}

/// Walks the spec and counts every layer.
pub fn count(spec: &NetworkSpec, opts: &CostOptions) -> Result<CostReport> {
    spec.validate()?;
    let mut rows: Vec<LayerCost> = Vec::new();
    let mut c = spec.input.channels;
    let mut h = spec.input.height;
    let mut w = spec.input.width;

    if let Some(stem) = &spec.stem {
        (h, w) = conv_extent(h, w, 7, 2, "stem.conv")?;
        let out_c = stem.out_channels;
        rows.push(conv_row("stem.conv", c, out_c, 7, h, w));
        rows.push(bn_row("stem.bn", out_c, h, w, opts));
        c = out_c;
        (h, w) = pool_extent(h, w, 3, 2, 1, "stem.pool")?;
        rows.push(pool_row("stem.pool", c, h, w, 9, opts));
    }

    for (label, block) in spec.block_specs() {
        count_block(&label, &block, c, &mut h, &mut w, opts, &mut rows)?;
        c = block.out_channels;
    }

    rows.push(pool_row("head.gap", c, 1, 1, h * w, opts));
    let classes = spec.head.classes;
    rows.push(LayerCost {
        name: "head.fc".into(),
        out_channels: classes,
        out_h: 1,
        out_w: 1,
        params: (c * classes + classes) as u64,
        flops: (c * classes) as u64,
    });

    Ok(CostReport {
        total_params: rows.iter().map(|r| r.params).sum(),
        total_flops: rows.iter().map(|r| r.flops).sum(),
        per_layer: rows,
    })
}

/// Counts one block, mirroring the builder's layer order and names.
/// `(h, w)` is updated to the block's output extents.
fn count_block(
    prefix: &str,
    block: &BlockSpec,
    in_c: usize,
    h: &mut usize,
    w: &mut usize,
    opts: &CostOptions,
    rows: &mut Vec<LayerCost>,
) -> Result<()> {
    let mid = block.mid_channels();
    let out_c = block.out_channels;
    let name = |suffix: &str| format!("{prefix}.{suffix}");
    let (bh, bw) = (*h, *w);
    let (mut mh, mut mw) = (bh, bw);

    match block.kind {
        BlockKind::Bottleneck => {
            rows.push(conv_row(&name("conv1"), in_c, mid, 1, mh, mw));
            rows.push(bn_row(&name("bn1"), mid, mh, mw, opts));
            let stride = if block.downsample { 2 } else { 1 };
            (mh, mw) = conv_extent(mh, mw, 3, stride, &name("conv2"))?;
            rows.push(conv_row(&name("conv2"), mid, mid, 3, mh, mw));
            rows.push(bn_row(&name("bn2"), mid, mh, mw, opts));
            rows.push(conv_row(&name("conv3"), mid, out_c, 1, mh, mw));
            rows.push(bn_row(&name("bn3"), out_c, mh, mw, opts));
        }
        BlockKind::SingleShift | BlockKind::MultiShift | BlockKind::FlattenedMultiShift => {
            if block.kind != BlockKind::SingleShift {
                rows.push(shift_row(&name("shift1"), in_c, mh, mw));
            }
            rows.push(conv_row(&name("conv1"), in_c, mid, 1, mh, mw));
            rows.push(bn_row(&name("bn1"), mid, mh, mw, opts));
            if block.downsample {
                (mh, mw) = avgpool_extent(mh, mw, &name("pool"))?;
                rows.push(pool_row(&name("pool"), mid, mh, mw, 4, opts));
            }
            let shift2 = if block.kind == BlockKind::SingleShift {
                name("shift")
            } else {
                name("shift2")
            };
            rows.push(shift_row(&shift2, mid, mh, mw));
            rows.push(conv_row(&name("conv2"), mid, mid, 1, mh, mw));
            rows.push(bn_row(&name("bn2"), mid, mh, mw, opts));
            if block.kind != BlockKind::SingleShift {
                rows.push(shift_row(&name("shift3"), mid, mh, mw));
            }
            rows.push(conv_row(&name("conv3"), mid, out_c, 1, mh, mw));
            rows.push(bn_row(&name("bn3"), out_c, mh, mw, opts));
        }
    }

    if block.needs_projection() {
        match block.kind {
            BlockKind::Bottleneck => {
                let stride = if block.downsample { 2 } else { 1 };
                let (sh, sw) = conv_extent(bh, bw, 1, stride, &name("shortcut.conv"))?;
                debug_assert_eq!((sh, sw), (mh, mw));
                rows.push(conv_row(&name("shortcut.conv"), in_c, out_c, 1, sh, sw));
                rows.push(bn_row(&name("shortcut.bn"), out_c, sh, sw, opts));
            }
            _ => {
                let (mut sh, mut sw) = (bh, bw);
                if block.downsample {
                    (sh, sw) = avgpool_extent(sh, sw, &name("shortcut.pool"))?;
                    rows.push(pool_row(&name("shortcut.pool"), in_c, sh, sw, 4, opts));
                }
                debug_assert_eq!((sh, sw), (mh, mw));
                rows.push(conv_row(&name("shortcut.conv"), in_c, out_c, 1, sh, sw));
                rows.push(bn_row(&name("shortcut.bn"), out_c, sh, sw, opts));
            }
        }
    }

    *h = mh;
    *w = mw;
    Ok(())
}

fn conv_row(name: &str, in_c: usize, out_c: usize, k: usize, oh: usize, ow: usize) -> LayerCost {
    let params = (out_c * in_c * k * k) as u64;
    let flops = (out_c * oh * ow) as u64 * (in_c * k * k) as u64;
    LayerCost {
        name: name.into(),
        out_channels: out_c,
        out_h: oh,
        out_w: ow,
        params,
        flops,
    }
}

fn bn_row(name: &str, c: usize, h: usize, w: usize, opts: &CostOptions) -> LayerCost {
    LayerCost {
        name: name.into(),
        out_channels: c,
        out_h: h,
        out_w: w,
        params: 2 * c as u64,
        flops: if opts.include_bn_flops {
            2 * (c * h * w) as u64
        } else {
            0
        },
    }
}

fn pool_row(name: &str, c: usize, oh: usize, ow: usize, area: usize, opts: &CostOptions) -> LayerCost {
    LayerCost {
        name: name.into(),
        out_channels: c,
        out_h: oh,
        out_w: ow,
        params: 0,
        flops: if opts.include_pool_flops {
            (c * oh * ow * area) as u64
        } else {
            0
        },
    }
}

fn shift_row(name: &str, c: usize, h: usize, w: usize) -> LayerCost {
    LayerCost {
        name: name.into(),
        out_channels: c,
        out_h: h,
        out_w: w,
        params: 0,
        flops: 0,
    }
}

/// Output extents of a same-padded convolution. The arithmetic here
/// is intentionally separate from the layer implementations.
fn conv_extent(h: usize, w: usize, k: usize, stride: usize, at: &str) -> Result<(usize, usize)> {
    let p = k / 2;
    if h + 2 * p < k || w + 2 * p < k {
        return Err(Error::Resolution(format!(
            "{at}: {h}x{w} input is too small for a {k}x{k} kernel"
        )));
    }
    Ok(((h + 2 * p - k) / stride + 1, (w + 2 * p - k) / stride + 1))
}

fn pool_extent(
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    at: &str,
) -> Result<(usize, usize)> {
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::Resolution(format!(
            "{at}: {h}x{w} input is too small for a {k}x{k} pool"
        )));
    }
    Ok(((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1))
}

fn avgpool_extent(h: usize, w: usize, at: &str) -> Result<(usize, usize)> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) || h == 0 || w == 0 {
        return Err(Error::Resolution(format!(
            "{at}: 2x2 average pool needs even extents, got {h}x{w}"
        )));
    }
    Ok((h / 2, w / 2))
}

/// A set of integer spatial offsets, ordered for stable display.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OffsetSet {
    points: BTreeSet<(i32, i32)>,
}

impl OffsetSet {
    pub fn origin() -> OffsetSet {
        OffsetSet::from_points([(0, 0)])
    }

    pub fn from_points(points: impl IntoIterator<Item = (i32, i32)>) -> OffsetSet {
        OffsetSet {
            points: points.into_iter().collect(),
        }
    }

    pub fn union(&self, other: &OffsetSet) -> OffsetSet {
        OffsetSet {
            points: self.points.union(&other.points).copied().collect(),
        }
    }

    /// Minkowski sum: every way of following an offset of `self` by
    /// an offset of `other`.
    pub fn minkowski(&self, other: &OffsetSet) -> OffsetSet {
        let mut points = BTreeSet::new();
        for &(ay, ax) in &self.points {
            for &(by, bx) in &other.points {
                points.insert((ay + by, ax + bx));
            }
        }
        OffsetSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: (i32, i32)) -> bool {
        self.points.contains(&p)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        self.points.iter().copied()
    }

    pub fn is_subset(&self, other: &OffsetSet) -> bool {
        self.points.is_subset(&other.points)
    }

    /// True when the set maps to itself under point reflection.
    pub fn is_point_symmetric(&self) -> bool {
        self.points.iter().all(|&(y, x)| self.points.contains(&(-y, -x)))
    }

    /// Largest coordinate magnitude; sizes the display grid.
    pub fn radius(&self) -> i32 {
        self.points
            .iter()
            .map(|&(y, x)| y.abs().max(x.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Renders the set on a square grid centered at the origin:
    /// `#` marks a member offset, `o` marks the origin when it is a
    /// member, `.` fills the rest.
    pub fn ascii_grid(&self) -> String {
        let r = self.radius();
        let mut out = String::new();
        for y in -r..=r {
            for x in -r..=r {
                out.push(if (y, x) == (0, 0) && self.contains((0, 0)) {
                    'o'
                } else if self.contains((y, x)) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

fn kernel_offsets(k: usize) -> OffsetSet {
    let r = (k / 2) as i32;
    OffsetSet::from_points((-r..=r).flat_map(|y| (-r..=r).map(move |x| (y, x))))
}

fn neighborhood_offsets(kind: NeighborhoodKind) -> OffsetSet {
    OffsetSet::from_points(build_neighborhood(kind).offsets().iter().copied())
}

/// The set of input offsets that can influence one output position
/// of a single block at unit stride (no downsampling). The set is
/// structural: it assumes the block is wide enough that every shift
/// offset has at least one channel.
pub fn block_receptive_field(kind: BlockKind, neighborhood: NeighborhoodKind) -> OffsetSet {
    let n = neighborhood_offsets(neighborhood);
    let origin = OffsetSet::origin();
    let main = match kind {
        BlockKind::Bottleneck => kernel_offsets(3),
        BlockKind::SingleShift => n,
        BlockKind::MultiShift | BlockKind::FlattenedMultiShift => {
            // Dataflow through the block: shift, 1x1 conv, shift,
            // 1x1 conv with an inner skip around this pair, shift,
            // 1x1 conv. The 1x1 convolutions add nothing spatially.
            let r1 = origin.minkowski(&n);
            let r2 = r1.minkowski(&n);
            let merged = r2.union(&r1);
            merged.minkowski(&n)
        }
    };
    // The shortcut sees the input directly.
    main.union(&origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;
    use crate::netspec::{build, builtin_spec, HeadSpec, InputSpec, StageSpec, StemSpec};
    use crate::tensor::{Shape, Tensor};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Hand-verified totals for the builtin catalog's three headline
    // architectures, batch of one image. These are frozen: a change
    // here is a change to the accounting and must be deliberate.
    const RESNET101: (u64, u64) = (44_549_160, 7_801_405_440);
    const SHIFT101: (u64, u64) = (25_576_488, 4_410_310_656);
    const FLATTENED35: (u64, u64) = (40_831_272, 7_724_335_104);

    #[test]
    fn headline_architectures_hit_frozen_totals() {
        let opts = CostOptions::default();
        for (name, want) in [
            ("resnet101", RESNET101),
            ("shift101-4c", SHIFT101),
            ("flattened35-4c", FLATTENED35),
        ] {
            let report = count(&builtin_spec(name).unwrap(), &opts).unwrap();
            assert_eq!((report.total_params, report.total_flops), want, "{name}");
        }
    }

    #[test]
    fn multi_shift_costs_match_single_shift_exactly() {
        // Extra shifts are free, so the two families share every
        // conv shape and therefore every cost number.
        let opts = CostOptions::default();
        let single = count(&builtin_spec("shift101-4c").unwrap(), &opts).unwrap();
        let multi = count(&builtin_spec("multishift101-4c").unwrap(), &opts).unwrap();
        assert_eq!(single.total_params, multi.total_params);
        assert_eq!(single.total_flops, multi.total_flops);
    }

    #[test]
    fn totals_are_the_sum_of_the_rows() {
        let report = count(&builtin_spec("shift101-8c").unwrap(), &CostOptions::default()).unwrap();
        assert_eq!(
            report.total_params,
            report.per_layer.iter().map(|r| r.params).sum::<u64>()
        );
        assert_eq!(
            report.total_flops,
            report.per_layer.iter().map(|r| r.flops).sum::<u64>()
        );
    }

    #[test]
    fn cost_is_invariant_across_neighborhoods() {
        // Shift offsets change where planes move, never how much
        // anything costs.
        for family in ["shift101", "multishift101", "flattened35"] {
            let base = count(
                &builtin_spec(&format!("{family}-8c")).unwrap(),
                &CostOptions::default(),
            )
            .unwrap();
            for kind in NeighborhoodKind::ALL {
                let other = count(
                    &builtin_spec(&format!("{family}-{}", kind.token())).unwrap(),
                    &CostOptions::default(),
                )
                .unwrap();
                assert_eq!(base, other, "{family}-{}", kind.token());
            }
        }
    }

    #[test]
    fn params_agree_with_the_spec_count_and_the_built_registry() {
        let spec = NetworkSpec {
            name: "cost-toy".into(),
            kind: crate::blocks::BlockKind::MultiShift,
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
                    repeats: 2,
                    downsample: false,
                },
                StageSpec {
                    out_channels: 32,
                    repeats: 1,
                    downsample: true,
                },
            ],
            head: HeadSpec { classes: 5 },
        };
        let report = count(&spec, &CostOptions::default()).unwrap();
        assert_eq!(report.total_params as usize, spec.param_count());
        let net: crate::graph::Network<f32> = build(&spec, 0).unwrap();
        assert_eq!(report.total_params as usize, net.params.total_len());
    }

    #[test]
    fn traced_shapes_match_counted_shapes() {
        // Forward a real network and compare every counted row's
        // output shape against the actual tensor flowing through the
        // graph node of the same name.
        let spec = NetworkSpec {
            name: "trace-check".into(),
            kind: crate::blocks::BlockKind::SingleShift,
            neighborhood: NeighborhoodKind::EightConnected,
            input: InputSpec {
                channels: 3,
                height: 32,
                width: 32,
            },
            stem: Some(StemSpec { out_channels: 8 }),
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
            head: HeadSpec { classes: 7 },
        };
        let report = count(&spec, &CostOptions::default()).unwrap();
        let mut net: crate::graph::Network<f32> = build(&spec, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_vec(
            Shape::new(1, 3, 32, 32),
            (0..3 * 32 * 32).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let trace = net.forward(&x, Mode::Eval).unwrap();
        let mut checked = 0;
        for row in &report.per_layer {
            let node = net
                .nodes()
                .iter()
                .position(|n| n.name == row.name)
                .unwrap_or_else(|| panic!("no node named {}", row.name));
            let got = trace.value(node).shape();
            assert_eq!(
                (row.out_channels, row.out_h, row.out_w),
                (got.c, got.h, got.w),
                "{}",
                row.name
            );
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn optional_flops_only_add_cost() {
        let spec = builtin_spec("resnet101").unwrap();
        let bare = count(&spec, &CostOptions::default()).unwrap();
        let full = count(
            &spec,
            &CostOptions {
                include_bn_flops: true,
                include_pool_flops: true,
            },
        )
        .unwrap();
        assert!(full.total_flops > bare.total_flops);
        assert_eq!(full.total_params, bare.total_params);
        // Itemized extras stay small next to the convolutions.
        assert!(full.total_flops < bare.total_flops + bare.total_flops / 10);
    }

    #[test]
    fn illegal_resolutions_are_rejected_with_a_location() {
        // 15x15 reaches the downsampling stage's average pool with
        // odd extents.
        let spec = NetworkSpec {
            name: "odd".into(),
            kind: crate::blocks::BlockKind::SingleShift,
            neighborhood: NeighborhoodKind::FourConnected,
            input: InputSpec {
                channels: 3,
                height: 15,
                width: 15,
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
                    repeats: 1,
                    downsample: true,
                },
            ],
            head: HeadSpec { classes: 2 },
        };
        let err = count(&spec, &CostOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stage2.block0"), "{msg}");
        assert!(msg.contains("15x15"), "{msg}");
    }

    // Receptive fields.

    /// Independent oracle: enumerate every input-to-output path of
    /// the block by hand and union the Minkowski sums of the offset
    /// sets along each path. This is a different computation from
    /// the dataflow propagation in `block_receptive_field`.
    fn oracle_rf(kind: BlockKind, n: NeighborhoodKind) -> OffsetSet {
        let n = neighborhood_offsets(n);
        let origin = OffsetSet::origin();
        let square = kernel_offsets(3);
        let mut union = OffsetSet::default();
        let all_paths: Vec<Vec<&OffsetSet>> = match kind {
            // input -> conv1 -> conv2(3x3) -> conv3 -> out, plus the
            // shortcut.
            BlockKind::Bottleneck => vec![vec![&square], vec![]],
            // input -> conv1 -> shift -> conv2 -> conv3, plus the
            // shortcut.
            BlockKind::SingleShift => vec![vec![&n], vec![]],
            // Main: shift1 shift2 shift3. Inner skip bypasses
            // shift2. Shortcut bypasses everything.
            BlockKind::MultiShift | BlockKind::FlattenedMultiShift => {
                vec![vec![&n, &n, &n], vec![&n, &n], vec![]]
            }
        };
        for path in all_paths {
            let mut acc = origin.clone();
            for step in path {
                acc = acc.minkowski(step);
            }
            union = union.union(&acc);
        }
        union
    }

    #[test]
    fn dataflow_field_matches_path_enumeration_for_all_combinations() {
        for kind in BlockKind::ALL {
            for n in NeighborhoodKind::ALL {
                assert_eq!(
                    block_receptive_field(kind, n),
                    oracle_rf(kind, n),
                    "{} {}",
                    kind.token(),
                    n.token()
                );
            }
        }
    }

    #[test]
    fn frozen_field_sizes() {
        use BlockKind::*;
        use NeighborhoodKind::*;
        // (kind, neighborhood, member count)
        for (kind, n, len) in [
            (Bottleneck, OriginOnly, 9),
            (SingleShift, FourConnected, 5),
            (SingleShift, EightConnected, 9),
            (MultiShift, FourConnected, 25),
            (MultiShift, EightConnected, 49),
            (FlattenedMultiShift, FourConnected, 25),
            // Removing the origin from the neighborhood does not
            // shrink the field: the skips restore full coverage.
            (MultiShift, FourConnectedNoOrigin, 25),
            (MultiShift, EightConnectedNoOrigin, 49),
            (SingleShift, OriginOnly, 1),
            (MultiShift, OriginOnly, 1),
        ] {
            assert_eq!(
                block_receptive_field(kind, n).len(),
                len,
                "{} {}",
                kind.token(),
                n.token()
            );
        }
    }

    #[test]
    fn four_connected_multi_shift_grid_is_a_diamond() {
        let rf = block_receptive_field(BlockKind::MultiShift, NeighborhoodKind::FourConnected);
        let want = "\
...#...
..###..
.#####.
###o###
.#####.
..###..
...#...
";
        assert_eq!(rf.ascii_grid(), want);
    }

    #[test]
    fn field_invariants_hold_everywhere() {
        for kind in BlockKind::ALL {
            for n in NeighborhoodKind::ALL {
                let rf = block_receptive_field(kind, n);
                assert!(rf.contains((0, 0)), "shortcut keeps the origin reachable");
                assert!(rf.is_point_symmetric(), "{} {}", kind.token(), n.token());
            }
            let four = block_receptive_field(kind, NeighborhoodKind::FourConnected);
            let eight = block_receptive_field(kind, NeighborhoodKind::EightConnected);
            assert!(four.is_subset(&eight));
            if kind.uses_shift() {
                assert!(four.len() < eight.len(), "{}", kind.token());
            }
        }
        // Depth grows reach: a multi-shift block sees strictly
        // further than a single-shift block on the same neighborhood.
        let single = block_receptive_field(BlockKind::SingleShift, NeighborhoodKind::FourConnected);
        let multi = block_receptive_field(BlockKind::MultiShift, NeighborhoodKind::FourConnected);
        assert!(single.is_subset(&multi));
        assert!(single.len() < multi.len());
    }

    #[test]
    fn minkowski_against_direct_enumeration() {
        // Random small sets: compare the set implementation against
        // a quadratic loop into a fresh container.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a: Vec<(i32, i32)> = (0..rng.gen_range(1..6))
                .map(|_| (rng.gen_range(-3..=3), rng.gen_range(-3..=3)))
                .collect();
            let b: Vec<(i32, i32)> = (0..rng.gen_range(1..6))
                .map(|_| (rng.gen_range(-3..=3), rng.gen_range(-3..=3)))
                .collect();
            let want: BTreeSet<(i32, i32)> = a
                .iter()
                .flat_map(|&(ay, ax)| b.iter().map(move |&(by, bx)| (ay + by, ax + bx)))
                .collect();
            let got = OffsetSet::from_points(a).minkowski(&OffsetSet::from_points(b));
            assert_eq!(got, OffsetSet::from_points(want));
        }
    }
}
