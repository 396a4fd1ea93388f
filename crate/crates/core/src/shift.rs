//! Spatial shift layers.
//!
//! A shift moves each channel's spatial plane by a small integer
//! offset `(dy, dx)` and fills the vacated border with zeros. It has
//! no parameters and costs no multiplies; combined with pointwise
//! convolutions it replaces the spatial aggregation a kxk kernel
//! would provide.
//!
//! A layer's offsets come from one of five neighborhoods:
//!
//! * 8-connected: the full 3x3 square of offsets, origin included.
//! * 4-connected: origin plus the four axis neighbors (a cross).
//! * The same two with the origin removed.
//! * Origin only, which makes the layer an identity.
//!
//! Channels are split across the neighborhood's offsets by a fixed
//! partition rule: with `M` channels and `K` offsets in canonical
//! order, channel `c < K * (M / K)` belongs to the contiguous group
//! `c / (M / K)`, and the `M % K` leftover channels stay unmoved at
//! offset `(0, 0)` even when the neighborhood itself excludes the
//! origin. The rule is a pure function of `M` and the neighborhood,
//! so two layers built for the same width always agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row offset, column offset. Positive `dy` moves content downward,
/// positive `dx` moves it rightward.
pub type Offset = (i32, i32);

/// The five offset neighborhoods a shift layer can draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeighborhoodKind {
    #[serde(rename = "8c")]
    EightConnected,
    #[serde(rename = "4c")]
    FourConnected,
    #[serde(rename = "8c-no")]
    EightConnectedNoOrigin,
    #[serde(rename = "4c-no")]
    FourConnectedNoOrigin,
    #[serde(rename = "none")]
    OriginOnly,
}

impl NeighborhoodKind {
    pub const ALL: [NeighborhoodKind; 5] = [
        NeighborhoodKind::EightConnected,
        NeighborhoodKind::FourConnected,
        NeighborhoodKind::EightConnectedNoOrigin,
        NeighborhoodKind::FourConnectedNoOrigin,
        NeighborhoodKind::OriginOnly,
    ];

    /// Short token used by config files and command lines.
    pub fn token(&self) -> &'static str {
        match self {
            NeighborhoodKind::EightConnected => "8c",
            NeighborhoodKind::FourConnected => "4c",
            NeighborhoodKind::EightConnectedNoOrigin => "8c-no",
            NeighborhoodKind::FourConnectedNoOrigin => "4c-no",
            NeighborhoodKind::OriginOnly => "none",
        }
    }

    pub fn parse_token(s: &str) -> Result<NeighborhoodKind> {
        NeighborhoodKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = NeighborhoodKind::ALL.iter().map(|k| k.token()).collect();
                Error::Config(format!(
                    "unknown neighborhood `{s}`; valid kinds: {}",
                    known.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for NeighborhoodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// A neighborhood kind together with its offsets in canonical order.
///
/// The canonical order is row-major over `(dy, dx)`: the 8-connected
/// list runs (-1,-1), (-1,0), (-1,1), (0,-1), (0,0), (0,1), (1,-1),
/// (1,0), (1,1); the 4-connected list runs (-1,0), (0,-1), (0,0),
/// (0,1), (1,0); the no-origin variants drop (0,0) and keep the rest
/// in place.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhood {
    kind: NeighborhoodKind,
    offsets: Vec<Offset>,
}

impl Neighborhood {
    pub fn kind(&self) -> NeighborhoodKind {
        self.kind
    }

    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Builds the canonical offset list for `kind`.
pub fn build_neighborhood(kind: NeighborhoodKind) -> Neighborhood {
    let offsets: Vec<Offset> = match kind {
        NeighborhoodKind::EightConnected => (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| (dy, dx)))
            .collect(),
        NeighborhoodKind::EightConnectedNoOrigin => (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| (dy, dx)))
            .filter(|&o| o != (0, 0))
            .collect(),
        NeighborhoodKind::FourConnected => vec![(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)],
        NeighborhoodKind::FourConnectedNoOrigin => vec![(-1, 0), (0, -1), (0, 1), (1, 0)],
        NeighborhoodKind::OriginOnly => vec![(0, 0)],
    };
    Neighborhood { kind, offsets }
}

/// Per-channel offset assignment for a shift layer of a given width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftPlan {
    channels: usize,
    neighborhood: Neighborhood,
    assignment: Vec<Offset>,
}

impl ShiftPlan {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn neighborhood(&self) -> &Neighborhood {
        &self.neighborhood
    }

    /// Offset applied to each channel, indexed by channel.
    pub fn assignment(&self) -> &[Offset] {
        &self.assignment
    }
}

/// Builds the channel partition for `channels` channels over `kind`.
pub fn build_plan(channels: usize, kind: NeighborhoodKind) -> Result<ShiftPlan> {
    if channels == 0 {
        return Err(Error::InvalidShape(
            "shift plan needs at least one channel".into(),
        ));
    }
    let neighborhood = build_neighborhood(kind);
    let k = neighborhood.len();
    let group = channels / k;
    let mut assignment = Vec::with_capacity(channels);
    for &offset in neighborhood.offsets() {
        for _ in 0..group {
            assignment.push(offset);
        }
    }
    // Channels that do not fill a whole group stay unmoved, even for
    // the no-origin neighborhoods.
    while assignment.len() < channels {
        assignment.push((0, 0));
    }
    Ok(ShiftPlan {
        channels,
        neighborhood,
        assignment,
    })
}

/// Applies the shift: `out[n, c, y, x] = in[n, c, y - dy, x - dx]`
/// where the source is in bounds, else zero.
pub fn shift_forward<S: Scalar>(x: &Tensor<S>, plan: &ShiftPlan) -> Result<Tensor<S>> {
    apply(x, plan, false)
}

/// Transpose of [`shift_forward`]: the same gather with every
/// offset negated. For any tensors of matching shape,
/// `<shift_forward(x), y> == <x, shift_adjoint(y)>`.
pub fn shift_adjoint<S: Scalar>(g: &Tensor<S>, plan: &ShiftPlan) -> Result<Tensor<S>> {
    apply(g, plan, true)
}

fn apply<S: Scalar>(x: &Tensor<S>, plan: &ShiftPlan, negate: bool) -> Result<Tensor<S>> {
    let shape = x.shape();
    if shape.c != plan.channels {
        return Err(Error::ShapeMismatch(format!(
            "shift plan covers {} channels but input has {}",
            plan.channels, shape.c
        )));
    }
    let mut out = Tensor::zeros(shape)?;
    let (h, w) = (shape.h as i64, shape.w as i64);
    for n in 0..shape.n {
        for c in 0..shape.c {
            let (mut dy, mut dx) = plan.assignment[c];
            if negate {
                dy = -dy;
                dx = -dx;
            }
            let (dy, dx) = (dy as i64, dx as i64);
            for y in 0..h {
                let sy = y - dy;
                if sy < 0 || sy >= h {
                    continue;
                }
                // Copy the in-bounds span of the source row in one go.
                let x_lo = 0.max(dx);
                let x_hi = w.min(w + dx);
                if x_lo >= x_hi {
                    continue;
                }
                let src_base = shape.index(n, c, sy as usize, (x_lo - dx) as usize);
                let dst_base = shape.index(n, c, y as usize, x_lo as usize);
                let len = (x_hi - x_lo) as usize;
                let src = &x.data()[src_base..src_base + len];
                out.data_mut()[dst_base..dst_base + len].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}
