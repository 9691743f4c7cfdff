//! Quarter-turn rotations about the z (depth) axis.

use serde::{Deserialize, Serialize};

use crate::volume::Grid;
use crate::{PuirError, Result};

/// `quarter_turns * 90` degrees counter-clockwise in the `(h, w)` plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RotationTransform(u8);

impl RotationTransform {
    pub const IDENTITY: Self = Self(0);
    pub const ALL: [Self; 4] = [Self(0), Self(1), Self(2), Self(3)];

    pub fn new(quarter_turns: u8) -> Result<Self> {
        if quarter_turns > 3 {
            return Err(PuirError::precondition(format!(
                "quarter_turns must be in 0..=3, got {quarter_turns}"
            )));
        }
        Ok(Self(quarter_turns))
    }

    pub fn quarter_turns(self) -> u8 {
        self.0
    }

    pub fn degrees(self) -> u32 {
        90 * self.0 as u32
    }

    pub fn inverse(self) -> Self {
        Self((4 - self.0) % 4)
    }

    /// Rotation equal to applying `self` and then `other`.
    pub fn then(self, other: Self) -> Self {
        Self((self.0 + other.0) % 4)
    }
}

impl TryFrom<u8> for RotationTransform {
    type Error = PuirError;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RotationTransform> for u8 {
    fn from(r: RotationTransform) -> u8 {
        r.0
    }
}

/// Alias of [`RotationTransform::inverse`].
pub fn invert_rotation(r: RotationTransform) -> RotationTransform {
    r.inverse()
}

/// Exact index permutation; one turn maps `out[d, h, w] = in[d, w, H-1-h]`.
pub fn apply_rotation<T: Copy>(v: &Grid<T>, r: RotationTransform) -> Result<Grid<T>> {
    let [_, h, w] = v.shape();
    if h != w {
        return Err(PuirError::precondition(format!(
            "rotation needs H == W, got shape {:?}",
            v.shape()
        )));
    }
    let data = puir_autograd::kernels::rotate_planes(v.data(), h, r.quarter_turns());
    Grid::new(v.shape(), data)
}
