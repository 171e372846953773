use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Counter-clockwise rotation by a multiple of 90 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Rotation(u16);

impl Rotation {
    pub const R0: Rotation = Rotation(0);
    pub const R90: Rotation = Rotation(90);
    pub const R180: Rotation = Rotation(180);
    pub const R270: Rotation = Rotation(270);
    pub const ALL: [Rotation; 4] = [Self::R0, Self::R90, Self::R180, Self::R270];

    /// Any multiple of 90, normalized into [0, 360).
    pub fn new(degrees: i64) -> Result<Self> {
        if degrees % 90 != 0 {
            return Err(Error::BadRotation(degrees));
        }
        Ok(Rotation(degrees.rem_euclid(360) as u16))
    }

    pub fn degrees(self) -> u16 {
        self.0
    }

    fn quarter_turns(self) -> u16 {
        self.0 / 90
    }

    pub fn compose(self, other: Rotation) -> Rotation {
        Rotation((self.0 + other.0) % 360)
    }

    pub fn inverse(self) -> Rotation {
        Rotation((360 - self.0) % 360)
    }
}

impl fmt::Display for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u16(self.0)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let deg = i64::deserialize(d)?;
        Rotation::new(deg).map_err(serde::de::Error::custom)
    }
}

/// Rotates a `(channels, n, n)` image by exact index permutation.
pub fn rotate(image: &[f64], shape: [usize; 3], r: Rotation) -> Result<Vec<f64>> {
    let [c, h, w] = shape;
    if h != w {
        return Err(Error::NotSquare { height: h, width: w });
    }
    if image.len() != c * h * w {
        return Err(Error::shape("image", c * h * w, image.len()));
    }
    let n = h;
    let mut out = vec![0.0; image.len()];
    for ch in 0..c {
        let src = &image[ch * n * n..(ch + 1) * n * n];
        let dst = &mut out[ch * n * n..(ch + 1) * n * n];
        for row in 0..n {
            for col in 0..n {
                let (sr, sc) = match r.quarter_turns() {
                    0 => (row, col),
                    1 => (col, n - 1 - row),
                    2 => (n - 1 - row, n - 1 - col),
                    _ => (n - 1 - col, row),
                };
                dst[row * n + col] = src[sr * n + sc];
            }
        }
    }
    Ok(out)
}
