//! Shared inputs for the benchmarks.

use attrib_core::model::RegionMeanOracle;
use attrib_core::{BoundingBox, Image};

/// A dim textured image with a bright square in the middle third.
pub fn scene(side: usize) -> Image {
    let (lo, hi) = (side / 3, 2 * side / 3);
    Image::from_fn(side, side, |r, c| {
        if (lo..hi).contains(&r) && (lo..hi).contains(&c) {
            [0.9, 0.85, 0.8]
        } else {
            let t = ((r * 7 + c * 3) % 11) as f64 / 40.0;
            [0.1 + t, 0.15, 0.1 + t / 2.0]
        }
    })
}

pub fn scene_oracle(side: usize) -> RegionMeanOracle {
    let (lo, hi) = (side / 3, 2 * side / 3 - 1);
    RegionMeanOracle::new(BoundingBox::new(lo, lo, hi, hi).expect("valid box"))
}
