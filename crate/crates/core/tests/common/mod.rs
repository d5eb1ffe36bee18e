#![allow(dead_code, clippy::needless_range_loop)]

pub mod oracles;

use iqa_ambiguity::degrade::{degrade_image, DistortionKind};
use iqa_ambiguity::imgio::{make_fixture, FixtureKind, PixelImage};

/// Deterministic (reference, distorted) pairs cycling through distortion kinds.
pub fn fixture_pairs(count: usize, size: usize) -> Vec<(PixelImage, PixelImage)> {
    (0..count)
        .map(|i| {
            let src = make_fixture(FixtureKind::NaturalProxy, size, size, 1000 + i as u64).unwrap();
            let kind = DistortionKind::ALL[i % 4];
            let level = 5 + (i * 7) % 40;
            let test = degrade_image(&src, &kind.with_default_schedule(), level, 100, i as u64).unwrap();
            (src, test)
        })
        .collect()
}
