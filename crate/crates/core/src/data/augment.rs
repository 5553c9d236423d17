use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;

/// A geometric transform: optional flips followed by `rotations` quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub hflip: bool,
    pub vflip: bool,
    pub rotations: u8,
}

impl Augmentation {
    pub fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            hflip: rng.gen_bool(0.5),
            vflip: rng.gen_bool(0.5),
            rotations: rng.gen_range(0..4),
        }
    }

    pub fn apply(&self, s: &Sample) -> Sample {
        let mut out = s.clone();
        if self.hflip {
            out = hflip(&out);
        }
        if self.vflip {
            out = vflip(&out);
        }
        for _ in 0..self.rotations {
            out = rot90(&out);
        }
        out
    }
}

pub fn augment(s: &Sample, seed: u64) -> Sample {
    Augmentation::draw(seed).apply(s)
}

fn remap(s: &Sample, width: usize, height: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Sample {
    let mut image = Vec::with_capacity(s.image.len());
    let mut mask = Vec::with_capacity(s.mask.len());
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = src(x, y);
            let i = sy * s.width + sx;
            image.extend_from_slice(&s.image[3 * i..3 * i + 3]);
            mask.push(s.mask[i]);
        }
    }
    Sample {
        id: s.id.clone(),
        width,
        height,
        image,
        mask,
    }
}

pub fn hflip(s: &Sample) -> Sample {
    remap(s, s.width, s.height, |x, y| (s.width - 1 - x, y))
}

pub fn vflip(s: &Sample) -> Sample {
    remap(s, s.width, s.height, |x, y| (x, s.height - 1 - y))
}

/// Quarter turn clockwise.
pub fn rot90(s: &Sample) -> Sample {
    remap(s, s.height, s.width, |x, y| (y, s.height - 1 - x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Sample {
        Sample {
            id: "r".into(),
            width: 3,
            height: 2,
            image: (0..18).collect(),
            mask: vec![0, 1, 2, 3, 4, 5],
        }
    }

    #[test]
    fn involutions_and_cycles() {
        let s = sample();
        assert_eq!(hflip(&hflip(&s)), s);
        assert_eq!(vflip(&vflip(&s)), s);
        let r = rot90(&s);
        assert_eq!((r.width, r.height), (2, 3));
        // clockwise: top row of the result is the left column read bottom-up
        assert_eq!(r.mask, vec![3, 0, 4, 1, 5, 2]);
        assert_eq!(rot90(&rot90(&rot90(&r))), s);
    }

    #[test]
    fn seed_fixes_choice() {
        assert_eq!(Augmentation::draw(9), Augmentation::draw(9));
        let s = sample();
        assert_eq!(augment(&s, 4), augment(&s, 4));
    }
}
