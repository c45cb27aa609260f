use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for one pixel of one image at one iteration.
pub fn pixel_rng(seed: u64, image: usize, px: usize, py: usize, iteration: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed) ^ iteration.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(((image as u64) << 42) ^ ((py as u64) << 21) ^ px as u64);
    rng
}

/// Stream derived from a seed and a purpose tag.
pub fn tagged_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(tag)))
}
