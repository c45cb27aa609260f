use crate::math::V3;

/// Row-major image, row 0 at the top, interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Image {
        Image { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, channels: usize, v: f64) -> Image {
        Image { width, height, channels, data: vec![v; width * height * channels] }
    }

    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y) + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y) + c;
        self.data[i] = v;
    }

    pub fn rgb(&self, x: usize, y: usize) -> V3 {
        let i = self.idx(x, y);
        V3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set_rgb(&mut self, x: usize, y: usize, v: V3) {
        let i = self.idx(x, y);
        self.data[i] = v.x;
        self.data[i + 1] = v.y;
        self.data[i + 2] = v.z;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.idx(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }
}

/// Peak signal-to-noise ratio in dB for images with values in `[0, 1]`,
/// restricted to pixels where `mask` is true when given.
pub fn psnr(a: &Image, b: &Image, mask: Option<&[bool]>) -> f64 {
    assert_eq!((a.width, a.height, a.channels), (b.width, b.height, b.channels));
    let mut se = 0.0;
    let mut n = 0usize;
    for p in 0..a.width * a.height {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        for c in 0..a.channels {
            let d = a.data[p * a.channels + c] - b.data[p * a.channels + c];
            se += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return f64::INFINITY;
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_known_error() {
        let a = Image::filled(4, 4, 3, 0.5);
        let b = Image::filled(4, 4, 3, 0.6);
        assert!((psnr(&a, &b, None) - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, None), f64::INFINITY);
    }
}
