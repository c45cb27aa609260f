//! Equirectangular environment maps: bilinear lookup and importance sampling.

use std::f64::consts::{PI, TAU};

use crate::image::Image;
use crate::math::{dir_to_sphere, V3};

/// Up to four texels and bilinear weights; unused slots have weight 0.
pub type Taps = [(u32, f64); 4];

/// HDR radiance on an `height x width` equirectangular grid. Row 0 is the
/// zenith (+z), column 0 starts at azimuth 0 (+x) and runs towards +y.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMap {
    pub width: usize,
    pub height: usize,
    /// Three values per texel, rows top to bottom.
    pub data: Vec<f64>,
}

impl EnvMap {
    pub fn new(width: usize, height: usize) -> EnvMap {
        assert!(width >= 1 && height >= 1, "empty environment map");
        EnvMap { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn uniform(width: usize, height: usize, radiance: V3) -> EnvMap {
        let mut m = EnvMap::new(width, height);
        for t in 0..width * height {
            m.set(t, radiance);
        }
        m
    }

    pub fn from_image(img: &Image) -> EnvMap {
        assert_eq!(img.channels, 3, "environment maps are RGB");
        EnvMap { width: img.width, height: img.height, data: img.data.clone() }
    }

    pub fn to_image(&self) -> Image {
        Image { width: self.width, height: self.height, channels: 3, data: self.data.clone() }
    }

    pub fn n_texels(&self) -> usize {
        self.width * self.height
    }

    pub fn texel(&self, t: usize) -> V3 {
        V3::new(self.data[3 * t], self.data[3 * t + 1], self.data[3 * t + 2])
    }

    pub fn set(&mut self, t: usize, v: V3) {
        self.data[3 * t..3 * t + 3].copy_from_slice(&v.to_array());
    }

    pub fn scaled(&self, k: f64) -> EnvMap {
        EnvMap { data: self.data.iter().map(|v| v * k).collect(), ..self.clone() }
    }

    /// Shift by whole columns, i.e. a rotation about +z by `cols * 2pi / width`.
    pub fn rotated_columns(&self, cols: usize) -> EnvMap {
        let mut out = EnvMap::new(self.width, self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r * self.width + (c + cols) % self.width, self.texel(r * self.width + c));
            }
        }
        out
    }

    /// Texel containing direction `d`.
    pub fn texel_of(&self, d: V3) -> usize {
        let (theta, phi) = dir_to_sphere(d);
        let r = ((theta / PI * self.height as f64) as usize).min(self.height - 1);
        let c = ((phi / TAU * self.width as f64) as usize).min(self.width - 1);
        r * self.width + c
    }

    /// Solid angle of the texels in row `r`.
    pub fn row_solid_angle(&self, r: usize) -> f64 {
        let t0 = r as f64 * PI / self.height as f64;
        let t1 = (r + 1) as f64 * PI / self.height as f64;
        TAU / self.width as f64 * (t0.cos() - t1.cos())
    }

    /// Bilinear taps between texel centres; azimuth wraps, rows clamp at the poles.
    pub fn taps(&self, d: V3) -> Taps {
        let (theta, phi) = dir_to_sphere(d);
        let fx = phi / TAU * self.width as f64 - 0.5;
        let fy = theta / PI * self.height as f64 - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let w = self.width as i64;
        let h = self.height as i64;
        let col = |x: i64| x.rem_euclid(w) as u32;
        let row = |y: i64| y.clamp(0, h - 1) as u32;
        let (c0, c1) = (col(x0 as i64), col(x0 as i64 + 1));
        let (r0, r1) = (row(y0 as i64), row(y0 as i64 + 1));
        let wd = self.width as u32;
        [
            (r0 * wd + c0, (1.0 - tx) * (1.0 - ty)),
            (r0 * wd + c1, tx * (1.0 - ty)),
            (r1 * wd + c0, (1.0 - tx) * ty),
            (r1 * wd + c1, tx * ty),
        ]
    }

    pub fn lookup(&self, d: V3) -> V3 {
        self.taps(d).iter().fold(V3::ZERO, |acc, &(t, w)| acc + self.texel(t as usize) * w)
    }

    /// Mean radiance over the sphere (solid-angle weighted).
    pub fn mean(&self) -> V3 {
        let mut acc = V3::ZERO;
        for r in 0..self.height {
            let om = self.row_solid_angle(r);
            for c in 0..self.width {
                acc = acc + self.texel(r * self.width + c) * om;
            }
        }
        acc * (1.0 / (4.0 * PI))
    }
}

/// Piecewise-constant sampling density proportional to the mean of the
/// bilinear luminance over each texel, so a lone bright texel also covers
/// the neighbours its lookup bleeds into.
#[derive(Debug, Clone)]
pub struct EnvTable {
    width: usize,
    height: usize,
    /// Marginal CDF over rows, `height + 1` entries.
    row_cdf: Vec<f64>,
    /// Conditional CDF over columns per row, `width + 1` entries each.
    col_cdf: Vec<f64>,
    /// Solid-angle density inside each texel.
    density: Vec<f64>,
}

fn cdf_of(w: &[f64]) -> (Vec<f64>, f64) {
    let mut c = Vec::with_capacity(w.len() + 1);
    let mut acc = 0.0;
    c.push(0.0);
    for &x in w {
        acc += x;
        c.push(acc);
    }
    if acc > 0.0 {
        for v in &mut c {
            *v /= acc;
        }
        *c.last_mut().unwrap() = 1.0;
    }
    (c, acc)
}

/// Index `i` with `cdf[i] <= u < cdf[i+1]`, skipping empty intervals.
fn find(cdf: &[f64], u: f64) -> usize {
    let n = cdf.len() - 1;
    let i = cdf.partition_point(|&c| c <= u).saturating_sub(1).min(n - 1);
    // walk forward off zero-width intervals
    let mut j = i;
    while j + 1 < n && cdf[j + 1] <= cdf[j] {
        j += 1;
    }
    if cdf[j + 1] > cdf[j] {
        j
    } else {
        (0..n).rev().find(|&k| cdf[k + 1] > cdf[k]).unwrap_or(i)
    }
}

impl EnvTable {
    pub fn build(map: &EnvMap) -> EnvTable {
        let (w, h) = (map.width, map.height);
        let raw: Vec<f64> = (0..w * h).map(|t| map.texel(t).luminance().max(0.0)).collect();
        // 1D mean of a linear interpolant over one cell: 3/4 own, 1/8 each side
        const K: [f64; 3] = [0.125, 0.75, 0.125];
        let mut lum = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (i, kr) in K.iter().enumerate() {
                    let rr = (r + i).saturating_sub(1).min(h - 1);
                    for (j, kc) in K.iter().enumerate() {
                        let cc = (c + w + j - 1) % w;
                        acc += kr * kc * raw[rr * w + cc];
                    }
                }
                lum[r * w + c] = acc;
            }
        }
        let mut row_w = vec![0.0; h];
        let mut col_cdf = Vec::with_capacity(h * (w + 1));
        let mut total = 0.0;
        for r in 0..h {
            let om = map.row_solid_angle(r);
            let weights: Vec<f64> = lum[r * w..(r + 1) * w].iter().map(|l| l * om).collect();
            let (c, s) = cdf_of(&weights);
            col_cdf.extend(c);
            row_w[r] = s;
            total += s;
        }
        let (row_cdf, _) = cdf_of(&row_w);
        let density = if total > 0.0 { lum.iter().map(|l| l / total).collect() } else { vec![0.0; w * h] };
        EnvTable { width: w, height: h, row_cdf, col_cdf, density }
    }

    /// True when the map carries no energy and cannot be sampled.
    pub fn is_empty(&self) -> bool {
        self.row_cdf.last().is_none_or(|&c| c <= 0.0)
    }

    pub fn row_cdf(&self) -> &[f64] {
        &self.row_cdf
    }

    pub fn col_cdf(&self, r: usize) -> &[f64] {
        &self.col_cdf[r * (self.width + 1)..(r + 1) * (self.width + 1)]
    }

    pub fn texel_density(&self, t: usize) -> f64 {
        self.density[t]
    }

    /// Density (per steradian) of [`sample`](Self::sample) at `d`.
    pub fn pdf(&self, d: V3) -> f64 {
        let (theta, phi) = dir_to_sphere(d);
        let r = ((theta / PI * self.height as f64) as usize).min(self.height - 1);
        let c = ((phi / TAU * self.width as f64) as usize).min(self.width - 1);
        self.density[r * self.width + c]
    }

    /// Choose a texel from `u`, then a uniform solid-angle point inside it
    /// using the rescaled remainders of `u`.
    pub fn sample(&self, u: [f64; 2]) -> Option<(V3, f64)> {
        if self.is_empty() {
            return None;
        }
        let r = find(&self.row_cdf, u[0]);
        let cc = self.col_cdf(r);
        let c = find(cc, u[1]);
        let ru = ((u[0] - self.row_cdf[r]) / (self.row_cdf[r + 1] - self.row_cdf[r])).clamp(0.0, 1.0);
        let cu = ((u[1] - cc[c]) / (cc[c + 1] - cc[c])).clamp(0.0, 1.0);
        let (t0, t1) = (r as f64 * PI / self.height as f64, (r + 1) as f64 * PI / self.height as f64);
        let z = t0.cos() + ru * (t1.cos() - t0.cos());
        let phi = (c as f64 + cu) * TAU / self.width as f64;
        let s = (1.0 - z * z).max(0.0).sqrt();
        let d = V3::new(s * phi.cos(), s * phi.sin(), z);
        Some((d, self.density[r * self.width + c]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_density_is_one_over_four_pi() {
        let t = EnvTable::build(&EnvMap::uniform(16, 8, V3::splat(1.0)));
        for i in 0..50 {
            let (d, p) = t.sample([(i as f64 + 0.5) / 50.0, (i as f64 * 0.37).fract()]).unwrap();
            assert!((p - 1.0 / (4.0 * PI)).abs() < 1e-12);
            assert!((t.pdf(d) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn single_texel_samples_stay_in_its_bilinear_support() {
        let mut m = EnvMap::new(16, 8);
        m.set(3 * 16 + 5, V3::splat(7.0));
        let t = EnvTable::build(&m);
        let mut own = 0;
        for i in 0..400 {
            let u = [(i as f64 * 0.618).fract(), (i as f64 * 0.414).fract()];
            let (d, p) = t.sample(u).unwrap();
            let k = m.texel_of(d);
            assert!((k / 16).abs_diff(3) <= 1 && (k % 16).abs_diff(5) <= 1, "texel {k}");
            assert!(p > 0.0);
            own += (k == 3 * 16 + 5) as usize;
        }
        // the centre cell holds 9/16 of the mass up to solid-angle weighting
        assert!((150..300).contains(&own), "{own}");
    }

    #[test]
    fn sampling_is_unbiased_for_bilinear_lookup() {
        let mut m = EnvMap::uniform(16, 8, V3::splat(0.1));
        m.set(2 * 16 + 9, V3::splat(50.0));
        let t = EnvTable::build(&m);
        let mut rng = crate::rng::tagged_rng(4, 0);
        let n = 200_000;
        let mut est = 0.0;
        for _ in 0..n {
            use rand::Rng;
            let (d, p) = t.sample([rng.random(), rng.random()]).unwrap();
            est += m.lookup(d).x / p;
        }
        est /= n as f64;
        // reference: midpoint quadrature of the bilinear lookup over the sphere
        let (nt, np) = (400, 800);
        let mut exact = 0.0;
        for i in 0..nt {
            let th = (i as f64 + 0.5) * PI / nt as f64;
            for j in 0..np {
                let ph = (j as f64 + 0.5) * TAU / np as f64;
                exact += m.lookup(crate::math::sphere_dir(th, ph)).x * th.sin() * (PI / nt as f64) * (TAU / np as f64);
            }
        }
        assert!((est - exact).abs() < 0.01 * exact, "{est} vs {exact}");
    }

    #[test]
    fn zero_map_is_empty() {
        assert!(EnvTable::build(&EnvMap::new(4, 2)).is_empty());
    }

    #[test]
    fn lookup_at_texel_centre_is_exact() {
        let mut m = EnvMap::new(8, 4);
        for t in 0..32 {
            m.set(t, V3::splat(t as f64));
        }
        let d = crate::nfield::texel_direction(2, 5, 4, 8);
        assert!((m.lookup(d) - V3::splat(21.0)).length() < 1e-9);
        // azimuth wraps between the last and the first column
        let d = crate::math::sphere_dir((1.5) * PI / 4.0, TAU - 1e-9);
        assert!((m.lookup(d).x - 0.5 * (8.0 + 15.0)).abs() < 1e-6);
    }
}
