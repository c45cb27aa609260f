//! Neural parameter fields: SDF, normal, material, radiance, sky, exposure
//! and per-class albedo.

mod checkpoint;
mod network;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use network::{Activation, GridTaps, HashGrid, HashGridConfig, Mlp, Network};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gradcore::{Ctx, DiffFn, ParameterStore, PlainCtx, Scalar, Vjp};
use crate::image::Image;
use crate::math::{sphere_dir, Aabb, Vec3, V3};

/// Fixed registry of semantic class ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticClass {
    Void = 0,
    Road = 1,
    Sidewalk = 2,
    Building = 3,
    Wall = 4,
    Sky = 5,
    Vegetation = 6,
    Object = 7,
}

impl SemanticClass {
    pub const COUNT: usize = 8;
    pub const ALL: [SemanticClass; 8] = [
        SemanticClass::Void,
        SemanticClass::Road,
        SemanticClass::Sidewalk,
        SemanticClass::Building,
        SemanticClass::Wall,
        SemanticClass::Sky,
        SemanticClass::Vegetation,
        SemanticClass::Object,
    ];
    pub const DEFAULT_ACTIVE: [SemanticClass; 4] =
        [SemanticClass::Road, SemanticClass::Sidewalk, SemanticClass::Building, SemanticClass::Wall];

    pub fn from_id(id: u8) -> Option<SemanticClass> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }
}

/// Analytic shape added to the SDF network output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SdfInit {
    #[default]
    None,
    Sphere { center: [f64; 3], radius: f64 },
    /// Horizontal plane `z = height`, positive above.
    Plane { height: f64 },
}

impl SdfInit {
    pub fn eval(&self, x: V3) -> f64 {
        match *self {
            SdfInit::None => 0.0,
            SdfInit::Sphere { center, radius } => (x - V3::from_array(center)).length() - radius,
            SdfInit::Plane { height } => x.z - height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub sky_width: usize,
    /// Linear layers in the sky network.
    pub sky_layers: usize,
    pub sky_octaves: usize,
    pub dir_octaves: usize,
    pub sdf_init: SdfInit,
    pub inv_kappa_init: f64,
    /// Step of the central-difference SDF gradient.
    pub grad_eps: f64,
    /// Initial sky radiance.
    pub sky_init: f64,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            grid: HashGridConfig::default(),
            hidden: 64,
            hidden_layers: 1,
            sky_width: 256,
            sky_layers: 4,
            sky_octaves: 6,
            dir_octaves: 2,
            sdf_init: SdfInit::None,
            inv_kappa_init: 0.3,
            grad_eps: 5e-3,
            sky_init: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub fields: FieldConfig,
    pub bounds: Aabb,
    pub n_illum: usize,
    pub n_images: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FieldError {
    #[error("illumination index {0} out of range (M = {1})")]
    IllumOutOfRange(usize, usize),
}

/// `[d, sin(2^k pi d), cos(2^k pi d)]` for `k < octaves`.
pub fn freq_encode(d: V3, octaves: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(&d.to_array());
    for k in 0..octaves {
        let f = std::f64::consts::PI * (1u64 << k) as f64;
        for a in d.to_array() {
            out.push((f * a).sin());
        }
        for a in d.to_array() {
            out.push((f * a).cos());
        }
    }
}

/// Direction of the centre of texel `(row, col)` of an `h x w` equirectangular map.
pub fn texel_direction(row: usize, col: usize, h: usize, w: usize) -> V3 {
    let theta = (row as f64 + 0.5) * std::f64::consts::PI / h as f64;
    let phi = (col as f64 + 0.5) * 2.0 * std::f64::consts::PI / w as f64;
    sphere_dir(theta, phi)
}

const SKY_PRE_CLAMP: f64 = 30.0;

/// All trainable fields plus their parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParameterStore,
    pub sdf: Network,
    pub normal: Network,
    pub material: Network,
    pub radiance: Network,
    pub skies: Vec<Network>,
    exposure: usize,
    albedo: usize,
    kappa: usize,
}

fn hidden_dims(input: usize, hidden: usize, layers: usize, out: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend(std::iter::repeat_n(hidden, layers.max(1)));
    d.push(out);
    d
}

impl Model {
    pub fn new(spec: ModelSpec) -> Model {
        assert!(spec.n_illum >= 1, "need at least one illumination condition");
        let cfg = spec.fields.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParameterStore::new();

        let grid_net = |store: &mut ParameterStore, name: &str, extra: usize, out: usize, act, scale, rng: &mut ChaCha8Rng| {
            let grid = HashGrid::new(store, &format!("{name}.grid"), cfg.grid, rng);
            let dims = hidden_dims(grid.output_dim() + 3 + extra, cfg.hidden, cfg.hidden_layers, out);
            let mlp = Mlp::new(store, &format!("{name}.mlp"), &dims, act, scale, rng);
            Network { grid: Some(grid), mlp }
        };
        let sdf = grid_net(&mut store, "sdf", 0, 1, Activation::Softplus, 0.1, &mut rng);
        let normal = grid_net(&mut store, "normal", 0, 3, Activation::Relu, 1.0, &mut rng);
        let material = grid_net(&mut store, "material", 0, 5, Activation::Relu, 1.0, &mut rng);
        let dir_dim = 3 + 6 * cfg.dir_octaves;
        let radiance = grid_net(&mut store, "radiance", dir_dim, 3, Activation::Relu, 1.0, &mut rng);

        let sky_in = 3 + 6 * cfg.sky_octaves;
        let skies = (0..spec.n_illum)
            .map(|m| {
                let dims = hidden_dims(sky_in, cfg.sky_width, cfg.sky_layers.max(2) - 1, 3);
                let mlp = Mlp::new(&mut store, &format!("sky{m}.mlp"), &dims, Activation::Relu, 0.1, &mut rng);
                let b = mlp.output_bias();
                for c in 0..3 {
                    store.values_mut()[b + c] = cfg.sky_init.ln();
                }
                Network { grid: None, mlp }
            })
            .collect();

        let exposure = store.add_segment("exposure", &[spec.n_images.max(1), 3], |_| 0.0);
        let albedo = store.add_segment("albedo", &[SemanticClass::COUNT, 3], |_| 0.0);
        let kappa = store.add_segment("kappa", &[1], |_| (1.0 / cfg.inv_kappa_init).ln());
        Model { spec, store, sdf, normal, material, radiance, skies, exposure, albedo, kappa }
    }

    pub fn bounds(&self) -> &Aabb {
        &self.spec.bounds
    }

    pub fn n_illum(&self) -> usize {
        self.skies.len()
    }

    /// Normalized coordinates in `[0,1]^3`, flagged when `x` was outside the bounds.
    pub fn normalize(&self, x: V3) -> ([f64; 3], bool) {
        let (p, clamped) = self.spec.bounds.clamp_point(x);
        let lo = self.spec.bounds.lo();
        let e = self.spec.bounds.extent();
        ([(p.x - lo.x) / e.x, (p.y - lo.y) / e.y, (p.z - lo.z) / e.z], clamped)
    }

    pub fn plain(&self) -> PlainCtx<'_> {
        PlainCtx::new(&self.store)
    }

    pub fn sdf<C: Ctx>(&self, c: &C, x: V3) -> (C::S, bool) {
        let (u, clamped) = self.normalize(x);
        let mut out = Vec::with_capacity(1);
        c.apply(&self.sdf, &u, &mut out);
        (out[0] + self.spec.fields.sdf_init.eval(x), clamped)
    }

    pub fn sdf_value(&self, x: V3) -> f64 {
        self.sdf(&self.plain(), x).0
    }

    /// Central-difference spatial gradient of the SDF.
    pub fn sdf_grad<C: Ctx>(&self, c: &C, x: V3) -> Vec3<C::S> {
        let h = self.spec.fields.grad_eps;
        let mut g = [c.constant(0.0); 3];
        for (a, ga) in g.iter_mut().enumerate() {
            let mut e = V3::ZERO.to_array();
            e[a] = h;
            let e = V3::from_array(e);
            let fp = self.sdf(c, x + e).0;
            let fm = self.sdf(c, x - e).0;
            *ga = (fp - fm) / (2.0 * h);
        }
        Vec3::from_array(g)
    }

    /// `-grad f / |grad f|`; `+z` and a flag when the gradient vanishes.
    pub fn sdf_normal<C: Ctx>(&self, c: &C, x: V3) -> (Vec3<C::S>, bool) {
        normalize_or_z(c, -self.sdf_grad(c, x), 1e-8)
    }

    /// Normalized output of the normal network.
    pub fn normal_field<C: Ctx>(&self, c: &C, x: V3) -> (Vec3<C::S>, bool) {
        let raw = self.normal_raw(c, x);
        normalize_or_z(c, raw, 1e-12)
    }

    pub fn normal_raw<C: Ctx>(&self, c: &C, x: V3) -> Vec3<C::S> {
        let (u, _) = self.normalize(x);
        let mut out = Vec::with_capacity(3);
        c.apply(&self.normal, &u, &mut out);
        Vec3::new(out[0], out[1], out[2])
    }

    /// `(k_d, [metallic, roughness])`.
    pub fn material<C: Ctx>(&self, c: &C, x: V3) -> (Vec3<C::S>, [C::S; 2]) {
        let (u, _) = self.normalize(x);
        let mut out = Vec::with_capacity(5);
        c.apply(&self.material, &u, &mut out);
        let s: Vec<C::S> = out.iter().map(|v| v.sigmoid()).collect();
        (Vec3::new(s[0], s[1], s[2]), [s[3], s[4]])
    }

    pub fn radiance<C: Ctx>(&self, c: &C, x: V3, d: V3) -> Vec3<C::S> {
        let (u, _) = self.normalize(x);
        let mut input = u.to_vec();
        freq_encode(d, self.spec.fields.dir_octaves, &mut input);
        let mut out = Vec::with_capacity(3);
        c.apply(&self.radiance, &input, &mut out);
        Vec3::new(out[0].sigmoid(), out[1].sigmoid(), out[2].sigmoid())
    }

    pub fn sky<C: Ctx>(&self, c: &C, d: V3, m: usize) -> Result<Vec3<C::S>, FieldError> {
        let net = self.skies.get(m).ok_or(FieldError::IllumOutOfRange(m, self.skies.len()))?;
        let mut input = Vec::with_capacity(net.mlp.input_dim());
        freq_encode(d, self.spec.fields.sky_octaves, &mut input);
        let mut out = Vec::with_capacity(3);
        c.apply(net, &input, &mut out);
        Ok(Vec3::new(sky_act(out[0]), sky_act(out[1]), sky_act(out[2])))
    }

    pub fn sky_value(&self, d: V3, m: usize) -> Result<V3, FieldError> {
        self.sky(&self.plain(), d, m)
    }

    pub fn kappa<C: Ctx>(&self, c: &C) -> C::S {
        c.param(self.kappa).exp()
    }

    pub fn kappa_value(&self) -> f64 {
        self.store.values()[self.kappa].exp()
    }

    pub fn set_kappa(&mut self, kappa: f64) {
        self.store.values_mut()[self.kappa] = kappa.ln();
    }

    pub fn exposure_offset(&self) -> usize {
        self.exposure
    }

    /// Normalized exposure of image `i`: raw `exp(p_i)` divided by the
    /// per-channel mean over all images.
    pub fn exposure<C: Ctx>(&self, c: &C, i: usize) -> Vec3<C::S> {
        let n = self.spec.n_images.max(1);
        let mut out = [c.constant(0.0); 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let raw: Vec<C::S> = (0..n).map(|j| c.param(self.exposure + 3 * j + ch).exp()).collect();
            let mean = raw.iter().skip(1).fold(raw[0], |a, &b| a + b) / n as f64;
            *o = raw[i] / mean;
        }
        Vec3::from_array(out)
    }

    pub fn raw_exposures(&self) -> Vec<V3> {
        let v = self.store.values();
        (0..self.spec.n_images.max(1))
            .map(|j| V3::new(v[self.exposure + 3 * j].exp(), v[self.exposure + 3 * j + 1].exp(), v[self.exposure + 3 * j + 2].exp()))
            .collect()
    }

    pub fn albedo_offset(&self) -> usize {
        self.albedo
    }

    pub fn class_albedo<C: Ctx>(&self, c: &C, class: SemanticClass) -> Vec3<C::S> {
        let o = self.albedo + 3 * class.id() as usize;
        Vec3::new(c.param(o).sigmoid(), c.param(o + 1).sigmoid(), c.param(o + 2).sigmoid())
    }

    /// Evaluate the sky at every texel centre of an `h x w` equirectangular map.
    pub fn export_envmap(&self, m: usize, h: usize, w: usize) -> Result<Image, FieldError> {
        let exp = self.sky_export(m, h, w)?;
        let mut data = vec![0.0; exp.n_outputs()];
        exp.eval(self.store.values(), &[], &mut data);
        Ok(Image { width: w, height: h, channels: 3, data })
    }

    /// The export as a differentiable operation with `3 h w` outputs.
    pub fn sky_export(&self, m: usize, h: usize, w: usize) -> Result<SkyExport, FieldError> {
        let net = self.skies.get(m).ok_or(FieldError::IllumOutOfRange(m, self.skies.len()))?;
        Ok(SkyExport { net: net.clone(), h, w, octaves: self.spec.fields.sky_octaves })
    }

    /// Trainable parameter ranges of each sky network.
    pub fn sky_segment_prefix(m: usize) -> String {
        format!("sky{m}.")
    }
}

fn sky_act<S: Scalar>(v: S) -> S {
    v.clamp(-SKY_PRE_CLAMP, SKY_PRE_CLAMP).exp()
}

fn normalize_or_z<C: Ctx>(c: &C, v: Vec3<C::S>, eps: f64) -> (Vec3<C::S>, bool) {
    let len = v.length();
    if len.value() <= eps {
        (Vec3::new(c.constant(0.0), c.constant(0.0), c.constant(1.0)), true)
    } else {
        (v.scale(len.recip()), false)
    }
}

/// Normalize raw exposures per channel by their mean.
pub fn normalize_exposures(raw: &[V3]) -> Vec<V3> {
    if raw.is_empty() {
        return Vec::new();
    }
    let n = raw.len() as f64;
    let mean = raw.iter().fold(V3::ZERO, |a, &b| a + b) * (1.0 / n);
    raw.iter().map(|b| V3::new(b.x / mean.x, b.y / mean.y, b.z / mean.z)).collect()
}

/// Sky network evaluated at all texel centres.
#[derive(Debug, Clone)]
pub struct SkyExport {
    net: Network,
    h: usize,
    w: usize,
    octaves: usize,
}

struct SkyExportVjp {
    texels: Vec<(Box<dyn Vjp>, [f64; 3], [bool; 3])>,
}

impl SkyExport {
    fn input(&self, r: usize, c: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.net.mlp.input_dim());
        freq_encode(texel_direction(r, c, self.h, self.w), self.octaves, &mut v);
        v
    }
}

impl DiffFn for SkyExport {
    fn n_outputs(&self) -> usize {
        3 * self.h * self.w
    }

    fn eval(&self, params: &[f64], _x: &[f64], out: &mut [f64]) {
        let mut raw = [0.0; 3];
        for r in 0..self.h {
            for c in 0..self.w {
                self.net.eval(params, &self.input(r, c), &mut raw);
                let o = 3 * (r * self.w + c);
                for k in 0..3 {
                    out[o + k] = sky_act(raw[k]);
                }
            }
        }
    }

    fn eval_record(&self, params: &[f64], _x: &[f64], out: &mut [f64]) -> Box<dyn Vjp> {
        let mut texels = Vec::with_capacity(self.h * self.w);
        let mut raw = [0.0; 3];
        for r in 0..self.h {
            for c in 0..self.w {
                let vjp = self.net.eval_record(params, &self.input(r, c), &mut raw);
                let o = 3 * (r * self.w + c);
                let mut vals = [0.0; 3];
                let mut live = [false; 3];
                for k in 0..3 {
                    vals[k] = sky_act(raw[k]);
                    live[k] = raw[k] > -SKY_PRE_CLAMP && raw[k] < SKY_PRE_CLAMP;
                    out[o + k] = vals[k];
                }
                texels.push((vjp, vals, live));
            }
        }
        Box::new(SkyExportVjp { texels })
    }
}

impl Vjp for SkyExportVjp {
    fn backward(&self, values: &[f64], out_adj: &[f64], _in_adj: &mut [f64], param_grads: &mut [f64]) {
        for (t, (vjp, vals, live)) in self.texels.iter().enumerate() {
            let a = &out_adj[3 * t..3 * t + 3];
            if a.iter().all(|&g| g == 0.0) {
                continue;
            }
            let mut pre = [0.0; 3];
            for k in 0..3 {
                pre[k] = if live[k] { a[k] * vals[k] } else { 0.0 };
            }
            vjp.backward(values, &pre, &mut [], param_grads);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{check_sampled, Expr, ExprObjective};

    pub(crate) fn small_spec() -> ModelSpec {
        ModelSpec {
            fields: FieldConfig {
                grid: HashGridConfig { levels: 4, log2_table: 12, features: 2, base_res: 4.0, top_res: 32.0 },
                hidden: 16,
                sky_width: 16,
                ..FieldConfig::default()
            },
            bounds: Aabb::new(V3::splat(-1.0), V3::splat(1.0)),
            n_illum: 2,
            n_images: 3,
        }
    }

    #[test]
    fn fresh_model_is_deterministic() {
        let a = Model::new(small_spec());
        let b = Model::new(small_spec());
        let x = V3::new(0.1, -0.3, 0.2);
        assert_eq!(a.sdf_value(x).to_bits(), b.sdf_value(x).to_bits());
        assert_eq!(a.sdf_value(x).to_bits(), a.sdf_value(x).to_bits());
    }

    #[test]
    fn segments_cover_store() {
        let m = Model::new(small_spec());
        let total: usize = m.store.segments().iter().map(|s| s.len()).sum();
        assert_eq!(total, m.store.len());
    }

    #[test]
    fn kappa_init() {
        let m = Model::new(small_spec());
        assert!((1.0 / m.kappa_value() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn material_at_zero_logits_is_half() {
        let mut m = Model::new(small_spec());
        m.store.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let (kd, ks) = m.material(&m.plain(), V3::new(0.2, 0.2, 0.2));
        assert_eq!(kd, V3::splat(0.5));
        assert_eq!(ks, [0.5, 0.5]);
    }

    #[test]
    fn sky_is_positive_and_checks_index() {
        let m = Model::new(small_spec());
        for i in 0..200 {
            let d = texel_direction(i % 13, i, 13, 200);
            assert!(m.sky_value(d, 1).unwrap().min_elem(V3::splat(f64::MAX)).x > 0.0);
        }
        assert_eq!(m.sky_value(V3::Z, 2), Err(FieldError::IllumOutOfRange(2, 2)));
    }

    #[test]
    fn export_matches_direct_evaluation() {
        let m = Model::new(small_spec());
        let img = m.export_envmap(0, 8, 16).unwrap();
        for r in 0..8 {
            for c in 0..16 {
                let v = m.sky_value(texel_direction(r, c, 8, 16), 0).unwrap();
                assert_eq!(img.rgb(c, r), v);
            }
        }
        let one = m.export_envmap(0, 1, 1).unwrap();
        assert_eq!(one.rgb(0, 0), m.sky_value(texel_direction(0, 0, 1, 1), 0).unwrap());
    }

    #[test]
    fn exposure_normalization_examples() {
        let n = normalize_exposures(&[V3::splat(2.0), V3::splat(2.0)]);
        assert_eq!(n, vec![V3::splat(1.0); 2]);
        let n = normalize_exposures(&[V3::splat(1.0), V3::splat(3.0)]);
        assert_eq!(n, vec![V3::splat(0.5), V3::splat(1.5)]);
        let n = normalize_exposures(&[V3::new(0.3, 7.0, 2.0)]);
        assert_eq!(n, vec![V3::splat(1.0)]);
        let twice = normalize_exposures(&normalize_exposures(&[V3::new(0.3, 7.0, 2.0), V3::new(1.1, 0.2, 5.0)]));
        let once = normalize_exposures(&[V3::new(0.3, 7.0, 2.0), V3::new(1.1, 0.2, 5.0)]);
        for (a, b) in twice.iter().zip(&once) {
            assert!((*a - *b).length() < 1e-15);
        }
    }

    #[test]
    fn model_exposure_matches_free_function() {
        let mut m = Model::new(small_spec());
        let o = m.exposure_offset();
        for (k, v) in m.store.values_mut()[o..o + 9].iter_mut().enumerate() {
            *v = 0.1 * k as f64 - 0.3;
        }
        let want = normalize_exposures(&m.raw_exposures());
        for i in 0..3 {
            let got = m.exposure(&m.plain(), i);
            assert!((got - want[i]).length() < 1e-14);
        }
    }

    #[test]
    fn normal_field_degenerate_falls_back_to_z() {
        let mut m = Model::new(small_spec());
        m.store.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let (n, flag) = m.normal_field(&m.plain(), V3::new(0.1, 0.1, 0.1));
        assert!(flag);
        assert_eq!(n, V3::Z);
    }

    #[test]
    fn sdf_normal_of_plane_init() {
        let mut spec = small_spec();
        spec.fields.sdf_init = SdfInit::Plane { height: 0.0 };
        let mut m = Model::new(spec);
        let seg = m.store.segment("sdf.mlp.l1.weight").unwrap().range();
        m.store.values_mut()[seg].iter_mut().for_each(|v| *v = 0.0);
        let (n, flag) = m.sdf_normal(&m.plain(), V3::new(0.2, 0.1, 0.3));
        assert!(!flag);
        assert!((n - V3::new(0.0, 0.0, -1.0)).length() < 1e-9);
    }

    struct SkySum<'a>(&'a Model, usize);
    impl Expr for SkySum<'_> {
        fn eval<C: Ctx>(&self, c: &C) -> C::S {
            let mut acc = c.constant(0.0);
            for i in 0..5 {
                let d = texel_direction(i, 2 * i + 1, 5, 11);
                let s = self.0.sky(c, d, self.1).unwrap();
                acc = acc + s.x * 0.3 + s.y - s.z * 0.2;
            }
            acc + self.0.exposure(c, 1).x * self.0.kappa(c)
        }
    }

    #[test]
    fn sky_and_exposure_gradients() {
        let m = Model::new(small_spec());
        let mut store = m.store.clone();
        let ids: Vec<usize> = (0..store.len()).collect();
        let r = check_sampled(&ExprObjective(SkySum(&m, 1)), &mut store, &ids, 30, 4, 1e-5, 1e-5, 1e-5);
        assert!(r.n_valid() >= 30);
        assert!(r.passed(), "{:?}", r.failures());
    }

    #[test]
    fn export_vjp_matches_direct_sky_gradient() {
        use crate::gradcore::{forward_record, GradSink, Recorder, TapeCtx};
        let m = Model::new(small_spec());
        let w = [0.3, -0.7, 1.1];
        // direct
        let (_, mut t) = forward_record(&m.store, |c| {
            let mut acc = c.constant(0.0);
            for r in 0..2 {
                for col in 0..4 {
                    let s = m.sky(c, texel_direction(r, col, 2, 4), 0).unwrap();
                    acc = acc + s.x * w[0] + s.y * w[1] + s.z * w[2];
                }
            }
            acc
        });
        let mut g1 = vec![0.0; m.store.len()];
        t.backward(1.0, &mut GradSink { values: m.store.values(), params: &mut g1, external: &mut [] }).unwrap();
        // via export
        let exp = m.sky_export(0, 2, 4).unwrap();
        let rec = Recorder::new();
        let ctx = TapeCtx::new(&rec, &m.store);
        let mut out = Vec::new();
        ctx.apply(&exp, &[], &mut out);
        let adj: Vec<f64> = (0..24).map(|k| w[k % 3]).collect();
        let mut g2 = vec![0.0; m.store.len()];
        drop(out);
        let mut tape = rec.finish_at(None, 0.0);
        tape.backward_from(adj, &mut GradSink { values: m.store.values(), params: &mut g2, external: &mut [] }).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
