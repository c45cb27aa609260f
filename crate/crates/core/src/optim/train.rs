//! Batched loss evaluation with its gradient, and the two-phase training loop.
//!
//! Every stochastic decision of a batch (ray samples, foreground flags,
//! surface points, secondary rays, perturbations) is drawn once and frozen
//! in a [`Batch`]. Evaluating a frozen batch is then a deterministic
//! function of the parameters, which is what the gradient checks rely on.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geomesh::{refresh_mesh, should_refresh, MeshSnapshot, NoOccluder, Occluder};
use crate::gradcore::{
    check_sampled, Ctx, DiffFn, FdReport, GradSink, Objective, ParameterStore, PlainCtx, Recorder, Scalar, TapeCtx, Vjp,
};
use crate::math::{Vec3, V3};
use crate::nfield::{Model, SemanticClass};
use crate::rng::{pixel_rng, tagged_rng};
use crate::sceneio::Dataset;
use crate::shade::{
    apply_exposure, composite_pixel, eval_plan, plan_shading, shading_rng, sky_lookup, EnvMap, Lighting,
    ShadePlan, ShadingConfig, Surface,
};
use crate::volren::{gbuffer_sample, march, radiance_sample, MarchConfig, Ray, SamplePlan};

use super::{abs_diff_mean, angle_term, bce_term, eikonal_term, l1_ldr, l1_rgb, Adam, AdamConfig, LossTerms, LossWeights, Phase, TERM_NAMES};

const RENDER: usize = 0;
const RAD: usize = 1;
const DEPTH: usize = 2;
const NORM: usize = 3;
const SHADE: usize = 4;
const EIKONAL: usize = 5;
const SKYMASK: usize = 6;
const SMOOTH: usize = 7;

const DEPTH_STREAM: u64 = 0xDE97_0000_0000_0001;
const BATCH_STREAM: u64 = 0xBA7C_0000_0000_0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub warmup: u64,
    pub main: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { warmup: 5000, main: 50_000 }
    }
}

impl Schedule {
    /// Both phases multiplied by `k`, keeping their ratio.
    pub fn scaled(&self, k: f64) -> Schedule {
        Schedule { warmup: (self.warmup as f64 * k).round() as u64, main: (self.main as f64 * k).round() as u64 }
    }

    pub fn total(&self) -> u64 {
        self.warmup + self.main
    }

    pub fn phase(&self, iteration: u64) -> Phase {
        if iteration < self.warmup {
            Phase::Warmup
        } else {
            Phase::Main
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Unscaled schedule.
    pub schedule: Schedule,
    /// Factor applied to both phases.
    pub iters_scale: f64,
    /// Camera rays per batch.
    pub batch: usize,
    /// Depth-supervised rays per batch.
    pub depth_batch: usize,
    pub eikonal_points: usize,
    pub smooth_sigma: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub march: MarchConfig,
    pub shading: ShadingConfig,
    pub mesh_period: u64,
    pub grid_res: [usize; 3],
    /// Sky texels (rows, columns) used while training.
    pub sky_res: [usize; 2],
    pub active_classes: Vec<SemanticClass>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: Schedule::default(),
            iters_scale: 0.1,
            batch: 4096,
            depth_batch: 1024,
            eikonal_points: 512,
            smooth_sigma: 0.02,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            march: MarchConfig::default(),
            shading: ShadingConfig::default(),
            mesh_period: 20,
            grid_res: [128, 128, 128],
            sky_res: [64, 128],
            active_classes: SemanticClass::DEFAULT_ACTIVE.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn effective_schedule(&self) -> Schedule {
        self.schedule.scaled(self.iters_scale)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.weights.validate()?;
        if !(self.iters_scale > 0.0 && self.iters_scale.is_finite()) {
            return Err(format!("iters_scale must be positive, got {}", self.iters_scale));
        }
        if self.batch == 0 {
            return Err("batch must be at least 1".into());
        }
        if !(self.smooth_sigma >= 0.0) {
            return Err("smooth_sigma must be non-negative".into());
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err("adam: lr must be positive and betas in [0, 1)".into());
        }
        if self.grid_res.iter().any(|&r| r < 2) {
            return Err(format!("grid_res must be at least 2 per axis, got {:?}", self.grid_res));
        }
        if self.sky_res.contains(&0) {
            return Err("sky_res must be positive".into());
        }
        if self.shading.samples < 2 {
            return Err("shading.samples must be at least 2".into());
        }
        if self.march.n_uniform < 2 {
            return Err("march.n_uniform must be at least 2".into());
        }
        if self.mesh_period == 0 {
            return Err("mesh_period must be at least 1".into());
        }
        Ok(())
    }
}

/// Frozen surface decisions of a camera ray.
#[derive(Debug, Clone)]
pub struct SurfacePlan {
    pub fg: bool,
    /// `o + (D/A) d`, a constant of the step.
    pub x: V3,
    pub shade: Option<ShadePlan>,
}

#[derive(Debug, Clone)]
pub struct RayItem {
    pub view: usize,
    pub px: u32,
    pub py: u32,
    pub gt: V3,
    /// From the sky mask, when the view has one.
    pub non_sky: Option<bool>,
    pub class: Option<SemanticClass>,
    /// Perturbation of the smoothness term.
    pub eps: V3,
    pub samples: Option<SamplePlan>,
    pub surface: Option<SurfacePlan>,
}

#[derive(Debug, Clone)]
pub struct DepthItem {
    /// Index into the flattened depth rays, used to seed its stream.
    pub index: usize,
    pub o: V3,
    pub d: V3,
    pub range: f64,
    pub samples: Option<SamplePlan>,
}

/// One optimization batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub iteration: u64,
    pub phase: Phase,
    pub rays: Vec<RayItem>,
    pub depth: Vec<DepthItem>,
    pub eikonal: Vec<V3>,
}

impl Batch {
    /// Draw rays, depth rays and regularizer points for an iteration.
    pub fn sample(data: &Dataset, model: &Model, cfg: &TrainConfig, iteration: u64) -> Batch {
        let mut rng = tagged_rng(cfg.seed ^ BATCH_STREAM, iteration);
        let normal = Normal::new(0.0, cfg.smooth_sigma.max(0.0)).expect("finite sigma");
        let mut rays = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let view = rng.random_range(0..data.views.len());
            let v = &data.views[view];
            let px = rng.random_range(0..v.camera.width);
            let py = rng.random_range(0..v.camera.height);
            let p = py * v.camera.width + px;
            let eps = V3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            rays.push(RayItem {
                view,
                px: px as u32,
                py: py as u32,
                gt: v.image.rgb(px, py),
                non_sky: v.skymask.as_ref().map(|m| !m[p]),
                class: v.semantic.as_ref().and_then(|s| SemanticClass::from_id(s[p])),
                eps,
                samples: None,
                surface: None,
            });
        }
        let pool: Vec<_> = data.views.iter().filter_map(|v| v.depth.as_ref()).flatten().collect();
        let depth = if pool.is_empty() {
            Vec::new()
        } else {
            (0..cfg.depth_batch)
                .map(|_| {
                    let index = rng.random_range(0..pool.len());
                    let r = pool[index];
                    DepthItem { index, o: r.o, d: r.d, range: r.range, samples: None }
                })
                .collect()
        };
        let lo = model.bounds().lo();
        let e = model.bounds().extent();
        let eikonal = (0..cfg.eikonal_points)
            .map(|_| V3::new(lo.x + e.x * rng.random::<f64>(), lo.y + e.y * rng.random::<f64>(), lo.z + e.z * rng.random::<f64>()))
            .collect();
        Batch { iteration, phase: cfg.effective_schedule().phase(iteration), rays, depth, eikonal }
    }
}

/// Everything a loss evaluation reads besides the parameter values. The
/// model provides network structure only; values come from the context.
pub struct LossContext<'a> {
    pub model: &'a Model,
    pub data: &'a Dataset,
    pub cfg: &'a TrainConfig,
    /// Sky per illumination index at training resolution; may be empty in warm-up.
    pub lights: &'a [Lighting],
    pub occluder: &'a dyn Occluder,
}

impl LossContext<'_> {
    fn sky_slots(&self) -> usize {
        3 * self.cfg.sky_res[0] * self.cfg.sky_res[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Key {
    term: usize,
    class: u8,
}

impl Key {
    fn of(term: usize) -> Key {
        Key { term, class: 0 }
    }
}

/// Export every sky at training resolution. With `record`, also return
/// the adjoint of each export for [`apply_sky_adjoint`].
pub fn training_skies(model: &Model, store: &ParameterStore, res: [usize; 2], record: bool) -> (Vec<Lighting>, Vec<Box<dyn Vjp>>) {
    let mut lights = Vec::with_capacity(model.n_illum());
    let mut vjps = Vec::new();
    for m in 0..model.n_illum() {
        let exp = model.sky_export(m, res[0], res[1]).expect("index in range");
        let mut data = vec![0.0; exp.n_outputs()];
        if record {
            vjps.push(exp.eval_record(store.values(), &[], &mut data));
        } else {
            exp.eval(store.values(), &[], &mut data);
        }
        lights.push(Lighting::new(EnvMap { width: res[1], height: res[0], data }));
    }
    (lights, vjps)
}

/// Push adjoints accumulated on sky texels back into the sky networks.
pub fn apply_sky_adjoint(vjps: &[Box<dyn Vjp>], store: &ParameterStore, sky_adj: &[f64], grads: &mut [f64]) {
    if vjps.is_empty() {
        return;
    }
    let per = sky_adj.len() / vjps.len();
    for (m, vjp) in vjps.iter().enumerate() {
        let a = &sky_adj[m * per..(m + 1) * per];
        if a.iter().any(|&g| g != 0.0) {
            vjp.backward(store.values(), a, &mut [], grads);
        }
    }
}

fn vec3_const<C: Ctx>(c: &C, v: V3) -> Vec3<C::S> {
    Vec3::new(c.constant(v.x), c.constant(v.y), c.constant(v.z))
}

fn ray_contribs<C: Ctx>(c: &C, lc: &LossContext<'_>, phase: Phase, iteration: u64, it: &mut RayItem, out: &mut Vec<(Key, C::S)>) {
    let model = lc.model;
    let cfg = lc.cfg;
    let view = &lc.data.views[it.view];
    let (px, py) = (it.px as usize, it.py as usize);
    let (o, d) = view.camera.ray(px as f64 + 0.5, py as f64 + 0.5);
    let shading = phase == Phase::Main;
    let slots = lc.sky_slots();
    let light = lc.lights.get(view.illum);
    let map_data: &[f64] = light.map_or(&[], |l| &l.map.data);
    let texel = |i: usize| c.external(view.illum * slots + i, map_data[i]);
    let beta = if cfg.shading.exposure { model.exposure(c, it.view) } else { vec3_const(c, V3::splat(1.0)) };
    let gamma = cfg.shading.gamma;

    let Some(ray) = Ray::clipped(o, d, model, (it.px, it.py), it.view) else {
        // the ray never enters the scene: pure sky
        if let (true, Some(light)) = (shading, light) {
            let sky = sky_lookup(&light.map.taps(d), &texel);
            out.push((Key::of(RENDER), l1_ldr(apply_exposure(sky, beta), it.gt, gamma)));
        }
        if let Some(ns) = it.non_sky {
            out.push((Key::of(SKYMASK), bce_term(c.constant(0.0), ns)));
        }
        return;
    };

    let mut rng = pixel_rng(cfg.seed, it.view, px, py, iteration);
    let m = march(c, model, &ray, &cfg.march, &mut it.samples, &mut rng);
    let g = gbuffer_sample(c, model, &ray, &m);
    if it.surface.is_none() {
        let fg = g.a.value() >= cfg.march.a_min;
        let x = m.surface_point(&ray).unwrap_or_else(|| ray.at(ray.t_far));
        let shade = match (fg && shading, light) {
            (true, Some(light)) => {
                let surf = Surface::new(g.n.value(), g.kd.value(), g.ks[0].value(), g.ks[1].value());
                let mut srng = shading_rng(cfg.shading.seed ^ cfg.seed, it.view, px, py, iteration);
                Some(plan_shading(x, -d, &surf, g.degenerate_normal, light, lc.occluder, &cfg.shading, &mut srng))
            }
            _ => None,
        };
        it.surface = Some(SurfacePlan { fg, x, shade });
    }
    let sp = it.surface.as_ref().expect("frozen above");

    if let (true, Some(light)) = (shading, light) {
        let sky = sky_lookup(&light.map.taps(d), &texel);
        let surf = Surface { n: g.n, kd: g.kd, metallic: g.ks[0], roughness: g.ks[1] };
        let shaded = sp.shade.as_ref().map(|plan| eval_plan(c, plan, &surf, &light.map, &texel));
        let hdr = composite_pixel(g.a, shaded.map(|s| s.radiance), sky);
        out.push((Key::of(RENDER), l1_ldr(apply_exposure(hdr, beta), it.gt, gamma)));
        if let (Some(s), Some(class)) = (shaded, it.class) {
            if cfg.active_classes.contains(&class) {
                let k = model.class_albedo(c, class);
                let cd = apply_exposure(k.mul_elem(s.diffuse), beta);
                out.push((Key { term: SHADE, class: class.id() }, l1_ldr(cd, it.gt, gamma)));
            }
        }
    }
    if it.non_sky != Some(false) {
        out.push((Key::of(RAD), l1_rgb(radiance_sample(c, model, &ray, &m), it.gt)));
    }
    if sp.fg {
        let x = sp.x;
        let (ns, bad_s) = model.sdf_normal(c, x);
        let (n0, bad_n) = model.normal_field(c, x);
        if !bad_s && !bad_n {
            out.push((Key::of(NORM), angle_term(ns, n0)));
        }
        let xe = x + it.eps;
        let (kd0, ks0) = model.material(c, x);
        let (kd1, ks1) = model.material(c, xe);
        let (n1, _) = model.normal_field(c, xe);
        let s = abs_diff_mean(&kd0.to_array(), &kd1.to_array()) + abs_diff_mean(&ks0, &ks1) + abs_diff_mean(&n0.to_array(), &n1.to_array());
        out.push((Key::of(SMOOTH), s));
    }
    if let Some(ns) = it.non_sky {
        out.push((Key::of(SKYMASK), bce_term(g.a, ns)));
    }
}

fn depth_contribs<C: Ctx>(c: &C, lc: &LossContext<'_>, iteration: u64, it: &mut DepthItem, out: &mut Vec<(Key, C::S)>) {
    let Some(ray) = Ray::clipped(it.o, it.d, lc.model, (0, 0), 0) else { return };
    let mut rng = pixel_rng(lc.cfg.seed ^ DEPTH_STREAM, 0, it.index, 0, iteration);
    let m = march(c, lc.model, &ray, &lc.cfg.march, &mut it.samples, &mut rng);
    out.push((Key::of(DEPTH), (m.depth - it.range).abs()));
}

enum Unit<'a> {
    Ray(&'a mut RayItem),
    Depth(&'a mut DepthItem),
    Eikonal(V3),
}

impl Batch {
    fn units(&mut self) -> Vec<Unit<'_>> {
        let mut u: Vec<Unit<'_>> = self.rays.iter_mut().map(Unit::Ray).collect();
        u.extend(self.depth.iter_mut().map(Unit::Depth));
        u.extend(self.eikonal.iter().map(|&p| Unit::Eikonal(p)));
        u
    }
}

fn unit_contribs<C: Ctx>(c: &C, lc: &LossContext<'_>, phase: Phase, iteration: u64, unit: &mut Unit<'_>, out: &mut Vec<(Key, C::S)>) {
    match unit {
        Unit::Ray(it) => ray_contribs(c, lc, phase, iteration, it, out),
        Unit::Depth(it) => depth_contribs(c, lc, iteration, it, out),
        Unit::Eikonal(p) => out.push((Key::of(EIKONAL), eikonal_term(lc.model.sdf_grad(c, *p)))),
    }
}

/// Normalizer of every contribution: batch means per term, and for the
/// shading prior the mean over present classes of per-class means.
fn normalizers(keys: &[Key]) -> Vec<f64> {
    let mut count = [0usize; 8];
    let mut per_class = [0usize; SemanticClass::COUNT];
    for k in keys {
        count[k.term] += 1;
        if k.term == SHADE {
            per_class[k.class as usize] += 1;
        }
    }
    let classes = per_class.iter().filter(|&&n| n > 0).count() as f64;
    keys.iter()
        .map(|k| if k.term == SHADE { 1.0 / (classes * per_class[k.class as usize] as f64) } else { 1.0 / count[k.term] as f64 })
        .collect()
}

fn sum_terms(keys: &[Key], vals: &[f64], norm: &[f64]) -> LossTerms {
    let mut t = [0.0; 8];
    for ((k, v), w) in keys.iter().zip(vals).zip(norm) {
        t[k.term] += v * w;
    }
    LossTerms::from_array(t)
}

/// Value of every loss term on a batch; freezes whatever is not frozen yet.
pub fn batch_loss(store: &ParameterStore, lc: &LossContext<'_>, batch: &mut Batch) -> LossTerms {
    let c = PlainCtx::new(store);
    let (phase, iteration) = (batch.phase, batch.iteration);
    let mut keys = Vec::new();
    let mut vals = Vec::new();
    let mut tmp = Vec::new();
    for mut unit in batch.units() {
        unit_contribs(&c, lc, phase, iteration, &mut unit, &mut tmp);
        for (k, v) in tmp.drain(..) {
            keys.push(k);
            vals.push(v);
        }
    }
    sum_terms(&keys, &vals, &normalizers(&keys))
}

/// Term values plus the gradient of `sum_k weights[k] * term_k`, added to
/// `grads` (parameters) and `sky_adj` (training sky texels, illumination
/// major).
pub fn batch_loss_grad(
    store: &ParameterStore,
    lc: &LossContext<'_>,
    batch: &mut Batch,
    weights: &[f64; 8],
    grads: &mut [f64],
    sky_adj: &mut [f64],
) -> LossTerms {
    let (phase, iteration) = (batch.phase, batch.iteration);
    let mut tapes = Vec::new();
    let mut keys = Vec::new();
    let mut vals = Vec::new();
    for mut unit in batch.units() {
        let rec = Recorder::new();
        let nodes: Vec<Option<u32>> = {
            let c = TapeCtx::new(&rec, store);
            let mut tmp = Vec::new();
            unit_contribs(&c, lc, phase, iteration, &mut unit, &mut tmp);
            tmp.into_iter()
                .map(|(k, v)| {
                    keys.push(k);
                    vals.push(v.value());
                    v.node()
                })
                .collect()
        };
        tapes.push((rec.finish_at(None, 0.0), nodes));
    }
    let norm = normalizers(&keys);
    let mut i = 0;
    for (mut tape, nodes) in tapes {
        let mut adj = vec![0.0; tape.len()];
        let mut any = false;
        for node in nodes {
            let seed = weights[keys[i].term] * norm[i];
            if let Some(n) = node {
                if seed != 0.0 {
                    adj[n as usize] += seed;
                    any = true;
                }
            }
            i += 1;
        }
        if any {
            let mut sink = GradSink { values: store.values(), params: grads, external: sky_adj };
            tape.backward_from(adj, &mut sink).expect("fresh tape");
        }
    }
    sum_terms(&keys, &vals, &norm)
}

/// Gradient of the weighted batch loss including the sky export; returns the terms.
pub fn batch_gradient(
    model: &Model,
    store: &ParameterStore,
    data: &Dataset,
    cfg: &TrainConfig,
    occluder: &dyn Occluder,
    batch: &mut Batch,
    weights: &[f64; 8],
    grads: &mut [f64],
) -> LossTerms {
    let need_sky = batch.phase == Phase::Main && (weights[RENDER] != 0.0 || weights[SHADE] != 0.0);
    let (lights, vjps) = if need_sky { training_skies(model, store, cfg.sky_res, true) } else { (Vec::new(), Vec::new()) };
    let lc = LossContext { model, data, cfg, lights: &lights, occluder };
    let mut sky_adj = vec![0.0; lights.len() * lc.sky_slots()];
    let terms = batch_loss_grad(store, &lc, batch, weights, grads, &mut sky_adj);
    apply_sky_adjoint(&vjps, store, &sky_adj, grads);
    terms
}

/// One loss term of a frozen batch as a function of the parameters.
pub struct TermObjective<'a> {
    pub model: &'a Model,
    pub data: &'a Dataset,
    pub cfg: &'a TrainConfig,
    pub occluder: &'a dyn Occluder,
    pub batch: Batch,
    pub term: usize,
}

impl TermObjective<'_> {
    fn one_hot(&self) -> [f64; 8] {
        let mut w = [0.0; 8];
        w[self.term] = 1.0;
        w
    }
}

impl Objective for TermObjective<'_> {
    fn value(&self, store: &ParameterStore) -> f64 {
        let (lights, _) =
            if self.batch.phase == Phase::Main { training_skies(self.model, store, self.cfg.sky_res, false) } else { (Vec::new(), Vec::new()) };
        let lc = LossContext { model: self.model, data: self.data, cfg: self.cfg, lights: &lights, occluder: self.occluder };
        batch_loss(store, &lc, &mut self.batch.clone()).as_array()[self.term]
    }

    fn gradient(&self, store: &ParameterStore, grads: &mut [f64]) -> f64 {
        let mut b = self.batch.clone();
        let mut w = self.one_hot();
        if self.batch.phase != Phase::Main {
            w[RENDER] = 0.0;
            w[SHADE] = 0.0;
        }
        // sky adjoints are needed whenever the term can see the sky
        let need_sky = self.batch.phase == Phase::Main;
        let (lights, vjps) = if need_sky { training_skies(self.model, store, self.cfg.sky_res, true) } else { (Vec::new(), Vec::new()) };
        let lc = LossContext { model: self.model, data: self.data, cfg: self.cfg, lights: &lights, occluder: self.occluder };
        let mut sky_adj = vec![0.0; lights.len() * lc.sky_slots()];
        let terms = batch_loss_grad(store, &lc, &mut b, &w, grads, &mut sky_adj);
        apply_sky_adjoint(&vjps, store, &sky_adj, grads);
        terms.as_array()[self.term]
    }
}

/// Draw a batch in the main phase and freeze it against the current values.
pub fn frozen_batch(model: &Model, data: &Dataset, cfg: &TrainConfig, occluder: &dyn Occluder, iteration: u64) -> Batch {
    let mut batch = Batch::sample(data, model, cfg, iteration);
    batch.phase = Phase::Main;
    let (lights, _) = training_skies(model, &model.store, cfg.sky_res, false);
    let lc = LossContext { model, data, cfg, lights: &lights, occluder };
    batch_loss(&model.store, &lc, &mut batch);
    batch
}

/// Finite-difference report of one loss term.
#[derive(Debug, Clone)]
pub struct TermCheck {
    pub name: &'static str,
    pub value: f64,
    pub report: FdReport,
}

/// Check every loss term on one frozen main-phase batch: `n` sampled
/// parameters each, step `h`, relative tolerance `tol`.
pub fn check_loss_gradients(model: &Model, data: &Dataset, cfg: &TrainConfig, occluder: &dyn Occluder, n: usize, h: f64, tol: f64) -> Vec<TermCheck> {
    let batch = frozen_batch(model, data, cfg, occluder, 0);
    let mut store = model.store.clone();
    let candidates: Vec<usize> = (0..store.len()).collect();
    (0..8)
        .map(|term| {
            let obj = TermObjective { model, data, cfg, occluder, batch: batch.clone(), term };
            let value = obj.value(&store);
            let report = check_sampled(&obj, &mut store, &candidates, n, cfg.seed ^ term as u64, h, tol, 1e-6);
            TermCheck { name: TERM_NAMES[term], value, report }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iteration: u64,
    pub phase: Phase,
    pub terms: LossTerms,
    pub total: f64,
}

impl StepReport {
    pub fn log_header() -> String {
        let mut s = String::from("iter");
        for n in TERM_NAMES {
            s.push('\t');
            s.push_str(n);
        }
        s.push_str("\ttotal");
        s
    }

    pub fn log_line(&self) -> String {
        let mut s = self.iteration.to_string();
        for v in self.terms.as_array() {
            s.push_str(&format!("\t{v:.6e}"));
        }
        s.push_str(&format!("\t{:.6e}", self.total));
        s
    }
}

/// Optimizer state between steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub iteration: u64,
    pub adam: Adam,
    pub mesh: Option<MeshSnapshot>,
}

/// Runs the schedule over a dataset.
pub struct Trainer<'a> {
    pub model: Model,
    pub data: &'a Dataset,
    pub cfg: TrainConfig,
    pub state: TrainState,
    schedule: Schedule,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, data: &'a Dataset, cfg: TrainConfig) -> Result<Trainer<'a>, String> {
        cfg.validate()?;
        if data.views.is_empty() {
            return Err("dataset has no views".into());
        }
        if model.spec.n_images != data.views.len() {
            return Err(format!("model has exposures for {} images, dataset has {}", model.spec.n_images, data.views.len()));
        }
        if cfg.weights.depth > 0.0 && !data.has_depth() {
            return Err("loss weight `depth` is positive but the dataset has no depth rays".into());
        }
        if model.n_illum() != data.n_illum {
            return Err(format!("model has {} skies, dataset uses {} illuminations", model.n_illum(), data.n_illum));
        }
        let adam = Adam::new(cfg.adam, model.store.len());
        let schedule = cfg.effective_schedule();
        Ok(Trainer { model, data, cfg, state: TrainState { iteration: 0, adam, mesh: None }, schedule })
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn finished(&self) -> bool {
        self.state.iteration >= self.schedule.total()
    }

    pub fn step(&mut self) -> StepReport {
        let it = self.state.iteration;
        let phase = self.schedule.phase(it);
        if should_refresh(it, phase == Phase::Main, self.state.mesh.is_some(), self.cfg.mesh_period) {
            self.state.mesh = Some(refresh_mesh(&self.model, self.cfg.grid_res, it));
        }
        let mut batch = Batch::sample(self.data, &self.model, &self.cfg, it);
        batch.phase = phase;
        let weights = self.cfg.weights.effective(phase);
        let mut grads = vec![0.0; self.model.store.len()];
        let occ: &dyn Occluder = match &self.state.mesh {
            Some(m) => &m.bvh,
            None => &NoOccluder,
        };
        let terms = batch_gradient(&self.model, &self.model.store, self.data, &self.cfg, occ, &mut batch, &weights, &mut grads);
        self.model.store.zero_grads();
        self.model.store.grads_mut().copy_from_slice(&grads);
        self.state.adam.step(&mut self.model.store);
        self.state.iteration += 1;
        let total = weights.iter().zip(terms.as_array()).map(|(w, t)| w * t).sum();
        StepReport { iteration: it, phase, terms, total }
    }

    /// Run to the end of the schedule, calling `on_step` after every step.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepReport, &Model)) {
        while !self.finished() {
            let r = self.step();
            on_step(&r, &self.model);
        }
    }
}
