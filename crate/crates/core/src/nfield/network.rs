use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gradcore::{DiffFn, ParameterStore, Vjp};

const PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashGridConfig {
    pub levels: usize,
    pub log2_table: u32,
    pub features: usize,
    pub base_res: f64,
    pub top_res: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig { levels: 8, log2_table: 17, features: 2, base_res: 16.0, top_res: 1024.0 }
    }
}

/// Multiresolution hash encoding over normalized coordinates in `[0,1]^3`.
#[derive(Debug, Clone)]
pub struct HashGrid {
    pub cfg: HashGridConfig,
    offset: usize,
    res: Arc<[u64]>,
    dense: Arc<[bool]>,
}

/// Trilinear taps of one query: per level the 8 table rows and weights.
#[derive(Debug, Clone, Default)]
pub struct GridTaps {
    pub rows: Vec<u32>,
    pub weights: Vec<f64>,
}

impl HashGrid {
    pub fn new(store: &mut ParameterStore, name: &str, cfg: HashGridConfig, rng: &mut impl Rng) -> HashGrid {
        assert!(cfg.levels >= 1 && cfg.features >= 1);
        let t = 1usize << cfg.log2_table;
        let growth = if cfg.levels > 1 { (cfg.top_res / cfg.base_res).ln() / (cfg.levels - 1) as f64 } else { 0.0 };
        let res: Arc<[u64]> =
            (0..cfg.levels).map(|l| (cfg.base_res * (growth * l as f64).exp() + 1e-9).floor().max(1.0) as u64).collect();
        let dense = res.iter().map(|&n| (n + 1).pow(3) <= t as u64).collect();
        let offset = store.add_segment(name, &[cfg.levels, t, cfg.features], |_| rng.random_range(-1e-4..1e-4));
        HashGrid { cfg, offset, res, dense }
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.levels * self.cfg.features
    }

    pub fn resolutions(&self) -> &[u64] {
        &self.res
    }

    fn table(&self) -> u64 {
        1u64 << self.cfg.log2_table
    }

    fn index(&self, level: usize, c: [u64; 3]) -> u64 {
        let t = self.table();
        if self.dense[level] {
            let n = self.res[level] + 1;
            (c[0] + n * (c[1] + n * c[2])) % t
        } else {
            let h = (c[0].wrapping_mul(PRIMES[0])) ^ (c[1].wrapping_mul(PRIMES[1])) ^ (c[2].wrapping_mul(PRIMES[2]));
            h & (t - 1)
        }
    }

    /// Trilinear taps at `u` (clamped to the unit cube).
    pub fn taps(&self, u: [f64; 3], taps: &mut GridTaps) {
        taps.rows.clear();
        taps.weights.clear();
        taps.rows.reserve(8 * self.cfg.levels);
        taps.weights.reserve(8 * self.cfg.levels);
        let t = self.table() as usize;
        for l in 0..self.cfg.levels {
            let n = self.res[l];
            let mut base = [0u64; 3];
            let mut frac = [0.0; 3];
            for a in 0..3 {
                let p = u[a].clamp(0.0, 1.0) * n as f64;
                let i = (p.floor() as u64).min(n.saturating_sub(1));
                base[a] = i;
                frac[a] = p - i as f64;
            }
            for corner in 0..8u64 {
                let mut w = 1.0;
                let mut c = [0u64; 3];
                for a in 0..3 {
                    let bit = (corner >> a) & 1;
                    c[a] = base[a] + bit;
                    w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                let row = l * t + self.index(l, c) as usize;
                taps.rows.push(row as u32);
                taps.weights.push(w);
            }
        }
    }

    fn encode(&self, params: &[f64], taps: &GridTaps, out: &mut [f64]) {
        let f = self.cfg.features;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, (&row, &w)) in taps.rows.iter().zip(&taps.weights).enumerate() {
            let l = k / 8;
            let p = self.offset + row as usize * f;
            for j in 0..f {
                out[l * f + j] += w * params[p + j];
            }
        }
    }

    /// Plain encoding at `u`.
    pub fn encode_at(&self, params: &[f64], u: [f64; 3]) -> Vec<f64> {
        let mut taps = GridTaps::default();
        self.taps(u, &mut taps);
        let mut out = vec![0.0; self.output_dim()];
        self.encode(params, &taps, &mut out);
        out
    }

    fn scatter(&self, taps: &GridTaps, adj: &[f64], grads: &mut [f64]) {
        let f = self.cfg.features;
        for (k, (&row, &w)) in taps.rows.iter().zip(&taps.weights).enumerate() {
            let l = k / 8;
            let p = self.offset + row as usize * f;
            for j in 0..f {
                grads[p + j] += w * adj[l * f + j];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// softplus with beta = 100
    Softplus,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => {
                let z = 100.0 * x;
                if z > 30.0 {
                    x
                } else {
                    z.exp().ln_1p() / 100.0
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => crate::gradcore::sigmoid(100.0 * x),
        }
    }
}

/// Fully connected network; weights stored row-major `[out, in]` then bias.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Arc<[usize]>,
    offsets: Arc<[(usize, usize)]>,
    act: Activation,
}

impl Mlp {
    /// `dims` lists layer widths from input to output.
    pub fn new(store: &mut ParameterStore, name: &str, dims: &[usize], act: Activation, out_scale: f64, rng: &mut impl Rng) -> Mlp {
        assert!(dims.len() >= 2);
        let mut offsets = Vec::new();
        let n_layers = dims.len() - 1;
        for l in 0..n_layers {
            let (fi, fo) = (dims[l], dims[l + 1]);
            let mut bound = (6.0 / fi as f64).sqrt();
            if l + 1 == n_layers {
                bound *= out_scale;
            }
            let w = store.add_segment(&format!("{name}.l{l}.weight"), &[fo, fi], |_| rng.random_range(-bound..bound));
            let b = store.add_segment(&format!("{name}.l{l}.bias"), &[fo], |_| 0.0);
            offsets.push((w, b));
        }
        Mlp { dims: dims.into(), offsets: offsets.into(), act }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Offset of the output bias, for initialization tweaks.
    pub fn output_bias(&self) -> usize {
        self.offsets.last().unwrap().1
    }

    /// Forward pass; `pre` receives every hidden pre-activation when given.
    fn forward(&self, params: &[f64], input: &[f64], out: &mut [f64], mut pre: Option<&mut Vec<f64>>) {
        let mut cur = input.to_vec();
        let n_layers = self.offsets.len();
        for (l, &(w, b)) in self.offsets.iter().enumerate() {
            let (fi, fo) = (self.dims[l], self.dims[l + 1]);
            let mut next = params[b..b + fo].to_vec();
            for (o, nv) in next.iter_mut().enumerate() {
                let row = &params[w + o * fi..w + (o + 1) * fi];
                *nv += row.iter().zip(&cur).map(|(a, x)| a * x).sum::<f64>();
            }
            if l + 1 < n_layers {
                if let Some(p) = pre.as_deref_mut() {
                    p.extend_from_slice(&next);
                }
                next.iter_mut().for_each(|v| *v = self.act.apply(*v));
            }
            cur = next;
        }
        out.copy_from_slice(&cur);
    }

    fn backward(&self, params: &[f64], input: &[f64], pre: &[f64], out_adj: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let n_layers = self.offsets.len();
        let mut pre_off = Vec::with_capacity(n_layers);
        let mut acc = 0;
        for l in 0..n_layers - 1 {
            pre_off.push(acc);
            acc += self.dims[l + 1];
        }
        let mut adj = out_adj.to_vec();
        for l in (0..n_layers).rev() {
            let (w, b) = self.offsets[l];
            let (fi, fo) = (self.dims[l], self.dims[l + 1]);
            let act_in: Vec<f64> = if l == 0 {
                input.to_vec()
            } else {
                pre[pre_off[l - 1]..pre_off[l - 1] + fi].iter().map(|&v| self.act.apply(v)).collect()
            };
            let mut adj_in = vec![0.0; fi];
            for o in 0..fo {
                let g = adj[o];
                if g == 0.0 {
                    continue;
                }
                grads[b + o] += g;
                let row = w + o * fi;
                for i in 0..fi {
                    grads[row + i] += g * act_in[i];
                    adj_in[i] += g * params[row + i];
                }
            }
            if l > 0 {
                let p = &pre[pre_off[l - 1]..pre_off[l - 1] + fi];
                for i in 0..fi {
                    adj_in[i] *= self.act.derivative(p[i]);
                }
            }
            adj = adj_in;
        }
        adj
    }
}

/// Optional hash grid followed by an MLP. The first three inputs are the
/// normalized position when a grid is present; all inputs are appended to
/// the grid features.
#[derive(Debug, Clone)]
pub struct Network {
    pub grid: Option<HashGrid>,
    pub mlp: Mlp,
}

struct NetVjp {
    net: Network,
    input: Vec<f64>,
    pre: Vec<f64>,
    taps: GridTaps,
}

impl Vjp for NetVjp {
    fn backward(&self, values: &[f64], out_adj: &[f64], _in_adj: &mut [f64], param_grads: &mut [f64]) {
        let adj = self.net.mlp.backward(values, &self.input, &self.pre, out_adj, param_grads);
        if let Some(g) = &self.net.grid {
            g.scatter(&self.taps, &adj[..g.output_dim()], param_grads);
        }
    }
}

impl Network {
    fn build_input(&self, params: &[f64], x: &[f64], taps: &mut GridTaps) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.mlp.input_dim());
        if let Some(g) = &self.grid {
            g.taps([x[0], x[1], x[2]], taps);
            input.resize(g.output_dim(), 0.0);
            g.encode(params, taps, &mut input);
        }
        input.extend_from_slice(x);
        debug_assert_eq!(input.len(), self.mlp.input_dim());
        input
    }
}

impl DiffFn for Network {
    fn n_outputs(&self) -> usize {
        self.mlp.output_dim()
    }

    fn eval(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let mut taps = GridTaps::default();
        let input = self.build_input(params, x, &mut taps);
        self.mlp.forward(params, &input, out, None);
    }

    fn eval_record(&self, params: &[f64], x: &[f64], out: &mut [f64]) -> Box<dyn Vjp> {
        let mut taps = GridTaps::default();
        let input = self.build_input(params, x, &mut taps);
        let mut pre = Vec::new();
        self.mlp.forward(params, &input, out, Some(&mut pre));
        Box::new(NetVjp { net: self.clone(), input, pre, taps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{check_sampled, Ctx, Expr, ExprObjective};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_grid(store: &mut ParameterStore) -> HashGrid {
        let cfg = HashGridConfig { levels: 4, log2_table: 10, features: 2, base_res: 4.0, top_res: 32.0 };
        HashGrid::new(store, "g", cfg, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn trilinear_weights_sum_to_one() {
        let mut s = ParameterStore::new();
        let g = small_grid(&mut s);
        let mut taps = GridTaps::default();
        g.taps([0.31, 0.77, 0.05], &mut taps);
        for l in 0..4 {
            let sum: f64 = taps.weights[l * 8..l * 8 + 8].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert_eq!(g.output_dim(), 8);
    }

    #[test]
    fn resolutions_grow_to_top() {
        let mut s = ParameterStore::new();
        let g = small_grid(&mut s);
        assert_eq!(g.resolutions().first(), Some(&4));
        assert_eq!(g.resolutions().last(), Some(&32));
    }

    #[test]
    fn encoding_is_continuous() {
        let mut s = ParameterStore::new();
        let g = small_grid(&mut s);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        s.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        for _ in 0..100 {
            let u = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let a = g.encode_at(s.values(), u);
            let b = g.encode_at(s.values(), [u[0] + 1e-9, u[1] - 1e-9, u[2] + 1e-9]);
            let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            assert!(d < 1e-6, "{d}");
        }
    }

    struct NetSum<'a> {
        net: &'a Network,
        x: Vec<f64>,
    }

    impl Expr for NetSum<'_> {
        fn eval<C: Ctx>(&self, c: &C) -> C::S {
            let mut out = Vec::new();
            c.apply(self.net, &self.x, &mut out);
            let w = [0.7, -1.3, 0.4];
            out.iter().zip(w).map(|(&o, w)| o * w).fold(c.constant(0.0), |a, b| a + b)
        }
    }

    #[test]
    fn network_gradient_matches_fd() {
        let mut s = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = small_grid(&mut s);
        s.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        let mlp = Mlp::new(&mut s, "m", &[8 + 3, 16, 16, 3], Activation::Softplus, 1.0, &mut rng);
        let net = Network { grid: Some(grid), mlp };
        let e = NetSum { net: &net, x: vec![0.3, 0.6, 0.2] };
        let ids: Vec<usize> = (0..s.len()).collect();
        let r = check_sampled(&ExprObjective(e), &mut s, &ids, 30, 9, 1e-5, 1e-5, 1e-5);
        assert!(r.n_valid() >= 30);
        assert!(r.passed(), "{:?}", r.failures());
    }
}
