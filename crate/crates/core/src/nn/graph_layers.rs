use ndarray::{Array1, Axis};
use rand::Rng;

use super::layers::{Ctx, Mlp, MlpCache, MlpShape};
use super::params::{ParamSet, Slot};
use super::{check_finite, Dense2D};

/// Compressed in-neighbour lists: `neighbors(v)` are the nodes `u` with an
/// arc `u -> v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Adjacency {
    pub fn from_lists<L: AsRef<[usize]>>(lists: &[L]) -> Self {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in lists {
            for &u in l.as_ref() {
                assert!(u < n, "neighbour index {u} out of range for {n} nodes");
                indices.push(u);
            }
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    /// Builds in-neighbour lists from `(from, to)` arcs.
    pub fn from_arcs(num_nodes: usize, arcs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut lists = vec![Vec::new(); num_nodes];
        for (u, v) in arcs {
            lists[v].push(u);
        }
        Self::from_lists(&lists)
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_arcs(&self) -> usize {
        self.indices.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.indices[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.num_nodes();
        let mut lists = vec![Vec::new(); n];
        for v in 0..n {
            lists[perm[v]] = self.neighbors(v).iter().map(|&u| perm[u]).collect();
        }
        Self::from_lists(&lists)
    }
}

/// `(1 + eps) * h_v + sum of h_u over in-neighbours u`.
pub fn gin_aggregate(h: &Dense2D, adj: &Adjacency, eps: f64) -> Dense2D {
    assert_eq!(h.nrows(), adj.num_nodes(), "embedding rows vs adjacency");
    let mut out = h * (1.0 + eps);
    for v in 0..adj.num_nodes() {
        for &u in adj.neighbors(v) {
            let src = h.row(u).to_owned();
            let mut dst = out.row_mut(v);
            dst += &src;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct GinLayer {
    pub eps: f64,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct GinCache {
    mlp: MlpCache,
}

impl GinLayer {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        buffers: &mut ParamSet,
        name: &str,
        eps: f64,
        shape: &MlpShape,
        rng: &mut R,
    ) -> Self {
        Self {
            eps,
            mlp: Mlp::new(params, buffers, &format!("{name}.mlp"), shape, rng),
        }
    }

    pub fn forward(&self, ctx: &Ctx, h: &Dense2D, adj: &Adjacency) -> (Dense2D, GinCache) {
        let agg = gin_aggregate(h, adj, self.eps);
        let (out, mlp) = self.mlp.forward(ctx, &agg);
        (out, GinCache { mlp })
    }

    pub fn backward(
        &self,
        params: &[f64],
        cache: &GinCache,
        adj: &Adjacency,
        dy: &Dense2D,
        grads: &mut [f64],
    ) -> Dense2D {
        let dagg = self.mlp.backward(params, &cache.mlp, dy, grads);
        let mut dh = &dagg * (1.0 + self.eps);
        for v in 0..adj.num_nodes() {
            for &u in adj.neighbors(v) {
                let g = dagg.row(v).to_owned();
                let mut dst = dh.row_mut(u);
                dst += &g;
            }
        }
        dh
    }
}

pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
pub struct GatHead {
    pub weight: Slot,
    pub att_src: Slot,
    pub att_dst: Slot,
}

/// Single graph-attention layer. Each node attends over itself and its
/// in-neighbours; heads are averaged and a shared bias added.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub bias: Slot,
}

#[derive(Debug, Clone)]
struct HeadCache {
    z: Dense2D,
    pre: Vec<f64>,
    alpha: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GatCache {
    input: Dense2D,
    offsets: Vec<usize>,
    sources: Vec<usize>,
    heads: Vec<HeadCache>,
}

impl GatCache {
    /// Attention weights of `head` for node `v`, aligned with `[v] ++ in-neighbours`.
    pub fn attention(&self, head: usize, v: usize) -> &[f64] {
        &self.heads[head].alpha[self.offsets[v]..self.offsets[v + 1]]
    }
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        GAT_NEGATIVE_SLOPE * v
    }
}

impl GatLayer {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        num_heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(num_heads >= 1, "at least one attention head");
        let wb = (6.0 / (input + output) as f64).sqrt();
        let ab = (6.0 / (output + 1) as f64).sqrt();
        let heads = (0..num_heads)
            .map(|h| GatHead {
                weight: params.add_uniform(
                    format!("{name}.head{h}.weight"),
                    input,
                    output,
                    wb,
                    rng,
                ),
                att_src: params.add_uniform(format!("{name}.head{h}.att_src"), 1, output, ab, rng),
                att_dst: params.add_uniform(format!("{name}.head{h}.att_dst"), 1, output, ab, rng),
            })
            .collect();
        Self {
            heads,
            bias: params.add_const(format!("{name}.bias"), 1, output, 0.0),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.bias.cols
    }

    pub fn forward(&self, ctx: &Ctx, h: &Dense2D, adj: &Adjacency) -> (Dense2D, GatCache) {
        let n = adj.num_nodes();
        assert_eq!(h.nrows(), n, "embedding rows vs adjacency");
        check_finite(h, "gat input");
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::with_capacity(n + adj.num_arcs());
        offsets.push(0);
        for v in 0..n {
            sources.push(v);
            sources.extend_from_slice(adj.neighbors(v));
            offsets.push(sources.len());
        }
        let scale = 1.0 / self.heads.len() as f64;
        let mut out = Dense2D::zeros((n, self.output_dim()));
        let mut caches = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let w = head.weight.view(ctx.params);
            assert_eq!(h.ncols(), w.nrows(), "gat input width");
            let z = h.dot(&w);
            let s_src: Array1<f64> = z.dot(&head.att_src.view(ctx.params).row(0));
            let s_dst: Array1<f64> = z.dot(&head.att_dst.view(ctx.params).row(0));
            let mut pre = vec![0.0; sources.len()];
            let mut alpha = vec![0.0; sources.len()];
            for v in 0..n {
                let range = offsets[v]..offsets[v + 1];
                let mut max = f64::NEG_INFINITY;
                for e in range.clone() {
                    pre[e] = s_dst[v] + s_src[sources[e]];
                    max = max.max(leaky(pre[e]));
                }
                let mut total = 0.0;
                for e in range.clone() {
                    alpha[e] = (leaky(pre[e]) - max).exp();
                    total += alpha[e];
                }
                let mut row = out.row_mut(v);
                for e in range {
                    alpha[e] /= total;
                    row.scaled_add(alpha[e] * scale, &z.row(sources[e]));
                }
            }
            caches.push(HeadCache { z, pre, alpha });
        }
        out += &self.bias.view(ctx.params);
        check_finite(&out, "gat output");
        (
            out,
            GatCache {
                input: h.clone(),
                offsets,
                sources,
                heads: caches,
            },
        )
    }

    pub fn backward(
        &self,
        params: &[f64],
        cache: &GatCache,
        dy: &Dense2D,
        grads: &mut [f64],
    ) -> Dense2D {
        {
            let mut db = self.bias.view_mut(grads);
            db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        let n = dy.nrows();
        let scale = 1.0 / self.heads.len() as f64;
        let mut dh = Dense2D::zeros(cache.input.raw_dim());
        for (head, hc) in self.heads.iter().zip(&cache.heads) {
            let z = &hc.z;
            let mut dz = Dense2D::zeros(z.raw_dim());
            let mut ds_src = Array1::<f64>::zeros(n);
            let mut ds_dst = Array1::<f64>::zeros(n);
            for v in 0..n {
                let range = cache.offsets[v]..cache.offsets[v + 1];
                let g = dy.row(v).mapv(|x| x * scale);
                let dalpha: Vec<f64> = range
                    .clone()
                    .map(|e| g.dot(&z.row(cache.sources[e])))
                    .collect();
                let weighted: f64 = range
                    .clone()
                    .zip(&dalpha)
                    .map(|(e, d)| hc.alpha[e] * d)
                    .sum();
                for (e, d) in range.zip(&dalpha) {
                    let u = cache.sources[e];
                    let dl = hc.alpha[e] * (d - weighted);
                    let dpre = if hc.pre[e] > 0.0 {
                        dl
                    } else {
                        GAT_NEGATIVE_SLOPE * dl
                    };
                    ds_dst[v] += dpre;
                    ds_src[u] += dpre;
                    dz.row_mut(u).scaled_add(hc.alpha[e], &g);
                }
            }
            let a_src = head.att_src.view(params).row(0).to_owned();
            let a_dst = head.att_dst.view(params).row(0).to_owned();
            for v in 0..n {
                let mut row = dz.row_mut(v);
                row.scaled_add(ds_src[v], &a_src);
                row.scaled_add(ds_dst[v], &a_dst);
            }
            {
                let mut g = head.att_src.view_mut(grads);
                g += &z.t().dot(&ds_src).insert_axis(Axis(0));
            }
            {
                let mut g = head.att_dst.view_mut(grads);
                g += &z.t().dot(&ds_dst).insert_axis(Axis(0));
            }
            ndarray::linalg::general_mat_mul(
                1.0,
                &cache.input.t(),
                &dz,
                1.0,
                &mut head.weight.view_mut(grads),
            );
            dh += &dz.dot(&head.weight.view(params).t());
        }
        dh
    }
}
