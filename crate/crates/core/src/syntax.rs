//! Graph convolution over a sentence's dependency tree.

use rand::Rng;

use crate::model::Ctx;
use crate::numerics::{ModelParams, Tensor, Var};

/// Symmetrically normalised adjacency `D^{-1/2} (A + I) D^{-1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjMatrix(Tensor);

impl AdjMatrix {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }
}

/// Edges are read as undirected and every token gets a self-loop, so all
/// degrees are at least one.
pub fn normalize_adjacency(edges: &[(usize, usize)], n: usize) -> AdjMatrix {
    assert!(n >= 1, "adjacency of an empty sentence");
    let mut a = Tensor::identity(n);
    for &(h, d) in edges {
        assert!(h < n && d < n, "edge ({h}, {d}) out of range for {n} tokens");
        a.set(h, d, 1.0);
        a.set(d, h, 1.0);
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / a.row_slice(i).iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j) * inv_sqrt[i] * inv_sqrt[j];
            a.set(i, j, v);
        }
    }
    AdjMatrix(a)
}

pub(crate) fn init_params<R: Rng + ?Sized>(p: &mut ModelParams, layers: usize, d_m: usize, rng: &mut R) {
    for l in 0..layers {
        p.init_uniform(format!("gcn.{l}.w"), d_m, d_m, d_m, rng);
        p.init_zeros(format!("gcn.{l}.b"), 1, d_m);
    }
    p.init_uniform("gcn.out.w", d_m, d_m, d_m, rng);
    p.init_zeros("gcn.out.b", 1, d_m);
}

#[derive(Clone, Copy, Debug)]
pub struct GcnOutput {
    /// Token states after the last layer, `n × d_m`.
    pub states: Var,
    /// Pooled syntax vector ĝ, `1 × d_m`.
    pub g_hat: Var,
}

/// `l_g` rounds of `g ← ReLU(Â g W + b)`, then the token mean mapped through
/// `W_o, b_o`.
pub fn gcn_forward(ctx: &mut Ctx, g0: Var, adj: &AdjMatrix) -> GcnOutput {
    let [n, _] = ctx.g.shape(g0);
    assert_eq!(n, adj.size(), "GCN input has {n} rows but the adjacency is {0}×{0}", adj.size());
    let a = ctx.constant(adj.0.clone());
    let mut g = g0;
    for l in 0..ctx.cfg.l_g {
        let w = ctx.param(&format!("gcn.{l}.w"));
        let gw = ctx.g.matmul(g, w);
        let agw = ctx.g.matmul(a, gw);
        let b = ctx.param(&format!("gcn.{l}.b"));
        let pre = ctx.g.add_row(agw, b);
        let act = ctx.g.relu(pre);
        g = ctx.dropout(act);
    }
    let pooled = ctx.g.mean_rows(g);
    let g_hat = ctx.linear(pooled, "gcn.out.w", Some("gcn.out.b"));
    GcnOutput { states: g, g_hat }
}
