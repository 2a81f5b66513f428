//! Encoder forward pass, its cache, and the hand-written backward pass.
//!
//! Only the `real_len` prefix of a sequence is run through the stack. This is
//! the same as masking pad keys with `-inf` for every real query row, and pad
//! outputs never reach a loss. Pad rows and columns of exported attention
//! matrices are zero.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{GuidedModel, ModelError};

const LN_EPS: f64 = 1e-5;

/// Sinusoidal position encoding: even dims `sin(pos / 10000^(2i/d))`, odd
/// dims `cos` of the same angle.
pub fn positional_encoding(position: usize, model_dim: usize) -> Vec<f64> {
    (0..model_dim)
        .map(|dim| {
            let i = (dim / 2) as f64;
            let angle = position as f64 / 10000f64.powf(2.0 * i / model_dim as f64);
            if dim % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Numerically stable softmax. `-inf` entries get exactly zero weight.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// A square attention matrix; row `p` is the distribution of query `p` over
/// key positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl AttentionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "attention matrix must be square");
        Self {
            n,
            values: rows.concat(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n..(row + 1) * self.n]
    }

    fn embed(block: ArrayView2<f64>, n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for ((r, c), v) in block.indexed_iter() {
            values[r * n + c] = *v;
        }
        Self { n, values }
    }
}

/// Everything a forward pass exposes: attention per `(layer, head)`, hidden
/// states per layer, and the task-head outputs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub num_layers: usize,
    pub heads: usize,
    pub n: usize,
    pub real_len: usize,
    /// `attention[layer * heads + head]`.
    pub attention: Vec<AttentionMatrix>,
    /// `hidden[0]` is the embedding output, `hidden[l + 1]` the output of
    /// layer `l`. Each is `real_len x model_dim`.
    pub hidden: Vec<Array2<f64>>,
    /// Vocabulary logits at the requested MLM positions, in request order.
    pub mlm_logits: Vec<Vec<f64>>,
    pub cls_logit: f64,
}

impl ForwardTrace {
    pub fn attention(&self, layer: usize, head: usize) -> &AttentionMatrix {
        &self.attention[layer * self.heads + head]
    }
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) struct LayerCache {
    x_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per head, `r x r`.
    pub(crate) attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
    ln1: LnCache,
    y1: Array2<f64>,
    h_pre: Array2<f64>,
    h_act: Array2<f64>,
    ln2: LnCache,
}

pub(crate) struct Cache {
    pub(crate) ids: Vec<u32>,
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) x0: Array2<f64>,
    pub(crate) out: Array2<f64>,
}

fn add_bias(mut m: Array2<f64>, b: ndarray::ArrayView1<f64>) -> Array2<f64> {
    m += &b;
    m
}

fn layer_norm(u: &Array2<f64>, g: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = u.ncols() as f64;
    let mean = u.sum_axis(Axis(1)) / d;
    let centered = u - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|x| x * x).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &g + &b;
    (y, LnCache { xhat, inv_std })
}

/// Returns `(dx, dg, db)`.
fn layer_norm_backward(
    dy: &Array2<f64>,
    g: ndarray::ArrayView1<f64>,
    cache: &LnCache,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let d = dy.ncols() as f64;
    let dg = (dy * &cache.xhat).sum_axis(Axis(0));
    let db = dy.sum_axis(Axis(0));
    let dxhat = dy * &g;
    let sum_dxhat = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
    let dx = (&dxhat * d - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat)
        * &(cache.inv_std.view().insert_axis(Axis(1)).mapv(|s| s / d));
    (dx, dg, db)
}

impl GuidedModel {
    pub(crate) fn forward_cached(&self, ids: &[u32], real_len: usize) -> Result<Cache, ModelError> {
        let cfg = &self.config;
        if real_len > cfg.max_len || ids.len() < real_len {
            return Err(ModelError::TooLong {
                len: real_len.max(ids.len()),
                max_len: cfg.max_len,
            });
        }
        let p = &self.params;
        let lay = &self.layout;
        let d = cfg.model_dim;
        let dk = cfg.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let r = real_len;

        let emb = lay.tok_emb.mat(p);
        let mut x = Array2::zeros((r, d));
        for (i, &id) in ids[..r].iter().enumerate() {
            let pe = positional_encoding(i, d);
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = emb[[id as usize, j]] + pe[j];
            }
        }
        let x0 = x.clone();

        let mut layers = Vec::with_capacity(cfg.num_layers);
        for ls in &lay.layers {
            let q = add_bias(x.dot(&ls.wq.mat(p)), ls.bq.vec(p));
            let k = add_bias(x.dot(&ls.wk.mat(p)), ls.bk.vec(p));
            let v = add_bias(x.dot(&ls.wv.mat(p)), ls.bv.vec(p));
            let mut concat = Array2::zeros((r, d));
            let mut attn = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let cols = s![.., h * dk..(h + 1) * dk];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                for mut row in scores.rows_mut() {
                    softmax_in_place(row.as_slice_mut().expect("contiguous row"));
                }
                concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                attn.push(scores);
            }
            let z = add_bias(concat.dot(&ls.wo.mat(p)), ls.bo.vec(p));
            let (y1, ln1) = layer_norm(&(&x + &z), ls.ln1_g.vec(p), ls.ln1_b.vec(p));
            let h_pre = add_bias(y1.dot(&ls.w1.mat(p)), ls.b1.vec(p));
            let h_act = h_pre.mapv(|v| v.max(0.0));
            let f = add_bias(h_act.dot(&ls.w2.mat(p)), ls.b2.vec(p));
            let (x_out, ln2) = layer_norm(&(&y1 + &f), ls.ln2_g.vec(p), ls.ln2_b.vec(p));
            layers.push(LayerCache {
                x_in: std::mem::replace(&mut x, x_out),
                q,
                k,
                v,
                attn,
                concat,
                ln1,
                y1,
                h_pre,
                h_act,
                ln2,
            });
        }
        Ok(Cache {
            ids: ids[..r].to_vec(),
            layers,
            x0,
            out: x,
        })
    }

    pub(crate) fn mlm_logits(&self, out: &Array2<f64>, pos: usize) -> Vec<f64> {
        let w = self.layout.mlm_w.mat(&self.params);
        let b = self.layout.mlm_b.vec(&self.params);
        (out.row(pos).dot(&w) + b).to_vec()
    }

    pub(crate) fn cls_logit(&self, out: &Array2<f64>) -> f64 {
        let w = self.layout.cls_w.vec(&self.params);
        out.row(0).dot(&w) + self.params[self.layout.cls_b.offset]
    }

    /// Runs the encoder over `ids[..real_len]` and returns the full trace,
    /// with MLM logits at `mlm_positions`.
    pub fn forward(&self, ids: &[u32], real_len: usize, mlm_positions: &[usize]) -> Result<ForwardTrace, ModelError> {
        let cache = self.forward_cached(ids, real_len)?;
        let n = ids.len().max(real_len);
        let attention = cache
            .layers
            .iter()
            .flat_map(|l| l.attn.iter().map(|a| AttentionMatrix::embed(a.view(), n)))
            .collect();
        let mut hidden = vec![cache.x0.clone()];
        for (i, l) in cache.layers.iter().enumerate().skip(1) {
            debug_assert_eq!(i, hidden.len());
            hidden.push(l.x_in.clone());
        }
        hidden.push(cache.out.clone());
        Ok(ForwardTrace {
            num_layers: self.config.num_layers,
            heads: self.config.heads,
            n,
            real_len,
            attention,
            hidden,
            mlm_logits: mlm_positions.iter().map(|&p| self.mlm_logits(&cache.out, p)).collect(),
            cls_logit: self.cls_logit(&cache.out),
        })
    }

    /// Accumulates parameter gradients into `grad` given the gradient of the
    /// loss w.r.t. the final hidden states (`d_out`) and extra gradients on
    /// attention probabilities (`d_attn[layer][head]`, `r x r`, optional).
    pub(crate) fn backward(
        &self,
        cache: &Cache,
        d_out: Array2<f64>,
        d_attn: &[Vec<Option<Array2<f64>>>],
        grad: &mut [f64],
    ) {
        let cfg = &self.config;
        let p = &self.params;
        let dk = cfg.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let r = cache.out.nrows();
        let mut dx = d_out;

        for (li, (ls, lc)) in self.layout.layers.iter().zip(&cache.layers).enumerate().rev() {
            // Second residual block.
            let (du2, dg2, db2) = layer_norm_backward(&dx, ls.ln2_g.vec(p), &lc.ln2);
            ls.ln2_g.vec_mut(grad).scaled_add(1.0, &dg2);
            ls.ln2_b.vec_mut(grad).scaled_add(1.0, &db2);
            let mut dy1 = du2.clone();
            let df = du2;
            ls.w2.mat_mut(grad).scaled_add(1.0, &lc.h_act.t().dot(&df));
            ls.b2.vec_mut(grad).scaled_add(1.0, &df.sum_axis(Axis(0)));
            let mut dh = df.dot(&ls.w2.mat(p).t());
            ndarray::Zip::from(&mut dh)
                .and(&lc.h_pre)
                .for_each(|g, &hp| {
                    if hp <= 0.0 {
                        *g = 0.0
                    }
                });
            ls.w1.mat_mut(grad).scaled_add(1.0, &lc.y1.t().dot(&dh));
            ls.b1.vec_mut(grad).scaled_add(1.0, &dh.sum_axis(Axis(0)));
            dy1 += &dh.dot(&ls.w1.mat(p).t());

            // First residual block.
            let (du1, dg1, db1) = layer_norm_backward(&dy1, ls.ln1_g.vec(p), &lc.ln1);
            ls.ln1_g.vec_mut(grad).scaled_add(1.0, &dg1);
            ls.ln1_b.vec_mut(grad).scaled_add(1.0, &db1);
            let dz = &du1;
            ls.wo.mat_mut(grad).scaled_add(1.0, &lc.concat.t().dot(dz));
            ls.bo.vec_mut(grad).scaled_add(1.0, &dz.sum_axis(Axis(0)));
            let dconcat = dz.dot(&ls.wo.mat(p).t());

            let mut dq = Array2::zeros((r, cfg.model_dim));
            let mut dk_all = Array2::zeros((r, cfg.model_dim));
            let mut dv = Array2::zeros((r, cfg.model_dim));
            for h in 0..cfg.heads {
                let cols = s![.., h * dk..(h + 1) * dk];
                let a = &lc.attn[h];
                let doh = dconcat.slice(cols);
                let mut da = doh.dot(&lc.v.slice(cols).t());
                if let Some(extra) = d_attn.get(li).and_then(|l| l[h].as_ref()) {
                    da += extra;
                }
                dv.slice_mut(cols).assign(&a.t().dot(&doh));
                let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = (da - &row_dot) * a * scale;
                dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
                dk_all.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
            }
            let mut dx_in = du1;
            for (w, b, d) in [(ls.wq, ls.bq, &dq), (ls.wk, ls.bk, &dk_all), (ls.wv, ls.bv, &dv)] {
                w.mat_mut(grad).scaled_add(1.0, &lc.x_in.t().dot(d));
                b.vec_mut(grad).scaled_add(1.0, &d.sum_axis(Axis(0)));
                dx_in += &d.dot(&w.mat(p).t());
            }
            dx = dx_in;
        }

        let mut demb = self.layout.tok_emb.mat_mut(grad);
        for (i, &id) in cache.ids.iter().enumerate() {
            demb.row_mut(id as usize).scaled_add(1.0, &dx.row(i));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::patterns::HeadAssignment;

    #[test]
    fn positional_encoding_values() {
        let pe0 = positional_encoding(0, 8);
        assert_eq!(pe0, [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let pe1 = positional_encoding(1, 2);
        assert!((pe1[0] - 0.841_470_984_807_896_5).abs() < 1e-12);
        assert!((pe1[1] - 0.540_302_305_868_139_8).abs() < 1e-12);
        for pos in [0, 3, 17, 63] {
            assert!(positional_encoding(pos, 64).iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn softmax_uniform_and_masked() {
        let mut row = [0.7; 4];
        softmax_in_place(&mut row);
        assert_eq!(row, [0.25; 4]);
        let mut row = [1.0, 2.0, f64::NEG_INFINITY, 0.5];
        softmax_in_place(&mut row);
        assert_eq!(row[2], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trace_shapes_and_padding() {
        let cfg = ModelConfig {
            num_layers: 2,
            heads: 2,
            model_dim: 8,
            ffn_dim: 12,
            vocab_size: 16,
            max_len: 10,
            mask_rate: 0.15,
            seed: 3,
        };
        let m = GuidedModel::new(cfg, HeadAssignment::none(2, 2), 0.0).unwrap();
        let ids = [0, 7, 8, 9, 2, 4, 4, 4, 4, 4];
        let t = m.forward(&ids, 5, &[2]).unwrap();
        assert_eq!(t.attention.len(), 4);
        assert_eq!(t.hidden.len(), 3);
        assert_eq!(t.mlm_logits[0].len(), 16);
        for a in &t.attention {
            assert_eq!(a.n, 10);
            for r in 0..5 {
                assert!((a.row(r)[..5].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(a.row(r)[5..].iter().all(|&v| v == 0.0));
            }
        }
        assert!(matches!(
            m.forward(&[0; 11], 11, &[]),
            Err(ModelError::TooLong { .. })
        ));
    }
}
