//! Flat parameter storage with named tensor slots, and the Adam optimizer.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a>(&self, data: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &data[self.range()]).expect("slot shape")
    }

    pub fn mat_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut data[self.range()])
            .expect("slot shape")
    }

    pub fn vec<'a>(&self, data: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&data[self.range()])
    }

    pub fn vec_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut data[self.range()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlots {
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
    pub ln1_g: Slot,
    pub ln1_b: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
    pub ln2_g: Slot,
    pub ln2_b: Slot,
}

/// Parameter tensors in declaration order: token embedding, then per layer
/// Q/K/V/output projections, first layer norm, feed-forward, second layer
/// norm, then the MLM head and the pair-classification head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tok_emb: Slot,
    pub layers: Vec<LayerSlots>,
    pub mlm_w: Slot,
    pub mlm_b: Slot,
    pub cls_w: Slot,
    pub cls_b: Slot,
    pub total: usize,
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, rows: usize, cols: usize) -> Slot {
        let s = Slot {
            offset: self.0,
            rows,
            cols,
        };
        self.0 += rows * cols;
        s
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.model_dim;
        let f = cfg.ffn_dim;
        let mut a = Alloc(0);
        let tok_emb = a.take(cfg.vocab_size, d);
        let layers = (0..cfg.num_layers)
            .map(|_| LayerSlots {
                wq: a.take(d, d),
                bq: a.take(1, d),
                wk: a.take(d, d),
                bk: a.take(1, d),
                wv: a.take(d, d),
                bv: a.take(1, d),
                wo: a.take(d, d),
                bo: a.take(1, d),
                ln1_g: a.take(1, d),
                ln1_b: a.take(1, d),
                w1: a.take(d, f),
                b1: a.take(1, f),
                w2: a.take(f, d),
                b2: a.take(1, d),
                ln2_g: a.take(1, d),
                ln2_b: a.take(1, d),
            })
            .collect();
        let mlm_w = a.take(d, cfg.vocab_size);
        let mlm_b = a.take(1, cfg.vocab_size);
        let cls_w = a.take(1, d);
        let cls_b = a.take(1, 1);
        Self {
            tok_emb,
            layers,
            mlm_w,
            mlm_b,
            cls_w,
            cls_b,
            total: a.0,
        }
    }

    /// Every slot in declaration order with a short name.
    pub fn named_slots(&self) -> Vec<(String, Slot)> {
        let mut out = vec![("tok_emb".to_string(), self.tok_emb)];
        for (l, s) in self.layers.iter().enumerate() {
            for (name, slot) in [
                ("wq", s.wq),
                ("bq", s.bq),
                ("wk", s.wk),
                ("bk", s.bk),
                ("wv", s.wv),
                ("bv", s.bv),
                ("wo", s.wo),
                ("bo", s.bo),
                ("ln1_g", s.ln1_g),
                ("ln1_b", s.ln1_b),
                ("w1", s.w1),
                ("b1", s.b1),
                ("w2", s.w2),
                ("b2", s.b2),
                ("ln2_g", s.ln2_g),
                ("ln2_b", s.ln2_b),
            ] {
                out.push((format!("layer{l}.{name}"), slot));
            }
        }
        out.push(("mlm_w".into(), self.mlm_w));
        out.push(("mlm_b".into(), self.mlm_b));
        out.push(("cls_w".into(), self.cls_w));
        out.push(("cls_b".into(), self.cls_b));
        out
    }

    /// Name of the slot holding flat index `i`.
    pub fn slot_name(&self, i: usize) -> Option<String> {
        self.named_slots()
            .into_iter()
            .find(|(_, s)| s.range().contains(&i))
            .map(|(n, _)| n)
    }
}

/// Initial parameters: Xavier-normal weight matrices, unit-variance token
/// embeddings, zero biases, identity layer norms.
pub fn init_params(cfg: &ModelConfig, layout: &ParamLayout) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = vec![0.0; layout.total];
    let mut fill = |slot: Slot, std: f64, data: &mut [f64]| {
        let dist = Normal::new(0.0, std).expect("finite std");
        for x in &mut data[slot.range()] {
            *x = dist.sample(&mut rng);
        }
    };
    let xavier = |s: Slot| (2.0 / (s.rows + s.cols) as f64).sqrt();
    fill(layout.tok_emb, 1.0, &mut data);
    for l in &layout.layers {
        for s in [l.wq, l.wk, l.wv, l.wo, l.w1, l.w2] {
            fill(s, xavier(s), &mut data);
        }
        for s in [l.ln1_g, l.ln2_g] {
            data[s.range()].fill(1.0);
        }
    }
    fill(layout.mlm_w, xavier(layout.mlm_w), &mut data);
    fill(layout.cls_w, xavier(layout.cls_w), &mut data);
    data
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
