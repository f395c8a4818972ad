//! A small convolutional network with two independent heads, written out by
//! hand so the core stays dependency-free and bit-reproducible.
//!
//! Layout: `stages` x (3x3 conv, ReLU, 2x2 max-pool) -> global average and
//! max pooling -> two heads, each `Dense -> ReLU -> Dropout -> Dense`. The
//! score head emits one value; the optional response head emits one value
//! per frequency sample.
//!
//! Tensors are `f32`, channel-major (`C x H x W`). All reductions run in a
//! fixed order so training is deterministic for a given seed.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Output channels of each conv stage.
    pub conv_channels: Vec<usize>,
    /// Width of the hidden layer in each head.
    pub hidden: usize,
    /// Response head outputs; 0 disables the head.
    pub response_outputs: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            conv_channels: vec![8, 16, 24, 32],
            hidden: 32,
            response_outputs: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct ConvLayer {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Dense {
    nin: usize,
    nout: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Head {
    hidden: Dense,
    out: Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layout {
    convs: Vec<ConvLayer>,
    features: usize,
    score: Head,
    response: Option<Head>,
    n_params: usize,
}

impl Layout {
    fn new(cfg: &NetConfig, in_channels: usize, h: usize, w: usize) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let (mut cin, mut h, mut w) = (in_channels, h, w);
        let mut convs = Vec::new();
        for &cout in &cfg.conv_channels {
            let w_off = take(cout * cin * 9);
            let b_off = take(cout);
            let (ph, pw) = (h.div_ceil(2), w.div_ceil(2));
            convs.push(ConvLayer {
                cin,
                cout,
                h,
                w,
                ph,
                pw,
                w_off,
                b_off,
            });
            cin = cout;
            h = ph;
            w = pw;
        }
        let features = 2 * cin;
        let mut dense = |nin: usize, nout: usize| Dense {
            nin,
            nout,
            w_off: take(nin * nout),
            b_off: take(nout),
        };
        let score = Head {
            hidden: dense(features, cfg.hidden),
            out: dense(cfg.hidden, 1),
        };
        let response = (cfg.response_outputs > 0).then(|| Head {
            hidden: dense(features, cfg.hidden),
            out: dense(cfg.hidden, cfg.response_outputs),
        });
        Layout {
            convs,
            features,
            score,
            response,
            n_params: off,
        }
    }
}

/// Network weights plus the shape they were built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub cfg: NetConfig,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    #[serde(skip)]
    layout: Option<Layout>,
    pub params: Vec<f32>,
}

/// Activations kept from a training-mode forward pass.
#[derive(Default)]
pub struct Trace {
    acts: Vec<Vec<f32>>,
    pool_idx: Vec<Vec<u32>>,
    features: Vec<f32>,
    feat_max_idx: Vec<u32>,
    score: HeadTrace,
    response: HeadTrace,
    pub score_out: f32,
    pub response_out: Vec<f32>,
}

#[derive(Default)]
struct HeadTrace {
    hidden: Vec<f32>,
    mask: Vec<f32>,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(
        cfg: NetConfig,
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        rng: &mut R,
    ) -> Self {
        let layout = Layout::new(&cfg, in_channels, in_h, in_w);
        let mut params = vec![0.0f32; layout.n_params];
        for c in &layout.convs {
            he_init(&mut params[c.w_off..c.w_off + c.cout * c.cin * 9], c.cin * 9, rng);
        }
        let heads = core::iter::once(layout.score).chain(layout.response);
        for head in heads {
            for d in [head.hidden, head.out] {
                he_init(&mut params[d.w_off..d.w_off + d.nin * d.nout], d.nin, rng);
            }
        }
        Network {
            cfg,
            in_channels,
            in_h,
            in_w,
            layout: Some(layout),
            params,
        }
    }

    /// Rebuilds a network from stored weights.
    pub fn from_params(
        cfg: NetConfig,
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        params: Vec<f32>,
    ) -> Option<Self> {
        let layout = Layout::new(&cfg, in_channels, in_h, in_w);
        (layout.n_params == params.len()).then_some(Network {
            cfg,
            in_channels,
            in_h,
            in_w,
            layout: Some(layout),
            params,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> Layout {
        self.layout
            .clone()
            .unwrap_or_else(|| Layout::new(&self.cfg, self.in_channels, self.in_h, self.in_w))
    }

    pub fn has_response_head(&self) -> bool {
        self.cfg.response_outputs > 0
    }

    /// Inference: score head only.
    pub fn predict(&self, input: &[f32]) -> f32 {
        let layout = self.layout();
        let mut trace = Trace::default();
        self.run(&layout, input, None::<&mut rand_chacha::ChaCha8Rng>, 0.0, false, &mut trace);
        trace.score_out
    }

    /// Inference on both heads.
    pub fn predict_all(&self, input: &[f32]) -> (f32, Vec<f32>) {
        let layout = self.layout();
        let mut trace = Trace::default();
        self.run(&layout, input, None::<&mut rand_chacha::ChaCha8Rng>, 0.0, true, &mut trace);
        (trace.score_out, trace.response_out)
    }

    /// Training-mode forward pass; dropout active when `rng` is given.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        input: &[f32],
        rng: &mut R,
        dropout: f32,
        trace: &mut Trace,
    ) {
        let layout = self.layout();
        self.run(&layout, input, Some(rng), dropout, true, trace);
    }

    fn run<R: Rng + ?Sized>(
        &self,
        layout: &Layout,
        input: &[f32],
        mut rng: Option<&mut R>,
        dropout: f32,
        with_response: bool,
        t: &mut Trace,
    ) {
        assert_eq!(input.len(), self.in_channels * self.in_h * self.in_w);
        let p = &self.params;
        t.acts.clear();
        t.pool_idx.clear();
        let mut x = input.to_vec();
        for c in &layout.convs {
            let mut y = vec![0.0f32; c.cout * c.h * c.w];
            conv3x3_forward(c, &p[c.w_off..], &p[c.b_off..c.b_off + c.cout], &x, &mut y);
            y.iter_mut().for_each(|v| *v = v.max(0.0));
            let (pooled, idx) = maxpool2(&y, c.cout, c.h, c.w, c.ph, c.pw);
            t.acts.push(x);
            t.acts.push(y);
            t.pool_idx.push(idx);
            x = pooled;
        }
        // global average + max pooling
        let last = layout.convs.last();
        let (ch, hw) = last.map_or((self.in_channels, self.in_h * self.in_w), |c| {
            (c.cout, c.ph * c.pw)
        });
        t.features.clear();
        t.features.resize(2 * ch, 0.0);
        t.feat_max_idx.clear();
        t.feat_max_idx.resize(ch, 0);
        for k in 0..ch {
            let plane = &x[k * hw..(k + 1) * hw];
            t.features[k] = sum(plane) / hw as f32;
            let (mut best, mut bi) = (f32::NEG_INFINITY, 0);
            for (i, &v) in plane.iter().enumerate() {
                if v > best {
                    best = v;
                    bi = i;
                }
            }
            t.features[ch + k] = best;
            t.feat_max_idx[k] = bi as u32;
        }
        t.acts.push(x);

        t.score_out = head_forward(&layout.score, p, &t.features, rng.as_deref_mut(), dropout, &mut t.score)[0];
        t.response_out.clear();
        if with_response {
            if let Some(h) = &layout.response {
                t.response_out = head_forward(h, p, &t.features, rng, dropout, &mut t.response);
            }
        }
    }

    /// Accumulates parameter gradients of `dscore * score + dresp . response`
    /// into `grads`.
    pub fn backward(&self, t: &Trace, dscore: f32, dresp: Option<&[f32]>, grads: &mut [f32]) {
        let layout = self.layout();
        let p = &self.params;
        let mut dfeat = vec![0.0f32; layout.features];
        head_backward(&layout.score, p, &t.features, &t.score, &[dscore], grads, &mut dfeat);
        if let (Some(h), Some(dr)) = (&layout.response, dresp) {
            head_backward(h, p, &t.features, &t.response, dr, grads, &mut dfeat);
        }

        let Some(last) = layout.convs.last() else {
            return;
        };
        let (ch, hw) = (last.cout, last.ph * last.pw);
        let mut g = vec![0.0f32; ch * hw];
        for k in 0..ch {
            let avg = dfeat[k] / hw as f32;
            g[k * hw..(k + 1) * hw].iter_mut().for_each(|v| *v = avg);
            g[k * hw + t.feat_max_idx[k] as usize] += dfeat[ch + k];
        }

        for (li, c) in layout.convs.iter().enumerate().rev() {
            let input = &t.acts[2 * li];
            let out = &t.acts[2 * li + 1];
            // unpool, then ReLU gate
            let mut gy = vec![0.0f32; c.cout * c.h * c.w];
            for (gi, &src) in g.iter().zip(&t.pool_idx[li]) {
                gy[src as usize] += gi;
            }
            for (gv, &ov) in gy.iter_mut().zip(out) {
                if ov <= 0.0 {
                    *gv = 0.0;
                }
            }
            let need_input_grad = li > 0;
            let mut gx = if need_input_grad {
                vec![0.0f32; c.cin * c.h * c.w]
            } else {
                Vec::new()
            };
            let (gw, rest) = grads[c.w_off..].split_at_mut(c.cout * c.cin * 9);
            let gb = &mut rest[c.b_off - c.w_off - c.cout * c.cin * 9..][..c.cout];
            conv3x3_backward(c, &p[c.w_off..], input, &gy, gw, gb, need_input_grad.then_some(&mut gx[..]));
            g = gx;
        }
    }
}

fn he_init<R: Rng + ?Sized>(w: &mut [f32], fan_in: usize, rng: &mut R) {
    let bound = libm::sqrtf(6.0 / fan_in as f32);
    for v in w {
        *v = rng.gen_range(-bound..bound);
    }
}

fn sum(v: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = v.chunks_exact(8);
    let rem = chunks.remainder();
    for c in chunks {
        for i in 0..8 {
            acc[i] += c[i];
        }
    }
    let mut s = acc.iter().sum::<f32>();
    for &r in rem {
        s += r;
    }
    s
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = acc.iter().sum::<f32>();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Valid index ranges for a tap offset `d` in `-1..=1` over length `n`:
/// output positions `lo..hi` read input positions `lo+d..hi+d`.
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

fn conv3x3_forward(c: &ConvLayer, w: &[f32], b: &[f32], x: &[f32], y: &mut [f32]) {
    let (h, wd) = (c.h, c.w);
    let plane = h * wd;
    for co in 0..c.cout {
        let out = &mut y[co * plane..(co + 1) * plane];
        out.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..c.cin {
            let inp = &x[ci * plane..(ci + 1) * plane];
            let k = &w[(co * c.cin + ci) * 9..][..9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (r0, r1) = tap_range(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (c0, c1) = tap_range(dx, wd);
                    let wv = k[ky * 3 + kx];
                    for r in r0..r1 {
                        let ir = (r as isize + dy) as usize;
                        let o = &mut out[r * wd + c0..r * wd + c1];
                        let i0 = (ir * wd) as isize + c0 as isize + dx;
                        let i = &inp[i0 as usize..i0 as usize + (c1 - c0)];
                        for (ov, iv) in o.iter_mut().zip(i) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
}

fn conv3x3_backward(
    c: &ConvLayer,
    w: &[f32],
    x: &[f32],
    gy: &[f32],
    gw: &mut [f32],
    gb: &mut [f32],
    mut gx: Option<&mut [f32]>,
) {
    let (h, wd) = (c.h, c.w);
    let plane = h * wd;
    for co in 0..c.cout {
        let g = &gy[co * plane..(co + 1) * plane];
        gb[co] += sum(g);
        for ci in 0..c.cin {
            let inp = &x[ci * plane..(ci + 1) * plane];
            let kidx = (co * c.cin + ci) * 9;
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (r0, r1) = tap_range(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (c0, c1) = tap_range(dx, wd);
                    let n = c1 - c0;
                    let mut acc = 0.0f32;
                    for r in r0..r1 {
                        let ir = (r as isize + dy) as usize;
                        let i0 = ((ir * wd) as isize + c0 as isize + dx) as usize;
                        acc += dot(&g[r * wd + c0..r * wd + c1], &inp[i0..i0 + n]);
                    }
                    gw[kidx + ky * 3 + kx] += acc;
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = w[kidx + ky * 3 + kx];
                        let gxp = &mut gx[ci * plane..(ci + 1) * plane];
                        for r in r0..r1 {
                            let ir = (r as isize + dy) as usize;
                            let i0 = ((ir * wd) as isize + c0 as isize + dx) as usize;
                            let src = &g[r * wd + c0..r * wd + c1];
                            for (d, s) in gxp[i0..i0 + n].iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling, ceil mode. Returns pooled values and source indices.
fn maxpool2(x: &[f32], ch: usize, h: usize, w: usize, ph: usize, pw: usize) -> (Vec<f32>, Vec<u32>) {
    let mut out = vec![0.0f32; ch * ph * pw];
    let mut idx = vec![0u32; ch * ph * pw];
    for k in 0..ch {
        let base = k * h * w;
        for pr in 0..ph {
            for pc in 0..pw {
                let (mut best, mut bi) = (f32::NEG_INFINITY, 0usize);
                for r in 2 * pr..(2 * pr + 2).min(h) {
                    for c in 2 * pc..(2 * pc + 2).min(w) {
                        let i = base + r * w + c;
                        if x[i] > best {
                            best = x[i];
                            bi = i;
                        }
                    }
                }
                let o = k * ph * pw + pr * pw + pc;
                out[o] = best;
                idx[o] = bi as u32;
            }
        }
    }
    (out, idx)
}

fn dense_forward(d: &Dense, p: &[f32], x: &[f32]) -> Vec<f32> {
    (0..d.nout)
        .map(|o| p[d.b_off + o] + dot(&p[d.w_off + o * d.nin..][..d.nin], x))
        .collect()
}

fn head_forward<R: Rng + ?Sized>(
    head: &Head,
    p: &[f32],
    features: &[f32],
    rng: Option<&mut R>,
    dropout: f32,
    t: &mut HeadTrace,
) -> Vec<f32> {
    let mut hidden = dense_forward(&head.hidden, p, features);
    hidden.iter_mut().for_each(|v| *v = v.max(0.0));
    t.mask.clear();
    match rng {
        Some(rng) if dropout > 0.0 => {
            let keep = 1.0 - dropout;
            for v in hidden.iter_mut() {
                let m = if rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 };
                t.mask.push(m);
                *v *= m;
            }
        }
        _ => t.mask.resize(hidden.len(), 1.0),
    }
    let out = dense_forward(&head.out, p, &hidden);
    t.hidden = hidden;
    out
}

fn head_backward(
    head: &Head,
    p: &[f32],
    features: &[f32],
    t: &HeadTrace,
    dout: &[f32],
    grads: &mut [f32],
    dfeat: &mut [f32],
) {
    let (hd, od) = (&head.hidden, &head.out);
    let mut dh = vec![0.0f32; od.nin];
    for (o, &g) in dout.iter().enumerate() {
        grads[od.b_off + o] += g;
        let row = od.w_off + o * od.nin;
        for i in 0..od.nin {
            grads[row + i] += g * t.hidden[i];
            dh[i] += g * p[row + i];
        }
    }
    for (i, d) in dh.iter_mut().enumerate() {
        // hidden was relu then dropout-scaled; zero output means no gradient
        *d = if t.hidden[i] > 0.0 { *d * t.mask[i] } else { 0.0 };
    }
    for (o, &g) in dh.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grads[hd.b_off + o] += g;
        let row = hd.w_off + o * hd.nin;
        for i in 0..hd.nin {
            grads[row + i] += g * features[i];
            dfeat[i] += g * p[row + i];
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f32,
    pub weight_decay: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, lr: f32, weight_decay: f32) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let bc1 = 1.0 - libm::powf(self.beta1, self.t as f32);
        let bc2 = 1.0 - libm::powf(self.beta2, self.t as f32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] = params[i] * decay - self.lr * mh / (libm::sqrtf(vh) + self.eps);
        }
    }
}
