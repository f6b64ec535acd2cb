//! Independent reference implementations used by tests and `selfcheck`.
//! Nothing here calls the core kernels it checks: attention is spelled out
//! with plain loops over token lists, the rectangle oracle sweeps angles,
//! and the matcher sorts every candidate.

use guidestage_core::attention::{AttnWeights, StreamBundle};
use guidestage_core::body::Orientation;
use guidestage_core::geometry::{Point, RotatedRect};
use guidestage_core::template::{HoldingHand, MotionTemplate};
use guidestage_core::Tensor;

type Tokens = Vec<Vec<f64>>;

fn rows(t: &Tensor, c: usize) -> Tokens {
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

fn project(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let n = b.len();
    (0..n)
        .map(|j| b.data()[j] + x.iter().enumerate().map(|(i, xi)| xi * w.data()[i * n + j]).sum::<f64>())
        .collect()
}

/// Multi-head attention of each query token over `kv`, written out in
/// full: scores, max-shifted exponentials, weighted sum, output projection.
pub fn dense_attention(q_in: &Tokens, kv: &Tokens, w: &AttnWeights, heads: usize) -> Tokens {
    let c = w.bq.len();
    let dh = c / heads;
    let qs: Tokens = q_in.iter().map(|x| project(x, &w.wq, &w.bq)).collect();
    let ks: Tokens = kv.iter().map(|x| project(x, &w.wk, &w.bk)).collect();
    let vs: Tokens = kv.iter().map(|x| project(x, &w.wv, &w.bv)).collect();
    let scale = 1.0 / (dh as f64).sqrt();
    qs.iter()
        .map(|q| {
            let mut o = vec![0.0; c];
            for h in 0..heads {
                let r = h * dh..(h + 1) * dh;
                let s: Vec<f64> = ks
                    .iter()
                    .map(|k| scale * q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for (ej, v) in e.iter().zip(&vs) {
                    for d in r.clone() {
                        o[d] += ej / z * v[d];
                    }
                }
            }
            project(&o, &w.wo, &w.bo)
        })
        .collect()
}

struct Split {
    t: usize,
    hw: usize,
    c: usize,
    vid: Tokens,
    reference: Tokens,
    txt: Tokens,
    obj: Tokens,
}

fn split(b: &StreamBundle) -> Split {
    let s = b.vid.shape();
    let (t, hw, c) = (s[0], s[1], s[2]);
    Split {
        t,
        hw,
        c,
        vid: rows(&b.vid, c),
        reference: rows(&b.reference, c),
        txt: rows(&b.txt, c),
        obj: rows(&b.obj, c),
    }
}

fn join(shape: &[usize], toks: &[Vec<f64>]) -> Tensor {
    Tensor::new(shape, toks.concat()).expect("oracle shapes follow the input")
}

fn cat(parts: &[&Tokens]) -> Tokens {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

/// Self-attention over the concatenation vid ∪ ref ∪ txt.
pub fn full_attention(b: &StreamBundle, w: &AttnWeights, heads: usize) -> StreamBundle {
    let s = split(b);
    let all = cat(&[&s.vid, &s.reference, &s.txt]);
    let y = dense_attention(&all, &all, w, heads);
    let nv = s.t * s.hw;
    StreamBundle {
        vid: join(b.vid.shape(), &y[..nv]),
        reference: join(b.reference.shape(), &y[nv..nv + s.hw]),
        txt: join(b.txt.shape(), &y[nv + s.hw..]),
        ..b.clone()
    }
}

/// Per-stream routing: vid frame i ← frame i ∪ ref ∪ txt; ref ← ref ∪ txt;
/// txt ← every vid token ∪ txt.
pub fn reference_attention(b: &StreamBundle, w: &AttnWeights, heads: usize) -> StreamBundle {
    let s = split(b);
    let mut vid = Vec::with_capacity(s.vid.len());
    for frame in s.vid.chunks(s.hw) {
        let q: Tokens = frame.to_vec();
        let kv = cat(&[&q, &s.reference, &s.txt]);
        vid.extend(dense_attention(&q, &kv, w, heads));
    }
    let reference = dense_attention(&s.reference, &cat(&[&s.reference, &s.txt]), w, heads);
    let txt = dense_attention(&s.txt, &cat(&[&s.vid, &s.txt]), w, heads);
    StreamBundle {
        vid: join(b.vid.shape(), &vid),
        reference: join(b.reference.shape(), &reference),
        txt: join(b.txt.shape(), &txt),
        ..b.clone()
    }
}

/// Per frame: self-attention over frame ∪ obj, keep the frame outputs,
/// add them back scaled by the mask.
pub fn object_attention(b: &StreamBundle, w: &AttnWeights, heads: usize) -> StreamBundle {
    let s = split(b);
    let mut vid = Vec::with_capacity(s.vid.len());
    for (i, frame) in s.vid.chunks(s.hw).enumerate() {
        let x = cat(&[&frame.to_vec(), &s.obj]);
        let y = dense_attention(&x, &x, w, heads);
        for (p, tok) in frame.iter().enumerate() {
            let m = b.mask.data()[i * s.hw + p];
            vid.push((0..s.c).map(|d| tok[d] + m * y[p][d]).collect::<Vec<f64>>());
        }
    }
    StreamBundle {
        vid: join(b.vid.shape(), &vid),
        ..b.clone()
    }
}

/// Smallest bounding-rectangle area over directions `0, step, 2·step, …`
/// below 180°, for a point set.
pub fn sweep_min_area(points: &[Point], step_deg: f64) -> f64 {
    let n = (180.0 / step_deg).round() as usize;
    (0..n)
        .map(|k| {
            let a = (k as f64 * step_deg).to_radians();
            let (ca, sa) = (a.cos(), a.sin());
            let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for p in points {
                let u = p.x * ca + p.y * sa;
                let v = -p.x * sa + p.y * ca;
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
            (u1 - u0) * (v1 - v0)
        })
        .fold(f64::MAX, f64::min)
}

/// Scores every template and returns the best eligible id: eligibility is
/// checked field by field, then candidates are fully sorted by
/// (range width, id).
pub fn brute_force_match(pool: &[MotionTemplate], size_cm: f64, orient: Orientation, table: bool) -> Option<String> {
    let mut scored: Vec<(f64, &str)> = Vec::new();
    for t in pool {
        let holds = !matches!(t.holding_hand, HoldingHand::None);
        let fits = size_cm >= t.size_range_cm[0] && size_cm <= t.size_range_cm[1];
        if holds && fits && t.orientation == orient && t.requires_table == table {
            scored.push((t.size_range_cm[1] - t.size_range_cm[0], &t.id));
        }
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
    scored.first().map(|s| s.1.to_string())
}

/// Area overlap ratio estimated on an `n × n` sample grid over the union's
/// bounding box.
pub fn sampled_iou(a: &RotatedRect, b: &RotatedRect, n: usize) -> f64 {
    let corners: Vec<Point> = a.corners().into_iter().chain(b.corners()).collect();
    let (x0, x1) = corners.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
    let (y0, y1) = corners.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let (mut inter, mut uni) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            let p = Point::new(
                x0 + (x1 - x0) * (j as f64 + 0.5) / n as f64,
                y0 + (y1 - y0) * (i as f64 + 0.5) / n as f64,
            );
            let (ia, ib) = (a.contains(p, 0.0), b.contains(p, 0.0));
            inter += (ia && ib) as usize;
            uni += (ia || ib) as usize;
        }
    }
    if uni == 0 {
        0.0
    } else {
        inter as f64 / uni as f64
    }
}
