//! Attention rollout over encoder self-attention and ego-token localisation
//! from the bank's cross-attention.

use egoexo_tensor::Tensor;

use crate::error::{Error, Result};

/// Per-layer encoder self-attention of one clip.
#[derive(Clone, Debug)]
pub struct AttnTrace {
    /// Each entry is `[heads × len × len]`, row-major.
    pub layers: Vec<Vec<f64>>,
    pub heads: usize,
    /// Sequence length (`frames·patches`, plus appended tokens if any).
    pub len: usize,
    pub frames: usize,
    pub patches_per_frame: usize,
}

fn head_mean(layer: &[f64], heads: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * len];
    for h in 0..heads {
        for (o, &v) in out.iter_mut().zip(&layer[h * len * len..(h + 1) * len * len]) {
            *o += v / heads as f64;
        }
    }
    out
}

/// Rollout `R = Â_L ⋯ Â_1` with `Â = rownorm(A + I)` (heads averaged).
/// Frame `t`'s map is the mean of `R`'s rows for that frame's patches,
/// restricted to the same frame's columns and renormalised; result `[T × N]`.
pub fn attention_rollout(trace: &AttnTrace) -> Result<Tensor<f64>> {
    if trace.layers.is_empty() {
        return Err(Error::Contract("attention trace has no layers".into()));
    }
    let (len, t, n) = (trace.len, trace.frames, trace.patches_per_frame);
    if t * n > len {
        return Err(Error::Contract(format!("trace of length {len} cannot hold {t}×{n} patches")));
    }
    let mut r: Vec<f64> = (0..len * len).map(|i| if i / len == i % len { 1.0 } else { 0.0 }).collect();
    for layer in &trace.layers {
        if layer.len() != trace.heads * len * len {
            return Err(Error::Contract(format!("layer holds {} values, expected {}", layer.len(), trace.heads * len * len)));
        }
        let mut a = head_mean(layer, trace.heads, len);
        for i in 0..len {
            a[i * len + i] += 1.0;
            let s: f64 = a[i * len..(i + 1) * len].iter().sum();
            a[i * len..(i + 1) * len].iter_mut().for_each(|v| *v /= s);
        }
        let mut next = vec![0.0; len * len];
        for i in 0..len {
            for k in 0..len {
                let aik = a[i * len + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..len {
                    next[i * len + j] += aik * r[k * len + j];
                }
            }
        }
        r = next;
    }
    let mut out = vec![0.0; t * n];
    for f in 0..t {
        let map = &mut out[f * n..(f + 1) * n];
        for i in f * n..(f + 1) * n {
            for (j, m) in map.iter_mut().enumerate() {
                *m += r[i * len + f * n + j];
            }
        }
        let s: f64 = map.iter().sum();
        if s > 0.0 {
            map.iter_mut().for_each(|v| *v /= s);
        } else {
            map.iter_mut().for_each(|v| *v = 1.0 / n as f64);
        }
    }
    Ok(Tensor::new(vec![t, n], out)?)
}

/// Patches (per frame) overlapping a `[T × H × W]` pixel mask, for a
/// `grid × grid` patch layout.
pub fn mask_patches(mask: &Tensor<f32>, grid: usize) -> Vec<Vec<bool>> {
    let s = mask.shape();
    let (t, h, w) = (s[0], s[1], s[2]);
    let (ph, pw) = (h as f64 / grid as f64, w as f64 / grid as f64);
    (0..t)
        .map(|f| {
            let mut hit = vec![false; grid * grid];
            for r in 0..h {
                for c in 0..w {
                    if mask.data()[(f * h + r) * w + c] > 0.0 {
                        let pr = ((r as f64 / ph) as usize).min(grid - 1);
                        let pc = ((c as f64 / pw) as usize).min(grid - 1);
                        hit[pr * grid + pc] = true;
                    }
                }
            }
            hit
        })
        .collect()
}

/// Per-frame localisation of the ego tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLocalization {
    /// Fraction of the frame's attention mass on masked patches; `None` when
    /// the mask is empty (occluded frame).
    pub fraction: Option<f64>,
    /// Share of the frame's patches covered by the mask (uniform baseline).
    pub area: f64,
}

/// `cross` is the final-layer bank attention `[K × T·N]` (each row a
/// distribution over all patches); mass is averaged over the K tokens and
/// normalised within each frame.
pub fn ego_token_localization(cross: &[f64], k: usize, frames: usize, n: usize, mask: &[Vec<bool>]) -> Result<Vec<FrameLocalization>> {
    if cross.len() != k * frames * n || k == 0 {
        return Err(Error::Contract(format!("cross-attention has {} values, expected {}", cross.len(), k * frames * n)));
    }
    if mask.len() != frames || mask.iter().any(|m| m.len() != n) {
        return Err(Error::Contract("mask does not match the patch layout".into()));
    }
    Ok((0..frames)
        .map(|f| {
            let hits = mask[f].iter().filter(|&&b| b).count();
            let area = hits as f64 / n as f64;
            if hits == 0 {
                return FrameLocalization { fraction: None, area };
            }
            let mut total = 0.0;
            let mut inside = 0.0;
            for tok in 0..k {
                for p in 0..n {
                    let v = cross[tok * frames * n + f * n + p] / k as f64;
                    total += v;
                    if mask[f][p] {
                        inside += v;
                    }
                }
            }
            FrameLocalization { fraction: Some(if total > 0.0 { inside / total } else { 0.0 }), area }
        })
        .collect())
}
