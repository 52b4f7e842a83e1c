//! Parameters and forward pieces of the miniature vision-language model.
//!
//! Layout of one forward pass:
//! frames → patches → encoder (`X^1 … X^L`, `X_final`) → connector `φ` → `Z`;
//! optional token bank reading `X^ℓ` → `Ẽ` → `φ_ego` → `Z_ego`;
//! decoder over `[Z][Z_ego][text segments…]`.
//!
//! The visual/ego prefix attends bidirectionally within itself and never to
//! text, so its per-layer keys and values can be computed once and shared by
//! any number of text segments. Each segment is causal within itself and sees
//! the whole prefix; segments do not see each other.

use std::rc::Rc;

use egoexo_tensor::{AttnMask, Float, ParamSet, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::seed;
use crate::text::{TokenId, SEP};
use crate::vlm::config::{TokenFlow, TokenStrategy, VlmConfig};

/// Target value for positions that carry no supervision.
pub const IGNORE: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Encoder,
    Connector,
    Bank,
    EgoConnector,
    EgoPos,
    LmBase,
    Lora,
}

pub fn role_of(name: &str) -> ParamRole {
    if name.contains(".lora_") {
        ParamRole::Lora
    } else if name.starts_with("enc.") {
        ParamRole::Encoder
    } else if name.starts_with("conn_ego.") {
        ParamRole::EgoConnector
    } else if name.starts_with("conn.") {
        ParamRole::Connector
    } else if name.starts_with("bank.") {
        ParamRole::Bank
    } else if name == "lm.pos_ego" {
        ParamRole::EgoPos
    } else {
        ParamRole::LmBase
    }
}

/// Optimizer group of LoRA factors; everything else is group 0.
pub const LORA_GROUP: usize = 1;

#[derive(Clone, Debug)]
pub struct Vlm<F> {
    pub cfg: VlmConfig,
    pub params: ParamSet<F>,
}

/// Source of the ego-token prefix fed to the decoder.
#[derive(Clone, Debug)]
pub enum EgoInput<F> {
    /// Computed from this model's own bank.
    Bank,
    /// Supplied directly as `[K × d_lm]` (already connected).
    External(Tensor<F>),
    /// No ego tokens in the prefix.
    Absent,
}

/// Frozen-encoder features of one clip, reusable across training steps.
#[derive(Clone, Debug)]
pub struct EncoderCache<F> {
    pub layers: Vec<Tensor<F>>,
    pub final_x: Tensor<F>,
}

pub struct EncoderOut {
    /// `X^ℓ`, `[T·N × d_v]`, output of each encoder layer.
    pub layers: Vec<Var>,
    /// Final-norm output `[T·N × d_v]`.
    pub final_x: Var,
    /// Self-attention nodes, one per layer (probabilities stored on the tape).
    pub self_attn: Vec<Var>,
    /// Token states when the bank is appended to the encoder sequence.
    pub ve_tokens: Option<Var>,
}

pub struct BankOut {
    /// `Ẽ` of the last layer, `[K × d_v]`.
    pub tokens: Var,
    /// Per-layer cross-attention nodes (probabilities `[K × T·N]`).
    pub cross_attn: Vec<Var>,
    pub per_layer: Vec<Var>,
}

/// Per-layer keys/values of the decoder prefix.
pub struct PrefixKv {
    pub kv: Vec<(Var, Var)>,
    pub len: usize,
}

/// Owned copy of [`PrefixKv`] that outlives its tape.
#[derive(Clone, Debug)]
pub struct PrefixCache<F> {
    pub kv: Vec<(Tensor<F>, Tensor<F>)>,
    pub len: usize,
}

impl<F: Float> PrefixCache<F> {
    pub fn bind(&self, tape: &mut Tape<F>) -> PrefixKv {
        let kv = self.kv.iter().map(|(k, v)| (tape.constant(k.clone()), tape.constant(v.clone()))).collect();
        PrefixKv { kv, len: self.len }
    }
}

pub struct LmOut {
    /// `[total text rows × vocab]`
    pub logits: Var,
    pub segment_offsets: Vec<usize>,
}

/// Input tokens and targets of one training segment:
/// input `query ++ [SEP] ++ answer[..-1]`, targets `IGNORE × |query| ++ answer`.
pub fn answer_segment(query: &[TokenId], answer: &[TokenId]) -> (Vec<TokenId>, Vec<usize>) {
    assert!(!answer.is_empty());
    let mut input = query.to_vec();
    input.push(SEP);
    input.extend_from_slice(&answer[..answer.len() - 1]);
    let mut targets = vec![IGNORE; query.len()];
    targets.extend_from_slice(answer);
    (input, targets)
}

/// Flattens `[T × H × W × C]` frames into `[T·N × patch·patch·C]` rows.
pub fn patchify<F: Float>(frames: &Tensor<f32>, cfg: &VlmConfig) -> Result<Tensor<F>> {
    let s = frames.shape();
    let want = [cfg.frames, cfg.image_size, cfg.image_size, cfg.channels];
    if s != want {
        return Err(Error::Contract(format!("frames have shape {s:?}, model expects {want:?}")));
    }
    let (p, c, size) = (cfg.patch_size, cfg.channels, cfg.image_size);
    let g = size / p;
    let n = g * g;
    let pd = cfg.patch_dim();
    let src = frames.data();
    let mut out = vec![F::zero(); cfg.frames * n * pd];
    for t in 0..cfg.frames {
        for pr in 0..g {
            for pc in 0..g {
                let row = t * n + pr * g + pc;
                for i in 0..p {
                    for j in 0..p {
                        for ch in 0..c {
                            let v = src[((t * size + pr * p + i) * size + pc * p + j) * c + ch];
                            out[row * pd + (i * p + j) * c + ch] = F::from_f64(v as f64);
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![cfg.frames * n, pd], out)?)
}

/// Patches attend within their own frame; appended tokens (if any) see and
/// are seen by every position.
fn encoder_mask(frames: usize, n: usize, k: usize) -> AttnMask {
    let tn = frames * n;
    let l = tn + k;
    let mut allowed = vec![false; l * l];
    for q in 0..l {
        for c in 0..l {
            allowed[q * l + c] = q >= tn || c >= tn || q / n == c / n;
        }
    }
    AttnMask::new(l, l, allowed)
}

fn text_mask(prefix: usize, lens: &[usize]) -> AttnMask {
    let total: usize = lens.iter().sum();
    let keys = prefix + total;
    let mut allowed = vec![false; total * keys];
    let mut start = 0;
    for &len in lens {
        for i in 0..len {
            let row = start + i;
            for c in 0..prefix {
                allowed[row * keys + c] = true;
            }
            for j in 0..=i {
                allowed[row * keys + prefix + start + j] = true;
            }
        }
        start += len;
    }
    AttnMask::new(total, keys, allowed)
}

impl<F: Float> Vlm<F> {
    /// Fresh model; each parameter draws from its own seed stream, so adding
    /// or removing components never changes the others' initial values.
    pub fn new(cfg: VlmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut add = |name: String, shape: &[usize], init: Init| -> Result<()> {
            let t = match init {
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::full(shape, F::one()),
                Init::Normal(std) => Tensor::randn(shape, std, &mut seed::rng(seed, &[seed::tag(&name)])),
            };
            params.add(name, t)?;
            Ok(())
        };
        let (dv, dl) = (cfg.d_v, cfg.d_lm);
        let lin = |fan_in: usize| Init::Normal((1.0 / fan_in as f64).sqrt());
        add("enc.patch.w".into(), &[cfg.patch_dim(), dv], lin(cfg.patch_dim()))?;
        add("enc.patch.b".into(), &[dv], Init::Zeros)?;
        add("enc.pos_spatial".into(), &[cfg.patches_per_frame(), dv], Init::Normal(0.1))?;
        add("enc.pos_temporal".into(), &[cfg.frames, dv], Init::Normal(0.1))?;
        for l in 0..cfg.encoder_layers {
            add_block(&mut add, &format!("enc.{l}"), dv, cfg.mlp_ratio, false, 0)?;
        }
        add("enc.ln_f.g".into(), &[dv], Init::Ones)?;
        add("enc.ln_f.b".into(), &[dv], Init::Zeros)?;
        add("conn.w1".into(), &[dv, dl], lin(dv))?;
        add("conn.b1".into(), &[dl], Init::Zeros)?;
        add("conn.w2".into(), &[dl, dl], lin(dl))?;
        add("conn.b2".into(), &[dl], Init::Zeros)?;
        if cfg.has_bank() {
            let layers = if cfg.token_strategy == TokenStrategy::VeSelfAttention { 1 } else { cfg.encoder_layers };
            for l in 0..layers {
                add(format!("bank.{l}.tokens"), &[cfg.k_tokens, dv], Init::Normal(0.02))?;
                if cfg.token_strategy != TokenStrategy::VeSelfAttention {
                    for w in ["wq", "wk", "wv"] {
                        add(format!("bank.{l}.{w}"), &[dv, dv], lin(dv))?;
                    }
                }
            }
            add("conn_ego.w1".into(), &[dv, dl], lin(dv))?;
            add("conn_ego.b1".into(), &[dl], Init::Zeros)?;
            add("conn_ego.w2".into(), &[dl, dl], Init::Zeros)?;
            add("conn_ego.b2".into(), &[dl], Init::Zeros)?;
            add("lm.pos_ego".into(), &[cfg.k_tokens, dl], Init::Normal(0.02))?;
        }
        add("lm.tok_emb".into(), &[cfg.vocab, dl], Init::Normal(0.1))?;
        add("lm.pos_vis".into(), &[cfg.visual_len(), dl], Init::Normal(0.02))?;
        add("lm.pos_text".into(), &[cfg.max_text_len, dl], Init::Normal(0.1))?;
        for l in 0..cfg.decoder_layers {
            add_block(&mut add, &format!("lm.{l}"), dl, cfg.mlp_ratio, cfg.lora_rank > 0, cfg.lora_rank)?;
        }
        add("lm.ln_f.g".into(), &[dl], Init::Ones)?;
        add("lm.ln_f.b".into(), &[dl], Init::Zeros)?;
        add("lm.head".into(), &[dl, cfg.vocab], lin(dl))?;
        params.set_group_where(LORA_GROUP, |n| role_of(n) == ParamRole::Lora);
        Ok(Vlm { cfg, params })
    }

    pub fn cast<G: Float>(&self) -> Vlm<G> {
        Vlm { cfg: self.cfg.clone(), params: self.params.cast() }
    }

    pub fn p(&self, tape: &mut Tape<F>, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("model has no parameter `{name}`"));
        tape.param(&self.params, id)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.id(name).is_some()
    }

    /// Marks exactly the parameters whose role is in `trainable` as trainable.
    pub fn set_trainable(&mut self, trainable: &[ParamRole]) {
        for p in self.params.iter_mut() {
            p.frozen = !trainable.contains(&role_of(&p.name));
        }
    }

    fn linear(&self, tape: &mut Tape<F>, x: Var, w: &str, b: Option<&str>) -> Result<Var> {
        let wv = self.p(tape, w);
        let y = tape.matmul(x, wv)?;
        match b {
            Some(b) => {
                let bv = self.p(tape, b);
                Ok(tape.add_row(y, bv)?)
            }
            None => Ok(y),
        }
    }

    /// `x·W₀ + (α/r)·(x·A)·B` when the weight carries a LoRA adapter.
    fn adapted(&self, tape: &mut Tape<F>, x: Var, w: &str) -> Result<Var> {
        let base = self.linear(tape, x, w, None)?;
        let a_name = format!("{w}.lora_a");
        if !self.has_param(&a_name) {
            return Ok(base);
        }
        let a = self.p(tape, &a_name);
        let b = self.p(tape, &format!("{w}.lora_b"));
        let xa = tape.matmul(x, a)?;
        let xab = tape.matmul(xa, b)?;
        let scaled = tape.scale(xab, self.cfg.lora_alpha / self.cfg.lora_rank as f64);
        Ok(tape.add(base, scaled)?)
    }

    fn norm(&self, tape: &mut Tape<F>, x: Var, prefix: &str) -> Result<Var> {
        let g = self.p(tape, &format!("{prefix}.g"));
        let b = self.p(tape, &format!("{prefix}.b"));
        Ok(tape.layer_norm(x, g, b, self.cfg.ln_eps)?)
    }

    fn mlp(&self, tape: &mut Tape<F>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(tape, x, &format!("{prefix}.mlp.w1"), Some(&format!("{prefix}.mlp.b1")))?;
        let h = tape.gelu(h);
        self.linear(tape, h, &format!("{prefix}.mlp.w2"), Some(&format!("{prefix}.mlp.b2")))
    }

    /// Two-layer GELU projector.
    fn projector(&self, tape: &mut Tape<F>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(tape, x, &format!("{prefix}.w1"), Some(&format!("{prefix}.b1")))?;
        let h = tape.gelu(h);
        self.linear(tape, h, &format!("{prefix}.w2"), Some(&format!("{prefix}.b2")))
    }

    /// Runs the vision encoder on patch rows `[T·N × patch_dim]`.
    pub fn encode(&self, tape: &mut Tape<F>, patches: &Tensor<F>) -> Result<EncoderOut> {
        let cfg = &self.cfg;
        let (t, n) = (cfg.frames, cfg.patches_per_frame());
        if patches.shape() != [t * n, cfg.patch_dim()] {
            return Err(Error::Contract(format!(
                "patch rows {:?} do not match config ({} × {})",
                patches.shape(),
                t * n,
                cfg.patch_dim()
            )));
        }
        // pixels in [0,1] are centred to [-1,1]
        let mut centred = patches.clone();
        let (two, one) = (F::from_f64(2.0), F::one());
        centred.data_mut().iter_mut().for_each(|v| *v = two * *v - one);
        let x = tape.constant(centred);
        let h = self.linear(tape, x, "enc.patch.w", Some("enc.patch.b"))?;
        let sp = self.p(tape, "enc.pos_spatial");
        let tiled = tape.concat_rows(&vec![sp; t])?;
        let tp = self.p(tape, "enc.pos_temporal");
        let frame_ids: Vec<usize> = (0..t * n).map(|r| r / n).collect();
        let temporal = tape.embedding(tp, &frame_ids)?;
        let h = tape.add(h, tiled)?;
        let mut h = tape.add(h, temporal)?;
        let ve = cfg.has_bank() && cfg.token_strategy == TokenStrategy::VeSelfAttention;
        let k = if ve { cfg.k_tokens } else { 0 };
        if ve {
            let tokens = self.p(tape, "bank.0.tokens");
            h = tape.concat_rows(&[h, tokens])?;
        }
        let mask = Rc::new(encoder_mask(t, n, k));
        let mut layers = Vec::with_capacity(cfg.encoder_layers);
        let mut self_attn = Vec::with_capacity(cfg.encoder_layers);
        for l in 0..cfg.encoder_layers {
            let pre = format!("enc.{l}");
            let a = self.norm(tape, h, &format!("{pre}.ln1"))?;
            let q = self.linear(tape, a, &format!("{pre}.attn.wq"), None)?;
            let kk = self.linear(tape, a, &format!("{pre}.attn.wk"), None)?;
            let v = self.linear(tape, a, &format!("{pre}.attn.wv"), None)?;
            let o = tape.attention(q, kk, v, cfg.heads, Some(&mask))?;
            self_attn.push(o);
            let o = self.linear(tape, o, &format!("{pre}.attn.wo"), None)?;
            h = tape.add(h, o)?;
            let m = self.norm(tape, h, &format!("{pre}.ln2"))?;
            let m = self.mlp(tape, m, &pre)?;
            h = tape.add(h, m)?;
            layers.push(if ve { tape.slice_rows(h, 0, t * n)? } else { h });
        }
        let f = self.norm(tape, h, "enc.ln_f")?;
        let (final_x, ve_tokens) = if ve {
            (tape.slice_rows(f, 0, t * n)?, Some(tape.slice_rows(f, t * n, k)?))
        } else {
            (f, None)
        };
        Ok(EncoderOut { layers, final_x, self_attn, ve_tokens })
    }

    /// Encoder features as constants (for a frozen encoder).
    pub fn encoder_cache(&self, patches: &Tensor<F>) -> Result<EncoderCache<F>> {
        let mut tape = Tape::inference();
        let out = self.encode(&mut tape, patches)?;
        Ok(EncoderCache {
            layers: out.layers.iter().map(|&v| tape.value(v).clone()).collect(),
            final_x: tape.value(out.final_x).clone(),
        })
    }

    pub fn bind_cache(&self, tape: &mut Tape<F>, cache: &EncoderCache<F>) -> EncoderOut {
        EncoderOut {
            layers: cache.layers.iter().map(|t| tape.constant(t.clone())).collect(),
            final_x: tape.constant(cache.final_x.clone()),
            self_attn: Vec::new(),
            ve_tokens: None,
        }
    }

    /// Per-layer single-head cross-attention of the token bank over `X^ℓ`:
    /// `Ẽ^ℓ = softmax((Q^ℓ W_q)(X^ℓ W_k)ᵀ / √d_v)(X^ℓ W_v)`, with
    /// `Q^1 = E^1` and `Q^{ℓ+1} = E^{ℓ+1} + Ẽ^ℓ` under residual carry.
    pub fn bank_forward(&self, tape: &mut Tape<F>, layers: &[Var]) -> Result<BankOut> {
        let cfg = &self.cfg;
        if !cfg.has_bank() || cfg.token_strategy == TokenStrategy::VeSelfAttention {
            return Err(Error::Config("model has no cross-attention token bank".into()));
        }
        let bank_layers = (0..).take_while(|l| self.has_param(&format!("bank.{l}.tokens"))).count();
        if bank_layers != layers.len() || bank_layers != cfg.encoder_layers {
            return Err(Error::Config(format!(
                "token bank has {bank_layers} layers but the encoder provides {}",
                layers.len()
            )));
        }
        let mut carry: Option<Var> = None;
        let mut cross_attn = Vec::new();
        let mut per_layer = Vec::new();
        for (l, &x) in layers.iter().enumerate() {
            let e = self.p(tape, &format!("bank.{l}.tokens"));
            let query = match (carry, cfg.token_flow) {
                (Some(c), TokenFlow::ResidualCarry) => tape.add(e, c)?,
                _ => e,
            };
            let q = self.linear(tape, query, &format!("bank.{l}.wq"), None)?;
            let k = self.linear(tape, x, &format!("bank.{l}.wk"), None)?;
            let v = self.linear(tape, x, &format!("bank.{l}.wv"), None)?;
            let out = tape.attention(q, k, v, 1, None)?;
            cross_attn.push(out);
            per_layer.push(out);
            carry = Some(out);
        }
        Ok(BankOut { tokens: carry.expect("at least one layer"), cross_attn, per_layer })
    }

    /// Ego tokens `Ẽ` for whichever strategy the config selects.
    pub fn ego_tokens(&self, tape: &mut Tape<F>, enc: &EncoderOut) -> Result<Option<(Var, Vec<Var>)>> {
        if !self.cfg.has_bank() {
            return Ok(None);
        }
        match self.cfg.token_strategy {
            TokenStrategy::VeSelfAttention => {
                let t = enc.ve_tokens.ok_or_else(|| Error::Contract("encoder ran without appended tokens".into()))?;
                Ok(Some((t, Vec::new())))
            }
            _ => {
                let b = self.bank_forward(tape, &enc.layers)?;
                Ok(Some((b.tokens, b.cross_attn)))
            }
        }
    }

    /// `φ`: `[T·N × d_v] → [T·N × d_lm]`
    pub fn connect(&self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        self.check_width(tape, x, self.cfg.d_v, "connector")?;
        self.projector(tape, x, "conn")
    }

    /// `φ_ego`: `[K × d_v] → [K × d_lm]`
    pub fn connect_ego(&self, tape: &mut Tape<F>, e: Var) -> Result<Var> {
        self.check_width(tape, e, self.cfg.d_v, "ego connector")?;
        self.projector(tape, e, "conn_ego")
    }

    fn check_width(&self, tape: &Tape<F>, x: Var, want: usize, what: &str) -> Result<()> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != want {
            return Err(Error::Contract(format!("{what} expects width {want}, got shape {s:?}")));
        }
        Ok(())
    }

    /// Decoder keys/values for the prefix `[Z + pos][Z_ego + pos]`.
    pub fn lm_prefix(&self, tape: &mut Tape<F>, z: Var, z_ego: Option<Var>) -> Result<PrefixKv> {
        let cfg = &self.cfg;
        if tape.shape(z) != [cfg.visual_len(), cfg.d_lm] {
            return Err(Error::Contract(format!("visual prefix has shape {:?}", tape.shape(z))));
        }
        let pv = self.p(tape, "lm.pos_vis");
        let mut h = tape.add(z, pv)?;
        if let Some(ze) = z_ego {
            if !self.has_param("lm.pos_ego") || tape.shape(ze) != [cfg.k_tokens, cfg.d_lm] {
                return Err(Error::Config(format!("ego prefix of shape {:?} not supported by this model", tape.shape(ze))));
            }
            let pe = self.p(tape, "lm.pos_ego");
            let ze = tape.add(ze, pe)?;
            h = tape.concat_rows(&[h, ze])?;
        }
        let len = tape.shape(h)[0];
        let mut kv = Vec::with_capacity(cfg.decoder_layers);
        for l in 0..cfg.decoder_layers {
            let pre = format!("lm.{l}");
            let a = self.norm(tape, h, &format!("{pre}.ln1"))?;
            let k = self.adapted(tape, a, &format!("{pre}.attn.wk"))?;
            let v = self.adapted(tape, a, &format!("{pre}.attn.wv"))?;
            kv.push((k, v));
            if l + 1 == cfg.decoder_layers {
                break;
            }
            let q = self.adapted(tape, a, &format!("{pre}.attn.wq"))?;
            let o = tape.attention(q, k, v, cfg.heads, None)?;
            let o = self.adapted(tape, o, &format!("{pre}.attn.wo"))?;
            h = tape.add(h, o)?;
            let m = self.norm(tape, h, &format!("{pre}.ln2"))?;
            let m = self.mlp(tape, m, &pre)?;
            h = tape.add(h, m)?;
        }
        Ok(PrefixKv { kv, len })
    }

    pub fn prefix_cache(&self, tape: &Tape<F>, prefix: &PrefixKv) -> PrefixCache<F> {
        PrefixCache {
            kv: prefix.kv.iter().map(|&(k, v)| (tape.value(k).clone(), tape.value(v).clone())).collect(),
            len: prefix.len,
        }
    }

    /// Logits for every text position of the given segments.
    pub fn lm_text(&self, tape: &mut Tape<F>, prefix: &PrefixKv, segments: &[Vec<TokenId>]) -> Result<LmOut> {
        let cfg = &self.cfg;
        if segments.is_empty() || segments.iter().any(Vec::is_empty) {
            return Err(Error::Contract("empty text segment".into()));
        }
        let lens: Vec<usize> = segments.iter().map(Vec::len).collect();
        let total: usize = lens.iter().sum();
        if let Some(&long) = lens.iter().find(|&&l| l > cfg.max_text_len) {
            return Err(Error::Config(format!("text segment of {long} tokens exceeds max_text_len {}", cfg.max_text_len)));
        }
        if prefix.len + total > cfg.max_seq_len {
            return Err(Error::Config(format!(
                "sequence of {} positions exceeds max_seq_len {}",
                prefix.len + total,
                cfg.max_seq_len
            )));
        }
        let ids: Vec<TokenId> = segments.iter().flatten().copied().collect();
        let pos_ids: Vec<usize> = lens.iter().flat_map(|&l| 0..l).collect();
        let emb = self.p(tape, "lm.tok_emb");
        let x = tape.embedding(emb, &ids)?;
        let pt = self.p(tape, "lm.pos_text");
        let pos = tape.embedding(pt, &pos_ids)?;
        let mut h = tape.add(x, pos)?;
        let mask = Rc::new(text_mask(prefix.len, &lens));
        for l in 0..cfg.decoder_layers {
            let pre = format!("lm.{l}");
            let a = self.norm(tape, h, &format!("{pre}.ln1"))?;
            let q = self.adapted(tape, a, &format!("{pre}.attn.wq"))?;
            let k = self.adapted(tape, a, &format!("{pre}.attn.wk"))?;
            let v = self.adapted(tape, a, &format!("{pre}.attn.wv"))?;
            let (pk, pv) = prefix.kv[l];
            let keys = tape.concat_rows(&[pk, k])?;
            let vals = tape.concat_rows(&[pv, v])?;
            let o = tape.attention(q, keys, vals, cfg.heads, Some(&mask))?;
            let o = self.adapted(tape, o, &format!("{pre}.attn.wo"))?;
            h = tape.add(h, o)?;
            let m = self.norm(tape, h, &format!("{pre}.ln2"))?;
            let m = self.mlp(tape, m, &pre)?;
            h = tape.add(h, m)?;
        }
        let f = self.norm(tape, h, "lm.ln_f")?;
        let logits = self.linear(tape, f, "lm.head", None)?;
        let mut segment_offsets = Vec::with_capacity(lens.len());
        let mut off = 0;
        for l in &lens {
            segment_offsets.push(off);
            off += l;
        }
        Ok(LmOut { logits, segment_offsets })
    }

    /// Visual prefix of one clip: encoder (or cached features), connector,
    /// and the ego-token source.
    pub fn prefix(
        &self,
        tape: &mut Tape<F>,
        visual: Visual<'_, F>,
        ego: &EgoInput<F>,
    ) -> Result<(PrefixKv, PrefixParts)> {
        let enc = match visual {
            Visual::Patches(p) => self.encode(tape, p)?,
            Visual::Cached(c) => self.bind_cache(tape, c),
        };
        let z = self.connect(tape, enc.final_x)?;
        let mut parts = PrefixParts { z, ego_raw: None, z_ego: None, cross_attn: Vec::new(), self_attn: enc.self_attn.clone() };
        let z_ego = match ego {
            EgoInput::Absent => None,
            EgoInput::External(t) => Some(tape.constant(t.clone())),
            EgoInput::Bank => match self.ego_tokens(tape, &enc)? {
                Some((e, cross)) => {
                    parts.ego_raw = Some(e);
                    parts.cross_attn = cross;
                    Some(self.connect_ego(tape, e)?)
                }
                None => None,
            },
        };
        parts.z_ego = z_ego;
        let kv = self.lm_prefix(tape, z, z_ego)?;
        Ok((kv, parts))
    }

    /// Default ego source for this model's configuration.
    pub fn default_ego(&self) -> EgoInput<F> {
        if self.cfg.has_bank() {
            EgoInput::Bank
        } else {
            EgoInput::Absent
        }
    }
}

/// Visual input: raw patches or frozen encoder features.
#[derive(Clone, Copy)]
pub enum Visual<'a, F> {
    Patches(&'a Tensor<F>),
    Cached(&'a EncoderCache<F>),
}

pub struct PrefixParts {
    pub z: Var,
    /// `Ẽ` before the ego connector.
    pub ego_raw: Option<Var>,
    /// `φ_ego(Ẽ)` (or the externally supplied tokens).
    pub z_ego: Option<Var>,
    pub cross_attn: Vec<Var>,
    pub self_attn: Vec<Var>,
}

enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

fn add_block(
    add: &mut impl FnMut(String, &[usize], Init) -> Result<()>,
    pre: &str,
    d: usize,
    ratio: usize,
    lora: bool,
    rank: usize,
) -> Result<()> {
    let lin = |fan_in: usize| Init::Normal((1.0 / fan_in as f64).sqrt());
    add(format!("{pre}.ln1.g"), &[d], Init::Ones)?;
    add(format!("{pre}.ln1.b"), &[d], Init::Zeros)?;
    for w in ["wq", "wk", "wv", "wo"] {
        add(format!("{pre}.attn.{w}"), &[d, d], lin(d))?;
        if lora {
            add(format!("{pre}.attn.{w}.lora_a"), &[d, rank], lin(d))?;
            add(format!("{pre}.attn.{w}.lora_b"), &[rank, d], Init::Zeros)?;
        }
    }
    add(format!("{pre}.ln2.g"), &[d], Init::Ones)?;
    add(format!("{pre}.ln2.b"), &[d], Init::Zeros)?;
    add(format!("{pre}.mlp.w1"), &[d, d * ratio], lin(d))?;
    add(format!("{pre}.mlp.b1"), &[d * ratio], Init::Zeros)?;
    add(format!("{pre}.mlp.w2"), &[d * ratio, d], lin(d * ratio))?;
    add(format!("{pre}.mlp.b2"), &[d], Init::Zeros)?;
    Ok(())
}

/// Mean NLL over supervised positions (targets equal to [`IGNORE`] are skipped).
pub fn vlm_loss<F: Float>(tape: &mut Tape<F>, logits: Var, targets: &[usize]) -> Result<Var> {
    Ok(tape.cross_entropy(logits, targets, IGNORE)?)
}

/// Standalone LoRA application: `x·W₀ + (α/r)·x·A·B`.
pub fn apply_lora<F: Float>(
    tape: &mut Tape<F>,
    x: Var,
    w0: Var,
    adapter: Option<(Var, Var)>,
    rank: usize,
    alpha: f64,
) -> Result<Var> {
    let base = tape.matmul(x, w0)?;
    let Some((a, b)) = adapter else { return Ok(base) };
    if rank == 0 {
        return Err(Error::Config("LoRA adapter present with rank 0".into()));
    }
    if tape.shape(a)[1] != rank || tape.shape(b)[0] != rank {
        return Err(Error::Config(format!("adapter factors {:?}/{:?} do not have rank {rank}", tape.shape(a), tape.shape(b))));
    }
    let xa = tape.matmul(x, a)?;
    let xab = tape.matmul(xa, b)?;
    let s = tape.scale(xab, alpha / rank as f64);
    Ok(tape.add(base, s)?)
}
