use super::{BlockWeights, ModelWeights};
use crate::error::{Error, Result};
use crate::linalg::{gelu, gelu_grad, softmax_in_place, Scalar};
use crate::nn::LnCache;
use crate::patchgrid::{KeptPatches, PatchGrid, TokenSequence, TokenTag};

/// Output tokens of block `block` (1-based), before the final norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCapture<T> {
    pub block: usize,
    pub tokens: TokenSequence<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub logits: Vec<T>,
    pub captures: Vec<BlockCapture<T>>,
}

/// Activations of one block saved for the backward pass.
#[derive(Debug, Clone, Default)]
struct BlockCache<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    /// `[heads × n × n]` attention probabilities
    probs: Vec<T>,
    attn: Vec<T>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    z: Vec<T>,
    g: Vec<T>,
}

/// Everything a training step needs to run the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    n: usize,
    cls_idx: usize,
    dist_idx: Option<usize>,
    patches: Vec<T>,
    keep: Vec<(usize, usize)>,
    blocks: Vec<BlockCache<T>>,
    head_ln: LnCache<T>,
    head_in: Vec<T>,
}

fn find_special<T: Scalar>(seq: &TokenSequence<T>) -> Result<(usize, Option<usize>)> {
    let cls = seq
        .tags
        .iter()
        .position(|t| *t == TokenTag::Cls)
        .ok_or_else(|| Error::Shape("token sequence has no CLS token".into()))?;
    let dist = seq.tags.iter().position(|t| *t == TokenTag::Dist);
    Ok((cls, dist))
}

impl<T: Scalar> ModelWeights<T> {
    fn attention(
        &self,
        b: &BlockWeights<T>,
        h1: &[T],
        n: usize,
        cache: Option<&mut BlockCache<T>>,
    ) -> Vec<T> {
        let d = self.cfg.d;
        let heads = self.cfg.n_heads;
        let dh = d / heads;
        let scale = T::one() / T::from_f64(dh as f64).sqrt();
        let qkv = b.qkv.forward(h1, n);
        let mut out = vec![T::zero(); n * d];
        let keep = cache.is_some();
        let mut all_probs = if keep {
            vec![T::zero(); heads * n * n]
        } else {
            Vec::new()
        };
        let mut scratch = vec![T::zero(); n * n];
        let (w3, wd) = (3 * d as isize, d as isize);
        for h in 0..heads {
            let probs: &mut [T] = if keep {
                &mut all_probs[h * n * n..(h + 1) * n * n]
            } else {
                &mut scratch
            };
            // scores = scale · q_h k_hᵀ
            T::gemm(
                n,
                dh,
                n,
                scale,
                &qkv[h * dh..],
                w3,
                1,
                &qkv[d + h * dh..],
                1,
                w3,
                T::zero(),
                probs,
                n as isize,
                1,
            );
            for row in probs.chunks_exact_mut(n) {
                softmax_in_place(row);
            }
            T::gemm(
                n,
                n,
                dh,
                T::one(),
                probs,
                n as isize,
                1,
                &qkv[2 * d + h * dh..],
                w3,
                1,
                T::zero(),
                &mut out[h * dh..],
                wd,
                1,
            );
        }
        let y = b.proj.forward(&out, n);
        if let Some(c) = cache {
            c.qkv = qkv;
            c.probs = all_probs;
            c.attn = out;
        }
        y
    }

    fn block_forward(
        &self,
        b: &BlockWeights<T>,
        x: &[T],
        n: usize,
        mut cache: Option<&mut BlockCache<T>>,
    ) -> Vec<T> {
        let h1 = b.norm1.forward(x, cache.as_deref_mut().map(|c| &mut c.ln1));
        let a = self.attention(b, &h1, n, cache.as_deref_mut());
        let u: Vec<T> = x.iter().zip(&a).map(|(&x, &a)| x + a).collect();
        let h2 = b
            .norm2
            .forward(&u, cache.as_deref_mut().map(|c| &mut c.ln2));
        let z = b.fc1.forward(&h2, n);
        let g: Vec<T> = z.iter().map(|&v| gelu(v)).collect();
        let m = b.fc2.forward(&g, n);
        let y = u.iter().zip(&m).map(|(&u, &m)| u + m).collect();
        if let Some(c) = cache {
            c.h1 = h1;
            c.h2 = h2;
            c.z = z;
            c.g = g;
        }
        y
    }

    /// One pre-norm transformer block: `u = x + MHSA(LN1(x))`, `y = u + MLP(LN2(u))`.
    pub fn attention_block(&self, block: usize, x: &TokenSequence<T>) -> Result<TokenSequence<T>> {
        let b = self
            .blocks
            .get(block)
            .ok_or_else(|| Error::Index(format!("block {block} of {}", self.blocks.len())))?;
        self.check_input(x)?;
        let data = self.block_forward(b, &x.data, x.len(), None);
        Ok(TokenSequence {
            d: x.d,
            data,
            tags: x.tags.clone(),
        })
    }

    fn check_input(&self, k0: &TokenSequence<T>) -> Result<()> {
        if k0.d != self.cfg.d || k0.data.len() != k0.len() * k0.d {
            return Err(Error::Shape(format!(
                "tokens of width {} ({} values for {} tokens), model width {}",
                k0.d,
                k0.data.len(),
                k0.len(),
                self.cfg.d
            )));
        }
        if k0.is_empty() {
            return Err(Error::Shape("empty token sequence".into()));
        }
        Ok(())
    }

    /// Runs blocks `1..=up_to`, returning the requested captures (1-based block indices).
    pub fn encode(
        &self,
        k0: &TokenSequence<T>,
        up_to: usize,
        capture: &[usize],
    ) -> Result<(Vec<T>, Vec<BlockCapture<T>>)> {
        self.check_input(k0)?;
        if up_to > self.cfg.n_blocks {
            return Err(Error::Index(format!(
                "block {up_to} of {}",
                self.cfg.n_blocks
            )));
        }
        if let Some(&c) = capture.iter().find(|&&c| c == 0 || c > self.cfg.n_blocks) {
            return Err(Error::Index(format!(
                "capture block {c} outside 1..={}",
                self.cfg.n_blocks
            )));
        }
        let n = k0.len();
        let mut x = k0.data.clone();
        let mut captures = Vec::new();
        for (i, b) in self.blocks.iter().take(up_to).enumerate() {
            x = self.block_forward(b, &x, n, None);
            if capture.contains(&(i + 1)) {
                captures.push(BlockCapture {
                    block: i + 1,
                    tokens: TokenSequence {
                        d: k0.d,
                        data: x.clone(),
                        tags: k0.tags.clone(),
                    },
                });
            }
        }
        Ok((x, captures))
    }

    fn head_input(&self, x: &[T], cls: usize, dist: Option<usize>) -> Vec<T> {
        let d = self.cfg.d;
        let c = &x[cls * d..(cls + 1) * d];
        match dist {
            Some(j) => {
                let half = T::from_f64(0.5);
                c.iter()
                    .zip(&x[j * d..(j + 1) * d])
                    .map(|(&a, &b)| (a + b) * half)
                    .collect()
            }
            None => c.to_vec(),
        }
    }

    /// Full forward: every block, then the head on the final-normed mean of
    /// the CLS and DIST outputs. Captures are 1-based block indices.
    pub fn forward(&self, k0: &TokenSequence<T>, capture: &[usize]) -> Result<ForwardOutput<T>> {
        let (cls, dist) = find_special(k0)?;
        let (x, captures) = self.encode(k0, self.cfg.n_blocks, capture)?;
        let c = self.head_input(&x, cls, dist);
        let hn = self.norm.forward(&c, None);
        let logits = self.head.forward(&hn, 1);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("non-finite logits".into()));
        }
        Ok(ForwardOutput { logits, captures })
    }

    /// Assembles the input sequence for `keep` and runs a taped forward pass.
    pub fn forward_train(&self, grid: &PatchGrid, keep: &KeptPatches) -> Result<(Vec<T>, Tape<T>)> {
        let k0 = crate::patchgrid::assemble_k0(
            grid,
            keep,
            &self.patch_embed,
            &self.pos,
            &self.cls,
            &self.dist,
        )?;
        let plen = grid.cfg.patch_len();
        let mut patches = Vec::with_capacity(keep.len() * plen);
        for &(f, t) in &keep.indices {
            patches.extend(grid.patch(f, t).iter().map(|&v| T::from_f32(v)));
        }
        let (cls_idx, dist_idx) = find_special(&k0)?;
        let n = k0.len();
        let mut x = k0.data;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let mut c = BlockCache::default();
            x = self.block_forward(b, &x, n, Some(&mut c));
            blocks.push(c);
        }
        let head_in = self.head_input(&x, cls_idx, dist_idx);
        let mut head_ln = LnCache::default();
        let hn = self.norm.forward(&head_in, Some(&mut head_ln));
        let logits = self.head.forward(&hn, 1);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("non-finite logits".into()));
        }
        Ok((
            logits,
            Tape {
                n,
                cls_idx,
                dist_idx,
                patches,
                keep: keep.indices.clone(),
                blocks,
                head_ln,
                head_in: hn,
            },
        ))
    }

    fn block_backward(
        &self,
        b: &BlockWeights<T>,
        c: &BlockCache<T>,
        dy: Vec<T>,
        n: usize,
        g: &mut BlockWeights<T>,
    ) -> Vec<T> {
        let d = self.cfg.d;
        let heads = self.cfg.n_heads;
        let dh = d / heads;
        let scale = T::one() / T::from_f64(dh as f64).sqrt();
        let hidden = self.cfg.hidden();

        // MLP branch
        let dg = b.fc2.backward(&c.g, &dy, n, &mut g.fc2);
        let dz: Vec<T> = dg
            .iter()
            .zip(&c.z)
            .map(|(&dg, &z)| dg * gelu_grad(z))
            .collect();
        debug_assert_eq!(dz.len(), n * hidden);
        let dh2 = b.fc1.backward(&c.h2, &dz, n, &mut g.fc1);
        let mut du = b.norm2.backward(&dh2, &c.ln2, &mut g.norm2);
        for (a, &v) in du.iter_mut().zip(&dy) {
            *a += v;
        }

        // attention branch
        let dattn = b.proj.backward(&c.attn, &du, n, &mut g.proj);
        let mut dqkv = vec![T::zero(); n * 3 * d];
        let mut dp = vec![T::zero(); n * n];
        let (w3, wd, wn) = (3 * d as isize, d as isize, n as isize);
        for h in 0..heads {
            let p = &c.probs[h * n * n..(h + 1) * n * n];
            // dP = dO_h v_hᵀ
            T::gemm(
                n,
                dh,
                n,
                T::one(),
                &dattn[h * dh..],
                wd,
                1,
                &c.qkv[2 * d + h * dh..],
                1,
                w3,
                T::zero(),
                &mut dp,
                wn,
                1,
            );
            // dv_h = Pᵀ dO_h
            T::gemm(
                n,
                n,
                dh,
                T::one(),
                p,
                1,
                wn,
                &dattn[h * dh..],
                wd,
                1,
                T::zero(),
                &mut dqkv[2 * d + h * dh..],
                w3,
                1,
            );
            // softmax backward, with the score scale folded in
            for (dpr, pr) in dp.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
                let dot: T = dpr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                for (v, &pv) in dpr.iter_mut().zip(pr) {
                    *v = pv * (*v - dot) * scale;
                }
            }
            // dq_h = dS k_h ; dk_h = dSᵀ q_h
            T::gemm(
                n,
                n,
                dh,
                T::one(),
                &dp,
                wn,
                1,
                &c.qkv[d + h * dh..],
                w3,
                1,
                T::zero(),
                &mut dqkv[h * dh..],
                w3,
                1,
            );
            T::gemm(
                n,
                n,
                dh,
                T::one(),
                &dp,
                1,
                wn,
                &c.qkv[h * dh..],
                w3,
                1,
                T::zero(),
                &mut dqkv[d + h * dh..],
                w3,
                1,
            );
        }
        let dh1 = b.qkv.backward(&c.h1, &dqkv, n, &mut g.qkv);
        let mut dx = b.norm1.backward(&dh1, &c.ln1, &mut g.norm1);
        for (a, &v) in dx.iter_mut().zip(&du) {
            *a += v;
        }
        dx
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/dlogits`.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        dlogits: &[T],
        grads: &mut ModelWeights<T>,
    ) -> Result<()> {
        let d = self.cfg.d;
        if dlogits.len() != self.cfg.n_labels {
            return Err(Error::Shape(format!(
                "{} logit gradients for {} labels",
                dlogits.len(),
                self.cfg.n_labels
            )));
        }
        let n = tape.n;
        let dhn = self
            .head
            .backward(&tape.head_in, dlogits, 1, &mut grads.head);
        let dc = self.norm.backward(&dhn, &tape.head_ln, &mut grads.norm);
        let mut dx = vec![T::zero(); n * d];
        let share = if tape.dist_idx.is_some() {
            T::from_f64(0.5)
        } else {
            T::one()
        };
        for idx in std::iter::once(tape.cls_idx).chain(tape.dist_idx) {
            for (a, &v) in dx[idx * d..(idx + 1) * d].iter_mut().zip(&dc) {
                *a += v * share;
            }
        }
        for (i, b) in self.blocks.iter().enumerate().rev() {
            dx = self.block_backward(b, &tape.blocks[i], dx, n, &mut grads.blocks[i]);
        }
        // input assembly: [cls, dist, patches…]
        for (a, &v) in grads.cls.iter_mut().zip(&dx[..d]) {
            *a += v;
        }
        for (a, &v) in grads.dist.iter_mut().zip(&dx[d..2 * d]) {
            *a += v;
        }
        let dpatch = &dx[2 * d..];
        self.patch_embed.backward_params(
            &tape.patches,
            dpatch,
            tape.keep.len(),
            &mut grads.patch_embed,
        );
        for (i, &(f, t)) in tape.keep.iter().enumerate() {
            let row = &dpatch[i * d..(i + 1) * d];
            for j in 0..d {
                grads.pos.time[t * d + j] += row[j];
                grads.pos.freq[f * d + j] += row[j];
            }
        }
        Ok(())
    }
}
