use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelWeights;
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::melfront::MelSpectrogram;
use crate::patchgrid::{assemble_k0, slice_patches, PatchoutSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Cls,
    Dist,
    /// Mean of the patch tokens.
    Avg,
}

impl TokenKind {
    pub fn short(&self) -> &'static str {
        match self {
            TokenKind::Cls => "c",
            TokenKind::Dist => "d",
            TokenKind::Avg => "a",
        }
    }
}

impl FromStr for TokenKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cls" | "c" => Ok(TokenKind::Cls),
            "dist" | "d" => Ok(TokenKind::Dist),
            "avg" | "a" => Ok(TokenKind::Avg),
            other => Err(Error::Config(format!("unknown token kind {other:?}"))),
        }
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenKind::Cls => "cls",
            TokenKind::Dist => "dist",
            TokenKind::Avg => "avg",
        })
    }
}

/// Ordered `(block, token kind)` pairs to stack; blocks are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub entries: Vec<(usize, TokenKind)>,
}

impl EmbeddingSpec {
    pub fn new(entries: Vec<(usize, TokenKind)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config(
                "embedding spec needs at least one entry".into(),
            ));
        }
        if entries.iter().any(|&(b, _)| b == 0) {
            return Err(Error::Config("block indices start at 1".into()));
        }
        Ok(Self { entries })
    }

    pub fn output_dim(&self, d: usize) -> usize {
        d * self.entries.len()
    }

    pub fn max_block(&self) -> usize {
        self.entries.iter().map(|&(b, _)| b).max().unwrap_or(0)
    }

    pub fn blocks(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.entries.iter().map(|&(b, _)| b).collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    pub fn validate(&self, n_blocks: usize) -> Result<()> {
        if self.max_block() > n_blocks {
            return Err(Error::Config(format!(
                "embedding reads block {} of a {n_blocks}-block model",
                self.max_block()
            )));
        }
        Ok(())
    }
}

/// Parses `block:kind[,block:kind…]`, e.g. `7:cls,7:dist,7:avg`.
impl FromStr for EmbeddingSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let entries = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|part| {
                let (b, k) = part
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("expected block:kind, got {part:?}")))?;
                let block = b
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad block index {b:?}")))?;
                Ok((block, k.parse()?))
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSpec::new(entries)
    }
}

impl fmt::Display for EmbeddingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|(b, k)| format!("{b}:{k}"))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub spec: EmbeddingSpec,
}

/// Runs the encoder up to the deepest requested block and stacks the
/// requested tokens. Training-mode patchout draws from a fixed-seed stream.
pub fn extract_embedding<T: Scalar>(
    spec: &MelSpectrogram,
    weights: &ModelWeights<T>,
    espec: &EmbeddingSpec,
    patchout: &PatchoutSpec,
) -> Result<Embedding> {
    espec.validate(weights.cfg.n_blocks)?;
    let grid = slice_patches(spec, &weights.cfg.patch)?;
    let keep = {
        use rand::SeedableRng;
        patchout.kept(grid.dims, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?
    };
    if keep.is_empty() {
        return Err(Error::Config("patchout removed every patch".into()));
    }
    let k0 = assemble_k0(
        &grid,
        &keep,
        &weights.patch_embed,
        &weights.pos,
        &weights.cls,
        &weights.dist,
    )?;
    let blocks = espec.blocks();
    let (_, captures) = weights.encode(&k0, espec.max_block(), &blocks)?;
    let d = weights.cfg.d;
    let mut values = Vec::with_capacity(espec.output_dim(d));
    for &(block, kind) in &espec.entries {
        let cap = captures
            .iter()
            .find(|c| c.block == block)
            .expect("every requested block is captured");
        match kind {
            TokenKind::Cls => values.extend(cap.tokens.token(0).iter().map(|v| v.as_f32())),
            TokenKind::Dist => values.extend(cap.tokens.token(1).iter().map(|v| v.as_f32())),
            TokenKind::Avg => values.extend(cap.tokens.patch_mean().iter().map(|v| v.as_f32())),
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerics("non-finite embedding".into()));
    }
    Ok(Embedding {
        values,
        spec: espec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let e: EmbeddingSpec = "7:cls,7:dist,7:avg".parse().unwrap();
        assert_eq!(
            e.entries,
            vec![
                (7, TokenKind::Cls),
                (7, TokenKind::Dist),
                (7, TokenKind::Avg)
            ]
        );
        assert_eq!(e.to_string(), "7:cls,7:dist,7:avg");
        assert_eq!(e.output_dim(768), 2304);
        assert!("".parse::<EmbeddingSpec>().is_err());
        assert!("0:cls".parse::<EmbeddingSpec>().is_err());
        assert!("3:foo".parse::<EmbeddingSpec>().is_err());
        assert!("3cls".parse::<EmbeddingSpec>().is_err());
        assert_eq!(
            "2:c, 2:a".parse::<EmbeddingSpec>().unwrap().blocks(),
            vec![2]
        );
    }
}
