use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::mlp::{mlp_fit, ProbeConfig};
use super::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::model::{EmbeddingSpec, TokenKind};

/// Token stacks in the order `c, d, a, cd, ca, da, cda`.
pub fn token_combinations() -> Vec<Vec<TokenKind>> {
    use TokenKind::*;
    vec![
        vec![Cls],
        vec![Dist],
        vec![Avg],
        vec![Cls, Dist],
        vec![Cls, Avg],
        vec![Dist, Avg],
        vec![Cls, Dist, Avg],
    ]
}

pub fn combination_name(kinds: &[TokenKind]) -> String {
    kinds.iter().map(|k| k.short()).collect()
}

/// Probe scores per `(block, token combination)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMatrix {
    pub blocks: Vec<usize>,
    pub combos: Vec<String>,
    /// `map[block][combo]`, test mAP at the best validation epoch.
    pub map: Vec<Vec<f64>>,
    pub roc_auc: Vec<Vec<f64>>,
}

impl SweepMatrix {
    pub fn get(&self, block: usize, combo: &str) -> Option<f64> {
        let b = self.blocks.iter().position(|&x| x == block)?;
        let c = self.combos.iter().position(|x| x == combo)?;
        Some(self.map[b][c])
    }

    /// Header `block,c,d,…` then one row of mAP values per block.
    pub fn to_csv(&self) -> String {
        let mut s = format!("block,{}\n", self.combos.join(","));
        for (b, row) in self.blocks.iter().zip(&self.map) {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{b},{}", vals.join(","));
        }
        s
    }
}

/// Embedding spec holding `cls, dist, avg` for every listed block.
pub fn sweep_espec(blocks: &[usize]) -> Result<EmbeddingSpec> {
    let entries = blocks
        .iter()
        .flat_map(|&b| [TokenKind::Cls, TokenKind::Dist, TokenKind::Avg].map(|k| (b, k)))
        .collect();
    EmbeddingSpec::new(entries)
}

/// Trains one probe per cell on column subsets of a dataset built with [`sweep_espec`].
pub fn sweep_blocks(ds: &EmbeddingDataset, cfg: &ProbeConfig, seed: u64) -> Result<SweepMatrix> {
    let entries = &ds.espec.entries;
    if entries.is_empty() || !ds.dim.is_multiple_of(entries.len()) {
        return Err(Error::Shape(
            "dataset width does not split into its espec entries".into(),
        ));
    }
    let d = ds.dim / entries.len();
    let blocks = ds.espec.blocks();
    let combos = token_combinations();
    let mut map = Vec::with_capacity(blocks.len());
    let mut roc = Vec::with_capacity(blocks.len());
    for &b in &blocks {
        let mut map_row = Vec::with_capacity(combos.len());
        let mut roc_row = Vec::with_capacity(combos.len());
        for kinds in &combos {
            let mut cols = Vec::new();
            for k in kinds {
                let e = entries
                    .iter()
                    .position(|&(eb, ek)| eb == b && ek == *k)
                    .ok_or_else(|| Error::Config(format!("dataset lacks {b}:{k}")))?;
                cols.extend(e * d..(e + 1) * d);
            }
            let sub = ds.select_columns(&cols);
            let fit = mlp_fit(&sub, cfg, seed)?;
            map_row.push(fit.test.map);
            roc_row.push(fit.test.roc_auc);
        }
        map.push(map_row);
        roc.push(roc_row);
    }
    Ok(SweepMatrix {
        blocks,
        combos: combos.iter().map(|c| combination_name(c)).collect(),
        map,
        roc_auc: roc,
    })
}
