//! Covariate encoding for the parametric (linear / logistic) families.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{CellKey, CovariateColumn, CovariateKind};
use crate::error::{Error, Result};

/// Which terms enter a parametric design.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terms {
    /// Intercept plus one block per covariate (dummies for categorical levels).
    #[default]
    MainEffects,
    /// Main effects plus products of every pair of covariate blocks.
    Pairwise,
    /// One indicator per observed covariate cell, no intercept. Categorical only.
    CellIndicators,
}

#[derive(Clone, Debug)]
enum Block {
    Continuous,
    /// Dummies for every level but the first.
    Categorical { levels: Vec<i64> },
}

impl Block {
    fn width(&self) -> usize {
        match self {
            Block::Continuous => 1,
            Block::Categorical { levels } => levels.len() - 1,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct DesignEncoder {
    terms: Terms,
    columns: Vec<CovariateColumn>,
    blocks: Vec<Block>,
    cells: HashMap<CellKey, usize>,
    n_features: usize,
}

impl DesignEncoder {
    /// Learns levels (or cells) from the fitting rows.
    pub fn learn<'a>(
        terms: Terms,
        columns: &[CovariateColumn],
        rows: impl Iterator<Item = &'a [f64]>,
    ) -> Result<Self> {
        let mut levels: Vec<Vec<i64>> = vec![Vec::new(); columns.len()];
        let mut cells: HashMap<CellKey, usize> = HashMap::new();
        let mut cell_list: Vec<CellKey> = Vec::new();
        for row in rows {
            for (j, c) in columns.iter().enumerate() {
                if c.kind == CovariateKind::Categorical {
                    let v = row[j] as i64;
                    if let Err(pos) = levels[j].binary_search(&v) {
                        levels[j].insert(pos, v);
                    }
                }
            }
            if terms == Terms::CellIndicators {
                let key = CellKey(row.iter().map(|&v| v as i64).collect());
                if !cells.contains_key(&key) {
                    cells.insert(key.clone(), 0);
                    cell_list.push(key);
                }
            }
        }
        if terms == Terms::CellIndicators {
            if let Some(c) = columns.iter().find(|c| c.kind == CovariateKind::Continuous) {
                return Err(Error::ContinuousWithoutBinning(c.name.clone()));
            }
            cell_list.sort();
            for (k, key) in cell_list.iter().enumerate() {
                cells.insert(key.clone(), k);
            }
        }
        let blocks: Vec<Block> = columns
            .iter()
            .zip(levels)
            .map(|(c, levels)| match c.kind {
                CovariateKind::Continuous => Block::Continuous,
                CovariateKind::Categorical => Block::Categorical { levels },
            })
            .collect();
        let main: usize = blocks.iter().map(Block::width).sum();
        let n_features = match terms {
            Terms::MainEffects => 1 + main,
            Terms::Pairwise => {
                let mut pairs = 0;
                for j in 0..blocks.len() {
                    for k in j + 1..blocks.len() {
                        pairs += blocks[j].width() * blocks[k].width();
                    }
                }
                1 + main + pairs
            }
            Terms::CellIndicators => cells.len(),
        };
        Ok(DesignEncoder {
            terms,
            columns: columns.to_vec(),
            blocks,
            cells,
            n_features,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Appends the encoded row to `out`.
    pub fn encode(&self, row: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::CovariateArity {
                expected: self.columns.len(),
                got: row.len(),
            });
        }
        if self.terms == Terms::CellIndicators {
            let key = CellKey(row.iter().map(|&v| v as i64).collect());
            let k = *self
                .cells
                .get(&key)
                .ok_or_else(|| Error::UnseenCategoryLevel(key.to_string()))?;
            let start = out.len();
            out.resize(start + self.n_features, 0.0);
            out[start + k] = 1.0;
            return Ok(());
        }
        let start = out.len();
        out.push(1.0);
        let mut spans = Vec::with_capacity(self.blocks.len());
        for (j, block) in self.blocks.iter().enumerate() {
            let begin = out.len();
            match block {
                Block::Continuous => out.push(row[j]),
                Block::Categorical { levels } => {
                    let v = row[j] as i64;
                    let pos = levels.binary_search(&v).map_err(|_| {
                        Error::UnseenCategoryLevel(format!("{}={}", self.columns[j].name, v))
                    })?;
                    for k in 1..levels.len() {
                        out.push(if k == pos { 1.0 } else { 0.0 });
                    }
                }
            }
            spans.push(begin..out.len());
        }
        if self.terms == Terms::Pairwise {
            for j in 0..spans.len() {
                for k in j + 1..spans.len() {
                    for a in spans[j].clone() {
                        for b in spans[k].clone() {
                            out.push(out[a] * out[b]);
                        }
                    }
                }
            }
        }
        debug_assert_eq!(out.len() - start, self.n_features);
        Ok(())
    }

    /// Human-readable term labels, aligned with the coefficients.
    pub fn term_names(&self) -> Vec<String> {
        if self.terms == Terms::CellIndicators {
            let mut cells: Vec<(&CellKey, &usize)> = self.cells.iter().collect();
            cells.sort_by_key(|(_, &k)| k);
            return cells.into_iter().map(|(c, _)| format!("cell[{c}]")).collect();
        }
        let mut names = vec!["intercept".to_string()];
        let mut spans: Vec<Vec<String>> = Vec::new();
        for (c, block) in self.columns.iter().zip(&self.blocks) {
            let block_names = match block {
                Block::Continuous => vec![c.name.clone()],
                Block::Categorical { levels } => {
                    levels[1..].iter().map(|l| format!("{}={}", c.name, l)).collect()
                }
            };
            names.extend(block_names.iter().cloned());
            spans.push(block_names);
        }
        if self.terms == Terms::Pairwise {
            for j in 0..spans.len() {
                for k in j + 1..spans.len() {
                    for a in &spans[j] {
                        for b in &spans[k] {
                            names.push(format!("{a}:{b}"));
                        }
                    }
                }
            }
        }
        names
    }
}
