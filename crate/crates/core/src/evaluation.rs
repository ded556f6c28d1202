//! Query-versus-gallery scoring, score fusion, multi-query averaging, CMC and
//! mean average precision.
//!
//! Ranking protocol: gallery items sharing both identity and camera with the
//! query are ignored; remaining same-identity items are the correct matches.
//! Equal distances are ordered by gallery index.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureSet, Item};
use crate::error::{Error, Result};
use crate::model::{distance, EmbeddingModel};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemMeta {
    pub id: String,
    pub identity: u32,
    pub camera: u32,
}

impl From<&Item> for ItemMeta {
    fn from(it: &Item) -> Self {
        ItemMeta {
            id: it.id.clone(),
            identity: it.identity,
            camera: it.camera,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    /// `queries × gallery`, smaller is a better match.
    pub distances: Matrix,
    pub query: Vec<ItemMeta>,
    pub gallery: Vec<ItemMeta>,
    /// Rows that were constant under min-max rescaling and mapped to zeros.
    pub constant_rows: usize,
}

impl ScoreMatrix {
    pub fn new(distances: Matrix, query: Vec<ItemMeta>, gallery: Vec<ItemMeta>) -> Result<Self> {
        if distances.shape() != (query.len(), gallery.len()) {
            return Err(Error::shape(
                "ScoreMatrix",
                distances.shape_str(),
                format!("{}x{}", query.len(), gallery.len()),
            ));
        }
        if distances.data().iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::InvalidArgument("score matrix entries must be finite and >= 0".into()));
        }
        Ok(ScoreMatrix {
            distances,
            query,
            gallery,
            constant_rows: 0,
        })
    }

    fn from_embeddings(queries: &[Vec<f64>], gallery: &[Vec<f64>], qmeta: Vec<ItemMeta>, gmeta: Vec<ItemMeta>) -> Result<Self> {
        let mut distances = Matrix::zeros(queries.len(), gallery.len());
        for (qi, q) in queries.iter().enumerate() {
            for (gi, g) in gallery.iter().enumerate() {
                distances.set(qi, gi, distance(q, g)?);
            }
        }
        ScoreMatrix::new(distances, qmeta, gmeta)
    }
}

fn embed_all<M: EmbeddingModel>(model: &M, items: &[Item]) -> Result<Vec<Vec<f64>>> {
    items.par_iter().map(|it| model.embed(&it.seq)).collect()
}

/// Distances between the embeddings of every query and gallery item.
pub fn score_matrix<M: EmbeddingModel>(model: &M, queries: &FeatureSet, gallery: &FeatureSet) -> Result<ScoreMatrix> {
    let q = embed_all(model, queries.items())?;
    let g = embed_all(model, gallery.items())?;
    ScoreMatrix::from_embeddings(
        &q,
        &g,
        queries.items().iter().map(ItemMeta::from).collect(),
        gallery.items().iter().map(ItemMeta::from).collect(),
    )
}

/// Distances between concatenated raw row features (no model).
pub fn raw_feature_scores(queries: &FeatureSet, gallery: &FeatureSet) -> Result<ScoreMatrix> {
    let flat = |set: &FeatureSet| -> Vec<Vec<f64>> { set.items().iter().map(|it| it.seq.concat().to_vec()).collect() };
    ScoreMatrix::from_embeddings(
        &flat(queries),
        &flat(gallery),
        queries.items().iter().map(ItemMeta::from).collect(),
        gallery.items().iter().map(ItemMeta::from).collect(),
    )
}

/// Min-max rescales every row of every matrix to `[0, 1]` and averages the
/// matrices. A constant row rescales to zeros and is counted.
pub fn fuse_scores(matrices: &[ScoreMatrix]) -> Result<ScoreMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to fuse".into()))?;
    for m in &matrices[1..] {
        if m.query != first.query || m.gallery != first.gallery {
            return Err(Error::InvalidArgument("fused score matrices must share query and gallery ids".into()));
        }
    }
    let (rows, cols) = first.distances.shape();
    let mut fused = Matrix::zeros(rows, cols);
    let mut constant_rows = 0;
    let weight = 1.0 / matrices.len() as f64;
    for m in matrices {
        for r in 0..rows {
            let row = m.distances.row(r);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            if !(span > 0.0) {
                constant_rows += 1;
                continue;
            }
            for (out, &v) in fused.row_mut(r).iter_mut().zip(row) {
                *out += weight * ((v - lo) / span);
            }
        }
    }
    let mut out = ScoreMatrix::new(fused, first.query.clone(), first.gallery.clone())?;
    out.constant_rows = constant_rows;
    Ok(out)
}

/// Averages the rows of queries sharing identity and camera into one row per
/// group, in order of each group's first appearance.
pub fn multi_query_collapse(matrix: &ScoreMatrix) -> ScoreMatrix {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut index: HashMap<(u32, u32), usize> = HashMap::new();
    for (qi, q) in matrix.query.iter().enumerate() {
        let slot = *index.entry((q.identity, q.camera)).or_insert_with(|| {
            groups.push((qi, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(qi);
    }

    let cols = matrix.gallery.len();
    let mut distances = Matrix::zeros(groups.len(), cols);
    for (gi, (_, members)) in groups.iter().enumerate() {
        let out = distances.row_mut(gi);
        for &qi in members {
            crate::numerics::axpy(1.0, matrix.distances.row(qi), out);
        }
        let scale = 1.0 / members.len() as f64;
        out.iter_mut().for_each(|v| *v *= scale);
    }
    ScoreMatrix {
        distances,
        query: groups.iter().map(|(first, _)| matrix.query[*first].clone()).collect(),
        gallery: matrix.gallery.clone(),
        constant_rows: matrix.constant_rows,
    }
}

/// 1-based ranks of the correct matches for one query, within the filtered
/// gallery list. Empty if the query has no valid match.
fn match_ranks(matrix: &ScoreMatrix, qi: usize) -> Vec<usize> {
    let q = &matrix.query[qi];
    let row = matrix.distances.row(qi);
    let mut order: Vec<usize> = (0..row.len())
        .filter(|&g| {
            let item = &matrix.gallery[g];
            !(item.identity == q.identity && item.camera == q.camera)
        })
        .collect();
    // stable: ties keep gallery index order
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    order
        .iter()
        .enumerate()
        .filter(|(_, &g)| matrix.gallery[g].identity == q.identity)
        .map(|(pos, _)| pos + 1)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cmc {
    /// `curve[k]` is the fraction of valid queries whose first correct match
    /// is at rank `k + 1` or better. Length equals the gallery size.
    pub curve: Vec<f64>,
    pub valid_queries: usize,
    pub excluded_queries: usize,
}

pub fn cmc(matrix: &ScoreMatrix) -> Result<Cmc> {
    let mut hits = vec![0usize; matrix.gallery.len()];
    let mut valid = 0;
    for qi in 0..matrix.query.len() {
        if let Some(&best) = match_ranks(matrix, qi).first() {
            valid += 1;
            hits[best - 1] += 1;
        }
    }
    if valid == 0 {
        return Err(Error::NoValidQueries);
    }
    let mut running = 0;
    let curve = hits
        .iter()
        .map(|h| {
            running += h;
            running as f64 / valid as f64
        })
        .collect();
    Ok(Cmc {
        curve,
        valid_queries: valid,
        excluded_queries: matrix.query.len() - valid,
    })
}

/// Mean over valid queries of the average precision of the ranked gallery.
pub fn mean_average_precision(matrix: &ScoreMatrix) -> Result<f64> {
    let mut total = 0.0;
    let mut valid = 0;
    for qi in 0..matrix.query.len() {
        let ranks = match_ranks(matrix, qi);
        if ranks.is_empty() {
            continue;
        }
        let ap = ranks
            .iter()
            .enumerate()
            .map(|(k, &rank)| (k + 1) as f64 / rank as f64)
            .sum::<f64>()
            / ranks.len() as f64;
        total += ap;
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::NoValidQueries);
    }
    Ok(total / valid as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    SingleQuery,
    MultiQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cmc: Vec<f64>,
    pub rank1: f64,
    pub map: f64,
    pub protocol: Protocol,
    pub excluded_queries: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub constant_rows: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

/// CMC and mAP of `matrix`, collapsing multi-query groups first if asked.
pub fn evaluate(matrix: &ScoreMatrix, protocol: Protocol) -> Result<EvalReport> {
    let collapsed;
    let m = match protocol {
        Protocol::SingleQuery => matrix,
        Protocol::MultiQuery => {
            collapsed = multi_query_collapse(matrix);
            &collapsed
        }
    };
    let curve = cmc(m)?;
    Ok(EvalReport {
        rank1: curve.curve.first().copied().unwrap_or(0.0),
        map: mean_average_precision(m)?,
        cmc: curve.curve,
        protocol,
        excluded_queries: curve.excluded_queries,
        constant_rows: m.constant_rows,
    })
}
