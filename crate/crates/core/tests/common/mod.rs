#![allow(dead_code)]

use reid_lstm::evaluation::ItemMeta;
use reid_lstm::model::{Activation, BaselineParams, EmbeddingModel, Label, PairExample};
use reid_lstm::numerics::Matrix;
use reid_lstm::{RowSequence, ScoreMatrix, SeededRng, SiameseParams};

pub const FD_EPS: f64 = 1e-5;
/// Denominator floor, per unit of loss, for entries whose true gradient is
/// (near) zero. Central differences carry roughly `|loss| * 2e-16 / FD_EPS`
/// of roundoff, which would otherwise dominate such entries.
pub const REL_FLOOR: f64 = 1e-6;

pub fn random_seq(rng: &mut SeededRng, rows: usize, dim: usize) -> RowSequence {
    let data = (0..rows * dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    RowSequence::from_flat(rows, dim, data).unwrap()
}

pub fn randomize<M: EmbeddingModel>(model: &mut M, rng: &mut SeededRng, scale: f64) {
    for p in model.parameters_mut() {
        p.iter_mut().for_each(|v| *v = rng.uniform(-scale, scale));
    }
}

/// Largest relative error between the analytic gradient and central
/// differences over every parameter entry.
pub fn worst_relative_error<M: EmbeddingModel>(model: &M, pair: &PairExample, margin: f64) -> f64 {
    let (loss, analytic) = model.pair_gradients(pair, margin).unwrap();
    let floor = REL_FLOOR * loss.abs().max(1.0);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (block, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = probe.parameters()[block][k];
            probe.parameters_mut()[block][k] = orig + FD_EPS;
            let up = probe.pair_gradients(pair, margin).unwrap().0;
            probe.parameters_mut()[block][k] = orig - FD_EPS;
            let down = probe.pair_gradients(pair, margin).unwrap().0;
            probe.parameters_mut()[block][k] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let err = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

/// Margin placing the pair's distance well inside the active hinge region.
pub fn active_margin<M: EmbeddingModel>(model: &M, pair: &PairExample) -> f64 {
    let d = reid_lstm::model::distance(&model.embed(&pair.p).unwrap(), &model.embed(&pair.q).unwrap()).unwrap();
    d + 0.5
}

pub struct GradCase {
    pub seed: u64,
    pub rows: usize,
    pub dim: usize,
    pub hidden: usize,
    pub lstm_similar: f64,
    pub lstm_dissimilar: f64,
    pub baseline: Vec<f64>,
}

impl GradCase {
    pub fn worst(&self) -> f64 {
        self.baseline
            .iter()
            .copied()
            .fold(self.lstm_similar.max(self.lstm_dissimilar), f64::max)
    }
}

/// One random configuration with `d <= 7`, `n <= 5`, `R <= 6`, checking the
/// LSTM model under both labels and 1- to 3-layer baselines.
pub fn gradient_case(seed: u64) -> GradCase {
    let mut rng = SeededRng::new(seed);
    let rows = 1 + rng.below(6);
    let dim = 1 + rng.below(7);
    let hidden = 1 + rng.below(5);

    let mut model = SiameseParams::init(dim, hidden, rows, &mut rng).unwrap();
    randomize(&mut model, &mut rng, 0.8);
    let p = random_seq(&mut rng, rows, dim);
    let q = random_seq(&mut rng, rows, dim);
    let similar = PairExample::new(p.clone(), q.clone(), Label::Similar, 0).unwrap();
    let dissimilar = PairExample::new(p, q, Label::Dissimilar, 1).unwrap();
    let lstm_similar = worst_relative_error(&model, &similar, 0.5);
    let lstm_dissimilar = worst_relative_error(&model, &dissimilar, active_margin(&model, &dissimilar));

    let mut baseline = Vec::new();
    for (layers, activation) in [(1, Activation::Tanh), (2, Activation::Sigmoid), (3, Activation::Tanh)] {
        let widths: Vec<usize> = (0..layers).map(|_| 1 + rng.below(rows * dim + 2)).collect();
        let mut b = BaselineParams::init(rows, dim, &widths, activation, &mut rng).unwrap();
        randomize(&mut b, &mut rng, 0.6);
        baseline.push(worst_relative_error(&b, &similar, 0.5));
        baseline.push(worst_relative_error(&b, &dissimilar, active_margin(&b, &dissimilar)));
    }
    GradCase {
        seed,
        rows,
        dim,
        hidden,
        lstm_similar,
        lstm_dissimilar,
        baseline,
    }
}

pub fn meta(id: &str, identity: u32, camera: u32) -> ItemMeta {
    ItemMeta {
        id: id.to_string(),
        identity,
        camera,
    }
}

/// Random score matrix in which every query has at least one valid match.
pub fn random_scores(rng: &mut SeededRng, queries: usize, gallery: usize, identities: u32) -> ScoreMatrix {
    let query: Vec<ItemMeta> = (0..queries)
        .map(|k| meta(&format!("q{k}"), rng.below(identities as usize) as u32, 0))
        .collect();
    let mut gal: Vec<ItemMeta> = (0..gallery)
        .map(|k| meta(&format!("g{k}"), rng.below(identities as usize) as u32, 1 + rng.below(2) as u32))
        .collect();
    // plant one cross-camera match per query
    for (k, q) in query.iter().enumerate() {
        gal[k % gallery].identity = q.identity;
    }
    let data = (0..queries * gallery).map(|_| rng.uniform(0.0, 3.0)).collect();
    ScoreMatrix::new(Matrix::from_vec(queries, gallery, data).unwrap(), query, gal).unwrap()
}

/// Exhaustive CMC and mAP: the rank of a relevant item is one plus the number
/// of admissible gallery items that beat it, an equal distance at a lower
/// index counting as beating.
pub fn brute_force(m: &ScoreMatrix) -> (Vec<f64>, f64, usize) {
    let g = m.gallery.len();
    let mut hits = vec![0usize; g];
    let mut ap_sum = 0.0;
    let mut valid = 0;
    for (qi, q) in m.query.iter().enumerate() {
        let row = m.distances.row(qi);
        let admissible = |j: usize| !(m.gallery[j].identity == q.identity && m.gallery[j].camera == q.camera);
        let beats = |a: usize, b: usize| row[a] < row[b] || (row[a] == row[b] && a < b);
        let mut ranks: Vec<usize> = (0..g)
            .filter(|&j| admissible(j) && m.gallery[j].identity == q.identity)
            .map(|j| 1 + (0..g).filter(|&o| o != j && admissible(o) && beats(o, j)).count())
            .collect();
        if ranks.is_empty() {
            continue;
        }
        ranks.sort_unstable();
        valid += 1;
        hits[ranks[0] - 1] += 1;
        let mut ap = 0.0;
        for (found, r) in ranks.iter().enumerate() {
            ap += (found + 1) as f64 / *r as f64;
        }
        ap_sum += ap / ranks.len() as f64;
    }
    let mut cum = 0;
    let curve = hits
        .iter()
        .map(|h| {
            cum += h;
            cum as f64 / valid as f64
        })
        .collect();
    (curve, ap_sum / valid as f64, valid)
}
