//! Weight-shared two-branch model: LSTM over rows, linear map of the
//! concatenated hidden states, Euclidean distance and contrastive loss.
//! Also the LSTM-free baseline that maps concatenated raw rows directly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::RowSequence;
use crate::error::{Error, Result};
use crate::io_util::{expect_eof, read_f64s, read_magic, read_u32, write_f64s};
use crate::lstm::{sequence_backward, sequence_forward_zero, LstmParams};
use crate::numerics::{init_bound, sigmoid_scalar, uniform_init, Matrix, SeededRng};

pub const MODEL_MAGIC: &[u8; 8] = b"SSIAM001";

/// Below this distance a dissimilar pair has no usable repulsion direction.
pub const HINGE_ZERO_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Similar = 0,
    Dissimilar = 1,
}

impl Label {
    pub fn from_int(y: u8) -> Result<Label> {
        match y {
            0 => Ok(Label::Similar),
            1 => Ok(Label::Dissimilar),
            other => Err(Error::InvalidArgument(format!("pair label must be 0 or 1, got {other}"))),
        }
    }

    pub fn value(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub p: RowSequence,
    pub q: RowSequence,
    pub label: Label,
    pub index: usize,
}

impl PairExample {
    pub fn new(p: RowSequence, q: RowSequence, label: Label, index: usize) -> Result<Self> {
        if p.len() != q.len() || p.dim() != q.dim() {
            return Err(Error::shape(
                "PairExample",
                format!("{}x{}", p.len(), p.dim()),
                format!("{}x{}", q.len(), q.dim()),
            ));
        }
        Ok(PairExample { p, q, label, index })
    }

    pub fn swapped(&self) -> PairExample {
        PairExample {
            p: self.q.clone(),
            q: self.p.clone(),
            ..self.clone()
        }
    }
}

/// Euclidean distance between two embeddings.
pub fn distance(s_p: &[f64], s_q: &[f64]) -> Result<f64> {
    if s_p.len() != s_q.len() {
        return Err(Error::shape("distance", s_p.len(), s_q.len()));
    }
    Ok(s_p
        .iter()
        .zip(s_q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// `(1−Y)·½·d² + Y·½·max(0, m−d)²`
pub fn contrastive_loss(dist: f64, label: Label, margin: f64) -> Result<f64> {
    if !(dist >= 0.0) {
        return Err(Error::InvalidArgument(format!("distance must be >= 0, got {dist}")));
    }
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be > 0, got {margin}")));
    }
    Ok(match label {
        Label::Similar => 0.5 * dist * dist,
        Label::Dissimilar => {
            let gap = (margin - dist).max(0.0);
            0.5 * gap * gap
        }
    })
}

/// Loss and `∂L/∂s_p` for one pair of embeddings; `∂L/∂s_q` is the negation.
///
/// A dissimilar pair at zero distance gets a zero gradient.
pub fn loss_and_embedding_grad(s_p: &[f64], s_q: &[f64], label: Label, margin: f64) -> Result<(f64, Vec<f64>)> {
    let dist = distance(s_p, s_q)?;
    if !dist.is_finite() {
        // let the caller see the divergence instead of a domain error
        return Ok((f64::NAN, vec![f64::NAN; s_p.len()]));
    }
    let loss = contrastive_loss(dist, label, margin)?;
    let coeff = match label {
        Label::Similar => 1.0,
        Label::Dissimilar if dist < margin && dist >= HINGE_ZERO_DISTANCE => -(margin - dist) / dist,
        Label::Dissimilar => 0.0,
    };
    let grad = s_p.iter().zip(s_q).map(|(a, b)| coeff * (a - b)).collect();
    Ok((loss, grad))
}

/// A model that embeds row sequences and can be trained on pairs.
///
/// Parameters are exposed as flat tensors in a fixed order; gradients come
/// back in the same order.
pub trait EmbeddingModel: Clone + Send + Sync {
    fn embed(&self, seq: &RowSequence) -> Result<Vec<f64>>;

    /// Pair loss and its gradient, summed over both weight-shared branches.
    fn pair_gradients(&self, pair: &PairExample, margin: f64) -> Result<(f64, Vec<Vec<f64>>)>;

    fn parameters(&self) -> Vec<&[f64]>;

    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseParams {
    pub lstm: LstmParams,
    /// `(R·n) × (R·n)`
    pub w_m: Matrix,
    rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseGradients {
    pub w_m: Matrix,
    pub lstm_w: Matrix,
    pub lstm_bias: Vec<f64>,
}

impl SiameseParams {
    pub fn new(lstm: LstmParams, w_m: Matrix, rows: usize) -> Result<Self> {
        let side = rows * lstm.hidden_dim();
        if rows == 0 || w_m.shape() != (side, side) {
            return Err(Error::shape("SiameseParams::new", w_m.shape_str(), format!("{side}x{side}")));
        }
        if !w_m.is_finite() {
            return Err(Error::Numerical("non-finite embedding weight".into()));
        }
        Ok(SiameseParams { lstm, w_m, rows })
    }

    /// Both `W_L` and `W_M` uniform in `±sqrt(1/(d+n))`; LSTM biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, rows: usize, rng: &mut SeededRng) -> Result<Self> {
        let lstm = LstmParams::init(input_dim, hidden_dim, rng)?;
        let side = rows * hidden_dim;
        let w_m = uniform_init(rng, side, side, init_bound(input_dim, hidden_dim))?;
        SiameseParams::new(lstm, w_m, rows)
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, rows: usize) -> Self {
        let side = rows * hidden_dim;
        SiameseParams {
            lstm: LstmParams::zeros(input_dim, hidden_dim),
            w_m: Matrix::zeros(side, side),
            rows,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.w_m.cols()
    }

    fn check_seq(&self, seq: &RowSequence) -> Result<()> {
        if seq.len() != self.rows || seq.dim() != self.input_dim() {
            return Err(Error::shape(
                "model input",
                format!("R={}, d={}", seq.len(), seq.dim()),
                format!("R={}, d={}", self.rows, self.input_dim()),
            ));
        }
        Ok(())
    }

    /// Embedding plus the stacked hidden states it was computed from.
    fn embed_with_trace(&self, seq: &RowSequence) -> Result<(Vec<f64>, crate::lstm::LstmTrace)> {
        self.check_seq(seq)?;
        let trace = sequence_forward_zero(&self.lstm, seq)?;
        let s = self.w_m.matvec_transposed(&trace.concat_hidden())?;
        Ok((s, trace))
    }

    /// Backpropagates `∂L/∂s` through one branch and adds into `grads`.
    fn branch_backward(
        &self,
        trace: &crate::lstm::LstmTrace,
        d_s: &[f64],
        grads: &mut SiameseGradients,
    ) -> Result<()> {
        let n = self.hidden_dim();
        // s = W_Mᵀ H  ⇒  ∂L/∂W_M = H ⊗ ∂L/∂s,  ∂L/∂H = W_M ∂L/∂s
        grads.w_m.add_outer(&trace.concat_hidden(), d_s)?;
        let d_hidden = self.w_m.matvec(d_s)?;
        let d_h: Vec<Vec<f64>> = d_hidden.chunks_exact(n).map(<[f64]>::to_vec).collect();
        let lstm_grads = sequence_backward(&self.lstm, trace, &d_h)?;
        grads.lstm_w.add_assign(&lstm_grads.d_w)?;
        crate::numerics::axpy(1.0, &lstm_grads.d_bias, &mut grads.lstm_bias);
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(MODEL_MAGIC)?;
        self.lstm.write_to(out)?;
        out.write_all(&(self.rows as u32).to_le_bytes())?;
        write_f64s(out, self.w_m.data())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(input: &mut impl Read, origin: &Path) -> Result<Self> {
        read_magic(input, MODEL_MAGIC, origin)?;
        let lstm = LstmParams::read_from(input, origin)?;
        let rows = read_u32(input, origin, "row count")? as usize;
        if rows == 0 {
            return Err(Error::Inconsistent {
                path: origin.to_path_buf(),
                detail: "row count 0".into(),
            });
        }
        let side = rows * lstm.hidden_dim();
        let w_m = read_f64s(input, side * side, origin, "embedding weights")?;
        expect_eof(input, origin)?;
        SiameseParams::new(lstm, Matrix::from_vec(side, side, w_m)?, rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        SiameseParams::read_from(&mut BufReader::new(file), path)
    }
}

/// `s = W_Mᵀ [h_1; …; h_R]`, linear with no bias.
pub fn embed(params: &SiameseParams, seq: &RowSequence) -> Result<Vec<f64>> {
    params.embed_with_trace(seq).map(|(s, _)| s)
}

/// Loss of one pair and the parameter gradients summed over both branches.
pub fn pair_backward(params: &SiameseParams, pair: &PairExample, margin: f64) -> Result<(f64, SiameseGradients)> {
    let (s_p, trace_p) = params.embed_with_trace(&pair.p)?;
    let (s_q, trace_q) = params.embed_with_trace(&pair.q)?;
    let (loss, d_sp) = loss_and_embedding_grad(&s_p, &s_q, pair.label, margin)?;
    let d_sq: Vec<f64> = d_sp.iter().map(|g| -g).collect();

    let n = params.hidden_dim();
    let d = params.input_dim();
    let mut grads = SiameseGradients {
        w_m: Matrix::zeros(params.w_m.rows(), params.w_m.cols()),
        lstm_w: Matrix::zeros(4 * n, d + n),
        lstm_bias: vec![0.0; 4 * n],
    };
    params.branch_backward(&trace_p, &d_sp, &mut grads)?;
    params.branch_backward(&trace_q, &d_sq, &mut grads)?;
    Ok((loss, grads))
}

impl EmbeddingModel for SiameseParams {
    fn embed(&self, seq: &RowSequence) -> Result<Vec<f64>> {
        embed(self, seq)
    }

    fn pair_gradients(&self, pair: &PairExample, margin: f64) -> Result<(f64, Vec<Vec<f64>>)> {
        let (loss, g) = pair_backward(self, pair, margin)?;
        Ok((loss, vec![g.lstm_w.into_data(), g.lstm_bias, g.w_m.into_data()]))
    }

    fn parameters(&self) -> Vec<&[f64]> {
        vec![self.lstm.w.data(), &self.lstm.bias, self.w_m.data()]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.lstm.w.data_mut(), &mut self.lstm.bias, self.w_m.data_mut()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid_scalar(x),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// LSTM-free baseline: `a_k = f(W_kᵀ a_{k−1})` starting from the concatenated
/// raw rows, for one or more layers.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub layers: Vec<Matrix>,
    pub activation: Activation,
    rows: usize,
    input_dim: usize,
}

impl BaselineParams {
    pub fn new(layers: Vec<Matrix>, activation: Activation, rows: usize, input_dim: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("baseline needs at least one layer".into()));
        }
        let mut width = rows * input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.rows() != width {
                return Err(Error::shape("baseline layer chain", format!("layer {k}: {}", layer.shape_str()), width));
            }
            width = layer.cols();
        }
        Ok(BaselineParams {
            layers,
            activation,
            rows,
            input_dim,
        })
    }

    /// `widths` are the output widths of each layer; each layer is
    /// initialized uniform in `±sqrt(1/(in + out))`.
    pub fn init(
        rows: usize,
        input_dim: usize,
        widths: &[usize],
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut fan_in = rows * input_dim;
        let mut layers = Vec::with_capacity(widths.len());
        for &w in widths {
            layers.push(uniform_init(rng, fan_in, w, init_bound(fan_in, w))?);
            fan_in = w;
        }
        BaselineParams::new(layers, activation, rows, input_dim)
    }

    /// Layer widths when every layer keeps the input width `R·d`.
    pub fn default_widths(rows: usize, input_dim: usize, layers: usize) -> Vec<usize> {
        vec![rows * input_dim; layers]
    }

    fn forward_all(&self, seq: &RowSequence) -> Result<Vec<Vec<f64>>> {
        if seq.len() != self.rows || seq.dim() != self.input_dim {
            return Err(Error::shape(
                "baseline input",
                format!("R={}, d={}", seq.len(), seq.dim()),
                format!("R={}, d={}", self.rows, self.input_dim),
            ));
        }
        let mut acts = vec![seq.concat().to_vec()];
        for layer in &self.layers {
            let z = layer.matvec_transposed(acts.last().unwrap())?;
            acts.push(z.into_iter().map(|v| self.activation.apply(v)).collect());
        }
        Ok(acts)
    }

    fn backward_into(&self, acts: &[Vec<f64>], d_out: &[f64], grads: &mut [Matrix]) -> Result<()> {
        let mut delta = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            for (dv, &y) in delta.iter_mut().zip(&acts[k + 1]) {
                *dv *= self.activation.derivative_from_output(y);
            }
            grads[k].add_outer(&acts[k], &delta)?;
            if k > 0 {
                delta = self.layers[k].matvec(&delta)?;
            }
        }
        Ok(())
    }
}

pub fn baseline_forward(params: &BaselineParams, seq: &RowSequence) -> Result<Vec<f64>> {
    Ok(params.forward_all(seq)?.pop().unwrap())
}

/// Pair loss and per-layer gradients for the baseline, summed over branches.
pub fn baseline_pair_backward(params: &BaselineParams, pair: &PairExample, margin: f64) -> Result<(f64, Vec<Matrix>)> {
    let acts_p = params.forward_all(&pair.p)?;
    let acts_q = params.forward_all(&pair.q)?;
    let (loss, d_sp) = loss_and_embedding_grad(acts_p.last().unwrap(), acts_q.last().unwrap(), pair.label, margin)?;
    let d_sq: Vec<f64> = d_sp.iter().map(|g| -g).collect();
    let mut grads: Vec<Matrix> = params.layers.iter().map(|l| Matrix::zeros(l.rows(), l.cols())).collect();
    params.backward_into(&acts_p, &d_sp, &mut grads)?;
    params.backward_into(&acts_q, &d_sq, &mut grads)?;
    Ok((loss, grads))
}

impl EmbeddingModel for BaselineParams {
    fn embed(&self, seq: &RowSequence) -> Result<Vec<f64>> {
        baseline_forward(self, seq)
    }

    fn pair_gradients(&self, pair: &PairExample, margin: f64) -> Result<(f64, Vec<Vec<f64>>)> {
        let (loss, grads) = baseline_pair_backward(self, pair, margin)?;
        Ok((loss, grads.into_iter().map(Matrix::into_data).collect()))
    }

    fn parameters(&self) -> Vec<&[f64]> {
        self.layers.iter().map(Matrix::data).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().map(Matrix::data_mut).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::Gate;
    use proptest::prelude::*;

    fn seq(rows: &[&[f64]]) -> RowSequence {
        RowSequence::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_seq(rng: &mut SeededRng, rows: usize, dim: usize) -> RowSequence {
        RowSequence::from_flat(rows, dim, (0..rows * dim).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn distance_basics() {
        assert_eq!(distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(distance(&[3.0, 0.0], &[0.0, 4.0]).unwrap(), 5.0);
        assert!(distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn contrastive_loss_values() {
        assert_eq!(contrastive_loss(0.0, Label::Similar, 0.5).unwrap(), 0.0);
        assert_eq!(contrastive_loss(0.0, Label::Dissimilar, 0.5).unwrap(), 0.125);
        assert_eq!(contrastive_loss(0.5, Label::Dissimilar, 0.5).unwrap(), 0.0);
        assert_eq!(contrastive_loss(2.0, Label::Dissimilar, 0.5).unwrap(), 0.0);
        assert_eq!(contrastive_loss(2.0, Label::Similar, 0.5).unwrap(), 2.0);
        assert!(contrastive_loss(-0.1, Label::Similar, 0.5).is_err());
        assert!(contrastive_loss(0.1, Label::Similar, 0.0).is_err());
        assert!(Label::from_int(2).is_err());
    }

    #[test]
    fn identity_embedding_concatenates_hidden_states() {
        let mut rng = SeededRng::new(4);
        let mut params = SiameseParams::init(3, 2, 4, &mut rng).unwrap();
        params.w_m = Matrix::identity(8);
        let x = random_seq(&mut rng, 4, 3);
        let trace = sequence_forward_zero(&params.lstm, &x).unwrap();
        assert_eq!(embed(&params, &x).unwrap(), trace.concat_hidden());
    }

    #[test]
    fn zero_lstm_embeds_to_zero() {
        let mut rng = SeededRng::new(4);
        let mut params = SiameseParams::zeros(3, 2, 4);
        params.w_m = uniform_init(&mut rng, 8, 8, 1.0).unwrap();
        let x = random_seq(&mut rng, 4, 3);
        assert!(embed(&params, &x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_row_scalar_chain() {
        // n = d = 1: only the candidate input weight and output bias are set.
        let mut lstm = LstmParams::zeros(1, 1);
        lstm.w.set(Gate::Candidate as usize, 0, 1.0);
        lstm.gate_bias_mut(Gate::Input)[0] = 2.0;
        let w_m = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let params = SiameseParams::new(lstm, w_m, 2).unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (x1, x2): (f64, f64) = (0.7, -0.4);
        let c1 = sig(2.0) * x1.tanh();
        let h1 = 0.5 * c1.tanh();
        let c2 = 0.5 * c1 + sig(2.0) * x2.tanh();
        let h2 = 0.5 * c2.tanh();
        let expected = [0.5 * h1 + 2.0 * h2, -h1 + 0.25 * h2];

        let s = embed(&params, &seq(&[&[x1], &[x2]])).unwrap();
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn embed_rejects_wrong_shape() {
        let params = SiameseParams::zeros(3, 2, 4);
        assert!(embed(&params, &seq(&[&[0.0, 0.0, 0.0]])).is_err());
        assert!(SiameseParams::new(LstmParams::zeros(3, 2), Matrix::zeros(7, 8), 4).is_err());
    }

    #[test]
    fn identical_similar_pair_has_zero_gradient() {
        let mut rng = SeededRng::new(6);
        let params = SiameseParams::init(3, 2, 3, &mut rng).unwrap();
        let x = random_seq(&mut rng, 3, 3);
        let pair = PairExample::new(x.clone(), x, Label::Similar, 0).unwrap();
        let (loss, g) = pair_backward(&params, &pair, 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.w_m.data().iter().chain(g.lstm_w.data()).chain(&g.lstm_bias).all(|&v| v == 0.0));
    }

    #[test]
    fn inactive_hinge_has_zero_gradient() {
        let mut rng = SeededRng::new(6);
        let params = SiameseParams::init(3, 2, 3, &mut rng).unwrap();
        let (a, b) = (random_seq(&mut rng, 3, 3), random_seq(&mut rng, 3, 3));
        let d = distance(&embed(&params, &a).unwrap(), &embed(&params, &b).unwrap()).unwrap();
        let pair = PairExample::new(a, b, Label::Dissimilar, 0).unwrap();
        let (loss, g) = pair_backward(&params, &pair, d * 0.9).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.w_m.data().iter().chain(g.lstm_w.data()).chain(&g.lstm_bias).all(|&v| v == 0.0));
    }

    #[test]
    fn dissimilar_pair_at_zero_distance_uses_zero_subgradient() {
        let params = SiameseParams::zeros(2, 2, 2);
        let x = seq(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let pair = PairExample::new(x.clone(), x, Label::Dissimilar, 0).unwrap();
        let (loss, g) = pair_backward(&params, &pair, 0.5).unwrap();
        assert_eq!(loss, 0.125);
        assert!(g.w_m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn baseline_fixed_points() {
        let x = seq(&[&[0.3, -0.2], &[1.5, 0.0]]);
        let zero = BaselineParams::new(vec![Matrix::zeros(4, 3)], Activation::Tanh, 2, 2).unwrap();
        assert_eq!(baseline_forward(&zero, &x).unwrap(), vec![0.0; 3]);
        let ident = BaselineParams::new(vec![Matrix::identity(4)], Activation::Tanh, 2, 2).unwrap();
        let expected: Vec<f64> = x.concat().iter().map(|v| v.tanh()).collect();
        assert_eq!(baseline_forward(&ident, &x).unwrap(), expected);
        assert!(BaselineParams::new(vec![Matrix::zeros(4, 3), Matrix::zeros(4, 3)], Activation::Tanh, 2, 2).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let params = SiameseParams::init(4, 3, 5, &mut SeededRng::new(10)).unwrap();
        let bytes = params.to_bytes();
        assert_eq!(&bytes[..8], b"SSIAM001");
        assert_eq!(&bytes[8..16], b"SLSTM001");
        let back = SiameseParams::read_from(&mut bytes.as_slice(), "mem".as_ref()).unwrap();
        assert_eq!(back, params);
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(SiameseParams::read_from(&mut extra.as_slice(), "mem".as_ref()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn loss_is_bounded_and_monotone(d in 0.0f64..3.0, delta in 1e-6f64..1.0, m in 0.05f64..2.0) {
            for label in [Label::Similar, Label::Dissimilar] {
                let l = contrastive_loss(d, label, m).unwrap();
                prop_assert!(l >= 0.0);
                prop_assert!(l <= 0.5 * (d * d).max(m * m) + 1e-15);
            }
            let (s0, s1) = (
                contrastive_loss(d, Label::Similar, m).unwrap(),
                contrastive_loss(d + delta, Label::Similar, m).unwrap(),
            );
            prop_assert!(s1 > s0);
            let (n0, n1) = (
                contrastive_loss(d, Label::Dissimilar, m).unwrap(),
                contrastive_loss(d + delta, Label::Dissimilar, m).unwrap(),
            );
            prop_assert!(n1 <= n0);
            if d >= m {
                prop_assert_eq!(n0, 0.0);
            }
        }

        #[test]
        fn distance_is_symmetric(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6)) {
            prop_assert_eq!(distance(&a, &b).unwrap(), distance(&b, &a).unwrap());
        }

        #[test]
        fn swapping_pair_leaves_loss_and_gradients(seed in 0u64..1000, dissimilar in any::<bool>()) {
            let mut rng = SeededRng::new(seed);
            let params = SiameseParams::init(3, 2, 3, &mut rng).unwrap();
            let label = if dissimilar { Label::Dissimilar } else { Label::Similar };
            let pair = PairExample::new(random_seq(&mut rng, 3, 3), random_seq(&mut rng, 3, 3), label, 0).unwrap();
            let (l1, g1) = pair_backward(&params, &pair, 0.5).unwrap();
            let (l2, g2) = pair_backward(&params, &pair.swapped(), 0.5).unwrap();
            prop_assert_eq!(l1, l2);
            let all = |g: &SiameseGradients| -> Vec<f64> {
                g.w_m.data().iter().chain(g.lstm_w.data()).chain(&g.lstm_bias).copied().collect()
            };
            for (a, b) in all(&g1).iter().zip(all(&g2)) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
