//! Single-layer LSTM without peepholes, with exact backpropagation through
//! time over a stored forward trace.
//!
//! The weight matrix stacks the four gate blocks top to bottom in the order
//! input, forget, output, candidate (`i, f, o, g`); each block has `n` rows and
//! `d + n` columns (input columns first, then recurrent columns). This order is
//! part of the on-disk format.

use std::io::{Read, Write};

use crate::dataset::RowSequence;
use crate::error::{Error, Result};
use crate::io_util::{read_f64s, read_magic, read_u32, write_f64s};
use crate::numerics::{init_bound, sigmoid_scalar, uniform_init, Matrix, SeededRng};

pub const LSTM_MAGIC: &[u8; 8] = b"SLSTM001";

/// Gate block index within the stacked weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];

    pub fn name(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Output => "o",
            Gate::Candidate => "g",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `4n × (d + n)`
    pub w: Matrix,
    /// Length `4n`, same gate order as `w`.
    pub bias: Vec<f64>,
    input_dim: usize,
    hidden_dim: usize,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            w: Matrix::zeros(4 * hidden_dim, input_dim + hidden_dim),
            bias: vec![0.0; 4 * hidden_dim],
            input_dim,
            hidden_dim,
        }
    }

    pub fn new(w: Matrix, bias: Vec<f64>, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if w.shape() != (4 * hidden_dim, input_dim + hidden_dim) {
            return Err(Error::shape(
                "LstmParams::new",
                w.shape_str(),
                format!("{}x{}", 4 * hidden_dim, input_dim + hidden_dim),
            ));
        }
        if bias.len() != 4 * hidden_dim {
            return Err(Error::shape("LstmParams::new bias", bias.len(), 4 * hidden_dim));
        }
        if !w.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("non-finite LSTM parameter".into()));
        }
        Ok(LstmParams {
            w,
            bias,
            input_dim,
            hidden_dim,
        })
    }

    /// Uniform weights in `±sqrt(1/(d+n))`, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidArgument("LSTM dimensions must be nonzero".into()));
        }
        let w = uniform_init(
            rng,
            4 * hidden_dim,
            input_dim + hidden_dim,
            init_bound(input_dim, hidden_dim),
        )?;
        Ok(LstmParams {
            w,
            bias: vec![0.0; 4 * hidden_dim],
            input_dim,
            hidden_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn gate_bias_mut(&mut self, gate: Gate) -> &mut [f64] {
        let n = self.hidden_dim;
        let start = gate as usize * n;
        &mut self.bias[start..start + n]
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(LSTM_MAGIC)?;
        out.write_all(&(self.input_dim as u32).to_le_bytes())?;
        out.write_all(&(self.hidden_dim as u32).to_le_bytes())?;
        write_f64s(out, self.w.data())?;
        write_f64s(out, &self.bias)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(input: &mut impl Read, origin: &std::path::Path) -> Result<Self> {
        read_magic(input, LSTM_MAGIC, origin)?;
        let d = read_u32(input, origin, "input dim")? as usize;
        let n = read_u32(input, origin, "hidden dim")? as usize;
        if d == 0 || n == 0 {
            return Err(Error::Inconsistent {
                path: origin.to_path_buf(),
                detail: format!("LSTM dims d={d}, n={n}"),
            });
        }
        let w = read_f64s(input, 4 * n * (d + n), origin, "LSTM weights")?;
        let bias = read_f64s(input, 4 * n, origin, "LSTM bias")?;
        LstmParams::new(Matrix::from_vec(4 * n, d + n, w)?, bias, d, n)
    }

    fn check_step_dims(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::shape("cell_forward input", x.len(), self.input_dim));
        }
        if h_prev.len() != self.hidden_dim || c_prev.len() != self.hidden_dim {
            return Err(Error::shape(
                "cell_forward state",
                format!("h={}, c={}", h_prev.len(), c_prev.len()),
                self.hidden_dim,
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
}

impl LstmStepState {
    pub fn gate(&self, gate: Gate) -> &[f64] {
        match gate {
            Gate::Input => &self.i,
            Gate::Forget => &self.f,
            Gate::Output => &self.o,
            Gate::Candidate => &self.g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrace {
    pub steps: Vec<LstmStepState>,
    pub inputs: RowSequence,
    pub h0: Vec<f64>,
    pub c0: Vec<f64>,
}

impl LstmTrace {
    /// `[h_1; h_2; …; h_R]`
    pub fn concat_hidden(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.h.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGradients {
    pub d_w: Matrix,
    pub d_bias: Vec<f64>,
    pub d_inputs: Vec<Vec<f64>>,
}

/// One LSTM update from `(h_prev, c_prev)` given input `x`.
pub fn cell_forward(
    params: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<LstmStepState> {
    params.check_step_dims(x, h_prev, c_prev)?;
    let n = params.hidden_dim;
    let d = params.input_dim;

    let mut pre = params.bias.clone();
    for (r, z) in pre.iter_mut().enumerate() {
        let row = params.w.row(r);
        let (wx, wh) = row.split_at(d);
        *z += crate::numerics::dot(wx, x) + crate::numerics::dot(wh, h_prev);
    }

    let i: Vec<f64> = pre[..n].iter().map(|&z| sigmoid_scalar(z)).collect();
    let f: Vec<f64> = pre[n..2 * n].iter().map(|&z| sigmoid_scalar(z)).collect();
    let o: Vec<f64> = pre[2 * n..3 * n].iter().map(|&z| sigmoid_scalar(z)).collect();
    let g: Vec<f64> = pre[3 * n..].iter().map(|&z| z.tanh()).collect();

    let c: Vec<f64> = (0..n).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let h: Vec<f64> = (0..n).map(|k| o[k] * c[k].tanh()).collect();
    Ok(LstmStepState { h, c, i, f, o, g })
}

/// Runs the cell over every row of `seq`, starting from `(h0, c0)`.
pub fn sequence_forward(
    params: &LstmParams,
    seq: &RowSequence,
    h0: &[f64],
    c0: &[f64],
) -> Result<LstmTrace> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    if seq.dim() != params.input_dim {
        return Err(Error::shape("sequence_forward", seq.dim(), params.input_dim));
    }
    let mut steps: Vec<LstmStepState> = Vec::with_capacity(seq.len());
    for r in 0..seq.len() {
        let (h_prev, c_prev) = match steps.last() {
            Some(s) => (s.h.as_slice(), s.c.as_slice()),
            None => (h0, c0),
        };
        let step = cell_forward(params, seq.row(r), h_prev, c_prev)?;
        steps.push(step);
    }
    Ok(LstmTrace {
        steps,
        inputs: seq.clone(),
        h0: h0.to_vec(),
        c0: c0.to_vec(),
    })
}

/// Forward pass from the zero initial state.
pub fn sequence_forward_zero(params: &LstmParams, seq: &RowSequence) -> Result<LstmTrace> {
    let zeros = vec![0.0; params.hidden_dim];
    sequence_forward(params, seq, &zeros, &zeros)
}

/// Backpropagation through time.
///
/// `d_h[r]` is the upstream gradient of the loss with respect to `h_r`; the
/// returned gradients are exact for the traced forward computation.
pub fn sequence_backward(
    params: &LstmParams,
    trace: &LstmTrace,
    d_h: &[Vec<f64>],
) -> Result<LstmGradients> {
    let n = params.hidden_dim;
    let d = params.input_dim;
    if d_h.len() != trace.steps.len() {
        return Err(Error::shape("sequence_backward steps", d_h.len(), trace.steps.len()));
    }
    if let Some(bad) = d_h.iter().find(|g| g.len() != n) {
        return Err(Error::shape("sequence_backward d_h", bad.len(), n));
    }

    let mut d_w = Matrix::zeros(4 * n, d + n);
    let mut d_bias = vec![0.0; 4 * n];
    let mut d_inputs = vec![vec![0.0; d]; trace.steps.len()];

    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];
    let mut d_pre = vec![0.0; 4 * n];
    let mut stacked_input = vec![0.0; d + n];

    for r in (0..trace.steps.len()).rev() {
        let step = &trace.steps[r];
        let (h_prev, c_prev) = if r == 0 {
            (trace.h0.as_slice(), trace.c0.as_slice())
        } else {
            (trace.steps[r - 1].h.as_slice(), trace.steps[r - 1].c.as_slice())
        };

        for k in 0..n {
            let dh = d_h[r][k] + dh_next[k];
            let tanh_c = step.c[k].tanh();
            let dc = dc_next[k] + dh * step.o[k] * (1.0 - tanh_c * tanh_c);
            let (i, f, o, g) = (step.i[k], step.f[k], step.o[k], step.g[k]);

            d_pre[k] = dc * g * i * (1.0 - i);
            d_pre[n + k] = dc * c_prev[k] * f * (1.0 - f);
            d_pre[2 * n + k] = dh * tanh_c * o * (1.0 - o);
            d_pre[3 * n + k] = dc * i * (1.0 - g * g);
            dc_next[k] = dc * f;
        }

        stacked_input[..d].copy_from_slice(trace.inputs.row(r));
        stacked_input[d..].copy_from_slice(h_prev);
        d_w.add_outer(&d_pre, &stacked_input)?;
        crate::numerics::axpy(1.0, &d_pre, &mut d_bias);

        let d_stacked = params.w.matvec_transposed(&d_pre)?;
        d_inputs[r].copy_from_slice(&d_stacked[..d]);
        dh_next.copy_from_slice(&d_stacked[d..]);
    }

    Ok(LstmGradients {
        d_w,
        d_bias,
        d_inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(w_x: [f64; 4], w_h: [f64; 4], bias: [f64; 4]) -> LstmParams {
        let rows: Vec<Vec<f64>> = (0..4).map(|g| vec![w_x[g], w_h[g]]).collect();
        LstmParams::new(Matrix::from_rows(&rows).unwrap(), bias.to_vec(), 1, 1).unwrap()
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar evaluation of the cell equations written out by hand.
    fn scalar_step(w_x: [f64; 4], w_h: [f64; 4], b: [f64; 4], x: f64, h: f64, c: f64) -> (f64, f64) {
        let z = |g: usize| w_x[g] * x + w_h[g] * h + b[g];
        let (i, f, o, g) = (sig(z(0)), sig(z(1)), sig(z(2)), z(3).tanh());
        let c_new = f * c + i * g;
        (o * c_new.tanh(), c_new)
    }

    #[test]
    fn zero_params_fixed_point() {
        let p = LstmParams::zeros(3, 2);
        let s = cell_forward(&p, &[0.4, -1.0, 2.0], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(s.i, vec![0.5; 2]);
        assert_eq!(s.f, vec![0.5; 2]);
        assert_eq!(s.o, vec![0.5; 2]);
        assert_eq!(s.g, vec![0.0; 2]);
        assert_eq!(s.c, vec![0.0; 2]);
        assert_eq!(s.h, vec![0.0; 2]);
    }

    #[test]
    fn saturated_gates_scalar_case() {
        let p = scalar_params([0.0, 0.0, 0.0, 1.0], [0.0; 4], [100.0, -100.0, 100.0, 0.0]);
        let s = cell_forward(&p, &[0.5], &[0.0], &[0.0]).unwrap();
        assert!((s.g[0] - 0.462117).abs() < 1e-6);
        assert!((s.c[0] - 0.462117).abs() < 1e-6);
        // tanh(tanh(0.5)) with i = o = 1, f = 0
        assert!((s.h[0] - 0.4318081805950961).abs() < 1e-6);
    }

    #[test]
    fn retained_memory_when_forget_open_and_input_closed() {
        let p = scalar_params([0.7, 0.1, -0.3, 0.9], [0.2, 0.4, 0.5, -0.6], [-100.0, 100.0, 0.0, 0.0]);
        let s = cell_forward(&p, &[1.3], &[0.2], &[-0.77]).unwrap();
        assert!((s.c[0] + 0.77).abs() < 1e-8);
    }

    #[test]
    fn three_step_chain_matches_scalar_oracle() {
        let (wx, wh, b) = ([0.3, -0.2, 0.5, 0.8], [0.1, 0.6, -0.4, 0.2], [0.05, 0.1, -0.1, 0.0]);
        let p = scalar_params(wx, wh, b);
        let xs = [0.5, -1.2, 2.0];
        let seq = RowSequence::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap();
        let trace = sequence_forward_zero(&p, &seq).unwrap();
        let (mut h, mut c) = (0.0, 0.0);
        for (r, &x) in xs.iter().enumerate() {
            (h, c) = scalar_step(wx, wh, b, x, h, c);
            assert!((trace.steps[r].h[0] - h).abs() < 1e-14);
            assert!((trace.steps[r].c[0] - c).abs() < 1e-14);
        }
    }

    #[test]
    fn single_row_sequence_is_one_cell_step() {
        let p = LstmParams::init(3, 2, &mut SeededRng::new(1)).unwrap();
        let seq = RowSequence::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let trace = sequence_forward_zero(&p, &seq).unwrap();
        let step = cell_forward(&p, seq.row(0), &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(trace.steps, vec![step]);
    }

    #[test]
    fn single_step_backward_matches_hand_derivative() {
        // loss = h, one step from zero state: dh/dz for each gate by hand.
        let (wx, wh, b) = ([0.4, -0.3, 0.7, 0.9], [0.0; 4], [0.1, 0.2, -0.1, 0.05]);
        let x = 0.8;
        let p = scalar_params(wx, wh, b);
        let seq = RowSequence::from_rows(&[vec![x]]).unwrap();
        let trace = sequence_forward_zero(&p, &seq).unwrap();
        let grads = sequence_backward(&p, &trace, &[vec![1.0]]).unwrap();

        let z: Vec<f64> = (0..4).map(|g| wx[g] * x + b[g]).collect();
        let (i, o, g) = (sig(z[0]), sig(z[2]), z[3].tanh());
        let c = i * g;
        let dc = o * (1.0 - c.tanh().powi(2));
        let dz = [
            dc * g * i * (1.0 - i),
            0.0, // c_prev = 0
            c.tanh() * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ];
        for k in 0..4 {
            assert!((grads.d_bias[k] - dz[k]).abs() < 1e-14);
            assert!((grads.d_w.get(k, 0) - dz[k] * x).abs() < 1e-14);
            assert_eq!(grads.d_w.get(k, 1), 0.0);
        }
        let dx: f64 = (0..4).map(|k| dz[k] * wx[k]).sum();
        assert!((grads.d_inputs[0][0] - dx).abs() < 1e-14);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = LstmParams::init(4, 3, &mut SeededRng::new(2)).unwrap();
        let seq = RowSequence::from_rows(&vec![vec![0.3, -0.1, 0.2, 0.9]; 5]).unwrap();
        let trace = sequence_forward_zero(&p, &seq).unwrap();
        let g = sequence_backward(&p, &trace, &vec![vec![0.0; 3]; 5]).unwrap();
        assert!(g.d_w.data().iter().all(|&v| v == 0.0));
        assert!(g.d_bias.iter().all(|&v| v == 0.0));
        assert!(g.d_inputs.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_length_mismatch() {
        let p = LstmParams::zeros(2, 2);
        let seq = RowSequence::from_rows(&vec![vec![0.0, 1.0]; 3]).unwrap();
        let trace = sequence_forward_zero(&p, &seq).unwrap();
        assert!(sequence_backward(&p, &trace, &vec![vec![0.0; 2]; 2]).is_err());
        assert!(sequence_backward(&p, &trace, &vec![vec![0.0; 1]; 3]).is_err());
    }

    #[test]
    fn forward_rejects_bad_dims() {
        let p = LstmParams::zeros(2, 2);
        assert!(cell_forward(&p, &[0.0; 3], &[0.0; 2], &[0.0; 2]).is_err());
        assert!(cell_forward(&p, &[0.0; 2], &[0.0; 1], &[0.0; 2]).is_err());
        let seq = RowSequence::from_rows(&[vec![0.0; 3]]).unwrap();
        assert!(sequence_forward_zero(&p, &seq).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let p = LstmParams::init(5, 3, &mut SeededRng::new(8)).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..8], b"SLSTM001");
        assert_eq!(bytes.len(), 8 + 8 + 8 * (12 * 8 + 12));
        let back = LstmParams::read_from(&mut bytes.as_slice(), "mem".as_ref()).unwrap();
        assert_eq!(back, p);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            LstmParams::read_from(&mut bad.as_slice(), "mem".as_ref()),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            LstmParams::read_from(&mut &bytes[..bytes.len() - 3], "mem".as_ref()),
            Err(Error::Truncated { .. })
        ));
    }
}
