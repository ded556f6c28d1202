//! Per-step gate activations and their L2 norms, exported as CSV and as a
//! binary graymap heat map.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dataset::RowSequence;
use crate::error::{Error, Result};
use crate::lstm::{sequence_forward_zero, Gate, LstmTrace};
use crate::model::SiameseParams;
use crate::numerics::l2_norm;

/// Pixels per heat-map row.
pub const HEATMAP_WIDTH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace {
    pub image_id: String,
    pub hidden_dim: usize,
    /// Per-step norms in gate order `i, f, o, g`.
    pub norms: [Vec<f64>; 4],
    /// Raw gate vectors, `[gate][step][unit]`.
    pub raw: [Vec<Vec<f64>>; 4],
    /// Hidden outputs, kept so callers can compare against a plain forward.
    pub hidden: Vec<Vec<f64>>,
}

impl GateTrace {
    pub fn from_trace(image_id: impl Into<String>, trace: &LstmTrace) -> Self {
        let gate_rows = |g: Gate| -> Vec<Vec<f64>> { trace.steps.iter().map(|s| s.gate(g).to_vec()).collect() };
        let raw = Gate::ALL.map(gate_rows);
        let norms = Gate::ALL.map(|g| trace.steps.iter().map(|s| l2_norm(s.gate(g))).collect());
        GateTrace {
            image_id: image_id.into(),
            hidden_dim: trace.steps.first().map_or(0, |s| s.h.len()),
            norms,
            raw,
            hidden: trace.steps.iter().map(|s| s.h.clone()).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.norms[0].len()
    }

    pub fn norms(&self, gate: Gate) -> &[f64] {
        &self.norms[gate as usize]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,i_norm,f_norm,o_norm,g_norm\n");
        for r in 0..self.steps() {
            // `{}` on f64 prints the shortest string that parses back exactly
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r + 1,
                self.norms[0][r],
                self.norms[1][r],
                self.norms[2][r],
                self.norms[3][r]
            ));
        }
        out
    }

    /// Binary graymap (P5), one row of `HEATMAP_WIDTH` pixels per step; norm
    /// 0 is black and the bound `√n` is white.
    pub fn to_pgm(&self, gate: Gate) -> Vec<u8> {
        let max = (self.hidden_dim as f64).sqrt();
        let mut out = format!("P5\n{} {}\n255\n", HEATMAP_WIDTH, self.steps()).into_bytes();
        for &v in self.norms(gate) {
            let level = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            let pixel = (level * 255.0).round() as u8;
            out.extend(std::iter::repeat_n(pixel, HEATMAP_WIDTH));
        }
        out
    }
}

/// Parses the CSV written by [`GateTrace::to_csv`] back into per-gate norms.
pub fn parse_norms_csv(text: &str) -> Result<[Vec<f64>; 4]> {
    let mut lines = text.lines();
    if lines.next() != Some("step,i_norm,f_norm,o_norm,g_norm") {
        return Err(Error::InvalidArgument("unexpected gate CSV header".into()));
    }
    let mut norms: [Vec<f64>; 4] = Default::default();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::InvalidArgument(format!("bad gate CSV line {line:?}")));
        }
        for (k, f) in fields[1..].iter().enumerate() {
            norms[k].push(
                f.parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad number {f:?}")))?,
            );
        }
    }
    Ok(norms)
}

/// Runs the model's LSTM over `seq` and records its gates.
pub fn trace_gates(model: &SiameseParams, image_id: &str, seq: &RowSequence) -> Result<GateTrace> {
    if seq.len() != model.rows() || seq.dim() != model.input_dim() {
        return Err(Error::shape(
            "trace_gates",
            format!("R={}, d={}", seq.len(), seq.dim()),
            format!("R={}, d={}", model.rows(), model.input_dim()),
        ));
    }
    let trace = sequence_forward_zero(&model.lstm, seq)?;
    Ok(GateTrace::from_trace(image_id, &trace))
}

/// Files written by [`export_heatmap`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapFiles {
    pub csv: PathBuf,
    pub image: PathBuf,
}

/// Writes `<stem>.csv` with all four norms and `<stem>_<gate>.pgm` for the
/// selected gate.
pub fn export_heatmap(trace: &GateTrace, gate: Gate, stem: &Path) -> Result<HeatmapFiles> {
    let name = stem
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("output stem {} has no file name", stem.display())))?
        .to_string_lossy()
        .into_owned();
    let csv = stem.with_file_name(format!("{name}.csv"));
    let image = stem.with_file_name(format!("{name}_{}.pgm", gate.name()));
    fs::write(&csv, trace.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let mut file = fs::File::create(&image).map_err(|e| Error::io(&image, e))?;
    file.write_all(&trace.to_pgm(gate)).map_err(|e| Error::io(&image, e))?;
    Ok(HeatmapFiles { csv, image })
}
