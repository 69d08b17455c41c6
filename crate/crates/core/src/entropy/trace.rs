use std::fmt::Write as _;

use super::NextByteModel;
use crate::corpus::Document;
use crate::exec::Exec;

/// Per-position next-byte entropies (nats) of one byte sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntropyTrace {
    /// `values[i]` is the entropy of the distribution predicting byte `i` from `x_<i`.
    pub values: Vec<f64>,
    /// Positions whose context was cleared because the previous byte was a newline.
    pub reset_positions: Vec<usize>,
}

impl EntropyTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Shannon entropy `-sum p ln p` in nats.
pub fn entropy(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    h.clamp(0.0, 256f64.ln())
}

/// Entropy of the model's prediction for every position of `bytes`.
///
/// With `reset_on_newline`, the context is cleared right after each `0x0A`.
pub fn entropy_trace<M: NextByteModel + ?Sized>(model: &M, bytes: &[u8], reset_on_newline: bool) -> EntropyTrace {
    let rf = model.receptive_field();
    let mut trace = EntropyTrace {
        values: Vec::with_capacity(bytes.len()),
        reset_positions: Vec::new(),
    };
    let mut ctx_start = 0;
    for i in 0..bytes.len() {
        if reset_on_newline && i > 0 && bytes[i - 1] == b'\n' {
            ctx_start = i;
            trace.reset_positions.push(i);
        }
        let lo = ctx_start.max(i.saturating_sub(rf));
        trace.values.push(entropy(&model.next_byte_distribution(&bytes[lo..i])));
    }
    trace
}

/// Traces for a whole document set, one per document, in input order.
pub fn entropy_traces<M: NextByteModel + ?Sized>(
    model: &M,
    docs: &[Document],
    reset_on_newline: bool,
    exec: Exec,
) -> Vec<EntropyTrace> {
    exec.map(docs, |d| entropy_trace(model, &d.bytes, reset_on_newline))
}

fn glyph(b: u8) -> String {
    match b {
        b' ' => "_".into(),
        b'\n' => "\\n".into(),
        b'\t' => "\\t".into(),
        0x21..=0x7E => (b as char).to_string(),
        _ => format!("\\x{b:02x}"),
    }
}

/// TSV with columns `pos, byte_hex, glyph, entropy_nats, boundary`.
///
/// Spaces are drawn as `_`; `starts` marks which positions begin a patch.
pub fn export_trace(trace: &EntropyTrace, bytes: &[u8], starts: &[usize]) -> String {
    let mut out = String::from("pos\tbyte_hex\tglyph\tentropy_nats\tboundary\n");
    let mut next_start = starts.iter().peekable();
    for (i, (&b, &h)) in bytes.iter().zip(&trace.values).enumerate() {
        while next_start.next_if(|&&s| s < i).is_some() {}
        let boundary = next_start.next_if(|&&s| s == i).is_some();
        let _ = writeln!(out, "{i}\t{b:02x}\t{}\t{h:.6}\t{}", glyph(b), boundary as u8);
    }
    out
}
