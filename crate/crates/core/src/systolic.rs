//! Cycle-accurate simulator of a weight-stationary `k x k` matrix-multiply
//! unit, with an optional pipelined vector-vector pre-unit.
//!
//! Timing model (frozen so the closed-form clock calculators are exactly
//! testable): one weight row loads per cycle (`k` cycles per residency),
//! a column entering the array surfaces its result `2k - 1` cycles later,
//! one input column is consumed per cycle while weights are resident, and
//! a residency ends one drain/boundary cycle after its last result exits.
//! Load and stream of the same residency never overlap. The vector-vector
//! pre-unit sits one stage ahead of the array and consumes its operand in
//! the same cycle the column enters, so it adds zero marginal cycles.

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Vector};
use crate::scalar::Scalar;
use crate::vvma::{pad_shape, VvmaParam};

/// Traces above this many events are refused to keep memory finite.
pub const TRACE_EVENT_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    Baseline,
    Vvma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub k: usize,
    pub mode: SimMode,
    pub record_trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// One row of weights enters the array.
    LoadRow,
    /// The pipeline-fill window of a residency begins.
    Fill,
    /// An input column enters the array.
    StreamIn,
    /// A result column exits the array, `2k - 1` cycles after its input.
    StreamOut,
    /// The pre-unit element-wise multiply, concurrent with its stream-in.
    VvMul,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EventKind::LoadRow => "load_row",
            EventKind::Fill => "fill",
            EventKind::StreamIn => "stream_in",
            EventKind::StreamOut => "stream_out",
            EventKind::VvMul => "vv_mul",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimEvent {
    pub cycle: u64,
    pub kind: EventKind,
    pub block: (usize, usize),
}

#[derive(Debug, Clone, Default)]
pub struct SimTrace {
    pub events: Vec<SimEvent>,
}

impl SimTrace {
    /// CSV export with a `cycle,kind,block_i,block_j` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,kind,block_i,block_j\n");
        for e in &self.events {
            out.push_str(&format!("{},{},{},{}\n", e.cycle, e.kind, e.block.0, e.block.1));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SimResult<T> {
    /// Padded output, `(r*k) x t`.
    pub output: DenseMatrix<T>,
    pub cycles: u64,
    pub trace: Option<SimTrace>,
}

struct Tracer {
    events: Option<Vec<SimEvent>>,
}

impl Tracer {
    fn new(record: bool, estimated_events: u64) -> Result<Self> {
        if record && estimated_events > TRACE_EVENT_BUDGET {
            return Err(Error::TraceBudget {
                events: estimated_events,
                limit: TRACE_EVENT_BUDGET,
            });
        }
        Ok(Self {
            events: record.then(Vec::new),
        })
    }

    fn emit(&mut self, cycle: u64, kind: EventKind, block: (usize, usize)) {
        if let Some(events) = &mut self.events {
            events.push(SimEvent { cycle, kind, block });
        }
    }

    fn finish(self) -> Option<SimTrace> {
        self.events.map(|mut events| {
            // Results exit long after later columns enter; restore cycle order.
            events.sort_by_key(|e| e.cycle);
            SimTrace { events }
        })
    }
}

/// Sums the per-column-block contributions for one output row-block in a
/// fixed left-to-right order. Every slot must be present.
pub fn accumulate_partials<T: Scalar>(contributions: &[Option<Vector<T>>]) -> Result<Vector<T>> {
    let first = contributions
        .first()
        .and_then(|c| c.as_ref())
        .ok_or(Error::MissingContribution { j: 0 })?;
    let mut acc = vec![T::zero(); first.len()];
    for (j, contrib) in contributions.iter().enumerate() {
        let c = contrib.as_ref().ok_or(Error::MissingContribution { j })?;
        if c.len() != acc.len() {
            return Err(Error::DimMismatch {
                context: "accumulate_partials",
                expected: acc.len(),
                got: c.len(),
            });
        }
        for (a, &x) in acc.iter_mut().zip(c.as_slice()) {
            *a += x;
        }
    }
    Ok(Vector::from_vec_unchecked(acc))
}

/// Runs the conventional dataflow: every `k x k` block of `W` is loaded
/// onto the array before its `t` input columns stream through.
pub fn simulate_baseline<T: Scalar>(
    w: &DenseMatrix<T>,
    x: &DenseMatrix<T>,
    cfg: &SimConfig,
) -> Result<SimResult<T>> {
    if cfg.mode != SimMode::Baseline {
        return Err(Error::BadConfig("simulate_baseline needs mode = baseline".into()));
    }
    if cfg.k == 0 {
        return Err(Error::BadConfig("block size must be at least 1".into()));
    }
    if x.rows() != w.cols() {
        return Err(Error::DimMismatch {
            context: "simulate_baseline input rows",
            expected: w.cols(),
            got: x.rows(),
        });
    }
    let k = cfg.k;
    let (r, c) = pad_shape(w.rows(), w.cols(), k);
    let t = x.cols();
    let wp = w.pad_to(r * k, c * k);
    let xp = x.pad_to(c * k, t);

    let blocks = (r * c) as u64;
    let estimated = blocks * (k as u64 + 1 + 2 * t as u64);
    let mut tracer = Tracer::new(cfg.record_trace, estimated)?;

    let mut out = DenseMatrix::zeros(r * k, t);
    let mut cycle: u64 = 0;
    for bi in 0..r {
        let mut contribs: Vec<Vec<Option<Vector<T>>>> = vec![vec![None; c]; t];
        for bj in 0..c {
            for _ in 0..k {
                cycle += 1;
                tracer.emit(cycle, EventKind::LoadRow, (bi, bj));
            }
            tracer.emit(cycle + 1, EventKind::Fill, (bi, bj));
            let mut last_out = cycle;
            for (tau, slots) in contribs.iter_mut().enumerate() {
                cycle += 1;
                tracer.emit(cycle, EventKind::StreamIn, (bi, bj));
                let out_cycle = cycle + 2 * k as u64 - 1;
                tracer.emit(out_cycle, EventKind::StreamOut, (bi, bj));
                last_out = out_cycle;
                slots[bj] = Some(block_product(&wp, bi, bj, k, &xp, bj, tau, None, T::one()));
            }
            cycle = last_out + 1;
        }
        write_row_block(&mut out, bi, k, &contribs)?;
    }

    Ok(SimResult {
        output: out,
        cycles: cycle,
        trace: tracer.finish(),
    })
}

/// Runs the shared-matrix dataflow: `M` is loaded exactly once, the
/// pre-unit scales each column block element-wise, and every block's
/// columns stream back to back with no reloads.
pub fn simulate_vvma<T: Scalar>(
    p: &VvmaParam<T>,
    x: &DenseMatrix<T>,
    cfg: &SimConfig,
) -> Result<SimResult<T>> {
    if cfg.mode != SimMode::Vvma {
        return Err(Error::BadConfig("simulate_vvma needs mode = vvma".into()));
    }
    if cfg.k != p.k() {
        return Err(Error::BadConfig(format!(
            "config block size {} does not match parametrization block size {}",
            cfg.k,
            p.k()
        )));
    }
    if x.rows() != p.in_dim() {
        return Err(Error::DimMismatch {
            context: "simulate_vvma input rows",
            expected: p.in_dim(),
            got: x.rows(),
        });
    }
    let k = p.k();
    let (r, c) = (p.row_blocks(), p.col_blocks());
    let t = x.cols();
    let m = p.shared_matrix();

    let per_column = if p.diag_enabled() { 3u64 } else { 2 };
    let estimated = k as u64 + 1 + (r * c * t) as u64 * per_column;
    let mut tracer = Tracer::new(cfg.record_trace, estimated)?;

    let mut cycle: u64 = 0;
    for _ in 0..k {
        cycle += 1;
        tracer.emit(cycle, EventKind::LoadRow, (0, 0));
    }
    tracer.emit(cycle + 1, EventKind::Fill, (0, 0));

    let mut out = DenseMatrix::zeros(r * k, t);
    let mut last_out = cycle;
    let mut all_contribs: Vec<Vec<Vec<Option<Vector<T>>>>> = vec![vec![vec![None; c]; t]; r];
    for bi in 0..r {
        for bj in 0..c {
            let diag = p.diag_enabled().then(|| p.diag(bi, bj));
            for tau in 0..t {
                cycle += 1;
                tracer.emit(cycle, EventKind::StreamIn, (bi, bj));
                if diag.is_some() {
                    tracer.emit(cycle, EventKind::VvMul, (bi, bj));
                }
                let out_cycle = cycle + 2 * k as u64 - 1;
                tracer.emit(out_cycle, EventKind::StreamOut, (bi, bj));
                last_out = out_cycle;
                all_contribs[bi][tau][bj] =
                    Some(block_product(m, 0, 0, k, x, bj, tau, diag, p.m_scale()));
            }
        }
    }
    cycle = last_out + 1;
    for (bi, contribs) in all_contribs.iter().enumerate() {
        write_row_block(&mut out, bi, k, contribs)?;
    }

    Ok(SimResult {
        output: out,
        cycles: cycle,
        trace: tracer.finish(),
    })
}

/// Product of one resident `k x k` weight block (at block coordinates
/// `(wi, wj)` inside `weights`) with column slice `col_block` of input
/// vector `tau`, optionally pre-scaled by a diagonal.
#[allow(clippy::too_many_arguments)]
fn block_product<T: Scalar>(
    weights: &DenseMatrix<T>,
    wi: usize,
    wj: usize,
    k: usize,
    x: &DenseMatrix<T>,
    col_block: usize,
    tau: usize,
    diag: Option<&Vector<T>>,
    scale: T,
) -> Vector<T> {
    let col_base = col_block * k;
    let mut z = Vec::with_capacity(k);
    for b in 0..k {
        let xv = x[(col_base + b, tau)];
        match diag {
            Some(d) => z.push(d[b] * xv),
            None => z.push(xv),
        }
    }
    let mut y = vec![T::zero(); k];
    for (a, out) in y.iter_mut().enumerate() {
        let row = &weights.row(wi * k + a)[wj * k..(wj + 1) * k];
        let mut acc = T::zero();
        for (w, zv) in row.iter().zip(&z) {
            acc += *w * *zv;
        }
        *out = scale * acc;
    }
    Vector::from_vec_unchecked(y)
}

fn write_row_block<T: Scalar>(
    out: &mut DenseMatrix<T>,
    bi: usize,
    k: usize,
    contribs: &[Vec<Option<Vector<T>>>],
) -> Result<()> {
    for (tau, slots) in contribs.iter().enumerate() {
        let y = accumulate_partials(slots)?;
        for a in 0..k {
            out[(bi * k + a, tau)] = y[a];
        }
    }
    Ok(())
}
