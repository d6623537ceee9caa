//! Closed-form clock and FLOP calculators for a weight-stationary `k x k`
//! matrix-multiply unit.
//!
//! The timing model freezes the narrated constants: loading a block costs
//! `k` cycles, pipeline fill/drain costs `2k`, and each of `t` resident
//! input vectors streams in one cycle. A conventional execution reloads
//! every block of the weight matrix; the shared-matrix execution loads one
//! block once and then streams, with the per-block element-wise multiply
//! pipelined at zero marginal cycles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vvma::pad_shape;

/// Systolic block size and batch residency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockParams {
    /// Matrix-multiply unit edge length.
    pub k: usize,
    /// Input vectors multiplied per weight residency; 1 models
    /// single-sentence, low-latency inference.
    pub t: usize,
}

impl Default for ClockParams {
    fn default() -> Self {
        Self { k: 32, t: 1 }
    }
}

impl ClockParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.t == 0 {
            return Err(Error::BadConfig("clock params must be at least 1".into()));
        }
        Ok(())
    }
}

/// One matrix-multiply workload: an `m x n` weight applied `repeats` times
/// (for example sequence length times layer count).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatmulShape {
    pub m: usize,
    pub n: usize,
    pub repeats: usize,
}

impl MatmulShape {
    pub fn new(m: usize, n: usize, repeats: usize) -> Self {
        Self { m, n, repeats }
    }

    fn blocks(&self, k: usize) -> u64 {
        let (r, c) = pad_shape(self.m, self.n, k);
        r as u64 * c as u64
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.repeats == 0 {
            return Err(Error::BadConfig("matmul shape fields must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Baseline,
    Vvma,
}

/// Clocks for conventional execution: every block is loaded per use,
/// `repeats * blocks * (3k + t)`.
pub fn clocks_baseline(shape: &MatmulShape, cp: &ClockParams) -> u64 {
    let per_block = 3 * cp.k as u64 + cp.t as u64;
    shape.repeats as u64 * shape.blocks(cp.k) * per_block
}

/// Clocks for shared-matrix execution: one load plus pipeline fill, then
/// pure streaming, `3k + repeats * blocks * t`.
pub fn clocks_vvma(shape: &MatmulShape, cp: &ClockParams) -> u64 {
    3 * cp.k as u64 + shape.repeats as u64 * shape.blocks(cp.k) * cp.t as u64
}

/// Executed floating-point operations. The conventional product costs
/// `2mn` per vector; the shared-matrix form adds one element-wise multiply
/// per block column-slice, `k * blocks` per vector.
pub fn flops(shape: &MatmulShape, cp: &ClockParams, mode: ExecMode) -> u64 {
    let per_vector = match mode {
        ExecMode::Baseline => 2 * shape.m as u64 * shape.n as u64,
        ExecMode::Vvma => {
            2 * shape.m as u64 * shape.n as u64 + cp.k as u64 * shape.blocks(cp.k)
        }
    };
    shape.repeats as u64 * cp.t as u64 * per_vector
}

fn params_baseline(shape: &MatmulShape) -> u64 {
    shape.m as u64 * shape.n as u64
}

fn params_vvma(shape: &MatmulShape, k: usize) -> u64 {
    // Matches VvmaParam::param_count for the padded block grid.
    k as u64 * k as u64 + shape.blocks(k) * k as u64
}

/// Aggregated cost of a model description under both execution modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub clocks_baseline: u64,
    pub clocks_vvma: u64,
    pub flops_baseline: u64,
    pub flops_vvma: u64,
    pub params_baseline: u64,
    pub params_vvma: u64,
    pub speedup: f64,
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// One line of a model description file. Shapes marked `vvma: false` stay
/// dense in the shared-matrix variant of the model (embedding and output
/// projections typically do) and are charged baseline cost in both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub m: usize,
    pub n: usize,
    pub repeats: usize,
    #[serde(default = "default_true")]
    pub vvma: bool,
}

fn default_true() -> bool {
    true
}

impl ModelEntry {
    pub fn shape(&self) -> MatmulShape {
        MatmulShape::new(self.m, self.n, self.repeats)
    }
}

/// Parses a model description: a JSON array of
/// `{name, m, n, repeats, vvma?}` objects.
pub fn parse_model_json(text: &str) -> Result<Vec<ModelEntry>> {
    let entries: Vec<ModelEntry> = serde_json::from_str(text)?;
    if entries.is_empty() {
        return Err(Error::EmptyModel);
    }
    for e in &entries {
        e.shape().validate()?;
    }
    Ok(entries)
}

/// Sums clocks, FLOPs, and parameters over a model in which every shape is
/// replaced by the shared-matrix form.
pub fn aggregate(model: &[MatmulShape], cp: &ClockParams) -> Result<CostReport> {
    let entries: Vec<ModelEntry> = model
        .iter()
        .enumerate()
        .map(|(i, s)| ModelEntry {
            name: format!("shape{i}"),
            m: s.m,
            n: s.n,
            repeats: s.repeats,
            vvma: true,
        })
        .collect();
    aggregate_entries(&entries, cp)
}

/// Sums costs over a model description, honoring per-entry `vvma` flags.
pub fn aggregate_entries(entries: &[ModelEntry], cp: &ClockParams) -> Result<CostReport> {
    if entries.is_empty() {
        return Err(Error::EmptyModel);
    }
    cp.validate()?;
    let mut report = CostReport {
        clocks_baseline: 0,
        clocks_vvma: 0,
        flops_baseline: 0,
        flops_vvma: 0,
        params_baseline: 0,
        params_vvma: 0,
        speedup: 0.0,
    };
    for e in entries {
        let shape = e.shape();
        shape.validate()?;
        report.clocks_baseline += clocks_baseline(&shape, cp);
        report.flops_baseline += flops(&shape, cp, ExecMode::Baseline);
        report.params_baseline += params_baseline(&shape);
        if e.vvma {
            report.clocks_vvma += clocks_vvma(&shape, cp);
            report.flops_vvma += flops(&shape, cp, ExecMode::Vvma);
            report.params_vvma += params_vvma(&shape, cp.k);
        } else {
            report.clocks_vvma += clocks_baseline(&shape, cp);
            report.flops_vvma += flops(&shape, cp, ExecMode::Baseline);
            report.params_vvma += params_baseline(&shape);
        }
    }
    report.speedup = report.clocks_baseline as f64 / report.clocks_vvma as f64;
    Ok(report)
}

/// CSV table with one row per entry plus a totals row.
pub fn cost_csv(entries: &[ModelEntry], cp: &ClockParams) -> Result<String> {
    let mut out = String::from(
        "name,m,n,repeats,vvma,clocks_baseline,clocks_vvma,flops_baseline,flops_vvma,params_baseline,params_vvma,speedup\n",
    );
    for e in entries {
        let row = aggregate_entries(std::slice::from_ref(e), cp)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            e.name,
            e.m,
            e.n,
            e.repeats,
            e.vvma,
            row.clocks_baseline,
            row.clocks_vvma,
            row.flops_baseline,
            row.flops_vvma,
            row.params_baseline,
            row.params_vvma,
            row.speedup,
        ));
    }
    let total = aggregate_entries(entries, cp)?;
    out.push_str(&format!(
        "total,,,,,{},{},{},{},{},{},{}\n",
        total.clocks_baseline,
        total.clocks_vvma,
        total.flops_baseline,
        total.flops_vvma,
        total.params_baseline,
        total.params_vvma,
        total.speedup,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CP32: ClockParams = ClockParams { k: 32, t: 1 };

    #[test]
    fn baseline_clock_examples() {
        let shape = MatmulShape::new(1024, 1024, 1);
        assert_eq!(clocks_baseline(&shape, &CP32), 99_328);

        // Single block: 3k + t.
        let single = MatmulShape::new(32, 32, 1);
        assert_eq!(clocks_baseline(&single, &CP32), 97);
        assert_eq!(clocks_vvma(&single, &CP32), 97);
    }

    #[test]
    fn vvma_clock_examples() {
        let shape = MatmulShape::new(1024, 1024, 1);
        assert_eq!(clocks_vvma(&shape, &CP32), 1_120);
        let speedup = clocks_baseline(&shape, &CP32) as f64 / clocks_vvma(&shape, &CP32) as f64;
        assert!((speedup - 88.685_714).abs() < 1e-3, "speedup {speedup}");
    }

    #[test]
    fn per_vector_cost_amortizes_to_block_count() {
        let shape = MatmulShape::new(1024, 1024, 1);
        let t = 1 << 20;
        let cp = ClockParams { k: 32, t };
        let per_vec = clocks_baseline(&shape, &cp) as f64 / t as f64;
        assert!((per_vec - 1024.0) / 1024.0 < 1e-4, "per-vector {per_vec}");
    }

    #[test]
    fn ratio_tends_to_3k_plus_1_as_blocks_grow() {
        let cp = ClockParams { k: 32, t: 1 };
        let shape = MatmulShape::new(32_768, 32_768, 1);
        let ratio = clocks_baseline(&shape, &cp) as f64 / clocks_vvma(&shape, &cp) as f64;
        assert!((ratio - 97.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn flops_examples() {
        let shape = MatmulShape::new(1024, 1024, 1);
        assert_eq!(flops(&shape, &CP32, ExecMode::Baseline), 2_097_152);
        assert_eq!(flops(&shape, &CP32, ExecMode::Vvma), 2_097_152 + 32_768);

        let repeated = MatmulShape::new(1024, 1024, 25);
        assert_eq!(
            flops(&repeated, &CP32, ExecMode::Baseline),
            25 * 2_097_152
        );
        assert_eq!(
            flops(&repeated, &CP32, ExecMode::Vvma),
            25 * (2_097_152 + 32_768)
        );
    }

    #[test]
    fn sharing_always_wins_with_multiple_blocks() {
        for k in [1usize, 2, 8, 16] {
            for (m, n) in [(2 * k, k), (4 * k, 4 * k), (k + 1, k)] {
                for t in [1usize, 3] {
                    for repeats in [1usize, 5] {
                        let shape = MatmulShape::new(m, n, repeats);
                        let cp = ClockParams { k, t };
                        if shape.blocks(k) > 1 {
                            assert!(
                                clocks_vvma(&shape, &cp) < clocks_baseline(&shape, &cp),
                                "k={k} m={m} n={n} t={t} repeats={repeats}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn clocks_monotone_in_every_field() {
        let base = MatmulShape::new(100, 200, 3);
        let cp = ClockParams { k: 16, t: 2 };
        let grow = [
            MatmulShape::new(101, 200, 3),
            MatmulShape::new(100, 201, 3),
            MatmulShape::new(100, 200, 4),
        ];
        for g in grow {
            assert!(clocks_baseline(&g, &cp) >= clocks_baseline(&base, &cp));
            assert!(clocks_vvma(&g, &cp) >= clocks_vvma(&base, &cp));
        }
        let more_t = ClockParams { k: 16, t: 3 };
        assert!(clocks_baseline(&base, &more_t) >= clocks_baseline(&base, &cp));
        assert!(clocks_vvma(&base, &more_t) >= clocks_vvma(&base, &cp));
    }

    #[test]
    fn aggregate_singleton_and_additivity() {
        let shape = MatmulShape::new(256, 128, 2);
        let one = aggregate(&[shape], &CP32).unwrap();
        assert_eq!(one.clocks_baseline, clocks_baseline(&shape, &CP32));
        assert_eq!(one.clocks_vvma, clocks_vvma(&shape, &CP32));
        assert_eq!(one.flops_vvma, flops(&shape, &CP32, ExecMode::Vvma));

        let two = aggregate(&[shape, shape], &CP32).unwrap();
        assert_eq!(two.clocks_baseline, 2 * one.clocks_baseline);
        assert_eq!(two.clocks_vvma, 2 * one.clocks_vvma);
        assert_eq!(two.params_vvma, 2 * one.params_vvma);
    }

    #[test]
    fn aggregate_rejects_empty_model() {
        assert!(aggregate(&[], &CP32).is_err());
    }

    #[test]
    fn parse_model_json_defaults_and_flags() {
        let text = r#"[
            {"name": "gate", "m": 512, "n": 1024, "repeats": 25},
            {"name": "proj", "m": 7936, "n": 512, "repeats": 25, "vvma": false}
        ]"#;
        let entries = parse_model_json(text).unwrap();
        assert!(entries[0].vvma);
        assert!(!entries[1].vvma);

        let report = aggregate_entries(&entries, &CP32).unwrap();
        // The dense projection is charged identically in both modes.
        let proj = aggregate_entries(&entries[1..], &CP32).unwrap();
        assert_eq!(proj.clocks_baseline, proj.clocks_vvma);
        assert!(report.speedup > 1.0);

        assert!(parse_model_json("[]").is_err());
        assert!(parse_model_json("{\"name\": 1}").is_err());
        assert!(parse_model_json(r#"[{"name": "x", "m": 0, "n": 1, "repeats": 1}]"#).is_err());
    }

    #[test]
    fn csv_has_row_per_entry_plus_totals() {
        let entries = parse_model_json(
            r#"[{"name": "a", "m": 64, "n": 64, "repeats": 1},
                {"name": "b", "m": 64, "n": 64, "repeats": 2}]"#,
        )
        .unwrap();
        let csv = cost_csv(&entries, &CP32).unwrap();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("name,"));
        assert!(lines[3].starts_with("total,"));
    }
}
