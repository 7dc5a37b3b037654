//! Plot-ready data: whitespace-separated tables for gnuplot and vega-lite
//! specs with inline data.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::HarnessError;
use crate::engine::RunTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotMetric {
    Loss,
    GradNormSq,
    ConsensusErr,
}

impl PlotMetric {
    pub fn column(self) -> &'static str {
        match self {
            PlotMetric::Loss => "loss_avg_iterate",
            PlotMetric::GradNormSq => "grad_norm_sq_avg_iterate",
            PlotMetric::ConsensusErr => "consensus_err",
        }
    }
}

/// One gnuplot data block per trace, separated by two blank lines so each
/// can be addressed with `index`.
pub fn write_gnuplot<W: Write>(traces: &[(String, RunTrace)], mut out: W) -> Result<(), HarnessError> {
    for (i, (label, t)) in traces.iter().enumerate() {
        if i > 0 {
            writeln!(out, "\n")?;
        }
        writeln!(out, "# {label}")?;
        writeln!(out, "# t loss_avg_iterate grad_norm_sq_avg_iterate consensus_err comm_bits_cum comm_rounds_cum")?;
        for r in &t.rows {
            writeln!(
                out,
                "{} {:e} {:e} {:e} {} {}",
                r.t,
                r.loss_avg_iterate,
                r.grad_norm_sq_avg_iterate,
                r.consensus_err,
                r.comm_bits_cum,
                r.comm_rounds_cum
            )?;
        }
    }
    Ok(())
}

/// A vega-lite line chart of `metric` against `t`, or against cumulative
/// bits when `x_bits` is set, one line per trace.
pub fn vega_lite_spec(traces: &[(String, RunTrace)], metric: PlotMetric, x_bits: bool) -> serde_json::Value {
    let mut values = Vec::new();
    for (label, t) in traces {
        for r in &t.rows {
            let y = match metric {
                PlotMetric::Loss => r.loss_avg_iterate,
                PlotMetric::GradNormSq => r.grad_norm_sq_avg_iterate,
                PlotMetric::ConsensusErr => r.consensus_err,
            };
            values.push(json!({
                "run": label,
                "t": r.t,
                "comm_bits_cum": r.comm_bits_cum,
                metric.column(): y,
            }));
        }
    }
    let x = if x_bits { "comm_bits_cum" } else { "t" };
    json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "data": { "values": values },
        "mark": "line",
        "encoding": {
            "x": { "field": x, "type": "quantitative" },
            "y": { "field": metric.column(), "type": "quantitative", "scale": { "type": "log" } },
            "color": { "field": "run", "type": "nominal" }
        }
    })
}
