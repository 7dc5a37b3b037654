//! Trace files: one `#`-prefixed JSON line carrying the header and summary,
//! then a CSV table of evaluation rows.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::engine::{RunSummary, RunTrace, TraceHeader, TraceRow};

/// CSV columns, in order.
pub const TRACE_COLUMNS: [&str; 6] =
    ["t", "loss_avg_iterate", "grad_norm_sq_avg_iterate", "consensus_err", "comm_bits_cum", "comm_rounds_cum"];

#[derive(Serialize, Deserialize)]
struct Preamble {
    header: TraceHeader,
    summary: RunSummary,
}

/// Serialize a trace. The output depends only on the trace contents.
pub fn write_trace<W: Write>(trace: &RunTrace, mut out: W) -> Result<(), HarnessError> {
    let preamble = Preamble { header: trace.header.clone(), summary: trace.summary };
    writeln!(out, "# {}", serde_json::to_string(&preamble)?)?;
    let mut w = csv::Writer::from_writer(out);
    for row in &trace.rows {
        w.serialize(row)?;
    }
    if trace.rows.is_empty() {
        w.write_record(TRACE_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_to_bytes(trace: &RunTrace) -> Result<Vec<u8>, HarnessError> {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf)?;
    Ok(buf)
}

pub fn read_trace<R: BufRead>(mut input: R) -> Result<RunTrace, HarnessError> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| HarnessError::Format("trace must start with a `# {json}` header line".into()))?;
    let pre: Preamble = serde_json::from_str(json.trim_end())?;
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(TRACE_COLUMNS) {
        return Err(HarnessError::Format(format!("unexpected trace columns {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let rows = r.deserialize::<TraceRow>().collect::<Result<Vec<_>, _>>()?;
    Ok(RunTrace { header: pre.header, rows, summary: pre.summary })
}

pub fn read_trace_file(path: &std::path::Path) -> Result<RunTrace, HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_trace(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, Algorithm, RunConfig};
    use crate::problems::ProblemSpec;

    #[test]
    fn round_trip_is_exact() {
        let mut cfg = RunConfig::new(Algorithm::CdAdam, ProblemSpec { dim: 5, ..ProblemSpec::default() });
        cfg.total_iters = 37;
        cfg.eval_every = 10;
        cfg.period = 3;
        let trace = run(cfg).unwrap();
        let bytes = trace_to_bytes(&trace).unwrap();
        let back = read_trace(&bytes[..]).unwrap();
        assert_eq!(back, trace);
        assert_eq!(trace_to_bytes(&back).unwrap(), bytes);
        let text = String::from_utf8(bytes).unwrap();
        let second = text.lines().nth(1).unwrap();
        assert_eq!(second, TRACE_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 2 + 5);
    }

    #[test]
    fn rejects_missing_header() {
        assert!(matches!(read_trace(&b"t,loss\n"[..]), Err(HarnessError::Format(_))));
    }
}
