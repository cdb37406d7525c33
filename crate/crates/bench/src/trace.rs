//! CSV form of a simulation trace.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;
use tubempc::sim::SimTrace;

pub const COLUMNS: [&str; 22] = [
    "t",
    "x",
    "y",
    "th1",
    "th2",
    "th3",
    "xs",
    "ys",
    "th1s",
    "th2s",
    "th3s",
    "u1",
    "u2",
    "u3",
    "v1",
    "v2",
    "v3",
    "e_norm",
    "stage_cost",
    "pos_err",
    "viol",
    "solve_latency_steps",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
}

/// One CSV row; floats in column order followed by the two counters.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub values: [f64; 20],
    pub viol: usize,
    pub solve_latency_steps: usize,
}

impl TraceRow {
    pub fn stage_cost(&self) -> f64 {
        self.values[18]
    }

    pub fn pos_err(&self) -> f64 {
        self.values[19]
    }
}

/// Renders the trace. Floats use the shortest representation that parses
/// back to the same value.
pub fn render_trace(trace: &SimTrace) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for s in &trace.samples {
        let floats = [
            s.t, s.z.0[0], s.z.0[1], s.z.0[2], s.z.0[3], s.z.0[4], s.z_star.0[0], s.z_star.0[1],
            s.z_star.0[2], s.z_star.0[3], s.z_star.0[4], s.u.0[0], s.u.0[1], s.u.0[2], s.v.0[0],
            s.v.0[1], s.v.0[2], s.e_norm, s.stage_cost, s.pos_err,
        ];
        for f in floats {
            let _ = write!(out, "{f:?},");
        }
        let _ = writeln!(out, "{},{}", s.viol, s.solve_latency_steps);
    }
    out
}

pub fn emit_trace(trace: &SimTrace, path: &Path) -> Result<(), TraceError> {
    fs::write(path, render_trace(trace)).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, TraceError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: p.clone(),
        source,
    })?;
    let fail = |line: usize, message: String| TraceError::Format {
        path: p.clone(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fail(1, "missing header".into()))?;
    if header != COLUMNS.join(",") {
        return Err(fail(1, format!("unexpected header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != COLUMNS.len() {
            return Err(fail(i + 2, format!("expected {} cells, got {}", COLUMNS.len(), cells.len())));
        }
        let mut values = [0.0; 20];
        for (k, cell) in cells[..20].iter().enumerate() {
            values[k] = cell
                .parse()
                .map_err(|e| fail(i + 2, format!("column {}: {e}", COLUMNS[k])))?;
        }
        let int = |k: usize| {
            cells[k]
                .parse::<usize>()
                .map_err(|e| fail(i + 2, format!("column {}: {e}", COLUMNS[k])))
        };
        rows.push(TraceRow {
            values,
            viol: int(20)?,
            solve_latency_steps: int(21)?,
        });
    }
    Ok(rows)
}
