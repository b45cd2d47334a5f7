//! Line-delimited report and trace files.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::eval::{GroupedReport, MetricRecord};
use crate::refine::TraceRecord;

pub const REPORT_HEADER: &str = "metric\tthreshold\tgroup\tvalue";

/// `metric<TAB>threshold<TAB>group<TAB>value`, one record per line.
pub fn write_records(w: &mut impl Write, group: &str, records: &[MetricRecord]) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in records {
        writeln!(w, "{}\t{}\t{group}\t{}", r.metric, r.threshold, r.value)?;
    }
    Ok(())
}

/// Records and their group labels.
pub fn read_records(r: impl BufRead) -> Result<Vec<(String, MetricRecord)>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if k == 0 && line == REPORT_HEADER || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::format("report", format!("line {}: expected 4 tab-separated fields", k + 1)));
        }
        let value = f[3]
            .parse::<f64>()
            .map_err(|_| Error::format("report", format!("line {}: bad value `{}`", k + 1, f[3])))?;
        out.push((
            f[2].to_string(),
            MetricRecord {
                metric: f[0].to_string(),
                threshold: f[1].to_string(),
                value,
            },
        ));
    }
    Ok(out)
}

/// Grouped statistics as `<metric>/mean`, `<metric>/std` and `<metric>/n` records.
pub fn write_grouped(w: &mut impl Write, report: &GroupedReport) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for (group, metrics) in report {
        for ((metric, threshold), s) in metrics {
            writeln!(w, "{metric}/mean\t{threshold}\t{group}\t{}", s.mean)?;
            writeln!(w, "{metric}/std\t{threshold}\t{group}\t{}", s.std)?;
            writeln!(w, "{metric}/n\t{threshold}\t{group}\t{}", s.count)?;
        }
    }
    Ok(())
}

pub const TRACE_HEADER: &str = "iteration\tl_rgb\tl_t\tl_r\tl_wd\ttotal";

pub fn write_trace(w: &mut impl Write, history: &[TraceRecord]) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for h in history {
        writeln!(w, "{}\t{}\t{}\t{}\t{}\t{}", h.iteration, h.rgb, h.smooth_t, h.smooth_r, h.wd, h.total)?;
    }
    Ok(())
}
