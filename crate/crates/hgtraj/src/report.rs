//! CSV output of metric reports.

use std::io::Write;

use anyhow::Result;
use serde::Serialize;

use hgtraj_core::eval::MetricReport;

#[derive(Debug, Serialize)]
struct Row {
    k: usize,
    min_ade: f64,
    min_fde: f64,
    miss_rate: f64,
    offroad_rate: f64,
    agents: usize,
}

/// One row per k; the off-road rate is repeated since it does not depend on k.
pub fn write_metrics_csv(report: &MetricReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (i, &k) in report.ks.iter().enumerate() {
        w.serialize(Row {
            k,
            min_ade: report.min_ade[i],
            min_fde: report.min_fde[i],
            miss_rate: report.miss_rate[i],
            offroad_rate: report.offroad_rate,
            agents: report.agents.len(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use hgtraj_core::eval::MissRule;

    #[test]
    fn one_row_per_k() {
        let r = MetricReport {
            ks: vec![1, 5],
            min_ade: vec![2.0, 1.0],
            min_fde: vec![4.0, 2.5],
            miss_rate: vec![0.5, 0.25],
            offroad_rate: 0.125,
            miss_rule: MissRule::All,
            agents: Vec::new(),
        };
        let mut buf = Vec::new();
        write_metrics_csv(&r, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "k,min_ade,min_fde,miss_rate,offroad_rate,agents\n1,2.0,4.0,0.5,0.125,0\n5,1.0,2.5,0.25,0.125,0\n"
        );
    }
}
