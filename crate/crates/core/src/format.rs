//! Reproducible text output: CSV with `%g`-style floats and JSON with sorted keys.

use serde::Serialize;

use crate::metrics::CountReport;
use crate::sim::{Comparison, NetworkReport, SweepPoint, TraceEvent};

/// Formats like C's `%g`: 6 significant digits, trailing zeros removed,
/// exponent form below 1e-4 and from 1e6 up.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (5 - exp) as usize, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Pretty JSON with object keys in lexicographic order.
pub fn to_sorted_json<T: Serialize>(value: &T) -> String {
    // serde_json's default map is ordered, so a round trip through Value sorts keys.
    let v = serde_json::to_value(value).expect("report types serialize");
    let mut s = serde_json::to_string_pretty(&v).expect("values serialize");
    s.push('\n');
    s
}

pub fn trace_csv(trace: &[TraceEvent]) -> String {
    let mut out = String::from("cycle,interface,direction,bytes\n");
    for e in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.cycle,
            e.interface.as_str(),
            e.direction.as_str(),
            e.bytes
        ));
    }
    out
}

/// One row per simulated layer.
pub fn layer_csv(report: &NetworkReport) -> String {
    let mut out = String::from(
        "layer,kind,dataflow,cycles,latency_s,macs,utilization,mapping_utilization,folds,\
         sram_ifmap_reads,sram_weight_reads,sram_ofmap_reads,sram_ifmap_writes,sram_weight_writes,sram_ofmap_writes,\
         dram_reads,dram_writes,avg_dram_bw,max_dram_bw,avg_sram_bw,max_sram_bw\n",
    );
    for l in &report.layers {
        let avg_sram = l.avg_bw.ifmap_sram + l.avg_bw.weight_sram + l.avg_bw.ofmap_sram;
        let max_sram = l.max_bw.ifmap_sram + l.max_bw.weight_sram + l.max_bw.ofmap_sram;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            l.layer,
            l.kind,
            l.dataflow,
            l.cycles,
            fmt_g(l.latency_s),
            l.macs_scheduled,
            fmt_g(l.utilization),
            fmt_g(l.mapping_utilization),
            l.folds,
            l.sram_reads.ifmap,
            l.sram_reads.weight,
            l.sram_reads.ofmap,
            l.sram_writes.ifmap,
            l.sram_writes.weight,
            l.sram_writes.ofmap,
            l.dram_reads,
            l.dram_writes,
            fmt_g(l.avg_bw.dram),
            fmt_g(l.max_bw.dram),
            fmt_g(avg_sram),
            fmt_g(max_sram),
        ));
    }
    out
}

/// Per-interface bandwidth series, one row per layer.
pub fn bandwidth_csv(report: &NetworkReport) -> String {
    let mut out = String::from(
        "layer,kind,avg_ifmap_sram,avg_weight_sram,avg_ofmap_sram,avg_dram,\
         max_ifmap_sram,max_weight_sram,max_ofmap_sram,max_dram\n",
    );
    for row in crate::sim::bandwidth_profile(&report.layers) {
        let (a, m) = (row.avg, row.max);
        let vals = [
            a.ifmap_sram,
            a.weight_sram,
            a.ofmap_sram,
            a.dram,
            m.ifmap_sram,
            m.weight_sram,
            m.ofmap_sram,
            m.dram,
        ];
        let vals: Vec<String> = vals.iter().map(|&v| fmt_g(v)).collect();
        out.push_str(&format!("{},{},{}\n", row.layer, row.kind, vals.join(",")));
    }
    out
}

pub fn compare_csv(c: &Comparison) -> String {
    let mut out = String::from("config,cycles,latency_s,speedup\n");
    for r in &c.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.config,
            r.cycles,
            fmt_g(r.latency_s),
            fmt_g(r.speedup)
        ));
    }
    out
}

pub fn layerwise_csv(c: &Comparison) -> String {
    let mut out = String::from("group,baseline_cycles,fuse_cycles,speedup\n");
    for r in &c.layerwise {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.group,
            r.baseline_cycles,
            r.fuse_cycles,
            fmt_g(r.speedup)
        ));
    }
    out
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("rows,cols,baseline_cycles,fuse_cycles,speedup\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.rows,
            p.cols,
            p.baseline_cycles,
            p.fuse_cycles,
            fmt_g(p.speedup)
        ));
    }
    out
}

pub fn count_csv(report: &CountReport) -> String {
    report.to_csv()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_matches_c_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (1.23456789, "1.23457"),
            (-2.5, "-2.5"),
            (100.0, "100"),
            (0.0625, "0.0625"),
            (999999.5, "1e+06"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g(x), want, "{x}");
        }
    }

    #[test]
    fn json_keys_sorted() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: u8,
        }
        let s = to_sorted_json(&S { zeta: 1, alpha: 2 });
        assert!(s.find("alpha").unwrap() < s.find("zeta").unwrap());
    }
}
