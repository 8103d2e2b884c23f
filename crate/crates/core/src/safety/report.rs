use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{DegradationReport, ProbeResult, SnrRow, Verdict};

pub const REPORT_TAG: &str = "FFUSION-REPORT v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub tool_version: String,
    /// The full run configuration that produced this report.
    pub config: serde_json::Value,
    pub degradation: DegradationReport,
    pub probes: Vec<ProbeResult>,
    pub snr: Vec<SnrRow>,
    pub asil: Vec<Verdict>,
}

impl Report {
    pub fn new(config: serde_json::Value, degradation: DegradationReport) -> Self {
        Self {
            format: REPORT_TAG.into(),
            tool_version: tool_version(),
            config,
            degradation,
            probes: vec![],
            snr: vec![],
            asil: vec![],
        }
    }
}

pub fn tool_version() -> String {
    format!("ffusion {}", env!("CARGO_PKG_VERSION"))
}

/// Pretty JSON with struct field order fixed by declaration, so equal
/// inputs give byte-identical output.
pub fn render_report(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

pub fn render_summary(report: &Report) -> String {
    let mut s = String::new();
    let d = &report.degradation;
    let _ = writeln!(s, "{REPORT_TAG} ({})", report.tool_version);
    let _ = writeln!(
        s,
        "nominal: command {} seg {} on {} samples",
        pct(d.nominal.command_accuracy),
        pct(d.nominal.seg_accuracy),
        d.nominal.samples
    );
    let _ = writeln!(s, "\nscenario                  status        command  retained  arbitration cam/depth/text");
    for r in &d.scenarios {
        let m = &r.metrics;
        let arb = |k: &str| m.arbitration.get(k).copied().unwrap_or(0.0);
        let _ = writeln!(
            s,
            "{:<25} {:<13} {:>7}  {:>8}  {:.3}/{:.3}/{:.3}",
            m.scenario,
            format!("{:?}", r.status),
            pct(m.command_accuracy),
            r.retained_ratio.map_or("n/a".into(), |v| format!("{v:.3}")),
            arb("camera"),
            arb("depth"),
            arb("text")
        );
    }
    if let Some(ind) = &d.independence {
        let _ = writeln!(s, "\nindependence: {}", if ind.pass { "PASS" } else { "FAIL" });
        let _ = writeln!(s, "  structural disjointness: {}", if ind.structural.pass { "pass" } else { "fail" });
        for f in &ind.functional {
            let _ = writeln!(
                s,
                "  {} masked: {} ({} params, {} samples)",
                f.masked.name(),
                if f.pass { "zero gradients" } else { "NONZERO gradients" },
                f.params_checked,
                f.samples
            );
        }
    }
    if !report.probes.is_empty() {
        let _ = writeln!(s, "\nprobes:");
        for p in &report.probes {
            let tag = if p.shuffled_labels { " (shuffled labels)" } else { "" };
            let _ = writeln!(s, "  {}{tag}: {}", p.modality.name(), pct(p.accuracy));
        }
    }
    if !report.snr.is_empty() {
        let _ = writeln!(s, "\nsigma   fused   camera-only");
        for r in &report.snr {
            let _ = writeln!(s, "{:<7} {:>6}  {:>6}", r.sigma, pct(r.fused_accuracy), pct(r.camera_only_accuracy));
        }
    }
    if !report.asil.is_empty() {
        let _ = writeln!(s, "\nASIL decomposition:");
        for v in &report.asil {
            let verdict = if v.valid { "VALID".to_string() } else { format!("INVALID: {}", v.reason.as_deref().unwrap_or("")) };
            let _ = writeln!(s, "  {}: {verdict}", v.claim);
        }
    }
    s
}
