//! Report emission: JSON, Markdown tables and small SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::bench::LatencyReport;
use crate::error::Result;

/// Writes `<name>.json` and, when given, `<name>.md` under `dir`.
pub fn write_report<T: Serialize>(dir: impl AsRef<Path>, name: &str, report: &T, markdown: Option<&str>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(report)?)?;
    if let Some(md) = markdown {
        std::fs::write(dir.join(format!("{name}.md")), md)?;
    }
    Ok(())
}

/// GitHub-style table.
pub fn markdown_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| {} |", header.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s
}

pub fn latency_markdown(r: &LatencyReport) -> String {
    let mut header = vec!["length".to_string(), "frames".into(), "encoder ms".into()];
    if let Some(b) = r.buckets.first() {
        header.push(format!("{} ms (passes)", b.ar.label));
        for t in &b.nar {
            header.push(format!("{} ms (passes, speedup)", t.label));
        }
    }
    let rows: Vec<Vec<String>> = r
        .buckets
        .iter()
        .map(|b| {
            let mut row = vec![
                b.length.to_string(),
                format!("{:.0}", b.mean_source_frames),
                format!("{:.2}", b.encoder_ms),
                format!("{:.2} ({})", b.ar.mean_ms, b.ar.forward_passes),
            ];
            row.extend(
                b.nar
                    .iter()
                    .map(|t| format!("{:.2} ({}, {:.2}x)", t.mean_ms, t.forward_passes, t.speedup)),
            );
            row
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    format!(
        "# Decoding latency\n\n{}\nSpeedup at the longest bucket: {:.2}x\n",
        markdown_table(&h, &rows),
        r.headline_speedup
    )
}

pub fn uer_markdown(r: &super::uer::UerReport) -> String {
    let rows: Vec<Vec<String>> = r
        .baseline
        .keys()
        .map(|f| {
            vec![
                f.clone(),
                format!("{:.1}", r.baseline[f]),
                format!("{:.1}", r.tuned[f]),
                format!("{:.1}%", 100.0 * r.relative_reduction(f)),
            ]
        })
        .collect();
    format!(
        "# Unit error rate under perturbation\n\n{}\n{} train / {} test utterances\n",
        markdown_table(&["family", "baseline UER %", "tuned UER %", "relative reduction"], &rows),
        r.train_utterances,
        r.test_utterances
    )
}

pub fn latency_svg(r: &LatencyReport) -> String {
    let mut series = vec![(
        r.buckets.first().map(|b| b.ar.label.clone()).unwrap_or_default(),
        r.buckets.iter().map(|b| (b.length as f64, b.ar.mean_ms)).collect::<Vec<_>>(),
    )];
    let n_nar = r.buckets.first().map_or(0, |b| b.nar.len());
    for i in 0..n_nar {
        series.push((
            r.buckets[0].nar[i].label.clone(),
            r.buckets.iter().map(|b| (b.length as f64, b.nar[i].mean_ms)).collect(),
        ));
    }
    line_chart("Decoding latency", "target length", "ms per utterance", &series)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line chart with markers and a legend; axes start at zero.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (l, r, t, b) = (70.0, 180.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let x_max = pts.clone().map(|p| p.0).fold(0.0, f64::max).max(1e-9) * 1.05;
    let y_max = pts.map(|p| p.1).fold(0.0, f64::max).max(1e-9) * 1.1;
    let px = |x: f64| l + x / x_max * (w - l - r);
    let py = |y: f64| h - b - y / y_max * (h - t - b);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, (w - r + l) / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<path d="M{l},{t} L{l},{} L{},{}" stroke="black" fill="none"/>"#,
        h - b,
        w - r,
        h - b
    );
    for i in 0..=4 {
        let (xv, yv) = (x_max * i as f64 / 4.0, y_max * i as f64 / 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(xv), h - b + 16.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (w - r + l) / 2.0, h - 12.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (h - b + t) / 2.0,
        (h - b + t) / 2.0,
        esc(y_label)
    );
    for (i, (name, p)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{c}" stroke-width="2" fill="none"/>"#, d.join(" "));
        for &(x, y) in p {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}"/>"#, px(x), py(y));
        }
        let ly = t + 10.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="3" fill="{c}"/>"#, w - r + 12.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, w - r + 30.0, esc(name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v >= 100.0 || v == 0.0 {
        format!("{v:.0}")
    } else if v >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
