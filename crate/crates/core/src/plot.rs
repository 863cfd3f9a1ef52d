//! Standalone SVG charts for evaluation reports.

use std::fmt::Write;

use crate::eval::{CloseCityReport, EvalReport, SPLITS};

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
}

fn legend(out: &mut String, models: &[&str], x: f64, y: f64) {
    for (i, m) in models.iter().enumerate() {
        let yy = y + 18.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#, yy - 10.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(out, r#"<text x="{}" y="{yy}">{}</text>"#, x + 18.0, escape(m));
    }
}

fn distinct<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut v: Vec<&str> = Vec::new();
    for s in items {
        if !v.contains(&s) {
            v.push(s);
        }
    }
    v
}

/// Grouped bars: one group per (task, split), one bar per model, with the
/// bootstrap interval drawn as an error bar.
pub fn mrr_bar_chart(reports: &[EvalReport]) -> String {
    let models = distinct(reports.iter().map(|r| r.model.as_str()));
    let tasks = distinct(reports.iter().map(|r| r.task.as_str()));
    let groups: Vec<(&str, &str)> = tasks.iter().flat_map(|t| SPLITS.iter().map(move |s| (*t, *s))).collect();
    let (left, top, plot_h, bar_w, gap) = (50.0, 40.0, 220.0, 16.0, 24.0);
    let group_w = bar_w * models.len().max(1) as f64 + gap;
    let width = left + group_w * groups.len().max(1) as f64 + 120.0;
    let height = top + plot_h + 70.0;
    let mut out = String::new();
    header(&mut out, width, height, "MRR by model and split");
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let _ = writeln!(out, r##"<line x1="{left}" x2="{}" y1="{}" y2="{}" stroke="#ddd"/>"##, width - 120.0, y(v), y(v));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, left - 6.0, y(v) + 4.0);
    }
    for (gi, (task, split)) in groups.iter().enumerate() {
        let gx = left + gap / 2.0 + group_w * gi as f64;
        for (mi, model) in models.iter().enumerate() {
            let Some(s) = reports.iter().find(|r| r.model == *model && r.task == *task).and_then(|r| r.split(split)) else {
                continue;
            };
            let x = gx + bar_w * mi as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{x}" y="{:.2}" width="{}" height="{:.2}" fill="{}"/>"#,
                y(s.mrr),
                bar_w - 2.0,
                top + plot_h - y(s.mrr),
                PALETTE[mi % PALETTE.len()]
            );
            if let Some((lo, hi)) = s.mrr_ci {
                let cx = x + (bar_w - 2.0) / 2.0;
                let _ = writeln!(out, r#"<line x1="{cx}" x2="{cx}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#, y(lo), y(hi));
            }
        }
        let cx = gx + bar_w * models.len() as f64 / 2.0;
        let _ = writeln!(out, r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#, top + plot_h + 16.0, escape(split));
        let _ = writeln!(out, r##"<text x="{cx}" y="{}" text-anchor="middle" fill="#555">{}</text>"##, top + plot_h + 32.0, escape(task));
    }
    legend(&mut out, &models, width - 100.0, top + 10.0);
    out.push_str("</svg>\n");
    out
}

/// Box summary of the predicted-city distances, one box per model and split.
pub fn distance_box_chart(reports: &[CloseCityReport]) -> String {
    let boxes: Vec<(usize, &str, &crate::eval::DistanceSummary)> = reports
        .iter()
        .enumerate()
        .flat_map(|(mi, r)| SPLITS.iter().filter_map(move |s| r.split(s).map(|d| (mi, *s, d))))
        .collect();
    let models: Vec<&str> = reports.iter().map(|r| r.model.as_str()).collect();
    let max = boxes.iter().map(|b| b.2.max).fold(1.0, f64::max);
    let (left, top, plot_h, slot) = (60.0, 40.0, 240.0, 44.0);
    let width = left + slot * boxes.len().max(1) as f64 + 120.0;
    let height = top + plot_h + 50.0;
    let mut out = String::new();
    header(&mut out, width, height, "Distance to predicted city (km)");
    let y = |v: f64| top + plot_h * (1.0 - v / max);
    for tick in 0..=4 {
        let v = max * tick as f64 / 4.0;
        let _ = writeln!(out, r##"<line x1="{left}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="#ddd"/>"##, width - 120.0, y(v), y(v));
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.0}</text>"#, left - 6.0, y(v) + 4.0);
    }
    for (i, (mi, split, d)) in boxes.iter().enumerate() {
        let cx = left + slot * (i as f64 + 0.5);
        let color = PALETTE[mi % PALETTE.len()];
        let _ = writeln!(out, r#"<line x1="{cx}" x2="{cx}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#, y(d.max), y(d.min));
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{:.2}" width="24" height="{:.2}" fill="{color}" stroke="black"/>"#,
            cx - 12.0,
            y(d.q3),
            (y(d.q1) - y(d.q3)).max(0.5)
        );
        let _ = writeln!(out, r#"<line x1="{}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#, cx - 12.0, cx + 12.0, y(d.median), y(d.median));
        let _ = writeln!(out, r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#, top + plot_h + 16.0, escape(split));
    }
    legend(&mut out, &models, width - 100.0, top + 10.0);
    out.push_str("</svg>\n");
    out
}
