//! Static SVG figures. Each file embeds its data as CSV inside a leading
//! comment so figures can be diffed and parsed back.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One panel of the per-layer accuracy chart.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracySeries {
    pub title: String,
    /// `(layer name, accuracy)` in layer order.
    pub bars: Vec<(String, f64)>,
    pub majority_baseline: Option<f64>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn comment_safe(s: &str) -> String {
    s.replace("--", "- -")
}

fn num(v: f64) -> String {
    // fixed precision keeps the markup stable across platforms
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 40.0;

/// Bar chart of accuracy per layer, one panel per series.
pub fn plot_layer_accuracy(series: &[AccuracySeries]) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.bars.is_empty()) {
        return Err(Error::EmptyInput("accuracy plot needs at least one bar per panel".into()));
    }
    let width = PANEL_W * series.len() as f64;
    let height = PANEL_H + 2.0 * MARGIN;
    let mut s = String::new();
    s.push_str("<!-- data\npanel,layer,accuracy\n");
    for p in series {
        for (name, acc) in &p.bars {
            let _ = writeln!(s, "{},{},{}", comment_safe(&p.title), comment_safe(name), acc);
        }
    }
    s.push_str("-->\n");
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="11">"#,
        num(width),
        num(height),
        num(width),
        num(height)
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (pi, p) in series.iter().enumerate() {
        let x0 = pi as f64 * PANEL_W + MARGIN;
        let plot_w = PANEL_W - 1.5 * MARGIN;
        let base_y = MARGIN + PANEL_H;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
            num(x0 + plot_w / 2.0),
            num(MARGIN * 0.6),
            esc(&p.title)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black"/>"#,
            num(MARGIN),
            num(base_y),
            x = num(x0)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#,
            num(x0),
            num(x0 + plot_w),
            y = num(base_y)
        );
        for tick in 0..=4 {
            let v = tick as f64 / 4.0;
            let y = base_y - v * PANEL_H;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                num(x0 - 4.0),
                num(y + 4.0),
                num(v * 100.0)
            );
        }
        let slot = plot_w / p.bars.len() as f64;
        for (i, (name, acc)) in p.bars.iter().enumerate() {
            let h = acc.clamp(0.0, 1.0) * PANEL_H;
            let x = x0 + i as f64 * slot + slot * 0.15;
            let _ = writeln!(
                s,
                r##"<rect class="bar" data-layer="{}" data-value="{}" x="{}" y="{}" width="{}" height="{}" fill="#4878a8"/>"##,
                esc(name),
                acc,
                num(x),
                num(base_y - h),
                num(slot * 0.7),
                num(h)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end" transform="rotate(-45 {} {})">{}</text>"#,
                num(x + slot * 0.35),
                num(base_y + 12.0),
                num(x + slot * 0.35),
                num(base_y + 12.0),
                esc(name)
            );
        }
        if let Some(b) = p.majority_baseline {
            let y = base_y - b.clamp(0.0, 1.0) * PANEL_H;
            let _ = writeln!(
                s,
                r##"<line class="baseline" x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#c03030" stroke-dasharray="4 3"/>"##,
                num(x0),
                num(x0 + plot_w),
                y = num(y)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Heatmap of a confusion matrix; cell shade is the row-normalized share.
pub fn plot_confusion(labels: &[String], confusion: &[Vec<usize>]) -> Result<String> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyInput("confusion plot needs labels".into()));
    }
    if confusion.len() != n || confusion.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch(format!("confusion matrix must be {n}×{n}")));
    }
    let cell = (360.0 / n as f64).clamp(6.0, 40.0);
    let left = 110.0;
    let top = 110.0;
    let size = left + cell * n as f64 + 20.0;
    let mut s = String::from("<!-- data\ntrue,predicted,count,row_share\n");
    let shares: Vec<Vec<f64>> = confusion
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                comment_safe(&labels[i]),
                comment_safe(&labels[j]),
                confusion[i][j],
                shares[i][j]
            );
        }
    }
    s.push_str("-->\n");
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{0}" viewBox="0 0 {0} {0}" font-family="sans-serif" font-size="10">"#,
        num(size)
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for i in 0..n {
        let y = top + i as f64 * cell;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            num(left - 4.0),
            num(y + cell * 0.65),
            esc(&labels[i])
        );
        let x = left + i as f64 * cell + cell * 0.6;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" transform="rotate(-60 {x} {y})">{}</text>"#,
            esc(&labels[i]),
            x = num(x),
            y = num(top - 4.0)
        );
        for j in 0..n {
            let v = shares[i][j];
            // white → dark blue
            let r = (255.0 * (1.0 - v)).round() as u8;
            let g = (255.0 - 180.0 * v).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect class="cell" data-row="{i}" data-col="{j}" data-share="{v}" x="{}" y="{}" width="{c}" height="{c}" fill="#{r:02x}{g:02x}ff" stroke="#dddddd" stroke-width="0.5"/>"##,
                num(left + j as f64 * cell),
                num(y),
                c = num(cell)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Scatter of 2-D centroid coordinates labelled with their majority label.
pub fn plot_centroids(coords: &Matrix, labels: &[String]) -> Result<String> {
    if coords.cols != 2 {
        return Err(Error::ShapeMismatch("centroid coordinates must be k × 2".into()));
    }
    if labels.len() != coords.rows {
        return Err(Error::ShapeMismatch("one label per centroid".into()));
    }
    let size = 520.0;
    let pad = 30.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in coords.iter_rows() {
        for d in 0..2 {
            lo[d] = lo[d].min(r[d]);
            hi[d] = hi[d].max(r[d]);
        }
    }
    let scale = |v: f64, d: usize| {
        let span = hi[d] - lo[d];
        let t = if span > 0.0 { (v - lo[d]) / span } else { 0.5 };
        if d == 0 {
            pad + t * (size - 2.0 * pad)
        } else {
            size - pad - t * (size - 2.0 * pad)
        }
    };
    let mut s = String::from("<!-- data\nlabel,x,y\n");
    for (r, l) in coords.iter_rows().zip(labels) {
        let _ = writeln!(s, "{},{},{}", comment_safe(l), r[0], r[1]);
    }
    s.push_str("-->\n");
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{0}" viewBox="0 0 {0} {0}" font-family="sans-serif" font-size="9">"#,
        num(size)
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (r, l) in coords.iter_rows().zip(labels) {
        let (x, y) = (scale(r[0], 0), scale(r[1], 1));
        let _ = writeln!(
            s,
            r##"<circle class="centroid" cx="{}" cy="{}" r="2.5" fill="#4878a8"/><text x="{}" y="{}">{}</text>"##,
            num(x),
            num(y),
            num(x + 3.0),
            num(y - 3.0),
            esc(l)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
