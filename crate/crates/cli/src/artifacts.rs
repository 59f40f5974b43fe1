//! CSV tables and SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use bldclass::eval::{Dispersion, EvalReport};

use crate::error::{CliError, Result};

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::file(path, e))?;
    w.write_record(header).map_err(|e| CliError::file(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::file(path, e))?;
    }
    w.flush().map_err(|e| CliError::file(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::file(path, e))
}

pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

/// `mean ± std` with four decimals.
pub fn mean_std(d: &Dispersion) -> String {
    if d.n == 0 || d.mean.is_nan() {
        "NA".into()
    } else {
        format!("{:.4} ± {:.4}", d.mean, d.std)
    }
}

/// `[min - max]` of the mean per-class F1 extremes.
pub fn f1_range(lo: &Dispersion, hi: &Dispersion) -> String {
    if lo.n == 0 || lo.mean.is_nan() {
        "NA".into()
    } else {
        format!("[{:.4} - {:.4}]", lo.mean, hi.mean)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

/// Row-normalized confusion matrix heat map (rows are true classes).
pub fn confusion_svg(report: &EvalReport, title: &str) -> String {
    let k = report.class_names.len();
    let cell = 44.0;
    let left = 130.0;
    let top = 120.0;
    let (w, h) = (left + cell * k as f64 + 20.0, top + cell * k as f64 + 40.0);
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"10\" y=\"18\" font-size=\"13\">{}</text>", esc(title));
    for (j, name) in report.class_names.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        let _ = writeln!(
            s,
            "<text transform=\"translate({x},{}) rotate(-50)\">{}</text>",
            top - 6.0,
            esc(name)
        );
    }
    for (i, row) in report.confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        let y = top + cell * i as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            left - 6.0,
            y + cell * 0.6,
            esc(&report.class_names[i])
        );
        for (j, &c) in row.iter().enumerate() {
            let share = if total > 0 { c as f64 / total as f64 } else { 0.0 };
            let shade = (255.0 * (1.0 - share)).round() as u8;
            let x = left + cell * j as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\" stroke=\"#999\"/>"
            );
            let ink = if share > 0.55 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{ink}\">{:.2}</text>",
                x + cell / 2.0,
                y + cell * 0.6,
                share
            );
        }
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">predicted</text>",
        left + cell * k as f64 / 2.0,
        h - 12.0
    );
    s.push_str("</svg>\n");
    s
}

/// Grouped bars of precision, recall and F1 per class.
pub fn f1_svg(report: &EvalReport, title: &str) -> String {
    let k = report.class_names.len();
    let group = 60.0;
    let (left, top, plot_h) = (50.0, 40.0, 200.0);
    let (w, h) = (left + group * k as f64 + 120.0, top + plot_h + 110.0);
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"10\" y=\"18\" font-size=\"13\">{}</text>", esc(title));
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(s, "<line x1=\"{left}\" x2=\"{}\" y1=\"{y}\" y2=\"{y}\" stroke=\"#ddd\"/>", left + group * k as f64);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>", left - 4.0, y + 4.0);
    }
    let colors = ["#7aa6c2", "#e0a458", "#3d5a80"];
    for (c, sc) in report.f1.per_class.iter().enumerate() {
        let vals = [Some(sc.precision), sc.recall, sc.f1];
        for (b, v) in vals.iter().enumerate() {
            let v = v.unwrap_or(0.0);
            let x = left + group * c as f64 + 8.0 + 15.0 * b as f64;
            let bh = plot_h * v;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{}\" width=\"14\" height=\"{bh}\" fill=\"{}\"/>",
                top + plot_h - bh,
                colors[b]
            );
        }
        let x = left + group * (c as f64 + 0.5);
        let _ = writeln!(
            s,
            "<text transform=\"translate({x},{}) rotate(40)\">{}</text>",
            top + plot_h + 12.0,
            esc(&report.class_names[c])
        );
    }
    for (b, name) in ["precision", "recall", "F1"].iter().enumerate() {
        let x = left + group * k as f64 + 15.0;
        let y = top + 16.0 * b as f64;
        let _ = writeln!(s, "<rect x=\"{x}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{}\"/>", colors[b]);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{name}</text>", x + 14.0, y + 9.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Horizontal bar chart of (label, value) pairs in the given order.
pub fn bars_svg(items: &[(String, f64)], title: &str) -> String {
    let row = 18.0;
    let (left, top, plot_w) = (230.0, 34.0, 320.0);
    let h = top + row * items.len() as f64 + 20.0;
    let w = left + plot_w + 80.0;
    let max = items.iter().map(|i| i.1.abs()).fold(0.0, f64::max).max(1e-12);
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"10\" y=\"18\" font-size=\"13\">{}</text>", esc(title));
    let zero = left + if items.iter().any(|i| i.1 < 0.0) { plot_w / 2.0 } else { 0.0 };
    let scale = if zero > left { plot_w / 2.0 } else { plot_w } / max;
    for (i, (label, v)) in items.iter().enumerate() {
        let y = top + row * i as f64;
        let bw = (v * scale).abs();
        let x = if *v < 0.0 { zero - bw } else { zero };
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", left - 6.0, y + 12.0, esc(label));
        let _ = writeln!(s, "<rect x=\"{x}\" y=\"{}\" width=\"{bw}\" height=\"{}\" fill=\"#3d5a80\"/>", y + 2.0, row - 4.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{v:.4}</text>", zero.max(x + bw) + 4.0, y + 12.0);
    }
    s.push_str("</svg>\n");
    s
}
