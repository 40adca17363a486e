//! Minimal static SVG output: score heatmaps and line plots.

use std::fmt::Write;

use odecausal::nalgebra::DMatrix;
use odecausal::Trajectory;

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Heatmap of a non-negative matrix, white at 0 and dark blue at the maximum.
pub fn heatmap(m: &DMatrix<f64>, title: &str) -> String {
    let cell = 28.0;
    let (rows, cols) = m.shape();
    let (left, top) = (40.0, 40.0);
    let width = left + cell * cols as f64 + 20.0;
    let height = top + cell * rows as f64 + 20.0;
    let max = m.iter().cloned().fold(0.0, f64::max);
    let mut s = header(width, height, title);
    for i in 0..rows {
        let _ = write!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{i}</text>"#, left - 6.0, top + cell * (i as f64 + 0.65));
        for j in 0..cols {
            let v = if max > 0.0 { (m[(i, j)] / max).clamp(0.0, 1.0) } else { 0.0 };
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let _ = write!(
                s,
                r##"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#ccc"><title>({i},{j}) {:.4}</title></rect>"##,
                left + cell * j as f64,
                top + cell * i as f64,
                m[(i, j)]
            );
        }
    }
    for j in 0..cols {
        let _ = write!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{j}</text>"#, left + cell * (j as f64 + 0.5), top - 6.0);
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline per column of `traj` against time.
pub fn lines(traj: &Trajectory, title: &str) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let times = traj.times();
    let (t0, t1) = (times[0], *times.last().unwrap_or(&times[0]));
    let lo = traj.flat_states().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = traj.flat_states().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span_t = if t1 > t0 { t1 - t0 } else { 1.0 };
    let span_y = if hi > lo { hi - lo } else { 1.0 };
    let px = |t: f64| pad + (t - t0) / span_t * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - lo) / span_y * (h - 2.0 * pad);
    let mut s = header(w, h, title);
    let _ = write!(
        s,
        r##"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let _ = write!(s, r#"<text x="{pad}" y="{}" font-size="10">t={t0:.3}</text>"#, h - pad + 14.0);
    let _ = write!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">t={t1:.3}</text>"#, w - pad, h - pad + 14.0);
    let _ = write!(s, r#"<text x="4" y="{}" font-size="10">{hi:.3}</text>"#, pad + 4.0);
    let _ = write!(s, r#"<text x="4" y="{}" font-size="10">{lo:.3}</text>"#, h - pad);
    for j in 0..traj.dim() {
        let points: Vec<String> = traj.rows().zip(times).map(|(r, &t)| format!("{:.2},{:.2}", px(t), py(r[j]))).collect();
        let _ = write!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"><title>x{j}</title></polyline>"#,
            PALETTE[j % PALETTE.len()],
            points.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

fn header(w: f64, h: f64, title: &str) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif"><text x="8" y="16" font-size="12">{}</text>"#,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
