//! Plot emission: gnuplot scripts that read the telemetry CSV, and a small
//! built-in SVG renderer so figures exist without external tools.

use std::fmt::Write as _;

const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 240.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 34.0;
const BOTTOM: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
/// Upper bound on the vertices drawn per series.
const MAX_POINTS: usize = 4000;

pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

/// "Nice" tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![lo];
    }
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Formats a tick with as many decimals as the tick spacing needs.
fn fmt_tick(v: f64, step: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e5 || (a < 1e-3 && step < 1e-3) {
        return format!("{v:.2e}");
    }
    let decimals = if step > 0.0 { (-step.log10().floor()).clamp(0.0, 12.0) as usize } else { 4 };
    format!("{v:.decimals$}")
}

/// Keeps the extreme points of each bucket so narrow spikes survive.
fn thin(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).filter(|(a, b)| a.is_finite() && b.is_finite()).collect();
    if pts.len() <= MAX_POINTS {
        return pts;
    }
    let buckets = MAX_POINTS / 2;
    let per = pts.len().div_ceil(buckets);
    let mut out = Vec::with_capacity(MAX_POINTS + 2);
    for chunk in pts.chunks(per) {
        let (mut lo, mut hi) = (0, 0);
        for (i, p) in chunk.iter().enumerate() {
            if p.1 < chunk[lo].1 {
                lo = i;
            }
            if p.1 > chunk[hi].1 {
                hi = i;
            }
        }
        let (a, b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        out.push(chunk[a]);
        if b != a {
            out.push(chunk[b]);
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders stacked panels sharing the x axis into a standalone SVG.
pub fn render_svg(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let height = TOP + panels.len() as f64 * PANEL_HEIGHT + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in panels {
        for se in &p.series {
            for &x in &se.x {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
            }
        }
    }
    if !(x_max > x_min) {
        x_max = x_min + 1.0;
    }
    for (k, panel) in panels.iter().enumerate() {
        let top = TOP + k as f64 * PANEL_HEIGHT + 10.0;
        let plot_h = PANEL_HEIGHT - BOTTOM - 20.0;
        let plot_w = WIDTH - LEFT - RIGHT;
        let tf = |v: f64| if panel.log_y { v.abs().max(1e-300).log10() } else { v };
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for se in &panel.series {
            for &y in &se.y {
                let v = tf(y);
                if v.is_finite() {
                    y_min = y_min.min(v);
                    y_max = y_max.max(v);
                }
            }
        }
        if !y_min.is_finite() {
            (y_min, y_max) = (0.0, 1.0);
        }
        if panel.log_y {
            y_min = y_min.floor().max(y_max.ceil() - 16.0);
            y_max = y_max.ceil();
        }
        if !(y_max > y_min) {
            let pad = if y_min == 0.0 { 1.0 } else { 0.1 * y_min.abs() };
            y_min -= pad;
            y_max += pad;
        }
        let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
        let py = |v: f64| top + plot_h - (v.clamp(y_min, y_max) - y_min) / (y_max - y_min) * plot_h;

        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            LEFT + plot_w / 2.0,
            top - 4.0,
            escape(&panel.title)
        );
        let y_ticks = if panel.log_y {
            let step = ((y_max - y_min) / 6.0).ceil().max(1.0);
            let mut t = Vec::new();
            let mut v = y_min;
            while v <= y_max + 1e-9 {
                t.push(v);
                v += step;
            }
            t
        } else {
            ticks(y_min, y_max, 6)
        };
        let y_step = if y_ticks.len() > 1 { y_ticks[1] - y_ticks[0] } else { 0.0 };
        for &v in &y_ticks {
            let y = py(v);
            let label = if panel.log_y { format!("1e{}", v as i64) } else { fmt_tick(v, y_step) };
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"##,
                LEFT + plot_w,
                LEFT - 6.0,
                y + 4.0
            );
        }
        let x_ticks = ticks(x_min, x_max, 8);
        let x_step = if x_ticks.len() > 1 { x_ticks[1] - x_ticks[0] } else { 0.0 };
        for &v in &x_ticks {
            let x = px(v);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                top + plot_h,
                top + plot_h + 14.0,
                fmt_tick(v, x_step)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            top + plot_h / 2.0,
            escape(&panel.y_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            top + plot_h + 30.0,
            escape(x_label)
        );
        for (i, se) in panel.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut pts = String::new();
            for (x, y) in thin(&se.x, &se.y) {
                let v = tf(y);
                if v.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", px(x), py(v));
                }
            }
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                pts.trim_end()
            );
            let ly = top + 12.0 + 16.0 * i as f64;
            let lx = LEFT + plot_w + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                lx + 22.0,
                lx + 28.0,
                ly + 4.0,
                escape(&se.label)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One gnuplot panel: title, log scale, and (name, 0-based CSV column) pairs.
pub type ScriptPanel<'a> = (&'a str, bool, Vec<(String, usize)>);

/// A gnuplot script plotting the named CSV columns against `t`.
pub fn gnuplot_script(csv: &str, output: &str, title: &str, panels: &[ScriptPanel]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# usage: gnuplot {}", output.replace(".svg", ".gp"));
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set terminal svg size 900,{} dynamic", 240 * panels.len().max(1) + 40);
    let _ = writeln!(s, "set output '{output}'");
    let _ = writeln!(s, "set multiplot layout {},1 title '{title}'", panels.len().max(1));
    let _ = writeln!(s, "set grid");
    let _ = writeln!(s, "set xlabel 't [s]'");
    for (panel_title, log, cols) in panels {
        let _ = writeln!(s, "set title '{panel_title}'");
        if *log {
            let _ = writeln!(s, "set logscale y");
            let _ = writeln!(s, "set format y '1e%T'");
        } else {
            let _ = writeln!(s, "unset logscale y");
            let _ = writeln!(s, "set format y '%g'");
        }
        let parts: Vec<String> = cols
            .iter()
            .map(|(name, col)| {
                let y = if *log { format!("(abs(${}))", col + 1) } else { (col + 1).to_string() };
                format!("'{csv}' every ::1 using 1:{y} with lines title '{name}'")
            })
            .collect();
        let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
    }
    let _ = writeln!(s, "unset multiplot");
    s
}
