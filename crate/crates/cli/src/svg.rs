//! Deterministic SVG line chart of mean Chamfer distance against
//! deformation level, with one-standard-deviation whiskers.

use std::fmt::Write;

use cpdnet_core::report::{RegistrationReport, Stat};
use cpdnet_core::synth::NoiseKind;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PRE_COLOR: &str = "#1f77b4";
const POST_COLORS: [&str; 5] = ["#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One plotted line: `(level, stat)` points sorted by level.
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, Stat)>,
}

/// Pre-registration line from the first report, then one post line per report.
/// Only noise-free cells are plotted.
pub fn series_from_reports(reports: &[(String, RegistrationReport)]) -> Vec<Series> {
    let clean = |r: &RegistrationReport| {
        let mut cells: Vec<_> = r.cells().into_iter().filter(|c| c.noise_kind == NoiseKind::None).collect();
        cells.sort_by(|a, b| a.level.partial_cmp(&b.level).unwrap());
        cells
    };
    let mut out = Vec::new();
    if let Some((_, first)) = reports.first() {
        out.push(Series {
            label: "pre".into(),
            color: PRE_COLOR,
            points: clean(first).iter().map(|c| (c.level, c.pre_cd)).collect(),
        });
    }
    for (k, (name, r)) in reports.iter().enumerate() {
        out.push(Series {
            label: format!("post ({name})"),
            color: POST_COLORS[k % POST_COLORS.len()],
            points: clean(r).iter().map(|c| (c.level, c.post_cd)).collect(),
        });
    }
    out
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    (0..=count).map(|i| lo + (hi - lo) * i as f64 / count as f64).collect()
}

pub fn render(series: &[Series], title: &str) -> String {
    let all: Vec<&(f64, Stat)> = series.iter().flat_map(|s| &s.points).collect();
    let (mut x_lo, mut x_hi) =
        all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if all.is_empty() {
        (x_lo, x_hi) = (0.0, 1.0);
    } else if x_hi == x_lo {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    let y_hi = all.iter().map(|p| p.1.mean + p.1.std).fold(0.0, f64::max);
    let y_hi = if y_hi > 0.0 { y_hi * 1.1 } else { 1.0 };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + plot_h - (y.max(0.0) / y_hi) * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    )
    .unwrap();
    // axes
    writeln!(
        s,
        r#"<path d="M{LEFT:.1},{TOP:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w
    )
    .unwrap();
    for t in nice_ticks(0.0, y_hi, 5) {
        let y = sy(t);
        writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT:.1}" y2="{y:.1}" stroke="black"/>"#, LEFT - 4.0).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.4}</text>"#, LEFT - 6.0, y + 4.0).unwrap();
    }
    let mut xs: Vec<f64> = all.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    for x in xs {
        let px = sx(x);
        writeln!(
            s,
            r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#,
            TOP + plot_h,
            TOP + plot_h + 4.0
        )
        .unwrap();
        writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, TOP + plot_h + 18.0).unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">deformation level</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">Chamfer distance per point</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )
    .unwrap();

    for (k, ser) in series.iter().enumerate() {
        if ser.points.is_empty() {
            continue;
        }
        let path: Vec<String> = ser.points.iter().map(|(x, st)| format!("{:.1},{:.1}", sx(*x), sy(st.mean))).collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, path.join(" "), ser.color)
            .unwrap();
        for (x, st) in &ser.points {
            let (px, lo, hi) = (sx(*x), sy(st.mean - st.std), sy(st.mean + st.std));
            writeln!(s, r#"<line x1="{px:.1}" y1="{lo:.1}" x2="{px:.1}" y2="{hi:.1}" stroke="{}"/>"#, ser.color)
                .unwrap();
            for y in [lo, hi] {
                writeln!(
                    s,
                    r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}"/>"#,
                    px - 4.0,
                    px + 4.0,
                    ser.color
                )
                .unwrap();
            }
            writeln!(s, r#"<circle cx="{px:.1}" cy="{:.1}" r="3" fill="{}"/>"#, sy(st.mean), ser.color).unwrap();
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"/>"#,
            lx + 20.0,
            ser.color
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.label)).unwrap();
    }
    if all.is_empty() {
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">no noise-free level cells</text>"#,
            LEFT + plot_w / 2.0,
            TOP + plot_h / 2.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
