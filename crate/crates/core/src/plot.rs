//! Minimal self-contained SVG line plots with a log-scale y axis.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    Empty(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineStyle {
    Solid,
    Dashed,
    Dotted,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    /// `(x, y)` pairs; `y` must be positive to appear on the log axis.
    pub points: Vec<(f64, f64)>,
    pub style: LineStyle,
    pub color: Option<String>,
    /// `x` positions that get a round marker (identification points).
    pub markers: Vec<f64>,
}

impl Series {
    pub fn solid(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            style: LineStyle::Solid,
            color: None,
            markers: Vec::new(),
        }
    }

    pub fn dashed(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            style: LineStyle::Dashed,
            ..Self::solid(label, points)
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const MARKER_COLOR: &str = "#10a010";

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the series to an SVG string. Points with `y <= 0` or non-finite
/// coordinates are dropped with a warning.
pub fn render_svg(title: &str, x_label: &str, series: &[Series]) -> Result<String, PlotError> {
    if series.is_empty() {
        return Err(PlotError::Empty("no series".into()));
    }
    let mut cleaned: Vec<Vec<(f64, f64)>> = Vec::with_capacity(series.len());
    for s in series {
        let kept: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && *y > 0.0)
            .collect();
        if kept.len() < s.points.len() {
            log::warn!(
                "series {}: dropped {} non-positive or non-finite points from the log plot",
                s.label,
                s.points.len() - kept.len()
            );
        }
        cleaned.push(kept);
    }
    let all = cleaned.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if !x0.is_finite() {
        return Err(PlotError::Empty("no plottable points".into()));
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y.log10()) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        esc(title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    // decade grid
    let mut e = y0 as i32;
    while e as f64 <= y1 {
        let y = sy(10f64.powi(e));
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.1}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
        e += 1;
    }
    for i in 0..=5 {
        let xv = x0 + (x1 - x0) * i as f64 / 5.0;
        let x = sx(xv);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            xv.round()
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        esc(x_label)
    );

    for (i, (s, pts)) in series.iter().zip(&cleaned).enumerate() {
        let color = s.color.clone().unwrap_or_else(|| PALETTE[i % PALETTE.len()].to_string());
        let dash = match s.style {
            LineStyle::Solid => "",
            LineStyle::Dashed => r#" stroke-dasharray="6 4""#,
            LineStyle::Dotted => r#" stroke-dasharray="2 3""#,
        };
        if !pts.is_empty() {
            let mut path = String::new();
            for (x, y) in pts {
                let _ = write!(path, "{:.2},{:.2} ", sx(*x), sy(*y));
            }
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                path.trim_end()
            );
        }
        for m in &s.markers {
            // marker sits on the series at the nearest recorded x
            if let Some((x, y)) = pts
                .iter()
                .min_by(|a, b| (a.0 - m).abs().total_cmp(&(b.0 - m).abs()))
            {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{MARKER_COLOR}"/>"#,
                    sx(*x),
                    sy(*y)
                );
            }
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="1.5"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            esc(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_plot(title: &str, x_label: &str, series: &[Series], path: &Path) -> Result<(), PlotError> {
    let svg = render_svg(title, x_label, series)?;
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_series_has_one_polyline_and_its_extents() {
        let pts: Vec<(f64, f64)> = (0..100).map(|k| (k as f64, 0.9f64.powi(k))).collect();
        let svg = render_svg("t", "k", &[Series::solid("FB", pts)]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        // y spans 0.9^99 ~ 3e-5 up to 1, so decades 1e-5 .. 1e0
        assert!(svg.contains(">1e-5<") && svg.contains(">1e0<"));
        assert!(!svg.contains(">1e-6<") && !svg.contains(">1e1<"));
        assert!(svg.contains(">99<"));
    }

    #[test]
    fn zero_values_are_dropped() {
        let pts = vec![(0.0, 1.0), (1.0, 0.0), (2.0, 0.01)];
        let svg = render_svg("t", "k", &[Series::solid("a", pts)]).unwrap();
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let n = line.split("points=\"").nth(1).unwrap().split_whitespace().count();
        assert_eq!(n, 2);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(render_svg("t", "k", &[]), Err(PlotError::Empty(_))));
        let only_zero = Series::solid("z", vec![(0.0, 0.0)]);
        assert!(render_svg("t", "k", &[only_zero]).is_err());
    }

    #[test]
    fn markers_and_dashes() {
        let mut s = Series::solid("a", vec![(0.0, 1.0), (5.0, 0.1), (10.0, 0.01)]);
        s.markers = vec![5.0];
        let d = Series::dashed("a (T)", vec![(5.0, 0.1), (10.0, 0.01)]);
        let svg = render_svg("t", "k", &[s, d]).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.contains("stroke-dasharray"));
    }
}
