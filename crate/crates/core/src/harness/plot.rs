//! Static SVG line charts.
//!
//! Output depends only on the input values: coordinates are printed with a
//! fixed number of decimals and series are drawn in the order given.

use std::fmt::Write;
use std::path::Path;

use super::csvlog::Table;
use crate::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Trailing mean over up to `window` points; the first points average over
/// what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Which columns to draw, parsed from `x=episode;y=reward,ma100;window=100`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSpec {
    pub x: String,
    pub y: Vec<String>,
    pub window: usize,
    pub title: Option<String>,
}

impl std::str::FromStr for SeriesSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: String| Error::InvalidValue {
            field: "series spec",
            reason,
        };
        let (mut x, mut y, mut window, mut title) = (None, Vec::new(), 1, None);
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("`{part}` is not key=value")))?;
            match k.trim() {
                "x" => x = Some(v.trim().to_string()),
                "y" => y = v.split(',').map(|c| c.trim().to_string()).collect(),
                "window" => {
                    window = v
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("window `{v}` is not an integer")))?
                }
                "title" => title = Some(v.trim().to_string()),
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let x = x.ok_or_else(|| bad("missing x".into()))?;
        if y.is_empty() {
            return Err(bad("missing y".into()));
        }
        Ok(Self { x, y, window, title })
    }
}

/// A tick step of 1, 2 or 5 times a power of ten giving about `target` ticks.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let k = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    k * mag
}

fn decimals_for(step: f64) -> usize {
    if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    }
}

/// Axis range covering `lo..=hi`, widened when the data is constant.
pub fn axis_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if !x_lo.is_finite() {
        (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
    }
    let (x_lo, x_hi) = axis_range(x_lo, x_hi);
    let (y_lo, y_hi) = axis_range(y_lo, y_hi);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    for (lo, hi, horizontal) in [(x_lo, x_hi, true), (y_lo, y_hi, false)] {
        let step = nice_step(hi - lo, 5);
        let dec = decimals_for(step);
        let mut t = (lo / step).ceil() * step;
        while t <= hi + step * 1e-9 {
            let label = format!("{:.*}", dec, t + 0.0);
            if horizontal {
                let x = sx(t);
                let _ = writeln!(
                    svg,
                    r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
                    MARGIN_TOP,
                    MARGIN_TOP + plot_h,
                    MARGIN_TOP + plot_h + 16.0
                );
            } else {
                let y = sy(t);
                let _ = writeln!(
                    svg,
                    r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
                    MARGIN_LEFT,
                    MARGIN_LEFT + plot_w,
                    MARGIN_LEFT - 6.0,
                    y + 4.0
                );
            }
            t += step;
        }
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (j, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if j == 0 { "M" } else { " L" }, sx(x), sy(y));
        }
        let _ = writeln!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
        let ly = MARGIN_TOP + 14.0 + 16.0 * i as f64;
        let lx = MARGIN_LEFT + plot_w - 150.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0,
            lx + 26.0,
            escape(s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders the columns of `table` named by `spec`, smoothing each y column.
pub fn plot_table(table: &Table, spec: &SeriesSpec) -> Result<String> {
    let xs = table.column(&spec.x)?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for name in &spec.y {
        let ys = table.column(name)?;
        let pairs: Vec<(f64, f64)> = xs
            .iter()
            .zip(&ys)
            .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
            .collect();
        let smoothed = moving_average(&pairs.iter().map(|p| p.1).collect::<Vec<_>>(), spec.window);
        data.push(pairs.iter().map(|p| p.0).zip(smoothed).collect::<Vec<_>>());
        labels.push(if spec.window > 1 {
            format!("{name} (MA{})", spec.window)
        } else {
            name.clone()
        });
    }
    let series: Vec<Series> = labels
        .iter()
        .zip(data)
        .map(|(label, points)| Series { label, points })
        .collect();
    let title = spec.title.clone().unwrap_or_else(|| spec.y.join(", "));
    Ok(render_svg(&title, &spec.x, &spec.y.join(", "), &series))
}

pub fn emit_plot(csv_path: &Path, spec: &SeriesSpec, svg_path: &Path) -> Result<()> {
    let table = Table::read(csv_path)?;
    let svg = plot_table(&table, spec)?;
    std::fs::write(svg_path, svg).map_err(|e| Error::io(svg_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_becomes_a_ramp() {
        let mut v = vec![0.0; 200];
        v.extend(vec![1.0; 200]);
        let ma = moving_average(&v, 100);
        assert_eq!(ma[199], 0.0);
        assert!((ma[249] - 0.5).abs() < 1e-12);
        assert_eq!(ma[299], 1.0);
        for i in 200..299 {
            assert!(ma[i + 1] > ma[i]);
        }
    }

    #[test]
    fn constant_series_range_brackets_value() {
        let (lo, hi) = axis_range(500.0, 500.0);
        assert!(lo < 500.0 && hi > 500.0);
        let (lo, hi) = axis_range(0.0, 0.0);
        assert!(lo < 0.0 && hi > 0.0);
    }

    #[test]
    fn spec_parsing() {
        let s: SeriesSpec = "x=episode; y=reward,ma100; window=100".parse().unwrap();
        assert_eq!(s.x, "episode");
        assert_eq!(s.y, vec!["reward", "ma100"]);
        assert_eq!(s.window, 100);
        assert!("y=reward".parse::<SeriesSpec>().is_err());
        assert!("x=a;y=b;window=z".parse::<SeriesSpec>().is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = Table::parse("#schema=x\nepisode,reward\n0,10\n1,20\n2,15\n").unwrap();
        let spec: SeriesSpec = "x=episode;y=reward;window=2".parse().unwrap();
        let a = plot_table(&t, &spec).unwrap();
        assert_eq!(a, plot_table(&t, &spec).unwrap());
        assert!(a.starts_with("<svg") && a.contains("reward (MA2)"));
        let missing: SeriesSpec = "x=episode;y=nope".parse().unwrap();
        assert!(matches!(plot_table(&t, &missing), Err(Error::MissingColumn(_))));
    }
}
