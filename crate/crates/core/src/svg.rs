//! Minimal SVG plots: lines, scatter points with error bars, linear or
//! log–log axes.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(x, y, y_error)`; error 0 draws no bar.
    pub points: Vec<(f64, f64, f64)>,
    pub line: bool,
}

impl Series {
    pub fn line(label: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points: points.into_iter().map(|(x, y)| (x, y, 0.0)).collect(),
            line: true,
        }
    }

    pub fn scatter(label: &str, points: Vec<(f64, f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            line: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            let v = if log {
                if v > 0.0 {
                    v.log10()
                } else {
                    continue;
                }
            } else {
                v
            };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            log,
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    /// Position in `[0, 1]`, or `None` if not representable.
    fn unit(&self, v: f64) -> Option<f64> {
        let v = if self.log {
            if v > 0.0 {
                v.log10()
            } else {
                return None;
            }
        } else {
            v
        };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            return (a..=b).map(|e| (10f64.powi(e), format!("1e{e}"))).collect();
        }
        let span = self.hi - self.lo;
        let raw = span / 6.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(raw);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-12 * span {
            out.push((t, format!("{}", (t / step).round() * step)));
            t += step;
        }
        out
    }
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
        }
    }

    pub fn log_log(mut self) -> Self {
        self.log_x = true;
        self.log_y = true;
        self
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn render(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let xa = Axis::fit(all().map(|p| p.0), self.log_x);
        let ya = Axis::fit(
            all().flat_map(|p| [p.1 - p.2, p.1 + p.2]).chain(all().map(|p| p.1)),
            self.log_y,
        );
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |x: f64| xa.unit(x).map(|u| LEFT + u * pw);
        let py = |y: f64| ya.unit(y).map(|u| TOP + (1.0 - u) * ph);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for (v, label) in xa.ticks() {
            if let Some(x) = px(v) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
                    TOP + ph,
                    TOP + ph + 5.0,
                    TOP + ph + 18.0
                );
            }
        }
        for (v, label) in ya.ticks() {
            if let Some(y) = py(v) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#,
                    LEFT - 5.0,
                    LEFT - 8.0,
                    y + 4.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, series) in self.series.iter().enumerate() {
            let c = COLORS[k % COLORS.len()];
            let pts: Vec<(f64, f64)> = series
                .points
                .iter()
                .filter_map(|p| Some((px(p.0)?, py(p.1)?)))
                .collect();
            if series.line && pts.len() > 1 {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
                    path.join(" ")
                );
            }
            if !series.line {
                for p in &series.points {
                    let (Some(x), Some(y)) = (px(p.0), py(p.1)) else { continue };
                    if p.2 > 0.0 {
                        let lo = py(p.1 - p.2).unwrap_or(TOP + ph);
                        let hi = py(p.1 + p.2).unwrap_or(TOP);
                        let _ = writeln!(
                            s,
                            r#"<line x1="{x:.1}" y1="{lo:.1}" x2="{x:.1}" y2="{hi:.1}" stroke="{c}"/>"#
                        );
                    }
                    let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{c}"/>"#);
                }
            }
            let ly = TOP + 14.0 + 16.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{c}"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
                LEFT + 10.0,
                ly - 9.0,
                LEFT + 26.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let p = Plot::new("t <1>", "x", "y")
            .log_log()
            .with(Series::line("a", vec![(0.1, 1.0), (1.0, 10.0)]))
            .with(Series::scatter("b", vec![(0.5, 2.0, 0.5), (0.0, 1.0, 0.0)]));
        let svg = p.render();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(svg.contains("<polyline"));
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.contains(">1e0<"));
    }

    #[test]
    fn linear_ticks_cover_range() {
        let a = Axis::fit([0.0, 1.0].into_iter(), false);
        let t = a.ticks();
        assert!(t.len() >= 4);
        assert!(t.iter().all(|(v, _)| *v >= a.lo && *v <= a.hi));
    }

    #[test]
    fn empty_plot_renders() {
        assert!(Plot::new("e", "x", "y").render().contains("</svg>"));
    }
}
