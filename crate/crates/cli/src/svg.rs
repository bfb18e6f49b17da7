//! Minimal SVG line plots: polylines, a shaded band, and point markers on
//! a fixed canvas with labeled axes. Every figure command also writes the
//! numbers as CSV, so this only has to be legible, not beautiful.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 48.0;

pub struct Series<'a> {
    pub points: &'a [(f64, f64)],
    pub color: &'a str,
    pub label: &'a str,
}

pub struct Plot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    /// Optional shaded region: (x, lower, upper) triples.
    pub band: Option<&'a [(f64, f64, f64)]>,
    pub series: Vec<Series<'a>>,
    /// Discrete markers (small circles).
    pub markers: &'a [(f64, f64)],
}

struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn grow(&mut self, v: f64) {
        if v.is_finite() {
            self.lo = self.lo.min(v);
            self.hi = self.hi.max(v);
        }
    }

    fn pad(mut self) -> Self {
        if self.lo > self.hi {
            self.lo = 0.0;
            self.hi = 1.0;
        }
        let span = (self.hi - self.lo).max(1e-9);
        self.lo -= 0.05 * span;
        self.hi += 0.05 * span;
        self
    }
}

fn data_ranges(plot: &Plot<'_>) -> (Range, Range) {
    let mut xr = Range {
        lo: f64::INFINITY,
        hi: f64::NEG_INFINITY,
    };
    let mut yr = Range {
        lo: f64::INFINITY,
        hi: f64::NEG_INFINITY,
    };
    if let Some(band) = plot.band {
        for &(x, lo, hi) in band {
            xr.grow(x);
            yr.grow(lo);
            yr.grow(hi);
        }
    }
    for s in &plot.series {
        for &(x, y) in s.points {
            xr.grow(x);
            yr.grow(y);
        }
    }
    for &(x, y) in plot.markers {
        xr.grow(x);
        yr.grow(y);
    }
    (xr.pad(), yr.pad())
}

/// Renders the plot to an SVG document string.
pub fn render(plot: &Plot<'_>) -> String {
    let (xr, yr) = data_ranges(plot);
    let px = |x: f64| MARGIN_L + (x - xr.lo) / (xr.hi - xr.lo) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - yr.lo) / (yr.hi - yr.lo) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"20\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(plot.title)
    );

    // Axes with min/max tick labels.
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = writeln!(
        svg,
        "<path d=\"M {x0:.1} {y1:.1} L {x0:.1} {y0:.1} L {x1:.1} {y0:.1}\" stroke=\"black\" fill=\"none\" stroke-width=\"1\"/>"
    );
    for (frac, value) in [(0.0, xr.lo), (0.5, (xr.lo + xr.hi) / 2.0), (1.0, xr.hi)] {
        let x = x0 + frac * (x1 - x0);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{y0:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            y0 + 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            y0 + 17.0,
            format_tick(value)
        );
    }
    for (frac, value) in [(0.0, yr.lo), (0.5, (yr.lo + yr.hi) / 2.0), (1.0, yr.hi)] {
        let y = y0 + frac * (y1 - y0);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{x0:.1}\" y2=\"{y:.1}\" stroke=\"black\"/>",
            x0 - 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            x0 - 7.0,
            y + 4.0,
            format_tick(value)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 10.0,
        escape(plot.x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(plot.y_label)
    );

    if let Some(band) = plot.band {
        if band.len() >= 2 {
            let mut d = String::new();
            for (i, &(x, lo, _)) in band.iter().enumerate() {
                let cmd = if i == 0 { 'M' } else { 'L' };
                let _ = write!(d, "{cmd} {:.2} {:.2} ", px(x), py(lo));
            }
            for &(x, _, hi) in band.iter().rev() {
                let _ = write!(d, "L {:.2} {:.2} ", px(x), py(hi));
            }
            let _ = writeln!(
                svg,
                "<path d=\"{}Z\" fill=\"#9ecae1\" fill-opacity=\"0.45\" stroke=\"none\"/>",
                d
            );
        }
    }

    for s in &plot.series {
        if s.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>",
            pts.join(" "),
            s.color
        );
    }

    for &(x, y) in plot.markers {
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#d62728\" stroke=\"black\" stroke-width=\"0.7\"/>",
            px(x),
            py(y)
        );
    }

    // Legend in the top-right corner.
    let mut ly = MARGIN_T + 14.0;
    for s in &plot.series {
        if s.label.is_empty() {
            continue;
        }
        let lx = WIDTH - MARGIN_R - 150.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"2\"/>",
            lx + 22.0,
            s.color
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            lx + 28.0,
            ly + 4.0,
            escape(s.label)
        );
        ly += 16.0;
    }

    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_band_series_and_markers() {
        let band = [(0.0, -1.0, 1.0), (1.0, -0.5, 0.5)];
        let mean = [(0.0, 0.0), (1.0, 0.0)];
        let plot = Plot {
            title: "demo",
            x_label: "x",
            y_label: "y",
            band: Some(&band),
            series: vec![Series {
                points: &mean,
                color: "#1f77b4",
                label: "mean",
            }],
            markers: &[(0.5, 0.2)],
        };
        let svg = render(&plot);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("circle"));
        assert!(svg.contains("fill-opacity"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn degenerate_ranges_still_render() {
        let flat = [(2.0, 3.0), (2.0, 3.0)];
        let plot = Plot {
            title: "flat",
            x_label: "x",
            y_label: "y",
            band: None,
            series: vec![Series {
                points: &flat,
                color: "black",
                label: "",
            }],
            markers: &[],
        };
        let svg = render(&plot);
        assert!(svg.contains("polyline"));
        assert!(!svg.contains("NaN"));
    }
}
