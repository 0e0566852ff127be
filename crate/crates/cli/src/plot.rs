//! Self-contained SVG plots. No external assets, no timestamps, no
//! randomized iteration anywhere: the same inputs must produce the same
//! bytes, because plots are part of a run's reproducible record.
//!
//! Reflection maps render as a heatmap on a dB color scale with the field
//! axis in gauss and the frequency axis in MHz; dip tracks and model
//! curves draw on top as polylines. A second, simpler chart type covers
//! profile data (linewidth vs field, coupling vs position).

use std::fmt::Write as _;
use std::path::Path;

use rabifit::units::{db_to_linear, linear_to_db, rad_s_to_mhz, tesla_to_gauss};
use rabifit::{PowerScale, SpectrumMap};

use crate::{CliError, Result};

/// A curve drawn over a map, in internal units (tesla, rad/s).
pub struct Overlay {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// One series of an xy chart, already in presentation units.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub draw: Draw,
}

#[derive(Clone, Copy, PartialEq)]
pub enum Draw {
    Line,
    Points,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 72.0;
const TOP: f64 = 34.0;
const PLOT_W: f64 = 548.0;
const PLOT_H: f64 = 392.0;

/// Viridis control points; linear interpolation in between.
const COLORMAP: [(f64, [f64; 3]); 9] = [
    (0.0, [68.0, 1.0, 84.0]),
    (0.125, [71.0, 44.0, 122.0]),
    (0.25, [59.0, 81.0, 139.0]),
    (0.375, [44.0, 113.0, 142.0]),
    (0.5, [33.0, 144.0, 141.0]),
    (0.625, [39.0, 173.0, 129.0]),
    (0.75, [92.0, 200.0, 99.0]),
    (0.875, [170.0, 220.0, 50.0]),
    (1.0, [253.0, 231.0, 37.0]),
];

const OVERLAY_COLORS: [&str; 4] = ["#ff5252", "#ffb300", "#ff4081", "#eeeeee"];
const SERIES_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn color_at(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mut rgb = COLORMAP[COLORMAP.len() - 1].1;
    for pair in COLORMAP.windows(2) {
        let (t0, c0) = pair[0];
        let (t1, c1) = pair[1];
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            rgb = [
                c0[0] + f * (c1[0] - c0[0]),
                c0[1] + f * (c1[1] - c0[1]),
                c0[2] + f * (c1[2] - c0[2]),
            ];
            break;
        }
    }
    format!(
        "#{:02x}{:02x}{:02x}",
        rgb[0].round() as u8,
        rgb[1].round() as u8,
        rgb[2].round() as u8
    )
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    let mut s = format!("{v:.4}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x_px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_min) / (self.x_max - self.x_min) * PLOT_W
    }

    fn y_px(&self, y: f64) -> f64 {
        TOP + PLOT_H - (y - self.y_min) / (self.y_max - self.y_min) * PLOT_H
    }
}

fn svg_header(title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        px(LEFT + PLOT_W / 2.0),
        escape(title)
    );
    out
}

fn axes_and_ticks(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\"/>",
        px(LEFT),
        px(TOP),
        px(PLOT_W),
        px(PLOT_H)
    );
    for k in 0..5 {
        let f = k as f64 / 4.0;
        let xv = frame.x_min + f * (frame.x_max - frame.x_min);
        let xp = frame.x_px(xv);
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#333333\"/>",
            px(xp),
            px(TOP + PLOT_H),
            px(TOP + PLOT_H + 5.0)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            px(xp),
            px(TOP + PLOT_H + 20.0),
            tick_label(xv)
        );
        let yv = frame.y_min + f * (frame.y_max - frame.y_min);
        let yp = frame.y_px(yv);
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{2}\" x2=\"{1}\" y2=\"{2}\" stroke=\"#333333\"/>",
            px(LEFT - 5.0),
            px(LEFT),
            px(yp)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            px(LEFT - 8.0),
            px(yp + 4.0),
            tick_label(yv)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        px(LEFT + PLOT_W / 2.0),
        px(TOP + PLOT_H + 38.0),
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        px(TOP + PLOT_H / 2.0),
        px(TOP + PLOT_H / 2.0),
        escape(y_label)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a reflection map as a heatmap with optional overlay curves. An
/// empty overlay list gives a map-only plot. Large maps are block-averaged
/// in linear power down to a bounded number of cells first.
pub fn map_svg(map: &SpectrumMap, overlays: &[Overlay], title: &str, path: &Path) -> Result<()> {
    let n_f = map.n_fields();
    let n_w = map.n_frequencies();
    let blocks_x = n_f.min(160);
    let blocks_y = n_w.min(120);

    // Block means in linear power, then dB for display.
    let mut db = vec![0.0_f64; blocks_x * blocks_y];
    for bx in 0..blocks_x {
        let i0 = bx * n_f / blocks_x;
        let i1 = ((bx + 1) * n_f / blocks_x).max(i0 + 1);
        for by in 0..blocks_y {
            let j0 = by * n_w / blocks_y;
            let j1 = ((by + 1) * n_w / blocks_y).max(j0 + 1);
            let mut sum = 0.0;
            for i in i0..i1 {
                for j in j0..j1 {
                    let p = map.power[(i, j)];
                    sum += match map.scale {
                        PowerScale::Linear => p,
                        PowerScale::Db => db_to_linear(p),
                    };
                }
            }
            db[bx * blocks_y + by] = linear_to_db(sum / ((i1 - i0) * (j1 - j0)) as f64);
        }
    }
    let mut db_min = f64::INFINITY;
    let mut db_max = f64::NEG_INFINITY;
    for &v in &db {
        db_min = db_min.min(v);
        db_max = db_max.max(v);
    }
    if !(db_max > db_min) {
        db_min -= 1.0;
        db_max += 1.0;
    }

    let frame = Frame {
        x_min: tesla_to_gauss(map.field_axis[0]),
        x_max: tesla_to_gauss(map.field_axis[n_f - 1]),
        y_min: rad_s_to_mhz(map.frequency_axis[0]),
        y_max: rad_s_to_mhz(map.frequency_axis[n_w - 1]),
    };

    let mut out = svg_header(title);
    let bw = PLOT_W / blocks_x as f64;
    let bh = PLOT_H / blocks_y as f64;
    for bx in 0..blocks_x {
        for by in 0..blocks_y {
            let t = (db[bx * blocks_y + by] - db_min) / (db_max - db_min);
            let x = LEFT + bx as f64 * bw;
            // Frequency increases upward.
            let y = TOP + PLOT_H - (by + 1) as f64 * bh;
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
                px(x),
                px(y),
                px(bw + 0.08),
                px(bh + 0.08),
                color_at(t)
            );
        }
    }

    let _ = writeln!(
        out,
        "<clipPath id=\"plot\"><rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"/></clipPath>",
        px(LEFT),
        px(TOP),
        px(PLOT_W),
        px(PLOT_H)
    );
    let _ = writeln!(out, "<g clip-path=\"url(#plot)\">");
    for (k, overlay) in overlays.iter().enumerate() {
        if overlay.points.is_empty() {
            continue;
        }
        let color = OVERLAY_COLORS[k % OVERLAY_COLORS.len()];
        let mut points = String::new();
        for &(b, w) in &overlay.points {
            let _ = write!(
                points,
                "{},{} ",
                px(frame.x_px(tesla_to_gauss(b))),
                px(frame.y_px(rad_s_to_mhz(w)))
            );
        }
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
             stroke-dasharray=\"6 3\"/>",
            points.trim_end()
        );
    }
    let _ = writeln!(out, "</g>");
    for (k, overlay) in overlays.iter().enumerate() {
        let color = OVERLAY_COLORS[k % OVERLAY_COLORS.len()];
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            px(LEFT + 8.0),
            px(TOP + 16.0 + 16.0 * k as f64),
            escape(&overlay.label)
        );
    }

    // Color bar.
    let bar_x = LEFT + PLOT_W + 16.0;
    let steps = 24;
    let step_h = PLOT_H / steps as f64;
    for s in 0..steps {
        let t = (s as f64 + 0.5) / steps as f64;
        let y = TOP + PLOT_H - (s + 1) as f64 * step_h;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"14\" height=\"{}\" fill=\"{}\"/>",
            px(bar_x),
            px(y),
            px(step_h + 0.08),
            color_at(t)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\">{} dB</text>",
        px(bar_x + 18.0),
        px(TOP + 10.0),
        tick_label(db_max)
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\">{} dB</text>",
        px(bar_x + 18.0),
        px(TOP + PLOT_H),
        tick_label(db_min)
    );

    axes_and_ticks(&mut out, &frame, "field (G)", "frequency (MHz)");
    out.push_str("</svg>\n");
    std::fs::write(path, out).map_err(|e| CliError::write_failed(path, e))
}

/// Renders one or more xy series with automatic ranges.
pub fn xy_svg(
    series: &[Series],
    x_label: &str,
    y_label: &str,
    title: &str,
    path: &Path,
) -> Result<()> {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: &mut f64, hi: &mut f64| {
        let span = (*hi - *lo).abs();
        let margin = if span > 0.0 { 0.05 * span } else { 0.5 * lo.abs().max(1.0) };
        *lo -= margin;
        *hi += margin;
    };
    pad(&mut x_min, &mut x_max);
    pad(&mut y_min, &mut y_max);
    let frame = Frame {
        x_min,
        x_max,
        y_min,
        y_max,
    };

    let mut out = svg_header(title);
    for (k, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[k % SERIES_COLORS.len()];
        match s.draw {
            Draw::Line => {
                let mut points = String::new();
                for &(x, y) in &s.points {
                    let _ = write!(points, "{},{} ", px(frame.x_px(x)), px(frame.y_px(y)));
                }
                let _ = writeln!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                    points.trim_end()
                );
            }
            Draw::Points => {
                for &(x, y) in &s.points {
                    let _ = writeln!(
                        out,
                        "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>",
                        px(frame.x_px(x)),
                        px(frame.y_px(y))
                    );
                }
            }
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            px(LEFT + 8.0),
            px(TOP + 16.0 + 16.0 * k as f64),
            escape(&s.label)
        );
    }
    axes_and_ticks(&mut out, &frame, x_label, y_label);
    out.push_str("</svg>\n");
    std::fs::write(path, out).map_err(|e| CliError::write_failed(path, e))
}
