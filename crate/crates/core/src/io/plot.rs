//! Minimal deterministic SVG line charts with +/-1 SE error bars.

use crate::error::{Error, Result};
use crate::fitness::FitnessSeries;
use crate::metrics::MetricPoint;

/// Fixed palette; groups are colored in first-appearance order.
const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

#[derive(Clone, Debug)]
pub struct PlotStyle {
    pub width: u32,
    pub height: u32,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle {
            width: 640,
            height: 400,
            title: String::new(),
            x_label: "generation".into(),
            y_label: "value".into(),
        }
    }
}

impl PlotStyle {
    pub fn titled(title: &str, x_label: &str, y_label: &str) -> Self {
        PlotStyle {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..PlotStyle::default()
        }
    }
}

/// Renders one metric as a standalone SVG: one polyline per condition label,
/// circle markers, and vertical +/-1 SE error bars where the SE is positive.
/// Byte-identical output for identical inputs.
pub fn emit_plot_svg(points: &[MetricPoint], style: &PlotStyle) -> Result<String> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no series to plot".into()));
    }
    let mut groups: Vec<(&str, Vec<&MetricPoint>)> = Vec::new();
    for point in points {
        match groups.iter_mut().find(|(label, _)| *label == point.condition) {
            Some((_, members)) => members.push(point),
            None => groups.push((point.condition.as_str(), vec![point])),
        }
    }

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x_min = x_min.min(p.index as f64);
        x_max = x_max.max(p.index as f64);
        y_min = y_min.min(p.value - p.se);
        y_max = y_max.max(p.value + p.se);
    }
    if x_min == x_max {
        x_min -= 1.0;
        x_max += 1.0;
    }
    if y_min == y_max {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let y_pad = (y_max - y_min) * 0.05;
    y_min -= y_pad;
    y_max += y_pad;

    let (left, right, top, bottom) = (55.0, 15.0, 35.0, 45.0);
    let plot_w = style.width as f64 - left - right;
    let plot_h = style.height as f64 - top - bottom;
    let sx = move |x: f64| left + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = move |y: f64| top + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
        w = style.width,
        h = style.height
    ));
    if !style.title.is_empty() {
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"14\">{}</text>\n",
            left + plot_w / 2.0,
            style.title
        ));
    }
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{l:.2}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{l:.2}\" y1=\"{t:.2}\" x2=\"{l:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n",
        l = left,
        r = left + plot_w,
        t = top,
        b = top + plot_h
    ));
    // Extremal tick labels and axis names.
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
        left, top + plot_h + 14.0, fmt_tick(x_min)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
        left + plot_w, top + plot_h + 14.0, fmt_tick(x_max)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
        left - 4.0, top + plot_h, fmt_tick(y_min)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
        left - 4.0, top + 8.0, fmt_tick(y_max)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
        left + plot_w / 2.0,
        top + plot_h + 32.0,
        style.x_label
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{mid:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\" transform=\"rotate(-90 14 {mid:.2})\">{label}</text>\n",
        mid = top + plot_h / 2.0,
        label = style.y_label
    ));

    for (group_idx, (label, members)) in groups.iter().enumerate() {
        let color = PALETTE[group_idx % PALETTE.len()];
        if members.len() > 1 {
            let coords: Vec<String> = members
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.index as f64), sy(p.value)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                coords.join(" ")
            ));
        }
        for p in members.iter() {
            let x = sx(p.index as f64);
            if p.se > 0.0 {
                svg.push_str(&format!(
                    "<line class=\"errorbar\" x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
                     stroke=\"{color}\" stroke-width=\"1\"/>\n",
                    sy(p.value - p.se),
                    sy(p.value + p.se)
                ));
            }
            svg.push_str(&format!(
                "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>\n",
                sy(p.value)
            ));
        }
        // Legend entry.
        let ly = top + 6.0 + 14.0 * group_idx as f64;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>\n",
            left + plot_w - 90.0,
            ly,
            left + plot_w - 76.0,
            ly + 9.0
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn fmt_tick(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}")
    }
}

/// Flattens fitness trajectories into metric points keyed by their
/// parameterization label, for plotting.
pub fn fitness_series_points(series: &[FitnessSeries]) -> Vec<MetricPoint> {
    series
        .iter()
        .flat_map(|s| {
            s.mean_fitness
                .iter()
                .zip(&s.se_fitness)
                .enumerate()
                .map(move |(g, (&mean, &se))| MetricPoint {
                    condition: s.label.clone(),
                    metric: "mean_fitness".into(),
                    index: g as u32,
                    value: mean,
                    se,
                    n: 0,
                })
        })
        .collect()
}

/// As [`fitness_series_points`] but for the child-minus-parent deltas.
pub fn fitness_delta_points(series: &[FitnessSeries]) -> Vec<MetricPoint> {
    series
        .iter()
        .flat_map(|s| {
            s.mean_delta
                .iter()
                .zip(&s.se_delta)
                .enumerate()
                .map(move |(g, (&mean, &se))| MetricPoint {
                    condition: s.label.clone(),
                    metric: "mean_delta".into(),
                    index: g as u32 + 1,
                    value: mean,
                    se,
                    n: 0,
                })
        })
        .collect()
}
