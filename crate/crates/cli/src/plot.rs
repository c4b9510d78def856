//! Standalone SVG figures.

use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
    pub color: RGBColor,
    /// Draw markers instead of a line.
    pub markers: bool,
}

impl<'a> Series<'a> {
    pub fn line(label: &'a str, points: Vec<(f64, f64)>, color: RGBColor) -> Self {
        Series { label, points, color, markers: false }
    }

    pub fn dots(label: &'a str, points: Vec<(f64, f64)>, color: RGBColor) -> Self {
        Series { label, points, color, markers: true }
    }
}

pub struct Figure<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
    /// Vertical error bars as (x, y, σ).
    pub errors: Vec<(f64, f64, f64)>,
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

pub fn write(path: &Path, fig: &Figure) -> Result<()> {
    let xs = fig.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x0, x1) = bounds(xs.chain(fig.errors.iter().map(|e| e.0)));
    let ys = fig.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (y0, y1) = bounds(
        ys.chain(fig.errors.iter().map(|e| e.1 - e.2))
            .chain(fig.errors.iter().map(|e| e.1 + e.2)),
    );
    let pad = 0.05 * (y1 - y0);

    let root = SVGBackend::new(path, (900, 560)).into_drawing_area();
    let err = |e: &dyn std::fmt::Display| anyhow!("plot {}: {e}", path.display());
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(fig.title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc(fig.x_label)
        .y_desc(fig.y_label)
        .light_line_style(WHITE)
        .draw()
        .map_err(|e| err(&e))?;

    for s in &fig.series {
        let color = s.color;
        let drawn = if s.markers {
            chart.draw_series(
                s.points
                    .iter()
                    .map(move |&p| Circle::new(p, 3, color.filled())),
            )
        } else {
            chart.draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(1)))
        }
        .map_err(|e| err(&e))?;
        if !s.label.is_empty() {
            drawn
                .label(s.label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        }
    }
    if !fig.errors.is_empty() {
        chart
            .draw_series(fig.errors.iter().map(|&(x, y, e)| {
                ErrorBar::new_vertical(x, y - e, y, y + e, BLACK.stroke_width(1), 6)
            }))
            .map_err(|e| err(&e))?;
    }
    if fig.series.iter().any(|s| !s.label.is_empty()) {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(|e| err(&e))?;
    }
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

pub const BLUE_: RGBColor = RGBColor(31, 119, 180);
pub const RED_: RGBColor = RGBColor(214, 39, 40);
