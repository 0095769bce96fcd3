use plotters::prelude::*;

use crate::error::{CliError, CliResult};

const SIZE: (u32, u32) = (640, 400);
const COLORS: [RGBColor; 5] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(85, 85, 85),
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    pub markers: bool,
}

impl Series {
    pub fn line(label: &str, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.to_string(), points, dashed: false, markers: false }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }

    pub fn with_markers(mut self) -> Self {
        self.markers = true;
        self
    }
}

fn plot_error<E: std::fmt::Debug>(e: E) -> CliError {
    CliError::Io(format!("plot rendering failed: {e:?}"))
}

/// Whole decades enclosing the positive values.
fn log_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.1, 1.0);
    }
    let (lo, hi) = (10f64.powf(lo.log10().floor()), 10f64.powf(hi.log10().ceil()));
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo * 10.0)
    }
}

fn linear_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    match (lo.is_finite(), hi > lo) {
        (false, _) => (0.0, 1.0),
        (true, false) => (lo - 0.5, lo + 0.5),
        (true, true) => (lo, hi),
    }
}

/// A static line chart with a logarithmic y axis; non-positive points are dropped.
pub fn log_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> CliResult<String> {
    let kept: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite() && *y > 0.0).collect())
        .collect();
    let (x0, x1) = linear_range(kept.iter().flatten().map(|p| p.0));
    let (y0, y1) = log_range(kept.iter().flatten().map(|p| p.1));

    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_error)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(64)
            .build_cartesian_2d(x0..x1, (y0..y1).log_scale())
            .map_err(plot_error)?;
        chart
            .configure_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .y_label_formatter(&|v| format!("{v:.0e}"))
            .draw()
            .map_err(plot_error)?;
        for (i, (s, pts)) in series.iter().zip(&kept).enumerate() {
            let color = COLORS[i % COLORS.len()];
            let style = color.stroke_width(2);
            let legend = move |(x, y): (i32, i32)| PathElement::new(vec![(x, y), (x + 20, y)], style);
            if s.dashed {
                chart
                    .draw_series(DashedLineSeries::new(pts.iter().copied(), 6, 4, style))
                    .map_err(plot_error)?
                    .label(s.label.as_str())
                    .legend(legend);
            } else {
                chart
                    .draw_series(LineSeries::new(pts.iter().copied(), style))
                    .map_err(plot_error)?
                    .label(s.label.as_str())
                    .legend(legend);
            }
            if s.markers {
                chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_error)?;
            }
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperRight)
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(plot_error)?;
        root.present().map_err(plot_error)?;
    }
    out.push('\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let s = Series::line("loss", vec![(0.0, 1.0), (1.0, 0.1), (2.0, 0.01), (3.0, 0.0)]);
        let svg = log_chart("a < b", "epoch", "loss", &[s.clone(), s.dashed().with_markers()]).unwrap();
        assert!(svg.trim_start().starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("1e-1") && svg.contains("1e0"));
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn ranges_cover_the_data() {
        assert_eq!(log_range([0.003, 0.2].into_iter()), (1e-3, 1.0));
        assert_eq!(log_range([1.0].into_iter()), (1.0, 10.0));
        assert_eq!(linear_range([2.0, 7.0].into_iter()), (2.0, 7.0));
        assert_eq!(linear_range(std::iter::empty()), (0.0, 1.0));
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = [Series::line("x", vec![(1.0, 2.0), (2.0, 0.5)])];
        assert_eq!(log_chart("t", "x", "y", &s).unwrap(), log_chart("t", "x", "y", &s).unwrap());
        assert!(log_chart("t", "x", "y", &[Series::line("none", vec![])]).unwrap().contains("</svg>"));
    }
}
