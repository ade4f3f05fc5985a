//! Optional SVG figures. Failures are reported to the caller and never
//! affect the CSV outputs.

use std::path::Path;

use plotters::prelude::*;

use crate::calib::CalibrationReport;
use crate::experiment::TrainingResult;

type PlotResult = Result<(), Box<dyn std::error::Error>>;

/// Median and 15/85 band of the expected reward for both populations.
pub fn learning_curves(result: &TrainingResult, path: &Path) -> PlotResult {
    let steps = result.even_band.len().max(1);
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .caption("expected reward", ("sans-serif", 20))
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0usize..steps, 0.0f64..1.05)?;
    chart.configure_mesh().x_desc("step").y_desc("<R>").draw()?;
    for (bands, color, name) in [
        (&result.even_band, BLUE, "even"),
        (&result.odd_band, RED, "odd"),
    ] {
        let upper = bands.iter().enumerate().map(|(s, b)| (s, b.p85));
        let lower: Vec<(usize, f64)> = bands.iter().enumerate().map(|(s, b)| (s, b.p15)).collect();
        let band: Vec<(usize, f64)> = upper.chain(lower.into_iter().rev()).collect();
        chart.draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))?;
        chart
            .draw_series(LineSeries::new(
                bands.iter().enumerate().map(|(s, b)| (s, b.median)),
                color,
            ))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

/// Every signed weight over the logged steps.
pub fn weight_evolution(result: &TrainingResult, path: &Path) -> PlotResult {
    let last = result.weights.last().map_or(1, |(s, _)| *s).max(1);
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .caption("weights", ("sans-serif", 20))
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0usize..last, -64.0f64..64.0)?;
    chart.configure_mesh().x_desc("step").y_desc("w").draw()?;
    let n = result.weights.first().map_or(0, |(_, w)| w.len());
    for k in 0..n {
        let color = Palette99::pick(k).mix(0.6);
        chart.draw_series(LineSeries::new(
            result.weights.iter().map(|(s, w)| (*s, w[k])),
            color,
        ))?;
    }
    root.present()?;
    Ok(())
}

/// Offset histograms before and after calibration.
pub fn calibration_histogram(report: &CalibrationReport, path: &Path) -> PlotResult {
    let edges = &report.pre_hist.edges;
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let peak = report
        .pre_hist
        .counts
        .iter()
        .chain(&report.post_hist.counts)
        .copied()
        .max()
        .unwrap_or(1);
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .caption("driver offset", ("sans-serif", 20))
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(lo..hi, 0u64..peak + 1)?;
    chart
        .configure_mesh()
        .x_desc("offset")
        .y_desc("count")
        .draw()?;
    for (hist, color) in [
        (&report.pre_hist, RED.mix(0.4)),
        (&report.post_hist, BLUE.mix(0.6)),
    ] {
        chart.draw_series(hist.counts.iter().enumerate().map(|(k, &c)| {
            Rectangle::new([(hist.edges[k], 0), (hist.edges[k + 1], c)], color.filled())
        }))?;
    }
    root.present()?;
    Ok(())
}
