//! SVG rendering of training metrics and evaluation summaries.

use std::path::Path;

use anyhow::{anyhow, Context};
use plotters::prelude::*;
use serde::Deserialize;

use crate::usage;

pub const LEARNING_CURVE_FILE: &str = "learning_curve.svg";
pub const SUMMARY_PLOT_FILE: &str = "summary.svg";

#[derive(Debug, Deserialize)]
struct CurvePoint {
    step: u64,
    episodic_return_mean: f64,
    agreement_rate: f64,
}

#[derive(Debug, Deserialize)]
struct SummaryRow {
    opponent: String,
    mean_self: f64,
    ci99_self: f64,
    mean_opp: f64,
    ci99_opp: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("malformed {}", path.display()))?;
    if rows.is_empty() {
        return Err(usage(format!("{} has no rows to plot", path.display())));
    }
    Ok(rows)
}

fn draw_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("rendering failed: {e:?}")
}

/// Episodic return and agreement rate against environment steps.
pub fn learning_curve(metrics: &Path, out: &Path) -> anyhow::Result<()> {
    let rows: Vec<CurvePoint> = read_rows(metrics)?;
    let max_step = rows.last().map_or(1, |r| r.step.max(1));
    let root = SVGBackend::new(out, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Training", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0u64..max_step, 0f64..1.05)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("environment steps")
        .y_desc("mean over batch")
        .draw()
        .map_err(draw_err)?;
    let series = [
        ("episodic return", BLUE, rows.iter().map(|r| (r.step, r.episodic_return_mean)).collect::<Vec<_>>()),
        ("agreement rate", RED, rows.iter().map(|r| (r.step, r.agreement_rate)).collect()),
    ];
    for (label, color, points) in series {
        chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(draw_err)?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Mean utility per opponent for both sides, with confidence intervals.
pub fn summary(summary: &Path, out: &Path) -> anyhow::Result<()> {
    let rows: Vec<SummaryRow> = read_rows(summary)?;
    let n = rows.len();
    let root = SVGBackend::new(out, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Evaluation", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..n as f64, 0f64..1.05)
        .map_err(draw_err)?;
    let names: Vec<String> = rows.iter().map(|r| r.opponent.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 && i < names.len() {
                names[i].clone()
            } else {
                String::new()
            }
        })
        .y_desc("mean utility")
        .draw()
        .map_err(draw_err)?;
    for (offset, label, color, pick) in [
        (0.1, "learner", BLUE, (|r: &SummaryRow| (r.mean_self, r.ci99_self)) as fn(&SummaryRow) -> (f64, f64)),
        (0.5, "opponent", RED, |r: &SummaryRow| (r.mean_opp, r.ci99_opp)),
    ] {
        let bars = rows.iter().enumerate().map(move |(i, r)| {
            let (mean, _) = pick(r);
            let x0 = i as f64 + offset;
            Rectangle::new([(x0, 0.0), (x0 + 0.4, mean)], color.mix(0.7).filled())
        });
        chart
            .draw_series(bars)
            .map_err(draw_err)?
            .label(label)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 15, y + 5)], color.filled()));
        // a NaN interval (single seed) draws no whisker
        let whiskers = rows.iter().enumerate().filter_map(move |(i, r)| {
            let (mean, ci) = pick(r);
            let x = i as f64 + offset + 0.2;
            ci.is_finite()
                .then(|| PathElement::new(vec![(x, (mean - ci).max(0.0)), (x, (mean + ci).min(1.05))], BLACK))
        });
        chart.draw_series(whiskers).map_err(draw_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_both_plots() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = dir.path().join("metrics.csv");
        std::fs::write(
            &metrics,
            "step,episodic_return_mean,agreement_rate,policy_loss,value_loss,entropy,clip_frac,lr\n\
             100,0.4,0.8,0,0,1,0,0.001\n200,0.6,0.9,0,0,1,0,0.0005\n",
        )
        .unwrap();
        let out = dir.path().join("curve.svg");
        learning_curve(&metrics, &out).unwrap();
        assert!(std::fs::read_to_string(&out).unwrap().contains("<svg"));

        let summary_csv = dir.path().join("summary.csv");
        std::fs::write(
            &summary_csv,
            "opponent,mean_self,ci99_self,mean_opp,ci99_opp\nboulware,0.7,0.05,0.6,0.04\nrandom,0.8,NaN,0.3,NaN\n",
        )
        .unwrap();
        let out = dir.path().join("summary.svg");
        summary(&summary_csv, &out).unwrap();
        assert!(std::fs::read_to_string(&out).unwrap().contains("boulware"));
    }

    #[test]
    fn header_only_metrics_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = dir.path().join("metrics.csv");
        std::fs::write(&metrics, "step,episodic_return_mean,agreement_rate\n").unwrap();
        let err = learning_curve(&metrics, &dir.path().join("x.svg")).unwrap_err();
        assert_eq!(crate::exit_code(&err), crate::EXIT_USAGE);
    }
}
