//! SVG timelines drawn from a metrics CSV.

use {
	crate::{
		engine::MetricsRow,
		units::{Pid, MIB},
	},
	plotters::prelude::*,
	std::{
		collections::BTreeMap,
		path::{Path, PathBuf},
	},
};

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
	#[error("cannot read metrics from {path}: {source}")]
	Csv { path: PathBuf, source: csv::Error },

	#[error("drawing {path} failed: {reason}")]
	Draw { path: PathBuf, reason: String },
}

/// Loads rows written by the `run` command.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, PlotError> {
	let csv_err = |source| PlotError::Csv {
		path: path.to_owned(),
		source,
	};
	let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
	reader
		.deserialize()
		.collect::<Result<_, _>>()
		.map_err(csv_err)
}

/// One timeline per process.
type Series = BTreeMap<Pid, Vec<(f64, f64)>>;

fn series(rows: &[MetricsRow], value: impl Fn(&MetricsRow) -> f64) -> Series {
	let mut out = Series::new();
	for row in rows {
		out.entry(row.pid)
			.or_default()
			.push((row.epoch as f64, value(row)));
	}
	out
}

fn draw(path: &Path, title: &str, y_label: &str, data: &Series) -> Result<(), PlotError> {
	let fail = |e: &dyn std::fmt::Display| PlotError::Draw {
		path: path.to_owned(),
		reason: e.to_string(),
	};
	let points = data.values().flatten();
	let x_max = points.clone().map(|p| p.0).fold(1.0, f64::max);
	let y_max = points.map(|p| p.1).fold(0.0, f64::max).max(1e-9) * 1.05;

	let root = SVGBackend::new(path, (960, 540)).into_drawing_area();
	root.fill(&WHITE).map_err(|e| fail(&e))?;
	let mut chart = ChartBuilder::on(&root)
		.caption(title, ("sans-serif", 22))
		.margin(12)
		.x_label_area_size(40)
		.y_label_area_size(70)
		.build_cartesian_2d(0.0..x_max, 0.0..y_max)
		.map_err(|e| fail(&e))?;
	chart
		.configure_mesh()
		.x_desc("epoch")
		.y_desc(y_label)
		.draw()
		.map_err(|e| fail(&e))?;
	for (i, (pid, line)) in data.iter().enumerate() {
		let color = Palette99::pick(i).to_rgba();
		chart
			.draw_series(LineSeries::new(line.iter().copied(), color.stroke_width(2)))
			.map_err(|e| fail(&e))?
			.label(format!("pid {pid}"))
			.legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2)));
	}
	chart
		.configure_series_labels()
		.border_style(BLACK)
		.background_style(WHITE.mix(0.8))
		.draw()
		.map_err(|e| fail(&e))?;
	root.present().map_err(|e| fail(&e))?;
	Ok(())
}

/// Writes `fmmr.svg`, `throughput.svg` and `quota.svg` into `out_dir` and
/// returns their paths.
pub fn render(rows: &[MetricsRow], out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
	let charts: [(&str, &str, &str, Series); 3] = [
		(
			"fmmr.svg",
			"Smoothed fast-memory miss ratio",
			"FMMR",
			series(rows, |r| r.ewma_fmmr),
		),
		(
			"throughput.svg",
			"Throughput",
			"ops per epoch",
			series(rows, |r| r.ops_completed as f64),
		),
		(
			"quota.svg",
			"Fast-memory quota",
			"MiB",
			series(rows, |r| r.quota_bytes as f64 / MIB as f64),
		),
	];
	let mut written = Vec::new();
	for (file, title, y_label, data) in &charts {
		let path = out_dir.join(file);
		draw(&path, title, y_label, data)?;
		written.push(path);
	}
	Ok(written)
}

/// Reads `metrics_csv` and renders its timelines next to it in `out_dir`.
pub fn render_csv(metrics_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
	render(&read_metrics(metrics_csv)?, out_dir)
}
