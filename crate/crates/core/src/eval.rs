//! RMSE reports and plot exports (CSV + SVG).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storm_data::GridSpec;
use crate::tensor::Tensor;

pub fn rmse(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "rmse operands differ in shape: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let ss: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorScores {
    pub name: String,
    /// One entry per test storm.
    pub rmse: Vec<f64>,
}

impl EmulatorScores {
    pub fn mean(&self) -> f64 {
        self.rmse.iter().sum::<f64>() / self.rmse.len() as f64
    }
}

/// Per-storm test RMSE for each emulator: emulators as rows, test storms as
/// columns, then the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Dataset ids of the test storms, in column order.
    pub storms: Vec<usize>,
    pub emulators: Vec<EmulatorScores>,
    /// Files written alongside the report, relative to its directory.
    pub artifacts: Vec<String>,
}

impl EvalReport {
    pub fn scores(&self, name: &str) -> Option<&EmulatorScores> {
        self.emulators.iter().find(|e| e.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut head = vec!["Emulator".to_string()];
        head.extend((1..=self.storms.len()).map(|i| format!("Test {i}")));
        head.push("Mean".into());
        let mut rows = vec![head];
        for e in &self.emulators {
            let mut r = vec![e.name.clone()];
            r.extend(e.rmse.iter().map(|v| format!("{v:.3e}")));
            r.push(format!("{:.3e}", e.mean()));
            rows.push(r);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::from("RMSE of test storms (m)\n");
        for (i, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("-+-"));
                out.push('\n');
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("emulator");
        for i in 1..=self.storms.len() {
            write!(out, ",test_{i}").unwrap();
        }
        out.push_str(",mean\n");
        out.push_str("storm_id");
        for id in &self.storms {
            write!(out, ",{id}").unwrap();
        }
        out.push_str(",\n");
        for e in &self.emulators {
            out.push_str(&e.name);
            for v in &e.rmse {
                write!(out, ",{v:.16e}").unwrap();
            }
            writeln!(out, ",{:.16e}", e.mean()).unwrap();
        }
        out
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Linear map from data range to a pixel range.
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const M: f64 = 50.0;

fn svg_frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, x: &Axis, y: &Axis) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="25" text-anchor="middle" font-size="14">{title}</text>"#,
        W / 2.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#,
        W / 2.0,
        H - 12.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    )
    .unwrap();
    for (v, px) in [(x.lo, x.px_lo), (x.hi, x.px_hi)] {
        writeln!(
            out,
            r#"<text x="{px:.2}" y="{}" text-anchor="middle" font-size="10">{v:.3}</text>"#,
            H - M + 14.0
        )
        .unwrap();
    }
    for (v, px) in [(y.lo, y.px_lo), (y.hi, y.px_hi)] {
        writeln!(
            out,
            r#"<text x="{}" y="{px:.2}" text-anchor="end" font-size="10">{v:.3}</text>"#,
            M - 4.0
        )
        .unwrap();
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Writes `<stem>.csv` with one `truth,prediction` row per element and
/// `<stem>.svg`, a scatter plot with the `y = x` line.
pub fn export_scatter(pred: &Tensor, truth: &Tensor, stem: &Path, title: &str) -> Result<Vec<PathBuf>> {
    if pred.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "scatter operands differ in shape: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let mut csv = String::from("truth,prediction\n");
    for (t, p) in truth.data().iter().zip(pred.data()) {
        writeln!(csv, "{t:.16e},{p:.16e}").unwrap();
    }
    let (lo, hi) = range(truth.data().iter().chain(pred.data()).copied());
    let x = Axis::new(lo, hi, M, W - M);
    let y = Axis::new(lo, hi, H - M, M);
    let mut svg = String::new();
    svg_frame(&mut svg, title, "true surge (m)", "predicted surge (m)", &x, &y);
    writeln!(
        svg,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
        x.map(x.lo),
        y.map(y.lo),
        x.map(x.hi),
        y.map(y.hi)
    )
    .unwrap();
    for (t, p) in truth.data().iter().zip(pred.data()) {
        writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="steelblue"/>"#,
            x.map(*t),
            y.map(*p)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    let (csv_path, svg_path) = (with_ext(stem, "csv"), with_ext(stem, "svg"));
    write(&csv_path, &csv)?;
    write(&svg_path, &svg)?;
    Ok(vec![csv_path, svg_path])
}

/// Save points in the front, middle and back rows (`0`, `grid_h/2`,
/// `grid_h − 1`) at `column`.
pub fn layer_save_points(grid: &GridSpec, column: usize) -> Result<[(&'static str, usize); 3]> {
    Ok([
        ("front", grid.sp_index(0, column)?),
        ("middle", grid.sp_index(grid.grid_h / 2, column)?),
        ("back", grid.sp_index(grid.grid_h - 1, column)?),
    ])
}

/// Writes `<stem>.csv` (`step,truth,crnn_pred,gp_pred`) and a line plot
/// `<stem>.svg` for save point `sp`. All tensors are `[T, n_sp]`.
pub fn export_timeseries(
    truth: &Tensor,
    crnn: &Tensor,
    gp: &Tensor,
    sp: usize,
    stem: &Path,
    title: &str,
) -> Result<Vec<PathBuf>> {
    if crnn.shape() != truth.shape() || gp.shape() != truth.shape() || truth.ndim() != 2 {
        return Err(Error::Dimension(format!(
            "time series need equal [T, n_sp] tensors, got {:?}, {:?}, {:?}",
            truth.shape(),
            crnn.shape(),
            gp.shape()
        )));
    }
    let (t_len, n_sp) = (truth.shape()[0], truth.shape()[1]);
    if sp >= n_sp {
        return Err(Error::Contract(format!(
            "save point {sp} out of range for {n_sp} save points"
        )));
    }
    let col = |x: &Tensor| -> Vec<f64> { (0..t_len).map(|t| x.data()[t * n_sp + sp]).collect() };
    let series = [
        ("truth", col(truth), "black"),
        ("crnn_pred", col(crnn), "crimson"),
        ("gp_pred", col(gp), "seagreen"),
    ];
    let mut csv = String::from("step,truth,crnn_pred,gp_pred\n");
    for t in 0..t_len {
        writeln!(
            csv,
            "{t},{:.16e},{:.16e},{:.16e}",
            series[0].1[t], series[1].1[t], series[2].1[t]
        )
        .unwrap();
    }
    let (lo, hi) = range(series.iter().flat_map(|s| s.1.iter().copied()));
    let x = Axis::new(0.0, (t_len - 1).max(1) as f64, M, W - M);
    let y = Axis::new(lo, hi, H - M, M);
    let mut svg = String::new();
    svg_frame(&mut svg, title, "time step", "surge (m)", &x, &y);
    for (i, (name, values, colour)) in series.iter().enumerate() {
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(t, v)| format!("{:.2},{:.2}", x.map(t as f64), y.map(*v)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" fill="{colour}">{name}</text>"#,
            W - M - 60.0,
            M + 14.0 * (i + 1) as f64
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    let (csv_path, svg_path) = (with_ext(stem, "csv"), with_ext(stem, "svg"));
    write(&csv_path, &csv)?;
    write(&svg_path, &svg)?;
    Ok(vec![csv_path, svg_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        let a = Tensor::from_vec(vec![0.5, -1.0]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert_eq!(rmse(&a.map(|v| v + 1.0), &a).unwrap(), 1.0);
        let d = rmse(&Tensor::from_vec(vec![3.0, 4.0]), &Tensor::zeros(&[2])).unwrap();
        assert!((d - 3.5355).abs() < 1e-4);
        assert!(matches!(rmse(&a, &Tensor::zeros(&[3])), Err(Error::Dimension(_))));
    }

    fn report() -> EvalReport {
        EvalReport {
            storms: (64..72).collect(),
            emulators: vec![
                EmulatorScores {
                    name: "CRNN".into(),
                    rmse: (1..=8).map(|i| i as f64 * 0.01).collect(),
                },
                EmulatorScores {
                    name: "GP".into(),
                    rmse: vec![0.1; 8],
                },
            ],
            artifacts: vec![],
        }
    }

    #[test]
    fn table_layout() {
        let r = report();
        let text = r.to_table();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("Emulator") && lines[1].contains("Test 8") && lines[1].ends_with("Mean"));
        assert!(lines[3].starts_with("    CRNN") || lines[3].trim_start().starts_with("CRNN"));
        assert_eq!(lines[3].split('|').count(), 10);
        assert!((r.emulators[0].mean() - 0.045).abs() < 1e-12);
        let csv = r.to_csv();
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 10);
    }

    #[test]
    fn scatter_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.1);
        let stem = dir.path().join("scatter");
        export_scatter(&t, &t, &stem, "perfect").unwrap();
        let csv = fs::read_to_string(dir.path().join("scatter.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 12);
        for line in csv.lines().skip(1) {
            let (a, b) = line.split_once(',').unwrap();
            assert_eq!(a, b);
        }
        let first = fs::read(dir.path().join("scatter.svg")).unwrap();
        export_scatter(&t, &t, &stem, "perfect").unwrap();
        assert_eq!(first, fs::read(dir.path().join("scatter.svg")).unwrap());
    }

    #[test]
    fn timeseries_files() {
        let dir = tempfile::tempdir().unwrap();
        let truth = Tensor::from_fn(&[5, 3], |i| (i as f64).sin());
        let stem = dir.path().join("ts");
        export_timeseries(
            &truth,
            &truth.map(|v| v * 0.9),
            &Tensor::zeros(&[5, 3]),
            1,
            &stem,
            "sp 1",
        )
        .unwrap();
        let csv = fs::read_to_string(dir.path().join("ts.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 5);
        for (t, row) in rows.iter().enumerate() {
            let cell: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
            assert_eq!(cell.to_bits(), truth.get(&[t, 1]).to_bits());
        }
        assert!(matches!(
            export_timeseries(&truth, &truth, &truth, 3, &stem, ""),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn layer_points_on_desk_grid() {
        let pts = layer_save_points(&GridSpec::desk(), 4).unwrap();
        assert_eq!(pts.map(|p| p.1), [4, 100, 188]);
    }
}
