//! Demonstration ingestion and preprocessing.
//!
//! Demonstrations are read from CSV files with a header row. Two layouts are
//! accepted:
//!
//! ```text
//! t,x1,x2[,v1,v2]              one demonstration per file
//! demo_id,t,x1,x2[,v1,v2]      several demonstrations, grouped by id
//! ```
//!
//! After loading, every demonstration is translated so that the goal (the last
//! position of the first demonstration) sits at the origin.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One timed trajectory in `R^n`. Rows of `positions` are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub times: Vec<f64>,
    pub positions: DMatrix<f64>,
    pub velocities: Option<DMatrix<f64>>,
}

impl Demonstration {
    pub fn new(
        times: Vec<f64>,
        positions: DMatrix<f64>,
        velocities: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if times.len() != positions.nrows() {
            return Err(Error::Dimension {
                expected: times.len(),
                found: positions.nrows(),
            });
        }
        if positions.ncols() == 0 {
            return Err(Error::Data("demonstration has zero state dimension".into()));
        }
        if let Some(v) = &velocities {
            if v.shape() != positions.shape() {
                return Err(Error::Dimension {
                    expected: positions.nrows(),
                    found: v.nrows(),
                });
            }
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!(
                "times not strictly increasing at sample {} ({} -> {})",
                i + 1,
                times[i],
                times[i + 1]
            )));
        }
        Ok(Self {
            times,
            positions,
            velocities,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    /// Elapsed time between the first and last sample.
    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn position(&self, i: usize) -> DVector<f64> {
        self.positions.row(i).transpose()
    }

    pub fn start(&self) -> DVector<f64> {
        self.position(0)
    }

    /// Sample times shifted so the first one is zero.
    pub fn relative_times(&self) -> Vec<f64> {
        let t0 = self.times.first().copied().unwrap_or(0.0);
        self.times.iter().map(|t| t - t0).collect()
    }

    fn translate(&mut self, offset: &DVector<f64>) {
        for mut row in self.positions.row_iter_mut() {
            row -= offset.transpose();
        }
    }
}

/// A set of demonstrations sharing a dimension and a goal.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub demos: Vec<Demonstration>,
    /// Goal in the original (untranslated) coordinates.
    pub goal: DVector<f64>,
    pub dim: usize,
}

impl DemoSet {
    /// Builds a set from demonstrations already expressed relative to the goal.
    pub fn from_translated(demos: Vec<Demonstration>, goal: DVector<f64>) -> Result<Self> {
        let dim = goal.len();
        if demos.is_empty() {
            return Err(Error::Data("empty demonstration set".into()));
        }
        for d in &demos {
            crate::error::check_dim(dim, d.dim())?;
        }
        if goal.iter().any(|g| !g.is_finite()) {
            return Err(Error::Data("goal is not finite".into()));
        }
        Ok(Self { demos, goal, dim })
    }

    /// Translates raw demonstrations so the last point of the first one is the origin.
    pub fn from_raw(mut demos: Vec<Demonstration>) -> Result<Self> {
        let first = demos
            .first()
            .ok_or_else(|| Error::Data("no demonstrations".into()))?;
        let goal = first.position(first.len() - 1);
        for d in &demos {
            crate::error::check_dim(goal.len(), d.dim())?;
        }
        for d in demos.iter_mut() {
            d.translate(&goal);
        }
        Self::from_translated(demos, goal)
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn mean_duration(&self) -> f64 {
        self.demos.iter().map(|d| d.duration()).sum::<f64>() / self.demos.len() as f64
    }

    /// Per-axis (min, max) over all positions.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim];
        for d in &self.demos {
            for row in d.positions.row_iter() {
                for (b, &v) in bounds.iter_mut().zip(row.iter()) {
                    b.0 = b.0.min(v);
                    b.1 = b.1.max(v);
                }
            }
        }
        bounds
    }

    /// Splits into the first `k` demonstrations and the rest, keeping the goal.
    pub fn split_at(&self, k: usize) -> Result<(DemoSet, DemoSet)> {
        if k == 0 || k >= self.demos.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {} demonstrations at {k}",
                self.demos.len()
            )));
        }
        let (a, b) = self.demos.split_at(k);
        Ok((
            DemoSet::from_translated(a.to_vec(), self.goal.clone())?,
            DemoSet::from_translated(b.to_vec(), self.goal.clone())?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub smoothing_window: usize,
    pub resample_len: usize,
    pub constraint_points: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            smoothing_window: 5,
            resample_len: 1000,
            constraint_points: 250,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "smoothing_window must be an odd integer >= 1, got {}",
                self.smoothing_window
            )));
        }
        if self.resample_len < 2 {
            return Err(Error::InvalidArgument(format!(
                "resample_len must be >= 2, got {}",
                self.resample_len
            )));
        }
        if self.constraint_points == 0 {
            return Err(Error::InvalidArgument("constraint_points must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loads demonstrations from a CSV file, or from every `*.csv` file in a
/// directory (in file-name order), and translates them to the goal frame.
pub fn load_demonstrations(path: &Path, has_velocities: bool) -> Result<DemoSet> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("no .csv files in {}", path.display())));
        }
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut demos = Vec::new();
    for file in &files {
        demos.extend(read_csv_file(file, has_velocities)?);
    }
    DemoSet::from_raw(demos)
}

/// Like [`load_demonstrations`], deciding from the first file's header
/// whether velocity columns (`v1..vn`) are present.
pub fn load_demonstrations_auto(path: &Path) -> Result<DemoSet> {
    let first = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        files
            .into_iter()
            .next()
            .ok_or_else(|| Error::Data(format!("no .csv files in {}", path.display())))?
    } else {
        path.to_path_buf()
    };
    let mut header = String::new();
    BufReader::new(File::open(&first)?).read_line(&mut header)?;
    let has_velocities = header.split(',').any(|c| {
        let c = c.trim();
        c.len() > 1
            && c.starts_with(['v', 'V'])
            && c[1..].chars().all(|ch| ch.is_ascii_digit())
    });
    load_demonstrations(path, has_velocities)
}

fn read_csv_file(path: &Path, has_velocities: bool) -> Result<Vec<Demonstration>> {
    let file = File::open(path)?;
    parse_demonstrations(file, has_velocities)
}

/// Demo id, times, row-major positions, row-major velocities.
type Group = (String, Vec<f64>, Vec<f64>, Vec<f64>);

/// Parses the CSV layouts described in the module docs (no translation).
pub fn parse_demonstrations<R: std::io::Read>(
    reader: R,
    has_velocities: bool,
) -> Result<Vec<Demonstration>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = rdr.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(csv_error(1, e)),
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file: missing header".into(),
            })
        }
    };
    let grouped = header
        .get(0)
        .is_some_and(|c| c.eq_ignore_ascii_case("demo_id"));
    let lead = usize::from(grouped);
    if header.len() < lead + 2 {
        return Err(Error::Parse {
            line: 1,
            message: format!("header has {} columns, need at least t and x1", header.len()),
        });
    }
    let state_cols = header.len() - lead - 1;
    let dim = if has_velocities {
        if state_cols % 2 != 0 {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected t, x1..xn, v1..vn but found {state_cols} state columns"),
            });
        }
        state_cols / 2
    } else {
        state_cols
    };

    // in order of first appearance
    let mut groups: Vec<Group> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            csv_error(line, e)
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::Dimension {
                expected: header.len(),
                found: rec.len(),
            });
        }
        let id = if grouped {
            rec.get(0).unwrap_or_default().to_string()
        } else {
            String::new()
        };
        let mut values = Vec::with_capacity(rec.len() - lead);
        for field in rec.iter().skip(lead) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse '{field}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value '{field}'"),
                });
            }
            values.push(v);
        }
        let idx = match groups.iter().position(|g| g.0 == id) {
            Some(i) => i,
            None => {
                groups.push((id, Vec::new(), Vec::new(), Vec::new()));
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        g.1.push(values[0]);
        g.2.extend_from_slice(&values[1..1 + dim]);
        if has_velocities {
            g.3.extend_from_slice(&values[1 + dim..1 + 2 * dim]);
        }
    }
    if groups.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }

    groups
        .into_iter()
        .map(|(id, times, pos, vel)| {
            let rows = times.len();
            let positions = DMatrix::from_row_slice(rows, dim, &pos);
            let velocities = has_velocities.then(|| DMatrix::from_row_slice(rows, dim, &vel));
            Demonstration::new(times, positions, velocities).map_err(|e| match e {
                Error::Data(m) if !id.is_empty() => Error::Data(format!("demo '{id}': {m}")),
                other => other,
            })
        })
        .collect()
}

fn csv_error(line: usize, e: csv::Error) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Writes demonstrations in the grouped `demo_id,t,x..,v..` layout.
pub fn write_demonstrations(path: &Path, demos: &[Demonstration]) -> Result<()> {
    let dim = demos.first().map(|d| d.dim()).unwrap_or(0);
    let with_vel = !demos.is_empty() && demos.iter().all(|d| d.velocities.is_some());
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let mut header = vec!["demo_id".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    if with_vel {
        header.extend((1..=dim).map(|i| format!("v{i}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for (k, d) in demos.iter().enumerate() {
        for i in 0..d.len() {
            write!(out, "{k},{}", d.times[i])?;
            for c in 0..dim {
                write!(out, ",{}", d.positions[(i, c)])?;
            }
            if with_vel {
                let v = d.velocities.as_ref().expect("checked above");
                for c in 0..dim {
                    write!(out, ",{}", v[(i, c)])?;
                }
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Fills velocities by finite differences (central inside, one-sided at the
/// ends) followed by a centred moving average of `cfg.smoothing_window`.
///
/// Near the ends the averaging window shrinks symmetrically, so affine
/// trajectories keep their exact velocity.
pub fn finite_difference_velocities(
    demo: &Demonstration,
    cfg: &PreprocessConfig,
) -> Result<Demonstration> {
    cfg.validate()?;
    let len = demo.len();
    if len < 3 {
        return Err(Error::Data(format!(
            "finite differences need at least 3 samples, got {len}"
        )));
    }
    let n = demo.dim();
    let t = &demo.times;
    let x = &demo.positions;
    let mut raw = DMatrix::zeros(len, n);
    for i in 0..len {
        let (a, b) = match i {
            0 => (0, 1),
            i if i == len - 1 => (len - 2, len - 1),
            i => (i - 1, i + 1),
        };
        let dt = t[b] - t[a];
        for c in 0..n {
            raw[(i, c)] = (x[(b, c)] - x[(a, c)]) / dt;
        }
    }

    let half = cfg.smoothing_window / 2;
    let mut smooth = DMatrix::zeros(len, n);
    for i in 0..len {
        let h = half.min(i).min(len - 1 - i);
        let window = raw.rows(i - h, 2 * h + 1);
        for c in 0..n {
            smooth[(i, c)] = window.column(c).mean();
        }
    }

    Ok(Demonstration {
        times: demo.times.clone(),
        positions: demo.positions.clone(),
        velocities: Some(smooth),
    })
}

/// Linear interpolation of the rows of `values` sampled at `times`.
fn interpolate_rows(times: &[f64], values: &DMatrix<f64>, t: f64) -> DVector<f64> {
    let last = times.len() - 1;
    if t <= times[0] {
        return values.row(0).transpose();
    }
    if t >= times[last] {
        return values.row(last).transpose();
    }
    let hi = times.partition_point(|&s| s <= t).min(last);
    let lo = hi - 1;
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    (values.row(lo) * (1.0 - w) + values.row(hi) * w).transpose()
}

/// Resamples every demonstration onto a common normalised time grid and
/// averages them pointwise.
///
/// Each demonstration is sampled at `resample_len` equally spaced fractions of
/// its own duration; the averaged trajectory runs over the mean duration.
/// Velocities are rescaled by `T_i / T_mean` before averaging so that they
/// stay consistent with the time-normalised positions. Demonstrations without
/// velocities get finite-difference estimates first. The last averaged
/// position is pinned to the origin.
pub fn resample_and_average(set: &DemoSet, cfg: &PreprocessConfig) -> Result<Demonstration> {
    cfg.validate()?;
    if set.demos.is_empty() {
        return Err(Error::Data("no demonstrations to average".into()));
    }
    let n = set.dim;
    let len = cfg.resample_len;
    let mean_duration = set.mean_duration();
    if !(mean_duration > 0.0) {
        return Err(Error::Data("demonstrations have zero duration".into()));
    }

    let mut pos = DMatrix::zeros(len, n);
    let mut vel = DMatrix::zeros(len, n);
    let m = set.demos.len() as f64;
    for demo in &set.demos {
        if demo.len() < 2 {
            return Err(Error::Data("each demonstration needs at least 2 samples".into()));
        }
        let filled;
        let demo = if demo.velocities.is_some() {
            demo
        } else {
            filled = finite_difference_velocities(demo, cfg)?;
            &filled
        };
        let v = demo.velocities.as_ref().expect("filled above");
        let t0 = demo.times[0];
        let duration = demo.duration();
        let time_scale = duration / mean_duration;
        for k in 0..len {
            let u = k as f64 / (len - 1) as f64;
            let t = t0 + u * duration;
            let p = interpolate_rows(&demo.times, &demo.positions, t);
            let dv = interpolate_rows(&demo.times, v, t);
            for c in 0..n {
                pos[(k, c)] += p[c] / m;
                vel[(k, c)] += dv[c] * time_scale / m;
            }
        }
    }
    pos.row_mut(len - 1).fill(0.0);

    let times = (0..len)
        .map(|k| k as f64 / (len - 1) as f64 * mean_duration)
        .collect();
    Demonstration::new(times, pos, Some(vel))
}

/// Indices of `k` samples spread uniformly over `len`, including both ends.
pub fn subsample_indices(len: usize, k: usize) -> Vec<usize> {
    if len == 0 || k == 0 {
        return Vec::new();
    }
    if k >= len {
        return (0..len).collect();
    }
    if k == 1 {
        return vec![0];
    }
    let step = (len - 1) as f64 / (k - 1) as f64;
    let mut idx: Vec<usize> = (0..k).map(|i| (i as f64 * step).round() as usize).collect();
    idx.dedup();
    idx
}

/// Picks `k` constraint points uniformly by index from the demonstration.
pub fn subsample_constraint_points(demo: &Demonstration, k: usize) -> Vec<DVector<f64>> {
    subsample_indices(demo.len(), k)
        .into_iter()
        .map(|i| demo.position(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn demo_1d(times: &[f64], xs: &[f64]) -> Demonstration {
        Demonstration::new(
            times.to_vec(),
            DMatrix::from_column_slice(xs.len(), 1, xs),
            None,
        )
        .unwrap()
    }

    #[test]
    fn load_translates_to_goal() {
        let csv = "t,x1,x2\n0,0,0\n1,1,1\n";
        let demos = parse_demonstrations(csv.as_bytes(), false).unwrap();
        let set = DemoSet::from_raw(demos).unwrap();
        assert_eq!(set.goal, DVector::from_vec(vec![1.0, 1.0]));
        let d = &set.demos[0];
        assert_eq!(d.position(0), DVector::from_vec(vec![-1.0, -1.0]));
        assert_eq!(d.position(1), DVector::from_vec(vec![0.0, 0.0]));
    }

    #[test]
    fn empty_file_is_parse_error() {
        let err = parse_demonstrations("".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_demonstrations("t,x1\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "t,x1\n0,1\n1,abc\n";
        match parse_demonstrations(csv.as_bytes(), false).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn inconsistent_width_is_dimension_error() {
        let csv = "t,x1,x2\n0,1,2\n1,2\n";
        assert!(matches!(
            parse_demonstrations(csv.as_bytes(), false).unwrap_err(),
            Error::Dimension { .. }
        ));
    }

    #[test]
    fn non_monotone_times_is_data_error() {
        let csv = "t,x1\n0,1\n2,2\n1,3\n";
        assert!(matches!(
            parse_demonstrations(csv.as_bytes(), false).unwrap_err(),
            Error::Data(_)
        ));
    }

    #[test]
    fn grouped_layout_with_velocities() {
        let csv = "demo_id,t,x1,x2,v1,v2\n\
                   a,0,1,1,0,0\na,1,2,2,1,1\n\
                   b,0,5,5,0,0\nb,1,3,3,-1,-1\nb,2,2,2,0,0\n";
        let demos = parse_demonstrations(csv.as_bytes(), true).unwrap();
        assert_eq!(demos.len(), 2);
        assert_eq!(demos[1].len(), 3);
        assert_eq!(demos[1].velocities.as_ref().unwrap()[(1, 0)], -1.0);
        let set = DemoSet::from_raw(demos).unwrap();
        assert_eq!(set.dim, 2);
        // goal is the end of demo "a"
        assert_eq!(set.demos[1].position(2), DVector::from_vec(vec![0.0, 0.0]));
    }

    #[test]
    fn odd_state_columns_with_velocities_rejected() {
        let csv = "t,x1,x2,v1\n0,1,2,3\n";
        assert!(parse_demonstrations(csv.as_bytes(), true).is_err());
    }

    #[test]
    fn fd_linear_motion() {
        let d = demo_1d(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]);
        let v = finite_difference_velocities(&d, &PreprocessConfig::default()).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(v.velocities.as_ref().unwrap()[(i, 0)], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn fd_stationary() {
        let d = demo_1d(&[0.0, 0.5, 1.0, 1.5], &[3.0; 4]);
        let v = finite_difference_velocities(&d, &PreprocessConfig::default()).unwrap();
        assert!(v.velocities.unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fd_quadratic_interior() {
        // x(t) = t^2: central difference at t = 1 is (4 - 0) / 2 = 2
        let d = demo_1d(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]);
        let v = finite_difference_velocities(&d, &PreprocessConfig::default()).unwrap();
        assert_abs_diff_eq!(v.velocities.unwrap()[(1, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn fd_needs_three_samples() {
        let d = demo_1d(&[0.0, 1.0], &[0.0, 1.0]);
        assert!(matches!(
            finite_difference_velocities(&d, &PreprocessConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn fd_affine_exact_nonuniform_times() {
        let times = [0.0, 0.1, 0.35, 0.4, 0.9, 1.3, 2.0];
        let pos: Vec<f64> = times
            .iter()
            .flat_map(|&t| [3.0 * t - 1.0, -0.5 * t + 2.0])
            .collect();
        let d = Demonstration::new(times.to_vec(), DMatrix::from_row_slice(7, 2, &pos), None)
            .unwrap();
        let v = finite_difference_velocities(&d, &PreprocessConfig::default()).unwrap();
        for row in v.velocities.unwrap().row_iter() {
            assert_abs_diff_eq!(row[0], 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row[1], -0.5, epsilon = 1e-12);
        }
    }

    fn set_1d(demos: Vec<Demonstration>) -> DemoSet {
        DemoSet::from_translated(demos, DVector::zeros(1)).unwrap()
    }

    #[test]
    fn average_of_single_demo_is_resampled_copy() {
        let times: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let xs: Vec<f64> = times.iter().map(|t| t - 1.0).collect();
        let mut d = demo_1d(&times, &xs);
        d.velocities = Some(DMatrix::from_element(11, 1, 1.0));
        let cfg = PreprocessConfig {
            resample_len: 21,
            ..Default::default()
        };
        let avg = resample_and_average(&set_1d(vec![d]), &cfg).unwrap();
        assert_eq!(avg.len(), 21);
        for k in 0..21 {
            let t = avg.times[k];
            assert_abs_diff_eq!(avg.positions[(k, 0)], t - 1.0, epsilon = 1e-12);
        }
        assert_eq!(avg.positions[(20, 0)], 0.0);
    }

    #[test]
    fn average_of_mirror_images_is_zero() {
        let times: Vec<f64> = (0..6).map(f64::from).collect();
        let xs: Vec<f64> = times.iter().map(|t| (5.0 - t) * (5.0 - t)).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let avg = resample_and_average(
            &set_1d(vec![demo_1d(&times, &xs), demo_1d(&times, &neg)]),
            &PreprocessConfig::default(),
        )
        .unwrap();
        assert!(avg.positions.iter().all(|x| x.abs() < 1e-12));
        assert!(avg.velocities.unwrap().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn average_of_two_slopes() {
        // slopes 1 and 3 over the same duration, both ending at 0
        let times: Vec<f64> = (0..5).map(f64::from).collect();
        let a: Vec<f64> = times.iter().map(|t| t - 4.0).collect();
        let b: Vec<f64> = times.iter().map(|t| 3.0 * (t - 4.0)).collect();
        let avg = resample_and_average(
            &set_1d(vec![demo_1d(&times, &a), demo_1d(&times, &b)]),
            &PreprocessConfig::default(),
        )
        .unwrap();
        for k in 0..avg.len() {
            assert_abs_diff_eq!(avg.positions[(k, 0)], 2.0 * (avg.times[k] - 4.0), epsilon = 1e-9);
            assert_abs_diff_eq!(avg.velocities.as_ref().unwrap()[(k, 0)], 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn subsample_paper_setting() {
        let idx = subsample_indices(1000, 250);
        assert_eq!(idx.len(), 250);
        assert_eq!(idx[0], 0);
        assert_eq!(*idx.last().unwrap(), 999);
        assert!(idx.windows(2).all(|w| w[1] - w[0] == 4 || w[1] - w[0] == 5));
    }

    #[test]
    fn subsample_degenerate_and_saturated() {
        assert_eq!(subsample_indices(10, 1), vec![0]);
        assert_eq!(subsample_indices(10, 10), (0..10).collect::<Vec<_>>());
        assert_eq!(subsample_indices(10, 50), (0..10).collect::<Vec<_>>());
        let d = demo_1d(&[0.0, 1.0, 2.0], &[5.0, 6.0, 7.0]);
        let pts = subsample_constraint_points(&d, 1);
        assert_eq!(pts, vec![DVector::from_vec(vec![5.0])]);
    }

    #[test]
    fn preprocess_validation() {
        let mut cfg = PreprocessConfig {
            smoothing_window: 4,
            ..PreprocessConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.smoothing_window = 1;
        cfg.resample_len = 1;
        assert!(cfg.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn subsample_sorted_unique_subset(len in 1usize..400, k in 1usize..500) {
                let idx = subsample_indices(len, k);
                prop_assert_eq!(idx.len(), k.min(len));
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(idx.iter().all(|&i| i < len));
                prop_assert_eq!(idx[0], 0);
                if k >= 2 {
                    prop_assert_eq!(*idx.last().unwrap(), len - 1);
                }
            }

            #[test]
            fn loaded_goal_at_origin(
                rows in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..30),
                extra in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..30),
            ) {
                let mut csv = String::from("demo_id,t,x1,x2\n");
                for (i, (a, b)) in rows.iter().enumerate() {
                    csv += &format!("0,{i},{a},{b}\n");
                }
                for (i, (a, b)) in extra.iter().enumerate() {
                    csv += &format!("1,{i},{a},{b}\n");
                }
                let set = DemoSet::from_raw(parse_demonstrations(csv.as_bytes(), false).unwrap()).unwrap();
                let first = &set.demos[0];
                prop_assert!(first.position(first.len() - 1).norm() <= 1e-9);
            }

            #[test]
            fn averaging_idempotent(amp in 1.0f64..50.0, len in 20usize..200) {
                let times: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
                let total = times[len - 1];
                let xs: Vec<f64> = times.iter().map(|t| amp * (1.0 - (t / total)).powi(2)).collect();
                let d = demo_1d(&times, &xs);
                let cfg = PreprocessConfig { resample_len: len, ..Default::default() };
                let once = resample_and_average(&set_1d(vec![d]), &cfg).unwrap();
                let twice = resample_and_average(&set_1d(vec![once.clone()]), &cfg).unwrap();
                let spacing = total / (len - 1) as f64;
                let max_speed = 2.0 * amp / total;
                let gap = (&once.positions - &twice.positions).amax();
                prop_assert!(gap <= spacing * max_speed + 1e-12);
            }
        }
    }
}
