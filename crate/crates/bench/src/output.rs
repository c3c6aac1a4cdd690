use std::fmt::Write as _;
use std::path::Path;

use crate::spec::Estimator;
use crate::sweep::RmseRow;
use crate::timing::TimingRow;
use crate::{BenchError, Result};

/// Column order of the RMSE table. Never reorder; append only.
pub const CSV_HEADER: [&str; 11] = [
    "estimator",
    "snr_db",
    "rmse_theta_deg",
    "rmse_range_m",
    "rmse_velocity_mps",
    "rcrb_theta_deg",
    "rcrb_range_m",
    "rcrb_velocity_mps",
    "mean_wall_time_s",
    "trials_used",
    "failures",
];

pub const TIMING_HEADER: [&str; 12] = [
    "n_antennas",
    "n_subcarriers",
    "n_symbols",
    "sub_antennas",
    "sub_subcarriers",
    "sub_symbols",
    "estimator",
    "median_s",
    "ratio_to_pi2dmusic",
    "requested_grid_points",
    "extrapolated_s",
    "note",
];

/// Shortest decimal that parses back to the same value.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> BenchError + '_ {
    move |source| BenchError::Csv { path: path.display().to_string(), source }
}

fn write_table<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(file);
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn rmse_record(r: &RmseRow) -> [String; 11] {
    [
        r.estimator.name().to_string(),
        num(r.snr_db),
        num(r.rmse_theta_deg),
        num(r.rmse_range_m),
        num(r.rmse_velocity_mps),
        num(r.rcrb_theta_deg),
        num(r.rcrb_range_m),
        num(r.rcrb_velocity_mps),
        opt(r.mean_wall_time_s),
        r.trials_used.to_string(),
        r.failures.to_string(),
    ]
}

/// Writes the RMSE table with [`CSV_HEADER`], CRLF line ends.
pub fn emit_csv(rows: &[RmseRow], path: impl AsRef<Path>) -> Result<()> {
    write_table(path.as_ref(), CSV_HEADER, rows.iter().map(rmse_record))
}

/// Reads a table written by [`emit_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<RmseRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(BenchError::Config(format!("{}: unexpected header", path.display())));
    }
    let bad = |what: &str| BenchError::Config(format!("{}: bad {what}", path.display()));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(CSV_HEADER[i]));
        let n = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(CSV_HEADER[i]));
        out.push(RmseRow {
            estimator: rec[0].parse::<Estimator>()?,
            snr_db: f(1)?,
            rmse_theta_deg: f(2)?,
            rmse_range_m: f(3)?,
            rmse_velocity_mps: f(4)?,
            rcrb_theta_deg: f(5)?,
            rcrb_range_m: f(6)?,
            rcrb_velocity_mps: f(7)?,
            mean_wall_time_s: if rec[8].is_empty() { None } else { Some(f(8)?) },
            trials_used: n(9)?,
            failures: n(10)?,
        });
    }
    Ok(out)
}

/// gnuplot data: one block per estimator, blocks separated by two blank
/// lines, columns as in [`CSV_HEADER`] without the estimator.
pub fn emit_dat(rows: &[RmseRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = format!("# {}\n", CSV_HEADER[1..].join(" "));
    let mut current: Option<Estimator> = None;
    for r in rows {
        if current != Some(r.estimator) {
            if current.is_some() {
                text.push_str("\n\n");
            }
            let _ = writeln!(text, "# {}", r.estimator);
            current = Some(r.estimator);
        }
        let rec = rmse_record(r);
        let cols: Vec<&str> = rec[1..].iter().map(|s| if s.is_empty() { "NaN" } else { s.as_str() }).collect();
        let _ = writeln!(text, "{}", cols.join(" "));
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn emit_timing_csv(rows: &[TimingRow], path: impl AsRef<Path>) -> Result<()> {
    write_table(
        path.as_ref(),
        TIMING_HEADER,
        rows.iter().map(|r| {
            [
                r.dims[0].to_string(),
                r.dims[1].to_string(),
                r.dims[2].to_string(),
                r.smoothing[0].to_string(),
                r.smoothing[1].to_string(),
                r.smoothing[2].to_string(),
                r.estimator.name().to_string(),
                opt(r.median_s),
                opt(r.ratio_to_pi2dmusic),
                opt(r.requested_grid_points),
                opt(r.extrapolated_s),
                r.note.clone(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(estimator: Estimator, snr_db: f64) -> RmseRow {
        RmseRow {
            estimator,
            snr_db,
            rmse_theta_deg: 0.1 + snr_db,
            rmse_range_m: 1.0 / 3.0,
            rmse_velocity_mps: 2.5e-7,
            rcrb_theta_deg: f64::NAN,
            rcrb_range_m: 1e300,
            rcrb_velocity_mps: 0.0,
            mean_wall_time_s: if snr_db > 0.0 { Some(1.25) } else { None },
            trials_used: 199,
            failures: 1,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rmse.csv");
        emit_csv(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{}\r\n", CSV_HEADER.join(",")));
        assert!(read_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rmse.csv");
        let rows = vec![row(Estimator::Pi2dMusic, -10.0), row(Estimator::Pi2dMusic, 10.0), row(Estimator::Dft3d, 0.0)];
        emit_csv(&rows, &p).unwrap();
        let back = read_csv(&p).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
    }

    #[test]
    fn golden_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rmse.csv");
        emit_csv(&[row(Estimator::Dft3d, 10.0)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "estimator,snr_db,rmse_theta_deg,rmse_range_m,rmse_velocity_mps,rcrb_theta_deg,rcrb_range_m,rcrb_velocity_mps,mean_wall_time_s,trials_used,failures\r\n\
             dft3d,10.0,10.1,0.3333333333333333,2.5e-7,NaN,1e300,0.0,1.25,199,1\r\n"
        );
    }

    #[test]
    fn dat_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rmse.dat");
        emit_dat(&[row(Estimator::Pi2dMusic, -10.0), row(Estimator::Dft3d, 0.0)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("# pi2dmusic\n"));
        assert!(text.contains("\n\n\n# dft3d\n"));
        assert!(text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).all(|l| l.split(' ').count() == 10));
    }

    #[test]
    fn unwritable_path_reports_it() {
        let err = emit_csv(&[], "/nonexistent-dir/x.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }
}
