//! CSV result rows.

use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "seed",
    "knob",
    "precision_mean",
    "precision_se",
    "recall_mean",
    "recall_se",
    "teacher_weight_entropy",
    "difficulty",
    "clamp_count",
];

/// Stand-in difficulty for rows where it is undefined.
pub const NO_DIFFICULTY: i64 = -999;

/// One `(knob, seed)` cell of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResultRow {
    pub experiment: String,
    pub seed: usize,
    /// β for mixture experiments, τ for token experiments.
    pub knob: f64,
    pub precision_mean: f64,
    pub precision_se: f64,
    pub recall_mean: f64,
    pub recall_se: f64,
    pub teacher_weight_entropy: f64,
    pub difficulty: i64,
    pub clamp_count: usize,
}

impl SweepResultRow {
    /// Row recorded for a cell that failed; numeric fields are NaN.
    pub fn failed(experiment: &str, seed: usize, knob: f64) -> Self {
        Self {
            experiment: experiment.to_string(),
            seed,
            knob,
            precision_mean: f64::NAN,
            precision_se: f64::NAN,
            recall_mean: f64::NAN,
            recall_se: f64::NAN,
            teacher_weight_entropy: f64::NAN,
            difficulty: NO_DIFFICULTY,
            clamp_count: 0,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.precision_mean.is_nan()
    }

    fn fields(&self) -> [String; 10] {
        let real = |x: f64| format!("{x:.16e}");
        [
            self.experiment.clone(),
            self.seed.to_string(),
            real(self.knob),
            real(self.precision_mean),
            real(self.precision_se),
            real(self.recall_mean),
            real(self.recall_se),
            real(self.teacher_weight_entropy),
            self.difficulty.to_string(),
            self.clamp_count.to_string(),
        ]
    }
}

/// Orders rows by knob, then seed, then experiment name.
pub fn sort_rows(rows: &mut [SweepResultRow]) {
    rows.sort_by(|a, b| {
        a.knob
            .total_cmp(&b.knob)
            .then(a.seed.cmp(&b.seed))
            .then_with(|| a.experiment.cmp(&b.experiment))
    });
}

fn writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// The CSV text [`emit_csv`] writes.
pub fn to_csv_string(rows: &[SweepResultRow]) -> String {
    let mut w = writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for row in rows {
        w.write_record(row.fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are UTF-8")
}

pub fn emit_csv(rows: &[SweepResultRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no rows to write"));
    }
    std::fs::write(path, to_csv_string(rows)).map_err(Error::io(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepResultRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::invalid(format!(
            "{}: unexpected header",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record.map_err(csv_err)?;
        let bad = |i: usize| {
            Error::invalid(format!(
                "{}: bad `{}` value {:?}",
                path.display(),
                CSV_HEADER[i],
                &r[i]
            ))
        };
        let real = |i: usize| r[i].parse::<f64>().map_err(|_| bad(i));
        rows.push(SweepResultRow {
            experiment: r[0].to_string(),
            seed: r[1].parse().map_err(|_| bad(1))?,
            knob: real(2)?,
            precision_mean: real(3)?,
            precision_se: real(4)?,
            recall_mean: real(5)?,
            recall_se: real(6)?,
            teacher_weight_entropy: real(7)?,
            difficulty: r[8].parse().map_err(|_| bad(8))?,
            clamp_count: r[9].parse().map_err(|_| bad(9))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: usize, knob: f64) -> SweepResultRow {
        SweepResultRow {
            experiment: "beta-sweep".into(),
            seed,
            knob,
            precision_mean: -1.0 / 3.0,
            precision_se: 1e-3 * std::f64::consts::PI,
            recall_mean: -42.123456789012345,
            recall_se: 0.0,
            teacher_weight_entropy: 1.3431737,
            difficulty: -1,
            clamp_count: 7,
        }
    }

    #[test]
    fn one_row_gives_two_lines() {
        let text = to_csv_string(&[row(0, 1.0)]);
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows = vec![row(0, 1.0), row(1, 2.5), row(3, 1e-7)];
        emit_csv(&rows, &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), rows);
    }

    #[test]
    fn failed_rows_survive_a_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        emit_csv(&[SweepResultRow::failed("token-sweep", 2, 0.8)], &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert!(back[0].is_failed());
        assert_eq!(back[0].difficulty, NO_DIFFICULTY);
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let err = emit_csv(&[row(0, 1.0)], Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
        assert!(emit_csv(&[], Path::new("/tmp/never.csv")).is_err());
    }

    #[test]
    fn sorting_is_by_knob_then_seed_then_name() {
        let mut rows = vec![row(1, 2.0), row(0, 2.0), row(5, 1.0)];
        rows[1].experiment = "z".into();
        let mut extra = row(0, 2.0);
        extra.experiment = "a".into();
        rows.push(extra);
        sort_rows(&mut rows);
        let keys: Vec<(f64, usize, &str)> = rows
            .iter()
            .map(|r| (r.knob, r.seed, r.experiment.as_str()))
            .collect();
        assert_eq!(
            keys,
            vec![
                (1.0, 5, "beta-sweep"),
                (2.0, 0, "a"),
                (2.0, 0, "z"),
                (2.0, 1, "beta-sweep")
            ]
        );
    }
}
