//! CSV formats.
//!
//! Every file starts with a header and a `point_id` column (unsigned
//! integer). Inputs for the same points are joined on `point_id`, and all
//! outputs are written in ascending `point_id` order. Floats are written in
//! shortest round-trip form.
//!
//! | file          | columns                                  |
//! |---------------|------------------------------------------|
//! | votes         | `point_id,clf_0,...,clf_{k_t-1}` (class) |
//! | probabilities | `point_id,p_0,...,p_{K-1}`               |
//! | features      | `point_id,f_0,...,f_{d-1}`               |
//! | labels        | `point_id,label`                         |

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rps_core::{FeatureVector, ProbabilityMatrix, ScoreSource, VoteMatrix};

use crate::{CliError, Result};

/// Rows of a point-keyed CSV file, sorted by point id.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTable<T> {
    pub ids: Vec<u64>,
    pub rows: Vec<Vec<T>>,
}

impl<T> PointTable<T> {
    /// Rows in the order of `ids`, which must be exactly this table's ids.
    pub fn aligned_to(self, ids: &[u64], path: &Path) -> Result<Vec<Vec<T>>> {
        if self.ids != ids {
            return Err(CliError::parse(
                path,
                "point ids differ from those of the features file",
            ));
        }
        Ok(self.rows)
    }
}

pub fn read_table<T>(path: &Path) -> Result<PointTable<T>>
where
    T: FromStr,
    T::Err: Display,
{
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::parse(path, e))?;
    let width = reader
        .headers()
        .map_err(|e| CliError::parse(path, e))?
        .len();
    if width < 2 {
        return Err(CliError::parse(
            path,
            "expected a point_id column and at least one value column",
        ));
    }
    let mut rows: Vec<(u64, Vec<T>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::parse(path, e))?;
        let at = |msg: String| CliError::parse(path, format!("row {}: {msg}", line + 1));
        if record.len() != width {
            return Err(at(format!("{} fields, header has {width}", record.len())));
        }
        let id: u64 = record[0]
            .parse()
            .map_err(|e| at(format!("point_id `{}`: {e}", &record[0])))?;
        let values = record
            .iter()
            .skip(1)
            .map(|f| f.parse::<T>().map_err(|e| at(format!("value `{f}`: {e}"))))
            .collect::<Result<Vec<T>>>()?;
        rows.push((id, values));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CliError::parse(
            path,
            format!("duplicate point_id {}", w[0].0),
        ));
    }
    let (ids, rows) = rows.into_iter().unzip();
    Ok(PointTable { ids, rows })
}

pub fn write_table<T: Display>(
    path: &Path,
    columns: &[String],
    ids: &[u64],
    rows: impl IntoIterator<Item = impl AsRef<[T]>>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::parse(path, e))?;
    let fail = |e: csv::Error| CliError::parse(path, e);
    let mut header = vec!["point_id".to_string()];
    header.extend(columns.iter().cloned());
    writer.write_record(&header).map_err(fail)?;
    for (id, row) in ids.iter().zip(rows) {
        let mut record = vec![id.to_string()];
        record.extend(row.as_ref().iter().map(ToString::to_string));
        writer.write_record(&record).map_err(fail)?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

pub fn write_votes(path: &Path, ids: &[u64], votes: &VoteMatrix) -> Result<()> {
    write_table(
        path,
        &numbered("clf", votes.num_classifiers()),
        ids,
        votes.rows(),
    )
}

pub fn write_features(path: &Path, ids: &[u64], features: &[FeatureVector]) -> Result<()> {
    let dim = features.first().map_or(0, FeatureVector::dim);
    write_table(
        path,
        &numbered("f", dim),
        ids,
        features.iter().map(FeatureVector::values),
    )
}

pub fn write_labels(path: &Path, ids: &[u64], labels: &[usize]) -> Result<()> {
    write_table(
        path,
        &["label".to_string()],
        ids,
        labels.iter().map(std::slice::from_ref),
    )
}

pub fn write_probabilities(path: &Path, ids: &[u64], probs: &ProbabilityMatrix) -> Result<()> {
    write_table(
        path,
        &numbered("p", probs.num_classes()),
        ids,
        (0..probs.len()).map(|j| probs.row(j)),
    )
}

/// Input files describing one set of points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataPaths {
    pub votes: Option<PathBuf>,
    pub probabilities: Option<PathBuf>,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreTable {
    Votes(VoteMatrix),
    Probabilities(ProbabilityMatrix),
}

/// Points joined across their files.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<u64>,
    pub scores: ScoreTable,
    pub features: Vec<FeatureVector>,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    /// Loads and joins the files. `num_classes` is required for votes.
    pub fn load(paths: &DataPaths, num_classes: Option<usize>) -> Result<Self> {
        let features_table = read_table::<f64>(&paths.features)?;
        let ids = features_table.ids.clone();
        if ids.is_empty() {
            return Err(CliError::parse(&paths.features, "no points"));
        }
        let features = features_table
            .rows
            .into_iter()
            .map(FeatureVector::new)
            .collect::<rps_core::Result<Vec<_>>>()
            .map_err(|e| CliError::parse(&paths.features, e))?;
        let scores = match (&paths.votes, &paths.probabilities) {
            (Some(path), None) => {
                let k = num_classes.ok_or_else(|| {
                    CliError::Config("the number of classes is required with vote files".into())
                })?;
                let rows = read_table::<usize>(path)?.aligned_to(&ids, path)?;
                ScoreTable::Votes(
                    VoteMatrix::from_rows(k, &rows).map_err(|e| CliError::parse(path, e))?,
                )
            }
            (None, Some(path)) => {
                let rows = read_table::<f64>(path)?.aligned_to(&ids, path)?;
                let probs =
                    ProbabilityMatrix::from_rows(&rows).map_err(|e| CliError::parse(path, e))?;
                if let Some(k) = num_classes.filter(|&k| k != probs.num_classes()) {
                    return Err(CliError::Config(format!(
                        "{} has {} classes, expected {k}",
                        path.display(),
                        probs.num_classes()
                    )));
                }
                ScoreTable::Probabilities(probs)
            }
            _ => {
                return Err(CliError::Config(
                    "give exactly one of a votes file or a probabilities file".into(),
                ))
            }
        };
        let labels = match &paths.labels {
            Some(path) => Some(
                read_table::<usize>(path)?
                    .aligned_to(&ids, path)?
                    .into_iter()
                    .map(|r| r[0])
                    .collect(),
            ),
            None => None,
        };
        Ok(Self {
            ids,
            scores,
            features,
            labels,
        })
    }

    pub fn source(&self) -> ScoreSource<'_> {
        match &self.scores {
            ScoreTable::Votes(v) => ScoreSource::Votes(v),
            ScoreTable::Probabilities(p) => ScoreSource::Probabilities(p),
        }
    }

    pub fn votes(&self) -> Option<&VoteMatrix> {
        match &self.scores {
            ScoreTable::Votes(v) => Some(v),
            ScoreTable::Probabilities(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.source().num_classes()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| CliError::Config("labels are required for this command".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ids = vec![3, 10, 7];
        let votes = VoteMatrix::from_rows(3, &[vec![0, 1], vec![2, 2], vec![1, 0]]).unwrap();
        let features: Vec<FeatureVector> = [[0.1, -2.5], [1e-7, 3.0], [0.3, 1.0 / 3.0]]
            .iter()
            .map(|r| FeatureVector::new(r.to_vec()).unwrap())
            .collect();
        let labels = vec![0, 2, 1];
        let p = |name: &str| dir.path().join(name);
        write_votes(&p("v.csv"), &ids, &votes).unwrap();
        write_features(&p("f.csv"), &ids, &features).unwrap();
        write_labels(&p("l.csv"), &ids, &labels).unwrap();
        let paths = DataPaths {
            votes: Some(p("v.csv")),
            probabilities: None,
            features: p("f.csv"),
            labels: Some(p("l.csv")),
        };
        let d = Dataset::load(&paths, Some(3)).unwrap();
        assert_eq!(d.ids, vec![3, 7, 10]);
        assert_eq!(d.features[1], features[2]);
        assert_eq!(d.features[2], features[1]);
        assert_eq!(d.votes().unwrap().row(0), votes.row(0));
        assert_eq!(d.labels().unwrap(), &[0, 1, 2]);
    }

    #[test]
    fn mismatched_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f.csv");
        let l = dir.path().join("l.csv");
        std::fs::write(&f, "point_id,f_0\n1,0.5\n2,0.25\n").unwrap();
        std::fs::write(&l, "point_id,label\n1,0\n3,1\n").unwrap();
        std::fs::write(
            dir.path().join("p.csv"),
            "point_id,p_0,p_1\n1,0.5,0.5\n2,1,0\n",
        )
        .unwrap();
        let paths = DataPaths {
            votes: None,
            probabilities: Some(dir.path().join("p.csv")),
            features: f,
            labels: Some(l),
        };
        assert!(matches!(
            Dataset::load(&paths, None),
            Err(CliError::Parse { .. })
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f.csv");
        std::fs::write(&f, "point_id,f_0\n1,0.5\n1,0.25\n").unwrap();
        assert!(read_table::<f64>(&f).is_err());
    }
}
