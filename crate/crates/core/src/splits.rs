//! Benchmark splits built from native delimited tables.
//!
//! Each benchmark ships a small JSON manifest (embedded at compile time)
//! that names the source files, the input columns, and for every task the
//! target column plus half-open row ranges for training and testing. Test
//! ranges index `test_files` when the manifest has them and the training
//! table otherwise. Splits depend on the files only; there is no RNG.

use crate::data::{MultiTaskDataset, TaskData};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Jura,
    Eeg,
    SarcosA,
    SarcosB,
    SarcosC,
}

impl SplitName {
    pub const ALL: [SplitName; 5] = [Self::Jura, Self::Eeg, Self::SarcosA, Self::SarcosB, Self::SarcosC];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Jura => "jura",
            Self::Eeg => "eeg",
            Self::SarcosA => "sarcos_a",
            Self::SarcosB => "sarcos_b",
            Self::SarcosC => "sarcos_c",
        }
    }

    pub fn manifest(self) -> Manifest {
        let text = match self {
            Self::Jura => include_str!("../manifests/jura.json"),
            Self::Eeg => include_str!("../manifests/eeg.json"),
            Self::SarcosA => include_str!("../manifests/sarcos_a.json"),
            Self::SarcosB => include_str!("../manifests/sarcos_b.json"),
            Self::SarcosC => include_str!("../manifests/sarcos_c.json"),
        };
        serde_json::from_str(text).expect("embedded manifest is valid")
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown dataset `{s}` (jura, eeg, sarcos_a, sarcos_b, sarcos_c)")))
    }
}

/// Column mapping from native files to a multi-task split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub files: Vec<String>,
    #[serde(default)]
    pub test_files: Vec<String>,
    /// Whether every file starts with a header row naming its columns.
    pub header: bool,
    /// Column names for header-less files.
    #[serde(default)]
    pub columns: Vec<String>,
    pub expected_rows: usize,
    #[serde(default)]
    pub expected_test_rows: Option<usize>,
    pub inputs: Vec<InputSpec>,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    #[serde(default)]
    pub column: Option<String>,
    /// Use the row position scaled to `[0, 1]` instead of a column.
    #[serde(default)]
    pub row_index: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub column: String,
    pub train: [usize; 2],
    #[serde(default)]
    pub test: Option<[usize; 2]>,
}

/// Training data plus one (possibly empty) held-out set per task.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: MultiTaskDataset<T>,
    pub test: Vec<TaskData<T>>,
}

impl<T: Real> Split<T> {
    /// Indices of the tasks that have held-out points.
    pub fn target_tasks(&self) -> Vec<usize> {
        (0..self.test.len()).filter(|&c| !self.test[c].is_empty()).collect()
    }
}

/// A delimited numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("column `{name}` not found in {:?}", self.columns)))
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_table(text: &str, header: bool, columns: &[String], origin: &str) -> Result<Table> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let names: Vec<String> = if header {
        let h = lines.next().ok_or_else(|| Error::SchemaMismatch(format!("{origin}: empty file")))?;
        split_fields(h).into_iter().map(|s| s.trim_matches('"').to_string()).collect()
    } else {
        columns.to_vec()
    };
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let fields = split_fields(line);
        if fields.len() != names.len() {
            return Err(Error::SchemaMismatch(format!(
                "{origin}: data row {} has {} fields, expected {}",
                k + 1,
                fields.len(),
                names.len()
            )));
        }
        let row = fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::SchemaMismatch(format!("{origin}: data row {}: bad number `{f}`", k + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { columns: names, rows })
}

fn read_tables(dir: &Path, files: &[String], header: bool, columns: &[String]) -> Result<Table> {
    let mut out: Option<Table> = None;
    for f in files {
        let path = dir.join(f);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let t = parse_table(&std::fs::read_to_string(&path)?, header, columns, f)?;
        match &mut out {
            None => out = Some(t),
            Some(acc) => {
                if acc.columns != t.columns {
                    return Err(Error::SchemaMismatch(format!("{f}: columns differ from {}", files[0])));
                }
                acc.rows.extend(t.rows);
            }
        }
    }
    out.ok_or_else(|| Error::Config("manifest lists no files".into()))
}

fn inputs_of<T: Real>(table: &Table, specs: &[InputSpec], rows: std::ops::Range<usize>) -> Result<DenseMatrix<T>> {
    let n_total = table.rows.len();
    let cols: Vec<Option<usize>> = specs
        .iter()
        .map(|s| match (&s.column, s.row_index) {
            (Some(c), false) => table.column(c).map(Some),
            (None, true) => Ok(None),
            _ => Err(Error::Config("input spec needs exactly one of `column`, `row_index`".into())),
        })
        .collect::<Result<_>>()?;
    let start = rows.start;
    Ok(DenseMatrix::from_fn(rows.len(), specs.len(), |i, j| {
        let r = start + i;
        T::lit(match cols[j] {
            Some(c) => table.rows[r][c],
            None => r as f64 / (n_total.max(2) - 1) as f64,
        })
    }))
}

fn task_block<T: Real>(table: &Table, m: &Manifest, task: &TaskSpec, range: [usize; 2], which: &str) -> Result<TaskData<T>> {
    let [a, b] = range;
    if a > b || b > table.rows.len() {
        return Err(Error::SizeMismatch(format!(
            "{}: {which} rows {a}..{b} of task {} exceed the {} available",
            m.name,
            task.name,
            table.rows.len()
        )));
    }
    let y_col = table.column(&task.column)?;
    let x = inputs_of(table, &m.inputs, a..b)?;
    let y = table.rows[a..b].iter().map(|r| T::lit(r[y_col])).collect();
    TaskData::new(x, y)
}

fn check_columns(table: &Table, m: &Manifest) -> Result<()> {
    for c in m.inputs.iter().filter_map(|s| s.column.as_ref()).chain(m.tasks.iter().map(|t| &t.column)) {
        table.column(c)?;
    }
    Ok(())
}

/// Builds a split from `manifest` and the files under `dir`.
pub fn load_with_manifest<T: Real>(manifest: &Manifest, dir: &Path) -> Result<Split<T>> {
    let train_table = read_tables(dir, &manifest.files, manifest.header, &manifest.columns)?;
    check_columns(&train_table, manifest)?;
    if train_table.rows.len() != manifest.expected_rows {
        return Err(Error::SizeMismatch(format!(
            "{}: {} rows, protocol expects {}",
            manifest.name,
            train_table.rows.len(),
            manifest.expected_rows
        )));
    }
    let test_table = if manifest.test_files.is_empty() {
        None
    } else {
        let t = read_tables(dir, &manifest.test_files, manifest.header, &manifest.columns)?;
        check_columns(&t, manifest)?;
        if let Some(n) = manifest.expected_test_rows {
            if t.rows.len() != n {
                return Err(Error::SizeMismatch(format!(
                    "{}: {} test rows, protocol expects {n}",
                    manifest.name,
                    t.rows.len()
                )));
            }
        }
        Some(t)
    };
    let mut train = Vec::with_capacity(manifest.tasks.len());
    let mut test = Vec::with_capacity(manifest.tasks.len());
    for task in &manifest.tasks {
        train.push(task_block(&train_table, manifest, task, task.train, "train")?);
        test.push(match task.test {
            Some(range) => {
                if test_table.is_none() && range[0] < task.train[1] && task.train[0] < range[1] {
                    return Err(Error::Config(format!("{}: train and test rows of {} overlap", manifest.name, task.name)));
                }
                task_block(test_table.as_ref().unwrap_or(&train_table), manifest, task, range, "test")?
            }
            None => TaskData::empty(manifest.inputs.len()),
        });
    }
    let names = manifest.tasks.iter().map(|t| t.name.clone()).collect();
    Ok(Split { train: MultiTaskDataset::with_names(train, names)?, test })
}

/// Loads one of the built-in benchmark splits from `dir`.
pub fn load_split<T: Real>(name: SplitName, dir: &Path) -> Result<Split<T>> {
    load_with_manifest(&name.manifest(), dir)
}

/// Writes files of the right shape for `manifest` (values from `value(row,
/// column)`); used to exercise the loaders without the real data.
pub fn write_placeholder_files(manifest: &Manifest, dir: &Path, value: impl Fn(usize, usize) -> f64) -> Result<()> {
    let mut columns: Vec<String> = if manifest.header {
        let mut c: Vec<String> = manifest.inputs.iter().filter_map(|i| i.column.clone()).collect();
        c.extend(manifest.tasks.iter().map(|t| t.column.clone()));
        c.dedup();
        c
    } else {
        manifest.columns.clone()
    };
    if columns.is_empty() {
        columns.push("unused".into());
    }
    let write = |files: &[String], rows: usize| -> Result<()> {
        let per_file = rows.div_ceil(files.len().max(1));
        for (k, f) in files.iter().enumerate() {
            let mut out = String::new();
            if manifest.header {
                out.push_str(&columns.join(","));
                out.push('\n');
            }
            let lo = k * per_file;
            let hi = rows.min(lo + per_file);
            for r in lo..hi {
                let fields: Vec<String> = (0..columns.len()).map(|c| format!("{}", value(r, c))).collect();
                out.push_str(&fields.join(","));
                out.push('\n');
            }
            std::fs::write(dir.join(f), out)?;
        }
        Ok(())
    };
    write(&manifest.files, manifest.expected_rows)?;
    if !manifest.test_files.is_empty() {
        write(&manifest.test_files, manifest.expected_test_rows.unwrap_or(1))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scratch_dir(tag: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("mtgp-splits-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn manifests_parse_and_names_round_trip() {
        for n in SplitName::ALL {
            assert_eq!(n.manifest().name, n.as_str());
            assert_eq!(n.as_str().parse::<SplitName>().unwrap(), n);
        }
        assert!("mnist".parse::<SplitName>().is_err());
    }

    #[test]
    fn jura_protocol() {
        let dir = scratch_dir("jura");
        let m = SplitName::Jura.manifest();
        write_placeholder_files(&m, &dir, |r, c| (r * 7 + c) as f64).unwrap();
        let s = load_split::<f64>(SplitName::Jura, &dir).unwrap();
        assert_eq!(s.train.task_sizes(), vec![259, 359, 359]);
        assert_eq!(s.test.iter().map(TaskData::len).collect::<Vec<_>>(), vec![100, 0, 0]);
        assert_eq!(s.train.input_dim(), 2);
        // test Cd rows are the last 100 positions
        assert_eq!(s.test[0].x[(0, 0)], (259 * 7) as f64);
        assert_eq!(s.target_tasks(), vec![0]);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn eeg_protocol_and_time_input() {
        let dir = scratch_dir("eeg");
        write_placeholder_files(&SplitName::Eeg.manifest(), &dir, |r, c| (r + c) as f64).unwrap();
        let s = load_split::<f64>(SplitName::Eeg, &dir).unwrap();
        assert_eq!(s.train.task_sizes(), vec![156, 156, 156, 256, 256, 256, 256]);
        for c in 0..3 {
            assert_eq!(s.test[c].len(), 100);
        }
        assert_eq!(s.train.tasks[3].x[(0, 0)], 0.0);
        assert_eq!(s.train.tasks[3].x[(255, 0)], 1.0);
        assert!(s.test[0].x[(0, 0)] > s.train.tasks[0].x[(155, 0)]);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn protocol_size_violations() {
        let dir = scratch_dir("bad");
        let mut m = SplitName::Jura.manifest();
        m.expected_rows = 300;
        write_placeholder_files(&m, &dir, |_, _| 1.0).unwrap();
        assert!(matches!(load_split::<f64>(SplitName::Jura, &dir), Err(Error::SizeMismatch(_))));
        std::fs::write(dir.join("jura.csv"), "X,Y,Cd\n1,2,3\n").unwrap();
        assert!(matches!(load_split::<f64>(SplitName::Jura, &dir), Err(Error::SchemaMismatch(_))));
        assert!(matches!(load_split::<f64>(SplitName::Eeg, &dir), Err(Error::MissingFile(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn whitespace_tables_are_accepted() {
        let t = parse_table("a b\n1 2\n3   4\n", true, &[], "t").unwrap();
        assert_eq!(t.rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
