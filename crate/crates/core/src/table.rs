//! Minimal column-oriented table used by every detection and training path.
//!
//! Columns are either numeric (`f64`) or categorical (sorted level list plus
//! per-row codes). Categorical levels are kept sorted so results never depend
//! on row order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    levels: Vec<String>,
    codes: Vec<u32>,
}

impl Categorical {
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut levels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        levels.sort();
        levels.dedup();
        let index: BTreeMap<&str, u32> =
            levels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();
        let codes = labels.iter().map(|s| index[s.as_ref()]).collect();
        Categorical { levels, codes }
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn label(&self, row: usize) -> &str {
        &self.levels[self.codes[row] as usize]
    }

    /// Row counts per level, indexed like [`Categorical::levels`].
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.levels.len()];
        for &c in &self.codes {
            counts[c as usize] += 1;
        }
        counts
    }

    pub fn select(&self, rows: &[usize]) -> Categorical {
        Categorical {
            levels: self.levels.clone(),
            codes: rows.iter().map(|&r| self.codes[r]).collect(),
        }
    }

    /// Drops levels that no row uses.
    pub fn compact(&self) -> Categorical {
        let labels: Vec<&str> = (0..self.len()).map(|r| self.label(r)).collect();
        Categorical::from_labels(&labels)
    }

    /// Crosses several categorical vectors into one joint grouping ("a|b").
    pub fn joint(parts: &[&Categorical]) -> Result<Categorical> {
        let n = parts.first().map_or(0, |p| p.len());
        if let Some(p) = parts.iter().find(|p| p.len() != n) {
            return Err(Error::LengthMismatch { left: n, right: p.len() });
        }
        let labels: Vec<String> = (0..n)
            .map(|r| parts.iter().map(|p| p.label(r)).collect::<Vec<_>>().join("|"))
            .collect();
        Ok(Categorical::from_labels(&labels))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Categorical),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Column::Numeric(_))
    }

    /// Grouping view of the column; numeric values become their textual form.
    pub fn to_categorical(&self) -> Categorical {
        match self {
            Column::Categorical(c) => c.clone(),
            Column::Numeric(v) => {
                let labels: Vec<String> = v.iter().map(|x| format_number(*x)).collect();
                Categorical::from_labels(&labels)
            }
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical(c) => Column::Categorical(c.select(rows)),
        }
    }

    fn cell(&self, row: usize) -> String {
        match self {
            Column::Numeric(v) => format_number(v[row]),
            Column::Categorical(c) => c.label(row).to_string(),
        }
    }

    /// Interprets the column as a 0/1 outcome. Numeric columns compare against
    /// `positive` parsed as a number, categorical ones against the level text.
    pub fn binary(&self, name: &str, positive: &str) -> Result<Vec<bool>> {
        let not_binary = || Error::NotBinary { column: name.to_string() };
        match self {
            Column::Numeric(v) => {
                let target: f64 = positive.parse().map_err(|_| not_binary())?;
                if v.iter().any(|x| *x != 0.0 && *x != 1.0 && *x != target) {
                    return Err(not_binary());
                }
                Ok(v.iter().map(|x| *x == target).collect())
            }
            Column::Categorical(c) => {
                if c.levels().len() > 2 {
                    return Err(not_binary());
                }
                Ok((0..c.len()).map(|r| c.label(r) == positive).collect())
            }
        }
    }
}

pub(crate) fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Column>,
}

impl Table {
    pub fn new() -> Self {
        Table::default()
    }

    pub fn with_column(mut self, name: &str, column: Column) -> Result<Self> {
        self.push(name, column)?;
        Ok(self)
    }

    pub fn push(&mut self, name: &str, column: Column) -> Result<()> {
        if let Some(first) = self.columns.first() {
            if first.len() != column.len() {
                return Err(Error::LengthMismatch { left: first.len(), right: column.len() });
            }
        }
        if let Some(i) = self.names.iter().position(|n| n == name) {
            self.columns[i] = column;
        } else {
            self.names.push(name.to_string());
            self.columns.push(column);
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Categorical(_) => Err(Error::SchemaError(format!("column {name} is not numeric"))),
        }
    }

    pub fn categorical(&self, name: &str) -> Result<Categorical> {
        Ok(self.column(name)?.to_categorical())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
        }
    }

    /// Copy holding only the named columns, in the given order.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Table> {
        let mut out = Table::new();
        for n in names {
            out.push(n.as_ref(), self.column(n.as_ref())?.clone())?;
        }
        Ok(out)
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &Column)> {
        self.names.iter().map(String::as_str).zip(self.columns.iter())
    }

    /// Reads a headed CSV file. A column is numeric when every cell parses as a
    /// number, categorical otherwise.
    pub fn read_csv(path: &Path) -> Result<Table> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); names.len()];
        for record in reader.records() {
            let record = record?;
            for (i, v) in record.iter().enumerate() {
                cells[i].push(v.to_string());
            }
        }
        let mut table = Table::new();
        for (name, values) in names.iter().zip(cells) {
            let parsed: Option<Vec<f64>> = values.iter().map(|v| v.trim().parse().ok()).collect();
            let column = match parsed {
                Some(nums) if !values.is_empty() => Column::Numeric(nums),
                _ => Column::Categorical(Categorical::from_labels(&values)),
            };
            table.push(name, column)?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(&self.names)?;
        for row in 0..self.n_rows() {
            writer.write_record(self.columns.iter().map(|c| c.cell(row)))?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorical_levels_are_sorted_and_coded() {
        let c = Categorical::from_labels(&["b", "a", "b", "c"]);
        assert_eq!(c.levels(), &["a", "b", "c"]);
        assert_eq!(c.codes(), &[1, 0, 1, 2]);
        assert_eq!(c.counts(), vec![1, 2, 1]);
    }

    #[test]
    fn joint_grouping_crosses_labels() {
        let a = Categorical::from_labels(&["x", "y", "x"]);
        let b = Categorical::from_labels(&["1", "1", "2"]);
        let j = Categorical::joint(&[&a, &b]).unwrap();
        assert_eq!(j.levels(), &["x|1", "x|2", "y|1"]);
    }

    #[test]
    fn push_rejects_ragged_columns() {
        let t = Table::new().with_column("a", Column::Numeric(vec![1.0, 2.0])).unwrap();
        assert!(matches!(
            t.with_column("b", Column::Numeric(vec![1.0])),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip_infers_types() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = Table::new()
            .with_column("x", Column::Numeric(vec![0.5, 1.0, 2.0]))
            .unwrap()
            .with_column("g", Column::Categorical(Categorical::from_labels(&["a", "b", "a"])))
            .unwrap();
        t.write_csv(&path).unwrap();
        assert_eq!(Table::read_csv(&path).unwrap(), t);
    }

    #[test]
    fn binary_view_of_numeric_and_categorical() {
        let num = Column::Numeric(vec![0.0, 1.0, 1.0]);
        assert_eq!(num.binary("y", "1").unwrap(), vec![false, true, true]);
        assert!(Column::Numeric(vec![0.0, 2.0]).binary("y", "1").is_err());
        let cat = Column::Categorical(Categorical::from_labels(&["<=50K", ">50K"]));
        assert_eq!(cat.binary("y", ">50K").unwrap(), vec![false, true]);
    }
}
