//! Firm-year panel: ingestion, validation, centering and CSV output.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column vectors of a panel before validation.
#[derive(Debug, Clone, Default)]
pub struct PanelColumns {
    pub firm: Vec<i64>,
    pub year: Vec<i64>,
    pub y: Vec<f64>,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub m: Vec<f64>,
    pub e: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub z_names: Vec<String>,
    pub d: Option<Vec<f64>>,
}

/// Validated firm-year panel in firm-major, year-ascending order.
///
/// `y` is log output, `k, l` log capital and labor, `m, e, w` the logs of
/// the three intermediate inputs (materials, electricity, water), `z` the
/// control columns and `d` an optional 0/1 treatment flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub firm: Vec<i64>,
    pub year: Vec<i64>,
    pub y: Vec<f64>,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub m: Vec<f64>,
    pub e: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub z_names: Vec<String>,
    pub d: Option<Vec<f64>>,
    groups: Vec<Range<usize>>,
}

impl Panel {
    pub fn from_columns(c: PanelColumns) -> Result<Panel> {
        let n = c.firm.len();
        let lens = [
            ("year", c.year.len()),
            ("y", c.y.len()),
            ("k", c.k.len()),
            ("l", c.l.len()),
            ("m", c.m.len()),
            ("e", c.e.len()),
            ("w", c.w.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::DimensionMismatch(format!(
                    "column {name} has {len} rows, firm has {n}"
                )));
            }
        }
        if c.z.len() != c.z_names.len() {
            return Err(Error::DimensionMismatch(
                "z columns and z names differ in count".into(),
            ));
        }
        for (zc, name) in c.z.iter().zip(&c.z_names) {
            if zc.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "column {name} has {} rows, firm has {n}",
                    zc.len()
                )));
            }
        }
        if let Some(d) = &c.d {
            if d.len() != n {
                return Err(Error::DimensionMismatch("column d".into()));
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (c.firm[i], c.year[i]));
        let pick_f = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_i = |v: &[i64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();

        let p = Panel {
            firm: pick_i(&c.firm),
            year: pick_i(&c.year),
            y: pick_f(&c.y),
            k: pick_f(&c.k),
            l: pick_f(&c.l),
            m: pick_f(&c.m),
            e: pick_f(&c.e),
            w: pick_f(&c.w),
            z: c.z.iter().map(|v| pick_f(v)).collect(),
            z_names: c.z_names.clone(),
            d: c.d.as_ref().map(|v| pick_f(v)),
            groups: Vec::new(),
        };
        // Report non-finite values against the caller's row numbering.
        for (name, col) in p.numeric_columns() {
            if let Some(pos) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row: order[pos],
                    column: name,
                });
            }
        }
        p.with_groups()
    }

    fn with_groups(mut self) -> Result<Panel> {
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=self.firm.len() {
            if i == self.firm.len() || self.firm[i] != self.firm[start] {
                groups.push(start..i);
                start = i;
            } else if self.year[i] == self.year[i - 1] {
                return Err(Error::DuplicateObservation {
                    firm: self.firm[i],
                    year: self.year[i],
                });
            }
        }
        self.groups = groups;
        Ok(self)
    }

    /// Named numeric columns in CSV order.
    pub fn numeric_columns(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("y".into(), &self.y),
            ("k".into(), &self.k),
            ("l".into(), &self.l),
            ("m".into(), &self.m),
            ("e".into(), &self.e),
            ("w".into(), &self.w),
        ];
        for (name, col) in self.z_names.iter().zip(&self.z) {
            out.push((name.clone(), col));
        }
        if let Some(d) = &self.d {
            out.push(("d".into(), d));
        }
        out
    }

    pub fn n_obs(&self) -> usize {
        self.firm.len()
    }

    pub fn n_firms(&self) -> usize {
        self.groups.len()
    }

    pub fn d_z(&self) -> usize {
        self.z.len()
    }

    /// Contiguous row ranges, one per firm.
    pub fn firm_groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    /// Row index of the previous year for the same firm, if that year is
    /// present (gaps break the lag).
    pub fn lag_index(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n_obs()];
        for g in &self.groups {
            for (i, slot) in out.iter_mut().enumerate().take(g.end).skip(g.start + 1) {
                if self.year[i] == self.year[i - 1] + 1 {
                    *slot = Some(i - 1);
                }
            }
        }
        out
    }

    /// Sub-panel keeping the given rows (must preserve firm-major order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Panel> {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Panel::from_columns(PanelColumns {
            firm: rows.iter().map(|&i| self.firm[i]).collect(),
            year: rows.iter().map(|&i| self.year[i]).collect(),
            y: pick(&self.y),
            k: pick(&self.k),
            l: pick(&self.l),
            m: pick(&self.m),
            e: pick(&self.e),
            w: pick(&self.w),
            z: self.z.iter().map(|c| pick(c)).collect(),
            z_names: self.z_names.clone(),
            d: self.d.as_ref().map(|c| pick(c)),
        })
    }

    pub fn to_columns(&self) -> PanelColumns {
        PanelColumns {
            firm: self.firm.clone(),
            year: self.year.clone(),
            y: self.y.clone(),
            k: self.k.clone(),
            l: self.l.clone(),
            m: self.m.clone(),
            e: self.e.clone(),
            w: self.w.clone(),
            z: self.z.clone(),
            z_names: self.z_names.clone(),
            d: self.d.clone(),
        }
    }

    /// Writes the panel as `firm,year,y,k,l,m,e,w[,z...][,d]`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["firm".to_string(), "year".to_string()];
        header.extend(self.numeric_columns().into_iter().map(|(n, _)| n));
        wtr.write_record(&header)?;
        let cols = self.numeric_columns();
        for i in 0..self.n_obs() {
            let mut rec = vec![self.firm[i].to_string(), self.year[i].to_string()];
            rec.extend(cols.iter().map(|(_, c)| format_float(c[i])));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Maps the logical panel columns to header names in the input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub firm: String,
    pub year: String,
    pub y: String,
    pub k: String,
    pub l: String,
    pub m: String,
    pub e: String,
    pub w: String,
    /// Control columns. `None` picks up every header of the form `z<digits>`.
    pub z: Option<Vec<String>>,
    /// Treatment flag column; used only if present in the header.
    pub d: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            firm: "firm".into(),
            year: "year".into(),
            y: "y".into(),
            k: "k".into(),
            l: "l".into(),
            m: "m".into(),
            e: "e".into(),
            w: "w".into(),
            z: None,
            d: Some("d".into()),
        }
    }
}

/// Reads a comma-separated panel with a header row.
pub fn load_panel<R: Read>(source: R, schema: &Schema) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let require = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let i_firm = require(&schema.firm)?;
    let i_year = require(&schema.year)?;
    let req = [
        &schema.y, &schema.k, &schema.l, &schema.m, &schema.e, &schema.w,
    ];
    let mut i_req = Vec::with_capacity(6);
    for name in req {
        i_req.push(require(name)?);
    }
    let z_names: Vec<String> = match &schema.z {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .filter(|h| {
                h.len() > 1 && h.starts_with('z') && h[1..].chars().all(|c| c.is_ascii_digit())
            })
            .map(str::to_string)
            .collect(),
    };
    let mut i_z = Vec::with_capacity(z_names.len());
    for name in &z_names {
        i_z.push(require(name)?);
    }
    let i_d = schema
        .d
        .as_ref()
        .and_then(|n| index.get(n.as_str()).copied());

    let mut cols = PanelColumns {
        z: vec![Vec::new(); z_names.len()],
        z_names: z_names.clone(),
        d: i_d.map(|_| Vec::new()),
        ..Default::default()
    };
    let names: Vec<&str> = req.iter().map(|s| s.as_str()).collect();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let int = |i: usize, col: &str| -> Result<i64> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<i64>().map_err(|_| Error::Parse {
                row,
                column: col.to_string(),
                value: raw.to_string(),
            })
        };
        let num = |i: usize, col: &str| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            let v = raw.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: col.to_string(),
                value: raw.to_string(),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite {
                    row,
                    column: col.to_string(),
                })
            }
        };
        cols.firm.push(int(i_firm, &schema.firm)?);
        cols.year.push(int(i_year, &schema.year)?);
        let targets = [
            &mut cols.y,
            &mut cols.k,
            &mut cols.l,
            &mut cols.m,
            &mut cols.e,
            &mut cols.w,
        ];
        for ((t, &i), name) in targets.into_iter().zip(&i_req).zip(&names) {
            t.push(num(i, name)?);
        }
        for (j, &i) in i_z.iter().enumerate() {
            cols.z[j].push(num(i, &z_names[j])?);
        }
        if let (Some(i), Some(d)) = (i_d, cols.d.as_mut()) {
            d.push(num(i, "d")?);
        }
    }
    if cols.firm.is_empty() {
        return Err(Error::Empty("panel has no rows".into()));
    }
    Panel::from_columns(cols)
}

/// Grand means of the panel columns, kept for intercept recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeans {
    pub y: f64,
    pub k: f64,
    pub l: f64,
    pub m: f64,
    pub e: f64,
    pub w: f64,
    pub z: Vec<f64>,
}

/// Panel with every numeric column (except the treatment flag) centered at
/// its grand mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredPanel {
    pub data: Panel,
    pub means: ColumnMeans,
    /// Centered nuisance basis of the centered controls.
    pub basis: Vec<Vec<f64>>,
    pub basis_degree: usize,
}

impl CenteredPanel {
    /// Rebuilds the nuisance basis at a different polynomial degree.
    pub fn with_basis_degree(mut self, degree: usize) -> Result<Self> {
        self.basis = centered_basis(&self.data.z, degree)?;
        self.basis_degree = degree;
        Ok(self)
    }

    pub fn basis_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn n_obs(&self) -> usize {
        self.data.n_obs()
    }

    pub fn n_firms(&self) -> usize {
        self.data.n_firms()
    }

    pub fn raw_k(&self) -> Vec<f64> {
        self.data.k.iter().map(|v| v + self.means.k).collect()
    }

    pub fn raw_l(&self) -> Vec<f64> {
        self.data.l.iter().map(|v| v + self.means.l).collect()
    }
}

/// Compensated (Neumaier) mean.
fn accurate_mean(x: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in x {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    (sum + comp) / x.len() as f64
}

/// Centers `x` in place and returns the removed mean. A mean that is
/// negligible against the column scale is treated as zero, which makes
/// centering idempotent.
fn center_column(x: &mut [f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut total = 0.0;
    // Repeat until the residual mean is negligible so the result is a fixed
    // point of centering.
    for _ in 0..8 {
        let mu = accurate_mean(x);
        if mu.abs() <= 8.0 * f64::EPSILON * scale {
            break;
        }
        x.iter_mut().for_each(|v| *v -= mu);
        total += mu;
    }
    total
}

/// Centers every column at its grand mean.
pub fn demean(p: &Panel) -> Result<CenteredPanel> {
    if p.n_obs() == 0 {
        return Err(Error::Empty("cannot center an empty panel".into()));
    }
    let mut c = p.clone();
    let means = ColumnMeans {
        y: center_column(&mut c.y),
        k: center_column(&mut c.k),
        l: center_column(&mut c.l),
        m: center_column(&mut c.m),
        e: center_column(&mut c.e),
        w: center_column(&mut c.w),
        z: c.z.iter_mut().map(|col| center_column(col)).collect(),
    };
    let basis = centered_basis(&c.z, DEFAULT_BASIS_DEGREE)?;
    Ok(CenteredPanel {
        data: c,
        means,
        basis,
        basis_degree: DEFAULT_BASIS_DEGREE,
    })
}

/// Degree of the control polynomial used unless overridden.
pub const DEFAULT_BASIS_DEGREE: usize = 2;

fn centered_basis(z: &[Vec<f64>], degree: usize) -> Result<Vec<Vec<f64>>> {
    let mut b = crate::basis::nuisance_basis(z, degree)?;
    for col in &mut b {
        center_column(col);
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_ROWS: &str =
        "firm,year,y,k,l,m,e,w\n1,2001,1.0,0.5,0.2,0.3,0.1,0.0\n1,2000,3.0,0.7,0.4,0.1,0.2,0.1\n";

    #[test]
    fn minimal_csv_loads_sorted() {
        let p = load_panel(TWO_ROWS.as_bytes(), &Schema::default()).unwrap();
        assert_eq!(p.n_obs(), 2);
        assert_eq!(p.n_firms(), 1);
        assert_eq!(p.year, vec![2000, 2001]);
        assert_eq!(p.y, vec![3.0, 1.0]);
        assert_eq!(p.d_z(), 0);
        assert!(p.d.is_none());
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "firm,year,y,k,l,m,e\n1,2000,1,1,1,1,1\n";
        match load_panel(csv.as_bytes(), &Schema::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_rejected_with_row_index() {
        let csv = "firm,year,y,k,l,m,e,w\n1,2000,1,1,1,1,1,1\n1,2001,NaN,1,1,1,1,1\n";
        match load_panel(csv.as_bytes(), &Schema::default()) {
            Err(Error::NonFinite { row, column }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_firm_year_rejected() {
        let csv = "firm,year,y,k,l,m,e,w\n1,2000,1,1,1,1,1,1\n1,2000,2,1,1,1,1,1\n";
        assert!(matches!(
            load_panel(csv.as_bytes(), &Schema::default()),
            Err(Error::DuplicateObservation {
                firm: 1,
                year: 2000
            })
        ));
    }

    #[test]
    fn controls_and_treatment_detected() {
        let csv =
            "firm,year,y,k,l,m,e,w,z1,z2,d\n2,1,1,1,1,1,1,1,0.5,0.1,1\n1,1,1,1,1,1,1,1,0.2,0.3,0\n";
        let p = load_panel(csv.as_bytes(), &Schema::default()).unwrap();
        assert_eq!(p.z_names, vec!["z1", "z2"]);
        assert_eq!(p.z[0], vec![0.2, 0.5]);
        assert_eq!(p.d.as_ref().unwrap(), &vec![0.0, 1.0]);
        assert_eq!(p.n_firms(), 2);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = load_panel(TWO_ROWS.as_bytes(), &Schema::default()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = load_panel(buf.as_slice(), &Schema::default()).unwrap();
        assert_eq!(p, q);
    }

    fn panel_with_y(y: Vec<f64>) -> Panel {
        let n = y.len();
        Panel::from_columns(PanelColumns {
            firm: (0..n as i64).collect(),
            year: vec![1; n],
            y,
            k: vec![0.0; n],
            l: vec![0.0; n],
            m: vec![0.0; n],
            e: vec![0.0; n],
            w: vec![0.0; n],
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn demean_examples() {
        let c = demean(&panel_with_y(vec![1.0, 3.0])).unwrap();
        assert_eq!(c.data.y, vec![-1.0, 1.0]);
        assert_eq!(c.means.y, 2.0);

        let c = demean(&panel_with_y(vec![-1.0, 1.0])).unwrap();
        assert_eq!(c.data.y, vec![-1.0, 1.0]);
        assert_eq!(c.means.y, 0.0);

        let c = demean(&panel_with_y(vec![0.1, 0.2, 0.6])).unwrap();
        let want = [-0.2, -0.1, 0.3];
        for (a, b) in c.data.y.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((c.means.y - 0.3).abs() < 1e-15);
    }

    #[test]
    fn demean_empty_fails() {
        let p = Panel::from_columns(PanelColumns::default()).unwrap();
        assert!(demean(&p).is_err());
    }

    proptest! {
        #[test]
        fn centering_is_idempotent_and_zero_mean(
            y in proptest::collection::vec(-50.0f64..50.0, 1..60)
        ) {
            let c1 = demean(&panel_with_y(y)).unwrap();
            prop_assert!(accurate_mean(&c1.data.y).abs() < 1e-12);
            let c2 = demean(&c1.data).unwrap();
            prop_assert_eq!(&c1.data.y, &c2.data.y);
        }
    }
}
