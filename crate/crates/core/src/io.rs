//! File formats: trajectory CSV, system JSON, and index reports.
//!
//! Trajectory CSV has the header `k,u1..um,y1..yp` and one row per step.
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back gives bit-identical values. System files are JSON objects with
//! row-major `A`, `B`, `C` and the protected-sensor count `nu`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::index::{IndexResult, IndexValue};
use crate::linsys::{ComponentLayout, LtiSystem, Trajectory};

pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    header.extend((1..=traj.m()).map(|c| format!("u{c}")));
    header.extend((1..=traj.p()).map(|s| format!("y{s}")));
    w.write_record(&header)?;
    for k in 0..traj.len() {
        let mut row = vec![k.to_string()];
        row.extend(traj.u.column(k).iter().map(|v| v.to_string()));
        row.extend(traj.y.column(k).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0).map(str::trim) != Some("k") {
        return Err(Error::Parse("trajectory header must start with `k`".into()));
    }
    let mut m = 0;
    let mut p = 0;
    for (pos, name) in header.iter().enumerate().skip(1) {
        let name = name.trim();
        let expect_u = format!("u{}", m + 1);
        let expect_y = format!("y{}", p + 1);
        if p == 0 && name == expect_u {
            m += 1;
        } else if name == expect_y {
            p += 1;
        } else {
            return Err(Error::Parse(format!("unexpected column {name:?} at position {pos}")));
        }
    }
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 1 + m + p {
            return Err(Error::Parse(format!("row {row}: expected {} fields, got {}", 1 + m + p, rec.len())));
        }
        let k: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {row}: bad step index {:?}", &rec[0])))?;
        if k != row {
            return Err(Error::Parse(format!("row {row}: step index {k} out of order")));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Parse(format!("row {row}: bad number {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        cols.push(vals);
    }
    let n = cols.len();
    let u = DMatrix::from_fn(m, n, |c, k| cols[k][c]);
    let y = DMatrix::from_fn(p, n, |s, k| cols[k][m + s]);
    Trajectory::new(u, y)
}

pub fn save_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    write_trajectory(traj, File::create(path)?)
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    read_trajectory(File::open(path)?)
}

/// On-disk system description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub nu: usize,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>], cols_hint: Option<usize>) -> Result<DMatrix<f64>> {
    let cols = rows.first().map(Vec::len).or(cols_hint).unwrap_or(0);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(Error::Parse(format!("{name}: row {i} has {} entries, expected {cols}", r.len())));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl SystemFile {
    pub fn from_system(sys: &LtiSystem, nu: usize) -> Self {
        Self {
            a: to_rows(sys.a()),
            b: to_rows(sys.b()),
            c: to_rows(sys.c()),
            nu,
        }
    }

    pub fn into_system(&self) -> Result<(LtiSystem, ComponentLayout)> {
        let a = from_rows("A", &self.a, None)?;
        let b = from_rows("B", &self.b, None)?;
        let c = from_rows("C", &self.c, Some(a.ncols()))?;
        let sys = LtiSystem::new(a, b, c)?;
        let layout = ComponentLayout::for_system(&sys, self.nu)?;
        Ok((sys, layout))
    }
}

pub fn save_system(sys: &LtiSystem, nu: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &SystemFile::from_system(sys, nu))?;
    writeln!(f)?;
    Ok(())
}

pub fn load_system(path: impl AsRef<Path>) -> Result<(LtiSystem, ComponentLayout)> {
    let file: SystemFile = serde_json::from_reader(File::open(path)?)?;
    file.into_system()
}

impl<'de> Deserialize<'de> for IndexValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(IndexValue::Finite(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Run metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub n_samples: usize,
    pub l: usize,
    pub d: usize,
    /// Order the input was checked at, and whether it passed.
    pub pe_order: usize,
    pub pe_rank: usize,
    pub pe_ok: bool,
    pub tolerance: Option<f64>,
    pub seed: Option<u64>,
    pub max_card: Option<usize>,
    pub version: String,
}

/// One row of the per-component table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub component: String,
    pub delta: Option<IndexValue>,
    pub rho: Option<IndexValue>,
    pub rho_upper: Option<IndexValue>,
    pub delta_set: Option<Vec<String>>,
    pub rho_set: Option<Vec<String>>,
    pub rho_upper_set: Option<Vec<String>>,
    pub delta_seconds: Option<f64>,
    pub rho_seconds: Option<f64>,
    pub rho_upper_seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: ReportMeta,
    pub components: Vec<ComponentRow>,
}

/// Which index a result column holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Column {
    Delta,
    Rho,
    RhoUpper,
}

impl Report {
    /// Empty rows labelled for every component of `layout`.
    pub fn for_layout(layout: &ComponentLayout, meta: ReportMeta) -> Self {
        Self {
            meta,
            components: layout
                .components()
                .map(|j| ComponentRow {
                    component: layout.label(j),
                    ..Default::default()
                })
                .collect(),
        }
    }

    pub fn set(&mut self, layout: &ComponentLayout, column: Column, res: &IndexResult) {
        let row = &mut self.components[res.component];
        let set = res
            .witness_set
            .as_ref()
            .map(|g| g.iter().map(|&j| layout.label(j)).collect());
        match column {
            Column::Delta => {
                row.delta = Some(res.value);
                row.delta_set = set;
                row.delta_seconds = Some(res.elapsed);
            }
            Column::Rho => {
                row.rho = Some(res.value);
                row.rho_set = set;
                row.rho_seconds = Some(res.elapsed);
            }
            Column::RhoUpper => {
                row.rho_upper = Some(res.value);
                row.rho_upper_set = set;
                row.rho_upper_seconds = Some(res.elapsed);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Per-component table; absent values are empty cells and witness sets are
    /// space-separated labels.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "component",
            "delta",
            "rho",
            "rho_upper",
            "delta_set",
            "rho_set",
            "rho_upper_set",
            "delta_seconds",
            "rho_seconds",
            "rho_upper_seconds",
        ])?;
        for r in &self.components {
            w.write_record([
                r.component.clone(),
                opt(&r.delta),
                opt(&r.rho),
                opt(&r.rho_upper),
                set_cell(&r.delta_set),
                set_cell(&r.rho_set),
                set_cell(&r.rho_upper_set),
                opt(&r.delta_seconds),
                opt(&r.rho_seconds),
                opt(&r.rho_upper_seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plot-ready long table `component,index,value`.
    pub fn write_index_figure<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["component", "index", "value"])?;
        for r in &self.components {
            for (name, v) in [("delta", &r.delta), ("rho", &r.rho), ("rho_upper", &r.rho_upper)] {
                if let Some(v) = v {
                    w.write_record([r.component.as_str(), name, &v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Plot-ready long table `component,index,seconds`.
    pub fn write_time_figure<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["component", "index", "seconds"])?;
        for r in &self.components {
            for (name, v) in [
                ("delta", r.delta_seconds),
                ("rho", r.rho_seconds),
                ("rho_upper", r.rho_upper_seconds),
            ] {
                if let Some(v) = v {
                    w.write_record([r.component.as_str(), name, &v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn set_cell(v: &Option<Vec<String>>) -> String {
    v.as_ref().map(|s| s.join(" ")).unwrap_or_default()
}
