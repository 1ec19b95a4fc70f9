//! Shared file formats: the signal JSON `{ "n": int, "nodal": [...] }` and its
//! CSV export with columns `x,value`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::circle::{Mesh, PLFunction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFile {
    pub n: u32,
    pub nodal: Vec<f64>,
}

impl SignalFile {
    pub fn from_function(f: &PLFunction) -> Self {
        SignalFile {
            n: f.mesh().level(),
            nodal: f.nodal().to_vec(),
        }
    }

    pub fn to_function(&self) -> Result<PLFunction> {
        PLFunction::new(Mesh::new(self.n)?, self.nodal.clone())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: SignalFile = read_json(path)?;
        if s.nodal.len() != 1usize << s.n {
            return Err(Error::Format(format!(
                "signal file has {} values for level {}",
                s.nodal.len(),
                s.n
            )));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// CSV with header `x,value` and one row per node `x = j/N`.
pub fn signal_csv(f: &PLFunction) -> String {
    columns_csv(&["value"], &[f.nodal()], f.mesh())
}

/// CSV with header `x,<names...>`; every column has one value per node.
pub fn columns_csv(names: &[&str], cols: &[&[f64]], mesh: Mesh) -> String {
    let mut out = String::from("x");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for j in 0..mesh.cells() {
        write!(out, "{}", mesh.node(j)).expect("string write");
        for c in cols {
            write!(out, ",{}", c[j]).expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
