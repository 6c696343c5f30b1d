//! File formats: OBJ and legacy ASCII VTK surfaces, CSV tables.

mod obj;
mod table;
mod vtk;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::mesh::{MeshError, TriMesh};

pub use obj::{read_obj, write_obj};
pub use table::{
    read_csv, read_fiber_params, read_samples, write_csv, write_fiber_params, write_samples, FiberRecord,
    HistoryRecord, SampleRecord,
};
pub use vtk::{read_vtk, write_vtk, Attribute, PolyData};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
}

impl IoError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Self::Parse { line, msg: msg.into() }
    }
}

pub(crate) fn open(path: &Path) -> Result<std::fs::File, IoError> {
    std::fs::File::open(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn create(path: &Path) -> Result<std::fs::File, IoError> {
    std::fs::File::create(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Supported surface formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Vtk,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(Self::Obj),
            "vtk" => Some(Self::Vtk),
            _ => None,
        }
    }
}

/// Loads a surface, choosing the format from the extension unless given.
pub fn load_mesh(path: &Path, format: Option<MeshFormat>) -> Result<TriMesh, IoError> {
    let format = format
        .or_else(|| MeshFormat::from_path(path))
        .ok_or_else(|| IoError::Format(format!("{}: unknown mesh format", path.display())))?;
    let file = std::io::BufReader::new(open(path)?);
    match format {
        MeshFormat::Obj => read_obj(file),
        MeshFormat::Vtk => read_vtk(file).map(|d| d.mesh),
    }
}

pub fn save_mesh(path: &Path, mesh: &TriMesh) -> Result<(), IoError> {
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| IoError::Format(format!("{}: unknown mesh format", path.display())))?;
    let mut file = std::io::BufWriter::new(create(path)?);
    match format {
        MeshFormat::Obj => write_obj(&mut file, mesh),
        MeshFormat::Vtk => write_vtk(&mut file, &PolyData::new(mesh.clone())),
    }
}

/// Writes a surface with its attributes as legacy VTK.
pub fn save_poly_data(path: &Path, data: &PolyData) -> Result<(), IoError> {
    let mut file = std::io::BufWriter::new(create(path)?);
    write_vtk(&mut file, data)?;
    file.flush().map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_poly_data(path: &Path) -> Result<PolyData, IoError> {
    read_vtk(std::io::BufReader::new(open(path)?))
}

/// Splits a polygon into a triangle fan around its first corner.
pub(crate) fn fan(poly: &[usize]) -> impl Iterator<Item = [usize; 3]> + '_ {
    (1..poly.len().saturating_sub(1)).map(move |i| [poly[0], poly[i], poly[i + 1]])
}
