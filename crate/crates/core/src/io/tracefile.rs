//! On-disk run directories: `trace.csv`, `manifest.json`, and optional
//! `dispatch.csv`, `agents.csv`, `mean_field.csv`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{BusInfo, SimulationTrace};
use crate::sim::Mode;

pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AGENTS_FILE: &str = "agents.csv";
pub const MEAN_FIELD_FILE: &str = "mean_field.csv";
pub const DISPATCH_FILE: &str = "dispatch.csv";

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("no runs found under {0}")]
    Empty(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub storage_enabled: bool,
    pub hours: usize,
    pub n_buses: usize,
    pub n_days: usize,
    pub wall_time_s: f64,
    pub buses: Vec<BusInfo>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), TraceIoError> {
    let err = |source| TraceIoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| TraceIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, TraceIoError> {
    let err = |source| TraceIoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(err)
}

pub fn write_run(dir: &Path, trace: &SimulationTrace, manifest: &Manifest) -> Result<(), TraceIoError> {
    std::fs::create_dir_all(dir).map_err(|source| TraceIoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_csv(&dir.join(TRACE_FILE), &trace.records)?;
    if !trace.dispatch.is_empty() {
        let path = dir.join(DISPATCH_FILE);
        let err = |source| TraceIoError::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(&trace.dispatch_header).map_err(err)?;
        for row in &trace.dispatch {
            w.write_record(row).map_err(err)?;
        }
        w.flush().map_err(|source| TraceIoError::Io {
            path: path.clone(),
            source,
        })?;
    }
    if !trace.agents.is_empty() {
        write_csv(&dir.join(AGENTS_FILE), &trace.agents)?;
    }
    if !trace.mean_fields.is_empty() {
        write_csv(&dir.join(MEAN_FIELD_FILE), &trace.mean_fields)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let f = File::create(&path).map_err(|source| TraceIoError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::to_writer_pretty(BufWriter::new(f), manifest)
        .map_err(|source| TraceIoError::Json { path, source })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, TraceIoError> {
    let path = dir.join(MANIFEST_FILE);
    let f = File::open(&path).map_err(|source| TraceIoError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_reader(std::io::BufReader::new(f)).map_err(|source| TraceIoError::Json { path, source })
}

pub fn read_run(dir: &Path) -> Result<(SimulationTrace, Manifest), TraceIoError> {
    let m = read_manifest(dir)?;
    let records = read_csv(&dir.join(TRACE_FILE))?;
    let agents_path = dir.join(AGENTS_FILE);
    let agents = if agents_path.exists() {
        read_csv(&agents_path)?
    } else {
        Vec::new()
    };
    let mf_path = dir.join(MEAN_FIELD_FILE);
    let mean_fields = if mf_path.exists() {
        read_csv(&mf_path)?
    } else {
        Vec::new()
    };
    let d_path = dir.join(DISPATCH_FILE);
    let (dispatch_header, dispatch) = if d_path.exists() {
        let err = |source| TraceIoError::Csv {
            path: d_path.clone(),
            source,
        };
        let mut r = csv::Reader::from_path(&d_path).map_err(err)?;
        let header = r.headers().map_err(err)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        (header, rows)
    } else {
        (Vec::new(), Vec::new())
    };
    let trace = SimulationTrace {
        seed: m.seed,
        hours: m.hours,
        n_buses: m.n_buses,
        buses: m.buses.clone(),
        records,
        agents,
        mean_fields,
        dispatch_header,
        dispatch,
    };
    Ok((trace, m))
}

/// Run directories under `dir`: `dir` itself if it holds a manifest, else
/// every subdirectory that does, sorted by name.
pub fn find_runs(dir: &Path) -> Result<Vec<PathBuf>, TraceIoError> {
    if dir.join(MANIFEST_FILE).exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let rd = std::fs::read_dir(dir).map_err(|source| TraceIoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut runs: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).exists())
        .collect();
    if runs.is_empty() {
        return Err(TraceIoError::Empty(dir.to_path_buf()));
    }
    runs.sort();
    Ok(runs)
}
