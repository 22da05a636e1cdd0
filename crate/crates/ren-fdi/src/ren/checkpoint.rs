use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Col, Mat};

use super::materialize::{materialize, ExplicitRen};
use super::params::DirectParams;
use super::spec::{PerformanceSpec, RenDims, RenError};

/// Version string written into every checkpoint.
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint format version `{got}` (supported: `{supported}`)")]
    UnsupportedVersion { got: String, supported: String },
    #[error("checkpoint is inconsistent: {0}")]
    Invalid(#[from] RenError),
    #[error("bank directory {0} holds no filter checkpoints (filter_*.json)")]
    EmptyBank(PathBuf),
}

/// Free parameters as nested row-major arrays, the on-disk layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointParams {
    pub b2_imp: Vec<Vec<f64>>,
    pub c2: Vec<Vec<f64>>,
    pub d12_imp: Vec<Vec<f64>>,
    pub d21: Vec<Vec<f64>>,
    pub eta_tilde: Vec<f64>,
    pub x3: f64,
    pub y3: f64,
    pub z3: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y1: Vec<Vec<f64>>,
}

/// One trained (or freshly initialized) filter, everything needed to
/// reconstruct it exactly: dimensions, channel weights, fixed constants, the
/// seed it was initialized from and every free parameter. JSON round-trips
/// are bit-exact for finite values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: String,
    pub dims: RenDims,
    pub spec: PerformanceSpec,
    pub alpha_bar: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub params: CheckpointParams,
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_mat(rows: &[Vec<f64>], field: &'static str, nr: usize, nc: usize) -> Result<Mat, RenError> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(RenError::ShapeMismatch {
            field,
            got: format!("{}x{}", rows.len(), rows.first().map_or(0, Vec::len)),
            expected: format!("{nr}x{nc}"),
        });
    }
    Ok(Mat::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl Checkpoint {
    pub fn new(dims: RenDims, spec: PerformanceSpec, params: &DirectParams, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION.to_string(),
            dims,
            spec,
            alpha_bar: params.alpha_bar,
            epsilon: params.epsilon,
            seed,
            params: CheckpointParams {
                b2_imp: mat_to_rows(&params.b2_imp),
                c2: mat_to_rows(&params.c2),
                d12_imp: mat_to_rows(&params.d12_imp),
                d21: mat_to_rows(&params.d21),
                eta_tilde: params.eta_tilde.iter().copied().collect(),
                x3: params.x3,
                y3: params.y3,
                z3: params.z3.iter().copied().collect(),
                x: mat_to_rows(&params.x),
                y1: mat_to_rows(&params.y1),
            },
        }
    }

    /// Rebuilds the free parameters, validating shapes against the stored
    /// dimensions.
    pub fn to_params(&self) -> Result<DirectParams, CheckpointError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                got: self.format_version.clone(),
                supported: FORMAT_VERSION.to_string(),
            });
        }
        let (nz, nv, ni) = (self.dims.n_z(), self.dims.n_v(), self.dims.n_in());
        let gw = 2 * nz + nv;
        let p = &self.params;
        let eta_len = nz + nv + 1;
        if p.eta_tilde.len() != eta_len {
            return Err(RenError::ShapeMismatch {
                field: "eta_tilde",
                got: format!("{}", p.eta_tilde.len()),
                expected: format!("{eta_len}"),
            }
            .into());
        }
        if p.z3.len() != ni - 1 {
            return Err(RenError::ShapeMismatch {
                field: "z3",
                got: format!("{}", p.z3.len()),
                expected: format!("{}", ni - 1),
            }
            .into());
        }
        let params = DirectParams {
            b2_imp: rows_to_mat(&p.b2_imp, "b2_imp", nz, ni)?,
            c2: rows_to_mat(&p.c2, "c2", 1, nz)?,
            d12_imp: rows_to_mat(&p.d12_imp, "d12_imp", nv, ni)?,
            d21: rows_to_mat(&p.d21, "d21", 1, nv)?,
            eta_tilde: Col::from_column_slice(&p.eta_tilde),
            x3: p.x3,
            y3: p.y3,
            z3: Col::from_column_slice(&p.z3),
            x: rows_to_mat(&p.x, "x", gw, gw)?,
            y1: rows_to_mat(&p.y1, "y1", nz, nz)?,
            epsilon: self.epsilon,
            alpha_bar: self.alpha_bar,
        };
        Ok(params)
    }

    /// Materializes the stored filter.
    pub fn instantiate(&self) -> Result<ExplicitRen, CheckpointError> {
        let params = self.to_params()?;
        Ok(materialize(&self.dims, &self.spec, &params)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let body = serde_json::to_string_pretty(self).expect("checkpoint serialization");
        fs::write(path, body).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let body = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ck: Checkpoint = serde_json::from_str(&body).map_err(|source| CheckpointError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if ck.format_version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                got: ck.format_version,
                supported: FORMAT_VERSION.to_string(),
            });
        }
        Ok(ck)
    }
}

/// A bank of filters, one per sensor, ordered by the sensor they are designed
/// for.
#[derive(Clone, Debug)]
pub struct FilterBank {
    pub filters: Vec<Checkpoint>,
}

impl FilterBank {
    /// Writes `filter_<i>.json` per filter into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, CheckpointError> {
        fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut paths = Vec::new();
        for ck in &self.filters {
            let path = dir.join(format!("filter_{}.json", ck.spec.sensor_index()));
            ck.save(&path)?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// Loads every `filter_*.json` in `dir`, sorted by sensor index.
    pub fn load(dir: &Path) -> Result<Self, CheckpointError> {
        let entries = fs::read_dir(dir).map_err(|source| CheckpointError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut filters = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| CheckpointError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with("filter_") && name.ends_with(".json") {
                filters.push(Checkpoint::load(&entry.path())?);
            }
        }
        if filters.is_empty() {
            return Err(CheckpointError::EmptyBank(dir.to_path_buf()));
        }
        filters.sort_by_key(|ck| ck.spec.sensor_index());
        Ok(Self { filters })
    }

    /// Materializes every filter, in sensor order.
    pub fn instantiate(&self) -> Result<Vec<ExplicitRen>, CheckpointError> {
        self.filters.iter().map(Checkpoint::instantiate).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ren::{init_params, InitConfig};

    #[test]
    fn json_round_trip_is_bit_exact() {
        let dims = RenDims::new(4, 6, 6).unwrap();
        let spec = PerformanceSpec::with_defaults(3, 2, 4).unwrap();
        let params = init_params(&dims, &InitConfig::default(), 123).unwrap();
        let ck = Checkpoint::new(dims, spec, &params, 123);

        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let restored = back.to_params().unwrap();
        assert_eq!(params, restored);
        assert_eq!(back.seed, 123);
    }

    #[test]
    fn version_gate() {
        let dims = RenDims::new(2, 3, 6).unwrap();
        let spec = PerformanceSpec::with_defaults(1, 2, 4).unwrap();
        let params = init_params(&dims, &InitConfig::default(), 1).unwrap();
        let mut ck = Checkpoint::new(dims, spec, &params, 1);
        ck.format_version = "999".into();
        assert!(matches!(
            ck.to_params(),
            Err(CheckpointError::UnsupportedVersion { .. })
        ));
    }

    #[test]
    fn save_load_bank() {
        let tmp = tempfile::tempdir().unwrap();
        let dims = RenDims::new(3, 4, 6).unwrap();
        let mut filters = Vec::new();
        for i in 1..=4 {
            let spec = PerformanceSpec::with_defaults(i, 2, 4).unwrap();
            let params = init_params(&dims, &InitConfig::default(), i as u64).unwrap();
            filters.push(Checkpoint::new(dims, spec, &params, i as u64));
        }
        let bank = FilterBank { filters };
        bank.save(tmp.path()).unwrap();
        let back = FilterBank::load(tmp.path()).unwrap();
        assert_eq!(back.filters.len(), 4);
        for (a, b) in bank.filters.iter().zip(&back.filters) {
            assert_eq!(a.to_params().unwrap(), b.to_params().unwrap());
        }
        assert!(back.instantiate().is_ok());

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            FilterBank::load(empty.path()),
            Err(CheckpointError::EmptyBank(_))
        ));
    }
}
