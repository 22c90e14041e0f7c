//! Binary persistence: the snapshot store and model bundles.
//!
//! Both formats open with an 8-byte magic and a little-endian `u32` version plus a
//! reserved `u32`; integers are `u64` and floats `f64`, all little-endian, and
//! matrices are stored column-major.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::KnnClassifier;
use crate::error::{Error, Result};
use crate::fom::Problem;
use crate::pod::PodBasis;
use crate::regression::{
    EpochLog, FeatureScaler, Mlp, MlpRegressor, RbfRegressor, Regressor, TrainingLog,
};
use crate::rom::{Provenance, RomModel};
use crate::snapshot::{MappingKind, SampleSet, SamplingScheme, SnapshotLayout, SnapshotMatrix};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"CRKSNAP\0";
pub const BLOB_MAGIC: &[u8; 8] = b"CRKBLOB\0";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const BLOB_FILE: &str = "blobs.bin";

fn put_header(buf: &mut Vec<u8>, magic: &[u8; 8], version: u32) {
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: impl IntoIterator<Item = f64>) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], what: &'static str) -> Self {
        Self { data, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "{}: truncated, needed {n} bytes at offset {} of {}",
                    self.what,
                    self.pos,
                    self.data.len()
                ))
            })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .map_err(|_| Error::Format(format!("{}: size {v} out of range", self.what)))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::Format(format!("{}: array length {n} overflows", self.what))
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 8], version: u32) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::Format(format!("{}: bad magic", self.what)));
        }
        let v = self.u32()?;
        if v != version {
            return Err(Error::Format(format!(
                "{}: version {v}, expected {version}",
                self.what
            )));
        }
        self.u32()?;
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Writes through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Saves snapshots with their samples and a digest of the configuration that produced them.
///
/// Layout after the header: rows, cols, parameter dimension; the matrix; the
/// parameters sample by sample; scheme code and seed; the 32-byte digest.
pub fn save_snapshots(
    path: &Path,
    snapshots: &SnapshotMatrix,
    samples: &SampleSet,
    digest: &[u8; 32],
) -> Result<()> {
    if snapshots.parameters != samples.parameters {
        return Err(Error::Shape(
            "snapshot parameters differ from the sample set".into(),
        ));
    }
    let pdim = samples.dim();
    let mut buf = Vec::with_capacity(64 + 8 * snapshots.data.len());
    put_header(&mut buf, SNAPSHOT_MAGIC, SNAPSHOT_VERSION);
    put_u64(&mut buf, snapshots.nrows() as u64);
    put_u64(&mut buf, snapshots.ncols() as u64);
    put_u64(&mut buf, pdim as u64);
    put_f64s(&mut buf, snapshots.data.iter().copied());
    put_f64s(&mut buf, samples.parameters.iter().flatten().copied());
    put_u64(&mut buf, u64::from(samples.scheme.code()));
    put_u64(&mut buf, samples.seed);
    buf.extend_from_slice(digest);
    write_atomic(path, &buf)
}

/// Loads a snapshot store, rejecting it unless its digest equals `digest`.
pub fn load_snapshots(path: &Path, digest: &[u8; 32]) -> Result<(SnapshotMatrix, SampleSet)> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, "snapshot store");
    r.header(SNAPSHOT_MAGIC, SNAPSHOT_VERSION)?;
    let (rows, cols, pdim) = (r.usize()?, r.usize()?, r.usize()?);
    let data = r.f64s(
        rows.checked_mul(cols)
            .ok_or_else(|| Error::Format("snapshot store: size overflows".into()))?,
    )?;
    let flat = r.f64s(
        cols.checked_mul(pdim)
            .ok_or_else(|| Error::Format("snapshot store: size overflows".into()))?,
    )?;
    let code = r.u64()?;
    let scheme = u32::try_from(code)
        .ok()
        .and_then(SamplingScheme::from_code)
        .ok_or_else(|| Error::Format(format!("snapshot store: unknown sampling scheme {code}")))?;
    let seed = r.u64()?;
    let stored = r.take(32)?;
    r.finish()?;
    if stored != digest {
        return Err(Error::Incompatible(
            "snapshot store was produced by a different configuration".into(),
        ));
    }
    let parameters: Vec<Vec<f64>> = if pdim == 0 {
        vec![Vec::new(); cols]
    } else {
        flat.chunks_exact(pdim).map(<[f64]>::to_vec).collect()
    };
    let snapshots = SnapshotMatrix {
        data: DMatrix::from_vec(rows, cols, data),
        parameters: parameters.clone(),
    };
    Ok((
        snapshots,
        SampleSet {
            parameters,
            seed,
            scheme,
        },
    ))
}

/// Position of one array inside the blob file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    /// `f64` or `u64`.
    pub dtype: String,
    /// Byte offset from the start of the file.
    pub offset: u64,
    pub rows: u64,
    pub cols: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutInfo {
    pub kind: MappingKind,
    pub dim: usize,
    pub corridor: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierInfo {
    pub k: usize,
    pub minkowski_p: f64,
    pub bounds: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegressorInfo {
    Mlp {
        restart: usize,
        best_epoch: usize,
        stop_reason: String,
    },
    Rbf {
        eps: f64,
        ridge: f64,
        affine_tail: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub eps_pod: f64,
    pub regressor: RegressorInfo,
}

/// Versioned text manifest of a bundle directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Free-form text attached by the caller, such as the study configuration.
    pub attachment: String,
    pub blobs_sha256: String,
    pub provenance: Provenance,
    pub layout: LayoutInfo,
    pub classifier: ClassifierInfo,
    pub clusters: Vec<ClusterInfo>,
    pub problem: Problem,
    pub blobs: Vec<BlobEntry>,
}

struct BlobWriter {
    buf: Vec<u8>,
    entries: Vec<BlobEntry>,
}

impl BlobWriter {
    fn new() -> Self {
        let mut buf = Vec::new();
        put_header(&mut buf, BLOB_MAGIC, BUNDLE_VERSION);
        Self {
            buf,
            entries: Vec::new(),
        }
    }

    fn entry(&mut self, name: String, dtype: &str, rows: usize, cols: usize) {
        self.entries.push(BlobEntry {
            name,
            dtype: dtype.into(),
            offset: self.buf.len() as u64,
            rows: rows as u64,
            cols: cols as u64,
        });
    }

    fn f64s(
        &mut self,
        name: String,
        rows: usize,
        cols: usize,
        data: impl IntoIterator<Item = f64>,
    ) {
        self.entry(name, "f64", rows, cols);
        put_f64s(&mut self.buf, data);
    }

    fn vec(&mut self, name: String, v: &[f64]) {
        self.f64s(name, v.len(), 1, v.iter().copied());
    }

    fn matrix(&mut self, name: String, m: &DMatrix<f64>) {
        self.f64s(name, m.nrows(), m.ncols(), m.iter().copied());
    }

    fn rows(&mut self, name: String, rows: &[Vec<f64>]) {
        let cols = rows.first().map_or(0, Vec::len);
        // row-major points stored as a column-major `cols x n` matrix
        self.f64s(name, cols, rows.len(), rows.iter().flatten().copied());
    }

    fn u64s(&mut self, name: String, v: &[usize]) {
        self.entry(name, "u64", v.len(), 1);
        for &x in v {
            put_u64(&mut self.buf, x as u64);
        }
    }

    fn scaler(&mut self, prefix: &str, s: &FeatureScaler) {
        self.vec(format!("{prefix}.mu_min"), &s.mu_min);
        self.vec(format!("{prefix}.mu_max"), &s.mu_max);
        self.vec(format!("{prefix}.out_mean"), &s.out_mean);
        self.vec(format!("{prefix}.out_std"), &s.out_std);
    }
}

struct BlobReader<'a> {
    data: &'a [u8],
    entries: &'a [BlobEntry],
}

impl BlobReader<'_> {
    fn raw(&self, name: &str, dtype: &str) -> Result<(&BlobEntry, Reader<'_>)> {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("bundle: missing blob `{name}`")))?;
        if e.dtype != dtype {
            return Err(Error::Format(format!(
                "bundle: blob `{name}` has type {}, expected {dtype}",
                e.dtype
            )));
        }
        let start = usize::try_from(e.offset)
            .ok()
            .filter(|&o| o <= self.data.len())
            .ok_or_else(|| Error::Format(format!("bundle: blob `{name}` offset out of range")))?;
        Ok((e, Reader::new(&self.data[start..], "bundle blobs")))
    }

    fn dims(e: &BlobEntry) -> Result<(usize, usize)> {
        let r =
            usize::try_from(e.rows).map_err(|_| Error::Format("bundle: blob too large".into()))?;
        let c =
            usize::try_from(e.cols).map_err(|_| Error::Format("bundle: blob too large".into()))?;
        Ok((r, c))
    }

    fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let (e, mut r) = self.raw(name, "f64")?;
        let (rows, cols) = Self::dims(e)?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("bundle: blob `{name}` size overflows")))?;
        Ok(DMatrix::from_vec(rows, cols, r.f64s(n)?))
    }

    fn vec(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.matrix(name)?;
        if m.ncols() != 1 {
            return Err(Error::Format(format!(
                "bundle: blob `{name}` is not a vector"
            )));
        }
        Ok(m.as_slice().to_vec())
    }

    fn rows(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let m = self.matrix(name)?;
        Ok(m.column_iter()
            .map(|c| c.iter().copied().collect())
            .collect())
    }

    fn u64s(&self, name: &str) -> Result<Vec<usize>> {
        let (e, mut r) = self.raw(name, "u64")?;
        let (n, _) = Self::dims(e)?;
        (0..n).map(|_| r.usize()).collect()
    }

    fn scaler(&self, prefix: &str) -> Result<FeatureScaler> {
        Ok(FeatureScaler {
            mu_min: self.vec(&format!("{prefix}.mu_min"))?,
            mu_max: self.vec(&format!("{prefix}.mu_max"))?,
            out_mean: self.vec(&format!("{prefix}.out_mean"))?,
            out_std: self.vec(&format!("{prefix}.out_std"))?,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `manifest.toml` and `blobs.bin` into `dir`, creating it if needed.
/// The output depends only on the model and `attachment`.
pub fn save_bundle(dir: &Path, model: &RomModel, attachment: &str) -> Result<()> {
    model.check_consistency()?;
    let mut w = BlobWriter::new();
    w.rows("classifier.points".into(), &model.classifier.points);
    w.u64s("classifier.labels".into(), &model.classifier.labels);
    let mut clusters = Vec::with_capacity(model.n_clusters());
    for (k, (basis, reg)) in model.bases.iter().zip(&model.regressors).enumerate() {
        w.matrix(format!("basis{k}.v"), &basis.v);
        w.vec(format!("basis{k}.singular_values"), &basis.singular_values);
        let p = format!("regressor{k}");
        let info = match reg {
            Regressor::Mlp(m) => {
                w.u64s(format!("{p}.sizes"), &m.net.sizes);
                w.vec(format!("{p}.theta"), &m.net.theta);
                w.scaler(&format!("{p}.scaler"), &m.scaler);
                let log = &m.log;
                w.f64s(
                    format!("{p}.log.epochs"),
                    4,
                    log.epochs.len(),
                    log.epochs
                        .iter()
                        .flat_map(|e| [e.epoch as f64, e.train_mse, e.val_mse, e.lm_mu]),
                );
                w.u64s(format!("{p}.log.validation"), &log.validation);
                RegressorInfo::Mlp {
                    restart: log.restart,
                    best_epoch: log.best_epoch,
                    stop_reason: log.stop_reason.clone(),
                }
            }
            Regressor::Rbf(r) => {
                w.rows(format!("{p}.centers"), &r.centers);
                w.matrix(format!("{p}.weights"), &r.weights);
                if let Some(t) = &r.tail {
                    w.matrix(format!("{p}.tail"), t);
                }
                w.scaler(&format!("{p}.scaler"), &r.scaler);
                RegressorInfo::Rbf {
                    eps: r.eps,
                    ridge: r.ridge,
                    affine_tail: r.tail.is_some(),
                }
            }
        };
        clusters.push(ClusterInfo {
            eps_pod: basis.eps,
            regressor: info,
        });
    }
    let manifest = Manifest {
        format_version: BUNDLE_VERSION,
        attachment: attachment.to_owned(),
        blobs_sha256: hex(&Sha256::digest(&w.buf)),
        provenance: model.provenance.clone(),
        layout: LayoutInfo {
            kind: model.layout.kind.clone(),
            dim: model.layout.dim(),
            corridor: model.layout.corridor.len(),
        },
        classifier: ClassifierInfo {
            k: model.classifier.k,
            minkowski_p: model.classifier.minkowski_p,
            bounds: model.classifier.bounds.clone(),
        },
        clusters,
        problem: model.problem.clone(),
        blobs: w.entries,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Format(format!("cannot encode manifest: {e}")))?;
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(BLOB_FILE), &w.buf)?;
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}

/// Reads a bundle back; the layout is rebuilt from the stored problem and checked
/// against the manifest.
pub fn load_bundle(dir: &Path) -> Result<(RomModel, Manifest)> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    if manifest.format_version != BUNDLE_VERSION {
        return Err(Error::Format(format!(
            "bundle format {} is not supported (expected {BUNDLE_VERSION})",
            manifest.format_version
        )));
    }
    let data = fs::read(dir.join(BLOB_FILE))?;
    if hex(&Sha256::digest(&data)) != manifest.blobs_sha256 {
        return Err(Error::Format(
            "bundle blobs do not match the manifest checksum".into(),
        ));
    }
    Reader::new(&data, "bundle blobs").header(BLOB_MAGIC, BUNDLE_VERSION)?;
    let b = BlobReader {
        data: &data,
        entries: &manifest.blobs,
    };

    let layout = SnapshotLayout::for_problem(&manifest.problem)?;
    if layout.kind != manifest.layout.kind
        || layout.dim() != manifest.layout.dim
        || layout.corridor.len() != manifest.layout.corridor
    {
        return Err(Error::Incompatible(
            "stored layout differs from the one rebuilt from the problem".into(),
        ));
    }
    let c = &manifest.classifier;
    let classifier = KnnClassifier {
        points: b.rows("classifier.points")?,
        labels: b.u64s("classifier.labels")?,
        k: c.k,
        minkowski_p: c.minkowski_p,
        bounds: c.bounds.clone(),
    };
    if classifier.points.len() != classifier.labels.len() {
        return Err(Error::Format(
            "bundle: classifier points and labels differ in count".into(),
        ));
    }
    let mut bases = Vec::with_capacity(manifest.clusters.len());
    let mut regressors = Vec::with_capacity(manifest.clusters.len());
    for (k, info) in manifest.clusters.iter().enumerate() {
        bases.push(PodBasis {
            v: b.matrix(&format!("basis{k}.v"))?,
            singular_values: b.vec(&format!("basis{k}.singular_values"))?,
            eps: info.eps_pod,
        });
        let p = format!("regressor{k}");
        let reg = match &info.regressor {
            RegressorInfo::Mlp {
                restart,
                best_epoch,
                stop_reason,
            } => {
                let sizes = b.u64s(&format!("{p}.sizes"))?;
                let theta = b.vec(&format!("{p}.theta"))?;
                let expect = Mlp::new(
                    *sizes.first().unwrap_or(&0),
                    sizes.get(1..sizes.len().saturating_sub(1)).unwrap_or(&[]),
                    *sizes.last().unwrap_or(&0),
                )?
                .n_params();
                if theta.len() != expect {
                    return Err(Error::Format(format!(
                        "bundle: cluster {k} network has {} weights, expected {expect}",
                        theta.len()
                    )));
                }
                let epochs = b.matrix(&format!("{p}.log.epochs"))?;
                if epochs.nrows() != 4 && epochs.ncols() > 0 {
                    return Err(Error::Format(format!(
                        "bundle: cluster {k} training log is malformed"
                    )));
                }
                Regressor::Mlp(MlpRegressor {
                    net: Mlp { sizes, theta },
                    scaler: b.scaler(&format!("{p}.scaler"))?,
                    log: TrainingLog {
                        restart: *restart,
                        epochs: epochs
                            .column_iter()
                            .map(|e| EpochLog {
                                epoch: e[0] as usize,
                                train_mse: e[1],
                                val_mse: e[2],
                                lm_mu: e[3],
                            })
                            .collect(),
                        best_epoch: *best_epoch,
                        stop_reason: stop_reason.clone(),
                        validation: b.u64s(&format!("{p}.log.validation"))?,
                    },
                })
            }
            RegressorInfo::Rbf {
                eps,
                ridge,
                affine_tail,
            } => Regressor::Rbf(RbfRegressor {
                centers: b.rows(&format!("{p}.centers"))?,
                weights: b.matrix(&format!("{p}.weights"))?,
                tail: if *affine_tail {
                    Some(b.matrix(&format!("{p}.tail"))?)
                } else {
                    None
                },
                eps: *eps,
                ridge: *ridge,
                scaler: b.scaler(&format!("{p}.scaler"))?,
            }),
        };
        if let Regressor::Rbf(r) = &reg {
            let tail_ok = r
                .tail
                .as_ref()
                .map_or(true, |t| t.ncols() == r.weights.ncols());
            if r.centers.len() != r.weights.nrows() || !tail_ok {
                return Err(Error::Format(format!(
                    "bundle: cluster {k} interpolant is malformed"
                )));
            }
        }
        regressors.push(reg);
    }
    let model = RomModel {
        problem: manifest.problem.clone(),
        layout,
        classifier,
        bases,
        regressors,
        provenance: manifest.provenance.clone(),
    };
    model
        .check_consistency()
        .map_err(|e| Error::Format(format!("bundle: {e}")))?;
    Ok((model, manifest))
}
