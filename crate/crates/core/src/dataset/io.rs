//! Manifest-driven dataset ingestion and export.
//!
//! A dataset on disk is a JSON manifest next to two binary blobs:
//!
//! * `features_path`: row-major little-endian reals, `m * n` entries of
//!   the declared `dtype` (`"f32"` or `"f64"`). Files ending in `.csv`
//!   are instead parsed as headerless CSV (fallback for small data,
//!   `m * n <= 10^6` entries).
//! * `labels_path`: per row one little-endian `(u32 class, u32 group)`
//!   pair, or a CSV with header `index,class,group`.
//!
//! Paths are resolved relative to the manifest's directory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::EmbeddingDataset;

const CSV_FALLBACK_LIMIT: u64 = 1_000_000;

/// JSON sidecar describing a feature blob and its labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub features_path: String,
    pub dtype: String,
    pub m: u64,
    pub n: u64,
    pub classes: u32,
    pub groups: u32,
    pub group_to_class: Vec<u32>,
    pub labels_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        manifest.check()?;
        Ok(manifest)
    }

    fn check(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.n == 0 {
            return Err(Error::Manifest("n must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Manifest("at least 2 classes required".into()));
        }
        if self.dtype != "f32" && self.dtype != "f64" {
            return Err(Error::Manifest(format!(
                "dtype must be \"f32\" or \"f64\", got {:?}",
                self.dtype
            )));
        }
        if self.group_to_class.len() != self.groups as usize {
            return Err(Error::Manifest(format!(
                "group_to_class has {} entries for {} groups",
                self.group_to_class.len(),
                self.groups
            )));
        }
        Ok(())
    }

    fn dtype_size(&self) -> u64 {
        if self.dtype == "f32" {
            4
        } else {
            8
        }
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Load and validate a dataset from its manifest.
pub fn load_dataset<F: Scalar>(manifest_path: &Path) -> Result<EmbeddingDataset<F>> {
    let manifest = Manifest::read(manifest_path)?;
    let m = manifest.m as usize;
    let n = manifest.n as usize;

    let features_path = resolve(manifest_path, &manifest.features_path);
    let features = if manifest.features_path.ends_with(".csv") {
        if manifest.m * manifest.n > CSV_FALLBACK_LIMIT {
            return Err(Error::Manifest(format!(
                "csv feature fallback limited to {CSV_FALLBACK_LIMIT} entries, manifest declares {}",
                manifest.m * manifest.n
            )));
        }
        read_features_csv(&features_path, m, n)?
    } else {
        read_features_blob(&features_path, m, n, &manifest)?
    };

    let labels_path = resolve(manifest_path, &manifest.labels_path);
    let (class_labels, group_labels) = if manifest.labels_path.ends_with(".csv") {
        read_labels_csv(&labels_path, m)?
    } else {
        read_labels_blob(&labels_path, m)?
    };

    let name = manifest.name.clone().unwrap_or_else(|| {
        manifest_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });

    EmbeddingDataset::new(
        features,
        class_labels,
        group_labels,
        manifest.group_to_class,
        manifest.classes as usize,
        name,
    )
}

fn read_features_blob<F: Scalar>(
    path: &Path,
    m: usize,
    n: usize,
    manifest: &Manifest,
) -> Result<Array2<F>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let meta_len = file
        .metadata()
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .len();
    let expected = manifest.m * manifest.n * manifest.dtype_size();
    if meta_len != expected {
        return Err(Error::DimensionMismatch {
            expected: expected as usize,
            got: meta_len as usize,
            context: format!("feature blob bytes for {}", path.display()),
        });
    }
    let mut reader = BufReader::new(file);
    let mut features = Array2::zeros((m, n));
    // One row at a time keeps ingestion memory at O(n) beyond the matrix.
    let mut row = vec![0f64; n];
    for i in 0..m {
        if manifest.dtype == "f32" {
            for v in row.iter_mut() {
                *v = reader
                    .read_f32::<LittleEndian>()
                    .map_err(|e| Error::io(path.display().to_string(), e))?
                    as f64;
            }
        } else {
            reader
                .read_f64_into::<LittleEndian>(&mut row)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        for (j, &v) in row.iter().enumerate() {
            features[(i, j)] = F::from_f64_lossy(v);
        }
    }
    Ok(features)
}

fn read_features_csv<F: Scalar>(path: &Path, m: usize, n: usize) -> Result<Array2<F>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(BufReader::new(file));
    let mut features = Array2::zeros((m, n));
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Manifest(format!("feature csv: {e}")))?;
        if i >= m {
            rows = i + 1;
            break;
        }
        if record.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: record.len(),
                context: format!("feature csv row {i}"),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| Error::Manifest(format!("feature csv row {i} col {j}: {e}")))?;
            features[(i, j)] = F::from_f64_lossy(v);
        }
        rows = i + 1;
    }
    if rows != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: rows,
            context: "feature csv rows".into(),
        });
    }
    Ok(features)
}

fn read_labels_blob(path: &Path, m: usize) -> Result<(Vec<u32>, Vec<u32>)> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let meta_len = file
        .metadata()
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .len();
    let expected = m as u64 * 8;
    if meta_len != expected {
        return Err(Error::DimensionMismatch {
            expected: expected as usize,
            got: meta_len as usize,
            context: format!("label blob bytes for {}", path.display()),
        });
    }
    let mut reader = BufReader::new(file);
    let mut class_labels = Vec::with_capacity(m);
    let mut group_labels = Vec::with_capacity(m);
    for _ in 0..m {
        class_labels.push(
            reader
                .read_u32::<LittleEndian>()
                .map_err(|e| Error::io(path.display().to_string(), e))?,
        );
        group_labels.push(
            reader
                .read_u32::<LittleEndian>()
                .map_err(|e| Error::io(path.display().to_string(), e))?,
        );
    }
    Ok((class_labels, group_labels))
}

fn read_labels_csv(path: &Path, m: usize) -> Result<(Vec<u32>, Vec<u32>)> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(format!("label csv: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().map(|h| h.trim()).collect();
    if names != ["index", "class", "group"] {
        return Err(Error::Manifest(format!(
            "label csv header must be index,class,group, got {names:?}"
        )));
    }
    let mut class_labels = vec![0u32; m];
    let mut group_labels = vec![0u32; m];
    let mut seen = vec![false; m];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Manifest(format!("label csv: {e}")))?;
        let idx: usize = record[0]
            .trim()
            .parse()
            .map_err(|e| Error::Manifest(format!("label csv index: {e}")))?;
        if idx >= m {
            return Err(Error::Manifest(format!(
                "label csv index {idx} out of range 0..{m}"
            )));
        }
        class_labels[idx] = record[1]
            .trim()
            .parse()
            .map_err(|e| Error::Manifest(format!("label csv class: {e}")))?;
        group_labels[idx] = record[2]
            .trim()
            .parse()
            .map_err(|e| Error::Manifest(format!("label csv group: {e}")))?;
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Manifest(format!("label csv missing row {missing}")));
    }
    Ok((class_labels, group_labels))
}

/// Write a dataset as `<stem>.manifest.json`, `<stem>.features.bin` and
/// `<stem>.labels.bin` inside `dir`, returning the manifest path.
///
/// The blob dtype follows `dtype` (`"f32"` or `"f64"`); f32 narrows values.
pub fn write_dataset<F: Scalar>(
    d: &EmbeddingDataset<F>,
    dir: &Path,
    stem: &str,
    dtype: &str,
) -> Result<PathBuf> {
    if dtype != "f32" && dtype != "f64" {
        return Err(Error::InvalidArg(format!(
            "dtype must be f32 or f64, got {dtype}"
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let features_name = format!("{stem}.features.bin");
    let labels_name = format!("{stem}.labels.bin");
    let manifest_path = dir.join(format!("{stem}.manifest.json"));

    let fpath = dir.join(&features_name);
    let mut fw = BufWriter::new(
        File::create(&fpath).map_err(|e| Error::io(fpath.display().to_string(), e))?,
    );
    for i in 0..d.len() {
        for &v in d.row(i).iter() {
            if dtype == "f32" {
                fw.write_f32::<LittleEndian>(v.as_f64() as f32)
                    .map_err(|e| Error::io(fpath.display().to_string(), e))?;
            } else {
                fw.write_f64::<LittleEndian>(v.as_f64())
                    .map_err(|e| Error::io(fpath.display().to_string(), e))?;
            }
        }
    }
    fw.flush().map_err(|e| Error::io(fpath.display().to_string(), e))?;

    let lpath = dir.join(&labels_name);
    let mut lw = BufWriter::new(
        File::create(&lpath).map_err(|e| Error::io(lpath.display().to_string(), e))?,
    );
    for i in 0..d.len() {
        lw.write_u32::<LittleEndian>(d.class_labels()[i])
            .map_err(|e| Error::io(lpath.display().to_string(), e))?;
        lw.write_u32::<LittleEndian>(d.group_labels()[i])
            .map_err(|e| Error::io(lpath.display().to_string(), e))?;
    }
    lw.flush().map_err(|e| Error::io(lpath.display().to_string(), e))?;

    let manifest = Manifest {
        features_path: features_name,
        dtype: dtype.to_string(),
        m: d.len() as u64,
        n: d.dim() as u64,
        classes: d.n_classes() as u32,
        groups: d.n_groups() as u32,
        group_to_class: d.group_to_class().to_vec(),
        labels_path: labels_name,
        name: Some(d.name().to_string()),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mut mw = File::create(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    mw.write_all(json.as_bytes())
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    mw.write_all(b"\n")
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample_dataset() -> EmbeddingDataset<f64> {
        EmbeddingDataset::new(
            array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            vec![0, 0, 1],
            vec![0, 1, 2],
            vec![0, 0, 1],
            2,
            "sample",
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_binary_f64() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample_dataset();
        let manifest = write_dataset(&d, dir.path(), "s", "f64").unwrap();
        let back: EmbeddingDataset<f64> = load_dataset(&manifest).unwrap();
        assert_eq!(back.features(), d.features());
        assert_eq!(back.class_labels(), d.class_labels());
        assert_eq!(back.group_labels(), d.group_labels());
        assert_eq!(back.name(), "sample");
    }

    #[test]
    fn roundtrip_binary_f32_narrows() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample_dataset();
        let manifest = write_dataset(&d, dir.path(), "s", "f32").unwrap();
        let back: EmbeddingDataset<f64> = load_dataset(&manifest).unwrap();
        assert_eq!(back.features(), d.features()); // small integers survive f32
    }

    #[test]
    fn blob_size_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample_dataset();
        let manifest = write_dataset(&d, dir.path(), "s", "f64").unwrap();
        // truncate the blob
        let blob = dir.path().join("s.features.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        let r: Result<EmbeddingDataset<f64>> = load_dataset(&manifest);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn csv_features_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f.csv"), "1.0,2.0\n3.0,4.0\n5.0,6.0\n").unwrap();
        std::fs::write(
            dir.path().join("l.csv"),
            "index,class,group\n0,0,0\n1,0,1\n2,1,2\n",
        )
        .unwrap();
        let manifest = Manifest {
            features_path: "f.csv".into(),
            dtype: "f64".into(),
            m: 3,
            n: 2,
            classes: 2,
            groups: 3,
            group_to_class: vec![0, 0, 1],
            labels_path: "l.csv".into(),
            name: None,
        };
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string(&manifest).unwrap()).unwrap();
        let d: EmbeddingDataset<f64> = load_dataset(&mpath).unwrap();
        assert_eq!(d.features(), sample_dataset().features());
        assert_eq!(d.class_labels(), &[0, 0, 1]);
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let r: Result<EmbeddingDataset<f64>> = load_dataset(&dir.path().join("nope.json"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn empty_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest {
            features_path: "f.bin".into(),
            dtype: "f64".into(),
            m: 0,
            n: 2,
            classes: 2,
            groups: 1,
            group_to_class: vec![0],
            labels_path: "l.bin".into(),
            name: None,
        };
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string(&manifest).unwrap()).unwrap();
        let r: Result<EmbeddingDataset<f64>> = load_dataset(&mpath);
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }
}
