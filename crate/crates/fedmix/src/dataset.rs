//! Dataset directories: `manifest.csv` (columns `id, tensor_file, labels,
//! group`, labels as `;`-separated class indices), `classes.txt` (one class
//! name per line) and one FMTD tensor file per image.

use std::fs;
use std::path::{Path, PathBuf};

use fedmix_core::data::{MultiLabelDataset, Sample};

use crate::error::{Error, Result};
use crate::fmtd;

pub const MANIFEST: &str = "manifest.csv";
pub const CLASSES: &str = "classes.txt";
const HEADER: [&str; 4] = ["id", "tensor_file", "labels", "group"];

pub fn save_dataset(dataset: &MultiLabelDataset, dir: &Path) -> Result<()> {
    let tensors = dir.join("tensors");
    fs::create_dir_all(&tensors).map_err(|e| Error::io(&tensors, e))?;
    let classes_path = dir.join(CLASSES);
    let mut classes = dataset.class_names().join("\n");
    classes.push('\n');
    fs::write(&classes_path, classes).map_err(|e| Error::io(&classes_path, e))?;

    let manifest_path = dir.join(MANIFEST);
    let csv_err = |e: csv::Error| Error::format(&manifest_path, e.to_string());
    let mut w = csv::Writer::from_path(&manifest_path).map_err(csv_err)?;
    w.write_record(HEADER).map_err(csv_err)?;
    let shape = dataset.image_shape();
    for (i, s) in dataset.samples().iter().enumerate() {
        let file = format!("tensors/{i:06}.fmtd");
        fmtd::write(&dir.join(&file), &shape, &s.image)?;
        let labels: Vec<String> = s.positive_classes().map(|c| c.to_string()).collect();
        w.write_record([s.id.as_str(), &file, &labels.join(";"), &s.group])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&manifest_path, e))
}

/// Accepts either a dataset directory or the path of its manifest.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST)
    } else {
        path.to_path_buf()
    }
}

pub fn load_dataset(path: &Path) -> Result<MultiLabelDataset> {
    let manifest = manifest_path(path);
    let file = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let classes_path = dir.join(CLASSES);
    let classes: Vec<String> = fs::read_to_string(&classes_path)
        .map_err(|e| Error::io(&classes_path, e))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if classes.is_empty() {
        return Err(Error::format(&classes_path, "no class names"));
    }

    let mut rdr = csv::Reader::from_reader(file);
    let at = |line: u64, msg: String| Error::format(&manifest, format!("line {line}: {msg}"));
    let header = rdr.headers().map_err(|e| at(1, e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(at(1, format!("expected columns {HEADER:?}, found {:?}", header.iter().collect::<Vec<_>>())));
    }

    let mut shape: Option<[usize; 3]> = None;
    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::format(&manifest, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let tensor_path = dir.join(field(1));
        let (dims, image) = fmtd::read(&tensor_path)?;
        let dims: [usize; 3] = dims
            .as_slice()
            .try_into()
            .map_err(|_| at(line, format!("{} is not a C×H×W tensor (shape {dims:?})", tensor_path.display())))?;
        match shape {
            None => shape = Some(dims),
            Some(s) if s != dims => {
                return Err(at(line, format!("image shape {dims:?} differs from earlier rows' {s:?}")));
            }
            Some(_) => {}
        }
        let mut labels = vec![0u8; classes.len()];
        if field(2).is_empty() {
            return Err(at(line, "empty label list".into()));
        }
        for tok in field(2).split(';') {
            let c: usize = tok
                .trim()
                .parse()
                .map_err(|_| at(line, format!("label {tok:?} is not a class index")))?;
            if c >= classes.len() {
                return Err(at(line, format!("label {c} outside [0, {})", classes.len())));
            }
            labels[c] = 1;
        }
        samples.push(Sample {
            id: field(0).to_string(),
            image,
            labels,
            group: field(3).to_string(),
        });
    }
    let shape = shape.ok_or_else(|| Error::format(&manifest, "manifest lists no samples"))?;
    Ok(MultiLabelDataset::new(shape, classes, samples)?)
}
