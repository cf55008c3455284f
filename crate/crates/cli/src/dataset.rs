//! Dataset loaders: flat CSV, raw IDX image files, and synthetic generation.
//!
//! Loaded inputs are min-max scaled to `[0, 1]` over the whole dataset so
//! fixed-point encoding always has headroom.

use std::path::Path;

use anyhow::{bail, Context, Result};

use hefl_core::data::{shuffled, synthetic_blobs, take_splits};
use hefl_core::neural::LabeledDataset;
use hefl_core::protocol::{derive_seed, HospitalData, ScenarioData};

use crate::config::DatasetConfig;

/// Parses the CSV header `shape=CxHxW,classes=N`.
fn parse_header(line: &str) -> Result<(Vec<usize>, usize)> {
    let mut shape = None;
    let mut classes = None;
    for field in line.trim().split(',') {
        if let Some(dims) = field.strip_prefix("shape=") {
            shape = Some(
                dims.split('x')
                    .map(|d| d.parse::<usize>().context("bad shape dimension"))
                    .collect::<Result<Vec<_>>>()?,
            );
        } else if let Some(n) = field.strip_prefix("classes=") {
            classes = Some(n.parse::<usize>().context("bad class count")?);
        }
    }
    match (shape, classes) {
        (Some(s), Some(c)) if !s.is_empty() && c >= 2 => Ok((s, c)),
        _ => bail!("CSV header must declare shape=...x... and classes=N"),
    }
}

/// Loads the flat CSV format: header row, then one sample per row with the
/// integer label last.
pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read dataset {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().context("dataset file is empty")?;
    let (input_shape, num_classes) = parse_header(header)?;
    let width: usize = input_shape.iter().product();
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != width + 1 {
            bail!(
                "row {} has {} fields, expected {} values plus a label",
                row + 2,
                fields.len(),
                width + 1
            );
        }
        let values = fields[..width]
            .iter()
            .map(|f| f.parse::<f64>().with_context(|| format!("bad value in row {}", row + 2)))
            .collect::<Result<Vec<f64>>>()?;
        let label: usize = fields[width]
            .parse()
            .with_context(|| format!("bad label in row {}", row + 2))?;
        if label >= num_classes {
            bail!("row {} label {label} out of range", row + 2);
        }
        inputs.push(values);
        labels.push(label);
    }
    if inputs.is_empty() {
        bail!("dataset {} has no samples", path.display());
    }
    let mut data = LabeledDataset {
        inputs,
        labels,
        input_shape,
        num_classes,
    };
    min_max_scale(&mut data);
    Ok(data)
}

/// Scales all inputs into `[0, 1]` with one global min/max.
fn min_max_scale(data: &mut LabeledDataset) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in &data.inputs {
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let range = hi - lo;
    if range <= 0.0 {
        return;
    }
    for row in data.inputs.iter_mut() {
        for v in row.iter_mut() {
            *v = (*v - lo) / range;
        }
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .context("IDX file truncated")
}

/// Loads an IDX unsigned-byte image file and its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let img = std::fs::read(images)
        .with_context(|| format!("cannot read IDX images {}", images.display()))?;
    let lab = std::fs::read(labels)
        .with_context(|| format!("cannot read IDX labels {}", labels.display()))?;
    if read_u32_be(&img, 0)? != 0x0000_0803 {
        bail!("{} is not an IDX3 ubyte image file", images.display());
    }
    if read_u32_be(&lab, 0)? != 0x0000_0801 {
        bail!("{} is not an IDX1 ubyte label file", labels.display());
    }
    let count = read_u32_be(&img, 4)? as usize;
    let height = read_u32_be(&img, 8)? as usize;
    let width = read_u32_be(&img, 12)? as usize;
    if read_u32_be(&lab, 4)? as usize != count {
        bail!("image and label counts differ");
    }
    let pixel_count = height * width;
    if img.len() != 16 + count * pixel_count || lab.len() != 8 + count {
        bail!("IDX payload size mismatch");
    }
    let mut inputs = Vec::with_capacity(count);
    let mut labels_out = Vec::with_capacity(count);
    let mut max_label = 0usize;
    for i in 0..count {
        let start = 16 + i * pixel_count;
        inputs.push(
            img[start..start + pixel_count]
                .iter()
                .map(|&b| b as f64)
                .collect(),
        );
        let y = lab[8 + i] as usize;
        max_label = max_label.max(y);
        labels_out.push(y);
    }
    let mut data = LabeledDataset {
        inputs,
        labels: labels_out,
        input_shape: vec![1, height, width],
        num_classes: max_label + 1,
    };
    min_max_scale(&mut data);
    Ok(data)
}

/// Loads, shuffles and splits a dataset into per-hospital train/validation
/// shards plus the shared test split.
pub fn load_scenario_data(
    config: &DatasetConfig,
    config_dir: &Path,
    hospitals: usize,
    seed: u64,
) -> Result<ScenarioData> {
    let (full, shuffle, train, validation, test) = match config {
        DatasetConfig::Csv {
            path,
            shuffle,
            train_per_hospital,
            validation_per_hospital,
            test,
        } => (
            load_csv(&config_dir.join(path))?,
            *shuffle,
            *train_per_hospital,
            *validation_per_hospital,
            *test,
        ),
        DatasetConfig::Idx {
            images,
            labels,
            shuffle,
            train_per_hospital,
            validation_per_hospital,
            test,
        } => (
            load_idx(&config_dir.join(images), &config_dir.join(labels))?,
            *shuffle,
            *train_per_hospital,
            *validation_per_hospital,
            *test,
        ),
        DatasetConfig::SyntheticBlobs {
            classes,
            features,
            noise,
            train_per_hospital,
            validation_per_hospital,
            test,
        } => {
            let count = hospitals * (train_per_hospital + validation_per_hospital) + test;
            (
                synthetic_blobs(*classes, *features, count, *noise, derive_seed(seed, 0xDA7A)),
                false,
                *train_per_hospital,
                *validation_per_hospital,
                *test,
            )
        }
    };
    let needed = hospitals * (train + validation) + test;
    if full.len() < needed {
        bail!(
            "dataset has {} samples but the splits need {needed}",
            full.len()
        );
    }
    let full = if shuffle {
        shuffled(&full, derive_seed(seed, 0x5445))
    } else {
        full
    };
    let mut sizes = vec![train; hospitals];
    sizes.extend(std::iter::repeat(validation).take(hospitals));
    sizes.push(test);
    let mut splits = take_splits(&full, &sizes);
    let test_split = splits.pop().expect("test split");
    let validation_splits = splits.split_off(hospitals);
    let hospitals_data = splits
        .into_iter()
        .zip(validation_splits)
        .map(|(train, validation)| HospitalData { train, validation })
        .collect();
    Ok(ScenarioData {
        hospitals: hospitals_data,
        test: test_split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "shape=2,classes=2").unwrap();
        writeln!(f, "0.0,4.0,0").unwrap();
        writeln!(f, "2.0,2.0,1").unwrap();
        writeln!(f, "4.0,0.0,1").unwrap();
        let data = load_csv(&path).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.input_shape, vec![2]);
        assert_eq!(data.num_classes, 2);
        // min-max scaled over the whole dataset: 0..4 -> 0..1
        assert_eq!(data.inputs[0], vec![0.0, 1.0]);
        assert_eq!(data.inputs[1], vec![0.5, 0.5]);
        assert_eq!(data.labels, vec![0, 1, 1]);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "shape=2,classes=2\n1.0,2.0\n").unwrap();
        assert!(load_csv(&path).is_err());
        std::fs::write(&path, "shape=2,classes=2\n1.0,2.0,7\n").unwrap();
        assert!(load_csv(&path).is_err()); // label out of range
        std::fs::write(&path, "no header\n").unwrap();
        assert!(load_csv(&path).is_err());
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("imgs.idx3-ubyte");
        let labels = dir.path().join("labs.idx1-ubyte");
        // two 2x2 images
        let mut img = vec![];
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0, 128, 255, 64, 255, 0, 32, 16]);
        std::fs::write(&images, img).unwrap();
        let mut lab = vec![];
        lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lab.extend_from_slice(&2u32.to_be_bytes());
        lab.extend_from_slice(&[1, 0]);
        std::fs::write(&labels, lab).unwrap();

        let data = load_idx(&images, &labels).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.input_shape, vec![1, 2, 2]);
        assert_eq!(data.labels, vec![1, 0]);
        assert_eq!(data.inputs[0][2], 1.0);
        assert_eq!(data.inputs[0][0], 0.0);
    }

    #[test]
    fn splits_are_disjoint_by_construction() {
        let config = DatasetConfig::SyntheticBlobs {
            classes: 3,
            features: 4,
            noise: 0.4,
            train_per_hospital: 20,
            validation_per_hospital: 5,
            test: 15,
        };
        let data = load_scenario_data(&config, Path::new("."), 2, 3).unwrap();
        assert_eq!(data.hospitals.len(), 2);
        assert_eq!(data.hospitals[0].train.len(), 20);
        assert_eq!(data.hospitals[1].validation.len(), 5);
        assert_eq!(data.test.len(), 15);
    }
}
