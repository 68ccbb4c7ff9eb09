//! File formats: CSV and IDX datasets, masks, score and rank tables,
//! sampling plans, model checkpoints and certificates.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dris_core::certify::CertificateReport;
use dris_core::data::Observed;
use dris_core::learners::{ModelSpec, TrainedModel};
use dris_core::sampler::SamplingPlan;
use dris_core::scores::{RankMatrix, ScoreKind, ScoreVector};
use dris_core::Matrix;

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "dris-model";
pub const CHECKPOINT_VERSION: u32 = 1;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::format(path, e))
}

/// Features in every column but the last, integer label in the last.
/// The class count is `max label + 1` unless given.
pub fn read_csv_dataset(path: &Path, has_header: bool, num_classes: Option<usize>) -> Result<Observed> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() < 2 {
            return Err(Error::format(path, format!("row {}: need at least one feature and a label", line + 1)));
        }
        let d = rec.len() - 1;
        if *dim.get_or_insert(d) != d {
            return Err(Error::format(path, format!("row {}: expected {} features, found {d}", line + 1, dim.unwrap())));
        }
        for field in rec.iter().take(d) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::format(path, format!("row {}: bad feature `{field}`", line + 1)))?;
            features.push(v);
        }
        let y: usize = rec[d]
            .parse()
            .map_err(|_| Error::format(path, format!("row {}: bad label `{}`", line + 1, &rec[d])))?;
        labels.push(y);
    }
    let dim = dim.ok_or_else(|| Error::format(path, "no data rows"))?;
    let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1).max(2));
    let n = labels.len();
    Ok(Observed::new(Matrix::from_vec(n, dim, features)?, labels, c)?)
}

pub fn write_csv_dataset(path: &Path, data: &Observed, header: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    if header {
        let mut h: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
        h.push("label".into());
        w.write_record(&h).map_err(|e| csv_err(path, e))?;
    }
    for i in 0..data.len() {
        let mut row: Vec<String> = data.x(i).iter().map(|v| v.to_string()).collect();
        row.push(data.labels()[i].to_string());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const IDX_U8_IMAGES: u32 = 0x0000_0803;
const IDX_U8_LABELS: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Reads an IDX image/label pair. Pixels are scaled to `[0, 1]` and each
/// image is flattened row-major.
pub fn read_idx_pair(images: &Path, labels: &Path) -> Result<Observed> {
    let mut ib = Vec::new();
    open(images)?.read_to_end(&mut ib).map_err(|e| Error::io(images, e))?;
    let mut lb = Vec::new();
    open(labels)?.read_to_end(&mut lb).map_err(|e| Error::io(labels, e))?;

    if read_be_u32(&ib, 0) != Some(IDX_U8_IMAGES) {
        return Err(Error::format(images, "not an unsigned-byte 3-d IDX file"));
    }
    if read_be_u32(&lb, 0) != Some(IDX_U8_LABELS) {
        return Err(Error::format(labels, "not an unsigned-byte 1-d IDX file"));
    }
    let short = |p: &Path| Error::format(p, "truncated header");
    let n = read_be_u32(&ib, 4).ok_or_else(|| short(images))? as usize;
    let rows = read_be_u32(&ib, 8).ok_or_else(|| short(images))? as usize;
    let cols = read_be_u32(&ib, 12).ok_or_else(|| short(images))? as usize;
    let nl = read_be_u32(&lb, 4).ok_or_else(|| short(labels))? as usize;
    if n != nl {
        return Err(Error::format(labels, format!("{nl} labels for {n} images")));
    }
    let d = rows * cols;
    let pixels = ib.get(16..16 + n * d).ok_or_else(|| Error::format(images, "truncated pixel data"))?;
    let ys = lb.get(8..8 + n).ok_or_else(|| Error::format(labels, "truncated label data"))?;
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels_vec: Vec<usize> = ys.iter().map(|&y| usize::from(y)).collect();
    let c = labels_vec.iter().max().map_or(2, |m| (m + 1).max(2));
    Ok(Observed::new(Matrix::from_vec(n, d, features)?, labels_vec, c)?)
}

/// Writes raw IDX bytes; `pixels` is `n * rows * cols` long.
pub fn write_idx_pair(images: &Path, labels: &Path, rows: u32, cols: u32, pixels: &[u8], ys: &[u8]) -> Result<()> {
    let mut w = create(images)?;
    let n = ys.len() as u32;
    let mut head = Vec::with_capacity(16);
    for v in [IDX_U8_IMAGES, n, rows, cols] {
        head.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&head).and_then(|_| w.write_all(pixels)).and_then(|_| w.flush()).map_err(|e| Error::io(images, e))?;
    let mut w = create(labels)?;
    let mut head = Vec::with_capacity(8);
    for v in [IDX_U8_LABELS, n] {
        head.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&head).and_then(|_| w.write_all(ys)).and_then(|_| w.flush()).map_err(|e| Error::io(labels, e))
}

/// One `0` or `1` per line.
pub fn write_mask(path: &Path, mask: &[bool]) -> Result<()> {
    let mut w = create(path)?;
    for &m in mask {
        writeln!(w, "{}", u8::from(m)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match line.trim() {
            "0" => out.push(false),
            "1" => out.push(true),
            "" => {}
            other => return Err(Error::format(path, format!("line {}: expected 0 or 1, found `{other}`", i + 1))),
        }
    }
    Ok(out)
}

/// Hex SHA-256 of the mask as a string of `0`/`1` bytes.
pub fn mask_hash(mask: &[bool]) -> String {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { b'1' } else { b'0' }).collect();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Columns `index, kind, value`.
pub fn write_scores(path: &Path, scores: &ScoreVector) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["index", "kind", "value"]).map_err(|e| csv_err(path, e))?;
    let kind = scores.kind().to_string();
    for (i, v) in scores.values().iter().enumerate() {
        w.write_record([i.to_string(), kind.clone(), v.to_string()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct ScoreRow {
    index: usize,
    kind: String,
    value: f64,
}

pub fn read_scores(path: &Path) -> Result<ScoreVector> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut values = Vec::new();
    let mut kind = None;
    for row in rdr.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.index != values.len() {
            return Err(Error::format(path, format!("index {} out of order", row.index)));
        }
        let k = ScoreKind::parse(&row.kind).ok_or_else(|| Error::format(path, format!("unknown score kind `{}`", row.kind)))?;
        if *kind.get_or_insert(k) != k {
            return Err(Error::format(path, "mixed score kinds"));
        }
        values.push(row.value);
    }
    let kind = kind.ok_or_else(|| Error::format(path, "no score rows"))?;
    Ok(ScoreVector::new(values, kind)?)
}

/// `N x K` table with the proxy ids as header.
pub fn write_rank_matrix(path: &Path, rm: &RankMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(rm.proxy_ids()).map_err(|e| csv_err(path, e))?;
    for row in rm.ranks().iter_rows() {
        w.write_record(row.iter().map(|r| r.to_string())).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rank_matrix(path: &Path, snapshot_epoch: usize) -> Result<RankMatrix> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let ids: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let mut data = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for f in rec.iter() {
            data.push(f.parse::<f64>().map_err(|_| Error::format(path, format!("bad rank `{f}`")))?);
        }
        n += 1;
    }
    Ok(RankMatrix::new(Matrix::from_vec(n, ids.len(), data)?, ids, snapshot_epoch)?)
}

pub fn write_plan(path: &Path, plan: &SamplingPlan) -> Result<()> {
    write_json(path, plan)
}

pub fn read_plan(path: &Path) -> Result<SamplingPlan> {
    let plan: SamplingPlan = read_json(path)?;
    plan.validate().map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    Ok(plan)
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    spec: ModelSpec,
    params: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, model: &TrainedModel) -> Result<()> {
    write_json(
        path,
        &Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: model.spec().clone(),
            params: model.params().to_vec(),
        },
    )
}

pub fn read_checkpoint(path: &Path) -> Result<TrainedModel> {
    let c: Checkpoint = read_json(path)?;
    if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!(
            "{}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
            path.display(),
            c.format,
            c.version
        )));
    }
    Ok(TrainedModel::from_params(c.spec, c.params)?)
}

pub fn write_certificate(path: &Path, report: &CertificateReport) -> Result<()> {
    write_json(path, report)
}
