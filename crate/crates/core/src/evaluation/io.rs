use std::path::Path;

use nalgebra::DVector;

use super::{Dataset, DatasetMeta, NextState, Sample};
use crate::error::{Error, Result};

pub const DATASET_HEADER: &str = "# physnet-dataset v1";
const HEADER_PREFIX: &str = "# physnet-dataset";

fn column_names(n: usize, with_next: bool) -> Vec<String> {
    let mut names = vec!["t".to_string()];
    let mut groups = vec!["q", "dq", "ddq", "tau", "p", "dp"];
    if with_next {
        groups.extend(["q_next", "dq_next", "p_next"]);
    }
    for g in groups {
        names.extend((0..n).map(|i| format!("{g}{i}")));
    }
    names
}

/// CSV with a version line, the metadata as commented TOML, then one
/// record per sample.
pub fn dataset_to_string(ds: &Dataset) -> Result<String> {
    let n = ds.dof();
    let with_next = ds.has_next_state();
    let meta = toml::to_string(&ds.meta).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = String::from(DATASET_HEADER);
    out.push('\n');
    for line in meta.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(column_names(n, with_next))?;
    for s in &ds.samples {
        let mut rec: Vec<String> = vec![s.t.to_string()];
        let mut blocks = vec![&s.q, &s.qd, &s.qdd, &s.tau, &s.p, &s.pd];
        if let (true, Some(next)) = (with_next, &s.next) {
            blocks.extend([&next.q, &next.qd, &next.p]);
        }
        for b in blocks {
            rec.extend(b.iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?);
    Ok(out)
}

pub fn dataset_from_str(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let first = lines.next().ok_or(Error::EmptyDataset)?.trim_end();
    if first != DATASET_HEADER {
        return Err(Error::Format(if first.starts_with(HEADER_PREFIX) {
            format!("unsupported dataset version '{first}'")
        } else {
            "missing dataset version header".to_string()
        }));
    }
    let mut meta_text = String::new();
    let mut body = String::new();
    for line in lines {
        if body.is_empty() && line.starts_with('#') {
            meta_text.push_str(line.trim_start_matches('#').strip_prefix(' ').unwrap_or(""));
            meta_text.push('\n');
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let meta: DatasetMeta = toml::from_str(&meta_text).map_err(|e| Error::Format(e.to_string()))?;
    let n = meta.dof();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let with_next = if header == column_names(n, true) {
        true
    } else if header == column_names(n, false) {
        false
    } else {
        return Err(Error::Format(format!("unexpected dataset columns: {}", header.join(","))));
    };
    let mut samples = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("invalid number '{v}'"))))
            .collect::<Result<Vec<f64>>>()?;
        let block = |b: usize| DVector::from_column_slice(&values[1 + b * n..1 + (b + 1) * n]);
        samples.push(Sample {
            t: values[0],
            q: block(0),
            qd: block(1),
            qdd: block(2),
            tau: block(3),
            p: block(4),
            pd: block(5),
            next: with_next.then(|| NextState { q: block(6), qd: block(7), p: block(8) }),
        });
    }
    Ok(Dataset { meta, samples })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::write(path, dataset_to_string(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_str(&std::fs::read_to_string(path)?)
}
