//! CSV ingestion and export of clustered data.
//!
//! Schema: `cluster_id,y,x1..xp[,w1..wq]` with a header row. Rows of one
//! cluster need not be contiguous; clusters keep the order in which their ids
//! first appear. Binary columns that are constant within every cluster are
//! read as time-invariant, otherwise as time-varying.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use resdr::data::{BinaryCovariates, Cluster, ClusteredDataset};
use resdr::linalg::Mat;

use crate::CliError;

struct Pending {
    id: String,
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    w: Vec<Vec<u8>>,
}

fn user(msg: String) -> CliError {
    CliError::User(msg)
}

pub fn read_dataset(path: &Path) -> Result<ClusteredDataset, CliError> {
    let file = std::fs::File::open(path).map_err(|e| user(format!("cannot open {}: {e}", path.display())))?;
    parse_dataset(file).map_err(|e| match e {
        CliError::User(m) => user(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_dataset<R: Read>(input: R) -> Result<ClusteredDataset, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| user(format!("line 1: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let (p, q) = check_header(&header)?;
    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| user(format!("{e}")))?;
        let line = rec.position().map_or(0, |pos| pos.line());
        if rec.len() != header.len() {
            return Err(user(format!("line {line}: expected {} fields, found {}", header.len(), rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(user(format!("line {line}: missing cluster_id")));
        }
        let num = |k: usize| -> Result<f64, CliError> {
            let s = &rec[k];
            if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
                return Err(user(format!("line {line}: missing value in column {}", header[k])));
            }
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(user(format!("line {line}: cannot read '{s}' in column {} as a finite number", header[k]))),
            }
        };
        let y = num(1)?;
        let x: Vec<f64> = (2..2 + p).map(num).collect::<Result<_, _>>()?;
        let mut w = Vec::with_capacity(q);
        for k in 2 + p..2 + p + q {
            let v = num(k)?;
            if v != 0.0 && v != 1.0 {
                return Err(user(format!("line {line}: column {} must be 0 or 1, found {}", header[k], &rec[k])));
            }
            w.push(v as u8);
        }
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Pending { id, y: Vec::new(), x: Vec::new(), w: Vec::new() });
            order.len() - 1
        });
        let c = &mut order[slot];
        c.y.push(y);
        c.x.push(x);
        c.w.push(w);
    }
    if order.is_empty() {
        return Err(user("no data rows".into()));
    }
    let invariant = q > 0 && order.iter().all(|c| c.w.windows(2).all(|pair| pair[0] == pair[1]));
    let clusters = order
        .into_iter()
        .map(|c| {
            let m = c.y.len();
            let x = Mat::from_fn(m, p, |j, k| c.x[j][k]);
            let w = if q == 0 {
                None
            } else if invariant {
                Some(BinaryCovariates::TimeInvariant(c.w[0].clone()))
            } else {
                Some(BinaryCovariates::TimeVarying(c.w))
            };
            Cluster { id: c.id, y: c.y, x, w }
        })
        .collect();
    ClusteredDataset::new(clusters).map_err(|e| user(e.to_string()))
}

fn check_header(h: &[String]) -> Result<(usize, usize), CliError> {
    if h.len() < 3 || h[0] != "cluster_id" || h[1] != "y" {
        return Err(user("line 1: header must start with cluster_id,y,x1".into()));
    }
    let mut p = 0;
    while 2 + p < h.len() && h[2 + p] == format!("x{}", p + 1) {
        p += 1;
    }
    let mut q = 0;
    while 2 + p + q < h.len() && h[2 + p + q] == format!("w{}", q + 1) {
        q += 1;
    }
    if p == 0 {
        return Err(user("line 1: need at least one column x1".into()));
    }
    if 2 + p + q != h.len() {
        return Err(user(format!("line 1: unexpected column '{}'", h[2 + p + q])));
    }
    Ok((p, q))
}

/// Writes the dataset in the ingestion schema, cluster by cluster.
pub fn write_dataset<W: Write>(data: &ClusteredDataset, out: W) -> Result<(), CliError> {
    let io = |e: csv::Error| user(format!("cannot write dataset: {e}"));
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["cluster_id".to_string(), "y".to_string()];
    header.extend((1..=data.p()).map(|k| format!("x{k}")));
    header.extend((1..=data.q()).map(|k| format!("w{k}")));
    wtr.write_record(&header).map_err(io)?;
    for c in &data.clusters {
        let w = c.w_matrix();
        for j in 0..c.m() {
            let mut row = vec![c.id.clone(), c.y[j].to_string()];
            row.extend(c.x.row(j).iter().map(|v| v.to_string()));
            if let Some(w) = &w {
                row.extend(w.row(j).iter().map(|v| (*v as u8).to_string()));
            }
            wtr.write_record(&row).map_err(io)?;
        }
    }
    wtr.flush().map_err(|e| user(format!("cannot write dataset: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use resdr::data::WKind;

    #[test]
    fn toy_file_round_trips() {
        let text = "cluster_id,y,x1\na,0.5,1.25\na,0.125,-3\nb,-1,2\nb,2.5,0.1\n";
        let data = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!(data.n(), 2);
        let mut out = Vec::new();
        write_dataset(&data, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn rows_are_grouped_by_first_appearance() {
        let text = "cluster_id,y,x1\nb,0.5,1\na,1,2\nb,0.125,-3\n";
        let data = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!(data.clusters[0].id, "b");
        assert_eq!(data.clusters[0].y, vec![0.5, 0.125]);
        assert_eq!(data.clusters[1].m(), 1);
    }

    #[test]
    fn binary_kind_is_detected() {
        let inv = "cluster_id,y,x1,w1\na,0,1,1\na,1,2,1\nb,0,1,0\n";
        assert_eq!(parse_dataset(inv.as_bytes()).unwrap().w_kind(), Some(WKind::TimeInvariant));
        let var = "cluster_id,y,x1,w1\na,0,1,1\na,1,2,0\nb,0,1,0\n";
        assert_eq!(parse_dataset(var.as_bytes()).unwrap().w_kind(), Some(WKind::TimeVarying));
    }

    #[test]
    fn errors_name_the_line() {
        let bad_w = "cluster_id,y,x1,w1\na,0,1,1\na,1,2,2\n";
        let e = parse_dataset(bad_w.as_bytes()).unwrap_err();
        assert!(matches!(&e, CliError::User(m) if m.contains("line 3") && m.contains("w1")), "{e}");
        let missing = "cluster_id,y,x1\na,0,1\na,,2\n";
        let e = parse_dataset(missing.as_bytes()).unwrap_err();
        assert!(matches!(&e, CliError::User(m) if m.contains("line 3") && m.contains("missing")), "{e}");
        let short = "cluster_id,y,x1,x2\na,0,1,2\na,1,2\n";
        let e = parse_dataset(short.as_bytes()).unwrap_err();
        assert!(matches!(&e, CliError::User(m) if m.contains("line 3")), "{e}");
        assert!(parse_dataset("id,y,x1\n".as_bytes()).is_err());
        assert!(parse_dataset("cluster_id,y,x1,z\na,1,2,3\n".as_bytes()).is_err());
    }
}
