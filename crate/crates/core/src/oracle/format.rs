//! Text format for embedding databases.
//!
//! ```text
//! dim 3
//! item-0<TAB>2<TAB>0.1,-0.25,1.5
//! item-1<TAB>-<TAB>0,0,1
//! ```
//!
//! The label column is an integer or `-` for none.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::EmbeddingDatabase;
use crate::domain::CandidateId;
use crate::error::{Error, Result};

pub fn write_db<W: Write>(db: &EmbeddingDatabase, mut out: W) -> Result<()> {
    writeln!(out, "dim {}", db.dim())?;
    for i in 0..db.len() {
        let id = db.id(i).as_str();
        if id.is_empty() || id.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidDatabase(format!(
                "id {id:?} cannot be written to the text format"
            )));
        }
        let label = db.label(i).map_or_else(|| "-".to_string(), |l| l.to_string());
        let values: Vec<String> = db.embedding(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{id}\t{label}\t{}", values.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_db(db: &EmbeddingDatabase, path: impl AsRef<Path>) -> Result<()> {
    write_db(db, BufWriter::new(File::create(path)?))
}

pub fn read_db<R: Read>(input: R) -> Result<EmbeddingDatabase> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().transpose()?.ok_or(Error::Parse {
        line: 1,
        msg: "missing `dim E` header".into(),
    })?;
    let dim = header
        .trim()
        .strip_prefix("dim ")
        .and_then(|d| d.trim().parse::<usize>().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("expected `dim E` with E > 0, found {header:?}"),
        })?;

    let mut db = EmbeddingDatabase::new(dim);
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        let mut fields = line.split('\t');
        let (Some(id), Some(label), Some(values), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(parse_err("expected three tab-separated fields".into()));
        };
        if id.is_empty() {
            return Err(parse_err("empty id".into()));
        }
        let label = match label {
            "-" => None,
            l => Some(l.parse::<i64>().map_err(|_| parse_err(format!("bad label {l:?}")))?),
        };
        let embedding = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(format!("bad embedding value: {e}")))?;
        if embedding.len() != dim {
            return Err(parse_err(format!(
                "embedding has {} values, header says {dim}",
                embedding.len()
            )));
        }
        db.push(CandidateId::new(id), label, embedding).map_err(|e| match e {
            Error::InvalidDatabase(msg) => Error::InvalidDatabase(format!("line {line_no}: {msg}")),
            other => parse_err(other.to_string()),
        })?;
    }
    Ok(db)
}

pub fn load_db(path: impl AsRef<Path>) -> Result<EmbeddingDatabase> {
    read_db(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_through_a_file() {
        let mut db = EmbeddingDatabase::new(3);
        db.push("a".into(), Some(4), vec![0.1, -2.5, 1e-9]).unwrap();
        db.push("b c".into(), None, vec![1.0 / 3.0, 0.0, -0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.tsv");
        save_db(&db, &path).unwrap();
        let back = load_db(&path).unwrap();
        assert_eq!(back.ids(), db.ids());
        assert_eq!(back.label(0), Some(4));
        assert_eq!(back.label(1), None);
        for i in 0..db.len() {
            for (x, y) in back.embedding(i).iter().zip(db.embedding(i)) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn malformed_header_names_line_one() {
        let err = read_db("dimension 3\na\t-\t1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = read_db("".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let err = read_db("dim 2\na\t-\t1,2\na\t-\t3,4\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::InvalidDatabase(ref m) if m.contains("line 3")), "{err}");
    }

    #[test]
    fn bad_rows_report_their_line() {
        let err = read_db("dim 2\na\t-\t1,2\nb\t-\t1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = read_db("dim 2\na\tx\t1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = read_db("dim 2\na\t-\t1,oops\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..20)) {
            let mut db = EmbeddingDatabase::new(4);
            for (i, r) in rows.iter().enumerate() {
                db.push(CandidateId::new(format!("id{i}")), Some(i as i64 % 3), r.clone()).unwrap();
            }
            let mut buf = Vec::new();
            write_db(&db, &mut buf).unwrap();
            let back = read_db(buf.as_slice()).unwrap();
            prop_assert_eq!(back.ids(), db.ids());
            for i in 0..db.len() {
                prop_assert_eq!(back.embedding(i), db.embedding(i));
            }
        }
    }
}
