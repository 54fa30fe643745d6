//! Embedding store: CSV with columns `symbol,window_start,model_id,v0..v{D-1}`.
//! Lines starting with `#` are provenance comments.

use std::io::{Read, Write};

use chrono::NaiveDate;

use super::{AutoencoderError, Embedding};

pub fn write_embedding_store<W: Write>(
    embeddings: &[Embedding],
    comments: &[String],
    mut out: W,
) -> Result<(), AutoencoderError> {
    let err = |e: std::io::Error| AutoencoderError::Store(e.to_string());
    for c in comments {
        writeln!(out, "# {c}").map_err(err)?;
    }
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let mut header = vec!["symbol".to_string(), "window_start".into(), "model_id".into()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    writeln!(out, "{}", header.join(",")).map_err(err)?;
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(AutoencoderError::Store(format!(
                "{} has dimension {}, expected {dim}",
                e.symbol,
                e.vector.len()
            )));
        }
        if e.symbol.contains([',', '"', '\n', '\r']) || e.symbol.starts_with('#') {
            return Err(AutoencoderError::Store(format!("unsupported symbol `{}`", e.symbol)));
        }
        write!(out, "{},{},{}", e.symbol, e.window_start, e.model_id).map_err(err)?;
        for v in &e.vector {
            // `{:?}` is the shortest representation that round-trips exactly.
            write!(out, ",{v:?}").map_err(err)?;
        }
        writeln!(out).map_err(err)?;
    }
    Ok(())
}

pub fn read_embedding_store<R: Read>(input: R) -> Result<Vec<Embedding>, AutoencoderError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let bad = |m: String| AutoencoderError::Store(m);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.len() < 3
        || &headers[0] != "symbol"
        || &headers[1] != "window_start"
        || &headers[2] != "model_id"
    {
        return Err(bad("header must start with symbol,window_start,model_id".into()));
    }
    let dim = headers.len() - 3;
    for (i, h) in headers.iter().skip(3).enumerate() {
        if h != format!("v{i}") {
            return Err(bad(format!("column {} should be v{i}, found `{h}`", i + 3)));
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dim + 3 {
            return Err(bad(format!("line {line}: expected {} fields", dim + 3)));
        }
        let window_start = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
            .map_err(|e| bad(format!("line {line}: {e}")))?;
        let vector = rec
            .iter()
            .skip(3)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad(format!("line {line}: bad value `{v}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if rec[0].is_empty() {
            return Err(bad(format!("line {line}: empty symbol")));
        }
        out.push(Embedding {
            symbol: rec[0].to_string(),
            window_start,
            vector,
            model_id: rec[2].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let e = vec![
            Embedding {
                symbol: "AAA.L".into(),
                window_start: NaiveDate::from_ymd_opt(2020, 3, 2).unwrap(),
                vector: vec![0.1, -1.0 / 3.0, 1e-300],
                model_id: "abc".into(),
            },
            Embedding {
                symbol: "BBB".into(),
                window_start: NaiveDate::from_ymd_opt(2020, 3, 2).unwrap(),
                vector: vec![std::f64::consts::PI, 0.0, -2.5],
                model_id: "abc".into(),
            },
        ];
        let mut buf = Vec::new();
        write_embedding_store(&e, &["config_hash=x".into()], &mut buf).unwrap();
        let back = read_embedding_store(buf.as_slice()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn rejects_bad_headers_and_values() {
        assert!(read_embedding_store("a,b,c\n".as_bytes()).is_err());
        assert!(read_embedding_store("symbol,window_start,model_id,v1\n".as_bytes()).is_err());
        let bad = "symbol,window_start,model_id,v0\nA,2020-01-01,m,nan\n";
        assert!(read_embedding_store(bad.as_bytes()).is_err());
    }
}
