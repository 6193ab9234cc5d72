//! Artifact formats: CSV tables with `# key: value` metadata lines, JSON
//! sidecars, raw state vectors and content hashes.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hilbert::StateVector;

const STATE_MAGIC: &[u8; 8] = b"PTSTATE1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { metadata: Vec::new(), header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse("csv", format!("no column named {name}")))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for (k, v) in &self.metadata {
            writeln!(buf, "# {k}: {v}").expect("writing to memory");
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let io = |e: csv::Error| Error::parse(path.display().to_string(), e);
            w.write_record(&self.header).map_err(io)?;
            for row in &self.rows {
                // `Display` for f64 is the shortest string that round-trips
                w.write_record(row.iter().map(|x| x.to_string())).map_err(io)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        write_atomic(path, &buf)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut metadata = Vec::new();
        let mut body = String::new();
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
                break;
            }
            match line.strip_prefix('#') {
                Some(rest) if body.is_empty() => {
                    let (k, v) = rest.split_once(':').unwrap_or((rest, ""));
                    metadata.push((k.trim().to_string(), v.trim().to_string()));
                }
                _ => body.push_str(&line),
            }
        }
        let ctx = path.display().to_string();
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(body.as_bytes());
        let header = r.headers().map_err(|e| Error::parse(&ctx, e))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::parse(&ctx, e))?;
            let row = rec.iter().map(|s| s.trim().parse::<f64>().map_err(|e| Error::parse(&ctx, e))).collect::<Result<_>>()?;
            rows.push(row);
        }
        Ok(Self { metadata, header, rows })
    }
}

/// Sidecar path next to an artifact: `x.csv` -> `x.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path.display().to_string(), e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// State vector as little-endian `(re, im)` pairs after a magic tag and length.
pub fn write_state(path: &Path, state: &StateVector) -> Result<()> {
    let amps = state.amplitudes();
    let mut buf = Vec::with_capacity(16 + 16 * amps.len());
    buf.extend_from_slice(STATE_MAGIC);
    buf.extend_from_slice(&(amps.len() as u64).to_le_bytes());
    for z in amps {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    write_atomic(path, &buf)
}

pub fn read_state(path: &Path) -> Result<StateVector> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    if buf.len() < 16 || &buf[..8] != STATE_MAGIC {
        return Err(Error::parse(ctx, "not a state file"));
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().expect("eight bytes")) as usize;
    if buf.len() != 16 + 16 * n {
        return Err(Error::parse(ctx, format!("expected {n} amplitudes, file has {} bytes", buf.len())));
    }
    let f = |k: usize| f64::from_le_bytes(buf[k..k + 8].try_into().expect("eight bytes"));
    Ok(StateVector::from_amplitudes((0..n).map(|i| Complex64::new(f(16 + 16 * i), f(24 + 16 * i))).collect()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Writes through a temporary file and a rename, so readers never see a
/// half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_round_trip_keeps_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut t = CsvTable::new(&["a", "b"]).meta("seed", 7).meta("note", "x: y");
        t.push(vec![0.1, -2.5e-300]);
        t.push(vec![f64::MAX, 3.0]);
        t.write(&p).unwrap();
        let back = CsvTable::read(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.metadata_value("note"), Some("x: y"));
        assert_eq!(back.column("b").unwrap(), vec![-2.5e-300, 3.0]);
        assert!(back.column("c").is_err());
    }

    proptest! {
        #[test]
        fn floats_round_trip_bitwise(xs in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..20)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("f.csv");
            let mut t = CsvTable::new(&["x"]);
            xs.iter().for_each(|x| t.push(vec![*x]));
            t.write(&p).unwrap();
            let back = CsvTable::read(&p).unwrap().column("x").unwrap();
            prop_assert!(back.iter().zip(&xs).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn state_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let s = StateVector::from_amplitudes(vec![Complex64::new(0.6, -0.0), Complex64::new(1e-310, 0.8)]);
        write_state(&p, &s).unwrap();
        assert_eq!(read_state(&p).unwrap().amplitudes(), s.amplitudes());
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_state(&p), Err(Error::Parse { .. })));
        assert!(matches!(read_state(&dir.path().join("none")), Err(Error::Io { .. })));
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
