//! Diagnostics CSV and binary field snapshots.
//!
//! CSV floats are written with 17 significant digits, which round-trips every
//! finite `f64` exactly. Snapshot layout (little-endian):
//!
//! ```text
//! magic  "V2DS"
//! u32    version = 1
//! u32    N
//! f64    t
//! u32    field count = 5
//! 5 × { [u8; 8] name (space padded), u64 byte offset of payload }
//! payload: N×N f64 per field, row-major (index j*N + i), in the order
//!          vx, vy, b11, b12, b22
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::fields::{State, SymTensorField, VectorField};
use crate::spectral::Field;
use crate::timeloop::Observer;

pub const MAGIC: &[u8; 4] = b"V2DS";
pub const VERSION: u32 = 1;
pub const FIELD_NAMES: [&str; 5] = ["vx", "vy", "b11", "b12", "b22"];
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4 + FIELD_NAMES.len() * 16;

/// Format one float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn diagnostics_header() -> String {
    DiagnosticsRecord::COLUMNS.join(",")
}

pub fn diagnostics_row(r: &DiagnosticsRecord) -> String {
    r.values()
        .iter()
        .map(|&x| fmt_f64(x))
        .collect::<Vec<_>>()
        .join(",")
}

/// Append-only diagnostics writer; the header is written on creation.
pub struct DiagnosticsWriter<W: Write> {
    out: W,
    path: PathBuf,
}

impl DiagnosticsWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        DiagnosticsWriter::new(BufWriter::new(file), path)
    }
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(mut out: W, path: PathBuf) -> Result<Self> {
        writeln!(out, "{}", diagnostics_header()).map_err(|e| Error::io(&path, e))?;
        Ok(DiagnosticsWriter { out, path })
    }

    pub fn write(&mut self, r: &DiagnosticsRecord) -> Result<()> {
        writeln!(self.out, "{}", diagnostics_row(r)).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> Observer for DiagnosticsWriter<W> {
    fn observe(&mut self, _step: usize, record: &DiagnosticsRecord, _state: &State) -> Result<()> {
        self.write(record)
    }
}

/// Parse diagnostics CSV text, insisting on the exact header.
pub fn parse_diagnostics(text: &str, path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let corrupt = |reason: String| Error::CorruptCsv {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
    if header.trim() != diagnostics_header() {
        return Err(corrupt(format!("unexpected header `{header}`")));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| corrupt(format!("row {}: {e}", k + 1)))?;
        let arr: [f64; 14] = vals
            .try_into()
            .map_err(|v: Vec<f64>| corrupt(format!("row {}: {} columns", k + 1, v.len())))?;
        out.push(DiagnosticsRecord::from_values(arr));
    }
    Ok(out)
}

pub fn read_diagnostics(path: impl AsRef<Path>) -> Result<Vec<DiagnosticsRecord>> {
    let path = path.as_ref();
    let mut text = String::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    parse_diagnostics(&text, path)
}

/// Serialize a state into the snapshot format.
pub fn encode_snapshot(state: &State) -> Vec<u8> {
    let n = state.n();
    let payload = n * n * 8;
    let mut buf = Vec::with_capacity(HEADER_LEN + FIELD_NAMES.len() * payload);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&state.t.to_le_bytes());
    buf.extend_from_slice(&(FIELD_NAMES.len() as u32).to_le_bytes());
    for (k, name) in FIELD_NAMES.iter().enumerate() {
        let mut tag = [b' '; 8];
        tag[..name.len()].copy_from_slice(name.as_bytes());
        buf.extend_from_slice(&tag);
        buf.extend_from_slice(&((HEADER_LEN + k * payload) as u64).to_le_bytes());
    }
    let fields = [
        &state.velocity.x,
        &state.velocity.y,
        &state.tensor.b11,
        &state.tensor.b12,
        &state.tensor.b22,
    ];
    for f in fields {
        for x in f.as_slice() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

fn take<const K: usize>(bytes: &[u8], at: usize) -> Option<[u8; K]> {
    bytes
        .get(at..at + K)
        .map(|s| s.try_into().expect("length checked"))
}

/// Inverse of [`encode_snapshot`]; `path` is only used in error messages.
pub fn decode_snapshot(bytes: &[u8], path: &Path) -> Result<State> {
    let corrupt = |reason: String| Error::CorruptSnapshot {
        path: path.to_path_buf(),
        reason,
    };
    let short = || corrupt("truncated header".into());
    if take::<4>(bytes, 0).ok_or_else(short)? != *MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(bytes, 4).ok_or_else(short)?);
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(take(bytes, 8).ok_or_else(short)?) as usize;
    if n == 0 {
        return Err(corrupt("grid size 0".into()));
    }
    let t = f64::from_le_bytes(take(bytes, 12).ok_or_else(short)?);
    let count = u32::from_le_bytes(take(bytes, 20).ok_or_else(short)?) as usize;
    if count != FIELD_NAMES.len() {
        return Err(corrupt(format!(
            "expected {} fields, found {count}",
            FIELD_NAMES.len()
        )));
    }
    let payload = n
        .checked_mul(n)
        .and_then(|x| x.checked_mul(8))
        .ok_or_else(|| corrupt("grid size overflow".into()))?;
    let mut fields = Vec::with_capacity(count);
    for (k, name) in FIELD_NAMES.iter().enumerate() {
        let at = 24 + 16 * k;
        let tag: [u8; 8] = take(bytes, at).ok_or_else(short)?;
        let got = String::from_utf8_lossy(&tag).trim_end().to_string();
        if got != *name {
            return Err(corrupt(format!("field {k} is `{got}`, expected `{name}`")));
        }
        let off = u64::from_le_bytes(take(bytes, at + 8).ok_or_else(short)?) as usize;
        let data = off
            .checked_add(payload)
            .and_then(|end| bytes.get(off..end))
            .ok_or_else(|| corrupt(format!("payload of `{name}` out of bounds")))?;
        let vals: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        fields.push(Field::from_vec(n, vals)?);
    }
    let mut it = fields.into_iter();
    let mut next = || it.next().expect("five fields");
    let velocity = VectorField::new(next(), next());
    let tensor = SymTensorField::new(next(), next(), next());
    State::new(t, velocity, tensor)
}

pub fn write_snapshot(path: impl AsRef<Path>, state: &State) -> Result<()> {
    let path = path.as_ref();
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&encode_snapshot(state))
        .map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<State> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes, path)
}

/// Checkpoints use the snapshot format, which stores every bit of the state.
pub fn checkpoint(path: impl AsRef<Path>, state: &State) -> Result<()> {
    write_snapshot(path, state)
}

pub fn restore(path: impl AsRef<Path>) -> Result<State> {
    read_snapshot(path)
}

/// Writes `snapshot_<step>.v2ds` into a directory every `every`-th emitted row.
pub struct SnapshotWriter {
    dir: PathBuf,
    every: usize,
    seen: usize,
    pub written: Vec<PathBuf>,
}

impl SnapshotWriter {
    pub fn new(dir: impl Into<PathBuf>, every: usize) -> Self {
        SnapshotWriter {
            dir: dir.into(),
            every: every.max(1),
            seen: 0,
            written: Vec::new(),
        }
    }
}

impl Observer for SnapshotWriter {
    fn observe(&mut self, step: usize, _record: &DiagnosticsRecord, state: &State) -> Result<()> {
        if self.seen.is_multiple_of(self.every) {
            let path = self.dir.join(format!("snapshot_{step:08}.v2ds"));
            write_snapshot(&path, state)?;
            self.written.push(path);
        }
        self.seen += 1;
        Ok(())
    }
}

/// Write a plain CSV table.
pub fn write_table(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut put = |line: String| writeln!(f, "{line}").map_err(|e| Error::io(path, e));
    put(header.join(","))?;
    for r in rows {
        put(r.join(","))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Read a plain CSV table into a header and string rows.
pub fn read_table(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let path = path.as_ref();
    let f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut lines = f.lines();
    let split = |s: String| s.split(',').map(str::to_string).collect::<Vec<_>>();
    let header = match lines.next() {
        Some(l) => split(l.map_err(|e| Error::io(path, e))?),
        None => Vec::new(),
    };
    let mut rows = Vec::new();
    for l in lines {
        let l = l.map_err(|e| Error::io(path, e))?;
        if !l.trim().is_empty() {
            rows.push(split(l));
        }
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelParams;
    use crate::diagnostics::record;
    use crate::init::{random_spd_tensor, random_velocity, seeded};
    use crate::spectral::SpectralGrid;
    use proptest::prelude::*;

    fn random_state(n: usize, seed: u64) -> State {
        let mut rng = seeded(seed);
        let v = random_velocity(n, &mut rng, 1.0, 3);
        let b = random_spd_tensor(n, &mut rng, 0.3, 3, 0.1);
        State::new(0.123456789, v, b).unwrap()
    }

    #[test]
    fn header_is_exact() {
        assert_eq!(
            diagnostics_header(),
            "t,kinetic,elastic,dissipation,power_in,energy_residual,lambda_min,norm_v,norm_gradv,norm_B,norm_gradB,norm_B_l4,gronwall_g,eps_gap"
        );
    }

    #[test]
    fn seventeen_significant_digits() {
        let s = fmt_f64(0.1);
        let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let s = random_state(16, 4);
        let back = decode_snapshot(&encode_snapshot(&s), Path::new("mem")).unwrap();
        assert_eq!(back.t.to_bits(), s.t.to_bits());
        let bits = |st: &State| {
            [
                &st.velocity.x,
                &st.velocity.y,
                &st.tensor.b11,
                &st.tensor.b12,
                &st.tensor.b22,
            ]
            .iter()
            .flat_map(|f| f.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
        };
        assert_eq!(bits(&back), bits(&s));
    }

    #[test]
    fn equilibrium_snapshot_payload() {
        let bytes = encode_snapshot(&State::equilibrium(4));
        assert_eq!(&bytes[..4], b"V2DS");
        assert_eq!(bytes.len(), HEADER_LEN + 5 * 16 * 8);
        let read = |field: usize, k: usize| {
            let off = HEADER_LEN + field * 128 + 8 * k;
            f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap())
        };
        for k in 0..16 {
            assert_eq!(read(2, k), 1.0);
            assert_eq!(read(3, k), 0.0);
            assert_eq!(read(4, k), 1.0);
        }
        assert_eq!(&bytes[24..32], b"vx      ");
    }

    #[test]
    fn corrupt_snapshots_are_rejected() {
        let good = encode_snapshot(&State::equilibrium(4));
        let p = Path::new("x.v2ds");
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_snapshot(&bad, p),
            Err(Error::CorruptSnapshot { .. })
        ));
        let mut bad = good.clone();
        bad[4] = 2;
        match decode_snapshot(&bad, p) {
            Err(Error::CorruptSnapshot { reason, .. }) => assert!(reason.contains("version")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode_snapshot(&good[..good.len() - 1], p),
            Err(Error::CorruptSnapshot { .. })
        ));
        assert!(matches!(
            decode_snapshot(&good[..10], p),
            Err(Error::CorruptSnapshot { .. })
        ));
    }

    #[test]
    fn file_round_trips_and_missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let s = random_state(8, 9);
        let path = dir.path().join("c.v2ds");
        checkpoint(&path, &s).unwrap();
        assert_eq!(restore(&path).unwrap(), s);
        let missing = dir.path().join("missing.v2ds");
        let err = restore(&missing).unwrap_err();
        assert!(err.to_string().contains("missing.v2ds"));
    }

    #[test]
    fn equilibrium_diagnostics_row() {
        let g = SpectralGrid::new(8).unwrap();
        let r = record(&g, &State::equilibrium(8), None, &ModelParams::default()).unwrap();
        let mut w = DiagnosticsWriter::new(Vec::new(), PathBuf::from("mem")).unwrap();
        w.write(&r).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let back = parse_diagnostics(&text, Path::new("mem")).unwrap();
        assert_eq!(back[0].kinetic, 0.0);
        assert_eq!(back[0].dissipation, 0.0);
        assert!(back[0].elastic.abs() < 1e-15);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let text = "t,kinetic\n1,2\n";
        assert!(parse_diagnostics(text, Path::new("d.csv")).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trips_every_f64(bits in proptest::array::uniform14(any::<u64>())) {
            let vals = bits.map(f64::from_bits);
            let r = DiagnosticsRecord::from_values(vals);
            let text = format!("{}\n{}\n", diagnostics_header(), diagnostics_row(&r));
            let back = parse_diagnostics(&text, Path::new("mem")).unwrap()[0];
            for (a, b) in r.values().iter().zip(back.values()) {
                if a.is_nan() {
                    prop_assert!(b.is_nan());
                } else {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
