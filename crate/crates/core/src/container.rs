//! Self-describing binary container for subspaces and trajectories.
//!
//! Layout: 8-byte magic, `u64` little-endian header length, UTF-8 header of
//! `key=value` lines, then little-endian `f64` payload blocks.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::subspace::{BuildPath, Provenance, Subspace};

pub const MAGIC: &[u8; 8] = b"FDMCNT01";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 20;

pub type Header = BTreeMap<String, String>;

fn bad(msg: impl Into<String>) -> Error {
    Error::Container(msg.into())
}

pub fn write_header<W: Write>(w: &mut W, header: &Header) -> Result<()> {
    let mut text = String::new();
    for (k, v) in header {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(bad(format!("header entry {k:?} cannot be encoded")));
        }
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    let io = |e| Error::Container(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(text.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(text.as_bytes()).map_err(io)
}

pub fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let io = |e| Error::Container(format!("truncated container: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("not a container file (bad magic)"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(bad(format!("header of {len} bytes is implausibly large")));
    }
    let mut text = vec![0u8; len as usize];
    r.read_exact(&mut text).map_err(io)?;
    let text = String::from_utf8(text).map_err(|_| bad("header is not UTF-8"))?;
    let mut header = Header::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
        header.insert(k.to_string(), v.to_string());
    }
    Ok(header)
}

fn field<T: std::str::FromStr>(header: &Header, key: &str) -> Result<T> {
    header
        .get(key)
        .ok_or_else(|| bad(format!("header is missing '{key}'")))?
        .parse()
        .map_err(|_| bad(format!("header field '{key}' is malformed")))
}

fn write_f64s<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| bad(format!("write failed: {e}")))?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count.checked_mul(8).ok_or_else(|| bad("payload size overflows"))?];
    r.read_exact(&mut bytes).map_err(|e| bad(format!("truncated payload: {e}")))?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn expect_end<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => Ok(()),
        Ok(_) => Err(bad("trailing bytes after payload")),
        Err(e) => Err(bad(format!("read failed: {e}"))),
    }
}

pub fn write_subspace<W: Write>(w: &mut W, sub: &Subspace, extra: &Header) -> Result<()> {
    let mut header = extra.clone();
    header.insert("kind".into(), "subspace".into());
    header.insert("version".into(), FORMAT_VERSION.to_string());
    header.insert("rows".into(), sub.dim().to_string());
    header.insert("cols".into(), sub.size().to_string());
    header.insert("label".into(), sub.provenance().label.clone());
    header.insert("path".into(), sub.provenance().path.to_string());
    write_header(w, &header)?;
    let b = sub.basis();
    write_f64s(w, (0..b.nrows()).flat_map(|i| (0..b.ncols()).map(move |j| b[(i, j)])))?;
    write_f64s(w, sub.eigenvalues().iter().copied())?;
    write_f64s(w, sub.mean().iter().copied())
}

pub fn read_subspace<R: Read>(r: &mut R) -> Result<(Subspace, Header)> {
    let header = read_header(r)?;
    if header.get("kind").map(String::as_str) != Some("subspace") {
        return Err(bad("container does not hold a subspace"));
    }
    let version: u32 = field(&header, "version")?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported container version {version}")));
    }
    let rows: usize = field(&header, "rows")?;
    let cols: usize = field(&header, "cols")?;
    let path = header.get("path").and_then(|p| BuildPath::parse(p)).ok_or_else(|| bad("unknown build path"))?;
    let label = header.get("label").cloned().unwrap_or_default();
    let data = read_f64s(r, rows.checked_mul(cols).ok_or_else(|| bad("basis size overflows"))?)?;
    let basis = DMatrix::from_row_slice(rows, cols, &data);
    let eigenvalues = DVector::from_vec(read_f64s(r, cols)?);
    let mean = DVector::from_vec(read_f64s(r, rows)?);
    expect_end(r)?;
    let sub = Subspace::from_parts(basis, eigenvalues, mean, Provenance { label, path })
        .map_err(|e| bad(format!("invalid subspace payload: {e}")))?;
    Ok((sub, header))
}

pub fn save_subspace(path: &Path, sub: &Subspace, extra: &Header) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_subspace(&mut w, sub, extra)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_subspace(path: &Path) -> Result<(Subspace, Header)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_subspace(&mut BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time: f64,
    pub component: u32,
    pub z: DVector<f64>,
    /// Optional full displacement.
    pub displacement: Option<DVector<f64>>,
}

/// Per-frame records `[time, component, z…, u…]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub m: usize,
    /// Length of the stored full displacements, 0 when absent.
    pub full_dim: usize,
    pub frames: Vec<Frame>,
}

impl Trajectory {
    pub fn new(m: usize, full_dim: usize) -> Self {
        Self { m, full_dim, frames: Vec::new() }
    }

    pub fn push(&mut self, frame: Frame) -> Result<()> {
        let full_ok = match &frame.displacement {
            Some(u) => u.len() == self.full_dim,
            None => self.full_dim == 0,
        };
        if frame.z.len() != self.m || !full_ok {
            return Err(Error::invalid("frame does not match the trajectory layout"));
        }
        self.frames.push(frame);
        Ok(())
    }

    fn record_len(&self) -> usize {
        2 + self.m + self.full_dim
    }
}

pub fn write_trajectory<W: Write>(w: &mut W, traj: &Trajectory, extra: &Header) -> Result<()> {
    let mut header = extra.clone();
    header.insert("kind".into(), "trajectory".into());
    header.insert("version".into(), FORMAT_VERSION.to_string());
    header.insert("frames".into(), traj.frames.len().to_string());
    header.insert("m".into(), traj.m.to_string());
    header.insert("full_dim".into(), traj.full_dim.to_string());
    header.insert("record".into(), "time,component,z,u".into());
    write_header(w, &header)?;
    for f in &traj.frames {
        let head = [f.time, f.component as f64];
        let u = f.displacement.iter().flat_map(|u| u.iter().copied());
        write_f64s(w, head.into_iter().chain(f.z.iter().copied()).chain(u))?;
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(r: &mut R) -> Result<(Trajectory, Header)> {
    let header = read_header(r)?;
    if header.get("kind").map(String::as_str) != Some("trajectory") {
        return Err(bad("container does not hold a trajectory"));
    }
    let frames: usize = field(&header, "frames")?;
    let mut traj = Trajectory::new(field(&header, "m")?, field(&header, "full_dim")?);
    for _ in 0..frames {
        let rec = read_f64s(r, traj.record_len())?;
        let component = rec[1];
        if !(component >= 0.0 && component.fract() == 0.0 && component <= u32::MAX as f64) {
            return Err(bad("frame component index is malformed"));
        }
        let z = DVector::from_column_slice(&rec[2..2 + traj.m]);
        let displacement = (traj.full_dim > 0).then(|| DVector::from_column_slice(&rec[2 + traj.m..]));
        traj.frames.push(Frame { time: rec[0], component: component as u32, z, displacement });
    }
    expect_end(r)?;
    Ok((traj, header))
}

pub fn save_trajectory(path: &Path, traj: &Trajectory, extra: &Header) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_trajectory(&mut w, traj, extra)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_trajectory(path: &Path) -> Result<(Trajectory, Header)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectory(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_subspace(rows: usize, cols: usize, seed: u64) -> Subspace {
        let v = |i: usize| ((i as u64).wrapping_mul(6364136223846793005).wrapping_add(seed) >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        Subspace::from_parts(
            DMatrix::from_fn(rows, cols, |i, j| v(i * cols + j)),
            DVector::from_fn(cols, |i, _| 1.0 / (1.0 + i as f64)),
            DVector::from_fn(rows, |i, _| v(i + 7777)),
            Provenance { label: "handle".into(), path: BuildPath::LowRankSvd },
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        let sub = sample_subspace(6, 2, 1);
        write_subspace(&mut buf, &sub, &Header::new()).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&buf[16..16 + len]).unwrap();
        assert!(text.contains("kind=subspace\n") && text.contains("rows=6\n") && text.contains("path=lowrank-SVD\n"));
        // first payload entry is B[0, 0], second is B[0, 1] (row-major)
        let first = f64::from_le_bytes(buf[16 + len..24 + len].try_into().unwrap());
        let second = f64::from_le_bytes(buf[24 + len..32 + len].try_into().unwrap());
        assert_eq!(first.to_bits(), sub.basis()[(0, 0)].to_bits());
        assert_eq!(second.to_bits(), sub.basis()[(0, 1)].to_bits());
        assert_eq!(buf.len(), 16 + len + 8 * (12 + 2 + 6));
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.fdm");
        let sub = sample_subspace(9, 3, 5);
        let mut extra = Header::new();
        extra.insert("component".into(), "1".into());
        save_subspace(&path, &sub, &extra).unwrap();
        let (back, header) = load_subspace(&path).unwrap();
        assert_eq!(back, sub);
        assert_eq!(header["component"], "1");

        let bytes = std::fs::read(&path).unwrap();
        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 3);
        assert!(read_subspace(&mut truncated.as_slice()).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(read_subspace(&mut wrong.as_slice()).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(read_subspace(&mut longer.as_slice()).is_err());
        assert!(matches!(load_subspace(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn trajectory_round_trip() {
        let mut t = Trajectory::new(2, 3);
        t.push(Frame { time: 0.0, component: 0, z: DVector::from_vec(vec![1.0, 2.0]), displacement: Some(DVector::from_vec(vec![0.1, 0.2, 0.3])) }).unwrap();
        t.push(Frame { time: 1.0 / 60.0, component: 1, z: DVector::from_vec(vec![-1.0, 0.5]), displacement: Some(DVector::from_vec(vec![0.0, -0.2, 1e-300])) }).unwrap();
        assert!(t.push(Frame { time: 0.0, component: 0, z: DVector::zeros(3), displacement: None }).is_err());
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &t, &Header::new()).unwrap();
        let (back, _) = read_trajectory(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut sub_buf = Vec::new();
        write_subspace(&mut sub_buf, &sample_subspace(3, 1, 0), &Header::new()).unwrap();
        assert!(read_trajectory(&mut sub_buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn subspace_round_trip_is_bit_exact(
            rows in 1usize..20,
            cols in 1usize..5,
            values in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 140),
            label in "[a-z0-9 _-]{0,12}",
        ) {
            let basis = DMatrix::from_fn(rows, cols, |i, j| values[(i * cols + j) % values.len()]);
            let eig = DVector::from_fn(cols, |i, _| values[(i + 100) % values.len()]);
            let mean = DVector::from_fn(rows, |i, _| values[(i + 120) % values.len()]);
            let sub = Subspace::from_parts(basis, eig, mean, Provenance { label, path: BuildPath::DiagonalGevp }).unwrap();
            let mut buf = Vec::new();
            write_subspace(&mut buf, &sub, &Header::new()).unwrap();
            let (back, _) = read_subspace(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.basis().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), sub.basis().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.eigenvalues().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), sub.eigenvalues().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.mean().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), sub.mean().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.provenance(), sub.provenance());
        }
    }
}
