use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::{Complex32, Complex64};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WBN1";
const MAX_RANK: usize = 8;

/// Element type tag of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    /// Complex single precision, stored as a real plane then an imaginary plane.
    C64 = 3,
    /// Complex double precision, stored as two planes.
    C128 = 4,
}

impl DType {
    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::C64),
            4 => Some(DType::C128),
            _ => None,
        }
    }

    /// Bytes per element.
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::C64 => 8,
            DType::C128 => 16,
        }
    }
}

/// Header of one record: magic, dtype, rank and dimensions, little-endian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordHeader {
    pub dtype: DType,
    pub dims: Vec<usize>,
}

impl RecordHeader {
    pub fn payload_len(&self) -> Option<usize> {
        self.dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))?
            .checked_mul(self.dtype.size())
    }
}

/// An n-dimensional array of any supported element type.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
    C64(ArrayD<Complex32>),
    C128(ArrayD<Complex64>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
            ArrayData::C64(_) => DType::C64,
            ArrayData::C128(_) => DType::C128,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            ArrayData::F32(a) => a.shape(),
            ArrayData::F64(a) => a.shape(),
            ArrayData::C64(a) => a.shape(),
            ArrayData::C128(a) => a.shape(),
        }
    }

    pub fn header(&self) -> RecordHeader {
        RecordHeader {
            dtype: self.dtype(),
            dims: self.shape().to_vec(),
        }
    }

    pub fn into_f32(self) -> Option<ArrayD<f32>> {
        match self {
            ArrayData::F32(a) => Some(a),
            _ => None,
        }
    }

    pub fn into_f64(self) -> Option<ArrayD<f64>> {
        match self {
            ArrayData::F64(a) => Some(a),
            _ => None,
        }
    }

    pub fn into_c64(self) -> Option<ArrayD<Complex32>> {
        match self {
            ArrayData::C64(a) => Some(a),
            _ => None,
        }
    }

    pub fn into_c128(self) -> Option<ArrayD<Complex64>> {
        match self {
            ArrayData::C128(a) => Some(a),
            _ => None,
        }
    }
}

/// Serializes one record, elements in row-major order.
pub fn encode_record(data: &ArrayData) -> Vec<u8> {
    let header = data.header();
    let mut out =
        Vec::with_capacity(16 + 8 * header.dims.len() + header.payload_len().unwrap_or(0));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.dtype as u32).to_le_bytes());
    out.extend_from_slice(&(header.dims.len() as u32).to_le_bytes());
    for &d in &header.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match data {
        ArrayData::F32(a) => a
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        ArrayData::F64(a) => a
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        ArrayData::C64(a) => {
            a.iter()
                .for_each(|v| out.extend_from_slice(&v.re.to_le_bytes()));
            a.iter()
                .for_each(|v| out.extend_from_slice(&v.im.to_le_bytes()));
        }
        ArrayData::C128(a) => {
            a.iter()
                .for_each(|v| out.extend_from_slice(&v.re.to_le_bytes()));
            a.iter()
                .for_each(|v| out.extend_from_slice(&v.im.to_le_bytes()));
        }
    }
    out
}

/// Reads as many bytes as possible into `buf`; returns the count read.
fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn planes<T: Copy>(raw: &[u8], width: usize, parse: impl Fn(&[u8]) -> T) -> Vec<T> {
    raw.chunks_exact(width).map(parse).collect()
}

/// Decodes the next record from `reader`; `Ok(None)` at a clean end of input.
pub fn decode_record<R: Read>(reader: &mut R, path: &Path) -> Result<Option<ArrayData>> {
    let bad = |reason: String| Error::Record {
        path: path.to_path_buf(),
        reason,
    };
    let io = |e| Error::io(path, e);
    let mut fixed = [0u8; 12];
    let got = read_full(reader, &mut fixed).map_err(io)?;
    if got == 0 {
        return Ok(None);
    }
    if got < 12 {
        return Err(bad(format!(
            "size mismatch: header truncated after {got} bytes"
        )));
    }
    if &fixed[..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}", &fixed[..4])));
    }
    let tag = u32::from_le_bytes(fixed[4..8].try_into().expect("4 bytes"));
    let dtype = DType::from_tag(tag).ok_or_else(|| bad(format!("unknown dtype tag {tag}")))?;
    let rank = u32::from_le_bytes(fixed[8..12].try_into().expect("4 bytes")) as usize;
    if rank > MAX_RANK {
        return Err(bad(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut dim_bytes = vec![0u8; 8 * rank];
    let got = read_full(reader, &mut dim_bytes).map_err(io)?;
    if got < dim_bytes.len() {
        return Err(bad(format!(
            "size mismatch: dimensions truncated after {got} bytes"
        )));
    }
    let dims = dim_bytes
        .chunks_exact(8)
        .map(|c| usize::try_from(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad("dimension exceeds the address space".into()))?;
    let header = RecordHeader { dtype, dims };
    let len = header
        .payload_len()
        .ok_or_else(|| bad(format!("payload size of {:?} overflows", header.dims)))?;
    let mut payload = Vec::new();
    let got = reader
        .take(len as u64)
        .read_to_end(&mut payload)
        .map_err(io)?;
    if got < len {
        return Err(bad(format!(
            "size mismatch: expected {len} payload bytes, found {got}"
        )));
    }
    let shape = IxDyn(&header.dims);
    let count = len / dtype.size().max(1);
    let data = match dtype {
        DType::F32 => ArrayData::F32(
            ArrayD::from_shape_vec(
                shape,
                planes(&payload, 4, |c| {
                    f32::from_le_bytes(c.try_into().expect("4 bytes"))
                }),
            )
            .expect("payload matches shape"),
        ),
        DType::F64 => ArrayData::F64(
            ArrayD::from_shape_vec(
                shape,
                planes(&payload, 8, |c| {
                    f64::from_le_bytes(c.try_into().expect("8 bytes"))
                }),
            )
            .expect("payload matches shape"),
        ),
        DType::C64 => {
            let (re, im) = payload.split_at(4 * count);
            let re = planes(re, 4, |c| {
                f32::from_le_bytes(c.try_into().expect("4 bytes"))
            });
            let im = planes(im, 4, |c| {
                f32::from_le_bytes(c.try_into().expect("4 bytes"))
            });
            let v = re
                .into_iter()
                .zip(im)
                .map(|(a, b)| Complex32::new(a, b))
                .collect();
            ArrayData::C64(ArrayD::from_shape_vec(shape, v).expect("payload matches shape"))
        }
        DType::C128 => {
            let (re, im) = payload.split_at(8 * count);
            let re = planes(re, 8, |c| {
                f64::from_le_bytes(c.try_into().expect("8 bytes"))
            });
            let im = planes(im, 8, |c| {
                f64::from_le_bytes(c.try_into().expect("8 bytes"))
            });
            let v = re
                .into_iter()
                .zip(im)
                .map(|(a, b)| Complex64::new(a, b))
                .collect();
            ArrayData::C128(ArrayD::from_shape_vec(shape, v).expect("payload matches shape"))
        }
    };
    Ok(Some(data))
}

/// Writes a sequence of records to `path`, replacing the file.
pub fn write_records(path: impl AsRef<Path>, records: &[ArrayData]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        w.write_all(&encode_record(r))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads every record in `path`.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ArrayData>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut out = Vec::new();
    while let Some(rec) = decode_record(&mut r, path)? {
        out.push(rec);
    }
    Ok(out)
}

/// Writes a single-record file.
pub fn write_record(path: impl AsRef<Path>, data: &ArrayData) -> Result<()> {
    write_records(path, std::slice::from_ref(data))
}

/// Reads a file that must hold exactly one record.
pub fn read_record(path: impl AsRef<Path>) -> Result<ArrayData> {
    let path = path.as_ref();
    let mut all = read_records(path)?;
    if all.len() != 1 {
        return Err(Error::Record {
            path: path.to_path_buf(),
            reason: format!("expected one record, found {}", all.len()),
        });
    }
    Ok(all.pop().expect("one record"))
}
