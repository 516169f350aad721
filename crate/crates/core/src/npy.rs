//! NPY v1.0 array files restricted to little-endian `i64` and `f64`, C order.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NpyFormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("fortran_order arrays are not supported")]
    FortranOrder,
    #[error("truncated data ({expected} bytes expected, {actual} present)")]
    TruncatedData { expected: usize, actual: usize },
    #[error("trailing data ({expected} bytes expected, {actual} present)")]
    TrailingData { expected: usize, actual: usize },
    #[error("shape must have at least one dimension, each non-zero")]
    EmptyShape,
    #[error("shape {shape:?} does not match {len} elements")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
}

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: NpyFormatError,
    },
}

impl NpyError {
    /// The format violation, if this is not an I/O failure.
    pub fn format_error(&self) -> Option<&NpyFormatError> {
        match self {
            NpyError::Format { source, .. } => Some(source),
            NpyError::Io { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NpyData {
    I64(Vec<i64>),
    F64(Vec<f64>),
}

impl NpyData {
    fn len(&self) -> usize {
        match self {
            NpyData::I64(v) => v.len(),
            NpyData::F64(v) => v.len(),
        }
    }

    fn descr(&self) -> &'static str {
        match self {
            NpyData::I64(_) => "<i8",
            NpyData::F64(_) => "<f8",
        }
    }
}

/// A row-major array with its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    shape: Vec<usize>,
    data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<NpyArray, NpyFormatError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NpyFormatError::EmptyShape);
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(NpyFormatError::ShapeMismatch { shape, len: data.len() });
        }
        Ok(NpyArray { shape, data })
    }

    pub fn vector_i64(data: Vec<i64>) -> Result<NpyArray, NpyFormatError> {
        NpyArray::new(vec![data.len()], NpyData::I64(data))
    }

    pub fn vector_f64(data: Vec<f64>) -> Result<NpyArray, NpyFormatError> {
        NpyArray::new(vec![data.len()], NpyData::F64(data))
    }

    pub fn matrix_i64(rows: usize, cols: usize, data: Vec<i64>) -> Result<NpyArray, NpyFormatError> {
        NpyArray::new(vec![rows, cols], NpyData::I64(data))
    }

    pub fn matrix_f64(rows: usize, cols: usize, data: Vec<f64>) -> Result<NpyArray, NpyFormatError> {
        NpyArray::new(vec![rows, cols], NpyData::F64(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &NpyData {
        &self.data
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            NpyData::I64(v) => Some(v),
            NpyData::F64(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            NpyData::F64(v) => Some(v),
            NpyData::I64(_) => None,
        }
    }

    pub fn into_data(self) -> NpyData {
        self.data
    }
}

fn header_text(descr: &str, shape: &[usize]) -> String {
    let shape = match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
    // magic(6) + version(2) + length(2) + header + '\n' must be a multiple of 64
    let unpadded = MAGIC.len() + 4 + header.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');
    header
}

/// Serializes `array` as an NPY v1.0 byte stream.
pub fn encode(array: &NpyArray) -> Vec<u8> {
    let header = header_text(array.data.descr(), &array.shape);
    let mut out = Vec::with_capacity(10 + header.len() + 8 * array.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &array.data {
        NpyData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

/// Parses an NPY v1.0 byte stream of `<i8`/`<f8` in C order.
pub fn decode(bytes: &[u8]) -> Result<NpyArray, NpyFormatError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NpyFormatError::BadMagic);
    }
    if bytes.len() < 10 {
        return Err(NpyFormatError::BadHeader("preamble truncated".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(NpyFormatError::UnsupportedVersion(bytes[6], bytes[7]));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(NpyFormatError::BadHeader("header truncated".into()));
    }
    let header = std::str::from_utf8(&bytes[10..data_start])
        .map_err(|_| NpyFormatError::BadHeader("header is not ASCII".into()))?;
    let fields = header::parse(header)?;
    if fields.fortran_order {
        return Err(NpyFormatError::FortranOrder);
    }
    if fields.shape.is_empty() || fields.shape.contains(&0) {
        return Err(NpyFormatError::EmptyShape);
    }
    let count: usize = fields.shape.iter().product();
    let expected = count * 8;
    let payload = &bytes[data_start..];
    if payload.len() < expected {
        return Err(NpyFormatError::TruncatedData {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(NpyFormatError::TrailingData {
            expected,
            actual: payload.len(),
        });
    }
    let words = payload.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).expect("chunk of 8"));
    let data = match fields.descr.as_str() {
        "<i8" => NpyData::I64(words.map(i64::from_le_bytes).collect()),
        "<f8" => NpyData::F64(words.map(f64::from_le_bytes).collect()),
        other => return Err(NpyFormatError::UnsupportedDtype(other.to_string())),
    };
    NpyArray::new(fields.shape, data)
}

pub fn write_array(path: impl AsRef<Path>, array: &NpyArray) -> Result<(), NpyError> {
    let path = path.as_ref();
    fs::write(path, encode(array)).map_err(|source| NpyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_array(path: impl AsRef<Path>) -> Result<NpyArray, NpyError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NpyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes).map_err(|source| NpyError::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Minimal parser for the Python dict literal in NPY headers.
mod header {
    use super::NpyFormatError;

    pub(super) struct Fields {
        pub descr: String,
        pub fortran_order: bool,
        pub shape: Vec<usize>,
    }

    enum Value {
        Str(String),
        Bool(bool),
        Tuple(Vec<usize>),
    }

    struct Cursor<'a> {
        s: &'a [u8],
        pos: usize,
    }

    fn bad(msg: &str) -> NpyFormatError {
        NpyFormatError::BadHeader(msg.to_string())
    }

    impl Cursor<'_> {
        fn skip_ws(&mut self) {
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
        }

        fn peek(&mut self) -> Option<u8> {
            self.skip_ws();
            self.s.get(self.pos).copied()
        }

        fn expect(&mut self, c: u8) -> Result<(), NpyFormatError> {
            if self.peek() == Some(c) {
                self.pos += 1;
                Ok(())
            } else {
                Err(bad(&format!("expected '{}'", c as char)))
            }
        }

        fn string(&mut self) -> Result<String, NpyFormatError> {
            let quote = self.peek().ok_or_else(|| bad("unexpected end"))?;
            if quote != b'\'' && quote != b'"' {
                return Err(bad("expected string"));
            }
            self.pos += 1;
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos] != quote {
                self.pos += 1;
            }
            if self.pos == self.s.len() {
                return Err(bad("unterminated string"));
            }
            let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
            self.pos += 1;
            Ok(out)
        }

        fn integer(&mut self) -> Result<usize, NpyFormatError> {
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            std::str::from_utf8(&self.s[start..self.pos])
                .ok()
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| bad("expected integer"))
        }

        fn value(&mut self) -> Result<Value, NpyFormatError> {
            match self.peek() {
                Some(b'\'') | Some(b'"') => Ok(Value::Str(self.string()?)),
                Some(b'(') => {
                    self.pos += 1;
                    let mut dims = Vec::new();
                    loop {
                        if self.peek() == Some(b')') {
                            self.pos += 1;
                            break;
                        }
                        dims.push(self.integer()?);
                        match self.peek() {
                            Some(b',') => self.pos += 1,
                            Some(b')') => {}
                            _ => return Err(bad("expected ',' or ')' in shape")),
                        }
                    }
                    Ok(Value::Tuple(dims))
                }
                _ => {
                    let rest = &self.s[self.pos..];
                    if rest.starts_with(b"True") {
                        self.pos += 4;
                        Ok(Value::Bool(true))
                    } else if rest.starts_with(b"False") {
                        self.pos += 5;
                        Ok(Value::Bool(false))
                    } else {
                        Err(bad("unrecognized value"))
                    }
                }
            }
        }
    }

    pub(super) fn parse(text: &str) -> Result<Fields, NpyFormatError> {
        let mut c = Cursor {
            s: text.as_bytes(),
            pos: 0,
        };
        let (mut descr, mut fortran, mut shape) = (None, None, None);
        c.expect(b'{')?;
        loop {
            if c.peek() == Some(b'}') {
                c.pos += 1;
                break;
            }
            let key = c.string()?;
            c.expect(b':')?;
            let value = c.value()?;
            match (key.as_str(), value) {
                ("descr", Value::Str(s)) => descr = Some(s),
                ("fortran_order", Value::Bool(b)) => fortran = Some(b),
                ("shape", Value::Tuple(t)) => shape = Some(t),
                (k, _) => return Err(bad(&format!("unexpected key or value for {k:?}"))),
            }
            match c.peek() {
                Some(b',') => c.pos += 1,
                Some(b'}') => {}
                _ => return Err(bad("expected ',' or '}'")),
            }
        }
        if c.peek().is_some() {
            return Err(bad("trailing characters after dict"));
        }
        Ok(Fields {
            descr: descr.ok_or_else(|| bad("missing 'descr'"))?,
            fortran_order: fortran.ok_or_else(|| bad("missing 'fortran_order'"))?,
            shape: shape.ok_or_else(|| bad("missing 'shape'"))?,
        })
    }
}
