//! Reader and writer for the NPY v1.0 format, restricted to little-endian
//! `<f4`/`<f8` arrays in C order.
//!
//! Layout: the magic string `\x93NUMPY`, version bytes `0x01 0x00`, a
//! little-endian `u16` header length, then an ASCII Python dict literal
//! padded with spaces and terminated by `\n` so that the whole header block
//! is a multiple of 64 bytes. The raw row-major payload follows.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::IoError;
use crate::tensor::{DType, Tensor, TensorData};

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

/// Parsed header dict.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dtype: DType,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

impl Header {
    /// The dict literal exactly as numpy writes it, without padding.
    fn literal(&self) -> String {
        let shape = match self.shape.as_slice() {
            [] => "()".to_string(),
            [n] => format!("({n},)"),
            dims => {
                let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
                format!("({})", parts.join(", "))
            }
        };
        format!(
            "{{'descr': '{}', 'fortran_order': {}, 'shape': {}, }}",
            self.dtype.descr(),
            if self.fortran_order { "True" } else { "False" },
            shape
        )
    }

    /// Full header block: preamble plus padded dict.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = self.literal();
        let unpadded = PREAMBLE_LEN + text.len() + 1;
        let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
        text.extend(std::iter::repeat_n(' ', pad));
        text.push('\n');

        let mut out = Vec::with_capacity(PREAMBLE_LEN + text.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(text.len() as u16).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let header = Header {
        dtype: t.dtype(),
        fortran_order: false,
        shape: t.shape().to_vec(),
    };
    let mut out = header.to_bytes();
    out.reserve(t.len() * t.dtype().size_of());
    match t.data() {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, IoError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(IoError::MagicMismatch);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(IoError::MalformedHeader("file ends inside the preamble".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(IoError::UnsupportedVersion { major, minor });
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(IoError::MalformedHeader("file ends inside the header".into()));
    }
    let text = std::str::from_utf8(&bytes[PREAMBLE_LEN..data_start])
        .map_err(|_| IoError::MalformedHeader("header is not ASCII".into()))?;
    let header = parse_header(text)?;
    if header.fortran_order {
        return Err(IoError::FortranOrderUnsupported);
    }

    let count: usize = header.shape.iter().product();
    let payload = &bytes[data_start..];
    let expected = count * header.dtype.size_of();
    if payload.len() != expected {
        return Err(IoError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    let data = match header.dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
        DType::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(Tensor::new(header.shape, data).expect("payload length checked"))
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<Tensor, IoError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| IoError::at(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| IoError::at(path, e))?;
    decode(&bytes)
}

pub fn write_npy(t: &Tensor, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| IoError::at(path, e))?);
    w.write_all(&encode(t)).map_err(|e| IoError::at(path, e))?;
    w.flush().map_err(|e| IoError::at(path, e))
}

// A tiny parser for the dict literal. Keys may come in any order; anything
// beyond strings, booleans and integer tuples is rejected.

#[derive(Debug)]
enum Literal {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), IoError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(malformed(format!("expected '{}' at byte {}", c as char, self.pos)))
        }
    }

    fn string(&mut self) -> Result<String, IoError> {
        let quote = self.peek().filter(|&q| q == b'\'' || q == b'"');
        let quote = quote.ok_or_else(|| malformed("expected a quoted string"))?;
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.s.len() {
            return Err(malformed("unterminated string"));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn integer(&mut self) -> Result<usize, IoError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        // numpy on some platforms writes `3L`
        let digits = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
        if self.s.get(self.pos) == Some(&b'L') {
            self.pos += 1;
        }
        digits
            .parse()
            .map_err(|_| malformed(format!("bad shape entry at byte {start}")))
    }

    fn literal(&mut self) -> Result<Literal, IoError> {
        match self.peek() {
            Some(b'\'') | Some(b'"') => Ok(Literal::Str(self.string()?)),
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
                        _ => return Err(malformed("bad shape tuple")),
                    }
                }
                Ok(Literal::Tuple(dims))
            }
            _ => {
                let rest = &self.s[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Literal::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Literal::Bool(false))
                } else {
                    Err(malformed(format!("unexpected value at byte {}", self.pos)))
                }
            }
        }
    }
}

fn malformed(msg: impl Into<String>) -> IoError {
    IoError::MalformedHeader(msg.into())
}

pub fn parse_header(text: &str) -> Result<Header, IoError> {
    let mut cur = Cursor {
        s: text.as_bytes(),
        pos: 0,
    };
    cur.expect(b'{')?;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    loop {
        if cur.peek() == Some(b'}') {
            cur.pos += 1;
            break;
        }
        let key = cur.string()?;
        cur.expect(b':')?;
        match (key.as_str(), cur.literal()?) {
            ("descr", Literal::Str(s)) => descr = Some(s),
            ("fortran_order", Literal::Bool(b)) => fortran = Some(b),
            ("shape", Literal::Tuple(t)) => shape = Some(t),
            (k, v) => return Err(malformed(format!("unexpected entry {k}: {v:?}"))),
        }
        match cur.peek() {
            Some(b',') => cur.pos += 1,
            Some(b'}') => {}
            _ => return Err(malformed("expected ',' or '}'")),
        }
    }
    if cur.s[cur.pos..].iter().any(|b| !b.is_ascii_whitespace()) {
        return Err(malformed("trailing bytes after header dict"));
    }

    let descr = descr.ok_or_else(|| malformed("missing 'descr'"))?;
    let dtype = match descr.as_str() {
        "<f4" => DType::F32,
        "<f8" => DType::F64,
        other => return Err(IoError::UnsupportedDtype(other.to_string())),
    };
    Ok(Header {
        dtype,
        fortran_order: fortran.ok_or_else(|| malformed("missing 'fortran_order'"))?,
        shape: shape.ok_or_else(|| malformed("missing 'shape'"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Header bytes produced by numpy 1.x/2.x `np.save` for a (2, 3) float32 array.
    const NUMPY_2X3_F32_HEADER: &[u8] = b"\x93NUMPY\x01\x00v\x00{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }                                                          \n";

    #[test]
    fn header_matches_numpy_bytes() {
        let t = Tensor::from_f32(vec![2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..128], NUMPY_2X3_F32_HEADER);
        assert_eq!(bytes.len(), 128 + 24);
        assert_eq!(&bytes[128..132], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[148..152], &5.0f32.to_le_bytes());
    }

    #[test]
    fn header_block_is_aligned() {
        for shape in [vec![], vec![0], vec![7], vec![1152], vec![3, 4, 5], vec![100000, 1152]] {
            let h = Header {
                dtype: DType::F64,
                fortran_order: false,
                shape,
            };
            let b = h.to_bytes();
            assert_eq!(b.len() % 64, 0);
            assert_eq!(*b.last().unwrap(), b'\n');
        }
    }

    #[test]
    fn empty_and_scalar_shapes() {
        let empty = Tensor::from_f64(vec![0], vec![]).unwrap();
        let bytes = encode(&empty);
        assert_eq!(bytes.len(), 128);
        assert!(std::str::from_utf8(&bytes[10..]).unwrap().contains("'shape': (0,)"));
        assert!(decode(&bytes).unwrap().bit_eq(&empty));

        let scalar = Tensor::from_f64(vec![], vec![3.0]).unwrap();
        let back = decode(&encode(&scalar)).unwrap();
        assert!(back.bit_eq(&scalar));
    }

    #[test]
    fn payload_size_for_1152_f64() {
        let t = Tensor::vector(vec![0.5; 1152]);
        let bytes = encode(&t);
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!(bytes.len() - 10 - header_len, 9216);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(decode(b"\x93NUMPX\x01\x00"), Err(IoError::MagicMismatch)));
        assert!(matches!(decode(b"abc"), Err(IoError::MagicMismatch)));
    }

    fn with_header(dict: &str, payload: &[u8]) -> Vec<u8> {
        let mut text = dict.to_string();
        while (10 + text.len() + 1) % 64 != 0 {
            text.push(' ');
        }
        text.push('\n');
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(text.len() as u16).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn rejects_big_endian_and_integers() {
        let be = with_header("{'descr': '>f4', 'fortran_order': False, 'shape': (1,), }", &[0; 4]);
        assert!(matches!(decode(&be), Err(IoError::UnsupportedDtype(d)) if d == ">f4"));
        let int = with_header("{'descr': '<i8', 'fortran_order': False, 'shape': (1,), }", &[0; 8]);
        assert!(matches!(decode(&int), Err(IoError::UnsupportedDtype(_))));
        let half = with_header("{'descr': '<f2', 'fortran_order': False, 'shape': (1,), }", &[0; 2]);
        assert!(matches!(decode(&half), Err(IoError::UnsupportedDtype(_))));
    }

    #[test]
    fn rejects_fortran_order() {
        let f = with_header("{'descr': '<f8', 'fortran_order': True, 'shape': (2, 2), }", &[0; 32]);
        assert!(matches!(decode(&f), Err(IoError::FortranOrderUnsupported)));
    }

    #[test]
    fn rejects_short_and_long_payloads() {
        let short = with_header("{'descr': '<f8', 'fortran_order': False, 'shape': (2, 2), }", &[0; 31]);
        assert!(matches!(
            decode(&short),
            Err(IoError::TruncatedPayload { expected: 32, actual: 31 })
        ));
        let long = with_header("{'descr': '<f8', 'fortran_order': False, 'shape': (1,), }", &[0; 16]);
        assert!(matches!(decode(&long), Err(IoError::TruncatedPayload { .. })));
    }

    #[test]
    fn rejects_other_versions() {
        let mut b = encode(&Tensor::vector(vec![1.0]));
        b[6] = 2;
        assert!(matches!(
            decode(&b),
            Err(IoError::UnsupportedVersion { major: 2, minor: 0 })
        ));
    }

    #[test]
    fn parses_reordered_keys() {
        let h = parse_header("{'shape': (4,), 'fortran_order': False, 'descr': '<f4'}").unwrap();
        assert_eq!(h.shape, vec![4]);
        assert_eq!(h.dtype, DType::F32);
    }

    #[test]
    fn unwritable_path_is_io_failure() {
        let err = write_npy(&Tensor::vector(vec![1.0]), "/nonexistent-dir/x.npy").unwrap_err();
        assert!(matches!(err, IoError::Io { .. }));
    }

    fn tensor_strategy() -> impl Strategy<Value = Tensor> {
        let shape = prop::collection::vec(0usize..5, 0..4);
        (shape, any::<bool>()).prop_flat_map(|(shape, f32_)| {
            let n: usize = shape.iter().product();
            if f32_ {
                prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n)
                    .prop_map(move |v| Tensor::from_f32(shape.clone(), v).unwrap())
                    .boxed()
            } else {
                prop::collection::vec(any::<u64>().prop_map(f64::from_bits), n)
                    .prop_map(move |v| Tensor::from_f64(shape.clone(), v).unwrap())
                    .boxed()
            }
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(t in tensor_strategy()) {
            let back = decode(&encode(&t)).unwrap();
            prop_assert!(back.bit_eq(&t));
        }
    }
}
