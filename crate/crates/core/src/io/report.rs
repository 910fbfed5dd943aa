//! Deterministic JSON reports.
//!
//! Reports are rendered through `serde_json::Value`, whose map is ordered by
//! key, so the output never depends on struct field order or hash seeds.
//! Numbers are printed in shortest round-trip form. serde_json silently turns
//! NaN and infinities into `null`, so reports are scanned for non-finite
//! floats first and rejected.

use std::fmt::Display;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::ser::{self, Serialize};

use super::IoError;

pub fn to_report_string<T: Serialize + ?Sized>(report: &T) -> Result<String, IoError> {
    if let Some(path) = find_non_finite(report) {
        return Err(IoError::NonFiniteValue(path));
    }
    let value = serde_json::to_value(report).map_err(|e| IoError::Json {
        path: "<report>".into(),
        source: e,
    })?;
    let mut text = serde_json::to_string_pretty(&value).expect("Value always serializes");
    text.push('\n');
    Ok(text)
}

pub fn write_report<T: Serialize + ?Sized>(report: &T, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let text = to_report_string(report)?;
    std::fs::write(path, text).map_err(|e| IoError::at(path, e))
}

pub fn read_report<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::at(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Location of the first NaN/inf float in `value`, as a dotted path.
pub fn find_non_finite<T: Serialize + ?Sized>(value: &T) -> Option<String> {
    let mut scan = Scan::default();
    match value.serialize(&mut scan) {
        Err(Found(path)) => Some(path),
        Ok(()) => None,
    }
}

#[derive(Debug)]
struct Found(String);

impl Display for Found {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Found {}

impl ser::Error for Found {
    fn custom<M: Display>(msg: M) -> Self {
        Found(msg.to_string())
    }
}

#[derive(Default)]
struct Scan {
    path: Vec<String>,
}

impl Scan {
    fn check(&self, x: f64) -> Result<(), Found> {
        if x.is_finite() {
            Ok(())
        } else if self.path.is_empty() {
            Err(Found("<root>".into()))
        } else {
            Err(Found(self.path.join(".")))
        }
    }

    fn nested<T: Serialize + ?Sized>(&mut self, key: String, value: &T) -> Result<(), Found> {
        self.path.push(key);
        let r = value.serialize(&mut *self);
        self.path.pop();
        r
    }
}

macro_rules! ignore {
    ($($name:ident: $ty:ty),*) => {
        $(fn $name(self, _v: $ty) -> Result<(), Found> { Ok(()) })*
    };
}

impl<'a> ser::Serializer for &'a mut Scan {
    type Ok = ();
    type Error = Found;
    type SerializeSeq = Compound<'a>;
    type SerializeTuple = Compound<'a>;
    type SerializeTupleStruct = Compound<'a>;
    type SerializeTupleVariant = Compound<'a>;
    type SerializeMap = Compound<'a>;
    type SerializeStruct = Compound<'a>;
    type SerializeStructVariant = Compound<'a>;

    ignore!(serialize_bool: bool, serialize_i8: i8, serialize_i16: i16, serialize_i32: i32,
        serialize_i64: i64, serialize_u8: u8, serialize_u16: u16, serialize_u32: u32,
        serialize_u64: u64, serialize_char: char, serialize_str: &str, serialize_bytes: &[u8]);

    fn serialize_f32(self, v: f32) -> Result<(), Found> {
        self.check(v as f64)
    }
    fn serialize_f64(self, v: f64) -> Result<(), Found> {
        self.check(v)
    }
    fn serialize_none(self) -> Result<(), Found> {
        Ok(())
    }
    fn serialize_some<T: Serialize + ?Sized>(self, value: &T) -> Result<(), Found> {
        value.serialize(self)
    }
    fn serialize_unit(self) -> Result<(), Found> {
        Ok(())
    }
    fn serialize_unit_struct(self, _: &'static str) -> Result<(), Found> {
        Ok(())
    }
    fn serialize_unit_variant(self, _: &'static str, _: u32, _: &'static str) -> Result<(), Found> {
        Ok(())
    }
    fn serialize_newtype_struct<T: Serialize + ?Sized>(self, _: &'static str, value: &T) -> Result<(), Found> {
        value.serialize(self)
    }
    fn serialize_newtype_variant<T: Serialize + ?Sized>(
        self,
        _: &'static str,
        _: u32,
        variant: &'static str,
        value: &T,
    ) -> Result<(), Found> {
        self.nested(variant.to_string(), value)
    }
    fn serialize_seq(self, _: Option<usize>) -> Result<Compound<'a>, Found> {
        Ok(Compound::new(self))
    }
    fn serialize_tuple(self, _: usize) -> Result<Compound<'a>, Found> {
        Ok(Compound::new(self))
    }
    fn serialize_tuple_struct(self, _: &'static str, _: usize) -> Result<Compound<'a>, Found> {
        Ok(Compound::new(self))
    }
    fn serialize_tuple_variant(self, _: &'static str, _: u32, _: &'static str, _: usize) -> Result<Compound<'a>, Found> {
        Ok(Compound::new(self))
    }
    fn serialize_map(self, _: Option<usize>) -> Result<Compound<'a>, Found> {
        Ok(Compound::new(self))
    }
    fn serialize_struct(self, _: &'static str, _: usize) -> Result<Compound<'a>, Found> {
        Ok(Compound::new(self))
    }
    fn serialize_struct_variant(self, _: &'static str, _: u32, _: &'static str, _: usize) -> Result<Compound<'a>, Found> {
        Ok(Compound::new(self))
    }
}

struct Compound<'a> {
    scan: &'a mut Scan,
    index: usize,
    key: String,
}

impl<'a> Compound<'a> {
    fn new(scan: &'a mut Scan) -> Self {
        Compound {
            scan,
            index: 0,
            key: String::new(),
        }
    }

    fn element<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), Found> {
        let key = self.index.to_string();
        self.index += 1;
        self.scan.nested(key, value)
    }
}

macro_rules! seq_like {
    ($($tr:ident :: $method:ident),*) => {$(
        impl ser::$tr for Compound<'_> {
            type Ok = ();
            type Error = Found;
            fn $method<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), Found> {
                self.element(value)
            }
            fn end(self) -> Result<(), Found> {
                Ok(())
            }
        }
    )*};
}

seq_like!(SerializeSeq::serialize_element, SerializeTuple::serialize_element,
    SerializeTupleStruct::serialize_field, SerializeTupleVariant::serialize_field);

impl ser::SerializeMap for Compound<'_> {
    type Ok = ();
    type Error = Found;
    fn serialize_key<T: Serialize + ?Sized>(&mut self, key: &T) -> Result<(), Found> {
        self.key = serde_json::to_value(key)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_else(|| self.index.to_string());
        Ok(())
    }
    fn serialize_value<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), Found> {
        self.index += 1;
        let key = std::mem::take(&mut self.key);
        self.scan.nested(key, value)
    }
    fn end(self) -> Result<(), Found> {
        Ok(())
    }
}

impl ser::SerializeStruct for Compound<'_> {
    type Ok = ();
    type Error = Found;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, key: &'static str, value: &T) -> Result<(), Found> {
        self.scan.nested(key.to_string(), value)
    }
    fn end(self) -> Result<(), Found> {
        Ok(())
    }
}

impl ser::SerializeStructVariant for Compound<'_> {
    type Ok = ();
    type Error = Found;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, key: &'static str, value: &T) -> Result<(), Found> {
        self.scan.nested(key.to_string(), value)
    }
    fn end(self) -> Result<(), Found> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};
    use std::collections::HashMap;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Sample {
        zeta: f64,
        alpha: Vec<f64>,
        nested: HashMap<String, f64>,
        label: Option<String>,
    }

    fn sample() -> Sample {
        let mut nested = HashMap::new();
        for (i, k) in ["0.02", "0.01", "0.5", "0.001"].iter().enumerate() {
            nested.insert(k.to_string(), 1.0 / (i as f64 + 3.0));
        }
        Sample {
            zeta: 0.1 + 0.2,
            alpha: vec![1e-300, -2.5e17, std::f64::consts::PI],
            nested,
            label: Some("y+t".into()),
        }
    }

    #[test]
    fn nan_and_inf_are_rejected_with_path() {
        let mut s = sample();
        s.alpha[1] = f64::NAN;
        match to_report_string(&s) {
            Err(IoError::NonFiniteValue(p)) => assert_eq!(p, "alpha.1"),
            other => panic!("expected NonFiniteValue, got {other:?}"),
        }
        let mut s = sample();
        s.nested.insert("0.03".into(), f64::INFINITY);
        match to_report_string(&s) {
            Err(IoError::NonFiniteValue(p)) => assert_eq!(p, "nested.0.03"),
            other => panic!("expected NonFiniteValue, got {other:?}"),
        }
        assert!(matches!(to_report_string(&f32::NAN), Err(IoError::NonFiniteValue(_))));
    }

    #[test]
    fn keys_sorted_and_output_stable() {
        let a = to_report_string(&sample()).unwrap();
        let b = to_report_string(&sample()).unwrap();
        assert_eq!(a, b);
        let alpha = a.find("\"alpha\"").unwrap();
        let zeta = a.find("\"zeta\"").unwrap();
        assert!(alpha < zeta);
        let k001 = a.find("\"0.001\"").unwrap();
        let k002 = a.find("\"0.02\"").unwrap();
        assert!(k001 < k002);
    }

    #[test]
    fn file_round_trip_preserves_floats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_report(&sample(), &p).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back: Sample = read_report(&p).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.zeta.to_bits(), (0.1f64 + 0.2).to_bits());
        write_report(&sample(), &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
        assert!(String::from_utf8(first).unwrap().contains("0.30000000000000004"));
    }
}
