//! The framing shared by dataset and checkpoint files: four magic bytes, a
//! `u32` version, a `u32` header length, a UTF-8 `key=value` header and a
//! little-endian `f64` payload.

use std::fmt::Display;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

/// Ordered `key=value` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse_text(text: &str) -> std::result::Result<Self, String> {
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("header line `{line}` has no `=`"))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }
}

/// Typed access to a header, reporting errors against a file path.
pub struct Fields<'a> {
    pub header: &'a Header,
    pub path: &'a Path,
}

impl Fields<'_> {
    pub fn str(&self, key: &str) -> Result<&str> {
        self.header.get(key).ok_or_else(|| Error::format(self.path, format!("header lacks `{key}`")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.str(key)?;
        v.parse().map_err(|_| Error::format(self.path, format!("header `{key}={v}` does not parse")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.str(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::format(self.path, format!("header `{key}={v}` does not parse"))))
            .collect()
    }
}

pub fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_preamble(w: &mut impl Write, magic: &[u8; 4], version: u32, header: &Header, path: &Path) -> Result<()> {
    let text = header.render();
    let len = u32::try_from(text.len()).map_err(|_| Error::format(path, "header too long"))?;
    let io = |e| Error::io(path, e);
    w.write_all(magic).map_err(io)?;
    w.write_all(&version.to_le_bytes()).map_err(io)?;
    w.write_all(&len.to_le_bytes()).map_err(io)?;
    w.write_all(text.as_bytes()).map_err(io)
}

/// Reads and checks the preamble; returns the version and header.
pub fn read_preamble(r: &mut impl Read, magic: &[u8; 4], path: &Path) -> Result<(u32, Header)> {
    let truncated = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "file is truncated")
        } else {
            Error::io(path, e)
        }
    };
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(truncated)?;
    if &m != magic {
        return Err(Error::format(path, format!("not a {} file", String::from_utf8_lossy(magic))));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(truncated)?;
    let version = u32::from_le_bytes(word);
    r.read_exact(&mut word).map_err(truncated)?;
    let len = u32::from_le_bytes(word) as usize;
    let mut text = Vec::new();
    r.take(len as u64).read_to_end(&mut text).map_err(|e| Error::io(path, e))?;
    if text.len() != len {
        return Err(Error::format(path, format!("header length {len} exceeds the file")));
    }
    let text = String::from_utf8(text).map_err(|_| Error::format(path, "header is not UTF-8"))?;
    let header = Header::parse_text(&text).map_err(|m| Error::format(path, m))?;
    Ok((version, header))
}

pub fn write_f64s(w: &mut impl Write, values: &[f64], path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_f64s(r: &mut impl Read, n: usize, path: &Path) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, format!("payload ends before {n} values"))
        } else {
            Error::io(path, e)
        }
    })?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::format(path, "payload is truncated"))?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_u64(w: &mut impl Write, v: u64, path: &Path) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))
}

/// Fails unless the reader is exhausted.
pub fn expect_end(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::format(path, "trailing bytes after payload")),
        Err(e) => Err(Error::io(path, e)),
    }
}
