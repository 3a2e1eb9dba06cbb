//! Little-endian binary containers for fitted models.

use std::fs;
use std::io::Write;
use std::path::Path;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: &[u8; 8]) -> Self {
        Encoder { buf: magic.to_vec() }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Row-major payload, no shape header.
    pub fn mat(&mut self, m: MatRef<'_, f64>) {
        self.buf.reserve(m.nrows() * m.ncols() * 8);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8], magic: &[u8; 8], path: &'a Path) -> Result<Self> {
        if !bytes.starts_with(magic) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                msg: format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
            });
        }
        Ok(Decoder { bytes, pos: 8, path })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                msg: "truncated model file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| self.error("size overflows usize"))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn mat(&mut self, rows: usize, cols: usize) -> Result<Mat<f64>> {
        let bytes = self.take(rows * cols * 8)?;
        let mut m = Mat::zeros(rows, cols);
        for (k, chunk) in bytes.chunks_exact(8).enumerate() {
            m[(k / cols, k % cols)] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(m)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error("trailing bytes after model payload"));
        }
        Ok(())
    }

    pub fn error(&self, msg: &str) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// `model.bin` → `model.json`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}
