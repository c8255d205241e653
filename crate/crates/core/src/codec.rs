//! Little-endian byte cursor used by the checkpoint and wire formats.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Default)]
pub struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn len_u32(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length exceeds u32"));
    }

    /// Row-major body without dimensions.
    pub fn matrix_body(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }

    pub fn vector_body(&mut self, v: &DVector<f64>) {
        for &x in v.iter() {
            self.f64(x);
        }
    }
}

pub struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Wire(format!(
                "truncated: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn matrix_body(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let need = rows.checked_mul(cols).and_then(|c| c.checked_mul(8));
        if need.is_none_or(|n| n > self.remaining()) {
            return Err(Error::Wire(format!("matrix {rows}x{cols} exceeds remaining {} bytes", self.remaining())));
        }
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.f64()?;
            }
        }
        Ok(m)
    }

    pub fn vector_body(&mut self, n: usize) -> Result<DVector<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(Error::Wire(format!("vector of {n} exceeds remaining {} bytes", self.remaining())));
        }
        let mut v = DVector::zeros(n);
        for x in v.iter_mut() {
            *x = self.f64()?;
        }
        Ok(v)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Wire(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
