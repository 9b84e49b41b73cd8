//! Dense row-major raster grids.

use std::fmt;

/// Element types a [`Grid`] can hold. Equality is bitwise so that NaN
/// missing markers compare equal to themselves after a round-trip.
pub trait Cell: Copy + fmt::Debug + Send + Sync + 'static {
    const BYTES: usize;
    fn to_le(self) -> [u8; 4];
    fn from_le(bytes: [u8; 4]) -> Self;
    fn bits(self) -> u32;
}

impl Cell for f32 {
    const BYTES: usize = 4;
    fn to_le(self) -> [u8; 4] {
        self.to_le_bytes()
    }
    fn from_le(bytes: [u8; 4]) -> Self {
        f32::from_le_bytes(bytes)
    }
    fn bits(self) -> u32 {
        self.to_bits()
    }
}

impl Cell for i32 {
    const BYTES: usize = 4;
    fn to_le(self) -> [u8; 4] {
        self.to_le_bytes()
    }
    fn from_le(bytes: [u8; 4]) -> Self {
        i32::from_le_bytes(bytes)
    }
    fn bits(self) -> u32 {
        self as u32
    }
}

#[derive(Clone, Debug)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Cell> Grid<T> {
    /// Returns `None` when `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (width.checked_mul(height)? == data.len()).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * T::BYTES);
        for v in &self.data {
            out.extend_from_slice(&v.to_le());
        }
        out
    }

    /// Decodes a little-endian payload. Returns `None` on a length mismatch.
    pub fn from_le_bytes(width: usize, height: usize, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != width.checked_mul(height)?.checked_mul(T::BYTES)? {
            return None;
        }
        let data = bytes
            .chunks_exact(T::BYTES)
            .map(|c| T::from_le([c[0], c[1], c[2], c[3]]))
            .collect();
        Some(Self {
            width,
            height,
            data,
        })
    }
}

impl<T: Cell> PartialEq for Grid<T> {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.bits() == b.bits())
    }
}
