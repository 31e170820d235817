//! Arithmetic over GF(2^8) and the dense linear algebra the codec needs.
//!
//! The field is fixed to GF(2^8) with reduction polynomial
//! x^8 + x^4 + x^3 + x + 1 (`0x11B`). Every peer has to agree on this constant,
//! so treat it as part of the wire protocol.
//!
//! Multiplication goes through log/antilog tables computed at compile time
//! with generator `0x03`. The slice kernels ([`mul_add_slice`],
//! [`scale_slice`]) expand a 256-entry product row per call and are the hot
//! path for recoding and decoding.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Sub};

use rand::Rng;
use thiserror::Error;

/// Reduction polynomial x^8 + x^4 + x^3 + x + 1.
pub const REDUCTION_POLY: u16 = 0x11B;

const GENERATOR: u8 = 0x03;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

// Carry-less multiply with reduction; only used to build the tables.
const fn slow_mul(mut a: u8, mut b: u8) -> u8 {
    let mut acc = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            acc ^= a;
        }
        let carry = a & 0x80;
        a <<= 1;
        if carry != 0 {
            a ^= (REDUCTION_POLY & 0xFF) as u8;
        }
        b >>= 1;
    }
    acc
}

const fn build_tables() -> ([u8; 256], [u8; 512]) {
    let mut log = [0u8; 256];
    let mut exp = [0u8; 512];
    let mut x = 1u8;
    let mut i = 0usize;
    while i < 255 {
        exp[i] = x;
        exp[i + 255] = x;
        log[x as usize] = i as u8;
        x = slow_mul(x, GENERATOR);
        i += 1;
    }
    // exp[510], exp[511] are never indexed: log values are < 255.
    (log, exp)
}

const TABLES: ([u8; 256], [u8; 512]) = build_tables();
static LOG: [u8; 256] = TABLES.0;
static EXP: [u8; 512] = TABLES.1;

/// One element of GF(2^8).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
#[repr(transparent)]
pub struct Gf256(pub u8);

impl Gf256 {
    pub const ZERO: Gf256 = Gf256(0);
    pub const ONE: Gf256 = Gf256(1);

    #[inline]
    pub const fn value(self) -> u8 {
        self.0
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Multiplicative inverse.
    pub fn inv(self) -> Result<Gf256, FieldError> {
        if self.0 == 0 {
            return Err(FieldError::ZeroInverse);
        }
        Ok(Gf256(EXP[255 - LOG[self.0 as usize] as usize]))
    }

    /// Uniform random element.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Gf256 {
        Gf256(rng.gen())
    }

    /// Uniform random nonzero element.
    pub fn random_nonzero<R: Rng + ?Sized>(rng: &mut R) -> Gf256 {
        Gf256(rng.gen_range(1..=255u8))
    }
}

impl fmt::Debug for Gf256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf256({:#04x})", self.0)
    }
}

impl From<u8> for Gf256 {
    fn from(v: u8) -> Self {
        Gf256(v)
    }
}

/// Field addition: XOR.
#[inline]
pub fn add(a: Gf256, b: Gf256) -> Gf256 {
    Gf256(a.0 ^ b.0)
}

/// Field multiplication under [`REDUCTION_POLY`].
#[inline]
pub fn mul(a: Gf256, b: Gf256) -> Gf256 {
    if a.0 == 0 || b.0 == 0 {
        return Gf256::ZERO;
    }
    Gf256(EXP[LOG[a.0 as usize] as usize + LOG[b.0 as usize] as usize])
}

/// Multiplicative inverse; fails on zero.
#[inline]
pub fn inv(a: Gf256) -> Result<Gf256, FieldError> {
    a.inv()
}

impl Add for Gf256 {
    type Output = Gf256;
    #[inline]
    fn add(self, rhs: Gf256) -> Gf256 {
        add(self, rhs)
    }
}

// addition in characteristic 2 is xor
#[allow(clippy::suspicious_op_assign_impl)]
impl AddAssign for Gf256 {
    #[inline]
    fn add_assign(&mut self, rhs: Gf256) {
        self.0 ^= rhs.0;
    }
}

impl Sub for Gf256 {
    type Output = Gf256;
    #[inline]
    fn sub(self, rhs: Gf256) -> Gf256 {
        add(self, rhs)
    }
}

impl Mul for Gf256 {
    type Output = Gf256;
    #[inline]
    fn mul(self, rhs: Gf256) -> Gf256 {
        mul(self, rhs)
    }
}

impl MulAssign for Gf256 {
    #[inline]
    fn mul_assign(&mut self, rhs: Gf256) {
        *self = mul(*self, rhs);
    }
}

impl Div for Gf256 {
    type Output = Gf256;
    /// Panics on division by zero, like integer division.
    fn div(self, rhs: Gf256) -> Gf256 {
        mul(self, rhs.inv().expect("division by zero in GF(2^8)"))
    }
}

/// `c * x` for every byte `x`.
pub fn mul_table(c: Gf256) -> [u8; 256] {
    product_row(c.0)
}

#[inline]
fn product_row(c: u8) -> [u8; 256] {
    let mut row = [0u8; 256];
    if c == 0 {
        return row;
    }
    let lc = LOG[c as usize] as usize;
    for (x, slot) in row.iter_mut().enumerate().skip(1) {
        *slot = EXP[lc + LOG[x] as usize];
    }
    row
}

/// `dst[i] += c * src[i]` for every byte position.
///
/// Panics if the slices differ in length.
pub fn mul_add_slice(dst: &mut [u8], src: &[u8], c: Gf256) {
    assert_eq!(dst.len(), src.len(), "mul_add_slice length mismatch");
    match c.0 {
        0 => {}
        1 => {
            for (d, s) in dst.iter_mut().zip(src) {
                *d ^= *s;
            }
        }
        _ => {
            #[cfg(target_arch = "x86_64")]
            if dst.len() >= 64 && is_x86_feature_detected!("avx2") {
                // SAFETY: avx2 support was just checked
                unsafe { simd::mul_slice::<true>(dst, src, c.0) };
                return;
            }
            let row = product_row(c.0);
            for (d, s) in dst.iter_mut().zip(src) {
                *d ^= row[*s as usize];
            }
        }
    }
}

/// `buf[i] = c * buf[i]` for every byte position.
pub fn scale_slice(buf: &mut [u8], c: Gf256) {
    match c.0 {
        0 => buf.fill(0),
        1 => {}
        _ => {
            #[cfg(target_arch = "x86_64")]
            if buf.len() >= 64 && is_x86_feature_detected!("avx2") {
                let src = buf.to_vec();
                // SAFETY: avx2 support was just checked
                unsafe { simd::mul_slice::<false>(buf, &src, c.0) };
                return;
            }
            let row = product_row(c.0);
            for b in buf.iter_mut() {
                *b = row[*b as usize];
            }
        }
    }
}

/// Split-nibble products: `c*x = lo[x & 15] ^ hi[x >> 4]`, 32 bytes per
/// shuffle pair.
#[cfg(target_arch = "x86_64")]
mod simd {
    use std::arch::x86_64::*;

    use super::product_row;

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn mul_slice<const ADD: bool>(dst: &mut [u8], src: &[u8], c: u8) {
        let row = product_row(c);
        let mut lo = [0u8; 16];
        let mut hi = [0u8; 16];
        for i in 0..16 {
            lo[i] = row[i];
            hi[i] = row[i << 4];
        }
        let lo = _mm256_broadcastsi128_si256(_mm_loadu_si128(lo.as_ptr().cast()));
        let hi = _mm256_broadcastsi128_si256(_mm_loadu_si128(hi.as_ptr().cast()));
        let mask = _mm256_set1_epi8(0x0f);
        let n = dst.len() / 32 * 32;
        for i in (0..n).step_by(32) {
            let x = _mm256_loadu_si256(src.as_ptr().add(i).cast());
            let l = _mm256_shuffle_epi8(lo, _mm256_and_si256(x, mask));
            let h = _mm256_shuffle_epi8(hi, _mm256_and_si256(_mm256_srli_epi64(x, 4), mask));
            let mut p = _mm256_xor_si256(l, h);
            let d = dst.as_mut_ptr().add(i).cast::<__m256i>();
            if ADD {
                p = _mm256_xor_si256(p, _mm256_loadu_si256(d));
            }
            _mm256_storeu_si256(d, p);
        }
        for i in n..dst.len() {
            let p = row[src[i] as usize];
            dst[i] = if ADD { dst[i] ^ p } else { p };
        }
    }
}

/// Dense row-major matrix over GF(2^8).
#[derive(Clone, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    entries: Vec<u8>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:02x?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<u8>) -> Result<Matrix, FieldError> {
        if entries.len() != rows * cols {
            return Err(FieldError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(Matrix {
            rows,
            cols,
            entries,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            entries: vec![0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1;
        }
        m
    }

    /// Matrix with independent uniform entries.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
        let mut entries = vec![0u8; rows * cols];
        rng.fill(entries.as_mut_slice());
        Matrix {
            rows,
            cols,
            entries,
        }
    }

    /// Builds a matrix by stacking equal-length rows.
    pub fn from_rows<I, R>(rows: I) -> Result<Matrix, FieldError>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[u8]>,
    {
        let mut entries = Vec::new();
        let mut count = 0;
        let mut cols = None;
        for row in rows {
            let row = row.as_ref();
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(FieldError::DimensionMismatch(format!(
                        "row {count} has {} columns, expected {c}",
                        row.len()
                    )))
                }
                _ => {}
            }
            entries.extend_from_slice(row);
            count += 1;
        }
        Ok(Matrix {
            rows: count,
            cols: cols.unwrap_or(0),
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    pub fn get(&self, r: usize, c: usize) -> Gf256 {
        Gf256(self.entries[r * self.cols + c])
    }

    pub fn set(&mut self, r: usize, c: usize, v: Gf256) {
        self.entries[r * self.cols + c] = v.0;
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u8] {
        &mut self.entries[r * self.cols..(r + 1) * self.cols]
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let (head, tail) = self.entries.split_at_mut(hi * self.cols);
        head[lo * self.cols..(lo + 1) * self.cols].swap_with_slice(&mut tail[..self.cols]);
    }

    pub fn scale_row(&mut self, r: usize, c: Gf256) {
        scale_slice(self.row_mut(r), c);
    }

    /// `row[dst] += c * row[src]`.
    pub fn add_scaled_row(&mut self, dst: usize, src: usize, c: Gf256) {
        assert_ne!(dst, src);
        let cols = self.cols;
        let (d, s) = if dst < src {
            let (head, tail) = self.entries.split_at_mut(src * cols);
            (&mut head[dst * cols..(dst + 1) * cols], &tail[..cols])
        } else {
            let (head, tail) = self.entries.split_at_mut(dst * cols);
            (&mut tail[..cols], &head[src * cols..(src + 1) * cols])
        };
        mul_add_slice(d, s, c);
    }

    pub fn mul(&self, rhs: &Matrix) -> Result<Matrix, FieldError> {
        if self.cols != rhs.rows {
            return Err(FieldError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if !a.is_zero() {
                    mul_add_slice(out.row_mut(r), rhs.row(k), a);
                }
            }
        }
        Ok(out)
    }

    /// Reduces in place to reduced row echelon form and returns the pivot
    /// columns. Pivot choice is the first nonzero entry at or below the
    /// current row, so the result depends only on row order.
    pub fn reduce(&mut self) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..self.cols {
            if row == self.rows {
                break;
            }
            let Some(p) = (row..self.rows).find(|&r| !self.get(r, col).is_zero()) else {
                continue;
            };
            self.swap_rows(row, p);
            let lead = self.get(row, col);
            self.scale_row(row, lead.inv().expect("pivot is nonzero"));
            for r in 0..self.rows {
                if r != row {
                    let f = self.get(r, col);
                    if !f.is_zero() {
                        self.add_scaled_row(r, row, f);
                    }
                }
            }
            pivots.push(col);
            row += 1;
        }
        pivots
    }

    /// Row rank.
    pub fn rank(&self) -> usize {
        self.clone().reduce().len()
    }

    /// Inverse of a square matrix.
    pub fn inverse(&self) -> Result<Matrix, FieldError> {
        solve(self, &Matrix::identity(self.rows))
    }
}

/// Row rank of `m`.
pub fn rank(m: &Matrix) -> usize {
    m.rank()
}

/// Solves `a * x = rhs` for square `a`.
///
/// Gauss-Jordan elimination on the augmented system; row operations are
/// applied to `rhs` rows with the slice kernels, so wide right-hand sides
/// (payload bytes) are handled efficiently.
pub fn solve(a: &Matrix, rhs: &Matrix) -> Result<Matrix, FieldError> {
    let k = a.rows;
    if a.cols != k {
        return Err(FieldError::DimensionMismatch(format!(
            "coefficient matrix is {}x{}, expected square",
            a.rows, a.cols
        )));
    }
    if rhs.rows != k {
        return Err(FieldError::DimensionMismatch(format!(
            "right-hand side has {} rows, expected {k}",
            rhs.rows
        )));
    }
    let mut a = a.clone();
    let mut x = rhs.clone();
    for col in 0..k {
        let p = (col..k)
            .find(|&r| !a.get(r, col).is_zero())
            .ok_or(FieldError::SingularMatrix)?;
        a.swap_rows(col, p);
        x.swap_rows(col, p);
        let lead_inv = a.get(col, col).inv()?;
        a.scale_row(col, lead_inv);
        x.scale_row(col, lead_inv);
        for r in 0..k {
            if r == col {
                continue;
            }
            let f = a.get(r, col);
            if !f.is_zero() {
                a.add_scaled_row(r, col, f);
                x.add_scaled_row(r, col, f);
            }
        }
    }
    Ok(x)
}
