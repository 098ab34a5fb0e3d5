//! Unscrambled Sobol sequence with Joe–Kuo direction numbers.

use crate::error::{Error, Result};

const BITS: usize = 32;

// (degree s, interior coefficient bits a, initial direction numbers m_1..m_s)
// for dimensions 2..=64, taken from the new-joe-kuo-6.21201 table.
// Dimension 1 is the van der Corput sequence and is handled separately.
const DIRECTIONS: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
    (7, 7, &[1, 1, 3, 13, 7, 35, 63]),
    (7, 8, &[1, 3, 5, 9, 1, 25, 53]),
    (7, 14, &[1, 3, 1, 13, 9, 35, 107]),
    (7, 19, &[1, 3, 1, 5, 27, 61, 31]),
    (7, 21, &[1, 1, 5, 11, 19, 41, 61]),
    (7, 28, &[1, 3, 5, 3, 3, 13, 69]),
    (7, 31, &[1, 1, 7, 13, 1, 19, 1]),
    (7, 32, &[1, 3, 7, 5, 13, 19, 59]),
    (7, 37, &[1, 1, 3, 9, 25, 29, 41]),
    (7, 41, &[1, 3, 5, 13, 23, 1, 55]),
    (7, 42, &[1, 3, 7, 3, 13, 59, 17]),
    (7, 50, &[1, 3, 1, 3, 5, 53, 69]),
    (7, 55, &[1, 1, 5, 5, 23, 33, 13]),
    (7, 56, &[1, 1, 7, 7, 1, 61, 123]),
    (7, 59, &[1, 1, 7, 9, 13, 61, 49]),
    (7, 62, &[1, 3, 3, 5, 3, 55, 33]),
    (8, 14, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (8, 21, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (8, 22, &[1, 3, 1, 11, 11, 11, 77, 249]),
    (8, 38, &[1, 3, 1, 11, 27, 43, 71, 9]),
    (8, 47, &[1, 1, 7, 15, 21, 11, 81, 45]),
    (8, 49, &[1, 3, 7, 3, 25, 31, 65, 79]),
    (8, 50, &[1, 3, 1, 1, 19, 11, 3, 205]),
    (8, 52, &[1, 1, 5, 9, 19, 21, 29, 157]),
    (8, 56, &[1, 3, 7, 11, 1, 33, 89, 185]),
    (8, 67, &[1, 3, 3, 3, 15, 9, 79, 71]),
    (8, 70, &[1, 3, 7, 11, 15, 39, 119, 27]),
    (8, 84, &[1, 1, 3, 1, 11, 31, 97, 225]),
    (8, 97, &[1, 1, 1, 3, 23, 43, 57, 177]),
    (8, 103, &[1, 3, 7, 7, 17, 17, 37, 71]),
    (8, 115, &[1, 3, 1, 5, 27, 63, 123, 213]),
    (8, 122, &[1, 1, 3, 5, 11, 43, 53, 133]),
    (9, 8, &[1, 3, 5, 5, 29, 17, 47, 173, 479]),
    (9, 13, &[1, 3, 3, 11, 3, 1, 109, 9, 69]),
    (9, 16, &[1, 1, 1, 5, 17, 39, 23, 5, 343]),
    (9, 22, &[1, 3, 1, 5, 25, 15, 31, 103, 499]),
    (9, 25, &[1, 1, 1, 11, 11, 17, 63, 105, 183]),
    (9, 44, &[1, 1, 5, 11, 9, 29, 97, 231, 363]),
    (9, 47, &[1, 1, 5, 15, 19, 45, 41, 7, 383]),
    (9, 52, &[1, 3, 7, 7, 31, 19, 83, 137, 221]),
    (9, 55, &[1, 1, 1, 3, 23, 15, 111, 223, 83]),
    (9, 59, &[1, 1, 5, 13, 31, 15, 55, 25, 161]),
    (9, 62, &[1, 1, 3, 13, 25, 47, 39, 87, 257]),
];

/// Largest supported dimension.
pub const MAX_DIMENSION: usize = DIRECTIONS.len() + 1;

/// Deterministic Sobol point generator.
///
/// Points are addressed by their index in the base sequence; index 0 is the
/// all-zeros point, which callers skip.
#[derive(Debug, Clone)]
pub struct Sobol {
    dim: usize,
    // v[j][k] = direction number k of dimension j, left-aligned in 32 bits
    v: Vec<[u32; BITS]>,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(crate::error::invalid("sobol dimension must be positive"));
        }
        if dim > MAX_DIMENSION {
            return Err(Error::UnsupportedDimension { requested: dim, max: MAX_DIMENSION });
        }
        let mut v = Vec::with_capacity(dim);
        let mut first = [0u32; BITS];
        for (k, slot) in first.iter_mut().enumerate() {
            *slot = 1u32 << (BITS - 1 - k);
        }
        v.push(first);
        for &(s, a, m) in DIRECTIONS.iter().take(dim - 1) {
            let s = s as usize;
            let mut dir = [0u32; BITS];
            for k in 0..s.min(BITS) {
                dir[k] = m[k] << (BITS - 1 - k);
            }
            for k in s..BITS {
                let mut value = dir[k - s] ^ (dir[k - s] >> s);
                for q in 1..s {
                    if (a >> (s - 1 - q)) & 1 == 1 {
                        value ^= dir[k - q];
                    }
                }
                dir[k] = value;
            }
            v.push(dir);
        }
        Ok(Self { dim, v })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw integer coordinates of point `index` (Gray-code ordering).
    fn raw_point(&self, index: u64, out: &mut [u32]) {
        let gray = index ^ (index >> 1);
        for (j, slot) in out.iter_mut().enumerate() {
            let mut x = 0u32;
            let mut g = gray;
            let mut k = 0;
            while g != 0 {
                if g & 1 == 1 {
                    x ^= self.v[j][k];
                }
                g >>= 1;
                k += 1;
            }
            *slot = x;
        }
    }

    /// Fills `out` (row-major, `count × dim`) with points `start..start+count`
    /// mapped to (0, 1). `start` must be at least 1.
    pub fn fill(&self, start: u64, count: usize, out: &mut [f64]) -> Result<()> {
        debug_assert!(start >= 1);
        let end = start
            .checked_add(count as u64)
            .filter(|&e| e <= 1u64 << BITS)
            .ok_or_else(|| crate::error::invalid("sobol index range exceeds 2^32 points"))?;
        if count == 0 {
            return Ok(());
        }
        let scale = 1.0 / (1u64 << BITS) as f64;
        let mut state = vec![0u32; self.dim];
        self.raw_point(start, &mut state);
        for (offset, row) in out.chunks_exact_mut(self.dim).take(count).enumerate() {
            if offset > 0 {
                // point n follows n-1 by flipping the direction number at the
                // lowest zero bit of n-1
                let prev = start + offset as u64 - 1;
                let c = prev.trailing_ones() as usize;
                for (j, s) in state.iter_mut().enumerate() {
                    *s ^= self.v[j][c];
                }
            }
            for (slot, &s) in row.iter_mut().zip(&state) {
                *slot = s as f64 * scale;
            }
        }
        debug_assert!(end > start);
        Ok(())
    }
}
