/// Clamped relative-offset lookup table for a sequence of length `n`.
///
/// Entry `(i, j)` is `clamp(j − i, −k, k) + k`, a column index into any
/// `2k+1`-wide kernel or relative-embedding table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelativeOffsets {
    n: usize,
    k: usize,
    idx: Vec<usize>,
}

impl RelativeOffsets {
    pub fn new(n: usize, k: usize) -> Self {
        let mut idx = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let rel = (j as isize - i as isize).clamp(-(k as isize), k as isize);
                idx.push((rel + k as isize) as usize);
            }
        }
        Self { n, k, idx }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn half_width(&self) -> usize {
        self.k
    }

    /// Kernel width `2k + 1`.
    pub fn width(&self) -> usize {
        2 * self.k + 1
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.idx[i * self.n + j]
    }

    /// Flat row-major `n×n` table.
    pub fn as_slice(&self) -> &[usize] {
        &self.idx
    }

    /// Table for `clamp(i − j)`: every offset sign flipped.
    pub fn negated(&self) -> Self {
        let w = 2 * self.k;
        Self {
            n: self.n,
            k: self.k,
            idx: self.idx.iter().map(|&v| w - v).collect(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<usize>> {
        self.idx.chunks(self.n.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// `relative_offset_index(n, k)` as nested rows.
pub fn relative_offset_index(n: usize, k: usize) -> Vec<Vec<usize>> {
    RelativeOffsets::new(n, k).to_rows()
}
