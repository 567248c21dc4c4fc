use alloc::vec::Vec;
use core::mem::size_of;

/// A `rows x cols` array stored flat. Each row is padded by at least 128
/// bytes so rows owned by different threads never share a cache line, even
/// though the allocation itself is only aligned for `T`.
pub(crate) struct Table<T> {
    cells: Vec<T>,
    stride: usize,
    cols: usize,
}

impl<T> Table<T> {
    pub fn new(rows: usize, cols: usize, mut init: impl FnMut() -> T) -> Self {
        let sz = size_of::<T>().max(1);
        let per_line = (128 / sz).max(1);
        let stride = cols.div_ceil(per_line) * per_line + per_line;
        let mut cells = Vec::with_capacity(rows * stride);
        for _ in 0..rows * stride {
            cells.push(init());
        }
        Table { cells, stride, cols }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        debug_assert!(col < self.cols);
        &self.cells[row * self.stride + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.cells[row * self.stride..row * self.stride + self.cols]
    }

    #[cfg(test)]
    pub fn rows(&self) -> usize {
        self.cells.len() / self.stride.max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::sync::atomic::AtomicU64;

    #[test]
    fn rows_do_not_share_lines() {
        let t = Table::new(3, 5, || AtomicU64::new(0));
        assert_eq!(t.rows(), 3);
        let a = t.get(0, 4) as *const _ as usize;
        let b = t.get(1, 0) as *const _ as usize;
        assert!(b - a >= 128 + 8);
        assert_eq!(t.row(2).len(), 5);
    }
}
