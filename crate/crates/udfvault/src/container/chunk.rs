//! Chunk tiling arithmetic.
//!
//! A chunked dataset is cut into row-major tiles of the declared chunk
//! shape. Tiles at the trailing edge are partial: they cover only the
//! elements that exist, so the union of tiles is exactly the dataset and no
//! element belongs to two tiles. Chunks are numbered row-major over the
//! tile grid, and that numbering is the order of the chunk index.

/// Tiling of a dataset shape by a chunk shape. All dimension counts match.
pub struct ChunkGrid {
    shape: Vec<u64>,
    chunk: Vec<u64>,
    /// Tiles per dimension.
    grid: Vec<u64>,
    /// Element strides of the dataset, innermost dimension last.
    strides: Vec<u64>,
}

impl ChunkGrid {
    pub fn new(shape: &[u64], chunk: &[u64]) -> ChunkGrid {
        debug_assert_eq!(shape.len(), chunk.len());
        let grid: Vec<u64> = shape
            .iter()
            .zip(chunk)
            .map(|(&s, &c)| s.div_ceil(c))
            .collect();
        let mut strides = vec![1u64; shape.len()];
        for d in (0..shape.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * shape[d + 1];
        }
        ChunkGrid {
            shape: shape.to_vec(),
            chunk: chunk.to_vec(),
            grid,
            strides,
        }
    }

    /// Covers a contiguous layout: one tile spanning the whole shape.
    pub fn single(shape: &[u64]) -> ChunkGrid {
        ChunkGrid::new(shape, shape)
    }

    pub fn chunk_count(&self) -> u64 {
        self.grid.iter().product()
    }

    /// Base coordinate and extent of tile `idx` in the tile-grid row-major
    /// order.
    fn tile(&self, idx: u64) -> (Vec<u64>, Vec<u64>) {
        let ndims = self.shape.len();
        let mut rem = idx;
        let mut coord = vec![0u64; ndims];
        for d in (0..ndims).rev() {
            coord[d] = rem % self.grid[d];
            rem /= self.grid[d];
        }
        let mut base = vec![0u64; ndims];
        let mut extent = vec![0u64; ndims];
        for d in 0..ndims {
            base[d] = coord[d] * self.chunk[d];
            extent[d] = self.chunk[d].min(self.shape[d] - base[d]);
        }
        (base, extent)
    }

    /// Elements inside tile `idx`.
    pub fn tile_elements(&self, idx: u64) -> u64 {
        self.tile(idx).1.iter().product()
    }

    /// Walks tile `idx` as maximal element runs contiguous in both the
    /// dataset and the tile. `f(global_start, local_start, len)` receives
    /// element indices: `global_start` into the dataset's flat row-major
    /// order, `local_start` into the tile's own row-major order.
    pub fn for_each_run(&self, idx: u64, mut f: impl FnMut(usize, usize, usize)) {
        let (base, extent) = self.tile(idx);
        let ndims = self.shape.len();
        let run = extent[ndims - 1];
        let rows: u64 = extent[..ndims - 1].iter().product();
        let mut row_coord = vec![0u64; ndims - 1];
        let mut local = 0usize;
        for _ in 0..rows {
            let mut global = base[ndims - 1];
            for d in 0..ndims - 1 {
                global += (base[d] + row_coord[d]) * self.strides[d];
            }
            f(global as usize, local, run as usize);
            local += run as usize;
            for d in (0..ndims - 1).rev() {
                row_coord[d] += 1;
                if row_coord[d] < extent[d] {
                    break;
                }
                row_coord[d] = 0;
            }
        }
    }

    /// Copies tile `idx` out of the dataset's element buffer.
    pub fn gather(&self, idx: u64, data: &[u8], elem_size: usize) -> Vec<u8> {
        let mut out = vec![0u8; self.tile_elements(idx) as usize * elem_size];
        self.for_each_run(idx, |global, local, len| {
            out[local * elem_size..(local + len) * elem_size]
                .copy_from_slice(&data[global * elem_size..(global + len) * elem_size]);
        });
        out
    }

    /// Copies a decoded tile back into the dataset's element buffer.
    pub fn scatter(&self, idx: u64, tile: &[u8], elem_size: usize, out: &mut [u8]) {
        self.for_each_run(idx, |global, local, len| {
            out[global * elem_size..(global + len) * elem_size]
                .copy_from_slice(&tile[local * elem_size..(local + len) * elem_size]);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_four_chunks_tile_a_four_square() {
        let grid = ChunkGrid::new(&[4, 4], &[2, 4]);
        assert_eq!(grid.chunk_count(), 2);
        assert_eq!(grid.tile_elements(0), 8);
        assert_eq!(grid.tile_elements(1), 8);
    }

    #[test]
    fn edge_tiles_are_partial() {
        let grid = ChunkGrid::new(&[5, 3], &[2, 2]);
        assert_eq!(grid.chunk_count(), 6);
        let total: u64 = (0..6).map(|i| grid.tile_elements(i)).sum();
        assert_eq!(total, 15);
        assert_eq!(grid.tile_elements(5), 1);
    }

    #[test]
    fn gather_scatter_round_trip_covers_every_element_once() {
        let shape = [5u64, 7, 3];
        let chunk = [2u64, 3, 2];
        let elems: usize = shape.iter().product::<u64>() as usize;
        let data: Vec<u8> = (0..elems as u32 * 2).map(|i| (i % 251) as u8).collect();

        let grid = ChunkGrid::new(&shape, &chunk);
        let mut seen = vec![0u32; elems];
        let mut back = vec![0u8; data.len()];
        for idx in 0..grid.chunk_count() {
            grid.for_each_run(idx, |global, _, len| {
                for e in global..global + len {
                    seen[e] += 1;
                }
            });
            let tile = grid.gather(idx, &data, 2);
            assert_eq!(tile.len(), grid.tile_elements(idx) as usize * 2);
            grid.scatter(idx, &tile, 2, &mut back);
        }
        assert!(seen.iter().all(|&c| c == 1), "tiling must be exact");
        assert_eq!(back, data);
    }

    #[test]
    fn one_dimensional_tiles() {
        let grid = ChunkGrid::new(&[10], &[4]);
        assert_eq!(grid.chunk_count(), 3);
        let data: Vec<u8> = (0..10).collect();
        assert_eq!(grid.gather(2, &data, 1), vec![8, 9]);
    }
}
