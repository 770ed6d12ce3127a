//! Time-major packing of variable-length sequences.
//!
//! Sequences are sorted by decreasing length, so the sequences still active
//! at step t are a prefix `0..batch_sizes[t]` and step t occupies the
//! contiguous rows `offsets[t]..offsets[t] + batch_sizes[t]`.

#[derive(Debug, Clone)]
pub struct PackedLayout {
    /// Lengths in packed (descending) order.
    pub lengths: Vec<usize>,
    /// `order[slot]` is the caller's index of the sequence in packed slot `slot`.
    pub order: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub offsets: Vec<usize>,
    /// Row of (t, b) ↦ row of (len_b − 1 − t, b). An involution.
    pub reverse: Vec<usize>,
}

impl PackedLayout {
    /// Layout for sequences of the given lengths (all ≥ 1). Ties keep the
    /// caller's order.
    pub fn new(lengths: &[usize]) -> Self {
        assert!(lengths.iter().all(|&l| l > 0), "empty sequence in batch");
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));
        let sorted: Vec<usize> = order.iter().map(|&i| lengths[i]).collect();
        let steps = sorted.first().copied().unwrap_or(0);
        let batch_sizes: Vec<usize> = (0..steps)
            .map(|t| sorted.iter().take_while(|&&l| l > t).count())
            .collect();
        let mut offsets = Vec::with_capacity(steps + 1);
        let mut acc = 0;
        offsets.push(0);
        for &bs in &batch_sizes {
            acc += bs;
            offsets.push(acc);
        }
        let mut reverse = vec![0; acc];
        for (b, &len) in sorted.iter().enumerate() {
            for t in 0..len {
                reverse[offsets[t] + b] = offsets[len - 1 - t] + b;
            }
        }
        Self {
            lengths: sorted,
            order,
            batch_sizes,
            offsets,
            reverse,
        }
    }

    pub fn steps(&self) -> usize {
        self.batch_sizes.len()
    }

    pub fn rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn row(&self, t: usize, b: usize) -> usize {
        debug_assert!(b < self.batch_sizes[t]);
        self.offsets[t] + b
    }

    /// Row of the final step of packed slot `b`.
    pub fn last_row(&self, b: usize) -> usize {
        self.row(self.lengths[b] - 1, b)
    }

    /// Pack per-sequence rows of width `dim` (caller order) into time-major layout.
    pub fn pack<const D: usize>(&self, seqs: &[&[[f64; D]]]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows() * D];
        for (b, &src) in self.order.iter().enumerate() {
            for (t, x) in seqs[src].iter().enumerate() {
                let r = self.row(t, b);
                out[r * D..(r + 1) * D].copy_from_slice(x);
            }
        }
        out
    }

    /// Permute rows of a packed `rows × dim` buffer into reversed time order.
    pub fn reversed(&self, data: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; data.len()];
        for (r, &q) in self.reverse.iter().enumerate() {
            out[q * dim..(q + 1) * dim].copy_from_slice(&data[r * dim..(r + 1) * dim]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_for_mixed_lengths() {
        let l = PackedLayout::new(&[2, 4, 1, 4]);
        assert_eq!(l.lengths, vec![4, 4, 2, 1]);
        assert_eq!(l.order, vec![1, 3, 0, 2]);
        assert_eq!(l.batch_sizes, vec![4, 3, 2, 2]);
        assert_eq!(l.offsets, vec![0, 4, 7, 9, 11]);
        assert_eq!(l.rows(), 11);
        assert_eq!(l.last_row(2), l.row(1, 2));
        for r in 0..l.rows() {
            assert_eq!(l.reverse[l.reverse[r]], r);
        }
    }

    #[test]
    fn pack_places_steps() {
        let a = [[1.0], [2.0]];
        let b = [[3.0], [4.0], [5.0]];
        let l = PackedLayout::new(&[2, 3]);
        let p = l.pack::<1>(&[&a, &b]);
        assert_eq!(p, vec![3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(l.reversed(&p, 1), vec![5.0, 2.0, 4.0, 1.0, 3.0]);
    }
}
