use super::Scalar;

/// A strided read-only matrix view into a flat buffer.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Dense row-major view starting at `offset` with `cols` columns.
    pub fn row_major(data: &'a [T], offset: usize, cols: usize) -> Self {
        MatRef {
            data,
            offset,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a dense row-major `rows x cols` block.
    pub fn transposed(data: &'a [T], offset: usize, cols: usize) -> Self {
        MatRef {
            data,
            offset,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
        assert!(
            last < self.data.len(),
            "matrix view out of bounds: index {last} >= {}",
            self.data.len()
        );
    }
}

/// `c = alpha * a * b + beta * c` where `a` is `m x k`, `b` is `k x n` and `c` is a dense
/// row-major `m x n` block starting at `c_offset` with row stride `c_row_stride`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
    c_offset: usize,
    c_row_stride: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    let last = c_offset + (m - 1) * c_row_stride + (n - 1);
    assert!(last < c.len(), "output view out of bounds");
    // SAFETY: every strided access was bounds-checked above and the views are disjoint
    // because `c` is borrowed mutably.
    unsafe {
        T::raw_gemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr().add(c_offset),
            c_row_stride as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(
            2,
            3,
            4,
            1.0,
            MatRef::row_major(&a, 0, 3),
            MatRef::row_major(&b, 0, 4),
            1.0,
            &mut c,
            0,
            4,
        );
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum::<f64>();
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn transposed_view() {
        let a = vec![1.0f32, 2.0, 3.0, 4.0]; // [[1,2],[3,4]]
        let id = vec![1.0f32, 0.0, 0.0, 1.0];
        let mut c = vec![0.0f32; 4];
        gemm(
            2,
            2,
            2,
            1.0,
            MatRef::transposed(&a, 0, 2),
            MatRef::row_major(&id, 0, 2),
            0.0,
            &mut c,
            0,
            2,
        );
        assert_eq!(c, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn rejects_out_of_bounds_view() {
        let a = vec![0.0f32; 3];
        let mut c = vec![0.0f32; 4];
        gemm(2, 2, 2, 1.0, MatRef::row_major(&a, 0, 2), MatRef::row_major(&a, 0, 2), 0.0, &mut c, 0, 2);
    }
}
