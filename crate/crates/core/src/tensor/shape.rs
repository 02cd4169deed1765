//! Numpy-style broadcasting over row-major shapes.

/// Broadcast shape of two operands, or `None` if incompatible. Shapes are
/// right-aligned; missing leading axes count as extent 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        let ea = if d < rank - a.len() { 1 } else { a[d - (rank - a.len())] };
        let eb = if d < rank - b.len() { 1 } else { b[d - (rank - b.len())] };
        out[d] = if ea == eb || eb == 1 {
            ea
        } else if ea == 1 {
            eb
        } else {
            return None;
        };
    }
    Some(out)
}

fn padded_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut strides = vec![0usize; rank];
    let offset = rank - shape.len();
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        strides[offset + d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Visit flat source indices `(ia, ib)` for every element of the broadcast
/// output, in row-major output order.
pub fn for_each_broadcast_pair(
    a_shape: &[usize],
    b_shape: &[usize],
    out_shape: &[usize],
    mut f: impl FnMut(usize, usize),
) {
    let rank = out_shape.len();
    let numel: usize = out_shape.iter().product();
    if numel == 0 {
        return;
    }
    let sa = padded_strides(a_shape, rank);
    let sb = padded_strides(b_shape, rank);
    let mut coords = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for _ in 0..numel {
        f(ia, ib);
        for d in (0..rank).rev() {
            coords[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if coords[d] < out_shape[d] {
                break;
            }
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            coords[d] = 0;
        }
    }
}
