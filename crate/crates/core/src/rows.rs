//! Row gathers for the small fixed widths the filter kernels use.

/// Fills consecutive `width`-long rows of `dst` with `src[s..s + width]` for
/// each start `s`. Common widths are monomorphised so a row copy becomes a
/// few register moves rather than a `memcpy` call.
pub(crate) fn gather_rows(
    src: &[f64],
    width: usize,
    starts: impl Iterator<Item = usize>,
    dst: &mut [f64],
) {
    match width {
        1 => gather::<1>(src, starts, dst),
        2 => gather::<2>(src, starts, dst),
        3 => gather::<3>(src, starts, dst),
        4 => gather::<4>(src, starts, dst),
        5 => gather::<5>(src, starts, dst),
        6 => gather::<6>(src, starts, dst),
        8 => gather::<8>(src, starts, dst),
        10 => gather::<10>(src, starts, dst),
        _ => {
            for (row, s) in dst.chunks_exact_mut(width).zip(starts) {
                row.copy_from_slice(&src[s..s + width]);
            }
        }
    }
}

#[inline(always)]
fn gather<const W: usize>(src: &[f64], starts: impl Iterator<Item = usize>, dst: &mut [f64]) {
    let (rows, _) = dst.as_chunks_mut::<W>();
    for (row, s) in rows.iter_mut().zip(starts) {
        *row = src[s..s + W].try_into().expect("row width");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_width_matches_a_plain_copy() {
        let src: Vec<f64> = (0..200).map(f64::from).collect();
        for width in 1..=12 {
            let starts = [7, 0, 31, 7, 100];
            let mut dst = vec![0.0; starts.len() * width];
            gather_rows(&src, width, starts.iter().copied(), &mut dst);
            let expected: Vec<f64> = starts
                .iter()
                .flat_map(|&s| src[s..s + width].to_vec())
                .collect();
            assert_eq!(dst, expected, "width {width}");
        }
    }
}
