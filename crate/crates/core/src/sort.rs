//! Particle ordering and correlated multinomial resampling.
//!
//! Resampling a sorted particle set with common uniforms keeps the selected
//! ancestors stable under small perturbations of the weights, which is what
//! makes successive likelihood estimates correlated. All indices here are
//! 0-based.

use crate::error::{Error, Result};

/// Output of a particle sort.
#[derive(Debug, Clone, PartialEq)]
pub struct SortResult {
    /// `indices[k]` is the original index of the particle at sorted position `k`.
    pub indices: Vec<usize>,
    /// Sorted particles, row-major `N x dim`.
    pub particles: Vec<f64>,
    pub weights: Vec<f64>,
    pub dim: usize,
}

fn validate(particles: &[f64], dim: usize, weights: &[f64]) -> Result<usize> {
    if dim == 0 || particles.is_empty() {
        return Err(Error::invalid("cannot sort an empty particle set"));
    }
    if !particles.len().is_multiple_of(dim) || particles.len() / dim != weights.len() {
        return Err(Error::invalid(format!(
            "{} particle values, dimension {dim} and {} weights are inconsistent",
            particles.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
    }
    Ok(weights.len())
}

fn gather(particles: &[f64], dim: usize, weights: &[f64], indices: Vec<usize>) -> SortResult {
    let mut sorted = Vec::with_capacity(particles.len());
    for &i in &indices {
        sorted.extend_from_slice(&particles[i * dim..(i + 1) * dim]);
    }
    SortResult {
        particles: sorted,
        weights: indices.iter().map(|&i| weights[i]).collect(),
        indices,
        dim,
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Non-negative floats order like their bit patterns, so the sort can
/// compare integers. NaN distances sort last.
#[inline]
fn distance_key(d2: f64) -> u64 {
    if d2.is_nan() {
        u64::MAX
    } else {
        (d2 + 0.0).to_bits()
    }
}

/// Reusable buffer for [`euclidean_order_into`].
#[derive(Debug, Default, Clone)]
pub struct SortScratch {
    keyed: Vec<u128>,
}

/// Writes the Euclidean sort order of `n` particles into `order`.
///
/// The first position holds the particle with the smallest coordinate mean;
/// the rest follow by increasing squared distance to it. Ties go to the
/// lower original index.
pub fn euclidean_order_into(
    particles: &[f64],
    dim: usize,
    scratch: &mut SortScratch,
    order: &mut Vec<usize>,
) {
    match dim {
        1 => order_fixed::<1>(particles, scratch, order),
        2 => order_fixed::<2>(particles, scratch, order),
        3 => order_fixed::<3>(particles, scratch, order),
        4 => order_fixed::<4>(particles, scratch, order),
        5 => order_fixed::<5>(particles, scratch, order),
        6 => order_fixed::<6>(particles, scratch, order),
        8 => order_fixed::<8>(particles, scratch, order),
        10 => order_fixed::<10>(particles, scratch, order),
        _ => order_rows(particles.chunks_exact(dim), scratch, order),
    }
}

/// Compile-time row width, so the per-row sums and distances unroll.
fn order_fixed<const W: usize>(
    particles: &[f64],
    scratch: &mut SortScratch,
    order: &mut Vec<usize>,
) {
    order_rows(
        particles.as_chunks::<W>().0.iter().map(|r| &r[..]),
        scratch,
        order,
    );
}

#[inline(always)]
fn order_rows<'a>(
    rows: impl Iterator<Item = &'a [f64]> + Clone,
    scratch: &mut SortScratch,
    order: &mut Vec<usize>,
) {
    order.clear();
    // Comparing coordinate sums is equivalent to comparing means.
    let mut first = 0usize;
    let mut best = f64::INFINITY;
    for (i, row) in rows.clone().enumerate() {
        let s: f64 = row.iter().sum();
        if s < best {
            best = s;
            first = i;
        }
    }
    let Some(anchor) = rows.clone().nth(first) else {
        return;
    };
    // Key in the high half, index in the low half: integer order is the
    // distance order with ties broken by index.
    let keyed = &mut scratch.keyed;
    keyed.clear();
    for (i, row) in rows.enumerate() {
        if i != first {
            keyed.push((distance_key(sq_dist(anchor, row)) as u128) << 64 | i as u128);
        }
    }
    keyed.sort_unstable();
    order.push(first);
    order.extend(keyed.iter().map(|&k| k as u64 as usize));
}

/// Fast multidimensional Euclidean sort: one distance pass plus one comparison sort.
pub fn euclidean_sort(particles: &[f64], dim: usize, weights: &[f64]) -> Result<SortResult> {
    validate(particles, dim, weights)?;
    let mut order = Vec::new();
    euclidean_order_into(particles, dim, &mut SortScratch::default(), &mut order);
    Ok(gather(particles, dim, weights, order))
}

/// Greedy nearest-neighbour chain: start at the smallest first coordinate and
/// repeatedly append the unselected particle closest to the last one chosen.
/// Quadratic in `N`; kept as a reference ordering and timing baseline.
pub fn greedy_sort(particles: &[f64], dim: usize, weights: &[f64]) -> Result<SortResult> {
    let n = validate(particles, dim, weights)?;
    let row = |i: usize| &particles[i * dim..(i + 1) * dim];
    let mut remaining: Vec<usize> = (0..n).collect();
    let start = (0..n)
        .min_by(|&a, &b| row(a)[0].total_cmp(&row(b)[0]).then(a.cmp(&b)))
        .expect("non-empty");
    let mut order = Vec::with_capacity(n);
    order.push(start);
    remaining.retain(|&i| i != start);
    let mut last = start;
    while !remaining.is_empty() {
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .map(|(p, &i)| (p, sq_dist(row(last), row(i))))
            .min_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then(remaining[a.0].cmp(&remaining[b.0]))
            })
            .expect("non-empty");
        last = remaining.remove(pos);
        order.push(last);
    }
    Ok(gather(particles, dim, weights, order))
}

/// Inverts the cumulative weights at each uniform: `a[i] = min { j : F(j) >= u[i] }`.
///
/// `cdf` must be the running sum of `weights`. Rounding can leave `F(N-1)`
/// slightly below a uniform; such draws fall back to the last particle with
/// positive weight.
#[inline]
pub(crate) fn invert_cdf_into(cdf: &[f64], weights: &[f64], uniforms: &[f64], out: &mut [usize]) {
    let n = cdf.len();
    for (o, &u) in out.iter_mut().zip(uniforms) {
        let j = cdf.partition_point(|&f| f < u);
        *o = if j < n {
            j
        } else {
            (0..n).rev().find(|&k| weights[k] > 0.0).unwrap_or(n - 1)
        };
    }
}

/// Correlated multinomial resampling on sorted weights with supplied uniforms.
///
/// Returns ancestor positions in the sorted frame.
pub fn correlated_multinomial_resample(
    sorted_weights: &[f64],
    uniforms: &[f64],
) -> Result<Vec<usize>> {
    if sorted_weights.is_empty() {
        return Err(Error::invalid("no weights to resample"));
    }
    let sum: f64 = sorted_weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || sorted_weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::invalid(format!(
            "weights must be a probability vector (sum {sum})"
        )));
    }
    if let Some(u) = uniforms.iter().find(|&&u| !(u > 0.0 && u < 1.0)) {
        return Err(Error::invalid(format!("uniform {u} is not inside (0, 1)")));
    }
    let cdf: Vec<f64> = sorted_weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let mut out = vec![0; uniforms.len()];
    invert_cdf_into(&cdf, sorted_weights, uniforms, &mut out);
    Ok(out)
}

/// Maps sorted-frame ancestors back to original particle indices: `a[i] = zeta[a_sorted[i]]`.
pub fn unsort_ancestors(sorted_ancestors: &[usize], zeta: &[usize]) -> Result<Vec<usize>> {
    sorted_ancestors
        .iter()
        .map(|&a| {
            zeta.get(a).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "ancestor {a} out of range for {} particles",
                    zeta.len()
                ))
            })
        })
        .collect()
}
