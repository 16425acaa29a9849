//! Blocks of common random numbers and their correlated refresh.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filter::{CrnShape, FilterCrn};
use crate::rng::{self, streams};
use crate::stats::LN_2PI;

/// The `S` random-number blocks of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CrnBlockSet {
    blocks: Vec<FilterCrn>,
    pub rho_u: f64,
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::invalid(format!("rho_u = {rho} is outside [0, 1]")))
    }
}

/// Fills `S` blocks with standard normals; block `s` uses its own seeded stream.
pub fn crn_init(s: usize, shape: CrnShape, rho_u: f64, seed: u64) -> Result<CrnBlockSet> {
    if s == 0 {
        return Err(Error::invalid("at least one block is required"));
    }
    check_rho(rho_u)?;
    let blocks = (0..s)
        .map(|b| {
            FilterCrn::standard_normal(
                shape,
                &mut rng::stream(seed, &[streams::CRN_INIT, b as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrnBlockSet { blocks, rho_u })
}

impl CrnBlockSet {
    pub fn from_blocks(blocks: Vec<FilterCrn>, rho_u: f64) -> Result<Self> {
        check_rho(rho_u)?;
        let first = blocks
            .first()
            .ok_or_else(|| Error::invalid("at least one block is required"))?;
        if blocks.iter().any(|b| b.shape() != first.shape()) {
            return Err(Error::invalid("blocks have different shapes"));
        }
        Ok(Self { blocks, rho_u })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn shape(&self) -> CrnShape {
        self.blocks[0].shape()
    }

    pub fn blocks(&self) -> &[FilterCrn] {
        &self.blocks
    }

    pub fn block(&self, s: usize) -> &FilterCrn {
        &self.blocks[s]
    }

    /// Swaps block `s` with `other`, returning the previous contents through `other`.
    pub fn swap_block(&mut self, s: usize, other: &mut FilterCrn) -> Result<()> {
        if other.shape() != self.shape() {
            return Err(Error::invalid("replacement block has the wrong shape"));
        }
        std::mem::swap(&mut self.blocks[s], other);
        Ok(())
    }
}

/// Uniform block index in `0..s`.
pub fn select_block<R: Rng + ?Sized>(s: usize, rng: &mut R) -> Result<usize> {
    if s == 0 {
        return Err(Error::invalid("at least one block is required"));
    }
    Ok(rng.random_range(0..s))
}

/// `u' = rho u + sqrt(1 - rho^2) eta`, elementwise.
pub fn crn_block_update(u: &FilterCrn, rho_u: f64, eta: &FilterCrn) -> Result<FilterCrn> {
    check_rho(rho_u)?;
    if u.shape() != eta.shape() {
        return Err(Error::invalid("block and innovation shapes differ"));
    }
    let c = (1.0 - rho_u * rho_u).sqrt();
    let values = u
        .values()
        .iter()
        .zip(eta.values())
        .map(|(a, e)| rho_u * a + c * e)
        .collect();
    FilterCrn::from_values(u.shape(), values)
}

/// Writes the update of `u` with fresh innovations from `rng` into `out`.
pub(crate) fn refresh_into<R: Rng + ?Sized>(
    u: &FilterCrn,
    rho_u: f64,
    rng: &mut R,
    out: &mut FilterCrn,
) {
    let c = (1.0 - rho_u * rho_u).sqrt();
    for (o, a) in out.values_mut().iter_mut().zip(u.values()) {
        let e: f64 = rng.sample(StandardNormal);
        *o = rho_u * a + c * e;
    }
}

/// Detailed-balance gap `|log q(u'|u) + log p(u) - log q(u|u') - log p(u')|`
/// of the Gaussian autoregressive kernel.
pub fn reversibility_check(u: &FilterCrn, u_prime: &FilterCrn, rho_u: f64) -> Result<f64> {
    check_rho(rho_u)?;
    if u.shape() != u_prime.shape() {
        return Err(Error::invalid("blocks have different shapes"));
    }
    if rho_u == 1.0 {
        return if u == u_prime {
            Ok(0.0)
        } else {
            Err(Error::invalid(
                "the kernel is degenerate at rho_u = 1 and u != u'",
            ))
        };
    }
    let var = 1.0 - rho_u * rho_u;
    let kernel = |to: &[f64], from: &[f64]| -> f64 {
        to.iter()
            .zip(from)
            .map(|(x, y)| {
                let r = x - rho_u * y;
                -0.5 * (LN_2PI + var.ln() + r * r / var)
            })
            .sum()
    };
    let prior = |v: &[f64]| -> f64 { v.iter().map(|x| -0.5 * (LN_2PI + x * x)).sum() };
    let (a, b) = (u.values(), u_prime.values());
    Ok((kernel(b, a) + prior(a) - kernel(a, b) - prior(b)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn shape() -> CrnShape {
        CrnShape {
            t_len: 10,
            n: 20,
            n_e: 3,
            init_dim: 1,
        }
    }

    #[test]
    fn init_is_deterministic_and_distinct_across_blocks() {
        let a = crn_init(3, shape(), 0.9, 4).unwrap();
        assert_eq!(a, crn_init(3, shape(), 0.9, 4).unwrap());
        assert_ne!(a.block(0), a.block(1));
        assert_eq!(crn_init(1, shape(), 0.9, 4).unwrap().len(), 1);
        assert!(crn_init(0, shape(), 0.9, 4).is_err());
    }

    #[test]
    fn pooled_entries_are_standard_normal() {
        let big = CrnShape {
            t_len: 100,
            n: 100,
            n_e: 5,
            init_dim: 0,
        };
        let set = crn_init(2, big, 0.9, 11).unwrap();
        let pooled: Vec<f64> = set
            .blocks()
            .iter()
            .flat_map(|b| b.values().iter().copied())
            .collect();
        assert!(pooled.len() >= 100_000);
        assert!(stats::ks_test_pvalue(&pooled, stats::normal_cdf) > 0.01);
    }

    #[test]
    fn block_selection() {
        let mut r = rng::stream(1, &[]);
        assert!((0..100).all(|_| select_block(1, &mut r).unwrap() == 0));
        let s = 7;
        let draws = 100_000;
        let mut counts = vec![0usize; s];
        for _ in 0..draws {
            counts[select_block(s, &mut r).unwrap()] += 1;
        }
        let p = 1.0 / s as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sd);
        }
        let a: Vec<usize> = (0..20)
            .map(|_| select_block(5, &mut rng::stream(9, &[])).unwrap())
            .collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn update_limits_and_moments() {
        let mut r = rng::stream(2, &[]);
        let u = FilterCrn::standard_normal(shape(), &mut r).unwrap();
        let eta = FilterCrn::standard_normal(shape(), &mut r).unwrap();
        assert_eq!(crn_block_update(&u, 1.0, &eta).unwrap(), u);
        assert_eq!(crn_block_update(&u, 0.0, &eta).unwrap(), eta);
        let other = FilterCrn::standard_normal(
            CrnShape {
                t_len: 9,
                ..shape()
            },
            &mut r,
        )
        .unwrap();
        assert!(crn_block_update(&u, 0.5, &other).is_err());
        assert!(crn_block_update(&u, 1.5, &eta).is_err());

        let big = CrnShape {
            t_len: 100,
            n: 100,
            n_e: 10,
            init_dim: 0,
        };
        let u = FilterCrn::standard_normal(big, &mut r).unwrap();
        let eta = FilterCrn::standard_normal(big, &mut r).unwrap();
        let up = crn_block_update(&u, 0.9, &eta).unwrap();
        let c = stats::correlation(u.values(), up.values());
        assert!((c - 0.9).abs() < 0.01, "correlation {c}");
        assert!((stats::variance(up.values()) - 1.0).abs() < 0.02);
    }

    #[test]
    fn reversibility_gap() {
        let mut r = rng::stream(3, &[]);
        let u = FilterCrn::standard_normal(shape(), &mut r).unwrap();
        let v = FilterCrn::standard_normal(shape(), &mut r).unwrap();
        assert_eq!(reversibility_check(&u, &u, 0.9).unwrap(), 0.0);
        assert_eq!(reversibility_check(&u, &u, 1.0).unwrap(), 0.0);
        assert!(reversibility_check(&u, &v, 1.0).is_err());
        assert!(reversibility_check(&u, &v, 0.0).unwrap() < 1e-10);
        assert!(reversibility_check(&u, &v, 0.9).unwrap() < 1e-10);
    }

    #[test]
    fn swapping_touches_one_block() {
        let mut set = crn_init(4, shape(), 0.9, 5).unwrap();
        let before = set.clone();
        let mut fresh = FilterCrn::standard_normal(shape(), &mut rng::stream(8, &[])).unwrap();
        set.swap_block(2, &mut fresh).unwrap();
        for s in [0, 1, 3] {
            assert_eq!(set.block(s), before.block(s));
        }
        assert_eq!(&fresh, before.block(2));
    }
}
