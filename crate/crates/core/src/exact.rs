//! Exact MAP support estimation for unitary dictionaries.
//!
//! With `AᵀA = I` the support posterior is itself a Boltzmann machine with the
//! prior's interactions and the data-dependent bias `q`, so MAP estimation is
//! the Boolean quadratic program `max qᵀS + ½SᵀWS`. For `W = 0` it separates
//! per atom; for banded `W` the maximal cliques `{c, …, c+L}` form a chain and
//! max-product message passing solves it in `O(2^L m)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::model::{posterior_bias, SignalModel, SupportPattern, EXHAUSTIVE_MAX_ATOMS};

/// `W[i][j] == 0` whenever `|i - j| > band`.
pub fn is_banded(w: &DMatrix<f64>, band: usize) -> bool {
    let (r, c) = w.shape();
    (0..r).all(|i| (0..c).all(|j| i.abs_diff(j) <= band || w[(i, j)] == 0.0))
}

/// Closed-form MAP for independent atoms: atom `i` is active iff `q_i > 0`.
pub fn map_zero_w(model: &SignalModel, y: &DVector<f64>) -> Result<SupportPattern> {
    if !model.prior().is_independent() {
        return Err(Error::precondition("closed-form MAP requires W = 0"));
    }
    let q = posterior_bias(model, y)?;
    let active: Vec<usize> = (0..q.len()).filter(|&i| q[i] > 0.0).collect();
    SupportPattern::from_indices(model.atoms(), &active)
}

/// Threshold on `|a_iᵀy|` above which an independent atom with activation
/// probability `p`, coefficient variance `coef_var` and noise level
/// `noise_std` is switched on. `None` when the atom is on for every signal.
pub fn zero_w_threshold(coef_var: f64, noise_std: f64, p: f64) -> Option<f64> {
    let noise_var = noise_std * noise_std;
    let c2 = coef_var / (coef_var + noise_var);
    let c = c2.sqrt();
    let arg = ((1.0 - p) / ((1.0 - c2).sqrt() * p)).ln();
    (arg >= 0.0).then(|| std::f64::consts::SQRT_2 * noise_std / c * arg.sqrt())
}

/// Max-product messages and the matching argmax tables.
///
/// `forward[c]` is the message from clique `c` to `c + 1` (for cliques left
/// of the pivot), indexed by the spins of sites `c+1 ..= c+L`; `backward[c]`
/// goes from `c` to `c - 1` (right of the pivot), indexed by sites
/// `c ..= c+L-1`. Bit `j` of an index is the `j`-th site of the separator,
/// set for spin `+1`. Entries for cliques on the other side are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageTables {
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
    /// Best spin bit of the eliminated site `c` given the separator.
    pub argmax_forward: Vec<Vec<u8>>,
    /// Best spin bit of the eliminated site `c + L` given the separator.
    pub argmax_backward: Vec<Vec<u8>>,
}

/// Clique chain of an `L`-banded Boltzmann machine with log-potentials that
/// add up to `qᵀS + ½SᵀWS`.
///
/// Clique `c` covers sites `c ..= c+L`. Cliques left of the pivot own the
/// bias of their first site and its in-window interactions, cliques right of
/// the pivot own their last site, and the pivot owns everything left in its
/// window. Table index bit `j` is the spin of site `c + j` (`1` for `+1`).
#[derive(Clone, Debug, PartialEq)]
pub struct CliqueChain {
    m: usize,
    band: usize,
    pivot: usize,
    log_potentials: Vec<Vec<f64>>,
}

fn spin(config: usize, bit: usize) -> f64 {
    if config >> bit & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Strictly better, or equal with fewer `+1` spins, or equal count and lower
/// index (the caller iterates in ascending order, so this keeps the first).
fn better(value: f64, config: usize, best: f64, best_config: usize) -> bool {
    value > best || (value == best && config.count_ones() < best_config.count_ones())
}

pub fn build_clique_chain(q: &DVector<f64>, w: &DMatrix<f64>, band: usize) -> Result<CliqueChain> {
    let m = q.len();
    check_dim("interaction matrix", m, w.nrows())?;
    check_dim("interaction matrix", m, w.ncols())?;
    if band == 0 {
        return Err(Error::invalid("band order must be at least 1"));
    }
    if band >= usize::BITS as usize - 2 {
        return Err(Error::invalid(format!("band order {band} is too large for clique tables")));
    }
    if !is_banded(w, band) {
        return Err(Error::precondition(format!("interaction matrix is not {band}-banded")));
    }
    if m <= band + 1 {
        return Err(Error::SingleClique { m, band });
    }
    let cliques = m - band;
    let pivot = (m - band - 1).div_ceil(2) - 1;
    let size = 1usize << (band + 1);
    let log_potentials = (0..cliques)
        .map(|c| {
            (0..size)
                .map(|t| {
                    let s = |site: usize| spin(t, site - c);
                    let mut v = 0.0;
                    if c < pivot {
                        v += q[c] * s(c);
                        for l in (c + 1)..=(c + band) {
                            v += w[(c, l)] * s(c) * s(l);
                        }
                    } else if c == pivot {
                        for i in c..=(c + band) {
                            v += q[i] * s(i);
                            for j in (i + 1)..=(c + band) {
                                v += w[(i, j)] * s(i) * s(j);
                            }
                        }
                    } else {
                        let last = c + band;
                        v += q[last] * s(last);
                        for l in c..last {
                            v += w[(l, last)] * s(l) * s(last);
                        }
                    }
                    v
                })
                .collect()
        })
        .collect();
    Ok(CliqueChain {
        m,
        band,
        pivot,
        log_potentials,
    })
}

impl CliqueChain {
    pub fn sites(&self) -> usize {
        self.m
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn clique_count(&self) -> usize {
        self.log_potentials.len()
    }

    /// Sites covered by clique `c`.
    pub fn window(&self, c: usize) -> std::ops::RangeInclusive<usize> {
        c..=(c + self.band)
    }

    /// Index of the clique where the inward messages meet.
    pub fn pivot(&self) -> usize {
        self.pivot
    }

    pub fn log_potential(&self, c: usize) -> &[f64] {
        &self.log_potentials[c]
    }

    /// Sum of all clique log-potentials at the assignment `spins`.
    pub fn potential_sum(&self, spins: &[i8]) -> f64 {
        (0..self.clique_count())
            .map(|c| {
                let t = self
                    .window(c)
                    .enumerate()
                    .fold(0usize, |t, (j, site)| t | usize::from(spins[site] > 0) << j);
                self.log_potentials[c][t]
            })
            .sum()
    }

    /// Inward max-product messages from both ends of the chain to the pivot.
    pub fn messages(&self) -> MessageTables {
        let cliques = self.clique_count();
        let sep = 1usize << self.band;
        let mask = sep - 1;
        let mut t = MessageTables {
            forward: vec![Vec::new(); cliques],
            backward: vec![Vec::new(); cliques],
            argmax_forward: vec![Vec::new(); cliques],
            argmax_backward: vec![Vec::new(); cliques],
        };
        for c in 0..self.pivot {
            let (mut msg, mut arg) = (vec![0.0; sep], vec![0u8; sep]);
            for r in 0..sep {
                let value = |b: usize| {
                    let config = (r << 1) | b;
                    let incoming = if c > 0 { t.forward[c - 1][config & mask] } else { 0.0 };
                    self.log_potentials[c][config] + incoming
                };
                let (off, on) = (value(0), value(1));
                (msg[r], arg[r]) = if on > off { (on, 1) } else { (off, 0) };
            }
            t.forward[c] = msg;
            t.argmax_forward[c] = arg;
        }
        for c in ((self.pivot + 1)..cliques).rev() {
            let (mut msg, mut arg) = (vec![0.0; sep], vec![0u8; sep]);
            for r in 0..sep {
                let value = |b: usize| {
                    let config = r | (b << self.band);
                    let incoming = if c + 1 < cliques { t.backward[c + 1][config >> 1] } else { 0.0 };
                    self.log_potentials[c][config] + incoming
                };
                let (off, on) = (value(0), value(1));
                (msg[r], arg[r]) = if on > off { (on, 1) } else { (off, 0) };
            }
            t.backward[c] = msg;
            t.argmax_backward[c] = arg;
        }
        t
    }

    /// Max-marginal table of the pivot clique.
    pub fn pivot_table(&self, tables: &MessageTables) -> Vec<f64> {
        let k = self.pivot;
        let mask = (1usize << self.band) - 1;
        (0..self.log_potentials[k].len())
            .map(|t| {
                let mut v = self.log_potentials[k][t];
                if k > 0 {
                    v += tables.forward[k - 1][t & mask];
                }
                if k + 1 < self.clique_count() {
                    v += tables.backward[k + 1][t >> 1];
                }
                v
            })
            .collect()
    }

    /// Maximizing assignment and the maximum of `qᵀS + ½SᵀWS`.
    pub fn map_assignment(&self) -> (SupportPattern, f64) {
        let tables = self.messages();
        let table = self.pivot_table(&tables);
        let mut best = 0;
        for (t, &v) in table.iter().enumerate().skip(1) {
            if better(v, t, table[best], best) {
                best = t;
            }
        }
        let mut bits = vec![0u8; self.m];
        let k = self.pivot;
        for (j, site) in self.window(k).enumerate() {
            bits[site] = (best >> j & 1) as u8;
        }
        let separator = |bits: &[u8], start: usize| {
            (0..self.band).fold(0usize, |r, j| r | usize::from(bits[start + j]) << j)
        };
        for c in (0..k).rev() {
            bits[c] = tables.argmax_forward[c][separator(&bits, c + 1)];
        }
        for c in (k + 1)..self.clique_count() {
            bits[c + self.band] = tables.argmax_backward[c][separator(&bits, c)];
        }
        let spins: Vec<i8> = bits.iter().map(|&b| if b == 1 { 1 } else { -1 }).collect();
        let support = SupportPattern::from_spins(&spins).expect("spins are ±1");
        (support, table[best])
    }
}

/// Maximize `qᵀS + ½SᵀWS` for `band`-banded `W`: message passing along the
/// clique chain, or direct enumeration when a single clique covers all sites.
pub fn maximize_banded(q: &DVector<f64>, w: &DMatrix<f64>, band: usize) -> Result<(SupportPattern, f64)> {
    match build_clique_chain(q, w, band) {
        Ok(chain) => Ok(chain.map_assignment()),
        Err(Error::SingleClique { m, .. }) => enumerate_qp(q, w, m),
        Err(e) => Err(e),
    }
}

fn enumerate_qp(q: &DVector<f64>, w: &DMatrix<f64>, m: usize) -> Result<(SupportPattern, f64)> {
    if m > EXHAUSTIVE_MAX_ATOMS {
        return Err(Error::TooLarge {
            m,
            max: EXHAUSTIVE_MAX_ATOMS,
        });
    }
    let value = |t: usize| {
        let mut v = 0.0;
        for i in 0..m {
            v += q[i] * spin(t, i);
            for j in (i + 1)..m {
                v += w[(i, j)] * spin(t, i) * spin(t, j);
            }
        }
        v
    };
    let mut best = (0usize, value(0));
    for t in 1..(1usize << m) {
        let v = value(t);
        if better(v, t, best.1, best.0) {
            best = (t, v);
        }
    }
    Ok((SupportPattern::from_mask(m, best.0 as u64), best.1))
}

/// Exact MAP support for a unitary dictionary and a `band`-banded prior.
pub fn map_message_passing(model: &SignalModel, y: &DVector<f64>, band: usize) -> Result<SupportPattern> {
    let q = posterior_bias(model, y)?;
    maximize_banded(&q, model.prior().weights(), band).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{exhaustive_map, quadratic_form_score, BoltzmannParams};
    use crate::rng::{rng_from_seed, uniform};
    use crate::synthetic::{banded_weights, SyntheticSetup};

    fn all_spins(m: usize) -> impl Iterator<Item = Vec<i8>> {
        (0..1u64 << m).map(move |t| SupportPattern::from_mask(m, t).spins().to_vec())
    }

    #[test]
    fn band_test() {
        let mut rng = rng_from_seed(0);
        assert!(is_banded(&DMatrix::zeros(5, 5), 0));
        let w = banded_weights(5, 2, -1.0, 1.0, &mut rng);
        assert!(is_banded(&w, 2));
        assert!(!is_banded(&w, 1));
        let dense = banded_weights(6, 5, -1.0, 1.0, &mut rng);
        assert!(!is_banded(&dense, 4));
    }

    #[test]
    fn threshold_worked_example() {
        // σ² = 50, σ_e = 5, p = 0.1.
        let t = zero_w_threshold(50.0, 5.0, 0.1).unwrap();
        let expected = (2.0f64).sqrt() * 5.0 / (2.0f64 / 3.0).sqrt()
            * (0.9 / ((1.0f64 / 3.0).sqrt() * 0.1)).ln().sqrt();
        assert!((t - expected).abs() < 1e-12);
        assert!((t - 14.353).abs() < 1e-3);
        assert_eq!(zero_w_threshold(50.0, 5.0, 0.7), None);
    }

    #[test]
    fn threshold_agrees_with_bias_criterion() {
        let mut rng = rng_from_seed(3);
        let a = crate::synthetic::random_orthogonal(6, &mut rng);
        let b = DVector::from_fn(6, |_, _| uniform(&mut rng, -3.0, -1.0));
        let vars = DVector::from_fn(6, |_, _| uniform(&mut rng, 20.0, 80.0));
        let model = SignalModel::new(a.clone(), vars.clone(), 5.0, BoltzmannParams::independent(b.clone()).unwrap()).unwrap();
        for k in 0..50 {
            let y = DVector::from_fn(6, |_, _| uniform(&mut rng, -30.0, 30.0));
            let s = map_zero_w(&model, &y).unwrap();
            let aty = a.tr_mul(&y);
            for i in 0..6 {
                let p = 1.0 / (1.0 + (-2.0 * b[i]).exp());
                let on = match zero_w_threshold(vars[i], 5.0, p) {
                    Some(t) => aty[i].abs() > t,
                    None => true,
                };
                assert_eq!(on, s.is_active(i), "case {k} atom {i}");
            }
        }
    }

    #[test]
    fn zero_w_requires_independent_prior() {
        let model = SyntheticSetup::small_unitary(6, 1).model(5.0, 2).unwrap();
        assert!(matches!(map_zero_w(&model, &DVector::zeros(6)), Err(Error::Precondition(_))));
    }

    #[test]
    fn fig3_chain_shape() {
        let mut rng = rng_from_seed(5);
        let w = banded_weights(5, 2, -1.0, 1.0, &mut rng);
        let chain = build_clique_chain(&DVector::zeros(5), &w, 2).unwrap();
        assert_eq!(chain.clique_count(), 3);
        assert_eq!(chain.pivot(), 0);
        assert_eq!(chain.window(2), 2..=4);
        assert!(chain.log_potentials.iter().all(|t| t.len() == 8));
    }

    #[test]
    fn zero_w_potentials_hold_only_biases() {
        let q = DVector::from_vec(vec![0.3, -0.2, 0.5, 1.0, -0.7, 0.1]);
        let chain = build_clique_chain(&q, &DMatrix::zeros(6, 6), 1).unwrap();
        let k = chain.pivot();
        for c in 0..chain.clique_count() {
            for t in 0..4 {
                let expected = match c.cmp(&k) {
                    std::cmp::Ordering::Less => q[c] * spin(t, 0),
                    std::cmp::Ordering::Equal => q[c] * spin(t, 0) + q[c + 1] * spin(t, 1),
                    std::cmp::Ordering::Greater => q[c + 1] * spin(t, 1),
                };
                assert_eq!(chain.log_potential(c)[t], expected);
            }
        }
    }

    #[test]
    fn potentials_decompose_the_quadratic_form() {
        let mut rng = rng_from_seed(7);
        for band in 1..=3 {
            let w = banded_weights(10, band, -1.0, 1.0, &mut rng);
            let q = DVector::from_fn(10, |_, _| uniform(&mut rng, -2.0, 2.0));
            let chain = build_clique_chain(&q, &w, band).unwrap();
            for spins in all_spins(10) {
                let direct = quadratic_form_score(&w, &q, &spins);
                assert!((chain.potential_sum(&spins) - direct).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pivot_max_marginal_is_global_maximum() {
        let mut rng = rng_from_seed(8);
        let w = banded_weights(9, 2, -1.0, 1.0, &mut rng);
        let q = DVector::from_fn(9, |_, _| uniform(&mut rng, -2.0, 2.0));
        let chain = build_clique_chain(&q, &w, 2).unwrap();
        let table = chain.pivot_table(&chain.messages());
        let top = table.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let brute = all_spins(9)
            .map(|s| quadratic_form_score(&w, &q, &s))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((top - brute).abs() < 1e-10);
        let (s, value) = chain.map_assignment();
        assert!((quadratic_form_score(&w, &q, s.spins()) - value).abs() < 1e-10);
    }

    #[test]
    fn single_clique_falls_back_to_enumeration() {
        let mut rng = rng_from_seed(9);
        let w = banded_weights(4, 3, -1.0, 1.0, &mut rng);
        let q = DVector::from_fn(4, |_, _| uniform(&mut rng, -1.0, 1.0));
        assert!(matches!(build_clique_chain(&q, &w, 3), Err(Error::SingleClique { .. })));
        let (s, v) = maximize_banded(&q, &w, 3).unwrap();
        let brute = all_spins(4)
            .map(|s| quadratic_form_score(&w, &q, &s))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(v, brute);
        assert_eq!(quadratic_form_score(&w, &q, s.spins()), v);
    }

    #[test]
    fn rejects_unbanded_or_non_unitary() {
        let mut rng = rng_from_seed(10);
        let w = banded_weights(6, 3, -1.0, 1.0, &mut rng);
        assert!(matches!(
            build_clique_chain(&DVector::zeros(6), &w, 2),
            Err(Error::Precondition(_))
        ));
        let setup = SyntheticSetup {
            signal_dim: 4,
            atoms: 8,
            band: Some(1),
            ..SyntheticSetup::unitary()
        };
        let model = setup
            .model_with_dictionary(DMatrix::from_fn(4, 8, |i, j| ((i + 1) * (j + 2)) as f64 % 3.0 + 0.5), 1.0, 1)
            .unwrap();
        assert!(map_message_passing(&model, &DVector::zeros(4), 1).is_err());
    }

    #[test]
    fn message_passing_matches_exhaustive_search() {
        for seed in 0..40 {
            let band = 1 + (seed as usize % 3);
            let model = SyntheticSetup::small_unitary(10, band).model(5.0 + seed as f64 % 4.0 * 5.0, seed).unwrap();
            let mut rng = rng_from_seed(1000 + seed);
            let y = DVector::from_fn(10, |_, _| uniform(&mut rng, -60.0, 60.0));
            assert_eq!(
                map_message_passing(&model, &y, band).unwrap(),
                exhaustive_map(&model, &y).unwrap()
            );
        }
    }
}
