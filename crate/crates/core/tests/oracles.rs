//! Independent oracles for the click statistics: brute-force routing
//! enumeration and a plain Monte Carlo of Poissonian thinning.

use loopdet::model::{channel_transmissions, ChannelProfile, DeviceParams};
use loopdet::stats::{
    fock_click_distribution, fock_click_distribution_inclusion_exclusion, mixture_click_distribution,
    poisson_click_distribution, poisson_cutoff, PhotonSource,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

/// Enumerates all `(N+1)^n` routings of `n` photons (index N = lost) and
/// accumulates the probability of each distinct-channel count.
fn enumerate_routings(n: usize, h: &[f64]) -> Vec<f64> {
    let n_ch = h.len();
    let loss = 1.0 - h.iter().sum::<f64>();
    let weights: Vec<f64> = h.iter().copied().chain(std::iter::once(loss)).collect();
    let mut out = vec![0.0; n_ch + 1];
    let total = (n_ch + 1).pow(n as u32);
    let mut route = vec![0usize; n];
    for idx in 0..total {
        let mut x = idx;
        for slot in route.iter_mut() {
            *slot = x % (n_ch + 1);
            x /= n_ch + 1;
        }
        let p: f64 = route.iter().map(|&c| weights[c]).product();
        let mut seen = vec![false; n_ch];
        for &c in &route {
            if c < n_ch {
                seen[c] = true;
            }
        }
        out[seen.iter().filter(|s| **s).count()] += p;
    }
    out
}

fn random_profile(rng: &mut ChaCha8Rng, n_ch: usize) -> ChannelProfile {
    let raw: Vec<f64> = (0..n_ch).map(|_| rng.random::<f64>()).collect();
    let scale = rng.random_range(0.3..1.0) / raw.iter().sum::<f64>();
    ChannelProfile::from_channels(raw.iter().map(|v| v * scale).collect()).unwrap()
}

#[test]
fn fock_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n_ch in 1..=4 {
        for _ in 0..3 {
            let prof = random_profile(&mut rng, n_ch);
            for n in 0..=6 {
                let fast = fock_click_distribution(n, &prof);
                let brute = enumerate_routings(n, &prof.h);
                for (a, b) in fast.p_click.iter().zip(&brute) {
                    assert!((a - b).abs() < 1e-12, "n={n} N={n_ch}: {a} vs {b}");
                }
                let ie = fock_click_distribution_inclusion_exclusion(n, &prof).unwrap();
                for (a, b) in ie.p_click.iter().zip(&brute) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn two_photons_on_balanced_pair_by_enumeration() {
    let brute = enumerate_routings(2, &[0.5, 0.5]);
    assert_eq!(brute, vec![0.0, 0.5, 0.5]);
}

#[test]
fn poisson_closed_form_equals_fock_mixture() {
    let params = DeviceParams::lab_device();
    let prof = channel_transmissions(&params, 15).unwrap();
    for mu in [0.01, 0.5, 2.13, 4.26, 9.0] {
        let cut = poisson_cutoff(mu);
        let src = PhotonSource::Poissonian { mu };
        let mut pmf = src.pmf();
        assert_eq!(pmf.len(), cut + 1);
        let s: f64 = pmf.iter().sum();
        pmf.iter_mut().for_each(|p| *p /= s);
        let mix = mixture_click_distribution(&pmf, &prof).unwrap();
        let closed = poisson_click_distribution(mu, &prof).unwrap();
        for (a, b) in mix.p_click.iter().zip(&closed.p_click) {
            assert!((a - b).abs() < 1e-9, "mu={mu}");
        }
    }
}

#[test]
fn two_channel_poisson_against_plain_monte_carlo() {
    let h = [0.3, 0.3];
    let d = poisson_click_distribution(1.0, &ChannelProfile::from_channels(h.to_vec()).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let pois = Poisson::new(1.0).unwrap();
    let trials = 10_000_000u64;
    let mut counts = [0u64; 3];
    for _ in 0..trials {
        let n = pois.sample(&mut rng) as usize;
        let mut hit = [false; 2];
        for _ in 0..n {
            let u: f64 = rng.random();
            if u < h[0] {
                hit[0] = true;
            } else if u < h[0] + h[1] {
                hit[1] = true;
            }
        }
        counts[hit.iter().filter(|x| **x).count()] += 1;
    }
    for (m, &c) in counts.iter().enumerate() {
        let p = d.p_click[m];
        let est = c as f64 / trials as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((est - p).abs() < 4.0 * sigma, "m={m}: {est} vs {p}");
    }
}
