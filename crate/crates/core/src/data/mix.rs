//! Temperature-based mixing of the three training streams.
//!
//! Stream `i` of size `D_i` is drawn with probability
//! `p_i = D_i^(1/T) / Σ_j D_j^(1/T)`. For epoch-level training each stream is
//! replicated an integer number of times instead:
//! `r_i = round((p_i / D_i) / min_j (p_j / D_j))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::corpus::SampleKind;

pub fn temperature_probabilities(sizes: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::input("no stream sizes given"));
    }
    if let Some(d) = sizes.iter().find(|&&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::input(format!("stream size must be positive, got {d}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::input(format!("temperature must be positive, got {temperature}")));
    }
    let logs: Vec<f64> = sizes.iter().map(|d| d.ln() / temperature).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Integer rates together with the unrounded ratios they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub exact: Vec<f64>,
    pub rates: Vec<usize>,
    /// Temperature implied by the rounded rates; `None` when all sizes are
    /// equal and any temperature fits.
    pub effective_temperature: Option<f64>,
}

pub fn rates_from_probabilities(sizes: &[f64], probabilities: &[f64]) -> Result<RateReport> {
    if sizes.len() != probabilities.len() || sizes.is_empty() {
        return Err(Error::input("sizes and probabilities differ in length"));
    }
    let total: f64 = probabilities.iter().sum();
    if probabilities.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::input("probabilities must be positive and sum to 1"));
    }
    let ratio: Vec<f64> = probabilities.iter().zip(sizes).map(|(p, d)| p / d).collect();
    let min = ratio.iter().copied().fold(f64::INFINITY, f64::min);
    let exact: Vec<f64> = ratio.iter().map(|r| r / min).collect();
    let rates: Vec<usize> = exact.iter().map(|e| (e.round() as usize).max(1)).collect();
    let effective_temperature = effective_temperature(sizes, &rates)?;
    Ok(RateReport {
        exact,
        rates,
        effective_temperature,
    })
}

/// Temperature whose closed form best matches the mixture produced by
/// `rates`: the inverse slope of a least-squares fit of `ln(r_i·D_i)` on
/// `ln D_i`.
pub fn effective_temperature(sizes: &[f64], rates: &[usize]) -> Result<Option<f64>> {
    if sizes.len() != rates.len() || rates.iter().any(|&r| r == 0) {
        return Err(Error::input("rates must be positive, one per stream"));
    }
    let x: Vec<f64> = sizes.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = sizes.iter().zip(rates).map(|(d, &r)| (d * r as f64).ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx < 1e-12 {
        return Ok(None);
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok(Some(if slope > 0.0 { 1.0 / slope } else { f64::INFINITY }))
}

/// Sizes, temperature, the resulting probabilities and integer rates, and
/// the image drop ratio. Streams of size 0 get probability 0 and rate 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub sizes: Vec<usize>,
    pub temperature: f64,
    pub probabilities: Vec<f64>,
    pub rates: Vec<usize>,
    pub exact_rates: Vec<f64>,
    pub effective_temperature: Option<f64>,
    pub drop_ratio: f64,
}

impl MixPlan {
    pub fn new(sizes: &[usize], temperature: f64, drop_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&drop_ratio) {
            return Err(Error::config(format!("drop ratio {drop_ratio} outside [0, 1]")));
        }
        let live: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0).collect();
        if live.is_empty() {
            return Err(Error::input("every training stream is empty"));
        }
        let live_sizes: Vec<f64> = live.iter().map(|&i| sizes[i] as f64).collect();
        let p = temperature_probabilities(&live_sizes, temperature)?;
        let report = rates_from_probabilities(&live_sizes, &p)?;
        let mut probabilities = vec![0.0; sizes.len()];
        let mut rates = vec![0; sizes.len()];
        let mut exact_rates = vec![0.0; sizes.len()];
        for (j, &i) in live.iter().enumerate() {
            probabilities[i] = p[j];
            rates[i] = report.rates[j];
            exact_rates[i] = report.exact[j];
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            temperature,
            probabilities,
            rates,
            exact_rates,
            effective_temperature: report.effective_temperature,
            drop_ratio,
        })
    }

    /// Plan with explicit rates (probabilities follow from them).
    pub fn with_rates(sizes: &[usize], rates: &[usize], drop_ratio: f64) -> Result<Self> {
        if sizes.len() != rates.len() {
            return Err(Error::input("one rate per stream required"));
        }
        let mut plan = Self::new(sizes, 1.0, drop_ratio)?;
        let counts: Vec<f64> = sizes.iter().zip(rates).map(|(&d, &r)| (d * r) as f64).collect();
        let total: f64 = counts.iter().sum();
        plan.rates = rates.to_vec();
        plan.exact_rates = rates.iter().map(|&r| r as f64).collect();
        plan.probabilities = counts.iter().map(|c| c / total).collect();
        let live: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0 && rates[i] > 0).collect();
        let s: Vec<f64> = live.iter().map(|&i| sizes[i] as f64).collect();
        let r: Vec<usize> = live.iter().map(|&i| rates[i]).collect();
        plan.effective_temperature = effective_temperature(&s, &r)?;
        plan.temperature = plan.effective_temperature.unwrap_or(1.0);
        Ok(plan)
    }

    pub fn epoch_length(&self) -> usize {
        self.sizes.iter().zip(&self.rates).map(|(d, r)| d * r).sum()
    }
}

/// One position of an epoch: which stream, which sample, and whether its
/// image (and prompt) is dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub stream: u8,
    pub index: u32,
    pub drop_image: bool,
}

/// Replicates each stream `rates[i]` times and shuffles the union.
/// `has_image(stream, index)` tells which samples are subject to dropout.
pub fn epoch_order<F>(plan: &MixPlan, has_image: F, rng: &mut Rng) -> Vec<Slot>
where
    F: Fn(usize, usize) -> bool,
{
    let mut order = Vec::with_capacity(plan.epoch_length());
    for (s, (&d, &r)) in plan.sizes.iter().zip(&plan.rates).enumerate() {
        for _ in 0..r {
            order.extend((0..d).map(|i| Slot {
                stream: s as u8,
                index: i as u32,
                drop_image: false,
            }));
        }
    }
    rng.shuffle(&mut order);
    for slot in &mut order {
        if has_image(slot.stream as usize, slot.index as usize) {
            slot.drop_image = rng.bernoulli(plan.drop_ratio);
        }
    }
    order
}

/// Draws stream indices with the plan's probabilities (no rounding).
#[derive(Clone, Debug)]
pub struct FractionalSampler {
    probabilities: Vec<f64>,
}

impl FractionalSampler {
    pub fn new(plan: &MixPlan) -> Self {
        Self {
            probabilities: plan.probabilities.clone(),
        }
    }

    pub fn draw(&self, rng: &mut Rng) -> usize {
        rng.categorical(&self.probabilities)
    }
}

/// Stream index of each kind in the fixed (triplet, parallel, caption) order.
pub fn stream_of(kind: SampleKind) -> usize {
    kind.index()
}

/// Uniformly random permutation with no fixed points.
pub fn derangement(n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::input(format!("a derangement needs at least 2 items, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        rng.shuffle(&mut perm);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    const SIZES: [f64; 3] = [22_000.0, 750_000.0, 103_000.0];

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn unit_temperature_is_proportional() {
        let p = temperature_probabilities(&SIZES, 1.0).unwrap();
        assert!(close(&p, &[0.025143, 0.857143, 0.117714], 1e-6), "{p:?}");
    }

    #[test]
    fn huge_temperature_is_uniform() {
        let p = temperature_probabilities(&SIZES, 1e9).unwrap();
        assert!(close(&p, &[1.0 / 3.0; 3], 1e-6), "{p:?}");
    }

    // Reference digits from a 50-digit evaluation of D^(1/T).
    #[test]
    fn high_precision_reference_values() {
        let p5 = temperature_probabilities(&SIZES, 5.0).unwrap();
        assert!(close(&p5, &[0.227936671507, 0.461680911383, 0.310382417111], 1e-11), "{p5:?}");
        let p2 = temperature_probabilities(&SIZES, 2.0).unwrap();
        assert!(close(&p2, &[0.111080341448, 0.648569464007, 0.240350194545], 1e-11));
        let p100 = temperature_probabilities(&SIZES, 100.0).unwrap();
        assert!(close(&p100, &[0.32771015158, 0.33948163152, 0.3328082169], 1e-10));
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(temperature_probabilities(&[1.0, 0.0], 1.0).is_err());
        assert!(temperature_probabilities(&[1.0, 2.0], 0.0).is_err());
        assert!(temperature_probabilities(&[], 1.0).is_err());
    }

    #[test]
    fn equal_sizes_uniform_give_unit_rates() {
        let r = rates_from_probabilities(&[50.0; 3], &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(r.rates, vec![1, 1, 1]);
        assert_eq!(r.effective_temperature, None);
    }

    #[test]
    fn two_stream_rate_matches_brute_force_proportionality() {
        let sizes = [100.0, 100_000.0];
        let p = temperature_probabilities(&sizes, 2.0).unwrap();
        let r = rates_from_probabilities(&sizes, &p).unwrap();
        // closed form: (p0/D0)/(p1/D1) = (D1/D0)^(1 - 1/T) = 1000^0.5
        assert!((r.exact[0] - 1000f64.sqrt()).abs() < 1e-9);
        assert_eq!(r.rates, vec![32, 1]);
        // brute force: the integer rate whose replicated counts best match p
        let best = (1..200usize)
            .min_by(|&a, &b| {
                let err = |k: usize| {
                    let c0 = 100.0 * k as f64;
                    (c0 / (c0 + 100_000.0) - p[0]).abs()
                };
                err(a).total_cmp(&err(b))
            })
            .unwrap();
        assert_eq!(best, 32);
    }

    #[test]
    fn default_configuration_rates() {
        let p = temperature_probabilities(&SIZES, 5.0).unwrap();
        let r = rates_from_probabilities(&SIZES, &p).unwrap();
        assert!((r.exact[0] - 16.831).abs() < 1e-3, "{:?}", r.exact);
        assert!((r.exact[2] - 4.895).abs() < 1e-3);
        assert_eq!(r.rates, vec![17, 1, 5]);
        let t = r.effective_temperature.unwrap();
        assert!((t - 5.08).abs() < 0.01, "{t}");
    }

    #[test]
    fn effective_temperature_of_explicit_rates() {
        let t = effective_temperature(&SIZES, &[15, 1, 4]).unwrap().unwrap();
        assert!((t - 4.24).abs() < 0.01, "{t}");
    }

    #[test]
    fn epoch_length_counts_replicas() {
        let plan = MixPlan::with_rates(&[22_000, 750_000, 103_000], &[15, 1, 4], 0.3).unwrap();
        assert_eq!(plan.epoch_length(), 1_492_000);
        let order = epoch_order(&plan, |_, _| false, &mut Rng::new(1));
        assert_eq!(order.len(), 1_492_000);
        let mut counts = [0usize; 3];
        for s in &order {
            counts[s.stream as usize] += 1;
        }
        assert_eq!(counts, [330_000, 750_000, 412_000]);
    }

    #[test]
    fn unit_rates_without_dropout_permute_the_union() {
        let plan = MixPlan::with_rates(&[3, 4, 2], &[1, 1, 1], 0.0).unwrap();
        let order = epoch_order(&plan, |_, _| true, &mut Rng::new(4));
        let mut seen: Vec<(u8, u32)> = order.iter().map(|s| (s.stream, s.index)).collect();
        assert!(order.iter().all(|s| !s.drop_image));
        seen.sort_unstable();
        let expected: Vec<(u8, u32)> =
            [(0u8, 3u32), (1, 4), (2, 2)].iter().flat_map(|&(s, n)| (0..n).map(move |i| (s, i))).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn full_dropout_drops_every_image() {
        let plan = MixPlan::with_rates(&[5, 5, 5], &[2, 1, 1], 1.0).unwrap();
        let order = epoch_order(&plan, |s, _| s != 1, &mut Rng::new(4));
        assert!(order.iter().all(|s| s.drop_image == (s.stream != 1)));
    }

    #[test]
    fn epoch_is_reproducible() {
        let plan = MixPlan::new(&[30, 500, 80], 5.0, 0.3).unwrap();
        let a = epoch_order(&plan, |s, _| s != 1, &mut Rng::new(8));
        let b = epoch_order(&plan, |s, _| s != 1, &mut Rng::new(8));
        assert_eq!(a, b);
    }

    #[test]
    fn fractional_sampler_tracks_probabilities() {
        let plan = MixPlan::new(&[22_000, 750_000, 103_000], 5.0, 0.3).unwrap();
        let sampler = FractionalSampler::new(&plan);
        let mut rng = Rng::new(17);
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[sampler.draw(&mut rng)] += 1;
        }
        for i in 0..3 {
            let freq = counts[i] as f64 / 100_000.0;
            assert!((freq - plan.probabilities[i]).abs() < 0.02);
        }
    }

    #[test]
    fn two_item_derangement_swaps() {
        assert_eq!(derangement(2, &mut Rng::new(0)).unwrap(), vec![1, 0]);
        assert!(derangement(1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn derangement_trace() {
        let p = derangement(10, &mut Rng::new(5)).unwrap();
        assert_eq!(p, DERANGEMENT_SEED_5);
    }

    const DERANGEMENT_SEED_5: &[usize] = &[2, 7, 9, 8, 0, 1, 5, 6, 4, 3];

    proptest! {
        #[test]
        fn smallest_stream_gains_with_temperature(
            a in 1.0f64..1e6, b in 1.0f64..1e6, c in 1.0f64..1e6,
            t in 0.5f64..20.0, dt in 0.0f64..20.0,
        ) {
            let sizes = [a, b, c];
            let small = (0..3).min_by(|&i, &j| sizes[i].total_cmp(&sizes[j])).unwrap();
            let lo = temperature_probabilities(&sizes, t).unwrap();
            let hi = temperature_probabilities(&sizes, t + dt).unwrap();
            prop_assert!(hi[small] >= lo[small] - 1e-12);
        }

        #[test]
        fn probabilities_sum_to_one(sizes in prop::collection::vec(1.0f64..1e7, 1..6), t in 0.1f64..100.0) {
            let p = temperature_probabilities(&sizes, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn derangements_have_no_fixed_points(n in 2usize..40, seed in 0u64..500) {
            let p = derangement(n, &mut Rng::new(seed)).unwrap();
            prop_assert!(p.iter().enumerate().all(|(i, &x)| i != x));
            let mut sorted = p.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn derangements_exhaustive_small_n() {
        for n in 2..8 {
            for seed in 0..200 {
                let p = derangement(n, &mut Rng::new(seed)).unwrap();
                assert!(p.iter().enumerate().all(|(i, &x)| i != x));
            }
        }
    }
}
