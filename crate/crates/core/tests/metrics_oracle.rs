//! Brute-force oracles for the censored-data metrics, enumerated over every
//! cohort size up to 6 and every censoring pattern, with tied and untied
//! time/risk arrangements. The oracles recount risk sets from scratch at
//! every time point, independent of the implementation's sweep.

use mmsurv_core::metrics::{
    c_index, chi_square_sf, km_estimate, logrank_test, median_split, CasePrediction,
    CohortPredictions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn cohort(times: &[f64], censor: &[u8], risks: &[f64]) -> CohortPredictions {
    CohortPredictions::new(
        (0..times.len())
            .map(|i| CasePrediction {
                case_id: format!("c{i}"),
                risk: risks[i],
                time: times[i],
                censor: censor[i],
            })
            .collect(),
    )
    .unwrap()
}

fn oracle_c_index(times: &[f64], censor: &[u8], risks: &[f64]) -> Option<f64> {
    let n = times.len();
    let mut pairs = 0u32;
    let mut score = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            // comparable iff the earlier time is strictly earlier and observed
            if times[i] < times[j] && censor[i] == 0 {
                pairs += 1;
                score += if risks[i] > risks[j] {
                    1.0
                } else if risks[i] == risks[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0).then(|| score / pairs as f64)
}

/// Survival probability just after time `t` by the product-limit definition,
/// recounting the at-risk set per distinct event time.
fn oracle_km_at(times: &[f64], censor: &[u8], t: f64) -> f64 {
    let mut event_times: Vec<f64> = times
        .iter()
        .zip(censor)
        .filter(|(_, &c)| c == 0)
        .map(|(&ti, _)| ti)
        .filter(|&ti| ti <= t)
        .collect();
    event_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    event_times.dedup();
    let mut s = 1.0;
    for tau in event_times {
        let at_risk = times.iter().filter(|&&ti| ti >= tau).count();
        let deaths = times
            .iter()
            .zip(censor)
            .filter(|(&ti, &c)| ti == tau && c == 0)
            .count();
        s *= 1.0 - deaths as f64 / at_risk as f64;
    }
    s
}

fn oracle_logrank(
    times_a: &[f64],
    censor_a: &[u8],
    times_b: &[f64],
    censor_b: &[u8],
) -> Option<f64> {
    let mut pooled: Vec<f64> = times_a
        .iter()
        .zip(censor_a)
        .chain(times_b.iter().zip(censor_b))
        .filter(|(_, &c)| c == 0)
        .map(|(&t, _)| t)
        .collect();
    if pooled.is_empty() {
        return None;
    }
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pooled.dedup();
    let mut diff = 0.0;
    let mut var = 0.0;
    for tau in pooled {
        let n_a = times_a.iter().filter(|&&t| t >= tau).count() as f64;
        let n_b = times_b.iter().filter(|&&t| t >= tau).count() as f64;
        let d_a = times_a
            .iter()
            .zip(censor_a)
            .filter(|(&t, &c)| t == tau && c == 0)
            .count() as f64;
        let d_b = times_b
            .iter()
            .zip(censor_b)
            .filter(|(&t, &c)| t == tau && c == 0)
            .count() as f64;
        let n = n_a + n_b;
        let d = d_a + d_b;
        diff += d_a - d * n_a / n;
        if n > 1.0 {
            var += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
        }
    }
    Some(if var > 0.0 { diff * diff / var } else { 0.0 })
}

fn time_arrangements(n: usize) -> Vec<Vec<f64>> {
    let distinct: Vec<f64> = (1..=n).map(|v| v as f64).collect();
    // heavy ties: pairs share a time
    let tied: Vec<f64> = (0..n).map(|i| (i / 2 + 1) as f64).collect();
    vec![distinct, tied]
}

#[test]
fn c_index_matches_enumeration_oracle_exhaustively() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for n in 1..=6usize {
        for times in time_arrangements(n) {
            for pattern in 0..(1u32 << n) {
                let censor: Vec<u8> = (0..n).map(|i| ((pattern >> i) & 1) as u8).collect();
                let risks: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let preds = cohort(&times, &censor, &risks);
                match oracle_c_index(&times, &censor, &risks) {
                    Some(want) => {
                        let got = c_index(&preds).unwrap();
                        assert!(
                            (got - want).abs() < 1e-12,
                            "n={n} pattern={pattern:b}: {got} vs {want}"
                        );
                    }
                    None => assert!(c_index(&preds).is_err()),
                }
                // tied-risk variant
                let flat = vec![0.25; n];
                let preds = cohort(&times, &censor, &flat);
                if let Some(want) = oracle_c_index(&times, &censor, &flat) {
                    assert!((c_index(&preds).unwrap() - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn km_matches_product_limit_oracle_exhaustively() {
    for n in 1..=6usize {
        for times in time_arrangements(n) {
            for pattern in 0..(1u32 << n) {
                let censor: Vec<u8> = (0..n).map(|i| ((pattern >> i) & 1) as u8).collect();
                let preds = cohort(&times, &censor, &vec![0.0; n]);
                let curve = km_estimate(&preds).unwrap();
                for (i, &t) in curve.times.iter().enumerate() {
                    let want = oracle_km_at(&times, &censor, t);
                    assert!(
                        (curve.survival[i] - want).abs() < 1e-12,
                        "n={n} pattern={pattern:b} t={t}: {} vs {want}",
                        curve.survival[i]
                    );
                }
                // curve lists exactly the distinct observed event times
                let mut want_times: Vec<f64> = times
                    .iter()
                    .zip(&censor)
                    .filter(|(_, &c)| c == 0)
                    .map(|(&t, _)| t)
                    .collect();
                want_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
                want_times.dedup();
                assert_eq!(curve.times, want_times);
            }
        }
    }
}

#[test]
fn logrank_matches_counting_oracle_exhaustively() {
    // all two-group splits of cohorts up to total size 6
    for n_a in 1..=3usize {
        for n_b in 1..=3usize {
            let times_a: Vec<f64> = (1..=n_a).map(|v| v as f64).collect();
            let times_b: Vec<f64> = (1..=n_b).map(|v| (v as f64) + 0.5).collect();
            for pat_a in 0..(1u32 << n_a) {
                for pat_b in 0..(1u32 << n_b) {
                    let censor_a: Vec<u8> = (0..n_a).map(|i| ((pat_a >> i) & 1) as u8).collect();
                    let censor_b: Vec<u8> = (0..n_b).map(|i| ((pat_b >> i) & 1) as u8).collect();
                    let a = cohort(&times_a, &censor_a, &vec![0.0; n_a]);
                    let b = CohortPredictions::new(
                        (0..n_b)
                            .map(|i| CasePrediction {
                                case_id: format!("b{i}"),
                                risk: 0.0,
                                time: times_b[i],
                                censor: censor_b[i],
                            })
                            .collect(),
                    )
                    .unwrap();
                    match oracle_logrank(&times_a, &censor_a, &times_b, &censor_b) {
                        Some(want_chi2) => {
                            let (chi2, p) = logrank_test(&a, &b).unwrap();
                            assert!(
                                (chi2 - want_chi2).abs() < 1e-10,
                                "chi2 {chi2} vs {want_chi2}"
                            );
                            let want_p = chi_square_sf(want_chi2, 1.0);
                            assert!((p - want_p).abs() < 1e-12);
                        }
                        None => assert!(logrank_test(&a, &b).is_err()),
                    }
                }
            }
        }
    }
}

#[test]
fn logrank_with_shared_event_times_across_groups() {
    // tied times across the two groups exercise the pooled risk-set counting
    let times_a = [1.0, 2.0, 2.0];
    let censor_a = [0u8, 0, 1];
    let times_b = [2.0, 3.0, 3.0];
    let censor_b = [0u8, 0, 0];
    let a = cohort(&times_a, &censor_a, &[0.0; 3]);
    let b = CohortPredictions::new(
        (0..3)
            .map(|i| CasePrediction {
                case_id: format!("b{i}"),
                risk: 0.0,
                time: times_b[i],
                censor: censor_b[i],
            })
            .collect(),
    )
    .unwrap();
    let (chi2, _) = logrank_test(&a, &b).unwrap();
    let want = oracle_logrank(&times_a, &censor_a, &times_b, &censor_b).unwrap();
    assert!((chi2 - want).abs() < 1e-10);
}

#[test]
fn median_split_feeds_logrank_on_separated_risks() {
    // end-to-end stratification sanity on a hand-built cohort
    let mut cases = Vec::new();
    for i in 0..10 {
        let high_risk = i < 5;
        cases.push(CasePrediction {
            case_id: format!("c{i}"),
            risk: if high_risk { 2.0 + i as f64 * 0.1 } else { -1.0 - i as f64 * 0.1 },
            time: if high_risk { 1.0 + i as f64 * 0.2 } else { 20.0 + i as f64 },
            censor: (i % 4 == 3) as u8,
        });
    }
    let preds = CohortPredictions::new(cases).unwrap();
    let (low, high) = median_split(&preds).unwrap();
    assert_eq!(low.len(), 5);
    assert_eq!(high.len(), 5);
    assert!(high.cases.iter().all(|c| c.risk > 0.0));
    let (chi2, p) = logrank_test(&low, &high).unwrap();
    assert!(chi2 > 3.841);
    assert!(p < 0.05);
}
