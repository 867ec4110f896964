//! Survival-analysis evaluation: concordance index over censored pairs,
//! the product-limit survival estimator, the two-group log-rank test with an
//! in-house chi-square tail, and median-risk stratification.

use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("invalid cohort: {0}")]
    InvalidCohort(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, PartialEq)]
pub struct CasePrediction {
    pub case_id: String,
    pub risk: f64,
    pub time: f64,
    /// 0 = event observed, 1 = censored.
    pub censor: u8,
}

/// Validated cohort of per-case predictions.
#[derive(Debug, Clone, Default)]
pub struct CohortPredictions {
    pub cases: Vec<CasePrediction>,
}

impl CohortPredictions {
    pub fn new(cases: Vec<CasePrediction>) -> Result<Self> {
        let mut ids: Vec<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != cases.len() {
            return Err(MetricError::InvalidCohort("duplicate case ids".into()));
        }
        for c in &cases {
            if !(c.time > 0.0) {
                return Err(MetricError::InvalidCohort(format!(
                    "case {} has non-positive time {}",
                    c.case_id, c.time
                )));
            }
            if c.censor > 1 {
                return Err(MetricError::InvalidCohort(format!(
                    "case {} has censor flag {}",
                    c.case_id, c.censor
                )));
            }
        }
        Ok(Self { cases })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

/// Harrell's concordance index. A pair is comparable when the case with the
/// strictly shorter time had its event observed; concordant pairs score 1,
/// risk ties score 0.5.
pub fn c_index(preds: &CohortPredictions) -> Result<f64> {
    let cases = &preds.cases;
    let mut comparable = 0u64;
    let mut score = 0.0f64;
    for i in 0..cases.len() {
        if cases[i].censor != 0 {
            continue;
        }
        for j in 0..cases.len() {
            if i == j || !(cases[i].time < cases[j].time) {
                continue;
            }
            comparable += 1;
            if cases[i].risk > cases[j].risk {
                score += 1.0;
            } else if cases[i].risk == cases[j].risk {
                score += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(MetricError::Undefined(
            "no comparable pairs (need a shorter observed event time)".into(),
        ));
    }
    Ok(score / comparable as f64)
}

/// Product-limit survival curve: one step per distinct event time.
#[derive(Debug, Clone, PartialEq)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

/// Kaplan-Meier estimate: `S(t) = prod_{t_i <= t} (1 - d_i / n_i)`.
/// Cases censored at time t stay in the risk set for events at t.
pub fn km_estimate(group: &CohortPredictions) -> Result<KmCurve> {
    if group.is_empty() {
        return Err(MetricError::Undefined("empty group".into()));
    }
    let mut order: Vec<&CasePrediction> = group.cases.iter().collect();
    order.sort_by(|a, b| a.time.partial_cmp(&b.time).expect("finite times"));
    let n = order.len();
    let mut curve = KmCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut surv = 1.0;
    let mut i = 0;
    while i < n {
        let t = order[i].time;
        let at_risk = n - i;
        let mut deaths = 0usize;
        let mut j = i;
        while j < n && order[j].time == t {
            if order[j].censor == 0 {
                deaths += 1;
            }
            j += 1;
        }
        if deaths > 0 {
            surv *= 1.0 - deaths as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(surv);
            curve.at_risk.push(at_risk);
            curve.events.push(deaths);
        }
        i = j;
    }
    Ok(curve)
}

/// Writes a curve as `time,survival,at_risk,events` rows with a header.
pub fn write_km_csv(curve: &KmCurve, out: &mut impl Write) -> Result<()> {
    writeln!(out, "time,survival,at_risk,events")?;
    for i in 0..curve.times.len() {
        writeln!(
            out,
            "{},{},{},{}",
            curve.times[i], curve.survival[i], curve.at_risk[i], curve.events[i]
        )?;
    }
    Ok(())
}

/// Two-group log-rank test. Returns the chi-square statistic (1 degree of
/// freedom) and its upper-tail p-value.
pub fn logrank_test(a: &CohortPredictions, b: &CohortPredictions) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Undefined("both groups must be nonempty".into()));
    }
    // (time, in_a, event)
    let mut all: Vec<(f64, bool, bool)> = Vec::with_capacity(a.len() + b.len());
    for c in &a.cases {
        all.push((c.time, true, c.censor == 0));
    }
    for c in &b.cases {
        all.push((c.time, false, c.censor == 0));
    }
    if !all.iter().any(|&(_, _, e)| e) {
        return Err(MetricError::Undefined("no events in either group".into()));
    }
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite times"));

    let total = all.len();
    let mut observed_a = 0.0f64;
    let mut expected_a = 0.0f64;
    let mut variance = 0.0f64;
    let mut i = 0;
    // running count of group-a cases with time >= current t
    let mut remaining_a = a.len();
    let mut remaining = total;
    while i < total {
        let t = all[i].0;
        let mut d = 0.0f64;
        let mut d_a = 0.0f64;
        let mut j = i;
        let mut leaving_a = 0usize;
        while j < total && all[j].0 == t {
            if all[j].2 {
                d += 1.0;
                if all[j].1 {
                    d_a += 1.0;
                }
            }
            if all[j].1 {
                leaving_a += 1;
            }
            j += 1;
        }
        if d > 0.0 {
            let n = remaining as f64;
            let n_a = remaining_a as f64;
            observed_a += d_a;
            expected_a += d * n_a / n;
            if remaining > 1 {
                variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
            }
        }
        remaining -= j - i;
        remaining_a -= leaving_a;
        i = j;
    }
    let chi2 = if variance > 0.0 {
        let diff = observed_a - expected_a;
        diff * diff / variance
    } else {
        0.0
    };
    Ok((chi2, chi_square_sf(chi2, 1.0)))
}

/// Splits a cohort at the median risk: `risk <= median` goes low,
/// `risk > median` goes high (exact-median ties go low).
pub fn median_split(
    preds: &CohortPredictions,
) -> Result<(CohortPredictions, CohortPredictions)> {
    if preds.len() < 2 {
        return Err(MetricError::Undefined(
            "median split needs at least 2 cases".into(),
        ));
    }
    let mut risks: Vec<f64> = preds.cases.iter().map(|c| c.risk).collect();
    risks.sort_by(|a, b| a.partial_cmp(b).expect("finite risks"));
    let n = risks.len();
    let median = if n % 2 == 1 {
        risks[n / 2]
    } else {
        0.5 * (risks[n / 2 - 1] + risks[n / 2])
    };
    let mut low = Vec::new();
    let mut high = Vec::new();
    for c in &preds.cases {
        if c.risk <= median {
            low.push(c.clone());
        } else {
            high.push(c.clone());
        }
    }
    Ok((CohortPredictions { cases: low }, CohortPredictions { cases: high }))
}

// ── chi-square tail via regularized incomplete gamma ───────────────────

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64 - 1.0);
    }
    let t = x + LANCZOS_G - 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x - 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a,x) by series expansion.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a,x) by continued fraction.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Upper-tail probability of a chi-square variable with `dof` degrees of
/// freedom: `Q(dof/2, x/2)`.
pub fn chi_square_sf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let a = dof / 2.0;
    let xh = x / 2.0;
    if xh < a + 1.0 {
        1.0 - gamma_p_series(a, xh)
    } else {
        gamma_q_cf(a, xh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(entries: &[(f64, u8, f64)]) -> CohortPredictions {
        CohortPredictions::new(
            entries
                .iter()
                .enumerate()
                .map(|(i, &(time, censor, risk))| CasePrediction {
                    case_id: format!("c{i}"),
                    risk,
                    time,
                    censor,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cohort_validation() {
        let dup = vec![
            CasePrediction {
                case_id: "a".into(),
                risk: 0.0,
                time: 1.0,
                censor: 0,
            },
            CasePrediction {
                case_id: "a".into(),
                risk: 0.0,
                time: 2.0,
                censor: 0,
            },
        ];
        assert!(CohortPredictions::new(dup).is_err());
        assert!(CohortPredictions::new(vec![CasePrediction {
            case_id: "a".into(),
            risk: 0.0,
            time: 0.0,
            censor: 0,
        }])
        .is_err());
    }

    #[test]
    fn perfect_and_inverted_ranking() {
        let perfect = cohort(&[(1.0, 0, 3.0), (2.0, 0, 2.0), (3.0, 0, 1.0)]);
        assert_eq!(c_index(&perfect).unwrap(), 1.0);
        let inverted = cohort(&[(1.0, 0, 1.0), (2.0, 0, 2.0), (3.0, 0, 3.0)]);
        assert_eq!(c_index(&inverted).unwrap(), 0.0);
    }

    #[test]
    fn censoring_restricts_comparable_pairs() {
        // censor case at t=2: pairs (1,2) and (1,3) only, both concordant
        let preds = cohort(&[(1.0, 0, 5.0), (2.0, 1, 4.0), (3.0, 0, 3.0)]);
        assert_eq!(c_index(&preds).unwrap(), 1.0);
    }

    #[test]
    fn all_censored_is_undefined() {
        let preds = cohort(&[(1.0, 1, 1.0), (2.0, 1, 2.0)]);
        assert!(matches!(c_index(&preds), Err(MetricError::Undefined(_))));
    }

    #[test]
    fn tied_risks_score_half() {
        let preds = cohort(&[(1.0, 0, 2.0), (2.0, 0, 2.0)]);
        assert_eq!(c_index(&preds).unwrap(), 0.5);
    }

    #[test]
    fn c_index_invariant_under_monotone_transform() {
        let preds = cohort(&[
            (1.0, 0, 0.3),
            (2.5, 0, -1.2),
            (2.5, 1, 0.8),
            (4.0, 0, 0.1),
            (5.0, 1, -0.4),
        ]);
        let base = c_index(&preds).unwrap();
        let mut mapped = preds.clone();
        for c in &mut mapped.cases {
            c.risk = c.risk.exp();
        }
        assert_eq!(c_index(&mapped).unwrap(), base);
    }

    #[test]
    fn c_index_negation_complements() {
        let preds = cohort(&[
            (1.0, 0, 0.3),
            (2.0, 0, -1.2),
            (3.0, 1, 0.8),
            (4.0, 0, 0.1),
        ]);
        let base = c_index(&preds).unwrap();
        let mut negated = preds.clone();
        for c in &mut negated.cases {
            c.risk = -c.risk;
        }
        assert!((c_index(&negated).unwrap() - (1.0 - base)).abs() < 1e-15);
    }

    #[test]
    fn km_all_events() {
        let preds = cohort(&[(1.0, 0, 0.0), (2.0, 0, 0.0), (3.0, 0, 0.0)]);
        let curve = km_estimate(&preds).unwrap();
        assert_eq!(curve.times, vec![1.0, 2.0, 3.0]);
        let want = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (s, w) in curve.survival.iter().zip(want) {
            assert!((s - w).abs() < 1e-15);
        }
        assert_eq!(curve.at_risk, vec![3, 2, 1]);
    }

    #[test]
    fn km_all_censored_is_flat() {
        let preds = cohort(&[(1.0, 1, 0.0), (2.0, 1, 0.0)]);
        let curve = km_estimate(&preds).unwrap();
        assert!(curve.times.is_empty());
    }

    #[test]
    fn km_event_then_censor() {
        let preds = cohort(&[(1.0, 0, 0.0), (2.0, 1, 0.0)]);
        let curve = km_estimate(&preds).unwrap();
        assert_eq!(curve.times, vec![1.0]);
        assert!((curve.survival[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn km_monotone_nonincreasing() {
        let preds = cohort(&[
            (1.0, 0, 0.0),
            (1.0, 1, 0.0),
            (2.0, 0, 0.0),
            (2.0, 0, 0.0),
            (3.0, 1, 0.0),
            (4.0, 0, 0.0),
        ]);
        let curve = km_estimate(&preds).unwrap();
        let mut prev = 1.0;
        for &s in &curve.survival {
            assert!(s <= prev + 1e-15);
            prev = s;
        }
    }

    #[test]
    fn logrank_identical_groups() {
        let g = cohort(&[(1.0, 0, 0.0), (2.0, 1, 0.0), (3.0, 0, 0.0)]);
        let (chi2, p) = logrank_test(&g, &g.clone()).unwrap();
        assert!(chi2.abs() < 1e-12);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logrank_separated_groups() {
        let early = cohort(&[(1.0, 0, 0.0), (2.0, 0, 0.0), (3.0, 0, 0.0)]);
        let late = cohort(&[(10.0, 0, 0.0), (11.0, 0, 0.0), (12.0, 0, 0.0)]);
        let (chi2, p) = logrank_test(&early, &late).unwrap();
        assert!(chi2 > 3.841, "chi2 {chi2}");
        assert!(p < 0.05, "p {p}");
    }

    #[test]
    fn logrank_symmetric_in_groups() {
        let a = cohort(&[(1.0, 0, 0.0), (4.0, 1, 0.0), (6.0, 0, 0.0)]);
        let b = cohort(&[(2.0, 0, 0.0), (3.0, 0, 0.0), (9.0, 1, 0.0)]);
        let (c1, p1) = logrank_test(&a, &b).unwrap();
        let (c2, p2) = logrank_test(&b, &a).unwrap();
        assert!((c1 - c2).abs() < 1e-12);
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn logrank_no_events_is_undefined() {
        let a = cohort(&[(1.0, 1, 0.0)]);
        let b = cohort(&[(2.0, 1, 0.0)]);
        assert!(matches!(
            logrank_test(&a, &b),
            Err(MetricError::Undefined(_))
        ));
    }

    #[test]
    fn chi_square_critical_point() {
        // canonical 5% critical value for 1 dof
        let p = chi_square_sf(3.841, 1.0);
        assert!((p - 0.05).abs() < 1e-3, "p {p}");
        // sharper value
        let p2 = chi_square_sf(3.841458820694124, 1.0);
        assert!((p2 - 0.05).abs() < 1e-9, "p {p2}");
        // other tabulated points: 1 dof 1% = 6.635, 2 dof 5% = 5.991
        assert!((chi_square_sf(6.634896601021213, 1.0) - 0.01).abs() < 1e-9);
        assert!((chi_square_sf(5.991464547107979, 2.0) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn median_split_examples() {
        let preds = cohort(&[(1.0, 0, 1.0), (2.0, 0, 2.0), (3.0, 0, 3.0), (4.0, 0, 4.0)]);
        let (low, high) = median_split(&preds).unwrap();
        let lows: Vec<f64> = low.cases.iter().map(|c| c.risk).collect();
        let highs: Vec<f64> = high.cases.iter().map(|c| c.risk).collect();
        assert_eq!(lows, vec![1.0, 2.0]);
        assert_eq!(highs, vec![3.0, 4.0]);

        let odd = cohort(&[(1.0, 0, 1.0), (2.0, 0, 2.0), (3.0, 0, 3.0)]);
        let (low, high) = median_split(&odd).unwrap();
        assert_eq!(low.len(), 2);
        assert_eq!(high.len(), 1);

        let flat = cohort(&[(1.0, 0, 7.0), (2.0, 0, 7.0), (3.0, 0, 7.0)]);
        let (low, high) = median_split(&flat).unwrap();
        assert_eq!(low.len(), 3);
        assert!(high.is_empty());
    }

    #[test]
    fn km_csv_layout() {
        let preds = cohort(&[(1.0, 0, 0.0), (2.0, 0, 0.0)]);
        let curve = km_estimate(&preds).unwrap();
        let mut buf = Vec::new();
        write_km_csv(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "time,survival,at_risk,events");
        assert_eq!(lines.next().unwrap(), "1,0.5,2,1");
    }
}
