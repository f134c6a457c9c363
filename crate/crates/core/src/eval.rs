//! Classification and retrieval metrics, plus latency benchmarking.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cbr::CbrEngine;
use crate::code::HashFunction;
use crate::data::{CaseId, Label, SparseCase};
use crate::error::{Error, Result};
use crate::index::{linear_scan, retrieve_timed, HashIndex, RetrieveOptions};

pub fn accuracy(preds: &[Label], truths: &[Label]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: preds.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set"));
    }
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Rank-sum AUC: `P[score(pos) > score(neg)] + P[tie] / 2`.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            expected: positive.len(),
            actual: scores.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // doubled ranks keep tied averages integral
    let mut pos_rank2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if positive[k] {
                pos_rank2 += rank2;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let u2 = pos_rank2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// Mean over class pairs `i < j` (both present) of `(A_ij + A_ji) / 2`,
/// where `A_ij` is the binary AUC on classes `i` and `j` with class-`i`
/// scores and class `i` positive.
pub fn auc_multiclass(scores: &[Vec<f64>], truths: &[Label]) -> Result<f64> {
    if scores.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: scores.len(),
        });
    }
    let mut present: Vec<Label> = truths.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::UndefinedMetric("multiclass AUC needs two classes"));
    }
    let width = scores.iter().map(Vec::len).min().unwrap_or(0);
    if let Some(&max) = present.last() {
        if max as usize >= width {
            return Err(Error::DimensionMismatch {
                expected: max as usize + 1,
                actual: width,
            });
        }
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &ci) in present.iter().enumerate() {
        for &cj in &present[a + 1..] {
            let rows: Vec<usize> = (0..truths.len()).filter(|&k| truths[k] == ci || truths[k] == cj).collect();
            let pos_i: Vec<bool> = rows.iter().map(|&k| truths[k] == ci).collect();
            let pos_j: Vec<bool> = pos_i.iter().map(|p| !p).collect();
            let s_i: Vec<f64> = rows.iter().map(|&k| scores[k][ci as usize]).collect();
            let s_j: Vec<f64> = rows.iter().map(|&k| scores[k][cj as usize]).collect();
            total += (auc_binary(&s_i, &pos_i)? + auc_binary(&s_j, &pos_j)?) / 2.0;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// `|R ∩ top_N| / N`; the divisor stays `N` when fewer are retrieved.
pub fn prec_at_n(retrieved: &[CaseId], relevant: &HashSet<CaseId>, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let hits = retrieved.iter().take(n).filter(|id| relevant.contains(id)).count();
    Ok(hits as f64 / n as f64)
}

/// AP@N, or `None` when the relevant set is empty.
pub fn average_precision(retrieved: &[CaseId], relevant: &HashSet<CaseId>, n: usize) -> Result<Option<f64>> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if relevant.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in retrieved.iter().take(n).enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(Some(sum / relevant.len().min(n) as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    pub evaluated: usize,
    /// Queries with an empty relevant set.
    pub skipped: usize,
}

pub fn map_at_n(queries: &[(Vec<CaseId>, HashSet<CaseId>)], n: usize) -> Result<MapResult> {
    let mut out = MapResult::default();
    let mut sum = 0.0;
    for (retrieved, relevant) in queries {
        match average_precision(retrieved, relevant, n)? {
            Some(ap) => {
                sum += ap;
                out.evaluated += 1;
            }
            None => out.skipped += 1,
        }
    }
    if out.evaluated > 0 {
        out.map = sum / out.evaluated as f64;
    }
    Ok(out)
}

/// Microsecond latency summary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles over the samples.
    pub fn from_us(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pct = |p: f64| sorted[((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        LatencyStats {
            count: sorted.len(),
            mean_us: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50_us: pct(0.5),
            p95_us: pct(0.95),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    pub accuracy: f64,
    /// `None` when fewer than two classes occur among the queries.
    pub auc: Option<f64>,
    pub prec_at: BTreeMap<usize, f64>,
    pub map_at: BTreeMap<usize, f64>,
    pub map_skipped: usize,
    /// Queries with no prediction (empty retrieval).
    pub unanswered: usize,
    pub mean_candidates: f64,
    pub latency: LatencyStats,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["queries", "accuracy", "auc"].into_iter().map(String::from).collect::<Vec<_>>();
        cols.extend(self.prec_at.keys().map(|n| format!("prec@{n}")));
        cols.extend(self.map_at.keys().map(|n| format!("map@{n}")));
        cols.extend(
            ["map_skipped", "unanswered", "mean_candidates", "latency_mean_us", "latency_p50_us", "latency_p95_us"]
                .map(String::from),
        );
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.queries.to_string(),
            self.accuracy.to_string(),
            self.auc.map_or(String::new(), |a| a.to_string()),
        ];
        cols.extend(self.prec_at.values().map(f64::to_string));
        cols.extend(self.map_at.values().map(f64::to_string));
        cols.extend([
            self.map_skipped.to_string(),
            self.unanswered.to_string(),
            self.mean_candidates.to_string(),
            self.latency.mean_us.to_string(),
            self.latency.p50_us.to_string(),
            self.latency.p95_us.to_string(),
        ]);
        cols.join(",")
    }

    /// Field-wise mean of several reports (fold averaging). AUC is averaged
    /// over the reports that define it.
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        if reports.is_empty() {
            return MetricReport::default();
        }
        let k = reports.len() as f64;
        let avg = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        let aucs: Vec<f64> = reports.iter().filter_map(|r| r.auc).collect();
        let keyed = |get: &dyn Fn(&MetricReport) -> &BTreeMap<usize, f64>| {
            let mut out = BTreeMap::new();
            for &n in get(&reports[0]).keys() {
                out.insert(n, reports.iter().map(|r| get(r).get(&n).copied().unwrap_or(0.0)).sum::<f64>() / k);
            }
            out
        };
        MetricReport {
            queries: reports.iter().map(|r| r.queries).sum(),
            accuracy: avg(&|r| r.accuracy),
            auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            prec_at: keyed(&|r| &r.prec_at),
            map_at: keyed(&|r| &r.map_at),
            map_skipped: reports.iter().map(|r| r.map_skipped).sum(),
            unanswered: reports.iter().map(|r| r.unanswered).sum(),
            mean_candidates: avg(&|r| r.mean_candidates),
            latency: LatencyStats {
                count: reports.iter().map(|r| r.latency.count).sum(),
                mean_us: avg(&|r| r.latency.mean_us),
                p50_us: avg(&|r| r.latency.p50_us),
                p95_us: avg(&|r| r.latency.p95_us),
            },
        }
    }
}

/// Runs every query through the engine without retaining and scores the
/// suggestions. Relevance for Prec@N / MAP@N is label agreement with the
/// stored cases; `ns` lists the cutoffs to report.
pub fn evaluate(engine: &CbrEngine, queries: &[SparseCase], num_labels: usize, ns: &[usize]) -> Result<MetricReport> {
    let depth = ns.iter().copied().max().unwrap_or(0).max(engine.config().hyper.top_n);
    let mut by_label: HashMap<Label, HashSet<CaseId>> = HashMap::new();
    for c in engine.index().cases() {
        by_label.entry(c.label).or_default().insert(c.id);
    }
    let empty = HashSet::new();

    let mut preds = Vec::with_capacity(queries.len());
    let mut truths = Vec::with_capacity(queries.len());
    let mut class_scores = Vec::with_capacity(queries.len());
    let mut ranked = Vec::with_capacity(queries.len());
    let mut latencies = Vec::with_capacity(queries.len());
    let mut candidates = 0usize;
    let mut unanswered = 0usize;
    for q in queries {
        let s = engine.suggest_with(&q.features, depth)?;
        latencies.push(s.timings.total_ns() as f64 / 1e3);
        candidates += s.retrieval.candidates;
        match s.predicted {
            Some(p) => preds.push(p),
            None => {
                unanswered += 1;
                preds.push(Label::MAX);
            }
        }
        truths.push(q.label);
        class_scores.push(s.class_scores(num_labels));
        ranked.push(s.retrieval.neighbors.iter().map(|n| n.id).collect::<Vec<_>>());
    }

    let mut report = MetricReport {
        queries: queries.len(),
        unanswered,
        latency: LatencyStats::from_us(&latencies),
        ..Default::default()
    };
    if queries.is_empty() {
        return Ok(report);
    }
    report.accuracy = accuracy(&preds, &truths)?;
    report.mean_candidates = candidates as f64 / queries.len() as f64;
    report.auc = match num_labels {
        0 | 1 => None,
        2 => {
            let pos: Vec<bool> = truths.iter().map(|&t| t == 1).collect();
            let s: Vec<f64> = class_scores.iter().map(|c| c[1]).collect();
            auc_binary(&s, &pos).ok()
        }
        _ => auc_multiclass(&class_scores, &truths).ok(),
    };
    for &n in ns {
        let mut prec = 0.0;
        let mut per_query = Vec::with_capacity(queries.len());
        for (ids, &t) in ranked.iter().zip(&truths) {
            let rel = by_label.get(&t).unwrap_or(&empty);
            prec += prec_at_n(ids, rel, n)?;
            per_query.push((ids.clone(), rel.clone()));
        }
        report.prec_at.insert(n, prec / queries.len() as f64);
        let m = map_at_n(&per_query, n)?;
        report.map_at.insert(n, m.map);
        report.map_skipped = m.skipped;
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub cases: usize,
    pub queries: usize,
    pub repetitions: usize,
    pub hash: LatencyStats,
    pub lookup: LatencyStats,
    pub rerank: LatencyStats,
    pub hashed_total: LatencyStats,
    pub linear_scan: LatencyStats,
    pub mean_candidates: f64,
    /// Mean hashed latency over mean linear-scan latency.
    pub ratio: Option<f64>,
}

/// Times hashed retrieval phase by phase against an exact linear scan over
/// the same queries. Each query is run `repetitions` times per method.
pub fn bench<H: HashFunction + ?Sized>(
    index: &HashIndex,
    hasher: &H,
    queries: &[SparseCase],
    opts: &RetrieveOptions,
    repetitions: usize,
) -> Result<BenchReport> {
    let mut report = BenchReport {
        cases: index.len(),
        queries: queries.len(),
        repetitions,
        ..Default::default()
    };
    if queries.is_empty() || repetitions == 0 {
        return Ok(report);
    }
    let (mut hash, mut lookup, mut rerank, mut total, mut scan) = (vec![], vec![], vec![], vec![], vec![]);
    let mut candidates = 0usize;
    for _ in 0..repetitions {
        for q in queries {
            let (res, t) = retrieve_timed(index, &q.features, hasher, opts)?;
            candidates += res.candidates;
            hash.push(t.hash_ns as f64 / 1e3);
            lookup.push(t.lookup_ns as f64 / 1e3);
            rerank.push(t.rerank_ns as f64 / 1e3);
            total.push(t.total_ns() as f64 / 1e3);
            let start = Instant::now();
            std::hint::black_box(linear_scan(index, &q.features, opts.top_n)?);
            scan.push(start.elapsed().as_secs_f64() * 1e6);
        }
    }
    report.hash = LatencyStats::from_us(&hash);
    report.lookup = LatencyStats::from_us(&lookup);
    report.rerank = LatencyStats::from_us(&rerank);
    report.hashed_total = LatencyStats::from_us(&total);
    report.linear_scan = LatencyStats::from_us(&scan);
    report.mean_candidates = candidates as f64 / total.len() as f64;
    if report.linear_scan.mean_us > 0.0 {
        report.ratio = Some(report.hashed_total.mean_us / report.linear_scan.mean_us);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[u64]) -> Vec<CaseId> {
        v.to_vec()
    }

    fn set(v: &[u64]) -> HashSet<CaseId> {
        v.iter().copied().collect()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1], &[0, 0]).unwrap(), 0.5);
        assert!(accuracy(&[0], &[0, 1]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_binary(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc_binary(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(auc_binary(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn multiclass_examples() {
        let truths = [0, 1, 2, 1, 0];
        let onehot: Vec<Vec<f64>> = truths
            .iter()
            .map(|&t| (0..3).map(|c| f64::from(u8::from(c == t))).collect())
            .collect();
        assert_eq!(auc_multiclass(&onehot, &truths).unwrap(), 1.0);

        let scores = vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.6, 0.4], vec![0.2, 0.8]];
        let truths = [0, 1, 1, 0];
        let pos0 = [true, false, false, true];
        let a01 = auc_binary(&[0.9, 0.3, 0.6, 0.2], &pos0).unwrap();
        let a10 = auc_binary(&[0.1, 0.7, 0.4, 0.8], &pos0.map(|p| !p)).unwrap();
        assert_eq!(auc_multiclass(&scores, &truths).unwrap(), (a01 + a10) / 2.0);
        assert!(auc_multiclass(&scores[..1], &truths[..1]).is_err());
    }

    #[test]
    fn precision_examples() {
        let r = ids(&[1, 2, 3, 4, 5]);
        assert_eq!(prec_at_n(&r, &set(&[1, 3, 5, 9]), 5).unwrap(), 0.6);
        assert_eq!(prec_at_n(&r, &set(&[7]), 5).unwrap(), 0.0);
        assert_eq!(prec_at_n(&ids(&[1, 2]), &set(&[1, 2]), 4).unwrap(), 0.5);
    }

    #[test]
    fn map_examples() {
        let ap = average_precision(&ids(&[1, 2, 3]), &set(&[1, 3]), 3).unwrap().unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        let all = average_precision(&ids(&[1, 2, 3]), &set(&[1, 2, 3, 4]), 3).unwrap().unwrap();
        assert_eq!(all, 1.0);
        let none = average_precision(&ids(&[1, 2, 3]), &set(&[9]), 3).unwrap().unwrap();
        assert_eq!(none, 0.0);
        let m = map_at_n(&[(ids(&[1]), set(&[1])), (ids(&[2]), set(&[]))], 1).unwrap();
        assert_eq!(m.map, 1.0);
        assert_eq!((m.evaluated, m.skipped), (1, 1));
    }

    #[test]
    fn latency_stats() {
        assert_eq!(LatencyStats::from_us(&[]), LatencyStats::default());
        let s = LatencyStats::from_us(&(1..=100).map(f64::from).collect::<Vec<_>>());
        assert_eq!(s.p50_us, 50.0);
        assert_eq!(s.p95_us, 95.0);
        assert_eq!(s.mean_us, 50.5);
    }

    #[test]
    fn report_serializes() {
        let mut r = MetricReport {
            queries: 3,
            accuracy: 0.5,
            auc: Some(0.75),
            ..Default::default()
        };
        r.prec_at.insert(10, 0.4);
        r.map_at.insert(10, 0.3);
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.csv_header().split(',').count(), r.csv_row().split(',').count());
        let m = MetricReport::mean(&[r.clone(), r.clone()]);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.prec_at[&10], 0.4);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            data in proptest::collection::vec((-3.0f64..3.0, any::<bool>()), 2..60)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| (d.0 * 4.0).round() / 4.0).collect();
            let pos: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
            let a = auc_binary(&scores, &pos).unwrap();
            let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(a, auc_binary(&warped, &pos).unwrap());
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn map_order_invariant_and_bounded(
            qs in proptest::collection::vec(
                (proptest::collection::vec(0u64..30, 0..12), proptest::collection::hash_set(0u64..30, 0..10)),
                1..20,
            ),
            n in 1usize..12,
        ) {
            let qs: Vec<(Vec<CaseId>, HashSet<CaseId>)> = qs
                .into_iter()
                .map(|(mut r, s)| { r.sort_unstable(); r.dedup(); (r, s) })
                .collect();
            let a = map_at_n(&qs, n).unwrap();
            let mut rev = qs.clone();
            rev.reverse();
            let b = map_at_n(&rev, n).unwrap();
            prop_assert!((a.map - b.map).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.map));
            for (r, s) in &qs {
                let p = prec_at_n(r, s, n).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}
