//! R@n, IoU≥m evaluation and reference predictors.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ExampleRecord;
use crate::error::{Result, TensorError};
use crate::model::{InferConfig, Model};
use crate::scalar::Scalar;
use crate::segment::{temporal_iou, Segment};
use crate::sl::topk_frames;

pub const DEFAULT_N: [usize; 2] = [1, 5];
pub const DEFAULT_M: [f64; 2] = [0.5, 0.7];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n: usize,
    pub m: f64,
    /// Percentage in `[0, 100]`.
    pub recall: f64,
}

/// Recall percentages keyed by `(n, m)`, ordered by `n` then `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
    pub examples: usize,
}

impl MetricsTable {
    pub fn get(&self, n: usize, m: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n && r.m == m).map(|r| r.recall)
    }

    /// `R@n` must not drop as `n` grows nor rise as `m` grows.
    pub fn check_monotone(&self) -> Result<()> {
        for a in &self.rows {
            for b in &self.rows {
                let violated = (a.m == b.m && a.n < b.n && a.recall > b.recall)
                    || (a.n == b.n && a.m < b.m && a.recall < b.recall);
                if violated {
                    return Err(TensorError::Contract(format!(
                        "metrics not monotone: R@{},{} = {} vs R@{},{} = {}",
                        a.n, a.m, a.recall, b.n, b.m, b.recall
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,m,recall\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.n, r.m, fmt_recall(r.recall));
        }
        out
    }

    /// Aligned plain-text table, one line per `n` and one column per `m`.
    pub fn to_text(&self) -> String {
        let mut ns: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        ns.dedup();
        let mut ms: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !ms.contains(&r.m) {
                ms.push(r.m);
            }
        }
        let mut out = format!("{:<6}", "");
        for m in &ms {
            let _ = write!(out, "{:>12}", format!("IoU={m}"));
        }
        out.push('\n');
        for n in ns {
            let _ = write!(out, "{:<6}", format!("R@{n}"));
            for &m in &ms {
                let cell = self.get(n, m).map(fmt_recall).unwrap_or_else(|| "-".into());
                let _ = write!(out, "{cell:>12}");
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_recall(x: f64) -> String {
    format!("{x:.4}")
}

fn validate_lists(n_list: &[usize], m_list: &[f64]) -> Result<()> {
    if n_list.is_empty() || m_list.is_empty() || n_list.contains(&0) {
        return Err(TensorError::Contract("n and m lists must be non-empty with n ≥ 1".into()));
    }
    if m_list.iter().any(|m| !(0.0..=1.0).contains(m)) {
        return Err(TensorError::Contract("IoU thresholds must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Recall table from ranked candidate lists. Every list must hold at least
/// `max(n_list)` segments.
pub fn evaluate_predictions(gts: &[Segment], ranked: &[Vec<Segment>], n_list: &[usize], m_list: &[f64]) -> Result<MetricsTable> {
    validate_lists(n_list, m_list)?;
    if gts.len() != ranked.len() || gts.is_empty() {
        return Err(TensorError::Contract(format!(
            "{} ground truths for {} predictions",
            gts.len(),
            ranked.len()
        )));
    }
    let n_max = *n_list.iter().max().expect("non-empty");
    if let Some(short) = ranked.iter().find(|r| r.len() < n_max) {
        return Err(TensorError::Contract(format!(
            "R@{n_max} needs {n_max} candidates, got {}",
            short.len()
        )));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut ms = m_list.to_vec();
    ms.sort_by(f64::total_cmp);
    ms.dedup();
    let mut rows = Vec::with_capacity(ns.len() * ms.len());
    for &n in &ns {
        for &m in &ms {
            let hits = gts
                .iter()
                .zip(ranked)
                .filter(|(gt, cands)| cands[..n].iter().any(|c| temporal_iou(c, gt) >= m))
                .count();
            rows.push(MetricRow {
                n,
                m,
                recall: 100.0 * hits as f64 / gts.len() as f64,
            });
        }
    }
    let table = MetricsTable {
        rows,
        examples: gts.len(),
    };
    table.check_monotone()?;
    Ok(table)
}

/// Runs inference on every example and scores the `K` confidence-ranked segments.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    corpus: &[ExampleRecord],
    n_list: &[usize],
    m_list: &[f64],
    config: &InferConfig,
) -> Result<MetricsTable> {
    if let Some(&n) = n_list.iter().find(|&&n| n > config.k) {
        return Err(TensorError::Contract(format!("R@{n} requested with only K = {} candidates", config.k)));
    }
    let ranked = corpus
        .par_iter()
        .map(|ex| model.infer(ex, config).map(|p| p.ranked_segments()))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<Segment> = corpus.iter().map(|e| e.gt).collect();
    evaluate_predictions(&gts, &ranked, n_list, m_list)
}

/// Skimming-only baseline: each of the top-`k` frames becomes
/// `anchor ± half_width`, clipped to the video, ranked by frame score.
pub fn sl_only_candidates(scores: &[f64], k: usize, half_width: usize) -> Result<Vec<Segment>> {
    let last = scores.len() - 1;
    Ok(topk_frames(scores, k)?
        .into_iter()
        .map(|a| Segment::new(a.saturating_sub(half_width), (a + half_width).min(last)))
        .collect())
}

/// `round(mean((e − s) / 2))` over the ground truths.
pub fn mean_half_width(corpus: &[ExampleRecord]) -> usize {
    if corpus.is_empty() {
        return 0;
    }
    let total: f64 = corpus.iter().map(|e| (e.gt.end - e.gt.start) as f64 / 2.0).sum();
    (total / corpus.len() as f64).round() as usize
}

pub fn evaluate_sl_only<S: Scalar>(
    model: &Model<S>,
    corpus: &[ExampleRecord],
    half_width: usize,
    n_list: &[usize],
    m_list: &[f64],
    k: usize,
) -> Result<MetricsTable> {
    let ranked = corpus
        .par_iter()
        .map(|ex| sl_only_candidates(&model.frame_scores(ex)?, k, half_width))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<Segment> = corpus.iter().map(|e| e.gt).collect();
    evaluate_predictions(&gts, &ranked, n_list, m_list)
}

/// Expected R@1,IoU≥m of a predictor drawing one interval uniformly from all
/// `T(T+1)/2` valid intervals, as a percentage.
pub fn random_baseline(corpus: &[ExampleRecord], m: f64) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let total: f64 = corpus
        .iter()
        .map(|ex| {
            let t = ex.frames();
            let mut hits = 0usize;
            for s in 0..t {
                for e in s..t {
                    if temporal_iou(&Segment::new(s, e), &ex.gt) >= m {
                        hits += 1;
                    }
                }
            }
            hits as f64 / (t * (t + 1) / 2) as f64
        })
        .sum();
    100.0 * total / corpus.len() as f64
}

/// Area under the ROC curve of `scores` against 0/1 `labels`, counting ties as half.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let ranks = average_ranks(scores, &idx);
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return f64::NAN;
    }
    let rank_sum: f64 = labels.iter().zip(&ranks).filter(|(l, _)| **l).map(|(_, r)| r).sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |x: &[f64]| {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        average_ranks(x, &idx)
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// 1-based ranks by `order`, tied values sharing their mean rank.
fn average_ranks(x: &[f64], order: &[usize]) -> Vec<f64> {
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions() {
        let gts = vec![Segment::new(1, 4), Segment::new(0, 0), Segment::new(7, 9)];
        let ranked: Vec<Vec<Segment>> = gts.iter().map(|&g| vec![g; 5]).collect();
        let t = evaluate_predictions(&gts, &ranked, &DEFAULT_N, &DEFAULT_M).unwrap();
        assert!(t.rows.iter().all(|r| r.recall == 100.0));
        assert_eq!(t.rows.len(), 4);
    }

    #[test]
    fn threshold_law() {
        // [0, 5] vs [0, 9] → IoU 0.6
        let t = evaluate_predictions(&[Segment::new(0, 9)], &[vec![Segment::new(0, 5)]], &[1], &[0.5, 0.7]).unwrap();
        assert_eq!(t.get(1, 0.5), Some(100.0));
        assert_eq!(t.get(1, 0.7), Some(0.0));
    }

    #[test]
    fn too_few_candidates() {
        let r = evaluate_predictions(&[Segment::new(0, 1)], &[vec![Segment::new(0, 1)]], &[1, 5], &[0.5]);
        assert!(matches!(r, Err(TensorError::Contract(_))));
    }

    #[test]
    fn csv_and_text_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gts: Vec<Segment> = (0..7).map(|_| Segment::new(rng.random_range(0..5), rng.random_range(5..12))).collect();
        let ranked: Vec<Vec<Segment>> = (0..7)
            .map(|_| (0..5).map(|_| Segment::new(rng.random_range(0..6), rng.random_range(6..12))).collect())
            .collect();
        let t = evaluate_predictions(&gts, &ranked, &[1, 5], &[0.3, 0.5, 0.7]).unwrap();
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 1 + 6);
        let text = t.to_text();
        for line in csv.lines().skip(1) {
            let value = line.rsplit(',').next().unwrap();
            assert!(text.contains(value), "{value} missing from\n{text}");
        }
    }

    #[test]
    fn random_baseline_small_case() {
        // T = 2: intervals [0,0], [1,1], [0,1]; gt [0,1] → IoUs 0.5, 0.5, 1.
        let cfg = crate::config::CorpusConfig {
            frames: 2,
            min_len: 2,
            max_len: 2,
            vocab: 2,
            d_in: 2,
            words: 1,
            ..Default::default()
        };
        let ex = crate::data::generate_example(&cfg, 0).unwrap();
        assert!((random_baseline(&[ex.clone()], 0.5) - 100.0).abs() < 1e-12);
        assert!((random_baseline(&[ex], 0.7) - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sl_only_geometry() {
        let scores = [0.1, 0.2, 0.9, 0.3, 0.8, 0.0];
        let c = sl_only_candidates(&scores, 2, 2).unwrap();
        assert_eq!(c, vec![Segment::new(0, 4), Segment::new(2, 5)]);
    }

    #[test]
    fn rank_statistics() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, true, false, true]), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]), 0.5);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
