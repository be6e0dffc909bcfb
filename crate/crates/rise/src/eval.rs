//! Next-observation evaluation: absolute percentage errors with a
//! minimum-history gate, aggregate and per-time-gap summaries, the
//! forward-fill baseline, and the instance-by-encoder grid runner.

use std::io::Write;

use crate::config::TrainConfig;
use crate::data::{Corpus, Split, TargetQuantizer, XavTable};
use crate::encoders::EncoderKind;
use crate::error::{Result, RiseError};
use crate::rise::{InstanceKind, Objective, RiseModel};
use crate::tensor::Tape;
use crate::train;

/// Absolute percentage error, or `None` when the true value is zero.
pub fn ape(y: f64, yhat: f64) -> Option<f64> {
    if y == 0.0 {
        None
    } else {
        Some(100.0 * (y - yhat).abs() / y.abs())
    }
}

/// Lower median: element at index (n-1)/2 of the sorted values.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted[(sorted.len() - 1) / 2]
}

/// First index achieving the maximum (lowest index wins ties).
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One evaluated prediction target.
#[derive(Debug, Clone)]
pub struct TargetRecord {
    pub series: String,
    pub index: usize,
    /// Normalized time gap at the target step.
    pub delta: f64,
    pub y: f64,
    pub yhat: f64,
    /// `None` when y = 0 (excluded from the aggregates).
    pub ape: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub targets: Vec<TargetRecord>,
    pub mdape: f64,
    pub mape: f64,
    /// Targets entering the aggregates.
    pub n: usize,
    /// Eligible targets excluded because the true value was zero.
    pub n_zero_excluded: usize,
}

/// Aggregates APEs; an empty eligible set yields n = 0 with NaN metrics
/// rather than an error so callers can report it.
fn summarize(targets: Vec<TargetRecord>) -> EvalReport {
    let apes: Vec<f64> = targets.iter().filter_map(|t| t.ape).collect();
    let n_zero_excluded = targets.len() - apes.len();
    let (mdape, mape) = if apes.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (lower_median(&apes), apes.iter().sum::<f64>() / apes.len() as f64)
    };
    EvalReport { mdape, mape, n: apes.len(), n_zero_excluded, targets }
}

/// Visits each observed index with at least `min_prior` earlier observed
/// values. Eligibility never drops below one prior observation, so every
/// target has a defined previous hidden state and a forward-fill value.
fn for_each_target(m: &[bool], min_prior: usize, mut f: impl FnMut(usize) -> Result<()>) -> Result<()> {
    let gate = min_prior.max(1);
    let mut prior = 0usize;
    for (j, &obs) in m.iter().enumerate() {
        if obs {
            if prior >= gate {
                f(j)?;
            }
            prior += 1;
        }
    }
    Ok(())
}

/// Scores the model on one split. One forward pass per series suffices:
/// the prediction for index j reads only the hidden state after step j-1,
/// which depends solely on the prefix.
pub fn evaluate_model(
    model: &RiseModel,
    quantizer: Option<&TargetQuantizer>,
    corpus: &Corpus,
    split: Split,
    xav: &XavTable,
    min_prior: usize,
) -> Result<EvalReport> {
    if model.cfg.objective == Objective::Classification && quantizer.is_none() {
        return Err(RiseError::Contract("classification evaluation needs a quantizer".into()));
    }
    let mut targets = Vec::new();
    for s in corpus.in_split(split) {
        let mut tape = Tape::new();
        let trace = model.forward(&mut tape, &s.data, xav.get(&s.id))?;
        let head = model.head(&mut tape)?;
        for_each_target(&s.data.m, min_prior, |j| {
            let out = model.apply_head(&mut tape, head, trace.top_hidden[j - 1])?;
            let values = &tape.value(out).values;
            let yhat = match quantizer {
                Some(q) => q.representative(argmax_lowest(values)),
                None => values[0],
            };
            let y = s.data.x[j];
            targets.push(TargetRecord {
                series: s.id.clone(),
                index: j,
                delta: trace.delta[j],
                y,
                yhat,
                ape: ape(y, yhat),
            });
            Ok(())
        })?;
    }
    Ok(summarize(targets))
}

/// Forward-fill baseline: predict the most recent observed value. Time gaps
/// are normalized by the split's own lower-median sampling interval.
pub fn evaluate_persistence(corpus: &Corpus, split: Split, min_prior: usize) -> Result<EvalReport> {
    let mut diffs: Vec<f64> = corpus
        .in_split(split)
        .flat_map(|s| s.data.t.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
        .collect();
    let unit = if diffs.is_empty() {
        1.0
    } else {
        diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        diffs[(diffs.len() - 1) / 2]
    };
    let mut targets = Vec::new();
    for s in corpus.in_split(split) {
        let delta = crate::rise::compute_delta(&s.data, unit);
        for_each_target(&s.data.m, min_prior, |j| {
            let last = (0..j).rev().find(|&i| s.data.m[i]).expect("gate implies prior observation");
            let y = s.data.x[j];
            let yhat = s.data.x[last];
            targets.push(TargetRecord {
                series: s.id.clone(),
                index: j,
                delta: delta[j],
                y,
                yhat,
                ape: ape(y, yhat),
            });
            Ok(())
        })?;
    }
    Ok(summarize(targets))
}

#[derive(Debug, Clone)]
pub struct LagBucket {
    /// Rounded normalized time gap.
    pub lag: i64,
    pub n: usize,
    pub mdape: f64,
    pub mape: f64,
}

/// Error breakdown by rounded time gap; bucket counts sum to `report.n`.
pub fn lag_breakdown(report: &EvalReport) -> Vec<LagBucket> {
    let mut buckets: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
    for t in &report.targets {
        if let Some(a) = t.ape {
            buckets.entry(t.delta.round() as i64).or_default().push(a);
        }
    }
    buckets
        .into_iter()
        .map(|(lag, apes)| LagBucket {
            lag,
            n: apes.len(),
            mdape: lower_median(&apes),
            mape: apes.iter().sum::<f64>() / apes.len() as f64,
        })
        .collect()
}

/// One grid cell: the chosen regularization and the resulting scores.
/// `test_mdape` comes from the best-MdAPE checkpoint slot and `test_mape`
/// from the best-MAPE slot. A failed cell carries NaN metrics and the
/// error text.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub instance: String,
    pub encoder: String,
    pub l2: f64,
    pub val_mdape: f64,
    pub test_mdape: f64,
    pub test_mape: f64,
    /// Marks the best encoder (by validation MdAPE) within the instance.
    pub best: bool,
    pub error: Option<String>,
}

/// Trains every instance-encoder combination, selecting the L2 strength on
/// validation MdAPE, and scores the winners on the test split. The corpus
/// must already be split; the quantizer and training statistics are shared
/// across cells. A forward-fill baseline row is appended.
pub fn run_grid(
    corpus: &Corpus,
    tc: &TrainConfig,
    instances: &[InstanceKind],
    encoders: &[EncoderKind],
    mut progress: Option<&mut dyn Write>,
) -> Result<Vec<GridRow>> {
    let stats = corpus.train_stats()?;
    let xav = corpus.x_av_table()?;
    let quantizer = match tc.objective {
        Objective::Classification => {
            Some(TargetQuantizer::fit(&corpus.observed_values(Split::Train), tc.n_classes)?)
        }
        Objective::Regression => None,
    };
    let run_cell = |instance: InstanceKind, encoder: EncoderKind| -> Result<(f64, f64, f64, f64)> {
        let mut cell_best: Option<(f64, f64, train::Fitted)> = None;
        for &lambda in &tc.l2 {
            let mut model = RiseModel::new(tc.rise_config(instance, encoder), &stats, tc.seed)?;
            let fitted =
                train::fit(&mut model, corpus, &xav, quantizer.as_ref(), tc, lambda, None)?;
            let better = match &cell_best {
                None => true,
                Some((best, _, _)) => fitted.best_mdape < *best,
            };
            if better {
                cell_best = Some((fitted.best_mdape, lambda, fitted));
            }
        }
        let (val_mdape, lambda, fitted) = cell_best.expect("l2 list validated nonempty");
        let template = RiseModel::new(tc.rise_config(instance, encoder), &stats, tc.seed)?;
        let mdape_model = RiseModel { store: fitted.best_mdape_params, ..template.clone() };
        let mape_model = RiseModel { store: fitted.best_mape_params, ..template };
        let test_md = evaluate_model(
            &mdape_model,
            quantizer.as_ref(),
            corpus,
            Split::Test,
            &xav,
            tc.min_prior,
        )?;
        let test_ma = evaluate_model(
            &mape_model,
            quantizer.as_ref(),
            corpus,
            Split::Test,
            &xav,
            tc.min_prior,
        )?;
        Ok((val_mdape, lambda, test_md.mdape, test_ma.mape))
    };
    let mut rows = Vec::new();
    for &instance in instances {
        let start = rows.len();
        for &encoder in encoders {
            let row = match run_cell(instance, encoder) {
                Ok((val_mdape, lambda, test_mdape, test_mape)) => GridRow {
                    instance: instance.to_string(),
                    encoder: encoder.to_string(),
                    l2: lambda,
                    val_mdape,
                    test_mdape,
                    test_mape,
                    best: false,
                    error: None,
                },
                // a failed cell is recorded; the grid continues
                Err(e) => GridRow {
                    instance: instance.to_string(),
                    encoder: encoder.to_string(),
                    l2: f64::NAN,
                    val_mdape: f64::NAN,
                    test_mdape: f64::NAN,
                    test_mape: f64::NAN,
                    best: false,
                    error: Some(e.to_string()),
                },
            };
            if let Some(p) = progress.as_deref_mut() {
                match &row.error {
                    None => writeln!(
                        p,
                        "{instance}\t{encoder}\tl2={}\tval_mdape={:.4}\ttest_mdape={:.4}",
                        row.l2, row.val_mdape, row.test_mdape
                    )?,
                    Some(e) => writeln!(p, "{instance}\t{encoder}\tfailed: {e}")?,
                }
            }
            rows.push(row);
        }
        let best_idx = (start..rows.len())
            .filter(|&i| !rows[i].val_mdape.is_nan())
            .min_by(|&a, &b| rows[a].val_mdape.partial_cmp(&rows[b].val_mdape).unwrap());
        if let Some(i) = best_idx {
            rows[i].best = true;
        }
    }
    let base_val = evaluate_persistence(corpus, Split::Validation, tc.min_prior)?;
    let base_test = evaluate_persistence(corpus, Split::Test, tc.min_prior)?;
    rows.push(GridRow {
        instance: "persistence".into(),
        encoder: "-".into(),
        l2: 0.0,
        val_mdape: base_val.mdape,
        test_mdape: base_test.mdape,
        test_mape: base_test.mape,
        best: false,
        error: None,
    });
    Ok(rows)
}

pub fn write_grid_csv(rows: &[GridRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "instance", "encoder", "l2", "val_mdape", "test_mdape", "test_mape", "best", "error",
    ])?;
    for r in rows {
        w.write_record([
            r.instance.as_str(),
            r.encoder.as_str(),
            &format!("{}", r.l2),
            &format!("{:.4}", r.val_mdape),
            &format!("{:.4}", r.test_mdape),
            &format!("{:.4}", r.test_mape),
            if r.best { "1" } else { "0" },
            r.error.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CorpusSeries;
    use crate::encoders::EncoderSpec;
    use crate::rise::{MaskedSeries, RiseConfig, TrainStats};

    #[test]
    fn ape_basics() {
        assert_eq!(ape(100.0, 90.0), Some(10.0));
        assert_eq!(ape(-50.0, -60.0), Some(20.0));
        assert_eq!(ape(0.0, 5.0), None);
    }

    #[test]
    fn lower_median_even_count() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&[5.0]), 5.0);
        assert_eq!(lower_median(&[2.0, 1.0, 3.0]), 2.0);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[7.0]), 0);
    }

    fn corpus_of(series: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)>, split: Split) -> Corpus {
        Corpus {
            series: series
                .into_iter()
                .enumerate()
                .map(|(i, (t, x, m))| CorpusSeries {
                    id: format!("s{i}"),
                    data: MaskedSeries::new(t, x, m).unwrap(),
                    split: Some(split),
                    truth: None,
                })
                .collect(),
        }
    }

    fn tiny_model(min_classes: usize) -> (RiseModel, TargetQuantizer) {
        let stats = TrainStats {
            x_values: (1..=40).map(|v| v as f64).collect(),
            delta_values: (0..40).map(|v| (v % 5) as f64).collect(),
            delta_unit: 1.0,
        };
        let cfg = RiseConfig {
            instance: InstanceKind::ZeroFillingIndicators,
            encoder: EncoderSpec {
                kind: EncoderKind::Feedforward,
                d: 4,
                d_d: 3,
                n_bin: 4,
                precision: 1,
            },
            d_h: 5,
            n_layers: 1,
            n_classes: min_classes,
            objective: Objective::Classification,
        };
        let model = RiseModel::new(cfg, &stats, 3).unwrap();
        let q = TargetQuantizer::fit(&stats.x_values, min_classes).unwrap();
        (model, q)
    }

    #[test]
    fn gate_arithmetic_ten_and_eleven_observations() {
        let (model, q) = tiny_model(4);
        let xav = XavTable::from_entries(vec![], 5.0);
        for (len, expect) in [(10usize, 0usize), (11, 1), (12, 2)] {
            let corpus = corpus_of(
                vec![(
                    (0..len).map(|i| i as f64).collect(),
                    (0..len).map(|i| (i + 1) as f64).collect(),
                    vec![true; len],
                )],
                Split::Test,
            );
            let report = evaluate_model(&model, Some(&q), &corpus, Split::Test, &xav, 10).unwrap();
            assert_eq!(report.n, expect, "len {len}");
            if expect == 0 {
                assert!(report.mdape.is_nan(), "undefined metrics must be flagged");
            }
        }
    }

    #[test]
    fn unobserved_positions_are_never_targets() {
        let (model, q) = tiny_model(4);
        let xav = XavTable::from_entries(vec![], 5.0);
        let len = 14;
        let mut m = vec![true; len];
        m[12] = false; // would have been eligible
        let corpus = corpus_of(
            vec![(
                (0..len).map(|i| i as f64).collect(),
                (0..len).map(|i| ((i % 7) + 1) as f64).collect(),
                m,
            )],
            Split::Test,
        );
        let report = evaluate_model(&model, Some(&q), &corpus, Split::Test, &xav, 10).unwrap();
        // eligible: 10, 11, 13 observed with >= 10 prior observations
        // (index 13 has 12 prior observed)
        assert_eq!(report.n, 3);
        assert!(report.targets.iter().all(|t| t.index != 12));
    }

    #[test]
    fn zero_truth_excluded_but_counted() {
        let corpus = corpus_of(
            vec![(
                vec![0.0, 1.0, 2.0],
                vec![5.0, 0.0, 6.0],
                vec![true, true, true],
            )],
            Split::Test,
        );
        let report = evaluate_persistence(&corpus, Split::Test, 1).unwrap();
        assert_eq!(report.n, 1);
        assert_eq!(report.n_zero_excluded, 1);
    }

    #[test]
    fn persistence_on_hand_series() {
        let corpus = corpus_of(
            vec![(
                vec![0.0, 1.0, 2.0, 3.0],
                vec![100.0, 0.0, 80.0, 120.0],
                vec![true, false, true, true],
            )],
            Split::Test,
        );
        let report = evaluate_persistence(&corpus, Split::Test, 1).unwrap();
        // targets: index 2 (yhat 100, ape 25) and index 3 (yhat 80, ape 100/3)
        assert_eq!(report.n, 2);
        assert!((report.mdape - 25.0).abs() < 1e-12);
        assert!((report.mape - (25.0 + 100.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn prediction_matches_prefix_rerun() {
        // honesty: the score for index j must equal what a model that only
        // ever saw the prefix would predict
        let (model, q) = tiny_model(4);
        let xav = XavTable::from_entries(vec![], 5.0);
        let len = 14;
        let t: Vec<f64> = (0..len).map(|i| i as f64 * 1.5).collect();
        let x: Vec<f64> = (0..len).map(|i| ((i * 3) % 11 + 1) as f64).collect();
        let m: Vec<bool> = (0..len).map(|i| i % 5 != 3).collect();
        let corpus = corpus_of(vec![(t.clone(), x.clone(), m.clone())], Split::Test);
        let report = evaluate_model(&model, Some(&q), &corpus, Split::Test, &xav, 10).unwrap();
        for target in &report.targets {
            let j = target.index;
            let prefix = MaskedSeries::new(t[..j].to_vec(), x[..j].to_vec(), m[..j].to_vec()).unwrap();
            let mut tape = Tape::new();
            let trace = model.forward(&mut tape, &prefix, xav.get("s0")).unwrap();
            let head = model.head(&mut tape).unwrap();
            let out = model
                .apply_head(&mut tape, head, *trace.top_hidden.last().unwrap())
                .unwrap();
            let yhat = q.representative(argmax_lowest(&tape.value(out).values));
            assert_eq!(target.yhat, yhat, "index {j}");
        }
    }

    #[test]
    fn lag_buckets_sum_to_n() {
        let corpus = corpus_of(
            vec![(
                vec![0.0, 1.0, 2.0, 4.0, 5.0, 8.0],
                vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                vec![true, true, false, true, true, true],
            )],
            Split::Test,
        );
        let report = evaluate_persistence(&corpus, Split::Test, 1).unwrap();
        let buckets = lag_breakdown(&report);
        let total: usize = buckets.iter().map(|b| b.n).sum();
        assert_eq!(total, report.n);
        // gap at index 3 spans the missing step: delta = 3
        assert!(buckets.iter().any(|b| b.lag == 3));
    }

    #[test]
    fn report_aggregates_match_targets() {
        let corpus = corpus_of(
            vec![
                (
                    vec![0.0, 1.0, 2.0, 3.0],
                    vec![10.0, 20.0, 10.0, 20.0],
                    vec![true; 4],
                ),
                (
                    vec![0.0, 1.0, 2.0],
                    vec![50.0, 40.0, 50.0],
                    vec![true; 3],
                ),
            ],
            Split::Test,
        );
        let report = evaluate_persistence(&corpus, Split::Test, 1).unwrap();
        let apes: Vec<f64> = report.targets.iter().filter_map(|t| t.ape).collect();
        assert_eq!(apes.len(), report.n);
        assert_eq!(report.mape, apes.iter().sum::<f64>() / apes.len() as f64);
        assert_eq!(report.mdape, lower_median(&apes));
    }
}
