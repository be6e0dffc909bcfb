//! Corpus ingestion, synthetic-series generation with controllable
//! missingness, train/validation/test splits, and target discretization
//! for the multi-class formulation.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::SplitPolicy;
use crate::encoders::{bin_index, fit_quantile_bins};
use crate::error::{Result, RiseError};
use crate::rise::{compute_delta, MaskedSeries, TrainStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone)]
pub struct CorpusSeries {
    pub id: String,
    pub data: MaskedSeries,
    pub split: Option<Split>,
    /// Synthetic corpora retain the complete signal here; never exposed
    /// through `data`.
    pub truth: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub series: Vec<CorpusSeries>,
}

impl Corpus {
    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &CorpusSeries> {
        self.series.iter().filter(move |s| s.split == Some(split))
    }

    /// All observed values in a split.
    pub fn observed_values(&self, split: Split) -> Vec<f64> {
        let mut out = Vec::new();
        for s in self.in_split(split) {
            for (i, &obs) in s.data.m.iter().enumerate() {
                if obs {
                    out.push(s.data.x[i]);
                }
            }
        }
        out
    }

    /// Lower median of consecutive sampling intervals in the training split.
    pub fn median_interval(&self) -> Result<f64> {
        let mut diffs = Vec::new();
        for s in self.in_split(Split::Train) {
            diffs.extend(s.data.t.windows(2).map(|w| w[1] - w[0]));
        }
        if diffs.is_empty() {
            return Err(RiseError::Config(
                "training split has no consecutive timestamps".into(),
            ));
        }
        diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(diffs[(diffs.len() - 1) / 2])
    }

    /// Per-series mean of observed training values, with the global training
    /// mean as fallback for series absent from the training split.
    pub fn x_av_table(&self) -> Result<XavTable> {
        let mut per_series = HashMap::new();
        let mut total = 0.0;
        let mut count = 0usize;
        for s in self.in_split(Split::Train) {
            let mut sum = 0.0;
            let mut n = 0usize;
            for (i, &obs) in s.data.m.iter().enumerate() {
                if obs {
                    sum += s.data.x[i];
                    n += 1;
                }
            }
            total += sum;
            count += n;
            if n > 0 {
                let slot = per_series.entry(s.id.clone()).or_insert((0.0, 0usize));
                slot.0 += sum;
                slot.1 += n;
            }
        }
        if count == 0 {
            return Err(RiseError::Config("training split has no observed values".into()));
        }
        Ok(XavTable {
            per_series: per_series
                .into_iter()
                .map(|(id, (sum, n))| (id, sum / n as f64))
                .collect(),
            global: total / count as f64,
        })
    }

    /// Training-split statistics the model derives its data-dependent
    /// state from (bin edges, digit vocabulary, time normalization).
    pub fn train_stats(&self) -> Result<TrainStats> {
        let delta_unit = self.median_interval()?;
        let x_values = self.observed_values(Split::Train);
        if x_values.is_empty() {
            return Err(RiseError::Config("training split has no observed values".into()));
        }
        let mut delta_values = Vec::new();
        for s in self.in_split(Split::Train) {
            delta_values.extend(compute_delta(&s.data, delta_unit));
        }
        Ok(TrainStats { x_values, delta_values, delta_unit })
    }

    /// Assigns split labels; deterministic, disjoint, exhaustive.
    pub fn split(&mut self, policy: SplitPolicy, train_frac: f64, val_frac: f64) -> Result<()> {
        match policy {
            SplitPolicy::BySeries => {
                let n = self.series.len();
                let n_train = (n as f64 * train_frac).floor() as usize;
                let n_val = (n as f64 * val_frac).floor() as usize;
                if n_train == 0 || n_val == 0 || n_train + n_val >= n {
                    return Err(RiseError::Config(format!(
                        "by-series split of {n} series gives {n_train}/{n_val}/{} — every split must be nonempty",
                        n.saturating_sub(n_train + n_val)
                    )));
                }
                for (i, s) in self.series.iter_mut().enumerate() {
                    s.split = Some(if i < n_train {
                        Split::Train
                    } else if i < n_train + n_val {
                        Split::Validation
                    } else {
                        Split::Test
                    });
                }
                Ok(())
            }
            SplitPolicy::ByTime => {
                let mut out = Vec::new();
                for s in &self.series {
                    let t0 = s.data.t[0];
                    let t_end = *s.data.t.last().unwrap();
                    let span = t_end - t0;
                    let cut1 = t0 + train_frac * span;
                    let cut2 = t0 + (train_frac + val_frac) * span;
                    for (split, lo, hi) in [
                        (Split::Train, f64::NEG_INFINITY, cut1),
                        (Split::Validation, cut1, cut2),
                        (Split::Test, cut2, f64::INFINITY),
                    ] {
                        let idx: Vec<usize> = (0..s.data.len())
                            .filter(|&i| s.data.t[i] > lo && s.data.t[i] <= hi)
                            .collect();
                        if idx.iter().all(|&i| !s.data.m[i]) {
                            continue; // segment without observations is unusable
                        }
                        let seg = MaskedSeries::new(
                            idx.iter().map(|&i| s.data.t[i]).collect(),
                            idx.iter().map(|&i| s.data.x[i]).collect(),
                            idx.iter().map(|&i| s.data.m[i]).collect(),
                        )?;
                        out.push(CorpusSeries {
                            id: s.id.clone(),
                            data: seg,
                            split: Some(split),
                            truth: s
                                .truth
                                .as_ref()
                                .map(|tr| idx.iter().map(|&i| tr[i]).collect()),
                        });
                    }
                }
                for split in [Split::Train, Split::Validation, Split::Test] {
                    if !out.iter().any(|s| s.split == Some(split)) {
                        return Err(RiseError::Config(format!(
                            "by-time split leaves {split:?} empty"
                        )));
                    }
                }
                self.series = out;
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct XavTable {
    per_series: HashMap<String, f64>,
    pub global: f64,
}

impl XavTable {
    pub fn get(&self, series_id: &str) -> f64 {
        *self.per_series.get(series_id).unwrap_or(&self.global)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.per_series.iter()
    }

    pub fn from_entries(entries: Vec<(String, f64)>, global: f64) -> Self {
        XavTable { per_series: entries.into_iter().collect(), global }
    }
}

/// Value-to-class mapping for the multi-class formulation: quantile class
/// edges plus a per-class representative (the lower median of the training
/// values falling in the class).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetQuantizer {
    pub edges: Vec<f64>,
    pub representatives: Vec<f64>,
}

impl TargetQuantizer {
    pub fn fit(train_values: &[f64], n_classes: usize) -> Result<Self> {
        let edges = fit_quantile_bins(train_values, n_classes)?;
        let mut sorted = train_values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_classes];
        for &v in &sorted {
            buckets[bin_index(&edges, v)].push(v);
        }
        let representatives = buckets
            .iter()
            .map(|b| {
                // buckets stay sorted; lower median
                b[(b.len() - 1) / 2]
            })
            .collect();
        Ok(TargetQuantizer { edges, representatives })
    }

    pub fn n_classes(&self) -> usize {
        self.representatives.len()
    }

    pub fn classify(&self, v: f64) -> usize {
        bin_index(&self.edges, v)
    }

    pub fn representative(&self, class: usize) -> f64 {
        self.representatives[class]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Missingness {
    /// Each position masked independently with this probability.
    Mcar(f64),
    /// Contiguous blocks masked until `rate` of each series is missing.
    Block { len: usize, rate: f64 },
}

/// Sum-of-sinusoids generator with controllable missingness.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_series: usize,
    pub length: usize,
    pub offset: f64,
    pub amplitudes: Vec<f64>,
    pub periods: Vec<f64>,
    pub phases: Vec<f64>,
    pub noise_std: f64,
    pub missing: Missingness,
    pub time_step: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn from_kv(map: &IndexMap<String, String>) -> Result<Self> {
        const KNOWN: [&str; 11] = [
            "n_series", "length", "offset", "amplitudes", "periods", "phases", "noise_std",
            "missing", "mcar_rate", "block_len", "block_rate",
        ];
        const KNOWN_EXTRA: [&str; 2] = ["time_step", "seed"];
        for key in map.keys() {
            if !KNOWN.contains(&key.as_str()) && !KNOWN_EXTRA.contains(&key.as_str()) {
                return Err(RiseError::Config(format!("unknown synthetic spec key `{key}`")));
            }
        }
        let list = |key: &str, default: Vec<f64>| -> Result<Vec<f64>> {
            match map.get(key) {
                None => Ok(default),
                Some(v) => v
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse()
                            .map_err(|_| RiseError::Config(format!("invalid {key} entry `{p}`")))
                    })
                    .collect(),
            }
        };
        let num = |key: &str, default: f64| -> Result<f64> {
            match map.get(key) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| RiseError::Config(format!("invalid value `{v}` for `{key}`"))),
            }
        };
        let missing = match map.get("missing").map(String::as_str) {
            None | Some("mcar") => Missingness::Mcar(num("mcar_rate", 0.0)?),
            Some("block") => Missingness::Block {
                len: num("block_len", 8.0)? as usize,
                rate: num("block_rate", 0.0)?,
            },
            Some(other) => {
                return Err(RiseError::Config(format!(
                    "unknown missingness mode `{other}` (expected mcar|block)"
                )))
            }
        };
        match missing {
            Missingness::Mcar(p) if !(0.0..=1.0).contains(&p) => {
                return Err(RiseError::Config(format!("mcar_rate {p} outside [0,1]")))
            }
            Missingness::Block { rate, len } if !(0.0..=1.0).contains(&rate) || len == 0 => {
                return Err(RiseError::Config("block_rate must be in [0,1] and block_len >= 1".into()))
            }
            _ => {}
        }
        let amplitudes = list("amplitudes", vec![20.0, 10.0])?;
        let periods = list("periods", vec![24.0, 7.0])?;
        let phases = list("phases", vec![0.0; amplitudes.len()])?;
        if amplitudes.len() != periods.len() || amplitudes.len() != phases.len() {
            return Err(RiseError::Config(
                "amplitudes, periods, and phases must have equal lengths".into(),
            ));
        }
        if periods.iter().any(|&p| p <= 0.0) {
            return Err(RiseError::Config("periods must be positive".into()));
        }
        Ok(SyntheticSpec {
            n_series: num("n_series", 100.0)? as usize,
            length: num("length", 100.0)? as usize,
            offset: num("offset", 100.0)?,
            amplitudes,
            periods,
            phases,
            noise_std: num("noise_std", 0.0)?,
            missing,
            time_step: num("time_step", 1.0)?,
            seed: num("seed", 0.0)? as u64,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_kv(&crate::config::parse_kv(text)?)
    }
}

/// Deterministic for a fixed seed; true values are retained in `truth`,
/// never in the masked series itself.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    if spec.n_series == 0 || spec.length < 2 {
        return Err(RiseError::Config("need n_series >= 1 and length >= 2".into()));
    }
    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.noise_std).map_err(|e| RiseError::Config(e.to_string()))?)
    } else {
        None
    };
    let mut corpus = Corpus::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for sidx in 0..spec.n_series {
        let phase_shift: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let t: Vec<f64> = (0..spec.length).map(|i| i as f64 * spec.time_step).collect();
        let truth: Vec<f64> = t
            .iter()
            .map(|&ti| {
                let mut v = spec.offset;
                for ((&a, &p), &ph) in
                    spec.amplitudes.iter().zip(&spec.periods).zip(&spec.phases)
                {
                    v += a * (std::f64::consts::TAU * ti / (p * spec.time_step) + ph + phase_shift)
                        .sin();
                }
                if let Some(n) = &noise {
                    v += n.sample(&mut rng);
                }
                v
            })
            .collect();
        let mut mask = vec![true; spec.length];
        match spec.missing {
            Missingness::Mcar(p) => {
                for m in mask.iter_mut() {
                    if rng.gen_bool(p) {
                        *m = false;
                    }
                }
            }
            Missingness::Block { len, rate } => {
                let target = (rate * spec.length as f64).round() as usize;
                let mut missing = 0usize;
                let mut guard = 0usize;
                while missing < target && guard < 10_000 {
                    guard += 1;
                    let lo = (len / 2).max(1);
                    let hi = (len * 3 / 2).max(lo + 1);
                    let mut block = rng.gen_range(lo..hi);
                    block = block.min(target - missing);
                    let start = rng.gen_range(0..spec.length);
                    for i in start..(start + block).min(spec.length) {
                        if mask[i] {
                            mask[i] = false;
                            missing += 1;
                        }
                    }
                }
            }
        }
        if !mask.iter().any(|&m| m) {
            let i = rng.gen_range(0..spec.length);
            mask[i] = true;
        }
        let x: Vec<f64> = truth
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        corpus.series.push(CorpusSeries {
            id: format!("s{sidx:04}"),
            data: MaskedSeries::new(t, x, mask)?,
            split: None,
            truth: Some(truth),
        });
    }
    Ok(corpus)
}

/// Reads `series_id,time,value` rows; an empty value field means missing.
pub fn load_csv(path: &Path) -> Result<Corpus> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["series_id", "time", "value"];
    let header_fields: Vec<&str> = headers.iter().collect();
    if header_fields != expected {
        return Err(RiseError::Config(format!(
            "expected header `series_id,time,value`, got `{}`",
            header_fields.join(",")
        )));
    }
    struct Builder {
        t: Vec<f64>,
        x: Vec<f64>,
        m: Vec<bool>,
    }
    let mut builders: IndexMap<String, Builder> = IndexMap::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 2; // 1-based, after the header row
        let id = record.get(0).unwrap_or("").to_string();
        let time_str = record.get(1).unwrap_or("");
        let value_str = record.get(2).unwrap_or("");
        let time: f64 = time_str.parse().map_err(|_| RiseError::Ingestion {
            series: id.clone(),
            row,
            message: format!("unparseable time `{time_str}`"),
        })?;
        let (value, observed) = if value_str.is_empty() {
            (0.0, false)
        } else {
            let v: f64 = value_str.parse().map_err(|_| RiseError::Ingestion {
                series: id.clone(),
                row,
                message: format!("unparseable value `{value_str}`"),
            })?;
            (v, true)
        };
        let b = builders
            .entry(id.clone())
            .or_insert_with(|| Builder { t: Vec::new(), x: Vec::new(), m: Vec::new() });
        if let Some(&prev) = b.t.last() {
            if time == prev {
                return Err(RiseError::Ingestion {
                    series: id,
                    row,
                    message: format!("duplicate timestamp {time}"),
                });
            }
            if time < prev {
                return Err(RiseError::Ingestion {
                    series: id,
                    row,
                    message: format!("non-monotone time {time} after {prev}"),
                });
            }
        }
        b.t.push(time);
        b.x.push(value);
        b.m.push(observed);
    }
    let mut corpus = Corpus::default();
    for (id, b) in builders {
        let data = MaskedSeries::new(b.t, b.x, b.m)
            .map_err(|e| RiseError::Ingestion { series: id.clone(), row: 0, message: e.to_string() })?;
        corpus.series.push(CorpusSeries { id, data, split: None, truth: None });
    }
    if corpus.series.is_empty() {
        return Err(RiseError::Config("CSV contains no data rows".into()));
    }
    Ok(corpus)
}

pub fn write_csv(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["series_id", "time", "value"])?;
    for s in &corpus.series {
        for i in 0..s.data.len() {
            let value = if s.data.m[i] { format!("{}", s.data.x[i]) } else { String::new() };
            writer.write_record([s.id.as_str(), &format!("{}", s.data.t[i]), &value])?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_temp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_missing_values_from_empty_fields() {
        let (_dir, path) = write_temp("series_id,time,value\na,0,1.5\na,1,\na,2,2.5\n");
        let corpus = load_csv(&path).unwrap();
        assert_eq!(corpus.series.len(), 1);
        assert_eq!(corpus.series[0].data.m, vec![true, false, true]);
        assert_eq!(corpus.series[0].data.x[0], 1.5);
    }

    #[test]
    fn duplicate_timestamp_rejected() {
        let (_dir, path) = write_temp("series_id,time,value\na,0,1\na,0,2\n");
        let err = load_csv(&path).unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("`a`"), "{err}");
    }

    #[test]
    fn non_monotone_time_rejected_with_row() {
        let (_dir, path) = write_temp("series_id,time,value\na,5,1\na,3,2\n");
        let err = load_csv(&path).unwrap_err().to_string();
        assert!(err.contains("non-monotone") && err.contains("row 3"), "{err}");
    }

    #[test]
    fn unparseable_value_rejected() {
        let (_dir, path) = write_temp("series_id,time,value\na,0,abc\n");
        assert!(load_csv(&path).is_err());
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let spec = SyntheticSpec::from_text("n_series=3\nlength=20\nmcar_rate=0.3\nseed=5\nnoise_std=2.0").unwrap();
        let corpus = generate_synthetic(&spec).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("round.csv");
        write_csv(&corpus, &path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(loaded.series.len(), corpus.series.len());
        for (a, b) in corpus.series.iter().zip(&loaded.series) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.data.t, b.data.t);
            assert_eq!(a.data.m, b.data.m);
            for i in 0..a.data.len() {
                if a.data.m[i] {
                    assert_eq!(a.data.x[i], b.data.x[i]);
                }
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::from_text("n_series=4\nlength=30\nmcar_rate=0.4\nseed=9\nnoise_std=1.0").unwrap();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        for (sa, sb) in a.series.iter().zip(&b.series) {
            assert_eq!(sa.data.x, sb.data.x);
            assert_eq!(sa.data.m, sb.data.m);
            assert_eq!(sa.truth, sb.truth);
        }
    }

    #[test]
    fn mcar_zero_rate_is_fully_observed() {
        let spec = SyntheticSpec::from_text("n_series=2\nlength=25\nmcar_rate=0\nseed=1").unwrap();
        let corpus = generate_synthetic(&spec).unwrap();
        for s in &corpus.series {
            assert!(s.data.m.iter().all(|&m| m));
        }
    }

    #[test]
    fn mcar_rate_concentrates() {
        let spec = SyntheticSpec::from_text("n_series=200\nlength=100\nmcar_rate=0.4\nseed=2").unwrap();
        let corpus = generate_synthetic(&spec).unwrap();
        let total: usize = corpus.series.iter().map(|s| s.data.len()).sum();
        let observed: usize = corpus.series.iter().map(|s| s.data.observed_count()).sum();
        let frac = observed as f64 / total as f64;
        assert!((0.57..=0.63).contains(&frac), "observed fraction {frac}");
    }

    #[test]
    fn block_missingness_hits_target_fraction() {
        let spec = SyntheticSpec::from_text(
            "n_series=50\nlength=100\nmissing=block\nblock_len=8\nblock_rate=0.6\nseed=3",
        )
        .unwrap();
        let corpus = generate_synthetic(&spec).unwrap();
        let total: usize = corpus.series.iter().map(|s| s.data.len()).sum();
        let missing: usize =
            corpus.series.iter().map(|s| s.data.len() - s.data.observed_count()).sum();
        let frac = missing as f64 / total as f64;
        assert!((0.57..=0.63).contains(&frac), "missing fraction {frac}");
        // blocks exist: at least one run of >= block_len/2 missing steps
        let has_block = corpus.series.iter().any(|s| {
            let mut run = 0usize;
            let mut best = 0usize;
            for &m in &s.data.m {
                if m {
                    run = 0;
                } else {
                    run += 1;
                    best = best.max(run);
                }
            }
            best >= 4
        });
        assert!(has_block);
    }

    #[test]
    fn by_series_split_8_1_1() {
        let spec = SyntheticSpec::from_text("n_series=10\nlength=10\nseed=0").unwrap();
        let mut corpus = generate_synthetic(&spec).unwrap();
        corpus.split(SplitPolicy::BySeries, 0.8, 0.1).unwrap();
        assert_eq!(corpus.in_split(Split::Train).count(), 8);
        assert_eq!(corpus.in_split(Split::Validation).count(), 1);
        assert_eq!(corpus.in_split(Split::Test).count(), 1);
    }

    #[test]
    fn by_time_split_has_disjoint_timestamps() {
        let spec = SyntheticSpec::from_text("n_series=3\nlength=40\nseed=0").unwrap();
        let mut corpus = generate_synthetic(&spec).unwrap();
        corpus.split(SplitPolicy::ByTime, 0.6, 0.2).unwrap();
        for id in ["s0000", "s0001", "s0002"] {
            let mut seen = std::collections::HashSet::new();
            for s in corpus.series.iter().filter(|s| s.id == id) {
                for &t in &s.data.t {
                    assert!(seen.insert(t.to_bits()), "timestamp {t} in two splits");
                }
            }
        }
    }

    #[test]
    fn split_is_deterministic() {
        let spec = SyntheticSpec::from_text("n_series=10\nlength=10\nseed=4").unwrap();
        let mut a = generate_synthetic(&spec).unwrap();
        let mut b = generate_synthetic(&spec).unwrap();
        a.split(SplitPolicy::BySeries, 0.8, 0.1).unwrap();
        b.split(SplitPolicy::BySeries, 0.8, 0.1).unwrap();
        for (sa, sb) in a.series.iter().zip(&b.series) {
            assert_eq!(sa.split, sb.split);
        }
    }

    #[test]
    fn empty_split_is_error() {
        let spec = SyntheticSpec::from_text("n_series=3\nlength=10\nseed=0").unwrap();
        let mut corpus = generate_synthetic(&spec).unwrap();
        assert!(corpus.split(SplitPolicy::BySeries, 0.9, 0.05).is_err());
    }

    #[test]
    fn quantizer_on_1_to_100() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let q = TargetQuantizer::fit(&values, 10).unwrap();
        // class 0 holds 1..10; lower median is 5
        assert_eq!(q.representative(0), 5.0);
        assert_eq!(q.classify(1.0), 0);
        assert_eq!(q.classify(100.0), 9);
        for c in 0..q.n_classes() {
            assert_eq!(q.classify(q.representative(c)), c, "class {c}");
        }
    }

    #[test]
    fn quantizer_two_classes_edge_at_median() {
        let values: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let q = TargetQuantizer::fit(&values, 2).unwrap();
        assert_eq!(q.edges, vec![6.0]);
    }

    #[test]
    fn quantizer_partitions_the_line() {
        let values: Vec<f64> = (0..64).map(|v| (v as f64).sin() * 50.0 + (v as f64)).collect();
        let q = TargetQuantizer::fit(&values, 8).unwrap();
        for v in [-1e9, -3.7, 0.0, 17.2, 1e9] {
            let c = q.classify(v);
            assert!(c < q.n_classes());
        }
    }

    #[test]
    fn training_stats_ignore_validation_and_test() {
        let spec = SyntheticSpec::from_text("n_series=10\nlength=30\nmcar_rate=0.2\nseed=6\nnoise_std=1.0").unwrap();
        let mut corpus = generate_synthetic(&spec).unwrap();
        corpus.split(SplitPolicy::BySeries, 0.8, 0.1).unwrap();
        let before = corpus.train_stats().unwrap();
        let xav_before = corpus.x_av_table().unwrap();
        // perturb every value outside the training split
        for s in corpus.series.iter_mut() {
            if s.split != Some(Split::Train) {
                s.data.x.iter_mut().for_each(|v| *v += 1000.0);
            }
        }
        let after = corpus.train_stats().unwrap();
        let xav_after = corpus.x_av_table().unwrap();
        assert_eq!(before.x_values, after.x_values);
        assert_eq!(before.delta_values, after.delta_values);
        assert_eq!(before.delta_unit, after.delta_unit);
        assert_eq!(xav_before.global, xav_after.global);
    }
}
