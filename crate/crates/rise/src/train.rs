//! Masked next-observation training: per-series optimizer steps, gradient
//! clipping, L2 on the tape, dual model selection (median and mean error),
//! and bit-exact checkpoint round trips.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{Corpus, Split, TargetQuantizer, XavTable};
use crate::encoders::Encoder;
use crate::error::{Result, RiseError};
use crate::eval;
use crate::rise::{MaskedSeries, Objective, RiseConfig, RiseModel};
use crate::tensor::{name_seed, ParameterStore, Tape, TensorId};

/// Adam with bias correction; state is keyed by parameter name.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: HashMap::new(), v: HashMap::new() }
    }

    /// One update from the gradients currently held in the store.
    pub fn step(&mut self, store: &mut ParameterStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (name, p) in store.iter_mut() {
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.values.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.values.len()]);
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `clip`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(store: &mut ParameterStore, clip: f64) -> f64 {
    let mut sq = 0.0;
    for (_, p) in store.iter() {
        sq += p.grad.iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > clip && norm > 0.0 {
        let scale = clip / norm;
        for (_, p) in store.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// Builds the training loss for one series on the tape: the mean over steps
/// whose successor is observed of either cross-entropy against the
/// successor's class or the squared error against its value. Returns `None`
/// when the series has no such step (fewer than two observations reachable
/// in sequence), never touching values at masked positions.
pub fn series_loss(
    model: &RiseModel,
    tape: &mut Tape,
    series: &MaskedSeries,
    x_av: f64,
    quantizer: Option<&TargetQuantizer>,
) -> Result<Option<(TensorId, usize)>> {
    let trace = model.forward(tape, series, x_av)?;
    let head = model.head(tape)?;
    let mut terms = Vec::new();
    for i in 0..series.len().saturating_sub(1) {
        if !series.m[i + 1] {
            continue;
        }
        let out = model.apply_head(tape, head, trace.top_hidden[i])?;
        let term = match quantizer {
            Some(q) => tape.softmax_cross_entropy(out, q.classify(series.x[i + 1]))?,
            None => {
                let y = tape.constant_scalar(series.x[i + 1]);
                let d = tape.sub(out, y)?;
                let sq = tape.mul(d, d)?;
                tape.sum(sq)
            }
        };
        terms.push(term);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    let scale = tape.constant_scalar(1.0 / terms.len() as f64);
    Ok(Some((tape.mul(acc, scale)?, terms.len())))
}

/// lambda * sum of squared parameters, as tape nodes so the gradient flows
/// through the same backward pass as the data term.
fn l2_term(model: &RiseModel, tape: &mut Tape, lambda: f64) -> Result<Option<TensorId>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let names: Vec<String> = model.store.names().cloned().collect();
    let mut acc: Option<TensorId> = None;
    for name in &names {
        let p = tape.param(&model.store, name)?;
        let sq = tape.mul(p, p)?;
        let s = tape.sum(sq);
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    let lam = tape.constant_scalar(lambda);
    Ok(Some(tape.mul(acc.expect("store is never empty"), lam)?))
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mdape: f64,
    pub val_mape: f64,
}

/// Training outcome: the two selected parameter snapshots and the epoch log.
#[derive(Debug)]
pub struct Fitted {
    pub best_mdape: f64,
    pub best_mdape_params: ParameterStore,
    pub best_mape: f64,
    pub best_mape_params: ParameterStore,
    pub log: Vec<EpochLog>,
}

/// Trains in place with per-series optimizer steps. Both checkpoint slots
/// start from the untrained model's validation scores, so a run that never
/// improves still yields a defined model. Fully deterministic for a fixed
/// seed.
pub fn fit(
    model: &mut RiseModel,
    corpus: &Corpus,
    xav: &XavTable,
    quantizer: Option<&TargetQuantizer>,
    tc: &TrainConfig,
    lambda: f64,
    mut progress: Option<&mut dyn Write>,
) -> Result<Fitted> {
    if model.cfg.objective == Objective::Classification && quantizer.is_none() {
        return Err(RiseError::Contract("classification training needs a quantizer".into()));
    }
    let train_ids: Vec<usize> = corpus
        .series
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Some(Split::Train))
        .map(|(i, _)| i)
        .collect();
    if train_ids.is_empty() {
        return Err(RiseError::Config("training split is empty".into()));
    }
    let initial = eval::evaluate_model(
        model,
        quantizer,
        corpus,
        Split::Validation,
        xav,
        tc.min_prior,
    )?;
    if initial.n == 0 {
        return Err(RiseError::Config(
            "validation split has no eligible evaluation targets (check min_prior and split sizes)"
                .into(),
        ));
    }
    let mut fitted = Fitted {
        best_mdape: initial.mdape,
        best_mdape_params: model.store.clone(),
        best_mape: initial.mape,
        best_mape_params: model.store.clone(),
        log: Vec::with_capacity(tc.epochs),
    };
    let mut adam = Adam::new(tc.lr);
    for epoch in 0..tc.epochs {
        let mut order = train_ids.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(tc.seed, &format!("shuffle.{epoch}")));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for &idx in &order {
            let s = &corpus.series[idx];
            let mut tape = Tape::new();
            let Some((data_loss, _)) = series_loss(model, &mut tape, &s.data, xav.get(&s.id), quantizer)?
            else {
                continue;
            };
            let data_value = tape.scalar_value(data_loss);
            if !data_value.is_finite() {
                return Err(RiseError::Divergence { epoch, series: s.id.clone() });
            }
            loss_sum += data_value;
            loss_count += 1;
            let loss = match l2_term(model, &mut tape, lambda)? {
                None => data_loss,
                Some(reg) => tape.add(data_loss, reg)?,
            };
            tape.backward(loss)?;
            model.store.zero_grads();
            tape.grads_into(&mut model.store)?;
            clip_global_norm(&mut model.store, tc.clip);
            adam.step(&mut model.store);
            if model.store.iter().any(|(_, p)| p.values.iter().any(|v| !v.is_finite())) {
                return Err(RiseError::Divergence { epoch, series: s.id.clone() });
            }
        }
        let train_loss = if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN };
        let val = eval::evaluate_model(
            model,
            quantizer,
            corpus,
            Split::Validation,
            xav,
            tc.min_prior,
        )?;
        if val.mdape < fitted.best_mdape {
            fitted.best_mdape = val.mdape;
            fitted.best_mdape_params = model.store.clone();
        }
        if val.mape < fitted.best_mape {
            fitted.best_mape = val.mape;
            fitted.best_mape_params = model.store.clone();
        }
        if let Some(p) = progress.as_deref_mut() {
            writeln!(p, "{epoch}\t{train_loss:.6}\t{:.4}\t{:.4}", val.mdape, val.mape)?;
        }
        fitted.log.push(EpochLog { epoch, train_loss, val_mdape: val.mdape, val_mape: val.mape });
    }
    Ok(fitted)
}

/// Everything needed to score new data: configuration, fitted encoder
/// state, quantizer, per-series averages, and both parameter snapshots.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub cfg: RiseConfig,
    pub delta_unit: f64,
    pub edges_x: Vec<f64>,
    pub vocab_x: usize,
    pub edges_d: Vec<f64>,
    pub vocab_d: usize,
    pub quantizer: Option<TargetQuantizer>,
    pub xav_entries: Vec<(String, f64)>,
    pub xav_global: f64,
    pub min_prior: usize,
    pub mdape_metric: f64,
    pub mdape_params: ParameterStore,
    pub mape_metric: f64,
    pub mape_params: ParameterStore,
}

impl Checkpoint {
    pub fn from_fit(
        model: &RiseModel,
        fitted: &Fitted,
        quantizer: Option<&TargetQuantizer>,
        xav: &XavTable,
        min_prior: usize,
    ) -> Self {
        let mut xav_entries: Vec<(String, f64)> =
            xav.entries().map(|(k, v)| (k.clone(), *v)).collect();
        xav_entries.sort_by(|a, b| a.0.cmp(&b.0));
        Checkpoint {
            cfg: model.cfg,
            delta_unit: model.delta_unit,
            edges_x: model.enc_x.edges.clone(),
            vocab_x: model.enc_x.vocab,
            edges_d: model.enc_d.edges.clone(),
            vocab_d: model.enc_d.vocab,
            quantizer: quantizer.cloned(),
            xav_entries,
            xav_global: xav.global,
            min_prior,
            mdape_metric: fitted.best_mdape,
            mdape_params: fitted.best_mdape_params.clone(),
            mape_metric: fitted.best_mape,
            mape_params: fitted.best_mape_params.clone(),
        }
    }

    pub fn xav(&self) -> XavTable {
        XavTable::from_entries(self.xav_entries.clone(), self.xav_global)
    }

    /// Rebuilds the model around one of the stored parameter snapshots.
    pub fn model(&self, use_mape_slot: bool) -> RiseModel {
        let store = if use_mape_slot { self.mape_params.clone() } else { self.mdape_params.clone() };
        RiseModel {
            cfg: self.cfg,
            store,
            enc_x: Encoder {
                spec: self.cfg.encoder,
                prefix: "enc.x".into(),
                edges: self.edges_x.clone(),
                vocab: self.vocab_x,
            },
            enc_d: Encoder {
                spec: self.cfg.encoder,
                prefix: "enc.d".into(),
                edges: self.edges_d.clone(),
                vocab: self.vocab_d,
            },
            delta_unit: self.delta_unit,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("RISE-CKPT 1\n");
        out.push_str(&format!("instance {}\n", self.cfg.instance));
        out.push_str(&format!("encoder {}\n", self.cfg.encoder.kind));
        out.push_str(&format!(
            "dims {} {} {} {} {} {} {}\n",
            self.cfg.encoder.d,
            self.cfg.encoder.d_d,
            self.cfg.encoder.n_bin,
            self.cfg.encoder.precision,
            self.cfg.d_h,
            self.cfg.n_layers,
            self.cfg.n_classes
        ));
        out.push_str(&format!("objective {}\n", self.cfg.objective));
        out.push_str(&format!("min_prior {}\n", self.min_prior));
        out.push_str(&format!("delta_unit {}\n", hex(self.delta_unit)));
        push_vec(&mut out, "edges_x", &self.edges_x);
        out.push_str(&format!("vocab_x {}\n", self.vocab_x));
        push_vec(&mut out, "edges_d", &self.edges_d);
        out.push_str(&format!("vocab_d {}\n", self.vocab_d));
        match &self.quantizer {
            None => out.push_str("quantizer 0\n"),
            Some(q) => {
                out.push_str("quantizer 1\n");
                push_vec(&mut out, "q_edges", &q.edges);
                push_vec(&mut out, "q_reps", &q.representatives);
            }
        }
        out.push_str(&format!("xav_global {}\n", hex(self.xav_global)));
        out.push_str(&format!("xav_n {}\n", self.xav_entries.len()));
        for (id, v) in &self.xav_entries {
            out.push_str(&format!("xav {} {id}\n", hex(*v)));
        }
        for (slot, metric, store) in [
            ("mdape", self.mdape_metric, &self.mdape_params),
            ("mape", self.mape_metric, &self.mape_params),
        ] {
            out.push_str(&format!("slot {slot} {} {}\n", hex(metric), store.len()));
            for (name, p) in store.iter() {
                out.push_str(&format!("p {name} {}", p.shape.len()));
                for &d in &p.shape {
                    out.push_str(&format!(" {d}"));
                }
                for &v in &p.values {
                    out.push(' ');
                    out.push_str(&hex(v));
                }
                out.push('\n');
            }
        }
        out.push_str("end\n");
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let bad = |msg: &str| RiseError::Config(format!("checkpoint {}: {msg}", path.display()));
        macro_rules! next {
            ($what:expr) => {
                lines.next().ok_or_else(|| bad(&format!("truncated before {}", $what)))?
            };
        }
        if next!("magic") != "RISE-CKPT 1" {
            return Err(bad("not a version-1 checkpoint"));
        }
        let field = |line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key} ...`, got `{line}`")))
        };
        let instance = crate::rise::InstanceKind::parse(&field(next!("instance"), "instance")?)?;
        let encoder = crate::encoders::EncoderKind::parse(&field(next!("encoder"), "encoder")?)?;
        let dims_line = field(next!("dims"), "dims")?;
        let dims: Vec<usize> = dims_line
            .split_whitespace()
            .map(|p| p.parse().map_err(|_| bad("bad dims entry")))
            .collect::<Result<_>>()?;
        if dims.len() != 7 {
            return Err(bad("dims line needs 7 entries"));
        }
        let objective = Objective::parse(&field(next!("objective"), "objective")?)?;
        let min_prior: usize =
            field(next!("min_prior"), "min_prior")?.parse().map_err(|_| bad("bad min_prior"))?;
        let delta_unit = unhex(&field(next!("delta_unit"), "delta_unit")?)
            .ok_or_else(|| bad("bad delta_unit"))?;
        let parse_vec = |line: &str, key: &str| -> Result<Vec<f64>> {
            let rest = field(line, key)?;
            let mut it = rest.split_whitespace();
            let n: usize = it.next().and_then(|p| p.parse().ok()).ok_or_else(|| bad("bad count"))?;
            let vals: Vec<f64> = it.filter_map(unhex_str).collect();
            if vals.len() != n {
                return Err(bad(&format!("{key}: expected {n} values, got {}", vals.len())));
            }
            Ok(vals)
        };
        let edges_x = parse_vec(next!("edges_x"), "edges_x")?;
        let vocab_x: usize =
            field(next!("vocab_x"), "vocab_x")?.parse().map_err(|_| bad("bad vocab_x"))?;
        let edges_d = parse_vec(next!("edges_d"), "edges_d")?;
        let vocab_d: usize =
            field(next!("vocab_d"), "vocab_d")?.parse().map_err(|_| bad("bad vocab_d"))?;
        let quantizer = match field(next!("quantizer"), "quantizer")?.as_str() {
            "0" => None,
            "1" => Some(TargetQuantizer {
                edges: parse_vec(next!("q_edges"), "q_edges")?,
                representatives: parse_vec(next!("q_reps"), "q_reps")?,
            }),
            _ => return Err(bad("bad quantizer flag")),
        };
        let xav_global = unhex(&field(next!("xav_global"), "xav_global")?)
            .ok_or_else(|| bad("bad xav_global"))?;
        let xav_n: usize = field(next!("xav_n"), "xav_n")?.parse().map_err(|_| bad("bad xav_n"))?;
        let mut xav_entries = Vec::with_capacity(xav_n);
        for _ in 0..xav_n {
            let rest = field(next!("xav"), "xav")?;
            let (h, id) = rest.split_once(' ').ok_or_else(|| bad("bad xav entry"))?;
            xav_entries.push((id.to_string(), unhex(h).ok_or_else(|| bad("bad xav value"))?));
        }
        let mut read_slot = |name: &str| -> Result<(f64, ParameterStore)> {
            let rest = field(next!("slot"), "slot")?;
            let mut it = rest.split_whitespace();
            if it.next() != Some(name) {
                return Err(bad(&format!("expected slot {name}")));
            }
            let metric = it.next().and_then(unhex_str).ok_or_else(|| bad("bad slot metric"))?;
            let n_params: usize =
                it.next().and_then(|p| p.parse().ok()).ok_or_else(|| bad("bad slot size"))?;
            let mut store = ParameterStore::new();
            for _ in 0..n_params {
                let rest = field(next!("p"), "p")?;
                let mut it = rest.split_whitespace();
                let pname = it.next().ok_or_else(|| bad("missing param name"))?.to_string();
                let ndim: usize =
                    it.next().and_then(|p| p.parse().ok()).ok_or_else(|| bad("bad param rank"))?;
                let shape: Vec<usize> = (0..ndim)
                    .map(|_| it.next().and_then(|p| p.parse().ok()).ok_or_else(|| bad("bad dim")))
                    .collect::<Result<_>>()?;
                let numel: usize = shape.iter().product();
                let values: Vec<f64> = it.filter_map(unhex_str).collect();
                if values.len() != numel {
                    return Err(bad(&format!("param {pname}: wrong value count")));
                }
                store.register(&pname, shape, crate::tensor::Init::Values(values), 0);
            }
            Ok((metric, store))
        };
        let (mdape_metric, mdape_params) = read_slot("mdape")?;
        let (mape_metric, mape_params) = read_slot("mape")?;
        if next!("end") != "end" {
            return Err(bad("missing end marker"));
        }
        Ok(Checkpoint {
            cfg: RiseConfig {
                instance,
                encoder: crate::encoders::EncoderSpec {
                    kind: encoder,
                    d: dims[0],
                    d_d: dims[1],
                    n_bin: dims[2],
                    precision: dims[3],
                },
                d_h: dims[4],
                n_layers: dims[5],
                n_classes: dims[6],
                objective,
            },
            delta_unit,
            edges_x,
            vocab_x,
            edges_d,
            vocab_d,
            quantizer,
            xav_entries,
            xav_global,
            min_prior,
            mdape_metric,
            mdape_params,
            mape_metric,
            mape_params,
        })
    }
}

fn push_vec(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(&format!("{key} {}", values.len()));
    for &v in values {
        out.push(' ');
        out.push_str(&hex(v));
    }
    out.push('\n');
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Option<f64> {
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

fn unhex_str(s: &str) -> Option<f64> {
    unhex(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SplitPolicy;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::encoders::EncoderKind;
    use crate::rise::InstanceKind;
    use crate::tensor::Init;

    #[test]
    fn adam_single_step_matches_hand_formula() {
        let mut store = ParameterStore::new();
        store.register("w", vec![1, 1], Init::Values(vec![1.0]), 0);
        store.get_mut("w").unwrap().grad[0] = 0.5;
        let mut adam = Adam::new(0.1);
        adam.step(&mut store);
        // first step: mhat = g, vhat = g^2, update = lr * g / (|g| + eps)
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((store.get("w").unwrap().values[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn adam_two_steps_oracle() {
        let mut store = ParameterStore::new();
        store.register("w", vec![1, 1], Init::Values(vec![0.0]), 0);
        let mut adam = Adam::new(0.01);
        // scalar reference computed side by side
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.0f64);
        for (t, g) in [(1, 0.3), (2, -0.7)] {
            store.get_mut("w").unwrap().grad[0] = g;
            adam.step(&mut store);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            w -= 0.01 * mhat / (vhat.sqrt() + eps);
            assert!((store.get("w").unwrap().values[0] - w).abs() < 1e-15, "step {t}");
        }
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut store = ParameterStore::new();
        store.register("a", vec![2, 1], Init::Zeros, 0);
        store.get_mut("a").unwrap().grad.copy_from_slice(&[3.0, 4.0]);
        let norm = clip_global_norm(&mut store, 10.0);
        assert_eq!(norm, 5.0);
        assert_eq!(store.get("a").unwrap().grad, vec![3.0, 4.0]);
        let norm = clip_global_norm(&mut store, 1.0);
        assert_eq!(norm, 5.0);
        let g = &store.get("a").unwrap().grad;
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15, "{g:?}");
    }

    fn tiny_cfg() -> TrainConfig {
        let mut tc = TrainConfig::default();
        tc.epochs = 2;
        tc.d = 4;
        tc.d_d = 3;
        tc.d_h = 6;
        tc.n_layers = 1;
        tc.n_classes = 8;
        tc.n_bin = 4;
        tc.min_prior = 3;
        tc.seed = 11;
        tc
    }

    fn tiny_corpus(seed: u64) -> Corpus {
        let spec = SyntheticSpec::from_text(&format!(
            "n_series=12\nlength=24\nmcar_rate=0.2\nnoise_std=1.0\nseed={seed}"
        ))
        .unwrap();
        let mut corpus = generate_synthetic(&spec).unwrap();
        corpus.split(SplitPolicy::BySeries, 0.7, 0.15).unwrap();
        corpus
    }

    fn model_for(tc: &TrainConfig, corpus: &Corpus, kind: EncoderKind) -> (RiseModel, TargetQuantizer, XavTable) {
        let stats = corpus.train_stats().unwrap();
        let model = RiseModel::new(
            tc.rise_config(InstanceKind::ZeroFillingIndicators, kind),
            &stats,
            tc.seed,
        )
        .unwrap();
        let q = TargetQuantizer::fit(&corpus.observed_values(Split::Train), tc.n_classes).unwrap();
        let xav = corpus.x_av_table().unwrap();
        (model, q, xav)
    }

    #[test]
    fn masked_values_cannot_influence_loss_or_grads() {
        let tc = tiny_cfg();
        let corpus = tiny_corpus(4);
        let (model, q, xav) = model_for(&tc, &corpus, EncoderKind::Feedforward);
        let s = corpus
            .series
            .iter()
            .find(|s| s.data.m.iter().any(|&m| !m))
            .expect("some series has missing values");
        let run = |series: &MaskedSeries| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let (loss, _) =
                series_loss(&model, &mut tape, series, xav.get(&s.id), Some(&q)).unwrap().unwrap();
            tape.backward(loss).unwrap();
            let mut store = model.store.clone();
            store.zero_grads();
            tape.grads_into(&mut store).unwrap();
            let grads = store.iter().flat_map(|(_, p)| p.grad.iter().copied()).collect();
            (tape.scalar_value(loss), grads)
        };
        let (loss_a, grads_a) = run(&s.data);
        let mut perturbed = s.data.clone();
        for i in 0..perturbed.len() {
            if !perturbed.m[i] {
                perturbed.x[i] = -9999.0 + i as f64;
            }
        }
        let (loss_b, grads_b) = run(&perturbed);
        assert_eq!(loss_a.to_bits(), loss_b.to_bits());
        assert_eq!(grads_a.len(), grads_b.len());
        for (a, b) in grads_a.iter().zip(&grads_b) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn series_with_one_reachable_target_still_trains_and_singletons_skip() {
        let tc = tiny_cfg();
        let corpus = tiny_corpus(5);
        let (model, q, xav) = model_for(&tc, &corpus, EncoderKind::Feedforward);
        // one observation: no step has an observed successor
        let lone = MaskedSeries::new(vec![0.0, 1.0], vec![3.0, 0.0], vec![true, false]).unwrap();
        let mut tape = Tape::new();
        assert!(series_loss(&model, &mut tape, &lone, xav.global, Some(&q)).unwrap().is_none());
        let pair = MaskedSeries::new(vec![0.0, 1.0], vec![3.0, 4.0], vec![true, true]).unwrap();
        let mut tape = Tape::new();
        let (_, n) = series_loss(&model, &mut tape, &pair, xav.global, Some(&q)).unwrap().unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn fit_is_deterministic() {
        let tc = tiny_cfg();
        let corpus = tiny_corpus(6);
        let run = || {
            let (mut model, q, xav) = model_for(&tc, &corpus, EncoderKind::Feedforward);
            let fitted = fit(&mut model, &corpus, &xav, Some(&q), &tc, 1e-3, None).unwrap();
            (fitted, model)
        };
        let (fa, ma) = run();
        let (fb, mb) = run();
        assert_eq!(fa.best_mdape.to_bits(), fb.best_mdape.to_bits());
        for ((_, pa), (_, pb)) in ma.store.iter().zip(mb.store.iter()) {
            for (a, b) in pa.values.iter().zip(&pb.values) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        for (la, lb) in fa.log.iter().zip(&fb.log) {
            assert_eq!(la.train_loss.to_bits(), lb.train_loss.to_bits());
        }
    }

    #[test]
    fn fit_improves_over_untrained_start() {
        let mut tc = tiny_cfg();
        tc.epochs = 6;
        let corpus = tiny_corpus(7);
        let (mut model, q, xav) = model_for(&tc, &corpus, EncoderKind::Feedforward);
        let initial = eval::evaluate_model(
            &model,
            Some(&q),
            &corpus,
            Split::Validation,
            &xav,
            tc.min_prior,
        )
        .unwrap();
        let fitted = fit(&mut model, &corpus, &xav, Some(&q), &tc, 1e-4, None).unwrap();
        assert!(fitted.best_mdape <= initial.mdape, "{} > {}", fitted.best_mdape, initial.mdape);
        assert!(
            fitted.log.last().unwrap().train_loss < fitted.log[0].train_loss,
            "loss did not decrease: {:?}",
            fitted.log.iter().map(|l| l.train_loss).collect::<Vec<_>>()
        );
    }

    #[test]
    fn regression_with_huge_lr_reports_divergence() {
        // values near the f64 ceiling make the squared error overflow
        let mut tc = tiny_cfg();
        tc.objective = Objective::Regression;
        let spec = SyntheticSpec::from_text(
            "n_series=12\nlength=24\noffset=1e160\namplitudes=1e159\nperiods=7\nphases=0\nseed=8",
        )
        .unwrap();
        let mut corpus = generate_synthetic(&spec).unwrap();
        corpus.split(SplitPolicy::BySeries, 0.7, 0.15).unwrap();
        let stats = corpus.train_stats().unwrap();
        let mut model = RiseModel::new(
            tc.rise_config(InstanceKind::ZeroFillingIndicators, EncoderKind::Feedforward),
            &stats,
            tc.seed,
        )
        .unwrap();
        let xav = corpus.x_av_table().unwrap();
        let err = fit(&mut model, &corpus, &xav, None, &tc, 0.0, None).unwrap_err();
        assert!(matches!(err, RiseError::Divergence { .. }), "got {err}");
    }

    #[test]
    fn l2_zero_matches_no_penalty_and_positive_changes_grads() {
        let tc = tiny_cfg();
        let corpus = tiny_corpus(9);
        let (model, q, xav) = model_for(&tc, &corpus, EncoderKind::Feedforward);
        let s = &corpus.series[0];
        let grads_with = |lambda: f64| -> Vec<f64> {
            let mut tape = Tape::new();
            let (data_loss, _) =
                series_loss(&model, &mut tape, &s.data, xav.get(&s.id), Some(&q)).unwrap().unwrap();
            let loss = match l2_term(&model, &mut tape, lambda).unwrap() {
                None => data_loss,
                Some(reg) => tape.add(data_loss, reg).unwrap(),
            };
            tape.backward(loss).unwrap();
            let mut store = model.store.clone();
            store.zero_grads();
            tape.grads_into(&mut store).unwrap();
            store.iter().flat_map(|(_, p)| p.grad.iter().copied()).collect()
        };
        let g0 = grads_with(0.0);
        let g1 = grads_with(0.1);
        // analytic: d/dp of lambda * p^2 is 2 lambda p
        let params: Vec<f64> =
            model.store.iter().flat_map(|(_, p)| p.values.iter().copied()).collect();
        for i in 0..g0.len() {
            assert!((g1[i] - g0[i] - 0.2 * params[i]).abs() < 1e-9, "index {i}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let tc = tiny_cfg();
        let corpus = tiny_corpus(10);
        let (mut model, q, xav) = model_for(&tc, &corpus, EncoderKind::Binning);
        let fitted = fit(&mut model, &corpus, &xav, Some(&q), &tc, 1e-3, None).unwrap();
        let ckpt = Checkpoint::from_fit(&model, &fitted, Some(&q), &xav, tc.min_prior);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.mdape_metric.to_bits(), ckpt.mdape_metric.to_bits());
        assert_eq!(loaded.quantizer, ckpt.quantizer);
        assert_eq!(loaded.xav_entries, ckpt.xav_entries);
        assert_eq!(loaded.edges_x, ckpt.edges_x);
        for ((na, pa), (nb, pb)) in ckpt.mdape_params.iter().zip(loaded.mdape_params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(pa.shape, pb.shape);
            for (a, b) in pa.values.iter().zip(&pb.values) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        // the reloaded model scores identically
        let before = eval::evaluate_model(
            &ckpt.model(false),
            ckpt.quantizer.as_ref(),
            &corpus,
            Split::Test,
            &xav,
            tc.min_prior,
        )
        .unwrap();
        let after = eval::evaluate_model(
            &loaded.model(false),
            loaded.quantizer.as_ref(),
            &corpus,
            Split::Test,
            &loaded.xav(),
            loaded.min_prior,
        )
        .unwrap();
        assert_eq!(before.mdape.to_bits(), after.mdape.to_bits());
        assert_eq!(before.mape.to_bits(), after.mape.to_bits());
        // saving the loaded checkpoint reproduces the bytes
        let path2 = dir.path().join("model2.ckpt");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn untrained_slot_survives_non_improving_run() {
        let mut tc = tiny_cfg();
        tc.epochs = 0;
        let corpus = tiny_corpus(11);
        let (mut model, q, xav) = model_for(&tc, &corpus, EncoderKind::Feedforward);
        let fitted = fit(&mut model, &corpus, &xav, Some(&q), &tc, 1e-3, None).unwrap();
        assert!(fitted.best_mdape.is_finite());
        for ((_, pa), (_, pb)) in fitted.best_mdape_params.iter().zip(model.store.iter()) {
            assert_eq!(pa.values, pb.values);
        }
    }
}
