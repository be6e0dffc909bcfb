//! The recursive input and state estimation core: time-gap recurrence,
//! discount factors, conditional input replacement, and the per-instance
//! input/state transformations, generalized to latent encodings.

use std::fmt;

use crate::encoders::{Encoder, EncoderSpec};
use crate::error::{Result, RiseError};
use crate::gru::{self, BoundGru};
use crate::tensor::{Init, ParameterStore, Tape, Tensor, TensorId};

/// One univariate series: timestamps, values, and a binary observation mask.
/// Values at masked positions are never read.
#[derive(Debug, Clone)]
pub struct MaskedSeries {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub m: Vec<bool>,
}

impl MaskedSeries {
    pub fn new(t: Vec<f64>, x: Vec<f64>, m: Vec<bool>) -> Result<Self> {
        if t.len() != x.len() || t.len() != m.len() {
            return Err(RiseError::Contract(format!(
                "series field lengths disagree: t={} x={} m={}",
                t.len(),
                x.len(),
                m.len()
            )));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RiseError::Contract("timestamps must be strictly increasing".into()));
        }
        if !m.iter().any(|&b| b) {
            return Err(RiseError::Contract("series has no observed value".into()));
        }
        Ok(MaskedSeries { t, x, m })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn observed_count(&self) -> usize {
        self.m.iter().filter(|&&b| b).count()
    }
}

/// Time gap from the last observed value, in units of `unit`:
/// delta_1 = 0; delta_i = t_i - t_{i-1} (+ delta_{i-1} when the predecessor
/// was missing).
pub fn compute_delta(series: &MaskedSeries, unit: f64) -> Vec<f64> {
    let n = series.len();
    let mut delta = vec![0.0; n];
    for i in 1..n {
        let gap = (series.t[i] - series.t[i - 1]) / unit;
        delta[i] = if series.m[i - 1] { gap } else { gap + delta[i - 1] };
    }
    delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InstanceKind {
    SimpleRecursion,
    ZeroFillingIndicators,
    ForwardFillingIndicators,
    RitsI,
    GruD,
}

impl InstanceKind {
    pub const ALL: [InstanceKind; 5] = [
        InstanceKind::SimpleRecursion,
        InstanceKind::ZeroFillingIndicators,
        InstanceKind::ForwardFillingIndicators,
        InstanceKind::RitsI,
        InstanceKind::GruD,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(InstanceKind::SimpleRecursion),
            "zerofill" => Ok(InstanceKind::ZeroFillingIndicators),
            "fwdfill" => Ok(InstanceKind::ForwardFillingIndicators),
            "rits-i" => Ok(InstanceKind::RitsI),
            "gru-d" => Ok(InstanceKind::GruD),
            other => Err(RiseError::Config(format!(
                "unknown instance `{other}` (expected simple|zerofill|fwdfill|rits-i|gru-d)"
            ))),
        }
    }

    /// Appends the mask bit (or its complement) after the encoded input.
    fn indicator(&self, observed: bool) -> Option<f64> {
        match self {
            InstanceKind::SimpleRecursion => None,
            InstanceKind::ZeroFillingIndicators | InstanceKind::ForwardFillingIndicators => {
                Some(if observed { 0.0 } else { 1.0 })
            }
            InstanceKind::RitsI | InstanceKind::GruD => Some(if observed { 1.0 } else { 0.0 }),
        }
    }

    pub fn decays_hidden(&self) -> bool {
        matches!(self, InstanceKind::RitsI | InstanceKind::GruD)
    }

    fn has_replacement_regression(&self) -> bool {
        matches!(self, InstanceKind::SimpleRecursion | InstanceKind::RitsI)
    }

    fn has_input_discount(&self) -> bool {
        matches!(self, InstanceKind::GruD)
    }
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InstanceKind::SimpleRecursion => "simple",
            InstanceKind::ZeroFillingIndicators => "zerofill",
            InstanceKind::ForwardFillingIndicators => "fwdfill",
            InstanceKind::RitsI => "rits-i",
            InstanceKind::GruD => "gru-d",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Classification,
    Regression,
}

impl Objective {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Objective::Classification),
            "regression" => Ok(Objective::Regression),
            other => Err(RiseError::Config(format!(
                "unknown objective `{other}` (expected classification|regression)"
            ))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Classification => "classification",
            Objective::Regression => "regression",
        })
    }
}

/// Fully determines the recursion: instance kind, encoder settings,
/// recurrent stack dimensions, and the prediction objective.
#[derive(Debug, Clone, Copy)]
pub struct RiseConfig {
    pub instance: InstanceKind,
    pub encoder: EncoderSpec,
    pub d_h: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    pub objective: Objective,
}

impl RiseConfig {
    pub fn head_out(&self) -> usize {
        match self.objective {
            Objective::Classification => self.n_classes,
            Objective::Regression => 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        let d = self.encoder.dim();
        match self.instance {
            InstanceKind::SimpleRecursion => d,
            _ => d + 1,
        }
    }
}

/// Training-split statistics the model's data-dependent state derives from.
#[derive(Debug, Clone)]
pub struct TrainStats {
    /// All observed values in the training split.
    pub x_values: Vec<f64>,
    /// All normalized time gaps in the training split.
    pub delta_values: Vec<f64>,
    /// Median sampling interval of the training split; normalizes timestamps.
    pub delta_unit: f64,
}

/// exp(-max(0, W e + b)), applied elementwise; always in (0, 1].
pub fn discount(tape: &mut Tape, w: TensorId, b: TensorId, e_delta: TensorId) -> Result<TensorId> {
    let we = tape.matmul(w, e_delta)?;
    let a = tape.add(we, b)?;
    let r = tape.max0(a);
    let minus_one = tape.constant_scalar(-1.0);
    let neg = tape.mul(r, minus_one)?;
    Ok(tape.exp(neg))
}

/// Model parameters plus the fitted encoder state for one configuration.
#[derive(Debug, Clone)]
pub struct RiseModel {
    pub cfg: RiseConfig,
    pub store: ParameterStore,
    pub enc_x: Encoder,
    pub enc_d: Encoder,
    pub delta_unit: f64,
}

impl RiseModel {
    pub fn new(cfg: RiseConfig, stats: &TrainStats, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        let enc_x = Encoder::register(&mut store, "enc.x", cfg.encoder, &stats.x_values, seed)?;
        let enc_d = Encoder::register(&mut store, "enc.d", cfg.encoder, &stats.delta_values, seed)?;
        let d = cfg.encoder.dim();
        gru::register_gru_stack(&mut store, "gru", cfg.input_dim(), cfg.d_h, cfg.n_layers, seed);
        store.register(
            "head.w",
            vec![cfg.head_out(), cfg.d_h],
            Init::Xavier { fan_in: cfg.d_h, fan_out: cfg.head_out() },
            seed,
        );
        store.register("head.b", vec![cfg.head_out(), 1], Init::Zeros, seed);
        if cfg.instance.has_replacement_regression() {
            store.register(
                "repl.w",
                vec![d, cfg.d_h],
                Init::Xavier { fan_in: cfg.d_h, fan_out: d },
                seed,
            );
            store.register("repl.b", vec![d, 1], Init::Zeros, seed);
        }
        if cfg.instance.decays_hidden() {
            store.register(
                "disc.h.w",
                vec![cfg.d_h, d],
                Init::Xavier { fan_in: d, fan_out: cfg.d_h },
                seed,
            );
            store.register("disc.h.b", vec![cfg.d_h, 1], Init::Zeros, seed);
        }
        if cfg.instance.has_input_discount() {
            store.register("disc.x.w", vec![d, d], Init::Xavier { fan_in: d, fan_out: d }, seed);
            store.register("disc.x.b", vec![d, 1], Init::Zeros, seed);
        }
        Ok(RiseModel { cfg, store, enc_x, enc_d, delta_unit: stats.delta_unit })
    }

    /// One forward pass over a whole series on the given tape.
    ///
    /// `x_av` is the training-split mean of the series' observed values
    /// (Table-row average; also the documented fallback for the forward-fill
    /// value before the first observation).
    pub fn forward(&self, tape: &mut Tape, series: &MaskedSeries, x_av: f64) -> Result<Trace> {
        let cfg = &self.cfg;
        let n = series.len();
        let delta = compute_delta(series, self.delta_unit);

        let enc_x = self.enc_x.bind(tape, &self.store)?;
        let enc_d = self.enc_d.bind(tape, &self.store)?;
        let layers: Vec<BoundGru> = (0..cfg.n_layers)
            .map(|l| BoundGru::bind(tape, &self.store, "gru", l))
            .collect::<Result<_>>()?;
        let repl = if cfg.instance.has_replacement_regression() {
            Some((tape.param(&self.store, "repl.w")?, tape.param(&self.store, "repl.b")?))
        } else {
            None
        };
        let disc_h = if cfg.instance.decays_hidden() {
            Some((tape.param(&self.store, "disc.h.w")?, tape.param(&self.store, "disc.h.b")?))
        } else {
            None
        };
        let disc_x = if cfg.instance.has_input_discount() {
            Some((tape.param(&self.store, "disc.x.w")?, tape.param(&self.store, "disc.x.b")?))
        } else {
            None
        };

        let zero_h = tape.constant(Tensor::column(vec![0.0; cfg.d_h]));
        let mut state: Vec<TensorId> = vec![zero_h; cfg.n_layers];
        let mut x_last: Option<f64> = None;
        let mut trace = Trace {
            top_hidden: Vec::with_capacity(n),
            inputs: Vec::with_capacity(n),
            delta,
            replacements: 0,
        };

        for i in 0..n {
            let observed = series.m[i];
            // encoded time gap, only materialized when a discount consumes it
            let e_delta = if disc_h.is_some() || disc_x.is_some() {
                Some(enc_d.encode(tape, trace.delta[i])?)
            } else {
                None
            };

            let e_c = if observed {
                enc_x.encode(tape, series.x[i])?
            } else {
                trace.replacements += 1;
                match cfg.instance {
                    InstanceKind::SimpleRecursion | InstanceKind::RitsI => {
                        let (w, b) = repl.expect("replacement regression registered");
                        let wh = tape.matmul(w, state[0])?;
                        tape.add(wh, b)?
                    }
                    InstanceKind::ZeroFillingIndicators => enc_x.encode(tape, 0.0)?,
                    InstanceKind::ForwardFillingIndicators => {
                        enc_x.encode(tape, x_last.unwrap_or(x_av))?
                    }
                    InstanceKind::GruD => match x_last {
                        None => enc_x.encode(tape, x_av)?,
                        Some(last) => {
                            let (w, b) = disc_x.expect("input discount registered");
                            let gamma = discount(tape, w, b, e_delta.expect("delta encoded"))?;
                            let e_last = enc_x.encode(tape, last)?;
                            let e_av = enc_x.encode(tape, x_av)?;
                            let one = tape.constant_scalar(1.0);
                            let gc = tape.sub(one, gamma)?;
                            let a = tape.mul(gamma, e_last)?;
                            let b2 = tape.mul(gc, e_av)?;
                            tape.add(a, b2)?
                        }
                    },
                }
            };

            let input = match cfg.instance.indicator(observed) {
                None => e_c,
                Some(bit) => {
                    let flag = tape.constant(Tensor::column(vec![bit]));
                    tape.concat(&[e_c, flag], 0)?
                }
            };

            let cell_state: Vec<TensorId> = match disc_h {
                None => state.clone(),
                Some((w, b)) => {
                    // one shared decay map, applied to every layer's hidden
                    let gamma = discount(tape, w, b, e_delta.expect("delta encoded"))?;
                    state
                        .iter()
                        .map(|&h| tape.mul(gamma, h))
                        .collect::<Result<_>>()?
                }
            };

            trace.inputs.push(input);
            state = gru::stack_step(tape, &layers, input, &cell_state)?;
            trace.top_hidden.push(*state.last().expect("at least one layer"));

            if observed {
                x_last = Some(series.x[i]);
            }
        }
        Ok(trace)
    }

    /// Binds the prediction head; `logits = W h + b`.
    pub fn head(&self, tape: &mut Tape) -> Result<(TensorId, TensorId)> {
        Ok((tape.param(&self.store, "head.w")?, tape.param(&self.store, "head.b")?))
    }

    pub fn apply_head(
        &self,
        tape: &mut Tape,
        head: (TensorId, TensorId),
        hidden: TensorId,
    ) -> Result<TensorId> {
        let wh = tape.matmul(head.0, hidden)?;
        tape.add(wh, head.1)
    }
}

/// Everything recorded during a forward pass that prediction and loss need.
pub struct Trace {
    /// Top-layer hidden state after each step.
    pub top_hidden: Vec<TensorId>,
    /// Transformed input fed to the stack at each step.
    pub inputs: Vec<TensorId>,
    /// Normalized time gaps, one per step.
    pub delta: Vec<f64>,
    /// How many steps triggered the replacement-input path.
    pub replacements: usize,
}
