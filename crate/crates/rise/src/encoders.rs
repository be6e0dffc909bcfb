//! Encoding functions mapping one numerical value to a d-dimensional latent
//! vector. A dedicated encoder (with its own parameters) is used for the
//! observation signal and for the time gap signal.

use std::fmt;

use crate::error::{Result, RiseError};
use crate::gru::{self, BoundGru};
use crate::tensor::{Init, ParameterStore, Tape, Tensor, TensorId};

/// Clamp applied before `log` in the feedforward encoder so v = 0 (e.g. the
/// first time gap) is defined.
pub const LOG_CLAMP: f64 = 1e-6;

pub const TOKEN_DOT: u8 = 10;
pub const TOKEN_MINUS: u8 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Identity,
    Feedforward,
    Sinusoidal,
    Binning,
    DigitRecurrent,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 5] = [
        EncoderKind::Identity,
        EncoderKind::Feedforward,
        EncoderKind::Sinusoidal,
        EncoderKind::Binning,
        EncoderKind::DigitRecurrent,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "id" => Ok(EncoderKind::Identity),
            "ffw" => Ok(EncoderKind::Feedforward),
            "xfmr" => Ok(EncoderKind::Sinusoidal),
            "bin" => Ok(EncoderKind::Binning),
            "gru" => Ok(EncoderKind::DigitRecurrent),
            other => Err(RiseError::Config(format!(
                "unknown encoder `{other}` (expected id|ffw|xfmr|bin|gru)"
            ))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EncoderKind::Identity => "id",
            EncoderKind::Feedforward => "ffw",
            EncoderKind::Sinusoidal => "xfmr",
            EncoderKind::Binning => "bin",
            EncoderKind::DigitRecurrent => "gru",
        };
        f.write_str(s)
    }
}

/// Dimensions and rendering settings shared by both signal encoders.
#[derive(Debug, Clone, Copy)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub d: usize,
    pub d_d: usize,
    pub n_bin: usize,
    /// Decimal digits rendered by the digit tokenizer.
    pub precision: usize,
}

impl EncoderSpec {
    /// Latent dimension actually produced; identity is the d = 1 case.
    pub fn dim(&self) -> usize {
        match self.kind {
            EncoderKind::Identity => 1,
            _ => self.d,
        }
    }
}

/// Canonical digit rendering: optional '-', integer part without leading
/// zeros, then '.' and exactly `precision` decimals when precision > 0.
pub fn tokenize_number(v: f64, precision: usize) -> Vec<u8> {
    let mut s = format!("{v:.precision$}");
    // normalize "-0", "-0.00" to the unsigned rendering
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s.remove(0);
    }
    s.bytes()
        .map(|b| match b {
            b'0'..=b'9' => b - b'0',
            b'.' => TOKEN_DOT,
            b'-' => TOKEN_MINUS,
            _ => unreachable!("unexpected byte {b} in rendered number"),
        })
        .collect()
}

/// Inverse of the canonical rendering; used by round-trip checks.
pub fn parse_tokens(tokens: &[u8]) -> f64 {
    let s: String = tokens
        .iter()
        .map(|&t| match t {
            0..=9 => (b'0' + t) as char,
            TOKEN_DOT => '.',
            TOKEN_MINUS => '-',
            _ => unreachable!(),
        })
        .collect();
    s.parse().expect("token sequence is a valid number")
}

/// Quantile edges over the fitting values; bin k holds roughly n/n_bin points.
pub fn fit_quantile_bins(values: &[f64], n_bin: usize) -> Result<Vec<f64>> {
    if n_bin < 2 {
        return Err(RiseError::Config(format!("n_bin must be >= 2, got {n_bin}")));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = 0usize;
    for i in 0..sorted.len() {
        if i == 0 || sorted[i] != sorted[i - 1] {
            distinct += 1;
        }
    }
    if distinct < n_bin {
        return Err(RiseError::Config(format!(
            "need at least {n_bin} distinct values to fit {n_bin} bins, got {distinct}"
        )));
    }
    let n = sorted.len();
    Ok((1..n_bin).map(|k| sorted[k * n / n_bin]).collect())
}

/// Index of the bin holding `v`: values below every edge map to bin 0,
/// above every edge to the last bin.
pub fn bin_index(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|&e| e <= v)
}

/// A fitted encoder: parameter names registered in the store plus the
/// non-trainable state (bin edges, digit vocabulary) fixed on training data.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub prefix: String,
    /// Binning only; fitted on training data.
    pub edges: Vec<f64>,
    /// Digit vocabulary size: 11 tokens for nonnegative data, 12 with sign.
    pub vocab: usize,
}

impl Encoder {
    /// Registers parameters under `prefix.*` and fits any data-dependent
    /// state from `train_values` (training split only).
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        spec: EncoderSpec,
        train_values: &[f64],
        seed: u64,
    ) -> Result<Self> {
        if spec.d == 0 {
            return Err(RiseError::Config("encoder dimension d must be >= 1".into()));
        }
        let mut edges = Vec::new();
        let mut vocab = 11;
        match spec.kind {
            EncoderKind::Identity => {}
            EncoderKind::Feedforward => {
                store.register(
                    &format!("{prefix}.w"),
                    vec![spec.d, 1],
                    Init::Xavier { fan_in: 1, fan_out: spec.d },
                    seed,
                );
                store.register(&format!("{prefix}.b"), vec![spec.d, 1], Init::Zeros, seed);
            }
            EncoderKind::Sinusoidal => {
                if spec.d % 2 != 0 {
                    return Err(RiseError::Config(format!(
                        "sinusoidal encoder requires even d, got {}",
                        spec.d
                    )));
                }
                // wavelengths form a geometric progression from 2*pi to
                // 10000*2*pi; each sin/cos pair shares a frequency
                let freqs: Vec<f64> = (0..spec.d)
                    .map(|k| {
                        let pair = (k / 2) as f64;
                        10000f64.powf(-2.0 * pair / spec.d as f64)
                    })
                    .collect();
                store.register(&format!("{prefix}.w"), vec![spec.d, 1], Init::Values(freqs), seed);
            }
            EncoderKind::Binning => {
                edges = fit_quantile_bins(train_values, spec.n_bin)?;
                store.register(
                    &format!("{prefix}.wbin"),
                    vec![spec.d, spec.n_bin],
                    Init::Xavier { fan_in: spec.n_bin, fan_out: spec.d },
                    seed,
                );
            }
            EncoderKind::DigitRecurrent => {
                if train_values.iter().any(|&v| v < 0.0) {
                    vocab = 12;
                }
                store.register(
                    &format!("{prefix}.emb"),
                    vec![spec.d_d, vocab],
                    Init::Xavier { fan_in: vocab, fan_out: spec.d_d },
                    seed,
                );
                gru::register_gru_stack(store, &format!("{prefix}.dgru"), spec.d_d, spec.d, 1, seed);
            }
        }
        Ok(Encoder { spec, prefix: prefix.to_string(), edges, vocab })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape, store: &ParameterStore) -> Result<BoundEncoder<'a>> {
        let ids = match self.spec.kind {
            EncoderKind::Identity => BoundIds::None,
            EncoderKind::Feedforward => BoundIds::Ffw {
                w: tape.param(store, &format!("{}.w", self.prefix))?,
                b: tape.param(store, &format!("{}.b", self.prefix))?,
            },
            EncoderKind::Sinusoidal => {
                let d = self.spec.d;
                let even: Vec<f64> = (0..d).map(|k| if k % 2 == 0 { 1.0 } else { 0.0 }).collect();
                let odd: Vec<f64> = even.iter().map(|&m| 1.0 - m).collect();
                BoundIds::Xfmr {
                    w: tape.param(store, &format!("{}.w", self.prefix))?,
                    even: tape.constant(Tensor::column(even)),
                    odd: tape.constant(Tensor::column(odd)),
                }
            }
            EncoderKind::Binning => BoundIds::Bin {
                wbin: tape.param(store, &format!("{}.wbin", self.prefix))?,
            },
            EncoderKind::DigitRecurrent => BoundIds::Digit {
                emb: tape.param(store, &format!("{}.emb", self.prefix))?,
                gru: BoundGru::bind(tape, store, &format!("{}.dgru", self.prefix), 0)?,
            },
        };
        Ok(BoundEncoder { enc: self, ids })
    }
}

enum BoundIds {
    None,
    Ffw { w: TensorId, b: TensorId },
    Xfmr { w: TensorId, even: TensorId, odd: TensorId },
    Bin { wbin: TensorId },
    Digit { emb: TensorId, gru: BoundGru },
}

/// Encoder parameters bound onto one tape; reusable across time steps.
pub struct BoundEncoder<'a> {
    enc: &'a Encoder,
    ids: BoundIds,
}

impl BoundEncoder<'_> {
    pub fn encode(&self, tape: &mut Tape, v: f64) -> Result<TensorId> {
        match &self.ids {
            BoundIds::None => Ok(tape.constant(Tensor::column(vec![v]))),
            BoundIds::Ffw { w, b } => {
                let lv = tape.constant_scalar(v.max(LOG_CLAMP).ln());
                let wv = tape.mul(*w, lv)?;
                let a = tape.add(wv, *b)?;
                Ok(tape.sigmoid(a))
            }
            BoundIds::Xfmr { w, even, odd } => {
                let vc = tape.constant_scalar(v);
                let wv = tape.mul(*w, vc)?;
                let s = tape.sin(wv);
                let c = tape.cos(wv);
                let se = tape.mul(s, *even)?;
                let co = tape.mul(c, *odd)?;
                tape.add(se, co)
            }
            BoundIds::Bin { wbin } => {
                let idx = bin_index(&self.enc.edges, v);
                let mut one_hot = vec![0.0; self.enc.spec.n_bin];
                one_hot[idx] = 1.0;
                let oh = tape.constant(Tensor::column(one_hot));
                tape.matmul(*wbin, oh)
            }
            BoundIds::Digit { emb, gru } => {
                let tokens = tokenize_number(v, self.enc.spec.precision);
                if tokens.iter().any(|&t| t as usize >= self.enc.vocab) {
                    return Err(RiseError::Contract(format!(
                        "value {v} needs a sign token but the vocabulary has {} tokens",
                        self.enc.vocab
                    )));
                }
                let mut h = tape.constant(Tensor::column(vec![0.0; self.enc.spec.d]));
                for &t in &tokens {
                    let mut one_hot = vec![0.0; self.enc.vocab];
                    one_hot[t as usize] = 1.0;
                    let oh = tape.constant(Tensor::column(one_hot));
                    let e = tape.matmul(*emb, oh)?;
                    h = gru::gru_step(tape, gru, e, h)?;
                }
                Ok(h)
            }
        }
    }
}
