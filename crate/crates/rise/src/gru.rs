//! GRU cell and stacked layers used as the recurrent backbone.
//!
//! Convention: z gates retention of the previous state,
//! h' = z (*) h_prev + (1 - z) (*) n, with the reset gate applied to h
//! before the candidate's recurrent weights (Cho variant).

use crate::error::Result;
use crate::tensor::{Init, ParameterStore, Tape, TensorId};

const GATES: [&str; 3] = ["z", "r", "n"];

/// Registers one GRU layer's parameters under `prefix.l{layer}.{gate}.{w|u|b}`.
pub fn register_gru_layer(
    store: &mut ParameterStore,
    prefix: &str,
    layer: usize,
    d_in: usize,
    d_h: usize,
    seed: u64,
) {
    for gate in GATES {
        store.register(
            &format!("{prefix}.l{layer}.{gate}.w"),
            vec![d_h, d_in],
            Init::Xavier { fan_in: d_in, fan_out: d_h },
            seed,
        );
        store.register(
            &format!("{prefix}.l{layer}.{gate}.u"),
            vec![d_h, d_h],
            Init::Xavier { fan_in: d_h, fan_out: d_h },
            seed,
        );
        store.register(&format!("{prefix}.l{layer}.{gate}.b"), vec![d_h, 1], Init::Zeros, seed);
    }
}

/// Registers a stack of GRU layers; layer 0 consumes `d_in`, deeper layers
/// consume the previous layer's hidden vector.
pub fn register_gru_stack(
    store: &mut ParameterStore,
    prefix: &str,
    d_in: usize,
    d_h: usize,
    n_layers: usize,
    seed: u64,
) {
    for layer in 0..n_layers {
        let layer_in = if layer == 0 { d_in } else { d_h };
        register_gru_layer(store, prefix, layer, layer_in, d_h, seed);
    }
}

/// One GRU layer's parameters bound onto a tape for a single forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    pub w_z: TensorId,
    pub u_z: TensorId,
    pub b_z: TensorId,
    pub w_r: TensorId,
    pub u_r: TensorId,
    pub b_r: TensorId,
    pub w_n: TensorId,
    pub u_n: TensorId,
    pub b_n: TensorId,
}

impl BoundGru {
    pub fn bind(tape: &mut Tape, store: &ParameterStore, prefix: &str, layer: usize) -> Result<Self> {
        let mut ids = [TensorId(0); 9];
        for (g, gate) in GATES.iter().enumerate() {
            ids[g * 3] = tape.param(store, &format!("{prefix}.l{layer}.{gate}.w"))?;
            ids[g * 3 + 1] = tape.param(store, &format!("{prefix}.l{layer}.{gate}.u"))?;
            ids[g * 3 + 2] = tape.param(store, &format!("{prefix}.l{layer}.{gate}.b"))?;
        }
        Ok(BoundGru {
            w_z: ids[0],
            u_z: ids[1],
            b_z: ids[2],
            w_r: ids[3],
            u_r: ids[4],
            b_r: ids[5],
            w_n: ids[6],
            u_n: ids[7],
            b_n: ids[8],
        })
    }
}

fn affine(tape: &mut Tape, w: TensorId, x: TensorId, u: TensorId, h: TensorId, b: TensorId) -> Result<TensorId> {
    let wx = tape.matmul(w, x)?;
    let uh = tape.matmul(u, h)?;
    let s = tape.add(wx, uh)?;
    tape.add(s, b)
}

/// z = sig(W_z x + U_z h + b_z); r = sig(W_r x + U_r h + b_r);
/// n = tanh(W_n x + U_n (r (*) h) + b_n); h' = z (*) h + (1 - z) (*) n.
pub fn gru_step(tape: &mut Tape, p: &BoundGru, x: TensorId, h_prev: TensorId) -> Result<TensorId> {
    let za = affine(tape, p.w_z, x, p.u_z, h_prev, p.b_z)?;
    let z = tape.sigmoid(za);
    let ra = affine(tape, p.w_r, x, p.u_r, h_prev, p.b_r)?;
    let r = tape.sigmoid(ra);
    let rh = tape.mul(r, h_prev)?;
    let na = affine(tape, p.w_n, x, p.u_n, rh, p.b_n)?;
    let n = tape.tanh(na);
    let zh = tape.mul(z, h_prev)?;
    let one = tape.constant_scalar(1.0);
    let zc = tape.sub(one, z)?;
    let zn = tape.mul(zc, n)?;
    tape.add(zh, zn)
}

/// Runs one time step through every layer; layer 0 consumes `x`, layer k
/// consumes layer k-1's new hidden vector. Returns the new per-layer hiddens.
pub fn stack_step(
    tape: &mut Tape,
    layers: &[BoundGru],
    x: TensorId,
    state: &[TensorId],
) -> Result<Vec<TensorId>> {
    let mut out = Vec::with_capacity(layers.len());
    let mut input = x;
    for (layer, h_prev) in layers.iter().zip(state) {
        let h = gru_step(tape, layer, input, *h_prev)?;
        out.push(h);
        input = h;
    }
    Ok(out)
}
