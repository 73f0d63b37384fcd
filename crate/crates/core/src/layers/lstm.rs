use super::init::ParamBuilder;
use crate::autodiff::{Array, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Hidden and cell state for a batch of rows.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// LSTM cell. Gate layout in the fused weight columns: input, forget,
/// candidate, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

pub const FORGET_BIAS: f64 = 1.0;

impl Lstm {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let wx = pb.fan_in_uniform(&format!("{name}.wx"), input, 4 * hidden)?;
        let wh = pb.fan_in_uniform(&format!("{name}.wh"), hidden, 4 * hidden)?;
        let mut bias = Array::zeros(1, 4 * hidden);
        bias.data_mut()[hidden..2 * hidden].fill(FORGET_BIAS);
        let b = pb.constant(&format!("{name}.b"), bias)?;
        Ok(Lstm { wx, wh, b, input, hidden })
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, state: LstmState) -> Result<LstmState> {
        let xs = g.shape(x).to_vec();
        let hs = g.shape(state.h).to_vec();
        let cs = g.shape(state.c).to_vec();
        if xs.len() != 2 || xs[1] != self.input || hs != [xs[0], self.hidden] || cs != hs {
            return Err(Error::shape(
                "lstm_step",
                format!(
                    "input {xs:?}, h {hs:?}, c {cs:?}; cell expects input width {} and hidden {}",
                    self.input, self.hidden
                ),
            ));
        }
        let rows = xs[0];
        let n = self.hidden;
        let wx = g.param(store, self.wx);
        let wh = g.param(store, self.wh);
        let b = g.param(store, self.b);
        let zx = g.matmul(x, wx)?;
        let zh = g.matmul(state.h, wh)?;
        let z = g.add(zx, zh)?;
        let bb = g.broadcast_rows(b, rows)?;
        let z = g.add(z, bb)?;

        let i = g.slice(z, 1, 0, n)?;
        let f = g.slice(z, 1, n, n)?;
        let cand = g.slice(z, 1, 2 * n, n)?;
        let o = g.slice(z, 1, 3 * n, n)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let cand = g.tanh(cand)?;
        let o = g.sigmoid(o)?;

        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
