//! Single-layer LSTM cells and a bidirectional wrapper on top of [`Graph`].

use ndarray::Array2;
use rand::Rng;

use crate::numeric::{glorot_uniform, Graph, NumericError, ParamId, ParamStore, Var};
use crate::Scalar;

/// One LSTM direction. Gate blocks are laid out `[input, forget, output,
/// candidate]` along the columns of every weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub w_in: ParamId,
    pub w_rec: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    /// Registers `{prefix}.w_in`, `{prefix}.w_rec` and `{prefix}.bias`.
    /// Forget-gate bias starts at one.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        let w_in = store.insert(&format!("{prefix}.w_in"), glorot_uniform(input, 4 * hidden, rng), true)?;
        let w_rec = store.insert(&format!("{prefix}.w_rec"), glorot_uniform(hidden, 4 * hidden, rng), true)?;
        let mut b = Array2::zeros((1, 4 * hidden));
        b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(T::one());
        let bias = store.insert(&format!("{prefix}.bias"), b, true)?;
        Ok(Self {
            w_in,
            w_rec,
            bias,
            hidden,
        })
    }

    /// Runs over the rows of `x` (`n × d`) visiting them in `order`, and
    /// returns the hidden state produced at each row, indexed by row.
    ///
    /// When `d` is smaller than the input weight's row count only the first
    /// `d` rows are used, which is the same as zero-padding `x` on the right.
    pub fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, order: &[usize]) -> Result<Vec<Var>, NumericError> {
        let (n, d) = g.shape(x);
        let mut w_in = g.param(self.w_in);
        if d < g.shape(w_in).0 {
            w_in = g.slice_rows(w_in, 0, d)?;
        }
        let xw = g.matmul(x, w_in)?;
        let b = g.param(self.bias);
        let pre_all = g.add(xw, b)?;
        let w_rec = g.param(self.w_rec);
        let hid = self.hidden;

        let mut out: Vec<Option<Var>> = vec![None; n];
        let mut state: Option<(Var, Var)> = None;
        for &row in order {
            let mut pre = g.slice_rows(pre_all, row, row + 1)?;
            if let Some((h, _)) = state {
                let rec = g.matmul(h, w_rec)?;
                pre = g.add(pre, rec)?;
            }
            let gate = |g: &mut Graph<'_, T>, k: usize| g.slice_cols(pre, k * hid, (k + 1) * hid);
            let i = gate(g, 0)?;
            let i = g.sigmoid(i);
            let o = gate(g, 2)?;
            let o = g.sigmoid(o);
            let cand = gate(g, 3)?;
            let cand = g.tanh(cand);
            let mut c = g.mul(i, cand)?;
            if let Some((_, c_prev)) = state {
                let f = gate(g, 1)?;
                let f = g.sigmoid(f);
                let keep = g.mul(f, c_prev)?;
                c = g.add(c, keep)?;
            }
            let tc = g.tanh(c);
            let h = g.mul(o, tc)?;
            out[row] = Some(h);
            state = Some((h, c));
        }
        out.into_iter()
            .map(|h| h.ok_or(NumericError::Empty { op: "lstm order" }))
            .collect()
    }
}

/// Forward and backward cells over a shared permutation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        Ok(Self {
            fwd: LstmCell::new(store, &format!("{prefix}.fwd"), input, hidden, rng)?,
            bwd: LstmCell::new(store, &format!("{prefix}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    /// Encodes the rows of `x` read in `order` left to right and right to
    /// left. Returns per-row states `n × 2H` in the original row order and
    /// the context `1 × 2H` made of both directions' final states.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, order: &[usize]) -> Result<(Var, Var), NumericError> {
        let n = g.shape(x).0;
        if n == 0 || order.len() != n {
            return Err(NumericError::Empty { op: "bilstm encode" });
        }
        let fwd = self.fwd.run(g, x, order)?;
        let reversed: Vec<usize> = order.iter().rev().copied().collect();
        let bwd = self.bwd.run(g, x, &reversed)?;
        let hf = g.concat_rows(&fwd)?;
        let hb = g.concat_rows(&bwd)?;
        let h = g.concat_cols(&[hf, hb])?;
        let c = g.concat_cols(&[fwd[order[n - 1]], bwd[order[0]]])?;
        Ok((h, c))
    }
}
