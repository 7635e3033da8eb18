//! Two-phase attention: bilinear per-aspect triple scores, read back as
//! simulated user preferences, encoded, weighted and merged into one
//! distribution over the triples.

use crate::lstm::BiLstm;
use crate::numeric::{Graph, NumericError, ParamId, Var};
use crate::Scalar;

/// `s[j][i] = h_i W_j cᵀ` as an `m × n` matrix.
pub fn multi_aspect_scores<T: Scalar>(
    g: &mut Graph<'_, T>,
    h: Var,
    c: Var,
    aspects: &[ParamId],
) -> Result<Var, NumericError> {
    if aspects.is_empty() {
        return Err(NumericError::Empty { op: "multi_aspect_scores" });
    }
    let ht = g.transpose(h);
    let mut rows = Vec::with_capacity(aspects.len());
    for &id in aspects {
        let w = g.param(id);
        let wt = g.transpose(w);
        let cw = g.matmul(c, wt)?;
        rows.push(g.matmul(cw, ht)?);
    }
    g.concat_rows(&rows)
}

/// Each aspect's scores taken as one user's preference over the triples.
pub fn simulate_users<T: Scalar>(_g: &mut Graph<'_, T>, s: Var) -> Var {
    s
}

/// `a*[j] = u*_j W* c*ᵀ`, unnormalized, as an `m × 1` column.
pub fn user_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    u_star: Var,
    c_star: Var,
    w_star: ParamId,
) -> Result<Var, NumericError> {
    let w = g.param(w_star);
    let uw = g.matmul(u_star, w)?;
    let ct = g.transpose(c_star);
    g.matmul(uw, ct)
}

/// Logits `z = a*ᵀ u` (`1 × n`); the final attention is their softmax.
pub fn integrate<T: Scalar>(g: &mut Graph<'_, T>, u: Var, a_star: Var) -> Result<Var, NumericError> {
    let at = g.transpose(a_star);
    g.matmul(at, u)
}

/// How simulated user preferences are turned into preference weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UserPhase {
    /// BiLSTM over the user sequence, then the bilinear preference score.
    BiLstm { lstm: BiLstm, w_star: ParamId },
    /// One tanh layer per user instead of the BiLSTM; context is the mean.
    Fcn { w: ParamId, b: ParamId, w_star: ParamId },
    /// Every user weighted 1.
    Equal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Simulator {
    pub aspects: Vec<ParamId>,
    pub users: UserPhase,
}

/// Graph nodes of one simulator pass.
#[derive(Clone, Copy, Debug)]
pub struct SimulatorVars {
    pub s: Var,
    pub u: Var,
    pub u_star: Option<Var>,
    pub c_star: Option<Var>,
    pub a_star: Var,
    pub z: Var,
}

impl Simulator {
    pub fn layers(&self) -> usize {
        self.aspects.len()
    }

    /// Whether [`Simulator::run`] needs a user-sequence order.
    pub fn reads_user_sequence(&self) -> bool {
        matches!(self.users, UserPhase::BiLstm { .. })
    }

    pub fn run<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
        c: Var,
        user_order: &[usize],
    ) -> Result<SimulatorVars, NumericError> {
        let s = multi_aspect_scores(g, h, c, &self.aspects)?;
        let u = simulate_users(g, s);
        let m = self.layers();
        let (u_star, c_star, a_star) = match self.users {
            UserPhase::BiLstm { lstm, w_star } => {
                let (us, cs) = lstm.encode(g, u, user_order)?;
                (Some(us), Some(cs), user_attention(g, us, cs, w_star)?)
            }
            UserPhase::Fcn { w, b, w_star } => {
                let n = g.shape(u).1;
                let wv = g.param(w);
                let wv = g.slice_rows(wv, 0, n)?;
                let bv = g.param(b);
                let pre = g.matmul(u, wv)?;
                let pre = g.add(pre, bv)?;
                let us = g.tanh(pre);
                let cs = g.mean_rows(us)?;
                (Some(us), Some(cs), user_attention(g, us, cs, w_star)?)
            }
            UserPhase::Equal => (None, None, g.constant(ndarray::Array2::ones((m, 1)))),
        };
        let z = integrate(g, u, a_star)?;
        Ok(SimulatorVars {
            s,
            u,
            u_star,
            c_star,
            a_star,
            z,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{softmax, ParamStore};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    #[test]
    fn score_examples() {
        let mut store = ParamStore::new();
        let w = store.insert("w", array![[1.0, 0.0], [0.0, 2.0]], true).unwrap();
        let zero = store.insert("z", Array2::zeros((2, 2)), true).unwrap();
        let eye = store.insert("i", Array2::eye(2), true).unwrap();
        let mut g = Graph::new(&store);
        let h = g.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let c = g.row(&[1.0, 1.0]);
        let s = multi_aspect_scores(&mut g, h, c, &[w]).unwrap();
        assert_eq!(g.value(s), array![[1.0, 2.0]]);
        let s0 = multi_aspect_scores(&mut g, h, c, &[zero, zero]).unwrap();
        assert_eq!(g.value(s0), Array2::<f64>::zeros((2, 2)));

        let c2 = g.row(&[0.6, -0.8]);
        let h2 = g.constant(array![[0.6, -0.8], [0.6, -0.8], [0.6, -0.8]]);
        let s2 = multi_aspect_scores(&mut g, h2, c2, &[eye]).unwrap();
        for &v in g.value(s2).iter() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        }
        let u = simulate_users(&mut g, s2);
        assert_eq!(g.value(u), g.value(s2));
    }

    #[test]
    fn user_attention_examples() {
        let mut store = ParamStore::new();
        let eye = store.insert("i", Array2::eye(3), true).unwrap();
        let zero = store.insert("z", Array2::zeros((3, 3)), true).unwrap();
        let mut g = Graph::new(&store);
        let us = g.constant(Array2::eye(3));
        let cs = g.row(&[1.0, 0.0, 0.0]);
        let a = user_attention(&mut g, us, cs, eye).unwrap();
        assert_eq!(g.value(a), array![[1.0], [0.0], [0.0]]);
        let a0 = user_attention(&mut g, us, cs, zero).unwrap();
        assert_eq!(g.value(a0), Array2::<f64>::zeros((3, 1)));
    }

    #[test]
    fn integrate_examples() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let u = g.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let a_star = g.constant(array![[1.0], [1.0]]);
        let z = integrate(&mut g, u, a_star).unwrap();
        assert_eq!(g.value(z), array![[4.0, 6.0]]);
        let a = softmax(g.value(z).as_slice().unwrap());
        let e = (-2.0f64).exp();
        assert_abs_diff_eq!(a[0], e / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(a[0], 0.1192, epsilon = 1e-4);
        assert_abs_diff_eq!(a[1], 0.8808, epsilon = 1e-4);

        let zeros = g.constant(Array2::zeros((3, 4)));
        let w = g.constant(array![[0.3], [-1.0], [2.0]]);
        let z = integrate(&mut g, zeros, w).unwrap();
        for p in softmax(g.value(z).as_slice().unwrap()) {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        }
    }
}
