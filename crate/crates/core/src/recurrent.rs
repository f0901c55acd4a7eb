//! Convolutional LSTM cell: a standard non-peephole formulation with 3x3
//! gate convolutions. The hidden state doubles as the level's preliminary
//! prediction, so every entry of f_out lies strictly inside (-1, 1).

use crate::error::{PcError, Result};
use crate::init::kaiming_uniform;
use crate::tensor::{Graph, Real, Var};
use ndarray::{Array1, Array4};
use rand::Rng;

/// Gate convolutions: [f_in; h] -> (i, f, g, o) pre-activations.
#[derive(Debug, Clone)]
pub struct ConvLstmCell<T: Real> {
    pub weight: Array4<T>, // (4C, 2C, 3, 3)
    pub bias: Array1<T>,   // (4C,), forget slice starts at 1
}

impl<T: Real> ConvLstmCell<T> {
    pub fn init<R: Rng>(channels: usize, rng: &mut R) -> Self {
        let weight = kaiming_uniform::<T, _>(
            &[4 * channels, 2 * channels, 3, 3],
            2 * channels * 9,
            rng,
        )
        .into_dimensionality()
        .expect("static shape");
        let mut bias = Array1::zeros(4 * channels);
        // Forget gate opens the memory path from the start.
        for c in channels..2 * channels {
            bias[c] = T::one();
        }
        ConvLstmCell { weight, bias }
    }

    pub fn zeroed(channels: usize) -> Self {
        ConvLstmCell {
            weight: Array4::zeros((4 * channels, 2 * channels, 3, 3)),
            bias: Array1::zeros(4 * channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.dim().0 / 4
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ConvLstmVars {
        ConvLstmVars {
            w: g.leaf(self.weight.clone().into_dyn(), trainable),
            b: g.leaf(self.bias.clone().into_dyn(), trainable),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvLstmVars {
    pub w: Var,
    pub b: Var,
}

impl ConvLstmVars {
    pub fn collect(&self, out: &mut Vec<Var>) {
        out.extend([self.w, self.b]);
    }
}

/// Per-level recurrent memory, resident on the rollout graph.
#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub c: Var,
    pub h: Var,
}

/// The all-zeros state used at t = 0.
pub fn zero_state<T: Real>(g: &mut Graph<T>, channels: usize, h: usize, w: usize) -> CellState {
    CellState {
        c: g.zeros(&[channels, h, w]),
        h: g.zeros(&[channels, h, w]),
    }
}

/// One recurrent update. Returns the preliminary prediction f_out (= new h)
/// and the new state.
pub fn conv_lstm_step<T: Real>(
    g: &mut Graph<T>,
    vars: &ConvLstmVars,
    f_in: Var,
    state: &CellState,
) -> Result<(Var, CellState)> {
    let shape = g.value(f_in).shape().to_vec();
    if g.value(state.h).shape() != &shape[..] || g.value(state.c).shape() != &shape[..] {
        return Err(PcError::Shape(format!(
            "cell state shape {:?} does not match input {:?}",
            g.value(state.h).shape(),
            shape
        )));
    }
    let channels = shape[0];
    let x = g.concat_ch(f_in, state.h)?;
    let gates = g.conv2d(x, vars.w, Some(vars.b), 1, 1)?;
    let i_pre = g.slice_ch(gates, 0, channels)?;
    let f_pre = g.slice_ch(gates, channels, channels)?;
    let g_pre = g.slice_ch(gates, 2 * channels, channels)?;
    let o_pre = g.slice_ch(gates, 3 * channels, channels)?;
    let i_gate = g.logistic(i_pre);
    let f_gate = g.logistic(f_pre);
    let g_cand = g.tanh_of(g_pre);
    let o_gate = g.logistic(o_pre);
    let keep = g.mul(f_gate, state.c)?;
    let write = g.mul(i_gate, g_cand)?;
    let c_new = g.add(keep, write)?;
    let c_act = g.tanh_of(c_new);
    let h_new = g.mul(o_gate, c_act)?;
    Ok((
        h_new,
        CellState {
            c: c_new,
            h: h_new,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GradMode;
    use ndarray::{ArrayD, IxDyn};
    use rand::SeedableRng;

    #[test]
    fn zero_everything_stays_zero() {
        let cell = ConvLstmCell::<f64>::zeroed(2);
        let mut g = Graph::new(GradMode::Eval);
        let vars = cell.bind(&mut g, false);
        let state = zero_state(&mut g, 2, 4, 4);
        let f_in = g.zeros(&[2, 4, 4]);
        let (f_out, new_state) = conv_lstm_step(&mut g, &vars, f_in, &state).unwrap();
        assert!(g.value(f_out).iter().all(|&v| v == 0.0));
        assert!(g.value(new_state.c).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_matches_input() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let cell = ConvLstmCell::<f64>::init(3, &mut rng);
        let mut g = Graph::new(GradMode::Eval);
        let vars = cell.bind(&mut g, false);
        let state = zero_state(&mut g, 3, 6, 5);
        let f_in = g.leaf(ArrayD::from_elem(IxDyn(&[3, 6, 5]), 0.2), false);
        let (f_out, _) = conv_lstm_step(&mut g, &vars, f_in, &state).unwrap();
        assert_eq!(g.value(f_out).shape(), &[3, 6, 5]);
    }

    #[test]
    fn hidden_state_is_strictly_bounded() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let cell = ConvLstmCell::<f64>::init(2, &mut rng);
        let mut g = Graph::new(GradMode::Eval);
        let vars = cell.bind(&mut g, false);
        let mut state = zero_state(&mut g, 2, 5, 5);
        for _ in 0..4 {
            let f_in = g.leaf(
                ArrayD::from_shape_fn(IxDyn(&[2, 5, 5]), |_| rng.random_range(-3.0..3.0)),
                false,
            );
            let (f_out, s) = conv_lstm_step(&mut g, &vars, f_in, &state).unwrap();
            state = s;
            assert!(g.value(f_out).iter().all(|&v| v.abs() < 1.0));
        }
    }

    #[test]
    fn step_is_deterministic() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let cell = ConvLstmCell::<f32>::init(2, &mut rng);
        let input = ArrayD::from_shape_fn(IxDyn(&[2, 5, 5]), |_| rng.random_range(-1.0f32..1.0));
        let run = || {
            let mut g = Graph::new(GradMode::Eval);
            let vars = cell.bind(&mut g, false);
            let state = zero_state(&mut g, 2, 5, 5);
            let f_in = g.leaf(input.clone(), false);
            let (f_out, _) = conv_lstm_step(&mut g, &vars, f_in, &state).unwrap();
            g.value(f_out).clone()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn state_shape_mismatch_is_rejected() {
        let cell = ConvLstmCell::<f64>::zeroed(2);
        let mut g = Graph::new(GradMode::Eval);
        let vars = cell.bind(&mut g, false);
        let state = zero_state(&mut g, 2, 4, 4);
        let f_in = g.zeros(&[2, 6, 6]);
        assert!(matches!(
            conv_lstm_step(&mut g, &vars, f_in, &state),
            Err(PcError::Shape(_))
        ));
    }
}
