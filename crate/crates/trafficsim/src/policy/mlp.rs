//! Fully-connected network with tanh hidden layers and a linear output
//! head, written generically so the same forward pass runs on plain floats
//! or on the differentiation tape.

use serde::{Deserialize, Serialize};

use crate::tape::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl MlpShape {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        MlpShape {
            input,
            hidden,
            output,
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut prev = self.input;
        for &h in self.hidden.iter().chain(std::iter::once(&self.output)) {
            n += prev * h + h;
            prev = h;
        }
        n
    }
}

/// Forward pass. `params` is the flat weight/bias vector laid out layer by
/// layer (row-major weights, then biases). Panics on layout mismatch; the
/// public entry points validate dimensions first.
pub fn mlp_forward<R: Real>(shape: &MlpShape, params: &[R], input: &[R]) -> Vec<R> {
    debug_assert_eq!(params.len(), shape.param_count());
    debug_assert_eq!(input.len(), shape.input);
    let mut cur: Vec<R> = input.to_vec();
    let mut offset = 0;
    let n_layers = shape.hidden.len() + 1;
    let mut prev = shape.input;
    for (li, &width) in shape
        .hidden
        .iter()
        .chain(std::iter::once(&shape.output))
        .enumerate()
    {
        let w = &params[offset..offset + prev * width];
        let b = &params[offset + prev * width..offset + prev * width + width];
        offset += prev * width + width;
        let mut next = Vec::with_capacity(width);
        for j in 0..width {
            let row = &w[j * prev..(j + 1) * prev];
            let mut acc = b[j];
            for i in 0..prev {
                acc = row[i].mul_add(cur[i], acc);
            }
            if li + 1 < n_layers {
                acc = acc.tanh();
            }
            next.push(acc);
        }
        cur = next;
        prev = width;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn param_count_matches_layout() {
        let shape = MlpShape::new(81, vec![64, 64, 64], 4);
        assert_eq!(
            shape.param_count(),
            81 * 64 + 64 + 64 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4
        );
    }

    #[test]
    fn zero_params_give_zero_output() {
        let shape = MlpShape::new(5, vec![8, 8], 3);
        let params = vec![0.0; shape.param_count()];
        let out = mlp_forward(&shape, &params, &[0.3, -0.2, 1.0, 0.5, -0.9]);
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn tape_gradients_match_finite_differences() {
        let shape = MlpShape::new(4, vec![6, 5], 2);
        let mut rng = StdRng::seed_from_u64(19);
        let mut params: Vec<f64> = (0..shape.param_count())
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let input: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // d(out[0]) / d(params) via the tape.
        let tape = Tape::new();
        let pv = tape.vars(&params);
        let iv = tape.vars(&input);
        let out = mlp_forward(&shape, &pv, &iv);
        let adj = tape.backward(out[0]);

        let h = 1e-6;
        for k in 0..params.len() {
            let orig = params[k];
            params[k] = orig + h;
            let hi = mlp_forward(&shape, &params, &input)[0];
            params[k] = orig - h;
            let lo = mlp_forward(&shape, &params, &input)[0];
            params[k] = orig;
            let fd = (hi - lo) / (2.0 * h);
            let ad = adj.wrt(pv[k]);
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-2);
            assert!(rel < 1e-6, "param {k}: {ad} vs {fd}");
        }
    }
}
