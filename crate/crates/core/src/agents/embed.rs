use std::f64::consts::FRAC_PI_2;

use crate::error::{FlstError, Result};
use crate::nn::Mlp;

/// Fixed-length description of a student network.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentState(Vec<f64>);

impl StudentState {
    pub fn new(values: Vec<f64>) -> Self {
        StudentState(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Summarizes every hidden row `W_n:` by `|⟨W_n:, a⟩|` and the angle between
/// `W_n:` and a fixed reference vector `a`, one reference per hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentEmbedder {
    layer_sizes: Vec<usize>,
    references: Vec<Vec<f64>>,
    expected_dim: usize,
}

impl StudentEmbedder {
    /// References are `1/√fan_in` in every entry (unit norm).
    pub fn new(student_layer_sizes: &[usize]) -> Result<Self> {
        if student_layer_sizes.len() < 3 {
            return Err(FlstError::config(
                "student must have at least one hidden layer",
            ));
        }
        let hidden = &student_layer_sizes[1..student_layer_sizes.len() - 1];
        let references = student_layer_sizes[..hidden.len()]
            .iter()
            .map(|&fan_in| vec![1.0 / (fan_in as f64).sqrt(); fan_in])
            .collect();
        Ok(StudentEmbedder {
            layer_sizes: student_layer_sizes.to_vec(),
            references,
            expected_dim: 2 * hidden.iter().sum::<usize>(),
        })
    }

    pub fn expected_dim(&self) -> usize {
        self.expected_dim
    }

    pub fn references(&self) -> &[Vec<f64>] {
        &self.references
    }

    pub fn embed(&self, student: &Mlp) -> Result<StudentState> {
        if student.layer_sizes() != self.layer_sizes.as_slice() {
            return Err(FlstError::shape(format!(
                "student sizes {:?} do not match embedder sizes {:?}",
                student.layer_sizes(),
                self.layer_sizes
            )));
        }
        let mut v = Vec::with_capacity(self.expected_dim);
        for (w, a) in student.weights().iter().zip(&self.references) {
            let a_norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            for row in w.row_iter() {
                let dot: f64 = row.iter().zip(a).map(|(x, y)| x * y).sum();
                let row_norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                let angle = if row_norm == 0.0 {
                    FRAC_PI_2
                } else {
                    (dot / (row_norm * a_norm)).clamp(-1.0, 1.0).acos()
                };
                v.push(dot.abs());
                v.push(angle);
            }
        }
        debug_assert_eq!(v.len(), self.expected_dim);
        Ok(StudentState(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Matrix};
    use proptest::prelude::*;

    fn student_with_first_layer(rows: Vec<Vec<f64>>) -> Mlp {
        let m = rows.len();
        let n = rows[0].len();
        Mlp::from_parts(
            vec![n, m, 2],
            vec![Matrix::from_rows(&rows).unwrap(), Matrix::zeros(2, m)],
            vec![vec![0.0; m], vec![0.0; 2]],
            vec![Activation::Relu, Activation::Softmax],
        )
        .unwrap()
    }

    #[test]
    fn aligned_and_orthogonal_rows() {
        let a = 0.5; // 1/sqrt(4)
        let net =
            student_with_first_layer(vec![vec![a; 4], vec![1.0, -1.0, 1.0, -1.0], vec![0.0; 4]]);
        let emb = StudentEmbedder::new(&[4, 3, 2]).unwrap();
        let v = emb.embed(&net).unwrap();
        assert_eq!(v.len(), 6);
        assert!((v.as_slice()[0] - 1.0).abs() < 1e-15); // ‖a‖² = 1
        assert!(v.as_slice()[1].abs() < 1e-7);
        assert_eq!(v.as_slice()[2], 0.0);
        assert!((v.as_slice()[3] - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(v.as_slice()[5], FRAC_PI_2);
    }

    #[test]
    fn tabular_student_embeds_to_200() {
        let acts = [Activation::Relu, Activation::Relu, Activation::Softmax];
        let net = Mlp::new(&[12, 50, 50, 7], &acts, 0).unwrap();
        let emb = StudentEmbedder::new(net.layer_sizes()).unwrap();
        assert_eq!(emb.embed(&net).unwrap().len(), 200);
    }

    #[test]
    fn mismatched_student() {
        let emb = StudentEmbedder::new(&[4, 3, 2]).unwrap();
        let net = Mlp::new(&[4, 5, 2], &[Activation::Relu, Activation::Softmax], 0).unwrap();
        assert!(matches!(emb.embed(&net), Err(FlstError::Shape(_))));
    }

    proptest! {
        #[test]
        fn length_and_ranges(sizes in proptest::collection::vec(1usize..12, 3..6), seed in any::<u64>()) {
            let mut acts = vec![Activation::Tanh; sizes.len() - 2];
            acts.push(Activation::Softmax);
            let net = Mlp::new(&sizes, &acts, seed).unwrap();
            let emb = StudentEmbedder::new(&sizes).unwrap();
            let v = emb.embed(&net).unwrap();
            let hidden: usize = sizes[1..sizes.len() - 1].iter().sum();
            prop_assert_eq!(v.len(), 2 * hidden);
            for pair in v.as_slice().chunks(2) {
                prop_assert!(pair[0] >= 0.0);
                prop_assert!((0.0..=std::f64::consts::PI).contains(&pair[1]));
            }
        }
    }
}
