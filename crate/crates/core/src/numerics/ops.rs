//! Element-wise activations, grouped softmax, L1 distance and row normalisation,
//! each paired with the derivative used by the hand-written backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter().map(|&v| leaky_relu_scalar(v, slope)).collect()
}

#[inline]
pub fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// The outer non-linearity applied to aggregated neighbourhood messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::Config(format!("unknown activation {s:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

/// Partition of a flat value vector into softmax groups.
///
/// Stored in CSR form: `order[offsets[g]..offsets[g + 1]]` lists the members of group `g`.
#[derive(Clone, Debug)]
pub struct GroupIndex {
    group_of: Vec<usize>,
    order: Vec<usize>,
    offsets: Vec<usize>,
}

impl GroupIndex {
    pub fn new(group_of: Vec<usize>, n_groups: usize) -> Result<Self> {
        let mut counts = vec![0usize; n_groups];
        for &g in &group_of {
            if g >= n_groups {
                return Err(Error::Dimension(format!(
                    "group id {g} out of range {n_groups}"
                )));
            }
            counts[g] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyGroup(empty));
        }
        let mut offsets = Vec::with_capacity(n_groups + 1);
        offsets.push(0);
        for c in &counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        let mut cursor = offsets[..n_groups].to_vec();
        let mut order = vec![0; group_of.len()];
        for (idx, &g) in group_of.iter().enumerate() {
            order[cursor[g]] = idx;
            cursor[g] += 1;
        }
        Ok(GroupIndex {
            group_of,
            order,
            offsets,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.group_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_of.is_empty()
    }

    pub fn group_of(&self, element: usize) -> usize {
        self.group_of[element]
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.order[self.offsets[group]..self.offsets[group + 1]]
    }
}

/// Softmax computed independently inside each group, max-shifted for stability.
pub fn grouped_softmax(values: &[f64], groups: &GroupIndex) -> Result<Vec<f64>> {
    if values.len() != groups.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} grouped elements",
            values.len(),
            groups.len()
        )));
    }
    let mut out = vec![0.0; values.len()];
    for g in 0..groups.n_groups() {
        softmax_into(values, groups.members(g), &mut out);
    }
    Ok(out)
}

pub(crate) fn softmax_into(values: &[f64], members: &[usize], out: &mut [f64]) {
    let max = members
        .iter()
        .map(|&i| values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &i in members {
        let e = (values[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for &i in members {
        out[i] /= total;
    }
}

/// Backward of [`grouped_softmax`]: `dv_i = α_i (dα_i − Σ_j α_j dα_j)` within each group.
pub fn grouped_softmax_backward(alpha: &[f64], d_alpha: &[f64], groups: &GroupIndex) -> Vec<f64> {
    let mut dv = vec![0.0; alpha.len()];
    for g in 0..groups.n_groups() {
        let members = groups.members(g);
        let inner: f64 = members.iter().map(|&i| alpha[i] * d_alpha[i]).sum();
        for &i in members {
            dv[i] = alpha[i] * (d_alpha[i] - inner);
        }
    }
    dv
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "l1 distance between lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

/// Subgradient of `|x|`, taken as 0 at 0.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable `log(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scales every row to unit L2 norm; returns the pre-scaling norms for the backward pass.
/// Zero rows are left at zero.
pub fn normalize_rows(m: &mut Matrix) -> Vec<f64> {
    (0..m.rows())
        .map(|i| {
            let row = m.row_mut(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
            norm
        })
        .collect()
}

/// Backward of [`normalize_rows`] given the normalised output and original norms.
pub fn normalize_rows_backward(normalized: &Matrix, norms: &[f64], grad_out: &Matrix) -> Matrix {
    let mut grad_in = Matrix::zeros(normalized.rows(), normalized.cols());
    for (i, &norm) in norms.iter().enumerate() {
        if norm == 0.0 {
            continue;
        }
        let y = normalized.row(i);
        let g = grad_out.row(i);
        let proj: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((out, &yi), &gi) in grad_in.row_mut(i).iter_mut().zip(y).zip(g) {
            *out = (gi - yi * proj) / norm;
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn leaky_relu_cases() {
        assert_eq!(leaky_relu(&[3.0, -1.0, 0.0], 0.2), vec![3.0, -0.2, 0.0]);
    }

    #[test]
    fn softmax_cases() {
        let single = GroupIndex::new(vec![0], 1).unwrap();
        assert_eq!(grouped_softmax(&[7.5], &single).unwrap(), vec![1.0]);

        let pair = GroupIndex::new(vec![0, 0], 1).unwrap();
        assert_eq!(grouped_softmax(&[2.0, 2.0], &pair).unwrap(), vec![0.5, 0.5]);

        // exp(0) / (1 + 3) and exp(ln 3) / (1 + 3)
        let a = grouped_softmax(&[0.0, 3f64.ln()], &pair).unwrap();
        assert!((a[0] - 0.25).abs() < 1e-15);
        assert!((a[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_group_rejected() {
        assert!(matches!(
            GroupIndex::new(vec![0, 2], 3),
            Err(Error::EmptyGroup(1))
        ));
    }

    #[test]
    fn l1_cases() {
        assert_eq!(l1_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l1_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(l1_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn l1_matches_loop() {
        let a = [0.3, -1.2, 4.0, 0.0, 2.5];
        let b = [1.1, -0.2, -3.0, 0.5, 2.5];
        let mut expected = 0.0;
        for i in 0..5 {
            let d = a[i] - b[i];
            expected += if d < 0.0 { -d } else { d };
        }
        assert!((l1_distance(&a, &b).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(softplus(-40.0) < 1e-17);
        assert_eq!(softplus(500.0), 500.0);
        assert!(softplus(-500.0).is_finite());
    }

    proptest! {
        #[test]
        fn softmax_groups_sum_to_one(
            vals in prop::collection::vec(-50.0f64..50.0, 1..40),
            n_groups in 1usize..5,
        ) {
            let n_groups = n_groups.min(vals.len());
            let ids: Vec<usize> = (0..vals.len()).map(|i| i % n_groups).collect();
            let g = GroupIndex::new(ids, n_groups).unwrap();
            let a = grouped_softmax(&vals, &g).unwrap();
            for gi in 0..n_groups {
                let s: f64 = g.members(gi).iter().map(|&i| a[i]).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_shift_invariant(
            vals in prop::collection::vec(-20.0f64..20.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let g = GroupIndex::new(vec![0; vals.len()], 1).unwrap();
            let a = grouped_softmax(&vals, &g).unwrap();
            let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            let b = grouped_softmax(&shifted, &g).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() / x.abs().max(1e-300) < 1e-10);
            }
        }
    }
}
