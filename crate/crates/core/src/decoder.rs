//! ConvKB scoring over the `k × 3` matrix `[h, g, t]`.
//!
//! Every filter `ω` (width 3) slides down the rows producing a `k`-long map
//! `ReLU(ω₀·h_d + ω₁·g_d + ω₂·t_d)`; the `Ω` maps are concatenated and dotted
//! with `W`. Lower scores mean more plausible triples.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Triple;
use crate::numerics::{sigmoid, softplus, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    /// `Ω × 3`
    pub filters: Matrix,
    /// `1 × (Ω·k)`, map `m` occupying `[m·k, (m+1)·k)`.
    pub w: Matrix,
}

impl DecoderParams {
    /// Filters near `[0.1, 0.1, −0.1]` plus uniform noise; `W` uniform.
    pub fn init<R: Rng + ?Sized>(n_filters: usize, dim: usize, noise: f64, rng: &mut R) -> Self {
        let mut filters = Matrix::zeros(n_filters, 3);
        for m in 0..n_filters {
            let row = filters.row_mut(m);
            row.copy_from_slice(&[0.1, 0.1, -0.1]);
            for v in row.iter_mut() {
                *v += rng.gen_range(-noise..=noise);
            }
        }
        let bound = (6.0 / (n_filters * dim + 1) as f64).sqrt();
        DecoderParams {
            filters,
            w: Matrix::uniform(1, n_filters * dim, bound, rng),
        }
    }

    pub fn n_filters(&self) -> usize {
        self.filters.rows()
    }

    pub fn dim(&self) -> usize {
        self.w.cols() / self.filters.rows().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters.cols() != 3 || self.filters.rows() == 0 {
            return Err(Error::Dimension("filters must be Ω × 3 with Ω ≥ 1".into()));
        }
        if self.w.rows() != 1 || self.w.cols() % self.filters.rows() != 0 {
            return Err(Error::Dimension(format!(
                "W is {}x{}, not 1 × Ω·k for Ω = {}",
                self.w.rows(),
                self.w.cols(),
                self.filters.rows()
            )));
        }
        Ok(())
    }
}

fn check_dims(h: &[f64], g: &[f64], t: &[f64], params: &DecoderParams) -> Result<()> {
    let k = params.dim();
    if h.len() != k || g.len() != k || t.len() != k {
        return Err(Error::Dimension(format!(
            "triple of widths {}/{}/{} for k = {k}",
            h.len(),
            g.len(),
            t.len()
        )));
    }
    Ok(())
}

/// `f(h, g, t)`; lower is more plausible.
pub fn convkb_score(h: &[f64], g: &[f64], t: &[f64], params: &DecoderParams) -> Result<f64> {
    params.validate()?;
    check_dims(h, g, t, params)?;
    Ok(score_unchecked(h, g, t, params))
}

fn score_unchecked(h: &[f64], g: &[f64], t: &[f64], params: &DecoderParams) -> f64 {
    let k = h.len();
    let w = params.w.row(0);
    let mut total = 0.0;
    for m in 0..params.n_filters() {
        let f = params.filters.row(m);
        let (a, b, c) = (f[0], f[1], f[2]);
        let wm = &w[m * k..(m + 1) * k];
        let mut acc = [0.0; 4];
        for d in 0..k {
            let z = a * h[d] + b * g[d] + c * t[d];
            acc[d % 4] += wm[d] * z.max(0.0);
        }
        total += (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
    total
}

/// Dot product with four independent accumulators so the loop vectorises.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Per-triple activations kept for the backward pass.
struct Scratch {
    /// `keep · ReLU(z)`
    act: Vec<f64>,
    /// `keep · [z > 0]`
    gate: Vec<f64>,
    keep: Vec<f64>,
    dz: Vec<f64>,
}

impl Scratch {
    fn new(width: usize, k: usize) -> Self {
        Scratch {
            act: vec![0.0; width],
            gate: vec![0.0; width],
            keep: vec![1.0; width],
            dz: vec![0.0; k],
        }
    }
}

/// Fills `keep` with `0` (probability ≈ `p`) or the inverted-dropout scale,
/// drawing 16 bits per entry.
fn fill_keep<R: Rng + ?Sized>(keep: &mut [f64], p: f64, rng: &mut R) {
    let threshold = (p * 65536.0).round() as u64;
    let scale = 1.0 / (1.0 - threshold as f64 / 65536.0);
    for chunk in keep.chunks_mut(4) {
        let bits = rng.next_u64();
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = if (bits >> (16 * i)) & 0xffff < threshold { 0.0 } else { scale };
        }
    }
}

fn forward_into(h: &[f64], g: &[f64], t: &[f64], params: &DecoderParams, s: &mut Scratch) -> f64 {
    let k = h.len();
    let w = params.w.row(0);
    let mut total = 0.0;
    for m in 0..params.n_filters() {
        let f = params.filters.row(m);
        let (a, b, c) = (f[0], f[1], f[2]);
        let range = m * k..(m + 1) * k;
        let act = &mut s.act[range.clone()];
        let gate = &mut s.gate[range.clone()];
        let keep = &s.keep[range.clone()];
        for d in 0..k {
            let z = a * h[d] + b * g[d] + c * t[d];
            let on = if z > 0.0 { keep[d] } else { 0.0 };
            gate[d] = on;
            act[d] = on * z;
        }
        total += dot4(&w[range], act);
    }
    total
}

/// Adds `scale · ∂f/∂(filters, W, h, g, t)` using the activations from [`forward_into`].
#[allow(clippy::too_many_arguments)]
fn backward_from(
    h: &[f64],
    g: &[f64],
    t: &[f64],
    params: &DecoderParams,
    s: &mut Scratch,
    scale: f64,
    grads: &mut ConvKb,
    (gh, gg, gt): (&mut [f64], &mut [f64], &mut [f64]),
) {
    let k = h.len();
    let w = params.w.row(0);
    let dw = grads.params.w.row_mut(0);
    for m in 0..params.n_filters() {
        let f = params.filters.row(m);
        let range = m * k..(m + 1) * k;
        for (d, a) in dw[range.clone()].iter_mut().zip(&s.act[range.clone()]) {
            *d += scale * a;
        }
        for ((dz, wi), gi) in s.dz.iter_mut().zip(&w[range.clone()]).zip(&s.gate[range]) {
            *dz = scale * wi * gi;
        }
        let df = grads.params.filters.row_mut(m);
        df[0] += dot4(&s.dz, h);
        df[1] += dot4(&s.dz, g);
        df[2] += dot4(&s.dz, t);
        for d in 0..k {
            gh[d] += s.dz[d] * f[0];
            gg[d] += s.dz[d] * f[1];
            gt[d] += s.dz[d] * f[2];
        }
    }
}

/// `Σ log(1 + exp(l·f)) + (λ/2)‖W‖²`, labels `+1` for valid and `−1` for invalid triples.
pub fn soft_margin_loss(scores: &[f64], labels: &[f64], params: &DecoderParams, lambda: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&f, &l) in scores.iter().zip(labels) {
        if !f.is_finite() {
            return Err(Error::NonFinite("decoder score".into()));
        }
        if l != 1.0 && l != -1.0 {
            return Err(Error::Config(format!("label {l} is not ±1")));
        }
        total += softplus(l * f);
    }
    Ok(total + 0.5 * lambda * params.w.frobenius_sq())
}

/// `∂/∂f log(1 + exp(l·f))`
#[inline]
pub fn soft_margin_grad(score: f64, label: f64) -> f64 {
    label * sigmoid(label * score)
}

/// ConvKB plus the embeddings it scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKb {
    pub params: DecoderParams,
    pub entities: Matrix,
    pub relations: Matrix,
}

impl ConvKb {
    pub fn new(params: DecoderParams, entities: Matrix, relations: Matrix) -> Result<Self> {
        params.validate()?;
        let k = params.dim();
        if entities.cols() != k || relations.cols() != k {
            return Err(Error::Dimension(format!(
                "embeddings {}/{} wide for k = {k}",
                entities.cols(),
                relations.cols()
            )));
        }
        Ok(ConvKb {
            params,
            entities,
            relations,
        })
    }

    pub fn score(&self, t: &Triple) -> f64 {
        score_unchecked(
            self.entities.row(t.head.index()),
            self.relations.row(t.relation.index()),
            self.entities.row(t.tail.index()),
            &self.params,
        )
    }

    pub fn zeros_like(&self) -> ConvKb {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        ConvKb {
            params: DecoderParams {
                filters: z(&self.params.filters),
                w: z(&self.params.w),
            },
            entities: z(&self.entities),
            relations: z(&self.relations),
        }
    }

    pub fn named_matrices(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("filters".to_string(), &self.params.filters),
            ("W".to_string(), &self.params.w),
            ("H".to_string(), &self.entities),
            ("G".to_string(), &self.relations),
        ]
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.params.filters,
            &mut self.params.w,
            &mut self.entities,
            &mut self.relations,
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named_matrices()
            .into_iter()
            .flat_map(|(_, m)| m.data().to_vec())
            .collect()
    }

    pub fn unflatten(&mut self, values: &[f64]) {
        let mut offset = 0;
        for m in self.matrices_mut() {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }

    /// Soft-margin loss over `(triple, label)` pairs and its gradient.
    ///
    /// `dropout` is `(p, rng)`: feature-map entries are zeroed with probability `p`.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        triples: &[Triple],
        labels: &[f64],
        lambda: f64,
        dropout: Option<(f64, &mut R)>,
    ) -> Result<(f64, ConvKb)> {
        if triples.len() != labels.len() {
            return Err(Error::Dimension("triples and labels differ in length".into()));
        }
        for t in triples {
            for e in [t.head, t.tail] {
                if e.index() >= self.entities.rows() {
                    return Err(Error::UnknownEntity(e.index()));
                }
            }
            if t.relation.index() >= self.relations.rows() {
                return Err(Error::UnknownRelation(t.relation.index()));
            }
        }
        let k = self.params.dim();
        let mut grads = self.zeros_like();
        let mut total = 0.0;
        let mut scratch = Scratch::new(self.params.n_filters() * k, k);
        let mut dropout = dropout.filter(|(p, _)| *p > 0.0);
        let (mut gh, mut gg, mut gt) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for (t, &label) in triples.iter().zip(labels) {
            if let Some((p, rng)) = dropout.as_mut() {
                fill_keep(&mut scratch.keep, *p, &mut **rng);
            }
            let (h, g, tl) = (
                self.entities.row(t.head.index()),
                self.relations.row(t.relation.index()),
                self.entities.row(t.tail.index()),
            );
            let f = forward_into(h, g, tl, &self.params, &mut scratch);
            if !f.is_finite() {
                return Err(Error::NonFinite("decoder score".into()));
            }
            total += softplus(label * f);
            let scale = soft_margin_grad(f, label);
            gh.fill(0.0);
            gg.fill(0.0);
            gt.fill(0.0);
            backward_from(h, g, tl, &self.params, &mut scratch, scale, &mut grads, (&mut gh, &mut gg, &mut gt));
            for (d, v) in grads.entities.row_mut(t.head.index()).iter_mut().zip(&gh) {
                *d += v;
            }
            for (d, v) in grads.relations.row_mut(t.relation.index()).iter_mut().zip(&gg) {
                *d += v;
            }
            for (d, v) in grads.entities.row_mut(t.tail.index()).iter_mut().zip(&gt) {
                *d += v;
            }
        }
        total += 0.5 * lambda * self.params.w.frobenius_sq();
        for (d, w) in grads.params.w.data_mut().iter_mut().zip(self.params.w.data()) {
            *d += lambda * w;
        }
        Ok((total, grads))
    }
}
