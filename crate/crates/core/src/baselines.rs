//! TransE, DistMult and RotatE reference scorers.
//!
//! All three report lower-is-better distances so the same loss and ranking
//! code serves every model; DistMult's trilinear product is negated.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::hie::Norm;
use crate::kg_data::{Side, Triple};
use crate::model::{CandidateScorer, GradSet, KgeModel, Matrix, ModelKind, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    TransE,
    DistMult,
    RotatE,
}

impl TryFrom<ModelKind> for BaselineKind {
    type Error = Error;

    fn try_from(kind: ModelKind) -> Result<Self> {
        match kind {
            ModelKind::TransE => Ok(BaselineKind::TransE),
            ModelKind::DistMult => Ok(BaselineKind::DistMult),
            ModelKind::RotatE => Ok(BaselineKind::RotatE),
            ModelKind::Hie => Err(Error::config("model", "hie is not a baseline")),
        }
    }
}

impl From<BaselineKind> for ModelKind {
    fn from(kind: BaselineKind) -> Self {
        match kind {
            BaselineKind::TransE => ModelKind::TransE,
            BaselineKind::DistMult => ModelKind::DistMult,
            BaselineKind::RotatE => ModelKind::RotatE,
        }
    }
}

/// Entity and relation tables. For RotatE, entity rows hold `d/2` complex
/// numbers as consecutive `(re, im)` pairs and relation rows hold `d/2`
/// phase angles.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub ent: Matrix,
    pub rel: Matrix,
}

pub fn transe_score(params: &BaselineParams, h: usize, r: usize, t: usize, norm: Norm) -> f64 {
    let u: Vec<f64> = params
        .ent
        .row(h)
        .iter()
        .zip(params.rel.row(r))
        .zip(params.ent.row(t))
        .map(|((a, b), c)| a + b - c)
        .collect();
    norm.of(&u)
}

pub fn distmult_score(params: &BaselineParams, h: usize, r: usize, t: usize) -> f64 {
    let prod: f64 = params
        .ent
        .row(h)
        .iter()
        .zip(params.rel.row(r))
        .zip(params.ent.row(t))
        .map(|((a, b), c)| (a * c) * b)
        .sum();
    -prod
}

#[inline]
fn rotate_residual(h: &[f64], phases: &[f64], t: &[f64], out: &mut [f64]) {
    for (j, &theta) in phases.iter().enumerate() {
        let (sin, cos) = theta.sin_cos();
        let (a, b) = (h[2 * j], h[2 * j + 1]);
        out[2 * j] = a * cos - b * sin - t[2 * j];
        out[2 * j + 1] = a * sin + b * cos - t[2 * j + 1];
    }
}

pub fn rotate_score(params: &BaselineParams, h: usize, r: usize, t: usize) -> f64 {
    let mut u = vec![0.0; params.ent.cols];
    rotate_residual(params.ent.row(h), params.rel.row(r), params.ent.row(t), &mut u);
    Norm::L2.of(&u)
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        -PI
    } else {
        wrapped
    }
}

#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    /// TransE distance norm; RotatE always uses L2.
    pub norm: Norm,
    pub params: BaselineParams,
}

impl BaselineModel {
    pub fn init(
        kind: BaselineKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        norm: Norm,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        if kind == BaselineKind::RotatE && dim % 2 != 0 {
            return Err(Error::config("dim", "RotatE needs an even width"));
        }
        let bound = 6.0 / (dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ent = Matrix::from_fn(num_entities, dim, |_, _| rng.gen_range(-bound..bound));
        let rel = match kind {
            BaselineKind::RotatE => Matrix::from_fn(num_relations, dim / 2, |_, _| rng.gen_range(-PI..PI)),
            _ => Matrix::from_fn(num_relations, dim, |_, _| rng.gen_range(-bound..bound)),
        };
        Ok(Self {
            kind,
            norm,
            params: BaselineParams { ent, rel },
        })
    }

    fn score_ids(&self, h: usize, r: usize, t: usize) -> f64 {
        match self.kind {
            BaselineKind::TransE => transe_score(&self.params, h, r, t, self.norm),
            BaselineKind::DistMult => distmult_score(&self.params, h, r, t),
            BaselineKind::RotatE => rotate_score(&self.params, h, r, t),
        }
    }
}

struct BaselineScorer<'m> {
    model: &'m BaselineModel,
    side: Side,
}

impl CandidateScorer for BaselineScorer<'_> {
    fn side(&self) -> Side {
        self.side
    }

    fn score_candidate(&self, triple: &Triple, candidate: usize) -> f64 {
        let t = triple.with(self.side, candidate);
        self.model.score_ids(t.head, t.rel, t.tail)
    }
}

impl KgeModel for BaselineModel {
    fn kind(&self) -> ModelKind {
        self.kind.into()
    }

    fn num_entities(&self) -> usize {
        self.params.ent.rows
    }

    fn num_relations(&self) -> usize {
        self.params.rel.rows
    }

    fn score(&self, t: &Triple) -> f64 {
        self.score_ids(t.head, t.rel, t.tail)
    }

    fn candidate_scorer(&self, side: Side) -> Box<dyn CandidateScorer + '_> {
        Box::new(BaselineScorer { model: self, side })
    }

    fn score_extended(&self, t: &Triple) -> TwoFloat {
        let h = self.params.ent.row(t.head);
        let r = self.params.rel.row(t.rel);
        let tl = self.params.ent.row(t.tail);
        let x = |v: f64| TwoFloat::from(v);
        let zero = x(0.0);
        match self.kind {
            BaselineKind::TransE => {
                let u = (0..h.len()).map(|i| x(h[i]) + x(r[i]) - x(tl[i]));
                match self.norm {
                    Norm::L1 => u.fold(zero, |acc, v| acc + v.abs()),
                    Norm::L2 => u.fold(zero, |acc, v| acc + v * v).sqrt(),
                }
            }
            BaselineKind::DistMult => -(0..h.len()).fold(zero, |acc, i| acc + x(h[i]) * x(r[i]) * x(tl[i])),
            BaselineKind::RotatE => {
                let mut sq = zero;
                for (j, &theta) in r.iter().enumerate() {
                    let (sin, cos) = x(theta).sin_cos();
                    let (a, b) = (x(h[2 * j]), x(h[2 * j + 1]));
                    let re = a * cos - b * sin - x(tl[2 * j]);
                    let im = a * sin + b * cos - x(tl[2 * j + 1]);
                    sq += re * re + im * im;
                }
                sq.sqrt()
            }
        }
    }

    fn accumulate_gradients(&self, triples: &[Triple], coefs: &[f64], grads: &mut GradSet) {
        let d = self.params.ent.cols;
        let mut u = vec![0.0; d];
        let mut g = vec![0.0; d];
        let (mut dh, mut dr, mut dt) = (vec![0.0; d], vec![0.0; self.params.rel.cols], vec![0.0; d]);
        for (tr, &c) in triples.iter().zip(coefs) {
            if c == 0.0 {
                continue;
            }
            let h = self.params.ent.row(tr.head);
            let r = self.params.rel.row(tr.rel);
            let t = self.params.ent.row(tr.tail);
            match self.kind {
                BaselineKind::TransE => {
                    for i in 0..d {
                        u[i] = h[i] + r[i] - t[i];
                    }
                    let value = self.norm.of(&u);
                    self.norm.grad_into(&u, value, &mut g);
                    for i in 0..d {
                        dh[i] = c * g[i];
                        dr[i] = c * g[i];
                        dt[i] = -c * g[i];
                    }
                }
                BaselineKind::DistMult => {
                    for i in 0..d {
                        dh[i] = -c * r[i] * t[i];
                        dr[i] = -c * h[i] * t[i];
                        dt[i] = -c * h[i] * r[i];
                    }
                }
                BaselineKind::RotatE => {
                    rotate_residual(h, r, t, &mut u);
                    let value = Norm::L2.of(&u);
                    Norm::L2.grad_into(&u, value, &mut g);
                    for (j, &theta) in r.iter().enumerate() {
                        let (sin, cos) = theta.sin_cos();
                        let (a, b) = (h[2 * j], h[2 * j + 1]);
                        let (gre, gim) = (c * g[2 * j], c * g[2 * j + 1]);
                        dh[2 * j] = gre * cos + gim * sin;
                        dh[2 * j + 1] = -gre * sin + gim * cos;
                        dr[j] = gre * (-a * sin - b * cos) + gim * (a * cos - b * sin);
                        dt[2 * j] = -gre;
                        dt[2 * j + 1] = -gim;
                    }
                }
            }
            for (tensor, id, delta) in [(0, tr.head, &dh), (1, tr.rel, &dr), (0, tr.tail, &dt)] {
                grads
                    .row_mut(tensor, id)
                    .iter_mut()
                    .zip(delta.iter())
                    .for_each(|(x, y)| *x += y);
            }
        }
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        vec![
            TensorSpec::rows("ent", self.params.ent.rows, self.params.ent.cols),
            TensorSpec::rows("rel", self.params.rel.rows, self.params.rel.cols),
        ]
    }

    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.params.ent.data, &self.params.rel.data]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.params.ent.data, &mut self.params.rel.data]
    }

    fn normalize(&mut self) {
        if self.kind == BaselineKind::RotatE {
            self.params.rel.data.iter_mut().for_each(|x| *x = wrap_phase(*x));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(ent: Vec<Vec<f64>>, rel: Vec<Vec<f64>>) -> BaselineParams {
        let m = |rows: Vec<Vec<f64>>| {
            let cols = rows[0].len();
            Matrix {
                rows: rows.len(),
                cols,
                data: rows.concat(),
            }
        };
        BaselineParams { ent: m(ent), rel: m(rel) }
    }

    #[test]
    fn transe_examples() {
        let p = params(vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]], vec![vec![0.0, 1.0]]);
        assert_eq!(transe_score(&p, 0, 0, 1, Norm::L1), 0.0);
        assert_eq!(transe_score(&p, 0, 0, 2, Norm::L1), 2.0);
        assert!((transe_score(&p, 0, 0, 2, Norm::L2) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distmult_examples() {
        let p = params(vec![vec![1.0, 1.0], vec![0.0, 0.0]], vec![vec![1.0, 1.0]]);
        assert_eq!(distmult_score(&p, 0, 0, 0), -2.0);
        assert_eq!(distmult_score(&p, 0, 0, 1), 0.0);
    }

    #[test]
    fn rotate_examples() {
        let p = params(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0], vec![PI / 2.0]]);
        assert_eq!(rotate_score(&p, 0, 0, 0), 0.0);
        assert!(rotate_score(&p, 0, 1, 1) < 1e-15);
    }

    #[test]
    fn wrap_phase_range() {
        for x in [-10.0, -PI, 0.0, PI, 3.5, 100.0] {
            let w = wrap_phase(x);
            assert!((-PI..PI).contains(&w), "{x} -> {w}");
            assert!(((w - x).sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn extended_score_agrees_with_score() {
        let cases = [
            (BaselineKind::TransE, Norm::L1),
            (BaselineKind::TransE, Norm::L2),
            (BaselineKind::DistMult, Norm::L2),
            (BaselineKind::RotatE, Norm::L2),
        ];
        for (kind, norm) in cases {
            let m = BaselineModel::init(kind, 7, 3, 8, norm, 4).unwrap();
            for h in 0..7 {
                for r in 0..3 {
                    let tr = Triple::new(h, r, (h * 3 + r) % 7);
                    let got = f64::from(m.score_extended(&tr));
                    let want = m.score(&tr);
                    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{kind:?}: {got} vs {want}");
                }
            }
        }
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-2.0f64..2.0, n)
    }

    proptest! {
        #[test]
        fn transe_translation_invariant(h in vecs(4), r in vecs(4), t in vecs(4), c in vecs(4)) {
            let base = params(vec![h.clone(), t.clone()], vec![r.clone()]);
            let shift = |v: &[f64]| v.iter().zip(&c).map(|(a, b)| a + b).collect::<Vec<_>>();
            let moved = params(vec![shift(&h), shift(&t)], vec![r]);
            for norm in [Norm::L1, Norm::L2] {
                let a = transe_score(&base, 0, 0, 1, norm);
                let b = transe_score(&moved, 0, 0, 1, norm);
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn distmult_symmetric(h in vecs(5), r in vecs(5), t in vecs(5)) {
            let p = params(vec![h, t], vec![r]);
            prop_assert_eq!(distmult_score(&p, 0, 0, 1), distmult_score(&p, 1, 0, 0));
        }

        #[test]
        fn rotate_preserves_modulus(h in vecs(6), phases in proptest::collection::vec(-PI..PI, 3)) {
            let zero = vec![0.0; 6];
            let mut rotated = vec![0.0; 6];
            rotate_residual(&h, &phases, &zero, &mut rotated);
            for j in 0..3 {
                let before = h[2 * j].hypot(h[2 * j + 1]);
                let after = rotated[2 * j].hypot(rotated[2 * j + 1]);
                prop_assert!((before - after).abs() < 1e-12);
            }
        }
    }
}
