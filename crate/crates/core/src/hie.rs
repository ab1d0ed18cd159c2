//! HIE scoring: joint distance-space and semantic-space measurements over a
//! stack of hierarchical levels.
//!
//! Each entity/relation row of width `k` is split into a geometric half and a
//! semantic half. Level 1 projects each half through a role-specific diagonal
//! (head, tail, relation); every deeper level multiplies the previous level's
//! projection by a shared extraction matrix and adds back the raw half.
//!
//! At level `l` the distance term is `|| T_l(h_p, r_p) - t_p ||` under L1 or L2
//! and the semantic term is `|| h_s + r_s - t_s ||_2`. They are blended with
//! `alpha = sigmoid(blend_logit)` and the level scores are combined with the
//! fixed convex weights `lambda`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_data::{Side, Triple};
use crate::model::{CandidateScorer, GradSet, KgeModel, Matrix, ModelKind, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    /// Writes `d ||v|| / dv` into `out` given `value = ||v||`. The subgradient
    /// at L1 kinks and at the L2 origin is 0.
    pub fn grad_into(self, v: &[f64], value: f64, out: &mut [f64]) {
        match self {
            Norm::L1 => {
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            Norm::L2 => {
                if value > 0.0 {
                    for (o, &x) in out.iter_mut().zip(v) {
                        *o = x / value;
                    }
                } else {
                    out.iter_mut().for_each(|o| *o = 0.0);
                }
            }
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(Norm::L1),
            "l2" | "L2" => Ok(Norm::L2),
            other => Err(Error::config("norm", format!("expected l1 or l2, got {other:?}"))),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

/// How a level's transform seed combines with the relation projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    /// `h_p ∘ seed ∘ r_p`
    Diagonal,
    /// `(h_p · seed) r_p`
    Rank1,
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(TransformKind::Diagonal),
            "rank1" => Ok(TransformKind::Rank1),
            other => Err(Error::config(
                "transform",
                format!("expected diagonal or rank1, got {other:?}"),
            )),
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Diagonal => "diagonal",
            TransformKind::Rank1 => "rank1",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub disable_distance: bool,
    pub disable_semantic: bool,
    /// Drops the distance term at levels >= 2 only.
    pub disable_distance_deep: bool,
    /// Drops the semantic term at levels >= 2 only.
    pub disable_semantic_deep: bool,
}

impl Ablation {
    pub fn distance_active(&self, level: usize) -> bool {
        !(self.disable_distance || (level > 0 && self.disable_distance_deep))
    }

    pub fn semantic_active(&self, level: usize) -> bool {
        !(self.disable_semantic || (level > 0 && self.disable_semantic_deep))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HieConfig {
    /// Total embedding width; split evenly into the two halves.
    pub dim: usize,
    pub levels: usize,
    pub norm: Norm,
    /// Level weights, one per level, summing to 1.
    pub lambda: Vec<f64>,
    pub transform: TransformKind,
    #[serde(default)]
    pub ablation: Ablation,
}

/// Level weights: evenly spread if `lambda1` is `None`, otherwise `lambda1`
/// for the first level and the remainder spread evenly over the rest.
pub fn level_weights(levels: usize, lambda1: Option<f64>) -> Vec<f64> {
    match (levels, lambda1) {
        (0, _) => Vec::new(),
        (1, _) => vec![1.0],
        (n, None) => vec![1.0 / n as f64; n],
        (n, Some(first)) => {
            let rest = (1.0 - first) / (n - 1) as f64;
            std::iter::once(first)
                .chain(std::iter::repeat(rest).take(n - 1))
                .collect()
        }
    }
}

impl HieConfig {
    /// L1 distance, diagonal transform, uniform level weights, no ablation.
    pub fn new(dim: usize, levels: usize) -> Self {
        Self {
            dim,
            levels,
            norm: Norm::L1,
            lambda: level_weights(levels, None),
            transform: TransformKind::Diagonal,
            ablation: Ablation::default(),
        }
    }

    pub fn half(&self) -> usize {
        self.dim / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::config("dim", format!("must be a positive even width, got {}", self.dim)));
        }
        if self.levels == 0 {
            return Err(Error::config("levels", "must be >= 1"));
        }
        if self.lambda.len() != self.levels {
            return Err(Error::config(
                "lambda",
                format!("expected {} level weights, got {}", self.levels, self.lambda.len()),
            ));
        }
        if self.lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::config("lambda", "weights must lie in [0, 1]"));
        }
        let sum: f64 = self.lambda.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("lambda", format!("weights sum to {sum}, expected 1")));
        }
        if self.ablation.disable_distance && self.ablation.disable_semantic {
            return Err(Error::config(
                "ablation",
                "cannot disable both the distance and the semantic measurement",
            ));
        }
        Ok(())
    }

    /// `(distance weight, semantic weight)` at 0-based `level`. A disabled
    /// space hands its whole weight to the other one.
    pub fn blend(&self, level: usize, alpha: f64) -> (f64, f64) {
        match (
            self.ablation.distance_active(level),
            self.ablation.semantic_active(level),
        ) {
            (true, true) => (alpha, 1.0 - alpha),
            (false, true) => (0.0, 1.0),
            (true, false) => (1.0, 0.0),
            (false, false) => (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HieParams {
    /// `|E| x k`, rows `[geometric | semantic]`.
    pub ent: Matrix,
    /// `|R| x k`, rows `[geometric | semantic]`.
    pub rel: Matrix,
    pub diag_hp: Vec<f64>,
    pub diag_tp: Vec<f64>,
    pub diag_rp: Vec<f64>,
    pub diag_hs: Vec<f64>,
    pub diag_ts: Vec<f64>,
    pub diag_rs: Vec<f64>,
    /// One transform seed per level.
    pub transform_seed: Vec<Vec<f64>>,
    /// Geometric extraction matrix for each level transition.
    pub extract_p: Vec<Matrix>,
    /// Semantic extraction matrix for each level transition.
    pub extract_s: Vec<Matrix>,
    pub blend_logit: f64,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fresh parameters: embeddings uniform in `±6/sqrt(k)`, diagonals and
/// transform seeds all ones, extraction matrices zero, `alpha = 0.5`.
pub fn init_params(
    num_entities: usize,
    num_relations: usize,
    config: &HieConfig,
    seed: u64,
) -> Result<HieParams> {
    config.validate()?;
    let (k, half, n) = (config.dim, config.half(), config.levels);
    let bound = 6.0 / (k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = |rows: usize| Matrix::from_fn(rows, k, |_, _| rng.gen_range(-bound..bound));
    let ent = table(num_entities);
    let rel = table(num_relations);
    let ones = vec![1.0; half];
    Ok(HieParams {
        ent,
        rel,
        diag_hp: ones.clone(),
        diag_tp: ones.clone(),
        diag_rp: ones.clone(),
        diag_hs: ones.clone(),
        diag_ts: ones.clone(),
        diag_rs: ones.clone(),
        transform_seed: vec![ones; n],
        extract_p: vec![Matrix::zeros(half, half); n - 1],
        extract_s: vec![Matrix::zeros(half, half); n - 1],
        blend_logit: 0.0,
    })
}

impl HieParams {
    pub fn half(&self) -> usize {
        self.ent.cols / 2
    }

    pub fn levels(&self) -> usize {
        self.transform_seed.len()
    }

    pub fn alpha(&self) -> f64 {
        sigmoid(self.blend_logit)
    }

    fn diagonals(&self, role: Role) -> (&[f64], &[f64]) {
        match role {
            Role::Head => (&self.diag_hp, &self.diag_hs),
            Role::Tail => (&self.diag_tp, &self.diag_ts),
            Role::Relation => (&self.diag_rp, &self.diag_rs),
        }
    }

    fn row(&self, role: Role, id: usize) -> &[f64] {
        match role {
            Role::Relation => self.rel.row(id),
            _ => self.ent.row(id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Role {
    Head,
    Tail,
    Relation,
}

#[inline]
fn hadamard_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x * y;
    }
}

/// `out = x · m + base` with `x` a row vector.
#[inline]
fn lift_into(x: &[f64], m: &Matrix, base: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &xi) in x.iter().enumerate() {
        for (o, &mij) in out.iter_mut().zip(m.row(i)) {
            *o += xi * mij;
        }
    }
    for (o, b) in out.iter_mut().zip(base) {
        *o += b;
    }
}

/// Projections of one triple at a single level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelProjections {
    pub hp: Vec<f64>,
    pub tp: Vec<f64>,
    pub rp: Vec<f64>,
    pub hs: Vec<f64>,
    pub ts: Vec<f64>,
    pub rs: Vec<f64>,
}

/// The raw halves of a triple's rows, added back at every lift.
#[derive(Debug, Clone, Copy)]
pub struct BaseSegments<'a> {
    pub h0: &'a [f64],
    pub h1: &'a [f64],
    pub t0: &'a [f64],
    pub t1: &'a [f64],
    pub r0: &'a [f64],
    pub r1: &'a [f64],
}

impl<'a> BaseSegments<'a> {
    pub fn of(params: &'a HieParams, triple: &Triple) -> Self {
        let half = params.half();
        let (h0, h1) = params.ent.row(triple.head).split_at(half);
        let (t0, t1) = params.ent.row(triple.tail).split_at(half);
        let (r0, r1) = params.rel.row(triple.rel).split_at(half);
        Self { h0, h1, t0, t1, r0, r1 }
    }
}

pub fn project_level1(params: &HieParams, triple: &Triple) -> LevelProjections {
    let half = params.half();
    let base = BaseSegments::of(params, triple);
    let mut proj = LevelProjections {
        hp: vec![0.0; half],
        tp: vec![0.0; half],
        rp: vec![0.0; half],
        hs: vec![0.0; half],
        ts: vec![0.0; half],
        rs: vec![0.0; half],
    };
    hadamard_into(&params.diag_hp, base.h0, &mut proj.hp);
    hadamard_into(&params.diag_tp, base.t0, &mut proj.tp);
    hadamard_into(&params.diag_rp, base.r0, &mut proj.rp);
    hadamard_into(&params.diag_hs, base.h1, &mut proj.hs);
    hadamard_into(&params.diag_ts, base.t1, &mut proj.ts);
    hadamard_into(&params.diag_rs, base.r1, &mut proj.rs);
    proj
}

/// Lifts level `level` (1-based) projections to level `level + 1`.
pub fn lift_level(
    params: &HieParams,
    level: usize,
    current: &LevelProjections,
    base: &BaseSegments<'_>,
) -> Result<LevelProjections> {
    if level == 0 || level >= params.levels() {
        return Err(Error::config(
            "level",
            format!("cannot lift level {level} of a {}-level model", params.levels()),
        ));
    }
    let mp = &params.extract_p[level - 1];
    let ms = &params.extract_s[level - 1];
    let half = params.half();
    let lift = |x: &[f64], m: &Matrix, b: &[f64]| {
        let mut out = vec![0.0; half];
        lift_into(x, m, b, &mut out);
        out
    };
    Ok(LevelProjections {
        hp: lift(&current.hp, mp, base.h0),
        tp: lift(&current.tp, mp, base.t0),
        rp: lift(&current.rp, mp, base.r0),
        hs: lift(&current.hs, ms, base.h1),
        ts: lift(&current.ts, ms, base.t1),
        rs: lift(&current.rs, ms, base.r1),
    })
}

#[inline]
fn distance_residual(
    hp: &[f64],
    tp: &[f64],
    rp: &[f64],
    seed: &[f64],
    kind: TransformKind,
    out: &mut [f64],
) {
    match kind {
        TransformKind::Diagonal => {
            for i in 0..out.len() {
                out[i] = hp[i] * (seed[i] * rp[i]) - tp[i];
            }
        }
        TransformKind::Rank1 => {
            let s: f64 = hp.iter().zip(seed).map(|(a, b)| a * b).sum();
            for i in 0..out.len() {
                out[i] = s * rp[i] - tp[i];
            }
        }
    }
}

#[inline]
fn semantic_residual(hs: &[f64], rs: &[f64], ts: &[f64], out: &mut [f64]) {
    for i in 0..out.len() {
        out[i] = hs[i] + rs[i] - ts[i];
    }
}

/// Distance-space measurement at one level.
pub fn level_distance(
    hp: &[f64],
    tp: &[f64],
    rp: &[f64],
    seed: &[f64],
    norm: Norm,
    kind: TransformKind,
) -> f64 {
    let mut u = vec![0.0; hp.len()];
    distance_residual(hp, tp, rp, seed, kind, &mut u);
    norm.of(&u)
}

/// Semantic-space measurement `||h_s + r_s - t_s||_2` at one level.
pub fn level_semantic(hs: &[f64], rs: &[f64], ts: &[f64]) -> f64 {
    let mut v = vec![0.0; hs.len()];
    semantic_residual(hs, rs, ts, &mut v);
    Norm::L2.of(&v)
}

/// Per-level pieces of one triple's score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreBreakdown {
    /// Distance term per level; 0 where masked by ablation.
    pub d_p: Vec<f64>,
    /// Semantic term per level; 0 where masked by ablation.
    pub d_s: Vec<f64>,
    pub total: f64,
}

/// All-level projections of one row under one role, levels concatenated.
#[derive(Debug, Clone)]
struct Repr {
    p: Vec<f64>,
    s: Vec<f64>,
}

#[derive(Clone, Copy)]
struct ReprRef<'a> {
    p: &'a [f64],
    s: &'a [f64],
}

impl Repr {
    fn view(&self) -> ReprRef<'_> {
        ReprRef { p: &self.p, s: &self.s }
    }
}

fn build_chain(diag: &[f64], extract: &[Matrix], base: &[f64], out: &mut [f64]) {
    let half = base.len();
    hadamard_into(diag, base, &mut out[..half]);
    for (l, m) in extract.iter().enumerate() {
        let (done, rest) = out.split_at_mut((l + 1) * half);
        lift_into(&done[l * half..], m, base, &mut rest[..half]);
    }
}

#[derive(Debug, Clone)]
pub struct HieModel {
    pub config: HieConfig,
    pub params: HieParams,
}

struct Scratch {
    u: Vec<f64>,
    gu: Vec<f64>,
}

impl HieModel {
    pub fn init(num_entities: usize, num_relations: usize, config: HieConfig, seed: u64) -> Result<Self> {
        let params = init_params(num_entities, num_relations, &config, seed)?;
        Ok(Self { config, params })
    }

    pub fn new(config: HieConfig, params: HieParams) -> Result<Self> {
        config.validate()?;
        if params.half() != config.half() || params.levels() != config.levels {
            return Err(Error::Shape("parameters do not match the configuration".into()));
        }
        Ok(Self { config, params })
    }

    fn repr_into(&self, role: Role, id: usize, p: &mut [f64], s: &mut [f64]) {
        let half = self.params.half();
        let row = self.params.row(role, id);
        let (x0, x1) = row.split_at(half);
        let (dp, ds) = self.params.diagonals(role);
        build_chain(dp, &self.params.extract_p, x0, p);
        build_chain(ds, &self.params.extract_s, x1, s);
    }

    fn repr(&self, role: Role, id: usize) -> Repr {
        let n = self.params.half() * self.params.levels();
        let mut r = Repr {
            p: vec![0.0; n],
            s: vec![0.0; n],
        };
        self.repr_into(role, id, &mut r.p, &mut r.s);
        r
    }

    fn repr_table(&self, role: Role, count: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.params.half() * self.params.levels();
        let mut p = vec![0.0; n * count];
        let mut s = vec![0.0; n * count];
        for id in 0..count {
            self.repr_into(role, id, &mut p[id * n..(id + 1) * n], &mut s[id * n..(id + 1) * n]);
        }
        (p, s)
    }

    /// Walks every level, passing `(level, d_p, d_s)` after masking, and
    /// returns the combined score.
    fn fold_levels(
        &self,
        h: ReprRef<'_>,
        r: ReprRef<'_>,
        t: ReprRef<'_>,
        buf: &mut [f64],
        mut visit: impl FnMut(usize, f64, f64),
    ) -> f64 {
        let half = self.params.half();
        let alpha = self.params.alpha();
        let mut total = 0.0;
        for l in 0..self.config.levels {
            let span = l * half..(l + 1) * half;
            let (wp, ws) = self.config.blend(l, alpha);
            let dp = if self.config.ablation.distance_active(l) {
                distance_residual(
                    &h.p[span.clone()],
                    &t.p[span.clone()],
                    &r.p[span.clone()],
                    &self.params.transform_seed[l],
                    self.config.transform,
                    buf,
                );
                self.config.norm.of(buf)
            } else {
                0.0
            };
            let ds = if self.config.ablation.semantic_active(l) {
                semantic_residual(&h.s[span.clone()], &r.s[span.clone()], &t.s[span], buf);
                Norm::L2.of(buf)
            } else {
                0.0
            };
            visit(l, dp, ds);
            let term = match (
                self.config.ablation.distance_active(l),
                self.config.ablation.semantic_active(l),
            ) {
                (true, true) => wp * dp + ws * ds,
                (true, false) => dp,
                (false, true) => ds,
                (false, false) => 0.0,
            };
            total += self.config.lambda[l] * term;
        }
        total
    }

    pub fn score_breakdown(&self, triple: &Triple) -> ScoreBreakdown {
        let h = self.repr(Role::Head, triple.head);
        let r = self.repr(Role::Relation, triple.rel);
        let t = self.repr(Role::Tail, triple.tail);
        let n = self.config.levels;
        let mut d_p = vec![0.0; n];
        let mut d_s = vec![0.0; n];
        let mut buf = vec![0.0; self.params.half()];
        let total = self.fold_levels(h.view(), r.view(), t.view(), &mut buf, |l, dp, ds| {
            d_p[l] = dp;
            d_s[l] = ds;
        });
        ScoreBreakdown { d_p, d_s, total }
    }

    const SEED_BASE: usize = 8;

    fn seed_tensor(&self, level: usize) -> usize {
        Self::SEED_BASE + level
    }

    fn extract_p_tensor(&self, transition: usize) -> usize {
        Self::SEED_BASE + self.config.levels + transition
    }

    fn extract_s_tensor(&self, transition: usize) -> usize {
        Self::SEED_BASE + 2 * self.config.levels - 1 + transition
    }

    fn logit_tensor(&self) -> usize {
        Self::SEED_BASE + 3 * self.config.levels - 2
    }

    /// Gradient contributions of one triple at the projection level.
    #[allow(clippy::too_many_arguments)]
    fn triple_backward(
        &self,
        coef: f64,
        h: ReprRef<'_>,
        r: ReprRef<'_>,
        t: ReprRef<'_>,
        gh: &mut Repr,
        gr: &mut Repr,
        gt: &mut Repr,
        grads: &mut GradSet,
        d_logit: &mut f64,
        scratch: &mut Scratch,
    ) {
        let half = self.params.half();
        let alpha = self.params.alpha();
        for l in 0..self.config.levels {
            let span = l * half..(l + 1) * half;
            let dist_on = self.config.ablation.distance_active(l);
            let sem_on = self.config.ablation.semantic_active(l);
            let (wp, ws) = self.config.blend(l, alpha);
            let lam = self.config.lambda[l];
            let mut dp = 0.0;
            let mut ds = 0.0;
            if dist_on {
                let (hp, tp, rp) = (&h.p[span.clone()], &t.p[span.clone()], &r.p[span.clone()]);
                let seed = &self.params.transform_seed[l];
                distance_residual(hp, tp, rp, seed, self.config.transform, &mut scratch.u);
                dp = self.config.norm.of(&scratch.u);
                self.config.norm.grad_into(&scratch.u, dp, &mut scratch.gu);
                let c = coef * lam * wp;
                let ghp = &mut gh.p[span.clone()];
                let grp = &mut gr.p[span.clone()];
                let gtp = &mut gt.p[span.clone()];
                let seed_tensor = self.seed_tensor(l);
                match self.config.transform {
                    TransformKind::Diagonal => {
                        let gseed = grads.dense_mut(seed_tensor);
                        for i in 0..half {
                            let g = c * scratch.gu[i];
                            ghp[i] += g * seed[i] * rp[i];
                            grp[i] += g * hp[i] * seed[i];
                            gseed[i] += g * hp[i] * rp[i];
                            gtp[i] -= g;
                        }
                    }
                    TransformKind::Rank1 => {
                        let s: f64 = hp.iter().zip(seed).map(|(a, b)| a * b).sum();
                        let mut gs = 0.0;
                        for i in 0..half {
                            let g = c * scratch.gu[i];
                            grp[i] += g * s;
                            gtp[i] -= g;
                            gs += g * rp[i];
                        }
                        let gseed = grads.dense_mut(seed_tensor);
                        for i in 0..half {
                            ghp[i] += gs * seed[i];
                            gseed[i] += gs * hp[i];
                        }
                    }
                }
            }
            if sem_on {
                semantic_residual(&h.s[span.clone()], &r.s[span.clone()], &t.s[span.clone()], &mut scratch.u);
                ds = Norm::L2.of(&scratch.u);
                Norm::L2.grad_into(&scratch.u, ds, &mut scratch.gu);
                let c = coef * lam * ws;
                let (ghs, grs, gts) = (&mut gh.s[span.clone()], &mut gr.s[span.clone()], &mut gt.s[span]);
                for i in 0..half {
                    let g = c * scratch.gu[i];
                    ghs[i] += g;
                    grs[i] += g;
                    gts[i] -= g;
                }
            }
            if dist_on && sem_on {
                *d_logit += coef * lam * (dp - ds) * alpha * (1.0 - alpha);
            }
        }
    }

    /// Pushes projection gradients of one row back through its lift chain.
    fn chain_backward(&self, role: Role, id: usize, repr: &Repr, upstream: &Repr, grads: &mut GradSet) {
        let half = self.params.half();
        let levels = self.config.levels;
        let (row_tensor, diag_p_tensor, diag_s_tensor) = match role {
            Role::Head => (0, 2, 5),
            Role::Tail => (0, 3, 6),
            Role::Relation => (1, 4, 7),
        };
        let (diag_p, diag_s) = self.params.diagonals(role);
        let row = self.params.row(role, id);
        let mut d_row = vec![0.0; 2 * half];
        let spaces = [
            (&repr.p, &upstream.p, diag_p, &self.params.extract_p, diag_p_tensor, 0usize),
            (&repr.s, &upstream.s, diag_s, &self.params.extract_s, diag_s_tensor, 1usize),
        ];
        for (x, g, diag, extract, diag_tensor, space) in spaces {
            let base = &row[space * half..(space + 1) * half];
            let d_base = &mut d_row[space * half..(space + 1) * half];
            let mut acc = g[(levels - 1) * half..].to_vec();
            for l in (1..levels).rev() {
                let prev = &x[(l - 1) * half..l * half];
                let m = &extract[l - 1];
                let tensor = if space == 0 {
                    self.extract_p_tensor(l - 1)
                } else {
                    self.extract_s_tensor(l - 1)
                };
                let dm = grads.dense_mut(tensor);
                for i in 0..half {
                    let xi = prev[i];
                    let dst = &mut dm[i * half..(i + 1) * half];
                    for (d, a) in dst.iter_mut().zip(&acc) {
                        *d += xi * a;
                    }
                }
                for (d, a) in d_base.iter_mut().zip(&acc) {
                    *d += a;
                }
                let mut next = g[(l - 1) * half..l * half].to_vec();
                for (i, n) in next.iter_mut().enumerate() {
                    *n += m.row(i).iter().zip(&acc).map(|(mij, a)| mij * a).sum::<f64>();
                }
                acc = next;
            }
            let dd = grads.dense_mut(diag_tensor);
            for i in 0..half {
                dd[i] += base[i] * acc[i];
                d_base[i] += diag[i] * acc[i];
            }
        }
        let dst = grads.row_mut(row_tensor, id);
        for (d, v) in dst.iter_mut().zip(&d_row) {
            *d += v;
        }
    }
}

struct ReprCache<'m> {
    model: &'m HieModel,
    reprs: HashMap<(Role, usize), Repr>,
}

impl<'m> ReprCache<'m> {
    fn new(model: &'m HieModel) -> Self {
        Self {
            model,
            reprs: HashMap::new(),
        }
    }

    fn ensure(&mut self, role: Role, id: usize) {
        let model = self.model;
        self.reprs.entry((role, id)).or_insert_with(|| model.repr(role, id));
    }

    fn ensure_triple(&mut self, t: &Triple) {
        self.ensure(Role::Head, t.head);
        self.ensure(Role::Relation, t.rel);
        self.ensure(Role::Tail, t.tail);
    }

    fn get(&self, role: Role, id: usize) -> &Repr {
        &self.reprs[&(role, id)]
    }
}

impl KgeModel for HieModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Hie
    }

    fn num_entities(&self) -> usize {
        self.params.ent.rows
    }

    fn num_relations(&self) -> usize {
        self.params.rel.rows
    }

    fn score(&self, triple: &Triple) -> f64 {
        let h = self.repr(Role::Head, triple.head);
        let r = self.repr(Role::Relation, triple.rel);
        let t = self.repr(Role::Tail, triple.tail);
        let mut buf = vec![0.0; self.params.half()];
        self.fold_levels(h.view(), r.view(), t.view(), &mut buf, |_, _, _| {})
    }

    fn score_extended(&self, triple: &Triple) -> TwoFloat {
        let x = |v: f64| TwoFloat::from(v);
        let p = &self.params;
        let half = p.half();
        let alpha = x(1.0) / (x(1.0) + (-x(p.blend_logit)).exp());
        let chain = |role: Role, id: usize| {
            let row = p.row(role, id);
            let (dp, ds) = p.diagonals(role);
            let mut cur_p: Vec<TwoFloat> = (0..half).map(|i| x(dp[i]) * x(row[i])).collect();
            let mut cur_s: Vec<TwoFloat> = (0..half).map(|i| x(ds[i]) * x(row[half + i])).collect();
            let mut levels = vec![(cur_p.clone(), cur_s.clone())];
            for l in 1..self.config.levels {
                let (mp, ms) = (&p.extract_p[l - 1], &p.extract_s[l - 1]);
                let lift = |cur: &[TwoFloat], m: &Matrix, offset: usize| -> Vec<TwoFloat> {
                    (0..half)
                        .map(|j| (0..half).fold(x(row[offset + j]), |acc, i| acc + cur[i] * x(m.get(i, j))))
                        .collect()
                };
                cur_p = lift(&cur_p, mp, 0);
                cur_s = lift(&cur_s, ms, half);
                levels.push((cur_p.clone(), cur_s.clone()));
            }
            levels
        };
        let (h, r, t) = (
            chain(Role::Head, triple.head),
            chain(Role::Relation, triple.rel),
            chain(Role::Tail, triple.tail),
        );
        let zero = x(0.0);
        let mut total = zero;
        for l in 0..self.config.levels {
            let seed = &p.transform_seed[l];
            let ((hp, hs), (rp, rs), (tp, ts)) = (&h[l], &r[l], &t[l]);
            let inner = (0..half).fold(zero, |acc, i| acc + hp[i] * x(seed[i]));
            let u = (0..half).map(|i| match self.config.transform {
                TransformKind::Diagonal => hp[i] * x(seed[i]) * rp[i] - tp[i],
                TransformKind::Rank1 => inner * rp[i] - tp[i],
            });
            let dp = match self.config.norm {
                Norm::L1 => u.fold(zero, |acc, v| acc + v.abs()),
                Norm::L2 => u.fold(zero, |acc, v| acc + v * v).sqrt(),
            };
            let ds = (0..half)
                .map(|i| hs[i] + rs[i] - ts[i])
                .fold(zero, |acc, v| acc + v * v)
                .sqrt();
            let term = match (
                self.config.ablation.distance_active(l),
                self.config.ablation.semantic_active(l),
            ) {
                (true, true) => alpha * dp + (x(1.0) - alpha) * ds,
                (true, false) => dp,
                (false, true) => ds,
                (false, false) => zero,
            };
            total += x(self.config.lambda[l]) * term;
        }
        total
    }

    fn score_many(&self, triples: &[Triple]) -> Vec<f64> {
        let mut cache = ReprCache::new(self);
        let mut buf = vec![0.0; self.params.half()];
        triples
            .iter()
            .map(|t| {
                cache.ensure_triple(t);
                let h = cache.get(Role::Head, t.head).view();
                let r = cache.get(Role::Relation, t.rel).view();
                let tt = cache.get(Role::Tail, t.tail).view();
                self.fold_levels(h, r, tt, &mut buf, |_, _, _| {})
            })
            .collect()
    }

    fn candidate_scorer(&self, side: Side) -> Box<dyn CandidateScorer + '_> {
        let ne = self.num_entities();
        let (head_p, head_s) = self.repr_table(Role::Head, ne);
        let (tail_p, tail_s) = self.repr_table(Role::Tail, ne);
        let (rel_p, rel_s) = self.repr_table(Role::Relation, self.num_relations());
        Box::new(HieScorer {
            model: self,
            side,
            width: self.params.half() * self.config.levels,
            head_p,
            head_s,
            tail_p,
            tail_s,
            rel_p,
            rel_s,
        })
    }

    fn accumulate_gradients(&self, triples: &[Triple], coefs: &[f64], grads: &mut GradSet) {
        let n = self.params.half() * self.config.levels;
        let mut cache = ReprCache::new(self);
        let mut upstream: HashMap<(Role, usize), Repr> = HashMap::new();
        let zero = || Repr {
            p: vec![0.0; n],
            s: vec![0.0; n],
        };
        let mut gh = zero();
        let mut gr = zero();
        let mut gt = zero();
        let mut scratch = Scratch {
            u: vec![0.0; self.params.half()],
            gu: vec![0.0; self.params.half()],
        };
        let mut d_logit = 0.0;
        for (t, &c) in triples.iter().zip(coefs) {
            if c == 0.0 {
                continue;
            }
            cache.ensure_triple(t);
            for g in [&mut gh, &mut gr, &mut gt] {
                g.p.iter_mut().chain(g.s.iter_mut()).for_each(|x| *x = 0.0);
            }
            self.triple_backward(
                c,
                cache.get(Role::Head, t.head).view(),
                cache.get(Role::Relation, t.rel).view(),
                cache.get(Role::Tail, t.tail).view(),
                &mut gh,
                &mut gr,
                &mut gt,
                grads,
                &mut d_logit,
                &mut scratch,
            );
            for (key, g) in [
                ((Role::Head, t.head), &gh),
                ((Role::Relation, t.rel), &gr),
                ((Role::Tail, t.tail), &gt),
            ] {
                let dst = upstream.entry(key).or_insert_with(zero);
                dst.p.iter_mut().zip(&g.p).for_each(|(a, b)| *a += b);
                dst.s.iter_mut().zip(&g.s).for_each(|(a, b)| *a += b);
            }
        }
        let mut keys: Vec<_> = upstream.keys().copied().collect();
        keys.sort_by_key(|(role, id)| (*role as u8, *id));
        for key in keys {
            self.chain_backward(key.0, key.1, cache.get(key.0, key.1), &upstream[&key], grads);
        }
        grads.dense_mut(self.logit_tensor())[0] += d_logit;
    }

    fn tensor_specs(&self) -> Vec<TensorSpec> {
        let half = self.params.half();
        let k = 2 * half;
        let mut specs = vec![
            TensorSpec::rows("ent", self.num_entities(), k),
            TensorSpec::rows("rel", self.num_relations(), k),
        ];
        for name in ["diag_hp", "diag_tp", "diag_rp", "diag_hs", "diag_ts", "diag_rs"] {
            specs.push(TensorSpec::dense(name, vec![half]));
        }
        for l in 0..self.config.levels {
            specs.push(TensorSpec::dense(format!("transform_seed.{l}"), vec![half]));
        }
        for l in 0..self.config.levels - 1 {
            specs.push(TensorSpec::dense(format!("extract_p.{l}"), vec![half, half]));
        }
        for l in 0..self.config.levels - 1 {
            specs.push(TensorSpec::dense(format!("extract_s.{l}"), vec![half, half]));
        }
        specs.push(TensorSpec::dense("blend_logit", vec![1]));
        specs
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let p = &self.params;
        let mut out: Vec<&[f64]> = vec![
            &p.ent.data, &p.rel.data, &p.diag_hp, &p.diag_tp, &p.diag_rp, &p.diag_hs, &p.diag_ts, &p.diag_rs,
        ];
        out.extend(p.transform_seed.iter().map(Vec::as_slice));
        out.extend(p.extract_p.iter().map(|m| m.data.as_slice()));
        out.extend(p.extract_s.iter().map(|m| m.data.as_slice()));
        out.push(std::slice::from_ref(&p.blend_logit));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let p = &mut self.params;
        let mut out: Vec<&mut [f64]> = vec![
            &mut p.ent.data,
            &mut p.rel.data,
            &mut p.diag_hp,
            &mut p.diag_tp,
            &mut p.diag_rp,
            &mut p.diag_hs,
            &mut p.diag_ts,
            &mut p.diag_rs,
        ];
        out.extend(p.transform_seed.iter_mut().map(Vec::as_mut_slice));
        out.extend(p.extract_p.iter_mut().map(|m| m.data.as_mut_slice()));
        out.extend(p.extract_s.iter_mut().map(|m| m.data.as_mut_slice()));
        out.push(std::slice::from_mut(&mut p.blend_logit));
        out
    }

    fn blend_alpha(&self) -> Option<f64> {
        Some(self.params.alpha())
    }
}

struct HieScorer<'m> {
    model: &'m HieModel,
    side: Side,
    width: usize,
    head_p: Vec<f64>,
    head_s: Vec<f64>,
    tail_p: Vec<f64>,
    tail_s: Vec<f64>,
    rel_p: Vec<f64>,
    rel_s: Vec<f64>,
}

impl HieScorer<'_> {
    fn view<'a>(&self, p: &'a [f64], s: &'a [f64], id: usize) -> ReprRef<'a> {
        let span = id * self.width..(id + 1) * self.width;
        ReprRef {
            p: &p[span.clone()],
            s: &s[span],
        }
    }
}

impl CandidateScorer for HieScorer<'_> {
    fn side(&self) -> Side {
        self.side
    }

    fn score_candidate(&self, triple: &Triple, candidate: usize) -> f64 {
        let t = triple.with(self.side, candidate);
        let mut buf = vec![0.0; self.model.params.half()];
        self.model.fold_levels(
            self.view(&self.head_p, &self.head_s, t.head),
            self.view(&self.rel_p, &self.rel_s, t.rel),
            self.view(&self.tail_p, &self.tail_s, t.tail),
            &mut buf,
            |_, _, _| {},
        )
    }

    fn score_row(&self, triple: &Triple, candidates: &[usize], out: &mut [f64]) {
        let mut buf = vec![0.0; self.model.params.half()];
        for (slot, &c) in out.iter_mut().zip(candidates) {
            let t = triple.with(self.side, c);
            *slot = self.model.fold_levels(
                self.view(&self.head_p, &self.head_s, t.head),
                self.view(&self.rel_p, &self.rel_s, t.rel),
                self.view(&self.tail_p, &self.tail_s, t.tail),
                &mut buf,
                |_, _, _| {},
            );
        }
    }

    fn score_all(&self, triple: &Triple, out: &mut [f64]) {
        let candidates: Vec<usize> = (0..out.len()).collect();
        self.score_row(triple, &candidates, out);
    }
}
