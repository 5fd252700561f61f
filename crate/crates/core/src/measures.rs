//! Probability measures on the group: finite atomic measures and seeded
//! samplers, convolution powers, χ-moments, word enumeration and the
//! elementary / non-elementary dichotomy.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobius::{
    apply, classify, compose, fixed_points, operator_norm, random_unitary, spherical_distance,
    GroupElement, MobiusClass, ProjPoint,
};
use crate::rng::{par_trials, StreamRng};

/// Grid used to snap canonical entries when deduplicating group elements.
pub const SNAP: f64 = 1e-9;
/// Largest exponent tried for the power products `gᴺhᴺ`.
pub const N_SEARCH: u32 = 8;
/// Relative change of the level-averaged `g*g` below which a measure is
/// declared conjugate into `PSU(2)`.
pub const COMPACT_TOL: f64 = 1e-6;
const LEVEL_CAP: usize = 4096;
const POINT_TOL: f64 = 1e-8;

/// Finitely supported probability measure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomicMeasure {
    atoms: Vec<(GroupElement, f64)>,
}

impl AtomicMeasure {
    /// Normalises the weights and merges atoms that agree in `PSL(2,C)`.
    pub fn new(atoms: Vec<(GroupElement, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let total: f64 = atoms.iter().map(|(_, w)| *w).sum();
        if atoms.iter().any(|(_, w)| !(w.is_finite() && *w > 0.0)) || !total.is_finite() {
            return Err(Error::InvalidMeasure("weights must be positive and finite".into()));
        }
        let mut merger = Merger::default();
        for (g, w) in atoms {
            merger.add(g, w / total);
        }
        Ok(merger.finish())
    }

    pub fn dirac(g: GroupElement) -> Self {
        AtomicMeasure { atoms: vec![(g, 1.0)] }
    }

    /// Equal weights on the given elements.
    pub fn uniform(elements: &[GroupElement]) -> Result<Self> {
        Self::new(elements.iter().map(|g| (*g, 1.0)).collect())
    }

    pub fn atoms(&self) -> &[(GroupElement, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn elements(&self) -> impl Iterator<Item = &GroupElement> {
        self.atoms.iter().map(|(g, _)| g)
    }

    /// Index of an atom drawn with probability equal to its weight.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.atoms.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, (_, w)) in self.atoms.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.atoms.len() - 1
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &GroupElement {
        &self.atoms[self.sample_index(rng)].0
    }

    /// Pushes every atom through `g ↦ h g h⁻¹`.
    pub fn conjugate(&self, h: &GroupElement) -> Self {
        let hi = h.inverse();
        AtomicMeasure {
            atoms: self.atoms.iter().map(|(g, w)| (h * g * hi, *w)).collect(),
        }
    }

    /// Element of a word: letters are applied first to last, so
    /// `[i₁, …, i_L]` multiplies to `g_{i_L} ⋯ g_{i₁}`.
    pub fn word_element(&self, word: &[usize]) -> GroupElement {
        word.iter()
            .fold(GroupElement::IDENTITY, |acc, &i| compose(&self.atoms[i].0, &acc))
    }

    pub fn to_json(&self) -> MeasureDoc {
        MeasureDoc {
            atoms: self
                .atoms
                .iter()
                .map(|(g, w)| AtomDoc {
                    entries: [
                        g.a.re, g.a.im, g.b.re, g.b.im, g.c.re, g.c.im, g.d.re, g.d.im,
                    ],
                    weight: *w,
                })
                .collect(),
        }
    }

    pub fn from_json(doc: &MeasureDoc) -> Result<Self> {
        let atoms = doc
            .atoms
            .iter()
            .map(|a| {
                let e = a.entries;
                let g = GroupElement::new(
                    Complex64::new(e[0], e[1]),
                    Complex64::new(e[2], e[3]),
                    Complex64::new(e[4], e[5]),
                    Complex64::new(e[6], e[7]),
                )?;
                Ok((g, a.weight))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms)
    }
}

/// JSON fixture layout: each atom is the eight reals `re a, im a, re b,
/// im b, re c, im c, re d, im d` and a weight.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeasureDoc {
    pub atoms: Vec<AtomDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AtomDoc {
    pub entries: [f64; 8],
    pub weight: f64,
}

fn snap_key(g: &GroupElement) -> [i64; 8] {
    let e = g.entries();
    let q = |x: f64| (x / SNAP).round() as i64;
    [
        q(e[0].re), q(e[0].im), q(e[1].re), q(e[1].im),
        q(e[2].re), q(e[2].im), q(e[3].re), q(e[3].im),
    ]
}

#[derive(Default)]
struct Merger {
    index: HashMap<[i64; 8], usize>,
    atoms: Vec<(GroupElement, f64)>,
}

impl Merger {
    /// Returns `true` when `g` was new.
    fn add(&mut self, g: GroupElement, w: f64) -> bool {
        let key = snap_key(&g);
        match self.index.get(&key) {
            Some(&i) => {
                self.atoms[i].1 += w;
                false
            }
            None => {
                self.index.insert(key, self.atoms.len());
                self.atoms.push((g, w));
                true
            }
        }
    }

    fn finish(self) -> AtomicMeasure {
        let total: f64 = self.atoms.iter().map(|(_, w)| w).sum();
        AtomicMeasure {
            atoms: self.atoms.into_iter().map(|(g, w)| (g, w / total)).collect(),
        }
    }
}

type DrawFn = dyn Fn(&mut StreamRng) -> GroupElement + Send + Sync;

/// Generative measure: a seeded draw function.
#[derive(Clone)]
pub struct SamplerMeasure {
    pub name: String,
    draw: Arc<DrawFn>,
    pub moment_hint: Option<f64>,
}

impl fmt::Debug for SamplerMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SamplerMeasure")
            .field("name", &self.name)
            .field("moment_hint", &self.moment_hint)
            .finish()
    }
}

impl SamplerMeasure {
    pub fn new<F>(name: impl Into<String>, draw: F, moment_hint: Option<f64>) -> Self
    where
        F: Fn(&mut StreamRng) -> GroupElement + Send + Sync + 'static,
    {
        SamplerMeasure {
            name: name.into(),
            draw: Arc::new(draw),
            moment_hint,
        }
    }

    pub fn draw(&self, rng: &mut StreamRng) -> GroupElement {
        (self.draw)(rng)
    }

    /// Haar measure on `SU(2)`.
    pub fn haar_unitary() -> Self {
        Self::new("haar_su2", |rng| random_unitary(rng), Some(0.0))
    }
}

#[derive(Clone, Debug)]
pub enum MatrixMeasure {
    Atomic(AtomicMeasure),
    Sampler(SamplerMeasure),
}

impl From<AtomicMeasure> for MatrixMeasure {
    fn from(m: AtomicMeasure) -> Self {
        MatrixMeasure::Atomic(m)
    }
}

impl From<SamplerMeasure> for MatrixMeasure {
    fn from(m: SamplerMeasure) -> Self {
        MatrixMeasure::Sampler(m)
    }
}

impl MatrixMeasure {
    pub fn draw(&self, rng: &mut StreamRng) -> GroupElement {
        match self {
            MatrixMeasure::Atomic(m) => *m.sample(rng),
            MatrixMeasure::Sampler(s) => s.draw(rng),
        }
    }

    pub fn as_atomic(&self) -> Result<&AtomicMeasure> {
        match self {
            MatrixMeasure::Atomic(m) => Ok(m),
            MatrixMeasure::Sampler(_) => Err(Error::NotAtomic),
        }
    }
}

/// Weight function `χ` of a moment condition.
#[derive(Clone)]
pub enum MomentSpec {
    Power(f64),
    Exponential(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for MomentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentSpec::Power(p) => write!(f, "Power({p})"),
            MomentSpec::Exponential(p) => write!(f, "Exponential({p})"),
            MomentSpec::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl MomentSpec {
    pub fn chi(&self, s: f64) -> f64 {
        match self {
            MomentSpec::Power(p) => s.powf(*p),
            MomentSpec::Exponential(p) => (p * s).exp(),
            MomentSpec::Custom(f) => f(s),
        }
    }

    /// `χ_n(s) = χ(s/n)`.
    pub fn rescaled(&self, n: usize) -> MomentSpec {
        let base = self.clone();
        let n = n as f64;
        MomentSpec::Custom(Arc::new(move |s| base.chi(s / n)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    /// Zero for atomic measures.
    pub stderr: f64,
}

/// `∫ χ(log ∥g∥) dμ(g)`: exact for atomic measures, Monte Carlo otherwise.
pub fn moment(mu: &MatrixMeasure, spec: &MomentSpec, trials: usize, seed: u64) -> Result<MomentEstimate> {
    match mu {
        MatrixMeasure::Atomic(m) => {
            let mut value = 0.0;
            for (g, w) in m.atoms() {
                let s = operator_norm(g).ln();
                let c = spec.chi(s);
                if !c.is_finite() {
                    return Err(Error::NonFinite(s));
                }
                value += w * c;
            }
            Ok(MomentEstimate { value, stderr: 0.0 })
        }
        MatrixMeasure::Sampler(smp) => {
            if trials == 0 {
                return Err(Error::InvalidArgument("trials must be at least 1".into()));
            }
            let xs = par_trials(trials, seed, |rng, _| {
                let s = operator_norm(&smp.draw(rng)).ln();
                (s, spec.chi(s))
            });
            if let Some((s, _)) = xs.iter().find(|(_, c)| !c.is_finite()) {
                return Err(Error::NonFinite(*s));
            }
            let vals: Vec<f64> = xs.into_iter().map(|(_, c)| c).collect();
            let (mean, stderr) = mean_stderr(&vals);
            Ok(MomentEstimate { value: mean, stderr })
        }
    }
}

pub(crate) fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `g_n ⋯ g_1` with `g_i` i.i.d. from `mu`.
pub fn word_sample(mu: &MatrixMeasure, n: usize, rng: &mut StreamRng) -> GroupElement {
    let mut acc = GroupElement::IDENTITY;
    for _ in 0..n {
        let g = mu.draw(rng);
        acc = compose(&g, &acc);
    }
    acc
}

/// Exact `μ^{*n}` with merging of coinciding elements.
pub fn convolution_power(mu: &AtomicMeasure, n: usize, max_atoms: usize) -> Result<AtomicMeasure> {
    if n == 0 {
        return Ok(AtomicMeasure::dirac(GroupElement::IDENTITY));
    }
    let mut current = mu.clone();
    for _ in 1..n {
        let count = current.len() * mu.len();
        if count > max_atoms {
            return Err(Error::Blowup { count, cap: max_atoms });
        }
        let mut merger = Merger::default();
        for (h, wh) in current.atoms() {
            for (g, wg) in mu.atoms() {
                merger.add(compose(g, h), wh * wg);
            }
        }
        current = merger.finish();
    }
    Ok(current)
}

/// A word in the atoms together with its product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub letters: Vec<usize>,
    pub element: GroupElement,
}

/// Distinct elements of each word length `1..=max_len`, breadth first;
/// each level is truncated at an internal cap.
pub fn enumerate_words(mu: &AtomicMeasure, max_len: usize) -> Vec<Vec<Word>> {
    let mut seen: HashMap<[i64; 8], ()> = HashMap::new();
    let mut levels: Vec<Vec<Word>> = Vec::with_capacity(max_len);
    let mut frontier = vec![Word {
        letters: vec![],
        element: GroupElement::IDENTITY,
    }];
    for _ in 0..max_len {
        let mut next = Vec::new();
        'outer: for w in &frontier {
            for (i, (g, _)) in mu.atoms().iter().enumerate() {
                let element = compose(g, &w.element);
                let key = snap_key(&element);
                if seen.insert(key, ()).is_none() {
                    let mut letters = w.letters.clone();
                    letters.push(i);
                    next.push(Word { letters, element });
                    if next.len() >= LEVEL_CAP {
                        break 'outer;
                    }
                }
            }
        }
        if next.is_empty() {
            levels.push(next);
            break;
        }
        frontier = next.clone();
        levels.push(next);
    }
    levels
}

fn power_word(w: &Word, n: u32) -> Vec<usize> {
    w.letters.repeat(n as usize)
}

/// Breadth-first search for a loxodromic word. Besides plain words each
/// level also tries the power products `gᴺhᴺ` of its words.
pub fn find_loxodromic(mu: &AtomicMeasure, max_len: usize) -> Option<Word> {
    let levels = enumerate_words(mu, max_len);
    for level in &levels {
        if let Some(w) = level.iter().find(|w| classify(&w.element) == MobiusClass::Loxodromic) {
            return Some(w.clone());
        }
        let probe: Vec<&Word> = level.iter().take(32).collect();
        for g in &probe {
            for h in &probe {
                for n in 1..=N_SEARCH {
                    let element = compose(&g.element.pow(n), &h.element.pow(n));
                    if classify(&element) == MobiusClass::Loxodromic {
                        let mut letters = power_word(h, n);
                        letters.extend(power_word(g, n));
                        return Some(Word { letters, element });
                    }
                }
            }
        }
    }
    None
}

pub fn commutator(g: &GroupElement, h: &GroupElement) -> GroupElement {
    g * h * g.inverse() * h.inverse()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ElementarityVerdict {
    ElementaryCompact,
    ElementaryFiniteOrbit(Vec<ProjPoint>),
    NonElementary(Word),
    Inconclusive(usize),
}

impl ElementarityVerdict {
    pub fn is_elementary(&self) -> bool {
        matches!(
            self,
            ElementarityVerdict::ElementaryCompact | ElementarityVerdict::ElementaryFiniteOrbit(_)
        )
    }

    pub fn is_non_elementary(&self) -> bool {
        matches!(self, ElementarityVerdict::NonElementary(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            ElementarityVerdict::ElementaryCompact => "ElementaryCompact",
            ElementarityVerdict::ElementaryFiniteOrbit(_) => "ElementaryFiniteOrbit",
            ElementarityVerdict::NonElementary(_) => "NonElementary",
            ElementarityVerdict::Inconclusive(_) => "Inconclusive",
        }
    }
}

fn gram(g: &GroupElement) -> [Complex64; 4] {
    // g* g
    [
        g.a.conj() * g.a + g.c.conj() * g.c,
        g.a.conj() * g.b + g.c.conj() * g.d,
        g.b.conj() * g.a + g.d.conj() * g.c,
        g.b.conj() * g.b + g.d.conj() * g.d,
    ]
}

fn push_unique(points: &mut Vec<ProjPoint>, p: ProjPoint) {
    if !points.iter().any(|q| spherical_distance(q, &p) < POINT_TOL) {
        points.push(p);
    }
}

fn set_invariant(mu: &AtomicMeasure, set: &[ProjPoint]) -> bool {
    mu.elements().all(|g| {
        set.iter().all(|x| {
            let y = apply(g, x);
            set.iter().any(|s| spherical_distance(s, &y) < POINT_TOL)
        })
    })
}

fn disjoint_fixed_sets(g: &GroupElement, h: &GroupElement) -> bool {
    match (fixed_points(g), fixed_points(h)) {
        (Ok(fg), Ok(fh)) => fg
            .iter()
            .all(|p| fh.iter().all(|q| spherical_distance(p, q) > 1e-6)),
        _ => false,
    }
}

/// Decides elementarity up to word length `max_len`:
/// (a) all words elliptic and the level averages of `g*g` settle, so an
/// invariant Hermitian form exists; (b) an invariant set of at most two
/// points among fixed points of short words; (c) two loxodromic words with
/// disjoint fixed sets. Anything else is `Inconclusive`.
pub fn elementarity_check(mu: &AtomicMeasure, max_len: usize) -> ElementarityVerdict {
    let max_len = max_len.max(2);
    let levels = enumerate_words(mu, max_len);
    let all_words: Vec<&Word> = levels.iter().flatten().collect();

    // (a)
    let all_elliptic = all_words
        .iter()
        .all(|w| matches!(classify(&w.element), MobiusClass::Identity | MobiusClass::Elliptic));
    if all_elliptic {
        let averages: Vec<[Complex64; 4]> = levels
            .iter()
            .filter(|l| !l.is_empty())
            .map(|l| {
                let mut acc = [Complex64::new(0.0, 0.0); 4];
                for w in l {
                    let m = gram(&w.element);
                    for k in 0..4 {
                        acc[k] += m[k];
                    }
                }
                acc.map(|x| x / l.len() as f64)
            })
            .collect();
        let settled = match averages.len() {
            0 => true,
            1 => false,
            n => {
                let (prev, last) = (&averages[n - 2], &averages[n - 1]);
                let diff: f64 = (0..4).map(|k| (last[k] - prev[k]).norm_sqr()).sum::<f64>().sqrt();
                let size: f64 = (0..4).map(|k| last[k].norm_sqr()).sum::<f64>().sqrt();
                diff <= COMPACT_TOL * size
            }
        };
        // a level that produced no new element means the generated group is finite
        if settled || levels.last().is_some_and(|l| l.is_empty()) {
            return ElementarityVerdict::ElementaryCompact;
        }
    }

    // (b)
    let mut candidates: Vec<ProjPoint> = Vec::new();
    for w in levels.iter().take(2).flatten() {
        if let Ok(fp) = fixed_points(&w.element) {
            for p in fp {
                push_unique(&mut candidates, p);
            }
        }
    }
    let base = candidates.clone();
    for x in &base {
        for g in mu.elements() {
            push_unique(&mut candidates, apply(g, x));
        }
    }
    candidates.truncate(256);
    for (i, x) in candidates.iter().enumerate() {
        if set_invariant(mu, std::slice::from_ref(x)) {
            return ElementarityVerdict::ElementaryFiniteOrbit(vec![*x]);
        }
        for y in &candidates[i + 1..] {
            let pair = [*x, *y];
            if set_invariant(mu, &pair) {
                return ElementarityVerdict::ElementaryFiniteOrbit(pair.to_vec());
            }
        }
    }

    // (c)
    let mut lox: Vec<Word> = all_words
        .iter()
        .filter(|w| classify(&w.element) == MobiusClass::Loxodromic)
        .take(64)
        .map(|w| (*w).clone())
        .collect();
    if lox.is_empty() {
        if let Some(w) = find_loxodromic(mu, max_len) {
            lox.push(w);
        }
    }
    for (i, g) in lox.iter().enumerate() {
        for h in &lox[i + 1..] {
            if disjoint_fixed_sets(&g.element, &h.element) {
                return ElementarityVerdict::NonElementary(lox[0].clone());
            }
        }
    }
    ElementarityVerdict::Inconclusive(max_len)
}

/// Names of the built-in fixtures.
pub const FIXTURE_NAMES: [&str; 4] = ["schottky2", "elementary_rot", "elementary_diag", "parabolic_pair"];

/// Rotation angle of the two generators of `elementary_rot`.
pub const ROT_ANGLE: f64 = 0.01;

/// Built-in fixture by name.
///
/// * `schottky2`: `½δ_A + ½δ_B` with `A = diag(2, ½)` and `B = R A R⁻¹`,
///   `R = (1/√2)[[1, −1], [1, 1]]`; fixed sets `{0, ∞}` and `{−1, 1}`.
/// * `elementary_rot`: rotations by [`ROT_ANGLE`] about the x and z axes.
/// * `elementary_diag`: `½δ_{diag(2,½)} + ½δ_{diag(3,⅓)}`.
/// * `parabolic_pair`: `½δ_{[[1,2],[0,1]]} + ½δ_{[[1,0],[2,1]]}`.
pub fn fixture(name: &str) -> Result<AtomicMeasure> {
    let c = |x: f64| Complex64::new(x, 0.0);
    match name {
        "schottky2" => {
            let a = GroupElement::diag(c(2.0));
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let r = GroupElement::real(s, -s, s, s)?;
            let b = r * a * r.inverse();
            AtomicMeasure::uniform(&[a, b])
        }
        "elementary_rot" => AtomicMeasure::uniform(&[
            GroupElement::rotation([1.0, 0.0, 0.0], ROT_ANGLE),
            GroupElement::rotation([0.0, 0.0, 1.0], ROT_ANGLE),
        ]),
        "elementary_diag" => AtomicMeasure::uniform(&[GroupElement::diag(c(2.0)), GroupElement::diag(c(3.0))]),
        "parabolic_pair" => AtomicMeasure::uniform(&[
            GroupElement::real(1.0, 2.0, 0.0, 1.0)?,
            GroupElement::real(1.0, 0.0, 2.0, 1.0)?,
        ]),
        other => Err(Error::InvalidMeasure(format!("unknown fixture `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobius::random_element;
    use crate::rng::stream;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn weights_normalise_and_atoms_merge() {
        let g = GroupElement::diag(c(2.0));
        let minus = GroupElement::new(c(-2.0), c(0.0), c(0.0), c(-0.5)).unwrap();
        let m = AtomicMeasure::new(vec![(g, 1.0), (minus, 3.0)]).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.atoms()[0].1 - 1.0).abs() < 1e-15);
        assert!(AtomicMeasure::new(vec![(g, -1.0)]).is_err());
    }

    #[test]
    fn moments() {
        let id = AtomicMeasure::dirac(GroupElement::IDENTITY).into();
        let chi = MomentSpec::Custom(Arc::new(|s| 3.0 + s));
        assert_eq!(moment(&id, &chi, 1, 0).unwrap().value, 3.0);

        let s2 = fixture("schottky2").unwrap();
        // both atoms have operator norm 2
        for g in s2.elements() {
            assert!((operator_norm(g) - 2.0).abs() < 1e-12);
        }
        let first = moment(&s2.clone().into(), &MomentSpec::Power(1.0), 1, 0).unwrap();
        assert!((first.value - 2f64.ln()).abs() < 1e-12);
        assert!((first.value - 0.6931).abs() < 1e-4);

        let mixed = AtomicMeasure::uniform(&[
            GroupElement::diag(c(2.0)),
            GroupElement::rotation([0.0, 1.0, 0.0], 1.0),
        ])
        .unwrap();
        let v = moment(&mixed.into(), &MomentSpec::Power(1.0), 1, 0).unwrap().value;
        assert!((v - 0.5 * 2f64.ln()).abs() < 1e-12);

        let huge = AtomicMeasure::dirac(GroupElement::diag(c(1e200))).into();
        assert!(matches!(
            moment(&huge, &MomentSpec::Exponential(10.0), 1, 0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sampler_moment_has_stderr() {
        let haar: MatrixMeasure = SamplerMeasure::haar_unitary().into();
        let m = moment(&haar, &MomentSpec::Power(1.0), 1000, 5).unwrap();
        assert!(m.value.abs() < 1e-10);
        let noisy: MatrixMeasure = SamplerMeasure::new("gauss", |rng| random_element(rng, 0.5), None).into();
        let m = moment(&noisy, &MomentSpec::Power(1.0), 4000, 5).unwrap();
        assert!(m.value > 0.0 && m.stderr > 0.0 && m.stderr < 0.05 * m.value);
    }

    #[test]
    fn word_sample_cases() {
        let g = GroupElement::real(1.0, 1.0, 1.0, 2.0).unwrap();
        let d: MatrixMeasure = AtomicMeasure::dirac(g).into();
        let mut rng = stream(1, 0);
        assert!(word_sample(&d, 1, &mut rng).approx_eq(&g, 1e-12));
        assert!(word_sample(&d, 5, &mut rng).approx_eq(&g.pow(5), 1e-9));
    }

    #[test]
    fn word_sample_two_step_law_matches_enumeration() {
        let s2 = fixture("schottky2").unwrap();
        // exhaustive: 4 ordered pairs, weight 1/4 each
        let mut exact: Vec<(f64, f64)> = Vec::new();
        for (g1, w1) in s2.atoms() {
            for (g2, w2) in s2.atoms() {
                exact.push(((g2 * g1).trace_sq().re, w1 * w2));
            }
        }
        let mu: MatrixMeasure = s2.into();
        let n = 100_000;
        let traces = par_trials(n, 3, |rng, _| word_sample(&mu, 2, rng).trace_sq().re);
        let mut values: Vec<f64> = exact.iter().map(|(t, _)| *t).collect();
        values.sort_by(f64::total_cmp);
        values.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        for v in values {
            let p_exact: f64 = exact.iter().filter(|(t, _)| (t - v).abs() < 1e-9).map(|(_, w)| w).sum();
            let p_emp = traces.iter().filter(|t| (*t - v).abs() < 1e-6).count() as f64 / n as f64;
            let se = (p_exact * (1.0 - p_exact) / n as f64).sqrt();
            assert!((p_emp - p_exact).abs() < 5.0 * se, "{v}: {p_emp} vs {p_exact}");
        }
    }

    #[test]
    fn convolution_powers() {
        let s2 = fixture("schottky2").unwrap();
        let one = convolution_power(&s2, 1, 100).unwrap();
        assert_eq!(one.len(), 2);
        let two = convolution_power(&s2, 2, 100).unwrap();
        assert_eq!(two.len(), 4);
        for (_, w) in two.atoms() {
            assert!((w - 0.25).abs() < 1e-15);
        }
        let g = GroupElement::real(2.0, 1.0, 1.0, 1.0).unwrap();
        let three = convolution_power(&AtomicMeasure::dirac(g), 3, 10).unwrap();
        assert_eq!(three.len(), 1);
        assert!(three.atoms()[0].0.approx_eq(&g.pow(3), 1e-10));
        assert!(matches!(convolution_power(&s2, 10, 100), Err(Error::Blowup { .. })));
        let total: f64 = convolution_power(&s2, 6, 1000).unwrap().atoms().iter().map(|a| a.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_moment_is_subadditive() {
        for name in FIXTURE_NAMES {
            let mu = fixture(name).unwrap();
            let m1 = moment(&mu.clone().into(), &MomentSpec::Power(1.0), 1, 0).unwrap().value;
            for n in 2..=4 {
                let mn = moment(&convolution_power(&mu, n, 1 << 12).unwrap().into(), &MomentSpec::Power(1.0), 1, 0)
                    .unwrap()
                    .value;
                assert!(mn <= n as f64 * m1 + 1e-12, "{name} n={n}");
            }
        }
    }

    #[test]
    fn loxodromic_search() {
        let d = AtomicMeasure::dirac(GroupElement::diag(c(2.0)));
        assert_eq!(find_loxodromic(&d, 3).unwrap().letters, vec![0]);
        let same_axis = AtomicMeasure::uniform(&[
            GroupElement::rotation([0.0, 0.0, 1.0], 0.3),
            GroupElement::rotation([0.0, 0.0, 1.0], 1.1),
        ])
        .unwrap();
        assert!(find_loxodromic(&same_axis, 8).is_none());
        let s2 = fixture("schottky2").unwrap();
        let w = find_loxodromic(&s2, 4).unwrap();
        assert_eq!(w.letters.len(), 1);
        assert!(s2.word_element(&w.letters).approx_eq(&w.element, 1e-12));
    }

    #[test]
    fn power_products_reach_loxodromic() {
        // a loxodromic and an elliptic with disjoint fixed sets
        let g = GroupElement::diag(c(1.5));
        let h = GroupElement::rotation([1.0, 0.0, 0.0], 2.0);
        assert!(disjoint_fixed_sets(&g, &h));
        let found = (1..=N_SEARCH).any(|n| classify(&(g.pow(n) * h.pow(n))) == MobiusClass::Loxodromic);
        assert!(found);
        // a loxodromic and a parabolic
        let p = GroupElement::real(1.0, 0.0, 1.0, 1.0).unwrap();
        assert!((1..=N_SEARCH).any(|n| classify(&(g.pow(n) * p.pow(n))) == MobiusClass::Loxodromic));
    }

    #[test]
    fn commutator_of_loxodromics_sharing_one_fixed_point_is_parabolic() {
        // both fix ∞; g also fixes 0, h also fixes 1
        let g = GroupElement::diag(c(2.0));
        let t = GroupElement::real(1.0, 1.0, 0.0, 1.0).unwrap();
        let h = t * GroupElement::diag(c(3.0)) * t.inverse();
        assert_eq!(classify(&g), MobiusClass::Loxodromic);
        assert_eq!(classify(&h), MobiusClass::Loxodromic);
        assert_eq!(classify(&commutator(&g, &h)), MobiusClass::Parabolic);
    }

    #[test]
    fn fixture_verdicts() {
        assert_eq!(
            elementarity_check(&fixture("elementary_rot").unwrap(), 8),
            ElementarityVerdict::ElementaryCompact
        );
        match elementarity_check(&fixture("elementary_diag").unwrap(), 6) {
            ElementarityVerdict::ElementaryFiniteOrbit(set) => {
                // 0 and ∞ are each fixed
                assert_eq!(set.len(), 1);
                let d0 = spherical_distance(&set[0], &ProjPoint::ZERO);
                let d1 = spherical_distance(&set[0], &ProjPoint::INFINITY);
                assert!(d0.min(d1) < 1e-12);
            }
            v => panic!("{v:?}"),
        }
        for name in ["schottky2", "parabolic_pair"] {
            let mu = fixture(name).unwrap();
            match elementarity_check(&mu, 6) {
                ElementarityVerdict::NonElementary(w) => {
                    assert_eq!(classify(&w.element), MobiusClass::Loxodromic);
                    assert!(mu.word_element(&w.letters).approx_eq(&w.element, 1e-10));
                }
                v => panic!("{name}: {v:?}"),
            }
        }
    }

    #[test]
    fn verdicts_agree_for_convolution_powers() {
        for name in FIXTURE_NAMES {
            let mu = fixture(name).unwrap();
            let base = elementarity_check(&mu, 6);
            for n in 2..=3 {
                let pw = convolution_power(&mu, n, 1 << 12).unwrap();
                let v = elementarity_check(&pw, 4);
                assert_eq!(base.is_elementary(), v.is_elementary(), "{name} n={n}: {v:?}");
                assert_eq!(base.is_non_elementary(), v.is_non_elementary(), "{name} n={n}");
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let mu = fixture("schottky2").unwrap();
        let text = serde_json::to_string(&mu.to_json()).unwrap();
        let back = AtomicMeasure::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        for ((g, w), (h, v)) in mu.atoms().iter().zip(back.atoms()) {
            assert!(g.approx_eq(h, 1e-15) && (w - v).abs() < 1e-15);
        }
        assert!(serde_json::from_str::<MeasureDoc>(r#"{"atoms": [], "extra": 1}"#).is_err());
    }
}
