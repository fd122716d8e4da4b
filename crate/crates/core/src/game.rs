//! Cooperative games over a finite player set and exact Shapley values.
//!
//! Players are indexed `0..n_players`. A game is a black-box score on
//! coalitions; [`exact_shapley`] enumerates every subset and is the ground
//! truth for the sampling estimator in [`crate::valuation`].

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

/// Largest game accepted by [`exact_shapley`].
pub const MAX_EXACT_PLAYERS: usize = 20;
/// Largest game accepted by [`exact_shapley_permutation`].
pub const MAX_PERMUTATION_PLAYERS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("game with {n_players} players exceeds the exact-mode limit of {limit}")]
    CapacityRefused { n_players: usize, limit: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("value evaluation failed for coalition {coalition}: {message}")]
    Evaluation { coalition: Coalition, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl GameError {
    pub fn evaluation(coalition: &Coalition, message: impl Into<String>) -> Self {
        GameError::Evaluation {
            coalition: coalition.clone(),
            message: message.into(),
        }
    }

    fn attach(self, coalition: &Coalition) -> Self {
        match self {
            GameError::Evaluation { .. } => self,
            other => GameError::evaluation(coalition, other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, GameError>;

type Words = SmallVec<[u64; 2]>;

/// A subset of players, stored as a bitset over `0..n_players`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coalition {
    n_players: usize,
    words: Words,
}

impl Coalition {
    pub fn empty(n_players: usize) -> Self {
        let n_words = n_players.div_ceil(64);
        Coalition {
            n_players,
            words: SmallVec::from_elem(0, n_words),
        }
    }

    pub fn full(n_players: usize) -> Self {
        let mut c = Self::empty(n_players);
        for (w, word) in c.words.iter_mut().enumerate() {
            let bits_here = (n_players - w * 64).min(64);
            *word = if bits_here == 64 { u64::MAX } else { (1u64 << bits_here) - 1 };
        }
        c
    }

    /// Builds a coalition from the low `n_players` bits of `bits`.
    ///
    /// Panics if `n_players > 64` or a bit at or above `n_players` is set.
    pub fn from_bits(n_players: usize, bits: u64) -> Self {
        assert!(n_players <= 64, "from_bits supports at most 64 players");
        assert!(
            n_players == 64 || bits >> n_players == 0,
            "bit set outside the player universe"
        );
        let mut c = Self::empty(n_players);
        if n_players > 0 {
            c.words[0] = bits;
        }
        c
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(n_players: usize, indices: I) -> Self {
        let mut c = Self::empty(n_players);
        for i in indices {
            c.insert(i);
        }
        c
    }

    /// Builds a coalition from a 0/1 membership vector.
    pub fn from_flags(flags: &[bool]) -> Self {
        Self::from_indices(
            flags.len(),
            flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i),
        )
    }

    /// Low 64 bits of the membership set, if the universe fits in one word.
    pub fn to_bits(&self) -> Option<u64> {
        match self.words.len() {
            0 => Some(0),
            1 => Some(self.words[0]),
            _ => None,
        }
    }

    #[inline]
    pub fn n_players(&self) -> usize {
        self.n_players
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        i < self.n_players && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        assert!(i < self.n_players, "player {i} outside universe of {}", self.n_players);
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn remove(&mut self, i: usize) {
        assert!(i < self.n_players, "player {i} outside universe of {}", self.n_players);
        self.words[i / 64] &= !(1 << (i % 64));
    }

    /// Copy of `self` with player `i` added.
    pub fn with(&self, i: usize) -> Self {
        let mut c = self.clone();
        c.insert(i);
        c
    }

    pub fn cardinality(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_players).filter(move |&i| self.contains(i))
    }

    pub fn to_flags(&self) -> Vec<bool> {
        (0..self.n_players).map(|i| self.contains(i)).collect()
    }

    /// Lowercase hexadecimal bitmask, bit `i` = player `i`.
    pub fn to_hex(&self) -> String {
        let mut s = String::new();
        for (w, word) in self.words.iter().enumerate().rev() {
            if s.is_empty() {
                if *word != 0 || w == 0 {
                    s = format!("{word:x}");
                }
            } else {
                s.push_str(&format!("{word:016x}"));
            }
        }
        if s.is_empty() {
            s.push('0');
        }
        s
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.to_hex())
    }
}

/// A transferable-utility game: a deterministic score on coalitions.
///
/// Implementations must be pure: the same coalition always yields the same
/// value for a given instance. Values may be requested from several worker
/// threads at once.
pub trait CooperativeGame: Sync {
    fn n_players(&self) -> usize;

    fn value(&self, coalition: &Coalition) -> Result<f64>;
}

impl<G: CooperativeGame + ?Sized> CooperativeGame for &G {
    fn n_players(&self) -> usize {
        (**self).n_players()
    }

    fn value(&self, coalition: &Coalition) -> Result<f64> {
        (**self).value(coalition)
    }
}

/// A game backed by a closure.
pub struct FnGame<F> {
    n_players: usize,
    f: F,
}

impl<F> FnGame<F>
where
    F: Fn(&Coalition) -> f64 + Sync,
{
    pub fn new(n_players: usize, f: F) -> Self {
        FnGame { n_players, f }
    }
}

impl<F> CooperativeGame for FnGame<F>
where
    F: Fn(&Coalition) -> f64 + Sync,
{
    fn n_players(&self) -> usize {
        self.n_players
    }

    fn value(&self, coalition: &Coalition) -> Result<f64> {
        Ok((self.f)(coalition))
    }
}

/// Caches values by coalition bitset.
pub struct Memoized<G> {
    inner: G,
    cache: Mutex<HashMap<Coalition, f64>>,
}

impl<G: CooperativeGame> Memoized<G> {
    pub fn new(inner: G) -> Self {
        Memoized {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }

    /// Number of distinct coalitions evaluated so far.
    pub fn evaluations(&self) -> usize {
        self.cache.lock().expect("memo lock poisoned").len()
    }
}

impl<G: CooperativeGame> CooperativeGame for Memoized<G> {
    fn n_players(&self) -> usize {
        self.inner.n_players()
    }

    fn value(&self, coalition: &Coalition) -> Result<f64> {
        if let Some(&v) = self.cache.lock().expect("memo lock poisoned").get(coalition) {
            return Ok(v);
        }
        let v = self.inner.value(coalition)?;
        self.cache
            .lock()
            .expect("memo lock poisoned")
            .insert(coalition.clone(), v);
        Ok(v)
    }
}

/// Shapley values together with the endpoints of the game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyVector {
    pub phi: Vec<f64>,
    /// V(empty coalition).
    pub baseline: f64,
    /// V(grand coalition).
    pub grand: f64,
}

impl ShapleyVector {
    pub fn total(&self) -> f64 {
        self.phi.iter().sum()
    }

    /// `grand - baseline`, the quantity the values distribute.
    pub fn rebased_grand(&self) -> f64 {
        self.grand - self.baseline
    }

    /// `sum(phi) - (grand - baseline)`; zero up to rounding.
    pub fn efficiency_residual(&self) -> f64 {
        self.total() - self.rebased_grand()
    }

    /// `sum(phi) - grand`; zero only when the baseline is zero.
    pub fn raw_efficiency_residual(&self) -> f64 {
        self.total() - self.grand
    }
}

/// `V(s ∪ {i}) − V(s)`.
pub fn marginal<G: CooperativeGame + ?Sized>(game: &G, s: &Coalition, i: usize) -> Result<f64> {
    if i >= game.n_players() {
        return Err(GameError::Precondition(format!(
            "player {i} outside universe of {}",
            game.n_players()
        )));
    }
    if s.contains(i) {
        return Err(GameError::Precondition(format!(
            "player {i} already in coalition {s}"
        )));
    }
    let with = s.with(i);
    let hi = game.value(&with).map_err(|e| e.attach(&with))?;
    let lo = game.value(s).map_err(|e| e.attach(s))?;
    Ok(hi - lo)
}

/// Subset weights `s!(n−s−1)!/n!` for `s = 0..n`, reduced as exact
/// integer ratios before conversion.
pub fn shapley_weights(n: usize) -> Vec<f64> {
    assert!((1..=MAX_EXACT_PLAYERS).contains(&n));
    let fact = |k: usize| -> u128 { (1..=k as u128).product::<u128>().max(1) };
    let den = fact(n);
    (0..n)
        .map(|s| {
            let num = fact(s) * fact(n - 1 - s);
            let g = gcd(num, den);
            (num / g) as f64 / (den / g) as f64
        })
        .collect()
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Evaluates the game on all `2^n` coalitions, indexed by bitmask.
fn value_table<G: CooperativeGame + ?Sized>(game: &G) -> Result<Vec<f64>> {
    let n = game.n_players();
    let results: Vec<Result<f64>> = (0..1u64 << n)
        .into_par_iter()
        .map(|m| {
            let c = Coalition::from_bits(n, m);
            game.value(&c).map_err(|e| e.attach(&c))
        })
        .collect();
    results.into_iter().collect()
}

fn check_players(n: usize, limit: usize) -> Result<()> {
    if n == 0 {
        return Err(GameError::Precondition("game has no players".into()));
    }
    if n > limit {
        return Err(GameError::CapacityRefused { n_players: n, limit });
    }
    Ok(())
}

/// Exact Shapley values by enumerating every subset.
///
/// Marginals are summed within each coalition size first and weighted once
/// per size. Refuses games with more than [`MAX_EXACT_PLAYERS`] players.
pub fn exact_shapley<G: CooperativeGame + ?Sized>(game: &G) -> Result<ShapleyVector> {
    let n = game.n_players();
    check_players(n, MAX_EXACT_PLAYERS)?;
    let table = value_table(game)?;
    let weights = shapley_weights(n);

    let phi = (0..n)
        .into_par_iter()
        .map(|i| {
            let bit = 1u64 << i;
            let mut by_size = vec![0.0f64; n];
            for m in 0..(1u64 << n) {
                if m & bit == 0 {
                    by_size[m.count_ones() as usize] += table[(m | bit) as usize] - table[m as usize];
                }
            }
            by_size.iter().zip(&weights).map(|(s, w)| s * w).sum()
        })
        .collect();

    Ok(ShapleyVector {
        phi,
        baseline: table[0],
        grand: table[(1usize << n) - 1],
    })
}

/// Exact Shapley values by averaging marginals over all `n!` orderings.
///
/// Refuses games with more than [`MAX_PERMUTATION_PLAYERS`] players.
pub fn exact_shapley_permutation<G: CooperativeGame + ?Sized>(game: &G) -> Result<ShapleyVector> {
    let n = game.n_players();
    check_players(n, MAX_PERMUTATION_PLAYERS)?;
    let table = value_table(game)?;

    let mut sums = vec![Neumaier::default(); n];
    let mut perm: Vec<usize> = (0..n).collect();
    let mut count = 0u64;
    let mut walk = |perm: &[usize]| {
        let mut m = 0usize;
        for &i in perm {
            let next = m | 1 << i;
            sums[i].add(table[next] - table[m]);
            m = next;
        }
        count += 1;
    };

    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    walk(&perm);
    let mut k = 0;
    while k < n {
        if c[k] < k {
            if k % 2 == 0 {
                perm.swap(0, k);
            } else {
                perm.swap(c[k], k);
            }
            walk(&perm);
            c[k] += 1;
            k = 0;
        } else {
            c[k] = 0;
            k += 1;
        }
    }

    let phi = sums.iter().map(|s| s.total() / count as f64).collect();
    Ok(ShapleyVector {
        phi,
        baseline: table[0],
        grand: table[(1usize << n) - 1],
    })
}

#[derive(Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// A game given exhaustively as a table of `2^n` coalition values.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGame {
    n_players: usize,
    values: Vec<f64>,
}

impl TableGame {
    /// `values[m]` is the value of the coalition with bitmask `m`.
    pub fn new(n_players: usize, values: Vec<f64>) -> Result<Self> {
        check_players(n_players, MAX_EXACT_PLAYERS)?;
        if values.len() != 1 << n_players {
            return Err(GameError::Precondition(format!(
                "expected {} values for {n_players} players, got {}",
                1u64 << n_players,
                values.len()
            )));
        }
        Ok(TableGame { n_players, values })
    }

    /// Tabulates any game small enough for exact mode.
    pub fn tabulate<G: CooperativeGame + ?Sized>(game: &G) -> Result<Self> {
        let n = game.n_players();
        check_players(n, MAX_EXACT_PLAYERS)?;
        Ok(TableGame {
            n_players: n,
            values: value_table(game)?,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Parses the `bitmask_hex value` line format.
    ///
    /// Blank lines and lines starting with `#` are ignored. Every one of the
    /// `2^n` coalitions must appear exactly once; `n` is inferred from the
    /// line count.
    pub fn parse(text: &str) -> Result<Self> {
        let limit_lines = 1usize << MAX_EXACT_PLAYERS;
        let mut entries: Vec<(usize, u64, f64)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if entries.len() >= limit_lines {
                return Err(GameError::CapacityRefused {
                    n_players: MAX_EXACT_PLAYERS + 1,
                    limit: MAX_EXACT_PLAYERS,
                });
            }
            let mut parts = line.split_whitespace();
            let (mask, value) = match (parts.next(), parts.next(), parts.next()) {
                (Some(m), Some(v), None) => (m, v),
                _ => {
                    return Err(GameError::Parse {
                        line: line_no,
                        message: "expected `bitmask_hex value`".into(),
                    })
                }
            };
            let digits = mask
                .strip_prefix("0x")
                .or_else(|| mask.strip_prefix("0X"))
                .unwrap_or(mask);
            let mask = u64::from_str_radix(digits, 16).map_err(|e| GameError::Parse {
                line: line_no,
                message: format!("bad bitmask `{mask}`: {e}"),
            })?;
            if mask >> MAX_EXACT_PLAYERS != 0 {
                return Err(GameError::CapacityRefused {
                    n_players: 64 - mask.leading_zeros() as usize,
                    limit: MAX_EXACT_PLAYERS,
                });
            }
            let value: f64 = value.parse().map_err(|e| GameError::Parse {
                line: line_no,
                message: format!("bad value `{value}`: {e}"),
            })?;
            if !value.is_finite() {
                return Err(GameError::Parse {
                    line: line_no,
                    message: "value must be finite".into(),
                });
            }
            entries.push((line_no, mask, value));
        }

        let count = entries.len();
        if count < 2 || !count.is_power_of_two() {
            return Err(GameError::Parse {
                line: 0,
                message: format!("{count} coalitions is not 2^n for any n >= 1"),
            });
        }
        let n = count.trailing_zeros() as usize;
        let mut values = vec![f64::NAN; count];
        let mut seen = vec![false; count];
        for (line, mask, value) in entries {
            if mask >= count as u64 {
                return Err(GameError::Parse {
                    line,
                    message: format!("bitmask {mask:x} outside a {n}-player universe"),
                });
            }
            if std::mem::replace(&mut seen[mask as usize], true) {
                return Err(GameError::Parse {
                    line,
                    message: format!("duplicate coalition {mask:x}"),
                });
            }
            values[mask as usize] = value;
        }
        TableGame::new(n, values)
    }

    /// Inverse of [`TableGame::parse`].
    pub fn to_table_string(&self) -> String {
        let mut out = String::new();
        for (m, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{m:x} {v:?}\n"));
        }
        out
    }
}

impl CooperativeGame for TableGame {
    fn n_players(&self) -> usize {
        self.n_players
    }

    fn value(&self, coalition: &Coalition) -> Result<f64> {
        let m = coalition
            .to_bits()
            .filter(|_| coalition.n_players() == self.n_players)
            .ok_or_else(|| GameError::evaluation(coalition, "coalition universe mismatch"))?;
        Ok(self.values[m as usize])
    }
}

/// Games with closed-form Shapley values, used as fixtures.
pub mod fixtures {
    use super::{Coalition, FnGame};

    /// Glove game: player 0 holds a left glove, players 1 and 2 right gloves.
    pub fn glove() -> FnGame<impl Fn(&Coalition) -> f64 + Sync> {
        FnGame::new(3, |s: &Coalition| {
            if s.contains(0) && (s.contains(1) || s.contains(2)) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `V(S) = |S|`.
    pub fn additive(n: usize) -> FnGame<impl Fn(&Coalition) -> f64 + Sync> {
        FnGame::new(n, |s: &Coalition| s.cardinality() as f64)
    }

    /// `V(S) = sum of weights in S`; player `i`'s Shapley value is `weights[i]`.
    pub fn weighted_additive(weights: Vec<f64>) -> FnGame<impl Fn(&Coalition) -> f64 + Sync> {
        FnGame::new(weights.len(), move |s: &Coalition| s.iter().map(|i| weights[i]).sum())
    }
}
