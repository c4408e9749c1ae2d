//! Regular two-level full and fractional factorial designs.
//!
//! Every design here is *regular*: the first `k` factors (the base factors)
//! form a full factorial in standard order, and every other factor's column
//! is the elementwise product of a subset of base columns. A column is
//! identified internally by its bit mask over base factors; the product of two
//! columns is the XOR of their masks.
//!
//! Resolution is never taken on trust. [`verify_resolution`] recomputes it
//! from the sign grid alone, comparing columns for equality up to sign.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

/// Largest supported number of base factors (2^20 runs).
pub const MAX_BASE_FACTORS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("factor count {0} out of range: must be between 1 and {MAX_BASE_FACTORS}")]
    FactorCount(usize),
    #[error("a design needs at least one factor")]
    NoFactors,
    #[error("max_runs must be a power of two >= 4, got {0}")]
    MaxRuns(usize),
    #[error(
        "no resolution {target} design for {n_factors} factors fits in {max_runs} runs{}",
        match .smallest { Some(n) => format!("; smallest run count that works is {n}"), None => String::new() }
    )]
    Infeasible {
        n_factors: usize,
        target: Resolution,
        max_runs: usize,
        smallest: Option<usize>,
    },
    #[error("alias order {0} unsupported: use 2 or 3")]
    AliasOrder(usize),
    #[error("run index {index} out of range for a {n_runs}-run design")]
    RunIndex { index: usize, n_runs: usize },
    #[error("malformed design: {0}")]
    Malformed(String),
    #[error("design CSV: {0}")]
    Csv(String),
}

/// Aliasing guarantee of a two-level design, ordered `III < IV < V < FULL`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Resolution {
    III,
    IV,
    V,
    Full,
}

impl Resolution {
    pub const ALL: [Resolution; 4] = [Resolution::III, Resolution::IV, Resolution::V, Resolution::Full];
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resolution::III => "III",
            Resolution::IV => "IV",
            Resolution::V => "V",
            Resolution::Full => "FULL",
        })
    }
}

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "III" | "3" => Ok(Resolution::III),
            "IV" | "4" => Ok(Resolution::IV),
            "V" | "5" => Ok(Resolution::V),
            "FULL" => Ok(Resolution::Full),
            other => Err(format!("unknown resolution {other:?} (expected III, IV, V or FULL)")),
        }
    }
}

/// A runs × factors grid over {-1, +1} with its generator metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignMatrix {
    names: Vec<String>,
    n_runs: usize,
    /// Row-major, `n_runs * n_factors`.
    signs: Vec<i8>,
    base_count: usize,
    generators: BTreeMap<usize, Vec<usize>>,
    resolution: Resolution,
}

impl DesignMatrix {
    pub fn n_factors(&self) -> usize {
        self.names.len()
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn base_count(&self) -> usize {
        self.base_count
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Generator of each non-base factor: the base factors whose product defines it.
    pub fn generators(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.generators
    }

    /// Verified resolution.
    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn sign(&self, run: usize, factor: usize) -> i8 {
        self.signs[run * self.n_factors() + factor]
    }

    pub fn row(&self, run: usize) -> &[i8] {
        let n = self.n_factors();
        &self.signs[run * n..(run + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.signs.chunks(self.n_factors())
    }

    pub fn column(&self, factor: usize) -> Vec<i8> {
        (0..self.n_runs).map(|r| self.sign(r, factor)).collect()
    }

    /// Elementwise product of the given factor columns.
    pub fn product_column(&self, factors: &[usize]) -> Vec<i8> {
        (0..self.n_runs)
            .map(|r| factors.iter().map(|&f| self.sign(r, f)).product())
            .collect()
    }

    /// Replaces the default factor names.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self, DesignError> {
        if names.len() != self.n_factors() {
            return Err(DesignError::Malformed(format!(
                "{} names for {} factors",
                names.len(),
                self.n_factors()
            )));
        }
        check_unique_names(&names)?;
        self.names = names;
        Ok(self)
    }

    /// Label for an effect term, e.g. `AB` for single-letter names or `x:y` otherwise.
    pub fn term_label(&self, factors: &[usize]) -> String {
        term_label(&self.names, factors)
    }

    /// Human-readable generator lines such as `C = AB`.
    pub fn generator_labels(&self) -> Vec<String> {
        self.generators
            .iter()
            .map(|(&f, base)| format!("{} = {}", self.names[f], self.term_label(base)))
            .collect()
    }

    /// Builds a design from explicit rows, inferring and checking its
    /// regular-design structure and recomputing its resolution.
    ///
    /// Rows must be in standard order for the base factors, the layout
    /// produced by [`full_factorial`] and [`generate_fractional`].
    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<i8>>) -> Result<Self, DesignError> {
        let n_factors = names.len();
        if n_factors == 0 {
            return Err(DesignError::NoFactors);
        }
        check_unique_names(&names)?;
        let n_runs = rows.len();
        if n_runs < 2 || !n_runs.is_power_of_two() {
            return Err(DesignError::Malformed(format!("run count {n_runs} is not a power of two >= 2")));
        }
        let k = n_runs.trailing_zeros() as usize;
        if k > MAX_BASE_FACTORS || k > n_factors {
            return Err(DesignError::Malformed(format!(
                "{n_runs} runs cannot be spanned by {n_factors} factors"
            )));
        }
        let mut signs = Vec::with_capacity(n_runs * n_factors);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_factors {
                return Err(DesignError::Malformed(format!(
                    "run {i} has {} entries, expected {n_factors}",
                    row.len()
                )));
            }
            for &s in row {
                if s != 1 && s != -1 {
                    return Err(DesignError::Malformed(format!("run {i} contains level {s}")));
                }
                signs.push(s);
            }
        }
        // Base factors must be the standard-order full factorial.
        for r in 0..n_runs {
            for j in 0..k {
                if signs[r * n_factors + j] != base_sign(r, j) {
                    return Err(DesignError::Malformed(format!(
                        "factor {} is not a base column in standard order (run {r})",
                        names[j]
                    )));
                }
            }
        }
        // Recover each non-base mask: at the all-high row every product is +1,
        // and flipping base bit j flips exactly the columns that contain j.
        let all = n_runs - 1;
        let mut generators = BTreeMap::new();
        for f in k..n_factors {
            let mut mask = 0u32;
            for j in 0..k {
                if signs[(all ^ (1 << j)) * n_factors + f] == -1 {
                    mask |= 1 << j;
                }
            }
            let ok = mask != 0 && (0..n_runs).all(|r| signs[r * n_factors + f] == mask_sign(mask, r));
            if !ok {
                return Err(DesignError::Malformed(format!(
                    "factor {} is not a product of base columns (not a regular design)",
                    names[f]
                )));
            }
            generators.insert(f, mask_factors(mask));
        }
        let mut design = DesignMatrix {
            names,
            n_runs,
            signs,
            base_count: k,
            generators,
            resolution: Resolution::III,
        };
        design.resolution = highest_resolution(&design).ok_or_else(|| {
            DesignError::Malformed("design does not reach resolution III (aliased main effects)".into())
        })?;
        Ok(design)
    }

    fn from_masks(masks: &[u32], k: usize) -> Self {
        let n_factors = masks.len();
        let n_runs = 1usize << k;
        let mut signs = Vec::with_capacity(n_runs * n_factors);
        for r in 0..n_runs {
            signs.extend(masks.iter().map(|&m| mask_sign(m, r)));
        }
        let generators = masks
            .iter()
            .enumerate()
            .skip(k)
            .map(|(f, &m)| (f, mask_factors(m)))
            .collect();
        let mut design = DesignMatrix {
            names: default_factor_names(n_factors),
            n_runs,
            signs,
            base_count: k,
            generators,
            resolution: Resolution::III,
        };
        design.resolution = highest_resolution(&design).unwrap_or(Resolution::III);
        design
    }

    /// Writes the design as CSV with a `#` metadata block.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), DesignError> {
        let io = |e: std::io::Error| DesignError::Csv(e.to_string());
        writeln!(out, "# factors: {}", self.n_factors()).map_err(io)?;
        writeln!(out, "# runs: {}", self.n_runs).map_err(io)?;
        writeln!(out, "# base: {}", self.base_count).map_err(io)?;
        for g in self.generator_labels() {
            writeln!(out, "# generator: {g}").map_err(io)?;
        }
        writeln!(out, "# resolution: {}", self.resolution).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names).map_err(|e| DesignError::Csv(e.to_string()))?;
        for row in self.rows() {
            w.write_record(row.iter().map(|&s| if s > 0 { "+1" } else { "-1" }))
                .map_err(|e| DesignError::Csv(e.to_string()))?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    /// Reads a design written by [`DesignMatrix::write_csv`]. Metadata, when
    /// present, is cross-checked against the structure recovered from the grid.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, DesignError> {
        let mut meta: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut body = String::new();
        for line in input.lines() {
            let line = line.map_err(|e| DesignError::Csv(e.to_string()))?;
            if let Some(comment) = line.trim_start().strip_prefix('#') {
                if let Some((key, value)) = comment.split_once(':') {
                    meta.entry(key.trim().to_string())
                        .or_default()
                        .push(value.trim().to_string());
                }
            } else if !line.trim().is_empty() {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let names: Vec<String> = reader
            .headers()
            .map_err(|e| DesignError::Csv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| DesignError::Csv(e.to_string()))?;
            let row = rec
                .iter()
                .map(|v| match v {
                    "+1" | "1" => Ok(1),
                    "-1" => Ok(-1),
                    other => Err(DesignError::Csv(format!("invalid level {other:?}"))),
                })
                .collect::<Result<Vec<i8>, _>>()?;
            rows.push(row);
        }
        let design = DesignMatrix::from_rows(names, rows)?;

        let check = |key: &str, actual: String| -> Result<(), DesignError> {
            match meta.get(key).and_then(|v| v.first()) {
                Some(claimed) if *claimed != actual => Err(DesignError::Csv(format!(
                    "metadata {key} = {claimed} but the grid gives {actual}"
                ))),
                _ => Ok(()),
            }
        };
        check("factors", design.n_factors().to_string())?;
        check("runs", design.n_runs.to_string())?;
        check("base", design.base_count.to_string())?;
        check("resolution", design.resolution.to_string())?;
        if let Some(claimed) = meta.get("generator") {
            let mut claimed = claimed.clone();
            let mut actual = design.generator_labels();
            claimed.sort();
            actual.sort();
            if claimed != actual {
                return Err(DesignError::Csv(format!(
                    "metadata generators {claimed:?} disagree with the grid {actual:?}"
                )));
            }
        }
        Ok(design)
    }
}

impl FromStr for DesignMatrix {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DesignMatrix::read_csv(s.as_bytes())
    }
}

fn check_unique_names(names: &[String]) -> Result<(), DesignError> {
    let mut seen = HashSet::new();
    for n in names {
        if n.is_empty() {
            return Err(DesignError::Malformed("empty factor name".into()));
        }
        if !seen.insert(n.as_str()) {
            return Err(DesignError::Malformed(format!("duplicate factor name {n:?}")));
        }
    }
    Ok(())
}

/// `A`, `B`, ... for up to 26 factors, `F1`, `F2`, ... beyond that.
pub fn default_factor_names(n: usize) -> Vec<String> {
    if n <= 26 {
        (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
    } else {
        (1..=n).map(|i| format!("F{i}")).collect()
    }
}

/// Joins factor names into an interaction label.
pub fn term_label(names: &[String], factors: &[usize]) -> String {
    if factors.is_empty() {
        return "I".to_string();
    }
    let short = factors.iter().all(|&f| names[f].chars().count() == 1);
    let parts: Vec<&str> = factors.iter().map(|&f| names[f].as_str()).collect();
    if short {
        parts.concat()
    } else {
        parts.join(":")
    }
}

#[inline]
fn base_sign(run: usize, j: usize) -> i8 {
    if run >> j & 1 == 1 {
        1
    } else {
        -1
    }
}

#[inline]
fn mask_sign(mask: u32, run: usize) -> i8 {
    if (mask & !(run as u32)).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

fn mask_factors(mask: u32) -> Vec<usize> {
    (0..32).filter(|j| mask >> j & 1 == 1).collect()
}

/// Full two-level factorial over `k` factors, first factor alternating fastest.
pub fn full_factorial(k: usize) -> Result<DesignMatrix, DesignError> {
    if k == 0 || k > MAX_BASE_FACTORS {
        return Err(DesignError::FactorCount(k));
    }
    let masks: Vec<u32> = (0..k).map(|j| 1 << j).collect();
    Ok(DesignMatrix::from_masks(&masks, k))
}

/// Builds a regular fraction with verified resolution of at least `target`.
///
/// The run count is `min(max_runs, 2^n_factors)`. The first `log2(runs)`
/// factors are base factors; each remaining factor takes the first candidate
/// interaction column (by descending weight, then lexicographic index set)
/// that keeps the target's aliasing constraints satisfied. When nothing fits,
/// the search continues past `max_runs` to report the smallest run count
/// that would have worked.
pub fn generate_fractional(
    n_factors: usize,
    target: Resolution,
    max_runs: usize,
) -> Result<DesignMatrix, DesignError> {
    if n_factors == 0 {
        return Err(DesignError::NoFactors);
    }
    if max_runs < 4 || !max_runs.is_power_of_two() {
        return Err(DesignError::MaxRuns(max_runs));
    }
    let k_cap = (max_runs.trailing_zeros() as usize).min(MAX_BASE_FACTORS);
    let infeasible = |smallest: Option<usize>| DesignError::Infeasible {
        n_factors,
        target,
        max_runs,
        smallest,
    };

    if n_factors <= k_cap {
        return full_factorial(n_factors);
    }
    if target == Resolution::Full {
        let smallest = (n_factors <= MAX_BASE_FACTORS).then(|| 1usize << n_factors);
        return Err(infeasible(smallest));
    }

    if let Some(masks) = assign_generators(n_factors, k_cap, target) {
        let design = DesignMatrix::from_masks(&masks, k_cap);
        if verify_resolution(&design, target) {
            return Ok(design);
        }
    }
    let upper = n_factors.min(MAX_BASE_FACTORS);
    let smallest = (k_cap + 1..=upper).find_map(|k| {
        if k == n_factors {
            return Some(1usize << k);
        }
        assign_generators(n_factors, k, target).map(|_| 1usize << k)
    });
    Err(infeasible(smallest))
}

/// Candidate interaction masks over `k` base factors: weight >= 2, heaviest
/// first, ties broken by the lexicographic order of their factor index lists.
fn candidate_masks(k: usize) -> Vec<u32> {
    let mut cands: Vec<u32> = (1u32..(1u32 << k)).filter(|m| m.count_ones() >= 2).collect();
    cands.sort_by(|a, b| {
        b.count_ones()
            .cmp(&a.count_ones())
            .then_with(|| mask_factors(*a).cmp(&mask_factors(*b)))
    });
    cands
}

/// Greedy generator assignment. The acceptance rule is the mask form of the
/// column-distinctness check in [`verify_resolution`]: with main masks `M`,
/// pairwise products `P` and triple products `T`, a candidate `c` is
/// admissible at III iff `c ∉ M`, at IV iff also `c ∉ P`, at V iff also `c ∉ T`.
fn assign_generators(n_factors: usize, k: usize, target: Resolution) -> Option<Vec<u32>> {
    if n_factors > (1usize << k) - 1 {
        return None;
    }
    let candidates = candidate_masks(k);
    greedy_pass(n_factors, k, target, candidates.iter().copied()).or_else(|| {
        // An even-weight pick early on can exhaust the IV budget; odd-weight
        // columns alone always give resolution IV with up to 2^(k-1) factors.
        (target == Resolution::IV).then_some(())?;
        greedy_pass(n_factors, k, target, candidates.iter().copied().filter(|c| c.count_ones() % 2 == 1))
    })
}

fn greedy_pass(
    n_factors: usize,
    k: usize,
    target: Resolution,
    candidates: impl Iterator<Item = u32>,
) -> Option<Vec<u32>> {
    let mut state = AliasSets {
        track_pairs: target >= Resolution::IV,
        track_triples: target >= Resolution::V,
        ..AliasSets::default()
    };
    for j in 0..k {
        state.add(1 << j);
    }
    for c in candidates {
        if state.masks.len() == n_factors {
            break;
        }
        if state.admits(c) {
            state.add(c);
        }
    }
    (state.masks.len() == n_factors).then_some(state.masks)
}

#[derive(Default)]
struct AliasSets {
    masks: Vec<u32>,
    mains: HashSet<u32>,
    pairs: HashSet<u32>,
    triples: HashSet<u32>,
    track_pairs: bool,
    track_triples: bool,
}

impl AliasSets {
    fn admits(&self, c: u32) -> bool {
        !self.mains.contains(&c)
            && !(self.track_pairs && self.pairs.contains(&c))
            && !(self.track_triples && self.triples.contains(&c))
    }

    fn add(&mut self, m: u32) {
        if self.track_triples {
            let new: Vec<u32> = self.pairs.iter().map(|p| p ^ m).collect();
            self.triples.extend(new);
        }
        if self.track_pairs {
            let new: Vec<u32> = self.masks.iter().map(|o| o ^ m).collect();
            self.pairs.extend(new);
        }
        self.masks.push(m);
        self.mains.insert(m);
    }
}

/// A column packed as bits (1 = +1), canonicalised so that a column and its
/// negation share one key.
type ColumnKey = Vec<u64>;

fn packed_column(d: &DesignMatrix, factor: usize) -> Vec<u64> {
    let mut words = vec![0u64; d.n_runs.div_ceil(64)];
    for r in 0..d.n_runs {
        if d.sign(r, factor) > 0 {
            words[r / 64] |= 1 << (r % 64);
        }
    }
    words
}

fn canonical(mut words: Vec<u64>, n_runs: usize) -> ColumnKey {
    if words[0] & 1 == 0 {
        for w in words.iter_mut() {
            *w = !*w;
        }
        let tail = n_runs % 64;
        if tail != 0 {
            let last = words.len() - 1;
            words[last] &= (1u64 << tail) - 1;
        }
    }
    words
}

fn xor_key(a: &[u64], b: &[u64], n_runs: usize) -> ColumnKey {
    // XOR of the bit form is the negated product column; canonical() absorbs the sign.
    canonical(a.iter().zip(b).map(|(x, y)| x ^ y).collect(), n_runs)
}

fn is_constant(key: &ColumnKey, n_runs: usize) -> bool {
    let ones: u32 = key.iter().map(|w| w.count_ones()).sum();
    ones as usize == n_runs || ones == 0
}

/// Checks a resolution claim directly on the sign grid.
///
/// * III: main-effect columns are non-constant and pairwise distinct up to sign.
/// * IV: additionally no main effect equals (±) a two-factor interaction.
/// * V: additionally all two-factor interactions are pairwise distinct (±)
///   and distinct from every main effect.
/// * FULL: `n_runs = 2^n_factors` with no repeated run (which implies V).
pub fn verify_resolution(d: &DesignMatrix, target: Resolution) -> bool {
    let n = d.n_factors();
    if target == Resolution::Full {
        if n >= 64 || d.n_runs != 1usize << n {
            return false;
        }
        let distinct: HashSet<&[i8]> = d.rows().collect();
        return distinct.len() == d.n_runs;
    }
    let raw: Vec<Vec<u64>> = (0..n).map(|f| packed_column(d, f)).collect();
    let mut mains: HashSet<ColumnKey> = HashSet::with_capacity(n);
    for col in &raw {
        let key = canonical(col.clone(), d.n_runs);
        if is_constant(&key, d.n_runs) || !mains.insert(key) {
            return false;
        }
    }
    if target == Resolution::III {
        return true;
    }
    let mut two_fi: HashSet<ColumnKey> = HashSet::new();
    for i in 0..n {
        for j in i + 1..n {
            let key = xor_key(&raw[i], &raw[j], d.n_runs);
            if mains.contains(&key) {
                return false;
            }
            if target >= Resolution::V && !two_fi.insert(key) {
                return false;
            }
        }
    }
    true
}

fn highest_resolution(d: &DesignMatrix) -> Option<Resolution> {
    Resolution::ALL.iter().rev().copied().find(|&r| verify_resolution(d, r))
}

/// One interaction term aliased with a main effect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasTerm {
    pub factors: Vec<usize>,
    /// +1 when the columns are identical, -1 when one is the other's negation.
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasReport {
    pub names: Vec<String>,
    pub max_order: usize,
    /// Indexed by factor.
    pub aliases: Vec<Vec<AliasTerm>>,
}

impl AliasReport {
    pub fn is_clear(&self) -> bool {
        self.aliases.iter().all(Vec::is_empty)
    }

    /// `(main, term)` label pairs such as `("A", "BC")`.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.aliases
            .iter()
            .enumerate()
            .flat_map(|(f, terms)| {
                terms.iter().map(move |t| {
                    let sign = if t.sign < 0 { "-" } else { "" };
                    (self.names[f].clone(), format!("{sign}{}", term_label(&self.names, &t.factors)))
                })
            })
            .collect()
    }
}

impl fmt::Display for AliasReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# aliases of main effects up to order {}", self.max_order)?;
        for (i, terms) in self.aliases.iter().enumerate() {
            let list: Vec<String> = terms
                .iter()
                .map(|t| {
                    let sign = if t.sign < 0 { "-" } else { "" };
                    format!("{sign}{}", term_label(&self.names, &t.factors))
                })
                .collect();
            if list.is_empty() {
                writeln!(f, "{}: (none)", self.names[i])?;
            } else {
                writeln!(f, "{} <-> {}", self.names[i], list.join(", "))?;
            }
        }
        Ok(())
    }
}

/// Lists, for every main effect, the interactions of order 2..=`max_order`
/// whose column equals it up to sign.
pub fn alias_structure(d: &DesignMatrix, max_order: usize) -> Result<AliasReport, DesignError> {
    if !(2..=3).contains(&max_order) {
        return Err(DesignError::AliasOrder(max_order));
    }
    let n = d.n_factors();
    let raw: Vec<Vec<u64>> = (0..n).map(|f| packed_column(d, f)).collect();
    let mut by_key: HashMap<ColumnKey, Vec<usize>> = HashMap::new();
    for (f, col) in raw.iter().enumerate() {
        by_key.entry(canonical(col.clone(), d.n_runs)).or_default().push(f);
    }
    let mut aliases = vec![Vec::new(); n];
    let mut record = |term: Vec<usize>, bits: Vec<u64>| {
        // `bits` is the product column in packed form (1 = +1).
        let key = canonical(bits.clone(), d.n_runs);
        if let Some(mains) = by_key.get(&key) {
            for &m in mains {
                if term.contains(&m) {
                    continue;
                }
                let sign = if bits == raw[m] { 1 } else { -1 };
                aliases[m].push(AliasTerm { factors: term.clone(), sign });
            }
        }
    };
    let not = |v: Vec<u64>| -> Vec<u64> { v.into_iter().map(|w| !w).collect() };
    let mask_tail = |mut v: Vec<u64>| -> Vec<u64> {
        let tail = d.n_runs % 64;
        if tail != 0 {
            let last = v.len() - 1;
            v[last] &= (1u64 << tail) - 1;
        }
        v
    };
    for i in 0..n {
        for j in i + 1..n {
            // product of ±1 columns: +1 where the bits agree
            let xor: Vec<u64> = raw[i].iter().zip(&raw[j]).map(|(a, b)| a ^ b).collect();
            let prod = mask_tail(not(xor.clone()));
            record(vec![i, j], prod);
            if max_order == 3 {
                for l in j + 1..n {
                    // three-way product: +1 where an even number of the three are -1
                    let x3: Vec<u64> = xor.iter().zip(&raw[l]).map(|(a, b)| a ^ b).collect();
                    record(vec![i, j, l], mask_tail(x3));
                }
            }
        }
    }
    Ok(AliasReport {
        names: d.names.clone(),
        max_order,
        aliases,
    })
}

/// The factor levels of one run, in factor order.
pub fn signs_for_run(d: &DesignMatrix, run_index: usize) -> Result<Vec<(String, i8)>, DesignError> {
    if run_index >= d.n_runs {
        return Err(DesignError::RunIndex {
            index: run_index,
            n_runs: d.n_runs,
        });
    }
    Ok(d.names.iter().cloned().zip(d.row(run_index).iter().copied()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc_half_fraction() -> DesignMatrix {
        generate_fractional(3, Resolution::III, 4).unwrap()
    }

    fn dot(a: &[i8], b: &[i8]) -> i64 {
        a.iter().zip(b).map(|(&x, &y)| x as i64 * y as i64).sum()
    }

    #[test]
    fn full_factorial_three_enumerates_every_combination() {
        let d = full_factorial(3).unwrap();
        assert_eq!(d.n_runs(), 8);
        let rows: HashSet<Vec<i8>> = d.rows().map(<[i8]>::to_vec).collect();
        assert_eq!(rows.len(), 8);
        assert_eq!(d.resolution(), Resolution::Full);
        assert_eq!(d.row(0), &[-1, -1, -1]);
        assert_eq!(d.row(1), &[1, -1, -1]);
    }

    #[test]
    fn full_factorial_one_factor() {
        let d = full_factorial(1).unwrap();
        assert_eq!(d.column(0), vec![-1, 1]);
    }

    #[test]
    fn full_factorial_four_is_orthogonal() {
        let d = full_factorial(4).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_eq!(dot(&d.column(i), &d.column(j)), 0);
            }
        }
    }

    #[test]
    fn full_factorial_bounds() {
        assert_eq!(full_factorial(0), Err(DesignError::FactorCount(0)));
        let err = full_factorial(21).unwrap_err();
        assert!(err.to_string().contains("between 1 and 20"));
    }

    #[test]
    fn half_fraction_matches_figure() {
        let d = abc_half_fraction();
        let rows: Vec<&[i8]> = d.rows().collect();
        assert_eq!(rows, vec![&[-1, -1, 1][..], &[1, -1, -1], &[-1, 1, -1], &[1, 1, 1]]);
        assert_eq!(d.generators().get(&2), Some(&vec![0, 1]));
        assert_eq!(d.generator_labels(), vec!["C = AB"]);
        assert_eq!(d.resolution(), Resolution::III);
    }

    #[test]
    fn full_target_within_budget_is_full_factorial() {
        assert_eq!(generate_fractional(3, Resolution::Full, 8).unwrap(), full_factorial(3).unwrap());
    }

    #[test]
    fn infeasible_names_smallest_run_count() {
        match generate_fractional(3, Resolution::IV, 4) {
            Err(DesignError::Infeasible { smallest, .. }) => assert_eq!(smallest, Some(8)),
            other => panic!("unexpected {other:?}"),
        }
        match generate_fractional(8, Resolution::III, 4) {
            Err(DesignError::Infeasible { smallest, .. }) => assert_eq!(smallest, Some(16)),
            other => panic!("unexpected {other:?}"),
        }
        let msg = generate_fractional(5, Resolution::Full, 16).unwrap_err().to_string();
        assert!(msg.contains("smallest run count that works is 32"), "{msg}");
    }

    #[test]
    fn max_runs_must_be_power_of_two() {
        assert_eq!(generate_fractional(3, Resolution::III, 6), Err(DesignError::MaxRuns(6)));
        assert_eq!(generate_fractional(3, Resolution::III, 2), Err(DesignError::MaxRuns(2)));
        assert_eq!(generate_fractional(0, Resolution::III, 8), Err(DesignError::NoFactors));
    }

    #[test]
    fn verify_half_fraction() {
        let d = abc_half_fraction();
        assert!(verify_resolution(&d, Resolution::III));
        assert!(!verify_resolution(&d, Resolution::IV));
        assert!(!verify_resolution(&d, Resolution::Full));
        let full = full_factorial(3).unwrap();
        assert!(verify_resolution(&full, Resolution::V));
        assert!(verify_resolution(&full, Resolution::Full));
    }

    #[test]
    fn five_factors_in_sixteen_runs_is_resolution_four_or_better() {
        let d = generate_fractional(5, Resolution::IV, 16).unwrap();
        assert_eq!(d.n_runs(), 16);
        // The heaviest candidate ABCD comes first: E = ABCD, resolution V.
        assert_eq!(d.generators().get(&4), Some(&vec![0, 1, 2, 3]));
        assert_eq!(d.resolution(), Resolution::V);
        assert!(alias_structure(&d, 2).unwrap().is_clear());
    }

    #[test]
    fn alias_structure_of_half_fraction() {
        let d = abc_half_fraction();
        let report = alias_structure(&d, 2).unwrap();
        assert_eq!(
            report.pairs(),
            vec![
                ("A".to_string(), "BC".to_string()),
                ("B".to_string(), "AC".to_string()),
                ("C".to_string(), "AB".to_string()),
            ]
        );
        assert!(report.to_string().contains("A <-> BC"));
        assert!(alias_structure(&full_factorial(4).unwrap(), 2).unwrap().is_clear());
        assert_eq!(alias_structure(&d, 4).unwrap_err(), DesignError::AliasOrder(4));
    }

    #[test]
    fn alias_signs_follow_column_equality() {
        let d = DesignMatrix::from_rows(
            default_factor_names(3),
            vec![vec![-1, -1, 1], vec![1, -1, -1], vec![-1, 1, -1], vec![1, 1, 1]],
        )
        .unwrap();
        let report = alias_structure(&d, 2).unwrap();
        assert!(report.aliases.iter().flatten().all(|t| t.sign == 1));
    }

    #[test]
    fn third_order_aliases() {
        // E = ABCD in 16 runs: E aliases ABCD (order 4) only, so order 3 is clear
        // for mains; in the 8-run 4-factor fraction D = ABC, A <-> BCD.
        let d = generate_fractional(4, Resolution::IV, 8).unwrap();
        let report = alias_structure(&d, 3).unwrap();
        assert_eq!(report.aliases[0].len(), 1);
        assert_eq!(report.aliases[0][0].factors, vec![1, 2, 3]);
    }

    #[test]
    fn signs_for_run_examples() {
        let d = full_factorial(2).unwrap();
        assert_eq!(signs_for_run(&d, 0).unwrap(), vec![("A".into(), -1), ("B".into(), -1)]);
        assert_eq!(signs_for_run(&d, 3).unwrap(), vec![("A".into(), 1), ("B".into(), 1)]);
        assert_eq!(
            signs_for_run(&abc_half_fraction(), 0).unwrap(),
            vec![("A".into(), -1), ("B".into(), -1), ("C".into(), 1)]
        );
        assert_eq!(
            signs_for_run(&d, 4).unwrap_err(),
            DesignError::RunIndex { index: 4, n_runs: 4 }
        );
    }

    #[test]
    fn csv_round_trip_keeps_metadata() {
        let d = generate_fractional(6, Resolution::IV, 16).unwrap();
        let text = d.to_csv_string();
        assert!(text.starts_with("# factors: 6\n"));
        assert!(text.contains("# resolution: IV"));
        assert!(text.contains("\n+1,") || text.contains("\n-1,"));
        let back: DesignMatrix = text.parse().unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_rejects_false_metadata() {
        let d = abc_half_fraction();
        let text = d.to_csv_string().replace("# resolution: III", "# resolution: IV");
        assert!(matches!(text.parse::<DesignMatrix>(), Err(DesignError::Csv(_))));
        let text = d.to_csv_string().replace("C = AB", "C = AC");
        assert!(text.parse::<DesignMatrix>().is_err());
    }

    #[test]
    fn csv_rejects_bad_levels_and_irregular_columns() {
        assert!("A,B\n-1,0\n1,1\n".parse::<DesignMatrix>().is_err());
        // C is neither a base column nor a product
        let text = "A,B,C\n-1,-1,1\n1,-1,1\n-1,1,-1\n1,1,-1\n";
        assert!(matches!(text.parse::<DesignMatrix>(), Err(DesignError::Malformed(_))));
    }

    #[test]
    fn renaming_factors() {
        let d = full_factorial(2).unwrap();
        let d = d.with_names(vec!["tree-ter".into(), "gcse".into()]).unwrap();
        assert_eq!(d.term_label(&[0, 1]), "tree-ter:gcse");
        assert!(full_factorial(2).unwrap().with_names(vec!["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn many_factor_names() {
        let names = default_factor_names(82);
        assert_eq!(names[0], "F1");
        assert_eq!(names[81], "F82");
    }
}
