//! Analysis of trained languages and transfer matrices: the expressivity
//! partial order (two-sample tests per target game), degeneracy statistics,
//! mutual information (paper-convention statistic plus an independent
//! entropy-route oracle), degenerate-component structure, and training
//! curves aggregated across seeds.

pub mod stats;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::agents::Message;
use crate::fmath;
use crate::space::{attribute_distance, InputSpace};
use crate::trainer::{count_message_types, EmergentLanguage, EpochDiagnostics};
use crate::transfer::{game_sort_key, TransferMatrix};
use stats::{mean, percentile, sample_sd, two_sample_test, TestKind};

#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    /// The verdict needs ≥ 2 seeds per side for a variance estimate.
    InsufficientSeeds {
        source: String,
        target: String,
        got: usize,
    },
    /// Verdicts need both sources evaluated on identical target sets.
    MismatchedTargets(String),
    UnknownSource(String),
    /// Missing or failed cells, listed.
    IncompleteMatrix(Vec<String>),
    EmptyDiagnostics,
    EmptyGroup(String),
    LanguageSpaceMismatch { language: usize, space: usize },
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::InsufficientSeeds { source, target, got } => write!(
                f,
                "need ≥ 2 seeds for {source} on {target}, got {got} (no variance estimate)"
            ),
            AnalysisError::MismatchedTargets(msg) => write!(f, "target sets differ: {msg}"),
            AnalysisError::UnknownSource(s) => write!(f, "source {s} not in the matrix"),
            AnalysisError::IncompleteMatrix(cells) => {
                write!(f, "matrix incomplete: {}", cells.join(", "))
            }
            AnalysisError::EmptyDiagnostics => write!(f, "no diagnostics to aggregate"),
            AnalysisError::EmptyGroup(g) => write!(f, "group {g} has no languages"),
            AnalysisError::LanguageSpaceMismatch { language, space } => write!(
                f,
                "language covers {language} meanings but the space has {space}"
            ),
        }
    }
}

impl core::error::Error for AnalysisError {}

/// How two languages compare under the expressivity partial order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Relation {
    Greater,
    Less,
    Equal,
    Incomparable,
}

impl Relation {
    pub fn flipped(self) -> Relation {
        match self {
            Relation::Greater => Relation::Less,
            Relation::Less => Relation::Greater,
            other => other,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Relation::Greater => "greater",
            Relation::Less => "less",
            Relation::Equal => "equal",
            Relation::Incomparable => "incomparable",
        }
    }
}

/// Per-target test evidence backing a verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEvidence {
    pub target: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub p_value: f64,
    /// `Greater` if A is significantly better on this target, `Less` if B
    /// is, `None` if not significant.
    pub significant_direction: Option<Relation>,
}

/// Verdict plus the evidence it is a pure function of.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderVerdict {
    pub relation: Relation,
    pub evidence: Vec<TargetEvidence>,
}

/// Which test and significance level the verdict engine runs.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SignificanceSpec {
    pub test: TestKind,
    pub alpha: f64,
}

impl Default for SignificanceSpec {
    fn default() -> Self {
        SignificanceSpec {
            test: TestKind::Welch,
            alpha: 0.05,
        }
    }
}

/// Compares two sources over every target in the matrix: A is greater if it
/// is significantly better on at least one target and significantly worse on
/// none; symmetric for less; equal when nothing is significant; incomparable
/// when both directions hold somewhere.
pub fn expressivity_partial_order(
    matrix: &TransferMatrix,
    source_a: &str,
    source_b: &str,
    sig: &SignificanceSpec,
) -> Result<OrderVerdict, AnalysisError> {
    let sources = matrix.sources();
    for s in [source_a, source_b] {
        if !sources.iter().any(|x| x == s) {
            return Err(AnalysisError::UnknownSource(s.to_string()));
        }
    }
    let targets = matrix.targets();

    let mut evidence = Vec::with_capacity(targets.len());
    let mut a_wins = 0usize;
    let mut b_wins = 0usize;
    for target in &targets {
        let va = matrix.values(source_a, target);
        let vb = matrix.values(source_b, target);
        for (name, v) in [(source_a, &va), (source_b, &vb)] {
            if v.len() < 2 {
                return Err(AnalysisError::InsufficientSeeds {
                    source: name.to_string(),
                    target: target.clone(),
                    got: v.len(),
                });
            }
        }
        let result = two_sample_test(sig.test, &va, &vb);
        let significant = result.p_value < sig.alpha;
        let direction = if significant {
            if mean(&va) > mean(&vb) {
                a_wins += 1;
                Some(Relation::Greater)
            } else {
                b_wins += 1;
                Some(Relation::Less)
            }
        } else {
            None
        };
        evidence.push(TargetEvidence {
            target: target.clone(),
            mean_a: mean(&va),
            mean_b: mean(&vb),
            p_value: result.p_value,
            significant_direction: direction,
        });
    }

    let relation = match (a_wins > 0, b_wins > 0) {
        (true, true) => Relation::Incomparable,
        (true, false) => Relation::Greater,
        (false, true) => Relation::Less,
        (false, false) => Relation::Equal,
    };
    Ok(OrderVerdict { relation, evidence })
}

/// One pairwise verdict of the full report.
#[derive(Debug, Clone, PartialEq)]
pub struct PairVerdict {
    pub source_a: String,
    pub source_b: String,
    pub verdict: OrderVerdict,
}

/// Equality groups in strict descending order, plus sources that fit no
/// total chain (mixed or incomparable relations).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainSummary {
    pub groups: Vec<Vec<String>>,
    pub unplaced: Vec<String>,
}

impl ChainSummary {
    /// Renders like `refer1000 ~ refer2500 > refer100 | unplaced: recon`.
    pub fn render(&self) -> String {
        let chain = self
            .groups
            .iter()
            .map(|g| g.join(" ~ "))
            .collect::<Vec<_>>()
            .join(" > ");
        if self.unplaced.is_empty() {
            chain
        } else {
            format!("{chain} | unplaced: {}", self.unplaced.join(", "))
        }
    }

    /// The group a source landed in, if any.
    pub fn group_of(&self, source: &str) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.iter().any(|s| s == source))
    }
}

/// All pairwise verdicts plus the maximal-chain summary.
#[derive(Debug, Clone, PartialEq)]
pub struct FullOrderReport {
    pub sources: Vec<String>,
    pub pairs: Vec<PairVerdict>,
    pub chain: ChainSummary,
}

impl FullOrderReport {
    pub fn verdict_between(&self, a: &str, b: &str) -> Option<Relation> {
        for p in &self.pairs {
            if p.source_a == a && p.source_b == b {
                return Some(p.verdict.relation);
            }
            if p.source_a == b && p.source_b == a {
                return Some(p.verdict.relation.flipped());
            }
        }
        None
    }
}

/// Runs every pairwise verdict and extracts the chain. Errors if the matrix
/// has missing or failed cells (they are listed).
pub fn full_order_report(
    matrix: &TransferMatrix,
    sig: &SignificanceSpec,
) -> Result<FullOrderReport, AnalysisError> {
    let incomplete = matrix.incomplete_cells();
    if !incomplete.is_empty() {
        return Err(AnalysisError::IncompleteMatrix(incomplete));
    }
    let sources = matrix.sources();
    let mut pairs = Vec::new();
    for i in 0..sources.len() {
        for j in i + 1..sources.len() {
            let verdict = expressivity_partial_order(matrix, &sources[i], &sources[j], sig)?;
            pairs.push(PairVerdict {
                source_a: sources[i].clone(),
                source_b: sources[j].clone(),
                verdict,
            });
        }
    }
    let chain = extract_chain(&sources, &pairs);
    Ok(FullOrderReport {
        sources,
        pairs,
        chain,
    })
}

/// Union-find over `equal` verdicts, then a strict total order over the
/// components where it exists; components with mixed relations are pruned
/// into `unplaced` (most-conflicted first, deterministic ties).
fn extract_chain(sources: &[String], pairs: &[PairVerdict]) -> ChainSummary {
    let index_of = |name: &str| sources.iter().position(|s| s == name).expect("known source");
    let relation = |a: usize, b: usize| -> Relation {
        if a == b {
            return Relation::Equal;
        }
        for p in pairs {
            let (pa, pb) = (index_of(&p.source_a), index_of(&p.source_b));
            if (pa, pb) == (a, b) {
                return p.verdict.relation;
            }
            if (pa, pb) == (b, a) {
                return p.verdict.relation.flipped();
            }
        }
        Relation::Incomparable
    };

    // equality components
    let mut parent: Vec<usize> = (0..sources.len()).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let root = find(parent, parent[x]);
            parent[x] = root;
        }
        parent[x]
    }
    for i in 0..sources.len() {
        for j in i + 1..sources.len() {
            if relation(i, j) == Relation::Equal {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..sources.len() {
        let root = find(&mut parent, i);
        components.entry(root).or_default().push(i);
    }
    let mut comps: Vec<Vec<usize>> = components.into_values().collect();
    for c in &mut comps {
        c.sort_by_key(|&i| game_sort_key(&sources[i]));
    }
    comps.sort_by_key(|c| game_sort_key(&sources[c[0]]));

    // component-level relation: strict domination only when every cross pair
    // agrees
    let comp_rel = |x: &[usize], y: &[usize]| -> Option<Relation> {
        let mut seen: BTreeSet<&'static str> = BTreeSet::new();
        for &a in x {
            for &b in y {
                seen.insert(relation(a, b).label());
            }
        }
        if seen.len() != 1 {
            return None;
        }
        match seen.into_iter().next().unwrap() {
            "greater" => Some(Relation::Greater),
            "less" => Some(Relation::Less),
            "equal" => Some(Relation::Equal),
            _ => Some(Relation::Incomparable),
        }
    };

    // prune components entangled in mixed/incomparable relations
    let mut active: Vec<usize> = (0..comps.len()).collect();
    let mut unplaced: Vec<usize> = Vec::new();
    loop {
        let mut conflicts: Vec<usize> = alloc::vec![0; comps.len()];
        let mut any = false;
        for (ai, &a) in active.iter().enumerate() {
            for &b in active.iter().skip(ai + 1) {
                let clean = matches!(
                    comp_rel(&comps[a], &comps[b]),
                    Some(Relation::Greater) | Some(Relation::Less)
                );
                if !clean {
                    conflicts[a] += 1;
                    conflicts[b] += 1;
                    any = true;
                }
            }
        }
        if !any {
            break;
        }
        // drop the most conflicted component; ties drop the later one in
        // canonical order
        let worst = *active
            .iter()
            .max_by_key(|&&c| (conflicts[c], c))
            .expect("non-empty active set");
        active.retain(|&c| c != worst);
        unplaced.push(worst);
    }

    // strict order the surviving components: count dominated peers
    let mut ordered = active.clone();
    ordered.sort_by_key(|&a| {
        let dominated = active
            .iter()
            .filter(|&&b| b != a && comp_rel(&comps[a], &comps[b]) == Some(Relation::Greater))
            .count();
        core::cmp::Reverse(dominated)
    });

    unplaced.sort();
    ChainSummary {
        groups: ordered
            .into_iter()
            .map(|c| comps[c].iter().map(|&i| sources[i].clone()).collect())
            .collect(),
        unplaced: unplaced
            .into_iter()
            .flat_map(|c| comps[c].iter().map(|&i| sources[i].clone()))
            .collect(),
    }
}

/// Message-type frequencies of a language.
fn type_frequencies(lang: &EmergentLanguage) -> BTreeMap<&[u16], usize> {
    let mut freq: BTreeMap<&[u16], usize> = BTreeMap::new();
    for m in lang.messages() {
        *freq.entry(m.tokens()).or_insert(0) += 1;
    }
    freq
}

/// Mutual-information statistic in the paper's reporting convention: the sum
/// over all meanings of `ln|𝒳| − ln f(ℒ(x))`, natural log. Zero for a
/// constant language, `|𝒳|·ln|𝒳|` for an injective one.
pub fn paper_mutual_information(lang: &EmergentLanguage) -> f64 {
    let freq = type_frequencies(lang);
    let n = lang.len() as f64;
    let ln_n = fmath::ln(n);
    lang.messages()
        .iter()
        .map(|m| ln_n - fmath::ln(freq[m.tokens()] as f64))
        .sum()
}

/// Independent route to the same quantity: `|𝒳| · I(X; M)` computed from the
/// empirical joint distribution, grouped by message type
/// (`|𝒳| · Σ_m p(m) · ln(1/p(m))` for a deterministic mapping of a uniform
/// input). Analytically identical to [`paper_mutual_information`]; serves as
/// the anti-drift oracle.
pub fn entropy_mi_oracle(lang: &EmergentLanguage) -> f64 {
    let freq = type_frequencies(lang);
    let n = lang.len() as f64;
    let mut entropy = 0.0;
    for (_, f) in freq {
        let p = f as f64 / n;
        entropy += p * fmath::ln(1.0 / p);
    }
    n * entropy
}

/// Table-3-style degeneracy summary of one source-game group.
#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyRow {
    pub game: String,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub p25: f64,
    pub p75: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DegeneracyReport {
    pub rows: Vec<DegeneracyRow>,
}

/// Message-type count statistics (mean, 25th/75th percentile with linear
/// interpolation) per source-game group of per-seed languages.
pub fn degeneracy_report(
    groups: &[(String, Vec<&EmergentLanguage>)],
) -> Result<DegeneracyReport, AnalysisError> {
    let mut rows = Vec::with_capacity(groups.len());
    for (game, langs) in groups {
        if langs.is_empty() {
            return Err(AnalysisError::EmptyGroup(game.clone()));
        }
        let counts: Vec<usize> = langs.iter().map(|l| count_message_types(l)).collect();
        let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        rows.push(DegeneracyRow {
            game: game.clone(),
            mean: mean(&as_f),
            p25: percentile(&as_f, 25.0),
            p75: percentile(&as_f, 75.0),
            counts,
        });
    }
    Ok(DegeneracyReport { rows })
}

/// A many-to-one component: one message type with the ≥ 2 meanings mapped to
/// it and the spread of their pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DegenerateComponent {
    pub message: Message,
    pub meaning_indices: Vec<usize>,
    /// Mean attribute-level Hamming distance over all unordered pairs.
    pub mean_distance: f64,
    pub distance_sd: f64,
    /// Mean flat-vector Euclidean distance over the same pairs, reported as
    /// a cross-check (the monotone transform √(2·hamming) of each pair).
    pub mean_euclidean: f64,
}

/// Top-k message types by meaning count (ties by message token order), each
/// with the mean pairwise distance between its meanings. Injective
/// languages return an empty list.
pub fn degenerate_component_analysis(
    lang: &EmergentLanguage,
    space: &InputSpace,
    top_k: usize,
) -> Result<Vec<DegenerateComponent>, AnalysisError> {
    if lang.len() != space.len() {
        return Err(AnalysisError::LanguageSpaceMismatch {
            language: lang.len(),
            space: space.len(),
        });
    }
    let mut groups: BTreeMap<&[u16], Vec<usize>> = BTreeMap::new();
    for (i, m) in lang.pairs() {
        groups.entry(m.tokens()).or_default().push(i);
    }
    let mut degenerate: Vec<(&[u16], Vec<usize>)> = groups
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .collect();
    degenerate.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));
    degenerate.truncate(top_k);

    let mut out = Vec::with_capacity(degenerate.len());
    for (tokens, members) in degenerate {
        let mut dists = Vec::with_capacity(members.len() * (members.len() - 1) / 2);
        for (ai, &a) in members.iter().enumerate() {
            for &b in members.iter().skip(ai + 1) {
                let d = attribute_distance(space.meaning(a), space.meaning(b))
                    .expect("meanings share the space spec");
                dists.push(d as f64);
            }
        }
        let mean_distance = mean(&dists);
        out.push(DegenerateComponent {
            message: lang.message(members[0]).clone(),
            mean_distance,
            distance_sd: sample_sd(&dists),
            mean_euclidean: mean(
                &dists
                    .iter()
                    .map(|&d| fmath::sqrt(2.0 * d))
                    .collect::<Vec<_>>(),
            ),
            meaning_indices: members,
        });
        let _ = tokens;
    }
    Ok(out)
}

/// One aggregated point of a per-epoch curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Aggregates one diagnostic field across seeds: epochs truncate to the
/// shortest series; each point carries mean ± sample deviation.
pub fn epoch_curve(
    seed_series: &[&[EpochDiagnostics]],
    field: impl Fn(&EpochDiagnostics) -> f64,
) -> Result<Vec<CurvePoint>, AnalysisError> {
    if seed_series.is_empty() || seed_series.iter().any(|s| s.is_empty()) {
        return Err(AnalysisError::EmptyDiagnostics);
    }
    let len = seed_series.iter().map(|s| s.len()).min().expect("non-empty");
    let mut out = Vec::with_capacity(len);
    for e in 0..len {
        let values: Vec<f64> = seed_series.iter().map(|s| field(&s[e])).collect();
        out.push(CurvePoint {
            epoch: seed_series[0][e].epoch,
            mean: mean(&values),
            sd: sample_sd(&values),
        });
    }
    Ok(out)
}

/// Message-type collapse curve (Fig-6 style): per-epoch mean ± deviation of
/// the message-type count across seeds.
pub fn collapse_curve(
    seed_series: &[&[EpochDiagnostics]],
) -> Result<Vec<CurvePoint>, AnalysisError> {
    epoch_curve(seed_series, |d| d.message_types as f64)
}

/// Mutual-information curve across seeds (Fig-7 style).
pub fn mi_curve(seed_series: &[&[EpochDiagnostics]]) -> Result<Vec<CurvePoint>, AnalysisError> {
    epoch_curve(seed_series, |d| d.paper_mi)
}
