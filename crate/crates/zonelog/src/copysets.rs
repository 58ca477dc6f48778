//! Decentralized copyset replication.
//!
//! Backup servers for a zone are confined to one *copyset* of R nodes, so
//! only R simultaneous failures hitting one copyset lose data, instead of
//! any R-combination as under random replication. Every master computes
//! the same copysets independently: generation, joins and failure handling
//! are pure functions of the node list, the parameters and the seed.
//!
//! All pseudo-randomness is the splitmix64 recurrence (add constant
//! 0x9E3779B97F4A7C15; mix with shifts 30/27/31 and multipliers
//! 0xBF58476D1CE4E5B9, 0x94D049BB133111EB), so independent implementations
//! agree bit for bit.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// The documented deterministic generator.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn shuffled(nodes: &[u16], rng: &mut u64) -> Vec<u16> {
    let mut perm = nodes.to_vec();
    for i in (1..perm.len()).rev() {
        let j = (splitmix64(rng) % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}

/// An unordered set of R backup node IDs; members are kept sorted.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct Copyset {
    members: Vec<u16>,
    pub degraded: bool,
}

impl Copyset {
    pub fn new(mut members: Vec<u16>) -> Self {
        members.sort_unstable();
        members.dedup();
        Copyset {
            members,
            degraded: false,
        }
    }

    pub fn members(&self) -> &[u16] {
        &self.members
    }

    pub fn contains(&self, node: u16) -> bool {
        self.members.binary_search(&node).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Cluster membership input: the nodes-file content plus parameters.
#[derive(Clone, Debug)]
pub struct ClusterView {
    pub nodes: Vec<u16>,
    pub replication_factor: usize,
    pub scatter_width: usize,
    pub seed: u64,
}

impl ClusterView {
    /// Number of permutations: P = ceil(S / (R - 1)).
    pub fn permutation_count(&self) -> usize {
        self.scatter_width.div_ceil(self.replication_factor - 1)
    }
}

/// Copysets from explicit permutations: consecutive R-tuples of each
/// permutation; when N is not divisible by R the last R nodes form one
/// extra (overlapping) copyset so every node is covered.
pub fn copysets_from_permutations(perms: &[Vec<u16>], r: usize) -> Vec<Copyset> {
    let mut out = Vec::new();
    for perm in perms {
        let n = perm.len();
        let whole = n / r;
        for i in 0..whole {
            out.push(Copyset::new(perm[i * r..(i + 1) * r].to_vec()));
        }
        if n % r != 0 && n >= r {
            out.push(Copyset::new(perm[n - r..].to_vec()));
        }
    }
    out
}

/// Seeded generation: P pseudo-random permutations of the node list.
pub fn generate_copysets(view: &ClusterView) -> Result<Vec<Copyset>> {
    let r = view.replication_factor;
    if view.nodes.len() < r {
        return Err(Error::Config(format!(
            "{} nodes cannot host copysets of {r}",
            view.nodes.len()
        )));
    }
    let mut rng = view.seed;
    let perms: Vec<Vec<u16>> = (0..view.permutation_count())
        .map(|_| shuffled(&view.nodes, &mut rng))
        .collect();
    Ok(copysets_from_permutations(&perms, r))
}

/// How the first (primary) backup server of a zone is chosen.
pub enum FirstBackupPolicy<'a> {
    /// Seeded-random among covered nodes.
    Plain,
    /// Round-robin so firsts spread over all nodes.
    Disjunctive,
    /// Caller-supplied preference order; falls back to plain.
    LocalityAware(&'a [u16]),
}

/// The decentralized copyset state one master keeps.
pub struct CopysetManager {
    view: ClusterView,
    copysets: Vec<Copyset>,
    live: BTreeSet<u16>,
    join_buffer: Vec<u16>,
    rng: u64,
    round_robin: usize,
}

impl CopysetManager {
    pub fn new(view: ClusterView) -> Result<Self> {
        let copysets = generate_copysets(&view)?;
        let live = view.nodes.iter().copied().collect();
        let rng = view.seed ^ 0xC0FF_EE00_C0FF_EE00;
        Ok(CopysetManager {
            view,
            copysets,
            live,
            join_buffer: Vec::new(),
            rng,
            round_robin: 0,
        })
    }

    pub fn copysets(&self) -> &[Copyset] {
        &self.copysets
    }

    pub fn distinct_copysets(&self) -> usize {
        let set: BTreeSet<&[u16]> = self.copysets.iter().map(|c| c.members()).collect();
        set.len()
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = u16> + '_ {
        self.live.iter().copied()
    }

    /// Nodes that appear in at least one copyset.
    pub fn covered_nodes(&self) -> BTreeSet<u16> {
        self.copysets
            .iter()
            .flat_map(|c| c.members().iter().copied())
            .collect()
    }

    /// Picks the ordered backup servers for a new zone: the first backup
    /// per policy, the remaining R-1 from one copyset containing it.
    pub fn select_backups(&mut self, policy: FirstBackupPolicy<'_>) -> Result<Vec<u16>> {
        let candidates: Vec<u16> = {
            let covered = self.covered_nodes();
            self.live.iter().copied().filter(|n| covered.contains(n)).collect()
        };
        if candidates.is_empty() {
            return Err(Error::Config("no live node is covered by a copyset".into()));
        }
        let first = match policy {
            FirstBackupPolicy::Plain => {
                candidates[(splitmix64(&mut self.rng) % candidates.len() as u64) as usize]
            }
            FirstBackupPolicy::Disjunctive => {
                let pick = candidates[self.round_robin % candidates.len()];
                self.round_robin += 1;
                pick
            }
            FirstBackupPolicy::LocalityAware(preference) => preference
                .iter()
                .copied()
                .find(|n| candidates.contains(n))
                .unwrap_or_else(|| {
                    candidates[(splitmix64(&mut self.rng) % candidates.len() as u64) as usize]
                }),
        };
        let containing: Vec<usize> = (0..self.copysets.len())
            .filter(|&i| self.copysets[i].contains(first))
            .collect();
        debug_assert!(!containing.is_empty(), "covered node without a copyset");
        let idx = containing[(splitmix64(&mut self.rng) % containing.len() as u64) as usize];
        let mut ordered = vec![first];
        ordered.extend(
            self.copysets[idx]
                .members()
                .iter()
                .copied()
                .filter(|&n| n != first),
        );
        Ok(ordered)
    }

    /// Buffers a joining node; every R-th join forms one new copyset of the
    /// buffered nodes. Returns false for a duplicate join.
    pub fn on_join(&mut self, node: u16) -> bool {
        if self.live.contains(&node) || self.join_buffer.contains(&node) {
            return false;
        }
        self.join_buffer.push(node);
        self.live.insert(node);
        if self.join_buffer.len() == self.view.replication_factor {
            let members = std::mem::take(&mut self.join_buffer);
            self.copysets.push(Copyset::new(members));
        }
        true
    }

    /// Replaces a failed node in every copyset containing it by a
    /// pseudo-random live node, with the generator seeded from the
    /// aggregated member IDs xor the failed ID, so all masters agree.
    pub fn on_failure(&mut self, node: u16) {
        self.live.remove(&node);
        self.join_buffer.retain(|&n| n != node);
        for copyset in &mut self.copysets {
            if !copyset.contains(node) {
                continue;
            }
            let sum: u64 = copyset.members().iter().map(|&n| n as u64).sum();
            let mut rng = sum ^ node as u64;
            let replacements: Vec<u16> = self
                .live
                .iter()
                .copied()
                .filter(|n| !copyset.contains(*n))
                .collect();
            let mut members: Vec<u16> =
                copyset.members().iter().copied().filter(|&n| n != node).collect();
            if replacements.is_empty() {
                *copyset = Copyset::new(members);
                copyset.degraded = true;
                continue;
            }
            let pick = replacements[(splitmix64(&mut rng) % replacements.len() as u64) as usize];
            members.push(pick);
            *copyset = Copyset::new(members);
        }
    }
}

/// Fraction of all R-node failure combinations that lose data when one
/// zone lives on every copyset: hits / C(n, r), computed exhaustively.
pub fn copyset_loss_fraction(copysets: &[Copyset], nodes: &[u16], r: usize) -> (u64, u64) {
    let distinct: BTreeSet<&[u16]> = copysets.iter().map(|c| c.members()).collect();
    let mut hits = 0u64;
    let mut total = 0u64;
    for_each_combination(nodes, r, &mut |combo| {
        total += 1;
        if distinct.contains(combo) {
            hits += 1;
        }
    });
    (hits, total)
}

/// Loss fraction under random replication: `zones` zones each pick a
/// seeded-random R-set; a failure combination loses data when it equals
/// any zone's set.
pub fn random_replication_loss(nodes: &[u16], r: usize, zones: usize, seed: u64) -> (u64, u64) {
    let mut rng = seed;
    let mut sets: BTreeSet<Vec<u16>> = BTreeSet::new();
    for _ in 0..zones {
        let perm = shuffled(nodes, &mut rng);
        let mut set = perm[..r].to_vec();
        set.sort_unstable();
        sets.insert(set);
    }
    let mut hits = 0u64;
    let mut total = 0u64;
    for_each_combination(nodes, r, &mut |combo| {
        total += 1;
        if sets.contains(combo) {
            hits += 1;
        }
    });
    (hits, total)
}

fn for_each_combination(nodes: &[u16], r: usize, f: &mut dyn FnMut(&[u16])) {
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    let mut combo = Vec::with_capacity(r);
    fn rec(sorted: &[u16], start: usize, r: usize, combo: &mut Vec<u16>, f: &mut dyn FnMut(&[u16])) {
        if combo.len() == r {
            f(combo);
            return;
        }
        for i in start..sorted.len() {
            combo.push(sorted[i]);
            rec(sorted, i + 1, r, combo, f);
            combo.pop();
        }
    }
    rec(&sorted, 0, r, &mut combo, f);
}
