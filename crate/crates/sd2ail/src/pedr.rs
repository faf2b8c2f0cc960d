//! Prioritized expert demonstration replay: sum-tree buffers sampled
//! proportionally to `p_i^zeta`, annealed importance weights, and the
//! coordinator that combines one buffer per expert trajectory with a
//! single pseudo-expert buffer.

use std::io::Write;

use rand::Rng;

use crate::nn::LineCursor;
use crate::{Error, Result};

/// Complete binary tree of priority sums. Leaves are padded to a power
/// of two so that in-order leaf positions match leaf indices; padding
/// leaves hold zero and can never be selected.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaf_count: usize,
    base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(leaf_count: usize) -> Self {
        let base = leaf_count.next_power_of_two().max(1);
        SumTree {
            leaf_count,
            base,
            nodes: vec![0.0; 2 * base - 1],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[0]
    }

    pub fn leaf(&self, i: usize) -> f64 {
        self.nodes[self.base - 1 + i]
    }

    /// Set leaf `i` and recompute the path to the root from child sums,
    /// which keeps the root free of incremental drift.
    pub fn set(&mut self, i: usize, value: f64) {
        assert!(i < self.leaf_count, "leaf index out of range");
        let mut idx = self.base - 1 + i;
        self.nodes[idx] = value;
        while idx > 0 {
            idx = (idx - 1) / 2;
            self.nodes[idx] = self.nodes[2 * idx + 1] + self.nodes[2 * idx + 2];
        }
    }

    /// Index of the unique leaf whose cumulative-priority interval
    /// `[sum_{j<i}, sum_{j<=i})` contains `mass`.
    pub fn prefix_find(&self, mass: f64) -> Result<usize> {
        if !(mass >= 0.0 && mass < self.total()) {
            return Err(Error::Config(format!(
                "prefix mass {mass} outside [0, {})",
                self.total()
            )));
        }
        let mut idx = 0;
        let mut mass = mass;
        while idx < self.base - 1 {
            let left = 2 * idx + 1;
            let left_sum = self.nodes[left];
            if mass < left_sum {
                idx = left;
            } else {
                mass -= left_sum;
                idx = left + 1;
            }
        }
        Ok(idx - (self.base - 1))
    }
}

/// FIFO ring of entries with priorities. Sampling is proportional to
/// `p_i^zeta`. Push order defines a stable sequence id; ids of evicted
/// entries become stale and are skipped (and counted) on update.
#[derive(Debug, Clone)]
pub struct PriorityBuffer {
    capacity: usize,
    zeta: f64,
    entries: Vec<Vec<f64>>,
    priorities: Vec<f64>,
    seqs: Vec<u64>,
    tree: SumTree,
    next_seq: u64,
    stale_skipped: u64,
}

/// One sampling result: sequence ids, cloned entries, and normalized
/// importance weights.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub ids: Vec<u64>,
    pub entries: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl PriorityBuffer {
    pub fn new(capacity: usize, zeta: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        if !(zeta.is_finite() && zeta >= 0.0) {
            return Err(Error::Config("zeta must be non-negative".into()));
        }
        Ok(PriorityBuffer {
            capacity,
            zeta,
            entries: Vec::new(),
            priorities: Vec::new(),
            seqs: Vec::new(),
            tree: SumTree::new(capacity),
            next_seq: 0,
            stale_skipped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn stale_skipped(&self) -> u64 {
        self.stale_skipped
    }

    pub fn total_mass(&self) -> f64 {
        self.tree.total()
    }

    pub fn priority(&self, slot: usize) -> f64 {
        self.priorities[slot]
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Current maximum raw priority, or 1 for an empty buffer.
    pub fn max_priority(&self) -> f64 {
        if self.priorities.is_empty() {
            1.0
        } else {
            self.priorities.iter().copied().fold(0.0, f64::max)
        }
    }

    /// Insert an entry; omitted priorities default to the buffer's
    /// current maximum (1 when empty). Evicts the oldest entry at
    /// capacity. Returns the entry's sequence id.
    pub fn push(&mut self, entry: Vec<f64>, priority: Option<f64>) -> Result<u64> {
        let p = match priority {
            Some(p) => {
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::Config(format!("invalid priority {p}")));
                }
                p
            }
            None => self.max_priority(),
        };
        let seq = self.next_seq;
        let slot = (seq % self.capacity as u64) as usize;
        if self.entries.len() <= slot {
            self.entries.push(entry);
            self.priorities.push(p);
            self.seqs.push(seq);
        } else {
            self.entries[slot] = entry;
            self.priorities[slot] = p;
            self.seqs[slot] = seq;
        }
        self.tree.set(slot, self.mass_of(p));
        self.next_seq += 1;
        Ok(seq)
    }

    fn mass_of(&self, priority: f64) -> f64 {
        priority.powf(self.zeta)
    }

    fn slot_of(&self, id: u64) -> Option<usize> {
        let slot = (id % self.capacity as u64) as usize;
        if slot < self.seqs.len() && self.seqs[slot] == id {
            Some(slot)
        } else {
            None
        }
    }

    pub fn entry(&self, id: u64) -> Option<&Vec<f64>> {
        self.slot_of(id).map(|s| &self.entries[s])
    }

    /// Sampling probability of slot `i` under the current state.
    pub fn probability(&self, slot: usize) -> f64 {
        self.tree.leaf(slot) / self.tree.total()
    }

    /// Sample `k` entries with replacement, proportional to `p^zeta`.
    /// Importance weights `(1/(len * P))^eta` are normalized by the
    /// batch maximum.
    pub fn sample<R: Rng>(&self, k: usize, eta: f64, rng: &mut R) -> Result<SampleBatch> {
        if self.is_empty() {
            return Err(Error::Empty("priority buffer"));
        }
        if k == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        let total = self.tree.total();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Numerical(format!(
                "unsampleable priority mass {total}"
            )));
        }
        let n = self.len() as f64;
        let mut ids = Vec::with_capacity(k);
        let mut entries = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        for _ in 0..k {
            let mass = rng.random_range(0.0..total);
            let slot = self.tree.prefix_find(mass)?;
            let prob = self.tree.leaf(slot) / total;
            ids.push(self.seqs[slot]);
            entries.push(self.entries[slot].clone());
            weights.push((1.0 / (n * prob)).powf(eta));
        }
        let max_w = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for w in &mut weights {
            *w /= max_w;
        }
        Ok(SampleBatch {
            ids,
            entries,
            weights,
        })
    }

    /// Set the priority of a live entry; stale ids are skipped and
    /// counted. Returns whether the id was live.
    pub fn update_priority(&mut self, id: u64, priority: f64) -> Result<bool> {
        if !(priority.is_finite() && priority >= 0.0) {
            return Err(Error::Config(format!("invalid priority {priority}")));
        }
        match self.slot_of(id) {
            Some(slot) => {
                self.priorities[slot] = priority;
                self.tree.set(slot, self.mass_of(priority));
                Ok(true)
            }
            None => {
                self.stale_skipped += 1;
                Ok(false)
            }
        }
    }

    /// Refresh priorities from discriminator confidences: `p = |1 - D|`.
    pub fn update_from_confidences(&mut self, ids: &[u64], confidences: &[f64]) -> Result<usize> {
        if ids.len() != confidences.len() {
            return Err(Error::Dim {
                what: "priority update",
                expected: ids.len(),
                got: confidences.len(),
            });
        }
        let mut live = 0;
        for (&id, &d) in ids.iter().zip(confidences) {
            if !d.is_finite() {
                return Err(Error::NonFinite("confidence for priority update".into()));
            }
            if self.update_priority(id, (1.0 - d).abs())? {
                live += 1;
            }
        }
        Ok(live)
    }

    /// Entries with priorities, oldest first.
    pub fn snapshot(&self) -> Vec<(&Vec<f64>, f64)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&s| self.seqs[s]);
        order
            .into_iter()
            .map(|s| (&self.entries[s], self.priorities[s]))
            .collect()
    }

    pub fn write_snapshot<W: Write>(&self, w: &mut W, name: &str) -> Result<()> {
        if name.contains(',') || name.contains('\n') {
            return Err(Error::Config("buffer name must not contain commas".into()));
        }
        let dim = self.entries.first().map_or(0, |e| e.len());
        writeln!(
            w,
            "sd2ail-buffer,1,{},{},{},{},{}",
            name,
            dim,
            self.capacity,
            fmt_f64(self.zeta),
            self.len()
        )?;
        for (entry, priority) in self.snapshot() {
            let mut cols: Vec<String> = entry.iter().map(|v| fmt_f64(*v)).collect();
            cols.push(fmt_f64(priority));
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parse a buffer snapshot; returns the buffer and its recorded name.
pub fn parse_buffer_snapshot(text: &str, capacity: usize) -> Result<(PriorityBuffer, String)> {
    let mut cursor = LineCursor::new(text);
    let (ln, header) = cursor.next_line("header")?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 7 || fields[0] != "sd2ail-buffer" || fields[1] != "1" {
        return Err(Error::parse(ln, "expected `sd2ail-buffer,1,...` header"));
    }
    let name = fields[2].to_string();
    let dim: usize = fields[3]
        .parse()
        .map_err(|e| Error::parse(ln, format!("bad dim: {e}")))?;
    let declared_capacity: usize = fields[4]
        .parse()
        .map_err(|e| Error::parse(ln, format!("bad capacity: {e}")))?;
    let zeta: f64 = fields[5]
        .parse()
        .map_err(|e| Error::parse(ln, format!("bad zeta: {e}")))?;
    let count: usize = fields[6]
        .parse()
        .map_err(|e| Error::parse(ln, format!("bad count: {e}")))?;
    if count > 10_000_000 || dim > 1_000_000 {
        return Err(Error::parse(ln, "snapshot too large"));
    }
    let capacity = capacity.max(declared_capacity.min(10_000_000)).max(1);
    let mut buffer =
        PriorityBuffer::new(capacity, zeta).map_err(|e| Error::parse(ln, e.to_string()))?;
    for _ in 0..count {
        let (ln, line) = cursor.next_line("buffer row")?;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != dim + 1 {
            return Err(Error::parse(
                ln,
                format!("expected {} columns, got {}", dim + 1, cols.len()),
            ));
        }
        let mut values = Vec::with_capacity(dim + 1);
        for c in &cols {
            values.push(
                c.parse::<f64>()
                    .map_err(|e| Error::parse(ln, format!("bad float `{c}`: {e}")))?,
            );
        }
        let priority = values.pop().unwrap();
        if !(priority.is_finite() && priority >= 0.0) {
            return Err(Error::parse(ln, format!("invalid priority {priority}")));
        }
        buffer.push(values, Some(priority))?;
    }
    cursor.expect_end()?;
    Ok((buffer, name))
}

/// Importance-weight exponent schedule: linear from `eta_start` to 1
/// over `total_steps`, then pinned at 1.
#[derive(Debug, Clone)]
pub struct AnnealSchedule {
    eta_start: f64,
    total_steps: u64,
    step: u64,
}

impl AnnealSchedule {
    pub fn new(eta_start: f64, total_steps: u64) -> Result<Self> {
        if !(eta_start > 0.0 && eta_start <= 1.0) {
            return Err(Error::Config("eta_start must lie in (0, 1]".into()));
        }
        Ok(AnnealSchedule {
            eta_start,
            total_steps,
            step: 0,
        })
    }

    pub fn eta(&self) -> f64 {
        if self.total_steps == 0 || self.step >= self.total_steps {
            return 1.0;
        }
        let frac = self.step as f64 / self.total_steps as f64;
        self.eta_start + (1.0 - self.eta_start) * frac
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }
}

/// Composite sample: per-buffer expert parts plus the pseudo part.
#[derive(Debug, Clone)]
pub struct CompositeBatch {
    /// `(expert buffer index, batch)` pairs, one per expert buffer.
    pub expert_parts: Vec<(usize, SampleBatch)>,
    pub pseudo: Option<SampleBatch>,
    pub eta: f64,
}

impl CompositeBatch {
    pub fn expert_entries(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.expert_parts
            .iter()
            .flat_map(|(_, b)| b.entries.iter())
    }

    pub fn expert_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.expert_parts
            .iter()
            .flat_map(|(_, b)| b.weights.iter().copied())
    }

    pub fn expert_len(&self) -> usize {
        self.expert_parts.iter().map(|(_, b)| b.ids.len()).sum()
    }
}

/// N+1-buffer coordinator: one priority buffer per expert trajectory,
/// one shared pseudo-expert buffer, and a fixed pseudo:expert sampling
/// ratio.
#[derive(Debug, Clone)]
pub struct ReplayCoordinator {
    expert: Vec<PriorityBuffer>,
    pseudo: PriorityBuffer,
    ratio: usize,
    anneal: AnnealSchedule,
    rotation: usize,
}

impl ReplayCoordinator {
    pub fn new(
        expert: Vec<PriorityBuffer>,
        pseudo: PriorityBuffer,
        ratio: usize,
        anneal: AnnealSchedule,
    ) -> Result<Self> {
        if expert.is_empty() {
            return Err(Error::Config("at least one expert buffer required".into()));
        }
        Ok(ReplayCoordinator {
            expert,
            pseudo,
            ratio,
            anneal,
            rotation: 0,
        })
    }

    pub fn expert_buffers(&self) -> &[PriorityBuffer] {
        &self.expert
    }

    pub fn expert_buffer_mut(&mut self, idx: usize) -> &mut PriorityBuffer {
        &mut self.expert[idx]
    }

    pub fn pseudo_buffer(&self) -> &PriorityBuffer {
        &self.pseudo
    }

    pub fn pseudo_buffer_mut(&mut self) -> &mut PriorityBuffer {
        &mut self.pseudo
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn anneal(&self) -> &AnnealSchedule {
        &self.anneal
    }

    pub fn anneal_mut(&mut self) -> &mut AnnealSchedule {
        &mut self.anneal
    }

    pub fn push_pseudo(&mut self, entry: Vec<f64>) -> Result<u64> {
        self.pseudo.push(entry, None)
    }

    /// Expert counts per buffer: as even as possible, remainder assigned
    /// round-robin starting at an offset that rotates across calls.
    fn split_counts(&mut self, k_expert: usize) -> Vec<usize> {
        let n = self.expert.len();
        let base = k_expert / n;
        let rem = k_expert % n;
        let mut counts = vec![base; n];
        for i in 0..rem {
            counts[(self.rotation + i) % n] += 1;
        }
        self.rotation = (self.rotation + rem) % n;
        counts
    }

    /// Draw `k_expert` entries spread over the expert buffers plus
    /// `ratio * k_expert` pseudo-expert entries (none while the pseudo
    /// buffer is empty).
    pub fn sample<R: Rng>(&mut self, k_expert: usize, rng: &mut R) -> Result<CompositeBatch> {
        let n = self.expert.len();
        if k_expert < n {
            return Err(Error::Config(format!(
                "expert batch {k_expert} smaller than the {n} expert buffers"
            )));
        }
        for (i, b) in self.expert.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::InvalidBatch(format!("expert buffer {i} is empty")));
            }
        }
        let eta = self.anneal.eta();
        let counts = self.split_counts(k_expert);
        let mut expert_parts = Vec::with_capacity(n);
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            expert_parts.push((i, self.expert[i].sample(c, eta, rng)?));
        }
        let pseudo = if self.pseudo.is_empty() || self.ratio == 0 {
            None
        } else {
            Some(self.pseudo.sample(self.ratio * k_expert, eta, rng)?)
        };
        Ok(CompositeBatch {
            expert_parts,
            pseudo,
            eta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn prefix_find_matches_hand_intervals() {
        let mut t = SumTree::new(3);
        t.set(0, 1.0);
        t.set(1, 2.0);
        t.set(2, 3.0);
        assert_eq!(t.total(), 6.0);
        assert_eq!(t.prefix_find(0.5).unwrap(), 0);
        assert_eq!(t.prefix_find(2.5).unwrap(), 1);
        assert_eq!(t.prefix_find(1.0).unwrap(), 1);
        assert_eq!(t.prefix_find(3.0).unwrap(), 2);
        assert_eq!(t.prefix_find(5.999).unwrap(), 2);
        assert!(t.prefix_find(6.0).is_err());
        assert!(t.prefix_find(-0.1).is_err());
    }

    #[test]
    fn push_defaults_to_max_priority() {
        let mut b = PriorityBuffer::new(4, 1.0).unwrap();
        b.push(vec![0.0], None).unwrap();
        assert_eq!(b.priority(0), 1.0);
        b.push(vec![1.0], Some(5.0)).unwrap();
        b.push(vec![2.0], None).unwrap();
        assert_eq!(b.priority(2), 5.0);
    }

    #[test]
    fn fifo_eviction_overwrites_oldest() {
        let mut b = PriorityBuffer::new(2, 1.0).unwrap();
        let id0 = b.push(vec![0.0], Some(1.0)).unwrap();
        b.push(vec![1.0], Some(1.0)).unwrap();
        let id2 = b.push(vec![2.0], Some(1.0)).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.entry(id0).is_none());
        assert_eq!(b.entry(id2).unwrap(), &vec![2.0]);
        // stale update is skipped and counted
        assert!(!b.update_priority(id0, 0.5).unwrap());
        assert_eq!(b.stale_skipped(), 1);
    }

    #[test]
    fn tree_total_for_two_priorities() {
        let mut b = PriorityBuffer::new(8, 1.0).unwrap();
        b.push(vec![0.0], Some(3.0)).unwrap();
        b.push(vec![1.0], Some(1.0)).unwrap();
        assert_eq!(b.total_mass(), 4.0);
    }

    #[test]
    fn equal_priorities_give_unit_raw_weights() {
        let mut b = PriorityBuffer::new(8, 0.6).unwrap();
        for i in 0..5 {
            b.push(vec![i as f64], Some(0.7)).unwrap();
        }
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for eta in [0.0, 0.4, 1.0] {
            let s = b.sample(16, eta, &mut rng).unwrap();
            for w in &s.weights {
                assert!((w - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_match_direct_formula() {
        // priorities {3, 1}, zeta = 1: P = {0.75, 0.25}; with eta = 1 and
        // len 2 the raw weights are {2/3, 2}, normalized {1/3, 1}.
        let mut b = PriorityBuffer::new(2, 1.0).unwrap();
        b.push(vec![0.0], Some(3.0)).unwrap();
        b.push(vec![1.0], Some(1.0)).unwrap();
        assert!((b.probability(0) - 0.75).abs() < 1e-15);
        assert!((b.probability(1) - 0.25).abs() < 1e-15);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        // sample until both slots appear in one batch
        for _ in 0..50 {
            let s = b.sample(8, 1.0, &mut rng).unwrap();
            let has0 = s.ids.iter().any(|&i| i == 0);
            let has1 = s.ids.iter().any(|&i| i == 1);
            if has0 && has1 {
                for (id, w) in s.ids.iter().zip(&s.weights) {
                    let expect = if *id == 0 { 1.0 / 3.0 } else { 1.0 };
                    assert!((w - expect).abs() < 1e-12);
                }
                return;
            }
        }
        panic!("both slots never sampled together");
    }

    #[test]
    fn zeta_zero_is_uniform() {
        let mut b = PriorityBuffer::new(4, 0.0).unwrap();
        b.push(vec![0.0], Some(100.0)).unwrap();
        b.push(vec![1.0], Some(0.001)).unwrap();
        assert!((b.probability(0) - 0.5).abs() < 1e-15);
        assert!((b.probability(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn confidence_updates_set_error_priority() {
        let mut b = PriorityBuffer::new(4, 1.0).unwrap();
        let id = b.push(vec![0.0], None).unwrap();
        b.update_from_confidences(&[id], &[0.25]).unwrap();
        assert!((b.priority(0) - 0.75).abs() < 1e-15);
        let delta = 1e-6;
        b.update_from_confidences(&[id], &[1.0 - delta]).unwrap();
        assert!((b.priority(0) - delta).abs() < 1e-15);
    }

    #[test]
    fn empty_buffer_sampling_fails() {
        let b = PriorityBuffer::new(4, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(b.sample(1, 1.0, &mut rng).is_err());
    }

    #[test]
    fn anneal_endpoints_and_monotonicity() {
        let mut a = AnnealSchedule::new(0.4, 100).unwrap();
        assert_eq!(a.eta(), 0.4);
        let mut prev = a.eta();
        for _ in 0..100 {
            a.advance();
            assert!(a.eta() >= prev);
            prev = a.eta();
        }
        assert_eq!(a.eta(), 1.0);
        a.advance();
        assert_eq!(a.eta(), 1.0);
        assert!(AnnealSchedule::new(0.0, 10).is_err());
        assert!(AnnealSchedule::new(1.1, 10).is_err());
    }

    fn filled_buffer(n: usize, zeta: f64) -> PriorityBuffer {
        let mut b = PriorityBuffer::new(n.max(1), zeta).unwrap();
        for i in 0..n {
            b.push(vec![i as f64], Some(1.0)).unwrap();
        }
        b
    }

    #[test]
    fn coordinator_splits_evenly_with_ratio() {
        let expert: Vec<PriorityBuffer> = (0..4).map(|_| filled_buffer(20, 0.6)).collect();
        let mut pseudo = PriorityBuffer::new(1000, 0.6).unwrap();
        for i in 0..10 {
            pseudo.push(vec![i as f64], None).unwrap();
        }
        let anneal = AnnealSchedule::new(0.4, 10).unwrap();
        let mut coord = ReplayCoordinator::new(expert, pseudo, 7, anneal).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let batch = coord.sample(64, &mut rng).unwrap();
        assert_eq!(batch.expert_parts.len(), 4);
        for (_, part) in &batch.expert_parts {
            assert_eq!(part.ids.len(), 16);
        }
        assert_eq!(batch.pseudo.as_ref().unwrap().ids.len(), 448);
    }

    #[test]
    fn coordinator_rotates_remainders() {
        let expert: Vec<PriorityBuffer> = (0..3).map(|_| filled_buffer(10, 0.6)).collect();
        let pseudo = PriorityBuffer::new(100, 0.6).unwrap();
        let anneal = AnnealSchedule::new(0.4, 10).unwrap();
        let mut coord = ReplayCoordinator::new(expert, pseudo, 7, anneal).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);

        let counts = |batch: &CompositeBatch| -> Vec<usize> {
            let mut c = vec![0; 3];
            for (i, part) in &batch.expert_parts {
                c[*i] = part.ids.len();
            }
            c
        };
        let b1 = coord.sample(8, &mut rng).unwrap();
        assert_eq!(counts(&b1), vec![3, 3, 2]);
        // remainder assignment rotates on subsequent calls
        let b2 = coord.sample(8, &mut rng).unwrap();
        assert_eq!(counts(&b2), vec![3, 2, 3]);
        let b3 = coord.sample(8, &mut rng).unwrap();
        assert_eq!(counts(&b3), vec![2, 3, 3]);
        // pseudo buffer empty: expert-only batch
        assert!(b1.pseudo.is_none());
        assert_eq!(b1.expert_len(), 8);
    }

    #[test]
    fn coordinator_rejects_empty_expert_buffer() {
        let expert = vec![filled_buffer(5, 0.6), filled_buffer(0, 0.6)];
        let pseudo = PriorityBuffer::new(10, 0.6).unwrap();
        let anneal = AnnealSchedule::new(0.4, 10).unwrap();
        let mut coord = ReplayCoordinator::new(expert, pseudo, 7, anneal).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(coord.sample(8, &mut rng).is_err());
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut b = PriorityBuffer::new(8, 0.6).unwrap();
        for i in 0..5 {
            b.push(vec![i as f64 * 0.1, -(i as f64)], Some(0.1 + i as f64)).unwrap();
        }
        let mut buf = Vec::new();
        b.write_snapshot(&mut buf, "pseudo").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let (restored, name) = parse_buffer_snapshot(&text, 8).unwrap();
        assert_eq!(name, "pseudo");
        assert_eq!(restored.len(), b.len());
        for i in 0..restored.len() {
            assert_eq!(restored.entries()[i], b.entries()[i]);
            assert_eq!(restored.priority(i), b.priority(i));
        }
    }
}
