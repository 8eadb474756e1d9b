//! Layout of a stacked realization: which slot carries which fidelity, and
//! which slots are statistically coupled.
//!
//! Groups are independent of each other; slots inside a group are coupled.
//! Slots are ordered group by group, and by ascending fidelity inside a group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawStructure", into = "RawStructure")]
pub struct FidelityStructure {
    num_low: usize,
    groups: Vec<Vec<usize>>,
    slot_fidelity: Vec<usize>,
    slot_group: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawStructure {
    num_low: usize,
    groups: Vec<Vec<usize>>,
}

impl TryFrom<RawStructure> for FidelityStructure {
    type Error = Error;
    fn try_from(raw: RawStructure) -> Result<Self> {
        FidelityStructure::new(raw.num_low, raw.groups)
    }
}

impl From<FidelityStructure> for RawStructure {
    fn from(s: FidelityStructure) -> Self {
        RawStructure { num_low: s.num_low, groups: s.groups }
    }
}

impl FidelityStructure {
    /// `num_low` low fidelities labelled `1..=num_low`; fidelity 0 is the
    /// high fidelity. Each group is sorted ascending.
    pub fn new(num_low: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidStructure("no groups".into()));
        }
        let mut sorted = Vec::with_capacity(groups.len());
        for (k, mut g) in groups.into_iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidStructure(format!("group {k} is empty")));
            }
            g.sort_unstable();
            if g.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidStructure(format!("group {k} repeats a fidelity")));
            }
            if let Some(&f) = g.iter().find(|&&f| f > num_low) {
                return Err(Error::InvalidStructure(format!(
                    "group {k} names fidelity {f} but only 0..={num_low} exist"
                )));
            }
            sorted.push(g);
        }
        if !sorted.iter().any(|g| g.contains(&0)) {
            return Err(Error::InvalidStructure("fidelity 0 appears in no group".into()));
        }
        let mut slot_fidelity = Vec::new();
        let mut slot_group = Vec::new();
        for (k, g) in sorted.iter().enumerate() {
            slot_fidelity.extend_from_slice(g);
            slot_group.extend(std::iter::repeat_n(k, g.len()));
        }
        Ok(FidelityStructure { num_low, groups: sorted, slot_fidelity, slot_group })
    }

    /// One high and one low fidelity in a coupled pair plus an independent
    /// low-fidelity group: slots `(S_hi, S¹_lo, S²_lo)`.
    pub fn running_example() -> Self {
        Self::new(1, vec![vec![0, 1], vec![1]]).expect("valid")
    }

    /// A single coupled high/low pair: slots `(S_hi, S_lo)`.
    pub fn coupled_pair() -> Self {
        Self::new(1, vec![vec![0, 1]]).expect("valid")
    }

    /// One slot of one fidelity.
    pub fn single() -> Self {
        Self::new(0, vec![vec![0]]).expect("valid")
    }

    pub fn num_low(&self) -> usize {
        self.num_low
    }

    pub fn num_fidelities(&self) -> usize {
        self.num_low + 1
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn slot_count(&self) -> usize {
        self.slot_fidelity.len()
    }

    pub fn slot_fidelity(&self) -> &[usize] {
        &self.slot_fidelity
    }

    pub fn slot_group(&self) -> &[usize] {
        &self.slot_group
    }

    /// Slot indices belonging to group `k`.
    pub fn group_slots(&self, k: usize) -> Vec<usize> {
        (0..self.slot_count()).filter(|&n| self.slot_group[n] == k).collect()
    }

    /// First slot carrying fidelity `f`, if any.
    pub fn first_slot_of(&self, f: usize) -> Option<usize> {
        self.slot_fidelity.iter().position(|&x| x == f)
    }
}
