use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::controller::SampleTrace;
use crate::error::{Error, Result};
use crate::genotype::{encode, Genotype};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub genotype: Genotype,
    pub trace: SampleTrace,
    pub reward: f64,
}

/// One kept beam: the genotype prefix, the trace that produced its last cell
/// and its proxy reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamEntry {
    pub genotype: Genotype,
    pub trace: SampleTrace,
    pub reward: f64,
    /// Position among the candidates it was selected from.
    pub sample_index: usize,
}

/// Top-K entries per completed stage, each sorted by descending reward.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BeamArchive {
    pub stages: Vec<Vec<BeamEntry>>,
}

impl BeamArchive {
    pub fn stage(&self, s: usize) -> Option<&[BeamEntry]> {
        self.stages.get(s).map(Vec::as_slice)
    }

    pub fn last(&self) -> Option<&[BeamEntry]> {
        self.stages.last().map(Vec::as_slice)
    }

    /// Plain-text listing: one line per entry with stage, rank, sample
    /// index, reward and the genotype's tokens (cells separated by `/`).
    pub fn to_text(&self) -> String {
        let mut out = String::from("# stage rank sample reward tokens\n");
        for (s, entries) in self.stages.iter().enumerate() {
            for (rank, e) in entries.iter().enumerate() {
                out += &format!("{s} {rank} {} {:.6} {}\n", e.sample_index, e.reward, genotype_tokens(&e.genotype));
            }
        }
        out
    }
}

pub fn genotype_tokens(g: &Genotype) -> String {
    g.cells
        .iter()
        .map(|c| encode(c).iter().map(usize::to_string).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("/")
}

/// Indices of the `k` best rewards, descending, ties by earlier index.
pub fn top_k_indices(rewards: &[f64], k: usize) -> Result<Vec<usize>> {
    if rewards.len() < k {
        return Err(Error::Config(format!("need at least {k} candidates for the beam, got {}", rewards.len())));
    }
    if let Some(bad) = rewards.iter().find(|r| r.is_nan()) {
        return Err(Error::Reward(format!("candidate reward {bad}")));
    }
    let mut idx: Vec<usize> = (0..rewards.len()).collect();
    idx.sort_by(|&a, &b| rewards[b].partial_cmp(&rewards[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

pub fn select_top_k(candidates: &[Candidate], k: usize) -> Result<Vec<BeamEntry>> {
    let rewards: Vec<f64> = candidates.iter().map(|c| c.reward).collect();
    Ok(top_k_indices(&rewards, k)?
        .into_iter()
        .map(|i| BeamEntry {
            genotype: candidates[i].genotype.clone(),
            trace: candidates[i].trace.clone(),
            reward: candidates[i].reward,
            sample_index: i,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_largest() {
        assert_eq!(top_k_indices(&[1.0, 3.0, 2.0], 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn ties_go_to_earlier_index() {
        assert_eq!(top_k_indices(&[5.0; 6], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(top_k_indices(&[1.0, 2.0, 1.0, 2.0], 3).unwrap(), vec![1, 3, 0]);
    }

    #[test]
    fn k_equal_len_is_full_sort() {
        assert_eq!(top_k_indices(&[0.5, -1.0, 2.0], 3).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn too_few_is_config_error() {
        assert!(matches!(top_k_indices(&[1.0], 2), Err(Error::Config(_))));
    }
}
