use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LatentError;
use crate::narrative::CharacterSpec;
use crate::seeds;
use crate::tags;

/// Per-character reference features, one matrix of unit rows each.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterBank {
    pub character_ids: Vec<String>,
    pub features: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankShape {
    pub n_char_tokens: usize,
    pub d_e: usize,
}

impl Default for BankShape {
    fn default() -> Self {
        BankShape {
            n_char_tokens: 16,
            d_e: 64,
        }
    }
}

impl CharacterBank {
    pub fn len(&self) -> usize {
        self.character_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.character_ids.is_empty()
    }

    pub fn d_e(&self) -> usize {
        self.features.first().map_or(0, |f| f.ncols())
    }

    pub fn features_of(&self, id: &str) -> Option<&Array2<f64>> {
        self.character_ids.iter().position(|c| c == id).map(|i| &self.features[i])
    }

    /// All characters' features stacked in bank order.
    pub fn stacked(&self) -> Array2<f64> {
        let views: Vec<_> = self.features.iter().map(|f| f.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("bank rows share d_e")
    }
}

/// Features depend only on the whitespace-normalized description, the row
/// index and the seed, so two characters described alike share features.
pub fn build_character_db(characters: &[CharacterSpec], shape: BankShape, seed: u64) -> Result<CharacterBank, LatentError> {
    if characters.is_empty() {
        return Err(LatentError::EmptyBank);
    }
    let features = characters
        .iter()
        .map(|c| {
            let desc = c.physical_description.split_whitespace().collect::<Vec<_>>().join(" ");
            let mut f = Array2::zeros((shape.n_char_tokens, shape.d_e));
            for (r, mut row) in f.rows_mut().into_iter().enumerate() {
                let mut rng = seeds::rng(seed, tags!["character", desc.as_str(), r]);
                row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
                let n = row.dot(&row).sqrt();
                row /= n;
            }
            f
        })
        .collect();
    Ok(CharacterBank {
        character_ids: characters.iter().map(|c| c.id.clone()).collect(),
        features,
    })
}
