use super::LatentSequence;
use crate::error::{Error, Result};

/// Tokens that receive unusually high attention in each head.
#[derive(Debug, Clone, PartialEq)]
pub struct HighAttention {
    /// `[layer][head]` → flagged token indices, ascending.
    pub flagged: Vec<Vec<Vec<usize>>>,
    /// Per token, the number of (layer, head) pairs that flagged it.
    pub histogram: Vec<usize>,
}

impl HighAttention {
    /// Token flagged most often; ties go to the lower index. `None` when
    /// nothing was flagged.
    pub fn top_token(&self) -> Option<usize> {
        let best = *self.histogram.iter().max()?;
        if best == 0 {
            return None;
        }
        self.histogram.iter().position(|&c| c == best)
    }

    pub fn total_flags(&self) -> usize {
        self.histogram.iter().sum()
    }
}

/// Flags, per head, the tokens whose mean received attention (column mean)
/// exceeds the mean over tokens by more than two standard deviations.
pub fn high_attention_tokens(latent: &LatentSequence) -> Result<HighAttention> {
    let maps = latent
        .attention_maps
        .as_ref()
        .ok_or(Error::AttentionNotRetained)?;
    let n = latent.tokens.nrows();
    let mut histogram = vec![0usize; n];
    let mut flagged = Vec::with_capacity(maps.len());
    for layer in maps {
        let mut per_layer = Vec::with_capacity(layer.len());
        for a in layer {
            let received: Vec<f64> = (0..a.ncols()).map(|c| a.column(c).sum() / a.nrows() as f64).collect();
            let tokens = flag_outliers(&received);
            for &t in &tokens {
                histogram[t] += 1;
            }
            per_layer.push(tokens);
        }
        flagged.push(per_layer);
    }
    Ok(HighAttention { flagged, histogram })
}

/// Indices with `value > mean + 2·std` (population std). A spread below
/// round-off relative to the mean counts as zero, so uniform attention never
/// flags anything.
pub(crate) fn flag_outliers(values: &[f64]) -> Vec<usize> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(f64::MIN_POSITIVE) {
        return Vec::new();
    }
    let threshold = mean + 2.0 * std;
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(i, _)| i)
        .collect()
}
