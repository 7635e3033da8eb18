use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ingest::EntityDescription;
use crate::model::AttentionTrace;

/// Layers whose score vectors correlate at least this much are grouped
/// into one preference profile.
pub const PROFILE_THRESHOLD: f64 = 0.5;

/// Per-layer scores, preference weights and final attention of one entity,
/// for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub entity_id: String,
    pub subject: String,
    /// Triples in N-Triples syntax, in description order.
    pub triples: Vec<String>,
    /// Layer scores `s`, one vector of length n per layer.
    pub layers: Vec<Vec<f64>>,
    pub a_star: Vec<f64>,
    pub attention: Vec<f64>,
    /// Pearson correlation between layer score vectors.
    pub layer_correlation: Vec<Vec<f64>>,
    /// Layers grouped by correlation at or above [`PROFILE_THRESHOLD`].
    pub profiles: Vec<Vec<usize>>,
}

pub fn export_attention(desc: &EntityDescription, trace: &AttentionTrace) -> Result<AttentionExport, EvalError> {
    if trace.entity_id != desc.entity_id || trace.a.len() != desc.len() {
        return Err(EvalError::Mismatch(format!(
            "trace for entity {} ({} triples) does not belong to entity {} ({} triples)",
            trace.entity_id,
            trace.a.len(),
            desc.entity_id,
            desc.len()
        )));
    }
    let corr = layer_correlation(&trace.s);
    Ok(AttentionExport {
        entity_id: desc.entity_id.clone(),
        subject: desc.subject.clone(),
        triples: desc.triples.iter().map(|t| t.to_ntriples()).collect(),
        layers: trace.s.clone(),
        a_star: trace.a_star.clone(),
        attention: trace.a.clone(),
        profiles: preference_profiles(&corr, PROFILE_THRESHOLD),
        layer_correlation: corr,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Symmetric layer-by-layer correlation matrix with a unit diagonal.
/// Constant layers correlate 0 with everything else.
pub fn layer_correlation(layers: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = layers.len();
    let mut c = vec![vec![0.0; m]; m];
    for i in 0..m {
        c[i][i] = 1.0;
        for j in i + 1..m {
            let r = pearson(&layers[i], &layers[j]);
            c[i][j] = r;
            c[j][i] = r;
        }
    }
    c
}

/// Single-linkage groups of layers joined by correlation ≥ `threshold`,
/// each group sorted, groups ordered by their first layer.
pub fn preference_profiles(corr: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    let m = corr.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..m {
        for j in i + 1..m {
            if corr[i][j] >= threshold {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; m];
    for i in 0..m {
        let r = root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}
