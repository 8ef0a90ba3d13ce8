//! Per-channel importance scores and greedy removal under a FLOPs limit.

use std::collections::BTreeMap;

use crate::denoiser::{flops_for_widths, grad, DenoiserSpec, Example, Parameters};
use crate::schedule::NoiseSchedule;

use super::PruneError;

/// Scores for every hidden channel, indexed `[layer][channel]`.
pub type ChannelScores = Vec<Vec<f64>>;

fn l2(xs: impl Iterator<Item = f32>) -> f64 {
    xs.map(|x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// `||row j of W_l||₂ + ||column j of W_{l+1}||₂` for every hidden channel.
pub fn magnitude_importance(p: &Parameters) -> ChannelScores {
    let layers = p.layers();
    (0..p.spec().num_hidden())
        .map(|l| {
            let this = &layers[l];
            let next = &layers[l + 1];
            (0..this.out_dim)
                .map(|j| {
                    let incoming = l2(this.row(j).iter().copied());
                    let outgoing = l2((0..next.out_dim).map(|r| next.weight[r * next.in_dim + j]));
                    incoming + outgoing
                })
                .collect()
        })
        .collect()
}

/// First-order saliency: `Σ |w · ∂loss/∂w|` over the channel's incoming row,
/// its bias and its outgoing column, from one gradient evaluation on `batch`.
pub fn taylor_importance(p: &Parameters, batch: &[Example], schedule: &NoiseSchedule) -> Result<ChannelScores, PruneError> {
    let g = grad(p, batch, schedule)?;
    let layers = p.layers();
    Ok((0..p.spec().num_hidden())
        .map(|l| {
            let (this, gthis) = (&layers[l], &g.layers[l]);
            let (next, gnext) = (&layers[l + 1], &g.layers[l + 1]);
            (0..this.out_dim)
                .map(|j| {
                    let row = j * this.in_dim..(j + 1) * this.in_dim;
                    let incoming: f64 = this.weight[row.clone()]
                        .iter()
                        .zip(&gthis.weight[row])
                        .map(|(w, d)| (f64::from(*w) * f64::from(*d)).abs())
                        .sum();
                    let bias = (f64::from(this.bias[j]) * f64::from(gthis.bias[j])).abs();
                    let outgoing: f64 = (0..next.out_dim)
                        .map(|r| {
                            let k = r * next.in_dim + j;
                            (f64::from(next.weight[k]) * f64::from(gnext.weight[k])).abs()
                        })
                        .sum();
                    incoming + bias + outgoing
                })
                .collect()
        })
        .collect())
}

/// How a greedy pass turns scores into a removal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ranking {
    /// Lowest raw score first.
    Raw,
    /// Score divided by the mean score of its layer.
    LayerNormalized,
    /// Score divided by the FLOPs saved by removing the channel right now.
    PerFlop,
}

impl Ranking {
    pub const VARIANTS: [Ranking; 3] = [Ranking::Raw, Ranking::LayerNormalized, Ranking::PerFlop];

    pub fn for_candidate(c: usize) -> Self {
        Self::VARIANTS[c % Self::VARIANTS.len()]
    }
}

fn widths_after(spec: &DenoiserSpec, removed: &BTreeMap<usize, Vec<usize>>) -> Vec<usize> {
    spec.hidden_widths
        .iter()
        .enumerate()
        .map(|(l, &w)| w - removed.get(&l).map_or(0, Vec::len))
        .collect()
}

/// Removes channels in ascending ranking order, starting from `start`, until
/// the network fits in `limit` FLOPs. Never empties a layer; fails when no
/// removable channel is left and the limit still is not met.
pub fn greedy_removal(
    spec: &DenoiserSpec,
    scores: &ChannelScores,
    start: &BTreeMap<usize, Vec<usize>>,
    limit: u64,
    ranking: Ranking,
) -> Result<BTreeMap<usize, Vec<usize>>, PruneError> {
    let mut removed = start.clone();
    let mut widths = widths_after(spec, &removed);
    let flops = |w: &[usize]| flops_for_widths(spec.input_dim, spec.time_embed_dim, w);
    let layer_mean: Vec<f64> = scores
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len().max(1) as f64)
        .collect();

    while flops(&widths) > limit {
        let current = flops(&widths);
        let mut best: Option<(f64, usize, usize)> = None;
        for (l, layer_scores) in scores.iter().enumerate() {
            if widths[l] <= 1 {
                continue;
            }
            let gone = removed.get(&l);
            let saved = match ranking {
                Ranking::PerFlop => {
                    let mut w = widths.clone();
                    w[l] -= 1;
                    (current - flops(&w)) as f64
                }
                _ => 1.0,
            };
            for (j, &s) in layer_scores.iter().enumerate() {
                if gone.is_some_and(|g| g.contains(&j)) {
                    continue;
                }
                let key = match ranking {
                    Ranking::Raw => s,
                    Ranking::LayerNormalized if layer_mean[l] > 0.0 => s / layer_mean[l],
                    Ranking::LayerNormalized => s,
                    Ranking::PerFlop => s / saved,
                };
                let better = match best {
                    None => true,
                    Some((k, bl, bj)) => key.total_cmp(&k).then((l, j).cmp(&(bl, bj))).is_lt(),
                };
                if better {
                    best = Some((key, l, j));
                }
            }
        }
        let Some((_, l, j)) = best else {
            return Err(PruneError::Unrepairable {
                flops: current,
                limit,
            });
        };
        let entry = removed.entry(l).or_default();
        entry.push(j);
        entry.sort_unstable();
        widths[l] -= 1;
    }
    Ok(removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{count_flops, LayerParams, PruneMask};

    fn three_channel_net(rows: [f32; 3]) -> Parameters {
        // One input (plus a 2-wide embedding), three hidden units, one output.
        let spec = DenoiserSpec::new(1, vec![3], 2).unwrap();
        let w0: Vec<f32> = rows.iter().flat_map(|&r| [r, 0.0, 0.0]).collect();
        Parameters::from_layers(
            spec,
            vec![
                LayerParams {
                    out_dim: 3,
                    in_dim: 3,
                    weight: w0,
                    bias: vec![0.0; 3],
                },
                LayerParams {
                    out_dim: 1,
                    in_dim: 3,
                    weight: vec![0.0; 3],
                    bias: vec![0.0],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn magnitude_ranking_by_hand() {
        let p = three_channel_net([3.0, 0.1, 2.0]);
        let s = magnitude_importance(&p);
        assert_eq!(s, vec![vec![3.0, 0.10000000149011612, 2.0]]);
        let spec = p.spec();
        let full = count_flops(spec, None).unwrap();
        let removed = greedy_removal(spec, &s, &BTreeMap::new(), full - 1, Ranking::Raw).unwrap();
        assert_eq!(removed.get(&0), Some(&vec![1]));
    }

    #[test]
    fn magnitude_is_positively_homogeneous() {
        let spec = DenoiserSpec::new(2, vec![5, 4], 4).unwrap();
        let p = Parameters::init(&spec, 3).unwrap();
        let mut doubled = p.clone();
        for l in doubled.layers_mut() {
            l.weight.iter_mut().for_each(|w| *w *= 2.0);
        }
        let a = magnitude_importance(&p);
        let b = magnitude_importance(&doubled);
        for (la, lb) in a.iter().zip(&b) {
            for (x, y) in la.iter().zip(lb) {
                assert!((2.0 * x - y).abs() < 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn dead_channels_score_zero() {
        let p = three_channel_net([1.0, 0.0, 2.0]);
        assert_eq!(magnitude_importance(&p)[0][1], 0.0);
        let sched = NoiseSchedule::cosine(10, 0.008).unwrap();
        let batch = vec![Example {
            x0: vec![0.5],
            t: 3,
            eps: vec![0.2],
        }];
        assert_eq!(taylor_importance(&p, &batch, &sched).unwrap()[0][1], 0.0);
    }

    #[test]
    fn taylor_zero_gradient() {
        let spec = DenoiserSpec::new(2, vec![4], 2).unwrap();
        let p = Parameters::zeros(&spec).unwrap();
        let sched = NoiseSchedule::cosine(10, 0.008).unwrap();
        let batch = vec![Example {
            x0: vec![1.0, 1.0],
            t: 2,
            eps: vec![0.0, 0.0],
        }];
        let s = taylor_importance(&p, &batch, &sched).unwrap();
        assert!(s.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn taylor_matches_elementwise_accumulation() {
        let spec = DenoiserSpec::new(2, vec![5, 3], 4).unwrap();
        let p = Parameters::init(&spec, 9).unwrap();
        let sched = NoiseSchedule::cosine(20, 0.008).unwrap();
        let batch: Vec<Example> = (0..6)
            .map(|i| Example {
                x0: vec![i as f64 * 0.3 - 1.0, 0.5],
                t: i * 3,
                eps: vec![0.1 * i as f64, -0.4],
            })
            .collect();
        let scores = taylor_importance(&p, &batch, &sched).unwrap();
        let g = grad(&p, &batch, &sched).unwrap();
        for l in 0..2 {
            for j in 0..spec.hidden_widths[l] {
                let mut acc = 0.0f64;
                let layer = &p.layers()[l];
                for i in 0..layer.in_dim {
                    let k = j * layer.in_dim + i;
                    acc += (layer.weight[k] as f64 * g.layers[l].weight[k] as f64).abs();
                }
                acc += (layer.bias[j] as f64 * g.layers[l].bias[j] as f64).abs();
                let next = &p.layers()[l + 1];
                for r in 0..next.out_dim {
                    let k = r * next.in_dim + j;
                    acc += (next.weight[k] as f64 * g.layers[l + 1].weight[k] as f64).abs();
                }
                assert!((acc - scores[l][j]).abs() <= 1e-12 * acc.max(1e-30));
            }
        }
    }

    #[test]
    fn greedy_respects_limits_and_layers() {
        let spec = DenoiserSpec::new(2, vec![8, 8], 4).unwrap();
        let p = Parameters::init(&spec, 1).unwrap();
        let s = magnitude_importance(&p);
        let full = count_flops(&spec, None).unwrap();
        for ranking in Ranking::VARIANTS {
            let removed = greedy_removal(&spec, &s, &BTreeMap::new(), full / 2, ranking).unwrap();
            let mask = PruneMask::from_removals(&spec, &removed).unwrap();
            assert!(count_flops(&spec, Some(&mask)).unwrap() <= full / 2);
        }
        let none = greedy_removal(&spec, &s, &BTreeMap::new(), full, Ranking::Raw).unwrap();
        assert!(none.is_empty());
        assert!(matches!(
            greedy_removal(&spec, &s, &BTreeMap::new(), 10, Ranking::Raw),
            Err(PruneError::Unrepairable { .. })
        ));
    }
}
