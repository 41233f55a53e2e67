//! Consolidation of non-salient audio tokens into uniformly spaced anchors.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stabilizer added to row norms before division.
pub const NORM_EPS: f64 = 1e-6;

/// Anchor groups for one window. All indices are window-local audio token indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePlan {
    pub anchors: Vec<usize>,
    /// `members[j]` are the tokens merged into `anchors[j]`.
    pub members: Vec<Vec<usize>>,
    pub discarded: Vec<usize>,
}

/// Cosine similarities between non-salient audio tokens (rows) and video tokens (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct CrossModalSimilarity {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CrossModalSimilarity {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Divides every row by its L2 norm plus `NORM_EPS`. Zero rows stay zero.
pub fn row_normalize(h: &[f32], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h.len());
    for row in h.chunks_exact(d) {
        let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        let inv = 1.0 / (norm + NORM_EPS);
        out.extend(row.iter().map(|&v| v as f64 * inv));
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

pub fn cross_modal_similarity(audio: &[f32], video: &[f32], d: usize) -> Result<CrossModalSimilarity> {
    if d == 0 || audio.len() % d != 0 || video.len() % d != 0 {
        return Err(Error::DimMismatch(format!(
            "audio has {} values, video has {}, d = {d}",
            audio.len(),
            video.len()
        )));
    }
    let a = row_normalize(audio, d);
    let v = row_normalize(video, d);
    let (rows, cols) = (a.len() / d, v.len() / d);
    let mut values = vec![0.0f64; rows * cols];
    if rows > 0 && cols > 0 {
        // SAFETY: a is rows x d, v is cols x d read transposed through its
        // strides, and values holds rows x cols outputs.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                d,
                cols,
                1.0,
                a.as_ptr(),
                d as isize,
                1,
                v.as_ptr(),
                1,
                d as isize,
                0.0,
                values.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
    }
    Ok(CrossModalSimilarity { rows, cols, values })
}

/// Evenly strided picks `floor((j + 0.5) * count / anchors)`.
pub fn sample_anchors(count: usize, anchors: usize) -> Result<Vec<usize>> {
    if anchors > count {
        return Err(Error::BudgetOutOfRange {
            requested: anchors,
            available: count,
        });
    }
    Ok((0..anchors).map(|j| (2 * j + 1) * count / (2 * anchors)).collect())
}

/// Assigns members to anchors.
///
/// Positions refer to rows of `similarity` and of `normalized_audio` (the
/// row-normalized embeddings of the same tokens). Each non-anchor gets the
/// relevance `max_v similarity[t, v]`; the `g * anchors.len()` most relevant
/// become members, each placed on the most similar anchor that still has room.
pub fn build_merge_plan(
    similarity: &CrossModalSimilarity,
    normalized_audio: &[f64],
    anchors: &[usize],
    g: usize,
) -> MergePlan {
    let n = similarity.rows;
    let d = if n == 0 { 0 } else { normalized_audio.len() / n };
    let mut is_anchor = vec![false; n];
    for &a in anchors {
        is_anchor[a] = true;
    }

    let relevance = |t: usize| -> f64 { similarity.row(t).iter().copied().fold(f64::NEG_INFINITY, f64::max) };
    let mut ranked: Vec<(f64, usize)> = (0..n).filter(|&t| !is_anchor[t]).map(|t| (relevance(t), t)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let take = (g * anchors.len()).min(ranked.len());
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); anchors.len()];
    let token = |t: usize| &normalized_audio[t * d..(t + 1) * d];
    for &(_, t) in &ranked[..take] {
        let mut best: Option<(usize, f64)> = None;
        for (j, &a) in anchors.iter().enumerate() {
            if members[j].len() >= g {
                continue;
            }
            let affinity = dot(token(t), token(a));
            let better = match best {
                None => true,
                Some((_, b)) => affinity.total_cmp(&b) == Ordering::Greater,
            };
            if better {
                best = Some((j, affinity));
            }
        }
        let (j, _) = best.expect("capacity covers every member");
        members[j].push(t);
    }
    members.iter_mut().for_each(|m| m.sort_unstable());

    let mut discarded: Vec<usize> = ranked[take..].iter().map(|&(_, t)| t).collect();
    discarded.sort_unstable();
    MergePlan {
        anchors: anchors.to_vec(),
        members,
        discarded,
    }
}

/// Mean of `anchor` and `members`, accumulated in f64.
pub fn group_mean(tokens: &[f32], d: usize, anchor: usize, members: &[usize]) -> Vec<f32> {
    let mut acc: Vec<f64> = tokens[anchor * d..(anchor + 1) * d].iter().map(|&v| v as f64).collect();
    for &m in members {
        for (a, &v) in acc.iter_mut().zip(&tokens[m * d..(m + 1) * d]) {
            *a += v as f64;
        }
    }
    let count = (members.len() + 1) as f64;
    acc.iter().map(|&a| (a / count) as f32).collect()
}

/// Output embeddings of one window: salient tokens verbatim and anchors as
/// group means, interleaved in temporal order.
pub fn consolidate(plan: &MergePlan, salient: &[usize], audio: &[f32], d: usize) -> Vec<f32> {
    let mut order: Vec<(usize, Option<usize>)> = salient.iter().map(|&t| (t, None)).collect();
    order.extend(plan.anchors.iter().enumerate().map(|(j, &a)| (a, Some(j))));
    order.sort_unstable_by_key(|&(t, _)| t);
    let mut out = Vec::with_capacity(order.len() * d);
    for (t, group) in order {
        match group {
            Some(j) => out.extend(group_mean(audio, d, t, &plan.members[j])),
            None => out.extend_from_slice(&audio[t * d..(t + 1) * d]),
        }
    }
    out
}

/// Builds the merge plan of one window.
///
/// `non_salient` lists window-local indices; the returned plan uses the same
/// index space.
pub fn plan_window(
    audio: &[f32],
    video: &[f32],
    d: usize,
    non_salient: &[usize],
    anchor_count: usize,
    g: usize,
) -> Result<MergePlan> {
    let subset: Vec<f32> = non_salient
        .iter()
        .flat_map(|&t| audio[t * d..(t + 1) * d].iter().copied())
        .collect();
    let similarity = cross_modal_similarity(&subset, video, d)?;
    let normalized = row_normalize(&subset, d);
    let anchors = sample_anchors(non_salient.len(), anchor_count)?;
    let local = build_merge_plan(&similarity, &normalized, &anchors, g);
    let to_window = |v: &[usize]| v.iter().map(|&p| non_salient[p]).collect::<Vec<_>>();
    Ok(MergePlan {
        anchors: to_window(&local.anchors),
        members: local.members.iter().map(|m| to_window(m)).collect(),
        discarded: to_window(&local.discarded),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_examples() {
        let r = row_normalize(&[3.0, 4.0], 2);
        assert!((r[0] - 0.6).abs() < 1e-6 && (r[1] - 0.8).abs() < 1e-6);
        assert_eq!(row_normalize(&[0.0, 0.0], 2), vec![0.0, 0.0]);
        assert_eq!(row_normalize(&[1.0, 0.0], 2), vec![1.0 / (1.0 + 1e-6), 0.0]);
    }

    #[test]
    fn cosine_examples() {
        let s = cross_modal_similarity(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0], 3).unwrap();
        assert!((s.values[0] - 1.0).abs() < 1e-5);
        let s = cross_modal_similarity(&[1.0, 0.0], &[0.0, 7.0], 2).unwrap();
        assert!(s.values[0].abs() < 1e-6);
        let s = cross_modal_similarity(&[1.0, 1.0], &[1.0, 0.0], 2).unwrap();
        assert!((s.values[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        assert!(matches!(cross_modal_similarity(&[1.0; 3], &[1.0; 4], 2), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn anchor_sampling() {
        assert_eq!(sample_anchors(10, 2).unwrap(), vec![2, 7]);
        assert!(sample_anchors(10, 0).unwrap().is_empty());
        assert_eq!(sample_anchors(6, 6).unwrap(), (0..6).collect::<Vec<_>>());
        assert!(matches!(sample_anchors(3, 4), Err(Error::BudgetOutOfRange { .. })));
    }

    fn random_tokens(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f32> {
        (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_capacity_discards_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let audio = random_tokens(&mut rng, 8, 4);
        let video = random_tokens(&mut rng, 5, 4);
        let ns: Vec<usize> = (0..8).collect();
        let plan = plan_window(&audio, &video, 4, &ns, 2, 0).unwrap();
        assert!(plan.members.iter().all(Vec::is_empty));
        assert_eq!(plan.discarded.len(), 6);
    }

    #[test]
    fn single_anchor_absorbs_all_when_capacity_allows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let audio = random_tokens(&mut rng, 7, 3);
        let video = random_tokens(&mut rng, 4, 3);
        let ns: Vec<usize> = (0..7).collect();
        let plan = plan_window(&audio, &video, 3, &ns, 1, 10).unwrap();
        assert_eq!(plan.anchors, vec![3]);
        assert_eq!(plan.members, vec![vec![0, 1, 2, 4, 5, 6]]);
        assert!(plan.discarded.is_empty());
    }

    /// Best capacity-respecting assignment: maximize total member relevance,
    /// then total member-anchor affinity.
    fn brute_force(relevance: &[f64], affinity: &[Vec<f64>], anchors: &[usize], g: usize, members_total: usize) -> Vec<Option<usize>> {
        let n = relevance.len();
        let choices = anchors.len() + 1;
        let mut best: Option<((f64, f64), Vec<Option<usize>>)> = None;
        let mut code = vec![0usize; n];
        loop {
            let assign: Vec<Option<usize>> = (0..n)
                .map(|t| if anchors.contains(&t) || code[t] == 0 { None } else { Some(code[t] - 1) })
                .collect();
            let valid_anchor_slots = (0..n).all(|t| !anchors.contains(&t) || code[t] == 0);
            let loads: Vec<usize> = (0..anchors.len()).map(|j| assign.iter().filter(|a| **a == Some(j)).count()).collect();
            let count: usize = loads.iter().sum();
            if valid_anchor_slots && loads.iter().all(|&l| l <= g) && count == members_total {
                let rel: f64 = (0..n).filter(|&t| assign[t].is_some()).map(|t| relevance[t]).sum();
                let aff: f64 = (0..n).filter_map(|t| assign[t].map(|j| affinity[t][j])).sum();
                if best.as_ref().map_or(true, |(s, _)| (rel, aff) > *s) {
                    best = Some(((rel, aff), assign));
                }
            }
            let mut i = 0;
            loop {
                if i == n {
                    return best.unwrap().1;
                }
                code[i] += 1;
                if code[i] < choices {
                    break;
                }
                code[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn plan_matches_exhaustive_assignment() {
        // Six non-salient tokens in 2-D; anchors sampled at positions 1 and 4.
        // Video tokens lie on the axes so relevance is the larger normalized coordinate.
        let audio: Vec<f32> = vec![
            0.1, 0.9, // 0
            1.0, 0.0, // 1 anchor
            0.2, 0.8, // 2
            0.6, 0.4, // 3
            0.0, 1.0, // 4 anchor
            0.95, 0.05, // 5
        ];
        let video = vec![1.0f32, 0.0, 0.0, 1.0];
        let ns: Vec<usize> = (0..6).collect();
        let plan = plan_window(&audio, &video, 2, &ns, 2, 1).unwrap();

        let sim = cross_modal_similarity(&audio, &video, 2).unwrap();
        let norm = row_normalize(&audio, 2);
        let anchors = sample_anchors(6, 2).unwrap();
        assert_eq!(anchors, vec![1, 4]);
        let relevance: Vec<f64> = (0..6).map(|t| sim.row(t).iter().copied().fold(f64::MIN, f64::max)).collect();
        let affinity: Vec<Vec<f64>> = (0..6)
            .map(|t| anchors.iter().map(|&a| dot(&norm[t * 2..t * 2 + 2], &norm[a * 2..a * 2 + 2])).collect())
            .collect();
        let best = brute_force(&relevance, &affinity, &anchors, 1, 2);
        let mut expected = vec![Vec::new(); 2];
        let mut discarded = Vec::new();
        for t in 0..6 {
            match best[t] {
                Some(j) => expected[j].push(t),
                None if !anchors.contains(&t) => discarded.push(t),
                None => {}
            }
        }
        assert_eq!(plan.members, expected);
        assert_eq!(plan.discarded, discarded);
        assert_eq!(plan.members, vec![vec![5], vec![0]]);
    }

    #[test]
    fn consolidate_examples() {
        let audio = vec![1.0f32, 1.0, 3.0, 3.0, 7.0, 7.0];
        let plan = MergePlan {
            anchors: vec![0],
            members: vec![vec![1]],
            discarded: vec![],
        };
        assert_eq!(consolidate(&plan, &[2], &audio, 2), vec![2.0, 2.0, 7.0, 7.0]);
        let lone = MergePlan {
            anchors: vec![1],
            members: vec![vec![]],
            discarded: vec![0],
        };
        assert_eq!(consolidate(&lone, &[], &audio, 2), vec![3.0, 3.0]);
    }

    #[test]
    fn consolidate_matches_independent_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 6;
        let audio = random_tokens(&mut rng, 5, d);
        let plan = MergePlan {
            anchors: vec![2],
            members: vec![vec![0, 3, 4]],
            discarded: vec![1],
        };
        let out = consolidate(&plan, &[], &audio, d);
        for k in 0..d {
            let mean = [2, 0, 3, 4].iter().map(|&t| audio[t * d + k]).sum::<f32>() / 4.0;
            assert!((out[k] - mean).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn plan_partitions_and_ignores_video_order(
            seed in any::<u64>(),
            ns_count in 0usize..25,
            anchor_frac in 0.0f64..=1.0,
            g in 0usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 4;
            let total = ns_count + 5;
            let audio = random_tokens(&mut rng, total, d);
            let video = random_tokens(&mut rng, 12, d);
            let mut ns: Vec<usize> = rand::seq::index::sample(&mut rng, total, ns_count).into_vec();
            ns.sort_unstable();
            let anchors = (anchor_frac * ns_count as f64).floor() as usize;
            let plan = plan_window(&audio, &video, d, &ns, anchors, g).unwrap();

            let mut all: Vec<usize> = plan.anchors.clone();
            all.extend(plan.members.iter().flatten());
            all.extend(&plan.discarded);
            all.sort_unstable();
            prop_assert_eq!(&all, &ns);
            prop_assert!(plan.members.iter().all(|m| m.len() <= g));

            // reverse the video token order
            let reversed: Vec<f32> = video.chunks_exact(d).rev().flatten().copied().collect();
            prop_assert_eq!(plan_window(&audio, &reversed, d, &ns, anchors, g).unwrap(), plan);
        }

        #[test]
        fn similarities_stay_in_range(seed in any::<u64>(), scale in 1e-3f32..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f32> = (0..10 * 5).map(|_| rng.gen_range(-scale..scale)).collect();
            let v: Vec<f32> = (0..9 * 5).map(|_| rng.gen_range(-scale..scale)).collect();
            let s = cross_modal_similarity(&a, &v, 5).unwrap();
            prop_assert!(s.values.iter().all(|x| x.abs() <= 1.0 + 1e-6));
        }
    }
}
