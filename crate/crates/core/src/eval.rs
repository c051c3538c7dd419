//! Verification scoring and metrics: cosine trial scoring, EER by threshold
//! sweep with a brute-force enumeration cross-check, within/between-class
//! embedding variance, a deterministic 2-D PCA projection for plot export,
//! and the full per-condition evaluation grid.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::data::{gen_noise, mix_at_snr, Dataset, NoiseKind, Trial};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat64};
use crate::model::ExtractorParams;
use crate::seeds;

/// A trial with its cosine score.
#[derive(Clone, Debug)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

/// Within/between-class embedding variance and their ratio.
///
/// `intra_var` is the mean squared distance of embeddings to their speaker
/// centroid; `inter_var` is the count-weighted mean squared distance of
/// speaker centroids to the global centroid. With these definitions the
/// total variance about the global centroid decomposes exactly as
/// `intra + inter`. `ratio` is `inter / intra`, `inf` when `intra` is zero
/// and `inter` is not, and 0 when both are zero.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GeometryStats {
    pub inter_var: f64,
    pub intra_var: f64,
    pub ratio: f64,
}

/// EER for one (noise kind, SNR) evaluation cell.
#[derive(Clone, Debug, Serialize)]
pub struct EvalCell {
    pub kind: NoiseKind,
    pub snr_db: f64,
    pub eer: f64,
}

/// Full evaluation: per-condition EERs, the clean condition, geometry stats
/// on clean and on one designated noisy condition, and averages.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub clean_eer: f64,
    pub cells: Vec<EvalCell>,
    pub avg_noisy_eer: f64,
    pub per_kind_avg: Vec<(NoiseKind, f64)>,
    pub designated_kind: NoiseKind,
    pub designated_snr: f64,
    pub clean_geometry: GeometryStats,
    pub noisy_geometry: GeometryStats,
}

/// Score every trial with the cosine of the two embeddings; embeddings are
/// computed once per utterance and cached.
pub fn score_trials(
    extractor: &ExtractorParams,
    ds: &Dataset,
    trials: &[Trial],
) -> Result<Vec<ScoredTrial>> {
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    for utt in &ds.utterances {
        cache.insert(utt.id.as_str(), extractor.embed(utt)?);
    }
    score_with_embeddings(&cache, trials)
}

fn score_with_embeddings(
    embeddings: &HashMap<&str, Vec<f64>>,
    trials: &[Trial],
) -> Result<Vec<ScoredTrial>> {
    let mut out = Vec::with_capacity(trials.len());
    for t in trials {
        let a = embeddings
            .get(t.utt_a.as_str())
            .ok_or_else(|| Error::UnknownId(t.utt_a.clone()))?;
        let b = embeddings
            .get(t.utt_b.as_str())
            .ok_or_else(|| Error::UnknownId(t.utt_b.clone()))?;
        out.push(ScoredTrial {
            trial: t.clone(),
            score: linalg::cosine(a, b)?,
        });
    }
    Ok(out)
}

fn split_scores(scored: &[ScoredTrial]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for s in scored {
        if s.trial.target {
            targets.push(s.score);
        } else {
            nontargets.push(s.score);
        }
    }
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::Degenerate(
            "EER needs at least one target and one nontarget trial".into(),
        ));
    }
    Ok((targets, nontargets))
}

/// Equal error rate by threshold sweep over the sorted score set.
///
/// At a threshold `t`, FAR is the fraction of nontargets scoring `>= t` and
/// FRR the fraction of targets scoring `< t`. The sweep walks the distinct
/// scores ascending (FAR falls, FRR rises) and returns the common value at
/// an exact FAR = FRR point, or linearly interpolates between the two
/// adjacent thresholds straddling the sign change. When FAR = FRR holds over
/// an interval the shared value is unique, so the first hit is reported;
/// all-identical scores interpolate to the canonical degenerate answer 0.5.
pub fn compute_eer(scored: &[ScoredTrial]) -> Result<f64> {
    let (mut targets, mut nontargets) = split_scores(scored)?;
    targets.sort_unstable_by(f64::total_cmp);
    nontargets.sort_unstable_by(f64::total_cmp);
    let nt = targets.len() as f64;
    let nn = nontargets.len() as f64;

    let mut thresholds: Vec<f64> = Vec::with_capacity(targets.len() + nontargets.len());
    thresholds.extend_from_slice(&targets);
    thresholds.extend_from_slice(&nontargets);
    thresholds.sort_unstable_by(f64::total_cmp);
    thresholds.dedup();

    // (FAR, FRR) at a threshold via binary search on the sorted halves.
    let at = |t: f64| -> (f64, f64) {
        let n_ge = nontargets.len() - nontargets.partition_point(|s| *s < t);
        let t_lt = targets.partition_point(|s| *s < t);
        (n_ge as f64 / nn, t_lt as f64 / nt)
    };

    let mut prev = (1.0f64, 0.0f64); // threshold below every score
    for &t in &thresholds {
        let (far, frr) = at(t);
        if far == frr {
            return Ok(far);
        }
        if far < frr {
            return Ok(interpolate_crossing(prev, (far, frr)));
        }
        prev = (far, frr);
    }
    // Above every score: FAR 0, FRR 1.
    Ok(interpolate_crossing(prev, (0.0, 1.0)))
}

fn interpolate_crossing(lo: (f64, f64), hi: (f64, f64)) -> f64 {
    let d_lo = lo.0 - lo.1;
    let d_hi = hi.0 - hi.1;
    debug_assert!(d_lo > 0.0 && d_hi < 0.0);
    let lambda = d_lo / (d_lo - d_hi);
    (lo.0 + lambda * (hi.0 - lo.0)).clamp(0.0, 1.0)
}

/// Brute-force EER: evaluate FAR/FRR by direct counting at every midpoint
/// between consecutive distinct scores (plus one point below and one above
/// all scores) and locate the crossing by enumeration. Kept deliberately
/// independent of [`compute_eer`]'s sweep machinery.
pub fn eer_exhaustive(scored: &[ScoredTrial]) -> Result<f64> {
    let (targets, nontargets) = split_scores(scored)?;
    let mut distinct: Vec<f64> = targets.iter().chain(&nontargets).copied().collect();
    distinct.sort_unstable_by(f64::total_cmp);
    distinct.dedup();

    let mut thresholds = Vec::with_capacity(distinct.len() + 1);
    thresholds.push(distinct[0] - 1.0);
    for w in distinct.windows(2) {
        thresholds.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    thresholds.push(distinct[distinct.len() - 1] + 1.0);

    let mut points = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let far = nontargets.iter().filter(|s| **s >= t).count() as f64 / nontargets.len() as f64;
        let frr = targets.iter().filter(|s| **s < t).count() as f64 / targets.len() as f64;
        points.push((far, frr));
    }
    for i in 0..points.len() {
        let (far, frr) = points[i];
        if far == frr {
            return Ok(far);
        }
        if far < frr {
            let (pf, pr) = points[i - 1];
            let d0 = pf - pr;
            let d1 = far - frr;
            let lambda = d0 / (d0 - d1);
            return Ok((pf + lambda * (far - pf)).clamp(0.0, 1.0));
        }
    }
    unreachable!("FAR ends at 0 and FRR at 1, so a crossing always exists");
}

/// Within/between-class variance of labeled embeddings.
pub fn geometry_stats(embeddings: &[(Vec<f64>, usize)]) -> Result<GeometryStats> {
    if embeddings.is_empty() {
        return Err(Error::Degenerate("no embeddings".into()));
    }
    let dim = embeddings[0].0.len();
    let mut by_speaker: BTreeMap<usize, Vec<&Vec<f64>>> = BTreeMap::new();
    for (e, label) in embeddings {
        if e.len() != dim {
            return Err(Error::shape(
                format!("embeddings of dim {dim}"),
                format!("{}", e.len()),
            ));
        }
        by_speaker.entry(*label).or_default().push(e);
    }
    if by_speaker.len() < 2 {
        return Err(Error::Degenerate(
            "geometry stats need at least 2 speakers".into(),
        ));
    }
    let n = embeddings.len() as f64;
    let mut global = vec![0.0; dim];
    for (e, _) in embeddings {
        linalg::add_scaled(&mut global, e, 1.0 / n);
    }
    let mut intra = 0.0;
    let mut inter = 0.0;
    for members in by_speaker.values() {
        let count = members.len() as f64;
        let mut centroid = vec![0.0; dim];
        for e in members {
            linalg::add_scaled(&mut centroid, e, 1.0 / count);
        }
        for e in members {
            intra += sq_dist(e, &centroid) / n;
        }
        inter += (count / n) * sq_dist(&centroid, &global);
    }
    let ratio = if intra > 0.0 {
        inter / intra
    } else if inter > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(GeometryStats {
        inter_var: inter,
        intra_var: intra,
        ratio,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Deterministic 2-D PCA projection.
#[derive(Clone, Debug, Serialize)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    /// Fraction of total variance captured by the two components.
    pub variance_share: f64,
    /// Leading two eigenvalues, descending.
    pub eigenvalues: [f64; 2],
}

/// Center, find the top-2 principal directions (Jacobi eigendecomposition of
/// the covariance), and project. Sign convention: the largest-magnitude
/// coordinate of each direction is positive, so output is reproducible.
pub fn project_2d(embeddings: &[Vec<f64>]) -> Result<Projection> {
    if embeddings.len() < 3 {
        return Err(Error::Degenerate("need at least 3 embeddings".into()));
    }
    let dim = embeddings[0].len();
    if dim < 2 {
        return Err(Error::Degenerate("need embedding dim >= 2".into()));
    }
    for e in embeddings {
        if e.len() != dim {
            return Err(Error::shape(
                format!("embeddings of dim {dim}"),
                format!("{}", e.len()),
            ));
        }
    }
    let n = embeddings.len() as f64;
    let mut mean = vec![0.0; dim];
    for e in embeddings {
        linalg::add_scaled(&mut mean, e, 1.0 / n);
    }
    let centered: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = Mat64::zeros(dim, dim);
    for c in &centered {
        for i in 0..dim {
            let ci = c[i] / n;
            for j in 0..dim {
                let v = cov.get(i, j) + ci * c[j];
                cov.set(i, j, v);
            }
        }
    }
    let trace: f64 = (0..dim).map(|i| cov.get(i, i)).sum();
    if trace <= 0.0 {
        return Err(Error::Degenerate(
            "all embeddings identical; no principal directions".into(),
        ));
    }
    let (vals, vecs) = linalg::jacobi_eigh(&cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut directions = [vec![0.0; dim], vec![0.0; dim]];
    let mut eigenvalues = [0.0; 2];
    for (k, &idx) in order.iter().take(2).enumerate() {
        eigenvalues[k] = vals[idx].max(0.0);
        for i in 0..dim {
            directions[k][i] = vecs.get(i, idx);
        }
        // Deterministic sign: flip so the largest-|coordinate| is positive.
        let lead = (0..dim)
            .max_by(|&a, &b| directions[k][a].abs().total_cmp(&directions[k][b].abs()))
            .unwrap();
        if directions[k][lead] < 0.0 {
            for v in directions[k].iter_mut() {
                *v = -*v;
            }
        }
    }
    let points = centered
        .iter()
        .map(|c| [linalg::dot(c, &directions[0]), linalg::dot(c, &directions[1])])
        .collect();
    Ok(Projection {
        points,
        variance_share: (eigenvalues[0] + eigenvalues[1]) / trace,
        eigenvalues,
    })
}

/// Evaluate a model over the clean condition and every (kind, SNR) cell.
///
/// Each cell remixes every utterance with held-out evaluation noise (seeded
/// under the evaluation-noise domain, disjoint from training augmentation)
/// and scores the same trial list. An infinite SNR in the grid means "no
/// mixing" and reproduces the clean EER exactly. Geometry stats are computed
/// on the clean embeddings and on the designated noisy condition: the first
/// configured kind at the median SNR of the grid.
pub fn full_eval(
    extractor: &ExtractorParams,
    ds: &Dataset,
    trials: &[Trial],
    snr_grid: &[f64],
    kinds: &[NoiseKind],
    seed: u64,
) -> Result<EvalReport> {
    if snr_grid.is_empty() || kinds.is_empty() {
        return Err(Error::InvalidArg(
            "need at least one SNR and one noise kind".into(),
        ));
    }
    let mut clean_embeddings: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut clean_labeled: Vec<(Vec<f64>, usize)> = Vec::new();
    for utt in &ds.utterances {
        let e = extractor.embed(utt)?;
        clean_labeled.push((e.clone(), utt.speaker));
        clean_embeddings.insert(utt.id.as_str(), e);
    }
    let clean_scored = score_with_embeddings(&clean_embeddings, trials)?;
    let clean_eer = compute_eer(&clean_scored)?;
    let clean_geometry = geometry_stats(&clean_labeled)?;

    let designated_kind = kinds[0];
    let designated_snr = {
        let mut sorted = snr_grid.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        sorted[sorted.len() / 2]
    };

    let mut cells = Vec::with_capacity(kinds.len() * snr_grid.len());
    let mut noisy_geometry = None;
    for (ki, &kind) in kinds.iter().enumerate() {
        for (si, &snr) in snr_grid.iter().enumerate() {
            if snr.is_infinite() && snr > 0.0 {
                cells.push(EvalCell {
                    kind,
                    snr_db: snr,
                    eer: clean_eer,
                });
                continue;
            }
            let mut embeddings: HashMap<&str, Vec<f64>> = HashMap::new();
            let mut labeled: Vec<(Vec<f64>, usize)> = Vec::new();
            for (ui, utt) in ds.utterances.iter().enumerate() {
                let noise_seed = seeds::mix_seed(
                    seed,
                    &[seeds::NOISE_EVAL, ki as u64, si as u64, ui as u64],
                );
                let noise = gen_noise(noise_seed, utt.frames.rows(), utt.frames.cols(), kind);
                let mixed = mix_at_snr(&utt.frames, &noise, snr)?;
                let e = extractor.embed_frames(&mixed)?;
                labeled.push((e.clone(), utt.speaker));
                embeddings.insert(utt.id.as_str(), e);
            }
            let scored = score_with_embeddings(&embeddings, trials)?;
            cells.push(EvalCell {
                kind,
                snr_db: snr,
                eer: compute_eer(&scored)?,
            });
            if kind == designated_kind && snr == designated_snr {
                noisy_geometry = Some(geometry_stats(&labeled)?);
            }
        }
    }
    let avg_noisy_eer = cells.iter().map(|c| c.eer).sum::<f64>() / cells.len() as f64;
    let per_kind_avg = kinds
        .iter()
        .map(|&k| {
            let ks: Vec<f64> = cells
                .iter()
                .filter(|c| c.kind == k)
                .map(|c| c.eer)
                .collect();
            (k, ks.iter().sum::<f64>() / ks.len() as f64)
        })
        .collect();
    Ok(EvalReport {
        clean_eer,
        cells,
        avg_noisy_eer,
        per_kind_avg,
        designated_kind,
        designated_snr,
        clean_geometry,
        noisy_geometry: noisy_geometry.unwrap_or(clean_geometry),
    })
}

impl EvalReport {
    /// CSV rows: the clean condition, one row per (kind, SNR) cell, per-kind
    /// averages, and the overall noisy average. Geometry columns are filled
    /// for the clean row and the designated noisy row.
    pub fn to_csv(&self) -> String {
        let fmt_geo = |g: &GeometryStats| {
            format!("{},{},{}", g.inter_var, g.intra_var, g.ratio)
        };
        let mut s = String::from("condition,snr_db,eer,inter_var,intra_var,ratio\n");
        s.push_str(&format!(
            "clean,,{},{}\n",
            self.clean_eer,
            fmt_geo(&self.clean_geometry)
        ));
        for c in &self.cells {
            let geo = if c.kind == self.designated_kind && c.snr_db == self.designated_snr {
                fmt_geo(&self.noisy_geometry)
            } else {
                ",,".to_string()
            };
            s.push_str(&format!("{},{},{},{}\n", c.kind, c.snr_db, c.eer, geo));
        }
        for (k, avg) in &self.per_kind_avg {
            s.push_str(&format!("avg_{k},,{avg},,,\n"));
        }
        s.push_str(&format!("avg_noisy,,{},,,\n", self.avg_noisy_eer));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_trials, synth_corpus};
    use crate::model::{BranchState, ModelConfig};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn scored(targets: &[f64], nontargets: &[f64]) -> Vec<ScoredTrial> {
        let mut out = Vec::new();
        for (i, &s) in targets.iter().enumerate() {
            out.push(ScoredTrial {
                trial: Trial {
                    utt_a: format!("t{i}a"),
                    utt_b: format!("t{i}b"),
                    target: true,
                },
                score: s,
            });
        }
        for (i, &s) in nontargets.iter().enumerate() {
            out.push(ScoredTrial {
                trial: Trial {
                    utt_a: format!("n{i}a"),
                    utt_b: format!("n{i}b"),
                    target: false,
                },
                score: s,
            });
        }
        out
    }

    #[test]
    fn eer_perfect_separation() {
        let s = scored(&[0.9, 0.8, 0.7], &[0.6, 0.5, 0.4]);
        assert_eq!(compute_eer(&s).unwrap(), 0.0);
        assert_eq!(eer_exhaustive(&s).unwrap(), 0.0);
    }

    #[test]
    fn eer_interleaved_half() {
        let s = scored(&[0.8, 0.4], &[0.6, 0.2]);
        assert_eq!(compute_eer(&s).unwrap(), 0.5);
        assert_eq!(eer_exhaustive(&s).unwrap(), 0.5);
    }

    #[test]
    fn eer_inverted_scores() {
        // Negating perfectly separated scores pushes the EER to the 1.0 side.
        let s = scored(&[-0.9, -0.8, -0.7], &[-0.6, -0.5, -0.4]);
        let eer = compute_eer(&s).unwrap();
        assert!(eer > 0.9, "negated perfect data gives {eer}");
        assert!((eer - eer_exhaustive(&s).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn eer_all_identical_scores_is_half() {
        let s = scored(&[0.5, 0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(compute_eer(&s).unwrap(), 0.5);
        assert_eq!(eer_exhaustive(&s).unwrap(), 0.5);
    }

    #[test]
    fn eer_single_pair() {
        let s = scored(&[0.9], &[0.1]);
        assert_eq!(compute_eer(&s).unwrap(), 0.0);
        assert_eq!(eer_exhaustive(&s).unwrap(), 0.0);
    }

    #[test]
    fn eer_degenerate_inputs_error() {
        let s = scored(&[0.9], &[]);
        assert!(matches!(compute_eer(&s), Err(Error::Degenerate(_))));
        assert!(matches!(eer_exhaustive(&s), Err(Error::Degenerate(_))));
    }

    fn random_instance(seed: u64, max_n: usize, quantize: bool) -> Vec<ScoredTrial> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nt = rng.random_range(1..=max_n);
        let nn = rng.random_range(1..=max_n);
        let draw = |rng: &mut ChaCha8Rng| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if quantize {
                (v * 8.0).round() / 8.0
            } else {
                v
            }
        };
        let targets: Vec<f64> = (0..nt).map(|_| draw(&mut rng) + 0.3).collect();
        let nontargets: Vec<f64> = (0..nn).map(|_| draw(&mut rng)).collect();
        scored(&targets, &nontargets)
    }

    #[test]
    fn eer_matches_oracle_on_random_instances() {
        for seed in 0..60u64 {
            let s = random_instance(seed, 400, seed % 3 == 0);
            let a = compute_eer(&s).unwrap();
            let b = eer_exhaustive(&s).unwrap();
            assert!(
                (a - b).abs() < 1e-9,
                "seed {seed}: sweep {a} vs enumeration {b}"
            );
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn eer_invariant_under_increasing_transforms() {
        for seed in 0..20u64 {
            let s = random_instance(seed, 200, seed % 2 == 0);
            let base = compute_eer(&s).unwrap();
            let mapped: Vec<ScoredTrial> = s
                .iter()
                .map(|t| ScoredTrial {
                    trial: t.trial.clone(),
                    score: t.score.exp(),
                })
                .collect();
            assert!((compute_eer(&mapped).unwrap() - base).abs() < 1e-9);
            let affine: Vec<ScoredTrial> = s
                .iter()
                .map(|t| ScoredTrial {
                    trial: t.trial.clone(),
                    score: 3.5 * t.score + 0.7,
                })
                .collect();
            assert!((compute_eer(&affine).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn geometry_hand_example() {
        // Two speakers, one sample each at [1,0] and [0,1]: intra 0, inter 0.5.
        let embs = vec![(vec![1.0, 0.0], 0), (vec![0.0, 1.0], 1)];
        let g = geometry_stats(&embs).unwrap();
        assert_eq!(g.intra_var, 0.0);
        assert!((g.inter_var - 0.5).abs() < 1e-12);
        assert!(g.ratio.is_infinite());
    }

    #[test]
    fn geometry_identical_members_zero_intra() {
        let embs = vec![
            (vec![1.0, 2.0], 0),
            (vec![1.0, 2.0], 0),
            (vec![-1.0, 0.0], 1),
            (vec![-1.0, 0.0], 1),
        ];
        let g = geometry_stats(&embs).unwrap();
        assert_eq!(g.intra_var, 0.0);
        assert!(g.inter_var > 0.0);
    }

    #[test]
    fn geometry_needs_two_speakers() {
        let embs = vec![(vec![1.0, 0.0], 0), (vec![0.5, 0.0], 0)];
        assert!(matches!(geometry_stats(&embs), Err(Error::Degenerate(_))));
    }

    #[test]
    fn geometry_total_variance_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut embs = Vec::new();
        for label in 0..4usize {
            let count = rng.random_range(1..6);
            for _ in 0..count {
                let e: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
                embs.push((e, label));
            }
        }
        let g = geometry_stats(&embs).unwrap();
        let n = embs.len() as f64;
        let dim = embs[0].0.len();
        let mut global = vec![0.0; dim];
        for (e, _) in &embs {
            linalg::add_scaled(&mut global, e, 1.0 / n);
        }
        let total: f64 = embs.iter().map(|(e, _)| sq_dist(e, &global)).sum::<f64>() / n;
        assert!(
            (total - (g.intra_var + g.inter_var)).abs() < 1e-9,
            "total {total} vs {} + {}",
            g.intra_var,
            g.inter_var
        );
        if g.intra_var > 0.0 {
            assert!((g.ratio * g.intra_var - g.inter_var).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_preserves_2d_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let embs: Vec<Vec<f64>> = (0..12)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let p = project_2d(&embs).unwrap();
        for i in 0..embs.len() {
            for j in (i + 1)..embs.len() {
                let d0 = sq_dist(&embs[i], &embs[j]).sqrt();
                let d1 = sq_dist(&p.points[i], &p.points[j]).sqrt();
                assert!((d0 - d1).abs() < 1e-9, "{d0} vs {d1}");
            }
        }
        assert!((p.variance_share - 1.0).abs() < 1e-9);
        assert!(p.eigenvalues[0] >= p.eigenvalues[1]);
    }

    #[test]
    fn projection_rank_one_collapses_second_axis() {
        let dir = [0.6, -0.3, 0.74];
        let embs: Vec<Vec<f64>> = (0..8)
            .map(|i| dir.iter().map(|d| d * i as f64).collect())
            .collect();
        let p = project_2d(&embs).unwrap();
        for pt in &p.points {
            assert!(pt[1].abs() < 1e-9, "second coordinate {}", pt[1]);
        }
    }

    #[test]
    fn projection_degenerate_cases() {
        let same = vec![vec![1.0, 2.0]; 5];
        assert!(matches!(project_2d(&same), Err(Error::Degenerate(_))));
        assert!(matches!(
            project_2d(&[vec![1.0, 2.0], vec![2.0, 1.0]]),
            Err(Error::Degenerate(_))
        ));
    }

    fn toy_eval_setup() -> (BranchState, Dataset, Vec<Trial>) {
        let ds = synth_corpus(6, 4, 4, 6, 5, 0.2, 0.05).unwrap();
        let cfg = ModelConfig {
            input_dim: 5,
            hidden_dim: 6,
            embed_dim: 6,
            n_speakers: 4,
        };
        let branch = BranchState::init(&cfg, 17);
        let trials = make_trials(&ds, 3, 8, 8).unwrap();
        (branch, ds, trials)
    }

    #[test]
    fn scoring_caches_and_scales() {
        let (branch, ds, trials) = toy_eval_setup();
        let scored = score_trials(branch.extractor(), &ds, &trials).unwrap();
        assert_eq!(scored.len(), trials.len());
        for s in &scored {
            assert!((-1.0..=1.0).contains(&s.score));
        }
        // Scaling every embedding by 3 leaves cosine scores within 1e-12.
        let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
        for utt in &ds.utterances {
            let mut e = branch.extractor().embed(utt).unwrap();
            for v in e.iter_mut() {
                *v *= 3.0;
            }
            cache.insert(utt.id.as_str(), e);
        }
        let rescored = score_with_embeddings(&cache, &trials).unwrap();
        for (a, b) in scored.iter().zip(&rescored) {
            assert!((a.score - b.score).abs() < 1e-12);
        }
    }

    #[test]
    fn scoring_parallel_matches_serial() {
        let (branch, ds, trials) = toy_eval_setup();
        let serial = score_trials(branch.extractor(), &ds, &trials).unwrap();
        // Compute embeddings across threads; purity means identical bits.
        let chunks: Vec<Vec<(String, Vec<f64>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = ds
                .utterances
                .chunks((ds.utterances.len() / 3).max(1))
                .map(|chunk| {
                    let ext = branch.extractor();
                    scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|u| (u.id.clone(), ext.embed(u).unwrap()))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
        let flat: Vec<(String, Vec<f64>)> = chunks.into_iter().flatten().collect();
        for (id, e) in &flat {
            cache.insert(id.as_str(), e.clone());
        }
        let parallel = score_with_embeddings(&cache, &trials).unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }

    #[test]
    fn unknown_trial_id_errors() {
        let (branch, ds, mut trials) = toy_eval_setup();
        trials[0].utt_a = "missing".into();
        assert!(matches!(
            score_trials(branch.extractor(), &ds, &trials),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn full_eval_grid_and_averages() {
        let (branch, ds, trials) = toy_eval_setup();
        let report = full_eval(
            branch.extractor(),
            &ds,
            &trials,
            &[0.0, 10.0],
            &[NoiseKind::White, NoiseKind::Tonal],
            9,
        )
        .unwrap();
        assert_eq!(report.cells.len(), 4);
        let recomputed =
            report.cells.iter().map(|c| c.eer).sum::<f64>() / report.cells.len() as f64;
        assert!((report.avg_noisy_eer - recomputed).abs() < 1e-12);
        for (kind, avg) in &report.per_kind_avg {
            let cells: Vec<f64> = report
                .cells
                .iter()
                .filter(|c| c.kind == *kind)
                .map(|c| c.eer)
                .collect();
            let mean = cells.iter().sum::<f64>() / cells.len() as f64;
            assert!((avg - mean).abs() < 1e-12);
        }
        assert_eq!(report.designated_kind, NoiseKind::White);
        assert_eq!(report.designated_snr, 10.0);
        // Determinism.
        let again = full_eval(
            branch.extractor(),
            &ds,
            &trials,
            &[0.0, 10.0],
            &[NoiseKind::White, NoiseKind::Tonal],
            9,
        )
        .unwrap();
        assert_eq!(report.avg_noisy_eer.to_bits(), again.avg_noisy_eer.to_bits());
        for (a, b) in report.cells.iter().zip(&again.cells) {
            assert_eq!(a.eer.to_bits(), b.eer.to_bits());
        }
    }

    #[test]
    fn full_eval_infinite_snr_equals_clean() {
        let (branch, ds, trials) = toy_eval_setup();
        let report = full_eval(
            branch.extractor(),
            &ds,
            &trials,
            &[f64::INFINITY],
            &[NoiseKind::White],
            9,
        )
        .unwrap();
        assert_eq!(report.cells[0].eer.to_bits(), report.clean_eer.to_bits());
    }

    proptest! {
        #[test]
        fn eer_oracle_equivalence_property(seed in 0u64..200) {
            let s = random_instance(seed, 120, seed % 4 == 0);
            let a = compute_eer(&s).unwrap();
            let b = eer_exhaustive(&s).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
