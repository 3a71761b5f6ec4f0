//! Diversity-driven selection: random, k-means, k-center, BADGE and Coreset.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use super::uncertainty::ProbMatrix;
use super::{canonical_candidates, clamp_budget, Selection};
use crate::distance::DistanceSpace;
use crate::error::{Error, Result};
use crate::rng::Rng;

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Uniform sample without replacement. The candidate order passed in does
/// not affect the result.
pub fn select_random(candidates: &[usize], budget: usize, rng: &mut Rng) -> Result<Selection> {
    let cands = canonical_candidates(candidates)?;
    let budget = clamp_budget(budget, cands.len())?;
    let picked = rng.sample(&cands, budget);
    let scores = vec![0.0; picked.len()];
    Ok(Selection::new(picked, scores, "random", rng.seed()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

/// k-means++ seeding: the first centre is uniform, each later one is drawn
/// with probability proportional to its squared distance to the nearest
/// centre so far. When every remaining weight is zero the smallest unused
/// row index is taken. Returns `(row, weight at pick time)` pairs.
pub fn kmeans_pp_seeds(data: ArrayView2<'_, f64>, k: usize, rng: &mut Rng) -> Vec<(usize, f64)> {
    let n = data.nrows();
    let k = k.min(n);
    let mut picks = Vec::with_capacity(k);
    if k == 0 {
        return picks;
    }
    let mut chosen = vec![false; n];
    let first = rng.below(n);
    chosen[first] = true;
    picks.push((first, 0.0));
    let mut weight: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_dist(data.row(i), data.row(first)))
        .collect();
    while picks.len() < k {
        let total: f64 = weight
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen[*i])
            .map(|(_, w)| w)
            .sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = None;
            for i in 0..n {
                if chosen[i] || weight[i] <= 0.0 {
                    continue;
                }
                last_positive = Some(i);
                acc += weight[i];
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.or(last_positive).expect("positive total weight")
        } else {
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[next] = true;
        picks.push((next, weight[next]));
        let centre = data.row(next);
        let updated: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| weight[i].min(sq_dist(data.row(i), centre)))
            .collect();
        weight = updated;
    }
    picks
}

fn assign(data: ArrayView2<'_, f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let row = data.row(i);
            let mut best = (0, f64::INFINITY);
            for (c, centre) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(row, centre);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

/// Lloyd iterations from k-means++ seeds. An empty cluster is re-seeded at
/// the point farthest from its current centroid.
pub fn kmeans(
    data: ArrayView2<'_, f64>,
    params: KMeansParams,
    rng: &mut Rng,
) -> Result<ClusterResult> {
    let n = data.nrows();
    let k = params.k;
    if k < 1 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "k-means needs k <= n (k = {k}, n = {n})"
        )));
    }
    let d = data.ncols();
    let mut centroids = Array2::zeros((k, d));
    for (c, (row, _)) in kmeans_pp_seeds(data, k, rng).into_iter().enumerate() {
        centroids.row_mut(c).assign(&data.row(row));
    }

    for _ in 0..params.max_iters {
        let assigned = assign(data, &centroids);
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assigned.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &data.row(i));
            counts[c] += 1;
        }
        let mut next = centroids.clone();
        let mut taken = vec![false; n];
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mut row = sums.row(c).to_owned();
                row /= count as f64;
                next.row_mut(c).assign(&row);
            } else {
                // farthest point from its own centroid, not already used for a re-seed
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(b.cmp(&a)))
                    .expect("n >= k");
                taken[far] = true;
                next.row_mut(c).assign(&data.row(far));
            }
        }
        let shift = centroids
            .rows()
            .into_iter()
            .zip(next.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < params.tol {
            break;
        }
    }

    let assigned = assign(data, &centroids);
    let inertia = assigned.iter().map(|&(_, d)| d).sum();
    Ok(ClusterResult {
        centroids,
        assignment: assigned.into_iter().map(|(c, _)| c).collect(),
        inertia,
    })
}

/// k-means with `k = budget` over the candidate rows of `features`
/// (`features` row `r` is candidate `candidates[r]`); from each cluster the
/// member nearest to the centroid is returned.
pub fn select_kmeans(
    features: ArrayView2<'_, f64>,
    candidates: &[usize],
    budget: usize,
    rng: &mut Rng,
    max_iters: usize,
    tol: f64,
) -> Result<Selection> {
    if features.nrows() != candidates.len() {
        return Err(Error::invalid(
            "k-means features and candidates are not row-aligned",
        ));
    }
    let order = canonical_order(candidates)?;
    let budget = clamp_budget(budget, order.len())?;
    let rows: Vec<usize> = order.iter().map(|&(_, r)| r).collect();
    let data = features.select(ndarray::Axis(0), &rows);
    let ids: Vec<usize> = order.iter().map(|&(id, _)| id).collect();

    let result = kmeans(
        data.view(),
        KMeansParams {
            k: budget,
            max_iters,
            tol,
        },
        rng,
    )?;
    let mut used = vec![false; ids.len()];
    let mut picked = Vec::with_capacity(budget);
    let mut scores = Vec::with_capacity(budget);
    for c in 0..budget {
        let centre = result.centroids.row(c);
        let members: Vec<usize> = (0..ids.len())
            .filter(|&i| result.assignment[i] == c && !used[i])
            .collect();
        let pool: Vec<usize> = if members.is_empty() {
            (0..ids.len()).filter(|&i| !used[i]).collect()
        } else {
            members
        };
        let (best, dist) = pool
            .iter()
            .map(|&i| (i, sq_dist(data.row(i), centre).sqrt()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("budget <= candidates");
        used[best] = true;
        picked.push(ids[best]);
        scores.push(dist);
    }
    Ok(Selection::new(picked, scores, "kmeans", rng.seed()))
}

fn canonical_order(candidates: &[usize]) -> Result<Vec<(usize, usize)>> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    let mut order: Vec<(usize, usize)> = candidates.iter().copied().zip(0..).collect();
    order.sort_unstable();
    if order.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("duplicate candidate index"));
    }
    Ok(order)
}

/// Greedy max-min (k-center) selection.
///
/// Each step picks the candidate whose minimum distance to
/// `labeled ∪ selected` is largest, ties to the smaller index. With nothing
/// labeled the first pick is the candidate with the largest
/// [`DistanceSpace::seed_priority`] (the feature norm for vector spaces).
pub fn select_kcenter(
    space: &dyn DistanceSpace,
    labeled: &[usize],
    candidates: &[usize],
    budget: usize,
) -> Result<Selection> {
    let mut sel = greedy_max_min(space, space, labeled, candidates, budget, None)?;
    sel.method = "kcenter".into();
    Ok(sel)
}

/// Greedy k-center with an optional distance upper bound.
///
/// `initial` measures candidate-to-labeled distances; `update` measures
/// distances to newly selected points. Passing the same space for both gives
/// plain k-center. With `outlier_bound`, candidates whose current minimum
/// distance exceeds the bound are not eligible for maximization. The
/// coverage radius (largest remaining minimum distance) is reported in
/// [`Selection::coverage_radius`].
pub fn select_coreset(
    initial: &dyn DistanceSpace,
    update: &dyn DistanceSpace,
    labeled: &[usize],
    candidates: &[usize],
    budget: usize,
    outlier_bound: Option<f64>,
) -> Result<Selection> {
    if let Some(b) = outlier_bound {
        if b.is_nan() || b < 0.0 {
            return Err(Error::invalid("outlier bound must be non-negative"));
        }
    }
    let mut sel = greedy_max_min(initial, update, labeled, candidates, budget, outlier_bound)?;
    sel.method = "coreset".into();
    Ok(sel)
}

fn greedy_max_min(
    initial: &dyn DistanceSpace,
    update: &dyn DistanceSpace,
    labeled: &[usize],
    candidates: &[usize],
    budget: usize,
    bound: Option<f64>,
) -> Result<Selection> {
    let mut lab = labeled.to_vec();
    lab.sort_unstable();
    lab.dedup();
    let cands: Vec<usize> = canonical_candidates(candidates)?
        .into_iter()
        .filter(|c| lab.binary_search(c).is_err())
        .collect();
    if cands.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    let budget = clamp_budget(budget, cands.len())?;

    let mut min_d: Vec<f64> = cands
        .par_iter()
        .map(|&c| {
            lab.iter().try_fold(f64::INFINITY, |m, &l| {
                Ok::<_, Error>(m.min(initial.distance(c, l)?))
            })
        })
        .collect::<Result<_>>()?;
    let mut selected = vec![false; cands.len()];
    let mut picked = Vec::with_capacity(budget);
    let mut scores = Vec::with_capacity(budget);

    for step in 0..budget {
        let eligible = |i: usize| !selected[i] && bound.is_none_or(|b| min_d[i] <= b);
        let best = if step == 0 && lab.is_empty() {
            (0..cands.len())
                .map(|i| (i, initial.seed_priority(cands[i])))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
        } else {
            (0..cands.len())
                .filter(|&i| eligible(i))
                .max_by(|&a, &b| min_d[a].total_cmp(&min_d[b]).then(b.cmp(&a)))
        };
        let best = match best {
            Some(i) => i,
            None => {
                log::warn!("every remaining candidate exceeds the outlier bound; taking the least outlying");
                (0..cands.len())
                    .filter(|&i| !selected[i])
                    .min_by(|&a, &b| min_d[a].total_cmp(&min_d[b]).then(a.cmp(&b)))
                    .expect("budget <= candidates")
            }
        };
        selected[best] = true;
        picked.push(cands[best]);
        scores.push(if min_d[best].is_finite() {
            min_d[best]
        } else {
            initial.seed_priority(cands[best])
        });
        let centre = cands[best];
        let fresh: Vec<f64> = cands
            .par_iter()
            .enumerate()
            .map(|(i, &c)| {
                if i == best {
                    Ok(0.0)
                } else {
                    Ok(min_d[i].min(update.distance(c, centre)?))
                }
            })
            .collect::<Result<_>>()?;
        min_d = fresh;
    }

    let radius = (0..cands.len())
        .filter(|&i| !selected[i])
        .map(|i| min_d[i])
        .fold(0.0, f64::max);
    let mut sel = Selection::new(picked, scores, "kcenter", 0);
    sel.coverage_radius = Some(radius);
    Ok(sel)
}

/// Per-row `(p - onehot(argmax p)) ⊗ feat`, flattened class-major. This is
/// the cross-entropy gradient with respect to the final-layer weights under
/// the model's own prediction as label.
pub fn gradient_embeddings(probs: &ProbMatrix, penult: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if probs.nrows() != penult.nrows() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} probability rows vs {} feature rows",
            probs.nrows(),
            penult.nrows()
        )));
    }
    let c = probs.num_classes();
    let h = penult.ncols();
    let p = probs.view();
    let yhat = probs.argmax_rows();
    let mut out = Array2::zeros((p.nrows(), c * h));
    for i in 0..p.nrows() {
        for k in 0..c {
            let g = p[[i, k]] - if k == yhat[i] { 1.0 } else { 0.0 };
            for j in 0..h {
                out[[i, k * h + j]] = g * penult[[i, j]];
            }
        }
    }
    Ok(out)
}

/// BADGE: k-means++ seeding over gradient embeddings; `probs` and `penult`
/// row `r` belong to `candidates[r]`.
pub fn select_badge(
    probs: &ProbMatrix,
    penult: ArrayView2<'_, f64>,
    candidates: &[usize],
    budget: usize,
    rng: &mut Rng,
) -> Result<Selection> {
    if probs.nrows() != candidates.len() {
        return Err(Error::invalid(
            "BADGE inputs and candidates are not row-aligned",
        ));
    }
    let order = canonical_order(candidates)?;
    let budget = clamp_budget(budget, order.len())?;
    let rows: Vec<usize> = order.iter().map(|&(_, r)| r).collect();
    let emb = gradient_embeddings(
        &probs.select_rows(&rows),
        penult.select(ndarray::Axis(0), &rows).view(),
    )?;
    let seeds = kmeans_pp_seeds(emb.view(), budget, rng);
    let picked = seeds.iter().map(|&(r, _)| order[r].0).collect();
    let scores = seeds.iter().map(|&(_, w)| w).collect();
    Ok(Selection::new(picked, scores, "badge", rng.seed()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::{DistanceMatrix, Metric};
    use ndarray::array;

    fn line_space(values: &[f64]) -> DistanceMatrix {
        let n = values.len();
        let data = (0..n * n)
            .map(|k| (values[k / n] - values[k % n]).abs())
            .collect();
        DistanceMatrix::new(data, n, Metric::Euclidean, (0..n).collect(), None).unwrap()
    }

    #[test]
    fn random_is_deterministic_and_saturates() {
        let cands: Vec<usize> = (10..30).collect();
        let a = select_random(&cands, 5, &mut Rng::new(7)).unwrap();
        let b = select_random(&cands, 5, &mut Rng::new(7)).unwrap();
        assert_eq!(a.indices, b.indices);
        let mut shuffled = cands.clone();
        shuffled.reverse();
        assert_eq!(
            select_random(&shuffled, 5, &mut Rng::new(7))
                .unwrap()
                .indices,
            a.indices
        );
        let mut all = select_random(&cands, 20, &mut Rng::new(1)).unwrap().indices;
        all.sort_unstable();
        assert_eq!(all, cands);
        assert!(select_random(&[], 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn random_is_uniform() {
        let cands: Vec<usize> = (0..10).collect();
        let mut rng = Rng::new(123);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            counts[select_random(&cands, 1, &mut rng).unwrap().indices[0]] += 1;
        }
        for c in counts {
            assert!((850..=1150).contains(&c), "{counts:?}");
        }
        // chi-square with 9 dof, 0.999 quantile is 27.88
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0)
            .sum();
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }

    #[test]
    fn kmeans_closed_forms() {
        let data = array![[0.0, 1.0], [2.0, 3.0], [4.0, -1.0], [6.0, 5.0]];
        let one = kmeans(data.view(), KMeansParams::new(1), &mut Rng::new(0)).unwrap();
        assert_eq!(one.centroids.row(0).to_vec(), vec![3.0, 2.0]);
        let all = kmeans(data.view(), KMeansParams::new(4), &mut Rng::new(0)).unwrap();
        assert_eq!(all.inertia, 0.0);
        assert!(kmeans(data.view(), KMeansParams::new(5), &mut Rng::new(0)).is_err());
        assert!(kmeans(data.view(), KMeansParams::new(0), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn kmeans_assigns_to_nearest_centroid() {
        let mut rng = Rng::new(8);
        let data = Array2::from_shape_simple_fn((60, 3), || rng.normal());
        let r = kmeans(data.view(), KMeansParams::new(5), &mut Rng::new(2)).unwrap();
        let mut inertia = 0.0;
        for (i, &c) in r.assignment.iter().enumerate() {
            let own = sq_dist(data.row(i), r.centroids.row(c));
            for other in r.centroids.rows() {
                assert!(own <= sq_dist(data.row(i), other) + 1e-12);
            }
            inertia += own;
        }
        assert!((inertia - r.inertia).abs() < 1e-9);
    }

    #[test]
    fn kcenter_hand_trace() {
        // values [0, 1, 2, 10], labeled = {0}: first the 10, then the 2.
        let space = line_space(&[0.0, 1.0, 2.0, 10.0]);
        let s = select_kcenter(&space, &[0], &[1, 2, 3], 2).unwrap();
        assert_eq!(s.indices, vec![3, 2]);
        let s = select_kcenter(&space, &[0], &[1, 2, 3], 1).unwrap();
        assert_eq!(s.indices, vec![3]);
    }

    #[test]
    fn kcenter_identical_points_tie_break() {
        let space = line_space(&[1.0; 6]);
        let s = select_kcenter(&space, &[0], &[5, 3, 1, 2, 4], 3).unwrap();
        assert_eq!(s.indices, vec![1, 2, 3]);
    }

    #[test]
    fn kcenter_excludes_labeled() {
        let space = line_space(&[0.0, 4.0, 9.0, 3.0]);
        let s = select_kcenter(&space, &[2], &[0, 1, 2, 3], 3).unwrap();
        assert!(!s.indices.contains(&2));
        assert_eq!(s.indices.len(), 3);
    }

    #[test]
    fn coreset_without_bound_equals_kcenter() {
        let mut rng = Rng::new(5);
        let vals: Vec<f64> = (0..15).map(|_| rng.uniform() * 100.0).collect();
        let space = line_space(&vals);
        let cands: Vec<usize> = (2..15).collect();
        let a = select_kcenter(&space, &[0, 1], &cands, 4).unwrap();
        let b = select_coreset(&space, &space, &[0, 1], &cands, 4, None).unwrap();
        let c = select_coreset(&space, &space, &[0, 1], &cands, 4, Some(f64::INFINITY)).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.indices, c.indices);
    }

    #[test]
    fn gradient_embedding_arithmetic() {
        let p = ProbMatrix::new(array![[0.7, 0.3], [0.0, 1.0]]).unwrap();
        let f = array![[1.0, 2.0], [3.0, -4.0]];
        let g = gradient_embeddings(&p, f.view()).unwrap();
        let expected = [-0.3, -0.6, 0.3, 0.6];
        for (a, b) in g.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(g.row(1).iter().all(|&v| v == 0.0));
        assert!(gradient_embeddings(&p, array![[1.0]].view()).is_err());
    }

    #[test]
    fn badge_degenerate_embeddings_follow_index_order() {
        // Every candidate is certain, so all gradient embeddings are zero.
        let p = ProbMatrix::new(Array2::from_shape_fn((5, 2), |(_, c)| {
            if c == 0 {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap();
        let f = Array2::ones((5, 3));
        let cands = [40, 10, 30, 20, 50];
        let s = select_badge(&p, f.view(), &cands, 3, &mut Rng::new(3)).unwrap();
        let first = s.indices[0];
        let rest: Vec<usize> = [10, 20, 30, 40, 50]
            .into_iter()
            .filter(|&c| c != first)
            .take(2)
            .collect();
        assert_eq!(&s.indices[1..], &rest[..]);
    }
}
