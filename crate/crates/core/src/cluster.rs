//! Estimated speaker labels for unlabeled in-domain data: a linear
//! gender classifier trained on labeled out-of-domain data, seeded
//! k-means++ per gender subset, and a pooled relabeled output whose
//! label namespaces stay disjoint across subsets.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Gender};
use crate::error::{config_err, data_err, Result};

/// Linear two-class gender rule: project onto the unit vector between
/// gender means and threshold at the midpoint of the projected means.
#[derive(Debug, Clone, PartialEq)]
pub struct GenderModel {
    /// Unit direction pointing from the F mean toward the M mean.
    pub direction: Vec<f64>,
    pub threshold: f64,
}

impl GenderModel {
    pub fn classify(&self, v: &[f64]) -> Gender {
        let proj: f64 = self.direction.iter().zip(v).map(|(d, x)| d * x).sum();
        if proj > self.threshold {
            Gender::M
        } else {
            Gender::F
        }
    }
}

/// Fits the gender rule on gender-labeled segments. Both genders must be
/// present; coincident gender means leave no usable direction and error.
pub fn fit_gender(corpus: &Corpus) -> Result<GenderModel> {
    let d = corpus.dimension();
    let mut sums: BTreeMap<Gender, (Vec<f64>, usize)> = BTreeMap::new();
    for seg in corpus.segments() {
        if let Some(g) = seg.gender {
            let (sum, n) = sums.entry(g).or_insert_with(|| (vec![0.0; d], 0));
            for (s, v) in sum.iter_mut().zip(&seg.vector) {
                *s += v;
            }
            *n += 1;
        }
    }
    let (f_mean, m_mean) = match (sums.get(&Gender::F), sums.get(&Gender::M)) {
        (Some((fs, fn_)), Some((ms, mn))) => (
            fs.iter().map(|x| x / *fn_ as f64).collect::<Vec<f64>>(),
            ms.iter().map(|x| x / *mn as f64).collect::<Vec<f64>>(),
        ),
        _ => return data_err("gender model needs segments of both genders"),
    };
    let mut direction: Vec<f64> = m_mean.iter().zip(&f_mean).map(|(m, f)| m - f).collect();
    let norm: f64 = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return data_err("gender means coincide; no separating direction");
    }
    for x in &mut direction {
        *x /= norm;
    }
    let proj = |v: &[f64]| -> f64 { direction.iter().zip(v).map(|(d, x)| d * x).sum() };
    let threshold = 0.5 * (proj(&f_mean) + proj(&m_mean));
    Ok(GenderModel {
        direction,
        threshold,
    })
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// Cluster index per input vector.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd assignment step of the winning restart;
    /// non-increasing.
    pub iteration_inertias: Vec<f64>,
    /// Number of clusters that ended up with at least one member.
    pub occupied_clusters: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded deterministic k-means: k-means++ initialization, Lloyd updates
/// to an assignment fixpoint (or `max_iters`), best of `n_restarts` by
/// `(inertia, restart index)`. Empty clusters are re-seeded at the point
/// farthest from its assigned centroid.
pub fn kmeans(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    n_restarts: usize,
) -> Result<KmeansResult> {
    let n = vectors.len();
    if k == 0 || n_restarts == 0 || max_iters == 0 {
        return config_err("kmeans: k, max_iters and n_restarts must be positive");
    }
    if k > n {
        return data_err(format!("kmeans: k={k} exceeds the {n} available points"));
    }
    let mut best: Option<KmeansResult> = None;
    for restart in 0..n_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let run = lloyd_run(vectors, k, &mut rng, max_iters);
        let better = match &best {
            None => true,
            Some(b) => run.inertia < b.inertia,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd_run(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, max_iters: usize) -> KmeansResult {
    let n = vectors.len();
    let mut centroids = plus_plus_init(vectors, k, rng);
    let mut labels = vec![0usize; n];
    let mut iteration_inertias = Vec::new();
    let mut inertia = f64::INFINITY;

    for _ in 0..max_iters {
        // Assignment step; ties go to the lowest centroid index.
        let mut changed = false;
        let mut new_inertia = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for (c, ctr) in centroids.iter().enumerate() {
                let d = sq_dist(v, ctr);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
            new_inertia += best_d;
        }
        iteration_inertias.push(new_inertia);
        let converged = !changed && !iteration_inertias.is_empty() && new_inertia == inertia;
        inertia = new_inertia;
        if converged {
            break;
        }

        // Update step with the empty-cluster rule: an empty cluster's
        // centroid is re-seeded at the point farthest from its assigned
        // centroid (lowest index on ties).
        let mut sums = vec![vec![0.0; vectors[0].len()]; k];
        let mut counts = vec![0usize; k];
        for (i, v) in vectors.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, x) in sums[labels[i]].iter_mut().zip(v) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in sums[c].iter_mut() {
                    *s /= counts[c] as f64;
                }
                centroids[c] = sums[c].clone();
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&vectors[a], &centroids[labels[a]])
                            .total_cmp(&sq_dist(&vectors[b], &centroids[labels[b]]))
                    })
                    .expect("nonempty data");
                centroids[c] = vectors[far].clone();
            }
        }
    }

    let occupied = {
        let mut seen = vec![false; k];
        for &l in &labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    KmeansResult {
        labels,
        centroids,
        inertia,
        iteration_inertias,
        occupied_clusters: occupied,
    }
}

/// k-means++ seeding: first center uniform, then D²-weighted draws by
/// CDF inversion. If every remaining point coincides with a chosen
/// center, the first unchosen index is taken.
fn plus_plus_init(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![vectors[first].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centers[0])).collect();

    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            (0..n).find(|&i| !chosen[i]).expect("k <= n leaves an unchosen point")
        };
        chosen[pick] = true;
        centers.push(vectors[pick].clone());
        for (i, v) in vectors.iter().enumerate() {
            let d = sq_dist(v, centers.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

#[derive(Debug, Clone)]
pub struct SubsetClustering {
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub requested_k: usize,
    pub occupied_clusters: usize,
    pub segment_count: usize,
}

/// Pooled gender-dependent clustering output. Every input segment is
/// labeled exactly once; labels are namespaced `F_<i>` / `M_<i>` so the
/// subsets cannot collide.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub labels: BTreeMap<String, String>,
    pub subsets: BTreeMap<Gender, SubsetClustering>,
    /// Genders whose subset was empty and therefore skipped.
    pub empty_subsets: Vec<Gender>,
}

impl ClusterAssignment {
    /// Segment ids per estimated label, sorted for determinism.
    pub fn clusters(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (seg, lab) in &self.labels {
            out.entry(lab.as_str()).or_default().push(seg.as_str());
        }
        out
    }

    pub fn distinct_labels(&self) -> usize {
        self.clusters().len()
    }
}

/// Splits a total cluster budget across gender subsets proportionally to
/// their sizes, rounding the leftover toward the larger subset. Nonempty
/// subsets always receive at least 1.
pub fn split_k_proportional(k_total: usize, n_f: usize, n_m: usize) -> (usize, usize) {
    let n = n_f + n_m;
    if n == 0 || k_total == 0 {
        return (0, 0);
    }
    if n_f == 0 {
        return (0, k_total);
    }
    if n_m == 0 {
        return (k_total, 0);
    }
    let mut k_f = ((k_total * n_f) as f64 / n as f64).floor() as usize;
    let mut k_m = ((k_total * n_m) as f64 / n as f64).floor() as usize;
    while k_f + k_m < k_total {
        if n_f >= n_m {
            k_f += 1;
        } else {
            k_m += 1;
        }
    }
    // Every nonempty subset gets at least one cluster.
    if k_f == 0 {
        k_f = 1;
        k_m -= 1;
    }
    if k_m == 0 && k_f > 1 {
        k_m = 1;
        k_f -= 1;
    }
    (k_f.min(n_f), k_m.min(n_m))
}

/// Splits `corpus` by the gender rule, runs k-means per subset with the
/// per-gender budgets, and pools the relabeled output. Subsets absent
/// from `k_per_gender` (or mapped to 0) must be empty; an empty subset
/// with a positive budget is an error.
pub fn cluster_unlabeled(
    corpus: &Corpus,
    gender_model: &GenderModel,
    k_per_gender: &BTreeMap<Gender, usize>,
    seed: u64,
    max_iters: usize,
    n_restarts: usize,
) -> Result<ClusterAssignment> {
    if corpus.is_empty() {
        return data_err("cluster_unlabeled: empty corpus");
    }
    let mut subsets: BTreeMap<Gender, Vec<usize>> =
        BTreeMap::from([(Gender::F, Vec::new()), (Gender::M, Vec::new())]);
    for (i, seg) in corpus.segments().iter().enumerate() {
        subsets
            .get_mut(&gender_model.classify(&seg.vector))
            .unwrap()
            .push(i);
    }

    let mut labels = BTreeMap::new();
    let mut out_subsets = BTreeMap::new();
    let mut empty_subsets = Vec::new();
    for (gender, idxs) in &subsets {
        let k = k_per_gender.get(gender).copied().unwrap_or(0);
        if idxs.is_empty() {
            if k > 0 {
                return data_err(format!(
                    "cluster_unlabeled: k={k} requested for empty {} subset",
                    gender.as_str()
                ));
            }
            empty_subsets.push(*gender);
            continue;
        }
        if k == 0 {
            return config_err(format!(
                "cluster_unlabeled: nonempty {} subset has no cluster budget",
                gender.as_str()
            ));
        }
        let vectors: Vec<Vec<f64>> = idxs
            .iter()
            .map(|&i| corpus.segments()[i].vector.clone())
            .collect();
        // Per-gender seed stream keeps subsets independent.
        let subset_seed = seed ^ ((*gender as u64 + 1) << 48);
        let res = kmeans(&vectors, k, subset_seed, max_iters, n_restarts)?;
        for (pos, &seg_idx) in idxs.iter().enumerate() {
            labels.insert(
                corpus.segments()[seg_idx].segment_id.clone(),
                format!("{}_{}", gender.as_str(), res.labels[pos]),
            );
        }
        out_subsets.insert(
            *gender,
            SubsetClustering {
                centroids: res.centroids,
                inertia: res.inertia,
                requested_k: k,
                occupied_clusters: res.occupied_clusters,
                segment_count: idxs.len(),
            },
        );
    }
    Ok(ClusterAssignment {
        labels,
        subsets: out_subsets,
        empty_subsets,
    })
}

/// Writes estimated labels back onto a corpus so the result feeds PLDA
/// (or LDA) training unchanged. Every segment of `corpus` must be
/// covered by the assignment.
pub fn apply_assignment(corpus: &Corpus, assignment: &ClusterAssignment) -> Result<Corpus> {
    corpus.map_vectors(corpus.dimension(), |seg| seg.vector.clone())?; // cheap validity re-check
    let mut segs = Vec::with_capacity(corpus.len());
    for seg in corpus.segments() {
        let label = assignment.labels.get(&seg.segment_id).ok_or_else(|| {
            crate::Error::Data(format!(
                "assignment does not cover segment '{}'",
                seg.segment_id
            ))
        })?;
        let mut s = seg.clone();
        s.speaker_id = Some(label.clone());
        segs.push(s);
    }
    Corpus::new(corpus.dimension(), segs)
}

/// Cluster purity against reference labels: the fraction of segments
/// whose cluster's majority reference label matches their own.
pub fn purity(assignment: &ClusterAssignment, reference: &BTreeMap<String, String>) -> f64 {
    let clusters = assignment.clusters();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (_label, members) in clusters {
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for m in &members {
            if let Some(r) = reference.get(*m) {
                *votes.entry(r.as_str()).or_default() += 1;
            }
        }
        if let Some((_, top)) = votes.iter().max_by_key(|(_, &n)| n) {
            correct += top;
        }
        total += members.len();
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}
