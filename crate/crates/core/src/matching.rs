//! Fast group matching: overlapped gray-level clustering, entropy
//! sub-clustering, lexicographic grouping and in-group G2NN.
//!
//! Each stage only narrows the set of keypoints that get compared against
//! each other; disabling all of them turns the pipeline into brute-force
//! G2NN over every keypoint.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{EntropyMap, GrayImage};
use crate::keypoints::{Descriptor, KeypointSet, DESCRIPTOR_LEN};

/// Upper end of the entropy axis used by the sub-clustering.
pub const ENTROPY_MAX: f64 = 7.0;

/// Gray-level and entropy clustering steps.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClusterParams {
    /// Width of a gray-level cluster.
    pub step1: f64,
    /// Overlap between consecutive gray-level clusters.
    pub step2: f64,
    /// Width of an entropy sub-cluster (bits).
    pub step3: f64,
    /// Overlap added on both sides of an entropy sub-cluster.
    pub step4: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            step1: 40.0,
            step2: 10.0,
            step3: 1.0,
            step4: 0.0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step1 > self.step2 && self.step2 >= 0.0) {
            return Err(Error::InvalidParameter("need step1 > step2 >= 0".into()));
        }
        if !(self.step3 > self.step4 && self.step4 >= 0.0) {
            return Err(Error::InvalidParameter("need step3 > step4 >= 0".into()));
        }
        Ok(())
    }

    /// Closed gray ranges of all clusters, including the appended top one
    /// when the regular ranges stop short of 255.
    pub fn gray_ranges(&self) -> Vec<(f64, f64)> {
        let stride = self.step1 - self.step2;
        let n = ((255.0 - self.step1) / stride).ceil().max(1.0) as usize;
        let mut out: Vec<(f64, f64)> = (0..n)
            .map(|u| {
                let lo = u as f64 * stride;
                (lo, (lo + self.step1).min(255.0))
            })
            .collect();
        if out.last().map_or(true, |r| r.1 < 255.0) {
            out.push(((255.0 - self.step1).max(0.0), 255.0));
        }
        out
    }

    /// Closed entropy ranges of the sub-clusters.
    pub fn entropy_ranges(&self) -> Vec<(f64, f64)> {
        let n = ((ENTROPY_MAX - self.step4) / self.step3).ceil().max(1.0) as usize;
        (1..=n)
            .map(|v| {
                let v = v as f64;
                (
                    ((v - 1.0) * self.step3 - self.step4).max(0.0),
                    (v * self.step3 + self.step4).min(ENTROPY_MAX),
                )
            })
            .collect()
    }
}

/// Lexicographic grouping window.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroupParams {
    /// Features per group.
    pub step5: usize,
    /// Overlap factor; group `w` starts `(beta - 1) * step5` positions
    /// before the end of group `w - 1`.
    pub beta: f64,
}

impl Default for GroupParams {
    fn default() -> Self {
        Self {
            step5: 500,
            beta: 1.1,
        }
    }
}

impl GroupParams {
    pub fn validate(&self) -> Result<()> {
        if self.step5 < 1 {
            return Err(Error::InvalidParameter("step5 must be >= 1".into()));
        }
        if !(1.0..=2.0).contains(&self.beta) {
            return Err(Error::InvalidParameter("beta must be in [1, 2]".into()));
        }
        Ok(())
    }

    /// 1-based inclusive position windows for a cluster of `n` sorted
    /// members.
    pub fn windows(&self, n: usize) -> Vec<(usize, usize)> {
        if n == 0 {
            return Vec::new();
        }
        let count = n.div_ceil(self.step5);
        (1..=count)
            .map(|w| {
                let start = ((w as f64 - self.beta) * self.step5 as f64).round().max(1.0) as usize;
                (start, (w * self.step5).min(n))
            })
            .collect()
    }
}

/// Keypoint indices compared against each other by G2NN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeypointGroup {
    pub member_indices: Vec<usize>,
}

/// A match between two keypoints, stored in canonical order: the left
/// keypoint precedes the right one in `(y, x)` order (ties by index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct DirectedMatch {
    pub left: usize,
    pub right: usize,
}

impl DirectedMatch {
    /// Orders `a` and `b` canonically. Panics if `a == b`.
    pub fn canonical(a: usize, b: usize, kps: &KeypointSet) -> Self {
        assert_ne!(a, b, "a keypoint cannot match itself");
        let ka = &kps.keypoints[a];
        let kb = &kps.keypoints[b];
        let key_a = (ka.y, ka.x, a);
        let key_b = (kb.y, kb.x, b);
        if key_a.partial_cmp(&key_b) == Some(std::cmp::Ordering::Greater) {
            Self { left: b, right: a }
        } else {
            Self { left: a, right: b }
        }
    }
}

/// Deduplicated canonical matches sorted by `(left, right)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchSet {
    pub matches: Vec<DirectedMatch>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// Writes `left_x,left_y,right_x,right_y` rows with a header line.
    pub fn write_csv(&self, kps: &KeypointSet, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        writeln!(w, "left_x,left_y,right_x,right_y").map_err(io_err)?;
        for m in &self.matches {
            let (l, r) = (&kps.keypoints[m.left], &kps.keypoints[m.right]);
            writeln!(w, "{},{},{},{}", l.x, l.y, r.x, r.y).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}

/// Which narrowing stages run. All disabled is brute-force G2NN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MatchStages {
    pub gray: bool,
    pub entropy: bool,
    pub lexicographic: bool,
}

impl Default for MatchStages {
    fn default() -> Self {
        Self {
            gray: true,
            entropy: true,
            lexicographic: true,
        }
    }
}

impl MatchStages {
    pub const BRUTE_FORCE: MatchStages = MatchStages {
        gray: false,
        entropy: false,
        lexicographic: false,
    };
}

/// G2NN settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct G2nnParams {
    /// Ratio threshold, in `(0, 1)`.
    pub t_match: f64,
    /// Candidates closer than this (pixels) to the query are skipped.
    pub min_spatial: f64,
}

impl Default for G2nnParams {
    fn default() -> Self {
        Self {
            t_match: 0.5,
            min_spatial: 10.0,
        }
    }
}

impl G2nnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_match > 0.0 && self.t_match < 1.0) {
            return Err(Error::InvalidParameter("t_match must be in (0, 1)".into()));
        }
        if !(self.min_spatial >= 0.0) {
            return Err(Error::InvalidParameter("min_spatial must be >= 0".into()));
        }
        Ok(())
    }
}

/// Work counters of one matching run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct MatchStats {
    pub clusters: usize,
    pub groups: usize,
    /// Unordered descriptor pairs evaluated, `sum n_g (n_g - 1) / 2`.
    pub comparisons: u64,
    /// Matches before deduplication.
    pub raw_matches: usize,
}

/// Gray-level clusters over all keypoints, by the gray value at each
/// keypoint's rounded position.
pub fn gray_clusters(kps: &KeypointSet, gray: &GrayImage, p: &ClusterParams) -> Vec<Vec<usize>> {
    let values: Vec<f64> = kps
        .keypoints
        .iter()
        .map(|k| gray.at_rounded(k.x, k.y) as f64)
        .collect();
    p.gray_ranges()
        .iter()
        .map(|&(lo, hi)| (0..values.len()).filter(|&i| values[i] >= lo && values[i] <= hi).collect())
        .collect()
}

/// Splits one cluster by the entropy at each keypoint's rounded position.
pub fn entropy_clusters(cluster: &[usize], kps: &KeypointSet, emap: &EntropyMap, p: &ClusterParams) -> Vec<Vec<usize>> {
    let values: Vec<f64> = cluster
        .iter()
        .map(|&i| {
            let k = &kps.keypoints[i];
            emap.at_rounded(k.x, k.y) as f64
        })
        .collect();
    p.entropy_ranges()
        .iter()
        .map(|&(lo, hi)| {
            cluster
                .iter()
                .zip(&values)
                .filter(|(_, &e)| e >= lo && e <= hi)
                .map(|(&i, _)| i)
                .collect()
        })
        .collect()
}

/// Descriptor rounded to 3 decimals, used as the lexicographic sort key.
pub fn quantize(d: &Descriptor) -> [u16; DESCRIPTOR_LEN] {
    let mut q = [0u16; DESCRIPTOR_LEN];
    for (o, &v) in q.iter_mut().zip(d.as_slice()) {
        *o = (v as f64 * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16;
    }
    q
}

/// Sorts a cluster lexicographically by quantized descriptor and cuts it
/// into overlapping windows.
pub fn lexicographic_groups(cluster: &[usize], descs: &[Descriptor], p: &GroupParams) -> Vec<KeypointGroup> {
    let keys: Vec<_> = cluster.iter().map(|&i| quantize(&descs[i])).collect();
    lexicographic_groups_keyed(cluster, &keys, p)
}

fn lexicographic_groups_keyed(cluster: &[usize], keys: &[[u16; DESCRIPTOR_LEN]], p: &GroupParams) -> Vec<KeypointGroup> {
    let mut order: Vec<usize> = (0..cluster.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(cluster[a].cmp(&cluster[b])));
    let sorted: Vec<usize> = order.iter().map(|&o| cluster[o]).collect();
    p.windows(sorted.len())
        .into_iter()
        .map(|(s, e)| KeypointGroup {
            member_indices: sorted[s - 1..e].to_vec(),
        })
        .collect()
}

/// Number of neighbours accepted by the generalized 2NN test on ascending
/// distances: stops at the first `d_j / d_(j+1) >= t`. A `0 / 0` ratio
/// passes. The last distance is never accepted, since it has no successor.
pub fn g2nn_accept_count(sorted: &[f64], t: f64) -> usize {
    let mut j = 0;
    while j + 1 < sorted.len() {
        let (a, b) = (sorted[j], sorted[j + 1]);
        let pass = if b == 0.0 { true } else { a / b < t };
        if !pass {
            break;
        }
        j += 1;
    }
    j
}

const DENSE_GROUP_LIMIT: usize = 2048;
const PARTIAL_PREFIX: usize = 8;

/// G2NN inside one group. Returns canonical matches (possibly with
/// duplicates, which [`assemble_matches`] removes).
pub fn g2nn_match(group: &KeypointGroup, kps: &KeypointSet, p: &G2nnParams) -> Vec<DirectedMatch> {
    let m = &group.member_indices;
    let n = m.len();
    if n < 2 {
        return Vec::new();
    }
    let descs = &kps.descriptors;
    let dense = n <= DENSE_GROUP_LIMIT;
    let mut table = Vec::new();
    if dense {
        table = vec![0f32; n * n];
        for a in 0..n {
            for b in a + 1..n {
                let d = descs[m[a]].distance_sq(&descs[m[b]]);
                table[a * n + b] = d;
                table[b * n + a] = d;
            }
        }
    }
    let min_sp2 = p.min_spatial * p.min_spatial;
    let mut out = Vec::new();
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut dists: Vec<f64> = Vec::with_capacity(n);
    for a in 0..n {
        let ka = &kps.keypoints[m[a]];
        cand.clear();
        for b in 0..n {
            if b == a {
                continue;
            }
            let kb = &kps.keypoints[m[b]];
            let sp = (ka.x - kb.x).powi(2) + (ka.y - kb.y).powi(2);
            if sp < min_sp2 || m[b] == m[a] {
                continue;
            }
            let d2 = if dense {
                table[a * n + b]
            } else {
                descs[m[a]].distance_sq(&descs[m[b]])
            };
            cand.push(((d2.max(0.0) as f64).sqrt(), b));
        }
        let order = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(m[x.1].cmp(&m[y.1]));
        // the ratio test usually stops within the first few neighbours, so
        // only a short prefix is ordered unless all of it passes
        let mut prefix = PARTIAL_PREFIX.min(cand.len());
        loop {
            if prefix < cand.len() {
                cand.select_nth_unstable_by(prefix, order);
            }
            cand[..prefix].sort_by(order);
            dists.clear();
            dists.extend(cand[..prefix].iter().map(|c| c.0));
            if prefix < cand.len() {
                // the next distance decides whether the last prefix entry passes
                dists.push(cand[prefix].0);
            }
            let k = g2nn_accept_count(&dists, p.t_match);
            if k < prefix || prefix == cand.len() {
                for &(_, b) in &cand[..k] {
                    out.push(DirectedMatch::canonical(m[a], m[b], kps));
                }
                break;
            }
            prefix = (prefix * 4).min(cand.len());
        }
    }
    out
}

/// Union of per-group matches, deduplicated and sorted.
pub fn assemble_matches(lists: impl IntoIterator<Item = Vec<DirectedMatch>>) -> MatchSet {
    let set: BTreeSet<DirectedMatch> = lists.into_iter().flatten().collect();
    MatchSet {
        matches: set.into_iter().collect(),
    }
}

/// Groups that G2NN runs on for the given stage selection.
pub fn build_groups(
    kps: &KeypointSet,
    gray: &GrayImage,
    emap: &EntropyMap,
    cp: &ClusterParams,
    gp: &GroupParams,
    stages: MatchStages,
) -> (Vec<KeypointGroup>, usize) {
    let all: Vec<usize> = (0..kps.len()).collect();
    let gray_level = if stages.gray {
        gray_clusters(kps, gray, cp)
    } else {
        vec![all]
    };
    let clusters: Vec<Vec<usize>> = if stages.entropy {
        gray_level
            .iter()
            .flat_map(|c| entropy_clusters(c, kps, emap, cp))
            .collect()
    } else {
        gray_level
    };
    let clusters: Vec<Vec<usize>> = clusters.into_iter().filter(|c| !c.is_empty()).collect();
    let n_clusters = clusters.len();
    let groups = if stages.lexicographic {
        let keys: Vec<_> = kps.descriptors.iter().map(quantize).collect();
        clusters
            .iter()
            .flat_map(|c| {
                let ck: Vec<_> = c.iter().map(|&i| keys[i]).collect();
                lexicographic_groups_keyed(c, &ck, gp)
            })
            .collect()
    } else {
        clusters
            .into_iter()
            .map(|member_indices| KeypointGroup { member_indices })
            .collect()
    };
    (groups, n_clusters)
}

/// Full matching: clusters, groups, G2NN and deduplication.
#[allow(clippy::too_many_arguments)]
pub fn match_pipeline(
    kps: &KeypointSet,
    gray: &GrayImage,
    emap: &EntropyMap,
    cp: &ClusterParams,
    gp: &GroupParams,
    g2nn: &G2nnParams,
    stages: MatchStages,
) -> Result<(MatchSet, MatchStats)> {
    cp.validate()?;
    gp.validate()?;
    g2nn.validate()?;
    if (gray.width, gray.height) != (emap.width, emap.height) {
        return Err(Error::Shape("gray image and entropy map sizes differ".into()));
    }
    let (groups, clusters) = build_groups(kps, gray, emap, cp, gp, stages);
    let mut stats = MatchStats {
        clusters,
        groups: groups.len(),
        ..MatchStats::default()
    };
    let mut lists = Vec::with_capacity(groups.len());
    for g in &groups {
        let n = g.member_indices.len() as u64;
        stats.comparisons += n * n.saturating_sub(1) / 2;
        let found = g2nn_match(g, kps, g2nn);
        stats.raw_matches += found.len();
        lists.push(found);
    }
    Ok((assemble_matches(lists), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::Keypoint;

    fn kp(x: f64, y: f64) -> Keypoint {
        Keypoint {
            x,
            y,
            sigma: 2.0,
            theta: 0.0,
        }
    }

    fn unit_desc(axis: usize, tilt: f32) -> Descriptor {
        let mut d = [0f32; DESCRIPTOR_LEN];
        d[axis] = 1.0;
        d[(axis + 1) % DESCRIPTOR_LEN] = tilt;
        let n = (1.0 + tilt * tilt).sqrt();
        d.iter_mut().for_each(|v| *v /= n);
        Descriptor(d)
    }

    #[test]
    fn default_gray_ranges() {
        let r = ClusterParams::default().gray_ranges();
        assert_eq!(r.len(), 9);
        assert_eq!(r[0], (0.0, 40.0));
        assert_eq!(r[1], (30.0, 70.0));
        assert_eq!(r[7], (210.0, 250.0));
        assert_eq!(r[8], (215.0, 255.0));
    }

    #[test]
    fn default_entropy_ranges() {
        let r = ClusterParams::default().entropy_ranges();
        assert_eq!(r.len(), 7);
        for (v, &(lo, hi)) in r.iter().enumerate() {
            assert_eq!((lo, hi), (v as f64, v as f64 + 1.0));
        }
        let p = ClusterParams {
            step4: 0.5,
            ..ClusterParams::default()
        };
        let r = p.entropy_ranges();
        assert_eq!(r.len(), 7);
        assert_eq!(r[0], (0.0, 1.5));
        assert_eq!(r[1], (0.5, 2.5));
        assert_eq!(r[6], (5.5, 7.0));
    }

    #[test]
    fn gray_membership_examples() {
        let gray = GrayImage::from_fn(3, 1, |x, _| [35u8, 255, 100][x as usize]);
        let kps = KeypointSet {
            keypoints: vec![kp(0.0, 0.0), kp(1.0, 0.0), kp(2.2, 0.1)],
            descriptors: vec![unit_desc(0, 0.0); 3],
        };
        let c = gray_clusters(&kps, &gray, &ClusterParams::default());
        let member_of = |i: usize| -> Vec<usize> { (0..c.len()).filter(|&u| c[u].contains(&i)).collect() };
        assert_eq!(member_of(0), vec![0, 1]);
        assert_eq!(member_of(1), vec![8]);
        assert_eq!(member_of(2), vec![2, 3]);
    }

    #[test]
    fn entropy_boundary_is_shared() {
        let emap = EntropyMap {
            width: 2,
            height: 1,
            data: vec![1.0, 6.3],
        };
        let kps = KeypointSet {
            keypoints: vec![kp(0.0, 0.0), kp(1.0, 0.0)],
            descriptors: vec![unit_desc(0, 0.0); 2],
        };
        let sub = entropy_clusters(&[0, 1], &kps, &emap, &ClusterParams::default());
        assert_eq!(sub[0], vec![0]);
        assert_eq!(sub[1], vec![0]);
        assert_eq!(sub[6], vec![1]);
    }

    #[test]
    fn group_windows() {
        let p = GroupParams::default();
        assert_eq!(p.windows(1200), vec![(1, 500), (450, 1000), (950, 1200)]);
        assert_eq!(p.windows(10), vec![(1, 10)]);
        assert!(p.windows(0).is_empty());
        // with beta = 1 neighbouring windows only share their boundary position
        let tight = GroupParams { step5: 500, beta: 1.0 };
        assert_eq!(tight.windows(1200), vec![(1, 500), (500, 1000), (1000, 1200)]);
    }

    #[test]
    fn lexicographic_order_and_cover() {
        let descs = vec![unit_desc(5, 0.0), unit_desc(1, 0.0), unit_desc(9, 0.0), unit_desc(1, 0.3)];
        let groups = lexicographic_groups(&[0, 1, 2, 3], &descs, &GroupParams { step5: 2, beta: 1.0 });
        // larger first component sorts later; axis 9 has zeros in 0..9 so it sorts first
        assert_eq!(groups[0].member_indices, vec![2, 0]);
        assert_eq!(groups[1].member_indices, vec![0, 3, 1]);
    }

    #[test]
    fn g2nn_ratio_examples() {
        assert_eq!(g2nn_accept_count(&[1.0, 10.0, 11.0], 0.5), 1);
        assert_eq!(g2nn_accept_count(&[5.0, 6.0], 0.5), 0);
        assert_eq!(g2nn_accept_count(&[0.0, 0.0, 0.0, 4.0], 0.5), 3);
        assert_eq!(g2nn_accept_count(&[], 0.5), 0);
        assert_eq!(g2nn_accept_count(&[0.0], 0.5), 0);
    }

    #[test]
    fn g2nn_group_of_one() {
        let kps = KeypointSet {
            keypoints: vec![kp(0.0, 0.0)],
            descriptors: vec![unit_desc(0, 0.0)],
        };
        let g = KeypointGroup { member_indices: vec![0] };
        assert!(g2nn_match(&g, &kps, &G2nnParams::default()).is_empty());
    }

    fn pair_fixture() -> KeypointSet {
        // 0 and 2 are twins far apart; 1 sits next to 0 with the same descriptor
        KeypointSet {
            keypoints: vec![kp(50.0, 50.0), kp(53.0, 50.0), kp(200.0, 20.0), kp(10.0, 300.0)],
            descriptors: vec![unit_desc(0, 0.0), unit_desc(0, 0.0), unit_desc(0, 0.01), unit_desc(40, 0.0)],
        }
    }

    #[test]
    fn g2nn_spatial_exclusion_and_canonical_order() {
        let kps = pair_fixture();
        let g = KeypointGroup {
            member_indices: vec![0, 1, 2, 3],
        };
        let m = assemble_matches([g2nn_match(&g, &kps, &G2nnParams::default())]);
        // 2 is above 0 and 1, so it is the left end of both matches
        assert_eq!(
            m.matches,
            vec![DirectedMatch { left: 2, right: 0 }, DirectedMatch { left: 2, right: 1 }]
        );
        let none = G2nnParams {
            min_spatial: 0.0,
            ..G2nnParams::default()
        };
        let m0 = assemble_matches([g2nn_match(&g, &kps, &none)]);
        assert!(m0.matches.contains(&DirectedMatch { left: 0, right: 1 }));
    }

    #[test]
    fn assemble_dedupes_and_canonicalizes() {
        let kps = pair_fixture();
        let a = DirectedMatch::canonical(0, 2, &kps);
        let b = DirectedMatch::canonical(2, 0, &kps);
        assert_eq!(a, b);
        let m = assemble_matches([vec![a], vec![b, a]]);
        assert_eq!(m.len(), 1);
        assert!(assemble_matches(Vec::<Vec<DirectedMatch>>::new()).is_empty());
    }

    #[test]
    fn params_validation() {
        assert!(ClusterParams { step2: 40.0, ..Default::default() }.validate().is_err());
        assert!(GroupParams { beta: 2.5, ..Default::default() }.validate().is_err());
        assert!(G2nnParams { t_match: 1.0, ..Default::default() }.validate().is_err());
        assert!(ClusterParams::default().validate().is_ok());
    }

    #[test]
    fn empty_keypoints_give_empty_matches() {
        let gray = GrayImage::filled(8, 8, 255);
        let emap = EntropyMap {
            width: 8,
            height: 8,
            data: vec![0.0; 64],
        };
        let (m, stats) = match_pipeline(
            &KeypointSet::default(),
            &gray,
            &emap,
            &ClusterParams::default(),
            &GroupParams::default(),
            &G2nnParams::default(),
            MatchStages::default(),
        )
        .unwrap();
        assert!(m.is_empty());
        assert_eq!(stats.comparisons, 0);
    }
}
