use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::linalg::SquareMatrix;
use super::AnalysisError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

/// Node `n + i` of a dendrogram over `n` leaves is merge `i`; nodes below
/// `n` are leaves. `left` is the child holding the smaller leaf index.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

/// Agglomerative clustering of a distance matrix. Among equally close
/// cluster pairs the one with the lexicographically smallest pair of
/// minimum leaf indices merges first.
pub fn hierarchical_cluster(d: &SquareMatrix, linkage: Linkage, labels: Vec<String>) -> Result<Dendrogram, AnalysisError> {
    let n = d.len();
    if labels.len() != n {
        return Err(AnalysisError::LengthMismatch { left: n, right: labels.len() });
    }
    let asym = d.asymmetry();
    if asym > 1e-9 {
        return Err(AnalysisError::Asymmetric(asym));
    }
    if d.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(AnalysisError::NegativeAffinity);
    }
    // Slot i holds the active cluster whose smallest leaf is i.
    let mut dist = d.clone();
    let mut active = vec![true; n];
    let mut node = (0..n).collect::<Vec<usize>>();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && best.is_none_or(|b| dist.get(i, j) < b.0) {
                    best = Some((dist.get(i, j), i, j));
                }
            }
        }
        let (h, i, j) = best.unwrap_or_else(|| unreachable!());
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let (dik, djk) = (dist.get(i, k), dist.get(j, k));
            let v = match linkage {
                Linkage::Single => dik.min(djk),
                Linkage::Complete => dik.max(djk),
                Linkage::Average => (size[i] as f64 * dik + size[j] as f64 * djk) / (size[i] + size[j]) as f64,
            };
            dist.set(i, k, v);
            dist.set(k, i, v);
        }
        merges.push(Merge {
            left: node[i],
            right: node[j],
            height: h,
            size: size[i] + size[j],
        });
        active[j] = false;
        size[i] += size[j];
        node[i] = n + step;
    }
    Ok(Dendrogram { labels, merges })
}

impl Dendrogram {
    pub fn leaves(&self) -> usize {
        self.labels.len()
    }

    pub fn root(&self) -> Option<usize> {
        match self.leaves() {
            0 => None,
            n => Some(n - 1 + self.merges.len()),
        }
    }

    pub fn height(&self, node: usize) -> f64 {
        if node < self.leaves() {
            0.0
        } else {
            self.merges[node - self.leaves()].height
        }
    }

    /// Leaves under `node`, ascending.
    pub fn members(&self, node: usize) -> Vec<usize> {
        let n = self.leaves();
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let m = &self.merges[x - n];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
        out.sort_unstable();
        out
    }

    /// Leaf sets of the root's two children.
    pub fn root_split(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        let m = self.merges.last()?;
        Some((self.members(m.left), self.members(m.right)))
    }

    pub fn heights_monotone(&self) -> bool {
        self.merges.windows(2).all(|w| w[0].height <= w[1].height)
    }

    /// Height of the first merge joining leaves `a` and `b`.
    pub fn cophenetic(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let n = self.leaves();
        let mut owner: Vec<usize> = (0..n).collect();
        for (i, m) in self.merges.iter().enumerate() {
            let (l, r) = (m.left, m.right);
            for o in owner.iter_mut() {
                if *o == l || *o == r {
                    *o = n + i;
                }
            }
            if owner[a] == owner[b] {
                return m.height;
            }
        }
        f64::INFINITY
    }

    /// Flat partition into `k` clusters by undoing the last `k - 1` merges;
    /// clusters are numbered by their smallest leaf.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>, AnalysisError> {
        let n = self.leaves();
        if k == 0 || k > n {
            return Err(AnalysisError::BadClusterCount { k, n });
        }
        let mut owner: Vec<usize> = (0..n).collect();
        for (i, m) in self.merges.iter().take(n - k).enumerate() {
            for o in owner.iter_mut() {
                if *o == m.left || *o == m.right {
                    *o = n + i;
                }
            }
        }
        let mut ids = BTreeMap::new();
        Ok(owner
            .iter()
            .map(|o| {
                let next = ids.len();
                *ids.entry(*o).or_insert(next)
            })
            .collect())
    }

    /// Newick text; branch length is the parent's merge height minus the child's.
    pub fn newick(&self) -> String {
        let mut out = String::new();
        if let Some(root) = self.root() {
            self.write_node(&mut out, root);
        }
        out.push(';');
        out
    }

    fn write_node(&self, out: &mut String, node: usize) {
        let n = self.leaves();
        if node < n {
            out.push_str(&newick_label(&self.labels[node]));
            return;
        }
        let m = &self.merges[node - n];
        out.push('(');
        for (i, child) in [m.left, m.right].into_iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            self.write_node(out, child);
            let _ = write!(out, ":{:.6}", m.height - self.height(child));
        }
        out.push(')');
    }
}

fn newick_label(s: &str) -> String {
    if s.chars().any(|c| " ()[]':;,".contains(c)) || s.is_empty() {
        let mut q = String::from("'");
        q.push_str(&s.replace('\'', "''"));
        q.push('\'');
        q
    } else {
        String::from(s)
    }
}

fn comb2(x: u64) -> f64 {
    (x as f64) * (x.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index of two labelings; 1 when both are identical up to
/// renaming, about 0 for independent ones.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch { left: a.len(), right: b.len() });
    }
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let ra: f64 = rows.values().map(|&c| comb2(c)).sum();
    let rb: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = ra * rb / total;
    let max = 0.5 * (ra + rb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
