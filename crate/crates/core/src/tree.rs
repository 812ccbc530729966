//! Uniform linear octrees and their U and V interaction lists.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::OnceLock;

use crate::error::{FmmError, Result};
use crate::geometry::{BoundingCube, Point3};
use crate::morton::{encode, MortonKey, MAX_DEPTH};

/// All boxes of one level, in Morton order, with a key to dense index map.
#[derive(Clone, Debug)]
pub struct BoxLevel {
    level: u32,
    keys: Vec<MortonKey>,
    index: HashMap<MortonKey, usize>,
    occupancy: Vec<usize>,
}

impl BoxLevel {
    fn new(level: u32, keys: Vec<MortonKey>, occupancy: Vec<usize>) -> Self {
        debug_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(keys.len(), occupancy.len());
        let index = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        Self {
            level,
            keys,
            index,
            occupancy,
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn keys(&self) -> &[MortonKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn index_of(&self, key: &MortonKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Number of points inside the box at dense index `i`.
    pub fn occupancy(&self, i: usize) -> usize {
        self.occupancy[i]
    }

    /// A box exists when it holds at least one point.
    pub fn exists(&self, i: usize) -> bool {
        self.occupancy[i] > 0
    }
}

/// A complete set of levels `top..=bottom` where every box's children are present.
#[derive(Clone, Debug)]
pub struct BoxHierarchy {
    top: u32,
    levels: Vec<BoxLevel>,
}

impl BoxHierarchy {
    /// Build from the sorted bottom level by adding every ancestor up to `top`.
    pub fn from_bottom(bottom: Vec<MortonKey>, occupancy: Vec<usize>, top: u32) -> Result<Self> {
        let bottom_level = match bottom.first() {
            Some(k) => k.level(),
            None => top,
        };
        if bottom_level < top {
            return Err(FmmError::InvalidDepth(format!("bottom level {bottom_level} above top {top}")));
        }
        let mut levels = vec![BoxLevel::new(bottom_level, bottom, occupancy)];
        for level in (top..bottom_level).rev() {
            let below = levels.last().unwrap();
            let mut keys: Vec<MortonKey> = Vec::new();
            let mut counts: Vec<usize> = Vec::new();
            for (i, k) in below.keys.iter().enumerate() {
                let p = k.parent()?;
                if keys.last() != Some(&p) {
                    keys.push(p);
                    counts.push(0);
                }
                *counts.last_mut().unwrap() += below.occupancy[i];
            }
            levels.push(BoxLevel::new(level, keys, counts));
        }
        levels.reverse();
        Ok(Self { top, levels })
    }

    pub fn top(&self) -> u32 {
        self.top
    }

    pub fn bottom(&self) -> u32 {
        self.top + self.levels.len() as u32 - 1
    }

    pub fn level(&self, level: u32) -> Option<&BoxLevel> {
        level.checked_sub(self.top).and_then(|i| self.levels.get(i as usize))
    }

    pub fn levels(&self) -> &[BoxLevel] {
        &self.levels
    }

    pub fn contains(&self, key: &MortonKey) -> bool {
        self.level(key.level()).and_then(|l| l.index_of(key)).is_some()
    }

    /// `Some(true)` for an occupied local box, `Some(false)` for an empty one, `None` if not local.
    pub fn existence(&self, key: &MortonKey) -> Option<bool> {
        let level = self.level(key.level())?;
        level.index_of(key).map(|i| level.exists(i))
    }

    pub fn total_boxes(&self) -> usize {
        self.levels.iter().map(BoxLevel::len).sum()
    }
}

/// Per-rank uniform linear octree: every local root at `global_depth` is refined
/// `local_depth` more times.
#[derive(Clone, Debug)]
pub struct UniformTree {
    cube: BoundingCube,
    global_depth: u32,
    local_depth: u32,
    roots: Vec<MortonKey>,
    boxes: BoxHierarchy,
    leaf_ranges: Vec<Range<usize>>,
}

impl UniformTree {
    /// Build the local trees under `roots` from points sorted by their leaf-level key.
    pub fn new(
        points: &[Point3],
        cube: BoundingCube,
        global_depth: u32,
        local_depth: u32,
        roots: &[MortonKey],
    ) -> Result<Self> {
        if global_depth < 1 || local_depth < 1 {
            return Err(FmmError::InvalidDepth(format!(
                "global depth {global_depth} and local depth {local_depth} must both be at least 1"
            )));
        }
        Self::build(points, cube, global_depth, local_depth, roots)
    }

    /// One tree rooted at the whole cube, refined to `depth`.
    pub fn full(points: &[Point3], cube: BoundingCube, depth: u32) -> Result<Self> {
        Self::build(points, cube, 0, depth, &[MortonKey::ROOT])
    }

    fn build(
        points: &[Point3],
        cube: BoundingCube,
        global_depth: u32,
        local_depth: u32,
        roots: &[MortonKey],
    ) -> Result<Self> {
        let depth = global_depth + local_depth;
        if depth > MAX_DEPTH {
            return Err(FmmError::InvalidDepth(format!("total depth {depth} exceeds {MAX_DEPTH}")));
        }
        if roots.iter().any(|r| r.level() != global_depth) || roots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FmmError::InvalidDepth("local roots must be sorted and at the global depth".into()));
        }
        let mut leaves = Vec::with_capacity(roots.len() << (3 * local_depth));
        for r in roots {
            leaves.extend(r.descendants(depth)?);
        }
        let index: HashMap<MortonKey, usize> = leaves.iter().enumerate().map(|(i, &k)| (k, i)).collect();

        let mut occupancy = vec![0usize; leaves.len()];
        let mut leaf_ranges = vec![0..0; leaves.len()];
        let mut previous: Option<MortonKey> = None;
        let mut run_start = 0;
        for (i, p) in points.iter().enumerate() {
            let key = encode(p, depth, &cube)?;
            if let Some(prev) = previous {
                if key < prev {
                    return Err(FmmError::Unsorted(i));
                }
                if key != prev {
                    let leaf = index[&prev];
                    leaf_ranges[leaf] = run_start..i;
                    occupancy[leaf] = i - run_start;
                    run_start = i;
                }
            }
            if !index.contains_key(&key) {
                return Err(FmmError::PointOutsideRoots { index: i });
            }
            previous = Some(key);
        }
        if let Some(prev) = previous {
            let leaf = index[&prev];
            leaf_ranges[leaf] = run_start..points.len();
            occupancy[leaf] = points.len() - run_start;
        }
        // empty leaves get an empty range at the position they would occupy
        let mut cursor = 0;
        for r in leaf_ranges.iter_mut() {
            if r.start == r.end {
                *r = cursor..cursor;
            } else {
                cursor = r.end;
            }
        }

        let boxes = BoxHierarchy::from_bottom(leaves, occupancy, global_depth)?;
        Ok(Self {
            cube,
            global_depth,
            local_depth,
            roots: roots.to_vec(),
            boxes,
            leaf_ranges,
        })
    }

    pub fn cube(&self) -> &BoundingCube {
        &self.cube
    }

    pub fn global_depth(&self) -> u32 {
        self.global_depth
    }

    pub fn local_depth(&self) -> u32 {
        self.local_depth
    }

    pub fn depth(&self) -> u32 {
        self.global_depth + self.local_depth
    }

    pub fn roots(&self) -> &[MortonKey] {
        &self.roots
    }

    pub fn boxes(&self) -> &BoxHierarchy {
        &self.boxes
    }

    pub fn leaves(&self) -> &BoxLevel {
        self.boxes.level(self.depth()).expect("leaf level")
    }

    /// Range of sorted point indices inside the leaf at dense index `i`.
    pub fn leaf_range(&self, i: usize) -> Range<usize> {
        self.leaf_ranges[i].clone()
    }

    pub fn leaf_ranges(&self) -> &[Range<usize>] {
        &self.leaf_ranges
    }

    /// Near-field list of a leaf: its colleagues plus itself.
    pub fn u_list(&self, leaf: MortonKey) -> Result<Vec<MortonKey>> {
        if leaf.level() != self.depth() {
            return Err(FmmError::NotALeaf(leaf));
        }
        Ok(u_list(leaf))
    }

    /// Far-field list of a box, empty above level 2.
    pub fn v_list(&self, key: MortonKey) -> Vec<MortonKey> {
        v_list(key)
    }
}

/// Colleagues of `key` plus `key` itself, sorted.
pub fn u_list(key: MortonKey) -> Vec<MortonKey> {
    let mut out = key.neighbors();
    out.push(key);
    out.sort_unstable();
    out
}

/// Same-level boxes whose parents are colleagues of (or equal to) the parent of
/// `key`, excluding boxes adjacent to `key` and `key` itself. Sorted.
pub fn v_list(key: MortonKey) -> Vec<MortonKey> {
    if key.level() < 2 {
        return Vec::new();
    }
    let parent = key.parent().expect("level >= 2");
    let index = key.index().map(|i| i as i64);
    let mut out = Vec::with_capacity(189);
    let mut parents = parent.neighbors();
    parents.push(parent);
    for p in parents {
        for c in p.children().expect("level < MAX_DEPTH") {
            let ci = c.index();
            let far = (0..3).any(|a| (ci[a] as i64 - index[a]).abs() > 1);
            if far {
                out.push(c);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Lattice offset from `target` to `source`, in units of their common box side.
pub fn transfer_vector(source: MortonKey, target: MortonKey) -> Result<[i32; 3]> {
    if source.level() != target.level() {
        return Err(FmmError::LevelMismatch(source, target));
    }
    let (s, t) = (source.index(), target.index());
    Ok(std::array::from_fn(|a| s[a] as i32 - t[a] as i32))
}

/// Number of distinct transfer vectors that can occur in a V list.
pub const NTRANSFER_VECTORS: usize = 316;

fn transfer_table() -> &'static (Vec<[i32; 3]>, [i16; 343]) {
    static TABLE: OnceLock<(Vec<[i32; 3]>, [i16; 343])> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut vectors = Vec::with_capacity(NTRANSFER_VECTORS);
        let mut lookup = [-1i16; 343];
        for x in -3..=3 {
            for y in -3..=3 {
                for z in -3..=3 {
                    let t: [i32; 3] = [x, y, z];
                    if t.iter().any(|c| c.abs() > 1) {
                        lookup[slot(t)] = vectors.len() as i16;
                        vectors.push(t);
                    }
                }
            }
        }
        (vectors, lookup)
    })
}

#[inline(always)]
fn slot(t: [i32; 3]) -> usize {
    ((t[0] + 3) * 49 + (t[1] + 3) * 7 + (t[2] + 3)) as usize
}

/// The admissible V-list transfer vectors in lexicographic order.
pub fn v_transfer_vectors() -> &'static [[i32; 3]] {
    &transfer_table().0
}

/// Position of `t` in [`v_transfer_vectors`].
pub fn transfer_vector_index(t: [i32; 3]) -> Option<usize> {
    if t.iter().any(|c| c.abs() > 3) {
        return None;
    }
    let i = transfer_table().1[slot(t)];
    (i >= 0).then_some(i as usize)
}

/// Precomputed U lists (leaf level) and V lists (levels >= 2) for a hierarchy.
#[derive(Clone, Debug, Default)]
pub struct InteractionLists {
    top: u32,
    u: Vec<Vec<MortonKey>>,
    v: Vec<Vec<Vec<MortonKey>>>,
}

impl InteractionLists {
    /// U lists for the bottom level and V lists for every level in `top..=bottom`.
    pub fn new(boxes: &BoxHierarchy) -> Self {
        let bottom = boxes.level(boxes.bottom()).expect("bottom level");
        let u = bottom.keys().iter().map(|&k| u_list(k)).collect();
        let v = boxes
            .levels()
            .iter()
            .map(|l| l.keys().iter().map(|&k| v_list(k)).collect())
            .collect();
        Self { top: boxes.top(), u, v }
    }

    pub fn u_list(&self, leaf_index: usize) -> &[MortonKey] {
        &self.u[leaf_index]
    }

    pub fn v_list(&self, level: u32, index: usize) -> &[MortonKey] {
        &self.v[(level - self.top) as usize][index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn lattice_u(key: MortonKey) -> HashSet<[u32; 3]> {
        let n = 1i64 << key.level();
        let idx = key.index();
        let mut out = HashSet::new();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let c = [x, y, z];
                    if (0..3).all(|a| (c[a] - idx[a] as i64).abs() <= 1) {
                        out.insert(c.map(|v| v as u32));
                    }
                }
            }
        }
        out
    }

    /// Brute force over every box of the level.
    fn brute_v(key: MortonKey) -> HashSet<MortonKey> {
        let level = key.level();
        let p = key.parent().unwrap().index();
        let idx = key.index();
        MortonKey::ROOT
            .descendants(level)
            .unwrap()
            .into_iter()
            .filter(|a| {
                let ai = a.index();
                let ap = a.parent().unwrap().index();
                let parents_touch = (0..3).all(|d| (ap[d] as i64 - p[d] as i64).abs() <= 1);
                let adjacent = (0..3).all(|d| (ai[d] as i64 - idx[d] as i64).abs() <= 1);
                parents_touch && !adjacent
            })
            .collect()
    }

    #[test]
    fn u_list_counts() {
        let interior = MortonKey::from_index([3, 4, 2], 3).unwrap();
        let u = u_list(interior);
        assert_eq!(u.len(), 27);
        let expected = lattice_u(interior);
        assert_eq!(u.iter().map(|k| k.index()).collect::<HashSet<_>>(), expected);
        assert_eq!(u_list(MortonKey::from_index([0, 0, 0], 3).unwrap()).len(), 8);
        assert_eq!(u_list(MortonKey::from_index([1, 1, 1], 1).unwrap()).len(), 8);
    }

    #[test]
    fn v_list_counts() {
        let interior = MortonKey::from_index([3, 4, 2], 3).unwrap();
        assert_eq!(v_list(interior).len(), 189);
        assert_eq!(v_list(interior).into_iter().collect::<HashSet<_>>(), brute_v(interior));
        assert!(v_list(MortonKey::ROOT).is_empty());
        for c in MortonKey::ROOT.children().unwrap() {
            assert!(v_list(c).is_empty());
        }
        let corner = MortonKey::from_index([0, 0, 0], 2).unwrap();
        let v = v_list(corner);
        assert!(v.len() < 189);
        assert_eq!(v.into_iter().collect::<HashSet<_>>(), brute_v(corner));
    }

    #[test]
    fn v_list_matches_brute_force_everywhere_at_level_3() {
        for k in MortonKey::ROOT.descendants(3).unwrap() {
            assert_eq!(v_list(k).into_iter().collect::<HashSet<_>>(), brute_v(k));
        }
    }

    #[test]
    fn transfer_vectors() {
        let k = MortonKey::from_index([3, 4, 2], 3).unwrap();
        assert_eq!(transfer_vector(k, k).unwrap(), [0, 0, 0]);
        assert!(transfer_vector(k, k.parent().unwrap()).is_err());
        let tv: HashSet<[i32; 3]> = v_list(k).into_iter().map(|s| transfer_vector(s, k).unwrap()).collect();
        assert_eq!(tv.len(), 189);
        for t in &tv {
            assert!(t.iter().all(|c| c.abs() <= 3));
            assert!(t.iter().any(|c| c.abs() >= 2));
        }
        let mut all = HashSet::new();
        for level in 2..=4 {
            for k in MortonKey::ROOT.descendants(level).unwrap() {
                for s in v_list(k) {
                    all.insert(transfer_vector(s, k).unwrap());
                }
            }
        }
        assert_eq!(all.len(), NTRANSFER_VECTORS);
        assert_eq!(v_transfer_vectors().len(), NTRANSFER_VECTORS);
        for (i, t) in v_transfer_vectors().iter().enumerate() {
            assert_eq!(transfer_vector_index(*t), Some(i));
        }
        assert_eq!(transfer_vector_index([1, 0, -1]), None);
    }

    #[test]
    fn v_list_symmetric_and_disjoint_from_u() {
        for k in MortonKey::ROOT.descendants(3).unwrap() {
            let u: HashSet<_> = u_list(k).into_iter().collect();
            for a in v_list(k) {
                assert!(v_list(a).contains(&k));
                assert!(!u.contains(&a));
            }
        }
    }

    #[test]
    fn near_far_partition_covers_every_leaf_once() {
        let depth = 3;
        for leaf in MortonKey::ROOT.descendants(depth).unwrap() {
            let mut count: HashMap<MortonKey, usize> = HashMap::new();
            for a in u_list(leaf) {
                *count.entry(a).or_default() += 1;
            }
            for level in 2..=depth {
                let anc = leaf.ancestor(level).unwrap();
                for v in v_list(anc) {
                    for d in v.descendants(depth).unwrap() {
                        *count.entry(d).or_default() += 1;
                    }
                }
            }
            assert_eq!(count.len(), 512);
            assert!(count.values().all(|&c| c == 1));
        }
    }

    fn cell_centers(level: u32) -> Vec<Point3> {
        let n = 1u32 << level;
        let h = 1.0 / n as f64;
        let mut keyed: Vec<(MortonKey, Point3)> = Vec::new();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let p = Point3::new((x as f64 + 0.5) * h, (y as f64 + 0.5) * h, (z as f64 + 0.5) * h);
                    keyed.push((MortonKey::from_index([x, y, z], level).unwrap(), p));
                }
            }
        }
        keyed.sort_by_key(|(k, _)| *k);
        keyed.into_iter().map(|(_, p)| p).collect()
    }

    #[test]
    fn build_tree_examples() {
        let cube = BoundingCube::unit();
        let roots = MortonKey::ROOT.children().unwrap();
        let octants = cell_centers(1);
        assert!(UniformTree::new(&octants, cube, 1, 0, &roots).is_err());

        let points = cell_centers(2);
        let tree = UniformTree::new(&points, cube, 1, 1, &roots).unwrap();
        assert_eq!(tree.leaves().len(), 64);
        for i in 0..64 {
            assert_eq!(tree.leaf_range(i).len(), 1);
        }
        assert_eq!(tree.boxes().level(1).unwrap().len(), 8);

        let empty = UniformTree::new(&[], cube, 1, 2, &roots[..1]).unwrap();
        assert_eq!(empty.leaves().len(), 64);
        assert!(empty.leaf_ranges().iter().all(|r| r.is_empty()));
    }

    #[test]
    fn build_tree_errors() {
        let cube = BoundingCube::unit();
        let roots = MortonKey::ROOT.children().unwrap();
        let mut points = cell_centers(2);
        points.swap(0, 63);
        assert!(matches!(UniformTree::new(&points, cube, 1, 1, &roots), Err(FmmError::Unsorted(_))));
        assert!(UniformTree::new(&[], cube, 10, 7, &[]).is_err());
        let points = cell_centers(2);
        assert!(matches!(
            UniformTree::new(&points, cube, 1, 1, &roots[..1]),
            Err(FmmError::PointOutsideRoots { .. })
        ));
    }

    #[test]
    fn u_list_requires_leaf() {
        let cube = BoundingCube::unit();
        let tree = UniformTree::new(&[], cube, 1, 1, &MortonKey::ROOT.children().unwrap()).unwrap();
        assert!(tree.u_list(MortonKey::ROOT.children().unwrap()[0]).is_err());
    }

    #[test]
    fn ancestors_present_and_counts_aggregate() {
        let cube = BoundingCube::unit();
        let points = cell_centers(3);
        let tree = UniformTree::full(&points, cube, 3).unwrap();
        let boxes = tree.boxes();
        for level in 1..=3 {
            for k in boxes.level(level).unwrap().keys() {
                assert!(boxes.contains(&k.parent().unwrap()));
            }
        }
        assert_eq!(boxes.level(0).unwrap().occupancy(0), 512);
        assert_eq!(boxes.total_boxes(), 1 + 8 + 64 + 512);
    }
}
