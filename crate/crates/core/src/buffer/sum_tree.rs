/// Binary sum tree over a fixed number of leaves.
///
/// Internal nodes are always recomputed as `left + right` from their
/// children, never adjusted by deltas, so an audit holds exactly.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    /// Heap layout: node 1 is the root, leaf `i` sits at `leaves + i`.
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        SumTree {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn capacity(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.leaves + leaf]
    }

    pub fn set(&mut self, leaf: usize, value: f64) {
        let mut i = self.leaves + leaf;
        self.nodes[i] = value;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass`, for `mass` in
    /// `[0, total)`. Zero-weight leaves are never returned.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.nodes[2 * i];
            let right = self.nodes[2 * i + 1];
            if mass < left || right <= 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        // Rounding can land on an empty leaf at an interval edge; step back to
        // the nearest weighted one.
        let mut leaf = i - self.leaves;
        while self.get(leaf) <= 0.0 && leaf > 0 {
            leaf -= 1;
        }
        leaf
    }

    /// Every internal node equals the sum of its two children.
    pub fn audit(&self) -> bool {
        (1..self.leaves).all(|i| self.nodes[i] == self.nodes[2 * i] + self.nodes[2 * i + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_tracks_leaves() {
        let mut t = SumTree::new(5);
        assert_eq!(t.capacity(), 8);
        for (i, p) in [1.0, 2.0, 3.0, 4.0, 5.0].into_iter().enumerate() {
            t.set(i, p);
        }
        assert_eq!(t.total(), 15.0);
        t.set(2, 0.5);
        assert_eq!(t.total(), 12.5);
        assert!(t.audit());
    }

    #[test]
    fn find_intervals() {
        let mut t = SumTree::new(4);
        t.set(0, 1.0);
        t.set(1, 0.0);
        t.set(2, 3.0);
        assert_eq!(t.find(0.0), 0);
        assert_eq!(t.find(0.999), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(3.999), 2);
    }
}
