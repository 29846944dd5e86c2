//! Disjoint-set forest with path compression and union by rank.

#[derive(Clone, Debug)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != node {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; returns the surviving root.
    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let mut a = self.find(a);
        let mut b = self.find(b);
        if a == b {
            return a;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] = self.rank[a].saturating_add(1);
        }
        a
    }

    /// Dense labels `0..count` ordered by each set's smallest element.
    pub fn labels(&mut self) -> (Vec<usize>, usize) {
        let n = self.len();
        let mut root_label = vec![usize::MAX; n];
        let mut labels = vec![0; n];
        let mut count = 0;
        for i in 0..n {
            let r = self.find(i);
            if root_label[r] == usize::MAX {
                root_label[r] = count;
                count += 1;
            }
            labels[i] = root_label[r];
        }
        (labels, count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic() {
        let mut ds = DisjointSet::new(6);
        ds.union(0, 3);
        ds.union(4, 3);
        ds.union(1, 5);
        assert_eq!(ds.find(0), ds.find(4));
        assert_ne!(ds.find(0), ds.find(1));
        let (labels, count) = ds.labels();
        assert_eq!(count, 3);
        assert_eq!(labels, vec![0, 1, 2, 0, 0, 1]);
    }
}
