/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Sets with members ascending, ordered by smallest member.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut slot = vec![usize::MAX; n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for x in 0..n {
            let r = self.find(x);
            if slot[r] == usize::MAX {
                slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[r]].push(x);
        }
        groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_are_ordered_by_smallest_member() {
        let mut d = DisjointSet::new(5);
        d.union(4, 1);
        d.union(3, 0);
        assert!(!d.union(1, 4));
        assert_eq!(d.groups(), vec![vec![0, 3], vec![1, 4], vec![2]]);
    }

    proptest::proptest! {
        #[test]
        fn groups_match_transitive_closure(n in 1usize..40, edges in proptest::collection::vec((0usize..40, 0usize..40), 0..60)) {
            let edges: Vec<(usize, usize)> = edges.into_iter().map(|(a, b)| (a % n, b % n)).collect();
            let mut reach = vec![vec![false; n]; n];
            for (i, row) in reach.iter_mut().enumerate() {
                row[i] = true;
            }
            for &(a, b) in &edges {
                reach[a][b] = true;
                reach[b][a] = true;
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        if reach[i][k] && reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
            let mut d = DisjointSet::new(n);
            for &(a, b) in &edges {
                d.union(a, b);
            }
            let groups = d.groups();
            proptest::prop_assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), n);
            for g in &groups {
                proptest::prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
                for &i in g {
                    for j in 0..n {
                        proptest::prop_assert_eq!(reach[i][j], g.contains(&j));
                    }
                }
            }
            proptest::prop_assert!(groups.windows(2).all(|w| w[0][0] < w[1][0]));
        }
    }
}
