//! Minimum-cost bipartite matching with forbidden entries.

/// Dense `rows × cols` cost matrix. Non-finite entries are forbidden.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub const FORBIDDEN: f64 = f64::INFINITY;

    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost matrix shape");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols.max(1), i % cols.max(1))).collect();
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn allowed(&self, r: usize, c: usize) -> bool {
        self.get(r, c).is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Matching {
    /// `(row, col)` pairs in increasing row order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    /// Sum of matched costs in row order.
    pub cost: f64,
}

/// Among matchings that use only allowed entries, returns one of maximum
/// cardinality and, among those, minimum total cost.
pub fn solve_assignment(costs: &CostMatrix) -> Matching {
    let (n, m) = (costs.rows, costs.cols);
    let k = n.max(m);
    if n == 0 || m == 0 {
        return Matching {
            pairs: Vec::new(),
            unmatched_rows: (0..n).collect(),
            unmatched_cols: (0..m).collect(),
            cost: 0.0,
        };
    }
    // Padding and forbidden cells cost more than every allowed cell
    // together, so fewer of them always wins.
    let finite_total: f64 = costs.data.iter().filter(|c| c.is_finite()).map(|c| c.abs()).sum();
    let big = 2.0 * finite_total + 1.0;
    let cell = |r: usize, c: usize| -> f64 {
        if r < n && c < m && costs.allowed(r, c) {
            costs.get(r, c)
        } else {
            big
        }
    };
    let col_of_row = hungarian(k, cell);

    let mut pairs = Vec::new();
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    for (r, &c) in col_of_row.iter().enumerate().take(n) {
        if c < m && costs.allowed(r, c) {
            pairs.push((r, c));
            row_used[r] = true;
            col_used[c] = true;
        }
    }
    let cost = pairs.iter().map(|&(r, c)| costs.get(r, c)).sum();
    Matching {
        pairs,
        unmatched_rows: (0..n).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..m).filter(|&c| !col_used[c]).collect(),
        cost,
    }
}

/// Square Hungarian method with potentials, O(k³). Returns the column of
/// every row.
fn hungarian(k: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut row_of_col = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; k];
    for j in 1..=k {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    col_of_row
}
