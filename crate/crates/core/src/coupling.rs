//! Endpoint pairings between the two pools.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::EndpointDataset;
use crate::error::{Error, Result};
use crate::gfm::{integrate_endpoints, Integrator, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKind {
    Product,
    #[default]
    MinibatchOt,
    Reflow,
}

impl std::str::FromStr for CouplingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" | "independent" => Ok(Self::Product),
            "ot" | "minibatch-ot" => Ok(Self::MinibatchOt),
            "reflow" => Ok(Self::Reflow),
            other => Err(Error::Config(format!("unknown coupling `{other}`"))),
        }
    }
}

/// Matched endpoints, one pair per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Pairs {
    pub x0: Array2<f64>,
    pub xt: Array2<f64>,
}

impl Pairs {
    pub fn len(&self) -> usize {
        self.x0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x0.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Pairs {
        Pairs {
            x0: self.x0.select(ndarray::Axis(0), rows),
            xt: self.xt.select(ndarray::Axis(0), rows),
        }
    }

    /// Sum of squared endpoint distances.
    pub fn cost(&self) -> f64 {
        (&self.xt - &self.x0).mapv(|a| a * a).sum()
    }

    /// One JSON object per pair.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for i in 0..self.len() {
            let rec = serde_json::json!({ "x0": self.x0.row(i).to_vec(), "xT": self.xt.row(i).to_vec() });
            s.push_str(&rec.to_string());
            s.push('\n');
        }
        s
    }
}

fn rows(pool: &[Vec<f64>], idx: impl IntoIterator<Item = usize>) -> Array2<f64> {
    let idx: Vec<usize> = idx.into_iter().collect();
    let d = pool[0].len();
    let mut a = Array2::zeros((idx.len(), d));
    for (r, i) in idx.into_iter().enumerate() {
        a.row_mut(r).assign(&ndarray::ArrayView1::from(pool[i].as_slice()));
    }
    a
}

fn check_pools(data: &EndpointDataset) -> Result<()> {
    if data.pool_a.is_empty() || data.pool_b.is_empty() {
        return Err(Error::Config("both endpoint pools must be non-empty".into()));
    }
    Ok(())
}

/// Independent uniform draws from each pool.
pub fn sample_pairs_product<R: Rng>(data: &EndpointDataset, n: usize, rng: &mut R) -> Result<Pairs> {
    check_pools(data)?;
    let ia: Vec<usize> = (0..n).map(|_| rng.random_range(0..data.pool_a.len())).collect();
    let ib: Vec<usize> = (0..n).map(|_| rng.random_range(0..data.pool_b.len())).collect();
    Ok(Pairs {
        x0: rows(&data.pool_a, ia),
        xt: rows(&data.pool_b, ib),
    })
}

/// Draw `batch` distinct points from each pool and match them by the exact
/// squared-Euclidean assignment.
pub fn sample_pairs_ot<R: Rng>(data: &EndpointDataset, batch: usize, rng: &mut R) -> Result<Pairs> {
    check_pools(data)?;
    if batch == 0 || batch > data.pool_a.len() || batch > data.pool_b.len() {
        return Err(Error::Config(format!(
            "OT batch {batch} must be in 1..=min({}, {})",
            data.pool_a.len(),
            data.pool_b.len()
        )));
    }
    let ia = rand::seq::index::sample(rng, data.pool_a.len(), batch).into_vec();
    let ib = rand::seq::index::sample(rng, data.pool_b.len(), batch).into_vec();
    let x0 = rows(&data.pool_a, ia);
    let xt = rows(&data.pool_b, ib);
    ot_match(x0, xt)
}

/// Reorder `xt` so that row `i` is matched to `x0[i]` under squared Euclidean cost.
pub fn ot_match(x0: Array2<f64>, xt: Array2<f64>) -> Result<Pairs> {
    let cost = sq_cost_matrix(&x0, &xt);
    let assign = hungarian(&cost)?;
    let xt = xt.select(ndarray::Axis(0), &assign);
    Ok(Pairs { x0, xt })
}

pub fn sq_cost_matrix(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut c = Array2::zeros((a.nrows(), b.nrows()));
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            c[[i, j]] = a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    c
}

/// Minimum-cost perfect matching on a square cost matrix. Returns the column
/// assigned to each row. Shortest augmenting paths with dual potentials,
/// O(n^3); among equal reduced costs the lowest column index wins.
pub fn hungarian(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::Config("assignment needs a square cost matrix".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("assignment cost contains non-finite entries".into()));
    }
    let flat: Vec<f64> = cost.iter().copied().collect();
    // 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![f64::INFINITY; n + 1];
    let mut free: Vec<usize> = Vec::with_capacity(n);
    let mut visited: Vec<usize> = Vec::with_capacity(n + 1);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        free.clear();
        free.extend(1..=n);
        visited.clear();
        for j in 1..=n {
            minv[j] = f64::INFINITY;
        }
        loop {
            visited.push(j0);
            let i0 = p[j0];
            let row = &flat[(i0 - 1) * n..i0 * n];
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = usize::MAX;
            let mut pos = 0;
            for (k, &j) in free.iter().enumerate() {
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                let m = minv[j];
                if m < delta || (m == delta && j < j1) {
                    delta = m;
                    j1 = j;
                    pos = k;
                }
            }
            if j1 == usize::MAX || !delta.is_finite() {
                return Err(Error::Domain("assignment solver found no augmenting path".into()));
            }
            for &j in &visited {
                u[p[j]] += delta;
                v[j] -= delta;
            }
            for &j in &free {
                minv[j] -= delta;
            }
            free.swap_remove(pos);
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    Ok(assign)
}

/// `x0` from pool A, `xT` from integrating the velocity field over `[0, 1]`.
pub fn sample_pairs_reflow<R: Rng>(
    data: &EndpointDataset,
    field: &dyn VelocityField,
    n_steps: usize,
    method: Integrator,
    n: usize,
    rng: &mut R,
) -> Result<Pairs> {
    check_pools(data)?;
    let ia: Vec<usize> = (0..n).map(|_| rng.random_range(0..data.pool_a.len())).collect();
    let x0 = rows(&data.pool_a, ia);
    let xt = integrate_endpoints(field, &x0, n_steps, method)?;
    Ok(Pairs { x0, xt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DatasetMeta;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> EndpointDataset {
        EndpointDataset::new(a, b, DatasetMeta::default()).unwrap()
    }

    fn brute_force(cost: &Array2<f64>) -> f64 {
        fn rec(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = cost.nrows();
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[[row, j]], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
        best
    }

    #[test]
    fn two_point_example() {
        let p = ot_match(array![[0.0, 0.0], [1.0, 1.0]], array![[1.0, 1.1], [0.1, 0.0]]).unwrap();
        assert_eq!(p.xt, array![[0.1, 0.0], [1.0, 1.1]]);
    }

    #[test]
    fn identical_sets_match_identity() {
        let x = array![[0.0, 0.0], [1.0, 0.5], [-2.0, 3.0], [0.3, 0.3]];
        let p = ot_match(x.clone(), x.clone()).unwrap();
        assert_eq!(p.xt, x);
        assert_eq!(p.cost(), 0.0);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let cost = Array2::from_elem((3, 3), 1.0);
        assert_eq!(hungarian(&cost).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn optimal_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..=7 {
            for _ in 0..10 {
                let c = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
                let a = hungarian(&c).unwrap();
                let mut seen = a.clone();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                let total: f64 = a.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
                assert!((total - brute_force(&c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ot_beats_random_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = Array2::from_shape_fn((16, 2), |_| rng.random::<f64>());
            let b = Array2::from_shape_fn((16, 2), |_| rng.random::<f64>() + 0.5);
            let random = Pairs { x0: a.clone(), xt: b.clone() }.cost();
            assert!(ot_match(a, b).unwrap().cost() <= random + 1e-12);
        }
    }

    #[test]
    fn product_singletons_and_marginal() {
        let d = dataset(vec![vec![1.0, 2.0]], vec![vec![3.0, 4.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_pairs_product(&d, 5, &mut rng).unwrap();
        assert!(p.x0.rows().into_iter().all(|r| r.to_vec() == vec![1.0, 2.0]));
        assert!(p.xt.rows().into_iter().all(|r| r.to_vec() == vec![3.0, 4.0]));

        // chi-square against uniform over 4 cells, 3 dof, 99.9% quantile 16.27
        let d = dataset((0..4).map(|i| vec![i as f64]).collect(), vec![vec![0.0]]);
        let p = sample_pairs_product(&d, 4000, &mut rng).unwrap();
        let mut counts = [0.0f64; 4];
        for r in p.x0.column(0) {
            counts[*r as usize] += 1.0;
        }
        let chi2: f64 = counts.iter().map(|c| (c - 1000.0).powi(2) / 1000.0).sum();
        assert!(chi2 < 16.27, "{chi2}");

        let a = sample_pairs_product(&d, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_pairs_product(&d, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ot_batch_bounds() {
        let d = dataset(vec![vec![0.0]; 3], vec![vec![1.0]; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_pairs_ot(&d, 4, &mut rng).is_err());
        assert_eq!(sample_pairs_ot(&d, 3, &mut rng).unwrap().len(), 3);
    }

    #[test]
    fn reflow_with_constant_fields() {
        let d = dataset(vec![vec![0.0, 1.0], vec![2.0, -1.0]], vec![vec![0.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zero = |x: &Array2<f64>, _: f64| -> Result<Array2<f64>> { Ok(Array2::zeros(x.raw_dim())) };
        let p = sample_pairs_reflow(&d, &zero, 10, Integrator::Rk4, 6, &mut rng).unwrap();
        assert_eq!(p.x0, p.xt);
        let c = crate::gfm::ConstantField(vec![0.5, -2.0]);
        let p = sample_pairs_reflow(&d, &c, 10, Integrator::Euler, 6, &mut rng).unwrap();
        let diff = &p.xt - &p.x0;
        for r in diff.rows() {
            assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] + 2.0).abs() < 1e-12);
        }
    }
}
