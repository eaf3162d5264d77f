//! Two-dimensional loss-landscape slices with filter normalization, in the
//! constrained weight space and in the lifted (body, slack) parameter space,
//! plus projection of training trajectories onto the slice plane.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpaceKind {
    Constrained,
    Lifted,
}

#[derive(Clone, Debug)]
pub struct SlicePlane {
    pub anchor: Vec<f64>,
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    /// Normalized inner product of the axes right after orthogonalization.
    pub orthogonality: f64,
    /// Second axis fell back to a random direction (rank-deficient snapshots).
    pub random_axis2: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlaneError {
    DegenerateAxis(String),
}

impl std::fmt::Display for PlaneError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlaneError::DegenerateAxis(m) => write!(f, "degenerate slice axis: {m}"),
        }
    }
}

impl std::error::Error for PlaneError {}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Top principal components of the centered snapshot matrix via the thin Gram
/// form (snapshot count << dimension) and deflated power iteration. Returns
/// up to `k` unit components with their eigenvalues.
pub fn trajectory_pca(snapshots: &[Vec<f64>], k: usize) -> Vec<(Vec<f64>, f64)> {
    let n = snapshots.len();
    assert!(n >= 2, "need at least two snapshots for trajectory PCA");
    let p = snapshots[0].len();
    let mut mean = vec![0.0; p];
    for s in snapshots {
        assert_eq!(s.len(), p);
        for i in 0..p {
            mean[i] += s[i];
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let centered: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(&v, &m)| v - m).collect())
        .collect();
    // Gram matrix over snapshots
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let g = dot(&centered[i], &centered[j]);
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let mut comps = Vec::new();
    let mut g = gram;
    for _ in 0..k.min(n) {
        // deterministic power iteration
        let mut u = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut v = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    v[i] += g[i * n + j] * u[j];
                }
            }
            lambda = norm(&v);
            if lambda <= 1e-300 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= lambda);
            u = v;
        }
        if lambda <= 1e-12 {
            break;
        }
        // component in parameter space
        let mut w = vec![0.0; p];
        for (i, c) in centered.iter().enumerate() {
            for j in 0..p {
                w[j] += u[i] * c[j];
            }
        }
        let wn = norm(&w);
        if wn <= 1e-300 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= wn);
        comps.push((w, lambda));
        // deflate
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] -= lambda * u[i] * u[j];
            }
        }
    }
    comps
}

/// Rescale each block of `axis` to the anchor's block norm (filter
/// normalization). Blocks whose anchor or axis norm vanishes are left as-is.
pub fn filter_normalize(axis: &mut [f64], anchor: &[f64], blocks: &[(usize, usize)]) {
    for &(off, len) in blocks {
        let an = norm(&anchor[off..off + len]);
        let xn = norm(&axis[off..off + len]);
        if an > 0.0 && xn > 0.0 {
            let s = an / xn;
            for v in axis[off..off + len].iter_mut() {
                *v *= s;
            }
        }
    }
}

fn orthogonalize(axis2: &mut [f64], axis1: &[f64]) -> f64 {
    let n1 = dot(axis1, axis1);
    if n1 > 0.0 {
        let c = dot(axis2, axis1) / n1;
        for (v, &a) in axis2.iter_mut().zip(axis1) {
            *v -= c * a;
        }
    }
    let (na, nb) = (norm(axis1), norm(axis2));
    if na > 0.0 && nb > 0.0 {
        (dot(axis1, axis2) / (na * nb)).abs()
    } else {
        0.0
    }
}

fn random_unit(p: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Constrained-space plane: axis1 is the end-difference between the two
/// methods' converged points, axis2 the top trajectory-PCA direction
/// orthogonalized against it; both are then filter-normalized per block.
pub fn build_plane_constrained(
    anchor: &[f64],
    other_end: &[f64],
    snapshots: &[Vec<f64>],
    blocks: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Result<SlicePlane, PlaneError> {
    assert_eq!(anchor.len(), other_end.len());
    let mut axis1: Vec<f64> = other_end.iter().zip(anchor).map(|(&o, &a)| o - a).collect();
    if norm(&axis1) == 0.0 {
        return Err(PlaneError::DegenerateAxis(
            "end-difference axis is the zero vector (identical endpoints)".into(),
        ));
    }
    let comps = trajectory_pca(snapshots, 1);
    let (mut axis2, random_axis2) = match comps.into_iter().next() {
        Some((c, _)) => (c, false),
        None => (random_unit(anchor.len(), rng), true),
    };
    let mut ortho = orthogonalize(&mut axis2, &axis1);
    let mut random_axis2 = random_axis2;
    if norm(&axis2) <= 1e-12 {
        // PCA direction was parallel to axis1; fall back to a random direction
        axis2 = random_unit(anchor.len(), rng);
        ortho = orthogonalize(&mut axis2, &axis1);
        random_axis2 = true;
    }
    filter_normalize(&mut axis1, anchor, blocks);
    filter_normalize(&mut axis2, anchor, blocks);
    Ok(SlicePlane { anchor: anchor.to_vec(), axis1, axis2, orthogonality: ortho, random_axis2 })
}

/// Lifted-space plane: both axes are the top two trajectory-PCA components,
/// filter-normalized per block.
pub fn build_plane_lifted(
    anchor: &[f64],
    snapshots: &[Vec<f64>],
    blocks: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Result<SlicePlane, PlaneError> {
    assert!(snapshots.len() >= 3, "lifted plane needs at least three snapshots");
    let comps = trajectory_pca(snapshots, 2);
    if comps.is_empty() {
        return Err(PlaneError::DegenerateAxis("snapshot matrix has rank zero".into()));
    }
    let mut axis1 = comps[0].0.clone();
    let (mut axis2, random_axis2) = if comps.len() > 1 {
        (comps[1].0.clone(), false)
    } else {
        (random_unit(anchor.len(), rng), true)
    };
    let ortho = orthogonalize(&mut axis2, &axis1);
    filter_normalize(&mut axis1, anchor, blocks);
    filter_normalize(&mut axis2, anchor, blocks);
    Ok(SlicePlane { anchor: anchor.to_vec(), axis1, axis2, orthogonality: ortho, random_axis2 })
}

/// Random filter-normalized directions around the anchor.
pub fn build_plane_random(
    anchor: &[f64],
    blocks: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> SlicePlane {
    let mut axis1 = random_unit(anchor.len(), rng);
    let mut axis2 = random_unit(anchor.len(), rng);
    let ortho = orthogonalize(&mut axis2, &axis1);
    filter_normalize(&mut axis1, anchor, blocks);
    filter_normalize(&mut axis2, anchor, blocks);
    SlicePlane { anchor: anchor.to_vec(), axis1, axis2, orthogonality: ortho, random_axis2: true }
}

/// Loss evaluations over the slice grid. `cells[i * resolution + j]` holds
/// the loss at offset `(a_i, b_j)`; `None` marks infeasible points.
#[derive(Clone, Debug)]
pub struct GridEval {
    pub resolution: usize,
    pub half_extent: f64,
    pub cells: Vec<Option<f64>>,
}

impl GridEval {
    pub fn offset(&self, idx: usize) -> f64 {
        let c = (self.resolution - 1) as i64 / 2;
        let step = 2.0 * self.half_extent / (self.resolution - 1) as f64;
        (idx as i64 - c) as f64 * step
    }

    pub fn center_cell(&self) -> Option<f64> {
        let c = (self.resolution - 1) / 2;
        self.cells[c * self.resolution + c]
    }

    pub fn finite_fraction(&self) -> f64 {
        self.cells.iter().filter(|c| c.is_some()).count() as f64 / self.cells.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("a,b,loss,feasible\n");
        for i in 0..self.resolution {
            for j in 0..self.resolution {
                let a = self.offset(i);
                let b = self.offset(j);
                match self.cells[i * self.resolution + j] {
                    Some(l) => s.push_str(&format!("{a:?},{b:?},{l:?},1\n")),
                    None => s.push_str(&format!("{a:?},{b:?},,0\n")),
                }
            }
        }
        s
    }
}

/// Evaluate `loss` on the `resolution x resolution` grid of plane offsets.
/// The center cell is evaluated at the anchor itself (no axis arithmetic),
/// and infeasible evaluations are recorded as absent.
pub fn evaluate_grid(
    plane: &SlicePlane,
    resolution: usize,
    half_extent: f64,
    mut loss: impl FnMut(&[f64]) -> Option<f64>,
) -> GridEval {
    assert!(resolution >= 2 && resolution % 2 == 1, "resolution must be odd");
    let p = plane.anchor.len();
    let c = (resolution - 1) as i64 / 2;
    let step = 2.0 * half_extent / (resolution - 1) as f64;
    let mut cells = Vec::with_capacity(resolution * resolution);
    let mut point = vec![0.0; p];
    for i in 0..resolution {
        let ka = i as i64 - c;
        for j in 0..resolution {
            let kb = j as i64 - c;
            point.copy_from_slice(&plane.anchor);
            if ka != 0 {
                let a = ka as f64 * step;
                for t in 0..p {
                    point[t] += a * plane.axis1[t];
                }
            }
            if kb != 0 {
                let b = kb as f64 * step;
                for t in 0..p {
                    point[t] += b * plane.axis2[t];
                }
            }
            let v = loss(&point).filter(|l| l.is_finite());
            cells.push(v);
        }
    }
    GridEval { resolution, half_extent, cells }
}

/// Least-squares coordinates of each snapshot in the (axis1, axis2) frame
/// relative to the anchor.
pub fn project_trajectory(plane: &SlicePlane, snapshots: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let g11 = dot(&plane.axis1, &plane.axis1);
    let g12 = dot(&plane.axis1, &plane.axis2);
    let g22 = dot(&plane.axis2, &plane.axis2);
    let det = g11 * g22 - g12 * g12;
    snapshots
        .iter()
        .map(|s| {
            let diff: Vec<f64> = s.iter().zip(&plane.anchor).map(|(&v, &a)| v - a).collect();
            let r1 = dot(&diff, &plane.axis1);
            let r2 = dot(&diff, &plane.axis2);
            if det.abs() <= 1e-300 {
                [if g11 > 0.0 { r1 / g11 } else { 0.0 }, 0.0]
            } else {
                [(g22 * r1 - g12 * r2) / det, (g11 * r2 - g12 * r1) / det]
            }
        })
        .collect()
}

pub fn trajectory_csv(method: &str, iterations: &[u64], coords: &[[f64; 2]]) -> String {
    let mut s = String::new();
    for (it, c) in iterations.iter().zip(coords) {
        s.push_str(&format!("{method},{it},{:?},{:?}\n", c[0], c[1]));
    }
    s
}

/// Largest absolute residual of a least-squares quadratic surface fit to the
/// finite grid cells; tiny for exactly quadratic losses.
pub fn quadratic_fit_residual(grid: &GridEval) -> f64 {
    // basis: 1, a, b, a^2, ab, b^2
    let mut ata = [[0.0f64; 6]; 6];
    let mut atb = [0.0f64; 6];
    let mut rows = Vec::new();
    for i in 0..grid.resolution {
        for j in 0..grid.resolution {
            if let Some(l) = grid.cells[i * grid.resolution + j] {
                let a = grid.offset(i);
                let b = grid.offset(j);
                let phi = [1.0, a, b, a * a, a * b, b * b];
                for r in 0..6 {
                    for cc in 0..6 {
                        ata[r][cc] += phi[r] * phi[cc];
                    }
                    atb[r] += phi[r] * l;
                }
                rows.push((phi, l));
            }
        }
    }
    // Gaussian elimination with partial pivoting
    let mut m = ata;
    let mut rhs = atb;
    for col in 0..6 {
        let piv = (col..6).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        rhs.swap(col, piv);
        let p = m[col][col];
        if p.abs() < 1e-300 {
            continue;
        }
        for r in col + 1..6 {
            let f = m[r][col] / p;
            for cc in col..6 {
                m[r][cc] -= f * m[col][cc];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut coef = [0.0f64; 6];
    for col in (0..6).rev() {
        let mut acc = rhs[col];
        for cc in col + 1..6 {
            acc -= m[col][cc] * coef[cc];
        }
        coef[col] = if m[col][col].abs() < 1e-300 { 0.0 } else { acc / m[col][col] };
    }
    rows.iter()
        .map(|(phi, l)| {
            let fit: f64 = phi.iter().zip(&coef).map(|(&p, &c)| p * c).sum();
            (fit - l).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn identical_endpoints_error_path() {
        let anchor = vec![1.0, 2.0, 3.0];
        let snaps = vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 2.0], vec![0.0, 0.0, 3.0]];
        let mut rng = substream(0, "plane");
        let err = build_plane_constrained(&anchor, &anchor, &snaps, &[(0, 3)], &mut rng);
        assert!(matches!(err, Err(PlaneError::DegenerateAxis(_))));
    }

    #[test]
    fn pca_recovers_the_trajectory_direction() {
        let mut rng = substream(1, "pca");
        let p = 40;
        let v = random_unit(p, &mut rng);
        let snaps: Vec<Vec<f64>> = (0..12)
            .map(|k| v.iter().map(|&vi| vi * k as f64 * 0.3).collect())
            .collect();
        let comps = trajectory_pca(&snaps, 1);
        let cosine = dot(&comps[0].0, &v).abs();
        assert!(cosine > 0.999, "cosine {cosine}");
    }

    #[test]
    fn axes_orthogonal_after_orthogonalization() {
        let mut rng = substream(2, "ortho");
        let p = 25;
        let anchor: Vec<f64> = (0..p).map(|i| (i as f64 * 0.37).sin() + 1.2).collect();
        let other: Vec<f64> = anchor.iter().map(|&a| a + 0.5).collect();
        let snaps: Vec<Vec<f64>> = (0..8).map(|_| random_unit(p, &mut rng)).collect();
        let plane =
            build_plane_constrained(&anchor, &other, &snaps, &[(0, p)], &mut rng).unwrap();
        assert!(plane.orthogonality < 1e-10, "{}", plane.orthogonality);
        assert!(!plane.random_axis2);
    }

    #[test]
    fn rank_deficient_snapshots_fall_back_to_random_axis() {
        let mut rng = substream(3, "fallback");
        let anchor = vec![0.5; 10];
        let other: Vec<f64> = (0..10).map(|i| 0.5 + 0.1 * i as f64).collect();
        let snaps = vec![vec![1.0; 10]; 5]; // zero variance
        let plane =
            build_plane_constrained(&anchor, &other, &snaps, &[(0, 10)], &mut rng).unwrap();
        assert!(plane.random_axis2);
        assert!(plane.orthogonality < 1e-10);
    }

    #[test]
    fn anchor_cell_is_exact_and_quadratic_grid_fits() {
        let p = 6;
        let anchor: Vec<f64> = (0..p).map(|i| 0.3 * i as f64 - 0.7).collect();
        let mut rng = substream(4, "grid");
        let plane = build_plane_random(&anchor, &[(0, p)], &mut rng);
        // smooth quadratic in parameter space
        let loss = |x: &[f64]| -> Option<f64> {
            Some(
                x.iter()
                    .enumerate()
                    .map(|(i, &v)| (0.5 + 0.1 * i as f64) * v * v + 0.2 * v)
                    .sum(),
            )
        };
        let grid = evaluate_grid(&plane, 21, 1.5, loss);
        let anchor_loss = loss(&anchor).unwrap();
        assert_eq!(grid.center_cell().unwrap().to_bits(), anchor_loss.to_bits());
        assert_eq!(grid.finite_fraction(), 1.0);
        let resid = quadratic_fit_residual(&grid);
        assert!(resid < 1e-10, "residual {resid}");
    }

    #[test]
    fn infeasible_cells_recorded_absent() {
        let anchor = vec![0.0, 0.0];
        let mut rng = substream(5, "absent");
        let plane = build_plane_random(&anchor, &[(0, 2)], &mut rng);
        let loss = |x: &[f64]| -> Option<f64> {
            if x[0] > 0.2 {
                None
            } else {
                Some(x[0] * x[0] + x[1] * x[1])
            }
        };
        let grid = evaluate_grid(&plane, 9, 1.0, loss);
        assert!(grid.finite_fraction() < 1.0);
        assert!(grid.center_cell().is_some());
        let csv = grid.to_csv();
        assert!(csv.contains(",,0"));
    }

    #[test]
    fn projection_reproduces_axis_combinations() {
        let p = 12;
        let mut rng = substream(6, "proj");
        let anchor: Vec<f64> = (0..p).map(|i| i as f64 * 0.1).collect();
        let plane = build_plane_random(&anchor, &[(0, p)], &mut rng);

        let mk = |a: f64, b: f64| -> Vec<f64> {
            (0..p)
                .map(|i| anchor[i] + a * plane.axis1[i] + b * plane.axis2[i])
                .collect()
        };
        let coords = project_trajectory(&plane, &[anchor.clone(), mk(2.0, 0.0), mk(-0.5, 1.25)]);
        assert_eq!(coords[0], [0.0, 0.0]);
        assert!((coords[1][0] - 2.0).abs() < 1e-10 && coords[1][1].abs() < 1e-10);
        assert!((coords[2][0] + 0.5).abs() < 1e-10 && (coords[2][1] - 1.25).abs() < 1e-10);

        // residual of a random snapshot is orthogonal to both axes
        let mut snap = mk(0.3, -0.8);
        for v in snap.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += 0.05 * z;
        }
        let c = project_trajectory(&plane, &[snap.clone()])[0];
        let resid: Vec<f64> = (0..p)
            .map(|i| snap[i] - anchor[i] - c[0] * plane.axis1[i] - c[1] * plane.axis2[i])
            .collect();
        assert!(dot(&resid, &plane.axis1).abs() < 1e-8);
        assert!(dot(&resid, &plane.axis2).abs() < 1e-8);
    }
}
