mod common;

use common::{max_abs, random_cloud};
use ndarray::{s, Array1, Array2};
use proptest::prelude::*;
use ssbench::spectral::{build_knn_graph, graph_laplacian, low_freq_project, SpectralBasis};

/// Cyclic Jacobi rotations; returns the eigenvalues in ascending order.
fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - sn * mkq;
                    m[[k, q]] = sn * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - sn * mqk;
                    m[[q, k]] = sn * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Edge set and weights written straight from the definition.
fn brute_adjacency(points: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = points.nrows();
    let d2 = |i: usize, j: usize| {
        let dx = points[[i, 0]] - points[[j, 0]];
        let dy = points[[i, 1]] - points[[j, 1]];
        let dz = points[[i, 2]] - points[[j, 2]];
        dx * dx + dy * dy + dz * dz
    };
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| d2(i, a).total_cmp(&d2(i, b)).then(a.cmp(&b)));
            others.truncate(k);
            others
        })
        .collect();
    let mut total = 0.0;
    for (i, nb) in neighbours.iter().enumerate() {
        for &j in nb {
            total += d2(i, j);
        }
    }
    let sigma2 = total / (n * k) as f64;
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && (neighbours[i].contains(&j) || neighbours[j].contains(&i)) {
            (-d2(i, j) / sigma2).exp()
        } else {
            0.0
        }
    })
}

fn is_connected(adj: &Array2<f64>) -> bool {
    let n = adj.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if adj[[i, j]] > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[test]
fn weights_match_brute_force_oracle() {
    for seed in 0..20 {
        let x = random_cloud(64, seed).into_points();
        let fast = build_knn_graph(x.view(), 10).unwrap();
        assert_eq!(fast, brute_adjacency(&x, 10), "seed {seed}");
        assert!((0..64).all(|i| fast[[i, i]] == 0.0));
        assert_eq!(fast, fast.t());
    }
}

#[test]
fn eigenvalues_match_jacobi_oracle() {
    for (seed, n) in [(0u64, 16usize), (1, 40), (2, 64), (3, 128)] {
        let x = random_cloud(n, 300 + seed).into_points();
        let lap = graph_laplacian(&build_knn_graph(x.view(), 8).unwrap()).unwrap();
        let basis = SpectralBasis::from_laplacian(&lap).unwrap();
        let oracle = jacobi_eigenvalues(&lap);
        for (a, b) in basis.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "N={n}: {a} vs {b}");
        }
    }
}

#[test]
fn laplacian_properties() {
    for seed in 0..5 {
        let cloud = random_cloud(64, 40 + seed);
        let adj = build_knn_graph(cloud.points(), 10).unwrap();
        assert!(is_connected(&adj));
        let lap = graph_laplacian(&adj).unwrap();
        assert!(max_abs(&lap.dot(&Array1::ones(64)).insert_axis(ndarray::Axis(1))) < 1e-10);

        let basis = SpectralBasis::from_cloud(&cloud, 10).unwrap();
        let ev = &basis.eigenvalues;
        assert!(ev.iter().all(|v| *v >= -1e-8));
        assert!(ev[0].abs() < 1e-6);
        assert!(ev.windows(2).into_iter().all(|w| w[0] <= w[1]));

        let u = &basis.eigenvectors;
        let gram = u.t().dot(u);
        assert!(max_abs(&(gram - Array2::<f64>::eye(64))) < 1e-6);
        for i in 0..64 {
            let v = u.column(i);
            let rayleigh = v.dot(&lap.dot(&v)) / v.dot(&v);
            assert!((rayleigh - ev[i]).abs() < 1e-6);
        }
    }
}

#[test]
fn two_node_graph() {
    let adj = ndarray::array![[0.0, 0.3], [0.3, 0.0]];
    assert_eq!(
        graph_laplacian(&adj).unwrap(),
        ndarray::array![[0.3, -0.3], [-0.3, 0.3]]
    );
    let asym = ndarray::array![[0.0, 0.3], [0.2, 0.0]];
    assert!(graph_laplacian(&asym).is_err());
}

#[test]
fn collinear_points_join_the_middle() {
    let p = ndarray::array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let adj = build_knn_graph(p.view(), 1).unwrap();
    assert!(adj[[1, 0]] > 0.0 && adj[[1, 2]] > 0.0);
    assert!(build_knn_graph(p.view(), 3).is_err());
}

#[test]
fn projection_errors() {
    let cloud = random_cloud(32, 9);
    let basis = SpectralBasis::from_cloud(&cloud, 10).unwrap();
    assert!(low_freq_project(cloud.points(), &basis, 0).is_err());
    assert!(low_freq_project(cloud.points(), &basis, 33).is_err());
    let other = random_cloud(31, 9);
    assert!(low_freq_project(other.points(), &basis, 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_properties(seed in any::<u64>(), n in 20usize..80, frac in 0.05f64..1.0, alpha in -4.0f64..4.0) {
        let cloud = random_cloud(n, seed);
        let basis = SpectralBasis::from_cloud(&cloud, 10).unwrap();
        let k = ((n as f64 * frac) as usize).clamp(1, n);
        let x = random_cloud(n, seed ^ 0xabc).into_points();

        let (lfc, hfc) = low_freq_project(x.view(), &basis, k).unwrap();
        prop_assert!(max_abs(&(&lfc + &hfc - &x)) < 1e-8);

        let (again, _) = low_freq_project(lfc.view(), &basis, k).unwrap();
        prop_assert!(max_abs(&(&again - &lfc)) < 1e-8);

        let uk = basis.eigenvectors.slice(s![.., ..k]);
        prop_assert!(max_abs(&uk.t().dot(&hfc)) < 1e-6);

        let (scaled, _) = low_freq_project((&x * alpha).view(), &basis, k).unwrap();
        prop_assert!(max_abs(&(&scaled - &(&lfc * alpha))) < 1e-10);

        let (full, rest) = low_freq_project(x.view(), &basis, n).unwrap();
        prop_assert!(max_abs(&(&full - &x)) < 1e-8);
        prop_assert!(max_abs(&rest) < 1e-8);

        let constant = Array2::from_shape_fn((n, 3), |(_, c)| [0.3, -1.2, 2.0][c]);
        if is_connected(&build_knn_graph(cloud.points(), 10).unwrap()) {
            let (lc, _) = low_freq_project(constant.view(), &basis, k).unwrap();
            prop_assert!(max_abs(&(&lc - &constant)) < 1e-8);
        }
    }
}
