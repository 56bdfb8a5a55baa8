//! End-to-end acceptance suite: each test certifies one quantitative
//! guarantee of the toolkit against an independent reference (closed
//! form, exhaustive enumeration, dense eigensolve, or an exact
//! certificate), and prints a machine-readable PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see every
//! line; tolerances are part of the contract and are pinned inline.

use rand::Rng;
use treeglass_core::capacity::ResistorTree;
use treeglass_core::dynamics::{
    coupling_survival_experiment, MaskContext, SpeedupSpec, TwoScaleCover,
};
use treeglass_core::gibbs::{
    depth_weighted_sum, subtree_log_odds, transfer_bound_scan, GibbsTable, Reconstruction,
    DEFAULT_KAPPA,
};
use treeglass_core::mixing::{
    designated_subtree_product_tv, designated_subtree_tv_bound, hellinger_affinity,
    hellinger_distance, is_stochastically_dominated, tv_distance,
};
use treeglass_core::spectral::{
    block_kernel, critical_conditioned_variance, critical_gap_upper_bound_continuous,
    critical_gap_upper_bound_discrete, decomposition_gap_bound, dense_spectrum,
    near_critical_inverse_gap_formula, product_chain_eigenvalues, product_chain_kernel,
    product_distribution, random_reversible_chain, single_site_kernel, spectral_gap,
    MarkovKernel, SpectrumHint,
};
use treeglass_core::tree::{BoundaryCondition, IsingParams, TreeShape};
use treeglass_core::util::{lin_space, linear_fit, log_space, replica_rng};

fn report(k: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "ACCEPTANCE {k} {name}: {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {k} ({name}) failed: {detail}");
}

fn random_leaf_boundary<R: Rng>(shape: &TreeShape, rng: &mut R) -> BoundaryCondition {
    let leaves = shape.level(shape.h()).len();
    BoundaryCondition::Leaves(
        (0..leaves)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect(),
    )
}

#[test]
fn criterion_01_closed_form_variance() {
    let mut worst = 0.0f64;
    for (b, h) in [(2u32, 1u32), (2, 2), (2, 3), (3, 1), (3, 2)] {
        let shape = TreeShape::new(b, h).unwrap();
        let params = IsingParams::critical(b).unwrap();
        let boundary = BoundaryCondition::Free.resolve(&shape).unwrap();
        let table = GibbsTable::new(&shape, &params, &boundary).unwrap();
        let theta = params.theta();
        let enumerated = table.conditional_variance_of(&[(0, 1)], |t, mask| {
            depth_weighted_sum(&shape, theta, |v| t.spin_at(mask, v))
        });
        let closed = critical_conditioned_variance(b, h).unwrap();
        worst = worst.max((enumerated - closed).abs());
    }
    report(
        1,
        "closed-form-variance",
        worst <= 1e-9,
        &format!("largest |enumeration - closed form| = {worst:e}"),
    );
}

#[test]
fn criterion_02_gap_upper_bound() {
    let mut detail = String::new();
    let mut ok = true;
    for h in 1..=3u32 {
        let shape = TreeShape::new(2, h).unwrap();
        let params = IsingParams::critical(2).unwrap();
        let boundary = BoundaryCondition::Free.resolve(&shape).unwrap();
        let table = GibbsTable::new(&shape, &params, &boundary).unwrap();
        let kernel = single_site_kernel(&shape, &params, &boundary).unwrap();
        // The eigensolver's error direction is safe here: its Rayleigh
        // estimate can only overstate the gap, so gap <= bound is not
        // granted by numerics.
        let est = spectral_gap(&kernel, table.distribution(), SpectrumHint::Psd).unwrap();
        let bound = critical_gap_upper_bound_discrete(2, h).unwrap();
        detail.push_str(&format!("h={h}: gap {:.6e} vs bound {:.6e}; ", est.gap, bound));
        ok &= est.gap <= bound + 1e-12;
    }
    report(2, "gap-upper-bound", ok, &detail);
}

#[test]
fn criterion_03_capacity_reciprocal_depth() {
    let mut worst = 0.0f64;
    for m in 1..=10u32 {
        let shape = TreeShape::new(2, m).unwrap();
        let params = IsingParams::critical(2).unwrap();
        let tree = ResistorTree::correlation(&shape, &params).unwrap();
        let cap = tree.capacity();
        worst = worst.max((cap - 1.0 / f64::from(m)).abs());
        let nw = tree.nash_williams_bound(&tree.level_cutsets()).unwrap();
        worst = worst.max((nw - tree.effective_resistance()).abs());
    }
    report(
        3,
        "capacity-reciprocal-depth",
        worst <= 1e-10,
        &format!("largest deviation {worst:e}"),
    );
}

#[test]
fn criterion_04_spatial_mixing_bounds() {
    let mut rng = replica_rng(0xACC4, 0);
    let mut violations = 0usize;
    let mut checked = 0usize;
    for h in [2u32, 3] {
        let shape = TreeShape::new(2, h).unwrap();
        let params = IsingParams::critical(2).unwrap();
        let theta = params.theta();
        let mut boundaries = vec![
            BoundaryCondition::Free,
            BoundaryCondition::AllPlus,
            BoundaryCondition::AllMinus,
        ];
        for _ in 0..100 {
            boundaries.push(random_leaf_boundary(&shape, &mut rng));
        }
        for bc in boundaries {
            let boundary = bc.resolve(&shape).unwrap();
            for hat_depth in 1..=h - 1 {
                let rec = Reconstruction::new(&shape, &params, &boundary, 0, hat_depth).unwrap();
                let hat_shape = TreeShape::new(2, hat_depth).unwrap();
                let cap = ResistorTree::correlation(&hat_shape, &params)
                    .unwrap()
                    .capacity();
                let delta_bound = cap / (DEFAULT_KAPPA * (1.0 - theta));
                let mag_bound = cap / (DEFAULT_KAPPA * (1.0 - theta) / 4.0);
                let mag = rec.magnetization();
                if !(-1e-12..=mag_bound + 1e-12).contains(&mag) {
                    violations += 1;
                }
                for field in [0.0, 0.7] {
                    let delta = rec.delta(field);
                    checked += 1;
                    if !(-1e-12..=delta_bound + 1e-12).contains(&delta) {
                        violations += 1;
                    }
                }
            }
        }
    }
    report(
        4,
        "spatial-mixing-bounds",
        violations == 0,
        &format!("{violations} violations over {checked} influence evaluations"),
    );
}

#[test]
fn criterion_05_recursion_fidelity() {
    let mut worst = 0.0f64;
    for (b, h) in [(2u32, 1u32), (2, 2), (2, 3), (4, 1), (8, 1)] {
        let shape = TreeShape::new(b, h).unwrap();
        let params = IsingParams::critical(b).unwrap();
        let leaves = shape.level(h).len();
        for pattern in 0..1u64 << leaves {
            let spins: Vec<i8> = (0..leaves)
                .map(|i| if pattern >> i & 1 == 1 { 1 } else { -1 })
                .collect();
            let boundary = BoundaryCondition::Leaves(spins).resolve(&shape).unwrap();
            let recursion = subtree_log_odds(&shape, &params, &boundary)[0].value();
            let table = GibbsTable::new(&shape, &params, &boundary).unwrap();
            let enumerated = table.log_odds_of(0).value();
            worst = worst.max((recursion - enumerated).abs());
        }
    }
    report(
        5,
        "recursion-fidelity",
        worst <= 1e-9,
        &format!("largest |recursion - enumeration| = {worst:e}"),
    );
}

#[test]
fn criterion_06_transfer_inequality_grid() {
    let thetas = lin_space(0.01, 0.75, 50);
    let deltas = log_space(1e-4, 20.0, 200);
    let c1s = [1.0, 2.0, 5.0, 20.0, 100.0];
    let result = transfer_bound_scan(&thetas, &deltas, &c1s, DEFAULT_KAPPA);
    let detail = match &result {
        Ok(r) => format!("{} grid points, min slack {:.3e}", r.points, r.min_slack),
        Err(e) => format!("{e}"),
    };
    report(6, "transfer-inequality-grid", result.is_ok(), &detail);
}

#[test]
fn criterion_07_product_spectra() {
    let mut rng = replica_rng(0xACC7, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n_factors = rng.random_range(2..=3);
        let sizes: Vec<usize> = (0..n_factors).map(|_| rng.random_range(2..=6)).collect();
        if sizes.iter().product::<usize>() > 1 << 10 {
            continue;
        }
        let mut weights: Vec<f64> = (0..n_factors).map(|_| 0.2 + rng.random::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let factors: Vec<(MarkovKernel, Vec<f64>)> = sizes
            .iter()
            .map(|&n| random_reversible_chain(n, &mut rng))
            .collect();
        let kernels: Vec<MarkovKernel> = factors.iter().map(|(k, _)| k.clone()).collect();
        let pis: Vec<Vec<f64>> = factors.iter().map(|(_, p)| p.clone()).collect();
        let product = product_chain_kernel(&kernels, &weights).unwrap();
        let pi = product_distribution(&pis);
        let direct = dense_spectrum(&product, &pi).unwrap();
        let spectra: Vec<Vec<f64>> = factors
            .iter()
            .map(|(k, p)| dense_spectrum(k, p).unwrap())
            .collect();
        let predicted = product_chain_eigenvalues(&spectra, &weights).unwrap();
        for (a, b) in direct.iter().zip(&predicted) {
            worst = worst.max((a - b).abs());
        }
    }
    let mut lazy_worst = 0.0f64;
    for ell in [1u32, 2] {
        let k = 2usize.pow(ell);
        let mut factors: Vec<MarkovKernel> = (0..k)
            .map(|_| MarkovKernel::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap())
            .collect();
        factors.push(MarkovKernel::identity(1));
        let weights = vec![1.0 / (k as f64 + 1.0); k + 1];
        let product = product_chain_kernel(&factors, &weights).unwrap();
        let mut pis: Vec<Vec<f64>> = (0..k).map(|_| vec![0.5, 0.5]).collect();
        pis.push(vec![1.0]);
        let pi = product_distribution(&pis);
        let est = spectral_gap(&product, &pi, SpectrumHint::Psd).unwrap();
        lazy_worst = lazy_worst.max((est.gap - 1.0 / (k as f64 + 1.0)).abs());
    }
    report(
        7,
        "product-spectra",
        worst <= 1e-9 && lazy_worst <= 1e-12,
        &format!("eigenvalue mismatch {worst:e}; lazy-gap mismatch {lazy_worst:e}"),
    );
}

#[test]
fn criterion_08_decomposition_bound() {
    let mut rng = replica_rng(0xACC8, 0);
    let mut ok = true;
    let mut detail = String::new();
    for trial in 0..20 {
        let n = rng.random_range(8..=256);
        let (kernel, pi) = random_reversible_chain(n, &mut rng);
        let cells = rng.random_range(2..=4);
        let partition: Vec<usize> = (0..n)
            .map(|x| if x < cells { x } else { rng.random_range(0..cells) })
            .collect();
        let exact = spectral_gap(&kernel, &pi, SpectrumHint::Indefinite)
            .unwrap()
            .gap;
        let bound = decomposition_gap_bound(&kernel, &pi, &partition)
            .unwrap()
            .bound;
        if bound > exact + 1e-9 {
            ok = false;
            detail.push_str(&format!("random trial {trial}: bound {bound} > gap {exact}; "));
        }
    }
    // Block dynamics on the height-3 tree, partitioned by the root spin.
    let shape = TreeShape::new(2, 3).unwrap();
    let params = IsingParams::critical(2).unwrap();
    let boundary = BoundaryCondition::AllPlus.resolve(&shape).unwrap();
    let table = GibbsTable::new(&shape, &params, &boundary).unwrap();
    let cover = TwoScaleCover::new(&shape, &boundary, 1.0 / 3.0).unwrap();
    let kernel = block_kernel(&shape, &params, &boundary, cover.cover()).unwrap();
    let partition: Vec<usize> = (0..table.distribution().len())
        .map(|mask| mask & 1)
        .collect();
    let exact = spectral_gap(&kernel, table.distribution(), SpectrumHint::Psd)
        .unwrap()
        .gap;
    let decomp = decomposition_gap_bound(&kernel, table.distribution(), &partition).unwrap();
    if decomp.bound > exact + 1e-9 || decomp.bound <= 0.0 {
        ok = false;
        detail.push_str(&format!(
            "block dynamics: bound {} vs exact {exact}",
            decomp.bound
        ));
    } else {
        detail.push_str(&format!(
            "block dynamics: bound {:.4e} <= exact {:.4e}",
            decomp.bound, exact
        ));
    }
    report(8, "decomposition-bound", ok, &detail);
}

#[test]
fn criterion_09_censoring() {
    let mut rng = replica_rng(0xACC9, 0);
    let mut violations = 0usize;
    for h in [1u32, 2] {
        let shape = TreeShape::new(2, h).unwrap();
        let params = IsingParams::critical(2).unwrap();
        let boundary = BoundaryCondition::Free.resolve(&shape).unwrap();
        let table = GibbsTable::new(&shape, &params, &boundary).unwrap();
        let ctx = MaskContext::new(&shape, &params, &boundary).unwrap();
        let n = shape.n();
        for _ in 0..25 {
            let len = rng.random_range(10..40);
            let full: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
            let censored: Vec<usize> = full
                .iter()
                .copied()
                .filter(|_| rng.random::<f64>() < 0.7)
                .collect();
            let full_dist = ctx.censored_run(&full).unwrap();
            let censored_dist = ctx.censored_run(&censored).unwrap();
            let tv_full = tv_distance(&full_dist, table.distribution());
            let tv_censored = tv_distance(&censored_dist, table.distribution());
            if tv_full > tv_censored + 1e-12 {
                violations += 1;
            }
            if !is_stochastically_dominated(&full_dist, &censored_dist, n as u32).unwrap() {
                violations += 1;
            }
        }
    }
    report(
        9,
        "censoring",
        violations == 0,
        &format!("{violations} violations over 50 schedule pairs"),
    );
}

#[test]
fn criterion_10_hellinger_suite() {
    let mut rng = replica_rng(0xACCA, 0);
    let random_dist = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let mut d: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = d.iter().sum();
        for v in &mut d {
            *v /= total;
        }
        d
    };
    let mut ok = true;
    let mut detail = String::new();
    for trial in 0..100 {
        let n = 2 + trial % 30;
        let p = random_dist(n, &mut rng);
        let q = random_dist(n, &mut rng);
        let tv = tv_distance(&p, &q);
        let dh = hellinger_distance(&p, &q);
        if !(0.5 * dh * dh <= tv + 1e-12 && tv <= dh + 1e-12) {
            ok = false;
            detail = format!("sandwich broken at trial {trial}: tv {tv}, d_H {dh}");
            break;
        }
        let p2 = random_dist(3, &mut rng);
        let q2 = random_dist(3, &mut rng);
        let joint = hellinger_affinity(
            &product_distribution(&[p.clone(), p2.clone()]),
            &product_distribution(&[q.clone(), q2.clone()]),
        );
        let split = hellinger_affinity(&p, &q) * hellinger_affinity(&p2, &q2);
        if (joint - split).abs() > 1e-12 {
            ok = false;
            detail = format!("product law broken at trial {trial}: {joint} vs {split}");
            break;
        }
    }
    if ok {
        detail = "sandwich and product law held on 100 random pairs".into();
    }
    report(10, "hellinger-suite", ok, &detail);
}

#[test]
fn criterion_11_coupling_survival() {
    let shape = TreeShape::new(2, 3).unwrap();
    let params = IsingParams::critical(2).unwrap();
    let spec = SpeedupSpec::new(&shape, 1, 2).unwrap();
    let t_grid = [0.25, 0.5, 0.75, 1.0, 1.5];
    let replicas = 10_000;
    let points =
        coupling_survival_experiment(&shape, &params, &spec, &t_grid, replicas, 0xACCB).unwrap();
    // Disagreements on the designated region can only be created at the
    // b^ell designated sites, each at rate at most theta^(r-ell).
    let rate = 2.0 * params.theta();
    let mut ok = true;
    let mut detail = String::new();
    for p in &points {
        let floor = (-rate * p.t).exp() - 3.0 * p.std_error;
        detail.push_str(&format!(
            "t={}: survival {:.4} vs floor {:.4}; ",
            p.t, p.survival, floor
        ));
        ok &= p.survival >= floor;
    }
    report(11, "coupling-survival", ok, &detail);
}

#[test]
fn criterion_12_subtree_product_tv() {
    let shape = TreeShape::new(2, 3).unwrap();
    let params = IsingParams::critical(2).unwrap();
    let spec = SpeedupSpec::new(&shape, 1, 2).unwrap();
    let tv = designated_subtree_product_tv(&shape, &params, &spec).unwrap();
    let bound = designated_subtree_tv_bound(2, 1, 2, params.theta()).unwrap();
    report(
        12,
        "subtree-product-tv",
        tv <= bound,
        &format!("exact TV {tv:.6} vs bound {bound:.6}"),
    );
}

#[test]
fn criterion_13_scaling_fits() {
    // (a) The inverse of the closed-form continuous-time gap bound at
    // criticality grows as h^2: the log-log slope must be 2.00 +/- 0.05.
    let hs: Vec<u32> = (1..=12).collect();
    let xs: Vec<f64> = hs.iter().map(|&h| f64::from(h).ln()).collect();
    let ys: Vec<f64> = hs
        .iter()
        .map(|&h| (1.0 / critical_gap_upper_bound_continuous(2, h).unwrap()).ln())
        .collect();
    let (slope_a, _) = linear_fit(&xs, &ys);
    let ok_a = (slope_a - 2.0).abs() <= 0.05;

    // (b) The near-critical inverse-gap benchmark grows exponentially in
    // eps.h once h exceeds 1/eps: fitting log(formula) against eps.h
    // for eps = 0.1, h = 20..80 (eps.h in [2, 8]) must give a positive
    // slope within 15% of 1.
    let eps = 0.1;
    let hs: Vec<u32> = (20..=80).collect();
    let xs: Vec<f64> = hs.iter().map(|&h| eps * f64::from(h)).collect();
    let ys: Vec<f64> = hs
        .iter()
        .map(|&h| {
            near_critical_inverse_gap_formula(2, h, eps, 1.0)
                .unwrap()
                .ln()
        })
        .collect();
    let (slope_b, _) = linear_fit(&xs, &ys);
    let ok_b = slope_b > 0.0 && (slope_b - 1.0).abs() <= 0.15;

    report(
        13,
        "scaling-fits",
        ok_a && ok_b,
        &format!("log-log slope {slope_a:.4} (want 2.00 +/- 0.05); exponential-rate slope {slope_b:.4} (want within 15% of 1)"),
    );
}
