mod common;

use nlnr::error::Error;
use nlnr::numerics::Matrix;
use nlnr::scn::NeighborhoodCap;
use nlnr::selection::{Adjust, SelectionConfig, SelectionRule};
use nlnr::simharness::{
    build_covariance, gen_beta, implied_precision, oracle_neighborhoods, run_campaign, sample_replicate,
    BetaStructure, CampaignConfig, CampaignMethod, SimDesign,
};

fn empirical_covariance(x: &Matrix) -> Matrix {
    let (n, p) = (x.nrows(), x.ncols());
    let mut out = Matrix::zeros(p, p);
    let means: Vec<f64> = (0..p).map(|j| x.column(j).iter().sum::<f64>() / n as f64).collect();
    for i in 0..n {
        let r = x.row(i);
        for a in 0..p {
            for b in 0..p {
                out[(a, b)] += (r[a] - means[a]) * (r[b] - means[b]) / (n - 1) as f64;
            }
        }
    }
    out
}

fn pooled_rows(d: &nlnr::dataset::Dataset) -> Matrix {
    d.x_labeled().vstack(d.x_unlabeled()).unwrap()
}

fn small_design(seed: u64) -> SimDesign {
    SimDesign {
        n: 100,
        n_unlabeled: 300,
        replicates: 3,
        base_seed: seed,
        ..SimDesign::new(40, 0.5, BetaStructure::Sparse)
    }
}

#[test]
fn covariance_examples() {
    let id = build_covariance(40, 20, 0.0).unwrap();
    assert_eq!(id.matrix().sub(&Matrix::identity(40)).max_abs(), 0.0);
    // Θ = λ[[1, .5], [.5, 1]] has inverse (1/0.75λ)[[1, -.5], [-.5, 1]]; unit variance forces λ = 4/3.
    let two = build_covariance(2, 2, 0.5).unwrap();
    assert!((two.get(0, 1) + 0.5).abs() <= 1e-12);
    assert!((two.get(0, 0) - 1.0).abs() <= 1e-12);
    assert!(matches!(build_covariance(30, 20, 0.5), Err(Error::BadBlocking { p: 30, k: 20 })));
    assert!(build_covariance(40, 20, 1.0).is_err());
}

#[test]
fn covariance_times_precision_is_identity() {
    let sigma = build_covariance(60, 20, 0.6).unwrap();
    let theta = implied_precision(60, 20, 0.6).unwrap();
    let prod = sigma.matrix().matmul(theta.matrix()).unwrap();
    assert!(prod.sub(&Matrix::identity(60)).max_abs() <= 1e-9);
}

#[test]
fn precision_support_matches_oracle_neighborhoods() {
    for (p, k, rho) in [(60, 20, 0.6), (40, 4, 0.3), (26, 2, 0.5), (30, 1, 0.5), (30, 30, 0.9)] {
        let theta = implied_precision(p, k, rho).unwrap();
        let oracle = oracle_neighborhoods(p, k).unwrap();
        for j in 0..p {
            let support: Vec<usize> = (0..p).filter(|&l| l != j && theta.get(j, l).abs() > 1e-12).collect();
            assert_eq!(support, oracle[j], "p={p} k={k} j={j}");
        }
    }
    let small = oracle_neighborhoods(4, 2).unwrap();
    assert_eq!(small, vec![vec![1], vec![0], vec![3], vec![2]]);
    assert!(oracle_neighborhoods(10, 1).unwrap().iter().all(|o| o.is_empty()));
}

#[test]
fn coefficient_formulas() {
    let (b, strong) = gen_beta(BetaStructure::StrongPlusSine, 40).unwrap();
    assert_eq!((b[0], b[4], b[20], b[24]), (3.0, 1.0, 3.0, 1.0));
    assert!((b[5] - 0.2 * 6f64.sin()).abs() <= 1e-15);
    assert_eq!(strong, vec![0, 1, 2, 3, 4, 20, 21, 22, 23, 24]);
    let (s, _) = gen_beta(BetaStructure::Sparse, 40).unwrap();
    assert_eq!((s[0], s[20], s[5]), (3.0, 2.0, 0.0));
    let (d, _) = gen_beta(BetaStructure::Dense, 40).unwrap();
    assert_eq!((d[0], d[20]), (4.0, 3.0));
    assert!((d[5] - 0.2 * 6f64.sin()).abs() <= 1e-15);
    assert!(matches!(gen_beta(BetaStructure::Dense, 25), Err(Error::DimensionTooSmall(25))));
}

#[test]
fn independent_design_has_identity_covariance() {
    let design = SimDesign { n: 200, n_unlabeled: 6200, ..SimDesign::new(40, 0.0, BetaStructure::Sparse) };
    let x = pooled_rows(&sample_replicate(&design, 0).unwrap());
    assert!(empirical_covariance(&x).sub(&Matrix::identity(40)).max_abs() <= 0.1);
}

#[test]
fn paired_blocks_have_the_designed_correlation() {
    let design = SimDesign { block_size: 2, n: 200, n_unlabeled: 6200, ..SimDesign::new(26, 0.5, BetaStructure::Sparse) };
    let x = pooled_rows(&sample_replicate(&design, 0).unwrap());
    let c = empirical_covariance(&x);
    let r = c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt();
    assert!((r + 0.5).abs() <= 0.05, "corr {r}");
}

#[test]
fn same_seed_same_replicate() {
    let d = small_design(9);
    let a = sample_replicate(&d, 2).unwrap();
    let b = sample_replicate(&d, 2).unwrap();
    assert_eq!(a.x_labeled().as_slice(), b.x_labeled().as_slice());
    assert_eq!(a.x_unlabeled().as_slice(), b.x_unlabeled().as_slice());
    assert_eq!(a.y(), b.y());
    let c = sample_replicate(&d, 3).unwrap();
    assert_ne!(a.y(), c.y());
}

#[test]
fn design_validation() {
    let bad = SimDesign { block_size: 7, ..SimDesign::new(40, 0.5, BetaStructure::Sparse) };
    assert!(matches!(sample_replicate(&bad, 0), Err(Error::BadBlocking { .. })));
    let tiny = SimDesign { block_size: 5, ..SimDesign::new(20, 0.5, BetaStructure::Sparse) };
    assert!(matches!(sample_replicate(&tiny, 0), Err(Error::DimensionTooSmall(20))));
}

#[test]
fn single_replicate_coverage_is_binary() {
    let cfg = CampaignConfig::new(SimDesign { replicates: 1, ..small_design(4) }, vec![CampaignMethod::Nlnr]);
    let report = run_campaign(&cfg).unwrap();
    for row in report.signal(CampaignMethod::Nlnr) {
        let c = row.coverage.unwrap();
        assert!(c == 0.0 || c == 1.0);
    }
}

#[test]
fn selection_rates_are_internally_consistent() {
    let mut cfg = CampaignConfig::new(small_design(5), vec![CampaignMethod::Nlnr, CampaignMethod::Boosted]);
    cfg.selection = Some(SelectionConfig {
        rule: SelectionRule::PValue { alpha_tau: 1e-3, adjust: Adjust::HolmSidak },
        s_bar: None,
        cv: None,
    });
    let a = run_campaign(&cfg).unwrap();
    for row in &a.selection {
        let fsr = 1.0 - row.true_selected as f64 / row.total_selected as f64;
        assert!((row.fsr - fsr).abs() <= 1e-12);
        assert!(row.prop_exact <= row.prop_superset);
    }
    let b = run_campaign(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn too_few_labeled_rows_abort_the_campaign() {
    let design = SimDesign { n: 3, n_unlabeled: 200, replicates: 4, ..SimDesign::new(40, 0.5, BetaStructure::Sparse) };
    let mut cfg = CampaignConfig::new(design, vec![CampaignMethod::Nlnr]);
    cfg.scn.max_neighborhood = NeighborhoodCap::None;
    assert!(matches!(run_campaign(&cfg), Err(Error::CampaignAborted { total: 4, .. })));
}

#[test]
fn configs_parse_from_toml_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("c.toml");
    std::fs::write(
        &toml_path,
        "methods = [\"nlnr\", \"dlasso\"]\nalpha = 0.1\n[design]\np = 60\nrho = 0.6\nbeta_structure = \"strong-plus-sine\"\nreplicates = 50\n",
    )
    .unwrap();
    let cfg = CampaignConfig::from_file(&toml_path).unwrap();
    assert_eq!(cfg.methods, vec![CampaignMethod::Nlnr, CampaignMethod::DLasso]);
    assert_eq!((cfg.design.p, cfg.design.block_size, cfg.design.n, cfg.design.n_unlabeled), (60, 20, 200, 6200));
    assert_eq!(cfg.alpha, 0.1);

    let json_path = dir.path().join("c.json");
    std::fs::write(&json_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(CampaignConfig::from_file(&json_path).unwrap(), cfg);

    std::fs::write(&toml_path, "methods = [\"nlnr\"]\n[design]\np = 60\n").unwrap();
    assert!(matches!(CampaignConfig::from_file(&toml_path), Err(Error::Config(_))));
}
