use jacfield::checkgrad::provider_gradients;
use jacfield::guidance::{
    GuidanceProvider, GuidanceRequest, ImageTargetProvider, NullProvider, PatchMeanVcProvider, PromptBundle, ViewInput,
};
use jacfield::raster::PatchGrid;
use proptest::prelude::*;

const RES: usize = 32;

fn grid() -> PatchGrid {
    PatchGrid::new(RES, 8, 4).unwrap()
}

fn view(image: Vec<f64>, visible: Vec<(u32, u32)>) -> ViewInput {
    ViewInput {
        camera_id: 0,
        image,
        visible,
    }
}

fn request(views: Vec<ViewInput>) -> GuidanceRequest {
    GuidanceRequest {
        iteration: 0,
        resolution: RES,
        views,
        prompts: PromptBundle::default(),
    }
}

/// Image whose patch `patch` has the given mean and everything else `fill`.
fn with_patch_mean(patch: usize, mean: f64, fill: f64) -> Vec<f64> {
    let g = grid();
    let mut img = vec![fill; RES * RES];
    let (rows, cols) = g.patch_span(patch);
    for r in rows {
        for c in cols.clone() {
            img[r * RES + c] = mean;
        }
    }
    img
}

fn vc(req: &GuidanceRequest) -> f64 {
    PatchMeanVcProvider::new(grid(), 1.0).evaluate(req).unwrap().vc_loss
}

#[test]
fn provider_gradients_match_differences() {
    for report in provider_gradients(20, 42).unwrap() {
        assert!(report.passed(), "{report:?}");
    }
}

#[test]
fn null_provider_is_zero() {
    let req = request(vec![view(vec![0.3; RES * RES], vec![(0, 0)])]);
    let r = NullProvider.evaluate(&req).unwrap();
    assert_eq!(r.semantic_loss + r.vc_loss, 0.0);
    assert!(r.gradients[0].iter().all(|&g| g == 0.0));
}

#[test]
fn image_target_examples() {
    let target = vec![0.4; RES * RES];
    let mut p = ImageTargetProvider::new(vec![target.clone()], 1.0);
    let same = p.evaluate(&request(vec![view(target.clone(), vec![])])).unwrap();
    assert_eq!(same.semantic_loss, 0.0);
    let mut img = target.clone();
    img[100] += 0.01;
    let r = p.evaluate(&request(vec![view(img, vec![])])).unwrap();
    let px = (RES * RES) as f64;
    assert!((r.semantic_loss - 0.01f64.powi(2) / (2.0 * px)).abs() < 1e-18);
    assert!((r.gradients[0][100] - 0.01 / px).abs() < 1e-15);
    assert!(p.evaluate(&request(vec![view(target.clone(), vec![]), view(target, vec![])])).is_err());
}

#[test]
fn identical_views_are_consistent() {
    let img: Vec<f64> = (0..RES * RES).map(|i| (i % 7) as f64 / 7.0).collect();
    let map = vec![(0, 3), (1, 10), (2, 24)];
    assert_eq!(vc(&request(vec![view(img.clone(), map.clone()), view(img, map)])), 0.0);
}

#[test]
fn single_view_vertex_contributes_nothing() {
    let a = with_patch_mean(0, 0.9, 0.0);
    let b = with_patch_mean(0, 0.1, 0.0);
    assert_eq!(vc(&request(vec![view(a, vec![(4, 0)]), view(b, vec![(5, 0)])])), 0.0);
}

#[test]
fn equal_means_from_different_pixels_are_consistent() {
    // same mean, different content: the surrogate feature cannot tell them apart
    let g = grid();
    let mut a = vec![0.0; RES * RES];
    let mut b = vec![0.0; RES * RES];
    let (rows, cols) = g.patch_span(5);
    for (k, r) in rows.enumerate() {
        for (j, c) in cols.clone().enumerate() {
            a[r * RES + c] = if (k + j) % 2 == 0 { 1.0 } else { 0.0 };
            b[r * RES + c] = 0.5;
        }
    }
    let req = request(vec![view(a.clone(), vec![(7, 5)]), view(b.clone(), vec![(7, 5)])]);
    assert!(vc(&req).abs() < 1e-15);
    a[rows_first(&g, 5)] += 0.25;
    assert!(vc(&request(vec![view(a, vec![(7, 5)]), view(b, vec![(7, 5)])])) > 0.0);
}

fn rows_first(g: &PatchGrid, patch: usize) -> usize {
    let (rows, cols) = g.patch_span(patch);
    rows.start * RES + cols.start
}

#[test]
fn two_view_worked_example() {
    let a = with_patch_mean(0, 0.2, 0.0);
    let b = with_patch_mean(0, 0.6, 0.0);
    let req = request(vec![view(a, vec![(0, 0)]), view(b, vec![(0, 0)])]);
    let r = PatchMeanVcProvider::new(grid(), 1.0).evaluate(&req).unwrap();
    assert!((r.vc_loss - 0.16).abs() < 1e-12);
    // dL/dm_a = 2·2(m_a − m_b)/Z = −0.8, spread over the 64 patch pixels
    let per_pixel = -0.8 / 64.0;
    assert!((r.gradients[0][0] - per_pixel).abs() < 1e-12);
    assert!((r.gradients[1][0] + per_pixel).abs() < 1e-12);
    assert_eq!(r.gradients[0][RES * RES - 1], 0.0);
}

#[test]
fn out_of_range_patch_rejected() {
    let req = request(vec![view(vec![0.0; RES * RES], vec![(0, 10_000)])]);
    assert!(PatchMeanVcProvider::new(grid(), 1.0).evaluate(&req).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Zero iff every shared vertex sees equal means: built by giving each
    /// shared vertex its own patch and choosing the means per view.
    #[test]
    fn vc_zero_iff_shared_means_agree(
        means in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..6),
        equalize in proptest::collection::vec(any::<bool>(), 6),
    ) {
        let g = grid();
        // disjoint patches: stride 4, patch 8 → patches 0, 2, 4 ... along the first row don't overlap
        let mut a = vec![0.0; RES * RES];
        let mut b = vec![0.0; RES * RES];
        let mut map = Vec::new();
        let mut all_equal = true;
        for (k, &(ma, mb)) in means.iter().enumerate() {
            let patch = [0, 2, 4, 2 * g.dim(), 2 * g.dim() + 2, 2 * g.dim() + 4][k];
            let mb = if equalize[k] { ma } else { mb };
            all_equal &= ma == mb;
            let (rows, cols) = g.patch_span(patch);
            for r in rows {
                for c in cols.clone() {
                    a[r * RES + c] = ma;
                    b[r * RES + c] = mb;
                }
            }
            map.push((k as u32, patch as u32));
        }
        let loss = vc(&request(vec![view(a, map.clone()), view(b, map)]));
        if all_equal {
            prop_assert!(loss.abs() < 1e-15);
        } else {
            prop_assert!(loss > 0.0);
        }
    }
}
