use std::collections::HashSet;

use cellpheno::features::{compute_features, group_stats, Feature, FeatureMatrix};
use cellpheno::segment::{segment_hematoxylin, EnhancementParams};
use cellpheno::stain::{deconvolve, StainMatrix};
use cellpheno::synth::{synth_cohort, GroupSpec};
use cellpheno::Group;

#[test]
fn small_cohort_is_recovered() {
    let st = StainMatrix::default();
    let specs: Vec<GroupSpec> = [GroupSpec::mut_preset(), GroupSpec::wt_preset()]
        .into_iter()
        .map(|mut s| {
            s.n_cells_per_image = 12;
            s
        })
        .collect();
    let (images, truth) = synth_cohort(&specs, 2, (256, 256), &st, 21).unwrap();
    let p = EnhancementParams::default();
    let (mut tp, mut n_pred, mut n_true) = (0, 0, 0);
    let mut rows = Vec::new();
    for (img, gt) in images.iter().zip(&truth.images) {
        let (h, _) = deconvolve(img, &st).unwrap();
        let cells = segment_hematoxylin(&h, &img.id, &p).unwrap();
        n_pred += cells.len();
        n_true += gt.masks.len();
        for m in &gt.masks {
            let a: HashSet<_> = m.mask.iter().copied().collect();
            let hit = cells.iter().any(|c| {
                let inter = c.mask.iter().filter(|q| a.contains(q)).count();
                let union = a.len() + c.mask.len() - inter;
                inter as f64 / union as f64 >= 0.5
            });
            tp += hit as usize;
        }
        for c in &cells {
            rows.push(compute_features(c, img).unwrap());
        }
    }
    let f1 = 2.0 * tp as f64 / (n_pred + n_true) as f64;
    assert!(f1 >= 0.9, "F1 {f1}");
    let stats = group_stats(&FeatureMatrix::new(rows)).unwrap();
    let area = |g| stats[&(g, Feature::Area)].mean;
    assert!(area(Group::Mut) > area(Group::Wt));
}
