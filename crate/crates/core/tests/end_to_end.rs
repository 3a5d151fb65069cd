mod common;

use common::*;
use cosam::data::split_holdout;

/// Clustered synthetic data at LastFM's scale (1,892 users, 4,476 items,
/// about 52k positives), split and trained exactly like the real-data check.
#[test]
fn cosam_beats_uniform_on_clustered_data() {
    let ds = clustered(7, 1892, 4476, 27.8, 40);
    let split = split_holdout(&ds, 0.2, 42).unwrap();
    let cmp = compare_samplers(&split, &comparison_config(), &[10, 20, 30]);
    eprintln!("{cmp:?}");
    assert!(cmp.relative_gain() >= 0.10, "{cmp:?}");
    for &(epoch, cosam, uniform) in &cmp.losses {
        assert!(cosam > uniform, "epoch {epoch}: {cosam} <= {uniform}");
    }
}
