use zrplab::metastability::{capacity, capacity_1d_exact};
use zrplab::rate::{limiting_chain, GammaConvention};
use zrplab::{SiteGraph32, SiteGraph64, ZrpModel32, ZrpModel64};

#[test]
fn stationary_measure_matches_double_precision() {
    let s32 = ZrpModel32::new(SiteGraph32::complete(3, 1.0).unwrap(), 2.0, 30).unwrap().enumerate().unwrap();
    let s64 = ZrpModel64::new(SiteGraph64::complete(3, 1.0).unwrap(), 2.0, 30).unwrap().enumerate().unwrap();
    let a = s32.stationary().unwrap().weights();
    let b = s64.stationary().unwrap().weights();
    let worst = a.iter().zip(b).map(|(&x, &y)| ((x as f64 - y) / y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn capacity_and_reduced_chain_in_single_precision() {
    let space = ZrpModel32::new(SiteGraph32::complete(2, 1.0).unwrap(), 2.0, 20).unwrap().enumerate().unwrap();
    let eta = [7u32, 13];
    let exact = capacity_1d_exact(&space, &eta, 0).unwrap();
    let generic = capacity(&space, &[space.index_of(&eta).unwrap()], &[space.condensed(1)]).unwrap();
    assert!((exact - generic).abs() / generic < 1e-3, "{exact} vs {generic}");
    let lc = limiting_chain(&SiteGraph32::complete(2, 1.0).unwrap(), 2.0, GammaConvention::Series).unwrap();
    assert!((lc.chain.rate(0, 1) - 11.3425).abs() < 1e-3);
}
