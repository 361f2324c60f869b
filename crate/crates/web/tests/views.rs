use glab_web::{capacity_band, clt_series, heat_profile};

#[test]
fn convex_profile_matches_the_upper_normal() {
    let out = heat_profile(0.5, 1.0, "pos", 1.0, 0.05).unwrap();
    let mid = out.chunks(3).find(|c| c[0].abs() < 1e-9).unwrap();
    let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((mid[2] - exact).abs() < 2e-3, "{}", mid[2]);
    assert_eq!(mid[1], 0.0);
    assert!(out.chunks(3).all(|c| c[0].abs() <= 3.0 + 1e-9));
}

#[test]
fn profile_rejects_bad_input() {
    assert!(heat_profile(1.0, 0.5, "pos", 1.0, 0.05).is_err());
    assert!(heat_profile(0.5, 1.0, "nope", 1.0, 0.05).is_err());
    assert!(heat_profile(0.5, 1.0, "pos", 0.0, 0.05).is_err());
}

#[test]
fn series_approaches_the_limit() {
    let out = clt_series(0.5, 1.0, "pos", 8).unwrap();
    let limit = out[0];
    let gaps: Vec<f64> = out[2..].chunks(2).map(|c| (c[1] - limit).abs()).collect();
    assert_eq!(gaps.len(), 8);
    assert!(gaps.last().unwrap() < &2e-3);
    assert!(gaps.windows(2).all(|w| w[1] <= w[0] + out[1]));
}

#[test]
fn capacity_band_is_ordered_and_monotone() {
    let out = capacity_band(0.5, 1.0, 32, 61).unwrap();
    let rows: Vec<&[f64]> = out.chunks(3).collect();
    assert_eq!(rows.len(), 61);
    for r in &rows {
        assert!(r[2] <= r[1] + 1e-12 && (0.0..=1.0).contains(&r[2]) && r[1] <= 1.0 + 1e-12);
    }
    for w in rows.windows(2) {
        assert!(w[1][1] >= w[0][1] - 1e-12 && w[1][2] >= w[0][2] - 1e-12);
    }
    // with no ambiguity the band collapses
    let flat = capacity_band(1.0, 1.0, 16, 11).unwrap();
    assert!(flat.chunks(3).all(|r| (r[1] - r[2]).abs() < 1e-12));
}
