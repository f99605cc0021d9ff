use fedstorm::data::NormalizationSpec;
use fedstorm::metrics::{bias_stats, pointwise_errors, ssim, ErrorMap, MetricsAccumulator, SsimParams};
use proptest::prelude::*;

fn ramp(h: usize, w: usize, scale: f32) -> Vec<f32> {
    (0..h * w).map(|i| ((i * 37) % 101) as f32 / 101.0 * scale).collect()
}

#[test]
fn hand_computed_errors() {
    let pred = [1.0f32, 2.0, 3.0, 4.0];
    let truth = [1.0f32, 1.0, 5.0, 4.0];
    let (mse, rmse, mae) = pointwise_errors(&pred, &truth).unwrap();
    assert_eq!(mse, 5.0 / 4.0);
    assert_eq!(rmse, (1.25f64).sqrt());
    assert_eq!(mae, 3.0 / 4.0);
    let b = bias_stats(&pred, &truth).unwrap();
    assert_eq!(b.mean, -0.25);
    assert_eq!(b.most_negative, -2.0);
    assert_eq!(b.most_positive, 1.0);
}

#[test]
fn mismatched_and_empty_inputs_are_errors() {
    assert!(pointwise_errors(&[1.0], &[1.0, 2.0]).is_err());
    assert!(pointwise_errors(&[], &[]).is_err());
    assert!(bias_stats(&[], &[]).is_err());
    assert!(ssim(&[0.0; 4], &[0.0; 5], 2, 2, &SsimParams::default()).is_err());
}

#[test]
fn ssim_of_identical_fields_is_one() {
    let x = ramp(24, 20, 1.0);
    let s = ssim(&x, &x, 24, 20, &SsimParams::default()).unwrap();
    assert!((s.value - 1.0).abs() < 1e-12);
    assert!(!s.fallback);
}

#[test]
fn ssim_of_constant_fields_matches_luminance_term() {
    // zero variance leaves only the luminance factor (2ab + c1) / (a^2 + b^2 + c1)
    let p = SsimParams::default();
    let (a, b) = (0.3f32, 0.6f32);
    let s = ssim(&vec![a; 256], &vec![b; 256], 16, 16, &p).unwrap();
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let (a, b) = (a as f64, b as f64);
    let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
    assert!((s.value - want).abs() < 1e-9, "{} vs {want}", s.value);
}

#[test]
fn small_fields_fall_back_to_one_window() {
    let x = ramp(8, 8, 1.0);
    let y: Vec<f32> = x.iter().map(|v| v * 0.5 + 0.1).collect();
    let s = ssim(&x, &y, 8, 8, &SsimParams::default()).unwrap();
    assert!(s.fallback);
    let p = SsimParams::default();
    let n = 64.0;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let vx = x.iter().map(|&v| (v as f64 - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|&v| (v as f64 - my).powi(2)).sum::<f64>() / n;
    let cxy = x
        .iter()
        .zip(&y)
        .map(|(&a, &b)| (a as f64 - mx) * (b as f64 - my))
        .sum::<f64>()
        / n;
    let (c1, c2) = ((p.k1 * p.dynamic_range).powi(2), (p.k2 * p.dynamic_range).powi(2));
    let want = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    assert!((s.value - want).abs() < 1e-9);
    let full = ssim(&ramp(16, 16, 1.0), &ramp(16, 16, 1.0), 16, 16, &p).unwrap();
    assert!(!full.fallback);
}

#[test]
fn ssim_drops_as_offset_grows() {
    let x = ramp(16, 16, 0.5);
    let mut last = f64::INFINITY;
    for k in 0..6 {
        let y: Vec<f32> = x.iter().map(|v| v + 0.05 * k as f32).collect();
        let s = ssim(&x, &y, 16, 16, &SsimParams::default()).unwrap().value;
        assert!(s < last || k == 0);
        last = s;
    }
}

#[test]
fn accumulator_reports_kelvin() {
    let norm = NormalizationSpec::default();
    let mut acc = MetricsAccumulator::new(4, 4, &norm);
    let truth = ramp(4, 4, 1.0);
    let pred: Vec<f32> = truth.iter().map(|v| v + 0.01).collect();
    acc.push(&pred, &truth).unwrap();
    let m = acc.finish().unwrap();
    let (mse_n, _, mae_n) = pointwise_errors(&pred, &truth).unwrap();
    let r = norm.range();
    assert!((m.mse - mse_n * r * r).abs() < 1e-9 * r * r);
    assert!((m.mae - mae_n * r).abs() < 1e-9 * r);
    assert!((m.rmse * m.rmse - m.mse).abs() < 1e-9);
    assert!(m.most_negative_bias <= m.mean_bias && m.mean_bias <= m.most_positive_bias);
    assert_eq!(m.samples, 1);
}

#[test]
fn accumulator_rejects_non_finite_predictions() {
    let mut acc = MetricsAccumulator::new(2, 2, &NormalizationSpec::default());
    assert!(acc.push(&[0.1, f32::NAN, 0.2, 0.3], &[0.1; 4]).is_err());
    assert!(acc.finish().is_err());
}

#[test]
fn pooling_weights_by_pixel() {
    let norm = NormalizationSpec::default();
    let mut a = MetricsAccumulator::new(2, 2, &norm);
    let mut b = MetricsAccumulator::new(2, 2, &norm);
    let t = [0.5f32; 4];
    a.push(&[0.6; 4], &t).unwrap();
    for _ in 0..3 {
        b.push(&[0.5; 4], &t).unwrap();
    }
    let pooled = MetricsAccumulator::pool(&[a.clone(), b.clone()]).unwrap();
    let (ma, mb) = (a.finish().unwrap(), b.finish().unwrap());
    assert!((pooled.mse - (ma.mse * 1.0 + mb.mse * 3.0) / 4.0).abs() < 1e-9);
    assert!((pooled.mean_bias - ma.mean_bias / 4.0).abs() < 1e-9);
    assert_eq!(pooled.samples, 4);
    assert!(MetricsAccumulator::pool(&[]).is_err());
}

#[test]
fn error_map_localizes_a_corner_error() {
    let norm = NormalizationSpec::default();
    let mut acc = MetricsAccumulator::new(6, 6, &norm);
    let truth = vec![0.5f32; 36];
    let mut pred = truth.clone();
    for y in 0..2 {
        for x in 0..2 {
            pred[y * 6 + x] += 0.1;
        }
    }
    acc.push(&pred, &truth).unwrap();
    let tiles: Vec<_> = (0..4)
        .map(|k| (((k / 2) * 6, (k % 2) * 6), 6, 6, acc.pixel_mae()))
        .collect();
    let map = ErrorMap::composite(12, 12, &tiles).unwrap();
    assert!(map.region_mean(0, 2, 0, 2) > 7.0);
    assert!(map.region_mean(6, 8, 6, 8) > 7.0);
    assert!(map.region_mean(2, 6, 2, 6) < 1e-4);
    let m = acc.finish().unwrap();
    assert!((map.mean() - m.mae).abs() < 1e-9);
    assert!(ErrorMap::composite(12, 12, &tiles[..3]).is_err());
}

#[test]
fn pgm_and_sidecar() {
    let map = ErrorMap {
        height: 2,
        width: 3,
        data: vec![1.0, 2.0, 3.0, 1.0, 1.5, 3.0],
    };
    let pgm = map.to_pgm();
    let header = b"P5\n3 2\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(&pgm[header.len()..], &[0, 128, 255, 0, 64, 255]);
    let s = map.gray_scale();
    assert_eq!((s.min_k, s.max_k), (1.0, 3.0));
    let flat = ErrorMap {
        height: 1,
        width: 2,
        data: vec![4.0, 4.0],
    };
    assert!(flat.to_pgm().ends_with(&[0, 0]));

    let dir = tempfile::tempdir().unwrap();
    map.write(dir.path(), "error_map").unwrap();
    let csv = std::fs::read_to_string(dir.path().join("error_map.csv")).unwrap();
    assert_eq!(csv, "1,2,3\n1,1.5,3\n");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("error_map.json")).unwrap()).unwrap();
    assert_eq!(json["max_k"], 3.0);
    assert_eq!(std::fs::read(dir.path().join("error_map.pgm")).unwrap(), pgm);
}

proptest! {
    #[test]
    fn ssim_is_symmetric_and_bounded(
        x in prop::collection::vec(0.0f32..1.0, 256),
        y in prop::collection::vec(0.0f32..1.0, 256),
    ) {
        let p = SsimParams::default();
        let a = ssim(&x, &y, 16, 16, &p).unwrap().value;
        let b = ssim(&y, &x, 16, 16, &p).unwrap().value;
        prop_assert_eq!(a, b);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn bias_bracket_and_rmse(
        pairs in prop::collection::vec((-5.0f32..5.0, -5.0f32..5.0), 1..64),
    ) {
        let (p, t): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
        let b = bias_stats(&p, &t).unwrap();
        let (mse, rmse, mae) = pointwise_errors(&p, &t).unwrap();
        prop_assert!(b.most_negative <= b.mean + 1e-12 && b.mean <= b.most_positive + 1e-12);
        prop_assert!((rmse * rmse - mse).abs() <= 1e-9 * mse.max(1.0));
        prop_assert!(mae <= rmse + 1e-12);
        prop_assert!(b.mean.abs() <= mae + 1e-12);
    }
}
