//! Threshold-sweep verification metrics.
//!
//! A pair is accepted when its score is at least the threshold, so
//! `FAR(t)` is the fraction of impostor scores `>= t` and `FRR(t)` the
//! fraction of genuine scores `< t`. The sweep visits every distinct score
//! plus a final reject-all point.

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// `None` is the reject-all operating point above every score.
    pub threshold: Option<f64>,
    pub far: f64,
    pub frr: f64,
}

fn check(genuine: &[f64], impostor: &[f64]) -> Result<(), EvalError> {
    if genuine.is_empty() {
        return Err(EvalError::EmptyClass("genuine"));
    }
    if impostor.is_empty() {
        return Err(EvalError::EmptyClass("impostor"));
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    Ok(())
}

/// Full ROC, ascending threshold. FAR falls and FRR rises along the curve;
/// the first point accepts everything, the last rejects everything.
pub fn roc_curve(genuine: &[f64], impostor: &[f64]) -> Result<Vec<RocPoint>, EvalError> {
    check(genuine, impostor)?;
    let mut g = genuine.to_vec();
    let mut im = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let (ng, ni) = (g.len() as f64, im.len() as f64);
    let mut thresholds: Vec<f64> = g.iter().chain(&im).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len() + 1);
    // Counts of genuine scores < t and impostor scores < t.
    let (mut gi, mut ii) = (0usize, 0usize);
    for &t in &thresholds {
        while gi < g.len() && g[gi] < t {
            gi += 1;
        }
        while ii < im.len() && im[ii] < t {
            ii += 1;
        }
        points.push(RocPoint {
            threshold: Some(t),
            far: (im.len() - ii) as f64 / ni,
            frr: gi as f64 / ng,
        });
    }
    points.push(RocPoint {
        threshold: None,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Equal error rate in percent, linearly interpolated between the two ROC
/// points where `FRR - FAR` changes sign.
pub fn eer(genuine: &[f64], impostor: &[f64]) -> Result<f64, EvalError> {
    Ok(eer_from_roc(&roc_curve(genuine, impostor)?))
}

pub fn eer_from_roc(points: &[RocPoint]) -> f64 {
    // points[0] has FAR = 1, FRR = 0, so the crossing index is >= 1.
    let k = points
        .iter()
        .position(|p| p.frr >= p.far)
        .expect("reject-all point has FRR >= FAR");
    if k == 0 {
        return 100.0 * points[0].far;
    }
    let (a, b) = (points[k - 1], points[k]);
    let (da, db) = (a.frr - a.far, b.frr - b.far);
    let lambda = da / (da - db);
    100.0 * (a.far + lambda * (b.far - a.far))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrrAtFar {
    pub frr_percent: f64,
    /// FAR actually achieved at the chosen threshold, percent.
    pub far_percent: f64,
    pub far_target: f64,
    /// False when there are fewer than `10 / far_target` impostor scores.
    pub reliable: bool,
}

/// FRR at the lowest threshold whose FAR does not exceed `far_target`.
pub fn frr_at_far(
    genuine: &[f64],
    impostor: &[f64],
    far_target: f64,
) -> Result<FrrAtFar, EvalError> {
    if !(far_target > 0.0 && far_target <= 1.0) {
        return Err(EvalError::InvalidFarTarget(far_target));
    }
    let roc = roc_curve(genuine, impostor)?;
    let p = roc
        .iter()
        .find(|p| p.far <= far_target)
        .expect("reject-all point has FAR 0");
    Ok(FrrAtFar {
        frr_percent: 100.0 * p.frr,
        far_percent: 100.0 * p.far,
        far_target,
        reliable: impostor.len() as f64 >= 10.0 / far_target,
    })
}

/// At most `max_points` points spread evenly along the curve, always keeping
/// both end points.
pub fn downsample_roc(points: &[RocPoint], max_points: usize) -> Vec<RocPoint> {
    if points.len() <= max_points || max_points < 2 {
        return points.to_vec();
    }
    let last = points.len() - 1;
    let mut out: Vec<RocPoint> = (0..max_points)
        .map(|i| points[i * last / (max_points - 1)])
        .collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_and_inverted() {
        assert_eq!(eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 0.0);
        assert_eq!(eer(&[0.2], &[0.9]).unwrap(), 100.0);
        assert_eq!(eer(&[0.5], &[0.5]).unwrap(), 50.0);
    }

    #[test]
    fn interleaved_example() {
        // t=0.3: FAR 1, FRR 0; t=0.4: FAR .5, FRR 0; t=0.5: FAR .5, FRR .5.
        assert_eq!(eer(&[0.6, 0.4], &[0.5, 0.3]).unwrap(), 50.0);
        // Crossing between t=0.5 (FAR 1/2, FRR 1/3) and t=0.55 (FAR 0,
        // FRR 1/3): lambda = (1/6) / (1/6 + 1/3) = 1/3.
        let e = eer(&[0.6, 0.4, 0.55], &[0.5, 0.3]).unwrap();
        assert!((e - 100.0 / 3.0).abs() < 1e-12, "{e}");
    }

    #[test]
    fn errors() {
        assert_eq!(eer(&[], &[0.1]), Err(EvalError::EmptyClass("genuine")));
        assert_eq!(eer(&[0.1], &[]), Err(EvalError::EmptyClass("impostor")));
        assert_eq!(eer(&[f64::NAN], &[0.1]), Err(EvalError::NonFiniteScore));
        assert!(frr_at_far(&[0.1], &[0.1], 0.0).is_err());
    }

    #[test]
    fn frr_examples() {
        let imp: Vec<f64> = (0..50).map(|i| 0.3 * i as f64 / 49.0).collect();
        let r = frr_at_far(&[0.5, 0.7], &imp, 1e-2).unwrap();
        assert_eq!(r.frr_percent, 0.0);
        assert!(!r.reliable);
        let imp: Vec<f64> = (0..1000).map(|i| 0.3 * i as f64 / 999.0).collect();
        assert!(frr_at_far(&[0.5, 0.7], &imp, 1e-2).unwrap().reliable);

        let r = frr_at_far(&[0.4; 5], &[0.4; 5], 0.5).unwrap();
        assert_eq!(r.frr_percent, 100.0);
    }

    #[test]
    fn roc_endpoints() {
        let roc = roc_curve(&[0.3, 0.9], &[0.1, 0.3]).unwrap();
        assert_eq!((roc[0].far, roc[0].frr), (1.0, 0.0));
        let last = roc.last().unwrap();
        assert_eq!((last.far, last.frr, last.threshold), (0.0, 1.0, None));
        assert_eq!(roc.len(), 4);
        let d = downsample_roc(&roc, 2);
        assert_eq!(d, vec![roc[0], roc[3]]);
    }
}
