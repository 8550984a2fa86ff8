//! Error metrics against ground-truth RPM and the real-time factor.

use thiserror::Error;

use crate::event_io::GroundTruthSample;
use crate::tracker::{RpmSample, TimingStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no samples left after the warmup cut")]
    EmptyAfterWarmup,
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("sample at {t} µs precedes first ground-truth sample at {first} µs")]
    GtOutOfRange { t: u64, first: u64 },
    #[error("zero compute time: real-time factor is unbounded")]
    DivisionGuard,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub mae: f64,
    pub mare: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GtAlignment {
    /// Most recent ground-truth sample.
    #[default]
    ZeroOrderHold,
    Linear,
}

/// Ground-truth RPM at `t`; ground truth must be sorted.
pub fn gt_at(gt: &[GroundTruthSample], t: u64, align: GtAlignment) -> Result<f64, MetricsError> {
    let first = gt.first().ok_or(MetricsError::EmptyGroundTruth)?;
    if t < first.t {
        return Err(MetricsError::GtOutOfRange { t, first: first.t });
    }
    let i = gt.partition_point(|g| g.t <= t) - 1;
    let a = gt[i];
    Ok(match (align, gt.get(i + 1)) {
        (GtAlignment::Linear, Some(b)) => {
            let w = (t - a.t) as f64 / (b.t - a.t) as f64;
            a.rpm_shaft + (b.rpm_shaft - a.rpm_shaft) * w
        }
        _ => a.rpm_shaft,
    })
}

/// MAE, MArE and RMSE of shaft RPM over samples at least `warmup_us` after
/// the first sample.
pub fn compute_metrics(
    samples: &[RpmSample],
    gt: &[GroundTruthSample],
    warmup_us: u64,
    align: GtAlignment,
) -> Result<Metrics, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let Some(first) = samples.first() else {
        return Err(MetricsError::EmptyAfterWarmup);
    };
    let cut = first.t.saturating_add(warmup_us);
    let (mut abs, mut rel, mut sq, mut n) = (0.0, 0.0, 0.0, 0usize);
    for s in samples.iter().filter(|s| s.t >= cut) {
        let g = gt_at(gt, s.t, align)?;
        let e = s.rpm_shaft - g;
        abs += e.abs();
        rel += e.abs() / g.abs();
        sq += e * e;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyAfterWarmup);
    }
    let nf = n as f64;
    Ok(Metrics {
        mae: abs / nf,
        mare: rel / nf,
        rmse: (sq / nf).sqrt(),
        n,
    })
}

/// Sample-weighted pooling of per-run metrics.
pub fn pool_metrics(runs: &[Metrics]) -> Metrics {
    let n: usize = runs.iter().map(|m| m.n).sum();
    if n == 0 {
        return Metrics::default();
    }
    let nf = n as f64;
    let w = |f: fn(&Metrics) -> f64| runs.iter().map(|m| f(m) * m.n as f64).sum::<f64>() / nf;
    Metrics {
        mae: w(|m| m.mae),
        mare: w(|m| m.mare),
        rmse: (runs
            .iter()
            .map(|m| m.rmse * m.rmse * m.n as f64)
            .sum::<f64>()
            / nf)
            .sqrt(),
        n,
    }
}

/// Unweighted mean over runs.
pub fn mean_metrics(runs: &[Metrics]) -> Metrics {
    if runs.is_empty() {
        return Metrics::default();
    }
    let k = runs.len() as f64;
    Metrics {
        mae: runs.iter().map(|m| m.mae).sum::<f64>() / k,
        mare: runs.iter().map(|m| m.mare).sum::<f64>() / k,
        rmse: runs.iter().map(|m| m.rmse).sum::<f64>() / k,
        n: runs.iter().map(|m| m.n).sum(),
    }
}

/// `Σ duration / (U_evt + U_GN)`, durations in seconds.
pub fn compute_rtf(durations_s: &[f64], timing: &TimingStats) -> Result<f64, MetricsError> {
    let compute_s = (timing.u_evt_total_us + timing.u_gn_total_us) * 1e-6;
    if !(compute_s > 0.0) {
        return Err(MetricsError::DivisionGuard);
    }
    Ok(durations_s.iter().sum::<f64>() / compute_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HomographyParams;

    fn sample(t: u64, rpm: f64) -> RpmSample {
        RpmSample::from_state(
            t,
            0.0,
            rpm * 2.0 * std::f64::consts::TAU / 60.0,
            2,
            HomographyParams::IDENTITY,
            false,
        )
    }

    #[test]
    fn two_sample_fixture() {
        let gt = [GroundTruthSample {
            t: 0,
            rpm_shaft: 100.0,
        }];
        let s = [
            RpmSample {
                rpm_shaft: 100.0,
                ..sample(0, 100.0)
            },
            RpmSample {
                rpm_shaft: 110.0,
                ..sample(1, 110.0)
            },
        ];
        let m = compute_metrics(&s, &gt, 0, GtAlignment::ZeroOrderHold).unwrap();
        assert_eq!(m.mae, 5.0);
        assert_eq!(m.mare, 0.05);
        assert_eq!(m.rmse, 50f64.sqrt());
        assert_eq!(m.n, 2);
    }

    #[test]
    fn errors() {
        let gt = [GroundTruthSample {
            t: 10,
            rpm_shaft: 100.0,
        }];
        assert_eq!(
            compute_metrics(&[sample(5, 1.0)], &gt, 0, GtAlignment::ZeroOrderHold),
            Err(MetricsError::GtOutOfRange { t: 5, first: 10 })
        );
        assert_eq!(
            compute_metrics(&[sample(20, 1.0)], &gt, 0, GtAlignment::ZeroOrderHold).map(|m| m.n),
            Ok(1)
        );
        assert_eq!(
            compute_metrics(&[], &gt, 0, GtAlignment::ZeroOrderHold),
            Err(MetricsError::EmptyAfterWarmup)
        );
    }

    #[test]
    fn linear_alignment() {
        let gt = [
            GroundTruthSample {
                t: 0,
                rpm_shaft: 100.0,
            },
            GroundTruthSample {
                t: 10,
                rpm_shaft: 200.0,
            },
        ];
        assert_eq!(gt_at(&gt, 5, GtAlignment::Linear).unwrap(), 150.0);
        assert_eq!(gt_at(&gt, 5, GtAlignment::ZeroOrderHold).unwrap(), 100.0);
        assert_eq!(gt_at(&gt, 15, GtAlignment::Linear).unwrap(), 200.0);
    }

    #[test]
    fn rtf_examples() {
        let t = TimingStats {
            u_evt_total_us: 0.1e6,
            u_gn_total_us: 0.05e6,
            ..Default::default()
        };
        let rtf = compute_rtf(&[2.0], &t).unwrap();
        assert!((rtf - 40.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            compute_rtf(&[2.0], &TimingStats::default()),
            Err(MetricsError::DivisionGuard)
        );
    }
}
