//! Per-analysis effect estimates, standardized statistics, and the
//! design-time covariance/correlation model.
//!
//! The monitored effect at analysis j averages the reference-study
//! conditional mean over each arm's surrogate distribution and takes the
//! between-arm difference. Its variance estimator uses population-style
//! (divide by n) second moments per arm scaled by 1/n. The design-time
//! covariance substitutes reference-study surrogates for the not-yet-seen
//! monitoring data, which is what allows boundary calibration before the
//! new trial starts.

use serde::{Deserialize, Serialize};

use crate::data::{AnalysisSchedule, Arm, StudyADataset, StudyBSnapshot};
use crate::error::{Error, Result};
use crate::kernel::{fit_mu, FittedConditionalMean, KernelSpec};
use crate::mat::{psd_repair_and_sqrt, Mat};

/// Effect estimate at a single analysis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub analysis: usize,
    pub delta_e: f64,
    pub var_hat: f64,
    pub w_stat: f64,
    pub n_b0: usize,
    pub n_b1: usize,
}

/// Conditional-mean values for one snapshot arm at one analysis, with the
/// subject id attached to any evaluation failure.
fn mu_values(
    fit: &FittedConditionalMean,
    b: &StudyBSnapshot,
    arm: Arm,
    analysis: usize,
) -> Result<Vec<f64>> {
    b.arm_column(arm, analysis)
        .into_iter()
        .map(|(id, s)| {
            fit.evaluate(s).map_err(|e| match e {
                Error::NoEffectiveNeighbors { query, .. } => Error::NoEffectiveNeighbors {
                    query,
                    analysis,
                    subject: Some(id.to_string()),
                },
                other => other,
            })
        })
        .collect()
}

fn arm_means(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Between-arm difference of averaged conditional means at analysis j.
pub fn delta_e_at(
    fit: &FittedConditionalMean,
    b: &StudyBSnapshot,
    analysis: usize,
) -> Result<f64> {
    let mu1 = mu_values(fit, b, Arm::Treatment, analysis)?;
    let mu0 = mu_values(fit, b, Arm::Control, analysis)?;
    Ok(arm_means(&mu1).0 - arm_means(&mu0).0)
}

/// Variance estimator at analysis j: sum over arms of the arm's
/// population variance of conditional-mean values divided by the arm size.
pub fn var_hat_at(
    fit: &FittedConditionalMean,
    b: &StudyBSnapshot,
    analysis: usize,
) -> Result<f64> {
    let est = estimate_at(fit, b, analysis)?;
    Ok(est.var_hat)
}

/// Standardized statistic at analysis j.
pub fn w_stat_at(
    fit: &FittedConditionalMean,
    b: &StudyBSnapshot,
    analysis: usize,
) -> Result<EffectEstimate> {
    estimate_at(fit, b, analysis)
}

/// Full per-analysis estimate: effect, variance, and standardized statistic
/// from a single pass over the snapshot.
pub fn estimate_at(
    fit: &FittedConditionalMean,
    b: &StudyBSnapshot,
    analysis: usize,
) -> Result<EffectEstimate> {
    if analysis == 0 || analysis > b.j_obs {
        return Err(Error::Config(format!(
            "analysis {analysis} outside snapshot columns 1..={}",
            b.j_obs
        )));
    }
    let mu1 = mu_values(fit, b, Arm::Treatment, analysis)?;
    let mu0 = mu_values(fit, b, Arm::Control, analysis)?;
    if mu0.len() < 2 {
        return Err(Error::ArmTooSmall {
            arm: "control",
            n: mu0.len(),
            analysis,
        });
    }
    if mu1.len() < 2 {
        return Err(Error::ArmTooSmall {
            arm: "treatment",
            n: mu1.len(),
            analysis,
        });
    }
    let (m1, v1) = arm_means(&mu1);
    let (m0, v0) = arm_means(&mu0);
    let delta_e = m1 - m0;
    let var_hat = v1 / mu1.len() as f64 + v0 / mu0.len() as f64;
    if !(var_hat > 0.0) {
        return Err(Error::DegenerateVariance { analysis });
    }
    Ok(EffectEstimate {
        analysis,
        delta_e,
        var_hat,
        w_stat: delta_e / var_hat.sqrt(),
        n_b0: mu0.len(),
        n_b1: mu1.len(),
    })
}

/// Estimated cross-analysis scale and correlation structure of the effect
/// statistics, with the square root used to drive Monte Carlo calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationModel {
    #[serde(rename = "J")]
    pub n_analyses: usize,
    pub n_b0: usize,
    pub n_b1: usize,
    pub kernel: KernelSpec,
    /// Scale estimates sigma~_jj' (row-major J x J).
    pub sigma_tilde: Mat,
    /// Correlation matrix with unit diagonal, PSD after repair.
    pub corr: Mat,
    /// Square root R with R Rᵀ = corr.
    pub sqrt_corr: Mat,
}

impl CorrelationModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Co-moment matrix over one set of per-subject value columns:
/// entry (j, j') is the population covariance between columns j and j'.
/// `columns[j]` holds one value per subject.
fn comoment(columns: &[Vec<f64>]) -> Mat {
    let j = columns.len();
    let n = columns[0].len() as f64;
    let means: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().sum::<f64>() / n)
        .collect();
    let mut m = Mat::zeros(j);
    for a in 0..j {
        for b in a..j {
            let mut acc = 0.0;
            for i in 0..columns[a].len() {
                acc += (columns[a][i] - means[a]) * (columns[b][i] - means[b]);
            }
            let v = acc / n;
            m.set(a, b, v);
            m.set(b, a, v);
        }
    }
    m
}

fn model_from_comoments(
    c0: &Mat,
    c1: &Mat,
    n_b0: usize,
    n_b1: usize,
    kernel: KernelSpec,
) -> Result<CorrelationModel> {
    let j = c0.dim;
    let mut sigma = Mat::zeros(j);
    for a in 0..j {
        for b in 0..j {
            sigma.set(
                a,
                b,
                c0.get(a, b) / n_b0 as f64 + c1.get(a, b) / n_b1 as f64,
            );
        }
    }
    let mut corr = Mat::zeros(j);
    for a in 0..j {
        for b in 0..j {
            if a == b {
                corr.set(a, b, 1.0);
            } else {
                let d = (sigma.get(a, a) * sigma.get(b, b)).sqrt();
                if !(d > 0.0) {
                    return Err(Error::DegenerateVariance { analysis: a + 1 });
                }
                corr.set(a, b, sigma.get(a, b) / d);
            }
        }
    }
    let (repaired, root) = psd_repair_and_sqrt(&corr)?;
    Ok(CorrelationModel {
        n_analyses: j,
        n_b0,
        n_b1,
        kernel,
        sigma_tilde: sigma,
        corr: repaired,
        sqrt_corr: root,
    })
}

/// Build the design-time correlation model from the reference study and
/// planned arm sizes for the new trial. The conditional mean fitted on the
/// control arm at each mapped column is evaluated at every reference-study
/// subject's surrogate, separately per arm, and the per-arm co-moments are
/// combined with the planned 1/n scaling.
pub fn build_correlation_model(
    a: &StudyADataset,
    schedule: &AnalysisSchedule,
    n_b0: usize,
    n_b1: usize,
    kernel: KernelSpec,
) -> Result<CorrelationModel> {
    if n_b0 == 0 || n_b1 == 0 {
        return Err(Error::Config(
            "planned arm sizes must be positive".into(),
        ));
    }
    let j = schedule.n_analyses();
    let fits: Vec<FittedConditionalMean> = (1..=j)
        .map(|analysis| fit_mu(a, Arm::Control, schedule.column_for(analysis), kernel))
        .collect::<Result<_>>()?;

    let mut columns0: Vec<Vec<f64>> = Vec::with_capacity(j);
    let mut columns1: Vec<Vec<f64>> = Vec::with_capacity(j);
    for (analysis, fit) in fits.iter().enumerate() {
        let column = schedule.column_for(analysis + 1);
        let eval_arm = |arm: Arm| -> Result<Vec<f64>> {
            a.subjects
                .iter()
                .filter(|s| s.arm == arm)
                .map(|s| {
                    fit.evaluate(s.surrogates[column - 1]).map_err(|e| match e {
                        Error::NoEffectiveNeighbors { query, .. } => {
                            Error::NoEffectiveNeighbors {
                                query,
                                analysis: analysis + 1,
                                subject: Some(s.id.clone()),
                            }
                        }
                        other => other,
                    })
                })
                .collect()
        };
        columns0.push(eval_arm(Arm::Control)?);
        columns1.push(eval_arm(Arm::Treatment)?);
    }

    let c0 = comoment(&columns0);
    let c1 = comoment(&columns1);
    model_from_comoments(&c0, &c1, n_b0, n_b1, kernel)
}

/// Correlation model over analyses 1..=b.j_obs estimated from monitoring
/// data itself, used by the error-spending path where the design-time
/// reference-study surrogate is replaced by observed data.
pub fn correlation_model_from_snapshot(
    fits: &[FittedConditionalMean],
    b: &StudyBSnapshot,
    kernel: KernelSpec,
) -> Result<CorrelationModel> {
    let j = b.j_obs;
    if fits.len() < j {
        return Err(Error::Config(format!(
            "{} fitted means for {} analyses",
            fits.len(),
            j
        )));
    }
    let mut columns0: Vec<Vec<f64>> = Vec::with_capacity(j);
    let mut columns1: Vec<Vec<f64>> = Vec::with_capacity(j);
    for analysis in 1..=j {
        columns0.push(mu_values(&fits[analysis - 1], b, Arm::Control, analysis)?);
        columns1.push(mu_values(&fits[analysis - 1], b, Arm::Treatment, analysis)?);
    }
    let n_b0 = columns0[0].len();
    let n_b1 = columns1[0].len();
    let c0 = comoment(&columns0);
    let c1 = comoment(&columns1);
    model_from_comoments(&c0, &c1, n_b0, n_b1, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SubjectA, SubjectB};
    use crate::kernel::{Bandwidth, KernelKind};
    use approx::assert_relative_eq;

    fn gaussian(h: f64) -> KernelSpec {
        KernelSpec {
            kind: KernelKind::Gaussian,
            bandwidth: Bandwidth::Fixed(h),
        }
    }

    fn snapshot(control: &[f64], treated: &[f64]) -> StudyBSnapshot {
        let mut subjects = Vec::new();
        for (i, &s) in control.iter().enumerate() {
            subjects.push(SubjectB {
                id: format!("c{i}"),
                arm: Arm::Control,
                surrogates: vec![s],
            });
        }
        for (i, &s) in treated.iter().enumerate() {
            subjects.push(SubjectB {
                id: format!("t{i}"),
                arm: Arm::Treatment,
                surrogates: vec![s],
            });
        }
        StudyBSnapshot::new(subjects, 1).unwrap()
    }

    fn linear_fit() -> FittedConditionalMean {
        // wide bandwidth over a linear relationship keeps mu monotone
        let pairs: Vec<(f64, f64)> = (0..40).map(|i| {
            let s = i as f64 * 0.25 - 5.0;
            (s, 2.0 * s + 1.0)
        }).collect();
        FittedConditionalMean::from_pairs(pairs, gaussian(0.7), 1).unwrap()
    }

    #[test]
    fn identical_arms_give_zero_delta() {
        let fit = linear_fit();
        let vals = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let snap = snapshot(&vals, &vals);
        assert_eq!(delta_e_at(&fit, &snap, 1).unwrap(), 0.0);
        assert_eq!(w_stat_at(&fit, &snap, 1).unwrap().w_stat, 0.0);
    }

    #[test]
    fn group_swap_negates_delta_keeps_variance() {
        let fit = linear_fit();
        let c = [-1.0, 0.2, 0.4];
        let t = [0.1, 0.9, 1.4];
        let fwd = w_stat_at(&fit, &snapshot(&c, &t), 1).unwrap();
        let rev = w_stat_at(&fit, &snapshot(&t, &c), 1).unwrap();
        assert_relative_eq!(rev.delta_e, -fwd.delta_e, epsilon = 1e-15);
        assert_relative_eq!(rev.w_stat, -fwd.w_stat, epsilon = 1e-12);
        assert_relative_eq!(rev.var_hat, fwd.var_hat, epsilon = 1e-15);
    }

    #[test]
    fn variance_hand_value() {
        // constant-outcome kernels make mu the identity map onto y values:
        // use two training points per location so evaluation at the exact
        // location with tiny bandwidth returns the local outcome.
        // Simpler: check the arithmetic of the variance combination directly.
        let (m0, v0) = arm_means(&[0.0, 2.0]);
        let (m1, v1) = arm_means(&[1.0, 3.0]);
        assert_relative_eq!(m0, 1.0);
        assert_relative_eq!(m1, 2.0);
        // population variance of {0,2} and {1,3} is 1 each
        let var = v0 / 2.0 + v1 / 2.0;
        assert_relative_eq!(var, 1.0);
    }

    #[test]
    fn degenerate_variance_errors() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 5.0)).collect();
        let fit = FittedConditionalMean::from_pairs(pairs, gaussian(1.0), 1).unwrap();
        let snap = snapshot(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        let err = estimate_at(&fit, &snap, 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateVariance { analysis: 1 }));
    }

    #[test]
    fn arm_too_small_errors() {
        let fit = linear_fit();
        let snap = snapshot(&[0.0], &[1.0, 2.0]);
        let err = estimate_at(&fit, &snap, 1).unwrap_err();
        assert!(matches!(err, Error::ArmTooSmall { arm: "control", .. }));
    }

    #[test]
    fn kernel_failure_reports_subject() {
        let pairs = vec![(0.0, 1.0), (0.5, 2.0), (1.0, 3.0)];
        let fit = FittedConditionalMean::from_pairs(
            pairs,
            KernelSpec {
                kind: KernelKind::Epanechnikov,
                bandwidth: Bandwidth::Fixed(0.3),
            },
            1,
        )
        .unwrap();
        let snap = snapshot(&[0.2, 0.4], &[0.6, 9.0]);
        let err = estimate_at(&fit, &snap, 1).unwrap_err();
        match err {
            Error::NoEffectiveNeighbors { subject, .. } => {
                assert_eq!(subject.as_deref(), Some("t1"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn study_a_two_columns(duplicate: bool) -> StudyADataset {
        let mut subjects = Vec::new();
        for i in 0..30 {
            let x = (i as f64) * 0.2 - 3.0;
            let s1 = x;
            let s2 = if duplicate { x } else { x * 0.5 + (i as f64 * 0.77).sin() };
            let arm = if i % 2 == 0 { Arm::Control } else { Arm::Treatment };
            subjects.push(SubjectA {
                id: format!("s{i}"),
                arm,
                outcome: 1.0 + x + 0.3 * (i as f64 * 0.41).cos(),
                surrogates: vec![s1, s2],
            });
        }
        StudyADataset::new(subjects, vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn correlation_model_j1_is_trivial() {
        let a = study_a_two_columns(false);
        let schedule = AnalysisSchedule::new(vec![1.0], vec![1], None, 2).unwrap();
        let m = build_correlation_model(&a, &schedule, 50, 50, gaussian(1.0)).unwrap();
        assert_eq!(m.corr, Mat::identity(1));
        assert_eq!(m.sqrt_corr.get(0, 0), 1.0);
    }

    #[test]
    fn duplicated_column_gives_unit_offdiagonal() {
        let a = study_a_two_columns(true);
        let schedule = AnalysisSchedule::equally_spaced(2, None).unwrap();
        let m = build_correlation_model(&a, &schedule, 50, 50, gaussian(1.0)).unwrap();
        assert_relative_eq!(m.corr.get(0, 1), 1.0, epsilon = 1e-10);
        // square root still reproduces the rank-1 matrix
        let mut acc = 0.0;
        for k in 0..2 {
            acc += m.sqrt_corr.get(0, k) * m.sqrt_corr.get(1, k);
        }
        assert_relative_eq!(acc, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn correlation_model_matches_brute_force() {
        let a = study_a_two_columns(false);
        let schedule = AnalysisSchedule::equally_spaced(2, None).unwrap();
        let kernel = gaussian(0.9);
        let m = build_correlation_model(&a, &schedule, 40, 60, kernel).unwrap();

        // brute-force oracle: raw second-moment form, double loop
        let fit1 = fit_mu(&a, Arm::Control, 1, kernel).unwrap();
        let fit2 = fit_mu(&a, Arm::Control, 2, kernel).unwrap();
        let fits = [&fit1, &fit2];
        let mut sigma = [[0.0f64; 2]; 2];
        for (arm, n_b) in [(Arm::Control, 40.0), (Arm::Treatment, 60.0)] {
            let subjects: Vec<&SubjectA> =
                a.subjects.iter().filter(|s| s.arm == arm).collect();
            let n = subjects.len() as f64;
            for j in 0..2 {
                for jp in 0..2 {
                    let mut cross = 0.0;
                    let mut mj = 0.0;
                    let mut mjp = 0.0;
                    for s in &subjects {
                        let uj = fits[j].evaluate(s.surrogates[j]).unwrap();
                        let ujp = fits[jp].evaluate(s.surrogates[jp]).unwrap();
                        cross += uj * ujp;
                        mj += uj;
                        mjp += ujp;
                    }
                    let c = cross / n - (mj / n) * (mjp / n);
                    sigma[j][jp] += c / n_b;
                }
            }
        }
        for j in 0..2 {
            for jp in 0..2 {
                assert_relative_eq!(
                    m.sigma_tilde.get(j, jp),
                    sigma[j][jp],
                    max_relative = 1e-10
                );
            }
        }
        let want_corr = sigma[0][1] / (sigma[0][0] * sigma[1][1]).sqrt();
        assert_relative_eq!(m.corr.get(0, 1), want_corr, max_relative = 1e-10);
    }

    #[test]
    fn increments_are_not_independent_here() {
        // cov(j, j') differs from var(j): the classical simplification
        // does not apply to these statistics
        let a = study_a_two_columns(false);
        let schedule = AnalysisSchedule::equally_spaced(2, None).unwrap();
        let m = build_correlation_model(&a, &schedule, 50, 50, gaussian(0.9)).unwrap();
        let diff = (m.sigma_tilde.get(0, 1) - m.sigma_tilde.get(0, 0)).abs();
        assert!(diff > 1e-6, "sigma_01 {} vs sigma_00 {}", m.sigma_tilde.get(0, 1), m.sigma_tilde.get(0, 0));
    }

    #[test]
    fn model_json_round_trip() {
        let a = study_a_two_columns(false);
        let schedule = AnalysisSchedule::equally_spaced(2, None).unwrap();
        let m = build_correlation_model(&a, &schedule, 50, 50, gaussian(1.0)).unwrap();
        let text = m.to_json().unwrap();
        let back = CorrelationModel::from_json(&text).unwrap();
        assert_eq!(back.corr, m.corr);
        assert_eq!(back.n_b0, 50);
    }
}
