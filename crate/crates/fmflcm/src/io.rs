//! Data ingestion and serialization: the long CSV schema, truth
//! sidecars, dataset normalization, and the JSON fit report. All writes
//! are atomic (temp file + rename).

use crate::basis::SplineBasis;
use crate::dataset::{FunctionalDataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::params::MixtureParams;
use crate::penalty::PenaltyKind;
use crate::rem::FitResult;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

pub const REPORT_SCHEMA_VERSION: &str = "fmflcm-report-1";

/// Writes bytes atomically: a temp file in the destination directory is
/// flushed and renamed over the target, so interrupted runs never leave
/// partial output.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Loads a long-format CSV with header `subject_id,time,y,x1,...,xp`.
/// Rows are grouped by subject, sorted by time, and times are affinely
/// rescaled to [0, 1] using the global minimum and maximum.
pub fn load_long_csv(path: &Path) -> Result<FunctionalDataset<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 4
        || headers.get(0) != Some("subject_id")
        || headers.get(1) != Some("time")
        || headers.get(2) != Some("y")
    {
        return Err(Error::CsvFormat {
            line: 1,
            msg: "expected header subject_id,time,y,x1,...,xp".into(),
        });
    }
    let p = headers.len() - 3;
    for (j, name) in headers.iter().skip(3).enumerate() {
        if name != format!("x{}", j + 1) {
            return Err(Error::CsvFormat {
                line: 1,
                msg: format!("covariate column {} must be named x{}", j + 4, j + 1),
            });
        }
    }

    // (time, y, x-row) tuples per subject, in first-appearance order.
    let mut subjects: BTreeMap<String, Vec<(f64, f64, Vec<f64>)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::CsvFormat {
                line,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let parse = |field: usize| -> Result<f64> {
            record
                .get(field)
                .unwrap()
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::CsvFormat {
                    line,
                    msg: format!(
                        "non-numeric value {:?} in column {}",
                        record.get(field).unwrap(),
                        headers.get(field).unwrap()
                    ),
                })
        };
        let id = record.get(0).unwrap().to_string();
        let t = parse(1)?;
        let y = parse(2)?;
        let x: Vec<f64> = (3..headers.len()).map(parse).collect::<Result<_>>()?;
        let rows = subjects.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        if rows.iter().any(|&(prev, _, _)| prev == t) {
            return Err(Error::CsvFormat {
                line,
                msg: format!("duplicate (subject, time) pair ({id}, {t})"),
            });
        }
        rows.push((t, y, x));
    }
    if order.is_empty() {
        return Err(Error::InvalidInput("CSV contains no data rows".into()));
    }

    let tmin = subjects
        .values()
        .flatten()
        .map(|&(t, _, _)| t)
        .fold(f64::INFINITY, f64::min);
    let tmax = subjects
        .values()
        .flatten()
        .map(|&(t, _, _)| t)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(tmax > tmin) {
        return Err(Error::InvalidInput(
            "time values must span a nondegenerate interval".into(),
        ));
    }

    let records = order
        .into_iter()
        .map(|id| {
            let mut rows = subjects.remove(&id).unwrap();
            rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let times: Vec<f64> = rows.iter().map(|r| (r.0 - tmin) / (tmax - tmin)).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let x: Vec<f64> = rows.iter().flat_map(|r| r.2.iter().copied()).collect();
            SubjectRecord { id, times, y, x }
        })
        .collect();
    FunctionalDataset::new(records, p)
}

/// Writes a dataset in the long CSV schema (times as stored, already in
/// [0, 1]).
pub fn write_long_csv(path: &Path, data: &FunctionalDataset<f64>) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["subject_id".to_string(), "time".into(), "y".into()];
        header.extend((1..=data.p).map(|j| format!("x{j}")));
        writer.write_record(&header)?;
        for subj in &data.subjects {
            for (s, &t) in subj.times.iter().enumerate() {
                let mut row = vec![subj.id.clone(), format!("{t:.17e}"), format!("{:.17e}", subj.y[s])];
                row.extend(subj.x_row(s, data.p).iter().map(|v| format!("{v:.17e}")));
                writer.write_record(&row)?;
            }
        }
        writer.flush()?;
    }
    atomic_write(path, &buf)
}

/// Ground-truth sidecar accompanying a simulated dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub labels: Vec<usize>,
    pub sigma2: Vec<f64>,
    pub active_set: Vec<usize>,
    /// Realized mean integrated squared signal of the generating draw.
    pub mean_signal_energy: f64,
}

pub fn write_truth(path: &Path, truth: &TruthSidecar) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(truth)?.as_bytes())
}

pub fn load_truth(path: &Path) -> Result<TruthSidecar> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Scale factors applied by [`normalize_dataset`], for back-transforming
/// fitted coefficients: beta_original = beta_normalized / scale_j.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalizationRecord {
    /// Root global mean square per retained covariate, in the retained
    /// column order.
    pub scales: Vec<f64>,
    /// Original 0-based indices of columns dropped for zero scale.
    pub dropped: Vec<usize>,
    /// Original index of each retained column.
    pub retained: Vec<usize>,
    pub log_response: bool,
    pub warnings: Vec<String>,
}

/// Optionally log-transforms the response and divides each covariate
/// column by the root of its global mean square
/// (sum_i sum_s X_ij(t_is)^2 / sum_i S_i), so retained columns have unit
/// mean square. All-zero columns are dropped with a warning.
pub fn normalize_dataset(
    data: &FunctionalDataset<f64>,
    log_response: bool,
) -> Result<(FunctionalDataset<f64>, NormalizationRecord)> {
    let total_obs: usize = data.subjects.iter().map(|s| s.times.len()).sum();
    let mut mean_square = vec![0.0f64; data.p];
    for subj in &data.subjects {
        for s in 0..subj.times.len() {
            for (j, &v) in subj.x_row(s, data.p).iter().enumerate() {
                mean_square[j] += v * v;
            }
        }
    }
    for m in mean_square.iter_mut() {
        *m /= total_obs as f64;
    }
    let mut warnings = Vec::new();
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    let mut scales = Vec::new();
    for (j, &m) in mean_square.iter().enumerate() {
        if m > 0.0 {
            retained.push(j);
            scales.push(m.sqrt());
        } else {
            dropped.push(j);
            warnings.push(format!(
                "covariate x{} has zero mean square; column dropped",
                j + 1
            ));
        }
    }
    if retained.is_empty() {
        return Err(Error::Degenerate("all covariate columns are zero".into()));
    }

    let subjects = data
        .subjects
        .iter()
        .map(|subj| {
            let y: Vec<f64> = if log_response {
                subj.y
                    .iter()
                    .map(|&v| {
                        if v <= 0.0 {
                            Err(Error::InvalidInput(format!(
                                "subject {}: nonpositive response under the log transform",
                                subj.id
                            )))
                        } else {
                            Ok(v.ln())
                        }
                    })
                    .collect::<Result<_>>()?
            } else {
                subj.y.clone()
            };
            let mut x = Vec::with_capacity(subj.times.len() * retained.len());
            for s in 0..subj.times.len() {
                let row = subj.x_row(s, data.p);
                for (col, &j) in retained.iter().enumerate() {
                    x.push(row[j] / scales[col]);
                }
            }
            Ok(SubjectRecord {
                id: subj.id.clone(),
                times: subj.times.clone(),
                y,
                x,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let normalized = FunctionalDataset::new(subjects, retained.len())?;
    Ok((
        normalized,
        NormalizationRecord {
            scales,
            dropped,
            retained,
            log_response,
            warnings,
        },
    ))
}

/// Serializable snapshot of a finished fit, sufficient to reconstruct
/// the coefficient functions and recompute the information criteria.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: String,
    pub penalty: String,
    pub lambda: f64,
    pub rho: f64,
    pub r: f64,
    pub k: usize,
    pub p: usize,
    pub basis_dim: usize,
    pub interior_knots: Vec<f64>,
    /// Row-major (j, k, basis coefficient) spline coefficients.
    pub coefficients: Vec<f64>,
    pub pi: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub support: Vec<(usize, usize)>,
    pub selected_covariates: Vec<usize>,
    pub labels: Vec<usize>,
    pub trace: Vec<f64>,
    pub loglik: f64,
    pub df: f64,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub reseeds: usize,
    pub seed: u64,
}

pub fn penalty_name(kind: PenaltyKind) -> &'static str {
    match kind {
        PenaltyKind::Fs => "fs",
        PenaltyKind::FsNet => "fs-net",
        PenaltyKind::FgsNet => "fgs-net",
        PenaltyKind::Rp => "rp",
    }
}

pub fn penalty_from_name(name: &str) -> Result<PenaltyKind> {
    match name {
        "fs" => Ok(PenaltyKind::Fs),
        "fs-net" => Ok(PenaltyKind::FsNet),
        "fgs-net" => Ok(PenaltyKind::FgsNet),
        "rp" => Ok(PenaltyKind::Rp),
        other => Err(Error::InvalidInput(format!("unknown penalty {other:?}"))),
    }
}

impl FitReport {
    pub fn from_fit(fit: &FitResult<f64>, basis: &SplineBasis<f64>) -> Self {
        FitReport {
            schema_version: REPORT_SCHEMA_VERSION.into(),
            penalty: penalty_name(fit.chosen.kind).into(),
            lambda: fit.chosen.lambda,
            rho: fit.chosen.rho,
            r: fit.chosen.r,
            k: fit.params.k,
            p: fit.params.p,
            basis_dim: fit.params.l,
            interior_knots: basis.interior_knots.clone(),
            coefficients: fit.params.b.clone(),
            pi: fit.params.pi.clone(),
            sigma2: fit.params.sigma2.clone(),
            support: fit.support.clone(),
            selected_covariates: fit.selected_covariates.clone(),
            labels: fit.labels.clone(),
            trace: fit.trace.clone(),
            loglik: fit.loglik,
            df: fit.df,
            aic: fit.aic,
            bic: fit.bic,
            converged: fit.converged,
            iterations: fit.iterations,
            reseeds: fit.reseeds,
            seed: fit.seed,
        }
    }

    /// Rebuilds the spline basis and coefficient parameters.
    pub fn reconstruct(&self) -> Result<(SplineBasis<f64>, MixtureParams<f64>)> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported report schema {:?}",
                self.schema_version
            )));
        }
        let basis = SplineBasis::from_interior_knots(&self.interior_knots, self.r)?;
        if basis.l != self.basis_dim {
            return Err(Error::Dimension(
                "report basis dimension does not match its knots".into(),
            ));
        }
        let params = MixtureParams {
            k: self.k,
            p: self.p,
            l: self.basis_dim,
            b: self.coefficients.clone(),
            sigma2: self.sigma2.clone(),
            pi: self.pi.clone(),
        };
        params.validate()?;
        Ok((basis, params))
    }
}

pub fn write_report(path: &Path, report: &FitReport) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(report)?.as_bytes())
}

pub fn load_report(path: &Path) -> Result<FitReport> {
    let report: FitReport = serde_json::from_slice(&std::fs::read(path)?)?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported report schema {:?}",
            report.schema_version
        )));
    }
    Ok(report)
}

/// Coefficient curves evaluated on an equally spaced grid, as CSV with
/// columns `covariate,cluster,time,value`.
pub fn write_coefficient_curves(
    path: &Path,
    params: &MixtureParams<f64>,
    basis: &SplineBasis<f64>,
    grid_len: usize,
) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buf);
        writer.write_record(["covariate", "cluster", "time", "value"])?;
        for j in 0..params.p {
            for k in 0..params.k {
                for g in 0..grid_len {
                    let t = g as f64 / (grid_len - 1) as f64;
                    let v = basis.eval_coefficient(params.b_block(j, k), t);
                    writer.write_record([
                        format!("{}", j + 1),
                        format!("{}", k + 1),
                        format!("{t:.6}"),
                        format!("{v:.12e}"),
                    ])?;
                }
            }
        }
        writer.flush()?;
    }
    atomic_write(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate_dataset, SimConfig};

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn toy_file_parses_with_rescaled_times() {
        let dir = tmpdir();
        let path = dir.path().join("toy.csv");
        std::fs::write(
            &path,
            "subject_id,time,y,x1,x2\n\
             a,2000,1.0,0.1,0.2\n\
             a,2005,2.0,0.3,0.4\n\
             a,2010,3.0,0.5,0.6\n\
             b,2000,4.0,0.7,0.8\n\
             b,2005,5.0,0.9,1.0\n\
             b,2010,6.0,1.1,1.2\n",
        )
        .unwrap();
        let data = load_long_csv(&path).unwrap();
        assert_eq!(data.subjects.len(), 2);
        assert_eq!(data.p, 2);
        assert_eq!(data.subjects[0].times, vec![0.0, 0.5, 1.0]);
        assert_eq!(data.subjects[1].y, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn duplicate_subject_time_rejected_with_line_number() {
        let dir = tmpdir();
        let path = dir.path().join("dup.csv");
        std::fs::write(
            &path,
            "subject_id,time,y,x1\na,0,1.0,0.1\na,1,2.0,0.2\na,1,3.0,0.3\n",
        )
        .unwrap();
        match load_long_csv(&path) {
            Err(Error::CsvFormat { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("duplicate"), "{msg}");
            }
            other => panic!("expected CsvFormat error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_ragged_rows_rejected() {
        let dir = tmpdir();
        let bad_num = dir.path().join("num.csv");
        std::fs::write(&bad_num, "subject_id,time,y,x1\na,0,oops,0.1\na,1,2,0.2\n").unwrap();
        assert!(matches!(
            load_long_csv(&bad_num),
            Err(Error::CsvFormat { line: 2, .. })
        ));
        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "subject_id,time,y,x1\na,0,1.0,0.1\na,1,2.0\n").unwrap();
        assert!(load_long_csv(&ragged).is_err());
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tmpdir();
        let path = dir.path().join("sim.csv");
        let sim = generate_dataset(&SimConfig::new(12, 7, 0.4, 5)).unwrap();
        write_long_csv(&path, &sim.data).unwrap();
        let back = load_long_csv(&path).unwrap();
        assert_eq!(back.subjects.len(), sim.data.subjects.len());
        for (a, b) in sim.data.subjects.iter().zip(&back.subjects) {
            assert_eq!(a.id, b.id);
            for (u, v) in a
                .times
                .iter()
                .chain(&a.y)
                .chain(&a.x)
                .zip(b.times.iter().chain(&b.y).chain(&b.x))
            {
                assert!((u - v).abs() < 1e-12, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn truth_sidecar_round_trips() {
        let dir = tmpdir();
        let path = dir.path().join("truth.json");
        let truth = TruthSidecar {
            labels: vec![0, 1, 2, 1],
            sigma2: vec![0.5, 0.5, 0.5],
            active_set: (0..6).collect(),
            mean_signal_energy: 6.0,
        };
        write_truth(&path, &truth).unwrap();
        let back = load_truth(&path).unwrap();
        assert_eq!(back.labels, truth.labels);
        assert_eq!(back.sigma2, truth.sigma2);
        assert_eq!(back.active_set, truth.active_set);
    }

    #[test]
    fn normalization_scales_and_back_transform() {
        let sim = generate_dataset(&SimConfig::new(10, 6, 0.2, 8)).unwrap();
        let (norm, record) = normalize_dataset(&sim.data, false).unwrap();
        assert!(record.dropped.is_empty());
        // Post-normalization global mean square of every column is 1.
        let total: usize = norm.subjects.iter().map(|s| s.times.len()).sum();
        for j in 0..norm.p {
            let ms: f64 = norm
                .subjects
                .iter()
                .flat_map(|s| (0..s.times.len()).map(move |t| s.x_row(t, norm.p)[j].powi(2)))
                .sum::<f64>()
                / total as f64;
            assert!((ms - 1.0).abs() < 1e-12, "column {j}: {ms}");
            // Back-transform identity: x_norm * scale = x_orig.
            let orig = sim.data.subjects[0].x_row(0, sim.data.p)[j];
            let scaled = norm.subjects[0].x_row(0, norm.p)[j] * record.scales[j];
            assert!((orig - scaled).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_becomes_unit_and_zero_column_dropped() {
        let times: Vec<f64> = vec![0.0, 0.5, 1.0];
        let subjects = vec![SubjectRecord {
            id: "a".into(),
            times: times.clone(),
            y: vec![1.0, 2.0, 3.0],
            x: vec![-2.0, 0.0, -2.0, 0.0, -2.0, 0.0],
        }];
        let data = FunctionalDataset::new(subjects, 2).unwrap();
        let (norm, record) = normalize_dataset(&data, false).unwrap();
        assert_eq!(norm.p, 1);
        assert_eq!(record.dropped, vec![1]);
        assert_eq!(record.retained, vec![0]);
        assert_eq!(record.warnings.len(), 1);
        // Constant -2 divided by |-2| gives -1 everywhere.
        assert_eq!(norm.subjects[0].x, vec![-1.0, -1.0, -1.0]);
    }

    #[test]
    fn log_transform_recovers_linear_response() {
        let times: Vec<f64> = vec![0.0, 0.5, 1.0];
        let lin: [f64; 3] = [1.5, -0.5, 2.0];
        let subjects = vec![SubjectRecord {
            id: "a".into(),
            times: times.clone(),
            y: lin.iter().map(|v| v.exp()).collect(),
            x: vec![1.0; 3],
        }];
        let data = FunctionalDataset::new(subjects, 1).unwrap();
        let (norm, _) = normalize_dataset(&data, true).unwrap();
        for (a, b) in norm.subjects[0].y.iter().zip(&lin) {
            assert!((a - b).abs() < 1e-14);
        }
        // Nonpositive response under the flag errors.
        let bad = FunctionalDataset::new(
            vec![SubjectRecord {
                id: "b".into(),
                times,
                y: vec![1.0, 0.0, 2.0],
                x: vec![1.0; 3],
            }],
            1,
        )
        .unwrap();
        assert!(normalize_dataset(&bad, true).is_err());
    }

    #[test]
    fn fit_report_round_trips_and_reconstructs() {
        use crate::penalty::PenaltyConfig;
        use crate::rem::{fit_fixed, EStepMode, InitSpec, StopSpec};
        use crate::tuning::basis_for;
        let dir = tmpdir();
        let sim = generate_dataset(&SimConfig::new(24, 6, 0.2, 13)).unwrap();
        let basis = basis_for(&sim.data, 1e-2).unwrap();
        let config = PenaltyConfig::new(PenaltyKind::FgsNet, 0.05, 0.5, 1e-2);
        let stop = StopSpec {
            tol: 1e-5,
            max_iter: 25,
            estep: EStepMode::Product,
        };
        let fit = fit_fixed(
            &sim.data,
            &basis,
            3,
            &config,
            &InitSpec::labels(sim.labels.clone()),
            &stop,
        )
        .unwrap();
        let report = FitReport::from_fit(&fit, &basis);
        let path = dir.path().join("fit.json");
        write_report(&path, &report).unwrap();
        let back = load_report(&path).unwrap();
        assert_eq!(back.coefficients, report.coefficients);
        assert_eq!(back.support, report.support);
        assert_eq!(back.aic, report.aic);
        // Reconstruction yields the same coefficient functions.
        let (basis2, params2) = back.reconstruct().unwrap();
        for t in [0.0, 0.3, 0.9] {
            for j in 0..params2.p {
                for c in 0..params2.k {
                    let a = basis.eval_coefficient(fit.params.b_block(j, c), t);
                    let b = basis2.eval_coefficient(params2.b_block(j, c), t);
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        // Recomputed criteria match the stored values exactly.
        let total_obs: usize = sim.data.subjects.iter().map(|s| s.times.len()).sum();
        assert_eq!(back.aic, -2.0 * back.loglik + 2.0 * back.df);
        assert_eq!(
            back.bic,
            -2.0 * back.loglik + back.df * (total_obs as f64).ln()
        );
    }

    #[test]
    fn atomic_write_replaces_existing_content() {
        let dir = tmpdir();
        let path = dir.path().join("out.txt");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
    }

    #[test]
    fn coefficient_curve_csv_has_expected_shape() {
        let dir = tmpdir();
        let sim = generate_dataset(&SimConfig::new(8, 6, 0.2, 3)).unwrap();
        let basis = crate::tuning::basis_for(&sim.data, 1e-2).unwrap();
        let params = MixtureParams::<f64>::zeros(6, 2, basis.l);
        let path = dir.path().join("curves.csv");
        write_coefficient_curves(&path, &params, &basis, 11).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 6 * 2 * 11);
        assert_eq!(lines[0], "covariate,cluster,time,value");
    }
}
