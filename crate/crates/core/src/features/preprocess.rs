//! Per-session normalization and summaries of Fex tables.

use crate::fexdata::{AuVector, EmotionVector, FexRow, FexTable};
use crate::geometry::{FaceBox, LandmarkSet};

use super::FeatureError;

/// Reference expression subtracted from AU and emotion columns.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Baseline {
    /// Each session's column-wise (lower) median, NaNs skipped.
    Median,
    /// Fixed values recorded separately, e.g. a neutral-pose calibration frame.
    External { aus: [f64; 20], emotions: [f64; 7] },
}

/// Median ignoring NaN; the lower of the two middle values for even counts.
/// NaN when no finite value exists.
pub fn lower_median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn column_medians<const N: usize>(rows: &[FexRow], get: impl Fn(&FexRow) -> Option<[f64; N]>) -> [f64; N] {
    let vals: Vec<[f64; N]> = rows.iter().filter_map(&get).collect();
    std::array::from_fn(|j| lower_median(vals.iter().map(|v| v[j])))
}

fn subtract<const N: usize>(v: [f64; N], base: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|j| v[j] - base[j])
}

/// Subtracts a baseline from AU and emotion columns, session by session.
/// NaN cells stay NaN.
pub fn baseline_normalize(table: &FexTable, mode: &Baseline) -> Result<FexTable, FeatureError> {
    if table.is_empty() && *mode == Baseline::Median {
        return Err(FeatureError::EmptySession(String::new()));
    }
    let mut out_rows: Vec<Option<FexRow>> = vec![None; table.len()];
    let mut positions: std::collections::HashMap<&str, Vec<usize>> = Default::default();
    for (i, r) in table.rows().iter().enumerate() {
        positions.entry(r.session.as_str()).or_default().push(i);
    }
    for (_, idx) in positions {
        let rows: Vec<FexRow> = idx.iter().map(|&i| table.rows()[i].clone()).collect();
        let (au_base, emo_base) = match mode {
            Baseline::Median => {
                (column_medians(&rows, |r| r.aus.map(|a| a.0)), column_medians(&rows, |r| r.emotions.map(|e| e.0)))
            }
            Baseline::External { aus, emotions } => (*aus, *emotions),
        };
        for (row, i) in rows.into_iter().zip(idx) {
            let mut row = row;
            row.aus = row.aus.map(|a| AuVector(subtract(a.0, &au_base)));
            row.emotions = row.emotions.map(|e| EmotionVector(subtract(e.0, &emo_base)));
            out_rows[i] = Some(row);
        }
    }
    let rows = out_rows.into_iter().map(|r| r.expect("every row assigned")).collect();
    Ok(FexTable::new(table.extra_columns().to_vec(), rows).expect("row order unchanged"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryStat {
    Mean,
    Max,
    Min,
}

impl std::str::FromStr for SummaryStat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "min" => Ok(Self::Min),
            other => Err(format!("unknown summary statistic `{other}`")),
        }
    }
}

impl SummaryStat {
    /// NaN-skipping reduction; NaN when every value is NaN.
    pub fn reduce(self, values: impl IntoIterator<Item = f64>) -> f64 {
        let mut count = 0usize;
        let mut acc = match self {
            SummaryStat::Mean => 0.0,
            SummaryStat::Max => f64::NEG_INFINITY,
            SummaryStat::Min => f64::INFINITY,
        };
        for v in values.into_iter().filter(|v| !v.is_nan()) {
            count += 1;
            acc = match self {
                SummaryStat::Mean => acc + v,
                SummaryStat::Max => acc.max(v),
                SummaryStat::Min => acc.min(v),
            };
        }
        match (count, self) {
            (0, _) => f64::NAN,
            (n, SummaryStat::Mean) => acc / n as f64,
            _ => acc,
        }
    }
}

fn reduce_group(stat: SummaryStat, rows: &[Vec<f64>], width: usize) -> Option<Vec<f64>> {
    if rows.is_empty() {
        return None;
    }
    let out: Vec<f64> = (0..width).map(|j| stat.reduce(rows.iter().map(|r| r[j]))).collect();
    out.iter().any(|v| !v.is_nan()).then_some(out)
}

/// One row per session: per-column statistic with NaNs skipped, frame 0 and
/// the session's first timestamp. Extra columns take the first row's values.
pub fn summarize_sessions(table: &FexTable, stat: SummaryStat) -> FexTable {
    let mut rows = Vec::new();
    for (session, part) in table.group_by_session() {
        let first = &part.rows()[0];
        let mut row = FexRow::new(0, first.time_s);
        row.session = session;
        row.extra = first.extra.clone();

        let boxes: Vec<Vec<f64>> =
            part.rows().iter().filter_map(|r| r.facebox.map(|b| vec![b.x, b.y, b.width, b.height, b.score])).collect();
        row.facebox =
            reduce_group(stat, &boxes, 5).map(|v| FaceBox { x: v[0], y: v[1], width: v[2], height: v[3], score: v[4] });
        let lms: Vec<Vec<f64>> = part.rows().iter().filter_map(|r| r.landmarks.as_ref().map(|l| l.to_flat())).collect();
        row.landmarks = reduce_group(stat, &lms, 136).and_then(|v| LandmarkSet::from_flat(&v).ok());
        let aus: Vec<Vec<f64>> = part.rows().iter().filter_map(|r| r.aus.map(|a| a.0.to_vec())).collect();
        row.aus = reduce_group(stat, &aus, 20).map(|v| AuVector(v.try_into().expect("20")));
        let emo: Vec<Vec<f64>> = part.rows().iter().filter_map(|r| r.emotions.map(|e| e.0.to_vec())).collect();
        row.emotions = reduce_group(stat, &emo, 7).map(|v| EmotionVector(v.try_into().expect("7")));
        rows.push(row);
    }
    FexTable::new(table.extra_columns().to_vec(), rows).expect("one row per session")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn au12_table(values: &[f64], session: &str) -> Vec<FexRow> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut r = FexRow::new(i as u64, i as f64);
                r.session = session.into();
                let mut a = AuVector([0.0; 20]);
                a.set("AU12", v);
                r.aus = Some(a);
                r
            })
            .collect()
    }

    fn au12(t: &FexTable) -> Vec<f64> {
        t.rows().iter().map(|r| r.aus.unwrap().get("AU12").unwrap()).collect()
    }

    #[test]
    fn constant_session_normalizes_to_zero() {
        let t = FexTable::from_rows(au12_table(&[0.7; 5], "s")).unwrap();
        let n = baseline_normalize(&t, &Baseline::Median).unwrap();
        assert!(au12(&n).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn median_subtraction_by_hand() {
        let t = FexTable::from_rows(au12_table(&[0.1, 0.5, 0.9], "s")).unwrap();
        let n = au12(&baseline_normalize(&t, &Baseline::Median).unwrap());
        let expected = [-0.4, 0.0, 0.4];
        for (a, b) in n.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn external_baseline() {
        let t = FexTable::from_rows(au12_table(&[0.2, 0.3], "s")).unwrap();
        let mut aus = [0.0; 20];
        aus[8] = 0.2;
        let n = au12(&baseline_normalize(&t, &Baseline::External { aus, emotions: [0.0; 7] }).unwrap());
        assert_eq!(n[0], 0.0);
        assert!((n[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn even_median_is_lower() {
        assert_eq!(lower_median([4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median([f64::NAN, 5.0]), 5.0);
        assert!(lower_median([f64::NAN]).is_nan());
    }

    #[test]
    fn summaries() {
        let mut rows = au12_table(&[0.2, 0.8], "a");
        rows.extend(au12_table(&[0.4], "b"));
        let t = FexTable::from_rows(rows).unwrap();
        let max = summarize_sessions(&t, SummaryStat::Max);
        assert_eq!(au12(&max), vec![0.8, 0.4]);
        let min = summarize_sessions(&t, SummaryStat::Min);
        assert_eq!(au12(&min), vec![0.2, 0.4]);
        let mean = summarize_sessions(&t, SummaryStat::Mean);
        assert!((au12(&mean)[0] - 0.5).abs() < 1e-15);
        assert_eq!(mean.rows()[0].frame, 0);
        assert_eq!(mean.rows()[0].time_s, 0.0);
        assert!(mean.rows()[0].landmarks.is_none());
    }
}
