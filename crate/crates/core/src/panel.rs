//! Panel model and its matrix form `Y = X Theta + E`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, PanelIssue, Result};
use crate::matrix::Matrix;

/// One long-format panel row.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub unit: String,
    pub time: i64,
    pub outcome: f64,
    pub treated: bool,
}

/// Balanced panel with a single treatment date after the first `t0` periods.
///
/// Units are kept treated-first, then in lexicographic order of their
/// identifiers, so column `j` of a weight matrix always refers to treated
/// unit `j`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PanelData {
    units: Vec<String>,
    times: Vec<i64>,
    outcomes: Matrix,
    treated: Vec<bool>,
    t0: usize,
}

impl PanelData {
    /// Builds a panel from parts, reordering units into canonical order.
    ///
    /// `outcomes` is `times.len() x units.len()`.
    pub fn new(units: Vec<String>, times: Vec<i64>, outcomes: Matrix, treated: Vec<bool>, t0: usize) -> Result<Self> {
        if units.len() != treated.len() {
            return Err(Error::arg("units and treated flags differ in length"));
        }
        if outcomes.shape() != (times.len(), units.len()) {
            return Err(Error::shape("panel outcomes", (times.len(), units.len()), outcomes.shape()));
        }
        if times.is_empty() || units.is_empty() {
            return Err(PanelIssue::Empty.into());
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg("time indices must be strictly increasing"));
        }
        if t0 == 0 {
            return Err(PanelIssue::NoPreTreatmentPeriods.into());
        }
        if t0 > times.len() {
            return Err(Error::arg("t0 exceeds the number of periods"));
        }
        if !treated.iter().any(|t| *t) {
            return Err(PanelIssue::NoTreatedUnits.into());
        }
        if treated.iter().all(|t| *t) {
            return Err(PanelIssue::NoControlUnits.into());
        }
        for (j, unit) in units.iter().enumerate() {
            for (i, time) in times.iter().enumerate() {
                if !outcomes[(i, j)].is_finite() {
                    return Err(PanelIssue::NonFiniteOutcome { unit: unit.clone(), time: *time }.into());
                }
            }
        }
        let mut order: Vec<usize> = (0..units.len()).collect();
        order.sort_by(|a, b| treated[*b].cmp(&treated[*a]).then_with(|| units[*a].cmp(&units[*b])));
        if order.windows(2).any(|w| units[w[0]] == units[w[1]]) {
            return Err(Error::arg("duplicate unit identifiers"));
        }
        Ok(PanelData {
            units: order.iter().map(|j| units[*j].clone()).collect(),
            treated: order.iter().map(|j| treated[*j]).collect(),
            outcomes: outcomes.select_cols(&order),
            times,
            t0,
        })
    }

    /// Assembles a panel from long-format rows. `t0` becomes the number of
    /// distinct times `<= t0_marker`.
    pub fn from_observations<I>(observations: I, t0_marker: i64) -> Result<Self>
    where
        I: IntoIterator<Item = Observation>,
    {
        let mut by_unit: BTreeMap<String, (bool, BTreeMap<i64, f64>)> = BTreeMap::new();
        let mut all_times: BTreeMap<i64, ()> = BTreeMap::new();
        for obs in observations {
            if !obs.outcome.is_finite() {
                return Err(PanelIssue::NonFiniteOutcome { unit: obs.unit, time: obs.time }.into());
            }
            all_times.insert(obs.time, ());
            let entry = by_unit.entry(obs.unit.clone()).or_insert_with(|| (obs.treated, BTreeMap::new()));
            if entry.0 != obs.treated {
                return Err(PanelIssue::InconsistentTreatment { unit: obs.unit }.into());
            }
            if entry.1.insert(obs.time, obs.outcome).is_some() {
                return Err(PanelIssue::DuplicateCell { unit: obs.unit, time: obs.time }.into());
            }
        }
        if by_unit.is_empty() {
            return Err(PanelIssue::Empty.into());
        }
        let times: Vec<i64> = all_times.into_keys().collect();

        // Canonical order first so the reported missing cell is deterministic.
        let mut units: Vec<(&String, &(bool, BTreeMap<i64, f64>))> = by_unit.iter().collect();
        units.sort_by(|a, b| (b.1).0.cmp(&(a.1).0).then_with(|| a.0.cmp(b.0)));
        let mut outcomes = Matrix::zeros(times.len(), units.len());
        for (j, (unit, (_, series))) in units.iter().enumerate() {
            for (i, time) in times.iter().enumerate() {
                match series.get(time) {
                    Some(v) => outcomes[(i, j)] = *v,
                    None => {
                        return Err(PanelIssue::MissingCell { unit: (*unit).clone(), time: *time }.into())
                    }
                }
            }
        }
        let t0 = times.iter().take_while(|t| **t <= t0_marker).count();
        let treated = units.iter().map(|(_, (flag, _))| *flag).collect();
        let names = units.iter().map(|(u, _)| (*u).clone()).collect();
        PanelData::new(names, times, outcomes, treated, t0)
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    /// `(t0 + t1) x (m + n)` outcomes in canonical unit order.
    pub fn outcomes(&self) -> &Matrix {
        &self.outcomes
    }

    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn t1(&self) -> usize {
        self.times.len() - self.t0
    }

    /// Number of treated units.
    pub fn m(&self) -> usize {
        self.treated.iter().filter(|t| **t).count()
    }

    /// Number of control units.
    pub fn n(&self) -> usize {
        self.units.len() - self.m()
    }

    pub fn treated_units(&self) -> &[String] {
        &self.units[..self.m()]
    }

    pub fn control_units(&self) -> &[String] {
        &self.units[self.m()..]
    }
}

/// Pre/post blocks for treated (`y`) and control (`x`) units.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DesignSplit {
    pub y_pre: Matrix,
    pub x_pre: Matrix,
    pub y_post: Matrix,
    pub x_post: Matrix,
}

impl DesignSplit {
    /// Checks the four blocks for conformable shapes.
    pub fn new(y_pre: Matrix, x_pre: Matrix, y_post: Matrix, x_post: Matrix) -> Result<Self> {
        let (t0, m) = y_pre.shape();
        let n = x_pre.cols();
        if t0 == 0 || m == 0 || n == 0 {
            return Err(Error::arg("design split needs t0, m, n >= 1"));
        }
        if x_pre.rows() != t0 {
            return Err(Error::shape("design x_pre", (t0, n), x_pre.shape()));
        }
        let t1 = y_post.rows();
        if y_post.cols() != m {
            return Err(Error::shape("design y_post", (t1, m), y_post.shape()));
        }
        if x_post.shape() != (t1, n) {
            return Err(Error::shape("design x_post", (t1, n), x_post.shape()));
        }
        Ok(DesignSplit { y_pre, x_pre, y_post, x_post })
    }

    pub fn t0(&self) -> usize {
        self.y_pre.rows()
    }

    pub fn t1(&self) -> usize {
        self.y_post.rows()
    }

    pub fn m(&self) -> usize {
        self.y_pre.cols()
    }

    pub fn n(&self) -> usize {
        self.x_pre.cols()
    }

    /// The same design restricted to the treated columns in `idx`.
    pub fn select_treated(&self, idx: &[usize]) -> DesignSplit {
        DesignSplit {
            y_pre: self.y_pre.select_cols(idx),
            x_pre: self.x_pre.clone(),
            y_post: self.y_post.select_cols(idx),
            x_post: self.x_post.clone(),
        }
    }
}

/// Partitions the panel's outcome matrix into treated/control and
/// pre/post blocks.
pub fn split(panel: &PanelData) -> DesignSplit {
    let (m, t0) = (panel.m(), panel.t0());
    let total = panel.times.len();
    let treated_idx: Vec<usize> = (0..m).collect();
    let control_idx: Vec<usize> = (m..panel.units.len()).collect();
    let pre = panel.outcomes.row_range(0, t0);
    let post = panel.outcomes.row_range(t0, total);
    DesignSplit {
        y_pre: pre.select_cols(&treated_idx),
        x_pre: pre.select_cols(&control_idx),
        y_post: post.select_cols(&treated_idx),
        x_post: post.select_cols(&control_idx),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn obs(unit: &str, time: i64, outcome: f64, treated: bool) -> Observation {
        Observation { unit: unit.to_string(), time, outcome, treated }
    }

    #[test]
    fn smallest_grid() {
        let rows = vec![
            obs("B", 1, 1.0, false),
            obs("A", 1, 2.0, true),
            obs("A", 2, 3.0, true),
            obs("B", 2, 4.0, false),
            obs("A", 3, 5.0, true),
            obs("B", 3, 6.0, false),
        ];
        let p = PanelData::from_observations(rows, 2).unwrap();
        assert_eq!((p.m(), p.n(), p.t0(), p.t1()), (1, 1, 2, 1));
        assert_eq!(p.units(), &["A".to_string(), "B".to_string()]);
        assert_eq!(p.outcomes().col(0), vec![2.0, 3.0, 5.0]);
    }

    #[test]
    fn missing_cell_is_named() {
        let rows = vec![
            obs("A", 1, 0.0, true),
            obs("A", 2, 0.0, true),
            obs("A", 3, 0.0, true),
            obs("B", 1, 0.0, false),
            obs("B", 2, 0.0, false),
        ];
        let err = PanelData::from_observations(rows, 2).unwrap_err();
        assert_eq!(err, Error::Panel(PanelIssue::MissingCell { unit: "B".to_string(), time: 3 }));
    }

    #[test]
    fn inconsistent_flag_and_duplicates() {
        let err = PanelData::from_observations(vec![obs("A", 1, 0.0, true), obs("A", 2, 0.0, false)], 1).unwrap_err();
        assert!(matches!(err, Error::Panel(PanelIssue::InconsistentTreatment { .. })));
        let err = PanelData::from_observations(vec![obs("A", 1, 0.0, true), obs("A", 1, 1.0, true)], 1).unwrap_err();
        assert!(matches!(err, Error::Panel(PanelIssue::DuplicateCell { .. })));
    }

    #[test]
    fn needs_both_groups_and_pre_period() {
        let all_treated = vec![obs("A", 1, 0.0, true), obs("B", 1, 0.0, true)];
        assert!(matches!(
            PanelData::from_observations(all_treated, 1),
            Err(Error::Panel(PanelIssue::NoControlUnits))
        ));
        let rows = vec![obs("A", 5, 0.0, true), obs("B", 5, 0.0, false)];
        assert!(matches!(
            PanelData::from_observations(rows, 1),
            Err(Error::Panel(PanelIssue::NoPreTreatmentPeriods))
        ));
        assert!(matches!(
            PanelData::from_observations(vec![obs("A", 1, f64::NAN, true)], 1),
            Err(Error::Panel(PanelIssue::NonFiniteOutcome { .. }))
        ));
    }

    #[test]
    fn split_dimensions_and_copy() {
        let outcomes = Matrix::from_fn(4, 3, |i, j| if j == 2 { 5.0 } else { (i * 3 + j) as f64 });
        let units = vec!["t".to_string(), "c1".to_string(), "c2".to_string()];
        let p = PanelData::new(units, vec![1, 2, 3, 4], outcomes, vec![true, false, false], 3).unwrap();
        let s = split(&p);
        assert_eq!(s.y_pre.shape(), (3, 1));
        assert_eq!(s.x_pre.shape(), (3, 2));
        assert_eq!(s.y_post.shape(), (1, 1));
        assert_eq!(s.x_post.shape(), (1, 2));
        assert_eq!(s.x_pre.col(1), vec![5.0; 3]);
        let rebuilt = s.y_pre.hcat(&s.x_pre).unwrap().vcat(&s.y_post.hcat(&s.x_post).unwrap()).unwrap();
        assert_eq!(&rebuilt, p.outcomes());
    }
}
