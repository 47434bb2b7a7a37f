//! Synthetic panels shaped like monthly county unemployment data, for
//! fixtures and ingestion tests.

use synthmsc_core::sim::{gen_ar1_panel, SplitMix64};
use synthmsc_core::{Matrix, PanelData, Result};

/// Shape and seed of a generated county-like panel.
#[derive(Debug, Clone, PartialEq)]
pub struct CountyShape {
    pub treated: usize,
    pub controls: usize,
    pub pre_months: usize,
    pub post_months: usize,
    pub seed: u64,
    /// Added to every treated outcome after the marker.
    pub post_shift: f64,
}

impl CountyShape {
    /// Month index of the last pre-treatment month; months are numbered from 1.
    pub fn t0_marker(&self) -> i64 {
        self.pre_months as i64
    }
}

/// Controls are seasonal AR(1) rates around 4 percent; each treated county
/// mixes three controls with random convex weights plus small noise.
pub fn county_panel(shape: &CountyShape) -> Result<PanelData> {
    let months = shape.pre_months + shape.post_months;
    let base = gen_ar1_panel(shape.controls, months, shape.seed, 100);
    let season = |t: usize| 0.3 * (2.0 * core::f64::consts::PI * (t % 12) as f64 / 12.0).sin();
    let controls = Matrix::from_fn(months, shape.controls, |t, k| 4.0 + 0.8 * base[(t, k)] + season(t));

    let mut rng = SplitMix64::new(shape.seed ^ 0x5eed);
    let mut outcomes = Matrix::zeros(months, shape.treated + shape.controls);
    for j in 0..shape.treated {
        let picks: Vec<usize> = (0..3).map(|_| rng.below(shape.controls as u64) as usize).collect();
        let raw: Vec<f64> = (0..3).map(|_| rng.uniform() + 0.1).collect();
        let total: f64 = raw.iter().sum();
        for t in 0..months {
            let mut v: f64 = picks.iter().zip(&raw).map(|(&k, w)| w / total * controls[(t, k)]).sum();
            v += 0.1 * rng.normal();
            if t >= shape.pre_months {
                v += shape.post_shift;
            }
            outcomes[(t, j)] = v;
        }
    }
    for k in 0..shape.controls {
        for t in 0..months {
            outcomes[(t, shape.treated + k)] = controls[(t, k)];
        }
    }

    // FIPS-style five-digit codes, treated and control ids interleaved
    let units = (0..shape.treated + shape.controls).map(|i| format!("{:05}", 1001 + 2 * i)).collect();
    let treated = (0..shape.treated + shape.controls).map(|i| i < shape.treated).collect();
    let times = (1..=months as i64).collect();
    PanelData::new(units, times, outcomes, treated, shape.pre_months)
}
