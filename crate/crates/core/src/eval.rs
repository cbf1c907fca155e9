//! KITTI-style flow metrics and evaluation reports.

use crate::error::{shape_err, Error, Result};
use crate::types::FlowField;

pub use crate::pipeline::{run_benchmark, BenchReport};

/// Absolute outlier threshold (pixels) of the KITTI Fl metric.
pub const FL_ABS_PX: f64 = 3.0;
/// Relative outlier threshold (fraction of GT magnitude) of the KITTI Fl metric.
pub const FL_REL: f64 = 0.05;

/// Endpoint-error statistics over the jointly valid pixels of two fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMetrics {
    /// Mean endpoint error in pixels.
    pub epe: f64,
    /// Outlier percentage in `[0, 100]`.
    pub fl: f64,
    /// Number of jointly valid pixels.
    pub pixels: usize,
    pub outliers: usize,
    pub epe_sum: f64,
}

#[inline]
pub fn is_outlier(err: f64, gt_mag: f64) -> bool {
    err > FL_ABS_PX && err > FL_REL * gt_mag
}

/// Computes EPE and Fl over pixels valid in both `pred` and `gt`.
pub fn flow_metrics(pred: &FlowField, gt: &FlowField) -> Result<FlowMetrics> {
    if pred.dims() != gt.dims() {
        return Err(shape_err("prediction vs ground truth", pred.dims(), gt.dims()));
    }
    let mut pixels = 0usize;
    let mut outliers = 0usize;
    let mut epe_sum = 0.0;
    for i in 0..pred.len() {
        if !(pred.valid()[i] && gt.valid()[i]) {
            continue;
        }
        let (gu, gv) = (gt.u()[i] as f64, gt.v()[i] as f64);
        let err = (pred.u()[i] as f64 - gu).hypot(pred.v()[i] as f64 - gv);
        epe_sum += err;
        pixels += 1;
        if is_outlier(err, gu.hypot(gv)) {
            outliers += 1;
        }
    }
    if pixels == 0 {
        return Err(Error::EmptyInput("no jointly valid pixels".into()));
    }
    Ok(FlowMetrics {
        epe: epe_sum / pixels as f64,
        fl: 100.0 * outliers as f64 / pixels as f64,
        pixels,
        outliers,
        epe_sum,
    })
}

pub fn epe(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    flow_metrics(pred, gt).map(|m| m.epe)
}

pub fn fl(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    flow_metrics(pred, gt).map(|m| m.fl)
}

/// One evaluated image. `fl` and `density` are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub name: String,
    pub epe: f64,
    pub fl: f64,
    pub density: f64,
}

/// How per-image records are combined into the aggregate row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Unweighted mean over images.
    #[default]
    MeanOverImages,
    /// Every evaluated pixel counts once, regardless of its image.
    PooledPixels,
}

/// Per-image metrics plus their aggregate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    records: Vec<ImageRecord>,
    // (pixels, outliers, epe_sum) per record when known; used for pooling.
    pooled: Vec<Option<(usize, usize, f64)>>,
    aggregation: Aggregation,
}

impl EvalReport {
    pub fn with_aggregation(aggregation: Aggregation) -> Self {
        Self { aggregation, ..Self::default() }
    }

    pub fn push(&mut self, record: ImageRecord) {
        self.records.push(record);
        self.pooled.push(None);
    }

    /// Adds a record computed from metrics, keeping the pixel counts for
    /// pooled aggregation.
    pub fn push_metrics(&mut self, name: impl Into<String>, m: &FlowMetrics, density: f64) {
        self.records.push(ImageRecord { name: name.into(), epe: m.epe, fl: m.fl, density });
        self.pooled.push(Some((m.pixels, m.outliers, m.epe_sum)));
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    /// Orders records by image name so that reports do not depend on the
    /// order in which images finished.
    pub fn sort_by_name(&mut self) {
        let mut idx: Vec<usize> = (0..self.records.len()).collect();
        idx.sort_by(|&a, &b| self.records[a].name.cmp(&self.records[b].name));
        self.records = idx.iter().map(|&i| self.records[i].clone()).collect();
        self.pooled = idx.iter().map(|&i| self.pooled[i]).collect();
    }

    /// Aggregate row named `mean`; `None` for an empty report.
    pub fn aggregate(&self) -> Option<ImageRecord> {
        if self.records.is_empty() {
            return None;
        }
        let n = self.records.len() as f64;
        let density = self.records.iter().map(|r| r.density).sum::<f64>() / n;
        let pooled: Option<Vec<_>> = self.pooled.iter().copied().collect();
        match (self.aggregation, pooled) {
            (Aggregation::PooledPixels, Some(p)) => {
                let pixels: usize = p.iter().map(|t| t.0).sum();
                let outliers: usize = p.iter().map(|t| t.1).sum();
                let epe_sum: f64 = p.iter().map(|t| t.2).sum();
                Some(ImageRecord {
                    name: "mean".into(),
                    epe: epe_sum / pixels as f64,
                    fl: 100.0 * outliers as f64 / pixels as f64,
                    density,
                })
            }
            _ => Some(ImageRecord {
                name: "mean".into(),
                epe: self.records.iter().map(|r| r.epe).sum::<f64>() / n,
                fl: self.records.iter().map(|r| r.fl).sum::<f64>() / n,
                density,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(u: f32, v: f32) -> FlowField {
        FlowField::new(1, 1, vec![u], vec![v], vec![true]).unwrap()
    }

    #[test]
    fn epe_examples() {
        let f = FlowField::from_fn(3, 3, |x, y| Some([x as f64, y as f64 * 2.0]));
        assert_eq!(epe(&f, &f).unwrap(), 0.0);
        assert_eq!(epe(&single(3.0, 4.0), &single(0.0, 0.0)).unwrap(), 5.0);
        let pred = FlowField::new(2, 1, vec![1.0, 3.0], vec![0.0, 0.0], vec![true, true]).unwrap();
        assert_eq!(epe(&pred, &FlowField::zeros(2, 1)).unwrap(), 2.0);
    }

    #[test]
    fn fl_examples() {
        let f = single(10.0, 0.0);
        assert_eq!(fl(&f, &f).unwrap(), 0.0);
        assert_eq!(fl(&single(104.0, 0.0), &single(100.0, 0.0)).unwrap(), 0.0);
        assert_eq!(fl(&single(5.0, 0.0), &single(0.0, 0.0)).unwrap(), 100.0);
    }

    #[test]
    fn empty_overlap() {
        let a = FlowField::invalid(2, 2);
        assert!(matches!(epe(&a, &FlowField::zeros(2, 2)), Err(Error::EmptyInput(_))));
        assert!(matches!(fl(&FlowField::zeros(2, 3), &FlowField::zeros(2, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn aggregate_modes() {
        let mut r = EvalReport::default();
        let gt = FlowField::zeros(1, 1);
        let gt4 = FlowField::zeros(4, 1);
        r.push_metrics("b", &flow_metrics(&single(2.0, 0.0), &gt).unwrap(), 1.0);
        let four = FlowField::new(4, 1, vec![0.0; 4], vec![0.0; 4], vec![true; 4]).unwrap();
        r.push_metrics("a", &flow_metrics(&four, &gt4).unwrap(), 3.0);
        assert_eq!(r.aggregate().unwrap().epe, 1.0);
        r.aggregation = Aggregation::PooledPixels;
        assert!((r.aggregate().unwrap().epe - 0.4).abs() < 1e-12);
        r.sort_by_name();
        assert_eq!(r.records()[0].name, "a");
        assert!((r.aggregate().unwrap().epe - 0.4).abs() < 1e-12);
        assert!(EvalReport::default().aggregate().is_none());
    }

    proptest! {
        #[test]
        fn outliers_have_large_error(
            px in proptest::collection::vec((-20.0f32..20.0, -20.0f32..20.0, -20.0f32..20.0, -20.0f32..20.0), 1..50)
        ) {
            for &(a, b, c, d) in &px {
                let err = ((a - c) as f64).hypot((b - d) as f64);
                if is_outlier(err, (c as f64).hypot(d as f64)) {
                    prop_assert!(err > 3.0);
                }
            }
            let n = px.len();
            let pred = FlowField::new(n, 1, px.iter().map(|p| p.0).collect(), px.iter().map(|p| p.1).collect(), vec![true; n]).unwrap();
            let gt = FlowField::new(n, 1, px.iter().map(|p| p.2).collect(), px.iter().map(|p| p.3).collect(), vec![true; n]).unwrap();
            let m = flow_metrics(&pred, &gt).unwrap();
            prop_assert!((0.0..=100.0).contains(&m.fl));
            // Reversing pixel order leaves the metrics unchanged.
            let rev = |v: &[f32]| v.iter().rev().copied().collect::<Vec<_>>();
            let pred_r = FlowField::new(n, 1, rev(pred.u()), rev(pred.v()), vec![true; n]).unwrap();
            let gt_r = FlowField::new(n, 1, rev(gt.u()), rev(gt.v()), vec![true; n]).unwrap();
            let mr = flow_metrics(&pred_r, &gt_r).unwrap();
            prop_assert!((m.epe - mr.epe).abs() < 1e-9);
            prop_assert_eq!(m.outliers, mr.outliers);
        }
    }
}
