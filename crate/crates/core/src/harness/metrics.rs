//! Error metric, section-cut sampling and synthetic sensing.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::enkf::ObservationOperator;
use crate::error::{Error, Result};
use crate::geometry::{Grid, Point2};
use crate::transport::ConcentrationField;

/// Relative l2 difference in percent, `None` when the truth is identically 0.
pub fn err_l2(c_true: &[f64], c_star: &[f64]) -> Option<f64> {
    assert_eq!(c_true.len(), c_star.len(), "fields must have the same length");
    let norm = c_true.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let diff = c_true
        .iter()
        .zip(c_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Some(diff / norm * 100.0)
}

/// Truth values at the observed nodes plus i.i.d. Gaussian noise.
pub fn observe_truth<R: Rng>(
    truth: &ConcentrationField,
    h: &ObservationOperator,
    sigma_ob: f64,
    rng: &mut R,
) -> Vec<f64> {
    h.apply(&truth.values)
        .into_iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma_ob * z
        })
        .collect()
}

/// One station of a section cut: arc length and the sampled value, `None`
/// when the nearest cell is solid.
pub type Station = (f64, Option<f64>);

/// Samples `field` at stations spaced `grid.h()` along the polyline, taking
/// the value of the cell containing each station.
pub fn sample_polyline(field: &ConcentrationField, grid: &Grid, polyline: &[Point2]) -> Result<Vec<Station>> {
    let nodes = polyline_nodes(grid, polyline)?;
    Ok(nodes
        .into_iter()
        .map(|(s, node)| (s, node.map(|n| field.values[n])))
        .collect())
}

/// Stations of the polyline with the node they read from.
pub fn polyline_nodes(grid: &Grid, polyline: &[Point2]) -> Result<Vec<(f64, Option<usize>)>> {
    if polyline.is_empty() {
        return Err(Error::Config("polyline needs at least one point".into()));
    }
    let bbox = grid.bbox();
    if let Some(p) = polyline.iter().find(|p| !bbox.contains(**p)) {
        return Err(Error::NotInFluid { x: p.x, y: p.y });
    }
    let lengths: Vec<f64> = polyline.windows(2).map(|w| w[0].distance(w[1])).collect();
    let total: f64 = lengths.iter().sum();
    let spacing = grid.h();
    let count = (total / spacing + 1e-9).floor() as usize + 1;

    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..count {
        let s = k as f64 * spacing;
        while seg < lengths.len() && seg_start + lengths[seg] < s {
            seg_start += lengths[seg];
            seg += 1;
        }
        let p = if seg >= lengths.len() {
            *polyline.last().unwrap()
        } else if lengths[seg] == 0.0 {
            polyline[seg]
        } else {
            let f = ((s - seg_start) / lengths[seg]).clamp(0.0, 1.0);
            let (a, b) = (polyline[seg], polyline[seg + 1]);
            Point2::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
        };
        out.push((s, nearest_node(grid, p)));
    }
    Ok(out)
}

fn nearest_node(grid: &Grid, p: Point2) -> Option<usize> {
    let o = grid.origin();
    let i = (((p.x - o.x) / grid.h()).floor().max(0.0) as usize).min(grid.nx() - 1);
    let j = (((p.y - o.y) / grid.h()).floor().max(0.0) as usize).min(grid.ny() - 1);
    grid.node(i, j)
}

/// The 45 degree line through `through`, clipped to the grid's bbox.
pub fn default_gamma(grid: &Grid, through: Point2) -> Vec<Point2> {
    let b = grid.bbox();
    let back = (through.x - b.min.x).min(through.y - b.min.y).max(0.0);
    let fwd = (b.max.x - through.x).min(b.max.y - through.y).max(0.0);
    vec![
        Point2::new(through.x - back, through.y - back),
        Point2::new(through.x + fwd, through.y + fwd),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, DomainSpec, Polygon};
    use crate::rng::{substream, OBSERVATION_NOISE};
    use crate::transport::gaussian_initial_condition;

    fn grid(buildings: Vec<Polygon>) -> Grid {
        let d = DomainSpec::new(BBox::new(Point2::new(0.0, 0.0), Point2::new(100.0, 100.0)), buildings).unwrap();
        Grid::rasterize(&d, 10.0).unwrap()
    }

    #[test]
    fn err_l2_cases() {
        let c = [1.0, -2.0, 3.0];
        assert_eq!(err_l2(&c, &c), Some(0.0));
        assert_eq!(err_l2(&c, &[0.0; 3]), Some(100.0));
        let doubled: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
        assert!((err_l2(&c, &doubled).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(err_l2(&[0.0; 3], &c), None);
    }

    #[test]
    fn noiseless_reading_is_exact() {
        let g = grid(vec![]);
        let truth = ConcentrationField::new((0..100).map(|k| k as f64 * 0.5).collect());
        let h = ObservationOperator::new(vec![7, 3]);
        let mut rng = substream(1, OBSERVATION_NOISE, 0, 0);
        assert_eq!(observe_truth(&truth, &h, 0.0, &mut rng), vec![3.5, 1.5]);
        assert_eq!(g.num_nodes(), 100);
    }

    #[test]
    fn reading_noise_has_the_requested_spread() {
        let truth = ConcentrationField::zeros(4);
        let h = ObservationOperator::new(vec![0, 2]);
        let mut residuals = Vec::new();
        for step in 0..5000 {
            let mut rng = substream(9, OBSERVATION_NOISE, step, 0);
            residuals.extend(observe_truth(&truth, &h, 1e-3, &mut rng));
        }
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 1e-4);
        assert!((std - 1e-3).abs() < 3e-5, "std {std}");
    }

    #[test]
    fn constant_field_gives_constant_samples() {
        let g = grid(vec![]);
        let f = ConcentrationField::new(vec![2.5; g.num_nodes()]);
        let line = [Point2::new(5.0, 5.0), Point2::new(95.0, 5.0), Point2::new(95.0, 95.0)];
        let samples = sample_polyline(&f, &g, &line).unwrap();
        assert_eq!(samples.len(), 19);
        assert!(samples.iter().all(|s| s.1 == Some(2.5)));
        assert_eq!(samples.last().unwrap().0, 180.0);
    }

    #[test]
    fn zero_length_line_gives_one_sample() {
        let g = grid(vec![]);
        let f = ConcentrationField::new((0..100).map(f64::from).collect());
        let samples = sample_polyline(&f, &g, &[Point2::new(35.0, 45.0), Point2::new(35.0, 45.0)]).unwrap();
        assert_eq!(samples, vec![(0.0, Some(43.0))]);
        let single = sample_polyline(&f, &g, &[Point2::new(35.0, 45.0)]).unwrap();
        assert_eq!(single, samples);
    }

    #[test]
    fn gaussian_diameter_is_symmetric() {
        let g = grid(vec![]);
        let center = Point2::new(55.0, 45.0);
        let f = gaussian_initial_condition(&g, center, 15.0).unwrap();
        let line = [Point2::new(15.0, 45.0), Point2::new(95.0, 45.0)];
        let samples = sample_polyline(&f, &g, &line).unwrap();
        assert_eq!(samples.len(), 9);
        for k in 0..samples.len() {
            let s = samples[k].0;
            let x = 15.0 + s;
            let expect = (-(x - center.x).powi(2) / 450.0).exp();
            assert!((samples[k].1.unwrap() - expect).abs() < 1e-15);
            assert_eq!(samples[k].1, samples[samples.len() - 1 - k].1);
        }
    }

    #[test]
    fn solid_stations_are_marked() {
        let g = grid(vec![Polygon::rectangle(Point2::new(40.0, 0.0), Point2::new(60.0, 100.0)).unwrap()]);
        let f = ConcentrationField::new(vec![1.0; g.num_nodes()]);
        let samples = sample_polyline(&f, &g, &[Point2::new(5.0, 55.0), Point2::new(95.0, 55.0)]).unwrap();
        let missing: Vec<f64> = samples.iter().filter(|s| s.1.is_none()).map(|s| s.0).collect();
        assert_eq!(missing, vec![40.0, 50.0]);
        assert!(sample_polyline(&f, &g, &[Point2::new(5.0, 5.0), Point2::new(150.0, 5.0)]).is_err());
    }

    #[test]
    fn default_gamma_is_clipped_diagonal() {
        let g = grid(vec![]);
        let line = default_gamma(&g, Point2::new(70.0, 40.0));
        assert_eq!(line, vec![Point2::new(30.0, 0.0), Point2::new(100.0, 70.0)]);
    }
}
