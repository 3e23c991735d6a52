use serde::{Deserialize, Serialize};

use super::Tracklet;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_INSIDE_FRACTION: f64 = 0.5;

/// Simple polygon in pixel coordinates; points on the boundary count as inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct CourtPolygon {
    vertices: Vec<[f64; 2]>,
}

impl CourtPolygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "court polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("court polygon has non-finite vertex".into()));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle covering a whole `width x height` frame.
    pub fn full_frame(width: usize, height: usize) -> Self {
        let (w, h) = ((width as f64) - 1.0, (height as f64) - 1.0);
        Self { vertices: vec![[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]] }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let [ax, ay] = self.vertices[i];
            let [bx, by] = self.vertices[(i + 1) % n];
            if on_segment(x, y, ax, ay, bx, by) {
                return true;
            }
            // even-odd crossing test on a rightward ray, half-open in y
            if (ay > y) != (by > y) {
                let cross_x = ax + (y - ay) * (bx - ax) / (by - ay);
                if x < cross_x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

impl TryFrom<Vec<[f64; 2]>> for CourtPolygon {
    type Error = Error;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        CourtPolygon::new(v)
    }
}

impl From<CourtPolygon> for Vec<[f64; 2]> {
    fn from(p: CourtPolygon) -> Self {
        p.vertices
    }
}

fn on_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    cross == 0.0
        && px >= ax.min(bx)
        && px <= ax.max(bx)
        && py >= ay.min(by)
        && py <= ay.max(by)
}

/// Keeps whole tracklets whose anchors fall inside `court` for at least
/// `min_inside_fraction` of their detections.
pub fn filter_court(
    tracklets: Vec<Tracklet>,
    court: &CourtPolygon,
    min_inside_fraction: f64,
    confidence_threshold: f64,
) -> Result<Vec<Tracklet>> {
    if !(0.0..=1.0).contains(&min_inside_fraction) {
        return Err(Error::InvalidInput(format!(
            "min_inside_fraction {min_inside_fraction} outside [0, 1]"
        )));
    }
    Ok(tracklets
        .into_iter()
        .filter(|t| {
            if t.is_empty() {
                return min_inside_fraction == 0.0;
            }
            let inside = t
                .detections
                .iter()
                .filter(|d| {
                    let (x, y) = d.pose.anchor(confidence_threshold);
                    court.contains(x, y)
                })
                .count();
            inside as f64 / t.len() as f64 >= min_inside_fraction
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::{Keypoint2D, Pose17, TrackedDetection};
    use super::*;
    use crate::coco::NUM_KEYPOINTS;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Winding-number reference, independent of the crossing-parity routine.
    fn winding_contains(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
        let n = poly.len();
        let mut wn = 0i32;
        for i in 0..n {
            let [ax, ay] = poly[i];
            let [bx, by] = poly[(i + 1) % n];
            let side = (bx - ax) * (y - ay) - (x - ax) * (by - ay);
            if ay <= y {
                if by > y && side > 0.0 {
                    wn += 1;
                }
            } else if by <= y && side < 0.0 {
                wn -= 1;
            }
        }
        wn != 0
    }

    fn standing_at(x: f64, y: f64) -> Pose17 {
        Pose17([Keypoint2D::new(x, y, 1.0); NUM_KEYPOINTS])
    }

    fn tracklet_with_anchors(id: u64, anchors: &[(f64, f64)]) -> Tracklet {
        Tracklet {
            track_id: id,
            detections: anchors
                .iter()
                .enumerate()
                .map(|(f, &(x, y))| TrackedDetection { frame_index: f, track_id: id, pose: standing_at(x, y) })
                .collect(),
        }
    }

    fn l_shape() -> CourtPolygon {
        CourtPolygon::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 4.0], [4.0, 4.0], [4.0, 10.0], [0.0, 10.0]]).unwrap()
    }

    #[test]
    fn degenerate_polygon_is_rejected() {
        assert!(CourtPolygon::new(vec![[0.0, 0.0], [1.0, 1.0]]).is_err());
        assert!(serde_json::from_str::<CourtPolygon>("[[0,0],[1,0]]").is_err());
        assert!(serde_json::from_str::<CourtPolygon>("[[0,0],[1,0],[1,1]]").is_ok());
    }

    #[test]
    fn boundary_counts_as_inside() {
        let p = l_shape();
        assert!(p.contains(0.0, 5.0));
        assert!(p.contains(10.0, 0.0));
        assert!(p.contains(4.0, 7.0));
        assert!(p.contains(7.0, 4.0));
        assert!(!p.contains(7.0, 7.0));
    }

    #[test]
    fn agrees_with_winding_number_off_boundary() {
        let p = l_shape();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5000 {
            let (x, y) = (rng.random_range(-2.0..12.0), rng.random_range(-2.0..12.0));
            assert_eq!(p.contains(x, y), winding_contains(p.vertices(), x, y), "({x}, {y})");
        }
    }

    #[test]
    fn all_inside_is_kept() {
        let court = CourtPolygon::full_frame(100, 100);
        let t = tracklet_with_anchors(1, &[(10.0, 10.0), (20.0, 30.0)]);
        assert_eq!(filter_court(vec![t], &court, 0.5, 0.3).unwrap().len(), 1);
    }

    #[test]
    fn six_of_twenty_inside_is_dropped() {
        let court = l_shape();
        let mut anchors = vec![(1.0, 1.0), (2.0, 8.0), (9.0, 2.0), (3.0, 3.0), (0.5, 9.5), (7.5, 1.5)];
        anchors.extend((0..14).map(|i| (5.0 + i as f64 * 0.3, 6.0)));
        let expected_inside = anchors.iter().filter(|&&(x, y)| winding_contains(court.vertices(), x, y)).count();
        assert_eq!(expected_inside, 6);
        let t = tracklet_with_anchors(1, &anchors);
        assert!(filter_court(vec![t.clone()], &court, 0.5, 0.3).unwrap().is_empty());
        assert_eq!(filter_court(vec![t.clone()], &court, 0.3, 0.3).unwrap().len(), 1);
        assert_eq!(filter_court(vec![t], &court, 0.0, 0.3).unwrap().len(), 1);
    }

    #[test]
    fn zero_threshold_keeps_everything() {
        let court = l_shape();
        let ts = vec![
            tracklet_with_anchors(1, &[(50.0, 50.0)]),
            tracklet_with_anchors(2, &[(1.0, 1.0)]),
            Tracklet { track_id: 3, detections: vec![] },
        ];
        assert_eq!(filter_court(ts, &court, 0.0, 0.3).unwrap().len(), 3);
    }

    proptest! {
        #[test]
        fn raising_the_threshold_never_adds_tracklets(
            anchors in proptest::collection::vec(proptest::collection::vec((-2.0f64..12.0, -2.0f64..12.0), 1..12), 1..8),
            lo in 0.0f64..=1.0,
            hi in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let court = l_shape();
            let ts: Vec<Tracklet> = anchors.iter().enumerate().map(|(i, a)| tracklet_with_anchors(i as u64, a)).collect();
            let kept_lo: Vec<u64> = filter_court(ts.clone(), &court, lo, 0.3).unwrap().iter().map(|t| t.track_id).collect();
            let kept_hi: Vec<u64> = filter_court(ts, &court, hi, 0.3).unwrap().iter().map(|t| t.track_id).collect();
            prop_assert!(kept_hi.iter().all(|id| kept_lo.contains(id)));
        }
    }
}
