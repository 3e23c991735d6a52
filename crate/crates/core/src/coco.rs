//! COCO-17 person layout: keypoint order, skeleton edges and mirror pairs.

pub const NUM_KEYPOINTS: usize = 17;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

pub const NOSE: usize = 0;
pub const LEFT_SHOULDER: usize = 5;
pub const RIGHT_SHOULDER: usize = 6;
pub const LEFT_ELBOW: usize = 7;
pub const RIGHT_ELBOW: usize = 8;
pub const LEFT_WRIST: usize = 9;
pub const RIGHT_WRIST: usize = 10;
pub const LEFT_HIP: usize = 11;
pub const RIGHT_HIP: usize = 12;
pub const LEFT_KNEE: usize = 13;
pub const RIGHT_KNEE: usize = 14;
pub const LEFT_ANKLE: usize = 15;
pub const RIGHT_ANKLE: usize = 16;

/// The 19 limbs of the standard COCO person skeleton (0-indexed).
pub const SKELETON_EDGES: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

/// Keypoint index each joint maps to under a horizontal mirror (left <-> right).
pub const MIRROR_PERMUTATION: [usize; NUM_KEYPOINTS] =
    [0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15];

/// A front-facing standing person, one unit tall: `(dx, dy)` from the point
/// between the feet, `y` growing downwards. The person's left side is on the
/// image right, so the template is its own mirror image.
pub const STANDING_TEMPLATE: [(f64, f64); NUM_KEYPOINTS] = [
    (0.0, -0.93),
    (0.02, -0.95),
    (-0.02, -0.95),
    (0.045, -0.93),
    (-0.045, -0.93),
    (0.11, -0.80),
    (-0.11, -0.80),
    (0.14, -0.63),
    (-0.14, -0.63),
    (0.15, -0.48),
    (-0.15, -0.48),
    (0.07, -0.50),
    (-0.07, -0.50),
    (0.075, -0.26),
    (-0.075, -0.26),
    (0.08, -0.03),
    (-0.08, -0.03),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_permutation_is_an_involution_pairing_left_and_right() {
        for (i, &j) in MIRROR_PERMUTATION.iter().enumerate() {
            assert_eq!(MIRROR_PERMUTATION[j], i);
            let (a, b) = (KEYPOINT_NAMES[i], KEYPOINT_NAMES[j]);
            if i == j {
                assert_eq!(a, "nose");
            } else {
                let part = |n: &'static str| n.split_once('_').map(|(_, p)| p);
                assert_eq!(part(a), part(b));
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn skeleton_edges_mirror_onto_skeleton_edges() {
        for &(a, b) in &SKELETON_EDGES {
            let (ma, mb) = (MIRROR_PERMUTATION[a], MIRROR_PERMUTATION[b]);
            assert!(SKELETON_EDGES.iter().any(|&(x, y)| (x, y) == (ma, mb) || (y, x) == (ma, mb)));
        }
    }

    #[test]
    fn standing_template_is_mirror_symmetric() {
        for (i, &j) in MIRROR_PERMUTATION.iter().enumerate() {
            let (x, y) = STANDING_TEMPLATE[i];
            assert_eq!(STANDING_TEMPLATE[j], (-x, y) as (f64, f64), "{i}");
        }
    }
}
