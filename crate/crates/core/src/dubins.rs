//! Shortest bounded-curvature paths between planar poses.
//!
//! All six candidate words are evaluated in the normalized frame where the
//! start sits at the origin, the goal on the positive x axis, and the turn
//! radius is 1. The shortest one wins; equal lengths resolve by the order of
//! [`DubinsWord::ALL`].

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

fn mod2pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    /// Radians, counter-clockwise from the +x axis, in `(-pi, pi]`.
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Point2<f64> {
        Point2::new(self.x, self.y)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DubinsWord {
    LSL,
    RSR,
    LSR,
    RSL,
    RLR,
    LRL,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Left,
    Straight,
    Right,
}

impl DubinsWord {
    pub const ALL: [DubinsWord; 6] = [
        DubinsWord::LSL,
        DubinsWord::RSR,
        DubinsWord::LSR,
        DubinsWord::RSL,
        DubinsWord::RLR,
        DubinsWord::LRL,
    ];

    pub fn segments(self) -> [SegmentKind; 3] {
        use SegmentKind::*;
        match self {
            DubinsWord::LSL => [Left, Straight, Left],
            DubinsWord::RSR => [Right, Straight, Right],
            DubinsWord::LSR => [Left, Straight, Right],
            DubinsWord::RSL => [Right, Straight, Left],
            DubinsWord::RLR => [Right, Left, Right],
            DubinsWord::LRL => [Left, Right, Left],
        }
    }

    /// The word obtained by exchanging left and right turns.
    pub fn mirrored(self) -> Self {
        match self {
            DubinsWord::LSL => DubinsWord::RSR,
            DubinsWord::RSR => DubinsWord::LSL,
            DubinsWord::LSR => DubinsWord::RSL,
            DubinsWord::RSL => DubinsWord::LSR,
            DubinsWord::RLR => DubinsWord::LRL,
            DubinsWord::LRL => DubinsWord::RLR,
        }
    }
}

impl fmt::Display for DubinsWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsPath {
    pub start: Pose2,
    pub word: DubinsWord,
    /// Arc segments in radians, straight segments in meters.
    pub segments: [f64; 3],
    pub turn_radius: f64,
    pub length: f64,
}

/// Normalized-frame quantities shared by all words.
struct Frame {
    d: f64,
    alpha: f64,
    beta: f64,
    sa: f64,
    sb: f64,
    ca: f64,
    cb: f64,
    c_ab: f64,
}

impl Frame {
    fn new(start: &Pose2, goal: &Pose2, rho: f64) -> Self {
        let dx = goal.x - start.x;
        let dy = goal.y - start.y;
        let d = dx.hypot(dy) / rho;
        let theta = if d > 0.0 { mod2pi(dy.atan2(dx)) } else { 0.0 };
        let alpha = mod2pi(start.heading - theta);
        let beta = mod2pi(goal.heading - theta);
        Self {
            d,
            alpha,
            beta,
            sa: alpha.sin(),
            sb: beta.sin(),
            ca: alpha.cos(),
            cb: beta.cos(),
            c_ab: (alpha - beta).cos(),
        }
    }

    /// Normalized segment parameters `[t, p, q]` for `word`, if it exists.
    fn solve(&self, word: DubinsWord) -> Option<[f64; 3]> {
        let Frame {
            d,
            alpha,
            beta,
            sa,
            sb,
            ca,
            cb,
            c_ab,
        } = *self;
        let d2 = d * d;
        match word {
            DubinsWord::LSL => {
                let p2 = 2.0 + d2 - 2.0 * c_ab + 2.0 * d * (sa - sb);
                if p2 < 0.0 {
                    return None;
                }
                let tmp = (cb - ca).atan2(d + sa - sb);
                Some([mod2pi(tmp - alpha), p2.sqrt(), mod2pi(beta - tmp)])
            }
            DubinsWord::RSR => {
                let p2 = 2.0 + d2 - 2.0 * c_ab + 2.0 * d * (sb - sa);
                if p2 < 0.0 {
                    return None;
                }
                let tmp = (ca - cb).atan2(d - sa + sb);
                Some([mod2pi(alpha - tmp), p2.sqrt(), mod2pi(tmp - beta)])
            }
            DubinsWord::LSR => {
                let p2 = -2.0 + d2 + 2.0 * c_ab + 2.0 * d * (sa + sb);
                if p2 < 0.0 {
                    return None;
                }
                let p = p2.sqrt();
                let tmp = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
                Some([mod2pi(tmp - alpha), p, mod2pi(tmp - beta)])
            }
            DubinsWord::RSL => {
                let p2 = -2.0 + d2 + 2.0 * c_ab - 2.0 * d * (sa + sb);
                if p2 < 0.0 {
                    return None;
                }
                let p = p2.sqrt();
                let tmp = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
                Some([mod2pi(alpha - tmp), p, mod2pi(beta - tmp)])
            }
            DubinsWord::RLR => {
                let c = (6.0 - d2 + 2.0 * c_ab + 2.0 * d * (sa - sb)) / 8.0;
                if c.abs() > 1.0 {
                    return None;
                }
                let p = mod2pi(TAU - c.acos());
                let t = mod2pi(alpha - (ca - cb).atan2(d - sa + sb) + p / 2.0);
                Some([t, p, mod2pi(alpha - beta - t + p)])
            }
            DubinsWord::LRL => {
                let c = (6.0 - d2 + 2.0 * c_ab + 2.0 * d * (sb - sa)) / 8.0;
                if c.abs() > 1.0 {
                    return None;
                }
                let p = mod2pi(TAU - c.acos());
                let t = mod2pi(-alpha + (cb - ca).atan2(d + sa - sb) + p / 2.0);
                Some([t, p, mod2pi(beta - alpha - t + p)])
            }
        }
    }
}

/// Path of a given word, if the word admits a solution for these poses.
pub fn dubins_word_path(
    start: Pose2,
    goal: Pose2,
    rho: f64,
    word: DubinsWord,
) -> Option<DubinsPath> {
    assert!(rho > 0.0, "turn radius must be positive");
    let params = Frame::new(&start, &goal, rho).solve(word)?;
    let kinds = word.segments();
    let mut segments = [0.0; 3];
    for k in 0..3 {
        segments[k] = match kinds[k] {
            SegmentKind::Straight => params[k] * rho,
            _ => params[k],
        };
    }
    Some(DubinsPath {
        start,
        word,
        segments,
        turn_radius: rho,
        length: (params[0] + params[1] + params[2]) * rho,
    })
}

/// Shortest Dubins path from `start` to `goal` with minimum turn radius `rho`.
///
/// # Panics
/// If `rho` is not strictly positive.
pub fn shortest_dubins(start: Pose2, goal: Pose2, rho: f64) -> DubinsPath {
    assert!(rho > 0.0, "turn radius must be positive");
    let frame = Frame::new(&start, &goal, rho);
    let mut best: Option<(DubinsWord, [f64; 3], f64)> = None;
    for word in DubinsWord::ALL {
        if let Some(p) = frame.solve(word) {
            let len = p[0] + p[1] + p[2];
            if best.map_or(true, |(_, _, b)| len < b) {
                best = Some((word, p, len));
            }
        }
    }
    // LSL and RSR are always defined, so some word exists.
    let (word, params, _) = best.expect("a Dubins path always exists");
    let kinds = word.segments();
    let mut segments = [0.0; 3];
    for k in 0..3 {
        segments[k] = match kinds[k] {
            SegmentKind::Straight => params[k] * rho,
            _ => params[k],
        };
    }
    DubinsPath {
        start,
        word,
        segments,
        turn_radius: rho,
        length: (params[0] + params[1] + params[2]) * rho,
    }
}

fn advance(pose: Pose2, kind: SegmentKind, s: f64, rho: f64) -> Pose2 {
    let (x, y, h) = (pose.x, pose.y, pose.heading);
    match kind {
        SegmentKind::Straight => Pose2 {
            x: x + s * h.cos(),
            y: y + s * h.sin(),
            heading: h,
        },
        SegmentKind::Left => {
            let h1 = h + s / rho;
            Pose2 {
                x: x + rho * (h1.sin() - h.sin()),
                y: y - rho * (h1.cos() - h.cos()),
                heading: normalize_angle(h1),
            }
        }
        SegmentKind::Right => {
            let h1 = h - s / rho;
            Pose2 {
                x: x - rho * (h1.sin() - h.sin()),
                y: y + rho * (h1.cos() - h.cos()),
                heading: normalize_angle(h1),
            }
        }
    }
}

impl DubinsPath {
    /// Length in meters of each of the three segments.
    pub fn segment_lengths(&self) -> [f64; 3] {
        let kinds = self.word.segments();
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = match kinds[k] {
                SegmentKind::Straight => self.segments[k],
                _ => self.segments[k] * self.turn_radius,
            };
        }
        out
    }

    /// Signed curvature (1/m, positive for left turns) at arclength `s`.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let lens = self.segment_lengths();
        let kinds = self.word.segments();
        let mut rest = s;
        for k in 0..3 {
            if rest <= lens[k] || k == 2 {
                return match kinds[k] {
                    SegmentKind::Left => 1.0 / self.turn_radius,
                    SegmentKind::Right => -1.0 / self.turn_radius,
                    SegmentKind::Straight => 0.0,
                };
            }
            rest -= lens[k];
        }
        unreachable!()
    }

    /// Pose after travelling `s` meters along the path; `s` is clamped to `[0, length]`.
    pub fn pose_at(&self, s: f64) -> Pose2 {
        let lens = self.segment_lengths();
        let kinds = self.word.segments();
        let mut rest = s.clamp(0.0, self.length);
        let mut pose = self.start;
        for k in 0..3 {
            let step = rest.min(lens[k]);
            pose = advance(pose, kinds[k], step, self.turn_radius);
            rest -= step;
            if rest <= 0.0 {
                break;
            }
        }
        pose
    }

    pub fn end_pose(&self) -> Pose2 {
        let lens = self.segment_lengths();
        let kinds = self.word.segments();
        let mut pose = self.start;
        for k in 0..3 {
            pose = advance(pose, kinds[k], lens[k], self.turn_radius);
        }
        pose
    }

    /// Poses at arclengths `0, spacing, 2*spacing, ...` plus the final pose.
    pub fn sample(&self, spacing: f64) -> Vec<Pose2> {
        assert!(spacing > 0.0, "sample spacing must be positive");
        let n = (self.length / spacing).floor() as usize;
        let mut out = Vec::with_capacity(n + 2);
        for k in 0..=n {
            let s = k as f64 * spacing;
            if s < self.length - 1e-9 || k == 0 {
                out.push(self.pose_at(s));
            }
        }
        if self.length > 1e-9 || out.is_empty() {
            out.push(self.end_pose());
        }
        out
    }
}

/// Samples `path` every `spacing` meters, always including both endpoints.
pub fn sample_path(path: &DubinsPath, spacing: f64) -> Vec<Pose2> {
    path.sample(spacing)
}
