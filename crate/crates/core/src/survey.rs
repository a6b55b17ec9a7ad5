//! Lawnmower sonar surveys and the per-turn fitting protocol.
//!
//! The vehicle follows each leg exactly. At every along-track station the
//! side-scan sensor returns soundings on both beams between the occlusion
//! range and the maximum range. After each turn the GP is refit on the data
//! so far; on turn 1 and every fourth turn after it the hyperparameters are
//! re-estimated on a random half of the data first.

use std::fmt::Write as _;

use nalgebra::{Point2, Vector2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dubins::Pose2;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::gp::{
    fit_with_prior, optimize_with, rmse_against_field, GpModel, OptimizerOptions, PriorMean,
    TrainingSet,
};
use crate::kernels::{Hyperparameters, KernelKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub min_range: f64,
    pub max_range: f64,
    /// Half-width of the uniform noise as a fraction of the field maximum.
    pub noise_fraction: f64,
    pub along_track_spacing: f64,
    pub cross_track_spacing: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            min_range: 10.0,
            max_range: 20.0,
            noise_fraction: 1e-4,
            along_track_spacing: 2.0,
            cross_track_spacing: 2.0,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_range >= 0.0 && self.min_range < self.max_range && self.max_range.is_finite())
        {
            return Err(Error::param(
                "sensor ranges must satisfy 0 <= min_range < max_range",
            ));
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return Err(Error::param("noise fraction must be non-negative"));
        }
        if !(self.along_track_spacing > 0.0 && self.cross_track_spacing > 0.0) {
            return Err(Error::param("sample spacings must be positive"));
        }
        Ok(())
    }

    /// Cross-track offsets sampled on each beam.
    pub fn offsets(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let d = self.min_range + k as f64 * self.cross_track_spacing;
            if d > self.max_range + 1e-9 {
                break;
            }
            out.push(d.min(self.max_range));
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurveyAxis {
    /// Legs run parallel to the y axis and step across x.
    #[default]
    AlongY,
    AlongX,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub start: Point2<f64>,
    pub end: Point2<f64>,
}

impl Leg {
    pub fn heading(&self) -> f64 {
        (self.end.y - self.start.y).atan2(self.end.x - self.start.x)
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    /// Stations from start to end at most `spacing` apart, including both ends.
    pub fn stations(&self, spacing: f64) -> Vec<Pose2> {
        let len = self.length();
        let n = (len / spacing).ceil().max(1.0) as usize;
        let heading = self.heading();
        (0..=n)
            .map(|k| {
                let p = self.start + (self.end - self.start) * (k as f64 / n as f64);
                Pose2::new(p.x, p.y, heading)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LawnmowerPlan {
    pub legs: Vec<Leg>,
    pub track_spacing: f64,
}

impl LawnmowerPlan {
    pub fn turn_count(&self) -> usize {
        self.legs.len().saturating_sub(1)
    }
}

pub fn generate_lawnmower(
    field: &ScalarField,
    track_spacing: f64,
    axis: SurveyAxis,
) -> Result<LawnmowerPlan> {
    let (w, h) = field.extent();
    let (across, along) = match axis {
        SurveyAxis::AlongY => (w, h),
        SurveyAxis::AlongX => (h, w),
    };
    if !(track_spacing > 0.0 && track_spacing.is_finite()) {
        return Err(Error::param("track spacing must be positive"));
    }
    if track_spacing > across * (1.0 + 1e-12) {
        return Err(Error::param(format!(
            "track spacing {track_spacing} m exceeds the field extent {across} m"
        )));
    }
    let count = (across / track_spacing - 1e-9).ceil() as usize + 1;
    let o = field.origin();
    let legs = (0..count)
        .map(|k| {
            let c = (k as f64 * track_spacing).min(across);
            let (a, b) = if k % 2 == 0 {
                (0.0, along)
            } else {
                (along, 0.0)
            };
            match axis {
                SurveyAxis::AlongY => Leg {
                    start: Point2::new(o.x + c, o.y + a),
                    end: Point2::new(o.x + c, o.y + b),
                },
                SurveyAxis::AlongX => Leg {
                    start: Point2::new(o.x + a, o.y + c),
                    end: Point2::new(o.x + b, o.y + c),
                },
            }
        })
        .collect();
    Ok(LawnmowerPlan {
        legs,
        track_spacing,
    })
}

/// Soundings on both beams at every station; points off the field are dropped.
pub fn sample_swath(
    field: &ScalarField,
    stations: &[Pose2],
    sensor: &SensorModel,
    rng: &mut impl Rng,
) -> (Vec<Point2<f64>>, Vec<f64>) {
    let eps = sensor.noise_fraction * field.max_value();
    let offsets = sensor.offsets();
    let mut points = Vec::new();
    let mut values = Vec::new();
    for st in stations {
        let port = Vector2::new(-st.heading.sin(), st.heading.cos());
        for side in [1.0, -1.0] {
            for d in &offsets {
                let p = st.position() + port * (side * d);
                let Ok(truth) = field.sample_bilinear(p) else {
                    continue;
                };
                let noise = if eps > 0.0 {
                    rng.gen_range(-eps..=eps)
                } else {
                    0.0
                };
                points.push(p);
                values.push(truth + noise);
            }
        }
    }
    (points, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyOptions {
    pub track_spacing: f64,
    pub axis: SurveyAxis,
    pub initial_hyper: Hyperparameters,
    /// Re-estimate on turn 1 and then every `reestimate_every` turns.
    pub reestimate_every: usize,
    pub update_cap: f64,
    /// Fit on a random subsample when more samples than this have been
    /// collected; `None` fits on everything.
    pub max_fit_points: Option<usize>,
    /// Upper bound on the random half used for re-estimation.
    pub max_optimize_points: Option<usize>,
    pub prior_mean: PriorMean,
}

impl Default for SurveyOptions {
    fn default() -> Self {
        Self {
            track_spacing: 20.0,
            axis: SurveyAxis::AlongY,
            initial_hyper: Hyperparameters::default(),
            reestimate_every: 4,
            update_cap: 3.0,
            max_fit_points: Some(2000),
            max_optimize_points: Some(300),
            prior_mean: PriorMean::TrainingMean,
        }
    }
}

impl SurveyOptions {
    pub fn is_reestimation_turn(&self, turn: usize) -> bool {
        turn >= 1 && (turn - 1) % self.reestimate_every.max(1) == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnRecord {
    pub turn: usize,
    /// Prefix length of the cumulative sample list at this turn.
    pub samples: usize,
    pub fit_points: usize,
    pub reestimated: bool,
    pub hyper: Hyperparameters,
    pub rmse: f64,
}

#[derive(Debug, Clone)]
pub struct SurveyLog {
    pub kernel: KernelKind,
    pub turns: Vec<TurnRecord>,
    pub points: Vec<Point2<f64>>,
    pub values: Vec<f64>,
    /// Model after the last turn.
    pub model: GpModel,
}

impl SurveyLog {
    pub fn rmse(&self) -> Vec<f64> {
        self.turns.iter().map(|t| t.rmse).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("turn,kernel,rmse,length_scale,signal_variance,noise_variance\n");
        for t in &self.turns {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                t.turn,
                self.kernel,
                t.rmse,
                t.hyper.length_scale,
                t.hyper.prior_variance(self.kernel),
                t.hyper.noise_variance
            );
        }
        s
    }
}

/// Independent random streams so that skipping optional work (such as RMSE
/// evaluation) never shifts the draws used elsewhere.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const NOISE_STREAM: u64 = 1;
const HALF_STREAM: u64 = 2;
const THIN_STREAM: u64 = 3;

fn random_subset(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Turns after which the model is scored against the true field.
///
/// Fitted models never feed back into the survey, so skipping evaluation at
/// some turns leaves every other turn's result unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseSchedule {
    #[default]
    EveryTurn,
    FirstAndLast,
    /// Only the final model is fitted.
    Never,
}

impl RmseSchedule {
    fn scores(self, turn: usize, last: usize) -> bool {
        match self {
            RmseSchedule::EveryTurn => true,
            RmseSchedule::FirstAndLast => turn == 1 || turn == last,
            RmseSchedule::Never => false,
        }
    }
}

/// Runs the whole survey. Turns that are not scored report NaN RMSE.
pub fn run_survey(
    field: &ScalarField,
    kernel: KernelKind,
    sensor: &SensorModel,
    plan: &LawnmowerPlan,
    seed: u64,
    options: &SurveyOptions,
    schedule: RmseSchedule,
) -> Result<SurveyLog> {
    sensor.validate()?;
    options.initial_hyper.validate(kernel)?;
    if plan.legs.len() < 2 {
        return Err(Error::param("a survey needs at least two legs"));
    }
    let mut noise_rng = stream(seed, NOISE_STREAM);
    let mut half_rng = stream(seed, HALF_STREAM);
    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut hyper = options.initial_hyper;
    let mut turns = Vec::with_capacity(plan.turn_count());
    let mut model = None;

    let optimizer = OptimizerOptions {
        cap_factor: Some(options.update_cap),
        prior_mean: options.prior_mean,
        ..OptimizerOptions::default()
    };

    let (p, v) = sample_swath(
        field,
        &plan.legs[0].stations(sensor.along_track_spacing),
        sensor,
        &mut noise_rng,
    );
    points.extend(p);
    values.extend(v);

    for turn in 1..=plan.turn_count() {
        let leg = &plan.legs[turn];
        let (p, v) = sample_swath(
            field,
            &leg.stations(sensor.along_track_spacing),
            sensor,
            &mut noise_rng,
        );
        points.extend(p);
        values.extend(v);
        let at_turn = |e: Error| Error::SurveyTurn {
            turn,
            source: Box::new(e),
        };
        if points.is_empty() {
            return Err(at_turn(Error::param("no soundings inside the field")));
        }
        let all = TrainingSet::new(points.clone(), values.clone()).map_err(at_turn)?;

        let reestimated = options.is_reestimation_turn(turn);
        if reestimated {
            let half = (all.len() / 2).max(1);
            let k = options
                .max_optimize_points
                .map_or(half, |m| half.min(m.max(1)));
            let subset = all
                .subset(&random_subset(all.len(), k, &mut half_rng))
                .map_err(at_turn)?;
            let report = optimize_with(&subset, kernel, &hyper, &optimizer).map_err(at_turn)?;
            hyper = report.hyper;
        }

        let last = turn == plan.turn_count();
        let score = schedule.scores(turn, plan.turn_count());
        let mut fit_points = 0;
        let mut rmse = f64::NAN;
        if score || last {
            let mut thin_rng = stream(seed, THIN_STREAM + (turn as u64) * 16);
            let fit_set = match options.max_fit_points {
                Some(m) if all.len() > m => all
                    .subset(&random_subset(all.len(), m, &mut thin_rng))
                    .map_err(at_turn)?,
                _ => all,
            };
            fit_points = fit_set.len();
            let m = fit_with_prior(fit_set, kernel, hyper, options.prior_mean).map_err(at_turn)?;
            if score {
                rmse = rmse_against_field(&m, field);
            }
            model = Some(m);
        }
        turns.push(TurnRecord {
            turn,
            samples: points.len(),
            fit_points,
            reestimated,
            hyper,
            rmse,
        });
    }
    Ok(SurveyLog {
        kernel,
        turns,
        points,
        values,
        model: model.expect("final turn always fits"),
    })
}
