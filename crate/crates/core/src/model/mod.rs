//! The personalized energy estimation model: configuration, parameter
//! layout, per-driver input preparation and the differentiable forward pass.

pub mod encoding;
pub mod estimator;
pub mod layers;
pub mod params;
pub mod predictor;
pub mod preference;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::features::{
    add_embedding_params, embed_roads, embed_states, embed_trip, encode_trip, trip_continuous, EncodeSettings,
    EncodedTrip, FeatureBundle, FeatureScalers, TRIP_CONT_DIM,
};
use crate::model::params::{Bound, Init, ModelParams, ParamLayout};
use crate::selection::{rank_candidates, select_random, TimeSimilarityMode};
use crate::types::{DriverHistory, RoadNetwork, Splits, Trip, BEHAVIOR_DIM};

pub use preference::ConvMode;

/// Model variants. `Full` is the complete model; the others remove or
/// replace one component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Full architecture trained on pooled data without meta-learning.
    Pec,
    /// No preference encoder or behavior predictor.
    MetaEc,
    /// Random instead of similarity-ranked history selection.
    RandHist,
    /// Encoder runs directly over vehicle states, without the convolution.
    State,
    /// No behavior decoding; the route encoder sees road features only.
    NoBehDec,
    /// Behaviors predicted from road states alone, without attention.
    R2b,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::Pec,
        Variant::MetaEc,
        Variant::RandHist,
        Variant::State,
        Variant::NoBehDec,
        Variant::R2b,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Pec => "pec",
            Variant::MetaEc => "meta_ec",
            Variant::RandHist => "rand_hist",
            Variant::State => "state",
            Variant::NoBehDec => "no_beh_dec",
            Variant::R2b => "r2b",
        }
    }

    pub fn uses_preferences(self) -> bool {
        self != Variant::MetaEc
    }

    pub fn predicts_behaviors(self) -> bool {
        !matches!(self, Variant::MetaEc | Variant::NoBehDec)
    }

    pub fn uses_conv(self) -> bool {
        self != Variant::State
    }

    pub fn meta_trained(self) -> bool {
        self != Variant::Pec
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub top_k: usize,
    /// Convolution window and stride `q`.
    pub window: usize,
    pub heads: usize,
    /// Hidden width of the output MLP; 0 replaces the MLP with the identity.
    pub mlp_hidden: usize,
    pub dist_max_m: f64,
    pub time_max_s: f64,
    pub conv_mode: ConvMode,
    pub time_similarity_mode: TimeSimilarityMode,
    pub variant: Variant,
    /// Seed for random history selection.
    pub selection_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 20,
            top_k: 5,
            window: 4,
            heads: 4,
            mlp_hidden: 40,
            dist_max_m: 100_000.0,
            time_max_s: 36_000.0,
            conv_mode: ConvMode::Depthwise,
            time_similarity_mode: TimeSimilarityMode::TimeOfDay,
            variant: Variant::Full,
            selection_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return bad("embed_dim must be a positive even number");
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad("heads must divide embed_dim");
        }
        if self.top_k == 0 || self.window == 0 {
            return bad("top_k and window must be at least 1");
        }
        if !(self.dist_max_m > 0.0 && self.time_max_s > 0.0) {
            return bad("encoding constants must be positive");
        }
        Ok(())
    }
}

/// History selection and statistical inputs for one target trip.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetContext {
    /// Indices of the selected reference trips in the driver's trip list.
    pub refs: Vec<usize>,
    /// Standardized continuous trip features.
    pub cont: [f64; TRIP_CONT_DIM],
    /// Raw driver statistics.
    pub stats: [f64; BEHAVIOR_DIM],
    pub stats_fallback: bool,
}

/// A driver's trips encoded once, with a context per trip.
#[derive(Debug, Clone)]
pub struct PreparedDriver {
    pub driver_id: String,
    pub trips: Vec<EncodedTrip>,
    pub contexts: Vec<TargetContext>,
    pub splits: Splits,
}

impl PreparedDriver {
    pub fn train_count(&self) -> usize {
        self.splits.train.len()
    }

    /// Trips that carry both an energy label and behavior labels.
    pub fn is_labeled(&self, i: usize) -> bool {
        self.trips[i].y.is_some() && self.trips[i].labels.is_some()
    }
}

/// Forward-pass nodes for one target.
#[derive(Debug, Clone)]
pub struct TapeOutput {
    /// Standardized estimate, `1 x 1`.
    pub y: Var,
    /// Standardized per-road behaviors, `n x 4`.
    pub behaviors: Option<Var>,
    /// Trip importances `μ`, `1 x K'`.
    pub importances: Option<Var>,
    /// Per-head attention weights, `n x K'` each.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEstimate {
    pub segment_id: String,
    /// De-standardized `[speed, accel, energy/hour, energy/km]`.
    pub behaviors: Option<[f64; BEHAVIOR_DIM]>,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    /// Estimated trip energy in label units.
    pub total: f64,
    /// The same estimate in standardized units.
    pub total_standardized: f64,
    pub per_segment: Vec<SegmentEstimate>,
    pub reference_trips: Vec<String>,
    pub importances: Vec<f64>,
    pub stats_fallback: bool,
}

/// Per-trip loss terms in standardized units.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub behavior: Option<Var>,
    pub energy: Var,
    pub total: Var,
}

pub struct Model {
    pub config: ModelConfig,
    pub scalers: FeatureScalers,
    pub layout: Arc<ParamLayout>,
}

impl Model {
    pub fn new(config: ModelConfig, scalers: FeatureScalers) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(build_layout(&config, scalers.road_types.len()));
        Ok(Self { config, scalers, layout })
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        ModelParams { layout: Arc::clone(&self.layout), values: self.layout.init(seed) }
    }

    pub fn settings(&self) -> EncodeSettings {
        EncodeSettings {
            embed_dim: self.config.embed_dim,
            dist_max_m: self.config.dist_max_m,
            time_max_s: self.config.time_max_s,
        }
    }

    pub fn encode(&self, trip: &Trip, network: &RoadNetwork) -> Result<EncodedTrip> {
        encode_trip(trip, network, &self.scalers, self.settings())
    }

    pub fn prepare_driver(&self, history: &DriverHistory, network: &RoadNetwork) -> Result<PreparedDriver> {
        let trips = history.trips.iter().map(|t| self.encode(t, network)).collect::<Result<Vec<_>>>()?;
        let contexts = history
            .trips
            .iter()
            .zip(&trips)
            .map(|(t, e)| self.context(t, e, history, &trips))
            .collect();
        Ok(PreparedDriver { driver_id: history.driver_id.clone(), trips, contexts, splits: history.splits.clone() })
    }

    /// Context for `target` against `history`, whose encoded trips are
    /// `encoded`. The pool is the training split minus the target and minus
    /// trips without trajectories.
    pub fn context(
        &self,
        target: &Trip,
        target_enc: &EncodedTrip,
        history: &DriverHistory,
        encoded: &[EncodedTrip],
    ) -> TargetContext {
        let pool: Vec<usize> = history
            .splits
            .train
            .iter()
            .copied()
            .filter(|&j| history.trips[j].id != target.id && encoded[j].states.is_some())
            .collect();
        let picked = if self.config.variant == Variant::RandHist {
            select_random(target, pool.len(), self.config.top_k, self.config.selection_seed)
        } else {
            let cands: Vec<&Trip> = pool.iter().map(|&j| &history.trips[j]).collect();
            rank_candidates(
                target,
                &cands,
                self.config.top_k,
                self.config.time_similarity_mode,
                self.scalers.utc_offset_s,
            )
        };
        let refs = picked.into_iter().map(|i| pool[i]).collect();
        let stats = mean_stats(pool.iter().filter_map(|&j| encoded[j].stats.as_ref()));
        let (cont, stats_fallback) = trip_continuous(target_enc.route_len_km, stats, &self.scalers);
        TargetContext { refs, cont, stats: stats.unwrap_or(self.scalers.global_stats), stats_fallback }
    }

    fn reference_preference<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, trip: &EncodedTrip) -> Var {
        let x = embed_states(tape, p, trip).expect("reference trip has no trajectory");
        let z = if self.config.variant.uses_conv() {
            preference::extract_behaviors(tape, p, x, self.config.window, self.config.conv_mode)
        } else {
            x
        };
        preference::encode_preference(tape, p, z, self.config.heads)
    }

    /// Differentiable forward pass for `target`. Reference preference
    /// vectors are memoized in `cache` by index into `refs`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        cache: &mut HashMap<usize, Var>,
        refs: &[EncodedTrip],
        target: &EncodedTrip,
        ctx: &TargetContext,
    ) -> TapeOutput {
        let variant = self.config.variant;
        let xs = embed_trip(tape, p, self.config.embed_dim, target.month, target.hour, &ctx.cont);
        let xe = embed_roads(tape, p, target);

        let prefs = if variant.uses_preferences() && !ctx.refs.is_empty() {
            let rows: Vec<Var> = ctx
                .refs
                .iter()
                .map(|&r| match cache.get(&r) {
                    Some(&v) => v,
                    None => {
                        let v = self.reference_preference(tape, p, &refs[r]);
                        cache.insert(r, v);
                        v
                    }
                })
                .collect();
            Some(tape.concat_rows(&rows))
        } else {
            None
        };

        let mut attention = Vec::new();
        let behaviors = if variant.predicts_behaviors() {
            let he = predictor::encode_route(tape, p, xe);
            Some(if variant == Variant::R2b {
                predictor::predict_from_roads(tape, p, he)
            } else if let Some(z) = prefs {
                let (b, w) = predictor::predict_behaviors(tape, p, he, z, self.config.heads);
                attention = w;
                b
            } else {
                let null = p.var("pref.null");
                predictor::predict_from_single(tape, p, null, target.n(), self.config.heads)
            })
        } else {
            None
        };

        let (hz, importances) = if variant.uses_preferences() {
            match prefs {
                Some(z) => {
                    let (hz, mu) = estimator::fuse_preferences(tape, p, xs, z);
                    (Some(hz), Some(mu))
                }
                None => (Some(p.var("pref.null")), None),
            }
        } else {
            (None, None)
        };

        let route = estimator::encode_augmented_route(tape, p, xe, behaviors);
        let h = estimator::gate_fuse(tape, p, hz, xs, route);
        let y = estimator::estimate(tape, p, h, target.vehicle);
        TapeOutput { y, behaviors, importances, attention }
    }

    /// `ℒ_beh = (1/n) Σ|y^e - ŷ^e|`, `ℒ_EC = |y - ŷ|`, `ℒ = ℒ_beh + ℒ_EC`;
    /// variants without behavior decoding use `ℒ_EC` only.
    pub fn trip_loss<T: Real>(&self, tape: &mut Tape<T>, out: &TapeOutput, target: &EncodedTrip) -> Result<LossVars> {
        let y = target.y.ok_or_else(|| Error::InvalidData(format!("trip {} has no energy label", target.id)))?;
        let label = tape.constant(crate::autodiff::Tensor::row_vector(vec![T::from_f64(y)]));
        let diff = tape.sub(out.y, label);
        let energy = tape.abs(diff);
        let Some(pred) = out.behaviors else {
            return Ok(LossVars { behavior: None, energy, total: energy });
        };
        let labels = target.labels.as_ref().ok_or(Error::NoTrajectory)?;
        let lv = tape.constant_f64(labels);
        let diff = tape.sub(pred, lv);
        let abs = tape.abs(diff);
        let sum = tape.sum_all(abs);
        let behavior = tape.scale(sum, 1.0 / target.n() as f64);
        let total = tape.add(behavior, energy);
        Ok(LossVars { behavior: Some(behavior), energy, total })
    }

    /// Mean loss over `targets` (indices into `driver.trips`) and its
    /// gradient with respect to `params`.
    pub fn loss_grad<T: Real>(&self, params: &[T], driver: &PreparedDriver, targets: &[usize]) -> (T, Vec<T>) {
        let mut tape = Tape::new();
        let bound = self.layout.bind(&mut tape, params);
        let mut cache = HashMap::new();
        let mut losses = Vec::with_capacity(targets.len());
        for &t in targets {
            let out = self.forward_tape(&mut tape, &bound, &mut cache, &driver.trips, &driver.trips[t], &driver.contexts[t]);
            let l = self.trip_loss(&mut tape, &out, &driver.trips[t]).expect("training target must be labeled");
            losses.push(l.total);
        }
        let all = tape.concat_rows(&losses);
        let mean = tape.mean_all(all);
        let grads = tape.backward(mean);
        (tape.scalar(mean), self.layout.collect_grad(&bound, &grads))
    }

    /// Mean loss over `targets` without gradients.
    pub fn batch_loss(&self, params: &[f64], driver: &PreparedDriver, targets: &[usize]) -> f64 {
        if targets.is_empty() {
            return 0.0;
        }
        let mut tape = Tape::new();
        let bound = self.layout.bind(&mut tape, params);
        let mut cache = HashMap::new();
        let mut total = 0.0;
        for &t in targets {
            let out = self.forward_tape(&mut tape, &bound, &mut cache, &driver.trips, &driver.trips[t], &driver.contexts[t]);
            let l = self.trip_loss(&mut tape, &out, &driver.trips[t]).expect("evaluation target must be labeled");
            total += tape.scalar(l.total);
        }
        total / targets.len() as f64
    }

    /// Estimate for an already encoded target against the encoded
    /// reference trips `refs`.
    pub fn predict_encoded(
        &self,
        params: &ModelParams,
        refs: &[EncodedTrip],
        target: &EncodedTrip,
        ctx: &TargetContext,
        segment_ids: &[String],
    ) -> EstimateResult {
        let mut tape = Tape::<f64>::new();
        let bound = self.layout.bind(&mut tape, &params.values);
        let mut cache = HashMap::new();
        let out = self.forward_tape(&mut tape, &bound, &mut cache, refs, target, ctx);
        self.result(&tape, &out, refs, target, ctx, segment_ids)
    }

    fn result(
        &self,
        tape: &Tape<f64>,
        out: &TapeOutput,
        refs: &[EncodedTrip],
        target: &EncodedTrip,
        ctx: &TargetContext,
        segment_ids: &[String],
    ) -> EstimateResult {
        let std_y = tape.scalar(out.y);
        let total = self.scalers.label.inverse(std_y);
        let behaviors: Option<Vec<[f64; BEHAVIOR_DIM]>> = out.behaviors.map(|b| {
            let v = tape.value(b);
            (0..v.rows)
                .map(|i| std::array::from_fn(|j| self.scalers.behavior.invert(j, v.get(i, j))))
                .collect()
        });
        let route_m: f64 = target.segment_lengths_m.iter().sum();
        let per_segment = segment_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let b = behaviors.as_ref().map(|b| b[i]);
                let energy = match b {
                    Some(b) => b[3] * target.segment_lengths_m[i] / 1000.0,
                    None if route_m > 0.0 => total * target.segment_lengths_m[i] / route_m,
                    None => 0.0,
                };
                SegmentEstimate { segment_id: id.clone(), behaviors: b, energy }
            })
            .collect();
        EstimateResult {
            total,
            total_standardized: std_y,
            per_segment,
            reference_trips: ctx.refs.iter().map(|&r| refs[r].id.clone()).collect(),
            importances: out.importances.map(|m| tape.value(m).data.clone()).unwrap_or_default(),
            stats_fallback: ctx.stats_fallback,
        }
    }

    /// Estimate for the `i`-th trip of a prepared driver.
    pub fn predict(&self, params: &ModelParams, driver: &PreparedDriver, i: usize, segment_ids: &[String]) -> EstimateResult {
        self.predict_encoded(params, &driver.trips, &driver.trips[i], &driver.contexts[i], segment_ids)
    }

    /// End-to-end estimate for a (possibly unseen) target trip given the
    /// driver's history. The target's trajectory and label are never read.
    pub fn forward(
        &self,
        target: &Trip,
        history: &DriverHistory,
        params: &ModelParams,
        network: &RoadNetwork,
    ) -> Result<EstimateResult> {
        let bare = bare_trip(target);
        let enc = self.encode(&bare, network)?;
        let refs = history.trips.iter().map(|t| self.encode(t, network)).collect::<Result<Vec<_>>>()?;
        let ctx = self.context(&bare, &enc, history, &refs);
        Ok(self.predict_encoded(params, &refs, &enc, &ctx, &bare.route.segments))
    }

    /// Embedded feature vectors of `trip` under `params`.
    pub fn build_features(
        &self,
        params: &ModelParams,
        trip: &Trip,
        history: &DriverHistory,
        network: &RoadNetwork,
    ) -> Result<FeatureBundle> {
        let enc = self.encode(trip, network)?;
        let refs = history.trips.iter().map(|t| self.encode(t, network)).collect::<Result<Vec<_>>>()?;
        let ctx = self.context(trip, &enc, history, &refs);
        let mut tape = Tape::<f64>::new();
        let bound = self.layout.bind(&mut tape, &params.values);
        let xs = embed_trip(&mut tape, &bound, self.config.embed_dim, enc.month, enc.hour, &ctx.cont);
        let xe = embed_roads(&mut tape, &bound, &enc);
        let xl = embed_states(&mut tape, &bound, &enc);
        Ok(FeatureBundle {
            trip_stat: tape.value(xs).clone(),
            road_seq: tape.value(xe).clone(),
            state_seq: xl.map(|v| tape.value(v).clone()),
            behavior_labels: enc.labels.clone(),
            driver_stats: ctx.stats,
            stats_fallback: ctx.stats_fallback,
        })
    }
}

/// Copy of `trip` with only the fields an estimate may depend on.
pub fn bare_trip(trip: &Trip) -> Trip {
    Trip { trajectory: None, y_total: None, ..trip.clone() }
}

fn mean_stats<'a>(stats: impl Iterator<Item = &'a [f64; BEHAVIOR_DIM]>) -> Option<[f64; BEHAVIOR_DIM]> {
    let mut n = 0usize;
    let mut acc = [0.0; BEHAVIOR_DIM];
    for s in stats {
        for j in 0..BEHAVIOR_DIM {
            acc[j] += s[j];
        }
        n += 1;
    }
    (n > 0).then(|| acc.map(|v| v / n as f64))
}

/// Parameter layout for `config` with `road_types` road type codes.
pub fn build_layout(config: &ModelConfig, road_types: usize) -> ParamLayout {
    let d = config.embed_dim;
    let variant = config.variant;
    let mut layout = ParamLayout::new();
    add_embedding_params(&mut layout, d, road_types);
    if variant.uses_preferences() {
        if variant.uses_conv() {
            preference::add_conv_params(&mut layout, d, config.window, config.conv_mode);
        }
        preference::add_encoder_params(&mut layout, d);
        layout.add("pref.null", 1, d, Init::Embedding);
        estimator::add_fuse_params(&mut layout, d);
    }
    if variant.predicts_behaviors() {
        predictor::add_predictor_params(&mut layout, d, config.heads, variant == Variant::R2b);
    }
    let behavior_in = if variant.predicts_behaviors() { BEHAVIOR_DIM } else { 0 };
    estimator::add_route_params(&mut layout, d, behavior_in);
    estimator::add_gates(&mut layout, d, variant.uses_preferences());
    estimator::add_head_params(&mut layout, d, config.mlp_hidden);
    layout
}
