//! Fine-grained RLHF at desk scale.
//!
//! Minimal-edit preference pairs are aligned token by token so that a
//! token-level Bradley–Terry reward model can learn from the changed spans.
//! PPO then consumes its per-token reward vector. A synthetic politeness task with a
//! known per-token oracle makes every stage measurable.
//!
//! The differentiable core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below are what the harness and CLI use.

pub mod corpus;
pub mod editdiff;
pub mod encoder;
pub mod harness;
pub mod ppo;
pub mod reward;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use scalar::Scalar;

pub type Graph64 = tensor::Graph<f64>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type RewardModel64 = reward::RewardModel<f64>;
pub type RewardTrace64 = reward::RewardTrace<f64>;
pub type Policy64 = ppo::Policy<f64>;
pub type Trajectory64 = ppo::Trajectory<f64>;

pub type Graph32 = tensor::Graph<f32>;
pub type RewardModel32 = reward::RewardModel<f32>;
pub type Policy32 = ppo::Policy<f32>;
