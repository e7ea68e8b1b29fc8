//! Networks, losses and the DDPG training loop.

pub mod actor;
pub mod batch;
pub mod critic;
pub mod gradcheck;
pub mod losses;
pub mod replay;

pub use actor::{Actor, ActorConfig, ActorGrads, ActorVariant, Aggregation};
pub use batch::ObsBatch;
pub use critic::{Critic, CriticGrads, CriticValues};
pub use losses::{actor_loss, actor_loss_value, critic_loss, td_targets, ActorLossParts, ActorLossWeights};
pub use replay::{ReplayBuffer, Transition};
pub mod checkpoint;
pub mod eval;
pub mod train;

pub use checkpoint::Checkpoint;
pub use eval::{evaluate, EvalReport, EvalSummary};
pub use train::{train, Agent, EpisodeMetrics, TrainConfig, TrainEvent, TrainOutcome, Trainer, METRICS_COLUMNS};
