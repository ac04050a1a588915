//! RideGym-style marketplace simulator: competitor pricing, order
//! generation, top-K auto-selection, passenger selection, dispatch and
//! completion.

pub mod config;
pub mod episode;
pub mod market;
pub mod post_pricing;

pub use config::{Cancellation, MarketConfig, MixtureComponent, ScenarioConfig};
pub use episode::{
    collect_randomized, Episode, EpisodeKey, LabeledSample, OrderRecord, Phase, SlotMarket, SlotOutcome, SlotTallies,
    TraceRow,
};
pub use market::{Features, Latent, Opportunity, FEATURE_DIM};
