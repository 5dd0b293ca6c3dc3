//! Reinforcement learning for accessible text: tokenization, word
//! accessibility, readability metrics, rewards and a PPO trainer.

pub mod analysis;
pub mod error;
pub mod frequency;
pub mod metrics;
pub mod ppo;
pub mod reward;
pub mod tokenizer;
pub mod toy;
pub mod versioned;

pub use error::{Error, Result};
pub use frequency::{build_frequency_model, BuildOptions, FrequencyModel};
pub use reward::{terminal_reward, RewardBreakdown, RewardConfig};
pub use tokenizer::{tokenize, TokenizedDocument};
