//! Zero-shot uses of the trained predictors: prompt search for music
//! generation and arousal-driven video summarization.

pub mod prompts;
pub mod summary;

pub use prompts::{generate_prompts, generate_prompts_capped, select_prompt, select_prompt_with, PromptTemplateSet, DEFAULT_EXPANSION_CAP};
pub use summary::{f_score, knapsack_01, knapsack_select, summarize_video, ArousalSource, VideoClip, VideoSummary, DEFAULT_BUDGET_FRACTION};
