pub mod cache;
pub mod clock;
pub mod eval;
pub mod gateway;
pub mod pipeline;
pub mod post_retrieval;
pub mod pre_retrieval;
pub mod prompts;
pub mod retrieval;
pub mod similarity;
pub mod splitter;
pub mod text;
pub mod types;
