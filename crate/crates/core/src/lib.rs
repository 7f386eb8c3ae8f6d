pub mod hierarchy;
pub mod llm_backend;
pub mod oracle;
pub mod parallel;
pub mod verification;
pub mod insertion;
pub mod crawler;
pub mod export;
