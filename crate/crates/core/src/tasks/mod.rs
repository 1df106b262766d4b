//! Task ingestion and evaluation protocols.

pub mod copy_source;
pub mod eval;
pub mod items;
pub mod summarize;

pub use copy_source::{make_copy_source_task, CopySourceConfig, CopySourceTask, ItemSelection};
pub use eval::{
    accuracy_table, eval_last_token, eval_lama_style, eval_multiple_choice, AccuracyColumn, EvalResult, ItemResult,
    LamaTask, LastTokenTask, McTask, TaskKind,
};
pub use items::{read_jsonl, write_jsonl, LamaItem, LastTokenItem, McItem, SummarizeItem};
pub use summarize::{summarize_eval, rouge_table, RougeRow, SummarizeConfig};
