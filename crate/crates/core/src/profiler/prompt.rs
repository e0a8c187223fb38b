//! Profiler prompt construction.

use super::feedback::FeedbackLedger;
use crate::types::{DatasetMeta, QueryRecord};

/// Profiler prompt with `{query}`, `{database_metadata}` and `{chunk_size}`
/// placeholders.
pub const PROFILE_PROMPT_TEMPLATE: &str = "\nFor the given query = {query}: Analyse the language and internal structure of the query and provide the following information :\n\n    1. Does it needs joint reasoning across multiple documents or not.\n    2. Provide a complexity profile for the query: \n        Complexity: High/Low \n         Joint Reasoning needed: Yes/No \n \"\n    3. Does this query need input chunks to be summarized and if yes, provide a range in words for the summarized chunks.\n    4. How many pieces of information is needed to answer the query?\n\n    database_metadata = {database_metadata}\n    chunk_size = {chunk_size}\n        \nEstimate the query profile along with the database_metadata and chunk_size to provide the output.\n\n";

/// System message pinning the answer to the line grammar the parser reads.
pub(crate) const ANSWER_FORMAT_INSTRUCTIONS: &str = "Reply with exactly these four lines and nothing else:\n\
Complexity: High|Low\n\
Joint Reasoning needed: Yes|No\n\
Pieces: <integer from 1 to 10>\n\
Summary range: <integer>-<integer> (each from 30 to 200)";

fn fill(template: &str, query: &str, meta: &DatasetMeta) -> String {
    // Substitute the query last so braces inside it are left alone.
    template
        .replace("{database_metadata}", &meta.description)
        .replace("{chunk_size}", &meta.chunk_size.to_string())
        .replace("{query}", query)
}

/// User prompt for one query, preceded by any recorded feedback examples.
pub fn render_prompt(query: &QueryRecord, meta: &DatasetMeta, feedback: &FeedbackLedger) -> String {
    let mut out = String::new();
    if !feedback.is_empty() {
        out.push_str(
            "Here are earlier queries, their most accurate answers and the profile that should have been produced:\n\n",
        );
        for entry in feedback.entries() {
            out.push_str(&entry.render());
            out.push('\n');
        }
    }
    out.push_str(&fill(PROFILE_PROMPT_TEMPLATE, &query.text, meta));
    out
}
