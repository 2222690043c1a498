//! Listwise and pointwise completion prompts.
//!
//! Both templates are plain completion prompts. Passage and query texts have their line breaks
//! replaced by single spaces before templating since each template is line-structured. When
//! the prompt would exceed the budget, every passage is cut at a token boundary to the same
//! allowance `floor((context_limit - response_reserve - overhead) / m)`, where `overhead` is the
//! token count of the template with empty passage slots. Truncation is silent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Passage, Query};

pub const MAX_LISTWISE_PASSAGES: usize = 100;
pub const LISTWISE_INSTRUCTION: &str = "Sort the Passages by their relevance to the Query.";
pub const LISTWISE_ANSWER_PREFIX: &str = "Sorted Passages = [";
pub const POINTWISE_QUESTION: &str = "Is this passage relevant to the query? ";
pub const POINTWISE_INSTRUCTION: &str = "Please answer True/False.";
pub const POINTWISE_ANSWER_PREFIX: &str = "Answer:";

/// Token counting and token-boundary truncation for one model family.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;

    /// Longest prefix of `text` that ends on a token boundary and counts at most `max_tokens`.
    fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str;
}

/// Whitespace-separated tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        if max_tokens == 0 {
            return "";
        }
        let mut seen = 0;
        let mut in_token = false;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if in_token && seen == max_tokens {
                    return &text[..i];
                }
                in_token = false;
            } else if !in_token {
                in_token = true;
                seen += 1;
            }
        }
        text
    }
}

/// `ceil(bytes / 4)`: the usual rough estimate for BPE tokenizers on English text. Used by the
/// HTTP backend, which has no local tokenizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteApproxCounter;

impl TokenCounter for ByteApproxCounter {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }

    fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        let mut end = text.len().min(max_tokens.saturating_mul(4));
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        &text[..end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptBudget {
    pub context_limit: usize,
    pub response_reserve: usize,
}

impl Default for PromptBudget {
    fn default() -> Self {
        Self {
            context_limit: 4000,
            response_reserve: 128,
        }
    }
}

impl PromptBudget {
    pub fn new(context_limit: usize, response_reserve: usize) -> Result<Self> {
        let budget = Self {
            context_limit,
            response_reserve,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if self.response_reserve == 0 || self.context_limit <= self.response_reserve {
            return Err(Error::Param(format!(
                "need context_limit > response_reserve > 0, got {} and {}",
                self.context_limit, self.response_reserve
            )));
        }
        Ok(())
    }

    /// Tokens available to the prompt itself.
    pub fn prompt_tokens(&self) -> usize {
        self.context_limit.saturating_sub(self.response_reserve)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    /// Number of passages in the prompt (1 for pointwise prompts).
    pub window_size: usize,
}

pub fn normalize_text(text: &str) -> String {
    text.replace("\r\n", " ").replace(['\n', '\r'], " ")
}

fn render_listwise<S: AsRef<str>>(query: &str, passages: &[S]) -> String {
    let mut out = String::new();
    for (i, p) in passages.iter().enumerate() {
        out.push_str(&format!("Passage{} = {}\n", i + 1, p.as_ref()));
    }
    let ids: Vec<String> = (1..=passages.len()).map(|i| format!("Passage{i}")).collect();
    out.push_str(&format!("Query = {query}\n"));
    out.push_str(&format!("Passages = [{}]\n", ids.join(", ")));
    out.push_str(LISTWISE_INSTRUCTION);
    out.push('\n');
    out.push_str(LISTWISE_ANSWER_PREFIX);
    out
}

fn render_pointwise(query: &str, passage: &str) -> String {
    format!(
        "Passage: {passage}\nQuery: {query}\n{POINTWISE_QUESTION}\n{POINTWISE_INSTRUCTION}\n{POINTWISE_ANSWER_PREFIX}"
    )
}

/// Cuts each passage to the uniform per-passage allowance. Passages already within the
/// allowance are returned untouched.
pub fn truncate_passages(
    passages: &[Passage],
    fixed_overhead: usize,
    budget: &PromptBudget,
    counter: &dyn TokenCounter,
) -> Result<Vec<Passage>> {
    if passages.is_empty() {
        return Ok(Vec::new());
    }
    let free = budget.prompt_tokens().saturating_sub(fixed_overhead);
    let allowance = free / passages.len();
    if allowance < 1 {
        return Err(Error::Budget(format!(
            "{} prompt tokens minus {fixed_overhead} template tokens leaves less than one token \
             for each of {} passages",
            budget.prompt_tokens(),
            passages.len()
        )));
    }
    Ok(passages
        .iter()
        .map(|p| {
            if counter.count(&p.text) <= allowance {
                p.clone()
            } else {
                Passage::new(p.id.clone(), counter.truncate(&p.text, allowance))
            }
        })
        .collect())
}

fn check_fits(
    text: String,
    window_size: usize,
    budget: &PromptBudget,
    counter: &dyn TokenCounter,
) -> Result<PromptText> {
    let used = counter.count(&text);
    if used > budget.prompt_tokens() {
        return Err(Error::Budget(format!(
            "prompt needs {used} tokens, budget allows {}",
            budget.prompt_tokens()
        )));
    }
    Ok(PromptText { text, window_size })
}

fn normalized(passages: &[Passage]) -> Vec<Passage> {
    passages
        .iter()
        .map(|p| Passage::new(p.id.clone(), normalize_text(&p.text)))
        .collect()
}

/// The listwise ranking prompt over `passages`, identified as `Passage1..PassageM` in order.
pub fn build_listwise_prompt(
    query: &Query,
    passages: &[Passage],
    budget: &PromptBudget,
    counter: &dyn TokenCounter,
) -> Result<PromptText> {
    if passages.is_empty() || passages.len() > MAX_LISTWISE_PASSAGES {
        return Err(Error::Param(format!(
            "listwise prompt takes 1..={MAX_LISTWISE_PASSAGES} passages, got {}",
            passages.len()
        )));
    }
    let query_text = normalize_text(&query.text);
    let passages = normalized(passages);
    let empty = vec![""; passages.len()];
    let overhead = counter.count(&render_listwise(&query_text, &empty));
    let fitted = truncate_passages(&passages, overhead, budget, counter)?;
    let texts: Vec<&str> = fitted.iter().map(|p| p.text.as_str()).collect();
    check_fits(render_listwise(&query_text, &texts), passages.len(), budget, counter)
}

/// The pointwise relevance prompt for one passage.
pub fn build_pointwise_prompt(
    query: &Query,
    passage: &Passage,
    budget: &PromptBudget,
    counter: &dyn TokenCounter,
) -> Result<PromptText> {
    let query_text = normalize_text(&query.text);
    let passage = normalized(std::slice::from_ref(passage));
    let overhead = counter.count(&render_pointwise(&query_text, ""));
    let fitted = truncate_passages(&passage, overhead, budget, counter)?;
    check_fits(render_pointwise(&query_text, &fitted[0].text), 1, budget, counter)
}

/// Query and passage texts recovered from a listwise prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListwiseFields {
    pub query: String,
    pub passages: Vec<String>,
}

/// Inverse of [`build_listwise_prompt`]; `None` if `text` does not follow the template.
pub fn parse_listwise_prompt(text: &str) -> Option<ListwiseFields> {
    let body = text.strip_suffix(LISTWISE_ANSWER_PREFIX)?;
    let lines: Vec<&str> = body.split('\n').collect();
    // passages..., query, id list, instruction, "" (after the final newline)
    if lines.len() < 5 || !lines[lines.len() - 1].is_empty() || lines[lines.len() - 2] != LISTWISE_INSTRUCTION {
        return None;
    }
    let m = lines.len() - 4;
    let mut passages = Vec::with_capacity(m);
    for (i, line) in lines[..m].iter().enumerate() {
        let prefix = format!("Passage{} = ", i + 1);
        passages.push(line.strip_prefix(prefix.as_str())?.to_string());
    }
    let query = lines[m].strip_prefix("Query = ")?.to_string();
    let ids: Vec<String> = (1..=m).map(|i| format!("Passage{i}")).collect();
    if lines[m + 1] != format!("Passages = [{}]", ids.join(", ")) {
        return None;
    }
    Some(ListwiseFields { query, passages })
}

/// Inverse of [`build_pointwise_prompt`], returning `(query, passage)`.
pub fn parse_pointwise_prompt(text: &str) -> Option<(String, String)> {
    let lines: Vec<&str> = text.split('\n').collect();
    if lines.len() != 5
        || lines[2] != POINTWISE_QUESTION
        || lines[3] != POINTWISE_INSTRUCTION
        || lines[4] != POINTWISE_ANSWER_PREFIX
    {
        return None;
    }
    let passage = lines[0].strip_prefix("Passage: ")?;
    let query = lines[1].strip_prefix("Query: ")?;
    Some((query.to_string(), passage.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PassageId, QueryId};
    use proptest::prelude::*;

    fn query(text: &str) -> Query {
        Query::new(QueryId::new("q").unwrap(), text).unwrap()
    }

    fn passages(texts: &[&str]) -> Vec<Passage> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Passage::new(PassageId::new(format!("d{i}")).unwrap(), *t))
            .collect()
    }

    fn roomy() -> PromptBudget {
        PromptBudget::new(4000, 128).unwrap()
    }

    #[test]
    fn listwise_two_passages() {
        let p = build_listwise_prompt(
            &query("dessert recipes"),
            &passages(&["apple pie", "stock market"]),
            &roomy(),
            &WhitespaceCounter,
        )
        .unwrap();
        assert_eq!(
            p.text,
            "Passage1 = apple pie\nPassage2 = stock market\nQuery = dessert recipes\n\
             Passages = [Passage1, Passage2]\nSort the Passages by their relevance to the Query.\n\
             Sorted Passages = ["
        );
        assert_eq!(p.window_size, 2);
    }

    #[test]
    fn listwise_single_passage_enumeration() {
        let p = build_listwise_prompt(&query("q"), &passages(&["x"]), &roomy(), &WhitespaceCounter).unwrap();
        assert!(p.text.contains("\nPassages = [Passage1]\n"));
    }

    #[test]
    fn listwise_rejects_bad_window() {
        assert!(build_listwise_prompt(&query("q"), &[], &roomy(), &WhitespaceCounter).is_err());
        let many = passages(&vec!["x"; 101]);
        assert!(build_listwise_prompt(&query("q"), &many, &roomy(), &WhitespaceCounter).is_err());
    }

    #[test]
    fn pointwise_template() {
        let p = build_pointwise_prompt(
            &query("bm25"),
            &passages(&["a ranking function"])[0],
            &roomy(),
            &WhitespaceCounter,
        )
        .unwrap();
        assert_eq!(
            p.text,
            "Passage: a ranking function\nQuery: bm25\nIs this passage relevant to the query? \n\
             Please answer True/False.\nAnswer:"
        );
    }

    #[test]
    fn pointwise_empty_passage() {
        let p = build_pointwise_prompt(&query("bm25"), &passages(&[""])[0], &roomy(), &WhitespaceCounter).unwrap();
        assert!(p.text.starts_with("Passage: \nQuery: bm25\n"));
    }

    #[test]
    fn newlines_become_spaces() {
        let p = build_pointwise_prompt(
            &query("a\nb"),
            &passages(&["x\r\ny\nz"])[0],
            &roomy(),
            &WhitespaceCounter,
        )
        .unwrap();
        assert!(p.text.starts_with("Passage: x y z\nQuery: a b\n"));
    }

    #[test]
    fn oversize_pointwise_passage_is_cut() {
        // Template alone is 14 whitespace tokens with query "bm25".
        let budget = PromptBudget::new(24, 5).unwrap();
        let long = passages(&["one two three four five six seven eight nine ten"]);
        let p = build_pointwise_prompt(&query("bm25"), &long[0], &budget, &WhitespaceCounter).unwrap();
        assert!(p.text.starts_with("Passage: one two three four five\nQuery"));
        assert!(WhitespaceCounter.count(&p.text) <= budget.prompt_tokens());
    }

    #[test]
    fn truncation_allowance_rules() {
        let budget = PromptBudget::new(20, 5).unwrap();
        // 15 prompt tokens, overhead 10 -> allowance 5 for one passage.
        let short = passages(&["a b c"]);
        assert_eq!(
            truncate_passages(&short, 10, &budget, &WhitespaceCounter).unwrap(),
            short
        );
        let long = passages(&["1 2 3 4 5 6 7 8 9"]);
        let cut = truncate_passages(&long, 10, &budget, &WhitespaceCounter).unwrap();
        assert_eq!(cut[0].text, "1 2 3 4 5");
        assert!(matches!(
            truncate_passages(&long, 15, &budget, &WhitespaceCounter),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn budget_too_small_for_listwise_is_an_error() {
        let budget = PromptBudget::new(12, 1).unwrap();
        let err = build_listwise_prompt(&query("q"), &passages(&["a", "b"]), &budget, &WhitespaceCounter).unwrap_err();
        assert!(matches!(err, Error::Budget(_)));
    }

    #[test]
    fn budget_validation() {
        assert!(PromptBudget::new(10, 0).is_err());
        assert!(PromptBudget::new(10, 10).is_err());
        assert!(PromptBudget::new(11, 10).is_ok());
    }

    #[test]
    fn whitespace_counter() {
        assert_eq!(WhitespaceCounter.count("a b  c"), 3);
        assert_eq!(WhitespaceCounter.count(""), 0);
        assert_eq!(WhitespaceCounter.truncate("  a  b c", 2), "  a  b");
        assert_eq!(WhitespaceCounter.truncate("a b", 5), "a b");
        assert_eq!(WhitespaceCounter.truncate("a b", 0), "");
    }

    #[test]
    fn byte_counter() {
        assert_eq!(ByteApproxCounter.count(""), 0);
        assert_eq!(ByteApproxCounter.count("abcde"), 2);
        assert_eq!(ByteApproxCounter.truncate("abcdefghij", 2), "abcdefgh");
        // never splits a codepoint
        assert_eq!(ByteApproxCounter.truncate("ééé", 1), "éé");
    }

    #[test]
    fn prompt_parsers_invert_builders() {
        let ps = passages(&["apple pie", "stock = market", ""]);
        let p = build_listwise_prompt(&query("dessert"), &ps, &roomy(), &WhitespaceCounter).unwrap();
        let fields = parse_listwise_prompt(&p.text).unwrap();
        assert_eq!(fields.query, "dessert");
        assert_eq!(fields.passages, vec!["apple pie", "stock = market", ""]);

        let p = build_pointwise_prompt(&query("bm25"), &ps[0], &roomy(), &WhitespaceCounter).unwrap();
        assert_eq!(
            parse_pointwise_prompt(&p.text),
            Some(("bm25".to_string(), "apple pie".to_string()))
        );
        assert_eq!(parse_listwise_prompt("hello"), None);
        assert_eq!(parse_pointwise_prompt("hello"), None);
    }

    fn word_text() -> impl Strategy<Value = String> {
        proptest::collection::vec("[a-z]{1,6}", 0..40).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn listwise_always_fits(
            texts in proptest::collection::vec(word_text(), 1..12),
            limit in 40usize..400,
        ) {
            let ps: Vec<Passage> = texts.iter().enumerate()
                .map(|(i, t)| Passage::new(PassageId::new(format!("d{i}")).unwrap(), t.clone()))
                .collect();
            let budget = PromptBudget::new(limit, 8).unwrap();
            for counter in [&WhitespaceCounter as &dyn TokenCounter, &ByteApproxCounter] {
                match build_listwise_prompt(&query("some query"), &ps, &budget, counter) {
                    Ok(p) => prop_assert!(counter.count(&p.text) <= budget.prompt_tokens()),
                    Err(Error::Budget(_)) => {}
                    Err(e) => prop_assert!(false, "{e}"),
                }
            }
        }

        #[test]
        fn truncation_is_stable(
            texts in proptest::collection::vec(word_text(), 1..8),
            overhead in 0usize..30,
            limit in 40usize..200,
        ) {
            let ps: Vec<Passage> = texts.iter().enumerate()
                .map(|(i, t)| Passage::new(PassageId::new(format!("d{i}")).unwrap(), t.clone()))
                .collect();
            let budget = PromptBudget::new(limit, 4).unwrap();
            for counter in [&WhitespaceCounter as &dyn TokenCounter, &ByteApproxCounter] {
                if let Ok(once) = truncate_passages(&ps, overhead, &budget, counter) {
                    let twice = truncate_passages(&once, overhead, &budget, counter).unwrap();
                    prop_assert_eq!(&once, &twice);
                }
            }
        }

        #[test]
        fn larger_context_never_shortens(
            texts in proptest::collection::vec(word_text(), 1..8),
            limit in 40usize..200,
            extra in 0usize..200,
        ) {
            let ps: Vec<Passage> = texts.iter().enumerate()
                .map(|(i, t)| Passage::new(PassageId::new(format!("d{i}")).unwrap(), t.clone()))
                .collect();
            let small = PromptBudget::new(limit, 4).unwrap();
            let large = PromptBudget::new(limit + extra, 4).unwrap();
            if let Ok(a) = truncate_passages(&ps, 10, &small, &WhitespaceCounter) {
                let b = truncate_passages(&ps, 10, &large, &WhitespaceCounter).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!(y.text.len() >= x.text.len());
                    prop_assert!(y.text.starts_with(&x.text));
                }
            }
        }
    }
}
