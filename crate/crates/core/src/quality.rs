//! Two-stage quality tagging: cheap deterministic heuristics gate an
//! LLM-judge scoring pass. Verdicts are stored, never filtered here — export
//! stages consume them.

use std::collections::BTreeSet;

use serde_json::Value;

use crate::backend::{BackendSet, ChatMessage, ChatRequest};
use crate::config::{HeuristicRules, QualityConfig, Role};
use crate::dataio::Record;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    TooShort,
    TooLong,
    HighRepetition,
    EmptyTurn,
    RefusalPhrase,
    NonUtf8Artifact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Drop,
    Review,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct QualityReport {
    pub heuristic_flags: BTreeSet<Flag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_rationale: Option<String>,
    pub verdict: Verdict,
}

impl QualityReport {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).unwrap_or(Value::Null)
    }
}

/// A conversation turn as seen by the tagger.
#[derive(Debug, Clone)]
pub struct Turn {
    pub role: String,
    pub text: String,
}

/// Extract turns from a record field (list of `{role, content}` objects) or
/// fall back to the chat history.
pub fn conversation_turns(
    record: &Record,
    conversation_key: &str,
    history: &[ChatMessage],
) -> Vec<Turn> {
    if let Some(Value::Array(items)) = record.get(conversation_key) {
        let turns: Vec<Turn> = items
            .iter()
            .filter_map(|m| {
                let obj = m.as_object()?;
                let role = obj.get("role")?.as_str()?.to_string();
                let text = match obj.get("content") {
                    Some(Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                    None => String::new(),
                };
                Some(Turn { role, text })
            })
            .collect();
        if !turns.is_empty() {
            return turns;
        }
    }
    history
        .iter()
        .map(|m| Turn {
            role: m.role.clone(),
            text: m.text_content(),
        })
        .collect()
}

/// Stage 1: deterministic flags over the assistant side of a conversation.
pub fn heuristic_stage(turns: &[Turn], rules: &HeuristicRules) -> BTreeSet<Flag> {
    let mut flags = BTreeSet::new();
    let assistant_text: Vec<&str> = turns
        .iter()
        .filter(|t| t.role == "assistant")
        .map(|t| t.text.as_str())
        .collect();
    // Records with no assistant side are judged on all turns.
    let texts: Vec<&str> = if assistant_text.is_empty() {
        turns.iter().map(|t| t.text.as_str()).collect()
    } else {
        assistant_text
    };

    if texts.iter().any(|t| t.trim().is_empty()) {
        flags.insert(Flag::EmptyTurn);
    }
    let total_chars: usize = texts.iter().map(|t| t.chars().count()).sum();
    if total_chars > 0 && total_chars < rules.min_chars {
        flags.insert(Flag::TooShort);
    }
    if total_chars > rules.max_chars {
        flags.insert(Flag::TooLong);
    }
    let joined = texts.join("\n");
    let (max_count, ratio) = max_ngram_stats(&joined, 4);
    // A 4-gram seen once is not repetition, however short the text.
    if max_count >= 2 && ratio > rules.repetition_ratio {
        flags.insert(Flag::HighRepetition);
    }
    let lowered = joined.to_lowercase();
    if rules.refusal_phrases.iter().any(|p| !p.is_empty() && lowered.contains(&p.to_lowercase())) {
        flags.insert(Flag::RefusalPhrase);
    }
    if joined.contains('\u{FFFD}') {
        flags.insert(Flag::NonUtf8Artifact);
    }
    flags
}

/// Frequency ratio of the most common word n-gram.
pub fn max_ngram_ratio(text: &str, n: usize) -> f64 {
    max_ngram_stats(text, n).1
}

/// (occurrences of the most common word n-gram, its frequency ratio).
pub fn max_ngram_stats(text: &str, n: usize) -> (usize, f64) {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < n + 1 {
        return (0, 0.0);
    }
    let mut counts: std::collections::HashMap<&[&str], usize> = std::collections::HashMap::new();
    let total = words.len() - n + 1;
    let mut max = 0;
    for window in words.windows(n) {
        let c = counts.entry(window).or_insert(0);
        *c += 1;
        max = max.max(*c);
    }
    (max, max as f64 / total as f64)
}

const JUDGE_RUBRIC: &str = "You are a strict data-quality judge. Rate the assistant's side of the \
conversation below on helpfulness, correctness, and format, as one overall score from 1 (unusable) \
to 5 (excellent). Reply as JSON with fields score and rationale.\n\nConversation:\n{conversation}";

fn judge_schema() -> Value {
    serde_json::json!({
        "type": "object",
        "properties": {
            "score": {"type": "number", "description": "Overall quality, 1 to 5"},
            "rationale": {"type": "string"},
        },
        "required": ["score", "rationale"],
    })
}

/// Stage 2: LLM-judge scoring with a fixed rubric and structured output.
/// Scores are clamped to [1, 5].
pub fn judge_stage(
    turns: &[Turn],
    judge_model: &str,
    backends: &BackendSet,
) -> Result<(f64, String)> {
    let mut convo = String::new();
    for t in turns {
        convo.push_str(&format!("{}: {}\n", t.role, t.text));
    }
    let prompt = JUDGE_RUBRIC.replace("{conversation}", &convo);
    let backend = backends.get(judge_model);
    let req = ChatRequest::new(judge_model, vec![ChatMessage::text(Role::User, prompt)]);
    let schema = judge_schema();
    let parsed = backend.complete_structured(&req, &schema)?;
    let raw = parsed.get("score").and_then(|s| s.as_f64()).unwrap_or(1.0);
    let score = raw.clamp(1.0, 5.0);
    if score != raw {
        log::warn!("judge score {raw} clamped to {score}");
    }
    let rationale = parsed
        .get("rationale")
        .and_then(|r| r.as_str())
        .unwrap_or("")
        .to_string();
    Ok((score, rationale))
}

/// Tag one record. Heuristic flags drop the record without consulting the
/// judge; judge failures park it for review rather than silently keeping or
/// dropping.
pub fn tag_record(
    record: &Record,
    history: &[ChatMessage],
    config: &QualityConfig,
    backends: &BackendSet,
) -> QualityReport {
    let turns = conversation_turns(record, &config.conversation_key, history);
    let flags = heuristic_stage(&turns, &config.rules);
    if !flags.is_empty() {
        return QualityReport {
            heuristic_flags: flags,
            llm_score: None,
            llm_rationale: None,
            verdict: Verdict::Drop,
        };
    }
    let Some(judge_model) = &config.judge_model else {
        return QualityReport {
            heuristic_flags: flags,
            llm_score: None,
            llm_rationale: None,
            verdict: Verdict::Keep,
        };
    };
    match judge_stage(&turns, judge_model, backends) {
        Ok((score, rationale)) => QualityReport {
            heuristic_flags: flags,
            llm_score: Some(score),
            llm_rationale: Some(rationale),
            verdict: if score < config.threshold {
                Verdict::Drop
            } else {
                Verdict::Keep
            },
        },
        Err(e) => {
            log::warn!("judge failed: {e}");
            QualityReport {
                heuristic_flags: flags,
                llm_score: None,
                llm_rationale: Some(format!("judge error: {e}")),
                verdict: Verdict::Review,
            }
        }
    }
}

/// Tag a batch of records, attaching each report under `quality`.
pub fn tag_records(
    records: Vec<Record>,
    config: &QualityConfig,
    backends: &BackendSet,
) -> Vec<Record> {
    records
        .into_iter()
        .map(|mut r| {
            let report = tag_record(&r, &[], config, backends);
            r.insert("quality".to_string(), report.to_value());
            r
        })
        .collect()
}

/// Quality score lookup used by DPO extraction.
pub fn llm_score_of(record: &Record) -> Option<f64> {
    record
        .get("quality")
        .and_then(|q| q.get("llm_score"))
        .and_then(|s| s.as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendConfig, MockStep};

    fn turn(role: &str, text: &str) -> Turn {
        Turn {
            role: role.to_string(),
            text: text.to_string(),
        }
    }

    fn rules() -> HeuristicRules {
        HeuristicRules::default()
    }

    #[test]
    fn empty_assistant_turn_flags() {
        let flags = heuristic_stage(&[turn("user", "hi"), turn("assistant", "")], &rules());
        assert_eq!(flags, [Flag::EmptyTurn].into_iter().collect());
    }

    #[test]
    fn repetition_ratio_hand_computed() {
        // 50 repetitions of "word": 47 4-grams, all identical, ratio 1.0.
        let text = vec!["word"; 50].join(" ");
        assert!((max_ngram_ratio(&text, 4) - 1.0).abs() < 1e-9);
        let flags = heuristic_stage(&[turn("assistant", &text)], &rules());
        assert!(flags.contains(&Flag::HighRepetition));
    }

    #[test]
    fn normal_answer_has_no_flags() {
        let text = "The capital of France is Paris. It has been the seat of government for \
                    centuries and hosts about two million residents within city limits today.";
        let flags = heuristic_stage(&[turn("user", "capital?"), turn("assistant", text)], &rules());
        assert!(flags.is_empty(), "flags: {flags:?}");
    }

    #[test]
    fn refusal_and_length_flags() {
        let flags = heuristic_stage(&[turn("assistant", "I cannot assist with that.")], &rules());
        assert!(flags.contains(&Flag::RefusalPhrase));

        let flags = heuristic_stage(&[turn("assistant", "ok")], &rules());
        assert!(flags.contains(&Flag::TooShort));

        let long = "x".repeat(20_000);
        let flags = heuristic_stage(&[turn("assistant", &long)], &rules());
        assert!(flags.contains(&Flag::TooLong));
    }

    #[test]
    fn judge_scripted_score() {
        let backends = BackendSet::default();
        backends.insert(BackendConfig::mock("judge").with_script(vec![MockStep::Text(
            "{\"score\": 4.5, \"rationale\": \"good\"}".into(),
        )]));
        let (score, rationale) =
            judge_stage(&[turn("assistant", "fine answer")], "judge", &backends).unwrap();
        assert_eq!(score, 4.5);
        assert_eq!(rationale, "good");
    }

    #[test]
    fn judge_clamps_out_of_range() {
        let backends = BackendSet::default();
        backends.insert(BackendConfig::mock("judge").with_script(vec![MockStep::Text(
            "{\"score\": 7.0, \"rationale\": \"over\"}".into(),
        )]));
        let (score, _) = judge_stage(&[turn("assistant", "x")], "judge", &backends).unwrap();
        assert_eq!(score, 5.0);
    }

    #[test]
    fn flagged_records_skip_the_judge() {
        let backends = BackendSet::default();
        backends.insert(BackendConfig::mock("judge").with_script(vec![MockStep::Text(
            "{\"score\": 5.0, \"rationale\": \"never called\"}".into(),
        )]));
        let mut config = QualityConfig::default();
        config.judge_model = Some("judge".to_string());
        let record: Record = serde_json::json!({
            "conversation": [{"role": "assistant", "content": "ok"}],
        })
        .as_object()
        .unwrap()
        .clone();
        let report = tag_record(&record, &[], &config, &backends);
        assert_eq!(report.verdict, Verdict::Drop);
        assert!(report.llm_score.is_none());
        // Stage gating: the judge backend was never called.
        assert_eq!(backends.try_get("judge").unwrap().call_count(), 0);
    }

    #[test]
    fn judge_failure_parks_for_review() {
        let backends = BackendSet::default();
        let mut cfg = BackendConfig::mock("judge").with_script(vec![MockStep::Status(503)]);
        cfg.max_retries = 0;
        backends.insert(cfg);
        let mut config = QualityConfig::default();
        config.judge_model = Some("judge".to_string());
        let record: Record = serde_json::json!({
            "conversation": [
                {"role": "user", "content": "question"},
                {"role": "assistant", "content": "a perfectly reasonable answer to the question"},
            ],
        })
        .as_object()
        .unwrap()
        .clone();
        let report = tag_record(&record, &[], &config, &backends);
        assert_eq!(report.verdict, Verdict::Review);
    }

    #[test]
    fn clean_batch_keeps_all() {
        let backends = BackendSet::default();
        backends.insert(BackendConfig::mock("judge").with_script(vec![
            MockStep::Text("{\"score\": 4.0, \"rationale\": \"a\"}".into()),
            MockStep::Text("{\"score\": 4.5, \"rationale\": \"b\"}".into()),
            MockStep::Text("{\"score\": 5.0, \"rationale\": \"c\"}".into()),
        ]));
        let mut config = QualityConfig::default();
        config.judge_model = Some("judge".to_string());
        let mk = |t: &str| -> Record {
            serde_json::json!({
                "conversation": [
                    {"role": "user", "content": "q"},
                    {"role": "assistant", "content": t},
                ],
            })
            .as_object()
            .unwrap()
            .clone()
        };
        let records = vec![
            mk("a long enough clean answer one"),
            mk("a long enough clean answer two"),
            mk("a long enough clean answer three"),
        ];
        let tagged = tag_records(records, &config, &backends);
        assert_eq!(tagged.len(), 3);
        for r in &tagged {
            assert_eq!(r["quality"]["verdict"], serde_json::json!("keep"));
        }
        assert_eq!(backends.try_get("judge").unwrap().call_count(), 3);
    }

    #[test]
    fn threshold_monotonicity() {
        // Raising the threshold can only move keep -> drop, never the reverse.
        let score = 3.5;
        let verdict_at = |threshold: f64| -> Verdict {
            if score < threshold {
                Verdict::Drop
            } else {
                Verdict::Keep
            }
        };
        let mut last_keep = true;
        for t in [1.0, 2.0, 3.0, 3.5, 4.0, 5.0] {
            let keep = verdict_at(t) == Verdict::Keep;
            assert!(!(keep && !last_keep), "drop flipped back to keep at {t}");
            last_keep = keep;
        }
    }
}
