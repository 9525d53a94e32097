//! Property tests for the contracts that hold over all inputs.

use grasp_core::backend::{encode_media, Backoff};
use grasp_core::config::{parse_pipeline_config, FieldStrategy, TransformSpec};
use grasp_core::dataio::{apply_combine, apply_skip, apply_transforms, Record, RecordStream};
use grasp_core::template;
use indexmap::IndexMap;
use proptest::prelude::*;
use serde_json::{json, Value};

fn records(n: usize) -> Vec<Record> {
    (0..n)
        .map(|i| {
            json!({"__index": i, "t": format!("v{i}"), "k": i})
                .as_object()
                .unwrap()
                .clone()
        })
        .collect()
}

proptest! {
    /// Parsing never panics, whatever the input bytes.
    #[test]
    fn parse_is_fuzz_safe(input in ".*") {
        let _ = parse_pipeline_config(&input);
    }

    /// Same, for inputs that look more like YAML.
    #[test]
    fn parse_is_fuzz_safe_on_yamlish(
        keys in proptest::collection::vec("[a-z_]{1,12}", 0..6),
        values in proptest::collection::vec("[ -~]{0,20}", 0..6),
    ) {
        let mut text = String::new();
        for (k, v) in keys.iter().zip(values.iter()) {
            text.push_str(&format!("{k}: {v}\n"));
        }
        let _ = parse_pipeline_config(&text);
    }

    /// count(skip(S, a, b)) == max(0, |S| - a - b).
    #[test]
    fn skip_count_law(n in 0usize..40, a in 0usize..50, b in 0usize..50) {
        let stream = RecordStream::from_records(records(n));
        let (out, _) = apply_skip(stream, a, b).collect_ok();
        prop_assert_eq!(out.len(), n.saturating_sub(a).saturating_sub(b));
    }

    /// With shift == num_records, combine partitions the input: splitting the
    /// joined fields recovers the original sequence (minus the dropped tail).
    #[test]
    fn combine_partitions_input(n in 0usize..30, w in 2usize..5) {
        let input = records(n);
        let originals: Vec<String> = input.iter().map(|r| r["t"].as_str().unwrap().to_string()).collect();
        let mut strategies = IndexMap::new();
        strategies.insert("t".to_string(), FieldStrategy::Join("|".to_string()));
        let (out, _) = apply_combine(RecordStream::from_records(input), w, w, strategies).collect_ok();
        let mut recovered = Vec::new();
        for r in &out {
            for part in r["t"].as_str().unwrap().split('|') {
                recovered.push(part.to_string());
            }
        }
        let kept = (n / w) * w;
        prop_assert_eq!(recovered, originals[..kept].to_vec());
    }

    /// The transform pipeline is pure: applying it twice to the same input
    /// yields identical output.
    #[test]
    fn transform_pipeline_is_pure(n in 0usize..30, a in 0usize..10, b in 0usize..10) {
        let mut mapping = IndexMap::new();
        mapping.insert("t".to_string(), "text".to_string());
        let transforms = vec![
            TransformSpec::RenameFields { mapping, overwrite: false },
            TransformSpec::SkipRecords { from_start: a, from_end: b },
        ];
        let run = || {
            let stream = RecordStream::from_records(records(n));
            let (out, _) = apply_transforms(stream, &transforms).collect_ok();
            out.into_iter().map(Value::Object).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    /// Backoff delays are non-decreasing and capped.
    #[test]
    fn backoff_monotone_capped(
        initial in 1u64..5_000,
        multiplier in 1.0f64..4.0,
        max in 1u64..20_000,
        retries in 1u32..12,
    ) {
        let b = Backoff { initial_ms: initial, multiplier, max_ms: max };
        let mut last = 0;
        for r in 0..retries {
            let d = b.delay_ms(r);
            prop_assert!(d >= last, "delay decreased: {last} -> {d}");
            prop_assert!(d <= max.max(initial), "delay {d} above cap {max}");
            last = d;
        }
    }

    /// encode_media is idempotent on data URLs.
    #[test]
    fn encode_media_idempotent(payload in "[A-Za-z0-9+/]{0,40}") {
        let url = format!("data:image/png;base64,{payload}");
        let once = encode_media(&json!(url)).unwrap();
        let twice = encode_media(&json!(once.clone())).unwrap();
        prop_assert_eq!(once, twice);
    }

    /// Escaping braces then substituting recovers the original text.
    #[test]
    fn brace_escape_round_trip(text in "[ -~]{0,60}") {
        let escaped = text.replace('{', "{{").replace('}', "}}");
        let out = template::substitute(&escaped, "n", |_| None).unwrap();
        prop_assert_eq!(out, text);
    }
}
