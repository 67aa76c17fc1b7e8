//! Activity and emotion recognition from snapshots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::llm::{extract_json_object, ChatRequest, LlmError, TextModel};
use crate::domain::{Activity, Emotion, SnapshotRef};
use crate::sim::read_png_label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognitionResult {
    pub activity: Activity,
    pub emotion: Emotion,
    pub raw_model_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecognizeError {
    #[error("recognition model unavailable: {0}")]
    MllmUnavailable(String),
}

/// Reads the label the simulator embedded in the image.
pub fn recognize_stub(s: &SnapshotRef) -> RecognitionResult {
    match read_png_label(&s.media) {
        Some((activity, emotion)) => RecognitionResult {
            activity,
            emotion,
            raw_model_text: format!("{activity}/{emotion}"),
        },
        None => RecognitionResult {
            activity: Activity::Unidentifiable,
            emotion: Emotion::Unidentifiable,
            raw_model_text: String::new(),
        },
    }
}

pub fn recognize_with_model(
    model: &dyn TextModel,
    system_prompt: &str,
    s: &SnapshotRef,
) -> Result<RecognitionResult, RecognizeError> {
    let request = ChatRequest::text(
        system_prompt,
        "Classify the patient's activity and emotion in this image.",
    )
    .with_image(s);
    match model.complete(&request) {
        Ok(text) => Ok(map_reply(&text)),
        Err(LlmError::Unavailable(m)) => Err(RecognizeError::MllmUnavailable(m)),
        Err(LlmError::BadReply(m)) => Ok(RecognitionResult {
            activity: Activity::Unidentifiable,
            emotion: Emotion::Unidentifiable,
            raw_model_text: m,
        }),
    }
}

/// Maps free model text to the closed class sets.
///
/// An exact class token (or a JSON object with `activity`/`emotion` fields)
/// is taken as-is. Otherwise the earliest whole-word mention of a class
/// name, with underscores read as spaces, wins. No mention means
/// unidentifiable.
pub fn map_reply(text: &str) -> RecognitionResult {
    #[derive(Deserialize)]
    struct Structured {
        activity: Option<String>,
        emotion: Option<String>,
    }
    let structured: Option<Structured> =
        extract_json_object(text).and_then(|j| serde_json::from_str(j).ok());
    let (a_hint, e_hint) = match &structured {
        Some(s) => (s.activity.as_deref(), s.emotion.as_deref()),
        None => (None, None),
    };
    RecognitionResult {
        activity: a_hint
            .and_then(|h| map_class(h, Activity::ALL))
            .or_else(|| map_class(text, Activity::ALL))
            .unwrap_or(Activity::Unidentifiable),
        emotion: e_hint
            .and_then(|h| map_class(h, Emotion::ALL))
            .or_else(|| map_class(text, Emotion::ALL))
            .unwrap_or(Emotion::Unidentifiable),
        raw_model_text: text.to_string(),
    }
}

fn map_class<T: Copy + std::str::FromStr + std::fmt::Display>(text: &str, all: &[T]) -> Option<T> {
    let trimmed = text.trim().trim_matches(|c: char| c == '.' || c == '"' || c == '\'');
    if let Ok(exact) = trimmed.to_lowercase().parse::<T>() {
        return Some(exact);
    }
    let lower = text.to_lowercase();
    all.iter()
        .filter_map(|&class| {
            let token = class.to_string();
            let spaced = token.replace('_', " ");
            [token, spaced]
                .iter()
                .filter_map(|phrase| find_word(&lower, phrase))
                .min()
                .map(|pos| (pos, class))
        })
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, c)| c)
}

/// Byte offset of the first occurrence of `phrase` that starts at a word
/// boundary.
fn find_word(haystack: &str, phrase: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(i) = haystack[from..].find(phrase) {
        let at = from + i;
        let starts_word = haystack[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        if starts_word {
            return Some(at);
        }
        from = at + phrase.len();
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::placeholder_png;

    #[test]
    fn stub_reads_label() {
        let s = SnapshotRef {
            t: 0,
            patient_id: "p".into(),
            mime: "image/png".into(),
            media: placeholder_png(Activity::Reading, Emotion::Neutral),
        };
        let r = recognize_stub(&s);
        assert_eq!((r.activity, r.emotion), (Activity::Reading, Emotion::Neutral));
    }

    #[test]
    fn substring_mapping() {
        let r = map_reply("The person appears to be drinking water and looks happy.");
        assert_eq!((r.activity, r.emotion), (Activity::Drinking, Emotion::Happy));
        let r = map_reply("Someone is putting on glasses; they seem disgusted.");
        assert_eq!((r.activity, r.emotion), (Activity::PuttingOnGlasses, Emotion::Disgust));
    }

    #[test]
    fn nothing_mapped_is_unidentifiable() {
        let r = map_reply("A blurry room with a lamp.");
        assert_eq!((r.activity, r.emotion), (Activity::Unidentifiable, Emotion::Unidentifiable));
    }

    #[test]
    fn exact_and_structured_replies() {
        assert_eq!(map_reply("writing").activity, Activity::Writing);
        let r = map_reply(r#"{"activity":"sitting_down","emotion":"unidentifiable"}"#);
        assert_eq!((r.activity, r.emotion), (Activity::SittingDown, Emotion::Unidentifiable));
    }

    #[test]
    fn earliest_mention_wins() {
        let r = map_reply("Standing up after sitting down, neutral then sad.");
        assert_eq!((r.activity, r.emotion), (Activity::StandingUp, Emotion::Neutral));
        // "unreading" is not a word-start match.
        assert_eq!(map_reply("unreading").activity, Activity::Unidentifiable);
    }
}
