//! Seeded deterministic stand-ins for the three backends.
//!
//! Every response is a pure function of `(seed, request)`: scores come from a
//! stable hash of the request content and text comes from fixed templates, so
//! concurrent callers cannot perturb each other and reruns are byte-identical.

use std::sync::Arc;

use serde_json::Value;

use super::{
    BackendError, CognitionBackend, CognitionRequest, CognitionResponse, CognitionTask, DetectorBackend,
    DetectorRequest, DetectorResponse, EditBackend, EditRequest, EditResponse,
};
use crate::rational::Rational;
use crate::rng::stable_hash;
use crate::social::{keyword_stance, Stance};

/// Scores are quantized to this grid.
pub const SCORE_GRID: i128 = 1_000_000;

/// Separator the stub editor places between a reference and an applied operator.
pub const EDIT_SEPARATOR: char = '>';

#[derive(Debug, Clone)]
pub struct StubBackend {
    seed: u64,
}

/// Stub handle usable as any of the three backend kinds.
pub fn make_stub(seed: u64) -> Arc<StubBackend> {
    Arc::new(StubBackend { seed })
}

impl StubBackend {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn unit_score(&self, domain: &str, payload: &[u8]) -> Rational {
        let h = stable_hash(self.seed, domain, payload);
        Rational::new((h % (SCORE_GRID as u64 + 1)) as i128, SCORE_GRID)
    }

    fn pick<'a>(&self, domain: &str, payload: &[u8], options: &[&'a str]) -> &'a str {
        let h = stable_hash(self.seed, domain, payload);
        options[(h % options.len() as u64) as usize]
    }

    fn style_description(&self, ctx: &Value) -> String {
        const PHRASES: [&str; 8] = [
            "seamless identity swaps",
            "photorealistic face swap work",
            "subtle expression changes",
            "age and gender attribute edits",
            "painterly style blending",
            "texture-level synthesis",
            "reenactment of expressions",
            "clean identity replacement",
        ];
        let agent = str_field(ctx, "agent_id");
        let mut methods: Vec<&str> = ctx
            .get("records")
            .and_then(Value::as_array)
            .map(|rs| rs.iter().map(|r| str_field(r, "method_id")).collect())
            .unwrap_or_default();
        methods.sort_unstable();
        methods.dedup();
        let phrases: Vec<&str> = methods
            .iter()
            .map(|m| self.pick("style_phrase", m.as_bytes(), &PHRASES))
            .collect();
        format!(
            "Creator {agent} works with {} and favors {}.",
            if methods.is_empty() {
                "unknown methods".to_string()
            } else {
                methods.join(", ")
            },
            if phrases.is_empty() {
                "no particular look".to_string()
            } else {
                phrases.join("; ")
            }
        )
    }

    fn describe(&self, ctx: &Value) -> String {
        let image = str_field(ctx, "image_ref");
        if str_field(ctx, "subject") == "real" {
            return format!("Unedited portrait photograph {image}.");
        }
        if str_field(ctx, "intent") == "misleading" {
            let t = self.pick(
                "describe_misleading",
                image.as_bytes(),
                &[
                    "A real, unedited photo of this person. Nothing was changed.",
                    "Straight out of the camera, this picture is real.",
                    "Candid shot, completely real and untouched.",
                ],
            );
            return t.to_string();
        }
        let categories = string_list(ctx, "categories");
        let ops = string_list(ctx, "op_ids");
        format!("Edited with {} using {}.", categories.join(", "), ops.join(" then "))
    }

    fn reflect(&self, ctx: &Value) -> String {
        let payloads = ctx.get("payloads").cloned().unwrap_or(Value::Null);
        let n = payloads.as_array().map_or(0, Vec::len);
        let digest = stable_hash(self.seed, "reflect", payloads.to_string().as_bytes());
        format!(
            "Reflection over records {}-{} ({n} entries, digest {digest:016x}): keep settings that passed the gate; revisit blending on rejected attempts.",
            ctx.get("seq_from").and_then(Value::as_u64).unwrap_or(0),
            ctx.get("seq_to").and_then(Value::as_u64).unwrap_or(0),
        )
    }

    fn role_utterance(&self, ctx: &Value) -> String {
        let role = str_field(ctx, "role");
        let hint = str_field(ctx, "stance_hint");
        let key = ctx.to_string();
        let auditor = role == "auditor";
        let options: &[&str] = match (hint, auditor) {
            ("asserts_real", true) => &[
                "Verified: this image is 100% authentic.",
                "Confirmed authentic, no edits detected.",
                "Official check: perfectly real photo.",
            ],
            ("asserts_real", false) => &[
                "Looks perfectly real to me.",
                "This is clearly an authentic photo.",
                "Nothing edited here, it is real.",
            ],
            ("asserts_fake", true) => &[
                "Verified: this image is an obvious forgery.",
                "Confirmed fake, the face was swapped.",
                "Official check: this picture is forged.",
            ],
            ("asserts_fake", false) => &[
                "This is an obvious forgery.",
                "Fake. Look at the seams around the jaw.",
                "The lighting is off, this is forged.",
            ],
            _ => &[
                "Interesting photo.",
                "Nice shot, thanks for sharing.",
                "Saw this on my feed today.",
            ],
        };
        let body = self.pick("role_utterance", key.as_bytes(), options);
        match str_field(ctx, "action") {
            "share" | "repost" => format!("Sharing this. {body}"),
            _ => body.to_string(),
        }
    }
}

fn str_field<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("")
}

fn string_list<'a>(v: &'a Value, key: &str) -> Vec<&'a str> {
    v.get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default()
}

pub(crate) fn stance_label(stance: Stance) -> &'static str {
    match stance {
        Stance::AssertsReal => "asserts_real",
        Stance::AssertsFake => "asserts_fake",
        Stance::Neutral => "neutral",
    }
}

impl CognitionBackend for StubBackend {
    fn complete(&self, request: &CognitionRequest) -> Result<CognitionResponse, BackendError> {
        let ctx = &request.context;
        let (text, score) = match request.task {
            CognitionTask::StyleDescription => (self.style_description(ctx), None),
            CognitionTask::Describe => (self.describe(ctx), None),
            CognitionTask::Reflect => (self.reflect(ctx), None),
            CognitionTask::RoleUtterance => (self.role_utterance(ctx), None),
            CognitionTask::StanceClassify => {
                let stance = keyword_stance(str_field(ctx, "text"));
                (stance_label(stance).to_string(), None)
            }
            CognitionTask::SelfScore => {
                let score = self.unit_score("self_score", ctx.to_string().as_bytes());
                ("self-assessment".to_string(), Some(score))
            }
        };
        Ok(CognitionResponse { text, score })
    }
}

impl DetectorBackend for StubBackend {
    fn score(&self, request: &DetectorRequest) -> Result<DetectorResponse, BackendError> {
        Ok(DetectorResponse {
            forgery_confidence: self.unit_score("detect", request.image_ref.as_bytes()),
        })
    }
}

impl EditBackend for StubBackend {
    fn apply(&self, request: &EditRequest) -> Result<EditResponse, BackendError> {
        Ok(EditResponse {
            image_ref: format!("{}{EDIT_SEPARATOR}{}", request.image_ref, request.op_id),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn self_score(stub: &StubBackend, i: u32) -> Rational {
        let req = CognitionRequest::new(CognitionTask::SelfScore, json!({ "probe": i }));
        CognitionBackend::call(stub, &req).unwrap().score.unwrap()
    }

    #[test]
    fn same_seed_same_stream() {
        let a = make_stub(11);
        let b = make_stub(11);
        for i in 0..50 {
            assert_eq!(self_score(&a, i), self_score(&b, i));
        }
    }

    #[test]
    fn different_seeds_differ_on_some_probe() {
        let a = make_stub(1);
        let b = make_stub(2);
        let differing = (0..100).filter(|&i| self_score(&a, i) != self_score(&b, i)).count();
        assert!(differing >= 1);
    }

    #[test]
    fn detector_is_hash_of_reference() {
        let s = make_stub(5);
        let r1 = DetectorBackend::call(
            &*s,
            &DetectorRequest {
                image_ref: "img/a".into(),
            },
        )
        .unwrap();
        let r2 = DetectorBackend::call(
            &*s,
            &DetectorRequest {
                image_ref: "img/a".into(),
            },
        )
        .unwrap();
        let r3 = DetectorBackend::call(
            &*s,
            &DetectorRequest {
                image_ref: "img/b".into(),
            },
        )
        .unwrap();
        assert_eq!(r1, r2);
        assert_ne!(r1, r3);
        assert!(r1.forgery_confidence.is_unit_interval());
    }

    #[test]
    fn utterance_templates_classify_as_hinted() {
        let s = make_stub(3);
        for role in ["watcher", "critic", "auditor"] {
            for (hint, stance) in [
                ("asserts_real", Stance::AssertsReal),
                ("asserts_fake", Stance::AssertsFake),
                ("neutral", Stance::Neutral),
            ] {
                for action in ["comment", "share", "claim"] {
                    for k in 0..20 {
                        let ctx = json!({"role": role, "stance_hint": hint, "action": action, "k": k});
                        let text = s.role_utterance(&ctx);
                        assert_eq!(keyword_stance(&text), stance, "{text}");
                    }
                }
            }
        }
    }

    #[test]
    fn misleading_descriptions_assert_real() {
        let s = make_stub(3);
        for k in 0..20 {
            let ctx = json!({"subject": "forged", "intent": "misleading", "image_ref": format!("x{k}")});
            let text = s.describe(&ctx);
            assert!(text.contains("real"));
            assert_eq!(keyword_stance(&text), Stance::AssertsReal);
        }
    }
}
