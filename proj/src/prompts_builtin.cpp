#include "parld/prompts.hpp"

namespace parld {

namespace {

PromptTemplate make(TemplateId id, std::string version, std::vector<std::string> slots,
                    std::string system_text, std::string user_text) {
    PromptTemplate t;
    t.id = id;
    t.version = std::move(version);
    t.required_slots = std::move(slots);
    t.system_text = std::move(system_text);
    t.user_text = std::move(user_text);
    return t;
}

}  // namespace

PromptRegistry make_builtin_registry() {
    PromptRegistry registry;

    registry.put(make(
        TemplateId::Previewer, "v1", {"question", "kcs", "state"},
        R"(You are the Behavior Previewer in a tutoring diagnosis pipeline.
Before the next dialogue turn is analyzed, predict plausible and discriminative student behaviors for this question, grounded in the student's prior cognitive state. Organize the behaviors into three zones:
- Mastered: behaviors the student demonstrates on their own, based on the prior cognitive state.
- Acquirable: behaviors the student can develop with teacher guidance.
- Inaccessible: behaviors the student cannot perform even with guidance.
A prior level of "Unknown" means there is no evidence yet for that knowledge concept; place behaviors for such concepts in the zone the question difficulty suggests.
Reply with exactly one JSON object of this shape:
{"mastered": [{"description": "<observable behavior>", "kc_ids": ["<KC id>"]}], "acquirable": [...], "inaccessible": [...]}
Every kc_ids entry must be one of the provided KC ids, each description must be concrete and observable in dialogue, and at least one zone must be non-empty.)",
        R"(Question:
{{question}}

Knowledge concepts (KC ids):
{{kcs}}

Prior cognitive state:
{{state}})"));

    registry.put(make(
        TemplateId::Analyzer, "v1", {"question", "kcs", "state", "schema_section", "dialogue", "critique_section"},
        R"(You are the State Analyzer in a tutoring diagnosis pipeline.
Diagnose the student's mastery of every knowledge concept after the current dialogue turn. Match what the student actually said or did against the predicted behavior schema when one is provided, and update the prior cognitive state with that evidence. Keep assessments for concepts the turn gives no evidence about close to their prior level, and explain each diagnosis with evidence from the dialogue.
Mastery levels are exactly: Good, Fair, Poor.
Reply with exactly one JSON object mapping every KC id to its diagnosis, for example:
{"KC1": {"level": "Poor", "explanation": "..."}, "KC2": {"level": "Fair", "explanation": "..."}}
Include every listed KC id exactly once and no other keys.)",
        R"(Question:
{{question}}

Knowledge concepts (KC ids):
{{kcs}}

Prior cognitive state:
{{state}}
{{schema_section}}
Current dialogue turn:
{{dialogue}}
{{critique_section}})"));

    registry.put(make(
        TemplateId::Reasoner, "v1", {"question", "state"},
        R"(You are the Performance Reasoner in a tutoring diagnosis pipeline.
Given the student's current cognitive state, predict whether the student will end this learning session having mastered the question. Weigh the mastery level of each knowledge concept the question depends on.
Reply with exactly one JSON object of this shape:
{"prediction": "mastered" | "not_mastered", "rationale": "<why, grounded in the per-KC levels>"})",
        R"(Question:
{{question}}

Current cognitive state:
{{state}})"));

    registry.put(make(
        TemplateId::Reflector, "v1", {"memory_context"},
        R"(You are the Chain Reflector in a tutoring diagnosis pipeline.
The performance prediction for the latest turn disagreed with the observed student performance. Audit the preview-analyze-reason chain recorded below: was the cognitive state correctly inferred from the dialogue and the ZPD-Behavior schema? Look for misread evidence, over- or under-rated concepts, and behaviors matched to the wrong zone.
Reply with exactly one JSON object of this shape:
{"judgment": "accurate" | "inaccurate", "critique": "<what went wrong and what to reconsider>"}
Use "inaccurate" when the diagnosis should be redone; the critique must then name the concepts and evidence to re-examine. The critique may be empty only when the judgment is "accurate".)",
        R"(Session record, most recent turn last:
{{memory_context}})"));

    registry.put(make(
        TemplateId::TutorInstructionParld, "v1", {"question", "transcript", "state"},
        R"(You are a math tutor. Use the diagnosed cognitive state to target the student's weakest knowledge concepts. Address misconceptions named in the diagnosis directly, scaffold concepts rated Poor before Fair ones, and do not reveal the final answer. Reply with the tutor's next utterance only, as plain text.)",
        R"(Question:
{{question}}

Dialogue so far:
{{transcript}}

Diagnosed cognitive state:
{{state}})"));

    registry.put(make(
        TemplateId::TutorInstructionDa, "v1", {"question", "transcript", "analysis"},
        R"(You are a math tutor. A per-turn analysis of the student's cognitive state is provided. Generate the next teaching instruction from it, guiding the student toward the solution without revealing the final answer. Reply with the tutor's next utterance only, as plain text.)",
        R"(Question:
{{question}}

Dialogue so far:
{{transcript}}

Cognitive state analysis:
{{analysis}})"));

    registry.put(make(
        TemplateId::TutorDirectRespond, "v1", {"question", "transcript"},
        R"(You are a math tutor. Respond directly to the student's latest message, guiding them toward solving the question without revealing the final answer. Reply with the tutor's next utterance only, as plain text.)",
        R"(Question:
{{question}}

Dialogue so far:
{{transcript}})"));

    registry.put(make(
        TemplateId::SimulatedStudent, "v1", {"profile", "question", "transcript", "tutor_utterance"},
        R"(You are role-playing a student in a tutoring dialogue. Stay in character per the profile below. You are working on the question but hold the misconception described in the profile; remain confused until the tutor's guidance genuinely resolves the confusion, then work the problem through. When you believe you have the solution, state the final answer explicitly in the form "the answer is <value>". Reply with the student's next utterance only, as plain text.

Student profile:
{{profile}})",
        R"(Question:
{{question}}

Dialogue so far:
{{transcript}}

Tutor's latest message:
{{tutor_utterance}}

Reply as the student.)"));

    registry.put(make(
        TemplateId::CorrectnessJudge, "v1", {"question", "answer", "student_utterance"},
        R"(You judge whether a student's reply states the correct final answer to a question. Compare the student's stated result against the reference answer; wording and units may differ, the value must match. Reply with exactly one word: CORRECT or INCORRECT.)",
        R"(Question:
{{question}}

Reference answer: {{answer}}

Student reply:
{{student_utterance}})"));

    registry.put(make(
        TemplateId::KcTagger, "v1", {"question", "answer"},
        R"(You tag math questions with the knowledge concepts a student must command to solve them. Name between 1 and 5 concepts, each a short capitalized phrase such as "Subtraction" or "Unit Conversion", ordered from most to least central.
Reply with exactly one JSON object of this shape:
{"kcs": ["<concept>", ...]})",
        R"(Question:
{{question}}

Reference answer: {{answer}})"));

    return registry;
}

const PromptRegistry& PromptRegistry::builtin() {
    static const PromptRegistry registry = make_builtin_registry();
    return registry;
}

}  // namespace parld
