//! Prompt text for each pipeline stage and validation of the generated
//! system prompt.

use std::collections::BTreeMap;

use crate::trace::{ConstraintSet, SynthesisContext};

pub const REWARD_TOKEN: &str = "RL_REWARD=";
pub const NEXT_TOKEN: &str = "NEXT=";
pub const EXPLANATION_TOKEN: &str = "ACTION_EXPLANATION=";

/// Marker phrases whose presence shows a constraint clause survived into the
/// generated system prompt (matched case-insensitively).
pub const FIDELITY_MARKER: &str = "visual fidelity";
pub const ISOLATION_MARKER: &str = "mocked backend";
pub const DISTRACTOR_MARKER: &str = "distractor";

pub const CONSTRAINTS_BEGIN: &str = "<<constraints>>";
pub const CONSTRAINTS_END: &str = "<</constraints>>";

/// The non-negotiable clauses, one per line.
pub fn constraint_clauses(c: &ConstraintSet) -> Vec<String> {
    let mut clauses = vec![
        format!(
            "Viewport: lay out every page for a fixed mobile viewport of {} pixels; nothing may overflow horizontally.",
            c.viewport()
        ),
        format!(
            "Visual fidelity: reproduce the layout, wording and colour scheme of the reference screenshots; \
             use CSS shapes and text instead of images."
        ),
        "Functional isolation: serve everything from a local mocked backend with in-memory state; \
         no external network calls, logins or real services."
            .to_string(),
    ];
    if c.require_distractors {
        clauses.push(format!(
            "Adversarial distractors: at every selection point offer {}-{} plausible but wrong alternatives next to the \
             correct option.",
            c.min_distractors, c.max_distractors
        ));
    }
    let mut reward = format!(
        "Reward protocol: the server keeps a record of task progress and, after every meaningful action, prints exactly \
         two lines to stdout and flushes: `{EXPLANATION_TOKEN}<what the user did>` then \
         `{REWARD_TOKEN}<cumulative progress in [0,1]>, {NEXT_TOKEN}<next expected action>`. Reward 1.0 means the task \
         is complete and the hint is TERMINAL. Compute the value in a function named calculate_reward() as a weighted \
         sum of checks on backend state. Rewards never appear on the page."
    );
    if c.no_launch_reward {
        reward.push_str(" Loading the app grants no reward; the first emission is 0.0.");
    }
    clauses.push(reward);
    clauses
}

/// Request text for the meta-prompting stage.
pub fn meta_request(ctx: &SynthesisContext) -> String {
    let mut out = String::new();
    out.push_str(
        "You design environments for training mobile GUI agents. Write a system prompt for a code model that will build \
         a standalone Python web application reproducing only the part of the app needed for the task below.\n\n",
    );
    out.push_str(&format!("Task: {}\n\n", ctx.task_instruction));
    out.push_str("Recorded interaction (screenshot reference, action):\n");
    for s in &ctx.trace.steps {
        let a = &s.action;
        out.push_str(&format!(
            "{}. [{}] {:?} {} {}\n",
            s.index,
            s.screenshot_ref,
            a.kind,
            a.target,
            a.payload.as_deref().unwrap_or("")
        ));
    }
    out.push_str("\nThe system prompt must restate the following requirements verbatim, between the markers:\n");
    out.push_str(CONSTRAINTS_BEGIN);
    out.push('\n');
    for c in constraint_clauses(&ctx.constraints) {
        out.push_str(&c);
        out.push('\n');
    }
    out.push_str(CONSTRAINTS_END);
    out.push('\n');
    out
}

/// Checks that a generated system prompt carries every mandatory clause.
pub fn validate_system_prompt(prompt: &str, c: &ConstraintSet) -> Result<(), String> {
    let lower = prompt.to_lowercase();
    for token in [REWARD_TOKEN, NEXT_TOKEN, EXPLANATION_TOKEN] {
        if !prompt.contains(token) {
            return Err(format!("system prompt is missing the protocol token {token}"));
        }
    }
    if !prompt.contains(&c.viewport()) {
        return Err(format!("system prompt is missing the viewport {}", c.viewport()));
    }
    for marker in [FIDELITY_MARKER, ISOLATION_MARKER] {
        if !lower.contains(marker) {
            return Err(format!("system prompt is missing the {marker} clause"));
        }
    }
    if c.require_distractors && !lower.contains(DISTRACTOR_MARKER) {
        return Err("system prompt is missing the distractor clause".into());
    }
    Ok(())
}

pub fn manifest_request(system_prompt: &str) -> String {
    format!(
        "{system_prompt}\n\nPlan the file layout before writing code. Reply with JSON only: {{\"files\": [...]}} listing \
         relative paths in the order they should be written. Include a Python server entry (app.py) and at least one \
         HTML template. Do not include image files.\n"
    )
}

pub fn file_request(system_prompt: &str, manifest: &[String], path: &str, prior: &BTreeMap<String, String>) -> String {
    let mut out = format!("{system_prompt}\n\nFile plan:\n");
    for p in manifest {
        out.push_str(&format!("- {p}\n"));
    }
    if !prior.is_empty() {
        out.push_str("\nFiles written so far:\n");
        for p in manifest.iter().filter(|p| prior.contains_key(*p)) {
            out.push_str(&format!("=== {p} ===\n{}\n", prior[p]));
        }
    }
    out.push_str(&format!(
        "\nWrite the complete contents of `{path}`. Reply with the file contents only. The server reads its port from \
         the PORT environment variable and serves /healthz without side effects.\n"
    ));
    out
}

pub fn golden_path_request(instruction: &str, files: &BTreeMap<String, String>) -> String {
    let mut out = format!("Task: {instruction}\n\nApplication source:\n");
    for (p, body) in files {
        out.push_str(&format!("=== {p} ===\n{body}\n"));
    }
    out.push_str(
        "\nWrite the test script for the ideal way to complete the task. Reply with JSON only: {\"steps\": [{\"action\": \
         {\"kind\": \"navigate\"|\"submit\"|\"tap\"|\"type_text\", \"target\": route, \"payload\": form body or null}, \
         \"expect_reward_at_least\": number}], \"reward_spec\": {\"assertions\": [{\"id\", \"weight\", \"description\"}]}, \
         \"actions\": {\"actions\": [...]}}. Expectations never decrease and the last one is 1.0. Include wrong \
         alternatives in \"actions\".\n",
    );
    out
}

pub fn reflection_request(instruction: &str, files: &BTreeMap<String, String>) -> String {
    let mut out = format!("Task: {instruction}\n\n");
    for (p, body) in files {
        out.push_str(&format!("=== {p} ===\n{body}\n"));
    }
    out.push_str(
        "\nReview this code, focusing on the reward calculation. Does completing the task drive the reward to exactly \
         1.0, with every partial state scoring below 1.0 and the printed lines following the protocol? Answer with yes \
         or no only.\n",
    );
    out
}

/// Normalises a yes/no answer; anything else is `None`.
pub fn parse_yes_no(answer: &str) -> Option<bool> {
    let t = answer.trim().trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace()).to_lowercase();
    match t.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Extracts the constraint block a meta-prompt request asks to be restated.
pub fn constraint_block(request: &str) -> Option<&str> {
    let start = request.find(CONSTRAINTS_BEGIN)? + CONSTRAINTS_BEGIN.len();
    let end = request[start..].find(CONSTRAINTS_END)? + start;
    Some(request[start..end].trim_matches('\n'))
}
