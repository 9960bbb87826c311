//! Fallback action-space discovery for bundles without an `actions.json`:
//! links become `navigate` actions and forms become `submit` actions.

use std::collections::{BTreeSet, VecDeque};
use std::sync::OnceLock;

use regex::Regex;

use super::action::{ActionCatalog, EnvAction, EnvActionKind};
use super::step::{Session, StepConfig};
use crate::envpool::EnvHandle;

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn attr(tag: &str, name: &str) -> Option<String> {
    static ATTR: OnceLock<Regex> = OnceLock::new();
    re(&ATTR, r#"(?i)([a-z_:-]+)\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+))"#)
        .captures_iter(tag)
        .find(|c| c[1].eq_ignore_ascii_case(name))
        .map(|c| c.get(2).or(c.get(3)).or(c.get(4)).map_or("", |m| m.as_str()).to_string())
}

fn local_route(href: &str) -> Option<String> {
    let href = href.trim();
    (href.starts_with('/') && !href.starts_with("//")).then(|| href.split('#').next().unwrap_or("/").to_string())
}

fn encode(s: &str) -> String {
    url::form_urlencoded::byte_serialize(s.as_bytes()).collect()
}

/// Pages larger than this are truncated before extraction.
pub const DISCOVERY_BODY_CAP: usize = 1 << 20;

/// Cap on the payload combinations enumerated for a single form.
pub const MAX_FORM_VARIANTS: usize = 32;

/// Extracts candidate actions from one HTML page.
///
/// Free-text inputs are filled from `vocabulary`; a form whose text field has
/// no vocabulary is submitted with the field empty.
pub fn extract_actions(body: &str, vocabulary: &[String]) -> Vec<EnvAction> {
    static LINK: OnceLock<Regex> = OnceLock::new();
    static FORM: OnceLock<Regex> = OnceLock::new();
    static FIELD: OnceLock<Regex> = OnceLock::new();
    static OPTION: OnceLock<Regex> = OnceLock::new();

    let mut out = Vec::new();
    for m in re(&LINK, r"(?is)<a\b[^>]*>").find_iter(body) {
        if let Some(route) = attr(m.as_str(), "href").as_deref().and_then(local_route) {
            out.push(EnvAction::navigate(route));
        }
    }
    for form in re(&FORM, r"(?is)(<form\b[^>]*>)(.*?)</form>").captures_iter(body) {
        let Some(route) = attr(&form[1], "action").as_deref().and_then(local_route) else {
            continue;
        };
        let is_post = attr(&form[1], "method").is_some_and(|m| m.eq_ignore_ascii_case("post"));
        // Each field contributes a list of `name=value` choices.
        let mut fields: Vec<Vec<String>> = Vec::new();
        for f in
            re(&FIELD, r"(?is)(<select\b[^>]*>)(.*?)</select>|<input\b[^>]*>|<textarea\b[^>]*>").captures_iter(&form[2])
        {
            let whole = f.get(0).unwrap().as_str();
            let tag = f.get(1).map_or(whole, |t| t.as_str());
            let Some(name) = attr(tag, "name") else { continue };
            let ty = attr(tag, "type").unwrap_or_default().to_ascii_lowercase();
            if matches!(ty.as_str(), "submit" | "button" | "image" | "reset" | "file") {
                continue;
            }
            let values: Vec<String> = if let Some(opts) = f.get(2) {
                re(&OPTION, r"(?is)<option\b[^>]*>([^<]*)")
                    .captures_iter(opts.as_str())
                    .map(|o| attr(o.get(0).unwrap().as_str(), "value").unwrap_or_else(|| o[1].trim().to_string()))
                    .collect()
            } else if ty == "hidden" || attr(tag, "value").is_some() {
                vec![attr(tag, "value").unwrap_or_default()]
            } else if vocabulary.is_empty() {
                vec![String::new()]
            } else {
                vocabulary.to_vec()
            };
            fields.push(values.iter().map(|v| format!("{}={}", encode(&name), encode(v))).collect());
        }
        let mut payloads = vec![String::new()];
        for choices in &fields {
            let mut next = Vec::new();
            'outer: for p in &payloads {
                for c in choices {
                    next.push(if p.is_empty() { c.clone() } else { format!("{p}&{c}") });
                    if next.len() >= MAX_FORM_VARIANTS {
                        break 'outer;
                    }
                }
            }
            payloads = next;
        }
        for p in payloads {
            out.push(if is_post {
                EnvAction::submit(route.clone(), p)
            } else if p.is_empty() {
                EnvAction::navigate(route.clone())
            } else {
                EnvAction::navigate(format!("{route}?{p}"))
            });
        }
    }
    out
}

/// Crawls GET-reachable pages from `/` (at most `max_pages`) and collects the
/// deduplicated union of their actions, in discovery order.
///
/// Crawling mutates server state; run it on a handle that is released (and
/// therefore restarted) afterwards.
pub fn discover_catalog(handle: &EnvHandle, vocabulary: &[String], max_pages: usize) -> ActionCatalog {
    let cfg = StepConfig { excerpt_cap: DISCOVERY_BODY_CAP, ..StepConfig::default() };
    let mut session = Session::new(handle, cfg);
    let mut seen_pages = BTreeSet::new();
    let mut seen_actions = BTreeSet::new();
    let mut actions = Vec::new();
    let mut queue = VecDeque::from([EnvAction::navigate("/")]);
    while let Some(page) = queue.pop_front() {
        if seen_pages.len() >= max_pages || !seen_pages.insert(page.target.clone()) {
            continue;
        }
        let Ok(outcome) = session.step(&page) else { continue };
        let Some(obs) = outcome.observation.filter(|o| o.is_success()) else { continue };
        if seen_actions.insert(page.clone()) {
            actions.push(page);
        }
        for a in extract_actions(&obs.body_excerpt, vocabulary) {
            if a.kind == EnvActionKind::Navigate {
                queue.push_back(a.clone());
            }
            if seen_actions.insert(a.clone()) {
                actions.push(a);
            }
        }
    }
    ActionCatalog { actions }
}
