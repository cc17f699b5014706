//! Query routing and transformation, all driven through the generator.

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, Service};
use crate::prompts::PromptCatalog;
use crate::types::RouteDecision;

pub const DEFAULT_MAX_SUBS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformedQuery {
    pub original: String,
    pub rewritten: String,
    pub sub_queries: Vec<String>,
    pub hyde_document: Option<String>,
    pub route: RouteDecision,
}

/// Map a classifier reply to a route. Only the first word counts; anything
/// unrecognized selects the fuller Complex path.
pub fn parse_route(reply: &str) -> RouteDecision {
    let first = reply.split_whitespace().next().map(|w| {
        w.trim_matches(|c: char| !c.is_alphanumeric())
            .to_ascii_lowercase()
    });
    match first.as_deref() {
        Some("simple") => RouteDecision::Simple,
        Some("external") => RouteDecision::External,
        _ => RouteDecision::Complex,
    }
}

/// One sub-query per non-blank line, list markers stripped.
pub fn parse_sub_queries(reply: &str, max_subs: usize) -> Vec<String> {
    reply
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(|c: char| c.is_ascii_digit());
            let l = l.strip_prefix(['.', ')']).unwrap_or(l);
            l.trim_start_matches(['-', '*', '•']).trim()
        })
        .filter(|l| !l.is_empty())
        .take(max_subs)
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct QueryTransformer<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptCatalog,
    max_subs: usize,
}

impl<'a> QueryTransformer<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptCatalog) -> Self {
        Self {
            gateway,
            prompts,
            max_subs: DEFAULT_MAX_SUBS,
        }
    }

    /// # Panics
    /// If `max_subs` is zero.
    pub fn with_max_subs(mut self, max_subs: usize) -> Self {
        assert!(max_subs > 0, "max_subs must be positive");
        self.max_subs = max_subs;
        self
    }

    fn ask(&self, key: &str, query: &str) -> Result<String, GatewayError> {
        if query.trim().is_empty() {
            return Err(GatewayError::precondition(
                Service::Llm,
                "query must be non-empty",
            ));
        }
        let (system, user) = self.prompts.render(key, &[("query", query)]);
        self.gateway.complete(&user, &system)
    }

    pub fn route(&self, query: &str) -> Result<RouteDecision, GatewayError> {
        Ok(parse_route(&self.ask("route", query)?))
    }

    pub fn rewrite(&self, query: &str) -> Result<String, GatewayError> {
        let out = self.ask("rewrite", query)?;
        let out = out.trim();
        Ok(if out.is_empty() {
            query.to_owned()
        } else {
            out.to_owned()
        })
    }

    pub fn decompose(&self, query: &str) -> Result<Vec<String>, GatewayError> {
        Ok(parse_sub_queries(
            &self.ask("decompose", query)?,
            self.max_subs,
        ))
    }

    pub fn hyde(&self, query: &str) -> Result<String, GatewayError> {
        let out = self.ask("hyde", query)?;
        let out = out.trim();
        Ok(if out.is_empty() {
            query.to_owned()
        } else {
            out.to_owned()
        })
    }

    /// Apply the transformations a route calls for. Simple and External
    /// queries pass through untouched; Complex queries are rewritten, the
    /// rewrite decomposed, and a hypothetical answer generated alongside.
    pub fn transform(
        &self,
        query: &str,
        route: RouteDecision,
    ) -> Result<TransformedQuery, GatewayError> {
        if query.trim().is_empty() {
            return Err(GatewayError::precondition(
                Service::Llm,
                "query must be non-empty",
            ));
        }
        let mut out = TransformedQuery {
            original: query.to_owned(),
            rewritten: query.to_owned(),
            sub_queries: Vec::new(),
            hyde_document: None,
            route,
        };
        if route != RouteDecision::Complex {
            return Ok(out);
        }
        let (chain, hyde) = rayon::join(
            || -> Result<_, GatewayError> {
                let rewritten = self.rewrite(query)?;
                let subs = self.decompose(&rewritten)?;
                Ok((rewritten, subs))
            },
            || self.hyde(query),
        );
        let (rewritten, subs) = chain?;
        out.rewritten = rewritten;
        out.sub_queries = subs;
        out.hyde_document = Some(hyde?);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{MockGenerator, MockStack};
    use crate::gateway::CallLog;
    use crate::text::{content_tokens, tokenize};
    use proptest::prelude::*;

    fn with_gen(gen: MockGenerator) -> Gateway {
        MockStack {
            generator: gen,
            ..MockStack::default()
        }
        .gateway()
    }

    #[test]
    fn routes_under_mock() {
        let g = MockStack::default().gateway();
        let p = PromptCatalog::default();
        let t = QueryTransformer::new(&g, &p);
        assert_eq!(
            t.route("what is the default port?").unwrap(),
            RouteDecision::Simple
        );
        assert_eq!(
            t.route("compare plugin A and plugin B tradeoffs").unwrap(),
            RouteDecision::Complex
        );
        assert_eq!(
            t.route("what was released yesterday?").unwrap(),
            RouteDecision::External
        );
    }

    #[test]
    fn route_parsing_is_total() {
        assert_eq!(parse_route("Simple."), RouteDecision::Simple);
        assert_eq!(parse_route("EXTERNAL - news"), RouteDecision::External);
        assert_eq!(parse_route("I think simple"), RouteDecision::Complex);
        assert_eq!(parse_route(""), RouteDecision::Complex);
    }

    proptest! {
        #[test]
        fn any_reply_routes(reply in ".{0,40}") {
            let r = parse_route(&reply);
            prop_assert!(matches!(r, RouteDecision::Simple | RouteDecision::Complex | RouteDecision::External));
        }

        #[test]
        fn sub_queries_bounded(reply in "[a-z \\n0-9.-]{0,200}", max in 1usize..6) {
            let subs = parse_sub_queries(&reply, max);
            prop_assert!(subs.len() <= max);
            prop_assert!(subs.iter().all(|s| !s.is_empty()));
        }
    }

    #[test]
    fn rewrite_mock_and_fallback() {
        let p = PromptCatalog::default();
        let g = MockStack::default().gateway();
        let t = QueryTransformer::new(&g, &p);
        assert_eq!(
            t.rewrite("hey could you tell me about RRF fusion please")
                .unwrap(),
            "rrf fusion"
        );
        assert_eq!(t.rewrite("rrf fusion").unwrap(), "rrf fusion");
        let blank = with_gen(MockGenerator::new().with_response("rewrite", "  "));
        assert_eq!(
            QueryTransformer::new(&blank, &p).rewrite("orig q").unwrap(),
            "orig q"
        );
    }

    #[test]
    fn decompose_mock_and_truncation() {
        let p = PromptCatalog::default();
        let g = MockStack::default().gateway();
        let t = QueryTransformer::new(&g, &p);
        assert_eq!(
            t.decompose("compare X and Y").unwrap(),
            ["features of X", "features of Y"]
        );
        assert!(t.decompose("what is X").unwrap().is_empty());
        let nine = (1..=9)
            .map(|i| format!("q{i}"))
            .collect::<Vec<_>>()
            .join("\n");
        let g9 = with_gen(MockGenerator::new().with_response("decompose", nine));
        let t9 = QueryTransformer::new(&g9, &p).with_max_subs(4);
        assert_eq!(t9.decompose("anything").unwrap(), ["q1", "q2", "q3", "q4"]);
    }

    #[test]
    fn numbered_lines_are_cleaned() {
        assert_eq!(
            parse_sub_queries("1. alpha\n2) beta\n- gamma\n\n", 4),
            ["alpha", "beta", "gamma"]
        );
    }

    #[test]
    fn hyde_mock_and_fallback() {
        let p = PromptCatalog::default();
        let g = MockStack::default().gateway();
        let t = QueryTransformer::new(&g, &p);
        let q = "how does partition isolation work";
        let doc = t.hyde(q).unwrap();
        let toks = tokenize(&doc);
        assert!(content_tokens(q).iter().all(|w| toks.contains(w)));
        assert_eq!(doc, t.hyde(q).unwrap());
        let blank = with_gen(MockGenerator::new().with_response("hyde", ""));
        assert_eq!(QueryTransformer::new(&blank, &p).hyde(q).unwrap(), q);
    }

    #[test]
    fn simple_transform_makes_no_calls() {
        let p = PromptCatalog::default();
        let log = CallLog::new();
        let g = MockStack::default().gateway().with_call_log(log.clone());
        let tq = QueryTransformer::new(&g, &p)
            .transform("what is x", RouteDecision::Simple)
            .unwrap();
        assert!(log.records().is_empty());
        assert!(tq.sub_queries.is_empty() && tq.hyde_document.is_none());
        let tq = QueryTransformer::new(&g, &p)
            .transform("compare X and Y", RouteDecision::Complex)
            .unwrap();
        assert_eq!(tq.sub_queries.len(), 2);
        assert!(tq.hyde_document.is_some());
        assert_eq!(log.directive_count("rewrite"), 1);
        assert_eq!(log.directive_count("hyde"), 1);
    }

    #[test]
    fn empty_query_rejected() {
        let p = PromptCatalog::default();
        let g = MockStack::default().gateway();
        assert!(QueryTransformer::new(&g, &p).route(" ").is_err());
    }
}
