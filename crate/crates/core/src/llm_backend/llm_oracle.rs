use std::collections::{BTreeMap, BTreeSet};

use super::client::{tokens_passing, CacheMode, CompletionParams, CompletionRequest, LlmClient};
use super::parse::{parse_choice, parse_csv_list, parse_descriptions, parse_direction, parse_name, parse_yes_no, ParseError};
use super::templates::{render, Bindings, TemplateName};
use super::CostLedger;
use crate::hierarchy::normalize_name;
use crate::oracle::{Oracle, OracleContext, OracleError, QueryLog};

/// Token budgets per prompt kind.
const SHORT_REPLY_TOKENS: u32 = 8;
const NAME_REPLY_TOKENS: u32 = 32;
const DIRECTION_REPLY_TOKENS: u32 = 64;

/// [`Oracle`] implementation that asks a chat-completion model.
#[derive(Debug)]
pub struct LlmOracle {
    client: LlmClient,
    /// Parameters for deterministic prompts; `max_tokens` bounds list and
    /// description replies.
    params: CompletionParams,
    /// Temperature and top_p of the first-token sampling phase.
    sampling_temperature: f64,
    sampling_top_p: f64,
}

impl LlmOracle {
    pub fn new(client: LlmClient, params: CompletionParams) -> Self {
        LlmOracle { client, params, sampling_temperature: 2.0, sampling_top_p: 0.99 }
    }

    pub fn with_sampling(mut self, temperature: f64, top_p: f64) -> Self {
        self.sampling_temperature = temperature;
        self.sampling_top_p = top_p;
        self
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    fn params_with(&self, max_tokens: u32) -> CompletionParams {
        CompletionParams { max_tokens: max_tokens.min(self.params.max_tokens).max(1), ..self.params.clone() }
    }

    fn ask(
        &self,
        ctx: &OracleContext,
        template: TemplateName,
        bindings: &Bindings,
        params: &CompletionParams,
        args: &[&str],
        cache: CacheMode,
    ) -> Result<String, OracleError> {
        let prompt = render(template, bindings, ctx)?;
        let completion = self.client.complete(&CompletionRequest {
            template,
            prompt: &prompt,
            params,
            args,
            phase: ctx.phase,
            cache,
        })?;
        Ok(completion.text)
    }

    /// Asks a question with a closed answer set. An unparseable reply is
    /// asked once more, bypassing the cache; a second failure is a parse error.
    fn ask_parsed<T>(
        &self,
        ctx: &OracleContext,
        template: TemplateName,
        bindings: &Bindings,
        args: &[&str],
        max_tokens: u32,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, OracleError> {
        let params = self.params_with(max_tokens);
        let reply = self.ask(ctx, template, bindings, &params, args, CacheMode::Use)?;
        if let Ok(v) = parse(&reply) {
            return Ok(v);
        }
        log::debug!("unparseable {template} reply {reply:?}, asking again");
        let reply = self.ask(ctx, template, bindings, &params, args, CacheMode::Refresh)?;
        parse(&reply).map_err(|_| OracleError::Parse { template, reply })
    }

    fn yes_no(&self, ctx: &OracleContext, template: TemplateName, bindings: &Bindings, args: &[&str]) -> Result<bool, OracleError> {
        self.ask_parsed(ctx, template, bindings, args, SHORT_REPLY_TOKENS, parse_yes_no)
    }

    fn lineage_bindings(ctx: &OracleContext, concept: &str) -> Bindings {
        Bindings::seed(&ctx.seed_name).with_c(concept).with_d(ctx.parent_name.as_deref())
    }
}

fn dedup_union(lists: impl IntoIterator<Item = Vec<String>>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for name in lists.into_iter().flatten() {
        if seen.insert(normalize_name(&name)) {
            out.push(name);
        }
    }
    out
}

impl Oracle for LlmOracle {
    fn has_subconcepts(&self, ctx: &OracleContext, concept: &str) -> Result<bool, OracleError> {
        self.yes_no(ctx, TemplateName::Existence, &Self::lineage_bindings(ctx, concept), &[concept])
    }

    fn list_subconcepts(
        &self,
        ctx: &OracleContext,
        concept: &str,
        threshold: usize,
        samples: usize,
    ) -> Result<Vec<String>, OracleError> {
        let bindings = Self::lineage_bindings(ctx, concept);
        let listing = render(TemplateName::Listing, &bindings, ctx)?;
        let sampling = CompletionParams {
            temperature: self.sampling_temperature,
            top_p: self.sampling_top_p,
            max_tokens: 1,
            ..self.params.clone()
        };
        let freq = self.client.sample_first_tokens(TemplateName::Listing, &listing, &sampling, samples, &[concept])?;
        let tokens = tokens_passing(&freq, threshold);
        log::debug!("{concept}: {} first tokens, {} pass threshold {threshold}", freq.len(), tokens.len());

        if tokens.is_empty() {
            let reply = self.ask(ctx, TemplateName::Listing, &bindings, &self.params, &[concept], CacheMode::Use)?;
            return Ok(dedup_union([parse_csv_list(&reply)]));
        }
        let replies = crate::parallel::bounded_map(&tokens, self.client.max_in_flight(), |t| {
            let b = bindings.clone().with_token(t);
            self.ask(ctx, TemplateName::ListingContinuation, &b, &self.params, &[concept, t.as_str()], CacheMode::Use)
        });
        let mut lists = Vec::with_capacity(replies.len());
        for reply in replies {
            lists.push(parse_csv_list(&reply?));
        }
        Ok(dedup_union(lists))
    }

    fn describe(
        &self,
        ctx: &OracleContext,
        concept: &str,
        names: &[String],
    ) -> Result<BTreeMap<String, String>, OracleError> {
        if names.is_empty() {
            return Ok(BTreeMap::new());
        }
        let bindings = Self::lineage_bindings(ctx, concept).with_items(names);
        let args: Vec<&str> = std::iter::once(concept).chain(names.iter().map(String::as_str)).collect();
        let reply = self.ask(ctx, TemplateName::Description, &bindings, &self.params, &args, CacheMode::Use)?;
        let parsed = parse_descriptions(&reply, names);
        for (name, text) in &parsed {
            if text.is_empty() {
                log::warn!("no description for {name:?} in reply about {concept:?}");
            }
        }
        Ok(parsed)
    }

    fn is_instance(&self, ctx: &OracleContext, candidate: &str) -> Result<bool, OracleError> {
        let b = Bindings::seed(&ctx.seed_name).with_d(Some(candidate));
        self.ask_parsed(ctx, TemplateName::VerifyInstance, &b, &[candidate], SHORT_REPLY_TOKENS, |r| {
            parse_choice(r, &[("instance", true), ("subcategory", false)])
        })
    }

    fn is_part(&self, ctx: &OracleContext, candidate: &str) -> Result<bool, OracleError> {
        let b = Bindings::seed(&ctx.seed_name).with_d(Some(candidate));
        self.ask_parsed(ctx, TemplateName::VerifyPart, &b, &[candidate], SHORT_REPLY_TOKENS, |r| {
            parse_choice(r, &[("part", true), ("subcategory", false)])
        })
    }

    fn under_seed(&self, ctx: &OracleContext, candidate: &str) -> Result<bool, OracleError> {
        let b = Bindings::seed(&ctx.seed_name).with_d(Some(candidate));
        self.yes_no(ctx, TemplateName::VerifySeed, &b, &[candidate])
    }

    fn is_subcategory_of(&self, ctx: &OracleContext, candidate: &str, concept: &str) -> Result<bool, OracleError> {
        let b = Bindings::seed(&ctx.seed_name).with_c(concept).with_d(Some(candidate));
        self.yes_no(ctx, TemplateName::VerifySubcat, &b, &[candidate, concept])
    }

    fn rename_from_description(
        &self,
        ctx: &OracleContext,
        concept: &str,
        description: &str,
    ) -> Result<Option<String>, OracleError> {
        let b = Bindings::seed(&ctx.seed_name).with_c(concept).with_desc(description);
        let params = self.params_with(NAME_REPLY_TOKENS);
        let reply = self.ask(ctx, TemplateName::Rename, &b, &params, &[concept], CacheMode::Use)?;
        Ok(parse_name(&reply))
    }

    fn interchangeable(&self, ctx: &OracleContext, first: &str, second: &str) -> Result<bool, OracleError> {
        let b = Bindings::seed(&ctx.seed_name).with_pair(first, second);
        self.yes_no(ctx, TemplateName::SynonymInterchangeable, &b, &[first, second])
    }

    fn subcategory_direction(
        &self,
        ctx: &OracleContext,
        first: &str,
        second: &str,
    ) -> Result<(String, String), OracleError> {
        let b = Bindings::seed(&ctx.seed_name).with_pair(first, second);
        let (f, s) = (normalize_name(first), normalize_name(second));
        self.ask_parsed(ctx, TemplateName::SynonymDirection, &b, &[first, second], DIRECTION_REPLY_TOKENS, |reply| {
            let (sub, sup) = parse_direction(reply)?;
            match (normalize_name(&sub), normalize_name(&sup)) {
                (a, z) if a == f && z == s => Ok((first.to_string(), second.to_string())),
                (a, z) if a == s && z == f => Ok((second.to_string(), first.to_string())),
                _ => Err(ParseError::NoDirection(reply.to_string())),
            }
        })
    }

    fn usage(&self) -> CostLedger {
        self.client.ledger()
    }

    fn query_log(&self) -> &QueryLog {
        self.client.query_log()
    }

    fn flush(&self) -> Result<(), OracleError> {
        self.client.save_cache().map_err(|e| OracleError::Backend(format!("cannot save response cache: {e}")))
    }
}
