//! Command-line front door: composes the pipeline stages (item generation,
//! pool refinement, mediator generation, simulation, ranking, selection,
//! evaluation, human ingestion, ablations) into manifest-tracked runs.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use itemforge::evaluation::{
    self, evaluate_selection_budgeted, oracle_ranking, render_table, subsample_percentiles,
    MethodRanking, SelectionReport,
};
use itemforge::human::{self, DuplicateThreshold};
use itemforge::mediators::{
    self, Mediator, MediatorInputs, MediatorStrategy,
};
use itemforge::metrics::{item_validities, TraitScoreMode};
use itemforge::model::{
    Polarity, RespondentKind, RespondentProfile, ResponseMatrix, SurveyItem, TraitLevel,
    TraitLevelMode,
};
use itemforge::pool::{self, GenerationRequest};
use itemforge::providers::{HttpProvider, Provider, ReplayProvider, ResponseCache};
use itemforge::selection::{self, RankedPool};
use itemforge::simulation::{
    matrix_from_csv, matrix_to_csv, run_survey, write_raw_log, Backend, SimulationPlan,
    SyntheticRespondentParams,
};

use crate::config::LoadedConfig;
use crate::manifest::ManifestBuilder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Live,
    Replay,
    Synthetic,
}

impl BackendArg {
    fn as_str(self) -> &'static str {
        match self {
            BackendArg::Live => "live",
            BackendArg::Replay => "replay",
            BackendArg::Synthetic => "synthetic",
        }
    }
}

#[derive(Parser)]
#[command(name = "itemforge", version, about = "Psychometric item generation and validation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed for every stochastic stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Survey configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Respondent backend.
    #[arg(long, global = true, value_enum, default_value_t = BackendArg::Synthetic)]
    backend: BackendArg,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Provider response cache (JSONL); required for replay mode.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Maximum in-flight provider requests.
    #[arg(long, global = true, default_value_t = 8)]
    concurrency: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the candidate item pool (both polarities, every trait).
    GenItems,
    /// Refine a candidate pool to ~n/4 representatives via embeddings + k-means.
    RefinePool {
        #[arg(long)]
        items: PathBuf,
    },
    /// Generate mediators for every trait with one strategy.
    GenMediators {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// Item bank (required by the item strategy).
        #[arg(long)]
        items: Option<PathBuf>,
        /// WVS question CSV (topic,question) for the wvs strategy.
        #[arg(long)]
        wvs: Option<PathBuf>,
        /// Demographics CSV for the sampling strategy.
        #[arg(long)]
        demographics: Option<PathBuf>,
        /// Reverse an existing mediator store instead of generating anew.
        #[arg(long)]
        reverse_of: Option<PathBuf>,
    },
    /// Run the double-order virtual-respondent survey.
    Simulate {
        /// Item bank(s): generated and official items (repeatable).
        #[arg(long, required = true)]
        items: Vec<PathBuf>,
        #[arg(long)]
        mediators: Option<PathBuf>,
        /// Respondent profiles JSONL; synthesized when absent.
        #[arg(long)]
        personas: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        respondents: usize,
        /// Synthetic-backend noise scale.
        #[arg(long, default_value_t = 0.75)]
        sigma: f64,
        /// Omit the trait-steering sentence (component ablation).
        #[arg(long, default_value_t = false)]
        no_steering: bool,
    },
    /// Rank each trait's generated items.
    Rank {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, required = true)]
        items: Vec<PathBuf>,
        /// Virtual-respondent matrix CSV (simulation method).
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Judge runs per item.
        #[arg(long, default_value_t = 10)]
        runs: usize,
    },
    /// Take the top N of a ranking file.
    Select {
        #[arg(long)]
        ranking: PathBuf,
        /// Defaults to the config's items-per-trait.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Evaluate rankings against a reference matrix (Table-2-shaped report).
    Evaluate {
        #[arg(long, required = true)]
        ranking: Vec<PathBuf>,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, required = true)]
        items: Vec<PathBuf>,
        /// Also report the oracle ranking computed from the reference matrix.
        #[arg(long, default_value_t = false)]
        with_oracle: bool,
        /// Selection size; defaults to the config's items-per-trait.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Ingest a human survey export with attention checks.
    IngestHuman {
        #[arg(long)]
        answers: PathBuf,
        #[arg(long)]
        demographics: Option<PathBuf>,
        /// Fail duplicates at >=2 discrepant occasions instead of >2.
        #[arg(long, default_value_t = false)]
        strict_duplicates: bool,
    },
    /// Respondent-scale ablation: selection score across subsample sizes.
    AblateScale {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, required = true)]
        items: Vec<PathBuf>,
        #[arg(long)]
        ranking: PathBuf,
        /// Subsample sizes; defaults to 50,100,...,500.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        repeats: usize,
    },
    /// Prompt-component ablation: persona-only / persona+trait /
    /// persona+trait+mediator.
    AblateComponents {
        #[arg(long, value_enum)]
        mode: ComponentMode,
        #[arg(long, required = true)]
        items: Vec<PathBuf>,
        #[arg(long)]
        mediators: Option<PathBuf>,
        #[arg(long)]
        personas: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        respondents: usize,
        #[arg(long, default_value_t = 0.75)]
        sigma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Free,
    Caps,
    Item,
    Wvs,
    Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Simulation,
    Random,
    LlmJudge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ComponentMode {
    PersonaOnly,
    PersonaTrait,
    PersonaTraitMediator,
}

enum AnyProvider {
    Http(HttpProvider),
    Replay(ReplayProvider),
}

impl Provider for AnyProvider {
    fn chat(
        &self,
        request: &itemforge::providers::ProviderRequest,
    ) -> Result<String, itemforge::error::ProviderError> {
        match self {
            AnyProvider::Http(p) => p.chat(request),
            AnyProvider::Replay(p) => p.chat(request),
        }
    }
}

fn make_provider(cli: &Cli) -> Result<AnyProvider> {
    let cache = match &cli.cache {
        Some(path) => ResponseCache::open(path)?,
        None => ResponseCache::in_memory(),
    };
    match cli.backend {
        BackendArg::Live => Ok(AnyProvider::Http(HttpProvider::from_env(cache, cli.concurrency)?)),
        BackendArg::Replay => {
            if cli.cache.is_none() {
                bail!("replay backend requires --cache");
            }
            Ok(AnyProvider::Replay(ReplayProvider::new(cache)))
        }
        BackendArg::Synthetic => {
            bail!("this stage queries a language model; use --backend live or replay")
        }
    }
}

fn load_config(cli: &Cli) -> Result<LoadedConfig> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("--config is required"))?;
    config::load(path)
}

fn read_items(paths: &[PathBuf]) -> Result<Vec<SurveyItem>> {
    let mut items = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading items {}", path.display()))?;
        let mut bank: Vec<SurveyItem> = serde_json::from_str(&text)
            .with_context(|| format!("parsing items {}", path.display()))?;
        items.append(&mut bank);
    }
    Ok(items)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_matrix(path: &Path, cfg: &LoadedConfig) -> Result<ResponseMatrix> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading matrix {}", path.display()))?;
    Ok(matrix_from_csv(&text, &cfg.survey.scale)?)
}

fn read_personas(path: &Path) -> Result<Vec<RespondentProfile>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading personas {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).context("parsing persona profile"))
        .collect()
}

/// Deterministic fallback personas when no Persona-Chat-style file is given.
fn synthesize_personas(count: usize, seed: u64) -> Vec<RespondentProfile> {
    let hobbies = [
        "hiking", "painting", "gardening", "chess", "baking", "photography", "running",
        "reading novels", "woodworking", "bird watching",
    ];
    let jobs = [
        "a teacher", "a nurse", "an engineer", "a shop clerk", "a farmer", "a musician",
        "a librarian", "a carpenter", "a cook", "an accountant",
    ];
    let places = [
        "a small town", "a big city", "the coast", "the mountains", "the countryside",
        "a university town",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let hobby = hobbies[rng.gen_range(0..hobbies.len())];
            let job = jobs[rng.gen_range(0..jobs.len())];
            let place = places[rng.gen_range(0..places.len())];
            RespondentProfile {
                respondent_id: format!("v{i:04}"),
                kind: RespondentKind::Virtual,
                persona_sentences: vec![
                    format!("I work as {job}."),
                    format!("I live in {place}."),
                    format!("I enjoy {hobby} in my free time."),
                ],
                mediator_id: None,
                steering: None,
                demographics: None,
            }
        })
        .collect()
}

/// Attach steering levels per the trait-level mode and insert one randomly
/// chosen mediator per respondent at a random position.
fn prepare_profiles(
    mut profiles: Vec<RespondentProfile>,
    mediator_pool: &[Mediator],
    mode: TraitLevelMode,
    seed: u64,
    steer: bool,
) -> Vec<RespondentProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let count = profiles.len();
    for (i, profile) in profiles.iter_mut().enumerate() {
        if steer {
            let level = match mode {
                TraitLevelMode::High => TraitLevel::High,
                TraitLevelMode::Low => TraitLevel::Low,
                TraitLevelMode::Mixed => {
                    if i < count / 2 {
                        TraitLevel::Low
                    } else {
                        TraitLevel::High
                    }
                }
            };
            profile.steering = Some(("*".into(), level));
        }
        if !mediator_pool.is_empty() {
            let mediator = &mediator_pool[rng.gen_range(0..mediator_pool.len())];
            *profile = mediators::integrate_mediator(profile, Some(mediator), &mut rng);
        }
    }
    profiles
}

/// Seeded synthetic-oracle parameters: θ per (respondent, trait) and λ per
/// item, stable under respondent/item ordering.
fn synthetic_params(
    plan_items: &[SurveyItem],
    profiles: &[RespondentProfile],
    cfg: &LoadedConfig,
    seed: u64,
    sigma: f64,
) -> SyntheticRespondentParams {
    let mut params = SyntheticRespondentParams::new(seed, sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    for profile in profiles {
        let entry = params.theta.entry(profile.respondent_id.clone()).or_default();
        for t in &cfg.survey.traits {
            entry.insert(t.trait_id.clone(), rng.gen_range(-2.0..2.0));
        }
    }
    for item in plan_items {
        params.lambda.insert(item.item_id.clone(), rng.gen_range(0.25..2.0));
        params.offset.insert(item.item_id.clone(), 0.0);
    }
    params
}

fn run_simulation(
    cli: &Cli,
    items: &[PathBuf],
    mediators_path: Option<&PathBuf>,
    personas_path: Option<&PathBuf>,
    respondents: usize,
    sigma: f64,
    steering: bool,
    subdir: Option<&str>,
) -> Result<()> {
    let cfg = load_config(cli)?;
    let out_dir = match subdir {
        Some(d) => cli.out.join(d),
        None => cli.out.clone(),
    };
    std::fs::create_dir_all(&out_dir)?;
    let mut mb = ManifestBuilder::new("simulate", cli.config.as_deref(), cli.seed, cli.backend.as_str())?;
    let all_items = read_items(items)?;
    for p in items {
        mb.input(p)?;
    }
    let mediator_pool = match mediators_path {
        Some(p) => {
            mb.input(p)?;
            mediators::read_store(p)?
        }
        None => Vec::new(),
    };
    let base_profiles = match personas_path {
        Some(p) => {
            mb.input(p)?;
            read_personas(p)?
        }
        None => synthesize_personas(respondents, cli.seed),
    };
    let profiles = prepare_profiles(
        base_profiles,
        &mediator_pool,
        cfg.survey.trait_level_mode,
        cli.seed,
        steering,
    );
    let plan = SimulationPlan {
        config: cfg.survey.clone(),
        respondents: profiles,
        items: all_items,
        backend_tag: cli.backend.as_str().into(),
        concurrency: cli.concurrency,
        seed: cli.seed,
        include_steering: steering,
    };
    mb.mark("prepare");
    let checkpoint = out_dir.join("checkpoint.jsonl");
    let run = match cli.backend {
        BackendArg::Synthetic => {
            let params =
                synthetic_params(&plan.items, &plan.respondents, &cfg, cli.seed, sigma);
            run_survey(&plan, &Backend::Synthetic(params), Some(&checkpoint))?
        }
        _ => {
            let provider = make_provider(cli)?;
            let backend = Backend::Provider {
                provider: &provider,
                model: cfg.model("simulation"),
                sampling: Default::default(),
            };
            run_survey(&plan, &backend, Some(&checkpoint))?
        }
    };
    mb.mark("survey");
    let matrix_path = out_dir.join("matrix.csv");
    std::fs::write(&matrix_path, matrix_to_csv(&run.matrix))?;
    let raw_path = out_dir.join("raw_log.jsonl");
    write_raw_log(&raw_path, &run.raw_log)?;
    mb.model("simulation", &cfg.model("simulation"));
    mb.output(&matrix_path)?;
    mb.output(&raw_path)?;
    mb.mark("write");
    mb.write(&out_dir.join("manifest-simulate.json"))?;
    println!(
        "simulated {} cells ({} missing) -> {}",
        run.matrix.len(),
        run.missing.len(),
        matrix_path.display()
    );
    Ok(())
}

fn method_ranking(pools: &[RankedPool], method: &str) -> MethodRanking {
    let mut by_trait = BTreeMap::new();
    for pool in pools {
        by_trait.insert(pool.trait_id.clone(), pool.item_ids());
    }
    MethodRanking { method: method.to_string(), by_trait }
}

fn generated_by_trait<'a>(
    items: &'a [SurveyItem],
    trait_id: &str,
) -> Vec<&'a SurveyItem> {
    items
        .iter()
        .filter(|i| {
            i.trait_id == trait_id && i.source == itemforge::model::ItemSource::Generated
        })
        .collect()
}

fn run(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::GenItems => {
            let cfg = load_config(cli)?;
            let provider = make_provider(cli)?;
            let mut mb =
                ManifestBuilder::new("gen-items", cli.config.as_deref(), cli.seed, cli.backend.as_str())?;
            let model = cfg.model("item_gen");
            let mut bank = Vec::new();
            for t in &cfg.survey.traits {
                let mut start = 1;
                for direction in [Polarity::Positive, Polarity::Negative] {
                    let req = GenerationRequest {
                        trait_spec: t.clone(),
                        direction,
                        count: 2 * cfg.survey.n_per_trait,
                        subject: cfg.survey.item_subject.clone(),
                        generator: model.clone(),
                    };
                    let (items, report) = pool::generate_items(&req, &provider, &model, start)?;
                    if !report.dropped.is_empty() {
                        eprintln!(
                            "warning: {} line(s) dropped for trait {}",
                            report.dropped.len(),
                            t.trait_id
                        );
                    }
                    start += items.len() as u32;
                    bank.extend(items);
                }
            }
            mb.mark("generate");
            let path = cli.out.join("items.json");
            write_json(&path, &bank)?;
            mb.model("item_gen", &model);
            mb.output(&path)?;
            mb.write(&cli.out.join("manifest-gen-items.json"))?;
            println!("generated {} candidate items -> {}", bank.len(), path.display());
        }
        Command::RefinePool { items } => {
            let cfg = load_config(cli)?;
            let provider = make_provider(cli)?;
            let mut mb =
                ManifestBuilder::new("refine-pool", cli.config.as_deref(), cli.seed, cli.backend.as_str())?;
            mb.input(items)?;
            let bank = read_items(std::slice::from_ref(items))?;
            let model = cfg.model("embedding");
            let mut refined = Vec::new();
            for t in &cfg.survey.traits {
                let pool_items: Vec<SurveyItem> =
                    generated_by_trait(&bank, &t.trait_id).into_iter().cloned().collect();
                if pool_items.is_empty() {
                    continue;
                }
                let embedded = pool::embed_items(&pool_items, &provider, &model)?;
                let k = pool::refinement_k(pool_items.len());
                refined.extend(pool::refine_pool(&pool_items, &embedded, k, cli.seed)?);
            }
            mb.mark("refine");
            let path = cli.out.join("items-refined.json");
            write_json(&path, &refined)?;
            mb.model("embedding", &model);
            mb.output(&path)?;
            mb.write(&cli.out.join("manifest-refine-pool.json"))?;
            println!("refined to {} items -> {}", refined.len(), path.display());
        }
        Command::GenMediators { strategy, items, wvs, demographics, reverse_of } => {
            let cfg = load_config(cli)?;
            let mut mb = ManifestBuilder::new(
                "gen-mediators",
                cli.config.as_deref(),
                cli.seed,
                cli.backend.as_str(),
            )?;
            let path = cli.out.join("mediators.jsonl");
            let store: Vec<Mediator> = if let Some(source) = reverse_of {
                mb.input(source)?;
                let provider = make_provider(cli)?;
                let originals = mediators::read_store(source)?;
                mediators::reverse_mediators(&originals, &provider, &cfg.model("mediator_gen"))?
            } else if *strategy == StrategyArg::Sampling {
                let demo_path = demographics
                    .as_ref()
                    .ok_or_else(|| anyhow!("sampling strategy requires --demographics"))?;
                mb.input(demo_path)?;
                let text = std::fs::read_to_string(demo_path)?;
                let mut reader = csv::Reader::from_reader(text.as_bytes());
                let mut records = Vec::new();
                for row in reader.deserialize::<BTreeMap<String, String>>() {
                    let row = row?;
                    let get = |k: &str| row.get(k).cloned().unwrap_or_default();
                    records.push(itemforge::model::Demographics {
                        sex: get("sex"),
                        age: get("age"),
                        country: get("country"),
                        occupation: get("occupation"),
                        income: get("income"),
                        education: get("education"),
                        social_class: get("social_class"),
                        religion: get("religion"),
                    });
                }
                mediators::sample_cards(&records)?
            } else {
                let provider = make_provider(cli)?;
                let model = cfg.model("mediator_gen");
                let strategy = match strategy {
                    StrategyArg::Free => MediatorStrategy::Free,
                    StrategyArg::Caps => MediatorStrategy::Caps,
                    StrategyArg::Item => MediatorStrategy::Item,
                    StrategyArg::Wvs => MediatorStrategy::Wvs,
                    StrategyArg::Sampling => unreachable!(),
                };
                let bank = match items {
                    Some(p) => {
                        mb.input(p)?;
                        read_items(std::slice::from_ref(p))?
                    }
                    None => Vec::new(),
                };
                let wvs_rows = match wvs {
                    Some(p) => {
                        mb.input(p)?;
                        mediators::read_wvs_csv(p)?
                    }
                    None => Vec::new(),
                };
                let mut all = Vec::new();
                for t in &cfg.survey.traits {
                    let trait_items: Vec<SurveyItem> =
                        generated_by_trait(&bank, &t.trait_id).into_iter().cloned().collect();
                    let inputs = MediatorInputs {
                        items: if trait_items.is_empty() { None } else { Some(&trait_items) },
                        wvs_rows: if wvs_rows.is_empty() { None } else { Some(&wvs_rows) },
                    };
                    all.extend(mediators::generate_mediators(
                        t, strategy, &inputs, &provider, &model,
                    )?);
                }
                all
            };
            mb.mark("generate");
            mediators::write_store(&path, &store)?;
            mb.model("mediator_gen", &cfg.model("mediator_gen"));
            mb.output(&path)?;
            mb.write(&cli.out.join("manifest-gen-mediators.json"))?;
            println!("wrote {} mediators -> {}", store.len(), path.display());
        }
        Command::Simulate { items, mediators, personas, respondents, sigma, no_steering } => {
            run_simulation(
                cli,
                items,
                mediators.as_ref(),
                personas.as_ref(),
                *respondents,
                *sigma,
                !no_steering,
                None,
            )?;
        }
        Command::Rank { method, items, matrix, runs } => {
            let cfg = load_config(cli)?;
            let mut mb =
                ManifestBuilder::new("rank", cli.config.as_deref(), cli.seed, cli.backend.as_str())?;
            let bank = read_items(items)?;
            for p in items {
                mb.input(p)?;
            }
            let mut pools = Vec::new();
            match method {
                MethodArg::Simulation => {
                    let matrix_path =
                        matrix.as_ref().ok_or_else(|| anyhow!("simulation method requires --matrix"))?;
                    mb.input(matrix_path)?;
                    let m = read_matrix(matrix_path, &cfg)?;
                    for t in &cfg.survey.traits {
                        let pool = generated_by_trait(&bank, &t.trait_id);
                        if pool.is_empty() {
                            continue;
                        }
                        pools.push(selection::rank_by_cv(&pool, &m, &bank)?);
                    }
                }
                MethodArg::Random => {
                    for t in &cfg.survey.traits {
                        let pool = generated_by_trait(&bank, &t.trait_id);
                        if pool.is_empty() {
                            continue;
                        }
                        pools.push(selection::rank_random(&pool, cli.seed));
                    }
                }
                MethodArg::LlmJudge => {
                    let provider = make_provider(cli)?;
                    let model = cfg.model("judge");
                    mb.model("judge", &model);
                    for t in &cfg.survey.traits {
                        let pool = generated_by_trait(&bank, &t.trait_id);
                        if pool.is_empty() {
                            continue;
                        }
                        pools.push(selection::rank_llm_judge(&pool, t, &provider, &model, *runs)?);
                    }
                }
            }
            mb.mark("rank");
            let path = cli.out.join("ranking.json");
            write_json(&path, &pools)?;
            mb.output(&path)?;
            mb.write(&cli.out.join("manifest-rank.json"))?;
            println!("ranked {} trait pools -> {}", pools.len(), path.display());
        }
        Command::Select { ranking, n } => {
            let cfg = load_config(cli)?;
            let mut mb =
                ManifestBuilder::new("select", cli.config.as_deref(), cli.seed, cli.backend.as_str())?;
            mb.input(ranking)?;
            let text = std::fs::read_to_string(ranking)?;
            let pools: Vec<RankedPool> = serde_json::from_str(&text)?;
            let n = n.unwrap_or(cfg.survey.n_per_trait);
            let mut selected: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for pool in &pools {
                selected.insert(pool.trait_id.clone(), selection::select_top_n(pool, n)?);
            }
            mb.mark("select");
            let path = cli.out.join("selected.json");
            write_json(&path, &selected)?;
            mb.output(&path)?;
            mb.write(&cli.out.join("manifest-select.json"))?;
            println!("selected top {n} per trait -> {}", path.display());
        }
        Command::Evaluate { ranking, matrix, items, with_oracle, n } => {
            let mut cfg = load_config(cli)?;
            if let Some(n) = n {
                cfg.survey.n_per_trait = *n;
            }
            let mut mb =
                ManifestBuilder::new("evaluate", cli.config.as_deref(), cli.seed, cli.backend.as_str())?;
            let bank = read_items(items)?;
            for p in items {
                mb.input(p)?;
            }
            mb.input(matrix)?;
            let reference = read_matrix(matrix, &cfg)?;
            let mut reports: Vec<SelectionReport> = Vec::new();
            for path in ranking {
                mb.input(path)?;
                let text = std::fs::read_to_string(path)?;
                let pools: Vec<RankedPool> = serde_json::from_str(&text)?;
                let method = pools
                    .first()
                    .map(|p| format!("{:?}", p.method))
                    .unwrap_or_else(|| "unknown".into());
                let mr = method_ranking(&pools, &method);
                reports.push(evaluate_selection_budgeted(
                    &mr,
                    &reference,
                    &cfg.survey,
                    &bank,
                    TraitScoreMode::AllOfficial,
                    cli.seed,
                    evaluation::DEFAULT_ENUMERATION_BUDGET,
                    evaluation::DEFAULT_MC_DRAWS,
                )?);
            }
            if *with_oracle {
                let oracle =
                    oracle_ranking(&reference, &cfg.survey, &bank, TraitScoreMode::AllOfficial)?;
                reports.push(evaluate_selection_budgeted(
                    &oracle,
                    &reference,
                    &cfg.survey,
                    &bank,
                    TraitScoreMode::AllOfficial,
                    cli.seed,
                    evaluation::DEFAULT_ENUMERATION_BUDGET,
                    evaluation::DEFAULT_MC_DRAWS,
                )?);
            }
            mb.mark("evaluate");
            let refs: Vec<&SelectionReport> = reports.iter().collect();
            let table = render_table(&refs);
            print!("{table}");
            let path = cli.out.join("report.json");
            write_json(&path, &reports)?;
            std::fs::write(cli.out.join("report.txt"), &table)?;
            mb.output(&path)?;
            mb.write(&cli.out.join("manifest-evaluate.json"))?;
        }
        Command::IngestHuman { answers, demographics, strict_duplicates } => {
            let cfg = load_config(cli)?;
            let mut mb = ManifestBuilder::new(
                "ingest-human",
                cli.config.as_deref(),
                cli.seed,
                cli.backend.as_str(),
            )?;
            mb.input(answers)?;
            let answers_text = std::fs::read_to_string(answers)?;
            let demo_text = match demographics {
                Some(p) => {
                    mb.input(p)?;
                    Some(std::fs::read_to_string(p)?)
                }
                None => None,
            };
            let threshold = if *strict_duplicates {
                DuplicateThreshold::AtLeastTwo
            } else {
                DuplicateThreshold::MoreThanTwo
            };
            let out =
                human::ingest(&answers_text, demo_text.as_deref(), &cfg.survey, threshold)?;
            mb.mark("ingest");
            let matrix_path = cli.out.join("human-matrix.csv");
            std::fs::write(&matrix_path, matrix_to_csv(&out.matrix))?;
            let report_path = cli.out.join("exclusions.json");
            write_json(&report_path, &out.report)?;
            let demo_path = cli.out.join("demographics.csv");
            std::fs::write(&demo_path, human::export_demographics_csv(&out.demographics))?;
            mb.output(&matrix_path)?;
            mb.output(&report_path)?;
            mb.output(&demo_path)?;
            mb.write(&cli.out.join("manifest-ingest-human.json"))?;
            println!(
                "retained {}/{} respondents -> {}",
                out.report.retained,
                out.report.recruited,
                matrix_path.display()
            );
        }
        Command::AblateScale { matrix, items, ranking, sizes, repeats } => {
            let cfg = load_config(cli)?;
            let mut mb = ManifestBuilder::new(
                "ablate-scale",
                cli.config.as_deref(),
                cli.seed,
                cli.backend.as_str(),
            )?;
            mb.input(matrix)?;
            mb.input(ranking)?;
            let bank = read_items(items)?;
            let full = read_matrix(matrix, &cfg)?;
            let text = std::fs::read_to_string(ranking)?;
            let pools: Vec<RankedPool> = serde_json::from_str(&text)?;
            let selected: BTreeMap<String, Vec<String>> = pools
                .iter()
                .map(|p| {
                    selection::select_top_n(p, cfg.survey.n_per_trait.min(p.entries.len()))
                        .map(|ids| (p.trait_id.clone(), ids))
                })
                .collect::<Result<_, _>>()?;
            let sizes: Vec<usize> = if sizes.is_empty() {
                (1..=10).map(|i| i * 50).collect()
            } else {
                sizes.clone()
            };
            let respondent_pool: Vec<String> =
                full.respondent_ids().into_iter().map(String::from).collect();
            let scale = cfg.survey.scale.clone();
            let distributions = subsample_percentiles(
                &respondent_pool,
                &sizes,
                *repeats,
                cli.seed,
                |subset| {
                    let keep: std::collections::BTreeSet<&str> =
                        subset.iter().map(String::as_str).collect();
                    let mut sub = ResponseMatrix::new(scale.clone());
                    for (r, i, v) in full.iter() {
                        if keep.contains(r) {
                            sub.insert(r, i, v).map_err(itemforge::error::EvalError::from)?;
                        }
                    }
                    // Mean selection CV over traits on the subsample.
                    let mut scores = Vec::new();
                    for (trait_id, ids) in &selected {
                        let pool_items: Vec<SurveyItem> = bank
                            .iter()
                            .filter(|it| ids.contains(&it.item_id))
                            .cloned()
                            .collect();
                        let validities = item_validities(
                            &pool_items,
                            &sub,
                            &bank,
                            &cfg.survey.traits,
                            TraitScoreMode::AllOfficial,
                        )
                        .map_err(itemforge::error::EvalError::from)?;
                        let refs: Vec<_> = validities.iter().collect();
                        scores.push(evaluation::set_cv(&refs).map_err(|e| {
                            itemforge::error::EvalError::Trait {
                                trait_id: trait_id.clone(),
                                source: Box::new(e),
                            }
                        })?);
                    }
                    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
                },
            )?;
            mb.mark("subsample");
            let path = cli.out.join("ablate-scale.json");
            write_json(&path, &distributions)?;
            mb.output(&path)?;
            mb.write(&cli.out.join("manifest-ablate-scale.json"))?;
            println!("wrote subsample distributions -> {}", path.display());
        }
        Command::AblateComponents { mode, items, mediators, personas, respondents, sigma } => {
            let (steering, use_mediators, subdir) = match mode {
                ComponentMode::PersonaOnly => (false, false, "persona-only"),
                ComponentMode::PersonaTrait => (true, false, "persona-trait"),
                ComponentMode::PersonaTraitMediator => (true, true, "persona-trait-mediator"),
            };
            if use_mediators && mediators.is_none() {
                bail!("persona-trait-mediator mode requires --mediators");
            }
            run_simulation(
                cli,
                items,
                if use_mediators { mediators.as_ref() } else { None },
                personas.as_ref(),
                *respondents,
                *sigma,
                steering,
                Some(subdir),
            )?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
