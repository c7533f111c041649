use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};

use full_core::data::{self, read_corpus, write_corpus};
use full_core::domain::{
    AnnotatedExample, CorpusRecord, CorrelationRow, CorrelationTable, Dialog, FollowUpSet, Level, ScoreMode,
};
use full_core::metric::{score_corpus, score_dialogs, FullScore, MetricConfig, MetricError};
use full_core::scorer::{NGramReferenceScorer, RemoteConfig, RemoteScorer, ScoreCache, ScoreError, ScorerBackend};
use full_core::stats::{
    model_comparison, parse_delimited, rank_followups, render_markdown, select_followups, spearman, to_delimited,
    LevelStudy, ModelSummary, SelectionConfig, StatsError,
};

use crate::config::{load_followup_set, OutputFormat, RunConfig, RunFlags, REFERENCE_ENDPOINT};
use crate::output::{emit, percent_pair, two_places};
use crate::reported;

/// Command outcome other than success, mapped onto the exit status.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable or inconsistent input, bad flags: exit 2.
    Input(anyhow::Error),
    /// The backend could not be reached: exit 3, nothing written.
    Unreachable(anyhow::Error),
    /// Output written but some examples or models failed: exit 4.
    Partial(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Unreachable(_) => 3,
            Failure::Partial(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(e) => write!(f, "{e:#}"),
            Failure::Unreachable(e) => write!(f, "backend unreachable: {e:#}"),
            Failure::Partial(m) => f.write_str(m),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn load_corpus(path: &Path) -> anyhow::Result<Vec<CorpusRecord>> {
    let file = File::open(path).with_context(|| format!("opening corpus {}", path.display()))?;
    read_corpus(BufReader::new(file)).with_context(|| format!("reading corpus {}", path.display()))
}

fn load_scores(path: &Path) -> anyhow::Result<Vec<FullScore>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading scores {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn open_cache(dir: Option<&Path>) -> anyhow::Result<ScoreCache> {
    match dir {
        None => Ok(ScoreCache::in_memory()),
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating cache dir {}", dir.display()))?;
            let path = dir.join("scores.jsonl");
            ScoreCache::open(&path).with_context(|| format!("opening cache {}", path.display()))
        }
    }
}

/// The reference backend is a trigram trained on the corpus utterances and
/// the follow-up texts, so every scored token is in its vocabulary.
fn open_backend(
    endpoint: &str,
    parallelism: usize,
    dialogs: &[&Dialog],
    followups: &FollowUpSet,
) -> Result<Box<dyn ScorerBackend>, Failure> {
    if endpoint == REFERENCE_ENDPOINT {
        let texts = dialogs
            .iter()
            .flat_map(|d| d.turns().iter().chain(d.response()))
            .map(|u| u.text())
            .chain(followups.iter().map(|f| f.text()));
        let scorer = NGramReferenceScorer::train(3, texts)
            .map_err(|e| Failure::Input(anyhow!("building reference scorer: {e}")))?
            .with_max_in_flight(parallelism);
        return Ok(Box::new(scorer));
    }
    let config = RemoteConfig { max_in_flight: parallelism, ..RemoteConfig::default() };
    match RemoteScorer::connect(endpoint, config) {
        Ok(s) => {
            log::info!("connected to {} ({})", endpoint, s.backend_id());
            Ok(Box::new(s))
        }
        Err(e @ ScoreError::Transport { .. }) => Err(Failure::Unreachable(anyhow!("{endpoint}: {e}"))),
        Err(e) => Err(Failure::Input(anyhow!("{endpoint}: {e}"))),
    }
}

fn is_transport(e: &MetricError) -> bool {
    matches!(e.score_error(), Some(ScoreError::Transport { .. }))
}

/// Scores each example at its own level; `only` restricts to one level.
fn score_by_level(
    backend: &dyn ScorerBackend,
    cache: &ScoreCache,
    dialogs: &[&Dialog],
    set: &FollowUpSet,
    mode: ScoreMode,
    only: Option<Level>,
) -> Vec<Option<Result<FullScore, MetricError>>> {
    let mut out: Vec<Option<Result<FullScore, MetricError>>> = vec![None; dialogs.len()];
    for level in [Level::Turn, Level::Dialog] {
        if only.is_some_and(|l| l != level) {
            continue;
        }
        let idx: Vec<usize> = (0..dialogs.len()).filter(|&i| dialogs[i].level() == level).collect();
        if idx.is_empty() {
            continue;
        }
        let subset: Vec<&Dialog> = idx.iter().map(|&i| dialogs[i]).collect();
        let config = MetricConfig::new(set.clone(), mode, level);
        for (i, r) in idx.into_iter().zip(score_dialogs(backend, cache, &subset, &config)) {
            out[i] = Some(r);
        }
    }
    out
}

fn render_scores(scores: &[FullScore], set: &FollowUpSet, format: OutputFormat) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    match format {
        OutputFormat::JsonLines => {
            for s in scores {
                serde_json::to_writer(&mut buf, s)?;
                buf.push(b'\n');
            }
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec!["dialog_id".to_owned(), "total".to_owned()];
            header.extend(set.iter().map(|f| f.text().to_owned()));
            w.write_record(&header)?;
            for s in scores {
                let mut row = vec![s.dialog_id().to_owned(), s.total().to_string()];
                row.extend(set.iter().map(|f| s.part(f.text()).map(|v| v.to_string()).unwrap_or_default()));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        OutputFormat::MarkdownTable => {
            buf.extend_from_slice(b"| Dialog | Total |\n|---|---:|\n");
            for s in scores {
                buf.extend_from_slice(format!("| {} | {} |\n", s.dialog_id(), two_places(Some(s.total()))).as_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn score(corpus: &Path, flags: &RunFlags, output: Option<&Path>, format: Option<&str>) -> Result<(), Failure> {
    let config = RunConfig::resolve(flags, format, OutputFormat::JsonLines)?;
    let set = config.followup_set()?;
    let records = load_corpus(corpus)?;
    let dialogs: Vec<&Dialog> = records.iter().map(|r| &r.dialog).collect();
    let backend = open_backend(&config.endpoint, config.parallelism, &dialogs, &set)?;
    let cache = open_cache(config.cache_dir.as_deref())?;

    let results = score_by_level(&*backend, &cache, &dialogs, &set, config.mode, config.level);
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    let mut skipped = 0;
    for (dialog, result) in dialogs.iter().zip(results) {
        match result {
            None => skipped += 1,
            Some(Ok(s)) => scores.push(s),
            Some(Err(e)) => failures.push((dialog.id(), e)),
        }
    }
    if skipped > 0 {
        log::info!("{skipped} example(s) at another level were skipped");
    }
    for (id, e) in &failures {
        eprintln!("failed: {id}: {e}");
    }
    if scores.is_empty() && !failures.is_empty() && failures.iter().all(|(_, e)| is_transport(e)) {
        return Err(Failure::Unreachable(anyhow!("every example failed with a transport error")));
    }
    emit(output, &render_scores(&scores, &set, config.format)?)?;
    eprintln!("scored {} of {} example(s)", scores.len(), scores.len() + failures.len());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Partial(format!("{} example(s) failed", failures.len())))
    }
}

/// Rated examples keyed by id; unrated records are left out.
fn rated(records: &[CorpusRecord]) -> (HashMap<String, AnnotatedExample>, HashSet<String>) {
    let mut rated = HashMap::new();
    let mut unrated = HashSet::new();
    for r in records {
        match r.annotated() {
            Some(a) => {
                rated.insert(r.dialog.id().to_owned(), a);
            }
            None => {
                unrated.insert(r.dialog.id().to_owned());
            }
        }
    }
    (rated, unrated)
}

fn join_error(orphans: &[String], side: &str) -> Failure {
    let shown: Vec<&str> = orphans.iter().take(10).map(String::as_str).collect();
    Failure::Input(anyhow!(
        "{} {side}: {}{}",
        orphans.len(),
        shown.join(", "),
        if orphans.len() > shown.len() { ", ..." } else { "" }
    ))
}

/// Pairs scores with ratings by dialog id. Every score must have an
/// annotation record and every rated example a score.
fn join<'a>(scores: &'a [FullScore], records: &[CorpusRecord]) -> Result<Vec<(&'a FullScore, Level, f64)>, Failure> {
    let (rated, unrated) = rated(records);
    let mut seen = HashSet::new();
    let mut joined = Vec::new();
    let mut orphans = Vec::new();
    for s in scores {
        seen.insert(s.dialog_id());
        match rated.get(s.dialog_id()) {
            Some(a) => joined.push((s, a.dialog().level(), a.mean_rating())),
            None if unrated.contains(s.dialog_id()) => {}
            None => orphans.push(s.dialog_id().to_owned()),
        }
    }
    if !orphans.is_empty() {
        return Err(join_error(&orphans, "scored example(s) have no annotation record"));
    }
    let mut missing: Vec<String> = rated.keys().filter(|id| !seen.contains(id.as_str())).cloned().collect();
    missing.sort();
    if !missing.is_empty() {
        return Err(join_error(&missing, "annotated example(s) have no score"));
    }
    Ok(joined)
}

fn level_correlation(pairs: &[(f64, f64)], level: Level) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    match spearman(&x, &y) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("{level}-level correlation undefined: {e}");
            None
        }
    }
}

fn render_table(table: &CorrelationTable, format: OutputFormat) -> anyhow::Result<Vec<u8>> {
    Ok(match format {
        OutputFormat::MarkdownTable => render_markdown(table).into_bytes(),
        OutputFormat::Csv => to_delimited(table).into_bytes(),
        OutputFormat::JsonLines => {
            let mut buf = Vec::new();
            for row in table.rows() {
                serde_json::to_writer(&mut buf, row)?;
                buf.push(b'\n');
            }
            buf
        }
    })
}

pub fn correlate(
    scores: &Path,
    annotations: &Path,
    with_baselines: bool,
    output: Option<&Path>,
    format: Option<&str>,
) -> Result<(), Failure> {
    let format = format.map_or(Ok(OutputFormat::MarkdownTable), str::parse).map_err(|e: String| anyhow!(e))?;
    let scores = load_scores(scores)?;
    let records = load_corpus(annotations)?;
    let joined = join(&scores, &records)?;
    let pairs = |level| -> Vec<(f64, f64)> {
        joined.iter().filter(|(_, l, _)| *l == level).map(|(s, _, r)| (s.total(), *r)).collect()
    };
    let mut table = CorrelationTable::new(vec![CorrelationRow {
        label: "FULL".into(),
        turn: level_correlation(&pairs(Level::Turn), Level::Turn),
        dialog: level_correlation(&pairs(Level::Dialog), Level::Dialog),
    }])
    .map_err(|e| anyhow!(e))?;
    if with_baselines {
        let (name, t, d) = reported::FULL_ROW;
        let rows = reported::BASELINES.iter().copied().chain([(name, t, d)]);
        for (name, turn, dialog) in rows {
            table
                .push(CorrelationRow {
                    label: format!("{name} {}", reported::PROVENANCE),
                    turn: Some(turn),
                    dialog: Some(dialog),
                })
                .map_err(|e| anyhow!(e))?;
        }
    }
    emit(output, &render_table(&table, format)?)?;
    Ok(())
}

pub enum SelectSource {
    Table(String),
    Scores { scores: Vec<PathBuf>, annotations: PathBuf },
}

fn study_table(scores: &[PathBuf], annotations: &Path, catalog: &FollowUpSet) -> Result<CorrelationTable, Failure> {
    let mut all = Vec::new();
    for path in scores {
        all.extend(load_scores(path)?);
    }
    let records = load_corpus(annotations)?;
    let joined = join(&all, &records)?;
    let mut gaps = Vec::new();
    for (s, _, _) in &joined {
        for f in catalog {
            if s.part(f.text()).is_none() {
                gaps.push(format!("{} lacks {:?}", s.dialog_id(), f.text()));
            }
        }
    }
    if !gaps.is_empty() {
        return Err(join_error(&gaps, "coverage gap(s) against the catalog"));
    }
    let study = |level| {
        let rows: Vec<(&FullScore, f64)> =
            joined.iter().filter(|(_, l, _)| *l == level).map(|(s, _, r)| (*s, *r)).collect();
        (!rows.is_empty()).then(|| LevelStudy::from_scores(rows))
    };
    let (turn, dialog) = (study(Level::Turn), study(Level::Dialog));
    let texts: Vec<String> = catalog.iter().map(|f| f.text().to_owned()).collect();
    rank_followups(&texts, turn.as_ref(), dialog.as_ref()).map_err(|e| Failure::Input(anyhow!(e)))
}

pub fn select(
    source: SelectSource,
    k: usize,
    dedup_threshold: f64,
    out_set: &Path,
    output: Option<&Path>,
    format: Option<&str>,
) -> Result<(), Failure> {
    let format = format.map_or(Ok(OutputFormat::MarkdownTable), str::parse).map_err(|e: String| anyhow!(e))?;
    let catalog = data::load_followup_catalog();
    let table = match source {
        SelectSource::Table(t) if t == "reported" => data::reported_followup_correlations(),
        SelectSource::Table(path) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading table {path}"))?;
            parse_delimited(&text).with_context(|| format!("parsing table {path}"))?
        }
        SelectSource::Scores { scores, annotations } => study_table(&scores, &annotations, &catalog)?,
    };
    let config = SelectionConfig { k, dedup_threshold };
    let selection = select_followups(&table, &catalog, &config).map_err(|e| match e {
        StatsError::UnknownFollowUp(_) | StatsError::MissingCoefficient(_) => anyhow!("{e}"),
        other => anyhow!(other),
    })?;
    if selection.is_short(&config) {
        log::warn!("only {} follow-up(s) survived deduplication; k = {k}", selection.followups.len());
        eprintln!("warning: only {} of {k} follow-up(s) selected", selection.followups.len());
    }
    for (skipped, kept) in &selection.skipped {
        eprintln!("skipped {skipped:?}: near-duplicate of {kept:?}");
    }
    let ranked = CorrelationTable::new(
        selection
            .ranking
            .iter()
            .map(|(text, _)| table.row(text).expect("ranked rows come from the table").clone())
            .collect(),
    )
    .map_err(|e| anyhow!(e))?;
    let mut set_json = serde_json::to_vec_pretty(&selection.followups).map_err(|e| anyhow!(e))?;
    set_json.push(b'\n');
    crate::output::atomic_write(out_set, &set_json)?;
    emit(output, &render_table(&ranked, format)?)?;
    Ok(())
}

enum ModelOutcome {
    Ok { backend_id: String, summary: ModelSummary },
    Failed { reason: String, unreachable: bool },
}

fn study_model(
    endpoint: &str,
    examples: &[AnnotatedExample],
    set: &FollowUpSet,
    cache: &ScoreCache,
    parallelism: usize,
) -> ModelOutcome {
    let dialogs: Vec<&Dialog> = examples.iter().map(AnnotatedExample::dialog).collect();
    let backend = match open_backend(endpoint, parallelism, &dialogs, set) {
        Ok(b) => b,
        Err(f) => {
            return ModelOutcome::Failed { unreachable: matches!(f, Failure::Unreachable(_)), reason: f.to_string() }
        }
    };
    let texts: Vec<String> = set.iter().map(|f| f.text().to_owned()).collect();
    let mut studies: BTreeMap<Level, LevelStudy> = BTreeMap::new();
    for level in [Level::Turn, Level::Dialog] {
        let subset: Vec<AnnotatedExample> = examples.iter().filter(|e| e.dialog().level() == level).cloned().collect();
        if subset.is_empty() {
            continue;
        }
        let config = MetricConfig::new(set.clone(), ScoreMode::Conditional, level);
        let scored = score_corpus(&*backend, cache, &subset, &config);
        if let Some(first) = scored.failures.first() {
            return ModelOutcome::Failed {
                unreachable: scored.rows.is_empty() && scored.failures.iter().all(|f| is_transport(&f.error)),
                reason: format!("{} example(s) failed, first: {}", scored.failures.len(), first.error),
            };
        }
        studies.insert(level, LevelStudy::from_scores(scored.rows.iter().map(|r| (&r.score, r.mean_rating))));
    }
    match rank_followups(&texts, studies.get(&Level::Turn), studies.get(&Level::Dialog)) {
        Ok(table) => {
            let summary = model_comparison(&BTreeMap::from([(endpoint.to_owned(), table)]))[endpoint];
            ModelOutcome::Ok { backend_id: backend.backend_id().to_owned(), summary }
        }
        Err(e) => ModelOutcome::Failed { reason: e.to_string(), unreachable: false },
    }
}

#[allow(clippy::too_many_arguments)]
pub fn compare_models(
    endpoints: &[String],
    corpus: &Path,
    followups: &str,
    cache_dir: Option<&Path>,
    parallelism: usize,
    with_reported: bool,
    output: Option<&Path>,
    format: Option<&str>,
) -> Result<(), Failure> {
    let format = format.map_or(Ok(OutputFormat::MarkdownTable), str::parse).map_err(|e: String| anyhow!(e))?;
    if parallelism == 0 {
        return Err(Failure::Input(anyhow!("parallelism must be at least 1")));
    }
    let set = load_followup_set(followups)?;
    let examples: Vec<AnnotatedExample> = load_corpus(corpus)?.iter().filter_map(CorpusRecord::annotated).collect();
    if examples.is_empty() {
        return Err(Failure::Input(anyhow!("corpus has no rated examples")));
    }
    let cache = open_cache(cache_dir)?;
    let outcomes: Vec<(String, ModelOutcome)> =
        endpoints.iter().map(|e| (e.clone(), study_model(e, &examples, &set, &cache, parallelism))).collect();

    let mut buf = Vec::new();
    match format {
        OutputFormat::MarkdownTable => {
            buf.extend_from_slice(b"| Model | Backend | Turn / Dialog (%) |\n|---|---|---|\n");
            for (endpoint, outcome) in &outcomes {
                let line = match outcome {
                    ModelOutcome::Ok { backend_id, summary } => format!(
                        "| {endpoint} | {backend_id} | {} |\n",
                        percent_pair(summary.turn_mean_abs, summary.dialog_mean_abs)
                    ),
                    ModelOutcome::Failed { reason, .. } => format!("| {endpoint} | FAILED: {reason} | - / - |\n"),
                };
                buf.extend_from_slice(line.as_bytes());
            }
            if with_reported {
                for (name, t, d) in reported::MODEL_COMPARISON {
                    buf.extend_from_slice(
                        format!("| {name} {} | - | {t:.1} / {d:.1} |\n", reported::PROVENANCE).as_bytes(),
                    );
                }
            }
        }
        OutputFormat::Csv | OutputFormat::JsonLines => {
            let mut rows: Vec<serde_json::Value> = outcomes
                .iter()
                .map(|(endpoint, outcome)| match outcome {
                    ModelOutcome::Ok { backend_id, summary } => serde_json::json!({
                        "model": endpoint, "backend_id": backend_id, "status": "ok",
                        "turn_mean_abs": summary.turn_mean_abs, "dialog_mean_abs": summary.dialog_mean_abs,
                    }),
                    ModelOutcome::Failed { reason, .. } => serde_json::json!({
                        "model": endpoint, "backend_id": null, "status": format!("failed: {reason}"),
                        "turn_mean_abs": null, "dialog_mean_abs": null,
                    }),
                })
                .collect();
            if with_reported {
                rows.extend(reported::MODEL_COMPARISON.iter().map(|(name, t, d)| {
                    serde_json::json!({
                        "model": name, "backend_id": null, "status": reported::PROVENANCE,
                        "turn_mean_abs": t / 100.0, "dialog_mean_abs": d / 100.0,
                    })
                }));
            }
            if format == OutputFormat::JsonLines {
                for row in rows {
                    serde_json::to_writer(&mut buf, &row).map_err(|e| anyhow!(e))?;
                    buf.push(b'\n');
                }
            } else {
                let mut w = csv::Writer::from_writer(&mut buf);
                w.write_record(["model", "backend_id", "status", "turn_mean_abs", "dialog_mean_abs"])
                    .map_err(|e| anyhow!(e))?;
                for row in rows {
                    let cell = |k: &str| match &row[k] {
                        serde_json::Value::Null => String::new(),
                        serde_json::Value::String(s) => s.clone(),
                        v => v.to_string(),
                    };
                    w.write_record(["model", "backend_id", "status", "turn_mean_abs", "dialog_mean_abs"].map(cell))
                        .map_err(|e| anyhow!(e))?;
                }
                w.flush().map_err(|e| anyhow!(e))?;
            }
        }
    }

    let failed: Vec<&(String, ModelOutcome)> =
        outcomes.iter().filter(|(_, o)| matches!(o, ModelOutcome::Failed { .. })).collect();
    let all_unreachable = failed.len() == outcomes.len()
        && failed.iter().all(|(_, o)| matches!(o, ModelOutcome::Failed { unreachable: true, .. }));
    if all_unreachable {
        return Err(Failure::Unreachable(anyhow!("no endpoint could be reached")));
    }
    emit(output, &buf)?;
    for (endpoint, o) in &failed {
        if let ModelOutcome::Failed { reason, .. } = o {
            eprintln!("failed: {endpoint}: {reason}");
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Partial(format!("{} of {} model(s) failed", failed.len(), outcomes.len())))
    }
}

pub fn dump_followups(catalog: bool, output: Option<&Path>) -> Result<(), Failure> {
    let set = if catalog { data::load_followup_catalog() } else { full_core::metric::default_followup_set() };
    let mut json = serde_json::to_vec_pretty(&set).map_err(|e| anyhow!(e))?;
    json.push(b'\n');
    emit(output, &json)?;
    Ok(())
}

pub fn convert_fed(input: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let ingest =
        data::parse_fed_dataset(BufReader::new(file)).with_context(|| format!("converting {}", input.display()))?;
    let records: Vec<CorpusRecord> = ingest
        .examples
        .iter()
        .map(|e| CorpusRecord { dialog: e.dialog().clone(), ratings: Some(e.ratings().to_vec()) })
        .collect();
    let mut buf = Vec::new();
    write_corpus(&mut buf, &records).map_err(|e| anyhow!(e))?;
    emit(output, &buf)?;
    eprintln!(
        "turn-level: {}\ndialog-level: {}\nexcluded: {}",
        ingest.turn_level, ingest.dialog_level, ingest.excluded
    );
    Ok(())
}
