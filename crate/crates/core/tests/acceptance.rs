//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the test harness so the lines always print.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use storybot_core::clue::{cosine_similarity, ClueCorpus, ClueEntry, ClueFinder, EmbeddingVector, TrigramEmbedder};
use storybot_core::dialogue::{
    count_rounds, DialogueError, DialoguePipeline, DialogueSession, DialogueTurn, FilterList, LanguageModel,
    PipelineSettings, PromptBundle,
};
use storybot_core::events::InboundEvent;
use storybot_core::log::{read_log, Durability, EventLog, LogEntry, LogHeader, LogRecord};
use storybot_core::metrics::{compute_metrics, EngagementMetrics};
use storybot_core::narrative::{validate_package, Character, Choice, StoryNode, StoryPackage, StoryState};
use storybot_core::scheduler::{CloseCause, ReleaseEvent};
use storybot_core::simulation::{replay_simulation, run_simulation, run_simulation_observed};
use storybot_core::voting::{DayState, Tally};
use storybot_core::{Timestamp, UserId};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("end-to-end simulation", end_to_end),
        ("memory window", memory_window),
        ("pipeline order", pipeline_order),
        ("output hygiene", output_hygiene),
        ("vote tallying", vote_tallying),
        ("clue finder", clue_finder),
        ("metrics replication", metrics_replication),
        ("replay determinism", replay_determinism),
        ("package validation", package_validation),
    ];
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let (status, detail) = match outcome {
            Ok(detail) => ("PASS", detail),
            Err(detail) => {
                failed += 1;
                ("FAIL", detail)
            }
        };
        writeln!(out, "acceptance {status} {name}: {detail}").unwrap();
    }
    writeln!(
        out,
        "acceptance summary: {} passed, {failed} failed",
        criteria.len() - failed
    )
    .unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn catherine() -> Character {
    Character::new("Catherine", "stubborn hacker", "Skuld City", vec![]).unwrap()
}

fn story() -> StoryState {
    StoryState {
        released: vec!["c0".into()],
        current: "c0".into(),
        live_story_prompt: "[Day 0]\nThe chip is out.\n".into(),
    }
}

struct Recording {
    bundles: Mutex<Vec<PromptBundle>>,
    calls: AtomicUsize,
    reply: Box<dyn Fn(usize) -> String + Send + Sync>,
}

impl Recording {
    fn new(reply: impl Fn(usize) -> String + Send + Sync + 'static) -> Arc<Self> {
        Arc::new(Recording {
            bundles: Mutex::new(Vec::new()),
            calls: AtomicUsize::new(0),
            reply: Box::new(reply),
        })
    }
}

impl LanguageModel for Recording {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, DialogueError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.bundles.lock().unwrap().push(prompt.clone());
        Ok((self.reply)(n))
    }
}

// 50 members, 1 warm-up + 3 decision days, scripted provider, 2 s days.
fn end_to_end() -> Outcome {
    let pkg = common::package("catherine.story.json");
    let script = common::script("catherine.sim.json");
    let members = script.agents.len() as u32 + script.crowd.as_ref().map_or(0, |c| c.size);
    ensure(members == 50, || format!("script has {members} agents"))?;
    let started = Instant::now();
    let (engine, report) = run_simulation(
        pkg.clone(),
        &script,
        7,
        EventLog::in_memory(LogHeader::new("Catherine")),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let releases = common::release_count(engine.log().entries());
    let oracle = common::oracle_path(&pkg, engine.log().entries());
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    ensure(releases == 4, || format!("{releases} story_release events"))?;
    ensure(report.path == oracle, || {
        format!("path {:?} != oracle {oracle:?}", report.path)
    })?;
    let path: Vec<_> = report.path.iter().map(|n| n.as_str()).collect();
    Ok(format!(
        "{releases} releases in {:.0} ms, path {} matches oracle",
        elapsed.as_secs_f64() * 1000.0,
        path.join(" > ")
    ))
}

fn memory_window() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let filter = FilterList::new(["damn"]).unwrap();
    let mut prompts_checked = 0usize;
    for seq in 0..1000 {
        let provider = Recording::new(|n| format!("<r{n:03}>"));
        let pipeline = DialoguePipeline::new(
            PipelineSettings {
                filter: filter.clone(),
                ..PipelineSettings::default()
            },
            None,
            provider.clone(),
        )
        .unwrap();
        let mut session = DialogueSession::new("chat");
        let mut accepted: Vec<(String, String)> = Vec::new();
        for i in 0..rng.random_range(1..=20) {
            let blocked = rng.random_bool(0.2);
            let text = if blocked {
                format!("<m{i:03}> damn")
            } else {
                format!("<m{i:03}>")
            };
            let turn = DialogueTurn::user(format!("u{}", rng.random_range(0..4)), text.clone(), Timestamp(i));
            let before = provider.calls.load(Ordering::SeqCst);
            pipeline
                .handle_message(&mut session, &catherine(), &story(), &turn)
                .map_err(|e| e.to_string())?;
            if blocked {
                continue;
            }
            let bundle = provider.bundles.lock().unwrap().last().cloned().unwrap();
            let rounds = count_rounds(&bundle.history);
            ensure(rounds <= 5, || format!("sequence {seq}: {rounds} rounds in prompt"))?;
            let recent = accepted.len().saturating_sub(5);
            for (k, (user, reply)) in accepted.iter().enumerate() {
                let present = bundle.rendered.contains(user.as_str()) && bundle.rendered.contains(reply.as_str());
                let absent = !bundle.rendered.contains(user.as_str()) && !bundle.rendered.contains(reply.as_str());
                ensure(if k >= recent { present } else { absent }, || {
                    format!(
                        "sequence {seq}: round {k} wrongly {}",
                        if present { "kept" } else { "dropped" }
                    )
                })?;
            }
            accepted.push((text, format!("<r{before:03}>")));
            prompts_checked += 1;
        }
    }
    Ok(format!(
        "1000 sequences, {prompts_checked} prompts, all within 5 most recent rounds"
    ))
}

const FUZZ_WORDS: &[&str] = &[
    "hello",
    "Catherine",
    "damn",
    "Damn!",
    "scrapbook",
    "crap",
    "information",
    "about",
    "Domain",
    "who",
    "is",
    "Scarlet",
    "how",
    "old",
    "are",
    "you",
    "weather",
    "today",
    "idiot",
    "idiots",
    "what",
    "Sunburn",
    "?",
    "the",
];

fn fuzz_sentence(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.15) {
        let keywords = [
            "Give me some information about Domain",
            "who is Scarlet",
            "how old are you",
            "what is Sunburn",
        ];
        return keywords.choose(rng).unwrap().to_string();
    }
    let n = rng.random_range(1..8);
    (0..n)
        .map(|_| *FUZZ_WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn catherine_finder() -> Arc<ClueFinder> {
    let text = std::fs::read_to_string(common::example("catherine.clues.json")).unwrap();
    let corpus = ClueCorpus::from_json(&text, Arc::new(TrigramEmbedder)).unwrap();
    Arc::new(ClueFinder::new(corpus, 0.6).unwrap())
}

fn pipeline_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0D3E);
    let provider = Recording::new(|_| "fine.".into());
    let pipeline = DialoguePipeline::new(
        PipelineSettings {
            filter: FilterList::new(["damn", "crap", "idiot"]).unwrap(),
            ..PipelineSettings::default()
        },
        Some(catherine_finder()),
        provider.clone(),
    )
    .unwrap();
    let (mut blocked, mut clues, mut model) = (0, 0, 0);
    let mut violations = 0;
    for i in 0..10_000u64 {
        let mut session = DialogueSession::new("chat");
        let turn = DialogueTurn::user("u", fuzz_sentence(&mut rng), Timestamp(i));
        let before = provider.calls.load(Ordering::SeqCst);
        let (_, trace) = pipeline
            .handle_message(&mut session, &catherine(), &story(), &turn)
            .map_err(|e| e.to_string())?;
        let called = provider.calls.load(Ordering::SeqCst) > before;
        let short_circuit = trace.inbound_filter.is_blocked() || trace.clue.is_some();
        if short_circuit && (trace.provider_called || called) {
            violations += 1;
        }
        if !short_circuit && !called {
            violations += 1;
        }
        match (trace.inbound_filter.is_blocked(), trace.clue.is_some()) {
            (true, _) => blocked += 1,
            (false, true) => clues += 1,
            _ => model += 1,
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    ensure(blocked > 0 && clues > 0 && model > 0, || {
        format!("fuzz missed a path: {blocked}/{clues}/{model}")
    })?;
    Ok(format!(
        "10000 trials, 0 violations ({blocked} blocked, {clues} clue hits, {model} model calls)"
    ))
}

fn output_hygiene() -> Outcome {
    let keywords = ["damn", "crap", "idiot"];
    let oracle: Vec<Regex> = keywords
        .iter()
        .map(|k| Regex::new(&format!(r"(?i)\b{k}\b")).unwrap())
        .collect();
    let laced = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..10);
        let pieces = [
            "damn",
            "DAMN",
            "Crap!",
            "idiot,",
            "scrapbook",
            "idiots",
            "well",
            "I",
            "won't",
            "(damn)",
            "crappy",
        ];
        (0..n)
            .map(|_| *pieces.choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let replies: Arc<Mutex<ChaCha8Rng>> = Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(0x4A61)));
    let replies_in = replies.clone();
    let provider = Recording::new(move |_| laced(&mut replies_in.lock().unwrap()));
    let clue_corpus = ClueCorpus::build(
        vec![ClueEntry {
            id: "rude".into(),
            keyword: "tell me about the gangs".into(),
            reply_text: "Those damn gangs.".into(),
            image_url: None,
        }],
        Arc::new(TrigramEmbedder),
    )
    .unwrap();
    let pipeline = DialoguePipeline::new(
        PipelineSettings {
            filter: FilterList::new(keywords).unwrap(),
            ..PipelineSettings::default()
        },
        Some(Arc::new(ClueFinder::new(clue_corpus, 0.6).unwrap())),
        provider,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4A62);
    let mut violations = 0;
    let mut apologies = 0;
    for i in 0..10_000u64 {
        let text = if i % 50 == 0 {
            "tell me about the gangs".to_owned()
        } else {
            fuzz_sentence(&mut rng)
        };
        let mut session = DialogueSession::new("chat");
        let turn = DialogueTurn::user("u", text, Timestamp(i));
        let (post, trace) = pipeline
            .handle_message(&mut session, &catherine(), &story(), &turn)
            .map_err(|e| e.to_string())?;
        if oracle.iter().any(|re| re.is_match(&post.text)) {
            violations += 1;
        }
        if trace.outbound_filter.as_ref().is_some_and(|f| f.is_blocked()) {
            apologies += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} posts carried a keyword"))?;
    ensure(apologies > 0, || "no reply was ever blocked; fuzz is too weak".into())?;
    Ok(format!("10000 trials, 0 violations ({apologies} replies replaced)"))
}

fn vote_tallying() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7A11);
    for stream in 0..1000 {
        let users = rng.random_range(1..=500);
        let choices = rng.random_range(1..=5u32);
        let node = StoryNode {
            id: "n".into(),
            day_index: 1,
            body: "?".into(),
            summary: None,
            illustrations: vec![],
            choices: (0..choices)
                .map(|i| Choice::new(i, format!("e{i}"), "c", format!("t{i}")))
                .collect(),
            successor: None,
            terminal: false,
        };
        let mut day = DayState::open(1, &node, Timestamp(0), 10_000).unwrap();
        let mut votes = Vec::new();
        for t in 0..rng.random_range(0..1500u64) {
            let ts = (t * 10_500) / 1500;
            let user = rng.random_range(0..users);
            let choice = rng.random_range(0..choices);
            if day
                .cast_vote(&UserId::new(format!("u{user}")), choice, Timestamp(ts))
                .is_ok()
            {
                votes.push((user, choice));
            } else {
                ensure(ts >= 10_000, || format!("stream {stream}: in-window vote rejected"))?;
            }
        }
        let mut seen = HashSet::new();
        let mut expected = vec![0u64; choices as usize];
        for (user, choice) in votes.iter().rev() {
            if seen.insert(*user) {
                expected[*choice as usize] += 1;
            }
        }
        let tally = day.tally();
        let got: Vec<u64> = (0..choices).map(|c| tally.count(c)).collect();
        ensure(got == expected && tally.voters == seen.len() as u64, || {
            format!("stream {stream}: {got:?} != {expected:?}")
        })?;
    }
    Ok("1000 streams match the last-vote-per-user oracle exactly".into())
}

fn clue_finder() -> Outcome {
    let mut entries_checked = 0;
    let mut corpora = Vec::new();
    for name in ["catherine.clues.json", "david.clues.json"] {
        let text = std::fs::read_to_string(common::example(name)).unwrap();
        let corpus = ClueCorpus::from_json(&text, Arc::new(TrigramEmbedder)).map_err(|e| e.to_string())?;
        for entry in corpus.entries() {
            let hit = corpus.find(&entry.keyword, 0.6).map_err(|e| e.to_string())?;
            ensure(hit.as_ref().is_some_and(|h| h.entry.id == entry.id), || {
                format!("{name}: `{}` does not match itself", entry.keyword)
            })?;
            entries_checked += 1;
        }
        corpora.push(corpus);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xC1E);
    let mut hits = 0;
    for pair in 0..1000 {
        let corpus = &corpora[pair % 2];
        let sentence = fuzz_sentence(&mut rng);
        let a: f64 = rng.random_range(0.0..1.0);
        let b: f64 = rng.random_range(0.0..1.0);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if lo == hi {
            continue;
        }
        let high = corpus.find(&sentence, hi).map_err(|e| e.to_string())?;
        let low = corpus.find(&sentence, lo).map_err(|e| e.to_string())?;
        if let Some(high) = high {
            hits += 1;
            ensure(low.is_some_and(|l| l.entry.id == high.entry.id), || {
                format!("`{sentence}` matches at {hi} but not at {lo}")
            })?;
        }
    }
    ensure(hits > 0, || "no pair matched at the higher threshold".into())?;

    let v = |x: &[f64]| EmbeddingVector::new(x.to_vec()).unwrap();
    let hand = [
        (v(&[1.0, 0.0]), v(&[1.0, 1.0]), std::f64::consts::FRAC_1_SQRT_2),
        (
            v(&[1.0, 2.0, 3.0]),
            v(&[4.0, 5.0, 6.0]),
            32.0 / (14f64.sqrt() * 77f64.sqrt()),
        ),
        (v(&[1.0, 0.0]), v(&[0.0, 3.0]), 0.0),
        (v(&[2.0, -1.0]), v(&[-4.0, 2.0]), -1.0),
    ];
    // Rounded by hand, five decimals.
    #[allow(clippy::approx_constant)]
    let frozen = [0.70711, 0.97463, 0.0, -1.0];
    for ((a, b, exact), frozen) in hand.iter().zip(frozen) {
        let got = cosine_similarity(a, b).map_err(|e| e.to_string())?;
        ensure((got - exact).abs() < 1e-5 && (got - frozen).abs() < 1e-5, || {
            format!("cosine {got} != {exact}")
        })?;
    }
    Ok(format!(
        "{entries_checked} entries self-match at 0.6; 1000 threshold pairs monotone ({hits} hits); cosine within 1e-5"
    ))
}

/// Writes a synthetic log with exact per-user message counts and decision
/// day voter counts, then reads it back from disk.
fn synthetic_log(speakers: u64, active: u64, messages: u64, voters: &[u64]) -> Vec<LogEntry> {
    let inactive = speakers - active;
    let inactive_total: u64 = (0..inactive).map(|i| 1 + i % 10).sum();
    let active_total = messages - inactive_total;
    let mut counts: Vec<u64> = (0..inactive).map(|i| 1 + i % 10).collect();
    counts.extend((0..active).map(|i| active_total / active + u64::from(i < active_total % active)));
    assert!(counts[inactive as usize..].iter().all(|&c| c > 10));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synthetic.log");
    let mut log = EventLog::create(&path, LogHeader::new("synthetic"), Durability::Flush).unwrap();
    let mut ts = 0;
    for (user, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let event = InboundEvent::chat("chat", format!("player-{user}"), "hi", Timestamp(ts));
            log.append(Timestamp(ts), LogRecord::Inbound { event }).unwrap();
        }
        ts += 1;
    }
    for (day, &v) in voters.iter().enumerate() {
        let half = v / 2;
        let release = ReleaseEvent {
            day_index: day as u32,
            closed_node: format!("n{day}").as_str().into(),
            released_node: format!("n{}", day + 1).as_str().into(),
            tally: Tally::from_counts([(0, half), (1, v - half)]),
            decision: v > 0,
            cause: CloseCause::Deadline,
            finished: false,
        };
        let post = storybot_core::events::OutboundPost::system("story".into(), "next");
        log.append(Timestamp(ts), LogRecord::StoryRelease { release, post })
            .unwrap();
        ts += 1;
    }
    drop(log);
    read_log(&path).unwrap().1
}

fn metrics_replication() -> Outcome {
    // Warm-up releases carry no decision and must not dilute the average.
    let david = compute_metrics(
        &synthetic_log(1049, 287, 31278, &[0, 0, 0, 198, 206, 214]),
        Some(103_638),
    );
    let catherine = compute_metrics(&synthetic_log(907, 317, 20767, &[0, 230, 215, 221]), None);
    let check = |m: &EngagementMetrics, speakers, active, pct: f64, voters: f64| {
        m.speakers == speakers
            && m.active_members == active
            && (m.active_ratio * 100.0).round() == pct
            && m.avg_votes_per_day == voters
    };
    ensure(check(&david, 1049, 287, 27.0, 206.0), || format!("david: {david:?}"))?;
    ensure(check(&catherine, 907, 317, 35.0, 222.0), || {
        format!("catherine: {catherine:?}")
    })?;
    ensure((catherine.active_ratio - 0.35).abs() <= 0.005, || {
        format!("catherine ratio {}", catherine.active_ratio)
    })?;
    let share = david.channel_share.unwrap_or(f64::NAN);
    ensure((share - 0.3018).abs() <= 0.0001, || format!("channel share {share}"))?;
    ensure(
        david.total_messages == 31278 && catherine.total_messages == 20767,
        || "message totals drifted".into(),
    )?;
    Ok(format!(
        "active {:.2}% / {:.2}%, share {:.4}%, voters/day {} / {}",
        david.active_ratio * 100.0,
        catherine.active_ratio * 100.0,
        share * 100.0,
        david.avg_votes_per_day,
        catherine.avg_votes_per_day
    ))
}

fn replay_determinism() -> Outcome {
    let pkg = common::package("catherine.story.json");
    let script = common::script("catherine.sim.json");
    let dir = tempfile::tempdir().unwrap();
    let mut checked = 0;
    for seed in [1u64, 2, 3] {
        let path = dir.path().join(format!("seed{seed}.log"));
        let log = EventLog::create(&path, LogHeader::new("Catherine"), Durability::Flush).unwrap();
        let mut live = BTreeMap::new();
        let (engine, _) = run_simulation_observed(pkg.clone(), &script, seed, log, |e| {
            live.insert(e.log().len(), e.snapshot().to_json());
        })
        .map_err(|e| e.to_string())?;
        let (header, entries) = read_log(&path).map_err(|e| e.to_string())?;
        let full = replay_simulation(pkg.clone(), &script, &header, &entries).map_err(|e| e.to_string())?;
        ensure(full.snapshot().to_json() == engine.snapshot().to_json(), || {
            format!("seed {seed}: full replay differs")
        })?;
        for (len, snapshot) in &live {
            let prefix =
                replay_simulation(pkg.clone(), &script, &header, &entries[..*len]).map_err(|e| e.to_string())?;
            ensure(&prefix.snapshot().to_json() == snapshot, || {
                format!("seed {seed}: prefix of {len} entries differs")
            })?;
            checked += 1;
        }
    }
    Ok(format!("3 full logs and {checked} prefixes replay byte-for-byte"))
}

fn package_validation() -> Outcome {
    let cases = [
        ("dangling_target.story.json", "dangling-target"),
        ("duplicate_emoji.story.json", "duplicate-emoji"),
        ("warmup_with_choices.story.json", "warmup-with-choices"),
        ("unreachable_terminal.story.json", "unreachable-terminal"),
    ];
    for (file, code) in cases {
        let text = std::fs::read_to_string(common::fixture(file)).unwrap();
        let pkg = StoryPackage::from_json(&text).map_err(|e| e.to_string())?;
        let codes: Vec<_> = validate_package(&pkg).iter().map(|d| d.rule.code()).collect();
        ensure(codes == [code], || format!("{file}: got {codes:?}"))?;
    }
    Ok("4 fixtures each caught with the expected defect code".into())
}
