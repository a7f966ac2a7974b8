use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stylevc::evaluation::{aggregate_preferences, PreferenceSummary, PreferenceVote};

use crate::{
    Ack, Choice, CreatedTest, NextTrial, Progress, Response, ResponseSubmission, Result, ServiceError, TestDefinition,
    TestInfo, TestKind, Trial, TrialSummary,
};

const DEFINITION: &str = "definition.json";
const SESSIONS: &str = "sessions.jsonl";
const RESPONSES: &str = "responses.jsonl";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum SessionEvent {
    Join {
        listener_id: String,
        order: Vec<String>,
        swapped: Vec<String>,
    },
    Serve {
        listener_id: String,
        trial_id: String,
    },
}

struct Session {
    /// Trial indices in presentation order.
    order: Vec<usize>,
    /// Per trial index: system B is presented in slot A.
    swapped: Vec<bool>,
    served: usize,
    answered: usize,
}

struct TestState {
    def: TestDefinition,
    id: String,
    dir: PathBuf,
    index: BTreeMap<String, usize>,
    sessions: BTreeMap<String, Session>,
    responses: Vec<Response>,
    answered: HashSet<(String, String)>,
}

struct State {
    rng: ChaCha8Rng,
    tests: BTreeMap<String, TestState>,
    audio: BTreeMap<String, PathBuf>,
}

/// Test store rooted at one directory. All operations take one lock, so
/// every read sees a consistent snapshot and every append is atomic with
/// respect to other requests.
pub struct ListeningService {
    root: PathBuf,
    state: Mutex<State>,
}

fn storage(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Storage(format!("{}: {e}", path.display()))
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_string(value).map_err(|e| storage(path, e))?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| storage(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| storage(path, e))?;
    f.flush().map_err(|e| storage(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| storage(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| storage(path, e)))
        .collect()
}

fn valid_id(s: &str) -> bool {
    !s.is_empty() && s.len() <= 128 && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !s.starts_with('.')
}

fn now_ms() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
        .to_string()
}

fn validate(def: &TestDefinition) -> Result<()> {
    let bad = |m: String| Err(ServiceError::Validation(m));
    if def.trials.is_empty() {
        return bad("a test needs at least one trial".into());
    }
    let mut seen = HashSet::new();
    for t in &def.trials {
        if t.trial_id.trim().is_empty() {
            return bad("trial ids must be non-empty".into());
        }
        if !seen.insert(t.trial_id.as_str()) {
            return bad(format!("duplicate trial id {}", t.trial_id));
        }
        if t.system_a == t.system_b {
            return bad(format!("trial {} compares system {} with itself", t.trial_id, t.system_a));
        }
        match (def.kind, &t.reference_x) {
            (TestKind::ABX, None) => return bad(format!("ABX trial {} has no reference_x", t.trial_id)),
            (TestKind::AB, Some(_)) => return bad(format!("AB trial {} must not carry reference_x", t.trial_id)),
            _ => {}
        }
        for audio in [Some(&t.stimulus_a), Some(&t.stimulus_b), t.reference_x.as_ref()].into_iter().flatten() {
            match def.audio.get(audio) {
                None => return bad(format!("trial {} references unregistered audio {audio}", t.trial_id)),
                Some(p) if !p.is_file() => {
                    return bad(format!("audio {audio}: file {} does not exist", p.display()))
                }
                Some(_) => {}
            }
        }
    }
    if let Some(id) = def.audio.keys().find(|k| !valid_id(k)) {
        return bad(format!("invalid audio id {id:?}"));
    }
    Ok(())
}

impl TestState {
    fn new(def: TestDefinition, id: String, dir: PathBuf) -> Self {
        let index = def.trials.iter().enumerate().map(|(i, t)| (t.trial_id.clone(), i)).collect();
        Self {
            def,
            id,
            dir,
            index,
            sessions: BTreeMap::new(),
            responses: Vec::new(),
            answered: HashSet::new(),
        }
    }

    fn apply(&mut self, ev: SessionEvent) -> Result<()> {
        let corrupt = |m: &str| ServiceError::Storage(format!("{}: {m}", self.dir.join(SESSIONS).display()));
        match ev {
            SessionEvent::Join {
                listener_id,
                order,
                swapped,
            } => {
                let order = order
                    .iter()
                    .map(|t| self.index.get(t).copied())
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| corrupt("unknown trial in join"))?;
                let mut sw = vec![false; self.def.trials.len()];
                for t in &swapped {
                    sw[*self.index.get(t).ok_or_else(|| corrupt("unknown trial in join"))?] = true;
                }
                self.sessions.insert(
                    listener_id,
                    Session {
                        order,
                        swapped: sw,
                        served: 0,
                        answered: 0,
                    },
                );
            }
            SessionEvent::Serve { listener_id, .. } => {
                let s = self
                    .sessions
                    .get_mut(&listener_id)
                    .ok_or_else(|| corrupt("serve before join"))?;
                s.served += 1;
            }
        }
        Ok(())
    }

    fn record(&mut self, r: Response) {
        if let Some(s) = self.sessions.get_mut(&r.listener_id) {
            s.answered += 1;
        }
        self.answered.insert((r.trial_id.clone(), r.listener_id.clone()));
        self.responses.push(r);
    }

    fn progress(&self, s: &Session) -> Progress {
        Progress {
            answered: s.answered,
            served: s.served,
            total: s.order.len(),
        }
    }

    fn votes(&self) -> Vec<PreferenceVote> {
        self.responses
            .iter()
            .map(|r| {
                let i = self.index[&r.trial_id];
                let t = &self.def.trials[i];
                let swapped = self.sessions[&r.listener_id].swapped[i];
                let (slot_a, slot_b) = if swapped {
                    (&t.system_b, &t.system_a)
                } else {
                    (&t.system_a, &t.system_b)
                };
                PreferenceVote {
                    test_id: self.id.clone(),
                    systems: [t.system_a.clone(), t.system_b.clone()],
                    chosen: match r.choice {
                        Choice::A => Some(slot_a.clone()),
                        Choice::B => Some(slot_b.clone()),
                        Choice::NP => None,
                    },
                }
            })
            .collect()
    }
}

impl ListeningService {
    /// Opens (or creates) a store and replays its logs. `seed` drives trial
    /// order and slot assignment for listeners who join from now on.
    pub fn open(root: impl Into<PathBuf>, seed: u64) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| storage(&root, e))?;
        let mut tests = BTreeMap::new();
        let mut audio = BTreeMap::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
            .map_err(|e| storage(&root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(DEFINITION).is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let path = dir.join(DEFINITION);
            let text = fs::read_to_string(&path).map_err(|e| storage(&path, e))?;
            let def: TestDefinition = serde_json::from_str(&text).map_err(|e| storage(&path, e))?;
            let id = def.test_id.clone().ok_or_else(|| storage(&path, "missing test_id"))?;
            for (k, v) in &def.audio {
                audio.insert(k.clone(), v.clone());
            }
            let mut st = TestState::new(def, id.clone(), dir.clone());
            for ev in read_lines::<SessionEvent>(&dir.join(SESSIONS))? {
                st.apply(ev)?;
            }
            for r in read_lines::<Response>(&dir.join(RESPONSES))? {
                st.record(r);
            }
            tests.insert(id, st);
        }
        Ok(Self {
            root,
            state: Mutex::new(State {
                rng: ChaCha8Rng::seed_from_u64(seed),
                tests,
                audio,
            }),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn create_test(&self, mut def: TestDefinition) -> Result<CreatedTest> {
        validate(&def)?;
        let mut st = self.lock();
        for (k, v) in &def.audio {
            if let Some(existing) = st.audio.get(k) {
                if existing != v {
                    return Err(ServiceError::Validation(format!(
                        "audio id {k} is already registered to {}",
                        existing.display()
                    )));
                }
            }
        }
        let id = match def.test_id.take() {
            Some(id) if !valid_id(&id) => {
                return Err(ServiceError::Validation(format!("invalid test id {id:?}")));
            }
            Some(id) if st.tests.contains_key(&id) => {
                return Err(ServiceError::Conflict(format!("test {id} already exists")));
            }
            Some(id) => id,
            None => (1..)
                .map(|n| format!("test-{n:04}"))
                .find(|c| !st.tests.contains_key(c))
                .expect("unbounded range"),
        };
        def.test_id = Some(id.clone());
        let dir = self.root.join(&id);
        fs::create_dir_all(&dir).map_err(|e| storage(&dir, e))?;
        let path = dir.join(DEFINITION);
        let text = serde_json::to_string_pretty(&def).map_err(|e| storage(&path, e))?;
        fs::write(&path, text).map_err(|e| storage(&path, e))?;
        for (k, v) in &def.audio {
            st.audio.insert(k.clone(), v.clone());
        }
        let trials = def.trials.len();
        st.tests.insert(id.clone(), TestState::new(def, id.clone(), dir));
        tracing::info!(test = %id, trials, "test created");
        Ok(CreatedTest { test_id: id, trials })
    }

    pub fn test_ids(&self) -> Vec<String> {
        self.lock().tests.keys().cloned().collect()
    }

    pub fn test_info(&self, test_id: &str) -> Result<TestInfo> {
        let st = self.lock();
        let t = st
            .tests
            .get(test_id)
            .ok_or_else(|| ServiceError::NotFound(format!("test {test_id}")))?;
        Ok(TestInfo {
            test_id: t.id.clone(),
            kind: t.def.kind,
            trial_count: t.def.trials.len(),
            trials: t
                .def
                .trials
                .iter()
                .map(|x| TrialSummary {
                    trial_id: x.trial_id.clone(),
                    prompt: x.prompt.clone(),
                })
                .collect(),
        })
    }

    /// Serves the listener's next unseen trial, registering the listener on
    /// first contact. Returns a done marker once every trial was served.
    pub fn next_trial(&self, test_id: &str, listener_id: &str) -> Result<NextTrial> {
        if !valid_id(listener_id) {
            return Err(ServiceError::Validation(format!("invalid listener id {listener_id:?}")));
        }
        let mut guard = self.lock();
        let State { rng, tests, .. } = &mut *guard;
        let t = tests
            .get_mut(test_id)
            .ok_or_else(|| ServiceError::NotFound(format!("test {test_id}")))?;
        if !t.sessions.contains_key(listener_id) {
            let n = t.def.trials.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let swapped: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            let ev = SessionEvent::Join {
                listener_id: listener_id.to_string(),
                order: order.iter().map(|&i| t.def.trials[i].trial_id.clone()).collect(),
                swapped: (0..n)
                    .filter(|&i| swapped[i])
                    .map(|i| t.def.trials[i].trial_id.clone())
                    .collect(),
            };
            append_line(&t.dir.join(SESSIONS), &ev)?;
            t.apply(ev)?;
        }
        let s = &t.sessions[listener_id];
        if s.served == s.order.len() {
            return Ok(NextTrial {
                done: true,
                trial: None,
                progress: t.progress(s),
            });
        }
        let i = s.order[s.served];
        let def = &t.def.trials[i];
        let (a, b) = if s.swapped[i] {
            (&def.stimulus_b, &def.stimulus_a)
        } else {
            (&def.stimulus_a, &def.stimulus_b)
        };
        let trial = Trial {
            trial_id: def.trial_id.clone(),
            kind: t.def.kind,
            stimulus_a: a.clone(),
            stimulus_b: b.clone(),
            reference_x: def.reference_x.clone(),
            prompt: def.prompt.clone(),
        };
        let ev = SessionEvent::Serve {
            listener_id: listener_id.to_string(),
            trial_id: def.trial_id.clone(),
        };
        append_line(&t.dir.join(SESSIONS), &ev)?;
        t.apply(ev)?;
        let progress = t.progress(&t.sessions[listener_id]);
        Ok(NextTrial {
            done: false,
            trial: Some(trial),
            progress,
        })
    }

    /// Records one answer. Each (trial, listener) pair is accepted once.
    pub fn submit_response(&self, test_id: &str, sub: ResponseSubmission) -> Result<Ack> {
        let choice = Choice::parse(&sub.choice)?;
        if sub.replay_count < 1 {
            return Err(ServiceError::Validation("replay_count must be at least 1".into()));
        }
        let mut guard = self.lock();
        let t = guard
            .tests
            .get_mut(test_id)
            .ok_or_else(|| ServiceError::NotFound(format!("test {test_id}")))?;
        let s = t
            .sessions
            .get(&sub.listener_id)
            .ok_or_else(|| ServiceError::NotFound(format!("listener {} in test {test_id}", sub.listener_id)))?;
        let i = *t
            .index
            .get(&sub.trial_id)
            .ok_or_else(|| ServiceError::NotFound(format!("trial {} in test {test_id}", sub.trial_id)))?;
        if !s.order[..s.served].contains(&i) {
            return Err(ServiceError::Protocol(format!(
                "trial {} has not been served to listener {}",
                sub.trial_id, sub.listener_id
            )));
        }
        if t.answered.contains(&(sub.trial_id.clone(), sub.listener_id.clone())) {
            return Err(ServiceError::Conflict(format!(
                "listener {} already answered trial {}",
                sub.listener_id, sub.trial_id
            )));
        }
        let r = Response {
            trial_id: sub.trial_id,
            listener_id: sub.listener_id.clone(),
            choice,
            replay_count: sub.replay_count,
            timestamp: sub.timestamp.unwrap_or_else(now_ms),
        };
        append_line(&t.dir.join(RESPONSES), &r)?;
        t.record(r);
        Ok(Ack {
            accepted: true,
            progress: t.progress(&t.sessions[&sub.listener_id]),
        })
    }

    pub fn responses(&self, test_id: &str) -> Result<Vec<Response>> {
        let st = self.lock();
        let t = st
            .tests
            .get(test_id)
            .ok_or_else(|| ServiceError::NotFound(format!("test {test_id}")))?;
        Ok(t.responses.clone())
    }

    /// Presentation order and the trials whose slots were swapped for one
    /// listener.
    pub fn session_log(&self, test_id: &str, listener_id: &str) -> Result<(Vec<String>, Vec<String>)> {
        let st = self.lock();
        let t = st
            .tests
            .get(test_id)
            .ok_or_else(|| ServiceError::NotFound(format!("test {test_id}")))?;
        let s = t
            .sessions
            .get(listener_id)
            .ok_or_else(|| ServiceError::NotFound(format!("listener {listener_id}")))?;
        let id = |i: usize| t.def.trials[i].trial_id.clone();
        Ok((
            s.order.iter().map(|&i| id(i)).collect(),
            (0..s.swapped.len()).filter(|&i| s.swapped[i]).map(id).collect(),
        ))
    }

    /// Responses mapped from slots back to systems.
    pub fn votes(&self, test_id: &str) -> Result<Vec<PreferenceVote>> {
        let st = self.lock();
        let t = st
            .tests
            .get(test_id)
            .ok_or_else(|| ServiceError::NotFound(format!("test {test_id}")))?;
        Ok(t.votes())
    }

    pub fn test_results(&self, test_id: &str) -> Result<PreferenceSummary> {
        let votes = self.votes(test_id)?;
        if votes.is_empty() {
            return Err(ServiceError::EmptyResult(test_id.to_string()));
        }
        aggregate_preferences(&votes).map_err(|e| ServiceError::Validation(e.to_string()))
    }

    pub fn audio_bytes(&self, audio_id: &str) -> Result<Vec<u8>> {
        let path = self
            .lock()
            .audio
            .get(audio_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("audio {audio_id}")))?;
        fs::read(&path).map_err(|e| storage(&path, e))
    }
}
