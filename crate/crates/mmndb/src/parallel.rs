//! Order-preserving fan-out over scoped worker threads.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use mmndb_core::corpus::MultimodalDatabase;
use mmndb_core::query::Query;
use mmndb_core::reasoner::{IntermediateAnswer, Reasoner};

/// Applies `f` to every item on up to `parallelism` threads and returns the
/// results in input order. `parallelism` of 0 or 1 runs inline.
pub fn par_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new(items.iter().map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Asks `backend` about every listed document. Unknown ids get a failed answer.
pub fn reason_all<'a, I>(
    backend: &dyn Reasoner,
    db: &MultimodalDatabase,
    query: &Query,
    doc_ids: I,
    parallelism: usize,
) -> BTreeMap<String, IntermediateAnswer>
where
    I: IntoIterator<Item = &'a String>,
{
    let ids: Vec<&String> = doc_ids.into_iter().collect();
    let answers = par_map(&ids, parallelism, |id| match db.get(id) {
        Some(doc) => backend.reason(query, doc),
        None => IntermediateAnswer::failed(id.as_str(), "unknown document"),
    });
    ids.into_iter().cloned().zip(answers).collect()
}
