"""Directory store: layout, round trips, revisions, locks, gates."""

import json
import threading

import pytest

from epitrace.graph import EpistemicGraph, WarningLedger
from epitrace.markers import MarkerAnnotation, NodeMarks
from epitrace.motifs import MotifHit
from epitrace.store import (
    FileStore,
    IncompleteSubmission,
    NotFound,
    RevisionConflict,
)
from epitrace.traces import render_trace

from helpers import make_trace, msg, node, edge


def stored_trace(trace_id="t1", **kw):
    return make_trace(
        [
            msg(0, "user", "Fix the bug.", is_task_description=True),
            msg(1, "assistant", "Plan: read the file."),
            msg(2, "observation", "file contents"),
            msg(3, "assistant", "Submitting."),
        ],
        trace_id=trace_id,
        **kw,
    )


def small_graph(trace_id="t1"):
    n1 = node("N1", "T", "read the file", (1, "read the file"))
    n2 = node("N2", "E", "file contents", (2, "file contents"))
    graph = EpistemicGraph(trace_id=trace_id, nodes=(n1, n2),
                           edges=(edge("N1", "N2", "observes", (2, "file contents")),))
    ledger = WarningLedger()
    ledger.append("other_structural", "N2", "auto-added evidence node")
    return graph, ledger


def draft(trace_id="t1", annotator="ann-1", submitted=False, nodes=None):
    return MarkerAnnotation(
        trace_id=trace_id,
        annotator_id=annotator,
        submitted=submitted,
        nodes=nodes
        if nodes is not None
        else {1: NodeMarks(marker_ids=("planning_statement",))},
    )


@pytest.fixture
def store(tmp_path):
    return FileStore(tmp_path / "store")


def test_store_creates_documented_layout(tmp_path):
    root = tmp_path / "store"
    FileStore(root)
    assert (root / "traces").is_dir()
    assert (root / "graphs").is_dir()
    assert (root / "motifs").is_dir()
    assert (root / "annotations").is_dir()
    assert json.loads((root / "index.json").read_text()) == {"traces": {}}


def test_trace_round_trip_and_listing(store):
    t1 = stored_trace("t1", model="m1", scope=1)
    t2 = stored_trace("t2", model="m2", scope=2)
    store.put_trace(t1)
    store.put_trace(t2)
    assert render_trace(store.get_trace("t1")) == render_trace(t1)
    rows = store.list_traces()
    assert [r["trace_id"] for r in rows] == ["t1", "t2"]
    assert rows[0]["model"] == "m1"
    assert rows[0]["n_messages"] == 4
    # string-normalized filters accept query-style values
    assert [r["trace_id"] for r in store.list_traces(scope="2")] == ["t2"]
    assert [r["trace_id"] for r in store.list_traces(model="m1")] == ["t1"]
    with pytest.raises(ValueError):
        store.list_traces(flavor="spicy")
    with pytest.raises(NotFound):
        store.get_trace("missing")


def test_load_corpus_contains_all_traces(store):
    store.put_trace(stored_trace("t1"))
    store.put_trace(stored_trace("t2"))
    corpus = store.load_corpus()
    assert {t.trace_id for t in corpus} == {"t1", "t2"}


def test_graph_round_trip_with_warning_sidecar(store):
    store.put_trace(stored_trace())
    graph, ledger = small_graph()
    store.put_graph(graph, ledger)
    loaded_graph, loaded_ledger = store.get_graph("t1")
    assert loaded_graph == graph
    assert loaded_ledger == ledger
    with pytest.raises(NotFound):
        store.get_graph("missing")
    with pytest.raises(NotFound):
        store.put_graph(small_graph("missing")[0], WarningLedger())


def test_motif_round_trip(store):
    store.put_trace(stored_trace())
    hits = [MotifHit("evidence_led_hypothesis_generation", (("E", "N2"), ("H", "N1")))]
    store.put_motifs("t1", hits)
    assert store.get_motifs("t1") == hits
    assert store.motif_results() == {"t1": hits}
    with pytest.raises(NotFound):
        store.get_motifs("missing")


def test_annotation_revisions_are_append_only_and_last_write_wins(store):
    store.put_trace(stored_trace())
    assert store.put_annotation(draft()) == 1
    second = draft(nodes={3: NodeMarks(marker_ids=("correct_submission",))})
    assert store.put_annotation(second) == 2
    assert store.list_revisions("t1", "ann-1") == [1, 2]
    latest, revision = store.get_annotation("t1", "ann-1")
    assert revision == 2
    assert latest == second
    first, _ = store.get_annotation("t1", "ann-1", revision=1)
    assert first == draft()


def test_annotation_bytes_are_stable_across_reads(store):
    store.put_trace(stored_trace())
    store.put_annotation(draft())
    raw1 = store.annotation_bytes("t1", "ann-1")
    raw2 = store.annotation_bytes("t1", "ann-1")
    assert raw1 == raw2
    doc = json.loads(raw1)
    assert doc["revision"] == 1
    assert doc["nodes"]["1"]["marker_ids"] == ["planning_statement"]
    with pytest.raises(NotFound):
        store.annotation_bytes("t1", "nobody")
    with pytest.raises(NotFound):
        store.annotation_bytes("t1", "ann-1", revision=9)


def test_annotation_requires_stored_trace_and_known_markers(store):
    with pytest.raises(NotFound):
        store.put_annotation(draft(trace_id="missing"))
    store.put_trace(stored_trace())
    bad = draft(nodes={1: NodeMarks(marker_ids=("made_up",))})
    with pytest.raises(ValueError):
        store.put_annotation(bad)


def test_incomplete_submission_is_rejected(store):
    store.put_trace(stored_trace())
    with pytest.raises(IncompleteSubmission):
        store.put_annotation(draft(submitted=True))
    # the draft itself is fine
    store.put_annotation(draft())
    with pytest.raises(IncompleteSubmission):
        store.submit_annotation("t1", "ann-1")
    # completing the draft unlocks submission
    complete = draft(
        nodes={
            1: NodeMarks(marker_ids=("planning_statement",)),
            3: NodeMarks(marker_ids=("correct_submission",)),
        }
    )
    store.put_annotation(complete)
    revision = store.submit_annotation("t1", "ann-1")
    assert revision == 3
    submitted, _ = store.get_annotation("t1", "ann-1")
    assert submitted.submitted
    assert submitted.nodes == complete.nodes


def test_submit_without_draft_is_not_found(store):
    store.put_trace(stored_trace())
    with pytest.raises(NotFound):
        store.submit_annotation("t1", "ann-1")


def test_expected_revision_guards_lost_updates(store):
    store.put_trace(stored_trace())
    store.put_annotation(draft())
    with pytest.raises(RevisionConflict):
        store.put_annotation(draft(), expected_revision=0)
    assert store.put_annotation(draft(), expected_revision=1) == 2


def test_concurrent_writers_get_distinct_revisions(store):
    store.put_trace(stored_trace())
    barrier = threading.Barrier(8)
    results = []

    def write():
        barrier.wait()
        results.append(store.put_annotation(draft()))

    threads = [threading.Thread(target=write) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(results) == list(range(1, 9))
    assert store.list_revisions("t1", "ann-1") == list(range(1, 9))


def test_annotations_lists_latest_of_every_pair(store):
    store.put_trace(stored_trace("t1"))
    store.put_trace(stored_trace("t2"))
    store.put_annotation(draft("t1", "ann-1"))
    store.put_annotation(draft("t1", "ann-2"))
    newer = draft("t2", "ann-1", nodes={3: NodeMarks(marker_ids=("give_up",))})
    store.put_annotation(draft("t2", "ann-1"))
    store.put_annotation(newer)
    annotations = store.annotations()
    assert len(annotations) == 3
    by_key = {(a.trace_id, a.annotator_id): a for a in annotations}
    assert by_key[("t2", "ann-1")] == newer


def test_identifiers_with_path_hostile_characters(store):
    trace = stored_trace("runs/2026-08: a#b")
    store.put_trace(trace)
    assert store.get_trace("runs/2026-08: a#b").trace_id == trace.trace_id
    store.put_annotation(draft("runs/2026-08: a#b", annotator="me@lab/1"))
    annotation, _ = store.get_annotation("runs/2026-08: a#b", "me@lab/1")
    assert annotation.annotator_id == "me@lab/1"
    assert store.annotations()[0].trace_id == trace.trace_id
