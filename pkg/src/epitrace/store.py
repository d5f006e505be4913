"""File-backed store for traces, graphs, motif hits, and annotations.

Layout under the root directory:

    traces/<id>.json            one trace document each
    graphs/<id>.json            epistemic graph for a trace
    graphs/<id>.warnings.json   validation warning ledger for that graph
    motifs/<id>.json            detected motif hits for a trace
    annotations/<trace>/<annotator>/rev-00001.json   append-only revisions
    index.json                  trace metadata for listing

Every write lands via an atomic rename, so readers never observe a partial
file. Annotation writes for the same (trace, annotator) pair serialize
through an in-process lock; last write wins and bumps the revision number.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Iterable, Mapping
from urllib.parse import quote, unquote

from .graph import (
    EpistemicGraph,
    WarningLedger,
    graph_from_doc,
    graph_to_doc,
    ledger_from_docs,
    ledger_to_docs,
)
from .markers import (
    MarkerAnnotation,
    annotation_from_doc,
    annotation_to_doc,
    check_submission_completeness,
    validate_annotation,
)
from .motifs import MOTIF_BY_NAME, MotifHit
from .traces import (
    Trace,
    TraceCorpus,
    corpus_from_traces,
    parse_trace,
    render_trace,
)

ENV_STORE_ROOT = "EPITRACE_STORE"

_INDEX_FILE = "index.json"
_REVISION_WIDTH = 5

TRACE_METADATA_FIELDS = (
    "model",
    "environment",
    "scope",
    "scaffold",
    "task_id",
    "trial",
    "outcome_score",
)


class StoreError(Exception):
    """Base class; carries a stable error code for transport layers."""

    code = "store_error"


class NotFound(StoreError):
    code = "not_found"


class RevisionConflict(StoreError):
    code = "conflict"


class IncompleteSubmission(StoreError):
    code = "incomplete_annotation"


def _dump_bytes(doc: Any) -> bytes:
    return (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _safe(name: str) -> str:
    if not name:
        raise ValueError("identifiers used as file names must be non-empty")
    return quote(name, safe="")


def motif_hits_to_doc(trace_id: str, hits: Iterable[MotifHit]) -> dict:
    return {
        "trace_id": trace_id,
        "hits": [
            {"motif": hit.motif, "bindings": {r: n for r, n in hit.bindings}}
            for hit in hits
        ],
    }


def motif_hits_from_doc(doc: Mapping) -> list[MotifHit]:
    hits = []
    for raw in doc.get("hits", []):
        name = raw["motif"]
        if name not in MOTIF_BY_NAME:
            raise ValueError(f"unknown motif {name!r}")
        hits.append(
            MotifHit(motif=name, bindings=tuple(raw.get("bindings", {}).items()))
        )
    return hits


class FileStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        for sub in ("traces", "graphs", "motifs", "annotations"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._index_lock = threading.Lock()
        self._annotation_locks: dict[tuple[str, str], threading.Lock] = {}
        self._locks_guard = threading.Lock()
        if not (self.root / _INDEX_FILE).exists():
            _atomic_write(self.root / _INDEX_FILE, _dump_bytes({"traces": {}}))

    # --- traces --------------------------------------------------------

    def _trace_path(self, trace_id: str) -> Path:
        return self.root / "traces" / f"{_safe(trace_id)}.json"

    def put_trace(self, trace: Trace) -> None:
        _atomic_write(self._trace_path(trace.trace_id), render_trace(trace).encode("utf-8"))
        meta = {f: getattr(trace, f) for f in TRACE_METADATA_FIELDS}
        meta["n_messages"] = len(trace.messages)
        with self._index_lock:
            index = self._read_index()
            index["traces"][trace.trace_id] = meta
            _atomic_write(self.root / _INDEX_FILE, _dump_bytes(index))

    def get_trace(self, trace_id: str) -> Trace:
        path = self._trace_path(trace_id)
        if not path.exists():
            raise NotFound(f"no trace {trace_id!r}")
        return parse_trace(path.read_text("utf-8"))

    def trace_document(self, trace_id: str) -> dict:
        path = self._trace_path(trace_id)
        if not path.exists():
            raise NotFound(f"no trace {trace_id!r}")
        return json.loads(path.read_text("utf-8"))

    def _read_index(self) -> dict:
        return json.loads((self.root / _INDEX_FILE).read_text("utf-8"))

    def list_traces(self, **filters: Any) -> list[dict]:
        """Trace metadata rows, filtered by string-normalized equality.

        String comparison lets callers pass query-string values for numeric
        fields like scope and trial.
        """
        for key in filters:
            if key not in TRACE_METADATA_FIELDS:
                raise ValueError(f"unknown filter field {key!r}")
        index = self._read_index()
        rows = []
        for trace_id in sorted(index["traces"]):
            meta = index["traces"][trace_id]
            if all(str(meta[k]) == str(v) for k, v in filters.items()):
                rows.append({"trace_id": trace_id, **meta})
        return rows

    def load_corpus(self) -> TraceCorpus:
        index = self._read_index()
        return corpus_from_traces(
            self.get_trace(trace_id) for trace_id in sorted(index["traces"])
        )

    # --- graphs ----------------------------------------------------------

    def put_graph(self, graph: EpistemicGraph, ledger: WarningLedger) -> None:
        if not self._trace_path(graph.trace_id).exists():
            raise NotFound(f"no trace {graph.trace_id!r}")
        base = self.root / "graphs" / _safe(graph.trace_id)
        _atomic_write(base.with_name(base.name + ".json"), _dump_bytes(graph_to_doc(graph)))
        _atomic_write(
            base.with_name(base.name + ".warnings.json"),
            _dump_bytes(ledger_to_docs(ledger)),
        )

    def get_graph(self, trace_id: str) -> tuple[EpistemicGraph, WarningLedger]:
        base = self.root / "graphs" / _safe(trace_id)
        path = base.with_name(base.name + ".json")
        if not path.exists():
            raise NotFound(f"no graph for trace {trace_id!r}")
        graph = graph_from_doc(json.loads(path.read_text("utf-8")))
        warnings_path = base.with_name(base.name + ".warnings.json")
        docs = json.loads(warnings_path.read_text("utf-8")) if warnings_path.exists() else []
        return graph, ledger_from_docs(docs)

    # --- motif hits ------------------------------------------------------

    def put_motifs(self, trace_id: str, hits: Iterable[MotifHit]) -> None:
        if not self._trace_path(trace_id).exists():
            raise NotFound(f"no trace {trace_id!r}")
        path = self.root / "motifs" / f"{_safe(trace_id)}.json"
        _atomic_write(path, _dump_bytes(motif_hits_to_doc(trace_id, hits)))

    def get_motifs(self, trace_id: str) -> list[MotifHit]:
        path = self.root / "motifs" / f"{_safe(trace_id)}.json"
        if not path.exists():
            raise NotFound(f"no motif hits for trace {trace_id!r}")
        return motif_hits_from_doc(json.loads(path.read_text("utf-8")))

    def motif_results(self) -> dict[str, list[MotifHit]]:
        out = {}
        for path in sorted((self.root / "motifs").glob("*.json")):
            trace_id = unquote(path.name[: -len(".json")])
            out[trace_id] = motif_hits_from_doc(json.loads(path.read_text("utf-8")))
        return out

    # --- annotations -----------------------------------------------------

    def _annotation_dir(self, trace_id: str, annotator_id: str) -> Path:
        return self.root / "annotations" / _safe(trace_id) / _safe(annotator_id)

    def _annotation_lock(self, trace_id: str, annotator_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._annotation_locks.setdefault(
                (trace_id, annotator_id), threading.Lock()
            )

    @staticmethod
    def _revision_of(path: Path) -> int:
        return int(path.name[len("rev-") : -len(".json")])

    def _revision_paths(self, trace_id: str, annotator_id: str) -> list[Path]:
        directory = self._annotation_dir(trace_id, annotator_id)
        if not directory.exists():
            return []
        return sorted(directory.glob("rev-*.json"), key=self._revision_of)

    def list_revisions(self, trace_id: str, annotator_id: str) -> list[int]:
        return [self._revision_of(p) for p in self._revision_paths(trace_id, annotator_id)]

    def put_annotation(
        self,
        annotation: MarkerAnnotation,
        *,
        expected_revision: int | None = None,
    ) -> int:
        """Store a new revision; returns its number.

        Submissions must be complete. With expected_revision set, the write
        only lands if that is still the latest revision; otherwise the store
        keeps both histories apart by refusing the write.
        """
        validate_annotation(annotation)
        trace = self.get_trace(annotation.trace_id)
        if annotation.submitted and not check_submission_completeness(annotation, trace):
            raise IncompleteSubmission(
                f"submission for {annotation.trace_id!r} leaves annotatable "
                "messages unmarked"
            )
        with self._annotation_lock(annotation.trace_id, annotation.annotator_id):
            revisions = self.list_revisions(annotation.trace_id, annotation.annotator_id)
            current = revisions[-1] if revisions else 0
            if expected_revision is not None and expected_revision != current:
                raise RevisionConflict(
                    f"expected revision {expected_revision}, store has {current}"
                )
            revision = current + 1
            doc = annotation_to_doc(annotation)
            doc["revision"] = revision
            directory = self._annotation_dir(annotation.trace_id, annotation.annotator_id)
            directory.mkdir(parents=True, exist_ok=True)
            _atomic_write(directory / f"rev-{revision:0{_REVISION_WIDTH}d}.json", _dump_bytes(doc))
            return revision

    def annotation_bytes(self, trace_id: str, annotator_id: str, revision: int | None = None) -> bytes:
        """Raw stored bytes of a revision (latest by default)."""
        paths = self._revision_paths(trace_id, annotator_id)
        if not paths:
            raise NotFound(f"no annotation by {annotator_id!r} for trace {trace_id!r}")
        if revision is None:
            return paths[-1].read_bytes()
        for path in paths:
            if self._revision_of(path) == revision:
                return path.read_bytes()
        raise NotFound(f"no revision {revision} by {annotator_id!r} for trace {trace_id!r}")

    def get_annotation(
        self, trace_id: str, annotator_id: str, revision: int | None = None
    ) -> tuple[MarkerAnnotation, int]:
        doc = json.loads(self.annotation_bytes(trace_id, annotator_id, revision))
        return annotation_from_doc(doc), doc["revision"]

    def submit_annotation(self, trace_id: str, annotator_id: str) -> int:
        """Flip the latest draft to submitted as a new revision."""
        annotation, _ = self.get_annotation(trace_id, annotator_id)
        submitted = MarkerAnnotation(
            trace_id=annotation.trace_id,
            annotator_id=annotation.annotator_id,
            submitted=True,
            nodes=annotation.nodes,
            trace_note=annotation.trace_note,
        )
        return self.put_annotation(submitted)

    def annotations(self) -> list[MarkerAnnotation]:
        """Latest revision of every stored annotation."""
        out = []
        root = self.root / "annotations"
        for trace_dir in sorted(root.iterdir()) if root.exists() else []:
            for annotator_dir in sorted(trace_dir.iterdir()):
                annotation, _ = self.get_annotation(
                    unquote(trace_dir.name), unquote(annotator_dir.name)
                )
                out.append(annotation)
        return out
