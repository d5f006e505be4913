"""Command-line entry points over the directory store.

Every subcommand exits 0 on success, 2 when inputs fail validation, and 3
when a remote endpoint cannot be reached or returns garbage. Commands are
independent processes; the store keeps them safe via atomic renames.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import httpx

from .graph import graph_from_doc, graph_to_doc, ledger_to_docs, validate_graph
from .intervention import (
    ExecutorError,
    InterventionSpec,
    LiveExecutor,
    TraceRegistry,
    build_seed_history,
    draw_intervention_trace,
    render_seed_history,
)
from .irt import fit_all, load_responses, standardize
from .markers import marker_counts
from .motifs import detect, prevalence, prevalence_table
from .pipeline import (
    AnnotationError,
    AnnotatorConfig,
    TransportError,
    WindowSpec,
    annotate_trace,
)
from .service import ENV_API_TOKEN, ENV_BIND
from .stats import cohen_kappa, logprob_summary, pabak, pass_at_k, pass_hat_k, percent_agreement
from .store import ENV_STORE_ROOT, FileStore, NotFound, StoreError, motif_hits_to_doc
from .traces import iter_corpus_documents, parse_trace

_TRANSPORT_FAILURES = (TransportError, AnnotationError, ExecutorError, httpx.HTTPError)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _TRANSPORT_FAILURES as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except (StoreError, ValueError, KeyError, OSError, RuntimeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _store_option(fn):
    return click.option(
        "--store",
        "store_root",
        envvar=ENV_STORE_ROOT,
        required=True,
        type=click.Path(file_okay=False),
        help="Store root directory.",
    )(fn)


def _echo_json(doc) -> None:
    click.echo(json.dumps(doc, indent=2, ensure_ascii=False))


def _echo_rows(rows) -> None:
    for row in rows:
        click.echo("\t".join(str(cell) for cell in row))


@click.group()
def main() -> None:
    """Reasoning-trace analysis: graphs, motifs, statistics, interventions."""


@main.command()
@click.argument("sources", nargs=-1, required=True, type=click.Path(exists=True))
@_store_option
@_guarded
def ingest(sources, store_root) -> None:
    """Load trace files (JSON, NDJSON, or directories) into the store."""
    store = FileStore(store_root)
    count = 0
    for source in sources:
        path = Path(source)
        if path.is_dir() or path.suffix != ".json":
            documents = iter_corpus_documents(path)
        else:
            documents = [path.read_text(encoding="utf-8")]
        for document in documents:
            store.put_trace(parse_trace(document))
            count += 1
    click.echo(f"ingested {count} traces into {store_root}")


@main.command()
@click.argument("trace_id")
@_store_option
@click.option("--endpoint", default=None, help="Annotator chat endpoint URL.")
@click.option("--model", "model_name", default=None, help="Annotator model name.")
@click.option("--token", "auth_token", default=None, help="Annotator bearer token.")
@click.option("--temperature", type=float, default=None)
@click.option("--prompt-version", default=None)
@click.option("--max-retries", type=int, default=None)
@click.option("--timeout", "request_timeout", type=float, default=None)
@click.option("--concurrency", "max_concurrency", type=int, default=None)
@click.option("--window-size", type=int, default=20, show_default=True)
@click.option("--stride", type=int, default=15, show_default=True)
@_guarded
def annotate(trace_id, store_root, window_size, stride, **flags) -> None:
    """Run the two-stage annotation pipeline and store the graph."""
    overrides = {key: value for key, value in flags.items() if value is not None}
    cfg = AnnotatorConfig.from_env(**overrides)
    store = FileStore(store_root)
    trace = store.get_trace(trace_id)
    graph, ledger = annotate_trace(trace, cfg, WindowSpec(size=window_size, stride=stride))
    store.put_graph(graph, ledger)
    _echo_json(
        {
            "trace_id": trace_id,
            "nodes": len(graph.nodes),
            "edges": len(graph.edges),
            "warnings": len(ledger.entries),
        }
    )


@main.command()
@click.argument("trace_id")
@_store_option
@click.option(
    "--graph",
    "graph_file",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Validate this graph document instead of the stored one.",
)
@click.option("--write", is_flag=True, help="Persist the repaired graph and ledger.")
@_guarded
def validate(trace_id, store_root, graph_file, write) -> None:
    """Re-validate a graph against its trace and print the warning ledger."""
    store = FileStore(store_root)
    trace = store.get_trace(trace_id)
    if graph_file is not None:
        graph = graph_from_doc(json.loads(Path(graph_file).read_text(encoding="utf-8")))
    else:
        graph, _ = store.get_graph(trace_id)
    repaired, ledger = validate_graph(graph, trace)
    if write:
        store.put_graph(repaired, ledger)
    doc = graph_to_doc(repaired)
    doc["warnings"] = ledger_to_docs(ledger)
    _echo_json(doc)


@main.command()
@click.argument("trace_id")
@_store_option
@click.option("--write", is_flag=True, help="Persist the hits to the store.")
@_guarded
def motifs(trace_id, store_root, write) -> None:
    """Detect motif templates on a stored graph."""
    store = FileStore(store_root)
    graph, _ = store.get_graph(trace_id)
    hits = sorted(detect(graph), key=lambda h: (h.motif, h.bindings))
    if write:
        store.put_motifs(trace_id, hits)
    _echo_json(motif_hits_to_doc(trace_id, hits))


@main.command(name="prevalence")
@_store_option
@click.option("--group-by", default="model", show_default=True,
              help="Comma-separated trace fields.")
@click.option("--motif", "motif_names", multiple=True,
              help="Restrict to these motifs (repeatable).")
@click.option("--json", "as_json", is_flag=True, help="Emit rows as JSON.")
@_guarded
def prevalence_cmd(store_root, group_by, motif_names, as_json) -> None:
    """Per-group motif prevalence over all stored motif results."""
    store = FileStore(store_root)
    results = store.motif_results()
    report = prevalence(
        results,
        store.load_corpus(),
        group_by=[f for f in group_by.split(",") if f],
        motifs=list(motif_names) or None,
    )
    rows = prevalence_table(report)
    if as_json:
        _echo_json(rows)
        return
    if not rows:
        return
    header = list(rows[0].keys())
    _echo_rows([header] + [
        [row[key] if isinstance(row[key], str) else f"{row[key]:.4f}" for key in header]
        for row in rows
    ])


@main.command()
@click.argument("n", type=int)
@click.argument("c", type=int)
@click.argument("k", type=int)
@click.option("--hat", is_flag=True, help="All k draws succeed instead of at least one.")
@click.option("--plugin", is_flag=True, help="Use the (c/n)^k plug-in form (with --hat).")
@_guarded
def passk(n, c, k, hat, plugin) -> None:
    """Unbiased success estimators from n trials with c successes."""
    if plugin and not hat:
        raise click.UsageError("--plugin only applies to --hat")
    if hat:
        metric, value = f"pass^{k}", pass_hat_k(n, c, k, plugin=plugin)
    else:
        metric, value = f"pass@{k}", pass_at_k(n, c, k)
    _echo_rows([["group", "metric", "value", "n"], ["all", metric, value, n]])


@main.command()
@click.argument("file_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("file_b", type=click.Path(exists=True, dir_okay=False))
@_guarded
def agreement(file_a, file_b) -> None:
    """Inter-rater agreement between two JSON label arrays."""
    series_a = json.loads(Path(file_a).read_text(encoding="utf-8"))
    series_b = json.loads(Path(file_b).read_text(encoding="utf-8"))
    rows = [["group", "metric", "value", "n"]]
    for metric, fn in (
        ("percent_agreement", percent_agreement),
        ("cohen_kappa", cohen_kappa),
        ("pabak", pabak),
    ):
        rows.append(["all", metric, fn(series_a, series_b), len(series_a)])
    _echo_rows(rows)


@main.command()
@_store_option
@click.option("--group-by", default="model", show_default=True,
              help="Trace field to pool by.")
@_guarded
def logprob(store_root, group_by) -> None:
    """Mean assistant token log-probs pooled per group."""
    summary = logprob_summary(FileStore(store_root).load_corpus(), group_by)
    rows = [["group", "metric", "value", "n"]]
    for key in sorted(summary, key=str):
        mean, count = summary[key]
        rows.append([key, "mean_logprob", mean, count])
    _echo_rows(rows)


@main.command(name="irt-fit")
@click.argument("responses", type=click.Path(exists=True, dir_okay=False))
@click.option("--sigma-theta", type=float, default=1.0, show_default=True)
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--max-iter", type=int, default=20000, show_default=True)
@click.option("--out", "out_file", type=click.Path(dir_okay=False), default=None)
@_guarded
def irt_fit(responses, sigma_theta, tol, max_iter, out_file) -> None:
    """Fit the two-parameter ability model per item set from a response CSV."""
    matrices = load_responses(responses)
    fits = fit_all(matrices, sigma_theta=sigma_theta, tol=tol, max_iter=max_iter)
    doc = {}
    for item_set in sorted(fits):
        fit = fits[item_set]
        scaled = standardize(fit.theta)
        doc[item_set] = {
            "converged": fit.converged,
            "n_iter": fit.n_iter,
            "grad_max": fit.grad_max,
            "respondents": [
                {
                    "model": r.model,
                    "environment": r.environment,
                    "theta": float(t),
                    "theta_standardized": float(s),
                }
                for r, t, s in zip(fit.respondents, fit.theta, scaled)
            ],
            "items": [
                {"item_id": item, "discrimination": a, "difficulty": b}
                for item, (a, b) in fit.item_params.items()
            ],
            "mu": fit.mu_by_model,
            "nu": fit.nu_by_environment,
        }
    if out_file is not None:
        Path(out_file).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        click.echo(f"wrote {out_file}")
    else:
        _echo_json(doc)


@main.command(name="intervene-build")
@_store_option
@click.option("--environment", required=True)
@click.option("--agent", required=True, help="Model whose traces seed the history.")
@click.option("--task-id", required=True)
@click.option("--kind", type=click.Choice(["success", "failed"]), default="success",
              show_default=True)
@click.option("-k", "--k", "k", type=int, required=True,
              help="Turns to keep (>0) or drop from the end (<0).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--registry", "registry_file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Reuse a saved registry instead of rebuilding.")
@click.option("--registry-out", type=click.Path(dir_okay=False), default=None,
              help="Also save the registry used.")
@click.option("--success-threshold", type=float, default=1.0, show_default=True)
@click.option("--live-url", default=None,
              help="Execute tool calls against this environment endpoint.")
@click.option("--out", "out_file", type=click.Path(dir_okay=False), default=None)
@_guarded
def intervene_build(store_root, environment, agent, task_id, kind, k, seed,
                    registry_file, registry_out, success_threshold, live_url,
                    out_file) -> None:
    """Sample a registry trace and build a seeded message history."""
    store = FileStore(store_root)
    corpus = store.load_corpus()
    if registry_file is not None:
        registry = TraceRegistry.load(registry_file)
    else:
        registry = TraceRegistry.build(corpus, success_threshold=success_threshold)
    if registry_out is not None:
        registry.save(registry_out)
    spec = InterventionSpec(kind=kind, k=k, seed=seed)
    try:
        trace = draw_intervention_trace(
            registry, corpus, environment=environment, agent=agent,
            task_id=task_id, spec=spec,
        )
    except KeyError as exc:
        raise ValueError(f"task not in the registry band: {exc}") from exc
    executor = LiveExecutor(live_url) if live_url else None
    try:
        history = build_seed_history(trace, spec, executor)
    finally:
        if executor is not None:
            executor.close()
    text = render_seed_history(history)
    if out_file is not None:
        Path(out_file).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out_file}")
    else:
        click.echo(text, nl=False)


@main.command()
@_store_option
@click.option("--host", default=None, help="Bind address (defaults from "
              f"{ENV_BIND}, then 127.0.0.1).")
@click.option("--port", type=int, default=None)
@click.option("--token", "api_token", envvar=ENV_API_TOKEN, default=None,
              help="Require this bearer token on every request.")
def serve(store_root, host, port, api_token) -> None:
    """Serve the HTTP API over the store."""
    import os

    from .service import serve as run_service

    bind = os.environ.get(ENV_BIND, "")
    if host is None:
        host = bind.rsplit(":", 1)[0] if ":" in bind else (bind or "127.0.0.1")
    if port is None:
        port = int(bind.rsplit(":", 1)[1]) if ":" in bind else 8321
    run_service(store_root, host=host, port=port, api_token=api_token)


@main.command()
@_store_option
@_guarded
def report(store_root) -> None:
    """Corpus-wide summary: traces, warnings, motif prevalence, marker counts."""
    store = FileStore(store_root)
    corpus = store.load_corpus()
    rows = store.list_traces()
    warning_counts: dict[str, int] = {}
    graphs = 0
    for row in rows:
        try:
            _, ledger = store.get_graph(row["trace_id"])
        except NotFound:
            continue
        graphs += 1
        for entry in ledger.entries:
            warning_counts[entry.category] = warning_counts.get(entry.category, 0) + 1
    results = store.motif_results()
    doc = {
        "n_traces": len(rows),
        "n_graphs": graphs,
        "warning_counts": dict(sorted(warning_counts.items())),
        "motif_prevalence": prevalence_table(prevalence(results, corpus, group_by=()))
        if results
        else [],
        "marker_counts": marker_counts(store.annotations(), corpus),
    }
    _echo_json(doc)


if __name__ == "__main__":
    main()
