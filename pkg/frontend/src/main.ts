/**
 * Browser entry point.
 *
 * Reads ?trace=&annotator=&api=&token= from the URL, loads every
 * document through the API client, then re-renders the whole page after
 * each state change. Events are delegated on data-action attributes so
 * the markup can stay plain strings produced by render.ts.
 */

import { AnnotationDoc, ApiClient, ApiError, MarkerDoc } from "./api.js";
import { renderApp } from "./render.js";
import {
  advanceCursor,
  buildOverlay,
  buildTraceView,
  GraphOverlay,
  saveDraft,
  setNote,
  submitAnnotation,
  toggleMarker,
  toggleMotifHighlight,
  TraceView,
} from "./state.js";

interface Session {
  client: ApiClient;
  view: TraceView;
  overlay: GraphOverlay | null;
  markers: MarkerDoc[];
}

let session: Session | null = null;

function container(): HTMLElement {
  const el = document.getElementById("app");
  if (el === null) throw new Error("missing #app container");
  return el;
}

function render(): void {
  if (session === null) return;
  container().innerHTML = renderApp(session.view, session.overlay, session.markers);
}

async function load(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const traceId = params.get("trace");
  const annotatorId = params.get("annotator");
  if (traceId === null || annotatorId === null) {
    container().innerHTML =
      "<p>open this page as ?trace=&lt;id&gt;&amp;annotator=&lt;id&gt;" +
      " (optional &amp;api=&lt;base url&gt; and &amp;token=&lt;bearer token&gt;)</p>";
    return;
  }
  const client = new ApiClient(params.get("api") ?? "", params.get("token") ?? "");
  const [trace, markers, stored] = await Promise.all([
    client.getTrace(traceId),
    client.getMarkers(),
    client.getAnnotation(traceId, annotatorId),
  ]);
  // Graph and motifs only exist once the annotation pipeline ran; their
  // absence must not block marker entry.
  let overlay: GraphOverlay | null = null;
  try {
    const [graph, motifs] = await Promise.all([
      client.getGraph(traceId),
      client.getMotifs(traceId),
    ]);
    overlay = buildOverlay(graph, motifs);
  } catch (err) {
    if (!(err instanceof ApiError && err.status === 404)) throw err;
  }
  session = {
    client,
    view: buildTraceView(trace, annotatorId, stored),
    overlay,
    markers,
  };
  render();
}

async function reloadFromStore(): Promise<void> {
  if (session === null) return;
  const { client, view } = session;
  const stored: AnnotationDoc | null = await client.getAnnotation(
    view.trace.trace_id,
    view.annotatorId,
  );
  session.view = buildTraceView(view.trace, view.annotatorId, stored);
  session.view.notice = stored === null ? "no stored annotation" : `loaded revision ${session.view.revision}`;
  render();
}

function onClick(event: Event): void {
  if (session === null) return;
  const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
  if (target === null) return;
  const { view, overlay, client } = session;
  switch (target.dataset.action) {
    case "toggle-marker":
      toggleMarker(view, Number(target.dataset.card), target.dataset.marker ?? "");
      render();
      break;
    case "advance":
      advanceCursor(view);
      render();
      break;
    case "save":
      void saveDraft(view, client).then(render);
      break;
    case "submit":
      void submitAnnotation(view, client).then(render);
      break;
    case "reload":
      void reloadFromStore();
      break;
    case "toggle-motif":
      if (overlay !== null) {
        toggleMotifHighlight(overlay, target.dataset.motif ?? "");
        render();
      }
      break;
  }
}

// Note edits re-render only on blur; re-rendering per keystroke would
// drop focus from the input being typed in.
function onInput(event: Event): void {
  if (session === null) return;
  const target = event.target as HTMLElement;
  if (!(target instanceof HTMLInputElement) && !(target instanceof HTMLTextAreaElement)) return;
  const { view } = session;
  if (target.dataset.action === "note") setNote(view, Number(target.dataset.card), target.value);
  else if (target.dataset.action === "trace-note") view.traceNote = target.value;
}

document.addEventListener("click", onClick);
document.addEventListener("input", onInput);
void load().catch((err: unknown) => {
  container().innerHTML = `<p class="error">failed to load: ${String(err)}</p>`;
});
