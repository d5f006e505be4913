/**
 * Gate parity against the real API server.
 *
 * Spawns the Python service on a scratch store and drives scripted
 * annotator sessions through the same client/state modules the page
 * uses. The point of the suite: the client-side completeness gate can
 * never let through an annotation the server would reject, and with the
 * client gate bypassed the server still rejects on its own.
 */

import { ChildProcess, spawn, spawnSync } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationDoc, ApiClient, ApiError, MarkerDoc, TraceDoc } from "../src/api.js";
import {
  advanceCursor,
  buildTraceView,
  submitAnnotation,
  toggleMarker,
} from "../src/state.js";

const TOKEN = "sesame";
const TRACE_ID = "t-gate";

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port assigned"));
        return;
      }
      probe.close(() => resolve(address.port));
    });
  });
}

function gateTrace(): TraceDoc {
  return {
    trace_id: TRACE_ID,
    model: "model-a",
    environment: "env-x",
    scope: 1,
    scaffold: "plain",
    task_id: "fault",
    trial: 0,
    outcome_score: 1.0,
    messages: [
      {
        index: 0,
        role: "user",
        content: "Find the fault in the hydraulic rig.",
        is_task_description: true,
        is_iteration_limit_error: false,
      },
      {
        index: 1,
        role: "assistant",
        content: "I suspect the intake valve is stuck.",
        is_task_description: false,
        is_iteration_limit_error: false,
      },
      {
        index: 2,
        role: "assistant",
        content: "I will check the pressure gauge first.",
        tool_calls: [{ name: "read_gauge", arguments: { line: "intake" } }],
        is_task_description: false,
        is_iteration_limit_error: false,
      },
      {
        index: 3,
        role: "observation",
        content: "pressure drops to 10 psi within two seconds",
        is_task_description: false,
        is_iteration_limit_error: false,
      },
      {
        index: 4,
        role: "assistant",
        content: "The gauge reading confirms a leak.",
        is_task_description: false,
        is_iteration_limit_error: false,
      },
      {
        index: 5,
        role: "observation",
        content: "valve B reads 0",
        is_task_description: false,
        is_iteration_limit_error: false,
      },
    ],
  };
}

let storeDir = "";
let server: ChildProcess | null = null;
let base = "";
let client: ApiClient;
let markers: MarkerDoc[] = [];

async function waitForServer(): Promise<void> {
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const resp = await fetch(`${base}/markers`, {
        headers: { authorization: `Bearer ${TOKEN}` },
      });
      if (resp.ok) return;
    } catch {
      // still booting
    }
    if (Date.now() > deadline) throw new Error("API server did not come up");
    await new Promise((resolve) => setTimeout(resolve, 100));
  }
}

beforeAll(async () => {
  storeDir = mkdtempSync(join(tmpdir(), "epitrace-gate-"));
  const traceFile = join(storeDir, "trace.json");
  writeFileSync(traceFile, JSON.stringify(gateTrace(), null, 2));
  const ingest = spawnSync(
    "python3",
    ["-m", "epitrace.cli", "ingest", "--store", storeDir, traceFile],
    { encoding: "utf-8" },
  );
  if (ingest.status !== 0) {
    throw new Error(`ingest failed: ${ingest.stdout}${ingest.stderr}`);
  }
  const port = await freePort();
  base = `http://127.0.0.1:${port}`;
  server = spawn(
    "python3",
    [
      "-m",
      "epitrace.cli",
      "serve",
      "--store",
      storeDir,
      "--host",
      "127.0.0.1",
      "--port",
      String(port),
      "--token",
      TOKEN,
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  await waitForServer();
  client = new ApiClient(base, TOKEN);
  markers = await client.getMarkers();
  expect(markers.length).toBeGreaterThanOrEqual(3);
});

afterAll(async () => {
  if (server !== null) {
    server.kill("SIGTERM");
    await new Promise((resolve) => server?.once("exit", resolve));
  }
  if (storeDir !== "") rmSync(storeDir, { recursive: true, force: true });
});

describe("submission gate parity", () => {
  it("client gate blocks an incomplete session before anything reaches the store", async () => {
    const trace = await client.getTrace(TRACE_ID);
    const view = buildTraceView(trace, "ann-blocked", null);

    // Scripted session: mark only message 1, then try to move on and submit.
    advanceCursor(view);
    toggleMarker(view, 1, markers[0]!.id);
    expect(advanceCursor(view).ok).toBe(true);
    expect(advanceCursor(view).ok).toBe(false); // message 2 still unmarked

    const outcome = await submitAnnotation(view, client);
    expect(outcome).toEqual({ status: "blocked", gaps: [2, 4] });
    expect(view.notice).toContain("unmarked messages 2, 4");

    // Nothing was sent: the store has no annotation for this session.
    expect(await client.getAnnotation(TRACE_ID, "ann-blocked")).toBeNull();
  });

  it("server rejects the same incomplete annotation when the client gate is bypassed", async () => {
    const incomplete: AnnotationDoc = {
      trace_id: TRACE_ID,
      annotator_id: "ann-bypass",
      submitted: false,
      nodes: { "1": { marker_ids: [markers[0]!.id] } },
    };
    expect(await client.putAnnotation(incomplete, 0)).toBe(1);

    let submitError: unknown = null;
    try {
      await client.submitAnnotation(TRACE_ID, "ann-bypass");
    } catch (err) {
      submitError = err;
    }
    expect(submitError).toBeInstanceOf(ApiError);
    expect((submitError as ApiError).status).toBe(422);
    expect((submitError as ApiError).code).toBe("incomplete_annotation");

    // Writing submitted=true directly hits the same server-side check.
    let putError: unknown = null;
    try {
      await client.putAnnotation({ ...incomplete, submitted: true }, 1);
    } catch (err) {
      putError = err;
    }
    expect(putError).toBeInstanceOf(ApiError);
    expect((putError as ApiError).status).toBe(422);
  });

  it("complete session round-trips to a stored submitted revision", async () => {
    const trace = await client.getTrace(TRACE_ID);
    const view = buildTraceView(trace, "ann-complete", null);

    // Walk the whole trace left to right, marking each annotatable card
    // with a marker chosen from the served taxonomy.
    const byPos: Record<number, string> = {
      1: markers[0]!.id,
      2: markers[1]!.id,
      4: markers[2]!.id,
    };
    while (view.cursor < view.cards.length) {
      const marker = byPos[view.cursor];
      if (marker !== undefined) toggleMarker(view, view.cursor, marker);
      expect(advanceCursor(view).ok).toBe(true);
    }
    view.cards[4]!.note = "conclusion states a leak";
    view.traceNote = "clean diagnostic run";

    const outcome = await submitAnnotation(view, client);
    expect(outcome).toEqual({ status: "submitted", revision: 2 });
    expect(view.submitted).toBe(true);

    const stored = await client.getAnnotation(TRACE_ID, "ann-complete");
    expect(stored).not.toBeNull();
    expect(stored!.submitted).toBe(true);
    expect(stored!.revision).toBe(2);
    expect(stored!.nodes).toEqual({
      "1": { marker_ids: [markers[0]!.id] },
      "2": { marker_ids: [markers[1]!.id] },
      "4": { marker_ids: [markers[2]!.id], note: "conclusion states a leak" },
    });
    expect(stored!.trace_note).toBe("clean diagnostic run");

    // Stored documents are served verbatim: two fetches, identical bytes.
    const headers = { authorization: `Bearer ${TOKEN}` };
    const url = `${base}/annotations/${TRACE_ID}/ann-complete`;
    const first = await (await fetch(url, { headers })).text();
    const second = await (await fetch(url, { headers })).text();
    expect(second).toBe(first);
  });

  it("stale revision surfaces as a conflict prompting a reload", async () => {
    const trace = await client.getTrace(TRACE_ID);
    const complete = (annotator: string) => {
      const view = buildTraceView(trace, annotator, null);
      for (const pos of [1, 2, 4]) toggleMarker(view, pos, markers[0]!.id);
      return view;
    };

    const first = complete("ann-race");
    expect((await submitAnnotation(first, client)).status).toBe("submitted");

    // Second session starts from the same empty state (revision 0) and
    // therefore writes against a store that has already moved on.
    const second = complete("ann-race");
    const outcome = await submitAnnotation(second, client);
    expect(outcome.status).toBe("conflict");
    expect(second.notice).toContain("reload");
    expect(second.submitted).toBe(false);
  });

  it("requires the bearer token on every route", async () => {
    const anonymous = new ApiClient(base, "");
    let error: unknown = null;
    try {
      await anonymous.getTrace(TRACE_ID);
    } catch (err) {
      error = err;
    }
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(401);
    expect((error as ApiError).code).toBe("unauthorized");
  });

  it("reports a transport failure as retryable instead of a rejection", async () => {
    const trace = await client.getTrace(TRACE_ID);
    const view = buildTraceView(trace, "ann-offline", null);
    for (const pos of [1, 2, 4]) toggleMarker(view, pos, markers[0]!.id);
    const unreachable = new ApiClient("http://127.0.0.1:9", TOKEN);
    const outcome = await submitAnnotation(view, unreachable);
    expect(outcome.status).toBe("network");
    expect(view.submitted).toBe(false);
  });
});
