"""Hand-built graphs with exhaustively derived motif hit sets.

Each builder returns (graph, expected) where expected is the EXACT set of
(motif_name, bindings) pairs for the whole catalog, worked out on paper.
"""

from epitrace.graph import EpistemicGraph

from helpers import edge, node


def orphaned_observation():
    """A test that was observed but led nowhere, plus a test never observed."""
    graph = EpistemicGraph(
        trace_id="fx-orphan",
        nodes=(
            node("N1", "T", "probe the flow sensor", (1, "s1")),
            node("N2", "E", "flow reads 2 mL/min", (2, "s2")),
            node("N3", "T", "weigh the residue", (3, "s3")),
        ),
        edges=(edge("N1", "N2", "observes", (2, "s2")),),
    )
    expected = {
        ("evidence_non_uptake", (("E", "N2"),)),
        ("uninformative_test", (("T", "N3"),)),
    }
    return graph, expected


def untested_side_branch():
    """A revised, tested main line next to a hypothesis nobody ever tested."""
    graph = EpistemicGraph(
        trace_id="fx-untested",
        nodes=(
            node("N1", "T", "scan the log tail", (1, "s1")),
            node("N2", "E", "repeated timeout entries", (2, "s2")),
            node("N3", "H", "the cache is stale", (3, "s3")),
            node("N4", "H", "the socket pool is exhausted", (4, "s4")),
            node("N5", "T", "count open sockets", (5, "s5")),
            node("N6", "E", "4096 sockets open", (6, "s6")),
            node("N7", "J", "pool limit is the bottleneck", (7, "s7")),
            node("N8", "H", "the retry loop leaks sockets", (8, "s8")),
            node("N9", "T", "trace the retry path", (9, "s9")),
            node("N10", "E", "sockets opened in retry, never closed", (10, "s10")),
            node("N11", "J", "leak confirmed in retry path", (11, "s11")),
        ),
        edges=(
            edge("N1", "N2", "observes", (2, "s2")),
            edge("N2", "N3", "informs", (3, "s3")),
            edge("N4", "N5", "tests", (5, "s5")),
            edge("N5", "N6", "observes", (6, "s6")),
            edge("N6", "N7", "informs", (7, "s7")),
            edge("N4", "N8", "updates_to", (8, "s8")),
            edge("N8", "N9", "tests", (9, "s9")),
            edge("N9", "N10", "observes", (10, "s10")),
            edge("N10", "N11", "informs", (11, "s11")),
        ),
    )
    expected = {
        ("untested_claim", (("H", "N3"),)),
        (
            "refutation_driven_belief_revision",
            (("E", "N6"), ("H1", "N4"), ("H2", "N8"), ("T", "N5")),
        ),
        ("explore_then_test_transition", (("H", "N4"), ("T1", "N1"))),
        ("explore_then_test_transition", (("H", "N8"), ("T1", "N1"))),
    }
    return graph, expected


def fixed_belief_chain():
    """Six hypotheses, each tested, none ever revised."""
    nodes = []
    edges = []
    for i in range(1, 7):
        h, t, e = f"N{3 * i - 2}", f"N{3 * i - 1}", f"N{3 * i}"
        ht, tt, et = 3 * i - 2, 3 * i - 1, 3 * i
        nodes.append(node(h, "H", f"guess {i}", (ht, f"s{ht}")))
        nodes.append(node(t, "T", f"check {i}", (tt, f"s{tt}")))
        nodes.append(node(e, "E", f"result {i}", (et, f"s{et}")))
        edges.append(edge(h, t, "tests", (tt, f"s{tt}")))
        edges.append(edge(t, e, "observes", (et, f"s{et}")))
    for i in range(1, 6):
        e, nxt = f"N{3 * i}", f"N{3 * i + 1}"
        edges.append(edge(e, nxt, "informs", (3 * i + 1, f"s{3 * i + 1}")))
    nodes.append(node("N19", "J", "overall readout", (19, "s19")))
    edges.append(edge("N18", "N19", "informs", (19, "s19")))
    graph = EpistemicGraph(trace_id="fx-fixed", nodes=tuple(nodes), edges=tuple(edges))
    expected = {("fixed_belief_trace", ())}
    for i in range(1, 6):
        expected.add(
            (
                "evidence_led_hypothesis_generation",
                (("E", f"N{3 * i}"), ("H", f"N{3 * i + 1}")),
            )
        )
    return graph, expected


def standing_contradiction():
    """A revision whose successor is contradicted and never repaired."""
    graph = EpistemicGraph(
        trace_id="fx-contra",
        nodes=(
            node("N1", "H", "the parser drops the header", (1, "s1")),
            node("N2", "T", "feed a headerless file", (2, "s2")),
            node("N3", "E", "parse succeeds without header", (3, "s3")),
            node("N4", "H", "the writer omits the header", (4, "s4")),
            node("N5", "T", "diff writer output", (5, "s5")),
            node("N6", "E", "header present in output", (6, "s6")),
            node("N7", "J", "writer is not at fault", (7, "s7")),
            node("N8", "J", "fault must be upstream", (8, "s8")),
            node("N9", "C", "the importer corrupts the file", (9, "s9")),
        ),
        edges=(
            edge("N1", "N2", "tests", (2, "s2")),
            edge("N2", "N3", "observes", (3, "s3")),
            edge("N3", "N4", "informs", (4, "s4")),
            edge("N1", "N4", "updates_to", (4, "s4")),
            edge("N4", "N5", "tests", (5, "s5")),
            edge("N5", "N6", "observes", (6, "s6")),
            edge("N6", "N7", "informs", (7, "s7")),
            edge("N7", "N4", "contradicts", (7, "s7")),
            edge("N7", "N8", "informs", (8, "s8")),
            edge("N8", "N9", "informs", (9, "s9")),
        ),
    )
    expected = {
        ("contradiction_without_repair", (("H", "N4"), ("X", "N7"))),
        ("evidence_led_hypothesis_generation", (("E", "N3"), ("H", "N4"))),
        (
            "refutation_driven_belief_revision",
            (("E", "N3"), ("H1", "N1"), ("H2", "N4"), ("T", "N2")),
        ),
        ("unsupported_judgment", (("J", "N8"),)),
    }
    return graph, expected


GOLDEN_FIXTURES = {
    "orphaned_observation": orphaned_observation,
    "untested_side_branch": untested_side_branch,
    "fixed_belief_chain": fixed_belief_chain,
    "standing_contradiction": standing_contradiction,
}
