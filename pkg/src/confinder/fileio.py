"""Text formats for graphs, models, datasets, reports, and traces.

Graph files hold ``node <name> <cardinality>`` declarations and one edge
per line (``A --> B``, ``A <-> B``, ``A o-> B``, ``A o-o B``); ``#`` starts
a comment. Model files add ``cpt <node> | <parent-config> : p1 p2 ...``
lines, latentized-DAG files add ``latent <name> states <k> children ...``
lines. Datasets are header-bearing CSV with integer state indices; node
declarations may optionally append one label per state, letting data cells
use labels instead. Serializers emit a canonical form that parses back
byte-identically.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from confinder.bn import BnModel, parent_configurations, parent_strides
from confinder.errors import GraphFormatError
from confinder.graphs import Edge, GraphKind, Mark, MixedGraph, require_valid
from confinder.latentize import Latent, LatentizedDag, LatentSpec
from confinder.search import SearchTrace, TraceEntry
from confinder.vbem import Dataset

_LEFT_MARKS = {"-": Mark.TAIL, "<": Mark.ARROW, "o": Mark.CIRCLE}
_RIGHT_MARKS = {"-": Mark.TAIL, ">": Mark.ARROW, "o": Mark.CIRCLE}
_LEFT_CHARS = {mark: char for char, mark in _LEFT_MARKS.items()}
_RIGHT_CHARS = {mark: char for char, mark in _RIGHT_MARKS.items()}

TRACE_HEADER = "stratum,model_id,p_elbo,seconds"


def _format_float(value) -> str:
    return repr(float(value))


def edge_token(edge: Edge) -> str:
    return f"{_LEFT_CHARS[edge.mark_a]}-{_RIGHT_CHARS[edge.mark_b]}"


def _parse_marks(token: str, lineno: int) -> Tuple[Mark, Mark]:
    if (
        len(token) != 3
        or token[1] != "-"
        or token[0] not in _LEFT_MARKS
        or token[2] not in _RIGHT_MARKS
    ):
        raise GraphFormatError(f"malformed edge mark {token!r}", lineno)
    return _LEFT_MARKS[token[0]], _RIGHT_MARKS[token[2]]


@dataclass(frozen=True)
class GraphFile:
    """A parsed graph plus the declaration metadata the text carried."""

    graph: MixedGraph
    cardinalities: Dict[str, int]
    labels: Dict[str, Tuple[str, ...]]


class _Scan:
    """Classified lines of a graph-family file, with line numbers kept."""

    def __init__(self):
        self.nodes: Dict[str, Tuple[int, Tuple[str, ...], int]] = {}
        self.edges: List[Tuple[int, str, str, Mark, Mark]] = []
        self.latents: List[Tuple[int, Latent]] = []
        self.cpts: List[Tuple[int, str, Optional[str], List[float]]] = []


def _scan(text: str) -> _Scan:
    scan = _Scan()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "node":
            _scan_node(scan, parts, lineno)
        elif parts[0] == "latent":
            _scan_latent(scan, parts, lineno)
        elif parts[0] == "cpt":
            _scan_cpt(scan, line, lineno)
        elif len(parts) == 3:
            marks = _parse_marks(parts[1], lineno)
            if parts[0] == parts[2]:
                raise GraphFormatError(f"self-loop at {parts[0]!r}", lineno)
            scan.edges.append((lineno, parts[0], parts[2], *marks))
        else:
            raise GraphFormatError(
                f"expected 'node', 'latent', 'cpt' or an edge line, got {line!r}",
                lineno,
            )
    return scan


def _scan_node(scan: _Scan, parts: Sequence[str], lineno: int) -> None:
    if len(parts) < 3:
        raise GraphFormatError("node lines need a name and a cardinality", lineno)
    name = parts[1]
    try:
        card = int(parts[2])
    except ValueError:
        raise GraphFormatError(f"cardinality {parts[2]!r} is not an integer", lineno)
    if card < 2:
        raise GraphFormatError(f"node {name} needs at least 2 states", lineno)
    if name in scan.nodes:
        raise GraphFormatError(f"duplicate node declaration {name!r}", lineno)
    labels = tuple(parts[3:])
    if labels:
        if len(labels) != card:
            raise GraphFormatError(
                f"node {name} declares {len(labels)} labels for {card} states",
                lineno,
            )
        if len(set(labels)) != len(labels):
            raise GraphFormatError(f"node {name} has duplicate state labels", lineno)
    scan.nodes[name] = (card, labels, lineno)


def _scan_latent(scan: _Scan, parts: Sequence[str], lineno: int) -> None:
    if len(parts) < 7 or parts[2] != "states" or parts[4] != "children":
        raise GraphFormatError(
            "latent lines look like 'latent _L1 states 2 children X Y'", lineno
        )
    try:
        states = int(parts[3])
    except ValueError:
        raise GraphFormatError(f"state count {parts[3]!r} is not an integer", lineno)
    try:
        latent = Latent(parts[1], tuple(parts[5:]), states)
    except ValueError as exc:
        raise GraphFormatError(str(exc), lineno)
    scan.latents.append((lineno, latent))


def _scan_cpt(scan: _Scan, line: str, lineno: int) -> None:
    body = line[len("cpt") :].strip()
    if "|" not in body or ":" not in body:
        raise GraphFormatError(
            "cpt lines look like 'cpt B | A=0 : 0.2 0.8'", lineno
        )
    head, _, rest = body.partition("|")
    config, _, probs_text = rest.partition(":")
    node = head.strip()
    if not node:
        raise GraphFormatError("cpt line is missing the node name", lineno)
    probs = []
    for token in probs_text.split():
        try:
            probs.append(float(token))
        except ValueError:
            raise GraphFormatError(f"probability {token!r} is not a number", lineno)
    if not probs:
        raise GraphFormatError("cpt line has no probabilities", lineno)
    scan.cpts.append((lineno, node, config.strip(), probs))


def _check_endpoints(scan: _Scan) -> None:
    for lineno, a, b, _ma, _mb in scan.edges:
        for name in (a, b):
            if name not in scan.nodes:
                raise GraphFormatError(f"unknown node {name!r}", lineno)
    seen = {}
    for lineno, a, b, _ma, _mb in scan.edges:
        pair = (min(a, b), max(a, b))
        if pair in seen:
            raise GraphFormatError(
                f"second edge between {pair[0]} and {pair[1]}", lineno
            )
        seen[pair] = lineno


def _reject_underscore_nodes(scan: _Scan) -> None:
    for name, (_card, _labels, lineno) in scan.nodes.items():
        if name.startswith("_"):
            raise GraphFormatError(
                f"node name {name!r} uses the reserved '_' prefix", lineno
            )


def _build_graph(scan: _Scan, kind: GraphKind) -> MixedGraph:
    _check_endpoints(scan)
    edges = tuple(
        Edge(a, b, ma, mb) for _lineno, a, b, ma, mb in scan.edges
    )
    return MixedGraph(kind, tuple(scan.nodes), edges)


def parse_graph_file(text: str, kind: GraphKind) -> GraphFile:
    scan = _scan(text)
    if scan.latents:
        raise GraphFormatError("unexpected 'latent' line", scan.latents[0][0])
    if scan.cpts:
        raise GraphFormatError("unexpected 'cpt' line", scan.cpts[0][0])
    if not scan.nodes:
        raise GraphFormatError("no node declarations found")
    _reject_underscore_nodes(scan)
    graph = _build_graph(scan, kind)
    require_valid(graph, kind, "parsed graph")
    cards = {name: card for name, (card, _labels, _l) in scan.nodes.items()}
    labels = {
        name: lbls for name, (_card, lbls, _l) in scan.nodes.items() if lbls
    }
    return GraphFile(graph, cards, labels)


def parse_pag(text: str) -> MixedGraph:
    return parse_graph_file(text, GraphKind.PAG).graph


def parse_mag(text: str) -> MixedGraph:
    return parse_graph_file(text, GraphKind.MAG).graph


def serialize_graph(
    graph: MixedGraph,
    cardinalities: Mapping[str, int],
    labels: Optional[Mapping[str, Sequence[str]]] = None,
) -> str:
    lines = []
    for name in graph.nodes:
        suffix = ""
        if labels and name in labels:
            suffix = " " + " ".join(labels[name])
        lines.append(f"node {name} {cardinalities[name]}{suffix}")
    for edge in graph.edges:
        lines.append(f"{edge.a} {edge_token(edge)} {edge.b}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> BnModel:
    scan = _scan(text)
    if scan.latents:
        raise GraphFormatError("unexpected 'latent' line in a model", scan.latents[0][0])
    if not scan.nodes:
        raise GraphFormatError("no node declarations found")
    _reject_underscore_nodes(scan)
    for lineno, _a, _b, ma, mb in scan.edges:
        if {ma, mb} != {Mark.TAIL, Mark.ARROW}:
            raise GraphFormatError("model edges must be directed", lineno)
    dag = _build_graph(scan, GraphKind.DAG)
    require_valid(dag, GraphKind.DAG, "model graph")
    cards = {name: card for name, (card, _lbl, _l) in scan.nodes.items()}

    tables: Dict[str, np.ndarray] = {}
    filled: Dict[str, np.ndarray] = {}
    for lineno, node, config, probs in scan.cpts:
        if node not in cards:
            raise GraphFormatError(f"cpt for unknown node {node!r}", lineno)
        parents = tuple(sorted(dag.parents(node)))
        if node not in tables:
            j_count = 1
            for p in parents:
                j_count *= cards[p]
            tables[node] = np.zeros((j_count, cards[node]))
            filled[node] = np.zeros(j_count, dtype=bool)
        j = _config_index(node, parents, cards, config, lineno)
        if filled[node][j]:
            raise GraphFormatError(
                f"duplicate configuration for {node}: {config or '(root)'}", lineno
            )
        if len(probs) != cards[node]:
            raise GraphFormatError(
                f"{node} has {cards[node]} states but {len(probs)} probabilities",
                lineno,
            )
        if any(p < 0 for p in probs):
            raise GraphFormatError("probabilities must be non-negative", lineno)
        if abs(sum(probs) - 1.0) > 1e-9:
            raise GraphFormatError("probabilities must sum to 1", lineno)
        tables[node][j] = probs
        filled[node][j] = True
    for node in dag.nodes:
        if node not in tables:
            raise GraphFormatError(f"missing CPT for {node}")
        holes = int((~filled[node]).sum())
        if holes:
            raise GraphFormatError(
                f"CPT for {node} is missing {holes} parent configuration(s)"
            )
    return BnModel(dag, cards, tables)


def _config_index(
    node: str,
    parents: Tuple[str, ...],
    cards: Mapping[str, int],
    config: str,
    lineno: int,
) -> int:
    assignments = {}
    if config:
        for pair in config.split(","):
            name, eq, value = pair.partition("=")
            name = name.strip()
            if not eq:
                raise GraphFormatError(
                    f"expected 'parent=value' pairs, got {pair.strip()!r}", lineno
                )
            try:
                assignments[name] = int(value)
            except ValueError:
                raise GraphFormatError(
                    f"parent value {value.strip()!r} is not an integer", lineno
                )
    if set(assignments) != set(parents):
        expected = ", ".join(parents) if parents else "(no parents)"
        raise GraphFormatError(
            f"configuration for {node} must assign exactly: {expected}", lineno
        )
    strides = parent_strides(parents, cards)
    j = 0
    for name, value in assignments.items():
        if not 0 <= value < cards[name]:
            raise GraphFormatError(
                f"value {value} out of range for {name}", lineno
            )
        j += strides[name] * value
    return j


def serialize_model(model: BnModel) -> str:
    lines = [f"node {name} {model.cardinality(name)}" for name in model.nodes]
    for edge in model.dag.edges:
        lines.append(f"{edge.a} {edge_token(edge)} {edge.b}")
    for node in model.nodes:
        parents = model.parents(node)
        table = model.cpt(node)
        for j, combo in enumerate(parent_configurations(parents, model.cardinalities)):
            config = ",".join(f"{p}={v}" for p, v in zip(parents, combo))
            probs = " ".join(_format_float(p) for p in table[j])
            middle = f"| {config} " if config else "| "
            lines.append(f"cpt {node} {middle}: {probs}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LatentizedFile:
    """A parsed latentized DAG plus node metadata from the text."""

    model: LatentizedDag
    cardinalities: Dict[str, int]
    labels: Dict[str, Tuple[str, ...]]


def parse_latentized(text: str) -> LatentizedDag:
    return parse_latentized_file(text).model


def parse_latentized_file(text: str) -> LatentizedFile:
    scan = _scan(text)
    if scan.cpts:
        raise GraphFormatError("unexpected 'cpt' line", scan.cpts[0][0])
    if not scan.nodes:
        raise GraphFormatError("no node declarations found")
    for lineno, _a, _b, ma, mb in scan.edges:
        if {ma, mb} != {Mark.TAIL, Mark.ARROW}:
            raise GraphFormatError("latentized-DAG edges must be directed", lineno)
    latent_names = {latent.name for _l, latent in scan.latents}
    for name, (card, _labels, lineno) in scan.nodes.items():
        if name.startswith("_") and name not in latent_names:
            raise GraphFormatError(
                f"node {name!r} uses the reserved '_' prefix but has no "
                f"latent declaration",
                lineno,
            )
    for lineno, latent in scan.latents:
        declared = scan.nodes.get(latent.name)
        if declared is not None and declared[0] != latent.states:
            raise GraphFormatError(
                f"latent {latent.name} declares {latent.states} states but "
                f"node line says {declared[0]}",
                lineno,
            )
        if declared is None:
            scan.nodes[latent.name] = (latent.states, (), lineno)
    dag = _build_graph(scan, GraphKind.DAG)
    spec = LatentSpec(tuple(latent for _l, latent in scan.latents))
    model = LatentizedDag(dag, spec)
    cards = {
        name: card
        for name, (card, _labels, _l) in scan.nodes.items()
        if name in model.observed
    }
    labels = {
        name: lbls
        for name, (_card, lbls, _l) in scan.nodes.items()
        if lbls and name in model.observed
    }
    return LatentizedFile(model, cards, labels)


def serialize_latentized(
    model: LatentizedDag, cardinalities: Mapping[str, int]
) -> str:
    cards = dict(cardinalities)
    for latent in model.spec.latents:
        cards[latent.name] = latent.states
    lines = [f"node {name} {cards[name]}" for name in model.dag.nodes]
    for edge in model.dag.edges:
        lines.append(f"{edge.a} {edge_token(edge)} {edge.b}")
    for latent in model.spec.latents:
        children = " ".join(latent.children)
        lines.append(
            f"latent {latent.name} states {latent.states} children {children}"
        )
    return "\n".join(lines) + "\n"


def parse_data(
    text: str,
    cardinalities: Optional[Mapping[str, int]] = None,
    labels: Optional[Mapping[str, Sequence[str]]] = None,
) -> Dataset:
    header: Optional[List[str]] = None
    names: List[str] = []
    columns: List[List[int]] = []
    label_maps: Dict[str, Dict[str, int]] = {}
    if labels:
        label_maps = {
            name: {label: i for i, label in enumerate(seq)}
            for name, seq in labels.items()
        }
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [cell.strip() for cell in line.split(",")]
        if header is None:
            header = cells
            for name in cells:
                if not name:
                    raise GraphFormatError("empty column name", lineno)
                if name.startswith("_"):
                    raise GraphFormatError(
                        f"column {name!r} uses the reserved '_' prefix", lineno
                    )
            if len(set(cells)) != len(cells):
                raise GraphFormatError("duplicate column names", lineno)
            names = cells
            columns = [[] for _ in cells]
            continue
        if len(cells) != len(names):
            raise GraphFormatError(
                f"expected {len(names)} values, got {len(cells)}", lineno
            )
        for i, (name, cell) in enumerate(zip(names, cells)):
            try:
                value = int(cell)
            except ValueError:
                mapping = label_maps.get(name)
                if mapping is None or cell not in mapping:
                    raise GraphFormatError(
                        f"invalid value {cell!r} for column {name}", lineno
                    )
                value = mapping[cell]
            if value < 0:
                raise GraphFormatError(
                    f"negative state {value} for column {name}", lineno
                )
            if cardinalities and name in cardinalities:
                if value >= cardinalities[name]:
                    raise GraphFormatError(
                        f"state {value} out of range for {name} "
                        f"(cardinality {cardinalities[name]})",
                        lineno,
                    )
            columns[i].append(value)
    if header is None:
        raise GraphFormatError("no header line found")
    if not columns or not columns[0]:
        raise GraphFormatError("no data rows found")
    variables = []
    for i, name in enumerate(names):
        if cardinalities and name in cardinalities:
            card = cardinalities[name]
        else:
            card = max(2, max(columns[i]) + 1)
        variables.append((name, card))
    rows = np.column_stack([np.asarray(col, dtype=np.int64) for col in columns])
    return Dataset(tuple(variables), rows)


def serialize_data(dataset: Dataset) -> str:
    lines = [",".join(dataset.names)]
    for row in dataset.rows:
        lines.append(",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def serialize_report(items: Mapping[str, object]) -> str:
    lines = []
    for key, value in items.items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = _format_float(value)
        else:
            text = str(value)
        lines.append(f"{key}: {text}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> Dict[str, str]:
    items = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            continue
        items[key.strip()] = value.strip()
    return items


def serialize_trace(trace: SearchTrace, normalize_times: bool = False) -> str:
    lines = [TRACE_HEADER]
    for entry in trace.entries:
        seconds = "0.000000" if normalize_times else f"{entry.seconds:.6f}"
        lines.append(
            f"{entry.stratum},{entry.model_id},{_format_float(entry.p_elbo)},{seconds}"
        )
    return "\n".join(lines) + "\n"


def parse_trace(text: str) -> Tuple[TraceEntry, ...]:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line == TRACE_HEADER:
            continue
        cells = line.split(",")
        if len(cells) != 4:
            raise GraphFormatError("trace rows have 4 comma-separated fields", lineno)
        try:
            entries.append(
                TraceEntry(int(cells[0]), cells[1], float(cells[2]), float(cells[3]))
            )
        except ValueError as exc:
            raise GraphFormatError(str(exc), lineno)
    return tuple(entries)
