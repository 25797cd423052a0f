"""MAG-to-DAG conversion with the fewest latent confounders.

Each bi-directed edge marks a confounded pair. Replacing every such edge by
its own parentless binary latent always reproduces the MAG's conditional
independencies over the observed variables, but connected groups of
bi-directed edges can sometimes share a single latent. This module
enumerates the connectivity-respecting groupings, checks each candidate DAG
for independence equivalence with the source MAG, and returns the one with
the fewest latents.

The reverse direction, marginalising a DAG's latent variables into a MAG,
lives here too, since the experiment harness needs it to build ground truth.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from confinder.errors import LatentizationError
from confinder.graphs import (
    Edge,
    GraphKind,
    MixedGraph,
    SeparationQuery,
    ci_signature,
    d_separated,
    m_separated,
    require_valid,
)

LATENT_PREFIX = "_L"
DEFAULT_LATENT_STATES = 2

# verify walks every conditioning set, 3^n growth; past this many observed
# nodes the caller must opt into sampled queries
EXHAUSTIVE_VERIFY_MAX_OBSERVED = 12


@dataclass(frozen=True)
class Latent:
    """One latent confounder: parentless, discrete, with observed children."""

    name: str
    children: Tuple[str, ...]
    states: int = DEFAULT_LATENT_STATES

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(sorted(set(self.children))))
        if len(self.children) < 2:
            raise ValueError(f"latent {self.name!r} needs at least two children")
        if self.states < 2:
            raise ValueError(f"latent {self.name!r} needs at least two states")
        if self.name in self.children:
            raise ValueError(f"latent {self.name!r} cannot be its own child")


@dataclass(frozen=True)
class LatentSpec:
    """Placement and cardinality of every latent confounder of a model."""

    latents: Tuple[Latent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "latents", tuple(self.latents))
        names = [l.name for l in self.latents]
        if len(set(names)) != len(names):
            raise ValueError("duplicate latent names")

    def __len__(self) -> int:
        return len(self.latents)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(l.name for l in self.latents)

    def states_of(self, name: str) -> int:
        for l in self.latents:
            if l.name == name:
                return l.states
        raise KeyError(name)

    def with_states(self, states: Mapping[str, int]) -> "LatentSpec":
        """Copy with the given latents' state counts replaced."""
        unknown = set(states) - set(self.names)
        if unknown:
            raise KeyError(f"unknown latents: {sorted(unknown)}")
        return LatentSpec(
            tuple(
                Latent(l.name, l.children, states.get(l.name, l.states))
                for l in self.latents
            )
        )


@dataclass(frozen=True)
class LatentizedDag:
    """A DAG over observed plus latent nodes, tied to the MAG it encodes.

    ``source_mag`` is optional because serialized models cannot carry it;
    operations that need the independence reference require it explicitly.
    """

    dag: MixedGraph
    spec: LatentSpec
    source_mag: Optional[MixedGraph] = None

    def __post_init__(self):
        require_valid(self.dag, GraphKind.DAG, "dag")
        node_set = set(self.dag.nodes)
        for latent in self.spec.latents:
            if latent.name not in node_set:
                raise ValueError(f"latent {latent.name!r} missing from the DAG")
            if self.dag.parents(latent.name):
                raise ValueError(f"latent {latent.name!r} has parents")
            if self.dag.children(latent.name) != latent.children:
                raise ValueError(
                    f"latent {latent.name!r} children do not match its placement"
                )
        if self.source_mag is not None:
            require_valid(self.source_mag, GraphKind.MAG, "source_mag")
            if self.source_mag.nodes != self.observed:
                raise ValueError("source MAG nodes differ from the observed nodes")

    @property
    def observed(self) -> Tuple[str, ...]:
        hidden = set(self.spec.names)
        return tuple(n for n in self.dag.nodes if n not in hidden)

    def with_states(self, states: Mapping[str, int]) -> "LatentizedDag":
        """Same placement, different latent cardinalities."""
        return LatentizedDag(self.dag, self.spec.with_states(states), self.source_mag)


def _set_partitions(items: Sequence) -> Iterator[List[List]]:
    """Every partition of ``items`` into non-empty unordered blocks."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def _block_connected(block: Sequence[Tuple[str, str]]) -> bool:
    """Do the block's edges form one connected piece of the skeleton?"""
    nodes = {n for e in block for n in e}
    start = next(iter(nodes))
    seen = {start}
    frontier = [start]
    while frontier:
        v = frontier.pop()
        for a, b in block:
            for u, w in ((a, b), (b, a)):
                if u == v and w not in seen:
                    seen.add(w)
                    frontier.append(w)
    return seen == nodes


def _reject_reserved_names(nodes: Sequence[str]) -> None:
    reserved = [n for n in nodes if n.startswith("_")]
    if reserved:
        raise ValueError(
            f"observed names may not start with '_': {reserved} (reserved for latents)"
        )


def candidate_groupings(mag: MixedGraph) -> List[LatentSpec]:
    """All connectivity-respecting ways to cover the bi-directed edges.

    Each partition block must be a connected subgraph of the bi-directed
    skeleton; the block's endpoint union becomes one binary latent's
    children. Candidates are ordered by ascending latent count, then by the
    canonical order of their children sets, so the first verified candidate
    is the deterministic minimum.
    """
    require_valid(mag, GraphKind.MAG, "mag")
    _reject_reserved_names(mag.nodes)
    pairs = list(mag.bidirected_edges())
    specs = []
    for part in _set_partitions(pairs):
        if not all(_block_connected(block) for block in part):
            continue
        groups = sorted(tuple(sorted({n for e in block for n in e})) for block in part)
        specs.append(
            LatentSpec(
                tuple(
                    Latent(f"{LATENT_PREFIX}{i}", children)
                    for i, children in enumerate(groups, start=1)
                )
            )
        )
    unique = list(dict.fromkeys(specs))
    unique.sort(key=lambda s: (len(s), tuple(l.children for l in s.latents)))
    return unique


def apply_spec(mag: MixedGraph, spec: LatentSpec) -> LatentizedDag:
    """Build the DAG keeping the MAG's directed edges and adding latents."""
    require_valid(mag, GraphKind.MAG, "mag")
    _reject_reserved_names(mag.nodes)
    covered = {n for l in spec.latents for n in l.children}
    touched = {n for pair in mag.bidirected_edges() for n in pair}
    if not touched <= covered:
        raise ValueError(
            f"spec leaves confounded nodes uncovered: {sorted(touched - covered)}"
        )
    edges = [Edge.directed(t, h) for t, h in mag.directed_edges()]
    for latent in spec.latents:
        edges.extend(Edge.directed(latent.name, c) for c in latent.children)
    dag = MixedGraph(
        GraphKind.DAG, mag.nodes + spec.names, tuple(edges)
    )
    return LatentizedDag(dag, spec, source_mag=mag)


def verify_ci_equivalence(
    candidate: LatentizedDag,
    sample: Optional[int] = None,
    seed: int = 0,
) -> bool:
    """Does the DAG entail exactly the MAG's independencies over observed?

    Exhaustive signature comparison up to EXHAUSTIVE_VERIFY_MAX_OBSERVED
    observed nodes. Beyond that the conditioning-set space is too large, so
    the caller must pass ``sample`` to check that many randomly drawn
    queries instead (a one-sided check: mismatches are definitive, agreement
    is evidence only).
    """
    if candidate.source_mag is None:
        raise ValueError("candidate has no source MAG to compare against")
    observed = candidate.observed
    if len(observed) > EXHAUSTIVE_VERIFY_MAX_OBSERVED:
        if sample is None:
            raise ValueError(
                f"{len(observed)} observed nodes exceed the exhaustive limit of "
                f"{EXHAUSTIVE_VERIFY_MAX_OBSERVED}; pass sample=<n> to spot-check"
            )
        rng = random.Random(seed)
        for _ in range(sample):
            x, y = rng.sample(observed, 2)
            rest = [n for n in observed if n != x and n != y]
            z = frozenset(n for n in rest if rng.random() < 0.5)
            q = SeparationQuery(x, y, z)
            if d_separated(candidate.dag, q) != m_separated(candidate.source_mag, q):
                return False
        return True
    return ci_signature(candidate.dag, observed) == ci_signature(
        candidate.source_mag, observed
    )


def latentize_min(mag: MixedGraph) -> LatentizedDag:
    """The DAG with the fewest binary latents preserving the MAG's CIs.

    Candidates are tried in ascending latent count; the finest grouping (one
    latent per bi-directed edge) always preserves the independencies, so a
    valid MAG cannot fail here unless its size exceeds the verification
    guard.
    """
    for spec in candidate_groupings(mag):
        candidate = apply_spec(mag, spec)
        if verify_ci_equivalence(candidate):
            return candidate
    raise LatentizationError(
        f"no independence-preserving latent placement found for MAG with edges "
        f"{[f'{e.a}{e.mark_a.value}-{e.mark_b.value}{e.b}' for e in mag.edges]}"
    )


def project_to_mag(dag: MixedGraph, observed: Sequence[str]) -> MixedGraph:
    """Marginalise a DAG's hidden nodes into the MAG over ``observed``.

    Two observed nodes are adjacent iff no conditioning set drawn from the
    other observed nodes separates them; an adjacency is directed when one
    endpoint is an ancestor of the other and bi-directed otherwise.
    """
    require_valid(dag, GraphKind.DAG, "dag")
    observed = tuple(sorted(set(observed)))
    unknown = set(observed) - set(dag.nodes)
    if unknown:
        raise ValueError(f"unknown observed nodes: {sorted(unknown)}")
    separable = {(x, y) for (x, y, _z) in ci_signature(dag, observed)}
    edges = []
    for x, y in itertools.combinations(observed, 2):
        if (x, y) in separable:
            continue
        if dag.is_ancestor(x, y):
            edges.append(Edge.directed(x, y))
        elif dag.is_ancestor(y, x):
            edges.append(Edge.directed(y, x))
        else:
            edges.append(Edge.bidirected(x, y))
    return MixedGraph(GraphKind.MAG, observed, tuple(edges))
