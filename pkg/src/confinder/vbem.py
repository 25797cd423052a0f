"""Variational Bayesian EM for discrete Bayesian networks with latents.

Families (a node given its parents) carry Dirichlet priors; the surrogate
posterior factorises into per-family Dirichlets q_theta and per-row,
per-latent categorical responsibilities q_latent (mean field). The VB-E
step updates responsibilities from expected log parameters, the VB-M step
updates Dirichlet parameters from expected counts, and the bound is
evaluated in its closed form at the VB-M fixed point:

    ELBO = sum_n H(q_latent row n)
         + sum_i sum_j [ logB(posterior alpha_ij.) - logB(prior alpha_ij.) ]

which for latent-free models is exactly the conjugate log marginal
likelihood. The searched objective adds a label-symmetry penalty:
p-ELBO = ELBO - sum_i log(|L_i|!), cancelling the |L_i|! equivalent
relabelings of each latent's states.

All scores are in nats and accumulated in canonical node order so repeated
runs are bit-identical.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, xlogy

from confinder.errors import DataBindingError, InconsistentStateError
from confinder.latentize import LatentSpec, LatentizedDag
from confinder.seeds import derive_seed

DEFAULT_CONVERGENCE = 0.01
DEFAULT_RESTARTS = 5
DEFAULT_ITERATION_CAP = 500

TRACE_SLACK = 1e-8


class Dataset:
    """Complete discrete data: named columns with fixed cardinalities.

    Cells are state indices; latent variables are absent columns rather
    than missing cells, so every stored cell must be present and in range.
    """

    def __init__(self, variables: Iterable[Tuple[str, int]], rows) -> None:
        self.variables: Tuple[Tuple[str, int], ...] = tuple(
            (str(name), int(card)) for name, card in variables
        )
        names = [name for name, _ in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")
        for name, card in self.variables:
            if card < 2:
                raise ValueError(f"variable {name!r} needs at least 2 states, got {card}")
        data = np.array(rows, dtype=np.int64)
        if data.ndim != 2 or data.shape[1] != len(self.variables):
            raise ValueError(
                f"rows must form an N x {len(self.variables)} table, got shape {data.shape}"
            )
        if data.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        for col, (name, card) in enumerate(self.variables):
            column = data[:, col]
            if column.min() < 0 or column.max() >= card:
                raise ValueError(
                    f"variable {name!r} has values outside [0, {card})"
                )
        data.setflags(write=False)
        self._rows = data
        self._col = {name: i for i, name in enumerate(names)}

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.variables)

    @property
    def n_rows(self) -> int:
        return self._rows.shape[0]

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    def cardinality(self, name: str) -> int:
        return self.variables[self._col[name]][1]

    def column(self, name: str) -> np.ndarray:
        return self._rows[:, self._col[name]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.variables == other.variables and np.array_equal(self._rows, other._rows)

    def __repr__(self) -> str:
        return f"Dataset({len(self.variables)} variables, {self.n_rows} rows)"


@dataclass(frozen=True, eq=False)
class FamilyPrior:
    """Dirichlet hyperparameters per family; uniform alpha=1 by default.

    ``tables`` may pin explicit (parent-config x state) arrays for specific
    nodes; everything else is filled with the scalar ``alpha``.
    """

    alpha: float = 1.0
    tables: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError("alpha must be positive")
        for name, table in self.tables.items():
            if np.any(np.asarray(table) <= 0):
                raise ValueError(f"prior table for {name!r} must be positive")

    def for_family(self, node: str, shape: Tuple[int, int]) -> np.ndarray:
        table = self.tables.get(node)
        if table is None:
            return np.full(shape, float(self.alpha))
        table = np.asarray(table, dtype=float)
        if table.shape != shape:
            raise ValueError(
                f"prior table for {node!r} has shape {table.shape}, expected {shape}"
            )
        return table.copy()


@dataclass(eq=False)
class VariationalState:
    """Surrogate posterior: per-family Dirichlets plus responsibilities."""

    q_theta: Dict[str, np.ndarray]
    q_latent: Dict[str, np.ndarray]
    elbo_trace: Tuple[float, ...] = ()

    def __post_init__(self):
        self.elbo_trace = tuple(float(v) for v in self.elbo_trace)
        for name, q in self.q_latent.items():
            if np.any(q < 0):
                raise ValueError(f"negative responsibilities for {name!r}")
            sums = q.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-9):
                raise ValueError(f"responsibilities for {name!r} are not normalized")
        for earlier, later in zip(self.elbo_trace, self.elbo_trace[1:]):
            if later < earlier - TRACE_SLACK:
                raise ValueError(
                    f"bound decreased along the trace: {earlier} -> {later}"
                )


@dataclass(frozen=True)
class ScoreReport:
    """Outcome of one fit: bound values plus run accounting.

    ``iterations`` counts bound evaluations: the initial one after setting
    up the parameter posterior, plus one per E/M pass of the winning run.
    """

    elbo: float
    p_elbo: float
    iterations: int
    converged: bool
    restarts_used: int


class _Family:
    """One node's conditional family bound to dataset columns.

    Parent configurations are flattened by mixed radix over the sorted
    parent tuple; per-row contributions from observed parents are
    precomputed, latent parents contribute strides used with their
    responsibilities at run time.
    """

    __slots__ = (
        "node", "node_card", "parents", "cards", "strides", "j_count",
        "latent_parents", "latent_strides", "obs_index", "child_values",
        "node_is_latent", "static_counts",
    )

    def __init__(self, node, node_card, parents, cards, data, latent_names):
        self.node = node
        self.node_card = node_card
        self.parents = parents
        self.cards = cards
        strides = {}
        running = 1
        for parent in reversed(parents):
            strides[parent] = running
            running *= cards[parent]
        self.strides = strides
        self.j_count = running
        self.latent_parents = tuple(p for p in parents if p in latent_names)
        self.latent_strides = {p: strides[p] for p in self.latent_parents}
        n = data.n_rows
        obs_index = np.zeros(n, dtype=np.int64)
        for parent in parents:
            if parent not in latent_names:
                obs_index += strides[parent] * data.column(parent)
        self.obs_index = obs_index
        self.node_is_latent = node in latent_names
        self.child_values = None if self.node_is_latent else data.column(node)
        if not self.node_is_latent and not self.latent_parents:
            counts = np.zeros((self.j_count, node_card))
            np.add.at(counts, (self.obs_index, self.child_values), 1.0)
            self.static_counts = counts
        else:
            self.static_counts = None

    def latent_configurations(self, skip=None):
        """(states, strides) product over latent parents, minus ``skip``."""
        names = [p for p in self.latent_parents if p != skip]
        ranges = [range(self.cards[p]) for p in names]
        for combo in itertools.product(*ranges):
            yield names, combo


class _Binding:
    """Model structure matched against a dataset, with family layouts."""

    def __init__(self, model: LatentizedDag, data: Dataset):
        observed = model.observed
        missing = set(observed) - set(data.names)
        extra = set(data.names) - set(observed)
        if missing or extra:
            parts = []
            if missing:
                parts.append(f"columns missing from data: {sorted(missing)}")
            if extra:
                parts.append(f"columns absent from model: {sorted(extra)}")
            raise DataBindingError("; ".join(parts))
        self.model = model
        self.data = data
        self.latent_names = tuple(sorted(model.spec.names))
        self.latent_cards = {l.name: l.states for l in model.spec.latents}
        cards = dict(self.latent_cards)
        for name in observed:
            cards[name] = data.cardinality(name)
        self.cards = cards
        latent_set = set(self.latent_names)
        self.families = {}
        for node in sorted(model.dag.nodes):
            self.families[node] = _Family(
                node, cards[node], model.dag.parents(node), cards, data, latent_set
            )
        # families in which each latent participates as a parent
        self.touching = {
            l: tuple(
                f for f in self.families.values() if l in f.latent_parents
            )
            for l in self.latent_names
        }

    def uniform_responsibilities(self) -> Dict[str, np.ndarray]:
        n = self.data.n_rows
        return {
            l: np.full((n, self.latent_cards[l]), 1.0 / self.latent_cards[l])
            for l in self.latent_names
        }

    def check_q_theta(self, q_theta: Mapping[str, np.ndarray]) -> None:
        for node, family in self.families.items():
            table = q_theta.get(node)
            if table is None:
                raise DataBindingError(f"q_theta is missing family {node!r}")
            if table.shape != (family.j_count, family.node_card):
                raise DataBindingError(
                    f"q_theta[{node!r}] has shape {table.shape}, expected "
                    f"{(family.j_count, family.node_card)}"
                )

    def check_q_latent(self, q_latent: Mapping[str, np.ndarray]) -> None:
        n = self.data.n_rows
        for name in self.latent_names:
            q = q_latent.get(name)
            if q is None:
                raise DataBindingError(f"q_latent is missing latent {name!r}")
            if q.shape != (n, self.latent_cards[name]):
                raise DataBindingError(
                    f"q_latent[{name!r}] has shape {q.shape}, expected "
                    f"{(n, self.latent_cards[name])}"
                )


def _expected_log_theta(table: np.ndarray) -> np.ndarray:
    # degenerate tables produce non-finite values here; the E-step detects
    # and reports them, so the intermediate warning is noise
    with np.errstate(invalid="ignore"):
        return digamma(table) - digamma(table.sum(axis=1, keepdims=True))


def _row_weights(q_latent, names, combo, n) -> np.ndarray:
    w = np.ones(n)
    for name, state in zip(names, combo):
        w = w * q_latent[name][:, state]
    return w


def _e_step(binding: _Binding, q_theta, q_latent) -> Dict[str, np.ndarray]:
    """One sequential mean-field sweep over latents in canonical order."""
    n = binding.data.n_rows
    elog = {node: _expected_log_theta(q_theta[node]) for node in binding.families}
    updated = {name: q.copy() for name, q in q_latent.items()}
    for latent in binding.latent_names:
        states = binding.latent_cards[latent]
        log_q = np.tile(elog[latent][0], (n, 1))
        for family in binding.touching[latent]:
            stride = family.latent_strides[latent]
            table = elog[family.node]
            for names, combo in family.latent_configurations(skip=latent):
                w = _row_weights(updated, names, combo, n)
                base = family.obs_index + sum(
                    family.latent_strides[o] * s for o, s in zip(names, combo)
                )
                for l in range(states):
                    log_q[:, l] += w * table[base + stride * l, family.child_values]
        if not np.all(np.isfinite(log_q)):
            raise InconsistentStateError(
                f"non-finite responsibilities for {latent!r}; q_theta is degenerate"
            )
        log_q -= logsumexp(log_q, axis=1, keepdims=True)
        updated[latent] = np.exp(log_q)
    return updated


def _m_step(binding: _Binding, q_latent, prior: FamilyPrior) -> Dict[str, np.ndarray]:
    q_theta = {}
    n = binding.data.n_rows
    for node, family in binding.families.items():
        table = prior.for_family(node, (family.j_count, family.node_card))
        if family.static_counts is not None:
            table += family.static_counts
        elif family.node_is_latent:
            table[0] += q_latent[node].sum(axis=0)
        else:
            for names, combo in family.latent_configurations():
                w = _row_weights(q_latent, names, combo, n)
                j = family.obs_index + sum(
                    family.latent_strides[o] * s for o, s in zip(names, combo)
                )
                np.add.at(table, (j, family.child_values), w)
        q_theta[node] = table
    return q_theta


def _log_beta(table: np.ndarray) -> np.ndarray:
    return gammaln(table).sum(axis=1) - gammaln(table.sum(axis=1))


def _family_terms(binding: _Binding, q_theta, prior: FamilyPrior) -> float:
    total = 0.0
    for node, family in binding.families.items():
        prior_table = prior.for_family(node, (family.j_count, family.node_card))
        total += float(np.sum(_log_beta(q_theta[node]) - _log_beta(prior_table)))
    return total


def _entropy(q: np.ndarray) -> float:
    return float(-np.sum(xlogy(q, q)))


def _check_fixed_point(binding, q_theta, q_latent, prior) -> None:
    recomputed = _m_step(binding, q_latent, prior)
    for node, table in recomputed.items():
        if not np.allclose(q_theta[node], table, rtol=1e-9, atol=1e-8):
            raise InconsistentStateError(
                f"q_theta[{node!r}] is not the VB-M update of q_latent; "
                f"the closed-form bound would be wrong"
            )


def _elbo(binding: _Binding, q_theta, q_latent, prior: FamilyPrior) -> float:
    total = _family_terms(binding, q_theta, prior)
    for latent in binding.latent_names:
        total += _entropy(q_latent[latent])
    return total


# -- public operations -------------------------------------------------------

def vb_e_step(
    model: LatentizedDag,
    data: Dataset,
    q_theta: Mapping[str, np.ndarray],
    q_latent: Optional[Mapping[str, np.ndarray]] = None,
) -> Dict[str, np.ndarray]:
    """Responsibilities from expected log parameters (one sweep).

    With several latents the sweep is sequential in canonical name order,
    each update conditioning on the freshest values of the others; pass
    ``q_latent`` to resume from existing responsibilities instead of the
    uniform starting point.
    """
    binding = _Binding(model, data)
    binding.check_q_theta(q_theta)
    if q_latent is None:
        q_latent = binding.uniform_responsibilities()
    else:
        binding.check_q_latent(q_latent)
    return _e_step(binding, q_theta, q_latent)


def vb_m_step(
    model: LatentizedDag,
    data: Dataset,
    q_latent: Mapping[str, np.ndarray],
    prior: Optional[FamilyPrior] = None,
) -> Dict[str, np.ndarray]:
    """Posterior Dirichlet parameters: prior plus expected counts."""
    binding = _Binding(model, data)
    binding.check_q_latent(q_latent)
    return _m_step(binding, q_latent, prior or FamilyPrior())


def elbo(
    model: LatentizedDag,
    data: Dataset,
    state: VariationalState,
    prior: Optional[FamilyPrior] = None,
) -> float:
    """Closed-form bound at the VB-M fixed point.

    Refuses (InconsistentStateError) when ``state.q_theta`` is not the VB-M
    update of ``state.q_latent``: away from the fixed point this formula is
    not the bound, and silently returning it would corrupt every comparison
    built on top.
    """
    binding = _Binding(model, data)
    binding.check_q_theta(state.q_theta)
    binding.check_q_latent(state.q_latent)
    prior = prior or FamilyPrior()
    _check_fixed_point(binding, state.q_theta, state.q_latent, prior)
    return _elbo(binding, state.q_theta, state.q_latent, prior)


def p_elbo(elbo_value: float, spec: LatentSpec) -> float:
    """Penalised bound: subtract log(states!) per latent.

    Permuting a latent's state labels yields |L_i|! parameterisations with
    identical fit; the penalty makes scores of different cardinalities
    comparable.
    """
    penalty = sum(math.log(math.factorial(l.states)) for l in spec.latents)
    return elbo_value - penalty


def run_vbem(
    model: LatentizedDag,
    data: Dataset,
    prior: Optional[FamilyPrior] = None,
    c: float = DEFAULT_CONVERGENCE,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    max_iterations: int = DEFAULT_ITERATION_CAP,
) -> Tuple[VariationalState, ScoreReport]:
    """Fit the surrogate posterior, keeping the best of seeded restarts.

    Each restart draws row responsibilities from a flat Dirichlet, then
    alternates E and M steps until the bound improves by less than ``c``
    or ``max_iterations`` passes elapse. The best final bound wins; ties go
    to the earliest restart, so results are reproducible bit for bit.
    """
    if not (c > 0):
        raise ValueError("convergence threshold must be positive")
    if restarts < 1 or max_iterations < 1:
        raise ValueError("restarts and max_iterations must be at least 1")
    binding = _Binding(model, data)
    prior = prior or FamilyPrior()

    if not binding.latent_names:
        q_theta = _m_step(binding, {}, prior)
        value = _elbo(binding, q_theta, {}, prior)
        state = VariationalState(q_theta, {}, (value,))
        report = ScoreReport(
            elbo=value,
            p_elbo=p_elbo(value, model.spec),
            iterations=1,
            converged=True,
            restarts_used=1,
        )
        return state, report

    best: Optional[Tuple[VariationalState, bool]] = None
    for restart in range(restarts):
        rng = np.random.default_rng(derive_seed(seed, "restart", restart))
        q_latent = {
            name: rng.dirichlet(
                np.ones(binding.latent_cards[name]), size=binding.data.n_rows
            )
            for name in binding.latent_names
        }
        q_theta = _m_step(binding, q_latent, prior)
        trace = [_elbo(binding, q_theta, q_latent, prior)]
        converged = False
        for _ in range(max_iterations):
            q_latent = _e_step(binding, q_theta, q_latent)
            q_theta = _m_step(binding, q_latent, prior)
            trace.append(_elbo(binding, q_theta, q_latent, prior))
            if abs(trace[-1] - trace[-2]) < c:
                converged = True
                break
        if best is None or trace[-1] > best[0].elbo_trace[-1]:
            best = (VariationalState(q_theta, q_latent, tuple(trace)), converged)

    state, converged = best
    value = state.elbo_trace[-1]
    report = ScoreReport(
        elbo=value,
        p_elbo=p_elbo(value, model.spec),
        iterations=len(state.elbo_trace),
        converged=converged,
        restarts_used=restarts,
    )
    return state, report


def score_subgraph(
    model: LatentizedDag,
    data: Dataset,
    state: VariationalState,
    latents_of_interest: Sequence[str],
    prior: Optional[FamilyPrior] = None,
) -> float:
    """Bound contribution of the listed latents and their children.

    Sums the family terms of those nodes plus the listed latents' entropy.
    Between two models that agree outside this subgraph, differences of
    this score equal differences of the full bound, so it stands in for the
    bound when comparing latent cardinalities locally.
    """
    interest = sorted(set(latents_of_interest))
    known = set(model.spec.names)
    unknown = [l for l in interest if l not in known]
    if unknown:
        raise ValueError(f"unknown latents: {unknown}")
    binding = _Binding(model, data)
    binding.check_q_theta(state.q_theta)
    binding.check_q_latent(state.q_latent)
    prior = prior or FamilyPrior()
    _check_fixed_point(binding, state.q_theta, state.q_latent, prior)
    scope = set(interest)
    for latent in interest:
        scope.update(binding.model.dag.children(latent))
    total = 0.0
    for node in sorted(scope):
        family = binding.families[node]
        prior_table = prior.for_family(node, (family.j_count, family.node_card))
        total += float(np.sum(_log_beta(state.q_theta[node]) - _log_beta(prior_table)))
    for latent in interest:
        total += _entropy(state.q_latent[latent])
    return total
