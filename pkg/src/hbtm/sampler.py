"""Collapsed Gibbs inference over per-token trait assignments.

The Dirichlet-distributed parameters are integrated out analytically, leaving
a Markov chain over the discrete assignments alone. For token (m, n) with
observed (e, t, i) and all counts excluding that token, the full conditional
weight of trait k is

    (N_mk + alpha) * (N_ke + beta)  / (N_k + E*beta)
                   * (N_ket + gamma) / (N_ke + T*gamma)
                   * (N_kei + delta) / (N_ke + I*delta)

Sweeps visit tokens in trace order, then token order; this sequential scan is
part of the contract and makes runs with equal seeds bit-identical. One chain
owns its ModelState; concurrent chains need distinct states and seeds.

Count tables are plain nested lists: the per-token update loop dominates the
cost of a fit, and scalar list indexing beats array indexing at that grain.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .core import Corpus, Hyperparams, Posterior, estimate_posterior, validate_corpus


class CountConsistencyError(RuntimeError):
    """Raised when a sampler state's count tables disagree with its assignments."""


@dataclass(frozen=True)
class FitConfig:
    """Chain length, thinning, seed and smoothing for one fit."""

    num_traits: int
    sweeps: int = 2000
    burn_in: int = 1000
    sample_stride: int = 10
    seed: int = 0
    hyper: Hyperparams = field(default_factory=Hyperparams)
    audit_every: int = 0  # 0 disables the per-sweep count audit

    def __post_init__(self):
        if self.num_traits < 1:
            raise ValueError("num_traits must be at least 1")
        if self.sweeps < 1:
            raise ValueError("sweeps must be at least 1")
        if not 0 <= self.burn_in < self.sweeps:
            raise ValueError("burn_in must satisfy 0 <= burn_in < sweeps")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be at least 1")
        if (self.sweeps - self.burn_in) // self.sample_stride < 1:
            raise ValueError("no retained samples: widen sweeps or shrink stride/burn_in")
        if self.audit_every < 0:
            raise ValueError("audit_every must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "num_traits": self.num_traits,
            "sweeps": self.sweeps,
            "burn_in": self.burn_in,
            "sample_stride": self.sample_stride,
            "seed": self.seed,
            "hyper": {
                "alpha": self.hyper.alpha,
                "beta": self.hyper.beta,
                "gamma": self.hyper.gamma,
                "delta": self.hyper.delta,
            },
            "audit_every": self.audit_every,
        }


class ModelState:
    """Assignments plus the count tables that summarize them.

    Tables: n_mk (trace x trait), n_ke (trait x event), n_ket
    (trait x event x time bin), n_kei (trait x event x interaction level),
    with totals n_m per trace and n_k per trait. The flat assignment list z
    follows token order within trace order. Exactly one writer may mutate a
    state at a time.
    """

    def __init__(self, corpus: Corpus, num_traits: int, z_flat, rng: np.random.Generator):
        if num_traits < 1:
            raise ValueError("num_traits must be at least 1")
        schema = corpus.schema
        self.num_traits = num_traits
        self.num_events = schema.num_events
        self.num_time_bins = schema.num_time_bins
        self.num_interaction_levels = schema.num_interaction_levels
        self.trace_ids = [t.trace_id for t in corpus.traces]
        self.rng = rng
        self.sweep = 0

        m_idx: list[int] = []
        e_idx: list[int] = []
        t_idx: list[int] = []
        i_idx: list[int] = []
        offsets = [0]
        for m, trace in enumerate(corpus.traces):
            for tok in trace.tokens:
                m_idx.append(m)
                e_idx.append(tok.event)
                t_idx.append(tok.time_bin)
                i_idx.append(tok.interaction_level)
            offsets.append(len(m_idx))
        self._m_idx = m_idx
        self._e_idx = e_idx
        self._t_idx = t_idx
        self._i_idx = i_idx
        self._offsets = offsets

        z = [int(v) for v in z_flat]
        if len(z) != len(m_idx):
            raise ValueError("assignment vector length must equal the corpus token count")
        if any(v < 0 or v >= num_traits for v in z):
            raise ValueError("trait assignment outside [0, num_traits)")
        self.z = z
        self._tally()

    def _tally(self) -> None:
        k_n, e_n = self.num_traits, self.num_events
        t_n, i_n = self.num_time_bins, self.num_interaction_levels
        m_n = len(self._offsets) - 1
        self.n_mk = [[0] * k_n for _ in range(m_n)]
        self.n_ke = [[0] * e_n for _ in range(k_n)]
        self.n_ket = [[[0] * t_n for _ in range(e_n)] for _ in range(k_n)]
        self.n_kei = [[[0] * i_n for _ in range(e_n)] for _ in range(k_n)]
        self.n_m = [0] * m_n
        self.n_k = [0] * k_n
        for j, k in enumerate(self.z):
            m, e = self._m_idx[j], self._e_idx[j]
            t, i = self._t_idx[j], self._i_idx[j]
            self.n_mk[m][k] += 1
            self.n_ke[k][e] += 1
            self.n_ket[k][e][t] += 1
            self.n_kei[k][e][i] += 1
            self.n_m[m] += 1
            self.n_k[k] += 1

    @classmethod
    def random_init(cls, corpus: Corpus, num_traits: int, seed: int) -> "ModelState":
        rng = np.random.default_rng(seed)
        z = rng.integers(0, num_traits, size=corpus.num_tokens)
        return cls(corpus, num_traits, z.tolist(), rng)

    @classmethod
    def from_assignments(
        cls, corpus: Corpus, num_traits: int, assignments, seed: int = 0
    ) -> "ModelState":
        """Build a state with known per-trace assignments (warm starts, oracles)."""
        flat: list[int] = []
        for row in assignments:
            flat.extend(int(v) for v in row)
        return cls(corpus, num_traits, flat, np.random.default_rng(seed))

    @property
    def token_count(self) -> int:
        return len(self.z)

    @property
    def num_traces(self) -> int:
        return len(self._offsets) - 1

    def flat_index(self, m: int, n: int) -> int:
        lo, hi = self._offsets[m], self._offsets[m + 1]
        if not 0 <= n < hi - lo:
            raise IndexError(f"trace {m} has {hi - lo} tokens, asked for token {n}")
        return lo + n

    def assignments(self) -> list[list[int]]:
        return [
            self.z[self._offsets[m] : self._offsets[m + 1]] for m in range(self.num_traces)
        ]

    def decrement(self, m: int, n: int) -> int:
        """Remove token (m, n)'s current trait from every table; z keeps the value."""
        j = self.flat_index(m, n)
        k, e = self.z[j], self._e_idx[j]
        self.n_mk[m][k] -= 1
        self.n_ke[k][e] -= 1
        self.n_ket[k][e][self._t_idx[j]] -= 1
        self.n_kei[k][e][self._i_idx[j]] -= 1
        self.n_m[m] -= 1
        self.n_k[k] -= 1
        return k

    def increment(self, m: int, n: int, k: int) -> None:
        """Assign trait k to token (m, n) and add it back to every table."""
        j = self.flat_index(m, n)
        e = self._e_idx[j]
        self.z[j] = k
        self.n_mk[m][k] += 1
        self.n_ke[k][e] += 1
        self.n_ket[k][e][self._t_idx[j]] += 1
        self.n_kei[k][e][self._i_idx[j]] += 1
        self.n_m[m] += 1
        self.n_k[k] += 1

    def clone(self) -> "ModelState":
        """Independent copy of assignments, counts and rng state.

        The read-only token encodings are shared with the source state.
        """
        dup = object.__new__(ModelState)
        dup.num_traits = self.num_traits
        dup.num_events = self.num_events
        dup.num_time_bins = self.num_time_bins
        dup.num_interaction_levels = self.num_interaction_levels
        dup.trace_ids = list(self.trace_ids)
        dup.sweep = self.sweep
        dup.rng = np.random.default_rng()
        dup.rng.bit_generator.state = self.rng.bit_generator.state
        dup._m_idx = self._m_idx
        dup._e_idx = self._e_idx
        dup._t_idx = self._t_idx
        dup._i_idx = self._i_idx
        dup._offsets = self._offsets
        dup.z = list(self.z)
        dup.n_mk = [row[:] for row in self.n_mk]
        dup.n_ke = [row[:] for row in self.n_ke]
        dup.n_ket = [[row[:] for row in plane] for plane in self.n_ket]
        dup.n_kei = [[row[:] for row in plane] for plane in self.n_kei]
        dup.n_m = list(self.n_m)
        dup.n_k = list(self.n_k)
        return dup

    def count_violations(self) -> list[str]:
        """Audit: recount the tables from z and check every sum identity."""
        fresh = object.__new__(ModelState)
        fresh.num_traits = self.num_traits
        fresh.num_events = self.num_events
        fresh.num_time_bins = self.num_time_bins
        fresh.num_interaction_levels = self.num_interaction_levels
        fresh._m_idx = self._m_idx
        fresh._e_idx = self._e_idx
        fresh._t_idx = self._t_idx
        fresh._i_idx = self._i_idx
        fresh._offsets = self._offsets
        fresh.z = self.z
        fresh._tally()

        problems = []
        for name in ("n_mk", "n_ke", "n_ket", "n_kei", "n_m", "n_k"):
            if getattr(self, name) != getattr(fresh, name):
                problems.append(f"{name} differs from a from-scratch recount")
        for m, row in enumerate(self.n_mk):
            if any(v < 0 for v in row):
                problems.append(f"negative count in n_mk row {m}")
            if sum(row) != self.n_m[m]:
                problems.append(f"sum_k n_mk[{m}] != n_m[{m}]")
        for k, row in enumerate(self.n_ke):
            if sum(row) != self.n_k[k]:
                problems.append(f"sum_e n_ke[{k}] != n_k[{k}]")
            for e in range(self.num_events):
                if sum(self.n_ket[k][e]) != row[e]:
                    problems.append(f"sum_t n_ket[{k}][{e}] != n_ke[{k}][{e}]")
                if sum(self.n_kei[k][e]) != row[e]:
                    problems.append(f"sum_i n_kei[{k}][{e}] != n_ke[{k}][{e}]")
        if sum(self.n_k) != self.token_count:
            problems.append("grand total != corpus token count")
        return problems

    def audit(self) -> None:
        problems = self.count_violations()
        if problems:
            raise CountConsistencyError("; ".join(problems))


@dataclass
class FitResult:
    """Posterior averaged over retained sweeps, plus the chain's diagnostics."""

    posterior: Posterior
    final_state: ModelState | None
    log_joint_trace: list[float]
    diagnostics: dict
    trace_ids: list[str]

    def to_json_dict(self) -> dict:
        return {
            "diagnostics": self.diagnostics,
            "log_joint_trace": self.log_joint_trace,
            "posterior": self.posterior.to_dict(),
            "trace_ids": list(self.trace_ids),
        }


def save_fit_result(result: FitResult, path) -> None:
    """Write the result as JSON; reruns with equal inputs give equal bytes."""
    Path(path).write_text(
        json.dumps(result.to_json_dict(), sort_keys=True, indent=2) + "\n"
    )


def load_fit_result(path) -> FitResult:
    """Read a fit back; the in-memory chain state is not serialized."""
    data = json.loads(Path(path).read_text())
    return FitResult(
        posterior=Posterior.from_dict(data["posterior"]),
        final_state=None,
        log_joint_trace=list(data["log_joint_trace"]),
        diagnostics=data["diagnostics"],
        trace_ids=list(data["trace_ids"]),
    )


def init_state(corpus: Corpus, config: FitConfig) -> ModelState:
    """Uniform random assignments from the config seed, tables tallied to match."""
    problems = validate_corpus(corpus)
    if problems:
        raise ValueError("invalid corpus: " + "; ".join(problems[:5]))
    return ModelState.random_init(corpus, config.num_traits, config.seed)


def _raw_weights(n_mk_m, n_ke, n_ket, n_kei, n_k, e, t, i,
                 num_k, alpha, beta, ebeta, gamma, tgamma, delta, idelta):
    weights = []
    append = weights.append
    for k in range(num_k):
        ne = n_ke[k][e]
        append(
            (n_mk_m[k] + alpha) * (ne + beta)
            * (n_ket[k][e][t] + gamma) * (n_kei[k][e][i] + delta)
            / ((n_k[k] + ebeta) * (ne + tgamma) * (ne + idelta))
        )
    return weights


def conditional_weights(state: ModelState, m: int, n: int, hyper: Hyperparams) -> list[float]:
    """Unnormalized full-conditional trait weights for token (m, n).

    The token must already be decremented from every table; the weights use
    the remaining counts only. Calling this on a non-decremented state is a
    contract violation that ``count_violations`` can detect.
    """
    j = state.flat_index(m, n)
    return _raw_weights(
        state.n_mk[m], state.n_ke, state.n_ket, state.n_kei, state.n_k,
        state._e_idx[j], state._t_idx[j], state._i_idx[j],
        state.num_traits, hyper.alpha, hyper.beta, state.num_events * hyper.beta,
        hyper.gamma, state.num_time_bins * hyper.gamma,
        hyper.delta, state.num_interaction_levels * hyper.delta,
    )


def gibbs_sweep(state: ModelState, corpus: Corpus, hyper: Hyperparams) -> ModelState:
    """One full scan: every token is decremented, resampled and re-added.

    Tokens are visited in flat (trace, position) order. The sweep draws one
    block of uniforms up front, one per token, from the state's generator;
    trait k is selected as the first index whose cumulative weight exceeds
    u * total.
    """
    if corpus.num_tokens != state.token_count or corpus.num_traces != state.num_traces:
        raise ValueError("corpus does not match the state's encoded tokens")
    z = state.z
    m_idx, e_idx = state._m_idx, state._e_idx
    t_idx, i_idx = state._t_idx, state._i_idx
    n_mk, n_ke, n_ket, n_kei = state.n_mk, state.n_ke, state.n_ket, state.n_kei
    n_m, n_k = state.n_m, state.n_k
    num_k = state.num_traits
    alpha, beta = hyper.alpha, hyper.beta
    gamma, delta = hyper.gamma, hyper.delta
    ebeta = state.num_events * beta
    tgamma = state.num_time_bins * gamma
    idelta = state.num_interaction_levels * delta
    top = num_k - 1

    uniforms = state.rng.random(len(z)).tolist()
    for j in range(len(z)):
        m = m_idx[j]
        e = e_idx[j]
        t = t_idx[j]
        i = i_idx[j]
        k = z[j]
        row_m = n_mk[m]
        row_m[k] -= 1
        n_ke[k][e] -= 1
        n_ket[k][e][t] -= 1
        n_kei[k][e][i] -= 1
        n_m[m] -= 1
        n_k[k] -= 1

        weights = _raw_weights(
            row_m, n_ke, n_ket, n_kei, n_k, e, t, i,
            num_k, alpha, beta, ebeta, gamma, tgamma, delta, idelta,
        )
        cum = list(accumulate(weights))
        k = bisect_right(cum, uniforms[j] * cum[-1])
        if k > top:
            k = top

        z[j] = k
        row_m[k] += 1
        n_ke[k][e] += 1
        n_ket[k][e][t] += 1
        n_kei[k][e][i] += 1
        n_m[m] += 1
        n_k[k] += 1
    state.sweep += 1
    return state


def _dm_log_marginal(counts, concentration: float) -> float:
    """Sum over rows of the log Dirichlet-multinomial marginal.

    Each row of counts contributes log Beta(counts + prior) - log Beta(prior)
    for the symmetric prior, written in log-gamma form. Zero-count rows
    contribute exactly 0.
    """
    arr = np.asarray(counts, dtype=float)
    rows = arr.reshape(-1, arr.shape[-1])
    dim = rows.shape[1]
    row_totals = rows.sum(axis=1)
    value = rows.shape[0] * (gammaln(dim * concentration) - dim * gammaln(concentration))
    value += gammaln(rows + concentration).sum()
    value -= gammaln(row_totals + dim * concentration).sum()
    return float(value)


def collapsed_log_joint(state: ModelState, hyper: Hyperparams) -> float:
    """Log joint of assignments and observations with parameters integrated out."""
    return (
        _dm_log_marginal(state.n_mk, hyper.alpha)
        + _dm_log_marginal(state.n_ke, hyper.beta)
        + _dm_log_marginal(state.n_ket, hyper.gamma)
        + _dm_log_marginal(state.n_kei, hyper.delta)
    )


def fit(corpus: Corpus, config: FitConfig) -> FitResult:
    """Run the chain and average the retained posterior snapshots.

    After burn-in, every sample_stride-th sweep contributes one smoothed
    posterior estimate; the result is their element-wise mean. The collapsed
    log joint is recorded after every sweep. Deterministic given (corpus,
    config): identical inputs give bit-identical results.

    Averaging thinned snapshots from a single chain tolerates the small
    label-switching risk at these sizes; never average across chains.
    """
    state = init_state(corpus, config)
    hyper = config.hyper
    log_joint_trace: list[float] = []
    sums = None
    retained = 0
    audits = 0
    for sweep_no in range(1, config.sweeps + 1):
        gibbs_sweep(state, corpus, hyper)
        log_joint_trace.append(collapsed_log_joint(state, hyper))
        if config.audit_every and sweep_no % config.audit_every == 0:
            state.audit()
            audits += 1
        if sweep_no > config.burn_in and (sweep_no - config.burn_in) % config.sample_stride == 0:
            snap = estimate_posterior(state, hyper)
            if sums is None:
                sums = [snap.theta, snap.phi, snap.psi, snap.tau]
            else:
                sums[0] = sums[0] + snap.theta
                sums[1] = sums[1] + snap.phi
                sums[2] = sums[2] + snap.psi
                sums[3] = sums[3] + snap.tau
            retained += 1
    posterior = Posterior(
        sums[0] / retained, sums[1] / retained, sums[2] / retained, sums[3] / retained
    )
    diagnostics = {
        "retained_samples": retained,
        "audits_passed": audits,
        "config": config.to_dict(),
    }
    return FitResult(
        posterior=posterior,
        final_state=state,
        log_joint_trace=log_joint_trace,
        diagnostics=diagnostics,
        trace_ids=list(state.trace_ids),
    )
