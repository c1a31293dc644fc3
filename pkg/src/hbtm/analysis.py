"""Downstream analysis of fitted trait mixtures.

Clusters traces into two groups on their trait mixtures alone, compares the
groups' grades with unequal-variance t-tests, correlates each trait with each
grade type, and exports per-trait distribution profiles as plot-ready tables.
Reports use 1-based trait and event numbering; everything internal stays
0-based.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import betainc

from .core import Posterior, to_one_based

GRADE_TYPES = ("SA", "SFE", "FE")
GRADE_RANGES = {"SA": (0.0, 5.0), "FE": (0.0, 100.0)}


class TTestResult(NamedTuple):
    t: float
    df: float
    p: float


class PearsonResult(NamedTuple):
    r: float
    p: float
    n: int


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    wcss: float
    iterations: int


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t via the regularized incomplete beta."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


def welch_t_test(a, b) -> TTestResult:
    """Unequal-variance two-sample t-test with Welch-Satterthwaite df.

    Both samples need at least two values. When both variances are zero the
    statistic is degenerate: equal means give (0, pooled df, 1) and unequal
    means give a signed infinite t with p = 0 by convention.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least 2 observations")
    ma = math.fsum(a) / na
    mb = math.fsum(b) / nb
    va = math.fsum((v - ma) ** 2 for v in a) / (na - 1)
    vb = math.fsum((v - mb) ** 2 for v in b) / (nb - 1)
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    if se2 == 0.0:
        pooled_df = float(na + nb - 2)
        if ma == mb:
            return TTestResult(0.0, pooled_df, 1.0)
        return TTestResult(math.copysign(math.inf, ma - mb), pooled_df, 0.0)
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    return TTestResult(t, df, student_t_two_sided_p(t, df))


def pearson(x, y) -> PearsonResult:
    """Sample correlation with a two-sided p from the exact t transform.

    Needs n >= 3 paired values and non-constant inputs; |r| = 1 gives p = 0.
    """
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n = len(x)
    if len(y) != n:
        raise ValueError("x and y must have equal lengths")
    if n < 3:
        raise ValueError("need at least 3 pairs")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    vx = math.fsum(d * d for d in dx)
    vy = math.fsum(d * d for d in dy)
    if vx == 0.0 or vy == 0.0:
        raise ValueError("correlation undefined for a constant input")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(vx * vy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return PearsonResult(r, 0.0, n)
    df = n - 2
    t = r * math.sqrt(df / (1.0 - r * r))
    return PearsonResult(r, student_t_two_sided_p(t, df), n)


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _wcss(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            u = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))  # duplicate points: any choice is equivalent
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(points, k: int, seed: int = 0, max_iters: int = 100, restarts: int = 10) -> KMeansResult:
    """Lloyd iterations from seeded k-means++ starts; best of ``restarts`` kept.

    Runs to an assignment fixpoint or max_iters; within-cluster sum of
    squares never increases across iterations. A cluster emptied by
    reassignment is reseeded with the point farthest from its centroid.
    Deterministic given the seed.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError("points must be a 2-d array")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"cluster count must satisfy 1 <= k <= {n}, got {k}")
    if not np.all(np.isfinite(points)):
        raise ValueError("points must be finite")
    rng = np.random.default_rng(seed)

    best: KMeansResult | None = None
    for _ in range(max(1, restarts)):
        centroids = _kmeans_pp_init(points, k, rng)
        labels = _assign(points, centroids)
        iterations = 0
        for _ in range(max_iters):
            iterations += 1
            new_centroids = centroids.copy()
            for j in range(k):
                members = points[labels == j]
                if len(members):
                    new_centroids[j] = members.mean(axis=0)
                else:
                    farthest = int(np.argmax(((points - centroids[labels]) ** 2).sum(axis=1)))
                    new_centroids[j] = points[farthest]
            new_labels = _assign(points, new_centroids)
            converged = bool(np.array_equal(new_labels, labels))
            centroids, labels = new_centroids, new_labels
            if converged:
                break
        candidate = KMeansResult(labels, centroids, _wcss(points, centroids, labels), iterations)
        if best is None or candidate.wcss < best.wcss:
            best = candidate
    return best


@dataclass(frozen=True)
class GradeTable:
    """Per-trace grades; a missing score is stored as None.

    SA is the session assessment (0-5), SFE the session-aligned final-exam
    problem score, FE the total final exam (0-100).
    """

    scores: dict[str, dict[str, float | None]]

    def __post_init__(self):
        for trace_id, row in self.scores.items():
            for grade_type in GRADE_TYPES:
                value = row.get(grade_type)
                if value is None:
                    continue
                bounds = GRADE_RANGES.get(grade_type)
                if bounds and not bounds[0] <= value <= bounds[1]:
                    raise ValueError(
                        f"{grade_type} for '{trace_id}' is {value}, outside {bounds}"
                    )

    def get(self, trace_id: str, grade_type: str) -> float | None:
        row = self.scores.get(trace_id)
        return None if row is None else row.get(grade_type)

    @classmethod
    def from_csv(cls, path) -> "GradeTable":
        """Load ``trace_id,SA,SFE,FE`` rows; blank cells mean missing."""
        scores: dict[str, dict[str, float | None]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            needed = {"trace_id", *GRADE_TYPES}
            if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
                raise ValueError(f"grades CSV must have columns {sorted(needed)}")
            for row in reader:
                trace_id = row["trace_id"].strip()
                if trace_id in scores:
                    raise ValueError(f"duplicate trace_id '{trace_id}' in grades CSV")
                scores[trace_id] = {
                    g: (float(row[g]) if row[g] is not None and row[g].strip() else None)
                    for g in GRADE_TYPES
                }
        return cls(scores)


@dataclass(frozen=True)
class AnalysisReport:
    """Cluster labels, grade-group t-tests and per-trait correlations."""

    threshold: float
    cluster_sizes: list[int]
    cluster_labels: dict[str, int]
    ttests: dict[str, dict]
    correlations: list[dict]

    def significant_correlations(self) -> list[dict]:
        return [c for c in self.correlations if c.get("significant")]

    def to_json_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "cluster_sizes": list(self.cluster_sizes),
            "cluster_labels": dict(self.cluster_labels),
            "ttests": self.ttests,
            "correlations": self.correlations,
        }


def _canonical_cluster_order(labels: np.ndarray, centroids: np.ndarray, k: int) -> list[int]:
    """Order clusters by descending size, ties by lexicographic centroid."""
    sizes = [int((labels == j).sum()) for j in range(k)]
    return sorted(range(k), key=lambda j: (-sizes[j], tuple(centroids[j])))


def run_analysis(fit, grades: GradeTable, threshold: float = 0.05, seed: int = 0) -> AnalysisReport:
    """Cluster trait mixtures into two groups and relate them to grades.

    All traces are clustered on their theta rows; each grade comparison then
    uses the traces that carry that grade. Cluster ids are reported largest
    first so output is stable under label swaps. Correlation entries carry
    1-based trait numbers and the sign of r; entries that cannot be computed
    (too few scores, constant inputs) are kept with a skip reason.
    """
    theta = fit.posterior.theta
    trace_ids = list(fit.trace_ids)
    if len(trace_ids) != theta.shape[0]:
        raise ValueError("fit trace_ids do not match theta rows")
    joined = [tid for tid in trace_ids if tid in grades.scores]
    if not joined:
        raise ValueError("empty join: no fitted trace_id appears in the grade table")

    km = kmeans(theta, 2, seed=seed)
    order = _canonical_cluster_order(km.labels, km.centroids, 2)
    relabel = {old: new for new, old in enumerate(order)}
    labels = [relabel[int(v)] for v in km.labels]
    cluster_labels = dict(zip(trace_ids, labels))
    cluster_sizes = [labels.count(0), labels.count(1)]

    ttests: dict[str, dict] = {}
    for grade_type in GRADE_TYPES:
        groups: tuple[list[float], list[float]] = ([], [])
        for tid, lab in zip(trace_ids, labels):
            value = grades.get(tid, grade_type)
            if value is not None:
                groups[lab].append(value)
        sizes = [len(groups[0]), len(groups[1])]
        if min(sizes) < 2:
            ttests[grade_type] = {
                "group_sizes": sizes,
                "skipped": "fewer than 2 scored traces in a cluster",
            }
            continue
        result = welch_t_test(groups[0], groups[1])
        degenerate = not math.isfinite(result.t)
        ttests[grade_type] = {
            "group_sizes": sizes,
            "group_means": [
                math.fsum(groups[0]) / sizes[0],
                math.fsum(groups[1]) / sizes[1],
            ],
            "t": None if degenerate else result.t,
            "df": result.df,
            "p": result.p,
            "significant": result.p < threshold,
            **({"degenerate": True} if degenerate else {}),
        }

    correlations: list[dict] = []
    num_traits = theta.shape[1]
    index_of = {tid: m for m, tid in enumerate(trace_ids)}
    for k in range(num_traits):
        for grade_type in GRADE_TYPES:
            xs, ys = [], []
            for tid in trace_ids:
                value = grades.get(tid, grade_type)
                if value is not None:
                    xs.append(float(theta[index_of[tid], k]))
                    ys.append(value)
            entry = {"trait": to_one_based(k), "grade": grade_type, "n": len(xs)}
            if len(xs) < 3:
                entry["skipped"] = "fewer than 3 scored traces"
            else:
                try:
                    result = pearson(xs, ys)
                except ValueError as exc:
                    entry["skipped"] = str(exc)
                else:
                    entry.update(
                        r=result.r,
                        p=result.p,
                        significant=result.p < threshold,
                        sign="+" if result.r > 0 else "-",
                    )
            correlations.append(entry)

    return AnalysisReport(
        threshold=threshold,
        cluster_sizes=cluster_sizes,
        cluster_labels=cluster_labels,
        ttests=ttests,
        correlations=correlations,
    )


@dataclass(frozen=True)
class TraitProfile:
    """One trait's event distribution plus its per-event time and interaction rows."""

    trait: int  # 0-based
    event_labels: tuple[str, ...]
    event_probs: np.ndarray  # (E,)
    time_probs: np.ndarray  # (E, T)
    interaction_probs: np.ndarray  # (E, I)


def export_trait(posterior: Posterior, k: int, event_labels=None) -> TraitProfile:
    """Plot-ready distributions for trait k (0-based).

    Emits the trait's event distribution and, for every event, its time-bin
    and interaction-level rows.
    """
    if not 0 <= k < posterior.num_traits:
        raise ValueError(f"trait index {k} outside [0, {posterior.num_traits})")
    num_events = posterior.phi.shape[1]
    if event_labels is None:
        event_labels = tuple(f"event {e + 1}" for e in range(num_events))
    event_labels = tuple(event_labels)
    if len(event_labels) != num_events:
        raise ValueError("event_labels length must match the event count")
    return TraitProfile(
        trait=k,
        event_labels=event_labels,
        event_probs=posterior.phi[k].copy(),
        time_probs=posterior.psi[k].copy(),
        interaction_probs=posterior.tau[k].copy(),
    )


def trait_profile_to_csv(profile: TraitProfile, header_comment: str | None = None) -> str:
    """Render a profile as kind,event_label,bin_index,probability rows.

    Bin indices are 1-based. Probabilities are written with full float
    precision so parsing the text recovers the source values exactly.
    """
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kind", "event_label", "bin_index", "probability"])
    for e, label in enumerate(profile.event_labels):
        writer.writerow(["event", label, e + 1, repr(float(profile.event_probs[e]))])
    for e, label in enumerate(profile.event_labels):
        for t in range(profile.time_probs.shape[1]):
            writer.writerow(["time", label, t + 1, repr(float(profile.time_probs[e, t]))])
    for e, label in enumerate(profile.event_labels):
        for i in range(profile.interaction_probs.shape[1]):
            writer.writerow(
                ["interaction", label, i + 1, repr(float(profile.interaction_probs[e, i]))]
            )
    return buf.getvalue()


def parse_trait_profile(text: str, trait: int = 0) -> TraitProfile:
    """Rebuild a TraitProfile from its CSV text; comment lines are skipped."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if header != ["kind", "event_label", "bin_index", "probability"]:
        raise ValueError(f"unexpected profile header: {header}")
    events: list[tuple[str, float]] = []
    time_vals: list[float] = []
    inter_vals: list[float] = []
    for kind, label, _idx, prob in reader:
        if kind == "event":
            events.append((label, float(prob)))
        elif kind == "time":
            time_vals.append(float(prob))
        elif kind == "interaction":
            inter_vals.append(float(prob))
        else:
            raise ValueError(f"unknown profile row kind {kind!r}")
    num_events = len(events)
    if num_events == 0 or len(time_vals) % num_events or len(inter_vals) % num_events:
        raise ValueError("profile rows do not tile into per-event tables")
    labels = tuple(lbl for lbl, _ in events)
    t = len(time_vals) // num_events
    i = len(inter_vals) // num_events
    return TraitProfile(
        trait=trait,
        event_labels=labels,
        event_probs=np.array([p for _, p in events]),
        time_probs=np.array(time_vals).reshape(num_events, t),
        interaction_probs=np.array(inter_vals).reshape(num_events, i),
    )
