"""Reproduction metrics: velocity RMSE, cosine dissimilarity and DTW distance."""
from dataclasses import asdict, dataclass, field
import json
import math

import numpy as np

from .dynamics import rollout
from .errors import DivergenceError, PreconditionError

__all__ = ["rmse", "cosine_similarity", "dtwd", "predict_velocities", "evaluate",
           "TrajectoryScore", "EvaluationReport"]

_TINY = 1e-9


def _trajectories(data):
    trs = data.subset("test") if hasattr(data, "subset") else list(data)
    if not trs:
        raise PreconditionError("no test trajectories")
    return trs


def predict_velocities(tr, system, sample_rate=None):
    """Reference and predicted velocities for one trajectory.

    First order compares ``v_i`` with ``f(x_i)``. Second order samples one
    step ahead: ``v_{i+1}`` against ``v_i + f(x_i, v_i) / h``.
    """
    if system.order == 1:
        return tr.v, system(tr.x)
    if sample_rate is None:
        raise PreconditionError("second-order prediction needs the sample rate")
    if len(tr) < 2:
        raise PreconditionError("second-order prediction needs two samples")
    pred = tr.v[:-1] + system(tr.x[:-1], tr.v[:-1]) / sample_rate
    return tr.v[1:], pred


def _rmse_terms(ref, pred):
    return np.sum((ref - pred) ** 2, axis=-1)


def _cs_terms(ref, pred):
    nr = np.linalg.norm(ref, axis=-1)
    npd = np.linalg.norm(pred, axis=-1)
    ok = (nr >= _TINY) & (npd >= _TINY)
    cos = np.sum(ref[ok] * pred[ok], axis=-1) / (nr[ok] * npd[ok])
    return np.abs(1.0 - cos), int(np.count_nonzero(~ok))


def rmse(data, system, sample_rate=None):
    """``sqrt(mean |v_ref - v_DS|^2)`` pooled over all test samples."""
    terms = [_rmse_terms(*predict_velocities(tr, system, sample_rate)) for tr in _trajectories(data)]
    return math.sqrt(math.fsum(np.concatenate(terms)) / sum(t.size for t in terms))


def cosine_similarity(data, system, sample_rate=None, return_skipped=False):
    """Mean of ``|1 - cos(v_ref, v_DS)|``; near-zero vectors are skipped and tallied."""
    vals, skipped = [], 0
    for tr in _trajectories(data):
        v, s = _cs_terms(*predict_velocities(tr, system, sample_rate))
        vals.append(v)
        skipped += s
    vals = np.concatenate(vals)
    cs = math.fsum(vals) / vals.size if vals.size else math.nan
    return (cs, skipped) if return_skipped else cs


def dtwd(a, b):
    """Dynamic time warping distance with Euclidean point cost.

    Full window, steps (1,0), (0,1), (1,1); the path cost is the sum of
    point distances. The table is filled one anti-diagonal at a time.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0 or a.shape[1] != b.shape[1]:
        raise PreconditionError("trajectories must be nonempty with equal dimension")
    n, m = a.shape[0], b.shape[0]
    cost = np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))
    R = np.full((n + 1, m + 1), np.inf)
    R[0, 0] = 0.0
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(R[i - 1, j], R[i, j - 1]), R[i - 1, j - 1])
        R[i, j] = cost[i - 1, j - 1] + best
    return float(R[n, m])


@dataclass
class TrajectoryScore:
    index: int
    rmse: float
    cs: float
    dtwd: float
    samples: int
    cs_skipped: int = 0
    failed: bool = False
    failure: str = ""


@dataclass
class EvaluationReport:
    mode: str
    sample_rate: float
    rmse: float
    cs: float
    dtwd: float
    cs_skipped: int
    failed: bool
    trajectories: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["trajectories"] = [TrajectoryScore(**t) for t in data.get("trajectories", [])]
        return cls(**data)

    def to_json(self):
        # NaN is emitted as the bare token NaN, which json.loads accepts
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def table(self):
        lines = [f"{'traj':>5} {'RMSE':>12} {'CS':>12} {'DTWD':>12}"]
        for t in self.trajectories:
            flag = "  (rollout failed)" if t.failed else ""
            lines.append(f"{t.index:>5} {t.rmse:12.6g} {t.cs:12.6g} {t.dtwd:12.6g}{flag}")
        lines.append(f"{'all':>5} {self.rmse:12.6g} {self.cs:12.6g} {self.dtwd:12.6g}")
        return "\n".join(lines)


def evaluate(system, dataset, split="test", method="rk4", indices=None):
    """Score a system on the trajectories of ``dataset[split]``.

    Velocity metrics use the dataset's sample rate ``h``; DTWD compares each
    trajectory with a rollout from its initial state (and velocity) at step
    ``1/h``. A diverging rollout marks that trajectory as failed and the
    aggregate DTWD is taken over the remainder.
    """
    h = dataset.sample_rate
    if indices is None:
        indices = {"train": dataset.train, "test": dataset.test,
                   "all": list(range(len(dataset.trajectories)))}[split]
    if not indices:
        raise PreconditionError(f"{split} split is empty")
    scores, r_all, c_all, skipped = [], [], [], 0
    for idx in indices:
        tr = dataset.trajectories[idx]
        ref, pred = predict_velocities(tr, system, h)
        rt = _rmse_terms(ref, pred)
        ct, sk = _cs_terms(ref, pred)
        r_all.append(rt)
        c_all.append(ct)
        skipped += sk
        score = TrajectoryScore(idx, math.sqrt(math.fsum(rt) / rt.size),
                                math.fsum(ct) / ct.size if ct.size else math.nan,
                                math.nan, len(tr), sk)
        try:
            ro = rollout(system, tr.x[0], tr.v[0] if system.order == 2 else None, dt=1.0 / h,
                         steps=len(tr) - 1, method=method, stop_at_convergence=False)
            score.dtwd = dtwd(tr.x, ro.x)
        except DivergenceError as exc:
            score.failed = True
            score.failure = str(exc)
        scores.append(score)
    r_all = np.concatenate(r_all)
    c_all = np.concatenate(c_all)
    ok = [s.dtwd for s in scores if not s.failed]
    return EvaluationReport(
        mode="first" if system.order == 1 else "second",
        sample_rate=h,
        rmse=math.sqrt(math.fsum(r_all) / r_all.size),
        cs=math.fsum(c_all) / c_all.size if c_all.size else math.nan,
        dtwd=math.fsum(ok) / len(ok) if ok else math.nan,
        cs_skipped=skipped,
        failed=any(s.failed for s in scores),
        trajectories=scores,
    )
