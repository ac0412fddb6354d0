"""Remaining-output-length prediction and rank-fidelity evaluation.

The scheduling priority of a request is the predicted total output of its
workflow from the current stage onward, under the model it was assigned
to. What matters for queue ordering is rank fidelity, so predictors are
evaluated by Kendall tau distance (fraction of inverted pairs) against
the true remaining lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrainingSet, LengthMismatch, ValidationError
from .seeding import stable_normal
from .workload import Request, TraceRecord


class Predictor:
    name = "predictor"

    def predict(self, req: Request, rec: TraceRecord, model_id: str) -> float:
        """Estimated total remaining output tokens for (request, model)."""
        raise NotImplementedError


class OraclePredictor(Predictor):
    """Ground-truth remaining output tokens from the trace."""

    name = "oracle"

    def predict(self, req, rec, model_id):
        return float(rec.remaining_tokens(req.stage_index, model_id))


class InputLengthPredictor(Predictor):
    """Uses the request's input length as a proxy for remaining work."""

    name = "input-length"

    def predict(self, req, rec, model_id):
        return float(req.input_tokens)


class NoisyOraclePredictor(Predictor):
    """Oracle scaled by multiplicative lognormal noise exp(sigma * z)."""

    name = "noisy-oracle"

    def __init__(self, sigma: float, seed: int):
        if sigma < 0:
            raise ValidationError("sigma must be >= 0")
        self.sigma = sigma
        self.seed = seed

    def predict(self, req, rec, model_id):
        truth = float(rec.remaining_tokens(req.stage_index, model_id))
        z = stable_normal("predictor", self.seed, req.program_id, req.stage_index, model_id)
        return truth * math.exp(self.sigma * z)


class EmpiricalQuantilePredictor(Predictor):
    """Per-key empirical quantile of remaining lengths from a training trace.

    The key is (workflow_id, stage_index, model_id); unseen keys fall back
    to (stage_index, model_id), then (model_id,), then a global quantile.
    Training is eager: the quantiles are precomputed, after which the
    predictor is immutable and freely shareable.
    """

    name = "quantile"

    def __init__(self, training: list[TraceRecord], quantile: float = 0.5):
        if not 0.0 < quantile < 1.0:
            raise ValidationError(f"quantile must be in (0,1), got {quantile}")
        self.quantile = quantile
        by_key: dict[tuple, list[float]] = {}
        by_stage_model: dict[tuple, list[float]] = {}
        by_model: dict[str, list[float]] = {}
        all_values: list[float] = []
        for rec in training:
            for st in rec.stages:
                for mid in sorted(st.models):
                    y = float(rec.remaining_tokens(st.stage_index, mid))
                    by_key.setdefault((rec.workflow_id, st.stage_index, mid), []).append(y)
                    by_stage_model.setdefault((st.stage_index, mid), []).append(y)
                    by_model.setdefault(mid, []).append(y)
                    all_values.append(y)
        if not all_values:
            raise EmptyTrainingSet("no training values at any fallback level")
        q = quantile
        self._by_key = {k: float(np.quantile(v, q)) for k, v in by_key.items()}
        self._by_stage_model = {k: float(np.quantile(v, q)) for k, v in by_stage_model.items()}
        self._by_model = {k: float(np.quantile(v, q)) for k, v in by_model.items()}
        self._global = float(np.quantile(all_values, q))

    def predict(self, req, rec, model_id):
        key = (req.workflow_id, req.stage_index, model_id)
        if key in self._by_key:
            return self._by_key[key]
        if (req.stage_index, model_id) in self._by_stage_model:
            return self._by_stage_model[(req.stage_index, model_id)]
        if model_id in self._by_model:
            return self._by_model[model_id]
        return self._global


def build_predictor(
    spec: str, seed: int = 0, training: list[TraceRecord] | None = None
) -> Predictor:
    """Build a predictor from a CLI spec string.

    Accepted forms: "oracle", "quantile[:Q]", "input-length", "noisy-oracle:S".
    """
    kind, _, arg = spec.partition(":")
    if kind == "oracle":
        return OraclePredictor()
    if kind == "input-length":
        return InputLengthPredictor()
    if kind == "noisy-oracle":
        return NoisyOraclePredictor(float(arg or 0.5), seed)
    if kind == "quantile":
        if not training:
            raise ValidationError("quantile predictor needs a training trace")
        return EmpiricalQuantilePredictor(training, float(arg or 0.5))
    raise ValidationError(f"unknown predictor spec {spec!r}")


def _count_inversions(values: list[float]) -> int:
    """Strict inversions (a later element smaller than an earlier one)."""
    n = len(values)
    if n < 2:
        return 0
    buf = list(values)
    tmp = [0.0] * n
    count = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if buf[j] < buf[i]:
                    tmp[k] = buf[j]
                    count += mid - i
                    j += 1
                else:
                    tmp[k] = buf[i]
                    i += 1
                k += 1
            tmp[k:hi] = buf[i:mid] if i < mid else buf[j:hi]
            buf[lo:hi] = tmp[lo:hi]
        width *= 2
    return count


def _tie_pairs(values: list[float]) -> int:
    pairs = 0
    run = 1
    for prev, cur in zip(values, values[1:]):
        if cur == prev:
            run += 1
        else:
            pairs += run * (run - 1) // 2
            run = 1
    pairs += run * (run - 1) // 2
    return pairs


def kendall_tau_distance(predicted: list[float], truth: list[float]) -> float:
    """Fraction of discordant pairs between two rankings, in [0, 1].

    Pairs tied in exactly one of the two sequences count as half
    discordant; pairs tied in both count as concordant. 0 means identical
    ordering, 1 means exactly reversed.
    """
    if len(predicted) != len(truth):
        raise LengthMismatch(
            f"predicted has {len(predicted)} values, truth has {len(truth)}"
        )
    n = len(predicted)
    if n < 2:
        raise LengthMismatch("need at least 2 values to compare rankings")
    order = sorted(range(n), key=lambda i: (predicted[i], truth[i]))
    p_sorted = [predicted[i] for i in order]
    t_sorted = [truth[i] for i in order]
    # Sorting ascending by (p, t) makes equal-p groups internally sorted in
    # t, so strict inversions of t_sorted are exactly the discordant pairs.
    discordant = _count_inversions(t_sorted)
    ties_p = _tie_pairs(p_sorted)
    ties_t = _tie_pairs(sorted(truth))
    ties_both = _tie_pairs(_pair_run_lengths(p_sorted, t_sorted))
    half = (ties_p - ties_both) + (ties_t - ties_both)
    total = n * (n - 1) // 2
    return (discordant + 0.5 * half) / total


def _pair_run_lengths(p_sorted: list[float], t_sorted: list[float]) -> list[float]:
    # Helper for counting pairs tied in both sequences: collapse the
    # (p, t)-sorted stream into a sequence whose equal runs are the joint
    # ties, then reuse _tie_pairs via a synthetic value per run.
    out: list[float] = []
    run_id = 0
    for i in range(len(p_sorted)):
        if i > 0 and not (p_sorted[i] == p_sorted[i - 1] and t_sorted[i] == t_sorted[i - 1]):
            run_id += 1
        out.append(float(run_id))
    return out


def evaluate_predictor(
    predictor: Predictor,
    test: list[TraceRecord],
    model_id: str,
) -> float:
    """Kendall tau distance of `predictor` vs. ground truth on one model.

    The ranked population is every (program, stage) request in the test
    trace, with inputs accumulated under `model_id`.
    """
    predicted: list[float] = []
    truth: list[float] = []
    for rec in test:
        carried = 0
        for st in rec.stages:
            req = Request(
                program_id=rec.program_id,
                stage_index=st.stage_index,
                input_tokens=st.base_input_tokens + carried,
                arrival_time=0.0,
                workflow_id=rec.workflow_id,
                role=st.role,
            )
            predicted.append(predictor.predict(req, rec, model_id))
            truth.append(float(rec.remaining_tokens(st.stage_index, model_id)))
            carried += rec.carried_context(st.stage_index, model_id)
    return kendall_tau_distance(predicted, truth)


def arrival_order_distance(test: list[TraceRecord], model_id: str) -> float:
    """Kendall tau distance of first-come ordering (the no-predictor row)."""
    truth: list[float] = []
    for rec in test:
        for st in rec.stages:
            truth.append(float(rec.remaining_tokens(st.stage_index, model_id)))
    predicted = [float(i) for i in range(len(truth))]
    return kendall_tau_distance(predicted, truth)
