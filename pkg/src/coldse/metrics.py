"""SNR, SI-SDR and L1 quality measures plus per-utterance evaluation reports."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Union

import numpy as np

from coldse.data import UtterancePair
from coldse.errors import ConfigurationError, DegenerateInputError, ShapeError
from coldse.restoration import OracleRestorer, Restorer
from coldse.sampling import SamplerConfig, run_sampler, steps_for
from coldse.schedule import Schedule

DB_CAP = 100.0

ROW_FIELDS = ("id", "method", "steps", "snr_db_in", "snr_db_out", "si_sdr_in", "si_sdr_out", "l1")
METRIC_FIELDS = ROW_FIELDS[3:]


def _pair(reference, estimate):
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise ShapeError(f"reference/estimate shapes differ: {ref.shape} vs {est.shape}")
    return ref, est


def _ratio_db(num: float, den: float) -> float:
    if num <= 0.0:
        return -DB_CAP
    if den <= 0.0 or num / den > 10.0 ** (DB_CAP / 10.0):
        return DB_CAP
    return float(np.clip(10.0 * math.log10(num / den), -DB_CAP, DB_CAP))


def snr_db(reference, estimate) -> float:
    """``10 log10(|ref|^2 / |est - ref|^2)``, clipped to +/-100 dB."""
    ref, est = _pair(reference, estimate)
    p_ref = float(np.dot(ref, ref))
    if math.sqrt(p_ref / max(ref.size, 1)) <= 1e-9:
        raise DegenerateInputError("reference signal is silent")
    err = est - ref
    return _ratio_db(p_ref, float(np.dot(err, err)))


def si_sdr_db(reference, estimate) -> float:
    """Scale-invariant SDR.

    The reference is scaled by the projection coefficient
    ``<est, ref> / |ref|^2``; an orthogonal (or silent) estimate gives the
    -100 dB floor.
    """
    ref, est = _pair(reference, estimate)
    p_ref = float(np.dot(ref, ref))
    if math.sqrt(p_ref / max(ref.size, 1)) <= 1e-9:
        raise DegenerateInputError("reference signal is silent")
    scale = float(np.dot(est, ref)) / p_ref
    target = scale * ref
    resid = est - target
    return _ratio_db(float(np.dot(target, target)), float(np.dot(resid, resid)))


def l1_distance(reference, estimate) -> float:
    ref, est = _pair(reference, estimate)
    return float(np.mean(np.abs(est - ref)))


@dataclass
class EvalReport:
    rows: List[Dict] = field(default_factory=list)

    def groups(self) -> List[tuple]:
        seen = []
        for r in self.rows:
            key = (r["method"], r["steps"])
            if key not in seen:
                seen.append(key)
        return seen

    @property
    def aggregates(self) -> Dict[str, Dict]:
        """``{"method@steps": {"n": .., "mean": {col: ..}, "median": {col: ..}}}``."""
        out = {}
        for method, steps in self.groups():
            rows = [r for r in self.rows if r["method"] == method and r["steps"] == steps]
            cols = {c: np.array([r[c] for r in rows], dtype=np.float64) for c in METRIC_FIELDS}
            out[f"{method}@{steps}"] = {
                "method": method,
                "steps": steps,
                "n": len(rows),
                "mean": {c: float(np.mean(v)) for c, v in cols.items()},
                "median": {c: float(np.median(v)) for c, v in cols.items()},
            }
        return out

    def mean(self, method: str, steps: int, column: str) -> float:
        return self.aggregates[f"{method}@{steps}"]["mean"][column]

    def extend(self, other: "EvalReport") -> "EvalReport":
        self.rows.extend(other.rows)
        return self

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=ROW_FIELDS, lineterminator="\n")
            writer.writeheader()
            for r in self.rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"rows": self.rows, "aggregates": self.aggregates}, fh, indent=2)

    def summary_table(self) -> str:
        lines = [f"{'method':<36}{'steps':>6}{'n':>5}{'SI-SDR in':>11}{'SI-SDR out':>12}{'gain':>8}"]
        for key, agg in self.aggregates.items():
            m = agg["mean"]
            lines.append(
                f"{agg['method']:<36}{agg['steps']:>6}{agg['n']:>5}"
                f"{m['si_sdr_in']:>11.2f}{m['si_sdr_out']:>12.2f}{m['si_sdr_out'] - m['si_sdr_in']:>8.2f}"
            )
        return "\n".join(lines)


def _row(pair: UtterancePair, method: str, steps: int, out: np.ndarray) -> Dict:
    x0 = pair.clean.samples
    y = pair.noisy.samples
    return {
        "id": pair.id,
        "method": method,
        "steps": int(steps),
        "snr_db_in": snr_db(x0, y),
        "snr_db_out": snr_db(x0, out),
        "si_sdr_in": si_sdr_db(x0, y),
        "si_sdr_out": si_sdr_db(x0, out),
        "l1": l1_distance(x0, out),
    }


def evaluate(
    pairs: Sequence[UtterancePair],
    restorer: Union[Restorer, Callable[[UtterancePair], Restorer], None],
    schedule: Schedule,
    configs: Sequence[SamplerConfig],
    *,
    tag: str = "",
    oracle: bool = False,
    jobs: int = 1,
) -> EvalReport:
    """Run every sampler config over every pair.

    ``restorer`` is either a shared restorer or a factory called per pair.
    ``oracle=True`` substitutes an :class:`OracleRestorer` per utterance.
    The row ``method`` is ``tag + config.label`` (``tag`` may be e.g.
    ``"unfolded/"``).
    """
    if not pairs:
        raise ConfigurationError("no utterances to evaluate")
    if not oracle:
        if restorer is None:
            raise ConfigurationError("no restorer (checkpoint) supplied")
        trained_T = getattr(restorer, "schedule_T", None)
        if trained_T is not None and trained_T != schedule.T:
            raise ConfigurationError(f"checkpoint trained with T={trained_T} but schedule has T={schedule.T}")

    def one(pair: UtterancePair) -> List[Dict]:
        if oracle:
            R = OracleRestorer(pair.clean.samples)
        elif isinstance(restorer, Restorer):
            R = restorer
        else:
            R = restorer(pair)
        rows = []
        for cfg in configs:
            out, _ = run_sampler(R, pair.noisy.samples, schedule, cfg)
            rows.append(_row(pair, tag + cfg.label, steps_for(cfg, schedule), out))
        return rows

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, pairs))
    else:
        results = [one(p) for p in pairs]
    return EvalReport([r for rows in results for r in rows])
