"""Routing-threshold calibration.

The threshold is the dataset mean of P(hard): a problem scoring below it is
routed to single-sample reasoning, at or above it to windowed sampling. The
mean is taken over the evaluation set's activations before any sampling
starts (predictions cost one forward pass each, no token generation), using
exact compensated summation so the result does not depend on record order.
A fixed user-supplied threshold can be used instead for true streaming.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .activation_store import ActivationRecord
from .errors import ConfigError
from .probe import ProbeModel, predict_p_hard


@dataclass(frozen=True)
class TauCalibration:
    tau: float
    dataset_name: str
    n: int

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ConfigError(f"tau must lie strictly in (0, 1), got {self.tau}")
        if self.n < 1:
            raise ConfigError("calibration needs at least one problem")


def calibrate_tau(
    model: ProbeModel,
    records: Sequence[ActivationRecord],
    dataset_name: str = "",
) -> TauCalibration:
    """Mean of predict_p_hard over all records (math.fsum, exact to the ulp)."""
    if not records:
        raise ConfigError("cannot calibrate tau on an empty dataset")
    probs = [predict_p_hard(model, rec.activations) for rec in records]
    tau = math.fsum(probs) / len(probs)
    return TauCalibration(tau=tau, dataset_name=dataset_name, n=len(probs))


def save_tau(calibration: TauCalibration, path: str | Path) -> None:
    doc = {
        "tau": calibration.tau,
        "dataset_name": calibration.dataset_name,
        "n": calibration.n,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_tau(path: str | Path) -> TauCalibration:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return TauCalibration(tau=float(doc["tau"]), dataset_name=doc.get("dataset_name", ""), n=int(doc["n"]))
