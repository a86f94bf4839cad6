"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

import numpy as np

from anm.tensor.tape import Tape
from anm.tensor.tensor import OpNode, Tensor

logger = logging.getLogger(__name__)

TOLERANCES = {"32": 1e-4, "64": 1e-7}

# Errors are relative to max(|analytic|, |numeric|, floor)
RELATIVE_FLOOR = 1e-3


@dataclass(frozen=True)
class GradientReport:
    mode: str
    tolerance: float
    max_rel_error: float
    probes: int
    skipped: int
    worst: tuple[str, int] | None

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), RELATIVE_FLOOR)


def check_gradients(
    loss: OpNode,
    inputs: Mapping[str, Tensor | np.ndarray],
    probes: int = 100,
    mode: Literal["32", "64"] = "64",
    wrt: Sequence[str] | None = None,
    step: float = 1e-5,
    seed: int = 0,
) -> GradientReport:
    """Compare analytic gradients with central differences at random coordinates.

    The analytic gradient is computed at the requested precision; the numeric
    one always in 64-bit. A probe whose ``±step`` moves any relu, maxpool or
    clamp onto another linear piece sits at a nondifferentiable point and is
    skipped and counted instead of compared.
    """
    mode = str(mode)
    tolerance = TOLERANCES[mode]
    analytic_dtype = np.float64 if mode == "64" else np.float32
    bound = {name: Tensor.wrap(value) for name, value in inputs.items()}
    if wrt is None:
        wrt = [n for n, t in bound.items() if t.is_float and t.requires_grad] or [
            n for n, t in bound.items() if t.is_float
        ]
    wrt = sorted(wrt)

    tape = Tape(analytic_dtype)
    tape.evaluate(loss, bound)
    analytic = {name: g.data.astype(np.float64) for name, g in tape.gradients(loss, wrt).items()}

    base = {
        name: (t.data.astype(np.float64) if t.is_float else t.data) for name, t in bound.items()
    }
    reference = Tape(np.float64)
    reference.evaluate(loss, base)
    base_signature = reference.kink_signature()

    sizes = np.array([base[name].size for name in wrt], dtype=np.int64)
    total = int(sizes.sum())
    if total == 0:
        return GradientReport(mode, tolerance, 0.0, 0, 0, None)
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    max_err, skipped, worst = 0.0, 0, None
    for flat in rng.integers(0, total, size=probes):
        slot = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, index = wrt[slot], int(flat - offsets[slot])

        values = []
        for sign in (1.0, -1.0):
            shifted = base[name].copy()
            shifted.flat[index] += sign * step
            moved = dict(base, **{name: shifted})
            out = reference.evaluate(loss, moved).item()
            if reference.kink_signature() != base_signature:
                values = None
                break
            values.append(out)
        if values is None:
            skipped += 1
            continue
        numeric = (values[0] - values[1]) / (2 * step)
        err = relative_error(float(analytic[name].flat[index]), numeric)
        if err > max_err:
            max_err, worst = err, (name, index)

    report = GradientReport(mode, tolerance, max_err, probes, skipped, worst)
    logger.debug(
        "Gradient check (%s-bit): max rel error %.3e over %d probes, %d skipped",
        mode, max_err, probes - skipped, skipped,
    )
    return report
