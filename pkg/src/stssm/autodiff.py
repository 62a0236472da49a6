"""Array-level reverse-mode differentiation on an explicit tape.

Ops (see ops.py) record vector-Jacobian rules at the granularity of whole
array operations; the scan gets a hand-derived backward that runs the
recurrence in reverse time. Every rule is checked against central finite
differences by the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ContractError, NumericError, UnsupportedOpError

# Leaf parameter identifier -> gradient array of the parameter's shape.
GradientSet = dict


@dataclass
class Var:
    """Handle to a value living on a tape."""

    tape: "Tape"
    uid: int
    value: np.ndarray
    name: str | None = None

    @property
    def shape(self):
        return self.value.shape


@dataclass
class OpRecord:
    op: str
    # uid per input; None marks a constant (no gradient flows into it)
    input_uids: tuple
    input_values: tuple
    output_uids: tuple
    # recomputes output arrays from input arrays; used by replay()
    forward: Callable
    # maps output cotangents to input cotangents (None where not needed)
    backward: Callable | None


class Tape:
    """Ordered record of executed differentiable ops.

    Inputs of every record are produced by earlier records or are leaves,
    and the recorded forward closures are deterministic, so replaying the
    tape reproduces every stored value bitwise.
    """

    def __init__(self):
        self._uid = 0
        self.records: list[OpRecord] = []
        self.values: dict[int, np.ndarray] = {}
        self.leaves: dict[int, str] = {}

    def _new_node(self, value, name=None) -> Var:
        uid = self._uid
        self._uid += 1
        value = np.asarray(value)
        self.values[uid] = value
        return Var(self, uid, value, name)

    def leaf(self, value, name: str) -> Var:
        """Register a named parameter; backward() reports its gradient."""
        v = self._new_node(value, name)
        self.leaves[v.uid] = name
        return v

    def record(self, op, inputs, out_values, forward, backward):
        """Append one executed op; returns one Var per output array."""
        out_vars = tuple(self._new_node(o) for o in out_values)
        self.records.append(
            OpRecord(
                op=op,
                input_uids=tuple(x.uid if isinstance(x, Var) else None for x in inputs),
                input_values=tuple(x.value if isinstance(x, Var) else np.asarray(x) for x in inputs),
                output_uids=tuple(v.uid for v in out_vars),
                forward=forward,
                backward=backward,
            )
        )
        return out_vars

    def replay(self) -> dict:
        """Recompute every record from leaf values; returns uid -> array."""
        current = dict(self.values)
        for rec in self.records:
            args = tuple(
                current[uid] if uid is not None else const
                for uid, const in zip(rec.input_uids, rec.input_values)
            )
            outs = rec.forward(*args)
            if not isinstance(outs, tuple):
                outs = (outs,)
            for uid, out in zip(rec.output_uids, outs):
                current[uid] = out
        return current


def backward(tape: Tape, loss: Var) -> GradientSet:
    """Accumulate d(loss)/d(leaf) for every leaf on the tape.

    Walks the records in reverse, composing vector-Jacobian products; the
    seed gradient of the loss with respect to itself is 1. Accumulation
    order is fixed by record order, so repeated calls are bitwise equal.
    """
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise ContractError("loss must be a Var recorded on this tape")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.value)}
    for rec in reversed(tape.records):
        out_grads = tuple(grads.get(uid) for uid in rec.output_uids)
        if all(g is None for g in out_grads):
            continue
        if rec.backward is None:
            raise UnsupportedOpError(f"op {rec.op!r} has no backward rule")
        in_grads = rec.backward(*out_grads)
        for uid, g in zip(rec.input_uids, in_grads):
            if uid is None or g is None:
                continue
            if uid in grads:
                grads[uid] = grads[uid] + g
            else:
                grads[uid] = g
    out: GradientSet = {}
    for uid, name in tape.leaves.items():
        g = grads.get(uid)
        out[name] = g if g is not None else np.zeros_like(tape.values[uid])
    return out


def finite_diff_check(f, params: dict, eps: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference grads.

    ``f`` maps a dict of arrays (or Vars) to a scalar; it is traced once on
    a fresh tape for analytic gradients, then evaluated twice per parameter
    scalar for the numeric quotient (f(t+eps) - f(t-eps)) / (2 eps). The
    relative-error denominator is floored at 1e-8.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    tape = Tape()
    traced = {k: tape.leaf(np.asarray(v, dtype=np.float64), k) for k, v in params.items()}
    loss_var = f(traced)
    if not np.all(np.isfinite(loss_var.value)):
        raise NumericError("objective returned a non-finite value")
    analytic = backward(tape, loss_var)

    def eval_plain(p) -> float:
        out = f(p)
        val = out.value if isinstance(out, Var) else np.asarray(out)
        val = float(val.reshape(()))
        if not np.isfinite(val):
            raise NumericError("objective returned a non-finite value")
        return val

    base = {k: np.asarray(v, dtype=np.float64).copy() for k, v in params.items()}
    worst = 0.0
    for key, arr in base.items():
        flat = arr.reshape(-1)
        ana = analytic[key].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            fp = eval_plain(base)
            flat[i] = keep - eps
            fm = eval_plain(base)
            flat[i] = keep
            num = (fp - fm) / (2.0 * eps)
            denom = max(abs(ana[i]), abs(num), 1e-8)
            worst = max(worst, abs(num - ana[i]) / denom)
    return worst
