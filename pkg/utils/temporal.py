"""GRU encoder, linear readout and multi-step decoding."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from utils import numkern as nk
from utils.errors import DimensionError, UsageError

logger = logging.getLogger(__name__)

TEACHER_FORCING_MODES = ("off", "always", "scheduled")


@dataclass
class TeacherForcingPolicy:
    mode: str = "scheduled"
    p0: float = 1.0
    decay: float = 0.02  # per epoch; reaches 0 at epoch 50 from p0 = 1

    def __post_init__(self):
        if self.mode not in TEACHER_FORCING_MODES:
            raise UsageError(f"unknown teacher forcing mode '{self.mode}'")
        if not 0 <= self.p0 <= 1 or self.decay < 0:
            raise UsageError("teacher forcing needs 0 <= p0 <= 1 and decay >= 0")

    def probability(self, epoch: int) -> float:
        if self.mode == "off":
            return 0.0
        if self.mode == "always":
            return 1.0
        return float(min(1.0, max(0.0, self.p0 - self.decay * epoch)))

    def should_force(self, epoch: int, rng) -> bool:
        p = self.probability(epoch)
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        return bool(rng.random() < p)


class GruCell:
    """Gates act on the last axis, so every node is updated independently."""

    GATES = ("z", "r", "h")

    def __init__(self, input_size: int, hidden_size: int, bias: bool = False, rng=None):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.bias = bias
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(hidden_size)
        self.params: dict[str, np.ndarray] = {}
        for g in self.GATES:
            self.params[f"gru.W_{g}"] = rng.uniform(-bound, bound, (input_size, hidden_size))
        for g in self.GATES:
            self.params[f"gru.U_{g}"] = rng.uniform(-bound, bound, (hidden_size, hidden_size))
        if bias:
            for g in self.GATES:
                self.params[f"gru.b_{g}"] = np.zeros(hidden_size)

    def _affine(self, gate, x, h):
        out = x @ self.params[f"gru.W_{gate}"] + h @ self.params[f"gru.U_{gate}"]
        if self.bias:
            out = out + self.params[f"gru.b_{gate}"]
        return out

    def step(self, x, h):
        x = nk.as_mat(x)
        h = nk.as_mat(h)
        if x.shape[-1] != self.input_size or h.shape[-1] != self.hidden_size \
                or x.shape[:-1] != h.shape[:-1]:
            raise DimensionError("gru_step input/hidden", x.shape, h.shape)
        rec = nk.ForwardRecord("gru")
        rec.put("x", x)
        rec.put("h", h)
        z = rec.put("z", nk.sigmoid(self._affine("z", x, h)))
        r = rec.put("r", nk.sigmoid(self._affine("r", x, h)))
        rh = rec.put("rh", r * h)
        cand = x @ self.params["gru.W_h"] + rh @ self.params["gru.U_h"]
        if self.bias:
            cand = cand + self.params["gru.b_h"]
        c = rec.put("c", np.tanh(cand))
        return (1.0 - z) * h + z * c, rec

    def step_backward(self, rec, dh_new, grads: nk.GradSet):
        """Returns (dx, dh_prev) and accumulates gate weight gradients."""
        x, h = rec.get("x"), rec.get("h")
        z, r, rh, c = rec.get("z"), rec.get("r"), rec.get("rh"), rec.get("c")
        xs = x.reshape(-1, self.input_size)
        hs = h.reshape(-1, self.hidden_size)

        dz = dh_new * (c - h)
        dh = dh_new * (1.0 - z)
        dac = dh_new * z * (1.0 - c * c)
        drh = dac @ self.params["gru.U_h"].T
        dr = drh * h
        dh += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)

        dx = np.zeros_like(x)
        for gate, da, hin in (("z", daz, hs), ("r", dar, hs),
                              ("h", dac, rh.reshape(-1, self.hidden_size))):
            das = da.reshape(-1, self.hidden_size)
            grads.add(f"gru.W_{gate}", xs.T @ das)
            grads.add(f"gru.U_{gate}", hin.T @ das)
            if self.bias:
                grads.add(f"gru.b_{gate}", das.sum(axis=0))
            dx += da @ self.params[f"gru.W_{gate}"].T
        dh += daz @ self.params["gru.U_z"].T + dar @ self.params["gru.U_r"].T
        return dx, dh


class Decoder:
    """Linear readout from the hidden state to node features."""

    def __init__(self, hidden_size: int, out_features: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(hidden_size)
        self.out_features = out_features
        self.params = {
            "decoder.weight": rng.uniform(-bound, bound, (hidden_size, out_features)),
            "decoder.bias": np.zeros(out_features),
        }

    def forward(self, h):
        return nk.matmul(h, self.params["decoder.weight"]) + self.params["decoder.bias"]

    def backward(self, h, dy, grads: nk.GradSet):
        hidden = self.params["decoder.weight"].shape[0]
        grads.add("decoder.weight", h.reshape(-1, hidden).T @ dy.reshape(-1, self.out_features))
        grads.add("decoder.bias", dy.reshape(-1, self.out_features).sum(axis=0))
        return dy @ self.params["decoder.weight"].T


def gru_step(cell: GruCell, x, h_prev):
    h, _ = cell.step(x, h_prev)
    return h


def encode(cell: GruCell, sequence, h0=None, embed=None, trace: list | None = None):
    """Fold the GRU over ``sequence`` (time on axis 0) from a zero state.

    ``embed`` maps each frame to the GRU input first. When ``trace`` is given,
    the step records are appended to it for the backward pass.
    """
    if len(sequence) == 0:
        raise UsageError("encode needs at least one time step")
    embed = embed or (lambda x: x)
    h = None if h0 is None else nk.as_mat(h0)
    for x in sequence:
        z = embed(x)
        if h is None:
            h = np.zeros(np.shape(z)[:-1] + (cell.hidden_size,))
        h, rec = cell.step(z, h)
        if trace is not None:
            trace.append(rec)
    return h


def decode_multi_step(cell: GruCell, decoder: Decoder, h, horizon: int, embed,
                      policy: TeacherForcingPolicy | None = None, ground_truth=None,
                      training: bool = False, rng=None, epoch: int = 0, trace: list | None = None):
    """Unroll ``horizon`` readouts; each next GRU input is ``embed`` of the forced or predicted frame.

    ``ground_truth`` has time on axis 0. Evaluation never forces. ``trace``
    collects one (readout state, GRU record, forced) entry per step; the last
    entry has no GRU record.
    """
    if horizon < 1:
        raise UsageError("horizon must be >= 1")
    policy = policy or TeacherForcingPolicy("off")
    if training and policy.mode != "off" and ground_truth is None and horizon > 1:
        raise UsageError(f"teacher forcing mode '{policy.mode}' needs ground truth")
    preds = []
    for tau in range(horizon):
        y = decoder.forward(h)
        preds.append(y)
        if tau == horizon - 1:
            if trace is not None:
                trace.append((h, None, False))
            break
        forced = training and policy.should_force(epoch, rng)
        frame = nk.as_mat(ground_truth[tau]) if forced else y
        h_next, rec = cell.step(embed(frame), h)
        if trace is not None:
            trace.append((h, rec, forced))
        h = h_next
    return np.stack(preds)
