"""Spatial layer + dropout + GRU + linear readout, with a full backward pass."""
from __future__ import annotations

import logging

import numpy as np

from utils import numkern as nk
from utils.errors import DimensionError, UsageError
from utils.intergat import BaseGatLayer, InterGatLayer, build_variant, dropout_mask
from utils.temporal import Decoder, GruCell, TeacherForcingPolicy, decode_multi_step, encode

logger = logging.getLogger(__name__)

DECODE_MODES = ("iterative", "one_shot")


class SpatioTemporalModel:
    def __init__(self, spatial, cell: GruCell, decoder: Decoder, features: int, horizon: int,
                 dropout: float = 0.3, decode_mode: str = "iterative"):
        if decode_mode not in DECODE_MODES:
            raise UsageError(f"unknown decode mode '{decode_mode}'")
        if cell.input_size != spatial.out_features:
            raise DimensionError("GRU input vs spatial output", (cell.input_size,), (spatial.out_features,))
        self.spatial = spatial
        self.cell = cell
        self.decoder = decoder
        self.features = features
        self.horizon = horizon
        self.dropout = dropout
        self.decode_mode = decode_mode
        self.params: dict[str, np.ndarray] = {**spatial.params, **cell.params, **decoder.params}

    @property
    def n(self) -> int:
        return self.spatial.n

    @property
    def variant(self) -> str:
        return self.spatial.variant

    def interaction_names(self) -> list[str]:
        return self.spatial.interaction_names()

    def interaction_matrices(self, kind: str = "processed") -> list[np.ndarray]:
        """Per-head matrices: 'processed' row-stochastic ones, or 'raw' symmetrized ones."""
        if self.variant == "none":
            return []
        if kind == "processed":
            return [self.spatial.effective_matrix(k) for k in range(self.spatial.heads)]
        if kind == "raw":
            return self.spatial.raw_matrices()
        raise UsageError(f"unknown matrix kind '{kind}'")

    def _embed(self, x, ctx, training, rng):
        z, srec = self.spatial.forward(x, ctx)
        mask = dropout_mask(self.dropout, rng, z.shape, training=training)
        return z * mask, (srec, mask)

    def forward(self, inputs, targets=None, training=False, rng=None, epoch=0,
                policy: TeacherForcingPolicy | None = None):
        """inputs (B, n, N, F) -> predictions (B, T, N, F) and the record for backward."""
        inputs = nk.as_mat(inputs)
        if inputs.ndim != 4 or inputs.shape[2:] != (self.n, self.features):
            raise DimensionError("model input", inputs.shape, ("B", "n", self.n, self.features))
        if training and rng is None:
            rng = np.random.default_rng(0)

        rec = nk.ForwardRecord("model", backward_fn=lambda r, up: self.backward(r, up))
        ctx = rec.put("ctx", self.spatial.prepare())
        embedded = []

        def embed(frame):
            z, aux = self._embed(frame, ctx, training, rng)
            embedded.append(aux)
            return z

        gru_recs = []
        h = encode(self.cell, inputs.transpose(1, 0, 2, 3), embed=embed, trace=gru_recs)
        rec.put("encoder", [(srec, mask, grec) for (srec, mask), grec in zip(embedded, gru_recs)])

        if self.decode_mode == "one_shot":
            rec.put("readouts", [h])
            out = self.decoder.forward(h)
            b = out.shape[0]
            preds = out.reshape(b, self.n, self.horizon, self.features).transpose(0, 2, 1, 3)
            return preds, rec

        embedded.clear()
        steps = []
        truth = None if targets is None else nk.as_mat(targets).transpose(1, 0, 2, 3)
        preds = decode_multi_step(self.cell, self.decoder, h, self.horizon, embed, policy,
                                  ground_truth=truth, training=training, rng=rng, epoch=epoch,
                                  trace=steps)
        rec.put("readouts", [state for state, _, _ in steps])
        rec.put("decoder_steps", [(srec, mask, grec, forced) for (srec, mask), (_, grec, forced)
                                  in zip(embedded, steps)])
        return preds.transpose(1, 0, 2, 3), rec

    def backward(self, rec: nk.ForwardRecord, dpreds) -> nk.GradSet:
        """Gradients of every parameter given dL/dpredictions."""
        grads = nk.GradSet.like(self.params)
        ctx = rec.get("ctx")
        readouts = rec.get("readouts")
        dpreds = nk.as_mat(dpreds)

        if self.decode_mode == "one_shot":
            b = dpreds.shape[0]
            dout = dpreds.transpose(0, 2, 1, 3).reshape(b, self.n, self.horizon * self.features)
            dh = self.decoder.backward(readouts[0], dout, grads)
        else:
            steps = rec.get("decoder_steps")
            dh = np.zeros_like(readouts[0])
            for tau in range(self.horizon - 1, -1, -1):
                dy = dpreds[:, tau].copy()
                if tau < self.horizon - 1:
                    srec, mask, grec, forced = steps[tau]
                    dz, dh = self.cell.step_backward(grec, dh, grads)
                    dx = self.spatial.backward(srec, dz * mask, ctx, grads)
                    if not forced:
                        dy += dx
                dh = dh + self.decoder.backward(readouts[tau], dy, grads)

        for srec, mask, grec in reversed(rec.get("encoder")):
            dz, dh = self.cell.step_backward(grec, dh, grads)
            self.spatial.backward(srec, dz * mask, ctx, grads)
        self.spatial.finish(ctx, grads)
        return grads

    def predict(self, inputs, batch_size: int = 256) -> np.ndarray:
        """Evaluation-mode forecasts: no dropout, no forcing."""
        inputs = nk.as_mat(inputs)
        out = [self.forward(inputs[i:i + batch_size])[0] for i in range(0, len(inputs), batch_size)]
        return np.concatenate(out, axis=0)

    def parameter_count(self) -> dict:
        return {
            "spatial": self.spatial.parameter_count(),
            "temporal": sum(v.size for k, v in self.params.items() if k.startswith("gru.")),
            "decoder": sum(v.size for k, v in self.params.items() if k.startswith("decoder.")),
        }


def build_model(model_config, graph, train_values, features: int, horizon: int,
                seed: int, source=None) -> SpatioTemporalModel:
    """Assemble a model from a ModelConfig-like object; all init randomness comes from ``seed``.

    A ready ``source`` (for example one restored from a checkpoint) skips the
    covariance and clustering work of ``build_variant``.
    """
    rng = np.random.default_rng(seed)
    cfg = model_config
    if cfg.variant == "none":
        spatial = BaseGatLayer(graph.adjacency, features, cfg.heads, cfg.head_dim,
                               cfg.elu_alpha, cfg.leaky_slope, rng=rng)
    else:
        if source is None:
            source = build_variant(cfg.variant, graph, train_values, k=cfg.clusters, seed=seed)
        spatial = InterGatLayer(graph.n, features, cfg.heads, cfg.head_dim, cfg.elu_alpha,
                                source=source, rng=rng, ln_eps=cfg.ln_eps, norm_axis=cfg.norm_axis)
    cell = GruCell(spatial.out_features, cfg.hidden, bias=cfg.gru_bias, rng=rng)
    out = features * horizon if cfg.decode_mode == "one_shot" else features
    decoder = Decoder(cfg.hidden, out, rng=rng)
    model = SpatioTemporalModel(spatial, cell, decoder, features, horizon,
                                dropout=cfg.dropout, decode_mode=cfg.decode_mode)
    logger.debug("Built %s model with %s parameters", cfg.variant, model.parameter_count())
    return model
