"""Query-based entity-object transformer.

Pipeline per sample: token and image-grid stub encoders with sinusoidal
position encodings, single-head selective attention (each modality's
self-similarity weights applied to the other modality's values), a
sigmoid-gated convex fusion per branch, a pre-norm transformer
encoder over the fused image sequence, a decoder where learned queries
self-attend and then cross-attend into that memory, and three heads:
per-query start/end distributions over token positions, relation
logits over R+1 classes (index R = "no relation"), and a box in
normalized (cx, cy, w, h) form.

Head nonlinearities keep ReLU in front of the softmax/sigmoid exactly
as in the governing equations, which confines box components to
[0.5, 1); the synthetic data generator only emits boxes from that
range. The entity scorer applies a small ReLU MLP to the broadcast sum
of query and token features: a single linear map would make the score
additive in (query, position) and hence rank positions identically for
every query, which caps multi-triple extraction (see README notes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, const_init, normal_init, uniform_init
from .errors import ConfigError, DataError, ShapeError

# The output heads keep ReLU in front of softmax/sigmoid, so a score whose
# pre-activation is negative has zero gradient and cannot recover. Zero
# bias init leaves half of all scores in that dead half-plane; starting
# the final-layer biases positive keeps the heads trainable.
HEAD_BIAS_INIT = 1.0


@dataclass(frozen=True)
class ModelConfig:
    L: int = 16            # text sequence length
    G: int = 4             # image grid side (G*G patches)
    d: int = 64            # hidden size
    Q: int = 5             # query count
    R: int = 21            # relation types (ignoring the empty class)
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    vocab: int = 64
    c_img: int = 8

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ConfigError(f"hidden size {self.d} not divisible by {self.heads} heads")
        if min(self.L, self.G, self.d, self.Q, self.enc_layers, self.dec_layers,
               self.heads, self.vocab, self.c_img) < 1 or self.R < 1:
            raise ConfigError("all model dimensions must be positive")


@dataclass
class ModelOutput:
    """Per-query predictions for one sample (views into the batch graph)."""

    start_dist: Tensor   # (Q, L), rows sum to 1
    end_dist: Tensor     # (Q, L), rows sum to 1
    rel_logits: Tensor   # (Q, R+1), nonnegative (post-ReLU)
    boxes: Tensor        # (Q, 4) cxcywh in (0, 1)
    log_start: Tensor    # (Q, L) log of start_dist
    log_end: Tensor      # (Q, L)
    log_rel: Tensor      # (Q, R+1) log-softmax of rel_logits


@dataclass
class FusionState:
    """Detached inspection values from the fusion stage of one sample."""

    h_text_out: np.ndarray    # (L, d)
    h_img_out: np.ndarray     # (L, d)
    gate_text: np.ndarray     # (L, d), strictly in (0, 1)
    gate_img: np.ndarray      # (L, d)
    attn_text_img: np.ndarray  # (L, L) text self-similarity weights over image values
    attn_img_text: np.ndarray  # (L, L) image self-similarity weights over text values


@dataclass
class BatchForward:
    outputs: list[ModelOutput]
    fusion: list[FusionState]
    cross_attention: np.ndarray  # (B, dec_layers, heads, Q, L), detached


def sincos_1d(n: int, d: int) -> np.ndarray:
    """Standard sinusoidal position encoding, (n, d)."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    enc = np.zeros((n, d), dtype=np.float64)
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)[:, : d - d // 2]
    return enc


def sincos_2d(G: int, d: int) -> np.ndarray:
    """2-D encoding for a G x G grid: first half of channels encode x, second half y."""
    half = d // 2
    xs = sincos_1d(G, half)
    ys = sincos_1d(G, d - half)
    gy, gx = np.divmod(np.arange(G * G), G)
    return np.concatenate([xs[gx], ys[gy]], axis=1)


def resample_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Fixed (n_dst, n_src) linear-interpolation weights along the position axis."""
    W = np.zeros((n_dst, n_src), dtype=np.float64)
    if n_src == 1:
        W[:, 0] = 1.0
        return W
    for t in range(n_dst):
        s = t * (n_src - 1) / (n_dst - 1) if n_dst > 1 else 0.0
        lo = int(np.floor(s))
        hi = min(lo + 1, n_src - 1)
        frac = s - lo
        W[t, lo] += 1.0 - frac
        W[t, hi] += frac
    return W


class QEOTModel:
    """Holds parameters and implements the forward pass (batched)."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.params: dict[str, Parameter] = {}
        c = config

        self._weight("text.embed", (c.vocab, c.d), fan_in=c.d)
        self._attn_params("text.attn")
        self._ln_params("text.ln1")
        self._ln_params("text.ln_out")

        self._weight("img.patch.w", (c.c_img, c.d), fan_in=c.c_img)
        self._zeros("img.patch.b", (c.d,))

        for branch in ("text", "img"):
            self._weight(f"fusion.{branch}.A", (c.d, c.d), fan_in=c.d)
            self._weight(f"fusion.{branch}.B", (c.d, c.d), fan_in=c.d)

        for i in range(c.enc_layers):
            self._ln_params(f"enc{i}.ln1")
            self._attn_params(f"enc{i}.attn")
            self._ln_params(f"enc{i}.ln2")
            self._ffn_params(f"enc{i}.ffn")
        self._ln_params("enc.ln_out")

        self._register(normal_init("queries", (c.Q, c.d), std=1.0, seed=seed))
        for i in range(c.dec_layers):
            self._ln_params(f"dec{i}.ln1")
            self._attn_params(f"dec{i}.self")
            self._ln_params(f"dec{i}.ln2")
            self._attn_params(f"dec{i}.cross")
            self._ln_params(f"dec{i}.ln3")
            self._ffn_params(f"dec{i}.ffn")
        self._ln_params("dec.ln_out")

        ent_hidden = 4 * c.d
        self._weight("ent_head.w1", (c.d, ent_hidden), fan_in=c.d)
        self._zeros("ent_head.b1", (ent_hidden,))
        self._weight("ent_head.w2", (ent_hidden, 2), fan_in=ent_hidden)
        self._register(const_init("ent_head.b2", (2,), HEAD_BIAS_INIT))

        self._weight("rel_head.cross_w", (2 * c.d, c.d), fan_in=2 * c.d)
        self._zeros("rel_head.cross_b", (c.d,))
        self._weight("rel_head.w", (c.d, c.R + 1), fan_in=c.d)
        self._register(const_init("rel_head.b", (c.R + 1,), HEAD_BIAS_INIT))

        self._weight("box_head.w", (c.d, 4), fan_in=c.d)
        self._register(const_init("box_head.b", (4,), HEAD_BIAS_INIT))

        self._pos_text = Tensor(sincos_1d(c.L, c.d))
        resample = resample_matrix(c.G * c.G, c.L)
        self._resample = Tensor(resample)
        self._pos_img = Tensor(resample @ sincos_2d(c.G, c.d))

    # -- parameter bookkeeping ---------------------------------------

    def _register(self, p: Parameter) -> Parameter:
        if p.name in self.params:
            raise ConfigError(f"duplicate parameter name '{p.name}'")
        self.params[p.name] = p
        return p

    def _weight(self, name: str, shape: tuple[int, ...], fan_in: int) -> Parameter:
        return self._register(uniform_init(name, shape, fan_in, self.seed))

    def _zeros(self, name: str, shape: tuple[int, ...]) -> Parameter:
        return self._register(const_init(name, shape, 0.0))

    def _ln_params(self, prefix: str) -> None:
        self._register(const_init(f"{prefix}.gain", (self.config.d,), 1.0))
        self._register(const_init(f"{prefix}.bias", (self.config.d,), 0.0))

    def _attn_params(self, prefix: str) -> None:
        d = self.config.d
        for piece in ("q", "k", "v", "o"):
            self._weight(f"{prefix}.w{piece}", (d, d), fan_in=d)
            self._zeros(f"{prefix}.b{piece}", (d,))

    def _ffn_params(self, prefix: str) -> None:
        d = self.config.d
        hidden = 4 * d
        self._weight(f"{prefix}.w1", (d, hidden), fan_in=d)
        self._zeros(f"{prefix}.b1", (hidden,))
        self._weight(f"{prefix}.w2", (hidden, d), fan_in=hidden)
        self._zeros(f"{prefix}.b2", (d,))

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.tensor.zero_grad()

    def t(self, name: str) -> Tensor:
        return self.params[name].tensor

    def to_records(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_records(self, records: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in records:
                raise DataError(f"checkpoint is missing parameter '{name}'")
            arr = records[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise DataError(
                    f"checkpoint parameter '{name}' has shape {tuple(arr.shape)}, "
                    f"model expects {tuple(p.data.shape)}")
            p.data[...] = arr

    # -- building blocks ----------------------------------------------

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.t(f"{prefix}.gain"), self.t(f"{prefix}.bias"))

    def _mha(self, prefix: str, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> tuple[Tensor, Tensor]:
        """Multi-head attention; returns (output, attention (..., h, Nq, Nk))."""
        c = self.config
        dh = c.d // c.heads

        def split(x: Tensor) -> Tensor:
            b, n = x.shape[0], x.shape[1]
            return ad.transpose(ad.reshape(x, (b, n, c.heads, dh)), (0, 2, 1, 3))

        q = split(q_in @ self.t(f"{prefix}.wq") + self.t(f"{prefix}.bq"))
        k = split(k_in @ self.t(f"{prefix}.wk") + self.t(f"{prefix}.bk"))
        v = split(v_in @ self.t(f"{prefix}.wv") + self.t(f"{prefix}.bv"))
        scores = (q @ ad.swap_last2(k)) * (1.0 / np.sqrt(dh))
        attn = ad.softmax(scores, axis=-1)
        ctx = attn @ v  # (b, h, Nq, dh)
        b, nq = ctx.shape[0], ctx.shape[2]
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, nq, c.d))
        return merged @ self.t(f"{prefix}.wo") + self.t(f"{prefix}.bo"), attn

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        h = ad.relu(x @ self.t(f"{prefix}.w1") + self.t(f"{prefix}.b1"))
        return h @ self.t(f"{prefix}.w2") + self.t(f"{prefix}.b2")

    # -- pipeline stages (all batched: leading dim B) ------------------

    def encode_text_batch(self, tokens: np.ndarray) -> Tensor:
        c = self.config
        tokens = np.asarray(tokens, dtype=np.intp)
        if tokens.ndim != 2 or tokens.shape[1] != c.L:
            raise DataError(f"tokens must be (B, {c.L}), got {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= c.vocab:
            bad = int(tokens.min()) if tokens.min() < 0 else int(tokens.max())
            raise DataError(f"token id {bad} outside vocabulary of size {c.vocab}")
        x = ad.pick(self.t("text.embed"), tokens) + self._pos_text
        xn = self._ln("text.ln1", x)
        sa, _ = self._mha("text.attn", xn, xn, xn)
        return self._ln("text.ln_out", x + sa)

    def encode_image_batch(self, grids) -> tuple[Tensor, Tensor]:
        c = self.config
        g = grids if isinstance(grids, Tensor) else Tensor(np.asarray(grids, dtype=np.float64))
        if g.ndim != 4 or g.shape[1:] != (c.G, c.G, c.c_img):
            raise ShapeError(f"grids must be (B, {c.G}, {c.G}, {c.c_img}), got {g.shape}")
        flat = ad.reshape(g, (g.shape[0], c.G * c.G, c.c_img))
        patches = flat @ self.t("img.patch.w") + self.t("img.patch.b")
        h_img = self._resample @ patches  # (B, L, d)
        return h_img, self._pos_img

    def selective_attention_batch(self, h_text: Tensor, h_img: Tensor, pos_img: Tensor
                                  ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        scale = 1.0 / np.sqrt(self.config.d)
        attn_t = ad.softmax((h_text @ ad.swap_last2(h_text)) * scale, axis=-1)
        h_text_attn = attn_t @ h_img
        qk_i = h_img + pos_img
        attn_i = ad.softmax((qk_i @ ad.swap_last2(qk_i)) * scale, axis=-1)
        h_img_attn = attn_i @ h_text
        return h_text_attn, h_img_attn, attn_t, attn_i

    def gated_fusion_batch(self, branch: str, h_orig: Tensor, h_attn: Tensor
                           ) -> tuple[Tensor, Tensor]:
        lam = ad.sigmoid(h_attn @ self.t(f"fusion.{branch}.A")
                         + h_orig @ self.t(f"fusion.{branch}.B"))
        out = (1.0 - lam) * h_orig + lam * h_attn
        return out, lam

    def query_transformer_batch(self, memory: Tensor) -> tuple[Tensor, list[Tensor]]:
        c = self.config
        x = memory
        for i in range(c.enc_layers):
            xn = self._ln(f"enc{i}.ln1", x)
            sa, _ = self._mha(f"enc{i}.attn", xn, xn, xn)
            x = x + sa
            x = x + self._ffn(f"enc{i}.ffn", self._ln(f"enc{i}.ln2", x))
        mem = self._ln("enc.ln_out", x)

        q = ad.reshape(self.t("queries"), (1, c.Q, c.d))
        cross_maps: list[Tensor] = []
        for i in range(c.dec_layers):
            qn = self._ln(f"dec{i}.ln1", q)
            sa, _ = self._mha(f"dec{i}.self", qn, qn, qn)
            q = q + sa
            ca, attn = self._mha(f"dec{i}.cross", self._ln(f"dec{i}.ln2", q), mem, mem)
            cross_maps.append(attn)  # (B, heads, Q, L)
            q = q + ca
            q = q + self._ffn(f"dec{i}.ffn", self._ln(f"dec{i}.ln3", q))
        return self._ln("dec.ln_out", q), cross_maps

    def predict_entities_batch(self, h_q: Tensor, h_text_out: Tensor
                               ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        c = self.config
        b = h_q.shape[0]
        h_ent = ad.reshape(h_q, (b, c.Q, 1, c.d)) \
            + ad.reshape(h_text_out, (h_text_out.shape[0], 1, c.L, c.d))
        hidden = ad.relu(h_ent @ self.t("ent_head.w1") + self.t("ent_head.b1"))
        scores = ad.relu(hidden @ self.t("ent_head.w2") + self.t("ent_head.b2"))
        start_scores = scores[..., 0]
        end_scores = scores[..., 1]
        return (ad.softmax(start_scores, -1), ad.softmax(end_scores, -1),
                ad.log_softmax(start_scores, -1), ad.log_softmax(end_scores, -1))

    def predict_relations_boxes_batch(self, h_q: Tensor, h_text_out: Tensor, h_img_out: Tensor
                                      ) -> tuple[Tensor, Tensor, Tensor]:
        c = self.config
        cross = ad.concat([ad.tmean(h_text_out, axis=1), ad.tmean(h_img_out, axis=1)], axis=-1)
        projected = cross @ self.t("rel_head.cross_w") + self.t("rel_head.cross_b")
        h_rel = ad.reshape(projected, (projected.shape[0], 1, c.d)) + h_q
        rel_logits = ad.relu(h_rel @ self.t("rel_head.w") + self.t("rel_head.b"))
        boxes = ad.sigmoid(ad.relu(h_q @ self.t("box_head.w") + self.t("box_head.b")))
        return rel_logits, ad.log_softmax(rel_logits, -1), boxes

    # -- public forward -------------------------------------------------

    def forward_batch(self, samples: list) -> BatchForward:
        c = self.config
        tokens = np.array([s.tokens for s in samples], dtype=np.intp)
        grids = np.stack([np.asarray(s.grid, dtype=np.float64) for s in samples])

        h_text = self.encode_text_batch(tokens)
        h_img, pos_img = self.encode_image_batch(grids)
        h_text_attn, h_img_attn, attn_t, attn_i = \
            self.selective_attention_batch(h_text, h_img, pos_img)
        h_text_out, gate_text = self.gated_fusion_batch("text", h_text, h_text_attn)
        h_img_out, gate_img = self.gated_fusion_batch("img", h_img, h_img_attn)
        h_q, cross_maps = self.query_transformer_batch(h_img_out)
        start_dist, end_dist, log_start, log_end = \
            self.predict_entities_batch(h_q, h_text_out)
        rel_logits, log_rel, boxes = \
            self.predict_relations_boxes_batch(h_q, h_text_out, h_img_out)

        outputs = [
            ModelOutput(
                start_dist=start_dist[b], end_dist=end_dist[b],
                rel_logits=rel_logits[b], boxes=boxes[b],
                log_start=log_start[b], log_end=log_end[b], log_rel=log_rel[b],
            )
            for b in range(len(samples))
        ]
        fusion = [
            FusionState(
                h_text_out=h_text_out.data[b].copy(),
                h_img_out=h_img_out.data[b].copy(),
                gate_text=gate_text.data[b].copy(),
                gate_img=gate_img.data[b].copy(),
                attn_text_img=attn_t.data[b].copy(),
                attn_img_text=attn_i.data[b].copy(),
            )
            for b in range(len(samples))
        ]
        cross = np.stack([m.data for m in cross_maps], axis=1)  # (B, layers, h, Q, L)
        return BatchForward(outputs=outputs, fusion=fusion, cross_attention=cross)

    def forward(self, sample) -> tuple[ModelOutput, FusionState]:
        batch = self.forward_batch([sample])
        return batch.outputs[0], batch.fusion[0]

    def inspect(self, sample) -> dict[str, np.ndarray]:
        """All attention/gate maps for one sample, plus the alternative
        cross-modal reading of the selective-attention scores."""
        c = self.config
        with ad.no_grad():
            batch = self.forward_batch([sample])
            h_text = self.encode_text_batch(np.array([sample.tokens], dtype=np.intp))
            h_img, pos_img = self.encode_image_batch(
                np.asarray(sample.grid, dtype=np.float64)[None])
            scale = 1.0 / np.sqrt(c.d)
            qk_i = h_img + pos_img
            cross_ti = ad.softmax((h_text @ ad.swap_last2(qk_i)) * scale, axis=-1)
            cross_it = ad.softmax((qk_i @ ad.swap_last2(h_text)) * scale, axis=-1)
        fusion = batch.fusion[0]
        return {
            "selective_text_img": fusion.attn_text_img,
            "selective_img_text": fusion.attn_img_text,
            "cross_reading_text_img": cross_ti.data[0].copy(),
            "cross_reading_img_text": cross_it.data[0].copy(),
            "gate_text": fusion.gate_text,
            "gate_img": fusion.gate_img,
            "decoder_cross_attention": batch.cross_attention[0].mean(axis=1),  # (layers, Q, L)
            "decoder_cross_attention_heads": batch.cross_attention[0],  # (layers, h, Q, L)
        }

    # -- convenience single-sample stage wrappers (used by tests) -------

    def encode_text(self, tokens: list[int]) -> Tensor:
        return self.encode_text_batch(np.array([tokens], dtype=np.intp))[0]

    def encode_image(self, grid: np.ndarray) -> tuple[Tensor, Tensor]:
        h, pos = self.encode_image_batch(np.asarray(grid, dtype=np.float64)[None])
        return h[0], pos
