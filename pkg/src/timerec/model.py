"""Session model: interval embeddings, BiGRU, time gating, self attention.

The forward pass per sample runs six stages: item/interval feature lookup,
bidirectional GRU encoding, sigmoid gate computation from the interval
embeddings, elementwise gating of the merged recurrent states, anchor-based
self attention over the gated states, and a softmax scoring head tied to
the item embedding table.  The backward pass is the hand-derived reverse of
that pipeline; see :mod:`timerec.nn` for the primitive rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import SequenceSample

SECONDS_PER_HOUR = 3600
SECONDS_PER_DAY = 86400

GRU_GATES = ("update", "reset", "cand")
TIME_UNITS = (("hour", 24), ("minute", 60), ("second", 60))


@dataclass
class ModelConfig:
    n_items: int
    dim: int = 180
    use_self_attention: bool = True
    use_time_attention: bool = True
    dropout_rate: float = 0.0
    share_gru_weights: bool = False
    loss_mode: str = "categorical"  # or "literal"
    dtype: str = "float64"
    max_hms: tuple = (23, 59, 59)

    def numpy_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @property
    def head_input_dim(self) -> int:
        return (6 if self.use_self_attention else 2) * self.dim


def interval_units(delta: int, max_hms: tuple = (23, 59, 59)) -> tuple[int, int, int]:
    """Decompose a gap in seconds into clamped (hours, minutes, seconds)."""
    if delta < 0:
        raise ValueError(f"negative time interval: {delta}")
    delta = int(delta)
    if delta >= SECONDS_PER_DAY:
        return max_hms
    return (delta // SECONDS_PER_HOUR, (delta % SECONDS_PER_HOUR) // 60, delta % 60)


@dataclass
class Batch:
    """Prefix samples padded to a common length with a validity mask."""
    items: np.ndarray      # (B, L) int, 0 in padding
    before: np.ndarray     # (B, L) int seconds, -1 where absent or padded
    after: np.ndarray      # (B, L) int
    mask: np.ndarray       # (B, L) bool
    targets: np.ndarray    # (B,) int
    lengths: np.ndarray    # (B,) int

    @classmethod
    def from_samples(cls, samples: list[SequenceSample], pad_to: int | None = None) -> "Batch":
        n = len(samples)
        length = max(len(s.prefix) for s in samples)
        if pad_to is not None:
            if pad_to < length:
                raise ValueError(f"pad_to={pad_to} below longest prefix {length}")
            length = pad_to
        items = np.zeros((n, length), dtype=np.int64)
        before = np.full((n, length), -1, dtype=np.int64)
        after = np.full((n, length), -1, dtype=np.int64)
        mask = np.zeros((n, length), dtype=bool)
        targets = np.zeros(n, dtype=np.int64)
        lengths = np.zeros(n, dtype=np.int64)
        for b, s in enumerate(samples):
            m = len(s.prefix)
            items[b, :m] = s.prefix
            before[b, :m] = [-1 if v is None else v for v in s.before_intervals]
            after[b, :m] = [-1 if v is None else v for v in s.after_intervals]
            mask[b, :m] = True
            targets[b] = s.target
            lengths[b] = m
        return cls(items, before, after, mask, targets, lengths)

    def __len__(self) -> int:
        return len(self.targets)


class TimeAwareModel:
    """Next-item scorer over a session prefix and its internal time gaps."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 item_init: np.ndarray | None = None):
        self.config = config
        self.params = nn.ParameterStore()
        d = config.dim
        dt = config.numpy_dtype()
        bound = 1.0 / np.sqrt(d)

        def add(name, shape):
            return self.params.add(name, nn.uniform_init(rng, shape, bound, dt))

        if item_init is not None:
            if item_init.shape != (config.n_items, d):
                raise nn.ShapeError(
                    f"item init table {item_init.shape} does not match ({config.n_items}, {d})")
            self.params.add("item_embedding", item_init.astype(dt))
        else:
            add("item_embedding", (config.n_items, d))
        for side in ("before", "after"):
            for unit, size in TIME_UNITS:
                add(f"time_{side}_{unit}", (size, d))
        directions = ("fwd",) if config.share_gru_weights else ("fwd", "bwd")
        for dirn in directions:
            for gate in GRU_GATES:
                add(f"gru_{dirn}.{gate}_w", (2 * d, d))
                add(f"gru_{dirn}.{gate}_b", (d,))
        for side in ("before", "after"):
            add(f"gate_{side}.w", (3 * d, d))
            add(f"gate_{side}.b", (d,))
        add("head.w", (config.head_input_dim, d))
        add("head.b", (d,))
        add("score_bias", (config.n_items,))

    def _gru_params(self, direction: str):
        if self.config.share_gru_weights:
            direction = "fwd"
        p = self.params
        return tuple(p[f"gru_{direction}.{g}_{s}"] for g in GRU_GATES for s in ("w", "b"))

    # -- stage 1: feature extraction -------------------------------------

    def embed_items(self, prefix) -> np.ndarray:
        """Row lookup into the item table (one-hot matmul equivalent)."""
        table = self.params["item_embedding"].value
        idx = np.asarray(prefix, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.config.n_items):
            raise ValueError(f"item id out of range [0, {self.config.n_items})")
        return table[idx]

    def encode_interval(self, delta: int | None, side: str) -> np.ndarray:
        """3d interval embedding; absent intervals are the zero vector."""
        d = self.config.dim
        dt = self.config.numpy_dtype()
        if delta is None:
            return np.zeros(3 * d, dtype=dt)
        hh, mm, ss = interval_units(delta, self.config.max_hms)
        return np.concatenate([
            self.params[f"time_{side}_hour"].value[hh],
            self.params[f"time_{side}_minute"].value[mm],
            self.params[f"time_{side}_second"].value[ss],
        ])

    def _interval_matrix(self, deltas, side: str):
        """(m, 3d) embedding rows plus the (hh, mm, ss) indices per step."""
        d = self.config.dim
        dt = self.config.numpy_dtype()
        m = len(deltas)
        out = np.zeros((m, 3 * d), dtype=dt)
        units: list[tuple | None] = []
        hour = self.params[f"time_{side}_hour"].value
        minute = self.params[f"time_{side}_minute"].value
        second = self.params[f"time_{side}_second"].value
        for k, delta in enumerate(deltas):
            if delta is None or delta < 0:
                units.append(None)
                continue
            hh, mm, ss = interval_units(int(delta), self.config.max_hms)
            units.append((hh, mm, ss))
            out[k, :d] = hour[hh]
            out[k, d:2 * d] = minute[mm]
            out[k, 2 * d:] = second[ss]
        return out, units

    # -- stage 2: session encoding ---------------------------------------

    def _gru_run(self, direction: str, xs: np.ndarray):
        """Run one GRU direction over xs (already in processing order)."""
        wz, bz, wr, br, wc, bc = (p.value for p in self._gru_params(direction))
        m, d = xs.shape
        zs = np.empty((m, d), dtype=xs.dtype)
        rs = np.empty((m, d), dtype=xs.dtype)
        cs = np.empty((m, d), dtype=xs.dtype)
        hs = np.empty((m + 1, d), dtype=xs.dtype)
        hs[0] = 0.0
        for k in range(m):
            cat = np.concatenate([hs[k], xs[k]])
            z = nn.sigmoid(cat @ wz + bz)
            r = nn.sigmoid(cat @ wr + br)
            cat2 = np.concatenate([r * hs[k], xs[k]])
            c = nn.tanh(cat2 @ wc + bc)
            hs[k + 1] = (1.0 - z) * hs[k] + z * c
            zs[k], rs[k], cs[k] = z, r, c
        return {"xs": xs, "zs": zs, "rs": rs, "cs": cs, "hs": hs}

    def _gru_backprop(self, direction: str, cache: dict, dhs: np.ndarray) -> np.ndarray:
        """Accumulate GRU parameter grads; returns input grads in processing order."""
        pz_w, pz_b, pr_w, pr_b, pc_w, pc_b = self._gru_params(direction)
        wz, wr, wc = pz_w.value, pr_w.value, pc_w.value
        xs, zs, rs, cs, hs = cache["xs"], cache["zs"], cache["rs"], cache["cs"], cache["hs"]
        m, d = xs.shape
        dxs = np.zeros_like(xs)
        carry = np.zeros(d, dtype=xs.dtype)
        for k in range(m - 1, -1, -1):
            dh = dhs[k] + carry
            h_prev, x, z, r, c = hs[k], xs[k], zs[k], rs[k], cs[k]
            dz = dh * (c - h_prev)
            dc = dh * z
            dh_prev = dh * (1.0 - z)
            dpre_c = dc * (1.0 - c * c)
            cat2 = np.concatenate([r * h_prev, x])
            pc_w.grad += np.outer(cat2, dpre_c)
            pc_b.grad += dpre_c
            dcat2 = wc @ dpre_c
            drh, dx_c = dcat2[:d], dcat2[d:]
            dr = drh * h_prev
            dh_prev += drh * r
            dpre_z = dz * z * (1.0 - z)
            dpre_r = dr * r * (1.0 - r)
            cat = np.concatenate([h_prev, x])
            pz_w.grad += np.outer(cat, dpre_z)
            pz_b.grad += dpre_z
            pr_w.grad += np.outer(cat, dpre_r)
            pr_b.grad += dpre_r
            dcat = wz @ dpre_z + wr @ dpre_r
            dh_prev += dcat[:d]
            dx = dx_c + dcat[d:]
            dxs[k] = dx
            carry = dh_prev
        return dxs

    def bigru_encode(self, item_vecs: np.ndarray) -> np.ndarray:
        """Merged per-step states: mean of forward and backward GRU outputs."""
        fwd = self._gru_run("fwd", item_vecs)
        bwd = self._gru_run("bwd", item_vecs[::-1])
        return (fwd["hs"][1:] + bwd["hs"][1:][::-1]) / 2.0

    # -- stages 3-6 -------------------------------------------------------

    def interval_gates(self, evec: np.ndarray, side: str) -> np.ndarray:
        """Sigmoid gate in (0,1)^d from a 3d interval embedding."""
        w = self.params[f"gate_{side}.w"].value
        b = self.params[f"gate_{side}.b"].value
        return nn.sigmoid(nn.add_bias(nn.matmul(evec, w), b))

    def forward(self, items, before, after, train: bool = False,
                rng: np.random.Generator | None = None) -> dict:
        """Full per-sample forward pass; returns the cache backward needs."""
        cfg = self.config
        d = cfg.dim
        rate = cfg.dropout_rate if train else 0.0
        cache: dict = {"items": np.asarray(items, dtype=np.int64), "m": len(items)}

        ei = self.embed_items(items)
        ei_d, cache["mask_ei"] = nn.dropout(ei, rate, train, rng)
        cache["ei_d"] = ei_d

        eb, cache["units_b"] = self._interval_matrix(before, "before")
        ea, cache["units_a"] = self._interval_matrix(after, "after")
        eb_d, cache["mask_eb"] = nn.dropout(eb, rate, train, rng)
        ea_d, cache["mask_ea"] = nn.dropout(ea, rate, train, rng)
        cache["eb_d"], cache["ea_d"] = eb_d, ea_d

        cache["gru_fwd"] = self._gru_run("fwd", ei_d)
        cache["gru_bwd"] = self._gru_run("bwd", ei_d[::-1])
        merged = (cache["gru_fwd"]["hs"][1:] + cache["gru_bwd"]["hs"][1:][::-1]) / 2.0
        merged_d, cache["mask_merged"] = nn.dropout(merged, rate, train, rng)
        cache["merged_d"] = merged_d

        if cfg.use_time_attention:
            gates_b = nn.sigmoid(eb_d @ self.params["gate_before.w"].value
                                 + self.params["gate_before.b"].value)
            gates_a = nn.sigmoid(ea_d @ self.params["gate_after.w"].value
                                 + self.params["gate_after.b"].value)
            cache["gates_b_raw"], cache["gates_a_raw"] = gates_b, gates_a
            gates_b, cache["mask_gb"] = nn.dropout(gates_b, rate, train, rng)
            gates_a, cache["mask_ga"] = nn.dropout(gates_a, rate, train, rng)
            cache["gates_b"], cache["gates_a"] = gates_b, gates_a
            ha = gates_a * merged_d
            hb = gates_b * merged_d
        else:
            ha = merged_d
            hb = merged_d
        cache["ha"], cache["hb"] = ha, hb

        parts = [ha[-1], hb[-1]]
        if cfg.use_self_attention:
            for stream_name, H in (("a", ha), ("b", hb)):
                for anchor_name, anchor_idx in (("first", 0), ("last", cache["m"] - 1)):
                    dots = H @ H[anchor_idx]
                    alpha = nn.softmax(dots)
                    pooled = alpha @ H
                    cache[f"alpha_{stream_name}_{anchor_name}"] = alpha
                    cache[f"pool_{stream_name}_{anchor_name}"] = pooled
            parts = [ha[-1], hb[-1],
                     cache["pool_a_first"], cache["pool_a_last"],
                     cache["pool_b_first"], cache["pool_b_last"]]
        z = np.concatenate(parts)
        cache["z"] = z
        zp = z @ self.params["head.w"].value + self.params["head.b"].value
        zp_d, cache["mask_zp"] = nn.dropout(zp, rate, train, rng)
        cache["zp_d"] = zp_d
        scores = zp_d @ self.params["item_embedding"].value.T + self.params["score_bias"].value
        cache["scores"] = scores
        cache["probs"] = nn.softmax(scores)
        return cache

    def scores(self, items, before, after) -> np.ndarray:
        return self.forward(items, before, after, train=False)["scores"]

    def loss_and_score_grad(self, probs: np.ndarray, target: int):
        """Loss value and its gradient with respect to the pre-softmax scores."""
        if self.config.loss_mode == "categorical":
            loss = -np.log(max(probs[target], 1e-12))
            dscores = probs.copy()
            dscores[target] -= 1.0
            return loss, dscores
        if self.config.loss_mode != "literal":
            raise ValueError(f"unknown loss mode: {self.config.loss_mode}")
        p = np.clip(probs, 1e-12, 1.0 - 1e-12)
        y = np.zeros_like(p)
        y[target] = 1.0
        loss = -np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
        dprobs = -y / p + (1.0 - y) / (1.0 - p)
        dscores = nn.softmax_backward(dprobs, probs)
        return loss, dscores

    def backward(self, cache: dict, dscores: np.ndarray) -> None:
        """Accumulate parameter gradients for one sample's forward cache."""
        cfg = self.config
        d = cfg.dim
        m = cache["m"]
        p = self.params

        p["score_bias"].grad += dscores
        p["item_embedding"].grad += np.outer(dscores, cache["zp_d"])
        dzp_d = p["item_embedding"].value.T @ dscores
        dzp = nn.dropout_backward(dzp_d, cache["mask_zp"])
        p["head.w"].grad += np.outer(cache["z"], dzp)
        p["head.b"].grad += dzp
        dz = p["head.w"].value @ dzp

        dha = np.zeros_like(cache["ha"])
        dhb = np.zeros_like(cache["hb"])
        dha[-1] += dz[:d]
        dhb[-1] += dz[d:2 * d]
        if cfg.use_self_attention:
            sections = (("a", "first", 0, dz[2 * d:3 * d]),
                        ("a", "last", m - 1, dz[3 * d:4 * d]),
                        ("b", "first", 0, dz[4 * d:5 * d]),
                        ("b", "last", m - 1, dz[5 * d:6 * d]))
            for stream_name, anchor_name, anchor_idx, dpool in sections:
                H = cache["ha"] if stream_name == "a" else cache["hb"]
                dH = dha if stream_name == "a" else dhb
                alpha = cache[f"alpha_{stream_name}_{anchor_name}"]
                dalpha = H @ dpool
                dH += np.outer(alpha, dpool)
                ddots = nn.softmax_backward(dalpha, alpha)
                dH += np.outer(ddots, H[anchor_idx])
                dH[anchor_idx] += ddots @ H

        if cfg.use_time_attention:
            dmerged_d = dha * cache["gates_a"] + dhb * cache["gates_b"]
            dgates_a = nn.dropout_backward(dha * cache["merged_d"], cache["mask_ga"])
            dgates_b = nn.dropout_backward(dhb * cache["merged_d"], cache["mask_gb"])
            for side, dgates, emb_key, mask_key, units_key in (
                    ("after", dgates_a, "ea_d", "mask_ea", "units_a"),
                    ("before", dgates_b, "eb_d", "mask_eb", "units_b")):
                raw = cache[f"gates_{side[0]}_raw"]
                dpre = dgates * raw * (1.0 - raw)
                p[f"gate_{side}.w"].grad += cache[emb_key].T @ dpre
                p[f"gate_{side}.b"].grad += dpre.sum(axis=0)
                demb_d = dpre @ p[f"gate_{side}.w"].value.T
                demb = nn.dropout_backward(demb_d, cache[mask_key])
                self._accumulate_interval_grads(side, cache[units_key], demb)
        else:
            dmerged_d = dha + dhb

        dmerged = nn.dropout_backward(dmerged_d, cache["mask_merged"])
        dh_each = dmerged / 2.0
        dx_fwd = self._gru_backprop("fwd", cache["gru_fwd"], dh_each)
        dx_bwd = self._gru_backprop("bwd", cache["gru_bwd"], dh_each[::-1])
        dei_d = dx_fwd + dx_bwd[::-1]
        dei = nn.dropout_backward(dei_d, cache["mask_ei"])
        np.add.at(p["item_embedding"].grad, cache["items"], dei)

    def _accumulate_interval_grads(self, side: str, units: list, demb: np.ndarray) -> None:
        d = self.config.dim
        hour = self.params[f"time_{side}_hour"].grad
        minute = self.params[f"time_{side}_minute"].grad
        second = self.params[f"time_{side}_second"].grad
        for k, u in enumerate(units):
            if u is None:
                continue
            hh, mm, ss = u
            hour[hh] += demb[k, :d]
            minute[mm] += demb[k, d:2 * d]
            second[ss] += demb[k, 2 * d:]

    # -- training ----------------------------------------------------------

    def _sample_views(self, batch: Batch, b: int):
        m = int(batch.lengths[b])
        items = batch.items[b, :m]
        before = [None if v < 0 else int(v) for v in batch.before[b, :m]]
        after = [None if v < 0 else int(v) for v in batch.after[b, :m]]
        return items, before, after

    def batch_loss(self, batch: Batch, train: bool = False,
                   rng: np.random.Generator | None = None) -> float:
        total = 0.0
        for b in range(len(batch)):
            items, before, after = self._sample_views(batch, b)
            cache = self.forward(items, before, after, train=train, rng=rng)
            loss, _ = self.loss_and_score_grad(cache["probs"], int(batch.targets[b]))
            total += loss
        return total / len(batch)

    def batch_backward(self, batch: Batch, train: bool = False,
                       rng: np.random.Generator | None = None) -> float:
        """Forward + backward over the batch; grads accumulate, loss is the mean."""
        total = 0.0
        scale = 1.0 / len(batch)
        for b in range(len(batch)):
            items, before, after = self._sample_views(batch, b)
            cache = self.forward(items, before, after, train=train, rng=rng)
            loss, dscores = self.loss_and_score_grad(cache["probs"], int(batch.targets[b]))
            total += loss
            self.backward(cache, dscores * scale)
        return total / len(batch)

    def train_step(self, batch: Batch, lr: float, rng: np.random.Generator | None = None,
                   l2: float = 1e-6, batch_id=None) -> float:
        """One optimization step: mean loss, backward, Adam with L2, zero grads."""
        loss = self.batch_backward(batch, train=True, rng=rng)
        if not np.isfinite(loss):
            raise nn.DivergenceError(f"non-finite loss in batch {batch_id!r}: {loss}")
        for param in self.params:
            nn.adam_step(param, lr, l2=l2)
        self.params.zero_grads()
        return loss
