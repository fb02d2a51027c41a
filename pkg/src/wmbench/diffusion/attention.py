"""Scaled dot-product attention and the routing hook used at self-attention sites."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Tuple

import numpy as np

SiteName = Tuple[str, int]


class AttentionDimError(ValueError):
    pass


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(logits, axis=axis, keepdims=True)
    e = np.exp(logits - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def view_attention(
    queries_from: np.ndarray,
    keys_from: np.ndarray,
    w_q: np.ndarray,
    w_k: np.ndarray,
    w_v: np.ndarray,
    scale: Optional[float] = None,
    layer: str = "?",
    return_weights: bool = False,
):
    """Attention with queries from one token set and keys/values from another.

    ``queries_from`` and ``keys_from`` are ``(..., N, D)`` token features;
    projections are ``D x d`` (``D x d_v`` for values). ``scale`` defaults to
    ``1 / sqrt(d)``. Passing the same array twice is ordinary self-attention.
    """
    q_src = np.asarray(queries_from, dtype=np.float64)
    kv_src = np.asarray(keys_from, dtype=np.float64)
    if q_src.shape != kv_src.shape:
        raise AttentionDimError(
            f"layer {layer}: query tokens {q_src.shape} vs reference tokens {kv_src.shape}"
        )
    if w_q.shape[0] != q_src.shape[-1] or w_k.shape[0] != kv_src.shape[-1]:
        raise AttentionDimError(f"layer {layer}: projection input dim mismatch")
    if w_q.shape[1] != w_k.shape[1]:
        raise AttentionDimError(f"layer {layer}: query/key dims {w_q.shape[1]} != {w_k.shape[1]}")
    d = w_q.shape[1]
    scale = 1.0 / np.sqrt(d) if scale is None else scale
    q = q_src @ w_q
    k = kv_src @ w_k
    v = kv_src @ w_v
    weights = softmax((q @ np.swapaxes(k, -1, -2)) * scale)
    out = weights @ v
    return (out, weights) if return_weights else out


class AttentionRouter:
    """Decides where each batch element's keys and values come from.

    ``standard`` returns the hidden states untouched, so a denoiser call
    with a standard router is identical to one with no router at all.
    ``view_guided`` takes ``pairs`` ``{dst: src}`` mapping a batch index to the
    index whose features it should attend to (the batch-of-two layout:
    reference path at ``src``, transformed path at ``dst``). A
    ``reference_provider(site, t)`` may instead supply reference tokens from
    outside the batch; it wins over ``pairs`` for the destinations it covers.
    """

    def __init__(
        self,
        mode: str = "standard",
        pairs: Optional[Dict[int, int]] = None,
        reference_provider: Optional[Callable[[SiteName, int], Optional[np.ndarray]]] = None,
    ):
        if mode not in ("standard", "view_guided"):
            raise ValueError(f"unknown router mode {mode!r}")
        if mode == "view_guided" and not pairs and reference_provider is None:
            raise ValueError("view_guided routing needs pairs or a reference_provider")
        self.mode = mode
        self.pairs = dict(pairs or {})
        self.reference_provider = reference_provider
        self.calls: list = []

    def keys_values(self, site: SiteName, t: int, hidden: np.ndarray) -> np.ndarray:
        self.calls.append((site, int(t)))
        if self.mode == "standard":
            return hidden
        # fancy indexing copies for both numpy arrays and torch tensors
        out = hidden[[self.pairs.get(i, i) for i in range(hidden.shape[0])]]
        if self.reference_provider is not None:
            ref = self.reference_provider(site, t)
            if ref is not None:
                ref = np.asarray(ref)
                if ref.shape != hidden.shape[1:]:
                    raise AttentionDimError(
                        f"layer {site}: reference tokens {ref.shape} vs {hidden.shape[1:]}"
                    )
                for dst in self.pairs or range(hidden.shape[0]):
                    out[dst] = ref
        return out

    def sites_seen(self) -> set:
        return {s for s, _ in self.calls}
