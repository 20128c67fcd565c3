"""Reverse-mode differentiation core on float64 numpy arrays.

Exactly the layer set the extraction model needs: embedding lookup,
per-token and sequence-level 1-D convolution with max-over-time pooling,
masked LSTM scans, dense layers, fused softmax cross-entropy, inverted
dropout, a gradient-scaling pass-through, and Adam.

Ops build a graph of :class:`Tensor` nodes on the fly; :func:`backward`
runs the tape in reverse topological order and accumulates gradients into
leaf tensors (parameters live in a :class:`ParamStore`).  Everything is
float64 and deterministic: a fixed seed reproduces forward, backward, and
update bit for bit.

Masking convention: sequence ops take the real length and neither read
nor write padded positions, so perturbing padding changes no loss value
at all.  Words shorter than a convolution window are zero-padded up to
the window, per the max-over-time convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NeuralError(ValueError):
    pass


class Tensor:
    """One node of the computation graph.

    ``data`` is a float64 array (0-d for scalars), ``grad`` is filled by
    :func:`backward`, ``parents`` and ``backward_fn`` describe how to push
    an output gradient to the inputs.  Leaves have no parents.
    """

    __slots__ = ("data", "grad", "parents", "backward_fn", "name")

    def __init__(self, data, parents=(), backward_fn=None, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        label = self.name or "tensor"
        return f"Tensor({label}, shape={self.shape})"


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into every reachable node's ``grad``."""
    if loss.data.ndim != 0:
        raise NeuralError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


class ParamStore:
    """Named trainable tensors plus their Adam moment buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise NeuralError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), name=name)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> tuple[str, ...]:
        return tuple(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def total_size(self) -> int:
        return sum(t.data.size for t in self._params.values())


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    def __post_init__(self) -> None:
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise NeuralError("Adam betas must lie in (0, 1)")
        if self.lr <= 0 or self.step < 0:
            raise NeuralError("Adam needs lr > 0 and step >= 0")


def adam_step(store: ParamStore, state: AdamState) -> None:
    """Bias-corrected Adam update on every parameter holding a gradient.

    Parameters outside the current graph (grad ``None``) keep their values
    and moments untouched, so interleaved objectives update disjoint
    parameter subsets independently.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in store.items():
        g = t.grad
        if g is None:
            continue
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        t.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# ops


def lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: output shape ``ids.shape + (d,)``; scatter-add on backward."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise NeuralError("embedding id out of range")
    out = Tensor(table.data[ids], parents=(table,), name="lookup")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        table.accumulate(gt)

    out.backward_fn = bw
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise NeuralError(f"concat shape mismatch: {a.shape} vs {b.shape}")
    da = a.data.shape[-1]
    out = Tensor(np.concatenate([a.data, b.data], axis=-1), parents=(a, b))

    def bw(g):
        a.accumulate(g[..., :da])
        b.accumulate(g[..., da:])

    out.backward_fn = bw
    return out


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` for 1-D or 2-D ``x``."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise NeuralError(f"dense shape mismatch: {x.shape} @ {w.shape}")
    out = Tensor(x.data @ w.data + b.data, parents=(x, w, b))

    def bw(g):
        if x.data.ndim == 1:
            x.accumulate(w.data @ g)
            w.accumulate(np.outer(x.data, g))
            b.accumulate(g)
        else:
            x.accumulate(g @ w.data.T)
            w.accumulate(x.data.T @ g)
            b.accumulate(g.sum(axis=0))

    out.backward_fn = bw
    return out


def scale_grad(x: Tensor, factor: float) -> Tensor:
    """Identity forward; multiplies the upstream gradient by ``factor``."""
    out = Tensor(x.data, parents=(x,), name="scale_grad")
    out.backward_fn = lambda g: x.accumulate(factor * g)
    return out


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: kept entries scaled by 1/(1-rate); identity when
    not training or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise NeuralError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep) / keep
    out = Tensor(x.data * mask, parents=(x,), name="dropout")
    out.backward_fn = lambda g: x.accumulate(g * mask)
    return out


def combine(tensors: list[Tensor], coeffs: list[float]) -> Tensor:
    """Scalar linear combination Σ cᵢ·tᵢ; the batch-loss joiner."""
    if len(tensors) != len(coeffs) or not tensors:
        raise NeuralError("combine needs matching non-empty tensors and coeffs")
    for t in tensors:
        if t.data.ndim != 0:
            raise NeuralError("combine operates on scalars")
    value = sum(c * t.data for c, t in zip(coeffs, tensors))
    out = Tensor(np.float64(value), parents=tuple(tensors), name="combine")

    def bw(g):
        for c, t in zip(coeffs, tensors):
            t.accumulate(c * g)

    out.backward_fn = bw
    return out


def softmax(x: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis (plain arrays)."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(dist: np.ndarray, target: int, weight: float = 1.0) -> float:
    """-weight * log(dist[target]) on an explicit distribution."""
    dist = np.asarray(dist, dtype=np.float64)
    if not 0 <= target < dist.shape[-1]:
        raise NeuralError(f"target {target} out of range for {dist.shape[-1]} classes")
    return float(-weight * np.log(dist[target]))


def softmax_cross_entropy(
    logits: Tensor, targets: np.ndarray, weights: np.ndarray
) -> Tensor:
    """Weighted mean of per-row cross-entropies, fused with the softmax.

    ``loss = Σᵢ wᵢ·CEᵢ / Σᵢ wᵢ``; rows with weight 0 (masked positions)
    contribute nothing to value or gradient.  Accepts a single logit row
    as 1-D input.
    """
    squeeze = logits.data.ndim == 1
    z = logits.data[None, :] if squeeze else logits.data
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
    n, k = z.shape
    if targets.shape != (n,) or weights.shape != (n,):
        raise NeuralError("targets/weights must match the logit row count")
    if targets.min() < 0 or targets.max() >= k:
        raise NeuralError("cross-entropy target out of range")
    wsum = weights.sum()
    if wsum <= 0:
        raise NeuralError("cross-entropy needs positive total weight")
    shifted = z - z.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    ce = logz - shifted[np.arange(n), targets]
    out = Tensor(np.float64((weights * ce).sum() / wsum),
                 parents=(logits,), name="softmax_ce")

    def bw(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        p *= (weights / wsum)[:, None] * g
        logits.accumulate(p[0] if squeeze else p)

    out.backward_fn = bw
    return out


def lstm_scan(
    x: Tensor,
    length: int,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
    reverse: bool = False,
) -> Tensor:
    """One-direction LSTM over the first ``length`` rows of ``x``.

    Gate order [input, forget, cell, output]; rows at and beyond
    ``length`` yield zeros and are never read, so padding cannot leak
    into real positions.
    """
    n, d_in = x.data.shape
    h4 = wx.data.shape[1]
    if wx.data.shape[0] != d_in or h4 % 4:
        raise NeuralError(f"LSTM shape mismatch: input {d_in}, wx {wx.shape}")
    h = h4 // 4
    if wh.data.shape != (h, h4) or b.data.shape != (h4,):
        raise NeuralError("LSTM recurrent shapes inconsistent")
    if not 0 <= length <= n:
        raise NeuralError(f"length {length} outside [0, {n}]")

    order = range(length - 1, -1, -1) if reverse else range(length, )
    order = list(order)
    pre = x.data[:length] @ wx.data + b.data if length else np.zeros((0, h4))

    H = np.zeros((n, h))
    cache = []
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    for t in order:
        z = pre[t] + h_prev @ wh.data
        zi, zf, zg, zo = z[:h], z[h: 2 * h], z[2 * h: 3 * h], z[3 * h:]
        i = 1.0 / (1.0 + np.exp(-zi))
        f = 1.0 / (1.0 + np.exp(-zf))
        g_ = np.tanh(zg)
        o = 1.0 / (1.0 + np.exp(-zo))
        c = f * c_prev + i * g_
        tc = np.tanh(c)
        H[t] = o * tc
        cache.append((t, i, f, g_, o, c_prev, tc, h_prev))
        h_prev = H[t]
        c_prev = c

    out = Tensor(H, parents=(x, wx, wh, b), name="lstm")

    def bw(grad_out):
        dwx = np.zeros_like(wx.data)
        dwh = np.zeros_like(wh.data)
        db = np.zeros_like(b.data)
        dx = np.zeros_like(x.data)
        dh_next = np.zeros(h)
        dc_next = np.zeros(h)
        for t, i, f, g_, o, c_prev_, tc, h_prev_ in reversed(cache):
            dh = grad_out[t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g_
            df = dc * c_prev_
            dg = dc * i
            dc_next = dc * f
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g_ * g_),
                    do * o * (1.0 - o),
                ]
            )
            dwx += np.outer(x.data[t], dz)
            dwh += np.outer(h_prev_, dz)
            db += dz
            dx[t] += dz @ wx.data.T
            dh_next = dz @ wh.data.T
        x.accumulate(dx)
        wx.accumulate(dwx)
        wh.accumulate(dwh)
        b.accumulate(db)

    out.backward_fn = bw
    return out


def bilstm_forward(
    x: Tensor,
    length: int,
    fwd: tuple[Tensor, Tensor, Tensor],
    bwd: tuple[Tensor, Tensor, Tensor],
) -> Tensor:
    """Concatenated forward and backward LSTM states, (n, 2h)."""
    return concat_cols(
        lstm_scan(x, length, *fwd, reverse=False),
        lstm_scan(x, length, *bwd, reverse=True),
    )


def _window_stack(data: np.ndarray, window: int, positions: int) -> np.ndarray:
    # (rows, d) -> (positions, window*d); rows are already zero-padded
    return np.stack(
        [data[p: p + window].reshape(-1) for p in range(positions)], axis=0
    )


def seq_conv_maxpool(
    x: Tensor, w: Tensor, b: Tensor, window: int, length: int
) -> Tensor:
    """Valid 1-D convolution over the first ``length`` rows of ``x``,
    max-pooled over positions; output (f,).

    Inputs shorter than the window are zero-padded up to it.
    """
    n, d_in = x.data.shape
    f = w.data.shape[1]
    if w.data.shape[0] != window * d_in:
        raise NeuralError(
            f"conv kernel {w.shape} does not fit window {window} × width {d_in}"
        )
    length = min(length, n)
    if length < 1:
        raise NeuralError("convolution needs at least one real row")
    rows = x.data[:length]
    if length < window:
        rows = np.vstack([rows, np.zeros((window - length, d_in))])
    positions = rows.shape[0] - window + 1
    scores = _window_stack(rows, window, positions) @ w.data + b.data
    best = scores.argmax(axis=0)
    out = Tensor(scores[best, np.arange(f)], parents=(x, w, b), name="conv")

    def bw(g):
        dw = np.zeros_like(w.data)
        dx = np.zeros_like(x.data)
        db = np.zeros_like(b.data)
        db += g
        for j in range(f):
            p = best[j]
            seg = rows[p: p + window].reshape(-1)
            dw[:, j] += g[j] * seg
            contrib = (g[j] * w.data[:, j]).reshape(window, d_in)
            top = min(p + window, length)
            if top > p:
                dx[p: top] += contrib[: top - p]
        x.accumulate(dx)
        w.accumulate(dw)
        b.accumulate(db)

    out.backward_fn = bw
    return out


def conv1d_maxpool(
    x: Tensor,
    kernels: list[tuple[int, Tensor, Tensor]],
    length: int,
) -> Tensor:
    """Multi-window convolution bank: concatenation of
    :func:`seq_conv_maxpool` outputs, one block per (window, W, b)."""
    parts = [seq_conv_maxpool(x, w, b, window, length) for window, w, b in kernels]
    out = parts[0]
    for p in parts[1:]:
        joined = Tensor(
            np.concatenate([out.data, p.data]), parents=(out, p), name="concat1d"
        )
        da = out.data.shape[0]

        def bw(g, left=out, right=p, cut=da):
            left.accumulate(g[:cut])
            right.accumulate(g[cut:])

        joined.backward_fn = bw
        out = joined
    return out


def token_char_conv(
    table: Tensor,
    grid: np.ndarray,
    word_lengths: np.ndarray,
    w: Tensor,
    b: Tensor,
    window: int,
) -> Tensor:
    """Per-token character convolution with max pooling, batched over a
    sentence: grid (n, m) of char ids -> features (n, f).

    Each token reads only its first ``word_lengths[i]`` grid cells,
    zero-padded up to the window; zero-length rows (sentence padding)
    yield zero features and receive no gradient.
    """
    grid = np.asarray(grid, dtype=np.int64)
    lengths = np.asarray(word_lengths, dtype=np.int64)
    n, m = grid.shape
    d_char = table.data.shape[1]
    f = w.data.shape[1]
    if w.data.shape[0] != window * d_char:
        raise NeuralError("char conv kernel does not fit window × char width")
    if lengths.shape != (n,):
        raise NeuralError("word_lengths must have one entry per token row")

    real = lengths > 0
    emb = table.data[grid]                      # (n, m, d_char)
    emb[~(np.arange(m)[None, :] < lengths[:, None])] = 0.0
    width = max(m, window)
    if width > m:
        emb = np.concatenate([emb, np.zeros((n, width - m, d_char))], axis=1)
    pos_count = np.maximum(np.minimum(lengths, width) - window + 1, 1)
    pos_count[~real] = 0
    pmax = int(pos_count.max()) if real.any() else 0

    out_data = np.zeros((n, f))
    best = np.zeros((n, f), dtype=np.int64)
    windows = None
    if pmax > 0:
        windows = np.stack(
            [emb[:, p: p + window].reshape(n, -1) for p in range(pmax)], axis=1
        )                                        # (n, pmax, window*d_char)
        scores = windows @ w.data + b.data       # (n, pmax, f)
        invalid = np.arange(pmax)[None, :] >= pos_count[:, None]
        scores[invalid] = -np.inf
        best = scores.argmax(axis=1)
        rows = np.arange(n)[:, None]
        out_data[real] = (scores[rows, best, np.arange(f)[None, :]])[real]

    out = Tensor(out_data, parents=(table, w, b), name="char_conv")

    def bw(g):
        if pmax == 0:
            return
        gr = g * real[:, None]
        b.accumulate(gr.sum(axis=0))
        rows = np.arange(n)[:, None]
        sel = windows[rows, best]                # (n, f, window*d_char)
        w.accumulate(np.einsum("nf,nfk->kf", gr, sel))
        dwin = np.zeros_like(windows)
        np.add.at(dwin, (rows, best), gr[:, :, None] * w.data.T[None, :, :])
        demb = np.zeros_like(emb)
        for p in range(pmax):
            demb[:, p: p + window] += dwin[:, p].reshape(n, window, d_char)
        demb = demb[:, :m]
        demb[~(np.arange(m)[None, :] < lengths[:, None])] = 0.0
        gt = np.zeros_like(table.data)
        np.add.at(gt, grid.reshape(-1), demb.reshape(-1, d_char))
        table.accumulate(gt)

    out.backward_fn = bw
    return out
