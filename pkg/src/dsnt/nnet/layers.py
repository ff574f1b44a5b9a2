"""Recurrent and attention building blocks on top of the autodiff engine.

All layers take a ``params`` mapping of name -> Tensor and a name prefix, so
the same code serves training (tracked tensors) and evaluation.
LSTM weights are stored as one ``(in + hidden, 4 * hidden)`` matrix with the
gate blocks ordered input, forget, output, candidate.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..rstdep import DependencyTree

MASK_VALUE = -1e9


def lstm_run(xs: Sequence[Tensor], params: Mapping[str, Tensor], prefix: str) -> list[Tensor]:
    """Unidirectional LSTM over a list of (batch, in) step inputs."""
    W, b = params[prefix + "W"], params[prefix + "b"]
    hidden = b.shape[0] // 4
    batch = xs[0].shape[0]
    h = Tensor(np.zeros((batch, hidden)))
    c = Tensor(np.zeros((batch, hidden)))
    outs = []
    for x in xs:
        z = ad.matmul(ad.concat([x, h], axis=1), W) + b
        gates = ad.sigmoid(z[:, :3 * hidden])
        i = gates[:, :hidden]
        f = gates[:, hidden:2 * hidden]
        o = gates[:, 2 * hidden:]
        g = ad.tanh(z[:, 3 * hidden:])
        c = f * c + i * g
        h = o * ad.tanh(c)
        outs.append(h)
    return outs


def _reverse_index(lengths: Sequence[int], steps: int) -> np.ndarray:
    """Flat (step, batch) permutation that reverses each sequence in place.

    Padding positions map to themselves; the permutation is an involution,
    so it both builds the reversed input and re-aligns reversed outputs.
    """
    batch = len(lengths)
    perm = np.arange(steps * batch).reshape(steps, batch)
    for b, n in enumerate(lengths):
        perm[:n, b] = (n - 1 - np.arange(n)) * batch + b
    return perm.reshape(-1)


def bilstm_padded(x: Tensor, lengths: Sequence[int], params: Mapping[str, Tensor],
                  prefix: str) -> Tensor:
    """BiLSTM over right-padded sequences.

    ``x`` is ``(steps * batch, in)`` in step-major order.  Returns
    ``(steps * batch, 2 * hidden)``; rows at padding positions are junk and
    must be masked by the caller.
    """
    batch = len(lengths)
    steps = x.shape[0] // batch
    perm = _reverse_index(lengths, steps)
    fwd = lstm_run([x[t * batch:(t + 1) * batch] for t in range(steps)], params, prefix + "fwd_")
    x_rev = ad.take(x, perm)
    bwd = lstm_run([x_rev[t * batch:(t + 1) * batch] for t in range(steps)], params, prefix + "bwd_")
    hidden = fwd[0].shape[1]
    h_fwd = ad.reshape(ad.stack(fwd), (steps * batch, hidden))
    h_bwd = ad.take(ad.reshape(ad.stack(bwd), (steps * batch, hidden)), perm)
    return ad.concat([h_fwd, h_bwd], axis=1)


def bilstm_sequence(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """BiLSTM over a single (n, in) sequence, returning (n, 2 * hidden)."""
    return bilstm_padded(x, [x.shape[0]], params, prefix)


def attention_scores(h: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """u_i = tanh(W h_i + b); returns the unnormalized scores u_i . c."""
    u = ad.tanh(ad.matmul(h, params[prefix + "W"]) + params[prefix + "b"])
    return ad.matmul(u, params[prefix + "c"])


def _levels(dep: DependencyTree) -> list[list[int]]:
    """Group nodes by height above their deepest descendant (leaves first)."""
    height = [0] * dep.n
    children = dep.children
    for node in dep.post_order():
        if children[node]:
            height[node] = 1 + max(height[c] for c in children[node])
    levels: list[list[int]] = [[] for _ in range(max(height) + 1)]
    for node in range(dep.n):
        levels[height[node]].append(node)
    return levels


def tree_lstm(x: Tensor, dep: DependencyTree, params: Mapping[str, Tensor],
              prefix: str = "tree_") -> Tensor:
    """Child-sum TreeLSTM with sigmoid child attention; returns the root state.

    Node inputs are the rows of ``x``.  Each head computes a query from its
    own input, gates every dependent by ``sigmoid(q^T C h_child)``, and feeds
    the gated sum of dependent states to its input/output/update gates.
    Forget gates are per dependent, on the dependent's own state.  Nodes of
    equal height are updated together; :func:`tree_lstm_cell` is the
    one-node reference.
    """
    if dep.n != x.shape[0]:
        raise ValueError(f"dependency tree has {dep.n} nodes but {x.shape[0]} inputs were given")
    P = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
    hidden = P["U_f"].shape[0]
    wx = ad.matmul(x, P["W_iou"]) + P["b_iou"]
    fx = ad.matmul(x, P["W_f"]) + P["b_f"]
    query = ad.matmul(x, P["W_q"])
    children = dep.children
    row = {}  # node -> row in the concatenated state matrices
    h_parts: list[Tensor] = []
    c_parts: list[Tensor] = []
    for level in _levels(dep):
        iou = ad.take(wx, level)
        kids = [k for node in level for k in children[node]]
        if kids:
            heads = [j for j, node in enumerate(level) for _ in children[node]]
            h_all = h_parts[0] if len(h_parts) == 1 else ad.concat(h_parts, axis=0)
            c_all = c_parts[0] if len(c_parts) == 1 else ad.concat(c_parts, axis=0)
            idx = [row[k] for k in kids]
            h_kids = ad.take(h_all, idx)
            c_kids = ad.take(c_all, idx)
            level_query = ad.take(query, [level[j] for j in heads])
            beta = ad.sigmoid(ad.sum_(ad.matmul(level_query, P["C"]) * h_kids, axis=1))
            assign = np.zeros((len(level), len(kids)))
            assign[heads, np.arange(len(kids))] = 1.0
            assign = Tensor(assign)
            h_sum = ad.matmul(assign, h_kids * ad.reshape(beta, (len(kids), 1)))
            iou = iou + ad.matmul(h_sum, P["U_iou"])
            f = ad.sigmoid(ad.matmul(h_kids, P["U_f"]) + ad.take(fx, [level[j] for j in heads]))
        i = ad.sigmoid(iou[:, :hidden])
        o = ad.sigmoid(iou[:, hidden:2 * hidden])
        u = ad.tanh(iou[:, 2 * hidden:])
        c = i * u
        if kids:
            c = c + ad.matmul(assign, f * c_kids)
        h = o * ad.tanh(c)
        offset = sum(part.shape[0] for part in h_parts)
        for j, node in enumerate(level):
            row[node] = offset + j
        h_parts.append(h)
        c_parts.append(c)
    # only the root reaches the maximum height
    return h_parts[-1][0]


def tree_lstm_cell(x: Tensor, kids: Sequence[tuple[Tensor, Tensor]], params: Mapping[str, Tensor],
                   prefix: str = "tree_") -> tuple[Tensor, Tensor]:
    """One TreeLSTM node update from its input and its dependents' (h, c)."""
    P = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
    hidden = P["U_f"].shape[0]
    iou = ad.matmul(x, P["W_iou"]) + P["b_iou"]
    if kids:
        h_kids = ad.stack([h for h, _ in kids])
        c_kids = ad.stack([c for _, c in kids])
        beta = ad.sigmoid(ad.matmul(h_kids, ad.matmul(ad.matmul(x, P["W_q"]), P["C"])))
        iou = iou + ad.matmul(ad.matmul(beta, h_kids), P["U_iou"])
        f = ad.sigmoid(ad.matmul(h_kids, P["U_f"]) + ad.matmul(x, P["W_f"]) + P["b_f"])
    i = ad.sigmoid(iou[:hidden])
    o = ad.sigmoid(iou[hidden:2 * hidden])
    u = ad.tanh(iou[2 * hidden:])
    c = i * u
    if kids:
        c = c + ad.sum_(f * c_kids, axis=0)
    return o * ad.tanh(c), c
