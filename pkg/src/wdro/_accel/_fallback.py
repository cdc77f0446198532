"""Vectorized numpy implementation of the training kernels.

Computes, for a batch of points and an MLP classifier with cross-entropy
loss, the penalized objective

    mean_b h_b + lam * mean_b ||d h_b / d x_b||_2^2

together with its parameter gradient.  The second-order part follows the
adjoint of the input-gradient computation itself (forward pass, softmax
head, backward chain), written out layer by layer; the tape engine in
:mod:`wdro.autodiff` produces the same numbers and serves as the reference
implementation in the test suite.

Scalar batch reductions accumulate left to right; matrix contractions use
BLAS, which is deterministic for a fixed build.
"""

from __future__ import annotations

import numpy as np

ACT_TANH = 0
ACT_LEAKY = 1


def _forward(ws, bs, act, slope, x):
    """Hidden activations and pre-activations for a batch.

    Returns ``(a_list, s_list)`` where ``a_list[0]`` is the input and
    ``a_list[J]`` the logits (the output layer is affine).
    """
    n_layers = len(ws)
    a_list = [x]
    s_list = [None]
    a = x
    for layer in range(n_layers):
        s = a @ ws[layer].T + bs[layer]
        s_list.append(s)
        if layer < n_layers - 1:
            if act == ACT_TANH:
                a = np.tanh(s)
            else:
                a = np.where(s >= 0.0, s, slope * s)
        else:
            a = s
        a_list.append(a)
    return a_list, s_list


def _dact(act, slope, s, a):
    if act == ACT_TANH:
        return 1.0 - a * a
    return np.where(s >= 0.0, 1.0, slope)


def _ddact(act, s, a, d):
    """Second derivative of the activation (elementwise).

    tanh'' = -2 tanh (1 - tanh^2); piecewise-linear activations are flat.
    """
    if act == ACT_TANH:
        return -2.0 * a * d
    return np.zeros_like(s)


def forward_logits(ws, bs, act, slope, x):
    a_list, _ = _forward(ws, bs, act, slope, x)
    return a_list[-1]


def _softmax_and_loss(logits, targets):
    m = np.max(logits, axis=1, keepdims=True)
    shifted = logits - m
    expos = np.exp(shifted)
    total = np.sum(expos, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(total[:, 0])
    losses = lse - np.sum(targets * logits, axis=1)
    probs = expos / total
    return probs, losses


def input_gradients(ws, bs, act, slope, x, y):
    """Per-sample gradient of the cross-entropy loss w.r.t. the features."""
    n_layers = len(ws)
    a_list, s_list = _forward(ws, bs, act, slope, x)
    probs, _ = _softmax_and_loss(a_list[-1], y)
    delta = probs - y
    for layer in range(n_layers, 0, -1):
        if layer < n_layers:
            t = _dact(act, slope, s_list[layer], a_list[layer]) * delta
        else:
            t = delta
        delta = t @ ws[layer - 1]
    return delta


def penalized_objective(ws, bs, act, slope, x, y, lam):
    """Objective value, its two components, and the parameter gradients.

    Returns ``(objective, mean_loss, mean_penalty, grads)`` with ``grads``
    ordered ``[dW1, db1, dW2, db2, ...]``.
    """
    n_layers = len(ws)
    batch = x.shape[0]
    a_list, s_list = _forward(ws, bs, act, slope, x)
    logits = a_list[-1]
    probs, losses = _softmax_and_loss(logits, y)

    # backward chain shared by the first-order gradient and the penalty
    delta = [None] * (n_layers + 1)   # d h / d a_{l}  pulled through layers
    t_list = [None] * (n_layers + 1)  # d h / d s_l
    delta[n_layers] = probs - y
    for layer in range(n_layers, 0, -1):
        if layer < n_layers:
            t = _dact(act, slope, s_list[layer], a_list[layer]) * delta[layer]
        else:
            t = delta[n_layers]
        t_list[layer] = t
        delta[layer - 1] = t @ ws[layer - 1]

    gx = delta[0]
    penalties = np.sum(gx * gx, axis=1)

    gw = [t_list[l].T @ a_list[l - 1] for l in range(1, n_layers + 1)]
    gb = [np.sum(t_list[l], axis=0) for l in range(1, n_layers + 1)]

    if lam != 0.0:
        pw = [np.zeros_like(w) for w in ws]
        pb = [np.zeros_like(b) for b in bs]
        sbar2 = [None] * (n_layers + 1)

        # adjoint of the backward chain, from the input gradient upward
        dbar = 2.0 * gx
        for layer in range(1, n_layers + 1):
            tbar = dbar @ ws[layer - 1].T
            pw[layer - 1] += t_list[layer].T @ dbar
            if layer < n_layers:
                s = s_list[layer]
                a = a_list[layer]
                d = _dact(act, slope, s, a)
                sbar2[layer] = _ddact(act, s, a, d) * delta[layer] * tbar
                dbar = d * tbar
            else:
                sbar2[layer] = np.zeros_like(tbar)
                dbar = tbar

        # through the softmax head: delta_J = softmax(logits) - y
        pbar = dbar
        abar = probs * (pbar - np.sum(probs * pbar, axis=1, keepdims=True))

        # and finally through the forward pass
        for layer in range(n_layers, 0, -1):
            if layer < n_layers:
                d = _dact(act, slope, s_list[layer], a_list[layer])
                sbar = d * abar + sbar2[layer]
            else:
                sbar = abar + sbar2[layer]
            pw[layer - 1] += sbar.T @ a_list[layer - 1]
            pb[layer - 1] += np.sum(sbar, axis=0)
            abar = sbar @ ws[layer - 1]

    mean_loss = 0.0
    for v in losses:
        mean_loss += float(v)
    mean_loss /= batch
    mean_pen = 0.0
    for v in penalties:
        mean_pen += float(v)
    mean_pen /= batch
    objective = mean_loss + lam * mean_pen

    grads = []
    scale = 1.0 / batch
    for layer in range(n_layers):
        if lam != 0.0:
            grads.append(scale * gw[layer] + (lam * scale) * pw[layer])
            grads.append(scale * gb[layer] + (lam * scale) * pb[layer])
        else:
            grads.append(scale * gw[layer])
            grads.append(scale * gb[layer])
    return objective, mean_loss, mean_pen, grads
