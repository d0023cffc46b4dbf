"""Hot inner loops: the LSTM time recurrence and confusion-matrix counting.

The recurrence is strictly sequential over tokens, so it runs as one compiled
loop per direction instead of a chain of small tape operations.  The input
projection ``x @ W + b`` is done outside (it is a single batched matmul).

Gate layout along the last axis of the ``4*d`` pre-activations is
``[input, forget, candidate, output]``.
"""

import numpy as np

from ._accel import njit


@njit
def lstm_forward(xg, U, reverse):
    """Run the recurrence over precomputed input pre-activations.

    Parameters
    ----------
    xg : (n, 4d) array
        ``x_t @ W + b`` for every position.
    U : (d, 4d) array
        Recurrent weights.
    reverse : bool
        Process positions ``n-1 .. 0`` (right-to-left) instead of ``0 .. n-1``.

    Returns
    -------
    H, gates, cells, tanh_cells
        ``H[t]`` is the hidden state emitted at position ``t`` (in original
        order); the other arrays are caches for :func:`lstm_backward`.
    """
    n = xg.shape[0]
    d = U.shape[0]
    H = np.zeros((n, d))
    gates = np.zeros((n, 4 * d))
    cells = np.zeros((n, d))
    tanh_cells = np.zeros((n, d))
    h = np.zeros(d)
    c = np.zeros(d)
    for step in range(n):
        t = n - 1 - step if reverse else step
        z = xg[t] + np.dot(h, U)
        i = 1.0 / (1.0 + np.exp(-z[0:d]))
        f = 1.0 / (1.0 + np.exp(-z[d:2 * d]))
        g = np.tanh(z[2 * d:3 * d])
        o = 1.0 / (1.0 + np.exp(-z[3 * d:4 * d]))
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, 0:d] = i
        gates[t, d:2 * d] = f
        gates[t, 2 * d:3 * d] = g
        gates[t, 3 * d:4 * d] = o
        cells[t] = c
        tanh_cells[t] = tc
        H[t] = h
    return H, gates, cells, tanh_cells


@njit
def lstm_backward(dH, U, H, gates, cells, tanh_cells, reverse):
    """Backpropagation through time for :func:`lstm_forward`.

    Returns ``(dxg, dU)``: gradients w.r.t. the input pre-activations and the
    recurrent weights.
    """
    n = dH.shape[0]
    d = U.shape[0]
    dxg = np.zeros((n, 4 * d))
    dU = np.zeros((d, 4 * d))
    dh_next = np.zeros(d)
    dc_next = np.zeros(d)
    UT = np.ascontiguousarray(U.T)
    for step in range(n - 1, -1, -1):
        t = n - 1 - step if reverse else step
        # previous position in processing order
        if step == 0:
            h_prev = np.zeros(d)
            c_prev = np.zeros(d)
        else:
            tp = t + 1 if reverse else t - 1
            h_prev = H[tp]
            c_prev = cells[tp]
        i = gates[t, 0:d]
        f = gates[t, d:2 * d]
        g = gates[t, 2 * d:3 * d]
        o = gates[t, 3 * d:4 * d]
        tc = tanh_cells[t]
        dh = dH[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.empty(4 * d)
        dz[0:d] = dc * g * i * (1.0 - i)
        dz[d:2 * d] = dc * c_prev * f * (1.0 - f)
        dz[2 * d:3 * d] = dc * i * (1.0 - g * g)
        dz[3 * d:4 * d] = dh * tc * o * (1.0 - o)
        dxg[t] = dz
        dU += np.outer(h_prev, dz)
        dh_next = np.dot(dz, UT)
        dc_next = dc * f
    return dxg, dU


@njit
def confusion_counts(preds, golds, n_classes):
    """``C[g, p]`` = number of items with gold ``g`` predicted as ``p``."""
    C = np.zeros((n_classes, n_classes), dtype=np.int64)
    for k in range(preds.shape[0]):
        C[golds[k], preds[k]] += 1
    return C
