"""MLP and recurrent classifiers (FRNN, LSTM, GRU) with analytic gradients.

Parameters live in a flat ``dict[str, ndarray]``:

- MLP: ``W{k}``, ``b{k}`` per hidden layer, then ``W_out``, ``b_out``.
- FRNN/LSTM: ``l{k}.Wx (D, G*H)``, ``l{k}.Wh (H, G*H)``, ``l{k}.b`` with
  ``G = 1`` (FRNN) or ``4`` (LSTM, gate order i, f, g, o).
- GRU: as above with ``G = 3`` (gate order r, z, n) and separate input and
  hidden biases ``l{k}.bx``, ``l{k}.bh``; the candidate uses
  ``n = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))``.

Recurrent inputs are ``(B, T, D)``; the class logits come from the top
layer's last hidden state. Dropout sits between recurrent layers only.
"""

from __future__ import annotations

import numpy as np

RNN_KINDS = ("frnn", "lstm", "gru")
_GATES = {"frnn": 1, "lstm": 4, "gru": 3}


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return float(loss), grad / n


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


# --- MLP ------------------------------------------------------------------------


def init_mlp(rng: np.random.Generator, n_in: int, layers: int, layer_size: int,
             n_classes: int) -> dict[str, np.ndarray]:
    params = {}
    fan = n_in
    for k in range(layers):
        params[f"W{k}"] = _glorot(rng, fan, layer_size, (fan, layer_size))
        params[f"b{k}"] = np.zeros(layer_size)
        fan = layer_size
    params["W_out"] = _glorot(rng, fan, n_classes, (fan, n_classes))
    params["b_out"] = np.zeros(n_classes)
    return params


def _mlp_layers(params) -> int:
    return sum(1 for k in params if k.startswith("W") and k != "W_out")


def mlp_forward(params, X, cache: bool = False):
    X = np.asarray(X, dtype=params["W_out"].dtype)
    if X.ndim != 2 or X.shape[1] != (params["W0"].shape[0] if "W0" in params else params["W_out"].shape[0]):
        raise ValueError(f"MLP input width mismatch: {X.shape}")
    acts = [X]
    h = X
    for k in range(_mlp_layers(params)):
        h = np.maximum(h @ params[f"W{k}"] + params[f"b{k}"], 0.0)
        acts.append(h)
    logits = h @ params["W_out"] + params["b_out"]
    return (logits, acts) if cache else logits


def mlp_backward(params, acts, dlogits) -> dict[str, np.ndarray]:
    grads = {}
    h = acts[-1]
    grads["W_out"] = h.T @ dlogits
    grads["b_out"] = dlogits.sum(axis=0)
    dh = dlogits @ params["W_out"].T
    for k in reversed(range(_mlp_layers(params))):
        da = dh * (acts[k + 1] > 0.0)
        grads[f"W{k}"] = acts[k].T @ da
        grads[f"b{k}"] = da.sum(axis=0)
        if k:
            dh = da @ params[f"W{k}"].T
    return grads


# --- recurrent ------------------------------------------------------------------


def init_rnn(rng: np.random.Generator, kind: str, n_in: int, hidden: int, layers: int,
             n_classes: int) -> dict[str, np.ndarray]:
    g = _GATES[kind]
    params = {}
    fan = n_in
    for k in range(layers):
        params[f"l{k}.Wx"] = np.concatenate(
            [_glorot(rng, fan, hidden, (fan, hidden)) for _ in range(g)], axis=1)
        params[f"l{k}.Wh"] = np.concatenate(
            [_glorot(rng, hidden, hidden, (hidden, hidden)) for _ in range(g)], axis=1)
        if kind == "gru":
            params[f"l{k}.bx"] = np.zeros(g * hidden)
            params[f"l{k}.bh"] = np.zeros(g * hidden)
        else:
            b = np.zeros(g * hidden)
            if kind == "lstm":
                b[hidden:2 * hidden] = 1.0
            params[f"l{k}.b"] = b
        fan = hidden
    params["W_out"] = _glorot(rng, hidden, n_classes, (hidden, n_classes))
    params["b_out"] = np.zeros(n_classes)
    return params


def rnn_layers(params) -> int:
    return sum(1 for k in params if k.endswith(".Wx"))


def _layer_forward(kind, p, k, X):
    Wx, Wh = p[f"l{k}.Wx"], p[f"l{k}.Wh"]
    B, T, _ = X.shape
    H = Wh.shape[0]
    dtype = Wh.dtype
    bias = p[f"l{k}.bx"] if kind == "gru" else p[f"l{k}.b"]
    xp = X @ Wx + bias
    out = np.empty((B, T, H), dtype=dtype)
    h = np.zeros((B, H), dtype=dtype)
    steps = []
    if kind == "frnn":
        for t in range(T):
            h = np.tanh(xp[:, t] + h @ Wh)
            out[:, t] = h
        return out, None
    if kind == "lstm":
        c = np.zeros((B, H), dtype=dtype)
        for t in range(T):
            a = xp[:, t] + h @ Wh
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = sigmoid(a[:, 3 * H:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            out[:, t] = h
            steps.append((i, f, g, o, c_prev, tc))
        return out, steps
    bh = p[f"l{k}.bh"]
    for t in range(T):
        ah = h @ Wh + bh
        ax = xp[:, t]
        r = sigmoid(ax[:, :H] + ah[:, :H])
        z = sigmoid(ax[:, H:2 * H] + ah[:, H:2 * H])
        n = np.tanh(ax[:, 2 * H:] + r * ah[:, 2 * H:])
        h_prev = h
        h = (1.0 - z) * n + z * h_prev
        out[:, t] = h
        steps.append((r, z, n, ah[:, 2 * H:], h_prev))
    return out, steps


def _layer_backward(kind, p, k, X, out, steps, dout, grads):
    Wx, Wh = p[f"l{k}.Wx"], p[f"l{k}.Wh"]
    B, T, _ = X.shape
    H = Wh.shape[0]
    G = Wh.shape[1]
    dxp = np.empty((B, T, G), dtype=Wh.dtype)
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((B, H), dtype=Wh.dtype)
    if kind == "frnn":
        for t in reversed(range(T)):
            h = out[:, t]
            da = (dout[:, t] + dh_next) * (1.0 - h * h)
            h_prev = out[:, t - 1] if t else np.zeros_like(h)
            dWh += h_prev.T @ da
            dh_next = da @ Wh.T
            dxp[:, t] = da
        grads[f"l{k}.b"] = dxp.sum(axis=(0, 1))
    elif kind == "lstm":
        dc_next = np.zeros((B, H), dtype=Wh.dtype)
        for t in reversed(range(T)):
            i, f, g, o, c_prev, tc = steps[t]
            dh = dout[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                dh * tc * o * (1.0 - o),
            ], axis=1)
            h_prev = out[:, t - 1] if t else np.zeros_like(dh)
            dWh += h_prev.T @ da
            dh_next = da @ Wh.T
            dc_next = dc * f
            dxp[:, t] = da
        grads[f"l{k}.b"] = dxp.sum(axis=(0, 1))
    else:
        dbh = np.zeros(G, dtype=Wh.dtype)
        for t in reversed(range(T)):
            r, z, n, ahn, h_prev = steps[t]
            dh = dout[:, t] + dh_next
            dn = dh * (1.0 - z)
            dan = dn * (1.0 - n * n)
            dar = dan * ahn * r * (1.0 - r)
            daz = dh * (h_prev - n) * z * (1.0 - z)
            dah = np.concatenate([dar, daz, dan * r], axis=1)
            dWh += h_prev.T @ dah
            dbh += dah.sum(axis=0)
            dh_next = dh * z + dah @ Wh.T
            dxp[:, t] = np.concatenate([dar, daz, dan], axis=1)
        grads[f"l{k}.bx"] = dxp.sum(axis=(0, 1))
        grads[f"l{k}.bh"] = dbh
    grads[f"l{k}.Wh"] = dWh
    flat = dxp.reshape(B * T, G)
    grads[f"l{k}.Wx"] = X.reshape(B * T, -1).T @ flat
    return (flat @ Wx.T).reshape(B, T, -1)


def rnn_forward(kind, params, X, dropout: float = 0.0, rng=None, cache: bool = False):
    """Logits ``(B, S)`` for windows ``X (B, T, D)``.

    Dropout is applied to the outputs of every layer but the top one, and
    only when ``rng`` is given (training mode).
    """
    X = np.asarray(X, dtype=params["W_out"].dtype)
    if X.ndim != 3 or X.shape[2] != params["l0.Wx"].shape[0]:
        raise ValueError(f"recurrent input width mismatch: {X.shape}")
    n_layers = rnn_layers(params)
    inputs, outs, stepss, masks = [], [], [], []
    h = X
    for k in range(n_layers):
        inputs.append(h)
        out, steps = _layer_forward(kind, params, k, h)
        outs.append(out)
        stepss.append(steps)
        mask = None
        if k < n_layers - 1 and rng is not None and dropout > 0.0:
            keep = 1.0 - dropout
            mask = (rng.random(out.shape) < keep).astype(out.dtype) / keep
            h = out * mask
        else:
            h = out
        masks.append(mask)
    logits = outs[-1][:, -1] @ params["W_out"] + params["b_out"]
    if cache:
        return logits, (inputs, outs, stepss, masks)
    return logits


def rnn_backward(kind, params, tape, dlogits) -> dict[str, np.ndarray]:
    inputs, outs, stepss, masks = tape
    grads = {}
    top = outs[-1]
    grads["W_out"] = top[:, -1].T @ dlogits
    grads["b_out"] = dlogits.sum(axis=0)
    dout = np.zeros_like(top)
    dout[:, -1] = dlogits @ params["W_out"].T
    for k in reversed(range(len(outs))):
        dx = _layer_backward(kind, params, k, inputs[k], outs[k], stepss[k], dout, grads)
        if k:
            dout = dx if masks[k - 1] is None else dx * masks[k - 1]
    return grads


# --- unified entry points -------------------------------------------------------


def forward(family: str, params, X, dropout: float = 0.0, rng=None, cache: bool = False):
    if family == "mlp":
        return mlp_forward(params, X, cache=cache)
    return rnn_forward(family, params, X, dropout=dropout, rng=rng, cache=cache)


def loss_and_grads(family: str, params, X, y, dropout: float = 0.0, rng=None):
    """Mean cross-entropy over the batch and exact gradients for every parameter."""
    logits, tape = forward(family, params, X, dropout=dropout, rng=rng, cache=True)
    loss, dlogits = cross_entropy(logits, y)
    if family == "mlp":
        grads = mlp_backward(params, tape, dlogits)
    else:
        grads = rnn_backward(family, params, tape, dlogits)
    return loss, grads


def predict_logits(family: str, params, X, batch: int = 1024) -> np.ndarray:
    X = np.asarray(X)
    out = [forward(family, params, X[i:i + batch]) for i in range(0, len(X), batch)]
    if not out:
        return np.empty((0, params["b_out"].shape[0]))
    return np.concatenate(out)
