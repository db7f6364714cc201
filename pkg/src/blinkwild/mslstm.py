"""Multi-scale stacked LSTM classifier with an angular-margin head.

L LSTM layers run over the per-step feature sequence; the classifier
consumes the concatenation of the top layer's last T hidden states. The
head holds one unit-norm weight vector per class and no bias, so class
scores are r*cos(theta_c) with r the feature norm. Training minimizes
either plain cross-entropy on those scores or the angular-margin variant
that replaces cos(theta_y) of the true class with the monotone extension
psi(theta_y) = (-1)^k cos(m theta_y) - 2k. Everything (forward, BPTT,
ADAM) is plain numpy in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDatasetError

N_CLASSES = 2
CLASS_NONBLINK = 0
CLASS_BLINK = 1

# declining learning rate by training step (1-based, inclusive ranges)
DEFAULT_SCHEDULE = [(1, 100, 1e-2), (101, 3000, 1e-3),
                    (3001, 30000, 1e-4), (30001, 50000, 1e-5)]

GATES = 4  # i, f, o, g blocks, stored stacked along the last axis


@dataclass
class LstmLayerParams:
    w: np.ndarray  # (input_dim, 4*hidden)
    u: np.ndarray  # (hidden, 4*hidden)
    b: np.ndarray  # (4*hidden,)

    @property
    def hidden(self) -> int:
        return self.u.shape[0]


@dataclass
class MsLstmModel:
    layers: list[LstmLayerParams]
    head: np.ndarray        # (2, scales*hidden), rows unit norm
    scales: int             # T: how many trailing hidden states feed the head
    margin: int             # m: angular margin used by the A-softmax loss

    @property
    def hidden(self) -> int:
        return self.layers[0].hidden

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[0]


@dataclass
class TrainConfig:
    max_steps: int = 2000
    batch_size: int = 32
    seed: int = 0
    loss: str = "asoftmax"  # or "softmax"
    beta1: float = 0.5
    beta2: float = 0.9
    epsilon: float = 1e-8
    schedule: list[tuple[int, int, float]] = field(
        default_factory=lambda: list(DEFAULT_SCHEDULE))

    def learning_rate(self, step: int) -> float:
        for lo, hi, lr in self.schedule:
            if lo <= step <= hi:
                return lr
        return self.schedule[-1][2]


def init_model(input_dim: int = 118, hidden: int = 64, layers: int = 2,
               scales: int = 2, margin: int = 4,
               seed: int = 0) -> MsLstmModel:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), forget bias +1,
    head vectors random then renormalized."""
    if layers < 1 or scales < 1 or margin < 1:
        raise ValueError("layers, scales and margin must be >= 1")
    rng = np.random.default_rng(seed)
    layer_params = []
    dim = input_dim
    for _ in range(layers):
        bound_w = 1.0 / np.sqrt(dim)
        bound_u = 1.0 / np.sqrt(hidden)
        w = rng.uniform(-bound_w, bound_w, size=(dim, GATES * hidden))
        u = rng.uniform(-bound_u, bound_u, size=(hidden, GATES * hidden))
        b = np.zeros(GATES * hidden)
        b[hidden:2 * hidden] = 1.0  # forget gate open at start
        layer_params.append(LstmLayerParams(w=w, u=u, b=b))
        dim = hidden
    head = rng.normal(size=(N_CLASSES, scales * hidden))
    head /= np.linalg.norm(head, axis=1, keepdims=True)
    return MsLstmModel(layers=layer_params, head=head, scales=scales,
                       margin=margin)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_cell(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              params: LstmLayerParams) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step. Accepts (dim,) vectors or (batch, dim) matrices."""
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(h_prev))
            and np.all(np.isfinite(c_prev))):
        raise ValueError("non-finite input to lstm_cell")
    h = params.hidden
    a = x_t @ params.w + h_prev @ params.u + params.b
    i = _sigmoid(a[..., 0:h])
    f = _sigmoid(a[..., h:2 * h])
    o = _sigmoid(a[..., 2 * h:3 * h])
    g = np.tanh(a[..., 3 * h:4 * h])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def _forward_batch(model: MsLstmModel, x: np.ndarray):
    """Run all layers over x (batch, steps, input_dim).

    Returns (features (batch, T*hidden), caches) where caches hold per-layer
    per-step values needed for BPTT.
    """
    b, n, _ = x.shape
    if n < model.scales:
        raise ValueError(f"sequence length {n} shorter than T={model.scales}")
    caches = []
    inp = x
    for params in model.layers:
        h = params.hidden
        h_t = np.zeros((b, h))
        c_t = np.zeros((b, h))
        steps = []
        outs = np.empty((b, n, h))
        for t in range(n):
            xt = inp[:, t, :]
            a = xt @ params.w + h_t @ params.u + params.b
            i = _sigmoid(a[:, 0:h])
            f = _sigmoid(a[:, h:2 * h])
            o = _sigmoid(a[:, 2 * h:3 * h])
            g = np.tanh(a[:, 3 * h:4 * h])
            c_new = f * c_t + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            steps.append((xt, h_t, c_t, i, f, o, g, tc))
            h_t, c_t = h_new, c_new
            outs[:, t, :] = h_new
        caches.append((params, steps, outs))
        inp = outs
    top = caches[-1][2]
    feats = top[:, n - model.scales:, :].reshape(b, -1)
    return feats, caches


def _backward_batch(model: MsLstmModel, caches, dfeat: np.ndarray):
    """BPTT from the gradient of the concatenated feature."""
    b = dfeat.shape[0]
    n = caches[0][2].shape[1]
    h_top = model.layers[-1].hidden
    t_scales = model.scales

    grads = []
    # seed top-layer dh from the feature concatenation
    dh_seq = np.zeros((b, n, h_top))
    dh_seq[:, n - t_scales:, :] = dfeat.reshape(b, t_scales, h_top)

    for layer_idx in range(len(model.layers) - 1, -1, -1):
        params, steps, _ = caches[layer_idx]
        hd = params.hidden
        dW = np.zeros_like(params.w)
        dU = np.zeros_like(params.u)
        db = np.zeros_like(params.b)
        dx_seq = np.empty((b, n, params.w.shape[0]))
        dh_next = np.zeros((b, hd))
        dc_next = np.zeros((b, hd))
        for t in range(n - 1, -1, -1):
            xt, h_prev, c_prev, i, f, o, g, tc = steps[t]
            dh = dh_seq[:, t, :] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            da = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                                 do * o * (1 - o), dg * (1 - g * g)], axis=1)
            dW += xt.T @ da
            dU += h_prev.T @ da
            db += da.sum(axis=0)
            dx_seq[:, t, :] = da @ params.w.T
            dh_next = da @ params.u.T
        grads.append({"w": dW, "u": dU, "b": db})
        dh_seq = dx_seq  # becomes dh of the layer below
    grads.reverse()
    return grads, dh_seq  # dh_seq is now dL/dx of the input sequence


def forward(model: MsLstmModel, seq: np.ndarray):
    """Classifier geometry for one sequence (steps, input_dim).

    Returns (feature, norm, cosines): the concatenated last-T hidden states,
    its Euclidean norm, and cos(theta_c) against each unit class vector.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != model.input_dim:
        raise ValueError("sequence has wrong feature dimension")
    feats, _ = _forward_batch(model, seq[None])
    feat = feats[0]
    r = float(np.linalg.norm(feat))
    cos = model.head @ feat / max(r, 1e-300)
    return feat, r, cos


# ---------------------------------------------------------------------------
# losses


def psi(cos_theta: np.ndarray, m: int):
    """Monotone angular-margin map and its derivative w.r.t. cos(theta).

    psi(theta) = (-1)^k cos(m theta) - 2k on [k pi/m, (k+1) pi/m].
    """
    if m < 1:
        raise ValueError("margin must be >= 1")
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0)
    theta = np.arccos(c)
    k = np.minimum(np.floor(theta * m / np.pi), m - 1)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    val = sign * np.cos(m * theta) - 2.0 * k
    sin_t = np.sin(theta)
    # d psi / d cos = sign * m * sin(m theta) / sin(theta); the ratio tends
    # to m^2 * (-1)^j near theta = 0 or pi, handled by series fallback
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(sin_t > 1e-8, np.sin(m * theta) / np.where(
            sin_t > 1e-8, sin_t, 1.0), m * np.cos(m * theta) / np.where(
            np.cos(theta) != 0, np.cos(theta), 1.0))
    deriv = sign * m * ratio
    if np.isscalar(cos_theta):
        return float(val), float(deriv)
    return val, deriv


def _log_sum_exp2(a, b):
    m = np.maximum(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m))


def asoftmax_loss(r: float, cos_y: float, cos_other: float, m: int):
    """Angular-margin cross-entropy for one sample.

    loss = -log softmax over scores (r*psi(theta_y), r*cos(theta_other)).
    Returns (loss, (d/dr, d/dcos_y, d/dcos_other)).
    """
    val, dval = psi(cos_y, m)
    fy = r * val
    fo = r * cos_other
    loss = _log_sum_exp2(fy, fo) - fy
    p_other = float(np.exp(fo - _log_sum_exp2(fy, fo)))
    # dL/dfy = -p_other, dL/dfo = p_other
    d_r = -p_other * val + p_other * cos_other
    d_cy = -p_other * r * dval
    d_co = p_other * r
    return float(loss), (float(d_r), float(d_cy), float(d_co))


def softmax_loss(logits: np.ndarray, label: int):
    """Two-class cross-entropy with log-sum-exp stabilization.

    Returns (loss, dlogits).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    z = logits - logits.max()
    p = np.exp(z)
    p /= p.sum()
    loss = -np.log(max(p[label], 1e-300))
    dlogits = p.copy()
    dlogits[label] -= 1.0
    return float(loss), dlogits


# ---------------------------------------------------------------------------
# full-model loss + gradients


def _head_loss_and_grads(model: MsLstmModel, feats: np.ndarray,
                         labels: np.ndarray, loss_kind: str):
    """Mean loss over the batch plus gradients w.r.t. feats and head."""
    b = feats.shape[0]
    w = model.head
    dfeat = np.zeros_like(feats)
    dhead = np.zeros_like(w)
    total = 0.0
    if loss_kind == "softmax":
        logits = feats @ w.T
        for s in range(b):
            loss, dl = softmax_loss(logits[s], int(labels[s]))
            total += loss
            dfeat[s] = dl @ w
            dhead += np.outer(dl, feats[s])
    elif loss_kind == "asoftmax":
        m = model.margin
        for s in range(b):
            x = feats[s]
            r = np.linalg.norm(x)
            if r < 1e-300:
                continue
            y = int(labels[s])
            o = 1 - y
            u_y = float(w[y] @ x)
            cos_y = u_y / r
            cos_o = float(w[o] @ x) / r
            loss, (d_r, d_cy, d_co) = asoftmax_loss(r, cos_y, cos_o, m)
            total += loss
            dcos_y_dx = (w[y] - cos_y * x / r) / r
            dcos_o_dx = (w[o] - cos_o * x / r) / r
            dfeat[s] = d_r * x / r + d_cy * dcos_y_dx + d_co * dcos_o_dx
            dhead[y] += d_cy * x / r
            dhead[o] += d_co * x / r
    else:
        raise ValueError(f"unknown loss {loss_kind!r}")
    return total / b, dfeat / b, dhead / b


def loss_and_grads(model: MsLstmModel, x: np.ndarray, labels: np.ndarray,
                   loss_kind: str = "asoftmax"):
    """Mean batch loss and gradients for every parameter array.

    x: (batch, steps, input_dim); labels: (batch,) of {0, 1}.
    Returns (loss, grads) with grads = {"layers": [{"w","u","b"}...],
    "head": array}.
    """
    feats, caches = _forward_batch(model, np.asarray(x, dtype=np.float64))
    loss, dfeat, dhead = _head_loss_and_grads(
        model, feats, np.asarray(labels), loss_kind)
    layer_grads, _ = _backward_batch(model, caches, dfeat)
    return loss, {"layers": layer_grads, "head": dhead}


# ---------------------------------------------------------------------------
# training


def _param_arrays(model: MsLstmModel):
    for lp in model.layers:
        yield lp.w
        yield lp.u
        yield lp.b
    yield model.head


def _grad_arrays(grads):
    for g in grads["layers"]:
        yield g["w"]
        yield g["u"]
        yield g["b"]
    yield grads["head"]


def train(model: MsLstmModel, train_set, config: TrainConfig | None = None):
    """ADAM training over (sequence, label) pairs; deterministic per seed.

    Sequences must share a common length (clips are polished beforehand).
    Head rows are re-normalized to unit norm after every step. Returns the
    trained model (updated in place) and the per-step loss history.
    """
    config = config or TrainConfig()
    if not train_set:
        raise InvalidDatasetError("empty training set")
    labels = np.array([int(lbl) for _, lbl in train_set])
    if len(set(labels.tolist())) < 2:
        raise InvalidDatasetError("training set must contain both classes")
    x_all = np.stack([np.asarray(seq, dtype=np.float64)
                      for seq, _ in train_set])

    rng = np.random.default_rng(config.seed)
    params = list(_param_arrays(model))
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    history = []
    order = np.array([], dtype=int)
    for step in range(1, config.max_steps + 1):
        batch_idx = []
        while len(batch_idx) < config.batch_size:
            if order.size == 0:
                order = rng.permutation(len(train_set))
            take = min(config.batch_size - len(batch_idx), order.size)
            batch_idx.extend(order[:take].tolist())
            order = order[take:]
        idx = np.array(batch_idx)
        loss, grads = loss_and_grads(model, x_all[idx], labels[idx],
                                     config.loss)
        lr = config.learning_rate(step)
        b1c = 1.0 - config.beta1 ** step
        b2c = 1.0 - config.beta2 ** step
        for p, g, m_a, v_a in zip(params, _grad_arrays(grads),
                                  m_state, v_state):
            m_a *= config.beta1
            m_a += (1 - config.beta1) * g
            v_a *= config.beta2
            v_a += (1 - config.beta2) * g * g
            p -= lr * (m_a / b1c) / (np.sqrt(v_a / b2c) + config.epsilon)
        model.head /= np.linalg.norm(model.head, axis=1, keepdims=True)
        history.append(loss)
    return model, history


def predict(model: MsLstmModel, seq: np.ndarray) -> tuple[int, float]:
    """Class label and blink-class probability for one sequence.

    Inference always uses the plain angular scores r*cos(theta_c); the
    margin only reshapes the training loss.
    """
    feat, r, cos = forward(model, seq)
    scores = r * cos
    z = scores - scores.max()
    p = np.exp(z)
    p /= p.sum()
    label = int(np.argmax(scores))
    return label, float(p[CLASS_BLINK])


# ---------------------------------------------------------------------------
# serialization: magic MSL1, u32 L,T,hidden,input_dim,m, float64 blocks


MODEL_MAGIC = b"MSL1"


def save_model(path: str, model: MsLstmModel) -> None:
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<5I", len(model.layers), model.scales,
                            model.hidden, model.input_dim, model.margin))
        for lp in model.layers:
            for arr in (lp.w, lp.u, lp.b):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.head, dtype="<f8").tobytes())


def load_model(path: str) -> MsLstmModel:
    with open(path, "rb") as f:
        if f.read(4) != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model file")
        n_layers, scales, hidden, input_dim, margin = struct.unpack(
            "<5I", f.read(20))

        def block(shape):
            n = int(np.prod(shape))
            return np.frombuffer(f.read(8 * n), dtype="<f8").reshape(
                shape).astype(np.float64)

        layers = []
        dim = input_dim
        for _ in range(n_layers):
            layers.append(LstmLayerParams(
                w=block((dim, GATES * hidden)),
                u=block((hidden, GATES * hidden)),
                b=block((GATES * hidden,))))
            dim = hidden
        head = block((N_CLASSES, scales * hidden))
    return MsLstmModel(layers=layers, head=head, scales=scales, margin=margin)
