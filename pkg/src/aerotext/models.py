"""The four sequence architectures as pure forward functions.

All share the same skeleton: an embedding layer turns token ids into a
T x d matrix, an architecture-specific encoder reduces it to a feature
vector, and a ReLU hidden head plus softmax output produces the 3-class
probability vector. Recurrent encoders iterate only over the true
(pre-padding) length and return the final state; the convolutional
encoder slides over the whole padded sequence and global-max-pools.

State updates:

    sRNN    h_t = tanh(W [h_{t-1}; x_t] + b)
    LSTM    f,i,o = sigmoid(W_* [h_{t-1}; x_t] + b_*)
            g     = tanh(W_g [h_{t-1}; x_t] + b_g)
            c_t   = f * c_{t-1} + i * g
            h_t   = o * tanh(c_t)
    BLSTM   concat(final h of forward pass, final h of reversed pass)
    CNN     relu(valid 1-d convolution + bias), max over positions
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import OperatorClass
from .errors import IdOutOfRange, KernelTooLarge, ShapeMismatch
from .textprep import TokenSequence

ARCHITECTURES = ("cnn", "srnn", "lstm", "blstm")
NUM_CLASSES = 3


@dataclass
class ModelConfig:
    arch: str
    vocab_size: int               # kept tokens V; embedding table has V+2 rows
    embedding_dim: int = 100
    hidden_units: int = 128
    head_units: int = 64
    num_classes: int = NUM_CLASSES
    max_len: int = 200
    conv_filters: int = 128
    conv_kernel: int = 5
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        for name in ("vocab_size", "embedding_dim", "hidden_units", "head_units",
                     "max_len", "conv_filters", "conv_kernel"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_classes != NUM_CLASSES:
            raise ValueError("this classifier is fixed at 3 classes")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.arch == "cnn" and self.conv_kernel > self.max_len:
            raise ValueError("conv_kernel cannot exceed max_len")

    @property
    def feature_size(self) -> int:
        if self.arch == "cnn":
            return self.conv_filters
        if self.arch == "blstm":
            return 2 * self.hidden_units
        return self.hidden_units

    def to_json_dict(self) -> dict:
        return {
            "arch": self.arch, "vocab_size": self.vocab_size,
            "embedding_dim": self.embedding_dim, "hidden_units": self.hidden_units,
            "head_units": self.head_units, "num_classes": self.num_classes,
            "max_len": self.max_len, "conv_filters": self.conv_filters,
            "conv_kernel": self.conv_kernel, "dropout_rate": self.dropout_rate,
        }


@dataclass
class EmbeddingParams:
    table: Tensor  # (V+2, d); rows 0 and 1 are the padding and OOV rows


@dataclass
class SrnnParams:
    w: Tensor  # (H, H+d)
    b: Tensor  # (H,)


@dataclass
class LstmParams:
    w_f: Tensor
    w_i: Tensor
    w_o: Tensor
    w_g: Tensor  # each (H, H+d)
    b_f: Tensor
    b_i: Tensor
    b_o: Tensor
    b_g: Tensor  # each (H,)


@dataclass
class BlstmParams:
    fwd: LstmParams
    bwd: LstmParams


@dataclass
class CnnParams:
    # filters laid out (k, d, F): filters[j] is the (d, F) weight slab for
    # window offset j, so the convolution is a sum of plain matmuls.
    filters: Tensor
    bias: Tensor  # (F,)


@dataclass
class HeadParams:
    w1: Tensor  # (head_units, feature_size)
    b1: Tensor  # (head_units,)
    w2: Tensor  # (3, head_units)
    b2: Tensor  # (3,)


@dataclass
class ModelParams:
    config: ModelConfig
    embedding: EmbeddingParams
    cell: SrnnParams | LstmParams | BlstmParams | CnnParams
    head: HeadParams


# --- initialization ---------------------------------------------------------

def _glorot(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


def _param(array: np.ndarray) -> Tensor:
    return Tensor(array, requires_grad=True)


def _init_lstm(rng: np.random.Generator, h: int, d: int) -> LstmParams:
    def gate_w():
        return _param(_glorot(rng, (h, h + d), h + d, h))
    w_f, w_i, w_o, w_g = gate_w(), gate_w(), gate_w(), gate_w()
    # forget bias starts at +1 so early training does not erase the cell state
    return LstmParams(w_f, w_i, w_o, w_g,
                      b_f=_param(np.ones(h)), b_i=_param(np.zeros(h)),
                      b_o=_param(np.zeros(h)), b_g=_param(np.zeros(h)))


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded deterministic initialization.

    Weight matrices are uniform within the Glorot bound
    sqrt(6/(fan_in+fan_out)); the convolution filters count fan_in = k*d
    and fan_out = F. Embedding rows are uniform in +-0.05 except the
    padding row, which starts at zero so padded positions contribute
    nothing to the convolution until trained. Biases are zero apart from
    the LSTM forget bias (+1).
    """
    rng = np.random.default_rng(seed)
    h, d = config.hidden_units, config.embedding_dim
    table = rng.uniform(-0.05, 0.05, (config.vocab_size + 2, d))
    table[0] = 0.0
    embedding = EmbeddingParams(_param(table))

    cell: SrnnParams | LstmParams | BlstmParams | CnnParams
    if config.arch == "srnn":
        cell = SrnnParams(_param(_glorot(rng, (h, h + d), h + d, h)),
                          _param(np.zeros(h)))
    elif config.arch == "lstm":
        cell = _init_lstm(rng, h, d)
    elif config.arch == "blstm":
        cell = BlstmParams(_init_lstm(rng, h, d), _init_lstm(rng, h, d))
    else:
        k, f = config.conv_kernel, config.conv_filters
        cell = CnnParams(_param(_glorot(rng, (k, d, f), k * d, f)),
                         _param(np.zeros(f)))

    feat = config.feature_size
    head = HeadParams(
        w1=_param(_glorot(rng, (config.head_units, feat), feat, config.head_units)),
        b1=_param(np.zeros(config.head_units)),
        w2=_param(_glorot(rng, (NUM_CLASSES, config.head_units),
                          config.head_units, NUM_CLASSES)),
        b2=_param(np.zeros(NUM_CLASSES)),
    )
    return ModelParams(config, embedding, cell, head)


def _lstm_tensors(prefix: str, p: LstmParams) -> list[tuple[str, Tensor]]:
    return [(f"{prefix}.w_f", p.w_f), (f"{prefix}.w_i", p.w_i),
            (f"{prefix}.w_o", p.w_o), (f"{prefix}.w_g", p.w_g),
            (f"{prefix}.b_f", p.b_f), (f"{prefix}.b_i", p.b_i),
            (f"{prefix}.b_o", p.b_o), (f"{prefix}.b_g", p.b_g)]


def named_parameters(params: ModelParams) -> list[tuple[str, Tensor]]:
    """Canonically named and ordered parameter tensors (checkpoint order)."""
    named = [("embedding.table", params.embedding.table)]
    cell = params.cell
    if isinstance(cell, SrnnParams):
        named += [("srnn.w", cell.w), ("srnn.b", cell.b)]
    elif isinstance(cell, LstmParams):
        named += _lstm_tensors("lstm", cell)
    elif isinstance(cell, BlstmParams):
        named += _lstm_tensors("blstm.fwd", cell.fwd)
        named += _lstm_tensors("blstm.bwd", cell.bwd)
    else:
        named += [("cnn.filters", cell.filters), ("cnn.bias", cell.bias)]
    named += [("head.w1", params.head.w1), ("head.b1", params.head.b1),
              ("head.w2", params.head.w2), ("head.b2", params.head.b2)]
    return named


def expected_parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, d = config.hidden_units, config.embedding_dim
    shapes = {"embedding.table": (config.vocab_size + 2, d)}
    if config.arch == "srnn":
        shapes["srnn.w"] = (h, h + d)
        shapes["srnn.b"] = (h,)
    elif config.arch == "lstm":
        shapes.update(_lstm_shapes("lstm", h, d))
    elif config.arch == "blstm":
        shapes.update(_lstm_shapes("blstm.fwd", h, d))
        shapes.update(_lstm_shapes("blstm.bwd", h, d))
    else:
        shapes["cnn.filters"] = (config.conv_kernel, d, config.conv_filters)
        shapes["cnn.bias"] = (config.conv_filters,)
    feat = config.feature_size
    shapes["head.w1"] = (config.head_units, feat)
    shapes["head.b1"] = (config.head_units,)
    shapes["head.w2"] = (NUM_CLASSES, config.head_units)
    shapes["head.b2"] = (NUM_CLASSES,)
    return shapes


def _lstm_shapes(prefix: str, h: int, d: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for gate in "fiog":
        shapes[f"{prefix}.w_{gate}"] = (h, h + d)
        shapes[f"{prefix}.b_{gate}"] = (h,)
    return shapes


def build_params(config: ModelConfig, arrays: dict[str, np.ndarray],
                 requires_grad: bool = True) -> ModelParams:
    """Assemble ModelParams from named arrays, validating names and shapes."""
    expected = expected_parameter_shapes(config)
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise ShapeMismatch(f"parameter names mismatch: missing {missing}, unexpected {extra}")
    tensors = {}
    for name, shape in expected.items():
        if tuple(arrays[name].shape) != shape:
            raise ShapeMismatch(f"{name}: expected shape {shape}, got {tuple(arrays[name].shape)}")
        tensors[name] = Tensor(np.array(arrays[name], dtype=np.float64),
                               requires_grad=requires_grad)

    embedding = EmbeddingParams(tensors["embedding.table"])
    cell: SrnnParams | LstmParams | BlstmParams | CnnParams
    if config.arch == "srnn":
        cell = SrnnParams(tensors["srnn.w"], tensors["srnn.b"])
    elif config.arch == "lstm":
        cell = _lstm_from(tensors, "lstm")
    elif config.arch == "blstm":
        cell = BlstmParams(_lstm_from(tensors, "blstm.fwd"), _lstm_from(tensors, "blstm.bwd"))
    else:
        cell = CnnParams(tensors["cnn.filters"], tensors["cnn.bias"])
    head = HeadParams(tensors["head.w1"], tensors["head.b1"],
                      tensors["head.w2"], tensors["head.b2"])
    return ModelParams(config, embedding, cell, head)


def _lstm_from(tensors: dict[str, Tensor], prefix: str) -> LstmParams:
    return LstmParams(*(tensors[f"{prefix}.w_{g}"] for g in "fiog"),
                      *(tensors[f"{prefix}.b_{g}"] for g in "fiog"))


# --- forward pieces ---------------------------------------------------------

def embedding_lookup(ids, table: Tensor) -> Tensor:
    """Gather embedding rows for a list of token ids -> (len(ids), d).

    Repeated ids accumulate gradients on the shared row; the padding row
    is gathered like any other (there is no masking here).
    """
    index = np.asarray(list(ids), dtype=np.int64)
    rows = table.shape[0]
    if index.size and (index.min() < 0 or index.max() >= rows):
        bad = int(index.min()) if index.min() < 0 else int(index.max())
        raise IdOutOfRange(f"token id {bad} outside embedding table with {rows} rows")
    return ad.take(table, index)


def srnn_step(h_prev: Tensor, x_t: Tensor, p: SrnnParams) -> Tensor:
    z = ad.concat_last_axis(h_prev, x_t)
    return ad.tanh(ad.add(ad.matmul(p.w, z), p.b))


def lstm_step(h_prev: Tensor, c_prev: Tensor, x_t: Tensor,
              p: LstmParams) -> tuple[Tensor, Tensor]:
    z = ad.concat_last_axis(h_prev, x_t)
    f = ad.sigmoid(ad.add(ad.matmul(p.w_f, z), p.b_f))
    i = ad.sigmoid(ad.add(ad.matmul(p.w_i, z), p.b_i))
    o = ad.sigmoid(ad.add(ad.matmul(p.w_o, z), p.b_o))
    g = ad.tanh(ad.add(ad.matmul(p.w_g, z), p.b_g))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def recurrent_forward(seq: Tensor, true_length: int,
                      cell: SrnnParams | LstmParams) -> Tensor:
    """Run the cell over rows 0..true_length-1 from a zero state and
    return the final hidden state (a zero vector when true_length is 0).
    Padded tail rows are never touched."""
    t_max = seq.shape[0]
    if not 0 <= true_length <= t_max:
        raise ValueError(f"true_length {true_length} outside [0, {t_max}]")
    hidden = cell.w.shape[0] if isinstance(cell, SrnnParams) else cell.w_f.shape[0]
    h = ad.zeros(hidden)
    if isinstance(cell, SrnnParams):
        for t in range(true_length):
            h = srnn_step(h, ad.take(seq, t), cell)
        return h
    c = ad.zeros(hidden)
    for t in range(true_length):
        h, c = lstm_step(h, c, ad.take(seq, t), cell)
    return h


def blstm_forward(seq: Tensor, true_length: int, fwd: LstmParams,
                  bwd: LstmParams) -> Tensor:
    """concat(forward-order final state, reversed-order final state) -> (2H,)."""
    t_max = seq.shape[0]
    if not 0 <= true_length <= t_max:
        raise ValueError(f"true_length {true_length} outside [0, {t_max}]")
    hidden = fwd.w_f.shape[0]
    h_f, c_f = ad.zeros(hidden), ad.zeros(hidden)
    h_b, c_b = ad.zeros(hidden), ad.zeros(hidden)
    for t in range(true_length):
        h_f, c_f = lstm_step(h_f, c_f, ad.take(seq, t), fwd)
        h_b, c_b = lstm_step(h_b, c_b, ad.take(seq, true_length - 1 - t), bwd)
    return ad.concat_last_axis(h_f, h_b)


def cnn_forward(seq: Tensor, true_length: int, p: CnnParams) -> Tensor:
    """Valid 1-d convolution + bias, ReLU, then global max pooling -> (F,).

    Padded tail rows take part with whatever the padding embedding holds
    (zero at initialization); recurrent encoders stop at true_length
    instead, so only this path sees the padding row.
    """
    t_max = seq.shape[0]
    k = p.filters.shape[0]
    if k > t_max:
        raise KernelTooLarge(f"kernel {k} exceeds sequence length {t_max}")
    positions = t_max - k + 1
    conv = None
    for j in range(k):
        term = ad.matmul(ad.take(seq, slice(j, j + positions)), ad.take(p.filters, j))
        conv = term if conv is None else ad.add(conv, term)
    conv = ad.add(conv, p.bias)
    return ad.max_over_axis(ad.relu(conv), axis=0)


def head_logits(features: Tensor, head: HeadParams,
                hidden_mask: Tensor | None = None) -> Tensor:
    """W2 relu(W1 f + b1) + b2; hidden_mask applies (inverted) dropout."""
    if features.shape != (head.w1.shape[1],):
        raise ShapeMismatch(f"head expects features {(head.w1.shape[1],)}, got {features.shape}")
    hidden = ad.relu(ad.add(ad.matmul(head.w1, features), head.b1))
    if hidden_mask is not None:
        hidden = ad.mul(hidden, hidden_mask)
    return ad.add(ad.matmul(head.w2, hidden), head.b2)


def classify(features: Tensor, head: HeadParams) -> Tensor:
    """Probability vector over the 3 classes (sums to 1)."""
    return ad.softmax_last_axis(head_logits(features, head))


def predict_class(probs) -> OperatorClass:
    """Argmax with ties broken toward the lowest index."""
    values = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    if values.shape != (NUM_CLASSES,):
        raise ShapeMismatch(f"expected {NUM_CLASSES} probabilities, got shape {values.shape}")
    return OperatorClass(int(np.argmax(values)))


def encode_features(params: ModelParams, seq: TokenSequence) -> Tensor:
    """TokenSequence -> architecture feature vector.

    Recurrent paths embed only the first true_length ids; the CNN embeds
    the whole padded sequence.
    """
    config = params.config
    cell = params.cell
    if isinstance(cell, CnnParams):
        emb = embedding_lookup(seq.ids, params.embedding.table)
        return cnn_forward(emb, seq.true_length, cell)
    length = min(seq.true_length, len(seq.ids))
    if length == 0:
        return ad.zeros(config.feature_size)
    emb = embedding_lookup(seq.ids[:length], params.embedding.table)
    if isinstance(cell, BlstmParams):
        return blstm_forward(emb, length, cell.fwd, cell.bwd)
    return recurrent_forward(emb, length, cell)


def forward_probs(params: ModelParams, seq: TokenSequence) -> np.ndarray:
    """Convenience inference path: probabilities as a plain array."""
    return classify(encode_features(params, seq), params.head).data
