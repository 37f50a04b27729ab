"""Shared transformer encoder with per-domain adapter stacks and sigmoid heads.

Parameters live in a flat ``dict[str, np.ndarray]`` keyed by dotted names:

* ``enc.*``: embeddings and the L transformer layers ``enc.l0`` .. ``enc.l{L-1}``
* ``exp{n}.ad{l}.*``: adapter layer l of expert n, sitting between encoder
  layers l and l+1 (L-1 adapter layers per expert)
* ``exp{n}.head.*``: the expert's d->1 classifier

An expert's input path is T_1, adapter_1, T_2, ..., adapter_{L-1}, T_L, then
the first position's final hidden vector goes through the head and a sigmoid.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import numkit as nk
from .records import ContextResponsePair, DomainDataset

PAD, UNK, START, SEP, MASK, TURN = "<pad>", "<unk>", "<s>", "</s>", "<mask>", "<turn>"
SPECIALS = (PAD, UNK, START, SEP, MASK, TURN)

Params = dict[str, np.ndarray]


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __getitem__(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @classmethod
    def from_texts(cls, texts: Iterable[str], min_count: int = 1) -> "Vocab":
        counts = Counter(tok for text in texts for tok in tokenize(text))
        if not counts:
            raise ValueError("empty token stream")
        kept = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIALS),
                      key=lambda t: (-counts[t], t))
        return cls(list(SPECIALS) + kept)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def build_vocab(corpora: Sequence[DomainDataset], min_count: int = 1) -> Vocab:
    """Vocabulary over every context and response in the given datasets."""
    if not corpora:
        raise ValueError("no corpora given")

    def texts():
        for ds in corpora:
            for pair in [*ds.train, *ds.valid]:
                yield from pair.context
                yield pair.response

    return Vocab.from_texts(texts(), min_count)


@dataclass
class TokenSequence:
    ids: np.ndarray
    length: int


def encode_pair(vocab: Vocab, context: Sequence[str], response: str, max_len: int) -> TokenSequence:
    """``<s> u1 <turn> u2 ... </s> response </s>`` padded to ``max_len``.

    Over-long input loses its oldest context tokens first (down to one), then
    the tail of the response.
    """
    if not context or not response.strip():
        raise ValueError("context and response must be nonempty")
    budget = max_len - 3
    if budget < 2:
        raise ValueError(f"max_len={max_len} cannot hold the specials plus one context and one response token")
    ctx: list[str] = []
    for i, utt in enumerate(context):
        if i:
            ctx.append(TURN)
        ctx.extend(tokenize(utt))
    resp = tokenize(response)
    if len(ctx) + len(resp) > budget:
        ctx = ctx[-max(1, budget - len(resp)):]
        if ctx[0] == TURN and len(ctx) > 1:
            ctx = ctx[1:]
        resp = resp[: budget - len(ctx)]
    toks = [START, *ctx, SEP, *resp, SEP]
    ids = np.full(max_len, vocab.pad_id, dtype=np.int64)
    ids[: len(toks)] = [vocab[t] for t in toks]
    return TokenSequence(ids, len(toks))


def encode_pairs(vocab: Vocab, pairs: Sequence[ContextResponsePair], max_len: int) -> np.ndarray:
    if not pairs:
        return np.zeros((0, max_len), dtype=np.int64)
    return np.stack([encode_pair(vocab, p.context, p.response, max_len).ids for p in pairs])


@dataclass
class PanelConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 128
    bottleneck: int = 16
    n_experts: int = 1
    max_len: int = 64
    vocab_size: int = 0
    init_range: float = 0.02

    def __post_init__(self):
        if self.n_layers < 2:
            raise ValueError("need at least 2 encoder layers")
        if not 0 < self.bottleneck < self.d_model:
            raise ValueError("adapter bottleneck must be in (0, d_model)")
        if self.d_model % self.n_heads:
            raise ValueError("n_heads must divide d_model")
        if self.n_experts < 1:
            raise ValueError("need at least one expert")

    def to_dict(self) -> dict:
        return asdict(self)


def encoder_shapes(cfg: PanelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ffn
    shapes = {"enc.tok_emb": (cfg.vocab_size, d), "enc.pos_emb": (cfg.max_len, d),
              "enc.emb_ln.g": (d,), "enc.emb_ln.b": (d,)}
    for i in range(cfg.n_layers):
        p = f"enc.l{i}"
        for w in "qkvo":
            shapes[f"{p}.attn.w{w}"] = (d, d)
            shapes[f"{p}.attn.b{w}"] = (d,)
        shapes.update({f"{p}.ln1.g": (d,), f"{p}.ln1.b": (d,),
                       f"{p}.ffn.w1": (d, f), f"{p}.ffn.b1": (f,),
                       f"{p}.ffn.w2": (f, d), f"{p}.ffn.b2": (d,),
                       f"{p}.ln2.g": (d,), f"{p}.ln2.b": (d,)})
    return shapes


def expert_shapes(cfg: PanelConfig, n: int) -> dict[str, tuple[int, ...]]:
    d, b = cfg.d_model, cfg.bottleneck
    shapes = {}
    for l in range(cfg.n_layers - 1):
        p = f"exp{n}.ad{l}"
        shapes.update({f"{p}.down.w": (d, b), f"{p}.down.b": (b,),
                       f"{p}.up.w": (b, d), f"{p}.up.b": (d,)})
    shapes[f"exp{n}.head.w"] = (d, 1)
    shapes[f"exp{n}.head.b"] = (1,)
    return shapes


def param_shapes(cfg: PanelConfig) -> dict[str, tuple[int, ...]]:
    shapes = encoder_shapes(cfg)
    for n in range(cfg.n_experts):
        shapes.update(expert_shapes(cfg, n))
    return shapes


def encoder_keys(params: Mapping[str, np.ndarray]) -> list[str]:
    return [k for k in params if k.startswith("enc.")]


def expert_keys(params: Mapping[str, np.ndarray], n: int) -> list[str]:
    prefix = f"exp{n}."
    return [k for k in params if k.startswith(prefix)]


def expert_suffix(name: str) -> str:
    return name.split(".", 1)[1]


def _init_tensor(name: str, shape, r: float, rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[1]
    if name.endswith(".g"):
        return np.ones(shape)
    if leaf.startswith("b"):
        return np.zeros(shape)
    return rng.uniform(-r, r, size=shape)


def init_expert(cfg: PanelConfig, n: int, rng: np.random.Generator) -> Params:
    return {k: _init_tensor(k, s, cfg.init_range, rng) for k, s in expert_shapes(cfg, n).items()}


def init_panel(cfg: PanelConfig, seed: int) -> Params:
    """Weights ~ Uniform(-r, r) with one shared r; biases zero; layer-norm gains one."""
    rng = np.random.default_rng(seed)
    return {k: _init_tensor(k, s, cfg.init_range, rng) for k, s in param_shapes(cfg).items()}


def fingerprint(params: Mapping[str, np.ndarray], keys: Iterable[str] | None = None) -> str:
    h = hashlib.sha256()
    for k in sorted(params if keys is None else keys):
        a = np.ascontiguousarray(params[k], dtype="<f8")
        h.update(k.encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- forward pass

def _linear(x: nk.Tensor, w: nk.Tensor, b: nk.Tensor) -> nk.Tensor:
    return nk.add(nk.matmul(x, w), b)


def _encoder_layer(h: nk.Tensor, t: Mapping[str, nk.Tensor], i: int, cfg: PanelConfig,
                   mask: np.ndarray) -> nk.Tensor:
    p = f"enc.l{i}"
    B, T, d = h.shape
    H = cfg.n_heads
    dh = d // H

    def heads(x):
        return nk.transpose(nk.reshape(x, (B, T, H, dh)), (0, 2, 1, 3))

    q = heads(_linear(h, t[f"{p}.attn.wq"], t[f"{p}.attn.bq"]))
    k = nk.transpose(nk.reshape(_linear(h, t[f"{p}.attn.wk"], t[f"{p}.attn.bk"]), (B, T, H, dh)),
                     (0, 2, 3, 1))
    v = heads(_linear(h, t[f"{p}.attn.wv"], t[f"{p}.attn.bv"]))
    scores = nk.add(nk.mul(nk.matmul(q, k), 1.0 / np.sqrt(dh)), mask)
    ctx = nk.matmul(nk.softmax(scores), v)
    ctx = nk.reshape(nk.transpose(ctx, (0, 2, 1, 3)), (B, T, d))
    attn = _linear(ctx, t[f"{p}.attn.wo"], t[f"{p}.attn.bo"])
    h = nk.layer_norm(nk.add(h, attn), t[f"{p}.ln1.g"], t[f"{p}.ln1.b"])
    ff = _linear(nk.gelu(_linear(h, t[f"{p}.ffn.w1"], t[f"{p}.ffn.b1"])),
                 t[f"{p}.ffn.w2"], t[f"{p}.ffn.b2"])
    return nk.layer_norm(nk.add(h, ff), t[f"{p}.ln2.g"], t[f"{p}.ln2.b"])


def adapter_layer(h: nk.Tensor, t: Mapping[str, nk.Tensor], n: int, l: int) -> nk.Tensor:
    """Residual bottleneck: h + Up(GELU(Down(h)))."""
    p = f"exp{n}.ad{l}"
    down = nk.gelu(_linear(h, t[f"{p}.down.w"], t[f"{p}.down.b"]))
    return nk.add(h, _linear(down, t[f"{p}.up.w"], t[f"{p}.up.b"]))


def panel_logits(t: Mapping[str, nk.Tensor], ids: np.ndarray, cfg: PanelConfig,
                 expert: int | None, head: int | None = None) -> nk.Tensor:
    """Pre-sigmoid scores, shape [B], for a batch of token ids through one expert.

    ``expert=None`` skips the adapters (plain encoder path); ``head`` defaults
    to the expert's own classifier.
    """
    ids = np.asarray(ids)
    B, T = ids.shape
    mask = np.where(ids == 0, -1e9, 0.0)[:, None, None, :]
    h = nk.add(nk.embedding(t["enc.tok_emb"], ids), t["enc.pos_emb"][:T])
    h = nk.layer_norm(h, t["enc.emb_ln.g"], t["enc.emb_ln.b"])
    for i in range(cfg.n_layers):
        h = _encoder_layer(h, t, i, cfg, mask)
        if expert is not None and i < cfg.n_layers - 1:
            h = adapter_layer(h, t, expert, i)
    pooled = h[:, 0, :]
    hn = expert if head is None else head
    logits = _linear(pooled, t[f"exp{hn}.head.w"], t[f"exp{hn}.head.b"])
    return nk.reshape(logits, (B,))


def as_constants(params: Mapping[str, np.ndarray]) -> dict[str, nk.Tensor]:
    return {k: nk.Tensor(v) for k, v in params.items()}


def predict_ids(params: Mapping[str, np.ndarray], ids: np.ndarray, cfg: PanelConfig,
                expert: int | None, head: int | None = None, batch_size: int = 64) -> np.ndarray:
    """Confidences in (0, 1) for a batch of encoded sequences."""
    t = as_constants(params)
    out = []
    for start in range(0, len(ids), batch_size):
        logits = panel_logits(t, ids[start:start + batch_size], cfg, expert, head)
        out.append(nk._sigmoid(logits.data))
    return np.concatenate(out) if out else np.zeros(0)


@dataclass
class Panel:
    """A configured panel: hyperparameters, vocabulary, domain names, weights."""

    config: PanelConfig
    vocab: Vocab
    params: Params
    domains: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.domains:
            self.domains = [f"domain{n}" for n in range(self.config.n_experts)]
        if len(self.domains) != self.config.n_experts:
            raise ValueError(f"{len(self.domains)} domain names for {self.config.n_experts} experts")

    @property
    def n_experts(self) -> int:
        return self.config.n_experts

    def check_expert(self, n: int) -> int:
        if not 0 <= n < self.n_experts:
            raise IndexError(f"expert {n} out of range for a {self.n_experts}-expert panel")
        return n

    def encode(self, pairs: Sequence[ContextResponsePair]) -> np.ndarray:
        return encode_pairs(self.vocab, pairs, self.config.max_len)

    def predict(self, pairs: Sequence[ContextResponsePair], expert: int) -> np.ndarray:
        return predict_ids(self.params, self.encode(pairs), self.config, self.check_expert(expert))

    def copy(self) -> "Panel":
        return Panel(PanelConfig(**self.config.to_dict()), self.vocab,
                     {k: v.copy() for k, v in self.params.items()}, list(self.domains))


def new_panel(vocab: Vocab, domains: Sequence[str], seed: int, **overrides) -> Panel:
    cfg = PanelConfig(**{**overrides, "n_experts": len(domains), "vocab_size": len(vocab)})
    return Panel(cfg, vocab, init_panel(cfg, seed), list(domains))


def panel_forward(panel: Panel, tokens: TokenSequence, adapter_id: int) -> float:
    """Confidence that the encoded response is appropriate, via one expert."""
    return float(predict_ids(panel.params, tokens.ids[None, :], panel.config,
                             panel.check_expert(adapter_id))[0])
