"""Attentional encoder-decoder with per-component hard parameter sharing.

Components (one letter each):

    S  source embeddings        E  bidirectional LSTM encoder (+ decoder-init projection)
    A  MLP attention            T  target embeddings
    D  LSTM decoder             P  output projection

A :class:`SharingConfig` names the letters whose parameters are shared by all
tasks; every other letter gets one instance per task.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .data import TokenPair, Vocabulary, join_symbols, target_symbols
from .numcore import ContractError, Tensor

COMPONENTS = "SEATDP"
SHARED = "shared"


class ConfigParseError(ValueError):
    """A sharing-configuration string is malformed."""


@dataclass(frozen=True)
class SharingConfig:
    shared: frozenset = frozenset()

    def __post_init__(self):
        bad = set(self.shared) - set(COMPONENTS)
        if bad:
            raise ConfigParseError(f"unknown component letter(s) {sorted(bad)}")
        object.__setattr__(self, "shared", frozenset(self.shared))

    def __str__(self) -> str:
        return "".join(c for c in COMPONENTS if c in self.shared)

    @property
    def label(self) -> str:
        """Canonical string, with ``-`` standing in for the empty config."""
        return str(self) or "-"

    def __contains__(self, letter: str) -> bool:
        return letter in self.shared

    def __len__(self) -> int:
        return len(self.shared)


def parse_sharing_config(text: str) -> SharingConfig:
    """``"SE"`` -> {S, E}; case-insensitive; ``""`` or ``"-"`` is single-task."""
    text = text.strip()
    if text == "-":
        text = ""
    seen: set[str] = set()
    for ch in text.upper():
        if ch not in COMPONENTS:
            raise ConfigParseError(f"unknown component letter {ch!r} in {text!r}")
        if ch in seen:
            raise ConfigParseError(f"duplicated component letter {ch!r} in {text!r}")
        seen.add(ch)
    return SharingConfig(frozenset(seen))


def enumerate_configs() -> list[SharingConfig]:
    """All 64 configs: by number of shared letters, then in component order."""
    return [
        SharingConfig(frozenset(combo))
        for k in range(len(COMPONENTS) + 1)
        for combo in itertools.combinations(COMPONENTS, k)
    ]


@dataclass
class HyperParams:
    embed_dim: int = 60
    hidden_dim: int = 300
    dropout: float = 0.2
    batch_size_main: int = 30
    aux_tokens_per_batch: int = 10
    attention_dim: int = 0  # 0 means hidden_dim
    lr: float = 1e-3
    precision: str = "f64"

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "batch_size_main", "aux_tokens_per_batch"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hidden_dim % 2:
            raise ValueError("hidden_dim must be even (two encoder directions)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    @property
    def att_dim(self) -> int:
        return self.attention_dim or self.hidden_dim

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


def component_shapes(letter: str, hp: HyperParams, n_src: int, n_tgt: int) -> dict[str, tuple[int, ...]]:
    E, H, A = hp.embed_dim, hp.hidden_dim, hp.att_dim
    h = H // 2
    return {
        "S": {"emb": (n_src, E)},
        "E": {"fwd_W": (E + h, 4 * h), "fwd_b": (4 * h,), "bwd_W": (E + h, 4 * h),
              "bwd_b": (4 * h,), "init_W": (h, H), "init_b": (H,)},
        "A": {"W_enc": (H, A), "W_dec": (H, A), "v": (A,)},
        "T": {"emb": (n_tgt, E)},
        "D": {"W": (E + H + H, 4 * H), "b": (4 * H,)},
        "P": {"W": (H, n_tgt), "b": (n_tgt,)},
    }[letter]


@dataclass
class Batch:
    src: np.ndarray       # (B, Ls) ids, padded
    src_len: np.ndarray   # (B,)
    src_mask: np.ndarray  # (B, Ls) 0/1
    tgt_in: np.ndarray    # (B, Lt) <s> + target
    tgt_out: np.ndarray   # (B, Lt) target + </s>
    tgt_mask: np.ndarray  # (B, Lt)

    @property
    def n_symbols(self) -> int:
        return int(self.tgt_mask.sum())


def _pad(seqs: Sequence[Sequence[int]], pad: int) -> tuple[np.ndarray, np.ndarray]:
    L = max(len(s) for s in seqs)
    out = np.full((len(seqs), L), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), L))
    for k, s in enumerate(seqs):
        out[k, : len(s)] = s
        mask[k, : len(s)] = 1.0
    return out, mask


@dataclass
class MultiTaskModel:
    tasks: list[str]
    config: SharingConfig
    hp: HyperParams
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    registry: dict = field(default_factory=dict)  # (letter, owner) -> {name: Tensor}
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    task_kinds: dict = field(default_factory=dict)  # task id -> data task (for g2p rendering)

    def owner(self, task: str, letter: str) -> str:
        if task not in self.tasks:
            raise KeyError(f"unknown task {task!r}; model tasks are {self.tasks}")
        return SHARED if letter in self.config else task

    def resolve(self, task: str, letter: str) -> dict[str, Tensor]:
        return self.registry[(letter, self.owner(task, letter))]

    def parameters(self) -> list[Tensor]:
        return [t for comp in self.registry.values() for t in comp.values()]

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{letter}/{owner}/{name}": t
                for (letter, owner), comp in self.registry.items() for name, t in comp.items()}

    def task_parameters(self, task: str) -> list[Tensor]:
        return [t for letter in COMPONENTS for t in self.resolve(task, letter).values()]

    @property
    def dtype(self):
        return self.hp.dtype

    # -- batching ---------------------------------------------------------

    def kind(self, task: str) -> str:
        return self.task_kinds.get(task, task)

    def encode_sources(self, sources: Sequence[TokenPair | str]) -> list[list[int]]:
        out = []
        for s in sources:
            syms = s.source_symbols() if isinstance(s, TokenPair) else list(s)
            if not syms:
                raise ContractError("empty source sequence")
            out.append(self.src_vocab.encode(syms))
        return out

    def make_batch(self, task: str, pairs: Sequence[TokenPair]) -> Batch:
        if not pairs:
            raise ContractError("empty batch")
        v = self.tgt_vocab
        src, src_mask = _pad(self.encode_sources(pairs), self.src_vocab.pad_id)
        tgts = [v.encode(target_symbols(p.target, self.kind(task))) for p in pairs]
        tin, _ = _pad([[v.bos_id, *t] for t in tgts], v.pad_id)
        tout, tmask = _pad([[*t, v.eos_id] for t in tgts], v.pad_id)
        return Batch(src, src_mask.sum(axis=1).astype(np.int64), src_mask, tin, tout, tmask)

    def render(self, task: str, ids: Sequence[int]) -> str:
        return join_symbols(self.tgt_vocab.decode(ids), self.kind(task))

    # -- network ----------------------------------------------------------

    def _const(self, arr) -> Tensor:
        return Tensor(np.asarray(arr, dtype=self.dtype))

    def encode_batch(self, task: str, src: np.ndarray, lengths: np.ndarray, mask: np.ndarray,
                     train: bool = False) -> tuple[Tensor, tuple[Tensor, Tensor]]:
        """Encoder states (B, L, H) and the initial decoder state (h, c)."""
        S, Ec = self.resolve(task, "S"), self.resolve(task, "E")
        if src.size and (src.min() < 0 or src.max() >= S["emb"].shape[0]):
            raise IndexError(f"source id out of range [0, {S['emb'].shape[0]})")
        B = src.shape[0]
        h = self.hp.hidden_dim // 2
        p = self.hp.dropout
        x = nc.dropout(nc.embedding(S["emb"], src), p, self.rng, train)
        zero = self._const(np.zeros((B, h)))
        fwd, _, _ = nc.lstm(x, Ec["fwd_W"], Ec["fwd_b"], zero, zero, mask)
        xr = nc.time_reverse(x, lengths)
        bwd_r, bwd_last, _ = nc.lstm(xr, Ec["bwd_W"], Ec["bwd_b"], zero, zero, mask)
        bwd = nc.time_reverse(bwd_r, lengths)
        states = nc.dropout(nc.concat([fwd, bwd], axis=2), p, self.rng, train)
        s0 = nc.tanh(nc.add(nc.matmul(bwd_last, Ec["init_W"]), Ec["init_b"]))
        c0 = self._const(np.zeros((B, self.hp.hidden_dim)))
        return states, (s0, c0)

    def attention_keys(self, task: str, states: Tensor) -> Tensor:
        A = self.resolve(task, "A")
        B, L, H = states.shape
        return nc.reshape(nc.matmul(nc.reshape(states, (B * L, H)), A["W_enc"]), (B, L, A["W_enc"].shape[1]))

    def attend_batch(self, task: str, states: Tensor, keys: Tensor, dec_h: Tensor, mask) -> tuple[Tensor, Tensor]:
        A = self.resolve(task, "A")
        return nc.attention(states, keys, nc.matmul(dec_h, A["W_dec"]), A["v"], mask)

    def decode_step_batch(self, task: str, prev_ids: np.ndarray, state: tuple[Tensor, Tensor],
                          context: Tensor, train: bool = False) -> tuple[Tensor, tuple[Tensor, Tensor]]:
        """One decoder step: returns the new output state h (pre-projection) and (h, c)."""
        T, D = self.resolve(task, "T"), self.resolve(task, "D")
        V = T["emb"].shape[0]
        if prev_ids.size and (prev_ids.min() < 0 or prev_ids.max() >= V):
            raise IndexError(f"target id out of range [0, {V})")
        emb = nc.dropout(nc.embedding(T["emb"], prev_ids), self.hp.dropout, self.rng, train)
        x = nc.concat([emb, context], axis=1)
        B = x.shape[0]
        x3 = nc.reshape(x, (B, 1, x.shape[1]))
        _, h, c = nc.lstm(x3, D["W"], D["b"], state[0], state[1])
        return h, (h, c)

    def project(self, task: str, h: Tensor) -> Tensor:
        P = self.resolve(task, "P")
        return nc.add(nc.matmul(h, P["W"]), P["b"])

    def batch_loss(self, task: str, batch: Batch, train: bool = False) -> Tensor:
        """Summed (not averaged) teacher-forced cross-entropy over target symbols."""
        mask = batch.src_mask
        states, state = self.encode_batch(task, batch.src, batch.src_len, mask, train)
        keys = self.attention_keys(task, states)
        outs = []
        for t in range(batch.tgt_in.shape[1]):
            ctx, _ = self.attend_batch(task, states, keys, state[0], mask)
            h, state = self.decode_step_batch(task, batch.tgt_in[:, t], state, ctx, train)
            outs.append(h)
        hs = nc.stack(outs, axis=1)
        B, Lt, H = hs.shape
        hs = nc.dropout(nc.reshape(hs, (B * Lt, H)), self.hp.dropout, self.rng, train)
        logits = self.project(task, hs)
        return nc.cross_entropy(logits, batch.tgt_out.reshape(-1), batch.tgt_mask.reshape(-1), reduction="sum")

    def greedy_batch(self, task: str, sources: Sequence[TokenPair | str], max_len: Sequence[int] | None = None) -> list[str]:
        """Greedy decoding; argmax ties go to the lowest id."""
        ids = self.encode_sources(sources)
        src, mask = _pad(ids, self.src_vocab.pad_id)
        lengths = mask.sum(axis=1).astype(np.int64)
        # tags do not count towards the length cap
        n_chars = [len(s.source) if isinstance(s, TokenPair) else len(s) for s in sources]
        caps = np.array(max_len if max_len is not None else [2 * n + 10 for n in n_chars])
        v = self.tgt_vocab
        B = len(ids)
        out: list[list[int]] = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        with nc.no_grad():
            states, state = self.encode_batch(task, src, lengths, mask)
            keys = self.attention_keys(task, states)
            prev = np.full(B, v.bos_id, dtype=np.int64)
            for t in range(int(caps.max()) + 1):
                ctx, _ = self.attend_batch(task, states, keys, state[0], mask)
                h, state = self.decode_step_batch(task, prev, state, ctx)
                nxt = np.argmax(self.project(task, h).value, axis=1)
                for k in range(B):
                    if done[k]:
                        continue
                    if nxt[k] == v.eos_id or len(out[k]) >= caps[k]:
                        done[k] = True
                    else:
                        out[k].append(int(nxt[k]))
                if done.all():
                    break
                prev = nxt
        return [self.render(task, o) for o in out]


def build_model(config: SharingConfig, tasks: Sequence[str], vocabs: tuple[Vocabulary, Vocabulary],
                hp: HyperParams, seed: int | np.random.Generator = 0,
                task_kinds: dict | None = None) -> MultiTaskModel:
    """Instantiate parameters for every (letter, owner) the config requires.

    ``seed`` may be a Generator, in which case it is also kept for dropout so
    one stream drives the whole run.
    """
    tasks = list(dict.fromkeys(tasks))
    if not tasks:
        raise ContractError("build_model: at least one task is required")
    src_vocab, tgt_vocab = vocabs
    if len(src_vocab) == 0 or len(tgt_vocab) == 0:
        raise ContractError("build_model: empty vocabulary")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dtype = hp.dtype
    H = hp.hidden_dim
    registry: dict = {}
    for letter in COMPONENTS:
        owners = [SHARED] if letter in config else tasks
        for owner in owners:
            comp = {}
            for name, shape in component_shapes(letter, hp, len(src_vocab), len(tgt_vocab)).items():
                if name == "emb" or name.endswith("W") or name == "v":
                    arr = rng.uniform(-0.1, 0.1, size=shape).astype(dtype)
                else:
                    arr = np.zeros(shape, dtype=dtype)
                    if letter == "E" and name in ("fwd_b", "bwd_b"):
                        arr[H // 2: H] = 1.0  # forget gate
                    elif letter == "D" and name == "b":
                        arr[H: 2 * H] = 1.0
                comp[name] = Tensor(arr, requires_grad=True, name=f"{letter}/{owner}/{name}")
            registry[(letter, owner)] = comp
    return MultiTaskModel(tasks, config, hp, src_vocab, tgt_vocab, registry, rng, dict(task_kinds or {}))


# -- spec-level single-sequence entry points ---------------------------------

def encode(model: MultiTaskModel, task: str, source: Sequence[int]) -> Tensor:
    """Encoder states (L, hidden_dim) for one id sequence."""
    src = np.asarray([list(source)], dtype=np.int64)
    if src.shape[1] < 1:
        raise ContractError("encode: empty source")
    mask = np.ones(src.shape)
    states, _ = model.encode_batch(task, src, np.array([src.shape[1]]), mask)
    return nc.reshape(states, states.shape[1:])


def initial_state(model: MultiTaskModel, task: str, source: Sequence[int]) -> tuple[Tensor, Tensor]:
    src = np.asarray([list(source)], dtype=np.int64)
    _, state = model.encode_batch(task, src, np.array([src.shape[1]]), np.ones(src.shape))
    return state


def attend(model: MultiTaskModel, task: str, states: Tensor, decoder_state: Tensor) -> tuple[Tensor, Tensor]:
    """Context vector and attention weights for one sequence of states (L, H)."""
    L, H = states.shape
    if L < 1:
        raise ContractError("attend: no states")
    st = nc.reshape(states, (1, L, H))
    dh = decoder_state[0] if isinstance(decoder_state, tuple) else decoder_state
    dh = nc.reshape(dh, (1, H))
    ctx, w = model.attend_batch(task, st, model.attention_keys(task, st), dh, None)
    return nc.reshape(ctx, (H,)), nc.reshape(w, (L,))


def decode_step(model: MultiTaskModel, task: str, prev_char_id: int, decoder_state: tuple[Tensor, Tensor],
                context: Tensor) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    """Logits over the target vocabulary and the next (h, c) decoder state."""
    H = model.hp.hidden_dim
    h0, c0 = (nc.reshape(s, (1, H)) for s in decoder_state)
    ctx = nc.reshape(context, (1, H))
    h, state = model.decode_step_batch(task, np.array([prev_char_id], dtype=np.int64), (h0, c0), ctx)
    logits = model.project(task, h)
    return nc.reshape(logits, (logits.shape[1],)), state


def forward_loss(model: MultiTaskModel, task: str, pairs: Sequence[TokenPair], train_mode: bool = False) -> Tensor:
    """Mean per-symbol cross-entropy (end-of-sequence included), teacher forced."""
    batch = model.make_batch(task, pairs)
    return nc.scale(model.batch_loss(task, batch, train_mode), 1.0 / batch.n_symbols)


def count_parameters(model: MultiTaskModel) -> dict[str, tuple[int, int]]:
    """letter -> (number of instances, scalars per instance)."""
    out = {}
    for letter in COMPONENTS:
        comps = [c for (lt, _), c in model.registry.items() if lt == letter]
        sizes = {sum(t.size for t in c.values()) for c in comps}
        assert len(sizes) == 1
        out[letter] = (len(comps), sizes.pop())
    return out


def total_parameters(model: MultiTaskModel) -> int:
    return sum(n * size for n, size in count_parameters(model).values())


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(model: MultiTaskModel, path) -> None:
    """One ``.npz`` file: named tensors plus a JSON metadata record."""
    meta = {
        "config": str(model.config),
        "tasks": model.tasks,
        "task_kinds": model.task_kinds,
        "hp": asdict(model.hp),
        "src_vocab": model.src_vocab.symbols,
        "tgt_vocab": model.tgt_vocab.symbols,
    }
    arrays = {k: t.value for k, t in model.named_parameters().items()}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)
    tmp.replace(path)


def load_checkpoint(path, seed: int = 0) -> MultiTaskModel:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        hp = HyperParams(**meta["hp"])
        model = build_model(parse_sharing_config(meta["config"]), meta["tasks"],
                            (Vocabulary(meta["src_vocab"]), Vocabulary(meta["tgt_vocab"])), hp, seed,
                            meta.get("task_kinds"))
        for key, t in model.named_parameters().items():
            t.value[...] = z[key]
    return model
