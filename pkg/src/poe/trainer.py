"""Training regimes for a panel.

* ``train_multitask``: encoder and all experts jointly; each instance flows
  through its own domain's expert, so an expert's update depends only on
  its own domain's instances while the encoder sees the whole batch.
* ``finetune_adapters``: encoder frozen, each expert tuned on its own domain.
* ``fewshot_finetune``: MSE regression of a pooled single-expert panel onto
  rescaled human scores from a small sample of an evaluation set.
* ``train_new_adapter``: encoder and existing experts frozen, one new expert
  trained on a new task.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import numkit as nk
from .meta_eval import spearman
from .panel import Panel, PanelConfig, encoder_keys, expert_keys, init_expert, panel_logits, predict_ids
from .records import ContextResponsePair, DomainDataset, EvaluationRecord

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-3
    max_epochs: int = 3
    eval_every: int = 200
    patience: int = 10
    seed: int = 0
    loss: str = "bce"
    weight_decay: float = 0.01
    sampling: str = "quota"
    max_steps: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.loss not in ("bce", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.sampling not in ("quota", "uniform"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")


# hyperparameters reported for the full-scale setup, kept for reference runs
PRESETS = {
    "toy": TrainConfig(),
    "full": TrainConfig(batch_size=32, lr=5e-6, max_epochs=3, eval_every=2000, patience=10),
    "full-finetune": TrainConfig(batch_size=32, lr=1e-5, max_epochs=10, eval_every=1024, patience=3),
    "full-fewshot": TrainConfig(batch_size=2, lr=1e-5, max_epochs=100, patience=10, loss="mse"),
}


@dataclass
class MiniBatch:
    ids: np.ndarray
    targets: np.ndarray
    domains: np.ndarray

    def __len__(self):
        return len(self.targets)


@dataclass
class EncodedSet:
    ids: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return len(self.targets)


def encode_labeled(panel: Panel, pairs: Sequence[ContextResponsePair]) -> EncodedSet:
    if any(p.label is None for p in pairs):
        raise ValueError("training pairs must carry a label")
    return EncodedSet(panel.encode(pairs), np.array([p.label for p in pairs], dtype=np.float64))


def sample_minibatches(sets: Sequence[EncodedSet], batch_size: int, rng: np.random.Generator,
                       mode: str = "quota") -> Iterator[MiniBatch]:
    """One epoch of mini-batches; the generator ending marks the epoch end.

    ``quota`` draws exactly ``batch_size / N`` instances per domain from
    per-domain shuffled streams and ends when the shortest stream runs out.
    ``uniform`` shuffles all instances together.
    """
    if not sets or any(len(s) == 0 for s in sets):
        raise ValueError("every domain needs at least one instance")
    if mode == "quota":
        n = len(sets)
        if batch_size % n:
            raise ValueError(f"batch size {batch_size} is not divisible by {n} domains")
        quota = batch_size // n
        perms = [rng.permutation(len(s)) for s in sets]
        for b in range(min(len(s) for s in sets) // quota):
            picks = [p[b * quota:(b + 1) * quota] for p in perms]
            yield MiniBatch(np.concatenate([s.ids[i] for s, i in zip(sets, picks)]),
                            np.concatenate([s.targets[i] for s, i in zip(sets, picks)]),
                            np.repeat(np.arange(n), quota))
    elif mode == "uniform":
        owner = np.concatenate([np.full(len(s), d) for d, s in enumerate(sets)])
        local = np.concatenate([np.arange(len(s)) for s in sets])
        order = rng.permutation(len(owner))
        for start in range(0, len(order), batch_size):
            sel = order[start:start + batch_size]
            yield MiniBatch(np.stack([sets[owner[j]].ids[local[j]] for j in sel]),
                            np.array([sets[owner[j]].targets[local[j]] for j in sel]),
                            owner[sel])
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")


def per_instance_loss(logits: nk.Tensor, targets: np.ndarray, kind: str) -> nk.Tensor:
    if kind == "bce":
        return nk.bce_with_logits(logits, targets)
    diff = nk.sub(nk.sigmoid(logits), targets)
    return nk.mul(diff, diff)


def routed_loss(t, batch: MiniBatch, cfg: PanelConfig, kind: str,
                experts: Sequence[int] | None = None) -> nk.Tensor:
    """Mean loss over the batch, each instance through its own domain's expert.

    ``experts[d]`` is the expert serving domain ``d`` (identity by default).
    """
    total = None
    for d in np.unique(batch.domains):
        rows = batch.domains == d
        n = int(d) if experts is None else experts[int(d)]
        logits = panel_logits(t, batch.ids[rows], cfg, n)
        part = nk.sum_(per_instance_loss(logits, batch.targets[rows], kind))
        total = part if total is None else nk.add(total, part)
    return nk.mul(total, 1.0 / len(batch))


def accuracy(params, data: EncodedSet, cfg: PanelConfig, expert: int) -> float:
    if len(data) == 0:
        return float("nan")
    p = predict_ids(params, data.ids, cfg, expert)
    return float(np.mean((p >= 0.5) == (data.targets >= 0.5)))


@dataclass
class History:
    records: list[dict] = field(default_factory=list)
    best_step: int = 0
    best_score: float = -math.inf
    steps: int = 0
    stopped_early: bool = False

    def lines(self) -> Iterator[dict]:
        yield from self.records


def _fit(panel: Panel, train_sets: Sequence[EncodedSet], trainable: Iterable[str],
         validate: Callable[[dict], dict[str, float]], cfg: TrainConfig,
         experts: Sequence[int] | None = None,
         on_step: Callable[[int, MiniBatch, dict, dict], None] | None = None) -> tuple[dict, History]:
    """Shared step/eval/early-stop loop; returns the best parameters seen."""
    rng = np.random.default_rng(cfg.seed)
    state = nk.OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    trainable = [k for k in trainable]
    params = dict(panel.params)
    hist = History()
    best = dict(params)
    bad_checks = 0
    running, running_n = 0.0, 0
    step = 0

    def checkpoint():
        nonlocal best, bad_checks, running, running_n
        scores = validate(params)
        mean_acc = float(np.mean(list(scores.values())))
        loss = running / running_n if running_n else None
        hist.records.append({"step": step, "loss": loss, "val": scores, "mean_val": mean_acc})
        log.info("step %d loss %s val %.4f", step, loss, mean_acc)
        running, running_n = 0.0, 0
        if mean_acc > hist.best_score:
            hist.best_score, hist.best_step = mean_acc, step
            best = dict(params)
            bad_checks = 0
        else:
            bad_checks += 1
        return bad_checks >= cfg.patience

    checkpoint()  # the starting point competes too, so training never returns something worse
    stop = False
    for _epoch in range(cfg.max_epochs):
        for batch in sample_minibatches(train_sets, cfg.batch_size, rng, cfg.sampling):
            try:
                loss, grads = nk.forward_backward(
                    lambda t: routed_loss(t, batch, panel.config, cfg.loss, experts), params, trainable)
            except nk.NumericalError as exc:
                raise nk.NumericalError(f"step {step + 1}: {exc}") from None
            if not math.isfinite(loss):
                raise nk.NumericalError(f"step {step + 1}: loss is {loss}")
            before = params
            params, state = nk.adamw_step(params, grads, state)
            step += 1
            running += loss
            running_n += 1
            if on_step is not None:
                on_step(step, batch, before, params)
            if step % cfg.eval_every == 0 and checkpoint():
                hist.stopped_early = True
                stop = True
            if stop or (cfg.max_steps is not None and step >= cfg.max_steps):
                stop = True
                break
        if stop:
            break
    if not hist.records or hist.records[-1]["step"] != step:
        checkpoint()
    hist.steps = step
    return best, hist


def train_multitask(panel: Panel, datasets: Sequence[DomainDataset], cfg: TrainConfig,
                    on_step=None) -> tuple[Panel, History]:
    """Joint training of the encoder and every expert with per-domain routing."""
    if cfg.loss != "bce":
        raise ValueError("multitask training uses binary cross-entropy")
    if panel.n_experts != len(datasets):
        raise ValueError(f"{panel.n_experts} experts but {len(datasets)} datasets")
    train = [encode_labeled(panel, ds.train) for ds in datasets]
    valid = [encode_labeled(panel, ds.valid) for ds in datasets]

    def validate(params):
        return {ds.domain: accuracy(params, v, panel.config, n)
                for n, (ds, v) in enumerate(zip(datasets, valid))}

    best, hist = _fit(panel, train, list(panel.params), validate, cfg, on_step=on_step)
    out = panel.copy()
    out.params = best
    return out, hist


def merge_datasets(datasets: Sequence[DomainDataset], name: str = "merged") -> DomainDataset:
    """All domains pooled into one dataset, e.g. for a single-classifier baseline."""
    return DomainDataset(name, [p for ds in datasets for p in ds.train],
                         [p for ds in datasets for p in ds.valid])


def finetune_adapters(panel: Panel, datasets: Sequence[DomainDataset], cfg: TrainConfig
                      ) -> tuple[Panel, list[History]]:
    """Tune each expert separately on its own domain with the encoder frozen."""
    if panel.n_experts != len(datasets):
        raise ValueError(f"{panel.n_experts} experts but {len(datasets)} datasets")
    out = panel.copy()
    hists = []
    for n, ds in enumerate(datasets):
        train, valid = encode_labeled(out, ds.train), encode_labeled(out, ds.valid)
        sub_cfg = replace(cfg, seed=cfg.seed + n, sampling="uniform")
        best, hist = _fit(out, [train], expert_keys(out.params, n),
                          lambda params, v=valid, n=n: {ds.domain: accuracy(params, v, out.config, n)},
                          sub_cfg, experts=[n])
        for k in expert_keys(out.params, n):
            out.params[k] = best[k]
        hists.append(hist)
    return out, hists


def train_new_adapter(panel: Panel, dataset: DomainDataset, cfg: TrainConfig,
                      domain: str | None = None) -> tuple[Panel, History]:
    """Append a freshly initialised expert and train only it on ``dataset``."""
    n = panel.n_experts
    out = panel.copy()
    out.config = PanelConfig(**{**panel.config.to_dict(), "n_experts": n + 1})
    out.params.update(init_expert(out.config, n, np.random.default_rng(cfg.seed)))
    out.domains = [*panel.domains, domain or dataset.domain]
    train, valid = encode_labeled(out, dataset.train), encode_labeled(out, dataset.valid)
    best, hist = _fit(out, [train], expert_keys(out.params, n),
                      lambda params: {out.domains[n]: accuracy(params, valid, out.config, n)},
                      replace(cfg, sampling="uniform"), experts=[n])
    for k in expert_keys(out.params, n):
        out.params[k] = best[k]
    return out, hist


# ---------------------------------------------------------------- few-shot transfer

@dataclass
class FewShotReport:
    k_percent: float
    n_train: int
    n_valid: int
    rho_before: float
    rho_after: float
    epochs: int
    best_valid_rho: float

    def to_json(self) -> dict:
        return asdict(self)


def rescale_scores(q: Sequence[float]) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    lo, hi = q.min(), q.max()
    if hi == lo:
        return np.full_like(q, 0.5)
    return (q - lo) / (hi - lo)


def fewshot_finetune(model: Panel, records: Sequence[EvaluationRecord], k_percent: float,
                     cfg: TrainConfig, rng: np.random.Generator, adapter_only: bool = False
                     ) -> tuple[Panel, FewShotReport]:
    """Regress a single-expert panel onto human scores from a K% sample.

    Half the sample trains, half validates by Spearman rho once per epoch
    (epoch 0 is the untouched model); training stops after ``cfg.patience``
    epochs without improvement. Rho before and after is measured on the
    full record set.
    """
    if model.n_experts != 1:
        raise ValueError("few-shot transfer expects a pooled single-expert panel")
    if k_percent not in (10, 20, 30, 40):
        log.warning("K=%s%% is outside the usual {10, 20, 30, 40}", k_percent)
    n_sample = int(round(len(records) * k_percent / 100.0))
    if n_sample < 2:
        raise ValueError(f"K={k_percent}% of {len(records)} records leaves {n_sample} (< 2)")
    targets = rescale_scores([r.human_score for r in records])
    all_ids = model.encode([r.pair for r in records])
    human = np.array([r.human_score for r in records])

    pick = rng.choice(len(records), size=n_sample, replace=False)
    half = n_sample // 2
    tr, va = pick[:half], pick[half:]
    train = EncodedSet(all_ids[tr], targets[tr])

    def full_rho(params):
        return spearman(predict_ids(params, all_ids, model.config, 0), human)

    def valid_rho(params):
        if len(va) < 3:
            return float("nan")
        return spearman(predict_ids(params, all_ids[va], model.config, 0), targets[va])

    trainable = expert_keys(model.params, 0) if adapter_only else list(model.params)
    state = nk.OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    params = dict(model.params)
    best, best_rho = params, valid_rho(params)
    bad = 0
    epochs = 0
    train_rng = np.random.default_rng(rng.integers(2**63))
    for epochs in range(1, cfg.max_epochs + 1):
        for batch in sample_minibatches([train], cfg.batch_size, train_rng, "uniform"):
            loss, grads = nk.forward_backward(
                lambda t: routed_loss(t, batch, model.config, "mse"), params, trainable)
            if not math.isfinite(loss):
                raise nk.NumericalError(f"epoch {epochs}: loss is {loss}")
            params, state = nk.adamw_step(params, grads, state)
        rho = valid_rho(params)
        if rho > best_rho or (math.isnan(best_rho) and not math.isnan(rho)):
            best, best_rho, bad = params, rho, 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    out = model.copy()
    out.params = dict(best)
    report = FewShotReport(k_percent, len(tr), len(va), full_rho(model.params), full_rho(best),
                           epochs, best_rho)
    return out, report
