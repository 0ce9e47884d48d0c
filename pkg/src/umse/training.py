"""Optimization with hand-written reverse-mode gradients.

The backward pass mirrors forward_batch exactly, block by block, on the
recorded cache. Prefix gradients flow through each example's scenario
permutation back into the shared base rows, which is the entire
knowledge-sharing mechanism: an update on one scenario's batch moves rows
every scenario reads.

Three modes: ``unified`` (all scenario streams, permuted prefix),
``joint_no_prefix`` (same streams, prefix slots removed and the bank left
untouched), ``single_scenario`` (one stream). Streams are interleaved
round-robin; the loss is the summed binary cross-entropy over each batch.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import ScenarioExample
from .model import (
    SCENARIOS,
    InputLayout,
    ModelConfig,
    _gelu_grad,
    assemble_input,
    forward_batch,
    init_parameters,
    param_names,
    prefix_permutation,
    save_checkpoint,
)

_CLAMP = 1.0e-12
_EVAL_BATCH = 32

MODES = ("unified", "joint_no_prefix", "single_scenario")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3.0e-5
    epochs: int = 10
    batch_size: int = 8
    seed: int = 12
    mode: str = "unified"
    scenario: str | None = None  # single_scenario only
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8
    weight_decay: float = 0.01
    clip_norm: float | None = 1.0  # None switches clipping off
    holdout_fraction: float = 0.1
    target_accuracy: float | None = None  # early stop once every stream reaches it

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 1 <= self.epochs <= 10:
            raise ValueError("epochs must be in 1..10")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode: {self.mode}")
        if self.mode == "single_scenario":
            if self.scenario not in SCENARIOS:
                raise ValueError("single_scenario mode needs scenario SR, SD or SDR")
        elif self.scenario is not None:
            raise ValueError("scenario is only valid with mode single_scenario")
        if not 0.0 <= self.holdout_fraction <= 0.5:
            raise ValueError("holdout_fraction must be in [0, 0.5]")

    def active_scenarios(self) -> tuple[str, ...]:
        if self.mode == "single_scenario":
            return (self.scenario,)
        return SCENARIOS


@dataclass
class TrainReport:
    mode: str
    epochs_run: int = 0
    total_steps: int = 0
    initial_loss: float | None = None
    epoch_losses: list[float] = field(default_factory=list)
    holdout_accuracy: list[dict[str, float]] = field(default_factory=list)
    best_epoch: int | None = None
    wall_clock_seconds: float = 0.0
    diverged: bool = False
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "epochs_run": self.epochs_run,
            "total_steps": self.total_steps,
            "initial_loss": self.initial_loss,
            "epoch_losses": self.epoch_losses,
            "holdout_accuracy": self.holdout_accuracy,
            "best_epoch": self.best_epoch,
            "wall_clock_seconds": self.wall_clock_seconds,
            "diverged": self.diverged,
            "checkpoint_path": self.checkpoint_path,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def cross_entropy_loss(scores, labels) -> float:
    """Summed over the batch, not averaged: -sum c*ln(p) + (1-c)*ln(1-p)."""
    p = np.asarray(scores, dtype=float)
    c = np.asarray(labels, dtype=float)
    if p.shape != c.shape:
        raise ValueError("scores and labels differ in length")
    p = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    return float(-(c * np.log(p) + (1.0 - c) * np.log(1.0 - p)).sum())


def example_layout(
    ex: ScenarioExample, config: ModelConfig, use_prefix: bool = True
) -> InputLayout:
    return assemble_input(ex.scenario, ex.candidate, ex.reference, ex.document, config, use_prefix)


def _ln_backward(dy, xhat, invstd, gamma):
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return invstd * (dxhat - m1 - xhat * m2), dgamma, dbeta


def backward(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    batch: list[ScenarioExample],
    use_prefix: bool = True,
) -> tuple[float, dict[str, np.ndarray]]:
    """Summed cross-entropy loss of the batch and its exact gradient for
    every parameter (zero where a parameter is unused)."""
    if not batch:
        raise ValueError("empty batch")
    layouts = [example_layout(ex, config, use_prefix) for ex in batch]
    labels = np.array([ex.label for ex in batch], dtype=np.int64)
    cache = forward_batch(params, config, layouts)
    loss = cross_entropy_loss(cache.probs[:, 1], labels)

    grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    n, t, z = cache.emb.shape
    heads = config.n_heads
    hd = z // heads
    ffn = config.ffn_dim

    # softmax cross-entropy collapses to probs minus one-hot targets
    dlogits = cache.probs.copy()
    dlogits[np.arange(n), labels] -= 1.0

    grads["head.w3"] += cache.head_a2.T @ dlogits
    grads["head.b3"] += dlogits.sum(axis=0)
    da2 = dlogits @ params["head.w3"].T
    du2 = da2 * (1.0 - cache.head_a2**2)
    grads["head.w2"] += cache.head_a1.T @ du2
    grads["head.b2"] += du2.sum(axis=0)
    da1 = du2 @ params["head.w2"].T
    du1 = da1 * (1.0 - cache.head_a1**2)
    grads["head.w1"] += cache.pooled.T @ du1
    grads["head.b1"] += du1.sum(axis=0)
    dpooled = du1 @ params["head.w1"].T

    dh_enc = dpooled[:, None, :] * cache.pool_mask[:, :, None] / cache.pool_counts[:, None, None]
    dh, dg, db = _ln_backward(
        dh_enc, cache.final_xhat, cache.final_invstd, params["final_ln.gamma"]
    )
    grads["final_ln.gamma"] += dg
    grads["final_ln.beta"] += db

    for l in reversed(range(config.n_layers)):
        lc = cache.layers[l]
        pre = f"layer{l}."

        dh_mid = dh.copy()
        dh_flat = dh.reshape(-1, z)
        grads[pre + "ffn.w2"] += lc.act.reshape(-1, ffn).T @ dh_flat
        grads[pre + "ffn.b2"] += dh.sum(axis=(0, 1))
        dact = (dh_flat @ params[pre + "ffn.w2"].T).reshape(n, t, ffn)
        du = dact * _gelu_grad(lc.u1, lc.gelu_t)
        grads[pre + "ffn.w1"] += lc.f_in.reshape(-1, z).T @ du.reshape(-1, ffn)
        grads[pre + "ffn.b1"] += du.sum(axis=(0, 1))
        df_in = (du.reshape(-1, ffn) @ params[pre + "ffn.w1"].T).reshape(n, t, z)
        dx, dg, db = _ln_backward(df_in, lc.ln2_xhat, lc.ln2_invstd, params[pre + "ffn_ln.gamma"])
        grads[pre + "ffn_ln.gamma"] += dg
        grads[pre + "ffn_ln.beta"] += db
        dh_mid += dx

        dh = dh_mid.copy()  # residual into the block input
        dmid_flat = dh_mid.reshape(-1, z)
        grads[pre + "attn.wo"] += lc.ctx.reshape(-1, z).T @ dmid_flat
        grads[pre + "attn.bo"] += dh_mid.sum(axis=(0, 1))
        dctx = (dmid_flat @ params[pre + "attn.wo"].T).reshape(n, t, heads, hd).transpose(0, 2, 1, 3)
        dattn = dctx @ lc.v.transpose(0, 1, 3, 2)
        dv = lc.attn.transpose(0, 1, 3, 2) @ dctx
        dscores = lc.attn * (dattn - (lc.attn * dattn).sum(axis=-1, keepdims=True))
        scale = 1.0 / np.sqrt(hd)
        dq = dscores @ lc.k * scale
        dk = dscores.transpose(0, 1, 3, 2) @ lc.q * scale
        dq_f = dq.transpose(0, 2, 1, 3).reshape(n, t, z)
        dk_f = dk.transpose(0, 2, 1, 3).reshape(n, t, z)
        dv_f = dv.transpose(0, 2, 1, 3).reshape(n, t, z)
        a_flat = lc.a_in.reshape(-1, z)
        grads[pre + "attn.wq"] += a_flat.T @ dq_f.reshape(-1, z)
        grads[pre + "attn.bq"] += dq_f.sum(axis=(0, 1))
        grads[pre + "attn.wk"] += a_flat.T @ dk_f.reshape(-1, z)
        grads[pre + "attn.wv"] += a_flat.T @ dv_f.reshape(-1, z)
        grads[pre + "attn.bv"] += dv_f.sum(axis=(0, 1))
        da_in = (
            dq_f.reshape(-1, z) @ params[pre + "attn.wq"].T
            + dk_f.reshape(-1, z) @ params[pre + "attn.wk"].T
            + dv_f.reshape(-1, z) @ params[pre + "attn.wv"].T
        ).reshape(n, t, z)
        dx, dg, db = _ln_backward(da_in, lc.ln1_xhat, lc.ln1_invstd, params[pre + "attn_ln.gamma"])
        grads[pre + "attn_ln.gamma"] += dg
        grads[pre + "attn_ln.beta"] += db
        dh += dx

    grads["pos_emb"][:t] += dh.sum(axis=0)
    for i, layout in enumerate(cache.layouts):
        row = cache.ids[i]
        content = row >= 0  # pad tail rows carry exactly zero gradient
        np.add.at(grads["tok_emb"], row[content], dh[i, content])
        if layout.n_prefix:
            perm = prefix_permutation(layout.n_prefix, layout.scenario)
            grads["prefix_base"][list(perm)] += dh[i, 1 : 1 + layout.n_prefix]

    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
    return loss, grads


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Global-norm clipping, in place; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g**2).sum()) for g in grads.values())))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


class AdamWState:
    def __init__(self, params: dict[str, np.ndarray]) -> None:
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.t = 0


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    config: TrainConfig,
    names: list[str] | None = None,
    learning_rate: float | None = None,
) -> None:
    """Decoupled weight decay applied to every updated parameter."""
    lr = config.learning_rate if learning_rate is None else learning_rate
    state.t += 1
    bc1 = 1.0 - config.beta1**state.t
    bc2 = 1.0 - config.beta2**state.t
    for name in names if names is not None else params:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        step = (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        params[name] -= lr * (step + config.weight_decay * params[name])


def evaluate_accuracy(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    examples: list[ScenarioExample],
    use_prefix: bool = True,
) -> float:
    """Fraction of examples whose positive-class probability falls on the
    label's side of 0.5."""
    if not examples:
        raise ValueError("no examples to evaluate")
    correct = 0
    for start in range(0, len(examples), _EVAL_BATCH):
        chunk = examples[start : start + _EVAL_BATCH]
        layouts = [example_layout(ex, config, use_prefix) for ex in chunk]
        cache = forward_batch(params, config, layouts)
        predicted = (cache.probs[:, 1] >= 0.5).astype(int)
        correct += int(sum(p == ex.label for p, ex in zip(predicted, chunk)))
    return correct / len(examples)


def _round_robin(per_stream: list[list[list[ScenarioExample]]]) -> list[list[ScenarioExample]]:
    out = []
    depth = max(len(s) for s in per_stream)
    for i in range(depth):
        for stream in per_stream:
            if i < len(stream):
                out.append(stream[i])
    return out


def train(
    init_params: dict[str, np.ndarray],
    model_config: ModelConfig,
    datasets: dict[str, list[ScenarioExample]],
    config: TrainConfig,
    checkpoint_path: str | None = None,
    log_stream=None,
) -> tuple[dict[str, np.ndarray], TrainReport]:
    """Runs the configured mode and returns the parameters of the epoch
    with the best mean held-out accuracy. One JSON progress line per epoch
    on ``log_stream`` (standard error by default)."""
    log = log_stream if log_stream is not None else sys.stderr
    started = time.monotonic()
    active = config.active_scenarios()
    for sc in active:
        if not datasets.get(sc):
            raise ValueError(f"no training examples for scenario {sc}")
    use_prefix = config.mode != "joint_no_prefix"
    params = {name: arr.copy() for name, arr in init_params.items()}
    rng = np.random.default_rng(config.seed)

    train_sets: dict[str, list[ScenarioExample]] = {}
    holdout_sets: dict[str, list[ScenarioExample]] = {}
    for sc in active:
        data = list(datasets[sc])
        order = rng.permutation(len(data))
        data = [data[i] for i in order]
        n_hold = min(int(len(data) * config.holdout_fraction), len(data) - 1)
        holdout_sets[sc] = data[:n_hold]
        train_sets[sc] = data[n_hold:]

    state = AdamWState(params)
    update_names = [
        name
        for name in params
        if not (config.mode == "joint_no_prefix" and name == "prefix_base")
    ]
    report = TrainReport(mode=config.mode)
    best_params = None
    best_mean_accuracy = -1.0

    for epoch in range(1, config.epochs + 1):
        streams = []
        for sc in active:
            data = train_sets[sc]
            order = rng.permutation(len(data))
            streams.append(
                [
                    [data[j] for j in order[i : i + config.batch_size]]
                    for i in range(0, len(data), config.batch_size)
                ]
            )
        step_losses = []
        for batch in _round_robin(streams):
            try:
                loss, grads = backward(params, model_config, batch, use_prefix)
            except FloatingPointError:
                report.diverged = True
                break
            if not np.isfinite(loss):
                report.diverged = True
                break
            if report.initial_loss is None:
                report.initial_loss = loss / len(batch)
            if config.clip_norm is not None:
                clip_gradients(grads, config.clip_norm)
            adamw_step(params, grads, state, config, update_names)
            report.total_steps += 1
            step_losses.append(loss / len(batch))
        if report.diverged:
            break

        report.epochs_run = epoch
        mean_loss = float(np.mean(step_losses))
        report.epoch_losses.append(mean_loss)
        accuracy = {
            sc: evaluate_accuracy(params, model_config, holdout_sets[sc], use_prefix)
            for sc in active
            if holdout_sets[sc]
        }
        report.holdout_accuracy.append(accuracy)
        print(
            json.dumps(
                {
                    "epoch": epoch,
                    "mean_loss": mean_loss,
                    "holdout_accuracy": accuracy,
                    "seconds": round(time.monotonic() - started, 3),
                },
                sort_keys=True,
            ),
            file=log,
            flush=True,
        )
        if accuracy:
            mean_accuracy = float(np.mean(list(accuracy.values())))
            if mean_accuracy > best_mean_accuracy:
                best_mean_accuracy = mean_accuracy
                best_params = {name: arr.copy() for name, arr in params.items()}
                report.best_epoch = epoch
            if config.target_accuracy is not None and min(accuracy.values()) >= config.target_accuracy:
                break

    if best_params is not None:
        params = best_params
    report.wall_clock_seconds = round(time.monotonic() - started, 3)
    if checkpoint_path is not None and not report.diverged:
        save_checkpoint(params, model_config, checkpoint_path)
        report.checkpoint_path = str(checkpoint_path)
    return params, report


def tiny_config(vocab_size: int = 48, init_seed: int = 12) -> ModelConfig:
    """Smallest config the gradient check runs on."""
    return ModelConfig(
        vocab_size=vocab_size,
        hidden_dim=16,
        n_layers=1,
        n_heads=2,
        ffn_dim=32,
        prefix_len=4,
        max_len=48,
        init_seed=init_seed,
    )


def grad_check(
    config: ModelConfig | None = None, n_coords: int = 200, seed: int = 12
) -> float:
    """Worst relative error between the analytic gradient and a central
    finite difference (h=1e-5) over randomly sampled coordinates, on one
    small batch per scenario."""
    if config is None:
        config = tiny_config()
    rng = np.random.default_rng(seed)
    params = init_parameters(config)

    batches = []
    for scenario in SCENARIOS:
        batch = []
        for j in range(2):
            def draw(k):
                return tuple(int(v) for v in rng.integers(4, config.vocab_size, size=k))
            batch.append(
                ScenarioExample(
                    scenario,
                    j % 2,
                    draw(6),
                    reference=draw(5) if scenario in ("SR", "SDR") else None,
                    document=draw(8) if scenario in ("SD", "SDR") else None,
                )
            )
        batches.append(batch)

    total_grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    for batch in batches:
        _, grads = backward(params, config, batch)
        for name in total_grads:
            total_grads[name] += grads[name]

    def loss_at(p):
        out = 0.0
        for batch in batches:
            layouts = [example_layout(ex, config) for ex in batch]
            cache = forward_batch(p, config, layouts)
            out += cross_entropy_loss(cache.probs[:, 1], [ex.label for ex in batch])
        return out

    h = 1.0e-5
    names = param_names(config)
    worst = 0.0
    for _ in range(n_coords):
        name = names[int(rng.integers(len(names)))]
        idx = int(rng.integers(params[name].size))
        flat = params[name].reshape(-1)
        saved = flat[idx]
        flat[idx] = saved + h
        up = loss_at(params)
        flat[idx] = saved - h
        down = loss_at(params)
        flat[idx] = saved
        g_fd = (up - down) / (2.0 * h)
        g_ad = float(total_grads[name].reshape(-1)[idx])
        err = abs(g_ad - g_fd) / max(abs(g_ad), abs(g_fd), 1.0e-8)
        worst = max(worst, err)
    return worst
