"""Joint post-training and task fine-tuning loops.

One post-training step consumes one batch per knowledge type (domain and
MRC), splits each into ``u`` sub-batches, accumulates gradients of the
scaled partial losses, and applies a single Adam update.  The partial-loss
scaling is chosen so the accumulated gradient is EXACTLY the gradient of
the whole-batch joint loss, for every ``u`` that divides the batch: the
per-example terms (pair detection, span pointers) are divided by ``u``,
while the masked-token term is summed against the full batch's masked
count, which keeps its mean well-defined even though sub-batches carry
different numbers of masked positions.

Fine-tuning runs epoch passes with per-epoch validation and returns the
best-epoch parameters by the task's major metric.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as M
from .autograd import Tensor, add, cross_entropy, mul, no_grad, reshape
from .checkpoint import Checkpoint, save_checkpoint
from .data import AscExample, BioExample, DkExample, MrcExample, POLARITIES, gold_chunks, span_valid_mask
from .decoding import decode_bio, decode_span, predict_polarity
from .metrics import EvalReport, ae_report, asc_report, squad_eval
from .model import ModelConfig, ModelParameters
from .optim import AdamState, adam_step, clip_grad_norm
from .tokenizer import Vocabulary


class NumericError(Exception):
    """A loss or gradient went non-finite."""


@dataclass
class PostTrainConfig:
    total_steps: int
    max_len: int = 320
    batch_per_knowledge: int = 16
    sub_batches: int = 2
    learning_rate: float = 3e-5
    seed: int = 0
    warmup_steps: int = 0
    clip_norm: float = 0.0
    checkpoint_every: int = 0
    loss_scale: float = 2.0  # kept for config fidelity; inert at full precision

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.batch_per_knowledge % self.sub_batches != 0:
            raise ValueError(
                f"batch_per_knowledge {self.batch_per_knowledge} not divisible by "
                f"sub_batches {self.sub_batches}"
            )


@dataclass
class FineTuneConfig:
    task: str
    max_epochs: int = 4
    learning_rate: float = 3e-5
    seed: int = 0
    batch_size: int = 16
    selection_metric: str = ""
    clip_norm: float = 0.0
    stop_at: float | None = None  # early exit once the metric reaches this

    def __post_init__(self):
        if self.task not in ("rrc", "ae", "asc"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.selection_metric:
            self.selection_metric = {"rrc": "f1", "ae": "f1", "asc": "macro_f1"}[self.task]


def _stack(packs):
    ids = np.stack([p.ids for p in packs])
    segs = np.stack([p.segments for p in packs])
    mask = np.stack([p.pad_mask for p in packs])
    return ids, segs, mask


# -- losses -----------------------------------------------------------------


def _dk_parts(
    params: ModelParameters,
    batch: list[DkExample],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    mlm_denom: float | None = None,
) -> tuple[Tensor | None, Tensor, int]:
    """(masked-token loss or None, pair loss, masked count) for one batch."""
    config = params.config
    ids, segs, mask = _stack([ex.packed for ex in batch])
    hidden = M.encode_batch(params, config, ids, segs, mask, train_mode=train_mode, rng=rng)
    length = ids.shape[1]
    flat_pos: list[int] = []
    flat_orig: list[int] = []
    for b, ex in enumerate(batch):
        for p, orig in ex.mlm_targets:
            flat_pos.append(b * length + p)
            flat_orig.append(orig)
    mlm = None
    if flat_pos:
        probs = M.mlm_probs_flat(params, hidden, np.array(flat_pos))
        mlm = cross_entropy(probs, np.array(flat_orig), denom=mlm_denom)
    pair = cross_entropy(
        M.pair_probs_batch(params, hidden),
        np.array([ex.pair_label for ex in batch]),
    )
    return mlm, pair, len(flat_pos)


def dk_loss(
    params: ModelParameters,
    batch: list[DkExample],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Masked-token mean cross-entropy plus pair-detection cross-entropy.

    A batch with zero masked positions contributes the pair term only.
    """
    if not batch:
        raise ValueError("empty batch")
    mlm, pair, _ = _dk_parts(params, batch, train_mode=train_mode, rng=rng)
    return pair if mlm is None else add(mlm, pair)


def mrc_loss(
    params: ModelParameters,
    batch: list[MrcExample],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Averaged cross-entropy on the two pointers, question side masked out."""
    if not batch:
        raise ValueError("empty batch")
    for ex in batch:
        if ex.packed is None or ex.start_token < 0:
            raise ValueError(f"example {ex.id} is not encoded")
    config = params.config
    ids, segs, mask = _stack([ex.packed for ex in batch])
    hidden = M.encode_batch(params, config, ids, segs, mask, train_mode=train_mode, rng=rng)
    valid = np.stack([span_valid_mask(ex.packed) for ex in batch])
    l1, l2 = M.span_probs_batch(params, hidden, valid)
    starts = np.array([ex.start_token for ex in batch])
    ends = np.array([ex.end_token for ex in batch])
    return mul(add(cross_entropy(l1, starts), cross_entropy(l2, ends)), 0.5)


def tag_loss(
    params: ModelParameters,
    batch: list[BioExample],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean cross-entropy over labeled (word-initial) positions."""
    if not batch:
        raise ValueError("empty batch")
    config = params.config
    ids, segs, mask = _stack([ex.packed for ex in batch])
    hidden = M.encode_batch(params, config, ids, segs, mask, train_mode=train_mode, rng=rng)
    probs = M.tag_probs_batch(params, hidden)  # [B, L, 3]
    b, length = ids.shape
    flat = reshape(probs, (b * length, 3))
    targets = np.concatenate([ex.token_labels for ex in batch])
    row_mask = np.concatenate([ex.label_mask for ex in batch])
    return cross_entropy(flat, targets, row_mask=row_mask)


def asc_loss(
    params: ModelParameters,
    batch: list[AscExample],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    if not batch:
        raise ValueError("empty batch")
    config = params.config
    ids, segs, mask = _stack([ex.packed for ex in batch])
    hidden = M.encode_batch(params, config, ids, segs, mask, train_mode=train_mode, rng=rng)
    probs = M.class_probs_batch(params, hidden)
    return cross_entropy(probs, np.array([ex.label for ex in batch]))


# -- post-training ------------------------------------------------------------


def posttrain_step(
    params: ModelParameters,
    adam: AdamState,
    dk_batch: list[DkExample],
    mrc_batch: list[MrcExample],
    u: int,
    train_mode: bool = True,
    rng: np.random.Generator | None = None,
    clip_norm: float = 0.0,
    lr_scale: float = 1.0,
) -> dict:
    """One accumulate-then-update step over paired DK/MRC batches."""
    b = len(dk_batch)
    if len(mrc_batch) != b:
        raise ValueError(f"batch size mismatch: {b} DK vs {len(mrc_batch)} MRC")
    if b % u != 0:
        raise ValueError(f"sub-batch count u={u} does not divide batch size {b}")
    params.zero_grads()
    m_total = sum(len(ex.mlm_targets) for ex in dk_batch)
    sub = b // u
    inv_u = 1.0 / u
    l_mlm = l_nsp = l_mrc = 0.0
    for i in range(u):
        dk_i = dk_batch[i * sub : (i + 1) * sub]
        mrc_i = mrc_batch[i * sub : (i + 1) * sub]
        mlm_i, nsp_i, _ = _dk_parts(
            params, dk_i, train_mode=train_mode, rng=rng, mlm_denom=m_total or None
        )
        mrc_i_loss = mrc_loss(params, mrc_i, train_mode=train_mode, rng=rng)
        partial = mul(add(nsp_i, mrc_i_loss), inv_u)
        if mlm_i is not None:
            partial = add(partial, mlm_i)
        value = partial.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite partial loss {value}")
        partial.backward()
        if mlm_i is not None:
            l_mlm += mlm_i.item()
        l_nsp += nsp_i.item() * inv_u
        l_mrc += mrc_i_loss.item() * inv_u
    if clip_norm > 0:
        clip_grad_norm(params.tensors, clip_norm)
    adam_step(adam, params.tensors, lr_scale=lr_scale)
    return {
        "l_dk": l_mlm + l_nsp,
        "l_mlm": l_mlm,
        "l_nsp": l_nsp,
        "l_mrc": l_mrc,
        "mlm_omitted": m_total == 0,
    }


def posttrain_run(
    config: PostTrainConfig,
    model_config: ModelConfig,
    vocab: Vocabulary,
    dk_examples: list[DkExample],
    mrc_examples: list[MrcExample],
    out_dir,
    init: Checkpoint | None = None,
    dtype=np.float32,
) -> Checkpoint:
    """Run ``total_steps`` joint steps, cycling both streams; returns the
    final checkpoint (also written to ``out_dir``)."""
    if not dk_examples or not mrc_examples:
        raise ValueError("both example streams must be nonempty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = vocab.digest()
    if init is not None:
        if init.vocab_digest != digest:
            raise ValueError("init checkpoint was built with a different vocabulary")
        params = init.restore()
        start_step = init.step
    else:
        params = M.init_parameters(model_config, seed=config.seed, dtype=dtype)
        start_step = 0
    adam = AdamState(params.tensors, learning_rate=config.learning_rate)
    order_rng = np.random.default_rng([config.seed, 17])
    dk_order = list(order_rng.permutation(len(dk_examples)))
    mrc_order = list(order_rng.permutation(len(mrc_examples)))
    drop_rng = np.random.default_rng([config.seed, 29])
    bpk = config.batch_per_knowledge

    def cycle(order, pool, cursor):
        batch = []
        while len(batch) < bpk:
            if cursor >= len(order):
                cursor = 0  # restart the stream from its beginning
            batch.append(pool[order[cursor]])
            cursor += 1
        return batch, cursor

    dk_cursor = mrc_cursor = 0
    log_path = out_dir / "posttrain_log.jsonl"
    final_step = start_step
    with open(log_path, "a", encoding="utf-8") as log:
        for step in range(start_step + 1, start_step + config.total_steps + 1):
            t0 = time.perf_counter()
            dk_batch, dk_cursor = cycle(dk_order, dk_examples, dk_cursor)
            mrc_batch, mrc_cursor = cycle(mrc_order, mrc_examples, mrc_cursor)
            lr_scale = min(1.0, step / config.warmup_steps) if config.warmup_steps > 0 else 1.0
            report = posttrain_step(
                params,
                adam,
                dk_batch,
                mrc_batch,
                config.sub_batches,
                train_mode=True,
                rng=drop_rng,
                clip_norm=config.clip_norm,
                lr_scale=lr_scale,
            )
            final_step = step
            log.write(
                json.dumps(
                    {
                        "step": step,
                        "l_dk": report["l_dk"],
                        "l_mlm": report["l_mlm"],
                        "l_nsp": report["l_nsp"],
                        "l_mrc": report["l_mrc"],
                        "lr": config.learning_rate * lr_scale,
                        "seconds": time.perf_counter() - t0,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            if config.checkpoint_every > 0 and step % config.checkpoint_every == 0:
                save_checkpoint(out_dir / f"step{step}.ckpt", params, digest, step, config.seed)
    save_checkpoint(out_dir / "final.ckpt", params, digest, final_step, config.seed)
    return Checkpoint(
        config=model_config,
        seed=config.seed,
        step=final_step,
        vocab_digest=digest,
        blobs=params.copy_data(),
    )


# -- task prediction and evaluation -------------------------------------------


def predict_rrc(params: ModelParameters, examples: list[MrcExample]) -> dict[str, str]:
    preds: dict[str, str] = {}
    with no_grad():
        for ex in examples:
            out = M.forward(params, params.config, ex.packed)
            l1, l2 = M.span_logits(params, out, span_valid_mask(ex.packed))
            preds[ex.id] = decode_span(l1, l2, ex.packed).text
    return preds


def predict_ae(params: ModelParameters, examples: list[BioExample]) -> list[list[tuple[int, int]]]:
    chunks = []
    with no_grad():
        for ex in examples:
            out = M.forward(params, params.config, ex.packed)
            chunks.append(decode_bio(M.tag_logits(params, out), ex.packed))
    return chunks


def predict_asc(params: ModelParameters, examples: list[AscExample]) -> list[str]:
    preds = []
    with no_grad():
        for ex in examples:
            out = M.forward(params, params.config, ex.packed)
            preds.append(predict_polarity(M.class_logits(params, out)))
    return preds


def evaluate_task(params: ModelParameters, task: str, examples) -> EvalReport:
    if task == "rrc":
        preds = predict_rrc(params, examples)
        return squad_eval(preds, [(ex.id, ex.golds) for ex in examples])
    if task == "ae":
        preds = predict_ae(params, examples)
        return ae_report(preds, [gold_chunks(ex.labels) for ex in examples])
    if task == "asc":
        preds = predict_asc(params, examples)
        return asc_report(preds, [ex.polarity for ex in examples])
    raise ValueError(f"unknown task {task!r}")


_TASK_LOSS = {"rrc": mrc_loss, "ae": tag_loss, "asc": asc_loss}


def finetune(
    config: FineTuneConfig,
    model_config: ModelConfig,
    vocab: Vocabulary,
    train,
    valid,
    init: Checkpoint | None = None,
    dtype=np.float32,
) -> tuple[Checkpoint, dict]:
    """Up to ``max_epochs`` passes; keeps the epoch best on the major metric."""
    train = list(train)
    valid = list(valid)
    if not train or not valid:
        raise ValueError("empty train or valid set")
    digest = vocab.digest()
    if init is not None:
        if init.vocab_digest != digest:
            raise ValueError("init checkpoint was built with a different vocabulary")
        params = init.restore()
    else:
        params = M.init_parameters(model_config, seed=config.seed, dtype=dtype)
    adam = AdamState(params.tensors, learning_rate=config.learning_rate)
    loss_fn = _TASK_LOSS[config.task]
    order_rng = np.random.default_rng([config.seed, 101])
    drop_rng = np.random.default_rng([config.seed, 211])
    best_metric = -1.0
    best_blobs = params.copy_data()
    best_epoch = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = order_rng.permutation(len(train))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(train), config.batch_size):
            batch = [train[i] for i in order[lo : lo + config.batch_size]]
            params.zero_grads()
            loss = loss_fn(params, batch, train_mode=True, rng=drop_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}")
            loss.backward()
            if config.clip_norm > 0:
                clip_grad_norm(params.tensors, config.clip_norm)
            adam_step(adam, params.tensors)
            epoch_loss += value
            n_batches += 1
        report = evaluate_task(params, config.task, valid)
        metric = report.metrics[config.selection_metric]
        history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / max(1, n_batches),
                config.selection_metric: metric,
            }
        )
        if metric > best_metric:
            best_metric = metric
            best_blobs = params.copy_data()
            best_epoch = epoch
        if config.stop_at is not None and metric >= config.stop_at:
            break
    params.load_data(best_blobs)
    ckpt = Checkpoint(
        config=model_config,
        seed=config.seed,
        step=best_epoch,
        vocab_digest=digest,
        blobs=best_blobs,
    )
    return ckpt, {
        "task": config.task,
        "best_epoch": best_epoch,
        "best_" + config.selection_metric: best_metric,
        "epochs": history,
    }


def run_multi_seed(
    config: FineTuneConfig,
    model_config: ModelConfig,
    vocab: Vocabulary,
    train,
    valid,
    seeds,
    init: Checkpoint | None = None,
) -> dict:
    """Fine-tune once per seed and report mean/stdev of the major metric."""
    values = []
    for seed in seeds:
        cfg = replace(config, seed=int(seed))
        _, report = finetune(cfg, model_config, vocab, train, valid, init=init)
        values.append(report["best_" + config.selection_metric])
    arr = np.array(values, dtype=np.float64)
    return {
        "metric": config.selection_metric,
        "seeds": [int(s) for s in seeds],
        "values": values,
        "mean": float(arr.mean()),
        "stdev": float(arr.std(ddof=1)) if len(values) > 1 else 0.0,
    }
