"""RMSProp training with early stopping, and evaluation."""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ctc import ctc_loss_batch, min_frames
from .errors import CharsetMismatchError, ConfigError, InfeasibleLabelError, NumericError
from .metrics import evaluate_pairs, write_report
from .model import HTRModel, trainable, update_running_stats
from .pipeline.image import resize_with_padding, to_input

log = logging.getLogger(__name__)

LOG_HEADER = "epoch\ttrain_loss\tval_loss\tseconds"


@dataclass
class RMSProp:
    """``acc <- rho*acc + (1-rho)*g^2``; ``w <- w - lr*g / (sqrt(acc) + eps)``."""

    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-8
    acc: dict = field(default_factory=dict)
    steps: int = 0

    def step(self, params, grads):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name} at optimizer step {self.steps + 1}")
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ConfigError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            acc = self.acc.get(name)
            if acc is None:
                acc = self.acc[name] = np.zeros_like(p)
            acc *= self.rho
            acc += (1.0 - self.rho) * g * g
            p -= self.learning_rate * g / (np.sqrt(acc) + self.epsilon)
        self.steps += 1

    def state(self):
        out = {f"opt.acc.{k}": v for k, v in self.acc.items()}
        out["opt.steps"] = np.array([float(self.steps)])
        return out

    def load_state(self, tensors, dtype):
        self.acc = {k[len("opt.acc."):]: v.astype(dtype) for k, v in tensors.items() if k.startswith("opt.acc.")}
        self.steps = int(tensors.get("opt.steps", np.zeros(1))[0])


def rmsprop_step(params, grads, state):
    state.step(params, grads)
    return params, state


@dataclass
class EarlyStopping:
    patience: int = 20
    best_val_loss: float = float("inf")
    best_epoch: int = 0
    epochs_since_improvement: int = 0

    def update(self, epoch, val_loss):
        """Record one epoch; returns True when it is a new best."""
        if val_loss < self.best_val_loss:
            self.best_val_loss = val_loss
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
            return True
        self.epochs_since_improvement += 1
        return False

    @property
    def should_stop(self):
        return self.epochs_since_improvement >= self.patience


@dataclass
class TrainLog:
    seed: int
    rows: list = field(default_factory=list)    # (epoch, train_loss, val_loss, seconds)

    def append(self, epoch, train_loss, val_loss, seconds):
        if self.rows and epoch <= self.rows[-1][0]:
            raise ConfigError(f"epoch {epoch} does not follow {self.rows[-1][0]}")
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NumericError(f"epoch {epoch}: non-finite loss")
        self.rows.append((epoch, float(train_loss), float(val_loss), float(seconds)))

    def losses(self):
        """Rows without wall time: the part that is reproducible."""
        return [r[:3] for r in self.rows]

    def dumps(self):
        lines = [f"# seed={self.seed}", LOG_HEADER]
        lines += [f"{e}\t{t!r}\t{v!r}\t{s:.3f}" for e, t, v, s in self.rows]
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        seed, rows = 0, []
        with open(path, encoding="utf-8") as fh:
            for line in fh.read().splitlines():
                if line.startswith("# seed="):
                    seed = int(line[len("# seed="):])
                elif line and line != LOG_HEADER:
                    e, t, v, s = line.split("\t")
                    rows.append((int(e), float(t), float(v), float(s)))
        return cls(seed, rows)


@dataclass
class TrainResult:
    model: HTRModel
    log: TrainLog
    best_epoch: int
    best_val_loss: float
    checkpoint: Path = None
    stopped_early: bool = False


def bundle_arrays(bundle, cfg, dtype=np.float64):
    """Stack a bundle's images into an N x 1 x H x W array; also return labels."""
    target = (cfg.input_width, cfg.input_height)
    imgs = np.empty((len(bundle), 1, cfg.input_height, cfg.input_width), dtype=dtype)
    for i, s in enumerate(bundle.samples):
        img = s.image
        if img.shape != (cfg.input_height, cfg.input_width):
            img = resize_with_padding(img, target)
        imgs[i] = to_input(img, cfg.invert)
    return imgs, [list(s.label) for s in bundle.samples]


def _check_labels(labels, t_len, cfg, where):
    for i, lab in enumerate(labels):
        if len(lab) > cfg.max_label_len:
            raise InfeasibleLabelError(f"{where} sample {i}: label longer than max_label_len={cfg.max_label_len}")
        if min_frames(lab) > t_len:
            raise InfeasibleLabelError(f"{where} sample {i}: label needs {min_frames(lab)} frames, model has {t_len}")


def clip_gradients(grads, max_norm):
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def batch_loss_and_grads(model, images, labels, rng=None, mode="train"):
    """Mean CTC loss over the batch and parameter gradients."""
    logits, cache = model.forward(images, mode, rng)
    losses, dlogits = ctc_loss_batch(logits.astype(np.float64), labels)
    grads = model.backward(cache, dlogits / len(labels))
    return float(losses.mean()), grads, cache


def validation_loss(model, images, labels, batch_size=64):
    total = 0.0
    for s in range(0, len(labels), batch_size):
        logits, _ = model.forward(images[s:s + batch_size])
        losses, _ = ctc_loss_batch(logits.astype(np.float64), labels[s:s + batch_size])
        total += float(losses.sum())
    return total / len(labels)


def train(cfg, train_bundle, valid_bundle, out_dir=None, resume=None, on_epoch=None):
    """Train until early stopping or ``cfg.max_epochs``.

    Writes ``best.htrf`` (best validation loss), ``last.htrf`` (resumable
    state) and ``train_log.tsv`` to ``out_dir`` when given.  ``resume`` is a
    ``last.htrf`` path; epoch numbering continues from it.
    """
    if len(train_bundle) == 0 or len(valid_bundle) == 0:
        raise ConfigError("training and validation bundles must be non-empty")
    if train_bundle.manifest["charset_hash"] != valid_bundle.manifest["charset_hash"]:
        raise CharsetMismatchError("training and validation bundles use different charsets")
    charset = train_bundle.charset
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    opt = RMSProp(cfg.learning_rate, cfg.rho, cfg.epsilon)
    stopper = EarlyStopping(cfg.patience)
    trainlog = TrainLog(cfg.seed)
    start_epoch = 1
    if resume is not None:
        model, extra = HTRModel.load(resume)
        if model.charset != charset:
            raise CharsetMismatchError("resume checkpoint and bundles use different charsets")
        model = HTRModel(cfg, charset, model.params)
        opt.load_state(extra, model.dtype)
        start_epoch = int(extra["train.epoch"][0]) + 1
        stopper.best_val_loss = float(extra["train.best_val_loss"][0])
        stopper.best_epoch = int(extra["train.best_epoch"][0])
        stopper.epochs_since_improvement = int(extra["train.since_best"][0])
        if out_dir is not None and (out_dir / "train_log.tsv").exists():
            trainlog = TrainLog.load(out_dir / "train_log.tsv")
            trainlog.rows = [r for r in trainlog.rows if r[0] < start_epoch]
    else:
        model = HTRModel(cfg, charset, rng=np.random.default_rng(cfg.seed))

    best_params = {k: v.copy() for k, v in model.params.items()}
    if resume is not None and out_dir is not None and (out_dir / "best.htrf").exists():
        best_params = HTRModel.load(out_dir / "best.htrf")[0].params

    x_train, y_train = bundle_arrays(train_bundle, cfg, model.dtype)
    x_valid, y_valid = bundle_arrays(valid_bundle, cfg, model.dtype)
    _check_labels(y_train, model.seq_len, cfg, "train")
    _check_labels(y_valid, model.seq_len, cfg, "valid")
    n = len(y_train)
    epoch = start_epoch - 1

    def extra_state(ep):
        out = opt.state()
        out["train.epoch"] = np.array([float(ep)])
        out["train.best_val_loss"] = np.array([stopper.best_val_loss])
        out["train.best_epoch"] = np.array([float(stopper.best_epoch)])
        out["train.since_best"] = np.array([float(stopper.epochs_since_improvement)])
        return out

    for epoch in range(start_epoch, cfg.max_epochs + 1):
        if stopper.should_stop:
            break
        t0 = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            labels = [y_train[i] for i in idx]
            loss, grads, cache = batch_loss_and_grads(model, x_train[idx], labels, rng)
            if not np.isfinite(loss):
                raise NumericError(f"epoch {epoch}: non-finite training loss")
            clip_gradients(grads, cfg.clip_norm)
            opt.step(model.params, grads)
            update_running_stats(model.params, cfg, cache)
            total += loss * len(idx)
        train_loss = total / n
        val_loss = validation_loss(model, x_valid, y_valid)
        if not np.isfinite(val_loss):
            raise NumericError(f"epoch {epoch}: non-finite validation loss")
        improved = stopper.update(epoch, val_loss)
        trainlog.append(epoch, train_loss, val_loss, time.perf_counter() - t0)
        if improved:
            best_params = {k: v.copy() for k, v in model.params.items()}
            if out_dir is not None:
                HTRModel(cfg, charset, best_params).save(out_dir / "best.htrf", {
                    "train.epoch": np.array([float(epoch)]),
                    "train.val_loss": np.array([val_loss])})
        if out_dir is not None:
            model.save(out_dir / "last.htrf", extra_state(epoch))
            trainlog.save(out_dir / "train_log.tsv")
        log.info("epoch %d train %.4f valid %.4f%s", epoch, train_loss, val_loss, " *" if improved else "")
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss, improved)

    best = HTRModel(cfg, charset, best_params)
    return TrainResult(best, trainlog, stopper.best_epoch, stopper.best_val_loss,
                       out_dir / "best.htrf" if out_dir is not None else None, stopper.should_stop)


def evaluate(model, bundle, beam_width=None, report_path=None):
    """Transcribe every sample of ``bundle`` and score it against its label."""
    if model.charset.hash != bundle.manifest["charset_hash"]:
        raise CharsetMismatchError(
            f"checkpoint charset {model.charset.hash} differs from bundle charset {bundle.manifest['charset_hash']}")
    images, labels = bundle_arrays(bundle, model.cfg, model.dtype)
    hyps = model.transcribe(images, beam_width)
    refs = [model.charset.decode(lab) for lab in labels]
    report = evaluate_pairs(zip(refs, hyps), [s.id for s in bundle.samples])
    if report_path is not None:
        write_report(report, report_path)
    return report
