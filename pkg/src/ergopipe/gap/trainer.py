"""Adversarial obfuscator training at desk scale.

The obfuscator O is trained to keep a frozen keypoint regressor T accurate on
its output while a deobfuscator D tries to reconstruct the input from it:

    L_deobf = mean((X - D(O(X)))**2)
    L_obf   = L_pose(T(O(X))) - alpha * L_deobf

``L_pose`` is keypoint mean-squared error here; a full detector loss would sit
in the same place.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import ErgoError, ImageBuffer
from ..metrics import ssim
from . import autodiff as ad
from .autodiff import Tensor
from .data import N_STICK, SyntheticScene, to_batch
from .nets import ConvAutoencoder, Model, TaskNet
from .optim import AdamW, AdamWConfig, step_lr

log = logging.getLogger(__name__)


class FailedToConverge(ErgoError, RuntimeError):
    pass


class NonFiniteLoss(ErgoError, FloatingPointError):
    pass


@dataclass
class GapConfig:
    alpha: float = 1.0
    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_period: int = 10
    epochs: int = 20
    batch: int = 8
    seed: int = 0
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    # task network / fresh adversary budgets
    task_epochs: int = 30
    task_target_rmse: float = 0.05
    task_fail_rmse: float = 0.15
    adversary_epochs: int = 10

    @classmethod
    def from_dict(cls, d: dict) -> "GapConfig":
        d = dict(d)
        adamw = AdamWConfig(**d.pop("adamw", {}))
        return cls(adamw=adamw, **d)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    l_obf: float
    l_pose: float
    l_deobf: float


@dataclass
class PrivacyUtilityReport:
    task_rmse: float
    clean_rmse: float
    adversary_mse: float
    adversary_psnr: float
    ssim: float


def deobf_loss(X, recon) -> tuple[float, np.ndarray]:
    """Reconstruction loss and its gradient with respect to ``recon``."""
    r = Tensor(recon, requires_grad=True)
    loss = ad.mse(r, Tensor(X))
    loss.backward()
    return loss.item(), r.grad


def pose_task_loss(pred_kp, gt_kp) -> tuple[float, np.ndarray]:
    """Keypoint MSE over all 2*K coordinates and its gradient with respect to ``pred_kp``."""
    p = Tensor(pred_kp, requires_grad=True)
    loss = ad.mse(p, Tensor(gt_kp))
    loss.backward()
    return loss.item(), p.grad


def obf_terms(X: np.ndarray, gt_kp: np.ndarray, O: Model, D: Model, T: Model,
              alpha: float) -> tuple[Tensor, Tensor, Tensor]:
    """Build the obfuscator objective. Returns ``(L_obf, L_pose term, L_deobf term)``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    x = Tensor(X)
    ox = O(x)
    l_pose = ad.mse(T(ox), Tensor(gt_kp))
    l_deobf = ad.mse(x, D(ox))
    return l_pose - alpha * l_deobf, l_pose, l_deobf


def obf_loss(X, gt_kp, O: Model, D: Model, T: Model, alpha: float) -> tuple[float, list[np.ndarray]]:
    """Value of the obfuscator loss and its gradients with respect to O's parameters.

    D and T must be frozen; their parameters receive no gradient.
    """
    if any(p.requires_grad for p in D.params + T.params):
        raise ValueError("deobfuscator and task network must be frozen")
    O.zero_grad()
    loss, _, _ = obf_terms(X, gt_kp, O, D, T, alpha)
    loss.backward()
    return loss.item(), [p.grad if p.grad is not None else np.zeros_like(p.data) for p in O.params]


def rmse(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - gt) ** 2)))


def predict(model: Model, X: np.ndarray, chunk: int = 256) -> np.ndarray:
    return np.concatenate([model(Tensor(X[i:i + chunk])).data for i in range(0, len(X), chunk)])


def _batches(n: int, batch: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch):
        yield order[i:i + batch]


def _check(value: float, what: str):
    if not math.isfinite(value):
        raise NonFiniteLoss(f"{what} became non-finite")


def train_task_network(dataset: Sequence[SyntheticScene], config: GapConfig = GapConfig(),
                       val_fraction: float = 0.1) -> tuple[TaskNet, float]:
    """Fit the frozen keypoint regressor that stands in for the pose detector.

    Stops once the validation RMSE drops below ``config.task_target_rmse`` or
    after ``config.task_epochs``. Returns the frozen network and the final
    validation RMSE.
    """
    if not dataset:
        raise ValueError("cannot train a task network on an empty dataset")
    X, Y = to_batch(dataset)
    n_val = max(1, int(round(len(X) * val_fraction))) if len(X) > 1 else 0
    Xtr, Ytr = X[: len(X) - n_val], Y[: len(X) - n_val]
    Xva, Yva = (X[len(X) - n_val:], Y[len(X) - n_val:]) if n_val else (X, Y)
    T = TaskNet(Y.shape[1] // 2, X.shape[-1], seed=config.seed)
    opt = AdamW(T.params, config.lr, config.adamw)
    rng = np.random.default_rng(config.seed)
    err = rmse(predict(T, Xva), Yva)
    for epoch in range(config.task_epochs):
        opt.lr = step_lr(config.lr, epoch, config.lr_decay, max(config.lr_period, config.task_epochs // 2))
        for idx in _batches(len(Xtr), config.batch, rng):
            T.zero_grad()
            loss = ad.mse(T(Tensor(Xtr[idx])), Tensor(Ytr[idx]))
            _check(loss.item(), "task loss")
            loss.backward()
            opt.step()
        err = rmse(predict(T, Xva), Yva)
        log.info("task epoch %d: val rmse %.4f", epoch, err)
        if err < config.task_target_rmse:
            break
    if err >= config.task_fail_rmse:
        raise FailedToConverge(f"task network validation RMSE {err:.4f} after {config.task_epochs} epochs")
    T.freeze()
    return T, err


def train_adversarial(dataset: Sequence[SyntheticScene], T: Model, config: GapConfig = GapConfig(),
                      on_epoch: Optional[Callable[[EpochLog], None]] = None
                      ) -> tuple[ConvAutoencoder, list[EpochLog]]:
    """Alternate deobfuscator and obfuscator updates on every batch.

    Returns the trained obfuscator and one log row per epoch; the deobfuscator
    is discarded.
    """
    if any(p.requires_grad for p in T.params):
        raise ValueError("task network must be frozen")
    X, Y = to_batch(dataset)
    O = ConvAutoencoder(seed=config.seed)
    D = ConvAutoencoder(seed=config.seed + 1)
    opt_o = AdamW(O.params, config.lr, config.adamw)
    opt_d = AdamW(D.params, config.lr, config.adamw)
    rng = np.random.default_rng(config.seed)
    logs = []
    for epoch in range(config.epochs):
        lr = step_lr(config.lr, epoch, config.lr_decay, config.lr_period)
        opt_o.lr = opt_d.lr = lr
        sums = np.zeros(3)
        n_seen = 0
        for idx in _batches(len(X), config.batch, rng):
            xb, yb = X[idx], Y[idx]
            # deobfuscator step, obfuscator frozen
            O.freeze()
            D.unfreeze()
            ox = O(Tensor(xb))
            l_d = ad.mse(Tensor(xb), D(ox))
            _check(l_d.item(), "deobfuscator loss")
            l_d.backward()
            opt_d.step()
            # obfuscator step, deobfuscator frozen
            D.freeze()
            O.unfreeze()
            l_obf, l_pose, l_deobf = obf_terms(xb, yb, O, D, T, config.alpha)
            _check(l_obf.item(), "obfuscator loss")
            l_obf.backward()
            opt_o.step()
            O.zero_grad()
            sums += len(idx) * np.array([l_obf.item(), l_pose.item(), l_deobf.item()])
            n_seen += len(idx)
        row = EpochLog(epoch, lr, *(sums / n_seen))
        log.info("gap epoch %d lr %.1e: L_obf %.5f L_pose %.5f L_deobf %.5f",
                 epoch, lr, row.l_obf, row.l_pose, row.l_deobf)
        logs.append(row)
        if on_epoch is not None:
            on_epoch(row)
    O.freeze()
    return O, logs


def train_fresh_adversary(obf: np.ndarray, X: np.ndarray, config: GapConfig = GapConfig()) -> ConvAutoencoder:
    """Fit a new deobfuscator on (O(X), X) pairs."""
    D = ConvAutoencoder(seed=config.seed + 7)
    opt = AdamW(D.params, config.lr, config.adamw)
    rng = np.random.default_rng(config.seed + 7)
    for epoch in range(config.adversary_epochs):
        opt.lr = step_lr(config.lr, epoch, config.lr_decay, max(1, config.adversary_epochs // 2))
        for idx in _batches(len(X), config.batch, rng):
            D.zero_grad()
            loss = ad.mse(Tensor(X[idx]), D(Tensor(obf[idx])))
            _check(loss.item(), "adversary loss")
            loss.backward()
            opt.step()
    D.freeze()
    return D


def evaluate_privacy_utility(O: Model, dataset: Sequence[SyntheticScene], T: Model,
                             config: GapConfig = GapConfig()) -> PrivacyUtilityReport:
    """Utility and privacy of an obfuscator on held-out scenes.

    Half of the scenes train a fresh adversary, the other half score it.
    """
    X, Y = to_batch(dataset)
    OX = predict(O, X)
    half = len(X) // 2
    D = train_fresh_adversary(OX[:half], X[:half], config)
    recon = predict(D, OX[half:])
    adv_mse = float(np.mean((recon - X[half:]) ** 2))
    adv_psnr = math.inf if adv_mse == 0 else 10 * math.log10(1.0 / adv_mse)
    to_u8 = lambda a: ImageBuffer(np.floor(np.clip(a, 0, 1) * 255 + 0.5).astype(np.uint8))
    s = float(np.mean([ssim(to_u8(x[0]), to_u8(o[0])) for x, o in zip(X, OX)]))
    return PrivacyUtilityReport(
        task_rmse=rmse(predict(T, OX), Y),
        clean_rmse=rmse(predict(T, X), Y),
        adversary_mse=adv_mse,
        adversary_psnr=adv_psnr,
        ssim=s,
    )


def gradient_check(params: Sequence[Tensor], loss_fn: Callable[[], Tensor], eps: float = 1e-5,
                   n_samples: int = 200, seed: int = 0, stats: Optional[dict] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` rebuilds the graph from the current parameter values. Up to
    ``n_samples`` scalar parameters are checked; the relative error uses
    ``|a - n| / max(|a| + |n|, 1e-8)``.

    When the +eps and -eps passes take different pieces of a leaky ReLU or
    clamp the step straddles a kink and the difference is not a derivative.
    The step is then shrunk tenfold (down to ``eps * 1e-3``) until both
    passes agree; samples that never agree are left out of the maximum.
    ``stats`` (if given) receives the counts of refined and unresolved
    samples and the error of the plain fixed-eps check.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat_idx = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def central(flat, j, h):
        orig = flat[j]
        flat[j] = orig + h
        with ad.record_branches() as br_up:
            up = loss_fn().item()
        flat[j] = orig - h
        with ad.record_branches() as br_down:
            down = loss_fn().item()
        flat[j] = orig
        smooth = all(np.array_equal(u, d) for u, d in zip(br_up, br_down))
        return (up - down) / (2 * h), smooth

    rel = lambda a, n: abs(a - n) / max(abs(a) + abs(n), 1e-8)
    worst = worst_plain = 0.0
    refined = unresolved = 0
    for fi in np.sort(flat_idx):
        pi = int(np.searchsorted(offsets, fi, side="right") - 1)
        flat, j = params[pi].data.reshape(-1), int(fi - offsets[pi])
        a = analytic[pi].reshape(-1)[j]
        num, smooth = central(flat, j, eps)
        worst_plain = max(worst_plain, rel(a, num))
        h = eps
        while not smooth and h > eps * 1e-3 * 1.5:
            h /= 10
            num, smooth = central(flat, j, h)
        if smooth:
            refined += h != eps
            worst = max(worst, rel(a, num))
        else:
            unresolved += 1
    if stats is not None:
        stats.update(checked=len(flat_idx), refined=refined, unresolved=unresolved, max_rel_error_plain=worst_plain)
    return worst
