"""Training objectives: Gaussian NLL, maneuver MSE, distillation MSE and two-level KDM weighting."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .layers import Module, param
from .teacher import MultimodalPrediction

LOG_2PI = math.log(2 * math.pi)


class LossError(ValueError):
    pass


def nll_frames(mu: Tensor, sigma: Tensor, rho: Tensor, gt) -> Tensor:
    """Per-frame bivariate Gaussian NLL; ``mu``/``sigma``/``gt`` end in 2, ``rho`` does not."""
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    zx = (gt[..., 0] - mu[..., 0]) / sigma[..., 0]
    zy = (gt[..., 1] - mu[..., 1]) / sigma[..., 1]
    one_m_r2 = 1.0 - rho * rho
    quad = (zx * zx + zy * zy - 2.0 * rho * zx * zy) / one_m_r2
    return LOG_2PI + dc.log(sigma[..., 0]) + dc.log(sigma[..., 1]) + 0.5 * dc.log(one_m_r2) + 0.5 * quad


def nll_bivariate(pred: MultimodalPrediction, gt, maneuver_index) -> Tensor:
    """Sum over future frames of the NLL of ``gt`` under the indexed maneuver's Gaussians.

    Batched predictions take one maneuver index per sample and return the batch mean.
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape[-2] != pred.t_f:
        raise LossError(f"ground truth has {gt.shape[-2]} frames, prediction has {pred.t_f}")
    b = pred.probs.shape[0]
    gt = gt.reshape(b, pred.t_f, 2)
    idx = np.broadcast_to(np.asarray(maneuver_index), (b,))
    rows = np.arange(b)
    per_frame = nll_frames(pred.mu[rows, idx], pred.sigma[rows, idx], pred.rho[rows, idx], gt)
    return per_frame.sum(axis=-1).mean()


def trajectory_loss(pred: MultimodalPrediction, gt, labels, mode: str = "gt") -> Tensor:
    """``gt``: NLL on the ground-truth maneuver channel; ``weighted``: all channels weighted by probability."""
    labels = np.asarray(labels)
    if pred.modes == 1:
        labels = np.zeros_like(labels)
    if mode == "gt":
        return nll_bivariate(pred, gt, labels)
    if mode == "weighted":
        gt = np.asarray(gt, dtype=np.float64)[:, None]
        per_mode = nll_frames(pred.mu, pred.sigma, pred.rho, gt).sum(axis=-1)   # (B, C)
        return (pred.probs * per_mode).sum(axis=-1).mean()
    raise LossError(f"unknown trajectory loss mode {mode!r}")


def one_hot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def maneuver_mse(pred_probs, gt_onehot) -> Tensor:
    pred_probs = dc.as_tensor(pred_probs)
    gt_onehot = np.asarray(gt_onehot, dtype=np.float64)
    if pred_probs.shape[-1] != gt_onehot.shape[-1]:
        raise LossError(f"maneuver vectors differ in length: {pred_probs.shape[-1]} vs {gt_onehot.shape[-1]}")
    diff = pred_probs - gt_onehot
    return (diff * diff).mean()


def maneuver_loss(pred: MultimodalPrediction, labels) -> Tensor:
    labels = np.asarray(labels)
    if pred.modes == 1:
        labels = np.zeros_like(labels)
    return maneuver_mse(pred.probs, one_hot(labels, pred.modes))


def teacher_total(traj, man, st):
    return traj + man + st


def distill_losses(student_pred: MultimodalPrediction, teacher_pred: MultimodalPrediction) -> tuple[Tensor, Tensor]:
    """MSE of trajectory parameters and of maneuver probabilities; the teacher side is constant."""
    if (student_pred.modes, student_pred.t_f) != (teacher_pred.modes, teacher_pred.t_f):
        raise LossError("student and teacher disagree on maneuver count or horizon")
    teacher_params = teacher_pred.params().data
    diff_t = student_pred.params() - teacher_params
    diff_m = student_pred.probs - teacher_pred.probs.data
    return (diff_t * diff_t).mean(), (diff_m * diff_m).mean()


class KdmState(Module):
    """Learnable log-variances; sigma = exp(log_var / 2)."""

    NAMES = ("t", "m", "s", "d")

    def __init__(self, log_var_t=0.0, log_var_m=0.0, log_var_s=0.0, log_var_d=0.0):
        self.log_var_t = param(np.array(float(log_var_t)))
        self.log_var_m = param(np.array(float(log_var_m)))
        self.log_var_s = param(np.array(float(log_var_s)))
        self.log_var_d = param(np.array(float(log_var_d)))

    def sigmas(self) -> dict[str, float]:
        return {n: float(np.exp(getattr(self, f"log_var_{n}").data / 2)) for n in self.NAMES}

    def clamp(self, lo: float, hi: float) -> None:
        for p in self.parameters():
            np.clip(p.data, lo, hi, out=p.data)


@dataclass
class LossBundle:
    traj: float
    man: float
    dis_traj: float = 0.0
    dis_man: float = 0.0
    st: float = 0.0
    total: float = 0.0


def _half_precision(log_var: Tensor) -> Tensor:
    # 1 / (2 sigma^2) with sigma^2 = exp(log_var)
    return 0.5 * dc.exp(-log_var)


def kdm_terms(stu_traj, stu_man, dis_traj, dis_man, kdm: KdmState) -> dict[str, Tensor]:
    """The weighted pieces of the two-level objective, kept separate for logging."""
    w_t, w_m = _half_precision(kdm.log_var_t), _half_precision(kdm.log_var_m)
    w_s, w_d = _half_precision(kdm.log_var_s), _half_precision(kdm.log_var_d)
    return {
        "stu_traj": w_s * (w_t * stu_traj),
        "stu_man": w_s * (w_m * stu_man),
        "dis_traj": w_d * (w_t * dis_traj),
        "dis_man": w_d * (w_m * dis_man),
        # log(sigma_t sigma_m sigma_s sigma_d) = sum(log_var) / 2
        "reg": 0.5 * (kdm.log_var_t + kdm.log_var_m + kdm.log_var_s + kdm.log_var_d),
    }


def kdm_total(stu_traj, stu_man, dis_traj, dis_man, kdm: KdmState) -> Tensor:
    for value in (stu_traj, stu_man, dis_traj, dis_man):
        v = value.data if isinstance(value, Tensor) else np.asarray(value)
        if not np.all(np.isfinite(v)):
            raise LossError("non-finite loss component")
    terms = kdm_terms(stu_traj, stu_man, dis_traj, dis_man, kdm)
    return terms["stu_traj"] + terms["stu_man"] + terms["dis_traj"] + terms["dis_man"] + terms["reg"]
