"""Pose error metrics and selection statistics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeError

AUC_THRESHOLDS = np.linspace(0.0, 150.0, 31)


def joint_errors(pred, gt):
    """Per-joint Euclidean error, shape (..., F, J)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred, gt, frames=None):
    """Mean per-joint position error, optionally over a subset of frames (axis -3)."""
    err = joint_errors(pred, gt)
    if frames is not None:
        frames = np.asarray(frames, dtype=np.int64)
        if frames.size and (frames.min() < 0 or frames.max() >= err.shape[-2]):
            raise ShapeError(f"frame index out of range for {err.shape[-2]} frames")
        err = err[..., frames, :]
    return float(err.mean())


def _pck_from_errors(err, threshold):
    # a zero-error joint counts as correct even at threshold 0
    return float(np.mean((err < threshold) | (err == 0)))


def pck(pred, gt, threshold_mm=150.0):
    """Fraction of joints with error below ``threshold_mm``."""
    if threshold_mm <= 0:
        raise ValueError("threshold must be positive")
    return _pck_from_errors(joint_errors(pred, gt), threshold_mm)


def auc(pred, gt):
    """Mean PCK over 31 evenly spaced thresholds on [0, 150] mm."""
    err = joint_errors(pred, gt)
    return float(np.mean([_pck_from_errors(err, t) for t in AUC_THRESHOLDS]))


@dataclass
class EvalReport:
    mpjpe_full: float
    pck: float
    auc: float
    mpjpe_selected: float | None = None
    mpjpe_pruned: float | None = None
    gap: float | None = None
    mpjpe_center: float | None = None
    frame_noise: float | None = None

    def as_record(self):
        return asdict(self)


def evaluate(preds, gts, selections=None):
    """Full / selected / pruned / centre decomposition over a set of sequences.

    ``preds`` and ``gts`` are lists of (F, J, 3) arrays (F may vary per
    sequence); ``selections`` optionally gives the kept frames of each one.
    Means are taken over all (frame, joint) pairs pooled across sequences, so
    the full error is exactly the count-weighted mix of selected and pruned.
    """
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground-truth sequences")
    errs = [joint_errors(p, g) for p, g in zip(preds, gts)]
    if any(e.ndim != 2 for e in errs):
        raise ShapeError("each sequence must be (F, J, 3)")
    all_err = np.concatenate([e.reshape(-1) for e in errs])
    report = EvalReport(
        mpjpe_full=float(all_err.mean()),
        pck=_pck_from_errors(all_err, 150.0),
        auc=float(np.mean([_pck_from_errors(all_err, t) for t in AUC_THRESHOLDS])),
        mpjpe_center=float(np.concatenate([e[len(e) // 2] for e in errs]).mean()),
    )
    if selections is not None:
        if len(selections) != len(errs):
            raise ShapeError(f"{len(selections)} selections vs {len(errs)} sequences")
        sel_parts, pruned_parts = [], []
        for e, sel in zip(errs, selections):
            mask = np.zeros(len(e), dtype=bool)
            sel = np.asarray(sel, dtype=np.int64)
            if sel.size and (sel.min() < 0 or sel.max() >= len(e)):
                raise ShapeError(f"selection out of range for {len(e)} frames")
            mask[sel] = True
            sel_parts.append(e[mask].reshape(-1))
            pruned_parts.append(e[~mask].reshape(-1))
        sel_err = np.concatenate(sel_parts)
        pruned_err = np.concatenate(pruned_parts)
        report.mpjpe_selected = float(sel_err.mean()) if sel_err.size else None
        report.mpjpe_pruned = float(pruned_err.mean()) if pruned_err.size else None
        if report.mpjpe_selected is not None and report.mpjpe_pruned is not None:
            report.gap = report.mpjpe_pruned - report.mpjpe_selected
    return report


def selection_stats(runs, frames):
    """Per-frame selection counts and the (runs x F) 0/1 selection raster."""
    raster = np.zeros((len(runs), frames), dtype=np.int64)
    for r, idx in enumerate(runs):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= frames):
            raise ShapeError(f"run {r} selects a frame outside 0..{frames - 1}")
        raster[r, idx] = 1
    return raster.sum(axis=0), raster
