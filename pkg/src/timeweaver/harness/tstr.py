"""Train-on-synthetic, test-on-real classification."""

from __future__ import annotations

import copy
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.stats import rankdata

from ..data import DataError, PairedDataset

log = logging.getLogger(__name__)


class PreActBlock(nn.Module):
    def __init__(self, width: int, kernel: int = 5):
        super().__init__()
        self.bn1 = nn.BatchNorm1d(width)
        self.conv1 = nn.Conv1d(width, width, kernel, padding=kernel // 2)
        self.bn2 = nn.BatchNorm1d(width)
        self.conv2 = nn.Conv1d(width, width, kernel, padding=kernel // 2)

    def forward(self, x):
        h = self.conv1(F.relu(self.bn1(x)))
        h = self.conv2(F.relu(self.bn2(h)))
        return x + h


class ResNet1D(nn.Module):
    def __init__(self, n_channels: int, n_classes: int, width: int = 32, blocks: int = 3):
        super().__init__()
        self.stem = nn.Conv1d(n_channels, width, 7, padding=3)
        self.blocks = nn.Sequential(*(PreActBlock(width) for _ in range(blocks)))
        self.bn = nn.BatchNorm1d(width)
        self.head = nn.Linear(width, n_classes)

    def forward(self, x):
        # x: (B, L, F)
        h = self.blocks(self.stem(x.transpose(1, 2)))
        return self.head(F.relu(self.bn(h)).mean(dim=-1))


@dataclass
class Classifier:
    model: ResNet1D
    target: int | tuple[int, ...]
    n_classes: int
    multilabel: bool
    best_epoch: int
    val_history: list[float] = field(default_factory=list)

    @torch.no_grad()
    def scores(self, x: np.ndarray) -> np.ndarray:
        self.model.eval()
        logits = self.model(torch.as_tensor(np.array(x), dtype=torch.float32))
        probs = torch.sigmoid(logits) if self.multilabel else torch.softmax(logits, dim=1)
        return probs.double().numpy()


def sample_labels(ds: PairedDataset, target) -> tuple[np.ndarray, int, bool]:
    """Per-sample labels; a tuple of binary features gives a multi-label target."""
    feats = (target,) if isinstance(target, (int, np.integer)) else tuple(target)
    for k in feats:
        col = ds.categorical[:, :, k]
        if (col != col[:, :1]).any():
            raise DataError(f"categorical feature {k} varies within a sample; TSTR needs per-sample labels")
    if len(feats) == 1 and isinstance(target, (int, np.integer)):
        return ds.categorical[:, 0, feats[0]], ds.cardinalities[feats[0]], False
    for k in feats:
        if ds.cardinalities[k] != 2:
            raise DataError(f"multi-label target feature {k} must be binary")
    return ds.categorical[:, 0, list(feats)], len(feats), True


def _eval_loss(model, x, y, multilabel):
    model.eval()
    with torch.no_grad():
        logits = model(x)
        if multilabel:
            return float(F.binary_cross_entropy_with_logits(logits, y.float()))
        return float(F.cross_entropy(logits, y))


def train_tstr(
    train: PairedDataset,
    val: PairedDataset,
    target: int | Sequence[int] = 0,
    epochs: int = 100,
    lr: float = 1e-4,
    batch_size: int = 64,
    width: int = 32,
    blocks: int = 3,
    seed: int = 0,
) -> Classifier:
    """Fit a ResNet-1D on (synthetic) ``train``; keep the checkpoint with the
    lowest validation loss."""
    y_tr, n_classes, multilabel = sample_labels(train, target)
    y_va, _, _ = sample_labels(val, target)
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    model = ResNet1D(train.n_channels, n_classes, width, blocks)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    x_tr = torch.as_tensor(np.array(train.x), dtype=torch.float32)
    x_va = torch.as_tensor(np.array(val.x), dtype=torch.float32)
    y_tr, y_va = torch.as_tensor(np.array(y_tr)), torch.as_tensor(np.array(y_va))
    best, best_epoch, best_state, history = np.inf, -1, None, []
    n = len(train)
    for epoch in range(epochs):
        model.train()
        perm = torch.randperm(n, generator=gen)
        for a in range(0, n, batch_size):
            idx = perm[a : a + batch_size]
            if len(idx) < 2:
                continue
            logits = model(x_tr[idx])
            if multilabel:
                loss = F.binary_cross_entropy_with_logits(logits, y_tr[idx].float())
            else:
                loss = F.cross_entropy(logits, y_tr[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
        vl = _eval_loss(model, x_va, y_va, multilabel)
        history.append(vl)
        if vl < best:
            best, best_epoch, best_state = vl, epoch, copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return Classifier(model, target if multilabel else int(target), n_classes, multilabel, best_epoch, history)


def roc_auc(y_true, scores) -> float:
    """Binary ROC AUC via the rank-sum statistic, ties counted as half."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both positive and negative samples")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auc(y, scores: np.ndarray, multilabel: bool = False) -> float:
    """One-vs-rest ROC AUC averaged over classes present in ``y``."""
    n_classes = scores.shape[1]
    aucs = []
    for c in range(n_classes):
        pos = y[:, c].astype(bool) if multilabel else (np.asarray(y) == c)
        if pos.all() or not pos.any():
            warnings.warn(f"class {c} is {'absent' if not pos.any() else 'universal'} in the test set; excluded from macro AUC")
            continue
        aucs.append(roc_auc(pos, scores[:, c]))
    if not aucs:
        raise ValueError("no class has both positives and negatives")
    return float(np.mean(aucs))


def tstr_auc(classifier: Classifier, real_test: PairedDataset, target=None) -> float:
    target = classifier.target if target is None else target
    y, _, multilabel = sample_labels(real_test, target)
    return macro_auc(y, classifier.scores(real_test.x), multilabel)
