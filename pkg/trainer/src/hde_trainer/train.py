"""Training loop: AdamW, lr halved every 100 epochs, oracle cross-checks.

The model predicts 5 extra channels; the loss compares the full 8-channel
embedding (original coordinates concatenated in front) against the
deterministic ground truth.  Periodically one batch's loss is re-computed
through the toolkit's `loss-check` CLI and must agree within 1e-5 relative.
"""

from __future__ import annotations

import json
import logging
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .dataset import TrainingSample
from .gnn import GraphUNet, prepare_graph
from .losses import DEFAULT_W_LAP, one_ring, total_loss
from .meshdata import forge_command, save_hde

log = logging.getLogger("hde_trainer.train")

torch.set_default_dtype(torch.float64)


@dataclass
class TrainConfig:
    epochs: int = 600
    batch_size: int = 4
    lr: float = 0.01
    lr_halve_every: int = 100
    w_lap: float = DEFAULT_W_LAP
    seed: int = 0
    weight_decay: float = 1e-4
    widths: tuple = (64, 128, 256, 512, 512)
    pool_ratio: float = 0.5
    oracle_every: int = 10  # epochs between CLI loss cross-checks; 0 = off
    val_fraction: float = 0.25


@dataclass
class EpochStats:
    epoch: int
    train_total: float
    train_dot: float
    train_lap: float
    val_total: float = float("nan")

    def row(self):
        return {
            "epoch": self.epoch,
            "train_total": self.train_total,
            "train_dot": self.train_dot,
            "train_lap": self.train_lap,
            "val_total": self.val_total,
        }


class _Graphs:
    """Precomputed tensors per sample."""

    def __init__(self, sample: TrainingSample):
        self.sample = sample
        self.feats, self.edges, self.adj = prepare_graph(
            sample.vertices, sample.faces, sample.features[:, 3:6]
        )
        self.faces_t = torch.as_tensor(sample.faces, dtype=torch.int64)
        self.offsets, self.ring = one_ring(sample.faces, len(sample.vertices))
        self.truth = torch.as_tensor(sample.truth)
        self.coords3 = torch.as_tensor(sample.vertices)


def predict_embedding(model: GraphUNet, g: _Graphs) -> torch.Tensor:
    """Full 8-channel embedding: input coordinates + 5 learned channels."""
    extra = model(g.feats, g.edges, g.adj)
    return torch.cat([g.coords3, extra], dim=1)


def _oracle_check(pred: np.ndarray, g: _Graphs, torch_total: float, w_lap: float):
    """Cross-check one sample's loss through the toolkit CLI."""
    with tempfile.TemporaryDirectory() as td:
        p_pred = Path(td) / "pred.hde"
        p_truth = Path(td) / "truth.hde"
        save_hde(pred, g.sample.faces, p_pred, tag="neural")
        save_hde(g.sample.truth, g.sample.faces, p_truth, tag="deterministic")
        proc = subprocess.run(
            forge_command()
            + ["loss-check", "--pred", str(p_pred), "--truth", str(p_truth),
               "--w-lap", str(w_lap)],
            capture_output=True, text=True,
        )
        if proc.returncode != 0:
            raise RuntimeError(f"loss-check failed:\n{proc.stderr}")
        oracle = json.loads(proc.stdout)["total"]
    rel = abs(oracle - torch_total) / max(abs(oracle), 1e-300)
    if rel > 1e-5:
        raise RuntimeError(
            f"loss parity violated: oracle {oracle!r} vs trainer {torch_total!r}"
        )
    return rel


def train(samples, cfg: TrainConfig):
    """Returns (model, curves, graphs).  Curves is a list of EpochStats rows."""
    if not samples:
        raise ValueError("empty dataset")
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed)
    graphs = [_Graphs(s) for s in samples]
    n_val = int(round(cfg.val_fraction * len(graphs)))
    val = graphs[:n_val]
    trainset = graphs[n_val:] or graphs
    model = GraphUNet(in_channels=6, out_channels=5, widths=cfg.widths,
                      pool_ratio=cfg.pool_ratio)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr,
                            weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.lr_halve_every, gamma=0.5)
    curves = []
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(trainset))
        tot = dot = lap = 0.0
        nb = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [trainset[i] for i in order[start : start + cfg.batch_size]]
            opt.zero_grad()
            loss_acc = 0.0
            for g in batch:
                pred = predict_embedding(model, g)
                loss, l_dot, l_lap = total_loss(
                    pred, g.truth, g.faces_t, g.offsets, g.ring, cfg.w_lap
                )
                loss_acc = loss_acc + loss
                tot += float(loss.detach())
                dot += float(l_dot.detach())
                lap += float(l_lap.detach())
                nb += 1
            (loss_acc / len(batch)).backward()
            opt.step()
        sched.step()
        if not np.isfinite(tot):
            raise FloatingPointError(f"training diverged at epoch {epoch} (loss NaN)")
        stats = EpochStats(epoch, tot / nb, dot / nb, lap / nb)
        if val:
            model.eval()
            with torch.no_grad():
                v = 0.0
                for g in val:
                    pred = predict_embedding(model, g)
                    loss, _, _ = total_loss(
                        pred, g.truth, g.faces_t, g.offsets, g.ring, cfg.w_lap
                    )
                    v += float(loss)
                stats.val_total = v / len(val)
        if cfg.oracle_every and epoch % cfg.oracle_every == 0:
            g = trainset[0]
            model.eval()
            with torch.no_grad():
                pred = predict_embedding(model, g)
                t, _, _ = total_loss(pred, g.truth, g.faces_t, g.offsets, g.ring, cfg.w_lap)
            rel = _oracle_check(pred.numpy(), g, float(t), cfg.w_lap)
            log.info("epoch %d oracle parity %.2e", epoch, rel)
        curves.append(stats.row())
        if epoch == 1 or epoch % 25 == 0 or epoch == cfg.epochs:
            log.info(
                "epoch %d train %.6g (dot %.3g lap %.3g) val %.6g lr %.4g",
                epoch, stats.train_total, stats.train_dot, stats.train_lap,
                stats.val_total, sched.get_last_lr()[0],
            )
    return model, curves, graphs


def save_checkpoint(model: GraphUNet, cfg: TrainConfig, path):
    torch.save(
        {
            "state": model.state_dict(),
            "widths": list(cfg.widths),
            "pool_ratio": cfg.pool_ratio,
            "w_lap": cfg.w_lap,
        },
        path,
    )


def load_checkpoint(path) -> GraphUNet:
    data = torch.load(path, weights_only=True)
    model = GraphUNet(in_channels=6, out_channels=5, widths=tuple(data["widths"]),
                      pool_ratio=data["pool_ratio"])
    model.load_state_dict(data["state"])
    model.eval()
    return model


def save_curves(curves, path):
    with open(path, "w") as fh:
        json.dump(curves, fh, indent=2)
