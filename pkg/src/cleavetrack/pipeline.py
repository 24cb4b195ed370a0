"""Stage functions shared by the CLI and the in-process runner.

Every stage hands its output over at file precision (see :mod:`cleavetrack.io`),
so chaining the CLI commands through files and calling :func:`run` give the
same tracks bit for bit.
"""
from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np

from .cleave import cleave_all
from .config import PipelineConfig
from .core import Detection, Tracklet
from .generation import detections_by_frame, generate_tracklets
from .io import quantize_tracks
from .reconnect import associate, finalize
from .seqnet import LstmWeights, SeqModel

log = logging.getLogger(__name__)

Embeddings = Mapping[tuple[int, int], np.ndarray]


def track(
    dets: Sequence[Detection], emb: Embeddings, cfg: PipelineConfig, motion_weights: LstmWeights | None = None
) -> list[Tracklet]:
    out = generate_tracklets(detections_by_frame(dets), emb, cfg.gen(), motion_weights)
    log.info("generated %d tracklets", len(out))
    return quantize_tracks(out)


def cleave(tracklets: Sequence[Tracklet], emb: Embeddings, model: SeqModel, cfg: PipelineConfig) -> list[Tracklet]:
    out = cleave_all(tracklets, emb, model, cfg.cleave())
    log.info("cleaved %d tracklets into %d", len(tracklets), len(out))
    return quantize_tracks(out)


def reconnect(tracklets: Sequence[Tracklet], emb: Embeddings, model: SeqModel, cfg: PipelineConfig) -> list[Tracklet]:
    merged = associate(tracklets, emb, model, cfg.gate(), cfg.sim_thresh)
    log.info("associated %d tracklets into %d trajectories", len(tracklets), len(merged))
    return quantize_tracks(finalize(merged, cfg.smooth_window))


def run(
    dets: Sequence[Detection],
    emb: Embeddings,
    model: SeqModel,
    cfg: PipelineConfig,
    motion_weights: LstmWeights | None = None,
) -> list[Tracklet]:
    """Generation, cleaving, re-connection, gap filling and smoothing."""
    return reconnect(cleave(track(dets, emb, cfg, motion_weights), emb, model, cfg), emb, model, cfg)


def train_model(cfg: PipelineConfig, progress=None) -> tuple[SeqModel, list[float]]:
    """Desk-scale training run on synthetic pure tracklets, seeded by ``cfg.seed``."""
    from .learn import train_toy
    from .synth import make_training_set

    data, _ = make_training_set(
        cfg.train_identities, cfg.train_per_identity, d=cfg.embedding_dim, sigma_e=cfg.sigma_e, seed=cfg.seed
    )
    model = SeqModel.init(d_in=cfg.embedding_dim, n_classes=cfg.train_identities, rng=cfg.seed + 1)
    return train_toy(
        data,
        model,
        cfg.loss(),
        epochs=cfg.train_epochs,
        seed=cfg.seed,
        lr=cfg.lr,
        pairs_per_epoch=cfg.train_pairs_per_epoch,
        progress=progress,
    )
