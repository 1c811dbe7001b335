"""Staged training: the two baselines, joint feature learning and fusion.

Each stage runs an exhaustive-triplet phase followed by an in-batch
hard-negative phase (which replaces, not augments, the exhaustive set).
The hard-negative distance matrix is recomputed from the step's current
embeddings. Batch order, initialization, dropout and the proxy are all
seeded, so a run is a pure function of (config, manifest, seed).
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, reverse_accumulate
from .config import (StageConfig, canonical_text, config_digest,
                     encoder_configs_from_canonical)
from .containers import Checkpoint, read_checkpoint, write_checkpoint
from .encoder import (JointModel, TwoStreamModel, build_joint, build_two_stream,
                      load_encoder_values, warm_start_joint)
from .errors import (CheckpointError, ConfigError, DataError, NumericAbort,
                     NumericError, UsageError)
from .fusion import FusionModel, fuse_query, init_fusion, project_reference
from .losses import batch_loss, enumerate_exhaustive_triplets, joint_loss, mine_hard_negatives
from .manifest import LoadedDataset, Manifest, load_dataset, load_manifest
from .params import adam_step, seed_for
from .retrieval import EmbeddingMatrix, distance_matrix, recall_at_k
from .synthproxy import stack_4channel, to_grayscale, canny


@dataclass
class StageResult:
    stage: str
    checkpoint_path: Path
    losses: list[float]
    recall_points: list[tuple[int, float]]


def _batch_stream(n: int, batch: int, seed: int):
    """Seeded epoch shuffling; yields index arrays of exactly ``batch``
    rows, dropping each epoch's remainder."""
    if n < batch:
        raise ConfigError(f"dataset has {n} samples, smaller than batch {batch}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    while True:
        perm = rng.permutation(n)
        for lo in range(0, n - batch + 1, batch):
            yield perm[lo:lo + batch]


def extract_embeddings(encoder, images: np.ndarray, batch: int = 128) -> np.ndarray:
    """Eval-mode embeddings, processed in input order."""
    outs = []
    for lo in range(0, images.shape[0], batch):
        outs.append(encoder.encode(images[lo:lo + batch], mode="eval").data)
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, encoder.cfg.embed_dim))


def _resolve_manifest(manifest) -> Manifest:
    return manifest if isinstance(manifest, Manifest) else load_manifest(manifest)


def _maybe_edgemap(images: np.ndarray) -> np.ndarray:
    stacked = []
    for img in images:
        edges = canny(to_grayscale(img))
        stacked.append(stack_4channel(img, edges))
    return np.stack(stacked)


class _MetricsLog:
    def __init__(self, loss_path: Path | None, recall_path: Path | None):
        self.loss_rows: list[tuple[int, float, str]] = []
        self.recall_rows: list[tuple[int, float]] = []
        self._loss_path = loss_path
        self._recall_path = recall_path

    def loss(self, step: int, value: float, phase: str):
        self.loss_rows.append((step, value, phase))

    def recall(self, step: int, value: float):
        self.recall_rows.append((step, value))

    def flush(self):
        if self._loss_path is not None:
            with open(self._loss_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "loss", "phase"])
                for step, value, phase in self.loss_rows:
                    w.writerow([step, f"{value:.6f}", phase])
        if self._recall_path is not None and self.recall_rows:
            with open(self._recall_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "recall"])
                for step, value in self.recall_rows:
                    w.writerow([step, f"{value:.6f}"])


def _phases(cfg: StageConfig):
    return (("exhaustive", cfg.steps_exhaustive),
            ("hard_negative", cfg.steps_hard_negative))


def _check_resume_digest(cfg: StageConfig, ckpt: Checkpoint):
    if ckpt.stage == cfg.stage and ckpt.config_digest != config_digest(cfg):
        raise CheckpointError(
            f"resuming stage {cfg.stage!r} with a different configuration "
            f"(checkpoint digest {ckpt.config_digest}, current {config_digest(cfg)})")


def _train_two_stream(cfg: StageConfig, query_images, reference_images,
                      model: TwoStreamModel, log: _MetricsLog):
    batches = _batch_stream(query_images.shape[0], cfg.batch,
                            seed_for(cfg.seed, f"{cfg.stage}.batches"))
    exhaustive = enumerate_exhaustive_triplets(cfg.batch)
    step = 0
    for phase, steps in _phases(cfg):
        for _ in range(steps):
            idx = next(batches)
            try:
                fq = model.query_encoder.encode(query_images[idx], mode="train")
                fr = model.reference_encoder.encode(reference_images[idx], mode="train")
                if phase == "exhaustive":
                    triplets = exhaustive
                else:
                    triplets = mine_hard_negatives(distance_matrix(fq.data, fr.data))
                loss = batch_loss(fq, fr, triplets, cfg.loss)
            except NumericError as exc:
                raise NumericAbort(f"non-finite loss at step {step}: {exc}", step=step) from exc
            reverse_accumulate(loss)
            for store in model.stores():
                adam_step(store, cfg.lr)
                store.zero_grads()
            log.loss(step, loss.item(), phase)
            _periodic_recall(cfg, step, log,
                             lambda: (extract_embeddings(model.query_encoder, query_images),
                                      extract_embeddings(model.reference_encoder,
                                                         reference_images)))
            step += 1


def _train_joint(cfg: StageConfig, ground, synth, aerial, model: JointModel,
                 log: _MetricsLog):
    batches = _batch_stream(ground.shape[0], cfg.batch,
                            seed_for(cfg.seed, f"{cfg.stage}.batches"))
    exhaustive = enumerate_exhaustive_triplets(cfg.batch)
    step = 0
    for phase, steps in _phases(cfg):
        for _ in range(steps):
            idx = next(batches)
            try:
                fq = model.query_encoder.encode(ground[idx], mode="train")
                fs = model.encode_synth(synth[idx], mode="train")
                fr = model.reference_encoder.encode(aerial[idx], mode="train")
                if phase == "exhaustive":
                    t_main = t_aux = exhaustive
                else:
                    t_main = mine_hard_negatives(distance_matrix(fq.data, fr.data))
                    t_aux = mine_hard_negatives(distance_matrix(fs.data, fr.data))
                loss = joint_loss(fq, fs, fr, cfg.loss, t_main, t_aux)
            except NumericError as exc:
                raise NumericAbort(f"non-finite loss at step {step}: {exc}", step=step) from exc
            reverse_accumulate(loss)
            for store in model.stores():
                adam_step(store, cfg.lr)
                store.zero_grads()
            log.loss(step, loss.item(), phase)
            _periodic_recall(cfg, step, log,
                             lambda: (extract_embeddings(model.query_encoder, ground),
                                      extract_embeddings(model.reference_encoder, aerial)))
            step += 1


def _train_fusion_head(cfg: StageConfig, f_query, f_synth, f_ref,
                       head: FusionModel, log: _MetricsLog):
    batches = _batch_stream(f_query.shape[0], cfg.batch,
                            seed_for(cfg.seed, f"{cfg.stage}.batches"))
    exhaustive = enumerate_exhaustive_triplets(cfg.batch)
    step = 0
    for phase, steps in _phases(cfg):
        for _ in range(steps):
            idx = next(batches)
            try:
                q_star = fuse_query(Tensor(f_query[idx]), Tensor(f_synth[idx]), head)
                r_star = project_reference(Tensor(f_ref[idx]), head)
                if phase == "exhaustive":
                    triplets = exhaustive
                else:
                    triplets = mine_hard_negatives(distance_matrix(q_star.data, r_star.data))
                loss = batch_loss(q_star, r_star, triplets, cfg.loss)
            except NumericError as exc:
                raise NumericAbort(f"non-finite loss at step {step}: {exc}", step=step) from exc
            reverse_accumulate(loss)
            adam_step(head.store, cfg.lr)
            head.store.zero_grads()
            log.loss(step, loss.item(), phase)
            step += 1


def _periodic_recall(cfg: StageConfig, step: int, log: _MetricsLog, embed_fn):
    if cfg.eval_every > 0 and (step + 1) % cfg.eval_every == 0:
        fq, fr = embed_fn()
        n = min(100, fq.shape[0])
        dist = distance_matrix(fq[:n], fr[:n])
        log.recall(step, recall_at_k(dist, np.arange(n), 1))


def _validate_images(images: np.ndarray, enc_cfg, what: str):
    n, c, h, w = images.shape
    if (c, h, w) != (enc_cfg.in_channels, enc_cfg.in_h, enc_cfg.in_w):
        raise ConfigError(
            f"{what} images are {c}x{h}x{w} but the encoder config expects "
            f"{enc_cfg.in_channels}x{enc_cfg.in_h}x{enc_cfg.in_w}")


def run_stage(cfg: StageConfig, manifest, out_ckpt, warm_start=None,
              log_dir=None, with_edgemap: bool = False) -> StageResult:
    """Train one stage and write its checkpoint.

    ``joint`` requires a two-stream warm-start checkpoint; ``fusion``
    requires a joint checkpoint and trains only the fusion head on
    features extracted once from the frozen encoders.
    """
    man = _resolve_manifest(manifest)
    need_synth = cfg.stage in ("baseline-synth", "joint", "fusion")
    data = load_dataset(man, need_synth=need_synth)
    out_ckpt = Path(out_ckpt)
    log_dir = Path(log_dir) if log_dir is not None else out_ckpt.parent
    log_dir.mkdir(parents=True, exist_ok=True)
    out_ckpt.parent.mkdir(parents=True, exist_ok=True)
    log = _MetricsLog(log_dir / f"{cfg.stage}.metrics.csv",
                      log_dir / f"{cfg.stage}.recall.csv")

    ground = _maybe_edgemap(data.ground) if with_edgemap else data.ground

    warm = None
    if warm_start is not None:
        warm = read_checkpoint(warm_start)
        _check_resume_digest(cfg, warm)

    if cfg.stage in ("baseline-ga", "baseline-synth"):
        query_images = ground if cfg.stage == "baseline-ga" else data.synth
        _validate_images(query_images, cfg.query_encoder, "query")
        _validate_images(data.aerial, cfg.reference_encoder, "reference")
        model = build_two_stream(cfg.query_encoder, cfg.reference_encoder,
                                 share=cfg.share_weights)
        if warm is not None:
            load_encoder_values(model, warm.tensors)
        _train_two_stream(cfg, query_images, data.aerial, model, log)
        tensors = model.named_values()
    elif cfg.stage == "joint":
        if warm is None:
            raise UsageError("stage 'joint' requires a two-stream warm-start checkpoint")
        _validate_images(ground, cfg.query_encoder, "query")
        _validate_images(data.aerial, cfg.reference_encoder, "reference")
        _validate_images(data.synth, cfg.reference_encoder, "synthesized")
        model = warm_start_joint(warm.tensors, cfg.query_encoder, cfg.reference_encoder)
        _train_joint(cfg, ground, data.synth, data.aerial, model, log)
        tensors = model.named_values()
    elif cfg.stage == "fusion":
        if warm is None:
            raise UsageError("stage 'fusion' requires a joint warm-start checkpoint")
        joint = load_joint_from_checkpoint(warm)
        f_query = extract_embeddings(joint.query_encoder, ground)
        f_synth = extract_embeddings(joint.reference_encoder, data.synth)
        f_ref = extract_embeddings(joint.reference_encoder, data.aerial)
        head = init_fusion(joint.query_encoder.cfg.embed_dim,
                           seed=seed_for(cfg.seed, "fusion.head"))
        _train_fusion_head(cfg, f_query, f_synth, f_ref, head, log)
        tensors = dict(warm.tensors)
        tensors.update(head.named_values())
    else:  # pragma: no cover - StageConfig validates
        raise ConfigError(f"unknown stage {cfg.stage!r}")

    log.flush()
    effective_cfg = cfg
    if cfg.stage == "fusion":
        # record the encoder architecture the fusion head was trained on
        from dataclasses import replace
        q_cfg, r_cfg = encoder_configs_from_canonical(warm.config_text)
        effective_cfg = replace(cfg, query_encoder=q_cfg, reference_encoder=r_cfg)
    ckpt = Checkpoint(stage=cfg.stage, seed=cfg.seed,
                      config_digest=config_digest(effective_cfg),
                      tensors=tensors, config_text=canonical_text(effective_cfg))
    write_checkpoint(out_ckpt, ckpt)
    return StageResult(cfg.stage, out_ckpt, [v for _, v, _ in log.loss_rows],
                       log.recall_rows)


def load_joint_from_checkpoint(ckpt: Checkpoint) -> JointModel:
    """Rebuild encoders from a checkpoint's recorded architecture and load
    its weights."""
    if not ckpt.config_text:
        raise CheckpointError("checkpoint does not record its configuration")
    cfg_q, cfg_r = encoder_configs_from_canonical(ckpt.config_text)
    model = build_joint(cfg_q, cfg_r)
    load_encoder_values(model, ckpt.tensors)
    return model


def load_encoders_from_checkpoint(ckpt: Checkpoint):
    """Model with ``query_encoder``/``reference_encoder`` matching the
    checkpoint, honoring weight sharing."""
    if not ckpt.config_text:
        raise CheckpointError("checkpoint does not record its configuration")
    if any(name.startswith("shared.") for name in ckpt.tensors):
        cfg_q, cfg_r = encoder_configs_from_canonical(ckpt.config_text)
        model = build_two_stream(cfg_q, cfg_r, share=True)
        load_encoder_values(model, ckpt.tensors)
        return model
    return load_joint_from_checkpoint(ckpt)


def load_fusion_from_checkpoint(ckpt: Checkpoint) -> tuple[JointModel, FusionModel]:
    if ckpt.stage != "fusion":
        raise CheckpointError(f"expected a fusion checkpoint, got stage {ckpt.stage!r}")
    joint = load_joint_from_checkpoint(ckpt)
    head = init_fusion(joint.query_encoder.cfg.embed_dim, seed=0)
    missing = [n for n in head.store.names() if n not in ckpt.tensors]
    if missing:
        raise CheckpointError(f"checkpoint is missing parameter {missing[0]!r}")
    head.store.load_values({n: ckpt.tensors[n] for n in head.store.names()})
    return joint, head


def embed_manifest(ckpt: Checkpoint, manifest, source: str = "encoder",
                   view: str = "ground", with_edgemap: bool = False) -> EmbeddingMatrix:
    """Embed one view of a manifest with a checkpointed model.

    ``source`` "encoder" embeds the ground or aerial images (per ``view``);
    "proxy" embeds the materialized synthesized images with the
    reference-view encoder. Fusion checkpoints produce fused query and
    projected reference embeddings instead of raw ones.
    """
    if view not in ("ground", "aerial"):
        raise UsageError(f"view must be 'ground' or 'aerial', got {view!r}")
    man = _resolve_manifest(manifest)
    need_synth = source == "proxy" or ckpt.stage == "fusion"
    data = load_dataset(man, need_synth=need_synth)

    if ckpt.stage == "fusion":
        joint, head = load_fusion_from_checkpoint(ckpt)
        if source == "proxy":
            emb = extract_embeddings(joint.reference_encoder, data.synth)
        elif view == "ground":
            ground = _maybe_edgemap(data.ground) if with_edgemap else data.ground
            f_q = extract_embeddings(joint.query_encoder, ground)
            f_s = extract_embeddings(joint.reference_encoder, data.synth)
            emb = fuse_query(Tensor(f_q), Tensor(f_s), head).data
        else:
            f_r = extract_embeddings(joint.reference_encoder, data.aerial)
            emb = project_reference(Tensor(f_r), head).data
        return EmbeddingMatrix(data.ids, emb)

    model = load_encoders_from_checkpoint(ckpt)
    if source == "proxy":
        # the synth-query baseline trains its query encoder on synthesized
        # images; everywhere else they run through the reference encoder
        enc = (model.query_encoder if ckpt.stage == "baseline-synth"
               else model.reference_encoder)
        emb = extract_embeddings(enc, data.synth)
    elif view == "ground":
        ground = _maybe_edgemap(data.ground) if with_edgemap else data.ground
        emb = extract_embeddings(model.query_encoder, ground)
    else:
        emb = extract_embeddings(model.reference_encoder, data.aerial)
    return EmbeddingMatrix(data.ids, emb)
