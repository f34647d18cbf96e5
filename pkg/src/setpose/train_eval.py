"""Training loop, evaluation harness, and the ablation runner.

Training follows the two-group AdamW schedule: backbone parameters (the
patch embedding) at lr_backbone, everything else at lr_transformer, both
divided by lr_drop_factor from lr_drop_epoch onward. Supervision happens
in normalized UVD space: per sample the ground-truth hands are matched to
queries by the Hungarian assignment on the match cost, and the set loss
is averaged over the batch. Matching is recomputed every step and carries
no gradient.

Evaluation decodes a pose per side (per-side argmax query - a prediction
is always produced for a present hand), optionally rescales depths toward
the per-side training mean hand scale, unprojects, and reports global
MPJPE without any root alignment.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import GenConfig, SceneSample, augment, generate_dataset
from .errors import ConfigError, MissingScaleStats, NonFiniteLoss
from .geometry import CameraIntrinsics, HandSide, JointSetUVD, mpjpe, uvd_to_xyz
from .hand_model import DEFAULT_TOPOLOGY, ScaleStats, SkeletonTopology, compute_mean_scale, rescale_depth
from .matching import build_cost_matrix, class_index, hungarian, set_loss
from .model import (
    DepthMode,
    ModelConfig,
    build_model,
    decode_predictions,
    encode_targets,
    forward_batch,
    is_backbone_param,
)
from .nn_core import (
    ParamStore,
    adamw_step,
    forward_backward,
    init_optim_state,
    save_checkpoint,
)
from .rng import PortableRng, derive_seed


@dataclass(frozen=True)
class TrainConfig:
    lr_transformer: float = 1e-4
    lr_backbone: float = 1e-5
    weight_decay: float = 1e-4
    batch_size: int = 16
    total_epochs: int = 300
    lr_drop_epoch: int = 200
    lr_drop_factor: float = 10.0
    lam_cls: float = 1.0
    lam_l1: float = 5.0
    w_noobj: float = 0.1
    seed: int = 0
    deterministic: bool = True  # this implementation is deterministic throughout

    def __post_init__(self):
        if not (0 < self.lr_drop_epoch < self.total_epochs):
            raise ConfigError("need 0 < lr_drop_epoch < total_epochs")
        for name in ("lr_transformer", "lr_backbone", "weight_decay",
                     "lr_drop_factor", "lam_cls", "lam_l1", "w_noobj"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lr_transformer <= 0 or self.lr_backbone <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def lr_at(self, epoch: int) -> tuple[float, float]:
        div = self.lr_drop_factor if epoch >= self.lr_drop_epoch else 1.0
        return self.lr_transformer / div, self.lr_backbone / div

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "lr_transformer", "lr_backbone", "weight_decay", "batch_size",
            "total_epochs", "lr_drop_epoch", "lr_drop_factor", "lam_cls",
            "lam_l1", "w_noobj", "seed", "deterministic")}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class StepRecord:
    step: int
    cls_loss: float
    l1_loss: float
    total: float
    lr_transformer: float
    lr_backbone: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    val_mpjpe_left: float | None
    val_mpjpe_right: float | None


@dataclass
class TrainLog:
    steps: list[StepRecord] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = []
        for s in self.steps:
            lines.append(json.dumps({
                "kind": "step", "step": s.step, "cls_loss": s.cls_loss,
                "l1_loss": s.l1_loss, "total": s.total,
                "lr_transformer": s.lr_transformer, "lr_backbone": s.lr_backbone}))
        for e in self.epochs:
            lines.append(json.dumps({
                "kind": "epoch", "epoch": e.epoch,
                "val_mpjpe_left": e.val_mpjpe_left,
                "val_mpjpe_right": e.val_mpjpe_right}))
        return "\n".join(lines) + ("\n" if lines else "")


def sample_targets(sample: SceneSample, model_cfg: ModelConfig):
    """Ground-truth (side, 63 normalized values) list for one sample."""
    return [(h.side, encode_targets(h.uvd, model_cfg)) for h in sample.hands]


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_samples: list[SceneSample],
    val_samples: list[SceneSample] | None = None,
    checkpoint_dir: str | Path | None = None,
    topo: SkeletonTopology = DEFAULT_TOPOLOGY,
) -> tuple[ParamStore, TrainLog]:
    """Returns (checkpoint parameters, log).

    With a validation split the returned parameters are the best epoch's
    (lowest mean of the per-side validation MPJPEs); otherwise the final
    ones. Epoch checkpoints land in checkpoint_dir when given.
    """
    if not train_samples:
        raise ConfigError("training set is empty")
    params = build_model(model_cfg, train_cfg.seed)
    state = init_optim_state(params)
    rng = PortableRng(train_cfg.seed, stream=0x7472)
    log = TrainLog()
    step = 0
    best = (math.inf, None)
    n = len(train_samples)
    for epoch in range(train_cfg.total_epochs):
        lr_t, lr_b = train_cfg.lr_at(epoch)
        order = list(range(n))
        rng.shuffle(order)
        for lo in range(0, n, train_cfg.batch_size):
            batch_idx = order[lo:lo + train_cfg.batch_size]
            batch = [augment(train_samples[i], rng) for i in batch_idx]
            images = np.stack([s.image for s in batch]).astype(np.float64)
            gts = [sample_targets(s, model_cfg) for s in batch]
            step += 1

            parts = {}

            def loss_fn(ps: ParamStore):
                det = forward_batch(ps, images, model_cfg)
                total = None
                cls_sum = 0.0
                l1_sum = 0.0
                for b in range(len(batch)):
                    logits_b = det.class_logits[b]
                    joints_b = det.joints_norm[b]
                    costs = build_cost_matrix(logits_b.data, joints_b.data,
                                              gts[b], train_cfg.lam_cls,
                                              train_cfg.lam_l1)
                    assignment = hungarian(costs)
                    lb = set_loss(logits_b, joints_b, gts[b], assignment,
                                  train_cfg.lam_cls, train_cfg.lam_l1,
                                  train_cfg.w_noobj)
                    cls_sum += lb.cls_loss.item()
                    l1_sum += lb.l1_loss.item()
                    total = lb.total if total is None else total + lb.total
                parts["cls"] = cls_sum / len(batch)
                parts["l1"] = l1_sum / len(batch)
                return total * (1.0 / len(batch))

            try:
                loss, grads = forward_backward(loss_fn, params)
            except NonFiniteLoss as e:
                raise NonFiniteLoss(f"non-finite loss at step {step}", step=step) from e
            adamw_step(params, grads, state,
                       lr=lambda name: lr_b if is_backbone_param(name) else lr_t,
                       weight_decay=train_cfg.weight_decay)
            log.steps.append(StepRecord(step=step, cls_loss=parts["cls"],
                                        l1_loss=parts["l1"], total=loss,
                                        lr_transformer=lr_t, lr_backbone=lr_b))

        if val_samples:
            report = evaluate(params, model_cfg, val_samples, topo=topo)
            log.epochs.append(EpochRecord(
                epoch=epoch,
                val_mpjpe_left=_none_if_nan(report.mpjpe_left),
                val_mpjpe_right=_none_if_nan(report.mpjpe_right)))
            score = report.mean_mpjpe()
            if score < best[0]:
                best = (score, params.copy())
        else:
            log.epochs.append(EpochRecord(epoch=epoch, val_mpjpe_left=None,
                                          val_mpjpe_right=None))
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch:04d}", params,
                            optimizer_step=state.t,
                            extra={"model_config": model_cfg.to_dict(),
                                   "epoch": epoch})

    final = best[1] if best[1] is not None else params
    if checkpoint_dir is not None:
        save_checkpoint(Path(checkpoint_dir) / "best", final,
                        optimizer_step=state.t,
                        extra={"model_config": model_cfg.to_dict(),
                               "epoch": train_cfg.total_epochs - 1})
    return final, log


def _none_if_nan(x: float) -> float | None:
    return None if math.isnan(x) else x


# -- evaluation ------------------------------------------------------------------

@dataclass(frozen=True)
class SidePrediction:
    """Raw decoded output for one (frame, side); depths are pre-rescaling."""

    index: int
    side: HandSide
    uvd: JointSetUVD
    confidence: float
    predicted_present: bool  # argmax class of the selected query == side

    def to_dict(self) -> dict:
        return {"id": self.index, "side": self.side.value,
                "uvd": self.uvd.joints.tolist(), "confidence": self.confidence,
                "predicted_present": self.predicted_present}

    @classmethod
    def from_dict(cls, d: dict) -> "SidePrediction":
        return cls(index=int(d["id"]), side=HandSide(d["side"]),
                   uvd=JointSetUVD(np.array(d["uvd"])),
                   confidence=float(d["confidence"]),
                   predicted_present=bool(d["predicted_present"]))


@dataclass(frozen=True)
class FrameRecord:
    index: int
    side: HandSide
    error_mm: float
    confidence: float

    def to_dict(self) -> dict:
        return {"id": self.index, "side": self.side.value,
                "error_mm": self.error_mm, "confidence": self.confidence}


@dataclass(frozen=True)
class EvalReport:
    mpjpe_left: float  # nan when no left-hand frames
    mpjpe_right: float
    n_frames_left: int
    n_frames_right: int
    rescaling_applied: bool
    cls_accuracy: float
    records: tuple[FrameRecord, ...]

    def mean_mpjpe(self) -> float:
        vals = [v for v in (self.mpjpe_left, self.mpjpe_right) if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    def to_dict(self) -> dict:
        return {
            "mpjpe_left": _none_if_nan(self.mpjpe_left),
            "mpjpe_right": _none_if_nan(self.mpjpe_right),
            "n_frames_left": self.n_frames_left,
            "n_frames_right": self.n_frames_right,
            "rescaling_applied": self.rescaling_applied,
            "cls_accuracy": self.cls_accuracy,
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def predict(
    params: ParamStore,
    model_cfg: ModelConfig,
    samples: list[SceneSample],
    threads: int = 1,
    batch_size: int = 32,
) -> list[SidePrediction]:
    """Decode both sides for every sample (pure per-chunk work)."""
    if not samples:
        return []
    cam = samples[0].camera

    def run_chunk(lo: int) -> list[SidePrediction]:
        chunk = samples[lo:lo + batch_size]
        images = np.stack([s.image for s in chunk]).astype(np.float64)
        batch = forward_batch(params, images, model_cfg)
        out = []
        for b, sample in enumerate(chunk):
            det = batch.sample(b)
            decoded = decode_predictions(det, model_cfg, cam)
            argmax_class = np.argmax(det.class_logits.data, axis=1)
            for side in HandSide:
                dec = decoded[side]
                out.append(SidePrediction(
                    index=lo + b, side=side, uvd=dec.uvd,
                    confidence=dec.confidence,
                    predicted_present=bool(
                        argmax_class[dec.query_index] == class_index(side))))
        return out

    offsets = list(range(0, len(samples), batch_size))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run_chunk, offsets))
    else:
        chunks = [run_chunk(lo) for lo in offsets]
    return [p for chunk in chunks for p in chunk]  # index order: deterministic


def score_predictions(
    preds: list[SidePrediction],
    samples: list[SceneSample],
    rescale: bool = False,
    scale_stats: ScaleStats | None = None,
    pooled: bool = False,
    topo: SkeletonTopology = DEFAULT_TOPOLOGY,
) -> EvalReport:
    """Per-frame global MPJPE against the GT sides actually present.

    Per-side means are exact (fsum) means of the per-frame records.
    Classification accuracy counts (frame, side) pairs whose
    predicted-present flag agrees with the ground truth.
    """
    if rescale and scale_stats is None:
        raise MissingScaleStats("rescaling requested without scale statistics")
    if not samples:
        raise ConfigError("evaluation set is empty")
    cam = samples[0].camera
    by_key = {(p.index, p.side): p for p in preds}
    records = []
    errors = {HandSide.LEFT: [], HandSide.RIGHT: []}
    acc_hits = 0
    for i, sample in enumerate(samples):
        gt_sides = {h.side: h for h in sample.hands}
        for side in HandSide:
            pred = by_key.get((i, side))
            if pred is None:
                raise ConfigError(f"missing prediction for frame {i} {side.value}")
            acc_hits += int(pred.predicted_present == (side in gt_sides))
            if side not in gt_sides:
                continue
            hand = gt_sides[side]
            if hand.xyz is None:
                raise ConfigError(f"frame {i} lacks xyz ground truth")
            uvd = pred.uvd
            if rescale:
                uvd = rescale_depth(uvd, cam, scale_stats.mean_for(side, pooled), topo)
            err = mpjpe(uvd_to_xyz(uvd, cam), hand.xyz)
            errors[side].append(err)
            records.append(FrameRecord(index=i, side=side, error_mm=err,
                                       confidence=pred.confidence))

    def side_mean(side: HandSide) -> float:
        vals = errors[side]
        return math.fsum(vals) / len(vals) if vals else math.nan

    return EvalReport(
        mpjpe_left=side_mean(HandSide.LEFT),
        mpjpe_right=side_mean(HandSide.RIGHT),
        n_frames_left=len(errors[HandSide.LEFT]),
        n_frames_right=len(errors[HandSide.RIGHT]),
        rescaling_applied=rescale,
        cls_accuracy=acc_hits / (2 * len(samples)),
        records=tuple(records),
    )


def evaluate(
    params: ParamStore,
    model_cfg: ModelConfig,
    samples: list[SceneSample],
    rescale: bool = False,
    scale_stats: ScaleStats | None = None,
    pooled: bool = False,
    threads: int = 1,
    topo: SkeletonTopology = DEFAULT_TOPOLOGY,
) -> EvalReport:
    if rescale and scale_stats is None:
        raise MissingScaleStats("rescaling requested without scale statistics")
    preds = predict(params, model_cfg, samples, threads=threads)
    return score_predictions(preds, samples, rescale=rescale,
                             scale_stats=scale_stats, pooled=pooled, topo=topo)


def scale_stats_from_samples(
    samples: list[SceneSample],
    topo: SkeletonTopology = DEFAULT_TOPOLOGY,
) -> ScaleStats:
    poses = [(h.side, h.xyz) for s in samples for h in s.hands if h.xyz is not None]
    return compute_mean_scale(poses, topo)


# -- ablation ------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    label: str
    resolution: tuple[int, int]
    depth_mode: str
    mpjpe_off: tuple[float, float]  # (left, right), rescaling off
    mpjpe_on: tuple[float, float]   # (left, right), rescaling on

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "resolution": list(self.resolution),
            "depth_mode": self.depth_mode,
            "mpjpe_mm": {
                "rescaling_off": {"left": self.mpjpe_off[0], "right": self.mpjpe_off[1]},
                "rescaling_on": {"left": self.mpjpe_on[0], "right": self.mpjpe_on[1]},
            },
        }


@dataclass(frozen=True)
class AblationTable:
    rows: tuple[AblationRow, ...]

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "units": "mm"}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        header = (f"{'configuration':<28}{'resolution':<12}{'depth':<14}"
                  f"{'off L (mm)':>12}{'off R (mm)':>12}"
                  f"{'on L (mm)':>12}{'on R (mm)':>12}")
        lines = [header, "-" * len(header)]
        for r in self.rows:
            res = f"{r.resolution[0]}x{r.resolution[1]}"
            lines.append(
                f"{r.label:<28}{res:<12}{r.depth_mode:<14}"
                f"{r.mpjpe_off[0]:>12.2f}{r.mpjpe_off[1]:>12.2f}"
                f"{r.mpjpe_on[0]:>12.2f}{r.mpjpe_on[1]:>12.2f}")
        return "\n".join(lines)


def scaled_gen_config(gen_cfg: GenConfig, image_size: tuple[int, int],
                      seed: int, n_samples: int,
                      subject_scale_factor: float | None = None) -> GenConfig:
    """Resize the scene config, scaling intrinsics with the image."""
    h, w = image_size
    base_h, base_w = gen_cfg.image_size
    if h * base_w != w * base_h:
        raise ConfigError("ablation resolutions must preserve the aspect ratio")
    factor = w / base_w
    cam = gen_cfg.intrinsics
    new_cam = CameraIntrinsics(fx=cam.fx * factor, fy=cam.fy * factor,
                               cx=cam.cx * factor, cy=cam.cy * factor,
                               width=float(w), height=float(h))
    return replace(
        gen_cfg, image_size=(h, w), intrinsics=new_cam, seed=seed,
        n_samples=n_samples,
        subject_scale_factor=(gen_cfg.subject_scale_factor
                              if subject_scale_factor is None
                              else subject_scale_factor))


ABLATION_SPLIT_STREAMS = {"train": 1, "val": 2, "test": 3, "test-shifted": 4}


def ablate(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    gen_cfg: GenConfig,
    n_test: int = 128,
    shifted_factor: float = 1.3,
    small_size: tuple[int, int] = (32, 32),
    large_size: tuple[int, int] = (48, 48),
    topo: SkeletonTopology = DEFAULT_TOPOLOGY,
) -> AblationTable:
    """Train the three (resolution, depth-parametrization) variants and
    evaluate each on the scale-shifted split with rescaling off and on
    (scale stats from that variant's training split)."""
    specs = [
        ("small_relative", small_size, DepthMode.ROOT_PLUS_RELATIVE),
        ("small_absolute", small_size, DepthMode.ABSOLUTE_PER_JOINT),
        ("large_absolute", large_size, DepthMode.ABSOLUTE_PER_JOINT),
    ]
    rows = []
    for label, size, mode in specs:
        cfg_train = scaled_gen_config(
            gen_cfg, size, derive_seed(gen_cfg.seed, ABLATION_SPLIT_STREAMS["train"]),
            gen_cfg.n_samples)
        cfg_shifted = scaled_gen_config(
            gen_cfg, size,
            derive_seed(gen_cfg.seed, ABLATION_SPLIT_STREAMS["test-shifted"]),
            n_test, subject_scale_factor=shifted_factor)
        train_set = generate_dataset(cfg_train, topo)
        shifted_set = generate_dataset(cfg_shifted, topo)
        stats = scale_stats_from_samples(train_set, topo)
        mcfg = ModelConfig(**{**model_cfg.to_dict(),
                              "image_size": size, "depth_mode": mode.value})
        params, _ = train(mcfg, train_cfg, train_set, topo=topo)
        off = evaluate(params, mcfg, shifted_set, topo=topo)
        on = evaluate(params, mcfg, shifted_set, rescale=True, scale_stats=stats,
                      topo=topo)
        rows.append(AblationRow(
            label=label, resolution=size, depth_mode=mode.value,
            mpjpe_off=(off.mpjpe_left, off.mpjpe_right),
            mpjpe_on=(on.mpjpe_left, on.mpjpe_right)))
    return AblationTable(rows=tuple(rows))
