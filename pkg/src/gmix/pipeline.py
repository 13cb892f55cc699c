"""Semi-supervised pseudo-labeling training loop.

Each step combines supervised cross-entropy on a labeled batch,
confidence-masked consistency between weak and strong views of an
unlabeled batch (with optional per-class curriculum thresholds), the
moment constraint on the weak-view embeddings, and the outlier gate.
Gradients are clipped to a global norm and applied with SGD momentum.

The moment loss consumes the same unlabeled batch as the consistency
loss, on the weak view by default: the weak view is the model's clean
estimate, while the strong view carries deliberate augmentation noise
that a shape constraint should not chase. Both choices are config
options. Pseudo-labels are extracted from detached weak-view
probabilities, so no gradient flows through the labeling decision.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Parameter, Tape, Tensor, backward, clip_global_norm, tsum
from .datasets import Dataset, SyntheticSpec, augment_strong, augment_weak, generate
from .heads import HEAD_KINDS, Backbone, init_head, log_conditional
from .metrics import MetricsReport, compactness, pseudo_quality
from .moments import MomentSpec, mom_loss
from .outlier import OutlierGate, fit_threshold, mask as gate_mask


@dataclass(frozen=True)
class GateConfig:
    """Outlier-gate settings as they appear in run configuration."""

    enabled: bool = False
    percentile: float = 90.0
    mode: str = "max"
    refresh_every: int = 50
    exclude_from_mom: bool = True

    def __post_init__(self) -> None:
        # Same constraints as the gate itself, enforced at parse time.
        OutlierGate(self.percentile, self.mode, self.refresh_every)

    def build(self) -> OutlierGate:
        return OutlierGate(
            percentile=self.percentile,
            mode=self.mode,
            refresh_every=self.refresh_every,
        )


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run depends on besides the dataset."""

    seed: int = 0
    steps: int = 4000
    eval_every: int = 200
    labeled_batch: int = 16
    unlabeled_ratio: int = 7
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    clip_norm: float = 1.0
    conf_threshold: float = 0.95
    lambda_u: float = 1.0
    curriculum: bool = True
    ema_decay: float = 0.0
    head_kind: str = "aagmm"
    latent_dim: int = 8
    moments: MomentSpec = field(default_factory=lambda: MomentSpec(max_order=1))
    mom_view: str = "weak"
    gate: GateConfig = field(default_factory=GateConfig)

    def __post_init__(self) -> None:
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"head_kind must be one of {HEAD_KINDS}")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ValueError("learning rate and clip norm must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0 or self.lambda_u < 0:
            raise ValueError("weight decay and lambda_u must be nonnegative")
        if not 0.0 < self.conf_threshold <= 1.0:
            raise ValueError("conf_threshold must be in (0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")
        if self.steps < 0 or self.eval_every < 1:
            raise ValueError("steps must be >= 0 and eval_every >= 1")
        if self.labeled_batch < 1 or self.unlabeled_ratio < 1 or self.latent_dim < 1:
            raise ValueError("batch sizes and latent_dim must be positive")
        if self.mom_view not in ("weak", "strong"):
            raise ValueError("mom_view must be 'weak' or 'strong'")
        if self.head_kind == "linear":
            if self.gate.enabled:
                raise ValueError("the outlier gate needs a mixture head")
            if self.moments.max_order >= 1 and self.moments.mode == "per-cluster-soft":
                raise ValueError(
                    "per-cluster moment constraints need a mixture head; use global mode"
                )

    @property
    def ssl_active(self) -> bool:
        return self.lambda_u > 0 or self.moments.max_order >= 1


class SgdMomentum:
    """Plain SGD with momentum; weight decay is folded into the gradient."""

    def __init__(self, params, lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0) -> None:
        self.params: list[Parameter] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if not p.trainable:
                continue
            g = p.grad + self.weight_decay * p.value
            v *= self.momentum
            v += g
            p.value -= self.lr * v


@dataclass
class TrainState:
    backbone: Backbone
    head: object
    optimizer: SgdMomentum
    gate: OutlierGate
    unlabeled_status: np.ndarray
    rng: np.random.Generator
    step: int = 0
    ema: dict[str, np.ndarray] | None = None

    def parameters(self) -> list[Parameter]:
        return self.optimizer.params

    def class_counts(self) -> np.ndarray:
        """Current per-class confident-prediction counts over the pool."""
        confident = self.unlabeled_status[self.unlabeled_status >= 0]
        return np.bincount(confident, minlength=self.head.n_classes)


@dataclass
class UnlabeledBatch:
    indices: np.ndarray
    weak: np.ndarray
    strong: np.ndarray
    true_labels: np.ndarray
    outlier_flags: np.ndarray


@dataclass
class StepStats:
    loss_total: float
    loss_sup: float
    loss_unsup: float
    loss_mom_total: float
    mom_terms: dict[int, float]
    pseudo_rate: float
    pseudo_acc: float
    outlier_tau: float
    outlier_rate: float
    grad_scale: float


@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray
    compactness: float


def init_state(config: RunConfig, dataset: Dataset) -> TrainState:
    ss = np.random.SeedSequence(config.seed)
    backbone_seed, head_seed, batch_seed = ss.spawn(3)
    n_classes = dataset.spec.n_classes
    backbone = Backbone(dataset.features.shape[1], config.latent_dim, seed=backbone_seed)
    head = init_head(config.head_kind, n_classes, config.latent_dim, seed=head_seed)
    params = backbone.parameters() + head.parameters()
    optimizer = SgdMomentum(params, config.lr, config.momentum, config.weight_decay)
    ema = None
    if config.ema_decay > 0:
        ema = {p.name: p.value.copy() for p in params}
    n_unlabeled = int((dataset.split == "unlabeled").sum())
    return TrainState(
        backbone=backbone,
        head=head,
        optimizer=optimizer,
        gate=config.gate.build(),
        unlabeled_status=np.full(n_unlabeled, -1, dtype=np.int64),
        rng=np.random.default_rng(batch_seed),
        ema=ema,
    )


def sample_labeled(dataset: Dataset, rng: np.random.Generator,
                   config: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    n = dataset.labeled_x.shape[0]
    idx = rng.choice(n, size=config.labeled_batch, replace=config.labeled_batch > n)
    x = augment_weak(dataset.labeled_x[idx], dataset.feature_scale, rng)
    return x, dataset.labeled_y[idx]


def sample_unlabeled(dataset: Dataset, rng: np.random.Generator,
                     config: RunConfig) -> UnlabeledBatch:
    m = config.labeled_batch * config.unlabeled_ratio
    n = dataset.unlabeled_x.shape[0]
    idx = rng.choice(n, size=m, replace=m > n)
    raw = dataset.unlabeled_x[idx]
    return UnlabeledBatch(
        indices=idx,
        weak=augment_weak(raw, dataset.feature_scale, rng),
        strong=augment_strong(raw, dataset.feature_scale, rng),
        true_labels=dataset.unlabeled_y[idx],
        outlier_flags=dataset.unlabeled_outlier[idx],
    )


def pseudo_label(weak_probs: np.ndarray, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hard labels by row argmax (ties to the lowest class index) and the
    confidence mask against each label's threshold."""
    labels = np.argmax(weak_probs, axis=1)
    confident = weak_probs.max(axis=1) >= thresholds[labels]
    return labels, confident


def curriculum_thresholds(counts: np.ndarray, conf_threshold: float) -> np.ndarray:
    """Per-class thresholds scaled by how readily each class is learned.

    Classes with fewer confident predictions get lower thresholds
    (floored at 0.5) so they can catch up; with no signal yet every
    class uses the base threshold.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.max() <= 0:
        return np.full(counts.shape, conf_threshold)
    return np.maximum(0.5, conf_threshold * counts / counts.max())


def _nll(log_cond: Tensor, labels: np.ndarray, n_classes: int) -> Tensor:
    onehot = np.eye(n_classes)[labels]
    return -tsum(log_cond * Tensor(onehot), axis=1)


def train_step(state: TrainState, labeled: tuple[np.ndarray, np.ndarray],
               unlabeled: UnlabeledBatch | None, config: RunConfig) -> StepStats:
    n_classes = state.head.n_classes
    state.optimizer.zero_grad()
    tape = Tape()

    xl, yl = labeled
    zl = state.backbone.embed(Tensor(xl), tape)
    loss_sup = _nll(log_conditional(state.head, zl, tape), yl, n_classes).mean()
    loss_total = loss_sup

    loss_unsup_val = 0.0
    mom_total_val = 0.0
    mom_terms: dict[int, float] = {}
    rate, acc = 0.0, 1.0
    outlier_rate = 0.0

    if unlabeled is not None:
        m = unlabeled.weak.shape[0]
        zw = state.backbone.embed(Tensor(unlabeled.weak), tape)
        weak_scores = state.head.class_log_scores(zw, tape)
        shifted = weak_scores.data - weak_scores.data.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)

        if config.gate.enabled and state.gate.fitted:
            keep_gate = gate_mask(state.gate, state.head, zw.data)
            outlier_rate = float(1.0 - keep_gate.mean())
        else:
            keep_gate = np.ones(m, dtype=bool)

        if config.curriculum:
            thresholds = curriculum_thresholds(state.class_counts(), config.conf_threshold)
        else:
            thresholds = np.full(n_classes, config.conf_threshold)
        labels_u, confident = pseudo_label(probs, thresholds)
        kept = confident & keep_gate
        rate, acc = pseudo_quality(kept, labels_u, unlabeled.true_labels)

        zs = None
        if config.lambda_u > 0:
            zs = state.backbone.embed(Tensor(unlabeled.strong), tape)
            nll_u = _nll(log_conditional(state.head, zs, tape), labels_u, n_classes)
            loss_unsup = tsum(nll_u * Tensor(kept.astype(np.float64))) / m
            loss_unsup_val = loss_unsup.item()
            loss_total = loss_total + config.lambda_u * loss_unsup

        if config.moments.max_order >= 1:
            mom_mask = keep_gate if config.gate.exclude_from_mom else np.ones(m, dtype=bool)
            if mom_mask.any():
                if config.mom_view == "strong" and zs is None:
                    zs = state.backbone.embed(Tensor(unlabeled.strong), tape)
                src = zw if config.mom_view == "weak" else zs
                head_arg = state.head if config.moments.mode == "per-cluster-soft" else None
                mom_total, per_order = mom_loss(
                    src, config.moments, head=head_arg, sample_mask=mom_mask
                )
                mom_total_val = mom_total.item()
                mom_terms = {p: t.item() for p, t in per_order.items()}
                loss_total = loss_total + mom_total

        # Track each visited sample's current confident prediction (or -1):
        # the per-class census of these statuses drives the curriculum.
        fixed_confident = probs.max(axis=1) >= config.conf_threshold
        state.unlabeled_status[unlabeled.indices] = np.where(
            fixed_confident, labels_u, -1
        )

    backward(loss_total)
    grad_scale = clip_global_norm(state.parameters(), config.clip_norm)
    state.optimizer.step()
    if state.ema is not None:
        d = config.ema_decay
        for p in state.parameters():
            state.ema[p.name] *= d
            state.ema[p.name] += (1.0 - d) * p.value
    state.step += 1

    return StepStats(
        loss_total=loss_total.item(),
        loss_sup=loss_sup.item(),
        loss_unsup=loss_unsup_val,
        loss_mom_total=mom_total_val,
        mom_terms=mom_terms,
        pseudo_rate=rate,
        pseudo_acc=acc,
        outlier_tau=state.gate.tau if state.gate.fitted else 0.0,
        outlier_rate=outlier_rate,
        grad_scale=grad_scale,
    )


class _SwappedParams:
    """Temporarily substitute EMA shadow values for evaluation."""

    def __init__(self, state: TrainState) -> None:
        self.state = state
        self.saved: list[np.ndarray] | None = None

    def __enter__(self):
        if self.state.ema is not None:
            self.saved = [p.value.copy() for p in self.state.parameters()]
            for p in self.state.parameters():
                p.value[...] = self.state.ema[p.name]
        return self

    def __exit__(self, *exc):
        if self.saved is not None:
            for p, saved in zip(self.state.parameters(), self.saved):
                p.value[...] = saved
        return False


def evaluate(state: TrainState, x: np.ndarray, y: np.ndarray) -> EvalResult:
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty set")
    with _SwappedParams(state):
        z = state.backbone.embed(Tensor(x))
        scores = state.head.class_log_scores(z).data
    pred = np.argmax(scores, axis=1)
    accuracy = float((pred == y).mean())
    n_classes = state.head.n_classes
    per_class = np.array(
        [float((pred[y == c] == c).mean()) if (y == c).any() else 1.0
         for c in range(n_classes)]
    )
    if state.head.generative:
        compact = compactness(z.data, pred, state.head.centers.value)
    else:
        compact = -1.0  # sentinel: the linear head has no cluster centers
    return EvalResult(accuracy=accuracy, per_class=per_class, compactness=compact)


def _metrics_row(step: int, stats: StepStats | None, ev: EvalResult) -> dict:
    mom_terms = stats.mom_terms if stats else {}
    return {
        "step": step,
        "loss_sup": stats.loss_sup if stats else 0.0,
        "loss_unsup": stats.loss_unsup if stats else 0.0,
        "loss_mom_total": stats.loss_mom_total if stats else 0.0,
        "loss_mom_p1": mom_terms.get(1, 0.0),
        "loss_mom_p2": mom_terms.get(2, 0.0),
        "loss_mom_p3": mom_terms.get(3, 0.0),
        "loss_mom_p4": mom_terms.get(4, 0.0),
        "pseudo_rate": stats.pseudo_rate if stats else 0.0,
        "pseudo_acc": stats.pseudo_acc if stats else 1.0,
        "outlier_tau": stats.outlier_tau if stats else 0.0,
        "outlier_rate": stats.outlier_rate if stats else 0.0,
        "test_acc": ev.accuracy,
        "compactness": ev.compactness,
    }


def run(config: RunConfig, data_spec: SyntheticSpec, out_dir=None):
    """Execute a full training run.

    Emits one metrics row at step 0 and every ``eval_every`` steps
    (always including the final step). When ``out_dir`` is given, writes
    metrics.csv, manifest.json, and checkpoint.bin there. Returns
    ``(report, state, manifest)``.
    """
    from .checkpoint import model_arrays, save_checkpoint
    from .config import config_hash, flatten_config

    started = time.perf_counter()
    dataset = generate(data_spec)
    state = init_state(config, dataset)
    report = MetricsReport()
    stats: StepStats | None = None
    report.append(_metrics_row(0, None, evaluate(state, dataset.test_x, dataset.test_y)))

    for step in range(1, config.steps + 1):
        if config.gate.enabled and state.step % state.gate.refresh_every == 0:
            labeled_z = state.backbone.embed(Tensor(dataset.labeled_x))
            fit_threshold(state.gate, labeled_z.data, state.head)
        labeled = sample_labeled(dataset, state.rng, config)
        unlabeled = sample_unlabeled(dataset, state.rng, config) if config.ssl_active else None
        try:
            stats = train_step(state, labeled, unlabeled, config)
        except FloatingPointError as e:
            raise FloatingPointError(f"step {step}: {e}") from e
        if step % config.eval_every == 0 or step == config.steps:
            ev = evaluate(state, dataset.test_x, dataset.test_y)
            report.append(_metrics_row(step, stats, ev))

    flat = flatten_config(config, data_spec)
    manifest = {
        "seed": config.seed,
        "config": flat,
        "config_hash": config_hash(flat),
        "wall_clock_sec": time.perf_counter() - started,
        "final_metrics": report.final,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.to_csv(out_dir / "metrics.csv")
        with open(out_dir / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
        save_checkpoint(out_dir / "checkpoint.bin", model_arrays(state.backbone, state.head))
    return report, state, manifest
