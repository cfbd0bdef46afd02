"""Training harness: loss, mini-batch Adam with early stopping, subject-wise
cross-validation, metrics, exact Wilcoxon signed-rank test and ablations."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .attention import SparsityPrior
from .errors import ConfigError, DegenerateTestError, InputError, StratificationError
from .model import ElpgModel, ModelConfig, Montage, ablated_config
from .tensor import Adam, Tensor, backward, no_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 32
    patience: int = 10
    max_epochs: int = 80
    seed: int = 0
    kl_beta: float = 1e-3
    kl_p0: float = 0.2
    folds: int = 10
    val_fraction: float = 0.1
    seq_len: int = 5
    seq_stride: int = 2

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.seq_len < 1 or self.seq_stride < 1:
            raise ConfigError("seq_len and seq_stride must be >= 1")

    @property
    def prior(self) -> SparsityPrior:
        return SparsityPrior(p0=self.kl_p0, beta=self.kl_beta)


@dataclass
class SubjectData:
    """Model-ready inputs of one subject: DE (T, N, B), MI (T, N, P), seed (N, N)."""

    subject_id: str
    label: int
    de: np.ndarray
    mi: np.ndarray
    seed: np.ndarray


@dataclass
class FeatureScaler:
    """Per-column z-scoring of the DE and MI features, fitted on training subjects."""

    de_mean: np.ndarray
    de_std: np.ndarray
    mi_mean: np.ndarray
    mi_std: np.ndarray

    @classmethod
    def fit(cls, subjects: Sequence[SubjectData]) -> "FeatureScaler":
        de = np.concatenate([s.de.reshape(-1, s.de.shape[-1]) for s in subjects])
        mi = np.concatenate([s.mi.reshape(-1, s.mi.shape[-1]) for s in subjects])
        return cls(de.mean(0), np.maximum(de.std(0), 1e-8), mi.mean(0), np.maximum(mi.std(0), 1e-8))

    def transform(self, s: SubjectData) -> SubjectData:
        return replace(s, de=(s.de - self.de_mean) / self.de_std, mi=(s.mi - self.mi_mean) / self.mi_std)


def segment_starts(n_windows: int, seq_len: int, stride: int) -> np.ndarray:
    if n_windows <= seq_len:
        return np.array([0])
    starts = np.arange(0, n_windows - seq_len + 1, stride)
    if starts[-1] != n_windows - seq_len:
        starts = np.append(starts, n_windows - seq_len)
    return starts


@dataclass
class SampleSet:
    de: np.ndarray  # (S, L, N, B)
    mi: np.ndarray
    seed: np.ndarray  # (S, N, N)
    labels: np.ndarray  # (S,)
    owner: np.ndarray  # (S,) subject index

    def __len__(self):
        return len(self.labels)

    def batch(self, idx) -> tuple:
        return self.de[idx], self.mi[idx], self.seed[idx], self.labels[idx]


def build_samples(subjects: Sequence[SubjectData], seq_len: int, stride: int) -> SampleSet:
    """Cut each subject's window sequence into (possibly overlapping) runs of ``seq_len`` windows."""
    de, mi, seed, labels, owner = [], [], [], [], []
    for k, s in enumerate(subjects):
        L = min(seq_len, s.de.shape[0])
        for a in segment_starts(s.de.shape[0], L, stride):
            de.append(s.de[a: a + L])
            mi.append(s.mi[a: a + L])
            seed.append(s.seed)
            labels.append(s.label)
            owner.append(k)
    return SampleSet(np.array(de), np.array(mi), np.array(seed), np.array(labels, dtype=np.int64),
                     np.array(owner, dtype=np.int64))


# ---------------------------------------------------------------------------
# loss


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of (..., 2) logits."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    z = logits.reshape(-1, logits.shape[-1])
    shift = z.data.max(axis=-1, keepdims=True)  # constant shift, exact in value and gradient
    zs = z - shift
    logsumexp = zs.exp().sum(axis=-1).log()
    onehot = np.eye(z.shape[-1])[labels]
    picked = (zs * onehot).sum(axis=-1)
    return (logsumexp - picked).mean()


def loss(logits: Tensor, labels, model: ElpgModel | None = None, prior: SparsityPrior | None = None) -> Tensor:
    """Cross-entropy plus the mask's KL sparsity penalty (weight decay lives in Adam)."""
    ce = cross_entropy(logits, labels)
    if model is None or prior is None:
        return ce
    return ce + model.kl_penalty(prior)


# ---------------------------------------------------------------------------
# early stopping and fold training


class EarlyStopping:
    """Tracks the best validation loss; ``step`` returns True when training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.best_state = None
        self.counter = 0

    def step(self, epoch: int, val_loss: float, state=None) -> bool:
        if val_loss < self.best:
            self.best, self.best_epoch, self.best_state, self.counter = val_loss, epoch, state, 0
        else:
            self.counter += 1
        return self.counter >= self.patience


@dataclass
class TrainResult:
    model: ElpgModel
    best_epoch: int
    stopped_epoch: int
    history: list[dict] = field(default_factory=list)
    scaler: FeatureScaler | None = None


def evaluate(model: ElpgModel, samples: SampleSet, batch_size: int = 64) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and class-1 probabilities over a sample set."""
    if len(samples) == 0:
        return math.nan, np.empty(0)
    total, probs = 0.0, []
    with no_grad():
        for a in range(0, len(samples), batch_size):
            de, mi, seed, y = samples.batch(slice(a, a + batch_size))
            logits = model(de, mi, seed)
            total += cross_entropy(logits, y).item() * len(y)
            z = logits.data - logits.data.max(axis=-1, keepdims=True)
            p = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
            probs.append(p[:, 1])
    return total / len(samples), np.concatenate(probs)


def train_fold(train: Sequence[SubjectData], val: Sequence[SubjectData], cfg: TrainConfig,
               model_cfg: ModelConfig, montage: Montage, model_seed: int | None = None) -> TrainResult:
    """Mini-batch Adam with early stopping on validation cross-entropy; returns the best checkpoint."""
    if not train:
        raise ConfigError("train split is empty")
    scaler = FeatureScaler.fit(train)
    tr = build_samples([scaler.transform(s) for s in train], cfg.seq_len, cfg.seq_stride)
    va = build_samples([scaler.transform(s) for s in (val or train)], cfg.seq_len, cfg.seq_stride)
    model = ElpgModel(model_cfg, montage, seed=cfg.seed if model_seed is None else model_seed)
    frozen = model.frozen_names()
    for p in model.parameters():
        p.requires_grad = p.name not in frozen
    params = model.trainable()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay, no_decay=ElpgModel.no_decay_names(params))
    prior = cfg.prior
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience)
    history, epoch = [], 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(tr))
        run = 0.0
        for a in range(0, len(order), cfg.batch_size):
            de, mi, seed, y = tr.batch(order[a: a + cfg.batch_size])
            batch_loss = loss(model(de, mi, seed), y, model, prior)
            backward(batch_loss, inputs=params)
            opt.step()
            run += batch_loss.item() * len(y)
        val_loss, _ = evaluate(model, va)
        history.append({"epoch": epoch, "train_loss": run / len(tr), "val_loss": val_loss})
        log.debug("epoch %d train %.4f val %.4f", epoch, run / len(tr), val_loss)
        if stopper.step(epoch, val_loss, model.state_dict()):
            break
    model.load_state_dict(stopper.best_state)
    return TrainResult(model, stopper.best_epoch, epoch, history, scaler)


def predict_windows(result: TrainResult, subject: SubjectData, cfg: TrainConfig) -> np.ndarray:
    """Class predictions for every window-sequence sample of one subject."""
    s = result.scaler.transform(subject) if result.scaler else subject
    _, probs = evaluate(result.model, build_samples([s], cfg.seq_len, cfg.seq_stride))
    return (probs >= 0.5).astype(np.int64)


def majority_vote(preds) -> int:
    """Subject label from window predictions; a tie goes to the positive class."""
    preds = np.asarray(preds)
    return int(2 * preds.sum() >= len(preds))


# ---------------------------------------------------------------------------
# folds and metrics


@dataclass
class FoldPlan:
    train: list[str]
    val: list[str]
    test: list[str]


def make_folds(subject_ids: Sequence[str], labels: Sequence[int], k: int = 10, seed: int = 0,
               val_fraction: float = 0.1) -> list[FoldPlan]:
    """Stratified subject-wise k-fold plan with a stratified validation split of each training set."""
    ids = list(subject_ids)
    labels = np.asarray(labels)
    if len(set(ids)) != len(ids):
        raise InputError("subject ids must be unique")
    if len(ids) < k:
        raise ConfigError(f"need at least {k} subjects for {k} folds, got {len(ids)}")
    rng = np.random.default_rng(seed)
    fold_of = {}
    offset = 0
    for c in (0, 1):
        members = [ids[i] for i in np.flatnonzero(labels == c)]
        if len(members) < k:
            raise StratificationError(f"class {c} has {len(members)} subjects; every one of {k} folds needs both classes")
        for j, i in enumerate(rng.permutation(len(members))):
            fold_of[members[i]] = (j + offset) % k
        offset += len(members)
    label_of = dict(zip(ids, labels))
    plans = []
    for f in range(k):
        test = [s for s in ids if fold_of[s] == f]
        rest = [s for s in ids if fold_of[s] != f]
        val = []
        for c in (0, 1):
            pool = [s for s in rest if label_of[s] == c]
            n_val = max(1, int(round(val_fraction * len(pool)))) if len(pool) > 1 else 0
            val += [pool[i] for i in sorted(rng.choice(len(pool), n_val, replace=False))]
        train = [s for s in rest if s not in val]
        plans.append(FoldPlan(train, sorted(val, key=ids.index), test))
    return plans


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_tuple(self):
        return self.accuracy, self.precision, self.recall, self.f1


def compute_metrics(preds, labels) -> Metrics:
    """Confusion-matrix metrics with label 1 as the positive class; 0/0 is reported as 0."""
    preds = np.asarray(preds).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    if preds.shape != labels.shape:
        raise InputError(f"length mismatch: {preds.shape} predictions vs {labels.shape} labels")
    if preds.size == 0:
        raise InputError("need at least one prediction")
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    acc = float(np.mean(preds == labels))
    pre = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * pre * rec / (pre + rec) if pre + rec else 0.0
    return Metrics(acc, pre, rec, f1)


METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass
class MetricsReport:
    folds: list[Metrics]
    epoch_folds: list[Metrics] = field(default_factory=list)

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.folds])

    def mean(self, name: str) -> float:
        return float(np.mean(self.values(name)))

    def std(self, name: str) -> float:
        v = self.values(name)
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    def epoch_mean(self, name: str) -> float:
        return float(np.mean([getattr(m, name) for m in self.epoch_folds])) if self.epoch_folds else math.nan


# trainer(train, val, fold_index) -> predictor(subject) -> window-level predictions
Trainer = Callable[[list, list, int], Callable[[SubjectData], np.ndarray]]


def elpg_trainer(cfg: TrainConfig, model_cfg: ModelConfig, montage: Montage) -> Trainer:
    def fit(train, val, fold):
        result = train_fold(train, val, cfg, model_cfg, montage, model_seed=cfg.seed + fold)
        log.info("fold %d: best epoch %d, stopped at %d", fold, result.best_epoch, result.stopped_epoch)
        return lambda subject: predict_windows(result, subject, cfg)

    return fit


def cross_validate(subjects: Sequence[SubjectData], cfg: TrainConfig, trainer: Trainer | None = None,
                   model_cfg: ModelConfig | None = None, montage: Montage | None = None,
                   plans: list[FoldPlan] | None = None, jobs: int = 1) -> MetricsReport:
    """Subject-wise k-fold CV; each test subject is labelled by majority vote over its windows.

    With ``jobs > 1`` folds train on a thread pool; results are still collected in fold order.
    """
    by_id = {s.subject_id: s for s in subjects}
    if plans is None:
        plans = make_folds(list(by_id), [s.label for s in subjects], cfg.folds, cfg.seed, cfg.val_fraction)
    if trainer is None:
        if model_cfg is None or montage is None:
            raise ConfigError("cross_validate needs a trainer or a model config and montage")
        trainer = elpg_trainer(cfg, model_cfg, montage)
    for f, plan in enumerate(plans):
        if len({by_id[s].label for s in plan.test}) < 2:
            raise StratificationError(f"fold {f} test split holds a single class")

    def run(f):
        plan = plans[f]
        predict = trainer([by_id[s] for s in plan.train], [by_id[s] for s in plan.val], f)
        subj_pred, subj_true, win_pred, win_true = [], [], [], []
        for sid in plan.test:
            w = np.asarray(predict(by_id[sid]))
            subj_pred.append(majority_vote(w))
            subj_true.append(by_id[sid].label)
            win_pred.append(w)
            win_true.append(np.full(len(w), by_id[sid].label))
        return (compute_metrics(subj_pred, subj_true),
                compute_metrics(np.concatenate(win_pred), np.concatenate(win_true)))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(len(plans))))
    else:
        results = [run(f) for f in range(len(plans))]
    return MetricsReport([r[0] for r in results], [r[1] for r in results])


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


def _sign_sums(ranks: np.ndarray, chunk: int = 1 << 16):
    """Yield rank sums of the positive signs for every one of the 2**n sign assignments."""
    n = len(ranks)
    bits = 1 << np.arange(n)
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n))
        yield ((codes[:, None] & bits) > 0) @ ranks


def wilcoxon_signed_rank(a, b, exact_max_n: int = 20) -> float:
    """Two-sided p-value of the Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped and tied magnitudes get midranks. For up to
    ``exact_max_n`` pairs the null distribution is enumerated exactly; larger
    samples use the tie-corrected normal approximation.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if d.ndim != 1:
        raise InputError("wilcoxon_signed_rank: inputs must be 1-D and of equal length")
    d = d[d != 0]
    if d.size == 0:
        raise DegenerateTestError("all paired differences are zero")
    n = d.size
    if n < 5:
        raise InputError(f"need at least 5 non-zero differences, got {n}")
    ranks = rankdata(np.abs(d))
    w_plus = ranks[d > 0].sum()
    centre = ranks.sum() / 2.0
    dev = abs(w_plus - centre) - 1e-9
    if n <= exact_max_n:
        hits = sum(int(np.sum(np.abs(s - centre) >= dev)) for s in _sign_sums(ranks))
        return hits / float(1 << n)
    _, counts = np.unique(ranks, return_counts=True)
    var = (n * (n + 1) * (2 * n + 1) - np.sum(counts**3 - counts) / 2.0) / 24.0
    return float(min(1.0, 2.0 * norm.sf(max(dev, 0.0) / math.sqrt(var))))


# ---------------------------------------------------------------------------
# ablations


@dataclass(frozen=True)
class AblationSpec:
    name: str
    disable_prior_gate: bool = False
    freeze_edge_mask: bool = False
    drop_mi: bool = False
    drop_attention_and_mi: bool = False

    def apply(self, cfg: ModelConfig) -> ModelConfig:
        return ablated_config(cfg, disable_prior_gate=self.disable_prior_gate,
                              freeze_edge_mask=self.freeze_edge_mask, drop_mi=self.drop_mi,
                              drop_attention_and_mi=self.drop_attention_and_mi)


ABLATIONS = (
    AblationSpec("Full ELPG-DTFS"),
    AblationSpec("- Prior knowledge", disable_prior_gate=True),
    AblationSpec("- Learnable adjacency", freeze_edge_mask=True),
    AblationSpec("- MI", drop_mi=True),
    AblationSpec("- Attention & MI", drop_attention_and_mi=True),
)


def run_ablation(subjects: Sequence[SubjectData], cfg: TrainConfig, model_cfg: ModelConfig, montage: Montage,
                 specs: Sequence[AblationSpec] = ABLATIONS, jobs: int = 1) -> dict[str, MetricsReport]:
    """Cross-validate every variant on identical folds and seeds; the full model comes first."""
    specs = list(specs)
    full = [s for s in specs if s == AblationSpec(s.name)]
    specs = full + [s for s in specs if s not in full]
    by_id = {s.subject_id: s for s in subjects}
    plans = make_folds(list(by_id), [s.label for s in subjects], cfg.folds, cfg.seed, cfg.val_fraction)
    table = {}
    for spec in specs:
        log.info("ablation variant %s", spec.name)
        table[spec.name] = cross_validate(subjects, cfg, model_cfg=spec.apply(model_cfg), montage=montage,
                                          plans=plans, jobs=jobs)
    return table


def format_results(table: dict[str, MetricsReport]) -> tuple[str, str]:
    """Plain-text table and CSV with per-fold rows plus mean and std rows per variant."""
    header = ["variant", "fold", "Acc", "Pre", "Rec", "F1", "epoch_Acc"]
    rows = []
    for name, rep in table.items():
        for f, m in enumerate(rep.folds):
            ep = rep.epoch_folds[f].accuracy if f < len(rep.epoch_folds) else math.nan
            rows.append([name, str(f), *(f"{v:.4f}" for v in m.as_tuple()), f"{ep:.4f}"])
        rows.append([name, "mean", *(f"{rep.mean(k):.4f}" for k in METRIC_NAMES),
                     f"{rep.epoch_mean('accuracy'):.4f}"])
        rows.append([name, "std", *(f"{rep.std(k):.4f}" for k in METRIC_NAMES), ""])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + rows) + "\n"
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows([header] + rows)
    return text, buf.getvalue()


def write_results(table: dict[str, MetricsReport], out_dir, stem: str = "results") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text, csv_text = format_results(table)
    txt_path, csv_path = out_dir / f"{stem}.txt", out_dir / f"{stem}.csv"
    txt_path.write_text(text)
    csv_path.write_text(csv_text)
    return txt_path, csv_path
