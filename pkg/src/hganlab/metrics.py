"""Mode-histogram metrics and surrogate sample-quality scores.

KL and chi-square compare the generated mode histogram against a ground-truth
histogram of the same size. ``mode_score`` and ``frechet_distance`` run on a
small supervised classifier trained on the synthetic data, not on an Inception
network, so their values are only comparable within this package; reports
label them ``surrogate_*``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import xlogy

from .data import DatasetConfig
from .models import ModeClassifier
from .tensor import ContractError

__all__ = [
    "EVAL_HEADER",
    "ModeHistogram",
    "EvalReport",
    "histogram_of",
    "kl_divergence",
    "chi_square",
    "modes_covered",
    "mode_score",
    "mode_score_from_probs",
    "frechet_distance",
    "frechet_from_moments",
    "fit_eval_classifier",
    "evaluate",
    "reports_to_csv",
    "read_reports_csv",
]

EVAL_HEADER = ["variant", "seed", "kl", "chi2", "modes_covered", "mode_score", "frechet", "n", "clf_acc"]


@dataclass
class ModeHistogram:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or np.any(self.counts < 0):
            raise ContractError("counts must be a 1-D non-negative vector")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_modes(self) -> int:
        return len(self.counts)

    @classmethod
    def from_labels(cls, labels, n_modes: int) -> "ModeHistogram":
        return cls(np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_modes)[:n_modes])


def histogram_of(samples, labeler, n_modes: int) -> ModeHistogram:
    """Count samples per mode. ``labeler`` maps points to labels, or has ``predict``."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) == 0:
        raise ContractError("cannot histogram an empty sample set")
    label_fn = labeler.predict if hasattr(labeler, "predict") else labeler
    labels = np.asarray(label_fn(samples))
    if labels.min() < 0 or labels.max() >= n_modes:
        raise ContractError("labeler produced labels outside [0, n_modes)")
    return ModeHistogram.from_labels(labels, n_modes)


def _same_size(a: ModeHistogram, b: ModeHistogram) -> None:
    if a.n_modes != b.n_modes:
        raise ContractError(f"histograms have {a.n_modes} vs {b.n_modes} modes")
    if a.total == 0 or b.total == 0:
        raise ContractError("histograms must be non-empty")


def kl_divergence(p_hist: ModeHistogram, q_hist: ModeHistogram, eps: float = 1e-6) -> float:
    """KL(p || q) between additively smoothed histograms ``(count + eps) / (total + C eps)``."""
    _same_size(p_hist, q_hist)
    c = p_hist.n_modes
    p = (p_hist.counts + eps) / (p_hist.total + c * eps)
    q = (q_hist.counts + eps) / (q_hist.total + c * eps)
    return float(np.sum(xlogy(p, p) - xlogy(p, q)))


def chi_square(observed: ModeHistogram, expected: ModeHistogram, eps: float = 1e-6) -> float:
    """Pearson statistic with the expected counts rescaled to the observed total."""
    _same_size(observed, expected)
    o = observed.counts.astype(np.float64)
    e = expected.counts * (observed.total / expected.total)
    return float(np.sum((o - e) ** 2 / np.maximum(e, eps)))


def modes_covered(hist: ModeHistogram, min_count: int = 1) -> int:
    if min_count < 1:
        raise ContractError("min_count must be >= 1")
    return int(np.sum(hist.counts >= min_count))


def mode_score_from_probs(probs) -> float:
    """exp(E_x KL(p(y|x) || p(y))) with p(y) the batch-average prediction."""
    probs = np.asarray(probs, dtype=np.float64)
    marginal = probs.mean(axis=0)
    kl = np.sum(xlogy(probs, probs) - xlogy(probs, marginal[None, :]), axis=1)
    # exact value is in [1, C]; clip float noise
    return float(np.clip(np.exp(kl.mean()), 1.0, probs.shape[1]))


def mode_score(samples, classifier) -> float:
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < 100:
        raise ContractError("mode_score needs at least 100 samples")
    return mode_score_from_probs(classifier.predict_proba(samples))


def frechet_from_moments(mu1, cov1, mu2, cov2) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The trace of the matrix root is taken from the symmetric form
    ``S1^(1/2) S2 S1^(1/2)``, which has the same spectrum as ``S1 S2``;
    negative eigenvalues from round-off are clipped to zero.
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    cov1, cov2 = np.atleast_2d(cov1).astype(np.float64), np.atleast_2d(cov2).astype(np.float64)
    try:
        w1, v1 = np.linalg.eigh((cov1 + cov1.T) / 2.0)
        root1 = (v1 * np.sqrt(np.clip(w1, 0.0, None))) @ v1.T
        inner = root1 @ cov2 @ root1
        w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(cov1) if cov1.size else float("nan")
        raise np.linalg.LinAlgError(f"eigensolve failed (cond(cov1) = {cond:.3g}): {exc}") from exc
    tr_root = np.sum(np.sqrt(np.clip(w, 0.0, None)))
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_root)


def frechet_distance(real_features, fake_features) -> float:
    real = np.asarray(real_features, dtype=np.float64)
    fake = np.asarray(fake_features, dtype=np.float64)
    if real.ndim == 1:
        real, fake = real[:, None], fake[:, None]
    d = real.shape[1]
    if fake.shape[1] != d:
        raise ContractError("feature widths differ")
    if d > 64 or len(real) < d + 1 or len(fake) < d + 1:
        raise ContractError("need feature_dim <= 64 and at least feature_dim + 1 samples per side")
    return frechet_from_moments(
        real.mean(axis=0), np.cov(real, rowvar=False), fake.mean(axis=0), np.cov(fake, rowvar=False)
    )


@dataclass
class EvalReport:
    kl_divergence: float
    chi_square: float
    modes_covered: int
    mode_score: float
    frechet_distance: float
    sample_count: int
    classifier_accuracy: float
    variant: str = ""
    seed: int = 0

    def row(self) -> list:
        return [
            self.variant,
            self.seed,
            repr(self.kl_divergence),
            repr(self.chi_square),
            self.modes_covered,
            repr(self.mode_score),
            repr(self.frechet_distance),
            self.sample_count,
            repr(self.classifier_accuracy),
        ]

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_CLASSIFIERS: dict = {}


def fit_eval_classifier(dataset: DatasetConfig, seed: int = 0, n_train: int = 20000, epochs: int = 10) -> ModeClassifier:
    """Mode classifier trained on fresh ground-truth samples; cached per (dataset, seed)."""
    key = (repr(dataset), seed, n_train, epochs)
    if key not in _CLASSIFIERS:
        batch = dataset.sample(n_train, seed, stream="classifier-data")
        clf = ModeClassifier(n_classes=dataset.n_modes, epochs=epochs, random_state=seed)
        _CLASSIFIERS[key] = clf.fit(batch.samples, batch.mode_labels)
    return _CLASSIFIERS[key]


def evaluate(model, dataset: DatasetConfig, n_samples: int = 10000, seed: int = 0, min_count: int = 1, classifier=None) -> EvalReport:
    """Score ``n_samples`` generator draws against an equal-size ground-truth set.

    ``model`` needs ``sample(n, random_state)``. Mode histograms use the exact
    dataset oracle; the surrogate scores use ``classifier`` (trained here when
    not supplied).
    """
    truth = dataset.sample(n_samples, seed, stream="eval-truth")
    fake = model.sample(n_samples, random_state=seed)
    labeler = dataset.labeler()
    c = dataset.n_modes
    h_fake = histogram_of(fake, labeler, c)
    h_true = ModeHistogram.from_labels(truth.mode_labels, c)
    clf = classifier if classifier is not None else fit_eval_classifier(dataset, seed)
    acc = float(np.mean(clf.predict(truth.samples) == truth.mode_labels))
    return EvalReport(
        kl_divergence=kl_divergence(h_fake, h_true),
        chi_square=chi_square(h_fake, h_true),
        modes_covered=modes_covered(h_fake, min_count),
        mode_score=mode_score(fake, clf),
        frechet_distance=frechet_distance(clf.transform(truth.samples), clf.transform(fake)),
        sample_count=n_samples,
        classifier_accuracy=acc,
        variant=getattr(model, "variant", ""),
        seed=seed,
    )


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_HEADER)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def read_reports_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != EVAL_HEADER:
        raise ValueError(f"unexpected eval header {header}")
    out = []
    for row in reader:
        variant, seed, kl, chi2, covered, ms, fd, n, acc = row
        out.append(EvalReport(float(kl), float(chi2), int(covered), float(ms), float(fd), int(n), float(acc), variant, int(seed)))
    return out
