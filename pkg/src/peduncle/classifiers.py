"""Per-point classifiers: a two-class kernel SVM and an HSV naive Bayes model.

The SVM is trained with sequential minimal optimization on the dual problem
(max-violating-pair working-set selection, seeded random fallback) and
standardizes its input features internally. The naive Bayes model fits
per-class Gaussians over (cos h, sin h, s, v); the trigonometric hue
encoding keeps red hues continuous across the 0/360 degree wrap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTraining, FormatError, InvalidInput

VARIANCE_FLOOR = 1e-6


@dataclass
class SvmParams:
    kernel: str = "rbf"          # "rbf" | "linear"
    c: float = 10.0
    gamma: float = 1.0 / 36.0
    tol: float = 1e-3
    max_passes: int = 100        # iteration budget = max_passes * n_samples
    seed: int = 0


@dataclass
class SvmModel:
    kernel: str
    gamma: float
    c: float
    bias: float
    dual_coefs: np.ndarray          # alpha_i * y_i, one per support vector
    support_vectors: np.ndarray     # standardized rows (n_sv, dim)
    feature_means: np.ndarray
    feature_scales: np.ndarray
    tol: float = 1e-3


def _kernel(kind: str, gamma: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gram matrix between row sets a (n, d) and b (m, d).

    Each entry is computed with per-pair reductions (no batched matmul), so
    a row's values are bit-identical whether scored alone or in a batch.
    Rows of `a` are processed in chunks to bound the broadcast workspace.
    """
    if kind not in ("linear", "rbf"):
        raise InvalidInput(f"unknown kernel {kind!r}")
    n, m = a.shape[0], b.shape[0]
    out = np.empty((n, m))
    chunk = max(1, 4_000_000 // max(m * a.shape[1], 1))
    for start in range(0, n, chunk):
        ac = a[start : start + chunk]
        if kind == "linear":
            out[start : start + chunk] = np.einsum("ik,jk->ij", ac, b)
        else:
            d = ac[:, None, :] - b[None, :, :]
            out[start : start + chunk] = np.exp(-gamma * np.einsum("ijk,ijk->ij", d, d))
    return out


def svm_train(features: np.ndarray, labels: np.ndarray, params: SvmParams | None = None) -> SvmModel:
    """Train a two-class SVM with SMO on the dual problem.

    labels must be +1 / -1 with both classes present. Features are
    standardized internally; the stored model satisfies the KKT conditions
    within params.tol on the training set (given enough iteration budget).
    """
    if params is None:
        params = SvmParams()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise InvalidInput("features/labels shape mismatch")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("non-finite feature value")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidInput("labels must be +1/-1")
    if np.all(y > 0) or np.all(y < 0):
        raise DegenerateTraining("training needs both classes")

    means = x.mean(axis=0)
    stds = x.std(axis=0)
    scales = np.where(stds > 1e-12, stds, 1.0)
    xs = (x - means) / scales

    n = xs.shape[0]
    c = float(params.c)
    tol = float(params.tol)
    k = _kernel(params.kernel, params.gamma, xs, xs)
    q = k * np.outer(y, y)

    alpha = np.zeros(n)
    grad = -np.ones(n)              # gradient of 1/2 a'Qa - sum(a)
    rng = np.random.default_rng(params.seed)
    eps_b = 1e-12 * max(c, 1.0)
    max_iter = max(1000, params.max_passes * n)

    def _working_sets():
        yg = -y * grad
        up = ((y > 0) & (alpha < c - eps_b)) | ((y < 0) & (alpha > eps_b))
        low = ((y > 0) & (alpha > eps_b)) | ((y < 0) & (alpha < c - eps_b))
        return yg, np.flatnonzero(up), np.flatnonzero(low)

    for _ in range(max_iter):
        yg, up_idx, low_idx = _working_sets()
        if up_idx.size == 0 or low_idx.size == 0:
            break
        i = up_idx[np.argmax(yg[up_idx])]
        j = low_idx[np.argmin(yg[low_idx])]
        if yg[i] - yg[j] <= tol:
            break
        eta = k[i, i] + k[j, j] - 2.0 * k[i, j]
        if eta <= 1e-12:
            # flat direction: fall back to a random second index that still
            # permits progress; skip the round if none does
            perm = rng.permutation(low_idx)
            eta = 0.0
            for cand in perm:
                e = k[i, i] + k[cand, cand] - 2.0 * k[i, cand]
                if e > 1e-12 and yg[i] - yg[cand] > tol:
                    j, eta = cand, e
                    break
            if eta <= 1e-12:
                break

        # two-variable analytic update preserving sum(alpha * y)
        yi, yj = y[i], y[j]
        delta = (yg[i] - yg[j]) / eta
        ai_old, aj_old = alpha[i], alpha[j]
        ai = ai_old + yi * delta
        aj = aj_old - yj * delta
        # clip to the box along the constraint line
        if yi == yj:
            total = ai_old + aj_old
            lo, hi = max(0.0, total - c), min(c, total)
            ai = min(max(ai, lo), hi)
            aj = total - ai
        else:
            diff = ai_old - aj_old
            lo, hi = max(0.0, diff), min(c, c + diff)
            ai = min(max(ai, lo), hi)
            aj = ai - diff
        dai, daj = ai - ai_old, aj - aj_old
        if abs(dai) < 1e-15 and abs(daj) < 1e-15:
            break
        alpha[i], alpha[j] = ai, aj
        grad += q[:, i] * dai + q[:, j] * daj

    yg, up_idx, low_idx = _working_sets()
    if up_idx.size and low_idx.size:
        bias = (np.max(yg[up_idx]) + np.min(yg[low_idx])) / 2.0
    else:
        # every alpha pinned at a bound: least-squares threshold over all points
        bias = float(np.mean(y - k @ (alpha * y)))
    sv = alpha > 1e-10
    return SvmModel(
        kernel=params.kernel,
        gamma=params.gamma,
        c=c,
        bias=float(bias),
        dual_coefs=(alpha * y)[sv],
        support_vectors=xs[sv],
        feature_means=means,
        feature_scales=scales,
        tol=tol,
    )


def svm_score(model: SvmModel, f: np.ndarray) -> float:
    """Signed margin for one feature vector (positive class when > 0)."""
    return float(svm_score_batch(model, np.asarray(f, dtype=np.float64)[None, :])[0])


def svm_score_batch(model: SvmModel, feats: np.ndarray) -> np.ndarray:
    """Signed margins for (N, dim) feature rows."""
    feats = np.asarray(feats, dtype=np.float64)
    if not np.all(np.isfinite(feats)):
        raise InvalidInput("non-finite feature value")
    xs = (feats - model.feature_means) / model.feature_scales
    k = _kernel(model.kernel, model.gamma, xs, model.support_vectors)
    # per-row reduction keeps single and batched scoring bit-identical
    return np.einsum("ij,j->i", k, model.dual_coefs) + model.bias


def kkt_violations(model: SvmModel, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample KKT violation magnitudes of a trained model on its data.

    Zero within tol everywhere certifies dual optimality:
      alpha == 0  ->  y*f >= 1,   alpha == C  ->  y*f <= 1,
      0 < alpha < C  ->  y*f == 1.
    """
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    margins = y * svm_score_batch(model, features)
    # recover per-sample alpha by matching rows against stored SVs
    xs = (np.asarray(features, dtype=np.float64) - model.feature_means) / model.feature_scales
    alphas = np.zeros(len(xs))
    sv_map = {}
    for r, coef in zip(model.support_vectors, model.dual_coefs):
        sv_map.setdefault(r.tobytes(), []).append(abs(coef))
    for i, row in enumerate(xs):
        stack = sv_map.get(row.tobytes())
        if stack:
            alphas[i] = stack.pop()
    viol = np.zeros(len(xs))
    at_zero = alphas <= 1e-10
    at_c = alphas >= model.c - 1e-10 * max(model.c, 1.0)
    interior = ~at_zero & ~at_c
    viol[at_zero] = np.maximum(0.0, 1.0 - margins[at_zero])
    viol[at_c] = np.maximum(0.0, margins[at_c] - 1.0)
    viol[interior] = np.abs(margins[interior] - 1.0)
    return viol


def save_svm(path, model: SvmModel) -> None:
    """ASCII model file: header, means, scales, then one SV per line."""
    lines = [
        f"svm v1 {model.kernel} {repr(float(model.gamma))} {repr(float(model.c))} "
        f"{repr(float(model.bias))} {len(model.dual_coefs)}",
        " ".join(repr(float(v)) for v in model.feature_means),
        " ".join(repr(float(v)) for v in model.feature_scales),
    ]
    for coef, sv in zip(model.dual_coefs, model.support_vectors):
        lines.append(repr(float(coef)) + " " + " ".join(repr(float(v)) for v in sv))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_svm(path) -> SvmModel:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 7 or header[0] != "svm" or header[1] != "v1":
            raise FormatError(f"{path}: not an svm v1 file")
        kernel, gamma, c, bias, n_sv = header[2], float(header[3]), float(header[4]), float(header[5]), int(header[6])
        means = np.array([float(v) for v in fh.readline().split()])
        scales = np.array([float(v) for v in fh.readline().split()])
        coefs = np.empty(n_sv)
        svs = np.empty((n_sv, len(means)))
        for i in range(n_sv):
            fields = fh.readline().split()
            if len(fields) != len(means) + 1:
                raise FormatError(f"{path}: malformed support vector line {i + 1}")
            coefs[i] = float(fields[0])
            svs[i] = [float(v) for v in fields[1:]]
    return SvmModel(kernel, gamma, c, bias, coefs, svs, means, scales)


# ---------------------------------------------------------------------------
# HSV naive Bayes (pepper vs everything else)
# ---------------------------------------------------------------------------


@dataclass
class NaiveBayesHsv:
    """Gaussian class-conditionals over (cos h, sin h, s, v); row 0 = pepper."""

    means: np.ndarray        # (2, 4)
    variances: np.ndarray    # (2, 4), floored
    priors: np.ndarray       # (2,), sums to 1


def hsv_nb_features(hsv: np.ndarray) -> np.ndarray:
    """(N, 3) [h_deg, s, v] -> (N, 4) [cos h, sin h, s, v]."""
    hsv = np.atleast_2d(np.asarray(hsv, dtype=np.float64))
    h = np.deg2rad(hsv[:, 0])
    return np.column_stack([np.cos(h), np.sin(h), hsv[:, 1], hsv[:, 2]])


def nb_fit(pepper_hsv: np.ndarray, other_hsv: np.ndarray) -> NaiveBayesHsv:
    """Maximum-likelihood Gaussian fit per class with a variance floor."""
    blocks = [hsv_nb_features(pepper_hsv), hsv_nb_features(other_hsv)]
    for b in blocks:
        if len(b) < 2:
            raise DegenerateTraining("each class needs at least 2 samples")
    means = np.stack([b.mean(axis=0) for b in blocks])
    variances = np.stack([np.maximum(b.var(axis=0), VARIANCE_FLOOR) for b in blocks])
    counts = np.array([len(b) for b in blocks], dtype=np.float64)
    return NaiveBayesHsv(means, variances, counts / counts.sum())


def nb_posterior(model: NaiveBayesHsv, hsv: np.ndarray) -> np.ndarray:
    """P(pepper | hsv) for one [h_deg, s, v] triple or an (N, 3) batch."""
    single = np.asarray(hsv).ndim == 1
    f = hsv_nb_features(hsv)
    log_lik = np.empty((len(f), 2))
    for cls in range(2):
        z = (f - model.means[cls]) ** 2 / model.variances[cls]
        log_lik[:, cls] = -0.5 * (z + np.log(2.0 * np.pi * model.variances[cls])).sum(axis=1)
    log_post = log_lik + np.log(model.priors)
    log_post -= log_post.max(axis=1, keepdims=True)
    post = np.exp(log_post)
    post /= post.sum(axis=1, keepdims=True)
    return float(post[0, 0]) if single else post[:, 0]


def save_nb(path, model: NaiveBayesHsv) -> None:
    """ASCII model file: magic line then two class blocks (prior/means/variances)."""
    lines = ["nbhsv v1"]
    for cls in range(2):
        lines.append(repr(float(model.priors[cls])))
        lines.append(" ".join(repr(float(v)) for v in model.means[cls]))
        lines.append(" ".join(repr(float(v)) for v in model.variances[cls]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_nb(path) -> NaiveBayesHsv:
    with open(path) as fh:
        if fh.readline().strip() != "nbhsv v1":
            raise FormatError(f"{path}: not an nbhsv v1 file")
        priors, means, variances = [], [], []
        for _ in range(2):
            priors.append(float(fh.readline()))
            means.append([float(v) for v in fh.readline().split()])
            variances.append([float(v) for v in fh.readline().split()])
    return NaiveBayesHsv(np.array(means), np.array(variances), np.array(priors))
