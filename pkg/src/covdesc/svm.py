"""One-vs-one multi-class SVM over precomputed Gram matrices.

Each binary subproblem solves the C-SVC dual

    min 1/2 a^T Q a - e^T a,  0 <= a_i <= cost,  y^T a = 0,
    Q_ij = y_i y_j K_ij

with sequential minimal optimization: the working pair is the maximal
KKT violator (ties broken at the lowest index), so training is
deterministic for a fixed Gram matrix regardless of sample ordering.
Decision values are calibrated with Platt's sigmoid fitted by
regularized maximum likelihood (Newton with backtracking), and pairwise
probabilities are averaged per class and normalized into class scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, DataError, FormatError, MismatchError
from .evaluation import assign_subject_folds, fold_indices
from .kernel import GramMatrix, pairwise_squared_distances

# Powers of ten spanning the standard search intervals.
GAMMA_GRID = tuple(10.0 ** -e for e in range(3, 11))
COST_GRID = tuple(10.0 ** e for e in range(3, 9))

SMO_TOL = 1e-3
_TAU = 1e-12
_TINY = float(np.finfo(np.float64).tiny)


def _smo_core(K, y, cost, tol, max_iter):
    """Inner SMO loop; returns ``(alpha, grad, iterations)``.

    ``iterations == -1`` signals that the cap was reached before the
    maximal KKT violation dropped to ``tol``. Written with scalar loops
    so the optional numba build compiles it unchanged; selection ties
    resolve to the lowest index in both builds.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    iterations = 0
    while True:
        i = -1
        j = -1
        up_max = -np.inf
        low_min = np.inf
        for t in range(n):
            v = -y[t] * grad[t]
            if (y[t] > 0 and alpha[t] < cost) or (y[t] < 0 and alpha[t] > 0):
                if v > up_max:
                    up_max = v
                    i = t
            if (y[t] < 0 and alpha[t] < cost) or (y[t] > 0 and alpha[t] > 0):
                if v < low_min:
                    low_min = v
                    j = t
        if i < 0 or j < 0:
            break
        if up_max - low_min <= tol:
            break
        if iterations >= max_iter:
            return alpha, grad, -1
        iterations += 1

        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = _TAU
        old_i = alpha[i]
        old_j = alpha[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            alpha[i] = old_i + delta
            alpha[j] = old_j + delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > cost:
                    alpha[i] = cost
                    alpha[j] = cost - diff
            else:
                if alpha[j] > cost:
                    alpha[j] = cost
                    alpha[i] = cost + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            alpha[i] = old_i - delta
            alpha[j] = old_j + delta
            if total > cost:
                if alpha[i] > cost:
                    alpha[i] = cost
                    alpha[j] = total - cost
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > cost:
                if alpha[j] > cost:
                    alpha[j] = cost
                    alpha[i] = total - cost
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        yi_di = y[i] * (alpha[i] - old_i)
        yj_dj = y[j] * (alpha[j] - old_j)
        for t in range(n):
            grad[t] += y[t] * (K[t, i] * yi_di + K[t, j] * yj_dj)
    return alpha, grad, iterations


try:  # the jitted core is a drop-in; plain numpy otherwise
    from numba import njit

    _smo_core_compiled = njit(cache=True)(_smo_core)
except ImportError:  # pragma: no cover
    _smo_core_compiled = _smo_core


def _solve_c_svc(K: np.ndarray, y: np.ndarray, cost: float,
                 tol: float = SMO_TOL, max_iter: int | None = None):
    """SMO on the C-SVC dual for a precomputed kernel.

    Returns ``(alpha, rho, iterations)`` with unsigned duals ``alpha`` and
    the offset ``rho`` of the decision function
    ``f(x) = sum_t alpha_t y_t K(x_t, x) - rho``.
    """
    n = y.shape[0]
    if max_iter is None:
        max_iter = max(100_000, 100 * n)
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    alpha, grad, iterations = _smo_core_compiled(K, y, float(cost), float(tol), int(max_iter))
    if iterations < 0:
        raise ConvergenceError(
            f"SMO did not reach tolerance {tol} within {max_iter} iterations"
        )
    rho = _calculate_rho(alpha, grad, y, cost)
    return alpha, rho, iterations


def _calculate_rho(alpha: np.ndarray, grad: np.ndarray, y: np.ndarray, cost: float) -> float:
    y_grad = y * grad
    upper = alpha >= cost
    lower = alpha <= 0
    free = ~upper & ~lower
    if free.any():
        return float(y_grad[free].mean())
    ub_mask = (upper & (y < 0)) | (lower & (y > 0))
    lb_mask = (upper & (y > 0)) | (lower & (y < 0))
    ub = float(y_grad[ub_mask].min()) if ub_mask.any() else np.inf
    lb = float(y_grad[lb_mask].max()) if lb_mask.any() else -np.inf
    if not np.isfinite(ub) and not np.isfinite(lb):
        return 0.0
    if not np.isfinite(ub):
        return lb
    if not np.isfinite(lb):
        return ub
    return (ub + lb) / 2.0


def fit_platt(decisions, labels, max_iter: int = 100,
              min_step: float = 1e-10, sigma: float = 1e-12) -> tuple[float, float]:
    """Fit sigmoid parameters (A, B) so that ``1/(1+exp(A*f+B))``
    approximates P(y=+1 | decision value f).

    Regularized maximum likelihood with the usual +1/+2 target smoothing,
    solved by Newton iterations with a backtracking line search.
    """
    deci = np.asarray(decisions, dtype=np.float64)
    labs = np.asarray(labels)
    prior1 = int((labs > 0).sum())
    prior0 = labs.shape[0] - prior1
    hi = (prior1 + 1.0) / (prior1 + 2.0)
    lo = 1.0 / (prior0 + 2.0)
    targets = np.where(labs > 0, hi, lo)

    def objective(a: float, b: float) -> float:
        f_ab = deci * a + b
        vals = np.where(
            f_ab >= 0,
            targets * f_ab + np.log1p(np.exp(-np.abs(f_ab))),
            (targets - 1.0) * f_ab + np.log1p(np.exp(-np.abs(f_ab))),
        )
        return float(vals.sum())

    a = 0.0
    b = math.log((prior0 + 1.0) / (prior1 + 1.0))
    fval = objective(a, b)
    for _ in range(max_iter):
        f_ab = deci * a + b
        p = np.where(f_ab >= 0,
                     np.exp(-np.abs(f_ab)) / (1.0 + np.exp(-np.abs(f_ab))),
                     1.0 / (1.0 + np.exp(-np.abs(f_ab))))
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + float(np.sum(deci * deci * d2))
        h22 = sigma + float(np.sum(d2))
        h21 = float(np.sum(deci * d2))
        d1 = targets - p
        g1 = float(np.sum(deci * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        descent = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            new_a = a + step * da
            new_b = b + step * db
            new_f = objective(new_a, new_b)
            if new_f < fval + 1e-4 * step * descent:
                a, b, fval = new_a, new_b, new_f
                break
            step /= 2.0
        else:
            break
    return float(a), float(b)


_BELOW_ONE = float(np.nextafter(1.0, 0.0))


def platt_probability(decisions, a: float, b: float) -> np.ndarray:
    """Calibrated P(y=+1) for decision values.

    Clamped strictly inside (0, 1) so downstream score products can never
    collapse a class to an exact zero.
    """
    f_ab = np.asarray(decisions, dtype=np.float64) * a + b
    expo = np.exp(-np.abs(f_ab))
    p = np.where(f_ab >= 0, expo / (1.0 + expo), 1.0 / (1.0 + expo))
    return np.clip(p, _TINY, _BELOW_ONE)


@dataclass(frozen=True)
class BinaryModel:
    """One trained binary subproblem.

    ``alpha`` holds the signed duals ``alpha_i * y_i``, one per training
    sample of the Gram it was trained against (zero outside the pair when
    embedded in a multi-class model).
    """

    alpha: np.ndarray
    bias: float
    class_pair: tuple[int, int]
    platt: tuple[float, float]

    def __post_init__(self):
        arr = np.asarray(self.alpha, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("alpha must be a vector")
        object.__setattr__(self, "alpha", arr)
        object.__setattr__(self, "class_pair", (int(self.class_pair[0]), int(self.class_pair[1])))
        object.__setattr__(self, "platt", (float(self.platt[0]), float(self.platt[1])))

    def decision_values(self, kernel_block: np.ndarray) -> np.ndarray:
        return kernel_block @ self.alpha + self.bias

    def probabilities(self, kernel_block: np.ndarray) -> np.ndarray:
        return platt_probability(self.decision_values(kernel_block), *self.platt)


@dataclass(frozen=True)
class SvmModel:
    """One-vs-one multi-class model over a fixed training descriptor order."""

    binaries: tuple[BinaryModel, ...]
    classes: tuple[int, ...]
    gamma: float
    cost: float
    region: str
    training_ids: tuple[str, ...]

    def __post_init__(self):
        k = len(self.classes)
        if len(self.binaries) != k * (k - 1) // 2:
            raise ValueError(
                f"{len(self.binaries)} binaries for {k} classes; expected {k * (k - 1) // 2}"
            )

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def train_binary(gram, labels, cost: float, *,
                 class_pair: tuple[int, int] = (1, -1),
                 tol: float = SMO_TOL, max_iter: int | None = None) -> BinaryModel:
    """Train one binary C-SVC on a square training Gram with +-1 labels."""
    K = gram.values if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise MismatchError(f"training Gram must be square, got shape {K.shape}")
    y = np.asarray(labels, dtype=np.float64)
    if y.shape[0] != K.shape[0]:
        raise MismatchError(f"{y.shape[0]} labels for a {K.shape[0]}-sample Gram")
    if not ((y > 0).any() and (y < 0).any()):
        raise ValueError("labels contain a single class")
    if cost <= 0:
        raise ValueError(f"cost must be positive, got {cost}")
    alpha, rho, _ = _solve_c_svc(K, y, float(cost), tol, max_iter)
    signed = alpha * y
    bias = -rho
    decisions = K @ signed + bias
    platt = fit_platt(decisions, y)
    return BinaryModel(signed, float(bias), class_pair, platt)


def train_multiclass(gram: GramMatrix, labels, cost: float, *,
                     tol: float = SMO_TOL, max_iter: int | None = None) -> SvmModel:
    """One binary model per unordered class pair, each trained on the
    sub-Gram of that pair's samples and re-embedded over all samples.

    Every subproblem is solved in a canonical sample order (sorted by
    sample id), so retraining on a permuted presentation of the same Gram
    yields the same model up to that permutation.
    """
    if not isinstance(gram, GramMatrix) or not gram.is_square:
        raise MismatchError("multi-class training needs a square GramMatrix")
    y = np.asarray(labels)
    n = gram.values.shape[0]
    if y.shape[0] != n:
        raise MismatchError(f"{y.shape[0]} labels for a {n}-sample Gram")
    classes = tuple(sorted(int(c) for c in set(y.tolist())))
    if len(classes) < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")

    row_ids = np.asarray(gram.rows)
    binaries = []
    for ai in range(len(classes)):
        for bi in range(ai + 1, len(classes)):
            ca, cb = classes[ai], classes[bi]
            sel = np.flatnonzero((y == ca) | (y == cb))
            sel = sel[np.argsort(row_ids[sel], kind="stable")]
            sub_k = gram.values[np.ix_(sel, sel)]
            sub_y = np.where(y[sel] == ca, 1.0, -1.0)
            bm = train_binary(sub_k, sub_y, cost, class_pair=(ca, cb),
                              tol=tol, max_iter=max_iter)
            full = np.zeros(n)
            full[sel] = bm.alpha
            binaries.append(BinaryModel(full, bm.bias, (ca, cb), bm.platt))
    return SvmModel(tuple(binaries), classes, gram.gamma, float(cost),
                    gram.region, gram.rows)


def predict_scores_batch(model: SvmModel, kernel_block: np.ndarray) -> np.ndarray:
    """Class scores for each row of kernel values against the training set.

    Pairwise Platt probabilities are accumulated per class and normalized
    to sum to one; every entry is strictly positive.
    """
    block = np.atleast_2d(np.asarray(kernel_block, dtype=np.float64))
    if block.shape[1] != len(model.training_ids):
        raise MismatchError(
            f"kernel row length {block.shape[1]} does not match "
            f"{len(model.training_ids)} training samples"
        )
    index_of = {c: i for i, c in enumerate(model.classes)}
    scores = np.zeros((block.shape[0], model.n_classes))
    for bm in model.binaries:
        p = bm.probabilities(block)
        scores[:, index_of[bm.class_pair[0]]] += p
        scores[:, index_of[bm.class_pair[1]]] += 1.0 - p
    scores = np.maximum(scores, _TINY)
    return scores / scores.sum(axis=1, keepdims=True)


def predict_scores(model: SvmModel, kernel_row) -> np.ndarray:
    """Class scores for one sample's kernel values against the training set."""
    return predict_scores_batch(model, np.asarray(kernel_row))[0]


def predict_classes(model: SvmModel, kernel_block: np.ndarray) -> np.ndarray:
    """Argmax class per row, ties broken at the lowest class index."""
    scores = predict_scores_batch(model, kernel_block)
    return np.asarray(model.classes)[scores.argmax(axis=1)]


@dataclass(frozen=True)
class CvCell:
    """Cross-validation outcome for one (gamma, cost) grid cell."""

    gamma: float
    cost: float
    fold_accuracies: tuple[float, ...]
    failed: bool = False

    @property
    def mean_accuracy(self) -> float:
        if self.failed:
            return float("nan")
        return float(np.mean(self.fold_accuracies))


@dataclass(frozen=True)
class GridSearchResult:
    best_gamma: float
    best_cost: float
    table: tuple[CvCell, ...]

    def best_accuracy(self) -> float:
        for cell in self.table:
            if cell.gamma == self.best_gamma and cell.cost == self.best_cost:
                return cell.mean_accuracy
        raise KeyError("best cell missing from table")


def grid_search(descriptors, labels, subject_ids,
                gamma_grid=GAMMA_GRID, cost_grid=COST_GRID,
                folds: int = 5, seed: int = 0, *, tol: float = SMO_TOL) -> GridSearchResult:
    """Subject-independent cross-validated search over (gamma, cost).

    For every gamma the full kernel matrix is derived once from the
    cached pairwise squared distances; folds then slice it. The winning
    cell maximizes mean fold accuracy, ties broken by larger gamma then
    smaller cost. Cells whose solver fails to converge are recorded as
    failed and excluded from the argmax.
    """
    if not gamma_grid or not cost_grid:
        raise ValueError("gamma and cost grids must be non-empty")
    y = np.asarray(labels)
    subjects = list(subject_ids)
    if len(descriptors) != y.shape[0] or len(subjects) != y.shape[0]:
        raise MismatchError(
            f"{len(descriptors)} descriptors, {y.shape[0]} labels, "
            f"{len(subjects)} subjects: lengths must agree"
        )
    assignment = assign_subject_folds(subjects, folds, seed)
    splits = fold_indices(assignment, subjects)
    for f, (train_idx, _) in enumerate(splits):
        if len(set(y[train_idx].tolist())) < 2:
            raise DataError(f"fold {f}: training side keeps fewer than 2 classes")

    ids = tuple(d.sample_id for d in descriptors)
    region = descriptors[0].region
    d2 = pairwise_squared_distances(descriptors)

    accuracies = np.full((len(gamma_grid), len(cost_grid), folds), np.nan)
    failed = np.zeros((len(gamma_grid), len(cost_grid)), dtype=bool)
    for gi, gamma in enumerate(gamma_grid):
        if gamma <= 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        kernel_full = np.maximum(np.exp(-gamma * d2), _TINY)
        np.fill_diagonal(kernel_full, 1.0)
        for fold, (train_idx, test_idx) in enumerate(splits):
            train_ids = tuple(ids[t] for t in train_idx)
            sub = GramMatrix(train_ids, train_ids,
                             kernel_full[np.ix_(train_idx, train_idx)], gamma, region)
            test_block = kernel_full[np.ix_(test_idx, train_idx)]
            truth = y[test_idx]
            for ci, cost in enumerate(cost_grid):
                if failed[gi, ci]:
                    continue
                try:
                    model = train_multiclass(sub, y[train_idx], cost, tol=tol)
                except ConvergenceError:
                    failed[gi, ci] = True
                    continue
                predicted = predict_classes(model, test_block)
                accuracies[gi, ci, fold] = float(np.mean(predicted == truth))

    cells = []
    best = None
    best_key = None
    for gi, gamma in enumerate(gamma_grid):
        for ci, cost in enumerate(cost_grid):
            cell = CvCell(float(gamma), float(cost),
                          tuple(accuracies[gi, ci].tolist()), bool(failed[gi, ci]))
            cells.append(cell)
            if cell.failed:
                continue
            key = (cell.mean_accuracy, cell.gamma, -cell.cost)
            if best_key is None or key > best_key:
                best_key = key
                best = cell
    if best is None:
        raise ConvergenceError("every grid cell failed to converge")
    return GridSearchResult(best.gamma, best.cost, tuple(cells))


def cv_table_csv(result: GridSearchResult) -> str:
    """Comma-delimited rendering of a grid-search table."""
    folds = len(result.table[0].fold_accuracies)
    header = "gamma,cost,mean_accuracy," + ",".join(f"fold{f}" for f in range(folds))
    lines = [header]
    for cell in result.table:
        accs = ["" if np.isnan(a) else f"{a:.6f}" for a in cell.fold_accuracies]
        mean = "" if cell.failed else f"{cell.mean_accuracy:.6f}"
        lines.append(f"{cell.gamma:g},{cell.cost:g},{mean}," + ",".join(accs))
    return "\n".join(lines) + "\n"


_MODEL_FORMAT = "covdesc-svm-model-v1"


def save_model(model: SvmModel, path) -> None:
    """Serialize a model as JSON; float64 values round-trip exactly."""
    doc = {
        "format": _MODEL_FORMAT,
        "classes": list(model.classes),
        "gamma": model.gamma,
        "cost": model.cost,
        "region": model.region,
        "training_ids": list(model.training_ids),
        "binaries": [
            {
                "class_pair": list(bm.class_pair),
                "alpha": [float(v) for v in bm.alpha],
                "bias": bm.bias,
                "platt": [bm.platt[0], bm.platt[1]],
            }
            for bm in model.binaries
        ],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path) -> SvmModel:
    """Load a model written by :func:`save_model`."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != _MODEL_FORMAT:
        raise FormatError(f"{path}: not a {_MODEL_FORMAT} file")
    try:
        n = len(doc["training_ids"])
        binaries = []
        for entry in doc["binaries"]:
            alpha = np.asarray(entry["alpha"], dtype=np.float64)
            if alpha.shape[0] != n:
                raise FormatError(f"{path}: binary alpha length {alpha.shape[0]} != {n}")
            binaries.append(BinaryModel(
                alpha, float(entry["bias"]),
                (int(entry["class_pair"][0]), int(entry["class_pair"][1])),
                (float(entry["platt"][0]), float(entry["platt"][1])),
            ))
        return SvmModel(
            tuple(binaries),
            tuple(int(c) for c in doc["classes"]),
            float(doc["gamma"]),
            float(doc["cost"]),
            str(doc["region"]),
            tuple(str(t) for t in doc["training_ids"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed model ({exc})") from exc
