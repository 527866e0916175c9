"""Supervised regression by quantum-state embedding.

Each data point x in R^K is mapped to the ground state |psi> of the error
Hamiltonian

    H(x) = 1/2 * sum_k (A_k - x_k I)^2,

where the A_k are K learned Hermitian feature operators on an
N-dimensional Hilbert space. A learned target operator B produces the
forecast y_hat = <psi|B|psi>. Training runs mini-batch gradient descent
on the A_k and B parameters, with the ground-state dependence
differentiated through first-order eigenvector perturbation theory.

After training, the overlap of two embedded states defines a supervised
proximity: matrices average |<psi_i|psi_j>| over an ensemble of
independently initialized models, while the pointwise distance op uses
1 - |<psi_1|psi_2>|^2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AffineScaler
from .errors import ConfigError, DataError, NumericError, SchemaError, UsageError
from .hermitian import (
    HermitianOperator,
    QuantumState,
    canonical_phase,
    eigh_matrix,
    matrix_to_param_grad,
    params_to_matrix,
)
from .proximity import ProximityMatrix

OPTIMIZERS = ("plain-sgd", "adaptive-moment")
LOSSES = ("mae", "mse")

_MAGIC = b"QCML1"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the gradient-descent training loop."""

    epochs: int = 300
    learning_rate: float = 0.01
    batch_size: int = 32
    optimizer: str = "adaptive-moment"
    loss: str = "mae"
    gap_guard: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")


@dataclass(frozen=True)
class ScaledTrainSet:
    """Training data in model units: encoded features and target already
    standardized, together with the transforms that got them there."""

    x: np.ndarray
    y: np.ndarray
    feature_scaler: AffineScaler
    target_scaler: AffineScaler

    @classmethod
    def from_raw(cls, x_raw: np.ndarray, y_raw: np.ndarray) -> "ScaledTrainSet":
        """Standardize raw columns and the target with their own statistics.

        Constant columns get std 1 so the affine map stays invertible.
        """
        x_raw = np.asarray(x_raw, dtype=np.float64)
        y_raw = np.asarray(y_raw, dtype=np.float64)
        if x_raw.ndim != 2 or y_raw.ndim != 1 or x_raw.shape[0] != y_raw.shape[0]:
            raise SchemaError(
                f"expected x (n, K) and y (n,), got {x_raw.shape} and {y_raw.shape}"
            )
        if x_raw.shape[0] == 0:
            raise DataError("training set is empty")
        fmean = x_raw.mean(axis=0)
        fstd = x_raw.std(axis=0)
        fstd = np.where(fstd > 0.0, fstd, 1.0)
        tmean = float(y_raw.mean())
        tstd = float(y_raw.std())
        if tstd <= 0.0:
            tstd = 1.0
        fsc = AffineScaler(mean=fmean, std=fstd)
        tsc = AffineScaler(mean=np.float64(tmean), std=np.float64(tstd))
        return cls(x=fsc.transform(x_raw), y=tsc.transform(y_raw), feature_scaler=fsc,
                   target_scaler=tsc)


@dataclass(frozen=True)
class QcmlModel:
    """K feature operators, one target operator, and the scaling context."""

    hilbert_dim: int
    feature_ops: tuple
    target_op: HermitianOperator
    feature_scaler: AffineScaler
    target_scaler: AffineScaler
    seed: int
    loss_trace: tuple = field(default=(), repr=False, compare=False)
    degenerate_gradient_count: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        if len(self.feature_ops) < 1:
            raise SchemaError("model needs at least one feature operator")
        dims = {op.dim for op in self.feature_ops} | {self.target_op.dim}
        if dims != {self.hilbert_dim}:
            raise SchemaError(f"operator dims {dims} do not all equal {self.hilbert_dim}")
        if np.any(np.asarray(self.feature_scaler.std) <= 0.0) or self.target_scaler.std <= 0.0:
            raise SchemaError("scaler stds must be positive")

    @property
    def n_features(self) -> int:
        return len(self.feature_ops)

    def feature_matrices(self) -> np.ndarray:
        """Stacked (K, N, N) complex view of the feature operators."""
        return np.stack([op.matrix() for op in self.feature_ops])


# ---------------------------------------------------------------------------
# Embedding and forecasting
# ---------------------------------------------------------------------------

def _check_x(model: QcmlModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise SchemaError(f"expected feature vector of length {model.n_features}, got {x.shape}")
    return x


def _hamiltonian_stack(a_mats: np.ndarray, x_scaled: np.ndarray) -> np.ndarray:
    """H(x) = 1/2 sum_k (A_k - x_k I)^2 for a batch of scaled inputs.

    a_mats: (K, N, N); x_scaled: (B, K). Returns (B, N, N).
    """
    n = a_mats.shape[-1]
    eye = np.eye(n, dtype=np.complex128)
    d = a_mats[None, :, :, :] - x_scaled[:, :, None, None] * eye
    h = 0.5 * np.einsum("bkij,bkjl->bil", d, d, optimize=True)
    return 0.5 * (h + np.conj(np.swapaxes(h, -1, -2)))


def error_hamiltonian(model: QcmlModel, x: np.ndarray) -> HermitianOperator:
    """The error Hamiltonian H(x) for an already-scaled feature vector."""
    x = _check_x(model, x)
    h = _hamiltonian_stack(model.feature_matrices(), x[None, :])[0]
    return HermitianOperator.from_matrix(h)


def embed(model: QcmlModel, x: np.ndarray) -> tuple[QuantumState, float]:
    """Ground state of H(x) plus the spectral gap for degeneracy checks."""
    x = _check_x(model, x)
    states, gaps = embed_many(model, x[None, :])
    return QuantumState(states[0]), float(gaps[0])


def embed_many(model: QcmlModel, x_scaled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized embedding: rows of scaled inputs to canonical ground
    states (n, N) and their spectral gaps (n,)."""
    x_scaled = np.asarray(x_scaled, dtype=np.float64)
    if x_scaled.ndim != 2 or x_scaled.shape[1] != model.n_features:
        raise SchemaError(f"expected (n, {model.n_features}) inputs, got {x_scaled.shape}")
    h = _hamiltonian_stack(model.feature_matrices(), x_scaled)
    evals, evecs = eigh_matrix(h)
    states = evecs[:, :, 0]
    if model.hilbert_dim > 1:
        gaps = evals[:, 1] - evals[:, 0]
    else:
        gaps = np.full(x_scaled.shape[0], np.inf)
    return states, gaps


def position(model: QcmlModel, state: QuantumState) -> np.ndarray:
    """Recover feature coordinates as expectations (<psi|A_k|psi>)_k."""
    if state.dim != model.hilbert_dim:
        raise SchemaError(f"state dim {state.dim} != model dim {model.hilbert_dim}")
    psi = state.amplitudes
    a = model.feature_matrices()
    vals = np.einsum("i,kij,j->k", psi.conj(), a, psi)
    return vals.real


def forecast(model: QcmlModel, x_raw: np.ndarray) -> float:
    """Forecast in original target units for a raw-unit feature vector."""
    return float(forecast_many(model, np.asarray(x_raw, dtype=np.float64)[None, :])[0])


def forecast_many(model: QcmlModel, x_raw: np.ndarray) -> np.ndarray:
    x_scaled = model.feature_scaler.transform(np.asarray(x_raw, dtype=np.float64))
    states, _ = embed_many(model, x_scaled)
    b = model.target_op.matrix()
    yhat = np.einsum("bi,ij,bj->b", states.conj(), b, states).real
    return model.target_scaler.inverse(yhat)


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------

@dataclass
class GradientBundle:
    """Parameter-space gradients for the feature operators and the target
    operator, plus the count of gap-guarded samples whose feature-operator
    contribution was zeroed."""

    feature_grads: np.ndarray  # (K, N*N)
    target_grad: np.ndarray    # (N*N,)
    degenerate_count: int


def _param_grads_stack(g: np.ndarray) -> np.ndarray:
    """matrix_to_param_grad applied along the first axis of (K, N, N)."""
    n = g.shape[-1]
    iu = np.triu_indices(n, k=1)
    diag = np.einsum("...ii->...i", g).real
    return np.concatenate([diag, 2.0 * g[..., iu[0], iu[1]].real,
                           2.0 * g[..., iu[0], iu[1]].imag], axis=-1)


def _batch_loss_and_grads(a_mats, b_mat, x, y, loss, gap_guard):
    """Core per-batch computation shared by the public op and the trainer.

    Differentiates y_hat = <psi|B|psi> through the ground state via
    first-order perturbation: for dH from dA_k,
        d(psi) = sum_{n>0} |v_n><v_n|dH|psi> / (E_0 - E_n)
    which after the trace gymnastics reduces to Hermitian gradient
    matrices G_B = psi psi^H and G_Ak = (D_k G_H + G_H D_k)/2 with
    G_H = psi w^H + w psi^H and w the perturbation-weighted B-image of psi.
    """
    n_batch = x.shape[0]
    n = a_mats.shape[-1]
    eye = np.eye(n, dtype=np.complex128)
    d = a_mats[None, :, :, :] - x[:, :, None, None] * eye
    h = 0.5 * np.einsum("bkij,bkjl->bil", d, d, optimize=True)
    h = 0.5 * (h + np.conj(np.swapaxes(h, -1, -2)))
    evals, evecs = eigh_matrix(h)
    psi = evecs[:, :, 0]

    b_psi = np.einsum("ij,bj->bi", b_mat, psi)
    yhat = np.einsum("bi,bi->b", psi.conj(), b_psi).real
    resid = yhat - y
    if loss == "mae":
        loss_val = float(np.mean(np.abs(resid)))
        dl_dy = np.sign(resid) / n_batch
    else:
        loss_val = float(np.mean(resid ** 2))
        dl_dy = 2.0 * resid / n_batch

    # Gradient w.r.t. B: dL = Tr(dB G_B), G_B = sum_b s_b psi_b psi_b^H.
    g_b = np.einsum("b,bi,bj->ij", dl_dy, psi, psi.conj())
    b_grad = matrix_to_param_grad(g_b)

    if n > 1:
        gaps = evals[:, 1] - evals[:, 0]
        live = gaps > gap_guard
        degenerate = int(n_batch - live.sum())
        # w_b = sum_{n>0} v_n <v_n|B|psi> / (E_0 - E_n)
        overlaps = np.einsum("bin,bi->bn", evecs.conj(), b_psi)
        denom = evals[:, :1] - evals[:, 1:]
        coef = overlaps[:, 1:] / denom
        w = np.einsum("bin,bn->bi", evecs[:, :, 1:], coef)
        scale = np.where(live, dl_dy, 0.0)
        g_h = np.einsum("b,bi,bj->bij", scale, psi, w.conj())
        g_h += np.conj(np.swapaxes(g_h, -1, -2))
        g_a = 0.5 * (np.einsum("bkij,bjl->kil", d, g_h, optimize=True)
                     + np.einsum("bij,bkjl->kil", g_h, d, optimize=True))
        a_grads = _param_grads_stack(g_a)
    else:
        # N = 1: the single state is constant, so A_k gradients vanish.
        degenerate = 0
        a_grads = np.zeros((a_mats.shape[0], 1))

    return loss_val, a_grads, b_grad, degenerate


def loss_and_grads(model: QcmlModel, batch) -> tuple[float, GradientBundle]:
    """Mean loss over a scaled batch and its parameter gradients.

    The batch is a list of (x, y) pairs or an (X, Y) tuple of arrays, in
    model (scaled) units. Samples whose spectral gap falls at or below
    the default gap guard contribute no feature-operator gradient.
    """
    return loss_and_grads_with(model, batch, TrainConfig())


def loss_and_grads_with(model: QcmlModel, batch, config: TrainConfig):
    if isinstance(batch, tuple) and len(batch) == 2:
        x, y = batch
    else:
        batch = list(batch)
        if not batch:
            raise UsageError("batch must be nonempty")
        x = np.array([np.asarray(b[0], dtype=np.float64) for b in batch])
        y = np.array([float(b[1]) for b in batch])
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise UsageError("batch must be nonempty")
    if x.shape[1] != model.n_features:
        raise SchemaError(f"expected {model.n_features} features, got {x.shape[1]}")
    loss_val, a_grads, b_grad, degenerate = _batch_loss_and_grads(
        model.feature_matrices(), model.target_op.matrix(), x, y,
        config.loss, config.gap_guard,
    )
    return loss_val, GradientBundle(a_grads, b_grad, degenerate)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(config: TrainConfig, train_set: ScaledTrainSet, hilbert_dim: int) -> QcmlModel:
    """Mini-batch gradient descent over the operator parameters.

    Deterministic given (seed, data, config): initialization and batch
    shuffling both come from a PCG64 stream seeded by config.seed. The
    per-epoch mean training loss is recorded on the returned model.
    """
    if hilbert_dim < 1:
        raise ConfigError(f"hilbert_dim must be >= 1, got {hilbert_dim}")
    x = np.asarray(train_set.x, dtype=np.float64)
    y = np.asarray(train_set.y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("training set is empty")
    n_samples, n_feat = x.shape
    n = hilbert_dim

    rng = np.random.default_rng(config.seed)
    # Zero-mean normal with std 1/sqrt(N) keeps initial spectra O(1).
    scale = 1.0 / np.sqrt(n)
    a_params = rng.normal(0.0, scale, size=(n_feat, n * n))
    b_params = rng.normal(0.0, scale, size=n * n)

    adam_m = np.zeros((n_feat + 1, n * n))
    adam_v = np.zeros((n_feat + 1, n * n))
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    trace = []
    degenerate_total = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n_samples)
        epoch_loss = 0.0
        for start in range(0, n_samples, config.batch_size):
            idx = perm[start:start + config.batch_size]
            a_mats = params_to_matrix_stack(a_params, n)
            b_mat = params_to_matrix(b_params, n)
            loss_val, a_g, b_g, degen = _batch_loss_and_grads(
                a_mats, b_mat, x[idx], y[idx], config.loss, config.gap_guard)
            if not np.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            degenerate_total += degen
            epoch_loss += loss_val * idx.size

            grad = np.vstack([a_g, b_g[None, :]])
            if config.optimizer == "adaptive-moment":
                step += 1
                adam_m = beta1 * adam_m + (1.0 - beta1) * grad
                adam_v = beta2 * adam_v + (1.0 - beta2) * grad ** 2
                m_hat = adam_m / (1.0 - beta1 ** step)
                v_hat = adam_v / (1.0 - beta2 ** step)
                update = config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
            else:
                update = config.learning_rate * grad
            a_params -= update[:-1]
            b_params -= update[-1]
        trace.append(epoch_loss / n_samples)

    feature_ops = tuple(HermitianOperator(a_params[k], n) for k in range(n_feat))
    return QcmlModel(
        hilbert_dim=n,
        feature_ops=feature_ops,
        target_op=HermitianOperator(b_params, n),
        feature_scaler=train_set.feature_scaler,
        target_scaler=train_set.target_scaler,
        seed=config.seed,
        loss_trace=tuple(trace),
        degenerate_gradient_count=degenerate_total,
    )


def params_to_matrix_stack(params: np.ndarray, dim: int) -> np.ndarray:
    """params_to_matrix over the rows of a (K, N*N) parameter block."""
    return np.stack([params_to_matrix(p, dim) for p in params])


def train_ensemble(config: TrainConfig, train_set: ScaledTrainSet, hilbert_dim: int,
                   n_models: int = 3) -> list:
    """Independently initialized models for proximity ensembling: member i
    trains with seed config.seed + i."""
    if n_models < 1:
        raise ConfigError(f"ensemble size must be >= 1, got {n_models}")
    return [
        train(
            TrainConfig(epochs=config.epochs, learning_rate=config.learning_rate,
                        batch_size=config.batch_size, optimizer=config.optimizer,
                        loss=config.loss, gap_guard=config.gap_guard,
                        seed=config.seed + i),
            train_set, hilbert_dim,
        )
        for i in range(n_models)
    ]


# ---------------------------------------------------------------------------
# Proximity
# ---------------------------------------------------------------------------

def qcml_distance(s1: QuantumState, s2: QuantumState) -> float:
    """Distance 1 - |<psi1|psi2>|^2: zero iff the states agree up to phase."""
    if s1.dim != s2.dim:
        raise SchemaError(f"state dims differ: {s1.dim} != {s2.dim}")
    overlap = np.vdot(s1.amplitudes, s2.amplitudes)
    return float(min(1.0, max(0.0, 1.0 - abs(overlap) ** 2)))


def qcml_proximity_matrix(models, x_rows: np.ndarray, x_cols: np.ndarray,
                          row_role: str = "test", col_role: str = "train") -> ProximityMatrix:
    """Ensemble proximity: entry (i, j) is the mean over models of the
    overlap modulus |<psi_i|psi_j>| (not its square) between the embedded
    rows and columns. Inputs are raw-unit feature matrices; each model
    applies its own scaler.
    """
    models = list(models)
    if not models:
        raise SchemaError("ensemble must contain at least one model")
    n_feat = models[0].n_features
    for m in models:
        if m.n_features != n_feat:
            raise SchemaError(
                f"ensemble feature counts differ: {m.n_features} != {n_feat}")
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    x_cols = np.atleast_2d(np.asarray(x_cols, dtype=np.float64))
    same = x_rows is x_cols or (x_rows.shape == x_cols.shape and np.array_equal(x_rows, x_cols))

    acc = np.zeros((x_rows.shape[0], x_cols.shape[0]))
    for m in models:
        rows_s, _ = embed_many(m, m.feature_scaler.transform(x_rows))
        cols_s = rows_s if same else embed_many(m, m.feature_scaler.transform(x_cols))[0]
        acc += np.abs(rows_s.conj() @ cols_s.T)
    acc /= len(models)
    np.clip(acc, 0.0, 1.0, out=acc)
    return ProximityMatrix(values=acc, metric="qcml", row_role=row_role, col_role=col_role)


# ---------------------------------------------------------------------------
# Model file format
# ---------------------------------------------------------------------------

def save_model(model: QcmlModel, path) -> None:
    """Write magic, K, N, seed, scalers, then K+1 operators as f64 LE."""
    k, n = model.n_features, model.hilbert_dim
    fsc, tsc = model.feature_scaler, model.target_scaler
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIq", k, n, model.seed))
        fh.write(struct.pack("<dd", float(tsc.mean), float(tsc.std)))
        fh.write(np.asarray(fsc.mean, dtype="<f8").tobytes())
        fh.write(np.asarray(fsc.std, dtype="<f8").tobytes())
        for op in model.feature_ops:
            fh.write(op.params.astype("<f8").tobytes())
        fh.write(model.target_op.params.astype("<f8").tobytes())


def load_model(path) -> QcmlModel:
    raw = Path(path).read_bytes()
    if raw[:5] != _MAGIC:
        raise DataError(f"{path}: bad magic {raw[:5]!r}")
    off = 5
    k, n, seed = struct.unpack_from("<IIq", raw, off)
    off += struct.calcsize("<IIq")
    tmean, tstd = struct.unpack_from("<dd", raw, off)
    off += 16
    expected = off + 8 * (2 * k + (k + 1) * n * n)
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    fmean = np.frombuffer(raw, dtype="<f8", count=k, offset=off).astype(np.float64)
    off += 8 * k
    fstd = np.frombuffer(raw, dtype="<f8", count=k, offset=off).astype(np.float64)
    off += 8 * k
    ops = []
    for _ in range(k + 1):
        params = np.frombuffer(raw, dtype="<f8", count=n * n, offset=off).astype(np.float64)
        off += 8 * n * n
        ops.append(HermitianOperator(params, n))
    return QcmlModel(
        hilbert_dim=n,
        feature_ops=tuple(ops[:-1]),
        target_op=ops[-1],
        feature_scaler=AffineScaler(mean=fmean, std=fstd),
        target_scaler=AffineScaler(mean=np.float64(tmean), std=np.float64(tstd)),
        seed=seed,
    )
