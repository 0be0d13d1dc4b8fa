"""Koopman operator identification over a seeded basis dictionary.

The dictionary lifts (state, control) into [raw state, raw control, 1,
random features...]; the operator K is the ridge least-squares map between
consecutive lifted vectors, with the source sample's control reused in the
target (controls are exogenous and held constant over one step).  Raw
entries are basis members, so recovering the state from a lifted vector is
a projection and predicting the next raw state is a single matrix-vector
product with the raw-state rows of K.

Random features come in three kinds, all reconstructible from the seed:
monomials (products of 2-3 normalized inputs), sinusoids of a random
linear form, and monomial-times-sinusoid products (these capture
rotation-coupled terms such as throttle resolved along the heading).
Sparsification iteratively drops low-influence features and refits,
guarded so held-out error never degrades past a configured factor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConfigError, DomainError, IllConditionedError

MODEL_FORMAT_VERSION = 1

_KIND_MONOMIAL = 0
_KIND_SINUSOID = 1
_KIND_MONO_SINE = 2

# per-dimension normalization used by random features (raw entries untouched)
DEFAULT_NORM_SCALE = {
    "balance_bot": (1.6, 5.0, 28.0, 1.0),
    "race_car": (30.0, 30.0, np.pi, 12.0, 12.0, 3.0, 1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class BasisDictionary:
    """Seeded lift dictionary.  The first state_dim + control_dim + 1
    entries are the raw inputs and the constant; they are exempt from
    pruning so state recovery stays a projection."""

    env_id: str
    state_dim: int
    control_dim: int
    n_random: int
    seed: int
    norm_scale: tuple[float, ...]
    active_mask: np.ndarray = field(repr=False)  # (size,) bool

    # derived feature parameters, regenerated from the seed
    _kinds: np.ndarray = field(repr=False, default=None)
    _mono_idx: np.ndarray = field(repr=False, default=None)   # (n_random, 3) into z_ext
    _sin_w: np.ndarray = field(repr=False, default=None)      # (n_random, dz)
    _sin_phi: np.ndarray = field(repr=False, default=None)
    _ms_dim: np.ndarray = field(repr=False, default=None)     # (n_random,) int

    @property
    def n_exempt(self) -> int:
        return self.state_dim + self.control_dim + 1

    @property
    def size(self) -> int:
        return self.n_exempt + self.n_random

    @property
    def active_count(self) -> int:
        return int(self.active_mask.sum())

    def names(self) -> list[str]:
        out = [f"state[{i}]" for i in range(self.state_dim)]
        out += [f"control[{j}]" for j in range(self.control_dim)]
        out.append("const")
        kinds = {_KIND_MONOMIAL: "monomial", _KIND_SINUSOID: "sinusoid", _KIND_MONO_SINE: "mono_sine"}
        for r in range(self.n_random):
            out.append(f"random[{r}]:{kinds[int(self._kinds[r])]}")
        return out

    def with_mask(self, mask: np.ndarray) -> "BasisDictionary":
        mask = np.asarray(mask, dtype=bool).copy()
        if mask.shape != (self.size,):
            raise ConfigError(f"mask shape {mask.shape} does not match basis size {self.size}")
        if not mask[: self.n_exempt].all():
            raise ConfigError("raw state/control/constant entries cannot be pruned")
        mask.setflags(write=False)
        return replace(self, active_mask=mask)


def build_basis(env_id: str, state_dim: int, control_dim: int, n_random: int,
                seed: int, norm_scale=None) -> BasisDictionary:
    """Deterministically generate the dictionary from the seed."""
    if n_random < 0:
        raise ConfigError(f"n_random must be >= 0, got {n_random}")
    dz = state_dim + control_dim
    if norm_scale is None:
        norm_scale = DEFAULT_NORM_SCALE.get(env_id, tuple([1.0] * dz))
    norm_scale = tuple(float(s) for s in norm_scale)
    if len(norm_scale) != dz:
        raise ConfigError(f"norm_scale has {len(norm_scale)} entries for {dz} input dims")
    rng = np.random.default_rng(np.uint64(seed))
    kinds = rng.choice([_KIND_MONOMIAL, _KIND_SINUSOID, _KIND_MONO_SINE],
                       size=n_random, p=[0.4, 0.3, 0.3])
    # monomial index triples point into z_ext = [z_norm, 1]; dz = the ones slot
    mono_idx = np.full((n_random, 3), dz, dtype=int)
    # half the sinusoid directions are axis-aligned: rotational dynamics
    # live on single angular coordinates, and a dense random direction
    # almost never isolates one
    sin_w = rng.normal(0.0, 1.5, size=(n_random, dz))
    axis_aligned = rng.uniform(size=n_random) < 0.5
    axis_dim = rng.integers(0, dz, size=max(n_random, 1))[:n_random]
    axis_freq = rng.normal(0.0, 2.0, size=n_random)
    for r in range(n_random):
        if axis_aligned[r]:
            sin_w[r] = 0.0
            sin_w[r, axis_dim[r]] = axis_freq[r]
    sin_phi = rng.uniform(0.0, 2.0 * np.pi, size=n_random)
    ms_dim = rng.integers(0, dz, size=max(n_random, 1))[:n_random]
    degrees = rng.integers(2, 4, size=max(n_random, 1))[:n_random]
    for r in range(n_random):
        if kinds[r] == _KIND_MONOMIAL:
            deg = degrees[r]
            mono_idx[r, :deg] = rng.integers(0, dz, size=deg)
    mask = np.ones(state_dim + control_dim + 1 + n_random, dtype=bool)
    mask.setflags(write=False)
    for arr in (kinds, mono_idx, sin_w, sin_phi, ms_dim):
        arr.setflags(write=False)
    return BasisDictionary(
        env_id=env_id, state_dim=state_dim, control_dim=control_dim,
        n_random=n_random, seed=int(seed), norm_scale=norm_scale,
        active_mask=mask, _kinds=kinds, _mono_idx=mono_idx,
        _sin_w=sin_w, _sin_phi=sin_phi, _ms_dim=ms_dim,
    )


def identity_basis(env_id: str, state_dim: int, control_dim: int) -> BasisDictionary:
    """Raw state + raw control + constant only."""
    return build_basis(env_id, state_dim, control_dim, n_random=0, seed=0,
                       norm_scale=tuple([1.0] * (state_dim + control_dim)))


class _LiftPlan:
    """Precompiled evaluation arrays for the active features of a basis.

    Internally the random features are grouped by kind so each block is
    written with one contiguous slice; `perm` maps this evaluation order
    back to the canonical (seed-index) column order used by fit, the model
    file, and the public lift().
    """

    def __init__(self, basis: BasisDictionary, dtype=np.float64):
        self.basis = basis
        self.dtype = dtype
        d, m = basis.state_dim, basis.control_dim
        self.dz = d + m
        rmask = basis.active_mask[basis.n_exempt:]
        act = np.flatnonzero(rmask)
        kinds = basis._kinds[act] if act.size else np.empty(0, dtype=int)
        self.n_out = basis.n_exempt + act.size
        mono_rows = np.flatnonzero(kinds == _KIND_MONOMIAL)
        sin_rows = np.flatnonzero(kinds == _KIND_SINUSOID)
        ms_rows = np.flatnonzero(kinds == _KIND_MONO_SINE)
        self.n_mono = mono_rows.size
        self.n_sin = sin_rows.size
        self.n_ms = ms_rows.size
        inv_scale = 1.0 / np.asarray(basis.norm_scale)
        # normalization is folded into the feature parameters: monomials
        # gather raw columns of the output buffer (the constant column
        # doubles as the unused slot) and carry a per-feature scale
        mono_idx = (basis._mono_idx[act[mono_rows]] if mono_rows.size
                    else np.empty((0, 3), dtype=int))
        self.mono_cols = np.where(mono_idx < self.dz, mono_idx, basis.n_exempt - 1)
        scale_ext = np.concatenate([inv_scale, [1.0]])
        self.mono_scale = np.prod(scale_ext[mono_idx], axis=1).astype(dtype)
        sin_all = np.concatenate([sin_rows, ms_rows])
        self.sin_w = (np.ascontiguousarray((basis._sin_w[act[sin_all]] * inv_scale).T, dtype=dtype)
                      if sin_all.size else np.empty((self.dz, 0), dtype=dtype))
        self.sin_phi = basis._sin_phi[act[sin_all]].astype(dtype) if sin_all.size else np.empty(0, dtype=dtype)
        self.ms_dim = basis._ms_dim[act[ms_rows]] if ms_rows.size else np.empty(0, dtype=int)
        self.ms_scale = inv_scale[self.ms_dim].astype(dtype)
        # evaluation column -> canonical column
        plan_random_order = np.concatenate([mono_rows, sin_rows, ms_rows]).astype(int)
        self.perm = np.concatenate([
            np.arange(basis.n_exempt),
            basis.n_exempt + plan_random_order,
        ]).astype(int)
        self.inv_perm = np.argsort(self.perm)

    def permute_matrix_cols(self, k_rows: np.ndarray) -> np.ndarray:
        """Reorder canonical-order columns into evaluation order."""
        return np.ascontiguousarray(k_rows[:, self.perm])

    def lift(self, states: np.ndarray, controls: np.ndarray,
             out: np.ndarray | None = None) -> np.ndarray:
        """Evaluation-order lift; column j corresponds to canonical column
        perm[j].  `out` may carry state from a previous call with the same
        controls: the control and constant columns are then reused."""
        n = states.shape[0]
        b = self.basis
        d, m = b.state_dim, b.control_dim
        reused = out is not None and out.shape == (n, self.n_out)
        if not reused:
            out = np.empty((n, self.n_out), dtype=self.dtype)
            out[:, d: d + m] = controls
            out[:, b.n_exempt - 1] = 1.0
        out[:, :d] = states
        if self.n_out == b.n_exempt:
            return out
        col = b.n_exempt
        if self.n_mono:
            mono = out[:, self.mono_cols[:, 0]]
            mono *= out[:, self.mono_cols[:, 1]]
            mono *= out[:, self.mono_cols[:, 2]]
            mono *= self.mono_scale
            out[:, col: col + self.n_mono] = mono
            col += self.n_mono
        if self.n_sin or self.n_ms:
            s = np.ascontiguousarray(out[:, : self.dz]) @ self.sin_w
            s += self.sin_phi
            np.sin(s, out=s)
            out[:, col: col + self.n_sin] = s[:, : self.n_sin]
            col += self.n_sin
            if self.n_ms:
                ms = np.multiply(s[:, self.n_sin:], out[:, self.ms_dim])
                ms *= self.ms_scale
                out[:, col: col + self.n_ms] = ms
        return out

    def lift_canonical(self, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
        return self.lift(states, controls)[:, self.inv_perm]


def lift(basis: BasisDictionary, state, control) -> np.ndarray:
    """Evaluate every active basis function at one (state, control) pair."""
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    if state.shape != (basis.state_dim,) or control.shape != (basis.control_dim,):
        raise DomainError(
            f"lift expected dims ({basis.state_dim},)/({basis.control_dim},), "
            f"got {state.shape}/{control.shape}")
    if not (np.all(np.isfinite(state)) and np.all(np.isfinite(control))):
        raise DomainError("non-finite state or control")
    return _LiftPlan(basis).lift_canonical(state[None, :], control[None, :])[0]


@dataclass
class TrainingStats:
    one_step_rmse: np.ndarray
    n_samples: int
    retained_count: int


@dataclass
class KoopmanModel:
    """Fitted lifted-space operator.  Immutable in use; shareable across
    concurrent rollout workers."""

    basis: BasisDictionary
    k_matrix: np.ndarray = field(repr=False)  # (active, active)
    dt: float
    ridge: float
    training_stats: TrainingStats | None = None

    # single-precision is plenty for safety classification and makes the
    # vectorized sin kernels an order of magnitude faster
    rollout_dtype = np.float32

    def __post_init__(self):
        self._plan = _LiftPlan(self.basis)
        d = self.basis.state_dim
        self._k_state_t = np.ascontiguousarray(
            self._plan.permute_matrix_cols(self.k_matrix[:d]).T)
        self._plan32 = _LiftPlan(self.basis, dtype=np.float32)
        self._k_state_t32 = self._k_state_t.astype(np.float32)

    def predict_batch(self, states: np.ndarray, controls: np.ndarray,
                      lift_buf: np.ndarray | None = None) -> np.ndarray:
        """Next raw states for a batch: one lift and one matrix product.

        lift_buf, when provided, must be private to the caller and only
        carried across calls with identical controls; the model itself
        holds no mutable state, so it is shareable across workers.
        """
        lifted = self._plan.lift(states, controls, lift_buf)
        return lifted @ self._k_state_t

    def predict_session(self, dtype=np.float64):
        """A single-caller stepping closure that reuses its lift buffer
        while the batch shape (and therefore the control block) is stable.
        Create one per worker task; sessions share only immutable state."""
        plan = self._plan32 if dtype == np.float32 else self._plan
        kt = self._k_state_t32 if dtype == np.float32 else self._k_state_t
        buf = None

        def step(states: np.ndarray, controls: np.ndarray) -> np.ndarray:
            nonlocal buf
            if buf is not None and buf.shape[0] != states.shape[0]:
                buf = None
            buf = plan.lift(states, controls, buf)
            return buf @ kt

        return step


def _lift_matrix(basis: BasisDictionary, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return _LiftPlan(basis).lift_canonical(x, u)


def fit(dataset, basis: BasisDictionary, ridge: float = 1e-6) -> KoopmanModel:
    """Least-squares operator over lifted pairs.

    Targets are lift(x_next, u) with the source sample's control.  After the
    solve, the rows of K that predict control and constant entries are
    overwritten with identity rows (exogenous inputs held over one step).
    Raises IllConditionedError for rank-deficient normal equations at
    ridge=0, naming the basis function aligned with the null direction.
    """
    if dataset.n == 0:
        raise ConfigError("cannot fit on an empty dataset")
    if ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")
    if dataset.x.shape[1] != basis.state_dim or dataset.u.shape[1] != basis.control_dim:
        raise ConfigError(
            f"dataset dims ({dataset.x.shape[1]}, {dataset.u.shape[1]}) do not match basis "
            f"({basis.state_dim}, {basis.control_dim})")
    phi_x = _lift_matrix(basis, dataset.x, dataset.u)
    phi_y = _lift_matrix(basis, dataset.x_next, dataset.u)
    gram = phi_x.T @ phi_x
    size = gram.shape[0]
    if ridge == 0.0:
        eigvals, eigvecs = np.linalg.eigh(gram)
        tol = size * np.finfo(float).eps * max(eigvals[-1], 0.0)
        if eigvals[0] <= tol:
            null_vec = eigvecs[:, 0]
            active_names = [n for n, a in zip(basis.names(), basis.active_mask) if a]
            worst = active_names[int(np.argmax(np.abs(null_vec)))]
            raise IllConditionedError(
                f"normal equations are rank-deficient with ridge=0; "
                f"null direction is dominated by basis function {worst!r}")
    else:
        gram = gram + ridge * np.eye(size)
    kt = scipy.linalg.solve(gram, phi_x.T @ phi_y, assume_a="pos")
    k = np.ascontiguousarray(kt.T)
    d, m = basis.state_dim, basis.control_dim
    # exogenous inputs: control and constant coordinates propagate unchanged
    k[d: d + m + 1, :] = 0.0
    k[np.arange(d, d + m + 1), np.arange(d, d + m + 1)] = 1.0
    model = KoopmanModel(basis=basis, k_matrix=k, dt=dataset.dt, ridge=ridge)
    pred = model.predict_batch(dataset.x, dataset.u)
    rmse = np.sqrt(np.mean((pred - dataset.x_next) ** 2, axis=0))
    model.training_stats = TrainingStats(
        one_step_rmse=rmse, n_samples=dataset.n, retained_count=basis.active_count)
    return model


def predict(model: KoopmanModel, state, control) -> np.ndarray:
    """Single-step raw-state prediction."""
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    if state.shape != (model.basis.state_dim,) or control.shape != (model.basis.control_dim,):
        raise DomainError("state/control dims do not match the model basis")
    if not (np.all(np.isfinite(state)) and np.all(np.isfinite(control))):
        raise DomainError("non-finite state or control")
    return model.predict_batch(state[None, :], control[None, :])[0]


@dataclass
class EvalReport:
    one_step_rmse: np.ndarray            # per state dim
    k_step_rmse: dict[int, np.ndarray]   # horizon -> per state dim
    n_samples: int


def evaluate(model: KoopmanModel, dataset, horizons=(1,)) -> EvalReport:
    """One-step and open-loop k-step RMSE, chaining predictions with the
    dataset's recorded controls.  Chains never cross episode boundaries."""
    if dataset.n == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    pred = model.predict_batch(dataset.x, dataset.u)
    one_step = np.sqrt(np.mean((pred - dataset.x_next) ** 2, axis=0))
    starts = dataset.episode_starts()
    ends = np.concatenate([starts[1:], [dataset.n]])
    k_step: dict[int, np.ndarray] = {}
    for k in horizons:
        if k == 1:
            k_step[1] = one_step
            continue
        errs = []
        # divergence of an unstable operator is expected and handled (the
        # resulting error is simply huge); silence the overflow chatter
        with np.errstate(over="ignore", invalid="ignore"):
            for s, e in zip(starts, ends):
                length = e - s
                n_chains = length - k + 1
                if n_chains <= 0:
                    continue
                cur = dataset.x[s: s + n_chains].copy()
                for j in range(k):
                    cur = model.predict_batch(cur, dataset.u[s + j: s + j + n_chains])
                errs.append((cur - dataset.x_next[s + k - 1: s + k - 1 + n_chains]) ** 2)
        if errs:
            stacked = np.concatenate(errs, axis=0)
            stacked = np.where(np.isfinite(stacked), stacked, 1e30)
            k_step[k] = np.sqrt(np.mean(stacked, axis=0))
    return EvalReport(one_step_rmse=one_step, k_step_rmse=k_step, n_samples=dataset.n)


def _column_influence(model: KoopmanModel, col_rms: np.ndarray, target_rms: np.ndarray) -> np.ndarray:
    """Per-column contribution to raw-state prediction: weight into the
    state rows, scaled by the feature's typical magnitude, relative to the
    target's scale."""
    d = model.basis.state_dim
    k_state = np.abs(model.k_matrix[:d])
    rel = k_state / np.maximum(target_rms[:, None], 1e-12)
    return rel.max(axis=0) * col_rms


def sparsify(model: KoopmanModel, dataset, thresholds=(1e-4, 1e-3, 1e-2),
             guard_factor: float = 1.05, holdout_fraction: float = 0.2,
             score_horizon: int = 1) -> KoopmanModel:
    """Iterative thresholded refitting over the random features.

    At each threshold, drop active non-exempt features whose influence
    falls below it and refit, repeating until stable.  A prune is accepted
    only while held-out error stays within guard_factor of the reference:
    one-step error against the unpruned model, and, when score_horizon > 1,
    open-loop error at that horizon against the best candidate seen (rich
    dictionaries can be one-step-accurate yet diverge when iterated, so
    the horizon score is what pruning is allowed to improve).  Otherwise
    the schedule stops and the last accepted model is kept.
    """
    basis = model.basis
    if basis.n_random == 0 or not thresholds:
        return model
    train, val = dataset.split(holdout_fraction)
    if val.n == 0 or train.n == 0:
        train = val = dataset
    target_rms = np.sqrt(np.mean(val.x_next**2, axis=0))
    scale = np.maximum(target_rms, 1e-12)

    def score(m: KoopmanModel, horizon: int) -> float:
        rep = evaluate(m, val, horizons=(horizon,))
        r = rep.k_step_rmse.get(horizon, rep.one_step_rmse)
        return float(np.sqrt(np.mean((r / scale) ** 2)))

    base_one = score(model, 1)
    best_rank = score(model, score_horizon) if score_horizon > 1 else base_one
    current = model
    pruned = False
    for threshold in sorted(thresholds):
        while True:
            phi = _lift_matrix(current.basis, train.x, train.u)
            col_rms = np.sqrt(np.mean(phi**2, axis=0))
            infl = _column_influence(current, col_rms, scale)
            mask_active = current.basis.active_mask.copy()
            active_cols = np.flatnonzero(mask_active)
            exempt = active_cols < current.basis.n_exempt
            drop = (infl < threshold) & ~exempt
            if not np.any(drop):
                break
            mask_active[active_cols[drop]] = False
            candidate = fit(train, current.basis.with_mask(mask_active), ridge=current.ridge)
            if score(candidate, 1) > guard_factor * base_one:
                return fit(dataset, current.basis, ridge=current.ridge) if pruned else model
            if score_horizon > 1:
                rank = score(candidate, score_horizon)
                if rank > guard_factor * best_rank:
                    return fit(dataset, current.basis, ridge=current.ridge) if pruned else model
                best_rank = min(best_rank, rank)
            current = candidate
            pruned = True
    return fit(dataset, current.basis, ridge=current.ridge) if pruned else model


def save_model(model: KoopmanModel, path, config_hash: str = "") -> None:
    """Self-describing text format: JSON header line with the basis recipe
    and active mask, then K rows in decimal text (17 significant digits)."""
    path = Path(path)
    b = model.basis
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "config_hash": config_hash,
        "env_id": b.env_id,
        "dt": model.dt,
        "state_dim": b.state_dim,
        "control_dim": b.control_dim,
        "n_random": b.n_random,
        "basis_seed": b.seed,
        "norm_scale": list(b.norm_scale),
        "active_mask": [int(v) for v in b.active_mask],
        "ridge": model.ridge,
        "training_stats": None if model.training_stats is None else {
            "one_step_rmse": [float(v) for v in model.training_stats.one_step_rmse],
            "n_samples": model.training_stats.n_samples,
            "retained_count": model.training_stats.retained_count,
        },
    }
    with path.open("w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for row in model.k_matrix:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_model(path) -> KoopmanModel:
    path = Path(path)
    with path.open() as f:
        try:
            header = json.loads(f.readline())
        except json.JSONDecodeError as e:
            raise DomainError(f"{path}:1: malformed model header: {e}") from e
        rows = [[float(v) for v in line.split()] for line in f if line.strip()]
    basis = build_basis(
        env_id=header["env_id"],
        state_dim=int(header["state_dim"]),
        control_dim=int(header["control_dim"]),
        n_random=int(header["n_random"]),
        seed=int(header["basis_seed"]),
        norm_scale=header["norm_scale"],
    ).with_mask(np.array(header["active_mask"], dtype=bool))
    k = np.array(rows)
    if k.shape != (basis.active_count, basis.active_count):
        raise DomainError(
            f"{path}: K has shape {k.shape}, expected "
            f"({basis.active_count}, {basis.active_count})")
    stats = header.get("training_stats")
    model = KoopmanModel(
        basis=basis, k_matrix=k, dt=float(header["dt"]), ridge=float(header["ridge"]),
        training_stats=None if stats is None else TrainingStats(
            one_step_rmse=np.array(stats["one_step_rmse"]),
            n_samples=int(stats["n_samples"]),
            retained_count=int(stats["retained_count"]),
        ),
    )
    return model
