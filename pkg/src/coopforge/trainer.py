"""Alternating cooperative training of the two translator/energy pairs.

Each iteration runs a fixed phase order: sample batches, translate them,
revise the translations by Langevin dynamics, ascend the two energy models
on their data-vs-synthesis gradient, then descend the translators (and the
temporal predictors in sequence mode) on the teaching objective. Energy
updates always precede translator updates, and every gradient inside a
phase is taken at the phase-start parameters.

Everything the loop consumes is keyed by (seed, iteration) through
counter-based streams, so a checkpoint needs to store only plain integers
to make a resumed run bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .domains import DomainDataset, DomainDescriptor, descriptor_line, generate, parse_descriptor, save_ppm
from .langevin import LangevinConfig, LangevinDiverged, revise
from .metrics import FeatureMap, cycle_error, default_feature_map, frechet_distance
from .networks import EnergyModel, Net, TemporalPredictor, build_scorer, build_translator
from .objectives import (
    LossWeights,
    combine_sequence_losses,
    cycle_loss,
    ebm_grad,
    spatiotemporal_loss,
    teach_loss,
    temporal_loss,
)
from .rng import data_stream
from .tensor import Graph, Tensor, backward, load_ctns, save_ctns

__all__ = [
    "METRICS_HEADER",
    "AdamSlots",
    "TrainConfig",
    "TrainPhaseError",
    "TrainState",
    "adam_step",
    "init_state",
    "load_checkpoint",
    "refinement_scores",
    "save_checkpoint",
    "train",
    "train_iteration",
    "train_sequence_iteration",
    "translate_sequence",
]

METRICS_HEADER = "iter,fd_x,fd_y,cycle_err,energy_init,energy_revised,teach_loss,seconds"

# Held-out evaluation material never shares streams with training: eval
# datasets shift the descriptor seed, eval-time revision shifts the noise
# seed, both by this constant.
_EVAL_SEED_SHIFT = 9973


@dataclass(frozen=True)
class TrainConfig:
    """Inputs of the training loop.

    ``lr_alpha_x`` is the rate of the translator producing domain X
    (the Y-to-X map), mirroring how ``lr_theta_x`` is the rate of the
    energy model over X.
    """

    iterations: int
    langevin: LangevinConfig = LangevinConfig(steps=15, step_size=0.02)
    batch: int = 1
    lr_theta_x: float = 2e-4
    lr_theta_y: float = 2e-4
    lr_alpha_x: float = 2e-4
    lr_alpha_y: float = 2e-4
    weights: LossWeights = LossWeights()
    k: int = 2
    seed: int = 0
    eval_every: int = 100
    checkpoint_every: int = 500
    eval_samples: int = 200
    reference_scale: float = 1.0
    sequence_cycle: bool = False

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        for name in ("lr_theta_x", "lr_theta_y", "lr_alpha_x", "lr_alpha_y"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.eval_every < 1 or self.checkpoint_every < 1:
            raise ValueError("eval_every and checkpoint_every must be >= 1")
        if self.eval_samples < 3:
            raise ValueError("eval_samples must be >= 3")
        if not self.reference_scale > 0:
            raise ValueError("reference_scale must be positive")


@dataclass
class AdamSlots:
    """First/second moment buffers and the step count for one parameter set."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    count: int = 0


@dataclass
class TrainState:
    """The four (or six) networks, their optimizer slots, and the clock."""

    ebm_x: EnergyModel
    ebm_y: EnergyModel
    g_xy: Net
    g_yx: Net
    r_x: TemporalPredictor | None
    r_y: TemporalPredictor | None
    opt: dict[str, AdamSlots]
    t: int = 0
    last: dict = field(default_factory=dict)

    def groups(self) -> dict[str, dict[str, Tensor]]:
        """Optimizer groups; alpha_x is the Y-to-X translator's set."""
        out = {
            "theta_x": self.ebm_x.params,
            "theta_y": self.ebm_y.params,
            "alpha_x": self.g_yx.params,
            "alpha_y": self.g_xy.params,
        }
        if self.r_x is not None:
            out["rho_x"] = self.r_x.params
            out["rho_y"] = self.r_y.params
        return out

    def nets(self) -> dict[str, Net]:
        out = {"ebm_x": self.ebm_x.scorer, "ebm_y": self.ebm_y.scorer, "g_xy": self.g_xy, "g_yx": self.g_yx}
        if self.r_x is not None:
            out["r_x"] = self.r_x
            out["r_y"] = self.r_y
        return out


class TrainPhaseError(RuntimeError):
    """An iteration failed; state was rolled back. ``phase`` names the step."""

    def __init__(self, phase: str, detail: str):
        super().__init__(f"[{phase}] {detail}")
        self.phase = phase


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    moments: tuple[np.ndarray, np.ndarray],
    rate: float,
    t: int,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """One bias-corrected Adam update; returns (new param, new moments).

    Descends the supplied gradient; callers wanting ascent (the energy
    models) pass the negated gradient. Pure: nothing is mutated.
    """
    m0, v0 = moments
    if not (param.shape == grad.shape == m0.shape == v0.shape):
        raise T.ShapeError(
            f"adam_step shapes disagree: param {param.shape}, grad {grad.shape}, "
            f"m {m0.shape}, v {v0.shape}"
        )
    if t < 1:
        raise ValueError("Adam step count starts at 1")
    m = beta1 * m0 + (1.0 - beta1) * grad
    v = beta2 * v0 + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - rate * m_hat / (np.sqrt(v_hat) + eps), (m, v)


def _init_slots(params: dict[str, Tensor]) -> AdamSlots:
    return AdamSlots(
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
    )


def _apply_adam(slots: AdamSlots, params: dict[str, Tensor], grads: dict[str, np.ndarray], rate: float) -> None:
    slots.count += 1
    for name, p in params.items():
        p.data, (slots.m[name], slots.v[name]) = adam_step(
            p.data, grads[name], (slots.m[name], slots.v[name]), rate, slots.count
        )


# ---------------------------------------------------------------------------
# State setup, snapshot, rollback
# ---------------------------------------------------------------------------


def init_state(cfg: TrainConfig, ds_x: DomainDataset, ds_y: DomainDataset) -> TrainState:
    """Seeded networks and zeroed optimizer slots for a dataset pair."""
    if ds_x.kind != ds_y.kind:
        raise ValueError(f"domain kinds differ: {ds_x.kind} vs {ds_y.kind}")
    if ds_x.sample_shape != ds_y.sample_shape:
        raise T.ShapeError(f"sample shapes differ: {ds_x.sample_shape} vs {ds_y.sample_shape}")
    shape = ds_x.sample_shape
    sequence = ds_x.kind == "sequences"
    ebm_x = EnergyModel(build_scorer(shape, seed=cfg.seed, name="ebm_x"), cfg.reference_scale)
    ebm_y = EnergyModel(build_scorer(shape, seed=cfg.seed, name="ebm_y"), cfg.reference_scale)
    g_xy = build_translator(shape, seed=cfg.seed, name="g_xy")
    g_yx = build_translator(shape, seed=cfg.seed, name="g_yx")
    r_x = r_y = None
    if sequence:
        r_x = TemporalPredictor(in_shape=shape, k=cfg.k, seed=cfg.seed, name="r_x")
        r_y = TemporalPredictor(in_shape=shape, k=cfg.k, seed=cfg.seed, name="r_y")
    state = TrainState(ebm_x, ebm_y, g_xy, g_yx, r_x, r_y, opt={})
    state.opt = {name: _init_slots(params) for name, params in state.groups().items()}
    return state


def _snapshot(state: TrainState):
    params = {g: {k: p.data.copy() for k, p in ps.items()} for g, ps in state.groups().items()}
    moments = {
        g: (
            {k: a.copy() for k, a in s.m.items()},
            {k: a.copy() for k, a in s.v.items()},
            s.count,
        )
        for g, s in state.opt.items()
    }
    return params, moments


def _rollback(state: TrainState, snap) -> None:
    params, moments = snap
    for g, ps in state.groups().items():
        for k, p in ps.items():
            p.data = params[g][k]
    for g, s in state.opt.items():
        s.m, s.v, s.count = moments[g]


def _check_group_finite(state: TrainState, snap, names: tuple[str, ...], phase: str) -> None:
    groups = state.groups()
    for g in names:
        for k, p in groups[g].items():
            if not np.isfinite(p.data).all():
                _rollback(state, snap)
                raise TrainPhaseError(phase, f"non-finite parameter {g}.{k} after update")


def _run_translator(net: Net, batch: np.ndarray) -> np.ndarray:
    """Translate outside any recording graph (eval-mode forward)."""
    return net.forward(Tensor(np.ascontiguousarray(batch))).data


# ---------------------------------------------------------------------------
# One iteration, image/point mode
# ---------------------------------------------------------------------------


def _revise_or_abort(state: TrainState, snap, x0: np.ndarray, model: EnergyModel, cfg: TrainConfig, offset: int, phase: str) -> np.ndarray:
    try:
        return revise(x0, model, cfg.langevin, chain_offset=offset)
    except LangevinDiverged as err:
        _rollback(state, snap)
        raise TrainPhaseError(phase, str(err)) from err


def _ebm_update(state: TrainState, snap, model: EnergyModel, group: str, data: np.ndarray, synth: np.ndarray, rate: float) -> None:
    grads = ebm_grad(model, data, synth)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            _rollback(state, snap)
            raise TrainPhaseError(group, f"non-finite energy gradient for {name}")
    # ascent on the estimator: Adam descends, so feed the negation
    _apply_adam(state.opt[group], model.params, {k: -g for k, g in grads.items()}, rate)
    _check_group_finite(state, snap, (group,), group)


def _iteration_stats(state: TrainState, x_hat, x_tilde, y_hat, y_tilde, teach: float) -> None:
    e_init = 0.5 * (state.ebm_x.energy_values(x_hat).mean() + state.ebm_y.energy_values(y_hat).mean())
    e_rev = 0.5 * (state.ebm_x.energy_values(x_tilde).mean() + state.ebm_y.energy_values(y_tilde).mean())
    state.last = {"energy_init": float(e_init), "energy_revised": float(e_rev), "teach_loss": teach}


def train_iteration(state: TrainState, data_x: np.ndarray, data_y: np.ndarray, cfg: TrainConfig) -> TrainState:
    """One alternating-teaching iteration on unpaired batches.

    Order: sample y, translate to x-hat; sample x, translate to y-hat;
    revise both against their energy models; ascend theta_x then theta_y;
    descend both translators on teaching plus weighted cycle loss, with
    all translator gradients taken at the phase-start parameters.
    """
    if len(data_x) == 0 or len(data_y) == 0:
        raise ValueError("datasets must be non-empty")
    t = state.t
    snap = _snapshot(state)

    y_batch = data_y[data_stream(cfg.seed, t, phase=0).integers(0, len(data_y), size=cfg.batch)]
    x_hat = _run_translator(state.g_yx, y_batch)
    x_batch = data_x[data_stream(cfg.seed, t, phase=1).integers(0, len(data_x), size=cfg.batch)]
    y_hat = _run_translator(state.g_xy, x_batch)

    offset = 2 * t * cfg.batch
    x_tilde = _revise_or_abort(state, snap, x_hat, state.ebm_x, cfg, offset, "langevin_x")
    y_tilde = _revise_or_abort(state, snap, y_hat, state.ebm_y, cfg, offset + cfg.batch, "langevin_y")

    _ebm_update(state, snap, state.ebm_x, "theta_x", x_batch, x_tilde, cfg.lr_theta_x)
    _ebm_update(state, snap, state.ebm_y, "theta_y", y_batch, y_tilde, cfg.lr_theta_y)

    state.g_xy.zero_grads()
    state.g_yx.zero_grads()
    with Graph() as graph:
        teach_x = teach_loss(state.g_yx, y_batch, x_tilde)
        teach_y = teach_loss(state.g_xy, x_batch, y_tilde)
        loss = teach_x + teach_y
        if cfg.weights.lambda_cyc > 0:
            loss = loss + cfg.weights.lambda_cyc * cycle_loss(state.g_xy, state.g_yx, x_batch, y_batch)
    if not np.isfinite(loss.data):
        _rollback(state, snap)
        raise TrainPhaseError("alpha", f"non-finite translator loss {loss.data!r}")
    backward(graph, loss)
    _apply_adam(state.opt["alpha_x"], state.g_yx.params, {k: p.grad.copy() for k, p in state.g_yx.params.items()}, cfg.lr_alpha_x)
    _apply_adam(state.opt["alpha_y"], state.g_xy.params, {k: p.grad.copy() for k, p in state.g_xy.params.items()}, cfg.lr_alpha_y)
    _check_group_finite(state, snap, ("alpha_x", "alpha_y"), "alpha")

    _iteration_stats(state, x_hat, x_tilde, y_hat, y_tilde, float(teach_x.data + teach_y.data))
    state.t = t + 1
    return state


# ---------------------------------------------------------------------------
# One iteration, sequence mode
# ---------------------------------------------------------------------------


def _sample_clips(seqs: np.ndarray, gen, count: int, k: int) -> np.ndarray:
    """Uniform (sequence, start) windows of length k+1: (count, k+1, C, H, W)."""
    n, length = seqs.shape[0], seqs.shape[1]
    if length < k + 1:
        raise ValueError(f"sequences of length {length} cannot yield k+1 = {k + 1} frame clips")
    idx = gen.integers(0, n, size=count)
    starts = gen.integers(0, length - k, size=count)
    return np.stack([seqs[i, s : s + k + 1] for i, s in zip(idx, starts)])


def _frames(clips: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(clips.reshape((-1,) + clips.shape[2:]))


def train_sequence_iteration(state: TrainState, seq_x: np.ndarray, seq_y: np.ndarray, cfg: TrainConfig) -> TrainState:
    """One iteration of the sequence variant.

    The energy phase is the image phase applied to the individual frames
    of the sampled clips. The translator phase jointly descends both
    translators and both temporal predictors on teaching plus the
    weighted temporal and round-trip prediction terms; the plain cycle
    term is off unless ``cfg.sequence_cycle`` asks for it.
    """
    if state.r_x is None or state.r_y is None:
        raise ValueError("state has no temporal predictors; build it from sequence datasets")
    t = state.t
    snap = _snapshot(state)

    y_clips = _sample_clips(seq_y, data_stream(cfg.seed, t, phase=0), cfg.batch, cfg.k)
    y_frames = _frames(y_clips)
    x_hat = _run_translator(state.g_yx, y_frames)
    x_clips = _sample_clips(seq_x, data_stream(cfg.seed, t, phase=1), cfg.batch, cfg.k)
    x_frames = _frames(x_clips)
    y_hat = _run_translator(state.g_xy, x_frames)

    per_dir = cfg.batch * (cfg.k + 1)
    offset = 2 * t * per_dir
    x_tilde = _revise_or_abort(state, snap, x_hat, state.ebm_x, cfg, offset, "langevin_x")
    y_tilde = _revise_or_abort(state, snap, y_hat, state.ebm_y, cfg, offset + per_dir, "langevin_y")

    _ebm_update(state, snap, state.ebm_x, "theta_x", x_frames, x_tilde, cfg.lr_theta_x)
    _ebm_update(state, snap, state.ebm_y, "theta_y", y_frames, y_tilde, cfg.lr_theta_y)

    for net in (state.g_xy, state.g_yx, state.r_x, state.r_y):
        net.zero_grads()
    with Graph() as graph:
        teach_x = teach_loss(state.g_yx, y_frames, x_tilde)
        teach_y = teach_loss(state.g_xy, x_frames, y_tilde)
        tp_x = temporal_loss(state.r_x, x_clips)
        tp_y = temporal_loss(state.r_y, y_clips)
        st_x = spatiotemporal_loss(state.g_xy, state.r_y, state.g_yx, x_clips)
        st_y = spatiotemporal_loss(state.g_yx, state.r_x, state.g_xy, y_clips)
        loss = combine_sequence_losses(teach_x, teach_y, tp_x, tp_y, st_x, st_y, cfg.weights)
        if cfg.sequence_cycle and cfg.weights.lambda_cyc > 0:
            loss = loss + cfg.weights.lambda_cyc * cycle_loss(state.g_xy, state.g_yx, x_frames, y_frames)
    if not np.isfinite(loss.data):
        _rollback(state, snap)
        raise TrainPhaseError("alpha", f"non-finite sequence loss {loss.data!r}")
    backward(graph, loss)
    for group, net, rate in (
        ("alpha_x", state.g_yx, cfg.lr_alpha_x),
        ("alpha_y", state.g_xy, cfg.lr_alpha_y),
        ("rho_x", state.r_x, cfg.lr_alpha_x),
        ("rho_y", state.r_y, cfg.lr_alpha_y),
    ):
        _apply_adam(state.opt[group], net.params, {k: p.grad.copy() for k, p in net.params.items()}, rate)
    _check_group_finite(state, snap, ("alpha_x", "alpha_y", "rho_x", "rho_y"), "alpha")

    _iteration_stats(state, x_hat, x_tilde, y_hat, y_tilde, float(teach_x.data + teach_y.data))
    state.t = t + 1
    return state


def translate_sequence(frames: np.ndarray, g: Net, p: EnergyModel, cfg: LangevinConfig) -> np.ndarray:
    """Frame-wise translation followed by Langevin revision.

    (T, C, H, W) in, (T, C, H, W) out; steps = 0 returns the pure
    translator output.
    """
    arr = np.asarray(frames)
    if arr.ndim != 4 or arr.shape[0] == 0:
        raise T.ShapeError(f"expected a (T, C, H, W) sequence, got {arr.shape}")
    moved = _run_translator(g, arr)
    if cfg.steps == 0:
        return moved
    return revise(moved, p, cfg)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(state: TrainState, cfg: TrainConfig, desc_x: DomainDescriptor, desc_y: DomainDescriptor, out_dir) -> Path:
    """Write ckpt_{t}/: manifest, one tensor file per parameter and moment.

    The manifest's seed and iteration integers are the complete sampling
    state: every stream the loop touches is a pure function of them.
    """
    root = Path(out_dir) / f"ckpt_{state.t}"
    root.mkdir(parents=True, exist_ok=True)
    for net_name, net in state.nets().items():
        d = root / "nets" / net_name
        d.mkdir(parents=True, exist_ok=True)
        for k, p in net.params.items():
            save_ctns(p.data, d / f"{k}.ctns")
    for group, slots in state.opt.items():
        d = root / "adam" / group
        d.mkdir(parents=True, exist_ok=True)
        for k in slots.m:
            save_ctns(slots.m[k], d / f"{k}.m.ctns")
            save_ctns(slots.v[k], d / f"{k}.v.ctns")
    manifest = {
        "iteration": state.t,
        "config": asdict(cfg),
        "domain_x": descriptor_line(desc_x),
        "domain_y": descriptor_line(desc_y),
        "rng": {"seed": cfg.seed, "langevin_seed": cfg.langevin.seed, "iteration": state.t},
        "adam_counts": {g: s.count for g, s in state.opt.items()},
        "params": {n: sorted(net.params) for n, net in state.nets().items()},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return root


def _config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["langevin"] = LangevinConfig(**d["langevin"])
    d["weights"] = LossWeights(**d["weights"])
    return TrainConfig(**d)


def load_checkpoint(path) -> tuple[TrainState, TrainConfig, DomainDescriptor, DomainDescriptor]:
    """Rebuild a TrainState (networks, moments, clock) from ckpt_{t}/."""
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    cfg = _config_from_dict(manifest["config"])
    desc_x = parse_descriptor(manifest["domain_x"])
    desc_y = parse_descriptor(manifest["domain_y"])
    state = init_state(cfg, generate(desc_x), generate(desc_y))
    for net_name, net in state.nets().items():
        stored = set(manifest["params"][net_name])
        if stored != set(net.params):
            raise KeyError(f"{net_name}: checkpoint parameters {sorted(stored)} do not match")
        net.load_state({k: load_ctns(root / "nets" / net_name / f"{k}.ctns").data for k in net.params})
    for group, slots in state.opt.items():
        slots.count = manifest["adam_counts"][group]
        for k in slots.m:
            slots.m[k] = load_ctns(root / "adam" / group / f"{k}.m.ctns").data
            slots.v[k] = load_ctns(root / "adam" / group / f"{k}.v.ctns").data
    state.t = manifest["iteration"]
    return state, cfg, desc_x, desc_y


# ---------------------------------------------------------------------------
# Evaluation and sample grids
# ---------------------------------------------------------------------------


def _eval_descriptor(desc: DomainDescriptor, cfg: TrainConfig) -> DomainDescriptor:
    params = dict(desc.params)
    for key in ("n", "n_seqs"):
        if key in params:
            params[key] = cfg.eval_samples
    return replace(desc, params=params, seed=desc.seed + _EVAL_SEED_SHIFT)


def _eval_frames(ds: DomainDataset) -> np.ndarray:
    if ds.kind == "sequences":
        return _frames(ds.examples)
    return ds.examples


def _eval_langevin(cfg: TrainConfig) -> LangevinConfig:
    return replace(cfg.langevin, seed=cfg.langevin.seed + _EVAL_SEED_SHIFT)


def _evaluate(state: TrainState, eval_x: np.ndarray, eval_y: np.ndarray, cfg: TrainConfig, fm: FeatureMap) -> dict:
    """Held-out metrics: directional distances plus the round-trip error."""
    to_y = _run_translator(state.g_xy, eval_x)
    to_x = _run_translator(state.g_yx, eval_y)
    return {
        "fd_x": frechet_distance(to_y, eval_y, fm),
        "fd_y": frechet_distance(to_x, eval_x, fm),
        "cycle_err": cycle_error(state.g_xy, state.g_yx, eval_x, eval_y),
    }


def refinement_scores(state: TrainState, eval_x: np.ndarray, eval_y: np.ndarray, cfg: TrainConfig, fm: FeatureMap) -> dict:
    """Fréchet distances before and after revising the translated batches.

    The margin fd_init - fd_revised measures what the energy models add on
    top of the raw translators; revision noise is keyed by the shifted eval
    seed, so repeated calls at the same state agree bitwise.
    """
    lng = _eval_langevin(cfg)
    to_y = _run_translator(state.g_xy, eval_x)
    to_x = _run_translator(state.g_yx, eval_y)
    return {
        "fd_init_x": frechet_distance(to_y, eval_y, fm),
        "fd_init_y": frechet_distance(to_x, eval_x, fm),
        "fd_revised_x": frechet_distance(revise(to_y, state.ebm_y, lng), eval_y, fm),
        "fd_revised_y": frechet_distance(revise(to_x, state.ebm_x, lng), eval_x, fm),
    }


def _rasterize_points(points: np.ndarray, side: int = 64, extent: float = 3.0) -> np.ndarray:
    """Scatter plot as a (side, side) intensity image on [-extent, extent]^2."""
    canvas = np.zeros((side, side), dtype=np.float32)
    scaled = (points + extent) / (2.0 * extent) * (side - 1)
    idx = np.clip(np.round(scaled).astype(int), 0, side - 1)
    canvas[side - 1 - idx[:, 1], idx[:, 0]] = 1.0
    return canvas


def _write_grid(state: TrainState, eval_x: np.ndarray, cfg: TrainConfig, path: Path, kind: str) -> None:
    """Input | translated | revised triptych, rows of samples, display-clamped."""
    lng = _eval_langevin(cfg)
    if kind == "points":
        moved = _run_translator(state.g_xy, eval_x)
        revised = revise(moved, state.ebm_y, lng)
        panels = [_rasterize_points(p) for p in (eval_x, moved, revised)]
        save_ppm(np.concatenate(panels, axis=1), path)
        return
    frames = eval_x[:6] if kind == "images" else eval_x[:6, 0]
    moved = _run_translator(state.g_xy, frames)
    revised = revise(moved, state.ebm_y, lng)
    rows = [np.concatenate([a, b, c], axis=2) for a, b, c in zip(frames, moved, revised)]
    save_ppm(np.clip(np.concatenate(rows, axis=1), 0.0, 1.0), path)


# ---------------------------------------------------------------------------
# The full loop
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def train(
    cfg: TrainConfig,
    desc_x: DomainDescriptor,
    desc_y: DomainDescriptor,
    out_dir,
    resume_from=None,
) -> tuple[TrainState, Path]:
    """Run the loop to cfg.iterations; returns (final state, metrics path).

    Writes a metrics.csv row every eval_every iterations, checkpoints every
    checkpoint_every and at the end, and one final sample grid. Resuming
    from a checkpoint re-keys every stream by the stored iteration, so the
    continued run equals an uninterrupted one exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds_x, ds_y = generate(desc_x), generate(desc_y)
    sequence = ds_x.kind == "sequences"

    if resume_from is not None:
        state, stored_cfg, stored_x, stored_y = load_checkpoint(resume_from)
        if stored_cfg != cfg:
            raise ValueError("checkpoint config does not match the requested one")
        if (stored_x, stored_y) != (desc_x, desc_y):
            raise ValueError("checkpoint domains do not match the requested ones")
    else:
        state = init_state(cfg, ds_x, ds_y)

    eval_x_ds = generate(_eval_descriptor(desc_x, cfg))
    eval_y_ds = generate(_eval_descriptor(desc_y, cfg))
    eval_x, eval_y = _eval_frames(eval_x_ds), _eval_frames(eval_y_ds)
    fm = default_feature_map(ds_x.sample_shape)

    metrics_path = out / "metrics.csv"
    fresh = resume_from is None or not metrics_path.exists()
    start = time.perf_counter()
    with open(metrics_path, "w" if fresh else "a") as mf:
        if fresh:
            mf.write(METRICS_HEADER + "\n")
        while state.t < cfg.iterations:
            if sequence:
                train_sequence_iteration(state, ds_x.examples, ds_y.examples, cfg)
            else:
                train_iteration(state, ds_x.examples, ds_y.examples, cfg)
            it = state.t
            if it % cfg.eval_every == 0 or it == cfg.iterations:
                scores = _evaluate(state, eval_x, eval_y, cfg, fm)
                seconds = time.perf_counter() - start
                mf.write(
                    f"{it},{_fmt(scores['fd_x'])},{_fmt(scores['fd_y'])},{_fmt(scores['cycle_err'])},"
                    f"{_fmt(state.last['energy_init'])},{_fmt(state.last['energy_revised'])},"
                    f"{_fmt(state.last['teach_loss'])},{_fmt(seconds)}\n"
                )
                mf.flush()
            if it % cfg.checkpoint_every == 0 or it == cfg.iterations:
                save_checkpoint(state, cfg, desc_x, desc_y, out)
    _write_grid(state, eval_x_ds.examples, cfg, out / "grid_final.ppm", ds_x.kind)
    return state, metrics_path
