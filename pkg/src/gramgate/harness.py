"""Synthetic-data generators and Monte Carlo verification experiments.

Everything here exists to check the calibrators' guarantees at desk
scale: finite-sample risk control across risk budgets, threshold
stability, the weighted-average moment identities and anti-concentration,
the calibration CLT, shipped/unshipped severity reduction, and planted
subspace instances for the spectral-overlap margin theorem.

Trials are independent work units with RNG streams derived from
(seed, trial index); aggregation is a deterministic reduction, so the
output is identical regardless of worker count.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special, stats

from .calibrators import (
    WeightLaw,
    bb_crc_calibrate,
    crc_calibrate,
    draw_weights,
    rbwa_crc_calibrate,
)
from .errors import AlphaOutOfRange, ConstantLosses, EmptyInput, InvalidEta, InvalidSpec
from .gpso import PipelineConfig, Prototype, batch_scatter, build_prototype, scatter_eigengap
from .gram import EmbeddingBatch, l2_normalize_rows, operator_norm, top_r_projector
from .policy import CalibrationItem, Threshold, items_to_arrays, risk_at

SCORE_LAWS = ("uniform01", "beta")
SEVERITY_MODELS = ("logistic", "deterministic")


@dataclass(frozen=True)
class ScoreLaw:
    """Marginal law of the policy score Q."""

    kind: str = "uniform01"
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in SCORE_LAWS:
            raise InvalidSpec(f"score law must be one of {SCORE_LAWS}, got {self.kind!r}")
        if self.kind == "beta" and (self.a <= 0 or self.b <= 0):
            raise InvalidSpec(f"beta parameters must be positive, got a={self.a}, b={self.b}")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform01":
            return rng.uniform(0.0, 1.0, size=size)
        return rng.beta(self.a, self.b, size=size)


@dataclass(frozen=True)
class SeverityModel:
    """Conditional law of the severity m given the score Q.

    logistic: m ~ Bernoulli(sigmoid(k (q0 - Q))), so low scores carry
    high severity. deterministic: m = 1{Q < tau}.
    """

    kind: str = "logistic"
    k: float = 10.0
    q0: float = 0.5
    tau: float = 0.5

    def __post_init__(self):
        if self.kind not in SEVERITY_MODELS:
            raise InvalidSpec(f"severity model must be one of {SEVERITY_MODELS}, got {self.kind!r}")

    def draw(self, rng: np.random.Generator, q: np.ndarray) -> np.ndarray:
        if self.kind == "deterministic":
            return (q < self.tau).astype(float)
        p = special.expit(self.k * (self.q0 - q))
        return (rng.uniform(size=q.shape) < p).astype(float)


@dataclass(frozen=True)
class SyntheticSpec:
    """Sampling plan for one benchmark: item law, trial count, seed."""

    n: int = 200
    score_law: ScoreLaw = field(default_factory=ScoreLaw)
    severity_model: SeverityModel = field(default_factory=SeverityModel)
    trials: int = 500
    fresh_eval_size: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.n < 4:
            raise InvalidSpec(f"n must be >= 4, got {self.n}")
        if self.trials < 1:
            raise InvalidSpec(f"trials must be >= 1, got {self.trials}")
        if self.fresh_eval_size < 100:
            raise InvalidSpec(f"fresh_eval_size must be >= 100, got {self.fresh_eval_size}")


def _trial_rng(spec: SyntheticSpec, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(trial_index,)))


def _draw_pairs(spec: SyntheticSpec, rng: np.random.Generator, size: int):
    q = spec.score_law.draw(rng, size)
    m = spec.severity_model.draw(rng, q)
    return q, m


def generate_trial(
    spec: SyntheticSpec, trial_index: int
) -> tuple[list[CalibrationItem], list[CalibrationItem]]:
    """Calibration and fresh test items, i.i.d. from the same law.

    Deterministic per (spec.seed, trial_index).
    """
    if trial_index < 0:
        raise InvalidSpec(f"trial_index must be >= 0, got {trial_index}")
    rng = _trial_rng(spec, trial_index)
    q, m = _draw_pairs(spec, rng, spec.n + spec.fresh_eval_size)
    items = [CalibrationItem(q_score=float(qv), severity=float(mv)) for qv, mv in zip(q, m)]
    return items[: spec.n], items[spec.n :]


@dataclass(frozen=True)
class CalibratorConfig:
    """One calibrator column of the benchmark."""

    name: str  # crc | bb_crc | rbwa_crc
    batch_count: int = 10
    replicates: int = 50
    weight_law: WeightLaw | None = None
    label: str | None = None

    def __post_init__(self):
        if self.name not in ("crc", "bb_crc", "rbwa_crc"):
            raise InvalidSpec(f"unknown calibrator {self.name!r}")
        if self.name == "rbwa_crc" and self.weight_law is None:
            raise InvalidSpec("rbwa_crc needs a weight_law")
        if self.label is None:
            object.__setattr__(self, "label", self.name)

    def describe_k_or_eta(self) -> str:
        if self.name == "bb_crc":
            return str(self.replicates)
        if self.name == "rbwa_crc":
            return self.weight_law.describe()
        return ""

    def calibrate(self, items, alpha: float, rng) -> Threshold:
        if self.name == "crc":
            return crc_calibrate(items, alpha)
        if self.name == "bb_crc":
            return bb_crc_calibrate(items, self.batch_count, self.replicates, alpha, rng)
        return rbwa_crc_calibrate(items, self.batch_count, self.weight_law, alpha, rng)


def benchmark_calibrators(batch_count: int = 10, replicates: int = 50, eta: float = 1.0):
    """The standard trio: CRC, bootstrap, and Dirichlet-weighted."""
    return [
        CalibratorConfig(name="crc"),
        CalibratorConfig(name="bb_crc", batch_count=batch_count, replicates=replicates),
        CalibratorConfig(
            name="rbwa_crc", batch_count=batch_count, weight_law=WeightLaw.dirichlet(eta)
        ),
    ]


@dataclass(frozen=True)
class RiskReportRow:
    """Aggregate of one (calibrator, alpha) cell over all trials."""

    calibrator: str
    alpha: float
    mean_empirical_risk: float
    risk_se: float
    mean_lambda: float
    lambda_se: float
    reject_rate: float
    trials: int

    def as_dict(self) -> dict:
        return {
            "calibrator": self.calibrator,
            "alpha": self.alpha,
            "mean_empirical_risk": self.mean_empirical_risk,
            "risk_se": self.risk_se,
            "mean_lambda": self.mean_lambda,
            "lambda_se": self.lambda_se,
            "reject_rate": self.reject_rate,
            "trials": self.trials,
        }


@dataclass
class RiskExperimentResult:
    """Rows plus the per-trial detail needed for ordering checks."""

    rows: list[RiskReportRow]
    lambdas: dict[tuple[str, float], list[float | None]]
    risks: dict[tuple[str, float], np.ndarray]


def _calibrator_seed(spec: SyntheticSpec, trial: int, cal_index: int) -> int:
    ss = np.random.SeedSequence(entropy=spec.seed, spawn_key=(trial, cal_index + 1))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _run_trial(args) -> list[tuple[int, int, float | None, float]]:
    """Worker body: one trial, all (calibrator, alpha) cells."""
    spec, configs, alphas, trial = args
    cal_items, fresh_items = generate_trial(spec, trial)
    fresh_q, fresh_m = items_to_arrays(fresh_items)
    out = []
    for ci, cfg in enumerate(configs):
        seed = _calibrator_seed(spec, trial, ci)
        for ai, alpha in enumerate(alphas):
            # fresh generator per alpha from the same seed: identical
            # draws, so lambda depends on alpha only through the budget
            thr = cfg.calibrate(cal_items, alpha, seed)
            risk = risk_at(fresh_q, fresh_m, thr)
            out.append((ci, ai, thr.value, risk))
    return out


def run_risk_experiment(
    spec: SyntheticSpec,
    configs: Sequence[CalibratorConfig],
    alphas: Sequence[float],
    workers: int = 1,
) -> RiskExperimentResult:
    """Calibrate each trial, score on its fresh set, and aggregate.

    REJECT_ALL trials are excluded from the threshold mean/SE and
    reported through ``reject_rate``; an all-reject cell reports 0 for
    both by convention.
    """
    if not configs:
        raise InvalidSpec("need at least one calibrator config")
    for alpha in alphas:
        if not 0.0 < alpha < 1.0:
            raise AlphaOutOfRange(f"alpha must be in (0, 1), got {alpha!r}")
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise InvalidSpec(f"duplicate calibrator labels: {labels}")

    tasks = [(spec, tuple(configs), tuple(alphas), t) for t in range(spec.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_run_trial, tasks, chunksize=max(1, spec.trials // (8 * workers))))
    else:
        per_trial = [_run_trial(t) for t in tasks]

    lambdas: dict[tuple[str, float], list[float | None]] = {
        (c.label, a): [] for c in configs for a in alphas
    }
    risks: dict[tuple[str, float], list[float]] = {
        (c.label, a): [] for c in configs for a in alphas
    }
    for cells in per_trial:
        for ci, ai, lam, risk in cells:
            key = (configs[ci].label, alphas[ai])
            lambdas[key].append(lam)
            risks[key].append(risk)

    rows = []
    for cfg in configs:
        for alpha in alphas:
            key = (cfg.label, alpha)
            risk_arr = np.asarray(risks[key])
            lam_real = np.asarray([v for v in lambdas[key] if v is not None])
            t = risk_arr.size
            rows.append(
                RiskReportRow(
                    calibrator=cfg.label,
                    alpha=alpha,
                    mean_empirical_risk=float(risk_arr.mean()),
                    risk_se=float(risk_arr.std(ddof=1) / np.sqrt(t)) if t > 1 else 0.0,
                    mean_lambda=float(lam_real.mean()) if lam_real.size else 0.0,
                    lambda_se=(
                        float(lam_real.std(ddof=1) / np.sqrt(lam_real.size))
                        if lam_real.size > 1
                        else 0.0
                    ),
                    reject_rate=float(1.0 - lam_real.size / t),
                    trials=t,
                )
            )
    return RiskExperimentResult(
        rows=rows, lambdas=lambdas, risks={k: np.asarray(v) for k, v in risks.items()}
    )


# --- weighted-average moment identities -------------------------------------


@dataclass(frozen=True)
class CantelliCheck:
    t: float
    frequency: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.frequency <= self.bound + 1e-3


@dataclass(frozen=True)
class MomentReport:
    """Empirical versus closed-form moments of one weighted batch loss."""

    losses: tuple[float, ...]
    eta: float
    kappa: float
    samples: int
    mu_closed: float
    mu_empirical: float
    var_closed: float
    var_empirical: float
    cantelli: tuple[CantelliCheck, ...]

    @property
    def mu_rel_err(self) -> float:
        return abs(self.mu_empirical - self.mu_closed) / max(abs(self.mu_closed), 1e-12)

    @property
    def var_rel_err(self) -> float:
        return abs(self.var_empirical - self.var_closed) / max(abs(self.var_closed), 1e-12)

    @property
    def cantelli_pass(self) -> bool:
        return all(c.ok for c in self.cantelli)

    def as_dict(self) -> dict:
        return {
            "losses": ";".join(f"{v:g}" for v in self.losses),
            "eta": self.eta,
            "kappa": self.kappa,
            "samples": self.samples,
            "mu_closed": self.mu_closed,
            "mu_empirical": self.mu_empirical,
            "mu_rel_err": self.mu_rel_err,
            "var_closed": self.var_closed,
            "var_empirical": self.var_empirical,
            "var_rel_err": self.var_rel_err,
            "cantelli_pass": self.cantelli_pass,
        }


def _dirichlet_matrix(eta: float, size: int, draws: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.gamma(eta, 1.0, size=(draws, size))
    totals = g.sum(axis=1, keepdims=True)
    bad = np.flatnonzero(totals.ravel() == 0.0)
    for i in bad:  # underflow guard, essentially unreachable
        while g[i].sum() == 0.0:
            g[i] = rng.gamma(eta, 1.0, size=size)
        totals[i] = g[i].sum()
    return g / totals


def rbwa_moment_check(
    losses: Sequence[float], eta: float, num_samples: int, rng
) -> MomentReport:
    """Monte Carlo check of the weighted-loss mean/variance identities.

    The weighted batch loss sum_i p_i l_i under Dirichlet(eta 1) weights
    has mean mean(l) and variance Var_emp(l) / (kappa + 1) with
    kappa = I eta; one-sided deviations obey the Cantelli bound.
    """
    ell = np.asarray(losses, dtype=float)
    if ell.size < 2:
        raise ValueError(f"need at least 2 losses, got {ell.size}")
    if not np.isfinite(eta) or eta <= 0:
        raise InvalidEta(f"eta must be positive, got {eta!r}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    kappa = ell.size * eta
    mu = float(ell.mean())
    var_emp_l = float(ell.var())  # population variance of the loss vector
    var_closed = var_emp_l / (kappa + 1.0)

    weights = _dirichlet_matrix(eta, ell.size, num_samples, gen)
    samples = weights @ ell
    sigma = np.sqrt(var_closed) if var_closed > 0 else 0.0
    ts = [0.5 * sigma, sigma, 2.0 * sigma] if sigma > 0 else []
    cantelli = tuple(
        CantelliCheck(
            t=float(t),
            frequency=float(np.mean(samples >= mu + t)),
            bound=float(var_emp_l / (var_emp_l + (kappa + 1.0) * t * t)),
        )
        for t in ts
    )
    return MomentReport(
        losses=tuple(float(v) for v in ell),
        eta=float(eta),
        kappa=float(kappa),
        samples=num_samples,
        mu_closed=mu,
        mu_empirical=float(samples.mean()),
        var_closed=var_closed,
        var_empirical=float(samples.var()),
        cantelli=cantelli,
    )


def anti_concentration_check(
    losses: Sequence[float], eta: float, num_samples: int, rng
) -> tuple[bool, dict]:
    """True iff all sampled weighted losses are pairwise distinct.

    Requires a non-constant loss vector; the weighted loss then has a
    continuous law, so exact ties should never occur.
    """
    ell = np.asarray(losses, dtype=float)
    if ell.size < 2 or np.all(ell == ell[0]):
        raise ConstantLosses("anti-concentration needs >= 2 distinct loss values")
    if not np.isfinite(eta) or eta <= 0:
        raise InvalidEta(f"eta must be positive, got {eta!r}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    samples = _dirichlet_matrix(eta, ell.size, num_samples, gen) @ ell
    distinct = int(np.unique(samples).size)
    report = {"samples": num_samples, "distinct": distinct, "ties": num_samples - distinct}
    return distinct == num_samples, report


# --- calibration CLT ---------------------------------------------------------


@dataclass(frozen=True)
class CltRow:
    batch_groups: int
    replications: int
    ks_distance: float
    zero_variance: bool
    mu_plugin: float
    var_plugin: float

    def as_dict(self) -> dict:
        return {
            "G": self.batch_groups,
            "replications": self.replications,
            "ks_distance": self.ks_distance,
            "zero_variance": self.zero_variance,
            "mu_plugin": self.mu_plugin,
            "var_plugin": self.var_plugin,
        }


def _batch_losses(
    spec: SyntheticSpec, lam: float, rng: np.random.Generator, batches: int
) -> np.ndarray:
    """(batches, I) per-item losses at the fixed threshold lam."""
    q, m = _draw_pairs(spec, rng, batches * spec.n)
    losses = np.where(q >= lam, m, 0.0)
    return losses.reshape(batches, spec.n)


def _weighted_batch_means(
    losses: np.ndarray, law: WeightLaw, rng: np.random.Generator
) -> np.ndarray:
    count, size = losses.shape
    if law.kind == "uniform":
        return losses.mean(axis=1)
    if law.kind == "dirichlet":
        weights = _dirichlet_matrix(law.eta, size, count, rng)
        return np.sum(weights * losses, axis=1)
    idx = rng.integers(0, size, size=(count, law.count))
    picked = np.take_along_axis(losses, idx, axis=1)
    return picked.mean(axis=1)


def _law_variance_factor(law: WeightLaw, size: int) -> float:
    """Var(L_g | l) = factor * Var_emp(l): the variance dial of the law."""
    if law.kind == "uniform":
        return 0.0
    if law.kind == "dirichlet":
        return 1.0 / (size * law.eta + 1.0)
    return 1.0 / law.count


def clt_check(
    spec: SyntheticSpec,
    lam: float,
    batch_group_counts: Sequence[int],
    weight_law: WeightLaw,
    replications: int,
    rng,
    plugin_pool: int = 200_000,
) -> list[CltRow]:
    """Kolmogorov-Smirnov distance of the standardized mean batch loss.

    For each G, draws ``replications`` independent means of G weighted
    batch losses at the fixed threshold, standardizes with the plug-in
    mean and the law's variance decomposition
    E[Var_emp(l_g)] * factor + Var(mu_g), and reports the KS distance
    to the standard normal. The distance shrinks as G grows.
    """
    if not 0.0 <= lam <= 1.0:
        raise InvalidSpec(f"lambda must lie in [0, 1], got {lam!r}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    streams = gen.spawn(len(batch_group_counts) + 2)
    pool_losses = _batch_losses(spec, lam, streams[0], plugin_pool)
    mu_g = pool_losses.mean(axis=1)
    var_within = pool_losses.var(axis=1)  # per-batch population variance
    factor = _law_variance_factor(weight_law, spec.n)
    mu_plugin = float(mu_g.mean())
    var_plugin = float(var_within.mean() * factor + mu_g.var(ddof=1))

    rows = []
    for gi, g_count in enumerate(batch_group_counts):
        stream = streams[gi + 1]
        losses = _batch_losses(spec, lam, stream, replications * g_count)
        weighted = _weighted_batch_means(losses, weight_law, stream)
        l_bar = weighted.reshape(replications, g_count).mean(axis=1)
        if var_plugin <= 1e-15:
            rows.append(
                CltRow(g_count, replications, float("nan"), True, mu_plugin, var_plugin)
            )
            continue
        z = np.sqrt(g_count) * (l_bar - mu_plugin) / np.sqrt(var_plugin)
        ks = float(stats.kstest(z, "norm").statistic)
        rows.append(CltRow(g_count, replications, ks, False, mu_plugin, var_plugin))
    return rows


# --- shipped / unshipped severity reduction ----------------------------------


@dataclass(frozen=True)
class FsReduction:
    """Severity means of the shipped and unshipped groups at a gate."""

    fs_shipped: float
    fs_unshipped: float
    reduction_pct: float
    acceptance_rate: float
    n_shipped: int
    n_unshipped: int

    def as_dict(self) -> dict:
        return {
            "fs_unshipped": self.fs_unshipped,
            "fs_shipped": self.fs_shipped,
            "fs_reduction_pct": self.reduction_pct,
            "acceptance_rate": self.acceptance_rate,
            "n_shipped": self.n_shipped,
            "n_unshipped": self.n_unshipped,
        }


def fs_reduction_report(items: Sequence[CalibrationItem], threshold: Threshold) -> FsReduction:
    """Severity reduction from unshipped to shipped under a gate.

    reduction % = 100 * (1 - shipped mean / unshipped mean). Empty
    groups yield NaN cells (and a NaN reduction) rather than errors.
    """
    if len(items) == 0:
        raise EmptyInput("fs_reduction_report needs at least one item")
    q, m = items_to_arrays(items)
    if threshold.is_reject_all:
        shipped = np.zeros(q.shape, dtype=bool)
    else:
        shipped = q >= threshold.value
    n_ship = int(shipped.sum())
    n_unship = int(q.size - n_ship)
    fs_shipped = float(m[shipped].mean()) if n_ship else float("nan")
    fs_unshipped = float(m[~shipped].mean()) if n_unship else float("nan")
    if n_ship and n_unship and fs_unshipped != 0.0:
        reduction = 100.0 * (1.0 - fs_shipped / fs_unshipped)
    else:
        reduction = float("nan")
    return FsReduction(
        fs_shipped=fs_shipped,
        fs_unshipped=fs_unshipped,
        reduction_pct=reduction,
        acceptance_rate=n_ship / q.size,
        n_shipped=n_ship,
        n_unshipped=n_unship,
    )


# --- planted subspace instances ----------------------------------------------


@dataclass(frozen=True)
class PlantedConfig:
    """Geometry of a synthetic two-class subspace instance."""

    dim: int = 6
    rank: int = 2
    items_per_batch: int = 400
    calibration_batches: int = 8
    prototype_batches: int = 6
    noise: float = 0.06
    scales: tuple[float, ...] = (1.15, 1.0)
    bootstrap_b: int = 4
    l2: bool = True
    center: bool = False

    def pipeline(self, space: str = "feature") -> PipelineConfig:
        return PipelineConfig(
            l2=self.l2, center=self.center, r_max=self.rank,
            bootstrap_b=self.bootstrap_b, space=space,
        )


@dataclass
class PlantedInstance:
    """A planted two-class problem with measured margin-condition terms."""

    prototypes: list[Prototype]
    surrogates: dict[str, np.ndarray]
    test_batch: EmbeddingBatch
    true_label: str
    rank: int
    delta_p: float
    epsilon: float
    gamma: float
    proto_error: float
    cfg: PipelineConfig

    @property
    def premise_lhs(self) -> float:
        if self.gamma <= 0:
            return np.inf
        return (2.0 * np.sqrt(self.rank) / self.gamma) * self.epsilon + self.proto_error

    @property
    def premise_rhs(self) -> float:
        return self.delta_p / 4.0

    @property
    def premise_holds(self) -> bool:
        return self.premise_lhs < self.premise_rhs


def _planted_rows(
    basis: np.ndarray,
    pcfg: PlantedConfig,
    rng: np.random.Generator,
    n: int,
    row_order: np.ndarray | None = None,
) -> np.ndarray:
    # Fixed-magnitude coefficients over balanced sign blocks: cross terms
    # cancel in the scatter, so batches concentrate tightly around the
    # class surrogate; Gaussian noise fills the off-subspace directions.
    # A row_order permutes the coefficient rows, giving a class a stable
    # item-configuration signature on top of its feature subspace.
    scales = np.asarray(pcfg.scales, dtype=float)
    r = basis.shape[1]
    patterns = np.array(list(itertools.product((1.0, -1.0), repeat=r)))
    reps = -(-n // len(patterns))
    signs = np.tile(patterns, (reps, 1))[:n]
    if row_order is not None:
        signs = signs[row_order]
    coeffs = signs * scales[None, :]
    rows = coeffs @ basis.T + pcfg.noise * rng.normal(size=(n, pcfg.dim))
    return l2_normalize_rows(rows)


def _planted_batch(
    basis: np.ndarray, pcfg: PlantedConfig, rng: np.random.Generator,
    group_id: str, label: str | None, row_order: np.ndarray | None = None,
) -> EmbeddingBatch:
    rows = _planted_rows(basis, pcfg, rng, pcfg.items_per_batch, row_order=row_order)
    return EmbeddingBatch(rows=rows, group_id=group_id, class_label=label)


def make_planted_instance(
    rng,
    pcfg: PlantedConfig = PlantedConfig(),
    space: str = "feature",
    item_signature: bool = False,
) -> PlantedInstance:
    """One planted instance: orthogonal class subspaces, measured premise.

    The class surrogate is the average of the calibration scatters;
    prototypes come from held-out batches via the bootstrap builder; the
    test batch is drawn from a uniformly chosen class. All terms of the
    margin condition are measured, never assumed.

    With ``item_signature`` each class reuses one fixed row permutation
    across its batches, so the class signal also lives in item space
    (independent i.i.d. batches have none there: their item Grams
    concentrate around a class-free matrix).
    """
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    r = pcfg.rank
    if len(pcfg.scales) != r:
        raise InvalidSpec("scales must have one entry per planted rank")
    if 2 * r > pcfg.dim:
        raise InvalidSpec("need dim >= 2 * rank for orthogonal class subspaces")
    frame, _ = np.linalg.qr(gen.normal(size=(pcfg.dim, pcfg.dim)))
    bases = {"good": frame[:, :r], "bad": frame[:, r : 2 * r]}
    labels = sorted(bases)
    cfg = pcfg.pipeline(space)
    orders = {
        label: gen.permutation(pcfg.items_per_batch) if item_signature else None
        for label in labels
    }

    surrogates = {}
    gammas = {}
    pop_projectors = {}
    prototypes = []
    for label in labels:
        cal = [
            _planted_batch(bases[label], pcfg, gen, "cal", label, row_order=orders[label])
            for _ in range(pcfg.calibration_batches)
        ]
        surrogate = np.mean([batch_scatter(b, cfg) for b in cal], axis=0)
        surrogates[label] = surrogate
        gammas[label] = scatter_eigengap(surrogate, r)
        pop_projectors[label] = top_r_projector(surrogate, r)
        held_out = [
            _planted_batch(bases[label], pcfg, gen, "proto", label, row_order=orders[label])
            for _ in range(pcfg.prototype_batches)
        ]
        prototypes.append(build_prototype(held_out, r, cfg, gen, class_id=label))

    true_label = labels[int(gen.integers(0, len(labels)))]
    test_batch = _planted_batch(
        bases[true_label], pcfg, gen, "test", true_label, row_order=orders[true_label]
    )

    delta_p = float(
        np.linalg.norm(prototypes[0].projector.matrix - prototypes[1].projector.matrix)
    )
    epsilon = operator_norm(batch_scatter(test_batch, cfg) - surrogates[true_label])
    proto = next(p for p in prototypes if p.class_id == true_label)
    proto_error = float(
        np.linalg.norm(proto.projector.matrix - pop_projectors[true_label].matrix)
    )
    return PlantedInstance(
        prototypes=prototypes,
        surrogates=surrogates,
        test_batch=test_batch,
        true_label=true_label,
        rank=r,
        delta_p=delta_p,
        epsilon=epsilon,
        gamma=float(gammas[true_label]),
        proto_error=proto_error,
        cfg=cfg,
    )


def planted_dataset(
    rng,
    groups: int = 8,
    items_per_class: int = 24,
    pcfg: PlantedConfig | None = None,
    coincident: bool = False,
) -> list[EmbeddingBatch]:
    """Grouped two-class embedding batches for CV fixtures.

    Each group gets its own random frame; ``coincident`` draws both
    classes from the same subspace, making them indistinguishable.
    Rank-1 classes by default: their scatters are sign-free, so even
    small stratified subsamples concentrate and the margin condition
    holds on every fold.
    """
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    pcfg = pcfg or PlantedConfig(rank=1, scales=(1.0,), items_per_batch=items_per_class)
    pcfg = replace(pcfg, items_per_batch=items_per_class)
    r = pcfg.rank
    batches = []
    for g in range(groups):
        frame, _ = np.linalg.qr(gen.normal(size=(pcfg.dim, pcfg.dim)))
        good_basis = frame[:, :r]
        bad_basis = good_basis if coincident else frame[:, r : 2 * r]
        gid = f"g{g:03d}"
        batches.append(_planted_batch(good_basis, pcfg, gen, gid, "good"))
        batches.append(_planted_batch(bad_basis, pcfg, gen, gid, "bad"))
    return batches
