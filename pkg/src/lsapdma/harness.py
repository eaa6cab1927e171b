"""Monte Carlo experiment driver and baselines.

One drop runs the full link: user geometry, channels, pattern construction,
user selection, ZF precoding, MMSE filtering and gain extraction, the power
policy (equal split, fixed-ratio ladder, or the interior-point optimum), and
the resulting sum rate.  Equivalent gains are computed once per drop from an
equal-power allocation and held fixed while the policy sets the powers.

Baselines run through the same evaluator: the orthogonal scheme is the
identity pattern with equal power, and the power-domain scheme is the
diversity-one far-near paired pattern with a fixed power ratio, so reducing
the main scheme to either baseline is a configuration change, not a separate
code path.
"""

from __future__ import annotations

import configparser
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .beamforming import SingularChannelError, compute_zfbf, select_users
from .channel import CellConfig, drop_users, user_channels
from .optimizer import BarrierParams, OptProblem, barrier_solve
from .pattern import (
    PatternMatrix,
    correlation_matrix,
    equal_power,
    fixed_ratio_power,
    format_pattern_text,
    oma_pattern,
    parse_pattern_text,
    pnoma_pattern,
    simple_beam_allocation,
)
from .receiver import build_link_state, mmse_filter, normalized_gains, sinr, sum_rate

SCHEMES = ("oma", "pnoma", "lsa-pdma")
POLICIES = ("fixed-ratio", "optimal")
PATTERN_POLICIES = ("simple", "oma", "pnoma", "fixed")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: cell, array, schemes, sweeps, and output destination.

    Exactly one of ``p_sum_db`` / ``mu`` may hold more than one value; that
    list is the sweep axis of the emitted table.  For the baselines the user
    count is forced (N for oma, 2N for pnoma); ``users`` applies to the
    pattern-mapped scheme.
    """

    cell: CellConfig = field(default_factory=CellConfig)
    n_tx: int = 16
    n_rx: int = 4
    n_beams: int = 3
    schemes: tuple[str, ...] = ("lsa-pdma",)
    users: tuple[int, ...] = (7,)
    policies: tuple[str, ...] = ("fixed-ratio",)
    pattern_policy: str = "simple"
    fixed_pattern: PatternMatrix | None = None
    p_sum_db: tuple[float, ...] = (10.0,)
    mu: tuple[float, ...] = (2.0,)
    p0_ratio: float = 1.0
    pnoma_mu: float = 0.25
    r_min: float = 0.0
    epsilon_ratio: float = 1e-6
    strict_pattern: bool = False
    relinearize: bool = False
    drops: int = 1000
    seed: int = 1
    workers: int = 1
    max_redraws: int = 100
    output_path: str = "results"

    def __post_init__(self):
        if self.drops < 1:
            raise ConfigError("drops must be at least 1")
        if self.n_tx < self.n_beams:
            raise ConfigError("need n_tx >= n_beams")
        if self.n_beams * self.n_rx > self.n_tx:
            raise ConfigError("zero forcing needs n_beams * n_rx <= n_tx")
        for scheme in self.schemes:
            if scheme not in SCHEMES:
                raise ConfigError(f"unknown scheme {scheme!r}")
        for policy in self.policies:
            if policy not in POLICIES:
                raise ConfigError(f"unknown power policy {policy!r}")
        if self.pattern_policy not in PATTERN_POLICIES:
            raise ConfigError(f"unknown pattern policy {self.pattern_policy!r}")
        if "lsa-pdma" in self.schemes:
            for k in self.users:
                if not self.n_beams <= k <= 2**self.n_beams - 1:
                    raise ConfigError(
                        f"lsa-pdma needs N <= K <= 2^N - 1, got K={k} for N={self.n_beams}"
                    )
        if len(self.p_sum_db) > 1 and len(self.mu) > 1:
            raise ConfigError("only one of p_sum_db and mu may sweep")
        if self.pattern_policy == "fixed":
            if self.fixed_pattern is None:
                raise ConfigError("pattern_policy 'fixed' needs a pattern matrix")
            if self.fixed_pattern.n_beams != self.n_beams:
                raise ConfigError("fixed pattern must have one row per beam")
            if tuple(self.users) != (self.fixed_pattern.n_users,):
                raise ConfigError("users must match the fixed pattern's column count")
        if self.strict_pattern and self.r_min > 0:
            raise ConfigError(
                "a strict pattern support with a positive minimum rate is inconsistent"
            )

    @property
    def sweep_axis(self) -> str:
        return "mu" if len(self.mu) > 1 else "p_sum_db"

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        read = cp.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        return _config_from_parser(cp)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        return _config_from_parser(cp)

    def to_text(self) -> str:
        """Canonical key = value echo of the resolved configuration."""
        lines = ["[cell]"]
        cell = self.cell
        lines += [
            f"radius_m = {cell.radius_m}",
            f"path_loss_factor = {cell.path_loss_factor}",
            f"path_loss_exponent = {cell.path_loss_exponent}",
            f"shadow_std_db = {cell.shadow_std_db}",
            f"noise_variance = {cell.noise_variance}",
            f"min_distance_m = {cell.min_distance_m}",
            f"reference_distance_m = {cell.reference_distance_m}",
            "",
            "[array]",
            f"n_tx = {self.n_tx}",
            f"n_rx = {self.n_rx}",
            f"n_beams = {self.n_beams}",
            "",
            "[experiment]",
            f"schemes = {', '.join(self.schemes)}",
            f"users = {', '.join(str(k) for k in self.users)}",
            f"drops = {self.drops}",
            f"seed = {self.seed}",
            f"workers = {self.workers}",
            f"max_redraws = {self.max_redraws}",
            "",
            "[power]",
            f"policies = {', '.join(self.policies)}",
            f"p_sum_db = {', '.join(f'{v:g}' for v in self.p_sum_db)}",
            f"mu = {', '.join(f'{v:g}' for v in self.mu)}",
            f"p0_ratio = {self.p0_ratio}",
            f"pnoma_mu = {self.pnoma_mu}",
            f"r_min = {self.r_min}",
            f"epsilon_ratio = {self.epsilon_ratio}",
            f"strict_pattern = {self.strict_pattern}",
            f"relinearize = {self.relinearize}",
            "",
            "[pattern]",
            f"policy = {self.pattern_policy}",
        ]
        if self.fixed_pattern is not None:
            block = format_pattern_text(self.fixed_pattern).replace("\n", "\n  ")
            lines.append(f"matrix = {block}")
        lines += ["", "[output]", f"path = {self.output_path}", ""]
        return "\n".join(lines)


def _split(value: str) -> list[str]:
    return [tok for tok in value.replace(",", " ").split() if tok]


def _config_from_parser(cp: configparser.ConfigParser) -> ExperimentConfig:
    kwargs = {}
    if cp.has_section("cell"):
        cell_kwargs = {}
        for key in (
            "radius_m",
            "path_loss_factor",
            "path_loss_exponent",
            "shadow_std_db",
            "noise_variance",
            "min_distance_m",
            "reference_distance_m",
        ):
            if cp.has_option("cell", key):
                cell_kwargs[key] = cp.getfloat("cell", key)
        kwargs["cell"] = CellConfig(**cell_kwargs)
    if cp.has_section("array"):
        for key in ("n_tx", "n_rx", "n_beams"):
            if cp.has_option("array", key):
                kwargs[key] = cp.getint("array", key)
    if cp.has_section("experiment"):
        if cp.has_option("experiment", "schemes"):
            kwargs["schemes"] = tuple(_split(cp.get("experiment", "schemes")))
        if cp.has_option("experiment", "users"):
            kwargs["users"] = tuple(int(v) for v in _split(cp.get("experiment", "users")))
        for key in ("drops", "seed", "workers", "max_redraws"):
            if cp.has_option("experiment", key):
                kwargs[key] = cp.getint("experiment", key)
    if cp.has_section("power"):
        if cp.has_option("power", "policies"):
            kwargs["policies"] = tuple(_split(cp.get("power", "policies")))
        for key in ("p_sum_db", "mu"):
            if cp.has_option("power", key):
                kwargs[key] = tuple(float(v) for v in _split(cp.get("power", key)))
        for key in ("p0_ratio", "pnoma_mu", "r_min", "epsilon_ratio"):
            if cp.has_option("power", key):
                kwargs[key] = cp.getfloat("power", key)
        for key in ("strict_pattern", "relinearize"):
            if cp.has_option("power", key):
                kwargs[key] = cp.getboolean("power", key)
    if cp.has_section("pattern"):
        if cp.has_option("pattern", "policy"):
            kwargs["pattern_policy"] = cp.get("pattern", "policy").strip()
        if cp.has_option("pattern", "matrix"):
            kwargs["fixed_pattern"] = parse_pattern_text(cp.get("pattern", "matrix"))
    if cp.has_section("output") and cp.has_option("output", "path"):
        kwargs["output_path"] = cp.get("output", "path").strip()
    return ExperimentConfig(**kwargs)


@dataclass(frozen=True)
class DropRecord:
    """Sum rate of one scheme at one sweep point for a single drop."""

    scheme: str
    k_users: int
    sweep_value: float
    sum_rate: float
    redraws: int


@dataclass(frozen=True)
class ResultRow:
    sweep_value: float
    scheme: str
    k_users: int
    mean_sum_rate: float
    std_error: float
    drops: int


@dataclass(frozen=True)
class ResultTable:
    rows: tuple[ResultRow, ...]


def _scheme_runs(cfg: ExperimentConfig):
    """Expand the config into per-(scheme, K, policy) evaluation bundles."""
    runs = []
    for scheme in cfg.schemes:
        if scheme == "oma":
            runs.append(("oma", cfg.n_beams, "oma", "equal", (None,)))
        elif scheme == "pnoma":
            # the baseline's power ratio is fixed; on a mu sweep its rows are
            # replicated as a horizontal reference
            runs.append(("pnoma", 2 * cfg.n_beams, "pnoma", "fixed-ratio", (cfg.pnoma_mu,)))
        else:
            for k in cfg.users:
                for policy in cfg.policies:
                    label = "lsa-pdma-simple" if policy == "fixed-ratio" else "lsa-pdma-optimal"
                    mus = cfg.mu if policy == "fixed-ratio" else (None,)
                    runs.append((label, k, cfg.pattern_policy, policy, mus))
    return runs


def _build_pattern(cfg: ExperimentConfig, pattern_policy: str, k: int, weakest_first) -> PatternMatrix:
    if pattern_policy == "oma":
        return oma_pattern(cfg.n_beams)
    if pattern_policy == "pnoma":
        return pnoma_pattern(cfg.n_beams, weakest_first)
    if pattern_policy == "fixed":
        return cfg.fixed_pattern
    return simple_beam_allocation(cfg.n_beams, k, weakest_first)


def _gains_matrix(channels, beams, a_matrix, sigma2) -> np.ndarray:
    gains = np.zeros((beams.n_beams, len(channels)))
    for idx, ch in enumerate(channels):
        filt = mmse_filter(ch, beams, a_matrix, sigma2)
        gains[:, idx] = normalized_gains(filt, ch, beams, sigma2)
    return gains


def _evaluate_scheme_drop(cfg: ExperimentConfig, label, k, pattern_policy, power_policy, mus, state):
    """One scheme evaluation on one drop, across the configured sweep points."""
    rng = np.random.Generator(np.random.Philox(state))
    cell = cfg.cell
    sigma2 = cell.noise_variance
    redraws = 0
    while True:
        drop = drop_users(cell, k, rng)
        channels = user_channels(cell, drop, cfg.n_rx, cfg.n_tx, rng)
        hints = np.array([ch.large_scale_gain for ch in channels])
        weakest_first = np.argsort(hints, kind="stable")
        pattern = _build_pattern(cfg, pattern_policy, k, weakest_first)
        omega = select_users(channels, pattern, hints)
        try:
            beams = compute_zfbf(channels, omega)
            break
        except SingularChannelError:
            redraws += 1
            if redraws > cfg.max_redraws:
                raise ConfigError(
                    f"more than {cfg.max_redraws} consecutive singular-channel redraws"
                )

    records = []
    mu_axis = cfg.sweep_axis == "mu"
    for db in cfg.p_sum_db:
        p_sum = 10.0 ** (db / 10.0)
        p_init = equal_power(pattern, p_sum)
        link = build_link_state(channels, beams, p_init, sigma2)

        def emit(rate, mu_value):
            if mu_axis:
                # mu-independent runs (equal power, the power-domain baseline's
                # fixed ratio, the optimal policy) replicate as horizontal rows
                own_mu = power_policy == "fixed-ratio" and label.startswith("lsa-pdma")
                sweeps = [mu_value] if own_mu else list(cfg.mu)
            else:
                sweeps = [db]
            for sweep in sweeps:
                records.append(
                    DropRecord(
                        scheme=label,
                        k_users=k,
                        sweep_value=float(sweep),
                        sum_rate=float(rate),
                        redraws=redraws,
                    )
                )

        if power_policy == "equal":
            emit(sum_rate(link), None)
        elif power_policy == "fixed-ratio":
            for mu in mus:
                alloc = fixed_ratio_power(pattern, cfg.p0_ratio, mu, link.sic_orders, p_sum)
                rate = sum(
                    float(np.log2(1.0 + sinr(link.gains[n], alloc.entries[n], link.sic_orders[n])).sum())
                    for n in range(cfg.n_beams)
                )
                emit(rate, mu)
        else:  # optimal
            support = pattern.entries.astype(bool) if cfg.strict_pattern else None
            prob = OptProblem.build(
                link.gains,
                p_sum,
                selected=omega,
                epsilon=cfg.epsilon_ratio * p_sum,
                r_min=cfg.r_min,
                support=support,
            )
            sol = barrier_solve(prob)
            if sol.status == "infeasible":
                raise ConfigError("the optimal-policy problem is infeasible as configured")
            rate = sol.objective_value
            if cfg.relinearize and sol.p_matrix is not None:
                gains2 = _gains_matrix(channels, beams, correlation_matrix(sol.p_matrix), sigma2)
                prob2 = OptProblem.build(
                    gains2,
                    p_sum,
                    selected=omega,
                    epsilon=cfg.epsilon_ratio * p_sum,
                    r_min=cfg.r_min,
                    support=support,
                )
                sol2 = barrier_solve(prob2)
                if sol2.status != "infeasible":
                    rate = sol2.objective_value
            emit(rate, None)
    return records


def run_drop(cfg: ExperimentConfig, seed) -> list[DropRecord]:
    """Evaluate every configured scheme on one drop.

    ``seed`` is an int or a SeedSequence identifying the drop.  Each scheme
    evaluation restarts the drop's stream, so schemes with the same user
    count see identical channels (paired comparisons, exact reductions).
    """
    state = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    records = []
    for label, k, pattern_policy, power_policy, mus in _scheme_runs(cfg):
        records.extend(
            _evaluate_scheme_drop(cfg, label, k, pattern_policy, power_policy, mus, state)
        )
    return records


def _mc_task(args):
    cfg, index = args
    return run_drop(cfg, np.random.SeedSequence(cfg.seed, spawn_key=(index,)))


def run_monte_carlo(cfg: ExperimentConfig, collect_samples: bool = False):
    """Average run_drop over independent per-drop streams.

    Returns a ResultTable; with ``collect_samples`` also returns the raw
    per-drop sum rates keyed by (scheme, K, sweep_value), ordered by drop
    index, so results are identical for any worker count.
    """
    tasks = [(cfg, idx) for idx in range(cfg.drops)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_drop = list(pool.map(_mc_task, tasks, chunksize=max(1, cfg.drops // (8 * cfg.workers))))
    else:
        per_drop = [_mc_task(task) for task in tasks]

    samples: dict[tuple[str, int, float], list[float]] = {}
    for drop_records in per_drop:  # ordered by drop index
        for rec in drop_records:
            samples.setdefault((rec.scheme, rec.k_users, rec.sweep_value), []).append(rec.sum_rate)

    rows = []
    for (scheme, k, sweep), values in samples.items():
        arr = np.asarray(values)
        stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        rows.append(
            ResultRow(
                sweep_value=sweep,
                scheme=scheme,
                k_users=k,
                mean_sum_rate=float(arr.mean()),
                std_error=stderr,
                drops=len(arr),
            )
        )
    rows.sort(key=lambda r: (r.sweep_value, r.scheme, r.k_users))
    table = ResultTable(rows=tuple(rows))
    if collect_samples:
        return table, {key: np.asarray(vals) for key, vals in samples.items()}
    return table


def _version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).resolve().parent,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"lsapdma-{__version__}+git.{out.stdout.strip()}"
    except Exception:
        pass
    return f"lsapdma-{__version__}"


def emit_results(table: ResultTable, path, config_text: str | None = None):
    """Write the result table (CSV) and a run summary under ``path``.

    The CSV carries one row per (sweep, scheme, K) point with decimals at six
    significant digits; the summary echoes the resolved configuration and a
    version string.
    """
    if not table.rows:
        raise ValueError("result table is empty")
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    lines = ["sweep,scheme,K,mean_sum_rate,stderr,drops"]
    for row in table.rows:
        lines.append(
            f"{row.sweep_value:.6g},{row.scheme},{row.k_users},"
            f"{row.mean_sum_rate:.6g},{row.std_error:.6g},{row.drops}"
        )
    csv_path.write_text("\n".join(lines) + "\n")

    summary_path = out_dir / "summary.txt"
    parts = [f"version = {_version_string()}", f"rows = {len(table.rows)}", ""]
    if config_text:
        parts += ["[config]", config_text]
    summary_path.write_text("\n".join(parts) + "\n")
    return csv_path, summary_path
