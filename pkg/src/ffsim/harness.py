"""Experiment orchestration: config, run grid, output files.

An experiment is a grid of independent runs (scenario x occupancy x
repetition).  Each run gets its own RNG stream seeded as
``seed_base + grid_index`` where the grid index enumerates (occupancy,
repetition) pairs; scenarios share the seed schedule so cross-scenario
comparisons use common random numbers where the population draw allows.

Outputs are plain CSV (comma delimiter, ``.`` decimal point, LF line
endings, floats at 9 significant digits) plus a JSON manifest.  All
derived tables are computed from the emitted ``passages.csv`` and
``runs.csv``, which is exactly what ``analyze`` re-reads, so re-analysis
reproduces them byte for byte.
"""

import json
import os
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from .analysis import boxplot_summary, fit_piecewise, histogram, quantile_curves
from .dynamics import Simulation, place_agents
from .lattice import ConfigurationError, Room, build_room
from .measurement import (OccupancyTrace, PassageRecord, compute_nmean,
                          relative_travel_time)
from .population import (SCENARIO_TAGS, AgentParams, normalize_tag,
                         sample_population, scenario_groups)

ConfigError = ConfigurationError

DEFAULT_OCCUPANCY = (1, 3, 5, 7, 10, 12, 14, 17, 20, 30, 40, 45, 50, 75, 100)

# relative-travel-time histogram layout (plus under/overflow)
TTR_HIST_EDGES = tuple(i * 0.25 for i in range(13))
FREE_REGIME = (0.0, 7.0)
CONGESTED_REGIME = (30.0, 45.0)


class EmptyResultsError(RuntimeError):
    """No run produced data; nothing to write."""


@dataclass(frozen=True)
class ExperimentConfig:
    length_cells: int = 18
    width_cells: int = 11
    exit_width_cells: int = 1
    cell_size_m: float = 0.4
    k_s: float = 3.5
    k_d: float = 0.7
    mu: float = 0.9
    h: float = 0.2
    scenario: str = "hom"
    occupancy: tuple[int, ...] = DEFAULT_OCCUPANCY
    egress_target: int = 1000
    warmup_egress: int = 100
    repetitions: int = 20
    seed_base: int = 1
    ttr_bin_width: int = 5
    breakpoint: int = 7
    output_dir: str = "out"
    snapshot_at: tuple[float, ...] = ()

    @property
    def path_length_m(self) -> float:
        return self.length_cells * self.cell_size_m

    @property
    def field_sensitivity_per_cell(self) -> float:
        """Distance-field exponent scale per cell.

        ``k_s`` weighs metric distance to the exit; the field itself is
        stored in cell units, so the engine receives k_s times the
        lattice constant.  With the default 0.4 m cells this calibration
        reproduces the reference free-flow velocity and exit capacity;
        the per-cell interpretation misses both by a wide margin.
        """
        return self.k_s * self.cell_size_m

    @property
    def room_capacity(self) -> int:
        # keep at least the entrance wall free so re-entry cannot deadlock
        return self.length_cells * self.width_cells - self.width_cells

    def scenario_tags(self) -> tuple[str, ...]:
        if self.scenario == "all":
            return SCENARIO_TAGS
        return (normalize_tag(self.scenario),)

    def build_room(self) -> Room:
        return build_room(self.length_cells, self.width_cells, self.exit_width_cells)


_INT_KEYS = ("length_cells", "width_cells", "exit_width_cells", "egress_target",
             "warmup_egress", "repetitions", "seed_base", "ttr_bin_width",
             "breakpoint")
_FLOAT_KEYS = ("cell_size_m", "k_s", "k_d", "mu", "h")
_CONFIG_KEYS = _INT_KEYS + _FLOAT_KEYS + ("scenario", "occupancy", "output_dir",
                                          "snapshot_at")


def _parse_scalar(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key} = {raw!r} is not a number") from None
    if key == "occupancy":
        try:
            return tuple(int(tok) for tok in raw.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"occupancy = {raw!r} is not an integer list") from None
    if key == "snapshot_at":
        try:
            return tuple(float(tok) for tok in raw.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"snapshot_at = {raw!r} is not a number list") from None
    return raw  # scenario, output_dir


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` text; unset keys take the default values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_scalar(key, raw)
    config = ExperimentConfig(**values)
    validate_config(config)
    return config


def _check_range(name: str, value, lo, hi, lo_closed=True, hi_closed=True):
    lo_ok = value >= lo if lo_closed else value > lo
    hi_ok = True if hi is None else (value <= hi if hi_closed else value < hi)
    if not (lo_ok and hi_ok):
        lo_b = "[" if lo_closed else "("
        hi_b = ("]" if hi_closed else ")") if hi is not None else ")"
        hi_s = "inf" if hi is None else hi
        raise ConfigError(f"{name} = {value} out of range {lo_b}{lo}, {hi_s}{hi_b}")


def validate_config(config: ExperimentConfig):
    _check_range("k_s", config.k_s, 0.0, None)
    _check_range("k_d", config.k_d, 0.0, 1.0)
    _check_range("mu", config.mu, 0.0, 1.0)
    _check_range("h", config.h, 0.0, None, lo_closed=False)
    _check_range("cell_size_m", config.cell_size_m, 0.0, None, lo_closed=False)
    _check_range("repetitions", config.repetitions, 1, None)
    _check_range("warmup_egress", config.warmup_egress, 0, None)
    _check_range("egress_target", config.egress_target, 1, None)
    _check_range("ttr_bin_width", config.ttr_bin_width, 1, None)
    _check_range("breakpoint", config.breakpoint, 0, None)
    _check_range("seed_base", config.seed_base, 0, None)
    if config.warmup_egress >= config.egress_target:
        raise ConfigError(
            f"warmup_egress = {config.warmup_egress} must be below "
            f"egress_target = {config.egress_target}")
    config.build_room()  # validates the geometry keys
    if config.scenario != "all":
        try:
            normalize_tag(config.scenario)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if not config.occupancy:
        raise ConfigError("occupancy list must not be empty")
    cap = config.room_capacity
    for n in config.occupancy:
        _check_range("occupancy", n, 1, cap)
    for t in config.snapshot_at:
        _check_range("snapshot_at", t, 0.0, None)


def render_config(config: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config`` round-trips it exactly."""
    lines = []
    for key in _CONFIG_KEYS:
        value = getattr(config, key)
        if key in ("occupancy", "snapshot_at"):
            value = ", ".join(repr(v) if isinstance(v, float) else str(v)
                              for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# running


@dataclass
class RunResult:
    scenario: str
    n: int
    rep: int
    seed: int
    records: list[PassageRecord] = field(default_factory=list)
    j_out: float = 0.0
    t_warmup_end: float = 0.0
    t_final: float = 0.0
    conflict_summary: dict[str, int] = field(default_factory=dict)
    snapshots: list[tuple[float, str]] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_single(config: ExperimentConfig, scenario_tag: str, n: int, rep: int,
               seed: int, room: Room | None = None) -> RunResult:
    """One seeded run: populate, simulate to the egress target, measure."""
    scenario = scenario_groups(scenario_tag)
    if room is None:
        room = config.build_room()
    rng = random.Random(seed)
    agents = sample_population(scenario, n, rng)
    place_agents(room, agents, rng)
    sim = Simulation(room, agents, k_s=config.field_sensitivity_per_cell,
                     k_d=config.k_d, mu=config.mu, h=config.h, rng=rng,
                     snapshot_times=config.snapshot_at)
    sim.run_until_egress(config.egress_target)

    trace = OccupancyTrace(sim.trace_events)
    records = []
    for agent_id, t_in, t_out in sim.passages[config.warmup_egress:]:
        params = sim.agent_params[agent_id]
        records.append(PassageRecord(
            agent_id=agent_id, params=params, t_in=t_in, t_out=t_out,
            tt=t_out - t_in, n_mean=compute_nmean(trace, t_in, t_out)))

    times = sorted(sim.egress_log)
    t_warmup_end = times[config.warmup_egress - 1] if config.warmup_egress else 0.0
    t_final = times[-1]
    j_out = (config.egress_target - config.warmup_egress) / (t_final - t_warmup_end)
    summary = {
        "moves": sim.n_moves, "stays": sim.n_stays,
        "bonds_created": sim.n_bonds_created, "bond_moves": sim.n_bond_moves,
        "conflicts": sim.n_conflicts, "conflicts_blocked": sim.n_conflicts_blocked,
        "bond_contentions": sim.n_bond_contentions,
        "bond_blocked": sim.n_bond_blocked,
    }
    return RunResult(scenario=scenario_tag, n=n, rep=rep, seed=seed,
                     records=records, j_out=j_out, t_warmup_end=t_warmup_end,
                     t_final=t_final, conflict_summary=summary,
                     snapshots=list(sim.snapshots))


def _run_task(args) -> RunResult:
    config, tag, n, rep, seed = args
    try:
        return run_single(config, tag, n, rep, seed)
    except Exception as e:  # a failed run must not sink the grid
        return RunResult(scenario=tag, n=n, rep=rep, seed=seed, error=str(e))


def _worker_count(n_tasks: int) -> int:
    raw = os.environ.get("FFSIM_THREADS", "0")
    try:
        workers = int(raw)
    except ValueError:
        workers = 0
    if workers <= 0:
        workers = os.cpu_count() or 1
    return max(1, min(workers, n_tasks))


def run_experiment(config: ExperimentConfig) -> list[RunResult]:
    """Run the whole grid; results ordered by (scenario, N, repetition).

    Run-level parallelism is capped by the FFSIM_THREADS environment
    variable (0 or unset picks the CPU count); the ordering and content
    of the results do not depend on it.
    """
    tasks = []
    for tag in config.scenario_tags():
        grid_index = 0
        for n in config.occupancy:
            for rep in range(config.repetitions):
                tasks.append((config, tag, n, rep, config.seed_base + grid_index))
                grid_index += 1
    workers = _worker_count(len(tasks))
    if workers == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_task, tasks, chunksize=1))


# ---------------------------------------------------------------------------
# output files


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return "%.9g" % x
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]):
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def emit_outputs(results: list[RunResult], config: ExperimentConfig,
                 out_dir: str | Path | None = None) -> Path:
    """Write the raw tables, snapshots and manifest, then derive statistics."""
    good = [r for r in results if r.ok]
    if not good:
        raise EmptyResultsError("all runs failed; no output written")
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for r in good:
        for rec in r.records:
            rows.append([r.scenario, r.n, r.rep, rec.agent_id, rec.params.tau,
                         rec.params.gamma, rec.params.k_o, rec.t_in, rec.t_out,
                         rec.tt, rec.n_mean])
    _write_csv(out / "passages.csv",
               ["scenario", "n", "rep", "agent_id", "tau", "gamma", "k_o",
                "t_in", "t_out", "tt", "n_mean"], rows)

    _write_csv(out / "runs.csv",
               ["scenario", "n", "rep", "seed", "records", "t_warmup_end",
                "t_final", "j_out"],
               [[r.scenario, r.n, r.rep, r.seed, len(r.records), r.t_warmup_end,
                 r.t_final, r.j_out] for r in good])

    if any(r.snapshots for r in good):
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for r in good:
            for t, grid in r.snapshots:
                name = f"{r.scenario}_n{r.n:03d}_rep{r.rep:02d}_t{_fmt(t)}.txt"
                (snap_dir / name).write_text(grid + "\n")

    manifest = {
        "ffsim_version": __version__,
        "config": render_config(config),
        "runs": [{"scenario": r.scenario, "n": r.n, "rep": r.rep, "seed": r.seed,
                  "status": "ok" if r.ok else f"error: {r.error}"}
                 for r in results],
        "notes": {
            "quantiles": "nearest-rank q10/q50/q90 over records pooled across "
                         "repetitions; group rows carry means only",
            "boxplot": "linear-interpolation quartiles, 1.5*IQR outlier rule, "
                       "whiskers at the most extreme non-outliers",
            "j_out": "per run (egress_target - warmup_egress) / (t_final - "
                     "t_warmup_end); summary reports the median across runs at N=50",
            "ttr_histogram_edges": list(TTR_HIST_EDGES),
            "regimes": {"free": list(FREE_REGIME), "congested": list(CONGESTED_REGIME)},
            "scenario_labels": {"agr_obs_indep": "agr,obs", "agr_obs_dep": "agr+obs"},
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    derive_outputs(out, config)
    return out


def _read_csv(path: Path) -> list[dict[str, str]]:
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def _scenario_sort_key(tag: str) -> int:
    return SCENARIO_TAGS.index(tag) if tag in SCENARIO_TAGS else len(SCENARIO_TAGS)


def derive_outputs(out_dir: str | Path, config: ExperimentConfig):
    """Compute summary/quantile/histogram/fit/boxplot tables from the CSVs.

    Reads back ``passages.csv`` and ``runs.csv`` so that re-analysis of
    an output directory reproduces every derived file byte for byte.
    """
    out = Path(out_dir)
    passages = _read_csv(out / "passages.csv")
    runs = _read_csv(out / "runs.csv")

    by_scenario: dict[str, list[dict]] = {}
    for row in passages:
        by_scenario.setdefault(row["scenario"], []).append(row)
    run_by_scenario: dict[str, list[dict]] = {}
    for row in runs:
        run_by_scenario.setdefault(row["scenario"], []).append(row)
    tags = sorted(set(by_scenario) | set(run_by_scenario), key=_scenario_sort_key)

    length_m = config.path_length_m
    summary_rows = []
    quantile_rows = []
    hist_rows = []
    fit_rows = []
    box_rows = []
    for tag in tags:
        rows = by_scenario.get(tag, [])
        rrows = run_by_scenario.get(tag, [])
        tts = [float(r["tt"]) for r in rows]
        n_means = [float(r["n_mean"]) for r in rows]
        run_ns = [int(r["n"]) for r in rows]

        # summary: free-flow velocity, exit capacity, congested travel times
        speeds = [length_m / tt for tt, nm in zip(tts, n_means) if nm <= 4.0]
        v0 = sum(speeds) / len(speeds) if speeds else None
        j50 = [float(r["j_out"]) for r in rrows if int(r["n"]) == 50]
        j_out_50 = statistics.median(j50) if j50 else None
        tt45 = [tt for tt, n in zip(tts, run_ns) if n == 45]
        tt100 = [tt for tt, n in zip(tts, run_ns) if n == 100]
        summary_rows.append([
            tag, v0, j_out_50,
            sum(tt45) / len(tt45) if tt45 else None,
            sum(tt100) / len(tt100) if tt100 else None,
        ])

        # quantile curves, pooled and per property group
        group_of = {}
        entries = []
        for r, tt, n in zip(rows, tts, run_ns):
            key = (r["tau"], r["gamma"], r["k_o"])
            group_of[key] = f"tau={r['tau']}|gamma={r['gamma']}|k_o={r['k_o']}"
            entries.append((n, tt, key))
        if entries:
            series = quantile_curves(entries)
            for qr in series.rows:
                quantile_rows.append([tag, qr.occupancy, "all", qr.n_records,
                                      qr.q10, qr.q50, qr.q90, qr.mean,
                                      qr.undersized])
            for (key, occ) in sorted(series.group_means,
                                     key=lambda ko: (ko[1], group_of[ko[0]])):
                quantile_rows.append([tag, occ, group_of[key],
                                      series.group_counts[(key, occ)],
                                      None, None, None,
                                      series.group_means[(key, occ)], None])

        # relative travel time histograms per regime
        records = [PassageRecord(
            agent_id=int(r["agent_id"]),
            params=AgentParams(float(r["tau"]), float(r["gamma"]), float(r["k_o"])),
            t_in=float(r["t_in"]), t_out=float(r["t_out"]), tt=tt, n_mean=nm)
            for r, tt, nm in zip(rows, tts, n_means)]
        if records:
            ttr = relative_travel_time(records, bin_width=config.ttr_bin_width)
            for regime, (lo, hi) in (("free", FREE_REGIME),
                                     ("congested", CONGESTED_REGIME)):
                values = [v for rec, v in ttr
                          if v is not None and lo <= rec.n_mean <= hi]
                if not values:
                    continue
                masses = histogram(values, TTR_HIST_EDGES)
                edges = (float("-inf"),) + TTR_HIST_EDGES + (float("inf"),)
                for i, mass in enumerate(masses):
                    hist_rows.append([tag, regime, len(values),
                                      edges[i], edges[i + 1], mass])

        # hinge fits per property group and pooled
        fit_groups: dict[str, tuple[list[float], list[float]]] = {"all": ([], [])}
        for r, tt, nm in zip(rows, tts, n_means):
            label = f"tau={r['tau']}|gamma={r['gamma']}|k_o={r['k_o']}"
            fit_groups.setdefault(label, ([], []))
            fit_groups[label][0].append(nm)
            fit_groups[label][1].append(tt)
            fit_groups["all"][0].append(nm)
            fit_groups["all"][1].append(tt)
        for label in sorted(fit_groups, key=lambda s: (s != "all", s)):
            xs, ys = fit_groups[label]
            if len(xs) < 3:
                continue
            f = fit_piecewise(xs, ys, breakpoint=float(config.breakpoint))
            fit_rows.append([tag, label, f.n_records, f.breakpoint, f.intercept,
                             f.slope, f.r2, f.intercept_only])

        # outflow box summaries per occupancy
        j_by_n: dict[int, list[float]] = {}
        for r in rrows:
            j_by_n.setdefault(int(r["n"]), []).append(float(r["j_out"]))
        for n in sorted(j_by_n):
            values = j_by_n[n]
            if len(values) < 5:
                continue
            box = boxplot_summary(values)
            box_rows.append([tag, n, box.n, box.whisker_lo, box.q25, box.median,
                             box.q75, box.whisker_hi,
                             "|".join(_fmt(v) for v in box.outliers)])

    _write_csv(out / "summary.csv",
               ["scenario", "v0_mps", "j_out_n50", "mean_tt_n45", "mean_tt_n100"],
               summary_rows)
    _write_csv(out / "quantiles.csv",
               ["scenario", "n", "group", "n_records", "q10", "q50", "q90",
                "mean_tt", "undersized"], quantile_rows)
    _write_csv(out / "histograms.csv",
               ["scenario", "regime", "n_values", "bin_lo", "bin_hi", "mass"],
               hist_rows)
    _write_csv(out / "fits.csv",
               ["scenario", "group", "n_records", "breakpoint", "intercept",
                "slope", "r2", "intercept_only"], fit_rows)
    _write_csv(out / "outflow_box.csv",
               ["scenario", "n", "n_runs", "whisker_lo", "q25", "median", "q75",
                "whisker_hi", "outliers"], box_rows)


def load_config_from_manifest(out_dir: str | Path) -> ExperimentConfig:
    manifest = json.loads((Path(out_dir) / "manifest.json").read_text())
    return parse_config(manifest["config"])


def analyze_directory(out_dir: str | Path):
    """Recompute every derived table of an existing output directory."""
    out = Path(out_dir)
    if not (out / "passages.csv").exists():
        raise ConfigError(f"{out} does not contain passages.csv")
    config = load_config_from_manifest(out)
    derive_outputs(out, config)


def apply_overrides(config: ExperimentConfig, *, scenario: str | None = None,
                    occupancy: tuple[int, ...] | None = None,
                    repetitions: int | None = None, seed: int | None = None,
                    output_dir: str | None = None) -> ExperimentConfig:
    updates = {}
    if scenario is not None:
        updates["scenario"] = scenario
    if occupancy is not None:
        updates["occupancy"] = tuple(occupancy)
    if repetitions is not None:
        updates["repetitions"] = repetitions
    if seed is not None:
        updates["seed_base"] = seed
    if output_dir is not None:
        updates["output_dir"] = output_dir
    config = replace(config, **updates)
    validate_config(config)
    return config
