"""
Experiment driver: run configs, policy comparisons, and result files.

A run config is a TOML file with the sections ``[workload]``, ``[policy]``,
``[budget]``, ``[output]``, and ``[run]``. Every value is a plain
``key = value`` pair. Policy parameters are written as
``<policy>_<parameter>`` in the ``[policy]`` section, for example
``h2o_recent_ratio = 0.5``.
"""

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .attention import compute_scores, logsumexp_rows
from .budget import BudgetConfig, budget_preset
from .cache_manager import count_evictions, encode, generate
from .errors import ConfigError, KvevictError
from .policies import POLICIES, make_policy
from .rng import MONTE_CARLO_STREAM, keyed_generator
from .sparsity import sparsity_sweep
from .tiled_reduce import TileSpec, reduce_naive, reduce_tiled
from .workload import Workload, generate_workload

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["policy", "budget_frac", "seed", "metric", "value"]
SECTIONS = ("workload", "policy", "budget", "output", "run")


@dataclass(frozen=True)
class RunConfig:
    """
    Validated run configuration.

    Attributes
    ----------
    workload : Workload
        Workload template; each run replaces its seed.
    policies : tuple
        ``(name, params)`` pairs, one per policy to run.
    budget : BudgetConfig
        Cache budget shared by all policies.
    output_dir : pathlib.Path
        Directory for the result files.
    traces : bool
        Write one eviction-trace CSV per run.
    seeds : tuple of int
        Seeds to run, at least one.
    workers : int
        Number of runs executed at the same time.
    """

    workload: Workload
    policies: tuple
    budget: BudgetConfig
    output_dir: Path = Path("results")
    traces: bool = True
    seeds: tuple = (0,)
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("At least one seed is required", key="run.seeds")
        if not self.policies:
            raise ConfigError("At least one policy is required", key="policy.name")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1", key="run.workers")


def _line_of(text, section, key=None):
    """
    Line number of a key, or of a section header, in TOML source.
    """
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[([^\]]+)\]", stripped)
        if header:
            current = header.group(1).strip()
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return n
    return None


class _Section:
    """
    One config section with key and line bookkeeping for error messages.
    """

    def __init__(self, raw, name, text):
        self.name = name
        self.text = text
        self.values = raw.get(name, {})
        if not isinstance(self.values, dict):
            raise self.error(f"[{name}] must be a section", key=None)

    def error(self, message, key=None):
        dotted = self.name if key is None else f"{self.name}.{key}"
        return ConfigError(message, key=dotted, line=_line_of(self.text, self.name, key))

    def get(self, key, types, default=None, required=False):
        if key not in self.values:
            if required:
                raise self.error(f"Missing required key '{key}'", key)
            return default
        value = self.values[key]
        if not isinstance(value, types) or (isinstance(value, bool) and bool not in types):
            raise self.error(f"Expected {types[0].__name__}, got {value!r}", key)
        return value

    def check_keys(self, allowed):
        for key in self.values:
            if key not in allowed:
                raise self.error(f"Unknown key '{key}'", key)


def _workload(sec):
    names = [f.name for f in fields(Workload)]
    sec.check_keys(names)
    d = {}
    for name in ("layers", "heads", "head_dim", "prompt_len"):
        d[name] = sec.get(name, (int,), required=True)
    for name in ("gen_len", "seed", "question_len"):
        if name in sec.values:
            d[name] = sec.get(name, (int,))
    pivotal = sec.get("pivotal", (list,), default=[])
    d["pivotal"] = pivotal
    try:
        return Workload.from_dict(d)
    except (ValueError, TypeError) as e:
        key = "pivotal" if "ivot" in str(e) else None
        raise sec.error(str(e), key) from None


def _policies(sec):
    names = sec.get("name", (str, list), required=True)
    names = [names] if isinstance(names, str) else names
    if not names:
        raise sec.error("At least one policy name is required", "name")
    for n in names:
        if not isinstance(n, str) or n.lower() not in POLICIES:
            raise sec.error(f"Unknown policy '{n}', choose one of {', '.join(POLICIES)}", "name")
    names = [n.lower() for n in names]

    params = {n: {} for n in names}
    for key, value in sec.values.items():
        if key == "name":
            continue
        prefix = next((p for p in POLICIES if key.startswith(p + "_")), None)
        if prefix is None:
            raise sec.error(f"Unknown key '{key}', expected <policy>_<parameter>", key)
        if prefix in params:
            params[prefix][key[len(prefix) + 1:]] = value

    policies = []
    for n in names:
        try:
            make_policy(n, **params[n])
        except KvevictError as e:
            raise sec.error(str(e), "name") from None
        policies.append((n, params[n]))
    return tuple(policies)


def _budget(sec):
    keys = [f.name for f in fields(BudgetConfig)]
    sec.check_keys(keys + ["preset"])
    d = {}
    preset = sec.get("preset", (str, int, float))
    if preset is not None:
        try:
            d = budget_preset(preset).to_dict()
        except KvevictError as e:
            raise sec.error(str(e), "preset") from None
        if any(k in sec.values for k in ("total_frac", "protect_proxy_frac", "random_frac")) \
                and "proxy_evict_frac" not in sec.values:
            d["proxy_evict_frac"] = None
    elif "total_frac" not in sec.values:
        raise sec.error("Either 'preset' or 'total_frac' is required", "total_frac")

    for key in keys:
        if key in sec.values:
            d[key] = sec.get(key, (int,) if key == "interval_m" else (float, int))
    try:
        return BudgetConfig(**d)
    except KvevictError as e:
        raise sec.error(str(e)) from None


def parse_config(raw, text=""):
    """
    Validate a parsed TOML document and build a run configuration.

    Parameters
    ----------
    raw : dict
        Parsed TOML document.
    text : str, optional
        TOML source, used for line numbers in error messages.

    Returns
    -------
    cfg : RunConfig
        Validated configuration.

    Raises
    ------
    ConfigError
        If a section, key, or value is invalid.
    """
    for name in raw:
        if name not in SECTIONS:
            raise ConfigError(f"Unknown section [{name}]", key=name, line=_line_of(text, name))

    workload = _workload(_Section(raw, "workload", text))
    policies = _policies(_Section(raw, "policy", text))
    budget = _budget(_Section(raw, "budget", text))

    out = _Section(raw, "output", text)
    out.check_keys(["dir", "traces"])
    output_dir = Path(out.get("dir", (str,), default="results"))
    traces = out.get("traces", (bool,), default=True)

    run = _Section(raw, "run", text)
    run.check_keys(["seeds", "workers"])
    seeds = run.get("seeds", (list, int), default=[workload.seed])
    seeds = [seeds] if isinstance(seeds, int) else seeds
    if not seeds:
        raise run.error("At least one seed is required", "seeds")
    if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise run.error("Seeds must be non-negative integers", "seeds")
    workers = run.get("workers", (int,), default=1)
    if workers < 1:
        raise run.error("workers must be at least 1", "workers")

    return RunConfig(workload, policies, budget, output_dir, traces, tuple(seeds), workers)


def load_config(path):
    """
    Read and validate a TOML run config.

    Parameters
    ----------
    path : str or pathlib.Path
        Config file. A relative ``[output] dir`` is taken relative to the
        current working directory.

    Returns
    -------
    cfg : RunConfig
        Validated configuration.

    Raises
    ------
    ConfigError
        If the file is missing, is not valid TOML, or fails validation. The
        error carries the offending key and line when known.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e.strerror}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError(f"Invalid TOML: {e}", line=int(m.group(1)) if m else None) from None
    return parse_config(raw, text)


def pivotal_recall(workload, cache):
    """
    Share of (pivotal token, layer) pairs where some head still holds the token.

    Returns
    -------
    recall : float
        Value in [0, 1], or NaN when the workload has no pivotal tokens.
    """
    if not workload.pivotal:
        return float("nan")
    hits = []
    for pivot in workload.pivotal:
        for layer in range(workload.layers):
            hits.append(any(
                pivot.index in cache[layer, head].indices for head in range(workload.heads)
            ))
    return float(np.mean(hits))


def run_policy(cfg, name, params, seed):
    """
    Encode and generate one workload with one policy.

    Returns
    -------
    rows : list of tuple
        Deterministic result rows.
    timing : list of tuple
        ``wall_micros`` rows.
    trace : EvictionTrace
        Eviction trace of the run.
    """
    w = cfg.workload.with_seed(seed)
    acts = generate_workload(w)
    policy = make_policy(name, **params)

    cache, trace = encode(acts, policy, cfg.budget)
    retained = min(len(c) for c in cache.heads.values())
    generate(cache, policy, acts)

    counts = count_evictions(trace)
    n_heads = w.layers * w.heads
    per_head = {
        phase: sum(v for (_, _, p), v in counts.items() if p == phase) / n_heads
        for phase in ("encode", "generate")
    }
    frac = cfg.budget.total_frac
    rows = [
        (name, frac, seed, "retained_count", retained),
        (name, frac, seed, "evictions_encoding", per_head["encode"]),
        (name, frac, seed, "evictions_generation", per_head["generate"]),
    ]
    if w.pivotal:
        rows.insert(0, (name, frac, seed, "pivotal_recall", pivotal_recall(w, cache)))
    timing = [(name, frac, seed, "wall_micros", sum(r.evict_micros for r in trace))]
    logger.info("Ran %s with seed %d", name, seed)
    return rows, timing, trace


def _frame(rows):
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def run_compare(cfg):
    """
    Run every policy of a config on every seed and write the result files.

    The output directory receives ``results.csv`` (deterministic metrics),
    ``timing.csv`` (``wall_micros`` per run), and, when traces are enabled,
    ``trace-<policy>-seed<seed>.csv`` per run. Rows are ordered by policy as
    listed in the config and then by seed, whatever the number of workers.

    Parameters
    ----------
    cfg : RunConfig
        Run configuration.

    Returns
    -------
    results : pandas.DataFrame
        The rows written to ``results.csv``.

    Raises
    ------
    KvevictError
        If a run fails. Rows of the runs that finished before the failure
        are written to ``results.partial.csv``.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(name, params, seed) for name, params in cfg.policies for seed in cfg.seeds]
    logger.info("Running %d jobs on %d workers", len(jobs), cfg.workers)

    rows, timing = [], []
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(run_policy, cfg, *job) for job in jobs]
        for (name, _, seed), fut in zip(jobs, futures):
            try:
                r, t, trace = fut.result()
            except KvevictError:
                for f in futures:
                    f.cancel()
                _frame(rows).to_csv(out / "results.partial.csv", index=False)
                logger.error("Run %s with seed %d failed, wrote partial results", name, seed)
                raise
            rows.extend(r)
            timing.extend(t)
            if cfg.traces:
                trace.to_csv(out / f"trace-{name}-seed{seed}.csv")

    results = _frame(rows)
    results.to_csv(out / "results.csv", index=False)
    _frame(timing).to_csv(out / "timing.csv", index=False)
    return results


def run_simulate(cfg):
    """
    Run the first policy of a config on every seed.

    See :func:`run_compare` for the files written.
    """
    return run_compare(replace(cfg, policies=cfg.policies[:1]))


def run_kernel_check(sizes, tiles, precisions=("float64",), causal=True, head_dim=16, seed=0):
    """
    Compare the tiled kernel with the naive reduction over a grid of cases.

    Parameters
    ----------
    sizes : list
        Matrix sizes, either ``n`` for ``n x n`` or ``(n_q, n_k)`` pairs.
    tiles : list
        Square tile sizes; 0 means one tile covering the whole matrix.
    precisions : list of str, optional
        Working precisions of the tiled kernel. Default is float64 only.
    causal : bool, optional
        Apply the causal mask. Default is True.
    head_dim : int, optional
        Query and key dimension. Default is 16.
    seed : int, optional
        Seed of the random queries and keys. Default is 0.

    Returns
    -------
    df : pandas.DataFrame
        Columns ``n_q``, ``n_k``, ``br``, ``bc``, ``precision``,
        ``kernel_max_err`` (absolute), ``kernel_rel_err`` (relative to the
        largest column sum), and ``mass_err``.
    """
    rows = []
    for size in sizes:
        nq, nk = (size, size) if np.isscalar(size) else size
        rng = keyed_generator(seed, MONTE_CARLO_STREAM, nq, nk)
        q = rng.standard_normal((nq, head_dim))
        k = rng.standard_normal((nk, head_dim))
        naive = reduce_naive(q, k, causal).values
        lse = logsumexp_rows(compute_scores(q, k, causal=causal))
        for t in tiles:
            spec = TileSpec(nq, nk) if t == 0 else TileSpec(t, t)
            for precision in precisions:
                tiled = reduce_tiled(q, k, lse, causal, spec, dtype=precision).values
                err = float(np.max(np.abs(tiled - naive)))
                rows.append((nq, nk, spec.br, spec.bc, precision, err,
                             err / float(np.max(np.abs(naive))), abs(float(tiled.sum()) - nq)))
    columns = ["n_q", "n_k", "br", "bc", "precision", "kernel_max_err", "kernel_rel_err",
               "mass_err"]
    return pd.DataFrame(rows, columns=columns)


def emit_heatmap(trace, layer, head, width=None):
    """
    Retained-token grid of one head, one row per eviction call.

    Parameters
    ----------
    trace : EvictionTrace
        Eviction trace.
    layer, head : int
        Head coordinates.
    width : int, optional
        Number of token columns. Default is the trace's prompt length, or
        one past the largest retained position when that is larger.

    Returns
    -------
    grid : pandas.DataFrame
        Columns ``phase`` and ``step`` followed by one 0/1 column per token
        position.

    Raises
    ------
    TraceLookupError
        If the trace has no record for the head.
    """
    records = trace.find(layer, head)
    if width is None:
        last = max(max(r.retained.indices, default=-1) for r in records)
        width = max(trace.prompt_len or 0, last + 1)
    grid = np.zeros((len(records), width), dtype=np.int64)
    for i, r in enumerate(records):
        idx = r.retained.as_array()
        grid[i, idx[idx < width]] = 1
    df = pd.DataFrame(grid, columns=[str(j) for j in range(width)])
    df.insert(0, "step", [r.step for r in records])
    df.insert(0, "phase", [r.phase for r in records])
    return df


def run_sparsity(cfg, threshold=1e-3, lengths=None):
    """
    Sparsity of the config's workload for growing prompt lengths.

    Parameters
    ----------
    cfg : RunConfig
        Run configuration; only the workload dimensions and seed are used.
    threshold : float, optional
        Sparsity threshold. Default is 1e-3.
    lengths : list of int, optional
        Prompt lengths. Default doubles from 16 up to the workload's prompt
        length.
    """
    if lengths is None:
        p = cfg.workload.prompt_len
        lengths = [n for n in (16 * 2**i for i in range(20)) if n < p] + [p]
    return sparsity_sweep(cfg.workload, lengths, threshold)
