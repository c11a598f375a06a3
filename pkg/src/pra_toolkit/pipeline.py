"""End-to-end pipeline: ingest -> leverage -> PRA -> null -> fit.

Every run writes plot-ready tables plus a manifest with content hashes.
Output bytes depend only on the configuration: JSON keys are sorted, floats
are written with ``repr`` and nothing time-dependent is recorded.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import platform
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_lag_grid
from .exceptions import AlignmentError, ConfigError, PRAError
from .fitting import decay_horizon, fit_two_scale
from .leverage import LagCurve, additivity_residual, binned_conditional, leverage_full, leverage_partials
from .nulls import XI_LAWS, null_ensemble, significance_bands
from .panel import MissingPolicy, index_series, instantaneous_stats, load_panel, normalize
from .pra import PrincipalRegressionAnalysis
from .sidecar import write_sidecar
from .synth import SynthSpec, generate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

EXECUTION_KEYS = ("out_dir", "n_jobs")
STAGES = ("ingest", "leverage", "pra", "null", "fit")
ARTIFACTS = ("leverage.csv", "binned.csv", "pra.json", "signsplit.json", "rotation.csv",
             "null.json", "fits.json")


class StageError(PRAError, RuntimeError):
    """A pipeline stage failed; partial outputs and the manifest are on disk."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


def parse_range(text):
    """``"a:b"`` -> ``np.arange(a, b + 1)``; a bare integer ``m`` -> ``1..m``."""
    if isinstance(text, (int, np.integer)):
        return np.arange(1, int(text) + 1)
    parts = str(text).split(":")
    try:
        if len(parts) == 1:
            return np.arange(1, int(parts[0]) + 1)
        if len(parts) == 2:
            return np.arange(int(parts[0]), int(parts[1]) + 1)
    except ValueError:
        pass
    raise ConfigError(f"cannot parse lag range {text!r}; expected 'lo:hi'")


def substream_seed(seed, name):
    """Seed of the named substream (``"synth"``, ``"null"``, ...) of a global seed."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class PipelineConfig:
    """Flat pipeline configuration; mirrors the TOML keys one to one.

    ``input`` selects a CSV panel; without it the ``synth_*`` keys define a
    synthetic panel whose seed is the ``"synth"`` substream of ``seed``.
    ``fit_pin`` is ``"null"`` (pin each asymptote to its null mean),
    ``"free"`` or a number.
    """

    out_dir: str = "pra_out"
    seed: int = 0
    input: str | None = None
    missing_drop_frac: float = 0.5
    missing_fill: str = "zero"
    synth_n_stocks: int = 100
    synth_n_days: int = 4000
    synth_rho0: float = 0.3
    synth_g_minus: float = 0.0
    synth_g_plus: float = 0.0
    synth_memory_short: float = 20.0
    synth_memory_long: float = 250.0
    synth_weight_long: float = 0.5
    synth_vol_leverage: float = 0.0
    synth_n_sectors: int = 0
    synth_sector_rho0: float = 0.0
    synth_sector_g_minus: float = 0.0
    synth_sector_g_plus: float = 0.0
    lags: str = "1:250"
    conditioning: str = "gaussianized"
    split_sign: bool = True
    quadratic: bool = False
    exact_ols: bool = False
    n_modes: int = 3
    keep_matrices: bool = False
    leverage_bins: int = 12
    binned_lag: int = 1
    null_samples: int = 1000
    null_xi: str = "gauss"
    null_level: float = 0.01
    null_seed: int | None = None
    fit_pin: object = "null"
    fit_range: str | None = "1:250"
    n_jobs: int | None = None

    @classmethod
    def from_mapping(cls, mapping, base_dir=None):
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = dict(mapping)
        if base_dir is not None:
            for key in ("input", "out_dir"):
                if key in values and values[key] is not None and not Path(values[key]).is_absolute():
                    values[key] = str(Path(base_dir) / values[key])
        return cls(**values)

    @classmethod
    def from_toml(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        nested = [k for k, v in data.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"config must be flat; found tables {nested}")
        return cls.from_mapping(data, base_dir=path.parent)

    def to_dict(self):
        return dataclasses.asdict(self)

    def result_dict(self):
        """Settings that can change outputs (output location and thread count cannot)."""
        return {k: v for k, v in self.to_dict().items() if k not in EXECUTION_KEYS}

    def config_hash(self):
        return hashlib.sha256(_dumps(self.result_dict()).encode()).hexdigest()

    def synth_spec(self):
        return SynthSpec(
            n_stocks=self.synth_n_stocks, n_days=self.synth_n_days, rho0=self.synth_rho0,
            g_minus=self.synth_g_minus, g_plus=self.synth_g_plus,
            memory_short=self.synth_memory_short, memory_long=self.synth_memory_long,
            weight_long=self.synth_weight_long, vol_leverage=self.synth_vol_leverage,
            seed=substream_seed(self.seed, "synth"), n_sectors=self.synth_n_sectors,
            sector_rho0=self.synth_sector_rho0, sector_g_minus=self.synth_sector_g_minus,
            sector_g_plus=self.synth_sector_g_plus,
        )

    def null_stream(self):
        return self.null_seed if self.null_seed is not None else substream_seed(self.seed, "null")

    def pin_value(self):
        if isinstance(self.fit_pin, str):
            if self.fit_pin in ("null", "free"):
                return self.fit_pin
            try:
                return float(self.fit_pin)
            except ValueError:
                raise ConfigError(f"fit_pin must be 'null', 'free' or a number, got {self.fit_pin!r}")
        if isinstance(self.fit_pin, (int, float)) and not isinstance(self.fit_pin, bool):
            return float(self.fit_pin)
        raise ConfigError(f"fit_pin must be 'null', 'free' or a number, got {self.fit_pin!r}")


def _panel_days(cfg):
    if cfg.input is None:
        return cfg.synth_n_days
    with Path(cfg.input).open(newline="") as fh:
        return max(sum(1 for _ in csv.reader(fh)) - 1, 0)


def validate_config(cfg):
    """Check every config invariant without running any analysis.

    Returns the resolved lag grid.  The input panel is only line-counted.
    """
    if cfg.input is not None and not Path(cfg.input).is_file():
        raise ConfigError(f"input {cfg.input} does not exist")
    if cfg.conditioning not in ("raw", "gaussianized"):
        raise ConfigError(f"conditioning must be 'raw' or 'gaussianized', got {cfg.conditioning!r}")
    if cfg.null_xi not in XI_LAWS:
        raise ConfigError(f"null_xi must be one of {XI_LAWS}")
    if cfg.null_samples * cfg.null_level < 5 or not 0 < cfg.null_level <= 0.5:
        raise ConfigError("null_samples * null_level must be >= 5 with null_level in (0, 0.5]")
    if cfg.leverage_bins < 2 or cfg.n_modes < 1:
        raise ConfigError("leverage_bins must be >= 2 and n_modes >= 1")
    cfg.pin_value()
    try:
        MissingPolicy(cfg.missing_drop_frac, cfg.missing_fill)
        if cfg.input is None:
            cfg.synth_spec()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    T = _panel_days(cfg)
    lags = parse_range(cfg.lags)
    try:
        lags = check_lag_grid(lags, T)
        if not 1 <= cfg.binned_lag < T:
            raise ConfigError(f"binned_lag {cfg.binned_lag} outside [1, {T - 1}]")
    except PRAError as exc:
        raise ConfigError(f"lag grid invalid for T={T}: {exc}") from exc
    if cfg.fit_range is not None:
        lo, hi = parse_range(cfg.fit_range)[[0, -1]]
        if np.count_nonzero((lags >= lo) & (lags <= hi)) < 6:
            raise ConfigError(f"fit_range {cfg.fit_range} keeps fewer than 6 lags")
    return lags


def _finite(obj):
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dumps(obj):
    return json.dumps(_finite(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_json(path, obj):
    Path(path).write_text(_dumps(obj))


def write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv_columns(path):
    """Read a curve CSV into ``{column: list}``; numeric cells become floats."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise AlignmentError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    out = {h: [] for h in header}
    for row in body:
        for h, cell in zip(header, row):
            try:
                out[h].append(float(cell))
            except ValueError:
                out[h].append(cell)
    return out


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions():
    import scipy
    import sklearn

    from . import __version__

    return {"pra_toolkit": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


@dataclass
class ReportBundle:
    out_dir: Path
    manifest: dict
    results: dict = field(default_factory=dict, repr=False)

    def path(self, name):
        return self.out_dir / name


def _stage_ingest(cfg, ctx):
    if cfg.input is None:
        panel = generate(cfg.synth_spec())
    else:
        panel = load_panel(cfg.input, MissingPolicy(cfg.missing_drop_frac, cfg.missing_fill))
    ctx["panel"] = panel
    ctx["npanel"] = normalize(panel)
    check_lag_grid(ctx["lags"], panel.n_days)
    return []


def _stage_leverage(cfg, ctx, out):
    npanel, lags = ctx["npanel"], ctx["lags"]
    idx = index_series(npanel)
    inst = instantaneous_stats(npanel)
    hi = int(lags[-1])
    l_I = leverage_full(idx, hi)
    l_s, l_r = leverage_partials(idx, inst, hi)
    res = additivity_residual(l_I, l_s, l_r, inst.rho0, inst.sigma0_sq)
    pos = lags - 1
    write_csv(out / "leverage.csv", ["tau", "L_I", "L_sigma", "L_rho", "residual"],
              zip(lags, l_I.values[pos], l_s.values[pos], l_r.values[pos], res.values[pos]))
    rows = []
    for name, y in (("sigma2", inst.sigma2), ("rho", inst.rho), ("I2", idx.values**2)):
        b = binned_conditional(y, idx, cfg.binned_lag, cfg.leverage_bins)
        rows += [(name, cfg.binned_lag, c, m, s, n)
                 for c, m, s, n in zip(b.bin_centers, b.means, b.stderr, b.counts)]
    write_csv(out / "binned.csv", ["series", "tau", "bin_center", "mean", "stderr", "count"], rows)
    ctx["rho0"], ctx["sigma0_sq"] = inst.rho0, inst.sigma0_sq
    return ["leverage.csv", "binned.csv"]


_SPLIT_PREFIX = ("mu_minus_", "mu_plus_", "S_minus", "S_plus", "delta_minus", "delta_plus")


def _stage_pra(cfg, ctx, out):
    est = PrincipalRegressionAnalysis(
        lags=ctx["lags"], conditioning=cfg.conditioning, split_sign=cfg.split_sign,
        quadratic=cfg.quadratic, exact_ols=cfg.exact_ols, n_modes=cfg.n_modes,
        keep_matrices=cfg.keep_matrices, n_jobs=cfg.n_jobs,
    ).fit_normalized(ctx["npanel"])
    ctx["pra"] = est
    main = [{k: v for k, v in r.items() if not k.startswith(_SPLIT_PREFIX) or k.startswith("delta_")}
            for r in est.records_]
    npanel = ctx["npanel"]
    write_json(out / "pra.json", {
        "n_stocks": npanel.n_stocks,
        "n_days": npanel.n_days,
        "conditioning": cfg.conditioning,
        "lags": est.lags_,
        "correlation_eigenvalues": est.correlation_eig_.eigenvalues,
        "records": main,
    })
    split = [{k: v for k, v in r.items() if k == "tau" or k.startswith(_SPLIT_PREFIX)}
             for r in est.records_] if cfg.split_sign else []
    write_json(out / "signsplit.json", {"enabled": cfg.split_sign, "lags": est.lags_, "records": split})
    files = ["pra.json", "signsplit.json"]
    if cfg.keep_matrices:
        for kind, series in sorted(est.matrices_.items()):
            name = f"matrices_{kind}.bin"
            write_sidecar(out / name, series)
            files.append(name)
    return files


def _band_dict(band, n_modes, N):
    d = {}
    for k in range(n_modes):
        d[f"lower_{k + 1}"] = band.lower[:, k]
        d[f"upper_top_{k + 1}"] = band.upper[:, N - 1 - k]
    return d


def _stage_null(cfg, ctx, out):
    npanel, lags, est = ctx["npanel"], ctx["lags"], ctx["pra"]
    N, tau0 = npanel.n_stocks, int(lags[0])
    n_modes = min(cfg.n_modes, N)
    seed = cfg.null_stream()
    common = dict(n_samples=cfg.null_samples, tau=tau0, cond=est.cond_, C_eig=est.correlation_eig_,
                  n_jobs=cfg.n_jobs)
    ens = {"main": null_ensemble(npanel, cfg.null_xi, seed=substream_seed(seed, "main"), **common)}
    if cfg.split_sign:
        for law in ("neg-part", "pos-part"):
            ens[law] = null_ensemble(npanel, law, seed=substream_seed(seed, law),
                                     estimator="sign-split", **common)
    bands = {k: significance_bands(s, cfg.null_level, lags=lags) for k, s in ens.items()}
    checks = [("main", f"mu_{k + 1}", k, "lower") for k in range(n_modes)]
    checks += [("main", f"mu_top_{k + 1}", N - 1 - k, "upper") for k in range(n_modes)]
    if cfg.split_sign:
        checks += [("neg-part", f"mu_minus_{k + 1}", k, "lower") for k in range(n_modes)]
        checks += [("pos-part", f"mu_plus_{k + 1}", N - 1 - k, "upper") for k in range(n_modes)]
    flags = {}
    for key, curve, rank, side in checks:
        f = bands[key].flags(est.curve(curve), rank, side)
        flags[curve] = {"ensemble": key, "side": side, "count": int(f.sum()),
                        "fraction": float(f.mean()), "flagged_lags": lags[f]}
    scale = np.sqrt((npanel.n_days - tau0) / (npanel.n_days - lags))
    rms = {k: s.delta_rms * scale for k, s in ens.items()}
    write_json(out / "null.json", {
        "level": cfg.null_level,
        "seed": seed,
        "lags": lags,
        "ensembles": {k: s.to_dict() for k, s in ens.items()},
        "bands": {k: _band_dict(b, n_modes, N) for k, b in bands.items()},
        "delta_null_rms": rms,
        "flags": flags,
    })
    header = ["tau", "delta", "delta_null_rms"]
    cols = [lags, est.curve("delta"), rms["main"]]
    if cfg.split_sign:
        header += ["delta_minus", "delta_minus_null_rms", "delta_plus", "delta_plus_null_rms"]
        cols += [est.curve("delta_minus"), rms["neg-part"], est.curve("delta_plus"), rms["pos-part"]]
    write_csv(out / "rotation.csv", header, zip(*cols))
    ctx["ensembles"], ctx["bands"] = ens, bands
    return ["null.json", "rotation.csv"]


def _stage_fit(cfg, ctx, out):
    est, lags, ens, bands = ctx["pra"], ctx["lags"], ctx["ensembles"], ctx["bands"]
    N = ctx["npanel"].n_stocks
    pin = cfg.pin_value()
    targets = [("mu_1", "main", 0, "lower")]
    if cfg.split_sign:
        targets += [("mu_minus_1", "neg-part", 0, "lower"), ("mu_plus_1", "pos-part", N - 1, "upper")]
    fits = {}
    for name, key, rank, side in targets:
        curve = LagCurve(lags, est.curve(name), name)
        null_mean = float(ens[key].ranked_means[rank])
        c_inf = {"null": null_mean, "free": None}.get(pin, pin) if isinstance(pin, str) else pin
        rng = parse_range(cfg.fit_range)[[0, -1]] if cfg.fit_range else None
        res = fit_two_scale(curve, c_inf=c_inf, fit_range=rng)
        band = bands[key]
        edges = (band.lower[:, rank], None) if side == "lower" else (None, band.upper[:, rank])
        fits[name] = {**res.to_dict(), "null_mean": null_mean, "fit_range": rng,
                      "horizon": decay_horizon(curve, edges)}
    write_json(out / "fits.json", fits)
    return ["fits.json"]


def _write_manifest(cfg, out, stages, failed, error, files):
    manifest = {
        "config": cfg.result_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "substream_seeds": {"synth": substream_seed(cfg.seed, "synth"), "null": cfg.null_stream()},
        "versions": _versions(),
        "stages": stages,
        "stages_complete": failed is None,
        "failed_stage": failed,
        "error": error,
        "files": {name: sha256_file(out / name) for name in sorted(files)},
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def run_pipeline(cfg):
    """Run every stage and return a :class:`ReportBundle`.

    Raises :class:`ConfigError` before touching the output directory when the
    configuration is invalid, and :class:`StageError` after writing the
    manifest (with ``failed_stage`` set) when a stage fails.
    """
    lags = validate_config(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = {"lags": lags}
    runners = {"ingest": lambda: _stage_ingest(cfg, ctx), "leverage": lambda: _stage_leverage(cfg, ctx, out),
               "pra": lambda: _stage_pra(cfg, ctx, out), "null": lambda: _stage_null(cfg, ctx, out),
               "fit": lambda: _stage_fit(cfg, ctx, out)}
    done, files = [], []
    for stage in STAGES:
        log.info("stage %s", stage)
        try:
            files += runners[stage]()
        except Exception as exc:
            err = f"{type(exc).__name__}: {exc}"
            manifest = _write_manifest(cfg, out, done + [{"name": stage, "status": "failed"}],
                                       stage, err, files)
            raise StageError(stage, exc) from exc
        done.append({"name": stage, "status": "ok"})
    manifest = _write_manifest(cfg, out, done, None, None, files)
    return ReportBundle(out, manifest, ctx)


# ---------------------------------------------------------------- comparison

@dataclass(frozen=True)
class MetricDiff:
    file: str
    metric: str
    max_abs_diff: float
    tolerance: float | None
    flagged: bool


@dataclass(frozen=True)
class DiffSummary:
    rows: tuple

    def by_file(self, name):
        return [r for r in self.rows if r.file == name]

    @property
    def flagged(self):
        return [r for r in self.rows if r.flagged]

    def to_text(self):
        lines = [f"{'file':<16}{'metric':<28}{'max |diff|':>14}  flag"]
        for r in self.rows:
            lines.append(f"{r.file:<16}{r.metric:<28}{r.max_abs_diff:>14.6g}  {'*' if r.flagged else ''}")
        return "\n".join(lines)


def _load_bundle(b):
    d = Path(b.out_dir if isinstance(b, ReportBundle) else b)
    if not (d / "manifest.json").is_file():
        raise AlignmentError(f"{d} is not a report bundle (no manifest.json)")
    return d


def _metrics(d):
    """Flatten a bundle into ``{(file, metric): array}`` plus its lag grid."""
    m = {}
    lev = read_csv_columns(d / "leverage.csv")
    lags = np.asarray(lev["tau"], dtype=np.int64)
    for k in ("L_I", "L_sigma", "L_rho", "residual"):
        m[("leverage.csv", k)] = lev[k]
    binned = read_csv_columns(d / "binned.csv")
    for k in ("bin_center", "mean"):
        m[("binned.csv", k)] = binned[k]
    for fname in ("pra.json", "signsplit.json"):
        recs = json.loads((d / fname).read_text())["records"]
        if recs:
            for k in sorted(recs[0]):
                if k != "tau":
                    m[(fname, k)] = [r[k] for r in recs]
    rot = read_csv_columns(d / "rotation.csv")
    for k, v in rot.items():
        if k != "tau":
            m[("rotation.csv", k)] = v
    null = json.loads((d / "null.json").read_text())
    for name, e in sorted(null["ensembles"].items()):
        m[("null.json", f"{name}.ranked_means")] = e["ranked_means"]
        m[("null.json", f"{name}.delta_rms")] = [e["delta_rms"]]
        m[("null.json", f"{name}.overlap_mean")] = [e["overlap_mean"]]
    for name, b in sorted(null["bands"].items()):
        for k, v in sorted(b.items()):
            m[("null.json", f"{name}.{k}")] = v
    fits = json.loads((d / "fits.json").read_text())
    for name, f in sorted(fits.items()):
        for k in ("c_inf", "a1", "theta1", "a2", "theta2", "rss", "horizon"):
            m[("fits.json", f"{name}.{k}")] = [f[k]]
    return lags, {k: np.asarray([np.nan if x is None else x for x in v], dtype=np.float64)
                  for k, v in m.items()}


def compare_runs(a, b, tolerance=None):
    """Per-metric maximum absolute differences between two bundles.

    ``tolerance`` is a float applied to every metric or a mapping from
    ``"file:metric"`` (or just ``"file"``) to a tolerance; metrics without a
    tolerance are reported but never flagged.
    """
    lags_a, ma = _metrics(_load_bundle(a))
    lags_b, mb = _metrics(_load_bundle(b))
    if lags_a.shape != lags_b.shape or np.any(lags_a != lags_b):
        raise AlignmentError("bundles have different lag grids")
    rows = []
    for key in sorted(set(ma) | set(mb)):
        fname, metric = key
        if key not in ma or key not in mb or ma[key].shape != mb[key].shape:
            raise AlignmentError(f"metric {fname}:{metric} missing or misaligned in one bundle")
        x, y = ma[key], mb[key]
        both_nan = np.isnan(x) & np.isnan(y)
        diff = np.where(both_nan, 0.0, np.abs(x - y))
        dmax = float(np.nanmax(diff, initial=0.0)) if not np.all(np.isnan(diff)) else math.inf
        if np.any(np.isnan(diff)):
            dmax = math.inf
        if isinstance(tolerance, dict):
            tol = tolerance.get(f"{fname}:{metric}", tolerance.get(fname))
        else:
            tol = tolerance
        rows.append(MetricDiff(fname, metric, dmax, tol, tol is not None and dmax > tol))
    return DiffSummary(tuple(rows))
