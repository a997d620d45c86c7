"""Config-driven command line: estimate, mc, calibrate, h5-diag.

Configs are flat ``key = value`` text with dotted section prefixes and
``#`` comments; unknown keys are rejected.  Outputs are CSV files with a
trailing metadata comment carrying the package version and master seed.

Exit codes: 0 success, 2 config error, 3 numeric/infeasibility error,
4 data error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .calibration import (CalibrationError, CalibrationProblem, build_h,
                          calibrate, write_weights)
from .design import DesignError, make_design
from .estimators import (EstimatorError, greg_fits, greg_total, ht_total,
                         pgd_total, rf_total_population, rf_total_sample)
from .forest import ForestError, ForestParams, ResampleMode, fit_forest
from .population import DataError, read_population
from .simlab import (EstimatorSpec, H5Config, McConfig, McPopulation,
                     SimulationError, SyntheticModelSpec, gen_population,
                     h5_diagnostic, run_mc, working_predictors)
from .variance import VarianceError, confidence_interval, var_ma_total
from ._rng import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_DATA = 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config parsing and validation

_COMMON_KEYS = {"seed", "threads", "output.dir"}
_POPULATION_KEYS = {
    "population.source", "population.model", "population.size",
    "population.seed", "population.noise", "population.path",
    "population.delimiter", "population.predictors", "population.study",
    "population.id_column", "population.strata_column",
}
_DESIGN_KEYS = {"design.kind", "design.n", "design.n_h"}
_ESTIMATOR_FIELDS = {"kind", "trees", "n0", "mtry", "resample", "fraction",
                     "variance", "pop_n0"}
_MC_KEYS = {"mc.replicates", "mc.ci_level", "mc.trace", "mc.preset",
            "mc.grid.n0", "mc.grid.trees", "mc.grid.mtry"}
_CAL_KEYS = {"calibrate.predictions", "calibrate.aux", "calibrate.distance",
             "calibrate.cap", "calibrate.tol", "calibrate.max_iter"}
_H5_KEYS = {"h5.model", "h5.n_grid", "h5.fraction", "h5.replicates",
            "h5.probes", "h5.trees", "h5.n0", "h5.n0_frac", "h5.subsample",
            "h5.pop_n0"}


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _validate_keys(cfg: dict[str, str], command: str):
    allowed = _COMMON_KEYS | _POPULATION_KEYS | _DESIGN_KEYS
    if command == "mc":
        allowed |= _MC_KEYS
    if command == "calibrate":
        allowed |= _CAL_KEYS
    if command == "h5-diag":
        allowed |= _H5_KEYS
    accepts_estimators = command in ("estimate", "mc", "calibrate")
    for key in cfg:
        if key in allowed:
            continue
        parts = key.split(".")
        if (accepts_estimators and len(parts) == 3 and parts[0] == "estimator"
                and parts[2] in _ESTIMATOR_FIELDS):
            continue
        raise ConfigError(f"unknown config key {key!r} for command {command!r}")


def _get(cfg, key, default=None, required=False):
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(f"missing required config key {key!r}")
    return default


def _get_int(cfg, key, default=None, required=False):
    v = _get(cfg, key, default=None, required=required)
    if v is None:
        return default
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected integer, got {v!r}") from None


def _get_float(cfg, key, default=None, required=False):
    v = _get(cfg, key, default=None, required=required)
    if v is None:
        return default
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected number, got {v!r}") from None


def _get_bool(cfg, key, default=False):
    v = _get(cfg, key)
    if v is None:
        return default
    lv = v.lower()
    if lv in ("true", "yes", "1"):
        return True
    if lv in ("false", "no", "0"):
        return False
    raise ConfigError(f"config key {key!r}: expected true/false, got {v!r}")


def _get_list(cfg, key):
    v = _get(cfg, key)
    if v is None:
        return None
    return [part.strip() for part in v.split(",") if part.strip()]


# ---------------------------------------------------------------------------
# building blocks


def _load_population(cfg, master_seed):
    """Returns (x_working, names, y or None, strata or None, unit_ids, label)."""
    source = _get(cfg, "population.source", required=True)
    if source == "synthetic":
        model = _get_int(cfg, "population.model", required=True)
        size = _get_int(cfg, "population.size", required=True)
        pop_seed = _get_int(cfg, "population.seed",
                            default=derive_seed(master_seed, 0))
        noise = _get(cfg, "population.noise", default="sd")
        if noise not in ("variance", "sd"):
            raise ConfigError("population.noise must be 'variance' or 'sd'")
        spec = SyntheticModelSpec(model, size, pop_seed,
                                  noise_as_variance=(noise == "variance"))
        frame = gen_population(spec)
        names = working_predictors(model)
        x = frame.select_predictors(names)
        y = frame.study(f"y{model}")
        return (np.ascontiguousarray(x), names, y, None, frame.unit_ids,
                f"model{model}")
    if source == "file":
        path = _get(cfg, "population.path", required=True)
        study = _get(cfg, "population.study")
        frame, strata = read_population(
            path,
            predictors=_get_list(cfg, "population.predictors"),
            study=[study] if study else [],
            delimiter=_get(cfg, "population.delimiter", default=","),
            id_column=_get(cfg, "population.id_column"),
            strata_column=_get(cfg, "population.strata_column"),
        )
        y = frame.study(study) if study else None
        return (np.ascontiguousarray(frame.predictors),
                list(frame.predictor_names), y, strata, frame.unit_ids,
                os.path.basename(path))
    raise ConfigError("population.source must be 'synthetic' or 'file'")


def _build_design(cfg, n_population, strata):
    kind = _get(cfg, "design.kind", default="srswor")
    n = _get_int(cfg, "design.n", required=True)
    if kind == "srswor":
        return make_design("srswor", n_population, n)
    if kind == "stratified":
        if strata is None:
            raise ConfigError("stratified design needs population.strata_column")
        n_h = _get_list(cfg, "design.n_h")
        if n_h is not None:
            return make_design("stratified", n_population, strata=strata,
                               n_h=[int(v) for v in n_h])
        return make_design("stratified", n_population, n, strata=strata)
    raise ConfigError("design.kind must be 'srswor' or 'stratified'")


def _estimator_specs(cfg) -> list[EstimatorSpec]:
    names = []
    for key in cfg:
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "estimator" and parts[1] not in names:
            names.append(parts[1])
    specs = []
    for name in names:
        def g(field, default=None):
            return cfg.get(f"estimator.{name}.{field}", default)

        kind = g("kind")
        if kind is None:
            raise ConfigError(f"estimator.{name}.kind is required")
        resample = g("resample", "subsample")
        if resample not in ("none", "bootstrap", "subsample"):
            raise ConfigError(f"estimator.{name}.resample: unknown mode {resample!r}")
        mode = (ResampleMode.subsample(float(g("fraction", "0.63")))
                if resample == "subsample" else ResampleMode(resample))
        mtry = g("mtry")
        pop_n0 = g("pop_n0")
        try:
            specs.append(EstimatorSpec(
                name=name, kind=kind,
                n_trees=int(g("trees", "200")),
                min_node_size=int(g("n0", "5")),
                mtry=None if mtry is None else int(mtry),
                resample=mode,
                with_variance=str(g("variance", "false")).lower() in ("true", "yes", "1"),
                pop_min_node=None if pop_n0 is None else int(pop_n0),
            ))
        except (ValueError, SimulationError) as exc:
            raise ConfigError(f"estimator.{name}: {exc}") from None
    if not specs:
        raise ConfigError("no estimators configured (estimator.<name>.kind = ...)")
    return specs


def _write_csv(path, header, rows, seed):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
        fh.write(f"# rfsurvey {__version__} seed={seed}\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# subcommands


def cmd_estimate(cfg, seed, out_dir, threads):
    x, names, y, strata, unit_ids, label = _load_population(cfg, seed)
    if y is None:
        raise ConfigError("population.study is required for estimate")
    design = _build_design(cfg, x.shape[0], strata)
    specs = _estimator_specs(cfg)
    sample = design.draw(derive_seed(seed, 1))
    members = sample.members
    y_s = y[members]
    pi_s = design.pi[members]

    rows = []
    for i, spec in enumerate(specs):
        est_seed = derive_seed(seed, 2, i)
        params = ForestParams(n_trees=spec.n_trees, mtry=spec.mtry,
                              min_node_size=spec.min_node_size,
                              resample=spec.resample, master_seed=est_seed)
        if spec.kind == "ht":
            point = ht_total(y_s, pi_s)
            variance = var_ma_total(y_s, design, members) if spec.with_variance else None
            report_w = None
        elif spec.kind == "greg":
            rep = greg_total(x, members, y_s, pi_s)
            point, report_w = rep.point, rep.weight_sum
            variance = None
            if spec.with_variance:
                fits = greg_fits(x, members, y_s, pi_s)
                variance = var_ma_total(y_s - fits[members], design, members)
        elif spec.kind in ("rf", "cart"):
            if spec.kind == "cart":
                params = ForestParams(n_trees=1, mtry=x.shape[1],
                                      min_node_size=spec.min_node_size,
                                      resample=ResampleMode.none(),
                                      master_seed=est_seed)
            rep = rf_total_sample(x, members, y_s, pi_s, params,
                                  design=design if spec.with_variance else None)
            point, variance, report_w = rep.point, rep.variance, rep.weight_sum
        elif spec.kind == "rf_pop":
            n0 = spec.pop_min_node
            if n0 is None:
                n0 = max(1, round(spec.min_node_size * x.shape[0]
                                  / design.n_sample))
            params = ForestParams(n_trees=spec.n_trees, mtry=spec.mtry,
                                  min_node_size=n0, resample=spec.resample,
                                  master_seed=est_seed)
            rep = rf_total_population(x, y, members, y_s, pi_s, params,
                                      design=design if spec.with_variance else None)
            point, variance, report_w = rep.point, rep.variance, rep.weight_sum
        elif spec.kind == "pgd":
            n0 = spec.pop_min_node
            if n0 is None:
                n0 = max(1, round(spec.min_node_size * x.shape[0]
                                  / design.n_sample))
            params = ForestParams(n_trees=spec.n_trees, mtry=spec.mtry,
                                  min_node_size=n0, resample=spec.resample,
                                  master_seed=est_seed)
            fits = fit_forest(x, y, params).predict(x)
            point = pgd_total(fits, y_s, pi_s, members)
            variance = (var_ma_total(y_s - fits[members], design, members)
                        if spec.with_variance else None)
            report_w = None
        else:
            raise ConfigError(f"estimator.{spec.name}.kind: unknown kind {spec.kind!r}")
        lo = hi = level = None
        if variance is not None:
            level = 0.95
            lo, hi = confidence_interval(point, variance, level)
        rows.append([spec.name, spec.kind] + [_fmt(v) for v in
                    (point, variance, lo, hi, level, report_w)])

    path = os.path.join(out_dir, "estimate.csv")
    _write_csv(path, ["estimator", "kind", "point", "variance", "ci_low",
                      "ci_high", "ci_level", "weight_sum"], rows, seed)
    print(path)
    return EXIT_OK


_PRESET_TABLE2_N = (250, 1000)


def _mc_preset(name: str) -> dict[str, str]:
    """Named experiment presets (desk-scale replicate/tree counts)."""
    if name.startswith("table2-Y") and "-n" in name:
        body = name[len("table2-Y"):]
        model_s, _, n_s = body.partition("-n")
        if model_s.isdigit() and n_s.isdigit() and 1 <= int(model_s) <= 8 \
                and int(n_s) in _PRESET_TABLE2_N:
            base = {
                "population.source": "synthetic",
                "population.model": model_s,
                "population.size": "10000",
                "design.n": n_s,
                "mc.replicates": "500",
                "estimator.ht.kind": "ht",
                "estimator.greg.kind": "greg",
                "estimator.cart.kind": "cart",
                "estimator.cart.n0": "5",
                "estimator.rf1.kind": "rf",
                "estimator.rf1.resample": "bootstrap",
                "estimator.rf1.n0": "5",
                "estimator.rf1.trees": "200",
                "estimator.rf2.kind": "rf",
                "estimator.rf2.resample": "subsample",
                "estimator.rf2.fraction": "0.63",
                "estimator.rf2.n0": "5",
                "estimator.rf2.trees": "200",
                "estimator.rf3.kind": "rf",
                "estimator.rf3.resample": "bootstrap",
                "estimator.rf3.trees": "200",
            }
            base["estimator.rf3.n0"] = str(int(round(math.sqrt(int(n_s)))))
            return base
    if name == "figure2-Y5-n1000":
        n = 1000
        grid = sorted({max(1, int(n ** (a / 20))) for a in range(1, 18, 2)})
        return {
            "population.source": "synthetic",
            "population.model": "5",
            "population.size": "20000",
            "design.n": "1000",
            "mc.replicates": "300",
            "mc.grid.n0": ",".join(str(v) for v in grid),
            "estimator.rf.kind": "rf",
            "estimator.rf.trees": "50",
            "estimator.rf.variance": "true",
        }
    raise ConfigError(f"unknown mc.preset {name!r}")


def _expand_grid(specs, cfg):
    """Cartesian hyper-parameter grids over the forest-based estimators."""
    grids = []
    for key, field in (("mc.grid.n0", "min_node_size"),
                       ("mc.grid.trees", "n_trees"),
                       ("mc.grid.mtry", "mtry")):
        vals = _get_list(cfg, key)
        if vals:
            try:
                grids.append((field, [int(v) for v in vals]))
            except ValueError:
                raise ConfigError(f"{key}: expected integers") from None
    if not grids:
        return specs
    tags = {"min_node_size": "n0", "n_trees": "trees", "mtry": "mtry"}
    out = []
    for spec in specs:
        if spec.kind not in ("rf", "cart", "rf_pop", "pgd"):
            out.append(spec)
            continue
        variants = [spec]
        for field, vals in grids:
            variants = [
                replace(v, **{field: val, "name": f"{v.name}-{tags[field]}{val}"})
                for v in variants for val in vals
            ]
        out.extend(variants)
    return out


def cmd_mc(cfg, seed, out_dir, threads):
    preset = _get(cfg, "mc.preset")
    if preset:
        merged = _mc_preset(preset)
        merged.update({k: v for k, v in cfg.items() if k != "mc.preset"})
        cfg = merged
    x, names, y, strata, unit_ids, label = _load_population(cfg, seed)
    if y is None:
        raise ConfigError("population.study is required for mc")
    design = _build_design(cfg, x.shape[0], strata)
    specs = _expand_grid(_estimator_specs(cfg), cfg)
    config = McConfig(
        population=McPopulation(x, y, label),
        sample_size=design.n_sample,
        replicates=_get_int(cfg, "mc.replicates", default=500),
        estimators=tuple(specs),
        master_seed=seed,
        ci_level=_get_float(cfg, "mc.ci_level", default=0.95),
        n_jobs=threads,
        keep_traces=_get_bool(cfg, "mc.trace", default=False),
        design=design,
    )
    summary = run_mc(config)

    rows = [
        [summary.label, summary.sample_size, row.estimator, summary.replicates]
        + [_fmt(v) for v in (row.rb, row.re, row.mse, row.coverage,
                             row.ci_length, round(summary.wall_time, 3))]
        for row in summary.rows
    ]
    path = os.path.join(out_dir, "mc.csv")
    _write_csv(path, ["model", "n", "estimator", "R", "RB", "RE", "MSE",
                      "coverage", "ci_length", "wall_time"], rows, seed)
    print(path)
    if config.keep_traces:
        tpath = os.path.join(out_dir, "mc_trace.csv")
        trows = []
        for spec in specs:
            tr = summary.traces[spec.name]
            for r in range(summary.replicates):
                trows.append([spec.name, r] + [_fmt(float(tr[k][r])) for k in
                                               ("point", "var", "lo", "hi")]
                             + [int(tr["fail"][r])])
        _write_csv(tpath, ["estimator", "replicate", "point", "variance",
                           "ci_low", "ci_high", "failed"], trows, seed)
        print(tpath)
    return EXIT_OK


def cmd_calibrate(cfg, seed, out_dir, threads):
    x, names, y, strata, unit_ids, label = _load_population(cfg, seed)
    design = _build_design(cfg, x.shape[0], strata)
    sample = design.draw(derive_seed(seed, 1))
    members = sample.members
    pi_s = design.pi[members]
    specs = {s.name: s for s in _estimator_specs(cfg)} if any(
        k.startswith("estimator.") for k in cfg) else {}

    pred_names = _get_list(cfg, "calibrate.predictions") or []
    preds_u = []
    for i, name in enumerate(pred_names):
        if name not in specs:
            raise ConfigError(f"calibrate.predictions names unknown estimator {name!r}")
        spec = specs[name]
        if y is None:
            raise ConfigError("population.study required for model predictions")
        y_s = y[members]
        est_seed = derive_seed(seed, 2, i)
        if spec.kind == "greg":
            preds_u.append(greg_fits(x, members, y_s, pi_s))
        elif spec.kind in ("rf", "cart"):
            if spec.kind == "cart":
                params = ForestParams(n_trees=1, mtry=x.shape[1],
                                      min_node_size=spec.min_node_size,
                                      resample=ResampleMode.none(),
                                      master_seed=est_seed)
            else:
                params = ForestParams(n_trees=spec.n_trees, mtry=spec.mtry,
                                      min_node_size=spec.min_node_size,
                                      resample=spec.resample, master_seed=est_seed)
            model = fit_forest(x[members], y_s, params, design_weights=1.0 / pi_s)
            preds_u.append(model.predict(x))
        else:
            raise ConfigError(
                f"calibrate.predictions: estimator {name!r} has no usable fits")

    aux_names = _get_list(cfg, "calibrate.aux") or []
    aux_s = aux_totals = None
    if aux_names:
        cols = []
        for name in aux_names:
            if name not in names:
                raise ConfigError(f"calibrate.aux: unknown column {name!r}")
            cols.append(names.index(name))
        aux_pop = x[:, cols]
        aux_s = aux_pop[members]
        aux_totals = aux_pop.sum(axis=0)

    h, targets = build_h(x.shape[0], pi_s,
                         predictions_s=[p[members] for p in preds_u],
                         predictions_u=preds_u, aux_s=aux_s, aux_totals=aux_totals)
    cap = _get_float(cfg, "calibrate.cap")
    problem = CalibrationProblem(
        1.0 / pi_s, h, targets,
        distance=_get(cfg, "calibrate.distance", default="chi_square"),
        max_iter=_get_int(cfg, "calibrate.max_iter", default=50),
        tol=_get_float(cfg, "calibrate.tol", default=1e-8),
        weight_cap=cap)
    result = calibrate(problem)

    path = os.path.join(out_dir, "weights.csv")
    write_weights(path, unit_ids[members], result.weights)
    with open(path, "a") as fh:
        fh.write(f"# rfsurvey {__version__} seed={seed}\n")
    print(path)
    print(f"max scaled residual: "
          f"{float(np.max(np.abs(result.residuals) / (1.0 + np.abs(targets)))):.3e} "
          f"iterations: {result.iterations}")
    return EXIT_OK


def cmd_h5_diag(cfg, seed, out_dir, threads):
    grid = _get_list(cfg, "h5.n_grid") or ["1000", "4000", "16000"]
    config = H5Config(
        model_id=_get_int(cfg, "h5.model", default=0),
        n_grid=tuple(int(v) for v in grid),
        sampling_fraction=_get_float(cfg, "h5.fraction", default=0.1),
        replicates=_get_int(cfg, "h5.replicates", default=20),
        n_probes=_get_int(cfg, "h5.probes", default=120),
        n_trees=_get_int(cfg, "h5.trees", default=60),
        min_node_size=_get_int(cfg, "h5.n0", default=None),
        node_size_fraction=_get_float(cfg, "h5.n0_frac", default=0.1),
        subsample_fraction=_get_float(cfg, "h5.subsample", default=0.63),
        pop_min_node=_get_int(cfg, "h5.pop_n0", default=None),
        master_seed=seed,
    )
    rows = h5_diagnostic(config)
    path = os.path.join(out_dir, "h5.csv")
    _write_csv(path, ["n_population", "n_sample", "gap", "gap_se",
                      "replicates", "n_probes"],
               [[r["n_population"], r["n_sample"], _fmt(r["gap"]),
                 _fmt(r["gap_se"]), r["replicates"], r["n_probes"]]
                for r in rows], seed)
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------


_COMMANDS = {
    "estimate": cmd_estimate,
    "mc": cmd_mc,
    "calibrate": cmd_calibrate,
    "h5-diag": cmd_h5_diag,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rfsurvey",
        description="Design-based survey estimation with forest-assisted estimators")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: config or all cores)")
    parser.add_argument("--out", default=None, help="output directory (default: config or .)")
    args = parser.parse_args(argv)

    try:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"cannot read config: {exc}") from None
        cfg = parse_config_text(text)
        _validate_keys(cfg, args.command)
        seed = args.seed if args.seed is not None else _get_int(cfg, "seed", default=0)
        threads = args.threads if args.threads is not None else \
            _get_int(cfg, "threads", default=os.cpu_count() or 1)
        out_dir = args.out if args.out is not None else _get(cfg, "output.dir", default=".")
        os.makedirs(out_dir, exist_ok=True)
        return _COMMANDS[args.command](cfg, seed, out_dir, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        if exc.residuals is not None:
            print(f"achieved residuals: {np.asarray(exc.residuals)}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EstimatorError, SimulationError, VarianceError, ForestError,
            DesignError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
