"""Single `plumeloc` executable wiring every stage into reproducible commands.

Subcommands: gen-data, train, evaluate, dram, infer, compare,
reproduce-reference, pipeline. Every output file carries (or sits next to)
metadata with the seed and configuration that produced it, and a rerun of
`pipeline` with the same config file yields byte-identical artifacts.

Exit codes: 0 success, 2 configuration, 3 simulation, 4 training,
5 inference/analysis.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import bnn as bnn_mod
from . import datagen, density, dram, nn, sensing, transport
from .errors import (
    ConfigError,
    DomainError,
    PlumelocError,
    TrainingError,
)
from .fileio import config_hash, read_json, sha256_file, write_json

EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_TRAINING = 4
EXIT_INFERENCE = 5

# The reference release exercised by every method comparison.
REFERENCE_SCENARIO = transport.Scenario(x_c=-389.0, y_c=185.37, m_c=1.83, u=2.44, v=0.74)

DESK_EPOCHS = {"regression": 100, "classification": 200, "bnn": 100}
PAPER_EPOCHS = {"regression": 500, "classification": 1000, "bnn": 500}

MODEL_FILES = {
    "regression": "model_regression.json",
    "classification": "model_classification.json",
    "bnn": "model_bnn.json",
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except ConfigError as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"error (simulation): {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except TrainingError as exc:
        print(f"error (training): {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except PlumelocError as exc:
        print(f"error (inference): {exc}", file=sys.stderr)
        return EXIT_INFERENCE
    except FileNotFoundError as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plumeloc",
        description="Source-term estimation for instantaneous radiological releases.",
    )
    parser.add_argument("--threads", type=int, default=1,
                        help="parallelism bound; computation is deterministic and "
                             "currently single-threaded regardless")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a feature/target dataset")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-points", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true",
                   help="defaults: 400000 rows on a 1001-point grid")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one of the three network models")
    p.add_argument("--model", required=True, choices=("regression", "classification", "bnn"))
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--paper-scale", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy metrics of a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--split", choices=("all", "test"), default="all",
                   help="'test' re-applies the canonical 50-25-25 split and "
                        "evaluates its test part")
    p.add_argument("--per-row", action="store_true")
    p.add_argument("--seed", type=int, default=0, help="weight-sampling seed (bnn only)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dram", help="adaptive MCMC posterior for one measurement file")
    p.add_argument("--measurements", required=True)
    p.add_argument("--iterations", type=int, default=20_000)
    p.add_argument("--burn-in", type=int, default=10_000)
    p.add_argument("--grid-points", type=int, default=transport.DESK_GRID_POINTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dram)

    p = sub.add_parser("infer", help="posterior sample set from a trained BNN")
    p.add_argument("--model", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--mode", choices=("epistemic", "combined"), required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-points", type=int, default=transport.DESK_GRID_POINTS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("compare", help="cross-method posterior comparison report")
    p.add_argument("--dram", dest="dram_chain")
    p.add_argument("--bnn", dest="bnn_samples")
    p.add_argument("--bnn-epistemic", dest="bnn_epistemic")
    p.add_argument("--classification", dest="classification_probs")
    p.add_argument("--truth", required=True, help="x_c,y_c,m_c")
    p.add_argument("--out", required=True)
    p.add_argument("--plots", default=None, help="directory for density CSVs")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("reproduce-reference",
                       help="full method comparison on the reference release")
    p.add_argument("--models-dir", default=".")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train", action="store_true",
                   help="train missing models from a freshly generated dataset")
    p.add_argument("--count", type=int, default=datagen.DESK_DATASET_ROWS,
                   help="dataset rows when --train generates data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-points", type=int, default=transport.DESK_GRID_POINTS)
    p.add_argument("--dram-iterations", type=int, default=20_000)
    p.add_argument("--dram-burn-in", type=int, default=10_000)
    p.add_argument("--samples", type=int, default=10_000)
    p.set_defaults(func=cmd_reproduce_reference)

    p = sub.add_parser("pipeline", help="gen-data -> train x3 -> evaluate (+ optional "
                                        "reference dram/infer), with a hash manifest")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _grid_cfg(grid_points: int) -> transport.GridConfig:
    return transport.GridConfig(n_points=grid_points)


def cmd_gen_data(args) -> int:
    count = args.count if args.count is not None else (
        datagen.FULL_DATASET_ROWS if args.paper_scale else datagen.DESK_DATASET_ROWS)
    points = args.grid_points if args.grid_points is not None else (
        transport.FULL_GRID_POINTS if args.paper_scale else transport.DESK_GRID_POINTS)
    _generate_and_save(count, args.seed, points, args.out)
    print(f"wrote {count} rows to {args.out}")
    return 0


def _generate_and_save(count, seed, grid_points, out):
    layout = datagen.default_layout()
    pc = sensing.PhysicsConstants()
    ds = datagen.generate_dataset(count, seed, layout=layout, pc=pc,
                                  grid_cfg=_grid_cfg(grid_points))
    meta = {
        "seed": seed,
        "rows": count,
        "grid_points": grid_points,
        "layout": [[d.x, d.y] for d in layout],
        "physics": {"specific_activity": pc.specific_activity, "attenuation": pc.attenuation},
        "scenario_bounds": {k: list(v) for k, v in datagen.SCENARIO_BOUNDS.items()},
        "log_count_floor": datagen.LOG_COUNT_FLOOR,
    }
    datagen.save_dataset(out, ds, meta)
    return ds


def _train_one(model_name, dataset, epochs, batch, lr, seed):
    train_ds, val_ds, _ = datagen.split_dataset(dataset)
    normalizer = datagen.fit_normalizer(train_ds)
    cfg = nn.TrainConfig(epochs=epochs, learning_rate=lr, batch_size=batch, seed=seed)
    if model_name == "regression":
        model, history = nn.train(nn.init_regression_model(seed, normalizer),
                                  train_ds, val_ds, cfg)
    elif model_name == "classification":
        model, history = nn.train(nn.init_classification_model(seed, normalizer),
                                  train_ds, val_ds, cfg)
    else:
        model, history = bnn_mod.train_bnn(bnn_mod.init_bnn(seed, normalizer),
                                           train_ds, val_ds, cfg)
    model.meta["history_final"] = {k: v[-1] for k, v in history.items()}
    return model


def _save_any_model(path, model):
    if isinstance(model, bnn_mod.VariationalMlpModel):
        bnn_mod.save_bnn(path, model)
    else:
        nn.save_model(path, model)


def _load_any_model(path):
    header = read_json(path)
    if header.get("kind") == "bnn-regression3":
        return bnn_mod.load_bnn(path)
    return nn.load_model(path)


def cmd_train(args) -> int:
    epochs = args.epochs if args.epochs is not None else (
        PAPER_EPOCHS[args.model] if args.paper_scale else DESK_EPOCHS[args.model])
    dataset, _ = datagen.load_dataset(args.data)
    model = _train_one(args.model, dataset, epochs, args.batch, args.lr, args.seed)
    _save_any_model(args.out, model)
    print(f"trained {args.model} for {epochs} epochs -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    dataset, _ = datagen.load_dataset(args.data)
    if args.split == "test":
        _, _, dataset = datagen.split_dataset(dataset)
    model = _load_any_model(args.model)
    if isinstance(model, bnn_mod.VariationalMlpModel):
        report = bnn_mod.evaluate_bnn(model, dataset, seed=args.seed)
    else:
        report = nn.evaluate(model, dataset, per_row=args.per_row)
    report["schema_version"] = 1
    report["model"] = str(args.model)
    report["data"] = str(args.data)
    report["split"] = args.split
    write_json(args.report, report)
    loc = report["mean_location_error_m"]
    mass = report["mass_mae_g"]
    print(f"mean location error: {loc:.2f} m" +
          ("" if mass is None else f"; mass MAE: {mass:.4f} g"))
    return 0


def _problem_from_measurements(path, grid_points):
    m, positions, meta = sensing.read_measurements(path)
    detectors = tuple(sensing.DetectorSpec(x=x, y=y) for x, y in positions)
    winds = meta.get("winds")
    if winds is None:
        raise ConfigError(f"measurement sidecar for {path} lacks 'winds'")
    return dram.InferenceProblem(
        observations=np.asarray(m.counts, dtype=float),
        detectors=detectors,
        pc=sensing.PhysicsConstants(),
        u=float(winds[0]), v=float(winds[1]),
        t_obs=m.t_obs,
        grid_cfg=_grid_cfg(grid_points),
    ), m, meta


def cmd_dram(args) -> int:
    problem, _, meta = _problem_from_measurements(args.measurements, args.grid_points)
    cfg = dram.DramConfig(iterations=args.iterations, burn_in=args.burn_in)
    theta0, info = dram.grid_search_init(problem)
    t0 = time.perf_counter()
    chain = dram.dram_run(problem, cfg, np.random.default_rng(args.seed), theta0=theta0,
                          sigma2_init=max(info["ss_min"] / problem.n_obs, 1e-12))
    elapsed = time.perf_counter() - t0
    dram.write_chain(args.out, chain, {
        "seed": args.seed,
        "grid_points": args.grid_points,
        "theta0": [float(v) for v in theta0],
        "grid_search_ss_min": info["ss_min"],
        "measurements": str(args.measurements),
    })
    summary = dram.burn_and_summarize(chain)
    means = {k: v["mean"] for k, v in summary["parameters"].items()}
    print(f"chain written to {args.out}; acceptance {chain.acceptance_rate:.2f}; "
          f"post-burn-in means {means}; {elapsed:.1f} s")
    return 0


def cmd_infer(args) -> int:
    model = _load_any_model(args.model)
    if not isinstance(model, bnn_mod.VariationalMlpModel):
        raise ConfigError("infer requires a variational (bnn) model file")
    m, positions, meta = sensing.read_measurements(args.measurements)
    winds = meta.get("winds")
    if winds is None:
        raise ConfigError(f"measurement sidecar for {args.measurements} lacks 'winds'")

    if args.mode == "epistemic":
        features = datagen.make_features(m, float(winds[0]), float(winds[1]))
        samples = bnn_mod.epistemic_density(model, features, args.samples, args.seed)
    else:
        scen = meta.get("scenario")
        if scen is None:
            raise ConfigError(
                "combined mode resamples measurements and needs the generating "
                "'scenario' in the measurement sidecar")
        s = transport.Scenario(**{k: float(v) for k, v in scen.items()})
        detectors = tuple(sensing.DetectorSpec(x=x, y=y) for x, y in positions)
        samples = bnn_mod.combined_density(model, s, detectors, sensing.PhysicsConstants(),
                                           args.samples, args.seed,
                                           grid_cfg=_grid_cfg(args.grid_points))
    bnn_mod.write_samples(args.out, samples, {
        "seed": args.seed, "mode": args.mode, "model": str(args.model),
        "measurements": str(args.measurements),
    })
    print(f"{args.samples} {samples.tag} samples -> {args.out}")
    return 0


def _parse_truth(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"--truth needs x_c,y_c,m_c, got {text!r}")
    return np.asarray(parts)


def cmd_compare(args) -> int:
    truth = _parse_truth(args.truth)
    sources = {}
    if args.dram_chain:
        thetas, _, meta = dram.read_chain(args.dram_chain)
        burn = int(meta.get("burn_in", 0))
        sources["dram"] = thetas[burn:]
    if args.bnn_samples:
        ss, _ = bnn_mod.read_samples(args.bnn_samples)
        sources["bnn-combined" if "aleatoric" in ss.tag else "bnn-epistemic"] = ss.samples
    if args.bnn_epistemic:
        ss, _ = bnn_mod.read_samples(args.bnn_epistemic)
        sources["bnn-epistemic"] = ss.samples
    if len(sources) < 2:
        raise ConfigError("compare needs at least two sample sources")

    report = density.compare(sources, truth)
    if args.classification_probs:
        probs = _read_probs(args.classification_probs)
        report["sources"]["classification"] = _classification_entry(probs, truth)

    write_json(args.out, report)
    if args.plots:
        _write_plot_csvs(Path(args.plots), sources,
                         _read_probs(args.classification_probs) if args.classification_probs else None)
    print(f"report -> {args.out}")
    return 0


def _classification_entry(probs, truth):
    bins = nn.default_bin_grid()
    entry = {"n_samples": None, "parameters": {}}
    for j, (name, edges) in enumerate((("x_c", bins.x_edges), ("y_c", bins.y_edges))):
        stats = _binned_stats(probs[j], edges, 0.95)
        stats["truth_contained"] = bool(stats["ci"][0] <= truth[j] <= stats["ci"][1])
        entry["parameters"][name] = stats
    return entry


def _binned_stats(p, edges, level):
    """Mean/std/central interval of a discrete bin distribution, with the
    CDF interpolated linearly inside bins."""
    p = np.asarray(p, dtype=float)
    mids = 0.5 * (edges[:-1] + edges[1:])
    mean = float(p @ mids)
    var = float(p @ (mids - mean) ** 2)
    cdf = np.concatenate([[0.0], np.cumsum(p)])
    cdf /= cdf[-1]

    def quantile(q):
        i = int(np.searchsorted(cdf, q, side="left"))
        i = max(1, min(i, len(edges) - 1))
        span = cdf[i] - cdf[i - 1]
        frac = 0.0 if span == 0 else (q - cdf[i - 1]) / span
        return float(edges[i - 1] + frac * (edges[i] - edges[i - 1]))

    lo, hi = (1 - level) / 2, (1 + level) / 2
    return {"mean": mean, "std": float(np.sqrt(var)), "ci": [quantile(lo), quantile(hi)]}


def _read_probs(path):
    """Classification probability CSV: param,midpoint,probability."""
    import csv as _csv

    blocks = {"x_c": [], "y_c": []}
    with open(path, newline="") as fh:
        for row in _csv.DictReader(fh):
            blocks[row["param"]].append(float(row["probability"]))
    return np.asarray(blocks["x_c"]), np.asarray(blocks["y_c"])


def _write_probs(path, probs):
    import csv as _csv

    bins = nn.default_bin_grid()
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["param", "midpoint", "probability"])
        for name, mids, p in (("x_c", bins.x_midpoints, probs[0]),
                              ("y_c", bins.y_midpoints, probs[1])):
            for m, q in zip(mids, p):
                writer.writerow([name, repr(float(m)), repr(float(q))])


def _write_plot_csvs(plots_dir: Path, sources, probs=None) -> None:
    """Plot-ready long-format CSVs: param,grid,density,source."""
    import csv as _csv

    plots_dir.mkdir(parents=True, exist_ok=True)
    bins = nn.default_bin_grid()
    names = ("x_c", "y_c", "m_c")
    for j, name in enumerate(names):
        rows = []
        for tag, samples in sorted(sources.items()):
            est = density.gaussian_kde(samples[:, j], source=tag)
            rows += [(name, g, dv, tag) for g, dv in zip(est.grid, est.density)]
        if probs is not None and name != "m_c":
            edges = bins.x_edges if name == "x_c" else bins.y_edges
            est = density.binned_density(probs[j], edges, source="classification")
            rows += [(name, g, dv, "classification") for g, dv in zip(est.grid, est.density)]
        with open(plots_dir / f"density_{name}.csv", "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["param", "grid", "density", "source"])
            for param, g, dv, tag in rows:
                writer.writerow([param, repr(float(g)), repr(float(dv)), tag])


def _simulate_reference_measurement(out_path, seed, grid_points):
    layout = datagen.default_layout()
    pc = sensing.PhysicsConstants()
    s = REFERENCE_SCENARIO
    m = sensing.observe_array(s, layout, pc, _grid_cfg(grid_points), seed=seed)
    sensing.write_measurements(out_path, m, layout, {
        "seed": seed,
        "winds": [s.u, s.v],
        "grid_points": grid_points,
        "physics": {"specific_activity": pc.specific_activity, "attenuation": pc.attenuation},
        "scenario": {"x_c": s.x_c, "y_c": s.y_c, "m_c": s.m_c, "u": s.u, "v": s.v,
                     "k_x": s.k_x, "k_y": s.k_y, "t_obs": s.t_obs},
    })
    return m, layout, pc


def cmd_reproduce_reference(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    models_dir = Path(args.models_dir)
    s = REFERENCE_SCENARIO
    truth = np.array([s.x_c, s.y_c, s.m_c])
    grid_cfg = _grid_cfg(args.grid_points)

    models = {}
    missing = [name for name, fn in MODEL_FILES.items() if not (models_dir / fn).exists()]
    if missing and not args.train:
        raise ConfigError(
            f"missing model files {missing} in {models_dir}; train them first, e.g. "
            f"`plumeloc train --model {missing[0]} --data data.csv --out "
            f"{models_dir / MODEL_FILES[missing[0]]}`, or rerun with --train")
    if missing:
        print(f"training {missing} on {args.count} fresh rows (seed {args.seed})")
        dataset = _generate_and_save(args.count, args.seed, args.grid_points,
                                     out_dir / "training_data.csv")
        for name in missing:
            model = _train_one(name, dataset, DESK_EPOCHS[name], 128, 1e-3, args.seed)
            _save_any_model(models_dir / MODEL_FILES[name], model)
    for name, fn in MODEL_FILES.items():
        models[name] = _load_any_model(models_dir / fn)

    # 1. Simulated observation of the reference release.
    m, layout, pc = _simulate_reference_measurement(out_dir / "measurements.csv",
                                                    args.seed, args.grid_points)
    features = datagen.make_features(m, s.u, s.v)

    # 2. Deterministic point predictions.
    reg_pred = nn.predict(models["regression"], features)[0]
    cls_probs = nn.predict(models["classification"], features)[0]
    cls_loc = nn.decode_location(cls_probs[None])[0]
    _write_probs(out_dir / "classification_probs.csv", (cls_probs[0], cls_probs[1]))

    # 3. BNN posterior sample sets (timed).
    t0 = time.perf_counter()
    epi = bnn_mod.epistemic_density(models["bnn"], features, args.samples, args.seed)
    t_epi = time.perf_counter() - t0
    t0 = time.perf_counter()
    comb = bnn_mod.combined_density(models["bnn"], s, layout, pc, args.samples,
                                    args.seed, grid_cfg=grid_cfg)
    t_comb = time.perf_counter() - t0
    bnn_mod.write_samples(out_dir / "bnn_epistemic.csv", epi,
                          {"seed": args.seed, "mode": "epistemic"})
    bnn_mod.write_samples(out_dir / "bnn_combined.csv", comb,
                          {"seed": args.seed, "mode": "combined"})

    # 4. DRAM baseline (timed, including its grid-search initialization).
    problem = dram.InferenceProblem(
        observations=np.asarray(m.counts, dtype=float), detectors=layout, pc=pc,
        u=s.u, v=s.v, grid_cfg=grid_cfg)
    cfg = dram.DramConfig(iterations=args.dram_iterations, burn_in=args.dram_burn_in)
    t0 = time.perf_counter()
    theta0, info = dram.grid_search_init(problem)
    chain = dram.dram_run(problem, cfg, np.random.default_rng(args.seed), theta0=theta0,
                          sigma2_init=max(info["ss_min"] / problem.n_obs, 1e-12))
    t_dram = time.perf_counter() - t0
    dram.write_chain(out_dir / "chain.csv", chain,
                     {"seed": args.seed, "grid_points": args.grid_points})
    dram_summary = dram.burn_and_summarize(chain)

    # 5. Comparison report.
    sources = {
        "dram": chain.thetas[cfg.burn_in:],
        "bnn-combined": comb.samples,
        "bnn-epistemic": epi.samples,
    }
    timings = {"dram": t_dram, "bnn-combined": t_comb, "bnn-epistemic": t_epi}
    report = density.compare(sources, truth, timings=timings)
    report["sources"]["classification"] = _classification_entry(
        (cls_probs[0], cls_probs[1]), truth)
    report["reference_scenario"] = {"x_c": s.x_c, "y_c": s.y_c, "m_c": s.m_c,
                                    "u": s.u, "v": s.v}
    report["regression_prediction"] = [float(v) for v in reg_pred]
    report["classification_expectation"] = [float(v) for v in cls_loc]
    report["dram_summary"] = dram_summary
    report["seed"] = args.seed
    write_json(out_dir / "report.json", report)
    _write_plot_csvs(out_dir / "plots", sources, (cls_probs[0], cls_probs[1]))

    print(f"regression prediction: {np.round(reg_pred, 2).tolist()}")
    print(f"classification expectation: {np.round(cls_loc, 2).tolist()}")
    means = {k: round(v['mean'], 2) for k, v in dram_summary['parameters'].items()}
    print(f"dram means: {means} ({t_dram:.1f} s)")
    print(f"bnn densities: epistemic {t_epi:.1f} s, combined {t_comb:.1f} s")
    print(f"report -> {out_dir / 'report.json'}")
    return 0


def cmd_pipeline(args) -> int:
    config = read_json(args.config)
    seed = int(config.get("seed", 0))
    out_dir = Path(config.get("out_dir", "pipeline_out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    count = int(config.get("count", datagen.DESK_DATASET_ROWS))
    grid_points = int(config.get("grid_points", transport.DESK_GRID_POINTS))
    produced = []

    def stage(name, fn):
        print(f"[pipeline] {name}")
        try:
            return fn()
        except PlumelocError as exc:
            raise type(exc)(f"stage {name}: {exc}") from exc

    data_path = out_dir / "data.csv"
    dataset = stage("gen-data", lambda: _generate_and_save(count, seed, grid_points, data_path))
    produced += [data_path, out_dir / "data.meta.json"]

    model_cfgs = config.get("models", {name: {} for name in MODEL_FILES})
    models = {}
    for name in MODEL_FILES:
        if name not in model_cfgs:
            continue
        mc = model_cfgs[name]
        path = out_dir / MODEL_FILES[name]
        model = stage(f"train-{name}", lambda n=name, c=mc: _train_one(
            n, dataset,
            int(c.get("epochs", DESK_EPOCHS[n])),
            int(c.get("batch_size", 128)),
            float(c.get("learning_rate", 1e-3)),
            int(c.get("seed", seed))))
        _save_any_model(path, model)
        models[name] = model
        produced.append(path)

    evaluation = {"schema_version": 1, "models": {}}
    _, _, test_ds = datagen.split_dataset(dataset)

    def eval_stage():
        for name, model in models.items():
            if isinstance(model, bnn_mod.VariationalMlpModel):
                evaluation["models"][name] = bnn_mod.evaluate_bnn(model, test_ds, seed=seed)
            else:
                evaluation["models"][name] = nn.evaluate(model, test_ds)
    stage("evaluate", eval_stage)
    eval_path = out_dir / "evaluation.json"
    write_json(eval_path, evaluation)
    produced.append(eval_path)

    ref_cfg = config.get("reference")
    if ref_cfg:
        meas_path = out_dir / "measurements.csv"
        scen = ref_cfg.get("scenario")
        s = (transport.Scenario(**{k: float(v) for k, v in scen.items()})
             if scen else REFERENCE_SCENARIO)
        layout = datagen.default_layout()
        pc = sensing.PhysicsConstants()

        def simulate():
            m = sensing.observe_array(s, layout, pc, _grid_cfg(grid_points), seed=seed)
            sensing.write_measurements(meas_path, m, layout, {
                "seed": seed, "winds": [s.u, s.v], "grid_points": grid_points,
                "scenario": {"x_c": s.x_c, "y_c": s.y_c, "m_c": s.m_c, "u": s.u,
                             "v": s.v, "k_x": s.k_x, "k_y": s.k_y, "t_obs": s.t_obs},
            })
            return m
        m = stage("simulate-reference", simulate)
        produced += [meas_path, out_dir / "measurements.meta.json"]

        dram_cfg = ref_cfg.get("dram")
        if dram_cfg:
            def run_dram():
                problem = dram.InferenceProblem(
                    observations=np.asarray(m.counts, dtype=float), detectors=layout,
                    pc=pc, u=s.u, v=s.v, grid_cfg=_grid_cfg(grid_points))
                cfg = dram.DramConfig(iterations=int(dram_cfg.get("iterations", 20_000)),
                                      burn_in=int(dram_cfg.get("burn_in", 10_000)))
                theta0, info = dram.grid_search_init(problem)
                chain = dram.dram_run(problem, cfg, np.random.default_rng(seed),
                                      theta0=theta0,
                                      sigma2_init=max(info["ss_min"] / problem.n_obs, 1e-12))
                dram.write_chain(out_dir / "chain.csv", chain,
                                 {"seed": seed, "grid_points": grid_points})
            stage("dram", run_dram)
            produced += [out_dir / "chain.csv", out_dir / "chain.meta.json"]

        infer_cfg = ref_cfg.get("infer")
        if infer_cfg and "bnn" in models:
            def run_infer():
                n_samples = int(infer_cfg.get("samples", 10_000))
                mode = infer_cfg.get("mode", "combined")
                if mode == "combined":
                    ss = bnn_mod.combined_density(models["bnn"], s, layout, pc,
                                                  n_samples, seed,
                                                  grid_cfg=_grid_cfg(grid_points))
                else:
                    features = datagen.make_features(m, s.u, s.v)
                    ss = bnn_mod.epistemic_density(models["bnn"], features, n_samples, seed)
                bnn_mod.write_samples(out_dir / "samples.csv", ss,
                                      {"seed": seed, "mode": mode})
            stage("infer", run_infer)
            produced += [out_dir / "samples.csv", out_dir / "samples.meta.json"]

    manifest = {
        "format_version": 1,
        "config_hash": config_hash(config),
        "seed": seed,
        "files": {p.name: sha256_file(p) for p in sorted(set(produced)) if p.exists()},
    }
    write_json(out_dir / "manifest.json", manifest)
    print(f"manifest -> {out_dir / 'manifest.json'} ({len(manifest['files'])} files)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
