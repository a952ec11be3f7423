"""Command-line driver for the train / sample / adapt / ais / density /
inpaint / interpolate / baseline-compare workflows.

Every command is deterministic given (config, seed): CSV and JSON artifacts
are byte-identical across reruns.  Exit codes: 0 success, 1 usage error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import generation, metrics, parallel, partition, trainer
from .config import ConfigError, RunConfig, load_config, save_config
from .datasets import make_dataset
from .energy import MlpEnergy, init_energy_params, load_checkpoint, save_checkpoint
from .samplers import AdaptResult, SamplerConfig, adapt_step_size
from .schedule import Standardization, derive_rng, make_schedule

__all__ = ["cli_main", "main"]

COMMANDS = (
    "train",
    "sample",
    "adapt-step",
    "longrun",
    "ais",
    "bpd",
    "density",
    "inpaint",
    "interpolate",
    "baseline-compare",
)


def _write_csv(path, header: str, rows):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row))
            fh.write("\n")


def _write_json(path, obj):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_model(checkpoint_path):
    params, schedule, std = load_checkpoint(checkpoint_path)
    model = MlpEnergy(params, n_levels=schedule.T)
    return model, schedule, std if std is not None else Standardization.identity(params.d)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _samples_to_csv(path, X):
    _write_csv(path, ",".join(f"x{i}" for i in range(X.shape[1])), X)


def _eval_fn(dataset, schedule, sampler_cfg, cfg: RunConfig):
    def fn(model):
        rng = derive_rng(cfg.seed, 777)
        z = generation.progressive_sample(model, schedule, sampler_cfg, cfg.eval_samples, rng)
        x = dataset.standardization.invert(z)
        return metrics.grid_kl(x, dataset).kl

    return fn


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _outdir(args)
    parallel.set_max_threads(args.threads if args.threads is not None else cfg.threads)
    save_config(cfg, out / "config.txt")
    dataset = make_dataset(cfg.dataset)
    schedule = cfg.schedule()
    sampler_cfg = cfg.sampler_config()
    train_cfg = cfg.train_config(checkpoint_path=str(out / "checkpoint.drl"))
    model = MlpEnergy(
        init_energy_params(
            d=dataset.d,
            hidden_width=cfg.hidden_width,
            n_hidden=cfg.n_hidden,
            temb_dim=cfg.temb_dim,
            rng=derive_rng(cfg.seed, 1),
        ),
        n_levels=schedule.T,
    )
    eval_fn = _eval_fn(dataset, schedule, sampler_cfg, cfg) if cfg.eval_every else None
    model, log = trainer.train(
        dataset, schedule, train_cfg, sampler_cfg, rng=derive_rng(cfg.seed), model=model, eval_fn=eval_fn
    )
    with open(out / "train_log.ndjson", "w", encoding="ascii", newline="\n") as fh:
        for record in log:
            json.dump(record, fh, sort_keys=True)
            fh.write("\n")
    save_checkpoint(model.params, schedule, out / "checkpoint.drl", standardization=dataset.standardization)
    print(f"trained {cfg.objective} model: {out / 'checkpoint.drl'}")
    return 0


def cmd_sample(args) -> int:
    model, schedule, std = _load_model(args.checkpoint)
    out = _outdir(args)
    cfg = SamplerConfig(K=args.K, b=args.b)
    rng = derive_rng(args.seed)
    if args.trace:
        z, trace = generation.progressive_sample(model, schedule, cfg, args.n, rng, trace=True)
        for i, snap in enumerate(trace.snapshots):
            _samples_to_csv(out / f"trace_level{schedule.T - i}.csv", snap)
    else:
        z = generation.progressive_sample(model, schedule, cfg, args.n, rng)
    _samples_to_csv(out / "samples.csv", std.invert(z))
    print(f"wrote {args.n} samples to {out / 'samples.csv'}")
    return 0


def cmd_adapt_step(args) -> int:
    model, schedule, _ = _load_model(args.checkpoint)
    out = _outdir(args)
    cfg = SamplerConfig(adapt_chains=args.chains, adapt_steps=args.steps)
    result = adapt_step_size(model, schedule, cfg, derive_rng(args.seed))
    _write_csv(
        out / "stepsize.csv",
        "level,step_size,acceptance",
        [(t, result.step_sizes[t], result.acceptance[t]) for t in range(schedule.T)],
    )
    print(f"wrote {out / 'stepsize.csv'}")
    return 0


def _read_stepsizes(path, T):
    eps = np.zeros(T)
    with open(path, "r", encoding="ascii") as fh:
        next(fh)
        for line in fh:
            level, step, _ = line.strip().split(",")
            eps[int(level)] = float(step)
    return eps


def cmd_longrun(args) -> int:
    model, schedule, std = _load_model(args.checkpoint)
    out = _outdir(args)
    eps = _read_stepsizes(args.stepsizes, schedule.T)
    x, diag = generation.long_run_chain(
        model, schedule, eps, args.sampler, args.steps_per_level, args.n, derive_rng(args.seed)
    )
    _samples_to_csv(out / "samples_longrun.csv", std.invert(x))
    _write_csv(
        out / "longrun_diag.csv",
        "level,acceptance,low_acceptance_warning",
        [
            (t, diag.acceptance[t], int(any(w[0] == t for w in diag.warnings)))
            for t in range(schedule.T)
        ],
    )
    print(f"wrote {out / 'samples_longrun.csv'} ({diag.sampler}, {args.steps_per_level} steps/level)")
    return 0


def _ais_spec(args, model, schedule, rng) -> partition.AisSamplerSpec:
    step_sizes = None
    if args.sampler == "hmc" and args.steps_per_level > 1:
        if args.stepsizes:
            step_sizes = _read_stepsizes(args.stepsizes, schedule.T)
        else:
            step_sizes = adapt_step_size(model, schedule, SamplerConfig(), rng).step_sizes
    return partition.AisSamplerSpec(
        kind=args.sampler, steps_per_level=args.steps_per_level, step_sizes=step_sizes
    )


def cmd_ais(args) -> int:
    model, schedule, _ = _load_model(args.checkpoint)
    out = _outdir(args)
    rng = derive_rng(args.seed)
    spec = _ais_spec(args, model, schedule, rng)
    est = partition.estimate_log_z0(model, schedule, spec, args.M, rng)
    _write_csv(
        out / "ais_curve.csv",
        "samples_used,log_z0_estimate,steps_per_level",
        [(m, v, est.steps_per_level) for m, v in est.curve],
    )
    _write_json(
        out / "report.json",
        {
            "log_z0": est.log_z0,
            "log_z_T": est.log_z_T,
            "M": est.M,
            "sampler": est.sampler,
            "steps_per_level": est.steps_per_level,
        },
    )
    print(f"log_z0 = {est.log_z0:.6f} (M = {est.M}); wrote {out / 'ais_curve.csv'}")
    return 0


def cmd_bpd(args) -> int:
    cfg = load_config(args.config)
    model, schedule, std = _load_model(args.checkpoint)
    out = _outdir(args)
    rng = derive_rng(args.seed)
    if args.log_z0 is not None:
        log_z0 = args.log_z0
    else:
        spec = _ais_spec(args, model, schedule, rng)
        log_z0 = partition.estimate_log_z0(model, schedule, spec, args.M, rng).log_z0
    dataset = make_dataset(cfg.dataset)
    test = dataset.sample(args.n_test, derive_rng(args.seed, 99))
    bpd = partition.bits_per_dim(test, model, schedule, log_z0, standardization=std)
    _write_json(
        out / "report.json",
        {"bpd": bpd, "log_z0": log_z0, "M": args.M, "sampler": args.sampler},
    )
    print(f"bpd = {bpd:.4f} (log_z0 = {log_z0:.4f}); wrote {out / 'report.json'}")
    return 0


def cmd_density(args) -> int:
    model, schedule, _ = _load_model(args.checkpoint)
    out = _outdir(args)
    box = [float(v) for v in args.box.split(",")]
    if len(box) != 4:
        raise ConfigError(f"--box needs 4 comma-separated numbers, got {args.box!r}")
    metrics.render_density(
        model, schedule, args.level, np.array(box).reshape(2, 2), args.grid,
        out / f"density_t{args.level}.pgm",
    )
    print(f"wrote {out / f'density_t{args.level}.pgm'} and .csv")
    return 0


def cmd_inpaint(args) -> int:
    model, schedule, std = _load_model(args.checkpoint)
    out = _outdir(args)
    x_obs = np.zeros(model.d)
    mask = np.zeros(model.d, dtype=bool)
    for token in args.fix:
        idx, _, val = token.partition("=")
        try:
            i = int(idx)
            x_obs[i] = float(val)
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad --fix token {token!r}; expected INDEX=VALUE") from exc
        mask[i] = True
    cfg = SamplerConfig(K=args.K, b=args.b)
    completions = generation.inpaint_batch(
        model, schedule, cfg, std.apply(x_obs), mask, args.n, derive_rng(args.seed)
    )
    _samples_to_csv(out / "inpaint.csv", std.invert(completions))
    print(f"wrote {args.n} completions to {out / 'inpaint.csv'}")
    return 0


def cmd_interpolate(args) -> int:
    model, schedule, std = _load_model(args.checkpoint)
    out = _outdir(args)
    cfg = SamplerConfig(K=args.K, b=args.b)
    path = generation.interpolate(model, schedule, cfg, args.seed_a, args.seed_b, args.points)
    lam = np.linspace(0.0, 1.0, args.points)
    X = std.invert(path)
    _write_csv(
        out / "interpolate.csv",
        "lam," + ",".join(f"x{i}" for i in range(X.shape[1])),
        [(float(l), *row) for l, row in zip(lam, X)],
    )
    print(f"wrote {out / 'interpolate.csv'}")
    return 0


def cmd_baseline_compare(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _outdir(args)
    parallel.set_max_threads(args.threads if args.threads is not None else cfg.threads)
    dataset = make_dataset(cfg.dataset)

    # Recovery-likelihood run exactly as configured.
    schedule = cfg.schedule()
    sampler_cfg = cfg.sampler_config()
    model, _ = trainer.train(
        dataset, schedule, cfg.train_config(), sampler_cfg, rng=derive_rng(cfg.seed),
        model=MlpEnergy(
            init_energy_params(dataset.d, cfg.hidden_width, cfg.n_hidden, cfg.temb_dim,
                               rng=derive_rng(cfg.seed, 1)),
            n_levels=schedule.T,
        ),
    )
    save_checkpoint(model.params, schedule, out / "checkpoint_recovery.drl", dataset.standardization)

    # Single-level marginal baseline at the same iteration count with the
    # full per-generation sampling budget spent on every update.
    base_K = cfg.baseline_K if cfg.baseline_K > 0 else cfg.T * cfg.K
    base_schedule = make_schedule(1, cfg.baseline_sigma2, cfg.baseline_sigma2)
    base_sampler = SamplerConfig(K=base_K, b=cfg.b, c=np.array([cfg.baseline_c0]))
    base_train = cfg.train_config()
    base_train.objective = "marginal_baseline"
    base_model, _ = trainer.train(
        dataset, base_schedule, base_train, base_sampler, rng=derive_rng(cfg.seed, 2),
        model=MlpEnergy(
            init_energy_params(dataset.d, cfg.hidden_width, cfg.n_hidden, cfg.temb_dim,
                               rng=derive_rng(cfg.seed, 3)),
            n_levels=1,
        ),
    )
    save_checkpoint(base_model.params, base_schedule, out / "checkpoint_baseline.drl", dataset.standardization)

    n_eval = cfg.eval_samples
    rng = derive_rng(cfg.seed, 4)

    def kl_of(x):
        return metrics.grid_kl(dataset.standardization.invert(x), dataset).kl

    kl_rec_short = kl_of(generation.progressive_sample(model, schedule, sampler_cfg, n_eval, rng))
    long_cfg = SamplerConfig(K=10 * cfg.K, b=cfg.b, c=sampler_cfg.c)
    kl_rec_long = kl_of(generation.progressive_sample(model, schedule, long_cfg, n_eval, rng))
    kl_base_short = kl_of(
        generation.short_run_marginal_sample(base_model, base_schedule, base_sampler, n_eval, rng)
    )
    kl_base_long = kl_of(
        generation.short_run_marginal_sample(
            base_model, base_schedule, base_sampler, n_eval, rng, n_steps=10 * base_K
        )
    )
    report = {
        "kl_recovery_short": kl_rec_short,
        "kl_recovery_long": kl_rec_long,
        "kl_baseline_short": kl_base_short,
        "kl_baseline_long": kl_base_long,
        "recovery_below_baseline": kl_rec_short < kl_base_short,
        "recovery_longrun_ratio": kl_rec_long / kl_rec_short,
        "baseline_longrun_ratio": kl_base_long / kl_base_short,
    }
    _write_json(out / "report.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drlebm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=True, seed_default=0):
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", default="out")
        p.add_argument("--seed", type=int, default=seed_default)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="progressive samples from a checkpoint")
    common(p)
    p.add_argument("-n", type=int, default=50000)
    p.add_argument("--K", type=int, default=30)
    p.add_argument("--b", type=float, default=0.1)
    p.add_argument("--trace", action="store_true")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("adapt-step", help="acceptance-targeted HMC step sizes")
    common(p)
    p.add_argument("--chains", type=int, default=1000)
    p.add_argument("--steps", type=int, default=100)
    p.set_defaults(fn=cmd_adapt_step)

    p = sub.add_parser("longrun", help="long-run HMC/NUTS chains per level")
    common(p)
    p.add_argument("--stepsizes", required=True)
    p.add_argument("--sampler", choices=("hmc", "nuts"), default="hmc")
    p.add_argument("--steps-per-level", type=int, default=100)
    p.add_argument("-n", type=int, default=1000)
    p.set_defaults(fn=cmd_longrun)

    p = sub.add_parser("ais", help="estimate log Z_0 by chained importance sampling")
    common(p)
    p.add_argument("--M", type=int, default=100000)
    p.add_argument("--sampler", choices=("hmc", "langevin", "normal_approx"), default="hmc")
    p.add_argument("--steps-per-level", type=int, default=10)
    p.add_argument("--stepsizes", default="")
    p.set_defaults(fn=cmd_ais)

    p = sub.add_parser("bpd", help="bits per dimension on held-out draws")
    common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--M", type=int, default=100000)
    p.add_argument("--sampler", choices=("hmc", "langevin", "normal_approx"), default="hmc")
    p.add_argument("--steps-per-level", type=int, default=10)
    p.add_argument("--stepsizes", default="")
    p.add_argument("--log-z0", type=float, default=None)
    p.add_argument("--n-test", type=int, default=10000)
    p.set_defaults(fn=cmd_bpd)

    p = sub.add_parser("density", help="render exp(f(y, t)) as PGM + CSV")
    common(p)
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--box", default="-2.5,2.5,-2.5,2.5")
    p.set_defaults(fn=cmd_density)

    p = sub.add_parser("inpaint", help="complete free coordinates given fixed ones")
    common(p)
    p.add_argument("--fix", action="append", required=True, metavar="INDEX=VALUE")
    p.add_argument("-n", type=int, default=100)
    p.add_argument("--K", type=int, default=30)
    p.add_argument("--b", type=float, default=0.1)
    p.set_defaults(fn=cmd_inpaint)

    p = sub.add_parser("interpolate", help="noise-space path between two seeds")
    common(p, seed_default=0)
    p.add_argument("--seed-a", type=int, required=True)
    p.add_argument("--seed-b", type=int, required=True)
    p.add_argument("--points", type=int, default=16)
    p.add_argument("--K", type=int, default=30)
    p.add_argument("--b", type=float, default=0.1)
    p.set_defaults(fn=cmd_interpolate)

    p = sub.add_parser("baseline-compare", help="recovery vs single-level marginal baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=cmd_baseline_compare)

    return parser


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed the offending token; report a usage error
        # unless this was --help (exit code 0).
        return 0 if exc.code == 0 else 1
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
