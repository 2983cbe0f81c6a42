"""Command-line entry points: train, eval, sysid, worker, coordinator, inspect."""

from __future__ import annotations

import argparse
import multiprocessing as mp
import os
import socket
import sys

import numpy as np

from .config import RunConfig, load_config
from .errors import PushrlError, ConfigError
from .model import load_params, params_from_dict, save_params


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.dist.base_seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.dist.workers = args.workers
    return cfg


def _worker_entry(config_path: str, seed, workers, worker_id: int, endpoint: str) -> None:
    from .runtime import run_worker

    cfg = load_config(config_path)
    if seed is not None:
        cfg.dist.base_seed = seed
    if workers is not None:
        cfg.dist.workers = workers
    code = run_worker(endpoint, cfg, worker_id)
    sys.exit(code)


def cmd_train(args) -> int:
    from .runtime import accept_workers, make_local_channels, parse_endpoint, run_coordinator, train_serial

    cfg = _load_cfg(args)
    out = args.out
    os.makedirs(out, exist_ok=True)

    if args.serial:
        from .policy import save_policy

        pol, rows = train_serial(cfg, progress=not args.quiet)
        with open(os.path.join(out, "learning_curve.csv"), "w") as fh:
            fh.write("iteration,mean_return,grad_norm,gFg,step_norm,eval_distance,wall_clock\n")
            for r in rows:
                fh.write(
                    f"{r.iteration},{r.mean_return!r},{r.grad_norm!r},{r.gFg!r},{r.step_norm!r},nan,0.000\n"
                )
        save_policy(pol, os.path.join(out, f"policy_{cfg.dist.iterations}.json"), {"iteration": cfg.dist.iterations})
        return 0

    if args.remote:
        run_coordinator(cfg, out, listen=args.remote, progress=not args.quiet)
        return 0

    if args.in_process:
        run_coordinator(cfg, out, channels=make_local_channels(cfg), progress=not args.quiet)
        return 0

    # default: spawn local worker processes over loopback TCP
    host, port = parse_endpoint(cfg.dist.listen)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(cfg.dist.workers)
    endpoint = f"{host}:{server.getsockname()[1]}"
    ctx = mp.get_context("spawn")
    procs = [
        ctx.Process(target=_worker_entry, args=(args.config, args.seed, args.workers, w, endpoint), daemon=True)
        for w in range(cfg.dist.workers)
    ]
    for p in procs:
        p.start()
    try:
        channels = accept_workers(server, cfg)
        run_coordinator(cfg, out, channels=channels, progress=not args.quiet)
    finally:
        server.close()
        for p in procs:
            p.join(timeout=10)
            if p.is_alive():
                p.terminate()
    return 0


def cmd_eval(args) -> int:
    from .env import EnvConfig
    from .evaluation import evaluate, write_eval_csv
    from .policy import load_policy

    pol, _doc = load_policy(args.checkpoint)
    if args.config:
        cfg = _load_cfg(args)
        model, env_cfg = cfg.model, cfg.env
    else:
        from .model import ModelParams

        model, env_cfg = ModelParams(), EnvConfig()
    if args.model:
        model = load_params(args.model, base=model)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    res = evaluate(pol, model, args.rollouts, rng, env_cfg, mean_action=args.mean_action)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"eval_{args.name}.csv")
    write_eval_csv(res, path, env_cfg.dt * env_cfg.substeps)
    print(f"mean distance over {res.rollout_count} rollouts: {res.mean_distance:.6f} m")
    if res.failed_rollouts:
        print(f"failed rollouts (lost object/state blow-up): {res.failed_rollouts}")
    print(f"wrote {path}")
    return 0


def cmd_sysid(args) -> int:
    from .sysid import (
        SysIdProblem,
        gauss_newton,
        load_run_csv,
        make_proxy_run,
        save_run_csv,
        write_fit_report,
    )

    if args.make_proxy:
        base = load_config(args.config).model if args.config else None
        from .model import ModelParams

        hidden = base if base is not None else ModelParams()
        if args.hidden:
            overrides = {}
            for spec_kv in args.hidden:
                k, _, v = spec_kv.partition("=")
                if not v:
                    raise ConfigError(f"--hidden expects key=value, got {spec_kv!r}")
                overrides[k.strip()] = float(v)
            hidden = params_from_dict(overrides, base=hidden)
        run = make_proxy_run(hidden, duration=args.duration, dt=args.dt, noise_std=args.noise, seed=args.seed or 0)
        save_run_csv(run, args.make_proxy)
        print(f"wrote proxy run ({run.n} samples at dt={run.dt}) to {args.make_proxy}")
        return 0

    if not args.run:
        raise ConfigError("sysid requires --run CSV (or --make-proxy to generate one)")
    run = load_run_csv(args.run)
    base = load_config(args.config).model if args.config else None
    if base is None:
        from .model import ModelParams

        base = ModelParams()
    if args.init:
        base = load_params(args.init, base=base)
    free = tuple(s.strip() for s in args.free.split(",") if s.strip())
    problem = SysIdProblem(free=free, p0=base, w_tau=args.w_tau, w_s=args.w_s)
    res = gauss_newton(problem, run, verbose=not args.quiet)
    os.makedirs(args.out, exist_ok=True)
    save_params(res.params, os.path.join(args.out, "fitted_params.txt"))
    write_fit_report(res, problem, run, os.path.join(args.out, "fit_report.txt"))
    print(f"final cost {res.cost:.6e} after {res.iterations} iterations")
    for nm in free:
        flag = " (non-identifiable)" if nm in res.non_identifiable else ""
        print(f"  {nm}: {res.fitted[nm]:.6g}{flag}")
    print(f"wrote {args.out}/fitted_params.txt and fit_report.txt")
    return 0


def cmd_worker(args) -> int:
    from .runtime import run_worker

    cfg = _load_cfg(args)
    return run_worker(args.connect, cfg, args.id)


def cmd_coordinator(args) -> int:
    from .runtime import run_coordinator

    cfg = _load_cfg(args)
    run_coordinator(cfg, args.out, listen=args.listen, progress=not args.quiet)
    return 0


def cmd_inspect(args) -> int:
    from .evaluation import dump_policy_weights
    from .policy import load_policy

    pol, doc = load_policy(args.checkpoint)
    out = args.out or "weights.csv"
    dump_policy_weights(pol, out)
    print(f"policy: {pol.action_dim} actions x {pol.obs_dim} observations, iteration {doc.get('iteration', '?')}")
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pushrl", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a pushing policy")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override [distributed] base_seed")
    p.add_argument("--out", default="out")
    p.add_argument("--workers", type=int, default=None, help="override [distributed] workers")
    p.add_argument("--remote", metavar="HOST:PORT", default=None,
                   help="listen here and wait for externally started workers")
    p.add_argument("--in-process", action="store_true", help="sequential in-process workers (no sockets)")
    p.add_argument("--serial", action="store_true", help="single-process reference trainer")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="spiral-tracking evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--model", default=None, help="model params file overriding the eval model")
    p.add_argument("--rollouts", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--name", default="run")
    p.add_argument("--mean-action", action="store_true")
    p.add_argument("--workers", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sysid", help="system identification on a recorded run")
    p.add_argument("--run", default=None, help="recorded run CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--init", default=None, help="model params file with the initial guess")
    p.add_argument("--free", default="object_mass", help="comma-separated free parameter names")
    p.add_argument("--w-tau", type=float, default=1.0)
    p.add_argument("--w-s", type=float, default=1e4)
    p.add_argument("--out", default="out")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--make-proxy", metavar="PATH", default=None, help="generate a hidden-parameter proxy run CSV")
    p.add_argument("--hidden", action="append", default=None, metavar="KEY=VALUE")
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--dt", type=float, default=0.002)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_sysid)

    p = sub.add_parser("worker", help="run a rollout worker")
    p.add_argument("--connect", required=True, metavar="HOST:PORT")
    p.add_argument("--config", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_worker)

    p = sub.add_parser("coordinator", help="run the training coordinator")
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_coordinator)

    p = sub.add_parser("inspect", help="dump policy weights as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_inspect)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except PushrlError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
