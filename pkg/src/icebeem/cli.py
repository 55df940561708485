"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
or a failed architecture check.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .ebm import IceBeemModel, build_model
from .errors import ArchitectureError, ConfigError, NumericalError
from .estimator import CdsmConfig, CfceConfig, train_cdsm, train_cfce
from .experiments import config_from_dict, load_config, run_experiment
from .idevel import mcc_strong, mcc_weak
from .imcagen import ImcaConfig, generate_dataset, read_dataset_csv, write_dataset_csv
from .netcore import MlpSpec, check_submatrix_invertibility, forward, jacobian_rank_probe, layer_ranks
from .numerics import make_rng
from .serialize import load_any, load_model, save_model, save_net

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _cmd_generate(args) -> int:
    cfg = ImcaConfig(
        d=args.d,
        M=args.M,
        n_per_segment=args.n,
        mixing_layers=args.L,
        mode=args.mode,
        seed=args.seed,
        covariance_form=args.covariance_form,
    )
    data, gt = generate_dataset(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(out / "data.csv", data.X, data.Y, "x")
    write_dataset_csv(out / "latents.csv", gt.Z, gt.Y, "z")
    save_net(out / "mixing.iceb", gt.mixing)
    (out / "generation.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(data)} rows to {out / 'data.csv'}")
    return EXIT_OK


def _cmd_train(args) -> int:
    data = read_dataset_csv(args.data)
    hidden = tuple(args.hidden)
    d_z = args.d_z or data.d
    spec = MlpSpec((data.d, *hidden, d_z), leaky_slope=args.leaky_slope, seed=args.seed, unchecked=True)
    g_init = "ones" if args.unconditional else args.g_init
    model = build_model(spec, data.n_segments, args.mode, make_rng(args.seed, 1), g_init=g_init)
    if args.objective == "cdsm":
        lr = args.lr if args.lr is not None else 1e-3
        cfg = CdsmConfig(
            args.sigma, args.batch_size, args.iterations, lr, args.seed,
            freeze_g=args.unconditional, antithetic=args.antithetic,
        )
        trained, history = train_cdsm(model, data, cfg)
    else:
        lr = args.lr if args.lr is not None else 3e-4
        cfg = CfceConfig(args.batch_size, args.iterations, lr, args.seed, freeze_g=args.unconditional)
        trained, history, _ = train_cfce(model, data, cfg)
    save_model(args.out, trained)
    tail = float(np.mean(history[-100:])) if history.size else float("nan")
    print(json.dumps({"model": str(args.out), "iterations": int(history.size), "final_loss": tail}))
    return EXIT_OK


def _read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    M = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return M[:, :-1] if header[-1] == "y" else M


def _cmd_eval_mcc(args) -> int:
    A = _read_matrix(args.a)
    B = _read_matrix(args.b)
    if args.model:
        A = forward(load_model(args.model).f, A).output
    report = mcc_weak(A, B, seed=args.seed) if args.kind == "weak" else mcc_strong(A, B)
    print(report.to_json())
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        cfg = config_from_dict({**cfg.to_dict(), **overrides})
    report = run_experiment(cfg, args.output_dir)
    summary = {k: v for k, v in report["metrics"]["summary"].items() if not k.endswith("_matrix")}
    print(json.dumps({"report": report["path"], "summary": summary}, indent=2))
    return EXIT_OK


def check_architecture(net, n_points: int = 100, seed: int = 0, rel_tol: float = 1e-10) -> tuple[bool, list]:
    """Rank checks for every layer, the input Jacobian and expanding-layer submatrices."""
    lines = []
    ok = True
    spec = net.spec
    lines.append(f"widths {list(spec.dims)}")
    if not spec.is_monotone():
        lines.append("note: widths are not monotone; the submatrix condition is checked on expanding layers only")
    for idx, rank, full in layer_ranks(net, rel_tol):
        status = "ok" if rank == full else "RANK DEFICIENT"
        if rank != full:
            ok = False
        lines.append(f"layer {idx}: shape {tuple(net.weights[idx].shape)} rank {rank}/{full} {status}")
    probe = jacobian_rank_probe(net, n_points, make_rng(seed, 11), rel_tol)
    jac_ok = probe.min_rank == probe.full_rank
    ok &= jac_ok
    lines.append(
        f"input Jacobian over {n_points} points: min rank {probe.min_rank}/{probe.full_rank}, "
        f"min singular value {probe.min_sigma:.3e} {'ok' if jac_ok else 'RANK DEFICIENT'}"
    )
    for rep in check_submatrix_invertibility(net, 1000, make_rng(seed, 12), rel_tol):
        kind = "all" if rep.exhaustive else "sampled"
        status = "ok" if not rep.failures else f"SINGULAR rows {rep.failures[:3]}"
        if rep.failures:
            ok = False
        lines.append(
            f"layer {rep.layer}: {kind} {rep.n_checked} square row-submatrices, min singular value {rep.min_sigma:.3e} {status}"
        )
    return ok, lines


def _cmd_check_arch(args) -> int:
    obj = load_any(args.model)
    net = obj.f if isinstance(obj, IceBeemModel) else obj
    ok, lines = check_architecture(net, args.points, args.seed)
    print("\n".join(lines))
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="icebeem", description="Identifiable conditional energy-based models on synthetic data.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic ICA/IMCA dataset")
    g.add_argument("--mode", choices=("ica", "imca"), default="imca")
    g.add_argument("--d", type=int, default=5)
    g.add_argument("--M", type=int, default=8)
    g.add_argument("--n", type=int, default=2000, help="rows per segment")
    g.add_argument("--L", type=int, default=2, help="mixing layers")
    g.add_argument("--covariance-form", choices=("main", "appendix"), default="main")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=".")
    g.set_defaults(func=_cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset CSV")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=("plain", "augmented"), default="augmented")
    t.add_argument("--objective", choices=("cdsm", "cfce"), default="cdsm")
    t.add_argument("--hidden", type=int, nargs="*", default=[32, 32])
    t.add_argument("--d-z", type=int, default=None)
    t.add_argument("--leaky-slope", type=float, default=0.1)
    t.add_argument("--g-init", choices=("ones", "normal", "zeros"), default="ones")
    t.add_argument("--unconditional", action="store_true", help="freeze g at ones")
    t.add_argument("--iterations", type=int, default=5000)
    t.add_argument("--batch-size", type=int, default=63)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--sigma", type=float, default=0.01)
    t.add_argument("--antithetic", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval-mcc", help="MCC between two CSV matrices")
    e.add_argument("a", help="CSV with a header row; a trailing 'y' column is ignored")
    e.add_argument("b")
    e.add_argument("--kind", choices=("strong", "weak"), default="weak")
    e.add_argument("--model", help="apply this model's f to the rows of A first")
    e.add_argument("--seed", type=int, default=0, help="row shuffle for the weak split")
    e.set_defaults(func=_cmd_eval_mcc)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--output-dir", default=None)
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--seed", type=int, default=None, help="override the master seed")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("check-arch", help="rank checks on a saved network or model")
    c.add_argument("model")
    c.add_argument("--points", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_cmd_check_arch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ArchitectureError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
