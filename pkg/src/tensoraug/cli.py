"""Command-line entry point.

Exit codes::

    0  success
    1  gradcheck failure or unexpected error
    2  InvalidRank
    3  ParseError (bad tensor container, CSV or checkpoint)
    4  DataError
    5  ConfigError
    6  NumericalError
    7  ShapeError / InvalidArgument
    8  DecompositionError

Errors go to stderr as one line: ``error code=<n> type=<Name> message="<text>"``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import container
from .errors import InvalidArgument, ParseError, TensorAugError

log = logging.getLogger("tensoraug")


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        try:
            return np.load(path, allow_pickle=False).astype(np.float64)
        except (OSError, ValueError) as exc:
            raise ParseError(f"cannot read {path}: {exc}") from None
    try:
        c = container.load(path)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    if c.kind != "tensor" or "data" not in c.arrays:
        raise ParseError(f"{path} holds a {c.kind!r} container, not a tensor")
    return c.arrays["data"]


# -- commands -------------------------------------------------------------------

def cmd_decompose(args) -> int:
    from .decomp import cp_als, hooi, hosvd, reconstruct, tt_svd
    from .tensor import frobenius_norm

    t = read_tensor(args.input)
    if args.kind == "tucker":
        if not args.ranks:
            raise InvalidArgument("--ranks is required for tucker")
        f = hooi(t, args.ranks) if args.method == "hooi" else hosvd(t, args.ranks)
        ranks = f.ranks
    elif args.kind == "cp":
        if not args.ranks or len(args.ranks) != 1:
            raise InvalidArgument("--ranks takes a single CP rank")
        f = cp_als(t, args.ranks[0], max_iter=args.max_iter or 500, tol=args.tol or 1e-8, seed=args.seed)
        ranks = (f.rank,)
    else:
        max_ranks = None
        if args.ranks:
            max_ranks = args.ranks[0] if len(args.ranks) == 1 else args.ranks
        f = tt_svd(t, max_ranks=max_ranks, eps=args.eps)
        ranks = f.ranks
    norm = frobenius_norm(t)
    err = frobenius_norm(t - reconstruct(f)) / norm if norm > 0 else frobenius_norm(reconstruct(f))
    ratio = f.n_stored() / t.size
    out = args.output or f"{args.input}.{args.kind}.taug"
    container.save(out, container.pack_factors(f))
    if args.report:
        print("kind,ranks,rel_error,compression_ratio")
        print(f"{args.kind},{'x'.join(str(r) for r in ranks)},{err:.6e},{ratio:.6f}")
    return 0


def cmd_synth_tensor(args) -> int:
    from .decomp import CPFactors, TuckerFactors, reconstruct

    rng = np.random.default_rng(args.seed)
    shape = args.shape
    if args.kind == "random":
        t = rng.standard_normal(shape)
    elif args.kind == "cp":
        loadings = [rng.standard_normal((d, args.rank)) for d in shape]
        t = reconstruct(CPFactors(np.ones(args.rank), loadings))
    else:
        ranks = args.ranks or (args.rank,) * len(shape)
        loadings = [np.linalg.qr(rng.standard_normal((d, r)))[0] for d, r in zip(shape, ranks)]
        t = reconstruct(TuckerFactors(rng.standard_normal(ranks), loadings))
    container.save(args.output, container.pack_tensor(t))
    return 0


def cmd_synth_data(args) -> int:
    from .data import synthetic_ett, write_csv

    write_csv(args.output, synthetic_ett(args.rows, args.seed))
    return 0


def _run_one(run, ds, model, out_dir, name):
    from dataclasses import replace

    from .experiments import save_checkpoint
    from .training import train

    params, report = train(replace(run.train, model=model), ds)
    for line in report.lines():
        print(f"[{name}] {line}")
    save_checkpoint(out_dir / f"{name}.taug", params, model, run, report)
    report.to_csv(out_dir / f"{name}_report.csv")
    return params, report


def cmd_train(args) -> int:
    from .config import load_config
    from .experiments import control_config, load_dataset

    run = load_config(args.config)
    ds = load_dataset(run.data, run.model.seq_len)
    out_dir = Path(args.output_dir or run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _run_one(run, ds, run.model, out_dir, "model")
    if run.with_control or args.with_control:
        _run_one(run, ds, control_config(run.model), out_dir, "control")
    return 0


def cmd_eval(args) -> int:
    from .experiments import (TABLE_HEADER, eval_rows, load_checkpoint, load_dataset, model_label,
                              persistence_scores, table_row)

    ckpt = Path(args.checkpoint)
    params, model, data, _ = load_checkpoint(ckpt)
    ds = load_dataset(data, model.seq_len)
    rows = [(model, params)]
    if args.with_control:
        control_path = ckpt.with_name("control.taug")
        if not control_path.exists():
            raise ParseError(f"no control checkpoint next to {ckpt}")
        c_params, c_model, _, _ = load_checkpoint(control_path)
        rows.append((c_model, c_params))
    print(TABLE_HEADER)
    for m, p in rows:
        mse_v, mae_v = eval_rows(p, m, ds, args.split)
        print(table_row(ds.name, m, model_label(m), mse_v, mae_v))
    if args.with_persistence:
        mse_v, mae_v = persistence_scores(ds, model, args.split)
        print(table_row(ds.name, model, "Persistence", mse_v, mae_v))
    return 0


def cmd_gradcheck(args) -> int:
    from .config import load_config
    from .experiments import load_dataset
    from .model import init_params
    from .training import gradcheck, split_arrays

    run = load_config(args.config)
    gc = run.gradcheck
    ds = load_dataset(run.data, run.model.seq_len)
    arrays = split_arrays(ds.train, run.model)
    batch = tuple(a[: gc["batch"]] for a in arrays)
    params = init_params(run.model)
    results = gradcheck(params, batch, run.model, step=gc["step"], rtol=gc["rtol"], floor=gc["floor"])
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status} {r.name} size={r.size} max_rel_error={r.max_rel_error:.3e}")
    print(f"gradcheck: {len(results) - failed}/{len(results)} parameters passed (rtol={gc['rtol']})")
    return 1 if failed else 0


def cmd_bench(args) -> int:
    from .config import load_config
    from .experiments import bench_attention

    run = load_config(args.config)
    b = run.bench
    res = bench_attention(run.model, batch=b["batch"], repeats=b["repeats"], seed=b["seed"])
    print("attention,counted_flops,closed_form_flops,compression_flops,seconds,score_shape")
    full_shape = "x".join(map(str, res["full_score_shapes"][0]))
    core_shape = "x".join(map(str, res["core_score_shapes"][0]))
    print(f"full,{res['full_counted']},{res['full_closed_form']},0,{res['full_seconds']:.6f},{full_shape}")
    print(f"core,{res['core_counted']},{res['core_closed_form']},{res['compression_counted']},"
          f"{res['core_seconds']:.6f},{core_shape}")
    ok = res["core_counted"] == res["core_closed_form"] and res["full_counted"] == res["full_closed_form"]
    print(f"summary: core/full = {res['core_counted'] / res['full_counted']:.6f}, "
          f"counter matches closed form: {ok}")
    return 0 if ok else 1


# -- wiring -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensoraug", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="Tucker/CP/TT factorization of a tensor file")
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=("tucker", "cp", "tt"), required=True)
    p.add_argument("--ranks", type=_ints, default=())
    p.add_argument("--method", choices=("hosvd", "hooi"), default="hosvd")
    p.add_argument("--eps", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--output")
    p.add_argument("--report", action="store_true")
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("synth-tensor", help="write a random or low-rank tensor container")
    p.add_argument("--kind", choices=("random", "cp", "tucker"), default="random")
    p.add_argument("--shape", type=_ints, required=True)
    p.add_argument("--rank", type=int, default=1)
    p.add_argument("--ranks", type=_ints)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_synth_tensor)

    p = sub.add_parser("synth-data", help="write a synthetic CSV with the ETTh1 column layout")
    p.add_argument("--rows", type=int, default=1500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train the forecaster (and optionally the plain control)")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--with-control", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="MSE/MAE of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--with-control", action="store_true")
    p.add_argument("--with-persistence", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench", help="counted FLOPs and wall time: core vs full attention")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except TensorAugError as exc:
        _report(exc, exc.exit_code)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort single-line report
        if os.environ.get("TENSORAUG_TRACEBACK"):
            raise
        _report(exc, 1)
        return 1


def _report(exc, code):
    print(f"error code={code} type={type(exc).__name__} message={json.dumps(str(exc))}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
