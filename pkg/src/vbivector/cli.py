"""Command-line front end: synth, acc-stats, train, extract, lb-report.

Exit status is 0 on success, 1 for usage errors and 2 for data or numeric
errors.  Every output file is written atomically.
"""

import argparse
import csv
import os
import sys


from . import storage
from .adapt import train_adapt
from .ard import AlphaPosterior, Hyper, TrainConfig, extract_ivector, init_loadings, train_ard
from .block import train_block
from .exceptions import RejectedInputError, VBIVectorError
from .stats import compute_stats
from .synth import SynthSpec, generate, lattice_backend

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _synth(args):
    os.makedirs(args.out_dir, exist_ok=True)
    backend = lattice_backend(args.K, args.d, args.spacing)
    spec = SynthSpec(
        K=args.K,
        d=args.d,
        n_y_true=args.ny_true,
        H=args.sessions,
        frames_per_session=args.frames,
        seed=args.seed,
        backend=backend,
        w_scale=args.w_scale,
        spacing=args.spacing,
        soft=args.soft,
    )
    data = generate(spec)
    out = args.out_dir
    storage.save_backend(os.path.join(out, "backend.vbtc"), backend)
    storage.save_sessions(os.path.join(out, "frames.vbtc"), dict(zip(data.session_ids, data.frames)), "frames")
    storage.save_sessions(os.path.join(out, "resp.vbtc"), dict(zip(data.session_ids, data.resp)), "resp")
    truth = storage.TensorContainer(
        {"W": data.W_true, "y": data.y},
        {"kind": "truth", "session_ids": data.session_ids, "seed": args.seed},
    )
    truth.write(os.path.join(out, "truth.vbtc"))
    return EXIT_OK


def _acc_stats(args):
    backend = storage.load_backend(args.backend)
    frames = storage.load_sessions(args.frames, "frames")
    ids = list(frames)
    if args.resp:
        resp = storage.load_sessions(args.resp, "resp")
        missing = [s for s in ids if s not in resp]
        if missing:
            raise RejectedInputError(f"no responsibilities for sessions {missing[:5]}")
        resp_list = [resp[s] for s in ids]
    else:
        resp_list = [backend.posteriors(frames[s]) for s in ids]
    stats = compute_stats([frames[s] for s in ids], resp_list, backend, ids)
    storage.save_stats(args.out, stats)
    return EXIT_OK


def _config(args, n_y):
    return TrainConfig(
        n_y=n_y,
        iters=args.iters,
        seed=args.seed,
        hyper=Hyper(args.a, args.b),
        hyper_opt=args.hyper_opt,
        min_div=args.min_div,
        burn_in=args.burn_in,
        partitions=args.partitions,
    )


def _train(args):
    if args.iters < 0:
        raise UsageError("--iters must be >= 0")
    stats = storage.load_stats(args.stats)
    if args.variant == "adapt":
        if not args.prior:
            raise UsageError("--variant adapt needs --prior")
        prior, prior_hash = storage.load_prior(args.prior)
        if prior_hash and stats.backend_hash and prior_hash != stats.backend_hash:
            raise storage.HashMismatchError("prior and statistics were built against different backends")
        n_y = args.ny if args.ny is not None else prior.n
        cfg = _config(args, n_y)
        res = train_adapt(stats, prior, cfg)
        bundle = storage.ModelBundle(
            "adapt", stats.backend_hash, res.loadings, config=cfg.to_dict(), history=res.history
        )
    else:
        if args.ny is None:
            raise UsageError(f"--variant {args.variant} needs --ny")
        if args.prior:
            raise UsageError("--prior is only used with --variant adapt")
        if args.variant == "ard" and args.partitions != 1:
            raise UsageError("--partitions needs --variant block")
        cfg = _config(args, args.ny)
        if cfg.iters == 0:
            loadings = init_loadings(stats.K, stats.d, cfg.n_y, cfg.hyper, cfg.seed)
            alpha, hyper, history, mindiv = AlphaPosterior.from_prior(cfg.hyper, cfg.n_y), cfg.hyper, [], None
        elif args.variant == "block":
            res = train_block(stats, cfg)
            loadings, alpha, hyper, history = res.loadings, res.alpha, res.hyper, res.history
            mindiv = getattr(res, "mindiv", None)
        else:
            res = train_ard(stats, cfg)
            loadings, alpha, hyper, history, mindiv = res.loadings, res.alpha, res.hyper, res.history, res.mindiv
        bundle = storage.ModelBundle(
            args.variant, stats.backend_hash, loadings, alpha, hyper, mindiv, cfg.to_dict(), history
        )
    storage.save_model(args.out, bundle)
    return EXIT_OK


def _extract(args):
    bundle = storage.load_model(args.model)
    stats = storage.load_stats(args.stats)
    bundle.check_backend(stats.backend_hash)
    lat = extract_ivector(stats, bundle.loadings)
    tc = storage.TensorContainer(
        {"ybar": lat.ybar},
        {"kind": "ivectors", "session_ids": list(stats.session_ids), "backend_hash": stats.backend_hash},
    )
    if args.with_cov:
        tc["cov"] = lat.cov
        tc["logdet_prec"] = lat.logdet
    tc.write(args.out)
    return EXIT_OK


def _lb_report(args):
    history = storage.load_history(args.model)
    names = list(history[0].terms) if history else []
    header = ["iteration", "total"] + names
    rows = [[it] + rep.row(names) for it, rep in enumerate(history)]
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    widths = [max(9, len(h)) for h in header]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    for row in rows:
        cells = [str(row[0]).rjust(widths[0])]
        cells += [f"{v:.6g}".rjust(w) for v, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
    print("\n".join(lines))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="vbivector", description="Variational Bayes i-vector extractor")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="draw a synthetic corpus")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--K", type=int, default=8)
    s.add_argument("--d", type=int, default=4)
    s.add_argument("--ny-true", type=int, default=3)
    s.add_argument("--sessions", type=int, default=200)
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--spacing", type=float, default=10.0)
    s.add_argument("--w-scale", type=float, default=1.0)
    s.add_argument("--soft", action="store_true", help="GMM posteriors instead of one-hot responsibilities")
    s.set_defaults(func=_synth)

    s = sub.add_parser("acc-stats", help="frames + responsibilities -> statistics")
    s.add_argument("--backend", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--resp", help="responsibilities; computed from the backend when omitted")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_acc_stats)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--stats", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--variant", choices=("ard", "adapt", "block"), default="ard")
    s.add_argument("--ny", type=int)
    s.add_argument("--iters", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--hyper-opt", action="store_true")
    s.add_argument("--min-div", action="store_true")
    s.add_argument("--burn-in", type=int, default=3)
    s.add_argument("--partitions", type=int, default=1)
    s.add_argument("--prior", help="prior container or trained model (adapt only)")
    s.add_argument("--a", type=float, default=1e-3, help="Gamma shape of the column-precision prior")
    s.add_argument("--b", type=float, default=1e-3, help="Gamma rate of the column-precision prior")
    s.set_defaults(func=_train)

    s = sub.add_parser("extract", help="posterior i-vectors for a statistics file")
    s.add_argument("--model", required=True)
    s.add_argument("--stats", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--with-cov", action="store_true")
    s.set_defaults(func=_extract)

    s = sub.add_parser("lb-report", help="per-term lower-bound history")
    s.add_argument("model")
    s.add_argument("--csv")
    s.set_defaults(func=_lb_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (VBIVectorError, OSError) as exc:
        print(f"vbivector: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
