"""Command-line interface.

Subcommands::

    nfard zoo-build OUT [--seed S] [--scale F]
    nfard detect --victim V --suspect S --refs R1 R2 ... --data D [flags]
    nfard evaluate ZOO [--mode black|white] [--no-log] [--json F] [--text F]
    nfard roc ZOO [--mode black|white] [--alphas a,b,...] [--out F]
    nfard extract MODEL DATA [--layer L] [--blackbox] --out F
    nfard sweep ZOO [--sizes 100,200,...] [--modes black,white] [--out F]

Every flag may also come from a ``key = value`` file given with
``--config``; values on the command line take precedence over the file,
which takes precedence over built-in defaults.  ``NFARD_SEED`` replaces
the default master seed of ``zoo-build``.

Exit status: 0 success (or negative verdict), 1 error, 2 positive verdict.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from .detector import DEFAULT_WEIGHTS, DecisionConfig, detect
from .errors import NfardError
from .evaluation import DEFAULT_ALPHAS, auc, evaluate, roc_points, suite_size_sweep
from .metrics import approx_neuron_matrix, extract_neuron_matrix, save_neuron_matrix
from .model import forward, load_dataset, load_model
from .zoo import build_zoo

EXIT_NEGATIVE, EXIT_ERROR, EXIT_POSITIVE = 0, 1, 2
MODE_NAMES = {"black": "blackbox", "white": "whitebox", "blackbox": "blackbox", "whitebox": "whitebox"}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1; status 2 is reserved for verdicts."""

    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ parsing helpers

def parse_weights(text: str) -> dict[str, float]:
    """``"eu=1,ac=120"`` -> ``{"eu": 1.0, "ac": 120.0}``."""
    out: dict[str, float] = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"weight {item!r} is not name=value")
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise argparse.ArgumentTypeError(f"weight {item!r} has a non-numeric value") from None
    if not out:
        raise argparse.ArgumentTypeError("empty weight list")
    return out


def parse_floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def parse_ints(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise CliError(f"not a boolean: {text!r}")


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().lstrip("-").replace("-", "_")] = val.strip()
    return values


def _add_decision_flags(p: argparse.ArgumentParser, multi_mode: bool = False) -> None:
    if not multi_mode:
        p.add_argument("--mode", choices=sorted(MODE_NAMES), default="black",
                       help="black-box (output probabilities) or white-box (hidden layers)")
    p.add_argument("--alpha", type=float, default=None,
                   help="IQR multiplier; default 0.85 black-box, 3.5 white-box")
    p.add_argument("--n", type=int, default=1000, help="test suite size")
    p.add_argument("--layer", default="frac:0.25",
                   help="white-box layer policy: frac:F, second-last or a 1-based index")
    p.add_argument("--weights", type=parse_weights, default=dict(DEFAULT_WEIGHTS),
                   help="metric weights, e.g. eu=1,ac=120")
    p.add_argument("--no-log", dest="no_log", action="store_true",
                   help="black-box: compare raw probabilities instead of log-probabilities")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="nfard",
        description="Detect model reuse by comparing neuron functionalities.",
        epilog="Precedence: command-line flag > --config file > built-in default.",
    )
    parser.add_argument("--config", help="file of 'key = value' lines supplying flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("zoo-build", help="train the mini zoo of victims, surrogates and references")
    p.add_argument("out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="master seed (default: $NFARD_SEED or 0)")
    p.add_argument("--scale", type=float, default=1.0, help="multiplier on every epoch budget")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("detect", help="decide whether a suspect model reuses the victim")
    p.add_argument("--victim", required=True)
    p.add_argument("--suspect", required=True)
    p.add_argument("--refs", nargs="+", required=True, help="reference model files (>= 2)")
    p.add_argument("--data", required=True, help="dataset CSV the test suite is drawn from")
    p.add_argument("--report", help="write the JSON report here")
    _add_decision_flags(p)

    p = sub.add_parser("evaluate", help="confusion counts and F1 over a zoo")
    p.add_argument("zoo")
    p.add_argument("--json", dest="json_out", help="write the summary JSON here")
    p.add_argument("--text", dest="text_out", help="write the text table here")
    _add_decision_flags(p)

    p = sub.add_parser("roc", help="TPR/FPR while sweeping alpha, plus AUC")
    p.add_argument("zoo")
    p.add_argument("--alphas", type=parse_floats, default=list(DEFAULT_ALPHAS))
    p.add_argument("--out", help="CSV path (default: stdout)")
    _add_decision_flags(p)

    p = sub.add_parser("extract", help="write a neuron matrix as CSV")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--layer", default="last", help="last, second-last or a 1-based index")
    p.add_argument("--blackbox", action="store_true", help="emit log-probabilities instead")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="F1 as a function of the test suite size")
    p.add_argument("zoo")
    p.add_argument("--sizes", type=parse_ints, default=[100, 200, 400, 600, 800, 1000])
    p.add_argument("--modes", default="black,white", help="comma-separated subset of black,white")
    p.add_argument("--out", help="CSV path (default: stdout)")
    _add_decision_flags(p, multi_mode=True)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        values = read_config_file(known.config)
        sub = _subparser(parser, argv)
        if sub is not None:
            _apply_file_defaults(sub, values)
    return parser.parse_args(argv)


def _subparser(parser: argparse.ArgumentParser, argv) -> argparse.ArgumentParser | None:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for tok in argv:
                if tok in action.choices:
                    return action.choices[tok]
    return None


def _apply_file_defaults(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key == "help":
            continue  # keys for other subcommands are ignored
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = parse_bool(raw)
        elif action.nargs in ("+", "*"):
            defaults[key] = raw.split()
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CliError(f"config value for {key!r}: {exc}") from None
        else:
            defaults[key] = raw
        if action.required and key in defaults:
            action.required = False
    sub.set_defaults(**defaults)


def decision_config(args: argparse.Namespace, mode: str | None = None) -> DecisionConfig:
    mode = mode or args.mode
    if mode not in MODE_NAMES:
        raise CliError(f"unknown mode {mode!r}")
    return DecisionConfig(
        mode=MODE_NAMES[mode],
        alpha=args.alpha,
        weights=dict(args.weights),
        suite_size=args.n,
        layer_policy=args.layer,
        use_log=not args.no_log,
    )


def _write_or_print(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ------------------------------------------------------------------ commands

def cmd_zoo_build(args) -> int:
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("NFARD_SEED", "0"))
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise CliError(f"output path {out} exists and is not a directory")
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    manifest = build_zoo(out, master_seed=seed, scale=args.scale, log=log)
    counts = {role: len(manifest.by_role(role)) for role in ("victim", "surrogate", "reference")}
    print(f"manifest: {out / 'manifest.json'}")
    print(f"seed={seed} " + " ".join(f"{k}s={v}" for k, v in counts.items()))
    return 0


def cmd_detect(args) -> int:
    cfg = decision_config(args)
    victim = load_model(args.victim)
    suspect = load_model(args.suspect)
    refs = [load_model(p) for p in args.refs]
    data = load_dataset(args.data)
    report = detect(victim, suspect, refs, data, cfg)
    payload = {"config": cfg.to_dict(), "report": report.to_dict()}
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2) + "\n")
    verdict = "positive" if report.verdict else "negative"
    print(f"verdict: {verdict}  weighted_sum={report.weighted_sum:.6g}  "
          f"alpha={cfg.alpha} weights={cfg.weights} mode={cfg.mode}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_POSITIVE if report.verdict else EXIT_NEGATIVE


def cmd_evaluate(args) -> int:
    cfg = decision_config(args)
    summary, _, _ = evaluate(args.zoo, cfg)
    text = summary.render() + "\n"
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(summary.to_dict(), indent=2) + "\n")
    if args.text_out:
        Path(args.text_out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_roc(args) -> int:
    cfg = decision_config(args)
    if len(args.alphas) < 2:
        raise CliError("roc needs at least 2 alpha values")
    _, cases, reports = evaluate(args.zoo, cfg)
    points = roc_points(cases, reports, args.alphas, cfg.weights)
    _write_or_print(_csv(["alpha", "tpr", "fpr"], points), args.out)
    print(f"AUC={auc(points):.6f}", file=sys.stdout if args.out else sys.stderr)
    return 0


def cmd_extract(args) -> int:
    model = load_model(args.model)
    data = load_dataset(args.data)
    if args.blackbox:
        h = approx_neuron_matrix(forward(model, data.features)[2])
    else:
        layer = args.layer
        if layer == "last":
            k = model.num_layers
        elif layer == "second-last":
            k = max(1, model.num_layers - 1)
        else:
            try:
                k = int(layer)
            except ValueError:
                raise CliError(f"unknown layer {layer!r}") from None
        h = extract_neuron_matrix(model, data.features, k)
    save_neuron_matrix(h, args.out)
    print(f"wrote {h.n}x{h.width} matrix to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in MODE_NAMES:
            raise CliError(f"unknown mode {m!r}")
    rows = []
    for m in modes:
        rows += suite_size_sweep(args.zoo, args.sizes, decision_config(args, m))
    _write_or_print(_csv(["n", "mode", "f1"], rows), args.out)
    return 0


COMMANDS = {
    "zoo-build": cmd_zoo_build,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "roc": cmd_roc,
    "extract": cmd_extract,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except (CliError, NfardError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
