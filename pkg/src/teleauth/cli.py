"""Command-line frontend: ``teleauth {synth,train,auth,eval,attack}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import hmm
from .auth import build_profiles, decisions_to_csv, stream_authenticate, traces_to_csv
from .config import RunConfig, load_config_file
from .data import load_trial, save_trial, synth_dataset, trial_filename
from .decoder import builtin_grammar, load_grammar, save_grammar
from .errors import ConfigurationError, TeleauthError, UsageError
from .evaluation import (evaluate, loto_folds, run_attacks, sweep, sweep_to_csv, train_all,
                         write_report)
from .io_utils import atomic_write_text

log = logging.getLogger("teleauth")

MANIFEST = "manifest.json"
GRAMMAR = "grammar.txt"
TRAIN_REPORT = "train_report.csv"

# flag name -> RunConfig field
_CONFIG_FLAGS = {
    "sample_rate": "sample_rate",
    "window": "window_seconds",
    "states": "n_states",
    "mixtures": "n_mixtures",
    "rel_tol": "rel_tol",
    "max_iter": "max_iter",
    "seed": "seed",
    "normalization": "normalization",
    "skip_width": "skip_width",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _widths(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated seconds, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError(f"window widths must be positive, got {text!r}")
    return vals


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(p, *, window=True):
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="key = value file of run settings")
    g.add_argument("--sample-rate", type=float, help="Hz (default 60)")
    if window:
        g.add_argument("--window", type=float, help="window length in seconds (default 1)")
    g.add_argument("--states", type=int, help="emitting states per gesture model (default 4)")
    g.add_argument("--mixtures", type=int, help="Gaussians per state (default 2)")
    g.add_argument("--rel-tol", type=float, help="Baum-Welch relative tolerance (default 1e-5)")
    g.add_argument("--max-iter", type=int, help="Baum-Welch iteration cap (default 100)")
    g.add_argument("--seed", type=int, help="master seed (default 0)")
    g.add_argument("--normalization", type=_bool, help="z-score channels per fold (default off)")
    g.add_argument("--skip-width", type=int, help="allow skipping one state (0 or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="teleauth", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a labelled synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--operators", type=_positive_int, default=5)
    p.add_argument("--trials", type=_positive_int, default=5)
    p.add_argument("--cycles", type=_positive_int, default=10)
    p.add_argument("--sep", type=float, default=2.0, help="operator offset in noise units")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-rate", type=float, default=60.0)
    p.add_argument("--grammar", type=Path, help="grammar file (default: built-in ring transfer)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one HMM per (operator, gesture)")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p, window=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("auth", help="authenticate a trial over sliding windows")
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--trial", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--schema", choices=("velocity", "position"), default="velocity")
    p.add_argument("--quaternion-check", choices=("off", "warn", "strict"),
                   help="default: the trial directory's manifest setting, else warn")
    _add_config_flags(p)
    p.set_defaults(func=cmd_auth)

    p = sub.add_parser("eval", help="leave-one-trial-out evaluation")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sweep", action="store_true", help="grid over 3-6 states x 1-3 mixtures")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="splice-attack response times")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--windows", type=_widths, default=[5.0, 3.0, 1.0])
    p.add_argument("--max-pairs", type=_positive_int, help="cap on (operator pair, trial) runs")
    _add_config_flags(p, window=False)
    p.set_defaults(func=cmd_attack)
    return parser


def resolve_config(args) -> RunConfig:
    """Defaults, then the --config file, then explicit flags."""
    values = load_config_file(args.config) if getattr(args, "config", None) else {}
    for flag, name in _CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# datasets and model directories

def _read_manifest(data_dir: Path) -> dict:
    path = data_dir / MANIFEST
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def load_dataset(data_dir: Path, config: RunConfig):
    """(trials, grammar) from a dataset directory."""
    if not data_dir.is_dir():
        raise ConfigurationError(f"dataset directory {data_dir} does not exist")
    manifest = _read_manifest(data_dir)
    gpath = data_dir / GRAMMAR
    grammar = load_grammar(gpath) if gpath.exists() else builtin_grammar()
    schema = manifest.get("schema", "velocity")
    qcheck = manifest.get("quaternion_check", "warn")
    files = sorted(data_dir.glob("*_*.csv"))
    if not files:
        raise ConfigurationError(f"no trial files (operator_trial.csv) in {data_dir}")
    trials = []
    for f in files:
        t = load_trial(f, schema, config.sample_rate, quaternion_check=qcheck)
        trials.append(t.with_velocity())
    return trials, grammar


def cmd_synth(args) -> int:
    grammar = load_grammar(args.grammar) if args.grammar else builtin_grammar()
    if args.sep < 0:
        raise UsageError(f"--sep must be >= 0, got {args.sep}")
    _, trials = synth_dataset(args.operators, args.trials, args.cycles, args.sep, args.seed,
                              grammar, sample_rate=args.sample_rate)
    out = args.out
    for t in trials:
        save_trial(t, out / trial_filename(t))
    save_grammar(grammar, out / GRAMMAR)
    manifest = {
        "generator": "synthetic",
        "operators": args.operators,
        "trials": args.trials,
        "cycles": args.cycles,
        "separation": args.sep,
        "seed": args.seed,
        "sample_rate": args.sample_rate,
        "schema": "velocity",
        "quaternion_check": "off",
        "files": [trial_filename(t) for t in trials],
    }
    atomic_write_text(out / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(trials)} trials to {out}")
    return 0


def _model_name(op, gesture):
    return f"{op}__{gesture}.hmm"


def cmd_train(args) -> int:
    config = resolve_config(args)
    trials, grammar = load_dataset(args.data, config)
    trained = train_all(trials, grammar, config)
    rows = ["operator_id,gesture_id,n_segments,iterations,converged,final_log_likelihood"]
    n = 0
    for op in sorted(trained):
        for g in sorted(trained[op]):
            tm = trained[op][g]
            hmm.save_model(tm.model, args.out / _model_name(op, g))
            hist = tm.report.log_likelihood_history
            rows.append(f"{op},{g},{tm.n_segments},{tm.report.iterations},"
                        f"{int(tm.report.converged)},{repr(hist[-1]) if hist else ''}")
            n += 1
    atomic_write_text(args.out / TRAIN_REPORT, "\n".join(rows) + "\n")
    save_grammar(grammar, args.out / GRAMMAR)
    print(f"wrote {n} models to {args.out}")
    return 0


def load_models(model_dir: Path):
    if not model_dir.is_dir():
        raise ConfigurationError(f"model directory {model_dir} does not exist")
    files = sorted(model_dir.glob("*.hmm"))
    if not files:
        raise ConfigurationError(f"no .hmm model files in {model_dir}")
    gpath = model_dir / GRAMMAR
    grammar = load_grammar(gpath) if gpath.exists() else builtin_grammar()
    return [hmm.load_model(f) for f in files], grammar


def cmd_auth(args) -> int:
    config = resolve_config(args)
    models, grammar = load_models(args.models)
    qcheck = args.quaternion_check or _read_manifest(args.trial.parent).get("quaternion_check",
                                                                           "warn")
    trial = load_trial(args.trial, args.schema, config.sample_rate,
                       quaternion_check=qcheck).with_velocity()
    profiles = build_profiles(models, grammar)
    decisions, traces = stream_authenticate(profiles, trial, config.window_seconds,
                                            config.sample_rate)
    atomic_write_text(args.out / "decisions.csv", decisions_to_csv(decisions))
    atomic_write_text(args.out / "traces.csv", traces_to_csv(traces))
    print(f"{len(decisions)} windows authenticated; results in {args.out}")
    return 0


def cmd_eval(args) -> int:
    config = resolve_config(args)
    trials, grammar = load_dataset(args.data, config)
    if args.sweep:
        rows = sweep(trials, grammar, config.window_seconds, config)
        atomic_write_text(args.out / "sweep.csv", sweep_to_csv(rows))
        best = max(rows, key=lambda r: (r["accuracy"], -r["n_states"], -r["n_mixtures"]))
        print(f"best: {best['n_states']} states, {best['n_mixtures']} mixtures, "
              f"accuracy {best['accuracy']:.4f}")
        return 0
    result = evaluate(loto_folds(trials), grammar, config.window_seconds, config)
    write_report(result, args.out)
    m = result.metrics
    print(f"accuracy {m['accuracy']:.4f}  macro precision {m['macro_precision']:.4f}  "
          f"macro recall {m['macro_recall']:.4f}  over {m['n_windows']} windows")
    return 0


def cmd_attack(args) -> int:
    config = resolve_config(args)
    trials, grammar = load_dataset(args.data, config)
    report = run_attacks(trials, grammar, config, args.windows, args.max_pairs)
    write_report(report, args.out)
    for r in report.rows:
        print(f"{r['window_seconds']:g} s window: mean response {r['mean_response_s']:.3f} s "
              f"({r['n_crossed']}/{r['n_runs']} crossed)")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        return args.func(args)
    except TeleauthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
