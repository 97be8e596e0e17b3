"""Command-line experiment runner: expert -> demonstrations -> imitation -> evaluation.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure, 3 theory-check failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discriminators import Prior, PriorVariant
from .envs import REGISTRY, build_env
from .equilibria import SolverError, solve_team_vi, solve_zero_sum_shapley
from .exact_solvers import nash_check
from .game_core import (DecodeError, ObservationMap, RngConfig, collect_demonstrations,
                        decode_demonstrations, decode_policy, encode_demonstrations,
                        encode_policy)
from .mack import LOG_COLUMNS, MackConfig, train_mack
from .magail import (MagailConfig, RunRecord, behavior_cloning, evaluate_policy,
                     train_gail_baseline, train_magail)
from .theory import SUITES, run_suites

SCHEMA_VERSION = 1
EXPERT_METHODS = ("team_vi", "zerosum_shapley", "mack")
IMITATION_METHODS = ("bc", "gail", "magail_c", "magail_d", "magail_zs")
IMITATION_FIELDS = {"method", "observations", "mack", "disc_lr", "disc_steps", "iterations",
                    "bc_pretrain", "bc_smoothing", "beta"}

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_THEORY = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config


@dataclass
class ExperimentConfig:
    game: str
    spec: dict
    expert_method: str
    expert_tol: float
    expert_mack: dict
    demo_episodes: int
    demo_horizon: int
    method: str
    imitation: dict
    observations: str
    eval_episodes: int
    eval_horizon: int
    seed: int


def _get(d: dict, key: str, path: str, kind, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}.{key}: required field missing")
        return default
    v = d[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if (kind is int and isinstance(v, bool)) or not isinstance(v, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {type(v).__name__}")
    return v


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("$: config must be a JSON object")
    version = _get(raw, "schema_version", "$", int, required=True)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"$.schema_version: unsupported version {version}")
    seed = _get(raw, "seed", "$", int, required=True)
    game = _get(raw, "game", "$", dict, required=True)
    tag = _get(game, "tag", "$.game", str, required=True)
    if tag not in REGISTRY:
        raise ConfigError(f"$.game.tag: unknown environment {tag!r}")
    spec = _get(game, "spec", "$.game", dict, {})
    expert = _get(raw, "expert", "$", dict, {})
    method = _get(expert, "method", "$.expert", str, "team_vi")
    if method not in EXPERT_METHODS:
        raise ConfigError(f"$.expert.method: expected one of {EXPERT_METHODS}")
    demos = _get(raw, "demos", "$", dict, {})
    imitation = _get(raw, "imitation", "$", dict, {})
    unknown = set(imitation) - IMITATION_FIELDS
    if unknown:
        raise ConfigError(f"$.imitation: unknown fields {sorted(unknown)}")
    im_method = _get(imitation, "method", "$.imitation", str, "bc")
    if im_method not in IMITATION_METHODS:
        raise ConfigError(f"$.imitation.method: expected one of {IMITATION_METHODS}")
    observations = _get(imitation, "observations", "$.imitation", str, "env")
    if observations not in ("env", "full"):
        raise ConfigError("$.imitation.observations: expected 'env' or 'full'")
    evaluation = _get(raw, "evaluation", "$", dict, {})
    cfg = ExperimentConfig(
        game=tag, spec=spec, expert_method=method,
        expert_tol=_get(expert, "tol", "$.expert", float, 1e-6),
        expert_mack=_get(expert, "mack", "$.expert", dict, {}),
        demo_episodes=_get(demos, "episodes", "$.demos", int, 100),
        demo_horizon=_get(demos, "horizon", "$.demos", int, 50),
        method=im_method, imitation=imitation, observations=observations,
        eval_episodes=_get(evaluation, "episodes", "$.evaluation", int, 100),
        eval_horizon=_get(evaluation, "horizon", "$.evaluation", int, 50),
        seed=seed)
    if cfg.demo_horizon < 1 or cfg.eval_horizon < 1 or cfg.eval_episodes < 1:
        raise ConfigError("$.demos/$.evaluation: horizons and episodes must be positive")
    return cfg


def load_config(path: str, seed: int | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"$: invalid JSON ({e})") from None
    if seed is not None and isinstance(raw, dict):
        raw["seed"] = seed
    return parse_config(raw)


def _mack_config(block: dict, path: str, seed: int) -> MackConfig:
    known = set(MackConfig.__dataclass_fields__)
    unknown = set(block) - known
    if unknown:
        raise ConfigError(f"{path}: unknown fields {sorted(unknown)}")
    try:
        return MackConfig(**{**block, "seed": block.get("seed", seed)})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def magail_config(cfg: ExperimentConfig, observations: ObservationMap) -> MagailConfig:
    im = cfg.imitation
    kind = {"magail_c": Prior.CENTRALIZED, "magail_d": Prior.DECENTRALIZED,
            "magail_zs": Prior.ZERO_SUM}.get(cfg.method, Prior.DECENTRALIZED)
    variant = PriorVariant(kind, observations if kind is Prior.DECENTRALIZED else None)
    try:
        return MagailConfig(
            variant=variant,
            mack=_mack_config({"lr_policy": 0.2, **_get(im, "mack", "$.imitation", dict, {})},
                              "$.imitation.mack", cfg.seed),
            disc_lr=_get(im, "disc_lr", "$.imitation", float, 0.3),
            disc_steps=_get(im, "disc_steps", "$.imitation", int, 1),
            iterations=_get(im, "iterations", "$.imitation", int, 100),
            bc_pretrain=_get(im, "bc_pretrain", "$.imitation", bool, True),
            bc_smoothing=_get(im, "bc_smoothing", "$.imitation", float, 0.1),
            beta=_get(im, "beta", "$.imitation", float, 0.0),
            seed=cfg.seed)
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"$.imitation: {e}") from None


# ---------------------------------------------------------------------------
# Output helpers


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _env(cfg: ExperimentConfig):
    try:
        return build_env(cfg.game, cfg.spec)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"$.game.spec: {e}") from None


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None


# ---------------------------------------------------------------------------
# Subcommands


def cmd_make_expert(cfg: ExperimentConfig, out: Path) -> int:
    g, _ = _env(cfg)
    report = {"game": cfg.game, "method": cfg.expert_method, "seed": cfg.seed}
    kind = REGISTRY[cfg.game].kind
    if cfg.expert_method == "team_vi":
        if kind != "team":
            raise ConfigError(f"$.expert.method: team_vi needs a cooperative game, "
                              f"{cfg.game} is {kind}")
        pi, rep = solve_team_vi(g, tol=cfg.expert_tol)
    elif cfg.expert_method == "zerosum_shapley":
        if kind != "zero_sum":
            raise ConfigError(f"$.expert.method: zerosum_shapley needs a zero-sum game, "
                              f"{cfg.game} is {kind}")
        pi, rep = solve_zero_sum_shapley(g, tol=cfg.expert_tol)
    else:
        mc = _mack_config(cfg.expert_mack, "$.expert.mack", cfg.seed)
        pi, log = train_mack(g, None, mc)
        write_atomic(out / "expert_log.csv",
                     _csv(LOG_COLUMNS, [[_num(r[c]) for c in LOG_COLUMNS] for r in log]))
        rep = None
    if rep is not None:
        cert = nash_check(g, pi, cfg.expert_tol)
        report.update(iterations=rep.iterations, residual=rep.residual, tolerance=rep.tolerance,
                      nash=cert.is_nash, max_violation=cert.max_violation)
        if not cert.is_nash:
            print(f"expert failed certification: violation {cert.max_violation:.3g}",
                  file=sys.stderr)
            return EXIT_RUNTIME
    write_atomic(out / "expert_policy.txt", encode_policy(pi))
    write_atomic(out / "expert_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'expert_policy.txt'}")
    return EXIT_OK


def cmd_collect_demos(cfg: ExperimentConfig, expert_path: str, out: Path) -> int:
    if cfg.demo_episodes < 1:
        raise ConfigError("$.demos.episodes: must be at least 1")
    g, _ = _env(cfg)
    pi = decode_policy(_read(expert_path))
    d = collect_demonstrations(g.dynamics, pi, cfg.demo_episodes, cfg.demo_horizon,
                               RngConfig(cfg.seed, "demos"))
    write_atomic(out / "demos.txt", encode_demonstrations(d))
    print(f"wrote {d.episodes} demonstrations to {out / 'demos.txt'}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, demos_path: str, out: Path,
              expert_path: str | None = None) -> int:
    g, omap = _env(cfg)
    if cfg.method == "magail_zs" and REGISTRY[cfg.game].kind != "zero_sum":
        raise ConfigError(f"$.imitation.method: magail_zs needs a zero-sum game, "
                          f"{cfg.game} is {REGISTRY[cfg.game].kind}")
    dyn = g.dynamics  # training never sees rewards
    d = decode_demonstrations(_read(demos_path))
    if (d.num_agents, d.num_states) != (dyn.num_agents, dyn.num_states):
        raise ConfigError("demonstrations do not match the configured game")
    obs = omap if cfg.observations == "env" else ObservationMap.identity(dyn.num_agents,
                                                                          dyn.num_states)
    if cfg.method == "bc":
        smoothing = _get(cfg.imitation, "bc_smoothing", "$.imitation", float, 0.1)
        pi = behavior_cloning(d, dyn.action_counts, obs, smoothing)
        record = RunRecord([{"iter": 0, "agent": i} for i in range(dyn.num_agents)], pi,
                           {"prior": "bc", "bc_smoothing": smoothing}, cfg.seed)
    else:
        mcfg = magail_config(cfg, obs)
        if cfg.method == "gail":
            record = train_gail_baseline(dyn, d, mcfg, obs)
        else:
            expert = decode_policy(_read(expert_path)) if expert_path else None
            record = train_magail(dyn, d, mcfg, obs, expert=expert)
    write_atomic(out / "run.csv", record.to_csv())
    snapshot = {"method": cfg.method, "seed": cfg.seed, "flags": list(record.flags),
                "config": record.config}
    write_atomic(out / "run_config.json", json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    write_atomic(out / "policy.txt", encode_policy(record.policy))
    print(f"wrote {out / 'run.csv'} and {out / 'policy.txt'}")
    return EXIT_OK


EVAL_COLUMNS = ("agent", "mean", "std", "exact")


def cmd_evaluate(cfg: ExperimentConfig, policy_path: str, out: Path) -> int:
    g, _ = _env(cfg)
    pi = decode_policy(_read(policy_path))
    if pi.action_counts != g.action_counts or len(pi.observations.maps[0]) != g.num_states:
        raise ConfigError("policy does not match the configured game")
    res = evaluate_policy(g, pi, cfg.eval_episodes, cfg.eval_horizon,
                          RngConfig(cfg.seed, "evaluate"))
    rows = [[str(i), _num(res.mean[i]), _num(res.std[i]), _num(res.exact[i])]
            for i in range(g.num_agents)]
    write_atomic(out / "eval.csv", _csv(EVAL_COLUMNS, rows))
    print(f"{'agent':>5}  {'mean':>12}  {'std':>10}  {'exact':>12}")
    for i in range(g.num_agents):
        print(f"{i:>5}  {res.mean[i]:>12.4f}  {res.std[i]:>10.4f}  {res.exact[i]:>12.4f}")
    return EXIT_OK


THEORY_COLUMNS = ("check_name", "instance_id", "value", "bound", "pass", "gating")


def cmd_verify_theory(suites: list[str], budget: int, seed: int, out: Path,
                      corrupt: bool = False) -> int:
    if budget < 2:
        raise ConfigError("--budget: the smallest suite needs at least 2 instances")
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        raise ConfigError(f"--suite: unknown suites {unknown}; known: {sorted(SUITES)}")
    rows = run_suites(suites, seed, budget, corrupt)
    write_atomic(out / "theory.csv", _csv(THEORY_COLUMNS, [
        [r.name, str(r.instance), _num(r.value), _num(r.threshold), _num(r.passed),
         _num(r.gating)]
        for r in rows]))
    failed = [r for r in rows if r.gating and not r.passed]
    for r in rows:
        status = "ok" if r.passed else ("FAIL" if r.gating else "note")
        print(f"{status:>4}  {r.name}: {r.value:.3g} (bound {r.threshold:g})")
    return EXIT_THEORY if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="magail-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default="out")
        sp.add_argument("--seed", type=int, default=None)

    common(sub.add_parser("make-expert", help="solve or train expert policies"))
    c = sub.add_parser("collect-demos", help="sample demonstrations from an expert")
    common(c)
    c.add_argument("--expert", required=True)
    t = sub.add_parser("train", help="run an imitation method on demonstrations")
    common(t)
    t.add_argument("--demos", required=True)
    t.add_argument("--expert", default=None, help="expert policies for zero-sum pairing")
    e = sub.add_parser("evaluate", help="evaluate a policy under the true rewards")
    common(e)
    e.add_argument("--policy", required=True)
    v = sub.add_parser("verify-theory", help="run exact property sweeps")
    v.add_argument("--suite", default="all")
    v.add_argument("--budget", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default="out")
    v.add_argument("--debug-corrupt-game", action="store_true",
                   help="inject a non-stochastic transition row")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.command == "verify-theory":
            suites = list(SUITES) if args.suite == "all" else args.suite.split(",")
            return cmd_verify_theory(suites, args.budget, args.seed, out,
                                     args.debug_corrupt_game)
        cfg = load_config(args.config, args.seed)
        if args.command == "make-expert":
            return cmd_make_expert(cfg, out)
        if args.command == "collect-demos":
            return cmd_collect_demos(cfg, args.expert, out)
        if args.command == "train":
            return cmd_train(cfg, args.demos, out, args.expert)
        return cmd_evaluate(cfg, args.policy, out)
    except (ConfigError, DecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ValueError, FloatingPointError, RuntimeError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
