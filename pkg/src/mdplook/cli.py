"""Command-line front end: ``mdplook <command> [flags]``.

Every command prints one JSON report (sorted keys) to stdout or ``--output``.
Run time goes to stderr so that report bodies are byte-identical across
reruns. Exit codes: 0 success, 1 validation failure, 2 budget or refusal.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from fractions import Fraction

import numpy as np

from mdplook.core import (
    NumericMode,
    check_unichain_exhaustive,
    default_budget,
    load_mdp,
    random_mdp,
    save_mdp,
    validate_mdp,
)
from mdplook.errors import BudgetExceededError, IterationLimitError, MdpFormatError, NotUnichainError

EXIT_OK, EXIT_INVALID, EXIT_REFUSED = 0, 1, 2


class Refusal(Exception):
    """Incompatible flags or an unsupported combination."""


def _num(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    return x


def _digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _named(states, values) -> dict:
    return {s: _num(v) for s, v in zip(states, values)}


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- commands ---------------------------------------------------------------


def cmd_validate(args) -> tuple[dict, int]:
    mdp = load_mdp(args.input)
    rep = validate_mdp(mdp, args.mode)
    body = {
        "ok": rep.ok,
        "mode": mdp.mode.value,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "violations": [{"kind": v.kind, "where": v.where, "detail": v.detail} for v in rep.violations],
    }
    return body, EXIT_OK if rep.ok else EXIT_INVALID


def _require_valid(mdp):
    rep = validate_mdp(mdp)
    if not rep.ok:
        raise MdpFormatError("; ".join(f"{v.kind} at {v.where}" for v in rep.violations))


def cmd_augment(args) -> tuple[dict, int]:
    from mdplook.lookahead import build_augmented_mdp

    mdp = load_mdp(args.input)
    _require_valid(mdp)
    roots = args.roots.split(",") if args.roots else None
    model = build_augmented_mdp(mdp, roots, args.lookahead, args.budget)
    body = {"n_augmented_states": model.mdp.n_states, "lookahead": args.lookahead,
            "roots": roots if roots else list(mdp.states)}
    if args.output_mdp:
        save_mdp(model.mdp, args.output_mdp)
        sidecar = args.output_mdp + ".blocks.json"
        with open(sidecar, "w") as fh:
            json.dump(model.sidecar(), fh, sort_keys=True, indent=1)
            fh.write("\n")
        body["files"] = {"mdp": args.output_mdp, "blocks": sidecar}
    return body, EXIT_OK


def _plan_discounted(mdp, args, body):
    from mdplook.planners import augmented_discounted_values, value_iteration_discounted
    from mdplook.onestep import solve_onestep_discounted, solve_onestep_discounted_cg

    gamma = args.gamma if args.gamma is not None else mdp.gamma
    if gamma is None:
        raise Refusal("discounted planning needs --gamma or a gamma field in the MDP file")
    gamma = float(Fraction(str(gamma)))
    body["settings"]["gamma"] = gamma
    L, method = args.lookahead, args.method
    if L == 0:
        sol = value_iteration_discounted(mdp, gamma, args.epsilon)
        body["method"] = "value-iteration"
        body["results"]["policy"] = sol.policy.to_table(mdp)
        values = sol.values
        body["residuals"]["bellman"] = sol.residual
    elif L == 1 and method == "sorted-vi":
        sol = solve_onestep_discounted(mdp, gamma, args.epsilon)
        values = sol.values
        body["residuals"]["bellman"] = sol.residual
    elif L == 1 and method == "cg-lp":
        sol = solve_onestep_discounted_cg(mdp, gamma)
        values = sol.values
        body["results"]["cg"] = {"iterations": sol.iterations, "constraints": sol.n_constraints,
                                 "oracle_calls": sol.oracle_calls}
    else:
        values, model, sol = augmented_discounted_values(mdp, L, gamma, args.epsilon, args.budget)
        body["results"]["n_augmented_states"] = model.mdp.n_states
        body["residuals"]["bellman"] = sol.residual
    body["results"]["values"] = _named(mdp.states, values)
    if args.csv:
        _write_csv(args.csv, ["state", "value"], [[s, repr(float(v))] for s, v in zip(mdp.states, values)])
    if args.theta is not None:
        s = mdp.state_index(args.state if args.state is not None else (mdp.initial_state or 0))
        theta = float(Fraction(args.theta))
        value = float(values[s])
        body["decision"] = {"state": mdp.states[s], "theta": theta, "value": value,
                            "answer": value >= theta, "margin": value - theta}


def _plan_average(mdp, args, body):
    from mdplook.planners import augmented_average_gain, average_reward_solve
    from mdplook.onestep import solve_onestep_average, solve_onestep_average_cg

    L, method = args.lookahead, args.method
    if not args.assume_unichain:
        rep = check_unichain_exhaustive(mdp, args.budget)
        if not rep:
            raise NotUnichainError(f"policy {list(rep.witness)} has {len(rep.classes)} recurrent classes")
    body["settings"]["assume_unichain"] = bool(args.assume_unichain)
    if L == 0:
        sol = average_reward_solve(mdp, assume_unichain=True)
        gain, bias = sol.gain, sol.bias
        body["method"] = "relative-value-iteration"
        body["results"]["policy"] = sol.policy.to_table(mdp)
        body["residuals"]["optimality"] = sol.residual
    elif L == 1 and method == "sorted-vi":
        sol = solve_onestep_average(mdp, assume_unichain=True)
        gain, bias = sol.gain, sol.bias
        body["method"] = "sorted-rvi"
        body["residuals"]["optimality"] = sol.residual
    elif L == 1 and method == "cg-lp":
        sol = solve_onestep_average_cg(mdp)
        gain, bias = sol.gain, sol.values
        body["results"]["cg"] = {"iterations": sol.iterations, "constraints": sol.n_constraints,
                                 "oracle_calls": sol.oracle_calls}
    else:
        gain, model, sol = augmented_average_gain(mdp, L, args.budget)
        bias = None
        body["results"]["n_augmented_states"] = model.mdp.n_states
        body["residuals"]["optimality"] = sol.residual
    body["results"]["gain"] = float(gain)
    if bias is not None:
        body["results"]["bias"] = _named(mdp.states, bias)
        if args.csv:
            _write_csv(args.csv, ["state", "bias"], [[s, repr(float(v))] for s, v in zip(mdp.states, bias)])
    if args.theta is not None:
        theta = float(Fraction(args.theta))
        body["decision"] = {"theta": theta, "value": float(gain), "answer": float(gain) >= theta,
                            "margin": float(gain) - theta}


def cmd_plan(args) -> tuple[dict, int]:
    if args.lookahead >= 2 and args.method != "augmented-brute":
        raise Refusal("--lookahead >= 2 requires --method augmented-brute")
    mdp = load_mdp(args.input)
    _require_valid(mdp)
    body = {
        "lookahead": args.lookahead,
        "criterion": args.criterion,
        "method": args.method,
        "mode": mdp.mode.value,
        "settings": {"epsilon": args.epsilon, "budget": args.budget, "threads": args.threads},
        "results": {},
        "residuals": {},
        "notes": [],
    }
    if args.lookahead == 0 and args.method != "sorted-vi":
        body["notes"].append(f"--method {args.method} has no look-ahead-free variant; used the exact planners")
    if args.criterion == "discounted":
        _plan_discounted(mdp, args, body)
    else:
        _plan_average(mdp, args, body)
    return body, EXIT_OK


def cmd_oracle(args) -> tuple[dict, int]:
    from mdplook.onestep import expected_max_bruteforce, expected_max_sorted

    rng = np.random.default_rng(args.seed)
    if args.input:
        mdps = [load_mdp(args.input)]
        _require_valid(mdps[0])
    else:
        mdps = [random_mdp(int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2**31)))
                for _ in range(args.instances)]
    worst = 0.0
    count = 0
    for mdp in mdps:
        for _ in range(args.trials):
            u = rng.normal(size=(mdp.n_states, mdp.n_actions))
            for s in range(mdp.n_states):
                diff = abs(float(expected_max_sorted(mdp, s, u)) - float(expected_max_bruteforce(mdp, s, u)))
                worst = max(worst, diff)
                count += 1
    ok = worst <= 1e-10
    body = {
        "seed": args.seed,
        "trials": args.trials,
        "comparisons": count,
        "max_abs_diff": worst,
        "verdict": f"sorted vs brute max-abs-diff {'<=' if ok else '>'} 1e-10",
        "passed": ok,
    }
    return body, EXIT_OK if ok else EXIT_INVALID


def _load_graph_arg(spec: str):
    from mdplook.hardness.graphs import FIXTURES, fixture, load_graph

    if os.path.exists(spec):
        return load_graph(spec), _digest(spec)
    if spec.lower() in FIXTURES:
        return fixture(spec), f"fixture:{spec.lower()}"
    raise MdpFormatError(f"{spec}: no such graph file or fixture")


def cmd_gadget(args) -> tuple[dict, int]:
    from mdplook.hardness.gadget import build_gadget_mdp, verify_separation

    graph, digest = _load_graph_arg(args.graph)
    inst = build_gadget_mdp(graph, args.k)
    body = inst.report()
    body["inputs_digest"] = digest
    if args.output_mdp:
        save_mdp(inst.mdp, args.output_mdp)
        body["files"] = {"mdp": args.output_mdp}
    code = EXIT_OK
    if args.verify:
        rep = verify_separation(inst)
        body["verification"] = rep.as_dict()
        if not rep.passed:
            code = EXIT_INVALID
    return body, code


def cmd_reset(args) -> tuple[dict, int]:
    from mdplook.hardness.reset import reset_transform

    mdp = load_mdp(args.input)
    _require_valid(mdp)
    gamma = Fraction(args.gamma) if mdp.rational else float(Fraction(args.gamma))
    state = args.state if args.state is not None else (mdp.initial_state or mdp.states[0])
    out = reset_transform(mdp, gamma, state)
    body = {"gamma": _num(gamma), "state": state, "kappa_scale": _num(1 - gamma),
            "valid": validate_mdp(out).ok}
    try:
        body["unichain"] = bool(check_unichain_exhaustive(out, args.budget))
    except BudgetExceededError:
        body["unichain"] = None
        body["notes"] = ["unichain check skipped: too many deterministic policies"]
    if args.output_mdp:
        save_mdp(out, args.output_mdp)
        body["files"] = {"mdp": args.output_mdp}
    return body, EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdplook", description="Planning with transition look-ahead in tabular MDPs.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_input=True):
        if needs_input:
            sp.add_argument("--input", required=True, help="MDP file (JSON)")
        sp.add_argument("--output", help="write the report here instead of stdout")
        sp.add_argument("--budget", type=int, default=None, help="enumeration budget (default MDPLOOK_BUDGET or 10^6)")
        sp.add_argument("--threads", type=int, default=1, help="accepted for compatibility; output does not depend on it")

    sp = sub.add_parser("validate", help="check an MDP file")
    common(sp)
    sp.add_argument("--mode", choices=[m.value for m in NumericMode], default=None)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("augment", help="build the explicit look-ahead MDP")
    common(sp)
    sp.add_argument("--lookahead", type=int, default=1)
    sp.add_argument("--roots", help="comma-separated root states (default: all)")
    sp.add_argument("--output-mdp", help="write the augmented MDP and a .blocks.json sidecar")
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("plan", help="solve for optimal look-ahead values or gain")
    common(sp)
    sp.add_argument("--lookahead", type=int, default=1)
    sp.add_argument("--criterion", choices=["discounted", "average"], default="discounted")
    sp.add_argument("--method", choices=["sorted-vi", "cg-lp", "augmented-brute"], default="sorted-vi")
    sp.add_argument("--gamma", default=None)
    sp.add_argument("--epsilon", type=float, default=1e-10)
    sp.add_argument("--theta", default=None, help="decision threshold on the value (or gain)")
    sp.add_argument("--state", default=None, help="state for the --theta decision (default: initial state)")
    sp.add_argument("--assume-unichain", action="store_true")
    sp.add_argument("--csv", help="export the value (or bias) table as CSV")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("oracle", help="sorting trick vs brute-force expected maximum")
    common(sp, needs_input=False)
    sp.add_argument("--input", default=None)
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--instances", type=int, default=20, help="random MDPs to draw when no --input is given")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("gadget", help="compile a 3-regular graph into the hardness MDP")
    common(sp, needs_input=False)
    sp.add_argument("--graph", required=True, help="edge-list file or fixture name (k4, k33, q3, petersen)")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--verify", action="store_true")
    sp.add_argument("--output-mdp", help="write the gadget MDP file")
    sp.set_defaults(func=cmd_gadget)

    sp = sub.add_parser("reset", help="apply the reset transform")
    common(sp)
    sp.add_argument("--gamma", required=True)
    sp.add_argument("--state", default=None)
    sp.add_argument("--output-mdp", help="write the transformed MDP file")
    sp.set_defaults(func=cmd_reset)
    return p


def _emit(body: dict, path) -> None:
    text = json.dumps(body, sort_keys=True, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.budget is None:
        args.budget = default_budget()
    start = time.perf_counter()
    header = {"command": args.command}
    if getattr(args, "input", None):
        try:
            header["inputs_digest"] = _digest(args.input)
        except OSError:
            pass
    try:
        body, code = args.func(args)
    except (MdpFormatError, NotUnichainError, FileNotFoundError) as exc:
        body, code = {"error": type(exc).__name__, "message": str(exc)}, EXIT_INVALID
    except (BudgetExceededError, Refusal, IterationLimitError) as exc:
        body, code = {"error": type(exc).__name__, "message": str(exc)}, EXIT_REFUSED
    except ValueError as exc:
        body, code = {"error": type(exc).__name__, "message": str(exc)}, EXIT_INVALID
    report = {**header, **body, "exit_code": code}
    _emit(report, args.output)
    print(f"timing: {time.perf_counter() - start:.3f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
