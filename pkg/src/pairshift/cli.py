"""
Command-line frontend.

    pairshift gen --n 2 --primes 3,5 --D 2 --seed 7 -o inst.cfg
    pairshift run --instance inst.cfg --route reeval --out results/
    pairshift verify --reference --suite all

Every command is deterministic given its inputs and seed. Exit codes:
0 success, 1 verification failure, 2 bad configuration, 3 residue
accessibility violation, 4 support too large for brute force.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    approx_qft_experiment,
    check_injectivity,
    closed_form_amplitude,
    enumerate_annihilator,
    expected_annihilator_count,
    schmidt_rank,
    uniformity_test,
)
from .errors import AccessibilityViolation, InstanceError, SupportTooLarge
from .groupstate import dumps_instance, generate_instance, load_instance, reference_instance
from .pipeline import (
    CRT_SCHEMES,
    FALLBACKS,
    ROUTES,
    SCHEMA_VERSION,
    RouteConfig,
    demo_domain_extension_failure,
    distribution_csv,
    result_to_json,
    run,
    run_jfree,
    run_reeval,
    sample_outcomes,
)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_ACCESS = 3
EXIT_SUPPORT = 4

SUITES = ("orthogonality", "factorization", "injectivity", "counts", "routes", "invariance")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


# --- argument groups ---------------------------------------------------------


def _add_instance_source(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--instance", type=Path, help="instance config file (key = value lines)")
    g.add_argument("--reference", action="store_true", help="use the built-in reference instance")


def _add_route_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--route", choices=ROUTES, default="jfree")
    p.add_argument("--crt-scheme", choices=CRT_SCHEMES, default="garner")
    p.add_argument("--cleanup", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--fallback", choices=FALLBACKS, default="none")
    p.add_argument("--qft-perturbation", type=float, default=0.0, metavar="EPS")
    p.add_argument("--rng-seed", type=int, default=0, help="seed for the perturbed QFT")


def _instance(args):
    return reference_instance() if args.reference else load_instance(args.instance)


def _route_config(args) -> RouteConfig:
    return RouteConfig(
        route=args.route,
        crt_scheme=args.crt_scheme,
        cleanup=args.cleanup,
        fallback=args.fallback,
        qft_perturbation=args.qft_perturbation,
        rng_seed=args.rng_seed,
    )


# --- subcommands -------------------------------------------------------------


def cmd_gen(args) -> int:
    inst = generate_instance(
        args.n,
        args.primes,
        args.D,
        args.seed,
        chen=args.chen,
        force_accessible=args.force_accessible,
        force_inaccessible=args.force_inaccessible,
    )
    _emit(dumps_instance(inst), args.output)
    return EXIT_OK


def cmd_run(args) -> int:
    inst = _instance(args)
    res = run(inst, _route_config(args))
    dist = res.z_distribution
    if args.out is not None:
        _emit(result_to_json(res) + "\n", args.out / "result.json")
        _emit(distribution_csv(dist, inst.b_star, inst.P), args.out / "distribution.csv")
        _emit(res.gate_log.to_json() + "\n", args.out / "gate_log.json")
    print(f"route={res.gate_log.route} support={len(dist)} total={dist.total():.12f}")
    if res.success_probability is not None:
        print(f"postselection success probability={res.success_probability:.12f}")
    for row in res.accessibility_report:
        idx = "Missing" if row["index"] is None else row["index"]
        print(f"prime {row['prime']}: i={idx}")
    return EXIT_OK


def _suite_orthogonality(inst, seed):
    res = run_jfree(inst)
    ann = enumerate_annihilator(inst).as_set()
    dist = res.z_distribution
    if dist.support() != ann:
        return False, f"exact orthogonality: support {len(dist.support())} != annihilator {len(ann)}"
    worst = max(abs(dist[u] - abs(closed_form_amplitude(inst, u)) ** 2) for u in ann)
    if worst > 1e-9:
        return False, f"exact orthogonality: probability off closed form by {worst:.3e}"
    return True, f"support = annihilator ({len(ann)} outcomes), max deviation from closed form {worst:.1e}"


def _suite_factorization(inst, seed):
    pre = run_jfree(inst, RouteConfig(cleanup=False))
    post = run_jfree(inst)
    r0 = schmidt_rank(pre.final_state)
    r1 = schmidt_rank(post.final_state)
    ok = r0 == inst.P and r1 == 1
    msg = f"Schmidt rank across Z | rest: {r0} before cleanup (want {inst.P}), {r1} after (want 1)"
    return ok, msg if ok else "cleanup factorization: " + msg


def _suite_injectivity(inst, seed):
    rep = check_injectivity(inst)
    if not rep.agrees:
        return False, f"residue accessibility: injectivity verdict disagrees with per-prime verdict {rep.missing}"
    if rep.injective:
        return True, f"T -> T b* mod {inst.P} injective; accessible primes {rep.accessible}"
    witness = rep.kernel[1]
    return False, (
        f"residue accessibility fails at {rep.missing}: kernel witness T={witness} "
        f"(T b* = 0 mod {inst.P}); kernel size {len(rep.kernel)}"
    )


def _suite_counts(inst, seed):
    ann = enumerate_annihilator(inst)
    got = len(ann)
    want = expected_annihilator_count(inst)
    full = inst.M2**inst.n // inst.P
    acc = not check_injectivity(inst).missing
    if got != want:
        return False, f"annihilator count: enumerated {got} != per-prime product {want}"
    if acc and got != full:
        return False, f"annihilator count: {got} != {inst.M2}^{inst.n}/{inst.P}"
    if acc:
        return True, f"{got} = {inst.M2}^{inst.n}/{inst.P}"
    return True, f"{got} = per-prime product (instance not fully accessible)"


def _suite_routes(inst, seed):
    base = run_jfree(inst).z_distribution
    worst = 0.0
    for cfg in (
        RouteConfig(route="reeval"),
        RouteConfig(crt_scheme="product_tree"),
        RouteConfig(route="reeval", crt_scheme="product_tree"),
    ):
        worst = max(worst, base.tv_distance(run(inst, cfg).z_distribution))
    ok = worst <= 1e-9
    msg = f"max total variation across routes and CRT schemes {worst:.1e}"
    return ok, msg if ok else "route equivalence: " + msg


def _suite_invariance(inst, seed):
    rng = np.random.default_rng(seed)
    base = run_jfree(inst).z_distribution
    worst = 0.0
    for _ in range(5):
        v = tuple(int(x) for x in rng.integers(0, inst.M2, size=inst.n))
        worst = max(worst, base.max_abs_diff(run_jfree(inst.replace(v_star=v)).z_distribution))
    for _ in range(5):
        a, b, c = (int(x) for x in rng.integers(0, inst.M2, size=3))
        worst = max(worst, base.max_abs_diff(run_reeval(inst.replace(a=a, b=b, c=c)).z_distribution))
    ok = worst <= 1e-9
    msg = f"5 offsets and 5 envelopes, max probability change {worst:.1e}"
    return ok, msg if ok else "offset/phase invariance: " + msg


_SUITE_FNS = {
    "orthogonality": _suite_orthogonality,
    "factorization": _suite_factorization,
    "injectivity": _suite_injectivity,
    "counts": _suite_counts,
    "routes": _suite_routes,
    "invariance": _suite_invariance,
}


def cmd_verify(args) -> int:
    inst = _instance(args)
    chosen = []
    for s in args.suite or ["all"]:
        chosen += list(SUITES) if s == "all" else [s]
    failed = 0
    for name in dict.fromkeys(chosen):
        try:
            ok, msg = _SUITE_FNS[name](inst, args.seed)
        except AccessibilityViolation as exc:
            ok, msg = False, f"residue accessibility: {exc}"
        print(f"{'PASS' if ok else 'FAIL'} {name}: {msg}")
        failed += not ok
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_sample(args) -> int:
    inst = _instance(args)
    if args.count < 1:
        raise InstanceError("--count must be >= 1")
    res = run(inst, _route_config(args))
    samples = sample_outcomes(res, args.count, args.seed)
    rep = uniformity_test(samples, enumerate_annihilator(inst))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"u_{i + 1}" for i in range(inst.n)])
    w.writerows(samples)
    report = {"schema_version": SCHEMA_VERSION, "seed": args.seed, **rep.as_dict()}
    if args.out is not None:
        _emit(buf.getvalue(), args.out / "samples.csv")
        _emit(_dump(report), args.out / "uniformity.json")
    print(
        f"samples={rep.samples} violations={len(rep.violations)} "
        f"violation_rate={rep.violation_rate:.4f} chi2={rep.chi2:.3f} p_value={rep.p_value:.4g}"
    )
    return EXIT_OK


def cmd_demo(args) -> int:
    inst = _instance(args)
    rep = demo_domain_extension_failure(inst, args.periods)
    if args.out is not None:
        _emit(_dump({"schema_version": SCHEMA_VERSION, **rep}), args.out / "extension_failure.json")
    print(
        f"support={rep['support_size']} annihilator={rep['annihilator_size']} "
        f"violations={rep['violation_count']} missing={rep['missing_count']}"
    )
    for u in rep["violations"][: args.show]:
        print("violation", ",".join(map(str, u)))
    return EXIT_OK


def cmd_approx_qft(args) -> int:
    inst = _instance(args)
    state = run_jfree(inst).final_state
    rows = []
    for eps in args.epsilon:
        if not 0.0 <= eps <= 0.1:
            raise InstanceError(f"epsilon must lie in [0, 0.1], got {eps}")
        rows.append(approx_qft_experiment(inst, eps, state, args.seed).as_dict())
    if args.out is not None:
        _emit(_dump({"schema_version": SCHEMA_VERSION, "seed": args.seed, "rows": rows}), args.out / "approx_qft.json")
    print("epsilon,measured_norm,leakage,bound,within_bound")
    for r in rows:
        print(f"{r['epsilon']},{r['measured_norm']:.6g},{r['leakage']:.6g},{r['bound']:.6g},{int(r['within_bound'])}")
    return EXIT_OK if all(r["within_bound"] for r in rows) else EXIT_VERIFY


def cmd_bench(args) -> int:
    inst = _instance(args)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = None
    for route in ROUTES:
        for scheme in CRT_SCHEMES:
            log = run(inst, RouteConfig(route=route, crt_scheme=scheme)).gate_log
            counts = log.as_dict()
            if header is None:
                header = list(counts)
                w.writerow(["route", "crt_scheme", *header, "total"])
            w.writerow([route, scheme, *(counts[k] for k in header), log.total])
    _emit(buf.getvalue(), None if args.out is None else args.out / "gate_counts.csv")
    if args.out is not None:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pairshift", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a random valid instance config")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--primes", type=_int_list, required=True)
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--chen", action="store_true", help="pin b_1 = p_2...p_k")
    p.add_argument("--force-accessible", action="store_true")
    p.add_argument("--force-inaccessible", type=int, metavar="P", help="make every b_i a multiple of P")
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("run", help="execute a route and export the Z distribution")
    _add_instance_source(p)
    _add_route_flags(p)
    p.add_argument("--out", type=Path, help="directory for result.json, distribution.csv, gate_log.json")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify", help="run invariant suites")
    _add_instance_source(p)
    p.add_argument("--suite", action="append", choices=SUITES + ("all",))
    p.add_argument("--seed", type=int, default=0, help="seed for the invariance sweep")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("sample", help="draw seeded samples and test uniformity")
    _add_instance_source(p)
    _add_route_flags(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("demo-extension-failure", help="model the one-coordinate domain extension")
    _add_instance_source(p)
    p.add_argument("--periods", type=int, help="extended length in units of P (default D^2)")
    p.add_argument("--show", type=int, default=10, help="violations to print")
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_demo)

    p = sub.add_parser("approx-qft", help="leakage under an epsilon-perturbed QFT")
    _add_instance_source(p)
    p.add_argument("--epsilon", type=_float_list, default=(0.0, 0.001, 0.005, 0.01))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_approx_qft)

    p = sub.add_parser("bench-gates", help="gate counts per route and CRT scheme")
    _add_instance_source(p)
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except AccessibilityViolation as exc:
        print(f"error: {exc}. Try --fallback partial or --fallback postselect.", file=sys.stderr)
        return EXIT_ACCESS
    except SupportTooLarge as exc:
        print(f"error: {exc}. Use a smaller instance (brute force needs M2^n <= 2^20).", file=sys.stderr)
        return EXIT_SUPPORT
    except (InstanceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
