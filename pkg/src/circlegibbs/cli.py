"""Command-line front end for reproducible batch runs.

Every run writes a manifest (the effective config, the root seed, the
package version, and the planned output names) before any result file, so
each output is reachable from exactly one manifest and re-running a
manifest reproduces the results bit for bit.  Options can come from a JSON
config file; command-line flags win.

Exit codes: 2 invalid configuration, 3 rejection budget exhausted,
4 inversion cutoffs too small, 5 integrator instability.

Default output directory: --out, else $CIRCLEGIBBS_OUTPUT_DIR, else ./runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .field import AreaRule, Nonlinearity
from .sampling import SamplerConfig, sample_loop_areas
from .density import (CharFnSpec, CutoffTooSmall, DensityGrid, chi2_convolve_mass,
                      invert_density, marginal_momentum_density, positivity_report)
from .conditioning import (BudgetExhausted, ConditioningSpec, Ensemble,
                           epsilon_sweep, sample_conditioned)
from .gibbs import (DegenerateWeights, GibbsSpec, InsufficientTailEvents,
                    estimate_partition, expectation_mu, hs_tail_check,
                    large_deviation_check, tail_check)
from .flow import (ConservationTrace, FlowSpec, Instability, MismatchedSpec,
                   evolve, invariance_test, levy_area_conservation_probe)

EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_CUTOFF = 4
EXIT_UNSTABLE = 5


class ConfigError(Exception):
    pass


def _output_dir(args) -> Path:
    out = args.out or os.environ.get("CIRCLEGIBBS_OUTPUT_DIR") or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _merge_config(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """Effective config = defaults, overlaid by config file, overlaid by flags."""
    cfg = dict(parser_defaults)
    file_cfg = {}
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(parser_defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in parser_defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _run_id(command: str, cfg: dict) -> str:
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _write_manifest(out_dir: Path, command: str, cfg: dict, outputs: list[str]) -> Path:
    rid = _run_id(command, cfg)
    manifest = {
        "run_id": rid,
        "command": command,
        "version": __version__,
        "root_seed": cfg.get("seed"),
        "config": cfg,
        "outputs": outputs,
    }
    path = out_dir / f"manifest_{rid}.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def _nonlinearity(name: str) -> Nonlinearity:
    try:
        return Nonlinearity(name)
    except ValueError:
        raise ConfigError(f"sign must be focusing or defocusing, not {name!r}")


def _conditioning_from(cfg) -> ConditioningSpec | None:
    given = [cfg.get(k) is not None for k in ("a", "b", "eps")]
    if not any(given):
        return None
    if not all(given):
        raise ConfigError(
            "ConditioningSpec needs all of --a, --b, --eps (target mass, "
            "target momentum, window half-width)")
    try:
        return ConditioningSpec(cfg["a"], cfg["b"], cfg["eps"])
    except ValueError as exc:
        raise ConfigError(f"ConditioningSpec: {exc}")


def cmd_sample(args, defaults) -> int:
    cfg = _merge_config(args, defaults)
    out = _output_dir(args)
    spec = _conditioning_from(cfg)
    rid = _run_id("sample", cfg)
    names = [f"ensemble_{rid}.bin", f"observables_{rid}.csv"]
    _write_manifest(out, "sample", cfg, names)
    sampler = SamplerConfig(cutoff=cfg["cutoff"], seed=cfg["seed"], stream_id=0)
    if spec is None:
        from .sampling import sample_wiener
        fields = sample_wiener(sampler, count=cfg["n"])
        ens = Ensemble(tuple(fields), np.full(cfg["n"], 1.0 / cfg["n"]), None,
                       {"seed": cfg["seed"], "method": "unconditioned",
                        "cutoff": cfg["cutoff"], "attempts": cfg["n"],
                        "acceptance_rate": 1.0})
    else:
        ens = sample_conditioned(spec, cfg["n"], sampler,
                                 max_attempts=cfg["max_attempts"],
                                 workers=cfg["workers"],
                                 allow_fallback=cfg["fallback"])
    ens.save(out / names[0])
    ens.observables_to_csv(out / names[1])
    print(f"wrote {names[0]} ({len(ens)} fields, acceptance "
          f"{ens.provenance['acceptance_rate']:.4g}, method {ens.provenance['method']})")
    return 0


def cmd_density(args, defaults) -> int:
    cfg = _merge_config(args, defaults)
    out = _output_dir(args)
    rid = _run_id("density", cfg)
    spec = CharFnSpec(tail_start=cfg["tail_start"], product_cutoff=cfg["product_cutoff"])
    if cfg["marginal"] == "momentum":
        names = [f"marginal_{rid}.csv"]
        _write_manifest(out, "density", cfg, names)
        marg = marginal_momentum_density(spec, bm_mode=cfg["bm_mode"])
        with open(out / names[0], "w") as fh:
            fh.write("b,density\n")
            for b, d in zip(marg.b_axis, marg.density):
                fh.write(f"{b:.12g},{d:.12g}\n")
        print(f"marginal integral = {marg.integral():.6f}")
        if cfg["bm_mode"]:
            var = float(np.trapezoid(marg.b_axis ** 2 * marg.density, marg.b_axis))
            scale = np.sqrt(3.0 * var) / np.pi
            ref = (1.0 / (4.0 * scale)) / np.cosh(marg.b_axis / (2.0 * scale)) ** 2
            sup = float(np.max(np.abs(marg.density - ref)))
            print(f"sech^2 comparison: fitted scale {scale:.6f}, sup-norm {sup:.3e}")
        return 0
    names = [f"grid_{rid}.bin", f"grid_{rid}.csv"]
    _write_manifest(out, "density", cfg, names)
    grid = invert_density(spec)
    grid.to_binary(out / names[0])
    grid.to_csv(out / names[1])
    print(f"normalization {grid.meta['normalization']:.6f}, "
          f"symmetry defect {grid.meta['symmetry_defect']:.2e}, "
          f"ringing {grid.meta['ringing_amplitude']:.2e}")
    if cfg["check_convolution"]:
        finer = invert_density(CharFnSpec(tail_start=cfg["tail_start"] + 1,
                                          product_cutoff=cfg["product_cutoff"]))
        conv = chi2_convolve_mass(finer, grid.a_axis)
        cols = np.searchsorted(finer.b_axis, grid.b_axis[::16])
        sup = float(np.max(np.abs(conv[:, cols] - grid.values[:, ::16])))
        ok = sup < 5e-3
        print(f"convolution consistency sup-defect {sup:.3e}: {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    return 0


def cmd_condition_sweep(args, defaults) -> int:
    cfg = _merge_config(args, defaults)
    out = _output_dir(args)
    rid = _run_id("condition-sweep", cfg)
    names = [f"sweep_{rid}.csv"]
    _write_manifest(out, "condition-sweep", cfg, names)
    eps_list = [float(x) for x in cfg["eps_list"].split(",")]
    sweep = epsilon_sweep(cfg["observable"], cfg["a"], cfg["b"], eps_list,
                          cfg["n"], SamplerConfig(cfg["cutoff"], cfg["seed"], 0),
                          max_attempts=cfg["max_attempts"])
    (out / names[0]).write_text(sweep.as_table() + "\n")
    print(f"extrapolated {sweep.observable} = {sweep.extrapolated:.6g} "
          f"+- {sweep.extrapolated_ci:.2g}")
    return 0


def cmd_gibbs(args, defaults) -> int:
    cfg = _merge_config(args, defaults)
    out = _output_dir(args)
    rid = _run_id("gibbs", cfg)
    names = [f"gibbs_{rid}.json"]
    _write_manifest(out, "gibbs", cfg, names)
    gspec = GibbsSpec(cfg["p"], _nonlinearity(cfg["sign"]), cfg["a"], cfg["b"], cfg["eps"])
    ens = sample_conditioned(gspec.conditioning(), cfg["n"],
                             SamplerConfig(cfg["cutoff"], cfg["seed"], 0),
                             max_attempts=cfg["max_attempts"], workers=cfg["workers"])
    part = estimate_partition(ens, gspec)
    from .field import mass as obs_mass
    exp_mass = expectation_mu(obs_mass, ens, gspec)
    payload = {"partition": {"z": part.z, "ci": part.ci, "ess": part.ess},
               "mass_expectation": {"value": exp_mass.value, "ci": exp_mass.ci}}
    (out / names[0]).write_text(json.dumps(payload, indent=1))
    print(f"Z = {part.z:.6f} +- {part.ci:.2g} (ESS {part.ess:.0f})")
    return 0


def cmd_tails(args, defaults) -> int:
    cfg = _merge_config(args, defaults)
    out = _output_dir(args)
    rid = _run_id("tails", cfg)
    names = [f"tails_{rid}.json"]
    _write_manifest(out, "tails", cfg, names)
    sampler = SamplerConfig(cfg["cutoff"], cfg["seed"], 0)
    if cfg["kind"] == "deviation":
        spec = _conditioning_from(cfg)
        r_list = [float(x) for x in cfg["r_list"].split(",")]
        rep = large_deviation_check(cfg["window_m"], cfg["window_n"], r_list, spec,
                                    sampler, samples=cfg["n"])
        payload = {
            "points": [{"r": p.r, "survival": p.survival, "rel_error": p.rel_error,
                        "oracle": p.oracle} for p in rep.points],
            "fitted_log_c": rep.fitted_log_c, "verdict": rep.verdict, "meta": rep.meta,
        }
    else:
        gspec = GibbsSpec(cfg["p"], _nonlinearity(cfg["sign"]), cfg["a"], cfg["b"], cfg["eps"])
        ens = sample_conditioned(gspec.conditioning(), cfg["n"], sampler,
                                 max_attempts=cfg["max_attempts"], workers=cfg["workers"])
        lam = [float(x) for x in cfg["lambdas"].split(",")]
        if cfg["kind"] == "lp":
            rep = tail_check(gspec, lam, ens)
            payload = {
                "lambdas": list(rep.lambdas),
                "survival": [{"threshold": p.threshold, "probability": p.probability,
                              "std_error": p.std_error, "exceedances": p.exceedances}
                             for p in rep.survival],
                "exponent": rep.envelope_exponent,
                "fit": {"rate": rep.fit.rate, "log_c": rep.fit.log_c,
                        "r_squared": rep.fit.r_squared},
                "verdict": rep.verdict,
            }
        else:
            rep = hs_tail_check(cfg["s"], lam, ens)
            payload = {
                "s": rep.s,
                "survival": [{"threshold": p.threshold, "probability": p.probability,
                              "exceedances": p.exceedances} for p in rep.survival],
                "fit": {"rate": rep.fit.rate, "r_squared": rep.fit.r_squared},
                "verdict": rep.verdict,
            }
    (out / names[0]).write_text(json.dumps(payload, indent=1))
    print(f"verdict: {'PASS' if payload['verdict'] else 'FAIL'}")
    return 0 if payload["verdict"] else 1


def cmd_evolve(args, defaults) -> int:
    cfg = _merge_config(args, defaults)
    out = _output_dir(args)
    rid = _run_id("evolve", cfg)
    names = [f"trace_{rid}.csv"]
    _write_manifest(out, "evolve", cfg, names)
    flow = FlowSpec(p=cfg["p"], sign=_nonlinearity(cfg["sign"]),
                    galerkin_cutoff=cfg["cutoff"], dt=cfg["dt"], t_final=cfg["t_final"])
    from .sampling import sample_wiener
    field = sample_wiener(SamplerConfig(cfg["cutoff"], cfg["seed"], 0))
    res = evolve(field, flow, trace_stride=cfg["stride"])
    res.trace.to_csv(out / names[0])
    print(f"mass drift {res.trace.mass_drift_rel():.3e}, "
          f"momentum drift {res.trace.momentum_drift_abs():.3e}, "
          f"energy drift {res.trace.hamiltonian_drift_rel():.3e}")
    return 0


def cmd_invariance(args, defaults) -> int:
    cfg = _merge_config(args, defaults)
    out = _output_dir(args)
    rid = _run_id("invariance", cfg)
    names = [f"invariance_{rid}.json"]
    _write_manifest(out, "invariance", cfg, names)
    sign = _nonlinearity(cfg["sign"])
    gspec = GibbsSpec(cfg["p"], sign, cfg["a"], cfg["b"], cfg["eps"])
    ens = sample_conditioned(gspec.conditioning(), cfg["n"],
                             SamplerConfig(cfg["cutoff"], cfg["seed"], 0),
                             max_attempts=cfg["max_attempts"], workers=cfg["workers"])
    if cfg["t_final"] == 0:
        payload = {"ks_distances": {}, "verdict": True,
                   "note": "T = 0: start and end samples are identical"}
        print("T = 0: all KS distances 0; verdict: PASS")
    else:
        flow = FlowSpec(p=cfg["p"], sign=sign, galerkin_cutoff=cfg["cutoff"],
                        dt=cfg["dt"], t_final=cfg["t_final"])
        rep = invariance_test(ens, gspec, flow, permutations=cfg["permutations"],
                              seed=cfg["seed"])
        for line in rep.summary_lines():
            print(line)
        payload = {"ks_distances": rep.ks_distances,
                   "critical_values": rep.critical_values,
                   "drift": rep.drift, "verdict": rep.verdict, "meta": rep.meta}
    (out / names[0]).write_text(json.dumps(payload, indent=1))
    return 0 if payload["verdict"] else 1


def cmd_audit(args, defaults) -> int:
    out = _output_dir(args)
    manifests = sorted(out.glob("manifest_*.json"))
    claimed: dict[str, list[str]] = {}
    for mpath in manifests:
        data = json.loads(mpath.read_text())
        for name in data.get("outputs", []):
            claimed.setdefault(name, []).append(mpath.name)
    problems = []
    for name, owners in claimed.items():
        if len(owners) > 1:
            problems.append(f"{name} claimed by {len(owners)} manifests: {owners}")
        if not (out / name).exists():
            problems.append(f"{name} claimed by {owners[0]} but missing")
    for path in sorted(out.iterdir()):
        if path.name.startswith("manifest_") or path.is_dir():
            continue
        if path.name not in claimed:
            problems.append(f"orphan output {path.name}")
    if problems:
        for p in problems:
            print(p)
        return 1
    print(f"audit clean: {len(manifests)} manifests, {len(claimed)} outputs")
    return 0


def _add_common(sp, *, seed=7, cutoff=256, n=1000):
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--config", help="JSON config file (flags win)")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--cutoff", type=int, default=None)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--max-attempts", dest="max_attempts", type=int, default=None)
    sp.add_argument("--workers", type=int, default=None)
    return {"seed": seed, "cutoff": cutoff, "n": n,
            "max_attempts": 20_000_000, "workers": 1}


def _add_conditioning(sp, defaults):
    sp.add_argument("--a", type=float, default=None, help="target mass")
    sp.add_argument("--b", type=float, default=None, help="target momentum")
    sp.add_argument("--eps", type=float, default=None, help="window half-width")
    defaults.update({"a": None, "b": None, "eps": None})


def _add_gibbs(sp, defaults):
    sp.add_argument("--p", type=float, default=None)
    sp.add_argument("--sign", choices=["focusing", "defocusing"], default=None)
    sp.add_argument("--focusing", dest="sign", action="store_const", const="focusing")
    sp.add_argument("--defocusing", dest="sign", action="store_const", const="defocusing")
    defaults.update({"p": 4.0, "sign": "defocusing"})


def build_parser():
    parser = argparse.ArgumentParser(prog="circlegibbs", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    table = {}

    sp = sub.add_parser("sample", help="draw a (conditioned) ensemble")
    d = _add_common(sp)
    _add_conditioning(sp, d)
    sp.add_argument("--fallback", action="store_true", default=None)
    d["fallback"] = False
    table["sample"] = (cmd_sample, d, sp)

    sp = sub.add_parser("density", help="invert the joint density or a marginal")
    d = _add_common(sp)
    sp.add_argument("--tail-start", dest="tail_start", type=int, default=None)
    sp.add_argument("--product-cutoff", dest="product_cutoff", type=int, default=None)
    sp.add_argument("--marginal", choices=["momentum"], default=None)
    sp.add_argument("--bm-mode", dest="bm_mode", action="store_true", default=None)
    sp.add_argument("--check-convolution", dest="check_convolution",
                    action="store_true", default=None)
    d.update({"tail_start": 0, "product_cutoff": 4096, "marginal": None,
              "bm_mode": False, "check_convolution": False})
    table["density"] = (cmd_density, d, sp)

    sp = sub.add_parser("condition-sweep", help="observable mean along shrinking windows")
    d = _add_common(sp)
    _add_conditioning(sp, d)
    sp.add_argument("--eps-list", dest="eps_list", default=None)
    sp.add_argument("--observable", default=None)
    d.update({"eps_list": "0.4,0.2,0.1", "observable": "mass"})
    table["condition-sweep"] = (cmd_condition_sweep, d, sp)

    sp = sub.add_parser("gibbs", help="partition function and Gibbs expectations")
    d = _add_common(sp)
    _add_conditioning(sp, d)
    _add_gibbs(sp, d)
    table["gibbs"] = (cmd_gibbs, d, sp)

    sp = sub.add_parser("tails", help="tail envelope checks")
    d = _add_common(sp)
    _add_conditioning(sp, d)
    _add_gibbs(sp, d)
    sp.add_argument("--kind", choices=["lp", "hs", "deviation"], default=None)
    sp.add_argument("--lambdas", default=None)
    sp.add_argument("--s", type=float, default=None)
    sp.add_argument("--window-m", dest="window_m", type=int, default=None)
    sp.add_argument("--window-n", dest="window_n", type=int, default=None)
    sp.add_argument("--r-list", dest="r_list", default=None)
    d.update({"kind": "lp", "lambdas": "1,1.3,1.7,2.2,2.9", "s": 0.4,
              "window_m": 8, "window_n": 8, "r_list": "14.15,16.97"})
    table["tails"] = (cmd_tails, d, sp)

    sp = sub.add_parser("evolve", help="run the flow on one sample, trace conservation")
    d = _add_common(sp, cutoff=64)
    _add_gibbs(sp, d)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--t-final", "--T", dest="t_final", type=float, default=None)
    sp.add_argument("--stride", type=int, default=None)
    d.update({"dt": 1e-3, "t_final": 1.0, "stride": 100})
    table["evolve"] = (cmd_evolve, d, sp)

    sp = sub.add_parser("invariance", help="distributional invariance harness")
    d = _add_common(sp, cutoff=64, n=2000)
    _add_conditioning(sp, d)
    _add_gibbs(sp, d)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--t-final", "--T", dest="t_final", type=float, default=None)
    sp.add_argument("--permutations", type=int, default=None)
    d.update({"dt": 1e-3, "t_final": 1.0, "permutations": 1000,
              "a": 1.0, "b": 0.0, "eps": 0.1})
    table["invariance"] = (cmd_invariance, d, sp)

    sp = sub.add_parser("audit", help="check manifest/output consistency")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--config", help=argparse.SUPPRESS)
    table["audit"] = (cmd_audit, {}, sp)

    return parser, table


def main(argv=None) -> int:
    parser, table = build_parser()
    args = parser.parse_args(argv)
    handler, defaults, _ = table[args.command]
    try:
        return handler(args, defaults)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExhausted as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except CutoffTooSmall as exc:
        print(f"cutoff too small: {exc}", file=sys.stderr)
        return EXIT_CUTOFF
    except (Instability, MismatchedSpec) as exc:
        print(f"flow error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (DegenerateWeights, InsufficientTailEvents) as exc:
        print(f"estimator degenerate: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
