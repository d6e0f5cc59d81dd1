"""Command line front end.

    kgscatter run --config scenario.toml [--out DIR] [--stages a,b] [--seed N]
                  [--k-override K] [--tol-scale X]
    kgscatter {reduce,riccati,frame,evolve,validate,wavepacket} --config ...
    kgscatter state --which {vac,ref,in,out} --config ...
    kgscatter converge --direction {out,in} --samples lo:hi:n --config ...

Stages run in the order reduce, powers, riccati, frame, evolve, states,
microlocal, report.  Upstream artifacts are cached under
``OUT/cache/<config hash>/`` and rebuilt when missing.  ``report.json`` is
deterministic for a fixed configuration: it carries no timestamps and every
float is written with 12 significant digits.  Timings go to ``run.log``.
"""

import argparse
import json
import logging
import math
import pickle
import subprocess
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .basis import SampledFamily, TimeGrid, make_basis
from .config import STAGES, Config, load_config, parse_samples
from .diagonalization import build_frame, check_factorization, check_symplectic_frame
from .errors import InvalidConfig, KGError
from .evolution import EvolutionOptions, check_symplectic, evolve_path, symplectic_inverse
from .geometry import (SpacetimeSpec, check_positivity, flow_of_shift, reduce_to_model,
                       verify_td_decay)
from .microlocal import PhasePoint, make_wavepacket, propagation_test
from .operator import (default_window, frac_power_quadrature, power_difference_decay,
                       weighted_power)
from .riccati import enforce_gap, residual_decay, riccati_iterate, riccati_residual
from .diagonalization import q_matrix
from .states import (covariance_distance, hadamard_difference,
                     reference_covariances, scattering_covariances, state_report,
                     vacuum_covariances, validate_state)

log = logging.getLogger("kgscatter")


def version_string() -> str:
    """``git describe``-style version, falling back to the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--tags", "--dirty"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def pin(obj):
    """Recursively convert to JSON-safe values with 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): pin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [pin(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.12g}")
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "as_dict"):
        return pin(obj.as_dict())
    return str(obj)


def dump_json(obj) -> str:
    return json.dumps(pin(obj), sort_keys=True, indent=2) + "\n"


class Pipeline:
    """Runs stages with a content-addressed artifact cache."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.out = Path(cfg["run"]["out"])
        self.cache_dir = self.out / "cache" / cfg.hash()
        self.art: Dict[str, object] = {}
        self.report: Dict[str, object] = {}
        self.opts = EvolutionOptions(rtol=cfg["tolerances"]["rtol"])

    # -- cache ------------------------------------------------------------
    def _load(self, name):
        path = self.cache_dir / f"{name}.pkl"
        if path.exists():
            with open(path, "rb") as fh:
                obj = pickle.load(fh)
            log.info("cache hit: %s", name)
            return obj
        return None

    def _save(self, name, obj):
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        with open(self.cache_dir / f"{name}.pkl", "wb") as fh:
            pickle.dump(obj, fh)

    def _store(self, name, artifact, rep):
        self.art[name] = artifact
        self.report[name] = rep
        self._save(name, (artifact, rep))

    def need_artifact(self, name):
        if name not in self.art:
            cached = self._load(name)
            if cached is not None:
                self.art[name], self.report[name] = cached
            else:
                getattr(self, f"stage_{name}")()
        return self.art[name]

    # -- stages -------------------------------------------------------------
    def stage_reduce(self):
        c = self.cfg
        spec = SpacetimeSpec.from_dict(c["spacetime"])
        basis = make_basis(c["basis"]["K"], spec.L)
        g = c["grid"]
        grid = TimeGrid(g["t_min"], g["t_max"], g["n_nodes"])
        flow = flow_of_shift(spec, grid, basis)
        model = reduce_to_model(spec, flow, basis, grid)
        m2 = check_positivity(spec, model)
        lo, hi = c["riccati"]["decay_window"]
        td = verify_td_decay(model, (lo, hi), c["riccati"]["decay_samples"])
        rep = {"m2": m2, "N": basis.N, "K": basis.K, "delta": spec.delta,
               "td_decay": {k: v for k, v in td.items()}}
        self._store("reduce", model, rep)

    def stage_powers(self):
        model = self.need_artifact("reduce")
        W0, a0, _ = model.at(0.0)
        eig = weighted_power(a0, W0, 0.5)
        quad = frac_power_quadrature(a0, W0, 0.5, 128)
        diff = float(np.linalg.norm(eig - quad, 2) / np.linalg.norm(eig, 2))
        lo, hi = self.cfg["riccati"]["decay_window"]
        ts = np.geomspace(lo, hi, self.cfg["riccati"]["decay_samples"])
        mats = [model.at(t) for t in ts]
        fa = SampledFamily(ts, np.array([m[1] for m in mats]))
        fw = SampledFamily(ts, np.array([m[0] for m in mats]))
        fit = power_difference_decay(fa, model.a_out, 0.5, fw, model.W_out, (lo, hi))
        rep = {"sqrt_eig_vs_quadrature": diff, "eps_decay": fit,
               "pass": bool(diff <= 1e-6 and fit.gamma >= model.delta - 0.2)}
        self._store("powers", None, rep)

    def stage_riccati(self):
        model = self.need_artifact("reduce")
        c = self.cfg
        sol = riccati_iterate(model, c["riccati"]["n_max"])
        enforce_gap(sol, model, c["tolerances"]["gap_floor"])
        res = riccati_residual(sol, model)
        lo, hi = c["riccati"]["decay_window"]
        ts = np.geomspace(lo, hi, c["riccati"]["decay_samples"])
        dec = residual_decay(model, ts, c["riccati"]["n_max"], (lo, hi))
        rep = {"n_iter": sol.n_iter, "gap_floor": sol.gap_floor, "clamp_active": sol.clamp_active,
               "max_residual": float(res.norms.max()),
               "smoothing": res.smoothing.as_dict() if res.smoothing else None,
               "residual_decay": dec}
        self._store("riccati", sol, rep)

    def stage_frame(self):
        model = self.need_artifact("reduce")
        sol = self.need_artifact("riccati")
        frame = build_frame(sol, model)
        hamon = check_symplectic_frame(frame)
        fact = check_factorization(sol, model, probes=2, seed=self.cfg["run"]["seed"])
        rep = {"hamon_residual": hamon, "factorization_residual": fact,
               "pass": bool(hamon <= 1e-8)}
        self._store("frame", frame, rep)

    def stage_evolve(self):
        model = self.need_artifact("reduce")
        c = self.cfg
        rng = np.random.default_rng(c["run"]["seed"])
        span = min(c["evolve"]["span"], c["grid"]["t_max"])
        pairs = rng.uniform(-span, span, size=(c["evolve"]["pairs"], 2))
        times = sorted(set(np.round(pairs.ravel(), 12).tolist()))
        path = evolve_path(model, 0.0, times, self.opts)
        N = model.basis.N
        q = q_matrix(N)
        W0 = model.at(0.0)[0]
        worst = 0.0
        for t, s in np.round(pairs, 12):
            Ut, Us = path[float(t)], path[float(s)]
            Wt, Ws = model.at(t)[0], model.at(s)[0]
            U = Ut @ symplectic_inverse(Us, Ws, W0)
            worst = max(worst, check_symplectic(U, q, Wt, Ws))
        rep = {"pairs": len(pairs), "rtol": self.opts.rtol, "max_symplectic_residual": worst,
               "pass": bool(worst <= 1e-6)}
        self._store("evolve", None, rep)

    def _covariances(self, which: str):
        model = self.need_artifact("reduce")
        c = self.cfg
        st = c["states"]
        if which == "vac":
            return vacuum_covariances(model.a_out, model.basis, model.W_out), None
        if which == "ref":
            frame = self.need_artifact("frame")
            return reference_covariances(frame, st["t_ref"], model, c["riccati"]["n_max"]), None
        samples = parse_samples(st["samples"])
        return scattering_covariances(model, which, samples, self.opts, st["scheme"],
                                      c["riccati"]["n_max"], st["n_source"])

    def stage_states(self, which: Optional[List[str]] = None):
        model = self.need_artifact("reduce")
        st = self.cfg["states"]
        which = list(which or ["vac", "ref"] + list(st["directions"]))
        covs, reps, traces = {}, {}, {}
        for w in which:
            cov, trace = self._covariances(w)
            covs[w] = cov
            traces[w] = trace
        ref = covs.get("ref")
        win = tuple(st["hadamard_window"]) or default_window(model.basis.K)
        name = self.cfg["scenario"]["name"]
        tol = self.cfg["tolerances"]
        for w, cov in covs.items():
            had = None
            if ref is not None and w in ("in", "out"):
                had = hadamard_difference(cov, ref, model.basis, win, tol["p_threshold"],
                                          tol["r2_min"])
            reps[w] = state_report(name, cov, validate_state(cov), traces[w], had)
        if "vac" in covs and "ref" in covs:
            reps["vac_ref_distance"] = covariance_distance(covs["vac"], covs["ref"])
        self.out.mkdir(parents=True, exist_ok=True)
        for w, tr in traces.items():
            if tr is not None:
                (self.out / f"convergence_{w}.csv").write_text(
                    "t,increment\n" + "".join(f"{t:.12g},{d:.12g}\n" for t, d in tr.rows()))
        full = which == ["vac", "ref"] + list(st["directions"])
        self._store("states" if full else "state_" + "-".join(which), covs, reps)

    def stage_microlocal(self):
        model = self.need_artifact("reduce")
        mc = self.cfg["microlocal"]
        frame = self.need_artifact("frame")
        cref = reference_covariances(frame, mc["t_launch"], model, self.cfg["riccati"]["n_max"])
        wp = make_wavepacket(model.basis, PhasePoint(mc["x0"], mc["k0"]), mc["sigma"],
                             mc["sign"], cref, mc["t_launch"])
        rep = propagation_test(model, wp, mc["t_final"], self.opts)
        ctrl = propagation_test(model, wp, mc["t_final"], self.opts, flow_sign=-mc["sign"])
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "wavepacket.csv").write_text(
            "t,x_center,k_mean,leakage\n" +
            "".join(f"{t:.12g},{x:.12g},{k:.12g},{l:.12g}\n" for t, x, k, l in rep.rows))
        out = rep.as_dict()
        out["leakage"] = wp.leakage
        out["negative_control"] = {"dx": ctrl.dx, "fails": not ctrl.passed}
        self._store("microlocal", None, out)

    def stage_report(self):
        pass

    # -- orchestration ---------------------------------------------------------
    def run(self, stages: List[str]) -> dict:
        for name in stages:
            if name == "report":
                continue
            t0 = time.perf_counter()
            log.info("stage %s: start", name)
            cached = self._load(name)
            if cached is not None:
                self.art[name], self.report[name] = cached
            else:
                getattr(self, f"stage_{name}")()
            log.info("stage %s: done in %.2f s", name, time.perf_counter() - t0)
        return self.report

    def document(self, extra: Optional[dict] = None) -> dict:
        doc = {"version": version_string(), "config_hash": self.cfg.hash(),
               "scenario": self.cfg["scenario"]["name"], "tolerances": self.cfg["tolerances"],
               "seed": self.cfg["run"]["seed"], "stages": self.report}
        if extra:
            doc.update(extra)
        return doc

    def write_report(self, extra: Optional[dict] = None) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / "report.json"
        path.write_text(dump_json(self.document(extra)))
        return path


SUBCOMMAND_STAGES = {
    "reduce": ["reduce"],
    "riccati": ["reduce", "riccati"],
    "frame": ["reduce", "riccati", "frame"],
    "evolve": ["reduce", "evolve"],
    "wavepacket": ["reduce", "riccati", "frame", "microlocal"],
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario TOML file")
    common.add_argument("--out", default=None, help="output directory (overrides run.out)")
    common.add_argument("--stages", default=None, help="comma separated stage list")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--k-override", type=int, default=None, help="replace basis.K")
    common.add_argument("--tol-scale", type=float, default=None,
                        help="multiply the integration tolerance")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kgscatter", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"kgscatter {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the configured stages")
    for name in SUBCOMMAND_STAGES:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    st = sub.add_parser("state", parents=[common], help="build one covariance pair")
    st.add_argument("--which", choices=["vac", "ref", "in", "out"], required=True)
    cv = sub.add_parser("converge", parents=[common], help="scattering convergence trace")
    cv.add_argument("--direction", choices=["out", "in"], default="out")
    cv.add_argument("--samples", default=None, help="lo:hi:n geometric sample times")
    sub.add_parser("validate", parents=[common], help="validate all covariances")
    return p


def _setup_logging(out: Path, verbose: bool):
    out.mkdir(parents=True, exist_ok=True)
    log.handlers.clear()
    log.setLevel(logging.INFO)
    fh = logging.FileHandler(out / "run.log", mode="a")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(fh)
    sh = logging.StreamHandler(sys.stderr)
    sh.setLevel(logging.INFO if verbose else logging.WARNING)
    log.addHandler(sh)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        stages = args.stages.split(",") if args.stages else None
        cfg = cfg.with_overrides(args.k_override, args.tol_scale, args.seed, stages, args.out)
    except InvalidConfig as exc:
        field = exc.details.get("field")
        where = f" [{field}]" if field else ""
        print(f"configuration error{where}: {exc}", file=sys.stderr)
        return 2
    pipe = Pipeline(cfg)
    _setup_logging(pipe.out, args.verbose)
    extra = {}
    stage = None
    try:
        cmd = args.command
        if cmd == "run":
            for stage in cfg.stages:
                pipe.run([stage])
        elif cmd in SUBCOMMAND_STAGES:
            for stage in SUBCOMMAND_STAGES[cmd]:
                pipe.run([stage])
        elif cmd == "state":
            stage = "states"
            pipe.run(["reduce"])
            pipe.stage_states([args.which])
        elif cmd == "converge":
            stage = "states"
            model = pipe.need_artifact("reduce")
            st = cfg["states"]
            samples = parse_samples(args.samples or st["samples"])
            _, trace = scattering_covariances(model, args.direction, samples, pipe.opts,
                                              st["scheme"], cfg["riccati"]["n_max"],
                                              st["n_source"])
            pipe.out.mkdir(parents=True, exist_ok=True)
            csv = pipe.out / f"convergence_{args.direction}.csv"
            csv.write_text("t,increment\n" +
                           "".join(f"{t:.12g},{d:.12g}\n" for t, d in trace.rows()))
            extra["convergence"] = {"direction": args.direction, "gamma": trace.fit.gamma,
                                    "r_squared": trace.fit.r_squared,
                                    "samples": len(trace.times)}
        elif cmd == "validate":
            for stage in ["reduce", "riccati", "frame", "states"]:
                pipe.run([stage])
    except KGError as exc:
        failing = stage or "unknown"
        log.error("stage %s failed (%s): %s", failing, exc.code, exc)
        extra["error"] = {"stage": failing, "code": exc.code, "message": str(exc)}
        pipe.write_report(extra)
        return 3
    path = pipe.write_report(extra)
    log.info("report written to %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
