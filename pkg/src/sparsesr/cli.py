"""Command-line entry point.

This module must stay importable without numpy: the --threads cap only
works if the BLAS environment variables are set before numpy loads, so
main() pre-scans argv, sets them, and only then imports the numeric
parts of the package.

Exit codes: 0 success, 1 usage or configuration failure, 2 data failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from .errors import ConfigError, DataError, NumericsError

_THREAD_KEYS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _prescan_threads(argv: list[str]) -> str | None:
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--threads="):
            return arg.split("=", 1)[1]
    return None


def apply_thread_cap(value: str | None) -> None:
    if value is None:
        return
    try:
        count = int(value)
    except ValueError:
        return  # argparse reports the bad value with a proper usage error
    if count > 0:
        for key in _THREAD_KEYS:
            os.environ[key] = str(count)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser(config_mod) -> _Parser:
    parser = _Parser(prog="sparsesr",
                     description="Variational sparse-representation "
                                 "explorable super-resolution")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, schema in config_mod.SCHEMAS.items():
        p = sub.add_parser(command, help=f"{command} command")
        p.add_argument("--config", default=None,
                       help="flat key=value file or a previous run manifest")
        for spec in schema:
            flag = "--" + spec.name.replace("_", "-")
            if spec.type is bool:
                p.add_argument(flag, dest=spec.name, default=None,
                               type=config_mod.parse_bool,
                               metavar="true|false", help=spec.help)
            else:
                p.add_argument(flag, dest=spec.name, default=None,
                               type=str, help=spec.help)
        p.set_defaults(func=_DISPATCH[command], schema=schema)
    return parser


def _flag_values(ns: argparse.Namespace) -> dict:
    return {spec.name: getattr(ns, spec.name) for spec in ns.schema}


def _resolved(ns: argparse.Namespace):
    from . import config as config_mod

    file_values = (config_mod.read_config_file(ns.config)
                   if ns.config else {})
    flag_values = _flag_values(ns)
    resolved = config_mod.resolve(ns.command, file_values, flag_values)
    if ns.command == "train":
        resolved = config_mod.apply_preset(resolved, file_values, flag_values)
    return resolved


def _precision_mode(resolved: dict):
    import numpy as np

    from .numerics import precision

    return precision(np.float64 if resolved.get("f64") else np.float32)


def _locked_out_dir(resolved: dict):
    from filelock import FileLock, Timeout

    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(out / ".lock")
    try:
        lock.acquire(timeout=1.0)
    except Timeout:
        raise ConfigError(
            f"output directory {out} is locked by another running command")
    return out, lock


def cmd_train(ns: argparse.Namespace) -> int:
    from . import config as config_mod
    from .checkpoint import load_checkpoint
    from .imaging import load_dataset
    from .manifest import build_manifest, write_manifest
    from .model import SparseSRModel
    from .trainer import fine_tune, train

    started = time.time()
    resolved = _resolved(ns)
    model_cfg = config_mod.split_model_config(resolved)
    train_cfg = config_mod.split_train_config(resolved)
    out, lock = _locked_out_dir(resolved)
    try:
        with _precision_mode(resolved):
            images = load_dataset(resolved["data"], model_cfg.scale)
            model = SparseSRModel.initialize(model_cfg, seed=train_cfg.seed)
            train(model, images, train_cfg, out_dir=out)
            if resolved["finetune"]:
                model, adam, _ = load_checkpoint(out / "final.ckpt")
                fine_tune(model, images, train_cfg, out_dir=out, adam=adam)
        outputs = sorted(out.glob("*.ckpt")) + sorted(out.glob("*.jsonl"))
        write_manifest(build_manifest("train", resolved, out, outputs,
                                      started), out)
    finally:
        lock.release()
    print(f"trained {train_cfg.epochs} epochs"
          f"{' + fine-tune' if resolved['finetune'] else ''}; "
          f"checkpoint at {out / 'final.ckpt'}")
    return 0


def cmd_finetune(ns: argparse.Namespace) -> int:
    import dataclasses

    from . import config as config_mod
    from .checkpoint import load_checkpoint
    from .imaging import load_dataset
    from .manifest import build_manifest, write_manifest
    from .trainer import fine_tune

    started = time.time()
    resolved = _resolved(ns)
    train_cfg = config_mod.split_train_config(resolved)
    out, lock = _locked_out_dir(resolved)
    try:
        with _precision_mode(resolved):
            model, adam, meta = load_checkpoint(resolved["checkpoint"])
            # Continue exactly where the baseline stopped.
            train_cfg = dataclasses.replace(train_cfg, epochs=meta["epoch"])
            images = load_dataset(resolved["data"], model.config.scale)
            fine_tune(model, images, train_cfg, out_dir=out, adam=adam)
        outputs = sorted(out.glob("*.ckpt")) + sorted(out.glob("*.jsonl"))
        write_manifest(build_manifest("finetune", resolved, out, outputs,
                                      started), out)
    finally:
        lock.release()
    print(f"fine-tuned {train_cfg.finetune_epochs} epochs; "
          f"checkpoint at {out / 'finetuned.ckpt'}")
    return 0


def cmd_sample(ns: argparse.Namespace) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .imaging import load_png, save_png
    from .manifest import build_manifest, write_manifest
    from .metrics import lr_psnr
    from .model import deterministic_base, super_resolve

    started = time.time()
    resolved = _resolved(ns)
    out, lock = _locked_out_dir(resolved)
    try:
        with _precision_mode(resolved):
            model, _, _ = load_checkpoint(resolved["checkpoint"])
            y = load_png(resolved["image"])
            external = None
            if resolved["external_base"]:
                if model.config.base_mode != "external":
                    raise ConfigError(
                        "--external-base given but the checkpoint's base_mode "
                        f"is {model.config.base_mode!r}")
                external = load_png(resolved["external_base"])
            cem_iters = resolved["cem_iters"] or None
            result = super_resolve(model, y, count=resolved["n_samples"],
                                   seed=resolved["seed"],
                                   external_base=external,
                                   cem_iters=cem_iters)
        base = deterministic_base(y, model.config, external)
        save_png(base, out / "deterministic.png")
        outputs = [out / "deterministic.png"]
        scores = []
        for k, sample in enumerate(result.samples):
            path = out / f"sample_{k:03d}.png"
            save_png(sample, path)
            outputs.append(path)
            scores.append(round(lr_psnr(sample, y, model.config.scale), 4))
        write_manifest(build_manifest("sample", resolved, out, outputs,
                                      started, extra={"lr_psnr": scores}), out)
    finally:
        lock.release()
    print(f"wrote {len(result.samples)} samples to {out} "
          f"(LR PSNR min {min(scores):.2f} dB)")
    return 0


def cmd_eval(ns: argparse.Namespace) -> int:
    from .checkpoint import load_checkpoint
    from .imaging import load_dataset
    from .manifest import build_manifest, write_manifest
    from .metrics import evaluate, write_report

    started = time.time()
    resolved = _resolved(ns)
    out, lock = _locked_out_dir(resolved)
    try:
        with _precision_mode(resolved):
            model, _, _ = load_checkpoint(resolved["checkpoint"])
            images = load_dataset(resolved["data"], model.config.scale)
            if resolved["n_samples"] < 2:
                print("warning: diversity needs at least 2 samples; "
                      "reporting 0", file=sys.stderr)
            report = evaluate(model, images,
                              n_samples=resolved["n_samples"],
                              seed=resolved["seed"],
                              cem_iters=resolved["cem_iters"] or None,
                              map_dir=resolved["map_dir"] or None)
        report_path = out / "report.txt"
        write_report(report, report_path)
        write_manifest(build_manifest("eval", resolved, out, [report_path],
                                      started), out)
    finally:
        lock.release()
    print(f"{'':14s} {'proxy':>10s} {'LR PSNR':>10s} {'Div':>10s}")
    for row in report.rows:
        print(f"{row.name:14s} {row.proxy_perceptual:10.5f} "
              f"{row.lr_psnr:10.2f} {row.diversity:10.3f}")
    print(f"{'aggregate':14s} {report.proxy_perceptual:10.5f} "
          f"{report.lr_psnr:10.2f} {report.diversity:10.3f}")
    return 0


# -- selfcheck ----------------------------------------------------------------

def selfcheck_suite() -> list[tuple[str, float, float]]:
    """Every derived-value oracle as (name, worst error, tolerance)."""
    import numpy as np

    from . import oracles
    from .metrics import diversity_from_maps
    from .model import ModelConfig, SparseSRModel, assemble_residual, sample_coeffs
    from .numerics import (Tensor, conv2d, finite_diff_check, precision,
                           tensor_sum, transposed_conv2d)
    from .objective import PriorParams, kl_loss, prior_logpdf, recon_loss
    from .rng import derive

    checks: list[tuple[str, float, float]] = []

    with precision(np.float64):
        rng = derive(0, "selfcheck-conv")
        x = rng.normal(size=(2, 3, 6, 7))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=(4,))
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
        ref = oracles.conv2d_reference(x, w, b, stride=2, padding=1)
        checks.append(("conv-reference",
                       float(np.abs(got - ref).max() / np.abs(ref).max()), 1e-12))

        xt = rng.normal(size=(2, 4, 3, 3))
        wt = rng.normal(size=(4, 3, 2, 2))
        got_t = transposed_conv2d(Tensor(xt), Tensor(wt), stride=2).data
        ref_t = oracles.transposed_conv2d_reference(xt, wt, stride=2)
        checks.append(("deconv-reference",
                       float(np.abs(got_t - ref_t).max() / np.abs(ref_t).max()),
                       1e-12))

        probe_x = rng.normal(size=(2, 3, 6, 7))

        def forward(v):
            return conv2d(Tensor(v), Tensor(w), padding=1).data

        def vjp(g):
            probe = Tensor(probe_x, requires_grad=True)
            out = conv2d(probe, Tensor(w), padding=1)
            tensor_sum(out * Tensor(g)).backward()
            return probe.grad

        gap = oracles.adjoint_gap(forward, vjp, probe_x,
                                  rng.normal(size=(2, 4, 6, 7)))
        checks.append(("conv-adjoint", gap, 1e-12))

    with precision(np.float64):
        cfg = ModelConfig(scale=2, num_atoms=3, num_blocks=1, width=3,
                          coeff_depth=1)
        model = SparseSRModel.initialize(cfg, seed=1)
        rng = derive(1, "selfcheck-grad")
        y = rng.normal(size=(1, 1, 4, 4))
        x_hr = rng.normal(size=(1, 8, 8))
        m_hr = rng.normal(size=(1, 8, 8))
        eps = rng.normal(size=(1, 16, 3))
        prior = PriorParams(3.0, 0.5)

        def build():
            xt2 = Tensor(y)
            z = model.basis_branch(xt2)
            dist = model.coeff_branch(xt2)
            omega = sample_coeffs(dist, eps)
            residual = assemble_residual(z, omega, (4, 4), 2)
            return (recon_loss(x_hr, m_hr, residual)
                    + kl_loss(dist.mu, dist.sigma, prior) * 0.1)

        checks.append(("model-gradient",
                       finite_diff_check(build, model.parameters(), h=1e-5),
                       1e-5))

    rng = derive(2, "selfcheck-kl")
    worst = 0.0
    for _ in range(1000):
        mu = float(rng.normal() * 3.0)
        sigma = float(np.exp(rng.uniform(np.log(1e-3), np.log(10.0))))
        alpha = float(rng.uniform(0.5, 5.0))
        beta = float(rng.uniform(0.1, 3.0))
        with precision(np.float64):
            got = float(kl_loss(Tensor(np.array(mu)), Tensor(np.array(sigma)),
                                PriorParams(alpha, beta)).data)
        ref = oracles.kl_entry_reference(mu, sigma, alpha, beta)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-30))
    checks.append(("kl-oracle", worst, 1e-10))

    from scipy.integrate import quad

    worst = 0.0
    norm_worst = 0.0
    for alpha, beta in ((3.0, 0.5), (3.0, 1.0), (1.0, 1.0)):
        prior = PriorParams(alpha, beta)
        points = np.linspace(-6.0, 6.0, 20)
        got = prior_logpdf(points, prior)
        ref = np.array([oracles.prior_logpdf_quadrature(w, alpha, beta)
                        for w in points])
        worst = max(worst, float(np.abs(got - ref).max()))
        total = quad(lambda t: float(np.exp(prior_logpdf(t, prior))),
                     -np.inf, np.inf, limit=200)[0]
        norm_worst = max(norm_worst, abs(total - 1.0))
    checks.append(("prior-quadrature", worst, 1e-6))
    checks.append(("prior-normalization", norm_worst, 1e-4))

    rng = derive(3, "selfcheck-div")
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 6))
        h = int(rng.integers(2, 5))
        w_ = int(rng.integers(2, 5))
        maps = [rng.uniform(0.1, 2.0, size=(h, w_)) for _ in range(n)]
        worst = max(worst,
                    abs(diversity_from_maps(maps)
                        - oracles.diversity_reference(maps)))
    checks.append(("diversity-brute-force", worst, 1e-9))
    return checks


def cmd_selfcheck(ns: argparse.Namespace) -> int:
    _resolved(ns)  # validates flags even though selfcheck needs none
    failures = 0
    for name, err, tol in selfcheck_suite():
        ok = err <= tol
        failures += 0 if ok else 1
        print(f"{name}: max_err={err:.3e} tol={tol:.0e} "
              f"{'PASS' if ok else 'FAIL'}")
    if failures:
        print(f"{failures} oracle(s) failed", file=sys.stderr)
        return 3
    print("all oracles passed")
    return 0


_DISPATCH = {
    "train": cmd_train,
    "finetune": cmd_finetune,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "selfcheck": cmd_selfcheck,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    apply_thread_cap(_prescan_threads(argv))
    from . import config as config_mod

    parser = build_parser(config_mod)
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
