"""``wmbench`` command line: embed -> attack -> calibrate -> detect -> report.

Every stage reads and writes under one work directory:

    clean/<id>.png                      inputs (bitstream schemes)
    marked/<scheme>/<id>.png, keys.json
    attacked/<label>/<scheme>/<id>.png  (+ <id>.trace.json for raven)
    thresholds.json                     calibrated phi + null-set hash
    scores.json                         per-image detector records
    report/{report.json,report.csv,report.md,*.png}
Each stage directory also gets a manifest.json.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import yaml

from .. import __version__
from ..attack.baselines import DEFAULT_PARAMS, AttackSpec, UnknownAttack, apply_attack
from ..attack.raven import RavenConfig
from ..core import ImageBuffer, load_png, psnr, save_png
from ..diffusion.backend import BackendError, BackendSpec, load_backend
from ..diffusion.ddim import DiffusionError
from ..evaluation.features import frechet_stats, get_extractor
from ..evaluation.grid import CLEAN, NULL_SEED_OFFSET, REPORT_SCHEMA, EvalReport, aggregate_cell
from ..evaluation.metrics import CalibrationError, calibrate_threshold, frechet_distance, ssim
from ..toydata import toy_set
from ..watermarks import BITSTREAM_SCHEMES, WatermarkKey, embed, generate, make_key, statistic
from .config import DEMO_CONFIG, ConfigError, RunConfig, load_config, parse_config

log = logging.getLogger("wmbench")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_PARTIAL = 0, 2, 3, 4


class StaleCache(RuntimeError):
    pass


class MissingArtifact(RuntimeError):
    pass


# --------------------------------------------------------------------------
# manifests


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    stage: str
    config_hash: str
    backend_fingerprint: Optional[str]
    root_seed: int
    code_version: str
    config: dict
    files: Dict[str, str] = field(default_factory=dict)
    seconds_per_image: Dict[str, float] = field(default_factory=dict)

    def inventory(self, root: Path, paths) -> None:
        for p in sorted(paths):
            self.files[str(Path(p).relative_to(root))] = file_digest(Path(p))

    def write(self, directory: Path) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True))
        return path


@dataclass
class Context:
    cfg: RunConfig
    workdir: Path
    _backend: object = None

    @property
    def backend(self):
        if self._backend is None:
            self._backend = load_backend(BackendSpec(**self.cfg.backend.model_dump()))
        return self._backend

    def needs_backend(self) -> bool:
        diffusion = {"regen", "rinse", "raven"}
        return any(s.scheme == "fourier_ring" for s in self.cfg.schemes) or any(
            a.name in diffusion for a in self.cfg.attacks)

    def manifest(self, stage: str) -> RunManifest:
        fp = self.backend.fingerprint if self.needs_backend() else None
        return RunManifest(stage, self.cfg.digest(), fp, self.cfg.root_seed, __version__,
                           self.cfg.model_dump(mode="json"))

    def pmap(self, fn: Callable, items: list) -> list:
        if self.cfg.workers <= 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.cfg.workers) as pool:
            return list(pool.map(fn, items))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{what} not found at {path}; run the upstream stage first")
    return path


def _pngs(directory: Path) -> List[Path]:
    return sorted(p for p in directory.glob("*.png"))


def _attack_spec(a) -> AttackSpec:
    base = {**DEFAULT_PARAMS.get(a.name, {}), **a.params}
    return AttackSpec(a.name, base, a.label or a.name)


def _raven_config(spec: AttackSpec, ctx: Context) -> Optional[RavenConfig]:
    if spec.name != "raven":
        return None
    params = dict(spec.params)
    for k in ("translation_px", "fixed_delta_px"):
        if params.get(k) is not None:
            params[k] = tuple(params[k])
    params.setdefault("steps", ctx.cfg.backend.steps)
    params.setdefault("guidance", ctx.cfg.backend.guidance)
    params.setdefault("noising_mode", ctx.cfg.backend.noising_mode)
    return RavenConfig(seed=ctx.cfg.root_seed, **params)


def dataset(cfg: RunConfig) -> List[ImageBuffer]:
    d = cfg.data
    if d.source == "toy":
        return toy_set(d.n_images, d.size, seed=cfg.root_seed, prefix="img")
    files = _pngs(_require(Path(d.images_dir), "images_dir"))[: d.n_images]
    if not files:
        raise MissingArtifact(f"no PNG images in {d.images_dir}")
    return [load_png(p, p.stem) for p in files]


def null_dataset(cfg: RunConfig) -> List[ImageBuffer]:
    d = cfg.data
    if d.null_source == "toy":
        return toy_set(d.n_null, d.size, seed=cfg.root_seed, prefix="null")
    files = _pngs(_require(Path(d.null_dir), "null_dir"))[: d.n_null]
    return [load_png(p, p.stem) for p in files]


def build_keys(ctx: Context) -> Dict[str, WatermarkKey]:
    keys = {}
    for s in ctx.cfg.schemes:
        shape = None
        if s.scheme == "fourier_ring":
            g = ctx.cfg.evaluation.generation_size
            shape = ctx.backend.autoencoder.latent_shape(g, g)
        keys[s.scheme] = make_key(s.scheme, ctx.cfg.root_seed, s.n_bits, s.strength, shape, s.command)
    return keys


def load_keys(ctx: Context) -> Dict[str, WatermarkKey]:
    raw = json.loads(_require(ctx.workdir / "keys.json", "keys file").read_text())
    return {k: WatermarkKey.from_dict(v) for k, v in raw.items()}


# --------------------------------------------------------------------------
# stages


def cmd_embed(ctx: Context) -> int:
    ws = ctx.workdir
    keys = build_keys(ctx)
    data = dataset(ctx.cfg)
    man = ctx.manifest("embed")
    written = []
    if any(k in BITSTREAM_SCHEMES or keys[k].scheme == "external" for k in keys):
        for x in data:
            written.append(save_png(x, ws / "clean" / f"{x.source_id}.png"))
    for name, key in keys.items():
        def one(i_x):
            i, x = i_x
            t0 = time.perf_counter()
            if key.scheme == "fourier_ring":
                y = generate(i, key, ctx.backend, source_id=f"gen{i:04d}")
            else:
                y = embed(x, key, None)
            path = save_png(y, ws / "marked" / name / f"{y.source_id}.png")
            return path, y.source_id, time.perf_counter() - t0

        for path, sid, secs in ctx.pmap(one, list(enumerate(data))):
            written.append(path)
            man.seconds_per_image[f"{name}/{sid}"] = secs
    (ws / "keys.json").write_text(json.dumps({k: v.to_dict() for k, v in keys.items()}, indent=1, sort_keys=True))
    written.append(ws / "keys.json")
    man.inventory(ws, written)
    man.write(ws / "marked")
    log.info("embedded %d images for %s", len(data), ", ".join(keys))
    return EXIT_OK


def cmd_attack(ctx: Context) -> int:
    ws = ctx.workdir
    keys = load_keys(ctx)
    specs = [_attack_spec(a) for a in ctx.cfg.attacks]
    man = ctx.manifest("attack")
    failures, written = [], []
    for spec in specs:
        rcfg = _raven_config(spec, ctx)
        backend = ctx.backend if spec.name in ("regen", "rinse", "raven") else None
        for name in keys:
            src = _require(ws / "marked" / name, f"marked images for {name}")
            out_dir = ws / "attacked" / spec.label / name

            def one(p):
                t0 = time.perf_counter()
                x = load_png(p, p.stem)
                y, trace = apply_attack(x, spec, backend, ctx.cfg.root_seed, p.stem, rcfg, return_trace=True)
                out = save_png(y, out_dir / p.name)
                if trace is not None:
                    trace.save(out_dir / f"{p.stem}.trace.json")
                return out, p.stem, time.perf_counter() - t0

            try:
                for out, sid, secs in ctx.pmap(one, _pngs(src)):
                    written.append(out)
                    man.seconds_per_image[f"{spec.label}/{name}/{sid}"] = secs
            except (BackendError, DiffusionError):
                raise
            except Exception as e:  # noqa: BLE001 - one bad cell should not sink the run
                log.error("attack %s on %s failed: %s", spec.label, name, e)
                failures.append({"scheme": name, "attack": spec.label, "error": f"{type(e).__name__}: {e}"})
    (ws / "attacked").mkdir(parents=True, exist_ok=True)
    (ws / "attacked" / "failures.json").write_text(json.dumps(failures, indent=1))
    man.inventory(ws, written)
    man.write(ws / "attacked")
    return EXIT_OK


def _null_hash(key: WatermarkKey, ctx: Context, nulls) -> str:
    h = hashlib.sha256()
    h.update(key.to_json().encode())
    h.update(repr(ctx.cfg.evaluation.fpr).encode())
    if key.scheme == "fourier_ring":
        b = ctx.backend
        h.update(f"gen:{ctx.cfg.data.n_null}:{ctx.cfg.evaluation.generation_size}:{b.fingerprint}".encode())
        h.update(json.dumps(BackendSpec(**ctx.cfg.backend.model_dump()).__dict__, sort_keys=True).encode())
    else:
        for x in nulls:
            h.update(x.digest().encode())
    return h.hexdigest()


def cmd_calibrate(ctx: Context, recalibrate: bool = False) -> int:
    ws = ctx.workdir
    keys = load_keys(ctx)
    cfg = ctx.cfg
    if cfg.data.n_null < 100:
        raise CalibrationError(f"calibration needs at least 100 null images, config asks for {cfg.data.n_null}")
    path = ws / "thresholds.json"
    cached = json.loads(path.read_text()) if path.exists() else {}
    bit_nulls = None
    out = {}
    for name, key in keys.items():
        if key.scheme != "fourier_ring" and bit_nulls is None:
            bit_nulls = null_dataset(cfg)
        nh = _null_hash(key, ctx, bit_nulls)
        if name in cached:
            if cached[name]["null_hash"] == nh:
                log.info("threshold for %s is cached", name)
                out[name] = cached[name]
                continue
            if not recalibrate:
                raise StaleCache(f"cached threshold for {name} was computed on a different null set; "
                                 "pass --recalibrate to overwrite")
        if key.scheme == "fourier_ring":
            g = cfg.evaluation.generation_size
            imgs = [generate(NULL_SEED_OFFSET + i, None, ctx.backend, g, f"null{i:04d}") for i in range(cfg.data.n_null)]
            imgs = [ImageBuffer(x.to_uint8() / 255.0, source_id=x.source_id) for x in imgs]
            backend = ctx.backend
        else:
            imgs, backend = bit_nulls, None
        scores = ctx.pmap(lambda x: float(statistic(x, key, backend)[0]), imgs)
        phi = calibrate_threshold(scores, cfg.evaluation.fpr)
        out[name] = {"phi": phi, "fpr": cfg.evaluation.fpr, "n": len(scores), "null_hash": nh, "null_scores": scores}
    path.write_text(json.dumps(out, indent=1, sort_keys=True))
    man = ctx.manifest("calibrate")
    man.inventory(ws, [path])
    man.write(ws / "calibration")
    return EXIT_OK


def _conditions(ws: Path, name: str, labels: List[str]):
    yield CLEAN, ws / "marked" / name
    for label in labels:
        d = ws / "attacked" / label / name
        if d.exists():
            yield label, d


def cmd_detect(ctx: Context) -> int:
    ws = ctx.workdir
    keys = load_keys(ctx)
    thresholds = json.loads(_require(ws / "thresholds.json", "thresholds file").read_text())
    labels = [a.label or a.name for a in ctx.cfg.attacks]
    records, failures = [], []
    for name, key in keys.items():
        if name not in thresholds:
            raise MissingArtifact(f"no threshold for {name}; run calibrate")
        phi = thresholds[name]["phi"]
        backend = ctx.backend if key.scheme == "fourier_ring" else None
        for label, d in _conditions(ws, name, labels):
            def one(p):
                y = load_png(p, p.stem)
                if label == CLEAN:
                    ref_path = ws / "clean" / p.name
                else:
                    ref_path = ws / "marked" / name / p.name
                ref = load_png(ref_path) if ref_path.exists() else None
                stat, decoded = statistic(y, key, backend)
                p_ = psnr(ref, y) if ref is not None else None
                return {
                    "scheme": name, "attack": label, "image_id": p.stem,
                    "condition": "clean_marked" if label == CLEAN else "attacked_marked",
                    "statistic": float(stat), "detected": bool(stat > phi),
                    "bit_accuracy": float(np.mean(decoded == key.bits)) if decoded is not None and key.bits is not None else None,
                    "psnr": float(p_) if p_ is not None and np.isfinite(p_) else None,
                    "ssim": ssim(ref, y) if ref is not None else None,
                }

            try:
                records.extend(ctx.pmap(one, _pngs(d)))
            except (BackendError, DiffusionError):
                raise
            except Exception as e:  # noqa: BLE001
                failures.append({"scheme": name, "attack": label, "error": f"{type(e).__name__}: {e}"})
    path = ws / "scores.json"
    path.write_text(json.dumps({"records": records, "failures": failures}, indent=1, sort_keys=True))
    man = ctx.manifest("detect")
    man.inventory(ws, [path])
    man.write(ws / "detection")
    return EXIT_OK


def build_report(ctx: Context) -> EvalReport:
    ws = ctx.workdir
    keys = load_keys(ctx)
    thresholds = json.loads(_require(ws / "thresholds.json", "thresholds file").read_text())
    scores = json.loads(_require(ws / "scores.json", "scores file").read_text())
    attack_failures_path = ws / "attacked" / "failures.json"
    attack_failures = json.loads(attack_failures_path.read_text()) if attack_failures_path.exists() else []
    extractor = get_extractor(ctx.cfg.evaluation.feature_extractor)
    labels = [a.label or a.name for a in ctx.cfg.attacks]

    report = EvalReport(manifest={"config_hash": ctx.cfg.digest(), "root_seed": ctx.cfg.root_seed,
                                  "code_version": __version__, "fpr": ctx.cfg.evaluation.fpr,
                                  "feature_extractor": ctx.cfg.evaluation.feature_extractor,
                                  "backend": ctx.backend.manifest() if ctx.needs_backend() else None})
    report.failures = attack_failures + scores["failures"]
    failed = {(f["scheme"], f["attack"]) for f in report.failures}
    for name, key in keys.items():
        report.thresholds[name] = thresholds[name]["phi"]
        report.null_scores[name] = thresholds[name]["null_scores"]
        bitstream = key.bits is not None
        marked_dir = ws / "marked" / name
        marked = [load_png(p, p.stem) for p in _pngs(marked_dir)]
        marked_stats = frechet_stats(marked, extractor) if len(marked) > 1 else None
        for label, d in _conditions(ws, name, labels):
            if (name, label) in failed:
                continue
            recs = [r for r in scores["records"] if r["scheme"] == name and r["attack"] == label]
            if not recs:
                continue
            fid = None
            if len(recs) > 1:
                if label == CLEAN:
                    clean = [load_png(ws / "clean" / f"{r['image_id']}.png") for r in recs
                             if (ws / "clean" / f"{r['image_id']}.png").exists()]
                    if len(clean) == len(recs) and key.scheme != "fourier_ring":
                        fid = frechet_distance(frechet_stats(marked, extractor), frechet_stats(clean, extractor))
                else:
                    outs = [load_png(p) for p in _pngs(d)]
                    fid = frechet_distance(frechet_stats(outs, extractor), marked_stats)
            report.records.extend(recs)
            report.cells.extend(aggregate_cell(name, label, recs, fid, bitstream))
    return report


def cmd_report(ctx: Context) -> int:
    from ..evaluation.plots import render_all

    out = ctx.workdir / "report"
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(ctx)
    report.validate()
    files = [report.write_json(out / "report.json"), report.write_csv(out / "report.csv")]
    (out / "report.md").write_text(report.to_markdown())
    files.append(out / "report.md")
    files += render_all(report.to_dict(), out)
    (out / "report.schema.json").write_text(json.dumps(REPORT_SCHEMA, indent=1))
    man = ctx.manifest("report")
    man.inventory(ctx.workdir, files)
    man.write(out)
    sys.stdout.write(report.to_markdown())
    if report.failures:
        log.error("%d cells failed; see report.json", len(report.failures))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_demo(ctx: Context, recalibrate: bool = False) -> int:
    for stage in (cmd_embed, cmd_attack):
        stage(ctx)
    cmd_calibrate(ctx, recalibrate)
    cmd_detect(ctx)
    return cmd_report(ctx)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wmbench", description="Watermark removal benchmark")
    p.add_argument("--version", action="version", version=f"wmbench {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("embed", "watermark the dataset with every configured scheme"),
        ("attack", "run every configured attack on the marked images"),
        ("calibrate", "calibrate detection thresholds on null images"),
        ("detect", "score clean and attacked images"),
        ("report", "aggregate scores into CSV/JSON/markdown and plots"),
        ("demo", "run all stages (default config: bundled toy set)"),
    ]:
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", "-c", required=name != "demo", help="run config (YAML)")
        sp.add_argument("--workdir", "-w", default="wmbench_run", help="work directory (default: %(default)s)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a scalar config field, e.g. data.n_images=4")
        sp.add_argument("--images", help="input image directory (embed; sets data.source=dir)")
        sp.add_argument("--recalibrate", action="store_true", help="overwrite a stale threshold cache")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.images:
        overrides += ["data.source=dir", f"data.images_dir={args.images}"]
    if args.config:
        return load_config(args.config, overrides)
    from .config import apply_overrides

    return parse_config(apply_overrides(json.loads(json.dumps(DEMO_CONFIG)), overrides))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _load(args)
        ctx = Context(cfg, Path(args.workdir))
        ctx.workdir.mkdir(parents=True, exist_ok=True)
        (ctx.workdir / "config.resolved.yaml").write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True))
        if args.command == "embed":
            return cmd_embed(ctx)
        if args.command == "attack":
            return cmd_attack(ctx)
        if args.command == "calibrate":
            return cmd_calibrate(ctx, args.recalibrate)
        if args.command == "detect":
            return cmd_detect(ctx)
        if args.command == "report":
            return cmd_report(ctx)
        return cmd_demo(ctx, args.recalibrate)
    except (ConfigError, CalibrationError, StaleCache, MissingArtifact, UnknownAttack) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendError, DiffusionError) as e:
        print(f"backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
