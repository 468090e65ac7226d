"""Stage runners shared by the command line and programmatic callers.

Every stage reads its inputs from, and writes its artifacts to, a stage
directory under the run's output directory::

    <out>/scene/         cube.{json,raw}, labels.csv          (synthetic scenes only)
    <out>/design/        hs_patterns, ms_patterns, hs_bank.csv, ms_bank.csv
    <out>/measurements/  y_ms, y_hs, noise.json
    <out>/fusion/        features, report.json
    <out>/classify/      predicted.csv, metrics.json, network.bin
    <out>/manifest.json  resolved config, seeds, hash, stage records

Stages write into a scratch directory and swap it in only on success, so
an interrupted stage never clobbers earlier artifacts. Each stage directory
carries ``stage.json`` with a key over the configuration sections it
depends on; :func:`run_pipeline` skips stages whose key is unchanged.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import io as fio
from .aperture import ApertureDesign, design_dual_apertures
from .classifier import init_network, metrics, predict_map, split_mask, split_train_test, train
from .config import SEED_OFFSETS, config_hash, fusion_config, nested_override, stage_seed, with_overrides
from .datamodel import ConfigurationError, SpectralCube
from .operators import DifferenceOperator, WaveletOperator, build_projection
from .sensing import MeasurementSet, NoiseDescriptor, simulate
from .solver import fuse
from .synthetic import synthetic_scene

logger = logging.getLogger(__name__)

STAGES = ("scene", "design", "measurements", "fusion", "classify")
# configuration sections each stage depends on (upstream sections included)
_STAGE_SECTIONS = {
    "scene": ("seed", "scene"),
    "design": ("seed", "scene", "design"),
    "measurements": ("seed", "scene", "design", "noise"),
    "fusion": ("seed", "scene", "design", "noise", "fusion"),
    "classify": ("seed", "scene", "design", "noise", "fusion", "classifier"),
}


class MissingInputError(FileNotFoundError):
    """A stage's upstream artifacts are absent."""


def stage_key(cfg: dict, stage: str) -> str:
    sub = {k: cfg[k] for k in _STAGE_SECTIONS[stage]}
    return config_hash(sub)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@contextmanager
def _stage_dir(out: Path, stage: str, cfg: dict, extra: dict):
    """Yield a scratch directory; on success swap it in as ``out/stage`` with its record."""
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / f".{stage}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    record = {
        "stage": stage,
        "key": stage_key(cfg, stage),
        "artifacts": {p.name: _sha256(p) for p in sorted(tmp.iterdir())},
        **extra,
    }
    fio.write_json(record, tmp / "stage.json")
    final = out / stage
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"{what} not found: {path}")
    return path


def stage_done(out, cfg: dict, stage: str) -> bool:
    rec = Path(out) / stage / "stage.json"
    if not rec.exists():
        return False
    try:
        return fio.read_json(rec).get("key") == stage_key(cfg, stage)
    except (json.JSONDecodeError, OSError):
        return False


def _out(cfg: dict) -> Path:
    return Path(cfg["output"])


def scene_stems(cfg: dict) -> tuple[Path, Path]:
    """Cube stem and label path of the scene, user-supplied or synthetic."""
    if cfg["scene"]["cube"] is not None:
        return Path(cfg["scene"]["cube"]), Path(cfg["scene"]["labels"])
    base = _out(cfg) / "scene"
    return base / "cube", base / "labels.csv"


def run_scene(cfg: dict) -> None:
    """Materialize the synthetic scene (no-op for user-supplied scenes)."""
    if cfg["scene"]["cube"] is not None:
        stem, labels = scene_stems(cfg)
        for p in fio.cube_paths(stem):
            _need(p, "scene cube")
        _need(labels, "ground-truth labels")
        return
    syn = cfg["scene"]["synthetic"]
    seed = stage_seed(cfg, "scene")
    F, gt = synthetic_scene(seed=seed, **syn)
    with _stage_dir(_out(cfg), "scene", cfg, {"seed": seed, "synthetic": syn}) as d:
        fio.save_cube(F, d / "cube", {"kind": "scene", "generator": "synthetic", "seed": seed})
        fio.write_labels(gt, d / "labels.csv")


def load_scene(cfg: dict):
    stem, labels = scene_stems(cfg)
    for p in fio.cube_paths(stem):
        _need(p, "scene cube")
    F = fio.load_cube(stem)
    gt = fio.read_labels(_need(labels, "ground-truth labels"))
    return F, gt


def _scene_shape(cfg: dict) -> tuple[int, int, int]:
    stem, _ = scene_stems(cfg)
    h = fio.read_header(_need(fio.cube_paths(stem)[0], "scene cube header"))
    return h["rows"], h["cols"], h["bands"]


def run_design(cfg: dict) -> ApertureDesign:
    M, N, L = _scene_shape(cfg)
    d = cfg["design"]
    seed = stage_seed(cfg, "design")
    design = design_dual_apertures(M, N, L, d["q"], d["p"], seed, K=d["K"], W=d["W"])
    extra = {
        "seed": seed,
        "rows": M,
        "cols": N,
        "bands": L,
        "q": design.q,
        "p": design.p,
        "K": design.K,
        "W": design.W,
        "hs_filters": design.hs_bank.count,
        "ms_filters": design.ms_bank.count,
    }
    with _stage_dir(_out(cfg), "design", cfg, extra) as tmp:
        fio.save_patterns(design.hs_patterns, tmp / "hs_patterns", {"arm": "hs", "seed": seed})
        fio.save_patterns(design.ms_patterns, tmp / "ms_patterns", {"arm": "ms", "seed": seed})
        fio.write_filter_bank(design.hs_bank, tmp / "hs_bank.csv")
        fio.write_filter_bank(design.ms_bank, tmp / "ms_bank.csv")
    logger.info("design: K=%d W=%d (q=%d, p=%d)", design.K, design.W, design.q, design.p)
    return design


def load_design(out) -> ApertureDesign:
    d = Path(out) / "design"
    rec = fio.read_json(_need(d / "stage.json", "design record"))
    return ApertureDesign(
        hs_bank=fio.read_filter_bank(_need(d / "hs_bank.csv", "HS filter bank")),
        ms_bank=fio.read_filter_bank(_need(d / "ms_bank.csv", "MS filter bank")),
        hs_patterns=fio.load_patterns(d / "hs_patterns"),
        ms_patterns=fio.load_patterns(d / "ms_patterns"),
        q=int(rec["q"]),
        p=int(rec["p"]),
        seed=int(rec["seed"]),
    )


def run_simulate(cfg: dict) -> MeasurementSet:
    design = load_design(_out(cfg))
    F, _ = load_scene(cfg)
    nz = cfg["noise"]
    seed = stage_seed(cfg, "noise")
    ms = simulate(F, design, nz["kind"], nz["snr_db"], seed)
    n_feat = design.rows * design.cols * design.hs_bank.count
    meta = {
        "kind": ms.noise.kind,
        "snr_db": ms.noise.snr_db,
        "seed": seed,
        "poisson_alpha": ms.noise.poisson_alpha,
        "compression": {
            "eps_ms": ms.y_ms.data.size / n_feat,
            "eps_hs": ms.y_hs.data.size / n_feat,
            "q": design.q,
            "p": design.p,
        },
    }
    with _stage_dir(_out(cfg), "measurements", cfg, {"seed": seed}) as tmp:
        fio.save_cube(ms.y_ms, tmp / "y_ms", {"kind": "measurement", "arm": "ms"})
        fio.save_cube(ms.y_hs, tmp / "y_hs", {"kind": "measurement", "arm": "hs"})
        fio.write_json(meta, tmp / "noise.json")
    return ms


def load_measurements(out, design: ApertureDesign) -> MeasurementSet:
    d = Path(out) / "measurements"
    meta = fio.read_json(_need(d / "noise.json", "noise metadata"))
    for stem in ("y_ms", "y_hs"):
        for p in fio.cube_paths(d / stem):
            _need(p, "measurement cube")
    noise = NoiseDescriptor(meta["kind"], meta["snr_db"], meta["seed"], meta.get("poisson_alpha", {}))
    return MeasurementSet(fio.load_cube(d / "y_ms"), fio.load_cube(d / "y_hs"), design, noise)


def run_fuse(cfg: dict):
    out = _out(cfg)
    design = load_design(out)
    ms = load_measurements(out, design)
    _, _, H = build_projection(design)
    M, N, K = design.rows, design.cols, design.hs_bank.count
    fc = fusion_config(cfg)
    try:
        Psi = WaveletOperator(M, N, K, levels=fc.wavelet_levels)
    except ConfigurationError as exc:
        raise ConfigurationError(f"fusion.wavelet_levels: {exc}") from exc
    Phi = DifferenceOperator(M, N, K)
    X, report = fuse(ms.stacked(), H, Psi, Phi, fc)
    logger.info("fuse: lambda1=%.6g lambda2=%.6g iterations=%d converged=%s",
                report.lambda1, report.lambda2, report.iterations, report.converged)
    with _stage_dir(out, "fusion", cfg, {"seed": fc.seed, "lambda1": report.lambda1}) as tmp:
        fio.save_cube(X, tmp / "features", {"kind": "features", "lambda1": report.lambda1,
                                            "lambda2": report.lambda2})
        fio.write_json(report.as_dict(), tmp / "report.json")
    return X, report


def load_features(out) -> SpectralCube:
    stem = Path(out) / "fusion" / "features"
    for p in fio.cube_paths(stem):
        _need(p, "fused features")
    return fio.load_cube(stem)


def run_classify(cfg: dict) -> dict:
    out = _out(cfg)
    X = load_features(out)
    _, gt = load_scene(cfg)
    c = cfg["classifier"]
    split_seed = stage_seed(cfg, "split")
    split = split_train_test(gt, c["train_rate"], split_seed)
    net = init_network(X.bands, tuple(c["hidden"]), gt.class_count, stage_seed(cfg, "init"))
    net, trace = train(net, split, X, epochs=c["epochs"], learning_rate=c["learning_rate"],
                       batch_size=c["batch_size"], seed=stage_seed(cfg, "train"))
    pred = predict_map(net, X)
    m = metrics(pred, gt, split_mask(split, gt.labels.shape))
    record = m.as_dict()
    record.update(
        train_rate=split.rate,
        train_counts={int(k): int(v) for k, v in split.train_counts.items()},
        test_count=int(split.test_labels.size),
        final_loss=float(trace[-1]) if trace else None,
        seeds={"split": split_seed, "init": stage_seed(cfg, "init"), "train": stage_seed(cfg, "train")},
    )
    with _stage_dir(out, "classify", cfg, {"overall_accuracy": m.overall_accuracy}) as tmp:
        fio.write_labels(pred, tmp / "predicted.csv")
        fio.write_json(record, tmp / "metrics.json")
        fio.save_network(net, tmp / "network.bin")
    logger.info("classify: OA=%.4f AA=%.4f kappa=%.4f", m.overall_accuracy, m.average_accuracy, m.kappa)
    return record


RUNNERS = {
    "scene": run_scene,
    "design": run_design,
    "measurements": run_simulate,
    "fusion": run_fuse,
    "classify": run_classify,
}


def write_manifest(cfg: dict) -> dict:
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    stages = {}
    for s in STAGES:
        rec = out / s / "stage.json"
        if rec.exists():
            stages[s] = fio.read_json(rec)
    seeds = {k: stage_seed(cfg, k) for k in SEED_OFFSETS}
    # the output location is not part of the experiment, so it stays out of the hash
    audited = {k: v for k, v in cfg.items() if k != "output"}
    manifest = {
        "config": cfg,
        "seeds": seeds,
        "config_hash": config_hash({"config": audited, "seeds": seeds}),
        "stages": stages,
    }
    metrics_path = out / "classify" / "metrics.json"
    if "classify" in stages and metrics_path.exists():
        m = fio.read_json(metrics_path)
        manifest["summary"] = {k: m[k] for k in ("overall_accuracy", "average_accuracy", "kappa")}
    fio.write_json(manifest, out / "manifest.json")
    return manifest


def run_pipeline(cfg: dict, force: bool = False) -> dict:
    """Run every stage in order, resuming past stages whose inputs are unchanged.

    Returns the manifest.
    """
    out = _out(cfg)
    rerun = force
    for s in STAGES:
        if s == "scene" and cfg["scene"]["cube"] is not None:
            run_scene(cfg)  # only checks the user files exist
            continue
        if not rerun and stage_done(out, cfg, s):
            logger.info("pipeline: %s up to date, skipping", s)
            continue
        # everything downstream of a rerun stage is stale
        rerun = True
        t0 = time.perf_counter()
        RUNNERS[s](cfg)
        logger.info("pipeline: %s done in %.1fs", s, time.perf_counter() - t0)
        write_manifest(cfg)
    return write_manifest(cfg)


def evaluate_pipeline(cfg: dict) -> dict:
    """In-memory run of the full chain (no artifacts); returns the metrics record.

    Uses exactly the seeds and settings of :func:`run_pipeline`, except the
    float32 round trip through disk.
    """
    if cfg["scene"]["cube"] is not None:
        F, gt = load_scene(cfg)
    else:
        F, gt = synthetic_scene(seed=stage_seed(cfg, "scene"), **cfg["scene"]["synthetic"])
    d = cfg["design"]
    design = design_dual_apertures(F.rows, F.cols, F.bands, d["q"], d["p"], stage_seed(cfg, "design"),
                                   K=d["K"], W=d["W"])
    ms = simulate(F, design, cfg["noise"]["kind"], cfg["noise"]["snr_db"], stage_seed(cfg, "noise"))
    _, _, H = build_projection(design)
    K = design.hs_bank.count
    fc = fusion_config(cfg)
    X, report = fuse(ms.stacked(), H, WaveletOperator(F.rows, F.cols, K, fc.wavelet_levels),
                     DifferenceOperator(F.rows, F.cols, K), fc)
    c = cfg["classifier"]
    split = split_train_test(gt, c["train_rate"], stage_seed(cfg, "split"))
    net = init_network(K, tuple(c["hidden"]), gt.class_count, stage_seed(cfg, "init"))
    net, _ = train(net, split, X, epochs=c["epochs"], learning_rate=c["learning_rate"],
                   batch_size=c["batch_size"], seed=stage_seed(cfg, "train"))
    m = metrics(predict_map(net, X), gt, split_mask(split, gt.labels.shape))
    rec = m.as_dict()
    rec["fusion"] = {"iterations": report.iterations, "converged": report.converged}
    return rec


def sweep(cfg: dict, key: str, values, seeds) -> list[dict]:
    """Mean/std OA, AA and kappa for each value of a dotted config key over ``seeds``.

    Produces the numeric table behind OA-vs-SNR or OA-vs-compression curves.
    """
    rows = []
    for v in values:
        oa, aa, ka = [], [], []
        for s in seeds:
            rec = evaluate_pipeline(with_overrides(cfg, {"seed": int(s)}, nested_override(key, v)))
            oa.append(rec["overall_accuracy"])
            aa.append(rec["average_accuracy"])
            ka.append(rec["kappa"])
        rows.append({
            key: v,
            "oa_mean": float(np.mean(oa)), "oa_std": float(np.std(oa)),
            "aa_mean": float(np.mean(aa)), "kappa_mean": float(np.mean(ka)),
            "runs": len(oa),
        })
    return rows
